//! Selection contracts: the immutable record of a tuple, the feasible set,
//! the chosen point and the rationale, plus the audit that re-derives them
//! from stored artifacts.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::select::{check_point, filter_feasible, select_model, Candidate, CandidateSet, NearestMiss};
use super::{IntentLexicon, PolicyError, PolicyTuple};
use crate::canonical::{self, digest_without_field};
use crate::frontier::Frontier;
use crate::store::{Store, StoreError};

pub const CONTRACT_VERSION: &str = "contract-v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionContract {
    pub version: String,
    pub tuple: PolicyTuple,
    pub frontier_id: String,
    pub dataset_digest: String,
    pub feasible: Vec<String>,
    /// `None` for a no-selection contract.
    pub chosen: Option<String>,
    /// What the tuple's priority policy selects; differs from `chosen` when
    /// the stakeholder picked another feasible point.
    pub policy_choice: Option<String>,
    pub chosen_models: Vec<String>,
    pub rationale: String,
    /// Nearest misses recorded when nothing was feasible.
    pub diagnostics: Vec<NearestMiss>,
    pub lexicon_version: String,
    pub issued_at: String,
    /// SHA-256 over the canonical form of every other field.
    pub digest: String,
}

impl SelectionContract {
    fn seal(&mut self) -> Result<(), PolicyError> {
        let v = serde_json::to_value(&*self)?;
        self.digest = digest_without_field(&v, "digest");
        Ok(())
    }

    pub fn to_canonical(&self) -> Result<String, serde_json::Error> {
        canonical::to_canonical_string(self)
    }

    /// Parse a stored contract, requiring canonical bytes and a matching
    /// digest.
    pub fn from_canonical(text: &str) -> Result<Self, String> {
        let v: Value = serde_json::from_str(text).map_err(|e| format!("unparseable: {e}"))?;
        if canonical::canonical_value(&v) != text {
            return Err("not in canonical form".into());
        }
        let stored = v.get("digest").and_then(Value::as_str).unwrap_or_default().to_string();
        if digest_without_field(&v, "digest") != stored {
            return Err("digest does not match content".into());
        }
        let c: Self = serde_json::from_value(v).map_err(|e| format!("schema: {e}"))?;
        if c.version != CONTRACT_VERSION {
            return Err(format!("version `{}` is not `{CONTRACT_VERSION}`", c.version));
        }
        Ok(c)
    }
}

fn frontier_is_intact(f: &Frontier) -> bool {
    serde_json::to_value(f).is_ok_and(|v| digest_without_field(&v, "digest") == f.digest)
}

/// Assemble and seal a contract without storing it. The chosen point is
/// re-checked against the tuple; the client is not trusted.
pub fn build_contract(
    tuple: &PolicyTuple,
    f: &Frontier,
    cands: &CandidateSet,
    chosen: Option<&str>,
    rationale: &str,
    lexicon_version: &str,
    issued_at: &str,
) -> Result<SelectionContract, PolicyError> {
    if cands.frontier_digest != f.digest || !frontier_is_intact(f) {
        return Err(PolicyError::StaleFrontier { expected: cands.frontier_digest.clone(), found: f.digest.clone() });
    }
    let feasible = cands.ids();
    let mut chosen_models = Vec::new();
    let mut policy_choice = None;
    if let Some(id) = chosen {
        let p = f.point(id).ok_or_else(|| PolicyError::ChoiceNotFeasible(id.to_string()))?;
        if !feasible.iter().any(|c| c == id) || !check_point(p, tuple).feasible {
            return Err(PolicyError::ChoiceNotFeasible(id.to_string()));
        }
        chosen_models = p.model_refs.clone();
        policy_choice = Some(select_model(cands, f, tuple)?.chosen);
    }
    let mut c = SelectionContract {
        version: CONTRACT_VERSION.to_string(),
        tuple: tuple.clone(),
        frontier_id: f.digest.clone(),
        dataset_digest: f.dataset_digest.clone(),
        feasible,
        chosen: chosen.map(str::to_string),
        policy_choice,
        chosen_models,
        rationale: rationale.to_string(),
        diagnostics: if chosen.is_none() { cands.diagnostics.clone() } else { Vec::new() },
        lexicon_version: lexicon_version.to_string(),
        issued_at: issued_at.to_string(),
        digest: String::new(),
    };
    c.seal()?;
    Ok(c)
}

/// Build, seal and append a contract to the store, stamped with the
/// current UTC time.
pub fn issue_contract(
    store: &Store,
    tuple: &PolicyTuple,
    f: &Frontier,
    cands: &CandidateSet,
    chosen: Option<&str>,
    rationale: &str,
    lexicon_version: &str,
) -> Result<SelectionContract, PolicyError> {
    let now = chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Micros, true);
    let c = build_contract(tuple, f, cands, chosen, rationale, lexicon_version, &now)?;
    store.put_contract(&c)?;
    Ok(c)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditCheck {
    /// `contract`, `frontier`, `selection` or a point id.
    pub subject: String,
    pub condition: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub contract_id: String,
    pub passed: bool,
    pub checks: Vec<AuditCheck>,
}

impl AuditReport {
    pub fn failures(&self) -> Vec<&AuditCheck> {
        self.checks.iter().filter(|c| !c.passed).collect()
    }
}

struct Checks(Vec<AuditCheck>);

impl Checks {
    fn push(&mut self, subject: &str, condition: &str, passed: bool, detail: impl Into<String>) {
        self.0.push(AuditCheck { subject: subject.into(), condition: condition.into(), passed, detail: detail.into() });
    }

    fn finish(self, id: &str) -> AuditReport {
        AuditReport { contract_id: id.to_string(), passed: self.0.iter().all(|c| c.passed), checks: self.0 }
    }
}

fn missing(e: StoreError) -> PolicyError {
    match e {
        StoreError::NotFound { kind, id } => PolicyError::MissingArtifact(format!("{kind} {id}")),
        other => PolicyError::Store(other),
    }
}

/// Re-derive a stored contract from the stored frontier and models.
///
/// Integrity failures and recomputation mismatches are reported as failed
/// checks; an artifact that no longer exists is an error.
pub fn audit_contract(store: &Store, contract_id: &str) -> Result<AuditReport, PolicyError> {
    let mut checks = Checks(Vec::new());
    let bytes = store.contract_bytes(contract_id).map_err(missing)?;
    let text = String::from_utf8_lossy(&bytes);
    let contract = match SelectionContract::from_canonical(&text) {
        Ok(c) => {
            let named = c.digest == contract_id;
            checks.push("contract", "integrity", named, if named { "digest verifies" } else { "digest differs from contract id" });
            c
        }
        Err(e) => {
            checks.push("contract", "integrity", false, e);
            return Ok(checks.finish(contract_id));
        }
    };

    let frontier_text = store.frontier_text(&contract.frontier_id).map_err(missing)?;
    match Frontier::from_canonical(&frontier_text) {
        Ok(f) if f.digest == contract.frontier_id => checks.push("frontier", "integrity", true, "digest verifies"),
        Ok(_) => checks.push("frontier", "integrity", false, "digest differs from the recorded frontier id"),
        Err(e) => checks.push("frontier", "integrity", false, e.to_string()),
    }
    let frontier = match Frontier::from_json_unverified(&frontier_text) {
        Ok(f) => f,
        Err(e) => {
            checks.push("frontier", "readable", false, e.to_string());
            return Ok(checks.finish(contract_id));
        }
    };
    let tuple = &contract.tuple;

    for id in &contract.feasible {
        let Some(p) = frontier.point(id) else {
            checks.push(id, "exists", false, "point missing from frontier");
            continue;
        };
        for c in check_point(p, tuple).conditions {
            let name = serde_json::to_value(c.condition)?.as_str().unwrap_or_default().to_string();
            let value = c.value.map_or("undefined".to_string(), |v| format!("{v:.6}"));
            checks.push(id, &name, c.passed, format!("{value} vs {}", c.target));
        }
    }

    let lexicon = IntentLexicon::default();
    match filter_feasible(&frontier, tuple, &lexicon) {
        Ok(recomputed) => {
            let same = recomputed.ids() == contract.feasible;
            checks.push("frontier", "feasible_set", same, format!("recomputed {:?}", recomputed.ids()));
        }
        Err(e) => checks.push("frontier", "feasible_set", false, e.to_string()),
    }

    let recorded = CandidateSet {
        frontier_digest: frontier.digest.clone(),
        candidates: contract
            .feasible
            .iter()
            .filter(|id| frontier.point(id).is_some())
            .map(|id| Candidate { point_id: id.clone(), explanation: String::new() })
            .collect(),
        diagnostics: Vec::new(),
    };
    match (&contract.chosen, select_model(&recorded, &frontier, tuple)) {
        (Some(chosen), Ok(sel)) => {
            let same = contract.policy_choice.as_ref() == Some(&sel.chosen);
            checks.push("selection", "ordering", same, format!("policy selects {}", sel.chosen));
            let feasible = contract.feasible.contains(chosen);
            let detail = if sel.chosen == *chosen { "policy choice" } else { "stakeholder choice among feasible points" };
            checks.push("selection", "chosen_feasible", feasible, detail);
        }
        (Some(_), Err(e)) => checks.push("selection", "ordering", false, e.to_string()),
        (None, _) => checks.push(
            "selection",
            "no_selection",
            contract.feasible.is_empty() && contract.policy_choice.is_none(),
            "no model chosen",
        ),
    }

    if let Some(chosen) = &contract.chosen {
        let refs = frontier.point(chosen).map(|p| p.model_refs.clone()).unwrap_or_default();
        let same = refs == contract.chosen_models;
        checks.push(chosen, "model_refs", same, format!("{} model artifact(s)", contract.chosen_models.len()));
        for m in &contract.chosen_models {
            match store.get_model(m) {
                Ok(_) => checks.push(chosen, "model_artifact", true, m.clone()),
                Err(StoreError::NotFound { .. }) => return Err(PolicyError::MissingArtifact(format!("model {m}"))),
                Err(e) => checks.push(chosen, "model_artifact", false, format!("{m}: {e}")),
            }
        }
    }
    Ok(checks.finish(contract_id))
}
