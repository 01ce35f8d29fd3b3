//! The privacy-fairness-accuracy frontier: one point per grid cell, each
//! trained and evaluated over several seeds.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};

use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::Value;
use thiserror::Error;

use crate::canonical::{self, digest_without_field};
use crate::config::TrainingConfig;
use crate::dataset::{split_indices, EncodeOptions, EncodedMatrix, Encoder, Scaling, TabularDataset};
use crate::dp::{self, PrivacyAccount, PrivacyBudget};
use crate::fair::{
    exponentiated_gradient, threshold_optimize, ConstraintKind, DeployedModel, FairnessConstraint, Objective,
    ReductionParams,
};
use crate::metrics::{self, confusion_by_group, evaluate_performance, fairness_report, majority_group, GroupId};
use crate::models::{Learner, ModelKind};

pub const FRONTIER_VERSION: &str = "frontier-v1";
pub const MODEL_VERSION: &str = "model-v1";

#[derive(Debug, Error)]
pub enum FrontierError {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("private cells need bounds on every numeric column")]
    MissingBoundsForDP,
    #[error("frontier version `{found}` is not `{FRONTIER_VERSION}`")]
    VersionMismatch { found: String },
    #[error("corrupt frontier file: {0}")]
    CorruptFile(String),
    #[error("pareto filter needs at least one axis")]
    EmptyAxes,
    #[error("dataset error: {0}")]
    Dataset(#[from] crate::dataset::IngestError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

/// One value of the privacy axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EpsilonCell {
    Private(f64),
    NonPrivate,
}

impl EpsilonCell {
    /// Ordering key: non-private sorts after every finite ε.
    pub fn key(&self) -> f64 {
        match self {
            EpsilonCell::Private(e) => *e,
            EpsilonCell::NonPrivate => f64::INFINITY,
        }
    }

    pub fn value(&self) -> Option<f64> {
        match self {
            EpsilonCell::Private(e) => Some(*e),
            EpsilonCell::NonPrivate => None,
        }
    }
}

impl Serialize for EpsilonCell {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            EpsilonCell::Private(e) => s.serialize_f64(*e),
            EpsilonCell::NonPrivate => s.serialize_str("non_private"),
        }
    }
}

impl<'de> Deserialize<'de> for EpsilonCell {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        match Value::deserialize(d)? {
            Value::Number(n) => Ok(EpsilonCell::Private(n.as_f64().unwrap_or(f64::NAN))),
            Value::String(s) if s == "non_private" => Ok(EpsilonCell::NonPrivate),
            other => Err(serde::de::Error::custom(format!("expected a number or \"non_private\", got {other}"))),
        }
    }
}

/// One value of the constraint axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ConstraintCell {
    Unconstrained,
    Constrained(FairnessConstraint),
}

impl ConstraintCell {
    pub fn constraint(&self) -> Option<FairnessConstraint> {
        match self {
            ConstraintCell::Unconstrained => None,
            ConstraintCell::Constrained(c) => Some(*c),
        }
    }
}

impl Serialize for ConstraintCell {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            ConstraintCell::Unconstrained => s.serialize_str("unconstrained"),
            ConstraintCell::Constrained(c) => c.serialize(s),
        }
    }
}

impl<'de> Deserialize<'de> for ConstraintCell {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        match Value::deserialize(d)? {
            Value::String(s) if s == "unconstrained" => Ok(ConstraintCell::Unconstrained),
            v @ Value::Object(_) => serde_json::from_value(v).map(ConstraintCell::Constrained).map_err(serde::de::Error::custom),
            other => Err(serde::de::Error::custom(format!("expected \"unconstrained\" or a constraint, got {other}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Intervention {
    #[serde(rename = "none")]
    None,
    #[serde(rename = "reduction")]
    Reduction,
    #[serde(rename = "postprocess")]
    Postprocess,
    #[serde(rename = "reduction+dp")]
    ReductionDp,
    #[serde(rename = "postprocess+dp")]
    PostprocessDp,
}

impl Intervention {
    pub fn name(&self) -> &'static str {
        match self {
            Intervention::None => "none",
            Intervention::Reduction => "reduction",
            Intervention::Postprocess => "postprocess",
            Intervention::ReductionDp => "reduction+dp",
            Intervention::PostprocessDp => "postprocess+dp",
        }
    }

    fn requires_privacy(&self) -> bool {
        matches!(self, Intervention::ReductionDp | Intervention::PostprocessDp)
    }

    fn is_reduction(&self) -> bool {
        matches!(self, Intervention::Reduction | Intervention::ReductionDp)
    }

    fn is_postprocess(&self) -> bool {
        matches!(self, Intervention::Postprocess | Intervention::PostprocessDp)
    }
}

/// The sweep: every combination of the five axes is one cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub epsilons: Vec<EpsilonCell>,
    pub constraints: Vec<ConstraintCell>,
    pub model_kinds: Vec<ModelKind>,
    pub seeds: Vec<u64>,
    pub interventions: Vec<Intervention>,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            epsilons: [0.1, 0.5, 1.0, 5.0, 10.0].into_iter().map(EpsilonCell::Private).collect(),
            constraints: vec![ConstraintCell::Unconstrained],
            model_kinds: vec![ModelKind::Logreg],
            seeds: (0..10).collect(),
            interventions: vec![Intervention::None],
        }
    }
}

impl GridSpec {
    pub fn validate(&self) -> Result<(), FrontierError> {
        let bad = |m: &str| Err(FrontierError::InvalidGrid(m.to_string()));
        if self.epsilons.is_empty()
            || self.constraints.is_empty()
            || self.model_kinds.is_empty()
            || self.seeds.is_empty()
            || self.interventions.is_empty()
        {
            return bad("every axis needs at least one value");
        }
        for e in &self.epsilons {
            if let EpsilonCell::Private(v) = e {
                if !(v.is_finite() && *v > 0.0) {
                    return bad("epsilons must be positive");
                }
            }
        }
        if self.epsilons.windows(2).any(|w| w[0].key() >= w[1].key()) {
            return bad("epsilons must be strictly increasing, non_private last");
        }
        for c in &self.constraints {
            if let ConstraintCell::Constrained(fc) = c {
                if !(0.0..=1.0).contains(&fc.delta) {
                    return bad("constraint delta must lie in [0, 1]");
                }
            }
        }
        let mut seeds = self.seeds.clone();
        seeds.sort_unstable();
        seeds.dedup();
        if seeds.len() != self.seeds.len() {
            return bad("seeds must be distinct");
        }
        Ok(())
    }

    /// Cells in canonical order: ε, constraint, model kind, intervention.
    pub fn cells(&self) -> Vec<CellSpec> {
        let mut out = Vec::new();
        for &epsilon in &self.epsilons {
            for &constraint in &self.constraints {
                for &model_kind in &self.model_kinds {
                    for &intervention in &self.interventions {
                        out.push(CellSpec { epsilon, constraint, model_kind, intervention });
                    }
                }
            }
        }
        out
    }

    pub fn n_cells(&self) -> usize {
        self.epsilons.len() * self.constraints.len() * self.model_kinds.len() * self.interventions.len()
    }

    fn has_private(&self) -> bool {
        self.epsilons.iter().any(|e| matches!(e, EpsilonCell::Private(_)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellSpec {
    pub epsilon: EpsilonCell,
    pub constraint: ConstraintCell,
    pub model_kind: ModelKind,
    pub intervention: Intervention,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
    /// Seeds contributing (undefined values are skipped).
    pub n: usize,
}

impl Stat {
    /// Mean and sample standard deviation of the defined values.
    pub fn of(values: impl IntoIterator<Item = Option<f64>>) -> Option<Self> {
        let v: Vec<f64> = values.into_iter().flatten().collect();
        if v.is_empty() {
            return None;
        }
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let std = if v.len() > 1 { (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt() } else { 0.0 };
        Some(Self { mean, std, n: v.len() })
    }
}

/// Test-set metrics of one trained model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub auc: Option<f64>,
    pub dir: Option<f64>,
    pub dpd: f64,
    pub eo: Option<f64>,
    pub eopp: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointMetrics {
    pub accuracy: Stat,
    pub precision: Stat,
    pub recall: Stat,
    pub f1: Stat,
    pub auc: Option<Stat>,
    pub dir: Option<Stat>,
    pub dpd: Stat,
    pub eo: Option<Stat>,
    pub eopp: Option<Stat>,
}

impl PointMetrics {
    fn of(runs: &[RunMetrics]) -> Option<Self> {
        let req = |f: fn(&RunMetrics) -> f64| Stat::of(runs.iter().map(|r| Some(f(r))));
        Some(Self {
            accuracy: req(|r| r.accuracy)?,
            precision: req(|r| r.precision)?,
            recall: req(|r| r.recall)?,
            f1: req(|r| r.f1)?,
            auc: Stat::of(runs.iter().map(|r| r.auc)),
            dir: Stat::of(runs.iter().map(|r| r.dir)),
            dpd: req(|r| r.dpd)?,
            eo: Stat::of(runs.iter().map(|r| r.eo)),
            eopp: Stat::of(runs.iter().map(|r| r.eopp)),
        })
    }

    /// Mean of a metric by name.
    pub fn mean(&self, name: &str) -> Option<f64> {
        match name {
            "accuracy" => Some(self.accuracy.mean),
            "precision" => Some(self.precision.mean),
            "recall" => Some(self.recall.mean),
            "f1" => Some(self.f1.mean),
            "auc" => self.auc.map(|s| s.mean),
            "dir" => self.dir.map(|s| s.mean),
            "dpd" => Some(self.dpd.mean),
            "eo" => self.eo.map(|s| s.mean),
            "eopp" => self.eopp.map(|s| s.mean),
            _ => None,
        }
    }

    /// Achieved disparity for a criterion.
    pub fn disparity(&self, kind: ConstraintKind) -> Option<f64> {
        match kind {
            ConstraintKind::DemographicParity => Some(self.dpd.mean),
            ConstraintKind::EqualizedOdds => self.eo.map(|s| s.mean),
            ConstraintKind::EqualOpportunity => self.eopp.map(|s| s.mean),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PointStatus {
    Ok,
    /// Trained, but the reduction found no point meeting the constraint.
    Infeasible,
    /// Combination not meaningful (e.g. a "+dp" intervention without ε).
    Invalid,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedRun {
    pub seed: u64,
    pub model_ref: Option<String>,
    pub metrics: Option<RunMetrics>,
    /// Composed (ε, δ) from the run's privacy account.
    pub certified: Option<dp::Spent>,
    pub flags: Vec<String>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrontierPoint {
    pub id: String,
    pub cell: CellSpec,
    pub status: PointStatus,
    pub achieved: Option<PointMetrics>,
    pub per_seed: Vec<SeedRun>,
    pub model_refs: Vec<String>,
    /// Largest composed budget over the seeds; non-private cells certify
    /// nothing.
    pub certified_budget: PrivacyBudget,
    pub diagnostics: Vec<String>,
}

impl FrontierPoint {
    /// Certified ε, infinite for non-private points.
    pub fn certified_epsilon(&self) -> f64 {
        self.certified_budget.epsilon().unwrap_or(f64::INFINITY)
    }

    /// Disparity this point is judged on: its own constraint kind, or
    /// demographic parity when unconstrained.
    pub fn disparity(&self) -> Option<f64> {
        let kind = self.cell.constraint.constraint().map_or(ConstraintKind::DemographicParity, |c| c.kind);
        self.achieved.as_ref()?.disparity(kind)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Frontier {
    pub version: String,
    pub dataset_digest: String,
    pub protected: Vec<String>,
    pub grid: GridSpec,
    pub master_seed: u64,
    pub config: TrainingConfig,
    pub points: Vec<FrontierPoint>,
    #[serde(default)]
    pub digest: String,
}

impl Frontier {
    pub fn point(&self, id: &str) -> Option<&FrontierPoint> {
        self.points.iter().find(|p| p.id == id)
    }

    /// Canonical JSON with the digest field filled in.
    pub fn to_canonical(&self) -> Result<String, FrontierError> {
        let mut v = serde_json::to_value(self)?;
        let d = digest_without_field(&v, "digest");
        v["digest"] = Value::String(d);
        Ok(canonical::canonical_value(&v))
    }

    /// Parse and verify a canonical frontier document.
    pub fn from_canonical(text: &str) -> Result<Self, FrontierError> {
        let v: Value = serde_json::from_str(text).map_err(|e| FrontierError::CorruptFile(e.to_string()))?;
        let found = v.get("version").and_then(Value::as_str).unwrap_or("").to_string();
        if found != FRONTIER_VERSION {
            return Err(FrontierError::VersionMismatch { found });
        }
        if canonical::canonical_value(&v) != text {
            return Err(FrontierError::CorruptFile("not in canonical form".into()));
        }
        let stored = v.get("digest").and_then(Value::as_str).unwrap_or("").to_string();
        if digest_without_field(&v, "digest") != stored {
            return Err(FrontierError::CorruptFile("digest mismatch".into()));
        }
        serde_json::from_value(v).map_err(|e| FrontierError::CorruptFile(e.to_string()))
    }

    /// Parse without the digest check (auditing a possibly edited file).
    pub fn from_json_unverified(text: &str) -> Result<Self, FrontierError> {
        let v: Value = serde_json::from_str(text).map_err(|e| FrontierError::CorruptFile(e.to_string()))?;
        let found = v.get("version").and_then(Value::as_str).unwrap_or("").to_string();
        if found != FRONTIER_VERSION {
            return Err(FrontierError::VersionMismatch { found });
        }
        serde_json::from_value(v).map_err(|e| FrontierError::CorruptFile(e.to_string()))
    }

    /// Fill in the digest field from the content.
    pub fn seal(&mut self) {
        let v = serde_json::to_value(&*self).expect("frontier serializes");
        self.digest = digest_without_field(&v, "digest");
    }
}

pub fn serialize_frontier(f: &Frontier, path: impl AsRef<Path>) -> Result<(), FrontierError> {
    let text = f.to_canonical()?;
    let path = path.as_ref();
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    std::io::Write::write_all(&mut tmp, text.as_bytes())?;
    tmp.persist(path).map_err(|e| FrontierError::Io(e.error))?;
    Ok(())
}

pub fn load_frontier(path: impl AsRef<Path>) -> Result<Frontier, FrontierError> {
    Frontier::from_canonical(&std::fs::read_to_string(path)?)
}

/// Self-contained trained model referenced by frontier points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelArtifact {
    pub version: String,
    pub cell: CellSpec,
    pub seed: u64,
    pub run_seed: u64,
    pub dataset_digest: String,
    pub encoder: Encoder,
    pub model: DeployedModel,
    pub account: Option<PrivacyAccount>,
    pub reference_group: GroupId,
}

impl ModelArtifact {
    pub fn to_canonical(&self) -> String {
        canonical::to_canonical_string(self).expect("artifact serializes")
    }

    /// Content id: SHA-256 of the canonical form.
    pub fn id(&self) -> String {
        canonical::sha256_hex(self.to_canonical().as_bytes())
    }
}

/// A built frontier and the model artifacts its points reference.
#[derive(Debug, Clone)]
pub struct BuildOutput {
    pub frontier: Frontier,
    pub artifacts: Vec<ModelArtifact>,
}

struct Prepared {
    train: EncodedMatrix,
    test: EncodedMatrix,
    encoder: Encoder,
}

struct RunResult {
    run: SeedRun,
    artifact: Option<ModelArtifact>,
    infeasible: bool,
}

/// Train and evaluate every cell of `grid` on `ds`.
///
/// Each seed fixes one train/test split shared by all cells. Private cells
/// encode with bounds scaling (data-independent), the rest standardise on
/// the training split. Failures inside a cell are recorded on its point.
pub fn build_frontier(
    ds: &TabularDataset,
    grid: &GridSpec,
    config: &TrainingConfig,
    master_seed: u64,
    progress: Option<&(dyn Fn(usize, usize) + Sync)>,
) -> Result<BuildOutput, FrontierError> {
    grid.validate()?;
    config.validate().map_err(|e| FrontierError::InvalidGrid(e.to_string()))?;
    ds.validate()?;
    if grid.has_private() && !ds.has_bounds() {
        return Err(FrontierError::MissingBoundsForDP);
    }
    let dataset_digest = ds.digest();
    let labels = ds.labels();
    let strat = config.stratify_split.then_some(labels.as_slice());

    // one split per seed, encoded once per scaling in use
    let mut scalings = Vec::new();
    if grid.has_private() {
        scalings.push(Scaling::Bounds);
    }
    if grid.epsilons.contains(&EpsilonCell::NonPrivate) {
        scalings.push(Scaling::Standardize);
    }
    let prepared: BTreeMap<(u64, bool), Prepared> = grid
        .seeds
        .par_iter()
        .flat_map(|&seed| scalings.par_iter().map(move |&sc| (seed, sc)))
        .map(|(seed, scaling)| -> Result<((u64, bool), Prepared), FrontierError> {
            let split = split_indices(ds.n_rows(), strat, config.test_fraction, dp::derive_seed(master_seed, &format!("split/seed{seed}")))?;
            let train_ds = ds.subset(&split.train);
            let test_ds = ds.subset(&split.test);
            let encoder = Encoder::fit(&train_ds, EncodeOptions { scaling, include_protected_as_feature: false })?;
            let train = encoder.transform(&train_ds)?;
            let test = encoder.transform(&test_ds)?;
            Ok(((seed, scaling == Scaling::Bounds), Prepared { train, test, encoder }))
        })
        .collect::<Result<_, _>>()?;

    let cells = grid.cells();
    let total = cells.len() * grid.seeds.len();
    let per_epsilon = cells.len() / grid.epsilons.len();
    let done = AtomicUsize::new(0);
    let tasks: Vec<(usize, usize)> = (0..cells.len()).flat_map(|c| (0..grid.seeds.len()).map(move |s| (c, s))).collect();
    let results: Vec<RunResult> = tasks
        .par_iter()
        .map(|&(ci, si)| {
            let cell = cells[ci];
            let seed = grid.seeds[si];
            // cells differing only in ε share noise streams
            let run_seed = dp::derive_seed(master_seed, &format!("cell{}/seed{si}", ci % per_epsilon));
            let prep = &prepared[&(seed, matches!(cell.epsilon, EpsilonCell::Private(_)))];
            let r = run_one(&cell, seed, run_seed, prep, config, &dataset_digest, master_seed);
            let finished = done.fetch_add(1, Ordering::SeqCst) + 1;
            if let Some(cb) = progress {
                cb(finished, total);
            }
            r
        })
        .collect();

    let mut points = Vec::with_capacity(cells.len());
    let mut artifacts = Vec::new();
    let mut it = results.into_iter();
    for (ci, cell) in cells.iter().enumerate() {
        let runs: Vec<RunResult> = it.by_ref().take(grid.seeds.len()).collect();
        points.push(assemble_point(ci, *cell, runs, &mut artifacts));
    }
    let mut frontier = Frontier {
        version: FRONTIER_VERSION.to_string(),
        dataset_digest,
        protected: ds.protected.clone(),
        grid: grid.clone(),
        master_seed,
        config: config.clone(),
        points,
        digest: String::new(),
    };
    frontier.seal();
    Ok(BuildOutput { frontier, artifacts })
}

fn assemble_point(ci: usize, cell: CellSpec, runs: Vec<RunResult>, artifacts: &mut Vec<ModelArtifact>) -> FrontierPoint {
    let id = format!("p{ci:04}");
    let invalid = runs.iter().any(|r| r.run.error.as_deref().is_some_and(|e| e.starts_with("invalid cell")));
    let failed = runs.iter().any(|r| r.run.error.is_some());
    let infeasible = runs.iter().any(|r| r.infeasible);
    let mut per_seed = Vec::new();
    let mut model_refs = Vec::new();
    let mut diagnostics: Vec<String> = Vec::new();
    let mut certified: Option<dp::Spent> = None;
    for r in runs {
        if let Some(a) = r.artifact {
            model_refs.push(a.id());
            artifacts.push(a);
        }
        if let Some(c) = r.run.certified {
            let prev = certified.unwrap_or_default();
            certified = Some(dp::Spent { epsilon: prev.epsilon.max(c.epsilon), delta: prev.delta.max(c.delta) });
        }
        for f in &r.run.flags {
            if !diagnostics.contains(f) {
                diagnostics.push(f.clone());
            }
        }
        if let Some(e) = &r.run.error {
            diagnostics.push(format!("seed {}: {e}", r.run.seed));
        }
        per_seed.push(r.run);
    }
    let status = if invalid {
        PointStatus::Invalid
    } else if failed {
        PointStatus::Failed
    } else if infeasible {
        PointStatus::Infeasible
    } else {
        PointStatus::Ok
    };
    let achieved = if failed || invalid {
        None
    } else {
        PointMetrics::of(&per_seed.iter().filter_map(|r| r.metrics.clone()).collect::<Vec<_>>())
    };
    let certified_budget = match (cell.epsilon, certified) {
        (EpsilonCell::Private(_), Some(c)) => PrivacyBudget::Private { epsilon: c.epsilon, delta: c.delta },
        _ => PrivacyBudget::NonPrivate,
    };
    FrontierPoint { id, cell, status, achieved, per_seed, model_refs, certified_budget, diagnostics }
}

fn run_one(
    cell: &CellSpec,
    seed: u64,
    run_seed: u64,
    prep: &Prepared,
    config: &TrainingConfig,
    dataset_digest: &str,
    master_seed: u64,
) -> RunResult {
    let fail = |msg: String| RunResult {
        run: SeedRun { seed, model_ref: None, metrics: None, certified: None, flags: vec![], error: Some(msg) },
        artifact: None,
        infeasible: false,
    };
    let budget = match cell.epsilon {
        EpsilonCell::Private(e) => match PrivacyBudget::for_rows(e, prep.train.n_rows()) {
            Ok(b) => b,
            Err(e) => return fail(e.to_string()),
        },
        EpsilonCell::NonPrivate => PrivacyBudget::NonPrivate,
    };
    if cell.intervention.requires_privacy() && !budget.is_private() {
        return fail(format!("invalid cell: {} needs a private epsilon", cell.intervention.name()));
    }
    let learner = match Learner::new(cell.model_kind, budget, config.clone()) {
        Ok(l) => l,
        Err(e) => return fail(format!("invalid cell: {e}")),
    };
    let train = &prep.train;
    let test = &prep.test;
    let train_groups = train.joint_groups();
    let mut sizes: BTreeMap<GroupId, u64> = BTreeMap::new();
    for g in &train_groups {
        *sizes.entry(*g).or_default() += 1;
    }
    let reference = majority_group(&sizes).unwrap_or(0);
    let mut flags = Vec::new();
    let mut infeasible = false;

    let trained: Result<(DeployedModel, Option<PrivacyAccount>), String> = (|| match cell.constraint.constraint() {
        Some(constraint) if cell.intervention.is_reduction() => {
            let params = ReductionParams::from(&config.reduction);
            let out = exponentiated_gradient(train, &train.labels, &train_groups, &learner, &constraint, &params, run_seed)
                .map_err(|e| e.to_string())?;
            if out.diagnostics.no_feasible_point {
                flags.push("no_feasible_point".to_string());
                infeasible = true;
            }
            Ok((DeployedModel::Randomized { mixture: out.classifier }, out.account))
        }
        Some(constraint) if cell.intervention.is_postprocess() => {
            let split = split_indices(
                train.n_rows(),
                Some(&train.labels),
                config.calibration_fraction,
                dp::derive_seed(master_seed, &format!("calibration/seed{seed}")),
            )
            .map_err(|e| e.to_string())?;
            let fit = train.subset(&split.train);
            let calib = train.subset(&split.test);
            let fitted = learner.fit(&fit, &fit.labels, None, run_seed).map_err(|e| e.to_string())?;
            let objective: Objective = config.postprocess.objective.parse().map_err(|e: crate::fair::FairError| e.to_string())?;
            let thresholds = threshold_optimize(&fitted.model, &calib, &constraint, objective).map_err(|e| e.to_string())?;
            if !thresholds.degenerate_groups.is_empty() {
                flags.push("degenerate_roc".to_string());
            }
            Ok((DeployedModel::PostProcessed { model: fitted.model, thresholds }, fitted.account))
        }
        _ => {
            let fitted = learner.fit(train, &train.labels, None, run_seed).map_err(|e| e.to_string())?;
            Ok((DeployedModel::Base { model: fitted.model }, fitted.account))
        }
    })();
    let (model, account) = match trained {
        Ok(t) => t,
        Err(e) => return fail(e),
    };
    let certified = account.as_ref().map(|a| a.total());
    if let (Some(c), EpsilonCell::Private(e)) = (certified, cell.epsilon) {
        if c.epsilon > e {
            return fail(format!("accountant certified {} above requested {e}", c.epsilon));
        }
    }
    let metrics = match evaluate(&model, test, reference, run_seed) {
        Ok(m) => m,
        Err(e) => return fail(e),
    };
    let artifact = ModelArtifact {
        version: MODEL_VERSION.to_string(),
        cell: *cell,
        seed,
        run_seed,
        dataset_digest: dataset_digest.to_string(),
        encoder: prep.encoder.clone(),
        model,
        account,
        reference_group: reference,
    };
    RunResult {
        run: SeedRun { seed, model_ref: Some(artifact.id()), metrics: Some(metrics), certified, flags, error: None },
        artifact: Some(artifact),
        infeasible,
    }
}

/// Test-set metrics of a deployed model against the training-majority
/// reference group. Randomised models draw from a stream of `run_seed`.
pub fn evaluate(model: &DeployedModel, test: &EncodedMatrix, reference: GroupId, run_seed: u64) -> Result<RunMetrics, String> {
    let mut rng = dp::stream(run_seed, "evaluate");
    let yhat = model.predict(test, &mut rng).map_err(|e| e.to_string())?;
    let scores = model.scores(test).map_err(|e| e.to_string())?;
    let perf = evaluate_performance(&test.labels, &yhat, Some(&scores)).map_err(|e| e.to_string())?;
    let counts = confusion_by_group(&test.labels, &yhat, &test.joint_groups()).map_err(|e| e.to_string())?;
    let reference = counts.groups.contains_key(&reference).then_some(reference);
    let fair = fairness_report(&counts, reference).map_err(|e: metrics::MetricsError| e.to_string())?;
    Ok(RunMetrics {
        accuracy: perf.accuracy,
        precision: perf.precision,
        recall: perf.recall,
        f1: perf.f1,
        auc: perf.auc,
        dir: fair.dir,
        dpd: fair.dpd,
        eo: fair.eo,
        eopp: fair.eopp,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParetoAxis {
    /// Higher is better.
    Accuracy,
    /// Lower is better; non-private counts as infinite.
    Epsilon,
    /// Lower is better; the point's own criterion, DPD when unconstrained.
    Disparity,
}

impl std::str::FromStr for ParetoAxis {
    type Err = FrontierError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "accuracy" => Ok(ParetoAxis::Accuracy),
            "epsilon" => Ok(ParetoAxis::Epsilon),
            "disparity" => Ok(ParetoAxis::Disparity),
            other => Err(FrontierError::InvalidGrid(format!("unknown pareto axis `{other}`"))),
        }
    }
}

/// Axis value oriented so that smaller is better; `None` for points
/// without metrics.
fn axis_cost(p: &FrontierPoint, axis: ParetoAxis) -> Option<f64> {
    let m = p.achieved.as_ref()?;
    match axis {
        ParetoAxis::Accuracy => Some(-m.accuracy.mean),
        ParetoAxis::Epsilon => Some(p.certified_epsilon()),
        ParetoAxis::Disparity => p.disparity(),
    }
}

/// Points with metrics that no other point beats strictly on every axis.
pub fn pareto_filter(f: &Frontier, axes: &[ParetoAxis]) -> Result<Vec<FrontierPoint>, FrontierError> {
    if axes.is_empty() {
        return Err(FrontierError::EmptyAxes);
    }
    let costs: Vec<(usize, Vec<f64>)> = f
        .points
        .iter()
        .enumerate()
        .filter_map(|(i, p)| axes.iter().map(|a| axis_cost(p, *a)).collect::<Option<Vec<f64>>>().map(|c| (i, c)))
        .collect();
    Ok(costs
        .iter()
        .filter(|(_, c)| !costs.iter().any(|(_, d)| d.iter().zip(c).all(|(x, y)| x < y)))
        .map(|(i, _)| f.points[*i].clone())
        .collect())
}

const METRIC_COLUMNS: [&str; 9] = ["accuracy", "precision", "recall", "f1", "auc", "dir", "dpd", "eo", "eopp"];

/// CSV of points for plotting, one row per point.
pub fn export_csv(f: &Frontier) -> Result<String, FrontierError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec![
        "point_id".to_string(),
        "status".into(),
        "epsilon".into(),
        "certified_epsilon".into(),
        "constraint_kind".into(),
        "delta_target".into(),
        "model".into(),
        "intervention".into(),
    ];
    for m in METRIC_COLUMNS {
        header.push(format!("{m}_mean"));
        header.push(format!("{m}_std"));
    }
    w.write_record(&header)?;
    for p in &f.points {
        let (kind, delta) = match p.cell.constraint {
            ConstraintCell::Unconstrained => ("unconstrained".to_string(), String::new()),
            ConstraintCell::Constrained(c) => (c.kind.name().to_string(), c.delta.to_string()),
        };
        let status = serde_json::to_value(p.status)?.as_str().unwrap_or_default().to_string();
        let mut row = vec![
            p.id.clone(),
            status,
            p.cell.epsilon.value().map_or("non_private".into(), |e| e.to_string()),
            p.certified_budget.epsilon().map_or(String::new(), |e| e.to_string()),
            kind,
            delta,
            p.cell.model_kind.name().to_string(),
            p.cell.intervention.name().to_string(),
        ];
        for m in METRIC_COLUMNS {
            let stat = p.achieved.as_ref().and_then(|a| match m {
                "accuracy" => Some(a.accuracy),
                "precision" => Some(a.precision),
                "recall" => Some(a.recall),
                "f1" => Some(a.f1),
                "auc" => a.auc,
                "dir" => a.dir,
                "dpd" => Some(a.dpd),
                "eo" => a.eo,
                _ => a.eopp,
            });
            row.push(stat.map_or(String::new(), |s| s.mean.to_string()));
            row.push(stat.map_or(String::new(), |s| s.std.to_string()));
        }
        w.write_record(&row)?;
    }
    let bytes = w.into_inner().map_err(|e| FrontierError::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv is utf-8"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_json_forms() {
        let g: GridSpec = serde_json::from_str(
            r#"{"epsilons":[0.5,1,"non_private"],"constraints":["unconstrained",{"kind":"demographic_parity","delta":0.05}],
                "model_kinds":["logreg"],"seeds":[0,1],"interventions":["none","reduction+dp"]}"#,
        )
        .unwrap();
        g.validate().unwrap();
        assert_eq!(g.n_cells(), 12);
        assert_eq!(g.cells().len(), 12);
        let back: GridSpec = serde_json::from_str(&serde_json::to_string(&g).unwrap()).unwrap();
        assert_eq!(back, g);
        let mut bad = g.clone();
        bad.epsilons = vec![EpsilonCell::Private(1.0), EpsilonCell::Private(0.5)];
        assert!(matches!(bad.validate(), Err(FrontierError::InvalidGrid(_))));
        bad.epsilons = vec![EpsilonCell::NonPrivate, EpsilonCell::Private(0.5)];
        assert!(bad.validate().is_err());
        bad.epsilons = vec![];
        assert!(bad.validate().is_err());
    }

    #[test]
    fn default_grid_epsilons() {
        let g = GridSpec::default();
        let e: Vec<f64> = g.epsilons.iter().filter_map(|e| e.value()).collect();
        assert_eq!(e, vec![0.1, 0.5, 1.0, 5.0, 10.0]);
    }

    #[test]
    fn stat_sample_std() {
        let s = Stat::of([Some(1.0), Some(3.0), None]).unwrap();
        assert_eq!((s.mean, s.std, s.n), (2.0, 2f64.sqrt(), 2));
        assert!(Stat::of([None]).is_none());
    }
}
