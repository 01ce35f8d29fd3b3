//! The controlled vocabulary: a versioned JSON document mapping phrases to
//! tuple fields and holding the explanation templates.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{EpsilonBand, MetricName, PolicyError, PriorityAxis};
use crate::fair::ConstraintKind;

pub const DEFAULT_LEXICON: &str = include_str!("../../lexicon/lexicon-v1.json");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntentEntry {
    pub criterion: ConstraintKind,
    /// Canonical phrase, one per criterion.
    pub phrase: String,
    #[serde(default)]
    pub aliases: Vec<String>,
    /// Tuple sentence; `{delta}` is filled with percentage points.
    pub template: String,
    /// Sentence describing a trained point's achieved disparity.
    pub point_template: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FairnessDescriptor {
    pub name: String,
    pub delta: f64,
    #[serde(default)]
    pub aliases: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrivacyDescriptor {
    pub name: String,
    pub band: [f64; 2],
    pub phrase: String,
    pub sentence: String,
}

impl PrivacyDescriptor {
    pub fn epsilon_band(&self) -> EpsilonBand {
        EpsilonBand::new(self.band[0], self.band[1])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricEntry {
    pub name: MetricName,
    pub aliases: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintFirstEntry {
    pub aliases: Vec<String>,
    pub sentence: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LexicographicEntry {
    /// Words introducing an axis order.
    pub aliases: Vec<String>,
    pub axes: std::collections::BTreeMap<PriorityAxis, String>,
    /// `{order}` is filled with "a, then b, then c".
    pub sentence: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntentLexicon {
    pub version: String,
    pub intents: Vec<IntentEntry>,
    pub fairness_descriptors: Vec<FairnessDescriptor>,
    pub privacy_descriptors: Vec<PrivacyDescriptor>,
    pub weak_privacy_sentence: String,
    pub no_privacy_sentence: String,
    pub metrics: Vec<MetricEntry>,
    pub performance_template: String,
    pub point_performance_template: String,
    pub constraint_first: ConstraintFirstEntry,
    pub lexicographic: LexicographicEntry,
    pub dir_template: String,
    /// Word prefixes that signal a fairness intent.
    pub fairness_cues: Vec<String>,
    /// Connective words not reported as unmatched.
    pub filler: Vec<String>,
}

impl Default for IntentLexicon {
    fn default() -> Self {
        Self::from_json(DEFAULT_LEXICON).expect("bundled lexicon is valid")
    }
}

impl IntentLexicon {
    pub fn from_json(text: &str) -> Result<Self, PolicyError> {
        let lex: Self = serde_json::from_str(text)?;
        lex.validate()?;
        Ok(lex)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self, PolicyError> {
        let text = std::fs::read_to_string(path).map_err(|e| PolicyError::InvalidLexicon(e.to_string()))?;
        Self::from_json(&text)
    }

    /// Totality (every criterion and axis covered) and injectivity (no
    /// phrase claimed twice, no two descriptors with the same value).
    pub fn validate(&self) -> Result<(), PolicyError> {
        let bad = |m: String| Err(PolicyError::InvalidLexicon(m));
        if self.version.is_empty() {
            return bad("missing version".into());
        }
        for kind in [ConstraintKind::DemographicParity, ConstraintKind::EqualizedOdds, ConstraintKind::EqualOpportunity] {
            let n = self.intents.iter().filter(|i| i.criterion == kind).count();
            if n != 1 {
                return bad(format!("criterion {} has {n} intent entries", kind.name()));
            }
        }
        for m in MetricName::ALL {
            if !self.metrics.iter().any(|e| e.name == m && !e.aliases.is_empty()) {
                return bad(format!("metric {} has no phrase", m.name()));
            }
        }
        for a in PriorityAxis::ALL {
            if !self.lexicographic.axes.contains_key(&a) {
                return bad(format!("priority axis {} has no word", a.name()));
            }
        }
        if self.fairness_descriptors.is_empty() || self.privacy_descriptors.is_empty() {
            return bad("descriptor categories must be non-empty".into());
        }
        for d in &self.fairness_descriptors {
            if !(d.delta > 0.0 && d.delta <= 1.0) {
                return bad(format!("descriptor `{}` has delta {}", d.name, d.delta));
            }
        }
        for d in &self.privacy_descriptors {
            if d.epsilon_band().validate().is_err() {
                return bad(format!("descriptor `{}` has an invalid band", d.name));
            }
        }
        let deltas: BTreeSet<u64> = self.fairness_descriptors.iter().map(|d| d.delta.to_bits()).collect();
        let bands: BTreeSet<(u64, u64)> =
            self.privacy_descriptors.iter().map(|d| (d.band[0].to_bits(), d.band[1].to_bits())).collect();
        if deltas.len() != self.fairness_descriptors.len() || bands.len() != self.privacy_descriptors.len() {
            return bad("two descriptors of one category share a value".into());
        }
        let mut seen = BTreeSet::new();
        for (phrase, _) in self.phrases() {
            if phrase.trim().is_empty() {
                return bad("empty phrase".into());
            }
            if !seen.insert(phrase.clone()) {
                return bad(format!("phrase `{phrase}` is claimed twice"));
            }
        }
        Ok(())
    }

    /// Every fixed phrase with what it denotes, normalised.
    pub(crate) fn phrases(&self) -> Vec<(String, PhraseValue)> {
        let mut out = Vec::new();
        for i in &self.intents {
            out.push((normalize(&i.phrase), PhraseValue::Intent(i.criterion)));
            for a in &i.aliases {
                out.push((normalize(a), PhraseValue::Intent(i.criterion)));
            }
        }
        for (k, d) in self.fairness_descriptors.iter().enumerate() {
            out.push((normalize(&d.name), PhraseValue::Fairness(k)));
            for a in &d.aliases {
                out.push((normalize(a), PhraseValue::Fairness(k)));
            }
        }
        for (k, d) in self.privacy_descriptors.iter().enumerate() {
            out.push((normalize(&d.phrase), PhraseValue::Privacy(k)));
            out.push((strip_period(&normalize(&d.sentence)), PhraseValue::Privacy(k)));
        }
        for a in &self.constraint_first.aliases {
            out.push((normalize(a), PhraseValue::ConstraintFirst));
        }
        out.push((strip_period(&normalize(&self.constraint_first.sentence)), PhraseValue::ConstraintFirst));
        out
    }

    pub fn intent(&self, kind: ConstraintKind) -> &IntentEntry {
        self.intents.iter().find(|i| i.criterion == kind).expect("validated: every criterion has an entry")
    }

    /// Descriptor whose Δ equals `delta`, if any.
    pub fn fairness_descriptor_for(&self, delta: f64) -> Option<&FairnessDescriptor> {
        self.fairness_descriptors.iter().find(|d| (d.delta - delta).abs() < 1e-12)
    }

    /// Descriptor whose band equals `band`, if any.
    pub fn privacy_descriptor_for(&self, band: &EpsilonBand) -> Option<&PrivacyDescriptor> {
        self.privacy_descriptors.iter().find(|d| Some(d.band[1]) == band.high && d.band[0] == band.low)
    }

    pub fn metric_word(&self, m: MetricName) -> &str {
        self.metrics.iter().find(|e| e.name == m).map_or(m.name(), |e| e.aliases[0].as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum PhraseValue {
    Intent(ConstraintKind),
    Fairness(usize),
    Privacy(usize),
    ConstraintFirst,
}

/// Lowercase, unify apostrophes and collapse whitespace.
pub(crate) fn normalize(s: &str) -> String {
    let lowered: String = s
        .chars()
        .map(|c| match c {
            '\u{2018}' | '\u{2019}' => '\'',
            '\u{201c}' | '\u{201d}' => '"',
            c => c.to_ascii_lowercase(),
        })
        .collect();
    lowered.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn strip_period(s: &str) -> String {
    s.trim_end_matches('.').to_string()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_lexicon_is_valid() {
        let lex = IntentLexicon::default();
        assert_eq!(lex.version, "lexicon-v1");
        assert_eq!(lex.fairness_descriptor_for(0.03).unwrap().name, "strict");
        assert_eq!(lex.privacy_descriptor_for(&EpsilonBand::new(1.0, 3.0)).unwrap().name, "moderate");
    }

    #[test]
    fn duplicate_phrase_rejected() {
        let mut lex = IntentLexicon::default();
        lex.intents[1].aliases.push("demographic parity".into());
        assert!(matches!(lex.validate(), Err(PolicyError::InvalidLexicon(_))));
    }

    #[test]
    fn duplicate_descriptor_value_rejected() {
        let mut lex = IntentLexicon::default();
        lex.fairness_descriptors[1].delta = 0.03;
        assert!(lex.validate().is_err());
    }

    #[test]
    fn missing_criterion_rejected() {
        let mut lex = IntentLexicon::default();
        lex.intents.pop();
        assert!(lex.validate().is_err());
    }

    #[test]
    fn normalizes_typography() {
        assert_eq!(normalize("  Individual\u{2019}s   DATA "), "individual's data");
    }
}
