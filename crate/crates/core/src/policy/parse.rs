//! Upward translation: deterministic matching of controlled-vocabulary
//! prompts against the lexicon. Patterns with numbers are matched first,
//! then fixed phrases longest-first; text left over is reported, never
//! interpreted.

use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::lexicon::{normalize, PhraseValue};
use super::{EpsilonBand, IntentLexicon, MetricName, PerformanceRequirement, PolicyError, Priority, PriorityAxis};
use crate::fair::ConstraintKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchCategory {
    Intent,
    Fairness,
    Privacy,
    Performance,
    Priority,
}

impl MatchCategory {
    fn name(&self) -> &'static str {
        match self {
            MatchCategory::Intent => "intent",
            MatchCategory::Fairness => "fairness",
            MatchCategory::Privacy => "privacy",
            MatchCategory::Performance => "performance",
            MatchCategory::Priority => "priority",
        }
    }
}

/// A recognised span of the normalised prompt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhraseMatch {
    pub start: usize,
    pub end: usize,
    pub text: String,
    pub category: MatchCategory,
}

/// Tuple fields recognised in a prompt; absent fields were not mentioned.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ParsedPolicy {
    pub criterion: Option<ConstraintKind>,
    pub delta: Option<f64>,
    pub epsilon_band: Option<EpsilonBand>,
    pub performance: Option<PerformanceRequirement>,
    pub priority: Option<Priority>,
    pub matches: Vec<PhraseMatch>,
    /// Words that matched nothing, in prompt order.
    pub unmatched: Vec<String>,
}

const NUMBER_WORDS: [&str; 21] = [
    "zero", "one", "two", "three", "four", "five", "six", "seven", "eight", "nine", "ten", "eleven", "twelve",
    "thirteen", "fourteen", "fifteen", "sixteen", "seventeen", "eighteen", "nineteen", "twenty",
];

const DEC: &str = r"(\d+(?:\.\d+)?|\.\d+)";

static POINTS_RE: LazyLock<Regex> = LazyLock::new(|| {
    let words = NUMBER_WORDS.join("|");
    Regex::new(&format!(
        r"(?:(?:will\s+)?(?:differ|vary)\s+(?:across\s+groups\s+)?(?:by\s+)?)?(?:no more than|at most|within|up to|less than|under|below)\s+({DEC_INNER}|{words})\s+percentage\s+points?",
        DEC_INNER = r"\d+(?:\.\d+)?"
    ))
    .expect("valid regex")
});

static DELTA_RE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(&format!(
        r"(?:disparity|difference|gap|delta|Δ|δ)(?:\s+threshold)?\s*(?:of\s+)?(?:at most|no more than|up to|below|under|within|≤|<=|=|:)?\s*{DEC}(\s*%)?"
    ))
    .expect("valid regex")
});

static EPS_RANGE_RE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(&format!(r"(?:epsilon|ε)\s*(?:between|in|from|within)?\s*\[?\s*{DEC}\s*(?:and|to|-|,)\s*{DEC}\s*\]?"))
        .expect("valid regex")
});

static EPS_POINT_RE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(&format!(r"(?:epsilon|ε)\s*(?:(at least|≥|>=)|of|=|:)?\s*{DEC}")).expect("valid regex")
});

static TOKEN_RE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"[a-z0-9][a-z0-9'\-]*").expect("valid regex"));

const COMPARATORS: &str = r"at least|no less than|above|over|greater than|more than|exceeding|minimum of|>=|≥";

/// Parser with the lexicon-dependent patterns compiled once.
#[derive(Debug, Clone)]
pub struct PromptParser<'a> {
    lexicon: &'a IntentLexicon,
    phrases: Vec<(String, PhraseValue)>,
    perf_before: Regex,
    perf_after: Regex,
    lexicographic: Regex,
    metric_words: Vec<(String, MetricName)>,
    axis_words: Vec<(String, PriorityAxis)>,
}

fn alternation<'s>(words: impl IntoIterator<Item = &'s str>) -> String {
    let mut w: Vec<&str> = words.into_iter().collect();
    w.sort_by(|a, b| b.len().cmp(&a.len()).then(a.cmp(b)));
    w.iter().map(|s| regex::escape(&normalize(s))).collect::<Vec<_>>().join("|")
}

impl<'a> PromptParser<'a> {
    pub fn new(lexicon: &'a IntentLexicon) -> Self {
        let mut phrases = lexicon.phrases();
        phrases.sort_by(|a, b| b.0.len().cmp(&a.0.len()).then(a.0.cmp(&b.0)));
        let metric_words: Vec<(String, MetricName)> =
            lexicon.metrics.iter().flat_map(|m| m.aliases.iter().map(move |a| (normalize(a), m.name))).collect();
        let metrics = alternation(metric_words.iter().map(|(w, _)| w.as_str()));
        let axis_words: Vec<(String, PriorityAxis)> =
            lexicon.lexicographic.axes.iter().map(|(a, w)| (normalize(w), *a)).collect();
        let axes = alternation(axis_words.iter().map(|(w, _)| w.as_str()));
        let intro = alternation(lexicon.lexicographic.aliases.iter().map(String::as_str));
        let val = r"(\d+(?:\.\d+)?)\s*(%|percent)?";
        Self {
            lexicon,
            phrases,
            perf_before: Regex::new(&format!(r"(?:{COMPARATORS})\s+{val}\s+({metrics})")).expect("valid regex"),
            perf_after: Regex::new(&format!(
                r"({metrics})\s+(?:(?:will be|must be|should be|is|of|:)\s*)?(?:{COMPARATORS})\s+{val}"
            ))
            .expect("valid regex"),
            lexicographic: Regex::new(&format!(
                r"(?:{intro})(?:\s+by)?\s*:?\s*((?:{axes})(?:\s*(?:,\s*then|,|then|>|and then)\s*(?:{axes}))*)"
            ))
            .expect("valid regex"),
            metric_words,
            axis_words,
        }
    }

    pub fn parse(&self, prompt: &str) -> Result<ParsedPolicy, PolicyError> {
        let text = normalize(prompt);
        if text.is_empty() {
            return Err(PolicyError::EmptyPrompt);
        }
        let mut claimed = vec![false; text.len()];
        let mut found: Vec<(PhraseMatch, Value)> = Vec::new();

        let mut claim = |start: usize, end: usize, category: MatchCategory, value: Value, claimed: &mut Vec<bool>| {
            if !at_boundary(&text, start, end) || claimed[start..end].iter().any(|c| *c) {
                return;
            }
            claimed[start..end].iter_mut().for_each(|c| *c = true);
            found.push((PhraseMatch { start, end, text: text[start..end].to_string(), category }, value));
        };

        for c in self.lexicographic.captures_iter(&text) {
            let m = c.get(0).expect("whole match");
            let list = &c[1];
            let mut order = Vec::new();
            for tok in TOKEN_RE.find_iter(list) {
                if let Some((_, a)) = self.axis_words.iter().find(|(w, _)| w == tok.as_str()) {
                    order.push(*a);
                }
            }
            claim(m.start(), m.end(), MatchCategory::Priority, Value::Priority(Priority::Lexicographic(order)), &mut claimed);
        }
        for c in POINTS_RE.captures_iter(&text) {
            let m = c.get(0).expect("whole match");
            let n = &c[1];
            let points = NUMBER_WORDS.iter().position(|w| *w == n).map(|k| k as f64).or_else(|| n.parse().ok());
            if let Some(p) = points {
                claim(m.start(), m.end(), MatchCategory::Fairness, Value::Delta(p / 100.0), &mut claimed);
            }
        }
        for c in DELTA_RE.captures_iter(&text) {
            let m = c.get(0).expect("whole match");
            if let Ok(v) = c[1].parse::<f64>() {
                let v = if c.get(2).is_some() { v / 100.0 } else { v };
                claim(m.start(), m.end(), MatchCategory::Fairness, Value::Delta(v), &mut claimed);
            }
        }
        for c in EPS_RANGE_RE.captures_iter(&text) {
            let m = c.get(0).expect("whole match");
            if let (Ok(lo), Ok(hi)) = (c[1].parse::<f64>(), c[2].parse::<f64>()) {
                claim(m.start(), m.end(), MatchCategory::Privacy, Value::Band(EpsilonBand::new(lo, hi)), &mut claimed);
            }
        }
        for c in EPS_POINT_RE.captures_iter(&text) {
            let m = c.get(0).expect("whole match");
            if let Ok(v) = c[2].parse::<f64>() {
                let band = if c.get(1).is_some() { EpsilonBand::open(v) } else { EpsilonBand::new(v, v) };
                claim(m.start(), m.end(), MatchCategory::Privacy, Value::Band(band), &mut claimed);
            }
        }
        for (re, value_at, metric_at) in [(&self.perf_before, 1, 3), (&self.perf_after, 2, 1)] {
            for c in re.captures_iter(&text) {
                let m = c.get(0).expect("whole match");
                let Ok(v) = c[value_at].parse::<f64>() else { continue };
                let percent = c.get(value_at + 1).is_some();
                let threshold = if percent { v / 100.0 } else { v };
                let Some(metric) = self.metric_words.iter().find(|(w, _)| w == &c[metric_at]).map(|(_, m)| *m) else {
                    continue;
                };
                let req = PerformanceRequirement { metric, threshold };
                claim(m.start(), m.end(), MatchCategory::Performance, Value::Performance(req), &mut claimed);
            }
        }
        for (phrase, value) in &self.phrases {
            let mut from = 0;
            while let Some(pos) = text[from..].find(phrase.as_str()) {
                let start = from + pos;
                let end = start + phrase.len();
                let (category, v) = match *value {
                    PhraseValue::Intent(k) => (MatchCategory::Intent, Value::Intent(k)),
                    PhraseValue::Fairness(k) => (MatchCategory::Fairness, Value::Delta(self.lexicon.fairness_descriptors[k].delta)),
                    PhraseValue::Privacy(k) => {
                        (MatchCategory::Privacy, Value::Band(self.lexicon.privacy_descriptors[k].epsilon_band()))
                    }
                    PhraseValue::ConstraintFirst => (MatchCategory::Priority, Value::Priority(Priority::ConstraintFirst)),
                };
                claim(start, end, category, v, &mut claimed);
                from = end;
            }
        }

        found.sort_by_key(|(m, _)| m.start);
        let mut out = ParsedPolicy::default();
        let mut first: [Option<&PhraseMatch>; 5] = [None; 5];
        for (m, v) in &found {
            let slot = m.category as usize;
            let conflict = match v {
                Value::Intent(k) => set_once(&mut out.criterion, *k),
                Value::Delta(d) => set_once(&mut out.delta, *d),
                Value::Band(b) => set_once(&mut out.epsilon_band, *b),
                Value::Performance(p) => set_once(&mut out.performance, *p),
                Value::Priority(p) => set_once(&mut out.priority, p.clone()),
            };
            if conflict {
                return Err(PolicyError::ConflictingDescriptors {
                    category: m.category.name().to_string(),
                    first: first[slot].map_or(String::new(), |f| f.text.clone()),
                    second: m.text.clone(),
                });
            }
            first[slot].get_or_insert(m);
        }
        out.matches = found.into_iter().map(|(m, _)| m).collect();

        // leftover text: report words, reject unknown fairness intents
        for (seg_start, seg_end) in unclaimed_segments(&text, &claimed) {
            let seg = &text[seg_start..seg_end];
            for tok in TOKEN_RE.find_iter(seg) {
                let word = tok.as_str();
                if self.lexicon.fairness_cues.iter().any(|c| word.starts_with(c.as_str())) {
                    let trimmed_start = seg_start + (seg.len() - seg.trim_start().len());
                    let trimmed_end = seg_start + seg.trim_end().len();
                    return Err(PolicyError::UnrecognizedIntent {
                        span: text[trimmed_start..trimmed_end].to_string(),
                        start: trimmed_start,
                        end: trimmed_end,
                    });
                }
                if !self.lexicon.filler.iter().any(|f| f == word) {
                    out.unmatched.push(word.to_string());
                }
            }
        }
        Ok(out)
    }
}

/// Parse with a one-off [`PromptParser`].
pub fn parse_policy_prompt(prompt: &str, lexicon: &IntentLexicon) -> Result<ParsedPolicy, PolicyError> {
    PromptParser::new(lexicon).parse(prompt)
}

#[derive(Debug, Clone)]
enum Value {
    Intent(ConstraintKind),
    Delta(f64),
    Band(EpsilonBand),
    Performance(PerformanceRequirement),
    Priority(Priority),
}

/// Store `v` unless a different value is already there; true on conflict.
fn set_once<T: PartialEq>(slot: &mut Option<T>, v: T) -> bool {
    match slot {
        Some(old) => *old != v,
        None => {
            *slot = Some(v);
            false
        }
    }
}

fn at_boundary(text: &str, start: usize, end: usize) -> bool {
    let word = |c: char| c.is_alphanumeric();
    let before = text[..start].chars().next_back().is_none_or(|c| !word(c));
    let after = text[end..].chars().next().is_none_or(|c| !word(c));
    let first_inner = text[start..end].chars().next().is_some_and(word);
    let last_inner = text[start..end].chars().next_back().is_some_and(word);
    (before || !first_inner) && (after || !last_inner)
}

/// Maximal unclaimed runs, split at clause punctuation.
fn unclaimed_segments(text: &str, claimed: &[bool]) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut start: Option<usize> = None;
    for (i, c) in text.char_indices() {
        let breaks = claimed[i] || matches!(c, ',' | ';' | '.' | ':' | '!' | '?');
        match (breaks, start) {
            (true, Some(s)) => {
                out.push((s, i));
                start = None;
            }
            (false, None) => start = Some(i),
            _ => {}
        }
    }
    if let Some(s) = start {
        out.push((s, text.len()));
    }
    out.into_iter().filter(|(s, e)| !text[*s..*e].trim().is_empty()).collect()
}
