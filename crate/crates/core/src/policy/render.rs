//! Downward translation: fixed templates from the lexicon filled with
//! tuple or frontier-point values.

use super::{EpsilonBand, IntentLexicon, MetricName, PolicyTuple, Priority};
use crate::fair::ConstraintKind;
use crate::frontier::FrontierPoint;

const NUMBER_WORDS: [&str; 21] = [
    "zero", "one", "two", "three", "four", "five", "six", "seven", "eight", "nine", "ten", "eleven", "twelve",
    "thirteen", "fourteen", "fifteen", "sixteen", "seventeen", "eighteen", "nineteen", "twenty",
];

/// What to explain.
#[derive(Debug, Clone, Copy)]
pub enum Explainable<'a> {
    Tuple(&'a PolicyTuple),
    /// A trained point, judged under a criterion and performance metric.
    Point { point: &'a FrontierPoint, criterion: ConstraintKind, metric: MetricName },
}

pub fn render_explanation(item: &Explainable<'_>, lexicon: &IntentLexicon) -> String {
    match *item {
        Explainable::Tuple(t) => render_tuple(t, lexicon),
        Explainable::Point { point, criterion, metric } => render_point(point, criterion, metric, lexicon),
    }
}

/// A disparity as words: 0.05 gives "five percentage points".
pub fn percentage_points(x: f64) -> String {
    let pp = x * 100.0;
    let rounded = pp.round();
    if (pp - rounded).abs() < 1e-9 && (0.0..=20.0).contains(&rounded) {
        let n = rounded as usize;
        let unit = if n == 1 { "percentage point" } else { "percentage points" };
        return format!("{} {unit}", NUMBER_WORDS[n]);
    }
    format!("{} percentage points", trim_number(pp, 2))
}

fn trim_number(x: f64, decimals: usize) -> String {
    let s = format!("{x:.decimals$}");
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}

fn percent(x: f64) -> String {
    format!("{}%", trim_number(x * 100.0, 1))
}

fn metric_display(m: MetricName) -> &'static str {
    match m {
        MetricName::Accuracy => "Accuracy",
        MetricName::Precision => "Precision",
        MetricName::Recall => "Recall",
        MetricName::F1 => "F1 score",
        MetricName::Auc => "AUC",
    }
}

fn band_sentence(band: &EpsilonBand, lexicon: &IntentLexicon) -> String {
    if let Some(d) = lexicon.privacy_descriptor_for(band) {
        return d.sentence.clone();
    }
    match band.high {
        Some(h) => format!("Privacy loss is kept to epsilon between {} and {}.", trim_number(band.low, 4), trim_number(h, 4)),
        None => format!(
            "Privacy loss is kept to epsilon of at least {}, and models without a privacy guarantee are acceptable.",
            trim_number(band.low, 4)
        ),
    }
}

/// Plain-language statement of every requirement in a tuple.
pub fn render_tuple(t: &PolicyTuple, lexicon: &IntentLexicon) -> String {
    let fairness = lexicon.intent(t.criterion).template.replace("{delta}", &percentage_points(t.delta));
    let privacy = band_sentence(&t.epsilon_band, lexicon);
    let performance = lexicon
        .performance_template
        .replace("{Metric}", metric_display(t.performance.metric))
        .replace("{value}", &percent(t.performance.threshold));
    let priority = match &t.priority {
        Priority::ConstraintFirst => lexicon.constraint_first.sentence.clone(),
        Priority::Lexicographic(order) => {
            let words: Vec<&str> = order.iter().map(|a| lexicon.lexicographic.axes[a].as_str()).collect();
            lexicon.lexicographic.sentence.replace("{order}", &words.join(", then "))
        }
    };
    [fairness, privacy, performance, priority].join(" ")
}

/// Privacy sentence for a certified ε (`None` for non-private).
pub fn privacy_sentence(epsilon: Option<f64>, lexicon: &IntentLexicon) -> String {
    let Some(e) = epsilon else {
        return lexicon.no_privacy_sentence.clone();
    };
    let mut ds: Vec<_> = lexicon.privacy_descriptors.iter().collect();
    ds.sort_by(|a, b| a.band[1].total_cmp(&b.band[1]));
    ds.iter()
        .find(|d| e <= d.band[1] + 1e-9)
        .map_or_else(|| lexicon.weak_privacy_sentence.clone(), |d| d.sentence.clone())
}

/// Plain-language summary of what a trained point achieved.
pub fn render_point(p: &FrontierPoint, criterion: ConstraintKind, metric: MetricName, lexicon: &IntentLexicon) -> String {
    let mut out = Vec::new();
    let achieved = p.achieved.as_ref();
    match achieved.and_then(|a| a.disparity(criterion)) {
        Some(d) => out.push(lexicon.intent(criterion).point_template.replace("{delta}", &percentage_points(d))),
        None => out.push(format!("Disparity under {} could not be measured on held-out data.", criterion.name())),
    }
    let eps = p.certified_budget.epsilon();
    out.push(privacy_sentence(eps, lexicon));
    if let Some(e) = eps {
        out.push(format!("Certified privacy budget: epsilon {}.", trim_number(e, 2)));
    }
    if let Some(v) = achieved.and_then(|a| a.mean(metric.name())) {
        out.push(
            lexicon
                .point_performance_template
                .replace("{Metric}", metric_display(metric))
                .replace("{value}", &percent(v)),
        );
    }
    if let Some(dir) = achieved.and_then(|a| a.dir) {
        let verdict = if dir.mean >= 0.8 { "yes" } else { "no" };
        out.push(lexicon.dir_template.replace("{verdict}", verdict).replace("{ratio}", &trim_number(dir.mean, 2)));
    }
    out.join(" ")
}
