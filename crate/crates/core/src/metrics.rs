//! Presentation-attack metrics: APCER, BPCER, and their mean ACER, plus
//! development-set threshold selection.
//!
//! The positive class is live. A sample is decided live when its score is
//! greater than or equal to the threshold; ties decide live so that equality
//! cases cannot drift between runs.
//!
//! APCER = FP / (TN + FP)   (attacks accepted)
//! BPCER = FN / (TP + FN)   (live rejected)
//! ACER  = (APCER + BPCER) / 2

use serde::{Deserialize, Serialize};

use crate::data::Label;
use crate::error::{Error, Result};

/// Video-level confusion counts. Live is the positive class: `tp`/`fn_` count
/// live videos accepted/rejected, `tn`/`fp` count attacks rejected/accepted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: usize,
    pub fn_: usize,
    pub tn: usize,
    pub fp: usize,
}

/// The three error rates of one evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rates {
    pub apcer: f64,
    pub bpcer: f64,
    pub acer: f64,
}

/// One scored video in an evaluation report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PerVideo {
    pub video_id: String,
    pub score: f64,
    pub label: Label,
    pub decision: Label,
}

/// Full evaluation result, serialized as UTF-8 JSON.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub threshold: f64,
    pub apcer: f64,
    pub bpcer: f64,
    pub acer: f64,
    pub per_video: Vec<PerVideo>,
    /// How the threshold was chosen (the protocol leaves this open; this
    /// artifact minimizes development-set ACER).
    pub threshold_policy: String,
}

pub const THRESHOLD_POLICY_MIN_DEV_ACER: &str = "min_dev_acer";

/// Tally decisions at a threshold. Scores must lie in [0,1].
pub fn confusion(scores: &[(f64, Label)], threshold: f64) -> Result<ConfusionCounts> {
    if scores.is_empty() {
        return Err(Error::EmptyInput("confusion requires at least one sample"));
    }
    let mut counts = ConfusionCounts {
        tp: 0,
        fn_: 0,
        tn: 0,
        fp: 0,
    };
    for &(score, label) in scores {
        let decided_live = score >= threshold;
        match (label, decided_live) {
            (Label::Live, true) => counts.tp += 1,
            (Label::Live, false) => counts.fn_ += 1,
            (Label::Spoof, true) => counts.fp += 1,
            (Label::Spoof, false) => counts.tn += 1,
        }
    }
    Ok(counts)
}

/// Error rates from confusion counts. Both classes must be present.
pub fn rates(counts: &ConfusionCounts) -> Result<Rates> {
    let attacks = counts.tn + counts.fp;
    let live = counts.tp + counts.fn_;
    if attacks == 0 {
        return Err(Error::MissingClass { class: "attack" });
    }
    if live == 0 {
        return Err(Error::MissingClass { class: "live" });
    }
    let apcer = counts.fp as f64 / attacks as f64;
    let bpcer = counts.fn_ as f64 / live as f64;
    Ok(Rates {
        apcer,
        bpcer,
        acer: (apcer + bpcer) / 2.0,
    })
}

/// Pick the threshold minimizing development-set ACER over the candidate set
/// {midpoints of adjacent distinct sorted scores} plus {0, 1}. Ties break
/// toward the smallest threshold.
pub fn select_threshold(dev_scores: &[(f64, Label)]) -> Result<f64> {
    if dev_scores.is_empty() {
        return Err(Error::EmptyInput("select_threshold requires samples"));
    }
    let has_live = dev_scores.iter().any(|&(_, l)| l == Label::Live);
    let has_attack = dev_scores.iter().any(|&(_, l)| l == Label::Spoof);
    if !has_live {
        return Err(Error::MissingClass { class: "live" });
    }
    if !has_attack {
        return Err(Error::MissingClass { class: "attack" });
    }

    let mut sorted: Vec<f64> = dev_scores.iter().map(|&(s, _)| s).collect();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite scores"));
    sorted.dedup();
    let mut candidates = vec![0.0, 1.0];
    candidates.extend(sorted.windows(2).map(|pair| (pair[0] + pair[1]) / 2.0));
    candidates.sort_by(|a, b| a.partial_cmp(b).expect("finite candidates"));

    let mut best = (f64::INFINITY, 0.0);
    for &threshold in &candidates {
        let acer = rates(&confusion(dev_scores, threshold)?)?.acer;
        if acer < best.0 {
            best = (acer, threshold);
        }
    }
    Ok(best.1)
}
