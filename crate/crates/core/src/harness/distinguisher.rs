//! Threshold classifiers over snapshot features and rank tests per feature.
//!
//! The classifier family is fixed: one threshold per feature, plus a
//! majority vote among the features whose train samples differ at
//! p < 0.01. Whichever scores best on the train split is scored once on
//! the held-out split.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ContinuousCDF, Normal};
use thiserror::Error;

use super::features::{TrialResult, FEATURE_COUNT, FEATURE_NAMES};
use super::scenario::Variant;

pub const MIN_TRIALS_PER_VARIANT: usize = 50;
const VOTE_ALPHA: f64 = 0.01;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DistinguishError {
    #[error("need at least {needed} trials per variant, got {with_hidden} with and {without_hidden} without hidden writes")]
    TooFewTrials { needed: usize, with_hidden: usize, without_hidden: usize },
    #[error("train fraction must lie strictly between 0 and 1")]
    BadSplit,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Split {
    pub train_fraction: f64,
    pub seed: u64,
}

impl Default for Split {
    fn default() -> Self {
        Self { train_fraction: 0.5, seed: 0 }
    }
}

/// Predicts `WithHidden` when `x > threshold` (or `<` if `above` is false).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Threshold {
    pub feature: usize,
    pub threshold: f64,
    pub above: bool,
}

impl Threshold {
    fn predict(&self, t: &TrialResult) -> bool {
        let x = t.features.0[self.feature];
        if self.above {
            x > self.threshold
        } else {
            x < self.threshold
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Classifier {
    Single(Threshold),
    Vote(Vec<Threshold>),
}

impl Classifier {
    pub fn predict(&self, t: &TrialResult) -> bool {
        match self {
            Classifier::Single(th) => th.predict(t),
            Classifier::Vote(ths) => 2 * ths.iter().filter(|th| th.predict(t)).count() > ths.len(),
        }
    }

    pub fn describe(&self) -> String {
        match self {
            Classifier::Single(th) => format!("threshold:{}", FEATURE_NAMES[th.feature]),
            Classifier::Vote(ths) => format!("vote:{}", ths.iter().map(|t| FEATURE_NAMES[t.feature]).collect::<Vec<_>>().join("+")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DistinguisherReport {
    pub trials: usize,
    pub train: usize,
    pub test: usize,
    pub classifier: Classifier,
    pub train_accuracy: f64,
    /// Held-out accuracy.
    pub accuracy: f64,
    pub advantage: f64,
    /// Two-sided Mann-Whitney p-value per feature over all trials.
    pub p_values: [f64; FEATURE_COUNT],
}

impl DistinguisherReport {
    /// Flat `key=value` lines.
    pub fn to_kv(&self) -> String {
        let mut s = format!(
            "trials={}\ntrain={}\ntest={}\nclassifier={}\ntrain_accuracy={:.6}\naccuracy={:.6}\nadvantage={:.6}\n",
            self.trials,
            self.train,
            self.test,
            self.classifier.describe(),
            self.train_accuracy,
            self.accuracy,
            self.advantage
        );
        for (n, p) in FEATURE_NAMES.iter().zip(self.p_values) {
            s.push_str(&format!("p_{n}={p:.6e}\n"));
        }
        s
    }
}

fn is_hidden(t: &TrialResult) -> bool {
    t.variant == Variant::WithHidden
}

/// Midranks of `values`, ties averaged, plus the tie term Σ(t³ − t).
fn ranks(values: &[f64]) -> (Vec<f64>, f64) {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut r = vec![0.0; values.len()];
    let mut ties = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let mid = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            r[k] = mid;
        }
        let t = (j - i + 1) as f64;
        ties += t * t * t - t;
        i = j + 1;
    }
    (r, ties)
}

/// Two-sided Mann-Whitney U test, normal approximation with tie and
/// continuity correction. Returns 1 when either sample is empty or all
/// values tie.
pub fn mann_whitney(a: &[f64], b: &[f64]) -> f64 {
    let (n1, n2) = (a.len() as f64, b.len() as f64);
    if a.is_empty() || b.is_empty() {
        return 1.0;
    }
    let all: Vec<f64> = a.iter().chain(b).copied().collect();
    let (r, ties) = ranks(&all);
    let r1: f64 = r[..a.len()].iter().sum();
    let u = r1 - n1 * (n1 + 1.0) / 2.0;
    let n = n1 + n2;
    let var = n1 * n2 / 12.0 * ((n + 1.0) - ties / (n * (n - 1.0)));
    if var <= 0.0 {
        return 1.0;
    }
    let d = (u - n1 * n2 / 2.0).abs();
    let z = (d - 0.5).max(0.0) / var.sqrt();
    let normal = Normal::new(0.0, 1.0).unwrap();
    (2.0 * (1.0 - normal.cdf(z))).clamp(0.0, 1.0)
}

fn column(trials: &[&TrialResult], j: usize, hidden: bool) -> Vec<f64> {
    trials.iter().filter(|t| is_hidden(t) == hidden).map(|t| t.features.0[j]).collect()
}

/// Best threshold for feature `j` on `train`, with its train accuracy.
fn fit_threshold(train: &[&TrialResult], j: usize) -> (Threshold, f64) {
    let mut pts: Vec<(f64, bool)> = train.iter().map(|t| (t.features.0[j], is_hidden(t))).collect();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    let n = pts.len();
    let pos_total = pts.iter().filter(|p| p.1).count();
    // Cut below everything: all predicted hidden under `above`.
    let mut best = (Threshold { feature: j, threshold: f64::NEG_INFINITY, above: true }, pos_total);
    let mut pos_below = 0;
    let mut i = 0;
    while i < n {
        let v = pts[i].0;
        while i < n && pts[i].0 == v {
            pos_below += pts[i].1 as usize;
            i += 1;
        }
        let neg_below = i - pos_below;
        let cut = if i < n { (v + pts[i].0) / 2.0 } else { f64::INFINITY };
        let above_correct = neg_below + (pos_total - pos_below);
        let below_correct = n - above_correct;
        if above_correct > best.1 {
            best = (Threshold { feature: j, threshold: cut, above: true }, above_correct);
        }
        if below_correct > best.1 {
            best = (Threshold { feature: j, threshold: cut, above: false }, below_correct);
        }
    }
    (best.0, best.1 as f64 / n.max(1) as f64)
}

fn accuracy(c: &Classifier, set: &[&TrialResult]) -> f64 {
    if set.is_empty() {
        return 0.5;
    }
    set.iter().filter(|t| c.predict(t) == is_hidden(t)).count() as f64 / set.len() as f64
}

/// Splits by trial index so both halves of a pair land on the same side.
fn split<'a>(trials: &'a [TrialResult], split: Split) -> (Vec<&'a TrialResult>, Vec<&'a TrialResult>) {
    let mut ids: Vec<usize> = trials.iter().map(|t| t.trial).collect();
    ids.sort_unstable();
    ids.dedup();
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(split.seed));
    let cut = ((ids.len() as f64) * split.train_fraction).round() as usize;
    let train_ids: std::collections::HashSet<usize> = ids[..cut].iter().copied().collect();
    trials.iter().partition(|t| train_ids.contains(&t.trial))
}

pub fn distinguish(trials: &[TrialResult], sp: Split) -> Result<DistinguisherReport, DistinguishError> {
    if !(sp.train_fraction > 0.0 && sp.train_fraction < 1.0) {
        return Err(DistinguishError::BadSplit);
    }
    let with_hidden = trials.iter().filter(|t| is_hidden(t)).count();
    let without_hidden = trials.len() - with_hidden;
    if with_hidden < MIN_TRIALS_PER_VARIANT || without_hidden < MIN_TRIALS_PER_VARIANT {
        return Err(DistinguishError::TooFewTrials { needed: MIN_TRIALS_PER_VARIANT, with_hidden, without_hidden });
    }
    let (train, test) = split(trials, sp);
    let all: Vec<&TrialResult> = trials.iter().collect();

    let fits: Vec<(Threshold, f64)> = (0..FEATURE_COUNT).map(|j| fit_threshold(&train, j)).collect();
    let (best_single, _) = fits
        .iter()
        .copied()
        .fold(None::<(Threshold, f64)>, |acc, f| match acc {
            Some(a) if a.1 >= f.1 => Some(a),
            _ => Some(f),
        })
        .unwrap();
    let mut classifier = Classifier::Single(best_single);
    let mut train_accuracy = accuracy(&classifier, &train);
    let voters: Vec<Threshold> = (0..FEATURE_COUNT)
        .filter(|&j| mann_whitney(&column(&train, j, true), &column(&train, j, false)) < VOTE_ALPHA)
        .map(|j| fits[j].0)
        .collect();
    if voters.len() >= 3 {
        let vote = Classifier::Vote(voters);
        let acc = accuracy(&vote, &train);
        if acc > train_accuracy {
            classifier = vote;
            train_accuracy = acc;
        }
    }

    let acc = accuracy(&classifier, &test);
    let mut p_values = [1.0; FEATURE_COUNT];
    for (j, p) in p_values.iter_mut().enumerate() {
        *p = mann_whitney(&column(&all, j, true), &column(&all, j, false));
    }
    Ok(DistinguisherReport {
        trials: trials.len(),
        train: train.len(),
        test: test.len(),
        classifier,
        train_accuracy,
        accuracy: acc,
        advantage: (acc - 0.5).abs(),
        p_values,
    })
}
