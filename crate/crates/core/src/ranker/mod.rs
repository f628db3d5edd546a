//! Siamese comparator: features, pair construction, network and training.

mod checkpoint;
mod network;
mod train;

use chrono::NaiveDate;
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::aggregate;
use crate::corpus::{ForecastRecord, ForecasterStats, Question, StatsProvider};
use crate::error::{Error, Result};
use crate::topics::TopicVector;

pub use checkpoint::{Checkpoint, FeatureConfig, TrainingMeta, CHECKPOINT_VERSION};
pub use network::{
    batch_loss, gradient, logistic, loss, loss_and_gradient, Dense, Gradient, SiameseNetwork,
    BRANCH_DEPTH, BRANCH_WIDTH, HEAD_DEPTH, HEAD_WIDTH,
};
pub use train::{train, write_training_log, EpochMetrics, TrainConfig, TrainOutcome};

/// Default option capacity of the input layer.
pub const DEFAULT_R_MAX: usize = 5;

/// Two forecasts whose scores differ by no more than this are a tie.
pub const TIE_TOLERANCE: f64 = 1e-9;

/// One branch input: a forecast, forecaster metadata and the question's
/// topic vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub padded_probabilities: Vec<f64>,
    pub confidence_norm: f64,
    pub past_brier: f64,
    pub log_prior_count: f64,
    pub topic: Vec<f64>,
}

impl FeatureVector {
    pub fn dim(&self) -> usize {
        self.padded_probabilities.len() + 3 + self.topic.len()
    }

    pub fn to_input(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.dim());
        v.extend_from_slice(&self.padded_probabilities);
        v.push(self.confidence_norm);
        v.push(self.past_brier);
        v.push(self.log_prior_count);
        v.extend_from_slice(&self.topic);
        v
    }
}

pub fn build_features(
    record: &ForecastRecord,
    stats: &ForecasterStats,
    topic: &TopicVector,
    r_max: usize,
) -> Result<FeatureVector> {
    let r = record.probabilities.len();
    if r > r_max {
        return Err(Error::OptionCapacity { options: r, r_max });
    }
    let mut padded = record.probabilities.clone();
    padded.resize(r_max, 0.0);
    Ok(FeatureVector {
        padded_probabilities: padded,
        confidence_norm: (f64::from(record.confidence) - 1.0) / 4.0,
        past_brier: stats.mean_past_brier,
        log_prior_count: f64::from(stats.prior_forecast_count).ln_1p(),
        topic: topic.proportions().to_vec(),
    })
}

/// Labeled comparison; `label == 1` means forecast A is strictly closer to
/// the realized outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairExample {
    pub features_a: FeatureVector,
    pub features_b: FeatureVector,
    pub label: u8,
}

impl PairExample {
    /// Same comparison with the branches exchanged and the label flipped.
    pub fn swapped(&self) -> Self {
        PairExample {
            features_a: self.features_b.clone(),
            features_b: self.features_a.clone(),
            label: 1 - self.label,
        }
    }
}

/// Builds labeled pairs from every two forecasts (any revision) made by
/// distinct forecasters on a resolved question. Ties are dropped; at most
/// `sample_budget` pairs are kept, sampled uniformly without replacement, and
/// each kept pair's orientation is a seeded coin flip.
///
/// Forecaster metadata is taken as of each record's own date.
pub fn make_pairs(
    question: &Question,
    records: &[ForecastRecord],
    stats: &impl StatsProvider,
    topic: &TopicVector,
    r_max: usize,
    sample_budget: Option<usize>,
    seed: u64,
) -> Result<Vec<PairExample>> {
    let outcome = question.outcome()?;
    let usable: Vec<&ForecastRecord> = records
        .iter()
        .filter(|r| r.question_id == question.id && question.in_window(r.timestamp))
        .collect();
    let scores: Vec<f64> = usable
        .iter()
        .map(|r| aggregate::question_score(question, &r.probabilities, outcome))
        .collect();

    let mut candidates: Vec<(usize, usize)> = Vec::new();
    for i in 0..usable.len() {
        for j in (i + 1)..usable.len() {
            if usable[i].forecaster_id != usable[j].forecaster_id
                && (scores[i] - scores[j]).abs() > TIE_TOLERANCE
            {
                candidates.push((i, j));
            }
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let chosen: Vec<(usize, usize)> = match sample_budget {
        Some(k) if k < candidates.len() => index::sample(&mut rng, candidates.len(), k)
            .into_iter()
            .map(|c| candidates[c])
            .collect(),
        _ => candidates,
    };

    let mut features: Vec<Option<FeatureVector>> = vec![None; usable.len()];
    let mut feature_of = |i: usize| -> Result<FeatureVector> {
        if features[i].is_none() {
            let r = usable[i];
            let s = stats.stats(&r.forecaster_id, r.date());
            features[i] = Some(build_features(r, &s, topic, r_max)?);
        }
        Ok(features[i].clone().expect("just filled"))
    };

    let mut out = Vec::with_capacity(chosen.len());
    for (i, j) in chosen {
        let (a, b) = if rng.random::<bool>() { (i, j) } else { (j, i) };
        out.push(PairExample {
            features_a: feature_of(a)?,
            features_b: feature_of(b)?,
            label: u8::from(scores[a] < scores[b]),
        });
    }
    Ok(out)
}

/// Fraction of pairs where `p > 0.5` agrees with the label. `p == 0.5` is
/// always counted as wrong.
pub fn pairwise_accuracy(net: &SiameseNetwork, pairs: &[PairExample]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::Empty("no labeled pairs"));
    }
    let mut correct = 0usize;
    for pair in pairs {
        let p = net.forward(pair)?;
        let right = (pair.label == 1 && p > 0.5) || (pair.label == 0 && p < 0.5);
        correct += usize::from(right);
    }
    Ok(correct as f64 / pairs.len() as f64)
}

/// Constant stats for every forecaster; handy when no history exists.
#[derive(Debug, Clone, Copy, Default)]
pub struct NoHistory;

impl StatsProvider for NoHistory {
    fn stats(&self, forecaster_id: &str, as_of: NaiveDate) -> ForecasterStats {
        ForecasterStats::cold_start(forecaster_id, as_of)
    }
}
