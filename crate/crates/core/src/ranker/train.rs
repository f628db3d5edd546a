use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::network::{loss_and_gradient, SiameseNetwork};
use super::{pairwise_accuracy, PairExample};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Stop once validation error has exceeded training error for more than
    /// this many consecutive epochs.
    pub patience: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.01,
            momentum: 0.9,
            batch_size: 512,
            max_epochs: 10,
            patience: 3,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid("learning rate must be finite and non-negative"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::invalid("momentum must lie in [0, 1)"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch size must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_error: f64,
    pub val_error: f64,
    pub mean_loss: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub network: SiameseNetwork,
    pub history: Vec<EpochMetrics>,
    /// Epoch whose end-of-epoch parameters were returned. `None` means no
    /// epoch had training error at or above validation error and the final
    /// parameters were kept.
    pub selected_epoch: Option<usize>,
}

/// Mini-batch SGD with momentum (`v ← ρv − λg`, `θ ← θ + v`).
///
/// Errors are misclassification rates at the 0.5 threshold, measured on the
/// full training and validation sets after every epoch. Training stops when
/// validation error has exceeded training error for more than `patience`
/// consecutive epochs, and the returned parameters come from the latest epoch
/// where training error did not fall below validation error.
pub fn train(
    mut net: SiameseNetwork,
    train_set: &[PairExample],
    validation_set: &[PairExample],
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_set.is_empty() || validation_set.is_empty() {
        return Err(Error::Empty("training and validation sets must be non-empty"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut velocity = net.zeros_like();
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut history = Vec::new();
    let mut selected: Option<(usize, SiameseNetwork)> = None;
    let mut overfit_streak = 0usize;
    let mut batch = Vec::with_capacity(cfg.batch_size);

    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut steps = 0usize;
        for (step, chunk) in order.chunks(cfg.batch_size).enumerate() {
            batch.clear();
            batch.extend(chunk.iter().map(|&i| train_set[i].clone()));
            let (loss, grad) = loss_and_gradient(&net, &batch)?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    step,
                    loss,
                    snapshot: Box::new(net),
                });
            }
            for ((theta, v), g) in net
                .params_mut()
                .zip(velocity.params_mut())
                .zip(grad.params())
            {
                *v = cfg.momentum * *v - cfg.learning_rate * g;
                *theta += *v;
            }
            loss_sum += loss;
            steps += 1;
        }
        if !net.is_finite() {
            return Err(Error::Numerical(format!("non-finite parameters after epoch {epoch}")));
        }

        let train_error = 1.0 - pairwise_accuracy(&net, train_set)?;
        let val_error = 1.0 - pairwise_accuracy(&net, validation_set)?;
        history.push(EpochMetrics {
            epoch,
            train_error,
            val_error,
            mean_loss: loss_sum / steps as f64,
        });

        if train_error >= val_error {
            selected = Some((epoch, net.clone()));
            overfit_streak = 0;
        } else {
            overfit_streak += 1;
            if overfit_streak > cfg.patience {
                break;
            }
        }
    }

    let (selected_epoch, network) = match selected {
        Some((e, n)) => (Some(e), n),
        None => (None, net),
    };
    Ok(TrainOutcome {
        network,
        history,
        selected_epoch,
    })
}

/// `(epoch, train_error, val_error, mean_loss)` CSV.
pub fn write_training_log<W: Write>(writer: W, history: &[EpochMetrics]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    for m in history {
        wtr.serialize(m)?;
    }
    wtr.flush().map_err(|e| Error::io("<training log>", e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ranker::FeatureVector;
    use rand::Rng;

    fn fv(good: bool, rng: &mut ChaCha8Rng) -> FeatureVector {
        let jitter = rng.random::<f64>() * 0.1;
        FeatureVector {
            padded_probabilities: if good { vec![0.9 - jitter, 0.1 + jitter] } else { vec![0.1 + jitter, 0.9 - jitter] },
            confidence_norm: if good { 1.0 - jitter } else { jitter },
            past_brier: if good { 0.1 + jitter } else { 1.5 - jitter },
            log_prior_count: 1.0,
            topic: vec![0.5, 0.5],
        }
    }

    /// Pairs of a good and a bad forecast: separable by confidence alone.
    fn separable(n: usize, seed: u64) -> Vec<PairExample> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let (g, b) = (fv(true, &mut rng), fv(false, &mut rng));
                if rng.random::<bool>() {
                    PairExample { features_a: g, features_b: b, label: 1 }
                } else {
                    PairExample { features_a: b, features_b: g, label: 0 }
                }
            })
            .collect()
    }

    fn init(seed: u64) -> SiameseNetwork {
        SiameseNetwork::glorot(7, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    #[test]
    fn zero_learning_rate_keeps_parameters() {
        let data = separable(64, 1);
        let net = init(2);
        let cfg = TrainConfig { learning_rate: 0.0, max_epochs: 3, batch_size: 16, ..Default::default() };
        let out = train(net.clone(), &data, &data, &cfg).unwrap();
        assert_eq!(out.network, net);
    }

    #[test]
    fn separable_fixture_is_learned() {
        let data = separable(600, 3);
        let val = separable(200, 4);
        let cfg = TrainConfig { batch_size: 32, max_epochs: 20, seed: 5, ..Default::default() };
        let out = train(init(6), &data, &val, &cfg).unwrap();
        let acc = pairwise_accuracy(&out.network, &data).unwrap();
        assert!(acc >= 0.95, "accuracy {acc}, history {:?}", out.history);
    }

    #[test]
    fn deterministic_given_seed() {
        let data = separable(200, 7);
        let cfg = TrainConfig { batch_size: 16, max_epochs: 3, seed: 9, ..Default::default() };
        let a = train(init(1), &data, &data[..50], &cfg).unwrap();
        let b = train(init(1), &data, &data[..50], &cfg).unwrap();
        assert_eq!(a.network, b.network);
        assert_eq!(a.history, b.history);
    }

    #[test]
    fn rejects_bad_config_and_empty_sets() {
        let data = separable(4, 1);
        let bad = TrainConfig { momentum: 1.0, ..Default::default() };
        assert!(train(init(1), &data, &data, &bad).is_err());
        assert!(train(init(1), &[], &data, &TrainConfig::default()).is_err());
    }

    #[test]
    fn diverging_run_reports_snapshot() {
        let data = separable(64, 1);
        let cfg = TrainConfig { learning_rate: 1e200, batch_size: 8, max_epochs: 5, ..Default::default() };
        match train(init(3), &data, &data, &cfg) {
            Err(Error::NonFiniteLoss { snapshot, .. }) => assert_eq!(snapshot.input_dim, 7),
            Err(Error::Numerical(_)) => {}
            other => panic!("expected divergence, got {:?}", other.map(|o| o.history)),
        }
    }

    #[test]
    fn log_csv() {
        let h = vec![EpochMetrics { epoch: 1, train_error: 0.25, val_error: 0.5, mean_loss: 0.6 }];
        let mut buf = Vec::new();
        write_training_log(&mut buf, &h).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "epoch,train_error,val_error,mean_loss\n1,0.25,0.5,0.6\n"
        );
    }
}
