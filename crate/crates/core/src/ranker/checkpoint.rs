use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::network::SiameseNetwork;
use crate::error::{Error, Result};

pub const CHECKPOINT_VERSION: u32 = 1;

/// Input layout the network was trained against.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureConfig {
    pub r_max: usize,
    pub num_topics: usize,
    pub features: Vec<String>,
}

impl FeatureConfig {
    pub fn new(r_max: usize, num_topics: usize) -> Self {
        let mut features: Vec<String> = (0..r_max).map(|i| format!("p{i}")).collect();
        features.extend(["confidence_norm", "past_brier", "log_prior_count"].map(String::from));
        features.extend((0..num_topics).map(|k| format!("topic{k}")));
        FeatureConfig {
            r_max,
            num_topics,
            features,
        }
    }

    pub fn dim(&self) -> usize {
        self.r_max + 3 + self.num_topics
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub seed: u64,
    pub epochs_run: usize,
    pub selected_epoch: Option<usize>,
    pub final_train_error: f64,
    pub final_val_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub feature_config: FeatureConfig,
    pub training: TrainingMeta,
    pub network: SiameseNetwork,
}

impl Checkpoint {
    pub fn new(feature_config: FeatureConfig, training: TrainingMeta, network: SiameseNetwork) -> Result<Self> {
        if network.input_dim != feature_config.dim() {
            return Err(Error::DimensionMismatch {
                expected: feature_config.dim(),
                actual: network.input_dim,
            });
        }
        Ok(Checkpoint {
            format_version: CHECKPOINT_VERSION,
            feature_config,
            training,
            network,
        })
    }

    pub fn write<W: Write>(&self, writer: W) -> Result<()> {
        serde_json::to_writer_pretty(writer, self)?;
        Ok(())
    }

    pub fn read<R: Read>(reader: R) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_reader(reader)?;
        if ck.format_version != CHECKPOINT_VERSION {
            return Err(Error::invalid(format!(
                "unsupported checkpoint version {}",
                ck.format_version
            )));
        }
        let net = &ck.network;
        let layers_ok = net.layers().all(|l| {
            l.weights.len() == l.inputs * l.outputs && l.bias.len() == l.outputs
        });
        if !layers_ok || net.input_dim != ck.feature_config.dim() {
            return Err(Error::invalid("checkpoint layer shapes are inconsistent"));
        }
        Ok(ck)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn json_round_trip_is_exact() {
        let fc = FeatureConfig::new(5, 6);
        let net = SiameseNetwork::glorot(fc.dim(), &mut ChaCha8Rng::seed_from_u64(4));
        let meta = TrainingMeta {
            seed: 4,
            epochs_run: 2,
            selected_epoch: Some(1),
            final_train_error: 0.1,
            final_val_error: 0.2,
        };
        let ck = Checkpoint::new(fc, meta, net).unwrap();
        let mut buf = Vec::new();
        ck.write(&mut buf).unwrap();
        assert_eq!(Checkpoint::read(buf.as_slice()).unwrap(), ck);
    }

    #[test]
    fn dimension_checked() {
        let fc = FeatureConfig::new(5, 6);
        let meta = TrainingMeta {
            seed: 0,
            epochs_run: 0,
            selected_epoch: None,
            final_train_error: 0.0,
            final_val_error: 0.0,
        };
        assert!(Checkpoint::new(fc, meta, SiameseNetwork::zeros(3)).is_err());
    }
}
