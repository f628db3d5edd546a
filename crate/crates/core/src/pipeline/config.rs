use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use super::{ComparatorSettings, EvalSettings, TournamentInput};
use crate::aggregate::{BrierMode, Cutoff};
use crate::corpus::ForecastSchema;
use crate::error::{Error, Result};
use crate::ranker::{TrainConfig, DEFAULT_R_MAX};
use crate::synth::SynthConfig;
use crate::topics::LdaConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ForecastLayout {
    /// `p0, p1, ...` columns.
    #[default]
    Wide,
    /// `option_index, value` rows.
    Long,
}

/// Flat run configuration. Every key has a default, so `{}` is a valid file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub questions_path: PathBuf,
    pub forecasts_path: PathBuf,
    pub forecast_layout: ForecastLayout,
    pub lda_model_path: PathBuf,
    pub checkpoint_path: PathBuf,
    pub output_dir: PathBuf,

    pub num_topics: usize,
    /// Defaults to `50 / num_topics`.
    pub lda_alpha: Option<f64>,
    pub lda_beta: f64,
    pub lda_iterations: usize,
    pub fold_in_iterations: usize,

    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    /// Pairs sampled per training question; `null` keeps every pair.
    pub sample_budget: Option<usize>,
    pub r_max: usize,
    /// Share of resolved questions, oldest first, used for training.
    pub train_fraction: f64,
    /// Trailing training questions held out for early stopping.
    pub validation_questions: usize,

    pub cutoffs: Vec<Cutoff>,
    pub rank_once: bool,
    pub brier_mode: BrierMode,
    pub tournament_input: TournamentInput,
    pub dump_matrices: bool,

    pub synth_forecasters: usize,
    pub synth_questions: usize,
    pub synth_skill_spread: f64,
    pub synth_noise: f64,

    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let synth = SynthConfig::default();
        let train = TrainConfig::default();
        PipelineConfig {
            questions_path: "data/questions.csv".into(),
            forecasts_path: "data/forecasts.csv".into(),
            forecast_layout: ForecastLayout::Wide,
            lda_model_path: "models/lda.json".into(),
            checkpoint_path: "models/comparator.json".into(),
            output_dir: "runs".into(),
            num_topics: 6,
            lda_alpha: None,
            lda_beta: 0.01,
            lda_iterations: 1000,
            fold_in_iterations: 100,
            learning_rate: train.learning_rate,
            momentum: train.momentum,
            batch_size: train.batch_size,
            max_epochs: train.max_epochs,
            patience: train.patience,
            sample_budget: Some(1500),
            r_max: DEFAULT_R_MAX,
            train_fraction: 0.5,
            validation_questions: 2,
            cutoffs: [10.0, 20.0, 30.0, 50.0, 100.0].map(|c| Cutoff::new(c).unwrap()).to_vec(),
            rank_once: false,
            brier_mode: BrierMode::Aggregate,
            tournament_input: TournamentInput::Latest,
            dump_matrices: false,
            synth_forecasters: synth.n_forecasters,
            synth_questions: synth.n_questions,
            synth_skill_spread: synth.skill_spread,
            synth_noise: synth.noise,
            seed: 42,
        }
    }
}

impl PipelineConfig {
    /// Reads `path` (if any) and applies `key=value` overrides. Values are
    /// parsed as JSON, falling back to a plain string.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut doc = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                serde_json::from_str::<Value>(&text)
                    .map_err(|e| Error::Usage(format!("{}: {e}", p.display())))?
            }
            None => Value::Object(Default::default()),
        };
        let Value::Object(map) = &mut doc else {
            return Err(Error::Usage("config must be a JSON object".into()));
        };
        for o in overrides {
            let (key, raw) = o
                .split_once('=')
                .ok_or_else(|| Error::Usage(format!("override `{o}` is not key=value")))?;
            let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
            map.insert(key.trim().to_string(), value);
        }
        let cfg: PipelineConfig = serde_json::from_value(doc).map_err(|e| Error::Usage(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.cutoffs.is_empty() {
            return Err(Error::Usage("cutoffs must not be empty".into()));
        }
        if self.num_topics == 0 || self.r_max < 2 {
            return Err(Error::Usage("num_topics must be ≥ 1 and r_max ≥ 2".into()));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::Usage("train_fraction must lie in (0, 1)".into()));
        }
        self.train_config().validate().map_err(|e| Error::Usage(e.to_string()))?;
        self.synth_config().validate().map_err(|e| Error::Usage(e.to_string()))
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn digest(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(bytes))
    }

    pub fn schema(&self) -> ForecastSchema {
        match self.forecast_layout {
            ForecastLayout::Wide => ForecastSchema::default(),
            ForecastLayout::Long => ForecastSchema::long(),
        }
    }

    pub fn lda_config(&self) -> LdaConfig {
        let mut cfg = LdaConfig::with_topics(self.num_topics);
        if let Some(a) = self.lda_alpha {
            cfg.alpha = a;
        }
        cfg.beta = self.lda_beta;
        cfg.iterations = self.lda_iterations;
        cfg.seed = super::derive_seed(self.seed, "lda", 0);
        cfg
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            momentum: self.momentum,
            batch_size: self.batch_size,
            max_epochs: self.max_epochs,
            patience: self.patience,
            seed: self.seed,
        }
    }

    pub fn comparator_settings(&self) -> ComparatorSettings {
        ComparatorSettings {
            r_max: self.r_max,
            num_topics: self.num_topics,
            sample_budget: self.sample_budget,
            train: self.train_config(),
        }
    }

    pub fn eval_settings(&self) -> EvalSettings {
        EvalSettings {
            cutoffs: self.cutoffs.clone(),
            rank_once: self.rank_once,
            brier_mode: self.brier_mode,
            tournament_input: self.tournament_input,
            r_max: self.r_max,
            seed: self.seed,
        }
    }

    pub fn synth_config(&self) -> SynthConfig {
        SynthConfig {
            n_forecasters: self.synth_forecasters,
            n_questions: self.synth_questions,
            n_topics: self.num_topics,
            skill_spread: self.synth_skill_spread,
            noise: self.synth_noise,
            seed: self.seed,
            ..SynthConfig::default()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_object_gives_defaults() {
        let cfg = PipelineConfig::load(None, &[]).unwrap();
        assert_eq!(cfg, PipelineConfig::default());
    }

    #[test]
    fn overrides_parse_as_json_then_string() {
        let cfg = PipelineConfig::load(
            None,
            &[
                "seed=7".into(),
                "cutoffs=[25, 100]".into(),
                "output_dir=out/x".into(),
                "brier_mode=mean_individual".into(),
                "sample_budget=null".into(),
            ],
        )
        .unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.cutoffs.iter().map(|c| c.percent()).collect::<Vec<_>>(), vec![25.0, 100.0]);
        assert_eq!(cfg.output_dir, PathBuf::from("out/x"));
        assert_eq!(cfg.brier_mode, BrierMode::MeanIndividual);
        assert_eq!(cfg.sample_budget, None);
    }

    #[test]
    fn bad_keys_and_values_are_usage_errors() {
        for bad in ["nope=1", "cutoffs=[0]", "cutoffs=[150]", "momentum=1.5", "seed"] {
            let err = PipelineConfig::load(None, &[bad.to_string()]).unwrap_err();
            assert_eq!(err.exit_code(), 1, "{bad}: {err}");
        }
    }

    #[test]
    fn digest_tracks_content() {
        let a = PipelineConfig::default();
        let mut b = a.clone();
        assert_eq!(a.digest(), b.digest());
        b.seed += 1;
        assert_ne!(a.digest(), b.digest());
    }
}
