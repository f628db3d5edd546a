//! Topic modelling over question text.

mod lda;
mod tokenize;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use lda::{
    fit_lda, full_conditional_weight, topic_vector, LdaConfig, LdaModel, LdaSampler,
    LDA_FORMAT_VERSION,
};
pub use tokenize::{is_stopword, tokenize, STOPWORDS};

/// Point on the topic simplex.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicVector(Vec<f64>);

impl TopicVector {
    pub fn new(proportions: Vec<f64>) -> Result<Self> {
        let sum: f64 = proportions.iter().sum();
        if proportions.is_empty()
            || proportions.iter().any(|p| p.is_nan() || *p < 0.0)
            || (sum - 1.0).abs() > 1e-9
        {
            return Err(Error::invalid("topic vector must lie on the simplex"));
        }
        Ok(TopicVector(proportions))
    }

    pub fn uniform(num_topics: usize) -> Self {
        TopicVector(vec![1.0 / num_topics as f64; num_topics])
    }

    pub(crate) fn from_counts(counts: &[usize]) -> Self {
        let n: usize = counts.iter().sum();
        TopicVector(counts.iter().map(|&c| c as f64 / n as f64).collect())
    }

    pub fn proportions(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn dominant(&self) -> usize {
        self.0
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map_or(0, |(k, _)| k)
    }
}
