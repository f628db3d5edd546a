//! Collapsed Gibbs sampling for LDA.

use std::collections::{BTreeSet, HashMap};
use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::TopicVector;
use crate::error::{Error, Result};

pub const LDA_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LdaConfig {
    pub num_topics: usize,
    pub alpha: f64,
    pub beta: f64,
    pub iterations: usize,
    pub seed: u64,
}

impl LdaConfig {
    /// `alpha = 50 / T`, `beta = 0.01`, 1000 sweeps.
    pub fn with_topics(num_topics: usize) -> Self {
        LdaConfig {
            num_topics,
            alpha: 50.0 / num_topics.max(1) as f64,
            beta: 0.01,
            iterations: 1000,
            seed: 0,
        }
    }
}

impl Default for LdaConfig {
    fn default() -> Self {
        Self::with_topics(6)
    }
}

/// Unnormalized full conditional of topic `k` for one token:
/// `(n_wk + β) / (n_k + Mβ) · (n_dk + α)`, all counts excluding the token.
pub fn full_conditional_weight(
    word_topic_count: f64,
    topic_count: f64,
    vocab_size: usize,
    beta: f64,
    doc_topic_count: f64,
    alpha: f64,
) -> f64 {
    (word_topic_count + beta) / (topic_count + vocab_size as f64 * beta) * (doc_topic_count + alpha)
}

fn draw(weights: &[f64], rng: &mut impl Rng) -> usize {
    let total: f64 = weights.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (k, w) in weights.iter().enumerate() {
        if u < *w {
            return k;
        }
        u -= w;
    }
    weights.len() - 1
}

/// Sampler state. Exposed so callers can step sweeps and inspect the count
/// tables between them.
#[derive(Debug, Clone)]
pub struct LdaSampler {
    cfg: LdaConfig,
    vocabulary: Vec<String>,
    docs: Vec<Vec<usize>>,
    assignments: Vec<Vec<usize>>,
    /// `[word * T + topic]`
    word_topic: Vec<u32>,
    topic: Vec<u32>,
    doc_topic: Vec<Vec<u32>>,
    rng: ChaCha8Rng,
    sweeps: usize,
}

impl LdaSampler {
    pub fn new(documents: &[Vec<String>], cfg: &LdaConfig) -> Result<Self> {
        if cfg.num_topics == 0 {
            return Err(Error::invalid("LDA needs at least one topic"));
        }
        if !(cfg.alpha > 0.0 && cfg.beta > 0.0) {
            return Err(Error::invalid("LDA hyperparameters must be positive"));
        }
        if documents.iter().all(Vec::is_empty) {
            return Err(Error::EmptyCorpus);
        }
        let vocabulary: Vec<String> = documents
            .iter()
            .flatten()
            .cloned()
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let lookup: HashMap<&str, usize> = vocabulary
            .iter()
            .enumerate()
            .map(|(i, w)| (w.as_str(), i))
            .collect();
        let docs: Vec<Vec<usize>> = documents
            .iter()
            .map(|d| d.iter().map(|w| lookup[w.as_str()]).collect())
            .collect();

        let t = cfg.num_topics;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut word_topic = vec![0u32; vocabulary.len() * t];
        let mut topic = vec![0u32; t];
        let mut doc_topic = vec![vec![0u32; t]; docs.len()];
        let assignments: Vec<Vec<usize>> = docs
            .iter()
            .enumerate()
            .map(|(d, words)| {
                words
                    .iter()
                    .map(|&w| {
                        let k = rng.random_range(0..t);
                        word_topic[w * t + k] += 1;
                        topic[k] += 1;
                        doc_topic[d][k] += 1;
                        k
                    })
                    .collect()
            })
            .collect();

        Ok(LdaSampler {
            cfg: cfg.clone(),
            vocabulary,
            docs,
            assignments,
            word_topic,
            topic,
            doc_topic,
            rng,
            sweeps: 0,
        })
    }

    /// One full pass over every token.
    pub fn sweep(&mut self) {
        let t = self.cfg.num_topics;
        let m = self.vocabulary.len();
        let mut weights = vec![0.0; t];
        for d in 0..self.docs.len() {
            for i in 0..self.docs[d].len() {
                let w = self.docs[d][i];
                let old = self.assignments[d][i];
                self.word_topic[w * t + old] -= 1;
                self.topic[old] -= 1;
                self.doc_topic[d][old] -= 1;

                for (k, wk) in weights.iter_mut().enumerate() {
                    *wk = full_conditional_weight(
                        f64::from(self.word_topic[w * t + k]),
                        f64::from(self.topic[k]),
                        m,
                        self.cfg.beta,
                        f64::from(self.doc_topic[d][k]),
                        self.cfg.alpha,
                    );
                }
                let new = draw(&weights, &mut self.rng);

                self.assignments[d][i] = new;
                self.word_topic[w * t + new] += 1;
                self.topic[new] += 1;
                self.doc_topic[d][new] += 1;
            }
        }
        self.sweeps += 1;
    }

    /// Whether every count table equals a recount from the assignments.
    pub fn counts_consistent(&self) -> bool {
        let t = self.cfg.num_topics;
        let mut word_topic = vec![0u32; self.vocabulary.len() * t];
        let mut topic = vec![0u32; t];
        let mut doc_topic = vec![vec![0u32; t]; self.docs.len()];
        for (d, (words, zs)) in self.docs.iter().zip(&self.assignments).enumerate() {
            for (&w, &k) in words.iter().zip(zs) {
                word_topic[w * t + k] += 1;
                topic[k] += 1;
                doc_topic[d][k] += 1;
            }
        }
        word_topic == self.word_topic && topic == self.topic && doc_topic == self.doc_topic
    }

    pub fn sweeps(&self) -> usize {
        self.sweeps
    }

    pub fn into_model(self) -> LdaModel {
        let t = self.cfg.num_topics;
        let m = self.vocabulary.len();
        let topic_word_counts: Vec<Vec<u32>> = (0..t)
            .map(|k| (0..m).map(|w| self.word_topic[w * t + k]).collect())
            .collect();
        let mut model = LdaModel {
            format_version: LDA_FORMAT_VERSION,
            num_topics: t,
            vocabulary: self.vocabulary,
            word_topic: Vec::new(),
            topic_word_counts,
            topic_counts: self.topic,
            alpha: self.cfg.alpha,
            beta: self.cfg.beta,
            iterations: self.sweeps,
            seed: self.cfg.seed,
            documents: self.docs.iter().map(|d| d.iter().map(|&w| w as u32).collect()).collect(),
            assignments: self
                .assignments
                .iter()
                .map(|d| d.iter().map(|&k| k as u32).collect())
                .collect(),
            lookup: HashMap::new(),
        };
        model.rebuild_derived();
        model
    }
}

/// Fitted topic model with its final sampler state.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LdaModel {
    pub format_version: u32,
    pub num_topics: usize,
    pub vocabulary: Vec<String>,
    /// `p(w | t)`, T×M.
    #[serde(skip)]
    pub word_topic: Vec<Vec<f64>>,
    pub topic_word_counts: Vec<Vec<u32>>,
    pub topic_counts: Vec<u32>,
    pub alpha: f64,
    pub beta: f64,
    pub iterations: usize,
    pub seed: u64,
    /// Training documents as vocabulary indices.
    pub documents: Vec<Vec<u32>>,
    /// Final topic assignment of every training token.
    pub assignments: Vec<Vec<u32>>,
    #[serde(skip)]
    lookup: HashMap<String, usize>,
}

impl PartialEq for LdaModel {
    fn eq(&self, other: &Self) -> bool {
        self.num_topics == other.num_topics
            && self.vocabulary == other.vocabulary
            && self.word_topic == other.word_topic
            && self.topic_word_counts == other.topic_word_counts
            && self.topic_counts == other.topic_counts
            && self.alpha == other.alpha
            && self.beta == other.beta
            && self.iterations == other.iterations
            && self.seed == other.seed
            && self.documents == other.documents
            && self.assignments == other.assignments
    }
}

impl LdaModel {
    fn rebuild_derived(&mut self) {
        let m = self.vocabulary.len() as f64;
        self.word_topic = self
            .topic_word_counts
            .iter()
            .zip(&self.topic_counts)
            .map(|(row, &n_k)| {
                let denom = f64::from(n_k) + m * self.beta;
                row.iter().map(|&c| (f64::from(c) + self.beta) / denom).collect()
            })
            .collect();
        self.lookup = self
            .vocabulary
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), i))
            .collect();
    }

    pub fn vocab_size(&self) -> usize {
        self.vocabulary.len()
    }

    pub fn word_index(&self, word: &str) -> Option<usize> {
        self.lookup.get(word).copied()
    }

    /// Proportions of a training document's final assignments.
    pub fn training_topic_vector(&self, doc: usize) -> TopicVector {
        proportions(self.assignments[doc].iter().map(|&k| k as usize), self.num_topics)
    }

    /// The `k` most probable words of every topic.
    pub fn top_words(&self, k: usize) -> Vec<Vec<(String, f64)>> {
        self.word_topic
            .iter()
            .map(|row| {
                let mut idx: Vec<usize> = (0..row.len()).collect();
                idx.sort_by(|&a, &b| row[b].total_cmp(&row[a]).then(a.cmp(&b)));
                idx.into_iter()
                    .take(k)
                    .map(|w| (self.vocabulary[w].clone(), row[w]))
                    .collect()
            })
            .collect()
    }

    pub fn write<W: Write>(&self, writer: W) -> Result<()> {
        serde_json::to_writer(writer, self)?;
        Ok(())
    }

    pub fn read<R: Read>(reader: R) -> Result<Self> {
        let mut model: LdaModel = serde_json::from_reader(reader)?;
        if model.format_version != LDA_FORMAT_VERSION {
            return Err(Error::invalid(format!(
                "unsupported LDA model version {}",
                model.format_version
            )));
        }
        let m = model.vocabulary.len();
        let shapes_ok = model.num_topics >= 1
            && m >= 1
            && model.topic_word_counts.len() == model.num_topics
            && model.topic_counts.len() == model.num_topics
            && model.topic_word_counts.iter().all(|r| r.len() == m);
        if !shapes_ok {
            return Err(Error::invalid("LDA model tables have inconsistent shapes"));
        }
        model.rebuild_derived();
        Ok(model)
    }
}

fn proportions(topics: impl Iterator<Item = usize>, t: usize) -> TopicVector {
    let mut counts = vec![0usize; t];
    let mut n = 0usize;
    for k in topics {
        counts[k] += 1;
        n += 1;
    }
    if n == 0 {
        return TopicVector::uniform(t);
    }
    TopicVector::from_counts(&counts)
}

/// Fits LDA by `cfg.iterations` collapsed Gibbs sweeps.
pub fn fit_lda(documents: &[Vec<String>], cfg: &LdaConfig) -> Result<LdaModel> {
    let mut sampler = LdaSampler::new(documents, cfg)?;
    for _ in 0..cfg.iterations {
        sampler.sweep();
    }
    Ok(sampler.into_model())
}

/// Topic proportions of a document under a fitted model.
///
/// Training documents get their final training assignments. Other documents
/// are folded in by Gibbs sampling with `p(w|t)` held fixed; unknown words are
/// skipped and a document with no known words gets the uniform vector.
pub fn topic_vector(model: &LdaModel, tokens: &[String], fold_in_iterations: usize, seed: u64) -> TopicVector {
    let t = model.num_topics;
    let ids: Vec<usize> = tokens.iter().filter_map(|w| model.word_index(w)).collect();
    if ids.is_empty() {
        return TopicVector::uniform(t);
    }
    if ids.len() == tokens.len() {
        let as_u32: Vec<u32> = ids.iter().map(|&w| w as u32).collect();
        if let Some(d) = model.documents.iter().position(|doc| *doc == as_u32) {
            return model.training_topic_vector(d);
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut z: Vec<usize> = ids.iter().map(|_| rng.random_range(0..t)).collect();
    let mut doc_topic = vec![0u32; t];
    z.iter().for_each(|&k| doc_topic[k] += 1);
    let mut weights = vec![0.0; t];
    for _ in 0..fold_in_iterations {
        for (i, &w) in ids.iter().enumerate() {
            doc_topic[z[i]] -= 1;
            for (k, wk) in weights.iter_mut().enumerate() {
                *wk = model.word_topic[k][w] * (f64::from(doc_topic[k]) + model.alpha);
            }
            z[i] = draw(&weights, &mut rng);
            doc_topic[z[i]] += 1;
        }
    }
    proportions(z.into_iter(), t)
}
