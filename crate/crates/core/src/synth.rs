//! Seeded synthetic crowd with known per-topic forecaster skill.
//!
//! Each question draws a sparse topic mixture and a text sampled from
//! topic-specific pseudo-words, so the topic model has something to find.
//! A forecaster's effective skill on a question is their per-topic skill
//! weighted by the question's mixture; their forecast is the one-hot truth
//! blended toward uniform by `1 - skill`, plus Gaussian jitter.

use std::collections::BTreeMap;
use std::io::Write;

use chrono::{Duration, NaiveDate};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::corpus::{day_start, ForecastRecord, Question};
use crate::error::{Error, Result};
use crate::tournament::Ranking;

const WORDS_PER_TOPIC: usize = 24;
const SYLLABLES: &[&str] = &[
    "ka", "lo", "mi", "ru", "te", "zo", "ba", "ne", "vi", "pu", "sa", "go", "fe", "di", "ho", "ju",
];
const SHARED_WORDS: &[&str] = &[
    "government", "nation", "election", "agreement", "president", "minister", "security",
    "policy", "treaty", "market",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_forecasters: usize,
    pub n_questions: usize,
    pub n_topics: usize,
    /// Inclusive range of option counts.
    pub options_range: (usize, usize),
    /// Spread of latent skill around 0.5.
    pub skill_spread: f64,
    /// Std of the Gaussian jitter added to each probability.
    pub noise: f64,
    /// Std of the jitter on the 1..5 confidence scale.
    pub confidence_noise: f64,
    /// Inclusive range of days a question stays open.
    pub days_open_range: (usize, usize),
    /// Inclusive range of forecasts per forecaster per question.
    pub revisions_per_forecaster_range: (usize, usize),
    /// Fraction of questions with an ordered answer scale.
    pub ordered_fraction: f64,
    /// Days between consecutive question openings.
    pub stagger_days: usize,
    /// Overrides the sampled skills: one topic-independent skill per
    /// forecaster.
    pub fixed_skills: Option<Vec<f64>>,
    pub start_date: NaiveDate,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_forecasters: 20,
            n_questions: 60,
            n_topics: 6,
            options_range: (2, 5),
            skill_spread: 0.3,
            noise: 0.1,
            confidence_noise: 0.75,
            days_open_range: (8, 20),
            revisions_per_forecaster_range: (3, 6),
            ordered_fraction: 0.25,
            stagger_days: 2,
            fixed_skills: None,
            start_date: NaiveDate::from_ymd_opt(2011, 9, 1).unwrap(),
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let ranges = [
            self.options_range,
            self.days_open_range,
            self.revisions_per_forecaster_range,
        ];
        if self.n_forecasters == 0 || self.n_questions == 0 || self.n_topics == 0 {
            return Err(Error::invalid("synthetic counts must be at least 1"));
        }
        if ranges.iter().any(|(lo, hi)| lo > hi || *lo == 0) || self.options_range.0 < 2 {
            return Err(Error::invalid("synthetic ranges must be non-empty and positive"));
        }
        if !(self.skill_spread >= 0.0 && self.noise >= 0.0 && self.confidence_noise >= 0.0) {
            return Err(Error::invalid("spreads and noise must be non-negative"));
        }
        if let Some(s) = &self.fixed_skills {
            if s.len() != self.n_forecasters || s.iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(Error::invalid("fixed skills must give one value in [0,1] per forecaster"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthDataset {
    pub questions: Vec<Question>,
    pub forecasts: Vec<ForecastRecord>,
    /// Per-topic skill in [0, 1] of each forecaster.
    pub skills: BTreeMap<String, Vec<f64>>,
    /// Topic mixture of each question.
    pub mixtures: BTreeMap<String, Vec<f64>>,
}

impl SynthDataset {
    pub fn effective_skill(&self, forecaster_id: &str, question_id: &str) -> Option<f64> {
        let s = self.skills.get(forecaster_id)?;
        let m = self.mixtures.get(question_id)?;
        Some(s.iter().zip(m).map(|(a, b)| a * b).sum::<f64>().clamp(0.0, 1.0))
    }

    pub fn mean_skill(&self, forecaster_id: &str) -> Option<f64> {
        let s = self.skills.get(forecaster_id)?;
        Some(s.iter().sum::<f64>() / s.len() as f64)
    }

    /// Effective skill of every forecaster on one question.
    pub fn question_skills(&self, question_id: &str) -> BTreeMap<String, f64> {
        self.skills
            .keys()
            .filter_map(|f| Some((f.clone(), self.effective_skill(f, question_id)?)))
            .collect()
    }

    /// `forecaster_id, mean_skill, topic0..` CSV.
    pub fn write_skills<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        let t = self.skills.values().next().map_or(0, Vec::len);
        let mut header = vec!["forecaster_id".to_string(), "mean_skill".to_string()];
        header.extend((0..t).map(|k| format!("topic{k}")));
        wtr.write_record(&header)?;
        for (id, s) in &self.skills {
            let mut row = vec![id.clone(), (s.iter().sum::<f64>() / t as f64).to_string()];
            row.extend(s.iter().map(f64::to_string));
            wtr.write_record(&row)?;
        }
        wtr.flush().map_err(|e| Error::io("<skills>", e))?;
        Ok(())
    }
}

/// Alphabetic pseudo-word, unique per `(topic, index)`.
fn topic_word(topic: usize, index: usize) -> String {
    let mut n = topic * WORDS_PER_TOPIC + index;
    let mut w = String::new();
    for _ in 0..3 {
        w.push_str(SYLLABLES[n % SYLLABLES.len()]);
        n /= SYLLABLES.len();
    }
    w
}

fn sample_text(rng: &mut ChaCha8Rng, mixture: &[f64], len: usize) -> String {
    (0..len)
        .map(|_| {
            if rng.random::<f64>() < 0.1 {
                SHARED_WORDS[rng.random_range(0..SHARED_WORDS.len())].to_string()
            } else {
                let k = pick(rng, mixture);
                topic_word(k, rng.random_range(0..WORDS_PER_TOPIC))
            }
        })
        .collect::<Vec<_>>()
        .join(" ")
}

fn pick(rng: &mut ChaCha8Rng, weights: &[f64]) -> usize {
    let mut u = rng.random::<f64>() * weights.iter().sum::<f64>();
    for (i, w) in weights.iter().enumerate() {
        if u < *w {
            return i;
        }
        u -= w;
    }
    weights.len() - 1
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

pub fn generate(cfg: &SynthConfig) -> Result<SynthDataset> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let t = cfg.n_topics;

    let mut skills = BTreeMap::new();
    for f in 0..cfg.n_forecasters {
        let general = normal(&mut rng);
        let per_topic: Vec<f64> = (0..t)
            .map(|_| {
                let specific = normal(&mut rng);
                match &cfg.fixed_skills {
                    Some(fixed) => fixed[f],
                    None => (0.5 + cfg.skill_spread * (0.6 * general + 0.8 * specific)).clamp(0.0, 1.0),
                }
            })
            .collect();
        skills.insert(format!("F{f:03}"), per_topic);
    }

    let sparsity = Gamma::new(0.3, 1.0).expect("valid gamma");
    let mut questions = Vec::with_capacity(cfg.n_questions);
    let mut mixtures = BTreeMap::new();
    let mut forecasts = Vec::new();
    for qi in 0..cfg.n_questions {
        let mut mixture: Vec<f64> = (0..t).map(|_| sparsity.sample(&mut rng)).collect();
        let total: f64 = mixture.iter().sum();
        if total > 0.0 {
            mixture.iter_mut().for_each(|m| *m /= total);
        } else {
            mixture = vec![0.0; t];
            mixture[rng.random_range(0..t)] = 1.0;
        }

        let r = rng.random_range(cfg.options_range.0..=cfg.options_range.1);
        let is_ordered = rng.random::<f64>() < cfg.ordered_fraction;
        let outcome = rng.random_range(0..r);
        let days = rng.random_range(cfg.days_open_range.0..=cfg.days_open_range.1);
        let open = cfg.start_date + Duration::days((qi * cfg.stagger_days) as i64);
        let close = open + Duration::days(days as i64 - 1);
        let text_len = rng.random_range(12..=20);
        let desc_len = rng.random_range(10..=25);
        let text = sample_text(&mut rng, &mixture, text_len);
        let description = sample_text(&mut rng, &mixture, desc_len);
        let id = format!("Q{qi:04}");
        let options = (0..r).map(|j| format!("option {}", (b'A' + j as u8) as char)).collect();
        let question = Question::new(&id, text, description, open, close, options, is_ordered, Some(outcome))?;

        let window_secs = days as i64 * 86_400;
        for (fid, per_topic) in &skills {
            let eff = per_topic.iter().zip(&mixture).map(|(s, m)| s * m).sum::<f64>().clamp(0.0, 1.0);
            let revisions = rng.random_range(
                cfg.revisions_per_forecaster_range.0..=cfg.revisions_per_forecaster_range.1,
            );
            for _ in 0..revisions {
                let offset = rng.random_range(0..window_secs);
                let timestamp = day_start(open) + Duration::seconds(offset);
                let mut p: Vec<f64> = (0..r)
                    .map(|j| {
                        let hit = if j == outcome { 1.0 } else { 0.0 };
                        eff * hit + (1.0 - eff) / r as f64
                    })
                    .collect();
                if cfg.noise > 0.0 {
                    for v in p.iter_mut() {
                        *v = (*v + cfg.noise * normal(&mut rng)).max(0.0);
                    }
                }
                let sum: f64 = p.iter().sum();
                if sum > 0.0 {
                    p.iter_mut().for_each(|v| *v /= sum);
                } else {
                    p = vec![1.0 / r as f64; r];
                }
                let jitter = if cfg.confidence_noise > 0.0 {
                    cfg.confidence_noise * normal(&mut rng)
                } else {
                    0.0
                };
                let confidence = (1.0 + 4.0 * eff + jitter).round().clamp(1.0, 5.0) as u8;
                forecasts.push(ForecastRecord::new(&id, fid, timestamp, p, confidence)?);
            }
        }
        mixtures.insert(id, mixture);
        questions.push(question);
    }

    Ok(SynthDataset {
        questions,
        forecasts,
        skills,
        mixtures,
    })
}

fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && values[idx[j + 1]] == values[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for k in i..=j {
            ranks[idx[k]] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation with average ranks for ties. Zero when either
/// side is constant.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            actual: y.len(),
        });
    }
    if x.len() < 2 {
        return Err(Error::invalid("spearman needs at least 2 points"));
    }
    let (rx, ry) = (average_ranks(x), average_ranks(y));
    let n = x.len() as f64;
    let mx = rx.iter().sum::<f64>() / n;
    let my = ry.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Ok(0.0);
    }
    Ok(sxy / (sxx * syy).sqrt())
}

/// Spearman agreement between latent skill (higher is better) and a ranking
/// (rank 1 is best). 1.0 means the ranking lists forecasters in skill order.
pub fn skill_rank_agreement(latent_skills: &BTreeMap<String, f64>, ranking: &Ranking) -> Result<f64> {
    if latent_skills.len() != ranking.len() {
        return Err(Error::DimensionMismatch {
            expected: latent_skills.len(),
            actual: ranking.len(),
        });
    }
    let mut skill = Vec::with_capacity(ranking.len());
    let mut goodness = Vec::with_capacity(ranking.len());
    for (id, s) in latent_skills {
        let rank = ranking
            .rank_of(id)
            .ok_or_else(|| Error::invalid(format!("ranking is missing `{id}`")))?;
        skill.push(*s);
        goodness.push(-(rank as f64));
    }
    spearman(&skill, &goodness)
}
