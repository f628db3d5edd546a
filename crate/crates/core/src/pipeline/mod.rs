//! End-to-end orchestration: chronological split, topic vectors, comparator
//! training, per-day ranking and crowd scoring.

mod commands;
mod config;
mod report;

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use chrono::NaiveDate;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::aggregate::{self, BrierMode, Cutoff};
use crate::corpus::{self, Archive, ForecastRecord, Question, StatsProvider};
use crate::error::{Error, Result};
use crate::ranker::{self, FeatureConfig, PairExample, SiameseNetwork, TrainConfig, TrainOutcome};
use crate::topics::{self, LdaConfig, LdaModel, TopicVector};
use crate::tournament::{self, Ranking, TournamentMatrix, WinMatrix};

pub use commands::{
    run_evaluate, run_ingest, run_rank, run_report, run_simulate, run_topics, run_train, FileDigest, Manifest,
    RunDir, RunSummary,
};
pub use config::{ForecastLayout, PipelineConfig};
pub use report::{read_summary, render_summary_svg, write_daily, write_summary};

/// Deterministic child seed from a base seed, a purpose tag and an index.
pub fn derive_seed(base: u64, tag: &str, index: u64) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in tag.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    let mut z = base ^ h ^ index.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    // splitmix64 finalizer
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Questions, their forecasts grouped by question, and the past-performance
/// archive.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub questions: Vec<Question>,
    records: HashMap<String, Vec<ForecastRecord>>,
    pub archive: Archive,
}

impl Experiment {
    pub fn new(questions: Vec<Question>, forecasts: &[ForecastRecord]) -> Self {
        let archive = Archive::build(&questions, forecasts);
        Experiment {
            records: corpus::group_by_question(forecasts),
            questions,
            archive,
        }
    }

    pub fn records_for(&self, question_id: &str) -> &[ForecastRecord] {
        self.records.get(question_id).map_or(&[], Vec::as_slice)
    }

    /// Chronological split of the resolved questions (by close date, then
    /// id). The first `train_fraction` go to training, the last
    /// `validation_questions` of which are held out for model selection.
    pub fn split(&self, train_fraction: f64, validation_questions: usize) -> Result<Split> {
        let mut resolved: Vec<usize> = (0..self.questions.len())
            .filter(|&i| self.questions[i].is_resolved())
            .collect();
        resolved.sort_by(|&a, &b| {
            let (qa, qb) = (&self.questions[a], &self.questions[b]);
            qa.close_date.cmp(&qb.close_date).then_with(|| qa.id.cmp(&qb.id))
        });
        let n_train = (resolved.len() as f64 * train_fraction).floor() as usize;
        if n_train <= validation_questions || n_train >= resolved.len() {
            return Err(Error::invalid(format!(
                "cannot split {} resolved questions with train fraction {train_fraction} \
                 and {validation_questions} validation questions",
                resolved.len()
            )));
        }
        let evaluation = resolved.split_off(n_train);
        let validation = resolved.split_off(n_train - validation_questions);
        Ok(Split {
            train: resolved,
            validation,
            evaluation,
        })
    }
}

/// Indices into [`Experiment::questions`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub evaluation: Vec<usize>,
}

pub fn question_documents(questions: &[Question]) -> Vec<Vec<String>> {
    questions.iter().map(|q| topics::tokenize(&q.document())).collect()
}

pub fn fit_topic_model(questions: &[Question], cfg: &LdaConfig) -> Result<LdaModel> {
    topics::fit_lda(&question_documents(questions), cfg)
}

pub fn topic_vectors(
    model: &LdaModel,
    questions: &[Question],
    fold_in_iterations: usize,
    seed: u64,
) -> BTreeMap<String, TopicVector> {
    questions
        .iter()
        .enumerate()
        .map(|(i, q)| {
            let tokens = topics::tokenize(&q.document());
            let tv = topics::topic_vector(model, &tokens, fold_in_iterations, derive_seed(seed, "fold-in", i as u64));
            (q.id.clone(), tv)
        })
        .collect()
}

fn topic_of<'a>(topics: &'a BTreeMap<String, TopicVector>, question_id: &str) -> Result<&'a TopicVector> {
    topics
        .get(question_id)
        .ok_or_else(|| Error::invalid(format!("no topic vector for question {question_id}")))
}

/// Labeled pairs pooled over `questions`.
pub fn pairs_for(
    exp: &Experiment,
    questions: &[usize],
    topics: &BTreeMap<String, TopicVector>,
    r_max: usize,
    sample_budget: Option<usize>,
    seed: u64,
) -> Result<Vec<PairExample>> {
    let mut out = Vec::new();
    for &qi in questions {
        let q = &exp.questions[qi];
        out.extend(ranker::make_pairs(
            q,
            exp.records_for(&q.id),
            &exp.archive,
            topic_of(topics, &q.id)?,
            r_max,
            sample_budget,
            derive_seed(seed, "pairs", qi as u64),
        )?);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparatorSettings {
    pub r_max: usize,
    pub num_topics: usize,
    /// Pairs sampled per training question; validation uses all pairs.
    pub sample_budget: Option<usize>,
    pub train: TrainConfig,
}

#[derive(Debug, Clone)]
pub struct TrainedComparator {
    pub features: FeatureConfig,
    pub outcome: TrainOutcome,
    pub train_pairs: usize,
    pub validation_pairs: usize,
}

pub fn train_comparator(
    exp: &Experiment,
    split: &Split,
    topics: &BTreeMap<String, TopicVector>,
    settings: &ComparatorSettings,
) -> Result<TrainedComparator> {
    let seed = settings.train.seed;
    let train_set = pairs_for(exp, &split.train, topics, settings.r_max, settings.sample_budget, seed)?;
    let val_set = pairs_for(exp, &split.validation, topics, settings.r_max, None, seed)?;
    let features = FeatureConfig::new(settings.r_max, settings.num_topics);
    let init = SiameseNetwork::glorot(
        features.dim(),
        &mut ChaCha8Rng::seed_from_u64(derive_seed(seed, "init", 0)),
    );
    let outcome = ranker::train(init, &train_set, &val_set, &settings.train)?;
    Ok(TrainedComparator {
        features,
        outcome,
        train_pairs: train_set.len(),
        validation_pairs: val_set.len(),
    })
}

/// Tournament artifacts behind a neural ranking.
#[derive(Debug, Clone)]
pub struct TournamentResult {
    pub wins: WinMatrix,
    pub tournament: TournamentMatrix,
    pub ranking: Ranking,
}

/// Which forecasts enter a tournament.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TournamentInput {
    /// Each forecaster's latest forecast as of the ranking day.
    #[default]
    Latest,
    /// Every in-window forecast made up to the end of the ranking day.
    AllRevisions,
}

/// Ranks the forecasters in `latest` with the comparator, using history as
/// of `as_of`. A lone forecaster yields a trivial ranking and no matrices.
#[allow(clippy::too_many_arguments)]
pub fn neural_ranking(
    net: &SiameseNetwork,
    question: &Question,
    latest: &BTreeMap<&str, &ForecastRecord>,
    records: &[ForecastRecord],
    input: TournamentInput,
    stats: &impl StatsProvider,
    topic: &TopicVector,
    r_max: usize,
    as_of: NaiveDate,
    seed: u64,
) -> Result<(Ranking, Option<TournamentResult>)> {
    if latest.len() < 2 {
        let order = latest.keys().map(|k| k.to_string()).collect();
        return Ok((Ranking::from_order(order), None));
    }
    let features =
        |r: &ForecastRecord| ranker::build_features(r, &stats.stats(&r.forecaster_id, as_of), topic, r_max);
    let wins = match input {
        TournamentInput::Latest => tournament::run_tournament(net, question, latest, features)?,
        TournamentInput::AllRevisions => {
            let end = corpus::day_end(as_of);
            let mut all: BTreeMap<&str, Vec<&ForecastRecord>> = BTreeMap::new();
            for r in records {
                if r.question_id == question.id
                    && r.timestamp <= end
                    && question.in_window(r.timestamp)
                    && latest.contains_key(r.forecaster_id.as_str())
                {
                    all.entry(&r.forecaster_id).or_default().push(r);
                }
            }
            tournament::run_tournament_revisions(net, question, &all, features)?
        }
    };
    let t = tournament::normalize(&wins);
    let ranking = tournament::incr_indeg(&t, seed);
    Ok((
        ranking.clone(),
        Some(TournamentResult {
            wins,
            tournament: t,
            ranking,
        }),
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Neural,
    Baseline,
    Unweighted,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Neural => "neural",
            Method::Baseline => "baseline",
            Method::Unweighted => "unweighted",
        })
    }
}

impl std::str::FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "neural" => Ok(Method::Neural),
            "baseline" => Ok(Method::Baseline),
            "unweighted" => Ok(Method::Unweighted),
            other => Err(Error::invalid(format!("unknown method `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSettings {
    pub cutoffs: Vec<Cutoff>,
    /// Rank once per question from end-of-window forecasts instead of
    /// re-ranking every day. Cheaper, but the ranking sees forecasts made
    /// after the scored day.
    pub rank_once: bool,
    pub brier_mode: BrierMode,
    pub tournament_input: TournamentInput,
    pub r_max: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DailyScore {
    pub question_id: String,
    pub date: NaiveDate,
    pub cutoff: f64,
    pub method: Method,
    pub daily_brier: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub cutoff: f64,
    pub method: Method,
    pub mmdb: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub daily: Vec<DailyScore>,
    pub summary: Vec<SummaryRow>,
}

type PerQuestion = BTreeMap<String, Vec<(NaiveDate, f64)>>;

impl Evaluation {
    fn from_daily(daily: Vec<DailyScore>) -> Result<Self> {
        let mut groups: BTreeMap<(u64, Method), PerQuestion> = BTreeMap::new();
        for d in &daily {
            groups
                .entry((d.cutoff.to_bits(), d.method))
                .or_default()
                .entry(d.question_id.clone())
                .or_default()
                .push((d.date, d.daily_brier));
        }
        let mut summary = groups
            .into_iter()
            .map(|((bits, method), per_q)| {
                Ok(SummaryRow {
                    cutoff: f64::from_bits(bits),
                    method,
                    mmdb: aggregate::BrierReport::from_daily(per_q)?.mmdb,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        summary.sort_by(|a, b| a.cutoff.total_cmp(&b.cutoff).then(a.method.cmp(&b.method)));
        Ok(Evaluation { daily, summary })
    }

    pub fn mmdb(&self, method: Method, cutoff: f64) -> Option<f64> {
        self.summary
            .iter()
            .find(|r| r.method == method && r.cutoff == cutoff)
            .map(|r| r.mmdb)
    }

    /// Per-question report for one method and cutoff.
    pub fn report(&self, method: Method, cutoff: f64) -> Result<aggregate::BrierReport> {
        let mut per_q: BTreeMap<String, Vec<(NaiveDate, f64)>> = BTreeMap::new();
        for d in self.daily.iter().filter(|d| d.method == method && d.cutoff == cutoff) {
            per_q.entry(d.question_id.clone()).or_default().push((d.date, d.daily_brier));
        }
        aggregate::BrierReport::from_daily(per_q)
    }
}

/// Scores neural, baseline and unweighted crowds on every open day of each
/// evaluation question. The unweighted crowd is reported once, at cutoff 100.
/// Questions are scored on worker threads and merged in question-id order.
pub fn evaluate(
    exp: &Experiment,
    net: &SiameseNetwork,
    questions: &[usize],
    topics: &BTreeMap<String, TopicVector>,
    settings: &EvalSettings,
) -> Result<Evaluation> {
    if settings.cutoffs.is_empty() {
        return Err(Error::invalid("no cutoffs configured"));
    }
    let mut order: Vec<usize> = questions.to_vec();
    order.sort_by(|&a, &b| exp.questions[a].id.cmp(&exp.questions[b].id));

    let workers = std::thread::available_parallelism().map_or(1, |n| n.get()).min(order.len().max(1));
    let chunk = order.len().div_ceil(workers).max(1);
    let score_chunk = |qs: &[usize]| -> Result<Vec<DailyScore>> {
        let mut out = Vec::new();
        for &qi in qs {
            out.extend(evaluate_question(exp, net, qi, topics, settings)?);
        }
        Ok(out)
    };
    let per_chunk: Vec<Result<Vec<DailyScore>>> = if workers <= 1 {
        vec![score_chunk(&order)]
    } else {
        std::thread::scope(|scope| {
            let handles: Vec<_> = order.chunks(chunk).map(|qs| scope.spawn(move || score_chunk(qs))).collect();
            handles.into_iter().map(|h| h.join().expect("evaluation worker panicked")).collect()
        })
    };
    let mut daily = Vec::new();
    for part in per_chunk {
        daily.extend(part?);
    }
    if daily.is_empty() {
        return Err(Error::Empty("no scoreable evaluation days"));
    }
    Evaluation::from_daily(daily)
}

fn evaluate_question(
    exp: &Experiment,
    net: &SiameseNetwork,
    qi: usize,
    topics: &BTreeMap<String, TopicVector>,
    settings: &EvalSettings,
) -> Result<Vec<DailyScore>> {
    let q = &exp.questions[qi];
    let records = exp.records_for(&q.id);
    let topic = topic_of(topics, &q.id)?;
    let days = corpus::daily_latest(q, records);
    let rank = |latest: &BTreeMap<&str, &ForecastRecord>, day: NaiveDate, seed: u64| {
        neural_ranking(
            net,
            q,
            latest,
            records,
            settings.tournament_input,
            &exp.archive,
            topic,
            settings.r_max,
            day,
            seed,
        )
        .map(|(r, _)| r)
    };

    let fixed_neural = match (settings.rank_once, days.last()) {
        (true, Some((close, latest))) => {
            Some(rank(latest, *close, derive_seed(settings.seed, "neural-once", qi as u64))?)
        }
        _ => None,
    };

    let mut daily = Vec::new();
    for (day_index, (day, latest)) in days.iter().enumerate() {
        if latest.is_empty() {
            continue;
        }
        let salt = ((qi as u64) << 20) | day_index as u64;
        let eligible: Vec<&str> = latest.keys().copied().collect();
        let neural = match &fixed_neural {
            Some(r) => Ranking::from_order(
                r.order.iter().filter(|id| latest.contains_key(id.as_str())).cloned().collect(),
            ),
            None => rank(latest, *day, derive_seed(settings.seed, "neural", salt))?,
        };
        let baseline = aggregate::baseline_ranking(
            &exp.archive,
            &eligible,
            *day,
            derive_seed(settings.seed, "baseline", salt),
        );

        let mut push = |method: Method, cutoff: Cutoff, ranking: &Ranking| -> Result<()> {
            let w = aggregate::select_top(ranking, cutoff);
            let members = latest.values().copied().filter(|r| w.is_selected(&r.forecaster_id));
            if let Some(score) = aggregate::crowd_score(q, members, settings.brier_mode)? {
                daily.push(DailyScore {
                    question_id: q.id.clone(),
                    date: *day,
                    cutoff: cutoff.percent(),
                    method,
                    daily_brier: score,
                });
            }
            Ok(())
        };
        for &cutoff in &settings.cutoffs {
            push(Method::Neural, cutoff, &neural)?;
            push(Method::Baseline, cutoff, &baseline)?;
        }
        push(Method::Unweighted, Cutoff::FULL, &neural)?;
    }
    Ok(daily)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{self, SynthConfig};

    fn small_experiment() -> Experiment {
        let data = synth::generate(&SynthConfig {
            n_forecasters: 6,
            n_questions: 10,
            ..Default::default()
        })
        .unwrap();
        Experiment::new(data.questions, &data.forecasts)
    }

    #[test]
    fn split_is_chronological_and_disjoint() {
        let exp = small_experiment();
        let s = exp.split(0.5, 1).unwrap();
        assert_eq!((s.train.len(), s.validation.len(), s.evaluation.len()), (4, 1, 5));
        let last_train = s.train.iter().chain(&s.validation).map(|&i| exp.questions[i].close_date).max();
        let first_eval = s.evaluation.iter().map(|&i| exp.questions[i].close_date).min();
        assert!(last_train <= first_eval);
        assert!(exp.split(0.1, 1).is_err());
    }

    #[test]
    fn derived_seeds_differ() {
        assert_ne!(derive_seed(1, "a", 0), derive_seed(1, "b", 0));
        assert_ne!(derive_seed(1, "a", 0), derive_seed(1, "a", 1));
        assert_eq!(derive_seed(7, "x", 3), derive_seed(7, "x", 3));
    }

    #[test]
    fn full_crowd_methods_coincide() {
        let exp = small_experiment();
        let split = exp.split(0.5, 1).unwrap();
        let model = fit_topic_model(&exp.questions, &LdaConfig { iterations: 20, ..LdaConfig::default() }).unwrap();
        let tv = topic_vectors(&model, &exp.questions, 10, 0);
        let net = SiameseNetwork::glorot(5 + 3 + 6, &mut ChaCha8Rng::seed_from_u64(0));
        let settings = EvalSettings {
            cutoffs: vec![Cutoff::new(50.0).unwrap(), Cutoff::FULL],
            rank_once: false,
            brier_mode: BrierMode::Aggregate,
            tournament_input: TournamentInput::Latest,
            r_max: 5,
            seed: 1,
        };
        let ev = evaluate(&exp, &net, &split.evaluation, &tv, &settings).unwrap();
        let n = ev.mmdb(Method::Neural, 100.0).unwrap();
        let b = ev.mmdb(Method::Baseline, 100.0).unwrap();
        let u = ev.mmdb(Method::Unweighted, 100.0).unwrap();
        assert_eq!(n, u);
        assert_eq!(b, u);
        assert_eq!(ev.summary.len(), 5);

        let once = evaluate(&exp, &net, &split.evaluation, &tv, &EvalSettings { rank_once: true, ..settings }).unwrap();
        assert_eq!(once.mmdb(Method::Unweighted, 100.0), Some(u));
    }
}
