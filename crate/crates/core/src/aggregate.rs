//! Crowd construction from rank-based binary weights and Brier scoring.

use std::collections::BTreeMap;

use chrono::{DateTime, NaiveDate, Utc};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{self, Archive, ForecastRecord, Question, StatsProvider};
use crate::error::{Error, Result};
use crate::tournament::Ranking;

/// Top-percentile cutoff in (0, 100].
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct Cutoff(f64);

impl Cutoff {
    pub const FULL: Cutoff = Cutoff(100.0);

    pub fn new(percent: f64) -> Result<Self> {
        if percent > 0.0 && percent <= 100.0 {
            Ok(Cutoff(percent))
        } else {
            Err(Error::invalid(format!("cutoff {percent} outside (0, 100]")))
        }
    }

    pub fn percent(self) -> f64 {
        self.0
    }

    /// `ceil(n * pct / 100)`, at least one when `n > 0`.
    pub fn select_count(self, n: usize) -> usize {
        if n == 0 {
            return 0;
        }
        // The epsilon keeps exact products like 10 * 30 / 100 from rounding up.
        let k = (n as f64 * self.0 / 100.0 - 1e-9).ceil() as usize;
        k.clamp(1, n)
    }
}

impl TryFrom<f64> for Cutoff {
    type Error = Error;
    fn try_from(v: f64) -> Result<Self> {
        Cutoff::new(v)
    }
}

impl From<Cutoff> for f64 {
    fn from(c: Cutoff) -> f64 {
        c.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrowdWeights {
    pub weights: BTreeMap<String, u8>,
    pub cutoff_percentile: f64,
}

impl CrowdWeights {
    pub fn is_selected(&self, forecaster_id: &str) -> bool {
        self.weights.get(forecaster_id).copied() == Some(1)
    }

    pub fn selected(&self) -> impl Iterator<Item = &str> {
        self.weights
            .iter()
            .filter(|(_, w)| **w == 1)
            .map(|(k, _)| k.as_str())
    }

    pub fn num_selected(&self) -> usize {
        self.selected().count()
    }
}

/// Gives weight 1 to the `ceil(n * pct / 100)` best-ranked forecasters.
pub fn select_top(ranking: &Ranking, cutoff: Cutoff) -> CrowdWeights {
    let k = cutoff.select_count(ranking.len());
    let weights = ranking
        .order
        .iter()
        .enumerate()
        .map(|(i, id)| (id.clone(), u8::from(i < k)))
        .collect();
    CrowdWeights {
        weights,
        cutoff_percentile: cutoff.percent(),
    }
}

/// Componentwise mean of the selected forecasters' latest probability vectors
/// at `t`, or `None` when no selected forecaster has forecast yet.
pub fn crowd_forecast(
    question: &Question,
    records: &[ForecastRecord],
    weights: &CrowdWeights,
    t: DateTime<Utc>,
) -> Option<Vec<f64>> {
    let latest = corpus::latest_per_forecaster(question, records, t);
    mean_forecast(latest.values().copied().filter(|r| weights.is_selected(&r.forecaster_id)))
}

pub fn mean_forecast<'a>(records: impl IntoIterator<Item = &'a ForecastRecord>) -> Option<Vec<f64>> {
    let mut sum: Option<Vec<f64>> = None;
    let mut n = 0usize;
    for r in records {
        let acc = sum.get_or_insert_with(|| vec![0.0; r.probabilities.len()]);
        acc.iter_mut()
            .zip(&r.probabilities)
            .for_each(|(a, p)| *a += p);
        n += 1;
    }
    sum.map(|mut s| {
        s.iter_mut().for_each(|v| *v /= n as f64);
        s
    })
}

/// Quadratic score against the one-hot outcome. Range [0, 2].
pub fn brier(forecast: &[f64], outcome_index: usize) -> f64 {
    forecast
        .iter()
        .enumerate()
        .map(|(j, f)| {
            let o = if j == outcome_index { 1.0 } else { 0.0 };
            (f - o) * (f - o)
        })
        .sum()
}

/// Ordered-category Brier: mean of the binary Brier scores over the `r - 1`
/// cumulative splits `{0..k} | {k..r}`. Forecasts that put mass near the
/// realized category score better than ones far from it.
pub fn ordered_brier(forecast: &[f64], outcome_index: usize) -> f64 {
    let r = forecast.len();
    if r < 2 {
        return brier(forecast, outcome_index);
    }
    let total: f64 = forecast.iter().sum();
    let mut lower = 0.0;
    let mut acc = 0.0;
    for k in 1..r {
        lower += forecast[k - 1];
        let split = [lower, total - lower];
        let side = usize::from(outcome_index >= k);
        acc += brier(&split, side);
    }
    acc / (r - 1) as f64
}

/// Brier or ordered Brier depending on the question's answer scale.
pub fn question_score(question: &Question, forecast: &[f64], outcome_index: usize) -> f64 {
    if question.is_ordered {
        ordered_brier(forecast, outcome_index)
    } else {
        brier(forecast, outcome_index)
    }
}

/// Every forecaster's end-of-day score on each open day where they have a
/// standing forecast. Empty for unresolved questions.
pub fn daily_individual_scores(
    question: &Question,
    records: &[ForecastRecord],
) -> BTreeMap<String, Vec<(NaiveDate, f64)>> {
    let mut out: BTreeMap<String, Vec<(NaiveDate, f64)>> = BTreeMap::new();
    let Some(outcome) = question.outcome_index else {
        return out;
    };
    for (day, latest) in corpus::daily_latest(question, records) {
        for (id, r) in latest {
            out.entry(id.to_string())
                .or_default()
                .push((day, question_score(question, &r.probabilities, outcome)));
        }
    }
    out
}

/// Mean daily Brier of a question over the days that have a crowd forecast.
pub fn mdb(question: &Question, daily_forecasts: &[(NaiveDate, Vec<f64>)]) -> Result<f64> {
    let outcome = question.outcome()?;
    let scores: Vec<f64> = daily_forecasts
        .iter()
        .filter(|(d, _)| *d >= question.open_date && *d <= question.close_date)
        .map(|(_, f)| question_score(question, f, outcome))
        .collect();
    if scores.is_empty() {
        return Err(Error::Empty("no scoreable days"));
    }
    Ok(scores.iter().sum::<f64>() / scores.len() as f64)
}

pub fn mmdb(mdbs: &[f64]) -> Result<f64> {
    if mdbs.is_empty() {
        return Err(Error::Empty("no questions to average"));
    }
    Ok(mdbs.iter().sum::<f64>() / mdbs.len() as f64)
}

/// How a day's crowd is scored.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BrierMode {
    /// Score of the mean forecast.
    #[default]
    Aggregate,
    /// Mean of the selected members' individual scores.
    MeanIndividual,
}

/// Scores the selected crowd under `mode`. `None` if nobody is selected.
pub fn crowd_score<'a>(
    question: &Question,
    members: impl IntoIterator<Item = &'a ForecastRecord>,
    mode: BrierMode,
) -> Result<Option<f64>> {
    let outcome = question.outcome()?;
    let members: Vec<&ForecastRecord> = members.into_iter().collect();
    if members.is_empty() {
        return Ok(None);
    }
    Ok(Some(match mode {
        BrierMode::Aggregate => {
            let mean = mean_forecast(members.iter().copied()).expect("non-empty");
            question_score(question, &mean, outcome)
        }
        BrierMode::MeanIndividual => {
            members
                .iter()
                .map(|r| question_score(question, &r.probabilities, outcome))
                .sum::<f64>()
                / members.len() as f64
        }
    }))
}

/// Ranks forecasters by mean past Brier (ascending). Forecasters without
/// history go last; ties are broken by a seeded shuffle.
pub fn baseline_ranking(
    history: &Archive,
    forecasters: &[&str],
    as_of: NaiveDate,
    seed: u64,
) -> Ranking {
    let mut ids: Vec<&str> = forecasters.to_vec();
    ids.sort_unstable();
    ids.dedup();
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut keyed: Vec<(bool, f64, &str)> = ids
        .into_iter()
        .map(|id| {
            let s = history.stats(id, as_of);
            (!s.has_history(), s.mean_past_brier, id)
        })
        .collect();
    // Stable: preserves the shuffle among equal keys.
    keyed.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)));
    Ranking::from_order(keyed.into_iter().map(|(_, _, id)| id.to_string()).collect())
}

pub fn baseline_weights(
    history: &Archive,
    forecasters: &[&str],
    cutoff: Cutoff,
    as_of: NaiveDate,
    seed: u64,
) -> CrowdWeights {
    select_top(&baseline_ranking(history, forecasters, as_of, seed), cutoff)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BrierReport {
    pub per_question: BTreeMap<String, Vec<(NaiveDate, f64)>>,
    pub mdb: BTreeMap<String, f64>,
    pub mmdb: f64,
}

impl BrierReport {
    /// Questions with no scoreable day are left out.
    pub fn from_daily(per_question: BTreeMap<String, Vec<(NaiveDate, f64)>>) -> Result<Self> {
        let per_question: BTreeMap<_, _> = per_question
            .into_iter()
            .filter(|(_, v)| !v.is_empty())
            .collect();
        let mdb: BTreeMap<String, f64> = per_question
            .iter()
            .map(|(q, days)| {
                let m = days.iter().map(|(_, s)| s).sum::<f64>() / days.len() as f64;
                (q.clone(), m)
            })
            .collect();
        let mmdb = mmdb(&mdb.values().copied().collect::<Vec<_>>())?;
        Ok(BrierReport {
            per_question,
            mdb,
            mmdb,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::day_end;

    fn d(day: u32) -> NaiveDate {
        NaiveDate::from_ymd_opt(2013, 3, day).unwrap()
    }

    fn q(r: usize, ordered: bool, outcome: usize, first: u32, last: u32) -> Question {
        Question::new(
            "q",
            "",
            "",
            d(first),
            d(last),
            (0..r).map(|i| format!("o{i}")).collect(),
            ordered,
            Some(outcome),
        )
        .unwrap()
    }

    fn rec(f: &str, day: u32, p: Vec<f64>) -> ForecastRecord {
        let t = d(day).and_hms_opt(12, 0, 0).unwrap().and_utc();
        ForecastRecord::new("q", f, t, p, 3).unwrap()
    }

    fn ranking(n: usize) -> Ranking {
        Ranking::from_order((0..n).map(|i| format!("f{i}")).collect())
    }

    #[test]
    fn select_top_counts() {
        let w = select_top(&ranking(10), Cutoff::new(100.0).unwrap());
        assert_eq!(w.num_selected(), 10);
        let w = select_top(&ranking(10), Cutoff::new(10.0).unwrap());
        assert_eq!(w.selected().collect::<Vec<_>>(), vec!["f0"]);
        let w = select_top(&ranking(7), Cutoff::new(25.0).unwrap());
        assert_eq!(w.num_selected(), 2);
        assert!(w.is_selected("f0") && w.is_selected("f1"));
    }

    #[test]
    fn cutoff_bounds() {
        assert!(Cutoff::new(0.0).is_err());
        assert!(Cutoff::new(100.5).is_err());
        assert_eq!(Cutoff::new(30.0).unwrap().select_count(10), 3);
        assert_eq!(Cutoff::new(0.1).unwrap().select_count(3), 1);
    }

    #[test]
    fn crowd_forecast_means() {
        let question = q(3, false, 0, 1, 5);
        let records = vec![
            rec("f0", 1, vec![0.2, 0.3, 0.5]),
            rec("f1", 1, vec![0.6, 0.3, 0.1]),
            rec("f2", 2, vec![0.1, 0.1, 0.8]),
            rec("f3", 2, vec![1.0, 0.0, 0.0]),
        ];
        let mut w = select_top(&ranking(4), Cutoff::new(75.0).unwrap());
        let f = crowd_forecast(&question, &records, &w, day_end(d(3))).unwrap();
        let expected = [0.9 / 3.0, 0.7 / 3.0, 1.4 / 3.0];
        for (a, b) in f.iter().zip(expected) {
            assert!((a - b).abs() < 1e-12);
        }
        // Before f2 has forecast.
        let f = crowd_forecast(&question, &records, &w, day_end(d(1))).unwrap();
        assert!((f[0] - 0.4).abs() < 1e-12);

        w.weights.insert("f0".into(), 0);
        w.weights.insert("f1".into(), 0);
        w.weights.insert("f2".into(), 0);
        w.weights.insert("f3".into(), 1);
        let f = crowd_forecast(&question, &records, &w, day_end(d(2))).unwrap();
        assert_eq!(f, vec![1.0, 0.0, 0.0]);
        assert!(crowd_forecast(&question, &records, &w, day_end(d(1))).is_none());
    }

    #[test]
    fn opposite_forecasts_average_to_uniform() {
        let question = q(2, false, 0, 1, 2);
        let records = vec![rec("f0", 1, vec![1.0, 0.0]), rec("f1", 1, vec![0.0, 1.0])];
        let w = select_top(&ranking(2), Cutoff::FULL);
        assert_eq!(
            crowd_forecast(&question, &records, &w, day_end(d(1))).unwrap(),
            vec![0.5, 0.5]
        );
    }

    #[test]
    fn brier_reference_points() {
        assert_eq!(brier(&[1.0, 0.0, 0.0], 0), 0.0);
        assert_eq!(brier(&[0.0, 1.0], 0), 2.0);
        assert_eq!(brier(&[0.5, 0.5], 0), 0.5);
        assert_eq!(brier(&[0.5, 0.5], 1), 0.5);
    }

    #[test]
    fn ordered_brier_rewards_adjacent_categories() {
        assert_eq!(ordered_brier(&[1.0, 0.0, 0.0], 0), 0.0);
        assert_eq!(ordered_brier(&[0.0, 0.0, 1.0], 0), 2.0);
        assert_eq!(ordered_brier(&[0.0, 1.0, 0.0], 0), 1.0);
        assert_eq!(ordered_brier(&[0.3, 0.7], 1), brier(&[0.3, 0.7], 1));
    }

    #[test]
    fn mdb_and_mmdb() {
        let question = q(2, false, 0, 1, 2);
        let daily = vec![(d(1), vec![1.0, 0.0]), (d(2), vec![1.0, 0.0])];
        assert_eq!(mdb(&question, &daily).unwrap(), 0.0);
        // Days scoring 0.5 and 1.5; 2(1-p)^2 = 1.5 at p = 1 - sqrt(0.75).
        let p = 1.0 - 0.75f64.sqrt();
        let daily = vec![(d(1), vec![0.5, 0.5]), (d(2), vec![p, 1.0 - p])];
        assert!((mdb(&question, &daily).unwrap() - 1.0).abs() < 1e-12);
        assert!(mdb(&question, &[]).is_err());

        assert_eq!(mmdb(&[0.3]).unwrap(), 0.3);
        assert_eq!(mmdb(&[0.0, 1.0]).unwrap(), 0.5);
        assert!(mmdb(&[]).is_err());
    }

    #[test]
    fn mdb_five_day_hand_trace() {
        // Days 1..=5, binary, outcome 0. Crowd = f0 and f1.
        // f0: day1 (0.6,0.4), day4 (0.9,0.1). f1: day2 (0.2,0.8), day3 (0.4,0.6).
        // day1: crowd (0.6,0.4)         -> 2*0.16 = 0.32
        // day2: mean (0.4,0.6)          -> 2*0.36 = 0.72
        // day3: mean (0.5,0.5)          -> 0.5
        // day4: mean (0.65,0.35)        -> 2*0.1225 = 0.245
        // day5: same as day4            -> 0.245
        let question = q(2, false, 0, 1, 5);
        let records = vec![
            rec("f0", 1, vec![0.6, 0.4]),
            rec("f1", 2, vec![0.2, 0.8]),
            rec("f1", 3, vec![0.4, 0.6]),
            rec("f0", 4, vec![0.9, 0.1]),
        ];
        let w = select_top(&ranking(2), Cutoff::FULL);
        let daily: Vec<(NaiveDate, Vec<f64>)> = question
            .open_days()
            .filter_map(|day| crowd_forecast(&question, &records, &w, day_end(day)).map(|f| (day, f)))
            .collect();
        let expected = (0.32 + 0.72 + 0.5 + 0.245 + 0.245) / 5.0;
        assert!((mdb(&question, &daily).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn crowd_score_modes() {
        let question = q(2, false, 0, 1, 2);
        let a = rec("a", 1, vec![1.0, 0.0]);
        let b = rec("b", 1, vec![0.0, 1.0]);
        let agg = crowd_score(&question, [&a, &b], BrierMode::Aggregate).unwrap();
        let ind = crowd_score(&question, [&a, &b], BrierMode::MeanIndividual).unwrap();
        assert_eq!(agg, Some(0.5));
        assert_eq!(ind, Some(1.0));
        assert_eq!(crowd_score(&question, [], BrierMode::Aggregate).unwrap(), None);
    }

    fn history_fixture() -> Archive {
        // One past binary question (days 1..=2, outcome 0) where each
        // forecaster holds a constant forecast p0 from day 1.
        // Past brier = 2(1-p0)^2.
        let past = q(2, false, 0, 1, 2);
        let p0 = [("a", 0.9), ("b", 0.5), ("c", 1.0), ("d", 0.2), ("e", 0.7)];
        let records: Vec<_> = p0
            .iter()
            .map(|(f, p)| rec(f, 1, vec![*p, 1.0 - p]))
            .collect();
        Archive::build(&[past], &records)
    }

    #[test]
    fn baseline_hand_ranked() {
        // Briers: a 0.02, b 0.5, c 0, d 1.28, e 0.18 -> order c, a, e, b, d.
        let archive = history_fixture();
        let r = baseline_ranking(&archive, &["a", "b", "c", "d", "e"], d(10), 3);
        assert_eq!(r.order, vec!["c", "a", "e", "b", "d"]);
        let w = baseline_weights(&archive, &["a", "b", "c", "d", "e"], Cutoff::new(40.0).unwrap(), d(10), 3);
        assert_eq!(w.selected().collect::<Vec<_>>(), vec!["a", "c"]);
    }

    #[test]
    fn baseline_cold_start_goes_last() {
        let archive = history_fixture();
        let r = baseline_ranking(&archive, &["zz", "d", "yy"], d(10), 1);
        assert_eq!(r.order[0], "d");
    }

    #[test]
    fn baseline_all_cold_start_is_seeded_sample() {
        let archive = Archive::default();
        let ids: Vec<String> = (0..10).map(|i| format!("f{i}")).collect();
        let refs: Vec<&str> = ids.iter().map(String::as_str).collect();
        let cut = Cutoff::new(30.0).unwrap();
        let a = baseline_weights(&archive, &refs, cut, d(1), 7);
        let b = baseline_weights(&archive, &refs, cut, d(1), 7);
        assert_eq!(a, b);
        assert_eq!(a.num_selected(), 3);
        let differs = (0..20).any(|s| baseline_weights(&archive, &refs, cut, d(1), s) != a);
        assert!(differs);
    }

    #[test]
    fn two_forecaster_baseline() {
        let past = q(2, false, 0, 1, 2);
        // 2(1-p)^2 = 0.1 -> p = 1 - sqrt(0.05); 0.9 -> p = 1 - sqrt(0.45)
        let pa = 1.0 - 0.05f64.sqrt();
        let pb = 1.0 - 0.45f64.sqrt();
        let records = vec![rec("a", 1, vec![pa, 1.0 - pa]), rec("b", 1, vec![pb, 1.0 - pb])];
        let archive = Archive::build(&[past], &records);
        let w = baseline_weights(&archive, &["b", "a"], Cutoff::new(50.0).unwrap(), d(5), 0);
        assert_eq!(w.selected().collect::<Vec<_>>(), vec!["a"]);
    }
}
