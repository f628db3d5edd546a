//! Pairwise win matrix, weighted tournament, and INCR-INDEG ordering.
//!
//! Every unordered pair of forecasters is judged twice by the comparator,
//! once in each branch order, since the head is not swap-symmetric. A verdict
//! of exactly 0.5 splits the win, so wins are stored in half units to stay
//! integral.

use std::collections::{BTreeMap, HashMap};
use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{ForecastRecord, Question};
use crate::error::{Error, Result};
use crate::ranker::{FeatureVector, SiameseNetwork};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WinMatrix {
    pub forecaster_ids: Vec<String>,
    /// Row-major n×n, in half-win units.
    half_wins: Vec<u64>,
}

impl WinMatrix {
    pub fn new(forecaster_ids: Vec<String>) -> Self {
        let n = forecaster_ids.len();
        WinMatrix {
            forecaster_ids,
            half_wins: vec![0; n * n],
        }
    }

    /// Builds from whole-win counts (row i beat column j).
    pub fn from_counts(forecaster_ids: Vec<String>, counts: &[Vec<u64>]) -> Result<Self> {
        let n = forecaster_ids.len();
        if counts.len() != n || counts.iter().any(|r| r.len() != n) {
            return Err(Error::DimensionMismatch {
                expected: n,
                actual: counts.len(),
            });
        }
        if (0..n).any(|i| counts[i][i] != 0) {
            return Err(Error::invalid("win matrix diagonal must be zero"));
        }
        let half_wins = counts.iter().flatten().map(|c| 2 * c).collect();
        Ok(WinMatrix {
            forecaster_ids,
            half_wins,
        })
    }

    pub fn n(&self) -> usize {
        self.forecaster_ids.len()
    }

    /// Number of times `i` was chosen over `j`; may be a half-integer.
    pub fn count(&self, i: usize, j: usize) -> f64 {
        self.half_wins[i * self.n() + j] as f64 / 2.0
    }

    pub fn half_wins(&self, i: usize, j: usize) -> u64 {
        self.half_wins[i * self.n() + j]
    }

    fn award(&mut self, winner: usize, loser: usize, halves: u64) {
        let n = self.n();
        self.half_wins[winner * n + loser] += halves;
    }

    pub fn total(&self) -> f64 {
        self.half_wins.iter().sum::<u64>() as f64 / 2.0
    }

    /// Records one verdict `p` = P(branch-1 forecast is better) with `first`
    /// in branch 1.
    pub fn record_verdict(&mut self, first: usize, second: usize, p: f64) {
        if p > 0.5 {
            self.award(first, second, 2);
        } else if p < 0.5 {
            self.award(second, first, 2);
        } else {
            self.award(first, second, 1);
            self.award(second, first, 1);
        }
    }
}

/// Evaluates `compare(i, j)` for both orientations of every unordered pair.
/// `compare(i, j)` returns the probability that `i`'s forecast is better when
/// `i` sits in branch 1.
pub fn tournament_from_comparator(
    forecaster_ids: Vec<String>,
    mut compare: impl FnMut(usize, usize) -> f64,
) -> Result<WinMatrix> {
    if forecaster_ids.len() < 2 {
        return Err(Error::invalid("tournament needs at least 2 forecasters"));
    }
    let mut m = WinMatrix::new(forecaster_ids);
    let n = m.n();
    for i in 0..n {
        for j in (i + 1)..n {
            let p_ij = compare(i, j);
            m.record_verdict(i, j, p_ij);
            let p_ji = compare(j, i);
            m.record_verdict(j, i, p_ji);
        }
    }
    Ok(m)
}

/// Runs the comparator over the latest forecast of every forecaster.
/// Branch embeddings are computed once per forecaster.
pub fn run_tournament(
    net: &SiameseNetwork,
    question: &Question,
    forecasts: &BTreeMap<&str, &ForecastRecord>,
    features: impl Fn(&ForecastRecord) -> Result<FeatureVector>,
) -> Result<WinMatrix> {
    if forecasts.len() < 2 {
        return Err(Error::invalid(format!(
            "question {}: tournament needs at least 2 forecasters",
            question.id
        )));
    }
    let ids: Vec<String> = forecasts.keys().map(|k| k.to_string()).collect();
    let embeddings = forecasts
        .values()
        .map(|r| net.embed(&features(r)?.to_input()))
        .collect::<Result<Vec<_>>>()?;
    tournament_from_comparator(ids, |i, j| net.score_embeddings(&embeddings[i], &embeddings[j]))
}

/// Like [`run_tournament`], but every forecast of one forecaster meets every
/// forecast of the other, in both orientations.
pub fn run_tournament_revisions(
    net: &SiameseNetwork,
    question: &Question,
    forecasts: &BTreeMap<&str, Vec<&ForecastRecord>>,
    features: impl Fn(&ForecastRecord) -> Result<FeatureVector>,
) -> Result<WinMatrix> {
    if forecasts.len() < 2 {
        return Err(Error::invalid(format!(
            "question {}: tournament needs at least 2 forecasters",
            question.id
        )));
    }
    let mut m = WinMatrix::new(forecasts.keys().map(|k| k.to_string()).collect());
    let embeddings = forecasts
        .values()
        .map(|rs| {
            rs.iter()
                .map(|r| net.embed(&features(r)?.to_input()))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    for i in 0..m.n() {
        for j in (i + 1)..m.n() {
            for a in &embeddings[i] {
                for b in &embeddings[j] {
                    m.record_verdict(i, j, net.score_embeddings(a, b));
                    m.record_verdict(j, i, net.score_embeddings(b, a));
                }
            }
        }
    }
    Ok(m)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TournamentMatrix {
    pub forecaster_ids: Vec<String>,
    /// Row-major n×n; `weight(i, j)` is the weight of edge i → j.
    weights: Vec<f64>,
}

impl TournamentMatrix {
    /// Validates zero diagonal and `w(i,j) + w(j,i) = 1` (within 1e-9).
    #[allow(clippy::needless_range_loop)]
    pub fn new(forecaster_ids: Vec<String>, weights: Vec<Vec<f64>>) -> Result<Self> {
        let n = forecaster_ids.len();
        if weights.len() != n || weights.iter().any(|r| r.len() != n) {
            return Err(Error::DimensionMismatch {
                expected: n,
                actual: weights.len(),
            });
        }
        for i in 0..n {
            if weights[i][i] != 0.0 {
                return Err(Error::invalid("tournament diagonal must be zero"));
            }
            for j in (i + 1)..n {
                let (a, b) = (weights[i][j], weights[j][i]);
                if !(0.0..=1.0).contains(&a) || !(0.0..=1.0).contains(&b) || (a + b - 1.0).abs() > 1e-9 {
                    return Err(Error::invalid(format!(
                        "weights ({i},{j}) = {a}, ({j},{i}) = {b} violate the probability constraint"
                    )));
                }
            }
        }
        Ok(TournamentMatrix {
            forecaster_ids,
            weights: weights.into_iter().flatten().collect(),
        })
    }

    pub fn n(&self) -> usize {
        self.forecaster_ids.len()
    }

    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.weights[i * self.n() + j]
    }

    /// `sum_{u != v} w(u, v)`: the weighted losses of `v`.
    pub fn weighted_in_degree(&self, v: usize) -> f64 {
        (0..self.n()).filter(|&u| u != v).map(|u| self.weight(u, v)).sum()
    }

    pub fn weighted_in_degrees(&self) -> Vec<f64> {
        (0..self.n()).map(|v| self.weighted_in_degree(v)).collect()
    }
}

/// `T_ij = M_ij / (M_ij + M_ji)`, with 0.5 each way for pairs never compared.
pub fn normalize(m: &WinMatrix) -> TournamentMatrix {
    let n = m.n();
    let mut weights = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let (a, b) = (m.half_wins(i, j), m.half_wins(j, i));
            weights[i * n + j] = if a + b == 0 {
                0.5
            } else {
                a as f64 / (a + b) as f64
            };
        }
    }
    TournamentMatrix {
        forecaster_ids: m.forecaster_ids.clone(),
        weights,
    }
}

/// A total order over forecasters; `order[0]` is rank 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ranking {
    pub order: Vec<String>,
    pub sigma: HashMap<String, usize>,
}

impl Ranking {
    pub fn from_order(order: Vec<String>) -> Self {
        let sigma = order
            .iter()
            .enumerate()
            .map(|(i, id)| (id.clone(), i + 1))
            .collect();
        Ranking { order, sigma }
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    pub fn rank_of(&self, id: &str) -> Option<usize> {
        self.sigma.get(id).copied()
    }
}

/// INCR-INDEG: sort by increasing weighted in-degree (fewest losses first),
/// breaking exact ties uniformly at random.
pub fn incr_indeg(t: &TournamentMatrix, seed: u64) -> Ranking {
    let degrees = t.weighted_in_degrees();
    let mut idx: Vec<usize> = (0..t.n()).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    idx.sort_by(|&a, &b| degrees[a].total_cmp(&degrees[b]));
    Ranking::from_order(idx.into_iter().map(|i| t.forecaster_ids[i].clone()).collect())
}

/// Total weight of edges a → b with `sigma(a) > sigma(b)`.
pub fn backedge_weight(t: &TournamentMatrix, r: &Ranking) -> Result<f64> {
    let n = t.n();
    if r.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: r.len(),
        });
    }
    let ranks = t
        .forecaster_ids
        .iter()
        .map(|id| {
            r.rank_of(id)
                .ok_or_else(|| Error::invalid(format!("ranking is missing `{id}`")))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut total = 0.0;
    for a in 0..n {
        for b in 0..n {
            if a != b && ranks[a] > ranks[b] {
                total += t.weight(a, b);
            }
        }
    }
    Ok(total)
}

fn write_square<W: Write>(
    writer: W,
    ids: &[String],
    cell: impl Fn(usize, usize) -> String,
) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    let mut header = vec![String::new()];
    header.extend(ids.iter().cloned());
    wtr.write_record(&header)?;
    for (i, id) in ids.iter().enumerate() {
        let mut row = vec![id.clone()];
        row.extend((0..ids.len()).map(|j| cell(i, j)));
        wtr.write_record(&row)?;
    }
    wtr.flush().map_err(|e| Error::io("<matrix>", e))?;
    Ok(())
}

pub fn write_win_matrix<W: Write>(writer: W, m: &WinMatrix) -> Result<()> {
    write_square(writer, &m.forecaster_ids, |i, j| m.count(i, j).to_string())
}

pub fn write_tournament<W: Write>(writer: W, t: &TournamentMatrix) -> Result<()> {
    write_square(writer, &t.forecaster_ids, |i, j| t.weight(i, j).to_string())
}

/// `(rank, forecaster_id, weighted_in_degree)` rows.
pub fn write_ranking<W: Write>(writer: W, r: &Ranking, t: &TournamentMatrix) -> Result<()> {
    let degrees = t.weighted_in_degrees();
    let pos: HashMap<&str, usize> = t
        .forecaster_ids
        .iter()
        .enumerate()
        .map(|(i, id)| (id.as_str(), i))
        .collect();
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(["rank", "forecaster_id", "weighted_in_degree"])?;
    for (k, id) in r.order.iter().enumerate() {
        let d = pos.get(id.as_str()).map(|&i| degrees[i]).unwrap_or(f64::NAN);
        wtr.write_record([(k + 1).to_string(), id.clone(), d.to_string()])?;
    }
    wtr.flush().map_err(|e| Error::io("<ranking>", e))?;
    Ok(())
}
