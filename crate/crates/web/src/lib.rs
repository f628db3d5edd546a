//! Browser demo. Each export takes plain arguments and returns a JSON string,
//! so the page needs no bindings beyond `JSON.parse`.

use std::collections::BTreeMap;

use crowdrank::aggregate::{self, BrierMode, Cutoff};
use crowdrank::corpus::{self, Archive, ForecastRecord, Question};
use crowdrank::synth::{self, SynthConfig};
use crowdrank::tournament;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

/// Scores one forecast. `probabilities` is a JSON array.
pub fn score(probabilities: &str, outcome: usize) -> Result<Value, String> {
    let p: Vec<f64> = serde_json::from_str(probabilities).map_err(|e| e.to_string())?;
    if p.len() < 2 || outcome >= p.len() {
        return Err("need at least two options and an outcome index inside them".into());
    }
    if p.iter().any(|v| !(0.0..=1.0).contains(v)) || (p.iter().sum::<f64>() - 1.0).abs() > 1e-3 {
        return Err("probabilities must lie in [0,1] and sum to 1".into());
    }
    Ok(json!({
        "brier": aggregate::brier(&p, outcome),
        "ordered_brier": aggregate::ordered_brier(&p, outcome),
    }))
}

/// Random weighted tournament over `n` players with hidden strengths. Each
/// pair plays `games` noisy matches; the result is normalized and ordered.
pub fn tournament_demo(n: usize, games: usize, noise: f64, seed: u64) -> Result<Value, String> {
    if !(2..=40).contains(&n) || games == 0 {
        return Err("need 2..=40 players and at least one game".into());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let strength: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
    let ids: Vec<String> = (0..n).map(|i| format!("P{i:02}")).collect();
    let mut wins = tournament::WinMatrix::new(ids.clone());
    for i in 0..n {
        for j in (i + 1)..n {
            for _ in 0..games {
                let jitter = noise * (rng.random::<f64>() - 0.5);
                let p = if strength[i] - strength[j] + jitter > 0.0 { 1.0 } else { 0.0 };
                wins.record_verdict(i, j, p);
                wins.record_verdict(j, i, 1.0 - p);
            }
        }
    }
    let t = tournament::normalize(&wins);
    let ranking = tournament::incr_indeg(&t, seed);
    let mut truth = ids.clone();
    truth.sort_by(|a, b| {
        let (ia, ib) = (ids.iter().position(|x| x == a).unwrap(), ids.iter().position(|x| x == b).unwrap());
        strength[ib].total_cmp(&strength[ia])
    });
    let truth = tournament::Ranking::from_order(truth);
    let weights: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| t.weight(i, j)).collect()).collect();
    Ok(json!({
        "ids": ids,
        "strength": strength,
        "weights": weights,
        "in_degree": t.weighted_in_degrees(),
        "ranking": ranking.order,
        "backedge_weight": tournament::backedge_weight(&t, &ranking).map_err(|e| e.to_string())?,
        "true_order_backedge_weight": tournament::backedge_weight(&t, &truth).map_err(|e| e.to_string())?,
    }))
}

/// Synthetic crowd scored on its later half of questions: MMDB of the top
/// `cutoff`% by past Brier, for each cutoff, plus the full crowd.
pub fn cutoff_demo(
    n_forecasters: usize,
    n_questions: usize,
    skill_spread: f64,
    noise: f64,
    seed: u64,
) -> Result<Value, String> {
    let cfg = SynthConfig {
        n_forecasters,
        n_questions,
        skill_spread,
        noise,
        seed,
        ..SynthConfig::default()
    };
    let data = synth::generate(&cfg).map_err(|e| e.to_string())?;
    let archive = Archive::build(&data.questions, &data.forecasts);
    let by_q = corpus::group_by_question(&data.forecasts);
    let mut questions: Vec<&Question> = data.questions.iter().collect();
    questions.sort_by(|a, b| a.close_date.cmp(&b.close_date).then_with(|| a.id.cmp(&b.id)));
    let evaluation = &questions[questions.len() / 2..];

    let cutoffs = [10.0, 20.0, 30.0, 50.0, 100.0];
    let mut rows = Vec::new();
    for &c in &cutoffs {
        let cutoff = Cutoff::new(c).map_err(|e| e.to_string())?;
        let mut mdbs = Vec::new();
        for (qi, q) in evaluation.iter().enumerate() {
            let records: &[ForecastRecord] = by_q.get(&q.id).map_or(&[], Vec::as_slice);
            let mut days = Vec::new();
            for (d, (day, latest)) in corpus::daily_latest(q, records).into_iter().enumerate() {
                let ids: Vec<&str> = latest.keys().copied().collect();
                if ids.is_empty() {
                    continue;
                }
                let w = aggregate::baseline_weights(&archive, &ids, cutoff, day, seed ^ ((qi as u64) << 20 | d as u64));
                let members = latest.values().copied().filter(|r| w.is_selected(&r.forecaster_id));
                if let Some(s) = aggregate::crowd_score(q, members, BrierMode::Aggregate).map_err(|e| e.to_string())? {
                    days.push(s);
                }
            }
            if !days.is_empty() {
                mdbs.push(days.iter().sum::<f64>() / days.len() as f64);
            }
        }
        rows.push(json!({ "cutoff": c, "mmdb": aggregate::mmdb(&mdbs).map_err(|e| e.to_string())? }));
    }
    let skills: BTreeMap<String, f64> = (0..n_forecasters)
        .filter_map(|i| {
            let id = format!("F{i:03}");
            data.mean_skill(&id).map(|s| (id, s))
        })
        .collect();
    Ok(json!({
        "evaluation_questions": evaluation.len(),
        "forecasts": data.forecasts.len(),
        "rows": rows,
        "mean_skill": skills,
    }))
}

fn to_js(v: Result<Value, String>) -> Result<String, JsValue> {
    v.map(|v| v.to_string()).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn score_forecast(probabilities: &str, outcome: usize) -> Result<String, JsValue> {
    to_js(score(probabilities, outcome))
}

#[wasm_bindgen]
pub fn rank_tournament(n: usize, games: usize, noise: f64, seed: u32) -> Result<String, JsValue> {
    to_js(tournament_demo(n, games, noise, u64::from(seed)))
}

#[wasm_bindgen]
pub fn simulate_cutoffs(
    n_forecasters: usize,
    n_questions: usize,
    skill_spread: f64,
    noise: f64,
    seed: u32,
) -> Result<String, JsValue> {
    to_js(cutoff_demo(n_forecasters, n_questions, skill_spread, noise, u64::from(seed)))
}
