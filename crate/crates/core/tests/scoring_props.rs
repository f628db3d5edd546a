use chrono::NaiveDate;
use proptest::prelude::*;

use crowdrank::aggregate::{self, BrierReport, Cutoff};
use crowdrank::tournament::Ranking;

fn simplex(r: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0f64..1.0, r).prop_filter_map("non-zero mass", |v| {
        let s: f64 = v.iter().sum();
        (s > 1e-9).then(|| v.iter().map(|x| x / s).collect())
    })
}

fn with_outcome() -> impl Strategy<Value = (Vec<f64>, usize)> {
    (2usize..=6).prop_flat_map(|r| (simplex(r), 0..r))
}

/// Cumulative-split definition written out independently.
fn ordered_oracle(f: &[f64], outcome: usize) -> f64 {
    let r = f.len();
    let mut total = 0.0;
    for k in 1..r {
        let lower: f64 = f[..k].iter().sum();
        let o_lower = if outcome < k { 1.0 } else { 0.0 };
        total += 2.0 * (lower - o_lower).powi(2);
    }
    total / (r - 1) as f64
}

proptest! {
    #[test]
    fn brier_lies_in_zero_two((f, o) in with_outcome()) {
        let b = aggregate::brier(&f, o);
        prop_assert!((0.0..=2.0 + 1e-12).contains(&b));
        let ob = aggregate::ordered_brier(&f, o);
        prop_assert!((0.0..=2.0 + 1e-12).contains(&ob));
    }

    #[test]
    fn ordered_brier_matches_cumulative_oracle((f, o) in with_outcome()) {
        prop_assert!((aggregate::ordered_brier(&f, o) - ordered_oracle(&f, o)).abs() < 1e-12);
    }

    #[test]
    fn binary_ordered_equals_plain(p in 0.0f64..=1.0, o in 0usize..2) {
        let f = [p, 1.0 - p];
        prop_assert_eq!(aggregate::ordered_brier(&f, o), aggregate::brier(&f, o));
    }

    #[test]
    fn selection_count_is_ceiling(n in 1usize..500, pct in 0.5f64..=100.0) {
        let c = Cutoff::new(pct).unwrap();
        let k = c.select_count(n);
        prop_assert!(k >= 1 && k <= n);
        prop_assert!(k as f64 >= n as f64 * pct / 100.0 - 1e-9);
        prop_assert!((k as f64) < n as f64 * pct / 100.0 + 1.0 || k == 1);
    }

    #[test]
    fn top_selection_is_a_prefix(n in 1usize..60, pct in 1.0f64..=100.0) {
        let order: Vec<String> = (0..n).map(|i| format!("f{i}")).collect();
        let w = aggregate::select_top(&Ranking::from_order(order.clone()), Cutoff::new(pct).unwrap());
        let k = w.num_selected();
        for (i, id) in order.iter().enumerate() {
            prop_assert_eq!(w.is_selected(id), i < k);
        }
    }
}

/// Expected score under belief `p` of reporting `q`, for a binary question.
fn expected_brier(p: f64, q: f64) -> f64 {
    p * aggregate::brier(&[q, 1.0 - q], 0) + (1.0 - p) * aggregate::brier(&[q, 1.0 - q], 1)
}

#[test]
fn propriety_on_a_grid() {
    for pi in 0..=100 {
        let p = pi as f64 / 100.0;
        let best = (0..=100)
            .map(|qi| qi as f64 / 100.0)
            .min_by(|a, b| expected_brier(p, *a).total_cmp(&expected_brier(p, *b)))
            .unwrap();
        assert!((best - p).abs() <= 0.01 + 1e-12, "p {p} best {best}");
    }
}

#[test]
fn uniform_binary_scores_one_half() {
    assert_eq!(aggregate::brier(&[0.5, 0.5], 0), 0.5);
    assert_eq!(aggregate::brier(&[0.5, 0.5], 1), 0.5);
}

#[test]
fn report_averages_days_then_questions() {
    let d = |day| NaiveDate::from_ymd_opt(2024, 1, day).unwrap();
    let mut per_q = std::collections::BTreeMap::new();
    per_q.insert("a".to_string(), vec![(d(1), 0.2), (d(2), 0.4)]);
    per_q.insert("b".to_string(), vec![(d(1), 1.0)]);
    per_q.insert("c".to_string(), vec![]);
    let r = BrierReport::from_daily(per_q).unwrap();
    assert_eq!(r.mdb.len(), 2);
    assert!((r.mdb["a"] - 0.3).abs() < 1e-12);
    assert!((r.mmdb - 0.65).abs() < 1e-12);
}
