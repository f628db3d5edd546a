use crowdrank_web::{cutoff_demo, score, tournament_demo};

#[test]
fn score_reports_both_rules() {
    let v = score("[0.5, 0.5]", 0).unwrap();
    assert_eq!(v["brier"], 0.5);
    assert_eq!(v["ordered_brier"], 0.5);
    let v = score("[0.2, 0.3, 0.5]", 0).unwrap();
    assert!((v["brier"].as_f64().unwrap() - 0.98).abs() < 1e-12);
    assert!(score("[0.5, 0.6]", 0).is_err());
    assert!(score("[1.0, 0.0]", 2).is_err());
    assert!(score("nope", 0).is_err());
}

#[test]
fn noiseless_tournament_recovers_strength_order() {
    let v = tournament_demo(8, 1, 0.0, 3).unwrap();
    assert_eq!(v["backedge_weight"], 0.0);
    let strength: Vec<f64> = serde_json::from_value(v["strength"].clone()).unwrap();
    let ranking: Vec<String> = serde_json::from_value(v["ranking"].clone()).unwrap();
    let s: Vec<f64> = ranking.iter().map(|id| strength[id[1..].parse::<usize>().unwrap()]).collect();
    assert!(s.windows(2).all(|w| w[0] > w[1]));
    assert!(tournament_demo(1, 1, 0.0, 0).is_err());
}

#[test]
fn cutoff_demo_reports_every_cutoff() {
    let v = cutoff_demo(10, 12, 0.3, 0.1, 0).unwrap();
    let rows = v["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 5);
    assert_eq!(rows[4]["cutoff"], 100.0);
    assert!(rows.iter().all(|r| r["mmdb"].as_f64().unwrap() >= 0.0));
    assert_eq!(v["evaluation_questions"], 6);
}
