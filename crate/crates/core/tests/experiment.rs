use listener_scale::experiment::{run_experiment, ExperimentConfig, ExperimentReport};
use serde_json::json;

fn small_sqa(repeats: usize) -> ExperimentConfig {
    ExperimentConfig::from_json_overrides(&json!({
        "task": "sqa",
        "repeats": repeats,
        "sim": {"n_systems": 8, "utterances_per_system": 6},
        "scorer": {"epochs": 4},
        "regimes": [
            {"model": "DAS", "mean_listener": false, "listener_embedding": false},
            {"model": "DAS", "mean_listener": true, "listener_embedding": true},
            {"model": "CL", "mean_listener": false, "listener_embedding": false}
        ]
    }))
    .unwrap()
}

fn small_cser(folds: usize, fold_seeds: usize) -> ExperimentConfig {
    ExperimentConfig::from_json_overrides(&json!({
        "task": "cser",
        "folds": folds,
        "fold_seeds": fold_seeds,
        "sim": {"utterances_per_system": 20},
        "scorer": {"epochs": 2},
        "regimes": [
            {"model": "CL", "mean_listener": false, "listener_embedding": false},
            {"model": "CL", "mean_listener": false, "listener_embedding": false, "text_proxy": true}
        ]
    }))
    .unwrap()
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn sample_sd(v: &[f64]) -> f64 {
    let m = mean(v);
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

#[test]
fn summaries_aggregate_the_runs() {
    let (report, cells) = run_experiment(&small_sqa(3), 1).unwrap();
    assert_eq!(cells.len(), 9);
    for r in &report.regimes {
        assert_eq!(
            r.runs.iter().map(|x| x.index).collect::<Vec<_>>(),
            vec![0, 1, 2]
        );
        for attr in &report.attributes {
            let srcc: Vec<f64> = r.runs.iter().map(|x| x.scores[attr].srcc).collect();
            let lcc: Vec<f64> = r.runs.iter().map(|x| x.scores[attr].lcc).collect();
            let s = &r.summary[attr];
            assert!((s.srcc_mean - mean(&srcc)).abs() < 1e-12);
            assert!((s.lcc_mean - mean(&lcc)).abs() < 1e-12);
            assert!((s.srcc_sd - sample_sd(&srcc)).abs() < 1e-12);
            assert!((s.lcc_sd - sample_sd(&lcc)).abs() < 1e-12);
        }
    }
}

#[test]
fn markdown_carries_summary_values() {
    let (report, _) = run_experiment(&small_sqa(2), 1).unwrap();
    let md = report.to_markdown();
    let attr = &report.attributes[0];
    for r in &report.regimes {
        let s = &r.summary[attr];
        let cell = format!("{:.6} / {:.6}", s.srcc_mean, s.lcc_mean);
        assert!(md.contains(&cell), "{cell} missing from\n{md}");
    }
    assert!(md.contains("Means over 2 repeats."));
}

#[test]
fn report_json_round_trips() {
    let (report, _) = run_experiment(&small_sqa(2), 1).unwrap();
    let text = report.to_json().unwrap();
    let back = ExperimentReport::from_json(&text).unwrap();
    assert_eq!(back.to_json().unwrap(), text);
    assert_eq!(back.regimes, report.regimes);
}

#[test]
fn parallel_and_serial_runs_agree() {
    let cfg = small_sqa(2);
    let (serial, a) = run_experiment(&cfg, 1).unwrap();
    let (parallel, b) = run_experiment(&cfg, 3).unwrap();
    assert_eq!(serial.to_json().unwrap(), parallel.to_json().unwrap());
    let ck = |c: &[listener_scale::experiment::CellOutput]| {
        c.iter()
            .map(|x| x.checkpoint.to_json().unwrap())
            .collect::<Vec<_>>()
    };
    assert_eq!(ck(&a), ck(&b));
}

#[test]
fn cser_runs_cover_every_fold_and_draw() {
    let (report, _) = run_experiment(&small_cser(2, 2), 1).unwrap();
    assert_eq!(report.attributes, vec!["arousal", "valence"]);
    for r in &report.regimes {
        assert_eq!(
            r.runs.iter().map(|x| x.index).collect::<Vec<_>>(),
            vec![0, 1, 2, 3]
        );
    }
    assert_eq!(report.dataset_checksums.len(), 4);
    assert!(report.to_markdown().contains("| Text |"));
}

#[test]
fn noiseless_listeners_give_near_perfect_system_ranking() {
    let cfg = ExperimentConfig::from_json_overrides(&json!({
        "task": "sqa",
        "repeats": 1,
        "sim": {"n_systems": 10, "utterances_per_system": 10, "within_system_sd": 0.3,
                "feature_noise_sd": 0.0, "listener_bias_sd": 0.0, "listener_scale_sd": 0.0,
                "listener_noise_sd": 0.0, "system_signature_dims": 0},
        "regimes": [{"model": "CL", "mean_listener": false, "listener_embedding": false}]
    }))
    .unwrap();
    let (report, _) = run_experiment(&cfg, 1).unwrap();
    let srcc = report.regimes[0].runs[0].scores["quality"].srcc;
    assert!(srcc > 0.9, "srcc {srcc}");
}

#[test]
fn invalid_configs_are_rejected() {
    let bad = [
        json!({"repeats": 0}),
        json!({"regimes": [{"model": "CL", "mean_listener": false, "listener_embedding": true}]}),
        json!({"regimes": [{"model": "CL", "mean_listener": false, "listener_embedding": false, "text_proxy": true}]}),
        json!({"task": "cser", "folds": 1}),
        json!({"test_fraction": 1.5}),
    ];
    for b in bad {
        let err = ExperimentConfig::from_json_overrides(&b).unwrap_err();
        assert!(err.is_config(), "{b}: {err}");
    }
}
