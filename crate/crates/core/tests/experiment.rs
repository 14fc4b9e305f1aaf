use std::path::PathBuf;

use promptcs::eval::{generate_synthetic, SynthConfig};
use promptcs::experiment::{mean_std, prepare_workload, render_table, run_experiment, RunConfig};
use promptcs::query::{top_attributes, QueryKind};
use promptcs::Error;

fn configs_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

#[test]
fn planted_density_is_close_to_p_in() {
    for seed in 0..5 {
        let cfg = SynthConfig {
            seed,
            ..SynthConfig::default()
        };
        let (g, cs) = generate_synthetic(&cfg).unwrap();
        for c in &cs {
            let m = c.len() as f64;
            let inside = g
                .edges()
                .iter()
                .filter(|&&(u, v)| c.contains(u) && c.contains(v))
                .count() as f64;
            let density = inside / (m * (m - 1.0) / 2.0);
            assert!(
                (density - cfg.p_in).abs() <= 0.2 * cfg.p_in,
                "seed {seed}: density {density}"
            );
        }
    }
}

#[test]
fn afc_attributes_come_from_the_signature() {
    for noise in [0.0, 0.02, 0.05] {
        let cfg = SynthConfig {
            noise,
            background_attrs: 4,
            ..SynthConfig::default()
        };
        let (g, cs) = generate_synthetic(&cfg).unwrap();
        for (i, c) in cs.iter().enumerate() {
            let sig = i * cfg.signature_attrs..(i + 1) * cfg.signature_attrs;
            let top = top_attributes(&g, c.members(), 3);
            assert_eq!(top.len(), 3);
            assert!(
                top.iter().all(|a| sig.contains(a)),
                "noise {noise}: {top:?}"
            );
        }
    }
}

#[test]
fn eqa_workloads_carry_no_attributes() {
    let cfg = RunConfig::default();
    let (g, cs) = cfg.load_data(0).unwrap();
    let work = prepare_workload(&cfg, &g, &cs, QueryKind::Eqa, 0).unwrap();
    assert_eq!(work.train.len(), 20);
    assert!(work.train.iter().all(|lq| lq.query.attrs.is_empty()));
    assert!(work.test.iter().all(|eq| eq.query.attrs.is_empty()));
}

#[test]
fn reported_std_matches_recomputation_from_runs() {
    let cfg = RunConfig::load(&configs_dir().join("determinism.json")).unwrap();
    let report = run_experiment(&cfg).unwrap();
    for scenario in &report.scenarios {
        let f1: Vec<f64> = scenario.runs.iter().map(|r| r.metrics.f1).collect();
        assert_eq!(f1.len(), cfg.eval.seeds.len());
        let mean = f1.iter().sum::<f64>() / f1.len() as f64;
        let std = (f1.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / f1.len() as f64).sqrt();
        assert!((scenario.mean.f1 - mean).abs() < 1e-12);
        assert!((scenario.std.f1 - std).abs() < 1e-12);
    }
    let table = render_table(&report);
    assert!(table.contains("AFC") && table.contains("EQA"));
}

#[test]
fn mean_std_of_known_values() {
    let (m, s) = mean_std(&[2.0, 4.0, 4.0, 4.0, 5.0, 5.0, 7.0, 9.0]);
    assert_eq!(m, 5.0);
    assert_eq!(s, 2.0);
}

#[test]
fn every_shipped_config_loads() {
    let mut count = 0;
    for entry in std::fs::read_dir(configs_dir()).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "json") {
            RunConfig::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            count += 1;
        }
    }
    assert!(count >= 5);
}

#[test]
fn unknown_keys_and_bad_values_are_config_errors() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.json");
    std::fs::write(&path, r#"{"train": {"epochs": 5, "learning_rate": 0.1}}"#).unwrap();
    assert!(matches!(RunConfig::load(&path), Err(Error::Config(_))));
    std::fs::write(&path, r#"{"prompt": {"delta": 1.5}}"#).unwrap();
    assert!(matches!(RunConfig::load(&path), Err(Error::Config(_))));
    std::fs::write(&path, r#"{"eval": {"seeds": []}}"#).unwrap();
    assert!(matches!(RunConfig::load(&path), Err(Error::Config(_))));
}
