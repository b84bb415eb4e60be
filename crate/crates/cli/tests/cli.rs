mod support;

use std::path::Path;
use std::process::Command;

use effchan::channels::ChannelMethod;
use effchan_cli::manifest::Manifest;
use effchan_cli::report::{build_report, report};
use effchan_cli::{CliError, ExperimentConfig, Pipeline};
use proptest::prelude::*;
use support::{snapshot, tiny_config};

fn effchan(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_effchan"))
        .args(args)
        .env("RUST_LOG", "error")
        .output()
        .unwrap()
}

fn write_config(dir: &Path, c: &ExperimentConfig) -> String {
    let path = dir.join("config.json");
    std::fs::write(&path, serde_json::to_string_pretty(c).unwrap()).unwrap();
    path.to_string_lossy().into_owned()
}

/// Tiny config without the MCMC observers.
fn linear_only() -> ExperimentConfig {
    let mut c = tiny_config();
    c.observers.cio = false;
    c.observers.io_reference = false;
    c
}

fn run_all(c: ExperimentConfig, dir: &Path) -> Pipeline {
    let mut p = Pipeline::new(c, dir).unwrap();
    p.generate().unwrap();
    p.channels().unwrap();
    p.observers().unwrap();
    report(&mut p).unwrap();
    p
}

#[test]
fn exit_codes_follow_the_error_class() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let out = out.to_str().unwrap();

    let r = effchan(&["--config", "/no/such/config.json", "generate"]);
    assert_eq!(r.status.code(), Some(1), "{}", String::from_utf8_lossy(&r.stderr));

    std::fs::write(dir.path().join("bad.json"), "{\"fov\": 1}").unwrap();
    let bad = dir.path().join("bad.json");
    assert_eq!(effchan(&["--config", bad.to_str().unwrap(), "generate"]).status.code(), Some(1));

    let r = effchan(&["--out", out, "report"]);
    assert_eq!(r.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&r.stderr).contains("nothing to report"));

    assert_eq!(effchan(&["--out", out, "channels"]).status.code(), Some(2));
    assert_eq!(effchan(&["--out", out, "reproduce", "--figure", "5"]).status.code(), Some(1));

    // four images give a rank-2 pooled covariance: CG meets a null direction
    let mut c = linear_only();
    c.sweep.methods = vec![ChannelMethod::Cg];
    c.sweep.train_sizes = vec![4];
    c.observers.cho = false;
    c.observers.ho_reference = false;
    let cfg = write_config(dir.path(), &c);
    assert_eq!(effchan(&["--config", &cfg, "--out", out, "generate"]).status.code(), Some(0));
    let r = effchan(&["--config", &cfg, "--out", out, "channels"]);
    assert_eq!(r.status.code(), Some(3), "{}", String::from_utf8_lossy(&r.stderr));
    let m = Manifest::open(Path::new(out)).unwrap();
    assert!(m.failures.contains_key("banks/cg_n4.f64"));
}

#[test]
fn show_config_round_trips_and_seed_overrides() {
    let r = effchan(&["--seed", "99", "show-config", "--preset", "paper"]);
    assert!(r.status.success());
    let c: ExperimentConfig = serde_json::from_slice(&r.stdout).unwrap();
    let mut expected = ExperimentConfig::paper();
    expected.seeds.master = 99;
    assert_eq!(c, expected);
    assert_eq!(c.eval.test_per_class, 500);
    assert_eq!(c.fov.grid_size, 64);
}

#[test]
fn stages_are_idempotent_and_detect_tampering() {
    let dir = tempfile::tempdir().unwrap();
    let p = run_all(linear_only(), dir.path());
    let first = snapshot(dir.path());
    let r1 = build_report(&p).unwrap();
    assert!(!r1.incomplete, "missing {:?}", r1.missing);
    assert_eq!(r1.rows.len(), 1 + 2 * 3 * 3);

    run_all(linear_only(), dir.path());
    assert_eq!(snapshot(dir.path()), first);

    let test = dir.path().join("data/test.f32");
    let mut bytes = std::fs::read(&test).unwrap();
    bytes[0] ^= 1;
    std::fs::write(&test, bytes).unwrap();
    let mut p = Pipeline::new(linear_only(), dir.path()).unwrap();
    assert!(matches!(p.observers(), Err(CliError::Missing(_))));
    // generate notices the stale file and rewrites it
    p.generate().unwrap();
    p.observers().unwrap();
    assert_eq!(snapshot(dir.path()), first);
}

#[test]
fn missing_scores_mark_the_report_incomplete() {
    let dir = tempfile::tempdir().unwrap();
    let mut p = run_all(linear_only(), dir.path());
    std::fs::remove_file(dir.path().join("scores/cho_pls_n40_d2.csv")).unwrap();
    let r = report(&mut p).unwrap();
    assert!(r.incomplete);
    assert_eq!(r.missing, vec!["cho_pls_n40_d2".to_string()]);
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("tables/auc.json")).unwrap()).unwrap();
    assert_eq!(json["incomplete"], true);
}

#[test]
fn sweep_order_does_not_change_results() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    run_all(linear_only(), a.path());
    let mut c = linear_only();
    c.sweep.methods.reverse();
    c.sweep.train_sizes.reverse();
    c.sweep.channel_counts.reverse();
    run_all(c, b.path());
    let scores = |root: &Path| -> Vec<(String, Vec<u8>)> {
        snapshot(root)
            .into_iter()
            .filter(|(p, _)| p.starts_with("scores/") || p.starts_with("banks/") || p.starts_with("data/"))
            .collect()
    };
    assert_eq!(scores(a.path()), scores(b.path()));
}

#[test]
fn mcmc_observers_write_scores_for_every_condition() {
    let dir = tempfile::tempdir().unwrap();
    let p = run_all(tiny_config(), dir.path());
    let r = build_report(&p).unwrap();
    assert!(!r.incomplete, "missing {:?}", r.missing);
    let io = r.by_id("io_reference_s1").unwrap();
    assert!(io.auc > 0.5, "IO AUC {}", io.auc);
    for m in ["cg", "cg_cmd", "pls"] {
        for d in [2, 4] {
            assert!(r.by_id(&format!("cio_{m}_n40_d{d}")).is_some());
        }
    }
    let ordering = std::fs::read_to_string(dir.path().join("tables/ordering.csv")).unwrap();
    assert!(ordering.starts_with("observer,n_train,D,auc_cg_cmd,auc_cg,auc_pls"));
}

#[test]
fn reproduce_and_export_write_figure_data() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = tiny_config();
    c.sweep.d_max = 25;
    c.sweep.channel_counts = vec![1, 10, 25];
    let cfg = write_config(dir.path(), &c);
    let out = dir.path().join("out");
    let out = out.to_str().unwrap();
    for fig in ["2", "4"] {
        let r = effchan(&["--config", &cfg, "--out", out, "reproduce", "--figure", fig]);
        assert!(r.status.success(), "figure {fig}: {}", String::from_utf8_lossy(&r.stderr));
    }
    let root = Path::new(out).join("figures");
    for f in ["fig2.svg", "fig2_images.csv", "fig4_gram.svg", "fig4_six_channels.csv", "fig4_orthonormality.json"] {
        assert!(root.join(f).exists(), "{f}");
    }
    let summary: Vec<serde_json::Value> =
        serde_json::from_str(&std::fs::read_to_string(root.join("fig4_orthonormality.json")).unwrap()).unwrap();
    for s in summary.iter().filter(|s| s["method"] != "pls") {
        assert!(s["max_offdiag"].as_f64().unwrap() < 1e-6, "{s}");
    }
    let images = std::fs::read_to_string(root.join("fig2_images.csv")).unwrap();
    assert_eq!(images.lines().count(), 1 + 6 * 16 * 16);

    let r = effchan(&["--config", &cfg, "--out", out, "export", "--format", "csv"]);
    assert!(r.status.success());
    let bank = std::fs::read_to_string(Path::new(out).join("exports/cg_n80.csv")).unwrap();
    assert!(bank.starts_with("channel,row,col,value"));
    assert_eq!(bank.lines().count(), 1 + 25 * 16 * 16);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn configs_round_trip_through_json(
        seed in any::<u64>(),
        counts in proptest::collection::btree_set(1usize..=30, 1..6),
        sizes in proptest::collection::btree_set(2usize..500, 1..4),
    ) {
        let mut c = ExperimentConfig::desk();
        c.seeds.master = seed;
        c.sweep.channel_counts = counts.into_iter().collect();
        c.sweep.train_sizes = sizes.into_iter().map(|n| 2 * n).collect();
        c.observers.cio = false;
        c.validate().unwrap();
        let back: ExperimentConfig = serde_json::from_str(&serde_json::to_string(&c).unwrap()).unwrap();
        prop_assert_eq!(back, c);
    }
}
