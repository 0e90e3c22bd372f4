use fraclab::harness::config::{ExperimentConfig, ExperimentKind};
use fraclab::harness::manifest::RunManifest;
use fraclab::harness::{emit_plots, presets, run_experiment};
use fraclab::{Error, Execution};
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_fraclab"))
}

#[test]
fn sequential_and_parallel_runs_have_identical_digests() {
    let cfg = presets::preset(ExperimentKind::Selftest);
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let ma = run_experiment(&cfg, a.path(), 0, Execution::Sequential).unwrap();
    let mb = run_experiment(&cfg, b.path(), 0, Execution::Parallel).unwrap();
    assert_eq!(ma.config_hash, mb.config_hash);
    assert_eq!(ma.files, mb.files);
    assert!(ma.verify(a.path()).unwrap().is_empty());
}

#[test]
fn dtn_run_writes_matrices_and_sidecars() {
    let mut cfg = presets::preset(ExperimentKind::Selftest);
    cfg.experiment.kind = ExperimentKind::Dtn;
    let dir = tempfile::tempdir().unwrap();
    let m = run_experiment(&cfg, dir.path(), 0, Execution::Parallel).unwrap();
    for f in ["dtn_fractional.csv", "dtn_fractional.json", "dtn_local.csv", "calibration.csv"] {
        assert!(m.digest_of(f).is_some(), "{f} missing");
    }
    let head = std::fs::read_to_string(dir.path().join("calibration.csv")).unwrap();
    assert!(head.starts_with("mode,wavenumber"));
    assert!(m.budget["fractional_symmetry_defect"] < 1e-6);
}

#[test]
fn refinement_is_recorded() {
    let mut cfg = presets::preset(ExperimentKind::Selftest);
    cfg.experiment.kind = ExperimentKind::SolveExtension;
    let dir = tempfile::tempdir().unwrap();
    let m = run_experiment(&cfg, dir.path(), 1, Execution::Parallel).unwrap();
    assert_eq!(m.refine, 1);
    assert_eq!(m.params["nodes_x"] as usize, 2 * (cfg.grid.nodes_x - 1) + 1);
    assert_ne!(m.config_hash, cfg.hash());
}

#[test]
fn plots_need_a_manifest() {
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(emit_plots(dir.path()), Err(Error::Listing(_))));
}

#[test]
fn cli_selftest_then_plots() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("st");
    let st = bin().args(["selftest", "--out"]).arg(&out).status().unwrap();
    assert!(st.success());
    let m = RunManifest::read(&out).unwrap();
    assert_eq!(m.kind, "selftest");
    let st = bin().args(["plots", "--out"]).arg(&out).status().unwrap();
    assert!(st.success());
}

#[test]
fn cli_config_kind_is_overridden_and_seed_applied() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = presets::preset(ExperimentKind::Selftest);
    cfg.experiment.kind = ExperimentKind::Stability;
    let path = dir.path().join("c.toml");
    std::fs::write(&path, cfg.to_toml_string().unwrap()).unwrap();
    let out = dir.path().join("run");
    let st = bin()
        .args(["selftest", "--seed", "11", "--config"])
        .arg(&path)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert!(st.success());
    let m = RunManifest::read(&out).unwrap();
    assert_eq!((m.kind.as_str(), m.seed), ("selftest", 11));
    let saved = std::fs::read_to_string(out.join("config.json")).unwrap();
    assert!(saved.contains("\"selftest\""));
}

#[test]
fn cli_rejects_a_bad_config() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    let text = presets::preset(ExperimentKind::Dtn)
        .to_toml_string()
        .unwrap()
        .replace("s = 0.75", "s = 1.5");
    std::fs::write(&path, text).unwrap();
    let o = bin().args(["dtn", "--config"]).arg(&path).output().unwrap();
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("physics.s"));
    assert!(ExperimentConfig::from_path(&path).is_err());
}
