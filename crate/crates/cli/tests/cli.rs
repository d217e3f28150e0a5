use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use ndarray::{Array2, Axis};
use ndarray_npy::read_npy;
use serde_json::Value;
use tempfile::TempDir;

use televit::config::RunConfig;
use televit::datacube::store::open_cube;
use televit::datacube::{build_samples, enumerate_samples, Split};
use televit::evaluation::{
    build_climatology, evaluate_climatology, evaluate_model, parse_report_tsv, RegionMask,
    ReportRow, GFED_REGIONS,
};
use televit::training::Checkpoint;
use televit::NormalizationStats;

fn config_path() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/synthetic.toml")
}

fn televit(args: &[&str], overrides: &[String]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_televit"));
    cmd.args(args).arg("--config").arg(config_path());
    for o in overrides {
        cmd.arg("--set").arg(o);
    }
    cmd.env("RUST_LOG", "warn").output().expect("binary runs")
}

fn ok(out: Output) -> Output {
    assert!(
        out.status.success(),
        "command failed with {:?}:\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn set(key: &str, value: impl std::fmt::Display) -> String {
    format!("{key}={value}")
}

fn set_path(key: &str, path: &Path) -> String {
    format!("{key}=\"{}\"", path.display())
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

/// Overrides pointing a run at `cube` and `out`, with short training.
fn run_overrides(cube: &Path, out: &Path) -> Vec<String> {
    vec![
        set_path("data.cube", cube),
        set_path("output_dir", out),
        set("train.epochs", 2),
        set("horizons", "[0]"),
    ]
}

/// One synthetic cube and one trained h=0 run, shared by the tests.
struct Shared {
    _dir: TempDir,
    cube: PathBuf,
    run: PathBuf,
}

fn shared() -> &'static Shared {
    static SHARED: OnceLock<Shared> = OnceLock::new();
    SHARED.get_or_init(|| {
        let dir = TempDir::new().unwrap();
        let cube = dir.path().join("cube.zarr");
        let run = dir.path().join("run");
        let o = run_overrides(&cube, &run);
        ok(televit(&["synth"], &o));
        ok(televit(&["train"], &o));
        Shared {
            _dir: dir,
            cube,
            run,
        }
    })
}

fn synth_checksum(dir: &Path, seed: u64) -> String {
    let cube = dir.join(format!("cube{seed}.zarr"));
    let out = dir.join(format!("out{seed}"));
    ok(televit(
        &["synth"],
        &[
            set_path("data.cube", &cube),
            set_path("output_dir", &out),
            set("seed", seed),
        ],
    ));
    let manifest = read_json(&out.join("synth/manifest.json"));
    assert_eq!(manifest["seed"], seed);
    manifest["checksum"].as_str().unwrap().to_string()
}

#[test]
fn synth_checksum_is_fixed_by_the_seed() {
    let a = TempDir::new().unwrap();
    let b = TempDir::new().unwrap();
    let first = synth_checksum(a.path(), 11);
    assert_eq!(first, synth_checksum(b.path(), 11));
    assert_ne!(first, synth_checksum(a.path(), 12));
}

#[test]
fn synthetic_cube_loads_back() {
    let s = shared();
    let cfg = RunConfig::load(&config_path(), &[set_path("data.cube", &s.cube)]).unwrap();
    cfg.validate_store().unwrap();
    let cube = open_cube(&s.cube, &cfg.data.schema()).unwrap();
    assert_eq!(cube.grid().shape(), (32, 64));
    assert_eq!(cube.time().len, 5 * 46);
}

#[test]
fn train_writes_one_checkpoint_per_horizon() {
    let s = shared();
    let out = TempDir::new().unwrap();
    let mut o = run_overrides(&s.cube, out.path());
    o.push(set("horizons", "[0, 16]"));
    o.push(set("train.epochs", 1));
    ok(televit(&["train", "--jobs", "2"], &o));
    let models = out.path().join("models/televit_ig");
    let mut dirs: Vec<String> = fs::read_dir(&models)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    dirs.sort();
    assert_eq!(dirs, ["h0", "h16"]);
    for h in [0, 16] {
        let dir = models.join(format!("h{h}"));
        let ckpt = Checkpoint::load(&dir.join("best.safetensors")).unwrap();
        assert_eq!(ckpt.train_config.horizon, h);
        let manifest = read_json(&dir.join("manifest.json"));
        assert_eq!(manifest["horizon"], h);
        assert_eq!(manifest["seed"], 7);
    }
}

#[test]
fn variant_flags_off_train_a_local_only_vit() {
    let s = shared();
    let out = TempDir::new().unwrap();
    let mut o = run_overrides(&s.cube, out.path());
    o.push(set("model.use_global", false));
    o.push(set("model.use_indices", false));
    o.push(set("train.epochs", 1));
    ok(televit(&["train"], &o));
    let ckpt = Checkpoint::load(&out.path().join("models/vit/h0/best.safetensors")).unwrap();
    assert!(!ckpt.model.config.use_global);
    assert!(!ckpt.model.config.use_indices);
    assert_eq!(ckpt.model.config.counts().global, 0);
    assert_eq!(ckpt.model.config.counts().indices, 0);
}

#[test]
fn rerun_with_the_same_seed_reproduces_the_log() {
    let s = shared();
    let out = TempDir::new().unwrap();
    ok(televit(&["train"], &run_overrides(&s.cube, out.path())));
    let log = |dir: &Path| fs::read_to_string(dir.join("models/televit_ig/h0/log.jsonl")).unwrap();
    let first = log(&s.run);
    assert_eq!(first.lines().count(), 2 * 46 + 2);
    assert_eq!(first, log(out.path()));

    let other = TempDir::new().unwrap();
    let mut o = run_overrides(&s.cube, other.path());
    o.push(set("seed", 8));
    ok(televit(&["train"], &o));
    assert_ne!(first, log(other.path()));
}

fn report(dir: &Path) -> Vec<ReportRow> {
    parse_report_tsv(&fs::read_to_string(dir.join("evaluate/report.tsv")).unwrap()).unwrap()
}

#[test]
fn climatology_only_evaluation_needs_no_checkpoint() {
    let s = shared();
    let out = TempDir::new().unwrap();
    let mut o = run_overrides(&s.cube, out.path());
    o.push(set("horizons", "[0, 4]"));
    ok(televit(&["evaluate", "--climatology-only"], &o));
    let rows = report(out.path());
    assert_eq!(rows.len(), 2 * (1 + GFED_REGIONS.len()));
    assert!(rows.iter().all(|r| r.model == "climatology"));

    let without = televit(&["evaluate"], &o);
    assert_eq!(without.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&without.stderr).contains("no checkpoint"));
}

fn assert_rows_match(reported: &[ReportRow], expected: &[ReportRow]) {
    assert_eq!(reported.len(), expected.len());
    for (r, e) in reported.iter().zip(expected) {
        assert_eq!(
            (&r.model, r.horizon, &r.region),
            (&e.model, e.horizon, &e.region)
        );
        assert_eq!((r.n_pos, r.n_total), (e.n_pos, e.n_total), "{}", r.region);
        match (r.auprc, e.auprc) {
            (Some(a), Some(b)) => assert!((a - b).abs() <= 5e-7, "{}: {a} vs {b}", r.region),
            (a, b) => assert_eq!(a, b),
        }
    }
}

#[test]
fn evaluation_report_matches_direct_library_calls() {
    let s = shared();
    let o = run_overrides(&s.cube, &s.run);
    let eval_out = TempDir::new().unwrap();
    let mut eo = o.clone();
    eo.push(set_path("output_dir", eval_out.path()));
    // Evaluation reads the checkpoint from the output directory, so copy it.
    let src = s.run.join("models");
    let dst = eval_out.path().join("models/televit_ig/h0");
    fs::create_dir_all(&dst).unwrap();
    fs::copy(
        src.join("televit_ig/h0/best.safetensors"),
        dst.join("best.safetensors"),
    )
    .unwrap();
    ok(televit(&["evaluate"], &eo));
    let rows = report(eval_out.path());

    let cfg = RunConfig::load(&config_path(), &o).unwrap();
    let cube = open_cube(&s.cube, &cfg.data.schema())
        .unwrap()
        .prepare(&cfg.data.drivers, &cfg.data.indices)
        .unwrap();
    let regions = RegionMask::new(cube.regions().unwrap().clone()).unwrap();
    let indices = enumerate_samples(&cube, &cfg.layout, &cfg.splits, Split::Test, 0).unwrap();
    let table = build_climatology(&cube, &[2002, 2003]).unwrap();
    let raw = NormalizationStats::identity(&cube, &cfg.layout);
    let raw_samples = build_samples(&cube, &raw, &cfg.layout, &indices).unwrap();
    let clim = evaluate_climatology(&table, &cube, &raw_samples, &regions)
        .unwrap()
        .report("climatology", 0)
        .unwrap();

    let ckpt = Checkpoint::load(&dst.join("best.safetensors")).unwrap();
    let samples =
        build_samples(&cube, ckpt.stats.as_ref().unwrap(), &cfg.layout, &indices).unwrap();
    let model = evaluate_model(&ckpt.model, &samples, &regions)
        .unwrap()
        .report("televit_ig", 0)
        .unwrap();

    let n = clim.len();
    assert_rows_match(&rows[..n], &clim);
    assert_rows_match(&rows[n..], &model);
    let global = |rows: &[ReportRow]| rows[0].auprc.unwrap();
    assert!(global(&model) > global(&clim));
}

#[test]
fn predict_covers_the_globe() {
    let s = shared();
    ok(televit(
        &["predict", "--date", "2005-03-10", "--horizon", "0"],
        &run_overrides(&s.cube, &s.run),
    ));
    let dir = s.run.join("predict/televit_ig_h0_2005-03-06");
    let scores: Array2<f64> = read_npy(dir.join("scores.npy")).unwrap();
    let valid: Array2<bool> = read_npy(dir.join("valid.npy")).unwrap();
    assert_eq!(scores.dim(), (32, 64));
    assert_eq!(valid.dim(), (32, 64));
    assert!(scores.iter().all(|v| (0.0..=1.0).contains(v)));
    assert!(valid.iter().any(|&v| v));
    let manifest = read_json(&dir.join("manifest.json"));
    assert_eq!(manifest["input_date"], "2005-03-06");
    assert_eq!(manifest["seed"], 7);
}

#[test]
fn inspect_exports_one_sample_with_its_completeness_gap() {
    let s = shared();
    ok(televit(
        &[
            "inspect",
            "--date",
            "2005-07-01",
            "--horizon",
            "0",
            "--patch",
            "1,2",
        ],
        &run_overrides(&s.cube, &s.run),
    ));
    let dir = s.run.join("inspect/televit_ig_h0_2005-06-26");
    let manifest = read_json(&dir.join("manifest.json"));
    let patches = manifest["patches"].as_array().unwrap();
    assert_eq!(patches.len(), 1);
    let p = &patches[0];
    assert_eq!(p["sample"]["row"], 1);
    assert_eq!(p["sample"]["col"], 2);
    assert_eq!(manifest["ig_steps"], 64);
    assert!(p["completeness_gap"].as_f64().unwrap() >= 0.0);
    assert!(p["relative_gap"].as_f64().unwrap() < 0.01);
    assert!(manifest["model_id"].as_str().unwrap().len() == 64);

    let patch_dir = dir.join("r1_c2");
    // 16x16 window in 4x4 tokens; 16x8 global view in 4x4 tokens.
    let local: Array2<u64> = read_npy(patch_dir.join("variable_map_local.npy")).unwrap();
    let global: Array2<u64> = read_npy(patch_dir.join("variable_map_global.npy")).unwrap();
    assert_eq!(local.dim(), (4, 4));
    assert_eq!(global.dim(), (4, 2));
    assert!(local.iter().chain(&global).all(|&c| c < 14));

    let rollout: Array2<f64> = read_npy(patch_dir.join("rollout.npy")).unwrap();
    assert_eq!(rollout.dim(), (16 + 8 + 10, 16 + 8 + 10));
    for row in rollout.axis_iter(Axis(0)) {
        assert!((row.sum() - 1.0).abs() < 1e-9);
    }
    let stats = read_json(&dir.join("token_stats.json"));
    assert_eq!(stats["local"]["n"], 16 * 16);
}

#[test]
fn unknown_keys_are_rejected_with_their_path() {
    let s = shared();
    let out = TempDir::new().unwrap();
    let mut o = run_overrides(&s.cube, out.path());
    o.push(set("train.epochz", 3));
    let bad = televit(&["train"], &o);
    assert_eq!(bad.status.code(), Some(2));
    let err = String::from_utf8_lossy(&bad.stderr);
    assert!(err.contains("train") && err.contains("epochz"), "{err}");

    let mut o = run_overrides(&s.cube, out.path());
    o.push(set("encoder.heads", "\"many\""));
    let bad = televit(&["train"], &o);
    assert_eq!(bad.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&bad.stderr).contains("encoder.heads"));
    assert!(!out.path().join("models").exists());
}

#[test]
fn errors_map_to_category_exit_codes() {
    let s = shared();
    let o = run_overrides(&s.cube, &s.run);
    let out_of_range = televit(&["predict", "--date", "1990-01-01", "--horizon", "0"], &o);
    assert_eq!(out_of_range.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out_of_range.stderr).contains("input-domain"));

    let missing = televit(&["train"], &[set_path("data.cube", &s.cube.join("absent"))]);
    assert_eq!(missing.status.code(), Some(8));
}
