use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use dtn_cli::commands::{self, SweepParam, TimingOptions, REPORT_FILE};
use dtn_cli::report::payload_json;
use dtn_cli::{load_model, save_model, DataSpec, FileSource, Resize, RunManifest, RunReportFile};
use dtn_core::data::{gen_synth_shift, write_idx};
use dtn_core::SynthShiftSpec;
use tempfile::TempDir;

fn dtn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dtn")).args(args).output().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// The benchmark, shrunk so a full run takes a fraction of a second.
fn small_manifest(seed: u64) -> RunManifest {
    let mut m = RunManifest::benchmark(seed);
    if let DataSpec::Synthetic(spec) = &mut m.data {
        spec.samples_per_class = 60;
    }
    m.config.batch_size = 40;
    m.config.label_iters = 5;
    m.config.epochs_per_iter = 3;
    m.config.baseline_epochs = 3;
    m
}

fn write_manifest(dir: &Path, name: &str, m: &RunManifest) -> PathBuf {
    let path = dir.join(name);
    m.save(&path).unwrap();
    path
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn train_writes_a_bounded_consistent_report() {
    let tmp = TempDir::new().unwrap();
    let manifest = write_manifest(tmp.path(), "run.toml", &small_manifest(0));
    let out = tmp.path().join("out");
    let o = dtn(&["train", s(&manifest), "--out", s(&out), "--lambda", "10", "--mu", "10", "--label-iters", "5"]);
    assert!(o.status.success(), "{}", stderr(&o));
    for f in [REPORT_FILE, "model.json", "iterations.csv", "epochs.csv"] {
        assert!(out.join(f).is_file(), "{f} missing");
    }
    let report = RunReportFile::load(&out.join(REPORT_FILE)).unwrap();
    let r = &report.result;
    assert!(r.iterations.len() <= 6);
    assert_eq!(r.iterations.len(), r.iterations_executed + 1);
    assert_eq!(report.timing.epoch_seconds.len(), r.epochs.len());
    assert_eq!(r.epochs.len(), 3 + 3 * r.iterations_executed);
    for it in &r.iterations {
        let a = it.target_accuracy.unwrap();
        assert!((0.0..=1.0).contains(&a));
    }
    let rows = std::fs::read_to_string(out.join("iterations.csv")).unwrap();
    assert_eq!(rows.lines().count(), r.iterations.len() + 1);
}

#[test]
fn same_manifest_gives_identical_report_payloads() {
    let tmp = TempDir::new().unwrap();
    let manifest = write_manifest(tmp.path(), "run.toml", &small_manifest(3));
    let mut payloads = Vec::new();
    for out in ["a", "b"] {
        let out = tmp.path().join(out);
        let o = dtn(&["train", s(&manifest), "--out", s(&out)]);
        assert!(o.status.success(), "{}", stderr(&o));
        let text = std::fs::read_to_string(out.join(REPORT_FILE)).unwrap();
        payloads.push(payload_json(&text).unwrap());
        let model_a = std::fs::read(tmp.path().join("a").join("model.json")).unwrap();
        assert_eq!(model_a, std::fs::read(out.join("model.json")).unwrap());
    }
    assert_eq!(payloads[0], payloads[1]);
    assert!(!payloads[0].contains("\"timing\""));
}

#[test]
fn different_seed_changes_the_report() {
    let tmp = TempDir::new().unwrap();
    let manifest = write_manifest(tmp.path(), "run.toml", &small_manifest(3));
    let a = commands::cmd_train(&manifest, &Default::default(), Some(&tmp.path().join("a"))).unwrap();
    let over = dtn_cli::Overrides { seed: Some(4), ..Default::default() };
    let b = commands::cmd_train(&manifest, &over, Some(&tmp.path().join("b"))).unwrap();
    assert_eq!(b.manifest.config.seed, 4);
    assert_ne!(a.payload_json(), b.payload_json());
}

#[test]
fn missing_data_file_exits_2_naming_the_path() {
    let tmp = TempDir::new().unwrap();
    let mut m = small_manifest(0);
    m.data = DataSpec::Files {
        source: FileSource::Delimited {
            path: "no_such_source.csv".into(),
            has_labels: true,
            delimiter: ',',
            resize: None,
        },
        target: FileSource::Delimited {
            path: "no_such_target.csv".into(),
            has_labels: false,
            delimiter: ',',
            resize: None,
        },
    };
    let manifest = write_manifest(tmp.path(), "run.toml", &m);
    let o = dtn(&["train", s(&manifest)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("no_such_source.csv"), "{}", stderr(&o));
}

#[test]
fn missing_or_malformed_manifest_exits_2() {
    let tmp = TempDir::new().unwrap();
    let o = dtn(&["train", s(&tmp.path().join("absent.toml"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("absent.toml"));

    let bad = tmp.path().join("bad.toml");
    std::fs::write(&bad, "format_version = 1\n[architecture]\ndims = [2, 3]\n[data]\nkind = \"nothing\"\n").unwrap();
    let o = dtn(&["train", s(&bad)]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));

    let mut m = small_manifest(0);
    m.format_version = 99;
    let future = write_manifest(tmp.path(), "future.toml", &m);
    let o = dtn(&["train", s(&future)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("format_version"));
}

#[test]
fn invalid_flags_exit_2() {
    let tmp = TempDir::new().unwrap();
    let manifest = write_manifest(tmp.path(), "run.toml", &small_manifest(0));
    assert_eq!(dtn(&["train", s(&manifest), "--target-nll", "maybe"]).status.code(), Some(2));
    assert_eq!(dtn(&["train", s(&manifest), "--batch-size", "7"]).status.code(), Some(2));
    assert_eq!(dtn(&["train", s(&manifest), "--lr", "-1"]).status.code(), Some(2));
}

#[test]
fn numerical_failure_exits_3_and_keeps_a_partial_report() {
    let tmp = TempDir::new().unwrap();
    let manifest = write_manifest(tmp.path(), "run.toml", &small_manifest(0));
    let out = tmp.path().join("out");
    let o = dtn(&["train", s(&manifest), "--out", s(&out), "--lambda", "1e308"]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    assert!(stderr(&o).contains("numerical"));
    let report = RunReportFile::load(&out.join(REPORT_FILE)).unwrap();
    assert_eq!(report.result.iterations.len(), 1);
    assert!(!out.join("model.json").exists());
}

#[test]
fn target_nll_flag_reaches_the_config() {
    let tmp = TempDir::new().unwrap();
    let manifest = write_manifest(tmp.path(), "run.toml", &small_manifest(0));
    let out = tmp.path().join("out");
    let o = dtn(&["train", s(&manifest), "--out", s(&out), "--target-nll", "off", "--epochs", "2", "--lr", "0.002"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let c = RunReportFile::load(&out.join(REPORT_FILE)).unwrap().manifest.config;
    assert!(!c.target_nll);
    assert_eq!(c.epochs_per_iter, 2);
    assert_eq!(c.learning_rate, 0.002);
}

#[test]
fn sweep_rejects_an_empty_value_list() {
    let tmp = TempDir::new().unwrap();
    let manifest = write_manifest(tmp.path(), "run.toml", &small_manifest(0));
    let o = dtn(&["sweep", s(&manifest), "--param", "lambda_mu", "--values", "", "--out", s(&tmp.path().join("sw"))]);
    assert_eq!(o.status.code(), Some(2));
    let o = dtn(&["sweep", s(&manifest), "--param", "gamma", "--values", "1", "--out", s(&tmp.path().join("sw"))]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn iters_sweep_records_one_series_per_value() {
    let tmp = TempDir::new().unwrap();
    let manifest = write_manifest(tmp.path(), "run.toml", &small_manifest(1));
    let out = tmp.path().join("sw");
    let o = dtn(&["sweep", s(&manifest), "--param", "iters", "--values", "0,1,2,4", "--seeds", "2", "--out", s(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let summary: commands::SweepSummary =
        serde_json::from_str(&std::fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary.medians.len(), 4);
    assert_eq!(summary.points.len(), 8);
    for p in &summary.points {
        assert!(p.error.is_none());
        assert!(p.final_accuracy.is_some());
        assert!(p.iterations_executed <= p.value as usize);
        assert_eq!(p.accuracy_series.len(), p.iterations_executed + 1);
    }
    // every value of a replicate shares its baseline
    for r in 0..2 {
        let base: Vec<_> = summary.points.iter().filter(|p| p.replicate == r).map(|p| p.baseline_accuracy).collect();
        assert!(base.windows(2).all(|w| w[0] == w[1]));
    }
    assert!(out.join("iters-4").join("seed-1").join(REPORT_FILE).is_file());
    let medians = std::fs::read_to_string(out.join("medians.csv")).unwrap();
    assert_eq!(medians.lines().count(), 5);
}

#[test]
fn sweep_records_failed_points_and_continues() {
    let tmp = TempDir::new().unwrap();
    let summary = commands::run_sweep(&small_manifest(0), tmp.path(), SweepParam::LambdaMu, &[1e308, 1.0], 1, 1, None).unwrap();
    assert!(summary.points[0].error.as_deref().unwrap().contains("numerical"));
    assert!(summary.points[0].final_accuracy.is_none());
    assert!(summary.points[1].error.is_none());
    assert_eq!(summary.medians[0].failed, 1);
    assert_eq!(summary.medians[1].failed, 0);
}

#[test]
fn sweep_results_do_not_depend_on_worker_count() {
    let run = |workers| {
        let mut s = commands::run_sweep(&small_manifest(2), Path::new(""), SweepParam::BatchSize, &[20.0, 60.0], 2, workers, None).unwrap();
        s.points.iter_mut().for_each(|p| p.seconds = 0.0);
        s
    };
    assert_eq!(run(1), run(3));
}

#[test]
fn timing_series_for_a_single_size() {
    let options = TimingOptions { dim: 4, hidden: 8, ..TimingOptions::default() };
    let series = commands::run_timing(&[1000], &options).unwrap();
    assert_eq!(series.rows.len(), 1);
    assert_eq!(series.rows[0].epoch_seconds.len(), 3);
    assert!(series.r_squared.is_none());
    assert!(commands::run_timing(&[2000, 1000], &options).is_err());
    assert!(commands::run_timing(&[], &options).is_err());
    assert!(commands::run_timing(&[1001], &options).is_err());
}

#[test]
fn linear_fit_examples() {
    let (slope, intercept, r2) = commands::linear_fit(&[1.0, 2.0, 3.0], &[3.0, 5.0, 7.0]).unwrap();
    assert!((slope - 2.0).abs() < 1e-12 && (intercept - 1.0).abs() < 1e-12 && (r2 - 1.0).abs() < 1e-12);
    // y = x^2 on 1..4: Sxy = 25, Sxx = 5, SStot = 129, so R^2 = 125/129
    let (slope, _, r2) = commands::linear_fit(&[1.0, 2.0, 3.0, 4.0], &[1.0, 4.0, 9.0, 16.0]).unwrap();
    assert!((slope - 5.0).abs() < 1e-12);
    assert!((r2 - 125.0 / 129.0).abs() < 1e-12);
    assert!(commands::linear_fit(&[1.0], &[1.0]).is_none());
}

#[test]
fn manifest_round_trips_through_toml() {
    let m = small_manifest(5);
    let back = RunManifest::from_toml(&m.to_toml(), Path::new("x.toml")).unwrap();
    assert_eq!(m, back);
}

#[test]
fn bundled_manifest_is_the_benchmark() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../manifests/benchmark.toml");
    let mut m = RunManifest::load(&path).unwrap();
    assert!(m.output_dir.is_some());
    m.output_dir = None;
    assert_eq!(m, RunManifest::benchmark(0));
}

#[test]
fn model_round_trip_is_exact_and_predict_matches_training() {
    let tmp = TempDir::new().unwrap();
    let data = tmp.path().join("data");
    let o = dtn(&["gen-synth", "--samples-per-class", "60", "--seed", "9", "--out", s(&data)]);
    assert!(o.status.success(), "{}", stderr(&o));

    let mut m = small_manifest(0);
    m.data = DataSpec::Files {
        source: FileSource::Delimited {
            path: "data/source.csv".into(),
            has_labels: true,
            delimiter: ',',
            resize: None,
        },
        target: FileSource::Delimited {
            path: "data/target.csv".into(),
            has_labels: true,
            delimiter: ',',
            resize: None,
        },
    };
    let manifest = write_manifest(tmp.path(), "files.toml", &m);
    let out = tmp.path().join("run");
    let report = commands::cmd_train(&manifest, &Default::default(), Some(&out)).unwrap();

    // the CSV files hold exactly the generated data, so the file run matches a synthetic one
    let mut synth = m.clone();
    synth.data = DataSpec::Synthetic(SynthShiftSpec {
        samples_per_class: 60,
        ..dtn_core::benchmark::data_spec(9)
    });
    let direct = commands::run_manifest(&synth, Path::new("")).unwrap();
    assert_eq!(direct.report.result, report.result);

    let model = load_model(&out.join("model.json")).unwrap();
    let again = tmp.path().join("again.json");
    save_model(&model, &again).unwrap();
    assert_eq!(load_model(&again).unwrap(), model);
    assert_eq!(std::fs::read(&again).unwrap(), std::fs::read(out.join("model.json")).unwrap());

    let preds = tmp.path().join("preds.csv");
    let p = commands::cmd_predict(&out.join("model.json"), &data.join("target.csv"), true, b',', Some(&preds)).unwrap();
    assert_eq!(p.labels, report.result.final_labels);
    assert_eq!(p.accuracy, report.result.final_accuracy);
    let o = dtn(&["predict", "--model", s(&out.join("model.json")), "--input", s(&data.join("target.csv")), "--has-labels"]);
    assert!(o.status.success());
    let printed: Vec<usize> = String::from_utf8(o.stdout).unwrap().lines().map(|l| l.parse().unwrap()).collect();
    assert_eq!(printed, p.labels);
}

#[test]
fn idx_manifest_with_resize_trains() {
    let tmp = TempDir::new().unwrap();
    // 4x4 "images": two bright quadrants per class, shifted between domains
    let spec = SynthShiftSpec {
        dim: 16,
        translation: vec![0.5; 16],
        samples_per_class: 30,
        ..SynthShiftSpec::benchmark(30, 1)
    };
    let (source, target) = gen_synth_shift(&spec).unwrap();
    let squash = |ds: &dtn_core::DomainDataset| {
        let rows: Vec<Vec<f64>> = ds.samples().map(|x| x.iter().map(|v| 1.0 / (1.0 + (-v).exp())).collect()).collect();
        dtn_core::DomainDataset::from_rows(&rows, ds.labels().map(<[usize]>::to_vec), "img", ds.role).unwrap()
    };
    write_idx(&squash(&source), 4, 4, &tmp.path().join("s-img"), Some(&tmp.path().join("s-lab"))).unwrap();
    write_idx(&squash(&target), 4, 4, &tmp.path().join("t-img"), None).unwrap();
    let resize = Some(Resize { from: [4, 4], to: [3, 3] });
    let mut m = small_manifest(0);
    m.architecture.dims = vec![9, 8, 3];
    m.data = DataSpec::Files {
        source: FileSource::Idx {
            images: "s-img".into(),
            labels: Some("s-lab".into()),
            resize,
        },
        target: FileSource::Idx {
            images: "t-img".into(),
            labels: None,
            resize,
        },
    };
    let manifest = write_manifest(tmp.path(), "idx.toml", &m);
    let text = std::fs::read_to_string(&manifest).unwrap();
    assert!(text.contains("format = \"idx\""), "{text}");
    let o = dtn(&["train", s(&manifest)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let report = RunReportFile::load(&tmp.path().join("idx.run").join(REPORT_FILE)).unwrap();
    assert!(report.result.final_accuracy.is_none());
    assert_eq!(report.result.final_labels.len(), 90);
}

#[test]
fn gen_synth_reads_a_spec_file() {
    let tmp = TempDir::new().unwrap();
    let spec = SynthShiftSpec { classes: 4, samples_per_class: 5, ..SynthShiftSpec::benchmark(5, 2) };
    let path = tmp.path().join("spec.toml");
    std::fs::write(&path, toml::to_string(&spec).unwrap()).unwrap();
    let out = tmp.path().join("d");
    let o = dtn(&["gen-synth", "--spec", s(&path), "--out", s(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let source = std::fs::read_to_string(out.join("source.csv")).unwrap();
    assert_eq!(source.lines().count(), 20);
    let echoed: SynthShiftSpec = toml::from_str(&std::fs::read_to_string(out.join("spec.toml")).unwrap()).unwrap();
    assert_eq!(echoed, spec);
}
