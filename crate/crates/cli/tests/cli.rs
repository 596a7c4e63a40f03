use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use qualperf::data::{load_quality_table, load_records, Label, Schema};
use qualperf::eval::{pooled_comparison, PooledOptions};
use qualperf::model_file::load_model;
use qualperf::predict::{predict_batch, PredictOptions};
use sha2::{Digest, Sha256};

fn qualperf(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qualperf")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = qualperf(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn sha(path: &Path) -> Vec<u8> {
    Sha256::digest(fs::read(path).unwrap()).to_vec()
}

fn read_csv(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let mut rdr = csv::Reader::from_path(path).unwrap();
    let header = rdr.headers().unwrap().iter().map(str::to_string).collect();
    let rows = rdr
        .records()
        .map(|r| r.unwrap().iter().map(str::to_string).collect())
        .collect();
    (header, rows)
}

fn col(header: &[String], name: &str) -> usize {
    header.iter().position(|h| h == name).unwrap_or_else(|| panic!("no column {name}"))
}

/// Default synthetic data plus a quick cluster-mode model set.
struct Fixture {
    _dir: tempfile::TempDir,
    root: PathBuf,
    data: PathBuf,
    models: PathBuf,
}

fn fixture(targets: &str) -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().to_path_buf();
    let data = root.join("data.csv");
    let models = root.join("models");
    ok(&["synth", "--output", s(&data)]);
    ok(&[
        "train", "--input", s(&data), "--output", s(&models), "--mode", "cluster", "--kmin", "1", "--kmax", "3",
        "--params", "VVI", "--fmr-targets", targets, "--restarts", "2",
    ]);
    Fixture {
        _dir: dir,
        root,
        data,
        models,
    }
}

#[test]
fn synth_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("d.csv");
    ok(&["synth", "--output", s(&out)]);
    let text = fs::read_to_string(&out).unwrap();
    assert_eq!(text.lines().next().unwrap(), "score,label,q1,q2,pool");
    assert_eq!(text.lines().count(), 15_001);
}

#[test]
fn synth_bad_config_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nowhere.json");
    let out = qualperf(&["synth", "--config", s(&missing), "--output", s(&dir.path().join("x.csv"))]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("nowhere.json"));
}

#[test]
fn synth_config_file_and_seed_override() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    fs::write(&cfg, r#"{"n_match": 4, "n_nonmatch": 6, "seed": 5}"#).unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    let c = dir.path().join("c.csv");
    ok(&["synth", "--config", s(&cfg), "--output", s(&a)]);
    ok(&["synth", "--config", s(&cfg), "--output", s(&b)]);
    ok(&["synth", "--config", s(&cfg), "--seed", "6", "--output", s(&c)]);
    assert_eq!(fs::read_to_string(&a).unwrap().lines().count(), 251);
    assert_eq!(sha(&a), sha(&b));
    assert_ne!(sha(&a), sha(&c));

    fs::write(&cfg, r#"{"n_match": 4, "colour": 1}"#).unwrap();
    let out = qualperf(&["synth", "--config", s(&cfg), "--output", s(&a)]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn train_writes_one_model_per_target() {
    let f = fixture("0.0001,0.0003,0.001,0.003,0.01,0.03,0.1,0.3");
    let models: Vec<_> = fs::read_dir(&f.models)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .filter(|n| n.starts_with("model_fmr"))
        .collect();
    assert_eq!(models.len(), 8);
    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(f.models.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["models"].as_array().unwrap().len(), 8);
    for m in manifest["models"].as_array().unwrap() {
        assert_eq!(m["training_shape"], serde_json::json!([500, 4]));
        assert!(f.models.join(m["training_data"].as_str().unwrap()).exists());
    }
}

#[test]
fn train_logs_the_training_shapes() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data.csv");
    ok(&["synth", "--output", s(&data)]);
    let grid = ok(&[
        "train", "--input", s(&data), "--output", s(&dir.path().join("g")), "--kmin", "2", "--kmax", "2",
        "--params", "VVV", "--fmr-targets", "0.01",
    ]);
    assert!(grid.contains("training matrix 2000x4"), "{grid}");
    let cluster = ok(&[
        "train", "--input", s(&data), "--output", s(&dir.path().join("c")), "--mode", "cluster", "--kmin", "2",
        "--kmax", "2", "--params", "VVI", "--fmr-targets", "0.01",
    ]);
    assert!(cluster.contains("training matrix 500x4"), "{cluster}");
}

fn write_queries(path: &Path, rows: &[(f64, f64)]) {
    let mut text = String::from("id,q1,q2\n");
    for (i, (a, b)) in rows.iter().enumerate() {
        text.push_str(&format!("r{i},{a},{b}\n"));
    }
    fs::write(path, text).unwrap();
}

#[test]
fn predict_matches_the_library() {
    let f = fixture("0.01");
    let queries = f.root.join("q.csv");
    let grid: Vec<(f64, f64)> = (0..60).map(|i| (-2.4 + 0.08 * i as f64, 2.0 - 0.07 * i as f64)).collect();
    write_queries(&queries, &grid);
    let out = f.root.join("pred.csv");
    let model = f.models.join("model_fmr0.01.json");
    ok(&["predict", "--model", s(&model), "--input", s(&queries), "--output", s(&out), "--seed", "4"]);

    let doc = load_model(&model).unwrap();
    let table = load_quality_table(&queries, None).unwrap();
    let opts = PredictOptions {
        seed: 4,
        ..PredictOptions::default()
    };
    let expected = predict_batch(&doc.model().unwrap(), &table.quality, &opts).unwrap();
    let (header, rows) = read_csv(&out);
    assert_eq!(&header[..3], ["id", "q1", "q2"]);
    assert_eq!(rows.len(), expected.len());
    let num = |row: &[String], name: &str| -> f64 { row[col(&header, name)].parse().unwrap() };
    for (row, p) in rows.iter().zip(&expected) {
        assert_eq!(num(row, "fmr_pred"), p.expected[0]);
        assert_eq!(num(row, "fnmr_pred"), p.expected[1]);
        assert_eq!(num(row, "fnmr_raw"), p.expected_raw[1]);
        let iv = p.interval.as_ref().unwrap();
        assert_eq!((num(row, "fmr_lo"), num(row, "fmr_hi")), iv[0]);
        assert_eq!((num(row, "fnmr_lo"), num(row, "fnmr_hi")), iv[1]);
        assert_eq!(row[col(&header, "support_flag")], p.support.as_str());
    }

    // the manifest selects the same model
    let via_manifest = f.root.join("pred2.csv");
    let manifest = f.models.join("manifest.json");
    ok(&["predict", "--model", s(&manifest), "--input", s(&queries), "--output", s(&via_manifest), "--seed", "4"]);
    assert_eq!(sha(&out), sha(&via_manifest));
}

#[test]
fn support_flags() {
    let f = fixture("0.01");
    let queries = f.root.join("q.csv");
    let centers: Vec<(f64, f64)> = (0..25).map(|i| ((i / 5) as f64 - 2.0, (i % 5) as f64 - 2.0)).collect();
    write_queries(&queries, &[centers, vec![(40.0, -40.0)]].concat());
    let out = f.root.join("p.csv");
    ok(&[
        "predict", "--model", s(&f.models.join("manifest.json")), "--input", s(&queries), "--output", s(&out),
        "--n-mc", "500",
    ]);
    let (header, rows) = read_csv(&out);
    let flag = col(&header, "support_flag");
    for row in &rows[..25] {
        assert_eq!(row[flag], "ok");
        for name in ["fmr_pred", "fnmr_pred", "fmr_lo", "fnmr_hi"] {
            assert!(row[col(&header, name)].parse::<f64>().unwrap().is_finite());
        }
    }
    assert_eq!(rows[25][flag], "low_support");
}

#[test]
fn predict_rejects_wrong_quality_dimension() {
    let f = fixture("0.01");
    let queries = f.root.join("q.csv");
    fs::write(&queries, "q1\n0.5\n").unwrap();
    let out = qualperf(&[
        "predict", "--model", s(&f.models.join("model_fmr0.01.json")), "--input", s(&queries), "--output",
        s(&f.root.join("p.csv")),
    ]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn usage_errors_exit_with_one() {
    let f = fixture("0.01,0.1");
    let queries = f.root.join("q.csv");
    write_queries(&queries, &[(0.0, 0.0)]);
    let p = f.root.join("p.csv");
    // two models and no --fmr-target
    let out = qualperf(&["predict", "--model", s(&f.models.join("manifest.json")), "--input", s(&queries), "--output", s(&p)]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(qualperf(&["train", "--bogus"]).status.code(), Some(1));
    assert_eq!(qualperf(&[]).status.code(), Some(1));
    let out = qualperf(&[
        "train", "--input", s(&f.data), "--output", s(&f.root.join("x")), "--fmr-targets", "0.1,abc",
    ]);
    assert_eq!(out.status.code(), Some(1));
    let out = qualperf(&["train", "--input", s(&f.data), "--output", s(&f.root.join("x")), "--params", "XYZ"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn missing_input_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = qualperf(&["train", "--input", s(&dir.path().join("none.csv")), "--output", s(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("none.csv"));
}

#[test]
fn single_pool_report_has_one_row_per_measure() {
    let f = fixture("0.01");
    let text = fs::read_to_string(&f.data).unwrap();
    let single = f.root.join("single.csv");
    let mut lines = text.lines();
    let mut out = format!("{}\n", lines.next().unwrap());
    for l in lines {
        let (head, _) = l.rsplit_once(',').unwrap();
        out.push_str(&format!("{head},all\n"));
    }
    fs::write(&single, out).unwrap();
    let dir = f.root.join("eval");
    ok(&["evaluate", "--model", s(&f.models.join("manifest.json")), "--input", s(&single), "--output", s(&dir)]);
    let (header, rows) = read_csv(&dir.join("pooled_report.csv"));
    assert_eq!(rows.len(), 2);
    let measure = col(&header, "measure");
    assert_eq!((rows[0][measure].as_str(), rows[1][measure].as_str()), ("fmr", "fnmr"));
    assert!(rows.iter().all(|r| r[col(&header, "pool")] == "all"));
}

#[test]
fn evaluate_report_matches_the_library() {
    let f = fixture("0.01,0.1");
    let dir = f.root.join("eval");
    ok(&[
        "evaluate", "--model", s(&f.models.join("manifest.json")), "--input", s(&f.data), "--output", s(&dir), "--plots",
    ]);
    let (header, rows) = read_csv(&dir.join("pooled_report.csv"));
    assert_eq!(rows.len(), 2 * 25 * 2);
    let rs = load_records(&f.data, &Schema::default()).unwrap();
    let quality: Vec<Vec<f64>> = rs.records.iter().map(|r| r.quality.clone()).collect();
    let opts = PredictOptions {
        n_mc: 0,
        ..PredictOptions::default()
    };
    let mut expected = Vec::new();
    for t in ["0.01", "0.1"] {
        let doc = load_model(f.models.join(format!("model_fmr{t}.json"))).unwrap();
        let preds: Vec<Vec<f64>> = predict_batch(&doc.model().unwrap(), &quality, &opts)
            .unwrap()
            .into_iter()
            .map(|p| p.expected)
            .collect();
        expected.push(pooled_comparison(&rs, &preds, &doc.operating_point, &PooledOptions::default()).unwrap());
    }
    let lib_rows: Vec<_> = expected.iter().flat_map(|pc| pc.rows.iter().map(move |r| (pc, r))).collect();
    let num = |row: &[String], name: &str| -> f64 { row[col(&header, name)].parse().unwrap() };
    for (row, (pc, r)) in rows.iter().zip(&lib_rows) {
        let truth = r.truth.unwrap();
        assert_eq!(num(row, "threshold"), pc.operating_point.threshold);
        assert_eq!(row[col(&header, "pool")], r.pool);
        assert_eq!(num(row, "true_mean"), truth.mean);
        assert_eq!((num(row, "true_lo"), num(row, "true_hi")), (truth.lo, truth.hi));
        assert_eq!(num(row, "true_errors") as u64, truth.errors);
        assert_eq!(num(row, "pred_mean"), r.predicted.mean);
        assert_eq!((num(row, "pred_lo"), num(row, "pred_hi")), (r.predicted.lo, r.predicted.hi));
    }
    for name in ["roc.csv", "roc_predicted.csv", "roc.svg", "erc_fmr0.01.svg", "erc_model_fmr0.1.csv"] {
        assert!(dir.join(name).exists(), "{name}");
    }
}

#[test]
fn ideal_erc_reaches_zero_at_the_true_fnmr() {
    let f = fixture("0.01");
    let dir = f.root.join("eval");
    ok(&["evaluate", "--model", s(&f.models.join("manifest.json")), "--input", s(&f.data), "--output", s(&dir)]);
    let rs = load_records(&f.data, &Schema::default()).unwrap();
    let doc = load_model(f.models.join("model_fmr0.01.json")).unwrap();
    let matches = rs.scores(Label::Match);
    let errors = matches.iter().filter(|&&m| m < doc.operating_point.threshold).count();
    let (_, rows) = read_csv(&dir.join("erc_ideal_fmr0.01.csv"));
    let first_zero = rows.iter().find(|r| r[1].parse::<f64>().unwrap() == 0.0).unwrap();
    assert_eq!(first_zero[0].parse::<f64>().unwrap(), errors as f64 / matches.len() as f64);
    let (_, roc) = read_csv(&dir.join("roc.csv"));
    assert_eq!(roc[0][2].parse::<f64>().unwrap(), errors as f64 / matches.len() as f64);
}

#[test]
fn debias_fit_and_apply() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("iqa.csv");
    let mut text = String::from("q1,q2,gamma1,gamma2,tag\n");
    for (i, g0) in [-30.0, 0.0, 30.0].iter().enumerate() {
        for (j, g1) in [-45.0, 0.0, 45.0].iter().enumerate() {
            for k in 0..5 {
                let jitter = (k as f64 - 2.0) * 0.01;
                text.push_str(&format!(
                    "{},{},{g0},{g1},t{i}{j}{k}\n",
                    0.5 + 0.01 * g0 + jitter,
                    0.1 + 0.02 * g1 - jitter
                ));
            }
        }
    }
    fs::write(&input, text).unwrap();
    let model = dir.path().join("debias.json");
    ok(&["debias", "fit", "--input", s(&input), "--output", s(&model)]);
    let t: serde_json::Value = serde_json::from_str(&fs::read_to_string(&model).unwrap()).unwrap();
    assert_eq!(t["scales"], serde_json::json!([0.1, 1.0 / 18.0]));
    let out = dir.path().join("out.csv");
    ok(&["debias", "apply", "--model", s(&model), "--input", s(&input), "--output", s(&out)]);
    let (header, rows) = read_csv(&out);
    assert_eq!(header, ["q1", "q2", "gamma1", "gamma2", "tag"]);
    assert_eq!(rows.len(), 45);
    assert_eq!(rows[0][4], "t000");

    let no_gamma = dir.path().join("plain.csv");
    fs::write(&no_gamma, "q1,q2\n0.1,0.2\n").unwrap();
    let out = qualperf(&["debias", "apply", "--model", s(&model), "--input", s(&no_gamma), "--output", s(&out)]);
    assert_eq!(out.status.code(), Some(2));
}
