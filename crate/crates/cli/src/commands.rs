use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use qualperf::data::{load_quality_table, load_records, save_records, Label, QualityTable, RecordSet, Schema};
use qualperf::debias::{fit_rows, transform_quality, transform_records, DebiasRow, DebiasTransform, DEFAULT_SCALE_A, DEFAULT_SCALE_B};
use qualperf::eval::{default_stride, erc_curve, ideal_erc, pooled_comparison, random_erc, roc_points, PooledComparison, PooledOptions};
use qualperf::gmm::parse_parametrizations;
use qualperf::model_file::{
    load_manifest, load_model, model_file_name, read_json, training_file_name, write_json, Manifest, ManifestEntry,
    ModelDocument, MANIFEST_FORMAT,
};
use qualperf::perf::PerfOptions;
use qualperf::pipeline::{train as train_models, Mode, TrainConfig};
use qualperf::predict::{predict_batch, PredictOptions, Prediction};
use qualperf::synth::{generate, SynthConfig};

use crate::plot;
use crate::{DebiasCommand, EvaluateArgs, PredictArgs, SynthArgs, TrainArgs, UsageError};

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn parse_reals(list: &str, flag: &str) -> Result<Vec<f64>> {
    list.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<f64>().map_err(|_| usage(format!("--{flag}: `{s}` is not a number"))))
        .collect()
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).with_context(|| format!("cannot create directory {}", path.display()))
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    csv::Writer::from_path(path).with_context(|| format!("cannot write {}", path.display()))
}

pub fn synth(args: &SynthArgs) -> Result<()> {
    let mut cfg: SynthConfig = match &args.config {
        Some(path) => read_json(path).with_context(|| format!("reading synth config {}", path.display()))?,
        None => SynthConfig::default(),
    };
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    let rs = generate(&cfg)?;
    save_records(&rs, &args.output)?;
    log::info!("wrote {} records to {}", rs.len(), args.output.display());
    Ok(())
}

fn gamma_columns(path: &Path) -> Result<(QualityTable, Vec<Vec<f64>>)> {
    let table = load_quality_table(path, None)?;
    let gamma = table
        .columns("gamma")
        .with_context(|| format!("{}: debias mode needs gamma1..gammad columns", path.display()))?;
    Ok((table, gamma))
}

fn load_dataset(path: &Path, debias: Option<&DebiasTransform>) -> Result<RecordSet> {
    let rs = load_records(path, &Schema::default())?;
    match debias {
        None => Ok(rs),
        Some(t) => {
            let (_, gamma) = gamma_columns(path)?;
            Ok(transform_records(t, &rs, &gamma)?)
        }
    }
}

pub fn train(args: &TrainArgs) -> Result<()> {
    let params = parse_parametrizations(&args.params)?;
    let fmr_targets = parse_reals(&args.fmr_targets, "fmr-targets")?;
    let mode: Mode = args.mode.parse()?;
    let debias: Option<DebiasTransform> = match &args.debias {
        Some(p) => Some(read_json(p).with_context(|| format!("reading debias transform {}", p.display()))?),
        None => None,
    };
    let cfg = TrainConfig {
        mode,
        n_qs: args.nqs,
        n_rand: args.nrand,
        k_min: args.kmin,
        k_max: args.kmax,
        params,
        fmr_targets,
        seed: args.seed,
        perf: PerfOptions {
            prior_a: args.prior_a,
            prior_b: args.prior_b,
            min_match: args.min_match,
            min_nonmatch: args.min_nonmatch,
        },
        restarts: args.restarts,
        ..TrainConfig::default()
    };
    cfg.validate()?;
    let rs = load_dataset(&args.input, debias.as_ref())?;
    let points = train_models(&rs, &cfg)?;

    create_dir(&args.output)?;
    let mut entries = Vec::with_capacity(points.len());
    for p in points {
        let target = p.operating_point.target_fmr;
        let model_name = model_file_name(target);
        let training_name = training_file_name(target);
        let training_path = args.output.join(&training_name);
        let file = fs::File::create(&training_path).with_context(|| format!("cannot write {}", training_path.display()))?;
        p.training.write_csv(file)?;
        let [n, d] = p.info.training_shape;
        println!(
            "target FMR {target}: threshold {}, training matrix {n}x{d}, regions {}/{}, selected K={} {}",
            p.operating_point.threshold,
            p.info.n_usable,
            p.info.n_regions,
            p.model.k(),
            p.model.parametrization
        );
        entries.push(ManifestEntry {
            target_fmr: target,
            threshold: p.operating_point.threshold,
            model: model_name.clone(),
            training_data: training_name,
            k: p.model.k(),
            parametrization: p.model.parametrization,
            training_shape: p.info.training_shape,
        });
        let mut doc = ModelDocument::new(&p.model, p.operating_point, p.selection, p.info);
        doc.debias = debias.clone();
        write_json(args.output.join(model_name), &doc)?;
    }
    write_json(args.output.join("manifest.json"), &Manifest::new(rs.d_q, entries))?;
    Ok(())
}

/// Models named by a model file or a manifest, in manifest order.
pub fn load_model_set(path: &Path) -> Result<Vec<ModelDocument>> {
    let value: serde_json::Value = read_json(path).with_context(|| format!("reading {}", path.display()))?;
    match value.get("format").and_then(|f| f.as_str()) {
        Some(MANIFEST_FORMAT) => {
            let manifest = load_manifest(path)?;
            let dir = path.parent().map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from("."));
            manifest
                .models
                .iter()
                .map(|e| {
                    let p = dir.join(&e.model);
                    load_model(&p).with_context(|| format!("loading {}", p.display()))
                })
                .collect()
        }
        _ => Ok(vec![load_model(path).with_context(|| format!("loading {}", path.display()))?]),
    }
}

fn pick_model(mut docs: Vec<ModelDocument>, target: Option<f64>) -> Result<ModelDocument> {
    match target {
        Some(t) => {
            let i = docs
                .iter()
                .position(|d| (d.operating_point.target_fmr - t).abs() <= 1e-12 * t.abs().max(1.0))
                .ok_or_else(|| usage(format!("no model for target FMR {t}")))?;
            Ok(docs.swap_remove(i))
        }
        None if docs.len() == 1 => Ok(docs.pop().expect("one model")),
        None => Err(usage(format!(
            "{} models available; choose one with --fmr-target",
            docs.len()
        ))),
    }
}

/// Quality vectors of a table in the model's quality space.
fn model_quality(table: &QualityTable, doc: &ModelDocument, input: &Path) -> Result<Vec<Vec<f64>>> {
    let q = match &doc.debias {
        None => table.quality.clone(),
        Some(t) => {
            let gamma = table
                .columns("gamma")
                .with_context(|| format!("{}: the model carries a debias transform, gamma columns are required", input.display()))?;
            transform_quality(t, &table.quality, &gamma)?
        }
    };
    if let Some(first) = q.first() {
        if first.len() != doc.d_q {
            return Err(qualperf::Error::DimensionMismatch {
                expected: doc.d_q,
                actual: first.len(),
            })
            .with_context(|| format!("{}: quality dimension differs from the model", input.display()));
        }
    }
    Ok(q)
}

pub const PREDICTION_COLUMNS: [&str; 9] = [
    "fmr_pred",
    "fnmr_pred",
    "fmr_lo",
    "fmr_hi",
    "fnmr_lo",
    "fnmr_hi",
    "support_flag",
    "fmr_raw",
    "fnmr_raw",
];

fn prediction_fields(p: &Prediction) -> Vec<String> {
    let mut out = vec![p.expected[0].to_string(), p.expected[1].to_string()];
    match &p.interval {
        Some(iv) => {
            for (lo, hi) in iv {
                out.push(lo.to_string());
                out.push(hi.to_string());
            }
        }
        None => out.extend(std::iter::repeat_n(String::new(), 4)),
    }
    out.push(p.support.as_str().to_string());
    out.push(p.expected_raw[0].to_string());
    out.push(p.expected_raw[1].to_string());
    out
}

pub fn predict(args: &PredictArgs) -> Result<()> {
    let doc = pick_model(load_model_set(&args.model)?, args.fmr_target)?;
    let model = doc.model()?;
    let table = load_quality_table(&args.input, None)?;
    let q = model_quality(&table, &doc, &args.input)?;
    let opts = PredictOptions {
        alpha: args.alpha,
        n_mc: args.n_mc,
        seed: args.seed,
        density_floor: args.density_floor,
    };
    let predictions = predict_batch(&model, &q, &opts)?;
    let mut w = csv_writer(&args.output)?;
    let mut header: Vec<String> = table.headers.iter().map(str::to_string).collect();
    header.extend(PREDICTION_COLUMNS.iter().map(|s| s.to_string()));
    w.write_record(&header)?;
    for (row, p) in table.rows.iter().zip(&predictions) {
        let mut fields: Vec<String> = row.iter().map(str::to_string).collect();
        fields.extend(prediction_fields(p));
        w.write_record(&fields)?;
    }
    w.flush()?;
    let low = predictions.iter().filter(|p| p.support != qualperf::predict::SupportFlag::Ok).count();
    if low > 0 {
        log::warn!("{low} of {} rows have low support", predictions.len());
    }
    Ok(())
}

fn opt_field(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn write_pooled(w: &mut csv::Writer<fs::File>, pc: &PooledComparison) -> Result<()> {
    for r in &pc.rows {
        w.write_record([
            pc.operating_point.target_fmr.to_string(),
            pc.operating_point.threshold.to_string(),
            r.pool.clone(),
            r.measure.as_str().to_string(),
            opt_field(r.truth.map(|t| t.mean)),
            opt_field(r.truth.map(|t| t.lo)),
            opt_field(r.truth.map(|t| t.hi)),
            r.truth.map(|t| t.errors.to_string()).unwrap_or_default(),
            r.truth.map(|t| t.total.to_string()).unwrap_or_default(),
            r.predicted.mean.to_string(),
            r.predicted.lo.to_string(),
            r.predicted.hi.to_string(),
            r.predicted.n.to_string(),
        ])?;
    }
    Ok(())
}

pub const POOLED_COLUMNS: [&str; 13] = [
    "target_fmr",
    "threshold",
    "pool",
    "measure",
    "true_mean",
    "true_lo",
    "true_hi",
    "true_errors",
    "true_total",
    "pred_mean",
    "pred_lo",
    "pred_hi",
    "pred_n",
];

pub fn evaluate(args: &EvaluateArgs) -> Result<()> {
    let docs = load_model_set(&args.model)?;
    let first = docs.first().ok_or_else(|| usage("no model to evaluate"))?;
    let rs = load_dataset(&args.input, first.debias.as_ref())?;
    if rs.d_q != first.d_q {
        return Err(qualperf::Error::DimensionMismatch {
            expected: first.d_q,
            actual: rs.d_q,
        })
        .context("dataset quality dimension differs from the model");
    }
    qualperf::data::pool_indices(&rs)?;
    create_dir(&args.output)?;

    let quality: Vec<Vec<f64>> = rs.records.iter().map(|r| r.quality.clone()).collect();
    let match_idx: Vec<usize> = (0..rs.len()).filter(|&i| rs.records[i].label == Label::Match).collect();
    let match_scores: Vec<f64> = match_idx.iter().map(|&i| rs.records[i].score).collect();
    let stride = args.stride.unwrap_or_else(|| default_stride(match_idx.len()));
    let pooled_opts = PooledOptions {
        alpha: args.alpha,
        prior_a: args.prior_a,
        prior_b: args.prior_b,
    };
    let predict_opts = PredictOptions {
        alpha: args.alpha,
        n_mc: 0,
        seed: args.seed,
        density_floor: args.density_floor,
    };

    let mut pooled_w = csv_writer(&args.output.join("pooled_report.csv"))?;
    pooled_w.write_record(POOLED_COLUMNS)?;
    let mut roc_pred = Vec::with_capacity(docs.len());
    let mut erc_targets = Vec::with_capacity(docs.len());
    for doc in &docs {
        let model = doc.model()?;
        let op = doc.operating_point;
        let predictions: Vec<Vec<f64>> = predict_batch(&model, &quality, &predict_opts)?
            .into_iter()
            .map(|p| p.expected)
            .collect();
        let pc = pooled_comparison(&rs, &predictions, &op, &pooled_opts)?;
        write_pooled(&mut pooled_w, &pc)?;

        let n = predictions.len() as f64;
        roc_pred.push((
            op.threshold,
            predictions.iter().map(|p| p[0]).sum::<f64>() / n,
            predictions.iter().map(|p| p[1]).sum::<f64>() / n,
        ));

        let match_pairs: Vec<(f64, f64)> = match_idx.iter().map(|&i| (rs.records[i].score, predictions[i][1])).collect();
        let tag = op.target_fmr;
        let curves = [
            ("model", erc_curve(&match_pairs, op.threshold, stride)?),
            ("ideal", ideal_erc(&match_scores, op.threshold, stride)?),
            ("random", random_erc(&match_scores, op.threshold, stride, args.n_perm, args.seed)?),
        ];
        for (name, curve) in &curves {
            let path = args.output.join(format!("erc_{name}_fmr{tag}.csv"));
            let file = fs::File::create(&path).with_context(|| format!("cannot write {}", path.display()))?;
            curve.write_csv(file)?;
        }
        erc_targets.push(tag);
    }
    pooled_w.flush()?;

    let mut thresholds: Vec<f64> = docs.iter().map(|d| d.operating_point.threshold).collect();
    thresholds.sort_by(f64::total_cmp);
    let mut w = csv_writer(&args.output.join("roc.csv"))?;
    w.write_record(["threshold", "fmr", "fnmr"])?;
    for p in roc_points(&rs, &thresholds)? {
        w.write_record([p.threshold.to_string(), p.fmr.to_string(), p.fnmr.to_string()])?;
    }
    w.flush()?;
    roc_pred.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut w = csv_writer(&args.output.join("roc_predicted.csv"))?;
    w.write_record(["threshold", "fmr", "fnmr"])?;
    for (t, fmr, fnmr) in &roc_pred {
        w.write_record([t.to_string(), fmr.to_string(), fnmr.to_string()])?;
    }
    w.flush()?;

    if args.plots {
        plot::roc_plot(&args.output)?;
        for tag in erc_targets {
            plot::erc_plot(&args.output, tag)?;
        }
    }
    Ok(())
}

fn parse_scales(scales: Option<&str>, d: usize) -> Result<Vec<f64>> {
    match scales {
        Some(s) => {
            let v = parse_reals(s, "scales")?;
            if v.len() != d {
                return Err(usage(format!("--scales needs {d} values, got {}", v.len())));
            }
            Ok(v)
        }
        None if d == 2 => Ok(vec![DEFAULT_SCALE_A, DEFAULT_SCALE_B]),
        None => Err(usage(format!("--scales is required for {d}-dimensional quality"))),
    }
}

pub fn debias(cmd: &DebiasCommand) -> Result<()> {
    match cmd {
        DebiasCommand::Fit { input, output, scales } => {
            let (table, gamma) = gamma_columns(input)?;
            let rows: Vec<DebiasRow> = table
                .quality
                .iter()
                .zip(gamma)
                .map(|(q, g)| DebiasRow { q: q.clone(), gamma: g })
                .collect();
            let scales = parse_scales(scales.as_deref(), table.d_q())?;
            let t = fit_rows(&rows, &scales)?;
            write_json(output, &t)?;
        }
        DebiasCommand::Apply { model, input, output } => {
            let t: DebiasTransform = read_json(model).with_context(|| format!("reading {}", model.display()))?;
            let (table, gamma) = gamma_columns(input)?;
            let q = transform_quality(&t, &table.quality, &gamma)?;
            let q_cols = qualperf::data::quality_columns(&table.headers, "q");
            if q_cols.len() != t.d_out() {
                return Err(qualperf::Error::DimensionMismatch {
                    expected: t.d_out(),
                    actual: q_cols.len(),
                }
                .into());
            }
            let mut w = csv_writer(output)?;
            w.write_record(&table.headers)?;
            for (row, qv) in table.rows.iter().zip(&q) {
                let mut fields: Vec<String> = row.iter().map(str::to_string).collect();
                for (&c, v) in q_cols.iter().zip(qv) {
                    fields[c] = v.to_string();
                }
                w.write_record(&fields)?;
            }
            w.flush()?;
        }
    }
    Ok(())
}
