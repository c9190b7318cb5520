use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use anyhow::{bail, Context, Result};
use aspca::data::{fit_preprocess_rows, write_table_csv};
use aspca::detector::{quantile, threshold_for_tpr, write_scores_csv};
use aspca::interpret::{interpret_with_cutoff, mark_frequencies, render_all, Heatmap};
use aspca::{
    apply_preprocess, covariance, fit as fit_model, gen_synthetic, group_by_signature, load_model,
    roc_auc, save_model, ColumnConfig, DataTable, DetectionModel, FitConfig, InterpretationReport,
    RawTable, SubspaceModel, ThresholdRule, Variant,
};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use crate::manifest::Recorder;
use crate::{DataArgs, DetectArgs, EvalArgs, FitArgs, InterpretArgs, SolverArgs, SynthArgs};

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

/// The config file, or `label`/`category` columns picked up by name.
fn column_config(args: &DataArgs, raw: &RawTable) -> Result<ColumnConfig> {
    if let Some(path) = &args.config {
        return ColumnConfig::load(path).with_context(|| format!("reading {}", path.display()));
    }
    let has = |name: &str| raw.headers.iter().any(|h| h == name);
    Ok(ColumnConfig {
        label_column: has("label").then(|| "label".into()),
        category_column: has("category").then(|| "category".into()),
        ..ColumnConfig::default()
    })
}

struct Loaded {
    raw: RawTable,
    cfg: ColumnConfig,
}

fn load_data(args: &DataArgs, rec: &mut Recorder) -> Result<Loaded> {
    let raw = RawTable::read_path(&args.data)
        .with_context(|| format!("reading {}", args.data.display()))?;
    rec.input(&args.data);
    let cfg = column_config(args, &raw)?;
    if let Some(path) = &args.config {
        rec.input(path);
    }
    Ok(Loaded { raw, cfg })
}

fn load_detector(path: &Path, rec: &mut Recorder) -> Result<DetectionModel> {
    let model = load_model(path).with_context(|| format!("loading model {}", path.display()))?;
    rec.input(path);
    Ok(model)
}

/// Preprocesses with the model's fitted spec; labels and categories come from `cfg`.
fn table_for(model: &DetectionModel, data: &Loaded) -> Result<DataTable> {
    let (table, flags) = apply_preprocess(&model.preprocessing, &data.raw, Some(&data.cfg))?;
    if !flags.unknown_categories.is_empty() {
        eprintln!(
            "warning: {} cells held categories unseen at fit time",
            flags.unknown_categories.len()
        );
    }
    Ok(table)
}

fn spe_scores(model: &DetectionModel, table: &DataTable) -> Result<Vec<f64>> {
    Ok(model
        .score_batch(&table.matrix)?
        .into_iter()
        .map(|s| s.spe)
        .collect())
}

fn fit_config(variant: Variant, d: usize, lambda: f64, s: &SolverArgs) -> FitConfig {
    let mut cfg = FitConfig::new(variant, d, lambda);
    cfg.solver.max_iter = s.max_iter;
    cfg.solver.tol = s.tol;
    cfg.solver.rho = s.rho;
    cfg.solver.seed = s.seed;
    cfg.global_opt.seed = s.seed;
    cfg.require_convergence = !s.allow_unconverged;
    cfg
}

fn training_rows(table: &DataTable, include_anomalies: bool) -> Vec<usize> {
    if include_anomalies {
        (0..table.n()).collect()
    } else {
        table.normal_rows()
    }
}

pub fn synth(args: SynthArgs) -> Result<()> {
    let rec = Recorder::start("synth");
    let table = gen_synthetic(args.seed);
    let mut w = create(&args.out)?;
    write_table_csv(&table, &mut w)?;
    w.flush()?;
    drop(w);
    let config_path = args
        .out_config
        .unwrap_or_else(|| args.out.with_extension("columns.json"));
    write_json(&config_path, &ColumnConfig::synthetic())?;
    rec.finish(
        json!({ "seed": args.seed }),
        &[&args.out, &config_path],
        json!({ "rows": table.n(), "anomalies": table.labels.as_ref().map_or(0, |l| l.iter().filter(|&&x| x).count()) }),
    )?;
    println!("wrote {} rows to {}", table.n(), args.out.display());
    Ok(())
}

#[derive(Serialize)]
struct FitSummary<'a> {
    variant: Variant,
    d: usize,
    lambda: f64,
    training_rows: usize,
    l11: f64,
    variance_abnormal: f64,
    threshold: f64,
    threshold_rule: ThresholdRule,
    components: Vec<String>,
    model: &'a SubspaceModel,
}

pub fn fit(args: FitArgs) -> Result<()> {
    let mut rec = Recorder::start("fit");
    let data = load_data(&args.data, &mut rec)?;
    let labels = data.raw.labels(&data.cfg)?;
    let rows: Vec<usize> = match (&labels, args.include_anomalies) {
        (Some(l), false) => (0..l.len()).filter(|&i| !l[i]).collect(),
        _ => (0..data.raw.rows.len()).collect(),
    };
    if rows.is_empty() {
        bail!("no training rows");
    }
    let spec = fit_preprocess_rows(&data.raw, &data.cfg, Some(&rows))?;
    for name in &spec.zero_variance {
        eprintln!("warning: column '{name}' is constant on the training rows");
    }
    let (table, _) = apply_preprocess(&spec, &data.raw, Some(&data.cfg))?;
    let train = table.subset(&rows);
    let cfg = fit_config(args.variant, args.d, args.lambda, &args.solver);
    cfg.validate(table.p())?;
    let cov = covariance(&train.matrix)?;
    let sub = fit_model(&cov, &cfg)?;
    for c in sub.diagnostics.iter().filter(|c| !c.converged) {
        eprintln!(
            "warning: component {} stopped at max-iter {} (violation {:.3e})",
            c.index,
            c.iterations,
            c.violation.max()
        );
    }
    let mut det = DetectionModel::from_subspace(&sub, 0.0, table.feature_names.clone(), spec)?;
    det.lambda = Some(args.lambda);
    let (threshold, rule) = match (args.threshold, args.target_tpr) {
        (Some(t), _) => (t, ThresholdRule::Explicit),
        (None, Some(tpr)) => {
            let Some(l) = &labels else {
                bail!("--target-tpr needs a label column");
            };
            let scores = spe_scores(&det, &table)?;
            (
                threshold_for_tpr(&scores, l, tpr)?,
                ThresholdRule::TargetTpr { tpr },
            )
        }
        (None, None) => {
            let scores = spe_scores(&det, &train)?;
            (
                aspca::choose_threshold(&scores, args.quantile, None)?,
                ThresholdRule::Quantile { q: args.quantile },
            )
        }
    };
    let det = det.with_threshold(threshold, rule)?;
    save_model(&det, &args.out_model)?;
    let summary = FitSummary {
        variant: args.variant,
        d: args.d,
        lambda: args.lambda,
        training_rows: rows.len(),
        l11: sub.l11(),
        variance_abnormal: sub.variance_abnormal,
        threshold,
        threshold_rule: rule,
        components: render_all(&det, 0.1)?,
        model: &sub,
    };
    rec.finish(
        json!({ "fit": cfg, "include_anomalies": args.include_anomalies, "columns": data.cfg }),
        &[&args.out_model],
        serde_json::to_value(&summary)?,
    )?;
    println!(
        "{} d={} lambda={}: l11 {:.4}, abnormal variance {:.6}, threshold {:.6}",
        args.variant,
        args.d,
        args.lambda,
        sub.l11(),
        sub.variance_abnormal,
        threshold
    );
    for (j, c) in summary.components.iter().enumerate() {
        println!("  {}: {c}", j + 1);
    }
    Ok(())
}

pub fn detect(args: DetectArgs) -> Result<()> {
    let mut rec = Recorder::start("detect");
    let model = load_detector(&args.model, &mut rec)?;
    let data = load_data(&args.data, &mut rec)?;
    let table = table_for(&model, &data)?;
    let threshold = match (args.threshold, args.quantile) {
        (Some(t), _) if t >= 0.0 => t,
        (Some(t), _) => bail!("threshold must be >= 0, got {t}"),
        (None, Some(q)) => quantile(&spe_scores(&model, &table)?, q)?,
        (None, None) => model.threshold,
    };
    let scored = model
        .with_threshold(threshold, ThresholdRule::Explicit)?
        .score_batch(&table.matrix)?;
    let mut w = create(&args.out_scores)?;
    write_scores_csv(&scored, &mut w)?;
    w.flush()?;
    drop(w);
    let flagged = scored.iter().filter(|s| s.is_anomaly).count();
    let mut results = json!({ "rows": scored.len(), "flagged": flagged, "threshold": threshold });
    if let Some(labels) = &table.labels {
        let tp = scored
            .iter()
            .zip(labels)
            .filter(|(s, &l)| s.is_anomaly && l)
            .count();
        results["true_positives"] = json!(tp);
        results["false_positives"] = json!(flagged - tp);
    }
    rec.finish(
        json!({ "threshold": threshold, "quantile": args.quantile, "columns": data.cfg }),
        &[&args.out_scores],
        results,
    )?;
    println!(
        "{flagged} of {} rows flagged at threshold {threshold}",
        scored.len()
    );
    Ok(())
}

#[derive(Serialize)]
struct AnomalyEntry {
    row: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    category: Option<String>,
    signature: String,
    report: InterpretationReport,
}

#[derive(Serialize)]
struct GroupEntry {
    signature: String,
    count: usize,
    members: Vec<usize>,
    dominant_component: Option<usize>,
}

#[derive(Serialize)]
struct InterpretReport {
    threshold: f64,
    cutoff: f64,
    components: Vec<String>,
    anomalies: Vec<AnomalyEntry>,
    groups: Vec<GroupEntry>,
    /// Mark frequencies per known anomaly category.
    category_marks: BTreeMap<String, Vec<aspca::interpret::MarkFrequency>>,
}

pub fn interpret(args: InterpretArgs) -> Result<()> {
    let mut rec = Recorder::start("interpret");
    let mut model = load_detector(&args.model, &mut rec)?;
    let data = load_data(&args.data, &mut rec)?;
    if let Some(t) = args.threshold {
        model = model.with_threshold(t, ThresholdRule::Explicit)?;
    }
    if !(args.cutoff >= 0.0) {
        bail!("cutoff must be >= 0, got {}", args.cutoff);
    }
    let table = table_for(&model, &data)?;
    let scored = model.score_batch(&table.matrix)?;
    let ids: Vec<usize> = (0..scored.len())
        .filter(|&i| scored[i].is_anomaly)
        .collect();
    let reports: Vec<InterpretationReport> = ids
        .iter()
        .map(|&i| interpret_with_cutoff(&model, table.row(i), args.cutoff))
        .collect::<aspca::Result<_>>()?;
    let groups = group_by_signature(&reports, &ids)?;
    let group_entries: Vec<GroupEntry> = groups
        .iter()
        .map(|g| GroupEntry {
            signature: g.signature.to_string(),
            count: g.count,
            members: g.members.clone(),
            dominant_component: dominant_component(&reports, &ids, &g.members),
        })
        .collect();
    let mut category_marks = BTreeMap::new();
    if let Some(cats) = &table.category {
        let mut by_cat: BTreeMap<&str, Vec<&aspca::Signature>> = BTreeMap::new();
        for (r, &i) in reports.iter().zip(&ids) {
            by_cat
                .entry(cats[i].as_str())
                .or_default()
                .push(&r.signature);
        }
        for (c, sigs) in by_cat {
            category_marks.insert(c.to_string(), mark_frequencies(&sigs));
        }
    }
    let components = render_all(&model, args.cutoff)?;
    let anomalies: Vec<AnomalyEntry> = reports
        .iter()
        .zip(&ids)
        .map(|(r, &i)| AnomalyEntry {
            row: i,
            category: table.category.as_ref().map(|c| c[i].clone()),
            signature: r.signature.to_string(),
            report: InterpretationReport {
                rendered_components: Vec::new(),
                ..r.clone()
            },
        })
        .collect();
    let report = InterpretReport {
        threshold: model.threshold,
        cutoff: args.cutoff,
        components,
        anomalies,
        groups: group_entries,
        category_marks,
    };
    write_json(&args.out_report, &report)?;
    let mut outputs: Vec<&Path> = vec![&args.out_report];
    let heatmap = Heatmap::from_reports(&reports, &ids, model.d());
    if let Some(p) = &args.svg_heatmap {
        std::fs::write(p, heatmap.to_svg()).with_context(|| format!("writing {}", p.display()))?;
        outputs.push(p);
    }
    if let Some(p) = &args.heatmap_csv {
        let mut w = create(p)?;
        heatmap.write_csv(&mut w)?;
        w.flush()?;
        outputs.push(p);
    }
    rec.finish(
        json!({ "threshold": model.threshold, "cutoff": args.cutoff, "columns": data.cfg }),
        &outputs,
        json!({ "anomalies": ids.len(), "groups": groups.len() }),
    )?;
    println!(
        "{} anomalies in {} signature groups",
        ids.len(),
        groups.len()
    );
    for g in &report.groups {
        println!("  {:<20} x{}", g.signature, g.count);
    }
    Ok(())
}

/// Most frequent top-ranked component among the members.
fn dominant_component(
    reports: &[InterpretationReport],
    ids: &[usize],
    members: &[usize],
) -> Option<usize> {
    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    for (r, id) in reports.iter().zip(ids) {
        if members.contains(id) {
            if let Some(c) = r.top_component() {
                *counts.entry(c).or_default() += 1;
            }
        }
    }
    counts
        .into_iter()
        .max_by(|a, b| a.1.cmp(&b.1).then(b.0.cmp(&a.0)))
        .map(|(c, _)| c)
}

#[derive(Serialize)]
struct SweepCell {
    d: usize,
    lambda: f64,
    l11: f64,
    variance_abnormal: f64,
    auc: f64,
    status: String,
}

pub fn eval(args: EvalArgs) -> Result<()> {
    let mut rec = Recorder::start("eval");
    let model = load_detector(&args.model, &mut rec)?;
    let mut data = load_data(&args.data, &mut rec)?;
    if let Some(col) = &args.labels {
        data.cfg.label_column = Some(col.clone());
    }
    if data.cfg.label_column.is_none() {
        bail!("eval needs labels: pass --labels <column> or a config with label_column");
    }
    let table = table_for(&model, &data)?;
    let labels = table.labels.clone().expect("label column is set");
    if args.sweep_d.is_none() && args.sweep_lambda.is_none() {
        let roc = roc_auc(&spe_scores(&model, &table)?, &labels)?;
        let mut w = create(&args.out)?;
        writeln!(w, "fpr,tpr")?;
        for (f, t) in &roc.points {
            writeln!(w, "{f:?},{t:?}")?;
        }
        w.flush()?;
        drop(w);
        rec.finish(
            json!({ "columns": data.cfg }),
            &[&args.out],
            json!({ "auc": roc.auc, "points": roc.points.len() }),
        )?;
        println!("AUC {:.6}", roc.auc);
        return Ok(());
    }

    let variant = model
        .variant
        .context("the model does not record its variant; sweeps need it")?;
    let ds: Vec<usize> = match args.sweep_d {
        Some((a, b)) => (a..=b).collect(),
        None => vec![model.d()],
    };
    let lambdas = args
        .sweep_lambda
        .clone()
        .unwrap_or_else(|| vec![model.lambda.unwrap_or(0.0)]);
    let train = table.subset(&training_rows(&table, args.include_anomalies));
    let cov = covariance(&train.matrix)?;
    let cells: Vec<(usize, f64)> = ds
        .iter()
        .flat_map(|&d| lambdas.iter().map(move |&l| (d, l)))
        .collect();
    // usage errors (bad d or λ) fail the whole sweep; numerical ones mark the cell
    for &(d, l) in &cells {
        fit_config(variant, d, l, &args.solver).validate(table.p())?;
    }
    let grid: Vec<SweepCell> = cells
        .par_iter()
        .map(|&(d, lambda)| {
            sweep_cell(
                &model,
                &table,
                &labels,
                &cov,
                variant,
                d,
                lambda,
                &args.solver,
            )
        })
        .collect();
    let mut w = create(&args.out)?;
    writeln!(w, "d,lambda,l11,variance_abnormal,auc,status")?;
    for c in &grid {
        writeln!(
            w,
            "{},{:?},{:?},{:?},{:?},{}",
            c.d, c.lambda, c.l11, c.variance_abnormal, c.auc, c.status
        )?;
    }
    w.flush()?;
    drop(w);
    let failed = grid.iter().filter(|c| c.status != "ok").count();
    rec.finish(
        json!({ "variant": variant, "sweep_d": ds, "sweep_lambda": lambdas, "include_anomalies": args.include_anomalies, "solver": fit_config(variant, 1, 0.0, &args.solver).solver, "columns": data.cfg }),
        &[&args.out],
        serde_json::to_value(&grid)?,
    )?;
    println!("{} cells written to {}", grid.len(), args.out.display());
    if failed > 0 {
        eprintln!("warning: {failed} cells failed numerically");
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn sweep_cell(
    model: &DetectionModel,
    table: &DataTable,
    labels: &[bool],
    cov: &aspca::Matrix,
    variant: Variant,
    d: usize,
    lambda: f64,
    solver: &SolverArgs,
) -> SweepCell {
    let run = || -> aspca::Result<SweepCell> {
        let sub = fit_model(cov, &fit_config(variant, d, lambda, solver))?;
        let det = DetectionModel::from_subspace(
            &sub,
            0.0,
            model.feature_names.clone(),
            model.preprocessing.clone(),
        )?;
        let scores: Vec<f64> = det
            .score_batch(&table.matrix)?
            .into_iter()
            .map(|s| s.spe)
            .collect();
        Ok(SweepCell {
            d,
            lambda,
            l11: sub.l11(),
            variance_abnormal: sub.variance_abnormal,
            auc: roc_auc(&scores, labels)?.auc,
            status: "ok".into(),
        })
    };
    run().unwrap_or_else(|e| SweepCell {
        d,
        lambda,
        l11: f64::NAN,
        variance_abnormal: f64::NAN,
        auc: f64::NAN,
        status: e.to_string().replace(',', ";"),
    })
}
