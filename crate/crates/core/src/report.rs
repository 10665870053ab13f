//! Evaluation reports (JSON) and the CSV tables built from them.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cost::{cost_report, expected_complexity, relative_savings, CostReport, ExitDistribution};
use crate::data::{load_tsv_with, Dataset, TsvOptions};
use crate::engine::{infer_early_exit, infer_final_exit, ExitTrace};
use crate::error::{Error, Result};
use crate::metrics::{accuracy, macro_f1, per_class_scores, present_class_macro_f1};
use crate::models::ModelKind;
use crate::persist::{load_model, SavedModel};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerClass {
    pub label: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub model_name: String,
    pub model_kind: String,
    pub num_examples: usize,
    pub skipped_empty: usize,
    /// Early-exit routing.
    pub accuracy: f64,
    pub macro_f1: f64,
    pub present_class_macro_f1: f64,
    pub per_class: Vec<PerClass>,
    /// Routing disabled; the last exit answers every query.
    pub forced_final_accuracy: f64,
    pub forced_final_macro_f1: f64,
    pub exit_counts: Vec<usize>,
    pub exit_distribution: ExitDistribution,
    pub thresholds: Vec<f64>,
    /// Per-exit mean entropy from full forward passes.
    pub mean_exit_entropies: Vec<f64>,
    pub expected_flops: f64,
    pub forced_final_flops: f64,
    pub baseline_flops: f64,
    pub relative_savings: f64,
    /// Mean of the per-query instrumented counters under routing.
    pub measured_mean_flops: f64,
    pub measured_forced_final_flops: f64,
    pub cost: CostReport,
    pub config_echo: BTreeMap<String, String>,
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str, path: &Path) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.line(),
            reason: e.to_string(),
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        Self::from_json(&text, path)
    }
}

/// Loads `path` against the model's frozen vocabulary and label set.
pub fn load_eval_data(saved: &SavedModel, path: impl AsRef<Path>) -> Result<Dataset> {
    let mut data = load_tsv_with(
        path,
        TsvOptions {
            vocab: Some(&saved.vocab),
            labels: Some(&saved.labels),
            min_count: 1,
        },
    )?;
    if saved.model.network.arch.kind == ModelKind::StackedLstm {
        data.max_len = Some(saved.model.max_len);
    }
    Ok(data)
}

/// Routed and forced-final traces for every example, in input order.
/// Routing invariants are checked on each routed trace.
pub fn trace_dataset(saved: &SavedModel, data: &Dataset) -> Result<Vec<(ExitTrace, ExitTrace)>> {
    let model = &saved.model;
    let thresholds = model
        .thresholds
        .as_ref()
        .ok_or_else(|| Error::State("model is not calibrated".into()))?;
    let n = model.num_exits();
    data.examples
        .par_iter()
        .map(|ex| {
            let routed = infer_early_exit(model, &ex.tokens)?;
            routed.check_routing(thresholds, n)?;
            let forced = infer_final_exit(model, &ex.tokens)?;
            Ok((routed, forced))
        })
        .collect()
}

pub fn evaluate(saved: &SavedModel, data: &Dataset) -> Result<EvalReport> {
    if data.is_empty() {
        return Err(Error::Config("evaluation dataset is empty".into()));
    }
    let model = &saved.model;
    let traces = trace_dataset(saved, data)?;
    let gold: Vec<usize> = data.examples.iter().map(|e| e.label).collect();
    let routed: Vec<usize> = traces.iter().map(|t| t.0.prediction).collect();
    let forced: Vec<usize> = traces.iter().map(|t| t.1.prediction).collect();
    let c = model.num_classes();
    let n = model.num_exits();

    let scores = per_class_scores(&routed, &gold, c)?;
    let mut exit_counts = vec![0usize; n];
    traces.iter().for_each(|t| exit_counts[t.0.chosen_exit - 1] += 1);
    let exit_distribution = ExitDistribution::from_counts(&exit_counts)?;

    let mut mean_exit_entropies = vec![0.0; n];
    for (_, f) in &traces {
        mean_exit_entropies
            .iter_mut()
            .zip(&f.entropies)
            .for_each(|(m, h)| *m += h);
    }
    mean_exit_entropies.iter_mut().for_each(|m| *m /= data.len() as f64);

    let seq_len = saved.config.seq_len.unwrap_or_else(|| data.mean_len_ceil());
    let cost = cost_report(model, seq_len, saved.config.include_embedding_params)?;
    let flops = cost.flops_per_exit();
    let expected_flops = expected_complexity(&flops, &exit_distribution)?;
    let baseline_flops = cost.baseline.flops as f64;
    let mean_flops = |pick: fn(&(ExitTrace, ExitTrace)) -> u64| {
        traces.iter().map(|t| pick(t) as f64).sum::<f64>() / traces.len() as f64
    };

    Ok(EvalReport {
        model_name: saved.config.display_name(),
        model_kind: model.network.arch.kind.to_string(),
        num_examples: data.len(),
        skipped_empty: data.skipped_empty,
        accuracy: accuracy(&routed, &gold)?,
        macro_f1: macro_f1(&routed, &gold, c)?,
        present_class_macro_f1: present_class_macro_f1(&scores),
        per_class: scores
            .iter()
            .zip(&saved.labels)
            .map(|(s, l)| PerClass {
                label: l.clone(),
                precision: s.precision,
                recall: s.recall,
                f1: s.f1,
                support: s.support,
            })
            .collect(),
        forced_final_accuracy: accuracy(&forced, &gold)?,
        forced_final_macro_f1: macro_f1(&forced, &gold, c)?,
        exit_counts,
        exit_distribution,
        thresholds: model
            .thresholds
            .as_ref()
            .map(|t| t.values().to_vec())
            .unwrap_or_default(),
        mean_exit_entropies,
        expected_flops,
        forced_final_flops: *flops.last().expect("at least one exit"),
        baseline_flops,
        relative_savings: relative_savings(expected_flops, baseline_flops)?,
        measured_mean_flops: mean_flops(|t| t.0.flops),
        measured_forced_final_flops: mean_flops(|t| t.1.flops),
        cost,
        config_echo: saved.config.echo(),
    })
}

/// Loads a model and a TSV, evaluates, and writes the JSON report to `out`.
pub fn run_eval(
    model_path: impl AsRef<Path>,
    data_path: impl AsRef<Path>,
    out: impl AsRef<Path>,
) -> Result<EvalReport> {
    let saved = load_model(model_path)?;
    let data = load_eval_data(&saved, data_path)?;
    let report = evaluate(&saved, &data)?;
    let out = out.as_ref();
    fs::write(out, report.to_json()).map_err(|e| Error::io(format!("writing {}", out.display()), e))?;
    Ok(report)
}

pub const METRICS_CSV: &str = "metrics.csv";
pub const COST_CSV: &str = "cost.csv";
pub const EXIT_CSV: &str = "exit_distribution.csv";

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> Error + '_ {
    move |e| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(format!("writing {}", path.display()), io),
        other => Error::Format(format!("{}: {other:?}", path.display())),
    }
}

fn write_csv(path: &Path, header: &[&str], rows: Vec<Vec<String>>) -> Result<()> {
    let err = csv_err(path);
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(path)
        .map_err(&err)?;
    w.write_record(header).map_err(&err)?;
    for r in rows {
        w.write_record(&r).map_err(&err)?;
    }
    w.flush()
        .map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

fn pct(x: f64) -> String {
    format!("{:.4}", 100.0 * x)
}

/// Writes the metrics, cost and exit-distribution tables for `reports` into
/// `out_dir`, one row (or one row per exit) per report.
pub fn write_tables(reports: &[EvalReport], out_dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    if reports.is_empty() {
        return Err(Error::Config("at least one report is required".into()));
    }
    let dir = out_dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;

    let metrics = reports
        .iter()
        .map(|r| {
            vec![
                r.model_name.clone(),
                r.model_kind.clone(),
                r.num_examples.to_string(),
                pct(r.macro_f1),
                pct(r.present_class_macro_f1),
                pct(r.accuracy),
                pct(r.forced_final_macro_f1),
                pct(r.forced_final_accuracy),
            ]
        })
        .collect();

    let mut cost = Vec::new();
    let mut exits = Vec::new();
    for r in reports {
        for (k, c) in r.cost.per_exit.iter().enumerate() {
            cost.push(vec![
                r.model_name.clone(),
                (k + 1).to_string(),
                c.cumulative_params.to_string(),
                c.cumulative_flops.to_string(),
            ]);
        }
        cost.push(vec![
            r.model_name.clone(),
            "baseline".into(),
            r.cost.baseline.params.to_string(),
            r.cost.baseline.flops.to_string(),
        ]);
        for (k, p) in r.exit_distribution.probs.iter().enumerate() {
            exits.push(vec![
                r.model_name.clone(),
                (k + 1).to_string(),
                r.exit_counts.get(k).map(|c| c.to_string()).unwrap_or_default(),
                pct(*p),
                format!("{:.1}", r.expected_flops),
                format!("{:.1}", r.baseline_flops),
                pct(r.relative_savings),
            ]);
        }
    }

    let paths: Vec<PathBuf> = [METRICS_CSV, COST_CSV, EXIT_CSV].iter().map(|f| dir.join(f)).collect();
    write_csv(
        &paths[0],
        &[
            "model",
            "kind",
            "examples",
            "macro_f1_pct",
            "present_class_macro_f1_pct",
            "accuracy_pct",
            "forced_final_macro_f1_pct",
            "forced_final_accuracy_pct",
        ],
        metrics,
    )?;
    write_csv(
        &paths[1],
        &["model", "exit", "cumulative_params", "cumulative_flops"],
        cost,
    )?;
    write_csv(
        &paths[2],
        &[
            "model",
            "exit",
            "count",
            "percent",
            "expected_flops",
            "baseline_flops",
            "relative_savings_pct",
        ],
        exits,
    )?;
    Ok(paths)
}

/// Reads JSON reports and writes the three CSV tables.
pub fn run_report<P: AsRef<Path>>(reports: &[P], out_dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let loaded = reports.iter().map(EvalReport::load).collect::<Result<Vec<_>>>()?;
    write_tables(&loaded, out_dir)
}
