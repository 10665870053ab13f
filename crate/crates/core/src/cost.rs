//! Parameter and FLOP accounting per exit path.
//!
//! Convention: one multiply-accumulate is one FLOP, activations are free, and
//! each exit gate (softmax + entropy) costs `C + feature_dim`. A dense layer
//! `in → out` costs `in·out`; an LSTM cell costs `4·(in·h + h·h)` per step.
//! The baseline is the same backbone with a single ungated output layer on
//! the last feature.

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::engine::{infer_early_exit, BranchyModel};
use crate::error::{Error, Result};
use crate::models::Backbone;

pub fn dense_params(inp: usize, out: usize) -> u64 {
    (inp * out + out) as u64
}

pub fn dense_flops(inp: usize, out: usize) -> u64 {
    (inp * out) as u64
}

pub fn lstm_cell_params(inp: usize, hidden: usize) -> u64 {
    4 * (inp * hidden + hidden * hidden + hidden) as u64
}

pub fn lstm_cell_flops(inp: usize, hidden: usize, seq_len: usize) -> u64 {
    (seq_len * 4 * (inp * hidden + hidden * hidden)) as u64
}

/// Head MACs plus the softmax/entropy gate.
pub fn head_flops(feature_dim: usize, classes: usize) -> u64 {
    dense_flops(feature_dim, classes) + (classes + feature_dim) as u64
}

fn check_exit(model: &BranchyModel, upto_exit: usize) -> Result<()> {
    let n = model.num_exits();
    if upto_exit == 0 || upto_exit > n {
        return Err(Error::Index {
            what: "exit",
            index: upto_exit,
            bound: n,
        });
    }
    Ok(())
}

/// Per-layer backbone (params, flops) for a given sequence length.
fn layer_costs(model: &BranchyModel, seq_len: usize) -> Vec<(u64, u64)> {
    match &model.network.backbone {
        Backbone::Dnn(d) => d
            .layers
            .iter()
            .map(|l| (dense_params(l.in_dim, l.out_dim), dense_flops(l.in_dim, l.out_dim)))
            .collect(),
        Backbone::StackedLstm(s) => s
            .cells
            .iter()
            .map(|c| {
                (
                    lstm_cell_params(c.input_dim, c.hidden_dim),
                    lstm_cell_flops(c.input_dim, c.hidden_dim, seq_len),
                )
            })
            .collect(),
    }
}

fn embedding_params(model: &BranchyModel) -> u64 {
    let e = &model.network.embedding;
    (e.vocab_size * e.dim) as u64
}

/// Cumulative parameters through `upto_exit` (1-based): backbone layers and
/// heads `1..=upto_exit`, plus the embedding table when requested.
pub fn count_params(model: &BranchyModel, upto_exit: usize, include_embedding: bool) -> Result<u64> {
    check_exit(model, upto_exit)?;
    let backbone: u64 = layer_costs(model, 1).iter().take(upto_exit).map(|c| c.0).sum();
    let heads: u64 = model.network.heads[..upto_exit]
        .iter()
        .map(|h| dense_params(h.feature_dim, h.num_classes))
        .sum();
    let emb = if include_embedding { embedding_params(model) } else { 0 };
    Ok(backbone + heads + emb)
}

/// Cumulative FLOPs to reach a decision at `upto_exit`. `seq_len` is ignored
/// for the DNN.
pub fn count_flops(model: &BranchyModel, upto_exit: usize, seq_len: usize) -> Result<u64> {
    check_exit(model, upto_exit)?;
    if seq_len == 0 {
        return Err(Error::Config("sequence length must be positive".into()));
    }
    let backbone: u64 = layer_costs(model, seq_len).iter().take(upto_exit).map(|c| c.1).sum();
    let heads: u64 = model.network.heads[..upto_exit]
        .iter()
        .map(|h| head_flops(h.feature_dim, h.num_classes))
        .sum();
    Ok(backbone + heads)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExitCost {
    pub cumulative_params: u64,
    pub cumulative_flops: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BaselineCost {
    pub params: u64,
    pub flops: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub per_exit: Vec<ExitCost>,
    pub baseline: BaselineCost,
    /// Sequence length used for LSTM FLOPs; `None` for the DNN.
    pub seq_len_assumed: Option<usize>,
    pub includes_embedding: bool,
}

impl CostReport {
    pub fn flops_per_exit(&self) -> Vec<f64> {
        self.per_exit.iter().map(|c| c.cumulative_flops as f64).collect()
    }
}

pub fn cost_report(model: &BranchyModel, seq_len: usize, include_embedding: bool) -> Result<CostReport> {
    let n = model.num_exits();
    let per_exit = (1..=n)
        .map(|k| {
            Ok(ExitCost {
                cumulative_params: count_params(model, k, include_embedding)?,
                cumulative_flops: count_flops(model, k, seq_len)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let layers = layer_costs(model, seq_len);
    let last = model.network.heads.last().expect("at least one exit");
    let emb = if include_embedding { embedding_params(model) } else { 0 };
    let baseline = BaselineCost {
        params: layers.iter().map(|c| c.0).sum::<u64>() + dense_params(last.feature_dim, last.num_classes) + emb,
        flops: layers.iter().map(|c| c.1).sum::<u64>() + dense_flops(last.feature_dim, last.num_classes),
    };
    let seq_len_assumed = match model.network.backbone {
        Backbone::Dnn(_) => None,
        Backbone::StackedLstm(_) => Some(seq_len),
    };
    Ok(CostReport {
        per_exit,
        baseline,
        seq_len_assumed,
        includes_embedding: include_embedding,
    })
}

/// Empirical fraction of queries leaving at each exit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExitDistribution {
    pub probs: Vec<f64>,
}

/// Slack for distributions transcribed from tables rounded to 0.01%; three
/// such entries can miss 1 by about a tenth of a percent.
pub const ROUNDED_TABLE_TOLERANCE: f64 = 1e-3;

impl ExitDistribution {
    /// Entries must be non-negative and sum to 1 within 1e-9.
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        Self::with_tolerance(probs, 1e-9)
    }

    /// As [`ExitDistribution::new`] with a caller-chosen sum tolerance. The
    /// entries are kept as given, not renormalized.
    pub fn with_tolerance(probs: Vec<f64>, tolerance: f64) -> Result<Self> {
        let sum: f64 = probs.iter().sum();
        // Written so NaN entries fail.
        let valid = !probs.is_empty() && probs.iter().all(|&p| p >= 0.0) && (sum - 1.0).abs() <= tolerance;
        if !valid {
            return Err(Error::Config(format!(
                "exit distribution must be non-negative and sum to 1 (±{tolerance:e}), got {probs:?}"
            )));
        }
        Ok(ExitDistribution { probs })
    }

    /// Normalizes exit counts.
    pub fn from_counts(counts: &[usize]) -> Result<Self> {
        let total: usize = counts.iter().sum();
        if total == 0 {
            return Err(Error::Config("no queries to build an exit distribution from".into()));
        }
        ExitDistribution::new(counts.iter().map(|&c| c as f64 / total as f64).collect())
    }

    /// Mass leaving before the last exit.
    pub fn early_fraction(&self) -> f64 {
        self.probs[..self.probs.len() - 1].iter().sum()
    }
}

/// `Σ_n dist[n] · flops[n]`.
pub fn expected_complexity(flops_per_exit: &[f64], dist: &ExitDistribution) -> Result<f64> {
    if flops_per_exit.len() != dist.probs.len() {
        return Err(Error::Config(format!(
            "{} exit costs but {} exit probabilities",
            flops_per_exit.len(),
            dist.probs.len()
        )));
    }
    Ok(flops_per_exit.iter().zip(&dist.probs).map(|(f, p)| f * p).sum())
}

/// `(baseline − expected) / baseline`; negative means added cost.
pub fn relative_savings(expected: f64, baseline_flops: f64) -> Result<f64> {
    if baseline_flops.is_nan() || baseline_flops <= 0.0 {
        return Err(Error::Config(format!(
            "baseline FLOPs must be positive, got {baseline_flops}"
        )));
    }
    Ok((baseline_flops - expected) / baseline_flops)
}

pub fn measure_exit_distribution(model: &BranchyModel, data: &Dataset) -> Result<ExitDistribution> {
    if data.is_empty() {
        return Err(Error::Config("cannot measure exits on an empty dataset".into()));
    }
    let mut counts = vec![0usize; model.num_exits()];
    for ex in &data.examples {
        counts[infer_early_exit(model, &ex.tokens)?.chosen_exit - 1] += 1;
    }
    ExitDistribution::from_counts(&counts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{AlphaMode, ThresholdSet};
    use crate::models::{init_parameters, Architecture, ModelKind};

    fn model(kind: ModelKind, embed: usize, hidden: Vec<usize>, classes: usize) -> BranchyModel {
        let arch = Architecture {
            kind,
            vocab_size: 30,
            embed_dim: embed,
            hidden_sizes: hidden,
            num_classes: classes,
            trainable_embeddings: true,
        };
        BranchyModel::new(init_parameters(&arch, 0).unwrap(), 0.3, 1.0, AlphaMode::Fixed, 32).unwrap()
    }

    #[test]
    fn layer_formulas() {
        assert_eq!(dense_params(100, 50), 5050);
        assert_eq!(lstm_cell_params(10, 20), 2480);
        assert_eq!(dense_flops(100, 50), 5000);
        assert_eq!(lstm_cell_flops(10, 20, 5), 12000);
    }

    #[test]
    fn dnn_counts_by_hand() {
        let m = model(ModelKind::Dnn, 100, vec![50, 20], 4);
        assert_eq!(count_params(&m, 1, false).unwrap(), 5050 + 204);
        assert_eq!(count_params(&m, 2, false).unwrap(), 5050 + 204 + 1020 + 84);
        assert_eq!(count_params(&m, 1, true).unwrap(), 5050 + 204 + 3000);
        assert_eq!(count_flops(&m, 1, 9).unwrap(), 5000 + 200 + 54);
        assert!(count_params(&m, 3, false).is_err());
        assert!(count_flops(&m, 0, 1).is_err());
    }

    #[test]
    fn branchy_total_exceeds_headless_baseline() {
        let m = model(ModelKind::Dnn, 16, vec![12, 12, 12], 5);
        let r = cost_report(&m, 1, false).unwrap();
        assert!(r.per_exit[2].cumulative_params > r.baseline.params);
        assert!(r.per_exit[2].cumulative_flops >= r.baseline.flops);
        assert!(r
            .per_exit
            .windows(2)
            .all(|w| w[1].cumulative_flops > w[0].cumulative_flops));
    }

    #[test]
    fn dnn_flops_track_params_minus_biases() {
        let m = model(ModelKind::Dnn, 16, vec![12, 8, 6], 5);
        for k in 1..=3 {
            let params = count_params(&m, k, false).unwrap() as i64;
            let flops = count_flops(&m, k, 1).unwrap() as i64;
            let biases: i64 = [12, 8, 6][..k].iter().sum::<i64>() + 5 * k as i64;
            let gates: i64 = [12, 8, 6][..k].iter().map(|f| f + 5).sum();
            assert_eq!(flops, params - biases + gates);
        }
    }

    #[test]
    fn lstm_seq_len_scales_backbone() {
        let m = model(ModelKind::StackedLstm, 10, vec![20, 20], 3);
        let f1 = count_flops(&m, 1, 1).unwrap();
        let f5 = count_flops(&m, 1, 5).unwrap();
        assert_eq!(f5 - f1, 4 * 2400);
        assert_eq!(cost_report(&m, 5, false).unwrap().seq_len_assumed, Some(5));
    }

    #[test]
    fn expected_complexity_point_mass_and_errors() {
        let f = [10.0, 20.0, 30.0];
        let d = ExitDistribution::new(vec![1.0, 0.0, 0.0]).unwrap();
        assert_eq!(expected_complexity(&f, &d).unwrap(), 10.0);
        let d2 = ExitDistribution::new(vec![0.5, 0.5]).unwrap();
        assert!(matches!(expected_complexity(&f, &d2), Err(Error::Config(_))));
        assert!(ExitDistribution::new(vec![0.5, 0.6]).is_err());
        assert!(ExitDistribution::new(vec![1.5, -0.5]).is_err());
        assert!(ExitDistribution::new(vec![0.2780, 0.0192, 0.7020]).is_err());
        let rounded = ExitDistribution::with_tolerance(vec![0.2780, 0.0192, 0.7020], ROUNDED_TABLE_TOLERANCE).unwrap();
        assert_eq!(rounded.probs[0], 0.2780);
    }

    #[test]
    fn relative_savings_examples() {
        assert_eq!(relative_savings(5.0, 5.0).unwrap(), 0.0);
        assert!(relative_savings(1.0, 0.0).is_err());
        let dnn = relative_savings(38.27e3, 36.2e3).unwrap();
        assert!((dnn - (-0.0572)).abs() < 1e-4, "{dnn}");
    }

    #[test]
    fn exit_distribution_extremes() {
        let mut m = model(ModelKind::Dnn, 8, vec![6, 6, 6], 4);
        let data = crate::data::synth_generate(4, 5, 3, 0.2, 7).unwrap();
        m.thresholds = Some(ThresholdSet::new(vec![0.0; 3]).unwrap());
        assert_eq!(measure_exit_distribution(&m, &data).unwrap().probs, vec![0.0, 0.0, 1.0]);
        m.thresholds = Some(ThresholdSet::new(vec![4f64.ln() + 0.1; 3]).unwrap());
        let d = measure_exit_distribution(&m, &data).unwrap();
        assert_eq!(d.probs, vec![1.0, 0.0, 0.0]);
        let empty = Dataset {
            examples: vec![],
            ..data
        };
        assert!(measure_exit_distribution(&m, &empty).is_err());
    }
}
