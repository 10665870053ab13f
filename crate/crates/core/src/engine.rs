//! Multi-exit training and entropy-gated early-exit inference.
//!
//! Training minimizes `L = Σ_n α_n · CE_n` over all exits jointly, with
//! `α_n = r_l + (r_u − r_l)/n`. After training, each exit gets a threshold
//! equal to the mean prediction entropy of that exit over the calibration
//! data. At inference the exits are scanned in order and the first one whose
//! entropy is strictly below its threshold answers; otherwise the last exit
//! answers. Layers past the answering exit are never computed.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::models::{exit_logits, ExitHead, FeatureCursor, Network};
use crate::tensor::{argmax, softmax, NodeId, ParamId, ParamStore, Tape, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AlphaMode {
    Fixed,
    Trainable,
}

impl fmt::Display for AlphaMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AlphaMode::Fixed => "fixed",
            AlphaMode::Trainable => "trainable",
        })
    }
}

impl FromStr for AlphaMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fixed" => Ok(AlphaMode::Fixed),
            "trainable" => Ok(AlphaMode::Trainable),
            other => Err(Error::Config(format!("unknown alpha mode {other:?}"))),
        }
    }
}

/// `α_n = r_l + (r_u − r_l)/n` for `n = 1..=N`.
pub fn alpha_weights(n: usize, r_l: f64, r_u: f64) -> Result<Vec<f64>> {
    if n == 0 {
        return Err(Error::Config("alpha schedule needs at least one exit".into()));
    }
    if !(r_l > 0.0 && r_l <= r_u && r_u.is_finite()) {
        return Err(Error::Config(format!(
            "alpha bounds must satisfy 0 < r_l <= r_u, got r_l={r_l}, r_u={r_u}"
        )));
    }
    Ok((1..=n).map(|k| r_l + (r_u - r_l) / k as f64).collect())
}

/// Per-exit loss weights. In trainable mode the live values sit in the
/// parameter store under `param`; `weights` mirrors them after every update.
#[derive(Clone, Debug, PartialEq)]
pub struct AlphaSchedule {
    pub r_l: f64,
    pub r_u: f64,
    pub mode: AlphaMode,
    pub weights: Vec<f64>,
    pub param: Option<ParamId>,
}

impl AlphaSchedule {
    pub fn fixed(n: usize, r_l: f64, r_u: f64) -> Result<Self> {
        Ok(AlphaSchedule {
            r_l,
            r_u,
            mode: AlphaMode::Fixed,
            weights: alpha_weights(n, r_l, r_u)?,
            param: None,
        })
    }

    /// Explicit weights, e.g. selector vectors. Fixed mode.
    pub fn from_weights(weights: Vec<f64>) -> Self {
        let r_u = weights.iter().copied().fold(0.0, f64::max);
        let r_l = weights.iter().copied().fold(f64::INFINITY, f64::min);
        AlphaSchedule {
            r_l,
            r_u,
            mode: AlphaMode::Fixed,
            weights,
            param: None,
        }
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// Clamp range applied to trainable weights.
    pub fn clamp_range(&self) -> (f64, f64) {
        (self.r_l / 10.0, 10.0 * self.r_u)
    }
}

/// Per-exit entropy gates.
///
/// Calibrated thresholds lie in `[0, ln C]`; hand-set ones only need to be
/// finite and non-negative.
#[derive(Clone, Debug, PartialEq)]
pub struct ThresholdSet {
    thresholds: Vec<f64>,
}

impl ThresholdSet {
    pub fn new(thresholds: Vec<f64>) -> Result<Self> {
        if thresholds.is_empty() || thresholds.iter().any(|t| !(t.is_finite() && *t >= 0.0)) {
            return Err(Error::Config(format!("invalid thresholds {thresholds:?}")));
        }
        Ok(ThresholdSet { thresholds })
    }

    pub fn values(&self) -> &[f64] {
        &self.thresholds
    }

    pub fn len(&self) -> usize {
        self.thresholds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.thresholds.is_empty()
    }
}

/// What happened to one query during early-exit inference.
#[derive(Clone, Debug, PartialEq)]
pub struct ExitTrace {
    /// Entropy at each visited exit, in order; length equals `chosen_exit`.
    pub entropies: Vec<f64>,
    /// 1-based.
    pub chosen_exit: usize,
    pub prediction: usize,
    pub probs_at_exit: Vec<f64>,
    pub layers_evaluated: usize,
    /// Counted operations (MACs plus exit gates) spent on this query.
    pub flops: u64,
}

impl ExitTrace {
    /// Checks the routing contract against `thresholds` for an `n_exits` model.
    pub fn check_routing(&self, thresholds: &ThresholdSet, n_exits: usize) -> Result<()> {
        let t = thresholds.values();
        let k = self.chosen_exit;
        let bad = |why: String| Err(Error::State(format!("routing invariant violated: {why}")));
        if k == 0 || k > n_exits || self.entropies.len() != k || self.layers_evaluated != k {
            return bad(format!(
                "exit {k}, {} entropies, {} layers",
                self.entropies.len(),
                self.layers_evaluated
            ));
        }
        if let Some(n) = (0..k - 1).find(|&n| self.entropies[n] < t[n]) {
            return bad(format!("exit {} should have fired", n + 1));
        }
        if k < n_exits && self.entropies[k - 1] >= t[k - 1] {
            return bad(format!("exit {k} fired above its threshold"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BranchyModel {
    pub network: Network,
    pub alphas: AlphaSchedule,
    pub thresholds: Option<ThresholdSet>,
    /// Token cap applied to the LSTM input.
    pub max_len: usize,
}

impl BranchyModel {
    /// Wraps a network; in trainable mode an `alpha` parameter is appended to
    /// the network's store.
    pub fn new(mut network: Network, r_l: f64, r_u: f64, mode: AlphaMode, max_len: usize) -> Result<Self> {
        if max_len == 0 {
            return Err(Error::Config("max_len must be positive".into()));
        }
        let mut alphas = AlphaSchedule::fixed(network.num_exits(), r_l, r_u)?;
        if mode == AlphaMode::Trainable {
            let t = Tensor::vector(alphas.weights.clone())?;
            alphas.param = Some(network.params.add("alpha", t, true));
            alphas.mode = AlphaMode::Trainable;
        }
        Ok(BranchyModel {
            network,
            alphas,
            thresholds: None,
            max_len,
        })
    }

    pub fn num_exits(&self) -> usize {
        self.network.num_exits()
    }

    pub fn num_classes(&self) -> usize {
        self.network.num_classes()
    }

    pub fn params(&self) -> &ParamStore {
        &self.network.params
    }

    pub fn is_calibrated(&self) -> bool {
        self.thresholds.is_some()
    }

    /// Copies trainable alpha values out of the store into `alphas.weights`.
    pub fn sync_alphas(&mut self) {
        if let Some(id) = self.alphas.param {
            self.alphas.weights = self.network.params.get(id).values().to_vec();
        }
    }

    fn check_tokens(&self, tokens: &[usize]) -> Result<()> {
        if tokens.is_empty() {
            return Err(Error::EmptyUtterance);
        }
        let v = self.network.embedding.vocab_size;
        match tokens.iter().find(|&&t| t >= v) {
            Some(&t) => Err(Error::Index {
                what: "vocabulary",
                index: t,
                bound: v,
            }),
            None => Ok(()),
        }
    }
}

/// `−Σ p ln p` with `0 ln 0 = 0`.
///
/// Evaluated as `ln C − Σ p ln(pC)`, which is exact at both ends of the
/// range: one-hot gives 0 and a uniform distribution gives `ln C`, so a
/// threshold of `ln C` never fires on a uniform prediction.
pub fn entropy(probs: &[f64]) -> f64 {
    if probs.is_empty() {
        return 0.0;
    }
    let c = probs.len() as f64;
    let ln_c = c.ln();
    let kl: f64 = probs.iter().filter(|&&p| p > 0.0).map(|&p| p * (p * c).ln()).sum();
    (ln_c - kl).clamp(0.0, ln_c)
}

/// `Σ_n α_n · CE(softmax(logits_n), label)`.
pub fn joint_loss(tape: &mut Tape, logits: &[NodeId], label: usize, schedule: &AlphaSchedule) -> Result<NodeId> {
    if logits.len() != schedule.len() || logits.is_empty() {
        return Err(Error::Config(format!(
            "{} exits but {} alpha weights",
            logits.len(),
            schedule.len()
        )));
    }
    let alpha_node = match (schedule.mode, schedule.param) {
        (AlphaMode::Trainable, Some(id)) => Some(tape.param(id)),
        _ => None,
    };
    let mut total: Option<NodeId> = None;
    for (n, &z) in logits.iter().enumerate() {
        let p = tape.softmax(z)?;
        let ce = tape.cross_entropy(p, label)?;
        let term = match alpha_node {
            Some(a) => {
                let an = tape.pick(a, n)?;
                tape.mul(an, ce)?
            }
            None => tape.scale(ce, schedule.weights[n]),
        };
        total = Some(match total {
            Some(t) => tape.add(t, term)?,
            None => term,
        });
    }
    Ok(total.expect("at least one exit"))
}

struct GateOutput {
    probs: Vec<f64>,
    entropy: f64,
}

/// Head + softmax + entropy. The softmax/entropy gate is charged
/// `C + feature_dim` operations on top of the head's MACs.
fn exit_gate(tape: &mut Tape, feature: NodeId, head: &ExitHead) -> Result<GateOutput> {
    let logits = exit_logits(tape, feature, head)?;
    let probs = softmax(tape.value(logits));
    let entropy = entropy(&probs);
    tape.charge((head.num_classes + head.feature_dim) as u64);
    Ok(GateOutput { probs, entropy })
}

/// Scans exits `1..=N`, stopping at the first where `fire(n, H_n)` holds.
/// The last exit always answers.
fn route_with(model: &BranchyModel, tokens: &[usize], mut fire: impl FnMut(usize, f64) -> bool) -> Result<ExitTrace> {
    model.check_tokens(tokens)?;
    let net = &model.network;
    let n_exits = net.num_exits();
    let mut tape = Tape::new(&net.params);
    let mut cursor = FeatureCursor::new(&mut tape, net, tokens, model.max_len)?;
    let mut entropies = Vec::with_capacity(n_exits);
    for n in 0..n_exits {
        let feature = cursor
            .advance(&mut tape)?
            .ok_or_else(|| Error::State("backbone has fewer layers than heads".into()))?;
        let gate = exit_gate(&mut tape, feature, &net.heads[n])?;
        entropies.push(gate.entropy);
        if n + 1 == n_exits || fire(n, gate.entropy) {
            return Ok(ExitTrace {
                chosen_exit: n + 1,
                prediction: argmax(&gate.probs),
                probs_at_exit: gate.probs,
                entropies,
                layers_evaluated: cursor.layers_evaluated(),
                flops: tape.flops(),
            });
        }
    }
    unreachable!("loop returns at the last exit")
}

/// Early-exit inference against explicit thresholds.
pub fn route(model: &BranchyModel, tokens: &[usize], thresholds: &ThresholdSet) -> Result<ExitTrace> {
    if thresholds.len() != model.num_exits() {
        return Err(Error::Config(format!(
            "{} thresholds for {} exits",
            thresholds.len(),
            model.num_exits()
        )));
    }
    let t = thresholds.values();
    route_with(model, tokens, |n, h| h < t[n])
}

/// Early-exit inference with the model's calibrated thresholds.
pub fn infer_early_exit(model: &BranchyModel, tokens: &[usize]) -> Result<ExitTrace> {
    let thresholds = model
        .thresholds
        .as_ref()
        .ok_or_else(|| Error::State("model is not calibrated; run calibration first".into()))?;
    route(model, tokens, thresholds)
}

/// Routing disabled: every exit is evaluated and the last one answers.
pub fn infer_final_exit(model: &BranchyModel, tokens: &[usize]) -> Result<ExitTrace> {
    route_with(model, tokens, |_, _| false)
}

/// Plain single-output evaluation: full backbone, last head only.
pub fn predict_without_routing(model: &BranchyModel, tokens: &[usize]) -> Result<usize> {
    model.check_tokens(tokens)?;
    let net = &model.network;
    let mut tape = Tape::new(&net.params);
    let mut cursor = FeatureCursor::new(&mut tape, net, tokens, model.max_len)?;
    let mut last = None;
    while let Some(f) = cursor.advance(&mut tape)? {
        last = Some(f);
    }
    let head = net.heads.last().expect("at least one exit");
    let logits = exit_logits(&mut tape, last.expect("at least one layer"), head)?;
    Ok(argmax(tape.value(logits)))
}

/// Per-exit probabilities and entropies from a full forward pass.
pub fn forward_all(model: &BranchyModel, tokens: &[usize]) -> Result<Vec<(Vec<f64>, f64)>> {
    model.check_tokens(tokens)?;
    let net = &model.network;
    let mut tape = Tape::new(&net.params);
    let mut cursor = FeatureCursor::new(&mut tape, net, tokens, model.max_len)?;
    let mut out = Vec::with_capacity(net.num_exits());
    for head in &net.heads {
        let f = cursor.advance(&mut tape)?.expect("layer per head");
        let g = exit_gate(&mut tape, f, head)?;
        out.push((g.probs, g.entropy));
    }
    Ok(out)
}

/// Mean full-forward entropy of each exit over `data`.
pub fn calibrate_thresholds(model: &BranchyModel, data: &Dataset) -> Result<ThresholdSet> {
    if data.is_empty() {
        return Err(Error::Calibration("cannot calibrate on an empty dataset".into()));
    }
    let mut sums = vec![0.0; model.num_exits()];
    for ex in &data.examples {
        for (s, (_, h)) in sums.iter_mut().zip(forward_all(model, &ex.tokens)?) {
            *s += h;
        }
    }
    let n = data.len() as f64;
    ThresholdSet::new(sums.into_iter().map(|s| s / n).collect())
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub mean_loss: f64,
    /// Dev accuracy of the last exit.
    pub dev_accuracy: f64,
    pub dev_exit_accuracy: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainingLog {
    pub epochs: Vec<EpochLog>,
    /// 1-based epoch whose parameters were kept.
    pub best_epoch: usize,
}

fn check_dataset(model: &BranchyModel, data: &Dataset, name: &str) -> Result<()> {
    if data.is_empty() {
        return Err(Error::Config(format!("{name} dataset is empty")));
    }
    let c = model.num_classes();
    if let Some(e) = data.examples.iter().find(|e| e.label >= c) {
        return Err(Error::Label(format!(
            "{name} example {:?} has label {} but the model has {c} classes",
            e.raw_text, e.label
        )));
    }
    Ok(())
}

/// Per-exit accuracy over `data` from full forward passes.
pub fn exit_accuracies(model: &BranchyModel, data: &Dataset) -> Result<Vec<f64>> {
    let mut correct = vec![0usize; model.num_exits()];
    for ex in &data.examples {
        for (c, (p, _)) in correct.iter_mut().zip(forward_all(model, &ex.tokens)?) {
            if argmax(&p) == ex.label {
                *c += 1;
            }
        }
    }
    Ok(correct.into_iter().map(|c| c as f64 / data.len() as f64).collect())
}

/// Shuffled mini-batch SGD on the joint loss. Keeps the parameters from the
/// epoch with the best last-exit dev accuracy (earliest wins ties).
pub fn train_branchy(
    model: &mut BranchyModel,
    train: &Dataset,
    dev: &Dataset,
    config: &TrainConfig,
) -> Result<TrainingLog> {
    check_dataset(model, train, "training")?;
    check_dataset(model, dev, "dev")?;
    if config.epochs == 0 || config.batch_size == 0 {
        return Err(Error::Config("epochs and batch_size must be positive".into()));
    }
    if !(config.lr >= 0.0 && config.lr.is_finite()) {
        return Err(Error::Config(format!("invalid learning rate {}", config.lr)));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut log = TrainingLog {
        epochs: Vec::new(),
        best_epoch: 0,
    };
    let mut best: Option<(f64, ParamStore)> = None;

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for (batch_idx, batch) in order.chunks(config.batch_size).enumerate() {
            let scale = 1.0 / batch.len() as f64;
            let diverged = |reason: String| Error::Training {
                epoch,
                batch: batch_idx + 1,
                reason,
            };
            for &i in batch {
                let ex = &train.examples[i];
                let grads = {
                    let net = &model.network;
                    let mut tape = Tape::new(&net.params);
                    let mut cursor = FeatureCursor::new(&mut tape, net, &ex.tokens, model.max_len)?;
                    let mut logits = Vec::with_capacity(net.num_exits());
                    for head in &net.heads {
                        let f = cursor.advance(&mut tape)?.expect("layer per head");
                        logits.push(exit_logits(&mut tape, f, head)?);
                    }
                    let loss = joint_loss(&mut tape, &logits, ex.label, &model.alphas)?;
                    let value = tape.scalar(loss);
                    if !value.is_finite() {
                        return Err(diverged(format!("loss is {value}")));
                    }
                    loss_sum += value;
                    let scaled = tape.scale(loss, scale);
                    tape.backward(scaled)?
                };
                model.network.params.accumulate(&grads)?;
            }
            let params = &mut model.network.params;
            params.ensure_grads();
            params.sgd_step(config.lr)?;
            if let Some(id) = model.alphas.param {
                let (lo, hi) = model.alphas.clamp_range();
                params
                    .get_mut(id)
                    .values_mut()
                    .iter_mut()
                    .for_each(|a| *a = a.clamp(lo, hi));
            }
            if params
                .iter()
                .any(|(_, p)| p.tensor.values().iter().any(|v| !v.is_finite()))
            {
                return Err(diverged("parameters became non-finite".into()));
            }
            model.sync_alphas();
        }

        let dev_exit_accuracy = exit_accuracies(model, dev)?;
        let dev_accuracy = *dev_exit_accuracy.last().expect("at least one exit");
        log.epochs.push(EpochLog {
            epoch,
            mean_loss: loss_sum / train.len() as f64,
            dev_accuracy,
            dev_exit_accuracy,
        });
        if best.as_ref().is_none_or(|(acc, _)| dev_accuracy > *acc) {
            best = Some((dev_accuracy, model.network.params.clone()));
            log.best_epoch = epoch;
        }
    }

    if let Some((_, params)) = best {
        model.network.params = params;
        model.network.params.zero_grads();
        model.sync_alphas();
    }
    Ok(log)
}
