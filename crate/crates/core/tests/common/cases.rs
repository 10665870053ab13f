//! Randomized instances and independent oracles shared by the suites.

use branchy::engine::{joint_loss, AlphaMode, BranchyModel};
use branchy::models::{exit_logits, init_parameters, lstm_cell_step, Architecture, Backbone, FeatureCursor, ModelKind};
use branchy::tensor::{ParamStore, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{gradient_error, model, Worst};

pub const GRADIENT_INSTANCES: u64 = 20;

fn random_tensor(rng: &mut ChaCha8Rng, shape: Vec<usize>, scale: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-scale..scale)).collect()).unwrap()
}

/// Random readout weights so every output coordinate matters.
fn readout(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.5..1.5)).collect()
}

pub fn affine(seed: u64) -> Worst {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (inp, out) = (rng.random_range(1..=6), rng.random_range(1..=6));
    let batch = rng.random_range(0..=3);
    let x_shape = if batch == 0 { vec![inp] } else { vec![batch, inp] };
    let mut store = ParamStore::new();
    let x = store.add("x", random_tensor(&mut rng, x_shape, 1.0), true);
    let w = store.add("w", random_tensor(&mut rng, vec![inp, out], 1.0), true);
    let b = store.add("b", random_tensor(&mut rng, vec![out], 1.0), true);
    let c = readout(&mut rng, out);
    gradient_error(&store, 1, |t| {
        let (xn, wn, bn) = (t.param(x), t.param(w), t.param(b));
        let y = t.affine(xn, wn, Some(bn))?;
        if batch == 0 {
            let cn = t.input_vec(c.clone());
            let m = t.mul(y, cn)?;
            return Ok(t.sum(m));
        }
        // Fold rows through a second affine so the batched path is covered.
        let fold = t.input(&Tensor::matrix(out, 1, c.clone())?);
        let z = t.affine(y, fold, None)?;
        Ok(t.sum(z))
    })
}

pub fn relu(seed: u64) -> Worst {
    let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
    let n = rng.random_range(1..=8);
    // Keep clear of the kink, where the derivative is undefined.
    let z: Vec<f64> = (0..n)
        .map(|_| {
            let v: f64 = rng.random_range(0.01..2.0);
            if rng.random_bool(0.5) {
                v
            } else {
                -v
            }
        })
        .collect();
    let mut store = ParamStore::new();
    let zid = store.add("z", Tensor::vector(z).unwrap(), true);
    let c = readout(&mut rng, n);
    gradient_error(&store, 1, |t| {
        let a = t.param(zid);
        let r = t.relu(a);
        let cn = t.input_vec(c.clone());
        let m = t.mul(r, cn)?;
        Ok(t.sum(m))
    })
}

pub fn softmax_cross_entropy(seed: u64) -> Worst {
    let mut rng = ChaCha8Rng::seed_from_u64(200 + seed);
    let classes = rng.random_range(2..=10);
    let label = rng.random_range(0..classes);
    let mut store = ParamStore::new();
    let z = store.add("logits", random_tensor(&mut rng, vec![classes], 3.0), true);
    gradient_error(&store, 1, |t| {
        let a = t.param(z);
        let p = t.softmax(a)?;
        t.cross_entropy(p, label)
    })
}

pub fn lstm_cell(seed: u64) -> Worst {
    let mut rng = ChaCha8Rng::seed_from_u64(300 + seed);
    let (inp, h) = (rng.random_range(1..=5), rng.random_range(1..=5));
    let arch = Architecture {
        kind: ModelKind::StackedLstm,
        vocab_size: 2,
        embed_dim: inp,
        hidden_sizes: vec![h],
        num_classes: 2,
        trainable_embeddings: true,
    };
    let mut net = init_parameters(&arch, seed).unwrap();
    // Non-trivial biases, not just the initial 0/1.
    for p in net.params.params_mut() {
        if p.name.contains(".b_") {
            p.tensor
                .values_mut()
                .iter_mut()
                .for_each(|v| *v = rng.random_range(-1.0..1.0));
        }
    }
    let x = net.params.add("x", random_tensor(&mut rng, vec![inp], 1.0), true);
    let hp = net.params.add("h_prev", random_tensor(&mut rng, vec![h], 1.0), true);
    let cp = net.params.add("c_prev", random_tensor(&mut rng, vec![h], 1.0), true);
    let (ch, cc) = (readout(&mut rng, h), readout(&mut rng, h));
    let Backbone::StackedLstm(bb) = &net.backbone else {
        unreachable!()
    };
    let cell = bb.cells[0].clone();
    gradient_error(&net.params, 1, |t| {
        let (xn, hn, cn) = (t.param(x), t.param(hp), t.param(cp));
        let (h1, c1) = lstm_cell_step(t, xn, hn, cn, &cell)?;
        let wh = t.input_vec(ch.clone());
        let wc = t.input_vec(cc.clone());
        let a = t.mul(h1, wh)?;
        let b = t.mul(c1, wc)?;
        let s = t.add(a, b)?;
        Ok(t.sum(s))
    })
}

/// Joint loss through a whole small network; even seeds use fixed α, odd
/// seeds trainable α.
pub fn joint_loss_case(seed: u64, kind: ModelKind) -> Worst {
    let mode = if seed.is_multiple_of(2) {
        AlphaMode::Fixed
    } else {
        AlphaMode::Trainable
    };
    let offset = if kind == ModelKind::Dnn { 400 } else { 500 };
    let mut rng = ChaCha8Rng::seed_from_u64(offset + seed);
    let depth = rng.random_range(2..=3);
    let hidden: Vec<usize> = (0..depth).map(|_| rng.random_range(2..=5)).collect();
    let classes = rng.random_range(2..=4);
    let arch = Architecture {
        kind,
        vocab_size: 7,
        embed_dim: rng.random_range(2..=4),
        hidden_sizes: hidden,
        num_classes: classes,
        trainable_embeddings: true,
    };
    let mut model = BranchyModel::new(init_parameters(&arch, seed).unwrap(), 0.3, 1.0, mode, 32).unwrap();
    for p in model.network.params.params_mut() {
        if p.name.ends_with(".b") || p.name.contains(".b_") {
            p.tensor
                .values_mut()
                .iter_mut()
                .for_each(|v| *v += rng.random_range(-0.5..0.5));
        }
    }
    if let Some(id) = model.alphas.param {
        let v = model.network.params.get_mut(id).values_mut();
        v.iter_mut().for_each(|a| *a = rng.random_range(0.2..1.5));
        model.sync_alphas();
    }
    let len = rng.random_range(1..=5);
    let tokens: Vec<usize> = (0..len).map(|_| rng.random_range(0..7)).collect();
    let label = rng.random_range(0..classes);
    let net = &model.network;
    let stride = if kind == ModelKind::StackedLstm { 3 } else { 1 };
    gradient_error(&net.params, stride, |t| {
        let mut cursor = FeatureCursor::new(t, net, &tokens, model.max_len)?;
        let mut logits = Vec::new();
        for head in &net.heads {
            let f = cursor.advance(t)?.expect("layer per head");
            logits.push(exit_logits(t, f, head)?);
        }
        joint_loss(t, &logits, label, &model.alphas)
    })
}

/// A random small architecture with a token sequence of length `t`.
pub struct FlopsCase {
    pub model: BranchyModel,
    pub tokens: Vec<usize>,
    pub t: usize,
}

pub fn flops_case(seed: u64) -> FlopsCase {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let kind = if seed.is_multiple_of(2) {
        ModelKind::Dnn
    } else {
        ModelKind::StackedLstm
    };
    let depth = match kind {
        ModelKind::Dnn => rng.random_range(2..=5),
        ModelKind::StackedLstm => rng.random_range(2..=4),
    };
    let hidden = (0..depth).map(|_| rng.random_range(1..=16)).collect();
    let embed = rng.random_range(1..=16);
    let classes = rng.random_range(2..=16);
    let m = model(kind, 20, embed, hidden, classes, seed);
    let t = rng.random_range(1..=6);
    let tokens = (0..t).map(|_| rng.random_range(0..20)).collect();
    FlopsCase { model: m, tokens, t }
}

/// Closed form written out independently of the crate's cost module.
pub fn oracle_flops(m: &BranchyModel, upto: usize, t: usize) -> u64 {
    let arch = &m.network.arch;
    let c = arch.num_classes as u64;
    let mut inp = arch.embed_dim as u64;
    let mut total = 0;
    for &h in arch.hidden_sizes.iter().take(upto) {
        let h = h as u64;
        total += match arch.kind {
            ModelKind::Dnn => inp * h,
            ModelKind::StackedLstm => t as u64 * 4 * (inp * h + h * h),
        };
        total += h * c + c + h;
        inp = h;
    }
    total
}

/// Random prediction/gold pair for the metric oracles.
pub fn metric_case(rng: &mut ChaCha8Rng) -> (Vec<usize>, Vec<usize>, usize) {
    let c = rng.random_range(1..=8);
    let n = rng.random_range(1..=60);
    let gold: Vec<usize> = (0..n).map(|_| rng.random_range(0..c)).collect();
    let pred: Vec<usize> = gold
        .iter()
        .map(|&g| {
            if rng.random_bool(0.6) {
                g
            } else {
                rng.random_range(0..c)
            }
        })
        .collect();
    (pred, gold, c)
}

pub fn oracle_accuracy(pred: &[usize], gold: &[usize]) -> f64 {
    pred.iter().zip(gold).filter(|(p, g)| p == g).count() as f64 / gold.len() as f64
}

/// Macro F1 over all `c` classes from an explicit confusion matrix.
pub fn oracle_macro_f1(pred: &[usize], gold: &[usize], c: usize) -> (f64, Vec<f64>) {
    let mut confusion = vec![vec![0usize; c]; c];
    for (&p, &g) in pred.iter().zip(gold) {
        confusion[g][p] += 1;
    }
    let f1: Vec<f64> = (0..c)
        .map(|k| {
            let tp = confusion[k][k];
            let fp: usize = (0..c).filter(|&g| g != k).map(|g| confusion[g][k]).sum();
            let fn_: usize = (0..c).filter(|&p| p != k).map(|p| confusion[k][p]).sum();
            let prec = if tp + fp == 0 {
                0.0
            } else {
                tp as f64 / (tp + fp) as f64
            };
            let rec = if tp + fn_ == 0 {
                0.0
            } else {
                tp as f64 / (tp + fn_) as f64
            };
            if prec + rec == 0.0 {
                0.0
            } else {
                2.0 * prec * rec / (prec + rec)
            }
        })
        .collect();
    (f1.iter().sum::<f64>() / c as f64, f1)
}

/// Mix of flat, peaked and sparse distributions over 2..=30 classes.
pub fn random_distribution(rng: &mut ChaCha8Rng, i: usize) -> Vec<f64> {
    let c = rng.random_range(2..=30);
    let mut p: Vec<f64> = (0..c)
        .map(|_| match i % 4 {
            0 => rng.random::<f64>(),
            1 => rng.random::<f64>().powi(8),
            2 if rng.random_bool(0.3) => 0.0,
            _ => rng.random_range(0.5..1.0),
        })
        .collect();
    if p.iter().all(|&x| x == 0.0) {
        p[0] = 1.0;
    }
    let s: f64 = p.iter().sum();
    p.iter_mut().for_each(|x| *x /= s);
    p
}
