#![allow(dead_code)]

pub mod cases;

use branchy::engine::{AlphaMode, BranchyModel};
use branchy::models::{init_parameters, Architecture, ModelKind};
use branchy::tensor::{NodeId, ParamStore, Tape};
use branchy::Result;

pub const FD_STEP: f64 = 1e-5;
pub const FD_REL_TOL: f64 = 1e-4;
/// Below this absolute gap two derivatives agree regardless of magnitude;
/// it sits well above central-difference round-off (~1e-11 here).
pub const FD_ABS_FLOOR: f64 = 1e-8;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let gap = (analytic - numeric).abs();
    if gap < FD_ABS_FLOOR {
        return 0.0;
    }
    gap / analytic.abs().max(numeric.abs())
}

/// Largest backprop-vs-central-difference disagreement, and where it was.
#[derive(Clone, Debug, Default)]
pub struct Worst {
    pub rel: f64,
    pub at: String,
    /// Largest raw |analytic − numeric|, floor or not.
    pub max_gap: f64,
}

/// Compares backprop gradients of `loss` against central differences for
/// every scalar in `store` (or every `stride`-th one).
pub fn gradient_error<F>(store: &ParamStore, stride: usize, loss: F) -> Worst
where
    F: Fn(&mut Tape) -> Result<NodeId>,
{
    let analytic = {
        let mut tape = Tape::new(store);
        let l = loss(&mut tape).unwrap();
        tape.backward(l).unwrap()
    };
    let eval = |s: &ParamStore| {
        let mut tape = Tape::new(s);
        let l = loss(&mut tape).unwrap();
        tape.scalar(l)
    };
    let mut worst = Worst::default();
    let mut probe = store.clone();
    let mut k = 0usize;
    for (id, p) in store.iter() {
        for i in 0..p.tensor.len() {
            k += 1;
            if !k.is_multiple_of(stride) {
                continue;
            }
            let orig = p.tensor.values()[i];
            probe.get_mut(id).values_mut()[i] = orig + FD_STEP;
            let up = eval(&probe);
            probe.get_mut(id).values_mut()[i] = orig - FD_STEP;
            let down = eval(&probe);
            probe.get_mut(id).values_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * FD_STEP);
            let a = analytic.get(id).map_or(0.0, |g| g[i]);
            let err = relative_error(a, numeric);
            worst.max_gap = worst.max_gap.max((a - numeric).abs());
            // NaN must not hide behind a max().
            if err.is_nan() || err > worst.rel {
                worst.rel = err;
                worst.at = format!("{}[{i}]: analytic {a:e} vs numeric {numeric:e}", p.name);
            }
        }
    }
    worst
}

pub fn model(
    kind: ModelKind,
    vocab: usize,
    embed: usize,
    hidden: Vec<usize>,
    classes: usize,
    seed: u64,
) -> BranchyModel {
    let arch = Architecture {
        kind,
        vocab_size: vocab,
        embed_dim: embed,
        hidden_sizes: hidden,
        num_classes: classes,
        trainable_embeddings: true,
    };
    BranchyModel::new(init_parameters(&arch, seed).unwrap(), 0.3, 1.0, AlphaMode::Fixed, 32).unwrap()
}
