//! Backbones that expose one feature vector per exit point.
//!
//! Two architectures are provided: a ReLU feed-forward stack over the mean
//! word embedding, and a stacked unidirectional LSTM whose exit features are
//! the last-time-step hidden states of each stack layer.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{NodeId, ParamId, ParamStore, Tape, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModelKind {
    Dnn,
    StackedLstm,
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModelKind::Dnn => write!(f, "dnn"),
            ModelKind::StackedLstm => write!(f, "stacked-lstm"),
        }
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dnn" => Ok(ModelKind::Dnn),
            "stacked-lstm" | "lstm" => Ok(ModelKind::StackedLstm),
            other => Err(Error::Config(format!(
                "unknown model kind {other:?} (expected dnn or stacked-lstm)"
            ))),
        }
    }
}

/// Everything needed to allocate a network's parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Architecture {
    pub kind: ModelKind,
    pub vocab_size: usize,
    pub embed_dim: usize,
    /// One entry per backbone layer, hence one per exit point.
    pub hidden_sizes: Vec<usize>,
    pub num_classes: usize,
    pub trainable_embeddings: bool,
}

impl Architecture {
    pub fn num_exits(&self) -> usize {
        self.hidden_sizes.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.vocab_size == 0 || self.embed_dim == 0 {
            return Err(Error::Architecture(
                "vocab size and embedding dim must be positive".into(),
            ));
        }
        if self.hidden_sizes.is_empty() || self.hidden_sizes.contains(&0) {
            return Err(Error::Architecture(format!(
                "hidden sizes must be non-empty and positive, got {:?}",
                self.hidden_sizes
            )));
        }
        if self.num_classes < 2 {
            return Err(Error::Architecture(format!(
                "need at least 2 classes, got {}",
                self.num_classes
            )));
        }
        Ok(())
    }
}

/// Word embeddings; row 0 is the unknown-word token.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingTable {
    pub vocab_size: usize,
    pub dim: usize,
    pub weights: ParamId,
    pub trainable: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DenseLayer {
    pub in_dim: usize,
    pub out_dim: usize,
    pub w: ParamId,
    pub b: ParamId,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DnnBackbone {
    pub layers: Vec<DenseLayer>,
}

impl DnnBackbone {
    pub fn hidden_sizes(&self) -> Vec<usize> {
        self.layers.iter().map(|l| l.out_dim).collect()
    }
}

/// Gate order in the parameter arrays.
pub const GATES: [&str; 4] = ["i", "f", "o", "g"];
pub const FORGET_GATE: usize = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct LstmCellParams {
    pub input_dim: usize,
    pub hidden_dim: usize,
    /// Input projections `[input_dim, hidden_dim]`, gate order i, f, o, g.
    pub w: [ParamId; 4],
    /// Recurrent projections `[hidden_dim, hidden_dim]`.
    pub u: [ParamId; 4],
    pub b: [ParamId; 4],
}

#[derive(Clone, Debug, PartialEq)]
pub struct StackedLstmBackbone {
    pub cells: Vec<LstmCellParams>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Backbone {
    Dnn(DnnBackbone),
    StackedLstm(StackedLstmBackbone),
}

impl Backbone {
    pub fn num_exits(&self) -> usize {
        match self {
            Backbone::Dnn(d) => d.layers.len(),
            Backbone::StackedLstm(s) => s.cells.len(),
        }
    }

    pub fn kind(&self) -> ModelKind {
        match self {
            Backbone::Dnn(_) => ModelKind::Dnn,
            Backbone::StackedLstm(_) => ModelKind::StackedLstm,
        }
    }

    /// Feature dimension at each exit.
    pub fn feature_dims(&self) -> Vec<usize> {
        match self {
            Backbone::Dnn(d) => d.hidden_sizes(),
            Backbone::StackedLstm(s) => s.cells.iter().map(|c| c.hidden_dim).collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExitHead {
    pub feature_dim: usize,
    pub num_classes: usize,
    pub w: ParamId,
    pub b: ParamId,
}

/// Parameters plus the structure that indexes them.
#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    pub arch: Architecture,
    pub params: ParamStore,
    pub embedding: EmbeddingTable,
    pub backbone: Backbone,
    pub heads: Vec<ExitHead>,
}

impl Network {
    pub fn num_exits(&self) -> usize {
        self.heads.len()
    }

    pub fn num_classes(&self) -> usize {
        self.arch.num_classes
    }

    /// Allocates every parameter in a fixed order, filling weights from
    /// `weight(fan_in, fan_out)`. Biases start at zero, forget gates at 1.
    fn allocate(arch: &Architecture, mut weight: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        arch.validate()?;
        let mut params = ParamStore::new();
        let mut matrix =
            |params: &mut ParamStore, name: String, rows: usize, cols: usize, trainable: bool| -> Result<ParamId> {
                let values = (0..rows * cols).map(|_| weight(rows, cols)).collect();
                Ok(params.add(name, Tensor::new(vec![rows, cols], values)?, trainable))
            };
        fn fill(params: &mut ParamStore, name: String, n: usize, v: f64) -> ParamId {
            params.add(name, Tensor::new(vec![n], vec![v; n]).expect("n > 0"), true)
        }

        let embedding = EmbeddingTable {
            vocab_size: arch.vocab_size,
            dim: arch.embed_dim,
            weights: matrix(
                &mut params,
                "embedding".into(),
                arch.vocab_size,
                arch.embed_dim,
                arch.trainable_embeddings,
            )?,
            trainable: arch.trainable_embeddings,
        };

        let mut in_dim = arch.embed_dim;
        let backbone = match arch.kind {
            ModelKind::Dnn => {
                let mut layers = Vec::new();
                for (k, &out_dim) in arch.hidden_sizes.iter().enumerate() {
                    let w = matrix(&mut params, format!("dense{k}.w"), in_dim, out_dim, true)?;
                    let b = fill(&mut params, format!("dense{k}.b"), out_dim, 0.0);
                    layers.push(DenseLayer { in_dim, out_dim, w, b });
                    in_dim = out_dim;
                }
                Backbone::Dnn(DnnBackbone { layers })
            }
            ModelKind::StackedLstm => {
                let mut cells = Vec::new();
                for (k, &h) in arch.hidden_sizes.iter().enumerate() {
                    let mut w = Vec::new();
                    let mut u = Vec::new();
                    let mut b = Vec::new();
                    for (gi, g) in GATES.iter().enumerate() {
                        w.push(matrix(&mut params, format!("lstm{k}.w_{g}"), in_dim, h, true)?);
                        u.push(matrix(&mut params, format!("lstm{k}.u_{g}"), h, h, true)?);
                        let bias = if gi == FORGET_GATE { 1.0 } else { 0.0 };
                        b.push(fill(&mut params, format!("lstm{k}.b_{g}"), h, bias));
                    }
                    cells.push(LstmCellParams {
                        input_dim: in_dim,
                        hidden_dim: h,
                        w: w.try_into().expect("four gates"),
                        u: u.try_into().expect("four gates"),
                        b: b.try_into().expect("four gates"),
                    });
                    in_dim = h;
                }
                Backbone::StackedLstm(StackedLstmBackbone { cells })
            }
        };

        let mut heads = Vec::new();
        for (n, &fd) in arch.hidden_sizes.iter().enumerate() {
            let w = matrix(&mut params, format!("head{n}.w"), fd, arch.num_classes, true)?;
            let b = fill(&mut params, format!("head{n}.b"), arch.num_classes, 0.0);
            heads.push(ExitHead {
                feature_dim: fd,
                num_classes: arch.num_classes,
                w,
                b,
            });
        }

        Ok(Network {
            arch: arch.clone(),
            params,
            embedding,
            backbone,
            heads,
        })
    }

    /// All-zero weights with the standard bias rule; used when loading.
    pub fn skeleton(arch: &Architecture) -> Result<Self> {
        Network::allocate(arch, |_, _| 0.0)
    }
}

/// Glorot-uniform weights, zero biases, forget-gate bias 1.0.
pub fn init_parameters(arch: &Architecture, seed: u64) -> Result<Network> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Network::allocate(arch, |fan_in, fan_out| {
        let s = (6.0 / (fan_in + fan_out) as f64).sqrt();
        rng.random_range(-s..=s)
    })
}

pub fn mean_embed(tape: &mut Tape, tokens: &[usize], table: &EmbeddingTable) -> Result<NodeId> {
    let t = tape.param(table.weights);
    tape.mean_rows(t, tokens)
}

fn dense_step(tape: &mut Tape, x: NodeId, layer: &DenseLayer) -> Result<NodeId> {
    let (w, b) = (tape.param(layer.w), tape.param(layer.b));
    let z = tape.affine(x, w, Some(b))?;
    Ok(tape.relu(z))
}

/// Post-ReLU activation of every hidden layer, in order.
pub fn dnn_forward(tape: &mut Tape, x: NodeId, backbone: &DnnBackbone) -> Result<Vec<NodeId>> {
    let mut h = x;
    let mut out = Vec::with_capacity(backbone.layers.len());
    for layer in &backbone.layers {
        h = dense_step(tape, h, layer)?;
        out.push(h);
    }
    Ok(out)
}

/// One LSTM step. Returns `(h_t, c_t)`.
pub fn lstm_cell_step(
    tape: &mut Tape,
    x: NodeId,
    h_prev: NodeId,
    c_prev: NodeId,
    cell: &LstmCellParams,
) -> Result<(NodeId, NodeId)> {
    if tape.shape(h_prev) != [cell.hidden_dim] || tape.shape(c_prev) != [cell.hidden_dim] {
        return Err(Error::dim("lstm_cell_step", tape.shape(h_prev), &[cell.hidden_dim]));
    }
    let mut pre = [x; 4];
    for (g, slot) in pre.iter_mut().enumerate() {
        let (w, u, b) = (tape.param(cell.w[g]), tape.param(cell.u[g]), tape.param(cell.b[g]));
        let xw = tape.affine(x, w, Some(b))?;
        let hu = tape.affine(h_prev, u, None)?;
        *slot = tape.add(xw, hu)?;
    }
    let i = tape.sigmoid(pre[0]);
    let f = tape.sigmoid(pre[1]);
    let o = tape.sigmoid(pre[2]);
    let g = tape.tanh(pre[3]);
    let keep = tape.mul(f, c_prev)?;
    let write = tape.mul(i, g)?;
    let c = tape.add(keep, write)?;
    let tc = tape.tanh(c);
    let h = tape.mul(o, tc)?;
    Ok((h, c))
}

/// Runs one LSTM layer over a whole sequence from zero state.
pub fn lstm_layer(tape: &mut Tape, inputs: &[NodeId], cell: &LstmCellParams) -> Result<Vec<NodeId>> {
    if inputs.is_empty() {
        return Err(Error::EmptyUtterance);
    }
    let mut h = tape.input_vec(vec![0.0; cell.hidden_dim]);
    let mut c = tape.input_vec(vec![0.0; cell.hidden_dim]);
    let mut hs = Vec::with_capacity(inputs.len());
    for &x in inputs {
        (h, c) = lstm_cell_step(tape, x, h, c, cell)?;
        hs.push(h);
    }
    Ok(hs)
}

/// Last-time-step hidden state of every stack layer.
pub fn stacked_lstm_forward(tape: &mut Tape, inputs: &[NodeId], backbone: &StackedLstmBackbone) -> Result<Vec<NodeId>> {
    let mut seq = inputs.to_vec();
    let mut out = Vec::with_capacity(backbone.cells.len());
    for cell in &backbone.cells {
        seq = lstm_layer(tape, &seq, cell)?;
        out.push(*seq.last().expect("non-empty sequence"));
    }
    Ok(out)
}

pub fn exit_logits(tape: &mut Tape, feature: NodeId, head: &ExitHead) -> Result<NodeId> {
    let (w, b) = (tape.param(head.w), tape.param(head.b));
    tape.affine(feature, w, Some(b))
}

enum CursorState {
    Dnn { h: NodeId },
    Lstm { seq: Vec<NodeId> },
}

/// Extends the backbone one layer at a time, so callers can stop at any exit
/// without paying for deeper layers.
pub struct FeatureCursor<'n> {
    net: &'n Network,
    state: CursorState,
    layers_evaluated: usize,
}

impl<'n> FeatureCursor<'n> {
    /// Embeds `tokens`. The LSTM reads at most `max_len` tokens; the DNN reads all.
    pub fn new(tape: &mut Tape, net: &'n Network, tokens: &[usize], max_len: usize) -> Result<Self> {
        if tokens.is_empty() {
            return Err(Error::EmptyUtterance);
        }
        let state = match &net.backbone {
            Backbone::Dnn(_) => CursorState::Dnn {
                h: mean_embed(tape, tokens, &net.embedding)?,
            },
            Backbone::StackedLstm(_) => {
                let table = tape.param(net.embedding.weights);
                let seq = tokens
                    .iter()
                    .take(max_len.max(1))
                    .map(|&t| tape.row(table, t))
                    .collect::<Result<Vec<_>>>()?;
                CursorState::Lstm { seq }
            }
        };
        Ok(FeatureCursor {
            net,
            state,
            layers_evaluated: 0,
        })
    }

    pub fn layers_evaluated(&self) -> usize {
        self.layers_evaluated
    }

    /// Feature of the next exit, or `None` past the last layer.
    pub fn advance(&mut self, tape: &mut Tape) -> Result<Option<NodeId>> {
        let k = self.layers_evaluated;
        let feature = match (&mut self.state, &self.net.backbone) {
            (CursorState::Dnn { h }, Backbone::Dnn(d)) => {
                let Some(layer) = d.layers.get(k) else {
                    return Ok(None);
                };
                *h = dense_step(tape, *h, layer)?;
                *h
            }
            (CursorState::Lstm { seq }, Backbone::StackedLstm(s)) => {
                let Some(cell) = s.cells.get(k) else {
                    return Ok(None);
                };
                *seq = lstm_layer(tape, seq, cell)?;
                *seq.last().expect("non-empty sequence")
            }
            _ => unreachable!("cursor state always matches its backbone"),
        };
        self.layers_evaluated += 1;
        Ok(Some(feature))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn arch(kind: ModelKind, hidden: Vec<usize>) -> Architecture {
        Architecture {
            kind,
            vocab_size: 7,
            embed_dim: 3,
            hidden_sizes: hidden,
            num_classes: 4,
            trainable_embeddings: true,
        }
    }

    fn zero_params(net: &mut Network) {
        for p in net.params.params_mut() {
            p.tensor.values_mut().iter_mut().for_each(|v| *v = 0.0);
        }
    }

    #[test]
    fn mean_embed_examples() {
        let mut net = init_parameters(&arch(ModelKind::Dnn, vec![4, 4]), 1).unwrap();
        let rows = net.params.get_mut(net.embedding.weights).values_mut();
        rows[3..6].copy_from_slice(&[1.0, 2.0, 0.0]);
        rows[6..9].copy_from_slice(&[3.0, 4.0, 0.0]);
        let mut t = Tape::new(&net.params);
        let one = mean_embed(&mut t, &[1], &net.embedding).unwrap();
        assert_eq!(t.value(one), &[1.0, 2.0, 0.0]);
        let two = mean_embed(&mut t, &[1, 2], &net.embedding).unwrap();
        assert_eq!(t.value(two), &[2.0, 3.0, 0.0]);
        let rep = mean_embed(&mut t, &[2, 2, 2, 2], &net.embedding).unwrap();
        let single = mean_embed(&mut t, &[2], &net.embedding).unwrap();
        assert_eq!(t.value(rep), t.value(single));
        assert!(matches!(
            mean_embed(&mut t, &[], &net.embedding),
            Err(Error::EmptyUtterance)
        ));
        assert!(matches!(
            mean_embed(&mut t, &[7], &net.embedding),
            Err(Error::Index { .. })
        ));
    }

    #[test]
    fn dnn_single_identity_layer_is_affine() {
        let a = Architecture {
            embed_dim: 2,
            ..arch(ModelKind::Dnn, vec![2])
        };
        let mut net = init_parameters(&a, 3).unwrap();
        let Backbone::Dnn(d) = net.backbone.clone() else {
            unreachable!()
        };
        net.params
            .get_mut(d.layers[0].w)
            .values_mut()
            .copy_from_slice(&[1.0, 0.0, 0.0, 1.0]);
        net.params
            .get_mut(d.layers[0].b)
            .values_mut()
            .copy_from_slice(&[0.5, 0.25]);
        let mut t = Tape::new(&net.params);
        let x = t.input_vec(vec![2.0, 3.0]);
        let feats = dnn_forward(&mut t, x, &d).unwrap();
        assert_eq!(t.value(feats[0]), &[2.5, 3.25]);
    }

    #[test]
    fn dnn_dead_relu_layer() {
        let a = Architecture {
            embed_dim: 2,
            ..arch(ModelKind::Dnn, vec![2, 2])
        };
        let mut net = init_parameters(&a, 3).unwrap();
        let Backbone::Dnn(d) = net.backbone.clone() else {
            unreachable!()
        };
        net.params
            .get_mut(d.layers[0].w)
            .values_mut()
            .copy_from_slice(&[-1.0, -1.0, -1.0, -1.0]);
        net.params
            .get_mut(d.layers[1].b)
            .values_mut()
            .copy_from_slice(&[0.7, -0.2]);
        let mut t = Tape::new(&net.params);
        let x = t.input_vec(vec![1.0, 2.0]);
        let feats = dnn_forward(&mut t, x, &d).unwrap();
        assert_eq!(t.value(feats[0]), &[0.0, 0.0]);
        assert_eq!(t.value(feats[1]), &[0.7, 0.0]);
    }

    #[test]
    fn forward_returns_one_feature_per_layer() {
        for kind in [ModelKind::Dnn, ModelKind::StackedLstm] {
            let net = init_parameters(&arch(kind, vec![5, 3, 6]), 9).unwrap();
            let mut t = Tape::new(&net.params);
            let feats = match &net.backbone {
                Backbone::Dnn(d) => {
                    let x = mean_embed(&mut t, &[1, 2], &net.embedding).unwrap();
                    dnn_forward(&mut t, x, d).unwrap()
                }
                Backbone::StackedLstm(s) => {
                    let table = t.param(net.embedding.weights);
                    let xs: Vec<_> = [1, 2, 3].iter().map(|&i| t.row(table, i).unwrap()).collect();
                    stacked_lstm_forward(&mut t, &xs, s).unwrap()
                }
            };
            let dims: Vec<usize> = feats.iter().map(|&f| t.shape(f)[0]).collect();
            assert_eq!(dims, vec![5, 3, 6]);
        }
    }

    #[test]
    fn lstm_zero_params_closed_form() {
        let a = Architecture {
            embed_dim: 2,
            ..arch(ModelKind::StackedLstm, vec![3])
        };
        let mut net = init_parameters(&a, 0).unwrap();
        zero_params(&mut net);
        let Backbone::StackedLstm(s) = &net.backbone else {
            unreachable!()
        };
        let mut t = Tape::new(&net.params);
        let x = t.input_vec(vec![0.4, -1.3]);
        let c_prev_v = [0.8, -2.0, 0.0];
        let h0 = t.input_vec(vec![0.1, 0.2, 0.3]);
        let c0 = t.input_vec(c_prev_v.to_vec());
        let (h, c) = lstm_cell_step(&mut t, x, h0, c0, &s.cells[0]).unwrap();
        for (k, cp) in c_prev_v.iter().enumerate() {
            assert!((t.value(c)[k] - 0.5 * cp).abs() < 1e-15);
            let want = 0.5 * (0.5 * cp).tanh();
            assert!((t.value(h)[k] - want).abs() < 1e-15);
        }

        let z = t.input_vec(vec![0.0; 3]);
        let (h, c) = lstm_cell_step(&mut t, x, z, z, &s.cells[0]).unwrap();
        assert_eq!(t.value(h), &[0.0; 3]);
        assert_eq!(t.value(c), &[0.0; 3]);
    }

    #[test]
    fn lstm_zero_params_give_zero_features() {
        let mut net = init_parameters(&arch(ModelKind::StackedLstm, vec![4, 4, 2]), 5).unwrap();
        zero_params(&mut net);
        net.params
            .get_mut(net.embedding.weights)
            .values_mut()
            .iter_mut()
            .enumerate()
            .for_each(|(i, v)| *v = i as f64 * 0.1 - 0.5);
        let Backbone::StackedLstm(s) = &net.backbone else {
            unreachable!()
        };
        let mut t = Tape::new(&net.params);
        let table = t.param(net.embedding.weights);
        let xs: Vec<_> = [3, 1, 6, 2].iter().map(|&i| t.row(table, i).unwrap()).collect();
        for f in stacked_lstm_forward(&mut t, &xs, s).unwrap() {
            assert!(t.value(f).iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn lstm_single_step_matches_cell() {
        let net = init_parameters(&arch(ModelKind::StackedLstm, vec![4, 3]), 11).unwrap();
        let Backbone::StackedLstm(s) = &net.backbone else {
            unreachable!()
        };
        let mut t = Tape::new(&net.params);
        let table = t.param(net.embedding.weights);
        let x = t.row(table, 4).unwrap();
        let feats = stacked_lstm_forward(&mut t, &[x], s).unwrap();

        let z1 = t.input_vec(vec![0.0; 4]);
        let (h1, _) = lstm_cell_step(&mut t, x, z1, z1, &s.cells[0]).unwrap();
        let z2 = t.input_vec(vec![0.0; 3]);
        let (h2, _) = lstm_cell_step(&mut t, h1, z2, z2, &s.cells[1]).unwrap();
        assert_eq!(t.value(feats[0]), t.value(h1));
        assert_eq!(t.value(feats[1]), t.value(h2));
    }

    #[test]
    fn lstm_empty_sequence() {
        let net = init_parameters(&arch(ModelKind::StackedLstm, vec![2, 2]), 1).unwrap();
        let Backbone::StackedLstm(s) = &net.backbone else {
            unreachable!()
        };
        let mut t = Tape::new(&net.params);
        assert!(matches!(
            stacked_lstm_forward(&mut t, &[], s),
            Err(Error::EmptyUtterance)
        ));
    }

    #[test]
    fn exit_logits_examples() {
        let a = Architecture {
            num_classes: 2,
            ..arch(ModelKind::Dnn, vec![2])
        };
        let mut net = init_parameters(&a, 2).unwrap();
        let head = net.heads[0].clone();
        let mut t = Tape::new(&net.params);
        let zero = t.input_vec(vec![0.0, 0.0]);
        let l = exit_logits(&mut t, zero, &head).unwrap();
        assert_eq!(t.value(l), &[0.0, 0.0]);
        drop(t);

        net.params
            .get_mut(head.w)
            .values_mut()
            .copy_from_slice(&[1.0, 0.0, 0.0, 2.0]);
        net.params.get_mut(head.b).values_mut().copy_from_slice(&[0.0, 1.0]);
        let mut t = Tape::new(&net.params);
        let f = t.input_vec(vec![1.0, 2.0]);
        let l = exit_logits(&mut t, f, &head).unwrap();
        assert_eq!(t.value(l), &[1.0, 5.0]);

        let bad = t.input_vec(vec![1.0, 2.0, 3.0]);
        assert!(matches!(exit_logits(&mut t, bad, &head), Err(Error::Dimension { .. })));
    }

    #[test]
    fn init_is_deterministic_and_bounded() {
        let a = arch(ModelKind::StackedLstm, vec![6, 5]);
        let n1 = init_parameters(&a, 42).unwrap();
        let n2 = init_parameters(&a, 42).unwrap();
        assert_eq!(n1, n2);
        let n3 = init_parameters(&a, 43).unwrap();
        assert_ne!(n1.params, n3.params);

        for (_, p) in n1.params.iter() {
            let shape = p.tensor.shape();
            if shape.len() == 2 {
                let s = (6.0 / (shape[0] + shape[1]) as f64).sqrt();
                assert!(p.tensor.values().iter().all(|v| v.abs() <= s), "{}", p.name);
            } else {
                let want = if p.name.ends_with(".b_f") { 1.0 } else { 0.0 };
                assert!(p.tensor.values().iter().all(|&v| v == want), "{}", p.name);
            }
        }
    }

    #[test]
    fn init_rejects_bad_dims() {
        assert!(matches!(
            init_parameters(&arch(ModelKind::Dnn, vec![4, 0]), 1),
            Err(Error::Architecture(_))
        ));
        let mut a = arch(ModelKind::Dnn, vec![4]);
        a.embed_dim = 0;
        assert!(init_parameters(&a, 1).is_err());
    }

    #[test]
    fn cursor_counts_layers() {
        let net = init_parameters(&arch(ModelKind::StackedLstm, vec![3, 3, 3]), 4).unwrap();
        let mut t = Tape::new(&net.params);
        let mut cur = FeatureCursor::new(&mut t, &net, &[1, 2, 3, 4, 5], 3).unwrap();
        assert!(cur.advance(&mut t).unwrap().is_some());
        assert_eq!(cur.layers_evaluated(), 1);
        cur.advance(&mut t).unwrap();
        cur.advance(&mut t).unwrap();
        assert!(cur.advance(&mut t).unwrap().is_none());
        assert_eq!(cur.layers_evaluated(), 3);
    }
}
