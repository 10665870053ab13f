//! Binary model files.
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! "BRANCHY\0"  u32 version
//! section*  :=  tag[4]  u64 byte_len  payload
//! ```
//!
//! Sections, in order: `CONF` (config echo), `VOCB`, `LABL`, `ARCH`, `PARM`,
//! `ALPH`, `THRS`. Strings are `u32 len` + UTF-8. Writing the same model twice
//! yields identical bytes.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::config::RunConfig;
use crate::data::Vocab;
use crate::engine::{AlphaMode, BranchyModel, ThresholdSet};
use crate::error::{Error, Result};
use crate::models::{Architecture, ModelKind, Network};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"BRANCHY\0";
pub const FORMAT_VERSION: u32 = 1;

/// Everything needed to serve a trained model.
#[derive(Clone, Debug, PartialEq)]
pub struct SavedModel {
    pub model: BranchyModel,
    pub vocab: Vocab,
    pub labels: Vec<String>,
    pub config: RunConfig,
}

#[derive(Default)]
struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn len(&mut self, v: usize) {
        self.u64(v as u64);
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64s(&mut self, v: &[f64]) {
        self.u32(v.len() as u32);
        v.iter().for_each(|&x| self.f64(x));
    }
    fn str(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.0.extend_from_slice(s.as_bytes());
    }
    fn section(&mut self, tag: &[u8; 4], body: Writer) {
        self.0.extend_from_slice(tag);
        self.u64(body.0.len() as u64);
        self.0.extend_from_slice(&body.0);
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| {
                Error::Format(format!(
                    "truncated file: wanted {n} bytes at offset {}, {} available",
                    self.pos,
                    self.buf.len() - self.pos
                ))
            })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn bool(&mut self) -> Result<bool> {
        match self.u8()? {
            0 => Ok(false),
            1 => Ok(true),
            b => Err(Error::Format(format!("invalid boolean byte {b}"))),
        }
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array()?))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.array()?))
    }
    fn len(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| Error::Format("length overflows usize".into()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.array()?))
    }
    fn f64s(&mut self) -> Result<Vec<f64>> {
        let n = self.u32()? as usize;
        // Guard the allocation against a corrupt count.
        if n.saturating_mul(8) > self.buf.len() - self.pos {
            return Err(Error::Format(format!("truncated file: {n} floats announced")));
        }
        (0..n).map(|_| self.f64()).collect()
    }
    fn str(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Format("string is not UTF-8".into()))
    }
    fn section(&mut self, tag: &[u8; 4]) -> Result<Reader<'a>> {
        let found = self.array::<4>()?;
        if &found != tag {
            return Err(Error::Format(format!(
                "expected section {:?}, found {:?}",
                String::from_utf8_lossy(tag),
                String::from_utf8_lossy(&found)
            )));
        }
        let n = self.len()?;
        Ok(Reader {
            buf: self.take(n)?,
            pos: 0,
        })
    }
    fn finish(&self, what: &str) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(Error::Format(format!(
                "{} unexpected trailing bytes in {what}",
                self.buf.len() - self.pos
            )));
        }
        Ok(())
    }
}

fn kind_code(kind: ModelKind) -> u8 {
    match kind {
        ModelKind::Dnn => 0,
        ModelKind::StackedLstm => 1,
    }
}

/// Scalar count of every parameter tensor `arch` allocates, alpha excluded.
fn expected_values(arch: &Architecture) -> Option<usize> {
    let mul = |a: usize, b: usize| a.checked_mul(b);
    let mut total = mul(arch.vocab_size, arch.embed_dim)?;
    let mut inp = arch.embed_dim;
    for &h in &arch.hidden_sizes {
        let layer = match arch.kind {
            ModelKind::Dnn => mul(inp, h)?.checked_add(h)?,
            ModelKind::StackedLstm => mul(4, mul(inp, h)?.checked_add(mul(h, h)?)?.checked_add(h)?)?,
        };
        let head = mul(h, arch.num_classes)?.checked_add(arch.num_classes)?;
        total = total.checked_add(layer)?.checked_add(head)?;
        inp = h;
    }
    Some(total)
}

pub fn to_bytes(saved: &SavedModel) -> Vec<u8> {
    let model = &saved.model;
    let arch = &model.network.arch;
    let mut out = Writer::default();
    out.0.extend_from_slice(MAGIC);
    out.u32(FORMAT_VERSION);

    let mut conf = Writer::default();
    let echo = saved.config.echo();
    conf.u32(echo.len() as u32);
    for (k, v) in &echo {
        conf.str(k);
        conf.str(v);
    }
    out.section(b"CONF", conf);

    let mut vocab = Writer::default();
    let tokens = saved.vocab.tokens();
    vocab.u32(tokens.len() as u32);
    tokens.iter().for_each(|t| vocab.str(t));
    out.section(b"VOCB", vocab);

    let mut labels = Writer::default();
    labels.u32(saved.labels.len() as u32);
    saved.labels.iter().for_each(|l| labels.str(l));
    out.section(b"LABL", labels);

    let mut a = Writer::default();
    a.u8(kind_code(arch.kind));
    a.len(arch.vocab_size);
    a.len(arch.embed_dim);
    a.len(arch.num_classes);
    a.u8(arch.trainable_embeddings as u8);
    a.u32(arch.hidden_sizes.len() as u32);
    arch.hidden_sizes.iter().for_each(|&h| a.len(h));
    a.len(model.max_len);
    out.section(b"ARCH", a);

    let mut p = Writer::default();
    let params = model.params();
    p.u32(params.len() as u32);
    for (_, param) in params.iter() {
        p.str(&param.name);
        p.u8(param.trainable as u8);
        let shape = param.tensor.shape();
        p.u32(shape.len() as u32);
        shape.iter().for_each(|&d| p.len(d));
        param.tensor.values().iter().for_each(|&v| p.f64(v));
    }
    out.section(b"PARM", p);

    let mut al = Writer::default();
    al.u8(match model.alphas.mode {
        AlphaMode::Fixed => 0,
        AlphaMode::Trainable => 1,
    });
    al.f64(model.alphas.r_l);
    al.f64(model.alphas.r_u);
    al.f64s(&model.alphas.weights);
    out.section(b"ALPH", al);

    let mut th = Writer::default();
    match &model.thresholds {
        Some(t) => {
            th.u8(1);
            th.f64s(t.values());
        }
        None => th.u8(0),
    }
    out.section(b"THRS", th);
    out.0
}

pub fn from_bytes(bytes: &[u8]) -> Result<SavedModel> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if &r
        .array::<8>()
        .map_err(|_| Error::Format("file too short for a model header".into()))?
        != MAGIC
    {
        return Err(Error::Format("not a model file (bad magic)".into()));
    }
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(Error::Version {
            found: version,
            expected: FORMAT_VERSION,
        });
    }

    let mut s = r.section(b"CONF")?;
    let mut echo = BTreeMap::new();
    for _ in 0..s.u32()? {
        let k = s.str()?;
        echo.insert(k, s.str()?);
    }
    s.finish("CONF")?;
    let config = RunConfig::from_echo(&echo).map_err(|e| Error::Format(format!("stored config: {e}")))?;

    let mut s = r.section(b"VOCB")?;
    let tokens = (0..s.u32()?).map(|_| s.str()).collect::<Result<Vec<_>>>()?;
    s.finish("VOCB")?;
    let vocab = Vocab::from_tokens(tokens)?;

    let mut s = r.section(b"LABL")?;
    let labels = (0..s.u32()?).map(|_| s.str()).collect::<Result<Vec<_>>>()?;
    s.finish("LABL")?;

    let mut s = r.section(b"ARCH")?;
    let kind = match s.u8()? {
        0 => ModelKind::Dnn,
        1 => ModelKind::StackedLstm,
        k => return Err(Error::Format(format!("unknown model kind code {k}"))),
    };
    let vocab_size = s.len()?;
    let embed_dim = s.len()?;
    let num_classes = s.len()?;
    let trainable_embeddings = s.bool()?;
    let hidden_sizes = (0..s.u32()?).map(|_| s.len()).collect::<Result<Vec<_>>>()?;
    let max_len = s.len()?;
    s.finish("ARCH")?;
    let arch = Architecture {
        kind,
        vocab_size,
        embed_dim,
        hidden_sizes,
        num_classes,
        trainable_embeddings,
    };
    if arch.vocab_size != vocab.len() || arch.num_classes != labels.len() {
        return Err(Error::Format(format!(
            "architecture expects {} tokens and {} classes; file has {} and {}",
            arch.vocab_size,
            arch.num_classes,
            vocab.len(),
            labels.len()
        )));
    }
    let mut p = r.section(b"PARM")?;
    let mut al = r.section(b"ALPH")?;
    let mode = match al.u8()? {
        0 => AlphaMode::Fixed,
        1 => AlphaMode::Trainable,
        m => return Err(Error::Format(format!("unknown alpha mode code {m}"))),
    };
    let r_l = al.f64()?;
    let r_u = al.f64()?;
    let weights = al.f64s()?;
    al.finish("ALPH")?;

    // Refuse corrupt shapes before allocating the skeleton.
    let needed = expected_values(&arch).and_then(|n| n.checked_mul(8));
    if needed.is_none_or(|n| n > p.buf.len()) {
        return Err(Error::Format(
            "parameter section is too small for the architecture".into(),
        ));
    }
    let network = Network::skeleton(&arch)?;
    let mut model = BranchyModel::new(network, r_l, r_u, mode, max_len)?;
    if weights.len() != model.num_exits() {
        return Err(Error::Format(format!(
            "{} alpha weights for {} exits",
            weights.len(),
            model.num_exits()
        )));
    }

    let count = p.u32()? as usize;
    if count != model.params().len() {
        return Err(Error::Format(format!(
            "file has {count} parameters, architecture needs {}",
            model.params().len()
        )));
    }
    for param in model.network.params.params_mut() {
        let name = p.str()?;
        if name != param.name {
            return Err(Error::Format(format!(
                "expected parameter {:?}, found {name:?}",
                param.name
            )));
        }
        let trainable = p.bool()?;
        let shape = (0..p.u32()?).map(|_| p.len()).collect::<Result<Vec<_>>>()?;
        if shape != param.tensor.shape() {
            return Err(Error::Format(format!(
                "parameter {name}: shape {shape:?}, expected {:?}",
                param.tensor.shape()
            )));
        }
        let values = (0..param.tensor.len()).map(|_| p.f64()).collect::<Result<Vec<_>>>()?;
        param.tensor = Tensor::new(shape, values)?;
        param.trainable = trainable;
    }
    p.finish("PARM")?;
    model.alphas.weights = weights;

    let mut s = r.section(b"THRS")?;
    model.thresholds = match s.bool()? {
        true => {
            let t = ThresholdSet::new(s.f64s()?)?;
            if t.len() != model.num_exits() {
                return Err(Error::Format(format!(
                    "{} thresholds for {} exits",
                    t.len(),
                    model.num_exits()
                )));
            }
            Some(t)
        }
        false => None,
    };
    s.finish("THRS")?;
    r.finish("model file")?;

    Ok(SavedModel {
        model,
        vocab,
        labels,
        config,
    })
}

pub fn save_model(saved: &SavedModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, to_bytes(saved)).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<SavedModel> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    from_bytes(&bytes)
}
