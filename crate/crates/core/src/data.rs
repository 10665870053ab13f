//! Utterance/intent ingestion, vocabulary, embeddings file loading, splits and
//! a synthetic intent corpus.
//!
//! TSV format: UTF-8, one `utterance<TAB>label` per line, no header.
//! Embedding format: `token v_1 ... v_D`, space separated.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const UNKNOWN_TOKEN: &str = "<unk>";
const STRIP: &[char] = &['.', ',', '!', '?', ';', ':', '\'', '"'];

/// Lowercase, split on whitespace, strip edge punctuation, drop empties.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(|w| w.to_lowercase().trim_matches(STRIP).to_string())
        .filter(|w| !w.is_empty())
        .collect()
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocab {
    token_to_index: HashMap<String, usize>,
    index_to_token: Vec<String>,
}

impl Vocab {
    /// Builds from an explicit token list; index 0 is always the unknown token.
    pub fn from_tokens<I: IntoIterator<Item = String>>(tokens: I) -> Result<Self> {
        let mut index_to_token = vec![UNKNOWN_TOKEN.to_string()];
        let mut token_to_index = HashMap::new();
        for t in tokens {
            if t == UNKNOWN_TOKEN || token_to_index.contains_key(&t) {
                return Err(Error::Format(format!("duplicate vocabulary token {t:?}")));
            }
            token_to_index.insert(t.clone(), index_to_token.len());
            index_to_token.push(t);
        }
        Ok(Vocab {
            token_to_index,
            index_to_token,
        })
    }

    /// Size including the unknown slot.
    pub fn len(&self) -> usize {
        self.index_to_token.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() <= 1
    }

    pub fn index(&self, token: &str) -> usize {
        self.token_to_index.get(token).copied().unwrap_or(0)
    }

    pub fn token(&self, index: usize) -> Option<&str> {
        self.index_to_token.get(index).map(String::as_str)
    }

    /// Known tokens in index order (excluding the unknown slot).
    pub fn tokens(&self) -> &[String] {
        &self.index_to_token[1..]
    }

    pub fn encode<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<usize> {
        tokens.iter().map(|t| self.index(t.as_ref())).collect()
    }
}

/// Tokens with frequency >= `min_count`, by descending frequency then lexicographically.
pub fn build_vocab<S: AsRef<str>>(corpus: &[Vec<S>], min_count: usize) -> Vocab {
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for sent in corpus {
        for t in sent {
            *counts.entry(t.as_ref()).or_default() += 1;
        }
    }
    let mut kept: Vec<(&str, usize)> = counts
        .into_iter()
        .filter(|&(t, c)| c >= min_count.max(1) && t != UNKNOWN_TOKEN)
        .collect();
    kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    Vocab::from_tokens(kept.into_iter().map(|(t, _)| t.to_string())).expect("counted tokens are unique")
}

#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub tokens: Vec<usize>,
    pub label: usize,
    pub raw_text: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub examples: Vec<Example>,
    pub vocab: Vocab,
    pub label_names: Vec<String>,
    pub max_len: Option<usize>,
    /// Lines dropped at ingestion because they tokenized to nothing.
    pub skipped_empty: usize,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.label_names.len()
    }

    /// Mean token count, rounded up, after `max_len` truncation.
    pub fn mean_len_ceil(&self) -> usize {
        if self.examples.is_empty() {
            return 1;
        }
        let cap = self.max_len.unwrap_or(usize::MAX);
        let total: usize = self.examples.iter().map(|e| e.tokens.len().min(cap)).sum();
        total.div_ceil(self.examples.len()).max(1)
    }

    fn with_examples(&self, examples: Vec<Example>) -> Dataset {
        Dataset {
            examples,
            vocab: self.vocab.clone(),
            label_names: self.label_names.clone(),
            max_len: self.max_len,
            skipped_empty: 0,
        }
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for e in &self.examples {
            out.push_str(&e.raw_text);
            out.push('\t');
            out.push_str(&self.label_names[e.label]);
            out.push('\n');
        }
        out
    }

    pub fn write_tsv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_tsv()).map_err(|e| Error::io(format!("writing {}", path.display()), e))
    }
}

/// Schema constraints for ingestion. `None` fields are built from the data.
#[derive(Clone, Copy, Debug, Default)]
pub struct TsvOptions<'a> {
    pub vocab: Option<&'a Vocab>,
    /// Frozen label set; unseen labels are rejected.
    pub labels: Option<&'a [String]>,
    pub min_count: usize,
}

pub fn load_tsv(path: impl AsRef<Path>, vocab: Option<&Vocab>) -> Result<Dataset> {
    load_tsv_with(
        path,
        TsvOptions {
            vocab,
            ..Default::default()
        },
    )
}

pub fn load_tsv_with(path: impl AsRef<Path>, opts: TsvOptions) -> Result<Dataset> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    parse_tsv(&text, path, opts)
}

pub fn parse_tsv(text: &str, path: &Path, opts: TsvOptions) -> Result<Dataset> {
    let mut rows = Vec::new();
    let mut skipped_empty = 0;
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (utt, label) = line.split_once('\t').ok_or_else(|| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            reason: "expected utterance<TAB>label".into(),
        })?;
        let tokens = tokenize(utt);
        if tokens.is_empty() {
            skipped_empty += 1;
            continue;
        }
        rows.push((utt.to_string(), tokens, label.to_string()));
    }

    let mut label_names: Vec<String> = opts.labels.map(<[String]>::to_vec).unwrap_or_default();
    let mut label_index: HashMap<String, usize> = label_names.iter().enumerate().map(|(i, l)| (l.clone(), i)).collect();

    let vocab = match opts.vocab {
        Some(v) => v.clone(),
        None => {
            let corpus: Vec<&Vec<String>> = rows.iter().map(|r| &r.1).collect();
            let corpus: Vec<Vec<&str>> = corpus.iter().map(|s| s.iter().map(String::as_str).collect()).collect();
            build_vocab(&corpus, opts.min_count)
        }
    };

    let mut examples = Vec::with_capacity(rows.len());
    for (raw_text, tokens, label) in rows {
        let idx = match label_index.get(&label) {
            Some(&i) => i,
            None if opts.labels.is_some() => {
                return Err(Error::Label(format!(
                    "label {label:?} in {} is not in the model's label set",
                    path.display()
                )))
            }
            None => {
                label_names.push(label.clone());
                label_index.insert(label, label_names.len() - 1);
                label_names.len() - 1
            }
        };
        examples.push(Example {
            tokens: vocab.encode(&tokens),
            label: idx,
            raw_text,
        });
    }

    Ok(Dataset {
        examples,
        vocab,
        label_names,
        max_len: None,
        skipped_empty,
    })
}

/// Overwrites embedding rows for vocabulary tokens found in the file.
/// Returns the number of distinct vocabulary tokens covered.
pub fn load_embeddings(path: impl AsRef<Path>, vocab: &Vocab, weights: &mut Tensor) -> Result<usize> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    parse_embeddings(&text, path, vocab, weights)
}

pub fn parse_embeddings(text: &str, path: &Path, vocab: &Vocab, weights: &mut Tensor) -> Result<usize> {
    let dim = match weights.shape() {
        [v, d] if *v == vocab.len() => *d,
        s => return Err(Error::dim("load_embeddings", s, &[vocab.len()])),
    };
    let mut covered = vec![false; vocab.len()];
    for (i, line) in text.lines().enumerate() {
        let mut fields = line.split_whitespace();
        let Some(token) = fields.next() else {
            continue;
        };
        let parse_err = |reason: String| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            reason,
        };
        let values = fields
            .map(|f| f.parse::<f64>().map_err(|e| parse_err(format!("{f:?}: {e}"))))
            .collect::<Result<Vec<f64>>>()?;
        if values.len() != dim {
            return Err(parse_err(format!("expected {dim} values, found {}", values.len())));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(parse_err("non-finite embedding value".into()));
        }
        let idx = vocab.index(token);
        if idx == 0 {
            continue;
        }
        weights.values_mut()[idx * dim..(idx + 1) * dim].copy_from_slice(&values);
        covered[idx] = true;
    }
    Ok(covered.iter().filter(|&&c| c).count())
}

/// Synthetic intent corpus: class `c` owns `vocab_per_class` signature tokens;
/// utterances are 3-8 tokens from their class set, each independently swapped
/// for a token of another class with probability `noise`.
pub fn synth_generate(
    classes: usize,
    n_per_class: usize,
    vocab_per_class: usize,
    noise: f64,
    seed: u64,
) -> Result<Dataset> {
    if classes < 2 {
        return Err(Error::Config(format!("need at least 2 classes, got {classes}")));
    }
    if n_per_class == 0 || vocab_per_class == 0 {
        return Err(Error::Config("n_per_class and vocab_per_class must be positive".into()));
    }
    if !(0.0..1.0).contains(&noise) {
        return Err(Error::Config(format!("noise must lie in [0, 1), got {noise}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let word = |c: usize, j: usize| format!("c{c}w{j}");
    let label_names: Vec<String> = (0..classes).map(|c| format!("intent_{c:02}")).collect();

    let mut rows = Vec::with_capacity(classes * n_per_class);
    for _ in 0..n_per_class {
        for c in 0..classes {
            let len = rng.random_range(3..=8);
            let words: Vec<String> = (0..len)
                .map(|_| {
                    let owner = if rng.random::<f64>() < noise {
                        let other = rng.random_range(0..classes - 1);
                        if other >= c {
                            other + 1
                        } else {
                            other
                        }
                    } else {
                        c
                    };
                    word(owner, rng.random_range(0..vocab_per_class))
                })
                .collect();
            rows.push((words, c));
        }
    }

    let corpus: Vec<&Vec<String>> = rows.iter().map(|r| &r.0).collect();
    let corpus: Vec<Vec<&str>> = corpus.iter().map(|s| s.iter().map(String::as_str).collect()).collect();
    let vocab = build_vocab(&corpus, 1);
    let examples = rows
        .into_iter()
        .map(|(words, label)| Example {
            tokens: vocab.encode(&words),
            label,
            raw_text: words.join(" "),
        })
        .collect();
    Ok(Dataset {
        examples,
        vocab,
        label_names,
        max_len: None,
        skipped_empty: 0,
    })
}

/// Seeded shuffle into train/dev/test. Dev and test get floor-allocated
/// sizes; the remainder goes to train.
pub fn split(data: &Dataset, fractions: (f64, f64, f64), seed: u64) -> Result<(Dataset, Dataset, Dataset)> {
    let (tr, dv, te) = fractions;
    if !(tr > 0.0 && dv > 0.0 && te > 0.0) || (tr + dv + te - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!(
            "split fractions must be positive and sum to 1, got {fractions:?}"
        )));
    }
    let n = data.len();
    // The nudge keeps e.g. 10 * 0.1 from flooring to 0 on representation error.
    let n_dev = (n as f64 * dv + 1e-9).floor() as usize;
    let n_test = (n as f64 * te + 1e-9).floor() as usize;
    let n_train = n.saturating_sub(n_dev + n_test);
    if n_dev == 0 || n_test == 0 || n_train == 0 {
        return Err(Error::Config(format!(
            "split of {n} examples leaves an empty partition ({n_train}/{n_dev}/{n_test})"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let pick = |idx: &[usize]| data.with_examples(idx.iter().map(|&i| data.examples[i].clone()).collect());
    Ok((
        pick(&order[..n_train]),
        pick(&order[n_train..n_train + n_dev]),
        pick(&order[n_train + n_dev..]),
    ))
}
