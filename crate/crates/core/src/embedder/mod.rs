//! Sequence embeddings learned by reconstructing token sequences.

mod net;

use std::collections::{BTreeSet, HashMap};
use std::io::{Read, Write};

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use net::{Params, TENSOR_NAMES};

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const BOS: usize = 2;
pub const EOS: usize = 3;
const SPECIALS: [&str; 4] = ["<pad>", "<unk>", "<bos>", "<eos>"];

#[derive(Debug, Error)]
pub enum EmbedderError {
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("sequence of {len} tokens exceeds max_len {max_len}")]
    SequenceTooLong { len: usize, max_len: usize },
    #[error("loss became {loss} at epoch {epoch}, sequence {sequence}")]
    NonFiniteLoss { epoch: usize, sequence: usize, loss: f64 },
    #[error("invalid embedder config: {0}")]
    Config(String),
    #[error("model file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    fn from_tokens(tokens: Vec<String>) -> Self {
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Vocab { tokens, index }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// `[BOS] seq [EOS]` as indices.
    pub fn encode<S: AsRef<str>>(&self, seq: &[S]) -> Vec<usize> {
        let mut ids = Vec::with_capacity(seq.len() + 2);
        ids.push(BOS);
        ids.extend(seq.iter().map(|t| self.id(t.as_ref())));
        ids.push(EOS);
        ids
    }
}

/// Keep the most frequent tokens, ties broken lexicographically, so that the
/// vocabulary holds at most `max_size` entries including the four specials.
pub fn build_vocab<S: AsRef<str>>(corpus: &[Vec<S>], max_size: usize) -> Result<Vocab, EmbedderError> {
    if corpus.is_empty() {
        return Err(EmbedderError::EmptyCorpus);
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for tok in corpus.iter().flatten() {
        *counts.entry(tok.as_ref()).or_default() += 1;
    }
    let mut ranked: Vec<(&str, usize)> = counts.into_iter().filter(|(t, _)| !SPECIALS.contains(t)).collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
    let mut tokens: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
    let room = max_size.saturating_sub(tokens.len());
    tokens.extend(ranked.into_iter().take(room).map(|(t, _)| t.to_string()));
    Ok(Vocab::from_tokens(tokens))
}

fn default_max_len() -> usize {
    crate::lex::DEFAULT_WINDOW
}
fn default_embed_dim() -> usize {
    64
}
fn default_hidden_dim() -> usize {
    128
}
fn default_epochs() -> usize {
    10
}
fn default_learning_rate() -> f64 {
    0.08
}
fn default_vocab_size() -> usize {
    5000
}
fn default_clip_norm() -> f64 {
    CLIP
}
const CLIP: f64 = 5.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedderConfig {
    #[serde(default = "default_max_len")]
    pub max_len: usize,
    #[serde(default = "default_embed_dim")]
    pub embed_dim: usize,
    #[serde(default = "default_hidden_dim")]
    pub hidden_dim: usize,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_learning_rate")]
    pub learning_rate: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_vocab_size")]
    pub vocab_size: usize,
    /// Gradients longer than this are rescaled before each step.
    #[serde(default = "default_clip_norm")]
    pub clip_norm: f64,
}

impl Default for EmbedderConfig {
    fn default() -> Self {
        EmbedderConfig {
            max_len: default_max_len(),
            embed_dim: default_embed_dim(),
            hidden_dim: default_hidden_dim(),
            epochs: default_epochs(),
            learning_rate: default_learning_rate(),
            seed: 0,
            vocab_size: default_vocab_size(),
            clip_norm: default_clip_norm(),
        }
    }
}

impl EmbedderConfig {
    pub fn validate(&self) -> Result<(), EmbedderError> {
        let bad = |m: &str| Err(EmbedderError::Config(m.to_string()));
        if self.epochs < 1 {
            return bad("epochs must be at least 1");
        }
        if self.max_len < 1 || self.embed_dim < 1 || self.hidden_dim < 1 {
            return bad("max_len, embed_dim and hidden_dim must be positive");
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad("learning_rate must be positive");
        }
        if self.clip_norm.is_nan() || self.clip_norm <= 0.0 {
            return bad("clip_norm must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderDecoderModel {
    pub params: Params,
    pub vocab: Vocab,
    pub config: EmbedderConfig,
    /// Mean training loss of each epoch.
    pub epoch_loss: Vec<f64>,
}

fn check_len(len: usize, max_len: usize) -> Result<(), EmbedderError> {
    if len > max_len {
        return Err(EmbedderError::SequenceTooLong { len, max_len });
    }
    Ok(())
}

/// Train on `corpus` with per-sequence SGD in a seeded shuffled order.
pub fn train<S: AsRef<str>>(corpus: &[Vec<S>], cfg: &EmbedderConfig) -> Result<EncoderDecoderModel, EmbedderError> {
    cfg.validate()?;
    for seq in corpus {
        check_len(seq.len(), cfg.max_len)?;
    }
    let vocab = build_vocab(corpus, cfg.vocab_size)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut params = Params::init(vocab.len(), cfg.max_len + 2, cfg.embed_dim, cfg.hidden_dim, &mut rng);
    let encoded: Vec<Vec<usize>> = corpus.iter().map(|s| vocab.encode(s)).collect();
    let mut order: Vec<usize> = (0..encoded.len()).collect();
    let mut epoch_loss = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for &i in &order {
            let (loss, grads) = net::loss_and_grad(&params, &encoded[i]);
            if !loss.is_finite() {
                return Err(EmbedderError::NonFiniteLoss {
                    epoch,
                    sequence: i,
                    loss,
                });
            }
            params.sgd_step(&grads, cfg.learning_rate, cfg.clip_norm);
            total += loss;
        }
        let mean = total / encoded.len() as f64;
        log::debug!("embedder epoch {epoch}: mean loss {mean:.6}");
        epoch_loss.push(mean);
    }
    if !params.all_finite() {
        return Err(EmbedderError::NonFiniteLoss {
            epoch: cfg.epochs,
            sequence: 0,
            loss: f64::NAN,
        });
    }
    Ok(EncoderDecoderModel {
        params,
        vocab,
        config: cfg.clone(),
        epoch_loss,
    })
}

impl EncoderDecoderModel {
    /// Mean of the encoder outputs over `[BOS] seq [EOS]`.
    pub fn embed<S: AsRef<str>>(&self, seq: &[S]) -> Result<Vec<f64>, EmbedderError> {
        check_len(seq.len(), self.config.max_len)?;
        let enc = net::encode(&self.params, &self.vocab.encode(seq));
        Ok(net::pool(&enc).into_raw_vec_and_offset().0)
    }

    /// Reconstruction loss of one sequence (mean per-position cross-entropy).
    pub fn score<S: AsRef<str>>(&self, seq: &[S]) -> Result<f64, EmbedderError> {
        check_len(seq.len(), self.config.max_len)?;
        Ok(net::loss(&self.params, &self.vocab.encode(seq)))
    }

    /// Per-position output distribution for `[BOS] seq [EOS]`.
    pub fn output_distribution<S: AsRef<str>>(&self, seq: &[S]) -> Result<Array2<f64>, EmbedderError> {
        check_len(seq.len(), self.config.max_len)?;
        let mut logits = net::reconstruct_logits(&self.params, &self.vocab.encode(seq));
        for mut row in logits.rows_mut() {
            let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
            row.mapv_inplace(|v| (v - m).exp());
            let z = row.sum();
            row /= z;
        }
        Ok(logits)
    }

    /// Greedy per-position decoding of the sequence body.
    pub fn reconstruct<S: AsRef<str>>(&self, seq: &[S]) -> Result<Vec<String>, EmbedderError> {
        check_len(seq.len(), self.config.max_len)?;
        let logits = net::reconstruct_logits(&self.params, &self.vocab.encode(seq));
        Ok(logits
            .rows()
            .into_iter()
            .skip(1)
            .take(seq.len())
            .map(|row| {
                let best = row
                    .iter()
                    .enumerate()
                    .fold((0, f64::NEG_INFINITY), |b, (i, &v)| if v > b.1 { (i, v) } else { b });
                self.vocab.token(best.0).unwrap_or(SPECIALS[UNK]).to_string()
            })
            .collect())
    }

    /// Fraction of body tokens reproduced exactly; tokens outside the
    /// vocabulary count as `<unk>`.
    pub fn reconstruction_accuracy<S: AsRef<str>>(&self, corpus: &[Vec<S>]) -> Result<f64, EmbedderError> {
        let mut hit = 0usize;
        let mut total = 0usize;
        for seq in corpus {
            let out = self.reconstruct(seq)?;
            for (o, t) in out.iter().zip(seq) {
                let expected = self.vocab.token(self.vocab.id(t.as_ref())).unwrap_or_default();
                hit += usize::from(o == expected);
                total += 1;
            }
        }
        Ok(if total == 0 { 1.0 } else { hit as f64 / total as f64 })
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<(), EmbedderError> {
        let c = &self.config;
        w.write_all(MODEL_MAGIC)?;
        w.write_all(&MODEL_VERSION.to_le_bytes())?;
        for v in [c.max_len, c.embed_dim, c.hidden_dim, c.epochs, c.vocab_size] {
            w.write_all(&(v as u64).to_le_bytes())?;
        }
        w.write_all(&c.learning_rate.to_le_bytes())?;
        w.write_all(&c.clip_norm.to_le_bytes())?;
        w.write_all(&c.seed.to_le_bytes())?;
        w.write_all(&(self.vocab.len() as u64).to_le_bytes())?;
        for t in self.vocab.tokens() {
            w.write_all(&(t.len() as u64).to_le_bytes())?;
            w.write_all(t.as_bytes())?;
        }
        for t in self.params.tensors() {
            w.write_all(&(t.nrows() as u64).to_le_bytes())?;
            w.write_all(&(t.ncols() as u64).to_le_bytes())?;
            for v in t.iter() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        w.write_all(&(self.epoch_loss.len() as u64).to_le_bytes())?;
        for v in &self.epoch_loss {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self, EmbedderError> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MODEL_MAGIC {
            return Err(EmbedderError::Format("bad magic".into()));
        }
        let mut u32b = [0u8; 4];
        r.read_exact(&mut u32b)?;
        let version = u32::from_le_bytes(u32b);
        if version != MODEL_VERSION {
            return Err(EmbedderError::Format(format!("unsupported version {version}")));
        }
        let mut dims = [0usize; 5];
        for d in &mut dims {
            *d = read_len(&mut r)?;
        }
        let learning_rate = f64::from_le_bytes(read8(&mut r)?);
        let clip_norm = f64::from_le_bytes(read8(&mut r)?);
        let seed = u64::from_le_bytes(read8(&mut r)?);
        let config = EmbedderConfig {
            max_len: dims[0],
            embed_dim: dims[1],
            hidden_dim: dims[2],
            epochs: dims[3],
            vocab_size: dims[4],
            learning_rate,
            clip_norm,
            seed,
        };
        let n_tokens = read_len(&mut r)?;
        let mut tokens = Vec::with_capacity(n_tokens.min(1 << 20));
        for _ in 0..n_tokens {
            let len = read_len(&mut r)?;
            let mut buf = vec![0u8; len];
            r.read_exact(&mut buf)?;
            tokens.push(String::from_utf8(buf).map_err(|e| EmbedderError::Format(e.to_string()))?);
        }
        if tokens.len() < SPECIALS.len() || tokens[..4] != SPECIALS {
            return Err(EmbedderError::Format("vocabulary lacks the special tokens".into()));
        }
        let (v, p, d, h) = (tokens.len(), config.max_len + 2, config.embed_dim, config.hidden_dim);
        let mut params = Params::init(v, p, d, h, &mut ChaCha8Rng::seed_from_u64(0));
        for (name, t) in TENSOR_NAMES.iter().zip(params.tensors_mut()) {
            let rows = read_len(&mut r)?;
            let cols = read_len(&mut r)?;
            if (rows, cols) != t.dim() {
                return Err(EmbedderError::Format(format!(
                    "tensor {name} is {rows}x{cols}, expected {}x{}",
                    t.nrows(),
                    t.ncols()
                )));
            }
            for x in t.iter_mut() {
                *x = f64::from_le_bytes(read8(&mut r)?);
            }
        }
        if !params.all_finite() {
            return Err(EmbedderError::Format("non-finite parameter".into()));
        }
        let n_loss = read_len(&mut r)?;
        let mut epoch_loss = Vec::with_capacity(n_loss.min(1 << 20));
        for _ in 0..n_loss {
            epoch_loss.push(f64::from_le_bytes(read8(&mut r)?));
        }
        Ok(EncoderDecoderModel {
            params,
            vocab: Vocab::from_tokens(tokens),
            config,
            epoch_loss,
        })
    }
}

const MODEL_MAGIC: &[u8; 4] = b"MMED";
const MODEL_VERSION: u32 = 1;

fn read8<R: Read>(r: &mut R) -> std::io::Result<[u8; 8]> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(b)
}

fn read_len<R: Read>(r: &mut R) -> Result<usize, EmbedderError> {
    let v = u64::from_le_bytes(read8(r)?);
    usize::try_from(v)
        .ok()
        .filter(|&n| n <= 1 << 32)
        .ok_or_else(|| EmbedderError::Format(format!("implausible length {v}")))
}

/// Parameters that can influence the loss of `ids`: every dense weight, the
/// embedding rows of tokens present and the positional rows in range.
fn reachable(params: &Params, ids: &[usize]) -> Vec<(usize, usize, usize)> {
    let present: BTreeSet<usize> = ids.iter().copied().collect();
    let mut slots = Vec::new();
    for (ti, t) in params.tensors().iter().enumerate() {
        for r in 0..t.nrows() {
            let live = match TENSOR_NAMES[ti] {
                "tok" => present.contains(&r),
                "pos" | "dec_pos" => r < ids.len(),
                _ => true,
            };
            if live {
                slots.extend((0..t.ncols()).map(|c| (ti, r, c)));
            }
        }
    }
    slots
}

/// Largest relative error between the analytic gradient and central finite
/// differences over a seeded sample of reachable parameters. Entries where
/// both gradients are below `1e-8` in magnitude are skipped.
pub fn grad_check<S: AsRef<str>>(model: &EncoderDecoderModel, sample: &[S], epsilon: f64) -> f64 {
    const SAMPLES: usize = 200;
    let ids = model.vocab.encode(sample);
    let (_, grads) = net::loss_and_grad(&model.params, &ids);
    let mut slots = reachable(&model.params, &ids);
    let mut rng = ChaCha8Rng::seed_from_u64(model.config.seed ^ 0x6772_6164);
    slots.shuffle(&mut rng);
    slots.truncate(SAMPLES);
    let mut probe = model.params.clone();
    let mut worst = 0.0f64;
    for (ti, r, c) in slots {
        let orig = probe.tensors()[ti][[r, c]];
        probe.tensors_mut()[ti][[r, c]] = orig + epsilon;
        let up = net::loss(&probe, &ids);
        probe.tensors_mut()[ti][[r, c]] = orig - epsilon;
        let down = net::loss(&probe, &ids);
        probe.tensors_mut()[ti][[r, c]] = orig;
        let numeric = (up - down) / (2.0 * epsilon);
        let analytic = grads.tensors()[ti][[r, c]];
        let scale = analytic.abs().max(numeric.abs());
        if scale < 1e-8 {
            continue;
        }
        worst = worst.max((analytic - numeric).abs() / scale);
    }
    worst
}
