//! Autoregressive next-token models with hand-derived gradients.
//!
//! Three architectures share one flat `f64` parameter vector, a padded batch
//! representation and a stateful [`Session`] for incremental decoding.

mod checkpoint;
mod linear;
mod lstm;
pub mod ops;
mod optim;
mod train;
mod transformer;

use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::token::Token;

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use optim::{inverse_sqrt_lr, AdamW};
pub use train::{
    load_train_state, mean_loss, save_train_state, train, train_from, CategoryMasses, Control, TraceRecord,
    TrainConfig, TrainState, TrainTrace, TRAIN_STATE_MAGIC,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Architecture {
    Linear,
    Lstm,
    Transformer,
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Architecture::Linear => "linear",
            Architecture::Lstm => "lstm",
            Architecture::Transformer => "transformer",
        })
    }
}

impl FromStr for Architecture {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "linear" => Ok(Architecture::Linear),
            "lstm" => Ok(Architecture::Lstm),
            "transformer" => Ok(Architecture::Transformer),
            _ => Err(Error::Config(format!(
                "unknown architecture {s:?} (expected linear, lstm or transformer)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearConfig {
    /// Number of most recent tokens seen through one-hot features.
    pub window: usize,
    pub bias: bool,
}

impl Default for LinearConfig {
    fn default() -> Self {
        LinearConfig {
            window: 256,
            bias: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LstmConfig {
    pub embedding: usize,
    pub hidden: usize,
    pub layers: usize,
    /// Applied to the outputs of every layer except the last.
    pub dropout: f64,
}

impl Default for LstmConfig {
    fn default() -> Self {
        LstmConfig {
            embedding: 16,
            hidden: 64,
            layers: 5,
            dropout: 0.4,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransformerConfig {
    pub layers: usize,
    pub dim: usize,
    pub heads: usize,
    pub feedforward: usize,
    pub dropout: f64,
    pub ln_eps: f64,
    /// Learned absolute positions available; prefixes may not be longer.
    pub max_positions: usize,
}

impl Default for TransformerConfig {
    fn default() -> Self {
        TransformerConfig {
            layers: 7,
            dim: 10,
            heads: 5,
            feedforward: 1024,
            dropout: 0.1,
            ln_eps: 6e-3,
            max_positions: 302,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "architecture", rename_all = "lowercase")]
pub enum ModelConfig {
    Linear(LinearConfig),
    Lstm(LstmConfig),
    Transformer(TransformerConfig),
}

impl ModelConfig {
    pub fn default_for(arch: Architecture) -> Self {
        match arch {
            Architecture::Linear => ModelConfig::Linear(LinearConfig::default()),
            Architecture::Lstm => ModelConfig::Lstm(LstmConfig::default()),
            Architecture::Transformer => ModelConfig::Transformer(TransformerConfig::default()),
        }
    }

    pub fn architecture(&self) -> Architecture {
        match self {
            ModelConfig::Linear(_) => Architecture::Linear,
            ModelConfig::Lstm(_) => Architecture::Lstm,
            ModelConfig::Transformer(_) => Architecture::Transformer,
        }
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        match self {
            ModelConfig::Linear(c) if c.window == 0 => bad("linear window must be positive".into()),
            ModelConfig::Lstm(c) if c.embedding == 0 || c.hidden == 0 || c.layers == 0 => {
                bad("lstm dimensions must be positive".into())
            }
            ModelConfig::Lstm(c) if !(0.0..1.0).contains(&c.dropout) => {
                bad(format!("dropout {} outside [0, 1)", c.dropout))
            }
            ModelConfig::Transformer(c) => {
                if c.dim == 0 || c.heads == 0 || c.layers == 0 || c.feedforward == 0 {
                    bad("transformer dimensions must be positive".into())
                } else if c.dim % c.heads != 0 {
                    bad(format!("{} heads do not divide model dim {}", c.heads, c.dim))
                } else if !(0.0..1.0).contains(&c.dropout) {
                    bad(format!("dropout {} outside [0, 1)", c.dropout))
                } else if c.max_positions < 2 || c.ln_eps <= 0.0 {
                    bad("max_positions must be at least 2 and ln_eps positive".into())
                } else {
                    Ok(())
                }
            }
            _ => Ok(()),
        }
    }
}

/// Name and shape of one parameter tensor inside the flat vector.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl ParamSpec {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> Range<usize> {
        self.offset..self.offset + self.len()
    }
}

#[derive(Default)]
pub(crate) struct LayoutBuilder {
    specs: Vec<ParamSpec>,
    len: usize,
}

impl LayoutBuilder {
    pub(crate) fn add(&mut self, name: impl Into<String>, shape: &[usize]) -> Range<usize> {
        let spec = ParamSpec {
            name: name.into(),
            shape: shape.to_vec(),
            offset: self.len,
        };
        self.len += spec.len();
        let range = spec.range();
        self.specs.push(spec);
        range
    }
}

pub(crate) fn truncated_normal<R: Rng + ?Sized>(out: &mut [f64], std: f64, rng: &mut R) {
    for v in out {
        *v = loop {
            let z: f64 = StandardNormal.sample(rng);
            if z.abs() <= 2.0 {
                break z * std;
            }
        };
    }
}

pub(crate) fn uniform<R: Rng + ?Sized>(out: &mut [f64], bound: f64, rng: &mut R) {
    for v in out {
        *v = rng.gen_range(-bound..bound);
    }
}

/// Right-padded token matrix. Row `b` predicts `tokens[b][t + 1]` from
/// `tokens[b][..=t]` for `t < steps()`.
#[derive(Clone, Debug)]
pub struct Batch {
    tokens: Vec<Token>,
    rows: usize,
    width: usize,
}

impl Batch {
    pub fn from_seqs(seqs: &[Vec<Token>]) -> Result<Self> {
        let width = seqs.iter().map(Vec::len).max().unwrap_or(0);
        if seqs.is_empty() || width < 2 {
            return Err(Error::Contract(
                "a batch needs at least one sequence of length >= 2".into(),
            ));
        }
        let mut tokens = Vec::with_capacity(seqs.len() * width);
        for s in seqs {
            tokens.extend_from_slice(s);
            tokens.resize(tokens.len() + width - s.len(), Token::PAD);
        }
        Ok(Batch {
            tokens,
            rows: seqs.len(),
            width,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn steps(&self) -> usize {
        self.width - 1
    }

    pub fn input(&self, b: usize, t: usize) -> Token {
        self.tokens[b * self.width + t]
    }

    pub fn target(&self, b: usize, t: usize) -> Token {
        self.tokens[b * self.width + t + 1]
    }
}

#[derive(Clone, Debug)]
enum Net {
    Linear(linear::Linear),
    Lstm(lstm::Lstm),
    Transformer(transformer::Transformer),
}

enum Tape {
    Linear,
    Lstm(lstm::Tape),
    Transformer(transformer::Tape),
}

/// Summed negative log-likelihood and number of scored targets.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossSum {
    pub nll: f64,
    pub count: usize,
}

impl LossSum {
    pub fn mean(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            self.nll / self.count as f64
        }
    }
}

#[derive(Clone, Debug)]
pub struct ArModel {
    config: ModelConfig,
    vocab: usize,
    specs: Vec<ParamSpec>,
    net: Net,
    pub params: Vec<f64>,
}

impl ArModel {
    /// Build a model with zeroed parameters.
    fn build(config: ModelConfig, vocab: usize) -> Result<Self> {
        config.validate()?;
        if vocab < 4 {
            return Err(Error::Config(format!("vocab size {vocab} is too small")));
        }
        let mut lb = LayoutBuilder::default();
        let net = match &config {
            ModelConfig::Linear(c) => Net::Linear(linear::Linear::new(c, vocab, &mut lb)),
            ModelConfig::Lstm(c) => Net::Lstm(lstm::Lstm::new(c, vocab, &mut lb)),
            ModelConfig::Transformer(c) => {
                Net::Transformer(transformer::Transformer::new(c, vocab, &mut lb))
            }
        };
        Ok(ArModel {
            config,
            vocab,
            params: vec![0.0; lb.len],
            specs: lb.specs,
            net,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn architecture(&self) -> Architecture {
        self.config.architecture()
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab
    }

    pub fn param_specs(&self) -> &[ParamSpec] {
        &self.specs
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    /// Longest prefix the model accepts.
    pub fn max_len(&self) -> usize {
        match &self.config {
            ModelConfig::Transformer(c) => c.max_positions,
            _ => usize::MAX,
        }
    }

    fn check_tokens(&self, seq: &[Token]) -> Result<()> {
        if let Some(t) = seq.iter().find(|t| t.id() >= self.vocab) {
            return Err(Error::Shape(format!(
                "token id {} outside model vocabulary of size {}",
                t.id(),
                self.vocab
            )));
        }
        if seq.len() > self.max_len() {
            return Err(Error::Contract(format!(
                "sequence of length {} exceeds the model limit {}",
                seq.len(),
                self.max_len()
            )));
        }
        Ok(())
    }

    fn forward(&self, batch: &Batch, rng: Option<&mut ChaCha8Rng>) -> Result<(Vec<f64>, Tape)> {
        for b in 0..batch.rows {
            self.check_tokens(&batch.tokens[b * batch.width..(b + 1) * batch.width - 1])?;
            self.check_tokens(&[batch.target(b, batch.steps() - 1)])?;
        }
        let p = &self.params;
        Ok(match &self.net {
            Net::Linear(n) => (n.forward(p, batch), Tape::Linear),
            Net::Lstm(n) => {
                let (l, t) = n.forward(p, batch, rng);
                (l, Tape::Lstm(t))
            }
            Net::Transformer(n) => {
                let (l, t) = n.forward(p, batch, rng);
                (l, Tape::Transformer(t))
            }
        })
    }

    fn backward(&self, batch: &Batch, tape: &Tape, dlogits: &[f64], grad: &mut [f64]) {
        let p = &self.params;
        match (&self.net, tape) {
            (Net::Linear(n), Tape::Linear) => n.backward(batch, dlogits, grad),
            (Net::Lstm(n), Tape::Lstm(t)) => n.backward(p, batch, t, dlogits, grad),
            (Net::Transformer(n), Tape::Transformer(t)) => n.backward(p, batch, t, dlogits, grad),
            _ => unreachable!("tape produced by a different architecture"),
        }
    }

    /// Cross-entropy of next-token predictions over a batch. With a dropout
    /// source the model runs in training mode. When `grad` is given, the
    /// gradient of the mean loss is accumulated into it.
    pub fn batch_loss(
        &self,
        batch: &Batch,
        ignore_pad: bool,
        rng: Option<&mut ChaCha8Rng>,
        grad: Option<&mut [f64]>,
    ) -> Result<LossSum> {
        let (logits, tape) = self.forward(batch, rng)?;
        let v = self.vocab;
        let mut sum = LossSum::default();
        let mut dlogits = grad.as_ref().map(|_| vec![0.0; logits.len()]);
        for b in 0..batch.rows {
            for t in 0..batch.steps() {
                let target = batch.target(b, t);
                if ignore_pad && target == Token::PAD {
                    continue;
                }
                let r = b * batch.steps() + t;
                let lp = ops::log_softmax(&logits[r * v..(r + 1) * v]);
                sum.nll -= lp[target.id()];
                sum.count += 1;
                if let Some(d) = dlogits.as_mut() {
                    for (k, l) in lp.iter().enumerate() {
                        d[r * v + k] = l.exp();
                    }
                    d[r * v + target.id()] -= 1.0;
                }
            }
        }
        if let (Some(grad), Some(mut d)) = (grad, dlogits) {
            if sum.count > 0 {
                let scale = 1.0 / sum.count as f64;
                d.iter_mut().for_each(|x| *x *= scale);
                self.backward(batch, &tape, &d, grad);
            }
        }
        Ok(sum)
    }

    /// Evaluation-mode logits for every position of a batch, row-major
    /// `[rows * steps, vocab]`.
    pub fn batch_logits(&self, batch: &Batch) -> Result<Vec<f64>> {
        Ok(self.forward(batch, None)?.0)
    }

    pub fn session(&self) -> Session<'_> {
        let state = match &self.net {
            Net::Linear(_) => SessionState::Linear(Vec::new()),
            Net::Lstm(n) => SessionState::Lstm(n.start_state()),
            Net::Transformer(n) => SessionState::Transformer(n.start_state()),
        };
        Session {
            model: self,
            state,
            len: 0,
        }
    }

    /// Logits for the token following `prefix` (which starts with SOS).
    pub fn next_token_logits(&self, prefix: &[Token]) -> Result<Vec<f64>> {
        if prefix.first() != Some(&Token::SOS) {
            return Err(Error::Contract("prefix must start with SOS".into()));
        }
        self.check_tokens(prefix)?;
        let mut s = self.session();
        let mut logits = Vec::new();
        for &t in prefix {
            logits = s.push(t)?;
        }
        Ok(logits)
    }

    /// Log-probability of `seq` from the token after SOS through the first EOS.
    pub fn sequence_log_prob(&self, seq: &[Token]) -> Result<f64> {
        let end = checked_scored_len(seq)?;
        self.check_tokens(&seq[..end])?;
        let mut s = self.session();
        let mut total = 0.0;
        for k in 0..end - 1 {
            let logits = s.push(seq[k])?;
            total += ops::log_softmax(&logits)[seq[k + 1].id()];
        }
        Ok(total)
    }

    /// Batched [`ArModel::sequence_log_prob`].
    pub fn sequence_log_probs(&self, seqs: &[Vec<Token>]) -> Result<Vec<f64>> {
        let ends: Vec<usize> = seqs.iter().map(|s| checked_scored_len(s)).collect::<Result<_>>()?;
        let trimmed: Vec<Vec<Token>> = seqs.iter().zip(&ends).map(|(s, &e)| s[..e].to_vec()).collect();
        let batch = Batch::from_seqs(&trimmed)?;
        let logits = self.batch_logits(&batch)?;
        let v = self.vocab;
        Ok(trimmed
            .iter()
            .enumerate()
            .map(|(b, s)| {
                (0..s.len() - 1)
                    .map(|t| {
                        let r = b * batch.steps() + t;
                        ops::log_softmax(&logits[r * v..(r + 1) * v])[s[t + 1].id()]
                    })
                    .sum()
            })
            .collect())
    }
}

/// Length of `seq` up to and including its first EOS.
fn checked_scored_len(seq: &[Token]) -> Result<usize> {
    if seq.first() != Some(&Token::SOS) {
        return Err(Error::Contract("scored sequences start with SOS".into()));
    }
    seq.iter()
        .position(|&t| t == Token::EOS)
        .map(|i| i + 1)
        .ok_or_else(|| Error::Contract("scored sequences end with EOS".into()))
}

pub fn init_model(config: ModelConfig, vocab: usize, seed: u64) -> Result<ArModel> {
    let mut model = ArModel::build(config, vocab)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p = &mut model.params;
    match &model.net {
        Net::Linear(n) => n.init(p, &mut rng),
        Net::Lstm(n) => n.init(p, &mut rng),
        Net::Transformer(n) => n.init(p, &mut rng),
    }
    Ok(model)
}

enum SessionState {
    Linear(Vec<Token>),
    Lstm(lstm::State),
    Transformer(transformer::Cache),
}

/// Incremental evaluation-mode decoder state.
pub struct Session<'m> {
    model: &'m ArModel,
    state: SessionState,
    len: usize,
}

impl Session<'_> {
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Consume one token and return the logits for the next one.
    pub fn push(&mut self, t: Token) -> Result<Vec<f64>> {
        if t.id() >= self.model.vocab {
            return Err(Error::Shape(format!("token id {} outside vocabulary", t.id())));
        }
        if self.len >= self.model.max_len() {
            return Err(Error::Contract(format!(
                "context exceeds the model limit {}",
                self.model.max_len()
            )));
        }
        let p = &self.model.params;
        let logits = match (&self.model.net, &mut self.state) {
            (Net::Linear(n), SessionState::Linear(hist)) => {
                hist.push(t);
                n.step(p, hist)
            }
            (Net::Lstm(n), SessionState::Lstm(s)) => n.step(p, s, t),
            (Net::Transformer(n), SessionState::Transformer(c)) => n.step(p, c, t, self.len),
            _ => unreachable!("session built for a different architecture"),
        };
        self.len += 1;
        Ok(logits)
    }
}

#[cfg(test)]
mod tests;
