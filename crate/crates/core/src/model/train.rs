use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{inverse_sqrt_lr, AdamW, ArModel, Architecture, Batch, LossSum};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::eval::Accuracies;
use crate::seed::derive_seed;
use crate::token::Token;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub lr: f64,
    pub warmup: usize,
    pub weight_decay: f64,
    pub epochs: usize,
    pub cutoff: usize,
    /// The hook runs at epoch 0, every `eval_every` epochs and after the last.
    pub eval_every: usize,
    /// Drop PAD targets from the training loss; `None` does so for the
    /// linear model only.
    pub ignore_pad: Option<bool>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 128,
            lr: 2e-3,
            warmup: 100,
            weight_decay: 0.01,
            epochs: 50_000,
            cutoff: 300,
            eval_every: 100,
            ignore_pad: None,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn ignores_pad(&self, arch: Architecture) -> bool {
        self.ignore_pad.unwrap_or(arch == Architecture::Linear)
    }
}

/// Category order: R1 and R2, R1 only, R2 only, neither.
pub type CategoryMasses = [f64; 4];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub test_loss: Option<f64>,
    pub accuracies: Option<Accuracies>,
    pub masses: Option<CategoryMasses>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainTrace {
    pub records: Vec<TraceRecord>,
    pub epochs_run: usize,
    pub stopped_early: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Control {
    Continue,
    Stop,
}

/// Evaluation-mode loss over `seqs`, batched in order.
pub fn mean_loss(model: &ArModel, seqs: &[Vec<Token>], batch_size: usize, ignore_pad: bool) -> Result<LossSum> {
    let mut total = LossSum::default();
    for chunk in seqs.chunks(batch_size.max(1)) {
        let s = model.batch_loss(&Batch::from_seqs(chunk)?, ignore_pad, None, None)?;
        total.nll += s.nll;
        total.count += s.count;
    }
    Ok(total)
}

/// Everything needed to continue a run bit-exactly after `epoch`.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub epoch: usize,
    pub params: Vec<f64>,
    pub adam_m: Vec<f64>,
    pub adam_v: Vec<f64>,
    pub adam_steps: u64,
    pub shuffle_pos: u128,
    pub dropout_pos: u128,
    /// Corpus order after the last shuffle; each epoch reshuffles it in place.
    pub order: Vec<usize>,
}

pub const TRAIN_STATE_MAGIC: &str = "rulex-train-state";

#[derive(Serialize, Deserialize)]
struct StateHeader {
    epoch: usize,
    params: usize,
    adam_steps: u64,
    shuffle_pos: String,
    dropout_pos: String,
    order: Vec<usize>,
}

/// Layout: a magic line, a JSON header line, then parameters and both
/// moment vectors as little-endian `f64`.
pub fn save_train_state(state: &TrainState, path: impl AsRef<Path>) -> Result<()> {
    let header = StateHeader {
        epoch: state.epoch,
        params: state.params.len(),
        adam_steps: state.adam_steps,
        shuffle_pos: state.shuffle_pos.to_string(),
        dropout_pos: state.dropout_pos.to_string(),
        order: state.order.clone(),
    };
    let mut out = format!(
        "{TRAIN_STATE_MAGIC}\n{}\n",
        serde_json::to_string(&header).expect("header serializes")
    )
    .into_bytes();
    for v in state.params.iter().chain(&state.adam_m).chain(&state.adam_v) {
        out.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn load_train_state(path: impl AsRef<Path>) -> Result<TrainState> {
    let path = path.as_ref();
    let bytes = fs::read(path)?;
    let mut parts = bytes.splitn(3, |&b| b == b'\n');
    if parts.next() != Some(TRAIN_STATE_MAGIC.as_bytes()) {
        return Err(Error::format(path, 1, "not a training state file"));
    }
    let bad = |m: String| Error::format(path, 2, m);
    let h: StateHeader = serde_json::from_slice(parts.next().unwrap_or_default())
        .map_err(|e| bad(format!("bad header: {e}")))?;
    let body = parts.next().unwrap_or_default();
    if body.len() != 3 * 8 * h.params {
        return Err(Error::format(path, 3, format!("expected {} bytes, found {}", 24 * h.params, body.len())));
    }
    let mut vals = body.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")));
    let mut take = || (&mut vals).take(h.params).collect::<Vec<f64>>();
    let (params, adam_m, adam_v) = (take(), take(), take());
    Ok(TrainState {
        epoch: h.epoch,
        params,
        adam_m,
        adam_v,
        adam_steps: h.adam_steps,
        shuffle_pos: h.shuffle_pos.parse().map_err(|_| bad("bad shuffle position".into()))?,
        dropout_pos: h.dropout_pos.parse().map_err(|_| bad("bad dropout position".into()))?,
        order: h.order,
    })
}

/// Minibatch AdamW training. One epoch is one pass over the shuffled corpus.
///
/// The hook sees the model at each evaluation point and may fill in the
/// optional fields of the record or stop training. On a non-finite loss the
/// parameters are rolled back to the end of the last completed epoch.
pub fn train<F>(model: &mut ArModel, data: &Dataset, cfg: &TrainConfig, hook: F) -> Result<TrainTrace>
where
    F: FnMut(&ArModel, &mut TraceRecord) -> Result<Control>,
{
    train_from(model, data, cfg, None, hook).map(|(trace, _)| trace)
}

/// [`train`], optionally continuing from a saved state. A resumed run skips
/// the epoch-0 evaluation and its trace holds only the new records, which
/// equal the tail of an uninterrupted run with the same config.
pub fn train_from<F>(
    model: &mut ArModel,
    data: &Dataset,
    cfg: &TrainConfig,
    resume: Option<&TrainState>,
    mut hook: F,
) -> Result<(TrainTrace, TrainState)>
where
    F: FnMut(&ArModel, &mut TraceRecord) -> Result<Control>,
{
    if data.is_empty() {
        return Err(Error::Contract("cannot train on an empty dataset".into()));
    }
    if cfg.batch_size == 0 || cfg.eval_every == 0 {
        return Err(Error::Config("batch_size and eval_every must be positive".into()));
    }
    let seqs = data.sequences();
    if let Some(s) = seqs.iter().find(|s| s.len() > model.max_len()) {
        return Err(Error::Contract(format!(
            "training sequence of length {} exceeds the model limit {}",
            s.len(),
            model.max_len()
        )));
    }
    let ignore_pad = cfg.ignores_pad(model.architecture());
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "train.shuffle"));
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "train.dropout"));
    let mut opt = AdamW::new(model.num_params(), cfg.weight_decay);
    let mut grad = vec![0.0; model.num_params()];
    let mut trace = TrainTrace::default();
    let mut order: Vec<usize> = (0..seqs.len()).collect();
    let mut epoch = 0;
    let mut stop = false;

    match resume {
        Some(st) => {
            if st.params.len() != model.num_params() || st.order.len() != seqs.len() {
                return Err(Error::Shape(format!(
                    "training state for {} parameters and {} sequences does not fit a model with {} and a corpus of {}",
                    st.params.len(),
                    st.order.len(),
                    model.num_params(),
                    seqs.len()
                )));
            }
            model.params.copy_from_slice(&st.params);
            opt.restore(st.adam_m.clone(), st.adam_v.clone(), st.adam_steps)?;
            shuffle_rng.set_word_pos(st.shuffle_pos);
            dropout_rng.set_word_pos(st.dropout_pos);
            order.clone_from(&st.order);
            epoch = st.epoch;
        }
        None => {
            let initial = mean_loss(model, &seqs, cfg.batch_size, ignore_pad)?;
            let mut record = TraceRecord {
                epoch: 0,
                train_loss: initial.mean(),
                test_loss: None,
                accuracies: None,
                masses: None,
            };
            stop = hook(model, &mut record)? == Control::Stop;
            trace.records.push(record);
        }
    }

    let mut last_good = model.params.clone();
    while !stop && epoch < cfg.epochs {
        epoch += 1;
        order.shuffle(&mut shuffle_rng);
        let mut total = LossSum::default();
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<_> = chunk.iter().map(|&i| seqs[i].clone()).collect();
            let batch = Batch::from_seqs(&batch)?;
            grad.iter_mut().for_each(|g| *g = 0.0);
            let s = model.batch_loss(&batch, ignore_pad, Some(&mut dropout_rng), Some(&mut grad))?;
            let mean = s.mean();
            if !mean.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                model.params.copy_from_slice(&last_good);
                return Err(Error::Diverged {
                    epoch,
                    loss: mean,
                    last_good: epoch - 1,
                });
            }
            let lr = inverse_sqrt_lr(cfg.lr, opt.steps_taken() as usize + 1, cfg.warmup);
            opt.step(&mut model.params, &grad, lr);
            total.nll += s.nll;
            total.count += s.count;
        }
        last_good.copy_from_slice(&model.params);
        if epoch % cfg.eval_every == 0 || epoch == cfg.epochs {
            let mut record = TraceRecord {
                epoch,
                train_loss: total.mean(),
                test_loss: None,
                accuracies: None,
                masses: None,
            };
            stop = hook(model, &mut record)? == Control::Stop;
            trace.records.push(record);
        }
    }
    trace.epochs_run = epoch;
    trace.stopped_early = epoch < cfg.epochs;
    let (m, v) = opt.moments();
    let state = TrainState {
        epoch,
        params: model.params.clone(),
        adam_m: m.to_vec(),
        adam_v: v.to_vec(),
        adam_steps: opt.steps_taken(),
        shuffle_pos: shuffle_rng.get_word_pos(),
        dropout_pos: dropout_rng.get_word_pos(),
        order,
    };
    Ok((trace, state))
}
