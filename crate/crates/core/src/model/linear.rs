use std::ops::Range;

use rand::Rng;

use super::{truncated_normal, Batch, LayoutBuilder, LinearConfig};
use crate::token::Token;

/// Affine map of the one-hot encodings of the last `window` tokens, with
/// positions before the start of the sequence read as PAD.
#[derive(Clone, Debug)]
pub struct Linear {
    window: usize,
    vocab: usize,
    /// `[window, vocab_in, vocab_out]`; slot `j` looks `j` tokens back.
    w: Range<usize>,
    b: Option<Range<usize>>,
}

impl Linear {
    pub fn new(cfg: &LinearConfig, vocab: usize, lb: &mut LayoutBuilder) -> Self {
        Linear {
            window: cfg.window,
            vocab,
            w: lb.add("weight", &[cfg.window, vocab, vocab]),
            b: cfg.bias.then(|| lb.add("bias", &[vocab])),
        }
    }

    pub fn init<R: Rng + ?Sized>(&self, p: &mut [f64], rng: &mut R) {
        truncated_normal(&mut p[self.w.clone()], 0.02, rng);
    }

    fn row_offset(&self, slot: usize, t: Token) -> usize {
        self.w.start + (slot * self.vocab + t.id()) * self.vocab
    }

    fn logits_at(&self, p: &[f64], token_back: impl Fn(usize) -> Token) -> Vec<f64> {
        let v = self.vocab;
        let mut out = match &self.b {
            Some(b) => p[b.clone()].to_vec(),
            None => vec![0.0; v],
        };
        for j in 0..self.window {
            let o = self.row_offset(j, token_back(j));
            for (x, w) in out.iter_mut().zip(&p[o..o + v]) {
                *x += w;
            }
        }
        out
    }

    pub fn forward(&self, p: &[f64], batch: &Batch) -> Vec<f64> {
        let mut out = Vec::with_capacity(batch.rows() * batch.steps() * self.vocab);
        for b in 0..batch.rows() {
            for t in 0..batch.steps() {
                out.extend(self.logits_at(p, |j| {
                    if j <= t {
                        batch.input(b, t - j)
                    } else {
                        Token::PAD
                    }
                }));
            }
        }
        out
    }

    pub fn backward(&self, batch: &Batch, dlogits: &[f64], grad: &mut [f64]) {
        let v = self.vocab;
        for b in 0..batch.rows() {
            for t in 0..batch.steps() {
                let r = b * batch.steps() + t;
                let d = &dlogits[r * v..(r + 1) * v];
                if let Some(bias) = &self.b {
                    for (g, x) in grad[bias.clone()].iter_mut().zip(d) {
                        *g += x;
                    }
                }
                for j in 0..self.window {
                    let tok = if j <= t { batch.input(b, t - j) } else { Token::PAD };
                    let o = self.row_offset(j, tok);
                    for (g, x) in grad[o..o + v].iter_mut().zip(d) {
                        *g += x;
                    }
                }
            }
        }
    }

    pub fn step(&self, p: &[f64], history: &[Token]) -> Vec<f64> {
        let n = history.len();
        self.logits_at(p, |j| if j < n { history[n - 1 - j] } else { Token::PAD })
    }
}
