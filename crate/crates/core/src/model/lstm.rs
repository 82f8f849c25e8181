use std::ops::Range;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::ops::{affine, affine_backward, dropout_mask, gemm, sigmoid};
use super::{truncated_normal, uniform, Batch, LayoutBuilder, LstmConfig};
use crate::token::Token;

#[derive(Clone, Debug)]
struct Layer {
    din: usize,
    /// `[din, 4h]`, gate blocks in order input, forget, cell, output.
    wih: Range<usize>,
    whh: Range<usize>,
    bias: Range<usize>,
}

/// Stacked LSTM over token embeddings followed by a linear read-out.
#[derive(Clone, Debug)]
pub struct Lstm {
    vocab: usize,
    emb_dim: usize,
    hidden: usize,
    dropout: f64,
    emb: Range<usize>,
    layers: Vec<Layer>,
    wout: Range<usize>,
    bout: Range<usize>,
}

/// Activations kept for the backward pass; rows are time-major (`t * B + b`).
pub struct Tape {
    inputs: Vec<Vec<f64>>,
    gates: Vec<Vec<f64>>,
    cells: Vec<Vec<f64>>,
    hiddens: Vec<Vec<f64>>,
    masks: Vec<Option<Vec<f64>>>,
    top: Vec<f64>,
}

pub struct State {
    h: Vec<Vec<f64>>,
    c: Vec<Vec<f64>>,
}

impl Lstm {
    pub fn new(cfg: &LstmConfig, vocab: usize, lb: &mut LayoutBuilder) -> Self {
        let h = cfg.hidden;
        let emb = lb.add("embedding", &[vocab, cfg.embedding]);
        let layers = (0..cfg.layers)
            .map(|l| {
                let din = if l == 0 { cfg.embedding } else { h };
                Layer {
                    din,
                    wih: lb.add(format!("layer{l}.w_ih"), &[din, 4 * h]),
                    whh: lb.add(format!("layer{l}.w_hh"), &[h, 4 * h]),
                    bias: lb.add(format!("layer{l}.bias"), &[4 * h]),
                }
            })
            .collect();
        Lstm {
            vocab,
            emb_dim: cfg.embedding,
            hidden: h,
            dropout: cfg.dropout,
            emb,
            layers,
            wout: lb.add("out.weight", &[h, vocab]),
            bout: lb.add("out.bias", &[vocab]),
        }
    }

    pub fn init<R: Rng + ?Sized>(&self, p: &mut [f64], rng: &mut R) {
        let h = self.hidden;
        truncated_normal(&mut p[self.emb.clone()], 0.02, rng);
        let bound = 1.0 / (h as f64).sqrt();
        for l in &self.layers {
            uniform(&mut p[l.wih.clone()], bound, rng);
            uniform(&mut p[l.whh.clone()], bound, rng);
            let b = &mut p[l.bias.clone()];
            b.fill(0.0);
            b[h..2 * h].fill(1.0);
        }
        truncated_normal(&mut p[self.wout.clone()], 0.02, rng);
    }

    /// One cell update for `rows` rows; `g` holds pre-activations on entry and
    /// activated gates on exit.
    fn cell(&self, g: &mut [f64], c_prev: &[f64], c: &mut [f64], h_out: &mut [f64], rows: usize) {
        let h = self.hidden;
        for r in 0..rows {
            let gr = &mut g[r * 4 * h..(r + 1) * 4 * h];
            for j in 0..h {
                let i = sigmoid(gr[j]);
                let f = sigmoid(gr[h + j]);
                let cc = gr[2 * h + j].tanh();
                let o = sigmoid(gr[3 * h + j]);
                gr[j] = i;
                gr[h + j] = f;
                gr[2 * h + j] = cc;
                gr[3 * h + j] = o;
                let cv = f * c_prev[r * h + j] + i * cc;
                c[r * h + j] = cv;
                h_out[r * h + j] = o * cv.tanh();
            }
        }
    }

    pub fn forward(&self, p: &[f64], batch: &Batch, mut rng: Option<&mut ChaCha8Rng>) -> (Vec<f64>, Tape) {
        let (bn, tn, h, e) = (batch.rows(), batch.steps(), self.hidden, self.emb_dim);
        let n = bn * tn;
        let mut x = Vec::with_capacity(n * e);
        for t in 0..tn {
            for b in 0..bn {
                let o = self.emb.start + batch.input(b, t).id() * e;
                x.extend_from_slice(&p[o..o + e]);
            }
        }
        let mut tape = Tape {
            inputs: Vec::new(),
            gates: Vec::new(),
            cells: Vec::new(),
            hiddens: Vec::new(),
            masks: Vec::new(),
            top: Vec::new(),
        };
        let zeros = vec![0.0; bn * h];
        for (li, l) in self.layers.iter().enumerate() {
            let mut g = affine(&x, n, l.din, &p[l.wih.clone()], &p[l.bias.clone()], 4 * h);
            let mut cells = vec![0.0; n * h];
            let mut hs = vec![0.0; n * h];
            for t in 0..tn {
                let (gs, ge) = (t * bn * 4 * h, (t + 1) * bn * 4 * h);
                if t > 0 {
                    let (hprev, _) = hs.split_at(t * bn * h);
                    gemm(bn, h, 4 * h, &hprev[(t - 1) * bn * h..], false, &p[l.whh.clone()], false, &mut g[gs..ge], 1.0);
                }
                let (cprev_all, ccur) = cells.split_at_mut(t * bn * h);
                let cprev = if t > 0 { &cprev_all[(t - 1) * bn * h..] } else { &zeros[..] };
                self.cell(&mut g[gs..ge], cprev, &mut ccur[..bn * h], &mut hs[t * bn * h..(t + 1) * bn * h], bn);
            }
            let last = li + 1 == self.layers.len();
            let mask = match rng.as_deref_mut() {
                Some(r) if !last && self.dropout > 0.0 => Some(dropout_mask(n * h, self.dropout, r)),
                _ => None,
            };
            let mut next = hs.clone();
            if let Some(m) = &mask {
                super::ops::mul_in_place(&mut next, m);
            }
            tape.inputs.push(std::mem::replace(&mut x, next));
            tape.gates.push(g);
            tape.cells.push(cells);
            tape.hiddens.push(hs);
            tape.masks.push(mask);
        }
        let logits_tm = affine(&x, n, h, &p[self.wout.clone()], &p[self.bout.clone()], self.vocab);
        tape.top = x;
        (self.to_batch_major(&logits_tm, bn, tn), tape)
    }

    fn to_batch_major(&self, tm: &[f64], bn: usize, tn: usize) -> Vec<f64> {
        let v = self.vocab;
        let mut out = vec![0.0; tm.len()];
        for t in 0..tn {
            for b in 0..bn {
                let (src, dst) = ((t * bn + b) * v, (b * tn + t) * v);
                out[dst..dst + v].copy_from_slice(&tm[src..src + v]);
            }
        }
        out
    }

    pub fn backward(&self, p: &[f64], batch: &Batch, tape: &Tape, dlogits: &[f64], grad: &mut [f64]) {
        let (bn, tn, h, v) = (batch.rows(), batch.steps(), self.hidden, self.vocab);
        let n = bn * tn;
        let mut dl_tm = vec![0.0; dlogits.len()];
        for t in 0..tn {
            for b in 0..bn {
                let (dst, src) = ((t * bn + b) * v, (b * tn + t) * v);
                dl_tm[dst..dst + v].copy_from_slice(&dlogits[src..src + v]);
            }
        }
        let (gw, gb) = split2(grad, &self.wout, &self.bout);
        let mut dh_out = affine_backward(&tape.top, n, h, &p[self.wout.clone()], v, &dl_tm, gw, gb, true)
            .expect("dx requested");

        for (li, l) in self.layers.iter().enumerate().rev() {
            let gates = &tape.gates[li];
            let cells = &tape.cells[li];
            let hs = &tape.hiddens[li];
            let mut dg = vec![0.0; n * 4 * h];
            let mut dh_next = vec![0.0; bn * h];
            let mut dc_next = vec![0.0; bn * h];
            let whh = &p[l.whh.clone()];
            for t in (0..tn).rev() {
                for b in 0..bn {
                    let r = t * bn + b;
                    let gr = &gates[r * 4 * h..(r + 1) * 4 * h];
                    let dgr = &mut dg[r * 4 * h..(r + 1) * 4 * h];
                    for j in 0..h {
                        let (i, f, cc, o) = (gr[j], gr[h + j], gr[2 * h + j], gr[3 * h + j]);
                        let c = cells[r * h + j];
                        let c_prev = if t > 0 { cells[(r - bn) * h + j] } else { 0.0 };
                        let tc = c.tanh();
                        let dh = dh_out[r * h + j] + dh_next[b * h + j];
                        let dc = dc_next[b * h + j] + dh * o * (1.0 - tc * tc);
                        dgr[j] = dc * cc * i * (1.0 - i);
                        dgr[h + j] = dc * c_prev * f * (1.0 - f);
                        dgr[2 * h + j] = dc * i * (1.0 - cc * cc);
                        dgr[3 * h + j] = dh * tc * o * (1.0 - o);
                        dc_next[b * h + j] = dc * f;
                    }
                }
                if t > 0 {
                    gemm(bn, 4 * h, h, &dg[t * bn * 4 * h..], false, whh, true, &mut dh_next, 0.0);
                }
            }
            if tn > 1 {
                gemm(h, (tn - 1) * bn, 4 * h, hs, true, &dg[bn * 4 * h..], false, &mut grad[l.whh.clone()], 1.0);
            }
            let (gw, gb) = split2(grad, &l.wih, &l.bias);
            let dx = affine_backward(&tape.inputs[li], n, l.din, &p[l.wih.clone()], 4 * h, &dg, gw, gb, true)
                .expect("dx requested");
            if li > 0 {
                dh_out = dx;
                if let Some(m) = &tape.masks[li - 1] {
                    super::ops::mul_in_place(&mut dh_out, m);
                }
            } else {
                let e = self.emb_dim;
                for t in 0..tn {
                    for b in 0..bn {
                        let o = self.emb.start + batch.input(b, t).id() * e;
                        let r = t * bn + b;
                        for k in 0..e {
                            grad[o + k] += dx[r * e + k];
                        }
                    }
                }
            }
        }
    }

    pub fn start_state(&self) -> State {
        State {
            h: vec![vec![0.0; self.hidden]; self.layers.len()],
            c: vec![vec![0.0; self.hidden]; self.layers.len()],
        }
    }

    pub fn step(&self, p: &[f64], s: &mut State, t: Token) -> Vec<f64> {
        let (e, h) = (self.emb_dim, self.hidden);
        let o = self.emb.start + t.id() * e;
        let mut x = p[o..o + e].to_vec();
        for (li, l) in self.layers.iter().enumerate() {
            let mut g = affine(&x, 1, l.din, &p[l.wih.clone()], &p[l.bias.clone()], 4 * h);
            gemm(1, h, 4 * h, &s.h[li], false, &p[l.whh.clone()], false, &mut g, 1.0);
            let c_prev = s.c[li].clone();
            self.cell(&mut g, &c_prev, &mut s.c[li], &mut s.h[li], 1);
            x = s.h[li].clone();
        }
        affine(&x, 1, h, &p[self.wout.clone()], &p[self.bout.clone()], self.vocab)
    }
}

/// Two disjoint mutable views into the gradient vector; `a` precedes `b`.
pub(crate) fn split2<'g>(grad: &'g mut [f64], a: &Range<usize>, b: &Range<usize>) -> (&'g mut [f64], &'g mut [f64]) {
    assert!(a.end <= b.start);
    let (lo, hi) = grad.split_at_mut(b.start);
    (&mut lo[a.clone()], &mut hi[..b.len()])
}
