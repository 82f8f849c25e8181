use std::ops::Range;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::lstm::split2;
use super::ops::{
    add_in_place, affine, affine_backward, dropout_mask, layer_norm, layer_norm_backward, mul_in_place,
    LayerNormCache,
};
use super::{truncated_normal, Batch, LayoutBuilder, TransformerConfig};
use crate::token::Token;

#[derive(Clone, Debug)]
struct Block {
    wqkv: Range<usize>,
    bqkv: Range<usize>,
    wo: Range<usize>,
    bo: Range<usize>,
    ln1_g: Range<usize>,
    ln1_b: Range<usize>,
    w1: Range<usize>,
    b1: Range<usize>,
    w2: Range<usize>,
    b2: Range<usize>,
    ln2_g: Range<usize>,
    ln2_b: Range<usize>,
}

/// Decoder-only transformer with post-norm residual blocks:
/// `x = LN(x + Drop(Attn(x)))`, `x = LN(x + Drop(FF(x)))`.
#[derive(Clone, Debug)]
pub struct Transformer {
    vocab: usize,
    d: usize,
    heads: usize,
    ff: usize,
    eps: f64,
    dropout: f64,
    tok: Range<usize>,
    pos: Range<usize>,
    blocks: Vec<Block>,
    wout: Range<usize>,
    bout: Range<usize>,
}

struct BlockTape {
    x: Vec<f64>,
    qkv: Vec<f64>,
    ctx: Vec<f64>,
    m_attn: Option<Vec<f64>>,
    ln1: LayerNormCache,
    x1: Vec<f64>,
    /// Post-ReLU, post-dropout hidden layer; nonzero exactly where the
    /// gradient flows.
    hidden: Vec<f64>,
    m_ff: Option<Vec<f64>>,
    ln2: LayerNormCache,
}

pub struct Tape {
    blocks: Vec<BlockTape>,
    top: Vec<f64>,
    hidden_scale: f64,
}

pub struct Cache {
    /// Per block, keys and values of every consumed position (`[pos, d]`).
    keys: Vec<Vec<f64>>,
    values: Vec<Vec<f64>>,
}

impl Transformer {
    pub fn new(cfg: &TransformerConfig, vocab: usize, lb: &mut LayoutBuilder) -> Self {
        let (d, f) = (cfg.dim, cfg.feedforward);
        let tok = lb.add("tok_embedding", &[vocab, d]);
        let pos = lb.add("pos_embedding", &[cfg.max_positions, d]);
        let blocks = (0..cfg.layers)
            .map(|l| Block {
                wqkv: lb.add(format!("block{l}.attn.w_qkv"), &[d, 3 * d]),
                bqkv: lb.add(format!("block{l}.attn.b_qkv"), &[3 * d]),
                wo: lb.add(format!("block{l}.attn.w_out"), &[d, d]),
                bo: lb.add(format!("block{l}.attn.b_out"), &[d]),
                ln1_g: lb.add(format!("block{l}.ln1.gamma"), &[d]),
                ln1_b: lb.add(format!("block{l}.ln1.beta"), &[d]),
                w1: lb.add(format!("block{l}.ff.w1"), &[d, f]),
                b1: lb.add(format!("block{l}.ff.b1"), &[f]),
                w2: lb.add(format!("block{l}.ff.w2"), &[f, d]),
                b2: lb.add(format!("block{l}.ff.b2"), &[d]),
                ln2_g: lb.add(format!("block{l}.ln2.gamma"), &[d]),
                ln2_b: lb.add(format!("block{l}.ln2.beta"), &[d]),
            })
            .collect();
        Transformer {
            vocab,
            d,
            heads: cfg.heads,
            ff: f,
            eps: cfg.ln_eps,
            dropout: cfg.dropout,
            tok,
            pos,
            blocks,
            wout: lb.add("out.weight", &[d, vocab]),
            bout: lb.add("out.bias", &[vocab]),
        }
    }

    pub fn init<R: Rng + ?Sized>(&self, p: &mut [f64], rng: &mut R) {
        truncated_normal(&mut p[self.tok.clone()], 0.02, rng);
        truncated_normal(&mut p[self.pos.clone()], 0.02, rng);
        for b in &self.blocks {
            for w in [&b.wqkv, &b.wo, &b.w1, &b.w2] {
                truncated_normal(&mut p[w.clone()], 0.02, rng);
            }
            p[b.ln1_g.clone()].fill(1.0);
            p[b.ln2_g.clone()].fill(1.0);
        }
        truncated_normal(&mut p[self.wout.clone()], 0.02, rng);
    }

    fn head_dim(&self) -> usize {
        self.d / self.heads
    }

    /// Causal attention weights of query row `i` of one sequence/head over
    /// positions `0..=i`. `qkv` rows are `3d` wide, starting at `base`.
    fn attn_row(&self, qkv: &[f64], base: usize, i: usize, head: usize) -> Vec<f64> {
        let (d, hd) = (self.d, self.head_dim());
        let scale = 1.0 / (hd as f64).sqrt();
        let q = &qkv[(base + i) * 3 * d + head * hd..][..hd];
        let mut s: Vec<f64> = (0..=i)
            .map(|j| {
                let k = &qkv[(base + j) * 3 * d + d + head * hd..][..hd];
                q.iter().zip(k).map(|(a, b)| a * b).sum::<f64>() * scale
            })
            .collect();
        let top = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for v in &mut s {
            *v = (*v - top).exp();
            z += *v;
        }
        s.iter_mut().for_each(|v| *v /= z);
        s
    }

    fn attention(&self, qkv: &[f64], bn: usize, tn: usize) -> Vec<f64> {
        let (d, hd) = (self.d, self.head_dim());
        let mut ctx = vec![0.0; bn * tn * d];
        for b in 0..bn {
            let base = b * tn;
            for head in 0..self.heads {
                for i in 0..tn {
                    let p = self.attn_row(qkv, base, i, head);
                    let out = &mut ctx[(base + i) * d + head * hd..][..hd];
                    for (j, pj) in p.iter().enumerate() {
                        let v = &qkv[(base + j) * 3 * d + 2 * d + head * hd..][..hd];
                        for (o, x) in out.iter_mut().zip(v) {
                            *o += pj * x;
                        }
                    }
                }
            }
        }
        ctx
    }

    fn attention_backward(&self, qkv: &[f64], dctx: &[f64], bn: usize, tn: usize) -> Vec<f64> {
        let (d, hd) = (self.d, self.head_dim());
        let scale = 1.0 / (hd as f64).sqrt();
        let mut dqkv = vec![0.0; qkv.len()];
        for b in 0..bn {
            let base = b * tn;
            for head in 0..self.heads {
                let off = head * hd;
                for i in 0..tn {
                    let p = self.attn_row(qkv, base, i, head);
                    let dc = &dctx[(base + i) * d + off..][..hd];
                    let dp: Vec<f64> = (0..=i)
                        .map(|j| {
                            let v = &qkv[(base + j) * 3 * d + 2 * d + off..][..hd];
                            dc.iter().zip(v).map(|(a, b)| a * b).sum()
                        })
                        .collect();
                    let dot: f64 = p.iter().zip(&dp).map(|(a, b)| a * b).sum();
                    for j in 0..=i {
                        let ds = p[j] * (dp[j] - dot) * scale;
                        for k in 0..hd {
                            let qi = qkv[(base + i) * 3 * d + off + k];
                            let kj = qkv[(base + j) * 3 * d + d + off + k];
                            dqkv[(base + i) * 3 * d + off + k] += ds * kj;
                            dqkv[(base + j) * 3 * d + d + off + k] += ds * qi;
                            dqkv[(base + j) * 3 * d + 2 * d + off + k] += p[j] * dc[k];
                        }
                    }
                }
            }
        }
        dqkv
    }

    pub fn forward(&self, p: &[f64], batch: &Batch, mut rng: Option<&mut ChaCha8Rng>) -> (Vec<f64>, Tape) {
        let (bn, tn, d, f) = (batch.rows(), batch.steps(), self.d, self.ff);
        let n = bn * tn;
        let mut x = Vec::with_capacity(n * d);
        for b in 0..bn {
            for t in 0..tn {
                let to = self.tok.start + batch.input(b, t).id() * d;
                let po = self.pos.start + t * d;
                x.extend(p[to..to + d].iter().zip(&p[po..po + d]).map(|(a, b)| a + b));
            }
        }
        let training = rng.is_some() && self.dropout > 0.0;
        let hidden_scale = if training { 1.0 / (1.0 - self.dropout) } else { 1.0 };
        let mut mask = |len: usize| match rng.as_deref_mut() {
            Some(r) if training => Some(dropout_mask(len, self.dropout, r)),
            _ => None,
        };
        let mut tapes = Vec::with_capacity(self.blocks.len());
        for bl in &self.blocks {
            let qkv = affine(&x, n, d, &p[bl.wqkv.clone()], &p[bl.bqkv.clone()], 3 * d);
            let ctx = self.attention(&qkv, bn, tn);
            let mut a = affine(&ctx, n, d, &p[bl.wo.clone()], &p[bl.bo.clone()], d);
            let m_attn = mask(n * d);
            if let Some(m) = &m_attn {
                mul_in_place(&mut a, m);
            }
            add_in_place(&mut a, &x);
            let (x1, ln1) = layer_norm(&a, d, &p[bl.ln1_g.clone()], &p[bl.ln1_b.clone()], self.eps);
            let mut hidden = affine(&x1, n, d, &p[bl.w1.clone()], &p[bl.b1.clone()], f);
            hidden.iter_mut().for_each(|v| *v = v.max(0.0));
            let m_hidden = mask(n * f);
            if let Some(m) = &m_hidden {
                mul_in_place(&mut hidden, m);
            }
            let mut out = affine(&hidden, n, f, &p[bl.w2.clone()], &p[bl.b2.clone()], d);
            let m_ff = mask(n * d);
            if let Some(m) = &m_ff {
                mul_in_place(&mut out, m);
            }
            add_in_place(&mut out, &x1);
            let (x2, ln2) = layer_norm(&out, d, &p[bl.ln2_g.clone()], &p[bl.ln2_b.clone()], self.eps);
            tapes.push(BlockTape {
                x: std::mem::replace(&mut x, x2),
                qkv,
                ctx,
                m_attn,
                ln1,
                x1,
                hidden,
                m_ff,
                ln2,
            });
        }
        let logits = affine(&x, n, d, &p[self.wout.clone()], &p[self.bout.clone()], self.vocab);
        (
            logits,
            Tape {
                blocks: tapes,
                top: x,
                hidden_scale,
            },
        )
    }

    pub fn backward(&self, p: &[f64], batch: &Batch, tape: &Tape, dlogits: &[f64], grad: &mut [f64]) {
        let (bn, tn, d, f) = (batch.rows(), batch.steps(), self.d, self.ff);
        let n = bn * tn;
        let (gw, gb) = split2(grad, &self.wout, &self.bout);
        let mut dx = affine_backward(&tape.top, n, d, &p[self.wout.clone()], self.vocab, dlogits, gw, gb, true)
            .expect("dx requested");
        for (bl, t) in self.blocks.iter().zip(&tape.blocks).rev() {
            let (gg, gb) = split2(grad, &bl.ln2_g, &bl.ln2_b);
            let dr2 = layer_norm_backward(&dx, d, &p[bl.ln2_g.clone()], &t.ln2, gg, gb);
            let mut dout = dr2.clone();
            if let Some(m) = &t.m_ff {
                mul_in_place(&mut dout, m);
            }
            let (gw, gb) = split2(grad, &bl.w2, &bl.b2);
            let mut dhidden = affine_backward(&t.hidden, n, f, &p[bl.w2.clone()], d, &dout, gw, gb, true)
                .expect("dx requested");
            for (g, h) in dhidden.iter_mut().zip(&t.hidden) {
                *g = if *h != 0.0 { *g * tape.hidden_scale } else { 0.0 };
            }
            let (gw, gb) = split2(grad, &bl.w1, &bl.b1);
            let mut dx1 = affine_backward(&t.x1, n, d, &p[bl.w1.clone()], f, &dhidden, gw, gb, true)
                .expect("dx requested");
            add_in_place(&mut dx1, &dr2);
            let (gg, gb) = split2(grad, &bl.ln1_g, &bl.ln1_b);
            let dr1 = layer_norm_backward(&dx1, d, &p[bl.ln1_g.clone()], &t.ln1, gg, gb);
            let mut da = dr1.clone();
            if let Some(m) = &t.m_attn {
                mul_in_place(&mut da, m);
            }
            let (gw, gb) = split2(grad, &bl.wo, &bl.bo);
            let dctx = affine_backward(&t.ctx, n, d, &p[bl.wo.clone()], d, &da, gw, gb, true)
                .expect("dx requested");
            let dqkv = self.attention_backward(&t.qkv, &dctx, bn, tn);
            let (gw, gb) = split2(grad, &bl.wqkv, &bl.bqkv);
            dx = affine_backward(&t.x, n, d, &p[bl.wqkv.clone()], 3 * d, &dqkv, gw, gb, true)
                .expect("dx requested");
            add_in_place(&mut dx, &dr1);
        }
        for b in 0..bn {
            for t in 0..tn {
                let r = b * tn + t;
                let to = self.tok.start + batch.input(b, t).id() * d;
                let po = self.pos.start + t * d;
                for k in 0..d {
                    grad[to + k] += dx[r * d + k];
                    grad[po + k] += dx[r * d + k];
                }
            }
        }
    }

    pub fn start_state(&self) -> Cache {
        Cache {
            keys: vec![Vec::new(); self.blocks.len()],
            values: vec![Vec::new(); self.blocks.len()],
        }
    }

    pub fn step(&self, p: &[f64], cache: &mut Cache, t: Token, pos: usize) -> Vec<f64> {
        let (d, f, hd) = (self.d, self.ff, self.head_dim());
        let scale = 1.0 / (hd as f64).sqrt();
        let to = self.tok.start + t.id() * d;
        let po = self.pos.start + pos * d;
        let mut x: Vec<f64> = p[to..to + d].iter().zip(&p[po..po + d]).map(|(a, b)| a + b).collect();
        for (li, bl) in self.blocks.iter().enumerate() {
            let qkv = affine(&x, 1, d, &p[bl.wqkv.clone()], &p[bl.bqkv.clone()], 3 * d);
            cache.keys[li].extend_from_slice(&qkv[d..2 * d]);
            cache.values[li].extend_from_slice(&qkv[2 * d..]);
            let (keys, values) = (&cache.keys[li], &cache.values[li]);
            let len = pos + 1;
            let mut ctx = vec![0.0; d];
            for head in 0..self.heads {
                let off = head * hd;
                let q = &qkv[off..off + hd];
                let mut s: Vec<f64> = (0..len)
                    .map(|j| q.iter().zip(&keys[j * d + off..][..hd]).map(|(a, b)| a * b).sum::<f64>() * scale)
                    .collect();
                let top = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let mut z = 0.0;
                for v in &mut s {
                    *v = (*v - top).exp();
                    z += *v;
                }
                for (j, w) in s.iter().enumerate() {
                    for k in 0..hd {
                        ctx[off + k] += w / z * values[j * d + off + k];
                    }
                }
            }
            let mut a = affine(&ctx, 1, d, &p[bl.wo.clone()], &p[bl.bo.clone()], d);
            add_in_place(&mut a, &x);
            let (x1, _) = layer_norm(&a, d, &p[bl.ln1_g.clone()], &p[bl.ln1_b.clone()], self.eps);
            let mut hidden = affine(&x1, 1, d, &p[bl.w1.clone()], &p[bl.b1.clone()], f);
            hidden.iter_mut().for_each(|v| *v = v.max(0.0));
            let mut out = affine(&hidden, 1, f, &p[bl.w2.clone()], &p[bl.b2.clone()], d);
            add_in_place(&mut out, &x1);
            x = layer_norm(&out, d, &p[bl.ln2_g.clone()], &p[bl.ln2_b.clone()], self.eps).0;
        }
        affine(&x, 1, d, &p[self.wout.clone()], &p[self.bout.clone()], self.vocab)
    }
}
