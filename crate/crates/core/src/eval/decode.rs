use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ops, ArModel};
use crate::token::Token;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum Decoding {
    Greedy,
    Sample { seed: u64, temperature: f64 },
}

/// Index of the largest logit, ignoring SOS; ties go to the lowest id.
pub fn argmax_no_sos(logits: &[f64]) -> Token {
    let mut best = 1;
    for i in 2..logits.len() {
        if logits[i] > logits[best] {
            best = i;
        }
    }
    Token(best as u8)
}

fn decode_with<F>(model: &ArModel, prompt: &[Token], cutoff: usize, mut choose: F) -> Result<Vec<Token>>
where
    F: FnMut(&[f64]) -> Token,
{
    if prompt.first() != Some(&Token::SOS) {
        return Err(Error::Contract("prompt must start with SOS".into()));
    }
    let mut session = model.session();
    let mut logits = Vec::new();
    for &t in prompt {
        logits = session.push(t)?;
    }
    let mut out = Vec::new();
    while prompt.len() + out.len() < cutoff {
        let t = choose(&logits);
        out.push(t);
        if t == Token::EOS || prompt.len() + out.len() >= cutoff {
            break;
        }
        logits = session.push(t)?;
    }
    Ok(out)
}

/// Append argmax tokens until EOS or until the whole sequence (prompt
/// included) has `cutoff` tokens. Returns only the appended tokens.
pub fn decode_greedy(model: &ArModel, prompt: &[Token], cutoff: usize) -> Result<Vec<Token>> {
    decode_with(model, prompt, cutoff, argmax_no_sos)
}

/// As [`decode_greedy`] but sampling from `softmax(logits / temperature)`
/// with SOS excluded.
pub fn decode_sample<R: Rng + ?Sized>(
    model: &ArModel,
    prompt: &[Token],
    cutoff: usize,
    temperature: f64,
    rng: &mut R,
) -> Result<Vec<Token>> {
    if temperature <= 0.0 {
        return Err(Error::Config(format!("temperature {temperature} must be positive")));
    }
    decode_with(model, prompt, cutoff, |logits| sample_no_sos(logits, temperature, rng))
}

pub fn sample_no_sos<R: Rng + ?Sized>(logits: &[f64], temperature: f64, rng: &mut R) -> Token {
    let mut scaled: Vec<f64> = logits.iter().map(|l| l / temperature).collect();
    scaled[0] = f64::NEG_INFINITY;
    let p = ops::softmax(&scaled);
    let mut u = rng.gen::<f64>();
    for (i, pi) in p.iter().enumerate().skip(1) {
        if u < *pi {
            return Token(i as u8);
        }
        u -= pi;
    }
    // Rounding left `u` past the last bucket: take the last positive one.
    Token(p.iter().rposition(|&x| x > 0.0).unwrap_or(1) as u8)
}
