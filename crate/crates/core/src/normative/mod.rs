//! Bayesian mixture over a finite catalogue of total next-token machines,
//! with priors `2^-K` where `K` is a machine's description length in bits.
//!
//! The posterior is computed from a pre-training set only; prompts at test
//! time never update it.

mod machine;

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{argmax_no_sos, csv_err};
use crate::grammar::{sample_word, Language};
use crate::token::{completed, Token};

pub use machine::{parse_catalogue, Guard, Machine, MachineState, Ratio, COUNTER_BOUND, MAX_COUNTERS};

const L1_MACHINES: &str = include_str!("../../catalogues/l1.machines");
const L2_MACHINES: &str = include_str!("../../catalogues/l2.machines");
const L3_MACHINES: &str = include_str!("../../catalogues/l3.machines");

/// Shipped catalogue text for a letter language with counter-expressible rules.
pub fn catalogue_source(lang: Language) -> Result<&'static str> {
    match lang {
        Language::L1 => Ok(L1_MACHINES),
        Language::L2 => Ok(L2_MACHINES),
        Language::L3 => Ok(L3_MACHINES),
        _ => Err(Error::Contract(format!(
            "no machine catalogue for {lang}; only L1, L2 and L3 are supported"
        ))),
    }
}

/// Uniform, R1, R2 and R1∩R2 machines, in that order.
pub fn catalogue_for(lang: Language) -> Result<Vec<Machine>> {
    parse_catalogue(catalogue_source(lang)?, format!("<{lang} catalogue>"))
}

fn log_sum_exp(xs: impl IntoIterator<Item = f64>) -> f64 {
    let xs: Vec<f64> = xs.into_iter().collect();
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// `ln Σ 2^-K` over the catalogue; Kraft's inequality holds iff it is <= 0.
pub fn log_kraft_sum(catalogue: &[Machine]) -> f64 {
    log_sum_exp(catalogue.iter().map(Machine::log_prior))
}

/// Equal-length SOS-prefixed sequences. Words are completed with EOS and
/// right-padded with PAD, which every machine predicts with certainty.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PretrainSet {
    seqs: Vec<Vec<Token>>,
}

impl PretrainSet {
    pub fn from_words(words: &[Vec<Token>]) -> Self {
        let m = words.iter().map(|w| w.len() + 2).max().unwrap_or(0);
        let seqs = words
            .iter()
            .map(|w| {
                let mut s = completed(w);
                s.resize(m, Token::PAD);
                s
            })
            .collect();
        PretrainSet { seqs }
    }

    /// Sequences taken as they are, e.g. unterminated prefixes.
    pub fn from_sequences(seqs: Vec<Vec<Token>>) -> Result<Self> {
        if let Some(first) = seqs.first() {
            if seqs.iter().any(|s| s.len() != first.len() || s.first() != Some(&Token::SOS)) {
                return Err(Error::Contract(
                    "pre-training sequences must share one length and start with SOS".into(),
                ));
            }
        }
        Ok(PretrainSet { seqs })
    }

    pub fn sequences(&self) -> &[Vec<Token>] {
        &self.seqs
    }

    pub fn len(&self) -> usize {
        self.seqs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.seqs.is_empty()
    }

    /// Common sequence length, SOS included.
    pub fn seq_len(&self) -> usize {
        self.seqs.first().map_or(0, Vec::len)
    }
}

/// `ln p(D)`: the sum over sequences and positions of log conditionals.
/// Negative infinity when some token has zero probability.
pub fn log_likelihood(machine: &Machine, data: &PretrainSet) -> Result<f64> {
    data.seqs.iter().map(|s| machine.log_prob(s)).sum()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PosteriorEntry {
    pub id: String,
    pub log_prior: f64,
    pub log_likelihood: f64,
    /// Normalized over the catalogue.
    pub log_posterior: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PosteriorState {
    pub entries: Vec<PosteriorEntry>,
    /// Words absorbed so far.
    pub observed: usize,
}

impl PosteriorState {
    /// Posterior before any data: the normalized prior.
    pub fn prior(catalogue: &[Machine]) -> Self {
        let mut s = PosteriorState {
            entries: catalogue
                .iter()
                .map(|m| PosteriorEntry {
                    id: m.id.clone(),
                    log_prior: m.log_prior(),
                    log_likelihood: 0.0,
                    log_posterior: 0.0,
                })
                .collect(),
            observed: 0,
        };
        s.normalize().expect("finite priors");
        s
    }

    /// Absorb one more sequence.
    pub fn update(&mut self, catalogue: &[Machine], seq: &[Token]) -> Result<()> {
        self.check(catalogue)?;
        for (e, m) in self.entries.iter_mut().zip(catalogue) {
            e.log_likelihood += m.log_prob(seq)?;
        }
        self.observed += 1;
        self.normalize()
    }

    fn check(&self, catalogue: &[Machine]) -> Result<()> {
        if catalogue.len() != self.entries.len() || catalogue.iter().zip(&self.entries).any(|(m, e)| m.id != e.id) {
            return Err(Error::Contract("posterior and catalogue disagree".into()));
        }
        Ok(())
    }

    fn normalize(&mut self) -> Result<()> {
        let z = log_sum_exp(self.entries.iter().map(|e| e.log_prior + e.log_likelihood));
        if !z.is_finite() {
            return Err(Error::DegeneratePosterior(
                "every hypothesis assigns zero probability to the data".into(),
            ));
        }
        for e in &mut self.entries {
            e.log_posterior = e.log_prior + e.log_likelihood - z;
        }
        Ok(())
    }

    pub fn weights(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.log_posterior.exp()).collect()
    }

    pub fn mass_of(&self, id: &str) -> Option<f64> {
        self.entries.iter().find(|e| e.id == id).map(|e| e.log_posterior.exp())
    }
}

pub fn posterior(catalogue: &[Machine], data: &PretrainSet) -> Result<PosteriorState> {
    if catalogue.is_empty() {
        return Err(Error::Contract("empty catalogue".into()));
    }
    let mut s = PosteriorState::prior(catalogue);
    for (e, m) in s.entries.iter_mut().zip(catalogue) {
        e.log_likelihood = log_likelihood(m, data)?;
    }
    s.observed = data.len();
    s.normalize()?;
    Ok(s)
}

/// Posterior-weighted mixture of the machines' conditionals.
#[derive(Clone, Debug)]
pub struct Mixture {
    pub catalogue: Vec<Machine>,
    pub posterior: PosteriorState,
}

impl Mixture {
    pub fn new(catalogue: Vec<Machine>, posterior: PosteriorState) -> Result<Self> {
        posterior.check(&catalogue)?;
        Ok(Mixture { catalogue, posterior })
    }

    pub fn fit(catalogue: Vec<Machine>, data: &PretrainSet) -> Result<Self> {
        let posterior = posterior(&catalogue, data)?;
        Ok(Mixture { catalogue, posterior })
    }

    pub fn vocab_size(&self) -> usize {
        self.catalogue.iter().map(Machine::vocab_size).max().unwrap_or(3)
    }

    fn states(&self, prompt: &[Token]) -> Result<Vec<MachineState>> {
        self.catalogue.iter().map(|m| m.run(prompt)).collect()
    }

    fn mix(&self, states: &[MachineState]) -> Vec<f64> {
        let mut out = vec![0.0; self.vocab_size()];
        for ((m, s), w) in self.catalogue.iter().zip(states).zip(self.posterior.weights()) {
            for (o, p) in out.iter_mut().zip(m.conditional(s)) {
                *o += w * p;
            }
        }
        out
    }

    /// Next-token distribution after an SOS-prefixed prompt, indexed by id.
    pub fn predict(&self, prompt: &[Token]) -> Result<Vec<f64>> {
        Ok(self.mix(&self.states(prompt)?))
    }

    /// Extend `prompt` until EOS or until prompt plus completion reach
    /// `cutoff` tokens. Sampling draws from the renormalized mixture.
    pub fn complete(&self, prompt: &[Token], cutoff: usize, mode: Completion) -> Result<Vec<Token>> {
        let mut states = self.states(prompt)?;
        let mut rng = match mode {
            Completion::Sample { seed } => Some(ChaCha8Rng::seed_from_u64(seed)),
            Completion::Greedy => None,
        };
        let mut out = Vec::new();
        while prompt.len() + out.len() < cutoff {
            let p = self.mix(&states);
            let t = match rng.as_mut() {
                None => argmax_no_sos(&p),
                Some(r) => {
                    let total: f64 = p[1..].iter().sum();
                    if total <= 0.0 {
                        break;
                    }
                    let mut u = r.gen::<f64>() * total;
                    let mut pick = Token::EOS;
                    for (i, &pi) in p.iter().enumerate().skip(1) {
                        if pi > 0.0 {
                            pick = Token(i as u8);
                            if u < pi {
                                break;
                            }
                            u -= pi;
                        }
                    }
                    pick
                }
            };
            out.push(t);
            if t == Token::EOS || t == Token::PAD {
                break;
            }
            for (s, m) in states.iter_mut().zip(&self.catalogue) {
                *s = m.step(s, t)?;
            }
        }
        Ok(out)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum Completion {
    Greedy,
    Sample { seed: u64 },
}

/// Predictive probability by direct Bayesian updating on the prompt itself:
/// `Σ α_i p_i(x_1..x_n) / Σ α_i p_i(x_1..x_{n-1})`.
pub fn predictive_update(catalogue: &[Machine], prompt: &[Token]) -> Result<Vec<f64>> {
    let vocab = catalogue.iter().map(Machine::vocab_size).max().unwrap_or(3);
    let denom = log_sum_exp(
        catalogue
            .iter()
            .map(|m| m.log_prob(prompt).map(|lp| m.log_prior() + lp))
            .collect::<Result<Vec<_>>>()?,
    );
    let mut out = vec![0.0; vocab];
    let mut ext = prompt.to_vec();
    ext.push(Token::SOS);
    for (id, o) in out.iter_mut().enumerate().skip(1) {
        *ext.last_mut().expect("nonempty") = Token(id as u8);
        let parts: Vec<f64> = catalogue
            .iter()
            .map(|m| {
                if id > 2 && !m.alphabet().contains(&Token(id as u8)) {
                    return f64::NEG_INFINITY;
                }
                m.log_prob(&ext).map_or(f64::NEG_INFINITY, |lp| m.log_prior() + lp)
            })
            .collect();
        *o = (log_sum_exp(parts) - denom).exp();
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub m: usize,
    pub masses: Vec<f64>,
}

/// Posterior masses after the first `M` words of one fixed sample, for each
/// requested `M`. Words are drawn from the language with lengths up to
/// `max_len`.
pub fn learning_order_curve(
    catalogue: &[Machine],
    lang: Language,
    sizes: &[usize],
    max_len: usize,
    seed: u64,
) -> Result<Vec<CurveRow>> {
    if sizes.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Contract("curve sizes must be strictly increasing".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = sizes.last().copied().unwrap_or(0);
    let words = (0..n)
        .map(|_| sample_word(lang, max_len, &mut rng))
        .collect::<Result<Vec<_>>>()?;
    let mut state = PosteriorState::prior(catalogue);
    let mut rows = Vec::with_capacity(sizes.len());
    for &m in sizes {
        while state.observed < m {
            state.update(catalogue, &completed(&words[state.observed]))?;
        }
        rows.push(CurveRow {
            m,
            masses: state.weights(),
        });
    }
    Ok(rows)
}

/// First `M` at which hypothesis `later` holds more mass than `earlier`,
/// provided `earlier` led at some smaller `M`.
pub fn crossover(rows: &[CurveRow], earlier: usize, later: usize) -> Option<usize> {
    let lead = rows.iter().position(|r| r.masses[earlier] > r.masses[later])?;
    rows[lead..]
        .iter()
        .find(|r| r.masses[later] > r.masses[earlier])
        .map(|r| r.m)
}

pub fn write_posterior_csv<W: Write>(state: &PosteriorState, catalogue: &[Machine], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["machine", "k_bits", "log_prior", "log_likelihood", "posterior"])
        .map_err(csv_err)?;
    for (e, m) in state.entries.iter().zip(catalogue) {
        w.write_record([
            e.id.clone(),
            m.description_bits().to_string(),
            format!("{:.12}", e.log_prior),
            format!("{:.12}", e.log_likelihood),
            format!("{:.12}", e.log_posterior.exp()),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_curve_csv<W: Write>(rows: &[CurveRow], catalogue: &[Machine], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["m".to_string()];
    header.extend(catalogue.iter().map(|m| m.id.clone()));
    w.write_record(&header).map_err(csv_err)?;
    for r in rows {
        let mut rec = vec![r.m.to_string()];
        rec.extend(r.masses.iter().map(|x| format!("{x:.12}")));
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests;
