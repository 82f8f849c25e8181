//! Accuracy of a predictor that emits a uniformly random token of a fixed
//! support at every step, averaged over a prompt set.
//!
//! Episodes that reach the cutoff without EOS count as failures.

use std::collections::HashMap;
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::judge;
use crate::data::build_test_prompts;
use crate::error::{Error, Result};
use crate::grammar::{completion_window, Language, Rule, RuleAutomaton, RuleState};
use crate::token::Token;

/// Once the probability of a still-running episode drops below this, the
/// remainder is dropped (it can only add to successes).
const MASS_FLOOR: f64 = 1e-18;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    IdR1,
    IdR2,
    OodR1,
    OodR2Completion,
}

impl Metric {
    pub const ALL: [Metric; 4] = [Metric::IdR1, Metric::IdR2, Metric::OodR1, Metric::OodR2Completion];

    pub fn is_ood(self) -> bool {
        matches!(self, Metric::OodR1 | Metric::OodR2Completion)
    }

    pub fn rule(self) -> Rule {
        match self {
            Metric::IdR1 | Metric::OodR1 => Rule::R1,
            Metric::IdR2 | Metric::OodR2Completion => Rule::R2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Metric::IdR1 => "id_r1",
            Metric::IdR2 => "id_r2",
            Metric::OodR1 => "ood_r1",
            Metric::OodR2Completion => "ood_r2_completion",
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Metric::ALL
            .into_iter()
            .find(|m| m.name() == s.trim())
            .ok_or_else(|| Error::Config(format!("unknown metric {s:?}")))
    }
}

/// Tokens the uniform predictor draws from. SOS is never included.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Support {
    /// The alphabet plus EOS.
    LettersEos,
    /// The alphabet, EOS and PAD; a PAD inside a completion breaks every rule.
    LettersEosPad,
}

impl Support {
    pub fn tokens(self, lang: Language) -> Vec<Token> {
        let mut t = vec![Token::EOS];
        if self == Support::LettersEosPad {
            t.push(Token::PAD);
        }
        t.extend_from_slice(lang.alphabet());
        t
    }
}

impl FromStr for Support {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "letters_eos" => Ok(Support::LettersEos),
            "letters_eos_pad" => Ok(Support::LettersEosPad),
            _ => Err(Error::Config(format!(
                "unknown support {s:?} (expected letters_eos or letters_eos_pad)"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum ChanceMethod {
    ExactDp,
    MonteCarlo { n: u64, seed: u64 },
}

impl ChanceMethod {
    pub fn label(&self) -> &'static str {
        match self {
            ChanceMethod::ExactDp => "exact_dp",
            ChanceMethod::MonteCarlo { .. } => "monte_carlo",
        }
    }
}

/// Exact DP wherever the rule state is a bounded counter abstraction;
/// Monte Carlo for the nested bracket language.
pub fn default_method(lang: Language, n: u64, seed: u64) -> ChanceMethod {
    if lang == Language::L4 {
        ChanceMethod::MonteCarlo { n, seed }
    } else {
        ChanceMethod::ExactDp
    }
}

fn prompt_set(lang: Language, metric: Metric) -> Vec<Vec<Token>> {
    let ps = build_test_prompts(lang, 0);
    if metric.is_ood() {
        ps.ood
    } else {
        ps.id
    }
}

/// State of the judged rule after the prompt, before any completion token.
fn initial_state(lang: Language, metric: Metric, auto: &RuleAutomaton, prompt: &[Token]) -> RuleState {
    match metric {
        Metric::OodR2Completion => auto.run(&completion_window(lang, prompt, &[])),
        _ => auto.run(&prompt[1..]),
    }
}

/// Probability that a uniform random continuation from `start` emits EOS
/// within `budget` tokens in an accepting state.
fn absorb(auto: &RuleAutomaton, start: RuleState, budget: usize, support: &[Token]) -> f64 {
    let share = 1.0 / support.len() as f64;
    let mut dist: HashMap<RuleState, f64> = HashMap::from([(start, 1.0)]);
    let mut accepted = 0.0;
    for _ in 0..budget {
        let mut next: HashMap<RuleState, f64> = HashMap::with_capacity(dist.len() * 2);
        for (state, p) in &dist {
            let q = p * share;
            for &t in support {
                if t == Token::EOS {
                    if auto.accepts(state) {
                        accepted += q;
                    }
                } else {
                    let s = auto.step(state, t);
                    if s != RuleState::Dead {
                        *next.entry(s).or_insert(0.0) += q;
                    }
                }
            }
        }
        dist = next;
        if dist.values().sum::<f64>() < MASS_FLOOR {
            break;
        }
    }
    accepted
}

/// Exact chance accuracy by dynamic programming over rule states.
pub fn chance_exact(lang: Language, metric: Metric, support: Support, cutoff: usize) -> Result<f64> {
    if lang == Language::L4 {
        return Err(Error::Contract(
            "exact chance levels are not supported for L4's nested stack; use chance_mc".into(),
        ));
    }
    let auto = lang.automaton(metric.rule());
    let support = support.tokens(lang);
    let prompts = prompt_set(lang, metric);
    let mut cache: HashMap<(RuleState, usize), f64> = HashMap::new();
    let mut total = 0.0;
    for p in &prompts {
        let budget = cutoff.saturating_sub(p.len());
        let start = initial_state(lang, metric, &auto, p);
        total += *cache
            .entry((start.clone(), budget))
            .or_insert_with(|| absorb(&auto, start, budget, &support));
    }
    Ok(total / prompts.len() as f64)
}

/// Monte-Carlo chance accuracy with its binomial standard error. Prompts are
/// visited round-robin so every prompt gets an equal share of episodes, and
/// each realized completion is scored with the evaluation judge.
pub fn chance_mc(
    lang: Language,
    metric: Metric,
    support: Support,
    cutoff: usize,
    n: u64,
    seed: u64,
) -> Result<(f64, f64)> {
    if n == 0 {
        return Err(Error::Contract("Monte-Carlo chance needs n >= 1".into()));
    }
    let support = support.tokens(lang);
    let prompts = prompt_set(lang, metric);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut hits = 0u64;
    let mut completion = Vec::new();
    for i in 0..n {
        let p = &prompts[(i % prompts.len() as u64) as usize];
        completion.clear();
        while p.len() + completion.len() < cutoff {
            let t = support[rng.gen_range(0..support.len())];
            completion.push(t);
            if t == Token::EOS {
                break;
            }
        }
        if let Some((r1, r2)) = judge(lang, p, &completion, metric.is_ood()) {
            hits += match metric.rule() {
                Rule::R1 => r1,
                Rule::R2 => r2,
            } as u64;
        }
    }
    let mean = hits as f64 / n as f64;
    Ok((mean, (mean * (1.0 - mean) / n as f64).sqrt()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChanceRow {
    pub language: Language,
    pub metric: Metric,
    pub method: String,
    pub value: f64,
    pub stderr: Option<f64>,
}

pub fn chance(lang: Language, metric: Metric, support: Support, cutoff: usize, method: ChanceMethod) -> Result<ChanceRow> {
    let (value, stderr) = match method {
        ChanceMethod::ExactDp => (chance_exact(lang, metric, support, cutoff)?, None),
        ChanceMethod::MonteCarlo { n, seed } => {
            let (v, se) = chance_mc(lang, metric, support, cutoff, n, seed)?;
            (v, Some(se))
        }
    };
    Ok(ChanceRow {
        language: lang,
        metric,
        method: method.label().to_string(),
        value,
        stderr,
    })
}

/// Every metric of every requested language, using [`default_method`].
/// L1 has no in-distribution R2 row: its ID prompts satisfy R2 by
/// construction, so only three rows are produced for it.
pub fn chance_table(langs: &[Language], support: Support, cutoff: usize, mc_n: u64, seed: u64) -> Result<Vec<ChanceRow>> {
    let mut rows = Vec::new();
    for &lang in langs {
        for metric in Metric::ALL {
            if lang == Language::L1 && metric == Metric::IdR2 {
                continue;
            }
            let sub = crate::seed::derive_seed(seed, &format!("chance.{lang}.{metric}"));
            rows.push(chance(lang, metric, support, cutoff, default_method(lang, mc_n, sub))?);
        }
    }
    Ok(rows)
}

pub fn write_chance_csv<W: Write>(rows: &[ChanceRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["language", "metric", "method", "value", "stderr"])
        .map_err(csv_err)?;
    for r in rows {
        w.write_record([
            r.language.to_string(),
            r.metric.to_string(),
            r.method.clone(),
            format!("{:.6}", r.value),
            r.stderr.map(|s| format!("{s:.6}")).unwrap_or_default(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub(crate) fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}
