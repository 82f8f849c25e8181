//! Decoding, rule accuracies and chance-level oracles.

mod chance;
mod decode;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{build_training_set, is_enumerated, PromptSet};
use crate::error::{Error, Result};
use crate::grammar::{check_rule, check_rule_on_completion, Language, Rule};
use crate::model::{mean_loss, ArModel, TrainTrace};
use crate::seed::derive_seed;
use crate::token::{self, Token};

pub use chance::{
    chance, chance_exact, chance_mc, chance_table, default_method, write_chance_csv, ChanceMethod, ChanceRow,
    Metric, Support,
};
pub(crate) use chance::csv_err;
pub use decode::{argmax_no_sos, decode_greedy, decode_sample, sample_no_sos, Decoding};

/// Prompt-plus-completion length limit used for decoding.
pub const DEFAULT_CUTOFF: usize = 300;
/// Held-out words used for the test loss of sampled languages.
pub const TEST_WORDS: usize = 1024;

/// Rule accuracies over EOS-terminated completions; `None` when no
/// completion of the prompt set terminated.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Accuracies {
    pub id_r1: Option<f64>,
    pub id_r2: Option<f64>,
    pub ood_r1: Option<f64>,
    pub ood_r2_completion: Option<f64>,
}

impl Accuracies {
    pub fn get(&self, metric: Metric) -> Option<f64> {
        match metric {
            Metric::IdR1 => self.id_r1,
            Metric::IdR2 => self.id_r2,
            Metric::OodR1 => self.ood_r1,
            Metric::OodR2Completion => self.ood_r2_completion,
        }
    }

    fn slot(&mut self, metric: Metric) -> &mut Option<f64> {
        match metric {
            Metric::IdR1 => &mut self.id_r1,
            Metric::IdR2 => &mut self.id_r2,
            Metric::OodR1 => &mut self.ood_r1,
            Metric::OodR2Completion => &mut self.ood_r2_completion,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub language: Language,
    pub model: String,
    pub decoding: Decoding,
    #[serde(flatten)]
    pub accuracies: Accuracies,
    /// EOS-terminated completions, the denominators of the accuracies.
    pub id_terminated: usize,
    pub ood_terminated: usize,
    pub id_prompts: usize,
    pub ood_prompts: usize,
    pub test_loss: Option<f64>,
    pub epoch: Option<usize>,
    /// Set when a prompt set had no EOS-terminated completion.
    pub flagged: bool,
}

/// Whether `seq` satisfies `rule`; reserved tokens inside the sequence fail.
fn holds(lang: Language, rule: Rule, seq: &[Token]) -> bool {
    check_rule(lang, rule, seq).unwrap_or(false)
}

/// Prompt body followed by the completion without its EOS.
fn joined(prompt: &[Token], completion: &[Token]) -> Vec<Token> {
    let mut whole = prompt.get(1..).unwrap_or_default().to_vec();
    whole.extend_from_slice(&completion[..completion.len() - 1]);
    whole
}

/// Score one completion: `None` unless it ends with EOS, else the pair of
/// rule verdicts (R1 on the whole sequence, R2 whole or lenient).
pub fn judge(lang: Language, prompt: &[Token], completion: &[Token], ood: bool) -> Option<(bool, bool)> {
    if completion.last() != Some(&Token::EOS) {
        return None;
    }
    let whole = joined(prompt, completion);
    let r1 = holds(lang, Rule::R1, &whole);
    let r2 = if ood {
        check_rule_on_completion(lang, Rule::R2, prompt, completion).unwrap_or(false)
    } else {
        holds(lang, Rule::R2, &whole)
    };
    Some((r1, r2))
}

/// Held-out words for the test loss: the full list for enumerated
/// languages, otherwise [`TEST_WORDS`] fresh samples.
pub fn test_sequences(lang: Language, max_len: usize, seed: u64) -> Result<Vec<Vec<Token>>> {
    let size = if is_enumerated(lang) { 1 } else { TEST_WORDS };
    Ok(build_training_set(lang, size, max_len, derive_seed(seed, "eval.test_words"))?.sequences())
}

pub fn check_vocab(model: &ArModel, lang: Language) -> Result<()> {
    if model.vocab_size() != lang.vocab_size() {
        return Err(Error::Shape(format!(
            "model vocabulary {} does not match {lang} ({})",
            model.vocab_size(),
            lang.vocab_size()
        )));
    }
    Ok(())
}

/// Decode every prompt and score rule accuracies. The test loss counts PAD
/// targets and uses batches of 128 in the given order.
pub fn evaluate(
    model: &ArModel,
    prompts: &PromptSet,
    decoding: Decoding,
    cutoff: usize,
    test_seqs: Option<&[Vec<Token>]>,
) -> Result<EvalReport> {
    let lang = prompts.language;
    check_vocab(model, lang)?;
    let mut rng = match decoding {
        Decoding::Sample { seed, .. } => Some(ChaCha8Rng::seed_from_u64(seed)),
        Decoding::Greedy => None,
    };
    let mut acc = Accuracies::default();
    let mut terminated = [0usize; 2];
    for (ood, set, metrics) in [
        (false, &prompts.id, [Metric::IdR1, Metric::IdR2]),
        (true, &prompts.ood, [Metric::OodR1, Metric::OodR2Completion]),
    ] {
        let mut hits = [0usize; 2];
        let mut n = 0;
        for p in set {
            let completion = match (&decoding, rng.as_mut()) {
                (Decoding::Sample { temperature, .. }, Some(r)) => {
                    decode_sample(model, p, cutoff, *temperature, r)?
                }
                _ => decode_greedy(model, p, cutoff)?,
            };
            if let Some((r1, r2)) = judge(lang, p, &completion, ood) {
                n += 1;
                hits[0] += r1 as usize;
                hits[1] += r2 as usize;
            }
        }
        terminated[ood as usize] = n;
        for (m, h) in metrics.into_iter().zip(hits) {
            *acc.slot(m) = (n > 0).then(|| h as f64 / n as f64);
        }
    }
    let test_loss = match test_seqs {
        Some(seqs) if !seqs.is_empty() => Some(mean_loss(model, seqs, 128, false)?.mean()),
        _ => None,
    };
    Ok(EvalReport {
        language: lang,
        model: model.architecture().to_string(),
        decoding,
        accuracies: acc,
        id_terminated: terminated[0],
        ood_terminated: terminated[1],
        id_prompts: prompts.id.len(),
        ood_prompts: prompts.ood.len(),
        test_loss,
        epoch: None,
        flagged: (terminated[0] == 0 && !prompts.id.is_empty())
            || (terminated[1] == 0 && !prompts.ood.is_empty()),
    })
}

/// Best value of every metric over a trace, each chosen independently.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BestSummary {
    pub test_loss: Option<f64>,
    #[serde(flatten)]
    pub accuracies: Accuracies,
}

pub fn aggregate_best(trace: &TrainTrace) -> Result<BestSummary> {
    if trace.records.is_empty() {
        return Err(Error::Contract("cannot summarize an empty trace".into()));
    }
    let mut best = BestSummary::default();
    for r in &trace.records {
        if let Some(l) = r.test_loss {
            best.test_loss = Some(best.test_loss.map_or(l, |b: f64| b.min(l)));
        }
        if let Some(a) = &r.accuracies {
            for m in Metric::ALL {
                if let Some(v) = a.get(m) {
                    let slot = best.accuracies.slot(m);
                    *slot = Some(slot.map_or(v, |b| b.max(v)));
                }
            }
        }
    }
    Ok(best)
}

/// Display helper: the completion as surface text with `$` for EOS.
pub fn render_completion(lang: Language, completion: &[Token]) -> String {
    crate::data::render(completion, lang)
}

/// Completed sequence `prompt ++ completion` without SOS, for display.
pub fn render_whole(lang: Language, prompt: &[Token], completion: &[Token]) -> String {
    let mut s = crate::data::render(token::strip_specials(prompt), lang);
    s.push('|');
    s.push_str(&render_completion(lang, completion));
    s
}

#[cfg(test)]
mod tests;
