//! WebAssembly bindings for the static demo page in `www/`.
//!
//! Each exported function has a plain Rust counterpart returning
//! `Result<_, String>` so the logic is testable off the browser.

use serde::Serialize;
use wasm_bindgen::prelude::*;

use rulex::data::{decode, encode};
use rulex::eval::{chance, default_method, judge, Metric, Support};
use rulex::grammar::{check_rule, in_language, min_completion};
use rulex::normative::{catalogue_for, Completion, Mixture, PretrainSet};
use rulex::token::{prompt_of, Token};
use rulex::{Language, Rule};

/// Monte Carlo episodes for L4, which has no exact route.
const MC_EPISODES: u64 = 20_000;
const CUTOFF_LIMIT: usize = 400;

#[derive(Serialize)]
pub struct Membership {
    pub member: bool,
    pub r1: bool,
    pub r2: bool,
    /// Fewest symbols to append to reach a member, if any.
    pub min_completion: Option<usize>,
}

pub fn membership_of(lang: &str, word: &str) -> Result<Membership, String> {
    let lang: Language = lang.parse().map_err(|e: rulex::Error| e.to_string())?;
    let seq = encode(word.trim(), lang).map_err(|e| e.to_string())?;
    let rule = |r| check_rule(lang, r, &seq).map_err(|e| e.to_string());
    Ok(Membership {
        member: in_language(lang, &seq).map_err(|e| e.to_string())?,
        r1: rule(Rule::R1)?,
        r2: rule(Rule::R2)?,
        min_completion: min_completion(lang, &seq),
    })
}

pub fn chance_of(lang: &str, metric: &str, cutoff: usize) -> Result<f64, String> {
    let lang: Language = lang.parse().map_err(|e: rulex::Error| e.to_string())?;
    let metric: Metric = metric.parse().map_err(|e: rulex::Error| e.to_string())?;
    if cutoff > CUTOFF_LIMIT {
        return Err(format!("cutoff {cutoff} is above the demo limit {CUTOFF_LIMIT}"));
    }
    chance(lang, metric, Support::LettersEos, cutoff, default_method(lang, MC_EPISODES, 0))
        .map(|row| row.value)
        .map_err(|e| e.to_string())
}

#[derive(Serialize)]
pub struct MixtureCompletion {
    pub masses: Vec<(String, f64)>,
    pub completion: String,
    /// `None` when the completion hit the cutoff without EOS.
    pub r1: Option<bool>,
    pub r2_completion: Option<bool>,
}

/// Fit the L3 mixture on `a^k b^k` for `k = 1..=words`, then complete
/// `prompt` greedily.
pub fn mixture_completion(prompt: &str, words: usize) -> Result<MixtureCompletion, String> {
    let lang = Language::L3;
    let data: Vec<Vec<Token>> = (1..=words.min(128))
        .map(|k| [vec![Token::A; k], vec![Token::B; k]].concat())
        .collect();
    let cat = catalogue_for(lang).map_err(|e| e.to_string())?;
    let mix = Mixture::fit(cat, &PretrainSet::from_words(&data)).map_err(|e| e.to_string())?;
    let p = prompt_of(&encode(prompt.trim(), lang).map_err(|e| e.to_string())?);
    let c = mix.complete(&p, 300, Completion::Greedy).map_err(|e| e.to_string())?;
    let verdict = judge(lang, &p, &c, true);
    let letters: Vec<Token> = c.iter().copied().filter(|t| !t.is_special()).collect();
    let mut completion = decode(&letters, lang).map_err(|e| e.to_string())?;
    if c.last() == Some(&Token::EOS) {
        completion.push('$');
    }
    Ok(MixtureCompletion {
        masses: mix
            .catalogue
            .iter()
            .zip(mix.posterior.weights())
            .map(|(m, w)| (m.id.clone(), w))
            .collect(),
        completion,
        r1: verdict.map(|v| v.0),
        r2_completion: verdict.map(|v| v.1),
    })
}

fn to_js<T: Serialize>(r: Result<T, String>) -> Result<String, JsError> {
    let v = r.map_err(|e| JsError::new(&e))?;
    serde_json::to_string(&v).map_err(|e| JsError::new(&e.to_string()))
}

/// JSON `{member, r1, r2, min_completion}`.
#[wasm_bindgen]
pub fn membership(lang: &str, word: &str) -> Result<String, JsError> {
    to_js(membership_of(lang, word))
}

#[wasm_bindgen]
pub fn chance_level(lang: &str, metric: &str, cutoff: usize) -> Result<f64, JsError> {
    chance_of(lang, metric, cutoff).map_err(|e| JsError::new(&e))
}

/// JSON `{masses, completion, r1, r2_completion}`.
#[wasm_bindgen]
pub fn complete_l3(prompt: &str, words: usize) -> Result<String, JsError> {
    to_js(mixture_completion(prompt, words))
}
