use rand::seq::index;
use rand::Rng;

use super::Language;
use crate::error::{Error, Result};
use crate::token::Token;

/// Shortest nonempty member of the language.
pub fn shortest_word_len(lang: Language) -> usize {
    match lang {
        Language::L1 | Language::L2 => 1,
        Language::L3 | Language::L4 | Language::L6 => 2,
        Language::L5 => 3,
    }
}

/// Draw a nonempty member of `lang` with length at most `max_len`.
///
/// The length is uniform over the feasible lengths and the word is uniform
/// among members of that length. For `L3` and `L5` there is exactly one word
/// per feasible length.
pub fn sample_word<R: Rng + ?Sized>(lang: Language, max_len: usize, rng: &mut R) -> Result<Vec<Token>> {
    if max_len < shortest_word_len(lang) {
        return Err(Error::Domain(format!(
            "max_len {max_len} is below the shortest word of {lang} ({})",
            shortest_word_len(lang)
        )));
    }
    Ok(match lang {
        Language::L1 => {
            let n = rng.gen_range(1..=max_len);
            let mut word = vec![Token::B];
            let mut odd = false;
            for _ in 1..n.saturating_sub(1) {
                let t = if rng.gen::<bool>() { Token::A } else { Token::B };
                odd ^= t == Token::A;
                word.push(t);
            }
            if n >= 2 {
                word.push(if odd { Token::A } else { Token::B });
            }
            word
        }
        Language::L2 => {
            let n = rng.gen_range(1..=max_len);
            let pairs = rng.gen_range(0..=(n - 1) / 2);
            let mut word = vec![Token::B; n - 2 * pairs];
            word.resize(n, Token::A);
            word
        }
        Language::L3 => {
            let n = rng.gen_range(1..=max_len / 2);
            [vec![Token::A; n], vec![Token::B; n]].concat()
        }
        Language::L5 => {
            let n = rng.gen_range(1..=max_len / 3);
            [vec![Token::A; n], vec![Token::B; n], vec![Token::C; n]].concat()
        }
        Language::L4 => {
            let pairs = rng.gen_range(1..=max_len / 2);
            let shape = dyck_shape(pairs, rng);
            let mut stack = Vec::new();
            shape
                .into_iter()
                .map(|open| {
                    if open {
                        let t = if rng.gen::<bool>() {
                            Token::OPEN_PAREN
                        } else {
                            Token::OPEN_BRACKET
                        };
                        stack.push(t);
                        t
                    } else {
                        closer_of(stack.pop().expect("dyck shape is balanced"))
                    }
                })
                .collect()
        }
        Language::L6 => {
            let pairs = rng.gen_range(1..=max_len / 2);
            let paren_pairs = sample_split(pairs, rng);
            let paren_slots = index::sample(rng, 2 * pairs, 2 * paren_pairs).into_vec();
            let mut is_paren = vec![false; 2 * pairs];
            for i in paren_slots {
                is_paren[i] = true;
            }
            let mut parens = dyck_shape(paren_pairs, rng).into_iter();
            let mut brackets = dyck_shape(pairs - paren_pairs, rng).into_iter();
            is_paren
                .into_iter()
                .map(|p| match (p, if p { parens.next() } else { brackets.next() }) {
                    (true, Some(true)) => Token::OPEN_PAREN,
                    (true, Some(false)) => Token::CLOSE_PAREN,
                    (false, Some(true)) => Token::OPEN_BRACKET,
                    (false, Some(false)) => Token::CLOSE_BRACKET,
                    (_, None) => unreachable!("slot counts match shape lengths"),
                })
                .collect()
        }
    })
}

fn closer_of(open: Token) -> Token {
    if open == Token::OPEN_PAREN {
        Token::CLOSE_PAREN
    } else {
        Token::CLOSE_BRACKET
    }
}

/// Uniform Dyck word with `pairs` pairs (`true` = opener), by the cycle lemma:
/// among the rotations of a shuffled sequence of `pairs` up-steps and
/// `pairs + 1` down-steps exactly one has all proper prefixes nonnegative.
fn dyck_shape<R: Rng + ?Sized>(pairs: usize, rng: &mut R) -> Vec<bool> {
    let n = 2 * pairs + 1;
    let ups = index::sample(rng, n, pairs);
    let mut steps = vec![false; n];
    for i in ups.iter() {
        steps[i] = true;
    }
    // Rotation starts right after the first position of the minimum prefix sum.
    let (mut height, mut min, mut argmin) = (0i64, 0i64, n - 1);
    for (i, &up) in steps.iter().enumerate() {
        height += if up { 1 } else { -1 };
        if height < min {
            min = height;
            argmin = i;
        }
    }
    let start = (argmin + 1) % n;
    let mut word: Vec<bool> = steps[start..].iter().chain(&steps[..start]).copied().collect();
    word.pop();
    word
}

fn ln_factorial(n: usize) -> f64 {
    (2..=n).map(|k| (k as f64).ln()).sum()
}

fn ln_catalan(k: usize) -> f64 {
    ln_factorial(2 * k) - ln_factorial(k + 1) - ln_factorial(k)
}

/// Number of parenthesis pairs in a uniform paired-but-not-nested word with
/// `pairs` pairs in total: weight of `j` is C(2k, 2j) Cat(j) Cat(k - j).
fn sample_split<R: Rng + ?Sized>(pairs: usize, rng: &mut R) -> usize {
    let logw: Vec<f64> = (0..=pairs)
        .map(|j| {
            ln_factorial(2 * pairs) - ln_factorial(2 * j) - ln_factorial(2 * (pairs - j))
                + ln_catalan(j)
                + ln_catalan(pairs - j)
        })
        .collect();
    let top = logw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = logw.iter().map(|l| (l - top).exp()).collect();
    let mut u = rng.gen::<f64>() * w.iter().sum::<f64>();
    for (j, wj) in w.iter().enumerate() {
        if u < *wj {
            return j;
        }
        u -= wj;
    }
    pairs
}
