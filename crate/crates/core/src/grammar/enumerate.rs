use super::{Language, Rule};
use crate::error::{Error, Result};
use crate::token::Token;

/// Upper bound on search nodes visited by [`enumerate_words`].
pub const ENUMERATION_LIMIT: usize = 1 << 22;

/// Fewest symbols that must be appended to `prefix` to obtain a member of
/// `lang` (nonempty where the language requires it), or `None` if no
/// extension exists. Tokens outside the alphabet make the prefix dead.
pub fn min_completion(lang: Language, prefix: &[Token]) -> Option<usize> {
    if prefix.iter().any(|t| !lang.in_alphabet(*t)) {
        return None;
    }
    let count = |t: Token| prefix.iter().filter(|&&x| x == t).count();
    match lang {
        Language::L1 => match prefix.first() {
            None => Some(1),
            Some(&Token::B) => Some(count(Token::A) % 2),
            Some(_) => None,
        },
        Language::L2 => {
            let auto = lang.automaton(Rule::R2);
            if auto.accepts(&auto.run(prefix)) == false {
                return None;
            }
            match prefix.first() {
                None => Some(1),
                Some(&Token::B) => Some(count(Token::A) % 2),
                Some(_) => None,
            }
        }
        Language::L3 => {
            let auto = lang.automaton(Rule::R2);
            if !auto.accepts(&auto.run(prefix)) {
                return None;
            }
            let (a, b) = (count(Token::A), count(Token::B));
            match (a, b) {
                (0, 0) => Some(2),
                _ if b <= a => Some(a - b),
                _ => None,
            }
        }
        Language::L5 => {
            let auto = lang.automaton(Rule::R2);
            if !auto.accepts(&auto.run(prefix)) {
                return None;
            }
            let (a, b, c) = (count(Token::A), count(Token::B), count(Token::C));
            if prefix.is_empty() {
                return Some(3);
            }
            if a == 0 || b > a || c > a || (c > 0 && b != a) {
                return None;
            }
            Some((a - b) + (a - c))
        }
        Language::L4 => {
            let mut stack = Vec::new();
            for &t in prefix {
                match t {
                    Token::OPEN_PAREN | Token::OPEN_BRACKET => stack.push(t),
                    _ => {
                        let open = if t == Token::CLOSE_PAREN {
                            Token::OPEN_PAREN
                        } else {
                            Token::OPEN_BRACKET
                        };
                        if stack.pop() != Some(open) {
                            return None;
                        }
                    }
                }
            }
            Some(stack.len())
        }
        Language::L6 => {
            let (mut paren, mut bracket) = (0usize, 0usize);
            for &t in prefix {
                let (depth, delta) = match t {
                    Token::OPEN_PAREN => (&mut paren, 1i8),
                    Token::CLOSE_PAREN => (&mut paren, -1),
                    Token::OPEN_BRACKET => (&mut bracket, 1),
                    _ => (&mut bracket, -1),
                };
                if delta < 0 {
                    *depth = depth.checked_sub(1)?;
                } else {
                    *depth += 1;
                }
            }
            Some(paren + bracket)
        }
    }
}

/// All members of `lang` with length at most `max_len`, ordered by length and
/// then lexicographically by token id. The empty word is included for the
/// bracket languages.
pub fn enumerate_words(lang: Language, max_len: usize) -> Result<Vec<Vec<Token>>> {
    let mut out = Vec::new();
    let mut visited = 0usize;
    let mut prefix = Vec::new();
    dfs(lang, max_len, &mut prefix, &mut out, &mut visited)?;
    out.sort_by(|x, y| x.len().cmp(&y.len()).then_with(|| x.cmp(y)));
    Ok(out)
}

fn dfs(
    lang: Language,
    max_len: usize,
    prefix: &mut Vec<Token>,
    out: &mut Vec<Vec<Token>>,
    visited: &mut usize,
) -> Result<()> {
    *visited += 1;
    if *visited > ENUMERATION_LIMIT {
        return Err(Error::Resource(format!(
            "enumerating {lang} up to length {max_len} exceeds {ENUMERATION_LIMIT} search nodes"
        )));
    }
    match min_completion(lang, prefix) {
        Some(extra) if prefix.len() + extra <= max_len => {
            if extra == 0 && (lang.is_dyck() || !prefix.is_empty()) {
                out.push(prefix.clone());
            }
        }
        _ => return Ok(()),
    }
    if prefix.len() == max_len {
        return Ok(());
    }
    for &t in lang.alphabet() {
        prefix.push(t);
        dfs(lang, max_len, prefix, out, visited)?;
        prefix.pop();
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grammar::is_member;

    fn all_strings(lang: Language, len: usize) -> Vec<Vec<Token>> {
        let mut acc = vec![Vec::new()];
        for _ in 0..len {
            acc = acc
                .into_iter()
                .flat_map(|w| {
                    lang.alphabet().iter().map(move |&t| {
                        let mut w = w.clone();
                        w.push(t);
                        w
                    })
                })
                .collect();
        }
        acc
    }

    #[test]
    fn enumerated_counts() {
        assert_eq!(enumerate_words(Language::L3, 256).unwrap().len(), 128);
        assert_eq!(enumerate_words(Language::L5, 256).unwrap().len(), 85);
        let l3: Vec<_> = enumerate_words(Language::L3, 4).unwrap();
        assert_eq!(l3, vec![vec![Token::A, Token::B], vec![Token::A, Token::A, Token::B, Token::B]]);
    }

    #[test]
    fn min_completion_agrees_with_bounded_search() {
        for lang in Language::ALL {
            let members: Vec<_> = (0..=9).flat_map(|n| all_strings(lang, n))
                .filter(|w| is_member(lang, w))
                .collect();
            let max_prefix = if lang.alphabet().len() > 2 { 4 } else { 5 };
            for n in 0..=max_prefix {
                for p in all_strings(lang, n) {
                    let best = members
                        .iter()
                        .filter(|m| m.starts_with(&p))
                        .map(|m| m.len() - p.len())
                        .min();
                    let got = min_completion(lang, &p);
                    match got {
                        Some(e) if p.len() + e <= 9 => assert_eq!(Some(e), best, "{lang} {p:?}"),
                        Some(_) => {}
                        None => assert_eq!(best, None, "{lang} {p:?}"),
                    }
                }
            }
        }
    }

    #[test]
    fn enumeration_matches_filter_over_all_strings() {
        for lang in Language::ALL {
            let max_len = if lang.alphabet().len() > 2 { 6 } else { 9 };
            let expected: Vec<_> = (0..=max_len)
                .flat_map(|n| all_strings(lang, n))
                .filter(|w| is_member(lang, w))
                .collect();
            assert_eq!(enumerate_words(lang, max_len).unwrap(), expected, "{lang}");
        }
    }

    #[test]
    fn blowup_guard() {
        assert!(matches!(enumerate_words(Language::L6, 40), Err(Error::Resource(_))));
    }
}
