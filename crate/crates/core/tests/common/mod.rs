//! String-level recognizers written independently of the automata.

#![allow(dead_code)]

use rulex::data::{decode, encode};
use rulex::grammar::{check_rule, in_language};
use rulex::{Language, Rule};

pub fn all_strings(alphabet: &[char], max_len: usize) -> Vec<String> {
    let mut out = vec![String::new()];
    let mut layer = vec![String::new()];
    for _ in 0..max_len {
        let mut next = Vec::with_capacity(layer.len() * alphabet.len());
        for s in &layer {
            for &c in alphabet {
                let mut t = s.clone();
                t.push(c);
                next.push(t);
            }
        }
        out.extend(next.iter().cloned());
        layer = next;
    }
    out
}

pub fn count(s: &str, c: char) -> usize {
    s.chars().filter(|&x| x == c).count()
}

pub fn sorted(s: &str) -> bool {
    s.as_bytes().windows(2).all(|w| w[0] <= w[1])
}

/// Balanced with every prefix holding at least as many openers as closers.
pub fn dyck_one(s: &str, open: char, close: char) -> bool {
    let mut depth = 0i64;
    for c in s.chars() {
        if c == open {
            depth += 1;
        } else if c == close {
            depth -= 1;
            if depth < 0 {
                return false;
            }
        }
    }
    depth == 0
}

/// Repeatedly erase adjacent matched pairs.
pub fn reduces_to_empty(s: &str) -> bool {
    let mut cur = s.to_string();
    loop {
        let next = cur.replace("()", "").replace("[]", "");
        if next == cur {
            return cur.is_empty();
        }
        cur = next;
    }
}

/// One bracket type read through a single stack of both types: a closer
/// pops a matching opener, a mismatched closer of the tracked type is fatal
/// and one of the other type is ignored. No tracked opener may remain.
pub fn tracked_pairs_close(s: &str, open: char, close: char) -> bool {
    let mut stack = Vec::new();
    for c in s.chars() {
        let want = match c {
            '(' | '[' => {
                stack.push(c);
                continue;
            }
            ')' => '(',
            _ => '[',
        };
        if stack.last() == Some(&want) {
            stack.pop();
        } else if c == close {
            return false;
        }
    }
    !stack.contains(&open)
}

pub fn oracle(lang: Language, rule: Rule, s: &str) -> bool {
    match (lang, rule) {
        (Language::L1 | Language::L2, Rule::R1) => count(s, 'a') % 2 == 0,
        (Language::L1, Rule::R2) => s.starts_with('b'),
        (Language::L2, Rule::R2) => !s.contains("ab"),
        (Language::L3, Rule::R1) => count(s, 'a') == count(s, 'b'),
        (Language::L3, Rule::R2) => !s.contains("ba"),
        (Language::L5, Rule::R1) => count(s, 'a') == count(s, 'b') && count(s, 'b') == count(s, 'c'),
        (Language::L5, Rule::R2) => sorted(s),
        (Language::L6, Rule::R1) => dyck_one(s, '[', ']'),
        (Language::L6, Rule::R2) => dyck_one(s, '(', ')'),
        (Language::L4, Rule::R1) => tracked_pairs_close(s, '[', ']'),
        (Language::L4, Rule::R2) => tracked_pairs_close(s, '(', ')'),
    }
}

pub fn member_oracle(lang: Language, s: &str) -> bool {
    match lang {
        Language::L1 => oracle(lang, Rule::R1, s) && oracle(lang, Rule::R2, s),
        Language::L2 => s.starts_with('b') && oracle(lang, Rule::R1, s) && oracle(lang, Rule::R2, s),
        Language::L3 | Language::L5 => !s.is_empty() && oracle(lang, Rule::R1, s) && oracle(lang, Rule::R2, s),
        Language::L4 => reduces_to_empty(s),
        Language::L6 => oracle(lang, Rule::R1, s) && oracle(lang, Rule::R2, s),
    }
}

pub fn alphabet(lang: Language) -> Vec<char> {
    match lang {
        Language::L5 => vec!['a', 'b', 'c'],
        Language::L4 | Language::L6 => vec!['(', ')', '[', ']'],
        _ => vec!['a', 'b'],
    }
}

/// Shortest completion by breadth-first search over appended strings.
pub fn shortest_completion(lang: Language, prefix: &str, limit: usize) -> Option<usize> {
    let al = alphabet(lang);
    let mut layer = vec![prefix.to_string()];
    for extra in 0..=limit {
        if layer.iter().any(|s| member_oracle(lang, s)) {
            return Some(extra);
        }
        layer = layer
            .iter()
            .flat_map(|s| {
                al.iter().map(move |&c| {
                    let mut t = s.clone();
                    t.push(c);
                    t
                })
            })
            .collect();
    }
    None
}

/// Compare predicates and membership against the oracles on every string up
/// to `max_len`; returns the number of strings checked.
pub fn compare_with_oracles(lang: Language, max_len: usize) -> Result<usize, String> {
    let mut checked = 0usize;
    for s in all_strings(&alphabet(lang), max_len) {
        let seq = encode(&s, lang).map_err(|e| e.to_string())?;
        if decode(&seq, lang).map_err(|e| e.to_string())? != s {
            return Err(format!("{lang}: codec round trip failed on {s:?}"));
        }
        for rule in [Rule::R1, Rule::R2] {
            let got = check_rule(lang, rule, &seq).map_err(|e| e.to_string())?;
            if got != oracle(lang, rule, &s) {
                return Err(format!("{lang} {rule} disagrees on {s:?}"));
            }
        }
        if in_language(lang, &seq).map_err(|e| e.to_string())? != member_oracle(lang, &s) {
            return Err(format!("{lang} membership disagrees on {s:?}"));
        }
        checked += 1;
    }
    Ok(checked)
}
