//! The six two-rule languages.
//!
//! Every language is the intersection of two decidable rules (plus a
//! nonemptiness side condition for `L1`, `L2`, `L3` and `L5`). Each rule is
//! implemented as a small deterministic automaton over tokens so the same
//! object serves the recognizer, the lenient completion checks and the
//! dynamic-programming chance oracles.

mod enumerate;
mod sample;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::token::Token;

pub use enumerate::{enumerate_words, min_completion, ENUMERATION_LIMIT};
pub use sample::{sample_word, shortest_word_len};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Language {
    L1,
    L2,
    L3,
    L4,
    L5,
    L6,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Category {
    Regular,
    ContextFree,
    ContextSensitive,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Rule {
    R1,
    R2,
}

const LETTERS_AB: [Token; 2] = [Token::A, Token::B];
const LETTERS_ABC: [Token; 3] = [Token::A, Token::B, Token::C];
const BRACKETS: [Token; 4] = [
    Token::OPEN_PAREN,
    Token::CLOSE_PAREN,
    Token::OPEN_BRACKET,
    Token::CLOSE_BRACKET,
];

impl Language {
    pub const ALL: [Language; 6] = [
        Language::L1,
        Language::L2,
        Language::L3,
        Language::L4,
        Language::L5,
        Language::L6,
    ];

    pub fn category(self) -> Category {
        match self {
            Language::L1 | Language::L2 => Category::Regular,
            Language::L3 | Language::L4 => Category::ContextFree,
            Language::L5 | Language::L6 => Category::ContextSensitive,
        }
    }

    pub fn alphabet(self) -> &'static [Token] {
        match self {
            Language::L1 | Language::L2 | Language::L3 => &LETTERS_AB,
            Language::L5 => &LETTERS_ABC,
            Language::L4 | Language::L6 => &BRACKETS,
        }
    }

    pub fn is_dyck(self) -> bool {
        matches!(self, Language::L4 | Language::L6)
    }

    /// Model vocabulary size: the three reserved ids plus the alphabet.
    pub fn vocab_size(self) -> usize {
        3 + self.alphabet().len()
    }

    pub fn in_alphabet(self, t: Token) -> bool {
        self.alphabet().contains(&t)
    }

    pub fn surface_char(self, t: Token) -> Option<char> {
        let chars: &[char] = if self.is_dyck() {
            &['(', ')', '[', ']']
        } else {
            &['a', 'b', 'c']
        };
        if !self.in_alphabet(t) {
            return None;
        }
        chars.get(t.id() - 3).copied()
    }

    pub fn token_of(self, ch: char) -> Option<Token> {
        let t = match (self.is_dyck(), ch) {
            (false, 'a') => Token::A,
            (false, 'b') => Token::B,
            (false, 'c') => Token::C,
            (true, '(') => Token::OPEN_PAREN,
            (true, ')') => Token::CLOSE_PAREN,
            (true, '[') => Token::OPEN_BRACKET,
            (true, ']') => Token::CLOSE_BRACKET,
            _ => return None,
        };
        self.in_alphabet(t).then_some(t)
    }

    /// Side condition beyond the two rules: letter languages exclude the empty
    /// word, and `L2` needs at least one `b` (`aa` satisfies both rules).
    fn side_condition(self, seq: &[Token]) -> bool {
        match self {
            Language::L4 | Language::L6 => true,
            Language::L2 => seq.first() == Some(&Token::B),
            _ => !seq.is_empty(),
        }
    }

    pub fn automaton(self, rule: Rule) -> RuleAutomaton {
        use RuleKind::*;
        let kind = match (self, rule) {
            (Language::L1, Rule::R1) | (Language::L2, Rule::R1) => EvenA,
            (Language::L1, Rule::R2) => StartsWithB,
            (Language::L2, Rule::R2) => NoBAfterA,
            (Language::L3, Rule::R1) => EqualAb,
            (Language::L3, Rule::R2) => NoAAfterB,
            (Language::L4, Rule::R1) => Nested(Token::OPEN_BRACKET, Token::CLOSE_BRACKET),
            (Language::L4, Rule::R2) => Nested(Token::OPEN_PAREN, Token::CLOSE_PAREN),
            (Language::L5, Rule::R1) => EqualAbc,
            (Language::L5, Rule::R2) => Sorted,
            (Language::L6, Rule::R1) => Paired(Token::OPEN_BRACKET, Token::CLOSE_BRACKET),
            (Language::L6, Rule::R2) => Paired(Token::OPEN_PAREN, Token::CLOSE_PAREN),
        };
        RuleAutomaton {
            language: self,
            kind,
        }
    }
}

impl fmt::Display for Language {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

impl FromStr for Language {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Language::ALL
            .into_iter()
            .find(|l| l.to_string().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::Domain(format!("unknown language id {s:?} (expected L1..L6)")))
    }
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum RuleKind {
    EvenA,
    StartsWithB,
    NoBAfterA,
    NoAAfterB,
    EqualAb,
    EqualAbc,
    Sorted,
    /// One bracket type must form a Dyck word; other tokens are transparent.
    Paired(Token, Token),
    /// Single stack over both bracket types. Any closer matching the top pops
    /// it. A closer of the tracked type that does not match the top is fatal; a mismatched closer of the other type
    /// is skipped. Accepts when no opener of the tracked type remains.
    Nested(Token, Token),
}

/// Run state of a rule automaton. `Dead` is absorbing and never accepts.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum RuleState {
    Dead,
    Phase(u8),
    Count(i64),
    Count2(i64, i64),
    Depth(u64),
    Stack(Vec<Token>),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RuleAutomaton {
    language: Language,
    kind: RuleKind,
}

impl RuleAutomaton {
    pub fn language(&self) -> Language {
        self.language
    }

    pub fn start(&self) -> RuleState {
        use RuleKind::*;
        match self.kind {
            EvenA | StartsWithB | NoBAfterA | NoAAfterB | Sorted => RuleState::Phase(0),
            EqualAb => RuleState::Count(0),
            EqualAbc => RuleState::Count2(0, 0),
            Paired(..) => RuleState::Depth(0),
            Nested(..) => RuleState::Stack(Vec::new()),
        }
    }

    /// Advance by one token. Tokens outside the alphabet kill the run.
    pub fn step(&self, state: &RuleState, t: Token) -> RuleState {
        use RuleKind::*;
        use RuleState::*;
        if *state == Dead || !self.language.in_alphabet(t) {
            return Dead;
        }
        match (self.kind, state) {
            (EvenA, Phase(p)) => Phase(if t == Token::A { p ^ 1 } else { *p }),
            (StartsWithB, Phase(0)) => {
                if t == Token::B {
                    Phase(1)
                } else {
                    Dead
                }
            }
            (StartsWithB, Phase(p)) => Phase(*p),
            (NoBAfterA, Phase(p)) => match (t, p) {
                (Token::A, _) => Phase(1),
                (_, 1) => Dead,
                _ => Phase(0),
            },
            (NoAAfterB, Phase(p)) => match (t, p) {
                (Token::B, _) => Phase(1),
                (_, 1) => Dead,
                _ => Phase(0),
            },
            (EqualAb, Count(d)) => Count(if t == Token::A { d + 1 } else { d - 1 }),
            (EqualAbc, Count2(x, y)) => match t {
                Token::A => Count2(x + 1, *y),
                Token::B => Count2(x - 1, y + 1),
                _ => Count2(*x, y - 1),
            },
            (Sorted, Phase(p)) => {
                let rank = t.0 - Token::A.0;
                if rank < *p {
                    Dead
                } else {
                    Phase(rank)
                }
            }
            (Paired(open, close), Depth(d)) => {
                if t == open {
                    Depth(d + 1)
                } else if t == close {
                    if *d == 0 {
                        Dead
                    } else {
                        Depth(d - 1)
                    }
                } else {
                    Depth(*d)
                }
            }
            (Nested(open, close), Stack(stack)) => {
                let mut stack = stack.clone();
                if t == Token::OPEN_PAREN || t == Token::OPEN_BRACKET {
                    stack.push(t);
                    return Stack(stack);
                }
                let matching = if t == Token::CLOSE_PAREN {
                    Token::OPEN_PAREN
                } else {
                    Token::OPEN_BRACKET
                };
                if stack.last() == Some(&matching) {
                    stack.pop();
                    Stack(stack)
                } else if t == close {
                    Dead
                } else {
                    debug_assert!(open != matching);
                    Stack(stack)
                }
            }
            (kind, state) => unreachable!("state {state:?} does not belong to rule {kind:?}"),
        }
    }

    pub fn accepts(&self, state: &RuleState) -> bool {
        use RuleKind::*;
        use RuleState::*;
        match (self.kind, state) {
            (_, Dead) => false,
            (EvenA, Phase(p)) => *p == 0,
            (StartsWithB, Phase(p)) => *p == 1,
            (NoBAfterA | NoAAfterB | Sorted, Phase(_)) => true,
            (EqualAb, Count(d)) => *d == 0,
            (EqualAbc, Count2(x, y)) => *x == 0 && *y == 0,
            (Paired(..), Depth(d)) => *d == 0,
            (Nested(open, _), Stack(stack)) => !stack.contains(&open),
            _ => false,
        }
    }

    pub fn run<'a>(&self, seq: impl IntoIterator<Item = &'a Token>) -> RuleState {
        seq.into_iter()
            .fold(self.start(), |state, &t| self.step(&state, t))
    }

    pub fn run_from<'a>(
        &self,
        state: RuleState,
        seq: impl IntoIterator<Item = &'a Token>,
    ) -> RuleState {
        seq.into_iter().fold(state, |state, &t| self.step(&state, t))
    }

    /// Whether the automaton has a finite state space bounded by the counter
    /// range (everything except the nested-stack rule).
    pub fn is_counter_bounded(&self) -> bool {
        !matches!(self.kind, RuleKind::Nested(..))
    }
}

fn check_alphabet(lang: Language, seq: &[Token]) -> Result<()> {
    match seq.iter().find(|t| !lang.in_alphabet(**t)) {
        Some(t) => Err(Error::Domain(format!(
            "token {t:?} is not in the alphabet of {lang}"
        ))),
        None => Ok(()),
    }
}

/// Whether the whole raw sequence satisfies `rule` of `lang`.
pub fn check_rule(lang: Language, rule: Rule, seq: &[Token]) -> Result<bool> {
    check_alphabet(lang, seq)?;
    let automaton = lang.automaton(rule);
    Ok(automaton.accepts(&automaton.run(seq)))
}

/// Membership: both rules plus the nonemptiness condition.
pub fn in_language(lang: Language, seq: &[Token]) -> Result<bool> {
    check_alphabet(lang, seq)?;
    Ok(lang.side_condition(seq) && check_rule(lang, Rule::R1, seq)? && check_rule(lang, Rule::R2, seq)?)
}

/// Total variant of [`in_language`]: foreign tokens simply make it false.
pub fn is_member(lang: Language, seq: &[Token]) -> bool {
    in_language(lang, seq).unwrap_or(false)
}

/// The part of `prompt ++ completion` on which the violated rule is judged
/// leniently: the completion alone for letter languages, everything after the
/// leading `)` for the bracket languages.
pub fn completion_window(lang: Language, prompt: &[Token], completion: &[Token]) -> Vec<Token> {
    let prompt = crate::token::strip_specials(prompt);
    let completion = crate::token::strip_specials(completion);
    if lang.is_dyck() {
        let mut window = prompt.get(1..).unwrap_or_default().to_vec();
        window.extend_from_slice(completion);
        window
    } else {
        completion.to_vec()
    }
}

/// Lenient R2 check used for out-of-distribution prompts. `prompt` may carry
/// a leading SOS and `completion` a trailing EOS; both are stripped.
pub fn check_rule_on_completion(
    lang: Language,
    rule: Rule,
    prompt: &[Token],
    completion: &[Token],
) -> Result<bool> {
    if rule != Rule::R2 {
        return Err(Error::Contract(
            "R1 is always evaluated on the whole sequence".into(),
        ));
    }
    check_rule(lang, rule, &completion_window(lang, prompt, completion))
}
