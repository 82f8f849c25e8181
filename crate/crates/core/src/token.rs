use std::fmt;

use serde::{Deserialize, Serialize};

/// Integer token id shared by every language and model.
///
/// Ids 0, 1 and 2 are reserved for start-of-sequence, end-of-sequence and
/// padding. Letter languages use `a = 3`, `b = 4`, `c = 5`; bracket languages
/// use `( = 3`, `) = 4`, `[ = 5`, `] = 6`.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Token(pub u8);

impl Token {
    pub const SOS: Token = Token(0);
    pub const EOS: Token = Token(1);
    pub const PAD: Token = Token(2);

    pub const A: Token = Token(3);
    pub const B: Token = Token(4);
    pub const C: Token = Token(5);

    pub const OPEN_PAREN: Token = Token(3);
    pub const CLOSE_PAREN: Token = Token(4);
    pub const OPEN_BRACKET: Token = Token(5);
    pub const CLOSE_BRACKET: Token = Token(6);

    pub fn id(self) -> usize {
        self.0 as usize
    }

    pub fn is_special(self) -> bool {
        self.0 <= 2
    }
}

impl fmt::Debug for Token {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Token::SOS => write!(f, "SOS"),
            Token::EOS => write!(f, "EOS"),
            Token::PAD => write!(f, "PAD"),
            Token(id) => write!(f, "T{id}"),
        }
    }
}

/// Prefix `word` with SOS.
pub fn prompt_of(word: &[Token]) -> Vec<Token> {
    let mut out = Vec::with_capacity(word.len() + 1);
    out.push(Token::SOS);
    out.extend_from_slice(word);
    out
}

/// Wrap a raw word as `SOS word EOS`.
pub fn completed(word: &[Token]) -> Vec<Token> {
    let mut out = prompt_of(word);
    out.push(Token::EOS);
    out
}

/// Strip one leading SOS and everything from the first EOS on.
pub fn strip_specials(seq: &[Token]) -> &[Token] {
    let seq = match seq.first() {
        Some(&Token::SOS) => &seq[1..],
        _ => seq,
    };
    match seq.iter().position(|&t| t == Token::EOS) {
        Some(i) => &seq[..i],
        None => seq,
    }
}
