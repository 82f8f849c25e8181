//! Training corpora, test-prompt sets and their text file formats.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grammar::{enumerate_words, in_language, min_completion, sample_word, Language};
use crate::token::{self, Token};

/// Length of the generated test prompts (before SOS) for letter languages.
pub const PROMPT_LEN: usize = 8;
/// Length of the test prompts for `L5`.
pub const PROMPT_LEN_L5: usize = 5;
/// Length of the valid body following the two-symbol Dyck prompt head.
pub const DYCK_BODY_LEN: usize = 6;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dataset {
    pub language: Language,
    /// Raw words (no SOS/EOS).
    pub words: Vec<Vec<Token>>,
    pub max_len: usize,
    pub seed: u64,
}

impl Dataset {
    /// Words as model sequences `SOS word EOS`.
    pub fn sequences(&self) -> Vec<Vec<Token>> {
        self.words.iter().map(|w| token::completed(w)).collect()
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }
}

/// Default corpus size for sampled languages. `L3` and `L5` are enumerated.
pub fn default_size(lang: Language) -> usize {
    match lang {
        Language::L1 | Language::L2 => 15_000,
        Language::L3 => 128,
        Language::L5 => 85,
        Language::L4 | Language::L6 => 512,
    }
}

pub fn is_enumerated(lang: Language) -> bool {
    matches!(lang, Language::L3 | Language::L5)
}

pub fn build_training_set(lang: Language, size: usize, max_len: usize, seed: u64) -> Result<Dataset> {
    if size == 0 {
        return Err(Error::Contract("training set size must be at least 1".into()));
    }
    let words = if is_enumerated(lang) {
        let words = enumerate_words(lang, max_len)?;
        if words.is_empty() {
            return Err(Error::Contract(format!(
                "{lang} has no words of length at most {max_len}"
            )));
        }
        words
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..size)
            .map(|_| sample_word(lang, max_len, &mut rng))
            .collect::<Result<_>>()?
    };
    Ok(Dataset {
        language: lang,
        words,
        max_len,
        seed,
    })
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptSet {
    pub language: Language,
    /// SOS-prefixed prompts that can be completed to a member.
    pub id: Vec<Vec<Token>>,
    /// SOS-prefixed prompts with no completion in the language.
    pub ood: Vec<Vec<Token>>,
    pub recipe: String,
}

fn all_strings(alphabet: &[Token], len: usize) -> Vec<Vec<Token>> {
    let mut acc = vec![Vec::new()];
    for _ in 0..len {
        acc = acc
            .into_iter()
            .flat_map(|w: Vec<Token>| {
                alphabet.iter().map(move |&t| {
                    let mut w = w.clone();
                    w.push(t);
                    w
                })
            })
            .collect();
    }
    acc
}

/// Build the ID/OOD prompt split. Every construction is an exhaustive
/// enumeration, so `seed` is recorded but does not influence the result.
pub fn build_test_prompts(lang: Language, _seed: u64) -> PromptSet {
    let (id, ood, recipe): (Vec<Vec<Token>>, Vec<Vec<Token>>, &str) = match lang {
        Language::L1 | Language::L3 | Language::L5 => {
            let len = if lang == Language::L5 { PROMPT_LEN_L5 } else { PROMPT_LEN };
            let (id, ood) = all_strings(lang.alphabet(), len)
                .into_iter()
                .partition(|p| min_completion(lang, p).is_some());
            (id, ood, "all strings of fixed length, split by completability")
        }
        Language::L2 => {
            let id: Vec<Vec<Token>> = (1..=PROMPT_LEN)
                .map(|i| {
                    let mut p = vec![Token::B; i];
                    p.resize(PROMPT_LEN, Token::A);
                    p
                })
                .collect();
            let ood = id.iter().map(|p| [&[Token::A][..], p].concat()).collect();
            (id, ood, "every b^i a^(8-i); OOD prepends a")
        }
        Language::L4 | Language::L6 => {
            let bodies: Vec<Vec<Token>> = enumerate_words(lang, DYCK_BODY_LEN)
                .expect("length-6 enumeration is tiny")
                .into_iter()
                .filter(|w| w.len() == DYCK_BODY_LEN)
                .collect();
            let with_head = |head: [Token; 2]| {
                bodies
                    .iter()
                    .map(|b| [&head[..], b].concat())
                    .collect::<Vec<_>>()
            };
            (
                with_head([Token::OPEN_PAREN, Token::OPEN_BRACKET]),
                with_head([Token::CLOSE_PAREN, Token::OPEN_BRACKET]),
                "all valid length-6 bodies behind ([ (ID) or )[ (OOD)",
            )
        }
    };
    PromptSet {
        language: lang,
        id: id.iter().map(|p| token::prompt_of(p)).collect(),
        ood: ood.iter().map(|p| token::prompt_of(p)).collect(),
        recipe: recipe.to_string(),
    }
}

/// Parse a surface string into raw tokens.
pub fn encode(s: &str, lang: Language) -> Result<Vec<Token>> {
    s.chars()
        .map(|c| {
            lang.token_of(c)
                .ok_or_else(|| Error::Domain(format!("character {c:?} is not in the alphabet of {lang}")))
        })
        .collect()
}

/// Render raw tokens as a surface string.
pub fn decode(seq: &[Token], lang: Language) -> Result<String> {
    seq.iter()
        .map(|&t| {
            lang.surface_char(t)
                .ok_or_else(|| Error::Domain(format!("token {t:?} has no surface form in {lang}")))
        })
        .collect()
}

/// Display form that also shows reserved tokens: `^` SOS, `$` EOS, `_` PAD.
pub fn render(seq: &[Token], lang: Language) -> String {
    seq.iter()
        .map(|&t| match t {
            Token::SOS => '^',
            Token::EOS => '$',
            Token::PAD => '_',
            t => lang.surface_char(t).unwrap_or('?'),
        })
        .collect()
}

/// Right-pad sequences with PAD to the longest length.
pub fn pad_right(seqs: &[Vec<Token>]) -> Vec<Vec<Token>> {
    let width = seqs.iter().map(Vec::len).max().unwrap_or(0);
    seqs.iter()
        .map(|s| {
            let mut s = s.clone();
            s.resize(width, Token::PAD);
            s
        })
        .collect()
}

pub fn save_dataset(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let mut out = format!(
        "#language={}\n#max_len={}\n#seed={}\n",
        ds.language, ds.max_len, ds.seed
    );
    for w in &ds.words {
        writeln!(out, "{}", decode(w, ds.language)?).unwrap();
    }
    fs::write(path, out)?;
    Ok(())
}

struct Header {
    language: Option<Language>,
    max_len: Option<usize>,
    seed: Option<u64>,
}

fn parse_header(path: &Path, line_no: usize, line: &str, h: &mut Header) -> Result<Option<String>> {
    let (key, value) = line[1..]
        .split_once('=')
        .ok_or_else(|| Error::format(path, line_no, "header line must be #key=value"))?;
    let bad = |what: &str| Error::format(path, line_no, format!("invalid {what} {value:?}"));
    match key {
        "language" => h.language = Some(value.parse().map_err(|_| bad("language"))?),
        "max_len" => h.max_len = Some(value.parse().map_err(|_| bad("max_len"))?),
        "seed" => h.seed = Some(value.parse().map_err(|_| bad("seed"))?),
        "section" => return Ok(Some(value.to_string())),
        _ => return Err(Error::format(path, line_no, format!("unknown header key {key:?}"))),
    }
    Ok(None)
}

fn require_language(path: &Path, line_no: usize, h: &Header) -> Result<Language> {
    h.language
        .ok_or_else(|| Error::format(path, line_no, "missing #language header before data"))
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    let mut h = Header {
        language: None,
        max_len: None,
        seed: None,
    };
    let mut words = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.starts_with('#') {
            if parse_header(path, line_no, line, &mut h)?.is_some() {
                return Err(Error::format(path, line_no, "section markers belong to prompt files"));
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let lang = require_language(path, line_no, &h)?;
        let max_len = h
            .max_len
            .ok_or_else(|| Error::format(path, line_no, "missing #max_len header before data"))?;
        let word = encode(line, lang).map_err(|e| Error::format(path, line_no, e.to_string()))?;
        if !in_language(lang, &word)? {
            return Err(Error::format(path, line_no, format!("{line:?} is not a word of {lang}")));
        }
        if word.len() > max_len {
            return Err(Error::format(path, line_no, format!("word longer than max_len {max_len}")));
        }
        words.push(word);
    }
    let last = text.lines().count();
    Ok(Dataset {
        language: require_language(path, last, &h)?,
        max_len: h
            .max_len
            .ok_or_else(|| Error::format(path, last, "missing #max_len header"))?,
        seed: h
            .seed
            .ok_or_else(|| Error::format(path, last, "missing #seed header"))?,
        words,
    })
}

pub fn save_prompts(ps: &PromptSet, seed: u64, path: impl AsRef<Path>) -> Result<()> {
    let mut out = format!("#language={}\n#seed={seed}\n", ps.language);
    for (name, prompts) in [("id", &ps.id), ("ood", &ps.ood)] {
        writeln!(out, "#section={name}").unwrap();
        for p in prompts {
            writeln!(out, "{}", decode(token::strip_specials(p), ps.language)?).unwrap();
        }
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn load_prompts(path: impl AsRef<Path>) -> Result<PromptSet> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    let mut h = Header {
        language: None,
        max_len: None,
        seed: None,
    };
    let (mut id, mut ood) = (Vec::new(), Vec::new());
    let mut section: Option<bool> = None;
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.starts_with('#') {
            match parse_header(path, line_no, line, &mut h)?.as_deref() {
                Some("id") => section = Some(false),
                Some("ood") => section = Some(true),
                Some(other) => {
                    return Err(Error::format(path, line_no, format!("unknown section {other:?}")))
                }
                None => {}
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let lang = require_language(path, line_no, &h)?;
        let prompt = encode(line, lang).map_err(|e| Error::format(path, line_no, e.to_string()))?;
        match section {
            Some(false) => id.push(token::prompt_of(&prompt)),
            Some(true) => ood.push(token::prompt_of(&prompt)),
            None => return Err(Error::format(path, line_no, "prompt before any #section marker")),
        }
    }
    Ok(PromptSet {
        language: require_language(path, text.lines().count(), &h)?,
        id,
        ood,
        recipe: "loaded from file".into(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grammar::{check_rule, Rule};

    fn tmp(name: &str) -> std::path::PathBuf {
        let dir = std::env::temp_dir().join(format!("rulex-data-{}", std::process::id()));
        fs::create_dir_all(&dir).unwrap();
        dir.join(name)
    }

    #[test]
    fn enumerated_corpora() {
        assert_eq!(build_training_set(Language::L3, 1, 256, 0).unwrap().len(), 128);
        assert_eq!(build_training_set(Language::L5, 1, 256, 0).unwrap().len(), 85);
        assert!(matches!(
            build_training_set(Language::L3, 0, 256, 0),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn sampled_corpus_obeys_rules() {
        let ds = build_training_set(Language::L1, 2000, 256, 5).unwrap();
        assert_eq!(ds.len(), 2000);
        for w in &ds.words {
            assert_eq!(w[0], Token::B);
            assert_eq!(w.iter().filter(|t| **t == Token::A).count() % 2, 0);
        }
        assert_eq!(ds, build_training_set(Language::L1, 2000, 256, 5).unwrap());
    }

    #[test]
    fn prompt_counts() {
        let count = |l| {
            let p = build_test_prompts(l, 0);
            (p.id.len(), p.ood.len())
        };
        assert_eq!(count(Language::L1), (128, 128));
        assert_eq!(count(Language::L2), (8, 8));
        assert_eq!(count(Language::L3), (5, 251));
        assert_eq!(count(Language::L4), (40, 40));
        assert_eq!(count(Language::L5), (4, 239));
        assert_eq!(count(Language::L6), (70, 70));
    }

    #[test]
    fn l3_id_prompts_are_the_expected_five() {
        let p = build_test_prompts(Language::L3, 0);
        let mut got: Vec<String> = p
            .id
            .iter()
            .map(|s| decode(&s[1..], Language::L3).unwrap())
            .collect();
        got.sort();
        assert_eq!(got, ["aaaaaaaa", "aaaaaaab", "aaaaaabb", "aaaaabbb", "aaaabbbb"]);
    }

    #[test]
    fn ood_prompts_are_not_completable() {
        for lang in Language::ALL {
            let p = build_test_prompts(lang, 0);
            for q in &p.ood {
                assert_eq!(q[0], Token::SOS);
                assert_eq!(min_completion(lang, &q[1..]), None, "{lang}");
            }
            for q in &p.id {
                assert!(min_completion(lang, &q[1..]).is_some(), "{lang}");
            }
        }
        // Prompts built by construction carry an explicit R2 violation.
        for lang in [Language::L1, Language::L2, Language::L4, Language::L6] {
            for q in &build_test_prompts(lang, 0).ood {
                assert!(!check_rule(lang, Rule::R2, &q[1..]).unwrap(), "{lang}");
            }
        }
    }

    #[test]
    fn encode_examples() {
        assert_eq!(encode("aabb", Language::L3).unwrap(), vec![Token(3), Token(3), Token(4), Token(4)]);
        assert_eq!(encode("([", Language::L4).unwrap(), vec![Token(3), Token(5)]);
        assert_eq!(decode(&encode("()[]", Language::L6).unwrap(), Language::L6).unwrap(), "()[]");
        assert!(matches!(encode("abd", Language::L3), Err(Error::Domain(_))));
        assert!(encode("c", Language::L3).is_err());
    }

    #[test]
    fn dataset_round_trip() {
        let ds = build_training_set(Language::L4, 50, 20, 9).unwrap();
        let path = tmp("l4.txt");
        save_dataset(&ds, &path).unwrap();
        assert_eq!(load_dataset(&path).unwrap(), ds);
    }

    #[test]
    fn malformed_files_report_line_numbers() {
        let path = tmp("bad-char.txt");
        fs::write(&path, "#language=L3\n#max_len=10\n#seed=1\nab\nadb\n").unwrap();
        match load_dataset(&path) {
            Err(Error::Format { line, .. }) => assert_eq!(line, 5),
            other => panic!("{other:?}"),
        }
        fs::write(&path, "#language=L3\n#max_len=10\n#seed=1\nba\n").unwrap();
        assert!(matches!(load_dataset(&path), Err(Error::Format { line: 4, .. })));
        fs::write(&path, "ab\n").unwrap();
        assert!(matches!(load_dataset(&path), Err(Error::Format { line: 1, .. })));
    }

    #[test]
    fn prompt_file_round_trip() {
        let ps = build_test_prompts(Language::L6, 3);
        let path = tmp("p6.txt");
        save_prompts(&ps, 3, &path).unwrap();
        let back = load_prompts(&path).unwrap();
        assert_eq!((back.id, back.ood), (ps.id, ps.ood));
    }

    #[test]
    fn padding_keeps_content() {
        let seqs = vec![token::completed(&[Token::A]), token::completed(&[Token::A, Token::B, Token::B])];
        let padded = pad_right(&seqs);
        for (p, s) in padded.iter().zip(&seqs) {
            assert_eq!(token::strip_specials(p), token::strip_specials(s));
            assert_eq!(p.len(), 5);
        }
    }
}
