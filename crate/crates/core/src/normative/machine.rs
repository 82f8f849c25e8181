//! Total next-token machines: finite control, up to two saturating
//! counters, and exact rational emission tables.
//!
//! Catalogue syntax, one block per machine, `#` starts a comment:
//!
//! ```text
//! machine <id>
//! alphabet a b
//! counters 1
//! start <state>
//! emit <state> [c0=0|c0>0|c0<0|c1=0|...|*] : <tok>=<p/q> ...
//! on <state> <letter> -> <state> [c0+|c0-|c1+|c1-]
//! end
//! ```
//!
//! `emit` rules are tried in file order and the first whose guards match
//! gives the next-token distribution; every state must be covered for every
//! counter sign pattern. `on` must cover every (state, letter) pair. After
//! EOS a machine emits PAD with probability one.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::token::Token;

/// Counters saturate at this magnitude.
pub const COUNTER_BOUND: i64 = 300;
pub const MAX_COUNTERS: usize = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Ratio {
    pub num: u64,
    pub den: u64,
}

fn gcd(mut a: u128, mut b: u128) -> u128 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

impl Ratio {
    fn parse(s: &str) -> Option<Ratio> {
        let (n, d): (u64, u64) = match s.split_once('/') {
            Some((n, d)) => (n.parse().ok()?, d.parse().ok()?),
            None => (s.parse().ok()?, 1),
        };
        if d == 0 {
            return None;
        }
        let g = gcd(n as u128, d as u128).max(1) as u64;
        Some(Ratio { num: n / g, den: d / g })
    }

    pub fn value(self) -> f64 {
        self.num as f64 / self.den as f64
    }
}

impl std::fmt::Display for Ratio {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.den == 1 {
            write!(f, "{}", self.num)
        } else {
            write!(f, "{}/{}", self.num, self.den)
        }
    }
}

/// Exact `sum <= 1` over a list of ratios.
fn at_most_one(ps: &[Ratio]) -> bool {
    let (mut n, mut d) = (0u128, 1u128);
    for p in ps {
        n = n * p.den as u128 + p.num as u128 * d;
        d *= p.den as u128;
        let g = gcd(n, d).max(1);
        n /= g;
        d /= g;
    }
    n <= d
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Guard {
    Any,
    Zero,
    Pos,
    Neg,
}

impl Guard {
    fn matches(self, c: i64) -> bool {
        match self {
            Guard::Any => true,
            Guard::Zero => c == 0,
            Guard::Pos => c > 0,
            Guard::Neg => c < 0,
        }
    }

    fn symbol(self) -> &'static str {
        match self {
            Guard::Any => "*",
            Guard::Zero => "=0",
            Guard::Pos => ">0",
            Guard::Neg => "<0",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
struct Emit {
    state: usize,
    guards: [Guard; MAX_COUNTERS],
    probs: Vec<(Token, Ratio)>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct Transition {
    next: usize,
    delta: [i64; MAX_COUNTERS],
}

#[derive(Clone, Debug, PartialEq)]
pub struct Machine {
    pub id: String,
    alphabet: Vec<Token>,
    counters: usize,
    states: Vec<String>,
    start: usize,
    emits: Vec<Emit>,
    /// Indexed by state, then by alphabet position.
    transitions: Vec<Vec<Transition>>,
    canonical: String,
    bits: u64,
}

/// Run state of a machine after a prefix.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct MachineState {
    pub state: usize,
    pub counters: [i64; MAX_COUNTERS],
    pub done: bool,
}

fn letter_token(ch: &str) -> Option<Token> {
    match ch {
        "a" => Some(Token::A),
        "b" => Some(Token::B),
        "c" => Some(Token::C),
        _ => None,
    }
}

fn letter_name(t: Token) -> &'static str {
    match t {
        Token::A => "a",
        Token::B => "b",
        _ => "c",
    }
}

impl Machine {
    /// Description length: eight bits per byte of the canonical text.
    pub fn description_bits(&self) -> u64 {
        self.bits
    }

    /// Replace the description length, e.g. to impose an artificial prior gap.
    pub fn with_description_bits(mut self, bits: u64) -> Self {
        self.bits = bits;
        self
    }

    pub fn log_prior(&self) -> f64 {
        -(self.bits as f64) * std::f64::consts::LN_2
    }

    /// Canonical serialization; the machine id is not part of it.
    pub fn canonical(&self) -> &str {
        &self.canonical
    }

    pub fn alphabet(&self) -> &[Token] {
        &self.alphabet
    }

    pub fn vocab_size(&self) -> usize {
        self.alphabet.iter().map(|t| t.id()).max().unwrap_or(2) + 1
    }

    pub fn start(&self) -> MachineState {
        MachineState {
            state: self.start,
            counters: [0; MAX_COUNTERS],
            done: false,
        }
    }

    /// Next-token distribution, indexed by token id. Sums to at most one.
    pub fn conditional(&self, s: &MachineState) -> Vec<f64> {
        let mut out = vec![0.0; self.vocab_size()];
        if s.done {
            out[Token::PAD.id()] = 1.0;
            return out;
        }
        let rule = self
            .emits
            .iter()
            .find(|e| e.state == s.state && e.guards.iter().zip(s.counters).all(|(g, c)| g.matches(c)))
            .expect("emission coverage is checked at parse time");
        for &(t, p) in &rule.probs {
            out[t.id()] += p.value();
        }
        out
    }

    /// Advance by one token. EOS and PAD end the word.
    pub fn step(&self, s: &MachineState, t: Token) -> Result<MachineState> {
        if t == Token::EOS || t == Token::PAD || s.done {
            return Ok(MachineState { done: true, ..*s });
        }
        let idx = self
            .alphabet
            .iter()
            .position(|&a| a == t)
            .ok_or_else(|| Error::Domain(format!("token {t:?} is outside the alphabet of {}", self.id)))?;
        let tr = self.transitions[s.state][idx];
        let mut counters = s.counters;
        for (c, d) in counters.iter_mut().zip(tr.delta) {
            *c = (*c + d).clamp(-COUNTER_BOUND, COUNTER_BOUND);
        }
        Ok(MachineState {
            state: tr.next,
            counters,
            done: false,
        })
    }

    /// State after an SOS-prefixed sequence.
    pub fn run(&self, seq: &[Token]) -> Result<MachineState> {
        if seq.first() != Some(&Token::SOS) {
            return Err(Error::Contract("machine input must start with SOS".into()));
        }
        seq[1..].iter().try_fold(self.start(), |s, &t| self.step(&s, t))
    }

    /// Log-probability of every token after SOS given its prefix.
    pub fn log_prob(&self, seq: &[Token]) -> Result<f64> {
        if seq.first() != Some(&Token::SOS) {
            return Err(Error::Contract("machine input must start with SOS".into()));
        }
        let mut s = self.start();
        let mut total = 0.0;
        for &t in &seq[1..] {
            let p = self.conditional(&s).get(t.id()).copied().unwrap_or(0.0);
            total += p.ln();
            s = self.step(&s, t)?;
        }
        Ok(total)
    }
}

/// Parse every machine block of a catalogue. `source` names the input in
/// error messages.
pub fn parse_catalogue(text: &str, source: impl AsRef<Path>) -> Result<Vec<Machine>> {
    let source = source.as_ref();
    let mut machines = Vec::new();
    let mut block: Option<(usize, String, Vec<(usize, Vec<&str>)>)> = None;
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let words: Vec<&str> = line.split_whitespace().collect();
        match (words[0], &mut block) {
            ("machine", None) => {
                if words.len() != 2 {
                    return Err(Error::format(source, line_no, "expected `machine <id>`"));
                }
                block = Some((line_no, words[1].to_string(), Vec::new()));
            }
            ("machine", Some(_)) => return Err(Error::format(source, line_no, "missing `end` before `machine`")),
            ("end", Some(_)) => {
                let (start, id, lines) = block.take().expect("inside a block");
                if machines.iter().any(|m: &Machine| m.id == id) {
                    return Err(Error::format(source, start, format!("duplicate machine id {id}")));
                }
                machines.push(build(source, start, id, &lines)?);
            }
            (_, Some((_, _, lines))) => lines.push((line_no, words)),
            (_, None) => return Err(Error::format(source, line_no, "directive outside a machine block")),
        }
    }
    if let Some((start, ..)) = block {
        return Err(Error::format(source, start, "machine block is not closed with `end`"));
    }
    Ok(machines)
}

fn build(source: &Path, block_line: usize, id: String, lines: &[(usize, Vec<&str>)]) -> Result<Machine> {
    let err = |line: usize, msg: String| Error::format(source, line, format!("{id}: {msg}"));
    let mut alphabet: Option<Vec<Token>> = None;
    let mut counters: Option<usize> = None;
    let mut start_name: Option<(usize, String)> = None;
    let mut states: Vec<String> = Vec::new();
    let state_of = |name: &str, states: &mut Vec<String>| -> usize {
        states.iter().position(|s| s == name).unwrap_or_else(|| {
            states.push(name.to_string());
            states.len() - 1
        })
    };
    let mut emits = Vec::new();
    let mut raw_transitions: Vec<(usize, usize, Token, usize, [i64; MAX_COUNTERS])> = Vec::new();

    for (line, w) in lines {
        let line = *line;
        match w[0] {
            "alphabet" => {
                let letters: Option<Vec<Token>> = w[1..].iter().map(|s| letter_token(s)).collect();
                let letters = letters.filter(|l| !l.is_empty()).ok_or_else(|| err(line, "alphabet letters are a, b, c".into()))?;
                alphabet = Some(letters);
            }
            "counters" => {
                let n: usize = w
                    .get(1)
                    .and_then(|s| s.parse().ok())
                    .filter(|&n| n <= MAX_COUNTERS)
                    .ok_or_else(|| err(line, format!("counters must be 0..={MAX_COUNTERS}")))?;
                counters = Some(n);
            }
            "start" => {
                let name = w.get(1).ok_or_else(|| err(line, "expected `start <state>`".into()))?;
                start_name = Some((line, name.to_string()));
            }
            "emit" => {
                let n = counters.ok_or_else(|| err(line, "`counters` must precede `emit`".into()))?;
                let letters = alphabet.as_ref().ok_or_else(|| err(line, "`alphabet` must precede `emit`".into()))?;
                let colon = w
                    .iter()
                    .position(|&s| s == ":")
                    .ok_or_else(|| err(line, "expected `emit <state> <guards> : <tok>=<p>`".into()))?;
                if colon < 2 {
                    return Err(err(line, "missing state".into()));
                }
                let state = state_of(w[1], &mut states);
                let mut guards = [Guard::Any; MAX_COUNTERS];
                for g in &w[2..colon] {
                    if *g == "*" {
                        continue;
                    }
                    let parsed = g.strip_prefix('c').and_then(|r| {
                        let idx = r.get(..1)?.parse::<usize>().ok()?;
                        let guard = match r.get(1..)? {
                            "=0" => Guard::Zero,
                            ">0" => Guard::Pos,
                            "<0" => Guard::Neg,
                            _ => return None,
                        };
                        Some((idx, guard))
                    });
                    match parsed {
                        Some((idx, guard)) if idx < n => guards[idx] = guard,
                        _ => return Err(err(line, format!("bad guard {g:?}"))),
                    }
                }
                let mut probs = Vec::new();
                for item in &w[colon + 1..] {
                    let (tok, p) = item
                        .split_once('=')
                        .ok_or_else(|| err(line, format!("bad emission {item:?}")))?;
                    let t = match tok {
                        "EOS" => Token::EOS,
                        l => letter_token(l)
                            .filter(|t| letters.contains(t))
                            .ok_or_else(|| err(line, format!("cannot emit {tok:?}")))?,
                    };
                    if probs.iter().any(|&(u, _)| u == t) {
                        return Err(err(line, format!("{tok} listed twice")));
                    }
                    let p = Ratio::parse(p).ok_or_else(|| err(line, format!("bad probability {p:?}")))?;
                    probs.push((t, p));
                }
                let ps: Vec<Ratio> = probs.iter().map(|&(_, p)| p).collect();
                if !at_most_one(&ps) {
                    return Err(err(line, "emission probabilities sum above one".into()));
                }
                emits.push(Emit { state, guards, probs });
            }
            "on" => {
                let n = counters.ok_or_else(|| err(line, "`counters` must precede `on`".into()))?;
                let letters = alphabet.as_ref().ok_or_else(|| err(line, "`alphabet` must precede `on`".into()))?;
                if w.len() < 5 || w[3] != "->" {
                    return Err(err(line, "expected `on <state> <letter> -> <state> [ops]`".into()));
                }
                let from = state_of(w[1], &mut states);
                let t = letter_token(w[2])
                    .filter(|t| letters.contains(t))
                    .ok_or_else(|| err(line, format!("{:?} is not in the alphabet", w[2])))?;
                let to = state_of(w[4], &mut states);
                let mut delta = [0; MAX_COUNTERS];
                for op in &w[5..] {
                    let parsed = op.strip_prefix('c').and_then(|r| {
                        let idx = r.get(..1)?.parse::<usize>().ok()?;
                        let d = match r.get(1..)? {
                            "+" => 1,
                            "-" => -1,
                            _ => return None,
                        };
                        Some((idx, d))
                    });
                    match parsed {
                        Some((idx, d)) if idx < n => delta[idx] += d,
                        _ => return Err(err(line, format!("bad counter op {op:?}"))),
                    }
                }
                raw_transitions.push((line, from, t, to, delta));
            }
            other => return Err(err(line, format!("unknown directive {other:?}"))),
        }
    }

    let alphabet = alphabet.ok_or_else(|| err(block_line, "missing `alphabet`".into()))?;
    let counters = counters.ok_or_else(|| err(block_line, "missing `counters`".into()))?;
    let (start_line, start_name) = start_name.ok_or_else(|| err(block_line, "missing `start`".into()))?;
    let start = states
        .iter()
        .position(|s| *s == start_name)
        .ok_or_else(|| err(start_line, format!("start state {start_name} has no rules")))?;

    let mut transitions: Vec<Vec<Option<Transition>>> = vec![vec![None; alphabet.len()]; states.len()];
    for (line, from, t, next, delta) in raw_transitions {
        let slot = &mut transitions[from][alphabet.iter().position(|&a| a == t).expect("checked")];
        if slot.is_some() {
            return Err(err(line, format!("second transition for ({}, {})", states[from], letter_name(t))));
        }
        *slot = Some(Transition { next, delta });
    }
    let mut complete = Vec::with_capacity(states.len());
    for (s, row) in transitions.into_iter().enumerate() {
        let mut out = Vec::with_capacity(alphabet.len());
        for (i, tr) in row.into_iter().enumerate() {
            out.push(tr.ok_or_else(|| {
                err(block_line, format!("no transition for ({}, {})", states[s], letter_name(alphabet[i])))
            })?);
        }
        complete.push(out);
    }

    // Every state under every sign pattern of the live counters needs a rule.
    let signs = [Guard::Zero, Guard::Pos, Guard::Neg];
    let samples = |g: Guard| match g {
        Guard::Zero => 0,
        Guard::Pos => 1,
        _ => -1,
    };
    for s in 0..states.len() {
        for pattern in 0..3usize.pow(counters as u32) {
            let mut c = [0i64; MAX_COUNTERS];
            let mut p = pattern;
            for slot in c.iter_mut().take(counters) {
                *slot = samples(signs[p % 3]);
                p /= 3;
            }
            let covered = emits
                .iter()
                .any(|e: &Emit| e.state == s && e.guards.iter().zip(c).all(|(g, v)| g.matches(v)));
            if !covered {
                return Err(err(
                    block_line,
                    format!("state {} has no emission for counters {:?}", states[s], &c[..counters]),
                ));
            }
        }
    }

    let canonical = canonical_text(&alphabet, counters, &states, start, &emits, &complete);
    let bits = 8 * canonical.len() as u64;
    Ok(Machine {
        id,
        alphabet,
        counters,
        states,
        start,
        emits,
        transitions: complete,
        canonical,
        bits,
    })
}

fn canonical_text(
    alphabet: &[Token],
    counters: usize,
    states: &[String],
    start: usize,
    emits: &[Emit],
    transitions: &[Vec<Transition>],
) -> String {
    let mut s = String::new();
    let letters: Vec<&str> = alphabet.iter().map(|&t| letter_name(t)).collect();
    let _ = writeln!(s, "alphabet {}", letters.join(" "));
    let _ = writeln!(s, "counters {counters}");
    let _ = writeln!(s, "start {}", states[start]);
    for e in emits {
        let _ = write!(s, "emit {}", states[e.state]);
        let guards: Vec<String> = e
            .guards
            .iter()
            .take(counters)
            .enumerate()
            .filter(|(_, g)| **g != Guard::Any)
            .map(|(i, g)| format!("c{i}{}", g.symbol()))
            .collect();
        if guards.is_empty() {
            s.push_str(" *");
        } else {
            let _ = write!(s, " {}", guards.join(" "));
        }
        s.push_str(" :");
        for (t, p) in &e.probs {
            let name = if *t == Token::EOS { "EOS" } else { letter_name(*t) };
            let _ = write!(s, " {name}={p}");
        }
        s.push('\n');
    }
    for (from, row) in transitions.iter().enumerate() {
        for (i, tr) in row.iter().enumerate() {
            let _ = write!(s, "on {} {} -> {}", states[from], letter_name(alphabet[i]), states[tr.next]);
            for (c, d) in tr.delta.iter().enumerate().take(counters) {
                match d.signum() {
                    1 => (0..*d).for_each(|_| s.push_str(&format!(" c{c}+"))),
                    -1 => (0..-d).for_each(|_| s.push_str(&format!(" c{c}-"))),
                    _ => {}
                }
            }
            s.push('\n');
        }
    }
    s.push_str("end\n");
    s
}
