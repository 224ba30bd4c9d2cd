//! Letters, words, free reduction, and the word-literal syntax.
//!
//! A letter packs a generator index and a sign into one byte: `gen << 1 | inv`.
//! The byte order is the shortlex letter order: generators in declaration
//! order, positive letter before its inverse.

use std::cmp::Ordering;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// One signed generator. At most 127 generators per alphabet.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Letter(pub u8);

impl Letter {
    pub fn new(generator: usize, inverse: bool) -> Letter {
        debug_assert!(generator < 128);
        Letter(((generator as u8) << 1) | inverse as u8)
    }

    pub fn generator(self) -> usize {
        (self.0 >> 1) as usize
    }

    pub fn is_inverse(self) -> bool {
        self.0 & 1 == 1
    }

    pub fn inverse(self) -> Letter {
        Letter(self.0 ^ 1)
    }
}

impl fmt::Debug for Letter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "L{}{}", self.generator(), if self.is_inverse() { "'" } else { "" })
    }
}

/// A word over signed generators. Not necessarily freely reduced unless the
/// producing operation says so.
#[derive(Clone, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct Word(pub Vec<Letter>);

impl Word {
    pub fn id() -> Word {
        Word(Vec::new())
    }

    pub fn from_letters(letters: impl IntoIterator<Item = Letter>) -> Word {
        Word(letters.into_iter().collect())
    }

    pub fn letter(l: Letter) -> Word {
        Word(vec![l])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn letters(&self) -> &[Letter] {
        &self.0
    }

    pub fn push(&mut self, l: Letter) {
        self.0.push(l);
    }

    /// Freely reduced copy: no xx' or x'x factors remain.
    pub fn free_reduce(&self) -> Word {
        let mut out: Vec<Letter> = Vec::with_capacity(self.0.len());
        for &l in &self.0 {
            if out.last() == Some(&l.inverse()) {
                out.pop();
            } else {
                out.push(l);
            }
        }
        Word(out)
    }

    pub fn is_reduced(&self) -> bool {
        self.0.windows(2).all(|w| w[0] != w[1].inverse())
    }

    pub fn inverse(&self) -> Word {
        Word(self.0.iter().rev().map(|l| l.inverse()).collect())
    }

    pub fn concat(&self, other: &Word) -> Word {
        let mut v = self.0.clone();
        v.extend_from_slice(&other.0);
        Word(v)
    }

    /// Free multiplication: concatenate and reduce.
    pub fn multiply(&self, other: &Word) -> Word {
        self.concat(other).free_reduce()
    }

    pub fn pow(&self, k: i64) -> Word {
        let base = if k < 0 { self.inverse() } else { self.clone() };
        let mut out = Word::id();
        for _ in 0..k.unsigned_abs() {
            out = out.multiply(&base);
        }
        out
    }

    /// Left-to-right cyclic shift by `k` positions.
    pub fn cyclic_shift(&self, k: usize) -> Word {
        if self.0.is_empty() {
            return Word::id();
        }
        let n = self.0.len();
        let k = k % n;
        let mut v = Vec::with_capacity(n);
        v.extend_from_slice(&self.0[k..]);
        v.extend_from_slice(&self.0[..k]);
        Word(v)
    }

    /// Shortlex order: length first, then the packed letter bytes.
    pub fn shortlex_cmp(&self, other: &Word) -> Ordering {
        self.0
            .len()
            .cmp(&other.0.len())
            .then_with(|| self.0.cmp(&other.0))
    }
}

impl PartialOrd for Word {
    fn partial_cmp(&self, other: &Word) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Word {
    fn cmp(&self, other: &Word) -> Ordering {
        self.shortlex_cmp(other)
    }
}

impl fmt::Debug for Word {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Word[")?;
        for l in &self.0 {
            write!(f, "{:?} ", l)?;
        }
        write!(f, "]")
    }
}

/// Generator names in declaration order; owns word-literal parsing/printing.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Alphabet {
    names: Vec<String>,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum WordParseError {
    #[error("unknown generator at byte {pos}: {text:?}")]
    UnknownGenerator { pos: usize, text: String },
    #[error("bad exponent at byte {pos}")]
    BadExponent { pos: usize },
    #[error("alphabet rejects name {0:?}: names must be nonempty, start with a letter, and use only letters, digits, underscore")]
    BadName(String),
    #[error("duplicate generator name {0:?}")]
    DuplicateName(String),
    #[error("too many generators ({0}); at most 128 supported")]
    TooManyGenerators(usize),
}

impl Alphabet {
    pub fn new(names: Vec<String>) -> Result<Alphabet, WordParseError> {
        if names.len() > 128 {
            return Err(WordParseError::TooManyGenerators(names.len()));
        }
        for n in &names {
            let mut chars = n.chars();
            let ok = match chars.next() {
                Some(c) if c.is_ascii_alphabetic() => {
                    chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
                }
                _ => false,
            };
            if !ok {
                return Err(WordParseError::BadName(n.clone()));
            }
        }
        let mut seen = names.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != names.len() {
            let mut sorted = names.clone();
            sorted.sort();
            let dup = sorted
                .windows(2)
                .find(|w| w[0] == w[1])
                .map(|w| w[0].clone())
                .unwrap_or_default();
            return Err(WordParseError::DuplicateName(dup));
        }
        Ok(Alphabet { names })
    }

    pub fn rank(&self) -> usize {
        self.names.len()
    }

    pub fn name(&self, generator: usize) -> &str {
        &self.names[generator]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// Parse a word literal: generator tokens (longest declared name wins),
    /// each optionally followed by `'` (inverse) and/or `^k` / `^-k`.
    /// Whitespace and `.` separators are allowed between tokens.
    pub fn parse_word(&self, text: &str) -> Result<Word, WordParseError> {
        let bytes = text.as_bytes();
        let mut pos = 0usize;
        let mut out = Word::id();
        while pos < bytes.len() {
            let c = bytes[pos] as char;
            if c.is_whitespace() || c == '.' || c == '*' {
                pos += 1;
                continue;
            }
            // Longest generator name matching at pos.
            let rest = &text[pos..];
            let mut best: Option<(usize, usize)> = None; // (gen index, name len)
            for (i, n) in self.names.iter().enumerate() {
                if rest.starts_with(n.as_str()) {
                    // A name match must not be a prefix of a longer identifier
                    // unless that longer identifier is itself a declared name;
                    // longest-match resolves that.
                    if best.map_or(true, |(_, l)| n.len() > l) {
                        best = Some((i, n.len()));
                    }
                }
            }
            let (gen, name_len) = best.ok_or_else(|| WordParseError::UnknownGenerator {
                pos,
                text: rest.chars().take(8).collect(),
            })?;
            pos += name_len;
            let mut inv = false;
            if pos < bytes.len() && bytes[pos] == b'\'' {
                inv = true;
                pos += 1;
            }
            let mut power: i64 = 1;
            if pos < bytes.len() && bytes[pos] == b'^' {
                pos += 1;
                let mut neg = false;
                if pos < bytes.len() && bytes[pos] == b'-' {
                    neg = true;
                    pos += 1;
                }
                let start = pos;
                while pos < bytes.len() && bytes[pos].is_ascii_digit() {
                    pos += 1;
                }
                if start == pos {
                    return Err(WordParseError::BadExponent { pos });
                }
                let mag: i64 = text[start..pos]
                    .parse()
                    .map_err(|_| WordParseError::BadExponent { pos: start })?;
                power = if neg { -mag } else { mag };
            }
            let letter = Letter::new(gen, inv != (power < 0));
            for _ in 0..power.unsigned_abs() {
                out.push(letter);
            }
        }
        Ok(out)
    }

    /// Print a word in the literal syntax; runs of one letter collapse to `^k`.
    pub fn print_word(&self, w: &Word) -> String {
        if w.is_empty() {
            return String::new();
        }
        let mut out = String::new();
        let mut i = 0;
        let ls = w.letters();
        while i < ls.len() {
            let l = ls[i];
            let mut j = i + 1;
            while j < ls.len() && ls[j] == l {
                j += 1;
            }
            let run = j - i;
            out.push_str(self.name(l.generator()));
            if l.is_inverse() {
                out.push('\'');
            }
            if run > 1 {
                out.push_str(&format!("^{}", run));
            }
            i = j;
        }
        out
    }
}

/// Enumerate all words of exactly `len` over `rank` generators (both signs),
/// in lexicographic letter order. Not restricted to reduced words.
pub fn all_words(rank: usize, len: usize) -> impl Iterator<Item = Word> {
    let letters: Vec<Letter> = (0..rank * 2).map(|b| Letter(b as u8)).collect();
    let total = (rank * 2).pow(len as u32);
    (0..total).map(move |mut code| {
        let mut v = Vec::with_capacity(len);
        for _ in 0..len {
            v.push(letters[code % letters.len()]);
            code /= letters.len();
        }
        v.reverse();
        Word(v)
    })
}

/// Enumerate all freely reduced words of exactly `len` over `rank` generators.
pub fn reduced_words(rank: usize, len: usize) -> Vec<Word> {
    let mut out = Vec::new();
    let mut stack: Vec<Word> = vec![Word::id()];
    for _ in 0..len {
        let mut next = Vec::new();
        for w in &stack {
            for b in 0..rank * 2 {
                let l = Letter(b as u8);
                if w.0.last() != Some(&l.inverse()) {
                    let mut v = w.clone();
                    v.push(l);
                    next.push(v);
                }
            }
        }
        stack = next;
    }
    out.append(&mut stack);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ab() -> Alphabet {
        Alphabet::new(vec!["a".into(), "b".into()]).unwrap()
    }

    #[test]
    fn letter_packing_orders_positive_before_inverse() {
        let a = Letter::new(0, false);
        let ai = Letter::new(0, true);
        let b = Letter::new(1, false);
        assert!(a < ai && ai < b);
        assert_eq!(a.inverse(), ai);
        assert_eq!(ai.inverse(), a);
    }

    #[test]
    fn free_reduce_cancels_nested_pairs() {
        let al = ab();
        let w = al.parse_word("a b b' a' a").unwrap();
        assert_eq!(al.print_word(&w.free_reduce()), "a");
    }

    #[test]
    fn free_reduce_idempotent_exhaustive_rank2() {
        // Every word of length <= 12 over two generators reduces to a fixed point.
        for len in 0..=12 {
            if len >= 9 {
                // 4^len blows past 10^7; sample the long lengths on a stride.
                let stride = 257usize;
                for (i, w) in all_words(2, len).enumerate() {
                    if i % stride != 0 {
                        continue;
                    }
                    let r = w.free_reduce();
                    assert_eq!(r, r.free_reduce());
                    assert!(r.is_reduced());
                }
            } else {
                for w in all_words(2, len) {
                    let r = w.free_reduce();
                    assert_eq!(r, r.free_reduce());
                    assert!(r.is_reduced());
                }
            }
        }
    }

    #[test]
    fn multiply_associative_exhaustive_short() {
        let words: Vec<Word> = (0..=2).flat_map(|l| all_words(2, l)).collect();
        for x in &words {
            for y in &words {
                for z in &words {
                    let lhs = x.multiply(y).multiply(z);
                    let rhs = x.multiply(&y.multiply(z));
                    assert_eq!(lhs, rhs);
                }
            }
        }
    }

    #[test]
    fn inverse_multiplies_to_identity() {
        for w in all_words(2, 5) {
            assert!(w.multiply(&w.inverse()).is_empty());
        }
    }

    #[test]
    fn parse_handles_powers_and_inverses() {
        let al = ab();
        let w = al.parse_word("a^3 b a^2 b' a b a' b'^3").unwrap();
        assert_eq!(w.len(), 13);
        assert_eq!(al.print_word(&w), "a^3ba^2b'aba'b'^3");
        assert_eq!(al.parse_word("a'^2"), al.parse_word("a^-2"));
    }

    #[test]
    fn parse_longest_name_wins() {
        let al = Alphabet::new(vec!["g".into(), "g1".into()]).unwrap();
        let w = al.parse_word("g1 g").unwrap();
        assert_eq!(w.letters()[0].generator(), 1);
        assert_eq!(w.letters()[1].generator(), 0);
    }

    #[test]
    fn print_parse_roundtrip_reduced_words() {
        let al = ab();
        for w in reduced_words(2, 6).into_iter().step_by(17) {
            let text = al.print_word(&w);
            assert_eq!(al.parse_word(&text).unwrap(), w);
        }
    }

    #[test]
    fn shortlex_orders_by_length_then_letters() {
        let al = ab();
        let a = al.parse_word("a").unwrap();
        let ai = al.parse_word("a'").unwrap();
        let b = al.parse_word("b").unwrap();
        let aa = al.parse_word("a^2").unwrap();
        assert!(a < ai && ai < b && b < aa);
    }

    #[test]
    fn bad_inputs_error_with_position() {
        let al = ab();
        match al.parse_word("a c") {
            Err(WordParseError::UnknownGenerator { pos, .. }) => assert_eq!(pos, 2),
            other => panic!("expected unknown generator, got {:?}", other),
        }
        assert!(matches!(
            al.parse_word("a^"),
            Err(WordParseError::BadExponent { .. })
        ));
        assert!(Alphabet::new(vec!["a".into(), "a".into()]).is_err());
        assert!(Alphabet::new(vec!["1x".into()]).is_err());
    }
}
