//! The presentation DSL: group blocks and space declarations.
//!
//! ```text
//! group F {
//!   generators a, b;
//!   commute (a, b);          # optional, any number of pairs
//!   involutions;             # optional: every generator squares to 1
//!   relators "a^3 b a^2 b' a b a' b'^3";   # optional, any number
//! }
//! space cayley(F)
//! space cusped(F) { peripheral <a>; }
//! space quotient(cayley(F)) { normal "a"; }
//! ```
//!
//! `#` starts a comment to end of line. Words use `'` for inverses and `^k`
//! for powers. A document holds any number of groups and at most one space.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::word::{Alphabet, Word, WordParseError};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupSpec {
    pub name: String,
    pub alphabet: Alphabet,
    /// Commuting generator pairs, stored with the smaller index first.
    pub commute: Vec<(usize, usize)>,
    /// Every generator is an involution (g^2 = 1).
    pub involutions: bool,
    pub relators: Vec<Word>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SpaceSpec {
    Cayley {
        group: GroupSpec,
    },
    Cusped {
        group: GroupSpec,
        /// Each peripheral family is a generator subset spanning the subgroup.
        peripherals: Vec<Vec<usize>>,
    },
    Quotient {
        base: Box<SpaceSpec>,
        normals: Vec<Word>,
    },
}

impl SpaceSpec {
    pub fn group(&self) -> &GroupSpec {
        match self {
            SpaceSpec::Cayley { group } => group,
            SpaceSpec::Cusped { group, .. } => group,
            SpaceSpec::Quotient { base, .. } => base.group(),
        }
    }
}

#[derive(Debug, Error)]
pub enum ParseError {
    #[error("{line}:{col}: expected {expected}, found {found:?}")]
    Unexpected {
        line: usize,
        col: usize,
        expected: String,
        found: String,
    },
    #[error("{line}:{col}: {source}")]
    Word {
        line: usize,
        col: usize,
        source: WordParseError,
    },
    #[error("{line}:{col}: unknown group {name:?}")]
    UnknownGroup { line: usize, col: usize, name: String },
    #[error("{line}:{col}: unknown generator {name:?}")]
    UnknownGenerator { line: usize, col: usize, name: String },
    #[error("{line}:{col}: {msg}")]
    Invalid { line: usize, col: usize, msg: String },
    #[error("document declares no space")]
    NoSpace,
}

#[derive(Clone, Debug, PartialEq)]
enum Tok {
    Ident(String),
    Str(String),
    Punct(char),
}

#[derive(Clone, Debug)]
struct Spanned {
    tok: Tok,
    line: usize,
    col: usize,
}

fn lex(text: &str) -> Result<Vec<Spanned>, ParseError> {
    let mut out = Vec::new();
    let mut line = 1usize;
    let mut col = 1usize;
    let mut chars = text.chars().peekable();
    while let Some(&c) = chars.peek() {
        if c == '\n' {
            chars.next();
            line += 1;
            col = 1;
        } else if c.is_whitespace() {
            chars.next();
            col += 1;
        } else if c == '#' {
            while let Some(&c2) = chars.peek() {
                if c2 == '\n' {
                    break;
                }
                chars.next();
                col += 1;
            }
        } else if c.is_ascii_alphabetic() || c == '_' {
            let (l0, c0) = (line, col);
            let mut s = String::new();
            while let Some(&c2) = chars.peek() {
                if c2.is_ascii_alphanumeric() || c2 == '_' {
                    s.push(c2);
                    chars.next();
                    col += 1;
                } else {
                    break;
                }
            }
            out.push(Spanned { tok: Tok::Ident(s), line: l0, col: c0 });
        } else if c == '"' {
            let (l0, c0) = (line, col);
            chars.next();
            col += 1;
            let mut s = String::new();
            let mut closed = false;
            while let Some(&c2) = chars.peek() {
                chars.next();
                if c2 == '\n' {
                    line += 1;
                    col = 1;
                } else {
                    col += 1;
                }
                if c2 == '"' {
                    closed = true;
                    break;
                }
                s.push(c2);
            }
            if !closed {
                return Err(ParseError::Unexpected {
                    line: l0,
                    col: c0,
                    expected: "closing '\"'".into(),
                    found: "end of input".into(),
                });
            }
            out.push(Spanned { tok: Tok::Str(s), line: l0, col: c0 });
        } else if "{}(),;<>".contains(c) {
            out.push(Spanned { tok: Tok::Punct(c), line, col });
            chars.next();
            col += 1;
        } else {
            return Err(ParseError::Unexpected {
                line,
                col,
                expected: "identifier, string, or punctuation".into(),
                found: c.to_string(),
            });
        }
    }
    Ok(out)
}

struct Parser {
    toks: Vec<Spanned>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Spanned> {
        self.toks.get(self.pos)
    }

    fn here(&self) -> (usize, usize) {
        self.peek()
            .map(|s| (s.line, s.col))
            .or_else(|| self.toks.last().map(|s| (s.line, s.col + 1)))
            .unwrap_or((1, 1))
    }

    fn fail<T>(&self, expected: &str) -> Result<T, ParseError> {
        let (line, col) = self.here();
        Err(ParseError::Unexpected {
            line,
            col,
            expected: expected.into(),
            found: self
                .peek()
                .map(|s| format!("{:?}", s.tok))
                .unwrap_or_else(|| "end of input".into()),
        })
    }

    fn take_ident(&mut self) -> Result<String, ParseError> {
        match self.peek() {
            Some(Spanned { tok: Tok::Ident(s), .. }) => {
                let s = s.clone();
                self.pos += 1;
                Ok(s)
            }
            _ => self.fail("identifier"),
        }
    }

    fn take_keyword(&mut self, kw: &str) -> Result<(), ParseError> {
        match self.peek() {
            Some(Spanned { tok: Tok::Ident(s), .. }) if s == kw => {
                self.pos += 1;
                Ok(())
            }
            _ => self.fail(&format!("keyword {:?}", kw)),
        }
    }

    fn eat_keyword(&mut self, kw: &str) -> bool {
        matches!(self.peek(), Some(Spanned { tok: Tok::Ident(s), .. }) if s == kw)
            && {
                self.pos += 1;
                true
            }
    }

    fn take_punct(&mut self, c: char) -> Result<(), ParseError> {
        match self.peek() {
            Some(Spanned { tok: Tok::Punct(p), .. }) if *p == c => {
                self.pos += 1;
                Ok(())
            }
            _ => self.fail(&format!("{:?}", c)),
        }
    }

    fn eat_punct(&mut self, c: char) -> bool {
        matches!(self.peek(), Some(Spanned { tok: Tok::Punct(p), .. }) if *p == c)
            && {
                self.pos += 1;
                true
            }
    }

    fn take_string(&mut self) -> Result<(String, usize, usize), ParseError> {
        match self.peek() {
            Some(Spanned { tok: Tok::Str(s), line, col }) => {
                let r = (s.clone(), *line, *col);
                self.pos += 1;
                Ok(r)
            }
            _ => self.fail("quoted string"),
        }
    }

    fn group(&mut self) -> Result<GroupSpec, ParseError> {
        self.take_keyword("group")?;
        let name = self.take_ident()?;
        self.take_punct('{')?;
        self.take_keyword("generators")?;
        let mut names = vec![self.take_ident()?];
        while self.eat_punct(',') {
            names.push(self.take_ident()?);
        }
        self.take_punct(';')?;
        let (line, col) = self.here();
        let alphabet = Alphabet::new(names).map_err(|source| ParseError::Word { line, col, source })?;

        let mut commute = Vec::new();
        let mut involutions = false;
        let mut relators = Vec::new();
        loop {
            if self.eat_punct('}') {
                break;
            }
            if self.eat_keyword("commute") {
                loop {
                    self.take_punct('(')?;
                    let (l1, c1) = self.here();
                    let x = self.take_ident()?;
                    self.take_punct(',')?;
                    let (l2, c2) = self.here();
                    let y = self.take_ident()?;
                    self.take_punct(')')?;
                    let xi = alphabet.index_of(&x).ok_or(ParseError::UnknownGenerator {
                        line: l1,
                        col: c1,
                        name: x,
                    })?;
                    let yi = alphabet.index_of(&y).ok_or(ParseError::UnknownGenerator {
                        line: l2,
                        col: c2,
                        name: y,
                    })?;
                    if xi == yi {
                        return Err(ParseError::Invalid {
                            line: l1,
                            col: c1,
                            msg: "a generator always commutes with itself".into(),
                        });
                    }
                    commute.push((xi.min(yi), xi.max(yi)));
                    if !self.eat_punct(',') {
                        break;
                    }
                }
                self.take_punct(';')?;
            } else if self.eat_keyword("involutions") {
                involutions = true;
                self.take_punct(';')?;
            } else if self.eat_keyword("relators") {
                loop {
                    let (text, line, col) = self.take_string()?;
                    let w = alphabet
                        .parse_word(&text)
                        .map_err(|source| ParseError::Word { line, col, source })?;
                    relators.push(w);
                    if !self.eat_punct(',') {
                        break;
                    }
                }
                self.take_punct(';')?;
            } else {
                return self.fail("'commute', 'involutions', 'relators', or '}'");
            }
        }
        commute.sort();
        commute.dedup();
        Ok(GroupSpec { name, alphabet, commute, involutions, relators })
    }

    fn space(&mut self, groups: &[GroupSpec]) -> Result<SpaceSpec, ParseError> {
        self.take_keyword("space")?;
        self.space_expr(groups)
    }

    fn space_expr(&mut self, groups: &[GroupSpec]) -> Result<SpaceSpec, ParseError> {
        let (line, col) = self.here();
        let kind = self.take_ident()?;
        match kind.as_str() {
            "cayley" => {
                self.take_punct('(')?;
                let (l, c) = self.here();
                let gname = self.take_ident()?;
                self.take_punct(')')?;
                let group = groups
                    .iter()
                    .find(|g| g.name == gname)
                    .cloned()
                    .ok_or(ParseError::UnknownGroup { line: l, col: c, name: gname })?;
                Ok(SpaceSpec::Cayley { group })
            }
            "cusped" => {
                self.take_punct('(')?;
                let (l, c) = self.here();
                let gname = self.take_ident()?;
                self.take_punct(')')?;
                let group = groups
                    .iter()
                    .find(|g| g.name == gname)
                    .cloned()
                    .ok_or(ParseError::UnknownGroup { line: l, col: c, name: gname })?;
                self.take_punct('{')?;
                let mut peripherals = Vec::new();
                loop {
                    if self.eat_punct('}') {
                        break;
                    }
                    self.take_keyword("peripheral")?;
                    self.take_punct('<')?;
                    let mut fam = Vec::new();
                    loop {
                        let (l2, c2) = self.here();
                        let gen = self.take_ident()?;
                        let gi = group.alphabet.index_of(&gen).ok_or(
                            ParseError::UnknownGenerator { line: l2, col: c2, name: gen },
                        )?;
                        fam.push(gi);
                        if !self.eat_punct(',') {
                            break;
                        }
                    }
                    self.take_punct('>')?;
                    self.take_punct(';')?;
                    fam.sort();
                    fam.dedup();
                    peripherals.push(fam);
                }
                if peripherals.is_empty() {
                    return Err(ParseError::Invalid {
                        line,
                        col,
                        msg: "cusped space needs at least one peripheral family".into(),
                    });
                }
                Ok(SpaceSpec::Cusped { group, peripherals })
            }
            "quotient" => {
                self.take_punct('(')?;
                let base = self.space_expr(groups)?;
                self.take_punct(')')?;
                self.take_punct('{')?;
                let alphabet = base.group().alphabet.clone();
                let mut normals = Vec::new();
                loop {
                    if self.eat_punct('}') {
                        break;
                    }
                    self.take_keyword("normal")?;
                    loop {
                        let (text, l2, c2) = self.take_string()?;
                        let w = alphabet
                            .parse_word(&text)
                            .map_err(|source| ParseError::Word { line: l2, col: c2, source })?;
                        if w.free_reduce().is_empty() {
                            return Err(ParseError::Invalid {
                                line: l2,
                                col: c2,
                                msg: "normal generator reduces to the identity".into(),
                            });
                        }
                        normals.push(w);
                        if !self.eat_punct(',') {
                            break;
                        }
                    }
                    self.take_punct(';')?;
                }
                if normals.is_empty() {
                    return Err(ParseError::Invalid {
                        line,
                        col,
                        msg: "quotient needs at least one normal generator".into(),
                    });
                }
                Ok(SpaceSpec::Quotient { base: Box::new(base), normals })
            }
            _ => Err(ParseError::Unexpected {
                line,
                col,
                expected: "'cayley', 'cusped', or 'quotient'".into(),
                found: kind,
            }),
        }
    }
}

/// Parse a document containing exactly one group block.
pub fn parse_group_spec(text: &str) -> Result<GroupSpec, ParseError> {
    let mut p = Parser { toks: lex(text)?, pos: 0 };
    let g = p.group()?;
    if p.peek().is_some() {
        return p.fail("end of input");
    }
    Ok(g)
}

/// Parse a document of group blocks followed by one space declaration.
pub fn parse_space_spec(text: &str) -> Result<SpaceSpec, ParseError> {
    let mut p = Parser { toks: lex(text)?, pos: 0 };
    let mut groups = Vec::new();
    loop {
        match p.peek() {
            Some(Spanned { tok: Tok::Ident(s), .. }) if s == "group" => {
                groups.push(p.group()?);
            }
            Some(Spanned { tok: Tok::Ident(s), .. }) if s == "space" => {
                let sp = p.space(&groups)?;
                if p.peek().is_some() {
                    return p.fail("end of input");
                }
                return Ok(sp);
            }
            None => return Err(ParseError::NoSpace),
            _ => return p.fail("'group' or 'space'"),
        }
    }
}

pub fn print_group_spec(g: &GroupSpec) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "group {} {{", g.name);
    let _ = writeln!(out, "  generators {};", g.alphabet.names().join(", "));
    if !g.commute.is_empty() {
        let pairs: Vec<String> = g
            .commute
            .iter()
            .map(|&(x, y)| format!("({}, {})", g.alphabet.name(x), g.alphabet.name(y)))
            .collect();
        let _ = writeln!(out, "  commute {};", pairs.join(", "));
    }
    if g.involutions {
        let _ = writeln!(out, "  involutions;");
    }
    if !g.relators.is_empty() {
        let rs: Vec<String> = g
            .relators
            .iter()
            .map(|w| format!("\"{}\"", g.alphabet.print_word(w)))
            .collect();
        let _ = writeln!(out, "  relators {};", rs.join(", "));
    }
    let _ = writeln!(out, "}}");
    out
}

fn print_space_expr(s: &SpaceSpec) -> String {
    match s {
        SpaceSpec::Cayley { group } => format!("cayley({})", group.name),
        SpaceSpec::Cusped { group, peripherals } => {
            let mut out = format!("cusped({}) {{", group.name);
            for fam in peripherals {
                let names: Vec<&str> = fam.iter().map(|&g| group.alphabet.name(g)).collect();
                let _ = write!(out, " peripheral <{}>;", names.join(", "));
            }
            out.push_str(" }");
            out
        }
        SpaceSpec::Quotient { base, normals } => {
            let alphabet = &base.group().alphabet;
            let mut out = format!("quotient({}) {{ normal ", print_space_expr(base));
            let ns: Vec<String> = normals
                .iter()
                .map(|w| format!("\"{}\"", alphabet.print_word(w)))
                .collect();
            let _ = write!(out, "{}; }}", ns.join(", "));
            out
        }
    }
}

/// Canonical document text for a space: group blocks, then the space line.
/// parse_space_spec(print_space_spec(s)) == s.
pub fn print_space_spec(s: &SpaceSpec) -> String {
    fn collect_groups<'a>(s: &'a SpaceSpec, out: &mut Vec<&'a GroupSpec>) {
        match s {
            SpaceSpec::Cayley { group } | SpaceSpec::Cusped { group, .. } => {
                if !out.iter().any(|g| g.name == group.name) {
                    out.push(group);
                }
            }
            SpaceSpec::Quotient { base, .. } => collect_groups(base, out),
        }
    }
    let mut groups = Vec::new();
    collect_groups(s, &mut groups);
    let mut out = String::new();
    for g in groups {
        out.push_str(&print_group_spec(g));
    }
    let _ = writeln!(out, "space {}", print_space_expr(s));
    out
}

/// Common ready-made specs used across tests and experiments.
pub mod stock {
    use super::*;

    pub fn free2() -> GroupSpec {
        parse_group_spec("group F { generators a, b; }").unwrap()
    }

    pub fn grid() -> GroupSpec {
        parse_group_spec("group Z2 { generators a, b; commute (a, b); }").unwrap()
    }

    pub fn raag_path() -> GroupSpec {
        parse_group_spec(
            "group P { generators a, b, c; commute (a, b), (b, c); }",
        )
        .unwrap()
    }

    pub fn cayley(g: GroupSpec) -> SpaceSpec {
        SpaceSpec::Cayley { group: g }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_minimal_group() {
        let g = parse_group_spec("group F { generators a, b; }").unwrap();
        assert_eq!(g.name, "F");
        assert_eq!(g.alphabet.rank(), 2);
        assert!(g.commute.is_empty() && !g.involutions && g.relators.is_empty());
    }

    #[test]
    fn parses_full_group_block() {
        let g = parse_group_spec(
            r#"group W {
                 generators s, t, u;
                 commute (s, t), (t, u);
                 involutions;
                 relators "stst", "s t u";
               }"#,
        )
        .unwrap();
        assert_eq!(g.commute, vec![(0, 1), (1, 2)]);
        assert!(g.involutions);
        assert_eq!(g.relators.len(), 2);
        assert_eq!(g.relators[1].len(), 3);
    }

    #[test]
    fn parses_space_forms() {
        let text = r#"
            group F { generators a, b; }
            space cusped(F) { peripheral <a>; }
        "#;
        match parse_space_spec(text).unwrap() {
            SpaceSpec::Cusped { peripherals, .. } => assert_eq!(peripherals, vec![vec![0]]),
            other => panic!("wrong space: {:?}", other),
        }

        let text = r#"
            group F { generators a, b; }
            space quotient(cayley(F)) { normal "a^2", "b^2", "abab"; }
        "#;
        match parse_space_spec(text).unwrap() {
            SpaceSpec::Quotient { normals, .. } => assert_eq!(normals.len(), 3),
            other => panic!("wrong space: {:?}", other),
        }
    }

    #[test]
    fn errors_carry_line_and_column() {
        let err = parse_group_spec("group F {\n  generators a b;\n}").unwrap_err();
        match err {
            ParseError::Unexpected { line, col, .. } => {
                assert_eq!(line, 2);
                assert!(col > 1);
            }
            other => panic!("unexpected error {:?}", other),
        }
        let err = parse_space_spec("group F { generators a; }\nspace cayley(G)").unwrap_err();
        assert!(matches!(err, ParseError::UnknownGroup { line: 2, .. }));
    }

    #[test]
    fn rejects_identity_normal_generator() {
        let err = parse_space_spec(
            "group F { generators a, b; } space quotient(cayley(F)) { normal \"a a'\"; }",
        )
        .unwrap_err();
        assert!(matches!(err, ParseError::Invalid { .. }));
    }

    #[test]
    fn roundtrip_group_specs() {
        let texts = [
            "group F { generators a, b; }",
            "group Z2 { generators a, b; commute (a, b); }",
            "group W { generators s, t; involutions; relators \"stst\"; }",
            "group Q { generators a, b; relators \"a^3ba^2b'aba'b'^3\"; }",
        ];
        for t in texts {
            let g = parse_group_spec(t).unwrap();
            assert_eq!(parse_group_spec(&print_group_spec(&g)).unwrap(), g);
        }
    }

    #[test]
    fn roundtrip_space_specs() {
        let texts = [
            "group F { generators a, b; } space cayley(F)",
            "group F { generators a, b; } space cusped(F) { peripheral <a>; peripheral <b>; }",
            "group F { generators a, b; } space quotient(quotient(cayley(F)) { normal \"a\"; }) { normal \"b^3\"; }",
        ];
        for t in texts {
            let s = parse_space_spec(t).unwrap();
            assert_eq!(parse_space_spec(&print_space_spec(&s)).unwrap(), s);
        }
    }

    #[test]
    fn comments_are_ignored(){
        let g = parse_group_spec("# header\ngroup F { # gens\n generators a, b; }").unwrap();
        assert_eq!(g.alphabet.rank(), 2);
    }
}
