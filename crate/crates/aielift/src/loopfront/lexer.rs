//! Tokeniser for the `.f90omp` input language.
//!
//! The language is line-oriented: newlines end statements, `!` starts a
//! comment unless the line is an `!$omp` directive, and keywords and
//! identifiers are case-insensitive (lowered here).

use crate::diag::{Diagnostic, Pos};

#[derive(Debug, Clone, PartialEq)]
pub enum TokKind {
    /// Lower-cased identifier or keyword.
    Ident(String),
    /// Numeric literal; `is_int` when the spelling has no `.` or exponent.
    Num { raw: f64, is_int: bool },
    /// Start of an OpenMP directive line (`!$omp`).
    OmpSentinel,
    LParen,
    RParen,
    Comma,
    Colon,
    DoubleColon,
    Eq,
    Plus,
    Minus,
    Star,
    Slash,
    Newline,
    Eof,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Token {
    pub kind: TokKind,
    pub pos: Pos,
}

pub fn lex(source: &str) -> Result<Vec<Token>, Diagnostic> {
    let mut toks = Vec::new();
    let mut last_was_newline = true; // collapse blank lines
    for (lineno, line) in source.lines().enumerate() {
        let line_no = lineno as u32 + 1;
        lex_line(line, line_no, &mut toks, &mut last_was_newline)?;
    }
    let end = Pos::new(source.lines().count().max(1) as u32, 1);
    if !last_was_newline {
        toks.push(Token { kind: TokKind::Newline, pos: end });
    }
    toks.push(Token { kind: TokKind::Eof, pos: end });
    Ok(toks)
}

fn lex_line(
    line: &str,
    line_no: u32,
    toks: &mut Vec<Token>,
    last_was_newline: &mut bool,
) -> Result<(), Diagnostic> {
    let bytes = line.as_bytes();
    let mut i = 0;
    let mut emitted = false;
    while i < bytes.len() {
        let c = bytes[i] as char;
        let pos = Pos::new(line_no, i as u32 + 1);
        match c {
            ' ' | '\t' | '\r' => {
                i += 1;
            }
            '!' => {
                // Either an OpenMP sentinel or a comment to end of line.
                let rest = &line[i..];
                let lowered = rest.to_ascii_lowercase();
                if lowered.starts_with("!$omp") {
                    toks.push(Token { kind: TokKind::OmpSentinel, pos });
                    emitted = true;
                    i += "!$omp".len();
                } else {
                    break;
                }
            }
            '(' => push_simple(toks, TokKind::LParen, pos, &mut i, &mut emitted),
            ')' => push_simple(toks, TokKind::RParen, pos, &mut i, &mut emitted),
            ',' => push_simple(toks, TokKind::Comma, pos, &mut i, &mut emitted),
            '=' => push_simple(toks, TokKind::Eq, pos, &mut i, &mut emitted),
            '+' => push_simple(toks, TokKind::Plus, pos, &mut i, &mut emitted),
            '-' => push_simple(toks, TokKind::Minus, pos, &mut i, &mut emitted),
            '*' => push_simple(toks, TokKind::Star, pos, &mut i, &mut emitted),
            '/' => push_simple(toks, TokKind::Slash, pos, &mut i, &mut emitted),
            ':' => {
                if bytes.get(i + 1) == Some(&b':') {
                    toks.push(Token { kind: TokKind::DoubleColon, pos });
                    i += 2;
                } else {
                    toks.push(Token { kind: TokKind::Colon, pos });
                    i += 1;
                }
                emitted = true;
            }
            _ if c.is_ascii_alphabetic() || c == '_' || c == '$' => {
                let start = i;
                while i < bytes.len() {
                    let c = bytes[i] as char;
                    if c.is_ascii_alphanumeric() || c == '_' || c == '$' {
                        i += 1;
                    } else {
                        break;
                    }
                }
                let word = line[start..i].to_ascii_lowercase();
                toks.push(Token { kind: TokKind::Ident(word), pos });
                emitted = true;
            }
            _ if c.is_ascii_digit() || (c == '.' && next_is_digit(bytes, i)) => {
                let start = i;
                let mut is_int = true;
                while i < bytes.len() && (bytes[i] as char).is_ascii_digit() {
                    i += 1;
                }
                if i < bytes.len() && bytes[i] == b'.' {
                    is_int = false;
                    i += 1;
                    while i < bytes.len() && (bytes[i] as char).is_ascii_digit() {
                        i += 1;
                    }
                }
                if i < bytes.len() && matches!(bytes[i], b'e' | b'E') {
                    // Exponent only when followed by digits (optionally signed);
                    // otherwise the `e` starts an identifier such as `end`.
                    let mut j = i + 1;
                    if j < bytes.len() && matches!(bytes[j], b'+' | b'-') {
                        j += 1;
                    }
                    if j < bytes.len() && (bytes[j] as char).is_ascii_digit() {
                        is_int = false;
                        i = j;
                        while i < bytes.len() && (bytes[i] as char).is_ascii_digit() {
                            i += 1;
                        }
                    }
                }
                let text = &line[start..i];
                let raw: f64 = text.parse().map_err(|_| {
                    Diagnostic::new(pos, format!("malformed numeric literal `{text}`"))
                })?;
                toks.push(Token { kind: TokKind::Num { raw, is_int }, pos });
                emitted = true;
            }
            _ => {
                return Err(Diagnostic::new(pos, format!("unexpected character `{c}`")));
            }
        }
    }
    if emitted {
        toks.push(Token {
            kind: TokKind::Newline,
            pos: Pos::new(line_no, line.len() as u32 + 1),
        });
        *last_was_newline = true;
    }
    Ok(())
}

fn push_simple(toks: &mut Vec<Token>, kind: TokKind, pos: Pos, i: &mut usize, emitted: &mut bool) {
    toks.push(Token { kind, pos });
    *i += 1;
    *emitted = true;
}

fn next_is_digit(bytes: &[u8], i: usize) -> bool {
    bytes.get(i + 1).is_some_and(|b| (*b as char).is_ascii_digit())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn kinds(src: &str) -> Vec<TokKind> {
        lex(src).unwrap().into_iter().map(|t| t.kind).collect()
    }

    #[test]
    fn directive_line_is_tokenised() {
        let ks = kinds("!$omp target parallel do private(t)");
        assert_eq!(ks[0], TokKind::OmpSentinel);
        assert!(ks.contains(&TokKind::Ident("private".into())));
    }

    #[test]
    fn plain_comment_is_skipped() {
        let ks = kinds("a = 1 ! trailing comment\n! whole line\nb = 2");
        let idents: Vec<_> = ks
            .iter()
            .filter_map(|k| match k {
                TokKind::Ident(s) => Some(s.as_str()),
                _ => None,
            })
            .collect();
        assert_eq!(idents, vec!["a", "b"]);
    }

    #[test]
    fn keywords_are_case_insensitive() {
        let ks = kinds("DO I=1, 128");
        assert_eq!(ks[0], TokKind::Ident("do".into()));
        assert_eq!(ks[1], TokKind::Ident("i".into()));
    }

    #[test]
    fn numbers_parse_with_exponent_and_dot() {
        let ks = kinds("x = 1.5e-3 + 100 + .25");
        let nums: Vec<_> = ks
            .iter()
            .filter_map(|k| match k {
                TokKind::Num { raw, is_int } => Some((*raw, *is_int)),
                _ => None,
            })
            .collect();
        assert_eq!(nums, vec![(1.5e-3, false), (100.0, true), (0.25, false)]);
    }

    #[test]
    fn enddo_is_not_an_exponent() {
        // `end do` after a digit-free identifier must stay an identifier.
        let ks = kinds("do k=1,4\nend do");
        assert!(ks.contains(&TokKind::Ident("end".into())));
    }

    #[test]
    fn rejects_stray_characters() {
        assert!(lex("a = b ; c").is_err());
    }
}
