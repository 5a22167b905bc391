use std::fmt;

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Keyword {
    Select,
    With,
    Anonymization,
    From,
    Where,
    Group,
    By,
    Having,
    As,
    Join,
    Using,
    If,
    Then,
    Else,
    And,
    Or,
    Not,
    Null,
    True,
    False,
    Distinct,
    Tablesample,
    Reservoir,
    Rows,
    Partition,
}

const KEYWORDS: &[(&str, Keyword)] = &[
    ("SELECT", Keyword::Select),
    ("WITH", Keyword::With),
    ("ANONYMIZATION", Keyword::Anonymization),
    ("FROM", Keyword::From),
    ("WHERE", Keyword::Where),
    ("GROUP", Keyword::Group),
    ("BY", Keyword::By),
    ("HAVING", Keyword::Having),
    ("AS", Keyword::As),
    ("JOIN", Keyword::Join),
    ("USING", Keyword::Using),
    ("IF", Keyword::If),
    ("THEN", Keyword::Then),
    ("ELSE", Keyword::Else),
    ("AND", Keyword::And),
    ("OR", Keyword::Or),
    ("NOT", Keyword::Not),
    ("NULL", Keyword::Null),
    ("TRUE", Keyword::True),
    ("FALSE", Keyword::False),
    ("DISTINCT", Keyword::Distinct),
    ("TABLESAMPLE", Keyword::Tablesample),
    ("RESERVOIR", Keyword::Reservoir),
    ("ROWS", Keyword::Rows),
    ("PARTITION", Keyword::Partition),
];

impl Keyword {
    pub fn lookup(word: &str) -> Option<Keyword> {
        KEYWORDS.iter().find(|(k, _)| k.eq_ignore_ascii_case(word)).map(|&(_, kw)| kw)
    }

    pub fn as_str(self) -> &'static str {
        KEYWORDS.iter().find(|(_, k)| *k == self).map(|&(s, _)| s).expect("every keyword is listed")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TokenKind {
    Keyword(Keyword),
    Ident(String),
    Int(i64),
    Float(f64),
    Str(String),
    Comma,
    Dot,
    LParen,
    RParen,
    Semicolon,
    Star,
    Plus,
    Minus,
    Slash,
    Eq,
    NotEq,
    Lt,
    LtEq,
    Gt,
    GtEq,
    Eof,
}

impl fmt::Display for TokenKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TokenKind::Keyword(k) => f.write_str(k.as_str()),
            TokenKind::Ident(s) => write!(f, "identifier `{s}`"),
            TokenKind::Int(i) => write!(f, "integer {i}"),
            TokenKind::Float(x) => write!(f, "number {x}"),
            TokenKind::Str(s) => write!(f, "string '{s}'"),
            TokenKind::Comma => f.write_str("`,`"),
            TokenKind::Dot => f.write_str("`.`"),
            TokenKind::LParen => f.write_str("`(`"),
            TokenKind::RParen => f.write_str("`)`"),
            TokenKind::Semicolon => f.write_str("`;`"),
            TokenKind::Star => f.write_str("`*`"),
            TokenKind::Plus => f.write_str("`+`"),
            TokenKind::Minus => f.write_str("`-`"),
            TokenKind::Slash => f.write_str("`/`"),
            TokenKind::Eq => f.write_str("`=`"),
            TokenKind::NotEq => f.write_str("`<>`"),
            TokenKind::Lt => f.write_str("`<`"),
            TokenKind::LtEq => f.write_str("`<=`"),
            TokenKind::Gt => f.write_str("`>`"),
            TokenKind::GtEq => f.write_str("`>=`"),
            TokenKind::Eof => f.write_str("end of input"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Token {
    pub kind: TokenKind,
    /// Byte offset into the query text.
    pub offset: usize,
}

fn lex_err(offset: usize, message: impl Into<String>) -> Error {
    Error::Lex { offset, message: message.into() }
}

/// Splits query text into tokens. Keywords are case-insensitive; `--`
/// starts a comment running to the end of the line.
pub fn tokenize(text: &str) -> Result<Vec<Token>> {
    let bytes = text.as_bytes();
    let mut tokens = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        let start = i;
        let single = |kind| Token { kind, offset: start };
        match c {
            b' ' | b'\t' | b'\n' | b'\r' => {
                i += 1;
                continue;
            }
            b'-' if bytes.get(i + 1) == Some(&b'-') => {
                while i < bytes.len() && bytes[i] != b'\n' {
                    i += 1;
                }
                continue;
            }
            b',' => tokens.push(single(TokenKind::Comma)),
            b'.' if !bytes.get(i + 1).is_some_and(u8::is_ascii_digit) => tokens.push(single(TokenKind::Dot)),
            b'(' => tokens.push(single(TokenKind::LParen)),
            b')' => tokens.push(single(TokenKind::RParen)),
            b';' => tokens.push(single(TokenKind::Semicolon)),
            b'*' => tokens.push(single(TokenKind::Star)),
            b'+' => tokens.push(single(TokenKind::Plus)),
            b'-' => tokens.push(single(TokenKind::Minus)),
            b'/' => tokens.push(single(TokenKind::Slash)),
            b'=' => tokens.push(single(TokenKind::Eq)),
            b'<' | b'>' | b'!' => {
                let next = bytes.get(i + 1).copied();
                let (kind, len) = match (c, next) {
                    (b'<', Some(b'=')) => (TokenKind::LtEq, 2),
                    (b'<', Some(b'>')) => (TokenKind::NotEq, 2),
                    (b'<', _) => (TokenKind::Lt, 1),
                    (b'>', Some(b'=')) => (TokenKind::GtEq, 2),
                    (b'>', _) => (TokenKind::Gt, 1),
                    (b'!', Some(b'=')) => (TokenKind::NotEq, 2),
                    _ => return Err(lex_err(i, "unexpected character `!`")),
                };
                tokens.push(single(kind));
                i += len;
                continue;
            }
            b'\'' => {
                let mut s = String::new();
                i += 1;
                loop {
                    let Some(rel) = text[i..].find('\'') else {
                        return Err(lex_err(start, "unterminated string literal"));
                    };
                    s.push_str(&text[i..i + rel]);
                    i += rel + 1;
                    if bytes.get(i) == Some(&b'\'') {
                        s.push('\'');
                        i += 1;
                    } else {
                        break;
                    }
                }
                tokens.push(Token { kind: TokenKind::Str(s), offset: start });
                continue;
            }
            b'"' => {
                let Some(rel) = text[i + 1..].find('"') else {
                    return Err(lex_err(start, "unterminated quoted identifier"));
                };
                let name = &text[i + 1..i + 1 + rel];
                if name.is_empty() {
                    return Err(lex_err(start, "empty quoted identifier"));
                }
                tokens.push(Token { kind: TokenKind::Ident(name.to_string()), offset: start });
                i += rel + 2;
                continue;
            }
            b'0'..=b'9' | b'.' => {
                let (kind, len) = lex_number(&text[i..], i)?;
                tokens.push(Token { kind, offset: start });
                i += len;
                continue;
            }
            c if c.is_ascii_alphabetic() || c == b'_' => {
                while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                    i += 1;
                }
                let word = &text[start..i];
                let kind = match Keyword::lookup(word) {
                    Some(k) => TokenKind::Keyword(k),
                    None => TokenKind::Ident(word.to_string()),
                };
                tokens.push(Token { kind, offset: start });
                continue;
            }
            _ => {
                let ch = text[i..].chars().next().unwrap_or('?');
                return Err(lex_err(i, format!("unexpected character `{ch}`")));
            }
        }
        i += 1;
    }
    tokens.push(Token { kind: TokenKind::Eof, offset: text.len() });
    Ok(tokens)
}

fn lex_number(s: &str, offset: usize) -> Result<(TokenKind, usize)> {
    let b = s.as_bytes();
    let digits = |mut j: usize| {
        while j < b.len() && b[j].is_ascii_digit() {
            j += 1;
        }
        j
    };
    let mut j = digits(0);
    let mut float = false;
    if b.get(j) == Some(&b'.') {
        float = true;
        j = digits(j + 1);
    }
    if matches!(b.get(j), Some(b'e' | b'E')) {
        let mut k = j + 1;
        if matches!(b.get(k), Some(b'+' | b'-')) {
            k += 1;
        }
        let end = digits(k);
        if end > k {
            float = true;
            j = end;
        }
    }
    let lit = &s[..j];
    if float {
        let x: f64 = lit.parse().map_err(|_| lex_err(offset, format!("malformed number `{lit}`")))?;
        Ok((TokenKind::Float(x), j))
    } else {
        let i: i64 = lit.parse().map_err(|_| lex_err(offset, format!("integer `{lit}` out of range")))?;
        Ok((TokenKind::Int(i), j))
    }
}
