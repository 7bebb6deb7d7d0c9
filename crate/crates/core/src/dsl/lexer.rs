use crate::error::{ParseError, ParseErrorKind};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TokenKind {
    Ident(String),
    Str(String),
    Int(u64),
    LBrace,
    RBrace,
    LParen,
    RParen,
    Comma,
    Dot,
    Equals,
    Eof,
}

impl TokenKind {
    pub fn describe(&self) -> String {
        match self {
            TokenKind::Ident(s) => format!("identifier `{s}`"),
            TokenKind::Str(s) => format!("string {s:?}"),
            TokenKind::Int(n) => format!("integer {n}"),
            TokenKind::LBrace => "`{`".into(),
            TokenKind::RBrace => "`}`".into(),
            TokenKind::LParen => "`(`".into(),
            TokenKind::RParen => "`)`".into(),
            TokenKind::Comma => "`,`".into(),
            TokenKind::Dot => "`.`".into(),
            TokenKind::Equals => "`=`".into(),
            TokenKind::Eof => "end of input".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub kind: TokenKind,
    pub line: usize,
    pub column: usize,
}

pub fn is_ident(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

pub fn tokenize(source: &str) -> Result<Vec<Token>, ParseError> {
    let mut tokens = Vec::new();
    let mut chars = source.chars().peekable();
    let (mut line, mut column) = (1usize, 1usize);

    macro_rules! bump {
        () => {{
            let c = chars.next();
            if c == Some('\n') {
                line += 1;
                column = 1;
            } else if c.is_some() {
                column += 1;
            }
            c
        }};
    }

    while let Some(&c) = chars.peek() {
        let (tl, tc) = (line, column);
        let kind = match c {
            c if c.is_whitespace() => {
                bump!();
                continue;
            }
            '#' => {
                while !matches!(chars.peek(), None | Some('\n')) {
                    bump!();
                }
                continue;
            }
            '{' | '}' | '(' | ')' | ',' | '.' | '=' => {
                bump!();
                match c {
                    '{' => TokenKind::LBrace,
                    '}' => TokenKind::RBrace,
                    '(' => TokenKind::LParen,
                    ')' => TokenKind::RParen,
                    ',' => TokenKind::Comma,
                    '.' => TokenKind::Dot,
                    _ => TokenKind::Equals,
                }
            }
            '"' => {
                bump!();
                let mut s = String::new();
                loop {
                    match bump!() {
                        None | Some('\n') => {
                            return Err(ParseError::new(
                                ParseErrorKind::Syntax,
                                tl,
                                tc,
                                "unterminated string literal",
                            ))
                        }
                        Some('"') => break,
                        Some('\\') => match bump!() {
                            Some('"') => s.push('"'),
                            Some('\\') => s.push('\\'),
                            Some('n') => s.push('\n'),
                            other => {
                                return Err(ParseError::new(
                                    ParseErrorKind::Syntax,
                                    line,
                                    column,
                                    format!("invalid escape {other:?}"),
                                ))
                            }
                        },
                        Some(ch) => s.push(ch),
                    }
                }
                TokenKind::Str(s)
            }
            c if c.is_ascii_digit() => {
                let mut s = String::new();
                while let Some(&d) = chars.peek() {
                    if !d.is_ascii_digit() {
                        break;
                    }
                    s.push(d);
                    bump!();
                }
                if matches!(chars.peek(), Some(c) if c.is_ascii_alphabetic() || *c == '_') {
                    return Err(ParseError::new(
                        ParseErrorKind::Syntax,
                        tl,
                        tc,
                        "identifiers cannot start with a digit",
                    ));
                }
                let n = s.parse::<u64>().map_err(|_| {
                    ParseError::new(ParseErrorKind::Syntax, tl, tc, "integer literal out of range")
                })?;
                TokenKind::Int(n)
            }
            c if c.is_ascii_alphabetic() || c == '_' => {
                let mut s = String::new();
                while let Some(&d) = chars.peek() {
                    if !(d.is_ascii_alphanumeric() || d == '_') {
                        break;
                    }
                    s.push(d);
                    bump!();
                }
                TokenKind::Ident(s)
            }
            other => {
                return Err(ParseError::new(
                    ParseErrorKind::Syntax,
                    tl,
                    tc,
                    format!("unexpected character {other:?}"),
                ))
            }
        };
        tokens.push(Token {
            kind,
            line: tl,
            column: tc,
        });
    }
    tokens.push(Token {
        kind: TokenKind::Eof,
        line,
        column,
    });
    Ok(tokens)
}
