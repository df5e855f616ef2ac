use crate::error::RuleError;

#[derive(Debug, Clone, PartialEq)]
pub enum Tok {
    Ident(String),
    Int(i64),
    Colon,
    Comma,
    Dot,
    LParen,
    RParen,
    LBrace,
    RBrace,
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
    Plus,
    Minus,
    Arrow,
    Assign,
    Semi,
    Newline,
    Eof,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Pos {
    pub line: usize,
    pub column: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Token {
    pub tok: Tok,
    pub pos: Pos,
}

pub fn syntax(pos: Pos, message: impl Into<String>) -> RuleError {
    RuleError::Syntax {
        line: pos.line,
        column: pos.column,
        message: message.into(),
    }
}

/// Splits rule text into tokens. Newlines inside `()`/`{}` are dropped so a
/// statement can span lines while bracketed.
pub fn tokenize(text: &str) -> Result<Vec<Token>, RuleError> {
    let mut out = Vec::new();
    let mut depth = 0usize;
    for (ln, line) in text.lines().enumerate() {
        let chars: Vec<char> = line.chars().collect();
        let mut i = 0;
        while i < chars.len() {
            let c = chars[i];
            let pos = Pos {
                line: ln + 1,
                column: i + 1,
            };
            if c == '#' {
                break;
            }
            if c.is_whitespace() {
                i += 1;
                continue;
            }
            if c.is_ascii_alphabetic() || c == '_' {
                let start = i;
                while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                    i += 1;
                }
                out.push(Token {
                    tok: Tok::Ident(chars[start..i].iter().collect()),
                    pos,
                });
                continue;
            }
            if c.is_ascii_digit() {
                let start = i;
                while i < chars.len() && chars[i].is_ascii_digit() {
                    i += 1;
                }
                let s: String = chars[start..i].iter().collect();
                let v = s
                    .parse::<i64>()
                    .map_err(|_| syntax(pos, format!("integer '{s}' out of range")))?;
                out.push(Token {
                    tok: Tok::Int(v),
                    pos,
                });
                continue;
            }
            let next = chars.get(i + 1).copied();
            let (tok, len) = match (c, next) {
                ('=', Some('=')) => (Tok::Eq, 2),
                ('=', Some('>')) => (Tok::Arrow, 2),
                ('!', Some('=')) => (Tok::Ne, 2),
                ('<', Some('=')) => (Tok::Le, 2),
                ('>', Some('=')) => (Tok::Ge, 2),
                ('=', _) => (Tok::Assign, 1),
                ('<', _) => (Tok::Lt, 1),
                ('>', _) => (Tok::Gt, 1),
                (':', _) => (Tok::Colon, 1),
                (',', _) => (Tok::Comma, 1),
                ('.', _) => (Tok::Dot, 1),
                ('+', _) => (Tok::Plus, 1),
                ('-', _) => (Tok::Minus, 1),
                (';', _) => (Tok::Semi, 1),
                ('(', _) => (Tok::LParen, 1),
                (')', _) => (Tok::RParen, 1),
                ('{', _) => (Tok::LBrace, 1),
                ('}', _) => (Tok::RBrace, 1),
                _ => return Err(syntax(pos, format!("unexpected character '{c}'"))),
            };
            match tok {
                Tok::LParen | Tok::LBrace => depth += 1,
                Tok::RParen | Tok::RBrace => {
                    depth = depth
                        .checked_sub(1)
                        .ok_or_else(|| syntax(pos, "unbalanced closing bracket"))?
                }
                _ => {}
            }
            out.push(Token { tok, pos });
            i += len;
        }
        if depth == 0 {
            out.push(Token {
                tok: Tok::Newline,
                pos: Pos {
                    line: ln + 1,
                    column: chars.len() + 1,
                },
            });
        }
    }
    let end = Pos {
        line: text.lines().count().max(1),
        column: 1,
    };
    if depth != 0 {
        return Err(syntax(end, "unclosed bracket at end of input"));
    }
    out.push(Token {
        tok: Tok::Eof,
        pos: end,
    });
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokens_and_positions() {
        let t = tokenize("forall p: p.Age <= 17 # note\n=> violation").unwrap();
        assert_eq!(t[0].tok, Tok::Ident("forall".into()));
        assert_eq!(t[2].tok, Tok::Colon);
        assert_eq!(t[6].tok, Tok::Le);
        assert_eq!(
            t[6].pos,
            Pos {
                line: 1,
                column: 17
            }
        );
        assert_eq!(t[8].tok, Tok::Newline);
        assert_eq!(t[9].tok, Tok::Arrow);
    }

    #[test]
    fn brackets_join_lines() {
        let t = tokenize("(a ==\n b)").unwrap();
        assert!(!t[..t.len() - 2].iter().any(|x| x.tok == Tok::Newline));
        assert!(tokenize("(a").is_err());
        assert!(tokenize("a $ b").is_err());
    }
}
