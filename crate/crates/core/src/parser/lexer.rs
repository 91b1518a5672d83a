use super::ParseError;

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum Tok {
    /// Identifier or keyword; may contain `/` for property paths and a
    /// leading `$` for nested options.
    Ident(String),
    Str(String),
    Num(String),
    LParen,
    RParen,
    Comma,
    Equals,
    Eof,
}

impl Tok {
    pub(crate) fn describe(&self) -> String {
        match self {
            Tok::Ident(s) => format!("`{s}`"),
            Tok::Str(_) => "string literal".into(),
            Tok::Num(n) => format!("number `{n}`"),
            Tok::LParen => "`(`".into(),
            Tok::RParen => "`)`".into(),
            Tok::Comma => "`,`".into(),
            Tok::Equals => "`=`".into(),
            Tok::Eof => "end of input".into(),
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Token {
    pub tok: Tok,
    /// Character offset of the first character.
    pub pos: usize,
}

fn is_ident_start(c: char) -> bool {
    c.is_alphabetic() || c == '_' || c == '$'
}

fn is_ident_char(c: char) -> bool {
    c.is_alphanumeric() || c == '_' || c == '/'
}

pub(crate) fn tokenize(input: &str) -> Result<Vec<Token>, ParseError> {
    let chars: Vec<char> = input.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            i += 1;
            continue;
        }
        let start = i;
        let tok = match c {
            '(' => {
                i += 1;
                Tok::LParen
            }
            ')' => {
                i += 1;
                Tok::RParen
            }
            ',' => {
                i += 1;
                Tok::Comma
            }
            '=' => {
                i += 1;
                Tok::Equals
            }
            '\'' => {
                let mut s = String::new();
                i += 1;
                loop {
                    match chars.get(i) {
                        None => {
                            return Err(ParseError::new(
                                input,
                                start,
                                "closing `'`",
                                "unterminated string literal",
                            ))
                        }
                        Some('\'') if chars.get(i + 1) == Some(&'\'') => {
                            s.push('\'');
                            i += 2;
                        }
                        Some('\'') => {
                            i += 1;
                            break;
                        }
                        Some(&ch) => {
                            s.push(ch);
                            i += 1;
                        }
                    }
                }
                Tok::Str(s)
            }
            c if c.is_ascii_digit() || c == '-' || c == '+' || c == '.' => {
                let mut s = String::new();
                s.push(c);
                i += 1;
                while let Some(&ch) = chars.get(i) {
                    if ch.is_ascii_alphanumeric() || ch == '.' || ch == '+' || ch == '-' {
                        s.push(ch);
                        i += 1;
                    } else {
                        break;
                    }
                }
                Tok::Num(s)
            }
            c if is_ident_start(c) => {
                let mut s = String::new();
                s.push(c);
                i += 1;
                while let Some(&ch) = chars.get(i) {
                    if is_ident_char(ch) {
                        s.push(ch);
                        i += 1;
                    } else {
                        break;
                    }
                }
                Tok::Ident(s)
            }
            other => {
                return Err(ParseError::new(
                    input,
                    start,
                    "identifier, literal or `(`",
                    format!("unexpected character `{other}`"),
                ))
            }
        };
        out.push(Token { tok, pos: start });
    }
    out.push(Token {
        tok: Tok::Eof,
        pos: chars.len(),
    });
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokenizes_escaped_quotes_and_positions() {
        let toks = tokenize("contains(Name,'o''brien phone')").unwrap();
        assert_eq!(toks[0].tok, Tok::Ident("contains".into()));
        assert_eq!(toks[4].tok, Tok::Str("o'brien phone".into()));
        assert_eq!(toks[4].pos, 14);
        assert_eq!(toks.last().unwrap().tok, Tok::Eof);
    }

    #[test]
    fn unterminated_string_points_at_opening_quote() {
        let err = tokenize("Name eq 'abc").unwrap_err();
        assert_eq!(err.position, 8);
    }

    #[test]
    fn positions_count_characters_not_bytes() {
        let toks = tokenize("'é' eq x").unwrap();
        assert_eq!(toks[1].pos, 4);
    }
}
