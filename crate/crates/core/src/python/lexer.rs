//! A small Python lexer used for token accounting.
//!
//! Token conventions: comments, newlines, indentation and line
//! continuations produce no tokens; each string literal (prefix included,
//! triple-quoted or not) is one token; operators are matched greedily.
//! These match CPython's `tokenize` once NEWLINE/NL/COMMENT/INDENT/DEDENT/
//! ENDMARKER are discarded.

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("lex-failure at byte {offset}: {message}")]
pub struct LexError {
    pub offset: usize,
    pub message: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TokenKind {
    Name,
    Number,
    String,
    Op,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Token<'a> {
    pub kind: TokenKind,
    pub text: &'a str,
    pub offset: usize,
}

const OPERATORS: &[&str] = &[
    "**=", "//=", ">>=", "<<=", "...", "!=", "%=", "&=", "**", "*=", "+=", "-=", "->", "//", "/=",
    ":=", "<<", "<=", "==", ">=", ">>", "@=", "^=", "|=", "%", "&", "(", ")", "*", "+", ",", "-",
    ".", "/", ":", ";", "<", "=", ">", "@", "[", "]", "^", "{", "|", "}", "~",
];

pub fn tokenize(src: &str) -> Result<Vec<Token<'_>>, LexError> {
    let bytes = src.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        match c {
            b' ' | b'\t' | b'\r' | b'\n' | b'\x0c' => i += 1,
            b'\\' => {
                // explicit line joining
                let rest = &src[i + 1..];
                if rest.starts_with("\r\n") {
                    i += 3;
                } else if rest.starts_with('\n') {
                    i += 2;
                } else {
                    return Err(err(i, "stray backslash"));
                }
            }
            b'#' => {
                while i < bytes.len() && bytes[i] != b'\n' {
                    i += 1;
                }
            }
            b'0'..=b'9' => {
                let end = scan_number(bytes, i);
                out.push(tok(src, TokenKind::Number, i, end));
                i = end;
            }
            b'.' if bytes.get(i + 1).is_some_and(u8::is_ascii_digit) => {
                let end = scan_number(bytes, i);
                out.push(tok(src, TokenKind::Number, i, end));
                i = end;
            }
            b'\'' | b'"' => {
                let end = scan_string(src, i, i)?;
                out.push(tok(src, TokenKind::String, i, end));
                i = end;
            }
            _ => {
                let ch = src[i..].chars().next().expect("in bounds");
                if ch == '_' || ch.is_alphabetic() {
                    let mut end = i + ch.len_utf8();
                    for next in src[end..].chars() {
                        if next == '_' || next.is_alphanumeric() {
                            end += next.len_utf8();
                        } else {
                            break;
                        }
                    }
                    let word = &src[i..end];
                    let quote = bytes.get(end).copied();
                    if is_string_prefix(word) && matches!(quote, Some(b'\'') | Some(b'"')) {
                        let str_end = scan_string(src, i, end)?;
                        out.push(tok(src, TokenKind::String, i, str_end));
                        i = str_end;
                    } else {
                        out.push(tok(src, TokenKind::Name, i, end));
                        i = end;
                    }
                } else if let Some(op) = OPERATORS.iter().find(|op| src[i..].starts_with(**op)) {
                    out.push(tok(src, TokenKind::Op, i, i + op.len()));
                    i += op.len();
                } else {
                    return Err(err(i, &format!("unexpected character {ch:?}")));
                }
            }
        }
    }
    Ok(out)
}

/// Number of lexical tokens in `src`.
pub fn count_tokens(src: &str) -> Result<usize, LexError> {
    tokenize(src).map(|t| t.len())
}

fn tok(src: &str, kind: TokenKind, start: usize, end: usize) -> Token<'_> {
    Token {
        kind,
        text: &src[start..end],
        offset: start,
    }
}

fn err(offset: usize, message: &str) -> LexError {
    LexError {
        offset,
        message: message.to_string(),
    }
}

fn is_string_prefix(word: &str) -> bool {
    let lower = word.to_ascii_lowercase();
    matches!(
        lower.as_str(),
        "r" | "u" | "b" | "f" | "br" | "rb" | "fr" | "rf"
    )
}

fn scan_number(bytes: &[u8], start: usize) -> usize {
    let mut i = start;
    while i < bytes.len() {
        let c = bytes[i];
        if c.is_ascii_alphanumeric() || c == b'_' || c == b'.' {
            // exponent sign: 1e-5, 2E+3 (not hex digits like 0xe)
            if (c == b'e' || c == b'E')
                && !is_hex_literal(bytes, start)
                && matches!(bytes.get(i + 1), Some(b'+') | Some(b'-'))
            {
                i += 2;
                continue;
            }
            i += 1;
        } else {
            break;
        }
    }
    i
}

fn is_hex_literal(bytes: &[u8], start: usize) -> bool {
    bytes.get(start) == Some(&b'0') && matches!(bytes.get(start + 1), Some(b'x') | Some(b'X'))
}

/// Scans a string literal whose prefix starts at `start` and whose opening
/// quote is at `quote_at`. Returns the end offset (exclusive).
fn scan_string(src: &str, start: usize, quote_at: usize) -> Result<usize, LexError> {
    let bytes = src.as_bytes();
    let q = bytes[quote_at];
    let triple = bytes.get(quote_at + 1) == Some(&q) && bytes.get(quote_at + 2) == Some(&q);
    let mut i = if triple { quote_at + 3 } else { quote_at + 1 };
    while i < bytes.len() {
        let c = bytes[i];
        if c == b'\\' {
            i += 2;
            continue;
        }
        if triple {
            if c == q && bytes.get(i + 1) == Some(&q) && bytes.get(i + 2) == Some(&q) {
                return Ok(i + 3);
            }
        } else if c == q {
            return Ok(i + 1);
        } else if c == b'\n' {
            return Err(err(start, "unterminated string literal"));
        }
        i += 1;
    }
    Err(err(start, "unterminated string literal"))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn kinds(src: &str) -> Vec<(TokenKind, &str)> {
        tokenize(src)
            .unwrap()
            .into_iter()
            .map(|t| (t.kind, t.text))
            .collect()
    }

    #[test]
    fn empty_input_has_no_tokens() {
        assert_eq!(count_tokens("").unwrap(), 0);
    }

    #[test]
    fn one_line_function() {
        // frozen from CPython tokenize with layout tokens discarded
        assert_eq!(count_tokens("def f(): return 1").unwrap(), 7);
    }

    #[test]
    fn comments_do_not_count() {
        let a = "x = 1\ny = x + 2\n";
        let b = "# header\nx = 1  # one\n\n# gap\ny = x + 2\n";
        assert_eq!(count_tokens(a).unwrap(), count_tokens(b).unwrap());
    }

    #[test]
    fn strings_are_single_tokens() {
        let toks = kinds("s = rb'a\\'b' + \"\"\"x\n'y'\n\"\"\" + f\"{a}\"");
        assert_eq!(
            toks,
            vec![
                (TokenKind::Name, "s"),
                (TokenKind::Op, "="),
                (TokenKind::String, "rb'a\\'b'"),
                (TokenKind::Op, "+"),
                (TokenKind::String, "\"\"\"x\n'y'\n\"\"\""),
                (TokenKind::Op, "+"),
                (TokenKind::String, "f\"{a}\""),
            ]
        );
    }

    #[test]
    fn numbers_and_operators() {
        let toks = kinds("a **= 1e-5 + 0xFF // .5 -> ...");
        let texts: Vec<_> = toks.iter().map(|t| t.1).collect();
        assert_eq!(texts, ["a", "**=", "1e-5", "+", "0xFF", "//", ".5", "->", "..."]);
    }

    #[test]
    fn unterminated_string_fails() {
        let e = count_tokens("x = 'abc\n").unwrap_err();
        assert!(e.to_string().starts_with("lex-failure"));
        assert!(count_tokens("s = \"\"\"open").is_err());
    }

    #[test]
    fn invalid_character_fails() {
        assert!(count_tokens("a = $b").is_err());
        assert!(count_tokens("a ? b").is_err());
    }

    #[test]
    fn line_continuation_is_layout() {
        assert_eq!(count_tokens("x = 1 + \\\n    2").unwrap(), 5);
    }
}
