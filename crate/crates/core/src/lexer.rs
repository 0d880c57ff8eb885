//! Minimal C-family lexer: comment- and string-aware, no grammar.

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TokenKind {
    Ident,
    Number,
    Str,
    Char,
    Punct,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Token<'a> {
    pub kind: TokenKind,
    pub text: &'a str,
    /// Byte offset into the source.
    pub start: usize,
}

impl Token<'_> {
    pub fn end(&self) -> usize {
        self.start + self.text.len()
    }

    pub fn is_punct(&self, p: &str) -> bool {
        self.kind == TokenKind::Punct && self.text == p
    }

    pub fn is_ident(&self, name: &str) -> bool {
        self.kind == TokenKind::Ident && self.text == name
    }
}

const TWO_CHAR: [&str; 16] = [
    "&&", "||", "->", "::", "==", "!=", "<=", ">=", "++", "--", "+=", "-=", "*=", "/=", "%=", "|=",
];

fn ident_start(c: char) -> bool {
    c == '_' || c == '$' || c.is_alphabetic()
}

fn ident_continue(c: char) -> bool {
    c == '_' || c == '$' || c.is_alphanumeric()
}

pub fn tokenize(src: &str) -> Vec<Token<'_>> {
    let bytes = src.as_bytes();
    let mut tokens = Vec::new();
    let mut i = 0;
    while i < src.len() {
        let c = src[i..].chars().next().unwrap();
        if c.is_whitespace() {
            i += c.len_utf8();
            continue;
        }
        if src[i..].starts_with("//") {
            i = src[i..].find('\n').map_or(src.len(), |n| i + n);
            continue;
        }
        if src[i..].starts_with("/*") {
            i = src[i + 2..].find("*/").map_or(src.len(), |n| i + 2 + n + 2);
            continue;
        }
        let start = i;
        let kind = if src[i..].starts_with("\"\"\"") {
            i = src[i + 3..].find("\"\"\"").map_or(src.len(), |n| i + 3 + n + 3);
            TokenKind::Str
        } else if c == '"' || c == '\'' {
            i += 1;
            while i < src.len() {
                match bytes[i] {
                    b'\\' => i += 2,
                    b'\n' => break,
                    b if b == c as u8 => {
                        i += 1;
                        break;
                    }
                    _ => i += 1,
                }
            }
            i = i.min(src.len());
            // a multi-byte char may have been split by the escape skip
            while !src.is_char_boundary(i) {
                i += 1;
            }
            if c == '"' {
                TokenKind::Str
            } else {
                TokenKind::Char
            }
        } else if ident_start(c) {
            i += src[i..]
                .char_indices()
                .find(|&(_, ch)| !ident_continue(ch))
                .map_or(src.len() - i, |(n, _)| n);
            TokenKind::Ident
        } else if c.is_ascii_digit() {
            i += src[i..]
                .char_indices()
                .find(|&(_, ch)| !(ch.is_ascii_alphanumeric() || ch == '.' || ch == '_'))
                .map_or(src.len() - i, |(n, _)| n);
            TokenKind::Number
        } else {
            let two = src.get(i..i + 2);
            i += match two {
                Some(t) if TWO_CHAR.contains(&t) => 2,
                _ => c.len_utf8(),
            };
            TokenKind::Punct
        };
        tokens.push(Token {
            kind,
            text: &src[start..i],
            start,
        });
    }
    tokens
}

/// Final brace depth, or the token index where depth first went negative.
pub fn brace_balance(tokens: &[Token<'_>]) -> Result<i64, usize> {
    let mut depth = 0i64;
    for (idx, t) in tokens.iter().enumerate() {
        if t.is_punct("{") {
            depth += 1;
        } else if t.is_punct("}") {
            depth -= 1;
            if depth < 0 {
                return Err(idx);
            }
        }
    }
    Ok(depth)
}

pub const CONTROL_KEYWORDS: [&str; 9] = [
    "if", "for", "while", "switch", "catch", "synchronized", "do", "try", "else",
];

const TYPE_KEYWORDS: [&str; 3] = ["class", "interface", "enum"];

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BlockKind {
    Type { name: String },
    Method { name: String },
    Other,
}

/// A `{ ... }` block with the token range of its header and body.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Block {
    pub kind: BlockKind,
    /// Index of the first header token.
    pub header_start: usize,
    /// Index of the opening brace.
    pub open: usize,
    /// Index of the closing brace (or `tokens.len()` when unterminated).
    pub close: usize,
    pub depth: usize,
    pub parent: Option<usize>,
}

/// Header is the run of tokens after the last `;`, `{` or `}` before `open`.
fn header_start(tokens: &[Token<'_>], open: usize) -> usize {
    let mut i = open;
    while i > 0 {
        let t = &tokens[i - 1];
        if t.is_punct(";") || t.is_punct("{") || t.is_punct("}") {
            break;
        }
        i -= 1;
    }
    i
}

/// Header tokens with annotations (`@Name`, `@a.b.Name(...)`) removed.
fn strip_annotations<'t, 'a>(header: &'t [Token<'a>]) -> Vec<&'t Token<'a>> {
    let mut out = Vec::with_capacity(header.len());
    let mut k = 0;
    while k < header.len() {
        if header[k].is_punct("@") && header.get(k + 1).is_some_and(|t| t.kind == TokenKind::Ident) {
            k += 2;
            while k + 1 < header.len() && header[k].is_punct(".") && header[k + 1].kind == TokenKind::Ident {
                k += 2;
            }
            if k < header.len() && header[k].is_punct("(") {
                let mut depth = 0;
                while k < header.len() {
                    if header[k].is_punct("(") {
                        depth += 1;
                    } else if header[k].is_punct(")") {
                        depth -= 1;
                        if depth == 0 {
                            k += 1;
                            break;
                        }
                    }
                    k += 1;
                }
            }
            continue;
        }
        out.push(&header[k]);
        k += 1;
    }
    out
}

fn classify(tokens: &[Token<'_>], start: usize, open: usize, method_allowed: bool) -> BlockKind {
    let header = strip_annotations(&tokens[start..open]);
    for (k, t) in header.iter().enumerate() {
        if t.kind == TokenKind::Ident && TYPE_KEYWORDS.contains(&t.text) {
            let dotted = k > 0 && header[k - 1].is_punct(".");
            if !dotted {
                if let Some(name) = header.get(k + 1).filter(|n| n.kind == TokenKind::Ident) {
                    return BlockKind::Type {
                        name: name.text.to_string(),
                    };
                }
            }
        }
    }
    if !method_allowed || header.is_empty() {
        return BlockKind::Other;
    }
    if header
        .iter()
        .any(|t| t.is_punct("=") || t.is_ident("new") || t.is_punct("->"))
    {
        return BlockKind::Other;
    }
    // name ( params ) [throws ...] {
    let Some(k) = header.iter().position(|t| t.is_punct("(")) else {
        return BlockKind::Other;
    };
    if k == 0 || header[k - 1].kind != TokenKind::Ident {
        return BlockKind::Other;
    }
    let name = header[k - 1].text;
    if CONTROL_KEYWORDS.contains(&name) || name == "return" || (k >= 2 && header[k - 2].is_punct(".")) {
        return BlockKind::Other;
    }
    BlockKind::Method {
        name: name.to_string(),
    }
}

/// Recovers the block structure; methods are recognised directly inside
/// type bodies or at top level.
pub fn blocks(tokens: &[Token<'_>]) -> Vec<Block> {
    let mut out: Vec<Block> = Vec::new();
    let mut stack: Vec<usize> = Vec::new();
    for (idx, t) in tokens.iter().enumerate() {
        if t.is_punct("{") {
            let parent = stack.last().copied();
            let method_allowed = match parent {
                None => true,
                Some(p) => matches!(out[p].kind, BlockKind::Type { .. }),
            };
            let start = header_start(tokens, idx);
            let kind = classify(tokens, start, idx, method_allowed);
            out.push(Block {
                kind,
                header_start: start,
                open: idx,
                close: tokens.len(),
                depth: stack.len(),
                parent,
            });
            stack.push(out.len() - 1);
        } else if t.is_punct("}") {
            if let Some(b) = stack.pop() {
                out[b].close = idx;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn texts(src: &str) -> Vec<&str> {
        tokenize(src).into_iter().map(|t| t.text).collect()
    }

    #[test]
    fn skips_comments_and_keeps_strings() {
        assert_eq!(
            texts("a /* if { */ b // while }\n\"if { \\\" }\" 'c'"),
            vec!["a", "b", "\"if { \\\" }\"", "'c'"]
        );
    }

    #[test]
    fn operators() {
        assert_eq!(texts("a&&b||c->d"), vec!["a", "&&", "b", "||", "c", "->", "d"]);
        assert_eq!(texts("List<?>"), vec!["List", "<", "?", ">"]);
    }

    #[test]
    fn unterminated_string_stops_at_newline() {
        assert_eq!(texts("\"abc\nx"), vec!["\"abc", "x"]);
    }

    #[test]
    fn text_block() {
        assert_eq!(texts("s = \"\"\"\n{ if\n\"\"\";"), vec!["s", "=", "\"\"\"\n{ if\n\"\"\"", ";"]);
    }

    #[test]
    fn balance() {
        assert_eq!(brace_balance(&tokenize("{ { } }")), Ok(0));
        assert_eq!(brace_balance(&tokenize("{ { {")), Ok(3));
        assert_eq!(brace_balance(&tokenize("} {")), Err(0));
        assert_eq!(brace_balance(&tokenize("\"{\" { }")), Ok(0));
    }

    #[test]
    fn block_structure() {
        let src = "@Test(expected = X.class) public void t() throws E { if (a) { } }\n\
                   class K extends Base { K() {} static { } void m(int a) { new Runnable() { public void run() {} }; } }";
        let toks = tokenize(src);
        let kinds: Vec<BlockKind> = blocks(&toks).into_iter().map(|b| b.kind).collect();
        assert_eq!(
            kinds,
            vec![
                BlockKind::Method { name: "t".into() },
                BlockKind::Other,
                BlockKind::Type { name: "K".into() },
                BlockKind::Method { name: "K".into() },
                BlockKind::Other,
                BlockKind::Method { name: "m".into() },
                BlockKind::Other,
                BlockKind::Other,
            ]
        );
    }
}
