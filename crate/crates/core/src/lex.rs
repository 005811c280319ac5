//! Java-like lexing, identifier/literal abstraction and token-sequence shaping.
//!
//! The lexer is purely lexical: no parse tree is built. Comments are dropped,
//! every other non-whitespace character ends up in exactly one token, and a
//! unary minus directly attached to a numeric literal in operand position is
//! folded into the literal (`x = -1` yields the single literal `-1`).
//!
//! Abstraction replaces user-defined identifiers and literals with reusable
//! `CATEGORY_n` ids. Ids are assigned sequentially per category in
//! first-occurrence order and reused on repeated lexemes.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default sequence cap fed to the embedder.
pub const DEFAULT_WINDOW: usize = 150;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum LexError {
    #[error("unterminated literal starting at byte {offset}")]
    UnterminatedLiteral { offset: usize },
    #[error("unterminated block comment starting at byte {offset}")]
    UnterminatedComment { offset: usize },
    #[error("invalid character {ch:?} at byte {offset}")]
    InvalidCharacter { ch: char, offset: usize },
    #[error("index {index} out of range for sequence of length {len}")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("window length must be at least 1")]
    EmptyWindow,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TokenKind {
    Keyword,
    Identifier,
    Operator,
    Punctuation,
    StringLit,
    CharLit,
    IntLit,
    FloatLit,
}

impl TokenKind {
    pub fn is_literal(self) -> bool {
        matches!(
            self,
            TokenKind::StringLit | TokenKind::CharLit | TokenKind::IntLit | TokenKind::FloatLit
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Token {
    pub lexeme: String,
    pub kind: TokenKind,
    /// Byte offsets into the original source.
    pub span: Range<usize>,
}

impl Token {
    pub fn is(&self, lexeme: &str) -> bool {
        self.lexeme == lexeme
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenStream {
    source: String,
    tokens: Vec<Token>,
}

const KEYWORDS: &[&str] = &[
    "abstract", "assert", "boolean", "break", "byte", "case", "catch", "char", "class", "const",
    "continue", "default", "do", "double", "else", "enum", "extends", "final", "finally", "float",
    "for", "goto", "if", "implements", "import", "instanceof", "int", "interface", "long",
    "native", "new", "package", "private", "protected", "public", "return", "short", "static",
    "strictfp", "super", "switch", "synchronized", "this", "throw", "throws", "transient", "try",
    "void", "volatile", "while", "var", "true", "false", "null",
];

// Longest first so that maximal munch is a linear scan.
const OPERATORS: &[&str] = &[
    ">>>=", "===", "!==", "<<=", ">>=", ">>>", "...", "->", "::", "++", "--", "&&", "||", "==",
    "!=", "<=", ">=", "+=", "-=", "*=", "/=", "%=", "&=", "|=", "^=", "<<", ">>", "+", "-", "*",
    "/", "%", "=", "<", ">", "!", "~", "?", ":", "&", "|", "^",
];

const PUNCTUATION: &[char] = &['(', ')', '{', '}', '[', ']', ';', ',', '.', '@'];

pub fn is_keyword(lexeme: &str) -> bool {
    KEYWORDS.contains(&lexeme)
}

fn is_ident_start(c: char) -> bool {
    c == '_' || c == '$' || c.is_alphabetic()
}

fn is_ident_continue(c: char) -> bool {
    c == '_' || c == '$' || c.is_alphanumeric()
}

struct Lexer<'a> {
    src: &'a str,
    pos: usize,
    tokens: Vec<Token>,
}

impl<'a> Lexer<'a> {
    fn peek(&self) -> Option<char> {
        self.src[self.pos..].chars().next()
    }

    fn peek_at(&self, n: usize) -> Option<char> {
        self.src[self.pos..].chars().nth(n)
    }

    fn push(&mut self, start: usize, kind: TokenKind) {
        self.tokens.push(Token {
            lexeme: self.src[start..self.pos].to_string(),
            kind,
            span: start..self.pos,
        });
    }

    /// True when a `-` at the current position is in operand position, i.e. it
    /// cannot be a binary minus.
    fn unary_context(&self) -> bool {
        match self.tokens.last() {
            None => true,
            Some(t) => match t.kind {
                TokenKind::Identifier
                | TokenKind::StringLit
                | TokenKind::CharLit
                | TokenKind::IntLit
                | TokenKind::FloatLit => false,
                TokenKind::Keyword => !matches!(
                    t.lexeme.as_str(),
                    "this" | "super" | "true" | "false" | "null"
                ),
                TokenKind::Punctuation => !matches!(t.lexeme.as_str(), ")" | "]"),
                TokenKind::Operator => !matches!(t.lexeme.as_str(), "++" | "--"),
            },
        }
    }

    fn run(mut self) -> Result<Vec<Token>, LexError> {
        while let Some(c) = self.peek() {
            let start = self.pos;
            if c.is_whitespace() {
                self.pos += c.len_utf8();
            } else if self.src[start..].starts_with("//") {
                match self.src[start..].find('\n') {
                    Some(n) => self.pos += n,
                    None => self.pos = self.src.len(),
                }
            } else if self.src[start..].starts_with("/*") {
                match self.src[start + 2..].find("*/") {
                    Some(n) => self.pos = start + 2 + n + 2,
                    None => return Err(LexError::UnterminatedComment { offset: start }),
                }
            } else if is_ident_start(c) {
                while self.peek().is_some_and(is_ident_continue) {
                    self.pos += self.peek().map_or(0, char::len_utf8);
                }
                let kind = if is_keyword(&self.src[start..self.pos]) {
                    TokenKind::Keyword
                } else {
                    TokenKind::Identifier
                };
                self.push(start, kind);
            } else if c.is_ascii_digit()
                || (c == '.' && self.peek_at(1).is_some_and(|d| d.is_ascii_digit()))
            {
                let kind = self.number();
                self.push(start, kind);
            } else if c == '-'
                && self.unary_context()
                && (self.peek_at(1).is_some_and(|d| d.is_ascii_digit())
                    || (self.peek_at(1) == Some('.')
                        && self.peek_at(2).is_some_and(|d| d.is_ascii_digit())))
            {
                self.pos += 1;
                let kind = self.number();
                self.push(start, kind);
            } else if c == '"' || c == '\'' {
                self.quoted(c)?;
                let kind = if c == '"' {
                    TokenKind::StringLit
                } else {
                    TokenKind::CharLit
                };
                self.push(start, kind);
            } else if PUNCTUATION.contains(&c) && !self.src[start..].starts_with("...") {
                self.pos += 1;
                self.push(start, TokenKind::Punctuation);
            } else if let Some(op) = OPERATORS.iter().find(|op| self.src[start..].starts_with(*op))
            {
                self.pos += op.len();
                self.push(start, TokenKind::Operator);
            } else {
                return Err(LexError::InvalidCharacter { ch: c, offset: start });
            }
        }
        Ok(self.tokens)
    }

    fn number(&mut self) -> TokenKind {
        let bytes = self.src.as_bytes();
        let mut float = false;
        let radix_prefixed = bytes[self.pos] == b'0'
            && matches!(bytes.get(self.pos + 1), Some(b'x' | b'X' | b'b' | b'B'));
        if radix_prefixed {
            self.pos += 2;
            while self.pos < bytes.len() && (bytes[self.pos].is_ascii_hexdigit() || bytes[self.pos] == b'_') {
                self.pos += 1;
            }
        } else {
            let digits = |lx: &mut Self| {
                while lx.pos < bytes.len() && (bytes[lx.pos].is_ascii_digit() || bytes[lx.pos] == b'_') {
                    lx.pos += 1;
                }
            };
            digits(self);
            if self.pos < bytes.len()
                && bytes[self.pos] == b'.'
                && bytes.get(self.pos + 1).is_some_and(|b| b.is_ascii_digit())
            {
                float = true;
                self.pos += 1;
                digits(self);
            }
            if self.pos < bytes.len() && matches!(bytes[self.pos], b'e' | b'E') {
                let mut look = self.pos + 1;
                if matches!(bytes.get(look), Some(b'+' | b'-')) {
                    look += 1;
                }
                if bytes.get(look).is_some_and(|b| b.is_ascii_digit()) {
                    float = true;
                    self.pos = look;
                    digits(self);
                }
            }
            if self.pos < bytes.len() && matches!(bytes[self.pos], b'f' | b'F' | b'd' | b'D') {
                float = true;
                self.pos += 1;
            }
        }
        if !float && self.pos < bytes.len() && matches!(bytes[self.pos], b'l' | b'L') {
            self.pos += 1;
        }
        if float {
            TokenKind::FloatLit
        } else {
            TokenKind::IntLit
        }
    }

    fn quoted(&mut self, quote: char) -> Result<(), LexError> {
        let start = self.pos;
        self.pos += 1;
        loop {
            match self.peek() {
                None | Some('\n') => return Err(LexError::UnterminatedLiteral { offset: start }),
                Some('\\') => {
                    self.pos += 1;
                    match self.peek() {
                        None | Some('\n') => {
                            return Err(LexError::UnterminatedLiteral { offset: start })
                        }
                        Some(e) => self.pos += e.len_utf8(),
                    }
                }
                Some(c) if c == quote => {
                    self.pos += 1;
                    return Ok(());
                }
                Some(c) => self.pos += c.len_utf8(),
            }
        }
    }
}

/// Lex `source` into a comment-free token stream.
pub fn tokenize(source: &str) -> Result<TokenStream, LexError> {
    let tokens = Lexer {
        src: source,
        pos: 0,
        tokens: Vec::new(),
    }
    .run()?;
    Ok(TokenStream {
        source: source.to_string(),
        tokens,
    })
}

impl TokenStream {
    pub fn tokens(&self) -> &[Token] {
        &self.tokens
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn lexemes(&self) -> Vec<String> {
        self.tokens.iter().map(|t| t.lexeme.clone()).collect()
    }

    /// The source with comments removed: lexemes joined by the whitespace
    /// that originally separated them.
    pub fn stripped_source(&self) -> String {
        let mut out = String::with_capacity(self.source.len());
        let mut cursor = 0;
        for tok in &self.tokens {
            push_gap_whitespace(&mut out, &self.source[cursor..tok.span.start]);
            out.push_str(&tok.lexeme);
            cursor = tok.span.end;
        }
        push_gap_whitespace(&mut out, &self.source[cursor..]);
        out
    }

    /// Index of the first token of the statement enclosing `index`: the token
    /// after the nearest preceding `;`, `{` or `}`.
    pub fn statement_start(&self, index: usize) -> usize {
        statement_start(&self.tokens, index)
    }
}

// Gaps between tokens hold only whitespace and comments.
fn push_gap_whitespace(out: &mut String, mut gap: &str) {
    while let Some(c) = gap.chars().next() {
        if gap.starts_with("//") {
            gap = &gap[gap.find('\n').unwrap_or(gap.len())..];
        } else if gap.starts_with("/*") {
            gap = gap[2..].find("*/").map_or("", |n| &gap[2 + n + 2..]);
        } else {
            out.push(c);
            gap = &gap[c.len_utf8()..];
        }
    }
}

pub(crate) fn statement_start(tokens: &[Token], index: usize) -> usize {
    tokens[..index]
        .iter()
        .rposition(|t| t.kind == TokenKind::Punctuation && matches!(t.lexeme.as_str(), ";" | "{" | "}"))
        .map_or(0, |p| p + 1)
}

/// Index one past the end of the statement enclosing `index`.
pub(crate) fn statement_end(tokens: &[Token], index: usize) -> usize {
    tokens[index..]
        .iter()
        .position(|t| t.kind == TokenKind::Punctuation && matches!(t.lexeme.as_str(), ";" | "{" | "}"))
        .map_or(tokens.len(), |p| index + p + 1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Category {
    Type,
    Method,
    Var,
    String,
    Char,
    Int,
    Float,
}

impl Category {
    pub const ALL: [Category; 7] = [
        Category::Type,
        Category::Method,
        Category::Var,
        Category::String,
        Category::Char,
        Category::Int,
        Category::Float,
    ];

    pub fn prefix(self) -> &'static str {
        match self {
            Category::Type => "TYPE",
            Category::Method => "METHOD",
            Category::Var => "VAR",
            Category::String => "STRING",
            Category::Char => "CHAR",
            Category::Int => "INT",
            Category::Float => "FLOAT",
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.prefix())
    }
}

impl FromStr for Category {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, ()> {
        Category::ALL.into_iter().find(|c| c.prefix() == s).ok_or(())
    }
}

/// Parse an abstract id such as `VAR_3`.
pub fn parse_abstract_id(token: &str) -> Option<(Category, usize)> {
    let (prefix, digits) = token.rsplit_once('_')?;
    if digits.is_empty() || digits.starts_with('0') || !digits.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    Some((prefix.parse().ok()?, digits.parse().ok()?))
}

/// Bijective category x index -> lexeme map of one abstracted unit.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SymbolTable {
    by_category: BTreeMap<Category, Vec<String>>,
    lookup: HashMap<(Category, String), usize>,
}

impl SymbolTable {
    pub fn id_for(&mut self, category: Category, lexeme: &str) -> String {
        let key = (category, lexeme.to_string());
        let n = match self.lookup.get(&key) {
            Some(&n) => n,
            None => {
                let entries = self.by_category.entry(category).or_default();
                entries.push(lexeme.to_string());
                let n = entries.len();
                self.lookup.insert(key, n);
                n
            }
        };
        format!("{}_{}", category.prefix(), n)
    }

    pub fn resolve(&self, category: Category, n: usize) -> Option<&str> {
        self.by_category
            .get(&category)
            .and_then(|v| v.get(n.checked_sub(1)?))
            .map(String::as_str)
    }

    /// Number of ids assigned in `category`.
    pub fn count(&self, category: Category) -> usize {
        self.by_category.get(&category).map_or(0, Vec::len)
    }

    pub fn iter(&self) -> impl Iterator<Item = (Category, usize, &str)> {
        self.by_category
            .iter()
            .flat_map(|(c, v)| v.iter().enumerate().map(move |(i, l)| (*c, i + 1, l.as_str())))
    }
}

pub fn default_idioms() -> BTreeSet<String> {
    ["0", "1", "-1", "\"\"", "null", "true", "false"]
        .into_iter()
        .map(String::from)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AbstractedUnit {
    pub abstract_tokens: Vec<String>,
    pub symbol_table: SymbolTable,
    pub idioms: BTreeSet<String>,
}

/// Category an identifier at `index` is abstracted into.
pub fn classify_identifier(tokens: &[Token], index: usize) -> Category {
    let prev = index.checked_sub(1).map(|i| tokens[i].lexeme.as_str());
    let next = tokens.get(index + 1).map(|t| t.lexeme.as_str());
    if matches!(
        prev,
        Some("new" | "class" | "extends" | "implements" | "throws")
    ) {
        Category::Type
    } else if next == Some("(") {
        Category::Method
    } else if tokens[index].lexeme.starts_with(|c: char| c.is_uppercase()) {
        Category::Type
    } else {
        Category::Var
    }
}

fn literal_category(kind: TokenKind) -> Option<Category> {
    match kind {
        TokenKind::StringLit => Some(Category::String),
        TokenKind::CharLit => Some(Category::Char),
        TokenKind::IntLit => Some(Category::Int),
        TokenKind::FloatLit => Some(Category::Float),
        _ => None,
    }
}

/// Abstract a token stream with a fresh symbol table.
pub fn abstract_tokens(ts: &TokenStream, idioms: &BTreeSet<String>) -> AbstractedUnit {
    abstract_with_table(ts.tokens(), idioms, SymbolTable::default())
}

/// Abstract `tokens`, extending an existing symbol table so ids stay
/// consistent with a previously abstracted unit.
pub fn abstract_with_table(
    tokens: &[Token],
    idioms: &BTreeSet<String>,
    mut table: SymbolTable,
) -> AbstractedUnit {
    let abstract_tokens = tokens
        .iter()
        .enumerate()
        .map(|(i, tok)| {
            if idioms.contains(&tok.lexeme) {
                return tok.lexeme.clone();
            }
            let category = match tok.kind {
                TokenKind::Identifier => Some(classify_identifier(tokens, i)),
                k => literal_category(k),
            };
            match category {
                Some(c) => table.id_for(c, &tok.lexeme),
                None => tok.lexeme.clone(),
            }
        })
        .collect();
    AbstractedUnit {
        abstract_tokens,
        symbol_table: table,
        idioms: idioms.clone(),
    }
}

impl AbstractedUnit {
    /// Map abstract ids back to their lexemes.
    pub fn deabstract(&self) -> Vec<String> {
        self.abstract_tokens
            .iter()
            .map(|t| {
                parse_abstract_id(t)
                    .and_then(|(c, n)| self.symbol_table.resolve(c, n))
                    .unwrap_or(t)
                    .to_string()
            })
            .collect()
    }

    pub fn flatten(&self) -> String {
        flatten(&self.abstract_tokens)
    }

    pub fn to_document(&self) -> UnitDocument {
        let mut symbols: BTreeMap<String, BTreeMap<String, String>> = BTreeMap::new();
        for (c, n, lexeme) in self.symbol_table.iter() {
            symbols
                .entry(c.prefix().to_string())
                .or_default()
                .insert(format!("{}_{}", c.prefix(), n), lexeme.to_string());
        }
        UnitDocument {
            tokens: self.abstract_tokens.clone(),
            symbols,
            idioms: self.idioms.iter().cloned().collect(),
        }
    }
}

/// JSON form of an [`AbstractedUnit`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UnitDocument {
    pub tokens: Vec<String>,
    pub symbols: BTreeMap<String, BTreeMap<String, String>>,
    pub idioms: Vec<String>,
}

/// Join tokens with single spaces.
pub fn flatten<S: AsRef<str>>(tokens: &[S]) -> String {
    let mut out = String::new();
    for (i, t) in tokens.iter().enumerate() {
        if i > 0 {
            out.push(' ');
        }
        out.push_str(t.as_ref());
    }
    out
}

/// Flatten raw lexemes, escaping whitespace inside tokens as `\s`.
pub fn flatten_raw<S: AsRef<str>>(tokens: &[S]) -> String {
    let escaped: Vec<String> = tokens
        .iter()
        .map(|t| {
            t.as_ref()
                .chars()
                .map(|c| if c.is_whitespace() { "\\s".to_string() } else { c.to_string() })
                .collect()
        })
        .collect();
    flatten(&escaped)
}

/// Bounds of the window of at most `max_len` tokens around `center`.
pub fn window_range(len: usize, center: usize, max_len: usize) -> Result<Range<usize>, LexError> {
    if max_len == 0 {
        return Err(LexError::EmptyWindow);
    }
    if center >= len {
        return Err(LexError::IndexOutOfRange { index: center, len });
    }
    let size = len.min(max_len);
    let start = center.saturating_sub(max_len / 2).min(len - size);
    Ok(start..start + size)
}

pub fn window<T>(seq: &[T], center: usize, max_len: usize) -> Result<&[T], LexError> {
    window_range(seq.len(), center, max_len).map(|r| &seq[r])
}
