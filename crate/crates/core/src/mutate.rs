//! Mask-site enumeration and materialization of single-token mutants.

use std::collections::BTreeSet;
use std::fmt;
use std::ops::Range;
use std::path::Path;
use std::process::Command;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exec::Execution;
use crate::lex::{
    abstract_with_table, classify_identifier, statement_end, statement_start, tokenize, window,
    window_range, AbstractedUnit, Category, Token, TokenKind, TokenStream, DEFAULT_WINDOW,
};
use crate::predictor::{MaskQuery, PredictError, Predictor, MASK};

pub const BINARY_OPERATORS: &[&str] = &[
    "+", "-", "*", "/", "%", "<", "<=", ">", ">=", "==", "!=", "&&", "||", "&", "|", "^", "<<",
    ">>",
];

#[derive(Debug, Error)]
pub enum MutateError {
    #[error("mutant {0} does not line up with the abstracted unit")]
    SpanMismatch(String),
    #[error(transparent)]
    Predictor(#[from] PredictError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SiteKind {
    Identifier,
    FieldAccessName,
    BinaryOperator,
    Literal,
}

impl SiteKind {
    pub fn operator_tag(self) -> OperatorTag {
        match self {
            SiteKind::Identifier => OperatorTag::IdentifierMutator,
            SiteKind::FieldAccessName => OperatorTag::FieldAccessMutator,
            SiteKind::BinaryOperator => OperatorTag::BinaryOperatorMutator,
            SiteKind::Literal => OperatorTag::LiteralMutator,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum OperatorTag {
    BinaryOperatorMutator,
    IdentifierMutator,
    FieldAccessMutator,
    LiteralMutator,
}

impl OperatorTag {
    pub fn annotation(self) -> String {
        format!("@{self}")
    }
}

impl fmt::Display for OperatorTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskSite {
    pub token_index: usize,
    pub site_kind: SiteKind,
    pub original: String,
    /// Token index range of the enclosing statement.
    pub statement_span: Range<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mutant {
    pub id: String,
    pub file: String,
    pub site: MaskSite,
    pub replacement: String,
    pub operator_tag: OperatorTag,
    /// Byte span of the replaced token in the original source.
    pub span: Range<usize>,
    pub patched_source: String,
    pub annotated_sequence: Vec<String>,
    pub valid: bool,
}

/// One line of the mutant manifest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub file: String,
    pub token_index: usize,
    pub site_kind: SiteKind,
    pub original: String,
    pub replacement: String,
    pub operator_tag: OperatorTag,
    pub valid: bool,
    pub span: [usize; 2],
}

impl Mutant {
    pub fn manifest_entry(&self) -> ManifestEntry {
        ManifestEntry {
            id: self.id.clone(),
            file: self.file.clone(),
            token_index: self.site.token_index,
            site_kind: self.site.site_kind,
            original: self.site.original.clone(),
            replacement: self.replacement.clone(),
            operator_tag: self.operator_tag,
            valid: self.valid,
            span: [self.span.start, self.span.end],
        }
    }
}

/// Stable, filesystem-safe key for (file, token index, replacement).
pub fn mutant_id(file: &str, token_index: usize, replacement: &str) -> String {
    let file_slug: String = file
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() { c } else { '_' })
        .collect();
    let mut repl = String::new();
    for b in replacement.bytes() {
        if b.is_ascii_alphanumeric() || b == b'_' || b == b'-' {
            repl.push(b as char);
        } else {
            repl.push_str(&format!("%{b:02x}"));
        }
    }
    format!("{file_slug}.{token_index}.{repl}")
}

fn ends_operand(tok: &Token) -> bool {
    match tok.kind {
        TokenKind::Identifier
        | TokenKind::StringLit
        | TokenKind::CharLit
        | TokenKind::IntLit
        | TokenKind::FloatLit => true,
        TokenKind::Keyword => matches!(tok.lexeme.as_str(), "this" | "super" | "true" | "false" | "null"),
        TokenKind::Punctuation => matches!(tok.lexeme.as_str(), ")" | "]"),
        TokenKind::Operator => matches!(tok.lexeme.as_str(), "++" | "--"),
    }
}

fn is_type_position(tokens: &[Token], i: usize) -> bool {
    let prev = i.checked_sub(1).map(|p| &tokens[p]);
    let next = tokens.get(i + 1);
    if prev.is_some_and(|p| {
        matches!(
            p.lexeme.as_str(),
            "new" | "class" | "interface" | "enum" | "extends" | "implements" | "throws" | "@"
        )
    }) {
        return true;
    }
    match next {
        Some(n) if n.kind == TokenKind::Identifier => true,
        Some(n) if n.is("[") => tokens.get(i + 2).is_some_and(|t| t.is("]")),
        Some(n) if n.is("<") => classify_identifier(tokens, i) == Category::Type,
        _ => false,
    }
}

/// End (exclusive) of a type-argument list opening at `open`, if the tokens
/// up to the balancing `>` can only be type arguments.
fn type_arguments_end(tokens: &[Token], open: usize) -> Option<usize> {
    let mut depth = 0usize;
    for (i, t) in tokens.iter().enumerate().skip(open) {
        match t.lexeme.as_str() {
            "<" => depth += 1,
            ">" => depth = depth.checked_sub(1)?,
            ">>" => depth = depth.checked_sub(2)?,
            "," | "." | "?" | "[" | "]" | "&" | "extends" | "super" => {}
            _ if t.kind == TokenKind::Identifier || t.kind == TokenKind::Keyword => {}
            _ => return None,
        }
        if depth == 0 {
            return Some(i + 1);
        }
    }
    None
}

/// Maskable sites in token order.
pub fn enumerate_sites(ts: &TokenStream) -> Vec<MaskSite> {
    let tokens = ts.tokens();
    let mut sites = Vec::new();
    let mut in_header = false;
    let mut skip_until = 0;
    for (i, tok) in tokens.iter().enumerate() {
        if i < skip_until {
            continue;
        }
        if tok.kind == TokenKind::Identifier
            && tokens.get(i + 1).is_some_and(|n| n.is("<"))
            && classify_identifier(tokens, i) == Category::Type
        {
            skip_until = type_arguments_end(tokens, i + 1).unwrap_or(0);
        }
        if tok.kind == TokenKind::Keyword && matches!(tok.lexeme.as_str(), "import" | "package") {
            in_header = true;
        }
        if in_header {
            if tok.is(";") {
                in_header = false;
            }
            continue;
        }
        let kind = match tok.kind {
            TokenKind::Identifier if is_type_position(tokens, i) => None,
            TokenKind::Identifier if i > 0 && tokens[i - 1].is(".") => Some(SiteKind::FieldAccessName),
            TokenKind::Identifier => Some(SiteKind::Identifier),
            TokenKind::Operator
                if BINARY_OPERATORS.contains(&tok.lexeme.as_str())
                    && i > 0
                    && ends_operand(&tokens[i - 1])
                    && i + 1 < tokens.len() =>
            {
                Some(SiteKind::BinaryOperator)
            }
            k if k.is_literal() => Some(SiteKind::Literal),
            _ => None,
        };
        if let Some(site_kind) = kind {
            sites.push(MaskSite {
                token_index: i,
                site_kind,
                original: tok.lexeme.clone(),
                statement_span: statement_start(tokens, i)..statement_end(tokens, i),
            });
        }
    }
    sites
}

/// Decides whether a patched file is acceptable.
pub trait Validator: Send + Sync {
    fn validate(&self, file: &str, patched_source: &str) -> bool;
}

/// Accepts anything that re-lexes; generation already guarantees that.
#[derive(Debug, Clone, Copy, Default)]
pub struct LexicalValidator;

impl Validator for LexicalValidator {
    fn validate(&self, _file: &str, patched_source: &str) -> bool {
        tokenize(patched_source).is_ok()
    }
}

/// Runs a shell command against the patched file; exit status 0 means valid.
/// `{file}` in the command is replaced by the path of a temporary copy that
/// keeps the original file name.
#[derive(Debug, Clone)]
pub struct CommandValidator {
    pub command: String,
}

impl Validator for CommandValidator {
    fn validate(&self, file: &str, patched_source: &str) -> bool {
        let Ok(dir) = tempfile::tempdir() else {
            return false;
        };
        let name = Path::new(file).file_name().map_or_else(|| "Mutant.java".into(), |n| n.to_os_string());
        let path = dir.path().join(name);
        if std::fs::write(&path, patched_source).is_err() {
            return false;
        }
        let cmd = self.command.replace("{file}", &path.to_string_lossy());
        Command::new("sh")
            .arg("-c")
            .arg(&cmd)
            .current_dir(dir.path())
            .output()
            .map(|o| o.status.success())
            .unwrap_or(false)
    }
}

#[derive(Debug, Clone)]
pub struct GenerateConfig {
    pub k: usize,
    pub idioms: BTreeSet<String>,
    pub max_len: usize,
    /// Query the predictor with abstracted tokens instead of raw lexemes.
    pub mask_on_abstracted: bool,
}

impl Default for GenerateConfig {
    fn default() -> Self {
        GenerateConfig {
            k: 5,
            idioms: crate::lex::default_idioms(),
            max_len: DEFAULT_WINDOW,
            mask_on_abstracted: false,
        }
    }
}

/// One source file prepared for mutation.
#[derive(Debug, Clone)]
pub struct SourceUnit {
    pub file: String,
    pub tokens: TokenStream,
    pub abstracted: AbstractedUnit,
}

impl SourceUnit {
    pub fn new(file: &str, source: &str, idioms: &BTreeSet<String>) -> Result<Self, crate::lex::LexError> {
        let tokens = tokenize(source)?;
        let abstracted = crate::lex::abstract_tokens(&tokens, idioms);
        Ok(SourceUnit {
            file: file.to_string(),
            tokens,
            abstracted,
        })
    }
}

fn scope_for(ts: &TokenStream, sites: &[MaskSite], kind: SiteKind) -> Vec<String> {
    let kind = match kind {
        SiteKind::BinaryOperator | SiteKind::Literal => return Vec::new(),
        k => k,
    };
    sites
        .iter()
        .filter(|s| s.site_kind == kind)
        .map(|s| ts.tokens()[s.token_index].lexeme.clone())
        .collect()
}

fn masked_sequence(unit: &SourceUnit, site: &MaskSite, cfg: &GenerateConfig) -> Vec<String> {
    let seq: Vec<String> = if cfg.mask_on_abstracted {
        unit.abstracted.abstract_tokens.clone()
    } else {
        unit.tokens.lexemes()
    };
    let range = window_range(seq.len(), site.token_index, cfg.max_len)
        .expect("site index lies inside its token stream");
    let mut out = seq[range.clone()].to_vec();
    out[site.token_index - range.start] = MASK.to_string();
    out
}

/// Patched source if replacing the site's token re-lexes to exactly one
/// changed token.
fn patch(ts: &TokenStream, site: &MaskSite, replacement: &str) -> Option<String> {
    let span = ts.tokens()[site.token_index].span.clone();
    let src = ts.source();
    let patched = format!("{}{}{}", &src[..span.start], replacement, &src[span.end..]);
    let relexed = tokenize(&patched).ok()?;
    if relexed.len() != ts.len() {
        return None;
    }
    let diffs: Vec<usize> = relexed
        .tokens()
        .iter()
        .zip(ts.tokens())
        .enumerate()
        .filter(|(_, (a, b))| a.lexeme != b.lexeme)
        .map(|(i, _)| i)
        .collect();
    (diffs == [site.token_index] && relexed.tokens()[site.token_index].lexeme == replacement)
        .then_some(patched)
}

/// Mutants for one site: top-k predictions minus the original, each checked
/// to be a single-token change and then passed through `validator`.
pub fn generate(
    unit: &SourceUnit,
    sites: &[MaskSite],
    site: &MaskSite,
    predictor: &dyn Predictor,
    validator: &dyn Validator,
    cfg: &GenerateConfig,
) -> Result<Vec<Mutant>, MutateError> {
    let masked = masked_sequence(unit, site, cfg);
    let scope = scope_for(&unit.tokens, sites, site.site_kind);
    let query = MaskQuery {
        masked: &masked,
        site_kind: site.site_kind,
        original: &site.original,
        scope: &scope,
    };
    let predictions = predictor.predict(&query, cfg.k)?;
    let mut seen = BTreeSet::new();
    let mut mutants = Vec::new();
    for p in predictions.into_iter().take(cfg.k) {
        if p.token == site.original || !seen.insert(p.token.clone()) {
            continue;
        }
        let Some(patched_source) = patch(&unit.tokens, site, &p.token) else {
            log::debug!(
                "{}: dropping {:?} at token {}: not a single-token change",
                unit.file,
                p.token,
                site.token_index
            );
            continue;
        };
        let valid = validator.validate(&unit.file, &patched_source);
        let mut mutant = Mutant {
            id: mutant_id(&unit.file, site.token_index, &p.token),
            file: unit.file.clone(),
            site: site.clone(),
            operator_tag: site.site_kind.operator_tag(),
            span: unit.tokens.tokens()[site.token_index].span.clone(),
            replacement: p.token,
            patched_source,
            annotated_sequence: Vec::new(),
            valid,
        };
        mutant.annotated_sequence = annotate_with(&mutant, &unit.abstracted, cfg.max_len)?;
        mutants.push(mutant);
    }
    Ok(mutants)
}

/// A site the predictor could not serve.
#[derive(Debug, Clone)]
pub struct SiteFailure {
    pub file: String,
    pub token_index: usize,
    pub error: String,
}

/// Generate mutants for every site of `unit`. Predictor failures skip the
/// site and are reported instead of aborting the batch.
pub fn generate_all(
    unit: &SourceUnit,
    predictor: &dyn Predictor,
    validator: &dyn Validator,
    cfg: &GenerateConfig,
    exec: Execution,
) -> (Vec<Mutant>, Vec<SiteFailure>) {
    let sites = enumerate_sites(&unit.tokens);
    let results = exec.map(&sites, |site| generate(unit, &sites, site, predictor, validator, cfg));
    let mut mutants = Vec::new();
    let mut failures = Vec::new();
    for (site, result) in sites.iter().zip(results) {
        match result {
            Ok(ms) => mutants.extend(ms),
            Err(e) => {
                log::warn!("{}: skipping site at token {}: {e}", unit.file, site.token_index);
                failures.push(SiteFailure {
                    file: unit.file.clone(),
                    token_index: site.token_index,
                    error: e.to_string(),
                });
            }
        }
    }
    (mutants, failures)
}

/// Abstracted mutated unit with the operator annotation placed at the start
/// of the enclosing statement, windowed around the annotation.
pub fn annotate(m: &Mutant, u: &AbstractedUnit) -> Result<Vec<String>, MutateError> {
    annotate_with(m, u, DEFAULT_WINDOW)
}

pub fn annotate_with(m: &Mutant, u: &AbstractedUnit, max_len: usize) -> Result<Vec<String>, MutateError> {
    let mismatch = || MutateError::SpanMismatch(m.id.clone());
    let mutated = tokenize(&m.patched_source).map_err(|_| mismatch())?;
    let idx = m.site.token_index;
    if mutated.len() != u.abstract_tokens.len() || idx >= mutated.len() {
        return Err(mismatch());
    }
    let abstracted = abstract_with_table(mutated.tokens(), &u.idioms, u.symbol_table.clone());
    let at = statement_start(mutated.tokens(), idx);
    let mut seq = abstracted.abstract_tokens;
    seq.insert(at, m.operator_tag.annotation());
    Ok(window(&seq, at, max_len).map_err(|_| mismatch())?.to_vec())
}
