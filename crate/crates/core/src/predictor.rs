//! Top-k replacement candidates for a masked token sequence.
//!
//! Two implementations share the [`Predictor`] trait: a deterministic
//! builtin ranking, and an HTTP client for a masked language model service
//! speaking the `/v1/predict` protocol.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lex::flatten_raw;
use crate::mutate::SiteKind;

pub const MASK: &str = "<mask>";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PredictError {
    #[error("masked sequence contains no {MASK} token")]
    NoMaskToken,
    #[error("masked sequence contains {0} {MASK} tokens, expected one")]
    MultipleMaskTokens(usize),
    #[error("predictor unavailable: {0}")]
    PredictorUnavailable(String),
    #[error("malformed predictor response: {0}")]
    MalformedResponse(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub token: String,
    pub score: f64,
}

/// Everything a predictor may look at for one masked site.
#[derive(Debug, Clone, Copy)]
pub struct MaskQuery<'a> {
    pub masked: &'a [String],
    pub site_kind: SiteKind,
    pub original: &'a str,
    /// Candidate pool for identifier-like sites.
    pub scope: &'a [String],
}

pub trait Predictor: Send + Sync {
    fn predict(&self, query: &MaskQuery<'_>, k: usize) -> Result<Vec<Prediction>, PredictError>;
}

fn check_single_mask(masked: &[String]) -> Result<(), PredictError> {
    match masked.iter().filter(|t| *t == MASK).count() {
        0 => Err(PredictError::NoMaskToken),
        1 => Ok(()),
        n => Err(PredictError::MultipleMaskTokens(n)),
    }
}

const OPERATOR_FAMILIES: &[&[&str]] = &[
    &["<", "<=", ">", ">=", "==", "!="],
    &["+", "-", "*", "/", "%"],
    &["&&", "||"],
    &["&", "|", "^"],
    &["<<", ">>"],
];

pub fn operator_family(op: &str) -> Option<&'static [&'static str]> {
    OPERATOR_FAMILIES.iter().copied().find(|f| f.contains(&op))
}

fn ranked(tokens: impl IntoIterator<Item = String>, k: usize) -> Vec<Prediction> {
    let mut seen = Vec::<String>::new();
    for t in tokens {
        if seen.len() == k {
            break;
        }
        if !seen.contains(&t) {
            seen.push(t);
        }
    }
    seen.into_iter()
        .enumerate()
        .map(|(i, token)| Prediction {
            token,
            score: 1.0 / (i + 1) as f64,
        })
        .collect()
}

fn parse_int(lexeme: &str) -> Option<(i64, &str)> {
    let (body, suffix) = match lexeme.strip_suffix(['l', 'L']) {
        Some(b) => (b, &lexeme[b.len()..]),
        None => (lexeme, ""),
    };
    let (negative, body) = match body.strip_prefix('-') {
        Some(b) => (true, b),
        None => (false, body),
    };
    let digits: String = body.chars().filter(|&c| c != '_').collect();
    let magnitude = if let Some(h) = digits.strip_prefix("0x").or(digits.strip_prefix("0X")) {
        i64::from_str_radix(h, 16).ok()?
    } else if let Some(b) = digits.strip_prefix("0b").or(digits.strip_prefix("0B")) {
        i64::from_str_radix(b, 2).ok()?
    } else {
        digits.parse().ok()?
    };
    Some((if negative { -magnitude } else { magnitude }, suffix))
}

fn parse_float(lexeme: &str) -> Option<(f64, &str)> {
    let (body, suffix) = match lexeme.strip_suffix(['f', 'F', 'd', 'D']) {
        Some(b) => (b, &lexeme[b.len()..]),
        None => (lexeme, ""),
    };
    let digits: String = body.chars().filter(|&c| c != '_').collect();
    Some((digits.parse().ok()?, suffix))
}

fn literal_neighbors(original: &str) -> Vec<String> {
    if original.starts_with('"') {
        return vec!["\"\"".into(), "null".into()];
    }
    if original.starts_with('\'') {
        return vec!["' '".into(), "'\\0'".into()];
    }
    if let Some((n, suffix)) = parse_int(original) {
        return [n.wrapping_add(1), n.wrapping_sub(1), 0, 1, n.wrapping_neg()]
            .iter()
            .map(|v| format!("{v}{suffix}"))
            .collect();
    }
    if let Some((x, suffix)) = parse_float(original) {
        // Debug formatting always keeps a '.' or exponent, so the text re-lexes as a float.
        return [x + 1.0, x - 1.0, 0.0, 1.0, -x]
            .iter()
            .map(|v| format!("{v:?}{suffix}"))
            .collect();
    }
    Vec::new()
}

/// Deterministic candidate ranking. Scores are `1/rank`.
pub fn predict_builtin(query: &MaskQuery<'_>, k: usize) -> Result<Vec<Prediction>, PredictError> {
    check_single_mask(query.masked)?;
    let candidates: Vec<String> = match query.site_kind {
        SiteKind::BinaryOperator => operator_family(query.original)
            .unwrap_or(&[])
            .iter()
            .filter(|op| **op != query.original)
            .map(|s| s.to_string())
            .collect(),
        SiteKind::Identifier | SiteKind::FieldAccessName => {
            let mut counts: HashMap<&str, (usize, usize)> = HashMap::new();
            for (pos, tok) in query.scope.iter().enumerate() {
                counts.entry(tok).or_insert((0, pos)).0 += 1;
            }
            let mut ordered: Vec<(&str, (usize, usize))> = counts.into_iter().collect();
            ordered.sort_by(|a, b| b.1 .0.cmp(&a.1 .0).then(a.1 .1.cmp(&b.1 .1)));
            ordered.into_iter().map(|(t, _)| t.to_string()).collect()
        }
        SiteKind::Literal => literal_neighbors(query.original),
    };
    Ok(ranked(candidates, k))
}

#[derive(Debug, Clone, Copy, Default)]
pub struct BuiltinPredictor;

impl Predictor for BuiltinPredictor {
    fn predict(&self, query: &MaskQuery<'_>, k: usize) -> Result<Vec<Prediction>, PredictError> {
        predict_builtin(query, k)
    }
}

#[derive(Debug, Serialize)]
struct PredictRequest<'a> {
    sequence: &'a str,
    k: usize,
}

#[derive(Debug, Deserialize)]
struct PredictResponse {
    candidates: Vec<Prediction>,
}

/// Client for a remote masked-LM service.
#[derive(Debug, Clone)]
pub struct RemotePredictor {
    base: String,
    agent: ureq::Agent,
}

impl RemotePredictor {
    pub fn new(endpoint: &str, timeout: Duration) -> Self {
        let agent = ureq::AgentBuilder::new().timeout(timeout).build();
        RemotePredictor {
            base: endpoint.trim_end_matches('/').to_string(),
            agent,
        }
    }

    pub fn health(&self) -> Result<(), PredictError> {
        let resp = self
            .agent
            .get(&format!("{}/v1/health", self.base))
            .call()
            .map_err(|e| PredictError::PredictorUnavailable(e.to_string()))?;
        let body: serde_json::Value = resp
            .into_json()
            .map_err(|e| PredictError::MalformedResponse(e.to_string()))?;
        match body.get("status").and_then(|s| s.as_str()) {
            Some("ok") => Ok(()),
            _ => Err(PredictError::MalformedResponse(format!("unexpected health body {body}"))),
        }
    }

    fn post_once(&self, sequence: &str, k: usize) -> Result<serde_json::Value, String> {
        self.agent
            .post(&format!("{}/v1/predict", self.base))
            .send_json(PredictRequest { sequence, k })
            .map_err(|e| e.to_string())?
            .into_json()
            .map_err(|e| e.to_string())
    }

    pub fn predict_remote(&self, masked: &[String], k: usize) -> Result<Vec<Prediction>, PredictError> {
        check_single_mask(masked)?;
        let sequence = flatten_raw(masked);
        let body = match self.post_once(&sequence, k) {
            Ok(b) => b,
            Err(first) => {
                log::debug!("predict request failed, retrying once: {first}");
                self.post_once(&sequence, k)
                    .map_err(PredictError::PredictorUnavailable)?
            }
        };
        let mut resp: PredictResponse = serde_json::from_value(body)
            .map_err(|e| PredictError::MalformedResponse(e.to_string()))?;
        if let Some(bad) = resp.candidates.iter().find(|c| !c.score.is_finite()) {
            return Err(PredictError::MalformedResponse(format!(
                "non-finite score for {:?}",
                bad.token
            )));
        }
        resp.candidates.truncate(k);
        Ok(resp.candidates)
    }
}

impl Predictor for RemotePredictor {
    fn predict(&self, query: &MaskQuery<'_>, k: usize) -> Result<Vec<Prediction>, PredictError> {
        self.predict_remote(query.masked, k)
    }
}

/// `builtin` or `remote=<url>` as accepted on the command line.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PredictorSpec {
    #[default]
    Builtin,
    Remote(String),
}

impl FromStr for PredictorSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "builtin" => Ok(PredictorSpec::Builtin),
            _ => match s.strip_prefix("remote=") {
                Some(url) if !url.is_empty() => Ok(PredictorSpec::Remote(url.to_string())),
                _ => Err(format!("expected `builtin` or `remote=<url>`, got {s:?}")),
            },
        }
    }
}

impl fmt::Display for PredictorSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PredictorSpec::Builtin => f.write_str("builtin"),
            PredictorSpec::Remote(url) => write!(f, "remote={url}"),
        }
    }
}

impl PredictorSpec {
    pub fn build(&self, timeout: Duration) -> Box<dyn Predictor> {
        match self {
            PredictorSpec::Builtin => Box::new(BuiltinPredictor),
            PredictorSpec::Remote(url) => Box::new(RemotePredictor::new(url, timeout)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn masked() -> Vec<String> {
        ["if", "(", "n", MASK, "0", ")"].map(String::from).to_vec()
    }

    fn tokens(p: &[Prediction]) -> Vec<&str> {
        p.iter().map(|p| p.token.as_str()).collect()
    }

    fn query<'a>(masked: &'a [String], kind: SiteKind, original: &'a str, scope: &'a [String]) -> MaskQuery<'a> {
        MaskQuery {
            masked,
            site_kind: kind,
            original,
            scope,
        }
    }

    #[test]
    fn relational_complement() {
        let m = masked();
        let p = predict_builtin(&query(&m, SiteKind::BinaryOperator, "<", &[]), 5).unwrap();
        assert_eq!(tokens(&p), ["<=", ">", ">=", "==", "!="]);
        let scores: Vec<f64> = p.iter().map(|p| p.score).collect();
        assert_eq!(scores, [1.0, 0.5, 1.0 / 3.0, 0.25, 0.2]);
        let p = predict_builtin(&query(&m, SiteKind::BinaryOperator, "<", &[]), 2).unwrap();
        assert_eq!(tokens(&p), ["<=", ">"]);
    }

    #[test]
    fn identifier_frequency() {
        let m = masked();
        let scope: Vec<String> = ["n", "total", "position", "total", "position", "position"]
            .map(String::from)
            .to_vec();
        let p = predict_builtin(&query(&m, SiteKind::Identifier, "x", &scope), 2).unwrap();
        assert_eq!(tokens(&p), ["position", "total"]);
        // Ties keep first-occurrence order.
        let scope: Vec<String> = ["b", "a", "a", "b", "c"].map(String::from).to_vec();
        let p = predict_builtin(&query(&m, SiteKind::Identifier, "x", &scope), 5).unwrap();
        assert_eq!(tokens(&p), ["b", "a", "c"]);
    }

    #[test]
    fn literal_neighbors_int() {
        let m = masked();
        let p = predict_builtin(&query(&m, SiteKind::Literal, "128", &[]), 3).unwrap();
        assert_eq!(tokens(&p), ["129", "127", "0"]);
        let p = predict_builtin(&query(&m, SiteKind::Literal, "128", &[]), 5).unwrap();
        assert_eq!(tokens(&p), ["129", "127", "0", "1", "-128"]);
        let p = predict_builtin(&query(&m, SiteKind::Literal, "0x10L", &[]), 5).unwrap();
        assert_eq!(tokens(&p), ["17L", "15L", "0L", "1L", "-16L"]);
        let p = predict_builtin(&query(&m, SiteKind::Literal, "0", &[]), 5).unwrap();
        assert_eq!(tokens(&p), ["1", "-1", "0"]);
    }

    #[test]
    fn literal_neighbors_other() {
        let m = masked();
        let p = predict_builtin(&query(&m, SiteKind::Literal, "2.5f", &[]), 5).unwrap();
        assert_eq!(tokens(&p), ["3.5f", "1.5f", "0.0f", "1.0f", "-2.5f"]);
        let p = predict_builtin(&query(&m, SiteKind::Literal, "\"abc\"", &[]), 5).unwrap();
        assert_eq!(tokens(&p), ["\"\"", "null"]);
    }

    #[test]
    fn mask_count_errors() {
        let none: Vec<String> = vec!["a".into()];
        assert_eq!(
            predict_builtin(&query(&none, SiteKind::Literal, "1", &[]), 5).unwrap_err(),
            PredictError::NoMaskToken
        );
        let two: Vec<String> = vec![MASK.into(), MASK.into()];
        assert_eq!(
            predict_builtin(&query(&two, SiteKind::Literal, "1", &[]), 5).unwrap_err(),
            PredictError::MultipleMaskTokens(2)
        );
    }

    #[test]
    fn spec_parsing() {
        assert_eq!("builtin".parse::<PredictorSpec>().unwrap(), PredictorSpec::Builtin);
        assert_eq!(
            "remote=http://h:1".parse::<PredictorSpec>().unwrap(),
            PredictorSpec::Remote("http://h:1".into())
        );
        assert!("remote=".parse::<PredictorSpec>().is_err());
        assert!("bert".parse::<PredictorSpec>().is_err());
    }
}
