//! Line-delimited comma-separated text used by every dump and report format.
//!
//! Lines starting with `#` are metadata or trailers, blank lines are ignored and
//! fields are split on `,` with surrounding whitespace trimmed. There is no
//! quoting, so identifiers must not contain commas.

use thiserror::Error;

/// Number of fractional digits used when printing scores and weights.
pub const DECIMALS: usize = 9;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("line {line}: {message}")]
pub struct ParseError {
    pub line: usize,
    pub message: String,
}

impl ParseError {
    pub fn new(line: usize, message: impl Into<String>) -> Self {
        Self {
            line,
            message: message.into(),
        }
    }
}

/// One non-comment line with its 1-based line number.
#[derive(Debug, Clone)]
pub struct Record<'a> {
    pub line: usize,
    pub fields: Vec<&'a str>,
}

impl<'a> Record<'a> {
    pub fn expect_len(&self, n: usize) -> Result<(), ParseError> {
        if self.fields.len() != n {
            return Err(ParseError::new(
                self.line,
                format!("expected {n} fields, found {}", self.fields.len()),
            ));
        }
        Ok(())
    }

    pub fn field<T: std::str::FromStr>(&self, index: usize, name: &str) -> Result<T, ParseError> {
        let raw = self.fields[index];
        raw.parse()
            .map_err(|_| ParseError::new(self.line, format!("invalid {name} `{raw}`")))
    }

    pub fn float(&self, index: usize, name: &str) -> Result<f64, ParseError> {
        let v: f64 = self.field(index, name)?;
        if !v.is_finite() {
            return Err(ParseError::new(self.line, format!("{name} must be finite")));
        }
        Ok(v)
    }

    pub fn text(&self, index: usize, name: &str) -> Result<&'a str, ParseError> {
        let raw = self.fields[index];
        if raw.is_empty() {
            return Err(ParseError::new(self.line, format!("empty {name}")));
        }
        Ok(raw)
    }

    pub fn score(&self, index: usize) -> Result<f64, ParseError> {
        parse_score(self.fields[index]).map_err(|m| ParseError::new(self.line, m))
    }
}

/// Data lines of `text`, skipping comments, blank lines and an optional column
/// header equal to `header`.
pub fn records<'a>(text: &'a str, header: &'a str) -> impl Iterator<Item = Record<'a>> + 'a {
    text.lines()
        .enumerate()
        .filter_map(|(k, raw)| {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                return None;
            }
            Some(Record {
                line: k + 1,
                fields: line.split(',').map(str::trim).collect(),
            })
        })
        .filter(move |r| r.fields.join(",") != header)
}

/// Parse a score in `[0, 1]` written as a plain decimal with at most nine
/// fractional digits.
pub fn parse_score(raw: &str) -> Result<f64, String> {
    let (int, frac) = raw.split_once('.').unwrap_or((raw, ""));
    let digits_only = |s: &str| s.bytes().all(|b| b.is_ascii_digit());
    if int.is_empty() || !digits_only(int) || !digits_only(frac) {
        return Err(format!("invalid score `{raw}`"));
    }
    if frac.len() > DECIMALS {
        return Err(format!("score `{raw}` has more than {DECIMALS} fractional digits"));
    }
    let v: f64 = raw.parse().map_err(|_| format!("invalid score `{raw}`"))?;
    if !(0.0..=1.0).contains(&v) {
        return Err(format!("score `{raw}` outside [0, 1]"));
    }
    Ok(v)
}

pub fn fmt_decimal(v: f64) -> String {
    format!("{v:.DECIMALS$}")
}
