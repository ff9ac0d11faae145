//! DTMF digit sequences and their canonical hyphenated text form.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// A single touch-tone key, `0` through `9`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Digit(u8);

impl Digit {
    pub fn new(value: u8) -> Option<Self> {
        (value <= 9).then_some(Self(value))
    }

    pub fn from_char(c: char) -> Option<Self> {
        c.to_digit(10)
            .filter(|_| c.is_ascii_digit())
            .map(|d| Self(d as u8))
    }

    pub fn value(self) -> u8 {
        self.0
    }

    pub fn as_char(self) -> char {
        char::from(b'0' + self.0)
    }
}

impl fmt::Display for Digit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PathParseError {
    #[error("empty DTMF path")]
    Empty,
    #[error("invalid DTMF path {0:?}: expected digits joined by '-', e.g. \"1-2-3\"")]
    Grammar(String),
}

/// A non-empty key sequence selecting a menu option from the root.
///
/// The canonical text form joins digits with an ASCII hyphen (`2-1-9`).
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct DtmfPath(Vec<Digit>);

impl DtmfPath {
    pub fn new(digits: Vec<Digit>) -> Option<Self> {
        (!digits.is_empty()).then_some(Self(digits))
    }

    pub fn single(digit: Digit) -> Self {
        Self(vec![digit])
    }

    pub fn digits(&self) -> &[Digit] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn child(&self, digit: Digit) -> Self {
        let mut digits = self.0.clone();
        digits.push(digit);
        Self(digits)
    }

    pub fn contains_digit(&self, digit: Digit) -> bool {
        self.0.contains(&digit)
    }
}

/// Returns true when `text` matches `digit ("-" digit)*` exactly.
pub fn matches_grammar(text: &str) -> bool {
    let bytes = text.as_bytes();
    if bytes.is_empty() || bytes.len().is_multiple_of(2) {
        return false;
    }
    bytes.iter().enumerate().all(|(i, b)| {
        if i % 2 == 0 {
            b.is_ascii_digit()
        } else {
            *b == b'-'
        }
    })
}

impl FromStr for DtmfPath {
    type Err = PathParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.is_empty() {
            return Err(PathParseError::Empty);
        }
        if !matches_grammar(s) {
            return Err(PathParseError::Grammar(s.to_string()));
        }
        let digits = s
            .bytes()
            .step_by(2)
            .map(|b| Digit(b - b'0'))
            .collect();
        Ok(Self(digits))
    }
}

impl fmt::Display for DtmfPath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, digit) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str("-")?;
            }
            write!(f, "{digit}")?;
        }
        Ok(())
    }
}

impl Serialize for DtmfPath {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for DtmfPath {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let text = String::deserialize(deserializer)?;
        text.parse().map_err(serde::de::Error::custom)
    }
}
