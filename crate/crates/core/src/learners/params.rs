use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Untagged in text formats (JSON, TOML); tagged in binary formats, which
/// cannot self-describe.
#[derive(Debug, Clone, PartialEq)]
pub enum ParamValue {
    Int(i64),
    Float(f64),
    Text(String),
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum Untagged {
    Int(i64),
    Float(f64),
    Text(String),
}

#[derive(Serialize, Deserialize)]
enum Tagged {
    Int(i64),
    Float(f64),
    Text(String),
}

impl Serialize for ParamValue {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let human = s.is_human_readable();
        match (self, human) {
            (ParamValue::Int(v), true) => Untagged::Int(*v).serialize(s),
            (ParamValue::Float(v), true) => Untagged::Float(*v).serialize(s),
            (ParamValue::Text(v), true) => Untagged::Text(v.clone()).serialize(s),
            (ParamValue::Int(v), false) => Tagged::Int(*v).serialize(s),
            (ParamValue::Float(v), false) => Tagged::Float(*v).serialize(s),
            (ParamValue::Text(v), false) => Tagged::Text(v.clone()).serialize(s),
        }
    }
}

impl<'de> Deserialize<'de> for ParamValue {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        if d.is_human_readable() {
            Ok(match Untagged::deserialize(d)? {
                Untagged::Int(v) => ParamValue::Int(v),
                Untagged::Float(v) => ParamValue::Float(v),
                Untagged::Text(v) => ParamValue::Text(v),
            })
        } else {
            Ok(match Tagged::deserialize(d)? {
                Tagged::Int(v) => ParamValue::Int(v),
                Tagged::Float(v) => ParamValue::Float(v),
                Tagged::Text(v) => ParamValue::Text(v),
            })
        }
    }
}

impl ParamValue {
    pub fn as_f64(&self) -> Option<f64> {
        match *self {
            ParamValue::Int(i) => Some(i as f64),
            ParamValue::Float(f) => Some(f),
            ParamValue::Text(_) => None,
        }
    }

    pub fn as_usize(&self) -> Option<usize> {
        match *self {
            ParamValue::Int(i) if i >= 0 => Some(i as usize),
            ParamValue::Float(f) if f >= 0.0 && f.fract() == 0.0 => Some(f as usize),
            _ => None,
        }
    }

    pub fn as_str(&self) -> Option<&str> {
        match self {
            ParamValue::Text(s) => Some(s),
            _ => None,
        }
    }

    /// Parses CLI text: integer, then float, then bare string.
    pub fn parse(s: &str) -> ParamValue {
        if let Ok(i) = s.parse::<i64>() {
            ParamValue::Int(i)
        } else if let Ok(f) = s.parse::<f64>() {
            ParamValue::Float(f)
        } else {
            ParamValue::Text(s.to_string())
        }
    }
}

impl fmt::Display for ParamValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParamValue::Int(i) => write!(f, "{i}"),
            ParamValue::Float(x) => write!(f, "{x}"),
            ParamValue::Text(s) => f.write_str(s),
        }
    }
}

impl From<i64> for ParamValue {
    fn from(v: i64) -> Self {
        ParamValue::Int(v)
    }
}

impl From<f64> for ParamValue {
    fn from(v: f64) -> Self {
        ParamValue::Float(v)
    }
}

impl From<&str> for ParamValue {
    fn from(v: &str) -> Self {
        ParamValue::Text(v.to_string())
    }
}

pub type Params = BTreeMap<String, ParamValue>;

/// Typed lookups over a validated parameter map with defaults applied.
pub(crate) struct ParamReader<'a> {
    family: &'static str,
    params: &'a Params,
}

impl<'a> ParamReader<'a> {
    pub fn new(family: &'static str, params: &'a Params) -> Self {
        ParamReader { family, params }
    }

    fn bad(&self, name: &str, want: &str) -> Error {
        Error::InvalidArgument(format!(
            "{}: hyperparameter `{name}` must be {want}, got {}",
            self.family, self.params[name]
        ))
    }

    pub fn f64_or(&self, name: &str, default: f64) -> Result<f64> {
        match self.params.get(name) {
            None => Ok(default),
            Some(v) => v.as_f64().ok_or_else(|| self.bad(name, "a number")),
        }
    }

    pub fn usize_or(&self, name: &str, default: usize) -> Result<usize> {
        match self.params.get(name) {
            None => Ok(default),
            Some(v) => v
                .as_usize()
                .ok_or_else(|| self.bad(name, "a non-negative integer")),
        }
    }

    pub fn str_or(&self, name: &str, default: &'a str) -> Result<&'a str> {
        match self.params.get(name) {
            None => Ok(default),
            Some(v) => v.as_str().ok_or_else(|| self.bad(name, "a string")),
        }
    }

    pub fn bool_or(&self, name: &str, default: bool) -> Result<bool> {
        match self.params.get(name) {
            None => Ok(default),
            Some(ParamValue::Int(0)) => Ok(false),
            Some(ParamValue::Int(1)) => Ok(true),
            Some(ParamValue::Text(s)) if s == "true" => Ok(true),
            Some(ParamValue::Text(s)) if s == "false" => Ok(false),
            Some(_) => Err(self.bad(name, "0/1 or true/false")),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_and_binary_round_trip() {
        let mut p = Params::new();
        p.insert("k".into(), ParamValue::Int(7));
        p.insert("c".into(), ParamValue::Float(0.5));
        p.insert("preset".into(), "lgbm".into());
        let json = serde_json::to_string(&p).unwrap();
        assert_eq!(json, r#"{"c":0.5,"k":7,"preset":"lgbm"}"#);
        assert_eq!(serde_json::from_str::<Params>(&json).unwrap(), p);
        let bin = bincode::serialize(&p).unwrap();
        assert_eq!(bincode::deserialize::<Params>(&bin).unwrap(), p);
    }
}
