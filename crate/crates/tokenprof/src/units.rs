//! Serde adapters: durations are written as human strings (`"20ms"`) and
//! held as integer nanoseconds. Bare integers are read as nanoseconds.

use std::time::Duration;

use serde::{de, Deserialize, Deserializer, Serializer};

#[derive(Deserialize)]
#[serde(untagged)]
enum Raw {
    Nanos(u64),
    Text(String),
}

pub fn parse_duration_ns(text: &str) -> Result<u64, String> {
    let text = text.trim();
    if text == "0" {
        return Ok(0);
    }
    humantime::parse_duration(text)
        .map(|d| d.as_nanos() as u64)
        .map_err(|e| format!("invalid duration {text:?}: {e}"))
}

pub fn format_duration_ns(ns: u64) -> String {
    if ns == 0 {
        "0s".into()
    } else {
        humantime::format_duration(Duration::from_nanos(ns)).to_string()
    }
}

pub mod duration_ns {
    use super::*;

    pub fn serialize<S: Serializer>(ns: &u64, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&format_duration_ns(*ns))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<u64, D::Error> {
        match Raw::deserialize(d)? {
            Raw::Nanos(n) => Ok(n),
            Raw::Text(t) => parse_duration_ns(&t).map_err(de::Error::custom),
        }
    }
}

pub mod opt_duration_ns {
    use super::*;

    pub fn serialize<S: Serializer>(ns: &Option<u64>, s: S) -> Result<S::Ok, S::Error> {
        match ns {
            Some(n) => s.serialize_str(&format_duration_ns(*n)),
            None => s.serialize_none(),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<u64>, D::Error> {
        match Option::<Raw>::deserialize(d)? {
            None => Ok(None),
            Some(Raw::Nanos(n)) => Ok(Some(n)),
            Some(Raw::Text(t)) => parse_duration_ns(&t).map(Some).map_err(de::Error::custom),
        }
    }
}
