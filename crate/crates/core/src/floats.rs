//! Decimal-string float encoding for bit-exact JSON round trips.
//!
//! Model and oracle files store every `f64` as its shortest decimal string
//! (Rust's `Display` output), which parses back to the identical bit pattern.
//! Deserialization also accepts plain JSON numbers for hand-written files.

use serde::de::{self, Deserializer, Unexpected};
use serde::ser::Serializer;
use serde::{Deserialize, Serialize};

/// Renders `v` as the shortest decimal string that round-trips.
pub fn to_decimal(v: f64) -> String {
    if v.is_finite() {
        format!("{v}")
    } else if v.is_nan() {
        "nan".into()
    } else if v > 0.0 {
        "inf".into()
    } else {
        "-inf".into()
    }
}

/// Parses a decimal string produced by [`to_decimal`].
pub fn from_decimal(s: &str) -> Result<f64, std::num::ParseFloatError> {
    match s {
        "nan" => Ok(f64::NAN),
        "inf" => Ok(f64::INFINITY),
        "-inf" => Ok(f64::NEG_INFINITY),
        _ => s.parse(),
    }
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum NumOrStr {
    Num(f64),
    Str(String),
}

fn decode<'de, D: Deserializer<'de>>(raw: NumOrStr) -> Result<f64, D::Error> {
    match raw {
        NumOrStr::Num(v) => Ok(v),
        NumOrStr::Str(s) => from_decimal(&s)
            .map_err(|_| de::Error::invalid_value(Unexpected::Str(&s), &"a decimal float string")),
    }
}

/// `#[serde(with = "crate::floats::f64_dec")]` for scalar fields.
pub mod f64_dec {
    use super::*;

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&to_decimal(*v))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        decode::<D>(NumOrStr::deserialize(d)?)
    }
}

/// `#[serde(with = "crate::floats::vec_f64_dec")]` for `Vec<f64>` fields.
pub mod vec_f64_dec {
    use super::*;

    pub fn serialize<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(v.iter().map(|x| to_decimal(*x)))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
        let raw = Vec::<NumOrStr>::deserialize(d)?;
        raw.into_iter().map(decode::<D>).collect()
    }
}

/// `#[serde(with = "crate::floats::mat_f64_dec")]` for `Vec<Vec<f64>>` fields.
pub mod mat_f64_dec {
    use super::*;

    pub fn serialize<S: Serializer>(v: &[Vec<f64>], s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(
            v.iter()
                .map(|row| row.iter().map(|x| to_decimal(*x)).collect::<Vec<_>>()),
        )
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<Vec<f64>>, D::Error> {
        let raw = Vec::<Vec<NumOrStr>>::deserialize(d)?;
        raw.into_iter()
            .map(|row| row.into_iter().map(decode::<D>).collect())
            .collect()
    }
}
