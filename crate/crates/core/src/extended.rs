//! Extended reals and per-state potentials.
//!
//! Infinite values are carried as tags and never enter linear algebra as
//! floating-point infinities.

use std::cmp::Ordering;
use std::fmt;

use serde::de::{self, Deserializer, MapAccess, Visitor};
use serde::ser::{SerializeMap, Serializer};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ExtendedReal {
    Finite(f64),
    PlusInf,
    MinusInf,
}

impl ExtendedReal {
    pub fn finite(self) -> Option<f64> {
        match self {
            ExtendedReal::Finite(x) => Some(x),
            _ => None,
        }
    }

    pub fn is_finite(self) -> bool {
        matches!(self, ExtendedReal::Finite(_))
    }

    /// `x + c` with `inf + c = inf`.
    pub fn add(self, c: f64) -> Self {
        match self {
            ExtendedReal::Finite(x) => ExtendedReal::Finite(x + c),
            other => other,
        }
    }

    /// `self ∧ k` for finite `k`.
    pub fn min_with(self, k: f64) -> f64 {
        match self {
            ExtendedReal::Finite(x) => x.min(k),
            ExtendedReal::PlusInf => k,
            ExtendedReal::MinusInf => f64::NEG_INFINITY.max(-f64::MAX),
        }
    }

    /// `self ∨ (-k)` for finite `k`.
    pub fn max_with(self, floor: f64) -> f64 {
        match self {
            ExtendedReal::Finite(x) => x.max(floor),
            ExtendedReal::MinusInf => floor,
            ExtendedReal::PlusInf => f64::MAX,
        }
    }

    pub fn is_negative(self) -> bool {
        match self {
            ExtendedReal::Finite(x) => x < 0.0,
            ExtendedReal::MinusInf => true,
            ExtendedReal::PlusInf => false,
        }
    }

    pub fn is_positive(self) -> bool {
        match self {
            ExtendedReal::Finite(x) => x > 0.0,
            ExtendedReal::PlusInf => true,
            ExtendedReal::MinusInf => false,
        }
    }
}

impl PartialOrd for ExtendedReal {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        use ExtendedReal::*;
        match (self, other) {
            (Finite(a), Finite(b)) => a.partial_cmp(b),
            (PlusInf, PlusInf) | (MinusInf, MinusInf) => Some(Ordering::Equal),
            (PlusInf, _) | (_, MinusInf) => Some(Ordering::Greater),
            (MinusInf, _) | (_, PlusInf) => Some(Ordering::Less),
        }
    }
}

impl From<f64> for ExtendedReal {
    fn from(x: f64) -> Self {
        if x == f64::INFINITY {
            ExtendedReal::PlusInf
        } else if x == f64::NEG_INFINITY {
            ExtendedReal::MinusInf
        } else {
            ExtendedReal::Finite(x)
        }
    }
}

impl fmt::Display for ExtendedReal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ExtendedReal::Finite(x) => write!(f, "{x}"),
            ExtendedReal::PlusInf => write!(f, "+inf"),
            ExtendedReal::MinusInf => write!(f, "-inf"),
        }
    }
}

/// `#[serde(with = "crate::extended::wire")]` for plain `f64` fields that
/// may hold infinities, using the extended-real wire form.
pub mod wire {
    use super::ExtendedReal;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(x: &f64, s: S) -> Result<S::Ok, S::Error> {
        ExtendedReal::from(*x).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(match ExtendedReal::deserialize(d)? {
            ExtendedReal::Finite(x) => x,
            ExtendedReal::PlusInf => f64::INFINITY,
            ExtendedReal::MinusInf => f64::NEG_INFINITY,
        })
    }
}

// Wire form: {"finite": x} | "+inf" | "-inf".
impl Serialize for ExtendedReal {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        match self {
            ExtendedReal::Finite(x) => {
                let mut map = serializer.serialize_map(Some(1))?;
                map.serialize_entry("finite", x)?;
                map.end()
            }
            ExtendedReal::PlusInf => serializer.serialize_str("+inf"),
            ExtendedReal::MinusInf => serializer.serialize_str("-inf"),
        }
    }
}

impl<'de> Deserialize<'de> for ExtendedReal {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        struct ExtVisitor;

        impl<'de> Visitor<'de> for ExtVisitor {
            type Value = ExtendedReal;

            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str(r#"{"finite": x}, "+inf" or "-inf""#)
            }

            fn visit_str<E: de::Error>(self, v: &str) -> Result<ExtendedReal, E> {
                match v {
                    "+inf" | "inf" => Ok(ExtendedReal::PlusInf),
                    // U+2212 MINUS SIGN is accepted as well as ASCII.
                    "-inf" | "\u{2212}inf" => Ok(ExtendedReal::MinusInf),
                    other => Err(E::invalid_value(de::Unexpected::Str(other), &self)),
                }
            }

            fn visit_f64<E: de::Error>(self, v: f64) -> Result<ExtendedReal, E> {
                Ok(ExtendedReal::Finite(v))
            }

            fn visit_i64<E: de::Error>(self, v: i64) -> Result<ExtendedReal, E> {
                Ok(ExtendedReal::Finite(v as f64))
            }

            fn visit_u64<E: de::Error>(self, v: u64) -> Result<ExtendedReal, E> {
                Ok(ExtendedReal::Finite(v as f64))
            }

            fn visit_map<A: MapAccess<'de>>(self, mut map: A) -> Result<ExtendedReal, A::Error> {
                let mut value = None;
                while let Some(key) = map.next_key::<String>()? {
                    if key == "finite" {
                        value = Some(map.next_value::<f64>()?);
                    } else {
                        return Err(de::Error::unknown_field(&key, &["finite"]));
                    }
                }
                value
                    .map(ExtendedReal::Finite)
                    .ok_or_else(|| de::Error::missing_field("finite"))
            }
        }

        deserializer.deserialize_any(ExtVisitor)
    }
}

/// Per-state potential with optional infinite markers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Potential {
    pub values: Vec<ExtendedReal>,
}

impl Potential {
    pub fn new(values: Vec<ExtendedReal>) -> Self {
        Self { values }
    }

    pub fn from_finite(values: &[f64]) -> Self {
        Self {
            values: values.iter().map(|&x| ExtendedReal::Finite(x)).collect(),
        }
    }

    pub fn constant(n: usize, c: f64) -> Self {
        Self::from_finite(&vec![c; n])
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Finite entries as a plain vector, or `None` if any entry is infinite.
    pub fn to_finite(&self) -> Option<Vec<f64>> {
        self.values.iter().map(|v| v.finite()).collect()
    }

    pub fn shifted(&self, c: f64) -> Self {
        Self {
            values: self.values.iter().map(|v| v.add(c)).collect(),
        }
    }

    /// `a ∧ k`, entrywise.
    pub fn truncate_above(&self, k: f64) -> Vec<f64> {
        self.values.iter().map(|v| v.min_with(k)).collect()
    }

    /// `a ∨ (-k)`, entrywise.
    pub fn truncate_below(&self, k: f64) -> Vec<f64> {
        self.values.iter().map(|v| v.max_with(-k)).collect()
    }
}
