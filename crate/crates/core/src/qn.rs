//! Quantum-number configurations.
//!
//! Quantum numbers are integers for odd particle number and half-odd integers
//! for even particle number. They are stored doubled so that all arithmetic on
//! them (momenta, parity shifts, particle-hole moves) stays exact.

use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Strictly increasing set of quantum numbers `I_j`, stored as `2 I_j`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct QnConfig {
    doubled: Vec<i64>,
}

/// Parity (mod 2) that doubled quantum numbers must have for `n` particles.
#[inline]
pub fn doubled_parity(n: usize) -> i64 {
    if n % 2 == 1 {
        0
    } else {
        1
    }
}

impl QnConfig {
    pub fn from_doubled(doubled: Vec<i64>) -> Result<Self> {
        let n = doubled.len();
        if n == 0 {
            return Ok(Self { doubled });
        }
        let parity = doubled_parity(n);
        for w in doubled.windows(2) {
            if w[1] <= w[0] {
                return Err(Error::InvalidQuantumNumbers(format!(
                    "not strictly increasing: {} then {}",
                    w[0] as f64 / 2.0,
                    w[1] as f64 / 2.0
                )));
            }
        }
        if let Some(bad) = doubled.iter().find(|d| d.rem_euclid(2) != parity) {
            let kind = if parity == 0 {
                "integers"
            } else {
                "half-odd integers"
            };
            return Err(Error::InvalidQuantumNumbers(format!(
                "{} particles need {kind}, got {}",
                n,
                *bad as f64 / 2.0
            )));
        }
        Ok(Self { doubled })
    }

    /// Build from (half-)integer values given as floats, e.g. `[-0.5, 0.5]`.
    pub fn from_values(values: &[f64]) -> Result<Self> {
        let mut doubled = Vec::with_capacity(values.len());
        for &v in values {
            let d = 2.0 * v;
            if (d - d.round()).abs() > 1e-9 {
                return Err(Error::InvalidQuantumNumbers(format!(
                    "{v} is not a multiple of 1/2"
                )));
            }
            doubled.push(d.round() as i64);
        }
        Self::from_doubled(doubled)
    }

    /// Contiguous symmetric filling `I_j = j - (N+1)/2`.
    pub fn ground_state(n: usize) -> Self {
        let doubled = (1..=n as i64).map(|j| 2 * j - (n as i64 + 1)).collect();
        Self { doubled }
    }

    pub fn vacuum() -> Self {
        Self {
            doubled: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.doubled.len()
    }

    pub fn is_empty(&self) -> bool {
        self.doubled.is_empty()
    }

    pub fn doubled(&self) -> &[i64] {
        &self.doubled
    }

    pub fn into_doubled(self) -> Vec<i64> {
        self.doubled
    }

    pub fn values(&self) -> Vec<f64> {
        self.doubled.iter().map(|&d| d as f64 / 2.0).collect()
    }

    pub fn value(&self, j: usize) -> f64 {
        self.doubled[j] as f64 / 2.0
    }

    /// `2 Σ I_j`, exact.
    pub fn doubled_sum(&self) -> i64 {
        self.doubled.iter().sum()
    }

    pub fn contains_doubled(&self, d: i64) -> bool {
        self.doubled.binary_search(&d).is_ok()
    }
}

impl fmt::Display for QnConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{")?;
        for (i, d) in self.doubled.iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            if d % 2 == 0 {
                write!(f, "{}", d / 2)?;
            } else {
                write!(f, "{}/2", d)?;
            }
        }
        write!(f, "}}")
    }
}

impl Serialize for QnConfig {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.values().serialize(s)
    }
}

impl<'de> Deserialize<'de> for QnConfig {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let values = Vec::<f64>::deserialize(d)?;
        QnConfig::from_values(&values).map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ground_states() {
        assert_eq!(QnConfig::ground_state(3).values(), vec![-1.0, 0.0, 1.0]);
        assert_eq!(
            QnConfig::ground_state(4).values(),
            vec![-1.5, -0.5, 0.5, 1.5]
        );
        assert_eq!(QnConfig::ground_state(1).values(), vec![0.0]);
    }

    #[test]
    fn parity_is_enforced() {
        assert!(QnConfig::from_values(&[-0.5, 0.5]).is_ok());
        assert!(QnConfig::from_values(&[0.0, 1.0]).is_err());
        assert!(QnConfig::from_values(&[-1.0, 0.5, 1.0]).is_err());
        assert!(QnConfig::from_values(&[0.25]).is_err());
    }

    #[test]
    fn ordering_is_enforced() {
        assert!(QnConfig::from_values(&[1.0, 0.0, 2.0]).is_err());
        assert!(QnConfig::from_values(&[0.0, 0.0, 2.0]).is_err());
    }

    #[test]
    fn json_round_trip() {
        let q = QnConfig::from_values(&[-2.5, -0.5, 3.5, 7.5]).unwrap();
        let s = serde_json::to_string(&q).unwrap();
        assert_eq!(s, "[-2.5,-0.5,3.5,7.5]");
        let back: QnConfig = serde_json::from_str(&s).unwrap();
        assert_eq!(back, q);
        assert!(serde_json::from_str::<QnConfig>("[0.5, 1.5, 2.5]").is_err());
    }
}
