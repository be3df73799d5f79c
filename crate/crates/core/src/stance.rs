//! Stances and points on the stance simplex.

use std::fmt;
use std::ops::Index;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Tolerance used when checking that a stance vector lies on the simplex.
pub const SIMPLEX_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Stance {
    Support,
    Neutral,
    Oppose,
}

impl Stance {
    pub const ALL: [Stance; 3] = [Stance::Support, Stance::Neutral, Stance::Oppose];

    pub fn index(self) -> usize {
        match self {
            Stance::Support => 0,
            Stance::Neutral => 1,
            Stance::Oppose => 2,
        }
    }

    pub fn from_index(i: usize) -> Option<Stance> {
        Stance::ALL.get(i).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Stance::Support => "support",
            Stance::Neutral => "neutral",
            Stance::Oppose => "oppose",
        }
    }

    pub fn parse(s: &str) -> Result<Stance> {
        Stance::ALL
            .into_iter()
            .find(|st| st.as_str() == s)
            .ok_or_else(|| Error::invalid(format!("unknown stance {s:?}")))
    }
}

impl fmt::Display for Stance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A distribution over {support, neutral, oppose}.
///
/// Serialized as a 3-element array `[support, neutral, oppose]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StanceVector([f64; 3]);

impl StanceVector {
    pub fn new(support: f64, neutral: f64, oppose: f64) -> Result<Self> {
        Self::from_array([support, neutral, oppose])
    }

    pub fn from_array(p: [f64; 3]) -> Result<Self> {
        for (i, &c) in p.iter().enumerate() {
            if !c.is_finite() || !(-SIMPLEX_TOL..=1.0 + SIMPLEX_TOL).contains(&c) {
                return Err(Error::invalid(format!(
                    "stance component {} = {c} outside [0, 1]",
                    Stance::ALL[i]
                )));
            }
        }
        let sum: f64 = p.iter().sum();
        if (sum - 1.0).abs() > SIMPLEX_TOL {
            return Err(Error::invalid(format!("stance vector sums to {sum}, not 1")));
        }
        Ok(StanceVector(p))
    }

    pub fn one_hot(stance: Stance) -> Self {
        let mut p = [0.0; 3];
        p[stance.index()] = 1.0;
        StanceVector(p)
    }

    pub fn uniform() -> Self {
        StanceVector([1.0 / 3.0; 3])
    }

    pub fn get(&self, stance: Stance) -> f64 {
        self.0[stance.index()]
    }

    pub fn as_array(&self) -> [f64; 3] {
        self.0
    }

    pub fn sum(&self) -> f64 {
        self.0.iter().sum()
    }

    /// Stance with the largest probability; ties resolve toward support, then neutral.
    pub fn dominant(&self) -> Stance {
        let mut best = Stance::Support;
        for s in [Stance::Neutral, Stance::Oppose] {
            if self.get(s) > self.get(best) {
                best = s;
            }
        }
        best
    }

    pub fn distance(&self, other: &StanceVector) -> f64 {
        self.0
            .iter()
            .zip(other.0.iter())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }

    /// Weighted mixture `Σ w_i v_i`. Weights are expected to sum to one.
    pub fn mixture<'a>(items: impl IntoIterator<Item = (f64, &'a StanceVector)>) -> Self {
        let mut acc = [0.0; 3];
        for (w, v) in items {
            for (a, c) in acc.iter_mut().zip(v.0.iter()) {
                *a += w * c;
            }
        }
        StanceVector(acc)
    }

    /// Componentwise arithmetic mean; `None` for an empty input.
    pub fn mean<'a>(items: impl IntoIterator<Item = &'a StanceVector>) -> Option<Self> {
        let mut acc = [0.0; 3];
        let mut n = 0usize;
        for v in items {
            for (a, c) in acc.iter_mut().zip(v.0.iter()) {
                *a += c;
            }
            n += 1;
        }
        if n == 0 {
            return None;
        }
        Some(StanceVector(acc.map(|a| a / n as f64)))
    }
}

impl Index<Stance> for StanceVector {
    type Output = f64;
    fn index(&self, s: Stance) -> &f64 {
        &self.0[s.index()]
    }
}

impl Serialize for StanceVector {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        self.0.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for StanceVector {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let p = <[f64; 3]>::deserialize(deserializer)?;
        StanceVector::from_array(p).map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_off_simplex() {
        assert!(StanceVector::new(0.5, 0.5, 0.5).is_err());
        assert!(StanceVector::new(1.2, -0.2, 0.0).is_err());
        assert!(StanceVector::new(0.2, 0.5, 0.3).is_ok());
    }

    #[test]
    fn distance_of_opposite_one_hots_is_sqrt2() {
        let s = StanceVector::one_hot(Stance::Support);
        let o = StanceVector::one_hot(Stance::Oppose);
        assert!((s.distance(&o) - 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn dominant_tie_breaks_toward_support() {
        assert_eq!(StanceVector::uniform().dominant(), Stance::Support);
        let v = StanceVector::new(0.2, 0.5, 0.3).unwrap();
        assert_eq!(v.dominant(), Stance::Neutral);
    }

    #[test]
    fn json_is_three_element_array() {
        let v = StanceVector::new(0.25, 0.5, 0.25).unwrap();
        assert_eq!(serde_json::to_string(&v).unwrap(), "[0.25,0.5,0.25]");
        assert!(serde_json::from_str::<StanceVector>("[0.9,0.9,0.9]").is_err());
    }
}
