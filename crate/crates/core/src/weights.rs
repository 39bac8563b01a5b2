//! Weighting schemes over countable index sets and their finite supports.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_TRUNCATION_EPSILON: f64 = 1e-10;

const SUM_TOL: f64 = 1e-12;

/// Geometric tail `mu_{from + j} = M (1 - ratio) ratio^j`, where `M` is the
/// mass left over by the explicit entries.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeometricTail {
    pub ratio: f64,
    pub from: usize,
}

/// Weights `mu_i`, given as explicit entries plus an optional geometric tail.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightScheme {
    pub entries: Vec<(usize, f64)>,
    #[serde(default)]
    pub tail: Option<GeometricTail>,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
}

fn default_epsilon() -> f64 {
    DEFAULT_TRUNCATION_EPSILON
}

/// Finite support of a weighting scheme after tail truncation.
#[derive(Debug, Clone, PartialEq)]
pub struct EffectiveSupport {
    entries: Vec<(usize, f64)>,
    discarded_mass: f64,
    renormalization: f64,
}

impl WeightScheme {
    pub fn new(entries: Vec<(usize, f64)>) -> Result<Self> {
        let scheme = Self {
            entries,
            tail: None,
            epsilon: DEFAULT_TRUNCATION_EPSILON,
        };
        scheme.validate()?;
        Ok(scheme)
    }

    /// Weights on indices `1, 2, ...`.
    pub fn from_weights(weights: &[f64]) -> Result<Self> {
        Self::new(weights.iter().enumerate().map(|(j, w)| (j + 1, *w)).collect())
    }

    pub fn uniform(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::Validation("uniform scheme needs n >= 1".into()));
        }
        Self::from_weights(&vec![1.0 / n as f64; n])
    }

    pub fn point_mass(index: usize) -> Self {
        Self {
            entries: vec![(index, 1.0)],
            tail: None,
            epsilon: DEFAULT_TRUNCATION_EPSILON,
        }
    }

    /// Explicit entries followed by a geometric tail carrying the rest of the mass.
    pub fn with_tail(entries: Vec<(usize, f64)>, ratio: f64, from: usize, epsilon: f64) -> Result<Self> {
        let scheme = Self {
            entries,
            tail: Some(GeometricTail { ratio, from }),
            epsilon,
        };
        scheme.validate()?;
        Ok(scheme)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon.is_finite() && self.epsilon > 0.0) {
            return Err(Error::Validation(format!(
                "truncation epsilon {} must be > 0",
                self.epsilon
            )));
        }
        let mut seen = std::collections::BTreeSet::new();
        for &(i, w) in &self.entries {
            if !(w > 0.0 && w <= 1.0) {
                return Err(Error::Validation(format!("weight {w} of index {i} outside (0, 1]")));
            }
            if !seen.insert(i) {
                return Err(Error::Validation(format!("index {i} listed twice")));
            }
        }
        let explicit: f64 = self.entries.iter().map(|e| e.1).sum();
        if explicit > 1.0 + SUM_TOL {
            return Err(Error::Validation(format!("weights sum to {explicit} > 1")));
        }
        match self.tail {
            None => {
                if self.entries.is_empty() {
                    return Err(Error::Validation("weighting scheme has no weights".into()));
                }
                if (explicit - 1.0).abs() > SUM_TOL {
                    return Err(Error::Validation(format!(
                        "weights sum to {explicit}, expected 1"
                    )));
                }
            }
            Some(tail) => {
                if !(tail.ratio > 0.0 && tail.ratio < 1.0) {
                    return Err(Error::Validation(format!(
                        "tail ratio {} outside (0, 1)",
                        tail.ratio
                    )));
                }
                if explicit >= 1.0 - SUM_TOL {
                    return Err(Error::Validation("geometric tail has no mass left".into()));
                }
                if let Some(i) = seen.iter().find(|i| **i >= tail.from) {
                    return Err(Error::Validation(format!(
                        "explicit index {i} overlaps the tail starting at {}",
                        tail.from
                    )));
                }
            }
        }
        Ok(())
    }

    /// Keeps the shortest tail prefix whose remainder is at most `epsilon`
    /// and rescales the kept weights to sum to one.
    pub fn effective_support(&self) -> Result<EffectiveSupport> {
        self.validate()?;
        let mut entries = self.entries.clone();
        entries.sort_by_key(|e| e.0);
        let mut discarded = 0.0;
        if let Some(tail) = self.tail {
            let explicit: f64 = self.entries.iter().map(|e| e.1).sum();
            let mass = 1.0 - explicit;
            let mut remaining = mass;
            let mut j = 0;
            while remaining > self.epsilon {
                entries.push((tail.from + j, mass * (1.0 - tail.ratio) * tail.ratio.powi(j as i32)));
                j += 1;
                remaining = mass * tail.ratio.powi(j as i32);
            }
            discarded = remaining;
        }
        let total: f64 = entries.iter().map(|e| e.1).sum();
        let renormalization = 1.0 / total;
        for e in &mut entries {
            e.1 *= renormalization;
        }
        Ok(EffectiveSupport {
            entries,
            discarded_mass: discarded,
            renormalization,
        })
    }
}

impl EffectiveSupport {
    /// `(index, weight)` pairs in increasing index order.
    pub fn entries(&self) -> &[(usize, f64)] {
        &self.entries
    }

    pub fn indices(&self) -> Vec<usize> {
        self.entries.iter().map(|e| e.0).collect()
    }

    pub fn weights(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.1).collect()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn weight_of(&self, index: usize) -> Option<f64> {
        self.entries.iter().find(|e| e.0 == index).map(|e| e.1)
    }

    /// Tail mass dropped by truncation.
    pub fn discarded_mass(&self) -> f64 {
        self.discarded_mass
    }

    /// Factor applied to the kept weights so that they sum to one.
    pub fn renormalization(&self) -> f64 {
        self.renormalization
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn explicit_pair() {
        let s = WeightScheme::from_weights(&[0.5, 0.5]).unwrap().effective_support().unwrap();
        assert_eq!(s.entries(), &[(1, 0.5), (2, 0.5)]);
        assert_eq!(s.discarded_mass(), 0.0);
        assert_eq!(s.renormalization(), 1.0);
    }

    #[test]
    fn halving_tail_keeps_34() {
        let w = WeightScheme::with_tail(vec![], 0.5, 1, 1e-10).unwrap();
        let s = w.effective_support().unwrap();
        assert_eq!(s.len(), 34);
        assert_eq!(s.indices()[0], 1);
        assert!(s.discarded_mass() <= 2f64.powi(-34) * (1.0 + 1e-12));
        let total: f64 = s.weights().iter().sum();
        assert!((total - 1.0).abs() < 1e-15);
        assert!((s.weights()[0] - 0.5 / (1.0 - 2f64.powi(-34))).abs() < 1e-15);
    }

    #[test]
    fn point_mass_support() {
        let s = WeightScheme::point_mass(7).effective_support().unwrap();
        assert_eq!(s.entries(), &[(7, 1.0)]);
    }

    #[test]
    fn rejects_invalid() {
        assert!(WeightScheme::from_weights(&[0.7, 0.6]).is_err());
        assert!(WeightScheme::from_weights(&[0.5, 0.4]).is_err());
        assert!(WeightScheme::new(vec![(1, 0.5), (1, 0.5)]).is_err());
        assert!(WeightScheme::with_tail(vec![(3, 0.5)], 0.5, 2, 1e-10).is_err());
        assert!(WeightScheme::with_tail(vec![(1, 1.0)], 0.5, 2, 1e-10).is_err());
    }

    #[test]
    fn tail_after_explicit_entries() {
        let w = WeightScheme::with_tail(vec![(1, 0.5)], 0.25, 2, 1e-8).unwrap();
        let s = w.effective_support().unwrap();
        assert_eq!(s.indices()[..2], [1, 2]);
        assert!((s.weights()[1] - 0.5 * 0.75 * s.renormalization()).abs() < 1e-15);
    }

    #[test]
    fn json_form() {
        let text = r#"{"entries": [[1, 0.25], [2, 0.25]], "tail": {"ratio": 0.5, "from": 3}, "epsilon": 1e-6}"#;
        let w: WeightScheme = serde_json::from_str(text).unwrap();
        assert_eq!(w.tail, Some(GeometricTail { ratio: 0.5, from: 3 }));
        let back: WeightScheme = serde_json::from_str(&serde_json::to_string(&w).unwrap()).unwrap();
        assert_eq!(back, w);
        let plain: WeightScheme = serde_json::from_str(r#"{"entries": [[1, 1.0]]}"#).unwrap();
        assert_eq!(plain.epsilon, DEFAULT_TRUNCATION_EPSILON);
    }

    #[test]
    fn truncation_is_monotone() {
        let coarse = WeightScheme::with_tail(vec![], 0.7, 1, 1e-4).unwrap();
        let fine = WeightScheme { epsilon: 1e-5, ..coarse.clone() };
        let a = coarse.effective_support().unwrap().indices();
        let b = fine.effective_support().unwrap().indices();
        assert!(a.iter().all(|i| b.contains(i)));
        assert!(b.len() > a.len());
    }
}
