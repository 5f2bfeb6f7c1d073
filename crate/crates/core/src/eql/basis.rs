//! Power-law basis functions `φ(q) = q^p`.

use serde::{Deserialize, Serialize};

use crate::error::{EqlError, Result};
use crate::fvm::Law;

/// The basis a single mechanism is expanded in.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct BasisLibrary {
    powers: Vec<i32>,
}

impl BasisLibrary {
    pub fn powers(powers: impl IntoIterator<Item = i32>) -> Self {
        Self {
            powers: powers.into_iter().collect(),
        }
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.powers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.powers.is_empty()
    }

    pub fn exponents(&self) -> &[i32] {
        &self.powers
    }

    pub fn label(&self, k: usize) -> String {
        match self.powers[k] {
            0 => "1".to_string(),
            1 => "q".to_string(),
            p => format!("q^{p}"),
        }
    }

    #[inline]
    pub fn eval(&self, k: usize, q: f64) -> f64 {
        q.powi(self.powers[k])
    }

    #[inline]
    pub fn derivative(&self, k: usize, q: f64) -> f64 {
        match self.powers[k] {
            0 => 0.0,
            p => p as f64 * q.powi(p - 1),
        }
    }

    /// `Σ θ_k φ_k(q)`.
    pub fn combine(&self, theta: &[f64], q: f64) -> f64 {
        theta.iter().enumerate().map(|(k, c)| c * self.eval(k, q)).sum()
    }

    /// The expansion with coefficients `theta` as a PDE law; zero terms are dropped.
    pub fn law(&self, theta: &[f64]) -> Law {
        let terms: Vec<(i32, f64)> = self
            .powers
            .iter()
            .zip(theta)
            .filter(|(_, c)| **c != 0.0)
            .map(|(&p, &c)| (p, c))
            .collect();
        if terms.is_empty() {
            Law::Zero
        } else {
            Law::Expansion(terms)
        }
    }

    /// Every basis function and its derivative must be finite on `[lo, hi]`.
    pub fn check_range(&self, lo: f64, hi: f64) -> Result<()> {
        if self.powers.iter().any(|&p| p < 0) && lo <= 0.0 {
            return Err(EqlError::Domain(format!(
                "negative powers are singular on the density range [{lo}, {hi}]"
            )));
        }
        for k in 0..self.len() {
            for q in [lo, hi] {
                if !self.eval(k, q).is_finite() || !self.derivative(k, q).is_finite() {
                    return Err(EqlError::Domain(format!(
                        "basis function {} is not finite at q = {q}",
                        self.label(k)
                    )));
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn values_and_derivatives() {
        let b = BasisLibrary::powers([-2, 0, 1, 3]);
        assert_eq!(b.eval(0, 2.0), 0.25);
        assert_eq!(b.derivative(0, 2.0), -0.25);
        assert_eq!(b.derivative(1, 7.0), 0.0);
        assert_eq!(b.derivative(3, 2.0), 12.0);
        assert_eq!(b.label(0), "q^-2");
        assert_eq!(b.label(2), "q");
    }

    #[test]
    fn law_drops_zero_terms() {
        let b = BasisLibrary::powers([-1, -2, -3]);
        let law = b.law(&[0.0, 50.0, 0.0]);
        assert!((law.eval(5.0) - 2.0).abs() < 1e-14);
        assert!(b.law(&[0.0; 3]).is_zero());
    }

    #[test]
    fn singular_range_rejected() {
        assert!(BasisLibrary::powers([-1]).check_range(0.0, 1.0).is_err());
        assert!(BasisLibrary::powers([-1, 2]).check_range(0.5, 1.0).is_ok());
    }
}
