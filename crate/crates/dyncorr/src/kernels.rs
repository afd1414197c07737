//! Scalar covariance functions and kernel-matrix assembly.
//!
//! The vector-valued process uses a shared scalar kernel with independent
//! output components, so a scalar kernel matrix is all that is ever built
//! here; block structure over components is assembled by the consumers.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Kernel family and hyperparameters.
///
/// `signal_variance` multiplies the kernel, so for the RBF
/// `k(y, y) = signal_variance`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum KernelConfig {
    /// `σ_f² · exp(-‖y1 - y2‖² / (2 σ_k²))`
    GaussianRbf {
        /// Squared bandwidth σ_k².
        bandwidth: f64,
        /// Signal variance σ_f².
        signal_variance: f64,
    },
    /// `σ_f² · (1 + ⟨y1, y2⟩)^m`
    Polynomial {
        /// Order m ≥ 1.
        order: u32,
        /// Signal variance σ_f².
        signal_variance: f64,
    },
}

impl KernelConfig {
    pub fn validate(&self) -> Result<()> {
        match *self {
            KernelConfig::GaussianRbf {
                bandwidth,
                signal_variance,
            } => {
                if !(bandwidth.is_finite() && bandwidth > 0.0)
                    || !(signal_variance.is_finite() && signal_variance > 0.0)
                {
                    return Err(Error::argument(
                        "gaussian_rbf requires bandwidth > 0 and signal_variance > 0",
                    ));
                }
            }
            KernelConfig::Polynomial {
                order,
                signal_variance,
            } => {
                if order == 0 || !(signal_variance.is_finite() && signal_variance > 0.0) {
                    return Err(Error::argument(
                        "polynomial requires order >= 1 and signal_variance > 0",
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn signal_variance(&self) -> f64 {
        match *self {
            KernelConfig::GaussianRbf {
                signal_variance, ..
            } => signal_variance,
            KernelConfig::Polynomial {
                signal_variance, ..
            } => signal_variance,
        }
    }

    /// Evaluates the kernel. Errors on mismatched input dimensions.
    pub fn eval(&self, y1: &DVector<f64>, y2: &DVector<f64>) -> Result<f64> {
        if y1.len() != y2.len() {
            return Err(Error::Dimension {
                expected: y1.len(),
                actual: y2.len(),
            });
        }
        Ok(self.eval_raw(y1, y2))
    }

    pub(crate) fn eval_raw(&self, y1: &DVector<f64>, y2: &DVector<f64>) -> f64 {
        match *self {
            KernelConfig::GaussianRbf {
                bandwidth,
                signal_variance,
            } => {
                let mut d2 = 0.0;
                for (a, b) in y1.iter().zip(y2.iter()) {
                    let d = a - b;
                    d2 += d * d;
                }
                signal_variance * (-d2 / (2.0 * bandwidth)).exp()
            }
            KernelConfig::Polynomial {
                order,
                signal_variance,
            } => signal_variance * (1.0 + y1.dot(y2)).powi(order as i32),
        }
    }

    /// Assembles the |S1|×|S2| kernel matrix. Errors on empty inputs or
    /// mixed dimensions.
    pub fn matrix(&self, s1: &[DVector<f64>], s2: &[DVector<f64>]) -> Result<DMatrix<f64>> {
        if s1.is_empty() || s2.is_empty() {
            return Err(Error::argument("kernel matrix of an empty point set"));
        }
        let dim = s1[0].len();
        for y in s1.iter().chain(s2.iter()) {
            if y.len() != dim {
                return Err(Error::Dimension {
                    expected: dim,
                    actual: y.len(),
                });
            }
        }
        Ok(DMatrix::from_fn(s1.len(), s2.len(), |i, j| {
            self.eval_raw(&s1[i], &s2[j])
        }))
    }

    /// Symmetric kernel matrix on one point set.
    pub fn gram(&self, s: &[DVector<f64>]) -> Result<DMatrix<f64>> {
        if s.is_empty() {
            return Err(Error::argument("kernel matrix of an empty point set"));
        }
        let n = s.len();
        let mut m = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in i..n {
                let v = self.eval_raw(&s[i], &s[j]);
                m[(i, j)] = v;
                m[(j, i)] = v;
            }
        }
        Ok(m)
    }

    /// Lipschitz constant of the RBF kernel as a function of the distance
    /// `r = ‖y1 - y2‖`: the maximum of `|dk/dr|` is attained at `r = σ_k`
    /// and equals `σ_f² / (σ_k √e)`.
    pub fn rbf_lipschitz(&self) -> Result<f64> {
        match *self {
            KernelConfig::GaussianRbf {
                bandwidth,
                signal_variance,
            } => Ok(signal_variance / (bandwidth.sqrt() * std::f64::consts::E.sqrt())),
            KernelConfig::Polynomial { .. } => Err(Error::UnsupportedKernel(
                "rbf_lipschitz is defined for gaussian_rbf only".into(),
            )),
        }
    }
}
