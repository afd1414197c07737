//! Gaussian-process posterior inference for the correction term.
//!
//! The vector-valued process uses one scalar kernel with independent output
//! components, and fitting requires a diagonal noise covariance: the
//! components then decouple and each is a scalar GP regression sharing the
//! same training states. Solves go through Cholesky factors; explicit
//! inverses appear only in test oracles.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::KernelConfig;
use crate::linalg::CholFactor;
use crate::observation::{NoiseModel, ObservationSet};

/// A fitted posterior: training states, kernel, per-component Cholesky
/// factors of `K + σ_c² I`, and solved weight columns.
#[derive(Debug, Clone)]
pub struct GpPosterior {
    training_states: Vec<DVector<f64>>,
    kernel: KernelConfig,
    noise: NoiseModel,
    factors: Vec<CholFactor>,
    weights: DMatrix<f64>,
    jitter_used: f64,
}

/// Fits the posterior from noisy correction samples.
///
/// Requires diagonal Σ_ε so the output components decouple; each component
/// solves `(K + σ_c² I) w_c = f̃_c` after Cholesky factorization with the
/// shared jitter policy.
pub fn fit(observations: &ObservationSet, kernel: KernelConfig) -> Result<GpPosterior> {
    kernel.validate()?;
    let variances = observations
        .noise()
        .diagonal_variances()
        .ok_or_else(|| Error::Mode("gp fit requires a diagonal noise covariance".into()))?;
    let states = observations.states();
    let values = observations.value_matrix();
    let gram = kernel.gram(&states)?;
    let scale = kernel.signal_variance();
    let d = observations.value_dim();
    let n = states.len();
    let mut factors = Vec::with_capacity(d);
    let mut weights = DMatrix::zeros(n, d);
    let mut jitter_used: f64 = 0.0;
    for c in 0..d {
        let mut reg = gram.clone();
        for i in 0..n {
            reg[(i, i)] += variances[c];
        }
        let factor = CholFactor::new(&reg, scale)?;
        jitter_used = jitter_used.max(factor.jitter());
        let w = factor.solve(&DMatrix::from_column_slice(
            n,
            1,
            values.column(c).as_slice(),
        ));
        weights.set_column(c, &w.column(0));
        factors.push(factor);
    }
    Ok(GpPosterior {
        training_states: states,
        kernel,
        noise: observations.noise().clone(),
        factors,
        weights,
        jitter_used,
    })
}

impl GpPosterior {
    pub fn training_states(&self) -> &[DVector<f64>] {
        &self.training_states
    }

    pub fn kernel(&self) -> KernelConfig {
        self.kernel
    }

    pub fn noise(&self) -> &NoiseModel {
        &self.noise
    }

    pub fn weights(&self) -> &DMatrix<f64> {
        &self.weights
    }

    pub fn jitter_used(&self) -> f64 {
        self.jitter_used
    }

    pub fn out_dim(&self) -> usize {
        self.weights.ncols()
    }

    pub fn input_dim(&self) -> usize {
        self.training_states[0].len()
    }

    #[cfg(test)]
    pub(crate) fn factor(&self, component: usize) -> &CholFactor {
        &self.factors[component]
    }

    /// Posterior mean at a batch of queries: one row per query, one column
    /// per output component (`k(Q, 𝒴_m) · weights`).
    pub fn posterior_mean(&self, queries: &[DVector<f64>]) -> Result<DMatrix<f64>> {
        let cross = self.kernel.matrix(queries, &self.training_states)?;
        Ok(cross * &self.weights)
    }

    /// Posterior mean at a single query state.
    pub fn posterior_mean_one(&self, y: &DVector<f64>) -> Result<DVector<f64>> {
        if y.len() != self.input_dim() {
            return Err(Error::Dimension {
                expected: self.input_dim(),
                actual: y.len(),
            });
        }
        let n = self.training_states.len();
        let mut kq = nalgebra::RowDVector::zeros(n);
        for (j, x) in self.training_states.iter().enumerate() {
            kq[j] = self.kernel.eval_raw(y, x);
        }
        Ok((kq * &self.weights).transpose())
    }

    /// Posterior covariance at a batch of queries, one matrix per output
    /// component: `k(Q,Q) - k(Q,A)[k(A,A)+σ_c²I]⁻¹k(A,Q)`.
    pub fn posterior_cov(&self, queries: &[DVector<f64>]) -> Result<Vec<DMatrix<f64>>> {
        let prior = self.kernel.gram(queries)?;
        let cross = self.kernel.matrix(queries, &self.training_states)?;
        let cross_t = cross.transpose();
        let mut out = Vec::with_capacity(self.factors.len());
        for factor in &self.factors {
            let solved = factor.solve(&cross_t);
            out.push(&prior - &cross * solved);
        }
        Ok(out)
    }
}

/// Serializable snapshot of a fit; the Cholesky factors are recomputed on
/// load.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GpArtifact {
    pub training_states: Vec<Vec<f64>>,
    pub kernel: KernelConfig,
    pub noise: NoiseModel,
    pub weights: Vec<Vec<f64>>,
}

impl GpPosterior {
    pub fn to_artifact(&self) -> GpArtifact {
        GpArtifact {
            training_states: self
                .training_states
                .iter()
                .map(|s| s.iter().cloned().collect())
                .collect(),
            kernel: self.kernel,
            noise: self.noise.clone(),
            weights: (0..self.weights.nrows())
                .map(|i| self.weights.row(i).iter().cloned().collect())
                .collect(),
        }
    }

    /// Rebuilds a posterior from an artifact, refactorizing the kernel
    /// matrix and checking that the stored weights still solve the system.
    pub fn from_artifact(artifact: &GpArtifact) -> Result<GpPosterior> {
        let states: Vec<DVector<f64>> = artifact
            .training_states
            .iter()
            .map(|s| DVector::from_row_slice(s))
            .collect();
        if states.is_empty() {
            return Err(Error::argument("artifact has no training states"));
        }
        let n = states.len();
        let d = artifact.noise.dim();
        if artifact.weights.len() != n || artifact.weights.iter().any(|r| r.len() != d) {
            return Err(Error::argument("artifact weight shape mismatch"));
        }
        let variances = artifact
            .noise
            .diagonal_variances()
            .ok_or_else(|| Error::Mode("gp artifact requires diagonal noise".into()))?;
        let weights = DMatrix::from_fn(n, d, |i, j| artifact.weights[i][j]);
        let gram = artifact.kernel.gram(&states)?;
        let mut factors = Vec::with_capacity(d);
        let mut jitter_used: f64 = 0.0;
        for c in 0..d {
            let mut reg = gram.clone();
            for i in 0..n {
                reg[(i, i)] += variances[c];
            }
            let factor = CholFactor::new(&reg, artifact.kernel.signal_variance())?;
            jitter_used = jitter_used.max(factor.jitter());
            factors.push(factor);
        }
        Ok(GpPosterior {
            training_states: states,
            kernel: artifact.kernel,
            noise: artifact.noise.clone(),
            factors,
            weights,
            jitter_used,
        })
    }
}
