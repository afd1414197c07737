//! Noisy training data for the correction term.
//!
//! Two routes produce samples `f̃ = F(y) + ε`: direct injection of Gaussian
//! noise on the ground-truth correction (simulation mode), and
//! finite-difference derivative estimation from sampled trajectories, where
//! the "noise" is discretization error.
//!
//! Noise draws are reproducible: experiment `k` reads from ChaCha stream `k`
//! of the generator seeded by the noise model, so per-trajectory sampling
//! may run in any order or in parallel without changing the data.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dynamics::{ModelTag, SystemSpec, Trajectory};
use crate::error::{Error, Result};
use crate::seeding::rng_for;

/// Gaussian measurement-noise model `ε ~ N(0, Σ_ε)` plus the RNG seed that
/// makes draws reproducible.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    covariance: DMatrix<f64>,
    seed: u64,
}

impl NoiseModel {
    /// Validates symmetry (within 1e-12) and strict positive definiteness.
    pub fn new(covariance: DMatrix<f64>, seed: u64) -> Result<Self> {
        let n = covariance.nrows();
        if covariance.ncols() != n || n == 0 {
            return Err(Error::argument(
                "noise covariance must be square and non-empty",
            ));
        }
        let asym = (&covariance - covariance.transpose()).norm();
        if asym > 1e-12 * covariance.norm().max(1.0) {
            return Err(Error::argument("noise covariance must be symmetric"));
        }
        let eig = nalgebra::SymmetricEigen::new(covariance.clone());
        if eig.eigenvalues.iter().any(|&l| !(l.is_finite() && l > 0.0)) {
            return Err(Error::argument(
                "noise covariance must be positive definite",
            ));
        }
        Ok(NoiseModel { covariance, seed })
    }

    /// Isotropic noise `σ² I` in `dim` components.
    pub fn isotropic(dim: usize, variance: f64, seed: u64) -> Result<Self> {
        if !(variance.is_finite() && variance > 0.0) {
            return Err(Error::argument("noise variance must be positive"));
        }
        NoiseModel::new(DMatrix::identity(dim, dim) * variance, seed)
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.covariance
    }

    pub fn dim(&self) -> usize {
        self.covariance.nrows()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn with_seed(&self, seed: u64) -> NoiseModel {
        NoiseModel {
            covariance: self.covariance.clone(),
            seed,
        }
    }

    /// `Some(σ²)` when the covariance is exactly `σ² I`.
    pub fn isotropic_variance(&self) -> Option<f64> {
        let s2 = self.covariance[(0, 0)];
        for i in 0..self.dim() {
            for j in 0..self.dim() {
                let want = if i == j { s2 } else { 0.0 };
                if self.covariance[(i, j)] != want {
                    return None;
                }
            }
        }
        Some(s2)
    }

    /// Per-component variances when the covariance is diagonal.
    pub fn diagonal_variances(&self) -> Option<DVector<f64>> {
        for i in 0..self.dim() {
            for j in 0..self.dim() {
                if i != j && self.covariance[(i, j)] != 0.0 {
                    return None;
                }
            }
        }
        Some(self.covariance.diagonal())
    }

    /// Smallest singular value of Σ_ε (= smallest eigenvalue; SPD).
    pub fn sigma_min(&self) -> f64 {
        nalgebra::SymmetricEigen::new(self.covariance.clone())
            .eigenvalues
            .iter()
            .cloned()
            .fold(f64::INFINITY, f64::min)
    }

    fn chol_l(&self) -> DMatrix<f64> {
        nalgebra::Cholesky::new(self.covariance.clone())
            .expect("validated SPD covariance")
            .unpack()
    }
}

/// One training pair: a visited state and a noisy correction reading there.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrectionSample {
    pub state: DVector<f64>,
    pub value: DVector<f64>,
    pub source_experiment: usize,
    pub source_time_index: usize,
}

/// A batch of correction samples sharing one dimension and noise model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationSet {
    samples: Vec<CorrectionSample>,
    noise: NoiseModel,
}

impl ObservationSet {
    pub fn new(samples: Vec<CorrectionSample>, noise: NoiseModel) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::argument("observation set must be non-empty"));
        }
        let d = noise.dim();
        let state_dim = samples[0].state.len();
        for s in &samples {
            if s.value.len() != d {
                return Err(Error::Dimension {
                    expected: d,
                    actual: s.value.len(),
                });
            }
            if s.state.len() != state_dim {
                return Err(Error::Dimension {
                    expected: state_dim,
                    actual: s.state.len(),
                });
            }
        }
        Ok(ObservationSet { samples, noise })
    }

    pub fn samples(&self) -> &[CorrectionSample] {
        &self.samples
    }

    pub fn noise(&self) -> &NoiseModel {
        &self.noise
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Dimension of the sample values (= noise dimension).
    pub fn value_dim(&self) -> usize {
        self.noise.dim()
    }

    /// Dimension of the sample states.
    pub fn state_dim(&self) -> usize {
        self.samples[0].state.len()
    }

    pub fn states(&self) -> Vec<DVector<f64>> {
        self.samples.iter().map(|s| s.state.clone()).collect()
    }

    /// Stacked values, one row per sample, one column per component.
    pub fn value_matrix(&self) -> DMatrix<f64> {
        let d = self.value_dim();
        DMatrix::from_fn(self.samples.len(), d, |i, j| self.samples[i].value[j])
    }

    /// Keeps only the listed state components and value components,
    /// projecting the noise covariance onto the kept value components.
    ///
    /// Used when the correction is known to depend on a subset of the state
    /// (e.g. a force field that is a function of position only).
    pub fn project(
        &self,
        state_components: &[usize],
        value_components: &[usize],
    ) -> Result<ObservationSet> {
        if state_components.is_empty() || value_components.is_empty() {
            return Err(Error::argument(
                "projection component lists must be non-empty",
            ));
        }
        let sd = self.state_dim();
        let vd = self.value_dim();
        if state_components.iter().any(|&c| c >= sd) || value_components.iter().any(|&c| c >= vd) {
            return Err(Error::argument("projection component out of range"));
        }
        let cov = DMatrix::from_fn(value_components.len(), value_components.len(), |i, j| {
            self.noise.covariance()[(value_components[i], value_components[j])]
        });
        let noise = NoiseModel::new(cov, self.noise.seed())?;
        let samples = self
            .samples
            .iter()
            .map(|s| CorrectionSample {
                state: DVector::from_iterator(
                    state_components.len(),
                    state_components.iter().map(|&c| s.state[c]),
                ),
                value: DVector::from_iterator(
                    value_components.len(),
                    value_components.iter().map(|&c| s.value[c]),
                ),
                source_experiment: s.source_experiment,
                source_time_index: s.source_time_index,
            })
            .collect();
        ObservationSet::new(samples, noise)
    }

    /// CSV with columns `k,i,y_1..y_d,f_1..f_d`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let sd = self.state_dim();
        let vd = self.value_dim();
        let mut header = vec!["k".to_string(), "i".to_string()];
        header.extend((1..=sd).map(|j| format!("y_{j}")));
        header.extend((1..=vd).map(|j| format!("f_{j}")));
        w.write_record(&header)?;
        for s in &self.samples {
            let mut rec = vec![
                s.source_experiment.to_string(),
                s.source_time_index.to_string(),
            ];
            rec.extend(s.state.iter().map(|v| format!("{v}")));
            rec.extend(s.value.iter().map(|v| format!("{v}")));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    /// JSON envelope carrying samples, noise covariance, and seed.
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(json: &str) -> Result<ObservationSet> {
        Ok(serde_json::from_str(json)?)
    }
}

/// Simulation-mode sampling: for every state of every true-model trajectory
/// emits `F(y) + ε`, `ε ~ N(0, Σ_ε)` from the seeded generator.
///
/// Experiment `k` (the position in `trajectories`) draws from stream `k`,
/// so results are independent of evaluation order.
pub fn sample_corrections(
    system: &SystemSpec,
    trajectories: &[Trajectory],
    noise: &NoiseModel,
) -> Result<ObservationSet> {
    if !system.has_correction() {
        return Err(Error::Mode(
            "sample_corrections needs a system with ground-truth correction".into(),
        ));
    }
    if trajectories.is_empty() {
        return Err(Error::argument("no trajectories supplied"));
    }
    if noise.dim() != system.dim() {
        return Err(Error::Dimension {
            expected: system.dim(),
            actual: noise.dim(),
        });
    }
    if trajectories
        .iter()
        .any(|t| t.model_tag != ModelTag::TrueModel)
    {
        return Err(Error::Mode(
            "sample_corrections expects true-model trajectories".into(),
        ));
    }
    let l = noise.chol_l();
    let d = system.dim();
    let mut samples = Vec::new();
    for (k, tr) in trajectories.iter().enumerate() {
        let mut rng = rng_for(noise.seed(), k as u64);
        for (i, y) in tr.states.iter().enumerate() {
            let f = system.correction(y)?;
            let xi = DVector::from_fn(d, |_, _| StandardNormal.sample(&mut rng));
            samples.push(CorrectionSample {
                state: y.clone(),
                value: f + &l * xi,
                source_experiment: k,
                source_time_index: i,
            });
        }
    }
    ObservationSet::new(samples, noise.clone())
}

/// Second-order finite-difference estimates of `dy/dt` at every grid point:
/// three-point Lagrange stencils, central in the interior and one-sided at
/// the endpoints (exact for quadratics on arbitrary grids).
pub fn estimate_derivatives(trajectory: &Trajectory) -> Result<Vec<DVector<f64>>> {
    let t = trajectory.grid.points();
    let y = &trajectory.states;
    let n = t.len();
    if n < 3 {
        return Err(Error::argument(
            "derivative estimation needs at least three grid points",
        ));
    }
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        // three consecutive nodes bracketing i
        let c = i.clamp(1, n - 2);
        let (t0, t1, t2) = (t[c - 1], t[c], t[c + 1]);
        let ti = t[i];
        let w0 = (2.0 * ti - t1 - t2) / ((t0 - t1) * (t0 - t2));
        let w1 = (2.0 * ti - t0 - t2) / ((t1 - t0) * (t1 - t2));
        let w2 = (2.0 * ti - t0 - t1) / ((t2 - t0) * (t2 - t1));
        out.push(&y[c - 1] * w0 + &y[c] * w1 + &y[c + 1] * w2);
    }
    Ok(out)
}

/// Turns derivative estimates into correction readings via
/// `f_i = dy/dt(t_i) - G(y(t_i))`.
///
/// No synthetic noise is added; the supplied noise model documents the
/// error level assumed by downstream inference.
pub fn corrections_from_derivatives(
    system: &SystemSpec,
    trajectory: &Trajectory,
    derivatives: &[DVector<f64>],
    noise: &NoiseModel,
) -> Result<ObservationSet> {
    if derivatives.len() != trajectory.states.len() {
        return Err(Error::Dimension {
            expected: trajectory.states.len(),
            actual: derivatives.len(),
        });
    }
    let samples = trajectory
        .states
        .iter()
        .zip(derivatives.iter())
        .enumerate()
        .map(|(i, (y, dy))| CorrectionSample {
            state: y.clone(),
            value: dy - system.known(y),
            source_experiment: 0,
            source_time_index: i,
        })
        .collect();
    ObservationSet::new(samples, noise.clone())
}
