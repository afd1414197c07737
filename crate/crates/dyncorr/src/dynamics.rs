//! ODE systems and fixed-step trajectory integration.
//!
//! A system splits its vector field into a known term `G` and an optional
//! hidden correction `F` (present only when simulating ground truth). The
//! proxy model integrates `G` alone; the true model integrates `G + F`.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

pub type VectorField = Arc<dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync>;

/// Axis-aligned box with strictly positive extent along every axis.
#[derive(Debug, Clone)]
pub struct DomainBox {
    lo: DVector<f64>,
    hi: DVector<f64>,
}

impl DomainBox {
    pub fn new(lo: DVector<f64>, hi: DVector<f64>) -> Result<Self> {
        if lo.len() != hi.len() {
            return Err(Error::Dimension {
                expected: lo.len(),
                actual: hi.len(),
            });
        }
        if lo
            .iter()
            .zip(hi.iter())
            .any(|(a, b)| !(a.is_finite() && b.is_finite() && b > a))
        {
            return Err(Error::argument(
                "domain box must have positive extent along every axis",
            ));
        }
        Ok(DomainBox { lo, hi })
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn lo(&self) -> &DVector<f64> {
        &self.lo
    }

    pub fn hi(&self) -> &DVector<f64> {
        &self.hi
    }

    pub fn contains(&self, y: &DVector<f64>) -> bool {
        y.len() == self.dim()
            && y.iter()
                .enumerate()
                .all(|(i, &v)| v >= self.lo[i] && v <= self.hi[i])
    }

    pub fn center(&self) -> DVector<f64> {
        (&self.lo + &self.hi) * 0.5
    }
}

/// An ODE system `dy/dt = G(y) + F(y)` with `G` known and `F` hidden.
#[derive(Clone)]
pub struct SystemSpec {
    dim: usize,
    known_term: VectorField,
    true_correction: Option<VectorField>,
    domain_bounds: DomainBox,
}

impl fmt::Debug for SystemSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SystemSpec")
            .field("dim", &self.dim)
            .field("has_correction", &self.true_correction.is_some())
            .finish()
    }
}

impl SystemSpec {
    /// Builds a system, probing both terms once at the domain center to
    /// catch dimension bugs in the supplied closures early.
    pub fn new(
        dim: usize,
        known_term: VectorField,
        true_correction: Option<VectorField>,
        domain_bounds: DomainBox,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(Error::argument("system dimension must be positive"));
        }
        if domain_bounds.dim() != dim {
            return Err(Error::Dimension {
                expected: dim,
                actual: domain_bounds.dim(),
            });
        }
        let probe = domain_bounds.center();
        if known_term(&probe).len() != dim {
            return Err(Error::argument("known_term output has wrong dimension"));
        }
        if let Some(f) = &true_correction {
            if f(&probe).len() != dim {
                return Err(Error::argument(
                    "true_correction output has wrong dimension",
                ));
            }
        }
        Ok(SystemSpec {
            dim,
            known_term,
            true_correction,
            domain_bounds,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn domain_bounds(&self) -> &DomainBox {
        &self.domain_bounds
    }

    pub fn has_correction(&self) -> bool {
        self.true_correction.is_some()
    }

    /// The known term `G(y)`.
    pub fn known(&self, y: &DVector<f64>) -> DVector<f64> {
        (self.known_term)(y)
    }

    /// The hidden correction `F(y)`; errors when running without ground truth.
    pub fn correction(&self, y: &DVector<f64>) -> Result<DVector<f64>> {
        match &self.true_correction {
            Some(f) => Ok(f(y)),
            None => Err(Error::Mode(
                "system has no ground-truth correction term".into(),
            )),
        }
    }

    /// A copy with the hidden correction removed (proxy-only system).
    pub fn without_correction(&self) -> SystemSpec {
        SystemSpec {
            dim: self.dim,
            known_term: Arc::clone(&self.known_term),
            true_correction: None,
            domain_bounds: self.domain_bounds.clone(),
        }
    }
}

/// Strictly increasing observation times `t_1 < … < t_T`, `T ≥ 2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    points: Vec<f64>,
}

impl TimeGrid {
    pub fn new(points: Vec<f64>) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::argument("time grid needs at least two points"));
        }
        if points.iter().any(|t| !t.is_finite() || *t < 0.0) {
            return Err(Error::argument(
                "time grid points must be finite and nonnegative",
            ));
        }
        if points.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::argument("time grid must be strictly increasing"));
        }
        Ok(TimeGrid { points })
    }

    /// `count` equally spaced points spanning `[t0, t1]` inclusive.
    pub fn uniform(t0: f64, t1: f64, count: usize) -> Result<Self> {
        if count < 2 {
            return Err(Error::argument("time grid needs at least two points"));
        }
        let step = (t1 - t0) / (count - 1) as f64;
        TimeGrid::new((0..count).map(|i| t0 + step * i as f64).collect())
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn count(&self) -> usize {
        self.points.len()
    }
}

/// Which vector field generated a trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelTag {
    TrueModel,
    ProxyModel,
}

/// A sampled solution path: states at every grid point.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub initial_condition: DVector<f64>,
    pub grid: TimeGrid,
    pub states: Vec<DVector<f64>>,
    pub model_tag: ModelTag,
}

impl Trajectory {
    pub fn dim(&self) -> usize {
        self.initial_condition.len()
    }
}

fn rk4_step(
    field: &dyn Fn(&DVector<f64>) -> DVector<f64>,
    y: &DVector<f64>,
    h: f64,
) -> DVector<f64> {
    let k1 = field(y);
    let k2 = field(&(y + &k1 * (h / 2.0)));
    let k3 = field(&(y + &k2 * (h / 2.0)));
    let k4 = field(&(y + &k3 * h));
    y + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0)
}

/// Integrates an arbitrary autonomous field from `t = 0`, sampling at the
/// grid points, with `substeps` RK4 steps per interval.
fn integrate_field(
    field: &dyn Fn(&DVector<f64>) -> DVector<f64>,
    y0: &DVector<f64>,
    grid: &TimeGrid,
    substeps: usize,
    tag: ModelTag,
) -> Result<Trajectory> {
    if substeps == 0 {
        return Err(Error::argument("substeps must be at least 1"));
    }
    let mut states = Vec::with_capacity(grid.count());
    let mut y = y0.clone();
    let mut t = 0.0;
    for &target in grid.points() {
        if target > t {
            let h = (target - t) / substeps as f64;
            for s in 0..substeps {
                y = rk4_step(field, &y, h);
                if y.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Integration {
                        time: t + h * (s + 1) as f64,
                    });
                }
            }
            t = target;
        }
        states.push(y.clone());
    }
    Ok(Trajectory {
        initial_condition: y0.clone(),
        grid: grid.clone(),
        states,
        model_tag: tag,
    })
}

/// Classical fixed-step RK4 solution of the system sampled at grid points.
///
/// With `use_correction` set the full field `G + F` is integrated (ground
/// truth must be present); otherwise the proxy field `G` alone.
pub fn integrate_rk4(
    system: &SystemSpec,
    use_correction: bool,
    y0: &DVector<f64>,
    grid: &TimeGrid,
    substeps: usize,
) -> Result<Trajectory> {
    if y0.len() != system.dim() {
        return Err(Error::Dimension {
            expected: system.dim(),
            actual: y0.len(),
        });
    }
    if use_correction {
        let correction = system
            .true_correction
            .as_ref()
            .ok_or_else(|| Error::Mode("system has no ground-truth correction term".into()))?;
        let known = &system.known_term;
        let field = |y: &DVector<f64>| known(y) + correction(y);
        integrate_field(&field, y0, grid, substeps, ModelTag::TrueModel)
    } else {
        let known = &system.known_term;
        let field = |y: &DVector<f64>| known(y);
        integrate_field(&field, y0, grid, substeps, ModelTag::ProxyModel)
    }
}

/// Integrates `dy/dt = G(y) + correction(y)` for a caller-supplied
/// correction estimate (used when emulating a learned model).
pub fn integrate_corrected(
    system: &SystemSpec,
    correction: &(dyn Fn(&DVector<f64>) -> DVector<f64> + Sync),
    y0: &DVector<f64>,
    grid: &TimeGrid,
    substeps: usize,
) -> Result<Trajectory> {
    if y0.len() != system.dim() {
        return Err(Error::Dimension {
            expected: system.dim(),
            actual: y0.len(),
        });
    }
    let known = &system.known_term;
    let field = |y: &DVector<f64>| known(y) + correction(y);
    integrate_field(&field, y0, grid, substeps, ModelTag::TrueModel)
}

/// Flow of the linear system `dy/dt = A y`: returns `e^{A t} y0`.
pub fn linear_flow(a: &DMatrix<f64>, y0: &DVector<f64>, t: f64) -> Result<DVector<f64>> {
    if a.nrows() != a.ncols() {
        return Err(Error::Dimension {
            expected: a.nrows(),
            actual: a.ncols(),
        });
    }
    if y0.len() != a.nrows() {
        return Err(Error::Dimension {
            expected: a.nrows(),
            actual: y0.len(),
        });
    }
    if !t.is_finite() || a.iter().any(|v| !v.is_finite()) {
        return Err(Error::argument("linear_flow requires finite A and t"));
    }
    Ok(linalg::expm(&(a * t))? * y0)
}

/// Integrates the proxy model `dy/dt = G(y)` from every seed, in seed order.
///
/// Seeds must lie inside the domain box; trajectories that later exit the
/// box are kept (a warning is logged).
pub fn proxy_states(
    system: &SystemSpec,
    seeds: &[DVector<f64>],
    grid: &TimeGrid,
    substeps: usize,
) -> Result<Vec<Trajectory>> {
    for (i, seed) in seeds.iter().enumerate() {
        if seed.len() != system.dim() {
            return Err(Error::Dimension {
                expected: system.dim(),
                actual: seed.len(),
            });
        }
        if !system.domain_bounds().contains(seed) {
            return Err(Error::argument(format!(
                "seed {i} lies outside the domain box"
            )));
        }
    }
    let trajectories: Result<Vec<_>> = seeds
        .par_iter()
        .map(|seed| integrate_rk4(system, false, seed, grid, substeps))
        .collect();
    let trajectories = trajectories?;
    for (i, tr) in trajectories.iter().enumerate() {
        if tr
            .states
            .iter()
            .any(|y| !system.domain_bounds().contains(y))
        {
            log::warn!("proxy trajectory from seed {i} exits the domain box");
        }
    }
    Ok(trajectories)
}
