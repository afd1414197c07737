//! Experiment selection by mutual-information maximization.
//!
//! The objective scores a set of candidate initial conditions by the mutual
//! information between the noisy correction readings along their *proxy*
//! trajectories (known term only) and the latent regression coefficients:
//!
//! ```text
//! G̃(S) = log det Σ_g - log det Σ_{g|Θ}
//! ```
//!
//! where `Σ_g` adds the measurement-noise structure to the kernel matrix of
//! the proxy states and `Σ_{g|Θ}` is the noise alone. `G̃` is monotone and
//! submodular, so greedy selection carries the (1 - 1/e) guarantee; the
//! lazy variant reuses stale marginal-gain upper bounds and returns the
//! identical selection. Discrepancy bounds quantify how far the proxy
//! objective can drift from the unobservable true-trajectory objective.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap};

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dynamics::{proxy_states, SystemSpec, TimeGrid};
use crate::error::{Error, Result};
use crate::kernels::KernelConfig;
use crate::linalg::CholFactor;
use crate::observation::NoiseModel;
use crate::seeding::rng_for;

/// How a full system state maps to the kernel's input space.
///
/// `Identity` feeds states through unchanged; `Components` keeps the listed
/// coordinates (e.g. spatial position when the correction is known to be a
/// function of position only).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StateProjection {
    Identity,
    Components { components: Vec<usize> },
}

impl StateProjection {
    pub fn apply(&self, y: &DVector<f64>) -> DVector<f64> {
        match self {
            StateProjection::Identity => y.clone(),
            StateProjection::Components { components } => {
                DVector::from_iterator(components.len(), components.iter().map(|&c| y[c]))
            }
        }
    }
}

/// A design instance: candidate seeds, budget, observation grid, and the
/// GP model (kernel + noise) the selection optimizes for.
#[derive(Clone)]
pub struct DesignProblem {
    pub candidates: Vec<DVector<f64>>,
    pub budget: usize,
    pub grid: TimeGrid,
    pub substeps: usize,
    pub kernel: KernelConfig,
    pub noise: NoiseModel,
    pub system: SystemSpec,
    /// Maps proxy states into the kernel input space.
    pub projection: StateProjection,
    /// Number of independent GP output components observed per state.
    pub out_dim: usize,
}

impl DesignProblem {
    pub fn validate(&self) -> Result<()> {
        self.kernel.validate()?;
        if self.budget == 0 {
            return Err(Error::argument("design budget must be at least 1"));
        }
        if self.budget > self.candidates.len() {
            return Err(Error::argument("design budget exceeds candidate count"));
        }
        if self.substeps == 0 {
            return Err(Error::argument("substeps must be at least 1"));
        }
        if self.noise.dim() != self.out_dim {
            return Err(Error::Dimension {
                expected: self.out_dim,
                actual: self.noise.dim(),
            });
        }
        if let StateProjection::Components { components } = &self.projection {
            if components.is_empty() || components.iter().any(|&c| c >= self.system.dim()) {
                return Err(Error::argument("projection components out of range"));
            }
        }
        for (i, c) in self.candidates.iter().enumerate() {
            if c.len() != self.system.dim() {
                return Err(Error::Dimension {
                    expected: self.system.dim(),
                    actual: c.len(),
                });
            }
            if !self.system.domain_bounds().contains(c) {
                return Err(Error::argument(format!(
                    "candidate {i} lies outside the domain box"
                )));
            }
        }
        for i in 1..self.candidates.len() {
            if self.candidates[..i].contains(&self.candidates[i]) {
                return Err(Error::argument(format!("candidate {i} is a duplicate")));
            }
        }
        Ok(())
    }
}

/// Outcome of a selection run: seeds in pick order, the marginal gain of
/// each pick, the final objective, and how many objective evaluations the
/// algorithm spent.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DesignResult {
    pub selected_indices: Vec<usize>,
    pub selected_seeds: Vec<Vec<f64>>,
    pub gains: Vec<f64>,
    pub objective: f64,
    pub evaluations: usize,
}

/// Mutual information of noisy GP observations at an explicit state set:
/// `Σ_c [log det(K + λ_c I) - n log λ_c]` when the noise is isotropic
/// (`λ_c = σ²` for each of the `out_dim` components), and the full
/// block determinant `log det(I_d ⊗ K + Σ_ε ⊗ I_n) - n log det Σ_ε`
/// otherwise.
pub fn mi_of_states(
    states: &[DVector<f64>],
    out_dim: usize,
    kernel: &KernelConfig,
    noise: &NoiseModel,
) -> Result<f64> {
    if states.is_empty() {
        return Err(Error::argument("mutual information of an empty state set"));
    }
    if noise.dim() != out_dim {
        return Err(Error::Dimension {
            expected: out_dim,
            actual: noise.dim(),
        });
    }
    if let Some(s2) = noise.isotropic_variance() {
        let n = states.len();
        let mut reg = kernel.gram(states)?;
        for i in 0..n {
            reg[(i, i)] += s2;
        }
        let factor = CholFactor::new(&reg, kernel.signal_variance())?;
        Ok(out_dim as f64 * (factor.logdet() - n as f64 * s2.ln()))
    } else {
        mi_of_states_block(states, out_dim, kernel, noise)
    }
}

/// Reference implementation of the mutual information through the explicit
/// `(d n) × (d n)` block covariance. Exercised directly by tests as an
/// oracle for the isotropic fast path; also the production path for
/// non-isotropic noise.
pub fn mi_of_states_block(
    states: &[DVector<f64>],
    out_dim: usize,
    kernel: &KernelConfig,
    noise: &NoiseModel,
) -> Result<f64> {
    if states.is_empty() {
        return Err(Error::argument("mutual information of an empty state set"));
    }
    let n = states.len();
    let d = out_dim;
    let gram = kernel.gram(states)?;
    let cov = noise.covariance();
    // component-major ordering: row c*n + i observes component c at state i
    let mut sigma_g = DMatrix::zeros(d * n, d * n);
    for c1 in 0..d {
        for c2 in 0..d {
            for i in 0..n {
                for j in 0..n {
                    let kernel_part = if c1 == c2 { gram[(i, j)] } else { 0.0 };
                    let noise_part = if i == j { cov[(c1, c2)] } else { 0.0 };
                    sigma_g[(c1 * n + i, c2 * n + j)] = kernel_part + noise_part;
                }
            }
        }
    }
    let factor = CholFactor::new(&sigma_g, kernel.signal_variance())?;
    let noise_factor = CholFactor::new(cov, 1.0)?;
    Ok(factor.logdet() - n as f64 * noise_factor.logdet())
}

/// Caches per-candidate proxy trajectories (projected into kernel space) so
/// that repeated objective evaluations never re-integrate the dynamics.
pub struct Evaluator {
    kernel: KernelConfig,
    noise: NoiseModel,
    out_dim: usize,
    states_per_candidate: usize,
    proxy: Vec<Vec<DVector<f64>>>,
}

impl Evaluator {
    pub fn new(problem: &DesignProblem) -> Result<Self> {
        problem.validate()?;
        let trajectories = proxy_states(
            &problem.system,
            &problem.candidates,
            &problem.grid,
            problem.substeps,
        )?;
        let proxy: Vec<Vec<DVector<f64>>> = trajectories
            .iter()
            .map(|tr| {
                tr.states
                    .iter()
                    .map(|y| problem.projection.apply(y))
                    .collect()
            })
            .collect();
        Ok(Evaluator {
            kernel: problem.kernel,
            noise: problem.noise.clone(),
            out_dim: problem.out_dim,
            states_per_candidate: problem.grid.count(),
            proxy,
        })
    }

    pub fn candidate_count(&self) -> usize {
        self.proxy.len()
    }

    /// Projected proxy states of one candidate.
    pub fn proxy_of(&self, candidate: usize) -> &[DVector<f64>] {
        &self.proxy[candidate]
    }

    fn collect_states(&self, subset: &[usize]) -> Vec<DVector<f64>> {
        let mut states = Vec::with_capacity(subset.len() * self.states_per_candidate);
        for &idx in subset {
            states.extend(self.proxy[idx].iter().cloned());
        }
        states
    }

    /// Objective value of a subset (empty subsets score zero).
    pub fn mi(&self, subset: &[usize]) -> Result<f64> {
        if subset.is_empty() {
            return Ok(0.0);
        }
        let states = self.collect_states(subset);
        mi_of_states(&states, self.out_dim, &self.kernel, &self.noise)
    }
}

/// Mutual information of a non-empty subset of the candidate seeds.
pub fn mutual_information(problem: &DesignProblem, subset: &[usize]) -> Result<f64> {
    if subset.is_empty() {
        return Err(Error::argument("subset must be non-empty"));
    }
    if subset.iter().any(|&i| i >= problem.candidates.len()) {
        return Err(Error::argument("subset index out of range"));
    }
    Evaluator::new(problem)?.mi(subset)
}

/// Running selection state shared by the greedy variants: the chosen
/// indices, their concatenated proxy states, and (for isotropic noise) the
/// Cholesky factor of the regularized kernel matrix on those states, which
/// turns each marginal-gain evaluation into a rank-T extension.
struct Selection<'a> {
    eval: &'a Evaluator,
    chosen: Vec<usize>,
    gains_trace: Vec<f64>,
    states: Vec<DVector<f64>>,
    factor: Option<CholFactor>,
    isotropic: Option<f64>,
    current_mi: f64,
    evaluations: usize,
}

impl<'a> Selection<'a> {
    fn new(eval: &'a Evaluator) -> Self {
        Selection {
            eval,
            chosen: Vec::new(),
            gains_trace: Vec::new(),
            states: Vec::new(),
            factor: None,
            isotropic: eval.noise.isotropic_variance(),
            current_mi: 0.0,
            evaluations: 0,
        }
    }

    /// Marginal gain of adding `candidate` to the current selection.
    ///
    /// Isotropic noise uses the cached factor and a Schur-complement
    /// log-determinant; anything else (or a failed extension) falls back to
    /// a full recompute, which is the reference semantics.
    fn gain(&mut self, candidate: usize) -> Result<f64> {
        self.evaluations += 1;
        if let Some(s2) = self.isotropic {
            let cand_states = self.eval.proxy_of(candidate);
            let t = cand_states.len();
            let mut corner = self.eval.kernel.gram(cand_states)?;
            for i in 0..t {
                corner[(i, i)] += s2;
            }
            let d = self.eval.out_dim as f64;
            match &self.factor {
                None => {
                    let factor = CholFactor::new(&corner, self.eval.kernel.signal_variance())?;
                    return Ok(d * (factor.logdet() - t as f64 * s2.ln()));
                }
                Some(factor) => {
                    let cross = self.eval.kernel.matrix(&self.states, cand_states)?;
                    if let Ok(ext) = factor.extension_logdet(&cross, &corner) {
                        return Ok(d * (ext - t as f64 * s2.ln()));
                    }
                    // fall through to full recompute on extension failure
                }
            }
        }
        let mut subset = self.chosen.clone();
        subset.push(candidate);
        Ok(self.eval.mi(&subset)? - self.current_mi)
    }

    fn select(&mut self, candidate: usize, gain: f64) -> Result<()> {
        self.chosen.push(candidate);
        self.gains_trace.push(gain);
        self.states
            .extend(self.eval.proxy_of(candidate).iter().cloned());
        self.current_mi += gain;
        if let Some(s2) = self.isotropic {
            let n = self.states.len();
            let mut reg = self.eval.kernel.gram(&self.states)?;
            for i in 0..n {
                reg[(i, i)] += s2;
            }
            self.factor = Some(CholFactor::new(&reg, self.eval.kernel.signal_variance())?);
        }
        Ok(())
    }
}

fn finish(eval: &Evaluator, problem: &DesignProblem, sel: Selection) -> Result<DesignResult> {
    let objective = eval.mi(&sel.chosen)?;
    Ok(DesignResult {
        selected_seeds: sel
            .chosen
            .iter()
            .map(|&i| problem.candidates[i].iter().cloned().collect())
            .collect(),
        selected_indices: sel.chosen,
        gains: sel.gains_trace,
        objective,
        evaluations: sel.evaluations,
    })
}

/// Plain greedy maximization: each of the `budget` iterations evaluates the
/// marginal gain of every remaining candidate and picks the argmax, ties
/// broken by lowest candidate index.
pub fn greedy_design(problem: &DesignProblem) -> Result<DesignResult> {
    let eval = Evaluator::new(problem)?;
    greedy_with_admissibility(problem, &eval, problem.budget, |_, _| true)
}

fn greedy_with_admissibility(
    problem: &DesignProblem,
    eval: &Evaluator,
    budget: usize,
    admissible: impl Fn(&[usize], usize) -> bool,
) -> Result<DesignResult> {
    let n = eval.candidate_count();
    let mut sel = Selection::new(eval);
    for _ in 0..budget {
        let remaining: Vec<usize> = (0..n)
            .filter(|i| !sel.chosen.contains(i) && admissible(&sel.chosen, *i))
            .collect();
        if remaining.is_empty() {
            break;
        }
        let mut best: Option<(usize, f64)> = None;
        for idx in remaining {
            let g = sel.gain(idx)?;
            // strict improvement keeps the lowest index on ties
            if best.is_none_or(|(_, bg)| g > bg) {
                best = Some((idx, g));
            }
        }
        let (idx, g) = best.expect("non-empty remaining set");
        sel.select(idx, g)?;
    }
    finish(eval, problem, sel)
}

#[derive(Debug)]
struct HeapEntry {
    gain: f64,
    index: usize,
    step: usize,
}

impl PartialEq for HeapEntry {
    fn eq(&self, other: &Self) -> bool {
        self.gain == other.gain && self.index == other.index
    }
}
impl Eq for HeapEntry {}
impl PartialOrd for HeapEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for HeapEntry {
    fn cmp(&self, other: &Self) -> Ordering {
        // max-heap: larger gain first, then lower index
        self.gain
            .partial_cmp(&other.gain)
            .expect("marginal gains are finite")
            .then_with(|| other.index.cmp(&self.index))
    }
}

/// Lazy greedy maximization (Minoux): a max-priority queue holds stale
/// upper bounds on the marginal gains; an entry popped with a bound from an
/// earlier iteration is re-evaluated and pushed back, and a fresh top is
/// selected immediately. Returns the identical selection and gains as
/// [`greedy_design`] with strictly fewer evaluations on typical instances.
pub fn lazy_greedy_design(problem: &DesignProblem) -> Result<DesignResult> {
    let eval = Evaluator::new(problem)?;
    let n = eval.candidate_count();
    let mut sel = Selection::new(&eval);
    let mut heap: BinaryHeap<HeapEntry> = (0..n)
        .map(|index| HeapEntry {
            gain: f64::INFINITY,
            index,
            step: usize::MAX,
        })
        .collect();
    for step in 0..problem.budget {
        loop {
            let top = heap.pop().expect("heap holds all unselected candidates");
            if top.step == step {
                sel.select(top.index, top.gain)?;
                break;
            }
            let g = sel.gain(top.index)?;
            heap.push(HeapEntry {
                gain: g,
                index: top.index,
                step,
            });
        }
    }
    finish(&eval, problem, sel)
}

/// Greedy maximization under a partition-matroid constraint: at most
/// `limits[g]` selections from each partition cell `g`, up to the problem
/// budget overall.
pub fn partition_matroid_greedy(
    problem: &DesignProblem,
    partition: &HashMap<usize, usize>,
    limits: &HashMap<usize, usize>,
) -> Result<DesignResult> {
    let eval = Evaluator::new(problem)?;
    let n = eval.candidate_count();
    let mut groups = Vec::with_capacity(n);
    for i in 0..n {
        let g = *partition
            .get(&i)
            .ok_or_else(|| Error::argument(format!("candidate {i} missing from partition")))?;
        let limit = limits
            .get(&g)
            .ok_or_else(|| Error::argument(format!("group {g} missing from limits")))?;
        if *limit == 0 {
            return Err(Error::argument(format!("group {g} has a zero limit")));
        }
        groups.push(g);
    }
    greedy_with_admissibility(problem, &eval, problem.budget, |chosen, i| {
        let g = groups[i];
        let used = chosen.iter().filter(|&&c| groups[c] == g).count();
        used < limits[&g]
    })
}

/// Exhaustive argmax over all `budget`-subsets — the test oracle for the
/// greedy guarantee. Guarded to at most 10⁶ subsets.
pub fn exhaustive_design(problem: &DesignProblem) -> Result<DesignResult> {
    let eval = Evaluator::new(problem)?;
    let n = eval.candidate_count();
    let k = problem.budget;
    let combos = binomial(n, k);
    if combos > 1_000_000 {
        return Err(Error::Size(format!(
            "{n} choose {k} = {combos} exceeds the exhaustive-search guard"
        )));
    }
    let mut subset: Vec<usize> = (0..k).collect();
    let mut best: Option<(Vec<usize>, f64)> = None;
    let mut evaluations = 0usize;
    loop {
        let mi = eval.mi(&subset)?;
        evaluations += 1;
        if best.as_ref().is_none_or(|(_, bv)| mi > *bv) {
            best = Some((subset.clone(), mi));
        }
        if !next_combination(&mut subset, n) {
            break;
        }
    }
    let (best_subset, objective) = best.expect("at least one subset");
    // order the winning subset by greedy marginal gain so the gains trace
    // is non-increasing and sums to the objective
    let mut sel = Selection::new(&eval);
    for _ in 0..best_subset.len() {
        let mut pick: Option<(usize, f64)> = None;
        for &idx in &best_subset {
            if sel.chosen.contains(&idx) {
                continue;
            }
            let g = sel.gain(idx)?;
            if pick.is_none_or(|(_, bg)| g > bg) {
                pick = Some((idx, g));
            }
        }
        let (idx, g) = pick.expect("subset not exhausted");
        sel.select(idx, g)?;
    }
    Ok(DesignResult {
        selected_seeds: sel
            .chosen
            .iter()
            .map(|&i| problem.candidates[i].iter().cloned().collect())
            .collect(),
        selected_indices: sel.chosen,
        gains: sel.gains_trace,
        objective,
        evaluations: evaluations + sel.evaluations,
    })
}

fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc.saturating_mul((n - i) as u128) / (i + 1) as u128;
    }
    acc
}

fn next_combination(subset: &mut [usize], n: usize) -> bool {
    let k = subset.len();
    let mut i = k;
    while i > 0 {
        i -= 1;
        if subset[i] < n - k + i {
            subset[i] += 1;
            for j in i + 1..k {
                subset[j] = subset[j - 1] + 1;
            }
            return true;
        }
    }
    false
}

/// Theorem-style discrepancy bound between the proxy objective and the
/// true-trajectory objective when all pairwise kernel values differ by at
/// most `delta`:
///
/// ```text
/// |G̃ - G| ≤ -d K̃ log(1 - δ (d K̃)^{3/2} / σ_min(Σ_ε))
/// ```
///
/// Returns `+∞` when the log argument is non-positive (vacuous bound).
pub fn discrepancy_bound_generic(delta: f64, d: usize, k_tilde: usize, noise: &NoiseModel) -> f64 {
    debug_assert!(delta >= 0.0);
    if delta == 0.0 {
        return 0.0;
    }
    let dk = (d * k_tilde) as f64;
    let arg = 1.0 - delta * dk.powf(1.5) / noise.sigma_min();
    if arg <= 0.0 {
        f64::INFINITY
    } else {
        -dk * arg.ln()
    }
}

/// Shift-invariant-kernel corollary: a kernel with Lipschitz constant `L`
/// in the distance and per-state trajectory deviation at most `Δ` gives
/// `δ = 2 L Δ`.
pub fn discrepancy_bound_rbf(
    lipschitz: f64,
    deviation: f64,
    d: usize,
    k_tilde: usize,
    noise: &NoiseModel,
) -> f64 {
    discrepancy_bound_generic(2.0 * lipschitz * deviation, d, k_tilde, noise)
}

/// Polynomial-kernel corollary: order `m`, state-norm bound `B`, and
/// per-state deviation at most `Δ` give `δ = mΔ(2B + Δ)(1 + B²)^{m-1}`.
pub fn discrepancy_bound_poly(
    order: u32,
    norm_bound: f64,
    deviation: f64,
    d: usize,
    k_tilde: usize,
    noise: &NoiseModel,
) -> f64 {
    let delta = order as f64
        * deviation
        * (2.0 * norm_bound + deviation)
        * (1.0 + norm_bound * norm_bound).powi(order as i32 - 1);
    discrepancy_bound_generic(delta, d, k_tilde, noise)
}

/// Isotropic-noise lower bound on the objective:
/// `d K̃ log(1 + σ_min(K) / σ_ε²)` on the proxy states of `subset`.
pub fn mi_lower_bound(problem: &DesignProblem, subset: &[usize]) -> Result<f64> {
    let eval = Evaluator::new(problem)?;
    mi_lower_bound_with(&eval, subset)
}

pub(crate) fn mi_lower_bound_with(eval: &Evaluator, subset: &[usize]) -> Result<f64> {
    if subset.is_empty() {
        return Err(Error::argument("subset must be non-empty"));
    }
    let s2 = eval
        .noise
        .isotropic_variance()
        .ok_or_else(|| Error::Mode("mi_lower_bound requires isotropic noise".into()))?;
    let states = eval.collect_states(subset);
    let gram = eval.kernel.gram(&states)?;
    let min_eig = nalgebra::SymmetricEigen::new(gram)
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min)
        .max(0.0);
    Ok((eval.out_dim * states.len()) as f64 * (1.0 + min_eig / s2).ln())
}

/// One perturbation trial of the bound validation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BoundTrial {
    pub delta_hat: f64,
    pub mi_difference: f64,
    pub bound: f64,
    pub ratio: f64,
    pub vacuous: bool,
}

/// Aggregate report of [`validate_bound`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BoundValidation {
    pub trials: Vec<BoundTrial>,
    pub max_ratio: f64,
    pub vacuous_count: usize,
    pub all_within_bound: bool,
}

/// Empirically validates the discrepancy bound: each trial perturbs every
/// proxy state of `subset` by a random vector of norm at most `deviation`
/// (standing in for the unknown true trajectory), measures the realized
/// maximum kernel discrepancy `δ̂`, and checks that the objective shift is
/// within the generic bound at `δ̂`.
pub fn validate_bound(
    problem: &DesignProblem,
    subset: &[usize],
    deviation: f64,
    trials: usize,
    seed: u64,
) -> Result<BoundValidation> {
    if subset.is_empty() {
        return Err(Error::argument("subset must be non-empty"));
    }
    if deviation < 0.0 {
        return Err(Error::argument("deviation must be nonnegative"));
    }
    let eval = Evaluator::new(problem)?;
    let states = eval.collect_states(subset);
    let n = states.len();
    let dim = states[0].len();
    let mi_proxy = mi_of_states(&states, eval.out_dim, &eval.kernel, &eval.noise)?;
    let mut out = Vec::with_capacity(trials);
    let mut max_ratio: f64 = 0.0;
    let mut vacuous_count = 0;
    let mut all_within = true;
    for trial in 0..trials {
        let mut rng = rng_for(seed, trial as u64);
        let perturbed: Vec<DVector<f64>> = states
            .iter()
            .map(|y| y + ball_sample(dim, deviation, &mut rng))
            .collect();
        let mut delta_hat: f64 = 0.0;
        for i in 0..n {
            for j in 0..n {
                let a = eval.kernel.eval_raw(&states[i], &states[j]);
                let b = eval.kernel.eval_raw(&perturbed[i], &perturbed[j]);
                delta_hat = delta_hat.max((a - b).abs());
            }
        }
        let mi_perturbed = mi_of_states(&perturbed, eval.out_dim, &eval.kernel, &eval.noise)?;
        let mi_difference = (mi_perturbed - mi_proxy).abs();
        let bound = discrepancy_bound_generic(delta_hat, eval.out_dim, n, &eval.noise);
        let vacuous = bound.is_infinite();
        let ratio = if vacuous || (bound == 0.0 && mi_difference == 0.0) {
            0.0
        } else {
            mi_difference / bound
        };
        if vacuous {
            vacuous_count += 1;
        }
        if mi_difference > bound * (1.0 + 1e-9) + 1e-12 {
            all_within = false;
        }
        max_ratio = max_ratio.max(ratio);
        out.push(BoundTrial {
            delta_hat,
            mi_difference,
            bound,
            ratio,
            vacuous,
        });
    }
    Ok(BoundValidation {
        trials: out,
        max_ratio,
        vacuous_count,
        all_within_bound: all_within,
    })
}

fn ball_sample(dim: usize, radius: f64, rng: &mut impl Rng) -> DVector<f64> {
    use rand_distr::{Distribution, StandardNormal};
    if radius == 0.0 {
        return DVector::zeros(dim);
    }
    let mut v = DVector::from_fn(dim, |_, _| StandardNormal.sample(rng));
    let norm = v.norm();
    if norm == 0.0 {
        return DVector::zeros(dim);
    }
    let u: f64 = rng.random_range(0.0..1.0f64);
    v *= radius * u.powf(1.0 / dim as f64) / norm;
    v
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::DomainBox;
    use approx::assert_relative_eq;
    use std::sync::Arc;

    fn v(x: &[f64]) -> DVector<f64> {
        DVector::from_row_slice(x)
    }

    fn linear_system() -> SystemSpec {
        let a = DMatrix::from_row_slice(2, 2, &[0.02, 0.10, -0.10, -0.06]);
        SystemSpec::new(
            2,
            Arc::new(move |y: &DVector<f64>| &a * y),
            None,
            DomainBox::new(
                DVector::from_element(2, -1.0),
                DVector::from_element(2, 1.0),
            )
            .unwrap(),
        )
        .unwrap()
    }

    fn small_problem(candidates: Vec<DVector<f64>>, budget: usize) -> DesignProblem {
        DesignProblem {
            candidates,
            budget,
            grid: TimeGrid::uniform(0.0, 1.2, 3).unwrap(),
            substeps: 20,
            kernel: KernelConfig::GaussianRbf {
                bandwidth: 1.0,
                signal_variance: 1.0,
            },
            noise: NoiseModel::isotropic(2, 0.01, 0).unwrap(),
            system: linear_system(),
            projection: StateProjection::Identity,
            out_dim: 2,
        }
    }

    fn grid_candidates(per_axis: usize) -> Vec<DVector<f64>> {
        let mut out = Vec::new();
        for i in 0..per_axis {
            for j in 0..per_axis {
                let step = 2.0 / (per_axis - 1) as f64;
                out.push(v(&[-1.0 + step * i as f64, -1.0 + step * j as f64]));
            }
        }
        out
    }

    #[test]
    fn single_state_mi_is_log_two() {
        let kernel = KernelConfig::GaussianRbf {
            bandwidth: 1.0,
            signal_variance: 1.0,
        };
        let noise = NoiseModel::isotropic(1, 1.0, 0).unwrap();
        let mi = mi_of_states(&[v(&[0.3])], 1, &kernel, &noise).unwrap();
        assert_relative_eq!(mi, 2f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn vanishing_signal_gives_vanishing_mi() {
        let kernel = KernelConfig::GaussianRbf {
            bandwidth: 1.0,
            signal_variance: 1e-14,
        };
        let noise = NoiseModel::isotropic(1, 1.0, 0).unwrap();
        let mi = mi_of_states(&[v(&[0.0]), v(&[0.5])], 1, &kernel, &noise).unwrap();
        assert!(mi.abs() < 1e-12, "mi = {mi}");
    }

    #[test]
    fn block_mi_matches_isotropic_fast_path() {
        let kernel = KernelConfig::GaussianRbf {
            bandwidth: 1.0,
            signal_variance: 0.7,
        };
        let noise = NoiseModel::isotropic(2, 0.05, 0).unwrap();
        let states = vec![v(&[0.0, 0.1]), v(&[0.4, -0.2]), v(&[-0.6, 0.5])];
        let fast = mi_of_states(&states, 2, &kernel, &noise).unwrap();
        let block = mi_of_states_block(&states, 2, &kernel, &noise).unwrap();
        assert_relative_eq!(fast, block, epsilon = 1e-8);
        // and the isotropic value is exactly d x the scalar computation
        let scalar_noise = NoiseModel::isotropic(1, 0.05, 0).unwrap();
        let scalar = mi_of_states(&states, 1, &kernel, &scalar_noise).unwrap();
        assert_relative_eq!(fast, 2.0 * scalar, epsilon = 1e-8);
    }

    #[test]
    fn block_mi_handles_correlated_noise() {
        let kernel = KernelConfig::GaussianRbf {
            bandwidth: 1.0,
            signal_variance: 0.5,
        };
        let cov = DMatrix::from_row_slice(2, 2, &[0.04, 0.01, 0.01, 0.03]);
        let noise = NoiseModel::new(cov, 0).unwrap();
        let states = vec![v(&[0.0, 0.0]), v(&[0.3, 0.3])];
        let mi = mi_of_states(&states, 2, &kernel, &noise).unwrap();
        assert!(mi.is_finite() && mi > 0.0);
    }

    #[test]
    fn greedy_exhausts_when_budget_covers_all() {
        let problem = small_problem(grid_candidates(2), 4);
        let r = greedy_design(&problem).unwrap();
        assert_eq!(r.selected_indices.len(), 4);
        let mut sorted = r.selected_indices.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, vec![0, 1, 2, 3]);
        // gain trace is non-increasing and sums to the objective
        for w in r.gains.windows(2) {
            assert!(w[1] <= w[0] + 1e-9);
        }
        assert_relative_eq!(r.gains.iter().sum::<f64>(), r.objective, epsilon = 1e-8);
    }

    #[test]
    fn lazy_matches_plain_greedy() {
        let problem = small_problem(grid_candidates(3), 4);
        let plain = greedy_design(&problem).unwrap();
        let lazy = lazy_greedy_design(&problem).unwrap();
        assert_eq!(plain.selected_indices, lazy.selected_indices);
        for (a, b) in plain.gains.iter().zip(lazy.gains.iter()) {
            assert_eq!(a, b, "gains must agree exactly");
        }
        assert!(lazy.evaluations <= plain.evaluations);
    }

    #[test]
    fn budget_one_evaluates_every_singleton_in_both() {
        let problem = small_problem(grid_candidates(3), 1);
        let plain = greedy_design(&problem).unwrap();
        let lazy = lazy_greedy_design(&problem).unwrap();
        assert_eq!(plain.evaluations, 9);
        assert_eq!(lazy.evaluations, 9);
        assert_eq!(plain.selected_indices, lazy.selected_indices);
    }

    #[test]
    fn incremental_gains_match_full_recompute() {
        let problem = small_problem(grid_candidates(3), 4);
        let eval = Evaluator::new(&problem).unwrap();
        let result = greedy_design(&problem).unwrap();
        let mut prefix = Vec::new();
        let mut prev = 0.0;
        for (step, &idx) in result.selected_indices.iter().enumerate() {
            prefix.push(idx);
            let full = eval.mi(&prefix).unwrap();
            assert!(
                (full - prev - result.gains[step]).abs() < 1e-8,
                "step {step}: incremental {} vs full {}",
                result.gains[step],
                full - prev
            );
            prev = full;
        }
    }

    #[test]
    fn matroid_single_group_equals_plain_greedy() {
        let problem = small_problem(grid_candidates(3), 3);
        let partition: HashMap<usize, usize> = (0..9).map(|i| (i, 0)).collect();
        let limits: HashMap<usize, usize> = [(0, 3)].into_iter().collect();
        let constrained = partition_matroid_greedy(&problem, &partition, &limits).unwrap();
        let plain = greedy_design(&problem).unwrap();
        assert_eq!(constrained.selected_indices, plain.selected_indices);
    }

    #[test]
    fn matroid_quota_forces_one_per_group() {
        let problem = small_problem(grid_candidates(3), 2);
        // split by row of the 3x3 grid: indices 0..3, 3..6, 6..9
        let partition: HashMap<usize, usize> = (0..9).map(|i| (i, i / 3)).collect();
        let limits: HashMap<usize, usize> = [(0, 1), (1, 1), (2, 1)].into_iter().collect();
        let r = partition_matroid_greedy(&problem, &partition, &limits).unwrap();
        assert_eq!(r.selected_indices.len(), 2);
        let g0 = r.selected_indices[0] / 3;
        let g1 = r.selected_indices[1] / 3;
        assert_ne!(g0, g1, "quota of one per group must force distinct groups");
    }

    #[test]
    fn matroid_missing_group_is_an_error() {
        let problem = small_problem(grid_candidates(2), 2);
        let partition: HashMap<usize, usize> = (0..4).map(|i| (i, i % 2)).collect();
        let limits: HashMap<usize, usize> = [(0, 1)].into_iter().collect();
        assert!(partition_matroid_greedy(&problem, &partition, &limits).is_err());
    }

    #[test]
    fn matroid_constraint_cannot_beat_unconstrained() {
        let problem = small_problem(grid_candidates(3), 3);
        let partition: HashMap<usize, usize> = (0..9).map(|i| (i, i / 3)).collect();
        let limits: HashMap<usize, usize> = [(0, 1), (1, 1), (2, 1)].into_iter().collect();
        let constrained = partition_matroid_greedy(&problem, &partition, &limits).unwrap();
        let unconstrained = greedy_design(&problem).unwrap();
        assert!(constrained.objective <= unconstrained.objective + 1e-9);
    }

    #[test]
    fn exhaustive_small_cases() {
        let mut problem = small_problem(grid_candidates(2), 4);
        let all = exhaustive_design(&problem).unwrap();
        let mut sorted = all.selected_indices.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, vec![0, 1, 2, 3]);
        problem.budget = 1;
        let single = exhaustive_design(&problem).unwrap();
        let greedy = greedy_design(&problem).unwrap();
        assert_eq!(single.selected_indices, greedy.selected_indices);
    }

    #[test]
    fn exhaustive_guard_trips() {
        let mut problem = small_problem(grid_candidates(5), 12);
        problem.budget = 12;
        // 25 choose 12 = 5 200 300 > 10^6
        assert!(matches!(exhaustive_design(&problem), Err(Error::Size(_))));
    }

    #[test]
    fn bound_examples() {
        let noise1 = NoiseModel::isotropic(1, 0.1, 0).unwrap();
        assert_eq!(discrepancy_bound_generic(0.0, 1, 1, &noise1), 0.0);
        assert_relative_eq!(
            discrepancy_bound_generic(0.01, 1, 1, &noise1),
            -(0.9f64).ln(),
            epsilon = 1e-12
        );
        assert!(discrepancy_bound_generic(0.2, 1, 1, &noise1).is_infinite());
    }

    #[test]
    fn rbf_bound_composes_with_lipschitz() {
        let kernel = KernelConfig::GaussianRbf {
            bandwidth: 1.0,
            signal_variance: 1.0,
        };
        let l = kernel.rbf_lipschitz().unwrap();
        assert_relative_eq!(l, 1.0 / 1f64.exp().sqrt(), epsilon = 1e-12);
        let noise = NoiseModel::isotropic(1, 1.0, 0).unwrap();
        let direct = discrepancy_bound_generic(2.0 * l * 0.05, 1, 2, &noise);
        let composed = discrepancy_bound_rbf(l, 0.05, 1, 2, &noise);
        assert_eq!(direct, composed);
        assert_eq!(discrepancy_bound_rbf(l, 0.0, 1, 2, &noise), 0.0);
    }

    #[test]
    fn poly_bound_examples() {
        let noise = NoiseModel::isotropic(1, 1.0, 0).unwrap();
        // m=1, B=1, Δ=0.1 → δ = 0.21; m=2 → δ = 0.84
        let b1 = discrepancy_bound_poly(1, 1.0, 0.1, 1, 1, &noise);
        assert_relative_eq!(b1, -(1.0f64 - 0.21).ln(), epsilon = 1e-12);
        let b2 = discrepancy_bound_poly(2, 1.0, 0.1, 1, 1, &noise);
        assert_relative_eq!(b2, -(1.0f64 - 0.84).ln(), epsilon = 1e-12);
        assert_eq!(discrepancy_bound_poly(3, 1.0, 0.0, 2, 5, &noise), 0.0);
    }

    #[test]
    fn validate_bound_zero_deviation() {
        let problem = small_problem(grid_candidates(2), 2);
        let report = validate_bound(&problem, &[0, 3], 0.0, 5, 42).unwrap();
        assert!(report.all_within_bound);
        assert_eq!(report.max_ratio, 0.0);
        assert_eq!(report.vacuous_count, 0);
        for t in &report.trials {
            assert_eq!(t.mi_difference, 0.0);
            assert_eq!(t.bound, 0.0);
        }
    }

    #[test]
    fn validate_bound_vacuous_branch_is_flagged() {
        // enormous perturbations push δ̂ (d K̃)^{3/2} past σ_min → +∞ bound
        let mut problem = small_problem(grid_candidates(2), 2);
        problem.noise = NoiseModel::isotropic(2, 1e-8, 0).unwrap();
        let report = validate_bound(&problem, &[0, 1], 0.5, 3, 7).unwrap();
        assert!(report.vacuous_count > 0);
        assert!(report.all_within_bound);
    }

    #[test]
    fn mi_lower_bound_single_state() {
        let problem = small_problem(grid_candidates(2), 1);
        // one seed, T=3 states; bound uses min eigenvalue of the 3x3 gram
        let lb = mi_lower_bound(&problem, &[0]).unwrap();
        let mi = mutual_information(&problem, &[0]).unwrap();
        assert!(mi >= lb - 1e-9, "mi {mi} < bound {lb}");
    }

    #[test]
    fn mi_lower_bound_rejects_anisotropic_noise() {
        let mut problem = small_problem(grid_candidates(2), 1);
        let cov = DMatrix::from_row_slice(2, 2, &[0.01, 0.0, 0.0, 0.02]);
        problem.noise = NoiseModel::new(cov, 0).unwrap();
        assert!(matches!(
            mi_lower_bound(&problem, &[0]),
            Err(Error::Mode(_))
        ));
    }

    #[test]
    fn mi_is_permutation_invariant() {
        let problem = small_problem(grid_candidates(3), 3);
        let eval = Evaluator::new(&problem).unwrap();
        let a = eval.mi(&[1, 4, 7]).unwrap();
        let b = eval.mi(&[7, 1, 4]).unwrap();
        assert_relative_eq!(a, b, epsilon = 1e-9);
    }

    #[test]
    fn empty_subset_is_rejected_by_public_op() {
        let problem = small_problem(grid_candidates(2), 1);
        assert!(mutual_information(&problem, &[]).is_err());
    }
}
