//! Dense linear-algebra support: Cholesky factorization with jitter
//! escalation, incremental factor extension, and the matrix exponential.
//!
//! Everything here operates on `nalgebra` dense types. No explicit inverses
//! are formed anywhere; solves go through triangular substitution.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Jitter ladder start, relative to the caller-supplied scale.
const JITTER_START_REL: f64 = 1e-12;
/// Jitter ladder cap, relative to the caller-supplied scale.
const JITTER_MAX_REL: f64 = 1e-4;

/// Lower-triangular Cholesky factor `L` with `L Lᵀ = A + jitter·I`.
#[derive(Debug, Clone)]
pub struct CholFactor {
    l: DMatrix<f64>,
    jitter: f64,
}

impl CholFactor {
    /// Factorizes a symmetric positive (semi-)definite matrix.
    ///
    /// First attempts a plain factorization; on failure adds
    /// `jitter·I` with jitter escalating tenfold from `1e-12·scale`
    /// to `1e-4·scale` before giving up.
    pub fn new(a: &DMatrix<f64>, scale: f64) -> Result<Self> {
        if a.nrows() != a.ncols() {
            return Err(Error::Dimension {
                expected: a.nrows(),
                actual: a.ncols(),
            });
        }
        let scale = if scale > 0.0 { scale } else { 1.0 };
        if let Some(ch) = nalgebra::Cholesky::new(a.clone()) {
            return Ok(CholFactor {
                l: ch.unpack(),
                jitter: 0.0,
            });
        }
        let mut jitter = JITTER_START_REL * scale;
        let max = JITTER_MAX_REL * scale;
        while jitter <= max * (1.0 + 1e-12) {
            let mut m = a.clone();
            for i in 0..m.nrows() {
                m[(i, i)] += jitter;
            }
            if let Some(ch) = nalgebra::Cholesky::new(m) {
                return Ok(CholFactor {
                    l: ch.unpack(),
                    jitter,
                });
            }
            jitter *= 10.0;
        }
        Err(Error::IllConditioned { jitter: max })
    }

    pub fn dim(&self) -> usize {
        self.l.nrows()
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn lower(&self) -> &DMatrix<f64> {
        &self.l
    }

    /// `log det(A + jitter·I) = 2 Σ log L_ii`.
    pub fn logdet(&self) -> f64 {
        2.0 * (0..self.l.nrows())
            .map(|i| self.l[(i, i)].ln())
            .sum::<f64>()
    }

    /// Solves `L X = B` by forward substitution (multiple right-hand sides).
    pub fn forward_solve(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        let mut x = b.clone();
        self.l.solve_lower_triangular_mut(&mut x);
        x
    }

    /// Solves `(A + jitter·I) X = B` via forward then back substitution.
    pub fn solve(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        let mut x = b.clone();
        self.l.solve_lower_triangular_mut(&mut x);
        self.l.tr_solve_lower_triangular_mut(&mut x);
        x
    }

    /// Solve for a single right-hand side vector.
    pub fn solve_vec(&self, b: &DVector<f64>) -> DVector<f64> {
        let mut x = b.clone();
        self.l.solve_lower_triangular_mut(&mut x);
        self.l.tr_solve_lower_triangular_mut(&mut x);
        x
    }

    /// Log-determinant of the factor extended by a new block, without
    /// materializing the extended factor.
    ///
    /// For the augmented matrix `[[A, C], [Cᵀ, D]]` this returns
    /// `log det(augmented) - log det(A)`, i.e. the log-determinant of the
    /// Schur complement `D - Cᵀ A⁻¹ C`. Fails if the complement is not
    /// positive definite.
    pub fn extension_logdet(&self, cross: &DMatrix<f64>, corner: &DMatrix<f64>) -> Result<f64> {
        let schur = self.schur_complement(cross, corner)?;
        match nalgebra::Cholesky::new(schur) {
            Some(ch) => {
                let l = ch.unpack();
                Ok(2.0 * (0..l.nrows()).map(|i| l[(i, i)].ln()).sum::<f64>())
            }
            None => Err(Error::IllConditioned { jitter: 0.0 }),
        }
    }

    fn schur_complement(
        &self,
        cross: &DMatrix<f64>,
        corner: &DMatrix<f64>,
    ) -> Result<DMatrix<f64>> {
        if cross.nrows() != self.dim() {
            return Err(Error::Dimension {
                expected: self.dim(),
                actual: cross.nrows(),
            });
        }
        if corner.nrows() != cross.ncols() || corner.ncols() != cross.ncols() {
            return Err(Error::Dimension {
                expected: cross.ncols(),
                actual: corner.nrows(),
            });
        }
        // B = L⁻¹ C, Schur = D - Bᵀ B
        let b = self.forward_solve(cross);
        Ok(corner - b.transpose() * &b)
    }
}

/// Relative Frobenius reconstruction error `‖L Lᵀ - A‖_F / ‖A‖_F`.
pub fn reconstruction_error(factor: &CholFactor, a: &DMatrix<f64>) -> f64 {
    let rec = factor.lower() * factor.lower().transpose();
    let denom = a.norm().max(f64::MIN_POSITIVE);
    (rec - a).norm() / denom
}

/// Matrix exponential by scaling and squaring with a degree-6 diagonal
/// Padé core; the matrix is scaled until its 1-norm is at most 0.5.
pub fn expm(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::Dimension {
            expected: n,
            actual: a.ncols(),
        });
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::argument("matrix exponential of non-finite matrix"));
    }
    let norm1 = one_norm(a);
    let mut squarings = 0u32;
    let mut scaled = a.clone();
    if norm1 > 0.5 {
        squarings = (norm1 / 0.5).log2().ceil() as u32;
        scaled /= 2f64.powi(squarings as i32);
    }
    let mut result = pade6(&scaled)?;
    for _ in 0..squarings {
        result = &result * &result;
    }
    Ok(result)
}

/// Degree-(6,6) Padé approximant of exp(M), valid for ‖M‖ ≲ 0.5.
fn pade6(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    // c_i = (12 - i)! 6! / (12! (6 - i)! i!)
    const C: [f64; 7] = [
        1.0,
        0.5,
        5.0 / 44.0,
        1.0 / 66.0,
        1.0 / 792.0,
        1.0 / 15840.0,
        1.0 / 665280.0,
    ];
    let n = m.nrows();
    let eye = DMatrix::<f64>::identity(n, n);
    let m2 = m * m;
    let m4 = &m2 * &m2;
    let m6 = &m4 * &m2;
    // odd part: M (c1 I + c3 M² + c5 M⁴), even part: c0 I + c2 M² + c4 M⁴ + c6 M⁶
    let odd = m * (&eye * C[1] + &m2 * C[3] + &m4 * C[5]);
    let even = &eye * C[0] + &m2 * C[2] + &m4 * C[4] + &m6 * C[6];
    let p = &even + &odd;
    let q = &even - &odd;
    q.lu()
        .solve(&p)
        .ok_or_else(|| Error::argument("Padé denominator is singular"))
}

fn one_norm(a: &DMatrix<f64>) -> f64 {
    (0..a.ncols())
        .map(|j| a.column(j).iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}
