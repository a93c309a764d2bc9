//! Complex linear algebra and seeded randomness shared by the simulator.
//!
//! Rank decisions are made on singular values relative to the largest one,
//! so "almost surely full rank" statements become a numeric test with an
//! explicit tolerance.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

pub type ComplexMatrix = DMatrix<Complex64>;
pub type ComplexVector = DVector<Complex64>;

/// Default relative tolerance for numeric rank.
pub const DEFAULT_RANK_TOL: f64 = 1e-9;

/// Decoding matrices above this condition number are reported separately.
pub const CONDITION_LIMIT: f64 = 1e8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumericsError {
    #[error("dimension mismatch: matrix has {rows} rows but right-hand side has {rhs} entries")]
    DimensionMismatch { rows: usize, rhs: usize },
    #[error("matrix is empty")]
    Empty,
    #[error("matrix contains non-finite entries")]
    NonFinite,
}

/// Deterministic random stream. One instance per trial; never shared
/// between threads.
#[derive(Debug, Clone)]
pub struct RandomSource {
    rng: ChaCha8Rng,
}

pub fn seeded_rng(seed: u64) -> RandomSource {
    RandomSource {
        rng: ChaCha8Rng::seed_from_u64(seed),
    }
}

impl RandomSource {
    /// One CN(0,1) draw: (g1 + i g2)/sqrt(2) with g1, g2 standard normal.
    pub fn complex_gaussian(&mut self) -> Complex64 {
        let re: f64 = self.rng.sample(StandardNormal);
        let im: f64 = self.rng.sample(StandardNormal);
        Complex64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
    }

    pub fn complex_matrix(&mut self, rows: usize, cols: usize) -> ComplexMatrix {
        // Column-major fill keeps the draw order independent of nalgebra internals.
        let mut m = ComplexMatrix::zeros(rows, cols);
        for c in 0..cols {
            for r in 0..rows {
                m[(r, c)] = self.complex_gaussian();
            }
        }
        m
    }

    pub fn complex_vector(&mut self, len: usize) -> ComplexVector {
        ComplexVector::from_fn(len, |_, _| self.complex_gaussian())
    }

    pub fn next_u64(&mut self) -> u64 {
        self.rng.random()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankReport {
    pub numeric_rank: usize,
    /// Descending.
    pub singular_values: Vec<f64>,
    /// Absolute threshold actually applied (rel_tol * sigma_max).
    pub tolerance_used: f64,
    /// sigma_max / sigma_min over the retained singular values; infinite
    /// for the zero matrix.
    pub condition_number: f64,
}

impl RankReport {
    /// Condition number when the matrix has full column rank, infinity
    /// otherwise.
    pub fn column_conditioning(&self, cols: usize) -> f64 {
        if self.numeric_rank == cols && cols > 0 {
            self.condition_number
        } else {
            f64::INFINITY
        }
    }
}

pub fn singular_values(m: &ComplexMatrix) -> Vec<f64> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return Vec::new();
    }
    let mut sv: Vec<f64> = m.singular_values().iter().copied().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    sv
}

pub fn numeric_rank(m: &ComplexMatrix, rel_tol: f64) -> RankReport {
    let singular_values = singular_values(m);
    let sigma_max = singular_values.first().copied().unwrap_or(0.0);
    let tolerance_used = rel_tol * sigma_max;
    let numeric_rank = if sigma_max > 0.0 {
        singular_values.iter().filter(|&&s| s > tolerance_used).count()
    } else {
        0
    };
    let condition_number = if numeric_rank == 0 {
        f64::INFINITY
    } else {
        sigma_max / singular_values[numeric_rank - 1]
    };
    RankReport {
        numeric_rank,
        singular_values,
        tolerance_used,
        condition_number,
    }
}

#[derive(Debug, Clone)]
pub struct LeastSquares {
    pub x: ComplexVector,
    pub residual_norm: f64,
    /// Set when the matrix has numeric rank below its column count; `x` is
    /// then the minimum-norm minimiser.
    pub rank_deficient: bool,
    pub rank: RankReport,
}

/// Minimum-norm least-squares solve through the SVD.
pub fn solve_least_squares(a: &ComplexMatrix, y: &ComplexVector, rel_tol: f64) -> Result<LeastSquares, NumericsError> {
    if a.nrows() != y.len() {
        return Err(NumericsError::DimensionMismatch {
            rows: a.nrows(),
            rhs: y.len(),
        });
    }
    if a.nrows() == 0 || a.ncols() == 0 {
        return Err(NumericsError::Empty);
    }
    if a.iter().chain(y.iter()).any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(NumericsError::NonFinite);
    }
    let rank = numeric_rank(a, rel_tol);
    let x = if rank.numeric_rank == 0 {
        ComplexVector::zeros(a.ncols())
    } else {
        let svd = a.clone().svd(true, true);
        // `solve` drops singular values at or below eps, as numeric_rank does.
        svd.solve(y, rank.tolerance_used)
            .expect("both singular bases were requested")
    };
    let residual_norm = (a * &x - y).norm();
    Ok(LeastSquares {
        rank_deficient: rank.numeric_rank < a.ncols(),
        x,
        residual_norm,
        rank,
    })
}

/// Moore-Penrose pseudo-inverse with the same relative cut-off as
/// [`numeric_rank`].
pub fn pseudo_inverse(a: &ComplexMatrix, rel_tol: f64) -> ComplexMatrix {
    let sigma_max = singular_values(a).first().copied().unwrap_or(0.0);
    if sigma_max == 0.0 {
        return ComplexMatrix::zeros(a.ncols(), a.nrows());
    }
    a.clone()
        .pseudo_inverse(rel_tol * sigma_max)
        .expect("non-negative epsilon")
}

/// Largest entry magnitude; zero for an empty matrix.
pub fn max_abs(m: &ComplexMatrix) -> f64 {
    m.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// log2 det of a Hermitian positive-definite matrix via Cholesky.
pub fn log2_det_hpd(m: &ComplexMatrix) -> Option<f64> {
    if m.nrows() == 0 {
        return Some(0.0);
    }
    let chol = m.clone().cholesky()?;
    let l = chol.l();
    Some(l.diagonal().iter().map(|d| 2.0 * d.re.log2()).sum::<f64>())
}
