//! Stationary distributions, Perron eigenpairs of the shifted toppling matrix,
//! and the criticality classification.
//!
//! All eigen-computation is plain power iteration with a Rayleigh-quotient
//! stopping rule: primitivity of the inputs guarantees convergence and the
//! matrices are small enough that nothing fancier pays for itself.

use serde::Serialize;
use thiserror::Error;

use crate::conserved::DetectionResult;
use crate::linalg::{bool_mat_mul, dot, mat_vec, reachability, transpose};
use crate::model::{self, EnvironmentSpec, MatrixError, NetworkSpec, ToppleMatrix};

/// Successive Rayleigh quotients must agree to this before iteration stops.
pub const RAYLEIGH_TOL: f64 = 1e-13;
/// Iteration cap for every power iteration.
pub const MAX_ITERATIONS: u64 = 1_000_000;
/// Relative infinity-norm residual required of a converged eigenpair.
pub const EIGEN_RESIDUAL_REL: f64 = 1e-9;
/// L1 residual required of a converged stationary distribution.
pub const STATIONARY_RESIDUAL: f64 = 1e-12;
/// Default half-width of the critical band for classification.
pub const DEFAULT_EPS: f64 = 1e-9;

/// Failure to compute the stationary distribution of an environment chain.
#[derive(Debug, Error)]
pub enum ChainError {
    #[error("chain is reducible: state {from} does not reach state {to}")]
    Reducible { from: usize, to: usize },
    #[error("chain is periodic: pattern power never positive at ({0}, {1})", witness.0, witness.1)]
    Periodic { witness: (usize, usize) },
    #[error(
        "power iteration did not converge after {iterations} iterations (residual {residual:e})"
    )]
    NonConvergence { iterations: u64, residual: f64 },
}

#[derive(Debug, Error)]
pub enum PerronError {
    #[error(
        "power iteration did not converge after {iterations} iterations (residual {residual:e})"
    )]
    NonConvergence { iterations: u64, residual: f64 },
}

#[derive(Debug, Error)]
pub enum SpectralError {
    #[error(transparent)]
    Matrix(#[from] MatrixError),
    #[error("M + alpha I is not primitive: entry ({0}, {1}) stays zero", witness.0, witness.1)]
    NotPrimitive { witness: (usize, usize) },
    #[error(transparent)]
    Perron(#[from] PerronError),
    #[error(
        "|rho| is inside the critical band but no conserved-quantity detection result was supplied"
    )]
    MissingDetection,
}

/// Result of the primitivity check on a nonnegative matrix.
#[derive(Debug, Clone, PartialEq)]
pub enum Primitivity {
    /// Least k with A^k entrywise positive.
    Primitive { exponent: u64 },
    /// Some entry is still zero at the Wielandt bound.
    Fails { witness: (usize, usize) },
}

impl Primitivity {
    pub fn exponent(&self) -> Option<u64> {
        match self {
            Primitivity::Primitive { exponent } => Some(*exponent),
            Primitivity::Fails { .. } => None,
        }
    }
}

/// Least k <= (n-1)^2 + 1 with A^k > 0 entrywise, by boolean pattern powers.
pub fn check_primitive(a: &[Vec<f64>]) -> Primitivity {
    let n = a.len();
    let pattern: Vec<Vec<bool>> = a
        .iter()
        .map(|row| row.iter().map(|x| *x > 0.0).collect())
        .collect();
    let bound = if n <= 1 { 1 } else { (n - 1) * (n - 1) + 1 };
    let mut power = pattern.clone();
    let mut witness = (0, 0);
    for k in 1..=bound {
        match first_zero(&power) {
            None => return Primitivity::Primitive { exponent: k as u64 },
            Some(w) => witness = w,
        }
        power = bool_mat_mul(&power, &pattern);
    }
    Primitivity::Fails { witness }
}

fn first_zero(m: &[Vec<bool>]) -> Option<(usize, usize)> {
    for (i, row) in m.iter().enumerate() {
        for (j, set) in row.iter().enumerate() {
            if !set {
                return Some((i, j));
            }
        }
    }
    None
}

/// Stationary distribution of an environment chain, by power iteration on the
/// transposed transition matrix. The chain pattern must be irreducible and
/// aperiodic.
pub fn stationary_distribution(env: &EnvironmentSpec) -> Result<Vec<f64>, ChainError> {
    let n = env.state_count();
    let pattern: Vec<Vec<bool>> = env
        .rows()
        .iter()
        .map(|row| row.iter().map(|p| *p > 0.0).collect())
        .collect();
    let reach = reachability(&pattern);
    for i in 0..n {
        for j in 0..n {
            if !reach[i][j] {
                return Err(ChainError::Reducible { from: i, to: j });
            }
        }
    }
    if let Primitivity::Fails { witness } =
        check_primitive(&env.rows().iter().map(|r| r.to_vec()).collect::<Vec<_>>())
    {
        return Err(ChainError::Periodic { witness });
    }

    let p_t = transpose(env.rows());
    let mut pi = vec![1.0 / n as f64; n];
    let mut prev_quotient = f64::NAN;
    for iteration in 1..=MAX_ITERATIONS {
        let next = mat_vec(&p_t, &pi);
        let quotient = dot(&pi, &next) / dot(&pi, &pi);
        let total: f64 = next.iter().sum();
        pi = next.iter().map(|x| x / total).collect();
        if (quotient - prev_quotient).abs() < RAYLEIGH_TOL {
            let residual = stationary_residual(env, &pi);
            if residual <= STATIONARY_RESIDUAL {
                return Ok(pi);
            }
            if iteration == MAX_ITERATIONS {
                return Err(ChainError::NonConvergence {
                    iterations: iteration,
                    residual,
                });
            }
        }
        prev_quotient = quotient;
    }
    let residual = stationary_residual(env, &pi);
    if residual <= STATIONARY_RESIDUAL {
        Ok(pi)
    } else {
        Err(ChainError::NonConvergence {
            iterations: MAX_ITERATIONS,
            residual,
        })
    }
}

fn stationary_residual(env: &EnvironmentSpec, pi: &[f64]) -> f64 {
    let n = env.state_count();
    (0..n)
        .map(|j| {
            let applied: f64 = (0..n).map(|i| pi[i] * env.row(i)[j]).sum();
            (applied - pi[j]).abs()
        })
        .sum()
}

/// A converged Perron eigenpair: the eigenvalue, the left eigenvector
/// normalized to sum 1, and the right eigenvector normalized to max entry 1.
#[derive(Debug, Clone)]
pub struct PerronPair {
    pub r: f64,
    pub left: Vec<f64>,
    pub right: Vec<f64>,
    pub iterations: IterationStats,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct IterationStats {
    pub right: u64,
    pub left: u64,
}

/// Perron eigenpair of a primitive nonnegative matrix by power iteration on A
/// (right vector) and on A transposed (left vector).
pub fn perron_eigenpair(a: &[Vec<f64>]) -> Result<PerronPair, PerronError> {
    let (r_right, right, iters_right) = power_iterate(a)?;
    let a_t = transpose(a);
    let (_r_left, left_raw, iters_left) = power_iterate(&a_t)?;
    let r = r_right;

    // Cross-check the left vector against the right eigenvalue.
    let left_residual = eigen_residual(&a_t, &left_raw, r);
    if left_residual > EIGEN_RESIDUAL_REL * r.abs() {
        return Err(PerronError::NonConvergence {
            iterations: iters_left,
            residual: left_residual,
        });
    }

    let max_right = right.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let right: Vec<f64> = right.iter().map(|x| x / max_right).collect();
    let sum_left: f64 = left_raw.iter().sum();
    let left: Vec<f64> = left_raw.iter().map(|x| x / sum_left).collect();
    Ok(PerronPair {
        r,
        left,
        right,
        iterations: IterationStats {
            right: iters_right,
            left: iters_left,
        },
    })
}

/// Power iteration with max-norm scaling; returns (eigenvalue, vector, iterations).
fn power_iterate(a: &[Vec<f64>]) -> Result<(f64, Vec<f64>, u64), PerronError> {
    let n = a.len();
    let mut x = vec![1.0 / n as f64; n];
    let mut prev_quotient = f64::NAN;
    let mut quotient = f64::NAN;
    for iteration in 1..=MAX_ITERATIONS {
        let y = mat_vec(a, &x);
        quotient = dot(&x, &y) / dot(&x, &x);
        let scale = y.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        x = y.iter().map(|v| v / scale).collect();
        if (quotient - prev_quotient).abs() < RAYLEIGH_TOL {
            let residual = eigen_residual(a, &x, quotient);
            if residual <= EIGEN_RESIDUAL_REL * quotient.abs() {
                return Ok((quotient, x, iteration));
            }
        }
        prev_quotient = quotient;
    }
    let residual = eigen_residual(a, &x, quotient);
    if residual <= EIGEN_RESIDUAL_REL * quotient.abs() {
        Ok((quotient, x, MAX_ITERATIONS))
    } else {
        Err(PerronError::NonConvergence {
            iterations: MAX_ITERATIONS,
            residual,
        })
    }
}

fn eigen_residual(a: &[Vec<f64>], x: &[f64], lambda: f64) -> f64 {
    mat_vec(a, x)
        .iter()
        .zip(x)
        .map(|(ax, xi)| (ax - lambda * xi).abs())
        .fold(0.0, f64::max)
}

/// Spectral summary of a network: the toppling matrix, the Perron data of
/// M + alpha I, and the criticality parameter rho = r - alpha.
#[derive(Debug, Clone, Serialize)]
pub struct SpectralReport {
    pub matrix: ToppleMatrix,
    pub r: f64,
    pub rho: f64,
    /// Left Perron eigenvector, entries > 0, summing to 1.
    pub p: Vec<f64>,
    /// Right Perron eigenvector, entries > 0, max entry 1.
    pub a: Vec<f64>,
    pub primitivity_exponent: u64,
    pub iterations: IterationStats,
}

/// Assemble the toppling matrix, verify primitivity of M + alpha I, and run
/// the Perron computation.
pub fn criticality(spec: &NetworkSpec) -> Result<SpectralReport, SpectralError> {
    let matrix = model::toppling_matrix(spec)?;
    let shifted = matrix.shifted();
    let exponent = match check_primitive(&shifted) {
        Primitivity::Primitive { exponent } => exponent,
        Primitivity::Fails { witness } => return Err(SpectralError::NotPrimitive { witness }),
    };
    let pair = perron_eigenpair(&shifted)?;
    let rho = pair.r - matrix.alpha;
    Ok(SpectralReport {
        matrix,
        r: pair.r,
        rho,
        p: pair.left,
        a: pair.right,
        primitivity_exponent: exponent,
        iterations: pair.iterations,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RegimeTag {
    Subcritical,
    Supercritical,
    CriticalConserved,
    CriticalStabilizing,
}

/// Classified stabilization regime.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Regime {
    pub tag: RegimeTag,
    pub rho: f64,
    pub tolerance: f64,
}

/// Classify: rho below the band is subcritical, above it supercritical, and
/// inside it critical, split on whether a conserved quantity was detected.
pub fn classify(
    report: &SpectralReport,
    detection: Option<&DetectionResult>,
    eps: f64,
) -> Result<Regime, SpectralError> {
    let rho = report.rho;
    let tag = if rho < -eps {
        RegimeTag::Subcritical
    } else if rho > eps {
        RegimeTag::Supercritical
    } else {
        match detection {
            Some(DetectionResult::Found { .. }) => RegimeTag::CriticalConserved,
            Some(DetectionResult::NoneBecause { .. }) => RegimeTag::CriticalStabilizing,
            None => return Err(SpectralError::MissingDetection),
        }
    };
    Ok(Regime {
        tag,
        rho,
        tolerance: eps,
    })
}
