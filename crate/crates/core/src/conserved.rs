//! Detection, verification, and exploitation of conserved quantities in the
//! critical regime: positive weights a and per-state potentials phi making
//! `sum_v a(v) eta(v) + sum_v phi(v, q(v))` invariant along the dynamics.

use serde::Serialize;
use thiserror::Error;

use crate::dynamics::Configuration;
use crate::model::NetworkSpec;
use crate::spectral::SpectralReport;

/// Absolute tolerance for inner-product constancy and potential feasibility.
pub const INNER_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum ConservedError {
    #[error("invalid conserved quantity: {0}")]
    InvalidQuantity(String),
}

/// A detected conserved quantity.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConservedQuantity {
    /// Positive weights, indexed by vertex.
    pub a: Vec<f64>,
    /// Potentials `phi[v][s]`, indexed by vertex and state.
    pub phi: Vec<Vec<f64>>,
    /// Per-toppling inner products Phi(v, s) = <a, xi^{v,s}>, constant over
    /// each rule's support.
    pub inner: Vec<Vec<f64>>,
}

impl ConservedQuantity {
    /// Value of the invariant at a configuration.
    pub fn evaluate(&self, cfg: &Configuration) -> f64 {
        let particles: f64 = self
            .a
            .iter()
            .zip(&cfg.eta)
            .map(|(a, e)| a * *e as f64)
            .sum();
        let potential: f64 = cfg.q.iter().enumerate().map(|(v, s)| self.phi[v][*s]).sum();
        particles + potential
    }
}

/// Why no conserved quantity exists, with a machine-checkable payload.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Witness {
    RhoNonzero {
        rho: f64,
    },
    /// Two atoms of one rule with distinct inner products against a.
    NonConstantInner {
        vertex: String,
        state: String,
        atom_a: usize,
        atom_b: usize,
        inner_a: f64,
        inner_b: f64,
    },
    /// A transition whose difference constraint contradicts the potentials
    /// propagated over a spanning tree of the environment digraph.
    PotentialInfeasible {
        vertex: String,
        from_state: String,
        to_state: String,
        expected: f64,
        got: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "tag", rename_all = "snake_case")]
pub enum DetectionResult {
    Found { quantity: ConservedQuantity },
    NoneBecause { witness: Witness },
}

impl DetectionResult {
    pub fn quantity(&self) -> Option<&ConservedQuantity> {
        match self {
            DetectionResult::Found { quantity } => Some(quantity),
            DetectionResult::NoneBecause { .. } => None,
        }
    }

    pub fn is_found(&self) -> bool {
        matches!(self, DetectionResult::Found { .. })
    }
}

/// Detect a conserved quantity: take a as the right Perron eigenvector, check
/// that every rule has a constant inner product against it, and solve the
/// difference constraints g(s) - g(r) = Phi(v, s) over each environment
/// digraph by spanning-tree propagation from the first declared state, with
/// non-tree edges verified afterwards. Potentials are phi(v, s) = -g(s).
pub fn detect(spec: &NetworkSpec, report: &SpectralReport, eps: f64) -> DetectionResult {
    if report.rho.abs() > eps {
        return DetectionResult::NoneBecause {
            witness: Witness::RhoNonzero { rho: report.rho },
        };
    }
    let a = report.a.clone();
    let n = spec.vertex_count();

    let mut inner = Vec::with_capacity(n);
    for v in 0..n {
        let mut per_state = Vec::with_capacity(spec.env(v).state_count());
        for s in 0..spec.env(v).state_count() {
            let rule = spec.rule(v, s);
            let inners: Vec<f64> = rule
                .atoms
                .iter()
                .map(|atom| atom.delta.iter().zip(&a).map(|(d, w)| *d as f64 * w).sum())
                .collect();
            for (i, x) in inners.iter().enumerate() {
                if (x - inners[0]).abs() > INNER_TOL {
                    return DetectionResult::NoneBecause {
                        witness: Witness::NonConstantInner {
                            vertex: spec.vertex_name(v).to_owned(),
                            state: spec.env(v).states()[s].clone(),
                            atom_a: 0,
                            atom_b: i,
                            inner_a: inners[0],
                            inner_b: *x,
                        },
                    };
                }
            }
            per_state.push(inners[0]);
        }
        inner.push(per_state);
    }

    let mut phi = Vec::with_capacity(n);
    for v in 0..n {
        let env = spec.env(v);
        let k = env.state_count();
        // Spanning tree by breadth-first search from the reference state 0.
        let mut g = vec![f64::NAN; k];
        g[0] = 0.0;
        let mut queue = std::collections::VecDeque::from([0usize]);
        while let Some(r) = queue.pop_front() {
            for s in 0..k {
                if env.row(r)[s] > 0.0 && g[s].is_nan() {
                    g[s] = g[r] + inner[v][s];
                    queue.push_back(s);
                }
            }
        }
        // All states are reachable in a chain with a stationary distribution.
        debug_assert!(g.iter().all(|x| !x.is_nan()));
        for r in 0..k {
            for s in 0..k {
                if env.row(r)[s] > 0.0 {
                    let got = g[s] - g[r];
                    if (got - inner[v][s]).abs() > INNER_TOL {
                        return DetectionResult::NoneBecause {
                            witness: Witness::PotentialInfeasible {
                                vertex: spec.vertex_name(v).to_owned(),
                                from_state: env.states()[r].clone(),
                                to_state: env.states()[s].clone(),
                                expected: inner[v][s],
                                got,
                            },
                        };
                    }
                }
            }
        }
        phi.push(g.iter().map(|x| 0.0 - x).collect());
    }

    DetectionResult::Found {
        quantity: ConservedQuantity { a, phi, inner },
    }
}

/// Maximum absolute deviation of the invariant along a trajectory, relative
/// to its initial value.
pub fn verify_conserved(cq: &ConservedQuantity, trajectory: &[Configuration]) -> f64 {
    let mut max_dev: f64 = 0.0;
    let Some(first) = trajectory.first() else {
        return 0.0;
    };
    let q0 = cq.evaluate(first);
    for cfg in trajectory.iter().skip(1) {
        max_dev = max_dev.max((cq.evaluate(cfg) - q0).abs());
    }
    max_dev
}

/// Construct an initial state that can never stabilize: the first declared
/// global environment, and a uniform surplus above the threshold large enough
/// that the invariant pins some vertex at or above its threshold forever.
pub fn unstable_initial_state(
    cq: &ConservedQuantity,
    spec: &NetworkSpec,
) -> Result<(Vec<i64>, Vec<usize>), ConservedError> {
    if cq.a.len() != spec.vertex_count() {
        return Err(ConservedError::InvalidQuantity(
            "weight vector has the wrong dimension".into(),
        ));
    }
    if cq.a.iter().any(|a| !a.is_finite() || *a <= 0.0) {
        return Err(ConservedError::InvalidQuantity(
            "weights must be entrywise positive".into(),
        ));
    }
    if cq.phi.iter().flatten().any(|x| !x.is_finite()) {
        return Err(ConservedError::InvalidQuantity(
            "potentials must be finite".into(),
        ));
    }
    let n = spec.vertex_count();
    let threshold = spec.threshold();
    let q0 = vec![0usize; n];
    let sum_a: f64 = cq.a.iter().sum();
    let sum_at: f64 = cq.a.iter().zip(threshold).map(|(a, t)| a * *t as f64).sum();
    let max_phi = cq
        .phi
        .iter()
        .flatten()
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max);
    let phi_at_q0: f64 = (0..n).map(|v| cq.phi[v][0]).sum();
    let surplus = ((sum_at + n as f64 * max_phi - phi_at_q0) / sum_a)
        .ceil()
        .max(0.0) as i64;
    let eta0: Vec<i64> = threshold.iter().map(|t| t + surplus + 1).collect();

    // The construction must satisfy the bound it is built from.
    let lhs: f64 =
        cq.a.iter()
            .zip(&eta0)
            .map(|(a, e)| a * *e as f64)
            .sum::<f64>()
            + phi_at_q0;
    let rhs = sum_at + n as f64 * max_phi;
    if lhs + 1e-9 < rhs {
        return Err(ConservedError::InvalidQuantity(format!(
            "constructed state fails the invariant bound: {lhs} < {rhs}"
        )));
    }
    Ok((eta0, q0))
}
