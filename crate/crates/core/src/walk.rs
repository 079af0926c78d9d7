//! The p-sampled toppling random walk: vertices are drawn from the left
//! Perron eigenvector and toppled regardless of legality, the environment is
//! tracked through the sampled stack, and excursions between returns to the
//! initial global environment carry the walk's statistics.

use std::collections::BTreeMap;

use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::dynamics::{run_legal, sample_index, RngStream, SampledStack};
use crate::model::NetworkSpec;
use crate::spectral::{stationary_distribution, ChainError, SpectralReport};

/// Safety cap on the length of a single excursion.
pub const DEFAULT_EXCURSION_CAP: u64 = 100_000_000;

/// Largest global-environment product space enumerated for predicted joint
/// distributions.
pub const MAX_ENV_SPACE: u64 = 10_000_000;

#[derive(Debug, Error)]
pub enum WalkError {
    #[error("excursion exceeded the safety cap of {cap} steps; environment may be effectively non-returning")]
    ExcursionBudget { cap: u64 },
    #[error("rho = {rho} is not supercritical")]
    NotSupercritical { rho: f64 },
    #[error("no viable candidate found up to scale 2^10")]
    SearchExhausted,
    #[error(transparent)]
    Chain(#[from] ChainError),
    #[error("global environment space has {size} states, beyond the enumeration limit")]
    EnvSpaceTooLarge { size: u64 },
}

/// Number of global environments, if it fits the enumeration limit.
pub fn global_env_count(spec: &NetworkSpec) -> Result<u64, WalkError> {
    let mut count: u64 = 1;
    for v in 0..spec.vertex_count() {
        count = count
            .checked_mul(spec.env(v).state_count() as u64)
            .filter(|c| *c <= MAX_ENV_SPACE)
            .ok_or(WalkError::EnvSpaceTooLarge { size: u64::MAX })?;
    }
    Ok(count)
}

/// Mixed-radix code of a global environment, radix |S_v| per vertex.
pub fn env_code(spec: &NetworkSpec, q: &[usize]) -> u64 {
    let mut code = 0u64;
    for v in (0..spec.vertex_count()).rev() {
        code = code * spec.env(v).state_count() as u64 + q[v] as u64;
    }
    code
}

pub fn env_decode(spec: &NetworkSpec, mut code: u64) -> Vec<usize> {
    let mut q = Vec::with_capacity(spec.vertex_count());
    for v in 0..spec.vertex_count() {
        let radix = spec.env(v).state_count() as u64;
        q.push((code % radix) as usize);
        code /= radix;
    }
    q
}

/// True iff eta >= t with eta != t: the walk's above-threshold condition.
pub fn strictly_above_threshold(eta: &[i64], threshold: &[i64]) -> bool {
    eta.iter().zip(threshold).all(|(e, t)| e >= t) && eta.iter().zip(threshold).any(|(e, t)| e != t)
}

/// Low-level stepper shared by the walk operations. Topples a p-sampled
/// vertex through the memoized sampled stack and tracks the environment seen
/// by the odometer.
pub struct WalkEngine<'a> {
    spec: &'a NetworkSpec,
    p: Vec<f64>,
    q0: Vec<usize>,
    stack: SampledStack<'a>,
    rng: ChaCha8Rng,
    eta: Vec<i64>,
    h: Vec<u64>,
    q_hat: Vec<usize>,
    steps: u64,
}

/// What one walk step did: the toppled vertex, the (vertex, environment)
/// pair observed before the step, and whether the environment returned to q0.
#[derive(Debug, Clone, Copy)]
pub struct WalkStep {
    pub vertex: usize,
    pub pre_env_code: u64,
    pub returned: bool,
}

impl<'a> WalkEngine<'a> {
    pub fn new(
        spec: &'a NetworkSpec,
        report: &SpectralReport,
        eta0: &[i64],
        q0: &[usize],
        stream: RngStream,
    ) -> Self {
        Self {
            spec,
            p: report.p.clone(),
            q0: q0.to_vec(),
            stack: SampledStack::new(spec, q0.to_vec(), stream.child(1)),
            rng: stream.child(0).rng(),
            eta: eta0.to_vec(),
            h: vec![0; spec.vertex_count()],
            q_hat: q0.to_vec(),
            steps: 0,
        }
    }

    pub fn eta(&self) -> &[i64] {
        &self.eta
    }

    pub fn odometer(&self) -> &[u64] {
        &self.h
    }

    pub fn global_env(&self) -> &[usize] {
        &self.q_hat
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Consume the engine, returning the memoized stack for replay.
    pub fn into_stack(self) -> SampledStack<'a> {
        self.stack
    }

    pub fn step(&mut self) -> WalkStep {
        let vertex = sample_index(&self.p, &mut self.rng);
        let pre_env_code = env_code(self.spec, &self.q_hat);
        let (instr, state) = self.stack.instruction_with_state(vertex, self.h[vertex]);
        for (e, d) in self.eta.iter_mut().zip(&instr.delta) {
            *e += d;
        }
        self.h[vertex] += 1;
        self.q_hat[vertex] = state;
        self.steps += 1;
        WalkStep {
            vertex,
            pre_env_code,
            returned: self.q_hat == self.q0,
        }
    }
}

/// One excursion of the walk: its length, the configuration increment across
/// it, per-(vertex, environment) visit counts, and whether the configuration
/// dropped to or below the threshold boundary at any point inside it.
#[derive(Debug, Clone, PartialEq)]
pub struct ExcursionRecord {
    pub tau: u64,
    pub increment: Vec<i64>,
    /// Count of steps n in the excursion with (toppled vertex, pre-step
    /// global environment code) equal to the key.
    pub visit_counts: BTreeMap<(usize, u64), u64>,
    pub below_threshold: bool,
}

/// Run the walk for `n_excursions` consecutive returns of the environment to
/// q0, with the default per-excursion safety cap.
pub fn run_walk(
    spec: &NetworkSpec,
    report: &SpectralReport,
    eta0: &[i64],
    q0: &[usize],
    n_excursions: u64,
    stream: RngStream,
) -> Result<Vec<ExcursionRecord>, WalkError> {
    run_walk_with_cap(
        spec,
        report,
        eta0,
        q0,
        n_excursions,
        stream,
        DEFAULT_EXCURSION_CAP,
    )
}

pub fn run_walk_with_cap(
    spec: &NetworkSpec,
    report: &SpectralReport,
    eta0: &[i64],
    q0: &[usize],
    n_excursions: u64,
    stream: RngStream,
    cap: u64,
) -> Result<Vec<ExcursionRecord>, WalkError> {
    let mut engine = WalkEngine::new(spec, report, eta0, q0, stream);
    let threshold = spec.threshold();
    let mut records = Vec::with_capacity(n_excursions.min(1 << 20) as usize);
    for _ in 0..n_excursions {
        let start_eta = engine.eta.clone();
        let mut visit_counts = BTreeMap::new();
        let mut below = false;
        let mut tau = 0u64;
        loop {
            if tau >= cap {
                return Err(WalkError::ExcursionBudget { cap });
            }
            let step = engine.step();
            *visit_counts
                .entry((step.vertex, step.pre_env_code))
                .or_insert(0) += 1;
            tau += 1;
            if !strictly_above_threshold(&engine.eta, threshold) {
                below = true;
            }
            if step.returned {
                break;
            }
        }
        let increment = engine
            .eta
            .iter()
            .zip(&start_eta)
            .map(|(now, then)| now - then)
            .collect();
        records.push(ExcursionRecord {
            tau,
            increment,
            visit_counts,
            below_threshold: below,
        });
    }
    Ok(records)
}

/// Product-form stationary law over (toppled vertex, global environment):
/// p(v) times the product of per-vertex stationary weights.
pub fn product_stationary(
    spec: &NetworkSpec,
    report: &SpectralReport,
) -> Result<BTreeMap<(usize, u64), f64>, WalkError> {
    let count = global_env_count(spec)?;
    let pis: Vec<Vec<f64>> = (0..spec.vertex_count())
        .map(|v| stationary_distribution(spec.env(v)))
        .collect::<Result<_, _>>()?;
    let mut table = BTreeMap::new();
    for code in 0..count {
        let q = env_decode(spec, code);
        let weight: f64 = q.iter().enumerate().map(|(u, s)| pis[u][*s]).product();
        for v in 0..spec.vertex_count() {
            table.insert((v, code), report.p[v] * weight);
        }
    }
    Ok(table)
}

#[derive(Debug, Clone, Serialize)]
pub struct JointCell {
    pub vertex: usize,
    pub env_code: u64,
    pub observed: f64,
    pub predicted: f64,
}

/// Empirical joint law of (w_{n+1}, q_n) over one long walk, with the L1
/// distance to the product form.
#[derive(Debug, Clone, Serialize)]
pub struct JointStationaryReport {
    pub n_steps: u64,
    pub cells: Vec<JointCell>,
    pub l1_distance: f64,
}

pub fn empirical_joint_stationary(
    spec: &NetworkSpec,
    report: &SpectralReport,
    q0: &[usize],
    n_steps: u64,
    stream: RngStream,
) -> Result<JointStationaryReport, WalkError> {
    let predicted = product_stationary(spec, report)?;
    let zeros = vec![0i64; spec.vertex_count()];
    let mut engine = WalkEngine::new(spec, report, &zeros, q0, stream);
    let mut counts: BTreeMap<(usize, u64), u64> = BTreeMap::new();
    for _ in 0..n_steps {
        let step = engine.step();
        *counts.entry((step.vertex, step.pre_env_code)).or_insert(0) += 1;
    }
    let mut cells = Vec::with_capacity(predicted.len());
    let mut l1 = 0.0;
    for (key, pi) in &predicted {
        let observed = counts.get(key).copied().unwrap_or(0) as f64 / n_steps as f64;
        l1 += (observed - pi).abs();
        cells.push(JointCell {
            vertex: key.0,
            env_code: key.1,
            observed,
            predicted: *pi,
        });
    }
    Ok(JointStationaryReport {
        n_steps,
        cells,
        l1_distance: l1,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct CellCheck {
    pub vertex: usize,
    pub env_code: u64,
    pub mean_visits: f64,
    pub predicted: f64,
    pub se: f64,
    pub z: f64,
}

/// Per-cell comparison of mean excursion visit counts against
/// `E[tau] * Pi(v, q)`, scored on the per-record differences.
#[derive(Debug, Clone, Serialize)]
pub struct ExcursionSumsReport {
    pub n_excursions: u64,
    pub mean_tau: f64,
    pub cells: Vec<CellCheck>,
    pub max_abs_z: f64,
    /// All cells within 4 standard errors.
    pub all_within: bool,
}

pub fn excursion_sums_check(
    spec: &NetworkSpec,
    report: &SpectralReport,
    records: &[ExcursionRecord],
) -> Result<ExcursionSumsReport, WalkError> {
    let predicted = product_stationary(spec, report)?;
    let n = records.len() as f64;
    let mean_tau = records.iter().map(|r| r.tau as f64).sum::<f64>() / n;
    let mut cells = Vec::new();
    let mut max_abs_z: f64 = 0.0;
    for (key, pi) in &predicted {
        // x_j = visits_j - tau_j * Pi has mean zero under the identity.
        let xs: Vec<f64> = records
            .iter()
            .map(|r| r.visit_counts.get(key).copied().unwrap_or(0) as f64 - r.tau as f64 * pi)
            .collect();
        let mean_x = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean_x) * (x - mean_x)).sum::<f64>() / (n - 1.0);
        let se = (var / n).sqrt();
        let z = if se > 0.0 {
            mean_x / se
        } else if mean_x.abs() < 1e-12 {
            0.0
        } else {
            f64::INFINITY
        };
        max_abs_z = max_abs_z.max(z.abs());
        let mean_visits = records
            .iter()
            .map(|r| r.visit_counts.get(key).copied().unwrap_or(0) as f64)
            .sum::<f64>()
            / n;
        cells.push(CellCheck {
            vertex: key.0,
            env_code: key.1,
            mean_visits,
            predicted: mean_tau * pi,
            se,
            z,
        });
    }
    Ok(ExcursionSumsReport {
        n_excursions: records.len() as u64,
        mean_tau,
        cells,
        max_abs_z,
        all_within: max_abs_z <= 4.0,
    })
}

/// Mean excursion increments against the predicted drift `E[tau] * rho * p`.
#[derive(Debug, Clone, Serialize)]
pub struct DriftReport {
    pub n_excursions: u64,
    pub mean_tau: f64,
    pub se_tau: f64,
    pub mean_increment: Vec<f64>,
    pub se_increment: Vec<f64>,
    /// mean_tau (empirical) times rho * p (exact from the spectral report).
    pub predicted: Vec<f64>,
    pub z_scores: Vec<f64>,
}

pub fn drift_report(records: &[ExcursionRecord], report: &SpectralReport) -> DriftReport {
    let n = records.len() as f64;
    let n_vertices = report.p.len();
    let mean_tau = records.iter().map(|r| r.tau as f64).sum::<f64>() / n;
    let var_tau = records
        .iter()
        .map(|r| (r.tau as f64 - mean_tau).powi(2))
        .sum::<f64>()
        / (n - 1.0);
    let se_tau = (var_tau / n).sqrt();
    let mut mean_increment = vec![0.0; n_vertices];
    for r in records {
        for (m, inc) in mean_increment.iter_mut().zip(&r.increment) {
            *m += *inc as f64;
        }
    }
    for m in &mut mean_increment {
        *m /= n;
    }
    let mut se_increment = vec![0.0; n_vertices];
    for (v, se) in se_increment.iter_mut().enumerate() {
        let var = records
            .iter()
            .map(|r| (r.increment[v] as f64 - mean_increment[v]).powi(2))
            .sum::<f64>()
            / (n - 1.0);
        *se = (var / n).sqrt();
    }
    let predicted: Vec<f64> = report.p.iter().map(|p| mean_tau * report.rho * p).collect();
    let z_scores: Vec<f64> = (0..n_vertices)
        .map(|v| {
            let diff = mean_increment[v] - predicted[v];
            if se_increment[v] > 0.0 {
                diff / se_increment[v]
            } else if diff.abs() < 1e-12 {
                0.0
            } else {
                f64::INFINITY
            }
        })
        .collect();
    DriftReport {
        n_excursions: records.len() as u64,
        mean_tau,
        se_tau,
        mean_increment,
        se_increment,
        predicted,
        z_scores,
    }
}

/// A configuration found by the doubling search from which the walk gains one
/// particle everywhere over some number of returns, with positive empirical
/// frequency, while staying strictly above threshold.
#[derive(Debug, Clone, Serialize)]
pub struct ViableCandidate {
    pub eta: Vec<i64>,
    /// Scale of the candidate: eta = t + scale * K.
    pub scale: u64,
    pub successes: u64,
    pub trials: u64,
    pub frequency: f64,
}

/// Search initial configurations t + c*K for c = 1, 2, 4, ..., 2^10 (just t
/// when K = 0), estimating by Monte Carlo the probability of the viability
/// event within `horizon` steps per trial.
pub fn find_viable(
    spec: &NetworkSpec,
    report: &SpectralReport,
    q0: &[usize],
    stream: RngStream,
    horizon: u64,
    trials: u64,
) -> Result<ViableCandidate, WalkError> {
    if report.rho <= 0.0 {
        return Err(WalkError::NotSupercritical { rho: report.rho });
    }
    let k = spec.mass_bound();
    let threshold = spec.threshold();
    let scales: Vec<u64> = if k == 0 {
        vec![0]
    } else {
        (0..=10).map(|i| 1u64 << i).collect()
    };
    for (ci, c) in scales.iter().enumerate() {
        let candidate: Vec<i64> = threshold.iter().map(|t| t + *c as i64 * k).collect();
        let mut successes = 0u64;
        for trial in 0..trials {
            let trial_stream = stream.child(ci as u64).child(trial);
            if viable_trial(spec, report, &candidate, q0, trial_stream, horizon) {
                successes += 1;
            }
        }
        if successes > 0 {
            return Ok(ViableCandidate {
                eta: candidate,
                scale: *c,
                successes,
                trials,
                frequency: successes as f64 / trials as f64,
            });
        }
    }
    Err(WalkError::SearchExhausted)
}

fn viable_trial(
    spec: &NetworkSpec,
    report: &SpectralReport,
    eta0: &[i64],
    q0: &[usize],
    stream: RngStream,
    horizon: u64,
) -> bool {
    let threshold = spec.threshold();
    if !strictly_above_threshold(eta0, threshold) {
        return false;
    }
    let mut engine = WalkEngine::new(spec, report, eta0, q0, stream);
    let target: Vec<i64> = eta0.iter().map(|e| e + 1).collect();
    for _ in 0..horizon {
        let step = engine.step();
        if !strictly_above_threshold(engine.eta(), threshold) {
            return false;
        }
        if step.returned && engine.eta().iter().zip(&target).all(|(e, t)| e >= t) {
            return true;
        }
    }
    false
}

/// Fraction of legal runs still active at the horizon, with a Wilson 95% CI.
#[derive(Debug, Clone, Serialize)]
pub struct SurvivalReport {
    pub runs: u64,
    pub horizon: u64,
    pub survived: u64,
    pub fraction: f64,
    pub wilson_low: f64,
    pub wilson_high: f64,
}

pub fn survival_experiment(
    spec: &NetworkSpec,
    eta0: &[i64],
    q0: &[usize],
    horizon: u64,
    runs: u64,
    stream: RngStream,
) -> SurvivalReport {
    let mut survived = 0u64;
    for run in 0..runs {
        let outcome = run_legal(spec, eta0, q0, horizon, stream.child(run), None);
        if !outcome.stabilized() {
            survived += 1;
        }
    }
    let (wilson_low, wilson_high) = wilson_interval(survived, runs);
    SurvivalReport {
        runs,
        horizon,
        survived,
        fraction: survived as f64 / runs as f64,
        wilson_low,
        wilson_high,
    }
}

/// Wilson score interval at 95% confidence.
pub fn wilson_interval(successes: u64, trials: u64) -> (f64, f64) {
    if trials == 0 {
        return (0.0, 1.0);
    }
    let z = 1.959_963_984_540_054_f64;
    let n = trials as f64;
    let p = successes as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let center = (p + z2 / (2.0 * n)) / denom;
    let half = z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / denom;
    // The bound is exact at the corners; keep it free of rounding there.
    let low = if successes == 0 {
        0.0
    } else {
        (center - half).max(0.0)
    };
    let high = if successes == trials {
        1.0
    } else {
        (center + half).min(1.0)
    };
    (low, high)
}

/// Least-squares fit of log P(tau > k) against k for k = 1..=k_max (restricted
/// to k with surviving mass); returns (slope, r_squared) when at least three
/// points exist.
pub fn return_time_tail_fit(taus: &[u64], k_max: u64) -> Option<(f64, f64)> {
    let n = taus.len() as f64;
    if n == 0.0 {
        return None;
    }
    let mut points = Vec::new();
    for k in 1..=k_max {
        let survivors = taus.iter().filter(|t| **t > k).count();
        if survivors == 0 {
            break;
        }
        points.push((k as f64, (survivors as f64 / n).ln()));
    }
    if points.len() < 3 {
        return None;
    }
    let m = points.len() as f64;
    let mean_x = points.iter().map(|(x, _)| x).sum::<f64>() / m;
    let mean_y = points.iter().map(|(_, y)| y).sum::<f64>() / m;
    let sxy: f64 = points
        .iter()
        .map(|(x, y)| (x - mean_x) * (y - mean_y))
        .sum();
    let sxx: f64 = points
        .iter()
        .map(|(x, _)| (x - mean_x) * (x - mean_x))
        .sum();
    let syy: f64 = points
        .iter()
        .map(|(_, y)| (y - mean_y) * (y - mean_y))
        .sum();
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    let slope = sxy / sxx;
    let r2 = (sxy * sxy) / (sxx * syy);
    Some((slope, r2))
}
