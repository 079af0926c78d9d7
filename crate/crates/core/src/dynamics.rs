//! The stochastic network in a Markovian environment: weighted vertex
//! selection, environment-then-toppling steps, the legal driver, and the
//! environment-sampled instruction stack.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::model::NetworkSpec;
use crate::stack::{is_stable, Instruction, InstructionSource, StackError};

#[derive(Debug, Error)]
pub enum DynamicsError {
    #[error("configuration is already stable")]
    AlreadyStable,
}

/// A seedable, splittable random stream.
///
/// Streams are ChaCha8 generators keyed by a master `seed`; `stream` selects
/// one of 2^64 independent ChaCha streams for that seed. Child streams are
/// derived by `child`, which folds a tag into the stream id through the
/// splitmix64 finalizer:
///
/// ```text
/// z = stream XOR ((tag + 1) * 0x9E3779B97F4A7C15)
/// z = (z XOR (z >> 30)) * 0xBF58476D1CE4E5B9
/// z = (z XOR (z >> 27)) * 0x94D049BB133111EB
/// stream' = z XOR (z >> 31)
/// ```
///
/// The mixing makes nested derivations order-sensitive, so
/// `child(a).child(b)` and `child(b).child(a)` name different streams. The
/// rule is fixed; identical (seed, stream) always reproduce identical draws.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct RngStream {
    pub seed: u64,
    pub stream: u64,
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        Self { seed, stream: 0 }
    }

    pub fn with_stream(seed: u64, stream: u64) -> Self {
        Self { seed, stream }
    }

    /// Derive an independent-in-practice child stream for `tag`.
    pub fn child(&self, tag: u64) -> Self {
        let mut z = self.stream ^ (tag.wrapping_add(1)).wrapping_mul(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        Self {
            seed: self.seed,
            stream: z ^ (z >> 31),
        }
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream);
        rng
    }
}

/// Particle counts plus the global environment, one state per vertex.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Configuration {
    pub eta: Vec<i64>,
    pub q: Vec<usize>,
}

impl Configuration {
    pub fn new(eta: Vec<i64>, q: Vec<usize>) -> Self {
        Self { eta, q }
    }
}

/// Sample an index from explicit probabilities using one uniform draw.
/// Deterministic distributions consume no randomness.
pub(crate) fn sample_index<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    if probs.len() == 1 {
        return 0;
    }
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

/// Sample an atom index of a toppling rule.
fn sample_atom<R: Rng + ?Sized>(rule: &crate::model::TopplingDistribution, rng: &mut R) -> usize {
    if rule.atoms.len() == 1 {
        return 0;
    }
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, atom) in rule.atoms.iter().enumerate() {
        acc += atom.prob;
        if u < acc {
            return i;
        }
    }
    rule.atoms.len() - 1
}

/// Select the vertex to topple with probability proportional to the positive
/// part of eta - t.
pub fn select_vertex<R: Rng + ?Sized>(
    eta: &[i64],
    threshold: &[i64],
    rng: &mut R,
) -> Result<usize, DynamicsError> {
    let total: u64 = eta
        .iter()
        .zip(threshold)
        .map(|(e, t)| (e - t).max(0) as u64)
        .sum();
    if total == 0 {
        return Err(DynamicsError::AlreadyStable);
    }
    let mut x = rng.random_range(0..total);
    for (v, (e, t)) in eta.iter().zip(threshold).enumerate() {
        let w = (e - t).max(0) as u64;
        if x < w {
            return Ok(v);
        }
        x -= w;
    }
    unreachable!("weights sum to total")
}

/// What one step did: which vertex toppled, the state its environment moved
/// to, and which atom of the rule was drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StepEvent {
    pub vertex: usize,
    pub state: usize,
    pub atom: usize,
}

fn step_in_place<R: Rng + ?Sized>(
    cfg: &mut Configuration,
    spec: &NetworkSpec,
    rng: &mut R,
) -> Result<StepEvent, DynamicsError> {
    let v = select_vertex(&cfg.eta, spec.threshold(), rng)?;
    // Environment updates first; the drawn state parameterizes the toppling.
    let s = sample_index(spec.env(v).row(cfg.q[v]), rng);
    cfg.q[v] = s;
    let rule = spec.rule(v, s);
    let atom = sample_atom(rule, rng);
    for (e, d) in cfg.eta.iter_mut().zip(&rule.atoms[atom].delta) {
        *e += d;
    }
    Ok(StepEvent {
        vertex: v,
        state: s,
        atom,
    })
}

/// One step of the legal dynamics. Pure: returns the successor configuration.
pub fn step<R: Rng + ?Sized>(
    cfg: &Configuration,
    spec: &NetworkSpec,
    rng: &mut R,
) -> Result<Configuration, DynamicsError> {
    let mut next = cfg.clone();
    step_in_place(&mut next, spec, rng)?;
    Ok(next)
}

/// Like [`step`], additionally reporting what happened.
pub fn step_with_event<R: Rng + ?Sized>(
    cfg: &Configuration,
    spec: &NetworkSpec,
    rng: &mut R,
) -> Result<(Configuration, StepEvent), DynamicsError> {
    let mut next = cfg.clone();
    let event = step_in_place(&mut next, spec, rng)?;
    Ok((next, event))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RunTag {
    Stabilized,
    Cutoff,
}

/// Outcome of one legal run: whether it stabilized, after how many steps,
/// the final configuration, and optional snapshots.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub tag: RunTag,
    pub steps: u64,
    pub final_config: Configuration,
    pub trajectory: Option<Vec<(u64, Configuration)>>,
}

impl RunOutcome {
    pub fn stabilized(&self) -> bool {
        self.tag == RunTag::Stabilized
    }
}

/// Run the legal driver until stable or `max_steps`. With
/// `snapshot_every = Some(k)` the trajectory records the configuration at
/// step 0 and every k-th step thereafter.
pub fn run_legal(
    spec: &NetworkSpec,
    eta0: &[i64],
    q0: &[usize],
    max_steps: u64,
    stream: RngStream,
    snapshot_every: Option<u64>,
) -> RunOutcome {
    debug_assert!(
        eta0.iter().all(|e| *e >= 0),
        "initial counts must be nonnegative"
    );
    let mut rng = stream.rng();
    let mut cfg = Configuration::new(eta0.to_vec(), q0.to_vec());
    let mut trajectory = snapshot_every.map(|_| vec![(0, cfg.clone())]);
    let mut steps = 0;
    while steps < max_steps {
        if is_stable(&cfg.eta, spec.threshold()) {
            return RunOutcome {
                tag: RunTag::Stabilized,
                steps,
                final_config: cfg,
                trajectory,
            };
        }
        step_in_place(&mut cfg, spec, &mut rng).expect("unstable configuration steps");
        steps += 1;
        if let (Some(traj), Some(k)) = (trajectory.as_mut(), snapshot_every) {
            if k > 0 && steps % k == 0 {
                traj.push((steps, cfg.clone()));
            }
        }
    }
    let tag = if is_stable(&cfg.eta, spec.threshold()) {
        RunTag::Stabilized
    } else {
        RunTag::Cutoff
    };
    RunOutcome {
        tag,
        steps,
        final_config: cfg,
        trajectory,
    }
}

struct SampledEntry {
    instruction: Instruction,
    /// Chain state the instruction was drawn in.
    state: usize,
}

/// Instruction stack sampled from the Markovian environment: per vertex, the
/// environment chain advances lazily from q0 and each new index draws one
/// toppling from the rule of the state it lands in. Draws are memoized, so
/// re-reading an index always returns the same instruction.
pub struct SampledStack<'a> {
    spec: &'a NetworkSpec,
    q0: Vec<usize>,
    memo: Vec<Vec<SampledEntry>>,
    rng: ChaCha8Rng,
}

impl<'a> SampledStack<'a> {
    pub fn new(spec: &'a NetworkSpec, q0: Vec<usize>, stream: RngStream) -> Self {
        let memo = (0..spec.vertex_count()).map(|_| Vec::new()).collect();
        Self {
            spec,
            q0,
            memo,
            rng: stream.rng(),
        }
    }

    pub fn initial_env(&self) -> &[usize] {
        &self.q0
    }

    fn ensure(&mut self, vertex: usize, index: u64) {
        let needed = index as usize + 1;
        while self.memo[vertex].len() < needed {
            let from = self.memo[vertex]
                .last()
                .map(|e| e.state)
                .unwrap_or(self.q0[vertex]);
            let state = sample_index(self.spec.env(vertex).row(from), &mut self.rng);
            let rule = self.spec.rule(vertex, state);
            let atom = sample_atom(rule, &mut self.rng);
            self.memo[vertex].push(SampledEntry {
                instruction: Instruction {
                    delta: rule.atoms[atom].delta.clone(),
                },
                state,
            });
        }
    }

    /// The instruction at (vertex, index) together with the environment state
    /// it was drawn in.
    pub fn instruction_with_state(&mut self, vertex: usize, index: u64) -> (&Instruction, usize) {
        self.ensure(vertex, index);
        let entry = &self.memo[vertex][index as usize];
        (&entry.instruction, entry.state)
    }

    /// Environment state at `vertex` after `count` topplings there: q0 for
    /// count 0, otherwise the state the count-th instruction was drawn in.
    pub fn env_after(&mut self, vertex: usize, count: u64) -> usize {
        if count == 0 {
            return self.q0[vertex];
        }
        self.ensure(vertex, count - 1);
        self.memo[vertex][count as usize - 1].state
    }
}

impl InstructionSource for SampledStack<'_> {
    fn vertex_count(&self) -> usize {
        self.spec.vertex_count()
    }

    fn instruction(&mut self, vertex: usize, index: u64) -> Result<&Instruction, StackError> {
        Ok(self.instruction_with_state(vertex, index).0)
    }
}

/// Construct the environment-sampled stack for (spec, q0).
pub fn sampled_stack<'a>(
    spec: &'a NetworkSpec,
    q0: &[usize],
    stream: RngStream,
) -> SampledStack<'a> {
    SampledStack::new(spec, q0.to_vec(), stream)
}
