//! Stackwise toppling: instruction stacks, the toppling operator, odometers,
//! legality and stability predicates, plus the verification harnesses for the
//! Abelian property and the least-action principle.
//!
//! Configurations in this module live in all of Z^V: topplings below the
//! threshold are permitted and may drive counts negative. Nonnegativity is a
//! property of the legal driver (dynamics module), not of the operator.

use serde::Serialize;
use thiserror::Error;

use crate::model::SpecError;

/// A single toppling instruction: the displacement it applies, indexed by
/// vertex declaration order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Instruction {
    pub delta: Vec<i64>,
}

#[derive(Debug, Error)]
pub enum StackError {
    #[error("stack exhausted at vertex {vertex}, index {index}")]
    Exhausted { vertex: usize, index: u64 },
}

/// Precondition failures of the verification harnesses.
#[derive(Debug, Error)]
pub enum VerifyError {
    #[error("sequences have different odometers")]
    OdometerMismatch,
    #[error("sequence step {step} is not legal")]
    NotLegal { step: usize },
    #[error("sequence does not stabilize the configuration")]
    NotStabilizing,
    #[error(transparent)]
    Stack(#[from] StackError),
}

/// Anything that can serve indexed toppling instructions. Reading an index
/// must always return the same instruction (materialized stacks are fixed;
/// sampled stacks memoize their draws).
pub trait InstructionSource {
    fn vertex_count(&self) -> usize;
    fn instruction(&mut self, vertex: usize, index: u64) -> Result<&Instruction, StackError>;
}

/// A fully materialized deterministic stack: per vertex, a finite list of
/// instructions consumed bottom-up.
#[derive(Debug, Clone, PartialEq)]
pub struct MaterializedStack {
    columns: Vec<Vec<Instruction>>,
}

impl MaterializedStack {
    pub fn new(columns: Vec<Vec<Instruction>>) -> Self {
        Self { columns }
    }

    /// A stack repeating one fixed instruction per vertex `len` times.
    pub fn repeat(deltas: &[Vec<i64>], len: usize) -> Self {
        let columns = deltas
            .iter()
            .map(|delta| {
                vec![
                    Instruction {
                        delta: delta.clone()
                    };
                    len
                ]
            })
            .collect();
        Self { columns }
    }

    pub fn column(&self, vertex: usize) -> &[Instruction] {
        &self.columns[vertex]
    }

    /// Load from JSON of the form `{"vertex": [[delta vector], ...], ...}`,
    /// with delta vectors given in the declared vertex order.
    pub fn parse_document(text: &str, vertices: &[String]) -> Result<Self, SpecError> {
        let doc: serde_json::Value = serde_json::from_str(text)
            .map_err(|e| SpecError::Schema(format!("invalid JSON: {e}")))?;
        let map = doc
            .as_object()
            .ok_or_else(|| SpecError::Schema("stack document must be an object".into()))?;
        for key in map.keys() {
            if !vertices.contains(key) {
                return Err(SpecError::Reference(format!("unknown vertex `{key}`")));
            }
        }
        let n = vertices.len();
        let mut columns = Vec::with_capacity(n);
        for name in vertices {
            let list = map.get(name).and_then(|v| v.as_array()).ok_or_else(|| {
                SpecError::Schema(format!("missing instruction list for `{name}`"))
            })?;
            let mut column = Vec::with_capacity(list.len());
            for entry in list {
                let row = entry
                    .as_array()
                    .ok_or_else(|| SpecError::Schema("instruction must be an array".into()))?;
                if row.len() != n {
                    return Err(SpecError::Schema(format!(
                        "instruction for `{name}` must have {n} coordinates"
                    )));
                }
                let delta: Vec<i64> = row
                    .iter()
                    .map(|x| {
                        x.as_i64().ok_or_else(|| {
                            SpecError::Schema("instruction entries must be integers".into())
                        })
                    })
                    .collect::<Result<_, _>>()?;
                column.push(Instruction { delta });
            }
            columns.push(column);
        }
        Ok(Self { columns })
    }
}

impl InstructionSource for MaterializedStack {
    fn vertex_count(&self) -> usize {
        self.columns.len()
    }

    fn instruction(&mut self, vertex: usize, index: u64) -> Result<&Instruction, StackError> {
        self.columns[vertex]
            .get(index as usize)
            .ok_or(StackError::Exhausted { vertex, index })
    }
}

/// Particle configuration together with the odometer of topplings consumed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct StackState {
    pub eta: Vec<i64>,
    pub h: Vec<u64>,
}

impl StackState {
    pub fn new(eta: Vec<i64>) -> Self {
        let h = vec![0; eta.len()];
        Self { eta, h }
    }
}

/// True iff toppling `vertex` is legal: strictly above threshold.
pub fn is_legal(eta: &[i64], vertex: usize, threshold: &[i64]) -> bool {
    eta[vertex] > threshold[vertex]
}

/// True iff no vertex is legal.
pub fn is_stable(eta: &[i64], threshold: &[i64]) -> bool {
    eta.iter().zip(threshold).all(|(e, t)| e <= t)
}

fn topple_mut<S: InstructionSource + ?Sized>(
    state: &mut StackState,
    vertex: usize,
    stack: &mut S,
) -> Result<(), StackError> {
    let instr = stack.instruction(vertex, state.h[vertex])?;
    for (e, d) in state.eta.iter_mut().zip(&instr.delta) {
        *e += d;
    }
    state.h[vertex] += 1;
    Ok(())
}

/// Apply one toppling at `vertex`: add the instruction at the current
/// odometer height and bump the counter. Pure: the input state is unchanged.
pub fn topple<S: InstructionSource + ?Sized>(
    state: &StackState,
    vertex: usize,
    stack: &mut S,
) -> Result<StackState, StackError> {
    let mut next = state.clone();
    topple_mut(&mut next, vertex, stack)?;
    Ok(next)
}

/// Fold a toppling sequence left to right from `(eta0, h = 0)`. The trace
/// records, per step, whether the toppled vertex was legal for the
/// configuration it saw.
pub fn apply_sequence<S: InstructionSource + ?Sized>(
    eta0: &[i64],
    seq: &[usize],
    stack: &mut S,
    threshold: &[i64],
) -> Result<(StackState, Vec<bool>), StackError> {
    let mut state = StackState::new(eta0.to_vec());
    let mut trace = Vec::with_capacity(seq.len());
    for &v in seq {
        trace.push(is_legal(&state.eta, v, threshold));
        topple_mut(&mut state, v, stack)?;
    }
    Ok((state, trace))
}

/// Per-vertex toppling counts of a sequence.
pub fn odometer(seq: &[usize], n_vertices: usize) -> Vec<u64> {
    let mut m = vec![0u64; n_vertices];
    for &v in seq {
        m[v] += 1;
    }
    m
}

#[derive(Debug, Clone, PartialEq)]
pub struct AbelianVerdict {
    pub first: StackState,
    pub second: StackState,
    pub equal: bool,
}

/// Verify the Abelian property on one instance: two sequences with identical
/// odometers must produce identical final states, exactly.
pub fn check_abelian<S: InstructionSource + ?Sized>(
    eta0: &[i64],
    seq1: &[usize],
    seq2: &[usize],
    stack: &mut S,
) -> Result<AbelianVerdict, VerifyError> {
    let n = stack.vertex_count();
    if odometer(seq1, n) != odometer(seq2, n) {
        return Err(VerifyError::OdometerMismatch);
    }
    let zeros = vec![0i64; n];
    let (first, _) = apply_sequence(eta0, seq1, stack, &zeros)?;
    let (second, _) = apply_sequence(eta0, seq2, stack, &zeros)?;
    let equal = first == second;
    Ok(AbelianVerdict {
        first,
        second,
        equal,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct LeastActionVerdict {
    pub legal_odometer: Vec<u64>,
    pub stabilizing_odometer: Vec<u64>,
    pub dominated: bool,
}

/// Verify the least-action principle on one instance: a fully legal sequence
/// is pointwise dominated by any stabilizing sequence.
pub fn check_least_action<S: InstructionSource + ?Sized>(
    eta0: &[i64],
    legal_seq: &[usize],
    stabilizing_seq: &[usize],
    stack: &mut S,
    threshold: &[i64],
) -> Result<LeastActionVerdict, VerifyError> {
    let n = stack.vertex_count();
    let (_, trace) = apply_sequence(eta0, legal_seq, stack, threshold)?;
    if let Some(step) = trace.iter().position(|ok| !ok) {
        return Err(VerifyError::NotLegal { step });
    }
    let (final_state, _) = apply_sequence(eta0, stabilizing_seq, stack, threshold)?;
    if !is_stable(&final_state.eta, threshold) {
        return Err(VerifyError::NotStabilizing);
    }
    let legal_odometer = odometer(legal_seq, n);
    let stabilizing_odometer = odometer(stabilizing_seq, n);
    let dominated = legal_odometer
        .iter()
        .zip(&stabilizing_odometer)
        .all(|(l, s)| l <= s);
    Ok(LeastActionVerdict {
        legal_odometer,
        stabilizing_odometer,
        dominated,
    })
}

/// Outcome of the greedy legal driver.
#[derive(Debug, Clone, PartialEq)]
pub enum StabilizeOutcome {
    Stable(Vec<usize>),
    Exhausted(Vec<usize>),
}

impl StabilizeOutcome {
    pub fn sequence(&self) -> &[usize] {
        match self {
            StabilizeOutcome::Stable(s) | StabilizeOutcome::Exhausted(s) => s,
        }
    }

    pub fn is_stable(&self) -> bool {
        matches!(self, StabilizeOutcome::Stable(_))
    }
}

/// Repeatedly topple the smallest-index legal vertex until stable or the
/// budget runs out. The returned sequence is legal by construction; by the
/// Abelian property the final state does not depend on the tie-break.
pub fn greedy_legal_stabilize<S: InstructionSource + ?Sized>(
    eta0: &[i64],
    stack: &mut S,
    threshold: &[i64],
    budget: u64,
) -> Result<StabilizeOutcome, StackError> {
    let mut state = StackState::new(eta0.to_vec());
    let mut seq = Vec::new();
    for _ in 0..budget {
        let next = match (0..state.eta.len()).find(|&v| is_legal(&state.eta, v, threshold)) {
            Some(v) => v,
            None => return Ok(StabilizeOutcome::Stable(seq)),
        };
        topple_mut(&mut state, next, stack)?;
        seq.push(next);
    }
    if is_stable(&state.eta, threshold) {
        Ok(StabilizeOutcome::Stable(seq))
    } else {
        Ok(StabilizeOutcome::Exhausted(seq))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::seq::SliceRandom;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn ex2_stack(len: usize) -> MaterializedStack {
        MaterializedStack::repeat(&[vec![-1, 1], vec![1, -1]], len)
    }

    /// Deterministic stack with the shape of EX-3 draws: u alternates between
    /// transfer and kill instructions, v always transfers back.
    fn ex3_shaped_stack(len: usize) -> MaterializedStack {
        let u: Vec<Instruction> = (0..len)
            .map(|j| Instruction {
                delta: if j % 2 == 0 { vec![-1, 1] } else { vec![-1, 0] },
            })
            .collect();
        let v = vec![Instruction { delta: vec![1, -1] }; len];
        MaterializedStack::new(vec![u, v])
    }

    #[test]
    fn topple_applies_instruction_and_bumps_odometer() {
        let mut stack = ex2_stack(4);
        let state = StackState::new(vec![2, 0]);
        let next = topple(&state, 0, &mut stack).unwrap();
        assert_eq!(next.eta, vec![1, 1]);
        assert_eq!(next.h, vec![1, 0]);
        // input untouched
        assert_eq!(state.eta, vec![2, 0]);
        assert_eq!(state.h, vec![0, 0]);

        let third = topple(&next, 0, &mut stack).unwrap();
        assert_eq!(third.eta, vec![0, 2]);
        assert_eq!(third.h, vec![2, 0]);
    }

    #[test]
    fn topple_sequence_uv_cancels_on_ex2() {
        let mut stack = ex2_stack(4);
        let (state, _) = apply_sequence(&[2, 2], &[0, 1], &mut stack, &[1, 1]).unwrap();
        assert_eq!(state.eta, vec![2, 2]);
        assert_eq!(state.h, vec![1, 1]);
    }

    #[test]
    fn legality_is_strict() {
        assert!(!is_legal(&[1], 0, &[1]));
        assert!(is_legal(&[2], 0, &[1]));
        assert!(!is_legal(&[0], 0, &[0]));
    }

    #[test]
    fn stability_boundaries() {
        assert!(is_stable(&[1, 1], &[1, 1]));
        assert!(!is_stable(&[2, 1], &[1, 1]));
        assert!(is_stable(&[0, 0], &[3, 0]));
    }

    #[test]
    fn empty_sequence_is_identity() {
        let mut stack = ex2_stack(1);
        let (state, trace) = apply_sequence(&[5, -2], &[], &mut stack, &[1, 1]).unwrap();
        assert_eq!(state.eta, vec![5, -2]);
        assert_eq!(state.h, vec![0, 0]);
        assert!(trace.is_empty());
    }

    #[test]
    fn trace_marks_illegal_steps() {
        let mut stack = ex2_stack(2);
        let (state, trace) = apply_sequence(&[2, 0], &[0], &mut stack, &[1, 1]).unwrap();
        assert_eq!(state.eta, vec![1, 1]);
        assert_eq!(trace, vec![true]);

        let mut stack = ex2_stack(2);
        let (state, trace) = apply_sequence(&[0, 0], &[0], &mut stack, &[1, 1]).unwrap();
        assert_eq!(state.eta, vec![-1, 1]);
        assert_eq!(trace, vec![false]);
    }

    #[test]
    fn stack_exhaustion_is_reported() {
        let mut stack = ex2_stack(1);
        let err = apply_sequence(&[5, 5], &[0, 0], &mut stack, &[1, 1]).unwrap_err();
        assert!(matches!(
            err,
            StackError::Exhausted {
                vertex: 0,
                index: 1
            }
        ));
    }

    #[test]
    fn odometer_counts() {
        assert_eq!(odometer(&[0, 1, 0], 2), vec![2, 1]);
        assert_eq!(odometer(&[], 3), vec![0, 0, 0]);
    }

    #[test]
    fn abelian_on_swapped_pair() {
        let mut stack = ex3_shaped_stack(8);
        let verdict = check_abelian(&[2, 2], &[0, 1], &[1, 0], &mut stack).unwrap();
        assert!(verdict.equal);
        assert_eq!(verdict.first, verdict.second);
    }

    #[test]
    fn abelian_rejects_odometer_mismatch() {
        let mut stack = ex2_stack(4);
        assert!(matches!(
            check_abelian(&[2, 2], &[0, 1], &[0, 0], &mut stack),
            Err(VerifyError::OdometerMismatch)
        ));
    }

    #[test]
    fn abelian_under_random_permutations() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut stack = ex3_shaped_stack(32);
        let base: Vec<usize> = (0..20).map(|_| rng.random_range(0..2)).collect();
        for _ in 0..100 {
            let mut permuted = base.clone();
            permuted.shuffle(&mut rng);
            let verdict = check_abelian(&[3, 1], &base, &permuted, &mut stack).unwrap();
            assert!(verdict.equal);
        }
    }

    #[test]
    fn least_action_empty_legal_sequence_passes() {
        let mut stack = ex3_shaped_stack(16);
        // (1,1) is already stable, so the empty stabilizing sequence works.
        let verdict = check_least_action(&[1, 1], &[], &[], &mut stack, &[1, 1]).unwrap();
        assert!(verdict.dominated);
    }

    #[test]
    fn least_action_guards_illegal_step() {
        let mut stack = ex3_shaped_stack(16);
        let err = check_least_action(&[0, 0], &[0], &[], &mut stack, &[1, 1]).unwrap_err();
        assert!(matches!(err, VerifyError::NotLegal { step: 0 }));
    }

    #[test]
    fn least_action_guards_non_stabilizing_sequence() {
        let mut stack = ex2_stack(64);
        // (3,3) with conserved total mass 6 > 2 can never be stabilized.
        let err = check_least_action(&[3, 3], &[], &[0, 1, 0], &mut stack, &[1, 1]).unwrap_err();
        assert!(matches!(err, VerifyError::NotStabilizing));
    }

    #[test]
    fn least_action_greedy_vs_padded_sequence() {
        let mut stack = ex3_shaped_stack(64);
        let greedy = greedy_legal_stabilize(&[3, 0], &mut stack, &[1, 1], 1000).unwrap();
        assert!(greedy.is_stable());
        // Pad the stabilizing witness with a cancelling illegal round trip
        // u -> v; the final configuration stays stable.
        let mut padded = greedy.sequence().to_vec();
        padded.push(0);
        padded.push(1);
        let (end, _) = apply_sequence(&[3, 0], &padded, &mut stack, &[1, 1]).unwrap();
        assert!(is_stable(&end.eta, &[1, 1]));
        let verdict =
            check_least_action(&[3, 0], greedy.sequence(), &padded, &mut stack, &[1, 1]).unwrap();
        assert!(verdict.dominated);
    }

    #[test]
    fn greedy_stable_input_returns_empty() {
        let mut stack = ex2_stack(4);
        let outcome = greedy_legal_stabilize(&[1, 0], &mut stack, &[1, 1], 100).unwrap();
        assert_eq!(outcome, StabilizeOutcome::Stable(vec![]));
    }

    #[test]
    fn greedy_exhausts_on_conserved_overload() {
        let mut stack = ex2_stack(20_000);
        let outcome = greedy_legal_stabilize(&[2, 2], &mut stack, &[1, 1], 10_000).unwrap();
        assert!(matches!(outcome, StabilizeOutcome::Exhausted(_)));
    }

    #[test]
    fn greedy_all_kill_stack_stabilizes_quickly() {
        let kill = MaterializedStack::repeat(&[vec![-1, 0], vec![1, -1]], 8);
        let mut stack = kill;
        let outcome = greedy_legal_stabilize(&[3, 0], &mut stack, &[1, 1], 100).unwrap();
        match outcome {
            StabilizeOutcome::Stable(seq) => assert!(seq.len() <= 3),
            other => panic!("expected stable, got {other:?}"),
        }
    }

    #[test]
    fn stack_document_round_trip() {
        let vertices = vec!["u".to_string(), "v".to_string()];
        let doc = r#"{"u": [[-1, 1], [-1, 0]], "v": [[1, -1]]}"#;
        let mut stack = MaterializedStack::parse_document(doc, &vertices).unwrap();
        assert_eq!(stack.instruction(0, 1).unwrap().delta, vec![-1, 0]);
        assert_eq!(stack.instruction(1, 0).unwrap().delta, vec![1, -1]);
        assert!(stack.instruction(1, 1).is_err());
        assert!(MaterializedStack::parse_document(r#"{"w": []}"#, &vertices).is_err());
    }

    proptest! {
        /// Concatenation additivity of the odometer.
        #[test]
        fn odometer_concatenation_additive(
            s1 in proptest::collection::vec(0usize..4, 0..30),
            s2 in proptest::collection::vec(0usize..4, 0..30),
        ) {
            let mut joined = s1.clone();
            joined.extend_from_slice(&s2);
            let lhs = odometer(&joined, 4);
            let rhs: Vec<u64> = odometer(&s1, 4)
                .iter()
                .zip(odometer(&s2, 4))
                .map(|(a, b)| a + b)
                .collect();
            prop_assert_eq!(lhs, rhs);
        }

        /// The final configuration equals eta0 plus the column prefix sums
        /// given by the odometer, independent of order.
        #[test]
        fn final_state_matches_odometer_closed_form(
            seq in proptest::collection::vec(0usize..3, 0..40),
            eta0 in proptest::collection::vec(-5i64..10, 3),
            seed in 0u64..1000,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let columns: Vec<Vec<Instruction>> = (0..3)
                .map(|_| {
                    (0..40)
                        .map(|_| Instruction {
                            delta: (0..3).map(|_| rng.random_range(-3i64..4)).collect(),
                        })
                        .collect()
                })
                .collect();
            let mut stack = MaterializedStack::new(columns.clone());
            let (state, _) = apply_sequence(&eta0, &seq, &mut stack, &[0, 0, 0]).unwrap();
            let m = odometer(&seq, 3);
            let mut expected = eta0.clone();
            for (v, count) in m.iter().enumerate() {
                for instr in &columns[v][..*count as usize] {
                    for (e, d) in expected.iter_mut().zip(&instr.delta) {
                        *e += d;
                    }
                }
            }
            prop_assert_eq!(state.eta, expected);
            prop_assert_eq!(state.h, m);
        }
    }

    #[test]
    fn monotonicity_under_dominated_odometers() {
        // Random instances of the comparison: equal counts at a pinned vertex,
        // dominated counts elsewhere, instructions nonnegative off their own
        // column. The pinned coordinate of the final configuration is ordered.
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..200 {
            let n = rng.random_range(2..5);
            let len = 24;
            let columns: Vec<Vec<Instruction>> = (0..n)
                .map(|v| {
                    (0..len)
                        .map(|_| Instruction {
                            delta: (0..n)
                                .map(|w| {
                                    if w == v {
                                        rng.random_range(-3i64..2)
                                    } else {
                                        rng.random_range(0i64..3)
                                    }
                                })
                                .collect(),
                        })
                        .collect()
                })
                .collect();
            let mut stack = MaterializedStack::new(columns);
            let pinned = rng.random_range(0..n);
            let base: Vec<u64> = (0..n).map(|_| rng.random_range(0..5)).collect();
            let extra: Vec<u64> = (0..n)
                .map(|v| {
                    if v == pinned {
                        0
                    } else {
                        rng.random_range(0..4)
                    }
                })
                .collect();
            let seq_small = sequence_for_odometer(&base, &mut rng);
            let dominated: Vec<u64> = base.iter().zip(&extra).map(|(a, b)| a + b).collect();
            let seq_big = sequence_for_odometer(&dominated, &mut rng);
            let eta0: Vec<i64> = (0..n).map(|_| rng.random_range(-4i64..8)).collect();
            let zeros = vec![0i64; n];
            let (small, _) = apply_sequence(&eta0, &seq_small, &mut stack, &zeros).unwrap();
            let (big, _) = apply_sequence(&eta0, &seq_big, &mut stack, &zeros).unwrap();
            assert!(
                small.eta[pinned] <= big.eta[pinned],
                "monotonicity violated at pinned vertex"
            );
        }
    }

    fn sequence_for_odometer(m: &[u64], rng: &mut ChaCha8Rng) -> Vec<usize> {
        let mut seq = Vec::new();
        for (v, count) in m.iter().enumerate() {
            for _ in 0..*count {
                seq.push(v);
            }
        }
        seq.shuffle(rng);
        seq
    }
}
