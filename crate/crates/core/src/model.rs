//! Network declaration: graph, environment chains, toppling rules, threshold,
//! and the expected toppling matrix derived from them.
//!
//! A network is declared in a single JSON document (see [`NetworkSpec::parse_document`]
//! for the schema) and resolved into index-based form: vertices and environment
//! states are addressed by their declaration order, which is canonical for every
//! matrix and vector produced by this crate.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::Serialize;
use serde_json::{Map, Value};
use thiserror::Error;

use crate::linalg::{bool_mat_mul, reachability};
use crate::spectral::{self, ChainError};

/// Tolerance for probability-row and atom-probability sums.
pub const PROB_SUM_TOL: f64 = 1e-12;

/// Errors raised while parsing a network document. These map to the CLI's
/// input-error exit code; domain validation failures (MOLI, BFB, chain
/// primitivity) are reported by the `validate_*` operations instead.
#[derive(Debug, Error)]
pub enum SpecError {
    #[error("schema error: {0}")]
    Schema(String),
    #[error("unknown reference: {0}")]
    Reference(String),
    #[error("duplicate declaration: {0}")]
    Duplicate(String),
}

#[derive(Debug, Error)]
pub enum RuleLookupError {
    #[error("no toppling rule for vertex `{vertex}` in state `{state}`")]
    UnknownRule { vertex: String, state: String },
}

/// Failure while assembling the expected toppling matrix: one of the
/// environment chains has no computable stationary distribution.
#[derive(Debug, Error)]
pub enum MatrixError {
    #[error("environment chain at `{vertex}`: {source}")]
    Environment {
        vertex: String,
        #[source]
        source: ChainError,
    },
}

/// One atom of a toppling distribution: an integer displacement over all
/// vertices together with its probability.
#[derive(Debug, Clone, PartialEq)]
pub struct Atom {
    /// Displacement indexed by vertex declaration order.
    pub delta: Vec<i64>,
    pub prob: f64,
}

/// Finite-support probability distribution over integer displacement vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct TopplingDistribution {
    pub atoms: Vec<Atom>,
}

impl TopplingDistribution {
    /// Expectation of the displacement vector.
    pub fn mean(&self, n_vertices: usize) -> Vec<f64> {
        let mut mu = vec![0.0; n_vertices];
        for atom in &self.atoms {
            for (m, d) in mu.iter_mut().zip(&atom.delta) {
                *m += atom.prob * *d as f64;
            }
        }
        mu
    }
}

/// Per-vertex Markovian environment: an ordered state list and a
/// row-stochastic transition matrix over it.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvironmentSpec {
    states: Vec<String>,
    rows: Vec<Vec<f64>>,
}

impl EnvironmentSpec {
    pub fn new(states: Vec<String>, rows: Vec<Vec<f64>>) -> Result<Self, SpecError> {
        if states.is_empty() {
            return Err(SpecError::Schema("environment has no states".into()));
        }
        let mut seen = BTreeSet::new();
        for s in &states {
            if !seen.insert(s.clone()) {
                return Err(SpecError::Duplicate(format!("environment state `{s}`")));
            }
        }
        let n = states.len();
        if rows.len() != n || rows.iter().any(|r| r.len() != n) {
            return Err(SpecError::Schema(format!(
                "transition matrix must be {n}x{n}"
            )));
        }
        for (i, row) in rows.iter().enumerate() {
            if row.iter().any(|p| !p.is_finite() || *p < 0.0) {
                return Err(SpecError::Schema(format!(
                    "transition row {i} has a negative or non-finite entry"
                )));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > PROB_SUM_TOL {
                return Err(SpecError::Schema(format!(
                    "transition row {i} sums to {sum}, outside tolerance {PROB_SUM_TOL}"
                )));
            }
        }
        Ok(Self { states, rows })
    }

    pub fn states(&self) -> &[String] {
        &self.states
    }

    pub fn state_count(&self) -> usize {
        self.states.len()
    }

    pub fn state_index(&self, name: &str) -> Option<usize> {
        self.states.iter().position(|s| s == name)
    }

    /// Transition probabilities out of state `from`, in state order.
    pub fn row(&self, from: usize) -> &[f64] {
        &self.rows[from]
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }
}

/// A fully resolved network declaration.
///
/// Immutable after construction; vertex and state indices follow the
/// declaration order of the source document.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkSpec {
    vertices: Vec<String>,
    vertex_index: HashMap<String, usize>,
    edges: BTreeSet<(usize, usize)>,
    threshold: Vec<i64>,
    envs: Vec<EnvironmentSpec>,
    /// rules[v][s] is the toppling distribution for vertex v in state s.
    rules: Vec<Vec<TopplingDistribution>>,
}

impl NetworkSpec {
    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    pub fn vertices(&self) -> &[String] {
        &self.vertices
    }

    pub fn vertex_name(&self, v: usize) -> &str {
        &self.vertices[v]
    }

    pub fn vertex_index(&self, name: &str) -> Option<usize> {
        self.vertex_index.get(name).copied()
    }

    pub fn edges(&self) -> &BTreeSet<(usize, usize)> {
        &self.edges
    }

    /// Threshold t, indexed by vertex; entries are nonnegative.
    pub fn threshold(&self) -> &[i64] {
        &self.threshold
    }

    pub fn env(&self, v: usize) -> &EnvironmentSpec {
        &self.envs[v]
    }

    pub fn rule(&self, v: usize, s: usize) -> &TopplingDistribution {
        &self.rules[v][s]
    }

    /// Uniform bound K = max_v t(v) on the per-toppling mass reduction.
    pub fn mass_bound(&self) -> i64 {
        self.threshold.iter().copied().max().unwrap_or(0)
    }

    /// Parse a network document. Top-level keys: `vertices`, `edges`,
    /// `threshold`, `environments`, `rules`; rules are keyed `"vertex/state"`,
    /// deltas are objects mapping vertex names to integers with omitted
    /// coordinates read as 0.
    pub fn parse_document(text: &str) -> Result<Self, SpecError> {
        let doc: Value = serde_json::from_str(text)
            .map_err(|e| SpecError::Schema(format!("invalid JSON: {e}")))?;
        Self::from_value(&doc)
    }

    pub fn from_value(doc: &Value) -> Result<Self, SpecError> {
        let root = doc
            .as_object()
            .ok_or_else(|| SpecError::Schema("document root must be an object".into()))?;
        for key in ["vertices", "edges", "threshold", "environments", "rules"] {
            if !root.contains_key(key) {
                return Err(SpecError::Schema(format!("missing field `{key}`")));
            }
        }

        // Vertices: unique, declaration order is canonical.
        let vertices: Vec<String> = as_array(&root["vertices"], "vertices")?
            .iter()
            .map(|v| as_string(v, "vertices entry"))
            .collect::<Result<_, _>>()?;
        if vertices.is_empty() {
            return Err(SpecError::Schema("`vertices` must be nonempty".into()));
        }
        let mut vertex_index = HashMap::new();
        for (i, name) in vertices.iter().enumerate() {
            if name.contains('/') {
                return Err(SpecError::Schema(format!(
                    "vertex name `{name}` must not contain '/'"
                )));
            }
            if vertex_index.insert(name.clone(), i).is_some() {
                return Err(SpecError::Duplicate(format!("vertex `{name}`")));
            }
        }
        let n = vertices.len();

        // Edges.
        let mut edges = BTreeSet::new();
        for e in as_array(&root["edges"], "edges")? {
            let pair = as_array(e, "edge")?;
            if pair.len() != 2 {
                return Err(SpecError::Schema("edge must be a [from, to] pair".into()));
            }
            let from = lookup(&vertex_index, &as_string(&pair[0], "edge endpoint")?)?;
            let to = lookup(&vertex_index, &as_string(&pair[1], "edge endpoint")?)?;
            if !edges.insert((from, to)) {
                return Err(SpecError::Duplicate(format!(
                    "edge [{}, {}]",
                    vertices[from], vertices[to]
                )));
            }
        }

        // Threshold: required for every vertex, nonnegative integers.
        let threshold_map = as_object(&root["threshold"], "threshold")?;
        for key in threshold_map.keys() {
            lookup(&vertex_index, key)?;
        }
        let mut threshold = Vec::with_capacity(n);
        for name in &vertices {
            let value = threshold_map.get(name).ok_or_else(|| {
                SpecError::Schema(format!("missing threshold for vertex `{name}`"))
            })?;
            let t = value.as_i64().ok_or_else(|| {
                SpecError::Schema(format!("threshold for `{name}` must be an integer"))
            })?;
            if t < 0 {
                return Err(SpecError::Schema(format!(
                    "threshold for `{name}` must be nonnegative"
                )));
            }
            threshold.push(t);
        }

        // Environments.
        let env_map = as_object(&root["environments"], "environments")?;
        for key in env_map.keys() {
            lookup(&vertex_index, key)?;
        }
        let mut envs = Vec::with_capacity(n);
        for name in &vertices {
            let value = env_map.get(name).ok_or_else(|| {
                SpecError::Schema(format!("missing environment for vertex `{name}`"))
            })?;
            let obj = as_object(value, "environment")?;
            let states: Vec<String> = as_array(
                obj.get("states").ok_or_else(|| {
                    SpecError::Schema(format!("environment for `{name}` missing `states`"))
                })?,
                "states",
            )?
            .iter()
            .map(|s| as_string(s, "state name"))
            .collect::<Result<_, _>>()?;
            for s in &states {
                if s.contains('/') {
                    return Err(SpecError::Schema(format!(
                        "state name `{s}` must not contain '/'"
                    )));
                }
            }
            let flat: Vec<f64> = as_array(
                obj.get("transition").ok_or_else(|| {
                    SpecError::Schema(format!("environment for `{name}` missing `transition`"))
                })?,
                "transition",
            )?
            .iter()
            .map(|x| as_number(x, "transition entry"))
            .collect::<Result<_, _>>()?;
            let k = states.len();
            if flat.len() != k * k {
                return Err(SpecError::Schema(format!(
                    "environment for `{name}`: transition must have {} entries (row-major {k}x{k}), got {}",
                    k * k,
                    flat.len()
                )));
            }
            let rows: Vec<Vec<f64>> = flat.chunks(k).map(|c| c.to_vec()).collect();
            let env = EnvironmentSpec::new(states, rows).map_err(|e| match e {
                SpecError::Schema(msg) => {
                    SpecError::Schema(format!("environment for `{name}`: {msg}"))
                }
                other => other,
            })?;
            envs.push(env);
        }

        // Rules: exactly one distribution per (vertex, state).
        let rules_map = as_object(&root["rules"], "rules")?;
        let mut rules: Vec<Vec<Option<TopplingDistribution>>> =
            envs.iter().map(|e| vec![None; e.state_count()]).collect();
        for (key, value) in rules_map {
            let (v_name, s_name) = key.split_once('/').ok_or_else(|| {
                SpecError::Schema(format!("rule key `{key}` must have the form vertex/state"))
            })?;
            let v = lookup(&vertex_index, v_name)?;
            let s = envs[v].state_index(s_name).ok_or_else(|| {
                SpecError::Reference(format!("rule `{key}` names unknown state `{s_name}`"))
            })?;
            let atoms_raw = as_array(value, "rule atoms")?;
            if atoms_raw.is_empty() {
                return Err(SpecError::Schema(format!("rule `{key}` has no atoms")));
            }
            let mut atoms = Vec::with_capacity(atoms_raw.len());
            for (i, atom) in atoms_raw.iter().enumerate() {
                let obj = as_object(atom, "atom")?;
                let prob_value = obj.get("prob").ok_or_else(|| {
                    SpecError::Schema(format!("rule `{key}` atom {i} missing `prob`"))
                })?;
                let prob = as_number(prob_value, "prob")?;
                if !prob.is_finite() || prob <= 0.0 {
                    return Err(SpecError::Schema(format!(
                        "rule `{key}` atom {i}: prob must be positive, got {prob}"
                    )));
                }
                let mut delta = vec![0i64; n];
                if let Some(d) = obj.get("delta") {
                    for (coord, x) in as_object(d, "delta")? {
                        let w = lookup(&vertex_index, coord)?;
                        delta[w] = x.as_i64().ok_or_else(|| {
                            SpecError::Schema(format!(
                                "rule `{key}` atom {i}: delta for `{coord}` must be an integer"
                            ))
                        })?;
                    }
                }
                atoms.push(Atom { delta, prob });
            }
            let total: f64 = atoms.iter().map(|a| a.prob).sum();
            if (total - 1.0).abs() > PROB_SUM_TOL {
                return Err(SpecError::Schema(format!(
                    "rule `{key}`: atom probabilities sum to {total}, outside tolerance {PROB_SUM_TOL}"
                )));
            }
            if rules[v][s]
                .replace(TopplingDistribution { atoms })
                .is_some()
            {
                return Err(SpecError::Duplicate(format!("rule `{key}`")));
            }
        }
        let mut resolved = Vec::with_capacity(n);
        for (v, per_state) in rules.into_iter().enumerate() {
            let mut out = Vec::with_capacity(per_state.len());
            for (s, rule) in per_state.into_iter().enumerate() {
                match rule {
                    Some(r) => out.push(r),
                    None => {
                        return Err(SpecError::Schema(format!(
                            "missing rule for `{}/{}`",
                            vertices[v],
                            envs[v].states()[s]
                        )))
                    }
                }
            }
            resolved.push(out);
        }

        Ok(NetworkSpec {
            vertices,
            vertex_index,
            edges,
            threshold,
            envs,
            rules: resolved,
        })
    }

    /// Emit the canonical document form; `parse_document` of the emitted text
    /// reproduces an equal `NetworkSpec`.
    pub fn to_document(&self) -> Value {
        let mut root = Map::new();
        root.insert(
            "vertices".into(),
            Value::Array(
                self.vertices
                    .iter()
                    .map(|v| Value::String(v.clone()))
                    .collect(),
            ),
        );
        root.insert(
            "edges".into(),
            Value::Array(
                self.edges
                    .iter()
                    .map(|(a, b)| {
                        Value::Array(vec![
                            Value::String(self.vertices[*a].clone()),
                            Value::String(self.vertices[*b].clone()),
                        ])
                    })
                    .collect(),
            ),
        );
        let mut threshold = Map::new();
        for (name, t) in self.vertices.iter().zip(&self.threshold) {
            threshold.insert(name.clone(), Value::from(*t));
        }
        root.insert("threshold".into(), Value::Object(threshold));
        let mut envs = Map::new();
        for (name, env) in self.vertices.iter().zip(&self.envs) {
            let mut obj = Map::new();
            obj.insert(
                "states".into(),
                Value::Array(
                    env.states()
                        .iter()
                        .map(|s| Value::String(s.clone()))
                        .collect(),
                ),
            );
            obj.insert(
                "transition".into(),
                Value::Array(
                    env.rows()
                        .iter()
                        .flat_map(|row| row.iter().map(|p| Value::from(*p)))
                        .collect(),
                ),
            );
            envs.insert(name.clone(), Value::Object(obj));
        }
        root.insert("environments".into(), Value::Object(envs));
        let mut rules = Map::new();
        for (v, per_state) in self.rules.iter().enumerate() {
            for (s, dist) in per_state.iter().enumerate() {
                let key = format!("{}/{}", self.vertices[v], self.envs[v].states()[s]);
                let atoms: Vec<Value> = dist
                    .atoms
                    .iter()
                    .map(|atom| {
                        let mut delta = Map::new();
                        for (w, d) in atom.delta.iter().enumerate() {
                            if *d != 0 {
                                delta.insert(self.vertices[w].clone(), Value::from(*d));
                            }
                        }
                        let mut obj = Map::new();
                        obj.insert("delta".into(), Value::Object(delta));
                        obj.insert("prob".into(), Value::from(atom.prob));
                        Value::Object(obj)
                    })
                    .collect();
                rules.insert(key, Value::Array(atoms));
            }
        }
        root.insert("rules".into(), Value::Object(rules));
        Value::Object(root)
    }

    pub fn to_document_string(&self) -> String {
        serde_json::to_string_pretty(&self.to_document()).expect("document serialization")
    }
}

fn as_array<'a>(v: &'a Value, what: &str) -> Result<&'a Vec<Value>, SpecError> {
    v.as_array()
        .ok_or_else(|| SpecError::Schema(format!("`{what}` must be an array")))
}

fn as_object<'a>(v: &'a Value, what: &str) -> Result<&'a Map<String, Value>, SpecError> {
    v.as_object()
        .ok_or_else(|| SpecError::Schema(format!("`{what}` must be an object")))
}

fn as_string(v: &Value, what: &str) -> Result<String, SpecError> {
    v.as_str()
        .map(str::to_owned)
        .ok_or_else(|| SpecError::Schema(format!("{what} must be a string")))
}

fn as_number(v: &Value, what: &str) -> Result<f64, SpecError> {
    v.as_f64()
        .ok_or_else(|| SpecError::Schema(format!("{what} must be a number")))
}

fn lookup(index: &HashMap<String, usize>, name: &str) -> Result<usize, SpecError> {
    index
        .get(name)
        .copied()
        .ok_or_else(|| SpecError::Reference(format!("unknown vertex `{name}`")))
}

/// A MOLI violation: an atom that removes mass at a coordinate other than the
/// toppled vertex.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MoliViolation {
    pub vertex: String,
    pub state: String,
    pub atom: usize,
    pub coordinate: String,
    pub delta: i64,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct MoliReport {
    pub violations: Vec<MoliViolation>,
}

impl MoliReport {
    pub fn is_empty(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Scan every atom of every rule for mass removal away from the owner vertex.
pub fn validate_moli(spec: &NetworkSpec) -> MoliReport {
    let mut violations = Vec::new();
    for v in 0..spec.vertex_count() {
        for s in 0..spec.env(v).state_count() {
            for (i, atom) in spec.rule(v, s).atoms.iter().enumerate() {
                for (w, d) in atom.delta.iter().enumerate() {
                    if w != v && *d < 0 {
                        violations.push(MoliViolation {
                            vertex: spec.vertex_name(v).to_owned(),
                            state: spec.env(v).states()[s].clone(),
                            atom: i,
                            coordinate: spec.vertex_name(w).to_owned(),
                            delta: *d,
                        });
                    }
                }
            }
        }
    }
    MoliReport { violations }
}

/// A BFB violation: an atom removing more mass at its owner than the threshold allows.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BfbViolation {
    pub vertex: String,
    pub state: String,
    pub atom: usize,
    pub removal: i64,
    pub threshold: i64,
}

#[derive(Debug, Clone, Serialize)]
pub struct BfbReport {
    pub violations: Vec<BfbViolation>,
    /// K = max_v t(v).
    pub mass_bound: i64,
}

impl BfbReport {
    pub fn is_empty(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Scan every atom for `-delta(v) > t(v)` at its owner vertex.
pub fn validate_bfb(spec: &NetworkSpec) -> BfbReport {
    let mut violations = Vec::new();
    for v in 0..spec.vertex_count() {
        let t = spec.threshold()[v];
        for s in 0..spec.env(v).state_count() {
            for (i, atom) in spec.rule(v, s).atoms.iter().enumerate() {
                let removal = -atom.delta[v];
                if removal > t {
                    violations.push(BfbViolation {
                        vertex: spec.vertex_name(v).to_owned(),
                        state: spec.env(v).states()[s].clone(),
                        atom: i,
                        removal,
                        threshold: t,
                    });
                }
            }
        }
    }
    BfbReport {
        violations,
        mass_bound: spec.mass_bound(),
    }
}

/// Expected displacement of a single toppling at `vertex` in `state`.
pub fn expected_step(
    spec: &NetworkSpec,
    vertex: &str,
    state: &str,
) -> Result<Vec<f64>, RuleLookupError> {
    let v = spec
        .vertex_index(vertex)
        .ok_or_else(|| RuleLookupError::UnknownRule {
            vertex: vertex.to_owned(),
            state: state.to_owned(),
        })?;
    let s = spec
        .env(v)
        .state_index(state)
        .ok_or_else(|| RuleLookupError::UnknownRule {
            vertex: vertex.to_owned(),
            state: state.to_owned(),
        })?;
    Ok(spec.rule(v, s).mean(spec.vertex_count()))
}

/// The expected toppling matrix together with its diagonal shift.
///
/// Row v and column w hold the expected mass added to w by one toppling at v,
/// averaged over the stationary environment at v.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ToppleMatrix {
    pub entries: Vec<Vec<f64>>,
    pub alpha: f64,
    /// K = max_v t(v).
    pub diag_bound: i64,
}

impl ToppleMatrix {
    pub fn dim(&self) -> usize {
        self.entries.len()
    }

    /// M + alpha I.
    pub fn shifted(&self) -> Vec<Vec<f64>> {
        let mut out = self.entries.clone();
        for (v, row) in out.iter_mut().enumerate() {
            row[v] += self.alpha;
        }
        out
    }
}

/// Assemble the expected toppling matrix: entry (v, w) averages the expected
/// displacements over the stationary environment at v. The shift alpha is
/// `1 + max(0, max_v -M(v,v))`, which keeps the diagonal of M + alpha I
/// strictly positive and alpha >= 1; the classification parameter is
/// invariant under the choice of any valid shift.
pub fn toppling_matrix(spec: &NetworkSpec) -> Result<ToppleMatrix, MatrixError> {
    let n = spec.vertex_count();
    let mut entries = vec![vec![0.0; n]; n];
    for v in 0..n {
        let pi = spectral::stationary_distribution(spec.env(v)).map_err(|source| {
            MatrixError::Environment {
                vertex: spec.vertex_name(v).to_owned(),
                source,
            }
        })?;
        for s in 0..spec.env(v).state_count() {
            let mu = spec.rule(v, s).mean(n);
            for w in 0..n {
                entries[v][w] += pi[s] * mu[w];
            }
        }
    }
    let max_neg_diag = (0..n)
        .map(|v| -entries[v][v])
        .fold(f64::NEG_INFINITY, f64::max);
    let alpha = 1.0 + max_neg_diag.max(0.0);
    Ok(ToppleMatrix {
        entries,
        alpha,
        diag_bound: spec.mass_bound(),
    })
}

/// Outcome of the uniform-exponent irreducibility check, with plain strong
/// connectivity reported alongside as a diagnostic.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IrrReport {
    /// Least k with the off-diagonal boolean pattern of (M - Diag M)^k
    /// positive everywhere off the diagonal, if one exists within the bound.
    pub uniform_exponent: Option<u64>,
    /// On failure, an ordered vertex pair missing at the best exponent tried.
    pub witness: Option<(String, String)>,
    pub strongly_connected: bool,
}

impl IrrReport {
    pub fn holds(&self) -> bool {
        self.uniform_exponent.is_some()
    }
}

/// Check the uniform-exponent communication condition on the off-diagonal
/// pattern of M, searching k up to the Wielandt bound (n-1)^2 + 1.
pub fn validate_irr(spec: &NetworkSpec, tm: &ToppleMatrix) -> IrrReport {
    let n = tm.dim();
    let pattern: Vec<Vec<bool>> = (0..n)
        .map(|v| (0..n).map(|w| v != w && tm.entries[v][w] > 0.0).collect())
        .collect();
    let strongly_connected = is_strongly_connected(&pattern, n);
    if n == 1 {
        return IrrReport {
            uniform_exponent: Some(0),
            witness: None,
            strongly_connected,
        };
    }
    let bound = (n - 1) * (n - 1) + 1;
    let mut power = pattern.clone();
    let mut best_missing: Option<(usize, usize)> = None;
    let mut best_positive = 0usize;
    for k in 1..=bound {
        let mut positive = 0;
        let mut missing = None;
        for v in 0..n {
            for w in 0..n {
                if v == w {
                    continue;
                }
                if power[v][w] {
                    positive += 1;
                } else if missing.is_none() {
                    missing = Some((v, w));
                }
            }
        }
        if missing.is_none() {
            return IrrReport {
                uniform_exponent: Some(k as u64),
                witness: None,
                strongly_connected,
            };
        }
        if positive >= best_positive {
            best_positive = positive;
            best_missing = missing;
        }
        power = bool_mat_mul(&power, &pattern);
    }
    let witness = best_missing.map(|(v, w)| {
        (
            spec.vertex_name(v).to_owned(),
            spec.vertex_name(w).to_owned(),
        )
    });
    IrrReport {
        uniform_exponent: None,
        witness,
        strongly_connected,
    }
}

fn is_strongly_connected(pattern: &[Vec<bool>], n: usize) -> bool {
    if n <= 1 {
        return true;
    }
    let reach = reachability(pattern);
    (0..n).all(|i| (0..n).all(|j| reach[i][j]))
}

/// Rule-support coordinates that fall outside the declared edge set.
/// Advisory only: the dynamics never consult the edge list.
pub fn edge_support_warnings(spec: &NetworkSpec) -> Vec<String> {
    let mut warnings = Vec::new();
    let mut seen = BTreeSet::new();
    for v in 0..spec.vertex_count() {
        for s in 0..spec.env(v).state_count() {
            for atom in &spec.rule(v, s).atoms {
                for (w, d) in atom.delta.iter().enumerate() {
                    if w != v && *d != 0 && !spec.edges().contains(&(v, w)) && seen.insert((v, w)) {
                        warnings.push(format!(
                            "rule support at `{}/{}` reaches `{}` but edge [{}, {}] is not declared",
                            spec.vertex_name(v),
                            spec.env(v).states()[s],
                            spec.vertex_name(w),
                            spec.vertex_name(v),
                            spec.vertex_name(w),
                        ));
                    }
                }
            }
        }
    }
    warnings
}

/// Decode a global environment given per-vertex state names; omitted vertices
/// default to their first declared state.
pub fn global_env_from_names(
    spec: &NetworkSpec,
    names: &BTreeMap<String, String>,
) -> Result<Vec<usize>, SpecError> {
    let mut q = vec![0usize; spec.vertex_count()];
    for (name, state) in names {
        let v = spec
            .vertex_index(name)
            .ok_or_else(|| SpecError::Reference(format!("unknown vertex `{name}`")))?;
        q[v] = spec
            .env(v)
            .state_index(state)
            .ok_or_else(|| SpecError::Reference(format!("unknown state `{state}` at `{name}`")))?;
    }
    Ok(q)
}
