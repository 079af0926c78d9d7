//! Manifest assembly, output digests, and JSON argument decoding.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::Serialize;
use serde_json::Value;

use abelnet::model::NetworkSpec;

/// Exit taxonomy: `Input` maps to exit code 2, `Domain` to exit code 1.
#[derive(Debug)]
pub enum CliError {
    Input(String),
    Domain(String),
}

impl CliError {
    pub fn code(&self) -> u8 {
        match self {
            CliError::Input(_) => 2,
            CliError::Domain(_) => 1,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            CliError::Input(m) | CliError::Domain(m) => m,
        }
    }
}

pub fn input_err(msg: impl std::fmt::Display) -> CliError {
    CliError::Input(msg.to_string())
}

pub fn domain_err(msg: impl std::fmt::Display) -> CliError {
    CliError::Domain(msg.to_string())
}

/// Record of one invocation: command, inputs, parameters, tool version, and
/// the digest of the primary output. Re-running an identical manifest
/// reproduces the digest byte for byte.
#[derive(Debug, Serialize)]
pub struct Manifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: &'static str,
    pub spec: String,
    pub parameters: BTreeMap<String, Value>,
    pub output_digest: String,
}

impl Manifest {
    pub fn new(command: &'static str, spec: &str) -> Self {
        Self {
            tool: "abelnet",
            version: env!("CARGO_PKG_VERSION"),
            command,
            spec: spec.to_string(),
            parameters: BTreeMap::new(),
            output_digest: String::new(),
        }
    }

    pub fn param(mut self, key: &str, value: impl Into<Value>) -> Self {
        self.parameters.insert(key.to_string(), value.into());
        self
    }

    pub fn finish(mut self, output: &[u8]) -> Self {
        self.output_digest = format!("{:016x}", fnv1a(output));
        self
    }
}

/// FNV-1a 64-bit digest of the output bytes.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        hash ^= u64::from(*b);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

/// Write the primary output (stdout or --out) and the manifest (stderr).
pub fn emit(output: &str, out_path: Option<&Path>, manifest: Manifest) -> Result<(), CliError> {
    let manifest = manifest.finish(output.as_bytes());
    match out_path {
        Some(path) => fs::write(path, output)
            .map_err(|e| input_err(format!("cannot write {}: {e}", path.display())))?,
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout
                .write_all(output.as_bytes())
                .map_err(|e| input_err(format!("cannot write stdout: {e}")))?;
        }
    }
    let line = serde_json::to_string(&manifest).expect("manifest serialization");
    eprintln!("{line}");
    Ok(())
}

pub fn read_spec(path: &Path) -> Result<NetworkSpec, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| input_err(format!("cannot read {}: {e}", path.display())))?;
    NetworkSpec::parse_document(&text).map_err(input_err)
}

/// Decode `--eta` JSON: an object of vertex name to integer count; omitted
/// vertices hold 0.
pub fn parse_eta(spec: &NetworkSpec, text: &str) -> Result<Vec<i64>, CliError> {
    let value: Value =
        serde_json::from_str(text).map_err(|e| input_err(format!("invalid --eta JSON: {e}")))?;
    let map = value
        .as_object()
        .ok_or_else(|| input_err("--eta must be a JSON object"))?;
    let mut eta = vec![0i64; spec.vertex_count()];
    for (name, x) in map {
        let v = spec
            .vertex_index(name)
            .ok_or_else(|| input_err(format!("--eta names unknown vertex `{name}`")))?;
        eta[v] = x
            .as_i64()
            .ok_or_else(|| input_err(format!("--eta for `{name}` must be an integer")))?;
        if eta[v] < 0 {
            return Err(input_err(format!("--eta for `{name}` must be nonnegative")));
        }
    }
    Ok(eta)
}

/// Decode `--q0` JSON: an object of vertex name to state name; omitted
/// vertices start in their first declared state.
pub fn parse_q0(spec: &NetworkSpec, text: Option<&str>) -> Result<Vec<usize>, CliError> {
    let mut q0 = vec![0usize; spec.vertex_count()];
    let Some(text) = text else {
        return Ok(q0);
    };
    let value: Value =
        serde_json::from_str(text).map_err(|e| input_err(format!("invalid --q0 JSON: {e}")))?;
    let map = value
        .as_object()
        .ok_or_else(|| input_err("--q0 must be a JSON object"))?;
    for (name, state) in map {
        let v = spec
            .vertex_index(name)
            .ok_or_else(|| input_err(format!("--q0 names unknown vertex `{name}`")))?;
        let state = state
            .as_str()
            .ok_or_else(|| input_err(format!("--q0 for `{name}` must be a state name")))?;
        q0[v] = spec
            .env(v)
            .state_index(state)
            .ok_or_else(|| input_err(format!("unknown state `{state}` at `{name}`")))?;
    }
    Ok(q0)
}

pub fn eta_object(spec: &NetworkSpec, eta: &[i64]) -> Value {
    let mut map = serde_json::Map::new();
    for (v, e) in eta.iter().enumerate() {
        map.insert(spec.vertex_name(v).to_string(), Value::from(*e));
    }
    Value::Object(map)
}

pub fn q_object(spec: &NetworkSpec, q: &[usize]) -> Value {
    let mut map = serde_json::Map::new();
    for (v, s) in q.iter().enumerate() {
        map.insert(
            spec.vertex_name(v).to_string(),
            Value::from(spec.env(v).states()[*s].clone()),
        );
    }
    Value::Object(map)
}

/// Evaluate a template expression affine in `$KNOB`: `$KNOB`, `c`,
/// `c*$KNOB`, `c1+c2*$KNOB`, or `c1-c2*$KNOB` (whitespace ignored, plain
/// decimal constants).
pub fn eval_knob_expr(expr: &str, knob: f64) -> Option<f64> {
    let s: String = expr.chars().filter(|c| !c.is_whitespace()).collect();
    let idx = s.find("$KNOB")?;
    if idx + "$KNOB".len() != s.len() {
        return None;
    }
    let prefix = &s[..idx];
    if prefix.is_empty() {
        return Some(knob);
    }
    // Split an optional leading constant from the coefficient at the last
    // sign that is not the leading sign of the constant itself.
    let (constant, signed_coef) = match prefix[1..].rfind(['+', '-']) {
        Some(pos0) => {
            let pos = pos0 + 1;
            let constant: f64 = prefix[..pos].parse().ok()?;
            let sign = if s.as_bytes()[pos] == b'-' { -1.0 } else { 1.0 };
            let coef_part = &prefix[pos + 1..];
            let coef = parse_coef(coef_part)?;
            (constant, sign * coef)
        }
        None => (0.0, parse_coef(prefix)?),
    };
    Some(constant + signed_coef * knob)
}

fn parse_coef(part: &str) -> Option<f64> {
    match part {
        "" | "+" => Some(1.0),
        "-" => Some(-1.0),
        _ => {
            let body = part.strip_suffix('*')?;
            match body {
                "" | "+" => Some(1.0),
                "-" => Some(-1.0),
                _ => body.parse().ok(),
            }
        }
    }
}

/// Substitute every string containing `$KNOB` in the template by the
/// evaluated number; all other values pass through.
pub fn substitute_knob(value: &Value, knob: f64) -> Result<Value, CliError> {
    Ok(match value {
        Value::String(s) if s.contains("$KNOB") => {
            let x = eval_knob_expr(s, knob)
                .ok_or_else(|| input_err(format!("bad template expression `{s}`")))?;
            Value::from(x)
        }
        Value::Array(items) => Value::Array(
            items
                .iter()
                .map(|v| substitute_knob(v, knob))
                .collect::<Result<_, _>>()?,
        ),
        Value::Object(map) => {
            let mut out = serde_json::Map::new();
            for (k, v) in map {
                out.insert(k.clone(), substitute_knob(v, knob)?);
            }
            Value::Object(out)
        }
        other => other.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn knob_expressions_evaluate() {
        assert_eq!(eval_knob_expr("$KNOB", 2.0), Some(2.0));
        assert_eq!(eval_knob_expr("0.25*$KNOB", 2.0), Some(0.5));
        assert_eq!(eval_knob_expr("1-0.25*$KNOB", 2.0), Some(0.5));
        assert_eq!(eval_knob_expr("1+0.5*$KNOB", 2.0), Some(2.0));
        assert_eq!(eval_knob_expr(" 1 - 0.25 * $KNOB ", 0.5), Some(0.875));
        assert_eq!(eval_knob_expr("-$KNOB", 2.0), Some(-2.0));
        assert_eq!(eval_knob_expr("$KNOB+1", 2.0), None);
        assert_eq!(eval_knob_expr("nope", 2.0), None);
    }

    #[test]
    fn digest_is_stable() {
        assert_eq!(fnv1a(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a(b"abelnet"), fnv1a(b"abelnet"));
        assert_ne!(fnv1a(b"a"), fnv1a(b"b"));
    }
}
