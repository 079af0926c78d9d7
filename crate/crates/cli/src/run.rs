//! Command implementations: each builds its primary output string, writes it
//! to stdout or --out, and emits a manifest line on stderr.

use std::path::Path;
use std::sync::Mutex;

use serde_json::{json, Value};

use abelnet::conserved::{detect, unstable_initial_state, verify_conserved, DetectionResult};
use abelnet::dynamics::{run_legal, Configuration, RngStream};
use abelnet::model::{
    edge_support_warnings, toppling_matrix, validate_bfb, validate_irr, validate_moli, BfbReport,
    IrrReport, MoliReport, NetworkSpec, ToppleMatrix,
};
use abelnet::spectral::{
    check_primitive, classify, criticality, stationary_distribution, Primitivity, RegimeTag,
    SpectralReport,
};
use abelnet::walk::{
    drift_report, env_decode, excursion_sums_check, run_walk, wilson_interval, ExcursionRecord,
};

use crate::io::{
    domain_err, emit, eta_object, input_err, parse_eta, parse_q0, q_object, read_spec,
    substitute_knob, CliError, Manifest,
};

/// Excursions per fixed walk batch; batches map to RNG streams, so results do
/// not depend on the worker count.
const WALK_BATCH: u64 = 512;

struct ValidationSummary {
    moli: MoliReport,
    bfb: BfbReport,
    env_errors: Vec<(String, String)>,
    matrix: Option<ToppleMatrix>,
    primitivity: Option<Result<u64, String>>,
    irr: Option<IrrReport>,
    edge_warnings: Vec<String>,
}

impl ValidationSummary {
    fn hard_ok(&self) -> bool {
        self.moli.is_empty()
            && self.bfb.is_empty()
            && self.env_errors.is_empty()
            && matches!(self.primitivity, Some(Ok(_)))
    }
}

fn validate_all(spec: &NetworkSpec) -> ValidationSummary {
    let moli = validate_moli(spec);
    let bfb = validate_bfb(spec);
    let mut env_errors = Vec::new();
    for v in 0..spec.vertex_count() {
        if let Err(e) = stationary_distribution(spec.env(v)) {
            env_errors.push((spec.vertex_name(v).to_string(), e.to_string()));
        }
    }
    let (matrix, primitivity, irr) = if env_errors.is_empty() {
        let matrix = toppling_matrix(spec).expect("environment chains verified");
        let primitivity = match check_primitive(&matrix.shifted()) {
            Primitivity::Primitive { exponent } => Ok(exponent),
            Primitivity::Fails { witness } => Err(format!(
                "M + alpha I is not primitive: entry ({}, {}) stays zero",
                witness.0, witness.1
            )),
        };
        let irr = validate_irr(spec, &matrix);
        (Some(matrix), Some(primitivity), Some(irr))
    } else {
        (None, None, None)
    };
    ValidationSummary {
        moli,
        bfb,
        env_errors,
        matrix,
        primitivity,
        irr,
        edge_warnings: edge_support_warnings(spec),
    }
}

pub fn cmd_validate(spec_path: &Path, pretty: bool) -> Result<(), CliError> {
    let spec = read_spec(spec_path)?;
    let summary = validate_all(&spec);
    let ok = summary.hard_ok();
    let doc = json!({
        "ok": ok,
        "moli": summary.moli,
        "bfb": summary.bfb,
        "environment_errors": summary.env_errors
            .iter()
            .map(|(v, e)| json!({"vertex": v, "error": e}))
            .collect::<Vec<_>>(),
        "toppling_matrix": summary.matrix,
        "primitivity": summary.primitivity.as_ref().map(|p| match p {
            Ok(k) => json!({"exponent": k}),
            Err(e) => json!({"error": e}),
        }),
        "irr_advisory": summary.irr,
        "edge_support_warnings": summary.edge_warnings,
    });
    let output = if pretty {
        let mut text = String::new();
        text.push_str(&format!("spec     : {}\n", spec_path.display()));
        text.push_str(&format!("hard ok  : {ok}\n"));
        text.push_str(&format!(
            "moli     : {} violation(s)\n",
            summary.moli.violations.len()
        ));
        text.push_str(&format!(
            "bfb      : {} violation(s), K = {}\n",
            summary.bfb.violations.len(),
            summary.bfb.mass_bound
        ));
        for (v, e) in &summary.env_errors {
            text.push_str(&format!("env      : {v}: {e}\n"));
        }
        if let Some(Ok(k)) = &summary.primitivity {
            text.push_str(&format!("primitive: exponent {k}\n"));
        }
        if let Some(Err(e)) = &summary.primitivity {
            text.push_str(&format!("primitive: {e}\n"));
        }
        if let Some(irr) = &summary.irr {
            match irr.uniform_exponent {
                Some(k) => text.push_str(&format!("irr      : uniform exponent {k}\n")),
                None => text.push_str(&format!(
                    "irr      : advisory failure (strongly connected: {})\n",
                    irr.strongly_connected
                )),
            }
        }
        for w in &summary.edge_warnings {
            text.push_str(&format!("warning  : {w}\n"));
        }
        text
    } else {
        format!("{}\n", serde_json::to_string(&doc).expect("json"))
    };
    let manifest =
        Manifest::new("validate", &spec_path.display().to_string()).param("pretty", pretty);
    emit(&output, None, manifest)?;
    if ok {
        Ok(())
    } else {
        Err(domain_err("validation failed"))
    }
}

fn classified_report(
    spec: &NetworkSpec,
    eps: f64,
) -> Result<(SpectralReport, Option<DetectionResult>, RegimeTag), CliError> {
    let summary = validate_all(spec);
    if !summary.hard_ok() {
        return Err(domain_err(
            "spec fails validation; run `validate` for details",
        ));
    }
    let report = criticality(spec).map_err(domain_err)?;
    let detection = if report.rho.abs() <= eps {
        Some(detect(spec, &report, eps))
    } else {
        None
    };
    let regime = classify(&report, detection.as_ref(), eps).map_err(domain_err)?;
    Ok((report, detection, regime.tag))
}

fn regime_str(tag: RegimeTag) -> &'static str {
    match tag {
        RegimeTag::Subcritical => "subcritical",
        RegimeTag::Supercritical => "supercritical",
        RegimeTag::CriticalConserved => "critical_conserved",
        RegimeTag::CriticalStabilizing => "critical_stabilizing",
    }
}

pub fn cmd_classify(
    spec_path: &Path,
    eps: f64,
    out: Option<&Path>,
    pretty: bool,
) -> Result<(), CliError> {
    let spec = read_spec(spec_path)?;
    let (report, _, tag) = classified_report(&spec, eps)?;
    let doc = json!({
        "rho": report.rho,
        "r": report.r,
        "alpha": report.matrix.alpha,
        "p": report.p,
        "a": report.a,
        "regime": regime_str(tag),
        "eps": eps,
        "primitivity_exponent": report.primitivity_exponent,
    });
    let output = if pretty {
        format!(
            "rho    : {}\nr      : {}\nalpha  : {}\nregime : {}\np      : {:?}\na      : {:?}\n",
            report.rho,
            report.r,
            report.matrix.alpha,
            regime_str(tag),
            report.p,
            report.a,
        )
    } else {
        format!("{}\n", serde_json::to_string(&doc).expect("json"))
    };
    let manifest = Manifest::new("classify", &spec_path.display().to_string())
        .param("eps", eps)
        .param("pretty", pretty);
    emit(&output, out, manifest)
}

/// Round-robin indexed parallel map with deterministic, index-ordered output.
fn parallel_map<T, F>(n: u64, jobs: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(u64) -> T + Sync,
{
    let jobs = jobs.max(1);
    if jobs == 1 || n <= 1 {
        return (0..n).map(f).collect();
    }
    let slots: Vec<Mutex<Option<T>>> = (0..n).map(|_| Mutex::new(None)).collect();
    std::thread::scope(|scope| {
        for worker in 0..jobs.min(n as usize) {
            let f = &f;
            let slots = &slots;
            scope.spawn(move || {
                let mut i = worker as u64;
                while i < n {
                    let value = f(i);
                    *slots[i as usize].lock().expect("slot lock") = Some(value);
                    i += jobs as u64;
                }
            });
        }
    });
    slots
        .into_iter()
        .map(|slot| slot.into_inner().expect("slot lock").expect("slot filled"))
        .collect()
}

#[allow(clippy::too_many_arguments)]
pub fn cmd_simulate(
    spec_path: &Path,
    eta_text: &str,
    q0_text: Option<&str>,
    seed: u64,
    runs: u64,
    max_steps: u64,
    snapshot_every: Option<u64>,
    jobs: usize,
    out: Option<&Path>,
) -> Result<(), CliError> {
    let spec = read_spec(spec_path)?;
    let eta0 = parse_eta(&spec, eta_text)?;
    let q0 = parse_q0(&spec, q0_text)?;
    let master = RngStream::new(seed);
    let lines = parallel_map(runs, jobs, |run| {
        let outcome = run_legal(
            &spec,
            &eta0,
            &q0,
            max_steps,
            master.child(run),
            snapshot_every,
        );
        let mut doc = json!({
            "run": run,
            "tag": outcome.tag,
            "steps": outcome.steps,
            "final": {
                "eta": eta_object(&spec, &outcome.final_config.eta),
                "q": q_object(&spec, &outcome.final_config.q),
            },
        });
        if let Some(trajectory) = outcome.trajectory {
            doc["trajectory"] = Value::Array(
                trajectory
                    .iter()
                    .map(|(step, cfg)| {
                        json!({
                            "step": step,
                            "eta": eta_object(&spec, &cfg.eta),
                            "q": q_object(&spec, &cfg.q),
                        })
                    })
                    .collect(),
            );
        }
        serde_json::to_string(&doc).expect("json")
    });
    let mut output = String::new();
    for line in lines {
        output.push_str(&line);
        output.push('\n');
    }
    let manifest = Manifest::new("simulate", &spec_path.display().to_string())
        .param("eta", eta_text)
        .param("q0", q0_text.unwrap_or("{}"))
        .param("seed", seed)
        .param("runs", runs)
        .param("max_steps", max_steps)
        .param(
            "snapshot_every",
            snapshot_every.map(Value::from).unwrap_or(Value::Null),
        )
        .param("jobs", jobs as u64);
    emit(&output, out, manifest)
}

#[allow(clippy::too_many_arguments)]
pub fn cmd_walk(
    spec_path: &Path,
    eta_text: Option<&str>,
    q0_text: Option<&str>,
    excursions: u64,
    seed: u64,
    jobs: usize,
    out: Option<&Path>,
    pretty: bool,
) -> Result<(), CliError> {
    if excursions == 0 {
        return Err(input_err("--excursions must be at least 1"));
    }
    let spec = read_spec(spec_path)?;
    let eta0 = match eta_text {
        Some(text) => parse_eta(&spec, text)?,
        None => vec![0; spec.vertex_count()],
    };
    let q0 = parse_q0(&spec, q0_text)?;
    let (report, _, _) = classified_report(&spec, abelnet::spectral::DEFAULT_EPS)?;
    let master = RngStream::new(seed);

    // Fixed-size excursion batches, one stream per batch: the record list is
    // independent of the worker count.
    let n_batches = excursions.div_ceil(WALK_BATCH);
    let batches: Vec<Result<Vec<ExcursionRecord>, String>> =
        parallel_map(n_batches, jobs, |batch| {
            let count = WALK_BATCH.min(excursions - batch * WALK_BATCH);
            run_walk(&spec, &report, &eta0, &q0, count, master.child(batch))
                .map_err(|e| e.to_string())
        });
    let mut records = Vec::with_capacity(excursions as usize);
    for batch in batches {
        records.extend(batch.map_err(domain_err)?);
    }

    let drift = drift_report(&records, &report);
    let sums = excursion_sums_check(&spec, &report, &records).map_err(domain_err)?;
    let cells: Vec<Value> = sums
        .cells
        .iter()
        .map(|c| {
            json!({
                "vertex": spec.vertex_name(c.vertex),
                "environment": q_object(&spec, &env_decode(&spec, c.env_code)),
                "mean_visits": c.mean_visits,
                "predicted": c.predicted,
                "se": c.se,
                "z": c.z,
            })
        })
        .collect();
    let doc = json!({
        "vertices": spec.vertices(),
        "n_excursions": excursions,
        "drift": drift,
        "excursion_sums": {
            "mean_tau": sums.mean_tau,
            "cells": cells,
            "max_abs_z": sums.max_abs_z,
            "all_within": sums.all_within,
        },
    });
    let output = if pretty {
        format!(
            "excursions : {}\nmean tau   : {}\nmean inc   : {:?}\npredicted  : {:?}\nz          : {:?}\ncells ok   : {}\n",
            excursions, drift.mean_tau, drift.mean_increment, drift.predicted, drift.z_scores, sums.all_within
        )
    } else {
        format!("{}\n", serde_json::to_string(&doc).expect("json"))
    };
    let manifest = Manifest::new("walk", &spec_path.display().to_string())
        .param("eta", eta_text.unwrap_or("{}"))
        .param("q0", q0_text.unwrap_or("{}"))
        .param("excursions", excursions)
        .param("seed", seed)
        .param("jobs", jobs as u64)
        .param("pretty", pretty);
    emit(&output, out, manifest)
}

#[allow(clippy::too_many_arguments)]
pub fn cmd_survive(
    spec_path: &Path,
    eta_text: &str,
    q0_text: Option<&str>,
    horizon: u64,
    runs: u64,
    seed: u64,
    jobs: usize,
    out: Option<&Path>,
) -> Result<(), CliError> {
    if runs == 0 {
        return Err(input_err("--runs must be at least 1"));
    }
    let spec = read_spec(spec_path)?;
    let eta0 = parse_eta(&spec, eta_text)?;
    let q0 = parse_q0(&spec, q0_text)?;
    let master = RngStream::new(seed);
    let survivals = parallel_map(runs, jobs, |run| {
        !run_legal(&spec, &eta0, &q0, horizon, master.child(run), None).stabilized()
    });
    let survived = survivals.iter().filter(|s| **s).count() as u64;
    let (low, high) = wilson_interval(survived, runs);
    let doc = json!({
        "runs": runs,
        "horizon": horizon,
        "survived": survived,
        "fraction": survived as f64 / runs as f64,
        "wilson_ci": [low, high],
    });
    let output = format!("{}\n", serde_json::to_string(&doc).expect("json"));
    let manifest = Manifest::new("survive", &spec_path.display().to_string())
        .param("eta", eta_text)
        .param("q0", q0_text.unwrap_or("{}"))
        .param("horizon", horizon)
        .param("runs", runs)
        .param("seed", seed)
        .param("jobs", jobs as u64);
    emit(&output, out, manifest)
}

pub fn cmd_conserved(
    spec_path: &Path,
    seed: u64,
    eps: f64,
    out: Option<&Path>,
    pretty: bool,
) -> Result<(), CliError> {
    let spec = read_spec(spec_path)?;
    let summary = validate_all(&spec);
    if !summary.hard_ok() {
        return Err(domain_err(
            "spec fails validation; run `validate` for details",
        ));
    }
    let report = criticality(&spec).map_err(domain_err)?;
    let detection = detect(&spec, &report, eps);
    let mut doc = json!({
        "vertices": spec.vertices(),
        "rho": report.rho,
        "detection": detection,
    });
    if let Some(quantity) = detection.quantity() {
        let (eta0, q0) = unstable_initial_state(quantity, &spec).map_err(domain_err)?;
        let master = RngStream::new(seed);
        let runs = 10u64;
        let steps = 1_000u64;
        let mut max_dev: f64 = 0.0;
        for run in 0..runs {
            let outcome = run_legal(&spec, &eta0, &q0, steps, master.child(run), Some(1));
            let trajectory: Vec<Configuration> = outcome
                .trajectory
                .expect("snapshots requested")
                .into_iter()
                .map(|(_, cfg)| cfg)
                .collect();
            max_dev = max_dev.max(verify_conserved(quantity, &trajectory));
        }
        doc["unstable_initial_state"] = json!({
            "eta": eta_object(&spec, &eta0),
            "q0": q_object(&spec, &q0),
        });
        doc["verification"] = json!({
            "runs": runs,
            "steps_per_run": steps,
            "max_deviation": max_dev,
        });
    }
    let output = if pretty {
        match &detection {
            DetectionResult::Found { quantity } => format!(
                "conserved quantity found\na   : {:?}\nphi : {:?}\n",
                quantity.a, quantity.phi
            ),
            DetectionResult::NoneBecause { witness } => {
                format!("no conserved quantity\nwitness: {witness:?}\n")
            }
        }
    } else {
        format!("{}\n", serde_json::to_string(&doc).expect("json"))
    };
    let manifest = Manifest::new("conserved", &spec_path.display().to_string())
        .param("seed", seed)
        .param("eps", eps)
        .param("pretty", pretty);
    emit(&output, out, manifest)
}

#[allow(clippy::too_many_arguments)]
pub fn cmd_sweep(
    template_path: &Path,
    grid_text: &str,
    seed: u64,
    horizon: u64,
    runs: u64,
    eps: f64,
    jobs: usize,
    out: Option<&Path>,
) -> Result<(), CliError> {
    if runs == 0 {
        return Err(input_err("--runs must be at least 1"));
    }
    let template_text = std::fs::read_to_string(template_path)
        .map_err(|e| input_err(format!("cannot read {}: {e}", template_path.display())))?;
    let template: Value = serde_json::from_str(&template_text)
        .map_err(|e| input_err(format!("invalid template JSON: {e}")))?;
    let grid: Vec<f64> = if grid_text.trim().is_empty() {
        Vec::new()
    } else {
        grid_text
            .split(',')
            .map(|x| {
                x.trim()
                    .parse::<f64>()
                    .map_err(|e| input_err(format!("bad grid value `{x}`: {e}")))
            })
            .collect::<Result<_, _>>()?
    };

    let mut output = String::from("knob,rho,regime,survival_fraction\n");
    let master = RngStream::new(seed);
    for (row, knob) in grid.iter().enumerate() {
        let doc = substitute_knob(&template, *knob)?;
        let spec = NetworkSpec::from_value(&doc).map_err(input_err)?;
        let summary = validate_all(&spec);
        if !summary.hard_ok() {
            return Err(domain_err(format!(
                "knob {knob}: substituted spec fails validation"
            )));
        }
        let (report, _, tag) = classified_report(&spec, eps)?;
        // Survival convention: a uniform surplus of K + 1 above threshold.
        let k = spec.mass_bound();
        let eta0: Vec<i64> = spec.threshold().iter().map(|t| t + k + 1).collect();
        let q0 = vec![0usize; spec.vertex_count()];
        let row_stream = master.child(row as u64);
        let survivals = parallel_map(runs, jobs, |run| {
            !run_legal(&spec, &eta0, &q0, horizon, row_stream.child(run), None).stabilized()
        });
        let survived = survivals.iter().filter(|s| **s).count() as u64;
        output.push_str(&format!(
            "{},{},{},{}\n",
            knob,
            report.rho,
            regime_str(tag),
            survived as f64 / runs as f64
        ));
    }
    let manifest = Manifest::new("sweep", &template_path.display().to_string())
        .param("grid", grid_text)
        .param("seed", seed)
        .param("horizon", horizon)
        .param("runs", runs)
        .param("eps", eps)
        .param("jobs", jobs as u64);
    emit(&output, out, manifest)
}
