//! Experiment drivers. Each returns its files in memory; [`write_outputs`]
//! is the only place that touches the output directory.

use std::collections::BTreeMap;
use std::path::Path;

use serde::Serialize;
use serde_json::{json, Value};

use crate::calming::{verify_calming_axioms, CalmingSpec, CalmingVariant};
use crate::diagnostics::{csv_header, export_ledger, gronwall_monitor, measure_tolerance, ConstantsLedger, EnergyRecord};
use crate::integrator::Integrator;
use crate::model::{ForcingKind, Model};
use crate::rds::{
    absorbing_experiment, absorbing_radius, attractor_cauchy_test, flattening_analysis, initial_family,
    pullback_family, temperedness_probe, Setup,
};
use crate::spectral::SpectralField;

use super::checkpoint::{encode_checkpoint, load_checkpoint};
use super::config::{tempered_block, Experiment, RunConfig};
use super::IoError;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Monitor {
    pub name: String,
    pub passed: bool,
}

impl Monitor {
    fn new(name: impl Into<String>, passed: bool) -> Self {
        Self {
            name: name.into(),
            passed,
        }
    }
}

/// Files produced by one experiment, keyed by file name.
#[derive(Clone, Debug)]
pub struct RunOutput {
    pub files: BTreeMap<String, Vec<u8>>,
    pub monitors: Vec<Monitor>,
    /// All enabled monitors passed.
    pub passed: bool,
}

pub fn write_outputs(dir: &Path, out: &RunOutput) -> Result<(), IoError> {
    std::fs::create_dir_all(dir)?;
    for (name, bytes) in &out.files {
        std::fs::write(dir.join(name), bytes)?;
    }
    Ok(())
}

fn csv_bytes(hash: &str, header: &[String], rows: &[Vec<String>]) -> Result<Vec<u8>, IoError> {
    let mut buf = format!("# config_hash: {hash}\n").into_bytes();
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        w.write_record(header)?;
        for r in rows {
            w.write_record(r)?;
        }
        w.flush()?;
    }
    Ok(buf)
}

fn strings<const N: usize>(xs: [&str; N]) -> Vec<String> {
    xs.iter().map(|s| s.to_string()).collect()
}

struct Builder<'a> {
    cfg: &'a RunConfig,
    files: BTreeMap<String, Vec<u8>>,
    monitors: Vec<Monitor>,
    ledger_hash: Option<String>,
}

impl<'a> Builder<'a> {
    fn new(cfg: &'a RunConfig) -> Self {
        Self {
            cfg,
            files: BTreeMap::new(),
            monitors: Vec::new(),
            ledger_hash: None,
        }
    }

    fn csv(&mut self, name: &str, header: &[String], rows: &[Vec<String>]) -> Result<(), IoError> {
        let bytes = csv_bytes(&self.cfg.config_hash, header, rows)?;
        self.files.insert(name.into(), bytes);
        Ok(())
    }

    fn ledger(&mut self, model: &Model<f64>) -> Option<ConstantsLedger> {
        let ledger = ConstantsLedger::derive(model)?;
        let export = export_ledger(&ledger);
        let hash = &self.cfg.config_hash;
        let md = format!("<!-- config_hash: {hash} -->\n{}", export.markdown);
        self.files.insert("ledger.md".into(), md.into_bytes());
        let body: Value = serde_json::from_str(&export.json).expect("ledger json");
        let doc = json!({ "config_hash": hash, "ledger_hash": export.hash, "ledger": body });
        let text = serde_json::to_string_pretty(&doc).expect("ledger serialises") + "\n";
        self.files.insert("ledger.json".into(), text.into_bytes());
        self.ledger_hash = Some(export.hash);
        Some(ledger)
    }

    fn monitor(&mut self, name: impl Into<String>, passed: bool) {
        self.monitors.push(Monitor::new(name, passed));
    }

    fn finish(mut self, report: Value) -> Result<RunOutput, IoError> {
        let passed = self.monitors.iter().all(|m| m.passed);
        let summary = json!({
            "experiment": self.cfg.experiment.kind.to_string(),
            "config_hash": self.cfg.config_hash,
            "seeds": self.cfg.experiment.seeds,
            "ledger_hash": self.ledger_hash,
            "monitors": self.monitors,
            "passed": passed,
            "report": report,
            "version": env!("CARGO_PKG_VERSION"),
        });
        let text = serde_json::to_string_pretty(&summary)? + "\n";
        self.files.insert("summary.json".into(), text.into_bytes());
        Ok(RunOutput {
            files: self.files,
            monitors: self.monitors,
            passed,
        })
    }
}

/// Runs the configured experiment. `resume` (simulate only) names a
/// checkpoint header written by an earlier run of the same config.
pub fn run_experiment(cfg: &RunConfig, resume: Option<&Path>) -> Result<RunOutput, IoError> {
    if resume.is_some() && cfg.experiment.kind != Experiment::Simulate {
        return Err(IoError::Invalid("only simulate can resume from a checkpoint".into()));
    }
    match cfg.experiment.kind {
        Experiment::Simulate => simulate(cfg, resume),
        Experiment::Pullback => pullback(cfg),
        Experiment::Absorb => absorb(cfg),
        Experiment::Flatten => flatten(cfg),
        Experiment::Cauchy => cauchy(cfg),
        Experiment::VerifyCalming => verify_calming(cfg),
        Experiment::Validate => validate(cfg),
    }
}

fn record_rows(prefix: &[String], records: &[EnergyRecord]) -> Vec<Vec<String>> {
    records
        .iter()
        .map(|r| prefix.iter().cloned().chain(r.csv_row()).collect())
        .collect()
}

fn simulate(cfg: &RunConfig, resume: Option<&Path>) -> Result<RunOutput, IoError> {
    let mut b = Builder::new(cfg);
    let model = cfg.build_model()?;
    let grid = model.grid().clone();
    let seed = cfg.noise.seed;
    let ou = cfg.noise_path(seed)?;
    let sc = cfg.stepper_config();
    let mut it = Integrator::new(&model, &sc, &ou)?;
    let n = it.n_steps();
    let (start, mut state) = match resume {
        Some(p) => {
            let (h, v) = load_checkpoint(p, &grid, &cfg.config_hash)?;
            if h.step > n {
                return Err(IoError::Checkpoint(format!("step {} beyond the run's {n} steps", h.step)));
            }
            (h.step, v)
        }
        None => {
            let u0 = cfg.field(&cfg.experiment.initial, &grid, cfg.experiment.initial_norm, seed)?;
            let mut v0 = u0;
            v0.axpy(-it.z(sc.time(0)), model.h());
            (0, v0)
        }
    };
    let start_state = state.clone();
    let chunk = cfg.experiment.checkpoint_every.unwrap_or(n.max(1));
    let mut records: Vec<EnergyRecord> = Vec::new();
    let mut k = start;
    loop {
        let to = (k + chunk).min(n);
        let rec = it.run(state, k, to)?;
        let skip = usize::from(!records.is_empty());
        records.extend(rec.records.into_iter().skip(skip));
        state = rec.final_state;
        k = to;
        if k >= n {
            break;
        }
        let name = format!("checkpoint_{k:08}");
        let (json, payload) = encode_checkpoint(&name, &state, sc.time(k), k, seed, &cfg.config_hash)?;
        b.files.insert(format!("{name}.json"), json.into_bytes());
        b.files.insert(format!("{name}.cnsf"), payload);
    }
    let (json, payload) = encode_checkpoint("final", &state, sc.time(n), n, seed, &cfg.config_hash)?;
    b.files.insert("final.json".into(), json.into_bytes());
    b.files.insert("final.cnsf".into(), payload);

    b.csv("series.csv", &csv_header(&sc.tail_cutoffs), &record_rows(&[], &records))?;

    let mut report = serde_json::Map::new();
    report.insert("steps".into(), json!(n));
    report.insert("resumed_from_step".into(), json!(start));
    report.insert("final_time".into(), json!(sc.time(n)));
    if let Some(last) = records.last() {
        report.insert("final_record".into(), serde_json::to_value(last)?);
    }

    if let Some(ledger) = b.ledger(&model) {
        let tolerance = if cfg.experiment.pilot && n > start {
            let mut fine = sc.clone();
            fine.dt /= 2.0;
            fine.stride *= 2;
            fine.t0 = sc.time(start);
            let mut fi = Integrator::new(&model, &fine, &ou)?;
            let fine_n = fi.n_steps();
            let fine_rec = fi.run(start_state.clone(), 0, fine_n)?;
            measure_tolerance(&records, &fine_rec.records, &ledger)
        } else {
            0.0
        };
        let m = gronwall_monitor(&records, &ledger, tolerance);
        b.monitor("energy_bound", m.passed);
        report.insert(
            "energy_monitor".into(),
            json!({
                "tolerance": m.tolerance,
                "worst_slack": m.worst_slack,
                "worst_time": records.get(m.worst_index).map(|r| r.t),
                "violations": m.violations,
                "passed": m.passed,
            }),
        );
    }

    let stokes_only = !model.is_nonlinear()
        && model.forcing().kind == ForcingKind::Zero
        && model.h().norm_l2() == 0.0;
    if stokes_only {
        let span = sc.time(n) - sc.time(start);
        let nu = model.nu();
        let exact = start_state.map_modes(|k2| (-nu * k2 as f64 * span).exp());
        let scale = start_state.norm_l2().max(f64::MIN_POSITIVE);
        let rel = exact.sub(&state).norm_l2() / scale;
        let passed = rel <= 1e-9;
        b.monitor("stokes_closed_form", passed);
        report.insert(
            "stokes_check".into(),
            json!({
                "relative_error": rel,
                "norm_ratio": state.norm_l2() / scale,
                "lambda1_decay": (-nu * grid.lambda1() as f64 * span).exp(),
                "passed": passed,
            }),
        );
    }
    b.finish(Value::Object(report))
}

fn setup_noise(cfg: &RunConfig, seed: u64) -> Result<crate::noise::OuPath, IoError> {
    cfg.noise_path(seed)
}

fn pullback(cfg: &RunConfig) -> Result<RunOutput, IoError> {
    let mut b = Builder::new(cfg);
    let model = cfg.build_model()?;
    b.ledger(&model);
    let sc = cfg.stepper_config();
    let e = &cfg.experiment;
    let norms: Vec<f64> = e.initial_scales.iter().map(|s| s * e.initial_norm).collect();
    let mut rows = Vec::new();
    let mut series = Vec::new();
    let mut all_finite = true;
    for &seed in &e.seeds {
        let ou = setup_noise(cfg, seed)?;
        let setup = Setup { model: &model, omega: &ou, stepper: &sc, tau: e.tau };
        let initials = initial_family(model.grid(), seed, &norms);
        for c in pullback_family(&setup, &e.horizons, &initials)? {
            all_finite &= c.terminal.is_finite();
            let key = vec![seed.to_string(), c.horizon.to_string(), c.initial.to_string()];
            rows.push(
                key.iter()
                    .cloned()
                    .chain([c.terminal.norm_l2().to_string(), c.terminal.norm_v().to_string()])
                    .collect(),
            );
            series.extend(record_rows(&key, &c.trajectory.records));
        }
    }
    b.csv("pullback.csv", &strings(["seed", "horizon", "initial", "norm_u", "norm_grad_u"]), &rows)?;
    let header: Vec<String> = strings(["seed", "horizon", "initial"])
        .into_iter()
        .chain(csv_header(&sc.tail_cutoffs))
        .collect();
    b.csv("series.csv", &header, &series)?;
    b.monitor("finite_states", all_finite);
    b.finish(json!({ "cells": rows.len(), "initial_norms": norms }))
}

fn absorb(cfg: &RunConfig) -> Result<RunOutput, IoError> {
    let mut b = Builder::new(cfg);
    let model = cfg.build_model()?;
    b.ledger(&model);
    let sc = cfg.stepper_config();
    let e = &cfg.experiment;
    let mut reports = Vec::new();
    let mut rows = Vec::new();
    let mut trows = Vec::new();
    for &seed in &e.seeds {
        let ou = setup_noise(cfg, seed)?;
        let setup = Setup { model: &model, omega: &ou, stepper: &sc, tau: e.tau };
        let est = absorbing_radius(e.tau, &ou, &model, e.truncation)?;
        let norms: Vec<f64> = e.initial_scales.iter().map(|s| s * est.r_v.sqrt()).collect();
        let initials = initial_family(model.grid(), seed, &norms);
        let rep = absorbing_experiment(&setup, &initials, &e.horizons, e.truncation)?;
        let temp = temperedness_probe(&setup, &e.tempered_rates, e.tempered_blocks, tempered_block, e.truncation)?;
        for c in &rep.cells {
            rows.push(vec![
                seed.to_string(),
                c.horizon.to_string(),
                c.initial.to_string(),
                c.initial_norm_grad.to_string(),
                c.terminal_norm_grad_sq.to_string(),
                c.r_v_tau.to_string(),
                c.inside_at_tau.to_string(),
                c.entry_time.map(|x| x.to_string()).unwrap_or_default(),
                c.monitor_worst_slack.to_string(),
            ]);
            if !c.inside_at_tau && c.horizon == *e.horizons.last().unwrap() {
                b.monitor(format!("seed {seed}: initial {} outside R_V at t = {}", c.initial, c.horizon), false);
            }
        }
        for t in &temp {
            for (j, m) in t.block_maxima.iter().enumerate() {
                trows.push(vec![seed.to_string(), t.c.to_string(), j.to_string(), m.to_string()]);
            }
            b.monitor(format!("seed {seed}: tempered at c = {}", t.c), t.decreasing);
        }
        b.monitor(format!("seed {seed}: absorbed at largest horizon"), rep.absorbed_at_largest);
        b.monitor(format!("seed {seed}: entry time nonincreasing"), rep.entry_monotone);
        b.monitor(format!("seed {seed}: stays absorbed"), rep.stays_absorbed);
        b.monitor(format!("seed {seed}: energy bound along trajectories"), rep.monitors_passed);
        reports.push(json!({ "seed": seed, "absorbing": rep, "temperedness": temp }));
    }
    b.csv(
        "absorb.csv",
        &strings([
            "seed",
            "horizon",
            "initial",
            "initial_norm_grad",
            "terminal_norm_grad_sq",
            "r_v",
            "inside",
            "entry_time",
            "monitor_worst_slack",
        ]),
        &rows,
    )?;
    b.csv("tempered.csv", &strings(["seed", "c", "block", "max_weighted_radius"]), &trows)?;
    b.finish(json!({ "seeds": reports }))
}

fn flatten(cfg: &RunConfig) -> Result<RunOutput, IoError> {
    let mut b = Builder::new(cfg);
    let model = cfg.build_model()?;
    b.ledger(&model);
    let sc = cfg.stepper_config();
    let e = &cfg.experiment;
    let grid = model.grid();
    let thresholds = e.thresholds.clone().unwrap_or_else(|| grid.shells().to_vec());
    let horizon = *e.horizons.last().expect("validated nonempty");
    let mut reports = Vec::new();
    let mut rows = Vec::new();
    let mut shells = Vec::new();
    for &seed in &e.seeds {
        let ou = setup_noise(cfg, seed)?;
        let setup = Setup { model: &model, omega: &ou, stepper: &sc, tau: e.tau };
        let est = absorbing_radius(e.tau, &ou, &model, e.truncation)?;
        let u0 = initial_family(grid, seed, &[est.r_v.sqrt()]).remove(0);
        let rep = flattening_analysis(&setup, &u0, horizon, &thresholds, e.delta)?;
        for r in &rep.rows {
            rows.push(vec![
                seed.to_string(),
                r.cutoff.to_string(),
                r.next_eigenvalue.map(|x| x.to_string()).unwrap_or_default(),
                r.tail.to_string(),
                r.tail_v.to_string(),
                r.tail_noise.to_string(),
                r.below_delta.to_string(),
                r.meets_delta.to_string(),
                r.i2_measured.to_string(),
                r.i2_envelope.to_string(),
            ]);
        }
        b.monitor(format!("seed {seed}: tails monotone"), rep.tails_monotone);
        b.monitor(format!("seed {seed}: below delta at a resolved threshold"), rep.first_below_delta.is_some());
        b.monitor(
            format!("seed {seed}: envelope slope -1 +- 0.15"),
            (rep.envelope_slope + 1.0).abs() <= 0.15,
        );
        shells.push(rep.first_below_delta.and_then(|c| grid.shell_index(c)));
        reports.push(json!({ "seed": seed, "r_v": est.r_v, "flattening": rep }));
    }
    let idx: Vec<usize> = shells.iter().flatten().copied().collect();
    let stable = idx.len() == shells.len()
        && idx.iter().max().zip(idx.iter().min()).is_some_and(|(a, b)| a - b <= 1);
    b.monitor("threshold stable across seeds within one shell", stable);
    b.csv(
        "flatten.csv",
        &strings([
            "seed",
            "cutoff",
            "next_eigenvalue",
            "tail",
            "tail_v",
            "tail_noise",
            "below_delta",
            "meets_delta",
            "i2_measured",
            "i2_envelope",
        ]),
        &rows,
    )?;
    b.finish(json!({ "horizon": horizon, "seeds": reports }))
}

fn cauchy(cfg: &RunConfig) -> Result<RunOutput, IoError> {
    let mut b = Builder::new(cfg);
    let model = cfg.build_model()?;
    b.ledger(&model);
    let sc = cfg.stepper_config();
    let e = &cfg.experiment;
    let mut reports = Vec::new();
    let mut rows = Vec::new();
    for &seed in &e.seeds {
        let ou = setup_noise(cfg, seed)?;
        let setup = Setup { model: &model, omega: &ou, stepper: &sc, tau: e.tau };
        let est = absorbing_radius(e.tau, &ou, &model, e.truncation)?;
        let norms: Vec<f64> = e.cauchy_scales.iter().map(|s| s * est.r_v.sqrt()).collect();
        let initials = initial_family(model.grid(), seed, &norms);
        let rep = attractor_cauchy_test(&setup, &initials, &e.cauchy_horizons)?;
        for (j, gaps) in rep.horizon_gaps.iter().enumerate() {
            for (i, g) in gaps.iter().enumerate() {
                rows.push(vec![
                    seed.to_string(),
                    "horizon".into(),
                    j.to_string(),
                    format!("{}-{}", rep.horizons[i], rep.horizons[i + 1]),
                    g.to_string(),
                ]);
            }
        }
        for (i, g) in rep.initial_gaps.iter().enumerate() {
            rows.push(vec![
                seed.to_string(),
                "initial".into(),
                String::new(),
                rep.horizons[i].to_string(),
                g.to_string(),
            ]);
        }
        rows.push(vec![
            seed.to_string(),
            "floor".into(),
            "0".into(),
            rep.horizons.last().map(|h| h.to_string()).unwrap_or_default(),
            rep.floor.to_string(),
        ]);
        b.monitor(format!("seed {seed}: horizon gaps decrease"), rep.horizon_gaps_monotone);
        b.monitor(format!("seed {seed}: initial gaps decrease"), rep.initial_gaps_monotone);
        b.monitor(format!("seed {seed}: gaps at integrator floor"), rep.at_floor);
        reports.push(json!({ "seed": seed, "r_v": est.r_v, "cauchy": rep }));
    }
    b.csv("cauchy.csv", &strings(["seed", "kind", "initial", "horizons", "gap"]), &rows)?;
    b.finish(json!({ "seeds": reports }))
}

fn verify_calming(cfg: &RunConfig) -> Result<RunOutput, IoError> {
    let mut b = Builder::new(cfg);
    let e = &cfg.experiment;
    let mut blocks = Vec::new();
    let mut rows = Vec::new();
    for variant in CalmingVariant::ALL_CALMED {
        let mut reports = Vec::new();
        for &eps in &e.calming_eps {
            let spec = CalmingSpec::new(variant, eps).map_err(|err| IoError::Invalid(err.to_string()))?;
            let rep = verify_calming_axioms(&spec, e.calming_samples, e.calming_radius, cfg.noise.seed);
            rows.push(vec![
                variant.to_string(),
                eps.to_string(),
                rep.worst_lipschitz_ratio.to_string(),
                rep.worst_bound_ratio.to_string(),
                rep.worst_residual_ratio.to_string(),
                rep.passed().to_string(),
            ]);
            reports.push(rep);
        }
        let passed = reports.iter().all(|r| r.passed());
        b.monitor(format!("{variant} axioms"), passed);
        blocks.push(json!({ "variant": variant, "passed": passed, "reports": reports }));
    }
    b.csv(
        "calming.csv",
        &strings(["variant", "eps", "worst_lipschitz", "worst_bound", "worst_residual", "passed"]),
        &rows,
    )?;
    b.finish(json!({ "variants": blocks, "samples": e.calming_samples, "radius": e.calming_radius }))
}

fn validate(cfg: &RunConfig) -> Result<RunOutput, IoError> {
    let mut b = Builder::new(cfg);
    let model = cfg.build_model()?;
    b.ledger(&model);
    let e = &cfg.experiment;
    let rep = model.validate_assumptions(e.tau, e.truncation);
    b.monitor("A1", rep.a1);
    b.monitor("A2", rep.a2);
    b.monitor("A3", rep.a3);
    let h: &SpectralField<f64> = model.h();
    b.finish(json!({
        "assumptions": rep,
        "norm_grad_h": h.norm_v(),
        "lambda1": model.grid().lambda1(),
        "max_retained_eigenvalue": model.grid().max_retained_eigenvalue(),
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::parse_config;

    fn small(extra: &str) -> RunConfig {
        parse_config(&format!(
            "grid.n = 8\nstepper.dt = 0.01\nstepper.span = 0.2\nstepper.stride = 5\n{extra}"
        ))
        .unwrap()
    }

    #[test]
    fn stokes_only_simulation_matches_closed_form() {
        let cfg = small("model.nonlinearity = false\nh.mode = \"zero\"\nexperiment.initial = \"lambda1\"");
        let out = run_experiment(&cfg, None).unwrap();
        assert!(out.passed, "{:?}", out.monitors);
        let s: Value = serde_json::from_slice(&out.files["summary.json"]).unwrap();
        let ratio = s["report"]["stokes_check"]["norm_ratio"].as_f64().unwrap();
        assert!((ratio - (-0.2f64).exp()).abs() < 1e-12);
    }

    #[test]
    fn reruns_are_byte_identical() {
        let cfg = small("experiment.checkpoint_every = 10");
        let a = run_experiment(&cfg, None).unwrap();
        let b = run_experiment(&cfg, None).unwrap();
        assert_eq!(a.files, b.files);
        let series = String::from_utf8(a.files["series.csv"].clone()).unwrap();
        assert!(series.starts_with(&format!("# config_hash: {}", cfg.config_hash)));
    }

    #[test]
    fn resume_matches_uninterrupted_run() {
        let cfg = small("experiment.checkpoint_every = 10");
        let full = run_experiment(&cfg, None).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_outputs(dir.path(), &full).unwrap();
        let resumed = run_experiment(&cfg, Some(&dir.path().join("checkpoint_00000010.json"))).unwrap();
        assert_eq!(resumed.files["final.cnsf"], full.files["final.cnsf"]);
        let last = |o: &RunOutput| {
            let s = String::from_utf8(o.files["series.csv"].clone()).unwrap();
            s.lines().last().unwrap().to_string()
        };
        assert_eq!(last(&resumed), last(&full));
        let other = small("experiment.checkpoint_every = 10\nnoise.seed = 9");
        assert!(matches!(
            run_experiment(&other, Some(&dir.path().join("checkpoint_00000010.json"))),
            Err(IoError::Checkpoint(_))
        ));
    }

    #[test]
    fn verify_calming_reports_four_blocks() {
        let cfg = small("experiment.calming_samples = 2000\nexperiment.kind = \"verify-calming\"");
        let out = run_experiment(&cfg, None).unwrap();
        assert!(out.passed);
        let s: Value = serde_json::from_slice(&out.files["summary.json"]).unwrap();
        let blocks = s["report"]["variants"].as_array().unwrap();
        assert_eq!(blocks.len(), 4);
        assert!(blocks.iter().all(|b| b["passed"] == json!(true)));
    }

    #[test]
    fn validate_flags_failed_assumption() {
        let cfg = small("experiment.kind = \"validate\"\ncalming.eps = 1.0");
        let out = run_experiment(&cfg, None).unwrap();
        assert!(!out.passed);
        assert!(out.monitors.iter().any(|m| m.name == "A3" && !m.passed));
    }
}
