//! One function per subcommand. Each writes its artifacts into the output
//! directory and returns the list of checks; `summary.json` is written last.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use wkam_core::action_potential::{free_phi_with, holder_constant, minimize_action, PhiEstimate};
use wkam_core::dynamics::{
    find_central_configuration, parabolic_action_closed_form, parabolic_action_quadrature, parabolic_amplitude,
    parabolic_homothetic,
};
use wkam_core::paths::{connect, DiscretePath};
use wkam_core::weak_kam::{
    check_domination, grid_tolerance, iterate_to_fixed_point, sample_pairs, Grid, GridFunction, KeplerOracle,
    LaxOleinik, ReducedProblem, Semigroup,
};
use wkam_core::{Configuration, ProblemSpec};

use crate::config::{self, ExperimentConfig};
use crate::CliError;

/// Nodes used for the free-time potential inside domination checks.
const DOMINATION_NODES: usize = 32;
/// Relative gap allowed between kinetic and potential action of a zero-energy motion.
const EQUIPARTITION_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub relation: &'static str,
    pub limit: f64,
    /// Positive when the check passes.
    pub margin: f64,
    pub pass: bool,
}

impl Check {
    pub fn at_most(name: impl Into<String>, value: f64, limit: f64) -> Self {
        let margin = limit - value;
        Self { name: name.into(), value, relation: "<=", limit, margin, pass: value <= limit }
    }

    pub fn at_least(name: impl Into<String>, value: f64, limit: f64) -> Self {
        let margin = value - limit;
        Self { name: name.into(), value, relation: ">=", limit, margin, pass: value >= limit }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Summary {
    pub command: String,
    pub pass: bool,
    pub checks: Vec<Check>,
    pub config: ExperimentConfig,
}

impl Summary {
    pub fn print(&self) {
        for c in &self.checks {
            println!(
                "{} {}: {:e} {} {:e} (margin {:e})",
                if c.pass { "ok  " } else { "FAIL" },
                c.name,
                c.value,
                c.relation,
                c.limit,
                c.margin
            );
        }
        println!("{}: {}", self.command, if self.pass { "PASS" } else { "FAIL" });
    }
}

pub fn execute(cfg: &ExperimentConfig) -> Result<Summary, CliError> {
    let out = PathBuf::from(&cfg.out);
    fs::create_dir_all(&out)?;
    let checks = match cfg.command.as_str() {
        "connect" => cmd_connect(cfg, &out)?,
        "phi" => cmd_phi(cfg, &out)?,
        "holder" => cmd_holder(cfg, &out)?,
        "weakkam" => cmd_weakkam(cfg, &out)?,
        "central" => cmd_central(cfg, &out)?,
        "parabolic" => cmd_parabolic(cfg, &out)?,
        other => return Err(CliError::Usage(format!("unknown command {other:?}"))),
    };
    let summary = Summary {
        command: cfg.command.clone(),
        pass: checks.iter().all(|c| c.pass),
        checks,
        config: cfg.clone(),
    };
    write(&out, "summary.json", &serde_json::to_string_pretty(&summary).expect("summary serialises"))?;
    Ok(summary)
}

fn write(out: &Path, name: &str, contents: &str) -> Result<(), CliError> {
    fs::write(out.join(name), contents)?;
    Ok(())
}

fn json_lines<T: Serialize>(rows: &[T]) -> String {
    rows.iter().map(|r| serde_json::to_string(r).expect("row serialises") + "\n").collect()
}

fn problem_spec(cfg: &ExperimentConfig) -> Result<ProblemSpec, CliError> {
    Ok(ProblemSpec::new(cfg.problem.dim, cfg.masses(), cfg.problem.kappa)?)
}

fn sample_rng(seed: u64, k: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed.wrapping_add(k as u64))
}

fn config_in_ball(rng: &mut ChaCha8Rng, n: usize, dim: usize, radius: f64) -> Configuration {
    let mut coords = Vec::with_capacity(n * dim);
    for _ in 0..n {
        loop {
            let p: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
            if p.iter().map(|c| c * c).sum::<f64>() <= 1.0 {
                coords.extend(p.iter().map(|c| c * radius));
                break;
            }
        }
    }
    Configuration::new(dim, coords).expect("dimension divides the coordinates")
}

/// Concatenates per-sample path CSVs under one header with a leading `sample` column.
fn tagged_paths_csv<'a>(paths: impl Iterator<Item = (usize, &'a DiscretePath)>) -> String {
    let mut out = String::new();
    for (k, path) in paths {
        let csv = path.to_csv();
        let mut lines = csv.lines();
        let header = lines.next().unwrap_or_default();
        if out.is_empty() {
            let _ = writeln!(out, "sample,{header}");
        }
        for line in lines {
            let _ = writeln!(out, "{k},{line}");
        }
    }
    out
}

fn loglog_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let lx: Vec<f64> = xs.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let (mx, my) = (lx.iter().sum::<f64>() / n, ly.iter().sum::<f64>() / n);
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

fn cmd_connect(cfg: &ExperimentConfig, out: &Path) -> Result<Vec<Check>, CliError> {
    let spec = problem_spec(cfg)?;
    let c = &cfg.connect;
    let center = vec![0.0; spec.dim];
    let runs: Vec<_> = (0..c.samples)
        .into_par_iter()
        .map(|k| {
            let mut rng = sample_rng(cfg.seed, k);
            let x = config_in_ball(&mut rng, spec.n_bodies, spec.dim, c.radius);
            let y = config_in_ball(&mut rng, spec.n_bodies, spec.dim, c.radius);
            let result = connect(&spec, &x, &y, c.horizon, &center, c.radius);
            (k, x, y, result)
        })
        .collect();
    let slack = 1.0 + cfg.tol_or(config::DEFAULT_CONNECT_TOL);
    let mut rows = Vec::new();
    let mut failed = 0usize;
    let mut worst = 0.0f64;
    for (k, x, y, result) in &runs {
        match result {
            Ok((_, cert)) => {
                let ratio = cert.action_computed / cert.bound_value;
                worst = worst.max(ratio);
                if !(cert.contained && ratio <= slack) {
                    failed += 1;
                }
                rows.push(json!({"sample": k, "x": x.coords, "y": y.coords, "certificate": cert}));
            }
            Err(e) => {
                failed += 1;
                rows.push(json!({"sample": k, "x": x.coords, "y": y.coords, "error": e.to_string()}));
            }
        }
    }
    write(out, "connect.jsonl", &json_lines(&rows))?;
    let paths = runs.iter().filter_map(|(k, _, _, r)| r.as_ref().ok().map(|(p, _)| (*k, p)));
    write(out, "connect_paths.csv", &tagged_paths_csv(paths))?;
    Ok(vec![
        Check::at_most("failed_certificates", failed as f64, 0.0),
        Check::at_most("max_action_over_bound", worst, slack),
    ])
}

fn phi_row(k: usize, x: &Configuration, y: &Configuration, est: &PhiEstimate) -> serde_json::Value {
    json!({
        "sample": k,
        "x": x.coords,
        "y": y.coords,
        "value": est.value,
        "horizon": est.horizon,
        "lower_bound": est.lower_bound,
        "upper_bound": est.upper_bound,
        "converged": est.converged,
        "iterations": est.iterations,
    })
}

fn cmd_phi(cfg: &ExperimentConfig, out: &Path) -> Result<Vec<Check>, CliError> {
    let spec = problem_spec(cfg)?;
    let p = &cfg.phi;
    let runs: Vec<_> = (0..p.samples)
        .into_par_iter()
        .map(|k| {
            let mut rng = sample_rng(cfg.seed, k);
            let x = config_in_ball(&mut rng, spec.n_bodies, spec.dim, p.radius);
            let y = config_in_ball(&mut rng, spec.n_bodies, spec.dim, p.radius);
            let est = match p.horizon {
                Some(t) => minimize_action(&spec, &x, &y, t, p.nodes, None),
                None => free_phi_with(&spec, &x, &y, p.nodes, None),
            };
            (k, x, y, est)
        })
        .collect();
    let slack = cfg.tol_or(config::DEFAULT_PHI_TOL);
    let mut rows = Vec::new();
    let (mut errors, mut violations, mut unconverged) = (0usize, 0usize, 0usize);
    let mut worst_upper = 0.0f64;
    for (k, x, y, est) in &runs {
        match est {
            Ok(e) => {
                if !e.converged {
                    unconverged += 1;
                } else if !(e.lower_bound <= e.value * (1.0 + slack) && e.value <= e.upper_bound * (1.0 + slack)) {
                    violations += 1;
                }
                worst_upper = worst_upper.max(e.value / e.upper_bound);
                rows.push(phi_row(*k, x, y, e));
            }
            Err(e) => {
                errors += 1;
                rows.push(json!({"sample": k, "x": x.coords, "y": y.coords, "error": e.to_string()}));
            }
        }
    }
    write(out, "phi.jsonl", &json_lines(&rows))?;
    let paths = runs.iter().filter_map(|(k, _, _, r)| r.as_ref().ok().map(|e| (*k, &e.path)));
    write(out, "phi_paths.csv", &tagged_paths_csv(paths))?;
    println!("{unconverged} of {} estimates did not converge and are excluded from the sandwich", runs.len());
    Ok(vec![
        Check::at_most("estimator_errors", errors as f64, 0.0),
        Check::at_most("sandwich_violations", violations as f64, 0.0),
        Check::at_most("max_value_over_upper_bound", worst_upper, 1.0 + slack),
    ])
}

fn cmd_holder(cfg: &ExperimentConfig, out: &Path) -> Result<Vec<Check>, CliError> {
    let spec = problem_spec(cfg)?;
    let h = &cfg.holder;
    let mut rng = sample_rng(cfg.seed, 0);
    let mut direction = config_in_ball(&mut rng, spec.n_bodies, spec.dim, 1.0);
    direction = direction.scale(1.0 / direction.max_norm());
    let origin = Configuration::zeros(spec.n_bodies, spec.dim);
    let estimates: Vec<_> = h
        .scales
        .par_iter()
        .map(|&s| free_phi_with(&spec, &origin, &direction.scale(s), h.nodes, None))
        .collect::<Result<_, _>>()?;
    let eta = holder_constant(&spec);
    let exponent = 1.0 - spec.kappa;
    let mut csv = String::from("scale,value,horizon,bound\n");
    let mut worst = 0.0f64;
    let values: Vec<f64> = estimates.iter().map(|e| e.value).collect();
    for (&s, e) in h.scales.iter().zip(&estimates) {
        let bound = eta * s.powf(exponent);
        worst = worst.max(e.value / bound);
        let _ = writeln!(csv, "{s},{},{},{bound}", e.value, e.horizon);
    }
    write(out, "holder.csv", &csv)?;
    let slope = loglog_slope(&h.scales, &values);
    write(
        out,
        "holder.json",
        &serde_json::to_string_pretty(&json!({
            "direction": direction.coords,
            "holder_constant": eta,
            "expected_exponent": exponent,
            "fitted_exponent": slope,
        }))
        .expect("holder report serialises"),
    )?;
    Ok(vec![
        Check::at_most("exponent_deviation", (slope - exponent).abs(), cfg.tol_or(config::DEFAULT_HOLDER_TOL)),
        Check::at_most("max_value_over_holder_bound", worst, 1.0),
    ])
}

fn cmd_weakkam(cfg: &ExperimentConfig, out: &Path) -> Result<Vec<Check>, CliError> {
    let w = &cfg.weakkam;
    let masses = cfg.masses();
    let kappa = cfg.problem.kappa;
    let oracle: KeplerOracle = w.oracle.parse().map_err(|e| CliError::Usage(format!("weakkam.oracle: {e}")))?;
    let sg = if w.semigroup == "forward" { Semigroup::Forward } else { Semigroup::Backward };
    let problem = if w.reduced == "planar" {
        ReducedProblem::planar_with_eikonal_constant(w.eikonal_constant, kappa)?
    } else {
        ReducedProblem::collinear_two_body(masses[0], masses[1], kappa)?
    };
    let sup_tol = cfg.tol_or(config::DEFAULT_WEAKKAM_TOL);
    let mut checks = Vec::new();
    let mut defects = Vec::new();
    let mut rows = Vec::new();
    let mut last_drift = (0.0, 0.0);
    for (label, h) in [("h", w.spacing), ("h2", w.spacing / 2.0)] {
        let grid = if w.reduced == "planar" {
            Grid::square(w.half_width, h, w.exclusion)?
        } else {
            Grid::line(w.lower, w.upper, h)?
        };
        let op = LaxOleinik::new(&problem, &grid, w.step, w.phi_nodes)?;
        let u = GridFunction::from_oracle(&grid, &problem, oracle)?;
        let defect = op.fixed_point_defect(&u, sg)?;
        defects.push(defect);
        let zero = GridFunction::constant(&grid, 0.0);
        let (limit, report) = iterate_to_fixed_point(&op, &zero, sg, sup_tol, w.max_iter)?;
        let pairs = sample_pairs(op.trusted(), w.pairs, cfg.seed);
        let domination = check_domination(&problem, &limit, &pairs, DOMINATION_NODES)?;
        write(out, &format!("report_{label}.json"), &report.to_json())?;
        write(out, &format!("limit_{label}.csv"), &limit.to_csv())?;
        write(out, &format!("limit_{label}.dat"), &limit.to_matrix())?;
        write(out, &format!("oracle_{label}.csv"), &u.to_csv())?;
        rows.push(json!({
            "spacing": h,
            "oracle": oracle.name(),
            "oracle_defect": defect,
            "iterations": report.iterations,
            "converged": report.converged,
            "sup_change": report.sup_change,
            "domination_violation": domination,
            "drift_c": report.drift_c,
            "tol": grid_tolerance(h),
        }));
        checks.push(Check::at_most(format!("sup_change_{label}"), report.sup_change, sup_tol));
        checks.push(Check::at_most(format!("domination_{label}"), domination, grid_tolerance(h)));
        last_drift = (report.drift_c, grid_tolerance(h));
    }
    write(out, "weakkam.jsonl", &json_lines(&rows))?;
    checks.insert(0, Check::at_least("oracle_defect_ratio", defects[0] / defects[1], w.defect_ratio));
    checks.push(Check::at_most("drift_c_h2", last_drift.0.abs(), last_drift.1));
    Ok(checks)
}

fn cmd_central(cfg: &ExperimentConfig, out: &Path) -> Result<Vec<Check>, CliError> {
    let spec = problem_spec(cfg)?;
    let cc = find_central_configuration(&spec, cfg.seed, cfg.central.restarts)?;
    write(out, "central.json", &serde_json::to_string_pretty(&cc).expect("central configuration serialises"))?;
    let mut csv = String::from("body,mass");
    for c in 0..spec.dim {
        let _ = write!(csv, ",x{c}");
    }
    csv.push('\n');
    for (i, b) in cc.config.bodies().enumerate() {
        let _ = write!(csv, "{i},{}", spec.masses[i]);
        for v in b {
            let _ = write!(csv, ",{v}");
        }
        csv.push('\n');
    }
    write(out, "central.csv", &csv)?;
    println!("U0 = {}, minimal across restarts: {}", cc.u0, cc.is_minimal);
    Ok(vec![Check::at_most("tangential_gradient", cc.residual, cfg.tol_or(config::DEFAULT_CENTRAL_TOL))])
}

fn cmd_parabolic(cfg: &ExperimentConfig, out: &Path) -> Result<Vec<Check>, CliError> {
    let spec = problem_spec(cfg)?;
    let p = &cfg.parabolic;
    let cc = find_central_configuration(&spec, cfg.seed, cfg.central.restarts)?;
    let amplitude = parabolic_amplitude(cc.u0, spec.kappa);
    let closed = parabolic_action_closed_form(&cc, &spec, p.horizon);
    let (kinetic, potential) = parabolic_action_quadrature(&cc, &spec, p.horizon, p.nodes)?;
    let relative = (kinetic + potential - closed).abs() / closed;
    let equipartition = (kinetic - potential).abs() / potential;
    let mut times = vec![0.0];
    let mut nodes = vec![Configuration::zeros(spec.n_bodies, spec.dim)];
    for k in 1..=p.samples {
        let t = p.horizon * k as f64 / p.samples as f64;
        times.push(t);
        nodes.push(parabolic_homothetic(&cc, &spec, t)?.0);
    }
    write(out, "parabolic.csv", &DiscretePath { times, nodes }.to_csv())?;
    write(
        out,
        "parabolic.json",
        &serde_json::to_string_pretty(&json!({
            "central_configuration": cc.config.coords,
            "u0": cc.u0,
            "amplitude": amplitude,
            "horizon": p.horizon,
            "nodes": p.nodes,
            "closed_form": closed,
            "kinetic": kinetic,
            "potential": potential,
        }))
        .expect("parabolic report serialises"),
    )?;
    Ok(vec![
        Check::at_most("relative_action_error", relative, cfg.tol_or(config::DEFAULT_PARABOLIC_TOL)),
        Check::at_most("equipartition_gap", equipartition, EQUIPARTITION_TOL),
    ])
}
