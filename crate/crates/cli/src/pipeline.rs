//! The experiment pipeline behind every subcommand.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufWriter;
use std::path::Path;
use std::time::Instant;

use anyhow::{Context, Result};
use semivar::action::{
    action, criticality_test, el_residual, projected_gateaux, projected_gateaux_fd,
    CriticalityReport, TolerancePolicy,
};
use semivar::euler_lagrange::{decompose, el_verdict, ELReport};
use semivar::exec;
use semivar::fbs::{
    example_model, fbs_verify, oracle_path, target_cdf, FbsReport, Marginal, EXAMPLE_ACTION,
    TARGET_MEAN, TARGET_VAR,
};
use semivar::io::{fmt_f64, write_csv};
use semivar::semimartingale::{adaptedness_audit, AuditReport, InitialLaw};
use semivar::stats::{fill_path_noise, ks_test, mean_var};
use semivar::variations::{random_variation_bank, variation_adaptedness_audit, VariationProcess};
use semivar::{make_grid, make_qem, Estimate, LinearSde, PathEnsemble, SemimartingaleModel};
use serde::{Deserialize, Serialize};

use crate::config::{Experiment, RunConfig};

/// Pipeline stages; each subcommand enables a subset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Action,
    El,
    Criticality,
    Example,
    Fbs,
    Audit,
}

impl Stage {
    pub const ALL: [Stage; 6] = [
        Stage::Action,
        Stage::El,
        Stage::Criticality,
        Stage::Example,
        Stage::Fbs,
        Stage::Audit,
    ];
}

pub const ACTION_TOL: f64 = 0.02;
pub const MEAN_TOL: f64 = 0.03;
pub const VAR_TOL: f64 = 0.06;
pub const A_SUP_TOL: f64 = 0.05;
pub const QV_TOL: f64 = 0.05;
/// Bank members that also get the finite-difference comparison.
pub const FD_MEMBERS: usize = 3;
const AUDIT_CHECKS: usize = 200;
const VARIATION_AUDIT_CHECKS: usize = 50;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationSummary {
    pub model: String,
    pub dim: usize,
    pub n_steps: usize,
    pub m_paths: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionStage {
    pub estimate: Estimate,
    pub oracle: Option<f64>,
    pub pass: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElStage {
    pub report: ELReport,
    /// `sup_i |A_i - e^{t_i}|`, example only.
    pub a_sup_error: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FdCheck {
    pub variation_id: String,
    pub eps: f64,
    pub analytic: f64,
    pub fd: f64,
    pub abs_err: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriticalityStage {
    pub report: CriticalityReport,
    pub fd_checks: Vec<FdCheck>,
    pub fd_pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExampleStage {
    pub mean: f64,
    pub var: f64,
    pub ks_statistic: f64,
    pub ks_p: f64,
    pub marginal_pass: bool,
    /// Mean over paths of the sup distance to the closed form on the same noise.
    pub oracle_sup_error: f64,
    /// One grid step; the Euler scheme is first order here.
    pub oracle_tol: f64,
    pub oracle_pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditStage {
    pub model: AuditReport,
    pub variations_checked: usize,
    pub variation_failures: Vec<String>,
    pub pass: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Stages {
    pub simulation: Option<SimulationSummary>,
    pub action: Option<ActionStage>,
    pub el: Option<ElStage>,
    pub criticality: Option<CriticalityStage>,
    pub example: Option<ExampleStage>,
    pub fbs: Option<FbsReport>,
    pub audit: Option<AuditStage>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub config: RunConfig,
    pub exact_repro: bool,
    pub bank: Vec<VariationProcess>,
    pub stages: Stages,
    pub verdicts: BTreeMap<String, bool>,
    pub pass: bool,
    pub wall_time_s: f64,
}

impl RunManifest {
    /// Manifest JSON without the wall time, for reproducibility comparisons.
    pub fn reproducible_json(&self) -> serde_json::Value {
        let mut v = serde_json::to_value(self).expect("manifest serializes");
        if let Some(o) = v.as_object_mut() {
            o.remove("wall_time_s");
        }
        v
    }
}

fn model_for(cfg: &RunConfig) -> Result<Box<dyn SemimartingaleModel>> {
    Ok(match cfg.experiment {
        Experiment::Example => Box::new(example_model()),
        Experiment::Wiener => Box::new(LinearSde::wiener(1)),
        Experiment::OuControl => Box::new(LinearSde::exponential_growth()),
        Experiment::Custom => {
            let c = cfg.custom.as_ref().context("missing [custom] section")?;
            Box::new(LinearSde::new(
                c.dim,
                c.initial.clone(),
                c.drift_const.clone(),
                c.drift_lin.clone(),
                c.sigma.clone(),
                "custom",
            )?)
        }
    })
}

fn action_oracle(exp: Experiment) -> Option<f64> {
    match exp {
        Experiment::Example => Some(EXAMPLE_ACTION),
        Experiment::Wiener => Some(0.0),
        _ => None,
    }
}

/// Endpoint laws of coordinate 0, when known.
fn marginals(cfg: &RunConfig) -> Option<(Marginal, Marginal)> {
    let e = std::f64::consts::E;
    match cfg.experiment {
        Experiment::Example => Some((Marginal::Dirac { point: 0.0 }, Marginal::example_terminal())),
        Experiment::Wiener => Some((
            Marginal::Dirac { point: 0.0 },
            Marginal::Gaussian {
                mean: 0.0,
                var: 1.0,
            },
        )),
        Experiment::OuControl => Some((
            Marginal::Dirac { point: 0.0 },
            Marginal::Gaussian {
                mean: 0.0,
                var: (e * e - 1.0) / 2.0,
            },
        )),
        Experiment::Custom => {
            let c = cfg.custom.as_ref()?;
            let nu1 = c.terminal?;
            let nu0 = match &c.initial {
                InitialLaw::Dirac { point } => Marginal::Dirac { point: point[0] },
                InitialLaw::Gaussian { mean, sd } => Marginal::Gaussian {
                    mean: mean[0],
                    var: sd[0] * sd[0],
                },
            };
            Some((nu0, nu1))
        }
    }
}

fn fd_agrees(analytic: f64, fd: f64) -> bool {
    let err = (fd - analytic).abs();
    if analytic.abs() < 0.05 {
        err < 1e-3
    } else {
        err < 0.01 * analytic.abs()
    }
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    let path = dir.join(name);
    let f = File::create(&path).with_context(|| format!("cannot write {}", path.display()))?;
    Ok(BufWriter::new(f))
}

fn example_stage(cfg: &RunConfig, e: &PathEnsemble) -> Result<ExampleStage> {
    let x1 = e.terminal_marginal(0);
    let (mean, var) = mean_var(&x1);
    let ks = ks_test(&x1, target_cdf)?;
    let marginal_pass = (mean - TARGET_MEAN).abs() < MEAN_TOL
        && (var - TARGET_VAR).abs() < VAR_TOL
        && ks.p_value > cfg.alpha;
    let n = e.n_steps();
    let dt = e.grid.dt();
    let errs = exec::map_indexed(e.m_paths, |p| {
        let mut inc = vec![0.0; n];
        fill_path_noise(cfg.seed, p, dt, &mut inc);
        let (x, _) = oracle_path(&inc, dt);
        e.path(p)
            .iter()
            .zip(&x)
            .fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()))
    });
    let oracle_sup_error = exec::ordered_sum(errs) / e.m_paths as f64;
    Ok(ExampleStage {
        mean,
        var,
        ks_statistic: ks.statistic,
        ks_p: ks.p_value,
        marginal_pass,
        oracle_sup_error,
        oracle_tol: dt,
        oracle_pass: oracle_sup_error < dt,
    })
}

/// Runs the enabled stages, writes the artifacts into the output directory
/// and returns the manifest (also written as `manifest.json`).
pub fn run(cfg: &RunConfig, stages: &[Stage], command: &str) -> Result<RunManifest> {
    cfg.validate()?;
    let start = Instant::now();
    let on = |s: Stage| stages.contains(&s);
    let out = cfg.output_dir.as_path();
    std::fs::create_dir_all(out)
        .with_context(|| format!("cannot create output directory {}", out.display()))?;

    let grid = make_grid(cfg.n_steps)?;
    let model = model_for(cfg)?;
    let lagrangian = make_qem(cfg.lagrangian.potential.clone());
    let bank = random_variation_bank(cfg.bank.seed, cfg.bank.size, cfg.bank.clip_bound)?;
    let mut result = Stages::default();
    let mut verdicts = BTreeMap::new();

    let e = semivar::simulate(model.as_ref(), &grid, cfg.m_paths, cfg.seed)?;
    result.simulation = Some(SimulationSummary {
        model: model.descriptor(),
        dim: e.dim,
        n_steps: cfg.n_steps,
        m_paths: cfg.m_paths,
        seed: cfg.seed,
    });
    {
        let x1 = e.terminal_marginal(0);
        let rows: Vec<Vec<String>> = x1.iter().map(|&v| vec![fmt_f64(v)]).collect();
        write_csv(create(out, "x1_samples.csv")?, &["x1"], &rows)?;
    }

    if on(Stage::Action) {
        let estimate = action(&e, &lagrangian)?;
        let oracle = action_oracle(cfg.experiment)
            .filter(|_| cfg.lagrangian.potential == semivar::PotentialSpec::Zero);
        let pass = oracle.map(|o| (estimate.value - o).abs() < ACTION_TOL);
        write_csv(
            create(out, "action.csv")?,
            &["action", "se", "m_paths", "oracle"],
            &[vec![
                fmt_f64(estimate.value),
                fmt_f64(estimate.se),
                estimate.n.to_string(),
                oracle.map(fmt_f64).unwrap_or_default(),
            ]],
        )?;
        if let Some(p) = pass {
            verdicts.insert("action_oracle".into(), p);
        }
        result.action = Some(ActionStage {
            estimate,
            oracle,
            pass,
        });
    }

    if on(Stage::El) {
        let d = decompose(&el_residual(&e, &lagrangian)?)?;
        d.write_a_csv(create(out, "A_process.csv")?)?;
        let report = el_verdict(&d, Some(&e), cfg.alpha)?;
        let a_sup_error = (cfg.experiment == Experiment::Example
            && cfg.lagrangian.potential == semivar::PotentialSpec::Zero)
            .then(|| {
                (0..d.n_steps())
                    .map(|i| (d.a[i] - grid.t(i).exp()).abs())
                    .fold(0.0, f64::max)
            });
        verdicts.insert("el".into(), report.pass);
        if let Some(s) = a_sup_error {
            verdicts.insert("a_process_oracle".into(), s < A_SUP_TOL);
        }
        result.el = Some(ElStage {
            report,
            a_sup_error,
        });
    }

    if on(Stage::Criticality) {
        let mut report =
            criticality_test(&e, &lagrangian, &bank, TolerancePolicy::default(), None)?;
        let residual = el_residual(&e, &lagrangian)?;
        let mut fd_checks = Vec::new();
        for k in bank.iter().take(FD_MEMBERS) {
            let analytic = projected_gateaux(&residual, &e, k)?.value;
            for (j, &eps) in cfg.eps_list.iter().enumerate() {
                let fd = projected_gateaux_fd(&e, &lagrangian, k, eps)?.value;
                if j == 0 {
                    if let Some(row) = report.rows.iter_mut().find(|r| r.variation_id == k.id) {
                        row.ds_fd = Some(fd);
                    }
                }
                fd_checks.push(FdCheck {
                    variation_id: k.id.clone(),
                    eps,
                    analytic,
                    fd,
                    abs_err: (fd - analytic).abs(),
                    pass: fd_agrees(analytic, fd),
                });
            }
        }
        report.fd_eps = cfg.eps_list.first().copied();
        report.write_csv(create(out, "criticality.csv")?)?;
        let fd_pass = fd_checks.iter().all(|c| c.pass);
        verdicts.insert("critical".into(), report.critical);
        verdicts.insert("fd_agreement".into(), fd_pass);
        result.criticality = Some(CriticalityStage {
            report,
            fd_checks,
            fd_pass,
        });
    }

    if on(Stage::Example) && cfg.experiment == Experiment::Example {
        let s = example_stage(cfg, &e)?;
        verdicts.insert("marginal".into(), s.marginal_pass);
        verdicts.insert("oracle_comparison".into(), s.oracle_pass);
        result.example = Some(s);
    }

    if on(Stage::Fbs) {
        if let Some((nu0, nu1)) = marginals(cfg) {
            let r = fbs_verify(&e, &cfg.lagrangian.potential, nu0, nu1, cfg.alpha, QV_TOL)?;
            verdicts.insert("fbs".into(), r.verdict);
            result.fbs = Some(r);
        }
    }

    if on(Stage::Audit) {
        let model_audit = adaptedness_audit(model.as_ref(), &e, AUDIT_CHECKS, cfg.seed)?;
        let mut variation_failures = Vec::new();
        for k in &bank {
            let a = variation_adaptedness_audit(k, &e, VARIATION_AUDIT_CHECKS, cfg.seed)?;
            if !a.pass {
                variation_failures.push(k.id.clone());
            }
        }
        let pass = model_audit.pass && variation_failures.is_empty();
        verdicts.insert("audits".into(), pass);
        result.audit = Some(AuditStage {
            model: model_audit,
            variations_checked: bank.len(),
            variation_failures,
            pass,
        });
    }

    let pass = verdicts.values().all(|&v| v);
    let manifest = RunManifest {
        tool: env!("CARGO_PKG_NAME").to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        command: command.to_string(),
        config: cfg.clone(),
        exact_repro: exec::exact_repro(),
        bank,
        stages: result,
        verdicts,
        pass,
        wall_time_s: start.elapsed().as_secs_f64(),
    };
    serde_json::to_writer_pretty(create(out, "manifest.json")?, &manifest)?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fd_rule_switches_at_small_values() {
        assert!(fd_agrees(0.01, 0.0105));
        assert!(!fd_agrees(0.01, 0.012));
        assert!(fd_agrees(1.0, 1.009));
        assert!(!fd_agrees(1.0, 1.011));
    }

    #[test]
    fn ou_terminal_variance() {
        let cfg = RunConfig {
            experiment: Experiment::OuControl,
            ..RunConfig::default()
        };
        let (_, nu1) = marginals(&cfg).unwrap();
        match nu1 {
            Marginal::Gaussian { var, .. } => assert!((var - 3.194528).abs() < 1e-6),
            _ => panic!(),
        }
    }
}
