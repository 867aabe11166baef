use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use semivar::exec;
use semivar::variations::random_variation_bank;
use semivar_cli::{run, Experiment, RunConfig, Stage};

const CONFIG_HELP: &str = "\
CONFIG FILE (TOML, every key optional):
  experiment = \"example\"     # example | wiener | ou_control | custom
  n_steps    = 512
  m_paths    = 50000          # verdict stages need at least 1000
  seed       = 7
  alpha      = 0.01           # test level
  eps_list   = [0.001, 0.01]  # finite-difference steps
  output_dir = \"semivar-out\"
  [lagrangian]
  potential  = { kind = \"zero\" }   # quadratic{stiffness} | linear{coeffs}
                                     # double_well{depth} | cosine{amplitude,freq}
  [bank]
  size = 20
  clip_bound = 10.0
  seed = 11
  [custom]   # dX = (drift_const + drift_lin X) dt + sigma dB
  dim, initial = { kind = \"dirac\", point = [..] }, drift_const, drift_lin,
  sigma, terminal = { kind = \"gaussian\", mean, var }  (optional)

OUTPUTS: manifest.json, action.csv, criticality.csv, A_process.csv, x1_samples.csv
Floats are written with 17 significant digits.

EXIT STATUS: 0 when every enabled verdict passes, 1 when one fails, 2 on error.";

#[derive(Parser)]
#[command(name = "semivar", version, about = "Least-action experiments on semimartingale laws", after_help = CONFIG_HELP)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Full pipeline for the configured experiment.
    Run(Common),
    /// Full pipeline on the explicit example law.
    Example(Common),
    /// Action, projected derivatives along the bank and FD cross-checks.
    Criticality(Common),
    /// Euler-Lagrange decomposition and martingale test.
    ElTest(Common),
    /// Forward-backward system check against the endpoint laws.
    FbsVerify(Common),
    /// Print the variation bank as JSON.
    BankList(Common),
}

#[derive(Args)]
struct Common {
    /// TOML configuration file.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Overrides `experiment`.
    #[arg(long)]
    experiment: Option<Experiment>,
    /// Overrides `seed` (default 7).
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
    /// Overrides `n_steps` (default 512).
    #[arg(long, value_name = "N")]
    steps: Option<usize>,
    /// Overrides `m_paths` (default 50000).
    #[arg(long, value_name = "M")]
    paths: Option<usize>,
    /// Output directory; beats the config, default semivar-out.
    #[arg(long, value_name = "DIR", env = "SEMIVAR_OUT_DIR")]
    out: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long, value_name = "K")]
    threads: Option<usize>,
    /// Ordered reductions; results are bitwise independent of --threads.
    #[arg(long)]
    exact_repro: bool,
}

impl Common {
    fn config(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::from_file(p)?,
            None => RunConfig::default(),
        };
        if let Some(e) = self.experiment {
            cfg.experiment = e;
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(n) = self.steps {
            cfg.n_steps = n;
        }
        if let Some(m) = self.paths {
            cfg.m_paths = m;
        }
        if let Some(o) = &self.out {
            cfg.output_dir = o.clone();
        }
        Ok(cfg)
    }

    fn apply_execution(&self) -> Result<()> {
        exec::set_exact_repro(self.exact_repro);
        if let Some(k) = self.threads {
            #[cfg(feature = "parallel")]
            rayon::ThreadPoolBuilder::new()
                .num_threads(k)
                .build_global()
                .map_err(|e| anyhow::anyhow!("cannot configure the thread pool: {e}"))?;
            #[cfg(not(feature = "parallel"))]
            let _ = k;
        }
        Ok(())
    }
}

fn execute(cli: Cli) -> Result<bool> {
    let (name, common, stages): (&str, &Common, &[Stage]) = match &cli.command {
        Command::Run(c) => ("run", c, &Stage::ALL),
        Command::Example(c) => ("example", c, &Stage::ALL),
        Command::Criticality(c) => ("criticality", c, &[Stage::Action, Stage::Criticality]),
        Command::ElTest(c) => ("el-test", c, &[Stage::El]),
        Command::FbsVerify(c) => ("fbs-verify", c, &[Stage::Fbs]),
        Command::BankList(c) => {
            let cfg = c.config()?;
            let bank = random_variation_bank(cfg.bank.seed, cfg.bank.size, cfg.bank.clip_bound)?;
            println!("{}", serde_json::to_string_pretty(&bank)?);
            return Ok(true);
        }
    };
    common.apply_execution()?;
    let mut cfg = common.config()?;
    if name == "example" {
        cfg.experiment = Experiment::Example;
    }
    let manifest = run(&cfg, stages, name)?;
    for (k, v) in &manifest.verdicts {
        println!("{k:<20} {}", if *v { "pass" } else { "FAIL" });
    }
    println!(
        "manifest written to {}",
        cfg.output_dir.join("manifest.json").display()
    );
    Ok(manifest.pass)
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
