//! Run configuration read from TOML.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use semivar::fbs::Marginal;
use semivar::semimartingale::InitialLaw;
use semivar::PotentialSpec;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Experiment {
    /// The explicit critical law with Gaussian terminal marginal.
    Example,
    /// Standard Brownian motion.
    Wiener,
    /// `dX = dB + X dt`, the non-critical control.
    OuControl,
    /// A linear SDE described in `[custom]`.
    Custom,
}

impl std::str::FromStr for Experiment {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "example" => Ok(Experiment::Example),
            "wiener" => Ok(Experiment::Wiener),
            "ou_control" => Ok(Experiment::OuControl),
            "custom" => Ok(Experiment::Custom),
            other => bail!(
                "unknown experiment `{other}` (expected example, wiener, ou_control or custom)"
            ),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LagrangianConfig {
    pub potential: PotentialSpec,
}

impl Default for LagrangianConfig {
    fn default() -> Self {
        Self {
            potential: PotentialSpec::Zero,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BankConfig {
    pub size: usize,
    pub clip_bound: f64,
    pub seed: u64,
}

impl Default for BankConfig {
    fn default() -> Self {
        Self {
            size: 20,
            clip_bound: 10.0,
            seed: 11,
        }
    }
}

/// `dX = (drift_const + drift_lin X) dt + sigma dB`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CustomConfig {
    pub dim: usize,
    pub initial: InitialLaw,
    pub drift_const: Vec<f64>,
    pub drift_lin: Vec<f64>,
    pub sigma: Vec<f64>,
    /// Law of coordinate 0 at time 1; the FBS stage is skipped without it.
    pub terminal: Option<Marginal>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub experiment: Experiment,
    pub n_steps: usize,
    pub m_paths: usize,
    pub seed: u64,
    pub alpha: f64,
    pub eps_list: Vec<f64>,
    pub output_dir: PathBuf,
    pub lagrangian: LagrangianConfig,
    pub bank: BankConfig,
    pub custom: Option<CustomConfig>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            experiment: Experiment::Example,
            n_steps: 512,
            m_paths: 50_000,
            seed: 7,
            alpha: 0.01,
            eps_list: vec![1e-3, 1e-2],
            output_dir: PathBuf::from("semivar-out"),
            lagrangian: LagrangianConfig::default(),
            bank: BankConfig::default(),
            custom: None,
        }
    }
}

const TOP_KEYS: &[&str] = &[
    "experiment",
    "n_steps",
    "m_paths",
    "seed",
    "alpha",
    "eps_list",
    "output_dir",
    "lagrangian",
    "bank",
    "custom",
];
const LAGRANGIAN_KEYS: &[&str] = &["potential"];
const BANK_KEYS: &[&str] = &["size", "clip_bound", "seed"];
const CUSTOM_KEYS: &[&str] = &[
    "dim",
    "initial",
    "drift_const",
    "drift_lin",
    "sigma",
    "terminal",
];

/// Every key of `table` (recursing into the known sections) that the
/// configuration does not define.
fn unknown_keys(table: &toml::Table) -> Vec<String> {
    let mut bad = BTreeSet::new();
    for (k, v) in table {
        let known = match k.as_str() {
            "lagrangian" => Some(LAGRANGIAN_KEYS),
            "bank" => Some(BANK_KEYS),
            "custom" => Some(CUSTOM_KEYS),
            _ => None,
        };
        if !TOP_KEYS.contains(&k.as_str()) {
            bad.insert(k.clone());
        } else if let (Some(known), Some(sub)) = (known, v.as_table()) {
            for sk in sub.keys() {
                if !known.contains(&sk.as_str()) {
                    bad.insert(format!("{k}.{sk}"));
                }
            }
        }
    }
    bad.into_iter().collect()
}

/// Partial view used to merge a file over the defaults.
#[derive(Deserialize)]
struct FileConfig {
    experiment: Option<String>,
    n_steps: Option<usize>,
    m_paths: Option<usize>,
    seed: Option<u64>,
    alpha: Option<f64>,
    eps_list: Option<Vec<f64>>,
    output_dir: Option<PathBuf>,
    lagrangian: Option<LagrangianConfig>,
    bank: Option<FileBank>,
    custom: Option<CustomConfig>,
}

#[derive(Deserialize)]
struct FileBank {
    size: Option<usize>,
    clip_bound: Option<f64>,
    seed: Option<u64>,
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let table: toml::Table = text.parse().context("config is not valid TOML")?;
        let bad = unknown_keys(&table);
        if !bad.is_empty() {
            bail!("unknown config keys: {}", bad.join(", "));
        }
        let file: FileConfig = table.try_into().context("malformed config")?;
        let mut cfg = RunConfig::default();
        if let Some(e) = file.experiment {
            cfg.experiment = e.parse()?;
        }
        cfg.n_steps = file.n_steps.unwrap_or(cfg.n_steps);
        cfg.m_paths = file.m_paths.unwrap_or(cfg.m_paths);
        cfg.seed = file.seed.unwrap_or(cfg.seed);
        cfg.alpha = file.alpha.unwrap_or(cfg.alpha);
        cfg.eps_list = file.eps_list.unwrap_or(cfg.eps_list);
        cfg.output_dir = file.output_dir.unwrap_or(cfg.output_dir);
        cfg.lagrangian = file.lagrangian.unwrap_or(cfg.lagrangian);
        if let Some(b) = file.bank {
            cfg.bank.size = b.size.unwrap_or(cfg.bank.size);
            cfg.bank.clip_bound = b.clip_bound.unwrap_or(cfg.bank.clip_bound);
            cfg.bank.seed = b.seed.unwrap_or(cfg.bank.seed);
        }
        cfg.custom = file.custom;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config {}", path.display()))?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.n_steps == 0 {
            problems.push("n_steps must be positive".to_string());
        }
        if self.m_paths == 0 {
            problems.push("m_paths must be positive".to_string());
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            problems.push("alpha must lie in (0, 1)".to_string());
        }
        if self.eps_list.iter().any(|e| !(*e > 0.0 && e.is_finite())) {
            problems.push("eps_list entries must be positive".to_string());
        }
        if self.bank.size == 0 {
            problems.push("bank.size must be positive".to_string());
        }
        if !(self.bank.clip_bound > 0.0) {
            problems.push("bank.clip_bound must be positive".to_string());
        }
        if self.experiment == Experiment::Custom && self.custom.is_none() {
            problems.push("experiment = \"custom\" needs a [custom] section".to_string());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(anyhow!("invalid config: {}", problems.join("; ")))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let cfg = RunConfig::from_toml_str("").unwrap();
        assert_eq!(cfg, RunConfig::default());
        cfg.validate().unwrap();
    }

    #[test]
    fn sections_merge_over_defaults() {
        let cfg = RunConfig::from_toml_str(
            r#"
            experiment = "ou_control"
            n_steps = 64
            [bank]
            size = 5
            [lagrangian]
            potential = { kind = "quadratic", stiffness = 2.0 }
            "#,
        )
        .unwrap();
        assert_eq!(cfg.experiment, Experiment::OuControl);
        assert_eq!(cfg.n_steps, 64);
        assert_eq!(cfg.m_paths, 50_000);
        assert_eq!(cfg.bank.size, 5);
        assert_eq!(cfg.bank.clip_bound, 10.0);
        assert_eq!(
            cfg.lagrangian.potential,
            PotentialSpec::Quadratic { stiffness: 2.0 }
        );
    }

    #[test]
    fn every_unknown_key_is_listed() {
        let err = RunConfig::from_toml_str(
            r#"
            n_step = 3
            colour = "red"
            [bank]
            sise = 2
            "#,
        )
        .unwrap_err()
        .to_string();
        assert!(err.contains("bank.sise"), "{err}");
        assert!(err.contains("colour"), "{err}");
        assert!(err.contains("n_step"), "{err}");
    }

    #[test]
    fn unknown_experiment_rejected() {
        let err = RunConfig::from_toml_str("experiment = \"heat\"").unwrap_err();
        assert!(err.to_string().contains("heat"));
    }

    #[test]
    fn validation_collects_problems() {
        let cfg = RunConfig {
            n_steps: 0,
            alpha: 1.5,
            experiment: Experiment::Custom,
            ..RunConfig::default()
        };
        let err = cfg.validate().unwrap_err().to_string();
        assert!(
            err.contains("n_steps") && err.contains("alpha") && err.contains("[custom]"),
            "{err}"
        );
    }

    #[test]
    fn custom_section_parses() {
        let cfg = RunConfig::from_toml_str(
            r#"
            experiment = "custom"
            [custom]
            dim = 1
            initial = { kind = "dirac", point = [0.0] }
            drift_const = [1.0]
            drift_lin = [0.0]
            sigma = [0.0]
            terminal = { kind = "dirac", point = 1.0 }
            "#,
        )
        .unwrap();
        cfg.validate().unwrap();
        assert_eq!(
            cfg.custom.unwrap().terminal,
            Some(Marginal::Dirac { point: 1.0 })
        );
    }
}
