//! Experiment configuration: an optional TOML file overridden by flags.
//!
//! ```toml
//! [problem]
//! family = "max-quart"    # max-quart, euc-sum or max-eig
//! n = 10
//! k = 4                   # quartic families
//! m = 6                   # max-eig matrix order
//! seed = 7
//! # path = "problem.json" # load a serialized problem instead
//!
//! [pipeline]
//! phase1 = "bundle-method"  # or "bfgs"
//! rho = 1.0
//! beta = 1e-5
//! phase1_tolerance = 1e-6
//! phase1_max_iterations = 1000
//! bundle_size = 4           # omit to estimate from the phase-one candidates
//! rank_tolerance = 1e-3
//! variant = "convex"        # or "weakly-convex"
//! eta = "dynamic"           # or a number
//! subproblem = "auto"       # auto, full, reduced, reduced-projected
//! epsilon_bar = 1e-12
//! delta_bar = 1e-12
//! sigma = 1e-10
//! max_iterations = 500
//! start = [1.0, 1.0]
//!
//! [output]
//! trace = "trace.csv"
//! format = "csv"
//!
//! [bench]
//! ks = [2, 4, 6]
//! seeds = "0..20"
//! threads = 4
//! ```
//!
//! Unknown keys are rejected.

use std::fs;
use std::path::{Path, PathBuf};

use bundle_newton::pipeline::{Phase1Method, PipelineConfig};
use bundle_newton::{DVector, Eta, Family, SubproblemPath, Variant};
use clap::ValueEnum;
use serde::Deserialize;

use crate::CliError;

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub problem: ProblemSection,
    #[serde(default)]
    pub pipeline: PipelineSection,
    #[serde(default)]
    pub output: OutputSection,
    #[serde(default)]
    pub bench: BenchSection,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSection {
    pub family: Option<Family>,
    pub n: Option<usize>,
    pub k: Option<usize>,
    pub m: Option<usize>,
    pub seed: Option<u64>,
    pub path: Option<PathBuf>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineSection {
    pub phase1: Option<Phase1Choice>,
    pub rho: Option<f64>,
    pub beta: Option<f64>,
    pub phase1_tolerance: Option<f64>,
    pub phase1_max_iterations: Option<usize>,
    pub bundle_size: Option<usize>,
    pub rank_tolerance: Option<f64>,
    pub variant: Option<VariantChoice>,
    pub eta: Option<EtaSetting>,
    pub subproblem: Option<PathChoice>,
    pub epsilon_bar: Option<f64>,
    pub delta_bar: Option<f64>,
    pub sigma: Option<f64>,
    pub max_iterations: Option<usize>,
    pub start: Option<Vec<f64>>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub trace: Option<PathBuf>,
    pub format: Option<Format>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchSection {
    pub ks: Option<Vec<usize>>,
    pub seeds: Option<String>,
    pub threads: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Phase1Choice {
    BundleMethod,
    Bfgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum VariantChoice {
    Convex,
    WeaklyConvex,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum PathChoice {
    Auto,
    Full,
    Reduced,
    ReducedProjected,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Format {
    Csv,
}

/// `"dynamic"` or a fixed nonnegative shift.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(untagged)]
pub enum EtaSetting {
    Value(f64),
    Name(String),
}

impl EtaSetting {
    pub fn parse(s: &str) -> Result<Self, String> {
        if s == "dynamic" {
            return Ok(EtaSetting::Name(s.into()));
        }
        s.parse().map(EtaSetting::Value).map_err(|_| format!("eta must be \"dynamic\" or a number, got {s:?}"))
    }

    fn to_eta(&self) -> Result<Eta, CliError> {
        match self {
            EtaSetting::Value(v) => Ok(Eta::Fixed(*v)),
            EtaSetting::Name(s) if s == "dynamic" => Ok(Eta::Dynamic),
            EtaSetting::Name(s) => Err(CliError::Config(format!("eta must be \"dynamic\" or a number, got {s:?}"))),
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Io(format!("reading {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }
}

impl PipelineSection {
    /// Fills unset fields from `other`; values already present win.
    pub fn or(self, other: PipelineSection) -> PipelineSection {
        PipelineSection {
            phase1: self.phase1.or(other.phase1),
            rho: self.rho.or(other.rho),
            beta: self.beta.or(other.beta),
            phase1_tolerance: self.phase1_tolerance.or(other.phase1_tolerance),
            phase1_max_iterations: self.phase1_max_iterations.or(other.phase1_max_iterations),
            bundle_size: self.bundle_size.or(other.bundle_size),
            rank_tolerance: self.rank_tolerance.or(other.rank_tolerance),
            variant: self.variant.or(other.variant),
            eta: self.eta.or(other.eta),
            subproblem: self.subproblem.or(other.subproblem),
            epsilon_bar: self.epsilon_bar.or(other.epsilon_bar),
            delta_bar: self.delta_bar.or(other.delta_bar),
            sigma: self.sigma.or(other.sigma),
            max_iterations: self.max_iterations.or(other.max_iterations),
            start: self.start.or(other.start),
        }
    }

    /// The family defaults with every set field applied on top.
    pub fn resolve(&self, family: Family) -> Result<PipelineConfig, CliError> {
        let mut c = PipelineConfig::for_family(family);
        if let Some(p) = self.phase1 {
            c.phase1 = match p {
                Phase1Choice::BundleMethod => Phase1Method::BundleMethod,
                Phase1Choice::Bfgs => Phase1Method::Bfgs,
            };
        }
        let bm = &mut c.bundle_method;
        bm.rho = self.rho.unwrap_or(bm.rho);
        bm.beta = self.beta.unwrap_or(bm.beta);
        bm.epsilon_bar = self.phase1_tolerance.unwrap_or(bm.epsilon_bar);
        if let Some(it) = self.phase1_max_iterations {
            bm.max_iterations = it;
            c.bfgs.max_iterations = it;
        }
        c.bundle_size = self.bundle_size.or(c.bundle_size);
        c.rank_tolerance = self.rank_tolerance.unwrap_or(c.rank_tolerance);
        let nc = &mut c.newton;
        if let Some(v) = self.variant {
            nc.variant = match v {
                VariantChoice::Convex => Variant::Convex,
                VariantChoice::WeaklyConvex => Variant::WeaklyConvex,
            };
        }
        if let Some(eta) = &self.eta {
            nc.eta = eta.to_eta()?;
        }
        if let Some(p) = self.subproblem {
            nc.path = match p {
                PathChoice::Auto => SubproblemPath::Auto,
                PathChoice::Full => SubproblemPath::Full,
                PathChoice::Reduced => SubproblemPath::Reduced { project_anchors: false },
                PathChoice::ReducedProjected => SubproblemPath::Reduced { project_anchors: true },
            };
        }
        nc.epsilon_bar = self.epsilon_bar.unwrap_or(nc.epsilon_bar);
        nc.delta_bar = self.delta_bar.unwrap_or(nc.delta_bar);
        nc.sigma = self.sigma.unwrap_or(nc.sigma);
        nc.max_iterations = self.max_iterations.unwrap_or(nc.max_iterations);
        c.start = self.start.as_ref().map(|s| DVector::from_vec(s.clone()));
        Ok(c)
    }
}

/// Parses `a..b` (half-open) or a single seed.
pub fn parse_seeds(s: &str) -> Result<Vec<u64>, CliError> {
    let bad = || CliError::Config(format!("seeds must look like \"0..20\" or \"7\", got {s:?}"));
    match s.split_once("..") {
        Some((a, b)) => {
            let a: u64 = a.trim().parse().map_err(|_| bad())?;
            let b: u64 = b.trim().parse().map_err(|_| bad())?;
            if a >= b {
                return Err(bad());
            }
            Ok((a..b).collect())
        }
        None => Ok(vec![s.trim().parse().map_err(|_| bad())?]),
    }
}
