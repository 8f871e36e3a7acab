//! Run configuration: a TOML file with global keys and one `[[experiment]]`
//! table per experiment.
//!
//! ```toml
//! seed = 0                # randomized field pairs (general-operator)
//! tolerance_scale = 1.0   # multiplies every residual threshold
//! out = "results"         # output directory unless --out is given
//!
//! [[experiment]]
//! name = "diffusion-1d"
//! nodes = [1024, 2048]    # refinement levels, at least two
//! alpha = [0.3, 0.5, 0.8] # every alpha in (0, 1) for diffusion experiments
//! diffusivity = 0.5       # C, the lambda^2 of the equation
//! k = [1.0]               # mode wavenumbers
//! dim = 2                 # space dimension (diffusion-dd)
//! spec = "op.toml"        # operator spec (general-operator), relative to the config
//! ```
//!
//! Every key except `name` has a per-experiment default, listed by
//! [`Experiment::defaults`].

use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::CliError;

/// The experiments the runner knows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    VerifyOps,
    VerifyLeibniz,
    MlAccuracy,
    Diffusion1d,
    DiffusionDd,
    Currents,
    Charges,
    GeneralOperator,
}

impl Experiment {
    pub const ALL: [Experiment; 8] = [
        Experiment::VerifyOps,
        Experiment::VerifyLeibniz,
        Experiment::MlAccuracy,
        Experiment::Diffusion1d,
        Experiment::DiffusionDd,
        Experiment::Currents,
        Experiment::Charges,
        Experiment::GeneralOperator,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Experiment::VerifyOps => "verify-ops",
            Experiment::VerifyLeibniz => "verify-leibniz",
            Experiment::MlAccuracy => "ml-accuracy",
            Experiment::Diffusion1d => "diffusion-1d",
            Experiment::DiffusionDd => "diffusion-dd",
            Experiment::Currents => "currents",
            Experiment::Charges => "charges",
            Experiment::GeneralOperator => "general-operator",
        }
    }

    pub fn parse(name: &str) -> Option<Experiment> {
        Experiment::ALL.into_iter().find(|e| e.name() == name)
    }

    /// Whether `alpha` is the time order of a diffusion equation, and so
    /// restricted to `(0, 1)`.
    fn is_diffusion(self) -> bool {
        matches!(
            self,
            Experiment::Diffusion1d
                | Experiment::DiffusionDd
                | Experiment::Currents
                | Experiment::Charges
                | Experiment::GeneralOperator
        )
    }

    /// Default parameters.
    pub fn defaults(self) -> Params {
        let (nodes, alpha): (Vec<usize>, Vec<f64>) = match self {
            Experiment::VerifyOps => (vec![1024, 2048, 4096], vec![0.25, 0.5, 0.75, 1.25]),
            Experiment::VerifyLeibniz => (vec![256, 512, 1024], vec![0.5]),
            Experiment::MlAccuracy => (vec![1000, 4000], vec![0.3, 0.5, 0.8, 1.2, 1.5, 1.8]),
            Experiment::Diffusion1d => (vec![1024, 2048], vec![0.3, 0.5, 0.8]),
            Experiment::DiffusionDd => (vec![1024, 2048], vec![0.5]),
            Experiment::Currents => (vec![64, 128, 256], vec![0.3, 0.5]),
            Experiment::Charges => (vec![64, 128, 256], vec![0.5]),
            Experiment::GeneralOperator => (vec![64, 128], vec![0.5]),
        };
        Params { nodes, alpha, diffusivity: 0.5, k: vec![1.0], dim: 2, spec: None, tolerance_scale: 1.0 }
    }
}

/// Resolved parameters of one experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    pub nodes: Vec<usize>,
    pub alpha: Vec<f64>,
    pub diffusivity: f64,
    pub k: Vec<f64>,
    pub dim: usize,
    pub spec: Option<PathBuf>,
    pub tolerance_scale: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawExperiment {
    name: String,
    nodes: Option<Vec<usize>>,
    alpha: Option<Vec<f64>>,
    diffusivity: Option<f64>,
    k: Option<Vec<f64>>,
    dim: Option<usize>,
    spec: Option<PathBuf>,
    tolerance_scale: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    seed: Option<u64>,
    tolerance_scale: Option<f64>,
    out: Option<PathBuf>,
    #[serde(default)]
    experiment: Vec<RawExperiment>,
}

/// One experiment to run.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    pub params: Params,
}

/// A parsed and validated run configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub out: PathBuf,
    pub experiments: Vec<ExperimentConfig>,
}

impl RunConfig {
    /// Reads `path`; relative spec paths resolve against its directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn parse(text: &str, base: &Path) -> Result<Self, CliError> {
        let raw: RawConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        let global_scale = raw.tolerance_scale.unwrap_or(1.0);
        let mut experiments = Vec::new();
        for r in raw.experiment {
            let experiment = Experiment::parse(&r.name)
                .ok_or_else(|| CliError::Config(format!("unknown experiment '{}'", r.name)))?;
            let d = experiment.defaults();
            let params = Params {
                nodes: r.nodes.unwrap_or(d.nodes),
                alpha: r.alpha.unwrap_or(d.alpha),
                diffusivity: r.diffusivity.unwrap_or(d.diffusivity),
                k: r.k.unwrap_or(d.k),
                dim: r.dim.unwrap_or(d.dim),
                spec: r.spec.map(|p| if p.is_relative() { base.join(p) } else { p }),
                tolerance_scale: r.tolerance_scale.unwrap_or(global_scale),
            };
            validate(experiment, &params)?;
            experiments.push(ExperimentConfig { experiment, params });
        }
        if experiments.is_empty() {
            return Err(CliError::Config("the config lists no [[experiment]]".into()));
        }
        Ok(RunConfig { seed: raw.seed.unwrap_or(0), out: raw.out.unwrap_or_else(|| "results".into()), experiments })
    }
}

fn validate(e: Experiment, p: &Params) -> Result<(), CliError> {
    let fail = |m: String| Err(CliError::Config(format!("{}: {m}", e.name())));
    if p.nodes.len() < 2 {
        return fail("at least two refinement levels are needed".into());
    }
    if p.nodes.windows(2).any(|w| w[1] <= w[0]) || p.nodes[0] < 4 {
        return fail(format!("refinement levels must increase from at least 4, got {:?}", p.nodes));
    }
    if p.alpha.is_empty() || p.alpha.iter().any(|a| !a.is_finite() || *a <= 0.0) {
        return fail(format!("orders must be positive, got {:?}", p.alpha));
    }
    if e.is_diffusion() && p.alpha.iter().any(|&a| a >= 1.0) {
        return fail(format!("diffusion orders must lie in (0, 1), got {:?}", p.alpha));
    }
    if e == Experiment::VerifyLeibniz && p.alpha.iter().any(|&a| a >= 1.0) {
        return fail(format!("leibniz orders must lie in (0, 1), got {:?}", p.alpha));
    }
    if !(p.diffusivity > 0.0 && p.diffusivity.is_finite()) {
        return fail(format!("diffusivity must be positive, got {}", p.diffusivity));
    }
    if p.k.is_empty() || p.k.iter().any(|k| !k.is_finite()) {
        return fail("k needs at least one finite wavenumber".into());
    }
    if !(1..=3).contains(&p.dim) {
        return fail(format!("dim must be 1, 2 or 3, got {}", p.dim));
    }
    if !(p.tolerance_scale >= 0.0 && p.tolerance_scale.is_finite()) {
        return fail(format!("tolerance_scale must be nonnegative, got {}", p.tolerance_scale));
    }
    Ok(())
}
