//! Experiment configuration: TOML or JSON, one schema.

use std::path::Path;

use adhp::model::{InitialDensity, Intensity, Kernel, ModelParams, Preset};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Kind {
    Pde,
    Simulate,
    Couple,
    Rates,
    Clt,
    Spde,
}

impl Kind {
    pub fn name(&self) -> &'static str {
        match self {
            Kind::Pde => "pde",
            Kind::Simulate => "simulate",
            Kind::Couple => "couple",
            Kind::Rates => "rates",
            Kind::Clt => "clt",
            Kind::Spde => "spde",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    /// Preset name; the optional tables below replace single ingredients.
    pub preset: String,
    /// Particles per system (simulate, couple, clt).
    #[serde(default = "default_n")]
    pub n: usize,
    /// T, in time units.
    pub horizon: f64,
    #[serde(default)]
    pub intensity: Option<Intensity>,
    #[serde(default)]
    pub kernel: Option<Kernel>,
    #[serde(default)]
    pub initial: Option<InitialDensity>,
}

fn default_n() -> usize {
    1000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Numerics {
    /// PDE time step (= age step).
    pub dt: f64,
    /// Step of the Galerkin limit system.
    pub limit_dt: f64,
    /// Degree of the exp-Chebyshev Galerkin family.
    pub degree: usize,
    /// Observation times; empty means {T}.
    pub times: Vec<f64>,
    /// Histogram bins for `couple`.
    pub bins: usize,
    /// Keep every this many age cells in grid.csv.
    pub grid_stride: usize,
    /// Paths written to paths.csv and runs.bin by `simulate`.
    pub keep_paths: usize,
    /// Limit-system replicas for the sampled-vs-propagated covariance check in `clt`.
    pub limit_replicas: usize,
    /// Samples for the assumption checks.
    pub assumption_samples: usize,
}

impl Default for Numerics {
    fn default() -> Self {
        Numerics {
            dt: 1e-3,
            limit_dt: 1e-2,
            degree: 10,
            times: Vec::new(),
            bins: 50,
            grid_stride: 10,
            keep_paths: 2,
            limit_replicas: 0,
            assumption_samples: 2000,
        }
    }
}

/// Estimand keys: chi1..chi3, xi1..xi8, eps<k>_<p>.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RatesSection {
    pub estimands: Vec<String>,
    /// θ for χ and ε; T when absent.
    pub theta: Option<f64>,
}

impl Default for RatesSection {
    fn default() -> Self {
        RatesSection { estimands: vec!["chi1".into(), "chi2".into(), "xi2".into(), "xi4".into(), "eps1_1".into()], theta: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EstimandKey {
    Chi(usize),
    Xi(usize),
    Eps(usize, u32),
}

impl EstimandKey {
    pub fn parse(s: &str) -> Option<Self> {
        if let Some(k) = s.strip_prefix("chi") {
            return k.parse().ok().filter(|k| (1..=3).contains(k)).map(EstimandKey::Chi);
        }
        if let Some(k) = s.strip_prefix("xi") {
            return k.parse().ok().filter(|k| (1..=8).contains(k)).map(EstimandKey::Xi);
        }
        let (k, p) = s.strip_prefix("eps")?.split_once('_')?;
        let k: usize = k.parse().ok().filter(|k| (1..=3).contains(k))?;
        Some(EstimandKey::Eps(k, p.parse().ok().filter(|p| *p >= 1)?))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: Kind,
    pub seed: u64,
    #[serde(default = "default_replicas")]
    pub replicas: usize,
    /// Particle counts for `rates` and `spde`.
    #[serde(default)]
    pub n_grid: Vec<usize>,
    /// Output directory; the command line wins.
    #[serde(default)]
    pub out: Option<String>,
    pub model: ModelSection,
    #[serde(default)]
    pub numerics: Numerics,
    #[serde(default)]
    pub rates: RatesSection,
}

fn default_replicas() -> usize {
    1000
}

impl ExperimentConfig {
    /// TOML unless the file name ends in `.json`.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        let json = path.extension().is_some_and(|e| e == "json");
        Self::parse(&text, json)
    }

    pub fn parse(text: &str, json: bool) -> Result<Self, CliError> {
        let cfg: ExperimentConfig = if json {
            serde_json::from_str(text).map_err(|e| CliError::Usage(format!("config: {e}")))?
        } else {
            toml::from_str(text).map_err(|e| CliError::Usage(format!("config: {e}")))?
        };
        cfg.check()?;
        Ok(cfg)
    }

    fn check(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Usage(format!("config: {m}")));
        let nm = &self.numerics;
        let t = self.model.horizon;
        if Preset::from_name(&self.model.preset).is_none() {
            let names: Vec<&str> = Preset::ALL.iter().map(|p| p.name()).collect();
            return bad(format!("unknown preset `{}` (one of {})", self.model.preset, names.join(", ")));
        }
        if !(t > 0.0 && t.is_finite()) {
            return bad(format!("model.horizon must be > 0, got {t}"));
        }
        if !(nm.dt > 0.0 && nm.dt <= 1e-2) {
            return bad(format!("numerics.dt must lie in (0, 0.01], got {}", nm.dt));
        }
        if !(nm.limit_dt >= nm.dt) {
            return bad(format!("numerics.limit_dt {} below dt {}", nm.limit_dt, nm.dt));
        }
        let ratio = t / nm.limit_dt;
        if (ratio - ratio.round()).abs() > 1e-9 {
            return bad(format!("horizon {t} is not a multiple of limit_dt {}", nm.limit_dt));
        }
        if self.replicas == 0 || self.model.n == 0 {
            return bad("replicas and model.n must be positive".into());
        }
        if nm.times.iter().any(|&s| !(s > 0.0 && s <= t)) || nm.times.windows(2).any(|w| w[1] <= w[0]) {
            return bad("numerics.times must be increasing within (0, horizon]".into());
        }
        if nm.bins < 2 || nm.grid_stride == 0 || nm.assumption_samples < 100 || nm.degree < 3 {
            return bad("need bins >= 2, grid_stride >= 1, assumption_samples >= 100, degree >= 3".into());
        }
        match self.kind {
            Kind::Rates | Kind::Spde => {
                let mut g = self.n_grid.clone();
                g.sort_unstable();
                g.dedup();
                if g.len() < 4 || g.len() != self.n_grid.len() || g[0] == 0 {
                    return bad("n_grid needs at least 4 distinct positive particle counts".into());
                }
            }
            _ => {}
        }
        if self.kind == Kind::Rates {
            if self.replicas < 1000 {
                return bad("rates needs replicas >= 1000".into());
            }
            for e in &self.rates.estimands {
                if EstimandKey::parse(e).is_none() {
                    return bad(format!("unknown estimand `{e}` (chi1..chi3, xi1..xi8, eps<k>_<p>)"));
                }
            }
            if let Some(th) = self.rates.theta {
                if !(th > 0.0 && th <= t) {
                    return bad(format!("rates.theta {th} outside (0, horizon]"));
                }
            }
        }
        Ok(())
    }

    pub fn times(&self) -> Vec<f64> {
        if self.numerics.times.is_empty() {
            vec![self.model.horizon]
        } else {
            self.numerics.times.clone()
        }
    }

    pub fn params(&self, n: usize) -> Result<ModelParams, CliError> {
        let preset = Preset::from_name(&self.model.preset).expect("checked at load");
        let base = preset.params(n, self.model.horizon).map_err(|e| CliError::Usage(e.to_string()))?;
        let m = &self.model;
        ModelParams::new(
            n,
            m.horizon,
            m.intensity.clone().unwrap_or(base.intensity),
            m.kernel.clone().unwrap_or(base.kernel),
            m.initial.clone().unwrap_or(base.initial),
        )
        .map_err(|e| CliError::Usage(e.to_string()))
    }

    /// SHA-256 of the canonical JSON encoding, leaving out the seed and the
    /// output directory: two runs of one design share a hash, and the seed
    /// is recorded next to it.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.seed = 0;
        c.out = None;
        let bytes = serde_json::to_vec(&c).expect("config serializes");
        Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
    }
}
