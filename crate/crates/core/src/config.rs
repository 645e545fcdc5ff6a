//! Flat `key = value` experiment configuration.
//!
//! Blank lines and lines starting with `#` are ignored. Unknown keys are
//! rejected. Later assignments override earlier ones, which is how command
//! line flags are layered on top of a file.

use crate::copula::{n_free_loadings, CopulaFamily};
use crate::error::{Error, Result};
use crate::garch::InnovationKind;
use crate::nets::{CopulaArch, MarginalArch, TrainConfig};
use crate::oracle::McmcConfig;
use crate::priors::{default_priors, BetaPrior, GammaPrior, PriorSpec};
use crate::simgen::DataMode;
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

/// Network size preset.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ArchPreset {
    Full,
    Desk,
}

impl FromStr for ArchPreset {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(ArchPreset::Full),
            "desk" => Ok(ArchPreset::Desk),
            _ => Err(Error::Config(format!("arch: expected full or desk, got {s:?}"))),
        }
    }
}

impl ArchPreset {
    pub fn as_str(self) -> &'static str {
        match self {
            ArchPreset::Full => "full",
            ArchPreset::Desk => "desk",
        }
    }
}

const PRIOR_KEYS: [&str; 10] = [
    "prior.alpha1.a",
    "prior.alpha1.b",
    "prior.alpha2.a",
    "prior.alpha2.b",
    "prior.gamma.shape",
    "prior.gamma.rate",
    "prior.nu_tilde.shape",
    "prior.nu_tilde.rate",
    "prior.nu.shape",
    "prior.nu.rate",
];

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub marginal_kind: InnovationKind,
    pub family: CopulaFamily,
    pub dim: usize,
    pub n_factors: usize,
    pub n_obs: usize,
    pub arch: ArchPreset,
    pub batch_size: usize,
    pub lr: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub n_per_epoch: usize,
    pub val_frac: f64,
    pub data_mode: DataMode,
    /// Posterior draws `J`.
    pub draws: usize,
    /// Forecast horizon `h`.
    pub horizon: usize,
    /// Rolling-window count `K`.
    pub rolls: usize,
    pub seed: u64,
    pub mcmc_iter: usize,
    pub mcmc_burn: usize,
    pub mcmc_chains: usize,
    pub data: Option<PathBuf>,
    pub truth: Option<PathBuf>,
    pub marginal_checkpoint: Option<PathBuf>,
    pub copula_checkpoint: Option<PathBuf>,
    pub out_dir: PathBuf,
    prior_overrides: BTreeMap<String, f64>,
    loadings_mean: Option<Vec<f64>>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let t = TrainConfig::default();
        let m = McmcConfig::default();
        Self {
            marginal_kind: InnovationKind::Gaussian,
            family: CopulaFamily::Gaussian,
            dim: 20,
            n_factors: 1,
            n_obs: 1000,
            arch: ArchPreset::Full,
            batch_size: t.batch_size,
            lr: t.lr,
            max_epochs: t.max_epochs,
            patience: t.patience,
            n_per_epoch: t.n_per_epoch,
            val_frac: t.val_frac,
            data_mode: t.data_mode,
            draws: crate::nifm::DEFAULT_DRAWS,
            horizon: 1,
            rolls: 30,
            seed: 0,
            mcmc_iter: m.n_iter,
            mcmc_burn: m.n_burn,
            mcmc_chains: 4,
            data: None,
            truth: None,
            marginal_checkpoint: None,
            copula_checkpoint: None,
            out_dir: PathBuf::from("."),
            prior_overrides: BTreeMap::new(),
            loadings_mean: None,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {value:?}")))
}

fn parse_kind(key: &str, value: &str) -> Result<InnovationKind> {
    value.parse().map_err(|_| Error::Config(format!("{key}: expected gaussian or t, got {value:?}")))
}

fn parse_family(key: &str, value: &str) -> Result<CopulaFamily> {
    value.parse().map_err(|_| Error::Config(format!("{key}: expected gaussian or t, got {value:?}")))
}

fn path_opt(value: &str) -> Option<PathBuf> {
    (!value.is_empty()).then(|| PathBuf::from(value))
}

impl ExperimentConfig {
    /// Reduced CPU preset: `T = 200`, `D = 3`, 2000 pairs per epoch.
    pub fn desk() -> Self {
        let t = TrainConfig::desk();
        Self {
            dim: 3,
            n_obs: 200,
            arch: ArchPreset::Desk,
            lr: t.lr,
            max_epochs: t.max_epochs,
            patience: t.patience,
            n_per_epoch: t.n_per_epoch,
            draws: 500,
            mcmc_iter: 5_000,
            mcmc_burn: 2_000,
            ..Self::default()
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "full" => Ok(Self::default()),
            "desk" => Ok(Self::desk()),
            _ => Err(Error::Config(format!("preset: unknown preset {name:?}"))),
        }
    }

    /// Applies every assignment in `text` on top of `self`.
    pub fn apply_str(&mut self, text: &str) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", n + 1)))?;
            self.set(k.trim(), v.trim())
                .map_err(|e| Error::Config(format!("line {}: {}", n + 1, e.to_string().trim_start_matches("config error: "))))?;
        }
        Ok(())
    }

    pub fn parse_str(text: &str) -> Result<Self> {
        let mut c = Self::default();
        c.apply_str(text)?;
        c.validate()?;
        Ok(c)
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path)?;
        self.apply_str(&text)
    }

    /// Sets one key. Unknown keys are an error naming the key.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "marginal_kind" => self.marginal_kind = parse_kind(key, value)?,
            "family" => self.family = parse_family(key, value)?,
            "dim" => self.dim = parse(key, value)?,
            "factors" => self.n_factors = parse(key, value)?,
            "n_obs" => self.n_obs = parse(key, value)?,
            "arch" => self.arch = value.parse()?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "lr" => self.lr = parse(key, value)?,
            "max_epochs" => self.max_epochs = parse(key, value)?,
            "patience" => self.patience = parse(key, value)?,
            "n_per_epoch" => self.n_per_epoch = parse(key, value)?,
            "val_frac" => self.val_frac = parse(key, value)?,
            "data_mode" => {
                self.data_mode = match value {
                    "fresh" => DataMode::Fresh,
                    "fixed" => DataMode::Fixed,
                    _ => return Err(Error::Config(format!("{key}: expected fresh or fixed, got {value:?}"))),
                }
            }
            "draws" => self.draws = parse(key, value)?,
            "horizon" => self.horizon = parse(key, value)?,
            "rolls" => self.rolls = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "mcmc.iter" => self.mcmc_iter = parse(key, value)?,
            "mcmc.burn" => self.mcmc_burn = parse(key, value)?,
            "mcmc.chains" => self.mcmc_chains = parse(key, value)?,
            "data" => self.data = path_opt(value),
            "truth" => self.truth = path_opt(value),
            "marginal_checkpoint" => self.marginal_checkpoint = path_opt(value),
            "copula_checkpoint" => self.copula_checkpoint = path_opt(value),
            "out_dir" => self.out_dir = PathBuf::from(value),
            "prior.loadings_mean" => {
                let v: Vec<f64> = if value.is_empty() {
                    Vec::new()
                } else {
                    value.split(',').map(|s| parse(key, s.trim())).collect::<Result<_>>()?
                };
                self.loadings_mean = Some(v);
            }
            k if PRIOR_KEYS.contains(&k) => {
                let v: f64 = parse(key, value)?;
                self.prior_overrides.insert(k.to_string(), v);
            }
            _ => return Err(Error::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |k: &str, why: &str| Err(Error::Config(format!("{k}: {why}")));
        for (k, v) in [
            ("dim", self.dim),
            ("n_obs", self.n_obs),
            ("batch_size", self.batch_size),
            ("max_epochs", self.max_epochs),
            ("patience", self.patience),
            ("n_per_epoch", self.n_per_epoch),
            ("draws", self.draws),
            ("horizon", self.horizon),
            ("rolls", self.rolls),
            ("mcmc.iter", self.mcmc_iter),
            ("mcmc.chains", self.mcmc_chains),
        ] {
            if v == 0 {
                return bad(k, "must be positive");
            }
        }
        if self.n_factors > self.dim {
            return bad("factors", "must not exceed dim");
        }
        if self.rolls < self.horizon {
            return bad("rolls", "must be at least horizon");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr", "must be positive");
        }
        if !(self.val_frac > 0.0 && self.val_frac < 1.0) {
            return bad("val_frac", "must lie in (0, 1)");
        }
        self.train_config().validate()?;
        self.prior_spec()?;
        Ok(())
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            batch_size: self.batch_size,
            lr: self.lr,
            max_epochs: self.max_epochs,
            patience: self.patience,
            val_frac: self.val_frac,
            n_per_epoch: self.n_per_epoch,
            seed: self.seed,
            data_mode: self.data_mode,
            ..TrainConfig::default()
        }
    }

    pub fn mcmc_config(&self) -> McmcConfig {
        McmcConfig {
            n_iter: self.mcmc_iter,
            n_burn: self.mcmc_burn,
            ..McmcConfig::default()
        }
    }

    pub fn marginal_arch(&self) -> MarginalArch {
        match self.arch {
            ArchPreset::Full => MarginalArch::full(self.marginal_kind, self.n_obs),
            ArchPreset::Desk => MarginalArch::desk(self.marginal_kind, self.n_obs),
        }
    }

    pub fn copula_arch(&self) -> CopulaArch {
        match self.arch {
            ArchPreset::Full => CopulaArch::full(self.dim, self.n_factors, self.family, self.n_obs),
            ArchPreset::Desk => CopulaArch::desk(self.dim, self.n_factors, self.family, self.n_obs),
        }
    }

    /// Default priors for the configured shape with any `prior.*` overrides.
    pub fn prior_spec(&self) -> Result<PriorSpec> {
        let mut p = default_priors(self.marginal_kind, self.dim, self.n_factors);
        let get = |k: &str, d: f64| self.prior_overrides.get(k).copied().unwrap_or(d);
        p.alpha1 = BetaPrior::new(get("prior.alpha1.a", p.alpha1.a), get("prior.alpha1.b", p.alpha1.b))?;
        p.alpha2 = BetaPrior::new(get("prior.alpha2.a", p.alpha2.a), get("prior.alpha2.b", p.alpha2.b))?;
        p.gamma = GammaPrior::new(get("prior.gamma.shape", p.gamma.shape), get("prior.gamma.rate", p.gamma.rate))?;
        p.nu = GammaPrior::new(get("prior.nu.shape", p.nu.shape), get("prior.nu.rate", p.nu.rate))?;
        if let Some(g) = p.nu_tilde {
            p.nu_tilde = Some(GammaPrior::new(
                get("prior.nu_tilde.shape", g.shape),
                get("prior.nu_tilde.rate", g.rate),
            )?);
        } else if self.prior_overrides.keys().any(|k| k.starts_with("prior.nu_tilde")) {
            return Err(Error::Config("prior.nu_tilde: only valid with marginal_kind = t".into()));
        }
        if let Some(m) = &self.loadings_mean {
            let want = n_free_loadings(self.dim, self.n_factors);
            if m.len() != want {
                return Err(Error::Config(format!(
                    "prior.loadings_mean: has {} entries, dim={} factors={} needs {want}",
                    m.len(),
                    self.dim,
                    self.n_factors
                )));
            }
            p.loadings_mean = m.clone();
        }
        p.validate()?;
        Ok(p)
    }

    /// Stores every hyperparameter of `p` as an override.
    pub fn set_prior(&mut self, p: &PriorSpec) {
        let mut put = |k: &str, v: f64| {
            self.prior_overrides.insert(k.to_string(), v);
        };
        put("prior.alpha1.a", p.alpha1.a);
        put("prior.alpha1.b", p.alpha1.b);
        put("prior.alpha2.a", p.alpha2.a);
        put("prior.alpha2.b", p.alpha2.b);
        put("prior.gamma.shape", p.gamma.shape);
        put("prior.gamma.rate", p.gamma.rate);
        put("prior.nu.shape", p.nu.shape);
        put("prior.nu.rate", p.nu.rate);
        if let Some(g) = p.nu_tilde {
            put("prior.nu_tilde.shape", g.shape);
            put("prior.nu_tilde.rate", g.rate);
        }
        self.marginal_kind = p.marginal_kind;
        self.dim = p.dim;
        self.n_factors = p.n_factors;
        self.loadings_mean = Some(p.loadings_mean.clone());
    }

    /// Serialises every key; parsing the output reproduces `self`.
    pub fn to_config_string(&self) -> String {
        let mut s = String::new();
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("marginal_kind", self.marginal_kind.as_str().into());
        kv("family", self.family.as_str().into());
        kv("dim", self.dim.to_string());
        kv("factors", self.n_factors.to_string());
        kv("n_obs", self.n_obs.to_string());
        kv("arch", self.arch.as_str().into());
        kv("batch_size", self.batch_size.to_string());
        kv("lr", format!("{:e}", self.lr));
        kv("max_epochs", self.max_epochs.to_string());
        kv("patience", self.patience.to_string());
        kv("n_per_epoch", self.n_per_epoch.to_string());
        kv("val_frac", self.val_frac.to_string());
        kv(
            "data_mode",
            match self.data_mode {
                DataMode::Fresh => "fresh",
                DataMode::Fixed => "fixed",
            }
            .into(),
        );
        kv("draws", self.draws.to_string());
        kv("horizon", self.horizon.to_string());
        kv("rolls", self.rolls.to_string());
        kv("seed", self.seed.to_string());
        kv("mcmc.iter", self.mcmc_iter.to_string());
        kv("mcmc.burn", self.mcmc_burn.to_string());
        kv("mcmc.chains", self.mcmc_chains.to_string());
        kv("data", path(&self.data));
        kv("truth", path(&self.truth));
        kv("marginal_checkpoint", path(&self.marginal_checkpoint));
        kv("copula_checkpoint", path(&self.copula_checkpoint));
        kv("out_dir", self.out_dir.display().to_string());
        for (k, v) in &self.prior_overrides {
            kv(k, format!("{v:?}"));
        }
        if let Some(m) = &self.loadings_mean {
            kv(
                "prior.loadings_mean",
                m.iter().map(|v| format!("{v:?}")).collect::<Vec<_>>().join(","),
            );
        }
        s
    }
}
