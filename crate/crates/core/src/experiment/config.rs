use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::env::{EnvConfig, InitialAmplitude};
use crate::error::{Error, Result};
use crate::oct::OctConfig;
use crate::rl::{PpoConfig, SacConfig};
use crate::{Bounds, PropagationConfig, ReservoirParams};

/// Environment variable that overrides the output directory of a run.
pub const OUT_DIR_ENV: &str = "BACKFLOW_OUT";

/// Physical model and discretization shared by every method.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub gamma_coupling: f64,
    pub lambda_width: f64,
    pub detuning: f64,
    pub horizon: f64,
    pub control_bins: usize,
    pub substeps: usize,
    pub omega_min: f64,
    pub omega_max: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        let p = ReservoirParams::default();
        let c = PropagationConfig::default();
        let b = Bounds::default();
        ModelConfig {
            gamma_coupling: p.gamma_coupling,
            lambda_width: p.lambda_width,
            detuning: p.detuning,
            horizon: c.horizon,
            control_bins: c.control_bins,
            substeps: c.substeps_per_bin,
            omega_min: b.min,
            omega_max: b.max,
        }
    }
}

impl ModelConfig {
    pub fn params(&self) -> Result<ReservoirParams> {
        ReservoirParams::new(self.gamma_coupling, self.lambda_width, self.detuning)
    }

    pub fn propagation(&self) -> Result<PropagationConfig> {
        PropagationConfig::new(self.horizon, self.control_bins, self.substeps)
    }

    pub fn bounds(&self) -> Result<Bounds> {
        Bounds::new(self.omega_min, self.omega_max)
    }

    pub fn validate(&self) -> Result<()> {
        self.params()?;
        self.propagation()?;
        self.bounds()?;
        Ok(())
    }

    /// SHA-256 of the canonical JSON form; runs are comparable only if this matches.
    pub fn hash(&self) -> String {
        sha256_hex(&serde_json::to_string(self).expect("model block serializes"))
    }
}

/// Reward shaping and evaluation settings of the control environment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardConfig {
    pub alpha: f64,
    pub beta: f64,
    /// Initial amplitude Ω₀ used for deterministic evaluation episodes.
    pub eval_omega0: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        RewardConfig {
            alpha: 0.0,
            beta: 0.0,
            eval_omega0: 0.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Baseline,
    Powell,
    Lbfgsb,
    Ppo,
    Sac,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Baseline => "baseline",
            Method::Powell => "powell",
            Method::Lbfgsb => "lbfgsb",
            Method::Ppo => "ppo",
            Method::Sac => "sac",
        }
    }

    pub fn is_oct(self) -> bool {
        matches!(self, Method::Powell | Method::Lbfgsb)
    }

    pub fn is_rl(self) -> bool {
        matches!(self, Method::Ppo | Method::Sac)
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Initial pulse of an optimal-control run.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Start {
    Zero,
    Random,
    /// Zero start as the primary result, seeded random start alongside.
    #[default]
    Both,
}

/// Optimizer settings; unset fields take the optimizer's defaults.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OctBlock {
    pub start: Start,
    pub max_iterations: Option<usize>,
    pub line_search_tol: Option<f64>,
    pub fd_step: Option<f64>,
    pub gradient_tol: Option<f64>,
    pub objective_tol: Option<f64>,
    pub displacement_tol: Option<f64>,
    pub memory: Option<usize>,
}

impl OctBlock {
    pub fn optimizer(&self, method: Method) -> OctConfig {
        let d = if method == Method::Powell { OctConfig::powell() } else { OctConfig::lbfgsb() };
        OctConfig {
            max_iterations: self.max_iterations.unwrap_or(d.max_iterations),
            line_search_tol: self.line_search_tol.unwrap_or(d.line_search_tol),
            fd_step: self.fd_step.or(d.fd_step),
            gradient_tol: self.gradient_tol.unwrap_or(d.gradient_tol),
            objective_tol: self.objective_tol.unwrap_or(d.objective_tol),
            displacement_tol: self.displacement_tol.unwrap_or(d.displacement_tol),
            memory: self.memory.unwrap_or(d.memory),
        }
    }
}

/// The method to run plus at most its own sub-config.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MethodConfig {
    pub name: Method,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub powell: Option<OctBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lbfgsb: Option<OctBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ppo: Option<PpoConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sac: Option<SacConfig>,
}

impl MethodConfig {
    pub fn new(name: Method) -> Self {
        MethodConfig {
            name,
            powell: None,
            lbfgsb: None,
            ppo: None,
            sac: None,
        }
    }

    /// Fills in the default sub-config of the selected method.
    fn normalize(&mut self) {
        match self.name {
            Method::Baseline => {}
            Method::Powell => {
                self.powell.get_or_insert_with(OctBlock::default);
            }
            Method::Lbfgsb => {
                self.lbfgsb.get_or_insert_with(OctBlock::default);
            }
            Method::Ppo => {
                self.ppo.get_or_insert_with(PpoConfig::default);
            }
            Method::Sac => {
                self.sac.get_or_insert_with(SacConfig::default);
            }
        }
    }

    pub fn oct(&self) -> Option<&OctBlock> {
        match self.name {
            Method::Powell => self.powell.as_ref(),
            Method::Lbfgsb => self.lbfgsb.as_ref(),
            _ => None,
        }
    }

    fn validate(&self) -> Result<()> {
        let present = [
            (Method::Powell, self.powell.is_some()),
            (Method::Lbfgsb, self.lbfgsb.is_some()),
            (Method::Ppo, self.ppo.is_some()),
            (Method::Sac, self.sac.is_some()),
        ];
        for (m, set) in present {
            if set && m != self.name {
                return Err(Error::Config(format!("method is {} but a method.{m} block is present", self.name)));
            }
        }
        if let Some(b) = self.oct() {
            b.optimizer(self.name).validate()?;
        }
        if let Some(c) = &self.ppo {
            c.validate()?;
        }
        if let Some(c) = &self.sac {
            c.validate()?;
        }
        Ok(())
    }
}

/// One run: model, method and seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default, skip_serializing)]
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub reward: RewardConfig,
    pub method: MethodConfig,
}

fn default_seed() -> u64 {
    42
}

impl RunConfig {
    pub fn new(method: Method) -> Self {
        let mut c = RunConfig {
            seed: default_seed(),
            out: None,
            model: ModelConfig::default(),
            reward: RewardConfig::default(),
            method: MethodConfig::new(method),
        };
        c.method.normalize();
        c
    }

    /// Parses and validates TOML config text.
    pub fn from_toml(text: &str) -> Result<Self> {
        let mut c: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        c.method.normalize();
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.method.validate()?;
        self.env_config()?.validate()?;
        Ok(())
    }

    pub fn env_config(&self) -> Result<EnvConfig> {
        Ok(EnvConfig {
            params: self.model.params()?,
            propagation: self.model.propagation()?,
            bounds: self.model.bounds()?,
            alpha: self.reward.alpha,
            beta: self.reward.beta,
            initial_amplitude: InitialAmplitude::Random,
        })
    }

    /// Canonical JSON of the fully defaulted config, without the output directory.
    pub fn canonical(&self) -> String {
        serde_json::to_string(self).expect("run config serializes")
    }

    pub fn hash(&self) -> String {
        sha256_hex(&self.canonical())
    }

    /// Output directory: `flag`, else the environment override, else the
    /// config's `out`, else `runs/<method>`.
    pub fn resolve_out(&self, flag: Option<&Path>) -> PathBuf {
        flag.map(Path::to_path_buf)
            .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
            .or_else(|| self.out.clone())
            .unwrap_or_else(|| PathBuf::from("runs").join(self.method.name.name()))
    }
}

fn sha256_hex(text: &str) -> String {
    Sha256::digest(text.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dotted_keys_and_defaults() {
        let c = RunConfig::from_toml(
            "seed = 7\nmodel.gamma_coupling = 0.3\nmethod.name = \"ppo\"\nmethod.ppo.clip_eps = 0.1\n",
        )
        .unwrap();
        assert_eq!(c.seed, 7);
        assert_eq!(c.model.gamma_coupling, 0.3);
        assert_eq!(c.model.control_bins, 70);
        let ppo = c.method.ppo.as_ref().unwrap();
        assert_eq!(ppo.clip_eps, 0.1);
        assert_eq!(ppo.epochs, PpoConfig::default().epochs);
    }

    #[test]
    fn exactly_one_method() {
        assert!(RunConfig::from_toml("").is_err());
        let e = RunConfig::from_toml("method.name = \"powell\"\nmethod.sac.batch = 3\n").unwrap_err();
        assert!(e.is_config());
        assert!(RunConfig::from_toml("method.name = \"sac\"\nmethod.sac.batchh = 3\n").is_err());
        assert!(RunConfig::from_toml("method.name = \"ppo\"\nmethod.ppo.clip_eps = -1.0\n").is_err());
        assert!(RunConfig::from_toml("method.name = \"baseline\"\nmodel.omega_min = 2.0\nmodel.omega_max = 1.0\n").is_err());
    }

    #[test]
    fn hash_ignores_formatting_and_output_directory() {
        let a = RunConfig::from_toml("method.name = \"sac\"\nout = \"x\"\n").unwrap();
        let b = RunConfig::from_toml("[method]\nname = \"sac\"\n[method.sac]\nbatch = 256\n").unwrap();
        assert_eq!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
        let c = RunConfig::from_toml("method.name = \"sac\"\nmethod.sac.batch = 128\n").unwrap();
        assert_ne!(a.hash(), c.hash());
        assert_eq!(a.model.hash(), c.model.hash());
    }
}
