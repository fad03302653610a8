//! Key = value config files with `[section]` headers, overridable from the
//! command line. Unknown keys are hard errors so typos never silently fall
//! back to defaults.

use crate::CliError;
use flockhydro_core::quadrature::{ModelParams, PotentialSpec};
use std::collections::BTreeMap;
use std::path::PathBuf;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Coeffs,
    Chi,
    Hydro,
    Kinetic,
    Verify,
    Compare,
}

impl Command {
    pub fn parse(s: &str) -> Result<Self, CliError> {
        match s {
            "coeffs" => Ok(Command::Coeffs),
            "chi" => Ok(Command::Chi),
            "hydro" => Ok(Command::Hydro),
            "kinetic" => Ok(Command::Kinetic),
            "verify" => Ok(Command::Verify),
            "compare" => Ok(Command::Compare),
            other => Err(CliError::Config(format!(
                "unknown command '{other}' (expected coeffs|chi|hydro|kinetic|verify|compare)"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Command::Coeffs => "coeffs",
            Command::Chi => "chi",
            Command::Hydro => "hydro",
            Command::Kinetic => "kinetic",
            Command::Verify => "verify",
            Command::Compare => "compare",
        }
    }
}

#[derive(Debug, Clone)]
pub struct HydroConfig {
    pub n_cells: usize,
    pub length: f64,
    pub cfl: f64,
    pub t_end: f64,
    pub flux: String,
    pub output_every: f64,
    pub rho_amp: f64,
    pub omega_amp: f64,
}

#[derive(Debug, Clone)]
pub struct KineticConfig {
    pub n_particles: usize,
    pub epsilon: f64,
    pub t_end: f64,
    pub n_bins: usize,
    pub dt_over_eps: f64,
    pub output_every: f64,
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub command: Command,
    pub sigma: f64,
    pub dim: usize,
    pub potential: PotentialSpec,
    pub eta: f64,
    pub n_theta: usize,
    pub n_r: usize,
    pub tail_tol: f64,
    pub chi_tol: f64,
    pub hydro: HydroConfig,
    pub kinetic: KineticConfig,
    pub compare_epsilons: Vec<f64>,
    pub output_dir: PathBuf,
    pub seed: u64,
}

const KNOWN_KEYS: &[&str] = &[
    "command",
    "seed",
    "model.sigma",
    "model.d",
    "model.potential",
    "model.alpha",
    "model.beta",
    "model.eta",
    "grid.n_theta",
    "grid.n_r",
    "grid.tail_tol",
    "chi.tol",
    "hydro.n_cells",
    "hydro.length",
    "hydro.cfl",
    "hydro.t_end",
    "hydro.flux",
    "hydro.output_every",
    "hydro.rho_amp",
    "hydro.omega_amp",
    "kinetic.n_particles",
    "kinetic.epsilon",
    "kinetic.t_end",
    "kinetic.n_bins",
    "kinetic.dt_over_eps",
    "kinetic.output_every",
    "compare.epsilons",
    "output.dir",
];

fn parse_kv_text(text: &str, map: &mut BTreeMap<String, String>) -> Result<(), CliError> {
    let mut section = String::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if let Some(name) = line.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
            section = name.trim().to_string();
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            CliError::Config(format!("line {}: expected 'key = value', got '{raw}'", lineno + 1))
        })?;
        let full = if section.is_empty() {
            key.trim().to_string()
        } else {
            format!("{section}.{}", key.trim())
        };
        map.insert(full, value.trim().to_string());
    }
    Ok(())
}

fn get_f64(map: &BTreeMap<String, String>, key: &str, default: f64) -> Result<f64, CliError> {
    match map.get(key) {
        None => Ok(default),
        Some(v) => v
            .parse()
            .map_err(|_| CliError::Config(format!("{key}: '{v}' is not a number"))),
    }
}

fn get_usize(map: &BTreeMap<String, String>, key: &str, default: usize) -> Result<usize, CliError> {
    match map.get(key) {
        None => Ok(default),
        Some(v) => v
            .parse()
            .map_err(|_| CliError::Config(format!("{key}: '{v}' is not a nonnegative integer"))),
    }
}

impl RunConfig {
    /// Builds a config from optional file text plus command-line overrides;
    /// an explicit command argument wins over the file's `command` key.
    pub fn parse(
        file_text: Option<&str>,
        overrides: &[(String, String)],
        command_arg: Option<&str>,
    ) -> Result<Self, CliError> {
        let mut map = BTreeMap::new();
        if let Some(text) = file_text {
            parse_kv_text(text, &mut map)?;
        }
        for (k, v) in overrides {
            map.insert(k.clone(), v.clone());
        }
        for key in map.keys() {
            if !KNOWN_KEYS.contains(&key.as_str()) {
                return Err(CliError::Config(format!("unknown key '{key}'")));
            }
        }

        let command = match command_arg {
            Some(c) => Command::parse(c)?,
            None => {
                let c = map.get("command").ok_or_else(|| {
                    CliError::Config("no command given (argument or 'command =' key)".into())
                })?;
                Command::parse(c)?
            }
        };

        let sigma = get_f64(&map, "model.sigma", 1.0)?;
        let dim = get_usize(&map, "model.d", 2)?;
        let eta = get_f64(&map, "model.eta", 1.0)?;
        let potential = match map.get("model.potential").map(String::as_str).unwrap_or("zero") {
            "zero" => {
                if map.contains_key("model.alpha") || map.contains_key("model.beta") {
                    return Err(CliError::Config(
                        "model.alpha/model.beta only apply to potential = selfprop".into(),
                    ));
                }
                PotentialSpec::Zero
            }
            "selfprop" => PotentialSpec::SelfPropulsion {
                alpha: get_f64(&map, "model.alpha", 1.0)?,
                beta: get_f64(&map, "model.beta", 1.0)?,
            },
            other => {
                return Err(CliError::Config(format!(
                    "model.potential: '{other}' is not one of zero|selfprop"
                )))
            }
        };
        // surface invalid model values now, with the config key attached
        let params = ModelParams::with_eta(sigma, dim, potential.clone(), eta)
            .map_err(|e| CliError::Config(format!("model: {e}")))?;

        let compare_epsilons = match map.get("compare.epsilons") {
            None => vec![0.2, 0.1, 0.05],
            Some(v) => v
                .split(',')
                .map(|tok| {
                    tok.trim().parse::<f64>().map_err(|_| {
                        CliError::Config(format!("compare.epsilons: '{tok}' is not a number"))
                    })
                })
                .collect::<Result<Vec<_>, _>>()?,
        };

        let config = RunConfig {
            command,
            sigma: params.sigma,
            dim: params.dim,
            potential: params.potential,
            eta: params.eta,
            n_theta: get_usize(&map, "grid.n_theta", 256)?,
            n_r: get_usize(&map, "grid.n_r", 256)?,
            tail_tol: get_f64(&map, "grid.tail_tol", 1e-12)?,
            chi_tol: get_f64(&map, "chi.tol", 1e-10)?,
            hydro: HydroConfig {
                n_cells: get_usize(&map, "hydro.n_cells", 64)?,
                length: get_f64(&map, "hydro.length", 1.0)?,
                cfl: get_f64(&map, "hydro.cfl", 0.5)?,
                t_end: get_f64(&map, "hydro.t_end", 0.5)?,
                flux: map
                    .get("hydro.flux")
                    .cloned()
                    .unwrap_or_else(|| "upwind".into()),
                output_every: get_f64(&map, "hydro.output_every", 0.1)?,
                rho_amp: get_f64(&map, "hydro.rho_amp", 0.3)?,
                omega_amp: get_f64(&map, "hydro.omega_amp", 0.5)?,
            },
            kinetic: KineticConfig {
                n_particles: get_usize(&map, "kinetic.n_particles", 100_000)?,
                epsilon: get_f64(&map, "kinetic.epsilon", 0.1)?,
                t_end: get_f64(&map, "kinetic.t_end", 1.0)?,
                n_bins: get_usize(&map, "kinetic.n_bins", 32)?,
                dt_over_eps: get_f64(&map, "kinetic.dt_over_eps", 0.05)?,
                output_every: get_f64(&map, "kinetic.output_every", 0.25)?,
            },
            compare_epsilons,
            output_dir: PathBuf::from(map.get("output.dir").cloned().unwrap_or_else(|| ".".into())),
            seed: map
                .get("seed")
                .map(|v| {
                    v.parse::<u64>()
                        .map_err(|_| CliError::Config(format!("seed: '{v}' is not an integer")))
                })
                .transpose()?
                .unwrap_or(0),
        };
        config.validate()?;
        Ok(config)
    }

    fn validate(&self) -> Result<(), CliError> {
        let bail = |msg: String| Err(CliError::Config(msg));
        if self.n_theta < 4 || self.n_r < 4 {
            return bail(format!(
                "grid.n_theta/grid.n_r must be at least 4, got {} x {}",
                self.n_theta, self.n_r
            ));
        }
        if !(self.tail_tol > 0.0 && self.tail_tol < 1.0) {
            return bail(format!("grid.tail_tol must lie in (0, 1), got {}", self.tail_tol));
        }
        if !(self.chi_tol > 0.0 && self.chi_tol <= 1e-4) {
            return bail(format!("chi.tol must lie in (0, 1e-4], got {}", self.chi_tol));
        }
        if self.hydro.n_cells == 0 || self.hydro.length <= 0.0 {
            return bail("hydro.n_cells and hydro.length must be positive".into());
        }
        if !(self.hydro.cfl > 0.0 && self.hydro.cfl <= 1.0) {
            return bail(format!("hydro.cfl must lie in (0, 1], got {}", self.hydro.cfl));
        }
        if self.hydro.t_end < 0.0 || self.hydro.output_every <= 0.0 {
            return bail("hydro.t_end must be nonnegative and hydro.output_every positive".into());
        }
        if self.hydro.flux != "upwind" && self.hydro.flux != "rusanov" {
            return bail(format!(
                "hydro.flux: '{}' is not one of upwind|rusanov",
                self.hydro.flux
            ));
        }
        if self.hydro.rho_amp.abs() >= 1.0 {
            return bail(format!(
                "hydro.rho_amp must keep the density positive (|amp| < 1), got {}",
                self.hydro.rho_amp
            ));
        }
        if self.kinetic.n_particles == 0 || self.kinetic.n_bins == 0 {
            return bail("kinetic.n_particles and kinetic.n_bins must be positive".into());
        }
        if self.kinetic.epsilon <= 0.0 {
            return bail(format!("kinetic.epsilon must be positive, got {}", self.kinetic.epsilon));
        }
        if !(self.kinetic.dt_over_eps > 0.0 && self.kinetic.dt_over_eps <= 0.1) {
            return bail(format!(
                "kinetic.dt_over_eps must lie in (0, 0.1], got {}",
                self.kinetic.dt_over_eps
            ));
        }
        if self.kinetic.t_end < 0.0 || self.kinetic.output_every <= 0.0 {
            return bail("kinetic.t_end must be nonnegative and kinetic.output_every positive".into());
        }
        if self.compare_epsilons.is_empty()
            || self.compare_epsilons.iter().any(|e| !(*e > 0.0))
        {
            return bail("compare.epsilons must be a nonempty list of positive values".into());
        }
        Ok(())
    }

    pub fn model_params(&self) -> ModelParams {
        ModelParams {
            sigma: self.sigma,
            dim: self.dim,
            potential: self.potential.clone(),
            eta: self.eta,
        }
    }

    /// Canonical text listing of the effective settings; hashed into
    /// checkpoint headers so artifacts carry their provenance.
    pub fn canonical_text(&self) -> String {
        let (pot, alpha, beta) = match &self.potential {
            PotentialSpec::Zero => ("zero", 0.0, 0.0),
            PotentialSpec::SelfPropulsion { alpha, beta } => ("selfprop", *alpha, *beta),
            PotentialSpec::TabulatedRadial { .. } => ("tabulated", 0.0, 0.0),
        };
        format!(
            "command={};sigma={:e};d={};potential={pot};alpha={alpha:e};beta={beta:e};eta={:e};\
             n_theta={};n_r={};tail_tol={:e};chi_tol={:e};seed={}",
            self.command.name(),
            self.sigma,
            self.dim,
            self.eta,
            self.n_theta,
            self.n_r,
            self.tail_tol,
            self.chi_tol,
            self.seed
        )
    }

    pub fn digest(&self) -> String {
        // FNV-1a over the canonical settings text
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in self.canonical_text().bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01B3);
        }
        format!("{h:016x}")
    }
}
