use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::channel::SystemConfig;
use crate::error::{Error, Result};
use crate::nomp::NompConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Scenario {
    ParamCapture,
    UlDetect,
    DlDetect,
    OracleCheck,
    LeakageMap,
}

impl Scenario {
    pub fn id(self) -> &'static str {
        match self {
            Scenario::ParamCapture => "param-capture",
            Scenario::UlDetect => "ul-detect",
            Scenario::DlDetect => "dl-detect",
            Scenario::OracleCheck => "oracle-check",
            Scenario::LeakageMap => "leakage-map",
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [
            Scenario::ParamCapture,
            Scenario::UlDetect,
            Scenario::DlDetect,
            Scenario::OracleCheck,
            Scenario::LeakageMap,
        ]
        .into_iter()
        .find(|sc| sc.id() == s)
        .ok_or_else(|| Error::UnknownScenario(s.to_string()))
    }
}

/// Channel knowledge used by the detection scenarios.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ChannelMode {
    /// True path parameters and gains.
    Perfect,
    /// Geometry from NOMP on the training block, gains from the pilot.
    Estimated,
}

impl FromStr for ChannelMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "perfect" => Ok(ChannelMode::Perfect),
            "estimated" => Ok(ChannelMode::Estimated),
            other => Err(Error::Config(format!("unknown channel mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Profile {
    Desk,
    Paper,
}

impl Profile {
    pub fn system(self) -> SystemConfig {
        match self {
            Profile::Desk => SystemConfig::desk(),
            Profile::Paper => SystemConfig::paper_scale(),
        }
    }

    /// Training length per user slot.
    pub fn training_len(self) -> usize {
        match self {
            Profile::Desk => 64,
            Profile::Paper => 128,
        }
    }
}

impl FromStr for Profile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Profile::Desk),
            "paper" => Ok(Profile::Paper),
            other => Err(Error::Config(format!("unknown profile `{other}`"))),
        }
    }
}

/// Everything one experiment run depends on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub scenario: Scenario,
    pub system: SystemConfig,
    pub nomp: NompConfig,
    /// Training samples per user slot.
    pub n_t: usize,
    /// Region width along delay.
    pub w_delay: usize,
    /// Region width along Doppler.
    pub w_doppler: usize,
    pub d_theta: usize,
    pub sparsity_step: usize,
    pub snr_db: Vec<f64>,
    pub trials: usize,
    pub seed: u64,
    pub channel_mode: ChannelMode,
    /// Worker threads; `None` uses the global pool. Never affects results.
    pub workers: Option<usize>,
}

impl ExperimentSpec {
    /// Profile defaults. The leakage map always starts from
    /// [`leakage_reference_system`](super::leakage_reference_system).
    pub fn new(scenario: Scenario, profile: Profile) -> Self {
        let system = match scenario {
            Scenario::LeakageMap => super::leakage_reference_system(),
            _ => profile.system(),
        };
        Self {
            scenario,
            nomp: NompConfig::for_paths(system.p),
            system,
            n_t: profile.training_len(),
            w_delay: 8,
            w_doppler: 16,
            d_theta: 2,
            sparsity_step: 1,
            snr_db: vec![0.0, 10.0, 20.0, 30.0],
            trials: 10,
            seed: 1,
            channel_mode: ChannelMode::Perfect,
            workers: None,
        }
    }

    /// Sets the largest Doppler from a speed in km/h.
    pub fn set_velocity(&mut self, kmh: f64) {
        self.system.nu_max = velocity_to_doppler(kmh, self.system.wavelength);
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::Config("trial count must be at least 1".into()));
        }
        if self.snr_db.is_empty() {
            return Err(Error::Config("SNR list is empty".into()));
        }
        if self.snr_db.iter().any(|s| !s.is_finite()) {
            return Err(Error::Config("SNR values must be finite".into()));
        }
        if self.workers == Some(0) {
            return Err(Error::Config("worker count must be positive".into()));
        }
        if self.n_t == 0 {
            return Err(Error::Config("training length must be positive".into()));
        }
        self.system.validate()?;
        self.nomp.validate()
    }

    /// Applies a flat `key = value` text. Blank lines and `#` comments are
    /// skipped; unknown keys are errors.
    pub fn apply_config_text(&mut self, text: &str) -> Result<()> {
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let parse_err = |msg: String| Error::Parse { line: idx + 1, msg };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| parse_err(format!("expected key=value, got `{line}`")))?;
            self.set_key(key.trim(), value.trim()).map_err(|e| match e {
                Error::Config(msg) => parse_err(msg),
                other => other,
            })?;
        }
        Ok(())
    }

    pub fn set_key(&mut self, key: &str, value: &str) -> Result<()> {
        let canonical = match key {
            "W_d" => "w_delay".to_string(),
            "W_D" => "w_doppler".to_string(),
            other => other.to_ascii_lowercase(),
        };
        let s = &mut self.system;
        let n = &mut self.nomp;
        match canonical.as_str() {
            "n_r" => s.n_r = parse(key, value)?,
            "l_d" => s.l_d = parse(key, value)?,
            "n_d" => s.n_d = parse(key, value)?,
            "l_cp" => s.l_cp = parse(key, value)?,
            "t_s" => s.t_s = parse(key, value)?,
            "d_over_lambda" => s.d_over_lambda = parse(key, value)?,
            "k" => s.k = parse(key, value)?,
            "p" => s.p = parse(key, value)?,
            "nu_max" => s.nu_max = parse(key, value)?,
            "n_tau" => s.n_tau = parse(key, value)?,
            "sigma_n2" => s.sigma_n2 = parse(key, value)?,
            "wavelength" => s.wavelength = parse(key, value)?,
            "eta_theta" => n.eta_theta = parse(key, value)?,
            "eta_nu" => n.eta_nu = parse(key, value)?,
            "rho_theta" => n.rho_theta = parse(key, value)?,
            "rho_nu" => n.rho_nu = parse(key, value)?,
            "r_s" => n.r_s = parse(key, value)?,
            "r_c" => n.r_c = parse(key, value)?,
            "p_fa" => n.p_fa = parse(key, value)?,
            "p_max" => n.p_max = parse(key, value)?,
            "n_t" => self.n_t = parse(key, value)?,
            "w_delay" => self.w_delay = parse(key, value)?,
            "w_doppler" => self.w_doppler = parse(key, value)?,
            "d_theta" => self.d_theta = parse(key, value)?,
            "sparsity_step" => self.sparsity_step = parse(key, value)?,
            "velocity" => {
                let kmh: f64 = parse(key, value)?;
                self.set_velocity(kmh);
            }
            _ => return Err(Error::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("bad value `{value}` for `{key}`")))
}

/// Largest Doppler in Hz for a speed in km/h.
pub fn velocity_to_doppler(kmh: f64, wavelength: f64) -> f64 {
    kmh / 3.6 / wavelength
}

pub fn snr_to_noise_variance(snr_db: f64) -> f64 {
    10f64.powf(-snr_db / 10.0)
}
