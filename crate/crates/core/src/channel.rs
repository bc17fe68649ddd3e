//! Geometric multipath channels and their angle-delay-Doppler images.
//!
//! A user's channel is a short list of paths, each a plane wave arriving at
//! the uniform linear array with its own direction, integer sample delay,
//! Doppler shift and complex gain. After OTFS demodulation and an angle-domain
//! DFT each path is concentrated around one grid triple (its signature) and
//! spreads into its neighbours through Dirichlet sidelobes. The per-block
//! coefficient splits into a row-independent main part and a secondary part
//! that depends on the received delay row.

use std::f64::consts::PI;
use std::fmt::Write as _;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkit::{dirichlet_kernel, steering_vector, wrap_centered, wrap_index, C64};

/// Dimensioning constants shared by every stage of the link.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemConfig {
    /// Receive antennas at the base station.
    pub n_r: usize,
    /// Delay bins, equal to the subcarrier count.
    pub l_d: usize,
    /// Doppler bins, equal to the OFDM symbols per block.
    pub n_d: usize,
    /// Cyclic prefix in samples.
    pub l_cp: usize,
    /// Sample period in seconds.
    pub t_s: f64,
    pub d_over_lambda: f64,
    /// Users.
    pub k: usize,
    /// Paths per user.
    pub p: usize,
    /// Largest Doppler magnitude in Hz.
    pub nu_max: f64,
    /// Largest delay in samples.
    pub n_tau: usize,
    pub sigma_n2: f64,
    /// Carrier wavelength in metres, used to map velocity to Doppler.
    pub wavelength: f64,
}

impl SystemConfig {
    /// Small dimensions that keep every algorithmic branch alive and run in
    /// seconds. The sample period is stretched so the Doppler spread spans a
    /// few bins even with only 32 symbols.
    pub fn desk() -> Self {
        Self {
            n_r: 32,
            l_d: 64,
            n_d: 32,
            l_cp: 16,
            t_s: 0.5e-6,
            d_over_lambda: 0.5,
            k: 4,
            p: 3,
            nu_max: 2000.0,
            n_tau: 7,
            sigma_n2: 0.01,
            wavelength: 0.05,
        }
    }

    /// Full-size dimensioning: 6 GHz carrier, 20 MHz sampling.
    pub fn paper_scale() -> Self {
        Self {
            n_r: 128,
            l_d: 512,
            n_d: 128,
            l_cp: 32,
            t_s: 1.0 / 20e6,
            d_over_lambda: 0.5,
            k: 4,
            p: 3,
            nu_max: 2000.0,
            n_tau: 15,
            sigma_n2: 0.01,
            wavelength: 0.05,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("N_r", self.n_r),
            ("L_D", self.l_d),
            ("N_D", self.n_d),
            ("K", self.k),
            ("P", self.p),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        if self.l_d < 4 {
            return Err(Error::Config("L_D must be at least 4".into()));
        }
        if self.n_tau > self.l_d / 2 - 1 {
            return Err(Error::Config(format!(
                "N_tau = {} exceeds L_D/2 - 1 = {}",
                self.n_tau,
                self.l_d / 2 - 1
            )));
        }
        if self.l_cp < self.n_tau {
            return Err(Error::Config(format!(
                "L_cp = {} is shorter than N_tau = {}",
                self.l_cp, self.n_tau
            )));
        }
        let positive = [
            ("T_s", self.t_s),
            ("d_over_lambda", self.d_over_lambda),
            ("wavelength", self.wavelength),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("{name} must be positive and finite")));
            }
        }
        if !(self.nu_max.is_finite() && self.nu_max >= 0.0) {
            return Err(Error::Config("nu_max must be non-negative".into()));
        }
        if !(self.sigma_n2.is_finite() && self.sigma_n2 >= 0.0) {
            return Err(Error::Config("sigma_n2 must be non-negative".into()));
        }
        Ok(())
    }

    pub fn subcarrier_spacing(&self) -> f64 {
        1.0 / (self.l_d as f64 * self.t_s)
    }

    /// OFDM symbol duration including the prefix.
    pub fn symbol_period(&self) -> f64 {
        (self.l_cp + self.l_d) as f64 * self.t_s
    }

    /// Samples in one OTFS block including every prefix.
    pub fn block_samples(&self) -> usize {
        (self.l_cp + self.l_d) * self.n_d
    }

    /// Doppler `nu` expressed in Doppler bins.
    pub fn doppler_bins(&self, nu: f64) -> f64 {
        nu * self.n_d as f64 * self.symbol_period()
    }

    /// Direction `theta` expressed in angle bins.
    pub fn angle_bins(&self, theta: f64) -> f64 {
        self.n_r as f64 * self.d_over_lambda * theta.sin()
    }

    /// Angle-domain layer holding index `q`.
    pub fn angle_layer(&self, q: i64) -> usize {
        wrap_index(q + (self.n_r / 2) as i64, self.n_r)
    }

    pub fn wrap_doppler(&self, j: i64) -> i64 {
        wrap_centered(j, self.n_d)
    }

    pub fn wrap_angle(&self, q: i64) -> i64 {
        wrap_centered(q, self.n_r)
    }
}

/// One propagation path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathParams {
    /// Direction of arrival in radians.
    pub theta: f64,
    /// Delay in whole samples.
    pub tau_samples: usize,
    /// Doppler shift in Hz.
    pub nu: f64,
    pub h: C64,
    /// Variance the gain was drawn with.
    pub lambda_p: f64,
}

impl PathParams {
    pub fn tau_seconds(&self, cfg: &SystemConfig) -> f64 {
        self.tau_samples as f64 * cfg.t_s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserChannel {
    pub user_id: usize,
    pub paths: Vec<PathParams>,
}

impl UserChannel {
    /// Angle indices of every path, wrapped.
    pub fn angle_set(&self, cfg: &SystemConfig) -> Vec<i64> {
        self.paths.iter().map(|p| signature(p, cfg).q).collect()
    }

    pub fn signatures(&self, cfg: &SystemConfig) -> Vec<PathSignature> {
        self.paths.iter().map(|p| signature(p, cfg)).collect()
    }
}

/// Grid triple where a path's energy concentrates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PathSignature {
    /// Delay index.
    pub i: usize,
    /// Doppler index in `[-N_D/2, N_D/2 - 1]`.
    pub j: i64,
    /// Angle index in `[-N_r/2, N_r/2 - 1]`.
    pub q: i64,
}

/// Draws `cfg.k` users with `cfg.p` paths each.
///
/// Delays are distinct within a user and uniform on `0..=N_tau`. Directions
/// are uniform in `[-pi/2, pi/2]` and redrawn until every path of a user has
/// its own angle index. Gains are circular Gaussian with an exponential
/// delay profile whose variances sum to one.
pub fn sample_user_channels(cfg: &SystemConfig, rng_seed: u64) -> Result<Vec<UserChannel>> {
    cfg.validate()?;
    if cfg.p > cfg.n_tau + 1 {
        return Err(Error::Config(format!(
            "cannot draw {} distinct delays from {} delay taps",
            cfg.p,
            cfg.n_tau + 1
        )));
    }
    if cfg.p > cfg.n_r {
        return Err(Error::Config(format!(
            "cannot draw {} distinct angle indices from {} bins",
            cfg.p, cfg.n_r
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let users = (0..cfg.k)
        .map(|user_id| UserChannel {
            user_id,
            paths: sample_paths(cfg, &mut rng),
        })
        .collect();
    Ok(users)
}

fn sample_paths(cfg: &SystemConfig, rng: &mut ChaCha8Rng) -> Vec<PathParams> {
    let delays: Vec<usize> = index::sample(rng, cfg.n_tau + 1, cfg.p).into_vec();

    let mut thetas = Vec::with_capacity(cfg.p);
    let mut used_q = Vec::with_capacity(cfg.p);
    while thetas.len() < cfg.p {
        let theta = rng.random_range(-PI / 2.0..=PI / 2.0);
        let q = cfg.wrap_angle(cfg.angle_bins(theta).floor() as i64);
        if !used_q.contains(&q) {
            used_q.push(q);
            thetas.push(theta);
        }
    }
    let nus: Vec<f64> = (0..cfg.p)
        .map(|_| {
            if cfg.nu_max > 0.0 {
                rng.random_range(-cfg.nu_max..=cfg.nu_max)
            } else {
                0.0
            }
        })
        .collect();

    let tau_max = delays.iter().copied().max().unwrap_or(0);
    let weights: Vec<f64> = delays
        .iter()
        .map(|&d| {
            if tau_max == 0 {
                1.0
            } else {
                (-(d as f64) / tau_max as f64).exp()
            }
        })
        .collect();
    let total: f64 = weights.iter().sum();

    delays
        .iter()
        .zip(&weights)
        .zip(thetas.into_iter().zip(nus))
        .map(|((&tau_samples, &w), (theta, nu))| {
            let lambda_p = w / total;
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            PathParams {
                theta,
                tau_samples,
                nu,
                h: C64::new(re, im) * (lambda_p / 2.0).sqrt(),
                lambda_p,
            }
        })
        .collect()
}

/// Antenna-domain impulse response at delay tap `l` and absolute sample
/// index `n_sample`.
pub fn time_channel(user: &UserChannel, l: usize, n_sample: i64, cfg: &SystemConfig) -> Vec<C64> {
    let mut out = vec![C64::new(0.0, 0.0); cfg.n_r];
    for path in user.paths.iter().filter(|p| p.tau_samples == l) {
        let g = path.h * C64::from_polar(1.0, 2.0 * PI * path.nu * n_sample as f64 * cfg.t_s);
        let a = steering_vector(path.theta, cfg.n_r, cfg.d_over_lambda);
        for (o, e) in out.iter_mut().zip(a.as_slice()) {
            *o += g * e;
        }
    }
    out
}

/// Product of the Doppler kernel, the delay indicator and the angle kernel of
/// one path evaluated at grid `(i, j, q)`.
pub fn grid_response(path: &PathParams, i: usize, j: i64, q: i64, cfg: &SystemConfig) -> C64 {
    if path.tau_samples != i {
        return C64::new(0.0, 0.0);
    }
    dirichlet_kernel(cfg.doppler_bins(path.nu) - j as f64, cfg.n_d)
        * dirichlet_kernel(cfg.angle_bins(path.theta) - q as f64, cfg.n_r)
}

fn grid_scale(cfg: &SystemConfig) -> f64 {
    1.0 / (cfg.n_d as f64 * (cfg.n_r as f64).sqrt())
}

pub fn dd_channel_main(user: &UserChannel, i: usize, j: i64, q: i64, cfg: &SystemConfig) -> C64 {
    let scale = grid_scale(cfg);
    user.paths
        .iter()
        .map(|p| {
            p.h * C64::from_polar(scale, 2.0 * PI * p.nu * cfg.t_s) * grid_response(p, i, j, q, cfg)
        })
        .sum()
}

/// Row-dependent correction to the main channel seen on received delay row
/// `ell`.
pub fn dd_channel_secondary(
    user: &UserChannel,
    i: usize,
    j: i64,
    q: i64,
    ell: usize,
    cfg: &SystemConfig,
) -> C64 {
    let scale = grid_scale(cfg);
    user.paths
        .iter()
        .map(|p| {
            secondary_factor(p.nu, ell, cfg.t_s)
                * p.h
                * C64::from_polar(scale, 2.0 * PI * p.nu * cfg.t_s)
                * grid_response(p, i, j, q, cfg)
        })
        .sum()
}

/// `2j exp(j pi nu ell T_s) sin(pi nu ell T_s)`, equal to
/// `exp(j 2 pi nu ell T_s) - 1`.
pub fn secondary_factor(nu: f64, ell: usize, t_s: f64) -> C64 {
    let x = PI * nu * ell as f64 * t_s;
    C64::new(0.0, 2.0) * C64::from_polar(x.sin(), x)
}

pub fn secondary_magnitude(nu: f64, ell: usize, t_s: f64) -> f64 {
    (PI * nu * ell as f64 * t_s).sin()
}

pub fn signature(path: &PathParams, cfg: &SystemConfig) -> PathSignature {
    let i = (path.tau_seconds(cfg) * cfg.l_d as f64 * cfg.subcarrier_spacing() + 1e-9).floor() as usize;
    PathSignature {
        i,
        j: cfg.wrap_doppler(cfg.doppler_bins(path.nu).floor() as i64),
        q: cfg.wrap_angle(cfg.angle_bins(path.theta).floor() as i64),
    }
}

/// Expected power leaked to `(i_p, <j_p + d_nu>, q_p + d_theta)` relative to
/// the expected power on path `p`'s own signature. Every path of the user is
/// weighted by its gain variance.
pub fn leakage_ratio(user: &UserChannel, p: usize, d_nu: i64, d_theta: i64, cfg: &SystemConfig) -> f64 {
    let sig = signature(&user.paths[p], cfg);
    let j = cfg.wrap_doppler(sig.j + d_nu);
    let q = cfg.wrap_angle(sig.q + d_theta);
    let power = |j: i64, q: i64| -> f64 {
        user.paths
            .iter()
            .map(|pp| pp.lambda_p * grid_response(pp, sig.i, j, q, cfg).norm_sqr())
            .sum()
    };
    power(j, q) / power(sig.j, sig.q)
}

/// Per-path normalised form of [`leakage_ratio`], restricted to paths sharing
/// path `p`'s delay.
pub fn leakage_ratio_approx(
    user: &UserChannel,
    p: usize,
    d_nu: i64,
    d_theta: i64,
    cfg: &SystemConfig,
) -> f64 {
    let own = &user.paths[p];
    let sig = signature(own, cfg);
    let j = cfg.wrap_doppler(sig.j + d_nu);
    let q = cfg.wrap_angle(sig.q + d_theta);
    let reference = grid_response(own, sig.i, sig.j, sig.q, cfg).norm_sqr();
    user.paths
        .iter()
        .filter(|pp| pp.tau_samples == own.tau_samples)
        .map(|pp| grid_response(pp, sig.i, j, q, cfg).norm_sqr() / reference * pp.lambda_p / own.lambda_p)
        .sum()
}

/// Precomputed coefficient tables for one path. Entry tables are indexed by
/// the Doppler and angle offsets taken modulo `N_D` and `N_r`.
#[derive(Debug, Clone)]
pub struct PathKernel {
    pub delay: usize,
    pub nu: f64,
    t_s: f64,
    base: C64,
    doppler: Vec<C64>,
    angle: Vec<C64>,
}

impl PathKernel {
    pub fn new(path: &PathParams, cfg: &SystemConfig) -> Self {
        let nu_bins = cfg.doppler_bins(path.nu);
        let q_bins = cfg.angle_bins(path.theta);
        Self {
            delay: path.tau_samples,
            nu: path.nu,
            t_s: cfg.t_s,
            base: path.h * C64::from_polar(grid_scale(cfg), 2.0 * PI * path.nu * cfg.t_s),
            doppler: (0..cfg.n_d)
                .map(|d| dirichlet_kernel(nu_bins - wrap_centered(d as i64, cfg.n_d) as f64, cfg.n_d))
                .collect(),
            angle: (0..cfg.n_r)
                .map(|s| dirichlet_kernel(q_bins - wrap_centered(s as i64, cfg.n_r) as f64, cfg.n_r))
                .collect(),
        }
    }

    /// Main-channel coefficient at Doppler offset `j` and angle index `q`.
    pub fn main(&self, j: i64, q: i64) -> C64 {
        let dj = wrap_index(j, self.doppler.len());
        let dq = wrap_index(q, self.angle.len());
        self.base * self.doppler[dj] * self.angle[dq]
    }

    /// Main plus secondary coefficient on received delay row `ell`.
    pub fn composite(&self, j: i64, q: i64, ell: usize) -> C64 {
        self.main(j, q) * self.row_phase(ell)
    }

    pub fn row_phase(&self, ell: usize) -> C64 {
        C64::from_polar(1.0, 2.0 * PI * self.nu * ell as f64 * self.t_s)
    }
}

pub fn user_kernels(user: &UserChannel, cfg: &SystemConfig) -> Vec<PathKernel> {
    user.paths.iter().map(|p| PathKernel::new(p, cfg)).collect()
}

/// One line per path: `user_id,theta_deg,tau_samples,nu_hz,re_h,im_h`.
pub fn write_channel_records(users: &[UserChannel]) -> String {
    let mut out = String::from("# user_id,theta_deg,tau_samples,nu_hz,re_h,im_h\n");
    for user in users {
        for p in &user.paths {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                user.user_id,
                p.theta.to_degrees(),
                p.tau_samples,
                p.nu,
                p.h.re,
                p.h.im
            );
        }
    }
    out
}

/// Inverse of [`write_channel_records`]. Gain variances are set to `|h|^2`.
pub fn parse_channel_records(text: &str) -> Result<Vec<UserChannel>> {
    let mut users: Vec<UserChannel> = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let parse_err = |msg: String| Error::Parse { line: idx + 1, msg };
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 6 {
            return Err(parse_err(format!("expected 6 fields, found {}", fields.len())));
        }
        let user_id: usize = fields[0]
            .parse()
            .map_err(|e| parse_err(format!("user_id: {e}")))?;
        let tau_samples: usize = fields[2]
            .parse()
            .map_err(|e| parse_err(format!("tau_samples: {e}")))?;
        let mut reals = [0.0f64; 4];
        for (slot, k) in reals.iter_mut().zip([1usize, 3, 4, 5]) {
            *slot = fields[k]
                .parse()
                .map_err(|e| parse_err(format!("field {}: {e}", k + 1)))?;
        }
        let h = C64::new(reals[2], reals[3]);
        let path = PathParams {
            theta: reals[0].to_radians(),
            tau_samples,
            nu: reals[1],
            h,
            lambda_p: h.norm_sqr(),
        };
        match users.iter_mut().find(|u| u.user_id == user_id) {
            Some(u) => u.paths.push(path),
            None => users.push(UserChannel {
                user_id,
                paths: vec![path],
            }),
        }
    }
    Ok(users)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkit::unitary_dft;
    use proptest::prelude::*;

    fn small_cfg() -> SystemConfig {
        SystemConfig {
            n_r: 8,
            l_d: 32,
            n_d: 16,
            l_cp: 8,
            t_s: 1e-6,
            d_over_lambda: 0.5,
            k: 2,
            p: 3,
            nu_max: 4000.0,
            n_tau: 7,
            sigma_n2: 0.0,
            wavelength: 0.05,
        }
    }

    fn one_path(theta: f64, tau: usize, nu: f64, h: C64) -> UserChannel {
        UserChannel {
            user_id: 0,
            paths: vec![PathParams {
                theta,
                tau_samples: tau,
                nu,
                h,
                lambda_p: 1.0,
            }],
        }
    }

    /// Main plus secondary channel at every grid built from first principles:
    /// per-antenna Doppler sum over OTFS symbols, then an explicit angle DFT.
    fn brute_force_grid(user: &UserChannel, i: usize, j: i64, q: i64, ell: usize, cfg: &SystemConfig) -> C64 {
        let f = unitary_dft(cfg.n_r);
        let row = wrap_index(q, cfg.n_r);
        let mut per_antenna = vec![C64::new(0.0, 0.0); cfg.n_r];
        for p in user.paths.iter().filter(|p| p.tau_samples == i) {
            let a = steering_vector(p.theta, cfg.n_r, cfg.d_over_lambda);
            let mut acc = C64::new(0.0, 0.0);
            for n in 0..cfg.n_d {
                let t = (n * (cfg.l_d + cfg.l_cp) + ell + 1) as f64;
                acc += C64::from_polar(1.0, 2.0 * PI * p.nu * t * cfg.t_s)
                    * C64::from_polar(1.0, -2.0 * PI * (n as f64) * j as f64 / cfg.n_d as f64);
            }
            acc /= cfg.n_d as f64;
            for (o, e) in per_antenna.iter_mut().zip(a.as_slice()) {
                *o += p.h * acc * e;
            }
        }
        (0..cfg.n_r).map(|n| f[(row, n)] * per_antenna[n]).sum()
    }

    #[test]
    fn desk_and_paper_profiles_validate() {
        SystemConfig::desk().validate().unwrap();
        SystemConfig::paper_scale().validate().unwrap();
        let mut bad = SystemConfig::desk();
        bad.l_cp = 3;
        assert!(bad.validate().is_err());
        let mut bad = SystemConfig::desk();
        bad.n_tau = 40;
        assert!(bad.validate().is_err());
    }

    #[test]
    fn single_path_profile_has_unit_variance() {
        let mut cfg = small_cfg();
        cfg.p = 1;
        cfg.k = 1;
        let users = sample_user_channels(&cfg, 1).unwrap();
        assert_eq!(users[0].paths.len(), 1);
        assert!((users[0].paths[0].lambda_p - 1.0).abs() < 1e-15);
    }

    #[test]
    fn sampling_is_deterministic_and_respects_constraints() {
        let cfg = SystemConfig::desk();
        let a = sample_user_channels(&cfg, 9).unwrap();
        let b = sample_user_channels(&cfg, 9).unwrap();
        assert_eq!(a, b);
        for u in &a {
            let mut d: Vec<_> = u.paths.iter().map(|p| p.tau_samples).collect();
            d.sort();
            d.dedup();
            assert_eq!(d.len(), cfg.p);
            let mut q = u.angle_set(&cfg);
            q.sort();
            q.dedup();
            assert_eq!(q.len(), cfg.p);
            let total: f64 = u.paths.iter().map(|p| p.lambda_p).sum();
            assert!((total - 1.0).abs() < 1e-12);
            for p in &u.paths {
                assert!(p.tau_samples <= cfg.n_tau);
                assert!(p.nu.abs() <= cfg.nu_max);
                assert!(p.theta.abs() <= PI / 2.0);
            }
        }
    }

    #[test]
    fn too_many_paths_rejected() {
        let mut cfg = small_cfg();
        cfg.p = cfg.n_tau + 2;
        assert!(matches!(sample_user_channels(&cfg, 0), Err(Error::Config(_))));
    }

    #[test]
    fn mean_power_is_normalised() {
        let mut cfg = SystemConfig::desk();
        cfg.k = 4;
        cfg.p = 3;
        let mut acc = 0.0;
        let mut count = 0usize;
        for seed in 0..2500u64 {
            for u in sample_user_channels(&cfg, 7 + seed * 1_000_003).unwrap() {
                acc += u.paths.iter().map(|p| p.h.norm_sqr()).sum::<f64>();
                count += 1;
            }
        }
        let mean = acc / count as f64;
        assert!((0.97..=1.03).contains(&mean), "mean power {mean}");
    }

    #[test]
    fn time_channel_trivial_cases() {
        let cfg = small_cfg();
        let user = one_path(0.0, 0, 0.0, C64::new(1.0, 0.0));
        let v = time_channel(&user, 0, 123, &cfg);
        assert!(v.iter().all(|z| (z - C64::new(1.0, 0.0)).norm() < 1e-15));
        let user = one_path(0.3, 3, 100.0, C64::new(1.0, 0.0));
        assert!(time_channel(&user, 2, 5, &cfg).iter().all(|z| z.norm() == 0.0));
    }

    #[test]
    fn time_channel_is_linear_in_paths() {
        let cfg = small_cfg();
        let users = sample_user_channels(&cfg, 4).unwrap();
        let user = &users[0];
        for l in 0..=cfg.n_tau {
            let whole = time_channel(user, l, 77, &cfg);
            let mut parts = vec![C64::new(0.0, 0.0); cfg.n_r];
            for p in &user.paths {
                let single = UserChannel {
                    user_id: 0,
                    paths: vec![p.clone()],
                };
                for (acc, z) in parts.iter_mut().zip(time_channel(&single, l, 77, &cfg)) {
                    *acc += z;
                }
            }
            for (a, b) in whole.iter().zip(&parts) {
                assert!((a - b).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn on_grid_main_channel_magnitude() {
        let cfg = small_cfg();
        // two Doppler bins and angle index 2
        let nu = 2.0 / (cfg.n_d as f64 * cfg.symbol_period());
        let theta = (2.0 / (cfg.n_r as f64 * cfg.d_over_lambda)).asin();
        let h = C64::new(0.6, -0.8);
        let user = one_path(theta, 4, nu, h);
        let sig = signature(&user.paths[0], &cfg);
        assert_eq!((sig.i, sig.j, sig.q), (4, 2, 2));
        let hb = dd_channel_main(&user, 4, 2, 2, &cfg);
        assert!((hb.norm() - (cfg.n_r as f64).sqrt() * h.norm()).abs() < 1e-9);
        assert_eq!(dd_channel_main(&user, 3, 2, 2, &cfg), C64::new(0.0, 0.0));
    }

    #[test]
    fn main_and_secondary_match_first_principles() {
        let cfg = small_cfg();
        let users = sample_user_channels(&cfg, 21).unwrap();
        for user in &users {
            for p in &user.paths {
                let i = p.tau_samples;
                for j in -(cfg.n_d as i64) / 2..(cfg.n_d as i64) / 2 {
                    for q in -(cfg.n_r as i64) / 2..(cfg.n_r as i64) / 2 {
                        for ell in [0usize, 1, 9, 31] {
                            let model = dd_channel_main(user, i, j, q, &cfg)
                                + dd_channel_secondary(user, i, j, q, ell, &cfg);
                            let brute = brute_force_grid(user, i, j, q, ell, &cfg);
                            assert!((model - brute).norm() < 1e-10, "err {}", (model - brute).norm());
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn secondary_trivial_zeros() {
        let cfg = small_cfg();
        let users = sample_user_channels(&cfg, 2).unwrap();
        let p = &users[0].paths[0];
        let sig = signature(p, &cfg);
        assert_eq!(dd_channel_secondary(&users[0], sig.i, sig.j, sig.q, 0, &cfg), C64::new(0.0, 0.0));
        let mut still = users[0].clone();
        still.paths.iter_mut().for_each(|p| p.nu = 0.0);
        assert!(dd_channel_secondary(&still, sig.i, sig.j, sig.q, 11, &cfg).norm() < 1e-15);
    }

    #[test]
    fn secondary_to_main_ratio_on_grid() {
        let cfg = small_cfg();
        let nu = 1.0 / (cfg.n_d as f64 * cfg.symbol_period());
        let user = one_path(0.0, 2, nu, C64::new(0.3, 0.4));
        for ell in [1usize, 5, 20] {
            let main = dd_channel_main(&user, 2, 1, 0, &cfg);
            let sec = dd_channel_secondary(&user, 2, 1, 0, ell, &cfg);
            let x = PI * nu * ell as f64 * cfg.t_s;
            let want = C64::new(0.0, 2.0) * C64::from_polar(1.0, x) * x.sin();
            assert!((sec / main - want).norm() < 1e-12);
        }
    }

    #[test]
    fn secondary_magnitude_anchors() {
        let t_s = 1.0 / 20e6;
        assert!((secondary_magnitude(1000.0, 50, t_s) - 7.85e-3).abs() / 7.85e-3 < 1e-3);
        assert!((secondary_magnitude(10_000.0, 50, t_s) - 7.85e-2).abs() / 7.85e-2 < 1e-2);
        assert_eq!(secondary_magnitude(0.0, 17, t_s), 0.0);
    }

    #[test]
    fn signature_examples() {
        let mut cfg = small_cfg();
        let p = PathParams {
            theta: 0.0,
            tau_samples: 0,
            nu: 0.0,
            h: C64::new(1.0, 0.0),
            lambda_p: 1.0,
        };
        let s = signature(&p, &cfg);
        assert_eq!((s.i, s.j, s.q), (0, 0, 0));
        let p5 = PathParams { tau_samples: 5, ..p.clone() };
        assert_eq!(signature(&p5, &cfg).i, 5);
        cfg.n_r = 128;
        let p34 = PathParams {
            theta: 34f64.to_radians(),
            ..p
        };
        assert_eq!(signature(&p34, &cfg).q, 35);
    }

    #[test]
    fn leakage_trivial_and_single_path_forms() {
        let cfg = small_cfg();
        let users = sample_user_channels(&cfg, 5).unwrap();
        assert!((leakage_ratio(&users[0], 1, 0, 0, &cfg) - 1.0).abs() < 1e-12);
        let single = UserChannel {
            user_id: 0,
            paths: vec![users[0].paths[0].clone()],
        };
        for d_nu in -3..=3 {
            for d_theta in -2..=2 {
                let exact = leakage_ratio(&single, 0, d_nu, d_theta, &cfg);
                let approx = leakage_ratio_approx(&single, 0, d_nu, d_theta, &cfg);
                assert!((exact - approx).abs() <= 1e-12 * exact.max(1.0));
            }
        }
    }

    #[test]
    fn doppler_leakage_decreases_away_from_peak() {
        let mut cfg = small_cfg();
        cfg.n_r = 128;
        cfg.l_d = 128;
        cfg.n_d = 128;
        cfg.l_cp = 32;
        cfg.t_s = 1.0 / 20e6;
        let user = one_path(34f64.to_radians(), 0, 2000.0, C64::new(1.0, 0.0));
        let mut prev = f64::INFINITY;
        for d_nu in 1..=(cfg.n_d as i64 / 2) {
            let eta = leakage_ratio(&user, 0, d_nu, 0, &cfg);
            assert!(eta <= prev * (1.0 + 1e-12), "d_nu={d_nu}");
            prev = eta;
        }
    }

    #[test]
    fn mirrored_channel_is_conjugated() {
        let cfg = small_cfg();
        let users = sample_user_channels(&cfg, 13).unwrap();
        let user = &users[1];
        let mirrored = UserChannel {
            user_id: user.user_id,
            paths: user
                .paths
                .iter()
                .map(|p| PathParams {
                    theta: -p.theta,
                    nu: -p.nu,
                    h: p.h.conj(),
                    ..p.clone()
                })
                .collect(),
        };
        for p in &user.paths {
            for j in -8i64..8 {
                for q in -4i64..4 {
                    let a = dd_channel_main(user, p.tau_samples, j, q, &cfg);
                    let b = dd_channel_main(&mirrored, p.tau_samples, -j, -q, &cfg);
                    assert!((a.conj() - b).norm() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn kernel_tables_match_direct_evaluation() {
        let cfg = small_cfg();
        let users = sample_user_channels(&cfg, 8).unwrap();
        for user in &users {
            for p in &user.paths {
                let single = UserChannel {
                    user_id: 0,
                    paths: vec![p.clone()],
                };
                let k = PathKernel::new(p, &cfg);
                for j in -9i64..9 {
                    for q in -5i64..5 {
                        let direct = dd_channel_main(&single, p.tau_samples, j, q, &cfg);
                        assert!((k.main(j, q) - direct).norm() < 1e-12);
                        let total = direct + dd_channel_secondary(&single, p.tau_samples, j, q, 13, &cfg);
                        assert!((k.composite(j, q, 13) - total).norm() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn records_round_trip() {
        let cfg = SystemConfig::desk();
        let users = sample_user_channels(&cfg, 3).unwrap();
        let text = write_channel_records(&users);
        let back = parse_channel_records(&text).unwrap();
        assert_eq!(back.len(), users.len());
        for (a, b) in users.iter().zip(&back) {
            for (pa, pb) in a.paths.iter().zip(&b.paths) {
                assert!((pa.theta - pb.theta).abs() < 1e-12);
                assert_eq!(pa.tau_samples, pb.tau_samples);
                assert_eq!(pa.nu, pb.nu);
                assert_eq!(pa.h, pb.h);
            }
        }
        assert!(matches!(
            parse_channel_records("0,1,2,3"),
            Err(Error::Parse { line: 1, .. })
        ));
    }

    proptest! {
        #[test]
        fn main_channel_is_linear_in_gains(
            seed in 0u64..500,
            ar in -2.0f64..2.0, ai in -2.0f64..2.0,
            j in -8i64..8, q in -4i64..4,
        ) {
            let cfg = small_cfg();
            let users = sample_user_channels(&cfg, seed).unwrap();
            let user = &users[0];
            let alpha = C64::new(ar, ai);
            let scaled = UserChannel {
                user_id: 0,
                paths: user.paths.iter().map(|p| PathParams { h: p.h * alpha, ..p.clone() }).collect(),
            };
            for p in &user.paths {
                let a = dd_channel_main(user, p.tau_samples, j, q, &cfg) * alpha;
                let b = dd_channel_main(&scaled, p.tau_samples, j, q, &cfg);
                prop_assert!((a - b).norm() < 1e-10);
            }
        }
    }
}
