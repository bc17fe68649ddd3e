//! Path parameter capture from the uplink training slot.
//!
//! Every user sends the same prefixed training sequence in its own slot. The
//! base station stacks the `N_t` post-prefix snapshots of all antennas into
//! one vector and decomposes it greedily into atoms
//! `(v(nu) .* t_d(tau)) kron a(theta)`: a coarse map search, a local
//! oversampled search, Newton refinement of angle and Doppler with the delay
//! frozen, cyclic re-refinement of earlier atoms, and a joint least-squares
//! gain update. Extraction stops when the best normalised correlation of the
//! residual falls below a false-alarm threshold.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::channel::{time_channel, SystemConfig, UserChannel};
use crate::error::{Error, Result};
use crate::numkit::{steering_vector, C64};
use crate::otfs::fill_awgn;

const TRAINING_SEED: u64 = 0x7261_696e;
const LS_TOLERANCE: f64 = 1e-10;
const MAX_HALVINGS: usize = 10;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingConfig {
    pub n_t: usize,
    pub l_cp: usize,
    pub p_t: f64,
    /// First sample of user 0's slot.
    pub n_1: usize,
    sequence: Vec<C64>,
}

impl TrainingConfig {
    /// Constant-modulus sequence with pseudo-random phases and total power
    /// `p_t`.
    pub fn new(n_t: usize, l_cp: usize, p_t: f64, n_1: usize) -> Self {
        Self::with_seed(n_t, l_cp, p_t, n_1, TRAINING_SEED)
    }

    pub fn with_seed(n_t: usize, l_cp: usize, p_t: f64, n_1: usize, seed: u64) -> Self {
        assert!(n_t > 0, "training length must be positive");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let amp = (p_t / n_t as f64).sqrt();
        let sequence = (0..n_t)
            .map(|_| C64::from_polar(amp, rng.random_range(0.0..2.0 * PI)))
            .collect();
        Self {
            n_t,
            l_cp,
            p_t,
            n_1,
            sequence,
        }
    }

    pub fn from_sequence(sequence: Vec<C64>, l_cp: usize, n_1: usize) -> Result<Self> {
        if sequence.is_empty() {
            return Err(Error::Config("training sequence is empty".into()));
        }
        let p_t = sequence.iter().map(|z| z.norm_sqr()).sum();
        Ok(Self {
            n_t: sequence.len(),
            l_cp,
            p_t,
            n_1,
            sequence,
        })
    }

    /// Unit power per sample, `N_t` samples, slots starting at 0.
    pub fn for_system(cfg: &SystemConfig, n_t: usize) -> Self {
        Self::new(n_t, cfg.l_cp, n_t as f64, 0)
    }

    pub fn sequence(&self) -> &[C64] {
        &self.sequence
    }

    /// The sequence preceded by its periodic prefix.
    pub fn cp_extended(&self) -> Vec<C64> {
        (0..self.l_cp + self.n_t)
            .map(|m| self.sequence[(m as i64 - self.l_cp as i64).rem_euclid(self.n_t as i64) as usize])
            .collect()
    }

    /// First sample of user `k`'s slot.
    pub fn slot_start(&self, k: usize) -> usize {
        self.n_1 + (self.l_cp + self.n_t) * k
    }

    /// Absolute sample index of snapshot `n` of user `k`.
    pub fn sample_index(&self, k: usize, n: usize) -> usize {
        self.slot_start(k) + self.l_cp + n
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NompConfig {
    pub eta_theta: usize,
    pub eta_nu: usize,
    pub rho_theta: usize,
    pub rho_nu: usize,
    pub r_s: usize,
    pub r_c: usize,
    pub p_fa: f64,
    pub p_max: usize,
}

impl Default for NompConfig {
    fn default() -> Self {
        Self {
            eta_theta: 2,
            eta_nu: 2,
            rho_theta: 4,
            rho_nu: 4,
            r_s: 4,
            r_c: 5,
            p_fa: 0.01,
            p_max: 6,
        }
    }
}

impl NompConfig {
    /// Defaults with the path cap at twice the expected path count.
    pub fn for_paths(p: usize) -> Self {
        Self {
            p_max: 2 * p,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let rates = [self.eta_theta, self.eta_nu, self.rho_theta, self.rho_nu];
        if rates.iter().any(|&r| r < 1) {
            return Err(Error::Config("sampling rates must be at least 1".into()));
        }
        if !(self.p_fa > 0.0 && self.p_fa < 1.0) {
            return Err(Error::Config("P_fa must lie in (0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AtomEstimate {
    pub theta: f64,
    pub tau_samples: usize,
    pub nu: f64,
    pub h: C64,
    /// Normalised correlation of the residual with this atom when accepted.
    pub residual_power_at_acceptance: f64,
}

/// A grid or refined point together with its normalised correlation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SearchHit {
    pub theta: f64,
    pub tau_samples: usize,
    pub nu: f64,
    pub metric: f64,
}

/// Atom factory for one user's training slot.
#[derive(Debug, Clone)]
pub struct AtomContext<'a> {
    cfg: &'a SystemConfig,
    training: &'a TrainingConfig,
    /// `2 pi f_{k,n} T_s` per snapshot.
    omega: Vec<f64>,
}

impl<'a> AtomContext<'a> {
    pub fn new(k: usize, training: &'a TrainingConfig, cfg: &'a SystemConfig) -> Self {
        let omega = (0..training.n_t)
            .map(|n| 2.0 * PI * training.sample_index(k, n) as f64 * cfg.t_s)
            .collect();
        Self { cfg, training, omega }
    }

    pub fn len(&self) -> usize {
        self.cfg.n_r * self.training.n_t
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Largest delay the dictionary covers; the delay axis spans one full
    /// training period.
    pub fn max_delay(&self) -> usize {
        self.training.n_t - 1
    }

    pub fn atom_norm_sqr(&self) -> f64 {
        self.cfg.n_r as f64 * self.training.p_t
    }

    fn delayed_training(&self, tau: usize) -> Vec<C64> {
        let n_t = self.training.n_t as i64;
        (0..n_t)
            .map(|n| self.training.sequence[(n - tau as i64).rem_euclid(n_t) as usize])
            .collect()
    }

    /// `v(nu)` scaled elementwise by `(j omega_n)^order`.
    fn doppler(&self, nu: f64, order: u32) -> Vec<C64> {
        self.omega
            .iter()
            .map(|&w| C64::new(0.0, w).powu(order) * C64::from_polar(1.0, w * nu))
            .collect()
    }

    fn angle(&self, theta: f64, order: u32) -> Vec<C64> {
        let a = steering_vector(theta, self.cfg.n_r, self.cfg.d_over_lambda).into_vec();
        let g = 2.0 * PI * self.cfg.d_over_lambda;
        match order {
            0 => a,
            1 => a
                .into_iter()
                .enumerate()
                .map(|(m, e)| C64::new(0.0, g * m as f64 * theta.cos()) * e)
                .collect(),
            _ => a
                .into_iter()
                .enumerate()
                .map(|(m, e)| {
                    let m = m as f64;
                    C64::new(-(g * m * theta.cos()).powi(2), -g * m * theta.sin()) * e
                })
                .collect(),
        }
    }

    fn kron(&self, u: &[C64], a: &[C64]) -> Vec<C64> {
        let mut out = Vec::with_capacity(u.len() * a.len());
        for &un in u {
            out.extend(a.iter().map(|&am| un * am));
        }
        out
    }

    fn shaped(&self, tau: usize, nu: f64, nu_order: u32) -> Vec<C64> {
        self.doppler(nu, nu_order)
            .into_iter()
            .zip(self.delayed_training(tau))
            .map(|(v, t)| v * t)
            .collect()
    }

    pub fn atom(&self, theta: f64, tau: usize, nu: f64) -> Vec<C64> {
        self.kron(&self.shaped(tau, nu, 0), &self.angle(theta, 0))
    }

    /// Atom and its derivatives with respect to angle and Doppler.
    pub fn atom_derivatives(&self, theta: f64, tau: usize, nu: f64) -> AtomDerivatives {
        let u0 = self.shaped(tau, nu, 0);
        let u1 = self.shaped(tau, nu, 1);
        let u2 = self.shaped(tau, nu, 2);
        let a0 = self.angle(theta, 0);
        let a1 = self.angle(theta, 1);
        let a2 = self.angle(theta, 2);
        AtomDerivatives {
            p: self.kron(&u0, &a0),
            d_theta: self.kron(&u0, &a1),
            d_nu: self.kron(&u1, &a0),
            d_theta2: self.kron(&u0, &a2),
            d_nu2: self.kron(&u2, &a0),
            d_theta_nu: self.kron(&u1, &a1),
        }
    }

    fn clamp(&self, theta: f64, nu: f64) -> (f64, f64) {
        (
            theta.clamp(-PI / 2.0, PI / 2.0),
            nu.clamp(-self.cfg.nu_max, self.cfg.nu_max),
        )
    }
}

#[derive(Debug, Clone)]
pub struct AtomDerivatives {
    pub p: Vec<C64>,
    pub d_theta: Vec<C64>,
    pub d_nu: Vec<C64>,
    pub d_theta2: Vec<C64>,
    pub d_nu2: Vec<C64>,
    pub d_theta_nu: Vec<C64>,
}

/// `x^H y`.
fn dot(x: &[C64], y: &[C64]) -> C64 {
    x.iter().zip(y).map(|(a, b)| a.conj() * b).sum()
}

fn norm_sqr(x: &[C64]) -> f64 {
    x.iter().map(|z| z.norm_sqr()).sum()
}

pub fn build_atom(
    theta: f64,
    tau_samples: usize,
    nu: f64,
    k: usize,
    training: &TrainingConfig,
    cfg: &SystemConfig,
) -> Result<Vec<C64>> {
    let ctx = AtomContext::new(k, training, cfg);
    if tau_samples > ctx.max_delay() {
        return Err(Error::DelayOutOfRange {
            delay: tau_samples,
            max: ctx.max_delay(),
        });
    }
    Ok(ctx.atom(theta, tau_samples, nu))
}

/// How training observations are produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainingRoute {
    /// Sum of gain-weighted atoms.
    Direct,
    /// Sample-level propagation of the prefixed sequence through the
    /// geometric channel, snapshots taken after the prefix.
    TimeDomain,
}

/// One observation vector per user; user `k` trains in slot `k`. Noise of
/// variance `cfg.sigma_n2` is added when `noise_seed` is given.
pub fn synthesize_training_rx(
    users: &[UserChannel],
    training: &TrainingConfig,
    cfg: &SystemConfig,
    route: TrainingRoute,
    noise_seed: Option<u64>,
) -> Result<Vec<Vec<C64>>> {
    users
        .iter()
        .enumerate()
        .map(|(k, user)| {
            let mut y = match route {
                TrainingRoute::Direct => direct_training(user, k, training, cfg),
                TrainingRoute::TimeDomain => time_domain_training(user, k, training, cfg)?,
            };
            if let Some(seed) = noise_seed {
                let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(k as u64));
                fill_awgn(&mut y, cfg.sigma_n2, &mut rng);
            }
            Ok(y)
        })
        .collect()
}

fn direct_training(user: &UserChannel, k: usize, training: &TrainingConfig, cfg: &SystemConfig) -> Vec<C64> {
    let ctx = AtomContext::new(k, training, cfg);
    let mut y = vec![C64::new(0.0, 0.0); ctx.len()];
    for p in &user.paths {
        for (acc, z) in y.iter_mut().zip(ctx.atom(p.theta, p.tau_samples, p.nu)) {
            *acc += p.h * z;
        }
    }
    y
}

fn time_domain_training(
    user: &UserChannel,
    k: usize,
    training: &TrainingConfig,
    cfg: &SystemConfig,
) -> Result<Vec<C64>> {
    if let Some(p) = user.paths.iter().find(|p| p.tau_samples > training.l_cp) {
        return Err(Error::DelayExceedsPrefix {
            delay: p.tau_samples,
            l_cp: training.l_cp,
        });
    }
    let tx = training.cp_extended();
    let start = training.slot_start(k);
    let mut y = Vec::with_capacity(cfg.n_r * training.n_t);
    for n in 0..training.n_t {
        let t = training.sample_index(k, n);
        let mut snap = vec![C64::new(0.0, 0.0); cfg.n_r];
        for l in 0..=training.l_cp {
            let s = tx[t - l - start];
            for (acc, g) in snap.iter_mut().zip(time_channel(user, l, t as i64, cfg)) {
                *acc += g * s;
            }
        }
        y.extend(snap);
    }
    Ok(y)
}

/// Parameter grid of the coarse map.
#[derive(Debug, Clone)]
pub struct CoarseGrid {
    pub thetas: Vec<f64>,
    pub delays: Vec<usize>,
    pub nus: Vec<f64>,
}

impl CoarseGrid {
    pub fn new(nomp: &NompConfig, ctx: &AtomContext<'_>) -> Self {
        let half_theta = (ctx.cfg.n_r / (2 * nomp.eta_theta)).max(1) as i64;
        let half_nu = (ctx.cfg.n_d / (2 * nomp.eta_nu)).max(1) as i64;
        Self {
            thetas: (-half_theta..half_theta)
                .map(|k1| PI / 2.0 * k1 as f64 / half_theta as f64)
                .collect(),
            delays: (0..=ctx.max_delay()).collect(),
            nus: (-half_nu..half_nu)
                .map(|k3| k3 as f64 * ctx.cfg.nu_max / half_nu as f64)
                .collect(),
        }
    }

    pub fn theta_step(&self) -> f64 {
        PI / self.thetas.len() as f64
    }

    pub fn nu_step(&self, nu_max: f64) -> f64 {
        2.0 * nu_max / self.nus.len() as f64
    }

    /// Angle and Doppler spacing of the local search: the coarse cell split
    /// `rho * eta` ways.
    pub fn fine_steps(&self, nomp: &NompConfig, nu_max: f64) -> (f64, f64) {
        (
            self.theta_step() / (nomp.rho_theta * nomp.eta_theta) as f64,
            self.nu_step(nu_max) / (nomp.rho_nu * nomp.eta_nu) as f64,
        )
    }
}

/// Correlates per-snapshot beamformer outputs with the shaped training to
/// score many `(tau, nu)` pairs for one angle without forming atoms.
struct AngleScorer {
    /// `a(theta)^H y_n` per snapshot.
    z: Vec<C64>,
}

impl AngleScorer {
    fn new(residual: &[C64], theta: f64, ctx: &AtomContext<'_>) -> Self {
        let a = steering_vector(theta, ctx.cfg.n_r, ctx.cfg.d_over_lambda);
        let z = residual
            .chunks(ctx.cfg.n_r)
            .map(|snap| dot(a.as_slice(), snap))
            .collect();
        Self { z }
    }

    fn metric(&self, shaped_conj: &[C64], norm: f64) -> f64 {
        let c: C64 = shaped_conj.iter().zip(&self.z).map(|(u, z)| u * z).sum();
        c.norm_sqr() / norm
    }
}

fn conj_shaped(ctx: &AtomContext<'_>, tau: usize, nu: f64) -> Vec<C64> {
    ctx.shaped(tau, nu, 0).into_iter().map(|z| z.conj()).collect()
}

/// `|p^H r|^2 / ||p||^2` maximised over the coarse map.
pub fn coarse_search(residual: &[C64], grid: &CoarseGrid, ctx: &AtomContext<'_>) -> SearchHit {
    let norm = ctx.atom_norm_sqr();
    let shaped: Vec<Vec<Vec<C64>>> = grid
        .delays
        .iter()
        .map(|&tau| grid.nus.iter().map(|&nu| conj_shaped(ctx, tau, nu)).collect())
        .collect();
    let mut best = SearchHit {
        theta: grid.thetas[0],
        tau_samples: grid.delays[0],
        nu: grid.nus[0],
        metric: f64::NEG_INFINITY,
    };
    for &theta in &grid.thetas {
        let scorer = AngleScorer::new(residual, theta, ctx);
        for (di, &tau) in grid.delays.iter().enumerate() {
            for (ni, &nu) in grid.nus.iter().enumerate() {
                let m = scorer.metric(&shaped[di][ni], norm);
                if m > best.metric {
                    best = SearchHit {
                        theta,
                        tau_samples: tau,
                        nu,
                        metric: m,
                    };
                }
            }
        }
    }
    best
}

/// Oversampled search within one coarse cell of `coarse` in angle and
/// Doppler and one sample in delay, at the spacing of
/// [`CoarseGrid::fine_steps`]. Returns the best point and its
/// projected gain.
pub fn precise_search(
    residual: &[C64],
    coarse: &SearchHit,
    grid: &CoarseGrid,
    nomp: &NompConfig,
    ctx: &AtomContext<'_>,
) -> (SearchHit, C64) {
    let norm = ctx.atom_norm_sqr();
    let (d_theta, d_nu) = grid.fine_steps(nomp, ctx.cfg.nu_max);
    let rt = (nomp.rho_theta * nomp.eta_theta) as i64;
    let rn = (nomp.rho_nu * nomp.eta_nu) as i64;

    let mut thetas: Vec<f64> = (-rt..=rt)
        .map(|s| (coarse.theta + s as f64 * d_theta).clamp(-PI / 2.0, PI / 2.0))
        .collect();
    // at half-wavelength spacing the two endfire directions share a steering
    // vector, so a window touching one edge continues past the other
    if ctx.cfg.d_over_lambda == 0.5 {
        let reach = rt as f64 * d_theta;
        if coarse.theta - reach < -PI / 2.0 {
            thetas.extend((0..=rt).map(|s| PI / 2.0 - s as f64 * d_theta));
        }
        if coarse.theta + reach > PI / 2.0 {
            thetas.extend((0..=rt).map(|s| -PI / 2.0 + s as f64 * d_theta));
        }
    }
    thetas.sort_by(f64::total_cmp);
    thetas.dedup();
    let mut nus: Vec<f64> = (-rn..=rn)
        .map(|s| (coarse.nu + s as f64 * d_nu).clamp(-ctx.cfg.nu_max, ctx.cfg.nu_max))
        .collect();
    nus.dedup();
    let lo = coarse.tau_samples.saturating_sub(1);
    let hi = (coarse.tau_samples + 1).min(ctx.max_delay());

    let mut best = *coarse;
    best.metric = f64::NEG_INFINITY;
    let shaped: Vec<Vec<Vec<C64>>> = (lo..=hi)
        .map(|tau| nus.iter().map(|&nu| conj_shaped(ctx, tau, nu)).collect())
        .collect();
    for &theta in &thetas {
        let scorer = AngleScorer::new(residual, theta, ctx);
        for (di, tau) in (lo..=hi).enumerate() {
            for (ni, &nu) in nus.iter().enumerate() {
                let m = scorer.metric(&shaped[di][ni], norm);
                if m > best.metric {
                    best = SearchHit {
                        theta,
                        tau_samples: tau,
                        nu,
                        metric: m,
                    };
                }
            }
        }
    }
    let h = project_gain(residual, &ctx.atom(best.theta, best.tau_samples, best.nu));
    (best, h)
}

/// `p^H r / ||p||^2`.
pub fn project_gain(residual: &[C64], atom: &[C64]) -> C64 {
    dot(atom, residual) / norm_sqr(atom)
}

/// `2 Re{h r^H p} - |h|^2 ||p||^2`, the residual power reduction from
/// subtracting `h p`.
pub fn objective(residual: &[C64], h: C64, atom: &[C64]) -> f64 {
    2.0 * (h * dot(residual, atom)).re - h.norm_sqr() * norm_sqr(atom)
}

fn error_vector(residual: &[C64], h: C64, p: &[C64]) -> Vec<C64> {
    residual.iter().zip(p).map(|(r, x)| r - h * x).collect()
}

/// Gradient of the objective with respect to `(theta, nu)`.
pub fn objective_gradient(residual: &[C64], h: C64, d: &AtomDerivatives) -> [f64; 2] {
    let e = error_vector(residual, h, &d.p);
    [
        2.0 * (h * dot(&e, &d.d_theta)).re,
        2.0 * (h * dot(&e, &d.d_nu)).re,
    ]
}

/// Hessian of the objective with respect to `(theta, nu)`.
pub fn objective_hessian(residual: &[C64], h: C64, d: &AtomDerivatives) -> [[f64; 2]; 2] {
    let e = error_vector(residual, h, &d.p);
    let h2 = h.norm_sqr();
    let tt = 2.0 * ((h * dot(&e, &d.d_theta2)).re - h2 * norm_sqr(&d.d_theta));
    let nn = 2.0 * ((h * dot(&e, &d.d_nu2)).re - h2 * norm_sqr(&d.d_nu));
    let tn = 2.0 * (h * dot(&e, &d.d_theta_nu) - h2 * dot(&d.d_nu, &d.d_theta)).re;
    let nt = 2.0 * (h * dot(&e, &d.d_theta_nu) - h2 * dot(&d.d_theta, &d.d_nu)).re;
    [[tt, tn], [nt, nn]]
}

/// Hessian of the gain-concentrated objective `|r^H p|^2 / ||p||^2`. Its
/// gradient coincides with [`objective_gradient`] at the projected gain; the
/// Hessian additionally carries the response of the gain to `(theta, nu)`.
pub fn concentrated_hessian(residual: &[C64], d: &AtomDerivatives) -> [[f64; 2]; 2] {
    let n = norm_sqr(&d.p);
    let c = dot(residual, &d.p);
    let ct = dot(residual, &d.d_theta);
    let cn = dot(residual, &d.d_nu);
    let second = |cx: C64, cy: C64, cxy: C64| 2.0 * (cy.conj() * cx + c.conj() * cxy).re / n;
    let tn = second(ct, cn, dot(residual, &d.d_theta_nu));
    [
        [second(ct, ct, dot(residual, &d.d_theta2)), tn],
        [tn, second(cn, cn, dot(residual, &d.d_nu2))],
    ]
}

fn concentrated_objective(residual: &[C64], atom: &[C64]) -> f64 {
    dot(atom, residual).norm_sqr() / norm_sqr(atom)
}

/// Up to `r_s` safeguarded Newton steps on angle and Doppler with the delay
/// held. A step is kept only if the objective at the re-projected gain
/// rises; the gain is re-projected after every kept step.
pub fn newton_refine(residual: &[C64], est: &AtomEstimate, r_s: usize, ctx: &AtomContext<'_>) -> AtomEstimate {
    let tau = est.tau_samples;
    let (mut theta, mut nu) = (est.theta, est.nu);
    let mut h = project_gain(residual, &ctx.atom(theta, tau, nu));

    for _ in 0..r_s {
        let d = ctx.atom_derivatives(theta, tau, nu);
        let g = objective_gradient(residual, h, &d);
        let hess = concentrated_hessian(residual, &d);
        let j0 = concentrated_objective(residual, &d.p);
        let improves = |t: f64, n: f64| {
            let (t, n) = ctx.clamp(t, n);
            let j = concentrated_objective(residual, &ctx.atom(t, tau, n));
            (j > j0).then_some((t, n))
        };

        let det = hess[0][0] * hess[1][1] - hess[0][1] * hess[1][0];
        let newton = if hess[0][0] < 0.0 && det > 0.0 {
            let st = -(hess[1][1] * g[0] - hess[0][1] * g[1]) / det;
            let sn = -(-hess[1][0] * g[0] + hess[0][0] * g[1]) / det;
            improves(theta + st, nu + sn)
        } else {
            None
        };

        let accepted = newton.or_else(|| {
            let scale = |gi: f64, hii: f64| if hii.abs() > 0.0 { gi / hii.abs() } else { 0.0 };
            let (mut st, mut sn) = (scale(g[0], hess[0][0]), scale(g[1], hess[1][1]));
            for _ in 0..=MAX_HALVINGS {
                if let Some(p) = improves(theta + st, nu + sn) {
                    return Some(p);
                }
                st *= 0.5;
                sn *= 0.5;
            }
            None
        });

        match accepted {
            Some((t, n)) => {
                theta = t;
                nu = n;
                h = project_gain(residual, &ctx.atom(theta, tau, nu));
            }
            None => break,
        }
    }

    AtomEstimate {
        theta,
        tau_samples: tau,
        nu,
        h,
        residual_power_at_acceptance: est.residual_power_at_acceptance,
    }
}

fn axpy(y: &mut [C64], a: C64, x: &[C64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

/// `r_c` rounds over all accepted atoms: put an atom back into the residual,
/// refine it, take it out again.
pub fn cyclic_refine(
    estimates: &mut [AtomEstimate],
    residual: &mut [C64],
    r_c: usize,
    r_s: usize,
    ctx: &AtomContext<'_>,
) {
    for _ in 0..r_c {
        for est in estimates.iter_mut() {
            let old = ctx.atom(est.theta, est.tau_samples, est.nu);
            axpy(residual, est.h, &old);
            let refined = newton_refine(residual, est, r_s, ctx);
            let new = ctx.atom(refined.theta, refined.tau_samples, refined.nu);
            axpy(residual, -refined.h, &new);
            *est = refined;
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LsGains {
    pub gains: Vec<C64>,
    /// Set when a singular value fell below the relative tolerance.
    pub rank_deficient: bool,
}

/// Joint least-squares gains `P^+ y` through an SVD pseudo-inverse.
pub fn ls_gain_update(atoms: &[Vec<C64>], y: &[C64]) -> LsGains {
    if atoms.is_empty() {
        return LsGains {
            gains: Vec::new(),
            rank_deficient: false,
        };
    }
    let rows = y.len();
    let p = DMatrix::from_fn(rows, atoms.len(), |r, c| atoms[c][r]);
    let svd = p.svd(true, true);
    let s_max = svd.singular_values.max();
    let tol = LS_TOLERANCE * s_max;
    let rank_deficient = svd.singular_values.iter().any(|&s| s <= tol);
    let b = DVector::from_column_slice(y);
    let x = svd
        .solve(&b, tol)
        .expect("SVD was computed with both factor matrices");
    LsGains {
        gains: x.iter().copied().collect(),
        rank_deficient,
    }
}

/// Threshold on the normalised correlation that pure noise of variance
/// `sigma_n2` exceeds with probability `p_fa` across `N_r N_t` independent
/// looks.
pub fn stopping_threshold(sigma_n2: f64, p_fa: f64, n_r: usize, n_t: usize) -> f64 {
    let looks = (n_r * n_t) as f64;
    // 1 - (1 - p_fa)^(1/looks), evaluated without cancellation
    let per_look = -((-p_fa).ln_1p() / looks).exp_m1();
    -sigma_n2 * per_look.ln()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExtractionReport {
    /// Atoms with delay in `[0, N_tau]`.
    pub estimates: Vec<AtomEstimate>,
    /// Atoms that explained residual energy at delays beyond `N_tau`.
    pub out_of_range: Vec<AtomEstimate>,
    /// Atoms whose final LS contribution `|h|^2 ||p||^2` fell below the
    /// threshold; the gains of the kept atoms are re-solved without them.
    pub pruned: Vec<AtomEstimate>,
    /// `||y||^2` followed by the residual power after each accepted atom.
    pub residual_history: Vec<f64>,
    pub rank_deficient: bool,
    pub threshold: f64,
}

/// Greedy extraction loop for user `k`'s observation `y`. The noise
/// variance used by the stopping rule is `cfg.sigma_n2`.
pub fn extract_paths(
    y: &[C64],
    k: usize,
    training: &TrainingConfig,
    nomp: &NompConfig,
    cfg: &SystemConfig,
) -> Result<ExtractionReport> {
    nomp.validate()?;
    let ctx = AtomContext::new(k, training, cfg);
    if y.len() != ctx.len() {
        return Err(Error::Dimension {
            what: "training observation",
            expected: ctx.len(),
            got: y.len(),
        });
    }
    let grid = CoarseGrid::new(nomp, &ctx);
    let threshold = stopping_threshold(cfg.sigma_n2, nomp.p_fa, cfg.n_r, training.n_t);

    let mut residual = y.to_vec();
    let mut estimates: Vec<AtomEstimate> = Vec::new();
    let mut history = vec![norm_sqr(y)];
    let mut rank_deficient = false;

    while estimates.len() < nomp.p_max {
        let coarse = coarse_search(&residual, &grid, &ctx);
        let (fine, h) = precise_search(&residual, &coarse, &grid, nomp, &ctx);
        if fine.metric < threshold {
            break;
        }
        let start = AtomEstimate {
            theta: fine.theta,
            tau_samples: fine.tau_samples,
            nu: fine.nu,
            h,
            residual_power_at_acceptance: fine.metric,
        };
        let refined = newton_refine(&residual, &start, nomp.r_s, &ctx);
        axpy(&mut residual, -refined.h, &ctx.atom(refined.theta, refined.tau_samples, refined.nu));
        estimates.push(refined);
        cyclic_refine(&mut estimates, &mut residual, nomp.r_c, nomp.r_s, &ctx);

        let atoms: Vec<Vec<C64>> = estimates
            .iter()
            .map(|e| ctx.atom(e.theta, e.tau_samples, e.nu))
            .collect();
        let ls = ls_gain_update(&atoms, y);
        rank_deficient |= ls.rank_deficient;
        residual = y.to_vec();
        for ((est, g), atom) in estimates.iter_mut().zip(ls.gains).zip(&atoms) {
            est.h = g;
            axpy(&mut residual, -g, atom);
        }
        history.push(norm_sqr(&residual));
    }

    let norm = ctx.atom_norm_sqr();
    let (mut estimates, pruned): (Vec<_>, Vec<_>) = estimates
        .into_iter()
        .partition(|e| e.h.norm_sqr() * norm >= threshold);
    if !pruned.is_empty() {
        let atoms: Vec<Vec<C64>> = estimates
            .iter()
            .map(|e| ctx.atom(e.theta, e.tau_samples, e.nu))
            .collect();
        let ls = ls_gain_update(&atoms, y);
        rank_deficient |= ls.rank_deficient;
        let mut kept = y.to_vec();
        for ((est, g), atom) in estimates.iter_mut().zip(ls.gains).zip(&atoms) {
            est.h = g;
            axpy(&mut kept, -g, atom);
        }
        history.push(norm_sqr(&kept));
    }
    let (estimates, out_of_range) = estimates
        .into_iter()
        .partition(|e| e.tau_samples <= cfg.n_tau);
    Ok(ExtractionReport {
        estimates,
        out_of_range,
        pruned,
        residual_history: history,
        rank_deficient,
        threshold,
    })
}
