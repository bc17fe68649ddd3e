//! OTFS block transforms and the two propagation routes.
//!
//! The physical route modulates each user's delay-Doppler block into a
//! prefixed time stream, pushes it through the sample-level geometric channel
//! and demodulates at the array. The model route evaluates the equivalent
//! delay-Doppler convolution directly from the path coefficient tables. With
//! no noise the two agree to rounding.
//!
//! Stream sample `m` (counted from the first prefix sample of the block) is
//! taken at channel time index `m + 1 - L_cp`, so the first body sample of
//! symbol `n` sits at `n (L_D + L_cp) + 1`.

use std::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::channel::{user_kernels, SystemConfig, UserChannel};
use crate::error::{Error, Result};
use crate::numkit::{steering_vector, wrap_index, ComplexMatrix, UnitaryFft, C64};

/// `L_D x N_D` delay-Doppler block. Column `c` carries Doppler label
/// `c - N_D/2`; shifts act on columns modulo `N_D`.
#[derive(Debug, Clone, PartialEq)]
pub struct DDGrid(ComplexMatrix);

impl DDGrid {
    pub fn zeros(cfg: &SystemConfig) -> Self {
        Self(ComplexMatrix::zeros(cfg.l_d, cfg.n_d))
    }

    pub fn from_matrix(m: ComplexMatrix, cfg: &SystemConfig) -> Result<Self> {
        check_dim("delay rows", cfg.l_d, m.rows())?;
        check_dim("Doppler columns", cfg.n_d, m.cols())?;
        Ok(Self(m))
    }

    pub fn matrix(&self) -> &ComplexMatrix {
        &self.0
    }

    pub fn matrix_mut(&mut self) -> &mut ComplexMatrix {
        &mut self.0
    }

    pub fn into_matrix(self) -> ComplexMatrix {
        self.0
    }

    pub fn delay_bins(&self) -> usize {
        self.0.rows()
    }

    pub fn doppler_bins(&self) -> usize {
        self.0.cols()
    }

    pub fn get(&self, l: usize, c: usize) -> C64 {
        self.0[(l, c)]
    }

    pub fn set(&mut self, l: usize, c: usize, v: C64) {
        self.0[(l, c)] = v;
    }

    /// Storage column of Doppler label `j`.
    pub fn column_of(&self, j: i64) -> usize {
        wrap_index(j + (self.0.cols() / 2) as i64, self.0.cols())
    }

    pub fn energy(&self) -> f64 {
        self.0.frobenius_norm().powi(2)
    }
}

/// Received delay-Doppler-angle cube. Layer `s` carries angle index
/// `s - N_r/2`.
#[derive(Debug, Clone, PartialEq)]
pub struct DDCube {
    layers: Vec<ComplexMatrix>,
}

impl DDCube {
    pub fn zeros(cfg: &SystemConfig) -> Self {
        Self {
            layers: vec![ComplexMatrix::zeros(cfg.l_d, cfg.n_d); cfg.n_r],
        }
    }

    /// Circular white Gaussian cube with unit variance per entry.
    pub fn unit_noise(cfg: &SystemConfig, seed: u64) -> Self {
        let mut cube = Self::zeros(cfg);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for layer in &mut cube.layers {
            fill_awgn(layer.as_mut_slice(), 1.0, &mut rng);
        }
        cube
    }

    pub fn angle_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn layer(&self, s: usize) -> &ComplexMatrix {
        &self.layers[s]
    }

    pub fn layer_mut(&mut self, s: usize) -> &mut ComplexMatrix {
        &mut self.layers[s]
    }

    pub fn layers(&self) -> &[ComplexMatrix] {
        &self.layers
    }

    /// Layer holding angle index `q`, wrapped.
    pub fn layer_for_angle(&self, q: i64) -> &ComplexMatrix {
        let n_r = self.layers.len();
        &self.layers[wrap_index(q + (n_r / 2) as i64, n_r)]
    }

    pub fn get(&self, l: usize, c: usize, s: usize) -> C64 {
        self.layers[s][(l, c)]
    }

    pub fn set(&mut self, l: usize, c: usize, s: usize, v: C64) {
        self.layers[s][(l, c)] = v;
    }

    /// `self += scale * other`.
    pub fn add_scaled(&mut self, other: &DDCube, scale: f64) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            for (x, y) in a.as_mut_slice().iter_mut().zip(b.as_slice()) {
                *x += y * scale;
            }
        }
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.layers
            .iter()
            .map(|m| m.frobenius_norm().powi(2))
            .sum::<f64>()
            .sqrt()
    }

    /// `||self - other||_F / ||other||_F`.
    pub fn relative_error(&self, other: &DDCube) -> f64 {
        let mut diff = 0.0;
        for (a, b) in self.layers.iter().zip(&other.layers) {
            diff += a
                .as_slice()
                .iter()
                .zip(b.as_slice())
                .map(|(x, y)| (x - y).norm_sqr())
                .sum::<f64>();
        }
        diff.sqrt() / other.frobenius_norm()
    }

    pub fn iter(&self) -> impl Iterator<Item = &C64> {
        self.layers.iter().flat_map(|m| m.as_slice().iter())
    }
}

fn check_dim(what: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::Dimension { what, expected, got });
    }
    Ok(())
}

pub(crate) fn fill_awgn(buf: &mut [C64], variance: f64, rng: &mut ChaCha8Rng) {
    let s = (variance / 2.0).sqrt();
    for z in buf {
        let re: f64 = StandardNormal.sample(rng);
        let im: f64 = StandardNormal.sample(rng);
        *z += C64::new(re, im) * s;
    }
}

/// Cached transforms for one configuration.
#[derive(Debug, Clone)]
pub struct OtfsTransforms {
    delay: UnitaryFft,
    doppler: UnitaryFft,
    angle: UnitaryFft,
    l_d: usize,
    n_d: usize,
    n_r: usize,
    l_cp: usize,
}

impl OtfsTransforms {
    pub fn new(cfg: &SystemConfig) -> Self {
        Self {
            delay: UnitaryFft::new(cfg.l_d),
            doppler: UnitaryFft::new(cfg.n_d),
            angle: UnitaryFft::new(cfg.n_r),
            l_d: cfg.l_d,
            n_d: cfg.n_d,
            n_r: cfg.n_r,
            l_cp: cfg.l_cp,
        }
    }

    /// ISFFT followed by the per-symbol inverse DFT and prefix insertion.
    pub fn modulate(&self, x: &DDGrid) -> Result<Vec<C64>> {
        check_dim("delay rows", self.l_d, x.delay_bins())?;
        check_dim("Doppler columns", self.n_d, x.doppler_bins())?;
        let mut tf = x.matrix().clone();
        self.columns(&mut tf, |buf| self.delay.forward(buf));
        self.rows(&mut tf, |buf| self.doppler.inverse(buf));
        // tf now holds the time-frequency block; back to time per symbol
        self.columns(&mut tf, |buf| self.delay.inverse(buf));

        let sym = self.l_cp + self.l_d;
        let mut out = vec![C64::new(0.0, 0.0); sym * self.n_d];
        for n in 0..self.n_d {
            for (m, z) in out[n * sym..(n + 1) * sym].iter_mut().enumerate() {
                *z = tf[((m + self.l_d - self.l_cp) % self.l_d, n)];
            }
        }
        Ok(out)
    }

    /// Prefix removal, per-symbol DFT, SFFT and the angle-domain DFT.
    pub fn demodulate(&self, rx: &ComplexMatrix) -> Result<DDCube> {
        check_dim("antennas", self.n_r, rx.rows())?;
        let sym = self.l_cp + self.l_d;
        check_dim("stream samples", sym * self.n_d, rx.cols())?;

        let mut per_antenna = Vec::with_capacity(self.n_r);
        for a in 0..self.n_r {
            let stream = rx.row(a);
            let mut r = ComplexMatrix::from_fn(self.l_d, self.n_d, |l, n| stream[n * sym + self.l_cp + l]);
            self.columns(&mut r, |buf| self.delay.forward(buf));
            self.columns(&mut r, |buf| self.delay.inverse(buf));
            self.rows(&mut r, |buf| self.doppler.forward(buf));
            per_antenna.push(r);
        }

        let mut layers = vec![ComplexMatrix::zeros(self.l_d, self.n_d); self.n_r];
        let mut buf = vec![C64::new(0.0, 0.0); self.n_r];
        let half = self.n_r / 2;
        for l in 0..self.l_d {
            for c in 0..self.n_d {
                for (a, slot) in buf.iter_mut().enumerate() {
                    *slot = per_antenna[a][(l, c)];
                }
                self.angle.forward(&mut buf);
                for (bin, v) in buf.iter().enumerate() {
                    layers[(bin + half) % self.n_r][(l, c)] = *v;
                }
            }
        }
        Ok(DDCube { layers })
    }

    fn columns(&self, m: &mut ComplexMatrix, f: impl Fn(&mut [C64])) {
        let mut buf = vec![C64::new(0.0, 0.0); m.rows()];
        for c in 0..m.cols() {
            for (r, slot) in buf.iter_mut().enumerate() {
                *slot = m[(r, c)];
            }
            f(&mut buf);
            for (r, v) in buf.iter().enumerate() {
                m[(r, c)] = *v;
            }
        }
    }

    fn rows(&self, m: &mut ComplexMatrix, f: impl Fn(&mut [C64])) {
        for r in 0..m.rows() {
            f(m.row_mut(r));
        }
    }
}

pub fn otfs_modulate(x: &DDGrid, cfg: &SystemConfig) -> Result<Vec<C64>> {
    OtfsTransforms::new(cfg).modulate(x)
}

pub fn otfs_demodulate(rx: &ComplexMatrix, cfg: &SystemConfig) -> Result<DDCube> {
    OtfsTransforms::new(cfg).demodulate(rx)
}

/// Sample-level propagation of every user's stream through its geometric
/// channel. Each path reads its delayed input from inside the stream, so the
/// prefix turns every symbol's delay into a circular shift.
pub fn propagate_time_domain(
    signals: &[Vec<C64>],
    users: &[UserChannel],
    cfg: &SystemConfig,
    noise_seed: Option<u64>,
) -> Result<ComplexMatrix> {
    check_dim("user streams", users.len(), signals.len())?;
    let len = cfg.block_samples();
    for s in signals {
        check_dim("stream samples", len, s.len())?;
    }
    for p in users.iter().flat_map(|u| &u.paths) {
        if p.tau_samples > cfg.l_cp {
            return Err(Error::DelayExceedsPrefix {
                delay: p.tau_samples,
                l_cp: cfg.l_cp,
            });
        }
    }

    let mut rx = ComplexMatrix::zeros(cfg.n_r, len);
    for (user, stream) in users.iter().zip(signals) {
        for path in &user.paths {
            let a = steering_vector(path.theta, cfg.n_r, cfg.d_over_lambda);
            let d = path.tau_samples;
            for m in d..len {
                let t = m as f64 + 1.0 - cfg.l_cp as f64;
                let g = path.h * C64::from_polar(1.0, 2.0 * PI * path.nu * t * cfg.t_s) * stream[m - d];
                if g == C64::new(0.0, 0.0) {
                    continue;
                }
                for (row, e) in a.as_slice().iter().enumerate() {
                    rx[(row, m)] += g * e;
                }
            }
        }
    }
    if let Some(seed) = noise_seed {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        fill_awgn(rx.as_mut_slice(), cfg.sigma_n2, &mut rng);
    }
    Ok(rx)
}

/// Delay-Doppler-angle model of the received block: every transmitted symbol
/// is spread by each path's main plus secondary coefficient, with the
/// secondary term evaluated on the received delay row.
pub fn dd_model_receive(
    x_all: &[DDGrid],
    users: &[UserChannel],
    cfg: &SystemConfig,
    noise_seed: Option<u64>,
) -> Result<DDCube> {
    check_dim("user blocks", users.len(), x_all.len())?;
    for x in x_all {
        check_dim("delay rows", cfg.l_d, x.delay_bins())?;
        check_dim("Doppler columns", cfg.n_d, x.doppler_bins())?;
    }
    let mut cube = DDCube::zeros(cfg);
    let half = (cfg.n_r / 2) as i64;
    for (user, x) in users.iter().zip(x_all) {
        let active = active_entries(x);
        if active.is_empty() {
            continue;
        }
        for kernel in user_kernels(user, cfg) {
            for s in 0..cfg.n_r {
                let q = s as i64 - half;
                let layer = &mut cube.layers[s];
                for &(l_src, c_src, v) in &active {
                    let l = (l_src + kernel.delay) % cfg.l_d;
                    let row_phase = kernel.row_phase(l);
                    for c in 0..cfg.n_d {
                        let j = c as i64 - c_src as i64;
                        layer[(l, c)] += kernel.main(j, q) * row_phase * v;
                    }
                }
            }
        }
    }
    if let Some(seed) = noise_seed {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for layer in &mut cube.layers {
            fill_awgn(layer.as_mut_slice(), cfg.sigma_n2, &mut rng);
        }
    }
    Ok(cube)
}

pub(crate) fn active_entries(x: &DDGrid) -> Vec<(usize, usize, C64)> {
    let m = x.matrix();
    let mut out = Vec::new();
    for l in 0..m.rows() {
        for c in 0..m.cols() {
            let v = m[(l, c)];
            if v != C64::new(0.0, 0.0) {
                out.push((l, c, v));
            }
        }
    }
    out
}
