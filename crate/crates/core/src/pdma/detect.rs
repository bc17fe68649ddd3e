use crate::channel::{PathKernel, SystemConfig};
use crate::numkit::{wrap_index, C64};
use crate::otfs::DDCube;

use super::reconstruct::DDChannelSet;

/// Expected received power per grid when every listed symbol has unit
/// power, under a given set of per-user path kernels.
#[derive(Debug, Clone)]
pub struct InterferenceMap {
    l_d: usize,
    n_d: usize,
    power: Vec<f64>,
    kernels: Vec<Vec<PathKernel>>,
    half_r: i64,
}

impl InterferenceMap {
    /// `kernels[k]` and `active[k]` describe user `k`'s channel model and
    /// occupied positions (pilot included).
    pub fn build(kernels: Vec<Vec<PathKernel>>, active: &[Vec<(usize, usize)>], cfg: &SystemConfig) -> Self {
        let mut power = vec![0.0; cfg.l_d * cfg.n_d * cfg.n_r];
        let half_r = (cfg.n_r / 2) as i64;
        for (user_kernels, positions) in kernels.iter().zip(active) {
            for kernel in user_kernels {
                for s in 0..cfg.n_r {
                    let q = s as i64 - half_r;
                    let leak: Vec<f64> = (0..cfg.n_d as i64).map(|j| kernel.main(j, q).norm_sqr()).collect();
                    for &(l, n) in positions {
                        let row = (l + kernel.delay) % cfg.l_d;
                        let base = (s * cfg.l_d + row) * cfg.n_d;
                        for c in 0..cfg.n_d {
                            power[base + c] += leak[wrap_index(c as i64 - n as i64, cfg.n_d)];
                        }
                    }
                }
            }
        }
        Self {
            l_d: cfg.l_d,
            n_d: cfg.n_d,
            power,
            kernels,
            half_r,
        }
    }

    pub fn total(&self, l: usize, c: usize, s: usize) -> f64 {
        self.power[(s * self.l_d + l) * self.n_d + c]
    }

    /// Power one symbol of user `k` at `(l, n)` puts on grid `(row, c, s)`.
    pub fn own(&self, k: usize, l: usize, n: usize, row: usize, c: usize, s: usize) -> f64 {
        let q = s as i64 - self.half_r;
        self.kernels[k]
            .iter()
            .filter(|kern| (l + kern.delay) % self.l_d == row)
            .map(|kern| kern.main(c as i64 - n as i64, q).norm_sqr())
            .sum()
    }

    /// Power on the grid from every symbol except user `k`'s at `(l, n)`.
    pub fn excluding(&self, k: usize, l: usize, n: usize, row: usize, c: usize, s: usize) -> f64 {
        (self.total(row, c, s) - self.own(k, l, n, row, c, s)).max(0.0)
    }
}

/// Per-path weighting of the per-path symbol estimates `y_p / h_p`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Combiner {
    /// Weights equal to the per-path SINRs.
    Mrc,
    Uniform,
    /// All weight on the path with the largest SINR.
    SingleBest,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectionStats {
    pub path_sinr: Vec<f64>,
    pub combined_sinr: f64,
    /// `None` when every path channel vanishes.
    pub symbol: Option<C64>,
    pub predicted_mse: f64,
}

fn weights(gamma: &[f64], combiner: Combiner) -> Vec<f64> {
    match combiner {
        Combiner::Mrc => gamma.to_vec(),
        Combiner::Uniform => gamma.iter().map(|&g| if g > 0.0 { 1.0 } else { 0.0 }).collect(),
        Combiner::SingleBest => {
            let best = gamma
                .iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |acc, (i, &g)| if g > acc.1 { (i, g) } else { acc });
            (0..gamma.len()).map(|i| if i == best.0 && best.1 > 0.0 { 1.0 } else { 0.0 }).collect()
        }
    }
}

/// Collects user `channels.user_id`'s `P` observations of the symbol at
/// `(l, n)` and combines them.
pub fn mrc_detect(
    cube: &DDCube,
    channels: &DDChannelSet,
    position: (usize, usize),
    interference: &InterferenceMap,
    sigma_n2: f64,
    combiner: Combiner,
    cfg: &SystemConfig,
) -> DetectionStats {
    let (l, n) = position;
    let k = channels.user_id;
    let h_m = channels.main_vector(l, cfg);
    let mut gamma = Vec::with_capacity(h_m.len());
    let mut per_path = Vec::with_capacity(h_m.len());
    for (path, &h) in channels.paths.iter().zip(&h_m) {
        let row = (l + path.signature.i) % cfg.l_d;
        let col = wrap_index(n as i64 + path.signature.j, cfg.n_d);
        let s = cfg.angle_layer(path.signature.q);
        if h.norm_sqr() == 0.0 {
            gamma.push(0.0);
            per_path.push(C64::new(0.0, 0.0));
            continue;
        }
        let i_p = interference.excluding(k, l, n, row, col, s);
        gamma.push(h.norm_sqr() / (i_p + sigma_n2));
        per_path.push(cube.get(row, col, s) / h);
    }

    let w = weights(&gamma, combiner);
    let w_sum: f64 = w.iter().sum();
    let noise: f64 = w
        .iter()
        .zip(&gamma)
        .filter(|(_, &g)| g > 0.0)
        .map(|(wi, g)| wi * wi / g)
        .sum();
    let combined_sinr = if noise > 0.0 { w_sum * w_sum / noise } else { 0.0 };
    let symbol = (w_sum > 0.0).then(|| {
        per_path
            .iter()
            .zip(&w)
            .map(|(y, wi)| y * *wi)
            .sum::<C64>()
            / w_sum
    });
    DetectionStats {
        path_sinr: gamma,
        combined_sinr,
        symbol,
        predicted_mse: if combined_sinr > 0.0 { 1.0 / combined_sinr } else { f64::INFINITY },
    }
}
