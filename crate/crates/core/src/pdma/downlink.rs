use crate::channel::{PathKernel, SystemConfig};
use crate::error::{Error, Result};
use crate::numkit::{wrap_index, C64};
use crate::otfs::{DDCube, DDGrid};

use super::reconstruct::DDChannelSet;
use super::schedule::ScheduleRegion;

/// `conj(h) / ||h||`.
pub fn beamformer(h_m: &[C64]) -> Result<Vec<C64>> {
    let norm = h_m.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Err(Error::ZeroNorm);
    }
    Ok(h_m.iter().map(|z| z.conj() / norm).collect())
}

/// Writes the beamformed pilot and payload of one user into the base
/// station's transmit cube. Every symbol `u` for receive grid `(l, n)` goes
/// to `((l - i_p), <n - j_p>, q_p)` scaled by `b_p`.
pub fn dl_beamform(
    channels: &DDChannelSet,
    region: &ScheduleRegion,
    payload: &[C64],
    pilot_symbol: C64,
    cfg: &SystemConfig,
    tx: &mut DDCube,
) -> Result<()> {
    let positions = region.data_positions(cfg);
    if payload.len() > positions.len() {
        return Err(Error::Overflow {
            len: payload.len(),
            capacity: positions.len(),
        });
    }
    let symbols = std::iter::once((region.pilot(), pilot_symbol)).chain(positions.into_iter().zip(payload.iter().copied()));
    for ((l, n), u) in symbols {
        let b = beamformer(&channels.dl_main_vector(l, cfg))?;
        for (path, bp) in channels.paths.iter().zip(b) {
            let row = wrap_index(l as i64 - path.signature.i as i64, cfg.l_d);
            let col = wrap_index(n as i64 - path.signature.j, cfg.n_d);
            let s = cfg.angle_layer(path.signature.q);
            let v = tx.get(row, col, s);
            tx.set(row, col, s, v + bp * u);
        }
    }
    Ok(())
}

/// Signal a user with path kernels `kernels` receives from the transmit
/// cube, noiseless.
pub fn dl_propagate(tx: &DDCube, kernels: &[PathKernel], cfg: &SystemConfig) -> DDGrid {
    let mut y = DDGrid::zeros(cfg);
    let half = (cfg.n_r / 2) as i64;
    for s in 0..cfg.n_r {
        let layer = tx.layer(s);
        let q = s as i64 - half;
        for l in 0..cfg.l_d {
            for (c, &v) in layer.row(l).iter().enumerate() {
                if v == C64::new(0.0, 0.0) {
                    continue;
                }
                for kernel in kernels {
                    let row = (l + kernel.delay) % cfg.l_d;
                    let coeff = kernel.row_phase(row) * v;
                    let out = y.matrix_mut().row_mut(row);
                    for (col, acc) in out.iter_mut().enumerate() {
                        *acc += kernel.main(col as i64 - c as i64, q) * coeff;
                    }
                }
            }
        }
    }
    y
}

/// Equivalent scalar channel `h_true^T b` on row `l` when the beamformer is
/// built from `designed` and the propagation follows `truth`.
pub fn equivalent_channel(truth: &DDChannelSet, designed: &DDChannelSet, l: usize, cfg: &SystemConfig) -> Result<C64> {
    let b = beamformer(&designed.dl_main_vector(l, cfg))?;
    Ok(truth.dl_main_vector(l, cfg).iter().zip(&b).map(|(h, b)| h * b).sum())
}

#[derive(Debug, Clone, PartialEq)]
pub struct DlDetection {
    pub channel_estimate: C64,
    pub symbols: Vec<C64>,
    /// False when the pilot grid carried no more power than the noise.
    pub reliable: bool,
}

/// Estimates the scalar equivalent channel from the pilot grid and
/// equalises every data grid of the region with it.
pub fn dl_detect(
    y: &DDGrid,
    region: &ScheduleRegion,
    pilot_symbol: C64,
    payload_len: usize,
    sigma_n2: f64,
    cfg: &SystemConfig,
) -> DlDetection {
    let (pl, pn) = region.pilot();
    let observed = y.get(pl, pn);
    let g = observed / pilot_symbol;
    DlDetection {
        channel_estimate: g,
        symbols: dl_equalize(y, region, g, payload_len, cfg),
        reliable: observed.norm_sqr() > sigma_n2,
    }
}

/// Divides the first `payload_len` data grids of the region by `g`.
pub fn dl_equalize(y: &DDGrid, region: &ScheduleRegion, g: C64, payload_len: usize, cfg: &SystemConfig) -> Vec<C64> {
    region
        .data_positions(cfg)
        .into_iter()
        .take(payload_len)
        .map(|(l, n)| y.get(l, n) / g)
        .collect()
}
