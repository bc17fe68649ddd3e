use std::f64::consts::PI;

use crate::channel::{grid_response, secondary_factor, signature, PathKernel, PathParams, PathSignature, SystemConfig};
use crate::error::Result;
use crate::nomp::AtomEstimate;
use crate::numkit::{wrap_index, C64};
use crate::otfs::DDCube;

use super::schedule::Schedule;

const DEGENERATE_RESPONSE: f64 = 1e-12;

/// Angle, delay and Doppler of one path, without its gain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathGeometry {
    pub theta: f64,
    pub tau_samples: usize,
    pub nu: f64,
}

impl PathGeometry {
    fn with_gain(&self, h: C64) -> PathParams {
        PathParams {
            theta: self.theta,
            tau_samples: self.tau_samples,
            nu: self.nu,
            h,
            lambda_p: h.norm_sqr(),
        }
    }

    pub fn signature(&self, cfg: &SystemConfig) -> PathSignature {
        signature(&self.with_gain(C64::new(0.0, 0.0)), cfg)
    }
}

impl From<&PathParams> for PathGeometry {
    fn from(p: &PathParams) -> Self {
        Self {
            theta: p.theta,
            tau_samples: p.tau_samples,
            nu: p.nu,
        }
    }
}

impl From<&AtomEstimate> for PathGeometry {
    fn from(e: &AtomEstimate) -> Self {
        Self {
            theta: e.theta,
            tau_samples: e.tau_samples,
            nu: e.nu,
        }
    }
}

pub fn signatures_of(geometry: &[Vec<PathGeometry>], cfg: &SystemConfig) -> Vec<Vec<PathSignature>> {
    geometry
        .iter()
        .map(|paths| paths.iter().map(|g| g.signature(cfg)).collect())
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct PathChannel {
    pub geometry: PathGeometry,
    pub signature: PathSignature,
    /// Main-channel gain at the signature.
    pub h_bar: C64,
    /// Physical gain backed out of `h_bar`; `None` when the grid response at
    /// the signature is degenerate.
    pub h_hat: Option<C64>,
}

impl PathChannel {
    /// Secondary-channel gain on received delay row `ell`.
    pub fn secondary(&self, ell: usize, cfg: &SystemConfig) -> C64 {
        secondary_factor(self.geometry.nu, ell, cfg.t_s) * self.h_bar
    }

    /// `h_bar + g_bar^ell`.
    pub fn composite(&self, ell: usize, cfg: &SystemConfig) -> C64 {
        self.h_bar * C64::from_polar(1.0, 2.0 * PI * self.geometry.nu * ell as f64 * cfg.t_s)
    }

    /// Full-grid kernel regenerated from the recovered physical gain.
    pub fn kernel(&self, cfg: &SystemConfig) -> Option<PathKernel> {
        self.h_hat.map(|h| PathKernel::new(&self.geometry.with_gain(h), cfg))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DDChannelSet {
    pub user_id: usize,
    pub paths: Vec<PathChannel>,
}

impl DDChannelSet {
    pub fn kernels(&self, cfg: &SystemConfig) -> Vec<PathKernel> {
        self.paths.iter().filter_map(|p| p.kernel(cfg)).collect()
    }

    /// Per-path composite main channel seen by a symbol on delay row `l`.
    pub fn main_vector(&self, l: usize, cfg: &SystemConfig) -> Vec<C64> {
        self.paths
            .iter()
            .map(|p| p.composite((l + p.signature.i) % cfg.l_d, cfg))
            .collect()
    }

    /// Main-channel vector for the downlink, observed on row `l` itself.
    pub fn dl_main_vector(&self, l: usize, cfg: &SystemConfig) -> Vec<C64> {
        self.paths.iter().map(|p| p.composite(l, cfg)).collect()
    }
}

/// Exact channel set built from known gains: `h_bar` is the main channel of
/// the path at its own signature.
pub fn exact_channels(user_id: usize, paths: &[PathParams], cfg: &SystemConfig) -> DDChannelSet {
    DDChannelSet {
        user_id,
        paths: paths
            .iter()
            .map(|p| {
                let sig = signature(p, cfg);
                PathChannel {
                    geometry: p.into(),
                    signature: sig,
                    h_bar: PathKernel::new(p, cfg).main(sig.j, sig.q),
                    h_hat: Some(p.h),
                }
            })
            .collect(),
    }
}

/// Reads each user's pilot observation on every path's shifted grid and
/// recovers the main and physical gains.
pub fn reconstruct_channels(
    cube: &DDCube,
    schedule: &Schedule,
    geometry: &[Vec<PathGeometry>],
    pilot_symbol: C64,
    cfg: &SystemConfig,
) -> Result<Vec<DDChannelSet>> {
    let scale = cfg.n_d as f64 * (cfg.n_r as f64).sqrt();
    let sets = geometry
        .iter()
        .enumerate()
        .map(|(k, paths)| {
            let (l_t, n_t) = schedule.pilot(k);
            let paths = paths
                .iter()
                .map(|g| {
                    let sig = g.signature(cfg);
                    let row = (l_t + sig.i) % cfg.l_d;
                    let col = wrap_index(n_t as i64 + sig.j, cfg.n_d);
                    let y = cube.get(row, col, cfg.angle_layer(sig.q));
                    let phase = C64::from_polar(1.0, 2.0 * PI * g.nu * row as f64 * cfg.t_s);
                    let h_bar = y / (pilot_symbol * phase);
                    let response = grid_response(&g.with_gain(C64::new(1.0, 0.0)), sig.i, sig.j, sig.q, cfg);
                    let h_hat = (response.norm() >= DEGENERATE_RESPONSE).then(|| {
                        scale * h_bar / (C64::from_polar(1.0, 2.0 * PI * g.nu * cfg.t_s) * response)
                    });
                    PathChannel {
                        geometry: *g,
                        signature: sig,
                        h_bar,
                        h_hat,
                    }
                })
                .collect();
            DDChannelSet { user_id: k, paths }
        })
        .collect();
    Ok(sets)
}
