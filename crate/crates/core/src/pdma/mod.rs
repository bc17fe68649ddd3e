//! Path division multiple access over the delay-Doppler-angle grid: angle
//! grouping and rectangle allocation, pilot-based channel reconstruction,
//! uplink combining and downlink beamforming.

mod detect;
mod downlink;
mod reconstruct;
mod schedule;

pub use detect::{mrc_detect, Combiner, DetectionStats, InterferenceMap};
pub use downlink::{beamformer, dl_beamform, dl_detect, dl_equalize, dl_propagate, equivalent_channel, DlDetection};
pub use reconstruct::{
    exact_channels, reconstruct_channels, signatures_of, DDChannelSet, PathChannel, PathGeometry,
};
pub use schedule::{
    allocate_regions, angle_set_distance, group_users, GuardGaps, Schedule, ScheduleRegion,
};

use crate::channel::{leakage_ratio, SystemConfig, UserChannel};
use crate::error::{Error, Result};
use crate::numkit::C64;
use crate::otfs::DDGrid;

/// Pilot at the region corner and `payload` on the first data positions.
pub fn place_data(region: &ScheduleRegion, payload: &[C64], pilot_symbol: C64, cfg: &SystemConfig) -> Result<DDGrid> {
    let positions = region.data_positions(cfg);
    if payload.len() > positions.len() {
        return Err(Error::Overflow {
            len: payload.len(),
            capacity: positions.len(),
        });
    }
    let mut grid = DDGrid::zeros(cfg);
    let (pl, pn) = region.pilot();
    grid.set(pl, pn, pilot_symbol);
    for (&(l, n), &v) in positions.iter().zip(payload) {
        grid.set(l, n, v);
    }
    Ok(grid)
}

pub fn extract_data(grid: &DDGrid, region: &ScheduleRegion, len: usize, cfg: &SystemConfig) -> Vec<C64> {
    region
        .data_positions(cfg)
        .into_iter()
        .take(len)
        .map(|(l, n)| grid.get(l, n))
        .collect()
}

/// Occupied positions of a region carrying `payload_len` symbols, pilot
/// first.
pub fn occupied_positions(region: &ScheduleRegion, payload_len: usize, cfg: &SystemConfig) -> Vec<(usize, usize)> {
    std::iter::once(region.pilot())
        .chain(region.data_positions(cfg).into_iter().take(payload_len))
        .collect()
}

/// Doppler leakage into path `p`'s grid summed over all other Doppler
/// offsets, for a fully loaded single-user block.
pub fn interference_ratio_lambda(user: &UserChannel, p: usize, cfg: &SystemConfig) -> f64 {
    (1..cfg.n_d as i64).map(|d| leakage_ratio(user, p, d, 0, cfg)).sum()
}
