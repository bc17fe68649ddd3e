use std::collections::BTreeSet;
use std::fmt::Write as _;

use crate::channel::{PathSignature, SystemConfig};
use crate::error::{Error, Result};
use crate::numkit::wrap_index;

/// Rectangle of delay-Doppler grids carrying one group's symbols.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ScheduleRegion {
    /// First delay row.
    pub l_k: usize,
    /// First Doppler column.
    pub n_k: usize,
    /// Rows along delay (`W_d`).
    pub w_delay: usize,
    /// Columns along Doppler (`W_D`).
    pub w_doppler: usize,
    /// Spacing of occupied Doppler columns; 1 packs the rectangle densely.
    pub sparsity_step: usize,
}

impl ScheduleRegion {
    pub fn new(l_k: usize, n_k: usize, w_delay: usize, w_doppler: usize, sparsity_step: usize) -> Result<Self> {
        if w_delay == 0 || w_doppler == 0 || sparsity_step == 0 {
            return Err(Error::Config("region widths and sparsity step must be positive".into()));
        }
        Ok(Self {
            l_k,
            n_k,
            w_delay,
            w_doppler,
            sparsity_step,
        })
    }

    /// Every `(l, n)` in the rectangle, wrapped onto the grid.
    pub fn grid_points(&self, cfg: &SystemConfig) -> Vec<(usize, usize)> {
        let mut out = Vec::with_capacity(self.w_delay * self.w_doppler);
        for dl in 0..self.w_delay {
            for dn in 0..self.w_doppler {
                out.push(((self.l_k + dl) % cfg.l_d, (self.n_k + dn) % cfg.n_d));
            }
        }
        out
    }

    pub fn contains(&self, l: usize, n: usize, cfg: &SystemConfig) -> bool {
        let dl = (l + cfg.l_d - self.l_k % cfg.l_d) % cfg.l_d;
        let dn = (n + cfg.n_d - self.n_k % cfg.n_d) % cfg.n_d;
        dl < self.w_delay && dn < self.w_doppler
    }

    pub fn pilot(&self) -> (usize, usize) {
        (self.l_k, self.n_k)
    }

    /// Occupied Doppler columns.
    pub fn active_columns(&self) -> usize {
        self.w_doppler.div_ceil(self.sparsity_step)
    }

    /// Data positions in row-major order over the occupied columns, pilot
    /// excluded.
    pub fn data_positions(&self, cfg: &SystemConfig) -> Vec<(usize, usize)> {
        let pilot = self.pilot();
        let mut out = Vec::with_capacity(self.w_delay * self.active_columns());
        for dl in 0..self.w_delay {
            for m in 0..self.active_columns() {
                let pos = ((self.l_k + dl) % cfg.l_d, (self.n_k + m * self.sparsity_step) % cfg.n_d);
                if pos != pilot {
                    out.push(pos);
                }
            }
        }
        out
    }

    pub fn capacity(&self) -> usize {
        self.w_delay * self.active_columns() - 1
    }

    pub fn with_sparsity(self, sparsity_step: usize) -> Self {
        Self { sparsity_step, ..self }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GuardGaps {
    pub d_theta: usize,
    pub d_tau: usize,
    pub d_nu: usize,
}

impl GuardGaps {
    /// `D_tau = max i`, `D_nu = 2 max |j|` over every path of every user.
    pub fn from_signatures(signatures: &[Vec<PathSignature>], d_theta: usize) -> Self {
        let all = signatures.iter().flatten();
        let d_tau = all.clone().map(|s| s.i).max().unwrap_or(0);
        let d_nu = 2 * all.map(|s| s.j.unsigned_abs() as usize).max().unwrap_or(0);
        Self { d_theta, d_tau, d_nu }
    }
}

/// Smallest cyclic distance between two angle-index sets.
pub fn angle_set_distance(a: &[i64], b: &[i64], n_r: usize) -> usize {
    let mut best = usize::MAX;
    for &x in a {
        for &y in b {
            let d = wrap_index(x - y, n_r);
            best = best.min(d.min(n_r - d));
        }
    }
    best
}

/// Greedy first-fit partition: a user joins the first group whose members
/// are all at least `d_theta` away in angle.
pub fn group_users(angle_sets: &[Vec<i64>], d_theta: usize, n_r: usize) -> Vec<Vec<usize>> {
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for (k, set) in angle_sets.iter().enumerate() {
        let slot = groups.iter().position(|g| {
            g.iter()
                .all(|&m| angle_set_distance(set, &angle_sets[m], n_r) >= d_theta)
        });
        match slot {
            Some(g) => groups[g].push(k),
            None => groups.push(vec![k]),
        }
    }
    groups
}

#[derive(Debug, Clone, PartialEq)]
pub struct Schedule {
    pub groups: Vec<Vec<usize>>,
    pub group_regions: Vec<ScheduleRegion>,
    /// Group of each user.
    pub user_group: Vec<usize>,
    pub signatures: Vec<Vec<PathSignature>>,
    pub gaps: GuardGaps,
}

impl Schedule {
    pub fn users(&self) -> usize {
        self.user_group.len()
    }

    pub fn region(&self, k: usize) -> &ScheduleRegion {
        &self.group_regions[self.user_group[k]]
    }

    pub fn pilot(&self, k: usize) -> (usize, usize) {
        self.region(k).pilot()
    }

    /// Uplink receive grids `(l, n, s)` of user `k`.
    pub fn receive_region(&self, k: usize, cfg: &SystemConfig) -> BTreeSet<(usize, usize, usize)> {
        self.shifted_region(k, 1, cfg)
    }

    /// Base-station transmit grids `(l, n, s)` of user `k` on the downlink.
    pub fn dl_transmit_region(&self, k: usize, cfg: &SystemConfig) -> BTreeSet<(usize, usize, usize)> {
        self.shifted_region(k, -1, cfg)
    }

    fn shifted_region(&self, k: usize, sign: i64, cfg: &SystemConfig) -> BTreeSet<(usize, usize, usize)> {
        let points = self.region(k).grid_points(cfg);
        let mut out = BTreeSet::new();
        for sig in &self.signatures[k] {
            let s = cfg.angle_layer(sig.q);
            for &(l, n) in &points {
                out.insert((
                    wrap_index(l as i64 + sign * sig.i as i64, cfg.l_d),
                    wrap_index(n as i64 + sign * sig.j, cfg.n_d),
                    s,
                ));
            }
        }
        out
    }

    /// Exhaustive pairwise intersection of uplink and downlink regions.
    pub fn verify_disjoint(&self, cfg: &SystemConfig) -> Result<()> {
        let ul: Vec<_> = (0..self.users()).map(|k| self.receive_region(k, cfg)).collect();
        let dl: Vec<_> = (0..self.users()).map(|k| self.dl_transmit_region(k, cfg)).collect();
        for a in 0..self.users() {
            for b in a + 1..self.users() {
                if !ul[a].is_disjoint(&ul[b]) || !dl[a].is_disjoint(&dl[b]) {
                    return Err(Error::Allocation(format!("regions of users {a} and {b} overlap")));
                }
            }
        }
        Ok(())
    }

    /// One line per user: group, rectangle, sparsity, pilot, angle indices.
    pub fn manifest(&self) -> String {
        let mut out = String::from("# user,group,l_k,n_k,W_d,W_D,sparsity_step,pilot_l,pilot_n,angles\n");
        for k in 0..self.users() {
            let r = self.region(k);
            let (pl, pn) = r.pilot();
            let angles: Vec<String> = self.signatures[k].iter().map(|s| s.q.to_string()).collect();
            let _ = writeln!(
                out,
                "{k},{},{},{},{},{},{},{pl},{pn},{}",
                self.user_group[k],
                r.l_k,
                r.n_k,
                r.w_delay,
                r.w_doppler,
                r.sparsity_step,
                angles.join(" ")
            );
        }
        out
    }
}

/// Slots along one axis of length `len` at the given pitch; a single slot
/// needs no gap to itself.
fn slots_along(len: usize, width: usize, gap: usize) -> usize {
    if width + gap <= len {
        len / (width + gap)
    } else {
        usize::from(width <= len)
    }
}

/// Groups users by angle and tiles their rectangles over the delay-Doppler
/// plane, delay first, with guard gaps derived from the signatures.
pub fn allocate_regions(
    signatures: &[Vec<PathSignature>],
    cfg: &SystemConfig,
    w_delay: usize,
    w_doppler: usize,
    sparsity_step: usize,
    d_theta: usize,
) -> Result<Schedule> {
    if d_theta == 0 {
        return Err(Error::Config("angle gap D_theta must be at least 1".into()));
    }
    let angle_sets: Vec<Vec<i64>> = signatures
        .iter()
        .map(|s| s.iter().map(|p| p.q).collect())
        .collect();
    let groups = group_users(&angle_sets, d_theta, cfg.n_r);
    let gaps = GuardGaps::from_signatures(signatures, d_theta);

    let along_delay = slots_along(cfg.l_d, w_delay, gaps.d_tau);
    let along_doppler = slots_along(cfg.n_d, w_doppler, gaps.d_nu);
    if along_delay * along_doppler < groups.len() {
        let binding = if along_delay == 0 {
            format!("W_d = {w_delay} exceeds L_D = {}", cfg.l_d)
        } else if along_doppler == 0 {
            format!("W_D = {w_doppler} exceeds N_D = {}", cfg.n_d)
        } else {
            format!(
                "{} groups need slots but delay fits {along_delay} (W_d + D_tau = {}) and Doppler fits {along_doppler} (W_D + D_nu = {})",
                groups.len(),
                w_delay + gaps.d_tau,
                w_doppler + gaps.d_nu
            )
        };
        return Err(Error::Allocation(binding));
    }

    let mut group_regions = Vec::with_capacity(groups.len());
    for slot in 0..groups.len() {
        let l_k = (slot % along_delay) * (w_delay + gaps.d_tau);
        let n_k = (slot / along_delay) * (w_doppler + gaps.d_nu);
        group_regions.push(ScheduleRegion::new(l_k, n_k, w_delay, w_doppler, sparsity_step)?);
    }
    let mut user_group = vec![0; signatures.len()];
    for (g, members) in groups.iter().enumerate() {
        for &k in members {
            user_group[k] = g;
        }
    }
    let schedule = Schedule {
        groups,
        group_regions,
        user_group,
        signatures: signatures.to_vec(),
        gaps,
    };
    schedule.verify_disjoint(cfg)?;
    Ok(schedule)
}
