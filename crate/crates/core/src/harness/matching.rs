use std::f64::consts::PI;

use crate::channel::{PathParams, SystemConfig};
use crate::nomp::AtomEstimate;
use crate::numkit::C64;

/// One entry of a truth/estimate pairing. Either side may be absent: a
/// missed path has no estimate, a spurious estimate has no truth.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Pair {
    pub truth: Option<usize>,
    pub estimate: Option<usize>,
}

/// The direction closest to `reference` whose spatial frequency matches
/// `estimate`'s modulo the array's ambiguity period, allowing half an angle
/// bin of overshoot past endfire. With half-wavelength spacing this folds
/// estimates near one endfire onto the other.
pub fn resolve_angle_alias(estimate: f64, reference: f64, cfg: &SystemConfig) -> f64 {
    let period = 1.0 / cfg.d_over_lambda;
    let slack = 0.5 / (cfg.n_r as f64 * cfg.d_over_lambda);
    let s = estimate.sin();
    (-2..=2)
        .map(|m| s + m as f64 * period)
        .filter(|v| v.abs() <= 1.0 + slack)
        .map(|v| v.clamp(-1.0, 1.0).asin())
        .fold(estimate, |best, t| {
            if (t - reference).abs() < (best - reference).abs() {
                t
            } else {
                best
            }
        })
}

/// Distance in parameter space with every axis scaled to its range.
pub fn parameter_distance(t: &PathParams, e: &AtomEstimate, cfg: &SystemConfig) -> f64 {
    let dt = (t.theta - resolve_angle_alias(e.theta, t.theta, cfg)) / PI;
    let dd = (t.tau_samples as f64 - e.tau_samples as f64) / (cfg.n_tau + 1) as f64;
    let dn = (t.nu - e.nu) / (2.0 * cfg.nu_max);
    (dt * dt + dd * dd + dn * dn).sqrt()
}

/// Greedy closest-first pairing. Truths come first in the output in their
/// own order, followed by unmatched estimates.
pub fn match_paths(truth: &[PathParams], estimates: &[AtomEstimate], cfg: &SystemConfig) -> Vec<Pair> {
    let mut candidates: Vec<(f64, usize, usize)> = truth
        .iter()
        .enumerate()
        .flat_map(|(i, t)| {
            estimates
                .iter()
                .enumerate()
                .map(move |(j, e)| (parameter_distance(t, e, cfg), i, j))
        })
        .collect();
    candidates.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));

    let mut est_of = vec![None; truth.len()];
    let mut used = vec![false; estimates.len()];
    for (_, i, j) in candidates {
        if est_of[i].is_none() && !used[j] {
            est_of[i] = Some(j);
            used[j] = true;
        }
    }
    let mut pairs: Vec<Pair> = est_of
        .into_iter()
        .enumerate()
        .map(|(i, e)| Pair {
            truth: Some(i),
            estimate: e,
        })
        .collect();
    pairs.extend(used.iter().enumerate().filter(|(_, u)| !**u).map(|(j, _)| Pair {
        truth: None,
        estimate: Some(j),
    }));
    pairs
}

/// Truth and estimate vectors of one parameter over a pairing; absent sides
/// read as zero.
pub fn paired_values<F, G, T>(pairs: &[Pair], truth: &[PathParams], estimates: &[AtomEstimate], ft: F, fe: G) -> (Vec<T>, Vec<T>)
where
    F: Fn(&PathParams) -> T,
    G: Fn(&AtomEstimate) -> T,
    T: Default,
{
    pairs
        .iter()
        .map(|p| {
            (
                p.truth.map_or_else(T::default, |i| ft(&truth[i])),
                p.estimate.map_or_else(T::default, |j| fe(&estimates[j])),
            )
        })
        .unzip()
}

/// Angle vectors over a pairing, with each matched estimate moved to its
/// alias nearest the truth.
pub fn angles(pairs: &[Pair], truth: &[PathParams], estimates: &[AtomEstimate], cfg: &SystemConfig) -> (Vec<f64>, Vec<f64>) {
    pairs
        .iter()
        .map(|p| match (p.truth, p.estimate) {
            (Some(i), Some(j)) => {
                let t = truth[i].theta;
                (t, resolve_angle_alias(estimates[j].theta, t, cfg))
            }
            (Some(i), None) => (truth[i].theta, 0.0),
            (None, Some(j)) => (0.0, estimates[j].theta),
            (None, None) => (0.0, 0.0),
        })
        .unzip()
}

pub fn gains(pairs: &[Pair], truth: &[PathParams], estimates: &[AtomEstimate]) -> (Vec<C64>, Vec<C64>) {
    paired_values(pairs, truth, estimates, |t| t.h, |e| e.h)
}
