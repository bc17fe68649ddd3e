use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::channel::{leakage_ratio, sample_user_channels, user_kernels, PathParams, SystemConfig, UserChannel};
use crate::error::{Error, Result};
use crate::nomp::{extract_paths, synthesize_training_rx, TrainingConfig, TrainingRoute};
use crate::numkit::C64;
use crate::otfs::{dd_model_receive, fill_awgn, DDCube, DDGrid, OtfsTransforms};
use crate::pdma::{
    allocate_regions, dl_beamform, dl_detect, dl_equalize, dl_propagate, equivalent_channel, exact_channels,
    mrc_detect, occupied_positions, place_data, reconstruct_channels, signatures_of, Combiner, DDChannelSet,
    InterferenceMap, PathGeometry, Schedule,
};

use super::config::{snr_to_noise_variance, velocity_to_doppler, ChannelMode, ExperimentSpec};
use super::matching::{angles, gains, match_paths, paired_values};
use super::{normalized_mse, normalized_mse_real, trial_seed, Metric, Point};

const STREAM_CHANNEL: u64 = 0;
const STREAM_TRAINING_NOISE: u64 = 1;
const STREAM_PAYLOAD: u64 = 2;
const STREAM_UL_NOISE: u64 = 3;
const STREAM_DL_NOISE: u64 = 4;
const STREAM_ORACLE: u64 = 5;

/// Direction of the single path used by the leakage map.
pub const LEAKAGE_THETA_DEG: f64 = 34.0;

/// 128 antennas, delay and Doppler bins, 20 MHz sampling, 6 GHz carrier at
/// 360 km/h.
pub fn leakage_reference_system() -> SystemConfig {
    let mut cfg = SystemConfig::paper_scale();
    cfg.n_r = 128;
    cfg.l_d = 128;
    cfg.n_d = 128;
    cfg.nu_max = velocity_to_doppler(360.0, cfg.wavelength);
    cfg
}

fn pilot() -> C64 {
    C64::new(1.0, 0.0)
}

fn at_snr(spec: &ExperimentSpec, snr_db: f64) -> SystemConfig {
    let mut cfg = spec.system.clone();
    cfg.sigma_n2 = snr_to_noise_variance(snr_db);
    cfg
}

fn qpsk(len: usize, rng: &mut ChaCha8Rng) -> Vec<C64> {
    let a = std::f64::consts::FRAC_1_SQRT_2;
    (0..len)
        .map(|_| {
            let re = if rng.random::<bool>() { a } else { -a };
            let im = if rng.random::<bool>() { a } else { -a };
            C64::new(re, im)
        })
        .collect()
}

fn truth_geometry(users: &[UserChannel]) -> Vec<Vec<PathGeometry>> {
    users.iter().map(|u| u.paths.iter().map(Into::into).collect()).collect()
}

/// In-range NOMP estimates per user from a training block at `cfg`'s noise
/// level.
fn estimate_paths(
    users: &[UserChannel],
    spec: &ExperimentSpec,
    cfg: &SystemConfig,
    noise_seed: u64,
) -> Result<Vec<Vec<crate::nomp::AtomEstimate>>> {
    let training = TrainingConfig::for_system(cfg, spec.n_t);
    let ys = synthesize_training_rx(users, &training, cfg, TrainingRoute::Direct, Some(noise_seed))?;
    ys.iter()
        .enumerate()
        .map(|(k, y)| Ok(extract_paths(y, k, &training, &spec.nomp, cfg)?.estimates))
        .collect()
}

fn schedule_for(
    geometry: &[Vec<PathGeometry>],
    spec: &ExperimentSpec,
    cfg: &SystemConfig,
    trial: usize,
    snr_db: f64,
) -> Result<Schedule> {
    allocate_regions(
        &signatures_of(geometry, cfg),
        cfg,
        spec.w_delay,
        spec.w_doppler,
        spec.sparsity_step,
        spec.d_theta,
    )
    .map_err(|e| match e {
        Error::Allocation(msg) => Error::Allocation(format!("trial {trial} at {snr_db} dB: {msg}")),
        other => other,
    })
}

/// Payload length of user `k`: the smaller of the capacities at the chosen
/// sparsity and at step 2, so dense and sparse runs carry the same symbols.
fn payload_len(schedule: &Schedule, k: usize) -> usize {
    let region = schedule.region(k);
    region.capacity().min(region.with_sparsity(2).capacity())
}

pub(super) fn run_param_capture(spec: &ExperimentSpec, trial: usize) -> Result<Vec<Point>> {
    let users = sample_user_channels(&spec.system, trial_seed(spec.seed, trial, STREAM_CHANNEL))?;
    let noise_seed = trial_seed(spec.seed, trial, STREAM_TRAINING_NOISE);
    let k = users.len() as f64;
    spec.snr_db
        .iter()
        .map(|&snr| {
            let cfg = at_snr(spec, snr);
            let estimates = estimate_paths(&users, spec, &cfg, noise_seed)?;
            let (mut theta, mut nu, mut h, mut extra, mut missed) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for (user, est) in users.iter().zip(&estimates) {
                let pairs = match_paths(&user.paths, est, &cfg);
                let (t, e) = angles(&pairs, &user.paths, est, &cfg);
                theta += normalized_mse_real(&e, &t)?;
                let (t, e) = paired_values(&pairs, &user.paths, est, |p| p.nu, |a| a.nu);
                nu += normalized_mse_real(&e, &t)?;
                let (t, e) = gains(&pairs, &user.paths, est);
                h += normalized_mse(&e, &t)?;
                extra += pairs.iter().filter(|p| p.truth.is_none()).count() as f64;
                missed += pairs.iter().filter(|p| p.estimate.is_none()).count() as f64;
            }
            Ok(Point {
                snr_db: Some(snr),
                metrics: vec![
                    Metric::mean("mse_theta", theta / k),
                    Metric::mean("mse_nu", nu / k),
                    Metric::mean("mse_h", h / k),
                    Metric::mean("false_paths", extra / k),
                    Metric::mean("missed_paths", missed / k),
                ],
            })
        })
        .collect()
}

/// Geometry and schedule at one SNR, from the truth or from NOMP.
fn link_setup(
    users: &[UserChannel],
    spec: &ExperimentSpec,
    cfg: &SystemConfig,
    trial: usize,
    snr_db: f64,
) -> Result<(Vec<Vec<PathGeometry>>, Schedule)> {
    let geometry = match spec.channel_mode {
        ChannelMode::Perfect => truth_geometry(users),
        ChannelMode::Estimated => {
            let est = estimate_paths(users, spec, cfg, trial_seed(spec.seed, trial, STREAM_TRAINING_NOISE))?;
            est.iter().map(|e| e.iter().map(Into::into).collect()).collect()
        }
    };
    let schedule = schedule_for(&geometry, spec, cfg, trial, snr_db)?;
    Ok((geometry, schedule))
}

fn payloads(schedule: &Schedule, spec: &ExperimentSpec, trial: usize) -> Vec<Vec<C64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(trial_seed(spec.seed, trial, STREAM_PAYLOAD));
    (0..schedule.users()).map(|k| qpsk(payload_len(schedule, k), &mut rng)).collect()
}

fn uplink_cube(
    x_all: &[DDGrid],
    users: &[UserChannel],
    cfg: &SystemConfig,
    noise_seed: u64,
) -> Result<DDCube> {
    let mut cube = dd_model_receive(x_all, users, cfg, None)?;
    cube.add_scaled(&DDCube::unit_noise(cfg, noise_seed), cfg.sigma_n2.sqrt());
    Ok(cube)
}

pub(super) fn run_ul_detect(spec: &ExperimentSpec, trial: usize) -> Result<Vec<Point>> {
    let users = sample_user_channels(&spec.system, trial_seed(spec.seed, trial, STREAM_CHANNEL))?;
    let noise_seed = trial_seed(spec.seed, trial, STREAM_UL_NOISE);
    spec.snr_db
        .iter()
        .map(|&snr| {
            let cfg = at_snr(spec, snr);
            let (geometry, schedule) = link_setup(&users, spec, &cfg, trial, snr)?;
            let data = payloads(&schedule, spec, trial);
            let x_all = (0..users.len())
                .map(|k| place_data(schedule.region(k), &data[k], pilot(), &cfg))
                .collect::<Result<Vec<_>>>()?;
            let cube = uplink_cube(&x_all, &users, &cfg, noise_seed)?;

            let (channels, kernels): (Vec<DDChannelSet>, Vec<_>) = match spec.channel_mode {
                ChannelMode::Perfect => users
                    .iter()
                    .enumerate()
                    .map(|(k, u)| (exact_channels(k, &u.paths, &cfg), user_kernels(u, &cfg)))
                    .unzip(),
                ChannelMode::Estimated => {
                    let sets = reconstruct_channels(&cube, &schedule, &geometry, pilot(), &cfg)?;
                    let kernels = sets.iter().map(|s| s.kernels(&cfg)).collect();
                    (sets, kernels)
                }
            };
            let active: Vec<_> = (0..users.len())
                .map(|k| occupied_positions(schedule.region(k), data[k].len(), &cfg))
                .collect();
            let map = InterferenceMap::build(kernels, &active, &cfg);

            let combiners = [Combiner::Mrc, Combiner::Uniform, Combiner::SingleBest];
            let mut mse = [0.0; 3];
            let mut predicted = 0.0;
            for (k, payload) in data.iter().enumerate() {
                let positions = schedule.region(k).data_positions(&cfg);
                for (ci, &combiner) in combiners.iter().enumerate() {
                    let mut est = Vec::with_capacity(payload.len());
                    for &pos in positions.iter().take(payload.len()) {
                        let stats = mrc_detect(&cube, &channels[k], pos, &map, cfg.sigma_n2, combiner, &cfg);
                        if combiner == Combiner::Mrc {
                            predicted += stats.predicted_mse / payload.len() as f64;
                        }
                        est.push(stats.symbol.unwrap_or_default());
                    }
                    mse[ci] += normalized_mse(&est, payload)?;
                }
            }
            let k = users.len() as f64;
            Ok(Point {
                snr_db: Some(snr),
                metrics: vec![
                    Metric::mean("ul_mse", mse[0] / k),
                    Metric::mean("ul_mse_uniform", mse[1] / k),
                    Metric::mean("ul_mse_single", mse[2] / k),
                    Metric::mean("ul_mse_predicted", predicted / k),
                ],
            })
        })
        .collect()
}

pub(super) fn run_dl_detect(spec: &ExperimentSpec, trial: usize) -> Result<Vec<Point>> {
    let users = sample_user_channels(&spec.system, trial_seed(spec.seed, trial, STREAM_CHANNEL))?;
    let truth: Vec<DDChannelSet> = users
        .iter()
        .enumerate()
        .map(|(k, u)| exact_channels(k, &u.paths, &spec.system))
        .collect();
    spec.snr_db
        .iter()
        .map(|&snr| {
            let cfg = at_snr(spec, snr);
            let (geometry, schedule) = link_setup(&users, spec, &cfg, trial, snr)?;
            let designed = match spec.channel_mode {
                ChannelMode::Perfect => truth.clone(),
                ChannelMode::Estimated => {
                    let pilots: Vec<DDGrid> = (0..users.len())
                        .map(|k| place_data(schedule.region(k), &[], pilot(), &cfg))
                        .collect::<Result<_>>()?;
                    let cube = uplink_cube(&pilots, &users, &cfg, trial_seed(spec.seed, trial, STREAM_UL_NOISE))?;
                    reconstruct_channels(&cube, &schedule, &geometry, pilot(), &cfg)?
                }
            };
            let data = payloads(&schedule, spec, trial);
            let mut tx = DDCube::zeros(&cfg);
            for (k, payload) in data.iter().enumerate() {
                dl_beamform(&designed[k], schedule.region(k), payload, pilot(), &cfg, &mut tx)?;
            }

            let mut rng = ChaCha8Rng::seed_from_u64(trial_seed(spec.seed, trial, STREAM_DL_NOISE));
            let mut mse = 0.0;
            for (k, user) in users.iter().enumerate() {
                let mut y = dl_propagate(&tx, &user_kernels(user, &cfg), &cfg);
                fill_awgn(y.matrix_mut().as_mut_slice(), cfg.sigma_n2, &mut rng);
                let region = schedule.region(k);
                let symbols = match spec.channel_mode {
                    ChannelMode::Perfect => {
                        let g = equivalent_channel(&truth[k], &designed[k], region.pilot().0, &cfg)?;
                        dl_equalize(&y, region, g, data[k].len(), &cfg)
                    }
                    ChannelMode::Estimated => dl_detect(&y, region, pilot(), data[k].len(), cfg.sigma_n2, &cfg).symbols,
                };
                mse += normalized_mse(&symbols, &data[k])?;
            }
            Ok(Point {
                snr_db: Some(snr),
                metrics: vec![Metric::mean("dl_mse", mse / users.len() as f64)],
            })
        })
        .collect()
}

pub(super) fn run_oracle_check(spec: &ExperimentSpec, trial: usize) -> Result<Vec<Point>> {
    let mut cfg = spec.system.clone();
    cfg.sigma_n2 = 0.0;
    let users = sample_user_channels(&cfg, trial_seed(spec.seed, trial, STREAM_CHANNEL))?;
    let mut rng = ChaCha8Rng::seed_from_u64(trial_seed(spec.seed, trial, STREAM_ORACLE));
    let x_all: Vec<DDGrid> = users
        .iter()
        .map(|_| {
            let mut g = DDGrid::zeros(&cfg);
            for (z, s) in g.matrix_mut().as_mut_slice().iter_mut().zip(qpsk(cfg.l_d * cfg.n_d, &mut rng)) {
                *z = s;
            }
            g
        })
        .collect();
    let tr = OtfsTransforms::new(&cfg);
    let signals = x_all.iter().map(|x| tr.modulate(x)).collect::<Result<Vec<_>>>()?;
    let rx = crate::otfs::propagate_time_domain(&signals, &users, &cfg, None)?;
    let physical = tr.demodulate(&rx)?;
    let model = dd_model_receive(&x_all, &users, &cfg, None)?;
    let err = model.relative_error(&physical);
    Ok(vec![Point {
        snr_db: None,
        metrics: vec![Metric::max("max_rel_error", err), Metric::mean("mean_rel_error", err)],
    }])
}

/// Leakage of a single path at `LEAKAGE_THETA_DEG` and the largest Doppler
/// of the configured system, in dB.
pub(super) fn run_leakage_map(spec: &ExperimentSpec) -> Result<Vec<Point>> {
    let cfg = &spec.system;
    let user = UserChannel {
        user_id: 0,
        paths: vec![PathParams {
            theta: LEAKAGE_THETA_DEG.to_radians(),
            tau_samples: 0,
            nu: cfg.nu_max,
            h: C64::new(1.0, 0.0),
            lambda_p: 1.0,
        }],
    };
    let mut metrics = Vec::new();
    for d_nu in 0..=4i64 {
        for d_theta in -2..=2i64 {
            let eta = leakage_ratio(&user, 0, d_nu, d_theta, cfg);
            metrics.push(Metric::mean(format!("eta_dnu{d_nu}_dtheta{d_theta}_db"), 10.0 * eta.log10()));
        }
    }
    Ok(vec![Point { snr_db: None, metrics }])
}
