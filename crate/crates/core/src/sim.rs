//! Scenario definitions, Monte Carlo trial execution, and MSE aggregation.
//!
//! A scenario fixes the road geometry, radio link, motion model, initial
//! state, tracker variant, and trial count. Each trial replays the same
//! template with randomness addressed by (purpose, RSU, step, trial) under
//! the scenario's master seed, so trials are independent, reproducible in
//! isolation, and parallelizable without changing a single bit of output.
//! Because the addresses never depend on which tracker consumes a draw, two
//! tracker variants see literally identical channels and noise whenever they
//! select the same RSUs — comparisons between trackers are paired by
//! construction (common random numbers).
//!
//! Every tracker variant, including the fixed single-RSU one, routes its
//! measurement through the stacked joint update with |U| = 1 where
//! applicable, so "selection happened to pick u every step" and "tracker was
//! pinned to u" produce bit-identical trajectories.

use nalgebra::{Matrix2, Vector2};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::io::{self, Write};
use std::str::FromStr;

use crate::channel::{
    array_response, average_snr, db_to_linear, dbm_to_watts, lift_channel, RadioParams,
};
use crate::ekf::{
    design_combiner, jacobian, predict, step_true_state, CombinerStrategy, MotionModel,
    StateEstimate, VehicleState,
};
use crate::exec;
use crate::geometry::{self, NetworkGeometry, RsuId};
use crate::joint::{assemble_joint, count_exchanged_samples, joint_update, PerRsuObservation};
use crate::rng::{stream_rng, Purpose};
use crate::selection::{
    sanr_exact_triple, select_rsu_set, snr_triple, SelectionPolicy, RsuSet,
};
use crate::{Error, Result};
use num_complex::Complex64;

/// Default master seed for presets; any fixed value works, this one is pinned
/// for reproducibility of shipped results.
pub const DEFAULT_SEED: u64 = 20_260_817;

/// Default trial count: desk-scale stand-in for large published runs.
pub const DEFAULT_TRIALS: u32 = 500;

/// Which tracking system runs the trial.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum TrackerKind {
    /// Always serve from one pinned RSU.
    Fixed(RsuId),
    /// Serve from the SNR-argmax RSU each step.
    SnrSelect,
    /// Serve from the SANR-argmax RSU each step.
    SanrSelect,
    /// Joint tracking over the SNR-threshold set.
    SnrJoint,
    /// Joint tracking over the SANR-threshold set.
    SanrJoint,
    /// Joint tracking over all three RSUs every step.
    FullCooperative,
}

impl TrackerKind {
    pub fn as_string(&self) -> String {
        match self {
            TrackerKind::Fixed(u) => format!("fixed:{u}"),
            TrackerKind::SnrSelect => "snr".into(),
            TrackerKind::SanrSelect => "sanr".into(),
            TrackerKind::SnrJoint => "snr-joint".into(),
            TrackerKind::SanrJoint => "sanr-joint".into(),
            TrackerKind::FullCooperative => "full".into(),
        }
    }

    /// True for the variants that fuse more than one RSU's samples.
    pub fn is_joint(&self) -> bool {
        matches!(
            self,
            TrackerKind::SnrJoint | TrackerKind::SanrJoint | TrackerKind::FullCooperative
        )
    }
}

impl fmt::Display for TrackerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.as_string())
    }
}

impl FromStr for TrackerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "snr" => Ok(TrackerKind::SnrSelect),
            "sanr" => Ok(TrackerKind::SanrSelect),
            "snr-joint" => Ok(TrackerKind::SnrJoint),
            "sanr-joint" => Ok(TrackerKind::SanrJoint),
            "full" => Ok(TrackerKind::FullCooperative),
            other => match other.strip_prefix("fixed:") {
                Some(num) => {
                    let n: u8 = num.parse().map_err(|_| {
                        Error::InvalidScenario(format!("invalid RSU number `{num}`"))
                    })?;
                    Ok(TrackerKind::Fixed(RsuId::new(n)?))
                }
                None => Err(Error::InvalidScenario(format!(
                    "unknown tracker `{other}` (expected fixed:<u>, snr, sanr, snr-joint, sanr-joint, or full)"
                ))),
            },
        }
    }
}

impl Serialize for TrackerKind {
    fn serialize<S: serde::Serializer>(&self, ser: S) -> std::result::Result<S::Ok, S::Error> {
        ser.serialize_str(&self.as_string())
    }
}

impl<'de> Deserialize<'de> for TrackerKind {
    fn deserialize<D: serde::Deserializer<'de>>(de: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(de)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Complete, self-contained simulation description.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub geometry: NetworkGeometry,
    pub radio: RadioParams,
    pub motion: MotionModel,
    /// Initial longitudinal position (m).
    pub x0: f64,
    /// Initial longitudinal speed (m/s).
    pub v0: f64,
    /// Tracked duration (s); must be an integral number of sampling steps.
    pub duration: f64,
    pub policy: SelectionPolicy,
    pub tracker: TrackerKind,
    pub strategy: CombinerStrategy,
    pub trials: u32,
    pub master_seed: u64,
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        self.geometry.validate()?;
        self.radio.validate()?;
        self.motion.validate()?;
        self.policy.validate()?;
        // The vehicle must drive strictly between the roadside arrays.
        if !(self.geometry.lane_y > 0.0 && self.geometry.lane_y < self.geometry.y_offset) {
            return Err(Error::InvalidScenario(format!(
                "lane y = {} must lie strictly inside (0, {})",
                self.geometry.lane_y, self.geometry.y_offset
            )));
        }
        if !(self.duration > 0.0) || !self.duration.is_finite() {
            return Err(Error::InvalidScenario(format!(
                "duration must be positive, got {}",
                self.duration
            )));
        }
        let steps = self.duration / self.motion.ts;
        if (steps - steps.round()).abs() > 1e-9 * steps.round().max(1.0) {
            return Err(Error::InvalidScenario(format!(
                "duration {} s is not an integral number of {} s steps",
                self.duration, self.motion.ts
            )));
        }
        if self.trials < 1 {
            return Err(Error::InvalidScenario("trials must be ≥ 1".into()));
        }
        if !self.x0.is_finite() || !self.v0.is_finite() {
            return Err(Error::InvalidScenario("initial state must be finite".into()));
        }
        Ok(())
    }

    /// Number of sounding steps in the trial.
    pub fn steps(&self) -> usize {
        (self.duration / self.motion.ts).round() as usize
    }
}

/// Everything recorded about one step of one trial.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepRecord {
    /// 1-based step index.
    pub step: u32,
    pub true_state: VehicleState,
    /// Posterior state estimate after the joint update.
    pub estimate: VehicleState,
    pub selected: RsuSet,
    pub samples_used: u8,
    pub samples_exchanged: u8,
    /// True when the sample was non-finite and the update was skipped.
    pub rejected: bool,
    /// Predicted covariance (q11, q12, q22) before the update.
    pub cov_prior: [f64; 3],
    /// Posterior covariance (q11, q12, q22) after the update.
    pub cov_post: [f64; 3],
}

/// Full trajectory record of a single Monte Carlo trial.
#[derive(Clone, Debug, PartialEq)]
pub struct TrialRecord {
    pub trial: u32,
    pub steps: Vec<StepRecord>,
}

fn select_set(
    sc: &Scenario,
    pred: &StateEstimate,
) -> RsuSet {
    match sc.tracker {
        TrackerKind::Fixed(u) => RsuSet::single(u),
        TrackerKind::SnrSelect => {
            let m = snr_triple(pred.position(), &sc.geometry, &sc.radio);
            argmax_set(&m)
        }
        TrackerKind::SanrSelect => {
            let m = sanr_exact_triple(pred, &sc.geometry, &sc.radio, &sc.motion);
            argmax_set(&m)
        }
        TrackerKind::SnrJoint => {
            let m = snr_triple(pred.position(), &sc.geometry, &sc.radio);
            select_rsu_set(m, sc.policy.tau_th)
        }
        TrackerKind::SanrJoint => {
            let m = sanr_exact_triple(pred, &sc.geometry, &sc.radio, &sc.motion);
            select_rsu_set(m, sc.policy.tau_th)
        }
        TrackerKind::FullCooperative => RsuSet::new(&RsuId::ALL),
    }
}

fn argmax_set(metrics: &[f64; 3]) -> RsuSet {
    let mut best = 0;
    for i in 1..3 {
        if metrics[i] > metrics[best] {
            best = i;
        }
    }
    RsuSet::single(RsuId::ALL[best])
}

/// Runs one trial: α and per-RSU LOS phases drawn per trial, NLOS fading and
/// sounding noise per step, Q̂₀ = 0 with the true initial state fed back.
/// Deterministic given (scenario, trial_index).
pub fn run_trial(sc: &Scenario, trial_index: u32) -> TrialRecord {
    let geom = &sc.geometry;
    let mm = &sc.motion;
    let seed = sc.master_seed;

    let alpha = {
        let mut r = stream_rng(seed, Purpose::Motion, None, 0, trial_index);
        mm.sigma_alpha * r.sample::<f64, _>(rand_distr::StandardNormal)
    };
    let betas: [Complex64; 3] = RsuId::ALL.map(|u| {
        let mut r = stream_rng(seed, Purpose::FadingLos, Some(u), 0, trial_index);
        crate::channel::draw_los_beta(&mut r)
    });

    let mut truth = VehicleState { x: sc.x0, v: sc.v0 };
    let mut est = StateEstimate::new(Vector2::new(sc.x0, sc.v0), Matrix2::zeros());
    let steps = sc.steps();
    let mut records = Vec::with_capacity(steps);

    for ell in 1..=steps as u32 {
        let mut motion_rng = stream_rng(seed, Purpose::Motion, None, ell, trial_index);
        truth = step_true_state(truth, alpha, mm, &mut motion_rng);

        let pred = predict(&est, mm);
        let selected = select_set(sc, &pred);

        let parts: Vec<PerRsuObservation> = selected
            .iter()
            .map(|u| {
                let beta = betas[u.index()];
                let comb = design_combiner(
                    u,
                    &pred,
                    geom,
                    &sc.radio,
                    sc.strategy,
                    (ell - 1) as usize,
                );
                let psi_true = geometry::spatial_frequency(u, truth.x, geom);
                let mut fading_rng =
                    stream_rng(seed, Purpose::FadingNlos, Some(u), ell, trial_index);
                let ch = crate::channel::draw_channel_with_beta(
                    u,
                    psi_true,
                    &sc.radio,
                    beta,
                    &mut fading_rng,
                );
                let rho = average_snr(u, truth.x, geom, &sc.radio);
                let mut noise_rng = stream_rng(seed, Purpose::Noise, Some(u), ell, trial_index);
                let sample = crate::channel::sound(&ch, &comb, rho, &mut noise_rng);

                let psi_hat = geometry::spatial_frequency(u, pred.position(), geom);
                let h_pred: Vec<Complex64> =
                    array_response(sc.radio.m, psi_hat).iter().map(|d| beta * d).collect();
                PerRsuObservation {
                    sample,
                    comb,
                    jacobian: jacobian(u, &pred, beta, sc.radio.m, geom, mm),
                    h_pred_real: lift_channel(&h_pred),
                }
            })
            .collect();

        let obs = assemble_joint(&selected, &parts);
        let out = joint_update(&pred, &obs);
        est = out.est;

        let (used, exchanged) = count_exchanged_samples(&selected);
        records.push(StepRecord {
            step: ell,
            true_state: truth,
            estimate: VehicleState { x: est.position(), v: est.velocity() },
            selected,
            samples_used: used as u8,
            samples_exchanged: exchanged as u8,
            rejected: out.rejected,
            cov_prior: [pred.q_hat[(0, 0)], pred.q_hat[(0, 1)], pred.q_hat[(1, 1)]],
            cov_post: [est.q_hat[(0, 0)], est.q_hat[(0, 1)], est.q_hat[(1, 1)]],
        });
    }
    TrialRecord { trial: trial_index, steps: records }
}

/// Runs all trials (parallel when the `parallel` feature is on), ordered by
/// trial index.
pub fn collect_trials(sc: &Scenario) -> Vec<TrialRecord> {
    exec::indexed_map(sc.trials as usize, |i| run_trial(sc, i as u32))
}

/// Sequential reference implementation of [`collect_trials`].
pub fn collect_trials_seq(sc: &Scenario) -> Vec<TrialRecord> {
    exec::indexed_map_seq(sc.trials as usize, |i| run_trial(sc, i as u32))
}

/// Per-step mean-squared errors and sounding-sample usage over all trials.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MseSeries {
    /// Sampling interval, for the time axis (s).
    pub ts: f64,
    pub trials: u32,
    /// Υ_x(ℓ): mean squared position error per step (m²).
    pub mse_x: Vec<f64>,
    /// Υ_v(ℓ): mean squared velocity error per step (m²/s²).
    pub mse_v: Vec<f64>,
    /// Mean |U| per step.
    pub avg_samples_used: Vec<f64>,
    /// Mean |U| − 1 per step.
    pub avg_samples_exchanged: Vec<f64>,
}

impl MseSeries {
    pub fn from_trials(ts: f64, trials: &[TrialRecord]) -> Self {
        assert!(!trials.is_empty(), "at least one trial required");
        let steps = trials[0].steps.len();
        assert!(
            trials.iter().all(|t| t.steps.len() == steps),
            "all trials must share a step count"
        );
        let n = trials.len() as f64;
        let mut mse_x = vec![0.0; steps];
        let mut mse_v = vec![0.0; steps];
        let mut used = vec![0.0; steps];
        let mut exchanged = vec![0.0; steps];
        for t in trials {
            for (i, s) in t.steps.iter().enumerate() {
                let ex = s.true_state.x - s.estimate.x;
                let ev = s.true_state.v - s.estimate.v;
                mse_x[i] += ex * ex;
                mse_v[i] += ev * ev;
                used[i] += s.samples_used as f64;
                exchanged[i] += s.samples_exchanged as f64;
            }
        }
        for series in [&mut mse_x, &mut mse_v, &mut used, &mut exchanged] {
            for v in series.iter_mut() {
                *v /= n;
            }
        }
        MseSeries {
            ts,
            trials: trials.len() as u32,
            mse_x,
            mse_v,
            avg_samples_used: used,
            avg_samples_exchanged: exchanged,
        }
    }

    pub fn steps(&self) -> usize {
        self.mse_x.len()
    }

    /// Mean |U| over all steps.
    pub fn mean_samples_used(&self) -> f64 {
        self.avg_samples_used.iter().sum::<f64>() / self.avg_samples_used.len() as f64
    }

    /// Final-step (Υ_x, Υ_v).
    pub fn final_mse(&self) -> (f64, f64) {
        (*self.mse_x.last().unwrap(), *self.mse_v.last().unwrap())
    }
}

/// Runs the scenario's full Monte Carlo and aggregates the MSE series.
pub fn run_monte_carlo(sc: &Scenario) -> MseSeries {
    MseSeries::from_trials(sc.motion.ts, &collect_trials(sc))
}

/// Sequential reference implementation of [`run_monte_carlo`].
pub fn run_monte_carlo_seq(sc: &Scenario) -> MseSeries {
    MseSeries::from_trials(sc.motion.ts, &collect_trials_seq(sc))
}

/// Writes the aggregated series as CSV:
/// `step,time_s,mse_x,mse_v,avg_samples_used,avg_samples_exchanged`.
pub fn write_track_csv<W: Write>(series: &MseSeries, out: &mut W) -> io::Result<()> {
    writeln!(out, "step,time_s,mse_x,mse_v,avg_samples_used,avg_samples_exchanged")?;
    for i in 0..series.steps() {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            i + 1,
            (i + 1) as f64 * series.ts,
            series.mse_x[i],
            series.mse_v[i],
            series.avg_samples_used[i],
            series.avg_samples_exchanged[i]
        )?;
    }
    Ok(())
}

/// Covariance (q11, q12, q22) of the prediction-only filter after `steps`
/// chained predicts from Q̂₀ = 0 — the "no measurements" prior against which
/// tracking gains are normalized.
pub fn open_loop_covariance(mm: &MotionModel, steps: usize) -> [f64; 3] {
    let mut est = StateEstimate::new(Vector2::zeros(), Matrix2::zeros());
    for _ in 0..steps {
        est = predict(&est, mm);
    }
    [est.q_hat[(0, 0)], est.q_hat[(0, 1)], est.q_hat[(1, 1)]]
}

fn base_scenario(
    geom: NetworkGeometry,
    m: usize,
    x0: f64,
    duration: f64,
    tracker: TrackerKind,
    policy: SelectionPolicy,
) -> Scenario {
    let v0 = 60.0 / 3.6;
    Scenario {
        geometry: geom,
        radio: RadioParams {
            m,
            carrier_freq: 28e9,
            bandwidth: 20e6,
            tx_power: dbm_to_watts(23.0),
            noise_power: dbm_to_watts(-101.0),
            pathloss_exp: 2.0,
            rician_k: db_to_linear(13.0),
        },
        motion: MotionModel { ts: 0.01, sigma_alpha: 0.05 * v0, sigma_omega: 10f64.powf(-1.5) },
        x0,
        v0,
        duration,
        policy,
        tracker,
        strategy: CombinerStrategy::MonopulseDither,
        trials: DEFAULT_TRIALS,
        master_seed: DEFAULT_SEED,
    }
}

/// Named experiment presets.
///
/// * `fig3_crossoverB` — single-RSU tracking through the lane segment where
///   the SNR and SANR choices disagree; the start position sits 1.25 s
///   upstream of the disagreement boundary so the window straddles it.
/// * `fig4a_rsu1area` — wide-spacing geometry, far lane, a segment served
///   entirely by RSU 1 under the SANR policy.
/// * `fig4b_rsu2area` — wide-spacing geometry, near lane, a segment served
///   entirely by RSU 2 under the SANR policy.
/// * `fig5_rsu12` — joint tracking through the region where RSUs 1 and 2
///   share the service area.
pub fn preset(name: &str) -> Result<Scenario> {
    match name {
        "fig3_crossoverB" => {
            let geom = NetworkGeometry::new(75.0, 31.0, 7.5, 3.25)?;
            let sc = base_scenario(
                geom,
                32,
                0.0,
                2.5,
                TrackerKind::SanrSelect,
                SelectionPolicy::sanr(),
            );
            let boundary = crate::selection::snr_sanr_disagreement_boundary(
                &geom,
                &sc.radio,
                sc.policy.q11_ref,
                0.0,
                70.0,
            )
            .expect("default geometry has a disagreement zone");
            Ok(Scenario { x0: boundary - 1.25 * sc.v0, ..sc })
        }
        "fig4a_rsu1area" => {
            let geom = NetworkGeometry::new(125.0, 31.0, 7.5, 3.25)?;
            Ok(base_scenario(
                geom,
                32,
                -75.0,
                1.5,
                TrackerKind::SanrSelect,
                SelectionPolicy::sanr(),
            ))
        }
        "fig4b_rsu2area" => {
            let geom = NetworkGeometry::new(125.0, 31.0, 7.5, 24.25)?;
            Ok(base_scenario(
                geom,
                32,
                -80.0,
                1.5,
                TrackerKind::SanrSelect,
                SelectionPolicy::sanr(),
            ))
        }
        "fig5_rsu12" => {
            let geom = NetworkGeometry::new(75.0, 31.0, 7.5, 3.25)?;
            Ok(base_scenario(
                geom,
                32,
                -60.0,
                2.5,
                TrackerKind::SanrJoint,
                SelectionPolicy::sanr(),
            ))
        }
        other => Err(Error::UnknownPreset(other.to_string())),
    }
}

/// Names accepted by [`preset`].
pub const PRESET_NAMES: [&str; 4] =
    ["fig3_crossoverB", "fig4a_rsu1area", "fig4b_rsu2area", "fig5_rsu12"];
