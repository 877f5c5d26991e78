//! Joint multi-RSU Kalman update over stacked sounding samples.
//!
//! When a set U of RSUs serves the vehicle simultaneously, their real-lifted
//! samples stack into r̃ ∈ ℝ^{2|U|}, the combiners into a block-diagonal
//! Z ∈ ℝ^{2|U|×2M|U|}, the Jacobians into D ∈ ℝ^{2M|U|×2}, and the per-RSU
//! average SNRs into a diagonal P whose square root enters as P^{1/2} ⊗ I₂.
//! The update is then one textbook Kalman step against the 2|U|-dimensional
//! observation with noise I/2 — identical in form to the single-RSU step, to
//! which it reduces exactly when |U| = 1.
//!
//! Sample exchange: the serving (primary) RSU fuses its own sample with
//! |U| − 1 exchanged ones, which is the backhaul cost the selection threshold
//! τ_th trades against accuracy.

use nalgebra::{DMatrix, DVector, Matrix2, Vector2};

use crate::channel::{Combiner, SoundingSample};
use crate::ekf::{StateEstimate, UpdateOutcome};
use crate::selection::RsuSet;

/// Everything one RSU contributes to a joint step.
#[derive(Clone, Debug, PartialEq)]
pub struct PerRsuObservation {
    pub sample: SoundingSample,
    pub comb: Combiner,
    /// Measurement Jacobian D̃ᵘ ∈ ℝ^{2M×2} at the shared prediction.
    pub jacobian: DMatrix<f64>,
    /// Real-lifted predicted channel h̃ᵘ(ψ̂) ∈ ℝ^{2M}.
    pub h_pred_real: DVector<f64>,
}

/// Stacked multi-RSU observation, block-ordered by the selection set.
#[derive(Clone, Debug, PartialEq)]
pub struct JointObservation {
    pub set: RsuSet,
    /// Stacked samples, 2|U|.
    pub r_stack: DVector<f64>,
    /// Diagonal of P: average SNR per member, selection order.
    pub snrs: Vec<f64>,
    /// Block-diagonal combiner lift, 2|U| × 2M|U|.
    pub z_block: DMatrix<f64>,
    /// Stacked Jacobians, 2M|U| × 2.
    pub d_stack: DMatrix<f64>,
    /// Stacked predicted channels, 2M|U|.
    pub h_pred_stack: DVector<f64>,
}

impl JointObservation {
    /// Effective measurement matrix H = (P^{1/2} ⊗ I₂)·Z·D ∈ ℝ^{2|U|×2}.
    fn measurement_matrix(&self) -> DMatrix<f64> {
        let mut h = &self.z_block * &self.d_stack;
        for (i, &rho) in self.snrs.iter().enumerate() {
            let s = rho.sqrt();
            for r in 2 * i..2 * i + 2 {
                h[(r, 0)] *= s;
                h[(r, 1)] *= s;
            }
        }
        h
    }

    /// Predicted stacked sample (P^{1/2} ⊗ I₂)·Z·h̃_pred ∈ ℝ^{2|U|}.
    fn predicted_mean(&self) -> DVector<f64> {
        let mut mean = &self.z_block * &self.h_pred_stack;
        for (i, &rho) in self.snrs.iter().enumerate() {
            let s = rho.sqrt();
            mean[2 * i] *= s;
            mean[2 * i + 1] *= s;
        }
        mean
    }
}

/// Stacks per-RSU pieces into one joint observation.
///
/// `parts` must follow `set`'s order exactly, one entry per member with
/// matching RSU ids and a common antenna count — anything else is a contract
/// violation and panics.
pub fn assemble_joint(set: &RsuSet, parts: &[PerRsuObservation]) -> JointObservation {
    assert_eq!(parts.len(), set.len(), "one observation required per selected RSU");
    let m = parts[0].comb.antennas();
    for (u, part) in set.iter().zip(parts) {
        assert_eq!(part.sample.u, u, "observation order must follow the selection set");
        assert_eq!(part.comb.u, u, "combiner belongs to a different RSU");
        assert_eq!(part.comb.antennas(), m, "antenna counts must agree across RSUs");
        assert_eq!(part.jacobian.shape(), (2 * m, 2), "Jacobian must be 2M×2");
        assert_eq!(part.h_pred_real.len(), 2 * m, "predicted channel must be 2M");
    }

    let k = parts.len();
    let mut r_stack = DVector::zeros(2 * k);
    let mut z_block = DMatrix::zeros(2 * k, 2 * m * k);
    let mut d_stack = DMatrix::zeros(2 * m * k, 2);
    let mut h_pred_stack = DVector::zeros(2 * m * k);
    for (i, part) in parts.iter().enumerate() {
        r_stack[2 * i] = part.sample.r_real[0];
        r_stack[2 * i + 1] = part.sample.r_real[1];
        z_block.view_mut((2 * i, 2 * m * i), (2, 2 * m)).copy_from(&part.comb.z_real);
        d_stack.view_mut((2 * m * i, 0), (2 * m, 2)).copy_from(&part.jacobian);
        h_pred_stack.rows_mut(2 * m * i, 2 * m).copy_from(&part.h_pred_real);
    }
    JointObservation {
        set: *set,
        r_stack,
        snrs: parts.iter().map(|p| p.sample.snr_avg).collect(),
        z_block,
        d_stack,
        h_pred_stack,
    }
}

/// Joint Kalman gain K̃ = Q̂·Hᵀ·(H·Q̂·Hᵀ + I_{2|U|}/2)⁻¹ ∈ ℝ^{2×2|U|},
/// with H = (P^{1/2} ⊗ I₂)·Z·D.
pub fn joint_kalman_gain(pred: &StateEstimate, obs: &JointObservation) -> DMatrix<f64> {
    let h = obs.measurement_matrix();
    let dim = h.nrows();
    let s = &h * pred.q_hat * h.transpose() + DMatrix::identity(dim, dim) * 0.5;
    let s_inv = s.try_inverse().expect("innovation covariance is I/2-regularized");
    let q = DMatrix::from_iterator(2, 2, pred.q_hat.iter().copied());
    q * h.transpose() * s_inv
}

/// Joint measurement update: one Kalman step against the stacked observation.
///
/// Non-finite stacked samples (or SNRs) reject the step: the prediction is
/// returned unchanged with the `rejected` flag set.
pub fn joint_update(pred: &StateEstimate, obs: &JointObservation) -> UpdateOutcome {
    let finite =
        obs.r_stack.iter().all(|v| v.is_finite()) && obs.snrs.iter().all(|v| v.is_finite());
    if !finite {
        return UpdateOutcome { est: *pred, rejected: true };
    }
    let h = obs.measurement_matrix();
    let k = joint_kalman_gain(pred, obs);
    let innovation = &obs.r_stack - obs.predicted_mean();
    let corr = &k * innovation;
    let t_hat = pred.t_hat + Vector2::new(corr[0], corr[1]);

    let kh_dyn = &k * &h;
    let kh = Matrix2::new(kh_dyn[(0, 0)], kh_dyn[(0, 1)], kh_dyn[(1, 0)], kh_dyn[(1, 1)]);
    let q = (Matrix2::identity() - kh) * pred.q_hat;
    let q_hat = (q + q.transpose()) * 0.5;
    UpdateOutcome { est: StateEstimate { t_hat, q_hat }, rejected: false }
}

/// Sounding-sample economics of a serving set: (samples used, samples
/// exchanged over backhaul) = (|U|, |U| − 1).
pub fn count_exchanged_samples(set: &RsuSet) -> (usize, usize) {
    (set.len(), set.len() - 1)
}
