//! mmWave uplink channel model and real-domain channel sounding.
//!
//! Each RSU carries an M-element uniform linear array with half-wavelength
//! spacing, so the dominant path appears as an array response d_M(ψ) with
//! unit-modulus entries e^{jmψ}. Small-scale fading is Rician: a unit-modulus
//! LOS coefficient β on d_M(ψ) plus an i.i.d. complex-Gaussian diffuse
//! component weighted by the K-factor.
//!
//! Sounding happens in the real domain: a complex combiner row z (unit norm)
//! lifts to the structured 2×2M matrix Z̃ = [[Re z, −Im z], [Im z, Re z]] and
//! the channel to h̃ = [Re h; Im h], giving the 2-vector sample
//! r̃ = √ρ·Z̃·h̃ + ñ with ñ ~ N(0, I₂/2). The lift is exact: Z̃h̃ equals
//! [Re(zh); Im(zh)] and Z̃Z̃ᵀ = I₂ for any unit-norm z.

use nalgebra::{DMatrix, DVector, Vector2};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::f64::consts::{FRAC_1_SQRT_2, PI, TAU};

use crate::geometry::{self, NetworkGeometry, RsuId};
use crate::{Error, Result};

/// Speed of light in vacuum (m/s), used to derive the carrier wavelength.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Converts a power level in dBm to watts.
pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

/// Converts a ratio in dB to linear scale.
pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

/// Radio-link parameters shared by all three RSUs.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RadioParams {
    /// Antenna count M of each RSU's uniform linear array.
    #[serde(rename = "M")]
    pub m: usize,
    /// Carrier frequency (Hz).
    pub carrier_freq: f64,
    /// Sounding bandwidth (Hz); documents the noise-power setting.
    pub bandwidth: f64,
    /// Vehicle transmit power ϱ (W).
    pub tx_power: f64,
    /// Receiver noise power σ_n² (W).
    pub noise_power: f64,
    /// Path-loss exponent n.
    pub pathloss_exp: f64,
    /// Rician K-factor (linear ratio of LOS to diffuse power).
    pub rician_k: f64,
}

impl RadioParams {
    pub fn validate(&self) -> Result<()> {
        if self.m < 2 {
            return Err(Error::InvalidRadio(format!("M must be ≥ 2, got {}", self.m)));
        }
        for (name, v) in [
            ("carrier_freq", self.carrier_freq),
            ("bandwidth", self.bandwidth),
            ("tx_power", self.tx_power),
            ("noise_power", self.noise_power),
            ("rician_K", self.rician_k),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::InvalidRadio(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.pathloss_exp >= 1.0) {
            return Err(Error::InvalidRadio(format!(
                "path-loss exponent must be ≥ 1, got {}",
                self.pathloss_exp
            )));
        }
        Ok(())
    }

    /// Carrier wavelength λ = c / f_c (m).
    pub fn wavelength(&self) -> f64 {
        SPEED_OF_LIGHT / self.carrier_freq
    }
}

/// One small-scale channel draw between the vehicle and RSU `u`.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelRealization {
    pub u: RsuId,
    /// Spatial frequency the LOS path arrives under.
    pub psi: f64,
    /// Unit-modulus LOS fading coefficient.
    pub beta: Complex64,
    /// Complex M-vector channel.
    pub h_complex: Vec<Complex64>,
    /// Real lift [Re(h); Im(h)] of `h_complex`.
    pub h_real: DVector<f64>,
}

/// One combined sounding observation at RSU `u`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SoundingSample {
    pub u: RsuId,
    /// Real 2-vector [Re(r); Im(r)] of the combined sample.
    pub r_real: Vector2<f64>,
    /// Average SNR ρ the sample was taken under (linear).
    pub snr_avg: f64,
}

/// Unit-norm receive combiner and its structured real lift.
#[derive(Clone, Debug, PartialEq)]
pub struct Combiner {
    pub u: RsuId,
    /// Complex combining weights (row vector, unit 2-norm).
    pub z_complex: Vec<Complex64>,
    /// 2×2M lift [[Re z, −Im z], [Im z, Re z]]; rows are orthonormal.
    pub z_real: DMatrix<f64>,
}

impl Combiner {
    /// Antenna count M this combiner was built for.
    pub fn antennas(&self) -> usize {
        self.z_complex.len()
    }
}

/// Array response d_M(ψ) = [1, e^{jψ}, …, e^{j(M−1)ψ}]ᵀ.
pub fn array_response(m: usize, psi: f64) -> Vec<Complex64> {
    (0..m).map(|k| Complex64::from_polar(1.0, k as f64 * psi)).collect()
}

/// Entry-wise derivative of the array response with respect to ψ:
/// entry m equals jm·e^{jmψ}. Its squared norm is M(M−1)(2M−1)/6.
pub fn array_response_derivative(m: usize, psi: f64) -> Vec<Complex64> {
    (0..m)
        .map(|k| Complex64::new(0.0, k as f64) * Complex64::from_polar(1.0, k as f64 * psi))
        .collect()
}

/// Average SNR of RSU `u`'s sounding at vehicle position `x`:
/// ρ = (ϱ/σ_n²)·(λ/(4πd))ⁿ with unit antenna gains.
pub fn average_snr(u: RsuId, x: f64, geom: &NetworkGeometry, radio: &RadioParams) -> f64 {
    let d = geometry::distance(u, x, geom);
    (radio.tx_power / radio.noise_power) * (radio.wavelength() / (4.0 * PI * d)).powf(radio.pathloss_exp)
}

/// Draws a unit-modulus LOS coefficient with uniform random phase.
pub fn draw_los_beta<R: Rng + ?Sized>(rng: &mut R) -> Complex64 {
    Complex64::from_polar(1.0, rng.random_range(0.0..TAU))
}

/// Draws a Rician channel with a caller-held LOS coefficient:
/// h = √(K/(K+1))·β·d_M(ψ) + √(1/(K+1))·g, g i.i.d. CN(0, 1) per entry.
///
/// The LOS part carries K/(K+1) of the average per-entry power and the
/// diffuse part 1/(K+1), so E[‖h‖²] = M and the LOS/diffuse power ratio is
/// exactly K. β is typically drawn once per coherence block (trial) while the
/// diffuse part is redrawn every sounding interval.
pub fn draw_channel_with_beta<R: Rng + ?Sized>(
    u: RsuId,
    psi: f64,
    radio: &RadioParams,
    beta: Complex64,
    rng: &mut R,
) -> ChannelRealization {
    let k = radio.rician_k;
    let los_scale = (k / (k + 1.0)).sqrt();
    let nlos_scale = (1.0 / (k + 1.0)).sqrt();
    let h_complex: Vec<Complex64> = array_response(radio.m, psi)
        .into_iter()
        .map(|d| {
            let g = Complex64::new(
                rng.sample::<f64, _>(StandardNormal) * FRAC_1_SQRT_2,
                rng.sample::<f64, _>(StandardNormal) * FRAC_1_SQRT_2,
            );
            los_scale * beta * d + nlos_scale * g
        })
        .collect();
    let h_real = lift_channel(&h_complex);
    ChannelRealization { u, psi, beta, h_complex, h_real }
}

/// Draws a Rician channel including a fresh LOS phase.
pub fn draw_channel<R: Rng + ?Sized>(
    u: RsuId,
    psi: f64,
    radio: &RadioParams,
    rng: &mut R,
) -> ChannelRealization {
    let beta = draw_los_beta(rng);
    draw_channel_with_beta(u, psi, radio, beta, rng)
}

/// Real lift h̃ = [Re(h); Im(h)] of a complex M-vector.
pub fn lift_channel(h: &[Complex64]) -> DVector<f64> {
    let m = h.len();
    DVector::from_fn(2 * m, |i, _| if i < m { h[i].re } else { h[i - m].im })
}

/// Lifts a unit-norm complex combiner to its structured 2×2M real form.
///
/// Panics if `z` is not unit-norm to 1e-9 — a contract violation, since every
/// combiner-design path normalizes.
pub fn lift_combiner(u: RsuId, z: Vec<Complex64>) -> Combiner {
    let norm = z.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
    assert!(
        (norm - 1.0).abs() < 1e-9,
        "combiner must be unit-norm, got ‖z‖ = {norm}"
    );
    let m = z.len();
    let z_real = DMatrix::from_fn(2, 2 * m, |r, c| {
        let (re, im) = (z[c % m].re, z[c % m].im);
        match (r, c < m) {
            (0, true) => re,
            (0, false) => -im,
            (1, true) => im,
            _ => re,
        }
    });
    Combiner { u, z_complex: z, z_real }
}

/// Noiseless combined observation √ρ·Z̃·h̃ for a given (predicted or true)
/// real-lifted channel.
pub fn predicted_sample(h_real: &DVector<f64>, comb: &Combiner, rho: f64) -> Vector2<f64> {
    debug_assert_eq!(h_real.len(), 2 * comb.antennas(), "channel/combiner length mismatch");
    let y = &comb.z_real * h_real;
    Vector2::new(y[0], y[1]) * rho.sqrt()
}

/// Sounds the channel once: r̃ = √ρ·Z̃·h̃ + ñ, ñ ~ N(0, I₂/2).
///
/// Panics on channel/combiner dimension or RSU mismatch (contract violation).
pub fn sound<R: Rng + ?Sized>(
    ch: &ChannelRealization,
    comb: &Combiner,
    rho: f64,
    rng: &mut R,
) -> SoundingSample {
    assert_eq!(ch.u, comb.u, "channel and combiner belong to different RSUs");
    assert_eq!(ch.h_complex.len(), comb.antennas(), "channel/combiner length mismatch");
    let mean = predicted_sample(&ch.h_real, comb, rho);
    let noise = Vector2::new(
        rng.sample::<f64, _>(StandardNormal) * FRAC_1_SQRT_2,
        rng.sample::<f64, _>(StandardNormal) * FRAC_1_SQRT_2,
    );
    SoundingSample { u: ch.u, r_real: mean + noise, snr_avg: rho }
}
