//! RSU placement geometry and per-RSU spatial frequencies.
//!
//! Three RSUs serve a straight road segment: RSU 1 sits at longitudinal
//! coordinate 0 on the far side of the road (lateral gap `Y − y` to the
//! vehicle), RSU 2 at `−X` and RSU 3 at `+X` on the near side (lateral gap
//! `y`), all mounted `h` meters above the vehicle antenna plane. A vehicle at
//! longitudinal position `x` sees each RSU's uniform linear array under a
//! spatial frequency ψᵘ(x) — the per-element phase progression of the array
//! response — and the tracking filter consumes both ψᵘ and its derivative
//! with respect to the state vector [x, v].

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::fmt;

use crate::{Error, Result};

/// Identifier of one of the three fixed RSUs (1, 2, or 3).
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RsuId(u8);

impl RsuId {
    /// All three RSUs in index order.
    pub const ALL: [RsuId; 3] = [RsuId(1), RsuId(2), RsuId(3)];

    /// Builds an id, rejecting anything outside {1, 2, 3}.
    pub fn new(u: u8) -> Result<Self> {
        if (1..=3).contains(&u) {
            Ok(RsuId(u))
        } else {
            Err(Error::InvalidGeometry(format!("RSU index {u} out of range 1..=3")))
        }
    }

    /// RSU number in {1, 2, 3}.
    pub fn number(self) -> u8 {
        self.0
    }

    /// Zero-based index for array storage.
    pub fn index(self) -> usize {
        usize::from(self.0) - 1
    }
}

impl fmt::Display for RsuId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Fixed network deployment parameters plus the vehicle's lane offset.
///
/// Distances are meters. The lane offset `y` is constant for a whole trial;
/// service-map generation sweeps it across the full road width `[0, Y]`,
/// while tracking scenarios keep it strictly inside `(0, Y)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkGeometry {
    /// Longitudinal half-spacing of the near-side RSUs 2 and 3 (RSU 2 at −X, RSU 3 at +X).
    #[serde(rename = "X")]
    pub x_spacing: f64,
    /// Lateral offset of far-side RSU 1 from the x-axis.
    #[serde(rename = "Y")]
    pub y_offset: f64,
    /// RSU mounting height above the vehicle antenna plane.
    #[serde(rename = "h")]
    pub height: f64,
    /// Vehicle lane lateral offset.
    #[serde(rename = "y")]
    pub lane_y: f64,
}

impl NetworkGeometry {
    /// Validates X > 0, Y > 0, h > 0 and 0 ≤ y ≤ Y.
    pub fn new(x_spacing: f64, y_offset: f64, height: f64, lane_y: f64) -> Result<Self> {
        let geom = NetworkGeometry { x_spacing, y_offset, height, lane_y };
        geom.validate()?;
        Ok(geom)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.x_spacing > 0.0) || !self.x_spacing.is_finite() {
            return Err(Error::InvalidGeometry(format!("X must be positive, got {}", self.x_spacing)));
        }
        if !(self.y_offset > 0.0) || !self.y_offset.is_finite() {
            return Err(Error::InvalidGeometry(format!("Y must be positive, got {}", self.y_offset)));
        }
        if !(self.height > 0.0) || !self.height.is_finite() {
            return Err(Error::InvalidGeometry(format!("h must be positive, got {}", self.height)));
        }
        if !(0.0..=self.y_offset).contains(&self.lane_y) {
            return Err(Error::InvalidGeometry(format!(
                "lane offset y = {} outside [0, Y = {}]",
                self.lane_y, self.y_offset
            )));
        }
        Ok(())
    }

    /// Same deployment, different lane offset (used per map cell).
    pub fn with_lane(&self, lane_y: f64) -> Result<Self> {
        NetworkGeometry::new(self.x_spacing, self.y_offset, self.height, lane_y)
    }

    /// Squared lateral-plus-height gap to RSU `u`: (Y−y)²+h² for RSU 1,
    /// y²+h² for RSUs 2 and 3. Always ≥ h² > 0.
    pub fn lateral_sq(&self, u: RsuId) -> f64 {
        let lateral = match u.number() {
            1 => self.y_offset - self.lane_y,
            _ => self.lane_y,
        };
        lateral * lateral + self.height * self.height
    }

    /// Signed longitudinal gap entering ψᵘ's numerator: x for RSU 1,
    /// X+x for RSU 2, X−x for RSU 3.
    pub fn longitudinal(&self, u: RsuId, x: f64) -> f64 {
        match u.number() {
            1 => x,
            2 => self.x_spacing + x,
            _ => self.x_spacing - x,
        }
    }
}

/// Spatial frequency ψᵘ(x) of RSU `u`'s array response, in radians per
/// element:
///
/// ψ¹ = πx / √(x² + (Y−y)² + h²),
/// ψ² = π(X+x) / √((X+x)² + y² + h²),
/// ψ³ = π(X−x) / √((X−x)² + y² + h²).
///
/// Always strictly inside (−π, π) since the lateral gap is positive.
pub fn spatial_frequency(u: RsuId, x: f64, geom: &NetworkGeometry) -> f64 {
    let lon = geom.longitudinal(u, x);
    let c = geom.lateral_sq(u);
    PI * lon / (lon * lon + c).sqrt()
}

/// Derivative of ψᵘ with respect to the state vector [x, v], as the 2-vector
/// π·ġᵘ·[1, Ts]ᵀ with
///
/// ġ¹ = ((Y−y)²+h²)·(x²+(Y−y)²+h²)^(−3/2),
/// ġ² = (y²+h²)·((X+x)²+y²+h²)^(−3/2),
/// ġ³ = −(y²+h²)·((X−x)²+y²+h²)^(−3/2).
///
/// RSU 3's scalar is negative: its longitudinal gap X−x shrinks as the
/// vehicle advances.
pub fn spatial_frequency_gradient(
    u: RsuId,
    x: f64,
    ts: f64,
    geom: &NetworkGeometry,
) -> nalgebra::Vector2<f64> {
    let s = gradient_scalar(u, x, geom);
    nalgebra::Vector2::new(PI * s, PI * s * ts)
}

/// The scalar dψᵘ/dx divided by π (signed; see [`spatial_frequency_gradient`]).
pub fn gradient_scalar(u: RsuId, x: f64, geom: &NetworkGeometry) -> f64 {
    let lon = geom.longitudinal(u, x);
    let c = geom.lateral_sq(u);
    let sign = if u.number() == 3 { -1.0 } else { 1.0 };
    sign * c * (lon * lon + c).powf(-1.5)
}

/// Straight-line distance from the vehicle at longitudinal `x` to RSU `u`.
pub fn distance(u: RsuId, x: f64, geom: &NetworkGeometry) -> f64 {
    let lon = geom.longitudinal(u, x);
    (lon * lon + geom.lateral_sq(u)).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::{assert_abs_diff_eq, assert_relative_eq};

    fn fig_geom() -> NetworkGeometry {
        NetworkGeometry::new(75.0, 31.0, 7.5, 3.25).unwrap()
    }

    const RSU1: RsuId = RsuId::ALL[0];
    const RSU2: RsuId = RsuId::ALL[1];
    const RSU3: RsuId = RsuId::ALL[2];

    #[test]
    fn rsu_id_rejects_out_of_range() {
        assert!(RsuId::new(0).is_err());
        assert!(RsuId::new(4).is_err());
        assert_eq!(RsuId::new(2).unwrap().index(), 1);
    }

    #[test]
    fn geometry_validation() {
        assert!(NetworkGeometry::new(0.0, 31.0, 7.5, 3.25).is_err());
        assert!(NetworkGeometry::new(75.0, 31.0, -1.0, 3.25).is_err());
        assert!(NetworkGeometry::new(75.0, 31.0, 7.5, 32.0).is_err());
        // Closed endpoints are allowed (service maps sweep the full road width).
        assert!(NetworkGeometry::new(75.0, 31.0, 7.5, 0.0).is_ok());
        assert!(NetworkGeometry::new(75.0, 31.0, 7.5, 31.0).is_ok());
    }

    #[test]
    fn psi_vanishes_at_zero_numerator() {
        let g = fig_geom();
        assert_eq!(spatial_frequency(RSU1, 0.0, &g), 0.0);
        assert_eq!(spatial_frequency(RSU2, -75.0, &g), 0.0);
        assert_eq!(spatial_frequency(RSU3, 75.0, &g), 0.0);
    }

    #[test]
    fn psi_rsu1_at_75m_matches_high_precision_value() {
        // π·75/√(75² + 27.75² + 7.5²), evaluated with a 40-digit calculator.
        let g = fig_geom();
        assert_relative_eq!(
            spatial_frequency(RSU1, 75.0, &g),
            2.933_506_780_122_642_1,
            max_relative = 1e-14
        );
    }

    #[test]
    fn psi_bounded_by_pi_everywhere() {
        let g = fig_geom();
        for u in RsuId::ALL {
            for i in 0..=2000 {
                let x = -200.0 + i as f64 * 0.2;
                let psi = spatial_frequency(u, x, &g);
                assert!(psi.abs() < PI, "|ψ|≥π at u={u}, x={x}");
            }
        }
    }

    #[test]
    fn gradient_rsu3_first_component_negative() {
        let g = fig_geom();
        for i in 0..=1000 {
            let x = -150.0 + i as f64 * 0.3;
            let grad = spatial_frequency_gradient(RSU3, x, 0.01, &g);
            assert!(grad[0] < 0.0, "ġ³ should be negative at x={x}");
        }
    }

    #[test]
    fn gradient_mirror_antisymmetry_rsu2_rsu3() {
        let g = fig_geom();
        for i in 0..=1000 {
            let x = -150.0 + i as f64 * 0.3;
            let s2 = gradient_scalar(RSU2, x, &g);
            let s3 = gradient_scalar(RSU3, -x, &g);
            assert_eq!(s2, -s3, "ġ²(x) ≠ −ġ³(−x) at x={x}");
        }
    }

    #[test]
    fn gradient_rsu1_at_origin_closed_form() {
        // With x=0 the RSU 1 scalar reduces to ((Y−y)²+h²)^(−1/2).
        let g = fig_geom();
        let c1 = 27.75f64 * 27.75 + 7.5 * 7.5;
        assert_relative_eq!(gradient_scalar(RSU1, 0.0, &g), c1.powf(-0.5), max_relative = 1e-14);
        assert_relative_eq!(gradient_scalar(RSU1, 0.0, &g), 0.034_787_870_019_036_62, max_relative = 1e-14);
    }

    #[test]
    fn gradient_matches_finite_difference_on_grid() {
        // Central difference of ψ, ≥1000 points per RSU. Step 1e-5 sits near
        // the rounding/truncation optimum; the roundoff floor of ~2e-11 on ψ
        // differences is what bounds the far-tail points where the gradient
        // itself shrinks to ~3e-5.
        let g = fig_geom();
        let eps = 1e-5;
        for u in RsuId::ALL {
            for i in 0..=1200 {
                let x = -120.0 + i as f64 * 0.2;
                let fd = (spatial_frequency(u, x + eps, &g) - spatial_frequency(u, x - eps, &g))
                    / (2.0 * eps);
                let analytic = PI * gradient_scalar(u, x, &g);
                assert_relative_eq!(fd, analytic, max_relative = 1e-5);
            }
        }
    }

    #[test]
    fn gradient_vector_layout() {
        let g = fig_geom();
        let ts = 0.01;
        let grad = spatial_frequency_gradient(RSU1, 12.0, ts, &g);
        assert_eq!(grad[1], grad[0] * ts);
    }

    #[test]
    fn distance_pythagoras_cases() {
        let g = fig_geom();
        assert_relative_eq!(
            distance(RSU1, 0.0, &g),
            (27.75f64 * 27.75 + 7.5 * 7.5).sqrt(),
            max_relative = 1e-15
        );
        assert_relative_eq!(
            distance(RSU2, -75.0, &g),
            (3.25f64 * 3.25 + 7.5 * 7.5).sqrt(),
            max_relative = 1e-15
        );
        // High-precision anchor: √6451.3125.
        assert_abs_diff_eq!(distance(RSU1, 75.0, &g), 80.32, epsilon = 0.01);
        assert_relative_eq!(distance(RSU1, 75.0, &g), 80.320_062_873_481_37, max_relative = 1e-14);
    }

    #[test]
    fn psi_mirror_symmetry() {
        let g = fig_geom();
        for i in 0..=1000 {
            let x = -150.0 + i as f64 * 0.3;
            assert_eq!(
                spatial_frequency(RSU2, x, &g),
                spatial_frequency(RSU3, -x, &g),
                "ψ²(x) ≠ ψ³(−x) at x={x}"
            );
        }
    }
}
