//! Line-of-sight Lambertian channel between ceiling LEDs and a photodiode.
//!
//! The DC gain of LED `m` is
//! `h = (l+1) E / (2π d²) · cos^l(φ) · cos(ψ)` for incidence `ψ` within the
//! field of view and zero otherwise, with `l = −ln 2 / ln cos Φ½`.

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};

pub type Point3 = [f64; 3];

/// Gains smaller than this are flushed to zero.
pub const GAIN_FLOOR: f64 = 1e-30;

/// Standard room: 5 m × 4 m × 3 m.
pub const DEFAULT_ROOM_M: Point3 = [5.0, 4.0, 3.0];
/// Standard photodiode area, 1 cm².
pub const DEFAULT_PD_AREA_M2: f64 = 1e-4;
pub const DEFAULT_SEMI_ANGLE_DEG: f64 = 35.0;
pub const DEFAULT_FOV_DEG: f64 = 72.0;
/// Height of the receiving plane (desk) above the floor.
pub const DEFAULT_PD_HEIGHT_M: f64 = 0.8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoomScenario {
    pub room_dims: Point3,
    pub led_positions: Vec<Point3>,
    pub pd_position: Point3,
    /// Photodiode physical area in m².
    pub pd_area: f64,
    pub semi_angle_deg: f64,
    pub fov_deg: f64,
    pub led_orientation: Point3,
    pub pd_orientation: Point3,
}

impl RoomScenario {
    /// Standard optics and room with the given LED and PD positions.
    pub fn standard(led_positions: Vec<Point3>, pd_position: Point3) -> Self {
        Self {
            room_dims: DEFAULT_ROOM_M,
            led_positions,
            pd_position,
            pd_area: DEFAULT_PD_AREA_M2,
            semi_angle_deg: DEFAULT_SEMI_ANGLE_DEG,
            fov_deg: DEFAULT_FOV_DEG,
            led_orientation: [0.0, 0.0, -1.0],
            pd_orientation: [0.0, 0.0, 1.0],
        }
    }

    pub fn num_leds(&self) -> usize {
        self.led_positions.len()
    }

    /// Checks the scenario invariants. A single LED is accepted here; the
    /// spatial-modulation layers require at least two on their own.
    pub fn validate(&self) -> Result<()> {
        if self.room_dims.iter().any(|&d| !(d.is_finite() && d > 0.0)) {
            return domain("room dimensions must be positive");
        }
        if self.led_positions.is_empty() {
            return domain("at least one LED is required");
        }
        for (m, p) in self.led_positions.iter().enumerate() {
            if !inside(p, &self.room_dims) {
                return domain(format!("LED {m} at {p:?} lies outside the room"));
            }
        }
        if !inside(&self.pd_position, &self.room_dims) {
            return domain(format!("PD at {:?} lies outside the room", self.pd_position));
        }
        if !(self.pd_area.is_finite() && self.pd_area > 0.0) {
            return domain("PD area must be positive");
        }
        if !(self.semi_angle_deg > 0.0 && self.semi_angle_deg < 90.0) {
            return domain("semi-angle at half power must lie in (0, 90) degrees");
        }
        if !(self.fov_deg > 0.0 && self.fov_deg <= 90.0) {
            return domain("field of view must lie in (0, 90] degrees");
        }
        unit(&self.led_orientation)?;
        unit(&self.pd_orientation)?;
        Ok(())
    }
}

fn inside(p: &Point3, dims: &Point3) -> bool {
    p.iter().zip(dims).all(|(&c, &d)| c.is_finite() && (0.0..=d).contains(&c))
}

fn unit(v: &Point3) -> Result<Point3> {
    let n = norm(v);
    if !(n.is_finite() && n > 0.0) {
        return domain("orientation vector must be non-zero");
    }
    Ok([v[0] / n, v[1] / n, v[2] / n])
}

fn norm(v: &Point3) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

fn dot(a: &Point3, b: &Point3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

/// Non-negative, finite channel gains `h_1 … h_M`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct ChannelGains(Vec<f64>);

impl ChannelGains {
    pub fn new(gains: Vec<f64>) -> Result<Self> {
        if gains.is_empty() {
            return domain("channel gain vector is empty");
        }
        if let Some(g) = gains.iter().find(|g| !(g.is_finite() && **g >= 0.0)) {
            return domain(format!("channel gain {g} is not a finite non-negative number"));
        }
        Ok(Self(gains))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn max(&self) -> f64 {
        self.0.iter().copied().fold(0.0, f64::max)
    }

    pub fn scaled(&self, factor: f64) -> Result<Self> {
        Self::new(self.0.iter().map(|g| g * factor).collect())
    }
}

impl TryFrom<Vec<f64>> for ChannelGains {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<ChannelGains> for Vec<f64> {
    fn from(g: ChannelGains) -> Self {
        g.0
    }
}

impl std::ops::Index<usize> for ChannelGains {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

pub fn lambertian_order(semi_angle_deg: f64) -> Result<f64> {
    if !(semi_angle_deg > 0.0 && semi_angle_deg < 90.0) {
        return domain(format!("semi-angle {semi_angle_deg} outside (0, 90) degrees"));
    }
    // ln_1p keeps precision for tiny angles where cos is close to one.
    let c = semi_angle_deg.to_radians().cos();
    Ok(-std::f64::consts::LN_2 / (c - 1.0).ln_1p())
}

/// DC gain of LED `led` (0-based) towards the photodiode.
pub fn channel_gain(scenario: &RoomScenario, led: usize) -> Result<f64> {
    let len = scenario.led_positions.len();
    let src = *scenario.led_positions.get(led).ok_or(Error::Index { index: led, len })?;
    let l = lambertian_order(scenario.semi_angle_deg)?;
    let pd = scenario.pd_position;
    let v = [pd[0] - src[0], pd[1] - src[1], pd[2] - src[2]];
    let d = norm(&v);
    if d == 0.0 {
        return domain(format!("LED {led} coincides with the PD"));
    }
    let dir = [v[0] / d, v[1] / d, v[2] / d];
    let cos_emit = dot(&unit(&scenario.led_orientation)?, &dir);
    let cos_inc = -dot(&unit(&scenario.pd_orientation)?, &dir);
    let fov_cos = scenario.fov_deg.to_radians().cos();
    if cos_emit <= 0.0 || cos_inc <= 0.0 || cos_inc < fov_cos {
        return Ok(0.0);
    }
    let h = (l + 1.0) * scenario.pd_area / (2.0 * std::f64::consts::PI * d * d) * cos_emit.powf(l) * cos_inc;
    Ok(if h < GAIN_FLOOR { 0.0 } else { h })
}

pub fn channel_vector(scenario: &RoomScenario) -> Result<ChannelGains> {
    scenario.validate()?;
    let gains = (0..scenario.num_leds()).map(|m| channel_gain(scenario, m)).collect::<Result<Vec<_>>>()?;
    ChannelGains::new(gains)
}

/// Ceiling layout used when a configuration names only the LED count: the
/// LEDs sit evenly on a circle of radius 1 m about the room centre (a single
/// LED sits at the centre).
pub fn default_led_layout(m: usize, room: Point3) -> Vec<Point3> {
    let (cx, cy) = (room[0] / 2.0, room[1] / 2.0);
    if m == 1 {
        return vec![[cx, cy, room[2]]];
    }
    (0..m)
        .map(|k| {
            let a = 2.0 * std::f64::consts::PI * k as f64 / m as f64;
            [cx + a.cos(), cy + a.sin(), room[2]]
        })
        .collect()
}

/// Default receiver position: on the desk plane, off every symmetry axis of
/// [`default_led_layout`] so the gains are pairwise distinct.
pub fn default_pd_position(room: Point3) -> Point3 {
    [room[0] / 2.0 - 0.35, room[1] / 2.0 - 0.6, DEFAULT_PD_HEIGHT_M]
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn overhead(pd: Point3) -> RoomScenario {
        RoomScenario::standard(vec![[2.5, 2.0, 3.0]], pd)
    }

    #[test]
    fn lambertian_order_values() {
        assert_relative_eq!(lambertian_order(60.0).unwrap(), 1.0, epsilon = 1e-12);
        // -ln 2 / ln cos 35°, evaluated at 30 digits.
        assert_relative_eq!(lambertian_order(35.0).unwrap(), 3.474_673_351_674_745, epsilon = 1e-10);
        let big = lambertian_order(89.9).unwrap();
        assert!(big.is_finite() && big > 0.0);
        assert!(lambertian_order(0.0).is_err());
        assert!(lambertian_order(90.0).is_err());
    }

    #[test]
    fn overhead_gain_matches_closed_form() {
        let h = channel_gain(&overhead([2.5, 2.0, 0.8]), 0).unwrap();
        // (l+1) E / (2π d²) with d = 2.2 m.
        assert_relative_eq!(h, 1.471_418_145_951_683e-5, max_relative = 1e-9);
    }

    #[test]
    fn fov_cut_and_inverse_square() {
        // tan 72° ≈ 3.08, so a 2.2 m drop needs > 6.77 m horizontal offset;
        // use a taller room to fit it.
        let mut s = RoomScenario::standard(vec![[0.1, 0.1, 9.0]], [9.9, 9.9, 6.0]);
        s.room_dims = [10.0, 10.0, 10.0];
        assert_eq!(channel_gain(&s, 0).unwrap(), 0.0);

        let mut s = RoomScenario::standard(vec![[1.0, 1.0, 5.0]], [1.0, 1.0, 4.0]);
        s.room_dims = [10.0, 10.0, 10.0];
        let near = channel_gain(&s, 0).unwrap();
        s.pd_position = [1.0, 1.0, 3.0];
        let far = channel_gain(&s, 0).unwrap();
        assert_relative_eq!(near / far, 4.0, max_relative = 1e-12);
    }

    #[test]
    fn errors() {
        let s = overhead([2.5, 2.0, 3.0]);
        assert!(matches!(channel_gain(&s, 0), Err(Error::Domain(_))));
        assert!(matches!(channel_gain(&s, 3), Err(Error::Index { .. })));
        let s = overhead([6.0, 2.0, 0.8]);
        assert!(channel_vector(&s).is_err());
    }

    #[test]
    fn mirrored_pair_has_equal_gains() {
        let s = RoomScenario::standard(vec![[1.5, 2.0, 3.0], [3.5, 2.0, 3.0]], [2.5, 2.0, 0.8]);
        let g = channel_vector(&s).unwrap();
        assert_eq!(g.len(), 2);
        assert_eq!(g[0], g[1]);
    }

    #[test]
    fn gain_linear_in_area() {
        let mut s = overhead([2.0, 1.5, 0.8]);
        let h1 = channel_gain(&s, 0).unwrap();
        s.pd_area *= 3.0;
        assert_relative_eq!(channel_gain(&s, 0).unwrap(), 3.0 * h1, max_relative = 1e-14);
    }

    #[test]
    fn default_layout_gains_are_distinct() {
        for m in 2..=8 {
            let s = RoomScenario::standard(default_led_layout(m, DEFAULT_ROOM_M), default_pd_position(DEFAULT_ROOM_M));
            let g = channel_vector(&s).unwrap();
            for i in 0..m {
                assert!(g[i] > 0.0);
                for j in 0..i {
                    assert!((g[i] - g[j]).abs() > 1e-3 * g.max(), "m={m} {g:?}");
                }
            }
        }
    }
}
