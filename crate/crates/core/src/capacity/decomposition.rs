//! The two parts of `I(x, h; y) = I(h; y | x) + I(x; y)` evaluated
//! separately: the space information given the symbol, whose denominators
//! run over the LEDs of the same branch sending the same level, and the
//! symbol information.

use std::f64::consts::{LN_2, LOG2_E};

use super::{branch_index, estimate, log_sum_exp, weighted_expectation, Constellation, Method, MiEstimate, PointData};
use crate::cabm::{Branch, MappingPlan};
use crate::error::Result;
use crate::geometry::ChannelGains;
use crate::link::NoiseModel;

/// `ln Σ_j exp(offset_j − (z + r_k − r_j)² / (2 v_j σ²))` over `js`.
fn log_den(d: &PointData, offsets: &[f64], js: &[usize], k: usize, z: f64, sigma_sq: f64) -> f64 {
    log_sum_exp(js.iter().map(|&j| {
        let e = z + d.r[k] - d.r[j];
        offsets[j] - e * e / (2.0 * d.v[j] * sigma_sq)
    }))
}

struct Setup {
    c: Constellation,
    d: PointData,
    /// `−½ ln v_j` (no cross-branch weight).
    plain: Vec<f64>,
    /// Same-branch, same-level competitors of each point.
    same: Vec<Vec<usize>>,
    all: Vec<usize>,
    weights: Vec<f64>,
}

impl Setup {
    fn new(plan: &MappingPlan, gains: &ChannelGains, noise: &NoiseModel) -> Result<Self> {
        let c = Constellation::new(plan, gains)?;
        let d = PointData::new(&c, noise);
        let plain = d.v.iter().map(|v| -0.5 * v.ln()).collect();
        let same = c
            .points
            .iter()
            .map(|pk| {
                c.points
                    .iter()
                    .enumerate()
                    .filter(|(_, pj)| pj.branch == pk.branch && pj.level == pk.level)
                    .map(|(j, _)| j)
                    .collect()
            })
            .collect();
        let all = (0..c.points.len()).collect();
        let weights = c.points.iter().map(|p| c.branch_weight(p.branch)).collect();
        Ok(Self { c, d, plain, same, all, weights })
    }
}

/// `I(h; y | x)`.
pub fn conditional_space_information(
    plan: &MappingPlan,
    gains: &ChannelGains,
    noise: &NoiseModel,
    method: Method,
) -> Result<MiEstimate> {
    let s = Setup::new(plan, gains, noise)?;
    let sigma_sq = noise.sigma_sq;
    let (sum, se) = weighted_expectation(&s.weights, method, |k, u| {
        let z = (s.d.v[k] * sigma_sq).sqrt() * u;
        let num = -0.5 * u * u - 0.5 * s.d.v[k].ln();
        let mut den = log_den(&s.d, &s.plain, &s.same[k], k, z, sigma_sq);
        if s.d.branch[k] == Branch::B {
            den += LN_2;
        }
        (num - den) * LOG2_E
    })?;
    let value = s.c.square_share() * (s.c.p + 1) as f64 + sum;
    Ok(estimate(value, se, method, s.c.is_degenerate()))
}

/// `I(x; y)`.
pub fn symbol_information(
    plan: &MappingPlan,
    gains: &ChannelGains,
    noise: &NoiseModel,
    method: Method,
) -> Result<MiEstimate> {
    let s = Setup::new(plan, gains, noise)?;
    let sigma_sq = noise.sigma_sq;
    let (sum, se) = weighted_expectation(&s.weights, method, |k, u| {
        let z = (s.d.v[k] * sigma_sq).sqrt() * u;
        let mixed = &s.d.offset[branch_index(s.d.branch[k])];
        let all = log_den(&s.d, mixed, &s.all, k, z, sigma_sq);
        let same = log_den(&s.d, &s.plain, &s.same[k], k, z, sigma_sq);
        (all - same) * LOG2_E
    })?;
    let value = s.c.entropy_terms() - sum;
    Ok(estimate(value, se, method, s.c.is_degenerate()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cabm::{build_plan, PlanParams};
    use crate::capacity::mutual_information;
    use crate::link::SnrPoint;

    #[test]
    fn parts_sum_to_total() {
        for (gains, k) in [(vec![0.4, 0.7, 1.0], 4u32), (vec![0.08, 0.15, 0.13, 0.25, 0.01, 0.22], 4)] {
            let g = ChannelGains::new(gains).unwrap();
            let noise = NoiseModel::standard(50.0);
            let pt = SnrPoint::from_db(15.0).transmit_power(g.max(), &noise).unwrap();
            let plan = build_plan(&g, &PlanParams::new(k, pt), 0.0, true).unwrap();
            let m = Method::default();
            let total = mutual_information(&plan, &g, &noise, m).unwrap().value;
            let h = conditional_space_information(&plan, &g, &noise, m).unwrap().value;
            let x = symbol_information(&plan, &g, &noise, m).unwrap().value;
            assert!((h + x - total).abs() < 1e-10, "{h} + {x} vs {total}");
            assert!(h >= 0.0 && x >= 0.0);
        }
    }
}
