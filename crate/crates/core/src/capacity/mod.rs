//! Mutual information of the mapped constellation under input-dependent
//! Gaussian noise, its closed-form lower bound and asymptotic constants.
//!
//! Notation: `a = M − 2^p` (size of Ψ and of Φ), `b = 2^{p+1} − M` (size of
//! Ξ). Branch A collects the `a·2^q` points of Ψ ∪ Φ, branch B the `b·2^q`
//! points of Ξ. For a received point `r`, `v = 1 + r ς²` is its variance in
//! units of σ².
//!
//! The expressions follow the closed forms term by term. When `M` is not a
//! power of two those forms weight the two branches by `a/2^p` and `b/2^p`
//! rather than by their share of the `2^K` equiprobable points, so they are
//! not the mutual information of the uniform input in that case (the
//! high-SNR constant can exceed `K`). [`exact_uniform_mi`] evaluates the
//! latter; the two coincide when `M = 2^p`.

pub mod decomposition;
pub mod quadrature;

use std::f64::consts::{LN_2, LOG2_E, PI};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cabm::{Branch, LabeledPoint, MappingPlan};
use crate::error::{domain, Result};
use crate::geometry::ChannelGains;
use crate::link::NoiseModel;
use crate::precode::PrecodingWeights;

pub const DEFAULT_QUADRATURE_NODES: usize = 96;
pub const DEFAULT_MC_SAMPLES: usize = 100_000;

/// How the Gaussian expectations are evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "method")]
pub enum Method {
    /// Gauss–Hermite with `nodes` points; the error estimate is the change
    /// against the rule with half as many nodes.
    Quadrature { nodes: usize },
    /// Monte Carlo with `samples` draws per outer term from a defensive
    /// Gaussian mixture (see `defensive_draw`).
    MonteCarlo { samples: usize, seed: u64 },
}

impl Default for Method {
    fn default() -> Self {
        Method::Quadrature { nodes: DEFAULT_QUADRATURE_NODES }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MethodKind {
    Quadrature,
    MonteCarlo,
    ClosedForm,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MiEstimate {
    /// Bits per channel use.
    pub value: f64,
    /// Numerical error estimate in bits (zero for closed forms).
    pub std_error: f64,
    pub method: MethodKind,
    /// All received points coincide; nothing but the prior structure is
    /// resolvable.
    pub degenerate: bool,
}

/// Branch sizes and the received points of both branches.
#[derive(Debug, Clone)]
pub(crate) struct Constellation {
    pub p: u32,
    pub q: u32,
    pub a: usize,
    pub b: usize,
    pub points: Vec<LabeledPoint>,
}

impl Constellation {
    pub fn new(plan: &MappingPlan, gains: &ChannelGains) -> Result<Self> {
        Ok(Self { p: plan.p, q: plan.q, a: plan.a(), b: plan.b(), points: plan.points(gains)? })
    }

    pub fn precoded(plan: &MappingPlan, gains: &ChannelGains, weights: &PrecodingWeights) -> Result<Self> {
        let mut c = Self::new(plan, gains)?;
        weights.check(plan)?;
        for (pt, w) in c.points.iter_mut().zip(weights.as_slice()) {
            pt.r *= w;
        }
        Ok(c)
    }

    /// `2^{2p}`.
    fn pow2p(&self) -> f64 {
        (1u64 << (2 * self.p)) as f64
    }

    /// Per-point weight of the branch sums: `a/2^{2p+q}` or `b/2^{2p+q}`.
    fn branch_weight(&self, branch: Branch) -> f64 {
        let n = match branch {
            Branch::A => self.a,
            Branch::B => self.b,
        };
        n as f64 / (self.pow2p() * (1u64 << self.q) as f64)
    }

    /// `(a² + b²) / 2^{2p}`.
    fn square_share(&self) -> f64 {
        ((self.a * self.a + self.b * self.b) as f64) / self.pow2p()
    }

    /// `a/2^p log₂(2^{p+q−1}/a) + b/2^p log₂(2^{p+q}/b)`.
    fn entropy_terms(&self) -> f64 {
        let pow = (1u64 << self.p) as f64;
        let k = (self.p + self.q) as f64;
        let mut s = 0.0;
        if self.a > 0 {
            let a = self.a as f64;
            s += a / pow * (k - 1.0 - a.log2());
        }
        if self.b > 0 {
            let b = self.b as f64;
            s += b / pow * (k - b.log2());
        }
        s
    }

    /// Weight `c_j` of competitor `j` in the denominator of an outer term of
    /// branch `outer`: 1 within the branch, `b/a` or `a/b` across.
    fn cross_weight(&self, outer: Branch, inner: Branch) -> f64 {
        match (outer, inner) {
            (Branch::A, Branch::B) => self.b as f64 / self.a as f64,
            (Branch::B, Branch::A) => self.a as f64 / self.b as f64,
            _ => 1.0,
        }
    }

    fn is_degenerate(&self) -> bool {
        let r0 = self.points[0].r;
        self.points.iter().all(|p| p.r == r0)
    }
}

/// Numerically stable `ln Σ exp(x_k)`.
pub(crate) fn log_sum_exp(terms: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = terms.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + terms.map(|t| (t - max).exp()).sum::<f64>().ln()
}

/// `Σ_k w_k E[g_k(u)]`, `u ~ N(0, 1)`, with an error estimate.
pub(crate) fn weighted_expectation<G>(weights: &[f64], method: Method, g: G) -> Result<(f64, f64)>
where
    G: Fn(usize, f64) -> f64 + Sync,
{
    match method {
        Method::Quadrature { nodes } => {
            if nodes < 2 {
                return domain("quadrature needs at least two nodes");
            }
            let full = quadrature::gauss_hermite(nodes);
            let half = quadrature::gauss_hermite(nodes / 2);
            let rule = |(t, w): &(Vec<f64>, Vec<f64>), k: usize| {
                t.iter().zip(w).map(|(t, w)| w * g(k, std::f64::consts::SQRT_2 * t)).sum::<f64>() / PI.sqrt()
            };
            let terms: Vec<(f64, f64)> =
                (0..weights.len()).into_par_iter().map(|k| (rule(&full, k), rule(&half, k))).collect();
            let value: f64 = terms.iter().zip(weights).map(|((f, _), w)| w * f).sum();
            let coarse: f64 = terms.iter().zip(weights).map(|((_, h), w)| w * h).sum();
            Ok((value, (value - coarse).abs()))
        }
        Method::MonteCarlo { samples, seed } => {
            if samples < 2 {
                return domain("Monte Carlo needs at least two samples");
            }
            let terms: Vec<(f64, f64)> = (0..weights.len())
                .into_par_iter()
                .map(|k| {
                    let mut rng = ChaCha8Rng::seed_from_u64(seed);
                    rng.set_stream(k as u64);
                    let (mut mean, mut m2) = (0.0, 0.0);
                    for n in 0..samples {
                        let (u, ratio) = defensive_draw(&mut rng);
                        let x = ratio * g(k, u);
                        let delta = x - mean;
                        mean += delta / (n + 1) as f64;
                        m2 += delta * (x - mean);
                    }
                    (mean, m2 / ((samples - 1) * samples) as f64)
                })
                .collect();
            let value: f64 = terms.iter().zip(weights).map(|((m, _), w)| w * m).sum();
            let var: f64 = terms.iter().zip(weights).map(|((_, v), w)| w * w * v).sum();
            Ok((value, var.sqrt()))
        }
    }
}

/// Spread of the wide mixture component.
const WIDE_SCALE: f64 = 3.0;

/// Draw from `½N(0, 1) + ½N(0, s²)` with its likelihood ratio against
/// `N(0, 1)`. The wide half samples the Gaussian tails where the high-SNR
/// error events live; the ratio is bounded by 2, so the variance is at most
/// twice that of plain sampling.
fn defensive_draw<R: rand::Rng>(rng: &mut R) -> (f64, f64) {
    let z: f64 = StandardNormal.sample(rng);
    let u = if rng.gen::<bool>() { z } else { WIDE_SCALE * z };
    let wide = (-0.5 * u * u / (WIDE_SCALE * WIDE_SCALE)).exp() / WIDE_SCALE;
    let narrow = (-0.5 * u * u).exp();
    (u, narrow / (0.5 * narrow + 0.5 * wide))
}

fn estimate(value: f64, std_error: f64, method: Method, degenerate: bool) -> MiEstimate {
    let method = match method {
        Method::Quadrature { .. } => MethodKind::Quadrature,
        Method::MonteCarlo { .. } => MethodKind::MonteCarlo,
    };
    MiEstimate { value, std_error, method, degenerate }
}

fn closed_form(value: f64, degenerate: bool) -> MiEstimate {
    MiEstimate { value, std_error: 0.0, method: MethodKind::ClosedForm, degenerate }
}

/// Per-point data reused by the integrands.
struct PointData {
    r: Vec<f64>,
    /// Dimensionless variance factor `1 + r ς²`.
    v: Vec<f64>,
    /// `ln c_j − ½ ln v_j` for each outer branch (A, B).
    offset: [Vec<f64>; 2],
    branch: Vec<Branch>,
}

impl PointData {
    fn new(c: &Constellation, noise: &NoiseModel) -> Self {
        let r: Vec<f64> = c.points.iter().map(|p| p.r).collect();
        let v: Vec<f64> = r.iter().map(|&r| noise.variance_factor(r)).collect();
        let branch: Vec<Branch> = c.points.iter().map(|p| p.branch).collect();
        let offset = [Branch::A, Branch::B].map(|outer| {
            branch
                .iter()
                .zip(&v)
                .map(|(&inner, v)| {
                    let cw = if c.a == 0 || c.b == 0 { 1.0 } else { c.cross_weight(outer, inner) };
                    cw.ln() - 0.5 * v.ln()
                })
                .collect()
        });
        Self { r, v, offset, branch }
    }
}

fn branch_index(b: Branch) -> usize {
    match b {
        Branch::A => 0,
        Branch::B => 1,
    }
}

/// Closed-form building blocks exposed for cross-checks.
pub mod forms {
    use super::*;

    /// General expression: constant terms plus the two branch sums of
    /// `E_z[log₂(numerator / mixed denominator)]`.
    pub fn general_mi(
        plan: &MappingPlan,
        gains: &ChannelGains,
        noise: &NoiseModel,
        method: Method,
    ) -> Result<MiEstimate> {
        let c = Constellation::new(plan, gains)?;
        general_mi_of(&c, noise, method)
    }

    pub(crate) fn general_mi_of(c: &Constellation, noise: &NoiseModel, method: Method) -> Result<MiEstimate> {
        let d = PointData::new(c, noise);
        let sigma_sq = noise.sigma_sq;
        let weights: Vec<f64> = d.branch.iter().map(|&b| c.branch_weight(b)).collect();
        let (sum, se) = weighted_expectation(&weights, method, |k, u| {
            let vk = d.v[k] * sigma_sq;
            let z = vk.sqrt() * u;
            let off = &d.offset[branch_index(d.branch[k])];
            let mut num = -0.5 * u * u - 0.5 * d.v[k].ln();
            if d.branch[k] == Branch::B {
                num -= LN_2;
            }
            let den = log_sum_exp(d.r.iter().zip(&d.v).zip(off).map(|((rj, vj), o)| {
                let e = z + d.r[k] - rj;
                o - e * e / (2.0 * vj * sigma_sq)
            }));
            (num - den) * LOG2_E
        })?;
        let value = c.square_share() * (c.p + 1) as f64 + c.entropy_terms() + sum;
        Ok(estimate(value, se, method, c.is_degenerate()))
    }

    /// Equiprobable-point form `K − 2^{−K} Σ_k E[log₂ Σ_j √(v_k/v_j) e^{…}]`;
    /// equal to [`general_mi`] when `M = 2^p`.
    pub fn power_of_two_mi(
        plan: &MappingPlan,
        gains: &ChannelGains,
        noise: &NoiseModel,
        method: Method,
    ) -> Result<MiEstimate> {
        if !plan.is_power_of_two() {
            return domain("the equiprobable form applies only when M is a power of two");
        }
        let c = Constellation::new(plan, gains)?;
        uniform_mi_of(&c, noise, method)
    }

    pub(crate) fn uniform_mi_of(c: &Constellation, noise: &NoiseModel, method: Method) -> Result<MiEstimate> {
        let n = c.points.len();
        let r: Vec<f64> = c.points.iter().map(|p| p.r).collect();
        let v: Vec<f64> = r.iter().map(|&r| noise.variance_factor(r)).collect();
        let sigma_sq = noise.sigma_sq;
        let weights = vec![1.0 / n as f64; n];
        let (mean, se) = weighted_expectation(&weights, method, |k, u| {
            let z = (v[k] * sigma_sq).sqrt() * u;
            let s = log_sum_exp(r.iter().zip(&v).map(|(rj, vj)| {
                let e = z + r[k] - rj;
                0.5 * (v[k] / vj).ln() + 0.5 * u * u - e * e / (2.0 * vj * sigma_sq)
            }));
            s * LOG2_E
        })?;
        let degenerate = c.is_degenerate();
        Ok(estimate((n as f64).log2() - mean, se, method, degenerate))
    }

    /// General closed-form lower bound.
    pub fn general_lower_bound(plan: &MappingPlan, gains: &ChannelGains, noise: &NoiseModel) -> Result<MiEstimate> {
        let c = Constellation::new(plan, gains)?;
        Ok(general_lower_bound_of(&c, noise))
    }

    pub(crate) fn general_lower_bound_of(c: &Constellation, noise: &NoiseModel) -> MiEstimate {
        let d = PointData::new(c, noise);
        let sigma_sq = noise.sigma_sq;
        let half_ln2 = 0.5 * LN_2;
        let terms: Vec<f64> = (0..d.r.len())
            .into_par_iter()
            .map(|k| {
                let off = &d.offset[branch_index(d.branch[k])];
                // √(v_k/(2v_j)) within branch A's bracket, √(2v_k/v_j) in B's.
                let shift = match d.branch[k] {
                    Branch::A => -half_ln2,
                    Branch::B => half_ln2,
                };
                let s = log_sum_exp(d.r.iter().zip(&d.v).zip(off).map(|((rj, vj), o)| {
                    let e = d.r[k] - rj;
                    o + 0.5 * d.v[k].ln() + shift - e * e / (4.0 * vj * sigma_sq)
                }));
                c.branch_weight(d.branch[k]) * s * LOG2_E
            })
            .collect();
        let value =
            c.square_share() * ((c.p + 1) as f64 - 0.5 * LOG2_E) + c.entropy_terms() - terms.iter().sum::<f64>();
        closed_form(value, c.is_degenerate())
    }

    /// Lower bound for `M = 2^p`:
    /// `log₂(MN) + ½(1 − log₂e) − 2^{−K} Σ_k log₂ Σ_j √(v_k/v_j) e^{−d²/(4v_jσ²)}`.
    pub fn power_of_two_lower_bound(
        plan: &MappingPlan,
        gains: &ChannelGains,
        noise: &NoiseModel,
    ) -> Result<MiEstimate> {
        if !plan.is_power_of_two() {
            return domain("the equiprobable form applies only when M is a power of two");
        }
        let c = Constellation::new(plan, gains)?;
        let r: Vec<f64> = c.points.iter().map(|p| p.r).collect();
        let v: Vec<f64> = r.iter().map(|&r| noise.variance_factor(r)).collect();
        let n = r.len() as f64;
        let total: f64 = (0..r.len())
            .map(|k| {
                log_sum_exp(r.iter().zip(&v).map(|(rj, vj)| {
                    let e = r[k] - rj;
                    0.5 * (v[k] / vj).ln() - e * e / (4.0 * vj * noise.sigma_sq)
                })) * LOG2_E
            })
            .sum();
        Ok(closed_form(n.log2() + 0.5 * (1.0 - LOG2_E) - total / n, c.is_degenerate()))
    }
}

/// Mutual information of the mapped constellation.
pub fn mutual_information(
    plan: &MappingPlan,
    gains: &ChannelGains,
    noise: &NoiseModel,
    method: Method,
) -> Result<MiEstimate> {
    if plan.is_power_of_two() {
        forms::power_of_two_mi(plan, gains, noise, method)
    } else {
        forms::general_mi(plan, gains, noise, method)
    }
}

/// Mutual information between the equiprobable `(LED, level)` input and
/// the output, for any `M`.
pub fn exact_uniform_mi(
    plan: &MappingPlan,
    gains: &ChannelGains,
    noise: &NoiseModel,
    method: Method,
) -> Result<MiEstimate> {
    forms::uniform_mi_of(&Constellation::new(plan, gains)?, noise, method)
}

pub fn mi_lower_bound(plan: &MappingPlan, gains: &ChannelGains, noise: &NoiseModel) -> Result<MiEstimate> {
    if plan.is_power_of_two() {
        forms::power_of_two_lower_bound(plan, gains, noise)
    } else {
        forms::general_lower_bound(plan, gains, noise)
    }
}

/// Lower bound with every received point `h_m x_i` replaced by
/// `w_{m,i} h_m x_i`.
pub fn mi_lower_bound_precoded(
    plan: &MappingPlan,
    gains: &ChannelGains,
    noise: &NoiseModel,
    weights: &PrecodingWeights,
) -> Result<MiEstimate> {
    let c = Constellation::precoded(plan, gains, weights)?;
    Ok(forms::general_lower_bound_of(&c, noise))
}

fn layout(plan: &MappingPlan) -> Constellation {
    Constellation { p: plan.p, q: plan.q, a: plan.a(), b: plan.b(), points: Vec::new() }
}

/// `(a²(p+1) + b² p)/2^{2p}` plus the entropy terms; `K` when `M = 2^p`.
pub fn mi_high_snr_limit(plan: &MappingPlan) -> f64 {
    let c = layout(plan);
    let (a, b, p) = (c.a as f64, c.b as f64, c.p as f64);
    (a * a * (p + 1.0) + b * b * p) / c.pow2p() + c.entropy_terms()
}

/// `(a²(p + 3/2 − ½log₂e) + b²(p + ½ − ½log₂e))/2^{2p}` plus the entropy terms.
pub fn lb_high_snr_limit(plan: &MappingPlan) -> f64 {
    let c = layout(plan);
    let (a, b, p) = (c.a as f64, c.b as f64, c.p as f64);
    (a * a * (p + 1.5 - 0.5 * LOG2_E) + b * b * (p + 0.5 - 0.5 * LOG2_E)) / c.pow2p() + c.entropy_terms()
}

/// Branch sums of `log₂ Σ_j c_j √(v_k/v_j)` that remain when every distance
/// vanishes.
fn low_snr_ratio_terms(plan: &MappingPlan, gains: &ChannelGains, varsigma_sq: f64) -> Result<f64> {
    let mut c = layout(plan);
    c.points = plan.points(gains)?;
    let v: Vec<f64> = c.points.iter().map(|p| 1.0 + p.r * varsigma_sq).collect();
    let mut total = 0.0;
    for (k, pk) in c.points.iter().enumerate() {
        let s: f64 = c
            .points
            .iter()
            .zip(&v)
            .map(|(pj, vj)| {
                let cw = if c.a == 0 { 1.0 } else { c.cross_weight(pk.branch, pj.branch) };
                cw * (v[k] / vj).sqrt()
            })
            .sum();
        total += c.branch_weight(pk.branch) * s.log2();
    }
    Ok(total)
}

pub fn mi_low_snr_limit(plan: &MappingPlan, gains: &ChannelGains, varsigma_sq: f64) -> Result<f64> {
    Ok(mi_high_snr_limit(plan) - low_snr_ratio_terms(plan, gains, varsigma_sq)?)
}

pub fn lb_low_snr_limit(plan: &MappingPlan, gains: &ChannelGains, varsigma_sq: f64) -> Result<f64> {
    Ok(lb_high_snr_limit(plan) - low_snr_ratio_terms(plan, gains, varsigma_sq)?)
}

/// `(a² + b²)/2^{2p+1} (log₂e − 1)`; `½(log₂e − 1)` when `M = 2^p`.
pub fn asymptotic_gap(plan: &MappingPlan) -> f64 {
    layout(plan).square_share() / 2.0 * (LOG2_E - 1.0)
}
