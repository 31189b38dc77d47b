//! Monte Carlo BER with joint maximum-likelihood detection.
//!
//! Bits are simulated in fixed-size chunks, each driven by its own ChaCha8
//! stream keyed by `(seed, chunk)`. Chunks run in parallel but are consumed
//! in index order, so results do not depend on the worker count.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cabm::{build_plan, decode_value, encode_value, MappingPlan, PlanParams};
use crate::error::{domain, Result};
use crate::geometry::{channel_vector, ChannelGains, RoomScenario};
use crate::link::{sample_received, NoiseModel};

pub const DEFAULT_BIT_BUDGET: u64 = 1_000_000;
pub const DEFAULT_MAX_ERRORS: u64 = 200;

/// Blocks per chunk; also the granularity of the error-count stopping rule.
const CHUNK_BLOCKS: u64 = 4096;
/// Chunks evaluated per parallel wave.
const WAVE: u64 = 16;
const Z95: f64 = 1.959_963_984_540_054;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BerResult {
    pub ber: f64,
    pub bit_errors: u64,
    pub bits_simulated: u64,
    /// Half-width of the Wilson score 95% interval.
    pub ci95_halfwidth: f64,
}

impl BerResult {
    pub fn from_counts(bit_errors: u64, bits_simulated: u64) -> Self {
        if bits_simulated == 0 {
            return Self { ber: 0.0, bit_errors, bits_simulated, ci95_halfwidth: 0.5 };
        }
        let (_, half) = wilson(bit_errors, bits_simulated);
        Self { ber: bit_errors as f64 / bits_simulated as f64, bit_errors, bits_simulated, ci95_halfwidth: half }
    }

    /// Wilson score 95% interval `(low, high)`.
    pub fn interval(&self) -> (f64, f64) {
        if self.bits_simulated == 0 {
            return (0.0, 1.0);
        }
        let (centre, half) = wilson(self.bit_errors, self.bits_simulated);
        let low = if self.bit_errors == 0 { 0.0 } else { (centre - half).max(0.0) };
        (low, (centre + half).min(1.0))
    }

    /// The two 95% intervals are disjoint with `self` strictly below.
    pub fn separated_below(&self, other: &BerResult) -> bool {
        self.interval().1 < other.interval().0
    }
}

fn wilson(errors: u64, n: u64) -> (f64, f64) {
    let n = n as f64;
    let p = errors as f64 / n;
    let z2 = Z95 * Z95;
    let denom = 1.0 + z2 / n;
    let centre = (p + z2 / (2.0 * n)) / denom;
    let half = Z95 / denom * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt();
    (centre, half)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BerOptions {
    /// Bit budget; a multiple of `K`.
    pub n_bits: u64,
    /// Stop once this many bit errors are reached (checked per chunk).
    pub max_errors: Option<u64>,
    pub seed: u64,
}

impl BerOptions {
    pub fn new(n_bits: u64, seed: u64) -> Self {
        Self { n_bits, max_errors: Some(DEFAULT_MAX_ERRORS), seed }
    }
}

impl Default for BerOptions {
    fn default() -> Self {
        Self::new(DEFAULT_BIT_BUDGET, 0)
    }
}

/// Precomputed hypotheses for one link.
struct Detector {
    r: Vec<f64>,
    /// `2v` per hypothesis.
    two_v: Vec<f64>,
    /// `½ ln v` per hypothesis.
    half_log_v: Vec<f64>,
    led: Vec<usize>,
    level: Vec<usize>,
}

impl Detector {
    fn new(plan: &MappingPlan, gains: &ChannelGains, noise: &NoiseModel) -> Result<Self> {
        let pts = plan.points(gains)?;
        let v: Vec<f64> = pts.iter().map(|p| noise.variance(p.r)).collect();
        Ok(Self {
            r: pts.iter().map(|p| p.r).collect(),
            two_v: v.iter().map(|v| 2.0 * v).collect(),
            half_log_v: v.iter().map(|v| 0.5 * v.ln()).collect(),
            led: pts.iter().map(|p| p.led).collect(),
            level: pts.iter().map(|p| p.level).collect(),
        })
    }

    /// Index of the most likely hypothesis; ties go to the lowest index.
    #[inline]
    fn detect(&self, y: f64) -> usize {
        let mut best = 0;
        let mut best_score = f64::NEG_INFINITY;
        for k in 0..self.r.len() {
            let d = y - self.r[k];
            let score = -d * d / self.two_v[k] - self.half_log_v[k];
            if score > best_score {
                best = k;
                best_score = score;
            }
        }
        best
    }
}

/// Maximum-likelihood `(LED, level)` for the observation `y`, using the
/// hypothesis-dependent variance.
pub fn ml_detect(y: f64, plan: &MappingPlan, gains: &ChannelGains, noise: &NoiseModel) -> Result<(usize, usize)> {
    let det = Detector::new(plan, gains, noise)?;
    let k = det.detect(y);
    Ok((det.led[k], det.level[k]))
}

/// BER with the default stopping rule (bit budget or 200 errors).
pub fn ber_monte_carlo(
    plan: &MappingPlan,
    gains: &ChannelGains,
    noise: &NoiseModel,
    n_bits: u64,
    seed: u64,
) -> Result<BerResult> {
    ber_monte_carlo_with(plan, gains, noise, &BerOptions::new(n_bits, seed))
}

pub fn ber_monte_carlo_with(
    plan: &MappingPlan,
    gains: &ChannelGains,
    noise: &NoiseModel,
    options: &BerOptions,
) -> Result<BerResult> {
    let k = plan.k as u64;
    if options.n_bits == 0 || !options.n_bits.is_multiple_of(k) {
        return domain(format!("bit budget {} is not a positive multiple of K = {k}", options.n_bits));
    }
    let det = Detector::new(plan, gains, noise)?;
    // Transmitted hypothesis and decoded value for every block value.
    let values = 1u32 << plan.k;
    let index_of: Vec<usize> = (0..values)
        .map(|v| {
            let t = encode_value(plan, v);
            (0..det.r.len()).find(|&i| det.led[i] == t.led && det.level[i] == t.level).expect("encoded point exists")
        })
        .collect();
    let value_of: Vec<u32> =
        (0..det.r.len()).map(|i| decode_value(plan, det.led[i], det.level[i])).collect::<Result<_>>()?;

    let blocks = options.n_bits / k;
    let chunks = blocks.div_ceil(CHUNK_BLOCKS);
    let run_chunk = |c: u64| -> (u64, u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
        rng.set_stream(c);
        let n = CHUNK_BLOCKS.min(blocks - c * CHUNK_BLOCKS);
        let mut errors = 0u64;
        for _ in 0..n {
            let v = rng.gen_range(0..values);
            let y = sample_received(det.r[index_of[v as usize]], noise, &mut rng);
            let decided = value_of[det.detect(y)];
            errors += (decided ^ v).count_ones() as u64;
        }
        (errors, n * k)
    };

    let (mut errors, mut bits) = (0u64, 0u64);
    let mut next = 0;
    'waves: while next < chunks {
        let end = (next + WAVE).min(chunks);
        let wave: Vec<(u64, u64)> = (next..end).into_par_iter().map(run_chunk).collect();
        for (e, b) in wave {
            errors += e;
            bits += b;
            if options.max_errors.is_some_and(|m| errors >= m) {
                break 'waves;
            }
        }
        next = end;
    }
    Ok(BerResult::from_counts(errors, bits))
}

/// Rectangular grid of PD positions at a fixed height.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlaneGrid {
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
    pub height: f64,
}

impl PlaneGrid {
    /// `nx × ny` evenly spaced points over `[x0, x1] × [y0, y1]`.
    pub fn uniform(x: (f64, f64), y: (f64, f64), nx: usize, ny: usize, height: f64) -> Self {
        Self { xs: linspace(x.0, x.1, nx), ys: linspace(y.0, y.1, ny), height }
    }
}

pub(crate) fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![a],
        _ => (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlanePoint {
    pub x: f64,
    pub y: f64,
    pub result: BerResult,
}

/// BER at every PD position of `grid`, rows ordered by `y` then `x`.
///
/// A single-LED scenario uses plain `2^K`-PAM; otherwise the plan is rebuilt
/// for each position's channel. Every point uses the same seed.
pub fn ber_plane_sweep(
    scenario: &RoomScenario,
    grid: &PlaneGrid,
    params: &PlanParams,
    noise: &NoiseModel,
    options: &BerOptions,
    adaptive: bool,
) -> Result<Vec<PlanePoint>> {
    scenario.validate()?;
    let single = if scenario.num_leds() == 1 { Some(MappingPlan::single_led(params)?) } else { None };
    let positions: Vec<(f64, f64)> = grid.ys.iter().flat_map(|&y| grid.xs.iter().map(move |&x| (x, y))).collect();
    positions
        .into_iter()
        .map(|(x, y)| {
            let mut s = scenario.clone();
            s.pd_position = [x, y, grid.height];
            let gains = channel_vector(&s)?;
            let plan = match &single {
                Some(p) => p.clone(),
                None => build_plan(&gains, params, noise.varsigma_sq, adaptive)?,
            };
            let result = ber_monte_carlo_with(&plan, &gains, noise, options)?;
            Ok(PlanePoint { x, y, result })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cabm::tests::SIX_LED;
    use approx::assert_relative_eq;

    fn six_led() -> (ChannelGains, MappingPlan) {
        let gains = ChannelGains::new(SIX_LED.to_vec()).unwrap();
        let plan = build_plan(&gains, &PlanParams::new(4, 1.0), 0.0, true).unwrap();
        (gains, plan)
    }

    fn brute(y: f64, plan: &MappingPlan, gains: &ChannelGains, noise: &NoiseModel) -> (usize, usize) {
        let mut best = (0, 0);
        let mut best_pdf = f64::NEG_INFINITY;
        for m in 0..plan.m {
            for (i, x) in plan.levels(m).iter().enumerate() {
                let pdf = crate::link::cond_pdf(y, gains[m], *x, noise).unwrap().ln();
                if pdf > best_pdf {
                    best_pdf = pdf;
                    best = (m, i);
                }
            }
        }
        best
    }

    #[test]
    fn noiseless_detection_recovers_every_point() {
        let (gains, plan) = six_led();
        let noise = NoiseModel::new(1e-12, 3.0).unwrap();
        for p in plan.points(&gains).unwrap() {
            assert_eq!(ml_detect(p.r, &plan, &gains, &noise).unwrap(), (p.led, p.level));
        }
    }

    #[test]
    fn matches_exhaustive_likelihood_search() {
        let (gains, plan) = six_led();
        for varsigma in [0.0, 2.0, 10.0] {
            let noise = NoiseModel::new(1e-3, varsigma * varsigma).unwrap();
            for j in 0..2000 {
                // Irrational offset keeps the grid off exact decision boundaries.
                let y = -0.1 + 0.4 * (j as f64 + 0.414_213_562) / 2000.0;
                assert_eq!(ml_detect(y, &plan, &gains, &noise).unwrap(), brute(y, &plan, &gains, &noise), "y={y}");
            }
        }
    }

    #[test]
    fn nearest_point_without_signal_noise() {
        let (gains, plan) = six_led();
        let noise = NoiseModel::new(1e-3, 0.0).unwrap();
        let pts = plan.points(&gains).unwrap();
        for j in 0..500 {
            let y = 0.5 * j as f64 / 500.0;
            let nearest = pts.iter().min_by(|a, b| (a.r - y).abs().total_cmp(&(b.r - y).abs())).unwrap();
            let (m, i) = ml_detect(y, &plan, &gains, &noise).unwrap();
            let chosen = pts.iter().find(|p| p.led == m && p.level == i).unwrap();
            assert_relative_eq!((chosen.r - y).abs(), (nearest.r - y).abs(), epsilon = 1e-15);
        }
    }

    #[test]
    fn tiny_noise_gives_zero_errors() {
        let (gains, plan) = six_led();
        let noise = NoiseModel::new(1e-14, 0.0).unwrap();
        let r = ber_monte_carlo(&plan, &gains, &noise, 40_000, 1).unwrap();
        assert_eq!(r.bit_errors, 0);
        assert_eq!(r.bits_simulated, 40_000);
    }

    #[test]
    fn coincident_points_give_coin_flip() {
        let gains = ChannelGains::new(vec![0.0; 4]).unwrap();
        let plan = build_plan(&gains, &PlanParams::new(4, 1.0), 0.0, false).unwrap();
        let noise = NoiseModel::new(1e-3, 0.0).unwrap();
        let opts = BerOptions { n_bits: 400_000, max_errors: None, seed: 3 };
        let r = ber_monte_carlo_with(&plan, &gains, &noise, &opts).unwrap();
        assert!((r.ber - 0.5).abs() < 0.01, "{r:?}");
    }

    #[test]
    fn deterministic_and_budgeted() {
        let (gains, plan) = six_led();
        let noise = NoiseModel::new(2e-4, 1.0).unwrap();
        let a = ber_monte_carlo(&plan, &gains, &noise, 100_000, 9).unwrap();
        let b = ber_monte_carlo(&plan, &gains, &noise, 100_000, 9).unwrap();
        assert_eq!(a, b);
        assert!(a.bit_errors >= DEFAULT_MAX_ERRORS || a.bits_simulated == 100_000);
        assert!(ber_monte_carlo(&plan, &gains, &noise, 10, 9).is_err());
    }

    #[test]
    fn wilson_interval() {
        let r = BerResult::from_counts(50, 1000);
        let (lo, hi) = r.interval();
        // Independent evaluation of the Wilson score interval.
        assert_relative_eq!(lo, 0.038_130_262_392_748_81, epsilon = 1e-12);
        assert_relative_eq!(hi, 0.065_313_820_244_250_8, epsilon = 1e-12);
        assert!(BerResult::from_counts(0, 100).interval().0 == 0.0);
    }
}
