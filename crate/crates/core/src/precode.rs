//! Max-min distance precoding of the received constellation.
//!
//! Each `(LED, level)` point `h_m x_i` is scaled by `w_{m,i} > 0` so that the
//! smallest normalised distance
//! `|r_a − r_b| / √(1 + r_b ς²)` over ordered pairs grows, while the summed
//! received intensity is preserved. The min is replaced by the soft-min
//! `−(1/ρ) ln Σ e^{−ρ L}` and ρ is doubled from `rho_init` until it reaches
//! `rho_stop`; every stage is a log-barrier problem on the simplex-like
//! feasible set, solved by projected L-BFGS from the previous stage's point.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cabm::{LabeledPoint, MappingPlan};
use crate::error::{domain, Result};
use crate::geometry::ChannelGains;
use crate::link::NoiseModel;

/// One positive weight per `(LED, level)` pair, in [`MappingPlan::points`]
/// order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PrecodingWeights(Vec<f64>);

impl PrecodingWeights {
    pub fn identity(plan: &MappingPlan) -> Self {
        Self(vec![1.0; 1 << plan.k])
    }

    pub fn new(plan: &MappingPlan, w: Vec<f64>) -> Result<Self> {
        let out = Self(w);
        out.check(plan)?;
        Ok(out)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn check(&self, plan: &MappingPlan) -> Result<()> {
        if self.0.len() != 1 << plan.k {
            return domain(format!("{} precoding weights for {} constellation points", self.0.len(), 1u64 << plan.k));
        }
        if let Some(w) = self.0.iter().find(|w| !(w.is_finite() && **w > 0.0)) {
            return domain(format!("precoding weight {w} is not positive"));
        }
        Ok(())
    }

    /// `|Σ w h x − Σ h x| / Σ h x`.
    pub fn power_residual(&self, plan: &MappingPlan, gains: &ChannelGains) -> Result<f64> {
        let pts = plan.points(gains)?;
        let base: f64 = pts.iter().map(|p| p.r).sum();
        let pre: f64 = pts.iter().zip(&self.0).map(|(p, w)| p.r * w).sum();
        Ok((pre - base).abs() / base)
    }
}

/// Received points `w_{m,i} h_m x_i`.
pub fn signal_space(weights: &PrecodingWeights, gains: &ChannelGains, plan: &MappingPlan) -> Result<Vec<LabeledPoint>> {
    weights.check(plan)?;
    let mut pts = plan.points(gains)?;
    for (p, w) in pts.iter_mut().zip(weights.as_slice()) {
        p.r *= w;
    }
    Ok(pts)
}

/// `min |r_a − r_b| / √(1 + r_b ς²)` over ordered pairs of distinct labels,
/// normalised at the second point.
pub fn min_normalized_distance(points: &[f64], varsigma_sq: f64) -> f64 {
    if points.len() < 2 {
        return f64::INFINITY;
    }
    crate::cabm::nearest_neighbour_min(points, |r| (1.0 + r * varsigma_sq).sqrt())
}

/// `−(1/ρ) ln Σ_k e^{−ρ L_k}`, shifted by the minimum for stability.
pub fn soft_min(distances: &[f64], rho: f64) -> Result<f64> {
    if distances.is_empty() {
        return domain("soft-min of an empty list");
    }
    if !(rho > 0.0) {
        return domain(format!("soft-min sharpness {rho} must be positive"));
    }
    let min = distances.iter().copied().fold(f64::INFINITY, f64::min);
    let s: f64 = distances.iter().map(|l| (-rho * (l - min)).exp()).sum();
    Ok(min - s.ln() / rho)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub rho_init: f64,
    pub rho_stop: f64,
    /// Stop an inner solve once the projected gradient's largest entry
    /// falls below this.
    pub grad_tol: f64,
    /// Relative tolerance on the power-preservation equality.
    pub constraint_tol: f64,
    pub max_inner_iters: usize,
    /// Starting points: the identity plus `restarts − 1` perturbations.
    pub restarts: usize,
    pub seed: u64,
    /// Barrier weight at ρ = 1; the stage weight is `barrier / ρ`.
    pub barrier: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            rho_init: 10.0,
            rho_stop: 1e5,
            grad_tol: 1e-9,
            constraint_tol: 1e-8,
            max_inner_iters: 300,
            restarts: 8,
            seed: 0,
            barrier: 1e-2,
        }
    }
}

impl SolverConfig {
    /// `⌈log₂(ρ_stop/ρ_init)⌉ + 1`.
    pub fn max_outer_iterations(&self) -> usize {
        (self.rho_stop / self.rho_init).log2().ceil().max(0.0) as usize + 1
    }

    fn validate(&self) -> Result<()> {
        if !(self.rho_init > 0.0 && self.rho_stop >= self.rho_init && self.rho_stop.is_finite()) {
            return domain("need 0 < rho_init <= rho_stop");
        }
        if self.restarts == 0 || self.max_inner_iters == 0 {
            return domain("need at least one restart and one inner iteration");
        }
        if !(self.barrier > 0.0) {
            return domain("barrier weight must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointOutcome {
    /// Optimised received points.
    pub points: Vec<f64>,
    pub min_distance: f64,
    pub identity_min_distance: f64,
    /// Number of soft-min stages run by the selected restart.
    pub outer_iterations: usize,
    /// Every inner solve of the selected restart met `grad_tol`.
    pub converged: bool,
    /// Index of the selected restart (0 is the identity start).
    pub restart: usize,
    /// The optimiser did not beat the starting constellation, which was
    /// returned unchanged.
    pub kept_identity: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrecodingOutcome {
    pub weights: PrecodingWeights,
    pub min_distance: f64,
    pub identity_min_distance: f64,
    pub outer_iterations: usize,
    pub converged: bool,
    pub restart: usize,
    pub kept_identity: bool,
}

/// Optimises the plan's received constellation.
pub fn optimize_precoding(
    plan: &MappingPlan,
    gains: &ChannelGains,
    noise: &NoiseModel,
    config: &SolverConfig,
) -> Result<PrecodingOutcome> {
    let pts = plan.points(gains)?;
    let r0: Vec<f64> = pts.iter().map(|p| p.r).collect();
    let out = optimize_points(&r0, noise.varsigma_sq, config)?;
    let w = out.points.iter().zip(&r0).map(|(r, r0)| if *r0 > 0.0 { r / r0 } else { 1.0 }).collect();
    let weights = PrecodingWeights(w);
    let residual = weights.power_residual(plan, gains)?;
    if residual > config.constraint_tol {
        return domain(format!("power constraint violated by {residual:e}"));
    }
    Ok(PrecodingOutcome {
        weights,
        min_distance: out.min_distance,
        identity_min_distance: out.identity_min_distance,
        outer_iterations: out.outer_iterations,
        converged: out.converged,
        restart: out.restart,
        kept_identity: out.kept_identity,
    })
}

/// Max-min optimisation of a raw point set under `Σ r = Σ r0`, `r > 0`.
/// Points with `r0 = 0` stay fixed.
pub fn optimize_points(r0: &[f64], varsigma_sq: f64, config: &SolverConfig) -> Result<PointOutcome> {
    config.validate()?;
    if r0.len() < 2 {
        return domain("need at least two points");
    }
    if r0.iter().any(|r| !(r.is_finite() && *r >= 0.0)) {
        return domain("received points must be finite and non-negative");
    }
    let free: Vec<usize> = (0..r0.len()).filter(|&k| r0[k] > 0.0).collect();
    if free.is_empty() {
        return domain("all received points are zero");
    }
    let scale = free.iter().map(|&k| r0[k]).sum::<f64>() / free.len() as f64;
    let problem = Problem::new(r0, &free, scale, varsigma_sq);
    let identity_min = min_normalized_distance(r0, varsigma_sq);

    let runs: Vec<Run> = (0..config.restarts)
        .into_par_iter()
        .map(|i| {
            let start = problem.start(i, config.seed);
            problem.continuation(start, config)
        })
        .collect();
    // Best objective, then lowest restart index.
    let (restart, best) = runs
        .iter()
        .enumerate()
        .min_by(|(i, a), (j, b)| b.min_distance.total_cmp(&a.min_distance).then(i.cmp(j)))
        .expect("at least one restart");
    if best.min_distance >= identity_min {
        Ok(PointOutcome {
            points: best.points.clone(),
            min_distance: best.min_distance,
            identity_min_distance: identity_min,
            outer_iterations: best.outer_iterations,
            converged: best.converged,
            restart,
            kept_identity: false,
        })
    } else {
        Ok(PointOutcome {
            points: r0.to_vec(),
            min_distance: identity_min,
            identity_min_distance: identity_min,
            outer_iterations: best.outer_iterations,
            converged: best.converged,
            restart,
            kept_identity: true,
        })
    }
}

struct Run {
    points: Vec<f64>,
    min_distance: f64,
    outer_iterations: usize,
    converged: bool,
}

/// Works in units of the mean free point, `u = r / scale`, so ρ and the
/// tolerances are dimensionless.
struct Problem<'a> {
    r0: &'a [f64],
    free: &'a [usize],
    scale: f64,
    /// ς² expressed per unit of `u`.
    vs: f64,
    varsigma_sq: f64,
}

impl<'a> Problem<'a> {
    fn new(r0: &'a [f64], free: &'a [usize], scale: f64, varsigma_sq: f64) -> Self {
        Self { r0, free, scale, vs: varsigma_sq * scale, varsigma_sq }
    }

    fn start(&self, restart: usize, seed: u64) -> Vec<f64> {
        let mut u: Vec<f64> = self.r0.iter().map(|r| r / self.scale).collect();
        if restart > 0 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(restart as u64);
            for &k in self.free {
                let z: f64 = StandardNormal.sample(&mut rng);
                u[k] *= (0.1 * z).exp();
            }
            self.rescale(&mut u);
        }
        u
    }

    /// Restores `Σ_free u = #free` by a common factor.
    fn rescale(&self, u: &mut [f64]) {
        let s: f64 = self.free.iter().map(|&k| u[k]).sum();
        let f = self.free.len() as f64 / s;
        for &k in self.free {
            u[k] *= f;
        }
    }

    fn to_points(&self, u: &[f64]) -> Vec<f64> {
        self.r0.iter().zip(u).map(|(r0, u)| if *r0 > 0.0 { u * self.scale } else { 0.0 }).collect()
    }

    fn continuation(&self, mut u: Vec<f64>, config: &SolverConfig) -> Run {
        let mut rho = config.rho_init;
        let mut stages = 0;
        let mut converged = true;
        loop {
            stages += 1;
            converged &= self.solve_stage(&mut u, rho, config.barrier / rho, config);
            if rho >= config.rho_stop {
                break;
            }
            rho *= 2.0;
        }
        self.rescale(&mut u);
        let points = self.to_points(&u);
        let min_distance = min_normalized_distance(&points, self.varsigma_sq);
        Run { points, min_distance, outer_iterations: stages, converged }
    }

    /// Negated barrier objective `−(softmin_ρ(u) + μ Σ ln u)` and its gradient
    /// projected onto `Σ_free du = 0`.
    fn eval(&self, u: &[f64], rho: f64, mu: f64, grad: &mut [f64]) -> f64 {
        let n = u.len();
        let g: Vec<f64> = u.iter().map(|&x| (1.0 + self.vs * x).powf(-0.5)).collect();
        let dg: Vec<f64> = u.iter().map(|&x| -0.5 * self.vs * (1.0 + self.vs * x).powf(-1.5)).collect();
        let mut lmin = f64::INFINITY;
        for a in 0..n {
            for b in 0..n {
                if a != b {
                    lmin = lmin.min((u[a] - u[b]).abs() * g[b]);
                }
            }
        }
        let mut z = 0.0;
        grad.iter_mut().for_each(|x| *x = 0.0);
        for a in 0..n {
            for b in 0..n {
                if a == b {
                    continue;
                }
                let diff = u[a] - u[b];
                let l = diff.abs() * g[b];
                let e = (-rho * (l - lmin)).exp();
                z += e;
                let s = if diff > 0.0 {
                    1.0
                } else if diff < 0.0 {
                    -1.0
                } else {
                    0.0
                };
                grad[a] += e * s * g[b];
                grad[b] += e * (-s * g[b] + diff.abs() * dg[b]);
            }
        }
        let soft = lmin - z.ln() / rho;
        let mut barrier = 0.0;
        for &k in self.free {
            barrier += u[k].ln();
        }
        // Gradient of the maximised objective, then negate.
        grad.iter_mut().for_each(|g| *g /= z);
        for &k in self.free {
            grad[k] += mu / u[k];
        }
        let mean = self.free.iter().map(|&k| grad[k]).sum::<f64>() / self.free.len() as f64;
        let mut out = vec![0.0; n];
        for &k in self.free {
            out[k] = -(grad[k] - mean);
        }
        grad.copy_from_slice(&out);
        -(soft + mu * barrier)
    }

    /// Projected L-BFGS with fraction-to-boundary backtracking. Returns
    /// whether the gradient tolerance was met.
    fn solve_stage(&self, u: &mut [f64], rho: f64, mu: f64, config: &SolverConfig) -> bool {
        const MEMORY: usize = 8;
        let n = u.len();
        let mut g = vec![0.0; n];
        let mut f = self.eval(u, rho, mu, &mut g);
        let mut s_hist: Vec<Vec<f64>> = Vec::new();
        let mut y_hist: Vec<Vec<f64>> = Vec::new();
        let mut trial = vec![0.0; n];
        let mut g_new = vec![0.0; n];
        for _ in 0..config.max_inner_iters {
            if g.iter().fold(0.0f64, |m, x| m.max(x.abs())) <= config.grad_tol {
                return true;
            }
            let mut d = two_loop(&g, &s_hist, &y_hist);
            let mut slope = dot(&g, &d);
            if !(slope < 0.0) {
                s_hist.clear();
                y_hist.clear();
                d = g.iter().map(|x| -x).collect();
                slope = dot(&g, &d);
            }
            let mut alpha: f64 = 1.0;
            for &k in self.free {
                if d[k] < 0.0 {
                    alpha = alpha.min(-0.99 * u[k] / d[k]);
                }
            }
            let mut accepted = false;
            for _ in 0..60 {
                for k in 0..n {
                    trial[k] = u[k] + alpha * d[k];
                }
                let f_new = self.eval(&trial, rho, mu, &mut g_new);
                if f_new.is_finite() && f_new <= f + 1e-4 * alpha * slope {
                    let s: Vec<f64> = (0..n).map(|k| trial[k] - u[k]).collect();
                    let y: Vec<f64> = (0..n).map(|k| g_new[k] - g[k]).collect();
                    if dot(&s, &y) > 1e-16 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() {
                        if s_hist.len() == MEMORY {
                            s_hist.remove(0);
                            y_hist.remove(0);
                        }
                        s_hist.push(s);
                        y_hist.push(y);
                    }
                    u.copy_from_slice(&trial);
                    g.copy_from_slice(&g_new);
                    f = f_new;
                    accepted = true;
                    break;
                }
                alpha *= 0.5;
            }
            if !accepted {
                return false;
            }
        }
        false
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn two_loop(g: &[f64], s_hist: &[Vec<f64>], y_hist: &[Vec<f64>]) -> Vec<f64> {
    let mut q: Vec<f64> = g.to_vec();
    let m = s_hist.len();
    let mut alpha = vec![0.0; m];
    for i in (0..m).rev() {
        let rho = 1.0 / dot(&y_hist[i], &s_hist[i]);
        alpha[i] = rho * dot(&s_hist[i], &q);
        for (qk, yk) in q.iter_mut().zip(&y_hist[i]) {
            *qk -= alpha[i] * yk;
        }
    }
    if let (Some(s), Some(y)) = (s_hist.last(), y_hist.last()) {
        let gamma = dot(s, y) / dot(y, y);
        q.iter_mut().for_each(|x| *x *= gamma);
    }
    for i in 0..m {
        let rho = 1.0 / dot(&y_hist[i], &s_hist[i]);
        let beta = rho * dot(&y_hist[i], &q);
        for (qk, sk) in q.iter_mut().zip(&s_hist[i]) {
            *qk += (alpha[i] - beta) * sk;
        }
    }
    q.iter_mut().for_each(|x| *x = -*x);
    q
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn brute(points: &[f64], varsigma_sq: f64) -> f64 {
        let mut best = f64::INFINITY;
        for (a, ra) in points.iter().enumerate() {
            for (b, rb) in points.iter().enumerate() {
                if a != b {
                    best = best.min((ra - rb).abs() / (1.0 + rb * varsigma_sq).sqrt());
                }
            }
        }
        best
    }

    #[test]
    fn min_distance_examples() {
        assert_eq!(min_normalized_distance(&[0.0, 1.0], 0.0), 1.0);
        assert_eq!(min_normalized_distance(&[0.3, 0.7, 0.3], 2.0), 0.0);
        let pts = [0.1, 0.9, 0.35, 2.0, 1.2];
        assert_relative_eq!(min_normalized_distance(&pts, 3.0), brute(&pts, 3.0), epsilon = 1e-15);
    }

    #[test]
    fn soft_min_examples() {
        for rho in [0.5, 3.0, 40.0] {
            assert_relative_eq!(soft_min(&[1.0, 1.0, 1.0], rho).unwrap(), 1.0 - 3f64.ln() / rho, epsilon = 1e-14);
        }
        let v = soft_min(&[1.0, 2.0, 3.0], 100.0).unwrap();
        assert!(v <= 1.0 && 1.0 - v < 1e-4);
        assert!(soft_min(&[], 1.0).is_err());
        assert!(soft_min(&[1.0], 0.0).is_err());
    }

    #[test]
    fn schedule_bound() {
        let c = SolverConfig::default();
        assert_eq!(c.max_outer_iterations(), 15);
        let out = optimize_points(&[0.2, 0.5, 0.55, 1.4], 0.0, &SolverConfig { restarts: 2, ..c }).unwrap();
        assert!(out.outer_iterations <= 15);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let r0 = [0.3, 0.9, 1.1, 1.7, 0.6];
        let free: Vec<usize> = (0..5).collect();
        let p = Problem::new(&r0, &free, 0.92, 2.0);
        let u: Vec<f64> = r0.iter().map(|r| r / 0.92).collect();
        let (rho, mu) = (7.0, 1e-2);
        let mut g = vec![0.0; 5];
        p.eval(&u, rho, mu, &mut g);
        // Directional derivative along a feasible direction.
        let d = [0.3, -0.1, 0.2, -0.5, 0.1];
        let h = 1e-6;
        let plus: Vec<f64> = u.iter().zip(&d).map(|(x, d)| x + h * d).collect();
        let minus: Vec<f64> = u.iter().zip(&d).map(|(x, d)| x - h * d).collect();
        let mut tmp = vec![0.0; 5];
        let fd = (p.eval(&plus, rho, mu, &mut tmp) - p.eval(&minus, rho, mu, &mut tmp)) / (2.0 * h);
        assert_relative_eq!(fd, dot(&g, &d), max_relative = 1e-6);
    }

    #[test]
    fn three_points_match_grid_search() {
        let r0 = [0.2, 0.25, 0.9];
        let out = optimize_points(&r0, 0.0, &SolverConfig::default()).unwrap();
        let total: f64 = r0.iter().sum();
        assert_relative_eq!(out.points.iter().sum::<f64>(), total, max_relative = 1e-12);
        // Dense grid over the 2-D feasible set.
        let steps = 1500;
        let mut best = 0.0f64;
        for i in 1..steps {
            for j in 1..steps - i {
                let a = total * i as f64 / steps as f64;
                let b = total * j as f64 / steps as f64;
                best = best.max(min_normalized_distance(&[a, b, total - a - b], 0.0));
            }
        }
        assert!(out.min_distance >= 0.99 * best, "{} vs grid {best}", out.min_distance);
    }

    #[test]
    fn guard_never_loses_distance() {
        // Already equally spaced.
        let r0 = [0.5, 1.0, 1.5, 2.0];
        let out = optimize_points(&r0, 0.0, &SolverConfig::default()).unwrap();
        assert!(out.min_distance >= out.identity_min_distance - 1e-12);
        let s: f64 = out.points.iter().sum();
        assert!((s - 5.0).abs() / 5.0 < 1e-8);
        assert!(out.points.iter().all(|r| *r > 0.0));
    }

    #[test]
    fn zero_points_stay_fixed() {
        let r0 = [0.0, 0.4, 0.42, 1.0];
        let out = optimize_points(&r0, 1.0, &SolverConfig { restarts: 2, ..Default::default() }).unwrap();
        assert_eq!(out.points[0], 0.0);
        assert!(out.min_distance > out.identity_min_distance);
    }
}
