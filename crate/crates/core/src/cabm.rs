//! Channel-adaptive bit mapping.
//!
//! With `2^p ≤ M < 2^{p+1}`, the first `b = 2^{p+1} − M` LEDs of the ordered
//! list Γ′ (set Ξ) get `p`-bit space codes and `2^q`-PAM; the remaining
//! `2a = 2(M − 2^p)` LEDs are split into Ψ and Φ, pairwise sharing a `p`-bit
//! prefix that is extended by `0` (Ψ) or `1` (Φ), and carry `2^{q−1}`-PAM.
//! Every LED therefore conveys exactly `K = p + q` bits, and every
//! `(LED, level)` point is used with probability `2^{−K}`.
//!
//! The adaptive variant searches all `C(M, b)` ways of choosing the high-order
//! LEDs and keeps the one maximising the normalised minimum distance of the
//! received constellation.

use std::cmp::Ordering;
use std::fmt;

use itertools::Itertools;
use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{domain, Error, Result};
use crate::geometry::ChannelGains;

/// Default PAM modulation index: levels span `P_t (1 ± β)`.
pub const DEFAULT_MODULATION_INDEX: f64 = 0.5;

/// Upper bound on the exhaustive order search.
pub const MAX_COMBINATIONS: u64 = 1 << 22;

/// Largest supported block length.
pub const MAX_BITS: u32 = 24;

/// `p` with `2^p ≤ m < 2^{p+1}` and whether `m` is a power of two.
pub fn split_exponent(m: usize) -> Result<(u32, bool)> {
    if m < 2 {
        return domain(format!("spatial modulation needs at least 2 LEDs, got {m}"));
    }
    Ok(split_unchecked(m))
}

fn split_unchecked(m: usize) -> (u32, bool) {
    let p = usize::BITS - 1 - m.leading_zeros();
    (p, m.is_power_of_two())
}

/// A space-domain codeword, most significant bit first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Codeword {
    pub bits: u32,
    pub len: u32,
}

impl Codeword {
    pub fn is_prefix_of(&self, other: &Codeword) -> bool {
        self.len <= other.len && other.bits >> (other.len - self.len) == self.bits
    }
}

impl fmt::Display for Codeword {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for k in (0..self.len).rev() {
            write!(f, "{}", (self.bits >> k) & 1)?;
        }
        Ok(())
    }
}

impl Serialize for Codeword {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Codeword {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        if s.len() > 31 || !s.bytes().all(|c| c == b'0' || c == b'1') {
            return Err(serde::de::Error::custom(format!("invalid codeword {s:?}")));
        }
        let bits = s.bytes().fold(0u32, |acc, c| (acc << 1) | (c - b'0') as u32);
        Ok(Codeword { bits, len: s.len() as u32 })
    }
}

/// Space codebook indexed by LED, for LEDs taken in the order `order`.
pub fn build_space_codebook(m: usize, order: &[usize]) -> Result<Vec<Codeword>> {
    let (p, _) = split_exponent(m)?;
    check_permutation(m, order)?;
    Ok(codebook_unchecked(m, p, order))
}

fn codebook_unchecked(m: usize, p: u32, order: &[usize]) -> Vec<Codeword> {
    let pow = 1usize << p;
    let b = 2 * pow - m;
    let mut codes = vec![Codeword { bits: 0, len: 0 }; m];
    for (pos, &led) in order.iter().enumerate() {
        codes[led] = if pos < b {
            Codeword { bits: pos as u32, len: p }
        } else if pos < pow {
            Codeword { bits: (pos as u32) << 1, len: p + 1 }
        } else {
            // Φ partner of Ψ position `pos − a`.
            let partner = (pos - (m - pow)) as u32;
            Codeword { bits: (partner << 1) | 1, len: p + 1 }
        };
    }
    codes
}

fn check_permutation(m: usize, order: &[usize]) -> Result<()> {
    let mut seen = vec![false; m];
    if order.len() != m {
        return domain(format!("LED order has {} entries, expected {m}", order.len()));
    }
    for &i in order {
        if i >= m || std::mem::replace(&mut seen[i], true) {
            return domain(format!("LED order {order:?} is not a permutation of 0..{m}"));
        }
    }
    Ok(())
}

/// `n` equally spaced intensity levels `P_t (1 + β s)`, `s ∈ [−1, 1]`, with
/// arithmetic mean exactly `P_t`. A single level sits at `P_t`; `β = 1`
/// spans `[0, 2P_t]`.
pub fn pam_levels(n: usize, pt: f64, modulation_index: f64) -> Result<Vec<f64>> {
    if n == 0 || !n.is_power_of_two() {
        return domain(format!("PAM order {n} is not a power of two"));
    }
    if !(pt.is_finite() && pt > 0.0) {
        return domain(format!("average power {pt} must be positive"));
    }
    if !(modulation_index > 0.0 && modulation_index <= 1.0) {
        return domain(format!("modulation index {modulation_index} outside (0, 1]"));
    }
    if n == 1 {
        return Ok(vec![pt]);
    }
    let last = (n - 1) as f64;
    Ok((0..n).map(|k| pt * (1.0 + modulation_index * (2.0 * k as f64 - last) / last)).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Labeling {
    /// Level `k` carries the bits of `k`.
    #[default]
    Natural,
    /// Level `k` carries the bits of `k ⊕ (k >> 1)`.
    Gray,
}

impl Labeling {
    fn level_of(self, value: u32) -> u32 {
        match self {
            Labeling::Natural => value,
            Labeling::Gray => {
                let mut v = value;
                let mut shift = value >> 1;
                while shift != 0 {
                    v ^= shift;
                    shift >>= 1;
                }
                v
            }
        }
    }

    fn value_of(self, level: u32) -> u32 {
        match self {
            Labeling::Natural => level,
            Labeling::Gray => level ^ (level >> 1),
        }
    }
}

/// Which constellation a LED draws from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Branch {
    /// `2^{q−1}` levels, LEDs in Ψ ∪ Φ.
    A,
    /// `2^q` levels, LEDs in Ξ.
    B,
}

/// Knobs shared by every plan built for a link.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlanParams {
    /// Bits per channel use.
    pub k: u32,
    /// Average transmit power `P_t` per constellation.
    pub avg_power: f64,
    pub modulation_index: f64,
    pub labeling: Labeling,
}

impl PlanParams {
    pub fn new(k: u32, avg_power: f64) -> Self {
        Self { k, avg_power, modulation_index: DEFAULT_MODULATION_INDEX, labeling: Labeling::Natural }
    }
}

/// Result of the modulation-order search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModOrderCombination {
    /// PAM order per LED, indexed by LED.
    pub orders: Vec<usize>,
    /// Normalised minimum distance achieved by `orders`.
    pub score: f64,
}

/// One `(LED, level)` hypothesis with its received intensity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LabeledPoint {
    pub led: usize,
    pub level: usize,
    pub branch: Branch,
    /// Noiseless received intensity `h_m x_i`.
    pub r: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MappingPlan {
    pub m: usize,
    pub k: u32,
    pub p: u32,
    pub q: u32,
    /// LED indices in codebook order Γ′.
    pub led_order: Vec<usize>,
    pub xi: Vec<usize>,
    pub psi: Vec<usize>,
    pub phi: Vec<usize>,
    /// Codeword of each LED, indexed by LED.
    pub codebook: Vec<Codeword>,
    /// PAM order of each LED, indexed by LED.
    pub pam_orders: Vec<usize>,
    pub constellation_a: Vec<f64>,
    pub constellation_b: Vec<f64>,
    pub avg_power: f64,
    pub modulation_index: f64,
    pub labeling: Labeling,
}

impl MappingPlan {
    /// Plan for LEDs taken in the order `order` (Ξ first).
    pub fn with_order(order: Vec<usize>, params: &PlanParams) -> Result<Self> {
        let m = order.len();
        split_exponent(m)?;
        check_permutation(m, &order)?;
        Self::assemble(order, params)
    }

    /// Single-transmitter plan (`p = 0`, `2^K`-PAM), used by the receiver
    /// plane sweep.
    pub fn single_led(params: &PlanParams) -> Result<Self> {
        Self::assemble(vec![0], params)
    }

    fn assemble(order: Vec<usize>, params: &PlanParams) -> Result<Self> {
        let m = order.len();
        let (p, _) = split_unchecked(m);
        if params.k > MAX_BITS {
            return Err(Error::Config(format!("K = {} exceeds the supported {MAX_BITS} bits", params.k)));
        }
        if params.k < p + 1 {
            return Err(Error::Config(format!("q = K - p must be at least 1 (K = {}, p = {p} for M = {m})", params.k)));
        }
        let q = params.k - p;
        let pow = 1usize << p;
        let b = 2 * pow - m;
        let a = m - pow;
        let codebook = codebook_unchecked(m, p, &order);
        let xi = order[..b].to_vec();
        let psi = order[b..b + a].to_vec();
        let phi = order[b + a..].to_vec();
        let mut pam_orders = vec![1usize << (q - 1); m];
        for &led in &xi {
            pam_orders[led] = 1 << q;
        }
        Ok(Self {
            m,
            k: params.k,
            p,
            q,
            constellation_a: pam_levels(1 << (q - 1), params.avg_power, params.modulation_index)?,
            constellation_b: pam_levels(1 << q, params.avg_power, params.modulation_index)?,
            led_order: order,
            xi,
            psi,
            phi,
            codebook,
            pam_orders,
            avg_power: params.avg_power,
            modulation_index: params.modulation_index,
            labeling: params.labeling,
        })
    }

    pub fn params(&self) -> PlanParams {
        PlanParams {
            k: self.k,
            avg_power: self.avg_power,
            modulation_index: self.modulation_index,
            labeling: self.labeling,
        }
    }

    /// Same LED assignment at a different average power.
    pub fn with_power(&self, avg_power: f64) -> Result<Self> {
        let params = PlanParams { avg_power, ..self.params() };
        Self::assemble(self.led_order.clone(), &params)
    }

    /// `|Ψ| = |Φ| = M − 2^p`.
    pub fn a(&self) -> usize {
        self.psi.len()
    }

    /// `|Ξ| = 2^{p+1} − M`.
    pub fn b(&self) -> usize {
        self.xi.len()
    }

    pub fn is_power_of_two(&self) -> bool {
        self.a() == 0
    }

    pub fn branch(&self, led: usize) -> Branch {
        if self.pam_orders[led] == 1 << self.q {
            Branch::B
        } else {
            Branch::A
        }
    }

    pub fn levels(&self, led: usize) -> &[f64] {
        match self.branch(led) {
            Branch::A => &self.constellation_a,
            Branch::B => &self.constellation_b,
        }
    }

    pub fn level(&self, led: usize, level: usize) -> Result<f64> {
        if led >= self.m {
            return Err(Error::Index { index: led, len: self.m });
        }
        let levels = self.levels(led);
        levels.get(level).copied().ok_or(Error::Index { index: level, len: levels.len() })
    }

    /// All `2^K` hypotheses in `(LED, level)` order.
    pub fn points(&self, gains: &ChannelGains) -> Result<Vec<LabeledPoint>> {
        self.check_gains(gains)?;
        Ok(self.points_unchecked(gains.as_slice()))
    }

    pub(crate) fn points_unchecked(&self, gains: &[f64]) -> Vec<LabeledPoint> {
        let mut out = Vec::with_capacity(1 << self.k);
        for (led, &h) in gains.iter().enumerate().take(self.m) {
            let branch = self.branch(led);
            for (level, &x) in self.levels(led).iter().enumerate() {
                out.push(LabeledPoint { led, level, branch, r: h * x });
            }
        }
        out
    }

    pub fn check_gains(&self, gains: &ChannelGains) -> Result<()> {
        if gains.len() != self.m {
            return domain(format!("{} channel gains for a plan over {} LEDs", gains.len(), self.m));
        }
        Ok(())
    }

    /// Sum of the codeword lengths' Kraft terms; exactly one for a valid plan.
    pub fn kraft_sum(&self) -> f64 {
        self.codebook.iter().map(|c| (-(c.len as f64)).exp2()).sum()
    }
}

/// Normalised minimum distance over ordered pairs of distinct points:
/// `min |r_a − r_b| / √(1 + r_a ς²)` with `r_a` the first point.
pub(crate) fn min_distance_first(values: &[f64], varsigma_sq: f64) -> f64 {
    nearest_neighbour_min(values, |r| (1.0 + r * varsigma_sq).sqrt())
}

/// For a fixed point the normaliser is constant, so the minimum over its
/// partners is attained at a sorted neighbour.
pub(crate) fn nearest_neighbour_min(values: &[f64], scale: impl Fn(f64) -> f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let mut best = f64::INFINITY;
    for i in 0..v.len() {
        let mut gap = f64::INFINITY;
        if i > 0 {
            gap = gap.min(v[i] - v[i - 1]);
        }
        if i + 1 < v.len() {
            gap = gap.min(v[i + 1] - v[i]);
        }
        best = best.min(gap / scale(v[i]));
    }
    best
}

/// Normalised minimum distance of the plan's received constellation.
pub fn d_min_prime(gains: &ChannelGains, plan: &MappingPlan, varsigma_sq: f64) -> Result<f64> {
    let pts = plan.points(gains)?;
    if pts.len() < 2 {
        return domain("at least two constellation points are needed");
    }
    let r: Vec<f64> = pts.iter().map(|p| p.r).collect();
    Ok(min_distance_first(&r, varsigma_sq))
}

fn combination_score(gains: &[f64], high: &[usize], lvl_a: &[f64], lvl_b: &[f64], varsigma_sq: f64) -> f64 {
    let mut r = Vec::with_capacity(gains.len() * lvl_b.len());
    let mut it = high.iter().peekable();
    for (m, &h) in gains.iter().enumerate() {
        let levels = if it.peek() == Some(&&m) {
            it.next();
            lvl_b
        } else {
            lvl_a
        };
        r.extend(levels.iter().map(|x| h * x));
    }
    min_distance_first(&r, varsigma_sq)
}

/// Exhaustive modulation-order search over every admissible choice of the
/// `2^{p+1} − M` high-order LEDs. Ties go to the lexicographically smallest
/// order vector.
pub fn optimize_orders(gains: &ChannelGains, params: &PlanParams, varsigma_sq: f64) -> Result<ModOrderCombination> {
    let m = gains.len();
    let (p, _) = split_exponent(m)?;
    if params.k < p + 1 {
        return Err(Error::Config(format!("q = K - p must be at least 1 (K = {}, p = {p} for M = {m})", params.k)));
    }
    let q = params.k - p;
    let b = (2usize << p) - m;
    let count = binomial(m as u64, b as u64);
    if count > MAX_COMBINATIONS {
        return Err(Error::Config(format!(
            "{count} order combinations for M = {m} exceed the exhaustive-search limit {MAX_COMBINATIONS}"
        )));
    }
    let lvl_a = pam_levels(1 << (q - 1), params.avg_power, params.modulation_index)?;
    let lvl_b = pam_levels(1 << q, params.avg_power, params.modulation_index)?;
    let combos: Vec<Vec<usize>> = (0..m).combinations(b).collect();
    let scored: Vec<(f64, Vec<usize>)> = combos
        .par_iter()
        .map(|high| {
            let score = combination_score(gains.as_slice(), high, &lvl_a, &lvl_b, varsigma_sq);
            let mut orders = vec![1usize << (q - 1); m];
            for &i in high {
                orders[i] = 1 << q;
            }
            (score, orders)
        })
        .collect();
    let (score, orders) = scored.into_iter().min_by(rank).expect("at least one combination");
    Ok(ModOrderCombination { orders, score })
}

/// Best-first ordering: larger score, then smaller order vector.
fn rank(x: &(f64, Vec<usize>), y: &(f64, Vec<usize>)) -> Ordering {
    y.0.total_cmp(&x.0).then_with(|| x.1.cmp(&y.1))
}

fn binomial(n: u64, k: u64) -> u64 {
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
        if acc > u64::MAX as u128 {
            return u64::MAX;
        }
    }
    acc as u64
}

/// Builds a plan; the adaptive variant reorders LEDs so the order search's
/// high-order LEDs come first (stronger channels first among equals).
pub fn build_plan(gains: &ChannelGains, params: &PlanParams, varsigma_sq: f64, adaptive: bool) -> Result<MappingPlan> {
    let m = gains.len();
    split_exponent(m)?;
    let order: Vec<usize> = if adaptive {
        let best = optimize_orders(gains, params, varsigma_sq)?;
        let mut order: Vec<usize> = (0..m).collect();
        order.sort_by(|&i, &j| {
            best.orders[j].cmp(&best.orders[i]).then_with(|| gains[j].total_cmp(&gains[i])).then_with(|| i.cmp(&j))
        });
        order
    } else {
        (0..m).collect()
    };
    MappingPlan::with_order(order, params)
}

/// LED and PAM level selected by a `K`-bit block.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Transmission {
    pub led: usize,
    pub level: usize,
}

/// Maps a block (MSB first) to the active LED and its level.
pub fn encode(plan: &MappingPlan, bits: &[bool]) -> Result<Transmission> {
    if bits.len() != plan.k as usize {
        return domain(format!("block has {} bits, expected {}", bits.len(), plan.k));
    }
    let value = bits.iter().fold(0u32, |acc, &b| (acc << 1) | b as u32);
    Ok(encode_value(plan, value))
}

/// [`encode`] for a block packed into the low `K` bits of `value`.
pub fn encode_value(plan: &MappingPlan, value: u32) -> Transmission {
    let (p, q, k) = (plan.p, plan.q, plan.k);
    let head = if p == 0 { 0 } else { (value >> (k - p)) as usize };
    let b = plan.b();
    let (pos, rest_len) = if head < b {
        (head, q)
    } else {
        let flag = (value >> (q - 1)) & 1;
        (if flag == 0 { head } else { head + plan.a() }, q - 1)
    };
    let symbol = value & ((1u32 << rest_len) - 1);
    Transmission { led: plan.led_order[pos], level: plan.labeling.level_of(symbol) as usize }
}

/// Inverse of [`encode_value`].
pub fn decode_value(plan: &MappingPlan, led: usize, level: usize) -> Result<u32> {
    if led >= plan.m {
        return Err(Error::Index { index: led, len: plan.m });
    }
    let n = plan.pam_orders[led];
    if level >= n {
        return Err(Error::Index { index: level, len: n });
    }
    let code = plan.codebook[led];
    let rest = plan.k - code.len;
    Ok((code.bits << rest) | plan.labeling.value_of(level as u32))
}

pub fn decode(plan: &MappingPlan, led: usize, level: usize) -> Result<Vec<bool>> {
    let v = decode_value(plan, led, level)?;
    Ok((0..plan.k).rev().map(|s| (v >> s) & 1 == 1).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Priors {
    /// Probability of activating each LED, indexed by LED.
    pub space: Vec<f64>,
    /// Probability of each level of the `2^{q−1}` constellation.
    pub symbol_a: f64,
    /// Probability of each level of the `2^q` constellation.
    pub symbol_b: f64,
}

impl Priors {
    pub fn space_total(&self) -> f64 {
        self.space.iter().sum()
    }

    pub fn symbol_total(&self, plan: &MappingPlan) -> f64 {
        self.symbol_a * plan.constellation_a.len() as f64 + self.symbol_b * plan.constellation_b.len() as f64
    }
}

pub fn prior_probabilities(plan: &MappingPlan) -> Priors {
    let space = plan.codebook.iter().map(|c| (-(c.len as f64)).exp2()).collect();
    let (p, q) = (plan.p as i32, plan.q as i32);
    Priors { space, symbol_a: plan.a() as f64 / 2f64.powi(p + q - 1), symbol_b: plan.b() as f64 / 2f64.powi(p + q) }
}
