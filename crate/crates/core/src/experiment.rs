//! Configuration-driven sweeps producing CSV tables.
//!
//! A configuration is a JSON document. Every physical quantity carries its
//! unit in the field name; omitted optics, room and noise fields take the
//! standard indoor defaults (5 m × 4 m × 3 m room, 1 cm² PD, 35° LEDs,
//! 72° FOV, −104 dBm noise).
//!
//! ```json
//! {
//!   "kind": "mi-sweep",
//!   "scenario": { "gains": [0.17e-5, 0.46e-5, 0.92e-5, 0.96e-5, 1.0e-5] },
//!   "k": 5,
//!   "noise": { "sigma_sq_dbm": -104, "varsigma": 0 },
//!   "sweep": { "variable": "snr_db", "start": -10, "stop": 50, "points": 61 }
//! }
//! ```

use std::fmt::{self, Write as _};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cabm::{build_plan, split_exponent, Labeling, MappingPlan, PlanParams, DEFAULT_MODULATION_INDEX};
use crate::capacity::{
    mi_high_snr_limit, mi_low_snr_limit, mi_lower_bound, mi_lower_bound_precoded, mutual_information, Method,
    DEFAULT_QUADRATURE_NODES,
};
use crate::error::{Error, Result};
use crate::geometry::{
    channel_vector, default_led_layout, default_pd_position, ChannelGains, Point3, RoomScenario, DEFAULT_FOV_DEG,
    DEFAULT_PD_HEIGHT_M, DEFAULT_ROOM_M, DEFAULT_SEMI_ANGLE_DEG,
};
use crate::link::{dbm_to_watts, NoiseModel, SnrPoint, DEFAULT_SIGMA_SQ_DBM};
use crate::precode::{optimize_precoding, PrecodingWeights, SolverConfig};
use crate::simulate::{ber_monte_carlo_with, ber_plane_sweep, linspace, BerOptions, PlaneGrid, DEFAULT_BIT_BUDGET};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    BerSweep,
    BerPlane,
    MiSweep,
    MiVsVarsigma,
    PrecodeCompare,
}

impl ExperimentKind {
    fn sweep_variable(self) -> SweepVariable {
        match self {
            ExperimentKind::BerSweep => SweepVariable::PtDbm,
            ExperimentKind::BerPlane => SweepVariable::PdGrid,
            ExperimentKind::MiSweep | ExperimentKind::PrecodeCompare => SweepVariable::SnrDb,
            ExperimentKind::MiVsVarsigma => SweepVariable::Varsigma,
        }
    }

    fn header(self) -> &'static str {
        match self {
            ExperimentKind::BerSweep => "pt_dbm,ber_adaptive,ber_fixed,ci_adaptive,ci_fixed",
            ExperimentKind::BerPlane => "x_m,y_m,ber,ci95",
            ExperimentKind::MiSweep => "snr_db,mi_exact,mi_lower,mi_hi_limit,mi_lo_limit",
            ExperimentKind::MiVsVarsigma => "varsigma,mi_exact,mi_lower",
            ExperimentKind::PrecodeCompare => "snr_db,mi_exact,mi_lower,mi_lower_precoded",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepVariable {
    PtDbm,
    SnrDb,
    Varsigma,
    PdGrid,
}

impl fmt::Display for SweepVariable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SweepVariable::PtDbm => "pt_dbm",
            SweepVariable::SnrDb => "snr_db",
            SweepVariable::Varsigma => "varsigma",
            SweepVariable::PdGrid => "pd_grid",
        })
    }
}

/// Either an explicit gain vector or a room whose gains follow from the
/// Lambertian model.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gains: Option<Vec<f64>>,
    /// Number of ceiling LEDs in the default layout.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub leds: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub led_positions_m: Option<Vec<Point3>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pd_position_m: Option<Point3>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub room_m: Option<Point3>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pd_area_cm2: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub semi_angle_deg: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fov_deg: Option<f64>,
}

impl ScenarioConfig {
    fn is_room(&self) -> bool {
        self.leds.is_some() || self.led_positions_m.is_some()
    }

    fn num_leds(&self) -> Option<usize> {
        match (&self.gains, &self.led_positions_m, self.leds) {
            (Some(g), _, _) => Some(g.len()),
            (None, Some(p), _) => Some(p.len()),
            (None, None, n) => n,
        }
    }

    /// Room with standard defaults for every omitted field.
    pub fn room(&self) -> Result<RoomScenario> {
        let room = self.room_m.unwrap_or(DEFAULT_ROOM_M);
        let leds = match (&self.led_positions_m, self.leds) {
            (Some(p), _) => p.clone(),
            (None, Some(n)) => default_led_layout(n, room),
            (None, None) => return Err(Error::Config("scenario: no LEDs given".into())),
        };
        let mut s = RoomScenario::standard(leds, self.pd_position_m.unwrap_or_else(|| default_pd_position(room)));
        s.room_dims = room;
        if let Some(a) = self.pd_area_cm2 {
            s.pd_area = a * 1e-4;
        }
        s.semi_angle_deg = self.semi_angle_deg.unwrap_or(DEFAULT_SEMI_ANGLE_DEG);
        s.fov_deg = self.fov_deg.unwrap_or(DEFAULT_FOV_DEG);
        s.validate().map_err(|e| Error::Config(format!("scenario: {e}")))?;
        Ok(s)
    }

    pub fn gains(&self) -> Result<ChannelGains> {
        match &self.gains {
            Some(g) => ChannelGains::new(g.clone()).map_err(|e| Error::Config(format!("scenario.gains: {e}"))),
            None => channel_vector(&self.room()?),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma_sq_dbm: Option<f64>,
    /// Input-dependent noise scale ς (not squared).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub varsigma: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub variable: Option<SweepVariable>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub start: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stop: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub points: Option<usize>,
    /// PD-grid extent along x.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x_m: Option<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub y_m: Option<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nx: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ny: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub height_m: Option<f64>,
}

/// Parsed, not yet validated, experiment description.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kind: Option<ExperimentKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scenario: Option<ScenarioConfig>,
    /// Bits per channel use.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<u32>,
    /// Channel-adaptive mapping for single-plan experiments.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub adaptive: Option<bool>,
    /// Standard noise (−104 dBm, ς = 0) when omitted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise: Option<NoiseConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepConfig>,
    /// Fixed transmit power for ber-plane.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pt_dbm: Option<f64>,
    /// Fixed SNR for mi-vs-varsigma.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub snr_db: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub modulation_index: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labeling: Option<Labeling>,
    /// Monte Carlo bit budget per BER point, rounded down to a multiple of K.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_bits: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quadrature_nodes: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<String>,
}

/// One problem found by [`validate`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Diagnostic {
    /// Dotted path of the offending field, or `line L, column C` for syntax
    /// errors.
    pub field: String,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

fn diag(field: &str, message: impl Into<String>) -> Diagnostic {
    Diagnostic { field: field.to_string(), message: message.into() }
}

/// Parses a JSON document; syntax and schema errors carry a line and column.
pub fn parse_config(text: &str) -> std::result::Result<ExperimentConfig, Diagnostic> {
    serde_json::from_str(text).map_err(|e| diag(&format!("line {}, column {}", e.line(), e.column()), e.to_string()))
}

impl ExperimentConfig {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("configuration serialises")
    }

    pub fn noise(&self) -> Result<NoiseModel> {
        let (dbm, vs) = match &self.noise {
            None => (DEFAULT_SIGMA_SQ_DBM, 0.0),
            Some(n) => (
                n.sigma_sq_dbm.ok_or_else(|| Error::Config("noise.sigma_sq_dbm: missing".into()))?,
                n.varsigma.unwrap_or(0.0),
            ),
        };
        NoiseModel::from_dbm(dbm, vs).map_err(|e| Error::Config(format!("noise: {e}")))
    }

    fn params(&self, avg_power: f64) -> PlanParams {
        PlanParams {
            k: self.k.unwrap_or(0),
            avg_power,
            modulation_index: self.modulation_index.unwrap_or(DEFAULT_MODULATION_INDEX),
            labeling: self.labeling.unwrap_or_default(),
        }
    }

    fn method(&self) -> Method {
        Method::Quadrature { nodes: self.quadrature_nodes.unwrap_or(DEFAULT_QUADRATURE_NODES) }
    }

    fn ber_options(&self) -> BerOptions {
        let k = self.k.unwrap_or(1).max(1) as u64;
        let budget = self.n_bits.unwrap_or(DEFAULT_BIT_BUDGET);
        BerOptions::new(budget - budget % k, self.seed.unwrap_or(0))
    }

    fn sweep_values(&self) -> Vec<f64> {
        let s = self.sweep.clone().unwrap_or_default();
        linspace(s.start.unwrap_or(0.0), s.stop.unwrap_or(0.0), s.points.unwrap_or(0))
    }
}

/// All constraint violations of `config`; empty iff it can be run.
pub fn validate(config: &ExperimentConfig) -> Vec<Diagnostic> {
    let mut out = Vec::new();
    let Some(kind) = config.kind else {
        out.push(diag("kind", "missing (ber-sweep | ber-plane | mi-sweep | mi-vs-varsigma | precode-compare)"));
        return out;
    };

    let m = match &config.scenario {
        None => {
            out.push(diag("scenario", "missing"));
            None
        }
        Some(s) => {
            if s.gains.is_some() && s.is_room() {
                out.push(diag("scenario", "give either gains or LEDs, not both"));
            }
            if s.gains.is_none() && !s.is_room() {
                out.push(diag("scenario", "needs gains, leds or led_positions_m"));
            }
            if let (Some(n), Some(p)) = (s.leds, &s.led_positions_m) {
                if n != p.len() {
                    out.push(diag("scenario.leds", format!("{n} LEDs but {} positions", p.len())));
                }
            }
            if let Some(g) = &s.gains {
                if let Err(e) = ChannelGains::new(g.clone()) {
                    out.push(diag("scenario.gains", e.to_string()));
                }
            } else if s.is_room() {
                if let Err(e) = s.room() {
                    out.push(diag("scenario", e.to_string()));
                }
            }
            if kind == ExperimentKind::BerPlane && !s.is_room() {
                out.push(diag("scenario", "ber-plane needs a room (leds or led_positions_m), not a gain vector"));
            }
            s.num_leds()
        }
    };

    match config.k {
        None => out.push(diag("k", "missing")),
        Some(k) => {
            if let Some(m) = m {
                if m == 0 {
                    out.push(diag("scenario", "at least one LED is required"));
                } else if m == 1 {
                    if kind != ExperimentKind::BerPlane {
                        out.push(diag("scenario", "a single LED is only supported by ber-plane"));
                    }
                    if k == 0 || k > crate::cabm::MAX_BITS {
                        out.push(diag("k", format!("K = {k} outside 1..={}", crate::cabm::MAX_BITS)));
                    }
                } else {
                    match split_exponent(m) {
                        Err(e) => out.push(diag("scenario", e.to_string())),
                        Ok((p, _)) => {
                            if k <= p {
                                out.push(diag(
                                    "k",
                                    format!(
                                        "K = {k} leaves q = K − p = {} for M = {m}; need q ≥ 1",
                                        k as i64 - p as i64
                                    ),
                                ));
                            } else if k > crate::cabm::MAX_BITS {
                                out.push(diag("k", format!("K = {k} exceeds {}", crate::cabm::MAX_BITS)));
                            }
                        }
                    }
                }
            }
        }
    }

    if let Some(n) = &config.noise {
        match n.sigma_sq_dbm {
            None => out.push(diag("noise.sigma_sq_dbm", "missing")),
            Some(v) if !v.is_finite() => out.push(diag("noise.sigma_sq_dbm", "must be finite")),
            _ => {}
        }
        if let Some(v) = n.varsigma {
            if !(v.is_finite() && v >= 0.0) {
                out.push(diag("noise.varsigma", "must be finite and non-negative"));
            }
        }
    }
    if let Some(b) = config.modulation_index {
        if !(b > 0.0 && b <= 1.0) {
            out.push(diag("modulation_index", "must lie in (0, 1]"));
        }
    }
    if let Some(n) = config.quadrature_nodes {
        if n < 2 {
            out.push(diag("quadrature_nodes", "need at least 2 nodes"));
        }
    }
    if let (Some(n), Some(k)) = (config.n_bits, config.k) {
        if k > 0 && n < k as u64 {
            out.push(diag("n_bits", format!("budget {n} is below one block of K = {k} bits")));
        }
    }

    let want = kind.sweep_variable();
    match &config.sweep {
        None => out.push(diag("sweep", "missing")),
        Some(s) => {
            match s.variable {
                None => out.push(diag("sweep.variable", format!("missing (expected {want})"))),
                Some(v) if v != want => {
                    out.push(diag("sweep.variable", format!("{v} does not apply; expected {want}")))
                }
                _ => {}
            }
            if want == SweepVariable::PdGrid {
                for (name, r) in [("sweep.x_m", s.x_m), ("sweep.y_m", s.y_m)] {
                    match r {
                        None => out.push(diag(name, "missing")),
                        Some([a, b]) if !(a.is_finite() && b.is_finite() && a <= b) => {
                            out.push(diag(name, "need a finite range with low ≤ high"))
                        }
                        _ => {}
                    }
                }
                for (name, n) in [("sweep.nx", s.nx), ("sweep.ny", s.ny)] {
                    if n.unwrap_or(0) == 0 {
                        out.push(diag(name, "need at least one grid point"));
                    }
                }
            } else {
                for (name, v) in [("sweep.start", s.start), ("sweep.stop", s.stop)] {
                    match v {
                        None => out.push(diag(name, "missing")),
                        Some(x) if !x.is_finite() => out.push(diag(name, "must be finite")),
                        _ => {}
                    }
                }
                if s.points.unwrap_or(0) == 0 {
                    out.push(diag("sweep.points", "the sweep range is empty; need points ≥ 1"));
                }
                if want == SweepVariable::Varsigma && s.start.is_some_and(|x| x < 0.0) {
                    out.push(diag("sweep.start", "ς must be non-negative"));
                }
            }
        }
    }

    match kind {
        ExperimentKind::BerPlane if config.pt_dbm.is_none() => {
            out.push(diag("pt_dbm", "missing (fixed transmit power)"))
        }
        ExperimentKind::MiVsVarsigma if config.snr_db.is_none() => out.push(diag("snr_db", "missing (fixed SNR)")),
        _ => {}
    }
    out
}

/// Runs a validated configuration and returns the CSV table.
///
/// Configuration problems are reported as [`Error::Config`]; anything else
/// is a runtime failure.
pub fn run(config: &ExperimentConfig) -> Result<String> {
    let problems = validate(config);
    if !problems.is_empty() {
        let list: Vec<String> = problems.iter().map(|d| d.to_string()).collect();
        return Err(Error::Config(list.join("; ")));
    }
    let kind = config.kind.expect("validated");
    let rows = match kind {
        ExperimentKind::MiSweep => mi_sweep(config)?,
        ExperimentKind::MiVsVarsigma => mi_vs_varsigma(config)?,
        ExperimentKind::PrecodeCompare => precode_compare(config)?,
        ExperimentKind::BerSweep => ber_sweep(config)?,
        ExperimentKind::BerPlane => ber_plane(config)?,
    };
    let mut csv = String::new();
    csv.push_str(kind.header());
    csv.push('\n');
    for row in rows {
        let cells: Vec<String> = row.iter().map(|v| format_number(*v)).collect();
        csv.push_str(&cells.join(","));
        csv.push('\n');
    }
    Ok(csv)
}

/// Plan chosen at `avg_power`, later rescaled to every sweep point.
fn plan_at(
    config: &ExperimentConfig,
    gains: &ChannelGains,
    noise: &NoiseModel,
    avg_power: f64,
    adaptive: bool,
) -> Result<MappingPlan> {
    build_plan(gains, &config.params(avg_power), noise.varsigma_sq, adaptive)
}

fn snr_power(db: f64, gains: &ChannelGains, noise: &NoiseModel) -> Result<f64> {
    SnrPoint::from_db(db).transmit_power(gains.max(), noise)
}

fn mi_sweep(config: &ExperimentConfig) -> Result<Vec<Vec<f64>>> {
    let gains = config.scenario.as_ref().expect("validated").gains()?;
    let noise = config.noise()?;
    let snrs = config.sweep_values();
    let top = snrs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let base = plan_at(config, &gains, &noise, snr_power(top, &gains, &noise)?, config.adaptive.unwrap_or(true))?;
    let hi = mi_high_snr_limit(&base);
    let method = config.method();
    snrs.par_iter()
        .map(|&db| {
            let plan = base.with_power(snr_power(db, &gains, &noise)?)?;
            let mi = mutual_information(&plan, &gains, &noise, method)?;
            let lb = mi_lower_bound(&plan, &gains, &noise)?;
            let lo = mi_low_snr_limit(&plan, &gains, noise.varsigma_sq)?;
            Ok(vec![db, mi.value, lb.value, hi, lo])
        })
        .collect()
}

fn mi_vs_varsigma(config: &ExperimentConfig) -> Result<Vec<Vec<f64>>> {
    let gains = config.scenario.as_ref().expect("validated").gains()?;
    let base_noise = config.noise()?;
    let pt = snr_power(config.snr_db.expect("validated"), &gains, &base_noise)?;
    let method = config.method();
    let adaptive = config.adaptive.unwrap_or(true);
    config
        .sweep_values()
        .par_iter()
        .map(|&vs| {
            let noise = base_noise.with_varsigma(vs)?;
            let plan = plan_at(config, &gains, &noise, pt, adaptive)?;
            let mi = mutual_information(&plan, &gains, &noise, method)?;
            let lb = mi_lower_bound(&plan, &gains, &noise)?;
            Ok(vec![vs, mi.value, lb.value])
        })
        .collect()
}

fn precode_compare(config: &ExperimentConfig) -> Result<Vec<Vec<f64>>> {
    let gains = config.scenario.as_ref().expect("validated").gains()?;
    let noise = config.noise()?;
    let snrs = config.sweep_values();
    let top = snrs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let base = plan_at(config, &gains, &noise, snr_power(top, &gains, &noise)?, config.adaptive.unwrap_or(true))?;
    let solver = SolverConfig { seed: config.seed.unwrap_or(0), ..SolverConfig::default() };
    let method = config.method();
    // Without signal-dependent noise the optimum is scale-free, so one
    // solve serves the whole sweep.
    let shared: Option<PrecodingWeights> =
        if noise.varsigma_sq == 0.0 { Some(optimize_precoding(&base, &gains, &noise, &solver)?.weights) } else { None };
    snrs.iter()
        .map(|&db| {
            let plan = base.with_power(snr_power(db, &gains, &noise)?)?;
            let weights = match &shared {
                Some(w) => w.clone(),
                None => optimize_precoding(&plan, &gains, &noise, &solver)?.weights,
            };
            let mi = mutual_information(&plan, &gains, &noise, method)?;
            let lb = mi_lower_bound(&plan, &gains, &noise)?;
            let lbp = mi_lower_bound_precoded(&plan, &gains, &noise, &weights)?;
            Ok(vec![db, mi.value, lb.value, lbp.value])
        })
        .collect()
}

fn ber_sweep(config: &ExperimentConfig) -> Result<Vec<Vec<f64>>> {
    let gains = config.scenario.as_ref().expect("validated").gains()?;
    let noise = config.noise()?;
    let powers = config.sweep_values();
    let top = powers.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let adaptive = plan_at(config, &gains, &noise, dbm_to_watts(top), true)?;
    let fixed = plan_at(config, &gains, &noise, dbm_to_watts(top), false)?;
    let options = config.ber_options();
    powers
        .iter()
        .map(|&dbm| {
            let pt = dbm_to_watts(dbm);
            let a = ber_monte_carlo_with(&adaptive.with_power(pt)?, &gains, &noise, &options)?;
            let f = ber_monte_carlo_with(&fixed.with_power(pt)?, &gains, &noise, &options)?;
            Ok(vec![dbm, a.ber, f.ber, a.ci95_halfwidth, f.ci95_halfwidth])
        })
        .collect()
}

fn ber_plane(config: &ExperimentConfig) -> Result<Vec<Vec<f64>>> {
    let scenario = config.scenario.as_ref().expect("validated").room()?;
    let noise = config.noise()?;
    let s = config.sweep.as_ref().expect("validated");
    let (x, y) = (s.x_m.expect("validated"), s.y_m.expect("validated"));
    let grid = PlaneGrid::uniform(
        (x[0], x[1]),
        (y[0], y[1]),
        s.nx.expect("validated"),
        s.ny.expect("validated"),
        s.height_m.unwrap_or(DEFAULT_PD_HEIGHT_M),
    );
    let params = config.params(dbm_to_watts(config.pt_dbm.expect("validated")));
    let points =
        ber_plane_sweep(&scenario, &grid, &params, &noise, &config.ber_options(), config.adaptive.unwrap_or(true))?;
    Ok(points.iter().map(|p| vec![p.x, p.y, p.result.ber, p.result.ci95_halfwidth]).collect())
}

/// Nine significant digits, fixed notation for moderate exponents and
/// scientific otherwise (like C's `%.9g`).
pub fn format_number(v: f64) -> String {
    if v.is_nan() {
        return "nan".into();
    }
    if v.is_infinite() {
        return if v > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if v == 0.0 {
        return "0".into();
    }
    let sci = format!("{v:.8e}");
    let (mantissa, exp) = sci.split_once('e').expect("scientific notation");
    let exp: i32 = exp.parse().expect("exponent");
    if (-4..9).contains(&exp) {
        let mut s = String::new();
        write!(s, "{:.*}", (8 - exp) as usize, v).expect("write to string");
        trim_zeros(s)
    } else {
        let m = trim_zeros(mantissa.to_string());
        format!("{m}e{}{:02}", if exp < 0 { '-' } else { '+' }, exp.abs())
    }
}

fn trim_zeros(s: String) -> String {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn number_format_matches_printf_g9() {
        // Reference strings from C's printf("%.9g").
        let cases = [
            (0.0, "0"),
            (1.0, "1"),
            (-2.5, "-2.5"),
            (0.1, "0.1"),
            (1.0 / 3.0, "0.333333333"),
            (123456789.0, "123456789"),
            (1234567890.0, "1.23456789e+09"),
            (0.0001234, "0.0001234"),
            (0.00001234, "1.234e-05"),
            (3.984e-14, "3.984e-14"),
            (9.9999999999, "10"),
            (4.735436, "4.735436"),
        ];
        for (v, s) in cases {
            assert_eq!(format_number(v), s, "{v}");
        }
    }

    fn minimal(kind: &str, sweep: &str) -> String {
        format!(r#"{{"kind": "{kind}", "scenario": {{"gains": [0.2e-5, 0.5e-5, 1.0e-5]}}, "k": 3, "sweep": {sweep}}}"#)
    }

    #[test]
    fn missing_sigma_is_one_diagnostic() {
        let text = r#"{"kind": "mi-sweep", "scenario": {"gains": [1e-5, 2e-5]}, "k": 3, "noise": {"varsigma": 1},
            "sweep": {"variable": "snr_db", "start": 0, "stop": 10, "points": 3}}"#;
        let d = validate(&parse_config(text).unwrap());
        assert_eq!(d.len(), 1, "{d:?}");
        assert_eq!(d[0].field, "noise.sigma_sq_dbm");
    }

    #[test]
    fn single_led_only_for_plane() {
        let text = r#"{"kind": "mi-sweep", "scenario": {"leds": 1}, "k": 3,
            "sweep": {"variable": "snr_db", "start": 0, "stop": 10, "points": 3}}"#;
        let d = validate(&parse_config(text).unwrap());
        assert!(d.iter().any(|d| d.message.contains("single LED")), "{d:?}");
    }

    #[test]
    fn default_plane_config_is_valid() {
        let text = r#"{"kind": "ber-plane", "scenario": {"leds": 1}, "k": 2, "pt_dbm": -10,
            "sweep": {"variable": "pd_grid", "x_m": [0, 5], "y_m": [0, 4], "nx": 3, "ny": 3}}"#;
        assert!(validate(&parse_config(text).unwrap()).is_empty());
    }

    #[test]
    fn infeasible_k_names_q() {
        let text = minimal("mi-sweep", r#"{"variable": "snr_db", "start": 0, "stop": 1, "points": 2}"#)
            .replace("\"k\": 3", "\"k\": 1");
        let d = validate(&parse_config(&text).unwrap());
        assert!(d.iter().any(|d| d.field == "k" && d.message.contains("q ≥ 1")), "{d:?}");
        assert!(matches!(run(&parse_config(&text).unwrap()), Err(Error::Config(_))));
    }

    #[test]
    fn reports_every_problem() {
        let text =
            r#"{"kind": "ber-sweep", "scenario": {}, "noise": {}, "sweep": {"variable": "snr_db", "points": 0}}"#;
        let d = validate(&parse_config(text).unwrap());
        let fields: Vec<&str> = d.iter().map(|d| d.field.as_str()).collect();
        for f in ["scenario", "k", "noise.sigma_sq_dbm", "sweep.variable", "sweep.start", "sweep.stop", "sweep.points"]
        {
            assert!(fields.contains(&f), "{f} not in {fields:?}");
        }
    }

    #[test]
    fn syntax_errors_carry_position() {
        let e = parse_config("{\n  \"kind\": \"mi-sweep\",\n  \"bogus\": 1\n}").unwrap_err();
        assert!(e.field.starts_with("line 3"), "{e}");
    }

    #[test]
    fn round_trip() {
        let text = minimal("mi-sweep", r#"{"variable": "snr_db", "start": -10, "stop": 50, "points": 61}"#);
        let c = parse_config(&text).unwrap();
        assert_eq!(parse_config(&c.to_json()).unwrap(), c);
    }

    #[test]
    fn mi_sweep_rows_and_limit() {
        let text = r#"{"kind": "mi-sweep", "scenario": {"gains": [0.17e-5, 0.46e-5, 0.919e-5, 0.959e-5, 1.0e-5]}, "k": 5,
            "sweep": {"variable": "snr_db", "start": -10, "stop": 50, "points": 61}}"#;
        let csv = run(&parse_config(text).unwrap()).unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "snr_db,mi_exact,mi_lower,mi_hi_limit,mi_lo_limit");
        assert_eq!(lines.len(), 62);
        let last: Vec<f64> = lines[61].split(',').map(|x| x.parse().unwrap()).collect();
        assert_eq!(last[0], 50.0);
        assert!((last[1] - last[3]).abs() < 0.02, "{last:?}");
    }
}
