//! How far apart optimal maps are compared with how far apart their targets are.
//!
//! For the cell family every quantity has a closed form. For the rotating families the map
//! distance is measured by Monte Carlo and compared with the sector-mass lower bound.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::constructions::{BlowupInstance, CellInstance};
use crate::discrete_ot::{check_exponent, wasserstein_cell_perturbation, wasserstein_rotating};
use crate::error::{Error, Result};
use crate::geometry::dist2;
use crate::mc::{self, Allocation, Estimate, Method};
use crate::measures::{self, SourceDensity};
use crate::transport_maps::{OracleKey, RotatingOracle, TransportMap};

const PURPOSE_L2: u16 = 0x0301;
const PURPOSE_WEDGE: u16 = 0x0302;

/// Largest rotation angle for which the sector lower bound is asserted.
pub const VALIDATED_THETA: f64 = 0.1;
pub const MIN_FIT_POINTS: usize = 5;
pub const DEFAULT_SAMPLES: usize = 1_000_000;
pub const SMALL_THETA_SAMPLES: usize = 10_000_000;
/// Angles at or below this use [`SMALL_THETA_SAMPLES`] by default.
pub const SMALL_THETA: f64 = 1e-5;
/// Largest cell index examined by the cell witness search.
pub const MAX_WITNESS_INDEX: usize = 1_000;
/// Standard errors subtracted before a Monte Carlo value counts as exceeding a bound.
pub const BOUND_SIGMAS: f64 = 3.0;
const WITNESS_STEPS_PER_DECADE: f64 = 4.0;
const WITNESS_THETA_FLOOR: f64 = 1e-300;
const WITNESS_MC_PROBES: usize = 24;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    Rotating,
    Cell,
    PolyBlowup,
    Control,
}

impl Family {
    pub fn as_str(self) -> &'static str {
        match self {
            Family::Rotating => "rotating",
            Family::Cell => "cell",
            Family::PolyBlowup => "polyblowup",
            Family::Control => "control",
        }
    }

    /// Families whose parameter is a rotation angle.
    pub fn is_rotating(self) -> bool {
        !matches!(self, Family::Cell)
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rotating" => Ok(Family::Rotating),
            "cell" => Ok(Family::Cell),
            "polyblowup" | "poly-blowup" => Ok(Family::PolyBlowup),
            "control" => Ok(Family::Control),
            other => Err(Error::InvalidParameter(format!("unknown family {other:?}; expected rotating, cell, polyblowup or control"))),
        }
    }
}

/// A source density together with the target family it is paired with.
#[derive(Debug, Clone)]
pub struct Experiment {
    family: Family,
    density: Arc<SourceDensity>,
    radius: f64,
    cone_fraction: f64,
    cells: Option<Arc<CellInstance>>,
}

impl Experiment {
    /// Log blow-up source with rotating two-atom targets of radius `radius`.
    pub fn rotating(d: usize, radius: f64) -> Result<Self> {
        Ok(Self::from_blowup(Family::Rotating, BlowupInstance::log_blowup(d, radius)?))
    }

    pub fn poly_blowup(d: usize, radius: f64, delta: f64) -> Result<Self> {
        Ok(Self::from_blowup(Family::PolyBlowup, BlowupInstance::poly_blowup(d, radius, delta)?))
    }

    /// Uniform density on the unit ball with rotating targets.
    pub fn control(d: usize, radius: f64) -> Result<Self> {
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(Error::InvalidParameter(format!("target radius must be positive, got {radius}")));
        }
        Ok(Self { family: Family::Control, density: Arc::new(SourceDensity::uniform_ball(d)?), radius, cone_fraction: 0.0, cells: None })
    }

    pub fn cell(inst: Arc<CellInstance>) -> Self {
        let density = Arc::new(SourceDensity::uniform_cells(inst.clone()));
        Self { family: Family::Cell, density, radius: 0.0, cone_fraction: 0.0, cells: Some(inst) }
    }

    fn from_blowup(family: Family, b: BlowupInstance) -> Self {
        Self { family, density: b.density, radius: b.radius, cone_fraction: b.cone_fraction, cells: None }
    }

    pub fn family(&self) -> Family {
        self.family
    }

    pub fn density(&self) -> &Arc<SourceDensity> {
        &self.density
    }

    pub fn dim(&self) -> usize {
        self.density.dim()
    }

    /// Target radius `R` of the rotating families; zero for the cell family.
    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn cells(&self) -> Option<&Arc<CellInstance>> {
        self.cells.as_ref()
    }

    fn cell_instance(&self) -> Result<&Arc<CellInstance>> {
        self.cells.as_ref().ok_or_else(|| Error::Unsupported(format!("{} experiments have no cell instance", self.family)))
    }

    /// Check a sweep grid: angles in `(0, VALIDATED_THETA]`, or integer cell indices in `1..=N`.
    pub fn check_parameter(&self, t: f64) -> Result<()> {
        if self.family.is_rotating() {
            if !(t > 0.0 && t <= VALIDATED_THETA) {
                return Err(Error::Domain(format!("rotation angle {t} outside the validated range 0 < theta <= {VALIDATED_THETA}")));
            }
            Ok(())
        } else {
            cell_index(t).and_then(|i| self.cell_instance()?.check_index(i))
        }
    }
}

fn cell_index(t: f64) -> Result<usize> {
    if t >= 1.0 && t.fract() == 0.0 && t < usize::MAX as f64 {
        Ok(t as usize)
    } else {
        Err(Error::InvalidParameter(format!("cell parameter {t} is not a positive integer")))
    }
}

/// Sample budget for Monte Carlo map distances.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Budget {
    pub samples: usize,
    /// Used instead of `samples` for angles at or below [`SMALL_THETA`].
    pub small_theta_samples: usize,
}

impl Default for Budget {
    fn default() -> Self {
        Self { samples: DEFAULT_SAMPLES, small_theta_samples: SMALL_THETA_SAMPLES }
    }
}

impl Budget {
    pub fn uniform(samples: usize) -> Self {
        Self { samples, small_theta_samples: samples }
    }

    pub fn for_theta(&self, theta: f64) -> usize {
        if theta <= SMALL_THETA {
            self.small_theta_samples
        } else {
            self.samples
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReferenceKind {
    /// The measured `‖ΔT‖²` must be at least this value (up to [`BOUND_SIGMAS`] standard errors).
    LowerBound,
    /// The measured `‖ΔT‖²` must agree with this value within [`BOUND_SIGMAS`] standard errors.
    Exact,
}

/// A value that the squared map distance of a record is checked against.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Reference {
    pub kind: ReferenceKind,
    pub value: f64,
    pub holds: bool,
}

impl Reference {
    fn check(kind: ReferenceKind, value: f64, measured: &Estimate) -> Self {
        let holds = match kind {
            ReferenceKind::LowerBound => measured.value >= value - BOUND_SIGMAS * measured.se,
            ReferenceKind::Exact => measured.within(value, BOUND_SIGMAS),
        };
        Self { kind, value, holds }
    }
}

/// `‖ΔT‖ / W_p^α`, with a closed-form lower bound when one is known.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ratio {
    pub alpha: f64,
    pub value: f64,
    pub lower_bound: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityRecord {
    pub family: Family,
    /// Rotation angle θ, or cell index i.
    pub parameter: f64,
    pub p: f64,
    pub w_p: Estimate,
    /// `‖T_μ − T_ν‖_{L²(ρ)}`.
    pub l2: Estimate,
    pub l2_sq: Estimate,
    pub reference: Option<Reference>,
    pub ratios: Vec<Ratio>,
    /// Seed of the Monte Carlo run, if any number was estimated.
    pub seed: Option<u64>,
}

impl StabilityRecord {
    pub fn ratio(&self, alpha: f64) -> Option<f64> {
        self.ratios.iter().find(|r| r.alpha == alpha).map(|r| r.value)
    }

    /// All numbers finite and nonnegative, and every Monte Carlo number carries a seed.
    pub fn check(&self) -> Result<()> {
        let mut values = vec![self.parameter, self.p, self.w_p.value, self.w_p.se, self.l2.value, self.l2.se, self.l2_sq.value, self.l2_sq.se];
        values.extend(self.ratios.iter().flat_map(|r| [r.alpha, r.value]));
        values.extend(self.ratios.iter().filter_map(|r| r.lower_bound));
        values.extend(self.reference.iter().map(|r| r.value));
        if let Some(v) = values.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::Domain(format!("record at parameter {} holds the value {v}", self.parameter)));
        }
        let estimated = [self.w_p, self.l2, self.l2_sq].iter().any(|e| matches!(e.method, Method::MonteCarlo { .. }));
        if estimated && self.seed.is_none() {
            return Err(Error::InvalidParameter(format!("record at parameter {} has estimates but no seed", self.parameter)));
        }
        Ok(())
    }
}

/// Least-squares line through `(log W_p, log ‖ΔT‖)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HolderFit {
    pub slope: f64,
    pub intercept: f64,
    /// Root mean square of the log residuals.
    pub residual: f64,
    pub points: usize,
    pub parameter_min: f64,
    pub parameter_max: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WitnessBasis {
    /// Exact values of both sides.
    ClosedForm,
    /// The closed-form lower bound on `‖ΔT‖` already exceeds `C·W_p^α`.
    LowerBound,
    /// The Monte Carlo estimate minus [`BOUND_SIGMAS`] standard errors exceeds `C·W_p^α`.
    MonteCarlo,
}

/// A parameter at which `‖ΔT‖ > C·W_p^α`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Witness {
    pub family: Family,
    pub c: f64,
    pub alpha: f64,
    pub p: f64,
    pub parameter: f64,
    pub w_p: f64,
    pub l2: Estimate,
    pub ratio: f64,
    pub basis: WitnessBasis,
    /// Size of the cell instance the witness was evaluated on.
    pub instance_cells: Option<usize>,
    pub seed: Option<u64>,
}

/// `‖T_μ − T_{ν_i}‖² = σ_i(2r_i² + 4w_i²)`.
pub fn l2_cell_sq(inst: &CellInstance, i: usize) -> Result<f64> {
    inst.check_index(i)?;
    let (r, w) = (inst.r(i), inst.w(i));
    Ok(inst.sigma(i) * (2.0 * r * r + 4.0 * w * w))
}

/// Lower bound `4w_i² r_i^{−2α} (2σ_i)^{−2α/p} σ_i` on the squared ratio of the cell family.
pub fn cell_ratio_lower_bound_sq(inst: &CellInstance, i: usize, p: f64, alpha: f64) -> Result<f64> {
    inst.check_index(i)?;
    check_exponent(p)?;
    let (r, w, s) = (inst.r(i), inst.w(i), inst.sigma(i));
    Ok(4.0 * w * w * r.powf(-2.0 * alpha) * (2.0 * s).powf(-2.0 * alpha / p) * s)
}

/// `‖T_{μ_0} − T_{μ_θ}‖²` when each of the two wedges has mass `wedge`.
pub fn rotating_l2_sq_from_wedge(theta: f64, radius: f64, wedge: f64) -> f64 {
    let r2 = radius * radius;
    let (s, c) = (0.5 * theta).sin_cos();
    8.0 * r2 * c * c * wedge + 4.0 * r2 * s * s * (1.0 - 2.0 * wedge)
}

/// Exact squared map distance for the control family, whose wedges have mass `θ/(2π)`.
pub fn control_l2_sq(theta: f64, radius: f64) -> f64 {
    rotating_l2_sq_from_wedge(theta, radius, theta / (2.0 * PI))
}

/// Closed-form lower bound `R²·ρ(sector of radius θ/4 at A′)` on `‖T_{μ_0} − T_{μ_θ}‖²`.
pub fn rotating_lower_bound_sq(exp: &Experiment, theta: f64) -> Result<f64> {
    if !matches!(exp.family, Family::Rotating | Family::PolyBlowup) {
        return Err(Error::Unsupported(format!("no sector lower bound for the {} family", exp.family)));
    }
    if !(theta > 0.0 && theta <= VALIDATED_THETA) {
        return Err(Error::Domain(format!("the sector bound is asserted only for 0 < theta <= {VALIDATED_THETA}, got {theta}")));
    }
    let m = measures::sector_mass(&exp.density, theta / 4.0, exp.cone_fraction)?;
    Ok(exp.radius * exp.radius * m.value)
}

/// Monte Carlo estimate of `∫|map1(x) − map2(x)|² dρ(x)`.
pub fn l2_map_distance_sq(map1: &dyn TransportMap, map2: &dyn TransportMap, density: &SourceDensity, samples: usize, seed: u64) -> Result<Estimate> {
    mc::stratified_mean(density, samples, seed, PURPOSE_L2, Allocation::Equal, |x| {
        let (a, b) = (map1.image(x)?, map2.image(x)?);
        Ok(dist2(a.coords(), b.coords()))
    })
}

fn same_instance(a: &Arc<CellInstance>, b: &Arc<CellInstance>) -> bool {
    Arc::ptr_eq(a, b) || (a.d() == b.d() && a.sigmas() == b.sigmas() && (1..=a.n()).all(|i| a.r(i) == b.r(i) && a.w(i) == b.w(i) && a.u(i) == b.u(i)))
}

/// Exact `‖map1 − map2‖²` for the oracle pairs where it is known.
pub fn l2_closed_form_sq(map1: &dyn TransportMap, map2: &dyn TransportMap, density: &SourceDensity) -> Result<f64> {
    let unsupported = || Error::Unsupported("no closed form for this pair of maps and density".into());
    let (a, b) = (map1.oracle_key().ok_or_else(unsupported)?, map2.oracle_key().ok_or_else(unsupported)?);
    let on_cells = |inst: &Arc<CellInstance>| density.cell_instance().is_some_and(|d| same_instance(d, inst));
    match (&a, &b) {
        (OracleKey::Rotating { theta: t1, radius: r1 }, OracleKey::Rotating { theta: t2, radius: r2 }) if t1 == t2 && r1 == r2 => Ok(0.0),
        (OracleKey::Cell(x), OracleKey::Cell(y)) if same_instance(x, y) && on_cells(x) => Ok(0.0),
        (OracleKey::Cell(x), OracleKey::Perturbed(y, i)) | (OracleKey::Perturbed(y, i), OracleKey::Cell(x)) if same_instance(x, y) && on_cells(x) => l2_cell_sq(x, *i),
        (OracleKey::Perturbed(x, i), OracleKey::Perturbed(y, j)) if same_instance(x, y) && on_cells(x) => {
            if i == j {
                Ok(0.0)
            } else {
                Ok(l2_cell_sq(x, *i)? + l2_cell_sq(x, *j)?)
            }
        }
        _ => Err(unsupported()),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "kebab-case")]
pub enum L2Method {
    ClosedForm,
    MonteCarlo { samples: usize, seed: u64 },
}

/// `‖map1 − map2‖_{L²(ρ)}` with a standard error.
pub fn l2_map_distance(map1: &dyn TransportMap, map2: &dyn TransportMap, density: &SourceDensity, method: L2Method) -> Result<Estimate> {
    match method {
        L2Method::ClosedForm => Ok(Estimate::exact(l2_closed_form_sq(map1, map2, density)?.sqrt())),
        L2Method::MonteCarlo { samples, seed } => Ok(l2_map_distance_sq(map1, map2, density, samples, seed)?.sqrt()),
    }
}

/// Monte Carlo `ρ({⟨x, B_0⟩ > 0 > ⟨x, B_θ⟩})`.
pub fn wedge_mass(theta: f64, density: &SourceDensity, samples: usize, seed: u64) -> Result<Estimate> {
    if !(theta > 0.0 && theta <= PI / 2.0) {
        return Err(Error::Domain(format!("wedge angle must lie in (0, pi/2], got {theta}")));
    }
    let (s, c) = theta.sin_cos();
    mc::stratified_mean(density, samples, seed, PURPOSE_WEDGE, Allocation::Equal, |x| Ok(if x[1] > 0.0 && x[0] * s + x[1] * c < 0.0 { 1.0 } else { 0.0 }))
}

/// Map distance at one rotation angle, with the matching bound check.
fn rotating_record(exp: &Experiment, theta: f64, p: f64, alphas: &[f64], samples: usize, seed: u64) -> Result<StabilityRecord> {
    let d = exp.dim();
    let w_p = Estimate::exact(wasserstein_rotating(theta, exp.radius)?);
    let base = RotatingOracle::new(0.0, exp.radius, d)?;
    let turned = RotatingOracle::new(theta, exp.radius, d)?;
    let l2_sq = l2_map_distance_sq(&base, &turned, &exp.density, samples, seed)?;
    let l2 = l2_sq.sqrt();
    let (reference, lower) = match exp.family {
        Family::Control => (Reference::check(ReferenceKind::Exact, control_l2_sq(theta, exp.radius), &l2_sq), None),
        _ => {
            let lb = rotating_lower_bound_sq(exp, theta)?;
            (Reference::check(ReferenceKind::LowerBound, lb, &l2_sq), Some(lb.sqrt()))
        }
    };
    let ratios = alphas
        .iter()
        .map(|&alpha| {
            let scale = w_p.value.powf(alpha);
            Ratio { alpha, value: l2.value / scale, lower_bound: lower.map(|l| l / scale) }
        })
        .collect();
    Ok(StabilityRecord { family: exp.family, parameter: theta, p, w_p, l2, l2_sq, reference: Some(reference), ratios, seed: Some(seed) })
}

fn cell_record(inst: &CellInstance, i: usize, p: f64, alphas: &[f64]) -> Result<StabilityRecord> {
    let w_p = Estimate::exact(wasserstein_cell_perturbation(inst, i, p)?);
    let l2_sq = Estimate::exact(l2_cell_sq(inst, i)?);
    let l2 = l2_sq.sqrt();
    let ratios = alphas
        .iter()
        .map(|&alpha| Ok(Ratio { alpha, value: l2.value / w_p.value.powf(alpha), lower_bound: Some(cell_ratio_lower_bound_sq(inst, i, p, alpha)?.sqrt()) }))
        .collect::<Result<_>>()?;
    Ok(StabilityRecord { family: Family::Cell, parameter: i as f64, p, w_p, l2, l2_sq, reference: None, ratios, seed: None })
}

/// One record per grid point. Angle records use the seed `derive_seed(seed, k)` for grid position `k`.
pub fn sweep(exp: &Experiment, grid: &[f64], p: f64, alphas: &[f64], budget: Budget, seed: u64) -> Result<Vec<StabilityRecord>> {
    check_exponent(p)?;
    if grid.is_empty() {
        return Err(Error::InvalidParameter("empty parameter grid".into()));
    }
    grid.iter().try_for_each(|&t| exp.check_parameter(t))?;
    if let Some(a) = alphas.iter().find(|a| !(a.is_finite() && **a > 0.0)) {
        return Err(Error::Domain(format!("exponent alpha must be positive, got {a}")));
    }
    if exp.family.is_rotating() && budget.samples.min(budget.small_theta_samples) < 2 {
        return Err(Error::InvalidParameter("Monte Carlo budget must be at least 2 samples".into()));
    }
    grid.par_iter()
        .enumerate()
        .map(|(k, &t)| {
            let rec = match exp.family {
                Family::Cell => cell_record(exp.cell_instance()?, t as usize, p, alphas)?,
                _ => rotating_record(exp, t, p, alphas, budget.for_theta(t), mc::derive_seed(seed, k as u64))?,
            };
            rec.check()?;
            Ok(rec)
        })
        .collect()
}

/// Ordinary least squares `y = slope·x + intercept`; returns `(slope, intercept, rms residual)`.
pub fn fit_line(points: &[(f64, f64)]) -> Result<(f64, f64, f64)> {
    if points.len() < MIN_FIT_POINTS {
        return Err(Error::Fit(format!("{} points, need at least {MIN_FIT_POINTS}", points.len())));
    }
    if let Some(p) = points.iter().find(|p| !(p.0.is_finite() && p.1.is_finite())) {
        return Err(Error::Fit(format!("non-finite point {p:?}")));
    }
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let spread = points.iter().map(|p| p.0.abs()).fold(1.0, f64::max);
    if sxx <= (1e-12 * spread).powi(2) * n {
        return Err(Error::Fit("abscissae are all equal".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rss: f64 = points.iter().map(|p| (p.1 - slope * p.0 - intercept).powi(2)).sum();
    Ok((slope, intercept, (rss / n).sqrt()))
}

/// Slope of `log ‖ΔT‖` against `log W_p` over the records.
pub fn fit_holder(records: &[StabilityRecord]) -> Result<HolderFit> {
    if let Some(r) = records.iter().find(|r| !(r.w_p.value > 0.0 && r.l2.value > 0.0)) {
        return Err(Error::Fit(format!("record at parameter {} has a zero distance", r.parameter)));
    }
    let pts: Vec<(f64, f64)> = records.iter().map(|r| (r.w_p.value.ln(), r.l2.value.ln())).collect();
    let (slope, intercept, residual) = fit_line(&pts)?;
    let (lo, hi) = records.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), r| (lo.min(r.parameter), hi.max(r.parameter)));
    Ok(HolderFit { slope, intercept, residual, points: records.len(), parameter_min: lo, parameter_max: hi })
}

/// `points` angles spaced evenly in `log θ` over `[lo, hi]`.
pub fn log_grid(lo: f64, hi: f64, points: usize) -> Result<Vec<f64>> {
    if !(lo > 0.0 && hi >= lo && points >= 1) {
        return Err(Error::InvalidParameter(format!("bad log grid [{lo}, {hi}] with {points} points")));
    }
    if points == 1 {
        return Ok(vec![lo]);
    }
    let (a, b) = (lo.log10(), hi.log10());
    let mut g: Vec<f64> = (0..points).map(|k| 10f64.powf(a + (b - a) * k as f64 / (points - 1) as f64)).collect();
    g[0] = lo;
    g[points - 1] = hi;
    Ok(g)
}

/// Fitted slope of `log √(lower bound)` against `log W_p` on a log grid over `[lo, hi]`.
pub fn lower_bound_slope(exp: &Experiment, lo: f64, hi: f64, points: usize) -> Result<f64> {
    let pts = log_grid(lo, hi, points)?
        .into_iter()
        .map(|t| Ok((wasserstein_rotating(t, exp.radius)?.ln(), 0.5 * rotating_lower_bound_sq(exp, t)?.ln())))
        .collect::<Result<Vec<_>>>()?;
    Ok(fit_line(&pts)?.0)
}

/// Threshold `p/(2(p+1))` above which the cell family violates every Hölder bound.
pub fn cell_alpha_threshold(p: f64) -> f64 {
    p / (2.0 * (p + 1.0))
}

/// Settings of the Monte Carlo probes used by [`find_witness`] on the rotating families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WitnessSearch {
    pub samples: usize,
    pub seed: u64,
}

impl Default for WitnessSearch {
    fn default() -> Self {
        Self { samples: DEFAULT_SAMPLES, seed: 0 }
    }
}

/// First parameter in scan order (cell index upward, angle downward from [`VALIDATED_THETA`]
/// in quarter decades) at which `‖ΔT‖ > C·W_p^α`.
pub fn find_witness(exp: &Experiment, c: f64, alpha: f64, p: f64, search: WitnessSearch) -> Result<Witness> {
    if !(c > 0.0 && c.is_finite()) {
        return Err(Error::Domain(format!("constant C must be positive, got {c}")));
    }
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::Domain(format!("exponent alpha must be positive, got {alpha}")));
    }
    check_exponent(p)?;
    match exp.family {
        Family::Cell => cell_witness(exp.cell_instance()?, c, alpha, p),
        _ => rotating_witness(exp, c, alpha, p, search),
    }
}

/// `(ln ‖ΔT‖, ln W_p)` for cell `i` of an instance.
fn cell_logs(inst: &CellInstance, i: usize, p: f64) -> Result<(f64, f64)> {
    Ok((0.5 * l2_cell_sq(inst, i)?.ln(), wasserstein_cell_perturbation(inst, i, p)?.ln()))
}

/// The same logs for the untruncated standard sequences, which stay finite for any `i`.
fn profile_logs(inst: &CellInstance, i: usize, p: f64) -> (f64, f64) {
    let fi = i as f64;
    let ln_r = inst.c0().ln() - fi * std::f64::consts::LN_2;
    let ln_w = (inst.c0() * inst.k1()).ln() - 2.0 * fi.ln();
    let ln_sigma = ln_w + ln_r;
    let ln_l2_sq = ln_sigma + (4.0f64).ln() + 2.0 * ln_w + (0.5 * (2.0 * (ln_r - ln_w)).exp()).ln_1p();
    (0.5 * ln_l2_sq, ln_r + (std::f64::consts::LN_2 + ln_sigma) / p)
}

fn cell_witness(inst: &Arc<CellInstance>, c: f64, alpha: f64, p: f64) -> Result<Witness> {
    let threshold = cell_alpha_threshold(p);
    if alpha <= threshold {
        return Err(Error::NoWitnessGuarantee { alpha, threshold });
    }
    let exceeds = |(l2, wp): (f64, f64)| l2 - alpha * wp > c.ln();
    let make = |inst: &CellInstance, i: usize| -> Result<Witness> {
        let w_p = wasserstein_cell_perturbation(inst, i, p)?;
        let l2 = l2_cell_sq(inst, i)?.sqrt();
        Ok(Witness {
            family: Family::Cell,
            c,
            alpha,
            p,
            parameter: i as f64,
            w_p,
            l2: Estimate::exact(l2),
            ratio: l2 / w_p.powf(alpha),
            basis: WitnessBasis::ClosedForm,
            instance_cells: Some(inst.n()),
            seed: None,
        })
    };
    for i in 1..=inst.n() {
        if exceeds(cell_logs(inst, i, p)?) {
            return make(inst, i);
        }
    }
    let start = (inst.n() + 1..=MAX_WITNESS_INDEX)
        .find(|&i| exceeds(profile_logs(inst, i, p)))
        .ok_or_else(|| Error::WitnessNotFound(format!("ratio stays below C = {c} up to cell {MAX_WITNESS_INDEX}")))?;
    for n in start..=MAX_WITNESS_INDEX {
        let big = CellInstance::choose_sequences(n, inst.d())?;
        if let Some(i) = (1..=n).find(|&i| cell_logs(&big, i, p).map(exceeds).unwrap_or(false)) {
            return make(&big, i);
        }
    }
    Err(Error::WitnessNotFound(format!("ratio stays below C = {c} up to cell {MAX_WITNESS_INDEX}")))
}

fn rotating_witness(exp: &Experiment, c: f64, alpha: f64, p: f64, search: WitnessSearch) -> Result<Witness> {
    let d = exp.dim();
    let base = RotatingOracle::new(0.0, exp.radius, d)?;
    let mut probes = 0;
    for k in 0.. {
        let theta = VALIDATED_THETA * 10f64.powf(-(k as f64) / WITNESS_STEPS_PER_DECADE);
        if theta < WITNESS_THETA_FLOOR {
            break;
        }
        let w_p = wasserstein_rotating(theta, exp.radius)?;
        let bar = c * w_p.powf(alpha);
        let seed = mc::derive_seed(search.seed, k);
        let witness = |l2: Estimate, basis| Witness { family: exp.family, c, alpha, p, parameter: theta, w_p, l2, ratio: l2.value / w_p.powf(alpha), basis, instance_cells: None, seed: Some(seed) };
        if exp.family == Family::Control {
            let l2 = control_l2_sq(theta, exp.radius).sqrt();
            if l2 > bar {
                return Ok(witness(Estimate::exact(l2), WitnessBasis::ClosedForm));
            }
            continue;
        }
        let certified = rotating_lower_bound_sq(exp, theta)?.sqrt() > bar;
        if probes < WITNESS_MC_PROBES || certified {
            probes += 1;
            let turned = RotatingOracle::new(theta, exp.radius, d)?;
            let sq = l2_map_distance_sq(&base, &turned, &exp.density, search.samples, seed)?;
            if sq.value - BOUND_SIGMAS * sq.se > bar * bar {
                return Ok(witness(sq.sqrt(), WitnessBasis::MonteCarlo));
            }
            if certified {
                return Ok(witness(sq.sqrt(), WitnessBasis::LowerBound));
            }
        }
    }
    Err(Error::WitnessNotFound(format!("no angle down to {WITNESS_THETA_FLOOR:e} exceeds C = {c}")))
}
