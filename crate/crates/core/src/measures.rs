//! Source densities: radial profiles, normalization, exact samplers and mass queries.
//!
//! For the blow-up kinds the density is `c₀ h(dist(x, {A, A′}))` on the unit ball
//! with `A = e₁`. In polar coordinates `x = A′ + s u` the half of the ball that is
//! closer to `A′` is exactly `{u₁ > 0, 0 < s < s_max(u₁)}` with
//! `s_max(c) = min(2c, 1/c)`, so every mass reduces to a one-dimensional integral
//! over the direction cosine `u₁` of the closed-form radial mass `G(s) = ∫₀ˢ h(t) t^{d−1} dt`.

use std::f64::consts::{E, PI, SQRT_2};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::constructions::CellInstance;
use crate::error::{Error, Result};
use crate::geometry::{self, check_dim, Point, Sign};
use crate::mc::Method;

/// Upper limit on the reported relative error of the normalization constant.
pub const NORMALIZATION_RTOL: f64 = 2e-3;
/// Smallest evaluation budget accepted by [`normalize`].
pub const MIN_QUADRATURE_BUDGET: usize = 100_000;
/// Radial draws never go below `e^{-700}`, which keeps sampled offsets from `A′` representable.
const LOG_U_FLOOR: f64 = 1.0 / 700.0;
const MIN_ACCEPTANCE: f64 = 1e-3;
const QUAD_ABS_TOL: f64 = 1e-13;

#[derive(Debug, Clone)]
pub enum DensityKind {
    LogBlowup,
    PolyBlowup { delta: f64 },
    UniformBall,
    UniformCellUnion(Arc<CellInstance>),
}

impl DensityKind {
    pub fn name(&self) -> &'static str {
        match self {
            DensityKind::LogBlowup => "log-blowup",
            DensityKind::PolyBlowup { .. } => "poly-blowup",
            DensityKind::UniformBall => "uniform-ball",
            DensityKind::UniformCellUnion(_) => "uniform-cell-union",
        }
    }
}

/// JSON description of a density, used by experiment configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DensitySpec {
    LogBlowup { d: usize },
    PolyBlowup { d: usize, delta: f64 },
    UniformBall { d: usize },
    UniformCellUnion { d: usize, n: usize },
}

impl DensitySpec {
    pub fn build(&self) -> Result<SourceDensity> {
        match *self {
            DensitySpec::LogBlowup { d } => SourceDensity::log_blowup(d),
            DensitySpec::PolyBlowup { d, delta } => SourceDensity::poly_blowup(d, delta),
            DensitySpec::UniformBall { d } => SourceDensity::uniform_ball(d),
            DensitySpec::UniformCellUnion { d, n } => Ok(SourceDensity::uniform_cells(Arc::new(CellInstance::choose_sequences(n, d)?))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub c0: f64,
    pub rel_error: f64,
    pub evaluations: usize,
}

#[derive(Debug, Clone)]
pub struct SourceDensity {
    kind: DensityKind,
    d: usize,
    c0: f64,
    normalization: Normalization,
    strata: Vec<f64>,
    /// Largest radial mass over directions, the envelope of the direction rejection step.
    m_max: f64,
    acceptance: f64,
}

/// `f(r) = r^{-d} min(1, (log r)^{-2})` or `h(r) = r^{-d+δ}`.
pub fn radial_profile(kind: &DensityKind, d: usize, r: f64) -> Result<f64> {
    check_dim(d)?;
    if !(r > 0.0) {
        return Err(Error::Domain(format!("radius must be positive, got {r}")));
    }
    let di = d as i32;
    match kind {
        DensityKind::LogBlowup => {
            let base = r.powi(-di);
            if (1.0 / E..=E).contains(&r) {
                Ok(base)
            } else {
                let l = r.ln();
                Ok(base / (l * l))
            }
        }
        DensityKind::PolyBlowup { delta } => Ok(r.powf(-(d as f64) + delta)),
        DensityKind::UniformBall | DensityKind::UniformCellUnion(_) => {
            Err(Error::Unsupported(format!("radial profile of a {} density", kind.name())))
        }
    }
}

/// `G(s) = ∫₀ˢ profile(t) t^{d−1} dt` for `0 < s ≤ e`.
fn radial_mass(kind: &DensityKind, s: f64) -> f64 {
    match kind {
        DensityKind::LogBlowup => {
            if s <= 1.0 / E {
                1.0 / s.ln().abs()
            } else {
                2.0 + s.ln()
            }
        }
        DensityKind::PolyBlowup { delta } => s.powf(*delta) / delta,
        _ => unreachable!("radial mass of a non-radial density"),
    }
}

/// Inverse of `G` on `[0, G(s_max)]`.
fn radial_quantile(kind: &DensityKind, g: f64) -> f64 {
    match kind {
        DensityKind::LogBlowup => {
            if g <= 1.0 {
                (-1.0 / g.max(LOG_U_FLOOR)).exp()
            } else {
                (g - 2.0).exp()
            }
        }
        DensityKind::PolyBlowup { delta } => (delta * g).powf(1.0 / delta),
        _ => unreachable!("radial quantile of a non-radial density"),
    }
}

/// Largest distance from `A′` along a direction with first coordinate `c > 0`
/// that stays in the unit ball and closer to `A′` than to `A`.
pub fn s_max(c: f64) -> f64 {
    (2.0 * c).min(1.0 / c)
}

/// Area of the unit sphere `S^{k}`, including `S⁰` (two points).
fn sphere_area_k(k: usize) -> f64 {
    if k == 0 {
        2.0
    } else {
        geometry::sphere_area(k + 1).expect("k + 1 >= 2")
    }
}

/// `σ_{d−2} ∫₀^{π/2} g(cos φ) sin^{d−2} φ dφ`, i.e. the integral of `g(u₁)` over the
/// directions of ℝ^d with `u₁ > 0`, split at the kinks of `s_max`.
fn half_sphere_integral(d: usize, breaks: &[f64], g: impl Fn(f64) -> f64) -> (f64, f64, usize) {
    let weight = |phi: f64| g(phi.cos()) * phi.sin().powi(d as i32 - 2);
    let mut pts: Vec<f64> = vec![0.0];
    pts.extend(breaks.iter().copied().filter(|&b| b > 0.0 && b < PI / 2.0));
    pts.push(PI / 2.0);
    pts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    pts.dedup();
    let (mut total, mut err, mut evals) = (0.0, 0.0, 0usize);
    for w in pts.windows(2) {
        let out = quadrature::double_exponential::integrate(weight, w[0], w[1], QUAD_ABS_TOL);
        total += out.integral;
        err += out.error_estimate.abs();
        evals += out.num_function_evaluations as usize;
    }
    let area = sphere_area_k(d - 2);
    (area * total, area * err, evals)
}

fn direction_breaks(kind: &DensityKind, s_cap: f64) -> Vec<f64> {
    let mut b = vec![PI / 4.0];
    if matches!(kind, DensityKind::LogBlowup) {
        b.push((1.0 / (2.0 * E)).acos());
    }
    if s_cap < SQRT_2 {
        b.push((s_cap / 2.0).acos());
        if s_cap >= 1.0 {
            b.push((1.0 / s_cap).acos());
        }
    }
    b
}

/// Normalization constant `c₀ = 1/∫_{B(0,1)} profile(dist(x, {A, A′})) dx`.
pub fn normalize(kind: &DensityKind, d: usize, budget: usize) -> Result<Normalization> {
    check_dim(d)?;
    if budget < MIN_QUADRATURE_BUDGET {
        return Err(Error::InvalidParameter(format!("quadrature budget {budget} below {MIN_QUADRATURE_BUDGET}")));
    }
    match kind {
        DensityKind::LogBlowup | DensityKind::PolyBlowup { .. } => {
            let (half, err, evals) = half_sphere_integral(d, &direction_breaks(kind, SQRT_2), |c| radial_mass(kind, s_max(c)));
            let z = 2.0 * half;
            let rel_error = err / half;
            if rel_error > NORMALIZATION_RTOL || evals > budget {
                return Err(Error::Precision { rel_error, limit: NORMALIZATION_RTOL });
            }
            Ok(Normalization { c0: 1.0 / z, rel_error, evaluations: evals })
        }
        DensityKind::UniformBall => Ok(Normalization { c0: 1.0 / geometry::ball_volume(d)?, rel_error: 0.0, evaluations: 0 }),
        DensityKind::UniformCellUnion(inst) => Ok(Normalization { c0: inst.density_value(), rel_error: 0.0, evaluations: 0 }),
    }
}

impl SourceDensity {
    pub fn new(kind: DensityKind, d: usize) -> Result<Self> {
        check_dim(d)?;
        if let DensityKind::PolyBlowup { delta } = kind {
            if !(delta > 0.0 && delta < d as f64) {
                return Err(Error::InvalidParameter(format!("delta must lie in (0, d) = (0, {d}), got {delta}")));
            }
        }
        if let DensityKind::UniformCellUnion(inst) = &kind {
            if inst.d() != d {
                return Err(Error::InvalidParameter("cell instance dimension mismatch".into()));
            }
        }
        let normalization = normalize(&kind, d, MIN_QUADRATURE_BUDGET)?;
        let (strata, m_max, acceptance) = match &kind {
            DensityKind::LogBlowup | DensityKind::PolyBlowup { .. } => {
                let m_max = radial_mass(&kind, SQRT_2);
                let mean_half = 1.0 / (normalization.c0 * geometry::sphere_area(d)?);
                let acceptance = mean_half / m_max;
                if acceptance < MIN_ACCEPTANCE {
                    return Err(Error::SamplerDegenerate { rate: acceptance });
                }
                (vec![0.5, 0.5], m_max, acceptance)
            }
            DensityKind::UniformBall => (vec![1.0], 0.0, 1.0),
            DensityKind::UniformCellUnion(inst) => {
                let s = (1..=inst.n()).flat_map(|i| [inst.sigma(i), inst.sigma(i)]).collect();
                (s, 0.0, 1.0)
            }
        };
        Ok(Self { kind, d, c0: normalization.c0, normalization, strata, m_max, acceptance })
    }

    pub fn log_blowup(d: usize) -> Result<Self> {
        Self::new(DensityKind::LogBlowup, d)
    }

    pub fn poly_blowup(d: usize, delta: f64) -> Result<Self> {
        Self::new(DensityKind::PolyBlowup { delta }, d)
    }

    pub fn uniform_ball(d: usize) -> Result<Self> {
        Self::new(DensityKind::UniformBall, d)
    }

    pub fn uniform_cells(inst: Arc<CellInstance>) -> Self {
        let d = inst.d();
        Self::new(DensityKind::UniformCellUnion(inst), d).expect("cell densities always normalize")
    }

    pub fn kind(&self) -> &DensityKind {
        &self.kind
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn c0(&self) -> f64 {
        self.c0
    }

    pub fn normalization(&self) -> Normalization {
        self.normalization
    }

    pub fn is_blowup(&self) -> bool {
        matches!(self.kind, DensityKind::LogBlowup | DensityKind::PolyBlowup { .. })
    }

    pub fn cell_instance(&self) -> Option<&Arc<CellInstance>> {
        match &self.kind {
            DensityKind::UniformCellUnion(inst) => Some(inst),
            _ => None,
        }
    }

    /// Acceptance probability of the direction rejection step (1 for non-radial kinds).
    pub fn acceptance_rate(&self) -> f64 {
        self.acceptance
    }

    pub fn spec(&self) -> DensitySpec {
        match &self.kind {
            DensityKind::LogBlowup => DensitySpec::LogBlowup { d: self.d },
            DensityKind::PolyBlowup { delta } => DensitySpec::PolyBlowup { d: self.d, delta: *delta },
            DensityKind::UniformBall => DensitySpec::UniformBall { d: self.d },
            DensityKind::UniformCellUnion(inst) => DensitySpec::UniformCellUnion { d: self.d, n: inst.n() },
        }
    }

    /// Point-wise density value (`+∞` at the blow-up points).
    pub fn density(&self, x: &[f64]) -> f64 {
        match &self.kind {
            DensityKind::LogBlowup | DensityKind::PolyBlowup { .. } => {
                let r2 = x.iter().map(|c| c * c).sum::<f64>();
                if r2 > 1.0 {
                    return 0.0;
                }
                let dist = nearest_pole_dist2(x).sqrt();
                if dist == 0.0 {
                    return f64::INFINITY;
                }
                self.c0 * radial_profile(&self.kind, self.d, dist).expect("positive distance")
            }
            DensityKind::UniformBall => {
                if x.iter().map(|c| c * c).sum::<f64>() <= 1.0 {
                    self.c0
                } else {
                    0.0
                }
            }
            DensityKind::UniformCellUnion(inst) => {
                if inst.locate(x).is_some() {
                    self.c0
                } else {
                    0.0
                }
            }
        }
    }

    /// Stratum weights: the two half-balls around `A′` and `A`, the single ball, or the `2N` boxes.
    pub fn strata(&self) -> &[f64] {
        &self.strata
    }

    /// Draw one point of stratum `s` (conditional law of the density on that stratum).
    pub fn sample_stratum<R: Rng + ?Sized>(&self, s: usize, rng: &mut R, out: &mut [f64]) -> Result<()> {
        debug_assert_eq!(out.len(), self.d);
        match &self.kind {
            DensityKind::LogBlowup | DensityKind::PolyBlowup { .. } => {
                self.sample_pole(rng, out)?;
                if s == 1 {
                    out.iter_mut().for_each(|c| *c = -*c);
                }
            }
            DensityKind::UniformBall => {
                gaussian_direction(rng, out);
                let rad = rng.random::<f64>().powf(1.0 / self.d as f64);
                out.iter_mut().for_each(|c| *c *= rad);
            }
            DensityKind::UniformCellUnion(_) => {
                out.iter_mut().for_each(|v| *v = rng.random::<f64>());
                self.map_unit_stratum(s, out);
            }
        }
        Ok(())
    }

    /// For strata that are affine images of the unit cube, replace `t ∈ [0,1)^d` by its image
    /// in stratum `s` and return true; otherwise leave `t` untouched and return false.
    pub fn map_unit_stratum(&self, s: usize, t: &mut [f64]) -> bool {
        match &self.kind {
            DensityKind::UniformCellUnion(inst) => {
                let side = if s % 2 == 0 { Sign::Plus } else { Sign::Minus };
                inst.cell_box(s / 2 + 1, side).map_unit(t);
                true
            }
            _ => false,
        }
    }

    /// Draw one point from the full density.
    pub fn sample_one<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) -> Result<()> {
        let mut v = rng.random::<f64>();
        let mut s = self.strata.len() - 1;
        for (k, w) in self.strata.iter().enumerate() {
            if v < *w {
                s = k;
                break;
            }
            v -= w;
        }
        self.sample_stratum(s, rng, out)
    }

    /// Point near `A′`: direction by rejection against the radial mass, radius by inverse CDF.
    fn sample_pole<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) -> Result<()> {
        const MAX_TRIES: usize = 1_000_000;
        for _ in 0..MAX_TRIES {
            gaussian_direction(rng, out);
            out[0] = out[0].abs();
            let c = out[0];
            if c == 0.0 {
                continue;
            }
            let m = radial_mass(&self.kind, s_max(c));
            if rng.random::<f64>() * self.m_max >= m {
                continue;
            }
            let g = m * (1.0 - rng.random::<f64>());
            let s = radial_quantile(&self.kind, g).min(s_max(c));
            for v in out.iter_mut() {
                *v *= s;
            }
            out[0] -= 1.0;
            return Ok(());
        }
        Err(Error::SamplerDegenerate { rate: 1.0 / MAX_TRIES as f64 })
    }
}

pub(crate) fn nearest_pole_dist2(x: &[f64]) -> f64 {
    let mut to_a = (x[0] - 1.0) * (x[0] - 1.0);
    let mut to_ap = (x[0] + 1.0) * (x[0] + 1.0);
    for c in &x[1..] {
        to_a += c * c;
        to_ap += c * c;
    }
    to_a.min(to_ap)
}

fn gaussian_direction<R: Rng + ?Sized>(rng: &mut R, out: &mut [f64]) {
    loop {
        for v in out.iter_mut() {
            *v = rng.sample(StandardNormal);
        }
        let n = geometry::norm(out);
        if n > 1e-300 {
            out.iter_mut().for_each(|v| *v /= n);
            return;
        }
    }
}

/// Seed plus stream counter; every call to [`sample`] consumes one stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SamplerState {
    pub seed: u64,
    pub counter: u64,
}

impl SamplerState {
    pub fn new(seed: u64) -> Self {
        Self { seed, counter: 0 }
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.counter);
        rng
    }
}

/// `n` i.i.d. draws from the density.
pub fn sample(density: &SourceDensity, state: &mut SamplerState, n: usize) -> Result<Vec<Point>> {
    let mut rng = state.rng();
    state.counter += 1;
    let mut buf = vec![0.0; density.dim()];
    (0..n)
        .map(|_| {
            density.sample_one(&mut rng, &mut buf)?;
            Point::new(buf.clone())
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Mass {
    pub value: f64,
    pub method: Method,
}

/// Radial-density mass of the sector `B(pole, s) ∩ cone` for a cone covering `fraction` of all directions.
///
/// For the log profile the closed form `c₀·fraction·σ_{d−1}/|log s|` holds for `s ≤ 1/e`;
/// larger radii are integrated numerically and tagged as such. The support boundary is not
/// applied here; see [`pole_ball_mass`] for the exact mass of a ball around `A′`.
pub fn sector_mass(density: &SourceDensity, s: f64, fraction: f64) -> Result<Mass> {
    if !(s > 0.0) {
        return Err(Error::Domain(format!("sector radius must be positive, got {s}")));
    }
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::Domain(format!("cone fraction {fraction} outside [0, 1]")));
    }
    let d = density.dim();
    let area = geometry::sphere_area(d)?;
    match density.kind() {
        DensityKind::LogBlowup if s <= 1.0 / E => Ok(Mass { value: density.c0() * fraction * area / s.ln().abs(), method: Method::ClosedForm }),
        DensityKind::LogBlowup => {
            let kind = density.kind().clone();
            let inner = 1.0;
            let outer = quadrature::double_exponential::integrate(
                |t: f64| radial_profile(&kind, d, t).expect("positive radius") * t.powi(d as i32 - 1),
                1.0 / E,
                s,
                QUAD_ABS_TOL,
            );
            Ok(Mass { value: density.c0() * fraction * area * (inner + outer.integral), method: Method::Quadrature })
        }
        DensityKind::PolyBlowup { delta } => {
            Ok(Mass { value: density.c0() * fraction * area * s.powf(*delta) / delta, method: Method::ClosedForm })
        }
        other => Err(Error::Unsupported(format!("sector mass of a {} density", other.name()))),
    }
}

/// Exact `ρ(B(A′, s))` for a blow-up density and `0 < s ≤ 1`, by direction quadrature.
pub fn pole_ball_mass(density: &SourceDensity, s: f64) -> Result<Mass> {
    if !(s > 0.0 && s <= 1.0) {
        return Err(Error::Domain(format!("ball radius must lie in (0, 1], got {s}")));
    }
    if !density.is_blowup() {
        return Err(Error::Unsupported(format!("pole ball mass of a {} density", density.kind().name())));
    }
    let kind = density.kind().clone();
    let (val, _, _) = half_sphere_integral(density.dim(), &direction_breaks(&kind, s), |c| radial_mass(&kind, s_max(c).min(s)));
    Ok(Mass { value: density.c0() * val, method: Method::Quadrature })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn profile_examples() {
        let k = DensityKind::LogBlowup;
        assert_relative_eq!(radial_profile(&k, 2, (-2.0f64).exp()).unwrap(), 4f64.exp() / 4.0, max_relative = 1e-13);
        assert_relative_eq!(radial_profile(&k, 2, 0.5).unwrap(), 4.0, max_relative = 1e-14);
        assert_relative_eq!(radial_profile(&DensityKind::PolyBlowup { delta: 0.5 }, 2, 0.01).unwrap(), 1000.0, max_relative = 1e-12);
        assert!(radial_profile(&k, 2, 0.0).is_err());
        assert!(radial_profile(&DensityKind::UniformBall, 2, 0.5).is_err());
    }

    #[test]
    fn radial_mass_is_continuous_at_the_branch() {
        let k = DensityKind::LogBlowup;
        let below = radial_mass(&k, 1.0 / E * (1.0 - 1e-12));
        let above = radial_mass(&k, 1.0 / E * (1.0 + 1e-12));
        assert!((below - above).abs() < 1e-10);
    }

    #[test]
    fn quantile_inverts_mass() {
        for k in [DensityKind::LogBlowup, DensityKind::PolyBlowup { delta: 0.7 }] {
            for s in [1e-6, 0.01, 0.3, 0.9, 1.3] {
                assert_relative_eq!(radial_quantile(&k, radial_mass(&k, s)), s, max_relative = 1e-12);
            }
        }
    }

    #[test]
    fn normalize_rejects_small_budget() {
        assert!(normalize(&DensityKind::LogBlowup, 2, 10).is_err());
    }

    #[test]
    fn uniform_cell_constant() {
        let inst = Arc::new(CellInstance::choose_sequences(4, 2).unwrap());
        let total: f64 = (1..=4).map(|i| inst.ell(i) * inst.r(i)).sum();
        let dens = SourceDensity::uniform_cells(inst);
        assert_relative_eq!(dens.c0(), 1.0 / (2.0 * total), max_relative = 1e-14);
    }

    #[test]
    fn poly_delta_range_checked() {
        assert!(SourceDensity::poly_blowup(2, 0.0).is_err());
        assert!(SourceDensity::poly_blowup(2, 2.0).is_err());
    }

    #[test]
    fn symmetric_density_values() {
        let dens = SourceDensity::log_blowup(2).unwrap();
        for x in [[0.3, 0.2], [-0.9, 0.01], [0.5, -0.5]] {
            let mx = [-x[0], -x[1]];
            assert_eq!(dens.density(&x), dens.density(&mx));
        }
    }

    #[test]
    fn sample_streams_are_reproducible() {
        let dens = SourceDensity::log_blowup(2).unwrap();
        let mut a = SamplerState::new(11);
        let mut b = SamplerState::new(11);
        assert_eq!(sample(&dens, &mut a, 100).unwrap(), sample(&dens, &mut b, 100).unwrap());
        assert_ne!(sample(&dens, &mut a, 10).unwrap(), sample(&dens, &mut SamplerState::new(11), 10).unwrap());
    }

    #[test]
    fn pole_samples_stay_in_support() {
        let dens = SourceDensity::log_blowup(3).unwrap();
        let mut rng = SamplerState::new(3).rng();
        let mut x = vec![0.0; 3];
        for _ in 0..10_000 {
            dens.sample_stratum(0, &mut rng, &mut x).unwrap();
            assert!(x.iter().map(|c| c * c).sum::<f64>() <= 1.0 + 1e-12);
            assert!(x[0] <= 1e-12);
        }
    }
}
