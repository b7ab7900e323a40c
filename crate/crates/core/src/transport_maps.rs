//! Closed-form optimal maps onto atomic targets, and sample-based checks of their optimality.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::constructions::{CellInstance, TargetFamily};
use crate::error::{Error, Result};
use crate::geometry::{dist2, halfspace_side, Point, Side, Sign};
use crate::mc::{self, Allocation, Estimate};
use crate::measures::SourceDensity;

const PURPOSE_CERTIFICATE: u16 = 0x0101;
const PURPOSE_PUSHFORWARD: u16 = 0x0102;

/// Sigma level beyond which an atom mass counts as a pushforward failure.
pub const PUSHFORWARD_SIGMAS: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    Oracle,
    Solver,
}

/// Identity of a closed-form oracle, for estimators that know exact answers for some pairs.
#[derive(Debug, Clone)]
pub enum OracleKey {
    Rotating { theta: f64, radius: f64 },
    Cell(Arc<CellInstance>),
    Perturbed(Arc<CellInstance>, usize),
}

/// A map from the source support onto the atoms of a target family.
pub trait TransportMap: Sync {
    /// Index of the atom that `x` is sent to.
    fn assign(&self, x: &[f64]) -> Result<usize>;

    fn target(&self) -> &TargetFamily;

    fn provenance(&self) -> Provenance;

    fn image(&self, x: &[f64]) -> Result<&Point> {
        let k = self.assign(x)?;
        Ok(&self.target().measure.atoms()[k])
    }

    /// Length unit for boundary tolerances near `x`.
    fn local_scale(&self, _x: &[f64]) -> f64 {
        1.0
    }

    /// Distance from `x` to the nearest bisector between its assigned atom and another atom.
    fn boundary_distance(&self, x: &[f64]) -> Result<f64> {
        let a = self.assign(x)?;
        Ok(bisector_distance(x, self.target().measure.atoms(), a))
    }

    fn oracle_key(&self) -> Option<OracleKey> {
        None
    }
}

/// `min_{k≠a} (|x−y_k|² − |x−y_a|²) / (2|y_k − y_a|)`: signed distance to the closest bisector,
/// negative when some other atom is strictly closer than atom `a`.
pub fn bisector_distance(x: &[f64], atoms: &[Point], a: usize) -> f64 {
    let ya = atoms[a].coords();
    let da = dist2(x, ya);
    atoms
        .iter()
        .enumerate()
        .filter(|(k, _)| *k != a)
        .map(|(_, y)| (dist2(x, y.coords()) - da) / (2.0 * dist2(y.coords(), ya).sqrt()))
        .fold(f64::INFINITY, f64::min)
}

/// `B_θ` (index 0) on the closed side `⟨x, B_θ⟩ ≥ 0`, `B_θ′` (index 1) otherwise.
pub fn oracle_rotating(x: &[f64], theta: f64, radius: f64) -> usize {
    match halfspace_side(x, theta, radius) {
        Side::Positive | Side::Boundary => 0,
        Side::Negative => 1,
    }
}

/// Upper half (`x₂ ≥ 0`) of cell `i` goes to `B_i⁺`, the lower half to `B_i⁻`.
pub fn oracle_cell(x: &[f64], inst: &CellInstance) -> Result<usize> {
    let (i, _) = inst.locate(x).ok_or(Error::OutsideSupport)?;
    Ok(cell_half(i, x))
}

/// As [`oracle_cell`] outside cell `i`; inside it the box on the `+` side goes to `C_i⁺`
/// and the box on the `−` side to `C_i⁻`.
pub fn oracle_perturbed(x: &[f64], inst: &CellInstance, i: usize) -> Result<usize> {
    inst.check_index(i)?;
    let (j, side) = inst.locate(x).ok_or(Error::OutsideSupport)?;
    if j != i {
        return Ok(cell_half(j, x));
    }
    Ok(match side {
        Sign::Plus => 2 * (i - 1),
        Sign::Minus => 2 * (i - 1) + 1,
    })
}

fn cell_half(i: usize, x: &[f64]) -> usize {
    if x[1] >= 0.0 {
        2 * (i - 1)
    } else {
        2 * (i - 1) + 1
    }
}

#[derive(Debug, Clone)]
pub struct RotatingOracle {
    theta: f64,
    radius: f64,
    target: TargetFamily,
}

impl RotatingOracle {
    pub fn new(theta: f64, radius: f64, d: usize) -> Result<Self> {
        Ok(Self { theta, radius, target: TargetFamily::rotating(theta, radius, d)? })
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }
}

impl TransportMap for RotatingOracle {
    fn assign(&self, x: &[f64]) -> Result<usize> {
        Ok(oracle_rotating(x, self.theta, self.radius))
    }

    fn target(&self) -> &TargetFamily {
        &self.target
    }

    fn provenance(&self) -> Provenance {
        Provenance::Oracle
    }

    fn boundary_distance(&self, x: &[f64]) -> Result<f64> {
        Ok((x[0] * self.theta.sin() + x[1] * self.theta.cos()).abs())
    }

    fn oracle_key(&self) -> Option<OracleKey> {
        Some(OracleKey::Rotating { theta: self.theta, radius: self.radius })
    }
}

#[derive(Debug, Clone)]
pub struct CellOracle {
    inst: Arc<CellInstance>,
    target: TargetFamily,
}

impl CellOracle {
    pub fn new(inst: Arc<CellInstance>) -> Self {
        let target = TargetFamily::cell_atoms(&inst);
        Self { inst, target }
    }

    pub fn instance(&self) -> &Arc<CellInstance> {
        &self.inst
    }
}

impl TransportMap for CellOracle {
    fn assign(&self, x: &[f64]) -> Result<usize> {
        oracle_cell(x, &self.inst)
    }

    fn target(&self) -> &TargetFamily {
        &self.target
    }

    fn provenance(&self) -> Provenance {
        Provenance::Oracle
    }

    fn local_scale(&self, x: &[f64]) -> f64 {
        cell_scale(&self.inst, x)
    }

    fn oracle_key(&self) -> Option<OracleKey> {
        Some(OracleKey::Cell(self.inst.clone()))
    }
}

#[derive(Debug, Clone)]
pub struct PerturbedOracle {
    inst: Arc<CellInstance>,
    i: usize,
    target: TargetFamily,
}

impl PerturbedOracle {
    pub fn new(inst: Arc<CellInstance>, i: usize) -> Result<Self> {
        let target = TargetFamily::perturbed(&inst, i)?;
        Ok(Self { inst, i, target })
    }

    pub fn index(&self) -> usize {
        self.i
    }
}

impl TransportMap for PerturbedOracle {
    fn assign(&self, x: &[f64]) -> Result<usize> {
        oracle_perturbed(x, &self.inst, self.i)
    }

    fn target(&self) -> &TargetFamily {
        &self.target
    }

    fn provenance(&self) -> Provenance {
        Provenance::Oracle
    }

    fn local_scale(&self, x: &[f64]) -> f64 {
        cell_scale(&self.inst, x)
    }

    fn oracle_key(&self) -> Option<OracleKey> {
        Some(OracleKey::Perturbed(self.inst.clone(), self.i))
    }
}

/// `r_i` of the cell containing `x`, or the smallest `r` when `x` lies outside the support.
pub(crate) fn cell_scale(inst: &CellInstance, x: &[f64]) -> f64 {
    match inst.locate(x) {
        Some((i, _)) => inst.r(i),
        None => inst.r(inst.n()),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificateReport {
    pub samples: usize,
    pub seed: u64,
    pub violations: usize,
    /// Smallest `|x − y_second| − |x − y_assigned|` over the samples.
    pub min_margin: f64,
}

/// Check on `n` samples of `density` that `map` sends each point to a nearest atom.
pub fn closest_point_certificate(map: &dyn TransportMap, density: &SourceDensity, n: usize, seed: u64) -> Result<CertificateReport> {
    let atoms = map.target().measure.atoms();
    let d = density.dim();
    type Worst = (usize, f64, Option<(Vec<f64>, usize, usize, f64)>);
    let (chunks, counts) = mc::map_chunks(density, n, seed, PURPOSE_CERTIFICATE, Allocation::Equal, |_, buf| {
        let mut violations = 0usize;
        let mut min_margin = f64::INFINITY;
        let mut witness = None;
        for x in buf.chunks(d) {
            let a = map.assign(x)?;
            let da = dist2(x, atoms[a].coords()).sqrt();
            let (mut closer, mut second) = (a, f64::INFINITY);
            for (k, y) in atoms.iter().enumerate() {
                if k == a {
                    continue;
                }
                let dk = dist2(x, y.coords()).sqrt();
                if dk < second {
                    second = dk;
                    closer = k;
                }
            }
            let margin = second - da;
            if margin < 0.0 {
                violations += 1;
                if witness.is_none() {
                    witness = Some((x.to_vec(), a, closer, -margin));
                }
            }
            min_margin = min_margin.min(margin);
        }
        Ok::<Worst, Error>((violations, min_margin, witness))
    })?;
    let mut violations = 0;
    let mut min_margin = f64::INFINITY;
    let mut witness = None;
    for (_, (v, m, w)) in chunks {
        violations += v;
        min_margin = min_margin.min(m);
        if witness.is_none() {
            witness = w;
        }
    }
    if let Some((point, assigned, closer, gap)) = witness {
        return Err(Error::Certificate { point, assigned, closer, gap });
    }
    Ok(CertificateReport { samples: counts.iter().sum(), seed, violations, min_margin })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PushforwardReport {
    pub samples: usize,
    pub seed: u64,
    pub masses: Vec<Estimate>,
    pub expected: Vec<f64>,
    pub max_abs_deviation: f64,
    /// Largest deviation in units of the standard error.
    pub max_sigmas: f64,
}

/// Estimate the mass `map` sends to each atom and compare with the target weights.
pub fn pushforward_check(map: &dyn TransportMap, density: &SourceDensity, n: usize, seed: u64) -> Result<PushforwardReport> {
    let expected = map.target().measure.weights().to_vec();
    let k = expected.len();
    let masses = mc::stratified_vector(density, n, seed, PURPOSE_PUSHFORWARD, Allocation::Equal, k, |x, out| {
        out[map.assign(x)?] = 1.0;
        Ok(())
    })?;
    let mut max_abs = 0.0f64;
    let mut max_sigmas = 0.0f64;
    let mut failure = None;
    for (j, (est, w)) in masses.iter().zip(&expected).enumerate() {
        let dev = (est.value - w).abs();
        let sigmas = if dev <= 1e-12 { 0.0 } else { dev / est.se.max(1e-300) };
        max_abs = max_abs.max(dev);
        if sigmas > max_sigmas {
            max_sigmas = sigmas;
        }
        if sigmas > PUSHFORWARD_SIGMAS && failure.is_none() {
            failure = Some(Error::Pushforward { atom: j, empirical: est.value, expected: *w, sigmas });
        }
    }
    if let Some(e) = failure {
        return Err(e);
    }
    let samples = mc::allocate(density.strata(), n, Allocation::Equal).iter().sum();
    Ok(PushforwardReport { samples, seed, masses, expected, max_abs_deviation: max_abs, max_sigmas })
}
