//! Builders for the blow-up instance and the cell instance, with constraint validation.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::discrete_ot::DiscreteMeasure;
use crate::error::{Error, Result};
use crate::geometry::{self, check_dim, BoxRegion, Cone, Point, Sign};
use crate::measures::SourceDensity;

/// Relative slack allowed when checking the factor-100 constraints, which the
/// standard sequences meet with equality.
pub const CONSTRAINT_RTOL: f64 = 1e-9;

/// Search horizon for the maximum of `100 i² 2^{-i}`; the sequence decreases after `i = 3`.
const K1_SEARCH: usize = 64;

#[derive(Debug, Clone)]
pub struct BlowupInstance {
    pub d: usize,
    pub radius: f64,
    pub density: Arc<SourceDensity>,
    pub cone_fraction: f64,
}

impl BlowupInstance {
    pub fn new(density: SourceDensity, radius: f64) -> Result<Self> {
        let d = density.dim();
        check_dim(d)?;
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(Error::InvalidParameter(format!("target radius must be positive, got {radius}")));
        }
        if !density.is_blowup() {
            return Err(Error::Unsupported("blow-up instances need a LogBlowup or PolyBlowup density".into()));
        }
        let cone_fraction = Cone::blowup_cone(d)?.solid_angle_fraction()?;
        Ok(Self { d, radius, density: Arc::new(density), cone_fraction })
    }

    pub fn log_blowup(d: usize, radius: f64) -> Result<Self> {
        Self::new(SourceDensity::log_blowup(d)?, radius)
    }

    pub fn poly_blowup(d: usize, radius: f64, delta: f64) -> Result<Self> {
        Self::new(SourceDensity::poly_blowup(d, delta)?, radius)
    }

    pub fn targets(&self, theta: f64) -> Result<TargetFamily> {
        TargetFamily::rotating(theta, self.radius, self.d)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConstraintKind {
    PositiveSequences,
    Separation,
    WidthRatio,
    Monotone,
    Disjoint,
    MassNormalization,
}

impl ConstraintKind {
    pub fn statement(self) -> &'static str {
        match self {
            ConstraintKind::PositiveSequences => "l_i, r_i, w_i > 0",
            ConstraintKind::Separation => "min(u_i - u_(i-1), u_(i+1) - u_i) >= 100 max(l_i, r_i, w_i)",
            ConstraintKind::WidthRatio => "w_i >= 100 r_i",
            ConstraintKind::Monotone => "u_i strictly increasing",
            ConstraintKind::Disjoint => "boxes of distinct cells are disjoint",
            ConstraintKind::MassNormalization => "sum of 2 sigma_i equals 1",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintReport {
    pub kind: ConstraintKind,
    /// Cell index, starting at 1; 0 for instance-wide checks.
    pub index: usize,
    /// Achieved value divided by the required value (≥ 1 means satisfied).
    pub margin: f64,
    pub ok: bool,
}

impl fmt::Display for ConstraintReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let status = if self.ok { "holds" } else { "violated" };
        write!(f, "{:?} [{}] {} at i = {} (margin {:.6})", self.kind, self.kind.statement(), status, self.index, self.margin)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Validation {
    pub reports: Vec<ConstraintReport>,
}

impl Validation {
    pub fn violations(&self) -> Vec<&ConstraintReport> {
        self.reports.iter().filter(|r| !r.ok).collect()
    }

    pub fn is_valid(&self) -> bool {
        self.reports.iter().all(|r| r.ok)
    }

    pub fn min_margin(&self, kind: ConstraintKind) -> Option<f64> {
        self.reports.iter().filter(|r| r.kind == kind).map(|r| r.margin).reduce(f64::min)
    }
}

/// Truncated cell instance: `N` pairs of boxes `T⁺(A_i⁺, ℓ_i, r_i)`, `T⁻(A_i⁻, ℓ_i, r_i)` carrying a uniform density.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellInstance {
    d: usize,
    k1: f64,
    k2: f64,
    c0: f64,
    ell: Vec<f64>,
    r: Vec<f64>,
    w: Vec<f64>,
    u: Vec<f64>,
    sigma: Vec<f64>,
    mass_scale: f64,
    constants: ConstantsProvenance,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConstantsProvenance {
    /// `k₁` from a brute-force maximum, `k₂ = 100 k₁`, `c₀` from the series `Σ i⁻² 2⁻ⁱ`.
    Derived,
    /// Supplied by the caller (e.g. loaded from a file); nothing is assumed about them.
    External,
}

/// Serialized form of an instance; masses are recomputed on load.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellInstanceDocument {
    pub d: usize,
    pub k1: f64,
    pub k2: f64,
    pub c0: f64,
    pub ell: Vec<f64>,
    pub r: Vec<f64>,
    pub w: Vec<f64>,
    pub u: Vec<f64>,
    #[serde(default)]
    pub sigma: Vec<f64>,
    #[serde(default)]
    pub constants: Option<ConstantsProvenance>,
}

/// `Σ_{i≥1} i⁻² 2⁻ⁱ`, summed until the geometric tail bound drops below 1e-18.
pub fn series_s() -> f64 {
    let mut s = 0.0;
    let mut i = 1u32;
    loop {
        let term = (i as f64).powi(-2) * 0.5f64.powi(i as i32);
        s += term;
        if term < 1e-18 {
            return s;
        }
        i += 1;
    }
}

/// Smallest `k₁` with `k₁ i⁻² ≥ 100 · 2⁻ⁱ` for every `i ≥ 1`.
pub fn minimal_k1() -> f64 {
    (1..=K1_SEARCH).map(|i| 100.0 * (i * i) as f64 * 0.5f64.powi(i as i32)).fold(0.0, f64::max)
}

/// Scale making `Σ_{i≥1} ℓ_i r_i = 1/2` for `ℓ_i = c₀k₁i⁻²`, `r_i = c₀2⁻ⁱ`.
pub fn scale_c0(k1: f64) -> f64 {
    (2.0 * k1 * series_s()).powf(-0.5)
}

impl CellInstance {
    /// Standard sequences `r_i = c₀2⁻ⁱ`, `ℓ_i = w_i = c₀k₁i⁻²`, `u_{i+1} − u_i = c₀k₂i⁻²`, `u₁ = 0`.
    pub fn choose_sequences(n: usize, d: usize) -> Result<Self> {
        check_dim(d)?;
        if n < 2 {
            return Err(Error::InvalidParameter(format!("need at least 2 cells, got {n}")));
        }
        let k1 = minimal_k1();
        let k2 = 100.0 * k1;
        let c0 = scale_c0(k1);
        let mut ell = Vec::with_capacity(n);
        let mut r = Vec::with_capacity(n);
        let mut u = Vec::with_capacity(n);
        let mut ui = 0.0;
        for i in 1..=n {
            let fi = i as f64;
            ell.push(c0 * k1 / (fi * fi));
            r.push(c0 * 0.5f64.powi(i as i32));
            u.push(ui);
            ui += c0 * k2 / (fi * fi);
        }
        let w = ell.clone();
        let inst = Self::assemble(d, k1, k2, c0, ell, r, w, u, ConstantsProvenance::Derived)?;
        let validation = inst.validate();
        if !validation.is_valid() {
            return Err(Error::ConstraintViolation(validation.violations().into_iter().cloned().collect()));
        }
        Ok(inst)
    }

    /// Instance from explicit sequences; nothing is validated beyond shapes and positivity of the total mass.
    #[allow(clippy::too_many_arguments)]
    pub fn from_sequences(d: usize, k1: f64, k2: f64, c0: f64, ell: Vec<f64>, r: Vec<f64>, w: Vec<f64>, u: Vec<f64>) -> Result<Self> {
        Self::assemble(d, k1, k2, c0, ell, r, w, u, ConstantsProvenance::External)
    }

    pub fn from_document(doc: CellInstanceDocument) -> Result<Self> {
        let provenance = doc.constants.unwrap_or(ConstantsProvenance::External);
        Self::assemble(doc.d, doc.k1, doc.k2, doc.c0, doc.ell, doc.r, doc.w, doc.u, provenance)
    }

    pub fn to_document(&self) -> CellInstanceDocument {
        CellInstanceDocument {
            d: self.d,
            k1: self.k1,
            k2: self.k2,
            c0: self.c0,
            ell: self.ell.clone(),
            r: self.r.clone(),
            w: self.w.clone(),
            u: self.u.clone(),
            sigma: self.sigma.clone(),
            constants: Some(self.constants),
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn assemble(
        d: usize,
        k1: f64,
        k2: f64,
        c0: f64,
        ell: Vec<f64>,
        r: Vec<f64>,
        w: Vec<f64>,
        u: Vec<f64>,
        constants: ConstantsProvenance,
    ) -> Result<Self> {
        check_dim(d)?;
        let n = ell.len();
        if n == 0 || r.len() != n || w.len() != n || u.len() != n {
            return Err(Error::InvalidParameter("sequences ell, r, w, u must be non-empty and of equal length".into()));
        }
        if ell.iter().chain(&r).chain(&w).chain(&u).any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("sequences must be finite".into()));
        }
        let total: f64 = ell.iter().zip(&r).map(|(l, ri)| l * ri).sum();
        if !(total > 0.0) {
            return Err(Error::InvalidParameter("total box area must be positive".into()));
        }
        let mass_scale = 1.0 / (2.0 * total);
        let sigma = ell.iter().zip(&r).map(|(l, ri)| l * ri * mass_scale).collect();
        Ok(Self { d, k1, k2, c0, ell, r, w, u, sigma, mass_scale, constants })
    }

    pub fn n(&self) -> usize {
        self.ell.len()
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn k1(&self) -> f64 {
        self.k1
    }

    pub fn k2(&self) -> f64 {
        self.k2
    }

    pub fn c0(&self) -> f64 {
        self.c0
    }

    pub fn constants(&self) -> ConstantsProvenance {
        self.constants
    }

    /// Ratio of truncated to untruncated cell masses, `1/(2 Σ_{i≤N} ℓ_i r_i)`.
    pub fn mass_scale(&self) -> f64 {
        self.mass_scale
    }

    /// Value of the uniform density on the support.
    pub fn density_value(&self) -> f64 {
        self.mass_scale
    }

    pub fn check_index(&self, i: usize) -> Result<()> {
        if i == 0 || i > self.n() {
            Err(Error::IndexOutOfRange { index: i, n: self.n() })
        } else {
            Ok(())
        }
    }

    pub fn ell(&self, i: usize) -> f64 {
        self.ell[i - 1]
    }

    pub fn r(&self, i: usize) -> f64 {
        self.r[i - 1]
    }

    pub fn w(&self, i: usize) -> f64 {
        self.w[i - 1]
    }

    pub fn u(&self, i: usize) -> f64 {
        self.u[i - 1]
    }

    pub fn sigma(&self, i: usize) -> f64 {
        self.sigma[i - 1]
    }

    pub fn sigmas(&self) -> &[f64] {
        &self.sigma
    }

    pub fn a_plus(&self, i: usize) -> Point {
        self.planar(self.u(i) + self.w(i), 0.0)
    }

    pub fn a_minus(&self, i: usize) -> Point {
        self.planar(self.u(i) - self.w(i), 0.0)
    }

    pub fn b_plus(&self, i: usize) -> Point {
        self.planar(self.u(i), self.w(i))
    }

    pub fn b_minus(&self, i: usize) -> Point {
        self.planar(self.u(i), -self.w(i))
    }

    pub fn c_plus(&self, i: usize) -> Point {
        self.planar(self.u(i) + self.r(i), self.w(i))
    }

    pub fn c_minus(&self, i: usize) -> Point {
        self.planar(self.u(i) - self.r(i), -self.w(i))
    }

    fn planar(&self, x1: f64, x2: f64) -> Point {
        Point::planar(x1, x2, self.d).expect("instance dimension is validated")
    }

    pub fn box_plus(&self, i: usize) -> BoxRegion {
        BoxRegion::new(self.a_plus(i), self.ell(i), self.r(i), Sign::Plus).expect("positive sequences")
    }

    pub fn box_minus(&self, i: usize) -> BoxRegion {
        BoxRegion::new(self.a_minus(i), self.ell(i), self.r(i), Sign::Minus).expect("positive sequences")
    }

    pub fn cell_box(&self, i: usize, side: Sign) -> BoxRegion {
        match side {
            Sign::Plus => self.box_plus(i),
            Sign::Minus => self.box_minus(i),
        }
    }

    /// Cell index and box side containing `x`, if any.
    pub fn locate(&self, x: &[f64]) -> Option<(usize, Sign)> {
        let k = self.u.partition_point(|&ui| ui <= x[0]);
        let lo = k.saturating_sub(1);
        let hi = (k + 1).min(self.n());
        for idx in lo..hi {
            let i = idx + 1;
            if self.box_plus(i).contains(x) {
                return Some((i, Sign::Plus));
            }
            if self.box_minus(i).contains(x) {
                return Some((i, Sign::Minus));
            }
        }
        None
    }

    /// Extent `[min, max]` of the support and atoms along the first axis.
    pub fn x1_extent(&self) -> (f64, f64) {
        let lo = (1..=self.n()).map(|i| self.u(i) - self.w(i) - self.ell(i)).fold(f64::INFINITY, f64::min);
        let hi = (1..=self.n()).map(|i| self.u(i) + self.w(i) + self.ell(i)).fold(f64::NEG_INFINITY, f64::max);
        (lo, hi)
    }

    pub fn validate(&self) -> Validation {
        let n = self.n();
        let mut reports = Vec::new();
        let ok = |m: f64| m >= 1.0 - CONSTRAINT_RTOL;
        for i in 1..=n {
            let m = self.ell(i).min(self.r(i)).min(self.w(i));
            reports.push(ConstraintReport { kind: ConstraintKind::PositiveSequences, index: i, margin: if m > 0.0 { 1.0 } else { 0.0 }, ok: m > 0.0 });
        }
        for i in 1..n {
            let gap = self.u(i + 1) - self.u(i);
            reports.push(ConstraintReport { kind: ConstraintKind::Monotone, index: i, margin: if gap > 0.0 { 1.0 } else { 0.0 }, ok: gap > 0.0 });
        }
        for i in 1..=n {
            let left = if i > 1 { self.u(i) - self.u(i - 1) } else { f64::INFINITY };
            let right = if i < n { self.u(i + 1) - self.u(i) } else { f64::INFINITY };
            let need = 100.0 * self.ell(i).max(self.r(i)).max(self.w(i));
            let margin = left.min(right) / need;
            reports.push(ConstraintReport { kind: ConstraintKind::Separation, index: i, margin, ok: ok(margin) });
        }
        for i in 1..=n {
            let margin = self.w(i) / (100.0 * self.r(i));
            reports.push(ConstraintReport { kind: ConstraintKind::WidthRatio, index: i, margin, ok: ok(margin) });
        }
        for i in 1..n {
            let end_i = self.u(i) + self.w(i) + self.ell(i);
            let start_next = self.u(i + 1) - self.w(i + 1) - self.ell(i + 1);
            let margin = if end_i < start_next { 1.0 } else { 0.0 };
            reports.push(ConstraintReport { kind: ConstraintKind::Disjoint, index: i, margin, ok: end_i < start_next });
        }
        let total: f64 = 2.0 * self.sigma.iter().sum::<f64>();
        reports.push(ConstraintReport {
            kind: ConstraintKind::MassNormalization,
            index: 0,
            margin: total,
            ok: (total - 1.0).abs() <= 1e-12,
        });
        Validation { reports }
    }

    pub fn atoms(&self) -> TargetFamily {
        TargetFamily::cell_atoms(self)
    }
}

impl<'de> Deserialize<'de> for CellInstance {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let doc = CellInstanceDocument::deserialize(deserializer)?;
        CellInstance::from_document(doc).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum TargetKind {
    RotatingPair { theta: f64, radius: f64 },
    CellAtoms,
    PerturbedCellAtoms { i: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TargetFamily {
    pub kind: TargetKind,
    pub measure: DiscreteMeasure,
}

impl TargetFamily {
    /// `μ_θ = ½(δ_{B_θ} + δ_{B_θ′})`, with `B_θ` at index 0.
    pub fn rotating(theta: f64, radius: f64, d: usize) -> Result<Self> {
        let b = geometry::target_atom(theta, radius, Sign::Plus, d)?;
        let bp = geometry::target_atom(theta, radius, Sign::Minus, d)?;
        Ok(Self { kind: TargetKind::RotatingPair { theta, radius }, measure: DiscreteMeasure::new(vec![b, bp], vec![0.5, 0.5])? })
    }

    /// `μ = Σ σ_i (δ_{B_i⁺} + δ_{B_i⁻})`, with `B_i^±` at indices `2(i−1)` and `2(i−1)+1`.
    pub fn cell_atoms(inst: &CellInstance) -> Self {
        let (atoms, weights) = cell_measure(inst, None);
        Self { kind: TargetKind::CellAtoms, measure: DiscreteMeasure::from_parts_unchecked(atoms, weights) }
    }

    /// `ν_i`: the cell measure with `B_i^±` replaced by `C_i^±`.
    pub fn perturbed(inst: &CellInstance, i: usize) -> Result<Self> {
        inst.check_index(i)?;
        let (atoms, weights) = cell_measure(inst, Some(i));
        Ok(Self { kind: TargetKind::PerturbedCellAtoms { i }, measure: DiscreteMeasure::from_parts_unchecked(atoms, weights) })
    }
}

pub fn build_targets(inst: &CellInstance, kind: TargetKind) -> Result<TargetFamily> {
    match kind {
        TargetKind::RotatingPair { theta, radius } => TargetFamily::rotating(theta, radius, inst.d()),
        TargetKind::CellAtoms => Ok(TargetFamily::cell_atoms(inst)),
        TargetKind::PerturbedCellAtoms { i } => TargetFamily::perturbed(inst, i),
    }
}

fn cell_measure(inst: &CellInstance, perturbed: Option<usize>) -> (Vec<Point>, Vec<f64>) {
    let mut atoms = Vec::with_capacity(2 * inst.n());
    let mut weights = Vec::with_capacity(2 * inst.n());
    for i in 1..=inst.n() {
        if perturbed == Some(i) {
            atoms.push(inst.c_plus(i));
            atoms.push(inst.c_minus(i));
        } else {
            atoms.push(inst.b_plus(i));
            atoms.push(inst.b_minus(i));
        }
        weights.push(inst.sigma(i));
        weights.push(inst.sigma(i));
    }
    (atoms, weights)
}
