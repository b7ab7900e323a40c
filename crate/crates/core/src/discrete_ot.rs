//! Exact discrete optimal transport between finitely supported measures.

pub mod simplex;

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::constructions::{CellInstance, TargetFamily};
use crate::error::{Error, Result};
use crate::geometry::{dist2, Point};

pub use simplex::{CostFn, DenseCost, FlowSolution};

/// Largest number of atoms per side accepted by [`solve_exact`].
pub const MAX_EXACT_ATOMS: usize = 5_000;
pub const WEIGHT_SUM_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteMeasure {
    atoms: Vec<Point>,
    weights: Vec<f64>,
}

impl DiscreteMeasure {
    /// Probability measure with distinct atoms of a common dimension.
    pub fn new(atoms: Vec<Point>, weights: Vec<f64>) -> Result<Self> {
        if atoms.is_empty() || atoms.len() != weights.len() {
            return Err(Error::InvalidParameter(format!("{} atoms but {} weights", atoms.len(), weights.len())));
        }
        let d = atoms[0].dim();
        if atoms.iter().any(|a| a.dim() != d) {
            return Err(Error::InvalidParameter("atoms have mixed dimensions".into()));
        }
        if let Some(w) = weights.iter().find(|w| !(w.is_finite() && **w >= 0.0)) {
            return Err(Error::InvalidParameter(format!("weight {w} is not a nonnegative number")));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(Error::InvalidParameter(format!("weights sum to {total}, not 1")));
        }
        let mut order: Vec<usize> = (0..atoms.len()).collect();
        order.sort_by(|&a, &b| atoms[a].coords().partial_cmp(atoms[b].coords()).expect("finite coordinates"));
        if let Some(w) = order.windows(2).find(|w| atoms[w[0]] == atoms[w[1]]) {
            return Err(Error::InvalidParameter(format!("atoms {} and {} coincide", w[0], w[1])));
        }
        Ok(Self { atoms, weights })
    }

    /// Skips validation; for constructions whose invariants are checked elsewhere.
    pub fn from_parts_unchecked(atoms: Vec<Point>, weights: Vec<f64>) -> Self {
        Self { atoms, weights }
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.atoms[0].dim()
    }

    pub fn atoms(&self) -> &[Point] {
        &self.atoms
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Atom coordinates laid out row by row.
    pub fn flat_atoms(&self) -> Vec<f64> {
        self.atoms.iter().flat_map(|a| a.coords().iter().copied()).collect()
    }
}

/// `|x − y|^p` from the squared distance.
#[inline]
pub fn ground_cost(d2: f64, p: f64) -> f64 {
    if p == 2.0 {
        d2
    } else if p == 1.0 {
        d2.sqrt()
    } else {
        d2.powf(0.5 * p)
    }
}

pub fn check_exponent(p: f64) -> Result<()> {
    if p >= 1.0 && p.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain(format!("transport exponent p = {p} must satisfy p >= 1")))
    }
}

/// Sparse transport plan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coupling {
    pub n_source: usize,
    pub n_target: usize,
    pub entries: Vec<(usize, usize, f64)>,
}

impl Coupling {
    pub fn mass(&self, i: usize, j: usize) -> f64 {
        self.entries.iter().filter(|e| e.0 == i && e.1 == j).map(|e| e.2).sum()
    }

    pub fn row_sums(&self) -> Vec<f64> {
        let mut r = vec![0.0; self.n_source];
        self.entries.iter().for_each(|&(i, _, m)| r[i] += m);
        r
    }

    pub fn col_sums(&self) -> Vec<f64> {
        let mut c = vec![0.0; self.n_target];
        self.entries.iter().for_each(|&(_, j, m)| c[j] += m);
        c
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["source", "target", "mass"])?;
        for &(i, j, m) in &self.entries {
            wr.write_record([i.to_string(), j.to_string(), format!("{m:.17e}")])?;
        }
        wr.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Duals {
    pub f: Vec<f64>,
    pub g: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExactSolution {
    pub p: f64,
    /// Optimal value of `Σ π_ij |x_i − y_j|^p`.
    pub cost: f64,
    pub coupling: Coupling,
    pub duals: Duals,
    pub min_reduced_cost: f64,
    pub pivots: usize,
}

impl ExactSolution {
    pub fn wasserstein(&self) -> f64 {
        self.cost.max(0.0).powf(1.0 / self.p)
    }

    pub fn dual_value(&self, a: &[f64], b: &[f64]) -> f64 {
        let fa: f64 = self.duals.f.iter().zip(a).map(|(f, w)| f * w).sum();
        let gb: f64 = self.duals.g.iter().zip(b).map(|(g, w)| g * w).sum();
        fa + gb
    }

    pub fn duality_gap(&self, a: &[f64], b: &[f64]) -> f64 {
        (self.cost - self.dual_value(a, b)).abs()
    }
}

/// Exact optimal coupling between two discrete measures for the cost `|x − y|^p`.
pub fn solve_exact(a: &DiscreteMeasure, b: &DiscreteMeasure, p: f64) -> Result<ExactSolution> {
    check_exponent(p)?;
    if a.len() > MAX_EXACT_ATOMS || b.len() > MAX_EXACT_ATOMS {
        return Err(Error::Unsupported(format!("exact solver accepts at most {MAX_EXACT_ATOMS} atoms per side, got {} and {}", a.len(), b.len())));
    }
    if a.dim() != b.dim() {
        return Err(Error::InvalidParameter("measures live in different dimensions".into()));
    }
    let m = b.len();
    let data: Vec<f64> = a.atoms().iter().flat_map(|x| b.atoms().iter().map(move |y| ground_cost(dist2(x.coords(), y.coords()), p))).collect();
    let sol = simplex::solve(a.weights(), b.weights(), &DenseCost { m, data })?;
    Ok(ExactSolution {
        p,
        cost: sol.cost,
        coupling: Coupling { n_source: a.len(), n_target: m, entries: sol.flows },
        duals: Duals { f: sol.f, g: sol.g },
        min_reduced_cost: sol.min_reduced_cost,
        pivots: sol.pivots,
    })
}

/// `W_p(μ, ν_i)` for the cell atoms: only the pair `B_i^± → C_i^±` moves, by `r_i`, carrying `2σ_i`.
pub fn wasserstein_cell_perturbation(inst: &CellInstance, i: usize, p: f64) -> Result<f64> {
    inst.check_index(i)?;
    check_exponent(p)?;
    Ok(inst.r(i) * (2.0 * inst.sigma(i)).powf(1.0 / p))
}

/// `W_p(μ_0, μ_θ) = 2R sin(θ/2)` for the rotating pair.
pub fn wasserstein_rotating(theta: f64, radius: f64) -> Result<f64> {
    if !(theta.is_finite() && theta.abs() <= std::f64::consts::PI) {
        return Err(Error::Domain(format!("rotation angle {theta} must lie in [-pi, pi]")));
    }
    Ok(2.0 * radius * (0.5 * theta).sin().abs())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructureReport {
    pub cost: f64,
    pub expected_cost: f64,
    /// Largest mass placed off the index-aligned diagonal.
    pub off_diagonal_mass: f64,
    pub ok: bool,
}

/// Solve `μ → ν_i` exactly and check that the optimal plan matches atoms index by index.
pub fn coupling_structure_check(inst: &CellInstance, i: usize, p: f64) -> Result<StructureReport> {
    inst.check_index(i)?;
    let mu = TargetFamily::cell_atoms(inst).measure;
    let nu = TargetFamily::perturbed(inst, i)?.measure;
    let sol = solve_exact(&mu, &nu, p)?;
    let off = sol.coupling.entries.iter().filter(|e| e.0 != e.1).map(|e| e.2).fold(0.0, f64::max);
    let moved = inst.b_plus(i).dist(&inst.c_plus(i));
    let expected = 2.0 * inst.sigma(i) * moved.powf(p);
    let ok = off <= 1e-12 && (sol.cost - expected).abs() <= 1e-9 * expected;
    Ok(StructureReport { cost: sol.cost, expected_cost: expected, off_diagonal_mass: off, ok })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pt(x: f64, y: f64) -> Point {
        Point::new(vec![x, y]).unwrap()
    }

    #[test]
    fn rejects_bad_measures() {
        assert!(DiscreteMeasure::new(vec![pt(0.0, 0.0)], vec![0.9]).is_err());
        assert!(DiscreteMeasure::new(vec![pt(0.0, 0.0), pt(0.0, 0.0)], vec![0.5, 0.5]).is_err());
        assert!(DiscreteMeasure::new(vec![pt(0.0, 0.0), pt(1.0, 0.0)], vec![1.5, -0.5]).is_err());
    }

    #[test]
    fn rotating_closed_form() {
        assert!((wasserstein_rotating(std::f64::consts::PI, 1.0).unwrap() - 2.0).abs() < 1e-15);
        assert_eq!(wasserstein_rotating(0.0, 1.0).unwrap(), 0.0);
    }

    #[test]
    fn exponent_domain() {
        let a = DiscreteMeasure::new(vec![pt(0.0, 0.0)], vec![1.0]).unwrap();
        assert!(matches!(solve_exact(&a, &a, 0.5), Err(Error::Domain(_))));
    }

    #[test]
    fn csv_export() {
        let c = Coupling { n_source: 1, n_target: 1, entries: vec![(0, 0, 1.0)] };
        let mut buf = Vec::new();
        c.write_csv(&mut buf).unwrap();
        assert!(String::from_utf8(buf).unwrap().starts_with("source,target,mass\n0,0,"));
    }
}
