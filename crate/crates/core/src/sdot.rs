//! Semi-discrete transport by sample-average approximation.
//!
//! The source density is replaced by a stratified empirical measure, the discrete problem
//! is solved exactly, and the target-side potentials become Laguerre weights. Among all
//! weights consistent with the optimal empirical assignment, the solver returns the centre
//! of the feasible box so that cell boundaries sit midway between training samples.

use serde::{Deserialize, Serialize};

use crate::constructions::TargetFamily;
use crate::discrete_ot::{simplex, DiscreteMeasure};
use crate::error::{Error, Result};
use crate::geometry::dist2;
use crate::mc::{self, Allocation, Estimate, Method};
use crate::measures::{DensityKind, SourceDensity};
use crate::transport_maps::{cell_scale, Provenance, TransportMap};

pub const MIN_TRAINING_SAMPLES: usize = 10_000;
pub const MAX_TARGET_ATOMS: usize = 1_000;
/// Disagreements farther than this many local scales from the oracle boundary count as interior.
pub const BOUNDARY_TOLERANCE: f64 = 1e-2;
const ATLAS_LIMIT: usize = 1_000;

const PURPOSE_TRAIN: u16 = 0x0201;
const PURPOSE_VALIDATE: u16 = 0x0202;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LaguerreWeights {
    pub psi: Vec<f64>,
    pub target: DiscreteMeasure,
}

impl LaguerreWeights {
    /// Shift so that the first weight is zero.
    pub fn normalized(mut self) -> Self {
        let base = self.psi[0];
        self.psi.iter_mut().for_each(|p| *p -= base);
        self
    }

    pub fn shifted(&self, c: f64) -> Self {
        Self { psi: self.psi.iter().map(|p| p + c).collect(), target: self.target.clone() }
    }

    /// `argmin_j |x − y_j|² − ψ_j`, lowest index on ties.
    pub fn assign(&self, x: &[f64]) -> usize {
        let mut best = 0;
        let mut best_v = f64::INFINITY;
        for (j, (y, p)) in self.target.atoms().iter().zip(&self.psi).enumerate() {
            let v = dist2(x, y.coords()) - p;
            if v < best_v {
                best_v = v;
                best = j;
            }
        }
        best
    }

    /// Distance from `x` to the nearest face of its Laguerre cell.
    pub fn boundary_distance(&self, x: &[f64]) -> f64 {
        let a = self.assign(x);
        let atoms = self.target.atoms();
        let ya = atoms[a].coords();
        let va = dist2(x, ya) - self.psi[a];
        atoms
            .iter()
            .zip(&self.psi)
            .enumerate()
            .filter(|(k, _)| *k != a)
            .map(|(_, (y, p))| (dist2(x, y.coords()) - p - va) / (2.0 * dist2(y.coords(), ya).sqrt()))
            .fold(f64::INFINITY, f64::min)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SdotSolution {
    pub weights: LaguerreWeights,
    #[serde(skip)]
    pub target: TargetFamily,
    pub training_samples: usize,
    pub distinct_samples: usize,
    pub seed: u64,
    pub pivots: usize,
    /// Optimal empirical transport cost for `|x − y|²`.
    pub cost: f64,
}

impl TransportMap for SdotSolution {
    fn assign(&self, x: &[f64]) -> Result<usize> {
        Ok(self.weights.assign(x))
    }

    fn target(&self) -> &TargetFamily {
        &self.target
    }

    fn provenance(&self) -> Provenance {
        Provenance::Solver
    }

    fn boundary_distance(&self, x: &[f64]) -> Result<f64> {
        Ok(self.weights.boundary_distance(x))
    }
}

/// Length unit of the source near `x`: the cell width `r_i` for cell densities, 1 otherwise.
pub fn local_scale(density: &SourceDensity, x: &[f64]) -> f64 {
    match density.kind() {
        DensityKind::UniformCellUnion(inst) => cell_scale(inst, x),
        _ => 1.0,
    }
}

/// Draw `n` training samples, merge duplicates, and return them sorted lexicographically.
fn training_set(density: &SourceDensity, n: usize, seed: u64) -> Result<(Vec<f64>, Vec<f64>)> {
    let d = density.dim();
    let (coords, w) = mc::latin_points(density, n, seed, PURPOSE_TRAIN)?;
    let mut order: Vec<usize> = (0..w.len()).collect();
    order.sort_by(|&a, &b| coords[a * d..(a + 1) * d].partial_cmp(&coords[b * d..(b + 1) * d]).expect("finite samples"));
    let mut xs = Vec::with_capacity(coords.len());
    let mut ws: Vec<f64> = Vec::with_capacity(w.len());
    for &k in &order {
        let x = &coords[k * d..(k + 1) * d];
        if !ws.is_empty() && &xs[xs.len() - d..] == x {
            *ws.last_mut().expect("non-empty") += w[k];
        } else {
            xs.extend_from_slice(x);
            ws.push(w[k]);
        }
    }
    Ok((xs, ws))
}

pub fn solve_sdot(density: &SourceDensity, target: &TargetFamily, n: usize, seed: u64) -> Result<SdotSolution> {
    let m = target.measure.len();
    if m > MAX_TARGET_ATOMS {
        return Err(Error::Unsupported(format!("semi-discrete solver accepts at most {MAX_TARGET_ATOMS} atoms, got {m}")));
    }
    if n < MIN_TRAINING_SAMPLES {
        return Err(Error::InvalidParameter(format!("need at least {MIN_TRAINING_SAMPLES} training samples, got {n}")));
    }
    if target.measure.dim() != density.dim() {
        return Err(Error::InvalidParameter("target and source dimensions differ".into()));
    }
    let d = density.dim();
    let (xs, ws) = training_set(density, n, seed)?;
    let ys = target.measure.flat_atoms();
    let cost = |i: usize, j: usize| dist2(&xs[i * d..(i + 1) * d], &ys[j * d..(j + 1) * d]);
    let total: f64 = ws.iter().sum();
    let b: Vec<f64> = target.measure.weights().iter().map(|w| w * total).collect();
    let sol = simplex::solve(&ws, &b, &cost)?;

    let mut gap = vec![f64::INFINITY; m * m];
    for &(i, a, _) in &sol.flows {
        let ca = cost(i, a);
        for k in 0..m {
            if k != a {
                let v = cost(i, k) - ca;
                if v < gap[a * m + k] {
                    gap[a * m + k] = v;
                }
            }
        }
    }
    let psi = centre_of_feasible_weights(&gap, m, &sol.g);
    Ok(SdotSolution {
        weights: LaguerreWeights { psi, target: target.measure.clone() }.normalized(),
        target: target.clone(),
        training_samples: mc::allocate(density.strata(), n, Allocation::Equal).iter().sum(),
        distinct_samples: ws.len(),
        seed,
        pivots: sol.pivots,
        cost: sol.cost / total,
    })
}

/// Weights `ψ` with `ψ_k − ψ_a ≤ gap[a][k]` for every pair, taken midway between the largest
/// and smallest feasible value of each coordinate (with `ψ_0 = 0`). Falls back to `fallback`
/// for atoms left unconstrained.
fn centre_of_feasible_weights(gap: &[f64], m: usize, fallback: &[f64]) -> Vec<f64> {
    let shortest = |forward: bool| {
        let mut dist = vec![f64::INFINITY; m];
        dist[0] = 0.0;
        for _ in 0..m {
            let mut changed = false;
            for a in 0..m {
                for k in 0..m {
                    let (from, to) = if forward { (a, k) } else { (k, a) };
                    let w = gap[a * m + k];
                    if dist[from].is_finite() && w.is_finite() && dist[from] + w < dist[to] {
                        dist[to] = dist[from] + w;
                        changed = true;
                    }
                }
            }
            if !changed {
                break;
            }
        }
        dist
    };
    let upper = shortest(true);
    let lower: Vec<f64> = shortest(false).iter().map(|v| -v).collect();
    (0..m)
        .map(|k| if upper[k].is_finite() && lower[k].is_finite() { 0.5 * (upper[k] + lower[k]) } else { fallback[k] - fallback[0] })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Disagreement {
    pub point: Vec<f64>,
    pub assigned: usize,
    pub expected: usize,
    pub boundary_distance: f64,
    pub local_scale: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementReport {
    pub samples: usize,
    pub seed: u64,
    /// `ρ`-weighted probability that both maps pick the same atom.
    pub agreement: Estimate,
    pub disagreements: usize,
    /// Disagreements farther than the boundary tolerance from the oracle boundary.
    pub interior: usize,
    /// Largest oracle-boundary distance of a disagreement, in local-scale units.
    pub max_scaled_distance: f64,
    pub atlas: Vec<Disagreement>,
}

impl AgreementReport {
    pub fn passes(&self, min_rate: f64) -> bool {
        self.agreement.value >= min_rate && self.interior == 0
    }
}

/// Compare `map` with `oracle` on `n` fresh samples of `density`.
pub fn compare_to_oracle(map: &dyn TransportMap, oracle: &dyn TransportMap, density: &SourceDensity, n: usize, seed: u64) -> Result<AgreementReport> {
    let d = density.dim();
    type Chunk = (usize, usize, Vec<Disagreement>);
    let (chunks, counts) = mc::map_chunks(density, n, seed, PURPOSE_VALIDATE, Allocation::Equal, |_, buf| {
        let mut agree = 0usize;
        let mut total = 0usize;
        let mut atlas = Vec::new();
        for x in buf.chunks(d) {
            let a = map.assign(x)?;
            let e = oracle.assign(x)?;
            total += 1;
            if a == e {
                agree += 1;
            } else {
                atlas.push(Disagreement {
                    point: x.to_vec(),
                    assigned: a,
                    expected: e,
                    boundary_distance: oracle.boundary_distance(x)?,
                    local_scale: oracle.local_scale(x),
                });
            }
        }
        Ok::<Chunk, Error>((agree, total, atlas))
    })?;
    let weights = density.strata();
    let mut per = vec![(0usize, 0usize); weights.len()];
    let mut atlas = Vec::new();
    let mut disagreements = 0;
    let mut interior = 0;
    let mut max_scaled = 0.0f64;
    for (s, (agree, total, list)) in chunks {
        per[s].0 += agree;
        per[s].1 += total;
        for dis in list {
            disagreements += 1;
            let scaled = dis.boundary_distance / dis.local_scale;
            max_scaled = max_scaled.max(scaled);
            if scaled > BOUNDARY_TOLERANCE {
                interior += 1;
            }
            if atlas.len() < ATLAS_LIMIT {
                atlas.push(dis);
            }
        }
    }
    let mut miss = 0.0;
    let mut var = 0.0;
    for (w, &(agree, total)) in weights.iter().zip(&per) {
        let q = (total - agree) as f64 / total as f64;
        miss += w * q;
        if total > 1 {
            var += w * w * q * (1.0 - q) / (total as f64 - 1.0);
        }
    }
    let value = 1.0 - miss;
    let samples = counts.iter().sum();
    Ok(AgreementReport {
        samples,
        seed,
        agreement: Estimate { value, se: var.sqrt(), method: Method::MonteCarlo { n: samples as u64 } },
        disagreements,
        interior,
        max_scaled_distance: max_scaled,
        atlas,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Point;

    #[test]
    fn centre_is_feasible() {
        let m = 3;
        let gap = vec![f64::INFINITY, 1.0, 2.0, 0.5, f64::INFINITY, 0.25, -1.0, 0.75, f64::INFINITY];
        let psi = centre_of_feasible_weights(&gap, m, &[0.0; 3]);
        for a in 0..m {
            for k in 0..m {
                if a != k {
                    assert!(psi[k] - psi[a] <= gap[a * m + k] + 1e-15);
                }
            }
        }
        assert_eq!(psi[0], 0.0);
    }

    #[test]
    fn shift_invariance() {
        let atoms = vec![Point::new(vec![0.0, 1.0]).unwrap(), Point::new(vec![0.0, -1.0]).unwrap(), Point::new(vec![2.0, 0.0]).unwrap()];
        let target = DiscreteMeasure::new(atoms, vec![0.2, 0.3, 0.5]).unwrap();
        let w = LaguerreWeights { psi: vec![0.0, 0.3, -0.7], target };
        let s = w.shifted(12.5);
        for k in 0..200 {
            let x = [(k as f64 * 0.37).sin() * 2.0, (k as f64 * 0.11).cos() * 2.0];
            assert_eq!(w.assign(&x), s.assign(&x));
        }
    }
}
