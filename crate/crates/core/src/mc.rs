//! Deterministic stratified Monte Carlo over a [`SourceDensity`].
//!
//! Samples are generated in fixed-size chunks; chunk `k` of stratum `s` draws from the
//! ChaCha stream `(purpose, s, k)` of the run seed, so results depend only on the seed
//! and not on the number of worker threads. Chunk statistics are merged in order.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::measures::SourceDensity;

pub const CHUNK: usize = 16_384;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "kebab-case")]
pub enum Method {
    ClosedForm,
    Quadrature,
    MonteCarlo { n: u64 },
}

impl Method {
    pub fn tag(&self) -> String {
        match self {
            Method::ClosedForm => "closed-form".into(),
            Method::Quadrature => "quadrature".into(),
            Method::MonteCarlo { n } => format!("monte-carlo({n})"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub se: f64,
    pub method: Method,
}

impl Estimate {
    pub fn exact(value: f64) -> Self {
        Self { value, se: 0.0, method: Method::ClosedForm }
    }

    /// `|value − target| ≤ k·se`, with a floor of a few ulps when `se` vanishes.
    pub fn within(&self, target: f64, k: f64) -> bool {
        (self.value - target).abs() <= k * self.se + 4.0 * f64::EPSILON * target.abs().max(self.value.abs())
    }

    /// Square root with a delta-method standard error.
    pub fn sqrt(&self) -> Self {
        let v = self.value.max(0.0).sqrt();
        let se = if v > 0.0 { self.se / (2.0 * v) } else { self.se.sqrt() };
        Self { value: v, se, method: self.method }
    }
}

/// Stable stream identifier for a `(purpose, stratum, chunk)` triple.
pub fn stream_id(purpose: u16, stratum: u64, chunk: u64) -> u64 {
    ((purpose as u64) << 48) ^ ((stratum & 0xffff) << 32) ^ (chunk & 0xffff_ffff)
}

/// Seed of the `index`-th independent sub-run of a run seeded with `seed` (SplitMix64 finalizer).
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed.wrapping_add(index.wrapping_add(1).wrapping_mul(0x9e37_79b9_7f4a_7c15));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn chunk_rng(seed: u64, purpose: u16, stratum: u64, chunk: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream_id(purpose, stratum, chunk));
    rng
}

/// How the sample budget is split over strata.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Allocation {
    Equal,
    Proportional,
}

pub fn allocate(weights: &[f64], n: usize, alloc: Allocation) -> Vec<usize> {
    let k = weights.len();
    match alloc {
        Allocation::Equal => vec![n.div_ceil(k).max(2); k],
        Allocation::Proportional => weights.iter().map(|w| ((w * n as f64).round() as usize).max(2)).collect(),
    }
}

/// Running per-component sums for one chunk or stratum.
#[derive(Debug, Clone)]
struct Moments {
    n: usize,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl Moments {
    fn new(k: usize) -> Self {
        Self { n: 0, mean: vec![0.0; k], m2: vec![0.0; k] }
    }

    fn push(&mut self, v: &[f64]) {
        self.n += 1;
        let nf = self.n as f64;
        for ((m, s), x) in self.mean.iter_mut().zip(self.m2.iter_mut()).zip(v) {
            let delta = x - *m;
            *m += delta / nf;
            *s += delta * (x - *m);
        }
    }

    fn merge(&mut self, o: &Moments) {
        if o.n == 0 {
            return;
        }
        let (na, nb) = (self.n as f64, o.n as f64);
        let n = na + nb;
        for k in 0..self.mean.len() {
            let delta = o.mean[k] - self.mean[k];
            self.mean[k] += delta * nb / n;
            self.m2[k] += o.m2[k] + delta * delta * na * nb / n;
        }
        self.n += o.n;
    }
}

/// Stratified estimate of `E_ρ[f]` for a vector-valued integrand with `k` components.
///
/// `f` writes its value into the provided slice (pre-zeroed). Returns one estimate per component.
pub fn stratified_vector<F>(density: &SourceDensity, n: usize, seed: u64, purpose: u16, alloc: Allocation, k: usize, f: F) -> Result<Vec<Estimate>>
where
    F: Fn(&[f64], &mut [f64]) -> Result<()> + Sync,
{
    let weights = density.strata().to_vec();
    let counts = allocate(&weights, n, alloc);
    let d = density.dim();
    let jobs: Vec<(usize, usize, usize)> = counts
        .iter()
        .enumerate()
        .flat_map(|(s, &ns)| (0..ns.div_ceil(CHUNK)).map(move |c| (s, c, CHUNK.min(ns - c * CHUNK))))
        .collect();
    let results: Vec<Result<(usize, Moments)>> = jobs
        .par_iter()
        .map(|&(s, c, len)| {
            let mut rng = chunk_rng(seed, purpose, s as u64, c as u64);
            let mut x = vec![0.0; d];
            let mut v = vec![0.0; k];
            let mut m = Moments::new(k);
            for _ in 0..len {
                density.sample_stratum(s, &mut rng, &mut x)?;
                v.iter_mut().for_each(|t| *t = 0.0);
                f(&x, &mut v)?;
                m.push(&v);
            }
            Ok((s, m))
        })
        .collect();
    let mut per_stratum: Vec<Moments> = (0..weights.len()).map(|_| Moments::new(k)).collect();
    for r in results {
        let (s, m) = r?;
        per_stratum[s].merge(&m);
    }
    let total: usize = counts.iter().sum();
    Ok((0..k)
        .map(|j| {
            let mut value = 0.0;
            let mut var = 0.0;
            for (w, m) in weights.iter().zip(&per_stratum) {
                value += w * m.mean[j];
                if m.n > 1 {
                    var += w * w * (m.m2[j] / (m.n as f64 - 1.0)) / m.n as f64;
                }
            }
            Estimate { value, se: var.sqrt(), method: Method::MonteCarlo { n: total as u64 } }
        })
        .collect())
}

/// Stratified estimate of `E_ρ[f]` for a scalar integrand.
pub fn stratified_mean<F>(density: &SourceDensity, n: usize, seed: u64, purpose: u16, alloc: Allocation, f: F) -> Result<Estimate>
where
    F: Fn(&[f64]) -> Result<f64> + Sync,
{
    let mut v = stratified_vector(density, n, seed, purpose, alloc, 1, |x, out| {
        out[0] = f(x)?;
        Ok(())
    })?;
    Ok(v.remove(0))
}

/// Apply `f(stratum, flat_chunk)` to every sample chunk, in parallel, returning the results
/// in a fixed order (stratum by stratum, chunk by chunk) together with the per-stratum counts.
pub fn map_chunks<T, F>(density: &SourceDensity, n: usize, seed: u64, purpose: u16, alloc: Allocation, f: F) -> Result<(Vec<(usize, T)>, Vec<usize>)>
where
    T: Send,
    F: Fn(usize, &[f64]) -> Result<T> + Sync,
{
    let d = density.dim();
    map_chunks_with(density, n, seed, purpose, alloc, |s, len, rng| {
        let mut buf = vec![0.0; len * d];
        for p in buf.chunks_mut(d) {
            density.sample_stratum(s, rng, p)?;
        }
        f(s, &buf)
    })
}

/// Run `f(stratum, chunk_len, rng)` for every chunk with its dedicated random stream.
fn map_chunks_with<T, F>(density: &SourceDensity, n: usize, seed: u64, purpose: u16, alloc: Allocation, f: F) -> Result<(Vec<(usize, T)>, Vec<usize>)>
where
    T: Send,
    F: Fn(usize, usize, &mut ChaCha8Rng) -> Result<T> + Sync,
{
    let counts = allocate(density.strata(), n, alloc);
    let jobs: Vec<(usize, usize, usize)> = counts
        .iter()
        .enumerate()
        .flat_map(|(s, &ns)| (0..ns.div_ceil(CHUNK)).map(move |c| (s, c, CHUNK.min(ns - c * CHUNK))))
        .collect();
    let out: Vec<Result<(usize, T)>> = jobs
        .par_iter()
        .map(|&(s, c, len)| {
            let mut rng = chunk_rng(seed, purpose, s as u64, c as u64);
            Ok((s, f(s, len, &mut rng)?))
        })
        .collect();
    Ok((out.into_iter().collect::<Result<Vec<_>>>()?, counts))
}

/// Draw `n` points split over strata, returning flat coordinates and per-point weights
/// (stratum weight divided by the stratum's sample count).
pub fn stratified_points(density: &SourceDensity, n: usize, seed: u64, purpose: u16, alloc: Allocation) -> Result<(Vec<f64>, Vec<f64>)> {
    let weights = density.strata().to_vec();
    let (chunks, counts) = map_chunks(density, n, seed, purpose, alloc, |_, buf| Ok(buf.to_vec()))?;
    let d = density.dim();
    let total: usize = counts.iter().sum();
    let mut coords = Vec::with_capacity(total * d);
    let mut w = Vec::with_capacity(total);
    for (s, buf) in chunks {
        let pw = weights[s] / counts[s] as f64;
        w.extend(std::iter::repeat_n(pw, buf.len() / d));
        coords.extend(buf);
    }
    Ok((coords, w))
}

/// Like [`stratified_points`], but strata that are boxes are filled chunk by chunk with a
/// Latin hypercube design, so every coordinate is evenly stratified within each chunk.
pub fn latin_points(density: &SourceDensity, n: usize, seed: u64, purpose: u16) -> Result<(Vec<f64>, Vec<f64>)> {
    let d = density.dim();
    let mut probe = vec![0.5; d];
    if !density.map_unit_stratum(0, &mut probe) {
        return stratified_points(density, n, seed, purpose, Allocation::Equal);
    }
    let weights = density.strata().to_vec();
    let (chunks, counts) = map_chunks_with(density, n, seed, purpose, Allocation::Equal, |s, len, rng| {
        let mut buf = vec![0.0; len * d];
        let mut perm: Vec<usize> = (0..len).collect();
        for k in 0..d {
            perm.shuffle(rng);
            for (idx, &cell) in perm.iter().enumerate() {
                buf[idx * d + k] = (cell as f64 + rng.random::<f64>()) / len as f64;
            }
        }
        for p in buf.chunks_mut(d) {
            density.map_unit_stratum(s, p);
        }
        Ok(buf)
    })?;
    let mut coords = Vec::with_capacity(counts.iter().sum::<usize>() * d);
    let mut w = Vec::with_capacity(counts.iter().sum());
    for (s, buf) in chunks {
        let pw = weights[s] / counts[s] as f64;
        w.extend(std::iter::repeat_n(pw, buf.len() / d));
        coords.extend(buf);
    }
    Ok((coords, w))
}
