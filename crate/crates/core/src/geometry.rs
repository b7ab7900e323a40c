//! Dimension-generic primitives: points, boxes, cones, half-space tests and sphere areas.

use serde::{Deserialize, Serialize};
use statrs::function::beta::beta_reg;
use statrs::function::gamma::gamma;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Sign {
    Plus,
    Minus,
}

impl Sign {
    pub fn value(self) -> f64 {
        match self {
            Sign::Plus => 1.0,
            Sign::Minus => -1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Side {
    Positive,
    Negative,
    Boundary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Point {
    coords: Vec<f64>,
}

impl Point {
    pub fn new(coords: Vec<f64>) -> Result<Self> {
        if coords.len() < 2 {
            return Err(Error::InvalidDimension(coords.len()));
        }
        if let Some(c) = coords.iter().find(|c| !c.is_finite()) {
            return Err(Error::Domain(format!("non-finite coordinate {c}")));
        }
        Ok(Self { coords })
    }

    /// Point whose first two coordinates are `(x1, x2)` and whose others are zero.
    pub fn planar(x1: f64, x2: f64, d: usize) -> Result<Self> {
        check_dim(d)?;
        let mut coords = vec![0.0; d];
        coords[0] = x1;
        coords[1] = x2;
        Self::new(coords)
    }

    pub fn origin(d: usize) -> Result<Self> {
        check_dim(d)?;
        Ok(Self { coords: vec![0.0; d] })
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn into_coords(self) -> Vec<f64> {
        self.coords
    }

    pub fn neg(&self) -> Point {
        Point { coords: self.coords.iter().map(|c| -c).collect() }
    }

    pub fn translate(&self, v: &[f64]) -> Point {
        Point { coords: self.coords.iter().zip(v).map(|(a, b)| a + b).collect() }
    }

    pub fn dist(&self, other: &Point) -> f64 {
        dist2(&self.coords, &other.coords).sqrt()
    }
}

pub fn check_dim(d: usize) -> Result<()> {
    if d < 2 {
        Err(Error::InvalidDimension(d))
    } else {
        Ok(())
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Area σ_{d−1} of the unit sphere in ℝ^d.
pub fn sphere_area(d: usize) -> Result<f64> {
    check_dim(d)?;
    let h = d as f64 / 2.0;
    Ok(2.0 * std::f64::consts::PI.powf(h) / gamma(h))
}

/// Lebesgue volume of the unit ball in ℝ^d.
pub fn ball_volume(d: usize) -> Result<f64> {
    Ok(sphere_area(d)? / d as f64)
}

/// Probability that a uniform direction on the unit sphere of ℝ^d has `⟨u, axis⟩ > t`.
pub fn cap_fraction(d: usize, t: f64) -> Result<f64> {
    check_dim(d)?;
    if !(-1.0..=1.0).contains(&t) {
        return Err(Error::Domain(format!("cap cosine {t} outside [-1, 1]")));
    }
    let upper = 0.5 * beta_reg((d as f64 - 1.0) / 2.0, 0.5, 1.0 - t * t);
    Ok(if t >= 0.0 { upper } else { 1.0 - upper })
}

/// The rotating target atom `B_θ = (R sin θ, R cos θ, 0, …)` or its antipode.
pub fn target_atom(theta: f64, r: f64, sign: Sign, d: usize) -> Result<Point> {
    if !(r > 0.0) {
        return Err(Error::Domain(format!("radius must be positive, got {r}")));
    }
    let s = sign.value();
    Point::planar(s * r * theta.sin(), s * r * theta.cos(), d)
}

/// Sign of `⟨x, B_θ⟩`; the radius only rescales the product, so it is not used.
pub fn halfspace_side(x: &[f64], theta: f64, r: f64) -> Side {
    debug_assert!(r > 0.0);
    let v = x[0] * theta.sin() + x[1] * theta.cos();
    if v > 0.0 {
        Side::Positive
    } else if v < 0.0 {
        Side::Negative
    } else {
        Side::Boundary
    }
}

/// Open circular cone around `axis`, cut by the half-space `sign·(x − apex)_k > 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cone {
    apex: Point,
    axis: Vec<f64>,
    cos_half_angle: f64,
    constraint_index: usize,
    constraint_sign: Sign,
}

impl Cone {
    pub fn new(apex: Point, axis: Vec<f64>, cos_half_angle: f64, constraint_index: usize, constraint_sign: Sign) -> Result<Self> {
        let d = apex.dim();
        if axis.len() != d || constraint_index >= d {
            return Err(Error::InvalidParameter("cone axis or constraint index does not match the dimension".into()));
        }
        let n = norm(&axis);
        if !((n - 1.0).abs() < 1e-12) {
            return Err(Error::InvalidParameter(format!("cone axis must have unit norm, got {n}")));
        }
        if !(cos_half_angle > 0.0 && cos_half_angle < 1.0) {
            return Err(Error::InvalidParameter(format!("half-angle cosine {cos_half_angle} outside (0, 1)")));
        }
        Ok(Self { apex, axis, cos_half_angle, constraint_index, constraint_sign })
    }

    /// The cone at `A′ = −e₁` with axis `e₁`, aperture 60° and `x₂ > 0`.
    pub fn blowup_cone(d: usize) -> Result<Self> {
        let apex = Point::planar(-1.0, 0.0, d)?;
        let mut axis = vec![0.0; d];
        axis[0] = 1.0;
        Self::new(apex, axis, 0.5, 1, Sign::Plus)
    }

    pub fn apex(&self) -> &Point {
        &self.apex
    }

    pub fn axis(&self) -> &[f64] {
        &self.axis
    }

    pub fn cos_half_angle(&self) -> f64 {
        self.cos_half_angle
    }

    pub fn contains(&self, x: &[f64]) -> Result<bool> {
        let v: Vec<f64> = x.iter().zip(self.apex.coords()).map(|(a, b)| a - b).collect();
        let n = norm(&v);
        if n == 0.0 {
            return Err(Error::UndefinedDirection);
        }
        let inside_cap = dot(&v, &self.axis) / n > self.cos_half_angle;
        let inside_half = self.constraint_sign.value() * v[self.constraint_index] > 0.0;
        Ok(inside_cap && inside_half)
    }

    /// Fraction of the full solid angle covered by the cone.
    ///
    /// Exact when the cutting half-space contains the axis in its boundary, which
    /// halves the circular cap.
    pub fn solid_angle_fraction(&self) -> Result<f64> {
        if self.axis[self.constraint_index] != 0.0 {
            return Err(Error::Unsupported("solid angle of a cone whose cut is not parallel to its axis".into()));
        }
        Ok(0.5 * cap_fraction(self.apex.dim(), self.cos_half_angle)?)
    }
}

/// Translate `anchor ± Q(ℓ, r)` of the box `0 < x₁ < ℓ, |x₂| < r/2, |x_k| < 1/2 (k ≥ 3)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxRegion {
    anchor: Point,
    length: f64,
    width: f64,
    orientation: Sign,
}

impl BoxRegion {
    pub fn new(anchor: Point, length: f64, width: f64, orientation: Sign) -> Result<Self> {
        if !(length > 0.0 && width > 0.0) {
            return Err(Error::InvalidParameter(format!("box needs positive length and width, got {length}, {width}")));
        }
        Ok(Self { anchor, length, width, orientation })
    }

    pub fn anchor(&self) -> &Point {
        &self.anchor
    }

    pub fn length(&self) -> f64 {
        self.length
    }

    pub fn width(&self) -> f64 {
        self.width
    }

    pub fn orientation(&self) -> Sign {
        self.orientation
    }

    pub fn dim(&self) -> usize {
        self.anchor.dim()
    }

    pub fn volume(&self) -> f64 {
        self.length * self.width
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        let s = self.orientation.value();
        let a = self.anchor.coords();
        let y1 = s * (x[0] - a[0]);
        let y2 = s * (x[1] - a[1]);
        if !(y1 > 0.0 && y1 < self.length && y2.abs() < self.width / 2.0) {
            return false;
        }
        x.iter().zip(a).skip(2).all(|(xi, ai)| (xi - ai).abs() < 0.5)
    }

    /// Replace unit-cube coordinates `t ∈ [0,1)^d` by their image in the box.
    pub fn map_unit(&self, t: &mut [f64]) {
        let s = self.orientation.value();
        let a = self.anchor.coords();
        t[0] = a[0] + s * t[0] * self.length;
        t[1] = a[1] + s * (t[1] - 0.5) * self.width;
        for k in 2..t.len() {
            t[k] = a[k] + s * (t[k] - 0.5);
        }
    }

    pub fn midpoint(&self) -> Point {
        let mut t = vec![0.5; self.dim()];
        self.map_unit(&mut t);
        Point { coords: t }
    }
}
