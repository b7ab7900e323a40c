use std::f64::consts::{E, PI};

use approx::assert_relative_eq;
use otstab_core::geometry::{self, Cone, Point};
use otstab_core::mc::{self, Allocation};
use otstab_core::measures::{self, DensityKind, SamplerState, SourceDensity};
use otstab_core::CellInstance;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::sync::Arc;

/// Composite Simpson rule with `n` (even) panels.
fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for k in 1..n {
        s += f(a + k as f64 * h) * if k % 2 == 1 { 4.0 } else { 2.0 };
    }
    s * h / 3.0
}

/// `∫₀ˢ f(t) t dt` in d = 2 for the log profile, written out by hand.
fn log_radial(s: f64) -> f64 {
    if s <= 1.0 / E {
        1.0 / s.ln().abs()
    } else {
        2.0 + s.ln()
    }
}

/// Total unnormalized mass in d = 2 from polar coordinates around each pole.
///
/// Around `A′ = (−1, 0)` a ray at angle φ stays in the half-ball `x₁ < 0` while
/// `s cos φ < 1` and in the unit ball while `s < 2 cos φ`.
fn polar_total(radial: impl Fn(f64) -> f64) -> f64 {
    let reach = |phi: f64| {
        let c = phi.cos();
        (2.0 * c).min(1.0 / c)
    };
    let kink = (0.5f64).sqrt().acos();
    let g = |phi: f64| radial(reach(phi));
    let half = simpson(&g, 0.0, kink, 20_000) + simpson(&g, kink, PI / 2.0 - 1e-12, 20_000);
    2.0 * 2.0 * half
}

#[test]
fn sphere_area_matches_monte_carlo_volume() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for d in 2..=4usize {
        let n = 400_000;
        let hits = (0..n).filter(|_| (0..d).map(|_| rng.random_range(-1.0f64..1.0).powi(2)).sum::<f64>() < 1.0).count();
        let p = hits as f64 / n as f64;
        let scale = d as f64 * 2f64.powi(d as i32);
        let est = scale * p;
        let se = scale * (p * (1.0 - p) / n as f64).sqrt();
        let area = geometry::sphere_area(d).unwrap();
        assert!((est - area).abs() <= 3.0 * se, "d={d}: {est} ± {se} vs {area}");
    }
    assert!(geometry::sphere_area(1).is_err());
}

#[test]
fn log_normalization_matches_polar_quadrature() {
    let rho = SourceDensity::log_blowup(2).unwrap();
    let z = polar_total(log_radial);
    assert_relative_eq!(rho.c0(), 1.0 / z, max_relative = 1e-6);
    assert_relative_eq!(rho.c0(), 0.0868104, max_relative = 1e-5);
    assert!(rho.normalization().rel_error <= measures::NORMALIZATION_RTOL);
}

#[test]
fn poly_normalization_matches_polar_quadrature() {
    let rho = SourceDensity::poly_blowup(2, 1.0).unwrap();
    let z = polar_total(|s| s);
    assert_relative_eq!(rho.c0(), 1.0 / z, max_relative = 1e-6);
}

#[test]
fn total_mass_is_one_for_flat_kinds() {
    let cells = Arc::new(CellInstance::choose_sequences(6, 2).unwrap());
    for rho in [SourceDensity::uniform_ball(3).unwrap(), SourceDensity::uniform_cells(cells)] {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let d = rho.dim();
        let (lo, hi) = rho.cell_instance().map(|c| c.x1_extent()).unwrap_or((-1.0, 1.0));
        let vol = (hi - lo) * 2f64.powi(d as i32 - 1);
        let n = 400_000;
        let mut x = vec![0.0; d];
        let (mut sum, mut sq) = (0.0, 0.0);
        for _ in 0..n {
            x[0] = rng.random_range(lo..hi);
            for c in x.iter_mut().skip(1) {
                *c = rng.random_range(-1.0..1.0);
            }
            let v = rho.density(&x) * vol;
            sum += v;
            sq += v * v;
        }
        let mean = sum / n as f64;
        let se = ((sq / n as f64 - mean * mean) / n as f64).sqrt();
        assert!((mean - 1.0).abs() <= 3.0 * se, "{}: {mean} ± {se}", rho.kind().name());
    }
}

#[test]
fn sector_mass_closed_forms() {
    let rho = SourceDensity::log_blowup(2).unwrap();
    let m = measures::sector_mass(&rho, (-10.0f64).exp(), 1.0).unwrap();
    assert_relative_eq!(m.value, rho.c0() * 2.0 * PI / 10.0, max_relative = 1e-14);
    let poly = SourceDensity::poly_blowup(2, 0.5).unwrap();
    let m = measures::sector_mass(&poly, 0.01, 1.0).unwrap();
    assert_relative_eq!(m.value, poly.c0() * 2.0 * PI * 0.1 / 0.5, max_relative = 1e-12);
    assert!(measures::sector_mass(&rho, 0.0, 1.0).is_err());
}

#[test]
fn sector_mass_agrees_with_radial_quadrature() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let kinds = [(SourceDensity::log_blowup(2).unwrap(), 2usize), (SourceDensity::log_blowup(3).unwrap(), 3), (SourceDensity::poly_blowup(2, 0.7).unwrap(), 2)];
    for _ in 0..20 {
        let (rho, d) = &kinds[rng.random_range(0..kinds.len())];
        let s: f64 = (rng.random_range(-12.0f64..0.0)).exp();
        let frac: f64 = rng.random_range(0.05..1.0);
        let profile = |t: f64| measures::radial_profile(rho.kind(), *d, t).unwrap() * t.powi(*d as i32 - 1);
        // Integrate in log t from far below s; the tail below is added analytically.
        let lo = s * 1e-8;
        let body = simpson(|u: f64| profile(u.exp()) * u.exp(), lo.ln(), s.ln(), 40_000);
        let tail = match rho.kind() {
            DensityKind::LogBlowup => 1.0 / lo.ln().abs(),
            DensityKind::PolyBlowup { delta } => lo.powf(*delta) / delta,
            _ => unreachable!(),
        };
        let expected = rho.c0() * frac * geometry::sphere_area(*d).unwrap() * (body + tail);
        let got = measures::sector_mass(rho, s, frac).unwrap().value;
        assert_relative_eq!(got, expected, max_relative = 1e-3);
    }
}

#[test]
fn cone_fraction_by_direction_sampling() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for d in [2usize, 3] {
        let cone = Cone::blowup_cone(d).unwrap();
        let n = 200_000;
        let mut hits = 0;
        let mut u = vec![0.0; d];
        for _ in 0..n {
            for c in u.iter_mut() {
                *c = rng.sample::<f64, _>(rand_distr::StandardNormal);
            }
            let x: Vec<f64> = cone.apex().coords().iter().zip(&u).map(|(a, b)| a + b).collect();
            if cone.contains(&x).unwrap() {
                hits += 1;
            }
        }
        let p = hits as f64 / n as f64;
        let se = (p * (1.0 - p) / n as f64).sqrt();
        let f = cone.solid_angle_fraction().unwrap();
        assert!((p - f).abs() <= 3.0 * se, "d={d}: {p} vs {f}");
        if d == 2 {
            assert_relative_eq!(f, 1.0 / 6.0, max_relative = 1e-12);
        }
    }
}

#[test]
fn uniform_cells_box_masses_from_iid_samples() {
    let inst = Arc::new(CellInstance::choose_sequences(6, 2).unwrap());
    let rho = SourceDensity::uniform_cells(inst.clone());
    let mut state = SamplerState::new(21);
    let n = 1_000_000;
    let pts = measures::sample(&rho, &mut state, n).unwrap();
    for i in 1..=inst.n() {
        let b = inst.box_plus(i);
        let hits = pts.iter().filter(|x| b.contains(x.coords())).count();
        let p = hits as f64 / n as f64;
        let se = (p * (1.0 - p) / n as f64).sqrt().max(1.0 / n as f64);
        assert!((p - inst.sigma(i)).abs() <= 3.0 * se, "box {i}: {p} vs {}", inst.sigma(i));
    }
}

#[test]
fn pole_ball_mass_matches_sampling() {
    let rho = SourceDensity::log_blowup(2).unwrap();
    let s = (-10.0f64).exp();
    let exact = measures::pole_ball_mass(&rho, s).unwrap().value;
    // The support clips B(A′, s) to roughly half a disc.
    assert_relative_eq!(exact, 0.5 * measures::sector_mass(&rho, s, 1.0).unwrap().value, max_relative = 1e-3);
    let est = mc::stratified_mean(&rho, 10_000_000, 4, 0x7e57, Allocation::Equal, |x| Ok(if (x[0] + 1.0).hypot(x[1]) < s { 1.0 } else { 0.0 })).unwrap();
    assert!(est.within(exact, 3.0), "{est:?} vs {exact}");
}

/// `∫ ρ` over `[x0, x1] × [y0, y1] ∩ B(0, 1)` by nested Simpson, splitting at the kinks of the disc edge.
fn box_mass(rho: &SourceDensity, x0: f64, x1: f64, y0: f64, y1: f64) -> f64 {
    let inner = |x: f64| {
        let h = (1.0 - x * x).max(0.0).sqrt();
        let (a, b) = (y0.max(-h), y1.min(h));
        if a >= b {
            0.0
        } else {
            simpson(|y| rho.density(&[x, y]), a, b, 400)
        }
    };
    let mut cuts = vec![x0, x1];
    for y in [y0, y1] {
        if y.abs() < 1.0 {
            let c = (1.0 - y * y).sqrt();
            cuts.extend([c, -c]);
        }
    }
    cuts.retain(|c| *c >= x0 && *c <= x1);
    cuts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    cuts.windows(2).map(|w| simpson(inner, w[0], w[1], 400)).sum()
}

#[test]
fn random_box_masses_match_quadrature() {
    let rho = SourceDensity::log_blowup(2).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut boxes = Vec::new();
    while boxes.len() < 50 {
        let (x0, y0): (f64, f64) = (rng.random_range(-1.0..0.9), rng.random_range(-1.0..0.9));
        let (w, h) = (rng.random_range(0.05..0.5), rng.random_range(0.05..0.5));
        let (x1, y1) = ((x0 + w).min(1.0), (y0 + h).min(1.0));
        // Keep the singular points well outside every box.
        let far = |px: f64| (px < x0 - 0.05 || px > x1 + 0.05) || y0 > 0.05 || y1 < -0.05;
        if far(1.0) && far(-1.0) {
            boxes.push((x0, x1, y0, y1));
        }
    }
    let est = mc::stratified_vector(&rho, 2_000_000, 9, 0x7e58, Allocation::Equal, boxes.len(), |x, out| {
        for (k, b) in boxes.iter().enumerate() {
            out[k] = if x[0] > b.0 && x[0] < b.1 && x[1] > b.2 && x[1] < b.3 { 1.0 } else { 0.0 };
        }
        Ok(())
    })
    .unwrap();
    for (b, e) in boxes.iter().zip(&est) {
        let q = box_mass(&rho, b.0, b.1, b.2, b.3);
        assert!((e.value - q).abs() <= 4.0 * e.se + 1e-6, "{b:?}: {e:?} vs {q}");
    }
}

#[test]
fn point_and_target_examples() {
    let b = geometry::target_atom(PI / 2.0, 2.0, otstab_core::Sign::Plus, 3).unwrap();
    assert!(b.coords()[0] == 2.0 && b.coords()[1].abs() < 1e-15 && b.coords()[2] == 0.0);
    assert!(Point::new(vec![1.0]).is_err());
    assert!(Point::new(vec![f64::NAN, 0.0]).is_err());
}
