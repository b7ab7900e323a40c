use std::sync::Arc;

use otstab_core::discrete_ot::solve_exact;
use otstab_core::geometry::{halfspace_side, target_atom, BoxRegion, Cone, Point, Side, Sign};
use otstab_core::sdot::LaguerreWeights;
use otstab_core::stability::fit_line;
use otstab_core::transport_maps::{oracle_cell, oracle_perturbed, oracle_rotating};
use otstab_core::{CellInstance, DiscreteMeasure, SourceDensity};
use proptest::prelude::*;

fn planar() -> impl Strategy<Value = (f64, f64)> {
    (-1.0f64..1.0, -1.0f64..1.0)
}

fn measure(points: Vec<(f64, f64)>, raw: Vec<f64>) -> DiscreteMeasure {
    let total: f64 = raw.iter().sum();
    let mut w: Vec<f64> = raw.iter().map(|v| v / total).collect();
    let drift = 1.0 - w.iter().sum::<f64>();
    w[0] += drift;
    let atoms = points.iter().map(|&(x, y)| Point::new(vec![x, y]).unwrap()).collect();
    DiscreteMeasure::new(atoms, w).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn halfspace_side_ignores_radius((x, y) in planar(), theta in -3.0f64..3.0, r1 in 0.01f64..10.0, r2 in 0.01f64..10.0) {
        let p = [x, y];
        prop_assert_eq!(halfspace_side(&p, theta, r1), halfspace_side(&p, theta, r2));
        let b = target_atom(theta, r1, Sign::Plus, 2).unwrap();
        let v = b.coords()[0] * x + b.coords()[1] * y;
        let expected = if v > 0.0 { Side::Positive } else if v < 0.0 { Side::Negative } else { Side::Boundary };
        if v.abs() > 1e-12 {
            prop_assert_eq!(halfspace_side(&p, theta, r1), expected);
        }
    }

    #[test]
    fn cone_membership_is_scale_invariant(v in prop::collection::vec(-1.0f64..1.0, 3), t in 0.001f64..1000.0) {
        prop_assume!(v.iter().map(|c| c * c).sum::<f64>() > 1e-6);
        let cone = Cone::blowup_cone(3).unwrap();
        let apex = cone.apex().coords().to_vec();
        let at = |s: f64| -> Vec<f64> { apex.iter().zip(&v).map(|(a, b)| a + s * b).collect() };
        prop_assert_eq!(cone.contains(&at(1.0)).unwrap(), cone.contains(&at(t)).unwrap());
    }

    #[test]
    fn box_contains_midpoint_but_not_faces(ax in -5.0f64..5.0, ay in -5.0f64..5.0, len in 1e-3f64..2.0, wid in 1e-3f64..2.0, plus in any::<bool>(), t in 0.0f64..1.0) {
        let sign = if plus { Sign::Plus } else { Sign::Minus };
        let b = BoxRegion::new(Point::new(vec![ax, ay]).unwrap(), len, wid, sign).unwrap();
        prop_assert!(b.contains(b.midpoint().coords()));
        let mut face = [0.0, t];
        b.map_unit(&mut face);
        prop_assert!(!b.contains(&face));
        for off in [-0.01, 1.01] {
            let mut side = [t, off];
            b.map_unit(&mut side);
            prop_assert!(!b.contains(&side));
        }
    }

    #[test]
    fn blowup_densities_are_symmetric((x, y) in planar(), delta in 0.1f64..2.0) {
        for rho in [SourceDensity::log_blowup(2).unwrap(), SourceDensity::poly_blowup(2, delta).unwrap(), SourceDensity::uniform_ball(2).unwrap()] {
            let f = rho.density(&[x, y]);
            prop_assert_eq!(f, rho.density(&[-x, -y]));
            prop_assert_eq!(f, rho.density(&[x, -y]));
            prop_assert!(f >= 0.0);
        }
    }

    #[test]
    fn rotating_oracle_is_antisymmetric((x, y) in planar(), theta in -0.1f64..0.1, r in 0.1f64..5.0) {
        let v = x * theta.sin() + y * theta.cos();
        prop_assume!(v != 0.0);
        prop_assert_eq!(oracle_rotating(&[x, y], theta, r) + oracle_rotating(&[-x, -y], theta, r), 1);
    }

    #[test]
    fn perturbed_oracle_delegates_outside_its_cell(i in 1usize..=8, j in 1usize..=8, t in 0.01f64..0.99, s in 0.01f64..0.99, plus in any::<bool>()) {
        let inst = CellInstance::choose_sequences(8, 2).unwrap();
        let sign = if plus { Sign::Plus } else { Sign::Minus };
        let mut x = [t, s];
        inst.cell_box(j, sign).map_unit(&mut x);
        let moved = oracle_perturbed(&x, &inst, i).unwrap();
        let base = oracle_cell(&x, &inst).unwrap();
        if i != j {
            prop_assert_eq!(moved, base);
        } else {
            prop_assert_eq!(moved, 2 * (i - 1) + if plus { 0 } else { 1 });
        }
    }

    #[test]
    fn laguerre_assignment_ignores_weight_shift(atoms in prop::collection::vec(planar(), 2..8), psi_seed in prop::collection::vec(-0.5f64..0.5, 8), shift in -100.0f64..100.0, (x, y) in planar()) {
        let m = atoms.len();
        let mut atoms = atoms;
        atoms.sort_by(|a, b| a.partial_cmp(b).unwrap());
        atoms.dedup();
        prop_assume!(atoms.len() == m);
        let target = measure(atoms, vec![1.0; m]);
        let w = LaguerreWeights { psi: psi_seed[..m].to_vec(), target };
        let s = w.shifted(shift);
        prop_assume!(w.boundary_distance(&[x, y]) > 1e-9);
        prop_assert_eq!(w.assign(&[x, y]), s.assign(&[x, y]));
        prop_assert_eq!(w.clone().normalized().assign(&[x, y]), w.assign(&[x, y]));
    }

    #[test]
    fn fit_line_recovers_exact_lines(slope in -5.0f64..5.0, intercept in -5.0f64..5.0, xs in prop::collection::vec(-10.0f64..10.0, 5..20)) {
        let spread = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - xs.iter().cloned().fold(f64::INFINITY, f64::min);
        prop_assume!(spread > 0.1);
        let pts: Vec<(f64, f64)> = xs.iter().map(|&x| (x, slope * x + intercept)).collect();
        let (s, b, res) = fit_line(&pts).unwrap();
        prop_assert!((s - slope).abs() < 1e-9 && (b - intercept).abs() < 1e-8 && res < 1e-8);
    }

    #[test]
    fn exact_distance_is_symmetric(a in prop::collection::vec((planar(), 0.05f64..1.0), 1..12), b in prop::collection::vec((planar(), 0.05f64..1.0), 1..12), p in 1.0f64..3.0) {
        let (pa, wa): (Vec<_>, Vec<_>) = a.into_iter().unzip();
        let (pb, wb): (Vec<_>, Vec<_>) = b.into_iter().unzip();
        let (mut da, mut db) = (pa.clone(), pb.clone());
        da.sort_by(|x, y| x.partial_cmp(y).unwrap());
        da.dedup();
        db.sort_by(|x, y| x.partial_cmp(y).unwrap());
        db.dedup();
        prop_assume!(da.len() == pa.len() && db.len() == pb.len());
        let (ma, mb) = (measure(pa, wa), measure(pb, wb));
        let ab = solve_exact(&ma, &mb, p).unwrap().wasserstein();
        let ba = solve_exact(&mb, &ma, p).unwrap().wasserstein();
        prop_assert!((ab - ba).abs() <= 1e-9 * ab.max(1e-12));
    }
}

#[test]
fn consecutive_mass_ratio() {
    let inst = Arc::new(CellInstance::choose_sequences(40, 2).unwrap());
    for i in 1..40 {
        let fi = i as f64;
        let expected = 0.5 * (fi / (fi + 1.0)).powi(2);
        assert!((inst.sigma(i + 1) / inst.sigma(i) - expected).abs() <= 1e-14 * expected, "i={i}");
    }
}
