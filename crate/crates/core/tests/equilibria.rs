use isoscatter::dynamics::{vector_field_compact, CompactState};
use isoscatter::equilibria::*;
use isoscatter::model::{EnergyLevel, MassParams};

fn setup(m3: f64) -> (MassParams, EnergyLevel) {
    (MassParams::new(m3).unwrap(), EnergyLevel::new(0.5).unwrap())
}

/// Greedy matching of each analytic eigenvalue to the closest unused numerical one.
fn max_mismatch(a: &[(f64, f64)], n: &[(f64, f64)]) -> f64 {
    let mut used = vec![false; n.len()];
    let mut worst: f64 = 0.0;
    for x in a {
        let (k, d) = n
            .iter()
            .enumerate()
            .filter(|(i, _)| !used[*i])
            .map(|(i, y)| (i, ((x.0 - y.0).powi(2) + (x.1 - y.1).powi(2)).sqrt()))
            .min_by(|p, q| p.1.total_cmp(&q.1))
            .unwrap();
        used[k] = true;
        worst = worst.max(d);
    }
    worst
}

#[test]
fn hyperbolic_infinity_eigenvalues_match_numerics() {
    let (p, h) = setup(1.0);
    let mut worst: f64 = 0.0;
    for i in 0..40 {
        let u0 = -1.4 + 2.8 * i as f64 / 39.0;
        for sign in [1i8, -1] {
            let rp = infinity_restpoint_hyperbolic(u0, &p, &h, sign).unwrap();
            let num = numerical_eigenvalues(&rp.location, &p, &h);
            worst = worst.max(max_mismatch(&rp.eigenvalues, &num));
        }
    }
    assert!(worst < 1e-7, "worst mismatch {worst:e}");
}

#[test]
fn binary_infinity_eigenvalues_match_numerics() {
    let (p, h) = setup(1.0);
    for i in 0..21 {
        let v0 = -0.95 + 1.9 * i as f64 / 20.0;
        let rp = infinity_restpoint_binary(v0, &h).unwrap();
        let num = numerical_eigenvalues(&rp.location, &p, &h);
        let d = max_mismatch(&rp.eigenvalues, &num);
        assert!(d < 1e-7, "v0={v0} mismatch {d:e}");
    }
}

#[test]
fn collision_eigenvalues_match_numerics() {
    for m3 in [0.2, 1.0, 3.0, 20.0] {
        let (p, h) = setup(m3);
        for rp in collision_restpoints(&p, &h) {
            let num = numerical_eigenvalues(&rp.location, &p, &h);
            let d = max_mismatch(&rp.eigenvalues, &num);
            assert!(d < 1e-7, "m3={m3} {:?} mismatch {d:e}", rp.family);
        }
    }
}

#[test]
fn restpoints_are_fixed_and_eigenpairs_hold() {
    let (p, h) = setup(1.0);
    for rp in collision_restpoints(&p, &h) {
        let f = vector_field_compact(&rp.location, &p, &h);
        assert!(f.to_array().iter().all(|c| c.abs() < 1e-12));
        let j = jacobian(&rp.location, &p, &h);
        // real eigenvectors only
        let mut k = 0;
        for &(re, im) in &rp.eigenvalues {
            if im != 0.0 {
                k += 1;
                continue;
            }
            let e = nalgebra::Vector4::from(rp.eigenbasis[k]);
            let r = j * e - e * re;
            assert!(r.norm() < 1e-10, "{:?} residual {:e}", rp.family, r.norm());
            k += 1;
        }
    }
}

#[test]
fn euler_eigenvalues_turn_real_for_heavy_third_mass() {
    // non-real below 55/4, real above
    for (m3, complex) in [(13.0, true), (14.5, false)] {
        let (p, h) = setup(m3);
        let e = collision_restpoint_for(CentralShape::Euler, false, &p, &h);
        let any_complex = e.boundary_eigenvalues.iter().any(|l| l.1 != 0.0);
        assert_eq!(any_complex, complex, "m3={m3}: {:?}", e.boundary_eigenvalues);
    }
}

#[test]
fn reflection_and_time_reversal_pairs() {
    let (p, h) = setup(1.0);
    let rps = collision_restpoints(&p, &h);
    // order: L-, E, L+ unstarred then starred
    let lm = &rps[0];
    let lp = &rps[2];
    assert!((lm.location.u + lp.location.u).abs() < 1e-15);
    assert!(max_mismatch(&lm.eigenvalues, &lp.eigenvalues) < 1e-10);
    for k in 0..3 {
        let a = &rps[k];
        let b = &rps[k + 3];
        assert_eq!(a.location.time_reversed(), b.location);
        // time reversal negates the spectrum
        let neg: Vec<_> = b.eigenvalues.iter().map(|e| (-e.0, -e.1)).collect();
        assert!(max_mismatch(&a.eigenvalues, &neg) < 1e-10);
    }
}

#[test]
fn infinity_tangent_space() {
    let (p, h) = setup(1.0);
    let u0 = 0.4;
    let rp = infinity_restpoint_hyperbolic(u0, &p, &h, 1).unwrap();
    let (theta, _) = isoscatter::model::theta_of_u(u0);
    let (v, _) = isoscatter::model::shape_potential_v(theta, &p).unwrap();
    for e in &rp.eigenbasis {
        let lhs = (v - h.h) * e[0] + h.speed() * e[1];
        assert!(lhs.abs() < 1e-12);
    }
    let _ = CompactState::default();
}
