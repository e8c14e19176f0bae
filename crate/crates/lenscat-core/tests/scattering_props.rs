//! Lens-data properties: sojourn identities, reversibility, non-trapping.

mod common;

use common::{bump_field, entry, fixtures, trapping_field, R};
use lenscat_core::metric::MetricField;
use lenscat_core::sampling;
use lenscat_core::scattering::{
    check_non_trapping, geodesic_length, scatter, scattering_relation, sojourn_closed,
    sojourn_limit, BoundaryRay, NonTrappingSpec, ScatterOptions,
};
use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn random_entries(dim: usize, count: usize, seed: u64) -> Vec<BoundaryRay> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let (t, z, v) = sampling::random_inward_entry(dim, R, common::T, &mut rng);
            BoundaryRay::new(t, z, v).unwrap()
        })
        .collect()
}

#[test]
fn bump_regression_fixture() {
    let field = bump_field();
    let e = entry(0.0, &[-3.0, 0.0], &[1.0, 0.0]);
    let exit = scattering_relation(&field, &e).unwrap();
    assert!((exit.z[0] - fixtures::DIAMETRAL_EXIT_Z[0]).abs() < 1e-7);
    assert!((exit.z[1] - fixtures::DIAMETRAL_EXIT_Z[1]).abs() < 1e-7);
    let len = geodesic_length(&field, &e).unwrap();
    assert!((len - fixtures::DIAMETRAL_LENGTH).abs() < 1e-7);
    // sojourn of the diametral ray: the chord stays straight, so the
    // closed form reduces to length minus the Euclidean diameter
    let sj = sojourn_closed(&field, &e).unwrap();
    assert!((sj - (fixtures::DIAMETRAL_LENGTH - 6.0)).abs() < 1e-7);
}

#[test]
fn flat_sojourn_nullity_thousand_entries() {
    let field = MetricField::flat(2, R, common::T).unwrap();
    for e in random_entries(2, 1000, 100) {
        let sj = sojourn_closed(&field, &e).unwrap();
        assert!(sj.abs() <= 1e-10, "flat sojourn {sj:e}");
    }
}

#[test]
fn scattering_relation_reversibility() {
    for field in [MetricField::flat(2, R, common::T).unwrap(), bump_field()] {
        for e in random_entries(2, 25, 200) {
            let exit = scattering_relation(&field, &e).unwrap();
            let back = scattering_relation(&field, &exit.reversed()).unwrap();
            let recovered = back.reversed();
            assert!((&recovered.z - &e.z).norm() < 1e-7, "position mismatch");
            assert!((&recovered.v - &e.v).norm() < 1e-7, "direction mismatch");
        }
    }
}

/// Closed form versus the renormalized limit, with first-order decay of
/// the finite-radius correction and Richardson extrapolation.
#[test]
fn sojourn_limit_agrees_with_closed_form() {
    let field = bump_field();
    for e in random_entries(2, 20, 300) {
        let closed = sojourn_closed(&field, &e).unwrap();
        // fitted C: |value(s) - closed| * s stays bounded
        let mut c_fit: f64 = 0.0;
        for k in 0..4 {
            let s_max = 10.0 * R * 2f64.powi(k);
            let (value, _) = sojourn_limit(&field, &e, s_max).unwrap();
            c_fit = c_fit.max((value - closed).abs() * s_max);
        }
        assert!(c_fit.is_finite() && c_fit < 1e3, "C = {c_fit}");
        let (value, decay) = sojourn_limit(&field, &e, 1e4 * R).unwrap();
        assert!((value - closed).abs() <= 1e-3);
        let extrapolated = value - decay;
        assert!(
            (extrapolated - closed).abs() <= 1e-6,
            "extrapolation error {:e}",
            (extrapolated - closed).abs()
        );
    }
}

/// Third expression for the sojourn time: foot points on the tangent
/// planes of incidence and refraction.
#[test]
fn plane_of_incidence_formula_agrees() {
    let field = bump_field();
    for e in random_entries(2, 15, 400) {
        let res = scatter(&field, &e, &ScatterOptions::default()).unwrap();
        // Tangent plane of the entry side: { z·y_in = -R }, met by the
        // backward extension of the entry line; similarly { z·y_out = R }.
        let y_in = &res.entry.v;
        let y_out = &res.exit.v;
        let s_in = (-R - res.entry.z.dot(y_in)) / y_in.dot(y_in); // <= 0
        let z_tilde = &res.entry.z + y_in * s_in;
        let s_out = (R - res.exit.z.dot(y_out)) / y_out.dot(y_out); // >= 0
        let z_tilde_out = &res.exit.z + y_out * s_out;
        let ell_tilde = res.length + (-s_in) + s_out;
        let third = -z_tilde_out.dot(y_out) + ell_tilde + z_tilde.dot(y_in);
        assert!(
            (third - res.sojourn).abs() < 1e-8,
            "plane-of-incidence form deviates by {:e}",
            (third - res.sojourn).abs()
        );
    }
}

/// Moving the renormalization sphere from R to R' > R leaves the closed
/// sojourn unchanged: the extra flat segments cancel.
#[test]
fn sojourn_invariant_under_larger_truncation_sphere() {
    let field = bump_field();
    for e in random_entries(2, 15, 500) {
        let sj_r = sojourn_closed(&field, &e).unwrap();
        for r_prime in [1.2 * R, 1.5 * R, 2.0 * R] {
            // extend the entry line backwards to the sphere of r_prime
            let zv = e.z.dot(&e.v);
            let back = zv + (zv * zv + r_prime * r_prime - R * R).sqrt();
            let z_prime = &e.z - &e.v * back;
            assert!((z_prime.norm() - r_prime).abs() < 1e-9);
            let e_prime = BoundaryRay::new(e.t, z_prime, e.v.clone()).unwrap();
            let sj_rp = sojourn_closed(&field, &e_prime).unwrap();
            assert!(
                (sj_rp - sj_r).abs() < 1e-8,
                "sojourn changed by {:e} at R' = {r_prime}",
                (sj_rp - sj_r).abs()
            );
        }
    }
}

/// Same entries, pulled-back field: forward invariance of the sojourn.
#[test]
fn pullback_field_has_equal_sojourn() {
    let field = bump_field();
    let psi = common::shear_diffeo(2, 0.3);
    let pulled = field.pullback(&psi).unwrap();
    for e in random_entries(2, 8, 600) {
        let sj1 = sojourn_closed(&field, &e).unwrap();
        let sj2 = sojourn_closed(&pulled, &e).unwrap();
        assert!(
            (sj1 - sj2).abs() < 1e-6,
            "pullback sojourn differs by {:e}",
            (sj1 - sj2).abs()
        );
    }
}

#[test]
fn length_positive_and_continuous() {
    let field = bump_field();
    for e in random_entries(2, 10, 700) {
        let len = geodesic_length(&field, &e).unwrap();
        assert!(len > 0.0);
        // perturb the boundary point tangentially by 1e-6
        let tangent = {
            let mut t = DVector::from_vec(vec![-e.z[1], e.z[0]]);
            t /= t.norm();
            t
        };
        let z_pert = {
            let p = &e.z + &tangent * 1e-6;
            &p * (R / p.norm())
        };
        if let Ok(e_pert) = BoundaryRay::new(e.t, z_pert, e.v.clone()) {
            let len_pert = geodesic_length(&field, &e_pert).unwrap();
            assert!(
                (len_pert - len).abs() < 1e-4,
                "length jumped by {:e} under 1e-6 perturbation",
                (len_pert - len).abs()
            );
        }
    }
}

#[test]
fn bump_non_trapping_certificate() {
    let report = check_non_trapping(
        &bump_field(),
        &NonTrappingSpec {
            time_count: 3,
            point_count: 10,
            direction_count: 8,
            l_max: 50.0 * R,
        },
    );
    assert!(report.certificate);
    assert_eq!(report.trapped_count, 0);
    assert!(report.max_length > 2.0 * R - 0.5);
}

#[test]
fn trapping_metric_fails_certificate() {
    let report = check_non_trapping(
        &trapping_field(),
        &NonTrappingSpec {
            time_count: 3,
            point_count: 12,
            direction_count: 10,
            l_max: 50.0 * R,
        },
    );
    assert!(!report.certificate);
    assert!(report.trapped_count > 0);
    assert!(!report.trapped_entries.is_empty());
    let offender = &report.trapped_entries[0];
    assert_eq!(offender.z.len(), 2);
}

#[test]
fn three_dimensional_chords() {
    let field = MetricField::flat(3, R, common::T).unwrap();
    for e in random_entries(3, 50, 800) {
        let b2 = e.z.norm_squared() - e.z.dot(&e.v).powi(2);
        let expected = 2.0 * (R * R - b2).sqrt();
        let len = geodesic_length(&field, &e).unwrap();
        assert!((len - expected).abs() < 1e-9);
    }
}
