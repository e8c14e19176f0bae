//! Acceptance suite: one test per criterion, at desk scale
//! (n = 2 and n = 3, R = 3, T = 1). Every test prints a
//! `ACCEPTANCE <k> ...: PASS` line (run with `--nocapture` to see them).

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use lenscat_core::cuspmap::{
    classical_scattering_map, lens_equivalent, truncated_map_via_infinity,
    CuspBoundaryPoint, CuspSamplingSpec,
};
use lenscat_core::metric::{
    BumpProfile, ConformalBump, DiffeoField, FlowGenerator, GridSpec, MetricField, ScalarField,
};
use lenscat_core::oracle::trace_cotangent_fixed;
use lenscat_core::sampling;
use lenscat_core::scattering::{
    scatter, scattering_relation, sojourn_closed, sojourn_limit, BoundaryRay, ScatterOptions,
};

const R: f64 = 3.0;
const T: f64 = 1.0;

fn flat(dim: usize) -> MetricField {
    MetricField::flat(dim, R, T).unwrap()
}

fn bump(dim: usize, amplitude: f64, width: f64) -> MetricField {
    MetricField::conformal_bump(
        dim,
        R,
        T,
        ConformalBump {
            amplitude,
            center: vec![0.0; dim],
            profile: BumpProfile {
                width,
                support_radius: R,
                time_width: 0.5,
            },
        },
    )
    .unwrap()
}

fn pair(dim: usize, k: u64) -> (MetricField, DiffeoField) {
    let field = bump(dim, 0.04 + 0.01 * ((k % 7) as f64), 0.8 + 0.1 * ((k % 4) as f64));
    let amplitude = 0.15 + 0.05 * ((k % 5) as f64);
    let diffeo = if k.is_multiple_of(2) {
        DiffeoField::from_flow(
            dim,
            2.5,
            0.8,
            FlowGenerator::Shear {
                amplitude,
                axis: 0,
                gradient_axis: 1,
            },
        )
        .unwrap()
    } else {
        DiffeoField::from_flow(
            dim,
            2.4,
            0.7,
            FlowGenerator::Rotation {
                amplitude,
                plane: (0, 1),
            },
        )
        .unwrap()
    };
    (field, diffeo)
}

fn entries(dim: usize, count: usize, seed: u64) -> Vec<BoundaryRay> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let (t, z, v) = sampling::random_inward_entry(dim, R, T, &mut rng);
            BoundaryRay::new(t, z, v).unwrap()
        })
        .collect()
}

/// 1. Flat lens data: exits on the analytic chord, lengths `2√(R²-b²)`,
///    vanishing sojourn; under five seconds for 1000 entries.
fn c01_flat_lens_data() -> String {
    let start = Instant::now();
    for dim in [2usize, 3] {
        let field = flat(dim);
        let set = entries(dim, 500, 1000 + dim as u64);
        let worst = set
            .par_iter()
            .map(|e| {
                let res = scatter(&field, e, &ScatterOptions::default()).unwrap();
                let chord = -2.0 * e.z.dot(&e.v);
                let exit_expected = &e.z + &e.v * chord;
                let b2 = e.z.norm_squared() - e.z.dot(&e.v).powi(2);
                let len_expected = 2.0 * (R * R - b2).sqrt();
                let dz = (&res.exit.z - exit_expected).norm();
                let dv = (&res.exit.v - &e.v).norm();
                let dl = (res.length - len_expected).abs();
                let ds = res.sojourn.abs();
                [dz, dv, dl, ds]
            })
            .reduce(
                || [0.0f64; 4],
                |a, b| [a[0].max(b[0]), a[1].max(b[1]), a[2].max(b[2]), a[3].max(b[3])],
            );
        assert!(worst[0] <= 1e-9 * R, "exit point error {:e}", worst[0]);
        assert!(worst[1] <= 1e-9, "exit direction error {:e}", worst[1]);
        assert!(worst[2] <= 1e-9, "length error {:e}", worst[2]);
        assert!(worst[3] <= 1e-10, "sojourn magnitude {:e}", worst[3]);
    }
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs_f64() < 5.0, "took {elapsed:?}");
    format!("1000 entries, n=2 and n=3, {elapsed:?}")
}

/// 2. Adaptive integrator against the fixed-step RK4 h=1e-5 + bisection
///    oracle on 50 bump rays; under sixty seconds.
fn c02_oracle_agreement() -> String {
    let start = Instant::now();
    let field = bump(2, 0.1, 1.0);
    let set = entries(2, 50, 2000);
    let worst = set
        .par_iter()
        .map(|e| {
            let res = scatter(&field, e, &ScatterOptions::default()).unwrap();
            let oracle =
                trace_cotangent_fixed(&field, e.t, &e.z, &e.v, 1e-5, R, 50.0 * R).unwrap();
            let dz = (&res.exit.z - &oracle.z).norm();
            let dv = (&res.exit.v - (&oracle.zeta / oracle.zeta.norm())).norm();
            let dl = (res.length - oracle.length).abs();
            [dz, dv, dl]
        })
        .reduce(
            || [0.0f64; 3],
            |a, b| [a[0].max(b[0]), a[1].max(b[1]), a[2].max(b[2])],
        );
    assert!(worst[0] <= 1e-7, "exit point disagreement {:e}", worst[0]);
    assert!(worst[1] <= 1e-7, "exit direction disagreement {:e}", worst[1]);
    assert!(worst[2] <= 1e-7, "length disagreement {:e}", worst[2]);
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs_f64() < 60.0, "took {elapsed:?}");
    format!(
        "50 bump rays, max dev {:.2e}, {elapsed:?}",
        worst[0].max(worst[1]).max(worst[2])
    )
}

/// 3. Energy conservation (relative drift <= 1e-9) and time-reversal
///    round trips (<= 1e-7) on the oracle-ray set.
fn c03_energy_and_reversibility() -> String {
    let field = bump(2, 0.1, 1.0);
    let set = entries(2, 50, 2000);
    let opts = ScatterOptions {
        keep_trajectory: true,
        ..ScatterOptions::default()
    };
    let (max_drift, max_pos, max_dir) = set
        .par_iter()
        .map(|e| {
            let res = scatter(&field, e, &opts).unwrap();
            let drift = res.trajectory.as_ref().unwrap().max_energy_drift;
            let back = scatter(&field, &res.exit.reversed(), &ScatterOptions::default()).unwrap();
            let dpos = (&back.exit.z - &e.z).norm();
            let ddir = (&back.exit.v + &e.v).norm();
            (drift, dpos, ddir)
        })
        .reduce(
            || (0.0f64, 0.0f64, 0.0f64),
            |a, b| (a.0.max(b.0), a.1.max(b.1), a.2.max(b.2)),
        );
    assert!(max_drift <= 1e-9, "energy drift {max_drift:e}");
    assert!(max_pos <= 1e-7 * R, "entry position recovery {max_pos:e}");
    assert!(max_dir <= 1e-7, "entry direction recovery {max_dir:e}");
    format!("drift {max_drift:.2e}, round trip {max_pos:.2e}")
}

/// 4. Sojourn limit convergence: first-order decay with finite fitted C
///    and Richardson extrapolation within 1e-6 of the closed form.
fn c04_sojourn_limit_convergence() -> String {
    let field = bump(2, 0.1, 1.0);
    let set = entries(2, 20, 4000);
    let mut worst_c: f64 = 0.0;
    let mut worst_extrap: f64 = 0.0;
    for e in &set {
        let closed = sojourn_closed(&field, e).unwrap();
        for k in 0..4 {
            let s_max = 10.0 * R * 2f64.powi(k);
            let (value, _) = sojourn_limit(&field, e, s_max).unwrap();
            worst_c = worst_c.max((value - closed).abs() * s_max);
        }
        let (value, decay) = sojourn_limit(&field, e, 1e4 * R).unwrap();
        worst_extrap = worst_extrap.max((value - decay - closed).abs());
    }
    assert!(worst_c.is_finite() && worst_c < 1e3, "fitted C {worst_c}");
    assert!(worst_extrap <= 1e-6, "extrapolation error {worst_extrap:e}");
    format!("fitted C {worst_c:.2}, extrapolation {worst_extrap:.2e}")
}

/// 5. Reconstruction identity: the truncated map assembled through
///    infinity equals the direct scattering relation on 1000 entries per
///    field class (flat, bump, pullback).
fn c05_reconstruction_identity() -> String {
    let run = |field: &MetricField, set: &[BoundaryRay]| -> f64 {
        set.par_iter()
            .map(|e| {
                let direct = scattering_relation(field, e).unwrap();
                let via = truncated_map_via_infinity(field, e).unwrap();
                let dz = (&direct.z - &via.z).norm();
                let dv = (&direct.v - &via.v).norm();
                let dt = (direct.t - via.t).abs();
                dz.max(dv).max(dt)
            })
            .reduce(|| 0.0f64, f64::max)
    };
    let mut worst: f64 = 0.0;
    for dim in [2usize, 3] {
        worst = worst.max(run(&flat(dim), &entries(dim, 500, 5000 + dim as u64)));
        worst = worst.max(run(&bump(dim, 0.1, 1.0), &entries(dim, 500, 5100 + dim as u64)));
    }
    let (field, diffeo) = pair(2, 0);
    let pulled = field.pullback(&diffeo).unwrap();
    worst = worst.max(run(&pulled, &entries(2, 1000, 5200)));
    assert!(worst <= 1e-7, "dual-path mismatch {worst:e}");
    format!("max mismatch {worst:.2e}")
}

/// 6. Forward invariance: for 20 (bump, flow-diffeo) pairs the pulled-back
///    metric is lens equivalent to the original at 1e-5 over >= 500 cusp
///    samples, with interior lengths matching to 1e-5.
fn c06_forward_invariance() -> String {
    let spec = CuspSamplingSpec {
        direction_count: 8,
        xi_count: 5,
        offset_count: 13,
        offset_fraction: 0.95,
        seed: 6000,
    };
    assert!(spec.total() >= 500);
    let mut worst_comb: f64 = 0.0;
    let mut worst_len: f64 = 0.0;
    for k in 0..20u64 {
        let dim = if k < 16 { 2 } else { 3 };
        let (field, diffeo) = pair(dim, k);
        let pulled = field.pullback(&diffeo).unwrap();
        let report = lens_equivalent(&field, &pulled, &spec, 1e-5).unwrap();
        assert!(
            report.equivalent,
            "pair {k} (n={dim}) inequivalent: combined {:e}",
            report.max_discrepancy.combined
        );
        assert!(
            report.max_length_discrepancy <= 1e-5,
            "pair {k} length discrepancy {:e}",
            report.max_length_discrepancy
        );
        worst_comb = worst_comb.max(report.max_discrepancy.combined);
        worst_len = worst_len.max(report.max_length_discrepancy);
    }
    format!("20 pairs, worst combined {worst_comb:.2e}, worst length {worst_len:.2e}")
}

/// 7. Negative control: flat versus the amplitude-0.1 bump is detected as
///    inequivalent with an n1 discrepancy above 1e-3.
fn c07_negative_control() -> String {
    let report = lens_equivalent(
        &flat(2),
        &bump(2, 0.1, 1.0),
        &CuspSamplingSpec {
            direction_count: 8,
            xi_count: 5,
            offset_count: 13,
            offset_fraction: 0.95,
            seed: 7000,
        },
        1e-5,
    )
    .unwrap();
    assert!(!report.equivalent);
    assert!(
        report.max_discrepancy.n1_abs > 1e-3,
        "n1 discrepancy {:e}",
        report.max_discrepancy.n1_abs
    );
    format!("inequivalent, max |dn1| {:.2e}", report.max_discrepancy.n1_abs)
}

/// 8. Convexity gate: flat + |z|² has covariant-Hessian minimum exactly 2;
///    a 0.05 bump keeps a positive certificate; flat sectional curvature
///    vanishes on 100 random planes.
fn c08_convexity_gate() -> String {
    let report = flat(2)
        .admissibility_report(&ScalarField::quadratic(2), &GridSpec::default())
        .unwrap();
    assert!(report.admissible);
    assert!(
        (report.min_hessian_eig - 2.0).abs() <= 1e-9,
        "flat min Hessian {:.12}",
        report.min_hessian_eig
    );

    let report_bump = bump(2, 0.05, 1.0)
        .admissibility_report(&ScalarField::quadratic(2), &GridSpec::default())
        .unwrap();
    assert!(
        report_bump.admissible,
        "bump certificate lost, min eig {:e}",
        report_bump.min_hessian_eig
    );

    let field = flat(3);
    let mut rng = ChaCha8Rng::seed_from_u64(8000);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let z = sampling::random_in_ball(3, 0.9 * R, &mut rng);
        let (x, y) = sampling::random_plane(3, &mut rng);
        let k = field.sectional_curvature(0.0, &z, &x, &y).unwrap();
        worst = worst.max(k.abs());
    }
    assert!(worst <= 1e-8, "flat curvature {worst:e}");
    format!("flat Hessian 2 exact, bump admissible, |K| <= {worst:.2e}")
}

/// 9. Identity at large offset: cusp data with |eta1c| >= R map to
///    themselves with n1 = 0, exactly, over a 200-sample shell.
fn c09_identity_at_large_offset() -> String {
    let field = bump(2, 0.1, 1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(9000);
    for k in 0..200 {
        let y = sampling::random_unit(2, &mut rng);
        let frame = sampling::orthonormal_frame(&y);
        let radius = R * (1.0 + (k % 5) as f64 * 0.25);
        let eta = &frame[1] * radius;
        let xi = 0.02 * k as f64 - 2.0;
        let p = CuspBoundaryPoint::new(y, xi, eta).unwrap();
        let graph = classical_scattering_map(&field, &p).unwrap();
        assert_eq!(graph.n1, 0.0);
        assert_eq!(graph.outgoing, p);
        assert_eq!(graph.incoming, p);
    }
    "200-sample shell, exact".to_string()
}

/// 10. Determinism: `scatter` with a fixed seed produces byte-identical
///     CSV across 1, 4 and 8 workers.
fn c10_determinism() -> String {
    let dir = tempfile::tempdir().unwrap();
    let metric = dir.path().join("bump.json");
    std::fs::write(
        &metric,
        r#"{"dim":2, "R":3.0, "T":1.0, "family":"conformal_bump",
            "params":{"amplitude":0.1,"center":[0.0,0.0],"width":1.0,"time_width":0.5}}"#,
    )
    .unwrap();
    let mut outputs = Vec::new();
    for workers in ["1", "4", "8"] {
        let out = dir.path().join(format!("lens_w{workers}.csv"));
        let status = std::process::Command::new(env!("CARGO_BIN_EXE_lenscat"))
            .args([
                "scatter",
                "--metric",
                metric.to_str().unwrap(),
                "--rays",
                "40",
                "--seed",
                "11",
                "--workers",
                workers,
                "--out",
                out.to_str().unwrap(),
            ])
            .env_remove("LENSCAT_WORKERS")
            .stdout(std::process::Stdio::null())
            .status()
            .unwrap();
        assert!(status.success());
        outputs.push(std::fs::read(&out).unwrap());
    }
    assert_eq!(outputs[0], outputs[1], "1 vs 4 workers differ");
    assert_eq!(outputs[0], outputs[2], "1 vs 8 workers differ");
    "byte-identical CSV across 1/4/8 workers".to_string()
}

/// Runs every criterion in order, printing one pass/fail line each; the
/// suite fails if any criterion fails, after all lines are printed.
#[test]
fn acceptance_suite() {
    type Criterion = (&'static str, fn() -> String);
    let criteria: [Criterion; 10] = [
        ("01 flat lens data", c01_flat_lens_data),
        ("02 oracle agreement", c02_oracle_agreement),
        ("03 energy and reversibility", c03_energy_and_reversibility),
        ("04 sojourn limit convergence", c04_sojourn_limit_convergence),
        ("05 reconstruction identity", c05_reconstruction_identity),
        ("06 forward invariance", c06_forward_invariance),
        ("07 negative control", c07_negative_control),
        ("08 convexity gate", c08_convexity_gate),
        ("09 identity at large offset", c09_identity_at_large_offset),
        ("10 determinism", c10_determinism),
    ];
    // keep panic backtraces out of the per-criterion report
    let default_hook = std::panic::take_hook();
    std::panic::set_hook(Box::new(|_| {}));
    let mut failures = Vec::new();
    for (name, criterion) in criteria {
        match std::panic::catch_unwind(criterion) {
            Ok(detail) => println!("ACCEPTANCE {name}: PASS ({detail})"),
            Err(payload) => {
                let msg = payload
                    .downcast_ref::<String>()
                    .map(String::as_str)
                    .or_else(|| payload.downcast_ref::<&str>().copied())
                    .unwrap_or("panic");
                println!("ACCEPTANCE {name}: FAIL ({msg})");
                failures.push(name);
            }
        }
    }
    std::panic::set_hook(default_hook);
    assert!(failures.is_empty(), "failed criteria: {failures:?}");
}
