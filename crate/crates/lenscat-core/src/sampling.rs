//! Deterministic sampling of spheres, hemispheres, disks and boundary rays.
//!
//! Lattices are quasi-uniform: uniform angles on the circle, Fibonacci
//! (golden-angle) lattices on the 2-sphere and on disks. Dimensions above
//! three fall back to seeded low-discrepancy-by-randomness samples; every
//! generator is a pure function of its inputs so sweeps reproduce exactly.

use nalgebra::DVector;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const GOLDEN_ANGLE: f64 = 2.399963229728653; // pi * (3 - sqrt(5))

/// Quasi-uniform unit vectors on `S^{n-1}`.
pub fn sphere_lattice(dim: usize, count: usize, seed: u64) -> Vec<DVector<f64>> {
    assert!(dim >= 2);
    match dim {
        2 => (0..count)
            .map(|k| {
                let theta = 2.0 * std::f64::consts::PI * k as f64 / count as f64;
                DVector::from_vec(vec![theta.cos(), theta.sin()])
            })
            .collect(),
        3 => (0..count)
            .map(|k| {
                // Fibonacci sphere: evenly spaced heights, golden-angle turns.
                let h = 1.0 - 2.0 * (k as f64 + 0.5) / count as f64;
                let r = (1.0 - h * h).max(0.0).sqrt();
                let theta = GOLDEN_ANGLE * k as f64;
                DVector::from_vec(vec![r * theta.cos(), r * theta.sin(), h])
            })
            .collect(),
        _ => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..count).map(|_| random_unit(dim, &mut rng)).collect()
        }
    }
}

/// Quasi-uniform unit vectors in the open hemisphere `{v : v·axis > 0}`.
pub fn hemisphere_lattice(axis: &DVector<f64>, count: usize, seed: u64) -> Vec<DVector<f64>> {
    let dim = axis.len();
    let frame = orthonormal_frame(axis);
    match dim {
        2 => (0..count)
            .map(|k| {
                let theta =
                    std::f64::consts::PI * ((k as f64 + 0.5) / count as f64 - 0.5) * 0.999;
                &frame[0] * theta.cos() + &frame[1] * theta.sin()
            })
            .collect(),
        3 => (0..count)
            .map(|k| {
                let c = (k as f64 + 0.5) / count as f64; // cos of polar angle, in (0, 1)
                let r = (1.0 - c * c).max(0.0).sqrt();
                let theta = GOLDEN_ANGLE * k as f64;
                &frame[0] * c + &frame[1] * (r * theta.cos()) + &frame[2] * (r * theta.sin())
            })
            .collect(),
        _ => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..count)
                .map(|_| {
                    let mut v = random_unit(dim, &mut rng);
                    if v.dot(axis) < 0.0 {
                        v = -v;
                    }
                    v
                })
                .collect()
        }
    }
}

/// Sunflower lattice on the disk of `radius` inside the hyperplane
/// orthogonal to `axis` (a segment lattice when that hyperplane is 1-d).
pub fn disk_lattice(axis: &DVector<f64>, radius: f64, count: usize, seed: u64) -> Vec<DVector<f64>> {
    let dim = axis.len();
    let frame = orthonormal_frame(axis);
    match dim {
        2 => (0..count)
            .map(|k| {
                let x = radius * (2.0 * (k as f64 + 0.5) / count as f64 - 1.0);
                &frame[1] * x
            })
            .collect(),
        3 => (0..count)
            .map(|k| {
                let r = radius * ((k as f64 + 0.5) / count as f64).sqrt();
                let theta = GOLDEN_ANGLE * k as f64;
                &frame[1] * (r * theta.cos()) + &frame[2] * (r * theta.sin())
            })
            .collect(),
        _ => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..count)
                .map(|_| {
                    let v = random_in_ball(dim - 1, radius, &mut rng);
                    let mut out = DVector::zeros(dim);
                    for (i, basis) in frame.iter().skip(1).enumerate() {
                        out += basis * v[i];
                    }
                    out
                })
                .collect()
        }
    }
}

/// Orthonormal frame whose first vector is `axis / |axis|`.
pub fn orthonormal_frame(axis: &DVector<f64>) -> Vec<DVector<f64>> {
    let dim = axis.len();
    let mut frame = Vec::with_capacity(dim);
    frame.push(axis / axis.norm());
    for i in 0..dim {
        if frame.len() == dim {
            break;
        }
        let mut e = DVector::zeros(dim);
        e[i] = 1.0;
        for f in &frame {
            let proj = f.dot(&e);
            e -= f * proj;
        }
        let norm = e.norm();
        if norm > 1e-8 {
            frame.push(e / norm);
        }
    }
    debug_assert_eq!(frame.len(), dim);
    frame
}

/// Uniform unit vector.
pub fn random_unit<R: Rng>(dim: usize, rng: &mut R) -> DVector<f64> {
    loop {
        let v = DVector::from_fn(dim, |_, _| standard_normal(rng));
        let norm = v.norm();
        if norm > 1e-8 {
            return v / norm;
        }
    }
}

/// Uniform point in the ball of `radius`.
pub fn random_in_ball<R: Rng>(dim: usize, radius: f64, rng: &mut R) -> DVector<f64> {
    let dir = random_unit(dim, rng);
    let u: f64 = rng.gen_range(0.0..1.0f64);
    dir * (radius * u.powf(1.0 / dim as f64))
}

/// Two orthonormal vectors spanning a random 2-plane.
pub fn random_plane<R: Rng>(dim: usize, rng: &mut R) -> (DVector<f64>, DVector<f64>) {
    let x = random_unit(dim, rng);
    loop {
        let mut y = random_unit(dim, rng);
        let proj = x.dot(&y);
        y -= &x * proj;
        let norm = y.norm();
        if norm > 1e-4 {
            return (x, y / norm);
        }
    }
}

/// A random strictly inward boundary datum `(t, z, v)` on the sphere of
/// `radius` in dimension `dim`: `|z| = radius`, `|v| = 1`, `z·v < 0`
/// bounded away from the tangential circle.
pub fn random_inward_entry<R: Rng>(
    dim: usize,
    radius: f64,
    time_radius: f64,
    rng: &mut R,
) -> (f64, DVector<f64>, DVector<f64>) {
    let t = rng.gen_range(-time_radius..=time_radius);
    let z = random_unit(dim, rng) * radius;
    loop {
        let mut v = random_unit(dim, rng);
        let pairing = z.dot(&v);
        if pairing > 0.0 {
            v = -v;
        }
        if z.dot(&v).abs() / radius > 1e-4 {
            return (t, z, v);
        }
    }
}

fn standard_normal<R: Rng>(rng: &mut R) -> f64 {
    // Box-Muller; one value per call keeps the stream simple and seedable.
    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0f64);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}
