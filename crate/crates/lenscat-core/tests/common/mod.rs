//! Shared fixtures for the integration suites.

#![allow(dead_code)]

use nalgebra::DVector;

use lenscat_core::metric::{
    BumpProfile, ConformalBump, DiffeoField, FlowGenerator, MetricField, RankOneBump,
};
use lenscat_core::scattering::BoundaryRay;

pub const R: f64 = 3.0;
pub const T: f64 = 1.0;

/// The standard regression bump: amplitude 0.1, width 1.
pub fn bump_field() -> MetricField {
    conformal(2, 0.1, 1.0)
}

pub fn conformal(dim: usize, amplitude: f64, width: f64) -> MetricField {
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

pub fn rank_one(dim: usize, amplitude: f64) -> MetricField {
    let mut direction = vec![0.0; dim];
    direction[0] = 1.0;
    direction[1] = 0.6;
    MetricField::rank_one_bump(
        dim,
        R,
        T,
        RankOneBump {
            amplitude,
            center: vec![0.0; dim],
            direction,
            profile: BumpProfile {
                width: 0.9,
                support_radius: 2.2,
                time_width: 0.6,
            },
        },
    )
    .unwrap()
}

/// Amplitude strong enough that lattice rays exceed the 50R budget.
pub fn trapping_field() -> MetricField {
    MetricField::conformal_bump(
        2,
        R,
        T,
        ConformalBump {
            amplitude: 5.0,
            center: vec![0.0, 0.0],
            profile: BumpProfile {
                width: 1.3,
                support_radius: 2.8,
                time_width: 0.9,
            },
        },
    )
    .unwrap()
}

pub fn shear_diffeo(dim: usize, amplitude: f64) -> DiffeoField {
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
}

pub fn rotation_diffeo(dim: usize, amplitude: f64) -> DiffeoField {
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
}

/// A deterministic family of (bump metric, flow diffeo) pairs with modest
/// amplitudes, indexed by `k`.
pub fn random_pair(dim: usize, k: u64) -> (MetricField, DiffeoField) {
    let amp = 0.04 + 0.01 * ((k % 7) as f64);
    let width = 0.8 + 0.1 * ((k % 4) as f64);
    let field = conformal(dim, amp, width);
    let d_amp = 0.15 + 0.05 * ((k % 5) as f64);
    let diffeo = if k.is_multiple_of(2) {
        shear_diffeo(dim, d_amp)
    } else {
        rotation_diffeo(dim, d_amp)
    };
    (field, diffeo)
}

pub fn entry(t: f64, z: &[f64], v: &[f64]) -> BoundaryRay {
    BoundaryRay::new(
        t,
        DVector::from_vec(z.to_vec()),
        DVector::from_vec(v.to_vec()),
    )
    .unwrap()
}

/// Frozen oracle fixtures (fixed-step RK4, h = 1e-5, bisection to 1e-12)
/// for the standard bump, entry time 0.
pub mod fixtures {
    /// Diametral entry `z = (-3, 0)`, `v = (1, 0)`.
    pub const DIAMETRAL_EXIT_Z: [f64; 2] = [3.0, 0.0];
    pub const DIAMETRAL_EXIT_V: [f64; 2] = [1.0, 0.0];
    pub const DIAMETRAL_LENGTH: f64 = 6.172631947376587;

    /// Offset entry `z = (-sqrt(8), 1)`, `v = (1, 0)`.
    pub const OFFSET_EXIT_Z: [f64; 2] = [2.936768154575169, 0.6126930767287913];
    pub const OFFSET_EXIT_V: [f64; 2] = [0.9910141982467403, -0.1337567152457138];
    pub const OFFSET_LENGTH: f64 = 5.847919299960368;
}
