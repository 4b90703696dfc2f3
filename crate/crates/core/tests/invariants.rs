use std::f64::consts::{PI, TAU};

use ngl_core::crofton;
use ngl_core::field::Refined;
use ngl_core::growth::{self, Balls};
use ngl_core::harmonic::{self, CircleTrace};
use ngl_core::nodal;
use ngl_core::surface::{self, Profile, Region};
use ngl_core::GridField;
use num_bigint::BigUint;
use proptest::prelude::*;

fn trig(coeffs: &[(f64, f64)], n: usize) -> CircleTrace {
    CircleTrace::from_fn(n, |t| {
        coeffs
            .iter()
            .enumerate()
            .map(|(k, (a, b))| a * ((k + 1) as f64 * t).cos() + b * ((k + 1) as f64 * t).sin())
            .sum()
    })
    .unwrap()
}

fn plane_wave(n: usize, kx: i32, ky: i32, phase: f64) -> GridField {
    GridField::torus(n, |x, y| (2.0 * PI * (kx as f64 * x + ky as f64 * y) + phase).cos())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn sign_changes_ignore_positive_scale_and_negation(
        coeffs in prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 1..8),
        scale in 0.01f64..100.0,
    ) {
        let t = trig(&coeffs, 512);
        let n = harmonic::sign_changes(&t);
        prop_assume!(n.is_ok());
        let n = n.unwrap();
        prop_assert_eq!(n % 2, 0);
        let scaled = CircleTrace::from_values(t.values().iter().map(|v| scale * v).collect()).unwrap();
        let neg = CircleTrace::from_values(t.values().iter().map(|v| -v).collect()).unwrap();
        prop_assert_eq!(harmonic::sign_changes(&scaled).unwrap(), n);
        prop_assert_eq!(harmonic::sign_changes(&neg).unwrap(), n);
    }

    #[test]
    fn lattice_sup_matches_oversampled_sup(
        kx in 1i32..6, ky in -5i32..6, phase in 0.0f64..TAU,
        cx in 0.0f64..1.0, cy in 0.0f64..1.0, r in 0.02f64..0.2,
    ) {
        let f = plane_wave(128, kx, ky, phase);
        let region = Region::disk((cx, cy), r);
        let fast = surface::sup_on_region(&f, &region).unwrap();
        let dense = surface::sup_on_region(&Refined::new(&f, f.h()), &region).unwrap();
        prop_assert!((fast - dense).abs() <= 1e-4, "{} vs {}", fast, dense);
    }

    #[test]
    fn growth_exponent_is_nonnegative(
        kx in 1i32..5, ky in 0i32..5, phase in 0.0f64..TAU,
        cx in 0.0f64..1.0, cy in 0.0f64..1.0,
    ) {
        let f = plane_wave(128, kx, ky, phase);
        match growth::growth_exponent(&f, (cx, cy), 0.1, 0.2, Balls::Euclidean) {
            Ok(b) => prop_assert!(b >= 0.0),
            Err(e) => prop_assert!(matches!(e, ngl_core::Error::InfiniteGrowth)),
        }
    }

    #[test]
    fn nodal_length_is_translation_invariant(kx in 1i32..4, ky in 0i32..4, shift in 0usize..64) {
        let n = 64;
        let f = plane_wave(n, kx, ky, 0.3);
        let s = shift as f64 / n as f64;
        let g = GridField::torus(n, |x, y| f.sample(x - s, y - s));
        let a = nodal::nodal_length(&nodal::extract_nodal_set(&f), None).0;
        let b = nodal::nodal_length(&nodal::extract_nodal_set(&g), None).0;
        prop_assert!((a - b).abs() < 1e-9 * a.max(1.0), "{} vs {}", a, b);
    }

    #[test]
    fn constant_factor_scales_metric_length(c in 0.25f64..4.0, k in 1i32..4) {
        let metric = surface::make_metric(Profile::Constant { value: c }, 64).unwrap();
        let set = nodal::extract_nodal_set(&plane_wave(64, k, 0, 0.1));
        let (euclid, g) = nodal::nodal_length(&set, Some(&metric));
        prop_assert!((g - c.sqrt() * euclid).abs() < 1e-9 * euclid);
    }

    #[test]
    fn crofton_is_seed_deterministic(seed in any::<u64>()) {
        let set = nodal::extract_nodal_set(&plane_wave(64, 1, 1, 0.0)).indexed();
        let a = crofton::disk_average_length(&set, 0.05, 2000, seed).unwrap();
        let b = crofton::disk_average_length(&set, 0.05, 2000, seed).unwrap();
        prop_assert_eq!(a.value.to_bits(), b.value.to_bits());
    }

    #[test]
    fn field_dump_round_trips(vals in prop::collection::vec(-1e6f64..1e6, 64)) {
        let f = GridField::new(8, ngl_core::Domain::Torus, vals).unwrap();
        let mut buf = Vec::new();
        f.write_gfd(&mut buf).unwrap();
        prop_assert_eq!(GridField::read_gfd(&buf[..]).unwrap(), f);
    }
}

#[test]
fn robertson_constant_matches_binomial_recurrence() {
    // C(2p, p) from C(2p, p) = C(2p−2, p−1)·(2p)(2p−1)/p²
    let mut central = BigUint::from(1u32);
    for p in 0u32..=40 {
        if p > 0 {
            central = central * BigUint::from(2 * p) * BigUint::from(2 * p - 1) / BigUint::from(p * p);
        }
        let want = BigUint::from(4u32).pow(p) + &central;
        assert_eq!(harmonic::robertson_value(p), want, "p = {p}");
    }
}

#[test]
fn unit_segment_length_by_both_kernels() {
    let set = ngl_core::nodal::NodalSet::from_segments(
        vec![ngl_core::nodal::Segment { a: (0.0, 0.0), b: (1.0, 0.0) }],
        false,
    )
    .indexed();
    for k in [crofton::Kernel::Disk, crofton::Kernel::Circle] {
        let e = crofton::run_kernel(k, &set, 0.05, 100_000, 7).unwrap();
        assert!((e.value - 1.0).abs() <= 3.0 * e.stderr + 1e-3, "{k:?}: {} ± {}", e.value, e.stderr);
    }
}
