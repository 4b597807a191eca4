#![allow(dead_code)]

use fobs_core::model::observability_index;
use fobs_core::spectrum::poly_from_eigenvalues;
use fobs_core::{CharPoly, LinearSystem};
use nalgebra::{DMatrix, RowDVector};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random system with `n <= 6`, `p <= 2` whose observability index is at
/// least 2, so that order `v_o - 1 >= 1` is available.
pub fn observable_system(rng: &mut ChaCha8Rng) -> (LinearSystem, usize) {
    loop {
        let n = rng.gen_range(2..=6);
        let p = rng.gen_range(1..=2.min(n));
        let f = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
        let h = DMatrix::from_fn(p, n, |_, _| rng.gen_range(-1.0..1.0));
        let q = RowDVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
        let sys = LinearSystem::new(f, h, q).expect("valid dimensions");
        if let Some(vo) = observability_index(&sys) {
            if vo >= 2 {
                return (sys, vo);
            }
        }
    }
}

/// Real roots and conjugate pairs with moduli in `[0.05, 0.95]`.
pub fn stable_roots(rng: &mut ChaCha8Rng, v: usize) -> Vec<Complex64> {
    let mut roots = Vec::with_capacity(v);
    while roots.len() < v {
        let r = rng.gen_range(0.05..0.95);
        if v - roots.len() >= 2 && rng.gen_bool(0.4) {
            let z = Complex64::from_polar(r, rng.gen_range(0.2..3.0));
            roots.push(z);
            roots.push(z.conj());
        } else {
            roots.push(if rng.gen_bool(0.5) {
                Complex64::new(r, 0.0)
            } else {
                Complex64::new(-r, 0.0)
            });
        }
    }
    roots
}

pub fn stable_poly(rng: &mut ChaCha8Rng, v: usize) -> CharPoly {
    poly_from_eigenvalues(&stable_roots(rng, v)).expect("conjugate-closed roots")
}

/// Scales `F` so its iterates stay bounded over a few hundred steps.
pub fn contract(sys: &LinearSystem) -> LinearSystem {
    let rho = sys
        .f()
        .complex_eigenvalues()
        .iter()
        .fold(0.0_f64, |m, z| m.max(z.norm()));
    let f = if rho > 0.95 {
        sys.f() * (0.95 / rho)
    } else {
        sys.f().clone()
    };
    LinearSystem::new(f, sys.h().clone(), sys.q().clone()).expect("same dimensions")
}
