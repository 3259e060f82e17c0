//! Random states and bases for randomized checks.

use rand::Rng;

use crate::qcore::{inner, Amplitude, LinearMap, StateVector};
use crate::registers::SpaceLayout;

fn random_vector<R: Rng + ?Sized>(rng: &mut R, layout: &SpaceLayout) -> StateVector {
    let amps = (0..layout.dim())
        .map(|_| Amplitude::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
        .collect();
    StateVector::new(layout.clone(), amps).expect("dimension matches")
}

pub fn random_state<R: Rng + ?Sized>(rng: &mut R, layout: &SpaceLayout) -> StateVector {
    loop {
        let v = random_vector(rng, layout);
        if v.norm() > 1e-3 {
            return v.normalized().expect("nonzero");
        }
    }
}

/// Orthonormal vectors completing `given` to a basis of `layout`.
///
/// `given` must already be orthonormal.
pub fn random_completion<R: Rng + ?Sized>(
    rng: &mut R,
    layout: &SpaceLayout,
    given: &[StateVector],
) -> Vec<StateVector> {
    let mut basis: Vec<StateVector> = given.to_vec();
    let mut added = Vec::new();
    while basis.len() < layout.dim() {
        let mut v = random_vector(rng, layout);
        // Two passes of modified Gram-Schmidt keep the defect near machine precision.
        for _ in 0..2 {
            for b in &basis {
                let ip = inner(b, &v).expect("same layout");
                v = v.add(&b.scaled(-ip)).expect("same layout");
            }
        }
        if v.norm() < 1e-6 {
            continue;
        }
        let v = v.normalized().expect("nonzero");
        basis.push(v.clone());
        added.push(v);
    }
    added
}

pub fn random_basis<R: Rng + ?Sized>(rng: &mut R, layout: &SpaceLayout) -> Vec<StateVector> {
    random_completion(rng, layout, &[])
}

/// Unitary whose columns are a random orthonormal basis.
pub fn random_unitary<R: Rng + ?Sized>(rng: &mut R, layout: &SpaceLayout) -> LinearMap {
    let basis = random_basis(rng, layout);
    let d = layout.dim();
    let mut matrix = vec![Amplitude::new(0.0, 0.0); d * d];
    for (col, v) in basis.iter().enumerate() {
        for (row, a) in v.amps().iter().enumerate() {
            matrix[row * d + col] = *a;
        }
    }
    LinearMap::new(layout.clone(), layout.clone(), matrix).expect("square")
}
