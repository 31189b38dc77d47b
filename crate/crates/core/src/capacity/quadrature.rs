//! Gauss–Hermite rule for `∫ e^{−t²} f(t) dt`.

use std::f64::consts::PI;

use nalgebra::{DMatrix, SymmetricEigen};

/// Nodes and weights of the `n`-point rule, nodes ascending.
///
/// Nodes start from the eigenvalues of the Jacobi matrix and are polished by
/// Newton steps on the orthonormal Hermite functions (the polynomials scaled
/// by `e^{−t²/2}`, which keeps the recurrence in range); weights come from
/// the derivative at the polished node.
pub fn gauss_hermite(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1, "need at least one node");
    let jacobi =
        DMatrix::from_fn(n, n, |i, j| if i + 1 == j || j + 1 == i { (i.max(j) as f64 / 2.0).sqrt() } else { 0.0 });
    let mut seeds: Vec<f64> = SymmetricEigen::new(jacobi).eigenvalues.iter().copied().collect();
    seeds.sort_by(f64::total_cmp);
    let mut x = Vec::with_capacity(n);
    let mut w = Vec::with_capacity(n);
    for mut z in seeds {
        let mut dpsi = 1.0;
        for _ in 0..8 {
            let (psi, d) = hermite_function(n, z);
            dpsi = d;
            let step = psi / d;
            z -= step;
            if step.abs() <= 1e-15 * z.abs().max(1.0) {
                break;
            }
        }
        x.push(z);
        w.push(2.0 * (-z * z).exp() / (dpsi * dpsi));
    }
    (x, w)
}

/// `ψ_n(z)` and `√(2n) ψ_{n−1}(z)`, where `ψ_k = H̃_k(z) e^{−z²/2}` with
/// orthonormal `H̃_k`; at a root of `ψ_n` the second value is
/// `H̃_n'(z) e^{−z²/2}`.
fn hermite_function(n: usize, z: f64) -> (f64, f64) {
    let (mut p1, mut p2) = (PI.powf(-0.25) * (-0.5 * z * z).exp(), 0.0);
    for j in 1..=n {
        let p3 = p2;
        p2 = p1;
        let jf = j as f64;
        p1 = z * (2.0 / jf).sqrt() * p2 - ((jf - 1.0) / jf).sqrt() * p3;
    }
    (p1, (2.0 * n as f64).sqrt() * p2)
}
