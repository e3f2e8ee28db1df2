//! Small dense complex linear-algebra helpers: Kronecker products,
//! eigenvalues of general complex matrices, and Hermiticity checks.

use crate::{CMatrix, Complex64};

/// Kronecker product `a (x) b`.
pub fn kron(a: &CMatrix, b: &CMatrix) -> CMatrix {
    let (ar, ac) = a.shape();
    let (br, bc) = b.shape();
    let mut out = CMatrix::zeros(ar * br, ac * bc);
    for i in 0..ar {
        for j in 0..ac {
            let aij = a[(i, j)];
            if aij == Complex64::new(0.0, 0.0) {
                continue;
            }
            for k in 0..br {
                for l in 0..bc {
                    out[(i * br + k, j * bc + l)] = aij * b[(k, l)];
                }
            }
        }
    }
    out
}

/// n x n identity.
pub fn eye(n: usize) -> CMatrix {
    CMatrix::identity(n, n)
}

/// Max |A - A^dagger| entry.
pub fn hermiticity_defect(a: &CMatrix) -> f64 {
    let ah = a.adjoint();
    (a - ah).iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// Coefficients of det(xI - A) by Faddeev-LeVerrier: returns `c` with
/// `p(x) = x^n + c[0] x^{n-1} + ... + c[n-1]`.
pub fn char_poly(a: &CMatrix) -> Vec<Complex64> {
    let n = a.nrows();
    assert_eq!(n, a.ncols());
    let mut m = eye(n);
    let mut coeffs: Vec<Complex64> = Vec::with_capacity(n);
    for k in 1..=n {
        // M_k = A (M_{k-1} + c_{k-1} I), c_k = -tr(M_k) / k
        if let Some(&c) = coeffs.last() {
            for i in 0..n {
                m[(i, i)] += c;
            }
        }
        m = a * &m;
        let tr: Complex64 = (0..n).map(|i| m[(i, i)]).sum();
        coeffs.push(-tr / Complex64::new(k as f64, 0.0));
    }
    coeffs
}

/// All roots of `x^n + c[0] x^{n-1} + ... + c[n-1]` by Aberth-Ehrlich
/// iteration. Intended for small n (<= ~16).
pub fn poly_roots(coeffs: &[Complex64]) -> Vec<Complex64> {
    let n = coeffs.len();
    if n == 0 {
        return Vec::new();
    }
    // radius bound and staggered initial ring
    let r = 1.0
        + coeffs
            .iter()
            .map(|c| c.norm())
            .fold(0.0f64, f64::max);
    let mut roots: Vec<Complex64> = (0..n)
        .map(|k| {
            let th = 2.0 * std::f64::consts::PI * (k as f64 + 0.35) / n as f64;
            0.7 * r * Complex64::new(th.cos(), th.sin())
        })
        .collect();
    let eval = |x: Complex64| -> (Complex64, Complex64) {
        // p(x), p'(x) by Horner
        let mut p = Complex64::new(1.0, 0.0);
        let mut dp = Complex64::new(0.0, 0.0);
        for &c in coeffs {
            dp = dp * x + p;
            p = p * x + c;
        }
        (p, dp)
    };
    for _ in 0..200 {
        let mut max_step = 0.0f64;
        let snapshot = roots.clone();
        for i in 0..n {
            let x = snapshot[i];
            let (p, dp) = eval(x);
            if p.norm() == 0.0 {
                continue;
            }
            let newton = if dp.norm() > 0.0 { p / dp } else { p };
            let mut s = Complex64::new(0.0, 0.0);
            for (j, &y) in snapshot.iter().enumerate() {
                if j != i {
                    let d = x - y;
                    if d.norm() > 1e-300 {
                        s += Complex64::new(1.0, 0.0) / d;
                    }
                }
            }
            let denom = Complex64::new(1.0, 0.0) - newton * s;
            let step = if denom.norm() > 1e-300 {
                newton / denom
            } else {
                newton
            };
            roots[i] = x - step;
            max_step = max_step.max(step.norm());
        }
        if max_step < 1e-14 * r {
            break;
        }
    }
    roots
}

/// Eigenvalues of a general complex matrix via Schur decomposition, with a
/// characteristic-polynomial fallback for the rare non-converged case.
pub fn eigenvalues(a: &CMatrix) -> Vec<Complex64> {
    let scale = a.iter().map(|z| z.norm()).fold(0.0f64, f64::max);
    if scale == 0.0 {
        return vec![Complex64::new(0.0, 0.0); a.nrows()];
    }
    let b = a.map(|z| z / scale);
    if let Some(ev) = b
        .clone()
        .try_schur(1e-14, 200_000)
        .and_then(|s| s.eigenvalues())
    {
        return ev.iter().map(|&r| r * scale).collect();
    }
    poly_roots(&char_poly(&b))
        .into_iter()
        .map(|r| r * scale)
        .collect()
}

/// Eigenvalues of a Hermitian matrix, ascending (real parts).
pub fn hermitian_eigenvalues(a: &CMatrix) -> Vec<f64> {
    let sym = nalgebra::SymmetricEigen::new(a.clone());
    let mut ev: Vec<f64> = sym.eigenvalues.iter().copied().collect();
    ev.sort_by(|x, y| x.partial_cmp(y).unwrap());
    ev
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn kron_dims_and_values() {
        let a = CMatrix::from_row_slice(2, 2, &[c(1.0, 0.0), c(2.0, 0.0), c(0.0, 0.0), c(1.0, 1.0)]);
        let b = eye(3);
        let k = kron(&a, &b);
        assert_eq!(k.shape(), (6, 6));
        assert_eq!(k[(0, 3)], c(2.0, 0.0));
        assert_eq!(k[(5, 5)], c(1.0, 1.0));
    }

    #[test]
    fn eigenvalues_of_diagonal() {
        let mut a = CMatrix::zeros(3, 3);
        a[(0, 0)] = c(1.0, 0.0);
        a[(1, 1)] = c(-2.0, 0.5);
        a[(2, 2)] = c(0.0, -3.0);
        let mut ev = eigenvalues(&a);
        ev.sort_by(|x, y| x.re.partial_cmp(&y.re).unwrap());
        assert!((ev[0] - c(-2.0, 0.5)).norm() < 1e-10);
        assert!((ev[1] - c(0.0, -3.0)).norm() < 1e-10);
        assert!((ev[2] - c(1.0, 0.0)).norm() < 1e-10);
    }

    #[test]
    fn eigenvalues_of_nontrivial_matrix() {
        // [[0, 1], [-2, -3]] has eigenvalues -1, -2
        let a = CMatrix::from_row_slice(
            2,
            2,
            &[c(0.0, 0.0), c(1.0, 0.0), c(-2.0, 0.0), c(-3.0, 0.0)],
        );
        let mut ev = eigenvalues(&a);
        ev.sort_by(|x, y| x.re.partial_cmp(&y.re).unwrap());
        assert!((ev[0] - c(-2.0, 0.0)).norm() < 1e-10);
        assert!((ev[1] - c(-1.0, 0.0)).norm() < 1e-10);
    }

    #[test]
    fn repeated_roots_recovered() {
        // (x+1)^2 (x+2) = x^3 + 4x^2 + 5x + 2
        let roots = poly_roots(&[c(4.0, 0.0), c(5.0, 0.0), c(2.0, 0.0)]);
        let near_m1 = roots.iter().filter(|r| (**r - c(-1.0, 0.0)).norm() < 1e-5).count();
        let near_m2 = roots.iter().filter(|r| (**r - c(-2.0, 0.0)).norm() < 1e-8).count();
        assert_eq!(near_m1, 2);
        assert_eq!(near_m2, 1);
    }

    #[test]
    fn hermitian_eigenvalues_sorted() {
        let a = CMatrix::from_row_slice(
            2,
            2,
            &[c(1.0, 0.0), c(0.0, -1.0), c(0.0, 1.0), c(1.0, 0.0)],
        );
        let ev = hermitian_eigenvalues(&a);
        assert!((ev[0] - 0.0).abs() < 1e-12);
        assert!((ev[1] - 2.0).abs() < 1e-12);
    }
}
