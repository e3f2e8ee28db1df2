//! Standard operators on small Hilbert spaces: Pauli matrices on the
//! two-level emitter (basis |g>, |e>) and a truncated boson ladder.

use crate::{CMatrix, Complex64};

fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

/// sigma_+ = |e><g|
pub fn sigma_plus() -> CMatrix {
    CMatrix::from_fn(2, 2, |i, j| if i == 1 && j == 0 { c(1.0, 0.0) } else { c(0.0, 0.0) })
}

/// sigma_- = |g><e|
pub fn sigma_minus() -> CMatrix {
    sigma_plus().adjoint()
}

/// sigma_+ sigma_- = |e><e| (excited-state projector)
pub fn sigma_pm() -> CMatrix {
    CMatrix::from_fn(2, 2, |i, j| if i == 1 && j == 1 { c(1.0, 0.0) } else { c(0.0, 0.0) })
}

pub fn sigma_x() -> CMatrix {
    CMatrix::from_fn(2, 2, |i, j| if i != j { c(1.0, 0.0) } else { c(0.0, 0.0) })
}

pub fn sigma_z() -> CMatrix {
    CMatrix::from_fn(2, 2, |i, j| match (i, j) {
        (0, 0) => c(-1.0, 0.0),
        (1, 1) => c(1.0, 0.0),
        _ => c(0.0, 0.0),
    })
}

/// Annihilation operator on an `m`-level truncated Fock space.
pub fn annihilate(m: usize) -> CMatrix {
    CMatrix::from_fn(m, m, |i, j| {
        if j == i + 1 {
            c((j as f64).sqrt(), 0.0)
        } else {
            c(0.0, 0.0)
        }
    })
}

pub fn create(m: usize) -> CMatrix {
    annihilate(m).adjoint()
}

/// Number operator `a^dag a` on an `m`-level Fock space.
pub fn number(m: usize) -> CMatrix {
    CMatrix::from_fn(m, m, |i, j| if i == j { c(i as f64, 0.0) } else { c(0.0, 0.0) })
}

/// Density matrix of the Fock vacuum.
pub fn vacuum(m: usize) -> CMatrix {
    CMatrix::from_fn(m, m, |i, j| if i == 0 && j == 0 { c(1.0, 0.0) } else { c(0.0, 0.0) })
}

/// Two-level ground-state density matrix.
pub fn ground() -> CMatrix {
    vacuum(2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::kron;

    #[test]
    fn ladder_algebra() {
        let m = 5;
        let a = annihilate(m);
        let ad = create(m);
        let n = number(m);
        // a^dag a = n on the truncated space
        let diff = &ad * &a - &n;
        assert!(diff.iter().all(|z| z.norm() < 1e-15));
        // [a, a^dag] = 1 except in the top corner
        let comm = &a * &ad - &ad * &a;
        for i in 0..m - 1 {
            assert!((comm[(i, i)] - Complex64::new(1.0, 0.0)).norm() < 1e-15);
        }
        assert!((comm[(m - 1, m - 1)] - Complex64::new(-((m - 1) as f64), 0.0)).norm() < 1e-12);
    }

    #[test]
    fn pauli_identities() {
        assert_eq!(&sigma_plus() * &sigma_minus(), sigma_pm());
        let sz = &sigma_plus() * &sigma_minus() - &sigma_minus() * &sigma_plus();
        assert_eq!(sz, sigma_z());
    }

    #[test]
    fn kron_dims() {
        let op = kron(&sigma_pm(), &CMatrix::identity(4, 4));
        assert_eq!(op.shape(), (8, 8));
    }
}
