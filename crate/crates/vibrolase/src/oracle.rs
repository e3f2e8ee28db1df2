//! Brute-force reference built from an explicit Liouvillian on the full
//! Hilbert space: emitters, a truncated cavity, and each bath term realized
//! as a damped ancilla oscillator (pseudomode). Intended as a slow,
//! independently-coded cross-check for the hierarchy and cluster solvers at
//! small sizes.

use crate::error::{Error, Result};
use crate::expfit::ExponentialBathModel;
use crate::linalg::{self, kron};
use crate::ode::{AdaptiveOde, OdeOptions};
use crate::qops;
use crate::{CMatrix, Complex64};

/// Dense master-equation model: `drho = -i[H,rho] + sum_k rate_k D[L_k]rho`
/// with `D[L]rho = 2 L rho Ldag - {Ldag L, rho}`.
#[derive(Debug, Clone)]
pub struct LiouvillianSpec {
    pub dim: usize,
    pub hamiltonian: CMatrix,
    pub lindblads: Vec<(CMatrix, f64)>,
}

/// One ancilla realizing a bath term `g^2 exp(-(i omega + gamma) tau)`.
#[derive(Debug, Clone, Copy)]
pub struct Pseudomode {
    pub coupling: f64,
    pub omega: f64,
    pub gamma: f64,
    pub cutoff: usize,
}

/// Map fitted bath terms onto damped ancillas. Only terms with real,
/// positive amplitude admit this construction.
pub fn pseudomodes_from_bath(
    model: &ExponentialBathModel,
    cutoffs: &[usize],
) -> Result<Vec<Pseudomode>> {
    if cutoffs.len() != model.terms.len() {
        return Err(Error::Validation("one cutoff per bath term required".into()));
    }
    let mut out = Vec::new();
    for (t, &m) in model.terms.iter().zip(cutoffs) {
        if t.g.im.abs() > 1e-10 * t.g.norm() || t.g.re <= 0.0 {
            return Err(Error::Validation(format!(
                "bath term amplitude {} is not real positive; no ancilla realization",
                t.g
            )));
        }
        if m < 2 {
            return Err(Error::Validation("ancilla cutoff must be >= 2".into()));
        }
        out.push(Pseudomode {
            coupling: t.g.re.sqrt(),
            omega: t.w.im,
            gamma: t.w.re,
            cutoff: m,
        });
    }
    Ok(out)
}

/// Few-emitter lasing model in the drive rotating frame.
#[derive(Debug, Clone)]
pub struct LasingOracleSpec {
    pub n_emitters: usize,
    /// coherent drive amplitude on each emitter (sigma_x term)
    pub drive: f64,
    /// incoherent pump rate per emitter; used by the rate-equation variant
    pub pump: f64,
    pub g_cav: f64,
    pub kappa: f64,
    /// cavity detuning from the drive frame
    pub detuning: f64,
    /// spontaneous decay rate per emitter
    pub gamma_down: f64,
    pub cavity_cutoff: usize,
    /// one set of ancillas attached to every emitter's excited projector
    pub pseudomodes: Vec<Pseudomode>,
}

impl LasingOracleSpec {
    /// Total Hilbert-space dimension.
    pub fn dim(&self) -> usize {
        let pm: usize = self.pseudomodes.iter().map(|p| p.cutoff).product::<usize>();
        (1usize << self.n_emitters) * self.cavity_cutoff * pm.pow(self.n_emitters as u32)
    }
}

/// Embed `op` at position `slot` of a tensor product with the given factor
/// dimensions.
pub fn embed(op: &CMatrix, dims: &[usize], slot: usize) -> CMatrix {
    let mut acc = CMatrix::identity(1, 1);
    for (i, &d) in dims.iter().enumerate() {
        if i == slot {
            acc = kron(&acc, op);
        } else {
            acc = kron(&acc, &CMatrix::identity(d, d));
        }
    }
    acc
}

/// Expand a [`LasingOracleSpec`] into a flat master-equation model.
///
/// Factor order: emitter_1 .. emitter_N, cavity, then the ancillas of
/// emitter 1, emitter 2, ...
pub fn build_lasing_liouvillian(spec: &LasingOracleSpec) -> Result<LiouvillianSpec> {
    if spec.n_emitters == 0 || spec.n_emitters > 3 {
        return Err(Error::Validation(
            "oracle supports 1 to 3 emitters".into(),
        ));
    }
    if spec.cavity_cutoff < 2 {
        return Err(Error::Validation("cavity cutoff must be >= 2".into()));
    }
    let dim = spec.dim();
    if dim > 4096 {
        return Err(Error::Capacity(format!(
            "oracle dimension {dim} exceeds 4096; trim cutoffs or emitters"
        )));
    }
    let n = spec.n_emitters;
    let mut dims: Vec<usize> = vec![2; n];
    dims.push(spec.cavity_cutoff);
    for _ in 0..n {
        for p in &spec.pseudomodes {
            dims.push(p.cutoff);
        }
    }
    let cav_slot = n;
    let pm_slot = |emitter: usize, k: usize| n + 1 + emitter * spec.pseudomodes.len() + k;

    let mut h = CMatrix::zeros(dim, dim);
    let a = embed(&qops::annihilate(spec.cavity_cutoff), &dims, cav_slot);
    let ad = a.adjoint();
    h += (&ad * &a).scale(spec.detuning);
    let mut lindblads: Vec<(CMatrix, f64)> = vec![(a.clone(), spec.kappa)];
    for e in 0..n {
        let sp = embed(&qops::sigma_plus(), &dims, e);
        let sm = sp.adjoint();
        let proj = &sp * &sm;
        if spec.drive != 0.0 {
            h += (&sp + &sm).scale(spec.drive);
        }
        h += (&sp * &a + &sm * &ad).scale(spec.g_cav);
        if spec.gamma_down > 0.0 {
            lindblads.push((sm.clone(), spec.gamma_down));
        }
        if spec.pump > 0.0 {
            lindblads.push((sp.clone(), spec.pump));
        }
        for (k, p) in spec.pseudomodes.iter().enumerate() {
            let b = embed(&qops::annihilate(p.cutoff), &dims, pm_slot(e, k));
            let bd = b.adjoint();
            h += (&bd * &b).scale(p.omega);
            h += (&proj * (&b + &bd)).scale(p.coupling);
            lindblads.push((b, p.gamma));
        }
    }
    Ok(LiouvillianSpec {
        dim,
        hamiltonian: h,
        lindblads,
    })
}

/// Dense Liouvillian superoperator acting on column-stacked `vec(rho)`.
pub fn liouvillian_matrix(spec: &LiouvillianSpec) -> Result<CMatrix> {
    let d = spec.dim;
    if d * d > 4096 {
        return Err(Error::Capacity(format!(
            "superoperator would be {0} x {0}; cap is 4096",
            d * d
        )));
    }
    let id = CMatrix::identity(d, d);
    let i_unit = Complex64::new(0.0, 1.0);
    let ht = spec.hamiltonian.transpose();
    let mut l = kron(&id, &spec.hamiltonian).scale(1.0) * (-i_unit)
        + kron(&ht, &id) * i_unit;
    for (op, rate) in &spec.lindblads {
        let g = Complex64::new(*rate, 0.0);
        let opc = op.map(|z| z.conj());
        let od = op.adjoint();
        let odo = &od * op;
        l += kron(&opc, op).scale(2.0) * g;
        l -= kron(&id, &odo) * g;
        l -= kron(&odo.transpose(), &id) * g;
    }
    Ok(l)
}

/// Spectrum of the dense superoperator.
pub fn liouvillian_eigenvalues(spec: &LiouvillianSpec) -> Result<Vec<Complex64>> {
    Ok(linalg::eigenvalues(&liouvillian_matrix(spec)?))
}

/// Exact stationary state: the trace-one element of the superoperator's
/// null space, found by SVD.
pub fn steady_state_exact(spec: &LiouvillianSpec) -> Result<CMatrix> {
    let l = liouvillian_matrix(spec)?;
    let d = spec.dim;
    let svd = l.clone().svd(false, true);
    let vt = svd
        .v_t
        .ok_or_else(|| Error::Numeric("SVD failed on superoperator".into()))?;
    let (k, &smin) = svd
        .singular_values
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.partial_cmp(b.1).unwrap())
        .unwrap();
    let smax = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    if smin > 1e-8 * smax.max(1.0) {
        return Err(Error::Numeric(format!(
            "no null vector: smallest singular value {smin:.3e}"
        )));
    }
    let v = vt.row(k).map(|z| z.conj()).transpose();
    let mut rho = CMatrix::from_fn(d, d, |i, j| v[j * d + i]);
    // hermitize and normalize
    rho = (rho.clone() + rho.adjoint()).scale(0.5);
    let tr: Complex64 = (0..d).map(|i| rho[(i, i)]).sum();
    if tr.norm() < 1e-12 {
        return Err(Error::Numeric("null vector is traceless".into()));
    }
    rho /= tr;
    Ok(rho)
}

/// Propagate `rho0` to `t_final` with a matrix-free dense right-hand side;
/// this is the fallback when the superoperator does not fit the dense cap.
pub fn propagate_oracle(
    spec: &LiouvillianSpec,
    rho0: &CMatrix,
    t_final: f64,
    rtol: f64,
) -> Result<CMatrix> {
    propagate_observed(spec, rho0, t_final, rtol, |_, _| true)
}

/// As [`propagate_oracle`] but calls `observe(t, rho)` at every accepted
/// step; return `false` to stop early.
pub fn propagate_observed<F: FnMut(f64, &CMatrix) -> bool>(
    spec: &LiouvillianSpec,
    rho0: &CMatrix,
    t_final: f64,
    rtol: f64,
    mut observe: F,
) -> Result<CMatrix> {
    let d = spec.dim;
    if rho0.shape() != (d, d) {
        return Err(Error::Validation("initial state shape mismatch".into()));
    }
    // every operator is a kron product of ladder operators, so sparse
    // application beats dense gemm by orders of magnitude at large dims
    let pre: Vec<(SparseOp, SparseOp, SparseOp, f64)> = spec
        .lindblads
        .iter()
        .map(|(op, r)| {
            let od = op.adjoint();
            let odo = &od * op;
            (
                SparseOp::from_dense(op),
                SparseOp::from_dense(&od),
                SparseOp::from_dense(&odo),
                *r,
            )
        })
        .collect();
    let ham = SparseOp::from_dense(&spec.hamiltonian);
    let mut scratch = vec![Complex64::default(); d * d];
    let i_unit = Complex64::new(0.0, 1.0);
    let one = Complex64::new(1.0, 0.0);

    let mut rhs = |_t: f64, y: &[Complex64], dy: &mut [Complex64]| {
        dy.fill(Complex64::default());
        ham.acc_left(dy, -i_unit, y, d);
        ham.acc_right(dy, i_unit, y, d);
        for (op, od, odo, rate) in &pre {
            let g = Complex64::new(*rate, 0.0);
            scratch.fill(Complex64::default());
            op.acc_left(&mut scratch, one, y, d);
            od.acc_right(dy, 2.0 * g, &scratch, d);
            odo.acc_left(dy, -g, y, d);
            odo.acc_right(dy, -g, y, d);
        }
    };
    let mut y: Vec<Complex64> = rho0.as_slice().to_vec();
    let ode = AdaptiveOde::new(OdeOptions {
        rtol,
        atol: rtol * 1e-4,
        ..Default::default()
    });
    let mut view = CMatrix::zeros(d, d);
    let mut watcher = |t: f64, y: &[Complex64]| {
        view.as_mut_slice().copy_from_slice(y);
        observe(t, &view)
    };
    ode.propagate(&mut rhs, 0.0, t_final, &mut y, Some(&mut watcher))?;
    Ok(CMatrix::from_column_slice(d, d, &y))
}

/// Steady state by long propagation: stop once `observable` is stationary
/// over a trailing window.
pub fn steady_state_propagated(
    spec: &LiouvillianSpec,
    rho0: &CMatrix,
    observable: &CMatrix,
    window: f64,
    tol: f64,
    max_time: f64,
) -> Result<CMatrix> {
    let mut history: Vec<(f64, f64)> = Vec::new();
    let mut done = false;
    let rho = propagate_observed(spec, rho0, max_time, 1e-8, |t, r| {
        let v = expectation_of(r, observable).re;
        history.push((t, v));
        let t0 = t - window;
        if history[0].0 > t0 - window {
            return true;
        }
        while history.len() > 1 && history[1].0 <= t0 {
            history.remove(0);
        }
        let spread = history.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max)
            - history.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
        if spread < tol {
            done = true;
            false
        } else {
            true
        }
    })?;
    if !done {
        return Err(Error::NonConvergence(format!(
            "oracle propagation not stationary by t = {max_time:.3e}"
        )));
    }
    Ok(rho)
}

/// Triplet form of a dense matrix for fast left/right application to
/// column-major square states.
struct SparseOp {
    entries: Vec<(usize, usize, Complex64)>,
}

impl SparseOp {
    fn from_dense(m: &CMatrix) -> Self {
        let mut entries = Vec::new();
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                let v = m[(i, j)];
                if v.re != 0.0 || v.im != 0.0 {
                    entries.push((i, j, v));
                }
            }
        }
        Self { entries }
    }

    /// `out += alpha * self * x`, column-major `d x d` slices.
    fn acc_left(&self, out: &mut [Complex64], alpha: Complex64, x: &[Complex64], d: usize) {
        for &(i, k, v) in &self.entries {
            let av = alpha * v;
            for j in 0..d {
                out[j * d + i] += av * x[j * d + k];
            }
        }
    }

    /// `out += alpha * x * self`, column-major `d x d` slices.
    fn acc_right(&self, out: &mut [Complex64], alpha: Complex64, x: &[Complex64], d: usize) {
        for &(k, j, v) in &self.entries {
            let av = alpha * v;
            let src = &x[k * d..(k + 1) * d];
            let dst = &mut out[j * d..(j + 1) * d];
            for (o, s) in dst.iter_mut().zip(src) {
                *o += av * s;
            }
        }
    }
}

/// `tr(rho O)` for dense matrices.
pub fn expectation_of(rho: &CMatrix, obs: &CMatrix) -> Complex64 {
    let d = rho.nrows();
    let mut acc = Complex64::default();
    for i in 0..d {
        for j in 0..d {
            acc += rho[(i, j)] * obs[(j, i)];
        }
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expfit::ExpTerm;
    use approx::assert_relative_eq;

    fn tls_decay(gamma: f64) -> LiouvillianSpec {
        LiouvillianSpec {
            dim: 2,
            hamiltonian: CMatrix::zeros(2, 2),
            lindblads: vec![(qops::sigma_minus(), gamma)],
        }
    }

    #[test]
    fn tls_decay_spectrum() {
        let gamma = 0.7;
        let mut ev = liouvillian_eigenvalues(&tls_decay(gamma)).unwrap();
        ev.sort_by(|a, b| b.re.partial_cmp(&a.re).unwrap());
        let expected = [0.0, -gamma, -gamma, -2.0 * gamma];
        for (z, e) in ev.iter().zip(expected) {
            // the repeated root at -gamma is only conditioned to ~sqrt(eps)
            assert!((z - Complex64::new(e, 0.0)).norm() < 1e-6, "{z} vs {e}");
        }
    }

    #[test]
    fn zero_spec_gives_zero_superoperator() {
        let spec = LiouvillianSpec {
            dim: 3,
            hamiltonian: CMatrix::zeros(3, 3),
            lindblads: vec![],
        };
        let l = liouvillian_matrix(&spec).unwrap();
        assert!(l.iter().all(|z| z.norm() == 0.0));
    }

    #[test]
    fn jaynes_cummings_rabi_period() {
        // |e,0> under H = g (sigma+ a + sigma- adag) returns at t = pi / g
        let g = 0.37;
        let dims = [2usize, 4];
        let sp = embed(&qops::sigma_plus(), &dims, 0);
        let a = embed(&qops::annihilate(4), &dims, 1);
        let h = (&sp * &a + (&sp * &a).adjoint()).scale(g);
        let spec = LiouvillianSpec {
            dim: 8,
            hamiltonian: h,
            lindblads: vec![],
        };
        let pe_op = embed(&qops::sigma_pm(), &dims, 0);
        let mut rho0 = CMatrix::zeros(8, 8);
        // basis index: emitter excited (1) x vacuum (0) -> 1 * 4 + 0
        rho0[(4, 4)] = Complex64::new(1.0, 0.0);
        let half = propagate_oracle(&spec, &rho0, std::f64::consts::PI / (2.0 * g), 1e-10).unwrap();
        assert!(expectation_of(&half, &pe_op).re < 1e-8);
        let full = propagate_oracle(&spec, &rho0, std::f64::consts::PI / g, 1e-10).unwrap();
        assert_relative_eq!(expectation_of(&full, &pe_op).re, 1.0, epsilon = 1e-7);
    }

    #[test]
    fn driven_tls_steady_state_matches_bloch_equations() {
        // independent check: stationary Bloch vector of
        //   xdot = -G x, ydot = -G y - 2 E z, zdot = 2 E y - 2 G (z + 1)
        let e_d = 0.23;
        let gamma = 0.11;
        let spec = LiouvillianSpec {
            dim: 2,
            hamiltonian: qops::sigma_x().scale(e_d),
            lindblads: vec![(qops::sigma_minus(), gamma)],
        };
        let rho = steady_state_exact(&spec).unwrap();
        let z_expect = -gamma * gamma / (2.0 * e_d * e_d + gamma * gamma);
        assert_relative_eq!(
            expectation_of(&rho, &qops::sigma_z()).re,
            z_expect,
            epsilon = 1e-10
        );
        // residual of the full equation of motion at the claimed fixed point
        let l = liouvillian_matrix(&spec).unwrap();
        let v = crate::CVector::from_column_slice(rho.as_slice());
        assert!((l * v).norm() < 1e-10);
    }

    #[test]
    fn exact_and_propagated_steady_states_agree() {
        let spec = LasingOracleSpec {
            n_emitters: 1,
            drive: 0.3,
            pump: 0.0,
            g_cav: 0.2,
            kappa: 1.0,
            detuning: 0.1,
            gamma_down: 0.05,
            cavity_cutoff: 5,
            pseudomodes: vec![],
        };
        let l = build_lasing_liouvillian(&spec).unwrap();
        let exact = steady_state_exact(&l).unwrap();
        let dims = [2usize, 5];
        let n_op = embed(&qops::number(5), &dims, 1);
        let mut rho0 = CMatrix::zeros(l.dim, l.dim);
        rho0[(0, 0)] = Complex64::new(1.0, 0.0);
        let prop = steady_state_propagated(&l, &rho0, &n_op, 30.0, 1e-10, 5e3).unwrap();
        let ne = expectation_of(&exact, &n_op).re;
        let np = expectation_of(&prop, &n_op).re;
        assert!((ne - np).abs() < 1e-7, "{ne} vs {np}");
        // physical state
        let ev = crate::linalg::hermitian_eigenvalues(&exact);
        assert!(ev.iter().all(|&x| x > -1e-9));
    }

    #[test]
    fn pseudomode_admissibility() {
        let good = ExponentialBathModel::new(vec![ExpTerm {
            g: Complex64::new(0.04, 0.0),
            w: Complex64::new(0.3, 1.2),
        }])
        .unwrap();
        let pm = pseudomodes_from_bath(&good, &[5]).unwrap();
        assert_relative_eq!(pm[0].coupling, 0.2, epsilon = 1e-14);
        assert_relative_eq!(pm[0].omega, 1.2);
        assert_relative_eq!(pm[0].gamma, 0.3);

        let bad = ExponentialBathModel::new(vec![ExpTerm {
            g: Complex64::new(0.04, 0.01),
            w: Complex64::new(0.3, 1.2),
        }])
        .unwrap();
        assert!(pseudomodes_from_bath(&bad, &[5]).is_err());
        assert!(pseudomodes_from_bath(&good, &[]).is_err());
    }

    #[test]
    fn capacity_limits() {
        let spec = LasingOracleSpec {
            n_emitters: 3,
            drive: 0.1,
            pump: 0.0,
            g_cav: 0.1,
            kappa: 1.0,
            detuning: 0.0,
            gamma_down: 0.0,
            cavity_cutoff: 16,
            pseudomodes: vec![Pseudomode {
                coupling: 0.1,
                omega: 1.0,
                gamma: 0.2,
                cutoff: 4,
            }],
        };
        assert!(matches!(
            build_lasing_liouvillian(&spec).unwrap_err(),
            Error::Capacity(_)
        ));
        let four = LasingOracleSpec {
            n_emitters: 4,
            ..spec
        };
        assert!(build_lasing_liouvillian(&four).is_err());
    }

    #[test]
    fn cavity_cutoff_convergence() {
        // weakly driven damped cavity: photon number insensitive to cutoff
        let mut vals = Vec::new();
        for m in [4usize, 6, 8] {
            let spec = LasingOracleSpec {
                n_emitters: 1,
                drive: 0.4,
                pump: 0.0,
                g_cav: 0.25,
                kappa: 1.0,
                detuning: 0.0,
                gamma_down: 0.02,
                cavity_cutoff: m,
                pseudomodes: vec![],
            };
            let l = build_lasing_liouvillian(&spec).unwrap();
            let rho = steady_state_exact(&l).unwrap();
            let n_op = embed(&qops::number(m), &[2, m], 1);
            vals.push(expectation_of(&rho, &n_op).re);
        }
        assert!((vals[1] - vals[2]).abs() < 1e-6);
        assert!((vals[0] - vals[2]).abs() < 1e-3);
    }
}
