//! Hierarchical equations of motion for one open system: a finite-dimensional
//! Hamiltonian, exponential baths attached through designated coupling
//! operators, and GKSL dissipators in the convention
//! `D[L] rho = 2 L rho L^dag - {L^dag L, rho}`.
//!
//! Each fitted bath term `G exp(-W tau)` spawns one hierarchy mode; when `W`
//! or `G` has an imaginary part the conjugate decomposition needs its own
//! exponent, so the term is doubled into `(nu = W, c = G, c' = 0)` and
//! `(nu = W*, c = 0, c' = G*)`. Auxiliaries are scaled so their magnitudes
//! stay O(1) at depth.

use crate::error::{Error, Result};
use crate::expfit::ExponentialBathModel;
use crate::hierarchy::{hierarchy_size, HierarchyIndex};
use crate::linalg::hermiticity_defect;
use crate::ode::{AdaptiveOde, OdeOptions};
use crate::{CMatrix, Complex64};

/// One bath attached to the system through `operator`.
#[derive(Debug, Clone)]
pub struct BathCoupling {
    pub operator: CMatrix,
    pub bath: ExponentialBathModel,
}

/// GKSL dissipator `rate * D[operator]`.
#[derive(Debug, Clone)]
pub struct LindbladTerm {
    pub operator: CMatrix,
    pub rate: f64,
}

/// Full open-system specification in the rotating frame.
#[derive(Debug, Clone)]
pub struct SystemSpec {
    pub dim: usize,
    pub hamiltonian: CMatrix,
    pub bath_couplings: Vec<BathCoupling>,
    pub lindblad_terms: Vec<LindbladTerm>,
}

impl SystemSpec {
    pub fn validate(&self) -> Result<()> {
        if self.hamiltonian.shape() != (self.dim, self.dim) {
            return Err(Error::Validation("hamiltonian shape mismatch".into()));
        }
        let defect = hermiticity_defect(&self.hamiltonian);
        let scale = self
            .hamiltonian
            .iter()
            .map(|z| z.norm())
            .fold(0.0f64, f64::max)
            .max(1.0);
        if defect > 1e-12 * scale {
            return Err(Error::Validation(format!(
                "hamiltonian not Hermitian: defect {defect:.3e}"
            )));
        }
        for b in &self.bath_couplings {
            if b.operator.shape() != (self.dim, self.dim) {
                return Err(Error::Validation("bath coupling operator shape".into()));
            }
            for t in &b.bath.terms {
                if t.w.re <= 0.0 {
                    return Err(Error::Validation("bath term must decay".into()));
                }
            }
        }
        for l in &self.lindblad_terms {
            if l.operator.shape() != (self.dim, self.dim) {
                return Err(Error::Validation("lindblad operator shape".into()));
            }
            if l.rate < 0.0 {
                return Err(Error::Validation("lindblad rate must be >= 0".into()));
            }
        }
        Ok(())
    }
}

/// Truncation and integrator settings.
#[derive(Debug, Clone, Copy)]
pub struct HeomConfig {
    pub depth: usize,
    pub rtol: f64,
    pub atol: f64,
    pub h_init: f64,
    pub max_time: f64,
}

impl Default for HeomConfig {
    fn default() -> Self {
        Self {
            depth: 4,
            rtol: 1e-8,
            atol: 1e-12,
            h_init: 1e-2,
            max_time: 1e7,
        }
    }
}

/// One hierarchy mode after doubling: `alpha` contributes `c exp(-nu tau)`,
/// the conjugate decomposition contributes `c' exp(-nu tau)`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct HierarchyMode {
    pub nu: Complex64,
    pub c_left: Complex64,
    pub c_right: Complex64,
    pub scale: f64,
    /// which bath coupling operator this mode belongs to
    pub op: usize,
}

/// Expand fitted bath terms into hierarchy modes (with conjugate doubling).
pub(crate) fn expand_modes(baths: &[BathCoupling]) -> Vec<HierarchyMode> {
    let mut modes = Vec::new();
    for (bi, b) in baths.iter().enumerate() {
        for t in &b.bath.terms {
            if t.g.norm() == 0.0 {
                continue;
            }
            let real_pair = t.w.im.abs() <= 1e-14 * t.w.norm() && t.g.im.abs() <= 1e-14 * t.g.norm();
            if real_pair {
                modes.push(HierarchyMode {
                    nu: t.w,
                    c_left: t.g,
                    c_right: t.g.conj(),
                    scale: t.g.norm(),
                    op: bi,
                });
            } else {
                modes.push(HierarchyMode {
                    nu: t.w,
                    c_left: t.g,
                    c_right: Complex64::default(),
                    scale: t.g.norm(),
                    op: bi,
                });
                modes.push(HierarchyMode {
                    nu: t.w.conj(),
                    c_left: Complex64::default(),
                    c_right: t.g.conj(),
                    scale: t.g.norm(),
                    op: bi,
                });
            }
        }
    }
    modes
}

/// Hierarchy of auxiliary density operators; entry 0 of `ados` is the
/// physical reduced density matrix.
#[derive(Debug, Clone)]
pub struct HeomState {
    pub time: f64,
    pub dim: usize,
    /// flat storage, `ados * dim * dim`, row-major blocks
    pub data: Vec<Complex64>,
    pub hier: HierarchyIndex,
}

impl HeomState {
    /// Borrow ADO block `i` (block 0 is the physical density matrix).
    pub fn ado(&self, i: usize) -> &[Complex64] {
        let b = self.dim * self.dim;
        &self.data[i * b..(i + 1) * b]
    }

    /// The physical reduced density matrix as a dense matrix.
    pub fn rho(&self) -> CMatrix {
        let d = self.dim;
        let block = self.ado(0);
        CMatrix::from_fn(d, d, |i, j| block[i * d + j])
    }

    /// Trace of the physical density matrix.
    pub fn trace(&self) -> Complex64 {
        let d = self.dim;
        (0..d).map(|i| self.ado(0)[i * d + i]).sum()
    }

    /// Checkpoint to JSON.
    pub fn to_json(&self) -> Result<String> {
        let doc = StateJson {
            time: self.time,
            dim: self.dim,
            modes: self.hier.modes,
            depth: self.hier.depth,
            data: self.data.iter().flat_map(|z| [z.re, z.im]).collect(),
        };
        Ok(serde_json::to_string(&doc)?)
    }

    /// Restore from a [`HeomState::to_json`] checkpoint.
    pub fn from_json(s: &str) -> Result<Self> {
        let doc: StateJson = serde_json::from_str(s)?;
        let hier = HierarchyIndex::new(doc.modes, doc.depth);
        if doc.data.len() != 2 * hier.len() * doc.dim * doc.dim {
            return Err(Error::Validation("checkpoint size mismatch".into()));
        }
        Ok(Self {
            time: doc.time,
            dim: doc.dim,
            data: doc
                .data
                .chunks(2)
                .map(|p| Complex64::new(p[0], p[1]))
                .collect(),
            hier,
        })
    }
}

#[derive(serde::Serialize, serde::Deserialize)]
struct StateJson {
    time: f64,
    dim: usize,
    modes: usize,
    depth: usize,
    data: Vec<f64>,
}

/// Expectation value `tr(rho O)` from the physical block.
pub fn expectation(state: &HeomState, observable: &CMatrix) -> Complex64 {
    let d = state.dim;
    assert_eq!(observable.shape(), (d, d), "observable dimension mismatch");
    let rho = state.ado(0);
    let mut acc = Complex64::default();
    for i in 0..d {
        for j in 0..d {
            acc += rho[i * d + j] * observable[(j, i)];
        }
    }
    acc
}

/// Enumerate the ADO index set and place the initial system state in the
/// physical slot (higher auxiliaries start at zero).
pub fn build_hierarchy(spec: &SystemSpec, config: &HeomConfig, rho0: &CMatrix) -> Result<HeomState> {
    spec.validate()?;
    if config.depth < 1 {
        return Err(Error::Validation("depth must be >= 1".into()));
    }
    if rho0.shape() != (spec.dim, spec.dim) {
        return Err(Error::Validation("initial state shape mismatch".into()));
    }
    let modes = expand_modes(&spec.bath_couplings);
    let count = hierarchy_size(modes.len(), config.depth);
    let bytes = count * spec.dim * spec.dim * std::mem::size_of::<Complex64>();
    const BUDGET: usize = 2 << 30;
    if bytes > BUDGET {
        return Err(Error::Capacity(format!(
            "hierarchy needs {count} ADOs = {} MiB (> {} MiB budget); lower depth or K",
            bytes >> 20,
            BUDGET >> 20
        )));
    }
    let hier = HierarchyIndex::new(modes.len(), config.depth);
    let d = spec.dim;
    let mut data = vec![Complex64::default(); hier.len() * d * d];
    for i in 0..d {
        for j in 0..d {
            data[i * d + j] = rho0[(i, j)];
        }
    }
    Ok(HeomState {
        time: 0.0,
        dim: d,
        data,
        hier,
    })
}

/// Precomputed right-hand side for one hierarchy.
pub(crate) struct HeomEngine {
    dim: usize,
    ham: Vec<Complex64>,
    /// (L, L^dag, L^dag L, rate)
    lindblads: Vec<(Vec<Complex64>, Vec<Complex64>, Vec<Complex64>, f64)>,
    modes: Vec<HierarchyMode>,
    ops: Vec<Vec<Complex64>>,
    hier: HierarchyIndex,
}

pub(crate) fn to_rowmajor(m: &CMatrix) -> Vec<Complex64> {
    let (r, c) = m.shape();
    (0..r * c).map(|i| m[(i / c, i % c)]).collect()
}

/// `C += alpha * A * B` on row-major `d x d` blocks.
#[inline]
pub(crate) fn gemm_acc(
    c: &mut [Complex64],
    alpha: Complex64,
    a: &[Complex64],
    b: &[Complex64],
    d: usize,
) {
    for i in 0..d {
        for k in 0..d {
            let av = alpha * a[i * d + k];
            if av.re == 0.0 && av.im == 0.0 {
                continue;
            }
            let row = &b[k * d..(k + 1) * d];
            let out = &mut c[i * d..(i + 1) * d];
            for j in 0..d {
                out[j] += av * row[j];
            }
        }
    }
}

impl HeomEngine {
    pub fn new(spec: &SystemSpec, hier: HierarchyIndex) -> Self {
        let modes = expand_modes(&spec.bath_couplings);
        assert_eq!(hier.modes, modes.len());
        Self {
            dim: spec.dim,
            ham: to_rowmajor(&spec.hamiltonian),
            lindblads: spec
                .lindblad_terms
                .iter()
                .map(|l| {
                    let ld = l.operator.adjoint();
                    (
                        to_rowmajor(&l.operator),
                        to_rowmajor(&ld),
                        to_rowmajor(&(&ld * &l.operator)),
                        l.rate,
                    )
                })
                .collect(),
            ops: spec.bath_couplings.iter().map(|b| to_rowmajor(&b.operator)).collect(),
            modes,
            hier,
        }
    }

    pub fn state_len(&self) -> usize {
        self.hier.len() * self.dim * self.dim
    }

    /// dy = RHS(y) over the whole hierarchy.
    pub fn rhs(&self, y: &[Complex64], dy: &mut [Complex64], scratch: &mut [Complex64]) {
        let d = self.dim;
        let b = d * d;
        let i_unit = Complex64::new(0.0, 1.0);
        dy.fill(Complex64::default());
        for idx in 0..self.hier.len() {
            let x = &y[idx * b..(idx + 1) * b];
            // local Liouvillian terms write into dx
            {
                let dx = &mut dy[idx * b..(idx + 1) * b];
                // -i [H, X]
                gemm_acc(dx, -i_unit, &self.ham, x, d);
                gemm_acc(dx, i_unit, x, &self.ham, d);
                // damping -(n . nu) X
                let n = &self.hier.indices[idx];
                let mut rate = Complex64::default();
                for (k, m) in self.modes.iter().enumerate() {
                    if n[k] > 0 {
                        rate += Complex64::new(n[k] as f64, 0.0) * m.nu;
                    }
                }
                if rate.norm_sqr() > 0.0 {
                    for v in dx.iter_mut().zip(x) {
                        *v.0 -= rate * v.1;
                    }
                }
            }
            // GKSL: gamma (2 L X Ld - LdL X - X LdL)
            for (l, ldag, ldl, rate) in &self.lindblads {
                if *rate == 0.0 {
                    continue;
                }
                let g = Complex64::new(*rate, 0.0);
                scratch.fill(Complex64::default());
                gemm_acc(scratch, Complex64::new(1.0, 0.0), l, x, d);
                let dx = &mut dy[idx * b..(idx + 1) * b];
                gemm_acc(dx, 2.0 * g, scratch, ldag, d);
                gemm_acc(dx, -g, ldl, x, d);
                gemm_acc(dx, -g, x, ldl, d);
            }
            // hierarchy couplings
            let n = &self.hier.indices[idx];
            for (k, m) in self.modes.iter().enumerate() {
                let a = &self.ops[m.op];
                if let Some(j) = self.hier.up[idx][k] {
                    // -i sqrt((n_k + 1) s_k) [A, X_up]
                    let coef = -i_unit * ((n[k] as f64 + 1.0) * m.scale).sqrt();
                    let xu = &y[j * b..(j + 1) * b];
                    // split borrow: up/down blocks are distinct from idx
                    let dx = unsafe {
                        std::slice::from_raw_parts_mut(dy.as_mut_ptr().add(idx * b), b)
                    };
                    gemm_acc(dx, coef, a, xu, d);
                    gemm_acc(dx, -coef, xu, a, d);
                }
                if n[k] > 0 {
                    if let Some(j) = self.hier.down[idx][k] {
                        let f = (n[k] as f64 / m.scale).sqrt();
                        let xd = &y[j * b..(j + 1) * b];
                        let dx = unsafe {
                            std::slice::from_raw_parts_mut(dy.as_mut_ptr().add(idx * b), b)
                        };
                        gemm_acc(dx, -i_unit * f * m.c_left, a, xd, d);
                        gemm_acc(dx, i_unit * f * m.c_right, xd, a, d);
                    }
                }
            }
        }
    }
}

/// Propagate the hierarchy to `t_final`. Trace is checked after the run and a
/// drift beyond 1e-6 is an integrity error.
pub fn propagate(
    state: &mut HeomState,
    spec: &SystemSpec,
    config: &HeomConfig,
    t_final: f64,
) -> Result<()> {
    if t_final < state.time {
        return Err(Error::Validation("t_final before current time".into()));
    }
    let engine = HeomEngine::new(spec, state.hier.clone());
    if engine.state_len() != state.data.len() {
        return Err(Error::Validation("state/spec hierarchy mismatch".into()));
    }
    let mut scratch = vec![Complex64::default(); spec.dim * spec.dim];
    let ode = AdaptiveOde::new(OdeOptions {
        rtol: config.rtol,
        atol: config.atol,
        h_init: config.h_init,
        ..Default::default()
    });
    let mut y = std::mem::take(&mut state.data);
    let tr0 = trace_of(&y, spec.dim);
    let res = ode.propagate(
        &mut |_t, y, dy| engine.rhs(y, dy, &mut scratch),
        state.time,
        t_final,
        &mut y,
        None,
    );
    state.data = y;
    res?;
    state.time = t_final;
    let tr = trace_of(&state.data, spec.dim);
    if (tr - tr0).norm() > 1e-6 {
        return Err(Error::Numeric(format!(
            "trace drift {:.3e} beyond 1e-6",
            (tr - tr0).norm()
        )));
    }
    Ok(())
}

fn trace_of(data: &[Complex64], d: usize) -> Complex64 {
    (0..d).map(|i| data[i * d + i]).sum()
}

/// Convergence test for [`steady_state`]: every monitored observable must
/// vary less than `tol` over a trailing window of length `window`.
#[derive(Debug, Clone)]
pub struct SteadyStateCriterion {
    pub observables: Vec<CMatrix>,
    pub window: f64,
    pub tol: f64,
}

/// Summary returned alongside the converged state.
#[derive(Debug, Clone)]
pub struct SteadyStateDiagnostics {
    pub converged_time: f64,
    pub last_deltas: Vec<f64>,
}

/// Propagate until all observables are stationary over the trailing window.
pub fn steady_state(
    spec: &SystemSpec,
    config: &HeomConfig,
    rho0: &CMatrix,
    criterion: &SteadyStateCriterion,
) -> Result<(HeomState, SteadyStateDiagnostics)> {
    let mut state = build_hierarchy(spec, config, rho0)?;
    let engine = HeomEngine::new(spec, state.hier.clone());
    let mut scratch = vec![Complex64::default(); spec.dim * spec.dim];
    let obs_rm: Vec<Vec<Complex64>> = criterion.observables.iter().map(to_rowmajor).collect();
    let d = spec.dim;

    let ode = AdaptiveOde::new(OdeOptions {
        rtol: config.rtol,
        atol: config.atol,
        h_init: config.h_init,
        ..Default::default()
    });
    let mut history: Vec<(f64, Vec<f64>)> = Vec::new();
    let mut deltas = vec![f64::INFINITY; obs_rm.len()];
    let mut converged_at = None;
    {
        let mut observe = |t: f64, y: &[Complex64]| -> bool {
            let vals: Vec<f64> = obs_rm
                .iter()
                .map(|o| {
                    let mut acc = Complex64::default();
                    for i in 0..d {
                        for j in 0..d {
                            acc += y[i * d + j] * o[j * d + i];
                        }
                    }
                    acc.re
                })
                .collect();
            history.push((t, vals));
            let t0 = t - criterion.window;
            if history[0].0 > t0 - criterion.window {
                return true; // not enough history yet
            }
            while history.len() > 1 && history[1].0 <= t0 {
                history.remove(0);
            }
            let cur = &history[history.len() - 1].1;
            for (k, dmax) in deltas.iter_mut().enumerate() {
                *dmax = history
                    .iter()
                    .map(|(_, v)| (v[k] - cur[k]).abs())
                    .fold(0.0, f64::max);
            }
            if deltas.iter().all(|&dv| dv < criterion.tol) {
                converged_at = Some(t);
                false
            } else {
                true
            }
        };
        let mut y = std::mem::take(&mut state.data);
        let res = ode.propagate(
            &mut |_t, y, dy| engine.rhs(y, dy, &mut scratch),
            0.0,
            config.max_time,
            &mut y,
            Some(&mut observe),
        );
        state.data = y;
        res?;
    }
    match converged_at {
        Some(t) => {
            state.time = t;
            let tr = state.trace();
            if (tr.re - 1.0).abs() > 1e-6 || tr.im.abs() > 1e-6 {
                return Err(Error::Numeric(format!("trace drift at steady state: {tr}")));
            }
            Ok((
                state,
                SteadyStateDiagnostics {
                    converged_time: t,
                    last_deltas: deltas,
                },
            ))
        }
        None => Err(Error::NonConvergence(format!(
            "no steady state by t = {:.3e}; last deltas {:?}",
            config.max_time, deltas
        ))),
    }
}

/// Write a trajectory of expectation values to CSV (`time,obs0,obs1,...`).
pub fn export_trajectory<W: std::io::Write>(
    spec: &SystemSpec,
    config: &HeomConfig,
    rho0: &CMatrix,
    observables: &[(String, CMatrix)],
    times: &[f64],
    mut w: W,
) -> Result<()> {
    let mut state = build_hierarchy(spec, config, rho0)?;
    write!(w, "time")?;
    for (name, _) in observables {
        write!(w, ",{name}")?;
    }
    writeln!(w)?;
    for &t in times {
        propagate(&mut state, spec, config, t)?;
        write!(w, "{t:.12e}")?;
        for (_, o) in observables {
            write!(w, ",{:.12e}", expectation(&state, o).re)?;
        }
        writeln!(w)?;
    }
    Ok(())
}
