//! N identical emitters sharing one cavity, with equations of motion whose
//! size does not depend on N.
//!
//! The stored state has two sectors. The one-body sector holds blocks
//! `Phi^(n)` on emitter x cavity, one per vibrational hierarchy index `n`.
//! The pair sector holds blocks `Psi^(n1,n2)` on emitter x emitter x cavity
//! for low-order index pairs. Every reduced equation is exact on the kept
//! parties; the influence of the remaining emitters enters through partial
//! traces of three-party objects, which are reconstructed by setting
//! connected three-emitter cumulants to zero. N then appears only in the
//! scalar factors (N-1) and (N-2) on those collective terms, so the closure
//! is exact at N=1 and, absent vibrational truncation, at N=2.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expfit::{ExpTerm, ExponentialBathModel};
use crate::heom::{expand_modes, BathCoupling, HierarchyMode};
use crate::hierarchy::{hierarchy_size, HierarchyIndex};
use crate::linalg::kron;
use crate::ode::{AdaptiveOde, OdeOptions};
use crate::qops;
use crate::spectral::CavityBathModel;
use crate::{CMatrix, Complex64};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DriveMode {
    /// coherent drive term E_d sigma_x on each emitter
    Coherent,
    /// pump dissipator E_d D[sigma_+] per emitter; the vibrational bath is
    /// dropped in this mode
    Incoherent,
}

/// N identical two-level emitters, each with the same fitted vibrational
/// bath, coupled to one lossy cavity mode.
#[derive(Debug, Clone)]
pub struct EnsembleSpec {
    pub n_emitters: usize,
    /// drive amplitude E_d (pump rate in incoherent mode)
    pub drive: f64,
    pub mode: DriveMode,
    pub gamma_down: f64,
    pub cavity: CavityBathModel,
    pub cavity_cutoff: usize,
    pub vib_bath: ExponentialBathModel,
}

#[derive(Serialize, Deserialize)]
struct TermDoc {
    g_re: f64,
    g_im: f64,
    w_re: f64,
    w_im: f64,
}

#[derive(Serialize, Deserialize)]
struct EnsembleDoc {
    n_emitters: usize,
    drive: f64,
    mode: DriveMode,
    gamma_down: f64,
    cavity: CavityBathModel,
    cavity_cutoff: usize,
    vib_terms: Vec<TermDoc>,
}

impl EnsembleSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_emitters == 0 {
            return Err(Error::Validation("need at least one emitter".into()));
        }
        if self.cavity_cutoff < 2 {
            return Err(Error::Validation("cavity cutoff must be >= 2".into()));
        }
        if self.drive < 0.0 || self.gamma_down < 0.0 {
            return Err(Error::Validation("rates must be >= 0".into()));
        }
        for t in &self.vib_bath.terms {
            if t.w.re <= 0.0 {
                return Err(Error::Validation("bath term must decay".into()));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        let doc = EnsembleDoc {
            n_emitters: self.n_emitters,
            drive: self.drive,
            mode: self.mode,
            gamma_down: self.gamma_down,
            cavity: self.cavity,
            cavity_cutoff: self.cavity_cutoff,
            vib_terms: self
                .vib_bath
                .terms
                .iter()
                .map(|t| TermDoc {
                    g_re: t.g.re,
                    g_im: t.g.im,
                    w_re: t.w.re,
                    w_im: t.w.im,
                })
                .collect(),
        };
        Ok(serde_json::to_string_pretty(&doc)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let doc: EnsembleDoc = serde_json::from_str(s)?;
        let spec = Self {
            n_emitters: doc.n_emitters,
            drive: doc.drive,
            mode: doc.mode,
            gamma_down: doc.gamma_down,
            cavity: doc.cavity,
            cavity_cutoff: doc.cavity_cutoff,
            vib_bath: ExponentialBathModel::new(
                doc.vib_terms
                    .iter()
                    .map(|t| ExpTerm {
                        g: Complex64::new(t.g_re, t.g_im),
                        w: Complex64::new(t.w_re, t.w_im),
                    })
                    .collect::<Vec<_>>(),
            )
            .unwrap_or(ExponentialBathModel {
                terms: vec![],
                residual: None,
            }),
        };
        spec.validate()?;
        Ok(spec)
    }
}

/// Truncation and integrator settings for the cluster solver.
#[derive(Debug, Clone, Copy)]
pub struct ClusterConfig {
    /// vibrational hierarchy depth of the one-body sector
    pub depth: usize,
    /// combined index depth of the pair sector (capped at min(depth, 2))
    pub pair_depth: usize,
    /// drop the pair sector; connected emitter-emitter correlations are zero
    pub mean_field: bool,
    pub rtol: f64,
    pub atol: f64,
    pub h_init: f64,
    pub max_time: f64,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        Self {
            depth: 3,
            pair_depth: 2,
            mean_field: false,
            rtol: 1e-8,
            atol: 1e-12,
            h_init: 1e-2,
            max_time: 1e7,
        }
    }
}

impl ClusterConfig {
    fn effective_pair_depth(&self) -> usize {
        self.pair_depth.min(2).min(self.depth)
    }
}

/// Steady-state detector: all monitored observables (p_e, n_cav, pair
/// coherence) vary less than `tol` over a trailing window of length `window`.
#[derive(Debug, Clone, Copy)]
pub struct StationarityCriterion {
    pub window: f64,
    pub tol: f64,
}

#[derive(Debug, Clone)]
pub struct ClusterDiagnostics {
    pub converged_time: f64,
    pub last_deltas: Vec<f64>,
}

/// Ensemble observables at one instant.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Observables {
    pub p_e: f64,
    pub cavity_occupation: f64,
    pub pair_re: f64,
    pub pair_im: f64,
}

impl Observables {
    pub fn pair_coherence(&self) -> Complex64 {
        Complex64::new(self.pair_re, self.pair_im)
    }

    pub fn validate(&self) -> Result<()> {
        if !(-1e-6..=1.0 + 1e-6).contains(&self.p_e) {
            return Err(Error::Numeric(format!("p_e out of range: {}", self.p_e)));
        }
        if self.cavity_occupation < -1e-6 {
            return Err(Error::Numeric(format!(
                "negative cavity occupation: {}",
                self.cavity_occupation
            )));
        }
        Ok(())
    }
}

/// Cluster state: one-body blocks followed by pair blocks, flat.
#[derive(Debug, Clone)]
pub struct ClusterState {
    pub time: f64,
    /// cavity levels
    pub m: usize,
    pub one_hier: HierarchyIndex,
    /// pair sector over doubled mode set; `None` for N=1 or mean-field runs
    pub pair_hier: Option<HierarchyIndex>,
    pub data: Vec<Complex64>,
}

impl ClusterState {
    fn d1(&self) -> usize {
        2 * self.m
    }

    fn d2(&self) -> usize {
        4 * self.m
    }

    pub fn phi(&self, i: usize) -> &[Complex64] {
        let b = self.d1() * self.d1();
        &self.data[i * b..(i + 1) * b]
    }

    pub fn psi(&self, i: usize) -> Option<&[Complex64]> {
        let pair = self.pair_hier.as_ref()?;
        debug_assert!(i < pair.len());
        let b1 = self.d1() * self.d1();
        let b2 = self.d2() * self.d2();
        let off = self.one_hier.len() * b1;
        Some(&self.data[off + i * b2..off + (i + 1) * b2])
    }

    /// Trace of the physical one-body block.
    pub fn trace(&self) -> Complex64 {
        let d1 = self.d1();
        (0..d1).map(|i| self.phi(0)[i * d1 + i]).sum()
    }

    /// Smallest eigenvalue of the Hermitian part of the physical block.
    /// A positive semidefinite state stays above `-(drift tolerance)`.
    pub fn min_eigenvalue(&self) -> f64 {
        let d1 = self.d1();
        let phi0 = self.phi(0);
        let mut h = CMatrix::zeros(d1, d1);
        for i in 0..d1 {
            for j in 0..d1 {
                h[(i, j)] = 0.5 * (phi0[i * d1 + j] + phi0[j * d1 + i].conj());
            }
        }
        h.symmetric_eigenvalues()
            .iter()
            .fold(f64::INFINITY, |a, &b| a.min(b))
    }

    pub fn observables(&self) -> Observables {
        let m = self.m;
        let d1 = self.d1();
        let phi0 = self.phi(0);
        let mut p_e = 0.0;
        let mut n_cav = 0.0;
        for p in 0..m {
            let ie = m + p;
            p_e += phi0[ie * d1 + ie].re;
            for q in 0..2 {
                let i = q * m + p;
                n_cav += p as f64 * phi0[i * d1 + i].re;
            }
        }
        let pair = match self.psi(0) {
            Some(psi0) => {
                // tr(sigma+_1 sigma-_2 Psi)
                let d2 = self.d2();
                let mut acc = Complex64::default();
                for p in 0..m {
                    // <g e p| Psi |e g p>
                    let row = m + p; // q1=0,q2=1
                    let col = 2 * m + p; // q1=1,q2=0
                    acc += psi0[row * d2 + col];
                }
                acc
            }
            None => {
                // factorized estimate
                let mut sp = Complex64::default();
                let mut sm = Complex64::default();
                for p in 0..m {
                    sp += phi0[p * d1 + m + p];
                    sm += phi0[(m + p) * d1 + p];
                }
                sp * sm
            }
        };
        Observables {
            p_e,
            cavity_occupation: n_cav,
            pair_re: pair.re,
            pair_im: pair.im,
        }
    }
}

/// Direct cavity occupation `tr(adag a chi)` from the explicit cavity slot.
pub fn cavity_occupation(state: &ClusterState) -> f64 {
    state.observables().cavity_occupation
}

/// Stationary input-output estimate
/// `g^2/(Delta^2 + kappa^2) [N <s+s-> + N(N-1) <s+_i s-_j>]`; meaningful at
/// steady state only.
pub fn input_output_occupation(state: &ClusterState, spec: &EnsembleSpec) -> f64 {
    let obs = state.observables();
    let n = spec.n_emitters as f64;
    let c = &spec.cavity;
    let pref = c.g_cav * c.g_cav / (c.omega_cav * c.omega_cav + c.kappa * c.kappa);
    pref * (n * obs.p_e + n * (n - 1.0) * obs.pair_re)
}

// basis layout: one-body index q*m + p, pair index (q1*2 + q2)*m + p

fn tr_cavity(block: &[Complex64], m: usize) -> [Complex64; 4] {
    let d1 = 2 * m;
    let mut out = [Complex64::default(); 4];
    for q in 0..2 {
        for qp in 0..2 {
            let mut acc = Complex64::default();
            for p in 0..m {
                acc += block[(q * m + p) * d1 + qp * m + p];
            }
            out[q * 2 + qp] = acc;
        }
    }
    out
}

fn tr_emitter(block: &[Complex64], m: usize, out: &mut [Complex64]) {
    let d1 = 2 * m;
    for p in 0..m {
        for pp in 0..m {
            let mut acc = Complex64::default();
            for q in 0..2 {
                acc += block[(q * m + p) * d1 + q * m + pp];
            }
            out[p * m + pp] = acc;
        }
    }
}

/// `Tr_e(sigma_pm Phi)` on the emitter slot of a one-body block.
fn tr_emitter_sigma(block: &[Complex64], m: usize, plus: bool, out: &mut [Complex64]) {
    let d1 = 2 * m;
    // sigma+: S[e,g]=1 -> X[(g,p),(e,p')]; sigma-: X[(e,p),(g,p')]
    let (k, j) = if plus { (0, 1) } else { (1, 0) };
    for p in 0..m {
        for pp in 0..m {
            out[p * m + pp] = block[(k * m + p) * d1 + j * m + pp];
        }
    }
}

/// `Tr_2(sigma_pm Psi)`: trace the second emitter against sigma+/- leaving
/// an operator on (emitter 1, cavity).
fn tr_second_sigma(psi: &[Complex64], m: usize, plus: bool, out: &mut [Complex64]) {
    let d1 = 2 * m;
    let d2 = 4 * m;
    let (k, j) = if plus { (0, 1) } else { (1, 0) };
    for q1 in 0..2 {
        for p in 0..m {
            let row2 = (q1 * 2 + k) * m + p;
            for q1p in 0..2 {
                for pp in 0..m {
                    let col2 = (q1p * 2 + j) * m + pp;
                    out[(q1 * m + p) * d1 + q1p * m + pp] = psi[row2 * d2 + col2];
                }
            }
        }
    }
}

fn tr_cavity_pair(psi: &[Complex64], m: usize) -> [Complex64; 16] {
    let d2 = 4 * m;
    let mut out = [Complex64::default(); 16];
    for e in 0..4 {
        for ep in 0..4 {
            let mut acc = Complex64::default();
            for p in 0..m {
                acc += psi[(e * m + p) * d2 + ep * m + p];
            }
            out[e * 4 + ep] = acc;
        }
    }
    out
}

/// `out += alpha * (f_emitter tensor c_cavity)` into a one-body block.
fn add_ec(out: &mut [Complex64], alpha: Complex64, f: &[Complex64], c: &[Complex64], m: usize) {
    let d1 = 2 * m;
    for q in 0..2 {
        for qp in 0..2 {
            let fv = alpha * f[q * 2 + qp];
            if fv.re == 0.0 && fv.im == 0.0 {
                continue;
            }
            for p in 0..m {
                for pp in 0..m {
                    out[(q * m + p) * d1 + qp * m + pp] += fv * c[p * m + pp];
                }
            }
        }
    }
}

/// `out += alpha * (t on (emitter1, cavity)) tensor (f on emitter2)`.
fn add_pair_1c(out: &mut [Complex64], alpha: Complex64, t: &[Complex64], f: &[Complex64], m: usize) {
    let d1 = 2 * m;
    let d2 = 4 * m;
    for q1 in 0..2 {
        for q2 in 0..2 {
            for q1p in 0..2 {
                for q2p in 0..2 {
                    let fv = alpha * f[q2 * 2 + q2p];
                    if fv.re == 0.0 && fv.im == 0.0 {
                        continue;
                    }
                    for p in 0..m {
                        let row = ((q1 * 2 + q2) * m + p) * d2;
                        let trow = (q1 * m + p) * d1;
                        for pp in 0..m {
                            out[row + (q1p * 2 + q2p) * m + pp] += fv * t[trow + q1p * m + pp];
                        }
                    }
                }
            }
        }
    }
}

/// `out += alpha * (f on emitter1) tensor (t on (emitter2, cavity))`.
fn add_pair_2c(out: &mut [Complex64], alpha: Complex64, t: &[Complex64], f: &[Complex64], m: usize) {
    let d1 = 2 * m;
    let d2 = 4 * m;
    for q1 in 0..2 {
        for q2 in 0..2 {
            for q1p in 0..2 {
                for q2p in 0..2 {
                    let fv = alpha * f[q1 * 2 + q1p];
                    if fv.re == 0.0 && fv.im == 0.0 {
                        continue;
                    }
                    for p in 0..m {
                        let row = ((q1 * 2 + q2) * m + p) * d2;
                        let trow = (q2 * m + p) * d1;
                        for pp in 0..m {
                            out[row + (q1p * 2 + q2p) * m + pp] += fv * t[trow + q2p * m + pp];
                        }
                    }
                }
            }
        }
    }
}

/// `out += alpha * (t4 on both emitters) tensor (c on cavity)`.
fn add_pair_12c(out: &mut [Complex64], alpha: Complex64, t4: &[Complex64], c: &[Complex64], m: usize) {
    let d2 = 4 * m;
    for e in 0..4 {
        for ep in 0..4 {
            let tv = alpha * t4[e * 4 + ep];
            if tv.re == 0.0 && tv.im == 0.0 {
                continue;
            }
            for p in 0..m {
                for pp in 0..m {
                    out[(e * m + p) * d2 + ep * m + pp] += tv * c[p * m + pp];
                }
            }
        }
    }
}

/// Triplet-sparse operator applied to flat row-major square blocks; every
/// system operator here is a kron product of ladder operators with a handful
/// of nonzeros per row.
struct Sp {
    entries: Vec<(usize, usize, Complex64)>,
}

impl Sp {
    fn from_matrix(m: &CMatrix) -> Self {
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

    /// `out += alpha * self * x`, row-major `d x d` blocks.
    fn acc_left(&self, out: &mut [Complex64], alpha: Complex64, x: &[Complex64], d: usize) {
        for &(i, k, v) in &self.entries {
            let av = alpha * v;
            let src = &x[k * d..(k + 1) * d];
            let dst = &mut out[i * d..(i + 1) * d];
            for (o, s) in dst.iter_mut().zip(src) {
                *o += av * s;
            }
        }
    }

    /// `out += alpha * x * self`, row-major `d x d` blocks.
    fn acc_right(&self, out: &mut [Complex64], alpha: Complex64, x: &[Complex64], d: usize) {
        for &(k, j, v) in &self.entries {
            let av = alpha * v;
            for i in 0..d {
                out[i * d + j] += av * x[i * d + k];
            }
        }
    }
}

struct ClusterEngine {
    n: f64,
    g_cav: f64,
    m: usize,
    d1: usize,
    d2: usize,
    modes: Vec<HierarchyMode>,
    one_hier: HierarchyIndex,
    pair_hier: Option<HierarchyIndex>,
    one_lookup: HashMap<Vec<u8>, usize>,
    /// pair index of (n, 0) per one-body index, when in range
    pair_of: Vec<Option<usize>>,
    /// one-body positions of the two halves of each pair index
    pair_halves: Vec<(usize, usize)>,
    h1: Sp,
    linds1: Vec<(Sp, Sp, Sp, f64)>,
    a1: Sp,
    ad1: Sp,
    cpl1: Sp,
    h2: Sp,
    linds2: Vec<(Sp, Sp, Sp, f64)>,
    a2: Sp,
    ad2: Sp,
    cpl2: [Sp; 2],
}

struct Workspace {
    phis: Vec<Complex64>,
    chi: Vec<Complex64>,
    kc: [Vec<Complex64>; 2],
    /// Tr_2(sigma_pm Psi^(n,0)) per one-body index with a pair partner
    q: [Vec<Complex64>; 2],
    kap: [Vec<Complex64>; 2],
    mblk: [Vec<Complex64>; 2],
    sc1: Vec<Complex64>,
    sc2: Vec<Complex64>,
}

impl ClusterEngine {
    fn new(spec: &EnsembleSpec, config: &ClusterConfig) -> Result<Self> {
        spec.validate()?;
        let m = spec.cavity_cutoff;
        let d1 = 2 * m;
        let d2 = 4 * m;

        let bath = match spec.mode {
            DriveMode::Coherent => spec.vib_bath.clone(),
            DriveMode::Incoherent => ExponentialBathModel {
                terms: vec![],
                residual: None,
            },
        };
        let modes = expand_modes(&[BathCoupling {
            operator: qops::sigma_pm(),
            bath,
        }]);
        let k = modes.len();
        let one_hier = HierarchyIndex::new(k, config.depth);
        let want_pair = spec.n_emitters >= 2 && !config.mean_field;
        let pd = config.effective_pair_depth();
        let pair_hier = want_pair.then(|| HierarchyIndex::new(2 * k, pd));

        let count1 = one_hier.len();
        let count2 = pair_hier.as_ref().map_or(0, |h| h.len());
        let bytes = (count1 * d1 * d1 + count2 * d2 * d2) * std::mem::size_of::<Complex64>();
        const BUDGET: usize = 2 << 30;
        if bytes > BUDGET {
            return Err(Error::Capacity(format!(
                "cluster state needs {} MiB (> {} MiB budget)",
                bytes >> 20,
                BUDGET >> 20
            )));
        }

        let one_lookup: HashMap<Vec<u8>, usize> = one_hier
            .indices
            .iter()
            .enumerate()
            .map(|(i, n)| (n.clone(), i))
            .collect();
        let (pair_of, pair_halves) = match &pair_hier {
            Some(ph) => {
                let pl: HashMap<&[u8], usize> =
                    ph.indices.iter().enumerate().map(|(i, n)| (n.as_slice(), i)).collect();
                let pair_of = one_hier
                    .indices
                    .iter()
                    .map(|n| {
                        let mut key = n.clone();
                        key.extend(std::iter::repeat(0u8).take(k));
                        pl.get(key.as_slice()).copied()
                    })
                    .collect();
                let halves = ph
                    .indices
                    .iter()
                    .map(|n| {
                        let p1 = one_lookup[&n[..k].to_vec()];
                        let p2 = one_lookup[&n[k..].to_vec()];
                        (p1, p2)
                    })
                    .collect();
                (pair_of, halves)
            }
            None => (vec![None; count1], Vec::new()),
        };

        // dense operators, row-major
        let id2 = CMatrix::identity(2, 2);
        let idm = CMatrix::identity(m, m);
        let a = qops::annihilate(m);
        let nc = qops::number(m);
        let sx = qops::sigma_x();
        let sp = qops::sigma_plus();
        let sm = qops::sigma_minus();
        let proj = qops::sigma_pm();
        let delta = spec.cavity.omega_cav;
        let g = spec.cavity.g_cav;

        let mut h1m = kron(&id2, &nc).scale(delta)
            + (kron(&sp, &a) + kron(&sm, &a.adjoint())).scale(g);
        let mut linds1m: Vec<(CMatrix, f64)> = vec![(kron(&id2, &a), spec.cavity.kappa)];
        match spec.mode {
            DriveMode::Coherent => {
                h1m += kron(&sx, &idm).scale(spec.drive);
                if spec.gamma_down > 0.0 {
                    linds1m.push((kron(&sm, &idm), spec.gamma_down));
                }
            }
            DriveMode::Incoherent => {
                if spec.gamma_down > 0.0 {
                    linds1m.push((kron(&sm, &idm), spec.gamma_down));
                }
                if spec.drive > 0.0 {
                    linds1m.push((kron(&sp, &idm), spec.drive));
                }
            }
        }
        let a1m = kron(&id2, &a);
        let cpl1m = kron(&proj, &idm);

        let id4 = CMatrix::identity(4, 4);
        let e1 = |op: &CMatrix| kron(&kron(op, &id2), &idm);
        let e2 = |op: &CMatrix| kron(&kron(&id2, op), &idm);
        let mut h2m = kron(&id4, &nc).scale(delta)
            + (kron(&kron(&sp, &id2), &a)
                + kron(&kron(&id2, &sp), &a)
                + kron(&kron(&sm, &id2), &a.adjoint())
                + kron(&kron(&id2, &sm), &a.adjoint()))
            .scale(g);
        let mut linds2m: Vec<(CMatrix, f64)> = vec![(kron(&id4, &a), spec.cavity.kappa)];
        match spec.mode {
            DriveMode::Coherent => {
                h2m += (e1(&sx) + e2(&sx)).scale(spec.drive);
                if spec.gamma_down > 0.0 {
                    linds2m.push((e1(&sm), spec.gamma_down));
                    linds2m.push((e2(&sm), spec.gamma_down));
                }
            }
            DriveMode::Incoherent => {
                if spec.gamma_down > 0.0 {
                    linds2m.push((e1(&sm), spec.gamma_down));
                    linds2m.push((e2(&sm), spec.gamma_down));
                }
                if spec.drive > 0.0 {
                    linds2m.push((e1(&sp), spec.drive));
                    linds2m.push((e2(&sp), spec.drive));
                }
            }
        }
        let a2m = kron(&id4, &a);

        let prep = |l: Vec<(CMatrix, f64)>| {
            l.into_iter()
                .map(|(op, r)| {
                    let od = op.adjoint();
                    let odo = &od * &op;
                    (
                        Sp::from_matrix(&op),
                        Sp::from_matrix(&od),
                        Sp::from_matrix(&odo),
                        r,
                    )
                })
                .collect::<Vec<_>>()
        };

        Ok(Self {
            n: spec.n_emitters as f64,
            g_cav: g,
            m,
            d1,
            d2,
            modes,
            one_hier,
            pair_hier,
            one_lookup,
            pair_of,
            pair_halves,
            h1: Sp::from_matrix(&h1m),
            linds1: prep(linds1m),
            a1: Sp::from_matrix(&a1m),
            ad1: Sp::from_matrix(&a1m.adjoint()),
            cpl1: Sp::from_matrix(&cpl1m),
            h2: Sp::from_matrix(&h2m),
            linds2: prep(linds2m),
            a2: Sp::from_matrix(&a2m),
            ad2: Sp::from_matrix(&a2m.adjoint()),
            cpl2: [Sp::from_matrix(&e1(&proj)), Sp::from_matrix(&e2(&proj))],
        })
    }

    fn state_len(&self) -> usize {
        self.one_hier.len() * self.d1 * self.d1
            + self.pair_hier.as_ref().map_or(0, |h| h.len()) * self.d2 * self.d2
    }

    fn workspace(&self) -> Workspace {
        let b1 = self.d1 * self.d1;
        let n1 = self.one_hier.len();
        let mk = |len: usize| vec![Complex64::default(); len];
        Workspace {
            phis: mk(n1 * 4),
            chi: mk(self.m * self.m),
            kc: [mk(self.m * self.m), mk(self.m * self.m)],
            q: [mk(n1 * b1), mk(n1 * b1)],
            kap: [mk(n1 * 4), mk(n1 * 4)],
            mblk: [mk(n1 * b1), mk(n1 * b1)],
            sc1: mk(b1),
            sc2: mk(self.d2 * self.d2),
        }
    }

    fn rhs(&self, y: &[Complex64], dy: &mut [Complex64], ws: &mut Workspace) {
        let d1 = self.d1;
        let d2 = self.d2;
        let b1 = d1 * d1;
        let b2 = d2 * d2;
        let m = self.m;
        let n1 = self.one_hier.len();
        let off2 = n1 * b1;
        let k = self.modes.len();
        let i_unit = Complex64::new(0.0, 1.0);
        let one = Complex64::new(1.0, 0.0);
        dy.fill(Complex64::default());

        // reduced quantities of the current state
        for idx in 0..n1 {
            let phi = &y[idx * b1..(idx + 1) * b1];
            ws.phis[idx * 4..idx * 4 + 4].copy_from_slice(&tr_cavity(phi, m));
        }
        tr_emitter(&y[..b1], m, &mut ws.chi);
        let s = [ws.phis[0 * 2 + 1], ws.phis[1 * 2 + 0]]; // <s+>, <s->
        for pm in 0..2 {
            tr_emitter_sigma(&y[..b1], m, pm == 0, &mut ws.kc[pm]);
            for i in 0..m * m {
                ws.kc[pm][i] -= s[pm] * ws.chi[i];
            }
        }
        let collective = self.n >= 2.0;
        if let Some(_ph) = &self.pair_hier {
            for idx in 0..n1 {
                let Some(j) = self.pair_of[idx] else { continue };
                let psi = &y[off2 + j * b2..off2 + (j + 1) * b2];
                let phi = &y[idx * b1..(idx + 1) * b1];
                let phi_loc = &ws.phis[idx * 4..idx * 4 + 4];
                for pm in 0..2 {
                    let qn = &mut ws.q[pm][idx * b1..(idx + 1) * b1];
                    tr_second_sigma(psi, m, pm == 0, qn);
                    // kappa^(n) = tr_c(Q) - s phi^(n)
                    let qtr = tr_cavity(qn, m);
                    for e in 0..4 {
                        ws.kap[pm][idx * 4 + e] = qtr[e] - s[pm] * phi_loc[e];
                    }
                    // m^(n) = Q - s Phi^(n) - kappa^(n) x chi - phi^(n) x kc
                    let mb = &mut ws.mblk[pm][idx * b1..(idx + 1) * b1];
                    mb.copy_from_slice(qn);
                    for i in 0..b1 {
                        mb[i] -= s[pm] * phi[i];
                    }
                    let kapn: [Complex64; 4] =
                        std::array::from_fn(|e| ws.kap[pm][idx * 4 + e]);
                    add_ec(mb, -one, &kapn, &ws.chi, m);
                    let phin: [Complex64; 4] = std::array::from_fn(|e| phi_loc[e]);
                    add_ec(mb, -one, &phin, &ws.kc[pm], m);
                }
            }
        }

        // one-body sector
        for idx in 0..n1 {
            let x = &y[idx * b1..(idx + 1) * b1];
            {
                let dx = &mut dy[idx * b1..(idx + 1) * b1];
                self.h1.acc_left(dx, -i_unit, x, d1);
                self.h1.acc_right(dx, i_unit, x, d1);
                let nvec = &self.one_hier.indices[idx];
                let mut rate = Complex64::default();
                for (kk, md) in self.modes.iter().enumerate() {
                    if nvec[kk] > 0 {
                        rate += Complex64::new(nvec[kk] as f64, 0.0) * md.nu;
                    }
                }
                if rate.norm_sqr() > 0.0 {
                    for (d, v) in dx.iter_mut().zip(x) {
                        *d -= rate * v;
                    }
                }
            }
            for (l, ldag, ldl, rate) in &self.linds1 {
                if *rate == 0.0 {
                    continue;
                }
                let gr = Complex64::new(*rate, 0.0);
                ws.sc1.fill(Complex64::default());
                l.acc_left(&mut ws.sc1, one, x, d1);
                let dx = &mut dy[idx * b1..(idx + 1) * b1];
                ldag.acc_right(dx, 2.0 * gr, &ws.sc1, d1);
                ldl.acc_left(dx, -gr, x, d1);
                ldl.acc_right(dx, -gr, x, d1);
            }
            // vibrational hierarchy couplings
            let nvec = &self.one_hier.indices[idx];
            for (kk, md) in self.modes.iter().enumerate() {
                if let Some(u) = self.one_hier.up[idx][kk] {
                    let coef = -i_unit * ((nvec[kk] as f64 + 1.0) * md.scale).sqrt();
                    let xu = &y[u * b1..(u + 1) * b1];
                    let dx = unsafe {
                        std::slice::from_raw_parts_mut(dy.as_mut_ptr().add(idx * b1), b1)
                    };
                    self.cpl1.acc_left(dx, coef, xu, d1);
                    self.cpl1.acc_right(dx, -coef, xu, d1);
                }
                if nvec[kk] > 0 {
                    if let Some(dn) = self.one_hier.down[idx][kk] {
                        let f = (nvec[kk] as f64 / md.scale).sqrt();
                        let xd = &y[dn * b1..(dn + 1) * b1];
                        let dx = unsafe {
                            std::slice::from_raw_parts_mut(dy.as_mut_ptr().add(idx * b1), b1)
                        };
                        self.cpl1.acc_left(dx, -i_unit * f * md.c_left, xd, d1);
                        self.cpl1.acc_right(dx, i_unit * f * md.c_right, xd, d1);
                    }
                }
            }
            // collective term from the other N-1 emitters
            if collective {
                let coef = -i_unit * self.g_cav * (self.n - 1.0);
                for pm in 0..2 {
                    let have_pair = self.pair_of[idx].is_some() && self.pair_hier.is_some();
                    let qn: &[Complex64] = if have_pair {
                        &ws.q[pm][idx * b1..(idx + 1) * b1]
                    } else {
                        // cumulant reconstruction: s Phi^(n) + phi^(n) x kc
                        ws.sc1.fill(Complex64::default());
                        for (o, v) in ws.sc1.iter_mut().zip(x) {
                            *o = s[pm] * v;
                        }
                        let phin: [Complex64; 4] =
                            std::array::from_fn(|e| ws.phis[idx * 4 + e]);
                        add_ec(&mut ws.sc1, one, &phin, &ws.kc[pm], m);
                        &ws.sc1
                    };
                    let ladder = if pm == 0 { &self.a1 } else { &self.ad1 };
                    let dx = unsafe {
                        std::slice::from_raw_parts_mut(dy.as_mut_ptr().add(idx * b1), b1)
                    };
                    ladder.acc_left(dx, coef, qn, d1);
                    ladder.acc_right(dx, -coef, qn, d1);
                }
            }
        }

        // pair sector
        let Some(ph) = &self.pair_hier else { return };
        let n2 = ph.len();
        for j in 0..n2 {
            let row = off2 + j * b2;
            let x = &y[row..row + b2];
            {
                let dx = &mut dy[row..row + b2];
                self.h2.acc_left(dx, -i_unit, x, d2);
                self.h2.acc_right(dx, i_unit, x, d2);
                let nvec = &ph.indices[j];
                let mut rate = Complex64::default();
                for kk in 0..2 * k {
                    if nvec[kk] > 0 {
                        rate += Complex64::new(nvec[kk] as f64, 0.0) * self.modes[kk % k].nu;
                    }
                }
                if rate.norm_sqr() > 0.0 {
                    for (d, v) in dx.iter_mut().zip(x) {
                        *d -= rate * v;
                    }
                }
            }
            for (l, ldag, ldl, rate) in &self.linds2 {
                if *rate == 0.0 {
                    continue;
                }
                let gr = Complex64::new(*rate, 0.0);
                ws.sc2.fill(Complex64::default());
                l.acc_left(&mut ws.sc2, one, x, d2);
                let dx = &mut dy[row..row + b2];
                ldag.acc_right(dx, 2.0 * gr, &ws.sc2, d2);
                ldl.acc_left(dx, -gr, x, d2);
                ldl.acc_right(dx, -gr, x, d2);
            }
            let nvec = ph.indices[j].clone();
            for kk in 0..2 * k {
                let md = &self.modes[kk % k];
                let cpl = &self.cpl2[if kk < k { 0 } else { 1 }];
                let up = ph.up[j][kk];
                let coef = -i_unit * ((nvec[kk] as f64 + 1.0) * md.scale).sqrt();
                if let Some(u) = up {
                    let urow = off2 + u * b2;
                    let xu = &y[urow..urow + b2];
                    let dx = unsafe {
                        std::slice::from_raw_parts_mut(dy.as_mut_ptr().add(row), b2)
                    };
                    cpl.acc_left(dx, coef, xu, d2);
                    cpl.acc_right(dx, -coef, xu, d2);
                } else {
                    // pair terminator: factorized reconstruction of the
                    // out-of-range neighbor from one-body blocks
                    let mut key = nvec.clone();
                    key[kk] += 1;
                    let p1 = self.one_lookup.get(&key[..k].to_vec()).copied();
                    let p2 = self.one_lookup.get(&key[k..].to_vec()).copied();
                    if let (Some(p1), Some(p2)) = (p1, p2) {
                        let phi1 = &y[p1 * b1..(p1 + 1) * b1];
                        let phi2 = &y[p2 * b1..(p2 + 1) * b1];
                        let f1: [Complex64; 4] = std::array::from_fn(|e| ws.phis[p1 * 4 + e]);
                        let f2: [Complex64; 4] = std::array::from_fn(|e| ws.phis[p2 * 4 + e]);
                        ws.sc2.fill(Complex64::default());
                        add_pair_1c(&mut ws.sc2, one, phi1, &f2, m);
                        add_pair_2c(&mut ws.sc2, one, phi2, &f1, m);
                        let mut f12 = [Complex64::default(); 16];
                        for q1 in 0..2 {
                            for q2 in 0..2 {
                                for q1p in 0..2 {
                                    for q2p in 0..2 {
                                        f12[(q1 * 2 + q2) * 4 + q1p * 2 + q2p] =
                                            f1[q1 * 2 + q1p] * f2[q2 * 2 + q2p];
                                    }
                                }
                            }
                        }
                        add_pair_12c(&mut ws.sc2, -one, &f12, &ws.chi, m);
                        let dx = unsafe {
                            std::slice::from_raw_parts_mut(dy.as_mut_ptr().add(row), b2)
                        };
                        cpl.acc_left(dx, coef, &ws.sc2, d2);
                        cpl.acc_right(dx, -coef, &ws.sc2, d2);
                    }
                }
                if nvec[kk] > 0 {
                    if let Some(dn) = ph.down[j][kk] {
                        let f = (nvec[kk] as f64 / md.scale).sqrt();
                        let drow = off2 + dn * b2;
                        let xd = &y[drow..drow + b2];
                        let dx = unsafe {
                            std::slice::from_raw_parts_mut(dy.as_mut_ptr().add(row), b2)
                        };
                        cpl.acc_left(dx, -i_unit * f * md.c_left, xd, d2);
                        cpl.acc_right(dx, i_unit * f * md.c_right, xd, d2);
                    }
                }
            }
            // collective term from the other N-2 emitters
            if self.n >= 3.0 {
                let (p1, p2) = self.pair_halves[j];
                let coef = -i_unit * self.g_cav * (self.n - 2.0);
                let trc = tr_cavity_pair(x, m);
                for pm in 0..2 {
                    ws.sc2.fill(Complex64::default());
                    for (o, v) in ws.sc2.iter_mut().zip(x) {
                        *o = s[pm] * v;
                    }
                    let f1: [Complex64; 4] = std::array::from_fn(|e| ws.phis[p1 * 4 + e]);
                    let f2: [Complex64; 4] = std::array::from_fn(|e| ws.phis[p2 * 4 + e]);
                    let kap1: [Complex64; 4] = std::array::from_fn(|e| ws.kap[pm][p1 * 4 + e]);
                    let kap2: [Complex64; 4] = std::array::from_fn(|e| ws.kap[pm][p2 * 4 + e]);
                    let phi1 = &y[p1 * b1..(p1 + 1) * b1];
                    let phi2 = &y[p2 * b1..(p2 + 1) * b1];
                    add_pair_2c(&mut ws.sc2, one, phi2, &kap1, m);
                    add_pair_1c(&mut ws.sc2, one, phi1, &kap2, m);
                    add_pair_12c(&mut ws.sc2, one, &trc, &ws.kc[pm], m);
                    add_pair_1c(&mut ws.sc2, one, &ws.mblk[pm][p1 * b1..(p1 + 1) * b1], &f2, m);
                    add_pair_2c(&mut ws.sc2, one, &ws.mblk[pm][p2 * b1..(p2 + 1) * b1], &f1, m);
                    let ladder = if pm == 0 { &self.a2 } else { &self.ad2 };
                    let dx = unsafe {
                        std::slice::from_raw_parts_mut(dy.as_mut_ptr().add(row), b2)
                    };
                    ladder.acc_left(dx, coef, &ws.sc2, d2);
                    ladder.acc_right(dx, -coef, &ws.sc2, d2);
                }
            }
        }
    }
}

/// All emitters in the electronic ground state, cavity in vacuum.
pub fn build_cluster(spec: &EnsembleSpec, config: &ClusterConfig) -> Result<ClusterState> {
    let engine = ClusterEngine::new(spec, config)?;
    let mut data = vec![Complex64::default(); engine.state_len()];
    data[0] = Complex64::new(1.0, 0.0); // |g,0><g,0|
    if let Some(ph) = &engine.pair_hier {
        debug_assert!(ph.len() > 0);
        let off = engine.one_hier.len() * engine.d1 * engine.d1;
        data[off] = Complex64::new(1.0, 0.0); // |g,g,0><g,g,0|
    }
    Ok(ClusterState {
        time: 0.0,
        m: engine.m,
        one_hier: engine.one_hier.clone(),
        pair_hier: engine.pair_hier.clone(),
        data,
    })
}

/// Wall-clock cost of `steps` right-hand-side evaluations from the ground
/// state. Returns `(state length, elapsed)`; the per-step cost must not
/// depend on the emitter count, only on the truncations.
pub fn step_cost(
    spec: &EnsembleSpec,
    config: &ClusterConfig,
    steps: usize,
) -> Result<(usize, std::time::Duration)> {
    let engine = ClusterEngine::new(spec, config)?;
    let state = build_cluster(spec, config)?;
    let mut ws = engine.workspace();
    let mut y = state.data;
    let mut dy = vec![Complex64::default(); y.len()];
    let h = Complex64::new(config.h_init, 0.0);
    let start = std::time::Instant::now();
    for _ in 0..steps {
        engine.rhs(&y, &mut dy, &mut ws);
        let mut peak = 0.0f64;
        for (yi, di) in y.iter_mut().zip(&dy) {
            *yi += h * di;
            peak = peak.max(yi.norm_sqr());
        }
        // renormalize so runaway growth (the raw Euler step is not stable for
        // every spec) cannot push amplitudes into non-finite territory and
        // contaminate the timing with slow denormal/NaN paths
        if peak > 1.0 {
            let inv = Complex64::new(1.0 / peak.sqrt(), 0.0);
            for yi in y.iter_mut() {
                *yi *= inv;
            }
        }
    }
    Ok((y.len(), start.elapsed()))
}

/// Propagate the cluster state to `t_final`.
pub fn propagate_cluster(
    state: &mut ClusterState,
    spec: &EnsembleSpec,
    config: &ClusterConfig,
    t_final: f64,
) -> Result<()> {
    if t_final < state.time {
        return Err(Error::Validation("t_final before current time".into()));
    }
    let engine = ClusterEngine::new(spec, config)?;
    if engine.state_len() != state.data.len() {
        return Err(Error::Validation("state/spec layout mismatch".into()));
    }
    let mut ws = engine.workspace();
    let ode = AdaptiveOde::new(OdeOptions {
        rtol: config.rtol,
        atol: config.atol,
        h_init: config.h_init,
        ..Default::default()
    });
    let tr0 = state.trace();
    let mut y = std::mem::take(&mut state.data);
    let res = ode.propagate(
        &mut |_t, y, dy| engine.rhs(y, dy, &mut ws),
        state.time,
        t_final,
        &mut y,
        None,
    );
    state.data = y;
    res?;
    state.time = t_final;
    let drift = (state.trace() - tr0).norm();
    if drift > 1e-6 {
        return Err(Error::Numeric(format!("trace drift {drift:.3e} beyond 1e-6")));
    }
    Ok(())
}

/// Evolve from the ground state until the monitored observables are
/// stationary; diverging pair correlations abort with a diagnostic naming
/// the drive point.
pub fn evolve_ensemble(
    spec: &EnsembleSpec,
    config: &ClusterConfig,
    criterion: &StationarityCriterion,
) -> Result<(ClusterState, ClusterDiagnostics)> {
    evolve_ensemble_from(spec, config, criterion, None)
}

/// As [`evolve_ensemble`] but optionally starting from a previous state with
/// the same layout (warm start along a parameter sweep).
pub fn evolve_ensemble_from(
    spec: &EnsembleSpec,
    config: &ClusterConfig,
    criterion: &StationarityCriterion,
    init: Option<&ClusterState>,
) -> Result<(ClusterState, ClusterDiagnostics)> {
    let engine = ClusterEngine::new(spec, config)?;
    let mut state = build_cluster(spec, config)?;
    if let Some(prev) = init {
        if prev.data.len() != state.data.len() {
            return Err(Error::Validation("warm-start state layout mismatch".into()));
        }
        state.data.copy_from_slice(&prev.data);
    }
    let mut ws = engine.workspace();
    let ode = AdaptiveOde::new(OdeOptions {
        rtol: config.rtol,
        atol: config.atol,
        h_init: config.h_init,
        ..Default::default()
    });
    let mut history: Vec<(f64, [f64; 4])> = Vec::new();
    let mut deltas = vec![f64::INFINITY; 4];
    let mut converged_at = None;
    let mut unstable: Option<String> = None;
    {
        let mut probe = ClusterState {
            time: 0.0,
            m: state.m,
            one_hier: state.one_hier.clone(),
            pair_hier: state.pair_hier.clone(),
            data: vec![Complex64::default(); state.data.len()],
        };
        let mut observe = |t: f64, y: &[Complex64]| -> bool {
            probe.data.copy_from_slice(y);
            let obs = probe.observables();
            let vals = [obs.p_e, obs.cavity_occupation, obs.pair_re, obs.pair_im];
            if vals.iter().any(|v| !v.is_finite())
                || obs.p_e < -0.1
                || obs.p_e > 1.1
                || obs.cavity_occupation < -1e-3
            {
                unstable = Some(format!(
                    "pair closure unstable at drive {:.6e} (t = {t:.3e}, p_e = {:.3e}, n = {:.3e})",
                    spec.drive, obs.p_e, obs.cavity_occupation
                ));
                return false;
            }
            history.push((t, vals));
            let t0 = t - criterion.window;
            if history[0].0 > t0 - criterion.window {
                return true;
            }
            while history.len() > 1 && history[1].0 <= t0 {
                history.remove(0);
            }
            let cur = history[history.len() - 1].1;
            for (kk, dmax) in deltas.iter_mut().enumerate() {
                *dmax = history
                    .iter()
                    .map(|(_, v)| (v[kk] - cur[kk]).abs())
                    .fold(0.0, f64::max);
            }
            if deltas.iter().all(|&d| d < criterion.tol) {
                converged_at = Some(t);
                false
            } else {
                true
            }
        };
        let mut y = std::mem::take(&mut state.data);
        let res = ode.propagate(
            &mut |_t, y, dy| engine.rhs(y, dy, &mut ws),
            0.0,
            config.max_time,
            &mut y,
            Some(&mut observe),
        );
        state.data = y;
        res?;
    }
    if let Some(msg) = unstable {
        return Err(Error::ClosureInstability {
            drive: spec.drive,
            msg,
        });
    }
    match converged_at {
        Some(t) => {
            state.time = t;
            let tr = state.trace();
            if (tr - Complex64::new(1.0, 0.0)).norm() > 1e-6 {
                return Err(Error::Numeric(format!("trace drift at steady state: {tr}")));
            }
            Ok((
                state,
                ClusterDiagnostics {
                    converged_time: t,
                    last_deltas: deltas,
                },
            ))
        }
        None => Err(Error::NonConvergence(format!(
            "no ensemble steady state by t = {:.3e} at drive {:.6e}; deltas {:?}",
            config.max_time, spec.drive, deltas
        ))),
    }
}

/// Steady-state observables of the vibration-free incoherent-pump model.
pub fn incoherent_reference(
    spec: &EnsembleSpec,
    config: &ClusterConfig,
    criterion: &StationarityCriterion,
) -> Result<Observables> {
    let mut inc = spec.clone();
    inc.mode = DriveMode::Incoherent;
    inc.vib_bath = ExponentialBathModel {
        terms: vec![],
        residual: None,
    };
    let (state, _) = evolve_ensemble(&inc, config, criterion)?;
    let obs = state.observables();
    obs.validate()?;
    Ok(obs)
}

/// Stream a trajectory of observables to CSV
/// (`time,p_e,n_cav,pair_re,pair_im`).
pub fn export_cluster_trajectory<W: std::io::Write>(
    spec: &EnsembleSpec,
    config: &ClusterConfig,
    times: &[f64],
    mut w: W,
) -> Result<()> {
    let mut state = build_cluster(spec, config)?;
    writeln!(w, "time,p_e,n_cav,pair_re,pair_im")?;
    for &t in times {
        propagate_cluster(&mut state, spec, config, t)?;
        let o = state.observables();
        writeln!(
            w,
            "{t:.12e},{:.12e},{:.12e},{:.12e},{:.12e}",
            o.p_e, o.cavity_occupation, o.pair_re, o.pair_im
        )?;
    }
    Ok(())
}

/// Number of state entries the solver will allocate, before building it.
pub fn state_size(spec: &EnsembleSpec, config: &ClusterConfig) -> usize {
    let k = match spec.mode {
        DriveMode::Coherent => expand_modes(&[BathCoupling {
            operator: qops::sigma_pm(),
            bath: spec.vib_bath.clone(),
        }])
        .len(),
        DriveMode::Incoherent => 0,
    };
    let d1 = 2 * spec.cavity_cutoff;
    let d2 = 4 * spec.cavity_cutoff;
    let n1 = hierarchy_size(k, config.depth) * d1 * d1;
    let n2 = if spec.n_emitters >= 2 && !config.mean_field {
        hierarchy_size(2 * k, config.effective_pair_depth()) * d2 * d2
    } else {
        0
    };
    n1 + n2
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::heom;

    fn demo_bath() -> ExponentialBathModel {
        ExponentialBathModel::new(vec![ExpTerm {
            g: Complex64::new(0.04, 0.0),
            w: Complex64::new(0.25, 1.1),
        }])
        .unwrap()
    }

    fn demo_spec() -> EnsembleSpec {
        EnsembleSpec {
            n_emitters: 2,
            drive: 0.3,
            mode: DriveMode::Coherent,
            gamma_down: 0.02,
            cavity: CavityBathModel::new(0.2, 0.0, 1.0).unwrap(),
            cavity_cutoff: 4,
            vib_bath: demo_bath(),
        }
    }

    #[test]
    fn json_round_trip() {
        let spec = demo_spec();
        let json = spec.to_json().unwrap();
        let back = EnsembleSpec::from_json(&json).unwrap();
        assert_eq!(back.n_emitters, spec.n_emitters);
        assert_eq!(back.mode, spec.mode);
        assert_eq!(back.vib_bath.terms, spec.vib_bath.terms);
        assert_eq!(back.cavity.kappa, spec.cavity.kappa);
    }

    #[test]
    fn zero_drive_ground_state_is_stationary() {
        let mut spec = demo_spec();
        spec.drive = 0.0;
        let config = ClusterConfig::default();
        let mut st = build_cluster(&spec, &config).unwrap();
        propagate_cluster(&mut st, &spec, &config, 20.0).unwrap();
        let o = st.observables();
        assert!(o.p_e.abs() < 1e-9);
        assert!(o.cavity_occupation.abs() < 1e-9);
        assert!(o.pair_coherence().norm() < 1e-9);
    }

    #[test]
    fn n1_without_cavity_matches_single_emitter_hierarchy() {
        let mut spec = demo_spec();
        spec.n_emitters = 1;
        spec.cavity = CavityBathModel::new(0.0, 0.0, 1.0).unwrap();
        let config = ClusterConfig {
            depth: 5,
            rtol: 1e-10,
            ..Default::default()
        };

        let heom_spec = heom::SystemSpec {
            dim: 2,
            hamiltonian: qops::sigma_x().scale(spec.drive),
            bath_couplings: vec![heom::BathCoupling {
                operator: qops::sigma_pm(),
                bath: spec.vib_bath.clone(),
            }],
            lindblad_terms: vec![heom::LindbladTerm {
                operator: qops::sigma_minus(),
                rate: spec.gamma_down,
            }],
        };
        let heom_config = heom::HeomConfig {
            depth: 5,
            rtol: 1e-10,
            ..Default::default()
        };

        let mut cl = build_cluster(&spec, &config).unwrap();
        let mut hs = heom::build_hierarchy(&heom_spec, &heom_config, &qops::ground()).unwrap();
        for step in 1..=5 {
            let t = step as f64 * 4.0;
            propagate_cluster(&mut cl, &spec, &config, t).unwrap();
            heom::propagate(&mut hs, &heom_spec, &heom_config, t).unwrap();
            let pe_cluster = cl.observables().p_e;
            let pe_heom = heom::expectation(&hs, &qops::sigma_pm()).re;
            assert!(
                (pe_cluster - pe_heom).abs() < 1e-8,
                "t={t}: {pe_cluster} vs {pe_heom}"
            );
        }
    }

    #[test]
    fn mean_field_matches_independent_fixed_step_solver() {
        // incoherent pump, no vibrational bath: the mean-field equation for
        // the emitter x cavity block is re-integrated here with plain RK4
        let spec = EnsembleSpec {
            n_emitters: 4,
            drive: 0.15,
            mode: DriveMode::Incoherent,
            gamma_down: 0.02,
            cavity: CavityBathModel::new(0.2, 0.1, 1.5).unwrap(),
            cavity_cutoff: 4,
            vib_bath: ExponentialBathModel {
                terms: vec![],
                residual: None,
            },
        };
        let config = ClusterConfig {
            mean_field: true,
            rtol: 1e-11,
            atol: 1e-14,
            ..Default::default()
        };
        let t_end = 8.0;
        let mut cl = build_cluster(&spec, &config).unwrap();
        propagate_cluster(&mut cl, &spec, &config, t_end).unwrap();

        // independent solver on matrices
        let m = spec.cavity_cutoff;
        let id2 = CMatrix::identity(2, 2);
        let idm = CMatrix::identity(m, m);
        let a = qops::annihilate(m);
        let h = kron(&id2, &qops::number(m)).scale(spec.cavity.omega_cav)
            + (kron(&qops::sigma_plus(), &a) + kron(&qops::sigma_minus(), &a.adjoint()))
                .scale(spec.cavity.g_cav);
        let linds = [
            (kron(&id2, &a), spec.cavity.kappa),
            (kron(&qops::sigma_minus(), &idm), spec.gamma_down),
            (kron(&qops::sigma_plus(), &idm), spec.drive),
        ];
        let i_unit = Complex64::new(0.0, 1.0);
        let deriv = |phi: &CMatrix| -> CMatrix {
            let mut d = (&h * phi - phi * &h) * (-i_unit);
            for (l, r) in &linds {
                let gr = Complex64::new(*r, 0.0);
                let lphi = l * phi;
                d += (&lphi * l.adjoint()) * (2.0 * gr)
                    - (l.adjoint() * l * phi) * gr
                    - (phi * (l.adjoint() * l)) * gr;
            }
            // collective drive from the other N-1 emitters with the pair
            // cumulant dropped
            let sp = phi.trace_sigma_plus();
            let sm = sp.conj();
            let phi_e = phi.partial_emitter();
            let chi = phi.partial_cavity();
            let kc_p = phi.cavity_sigma(true) - chi.clone() * sp;
            let kc_m = phi.cavity_sigma(false) - chi.clone() * sm;
            let q_p = phi * sp + kron(&phi_e, &kc_p);
            let q_m = phi * sm + kron(&phi_e, &kc_m);
            let af = kron(&id2, &a);
            let coef = -i_unit * spec.cavity.g_cav * (spec.n_emitters as f64 - 1.0);
            d += (&af * &q_p - &q_p * &af) * coef;
            d += (af.adjoint() * &q_m - &q_m * af.adjoint()) * coef;
            d
        };
        let d1 = 2 * m;
        let mut phi = CMatrix::zeros(d1, d1);
        phi[(0, 0)] = Complex64::new(1.0, 0.0);
        let steps = 16000;
        let h_step = t_end / steps as f64;
        for _ in 0..steps {
            let k1 = deriv(&phi);
            let k2 = deriv(&(&phi + &k1 * Complex64::new(h_step / 2.0, 0.0)));
            let k3 = deriv(&(&phi + &k2 * Complex64::new(h_step / 2.0, 0.0)));
            let k4 = deriv(&(&phi + &k3 * Complex64::new(h_step, 0.0)));
            phi += (k1 + k2 * Complex64::new(2.0, 0.0) + k3 * Complex64::new(2.0, 0.0) + k4)
                * Complex64::new(h_step / 6.0, 0.0);
        }
        let mut pe_ref = 0.0;
        let mut nc_ref = 0.0;
        for p in 0..m {
            pe_ref += phi[(m + p, m + p)].re;
            for q in 0..2 {
                nc_ref += p as f64 * phi[(q * m + p, q * m + p)].re;
            }
        }
        let o = cl.observables();
        assert!((o.p_e - pe_ref).abs() < 1e-7, "{} vs {pe_ref}", o.p_e);
        assert!(
            (o.cavity_occupation - nc_ref).abs() < 1e-7,
            "{} vs {nc_ref}",
            o.cavity_occupation
        );
    }

    #[test]
    fn state_size_is_independent_of_n() {
        let config = ClusterConfig::default();
        let mut a = demo_spec();
        a.n_emitters = 10;
        let mut b = demo_spec();
        b.n_emitters = 1000;
        let sa = build_cluster(&a, &config).unwrap();
        let sb = build_cluster(&b, &config).unwrap();
        assert_eq!(sa.data.len(), sb.data.len());
        assert_eq!(sa.data.len(), state_size(&a, &config));
    }

    #[test]
    fn incoherent_reference_zero_pump() {
        let mut spec = demo_spec();
        spec.drive = 0.0;
        let obs = incoherent_reference(
            &spec,
            &ClusterConfig::default(),
            &StationarityCriterion {
                window: 5.0,
                tol: 1e-10,
            },
        )
        .unwrap();
        assert!(obs.p_e.abs() < 1e-8);
        assert!(obs.cavity_occupation.abs() < 1e-8);
    }

    #[test]
    fn pair_block_stays_exchange_symmetric() {
        let spec = demo_spec();
        let config = ClusterConfig {
            depth: 3,
            ..Default::default()
        };
        let mut st = build_cluster(&spec, &config).unwrap();
        propagate_cluster(&mut st, &spec, &config, 10.0).unwrap();
        let m = st.m;
        let d2 = 4 * m;
        let psi = st.psi(0).unwrap();
        let mut worst: f64 = 0.0;
        for q1 in 0..2 {
            for q2 in 0..2 {
                for p in 0..m {
                    for q1p in 0..2 {
                        for q2p in 0..2 {
                            for pp in 0..m {
                                let ij = ((q1 * 2 + q2) * m + p) * d2 + (q1p * 2 + q2p) * m + pp;
                                let ji = ((q2 * 2 + q1) * m + p) * d2 + (q2p * 2 + q1p) * m + pp;
                                worst = worst.max((psi[ij] - psi[ji]).norm());
                            }
                        }
                    }
                }
            }
        }
        assert!(worst < 1e-9, "exchange asymmetry {worst:.3e}");
    }

    #[test]
    fn io_estimator_vanishes_without_coupling() {
        let mut spec = demo_spec();
        spec.cavity = CavityBathModel::new(0.0, 0.0, 1.0).unwrap();
        let config = ClusterConfig::default();
        let mut st = build_cluster(&spec, &config).unwrap();
        propagate_cluster(&mut st, &spec, &config, 10.0).unwrap();
        assert_eq!(input_output_occupation(&st, &spec), 0.0);
        assert!(cavity_occupation(&st).abs() < 1e-10);
    }

    #[test]
    fn observables_validation() {
        let good = Observables {
            p_e: 0.4,
            cavity_occupation: 0.1,
            pair_re: 0.0,
            pair_im: 0.0,
        };
        assert!(good.validate().is_ok());
        let bad = Observables {
            p_e: 1.5,
            ..good
        };
        assert!(bad.validate().is_err());
    }

    // helper extensions used by the reference mean-field solver above
    trait PhiOps {
        fn trace_sigma_plus(&self) -> Complex64;
        fn partial_emitter(&self) -> CMatrix;
        fn partial_cavity(&self) -> CMatrix;
        fn cavity_sigma(&self, plus: bool) -> CMatrix;
    }

    impl PhiOps for CMatrix {
        fn trace_sigma_plus(&self) -> Complex64 {
            let m = self.nrows() / 2;
            (0..m).map(|p| self[(p, m + p)]).sum()
        }

        fn partial_emitter(&self) -> CMatrix {
            let m = self.nrows() / 2;
            CMatrix::from_fn(2, 2, |q, qp| {
                (0..m).map(|p| self[(q * m + p, qp * m + p)]).sum()
            })
        }

        fn partial_cavity(&self) -> CMatrix {
            let m = self.nrows() / 2;
            CMatrix::from_fn(m, m, |p, pp| {
                (0..2).map(|q| self[(q * m + p, q * m + pp)]).sum()
            })
        }

        fn cavity_sigma(&self, plus: bool) -> CMatrix {
            let m = self.nrows() / 2;
            let (k, j) = if plus { (0, 1) } else { (1, 0) };
            CMatrix::from_fn(m, m, |p, pp| self[(k * m + p, j * m + pp)])
        }
    }
}
