//! Fit a sampled bath correlation function with a sum of complex
//! exponentials, `alpha(tau) ~ sum_i G_i exp(-W_i tau)`.
//!
//! Initialization is a matrix-pencil estimate on uniformly resampled data
//! (SVD of the Hankel matrix, pencil eigenvalues give the rates), followed by
//! variable-projection Levenberg-Marquardt refinement: amplitudes are solved
//! linearly for every rate iterate. Rates with a non-positive real part are
//! reflected into the decaying half plane, since the hierarchy downstream
//! requires every term to decay.

use crate::error::{Error, Result};
use crate::linalg::{char_poly, poly_roots};
use crate::spectral::BathCorrelationSamples;
use crate::Complex64;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

type CMat = DMatrix<Complex64>;
type CVec = DVector<Complex64>;

/// One decaying exponential term `G exp(-W tau)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExpTerm {
    pub g: Complex64,
    pub w: Complex64,
}

/// Fitted `{(G_i, W_i)}` representation of a bath correlation function.
#[derive(Debug, Clone, PartialEq)]
pub struct ExponentialBathModel {
    pub terms: Vec<ExpTerm>,
    /// Relative L2 residual over the fit window, if this model came from a fit.
    pub residual: Option<f64>,
}

#[derive(Serialize, Deserialize)]
struct TermJson {
    g_re: f64,
    g_im: f64,
    w_re: f64,
    w_im: f64,
}

#[derive(Serialize, Deserialize)]
struct ModelJson {
    terms: Vec<TermJson>,
}

impl ExponentialBathModel {
    pub fn new(terms: Vec<ExpTerm>) -> Result<Self> {
        for t in &terms {
            if t.w.re <= 0.0 {
                return Err(Error::Validation(format!(
                    "every term must decay: Re(W) = {} <= 0",
                    t.w.re
                )));
            }
        }
        Ok(Self {
            terms,
            residual: None,
        })
    }

    pub fn count(&self) -> usize {
        self.terms.len()
    }

    /// `sum_i G_i exp(-W_i tau)` for `tau >= 0`.
    pub fn evaluate(&self, tau: f64) -> Complex64 {
        self.terms
            .iter()
            .map(|t| t.g * (-t.w * tau).exp())
            .sum()
    }

    /// `sum_i G_i = alpha(0)` of the model.
    pub fn at_zero(&self) -> Complex64 {
        self.terms.iter().map(|t| t.g).sum()
    }

    /// JSON hand-off contract to the HEOM module; round-trips bit-exactly.
    pub fn to_json(&self) -> Result<String> {
        let doc = ModelJson {
            terms: self
                .terms
                .iter()
                .map(|t| TermJson {
                    g_re: t.g.re,
                    g_im: t.g.im,
                    w_re: t.w.re,
                    w_im: t.w.im,
                })
                .collect(),
        };
        Ok(serde_json::to_string(&doc)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let doc: ModelJson = serde_json::from_str(s)?;
        ExponentialBathModel::new(
            doc.terms
                .iter()
                .map(|t| ExpTerm {
                    g: Complex64::new(t.g_re, t.g_im),
                    w: Complex64::new(t.w_re, t.w_im),
                })
                .collect(),
        )
    }
}

/// Relative L2 residual `||model - alpha||_2 / ||alpha||_2` over the sample
/// window.
pub fn residual(model: &ExponentialBathModel, samples: &BathCorrelationSamples) -> Result<f64> {
    if samples.tau_grid.is_empty() {
        return Err(Error::Validation("empty sample window".into()));
    }
    let mut num = 0.0;
    let mut den = 0.0;
    for (&t, &a) in samples.tau_grid.iter().zip(&samples.alpha) {
        num += (model.evaluate(t) - a).norm_sqr();
        den += a.norm_sqr();
    }
    if den == 0.0 {
        return Ok(if num == 0.0 { 0.0 } else { f64::INFINITY });
    }
    Ok((num / den).sqrt())
}

/// Fit `K` exponentials to the samples. Deterministic; an optional warm start
/// seeds the refinement alongside the matrix-pencil candidate and the better
/// result wins.
pub fn fit_exponentials(
    samples: &BathCorrelationSamples,
    k: usize,
) -> Result<ExponentialBathModel> {
    fit_exponentials_warm(samples, k, None)
}

pub fn fit_exponentials_warm(
    samples: &BathCorrelationSamples,
    k: usize,
    warm: Option<&ExponentialBathModel>,
) -> Result<ExponentialBathModel> {
    if k < 1 {
        return Err(Error::Validation("K must be >= 1".into()));
    }
    let n = samples.tau_grid.len();
    if n < 2 * k + 2 {
        return Err(Error::Validation(format!(
            "K = {k} exceeds the support of {n} samples"
        )));
    }
    let (taus, vals) = uniform_samples(samples);
    let dt = taus[1] - taus[0];

    let mut candidates: Vec<Vec<Complex64>> = Vec::new();
    if let Ok(ws) = pencil_rates(&vals, dt, k) {
        candidates.push(ws);
    }
    if let Some(m) = warm {
        // warm start: keep the smaller model's rates, add fresh ones from a
        // pencil on its residual signal
        let mut ws: Vec<Complex64> = m.terms.iter().map(|t| t.w).collect();
        if ws.len() < k {
            let resid: Vec<Complex64> = taus
                .iter()
                .zip(&vals)
                .map(|(&t, &v)| v - m.evaluate(t))
                .collect();
            let extra = pencil_rates(&resid, dt, k - ws.len()).unwrap_or_else(|_| {
                vec![Complex64::new(1.0 / (dt * n as f64), 0.0); k - ws.len()]
            });
            ws.extend(extra);
        }
        ws.truncate(k);
        candidates.push(ws);
    }
    if candidates.is_empty() {
        return Err(Error::Numeric("pencil initialization failed".into()));
    }

    let mut best: Option<ExponentialBathModel> = None;
    for ws in candidates {
        let refined = refine(&taus, &vals, ws)?;
        let model = finish_model(&taus, &vals, refined)?;
        let better = match &best {
            None => true,
            Some(b) => model.residual < b.residual,
        };
        if better {
            best = Some(model);
        }
    }
    let mut model = best.unwrap();
    if model
        .residual
        .map(|r| !r.is_finite())
        .unwrap_or(true)
    {
        return Err(Error::NonConvergence(format!(
            "fit produced non-finite residual {:?}",
            model.residual
        )));
    }
    // deterministic ordering: by |G| descending
    model
        .terms
        .sort_by(|a, b| b.g.norm().partial_cmp(&a.g.norm()).unwrap());
    Ok(model)
}

/// Return samples on a uniform grid, interpolating if the input is not
/// uniform (cubic, band-limited to the finest input spacing).
fn uniform_samples(samples: &BathCorrelationSamples) -> (Vec<f64>, Vec<Complex64>) {
    let taus = &samples.tau_grid;
    let n = taus.len();
    let dt0 = taus[1] - taus[0];
    let uniform = taus
        .windows(2)
        .all(|w| ((w[1] - w[0]) - dt0).abs() < 1e-9 * dt0.abs().max(1e-300));
    if uniform {
        return (taus.clone(), samples.alpha.clone());
    }
    let dt = taus
        .windows(2)
        .map(|w| w[1] - w[0])
        .fold(f64::INFINITY, f64::min);
    let span = taus[n - 1] - taus[0];
    let m = (span / dt).ceil() as usize + 1;
    let grid: Vec<f64> = (0..m).map(|i| taus[0] + i as f64 * dt).collect();
    let vals = grid
        .iter()
        .map(|&t| cubic_interp(taus, &samples.alpha, t))
        .collect();
    (grid, vals)
}

fn cubic_interp(xs: &[f64], ys: &[Complex64], x: f64) -> Complex64 {
    let n = xs.len();
    let i = match xs.partition_point(|&v| v <= x) {
        0 => 0,
        p => (p - 1).min(n - 2),
    };
    let (i0, i1, i2, i3) = (i.saturating_sub(1), i, i + 1, (i + 2).min(n - 1));
    // Catmull-Rom on possibly uneven spacing, degraded to linear at the ends
    let t = (x - xs[i1]) / (xs[i2] - xs[i1]);
    let p0 = ys[i0];
    let p1 = ys[i1];
    let p2 = ys[i2];
    let p3 = ys[i3];
    let t2 = t * t;
    let t3 = t2 * t;
    0.5 * ((2.0 * p1)
        + (p2 - p0) * t
        + (2.0 * p0 - 5.0 * p1 + 4.0 * p2 - p3) * t2
        + (3.0 * p1 - p0 - 3.0 * p2 + p3) * t3)
}

/// Matrix-pencil rate estimate on uniform samples.
fn pencil_rates(vals: &[Complex64], dt: f64, k: usize) -> Result<Vec<Complex64>> {
    let n = vals.len();
    // decimate long signals; the pencil only needs to see the poles
    let stride = (n / 1200).max(1);
    let v: Vec<Complex64> = vals.iter().step_by(stride).copied().collect();
    let dt = dt * stride as f64;
    let n = v.len();
    let l = (n / 3).clamp(k + 1, 120);
    if n < l + k + 1 {
        return Err(Error::Validation("too few samples for pencil".into()));
    }
    let rows = n - l;
    let mut hankel = CMat::zeros(rows, l + 1);
    for r in 0..rows {
        for c in 0..=l {
            hankel[(r, c)] = v[r + c];
        }
    }
    let svd = hankel.svd(false, true);
    let vt = svd
        .v_t
        .ok_or_else(|| Error::Numeric("SVD failed in pencil".into()))?;
    // top-k right singular vectors as columns
    let mut v1 = CMat::zeros(l, k);
    let mut v2 = CMat::zeros(l, k);
    for j in 0..k {
        for i in 0..l {
            v1[(i, j)] = vt[(j, i)].conj();
            v2[(i, j)] = vt[(j, i + 1)].conj();
        }
    }
    // F = pinv(V1) V2, eigenvalues are the signal poles z_i = exp(-W_i dt)
    let f = v1
        .svd(true, true)
        .solve(&v2, 1e-12)
        .map_err(|e| Error::Numeric(format!("pencil pseudo-inverse failed: {e}")))?;
    let zs = poly_roots(&char_poly(&f));
    let wmin = 1e-9 / dt;
    Ok(zs
        .into_iter()
        .map(|z| {
            let z = if z.norm() < 1e-12 {
                Complex64::new(1e-12, 0.0)
            } else {
                z
            };
            let w = -z.ln() / dt;
            // reflect growing modes into the decaying half plane
            Complex64::new(w.re.max(wmin).abs().max(wmin), w.im)
        })
        .collect())
}

/// Linear amplitude solve for fixed rates; returns (G, residual vector).
fn solve_amplitudes(
    taus: &[f64],
    vals: &[Complex64],
    ws: &[Complex64],
) -> Result<(Vec<Complex64>, Vec<Complex64>)> {
    let n = taus.len();
    let k = ws.len();
    let mut v = CMat::zeros(n, k);
    for i in 0..n {
        for j in 0..k {
            v[(i, j)] = (-ws[j] * taus[i]).exp();
        }
    }
    let b = CVec::from_column_slice(vals);
    let g = v
        .clone()
        .svd(true, true)
        .solve(&b, 1e-14)
        .map_err(|e| Error::Numeric(format!("amplitude solve failed: {e}")))?;
    let r = b - v * &g;
    Ok((g.iter().copied().collect(), r.iter().copied().collect()))
}

fn l2(v: &[Complex64]) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// Variable-projection Levenberg-Marquardt over the rates.
fn refine(taus: &[f64], vals: &[Complex64], mut ws: Vec<Complex64>) -> Result<Vec<Complex64>> {
    let k = ws.len();
    let span = taus[taus.len() - 1] - taus[0];
    let wmin = 1e-9 / span.max(1e-300);
    let clamp = |w: Complex64| Complex64::new(w.re.abs().max(wmin), w.im);
    ws.iter_mut().for_each(|w| *w = clamp(*w));

    let resid_of = |ws: &[Complex64]| -> Result<(Vec<Complex64>, f64)> {
        let (_, r) = solve_amplitudes(taus, vals, ws)?;
        let nrm = l2(&r);
        Ok((r, nrm))
    };

    let (mut r0, mut f0) = resid_of(&ws)?;
    let mut lambda = 1e-3;
    let scale = ws.iter().map(|w| w.norm()).fold(0.0f64, f64::max).max(wmin);

    for _ in 0..120 {
        // numerical Jacobian of the projected residual w.r.t. (Re W, Im W)
        let np = 2 * k;
        let m = r0.len();
        let mut jac = DMatrix::<f64>::zeros(2 * m, np);
        let h = 1e-6 * scale;
        for p in 0..np {
            let mut wp = ws.clone();
            if p % 2 == 0 {
                wp[p / 2].re += h;
            } else {
                wp[p / 2].im += h;
            }
            wp.iter_mut().for_each(|w| *w = clamp(*w));
            let (rp, _) = resid_of(&wp)?;
            for i in 0..m {
                let d = (rp[i] - r0[i]) / h;
                jac[(i, p)] = d.re;
                jac[(m + i, p)] = d.im;
            }
        }
        let mut rr = DVector::<f64>::zeros(2 * m);
        for i in 0..m {
            rr[i] = r0[i].re;
            rr[m + i] = r0[i].im;
        }
        let jtj = jac.transpose() * &jac;
        let jtr = jac.transpose() * &rr;
        let mut improved = false;
        for _ in 0..12 {
            let mut a = jtj.clone();
            for i in 0..np {
                a[(i, i)] += lambda * (jtj[(i, i)].abs().max(1e-30));
            }
            let Some(step) = a.lu().solve(&jtr) else {
                lambda *= 10.0;
                continue;
            };
            let mut wt = ws.clone();
            for p in 0..np {
                if p % 2 == 0 {
                    wt[p / 2].re -= step[p];
                } else {
                    wt[p / 2].im -= step[p];
                }
            }
            wt.iter_mut().for_each(|w| *w = clamp(*w));
            let (rt, ft) = resid_of(&wt)?;
            if ft < f0 {
                ws = wt;
                r0 = rt;
                let rel = (f0 - ft) / f0.max(1e-300);
                f0 = ft;
                lambda = (lambda * 0.3).max(1e-12);
                improved = true;
                if rel < 1e-12 {
                    return Ok(ws);
                }
                break;
            }
            lambda *= 10.0;
        }
        if !improved {
            break;
        }
    }
    Ok(ws)
}

fn finish_model(
    taus: &[f64],
    vals: &[Complex64],
    ws: Vec<Complex64>,
) -> Result<ExponentialBathModel> {
    let (gs, r) = solve_amplitudes(taus, vals, &ws)?;
    let den = l2(vals);
    let rel = if den > 0.0 { l2(&r) / den } else { 0.0 };
    let mut model = ExponentialBathModel::new(
        gs.iter()
            .zip(&ws)
            .map(|(&g, &w)| ExpTerm { g, w })
            .collect(),
    )?;
    model.residual = Some(rel);
    Ok(model)
}
