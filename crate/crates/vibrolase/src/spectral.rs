//! Effective bath spectral density and bath correlation functions.
//!
//! All 107 vibrational modes and their ohmic environments are combined into a
//! single bath `J_eff(omega)`: each discrete mode (omega_l, S_l) carries the
//! squared coupling `g_l^2 = S_l * omega_l^2 / 2` and is broadened into a
//! Lorentzian of half-width `gamma_l = pi * J_E(omega_l)`, renormalized so the
//! in-window integral of each peak equals `g_l^2` exactly. The zero-temperature
//! bath correlation function is the half-line Fourier transform
//! `alpha(tau) = int_0^inf J(omega) exp(-i omega tau) domega`.

use crate::error::{Error, Result};
use crate::units::cm_to_hartree;
use crate::vibdata::{MoleculeSpec, OhmicEnvironment};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Tabulated spectral density on a strictly increasing frequency grid.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpectralDensity {
    pub grid: Vec<f64>,
    pub values: Vec<f64>,
    /// Optional tag for analytic/closed-form densities.
    pub tag: Option<String>,
}

impl SpectralDensity {
    pub fn new(grid: Vec<f64>, values: Vec<f64>, tag: Option<String>) -> Result<Self> {
        if grid.len() != values.len() || grid.len() < 2 {
            return Err(Error::Validation(
                "spectral density needs matching grid/value arrays of length >= 2".into(),
            ));
        }
        if !grid.windows(2).all(|w| w[1] > w[0]) {
            return Err(Error::Validation(
                "spectral density grid must be strictly increasing".into(),
            ));
        }
        if values.iter().any(|&v| v < 0.0 || !v.is_finite()) {
            return Err(Error::Validation(
                "spectral density values must be finite and non-negative".into(),
            ));
        }
        Ok(Self { grid, values, tag })
    }

    /// Trapezoid integral over the stored grid.
    pub fn integral(&self) -> f64 {
        trapezoid(&self.grid, &self.values)
    }

    /// Trapezoid integral restricted to `[lo, hi]` (clipped to the grid).
    pub fn integral_between(&self, lo: f64, hi: f64) -> f64 {
        let mut acc = 0.0;
        for i in 1..self.grid.len() {
            let (a, b) = (self.grid[i - 1], self.grid[i]);
            if b <= lo || a >= hi {
                continue;
            }
            let (ca, cb) = (a.max(lo), b.min(hi));
            let va = interp_linear(a, b, self.values[i - 1], self.values[i], ca);
            let vb = interp_linear(a, b, self.values[i - 1], self.values[i], cb);
            acc += 0.5 * (va + vb) * (cb - ca);
        }
        acc
    }

    /// Write as CSV (`omega,J`).
    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "omega,J")?;
        for (o, v) in self.grid.iter().zip(&self.values) {
            writeln!(w, "{o:.12e},{v:.12e}")?;
        }
        Ok(())
    }

    /// Read back the [`write_csv`](Self::write_csv) format.
    pub fn read_csv<R: std::io::Read>(mut r: R) -> Result<Self> {
        let mut text = String::new();
        r.read_to_string(&mut text)?;
        let mut grid = Vec::new();
        let mut values = Vec::new();
        for (idx, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || (idx == 0 && line.starts_with("omega")) {
                continue;
            }
            let mut it = line.split(',');
            let parse = |s: Option<&str>| -> Result<f64> {
                s.ok_or_else(|| Error::Parse {
                    line: idx + 1,
                    msg: "missing field".into(),
                })?
                .trim()
                .parse()
                .map_err(|e| Error::Parse {
                    line: idx + 1,
                    msg: format!("{e}"),
                })
            };
            grid.push(parse(it.next())?);
            values.push(parse(it.next())?);
        }
        Self::new(grid, values, None)
    }
}

fn interp_linear(x0: f64, x1: f64, y0: f64, y1: f64, x: f64) -> f64 {
    y0 + (y1 - y0) * (x - x0) / (x1 - x0)
}

fn trapezoid(x: &[f64], y: &[f64]) -> f64 {
    x.windows(2)
        .zip(y.windows(2))
        .map(|(xs, ys)| 0.5 * (ys[0] + ys[1]) * (xs[1] - xs[0]))
        .sum()
}

/// Samples of the bath correlation function for tau >= 0;
/// `alpha(-tau) = conj(alpha(tau))` is implied.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BathCorrelationSamples {
    pub tau_grid: Vec<f64>,
    pub alpha: Vec<Complex64>,
}

impl BathCorrelationSamples {
    /// Write as CSV (`tau,re_alpha,im_alpha`).
    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "tau,re_alpha,im_alpha")?;
        for (t, a) in self.tau_grid.iter().zip(&self.alpha) {
            writeln!(w, "{t:.12e},{:.12e},{:.12e}", a.re, a.im)?;
        }
        Ok(())
    }
}

/// Lossy-cavity bath: `alpha_cav(tau) = g^2 exp(-i omega tau - kappa tau)`.
/// `omega_cav` is the rotating-frame cavity frequency (detuning from the
/// drive); no fit is needed because this is already a single exponential.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct CavityBathModel {
    pub g_cav: f64,
    pub omega_cav: f64,
    pub kappa: f64,
}

impl CavityBathModel {
    pub fn new(g_cav: f64, omega_cav: f64, kappa: f64) -> Result<Self> {
        if g_cav < 0.0 {
            return Err(Error::Validation("g_cav must be >= 0".into()));
        }
        if !(kappa > 0.0) {
            return Err(Error::Validation("kappa must be > 0".into()));
        }
        Ok(Self {
            g_cav,
            omega_cav,
            kappa,
        })
    }
}

/// Cavity bath correlation function at `tau >= 0`.
pub fn cavity_bcf(model: &CavityBathModel, tau: f64) -> Complex64 {
    debug_assert!(tau >= 0.0);
    let g2 = model.g_cav * model.g_cav;
    g2 * (Complex64::new(-model.kappa, -model.omega_cav) * tau).exp()
}

/// Build `J_eff` on `grid` (atomic units) from a molecule and its ohmic
/// environments.
///
/// The grid must extend at least ten linewidths past the highest mode. Each
/// peak is a half-line-renormalized Lorentzian, so the integrated weight per
/// isolated peak is `g_l^2` independent of the broadening width.
pub fn effective_density(
    spec: &MoleculeSpec,
    env: &OhmicEnvironment,
    grid: &[f64],
) -> Result<SpectralDensity> {
    if grid.len() < 2 {
        return Err(Error::Validation("grid too short".into()));
    }
    let omega_max = *grid.last().unwrap();
    let mut values = vec![0.0f64; grid.len()];
    for mode in &spec.modes {
        let omega = cm_to_hartree(mode.frequency_cm);
        let gamma = PI * cm_to_hartree(env.density_cm(mode.frequency_cm));
        if omega + 10.0 * gamma > omega_max {
            return Err(Error::Validation(format!(
                "grid reaches {omega_max:.4e} but mode at {omega:.4e} needs margin {:.4e}",
                omega + 10.0 * gamma
            )));
        }
        let g2 = mode.huang_rhys * omega * omega / 2.0;
        // fraction of a full-line Lorentzian that falls inside the grid window
        let window = (((omega_max - omega) / gamma).atan() + (omega / gamma).atan()) / PI;
        let norm = g2 / (PI * window);
        for (v, &w) in values.iter_mut().zip(grid) {
            let d = w - omega;
            *v += norm * gamma / (d * d + gamma * gamma);
        }
    }
    SpectralDensity::new(grid.to_vec(), values, None)
}

/// Default frequency grid for [`effective_density`]: `[0, 1.25 * omega_top]`
/// where `omega_top` is the highest mode plus ten linewidths.
pub fn default_grid(spec: &MoleculeSpec, env: &OhmicEnvironment, points: usize) -> Vec<f64> {
    let top = spec
        .modes
        .iter()
        .map(|m| {
            cm_to_hartree(m.frequency_cm) + 10.0 * PI * cm_to_hartree(env.density_cm(m.frequency_cm))
        })
        .fold(0.0f64, f64::max);
    let omega_max = 1.25 * top;
    (0..points)
        .map(|i| omega_max * i as f64 / (points - 1) as f64)
        .collect()
}

/// Half-line Fourier transform of a tabulated density by trapezoid
/// quadrature, with a Richardson check against the half-resolution grid.
pub fn bath_correlation(j: &SpectralDensity, tau_grid: &[f64]) -> Result<BathCorrelationSamples> {
    if tau_grid.is_empty() || tau_grid[0] != 0.0 {
        return Err(Error::Validation("tau grid must start at 0".into()));
    }
    let alpha: Vec<Complex64> = tau_grid.iter().map(|&t| fourier_at(j, t)).collect();

    // Richardson check: the full-grid and every-other-point quadrature must
    // agree at tau = 0 (where the integrand is least oscillatory cancellation
    // can hide) and at a midpoint tau.
    let norm = alpha[0].norm();
    if norm > 0.0 {
        let coarse0 = fourier_at_coarse(j, 0.0);
        let mid = tau_grid[tau_grid.len() / 2];
        let coarse_mid = fourier_at_coarse(j, mid);
        let fine_mid = alpha[tau_grid.len() / 2];
        let err = ((alpha[0] - coarse0).norm() + (fine_mid - coarse_mid).norm()) / (3.0 * norm);
        if err > 1e-3 {
            return Err(Error::Numeric(format!(
                "quadrature not converged: Richardson estimate {err:.3e} relative to alpha(0)"
            )));
        }
    }
    Ok(BathCorrelationSamples {
        tau_grid: tau_grid.to_vec(),
        alpha,
    })
}

fn fourier_at(j: &SpectralDensity, tau: f64) -> Complex64 {
    let mut acc = Complex64::new(0.0, 0.0);
    for i in 1..j.grid.len() {
        let (w0, w1) = (j.grid[i - 1], j.grid[i]);
        let f0 = j.values[i - 1] * (Complex64::new(0.0, -w0 * tau)).exp();
        let f1 = j.values[i] * (Complex64::new(0.0, -w1 * tau)).exp();
        acc += 0.5 * (f0 + f1) * (w1 - w0);
    }
    acc
}

fn fourier_at_coarse(j: &SpectralDensity, tau: f64) -> Complex64 {
    let n = j.grid.len();
    let idx: Vec<usize> = (0..n).step_by(2).chain(std::iter::once(n - 1)).collect();
    let mut acc = Complex64::new(0.0, 0.0);
    for k in 1..idx.len() {
        let (i0, i1) = (idx[k - 1], idx[k]);
        if i1 <= i0 {
            continue;
        }
        let (w0, w1) = (j.grid[i0], j.grid[i1]);
        let f0 = j.values[i0] * (Complex64::new(0.0, -w0 * tau)).exp();
        let f1 = j.values[i1] * (Complex64::new(0.0, -w1 * tau)).exp();
        acc += 0.5 * (f0 + f1) * (w1 - w0);
    }
    acc
}

/// Build a tau grid resolving the highest relevant frequency with at least 20
/// points per period and extending until `|alpha| < 1e-4 * alpha(0)` (capped
/// at `max_samples`).
pub fn default_tau_grid(j: &SpectralDensity, max_samples: usize) -> Result<Vec<f64>> {
    let omega_top = *j.grid.last().unwrap();
    if omega_top <= 0.0 {
        return Err(Error::Validation("grid has no positive frequencies".into()));
    }
    let dt = 2.0 * PI / (omega_top * 20.0);
    let alpha0 = fourier_at(j, 0.0).norm();
    if alpha0 == 0.0 {
        return Ok((0..16).map(|i| i as f64 * dt).collect());
    }
    let mut grid = vec![0.0];
    let chunk = 256;
    'outer: while grid.len() < max_samples {
        let start = grid.len();
        for i in start..(start + chunk).min(max_samples) {
            grid.push(i as f64 * dt);
        }
        // check the trailing quarter of the window for decay
        let tail = &grid[grid.len() - chunk.min(grid.len()) / 4..];
        if tail.iter().all(|&t| fourier_at(j, t).norm() < 1e-4 * alpha0) {
            break 'outer;
        }
    }
    Ok(grid)
}
