//! Adaptive embedded Runge-Kutta integration for complex state vectors:
//! Dormand-Prince 5(4) with PI step-size control.

use crate::error::{Error, Result};
use crate::Complex64;

const A: [[f64; 6]; 6] = [
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
        0.0,
        0.0,
    ],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
        0.0,
    ],
    [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];
const C: [f64; 6] = [0.2, 0.3, 0.8, 8.0 / 9.0, 1.0, 1.0];
const B5: [f64; 7] = [
    35.0 / 384.0,
    0.0,
    500.0 / 1113.0,
    125.0 / 192.0,
    -2187.0 / 6784.0,
    11.0 / 84.0,
    0.0,
];
const B4: [f64; 7] = [
    5179.0 / 57600.0,
    0.0,
    7571.0 / 16695.0,
    393.0 / 640.0,
    -92097.0 / 339200.0,
    187.0 / 2100.0,
    1.0 / 40.0,
];

/// Integration tolerances and step bounds.
#[derive(Debug, Clone, Copy)]
pub struct OdeOptions {
    pub rtol: f64,
    pub atol: f64,
    pub h_init: f64,
    pub h_max: f64,
    pub max_steps: usize,
}

impl Default for OdeOptions {
    fn default() -> Self {
        Self {
            rtol: 1e-8,
            atol: 1e-10,
            h_init: 1e-3,
            h_max: f64::INFINITY,
            max_steps: 50_000_000,
        }
    }
}

/// Adaptive Dormand-Prince driver with optional per-step observation.
pub struct AdaptiveOde {
    pub opts: OdeOptions,
}

impl AdaptiveOde {
    pub fn new(opts: OdeOptions) -> Self {
        Self { opts }
    }

    /// Advance `y` from `t0` to `t1` in place, `dy/dt = rhs(t, y)`. Calls
    /// `observe(t, y)` after every accepted step when provided; returning
    /// `false` from the observer stops the propagation early. Returns the
    /// number of accepted steps.
    pub fn propagate(
        &self,
        rhs: &mut dyn FnMut(f64, &[Complex64], &mut [Complex64]),
        t0: f64,
        t1: f64,
        y: &mut Vec<Complex64>,
        mut observe: Option<&mut dyn FnMut(f64, &[Complex64]) -> bool>,
    ) -> Result<usize> {
        if t1 < t0 {
            return Err(Error::Validation("t1 must be >= t0".into()));
        }
        if t1 == t0 {
            return Ok(0);
        }
        let n = y.len();
        let mut t = t0;
        let mut h = self.opts.h_init.min(t1 - t0).min(self.opts.h_max);
        let mut k: Vec<Vec<Complex64>> = (0..7).map(|_| vec![Complex64::default(); n]).collect();
        let mut ytmp = vec![Complex64::default(); n];
        let mut y5 = vec![Complex64::default(); n];
        let mut accepted = 0usize;
        let mut err_prev: f64 = 1.0;
        let mut steps = 0usize;
        let mut have_fsal = false;

        loop {
            if t >= t1 * (1.0 - 1e-15) {
                return Ok(accepted);
            }
            steps += 1;
            if steps > self.opts.max_steps {
                return Err(Error::NonConvergence(format!(
                    "step budget exhausted at t = {t:.6e} (h = {h:.3e})"
                )));
            }
            if h < 1e-14 * (t1 - t0) {
                return Err(Error::Numeric(format!(
                    "step size underflow at t = {t:.6e}"
                )));
            }
            let h_eff = h.min(t1 - t);

            if !have_fsal {
                rhs(t, y, &mut k[0]);
            }

            for stage in 1..7 {
                let (c_s, a_row): (f64, &[f64]) = if stage < 6 {
                    (C[stage - 1], &A[stage - 1])
                } else {
                    (1.0, &B5[..6])
                };
                for i in 0..n {
                    let mut acc = Complex64::default();
                    for (j, &a) in a_row.iter().enumerate() {
                        if a != 0.0 {
                            acc += a * k[j][i];
                        }
                    }
                    ytmp[i] = y[i] + h_eff * acc;
                }
                if stage < 6 {
                    let (head, tail) = k.split_at_mut(stage);
                    let _ = head;
                    rhs(t + c_s * h_eff, &ytmp, &mut tail[0]);
                } else {
                    y5.copy_from_slice(&ytmp);
                    let (head, tail) = k.split_at_mut(6);
                    let _ = head;
                    rhs(t + h_eff, &ytmp, &mut tail[0]);
                }
            }

            let mut err_norm = 0.0f64;
            for i in 0..n {
                let mut e = Complex64::default();
                for j in 0..7 {
                    let db = B5[j] - B4[j];
                    if db != 0.0 {
                        e += db * k[j][i];
                    }
                }
                let scale = self.opts.atol + self.opts.rtol * y[i].norm().max(y5[i].norm());
                let w = (h_eff * e).norm() / scale;
                err_norm += w * w;
            }
            let err = (err_norm / n as f64).sqrt().max(1e-16);

            if err <= 1.0 {
                t += h_eff;
                std::mem::swap(y, &mut y5);
                // FSAL: k7 of the accepted step is k1 of the next
                k.swap(0, 6);
                have_fsal = true;
                accepted += 1;
                if let Some(obs) = observe.as_deref_mut() {
                    if !obs(t, y) {
                        return Ok(accepted);
                    }
                }
                let fac = 0.9 * err.powf(-0.7 / 5.0) * err_prev.powf(0.4 / 5.0);
                err_prev = err;
                h = (h_eff * fac.clamp(0.2, 6.0)).min(self.opts.h_max);
            } else {
                have_fsal = false;
                h = h_eff * (0.9 * err.powf(-0.2)).clamp(0.1, 0.9);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exponential_decay_exact() {
        let lam = Complex64::new(-0.7, 2.0);
        let mut y = vec![Complex64::new(1.0, 0.0)];
        let ode = AdaptiveOde::new(OdeOptions {
            rtol: 1e-10,
            atol: 1e-12,
            ..Default::default()
        });
        ode.propagate(
            &mut |_t, y, dy| dy[0] = lam * y[0],
            0.0,
            3.0,
            &mut y,
            None,
        )
        .unwrap();
        let expect = (lam * 3.0).exp();
        assert!((y[0] - expect).norm() < 1e-9);
    }

    #[test]
    fn oscillator_energy_conserved() {
        // y'' = -y as a first-order complex pair
        let mut y = vec![Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.0)];
        let ode = AdaptiveOde::new(OdeOptions {
            rtol: 1e-10,
            atol: 1e-12,
            ..Default::default()
        });
        ode.propagate(
            &mut |_t, y, dy| {
                dy[0] = y[1];
                dy[1] = -y[0];
            },
            0.0,
            20.0,
            &mut y,
            None,
        )
        .unwrap();
        assert!((y[0].re - 20.0f64.cos()).abs() < 1e-7);
        assert!((y[1].re + 20.0f64.sin()).abs() < 1e-7);
    }

    #[test]
    fn observer_can_stop_early() {
        let mut y = vec![Complex64::new(1.0, 0.0)];
        let mut seen = 0;
        let mut obs = |_t: f64, _y: &[Complex64]| {
            seen += 1;
            seen < 3
        };
        AdaptiveOde::new(OdeOptions::default())
            .propagate(
                &mut |_t, y, dy| dy[0] = -y[0],
                0.0,
                100.0,
                &mut y,
                Some(&mut obs),
            )
            .unwrap();
        assert_eq!(seen, 3);
    }
}
