//! Molecular vibrational data: normal-mode frequencies and Huang-Rhys
//! factors, and the vibronic model parameters derived from them.
//!
//! Input is a plain CSV with header `frequency_cm,huang_rhys`; lines starting
//! with `#` are comments. The vertical excitation energy follows from the
//! adiabatic gap through the reorganization identity
//! `omega_0 = omega_tilde_0 + sum_lambda S_lambda * omega_lambda`.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::path::Path;

/// One vibrational normal mode: frequency (cm^-1) and Huang-Rhys factor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VibrationalMode {
    pub frequency_cm: f64,
    pub huang_rhys: f64,
}

impl VibrationalMode {
    pub fn new(frequency_cm: f64, huang_rhys: f64) -> Result<Self> {
        if !(frequency_cm > 0.0) {
            return Err(Error::Validation(format!(
                "mode frequency must be positive, got {frequency_cm}"
            )));
        }
        if huang_rhys < 0.0 {
            return Err(Error::Validation(format!(
                "Huang-Rhys factor must be non-negative, got {huang_rhys}"
            )));
        }
        Ok(Self {
            frequency_cm,
            huang_rhys,
        })
    }

    /// Dimensionless displacement of the excited-state oscillator,
    /// `Delta = sqrt(2 S / omega)` in units consistent with `omega`.
    pub fn displacement(&self, omega: f64) -> f64 {
        debug_assert!(omega > 0.0);
        (2.0 * self.huang_rhys / omega).sqrt()
    }

    /// Displacement with the frequency taken in cm^-1.
    pub fn displacement_cm(&self) -> f64 {
        self.displacement(self.frequency_cm)
    }
}

/// Dimensionless displacement for an arbitrary (omega, S) pair.
pub fn displacement(omega: f64, huang_rhys: f64) -> f64 {
    (2.0 * huang_rhys / omega).sqrt()
}

/// A molecule: adiabatic electronic gap plus its vibrational manifold.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MoleculeSpec {
    /// Adiabatic 0-0 gap (cm^-1).
    pub adiabatic_gap_cm: f64,
    /// Vertical Franck-Condon excitation energy (cm^-1), derived.
    pub vertical_gap_cm: f64,
    pub modes: Vec<VibrationalMode>,
}

impl MoleculeSpec {
    pub fn new(adiabatic_gap_cm: f64, modes: Vec<VibrationalMode>) -> Result<Self> {
        if modes.is_empty() {
            return Err(Error::Validation("mode list must be non-empty".into()));
        }
        let reorg: f64 = modes
            .iter()
            .map(|m| m.huang_rhys * m.frequency_cm)
            .sum();
        Ok(Self {
            adiabatic_gap_cm,
            vertical_gap_cm: adiabatic_gap_cm + reorg,
            modes,
        })
    }

    /// Reorganization (Stokes-shift) energy `sum_lambda S_lambda omega_lambda`
    /// in cm^-1.
    pub fn reorganization_energy_cm(&self) -> f64 {
        self.modes
            .iter()
            .map(|m| m.huang_rhys * m.frequency_cm)
            .sum()
    }

    /// Serialize to a JSON document for provenance logging.
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let spec: MoleculeSpec = serde_json::from_str(s)?;
        let reorg = spec.reorganization_energy_cm();
        let expect = spec.adiabatic_gap_cm + reorg;
        if (spec.vertical_gap_cm - expect).abs() > 1e-12 * expect.abs().max(1.0) {
            return Err(Error::Validation(
                "vertical gap violates the reorganization identity".into(),
            ));
        }
        Ok(spec)
    }
}

/// Ohmic environment attached to every vibrational mode:
/// `J_E(omega) = eta * omega * exp(-omega / omega_c)`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct OhmicEnvironment {
    /// Dimensionless coupling eta.
    pub coupling: f64,
    /// Cutoff frequency (cm^-1).
    pub cutoff_cm: f64,
}

impl OhmicEnvironment {
    pub fn new(coupling: f64, cutoff_cm: f64) -> Result<Self> {
        if !(coupling > 0.0) || !(cutoff_cm > 0.0) {
            return Err(Error::Validation(
                "ohmic environment requires coupling > 0 and cutoff > 0".into(),
            ));
        }
        Ok(Self {
            coupling,
            cutoff_cm,
        })
    }

    /// J_E evaluated at `omega_cm` (result in cm^-1).
    pub fn density_cm(&self, omega_cm: f64) -> f64 {
        self.coupling * omega_cm * (-omega_cm / self.cutoff_cm).exp()
    }
}

/// Load a molecule from a `frequency_cm,huang_rhys` CSV file.
///
/// Row order is preserved. Malformed rows report their 1-based line number.
pub fn load_molecule<P: AsRef<Path>>(path: P, adiabatic_gap_cm: f64) -> Result<MoleculeSpec> {
    let text = std::fs::read_to_string(path.as_ref())?;
    parse_molecule(&text, adiabatic_gap_cm)
}

/// Parse the CSV payload of [`load_molecule`] from a string.
pub fn parse_molecule(text: &str, adiabatic_gap_cm: f64) -> Result<MoleculeSpec> {
    let mut modes = Vec::new();
    let mut header_seen = false;
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if !header_seen {
            header_seen = true;
            let lowered = line.to_ascii_lowercase();
            if lowered.replace(' ', "") == "frequency_cm,huang_rhys" {
                continue;
            }
            return Err(Error::Parse {
                line: line_no,
                msg: format!("expected header 'frequency_cm,huang_rhys', got '{line}'"),
            });
        }
        let mut fields = line.split(',');
        let freq: f64 = fields
            .next()
            .ok_or_else(|| Error::Parse {
                line: line_no,
                msg: "missing frequency field".into(),
            })?
            .trim()
            .parse()
            .map_err(|e| Error::Parse {
                line: line_no,
                msg: format!("bad frequency: {e}"),
            })?;
        let hr: f64 = fields
            .next()
            .ok_or_else(|| Error::Parse {
                line: line_no,
                msg: "missing huang_rhys field".into(),
            })?
            .trim()
            .parse()
            .map_err(|e| Error::Parse {
                line: line_no,
                msg: format!("bad huang_rhys: {e}"),
            })?;
        if fields.next().is_some() {
            return Err(Error::Parse {
                line: line_no,
                msg: "expected exactly two fields".into(),
            });
        }
        modes.push(VibrationalMode::new(freq, hr).map_err(|e| Error::Parse {
            line: line_no,
            msg: e.to_string(),
        })?);
    }
    MoleculeSpec::new(adiabatic_gap_cm, modes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_huang_rhys_adds_nothing() {
        let spec = parse_molecule("frequency_cm,huang_rhys\n1000.0,0.0\n", 20000.0).unwrap();
        assert_eq!(spec.vertical_gap_cm, 20000.0);
    }

    #[test]
    fn unit_huang_rhys_shifts_by_omega() {
        let spec = parse_molecule("frequency_cm,huang_rhys\n1000.0,1.0\n", 19857.0).unwrap();
        assert_eq!(spec.vertical_gap_cm, 20857.0);
    }

    #[test]
    fn displacement_values() {
        assert_eq!(displacement(1.0, 0.0), 0.0);
        assert_eq!(displacement(2.0, 1.0), 1.0);
        // direct arithmetic: sqrt(2*2/0.5) = sqrt(8)
        assert!((displacement(0.5, 2.0) - 8.0f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn displacement_round_trip() {
        for &(w, s) in &[(500.0, 0.3), (1234.5, 1.7), (3000.0, 0.01)] {
            let m = VibrationalMode::new(w, s).unwrap();
            let d = m.displacement_cm();
            assert!((d * d * w / 2.0 - s).abs() < 1e-12 * s.max(1.0));
        }
    }

    #[test]
    fn reorganization_energy_single_mode() {
        let spec = parse_molecule("frequency_cm,huang_rhys\n1000.0,0.5\n", 1.0).unwrap();
        assert_eq!(spec.reorganization_energy_cm(), 500.0);
    }

    #[test]
    fn reorganization_identity() {
        let text = "frequency_cm,huang_rhys\n500.0,0.2\n1500.0,0.9\n3000.0,0.05\n";
        let spec = parse_molecule(text, 18000.0).unwrap();
        let reorg = spec.reorganization_energy_cm();
        assert!(
            (spec.vertical_gap_cm - spec.adiabatic_gap_cm - reorg).abs()
                < 1e-12 * spec.vertical_gap_cm
        );
    }

    #[test]
    fn malformed_row_reports_line() {
        let err = parse_molecule("frequency_cm,huang_rhys\n1000.0,0.1\nbogus\n", 0.0).unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other}"),
        }
    }

    #[test]
    fn negative_frequency_rejected() {
        let err = parse_molecule("frequency_cm,huang_rhys\n-10.0,0.1\n", 0.0).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }));
    }

    #[test]
    fn order_preserved_and_json_round_trip() {
        let text = "frequency_cm,huang_rhys\n300.0,0.1\n100.0,0.2\n200.0,0.3\n";
        let spec = parse_molecule(text, 10000.0).unwrap();
        let freqs: Vec<f64> = spec.modes.iter().map(|m| m.frequency_cm).collect();
        assert_eq!(freqs, vec![300.0, 100.0, 200.0]);
        let back = MoleculeSpec::from_json(&spec.to_json().unwrap()).unwrap();
        assert_eq!(back.modes.len(), 3);
        assert_eq!(back.vertical_gap_cm, spec.vertical_gap_cm);
    }
}
