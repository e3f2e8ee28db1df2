//! Unit conversions. Everything internal runs in Hartree atomic units; input
//! data and most of the literature quote wavenumbers.

/// 1 Hartree in cm^-1. The single place this constant lives.
pub const HARTREE_CM: f64 = 219_474.631_363_2;

/// Convert an energy in cm^-1 to Hartree.
pub fn cm_to_hartree(e_cm: f64) -> f64 {
    e_cm / HARTREE_CM
}

/// Convert an energy in Hartree to cm^-1.
pub fn hartree_to_cm(e_ha: f64) -> f64 {
    e_ha * HARTREE_CM
}
