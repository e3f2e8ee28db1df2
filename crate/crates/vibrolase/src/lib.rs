//! Few-molecule lasing in plasmonic nanocavities with the full vibrational
//! manifold carried exactly.
//!
//! The pipeline: molecular normal-mode data ([`vibdata`]) is broadened into an
//! effective bath spectral density ([`spectral`]), whose correlation function
//! is fitted with complex exponentials ([`expfit`]). A single driven emitter
//! coupled to such a bath is propagated with the hierarchical equations of
//! motion ([`heom`]); N identical emitters sharing a lossy cavity are handled
//! by a Gaussian-truncated cluster closure whose cost is independent of N
//! ([`manybody`]). Everything is cross-validated against a brute-force
//! Liouvillian on the full truncated Hilbert space ([`oracle`]), and
//! drive-strength sweeps are orchestrated by [`scan`].

pub mod error;
pub mod expfit;
pub mod heom;
pub mod hierarchy;
pub mod linalg;
pub mod manybody;
pub mod ode;
pub mod oracle;
pub mod qops;
pub mod scan;
pub mod spectral;
pub mod units;
pub mod vibdata;

pub use num_complex::Complex64;

/// Dense complex matrix used throughout the dynamics code.
pub type CMatrix = nalgebra::DMatrix<Complex64>;
/// Dense complex vector.
pub type CVector = nalgebra::DVector<Complex64>;
