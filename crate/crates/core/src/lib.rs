//! Numerical laboratory for stochastic contraction of Itô diffusions.
//!
//! * [`numerics`]: dense symmetric eigensolver, matrix exponential, PSD square root.
//! * [`model`]: SDE systems and sampled regularity constants.
//! * [`contraction`]: generalized Jacobian, contraction-rate and metric-floor certificates.
//! * [`simulate`]: reproducible Euler–Maruyama ensembles.
//! * [`wasserstein`]: exact, entropic and Gaussian 2-Wasserstein distances.
//! * [`ou`]: closed-form Ornstein–Uhlenbeck laws.
//! * [`harness`]: end-to-end bound verification, reports and config files.

pub mod contraction;
pub mod harness;
pub mod model;
pub mod numerics;
pub mod ou;
pub mod simulate;
pub mod wasserstein;
