//! Ensemble and long-orbit diagnostics: Lyapunov spectra, the richness and
//! sufficiency census, ergodic averages and the ball-avoiding scan.
//!
//! Ensemble operations run samples in parallel; every sample draws from its
//! own `(seed, index)` random stream and results are collected in index
//! order, so reports do not depend on the thread count.

pub mod census;
pub mod ergodic;
pub mod lyapunov;
pub mod scan;

pub use census::{richness_census, CensusCategory, CensusReport, CensusSample};
pub use ergodic::{ergodic_average, ergodic_averages, ErgodicReport, Observable};
pub use lyapunov::{lyapunov_spectrum, product_lyapunov_spectrum, LyapunovReport};
pub use scan::{ball_avoiding_scan, AvoidingOrbit, AvoidingReport};
