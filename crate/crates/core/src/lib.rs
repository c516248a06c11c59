//! Statistical toolkit for high-frequency market data.
//!
//! The pipeline goes from one-minute OHLCV bars to:
//!
//! * log-return and volume series at arbitrary sampling intervals ([`ingest`]),
//! * empirical survival functions and tail-exponent fits ([`dist`]),
//! * volatility autocorrelation and power-law range detection ([`acf`]),
//! * multifractal detrended (cross-)fluctuation analysis, generalized Hurst
//!   exponents, singularity spectra and the q-dependent detrended
//!   cross-correlation coefficient ([`mfractal`]),
//! * conditional price-impact curves ([`impact`]),
//! * q-dependent correlation matrices and minimal spanning trees ([`network`]).
//!
//! [`synth`] generates processes with known answers that every analysis is
//! tested against.

pub mod acf;
pub mod dist;
pub mod impact;
pub mod ingest;
pub mod mfractal;
pub mod network;
pub mod stats;
pub mod synth;
