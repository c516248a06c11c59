//! Synthetic processes with analytically known statistics.
//!
//! | kind                     | known answer                                     |
//! |--------------------------|--------------------------------------------------|
//! | `GaussianWhite`          | h(q) = 0.5, C(τ) = 0                             |
//! | `Fgn { hurst }`          | h(q) = H for every q                             |
//! | `BinomialCascade`        | h(q) = 1/q − log₂(p^q + (1−p)^q)/q               |
//! | `ParetoTail { gamma }`   | P(X > x) = x^−γ for x ≥ 1                        |
//! | `Ar1 { phi }`            | C(τ) = φ^τ                                       |
//! | `PowerCoupled`           | \|r\| = v^α (1 + noise·ε)                        |
//!
//! Output is a deterministic function of the spec: the same seed always
//! yields bitwise-identical values.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum SpecError {
    #[error("Hurst exponent must lie in (0, 1), got {0}")]
    Hurst(f64),
    #[error("cascade weight p must lie in (0.5, 1), got {0}")]
    CascadeWeight(f64),
    #[error("cascade needs 1..=30 levels and length <= 2^levels (levels = {levels}, length = {length})")]
    CascadeSize { levels: u32, length: usize },
    #[error("tail exponent must be positive, got {0}")]
    TailExponent(f64),
    #[error("AR(1) coefficient must satisfy |phi| < 1, got {0}")]
    Ar1(f64),
    #[error("coupling exponent must be positive and noise non-negative (alpha = {alpha}, noise = {noise})")]
    Coupling { alpha: f64, noise: f64 },
    #[error("length must be positive")]
    EmptyLength,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GeneratorKind {
    GaussianWhite,
    Fgn { hurst: f64 },
    BinomialCascade { p: f64, levels: u32 },
    ParetoTail { gamma: f64 },
    Ar1 { phi: f64 },
    PowerCoupled { alpha: f64, noise: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    #[serde(flatten)]
    pub kind: GeneratorKind,
    pub length: usize,
    pub seed: u64,
}

impl GeneratorSpec {
    pub fn new(kind: GeneratorKind, length: usize, seed: u64) -> Self {
        Self { kind, length, seed }
    }

    pub fn validate(&self) -> Result<(), SpecError> {
        if self.length == 0 {
            return Err(SpecError::EmptyLength);
        }
        match self.kind {
            GeneratorKind::GaussianWhite => Ok(()),
            GeneratorKind::Fgn { hurst } if !(hurst > 0.0 && hurst < 1.0) => Err(SpecError::Hurst(hurst)),
            GeneratorKind::BinomialCascade { p, .. } if !(p > 0.5 && p < 1.0) => Err(SpecError::CascadeWeight(p)),
            GeneratorKind::BinomialCascade { levels, .. }
                if levels == 0 || levels > 30 || self.length > (1usize << levels) =>
            {
                Err(SpecError::CascadeSize {
                    levels,
                    length: self.length,
                })
            }
            GeneratorKind::ParetoTail { gamma } if !(gamma > 0.0) => Err(SpecError::TailExponent(gamma)),
            GeneratorKind::Ar1 { phi } if !(phi.abs() < 1.0) => Err(SpecError::Ar1(phi)),
            GeneratorKind::PowerCoupled { alpha, noise } if !(alpha > 0.0 && noise >= 0.0) => {
                Err(SpecError::Coupling { alpha, noise })
            }
            _ => Ok(()),
        }
    }
}

/// Generator output: a single series, or coupled (volume, |return|) pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Generated {
    Series(Vec<f64>),
    Pairs { volume: Vec<f64>, abs_return: Vec<f64> },
}

impl Generated {
    /// The single series; for pairs, the |return| column.
    pub fn into_series(self) -> Vec<f64> {
        match self {
            Generated::Series(v) => v,
            Generated::Pairs { abs_return, .. } => abs_return,
        }
    }
}

pub fn generate(spec: &GeneratorSpec) -> Result<Generated, SpecError> {
    spec.validate()?;
    let mut rng = ChaCha20Rng::seed_from_u64(spec.seed);
    let n = spec.length;
    Ok(match spec.kind {
        GeneratorKind::GaussianWhite => Generated::Series(gaussian(&mut rng, n)),
        GeneratorKind::Fgn { hurst } => Generated::Series(fgn(&mut rng, hurst, n)),
        GeneratorKind::BinomialCascade { p, levels } => {
            let mut v = binomial_cascade(&mut rng, p, levels);
            v.truncate(n);
            Generated::Series(v)
        }
        GeneratorKind::ParetoTail { gamma } => Generated::Series(pareto(&mut rng, gamma, n)),
        GeneratorKind::Ar1 { phi } => Generated::Series(ar1(&mut rng, phi, n)),
        GeneratorKind::PowerCoupled { alpha, noise } => {
            let (volume, abs_return) = power_coupled(&mut rng, alpha, noise, n);
            Generated::Pairs { volume, abs_return }
        }
    })
}

/// Closed-form generalized Hurst exponent of the binomial cascade.
pub fn cascade_hurst(p: f64, q: f64) -> f64 {
    if q == 0.0 {
        // q → 0 limit of the closed form
        return -(p.log2() + (1.0 - p).log2()) / 2.0;
    }
    1.0 / q - (p.powf(q) + (1.0 - p).powf(q)).log2() / q
}

fn gaussian<R: Rng>(rng: &mut R, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

/// Fractional Gaussian noise by circulant embedding of the exact
/// autocovariance γ(k) = ½(|k+1|^{2H} − 2|k|^{2H} + |k−1|^{2H}).
fn fgn<R: Rng>(rng: &mut R, hurst: f64, n: usize) -> Vec<f64> {
    let m = (2 * n).next_power_of_two().max(2);
    let half = m / 2;
    let h2 = 2.0 * hurst;
    let gamma = |k: f64| 0.5 * ((k + 1.0).abs().powf(h2) - 2.0 * k.abs().powf(h2) + (k - 1.0).abs().powf(h2));
    let mut row: Vec<Complex<f64>> = (0..m)
        .map(|j| {
            let k = if j <= half { j } else { m - j };
            Complex::new(gamma(k as f64), 0.0)
        })
        .collect();
    let mut planner = FftPlanner::<f64>::new();
    let fft = planner.plan_fft_forward(m);
    fft.process(&mut row);
    // Eigenvalues are non-negative for fGn up to rounding.
    let mut w: Vec<Complex<f64>> = row
        .iter()
        .map(|lambda| {
            let scale = (lambda.re.max(0.0) / m as f64).sqrt();
            let a: f64 = StandardNormal.sample(rng);
            let b: f64 = StandardNormal.sample(rng);
            Complex::new(scale * a, scale * b)
        })
        .collect();
    fft.process(&mut w);
    w.into_iter().take(n).map(|z| z.re).collect()
}

/// Random binomial multiplicative cascade on 2^levels cells: each split
/// hands weight p to a randomly chosen half and 1 − p to the other.
fn binomial_cascade<R: Rng>(rng: &mut R, p: f64, levels: u32) -> Vec<f64> {
    let mut cells = vec![1.0f64];
    for _ in 0..levels {
        let mut next = Vec::with_capacity(cells.len() * 2);
        for &c in &cells {
            if rng.random::<bool>() {
                next.push(c * p);
                next.push(c * (1.0 - p));
            } else {
                next.push(c * (1.0 - p));
                next.push(c * p);
            }
        }
        cells = next;
    }
    cells
}

/// Pareto with unit scale: x = U^{−1/γ}, U uniform on (0, 1].
fn pareto<R: Rng>(rng: &mut R, gamma: f64, n: usize) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let u: f64 = 1.0 - rng.random::<f64>();
            u.powf(-1.0 / gamma)
        })
        .collect()
}

/// Stationary unit-variance AR(1).
fn ar1<R: Rng>(rng: &mut R, phi: f64, n: usize) -> Vec<f64> {
    let innovation = (1.0 - phi * phi).sqrt();
    let mut x: f64 = StandardNormal.sample(rng);
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        out.push(x);
        let e: f64 = StandardNormal.sample(rng);
        x = phi * x + innovation * e;
    }
    out
}

/// Volume drawn from a Pareto law with exponent 3/2 (scale-free within any
/// log-spaced cell) and |r| = v^α · |1 + noise·ε| with ε standard normal.
fn power_coupled<R: Rng>(rng: &mut R, alpha: f64, noise: f64, n: usize) -> (Vec<f64>, Vec<f64>) {
    let volume = pareto(rng, 1.5, n);
    let abs_return = volume
        .iter()
        .map(|v| {
            let e: f64 = if noise > 0.0 { StandardNormal.sample(rng) } else { 0.0 };
            v.powf(alpha) * (1.0 + noise * e).abs()
        })
        .collect();
    (volume, abs_return)
}
