use marketscale::mfractal::*;
use marketscale::stats;
use marketscale::synth::{cascade_hurst, generate, GeneratorKind, GeneratorSpec};
use nalgebra::{DMatrix, DVector};

fn synth(kind: GeneratorKind, n: usize, seed: u64) -> Vec<f64> {
    generate(&GeneratorSpec::new(kind, n, seed)).unwrap().into_series()
}

/// Textbook DFA: global profile, Vandermonde least squares per segment via
/// QR, segments taken from both ends.
fn naive_dfa(x: &[f64], s: usize, m: usize) -> f64 {
    let n = x.len();
    let mean = x.iter().sum::<f64>() / n as f64;
    let mut profile = Vec::with_capacity(n);
    let mut acc = 0.0;
    for v in x {
        acc += v - mean;
        profile.push(acc);
    }
    let vander = DMatrix::from_fn(s, m + 1, |i, j| ((i + 1) as f64 / s as f64).powi(j as i32));
    let qr = vander.clone().qr();
    let per_side = n / s;
    let mut starts: Vec<usize> = (0..per_side).map(|v| v * s).collect();
    starts.extend((0..per_side).map(|v| n - (per_side - v) * s));
    let mut total = 0.0;
    for &st in &starts {
        let y = DVector::from_column_slice(&profile[st..st + s]);
        let qty = qr.q().transpose() * &y;
        let coef = qr.r().solve_upper_triangular(&qty).unwrap();
        let resid = &y - &vander * coef;
        total += resid.norm_squared() / s as f64;
    }
    (total / starts.len() as f64).sqrt()
}

#[test]
fn matches_naive_dfa_at_q2() {
    let x = synth(GeneratorKind::Fgn { hurst: 0.6 }, 10_000, 1);
    let cfg = DetrendConfig::for_length(x.len());
    let surf = univariate_surface(&x, &cfg).unwrap();
    let qi = surf.q_index(2.0).unwrap();
    for m in [1, 2] {
        let cfg = DetrendConfig::new(m, cfg.scales.clone(), vec![2.0]);
        let surf_m = univariate_surface(&x, &cfg).unwrap();
        for (si, &s) in cfg.scales.iter().enumerate() {
            let ours = surf_m.get(0, si).unwrap();
            let oracle = naive_dfa(&x, s, m);
            assert!(((ours - oracle) / oracle).abs() < 1e-8, "m {m}, s {s}: {ours} vs {oracle}");
        }
    }
    assert!(surf.get(qi, 0).is_some());
}

#[test]
fn segment_count_is_twice_floor() {
    let x = synth(GeneratorKind::GaussianWhite, 12_345, 2);
    let cfg = DetrendConfig::for_length(x.len());
    let surf = univariate_surface(&x, &cfg).unwrap();
    for (s, count) in surf.scales.iter().zip(&surf.segments) {
        assert_eq!(*count, 2 * (x.len() / s));
    }
}

#[test]
fn fgn_slope_recovers_hurst() {
    let x = synth(GeneratorKind::Fgn { hurst: 0.7 }, 100_000, 3);
    let cfg = DetrendConfig::new(2, stats::log_spaced_integers(10, 25_000, 20), vec![2.0]);
    let surf = univariate_surface(&x, &cfg).unwrap();
    let (lx, ly): (Vec<f64>, Vec<f64>) = cfg
        .scales
        .iter()
        .zip(&surf.values[0])
        .map(|(s, f)| ((*s as f64).ln(), f.unwrap().ln()))
        .unzip();
    let line = stats::fit_line(&lx, &ly).unwrap();
    assert!((line.slope - 0.7).abs() < 0.05, "{line:?}");
}

#[test]
fn white_noise_is_monofractal() {
    let x = synth(GeneratorKind::GaussianWhite, 200_000, 4);
    let cfg = DetrendConfig::for_length(x.len());
    let surf = univariate_surface(&x, &cfg).unwrap();
    let sp = hurst_spectrum(&surf, (10, 50_000)).unwrap();
    for &q in &[-4.0, -2.0, 2.0, 4.0] {
        assert!((sp.h(q).unwrap() - 0.5).abs() < 0.05, "h({q}) = {:?}", sp.h(q));
    }
    assert!(sp.width < 0.15, "width {}", sp.width);
}

fn cascade_spectrum(seed: u64) -> SpectrumResult {
    let x = synth(GeneratorKind::BinomialCascade { p: 0.6, levels: 16 }, 1 << 16, seed);
    let cfg = DetrendConfig::for_length(x.len());
    let surf = univariate_surface(&x, &cfg).unwrap();
    hurst_spectrum(&surf, (10, x.len() / 4)).unwrap()
}

#[test]
fn cascade_matches_closed_form() {
    let sp = cascade_spectrum(0);
    for &q in &[-4.0, -3.0, -2.0, -1.0, -0.5, 0.5, 1.0, 2.0, 3.0, 4.0] {
        let h = sp.h(q).unwrap();
        let expect = cascade_hurst(0.6, q);
        assert!((h - expect).abs() < 0.05, "q {q}: {h} vs {expect}");
    }
    assert!((sp.f_peak() - 1.0).abs() < 0.05);
    assert!(sp.left_wing > 0.0 && sp.right_wing > 0.0);
    assert!(sp.width > 0.15, "cascade should be visibly multifractal: {}", sp.width);
}

#[test]
fn generalized_hurst_is_non_increasing() {
    let inputs = [
        synth(GeneratorKind::BinomialCascade { p: 0.6, levels: 16 }, 1 << 16, 5),
        synth(GeneratorKind::Fgn { hurst: 0.7 }, 1 << 16, 6),
        synth(GeneratorKind::GaussianWhite, 1 << 16, 7),
    ];
    for x in &inputs {
        let cfg = DetrendConfig::for_length(x.len());
        let sp = hurst_spectrum(&univariate_surface(x, &cfg).unwrap(), (10, x.len() / 4)).unwrap();
        for w in sp.h_of_q.windows(2) {
            assert!(w[1] <= w[0] + 0.02, "{:?}", sp.h_of_q);
        }
    }
}

#[test]
fn auto_fit_range_finds_a_window_on_fgn() {
    let x = synth(GeneratorKind::Fgn { hurst: 0.7 }, 1 << 16, 8);
    let cfg = DetrendConfig::for_length(x.len());
    let surf = univariate_surface(&x, &cfg).unwrap();
    let (lo, hi) = auto_fit_range(&surf, 0.98).unwrap();
    let inside = cfg.scales.iter().filter(|s| (lo..=hi).contains(*s)).count();
    assert!(inside >= MIN_FIT_SCALES);
    let sp = hurst_spectrum(&surf, (lo, hi)).unwrap();
    assert!(sp.fit_r2.iter().all(|r| *r >= 0.98));
}

#[test]
fn negated_partner_flips_the_bivariate_surface() {
    let a = synth(GeneratorKind::Fgn { hurst: 0.6 }, 20_000, 9);
    let b: Vec<f64> = a.iter().map(|v| -v).collect();
    let cfg = DetrendConfig::new(2, stats::log_spaced_integers(10, 5_000, 10), vec![0.5, 1.0, 2.0, 4.0]);
    let ab = fluctuation_surface(&a, &b, &cfg).unwrap();
    let aa = fluctuation_surface(&a, &a, &cfg).unwrap();
    assert_eq!(ab.kind, SurfaceKind::Bivariate);
    assert_eq!(aa.kind, SurfaceKind::Univariate);
    for (ra, rb) in aa.values.iter().zip(&ab.values) {
        for (va, vb) in ra.iter().zip(rb) {
            let (va, vb) = (va.unwrap(), vb.unwrap());
            assert!((vb + va).abs() <= 1e-10 * va.abs(), "{vb} vs -{va}");
        }
    }
}

#[test]
fn independent_bivariate_surface_is_small() {
    let a = synth(GeneratorKind::GaussianWhite, 200_000, 10);
    let b = synth(GeneratorKind::GaussianWhite, 200_000, 11);
    let cfg = DetrendConfig::new(2, stats::log_spaced_integers(10, 1000, 10), vec![2.0]);
    let t = surface_triple(&a, &b, &cfg).unwrap();
    for si in 0..cfg.scales.len() {
        let geo = (t.aa.get(0, si).unwrap() * t.bb.get(0, si).unwrap()).sqrt();
        assert!(t.ab.get(0, si).unwrap().abs() < 0.5 * geo);
    }
}

fn rho_cfg() -> DetrendConfig {
    DetrendConfig::new(
        2,
        stats::log_spaced_integers(10, 10_000, 10),
        vec![-2.0, -1.0, 0.0, 0.5, 1.0, 2.0, 3.0, 4.0],
    )
}

#[test]
fn rho_of_a_series_with_itself_is_one() {
    let a = synth(GeneratorKind::Fgn { hurst: 0.65 }, 50_000, 12);
    let cfg = rho_cfg();
    let r = rho_q(&a, &a, &cfg).unwrap();
    for (q, row) in cfg.q_grid.iter().zip(&r.rho) {
        if *q > 0.0 {
            assert!(row.iter().all(|v| (v.unwrap() - 1.0).abs() <= 1e-10), "q {q}: {row:?}");
        }
    }
    // a distinct but identical copy goes through the bivariate path
    let copy = a.clone();
    let r = rho_q(&a, &copy, &cfg).unwrap();
    for (q, row) in cfg.q_grid.iter().zip(&r.rho) {
        if *q > 0.0 {
            assert!(row.iter().all(|v| (v.unwrap() - 1.0).abs() <= 1e-10), "q {q}: {row:?}");
        }
    }
}

#[test]
fn rho_is_antisymmetric_and_scale_free() {
    let a = synth(GeneratorKind::Fgn { hurst: 0.65 }, 50_000, 13);
    let noise = synth(GeneratorKind::GaussianWhite, 50_000, 14);
    let b: Vec<f64> = a.iter().zip(&noise).map(|(x, e)| x + e).collect();
    let neg_b: Vec<f64> = b.iter().map(|v| -v).collect();
    let scaled_a: Vec<f64> = a.iter().map(|v| 3.7e3 * v).collect();
    let scaled_b: Vec<f64> = b.iter().map(|v| 2.5e-4 * v).collect();
    let cfg = rho_cfg();
    let base = rho_q(&a, &b, &cfg).unwrap();
    let flipped = rho_q(&a, &neg_b, &cfg).unwrap();
    let scaled = rho_q(&scaled_a, &scaled_b, &cfg).unwrap();
    for (qi, q) in cfg.q_grid.iter().enumerate() {
        for si in 0..cfg.scales.len() {
            let r = base.rho[qi][si].unwrap();
            if *q > 0.0 {
                assert!((-1.0..=1.0).contains(&r));
                assert!((flipped.rho[qi][si].unwrap() + r).abs() <= 1e-10, "q {q}");
            }
            assert!((scaled.rho[qi][si].unwrap() - r).abs() <= 1e-10, "q {q}");
        }
    }
    // the coupled pair is clearly correlated at q = 2
    let q2 = cfg.q_grid.iter().position(|q| *q == 2.0).unwrap();
    assert!(base.rho[q2].iter().all(|v| v.unwrap() > 0.3));
}

#[test]
fn rho_two_is_the_dcca_coefficient() {
    let a = synth(GeneratorKind::Fgn { hurst: 0.6 }, 20_000, 15);
    let b: Vec<f64> = synth(GeneratorKind::GaussianWhite, 20_000, 16)
        .iter()
        .zip(&a)
        .map(|(e, x)| 0.5 * x + e)
        .collect();
    let s = 100;
    let m = segment_moments(&a, &b, s, 2);
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let dcca = mean(&m.ab) / (mean(&m.aa) * mean(&m.bb)).sqrt();
    let cfg = DetrendConfig::new(2, vec![s], vec![2.0]);
    let r = rho_q(&a, &b, &cfg).unwrap();
    assert!((r.rho[0][0].unwrap() - dcca).abs() < 1e-12);
}

#[test]
fn invalid_configs_are_rejected() {
    let x = vec![1.0; 100];
    assert!(matches!(
        univariate_surface(&x, &DetrendConfig::new(2, vec![3], vec![2.0])),
        Err(MfError::ScaleTooSmall { .. })
    ));
    assert!(matches!(
        univariate_surface(&x, &DetrendConfig::new(2, vec![26], vec![2.0])),
        Err(MfError::ScaleTooLarge { .. })
    ));
    assert!(univariate_surface(&x, &DetrendConfig::new(2, vec![10], vec![11.0])).is_err());
    assert!(matches!(
        rho_q(&x, &x[..50], &DetrendConfig::new(2, vec![10], vec![2.0])),
        Err(MfError::LengthMismatch(100, 50))
    ));
}
