use std::collections::BTreeSet;
use std::io::Write;

use marketscale::ingest::*;
use proptest::prelude::*;

const T0: i64 = 1_600_000_000_000 - 1_600_000_000_000 % MINUTE_MS;

fn bar(timestamp: i64, close: f64, volume: f64) -> Bar {
    Bar {
        timestamp,
        open: close,
        high: close,
        low: close,
        close,
        volume,
        trade_count: 3,
    }
}

fn series(symbol: &str, minutes: impl IntoIterator<Item = i64>) -> BarSeries {
    let bars = minutes
        .into_iter()
        .map(|m| bar(T0 + m * MINUTE_MS, 100.0 + (m % 7) as f64, 1.0 + (m % 3) as f64))
        .collect();
    BarSeries::new(symbol, MINUTE_MS, bars).unwrap()
}

#[test]
fn gap_of_five_minutes_is_listed() {
    let s = series("X", (0..10).chain(15..30));
    let missing = s.missing_timestamps();
    let expected: Vec<i64> = (10..15).map(|m| T0 + m * MINUTE_MS).collect();
    assert_eq!(missing, expected);
    assert_eq!(s.gaps().len(), 1);
    assert_eq!(s.gaps()[0].missing, 5);
}

#[test]
fn gap_survives_a_round_trip_through_csv() {
    let mut file = tempfile::Builder::new().suffix(".csv").tempfile().unwrap();
    writeln!(file, "timestamp,open,high,low,close,volume,trade_count").unwrap();
    for m in (0..10).chain(15..30) {
        writeln!(file, "{},1,1.5,0.5,1.2,10,4", T0 + m * MINUTE_MS).unwrap();
    }
    file.flush().unwrap();
    let s = parse_bars(file.path(), &BarFormat::native()).unwrap();
    assert_eq!(s.len(), 25);
    assert_eq!(s.missing_timestamps().len(), 5);
}

#[test]
fn unordered_rows_are_sorted_and_bad_rows_report_their_line() {
    let text = format!("timestamp,open,high,low,close,volume,trade_count\n{},1,1,1,1,1,1\n{},1,1,1,1,1,1\n", T0 + MINUTE_MS, T0);
    let s = parse_bars_from_reader("X", text.as_bytes(), &BarFormat::native()).unwrap();
    assert_eq!(s.timestamps().collect::<Vec<_>>(), vec![T0, T0 + MINUTE_MS]);

    let bad = format!("timestamp,open,high,low,close,volume,trade_count\n{},1,1,1,1,1,1\n{},2,1,1,1,1,1\n", T0, T0 + MINUTE_MS);
    match parse_bars_from_reader("X", bad.as_bytes(), &BarFormat::native()) {
        Err(IngestError::Integrity { line, .. }) => assert_eq!(line, 3),
        other => panic!("expected integrity error, got {other:?}"),
    }
}

#[test]
fn overlap_alignment_matches_brute_force_intersection() {
    // a: minutes 0..200 with holes, b: minutes 80..320 with other holes
    let a_min: Vec<i64> = (0..200).filter(|m| m % 17 != 5).collect();
    let b_min: Vec<i64> = (80..320).filter(|m| m % 23 != 2).collect();
    let a = series("A", a_min.iter().copied());
    let b = series("B", b_min.iter().copied());
    let sb: BTreeSet<i64> = b_min.iter().copied().collect();
    let expected: Vec<i64> = a_min
        .iter()
        .filter(|m| sb.contains(m))
        .map(|m| T0 + m * MINUTE_MS)
        .collect();
    let pair = align_calendars(&a, &b, &SessionSpec::always()).unwrap();
    assert_eq!(pair.timestamps, expected);
    assert_eq!(pair.series_b.timestamps().collect::<Vec<_>>(), expected);
    assert!((pair.coverage_fraction - expected.len() as f64 / a_min.len() as f64).abs() < 1e-12);
}

#[test]
fn contiguous_overlap_of_120_bars() {
    let a = series("A", 0..200);
    let b = series("B", 80..400);
    let pair = align_calendars(&a, &b, &SessionSpec::always()).unwrap();
    assert_eq!(pair.timestamps.len(), 120);
    assert_eq!(pair.timestamps[0], T0 + 80 * MINUTE_MS);
}

#[test]
fn weekday_session_drops_weekend() {
    let spec = SessionSpec::parse("open MON 00:00 - FRI 23:59\nbreak 20:15 - 22:00\n").unwrap();
    // two weeks of minutes starting at a Monday 00:00 (1970-01-05 + k weeks)
    let monday = 4 * 86_400_000i64 + 2600 * 7 * 86_400_000;
    let minutes = 14 * 24 * 60;
    let bars: Vec<Bar> = (0..minutes).map(|m| bar(monday + m * MINUTE_MS, 1.0, 1.0)).collect();
    let a = BarSeries::new("A", MINUTE_MS, bars.clone()).unwrap();
    let b = BarSeries::new("B", MINUTE_MS, bars).unwrap();
    let pair = align_calendars(&a, &b, &spec).unwrap();
    for &t in &pair.timestamps {
        let days = t.div_euclid(86_400_000);
        let weekday = (days + 3).rem_euclid(7); // 0 = Monday
        assert!(weekday < 5, "weekend timestamp {t}");
        let of_day = t.rem_euclid(86_400_000) / MINUTE_MS;
        assert!(!(20 * 60 + 15..22 * 60).contains(&of_day), "break timestamp {t}");
    }
    assert!(!pair.timestamps.is_empty());
}

#[test]
fn five_minute_returns_telescope() {
    let s = series("X", 0..31);
    let r5 = log_returns(&s, 5).unwrap();
    let r1 = log_returns(&s, 1).unwrap();
    assert_eq!(r5.values.len(), 6);
    for (i, v) in r5.values.iter().enumerate() {
        let sum: f64 = r1.values[5 * i..5 * i + 5].iter().sum();
        assert!((v - sum).abs() < 1e-12);
    }
}

fn arb_bars() -> impl Strategy<Value = (Vec<(i64, f64, f64)>, u32)> {
    let rows = prop::collection::vec((1i64..4, 0.5f64..2.0, 0.0f64..100.0), 10..200);
    (rows, prop::sample::select(vec![1u32, 2, 3, 5]))
        .prop_map(|(rows, dt)| {
            let mut t = 0;
            let bars = rows
                .into_iter()
                .map(|(step, price, vol)| {
                    t += step;
                    (t, price, vol)
                })
                .collect();
            (bars, dt)
        })
}

proptest! {
    #[test]
    fn interval_volume_sums_its_bars((rows, dt) in arb_bars()) {
        let bars: Vec<Bar> = rows.iter().map(|&(m, p, v)| bar(T0 + m * MINUTE_MS, p, v)).collect();
        let s = BarSeries::new("P", MINUTE_MS, bars).unwrap();
        let vol = volume_series(&s, dt).unwrap();
        let ret = log_returns(&s, dt).unwrap();
        prop_assert_eq!(&vol.timestamps, &ret.timestamps);
        let by_ts: std::collections::BTreeMap<i64, f64> = rows.iter().map(|&(m, _, v)| (T0 + m * MINUTE_MS, v)).collect();
        for (t, v) in vol.timestamps.iter().zip(&vol.values) {
            let lo = t - dt as i64 * MINUTE_MS;
            let expected: f64 = by_ts.range(lo + 1..=*t).map(|(_, v)| v).sum();
            prop_assert!((v - expected).abs() <= 1e-9 * expected.max(1.0));
        }
    }

    #[test]
    fn cumulative_returns_are_prefix_sums((rows, _dt) in arb_bars()) {
        let bars: Vec<Bar> = rows.iter().map(|&(m, p, v)| bar(T0 + m * MINUTE_MS, p, v)).collect();
        let s = BarSeries::new("P", MINUTE_MS, bars).unwrap();
        let ret = log_returns(&s, 1).unwrap();
        let cum = cumulative_returns(&ret);
        let mut acc = 0.0;
        for (c, r) in cum.iter().zip(&ret.values) {
            acc += r;
            prop_assert!((c - acc).abs() < 1e-9);
        }
    }

    #[test]
    fn normalized_series_has_zero_mean_unit_std(values in prop::collection::vec(-1e3f64..1e3, 3..300)) {
        prop_assume!(values.iter().any(|v| (v - values[0]).abs() > 1e-3));
        let (_, _, z) = normalize_values(&values).unwrap();
        let n = z.len() as f64;
        let m: f64 = z.iter().sum::<f64>() / n;
        let var: f64 = z.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n;
        prop_assert!(m.abs() < 1e-9);
        prop_assert!((var - 1.0).abs() < 1e-9);
    }
}
