use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use marketscale::synth::{generate, GeneratorKind, GeneratorSpec};

const START_MS: i64 = 1_704_067_200_000;

pub fn gaussian(n: usize, seed: u64) -> Vec<f64> {
    generate(&GeneratorSpec::new(GeneratorKind::GaussianWhite, n, seed))
        .unwrap()
        .into_series()
}

/// Minute bars driven by a shared factor plus idiosyncratic noise, with
/// volume that grows with the size of the move.
pub fn write_bars(dir: &Path, name: &str, n: usize, seed: u64, loading: f64) {
    let common = gaussian(n, 9_999);
    let own = gaussian(n, seed);
    let extra = gaussian(n, seed + 1_000);
    let mut f = std::io::BufWriter::new(std::fs::File::create(dir.join(format!("{name}.csv"))).unwrap());
    writeln!(f, "timestamp,open,high,low,close,volume,trade_count").unwrap();
    let mut price = 100.0f64;
    for i in 0..n {
        // a short outage keeps the gap handling honest
        if (5_000..5_003).contains(&i) {
            continue;
        }
        let r = 1e-3 * (loading * common[i] + own[i]);
        let open = price;
        price *= r.exp();
        let hi = open.max(price) * 1.0002;
        let lo = open.min(price) * 0.9998;
        let volume = 1e4 * (1.0 + 500.0 * r.abs()) * (0.3 * extra[i]).exp();
        let trades = 20 + (i * 7 + seed as usize) % 50;
        writeln!(f, "{},{open},{hi},{lo},{price},{volume},{trades}", START_MS + 60_000 * i as i64).unwrap();
    }
}

pub fn fixture(dir: &Path) -> PathBuf {
    let data = dir.join("data");
    std::fs::create_dir_all(&data).unwrap();
    write_bars(&data, "AAA", 12_000, 1, 0.8);
    write_bars(&data, "BBB", 12_000, 2, 0.5);
    write_bars(&data, "CCC", 12_000, 3, 0.0);
    data
}

pub fn marketscale(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_marketscale"))
        .args(args)
        .env("SOURCE_DATE_EPOCH", "1700000000")
        .env_remove("MARKETSCALE_DATA_DIR")
        .output()
        .unwrap()
}

pub fn files(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for e in std::fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

