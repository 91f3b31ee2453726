use std::time::Instant;

use super::{selective_scan_tensor, SsmDirection};
use crate::error::Result;
use crate::tensor::{Fill, ParamStore, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BenchRow {
    pub len: usize,
    /// Median wall time of one forward selective scan.
    pub seconds: f64,
}

/// Time `selective_scan` forward passes at each length; reports the median of
/// `repeats` runs per length.
pub fn bench_selective_scan(
    lengths: &[usize],
    channels: usize,
    state: usize,
    repeats: usize,
    seed: u64,
) -> Result<Vec<BenchRow>> {
    let mut store = ParamStore::new();
    let p = SsmDirection::init(&mut store, "bench", channels, state, super::default_rank(channels), seed)?;
    let mut rows = Vec::with_capacity(lengths.len());
    for &len in lengths {
        let x = Tensor::create(
            &[len, channels],
            Fill::SeededUniform {
                lo: -1.0,
                hi: 1.0,
                seed: seed ^ len as u64,
            },
        )?;
        // warm-up
        selective_scan_tensor(&store, &p, &x)?;
        let mut times = Vec::with_capacity(repeats.max(1));
        for _ in 0..repeats.max(1) {
            let t0 = Instant::now();
            let y = selective_scan_tensor(&store, &p, &x)?;
            times.push(t0.elapsed().as_secs_f64());
            std::hint::black_box(y);
        }
        times.sort_by(f64::total_cmp);
        rows.push(BenchRow {
            len,
            seconds: times[times.len() / 2],
        });
    }
    Ok(rows)
}

/// Least-squares slope of `ln(seconds)` against `ln(len)`.
pub fn loglog_slope(rows: &[BenchRow]) -> f64 {
    let pts: Vec<(f64, f64)> = rows
        .iter()
        .map(|r| ((r.len as f64).ln(), r.seconds.max(f64::MIN_POSITIVE).ln()))
        .collect();
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    sxy / sxx
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slope_of_exact_power_law() {
        let rows: Vec<BenchRow> = [1024usize, 2048, 4096]
            .iter()
            .map(|&l| BenchRow {
                len: l,
                seconds: 3e-9 * (l as f64).powf(1.5),
            })
            .collect();
        assert!((loglog_slope(&rows) - 1.5).abs() < 1e-12);
    }
}
