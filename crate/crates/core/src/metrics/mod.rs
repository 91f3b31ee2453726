//! Evaluation metrics on plain `f64` maps, aggregation with exclusion counts,
//! and the min-max-scaled F-score used to rank runs.
//!
//! Unlike the training losses these never guard a degenerate input: a flat
//! map or an empty fixation map is an [`SumError::UndefinedMetric`].

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SumError};
use crate::objective::KL_EPS;

/// Standard deviations at or below this are treated as zero.
pub const MIN_STD: f64 = 1e-12;

fn undefined(metric: &'static str, reason: impl Into<String>) -> SumError {
    SumError::UndefinedMetric {
        metric,
        reason: reason.into(),
    }
}

fn same_len(metric: &'static str, a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() || a.is_empty() {
        return Err(SumError::shape(format!("{metric}: maps of {} and {} values", a.len(), b.len())));
    }
    Ok(())
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Population standard deviation.
fn std_dev(x: &[f64], m: f64) -> f64 {
    (x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / x.len() as f64).sqrt()
}

fn to_distribution(metric: &'static str, x: &[f64]) -> Result<Vec<f64>> {
    let total: f64 = x.iter().sum();
    if !(total > 0.0) {
        return Err(undefined(metric, format!("map sums to {total}")));
    }
    Ok(x.iter().map(|v| v / total).collect())
}

/// Pearson correlation of the raw maps.
pub fn cc(gt: &[f64], s: &[f64]) -> Result<f64> {
    same_len("cc", gt, s)?;
    let (mg, ms) = (mean(gt), mean(s));
    let (sg, ss) = (std_dev(gt, mg), std_dev(s, ms));
    if sg <= MIN_STD || ss <= MIN_STD {
        return Err(undefined("cc", "zero variance"));
    }
    let cov = gt.iter().zip(s).map(|(g, p)| (g - mg) * (p - ms)).sum::<f64>() / gt.len() as f64;
    Ok(cov / (sg * ss))
}

/// KL divergence of the predicted from the ground-truth distribution.
pub fn kld(gt: &[f64], s: &[f64]) -> Result<f64> {
    same_len("kld", gt, s)?;
    let g = to_distribution("kld", gt)?;
    let p = to_distribution("kld", s)?;
    Ok(g.iter()
        .zip(&p)
        .map(|(g, p)| g * (KL_EPS + g / (p + KL_EPS)).ln())
        .sum())
}

/// Histogram intersection of the two distributions.
pub fn sim(gt: &[f64], s: &[f64]) -> Result<f64> {
    same_len("sim", gt, s)?;
    let g = to_distribution("sim", gt)?;
    let p = to_distribution("sim", s)?;
    Ok(g.iter().zip(&p).map(|(g, p)| g.min(*p)).sum())
}

fn fixation_count(metric: &'static str, fix: &[f64]) -> Result<usize> {
    let n = fix.iter().filter(|&&f| f != 0.0).count();
    if n == 0 {
        return Err(undefined(metric, "no fixations"));
    }
    Ok(n)
}

/// Mean z-scored saliency at fixated pixels (any nonzero entry of `fix`).
pub fn nss(fix: &[f64], s: &[f64]) -> Result<f64> {
    same_len("nss", fix, s)?;
    let n = fixation_count("nss", fix)?;
    let m = mean(s);
    let sd = std_dev(s, m);
    if sd <= MIN_STD {
        return Err(undefined("nss", "zero variance"));
    }
    let total: f64 = fix
        .iter()
        .zip(s)
        .filter(|(f, _)| **f != 0.0)
        .map(|(_, v)| (v - m) / sd)
        .sum();
    Ok(total / n as f64)
}

/// AUC-Judd. Thresholds are the saliency values at fixated pixels; a pixel
/// counts as positive at threshold `t` when `s >= t`. True-positive rate is
/// over fixations, false-positive rate over all pixels. The curve is closed
/// with (0, 0) and (1, 1) and integrated with trapezoids.
pub fn auc_judd(fix: &[f64], s: &[f64]) -> Result<f64> {
    same_len("auc", fix, s)?;
    let nfix = fixation_count("auc", fix)?;
    if s.iter().any(|v| !v.is_finite()) {
        return Err(undefined("auc", "non-finite saliency"));
    }
    let mut sorted: Vec<f64> = s.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut thresholds: Vec<f64> = fix
        .iter()
        .zip(s)
        .filter(|(f, _)| **f != 0.0)
        .map(|(_, v)| *v)
        .collect();
    thresholds.sort_by(|a, b| b.total_cmp(a));

    let npix = s.len() as f64;
    let mut area = 0.0;
    let (mut px, mut py) = (0.0, 0.0);
    for (k, &t) in thresholds.iter().enumerate() {
        // fixations at or above t: thresholds is sorted descending, so every
        // later entry equal to t also counts
        let tp = k + 1 + thresholds[k + 1..].iter().take_while(|&&v| v == t).count();
        let above = sorted.partition_point(|&v| v >= t);
        let (x, y) = (above as f64 / npix, tp as f64 / nfix as f64);
        area += (x - px) * (y + py) / 2.0;
        px = x;
        py = y;
    }
    area += (1.0 - px) * (1.0 + py) / 2.0;
    Ok(area)
}

/// Per-sample metric values; `None` marks an undefined metric whose reason
/// is listed in `excluded`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub sample_id: String,
    pub cc: Option<f64>,
    pub kld: Option<f64>,
    pub auc: Option<f64>,
    pub sim: Option<f64>,
    pub nss: Option<f64>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub excluded: Vec<String>,
}

pub const METRIC_NAMES: [&str; 5] = ["cc", "kld", "auc", "sim", "nss"];

impl MetricReport {
    pub fn values(&self) -> [Option<f64>; 5] {
        [self.cc, self.kld, self.auc, self.sim, self.nss]
    }

    /// One JSON object with keys `sample_id, cc, kld, auc, sim, nss`.
    pub fn to_json_line(&self) -> String {
        let mut m = serde_json::Map::new();
        m.insert("sample_id".into(), self.sample_id.clone().into());
        for (name, v) in METRIC_NAMES.iter().zip(self.values()) {
            m.insert((*name).into(), v.map_or(serde_json::Value::Null, Into::into));
        }
        serde_json::Value::Object(m).to_string()
    }
}

/// All five metrics for one prediction. Distribution metrics see
/// sum-normalized maps; CC and NSS see the raw maps.
pub fn evaluate_sample(sample_id: &str, pred: &[f64], gt_map: &[f64], fix_map: &[f64]) -> Result<MetricReport> {
    if pred.len() != gt_map.len() || pred.len() != fix_map.len() {
        return Err(SumError::shape(format!(
            "evaluating {sample_id}: prediction {} / map {} / fixations {} values",
            pred.len(),
            gt_map.len(),
            fix_map.len()
        )));
    }
    let mut excluded = Vec::new();
    let mut keep = |r: Result<f64>| match r {
        Ok(v) => Some(v),
        Err(SumError::UndefinedMetric { metric, reason }) => {
            excluded.push(format!("{metric}: {reason}"));
            None
        }
        Err(e) => {
            excluded.push(e.to_string());
            None
        }
    };
    let cc = keep(cc(gt_map, pred));
    let kld = keep(kld(gt_map, pred));
    let auc = keep(auc_judd(fix_map, pred));
    let sim = keep(sim(gt_map, pred));
    let nss = keep(nss(fix_map, pred));
    Ok(MetricReport {
        sample_id: sample_id.to_string(),
        cc,
        kld,
        auc,
        sim,
        nss,
        excluded,
    })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricStat {
    pub mean: f64,
    /// Population standard deviation over included samples.
    pub std: f64,
    pub count: usize,
    pub excluded: usize,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub cc: MetricStat,
    pub kld: MetricStat,
    pub auc: MetricStat,
    pub sim: MetricStat,
    pub nss: MetricStat,
}

impl MetricSummary {
    pub fn stats(&self) -> [MetricStat; 5] {
        [self.cc, self.kld, self.auc, self.sim, self.nss]
    }

    pub fn run_metrics(&self) -> RunMetrics {
        RunMetrics {
            cc: self.cc.mean,
            sim: self.sim.mean,
            nss: self.nss.mean,
            kl: self.kld.mean,
        }
    }
}

/// Means and deviations in sample order, skipping undefined values. A
/// metric with no defined value has mean NaN and count 0.
pub fn aggregate(reports: &[MetricReport]) -> MetricSummary {
    let stat = |k: usize| {
        let vals: Vec<f64> = reports.iter().filter_map(|r| r.values()[k]).collect();
        let excluded = reports.len() - vals.len();
        if vals.is_empty() {
            return MetricStat {
                mean: f64::NAN,
                std: f64::NAN,
                count: 0,
                excluded,
            };
        }
        let m = mean(&vals);
        MetricStat {
            mean: m,
            std: std_dev(&vals, m),
            count: vals.len(),
            excluded,
        }
    };
    MetricSummary {
        cc: stat(0),
        kld: stat(1),
        auc: stat(2),
        sim: stat(3),
        nss: stat(4),
    }
}

/// Plain-text summary table: mean, standard deviation and exclusions.
pub fn summary_table(summary: &MetricSummary) -> String {
    let mut out = String::from("metric      mean       std     n  excluded\n");
    for (name, s) in METRIC_NAMES.iter().zip(summary.stats()) {
        let _ = writeln!(
            out,
            "{name:<6} {:>9.4} {:>9.4} {:>5} {:>9}",
            s.mean, s.std, s.count, s.excluded
        );
    }
    out
}

/// Dataset-level CC, SIM, NSS and KL of one run.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub cc: f64,
    pub sim: f64,
    pub nss: f64,
    pub kl: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunScore {
    pub raw: RunMetrics,
    pub cc_scaled: f64,
    pub sim_scaled: f64,
    pub nss_scaled: f64,
    pub kl_scaled: f64,
    pub f_score: f64,
}

fn min_max(values: &[f64]) -> Vec<f64> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    values
        .iter()
        .map(|v| if hi == lo { 0.5 } else { (v - lo) / (hi - lo) })
        .collect()
}

/// Min-max scale every metric across `runs` and score
/// `F = CC' + SIM' + NSS' - KL'`. A metric that is equal for all runs scales
/// to 0.5.
pub fn f_score(runs: &[RunMetrics]) -> Vec<RunScore> {
    let col = |f: fn(&RunMetrics) -> f64| min_max(&runs.iter().map(f).collect::<Vec<_>>());
    let (cc, sim, nss, kl) = (col(|r| r.cc), col(|r| r.sim), col(|r| r.nss), col(|r| r.kl));
    runs.iter()
        .enumerate()
        .map(|(i, r)| RunScore {
            raw: *r,
            cc_scaled: cc[i],
            sim_scaled: sim[i],
            nss_scaled: nss[i],
            kl_scaled: kl[i],
            f_score: cc[i] + sim[i] + nss[i] - kl[i],
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::SplitMix64;
    use proptest::prelude::*;

    /// Brute-force ROC: every distinct fixated value as threshold, counts by
    /// full scans, area by trapezoids.
    fn auc_oracle(fix: &[f64], s: &[f64]) -> f64 {
        let mut th: Vec<f64> = fix.iter().zip(s).filter(|(f, _)| **f > 0.0).map(|(_, v)| *v).collect();
        th.sort_by(|a, b| b.partial_cmp(a).unwrap());
        th.dedup();
        let nf = fix.iter().filter(|f| **f > 0.0).count() as f64;
        let mut pts = vec![(0.0, 0.0)];
        for t in th {
            let tp = fix.iter().zip(s).filter(|(f, v)| **f > 0.0 && **v >= t).count() as f64;
            let fp = s.iter().filter(|v| **v >= t).count() as f64;
            pts.push((fp / s.len() as f64, tp / nf));
        }
        pts.push((1.0, 1.0));
        pts.windows(2).map(|w| (w[1].0 - w[0].0) * (w[1].1 + w[0].1) / 2.0).sum()
    }

    fn random_map(n: usize, seed: u64) -> Vec<f64> {
        let mut r = SplitMix64::new(seed);
        (0..n).map(|_| r.next_f64()).collect()
    }

    #[test]
    fn auc_separating_map() {
        let mut fix = vec![0.0; 256];
        let mut s = vec![0.0; 256];
        for (k, v) in s.iter_mut().enumerate() {
            *v = 0.5 * (k as f64 / 256.0);
        }
        for i in [5, 77, 140, 201] {
            fix[i] = 1.0;
            s[i] = 0.9 + i as f64 * 1e-4;
        }
        let a = auc_judd(&fix, &s).unwrap();
        assert!(a >= 0.99);
        assert!((a - auc_oracle(&fix, &s)).abs() < 1e-12);
    }

    #[test]
    fn auc_constant_map_is_chance() {
        let mut fix = vec![0.0; 16];
        fix[3] = 1.0;
        fix[9] = 1.0;
        assert!((auc_judd(&fix, &[0.4; 16]).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn auc_binary_prediction_matches_two_point_roc() {
        let mut fix = vec![0.0; 20];
        for i in [1, 4, 11] {
            fix[i] = 1.0;
        }
        // ROC (0,0) -> (3/20, 1) -> (1,1)
        let want = 0.5 * 0.15 + 0.85;
        let a = auc_judd(&fix, &fix).unwrap();
        assert!((a - want).abs() < 1e-12);
        assert!((a - auc_oracle(&fix, &fix)).abs() < 1e-12);
    }

    #[test]
    fn auc_needs_fixations() {
        assert!(matches!(
            auc_judd(&[0.0; 4], &[0.1, 0.2, 0.3, 0.4]),
            Err(SumError::UndefinedMetric { metric: "auc", .. })
        ));
    }

    #[test]
    fn identity_prediction() {
        let mut gt = random_map(64, 3);
        gt[10] = 2.0;
        let mut fix = vec![0.0; 64];
        fix[10] = 1.0;
        let r = evaluate_sample("s0", &gt, &gt, &fix).unwrap();
        assert!((r.cc.unwrap() - 1.0).abs() < 1e-12);
        assert!(r.kld.unwrap().abs() < 1e-12);
        assert!((r.sim.unwrap() - 1.0).abs() < 1e-12);
        assert!(r.excluded.is_empty());
    }

    #[test]
    fn uniform_prediction_is_excluded() {
        let gt = random_map(16, 4);
        let mut fix = vec![0.0; 16];
        fix[2] = 1.0;
        let r = evaluate_sample("flat", &[0.5; 16], &gt, &fix).unwrap();
        assert!(r.cc.is_none() && r.nss.is_none());
        assert_eq!(r.excluded.len(), 2);
        assert!(r.excluded[0].starts_with("cc"));
        let s = aggregate(&[r.clone(), evaluate_sample("ok", &gt, &gt, &fix).unwrap()]);
        assert_eq!(s.cc.count, 1);
        assert_eq!(s.cc.excluded, 1);
        assert_eq!(s.sim.count, 2);
        let line = r.to_json_line();
        let v: serde_json::Value = serde_json::from_str(&line).unwrap();
        assert_eq!(v["sample_id"], "flat");
        assert!(v["cc"].is_null());
        assert!(summary_table(&s).contains("excluded"));
    }

    #[test]
    fn straight_line_reimplementation() {
        let pred = random_map(49, 5);
        let gt = random_map(49, 6);
        let mut fix = vec![0.0; 49];
        for i in [3, 17, 30, 44] {
            fix[i] = 1.0;
        }
        let r = evaluate_sample("x", &pred, &gt, &fix).unwrap();

        let n = 49.0;
        let mp = pred.iter().sum::<f64>() / n;
        let mg = gt.iter().sum::<f64>() / n;
        let mut cov = 0.0;
        let mut vp = 0.0;
        let mut vg = 0.0;
        for i in 0..49 {
            cov += (pred[i] - mp) * (gt[i] - mg);
            vp += (pred[i] - mp).powi(2);
            vg += (gt[i] - mg).powi(2);
        }
        let cc_want = cov / (vp.sqrt() * vg.sqrt());
        let (sp, sg): (f64, f64) = (pred.iter().sum(), gt.iter().sum());
        let mut kl = 0.0;
        let mut si = 0.0;
        for i in 0..49 {
            let (p, g) = (pred[i] / sp, gt[i] / sg);
            kl += g * (2.2e-16 + g / (p + 2.2e-16)).ln();
            si += p.min(g);
        }
        let sd = (vp / n).sqrt();
        let nss_want = [3, 17, 30, 44].iter().map(|&i| (pred[i] - mp) / sd).sum::<f64>() / 4.0;
        assert!((r.cc.unwrap() - cc_want).abs() < 1e-12);
        assert!((r.kld.unwrap() - kl).abs() < 1e-12);
        assert!((r.sim.unwrap() - si).abs() < 1e-12);
        assert!((r.nss.unwrap() - nss_want).abs() < 1e-12);
        assert!((r.auc.unwrap() - auc_oracle(&fix, &pred)).abs() < 1e-12);
    }

    #[test]
    fn agrees_with_training_losses() {
        use crate::objective::{cc_loss, kl_loss, nss_loss, sim_loss, KlOrientation};
        for seed in 0..5 {
            let pred = random_map(36, 100 + seed);
            let gt = random_map(36, 200 + seed);
            let mut fix = vec![0.0; 36];
            fix[seed as usize] = 1.0;
            fix[20] = 1.0;
            assert!((cc(&gt, &pred).unwrap() - cc_loss(&gt, &pred).unwrap()).abs() < 1e-12);
            assert!((sim(&gt, &pred).unwrap() - sim_loss(&gt, &pred).unwrap()).abs() < 1e-12);
            assert!((nss(&fix, &pred).unwrap() - nss_loss(&fix, &pred).unwrap()).abs() < 1e-12);
            let k = kl_loss(&gt, &pred, KlOrientation::Standard).unwrap();
            assert!((kld(&gt, &pred).unwrap() - k).abs() < 1e-12);
        }
    }

    #[test]
    fn f_score_examples() {
        let one = f_score(&[RunMetrics {
            cc: 0.3,
            sim: 0.2,
            nss: 1.0,
            kl: 2.0,
        }]);
        assert_eq!(one[0].f_score, 1.0);
        assert_eq!(one[0].cc_scaled, 0.5);

        let a = RunMetrics {
            cc: 0.9,
            sim: 0.8,
            nss: 2.0,
            kl: 0.1,
        };
        let b = RunMetrics {
            cc: 0.5,
            sim: 0.4,
            nss: 1.0,
            kl: 0.9,
        };
        let s = f_score(&[a, b]);
        assert_eq!(s[0].f_score, 3.0);
        assert_eq!(s[1].f_score, -1.0);
    }

    fn run_strategy() -> impl Strategy<Value = RunMetrics> {
        (-1.0f64..1.0, 0.0f64..1.0, -2.0f64..4.0, 0.0f64..3.0).prop_map(|(cc, sim, nss, kl)| RunMetrics {
            cc,
            sim,
            nss,
            kl,
        })
    }

    proptest! {
        #[test]
        fn auc_bounded_and_monotone_invariant(seed in 0u64..1000, k in 1usize..10) {
            let s = random_map(64, seed);
            let mut fix = vec![0.0; 64];
            let mut r = SplitMix64::new(seed ^ 77);
            for _ in 0..k {
                fix[r.below(64)] = 1.0;
            }
            let a = auc_judd(&fix, &s).unwrap();
            prop_assert!((0.0..=1.0).contains(&a));
            let t: Vec<f64> = s.iter().map(|v| 2.0 * v + 1.0).collect();
            prop_assert!((auc_judd(&fix, &t).unwrap() - a).abs() < 1e-12);
            prop_assert!((a - auc_oracle(&fix, &s)).abs() < 1e-12);
        }

        #[test]
        fn f_score_scaled_range_and_affine_invariance(
            runs in prop::collection::vec(run_strategy(), 1..6),
            a in 0.1f64..5.0,
            b in -3.0f64..3.0,
        ) {
            let base = f_score(&runs);
            for s in &base {
                for v in [s.cc_scaled, s.sim_scaled, s.nss_scaled, s.kl_scaled] {
                    prop_assert!((0.0..=1.0).contains(&v));
                }
            }
            let moved: Vec<RunMetrics> = runs.iter().map(|r| RunMetrics { nss: a * r.nss + b, ..*r }).collect();
            for (x, y) in base.iter().zip(f_score(&moved)) {
                prop_assert!((x.f_score - y.f_score).abs() < 1e-9);
            }
        }
    }
}
