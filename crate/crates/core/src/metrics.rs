//! Multitarget evaluation: optimal assignment, GOSPA, MMSI label accuracy,
//! ROC curves and the scan-by-scan report used by the `evaluate` command.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, Vector2};
use serde::{Deserialize, Serialize};

use crate::anomaly::AnomalyReport;
use crate::error::{Error, Result};
use crate::geo::LocalFrame;
use crate::io::{Mmsi, TrackPoint, TruthPoint};
use crate::sim::ScenarioConfig;

/// Minimum-cost assignment for a rectangular cost matrix.
///
/// Returns, for each row, the assigned column (every row is assigned when
/// `rows <= cols`, otherwise every column is), plus the total cost.
pub fn hungarian(cost: &DMatrix<f64>) -> (Vec<Option<usize>>, f64) {
    let (nr, nc) = cost.shape();
    if nr == 0 || nc == 0 {
        return (vec![None; nr], 0.0);
    }
    let transpose = nr > nc;
    let c = if transpose { cost.transpose() } else { cost.clone() };
    let (n, m) = c.shape();
    // Shortest augmenting paths with potentials, 1-based with a virtual
    // column 0.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut p = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=m {
                if !used[j] {
                    let cur = c[(i0 - 1, j - 1)] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut row_of_small = vec![None; n];
    for j in 1..=m {
        if p[j] != 0 {
            row_of_small[p[j] - 1] = Some(j - 1);
        }
    }
    let total = row_of_small
        .iter()
        .enumerate()
        .filter_map(|(i, j)| j.map(|j| c[(i, j)]))
        .sum();
    if !transpose {
        return (row_of_small, total);
    }
    let mut out = vec![None; nr];
    for (j, i) in row_of_small.iter().enumerate() {
        if let Some(i) = i {
            out[*i] = Some(j);
        }
    }
    (out, total)
}

/// GOSPA (α = 2) and its split into localization, missed and false parts.
/// Each part is reported as the `p`-th root of its share, so
/// `total^p = localization^p + missed^p + false_tracks^p`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Gospa {
    pub total: f64,
    pub localization: f64,
    pub missed: f64,
    pub false_tracks: f64,
    pub n_missed: usize,
    pub n_false: usize,
}

pub fn gospa(estimates: &[Vector2<f64>], truths: &[Vector2<f64>], c: f64, p: f64) -> Result<Gospa> {
    if !(c > 0.0 && c.is_finite()) || !(p >= 1.0 && p.is_finite()) {
        return Err(Error::validation("GOSPA needs c > 0 and p >= 1"));
    }
    let cost = DMatrix::from_fn(estimates.len(), truths.len(), |i, j| {
        (estimates[i] - truths[j]).norm().min(c).powf(p)
    });
    let (assign, _) = hungarian(&cost);
    let mut loc = 0.0;
    let mut pairs = 0;
    for (i, j) in assign.iter().enumerate() {
        if let Some(j) = j {
            let d = (estimates[i] - truths[*j]).norm();
            // a pair at or beyond the cutoff is equivalent to one miss plus
            // one false track
            if d < c {
                loc += d.powf(p);
                pairs += 1;
            }
        }
    }
    let n_missed = truths.len() - pairs;
    let n_false = estimates.len() - pairs;
    let half = c.powf(p) / 2.0;
    let (m, f) = (half * n_missed as f64, half * n_false as f64);
    Ok(Gospa {
        total: (loc + m + f).powf(1.0 / p),
        localization: loc.powf(1.0 / p),
        missed: m.powf(1.0 / p),
        false_tracks: f.powf(1.0 / p),
        n_missed,
        n_false,
    })
}

/// Running count for MMSI label accuracy.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelTally {
    /// Estimates matched to a truth that claim some MMSI.
    pub claimed: usize,
    pub correct: usize,
}

impl LabelTally {
    /// Matches each estimate to its nearest truth within `cutoff` and counts
    /// MMSI claims.
    pub fn add(&mut self, estimates: &[(Vector2<f64>, Option<Mmsi>)], truths: &[(Vector2<f64>, Mmsi)], cutoff: f64) {
        for (pos, claim) in estimates {
            let Some(claim) = claim else { continue };
            let nearest = truths
                .iter()
                .map(|(q, m)| ((pos - q).norm(), m))
                .filter(|(d, _)| *d <= cutoff)
                .min_by(|a, b| a.0.total_cmp(&b.0));
            if let Some((_, m)) = nearest {
                self.claimed += 1;
                if m == claim {
                    self.correct += 1;
                }
            }
        }
    }

    /// `None` when no matched estimate carried an MMSI.
    pub fn accuracy(&self) -> Option<f64> {
        (self.claimed > 0).then(|| self.correct as f64 / self.claimed as f64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub threshold: f64,
    pub tpr: f64,
    pub fpr: f64,
}

/// ROC points for "positive iff score > threshold", one per distinct score,
/// from the strictest threshold down, starting at (0, 0).
pub fn roc_curve(scored: &[(f64, bool)]) -> Vec<RocPoint> {
    let pos = scored.iter().filter(|s| s.1).count() as f64;
    let neg = scored.len() as f64 - pos;
    let rate = |k: usize, n: f64| if n > 0.0 { k as f64 / n } else { 0.0 };
    let mut sorted: Vec<(f64, bool)> = scored.iter().copied().filter(|s| !s.0.is_nan()).collect();
    sorted.sort_by(|a, b| b.0.total_cmp(&a.0));
    // thresholds stay finite so that the curve survives JSON
    let mut out = vec![RocPoint {
        threshold: sorted.first().map_or(0.0, |x| x.0),
        tpr: 0.0,
        fpr: 0.0,
    }];
    let (mut tp, mut fp) = (0, 0);
    let mut i = 0;
    while i < sorted.len() {
        let s = sorted[i].0;
        while i < sorted.len() && sorted[i].0 == s {
            if sorted[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        // scores equal to `s` become positive once the threshold drops below it
        let next = sorted.get(i).map_or(f64::MIN, |x| x.0);
        out.push(RocPoint {
            threshold: next,
            tpr: rate(tp, pos),
            fpr: rate(fp, neg),
        });
    }
    out
}

/// `(Λ, injected)` pairs for ROC analysis. A window counts as injected when
/// at least half of it overlaps a deviation injected on the same vessel.
/// Reports without a statistic or an MMSI are skipped.
pub fn label_anomaly_reports(reports: &[AnomalyReport], scenario: &ScenarioConfig) -> Result<Vec<(f64, bool)>> {
    let mmsis = scenario.vessel_mmsis()?;
    Ok(reports
        .iter()
        .filter_map(|r| {
            let (lambda, mmsi) = (r.lambda?, r.mmsi?);
            let span = r.t_end - r.t_start;
            let hit = scenario
                .anomalies
                .iter()
                .filter(|a| mmsis.get(a.vessel) == Some(&mmsi))
                .any(|a| {
                    let overlap = (r.t_end.min(a.t_s + a.duration_s) - r.t_start.max(a.t_s)).max(0.0);
                    overlap > 0.0 && overlap >= 0.5 * span
                });
            Some((lambda, hit))
        })
        .collect())
}

/// One row of the per-scan CSV.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScanMetrics {
    pub t: f64,
    pub gospa_total: f64,
    pub gospa_loc: f64,
    pub gospa_missed: f64,
    pub gospa_false: f64,
    pub k_true: usize,
    pub k_est: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub cutoff_m: f64,
    pub order: f64,
    pub n_scans: usize,
    pub mean_gospa: f64,
    pub mean_gospa_loc: f64,
    pub mean_gospa_missed: f64,
    pub mean_gospa_false: f64,
    pub mean_cardinality_error: f64,
    /// Absent when no estimate carried an MMSI.
    pub label_accuracy: Option<f64>,
    pub label_claims: usize,
    pub per_scan: Vec<ScanMetrics>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub roc: Option<Vec<RocPoint>>,
    #[serde(default)]
    pub timings_s: BTreeMap<String, f64>,
}

impl MetricReport {
    pub const CSV_HEADER: &'static str = "t,gospa_total,gospa_loc,gospa_missed,gospa_false,k_true,k_est";

    pub fn to_csv(&self) -> String {
        let mut s = String::from(Self::CSV_HEADER);
        s.push('\n');
        for r in &self.per_scan {
            s.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                r.t, r.gospa_total, r.gospa_loc, r.gospa_missed, r.gospa_false, r.k_true, r.k_est
            ));
        }
        s
    }
}

/// Truth trajectories indexed for interpolation in a local frame.
pub struct TruthIndex {
    frame: LocalFrame,
    tracks: BTreeMap<Mmsi, Vec<(f64, Vector2<f64>)>>,
}

impl TruthIndex {
    pub fn new(truth: &[TruthPoint]) -> Option<Self> {
        let frame = LocalFrame::centered_on(truth.iter().map(|p| p.pos))?;
        let mut tracks: BTreeMap<Mmsi, Vec<(f64, Vector2<f64>)>> = BTreeMap::new();
        for p in truth {
            tracks.entry(p.mmsi).or_default().push((p.t, frame.to_local(&p.pos)));
        }
        for v in tracks.values_mut() {
            v.sort_by(|a, b| a.0.total_cmp(&b.0));
        }
        Some(Self { frame, tracks })
    }

    pub fn frame(&self) -> &LocalFrame {
        &self.frame
    }

    /// Positions of every vessel active at `t`.
    pub fn at(&self, t: f64) -> Vec<(Vector2<f64>, Mmsi)> {
        let mut out = Vec::new();
        for (m, s) in &self.tracks {
            let (Some(first), Some(last)) = (s.first(), s.last()) else { continue };
            if t < first.0 || t > last.0 {
                continue;
            }
            let k = s.partition_point(|x| x.0 <= t);
            let pos = if k == s.len() {
                s[k - 1].1
            } else {
                let (a, b) = (&s[k - 1], &s[k]);
                let w = (t - a.0) / (b.0 - a.0);
                a.1 * (1.0 - w) + b.1 * w
            };
            out.push((pos, *m));
        }
        out
    }
}

/// Scores tracker output against ground truth.
///
/// `scan_times` lists every scan the tracker processed, so that scans with
/// no estimate still count; without it the distinct estimate times are used.
pub fn evaluate(
    tracks: &[TrackPoint],
    truth: &[TruthPoint],
    scan_times: Option<&[f64]>,
    c: f64,
    p: f64,
) -> Result<MetricReport> {
    let index = TruthIndex::new(truth).ok_or_else(|| Error::validation("truth is empty"))?;
    let mut by_time: BTreeMap<u64, Vec<&TrackPoint>> = BTreeMap::new();
    let key = |t: f64| (t + 0.0).to_bits();
    for tp in tracks {
        by_time.entry(key(tp.t)).or_default().push(tp);
    }
    let mut times: Vec<f64> = match scan_times {
        Some(ts) => ts.to_vec(),
        None => tracks.iter().map(|t| t.t).collect(),
    };
    if times.iter().any(|t| !t.is_finite()) {
        return Err(Error::validation("scan times must be finite"));
    }
    times.sort_by(f64::total_cmp);
    times.dedup();
    let mut per_scan = Vec::with_capacity(times.len());
    let mut labels = LabelTally::default();
    let mut card = 0.0;
    for t in times {
        let est: Vec<&TrackPoint> = by_time.get(&key(t)).cloned().unwrap_or_default();
        let est_xy: Vec<Vector2<f64>> = est.iter().map(|e| index.frame.to_local(&e.pos)).collect();
        let truth_now = index.at(t);
        let truth_xy: Vec<Vector2<f64>> = truth_now.iter().map(|x| x.0).collect();
        let g = gospa(&est_xy, &truth_xy, c, p)?;
        let claims: Vec<(Vector2<f64>, Option<Mmsi>)> = est_xy.iter().zip(&est).map(|(x, e)| (*x, e.mmsi)).collect();
        labels.add(&claims, &truth_now, c);
        card += (est.len() as f64 - truth_now.len() as f64).abs();
        per_scan.push(ScanMetrics {
            t,
            gospa_total: g.total,
            gospa_loc: g.localization,
            gospa_missed: g.missed,
            gospa_false: g.false_tracks,
            k_true: truth_now.len(),
            k_est: est.len(),
        });
    }
    let n = per_scan.len();
    let mean = |f: fn(&ScanMetrics) -> f64| {
        if n == 0 {
            0.0
        } else {
            per_scan.iter().map(f).sum::<f64>() / n as f64
        }
    };
    Ok(MetricReport {
        cutoff_m: c,
        order: p,
        n_scans: n,
        mean_gospa: mean(|r| r.gospa_total),
        mean_gospa_loc: mean(|r| r.gospa_loc),
        mean_gospa_missed: mean(|r| r.gospa_missed),
        mean_gospa_false: mean(|r| r.gospa_false),
        mean_cardinality_error: if n == 0 { 0.0 } else { card / n as f64 },
        label_accuracy: labels.accuracy(),
        label_claims: labels.claimed,
        per_scan,
        roc: None,
        timings_s: BTreeMap::new(),
    })
}
