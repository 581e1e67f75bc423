//! Route-deviation detection by a windowed likelihood-ratio test on the OU
//! mean velocity.
//!
//! Under the nominal hypothesis the observed velocities are stationary OU
//! around the route velocity `v̄`; the alternative shifts the mean by an
//! unknown `δ`. The maximum-likelihood `δ̂` is the sample mean of `v − v̄`,
//! and with the effective sample count
//! `N_eff = N² / Σ_ij exp(−θ|t_i − t_j|)` the statistic
//! `Λ = Σ_axis N_eff δ̂² / (σ²/2θ)` is χ² with two degrees of freedom under
//! the nominal model.

use nalgebra::Vector2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::point_segment_distance;
use crate::io::{Mmsi, Track};
use crate::kinematics::OuParams;
use crate::traffic::{velocity_sequence, TrafficGraph};

/// χ²₂ upper quantile: `P(X > q) = far` gives `q = −2 ln far`.
pub fn chi2_2dof_quantile(far: f64) -> f64 {
    -2.0 * far.ln()
}

/// Test outcome for one window.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Glr {
    pub lambda: f64,
    pub delta_hat: Vector2<f64>,
    /// Effective sample count per axis.
    pub n_eff: Vector2<f64>,
}

/// `N² / Σ_ij exp(−θ|t_i − t_j|)`: the number of independent samples whose
/// mean has the same variance as the mean of this correlated window.
pub fn effective_sample_count(times: &[f64], theta: f64) -> f64 {
    let n = times.len() as f64;
    let mut s = 0.0;
    for (i, ti) in times.iter().enumerate() {
        s += 1.0;
        for tj in &times[i + 1..] {
            s += 2.0 * (-theta * (tj - ti).abs()).exp();
        }
    }
    n * n / s
}

pub fn glr_statistic(window: &[(f64, Vector2<f64>)], nominal: &OuParams) -> Result<Glr> {
    if window.len() < 2 {
        return Err(Error::validation("a test window needs at least 2 samples"));
    }
    if window.iter().any(|(t, v)| !t.is_finite() || !v.iter().all(|x| x.is_finite())) {
        return Err(Error::validation("window contains non-finite samples"));
    }
    let var = nominal.stationary_velocity_variance();
    if var.iter().any(|v| !(*v > 0.0)) {
        return Err(Error::validation("nominal model needs positive velocity variance"));
    }
    let times: Vec<f64> = window.iter().map(|(t, _)| *t).collect();
    let n_eff = nominal.theta.map(|th| effective_sample_count(&times, th));
    let delta_hat =
        window.iter().map(|(_, v)| v - nominal.v_mean).sum::<Vector2<f64>>() / window.len() as f64;
    let lambda = (0..2).map(|a| n_eff[a] * delta_hat[a] * delta_hat[a] / var[a]).sum();
    Ok(Glr {
        lambda,
        delta_hat,
        n_eff,
    })
}

/// Exact draw of stationary OU velocities at `times` with mean
/// `v̄ + delta`.
pub fn sample_ou_velocities<R: Rng + ?Sized>(
    ou: &OuParams,
    times: &[f64],
    delta: Vector2<f64>,
    rng: &mut R,
) -> Vec<(f64, Vector2<f64>)> {
    let var = ou.stationary_velocity_variance();
    let mean = ou.v_mean + delta;
    let mut out = Vec::with_capacity(times.len());
    let mut dev = Vector2::zeros();
    for (i, &t) in times.iter().enumerate() {
        for a in 0..2 {
            let z: f64 = rng.sample(StandardNormal);
            dev[a] = if i == 0 {
                var[a].sqrt() * z
            } else {
                let rho = (-ou.theta[a] * (t - times[i - 1])).exp();
                rho * dev[a] + (var[a] * (1.0 - rho * rho)).sqrt() * z
            };
        }
        out.push((t, mean + dev));
    }
    out
}

/// Empirical `1 − target_far` quantile of Λ over nominal windows sampled at
/// `times`.
pub fn calibrate_threshold(ou: &OuParams, times: &[f64], target_far: f64, mc_runs: usize, seed: u64) -> Result<f64> {
    if !(target_far > 0.0 && target_far < 1.0) {
        return Err(Error::validation("target false-alarm rate must be in (0, 1)"));
    }
    if (mc_runs as f64) < 100.0 / target_far {
        return Err(Error::validation(format!(
            "calibration needs at least {} runs for FAR {target_far}",
            (100.0 / target_far).ceil()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut stats = Vec::with_capacity(mc_runs);
    for _ in 0..mc_runs {
        let w = sample_ou_velocities(ou, times, Vector2::zeros(), &mut rng);
        stats.push(glr_statistic(&w, ou)?.lambda);
    }
    stats.sort_by(f64::total_cmp);
    let k = ((1.0 - target_far) * mc_runs as f64).ceil() as usize;
    Ok(stats[k.clamp(1, mc_runs) - 1])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    Nominal,
    Anomalous,
    /// No route edge close enough to define nominal behaviour.
    NoReference,
}

/// One report line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnomalyReport {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mmsi: Option<Mmsi>,
    pub t_start: f64,
    pub t_end: f64,
    /// Absent without a nominal reference.
    pub lambda: Option<f64>,
    pub threshold: f64,
    pub decision: Decision,
    pub delta_mps: Option<[f64; 2]>,
    /// Index into the graph's edge list.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub edge_id: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnomalyConfig {
    /// Samples per window.
    pub window: usize,
    pub stride: usize,
    /// Fixed threshold; overrides `target_far`.
    pub threshold: Option<f64>,
    pub target_far: f64,
    /// Monte-Carlo runs for per-window calibration; 0 uses the χ²₂ quantile.
    pub mc_runs: usize,
    /// Maximum distance from the window centroid to an edge, m.
    pub gate_m: f64,
    pub theta: f64,
    pub sigma: f64,
    pub seed: u64,
}

impl Default for AnomalyConfig {
    fn default() -> Self {
        Self {
            window: 30,
            stride: 10,
            threshold: None,
            target_far: 0.05,
            mc_runs: 0,
            gate_m: 5000.0,
            theta: 1e-3,
            sigma: 0.05,
            seed: 0,
        }
    }
}

impl AnomalyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window < 2 || self.stride == 0 {
            return Err(Error::config("window must be >= 2 and stride >= 1"));
        }
        if !(self.target_far > 0.0 && self.target_far < 1.0) {
            return Err(Error::config("target_far must be in (0, 1)"));
        }
        if !(self.gate_m > 0.0) || !(self.theta > 0.0) || !(self.sigma > 0.0) {
            return Err(Error::config("gate_m, theta and sigma must be positive"));
        }
        if let Some(t) = self.threshold {
            if !(t >= 0.0 && t.is_finite()) {
                return Err(Error::config("threshold must be finite and >= 0"));
            }
        }
        Ok(())
    }
}

/// Nearest edge to `p` within `gate` whose course is within 90° of `v`.
fn assign_edge(graph: &TrafficGraph, p: &Vector2<f64>, v: &Vector2<f64>, gate: f64) -> Option<usize> {
    let frame = graph.frame();
    let xy: Vec<Vector2<f64>> = graph.nodes.iter().map(|n| frame.to_local(&n.centroid)).collect();
    graph
        .edges
        .iter()
        .enumerate()
        .filter(|(_, e)| {
            let dir = xy[e.to] - xy[e.from];
            dir.dot(v) > 0.0
        })
        .map(|(i, e)| (i, point_segment_distance(p, &xy[e.from], &xy[e.to])))
        .filter(|(_, d)| *d <= gate)
        .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)))
        .map(|(i, _)| i)
}

/// Window start indices: every `stride` samples, plus one short window for
/// tracks shorter than `window`.
fn window_starts(n: usize, window: usize, stride: usize) -> Vec<(usize, usize)> {
    if n < 2 {
        return Vec::new();
    }
    if n <= window {
        return vec![(0, n)];
    }
    (0..=n - window).step_by(stride).map(|s| (s, s + window)).collect()
}

/// Splits `0..n` into maximal runs sharing the same edge assignment.
fn edge_runs(assigned: &[Option<usize>]) -> Vec<(usize, usize, Option<usize>)> {
    let mut runs = Vec::new();
    let mut start = 0;
    for i in 1..=assigned.len() {
        if i == assigned.len() || assigned[i] != assigned[start] {
            runs.push((start, i, assigned[start]));
            start = i;
        }
    }
    runs
}

/// Slides test windows over `track`. Each sample is first assigned to its
/// nearest compatible route edge; windows never straddle a change of edge,
/// so a turn at a waypoint is not mistaken for a deviation.
pub fn detect(track: &Track, graph: &TrafficGraph, cfg: &AnomalyConfig) -> Result<Vec<AnomalyReport>> {
    cfg.validate()?;
    if track.len() < 2 {
        return Ok(Vec::new());
    }
    let vel = velocity_sequence(track)?;
    let frame = graph.frame();
    let assigned: Vec<Option<usize>> = track
        .points
        .iter()
        .zip(&vel)
        .map(|(p, (_, v))| assign_edge(graph, &frame.to_local(&p.pos), v, cfg.gate_m))
        .collect();
    let mut out = Vec::new();
    let mut wi = 0u64;
    for (ra, rb, edge) in edge_runs(&assigned) {
        for (a, b) in window_starts(rb - ra, cfg.window, cfg.stride) {
            let win = &vel[ra + a..ra + b];
            let (t_start, t_end) = (win[0].0, win[win.len() - 1].0);
            wi += 1;
            let Some(e) = edge else {
                out.push(AnomalyReport {
                    mmsi: Some(track.mmsi),
                    t_start,
                    t_end,
                    lambda: None,
                    threshold: cfg.threshold.unwrap_or_else(|| chi2_2dof_quantile(cfg.target_far)),
                    decision: Decision::NoReference,
                    delta_mps: None,
                    edge_id: None,
                });
                continue;
            };
            let ou = OuParams::isotropic(graph.edges[e].stats.mean_velocity(), cfg.theta, cfg.sigma)?;
            let glr = glr_statistic(win, &ou)?;
            let threshold = match cfg.threshold {
                Some(t) => t,
                None if cfg.mc_runs > 0 => {
                    let times: Vec<f64> = win.iter().map(|(t, _)| *t).collect();
                    calibrate_threshold(&ou, &times, cfg.target_far, cfg.mc_runs, cfg.seed.wrapping_add(wi))?
                }
                None => chi2_2dof_quantile(cfg.target_far),
            };
            out.push(AnomalyReport {
                mmsi: Some(track.mmsi),
                t_start,
                t_end,
                lambda: Some(glr.lambda),
                threshold,
                decision: if glr.lambda > threshold { Decision::Anomalous } else { Decision::Nominal },
                delta_mps: Some([glr.delta_hat.x, glr.delta_hat.y]),
                edge_id: Some(e),
            });
        }
    }
    out.sort_by(|x, y| x.t_start.total_cmp(&y.t_start));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn nominal() -> OuParams {
        OuParams::isotropic(Vector2::new(3.0, -1.0), 0.01, 0.05).unwrap()
    }

    fn regular(n: usize, dt: f64) -> Vec<f64> {
        (0..n).map(|i| i as f64 * dt).collect()
    }

    #[test]
    fn exact_mean_gives_zero() {
        let w: Vec<_> = regular(10, 60.0).into_iter().map(|t| (t, nominal().v_mean)).collect();
        let g = glr_statistic(&w, &nominal()).unwrap();
        assert_eq!(g.lambda, 0.0);
        assert_eq!(g.delta_hat, Vector2::zeros());
    }

    #[test]
    fn short_window_rejected() {
        assert!(glr_statistic(&[(0.0, Vector2::zeros())], &nominal()).is_err());
    }

    #[test]
    fn effective_count_limits() {
        let t = regular(30, 1e6);
        assert!((effective_sample_count(&t, 0.01) - 30.0).abs() < 1e-9);
        let t = regular(30, 1e-9);
        assert!((effective_sample_count(&t, 0.01) - 1.0).abs() < 1e-6);
    }

    #[test]
    fn false_alarm_rate_under_nominal() {
        let ou = nominal();
        let times = regular(30, 120.0);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let q = chi2_2dof_quantile(0.05);
        let hits = (0..2000)
            .filter(|_| {
                let w = sample_ou_velocities(&ou, &times, Vector2::zeros(), &mut rng);
                glr_statistic(&w, &ou).unwrap().lambda > q
            })
            .count() as f64
            / 2000.0;
        assert!((0.035..=0.065).contains(&hits), "far {hits}");
    }

    /// `P(χ'²₂(λ) > q)` by series over Poisson-weighted central χ² tails.
    fn ncx2_2dof_sf(q: f64, nc: f64) -> f64 {
        let (mut total, mut pois) = (0.0, (-nc / 2.0).exp());
        for j in 0..200 {
            // central χ² with 2 + 2j dof: sf = e^{-q/2} Σ_{i<=j} (q/2)^i / i!
            let mut term = 1.0;
            let mut sf = 1.0;
            for i in 1..=j {
                term *= q / 2.0 / i as f64;
                sf += term;
            }
            total += pois * (-q / 2.0).exp() * sf;
            pois *= nc / 2.0 / (j + 1) as f64;
        }
        total
    }

    #[test]
    fn power_matches_noncentral_chi_square() {
        let ou = nominal();
        let times = regular(30, 120.0);
        let n_eff = effective_sample_count(&times, 0.01);
        let sd = (ou.stationary_velocity_variance().x / n_eff).sqrt();
        let delta = Vector2::new(3.0 * sd, 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let q = chi2_2dof_quantile(0.05);
        let runs = 4000;
        let hits = (0..runs)
            .filter(|_| {
                let w = sample_ou_velocities(&ou, &times, delta, &mut rng);
                glr_statistic(&w, &ou).unwrap().lambda > q
            })
            .count() as f64
            / runs as f64;
        let exact = ncx2_2dof_sf(q, 9.0);
        assert!((exact - 0.7707).abs() < 1e-3);
        let se = (exact * (1.0 - exact) / runs as f64).sqrt();
        assert!((hits - exact).abs() < 4.0 * se, "{hits} vs {exact}");
    }

    #[test]
    fn calibration_quantiles() {
        let ou = nominal();
        let times = regular(30, 60.0);
        let q = calibrate_threshold(&ou, &times, 0.05, 4000, 1).unwrap();
        assert!((q / 5.991 - 1.0).abs() < 0.15, "{q}");
        assert_eq!(q, calibrate_threshold(&ou, &times, 0.05, 4000, 1).unwrap());
        let med = calibrate_threshold(&ou, &times, 0.5, 2001, 1).unwrap();
        assert!((med - 2.0 * 2f64.ln()).abs() < 0.2, "{med}");
        assert!(calibrate_threshold(&ou, &times, 0.05, 1999, 1).is_err());
    }

    proptest! {
        #[test]
        fn rotation_invariant(angle in 0.0f64..6.3, seed in 0u64..50) {
            let ou = nominal();
            let times = regular(12, 90.0);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let w = sample_ou_velocities(&ou, &times, Vector2::new(0.3, 0.1), &mut rng);
            let r = nalgebra::Rotation2::new(angle);
            let ou_r = OuParams::isotropic(r * ou.v_mean, 0.01, 0.05).unwrap();
            let w_r: Vec<_> = w.iter().map(|(t, v)| (*t, r * v)).collect();
            let a = glr_statistic(&w, &ou).unwrap().lambda;
            let b = glr_statistic(&w_r, &ou_r).unwrap().lambda;
            prop_assert!((a - b).abs() <= 1e-9 * a.max(1.0));
        }

        #[test]
        fn monotone_in_deviation(s1 in 0.0f64..2.0, s2 in 0.0f64..2.0, c in 0.0f64..6.3) {
            let ou = nominal();
            let times = regular(8, 100.0);
            let lam = |s: f64| {
                let v = ou.v_mean + Vector2::new(c.cos(), c.sin()) * s;
                let w: Vec<_> = times.iter().map(|t| (*t, v)).collect();
                glr_statistic(&w, &ou).unwrap().lambda
            };
            let (lo, hi) = if s1 <= s2 { (s1, s2) } else { (s2, s1) };
            prop_assert!(lam(lo) <= lam(hi));
            prop_assert!(lam(lo) >= 0.0);
        }
    }
}
