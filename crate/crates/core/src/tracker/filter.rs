//! Prediction, association weights, measurement update and birth.

use nalgebra::{DMatrix, Vector4};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::association::{AssociationProblem, Marginals};
use super::sensor::{Measurement, SensorModel};
use super::target::{class_array, normalize_in_place, uniform, LabelDist, PotentialTarget};
use crate::category::ClassDistribution;
use crate::error::{Error, Result};
use crate::kinematics::{DynamicModel, ModelSet, OuParams};
use crate::traffic::TrafficGraph;

/// Smallest miss weight kept so the association problem stays well posed
/// when `r·pd = 1`.
const MIN_MISS_WEIGHT: f64 = 1e-15;

/// Propagates every target over `dt` seconds.
///
/// The model distribution is pushed through the switching matrix, then each
/// particle draws a model index from it and a successor state from that
/// model. Existence is multiplied by `p_survive`.
pub fn predict<R: Rng + ?Sized>(
    targets: &mut [PotentialTarget],
    model_set: &ModelSet,
    dt: f64,
    p_survive: f64,
    rng: &mut R,
) -> Result<()> {
    if model_set.is_empty() {
        return Err(Error::validation("model set is empty"));
    }
    if !(0.0..=1.0).contains(&p_survive) {
        return Err(Error::validation("survival probability must lie in [0, 1]"));
    }
    let transitions = model_set
        .models()
        .iter()
        .map(|m| m.transition(dt))
        .collect::<Result<Vec<_>>>()?;
    for k in targets.iter_mut() {
        if k.model_dist.len() != model_set.len() {
            return Err(Error::validation("target model distribution does not match the model set"));
        }
        k.model_dist = model_set.propagate_dist(&k.model_dist);
        let cdf: Vec<f64> = k
            .model_dist
            .iter()
            .scan(0.0, |acc, p| {
                *acc += p;
                Some(*acc)
            })
            .collect();
        let total = *cdf.last().expect("non-empty model set");
        for (x, l) in k.states.iter_mut().zip(k.models.iter_mut()) {
            let u = rng.random::<f64>() * total;
            *l = cdf.iter().position(|c| u < *c).unwrap_or(cdf.len() - 1);
            *x = transitions[*l].sample(x, rng);
        }
        k.existence *= p_survive;
    }
    Ok(())
}

/// Per-target quantities reused by [`update`].
#[derive(Debug, Clone)]
struct TargetEvidence {
    pd: Vec<f64>,
    mean_pd: f64,
    /// `ln(w_i·pd_i·f(z_m|x_i))` per measurement, per particle.
    log_terms: Vec<Vec<f64>>,
    /// `ln Σ_i w_i·pd_i·f(z_m|x_i)` per measurement.
    log_sums: Vec<f64>,
    class_posteriors: Vec<Option<ClassDistribution>>,
}

/// Association weights for one scan plus cached per-particle terms.
#[derive(Debug, Clone)]
pub struct ScanEvidence {
    pub problem: AssociationProblem,
    targets: Vec<TargetEvidence>,
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Builds `β_k(m) = r_k/μ · Σ_i w_i·pd_i·f(z_m|x_i) · label factor · class
/// factor` and `β_k(0) = 1 − r_k·p̄d_k`, where `μ` is the density of
/// measurements not generated by tracked targets.
///
/// `n_labels` is the number of MMSIs seen so far (including this scan).
pub fn association_weights(
    targets: &[PotentialTarget],
    measurements: &[Measurement],
    sensor: &SensorModel,
    n_labels: usize,
) -> Result<ScanEvidence> {
    let mu = sensor.reference_density();
    if !(mu > 0.0) {
        return Err(Error::config(format!("sensor {}: zero clutter density", sensor.sensor_id)));
    }
    let ln_mu = mu.ln();
    let nm = measurements.len();
    let mut rows = Vec::with_capacity(targets.len());
    let mut evidence = Vec::with_capacity(targets.len());
    for k in targets {
        let pd: Vec<f64> = k.states.iter().map(|x| sensor.pd_at(&x.fixed_rows::<2>(0).into_owned())).collect();
        let mean_pd: f64 = pd.iter().zip(&k.weights).map(|(p, w)| p * w).sum::<f64>().clamp(0.0, 1.0);
        let mut row = vec![(1.0 - k.existence * mean_pd).max(MIN_MISS_WEIGHT)];
        let mut log_terms = Vec::with_capacity(nm);
        let mut log_sums = Vec::with_capacity(nm);
        let mut class_posteriors = Vec::with_capacity(nm);
        for z in measurements {
            let terms: Vec<f64> = k
                .states
                .iter()
                .zip(&k.weights)
                .zip(&pd)
                .map(|((x, w), p)| {
                    if *w > 0.0 && *p > 0.0 {
                        w.ln() + p.ln() + sensor.log_likelihood(z, x)
                    } else {
                        f64::NEG_INFINITY
                    }
                })
                .collect();
            let ls = log_sum_exp(&terms);
            let mut factor = 1.0;
            if let Some(x) = z.mmsi {
                factor *= k.labels.match_factor(x, sensor.label_error, n_labels);
            }
            let mut class_post = None;
            if let (Some(c), Some(s)) = (&sensor.confusion, &z.class_scores) {
                let mut post = class_array(&k.class_dist);
                for (i, p) in post.iter_mut().enumerate() {
                    *p *= c.likelihood(i, s);
                }
                let f: f64 = post.iter().sum();
                factor *= f;
                class_post = ClassDistribution::normalized(post);
            }
            let beta = if k.existence > 0.0 && factor > 0.0 && ls > f64::NEG_INFINITY {
                (k.existence.ln() + ls + factor.ln() - ln_mu).min(600.0).exp()
            } else {
                0.0
            };
            row.push(beta);
            log_terms.push(terms);
            log_sums.push(ls);
            class_posteriors.push(class_post);
        }
        rows.push(row);
        evidence.push(TargetEvidence {
            pd,
            mean_pd,
            log_terms,
            log_sums,
            class_posteriors,
        });
    }
    Ok(ScanEvidence {
        problem: AssociationProblem::new(rows, nm)?,
        targets: evidence,
    })
}

/// Systematic resampling; returns the selected particle indices.
pub fn systematic_resample<R: Rng + ?Sized>(weights: &[f64], rng: &mut R) -> Vec<usize> {
    let n = weights.len();
    let step = 1.0 / n as f64;
    let mut u = rng.random::<f64>() * step;
    let mut out = Vec::with_capacity(n);
    let mut cum = 0.0;
    let mut i = 0;
    for w in weights.iter().enumerate() {
        cum += w.1;
        while u < cum && out.len() < n {
            out.push(w.0);
            u += step;
        }
        i = w.0;
    }
    while out.len() < n {
        out.push(i);
    }
    out
}

/// Measurement update of every target from the association marginals.
///
/// Each target's posterior is the mixture over "missed" and "generated
/// measurement m" with weights `r(1−p̄d)` and `β(m)·ν_{m→k}`; particles,
/// labels, classes and the model distribution all follow that mixture.
#[allow(clippy::too_many_arguments)]
pub fn update<R: Rng + ?Sized>(
    targets: &mut [PotentialTarget],
    measurements: &[Measurement],
    sensor: &SensorModel,
    evidence: &ScanEvidence,
    marginals: &Marginals,
    n_labels: usize,
    resample_ratio: f64,
    t: f64,
    rng: &mut R,
) {
    for (k, (target, ev)) in targets.iter_mut().zip(&evidence.targets).enumerate() {
        let beta0 = evidence.problem.beta(k, 0);
        let lam0 = target.existence * (1.0 - ev.mean_pd);
        let lams: Vec<f64> = (1..=measurements.len())
            .map(|m| evidence.problem.beta(k, m) * marginals.message(k, m))
            .collect();
        let assoc: f64 = lams.iter().sum();
        let z = beta0 + assoc;
        target.existence = ((lam0 + assoc) / z).clamp(0.0, 1.0);
        target.last_update = t;
        let total = lam0 + assoc;
        if !(total > 0.0) {
            continue;
        }

        let mut w = vec![0.0; target.weights.len()];
        if lam0 > 0.0 && ev.mean_pd < 1.0 {
            let scale = lam0 / total / (1.0 - ev.mean_pd);
            for ((wi, w0), p) in w.iter_mut().zip(&target.weights).zip(&ev.pd) {
                *wi += scale * w0 * (1.0 - p);
            }
        }
        for (m, lam) in lams.iter().enumerate() {
            if *lam <= 0.0 || ev.log_sums[m] == f64::NEG_INFINITY {
                continue;
            }
            let scale = lam / total;
            let ls = ev.log_sums[m];
            for (wi, term) in w.iter_mut().zip(&ev.log_terms[m]) {
                *wi += scale * (term - ls).exp();
            }
        }
        if !normalize_in_place(&mut w) {
            target.degenerate = true;
            continue;
        }
        target.weights = w;

        let mut label_parts = vec![(lam0, target.labels.clone())];
        let mut class_parts = vec![(lam0, class_array(&target.class_dist))];
        for (m, lam) in lams.iter().enumerate() {
            if *lam <= 0.0 {
                continue;
            }
            let meas = &measurements[m];
            label_parts.push((
                *lam,
                match meas.mmsi {
                    Some(x) => target.labels.posterior(x, sensor.label_error, n_labels),
                    None => target.labels.clone(),
                },
            ));
            match &ev.class_posteriors[m] {
                Some(c) => {
                    class_parts.push((*lam, class_array(c)));
                    if lam / z > 0.5 {
                        target.class_informed = true;
                    }
                }
                None => class_parts.push((*lam, class_array(&target.class_dist))),
            }
        }
        target.labels = LabelDist::mixture(&label_parts);
        let mut mix = [0.0; crate::category::NUM_CATEGORIES];
        for (lam, c) in &class_parts {
            for (a, b) in mix.iter_mut().zip(c) {
                *a += lam * b;
            }
        }
        if let Some(c) = ClassDistribution::normalized(mix) {
            target.class_dist = c;
        }

        let mut dm = vec![0.0; target.model_dist.len()];
        for (l, wi) in target.models.iter().zip(&target.weights) {
            dm[*l] += wi;
        }
        if normalize_in_place(&mut dm) {
            target.model_dist = dm;
        }

        if target.effective_sample_size() < resample_ratio * target.n_particles() as f64 {
            let idx = systematic_resample(&target.weights, rng);
            target.states = idx.iter().map(|&i| target.states[i]).collect();
            target.models = idx.iter().map(|&i| target.models[i]).collect();
            target.weights = uniform(idx.len());
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BirthConfig {
    /// Minimum non-target probability for a measurement to spawn a target.
    pub min_unassigned: f64,
    /// Existence probability of a new target before scaling by its
    /// non-target probability (sensors may override).
    pub existence: f64,
    /// Per-axis velocity prior standard deviation when the measurement
    /// carries no velocity (m/s).
    pub velocity_sigma_mps: f64,
    /// Mass left on "unknown" when seeding a label from an MMSI.
    pub label_delta: f64,
}

impl Default for BirthConfig {
    fn default() -> Self {
        Self {
            min_unassigned: 0.5,
            existence: 0.1,
            velocity_sigma_mps: 5.0,
            label_delta: 0.01,
        }
    }
}

/// Spawns one target for every measurement whose non-target probability
/// exceeds `cfg.min_unassigned`.
#[allow(clippy::too_many_arguments)]
pub fn birth<R: Rng + ?Sized>(
    measurements: &[Measurement],
    non_target: &[f64],
    sensor: &SensorModel,
    cfg: &BirthConfig,
    n_models: usize,
    n_particles: usize,
    next_id: &mut u64,
    rng: &mut R,
) -> Vec<PotentialTarget> {
    let r0 = sensor.birth_existence.unwrap_or(cfg.existence);
    measurements
        .iter()
        .zip(non_target)
        .filter(|(_, q)| **q > cfg.min_unassigned)
        .map(|(z, q)| {
            let states: Vec<Vector4<f64>> = (0..n_particles)
                .map(|_| {
                    let p = sensor.sample_position(z, rng);
                    let (vel, s) = match (z.velocity, sensor.velocity_sigma) {
                        (Some(v), Some(s)) => (v, s),
                        _ => (nalgebra::Vector2::zeros(), cfg.velocity_sigma_mps),
                    };
                    let dvx: f64 = rng.sample(StandardNormal);
                    let dvy: f64 = rng.sample(StandardNormal);
                    Vector4::new(p.x, p.y, vel.x + s * dvx, vel.y + s * dvy)
                })
                .collect();
            let models = (0..n_particles).map(|_| rng.random_range(0..n_models)).collect();
            let (class_dist, class_informed) = match z.class_scores {
                Some(s) => (s, true),
                None => (ClassDistribution::uniform(), false),
            };
            let id = *next_id;
            *next_id += 1;
            PotentialTarget {
                id,
                states,
                weights: uniform(n_particles),
                models,
                existence: (r0 * q).clamp(0.0, 1.0),
                model_dist: uniform(n_models),
                labels: match z.mmsi {
                    Some(x) => LabelDist::seeded(x, cfg.label_delta),
                    None => LabelDist::unknown(),
                },
                class_dist,
                class_informed,
                last_update: z.t,
                degenerate: false,
            }
        })
        .collect()
}

/// One OU model per graph edge (long-run velocity = the edge's mean leg
/// velocity) plus a trailing NCV fallback.
///
/// Each model keeps itself with probability `stickiness`; the rest is spread
/// evenly over the fallback and the edges sharing a node with it. The
/// fallback moves evenly to any edge.
pub fn route_model_set(graph: &TrafficGraph, theta: f64, sigma: f64, fallback_q: f64, stickiness: f64) -> Result<ModelSet> {
    if graph.edges.is_empty() {
        return Err(Error::validation("route models need a graph with at least one edge"));
    }
    if !(0.0..=1.0).contains(&stickiness) {
        return Err(Error::validation("stickiness must lie in [0, 1]"));
    }
    let ne = graph.edges.len();
    let mut models = graph
        .edges
        .iter()
        .map(|e| OuParams::isotropic(e.stats.mean_velocity(), theta, sigma).map(DynamicModel::Ou))
        .collect::<Result<Vec<_>>>()?;
    models.push(DynamicModel::Ncv { q: fallback_q });
    let n = ne + 1;
    let mut tm = DMatrix::zeros(n, n);
    for (i, a) in graph.edges.iter().enumerate() {
        let mut targets: Vec<usize> = graph
            .edges
            .iter()
            .enumerate()
            .filter(|(j, b)| *j != i && (a.from == b.from || a.from == b.to || a.to == b.from || a.to == b.to))
            .map(|(j, _)| j)
            .collect();
        targets.push(ne);
        tm[(i, i)] = stickiness;
        for j in &targets {
            tm[(i, *j)] += (1.0 - stickiness) / targets.len() as f64;
        }
    }
    tm[(ne, ne)] = stickiness;
    for j in 0..ne {
        tm[(ne, j)] = (1.0 - stickiness) / ne as f64;
    }
    ModelSet::new(models, tm)
}
