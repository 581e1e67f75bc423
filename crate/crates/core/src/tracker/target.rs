use std::collections::BTreeMap;

use nalgebra::{Vector2, Vector4};

use crate::category::{ClassDistribution, VesselCategory, NUM_CATEGORIES};
use crate::error::Result;
use crate::geo::LocalFrame;
use crate::io::{Mmsi, TrackPoint};

const NORM_TOL: f64 = 1e-9;

/// Distribution over MMSI labels plus an "unknown" outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelDist {
    known: BTreeMap<Mmsi, f64>,
    unknown: f64,
}

impl Default for LabelDist {
    fn default() -> Self {
        Self::unknown()
    }
}

impl LabelDist {
    pub fn unknown() -> Self {
        Self {
            known: BTreeMap::new(),
            unknown: 1.0,
        }
    }

    /// `1 − δ` on `mmsi`, `δ` on unknown.
    pub fn seeded(mmsi: Mmsi, delta: f64) -> Self {
        let mut known = BTreeMap::new();
        known.insert(mmsi, 1.0 - delta);
        Self { known, unknown: delta }
    }

    pub fn prob(&self, mmsi: Mmsi) -> f64 {
        self.known.get(&mmsi).copied().unwrap_or(0.0)
    }

    pub fn unknown_prob(&self) -> f64 {
        self.unknown
    }

    pub fn iter(&self) -> impl Iterator<Item = (Mmsi, f64)> + '_ {
        self.known.iter().map(|(&m, &p)| (m, p))
    }

    pub fn total(&self) -> f64 {
        self.unknown + self.known.values().sum::<f64>()
    }

    /// Most probable outcome; `None` when unknown wins.
    pub fn map_label(&self) -> Option<Mmsi> {
        let best = self
            .known
            .iter()
            .max_by(|a, b| a.1.total_cmp(b.1).then(b.0.cmp(a.0)))?;
        (*best.1 > self.unknown).then_some(*best.0)
    }

    /// `p(X | label)` for an observed MMSI `X`, mislabel probability `eps` and
    /// `n_labels` known MMSIs. Unknown is treated as uniform over the known
    /// labels, which gives `1/L`.
    pub fn match_factor(&self, observed: Mmsi, eps: f64, n_labels: usize) -> f64 {
        let l = n_labels.max(1) as f64;
        let other = eps / (n_labels.saturating_sub(1).max(1)) as f64;
        let p_x = self.prob(observed);
        let p_other: f64 = self.known.iter().filter(|(m, _)| **m != observed).map(|(_, p)| p).sum();
        p_x * (1.0 - eps) + p_other * other + self.unknown / l
    }

    /// Posterior after observing `observed`.
    pub fn posterior(&self, observed: Mmsi, eps: f64, n_labels: usize) -> Self {
        let l = n_labels.max(1) as f64;
        let other = eps / (n_labels.saturating_sub(1).max(1)) as f64;
        let mut known: BTreeMap<Mmsi, f64> = self
            .known
            .iter()
            .map(|(&m, &p)| (m, if m == observed { p * (1.0 - eps) } else { p * other }))
            .collect();
        // unknown splits into "it is X" and "it is some other label"
        *known.entry(observed).or_insert(0.0) += self.unknown * (1.0 - eps) / l;
        let unknown = self.unknown * eps / l;
        let mut out = Self { known, unknown };
        out.normalize();
        out
    }

    /// Convex combination `Σ w_i · d_i` (weights need not be normalized).
    pub fn mixture(parts: &[(f64, LabelDist)]) -> Self {
        let mut known = BTreeMap::new();
        let mut unknown = 0.0;
        for (w, d) in parts {
            unknown += w * d.unknown;
            for (m, p) in &d.known {
                *known.entry(*m).or_insert(0.0) += w * p;
            }
        }
        let mut out = Self { known, unknown };
        out.normalize();
        out
    }

    fn normalize(&mut self) {
        let s = self.total();
        if !(s > 0.0) || !s.is_finite() {
            *self = Self::unknown();
            return;
        }
        self.unknown /= s;
        self.known.retain(|_, p| {
            *p /= s;
            *p > 1e-15
        });
    }
}

/// A particle-based belief over one possibly existing target.
#[derive(Debug, Clone, PartialEq)]
pub struct PotentialTarget {
    pub id: u64,
    /// Particle states `[px, py, vx, vy]` in the local frame.
    pub states: Vec<Vector4<f64>>,
    pub weights: Vec<f64>,
    /// Model index each particle was last propagated with.
    pub models: Vec<usize>,
    pub existence: f64,
    pub model_dist: Vec<f64>,
    pub labels: LabelDist,
    pub class_dist: ClassDistribution,
    /// Whether any class evidence has been fused.
    pub class_informed: bool,
    pub last_update: f64,
    /// Set when all particle weights underflowed; the target is pruned.
    pub degenerate: bool,
}

impl PotentialTarget {
    pub fn n_particles(&self) -> usize {
        self.states.len()
    }

    pub fn mean(&self) -> Vector4<f64> {
        self.states
            .iter()
            .zip(&self.weights)
            .map(|(x, w)| x * *w)
            .sum()
    }

    pub fn position(&self) -> Vector2<f64> {
        let m = self.mean();
        Vector2::new(m[0], m[1])
    }

    pub fn velocity(&self) -> Vector2<f64> {
        let m = self.mean();
        Vector2::new(m[2], m[3])
    }

    pub fn effective_sample_size(&self) -> f64 {
        1.0 / self.weights.iter().map(|w| w * w).sum::<f64>()
    }

    /// Checks the normalization invariants.
    pub fn is_consistent(&self) -> bool {
        let sum = |v: &[f64]| v.iter().sum::<f64>();
        (sum(&self.weights) - 1.0).abs() <= NORM_TOL
            && self.weights.iter().all(|w| *w >= 0.0)
            && (0.0..=1.0).contains(&self.existence)
            && (sum(&self.model_dist) - 1.0).abs() <= NORM_TOL
            && (self.labels.total() - 1.0).abs() <= NORM_TOL
            && (self.class_dist.probs().iter().sum::<f64>() - 1.0).abs() <= NORM_TOL
            && self.states.len() == self.weights.len()
            && self.models.len() == self.weights.len()
    }
}

/// A reported track.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackEstimate {
    pub id: u64,
    pub t: f64,
    pub mmsi: Option<Mmsi>,
    pub pos: Vector2<f64>,
    pub vel: Vector2<f64>,
    pub class: Option<VesselCategory>,
    pub existence: f64,
}

impl TrackEstimate {
    /// Output record with the position mapped back to lat/lon.
    pub fn to_point(&self, frame: &LocalFrame) -> Result<TrackPoint> {
        Ok(TrackPoint {
            t: self.t,
            track_id: self.id,
            mmsi: self.mmsi,
            pos: frame.from_local(&self.pos)?,
            vel: self.vel,
            class: self.class,
            existence: self.existence,
        })
    }
}

/// Estimates for every target whose existence reaches `r_detect`.
pub fn estimate(targets: &[PotentialTarget], r_detect: f64, t: f64) -> Vec<TrackEstimate> {
    targets
        .iter()
        .filter(|k| k.existence >= r_detect && !k.degenerate)
        .map(|k| {
            let m = k.mean();
            TrackEstimate {
                id: k.id,
                t,
                mmsi: k.labels.map_label(),
                pos: Vector2::new(m[0], m[1]),
                vel: Vector2::new(m[2], m[3]),
                class: k.class_informed.then(|| k.class_dist.argmax()),
                existence: k.existence,
            }
        })
        .collect()
}

/// Drops targets with existence below `r_prune` and degenerate ones.
pub fn prune(targets: Vec<PotentialTarget>, r_prune: f64) -> Vec<PotentialTarget> {
    targets
        .into_iter()
        .filter(|k| k.existence >= r_prune && !k.degenerate)
        .collect()
}

pub(crate) fn uniform(n: usize) -> Vec<f64> {
    vec![1.0 / n as f64; n]
}

pub(crate) fn normalize_in_place(v: &mut [f64]) -> bool {
    let s: f64 = v.iter().sum();
    if !(s > 0.0) || !s.is_finite() {
        return false;
    }
    v.iter_mut().for_each(|x| *x /= s);
    true
}

pub(crate) fn class_array(c: &ClassDistribution) -> [f64; NUM_CATEGORIES] {
    *c.probs()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(v: u64) -> Mmsi {
        Mmsi::new(v).unwrap()
    }

    #[test]
    fn exact_label_collapses() {
        let d = LabelDist::unknown().posterior(m(1), 0.0, 3);
        assert_eq!(d.prob(m(1)), 1.0);
        assert_eq!(d.unknown_prob(), 0.0);
        assert_eq!(d.map_label(), Some(m(1)));
    }

    #[test]
    fn posterior_is_bayes_rule() {
        let mut d = LabelDist::seeded(m(1), 0.2);
        d = LabelDist::mixture(&[(0.5, d), (0.5, LabelDist::seeded(m(2), 0.0))]);
        // p(1)=0.4, p(2)=0.5, unknown=0.1, L=4, eps=0.1, observe 2
        let (eps, l) = (0.1, 4usize);
        let z = d.match_factor(m(2), eps, l);
        let expected_z = 0.5 * 0.9 + 0.4 * 0.1 / 3.0 + 0.1 / 4.0;
        assert!((z - expected_z).abs() < 1e-15);
        let post = d.posterior(m(2), eps, l);
        assert!((post.prob(m(2)) - (0.5 * 0.9 + 0.1 * 0.9 / 4.0) / expected_z).abs() < 1e-12);
        assert!((post.prob(m(1)) - (0.4 * 0.1 / 3.0) / expected_z).abs() < 1e-12);
        assert!((post.total() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn estimate_and_prune_thresholds() {
        let base = PotentialTarget {
            id: 0,
            states: vec![Vector4::new(1.0, 2.0, 3.0, 4.0)],
            weights: vec![1.0],
            models: vec![0],
            existence: 0.99,
            model_dist: vec![1.0],
            labels: LabelDist::unknown(),
            class_dist: ClassDistribution::uniform(),
            class_informed: false,
            last_update: 0.0,
            degenerate: false,
        };
        let faint = PotentialTarget {
            id: 1,
            existence: 1e-4,
            ..base.clone()
        };
        let est = estimate(&[base.clone(), faint.clone()], 0.5, 10.0);
        assert_eq!(est.len(), 1);
        assert_eq!(est[0].id, 0);
        assert_eq!(est[0].mmsi, None);
        assert_eq!(est[0].class, None);
        let kept = prune(vec![base, faint], 1e-3);
        assert_eq!(kept.len(), 1);
    }
}
