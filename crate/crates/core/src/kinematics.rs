//! Planar position/velocity states and their exact discrete-time Gaussian
//! transitions under the Ornstein-Uhlenbeck (OU) and nearly-constant-velocity
//! (NCV) motion models.
//!
//! The OU model drives each velocity axis as `dv = θ(v̄ − v)dt + σ dW` with
//! `dp = v dt`. Axes are independent, so every transition is a pair of 2×2
//! blocks embedded in the 4×4 state covariance. State vectors are ordered
//! `[px, py, vx, vy]`.

use nalgebra::{DMatrix, Matrix4, Vector2, Vector4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Below this value of `θ·dt` the OU coefficients are evaluated by series.
const SERIES_CUTOFF: f64 = 1e-2;

/// Position (m, local frame), velocity (m/s) and time (s).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KinematicState {
    pub px: f64,
    pub py: f64,
    pub vx: f64,
    pub vy: f64,
    pub t: f64,
}

impl KinematicState {
    pub fn new(px: f64, py: f64, vx: f64, vy: f64, t: f64) -> Result<Self> {
        let s = Self { px, py, vx, vy, t };
        if s.as_vector().iter().all(|v| v.is_finite()) && t.is_finite() {
            Ok(s)
        } else {
            Err(Error::validation("kinematic state has non-finite components"))
        }
    }

    pub fn from_vector(v: &Vector4<f64>, t: f64) -> Self {
        Self {
            px: v[0],
            py: v[1],
            vx: v[2],
            vy: v[3],
            t,
        }
    }

    pub fn as_vector(&self) -> Vector4<f64> {
        Vector4::new(self.px, self.py, self.vx, self.vy)
    }

    pub fn position(&self) -> Vector2<f64> {
        Vector2::new(self.px, self.py)
    }

    pub fn velocity(&self) -> Vector2<f64> {
        Vector2::new(self.vx, self.vy)
    }
}

/// Mean-reverting velocity model with per-axis reversion rate and noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OuParams {
    /// Long-run mean velocity, m/s.
    pub v_mean: Vector2<f64>,
    /// Reversion rate per axis, 1/s.
    pub theta: Vector2<f64>,
    /// Noise intensity per axis, m/s/√s.
    pub sigma: Vector2<f64>,
}

impl OuParams {
    pub fn new(v_mean: Vector2<f64>, theta: Vector2<f64>, sigma: Vector2<f64>) -> Result<Self> {
        if !(theta.iter().all(|&t| t > 0.0 && t.is_finite())) {
            return Err(Error::validation("OU theta must be positive and finite"));
        }
        if !(sigma.iter().all(|&s| s >= 0.0 && s.is_finite())) {
            return Err(Error::validation("OU sigma must be nonnegative and finite"));
        }
        if !v_mean.iter().all(|v| v.is_finite()) {
            return Err(Error::validation("OU mean velocity must be finite"));
        }
        Ok(Self {
            v_mean,
            theta,
            sigma,
        })
    }

    /// Same reversion rate and noise on both axes.
    pub fn isotropic(v_mean: Vector2<f64>, theta: f64, sigma: f64) -> Result<Self> {
        Self::new(v_mean, Vector2::repeat(theta), Vector2::repeat(sigma))
    }

    /// Stationary per-axis velocity variance `σ²/(2θ)`.
    pub fn stationary_velocity_variance(&self) -> Vector2<f64> {
        self.sigma.zip_map(&self.theta, |s, t| s * s / (2.0 * t))
    }
}

/// A motion model selectable by the tracker's dynamic-model index.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DynamicModel {
    /// White-noise acceleration with intensity `q` (m²/s³).
    Ncv { q: f64 },
    Ou(OuParams),
}

impl DynamicModel {
    pub fn transition(&self, dt: f64) -> Result<LinearTransition> {
        check_dt(dt)?;
        Ok(match self {
            DynamicModel::Ncv { q } => {
                if !(*q >= 0.0 && q.is_finite()) {
                    return Err(Error::validation("NCV noise intensity must be >= 0"));
                }
                let axis = AxisTransition::ncv(*q, dt);
                LinearTransition::from_axes(&axis, &axis)
            }
            DynamicModel::Ou(p) => LinearTransition::from_axes(
                &AxisTransition::ou(p.v_mean.x, p.theta.x, p.sigma.x, dt),
                &AxisTransition::ou(p.v_mean.y, p.theta.y, p.sigma.y, dt),
            ),
        })
    }
}

/// An ordered menu of motion models with a Markov switching matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSet {
    models: Vec<DynamicModel>,
    transition: DMatrix<f64>,
}

impl ModelSet {
    pub fn new(models: Vec<DynamicModel>, transition: DMatrix<f64>) -> Result<Self> {
        if models.is_empty() {
            return Err(Error::validation("model set needs at least one model"));
        }
        let n = models.len();
        if transition.nrows() != n || transition.ncols() != n {
            return Err(Error::validation(format!(
                "model transition matrix must be {n}x{n}"
            )));
        }
        for (i, row) in transition.row_iter().enumerate() {
            if row.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) {
                return Err(Error::validation(format!("row {i} has invalid entries")));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > 1e-12 {
                return Err(Error::validation(format!("row {i} sums to {sum}, not 1")));
            }
        }
        Ok(Self { models, transition })
    }

    pub fn single(model: DynamicModel) -> Self {
        Self {
            models: vec![model],
            transition: DMatrix::identity(1, 1),
        }
    }

    pub fn models(&self) -> &[DynamicModel] {
        &self.models
    }

    pub fn transition_matrix(&self) -> &DMatrix<f64> {
        &self.transition
    }

    pub fn len(&self) -> usize {
        self.models.len()
    }

    pub fn is_empty(&self) -> bool {
        self.models.is_empty()
    }

    /// Pushes a model-index distribution one step through the Markov chain.
    pub fn propagate_dist(&self, dist: &[f64]) -> Vec<f64> {
        let n = self.models.len();
        let mut out = vec![0.0; n];
        for (i, &pi) in dist.iter().enumerate() {
            for (j, o) in out.iter_mut().enumerate() {
                *o += pi * self.transition[(i, j)];
            }
        }
        out
    }
}

/// Mean and covariance of a 4-D Gaussian over `[px, py, vx, vy]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Gaussian4 {
    pub mean: Vector4<f64>,
    pub cov: Matrix4<f64>,
}

/// `x' = F x + offset + w`, `w ~ N(0, Q)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearTransition {
    pub f: Matrix4<f64>,
    pub offset: Vector4<f64>,
    pub q: Matrix4<f64>,
    /// Per-axis Cholesky factors `(l11, l21, l22)` of the (p, v) noise block.
    chol: [(f64, f64, f64); 2],
}

impl LinearTransition {
    fn from_axes(x: &AxisTransition, y: &AxisTransition) -> Self {
        let mut f = Matrix4::identity();
        let mut offset = Vector4::zeros();
        let mut q = Matrix4::zeros();
        for (axis, a) in [x, y].into_iter().enumerate() {
            let (p, v) = (axis, axis + 2);
            f[(p, v)] = a.p_from_v;
            f[(v, v)] = a.v_from_v;
            offset[p] = a.offset_p;
            offset[v] = a.offset_v;
            q[(p, p)] = a.var_p;
            q[(p, v)] = a.cov_pv;
            q[(v, p)] = a.cov_pv;
            q[(v, v)] = a.var_v;
        }
        Self {
            f,
            offset,
            q,
            chol: [x.cholesky(), y.cholesky()],
        }
    }

    pub fn mean_of(&self, x: &Vector4<f64>) -> Vector4<f64> {
        self.f * x + self.offset
    }

    pub fn apply(&self, x: &Vector4<f64>) -> Gaussian4 {
        Gaussian4 {
            mean: self.mean_of(x),
            cov: self.q,
        }
    }

    pub fn propagate(&self, g: &Gaussian4) -> Gaussian4 {
        Gaussian4 {
            mean: self.mean_of(&g.mean),
            cov: self.f * g.cov * self.f.transpose() + self.q,
        }
    }

    /// Draws `x'` given `x`.
    pub fn sample<R: Rng + ?Sized>(&self, x: &Vector4<f64>, rng: &mut R) -> Vector4<f64> {
        let mut out = self.mean_of(x);
        for (axis, &(l11, l21, l22)) in self.chol.iter().enumerate() {
            let z1: f64 = rng.sample(StandardNormal);
            let z2: f64 = rng.sample(StandardNormal);
            out[axis] += l11 * z1;
            out[axis + 2] += l21 * z1 + l22 * z2;
        }
        out
    }
}

/// Scalar-axis transition coefficients.
#[derive(Debug, Clone, Copy)]
struct AxisTransition {
    p_from_v: f64,
    v_from_v: f64,
    offset_p: f64,
    offset_v: f64,
    var_p: f64,
    cov_pv: f64,
    var_v: f64,
}

impl AxisTransition {
    fn ou(v_mean: f64, theta: f64, sigma: f64, dt: f64) -> Self {
        let x = theta * dt;
        let a = (-x).exp();
        let s2 = sigma * sigma;
        let p1 = phi1(x);
        Self {
            p_from_v: dt * p1,
            v_from_v: a,
            offset_p: v_mean * dt * one_minus_phi1(x),
            offset_v: v_mean * (-(-x).exp_m1()),
            var_p: s2 * dt.powi(3) * position_variance_factor(x),
            cov_pv: s2 * dt * dt * p1 * p1 / 2.0,
            var_v: s2 * dt * phi1(2.0 * x),
        }
    }

    fn ncv(q: f64, dt: f64) -> Self {
        Self {
            p_from_v: dt,
            v_from_v: 1.0,
            offset_p: 0.0,
            offset_v: 0.0,
            var_p: q * dt.powi(3) / 3.0,
            cov_pv: q * dt * dt / 2.0,
            var_v: q * dt,
        }
    }

    fn cholesky(&self) -> (f64, f64, f64) {
        let l11 = self.var_p.max(0.0).sqrt();
        let l21 = if l11 > 0.0 { self.cov_pv / l11 } else { 0.0 };
        let l22 = (self.var_v - l21 * l21).max(0.0).sqrt();
        (l11, l21, l22)
    }
}

/// `(1 − e^{−x})/x`, with the limit 1 at 0.
fn phi1(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        -(-x).exp_m1() / x
    }
}

/// `1 − (1 − e^{−x})/x = Σ_{n≥2} (−1)^n x^{n−1}/n!`.
fn one_minus_phi1(x: f64) -> f64 {
    if x < SERIES_CUTOFF {
        let mut term = x / 2.0;
        let mut sum = term;
        for n in 3..16 {
            term *= -x / n as f64;
            sum += term;
        }
        sum
    } else {
        1.0 - phi1(x)
    }
}

/// `(x − 2(1−e^{−x}) + (1−e^{−2x})/2) / x³`, the normalized OU position
/// variance `Var(p')/(σ² dt³)`.
fn position_variance_factor(x: f64) -> f64 {
    if x < SERIES_CUTOFF {
        // Σ_{n≥3} (−1)^n (2 − 2^{n−1}) x^{n−3} / n!
        let mut sum = 0.0;
        let mut xpow = 1.0;
        let mut fact = 6.0;
        for n in 3..16u32 {
            if n > 3 {
                xpow *= x;
                fact *= n as f64;
            }
            let sign = if n % 2 == 0 { 1.0 } else { -1.0 };
            sum += sign * (2.0 - 2f64.powi(n as i32 - 1)) * xpow / fact;
        }
        sum
    } else {
        let e1 = -(-x).exp_m1();
        let e2 = -(-2.0 * x).exp_m1();
        (x - 2.0 * e1 + e2 / 2.0) / (x * x * x)
    }
}

fn check_dt(dt: f64) -> Result<()> {
    if dt > 0.0 && dt.is_finite() {
        Ok(())
    } else {
        Err(Error::validation(format!("time step must be positive, got {dt}")))
    }
}

/// Exact OU transition moments from `s` over `dt`.
pub fn ou_transition(s: &KinematicState, p: &OuParams, dt: f64) -> Result<Gaussian4> {
    Ok(DynamicModel::Ou(*p).transition(dt)?.apply(&s.as_vector()))
}

/// Exact NCV transition moments from `s` over `dt`.
pub fn ncv_transition(s: &KinematicState, q: f64, dt: f64) -> Result<Gaussian4> {
    Ok(DynamicModel::Ncv { q }.transition(dt)?.apply(&s.as_vector()))
}

/// Draws one OU successor state; deterministic for a given seed.
pub fn ou_sample(s: &KinematicState, p: &OuParams, dt: f64, seed: u64) -> Result<KinematicState> {
    let tr = DynamicModel::Ou(*p).transition(dt)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(KinematicState::from_vector(
        &tr.sample(&s.as_vector(), &mut rng),
        s.t + dt,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn state(px: f64, py: f64, vx: f64, vy: f64) -> KinematicState {
        KinematicState::new(px, py, vx, vy, 0.0).unwrap()
    }

    fn iso(v: (f64, f64), theta: f64, sigma: f64) -> OuParams {
        OuParams::isotropic(Vector2::new(v.0, v.1), theta, sigma).unwrap()
    }

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs().max(1e-300)
    }

    #[test]
    fn ncv_deterministic_when_noise_free() {
        let g = ncv_transition(&state(0.0, 0.0, 1.0, 0.0), 0.0, 1.0).unwrap();
        assert_eq!(g.mean, Vector4::new(1.0, 0.0, 1.0, 0.0));
        assert_eq!(g.cov, Matrix4::zeros());
    }

    #[test]
    fn ncv_closed_form_moments() {
        let g = ncv_transition(&state(0.0, 0.0, 0.0, 0.0), 1.0, 2.0).unwrap();
        assert!((g.cov[(0, 0)] - 8.0 / 3.0).abs() < 1e-12);
        assert!((g.cov[(0, 2)] - 2.0).abs() < 1e-12);
        assert!((g.cov[(2, 2)] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_nonpositive_dt() {
        let s = state(0.0, 0.0, 0.0, 0.0);
        assert!(ou_transition(&s, &iso((0.0, 0.0), 1.0, 1.0), 0.0).is_err());
        assert!(ncv_transition(&s, 1.0, -1.0).is_err());
        assert!(OuParams::isotropic(Vector2::zeros(), 0.0, 1.0).is_err());
        assert!(OuParams::isotropic(Vector2::zeros(), 1.0, -1.0).is_err());
    }

    #[test]
    fn fast_reversion_limit() {
        let p = iso((3.0, -2.0), 1e6, 0.5);
        let g = ou_transition(&state(0.0, 0.0, 10.0, 10.0), &p, 60.0).unwrap();
        assert!((g.mean[2] - 3.0).abs() < 1e-9);
        assert!((g.mean[3] + 2.0).abs() < 1e-9);
        assert!(g.cov[(2, 2)] < 1e-6);
    }

    #[test]
    fn velocity_variance_value() {
        let p = iso((0.0, 0.0), 1e-4, 0.1);
        let g = ou_transition(&state(0.0, 0.0, 0.0, 0.0), &p, 600.0).unwrap();
        let expected = 0.01 * (1.0 - (-0.12f64).exp()) / (2.0 * 1e-4);
        assert!(rel(g.cov[(2, 2)], expected) < 1e-12);
        assert!((g.cov[(2, 2)] - 5.6540).abs() < 1e-4);
    }

    #[test]
    fn closed_form_matches_written_formulas() {
        // Direct evaluation of the textbook expressions at moderate θ·dt.
        let (theta, sigma, dt, vbar, v0, p0) = (0.003, 0.2, 400.0, 4.0, 1.0, 10.0);
        let p = iso((vbar, 0.0), theta, sigma);
        let g = ou_transition(&state(p0, 0.0, v0, 0.0), &p, dt).unwrap();
        let a = (-theta * dt).exp();
        let s2 = sigma * sigma;
        assert!(rel(g.mean[2], vbar + a * (v0 - vbar)) < 1e-12);
        assert!(rel(g.mean[0], p0 + vbar * dt + (1.0 - a) / theta * (v0 - vbar)) < 1e-12);
        assert!(rel(g.cov[(2, 2)], s2 * (1.0 - a * a) / (2.0 * theta)) < 1e-12);
        assert!(rel(g.cov[(0, 2)], s2 * (1.0 - a).powi(2) / (2.0 * theta * theta)) < 1e-12);
        let var_p = s2 / (theta * theta)
            * (dt - 2.0 * (1.0 - a) / theta + (1.0 - a * a) / (2.0 * theta));
        assert!(rel(g.cov[(0, 0)], var_p) < 1e-9);
    }

    #[test]
    fn near_zero_theta_matches_ncv() {
        let sigma = 0.3;
        let s = state(5.0, -3.0, 2.0, 1.0);
        for theta in [1e-8, 1e-9] {
            let ou = ou_transition(&s, &iso((0.0, 0.0), theta, sigma), 600.0).unwrap();
            let ncv = ncv_transition(&s, sigma * sigma, 600.0).unwrap();
            for i in 0..4 {
                assert!(rel(ou.mean[i], ncv.mean[i]) < 1e-5);
                for j in 0..4 {
                    if ncv.cov[(i, j)] != 0.0 {
                        assert!(rel(ou.cov[(i, j)], ncv.cov[(i, j)]) < 1e-5);
                    }
                }
            }
        }
    }

    #[test]
    fn series_branches_are_continuous() {
        for x in [SERIES_CUTOFF * 0.999, SERIES_CUTOFF * 1.001] {
            let e1 = -(-x).exp_m1();
            let e2 = -(-2.0 * x).exp_m1();
            let closed = (x - 2.0 * e1 + e2 / 2.0) / (x * x * x);
            assert!(rel(position_variance_factor(x), closed) < 1e-9);
            assert!(rel(one_minus_phi1(x), 1.0 - e1 / x) < 1e-9);
        }
        assert!(rel(position_variance_factor(1e-12), 1.0 / 3.0) < 1e-10);
        assert!(rel(one_minus_phi1(1e-12), 0.5e-12) < 1e-6);
    }

    #[test]
    fn sampling_is_seeded() {
        let p = iso((1.0, 2.0), 1e-3, 0.05);
        let s = state(0.0, 0.0, 0.0, 0.0);
        assert_eq!(
            ou_sample(&s, &p, 100.0, 42).unwrap(),
            ou_sample(&s, &p, 100.0, 42).unwrap()
        );
        assert_ne!(
            ou_sample(&s, &p, 100.0, 42).unwrap(),
            ou_sample(&s, &p, 100.0, 43).unwrap()
        );
    }

    #[test]
    fn noise_free_sample_is_mean() {
        let p = iso((1.0, 2.0), 1e-3, 0.0);
        let s = state(3.0, 4.0, 0.5, -0.5);
        let g = ou_transition(&s, &p, 250.0).unwrap();
        let x = ou_sample(&s, &p, 250.0, 9).unwrap();
        assert_eq!(x.as_vector(), g.mean);
        assert_eq!(x.t, 250.0);
    }

    #[test]
    fn model_set_validation() {
        let m = DynamicModel::Ncv { q: 1.0 };
        assert!(ModelSet::new(vec![], DMatrix::zeros(0, 0)).is_err());
        assert!(ModelSet::new(vec![m, m], DMatrix::from_element(2, 2, 0.6)).is_err());
        let set = ModelSet::new(vec![m, m], DMatrix::from_row_slice(2, 2, &[0.9, 0.1, 0.2, 0.8]))
            .unwrap();
        let d = set.propagate_dist(&[1.0, 0.0]);
        assert!((d[0] - 0.9).abs() < 1e-15 && (d[1] - 0.1).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn covariance_is_psd(
            theta in 1e-7f64..10.0,
            sigma in 0.0f64..5.0,
            dt in 1e-3f64..1e5,
        ) {
            let p = iso((1.0, -1.0), theta, sigma);
            let g = ou_transition(&state(0.0, 0.0, 0.0, 0.0), &p, dt).unwrap();
            prop_assert_eq!(g.cov, g.cov.transpose());
            let eig = g.cov.symmetric_eigen().eigenvalues;
            let scale = g.cov.amax().max(1e-300);
            prop_assert!(eig.min() >= -1e-12 * scale.max(1.0));
        }

        #[test]
        fn chapman_kolmogorov(
            theta in 1e-6f64..1.0,
            sigma in 0.0f64..2.0,
            dt in 1.0f64..5000.0,
            vx in -10.0f64..10.0,
            vbar in -10.0f64..10.0,
        ) {
            let p = OuParams::new(Vector2::new(vbar, -vbar), Vector2::new(theta, 2.0 * theta), Vector2::new(sigma, sigma / 2.0)).unwrap();
            let x0 = Gaussian4 { mean: Vector4::new(1.0, 2.0, vx, -vx), cov: Matrix4::zeros() };
            let half = DynamicModel::Ou(p).transition(dt).unwrap();
            let full = DynamicModel::Ou(p).transition(2.0 * dt).unwrap();
            let two = half.propagate(&half.propagate(&x0));
            let one = full.propagate(&x0);
            for i in 0..4 {
                let scale = one.mean[i].abs().max(1.0);
                prop_assert!((two.mean[i] - one.mean[i]).abs() <= 1e-9 * scale);
                for j in 0..4 {
                    let scale = one.cov[(i, i)].abs().max(one.cov[(j, j)].abs()).max(1e-300);
                    prop_assert!((two.cov[(i, j)] - one.cov[(i, j)]).abs() <= 1e-9 * scale);
                }
            }
        }
    }
}
