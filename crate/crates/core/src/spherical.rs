//! Angular-momentum algebra on the sphere of radius sqrt(M+N): the squared
//! generator sums for densities that are rotation-invariant in the reservoir
//! block, the direction-averaged outer term, and the pointwise inequality
//! that drives the spherical information bound.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{KacError, Result};
use crate::gaussian::standard_normal;
use crate::model::{CollisionMeasure, KacParams, RotationHistory};

/// Relative tolerance for on-sphere point validation.
const SPHERE_TOL: f64 = 1e-9;

/// A positive test density F(v, w) = phi(v, |w|^2), rotation-invariant in
/// the reservoir block by construction, with analytic derivatives.
/// The radial factor of the reservoir gradient is ell = 2 dphi/du, so that
/// grad_w F = ell w.
pub trait RadialTestFunction {
    fn value(&self, v: &DVector<f64>, w2: f64) -> f64;
    fn grad_v(&self, v: &DVector<f64>, w2: f64) -> DVector<f64>;
    fn dphi_du(&self, v: &DVector<f64>, w2: f64) -> f64;

    fn ell(&self, v: &DVector<f64>, w2: f64) -> f64 {
        2.0 * self.dphi_du(v, w2)
    }
}

/// phi(v, u) = exp(a . v + b u + v^T S v / 2) with S symmetric.
#[derive(Clone, Debug)]
pub struct ExpQuadratic {
    pub a: DVector<f64>,
    pub b: f64,
    pub s: DMatrix<f64>,
}

impl ExpQuadratic {
    pub fn new(a: DVector<f64>, b: f64, s: DMatrix<f64>) -> Result<Self> {
        let m = a.len();
        if s.nrows() != m || s.ncols() != m {
            return Err(KacError::LengthMismatch(format!(
                "quadratic form is {}x{}, linear term has length {m}",
                s.nrows(),
                s.ncols()
            )));
        }
        if (&s - s.transpose()).amax() > 1e-12 {
            return Err(KacError::InvalidParams("quadratic form must be symmetric".into()));
        }
        Ok(ExpQuadratic { a, b, s })
    }

    /// Random small-coefficient instance; positive everywhere.
    pub fn random<R: Rng>(m: usize, scale: f64, rng: &mut R) -> Self {
        let a = DVector::from_fn(m, |_, _| scale * (2.0 * rng.gen::<f64>() - 1.0));
        let b = scale * (2.0 * rng.gen::<f64>() - 1.0);
        let raw = DMatrix::from_fn(m, m, |_, _| scale * (2.0 * rng.gen::<f64>() - 1.0));
        let s = (&raw + raw.transpose()) * 0.5;
        ExpQuadratic { a, b, s }
    }
}

impl RadialTestFunction for ExpQuadratic {
    fn value(&self, v: &DVector<f64>, w2: f64) -> f64 {
        (self.a.dot(v) + self.b * w2 + 0.5 * (&self.s * v).dot(v)).exp()
    }

    fn grad_v(&self, v: &DVector<f64>, w2: f64) -> DVector<f64> {
        (&self.a + &self.s * v) * self.value(v, w2)
    }

    fn dphi_du(&self, v: &DVector<f64>, w2: f64) -> f64 {
        self.b * self.value(v, w2)
    }
}

fn check_on_sphere(v: &DVector<f64>, w: &DVector<f64>) -> Result<()> {
    let d = (v.len() + w.len()) as f64;
    let r2 = v.norm_squared() + w.norm_squared();
    if (r2 - d).abs() > SPHERE_TOL * d {
        return Err(KacError::OffSphere { got: r2, expected: d });
    }
    Ok(())
}

/// Squared angular-momentum sums (total, internal, external) of F at (v, w),
/// evaluated directly from the generator families: pairs touching the
/// system block are internal, reservoir-reservoir pairs are external.
/// For reservoir-rotation-invariant F the external part vanishes and
/// total = |v|^2 |grad_v F|^2 - (v . grad_v F)^2 + |w|^2 |ell v - grad_v F|^2.
pub fn angular_momentum_sq<F: RadialTestFunction>(
    f: &F,
    v: &DVector<f64>,
    w: &DVector<f64>,
) -> Result<(f64, f64, f64)> {
    check_on_sphere(v, w)?;
    let w2 = w.norm_squared();
    let gv = f.grad_v(v, w2);
    let ell = f.ell(v, w2);
    let m = v.len();
    let n = w.len();
    // full coordinate vector x and full gradient g
    let mut internal = 0.0;
    // system-system generators
    for i in 0..m {
        for j in (i + 1)..m {
            internal += (v[i] * gv[j] - v[j] * gv[i]).powi(2);
        }
    }
    // cross generators: gradient in the reservoir block is ell * w
    for i in 0..m {
        for j in 0..n {
            internal += (v[i] * ell * w[j] - w[j] * gv[i]).powi(2);
        }
    }
    // reservoir-reservoir generators
    let mut external = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            external += (w[i] * ell * w[j] - w[j] * ell * w[i]).powi(2);
        }
    }
    Ok((internal + external, internal, external))
}

/// The closed form of |LF|^2 for reservoir-rotation-invariant F.
pub fn angular_momentum_sq_closed_form<F: RadialTestFunction>(
    f: &F,
    v: &DVector<f64>,
    w: &DVector<f64>,
) -> Result<f64> {
    check_on_sphere(v, w)?;
    let w2 = w.norm_squared();
    let gv = f.grad_v(v, w2);
    let ell = f.ell(v, w2);
    let shifted = v * ell - &gv;
    Ok(v.norm_squared() * gv.norm_squared() - v.dot(&gv).powi(2)
        + w2 * shifted.norm_squared())
}

/// Block decomposition of an (M+N) rotation assembled from a collision
/// history.
#[derive(Clone, Debug)]
pub struct BlockRotation {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub d: DMatrix<f64>,
}

impl BlockRotation {
    pub fn from_history(h: &RotationHistory) -> Self {
        BlockRotation { a: h.a(), b: h.b(), c: h.c(), d: h.d() }
    }

    pub fn identity(m: usize, n: usize) -> Self {
        BlockRotation {
            a: DMatrix::identity(m, m),
            b: DMatrix::zeros(m, n),
            c: DMatrix::zeros(n, m),
            d: DMatrix::identity(n, n),
        }
    }

    /// Random rotation as a product of `collisions` plane rotations with
    /// pairs from the jump-chain weights and angles from the measure.
    pub fn random<R: Rng>(
        params: &KacParams,
        nu: &CollisionMeasure,
        collisions: usize,
        rng: &mut R,
    ) -> Self {
        let mut h = RotationHistory::identity(params.m, params.n);
        for _ in 0..collisions {
            let pair = params.sample_pair(rng);
            h.push(&pair, nu.sample(rng));
        }
        BlockRotation::from_history(&h)
    }
}

/// The direction-averaged outer contribution:
/// Sigma_1 = |Cv|^2 |C grad_v F|^2 - (Cv . C grad_v F)^2
///   + (|w|^2/N) [ Tr(D^T D) |C(ell v - grad_v F)|^2
///                 - |D^T C(ell v - grad_v F)|^2 ].
pub fn sigma1<F: RadialTestFunction>(
    f: &F,
    r: &BlockRotation,
    v: &DVector<f64>,
    w: &DVector<f64>,
) -> Result<f64> {
    check_on_sphere(v, w)?;
    let w2 = w.norm_squared();
    let gv = f.grad_v(v, w2);
    let ell = f.ell(v, w2);
    let n = w.len() as f64;
    let cv = &r.c * v;
    let cg = &r.c * &gv;
    let shifted = v * ell - &gv;
    let c_shift = &r.c * &shifted;
    let dtc_shift = r.d.transpose() * &c_shift;
    let trace_dtd = (r.d.transpose() * &r.d).trace();
    Ok(cv.norm_squared() * cg.norm_squared() - cv.dot(&cg).powi(2)
        + w2 / n * (trace_dtd * c_shift.norm_squared() - dtc_shift.norm_squared()))
}

/// The system-block bound:
/// Sigma_2 = |v|^2 |A grad_v F|^2 + |Av|^2 |grad_v F|^2
///   - 2 (v . grad_v F)(Av . A grad_v F)
///   + (1 - (M-1)/N) |w|^2 |A(ell v - grad_v F)|^2
///   + (M/N) |w|^2 |ell v - grad_v F|^2.
pub fn sigma2<F: RadialTestFunction>(
    f: &F,
    r: &BlockRotation,
    v: &DVector<f64>,
    w: &DVector<f64>,
) -> Result<f64> {
    check_on_sphere(v, w)?;
    let w2 = w.norm_squared();
    let gv = f.grad_v(v, w2);
    let ell = f.ell(v, w2);
    let m = v.len() as f64;
    let n = w.len() as f64;
    let av = &r.a * v;
    let ag = &r.a * &gv;
    let shifted = v * ell - &gv;
    let a_shift = &r.a * &shifted;
    Ok(v.norm_squared() * ag.norm_squared() + av.norm_squared() * gv.norm_squared()
        - 2.0 * v.dot(&gv) * av.dot(&ag)
        + (1.0 - (m - 1.0) / n) * w2 * a_shift.norm_squared()
        + m / n * w2 * shifted.norm_squared())
}

/// The outer generator sum before direction averaging, at a given reservoir
/// direction omega (|omega| = |w|):
/// Sigma_0 = |p|^2 |g|^2 - (p . g)^2 with p = Cv + D omega and
/// g = C(grad_v F - ell v).
pub fn sigma0<F: RadialTestFunction>(
    f: &F,
    r: &BlockRotation,
    v: &DVector<f64>,
    w_norm2: f64,
    omega: &DVector<f64>,
) -> f64 {
    let gv = f.grad_v(v, w_norm2);
    let ell = f.ell(v, w_norm2);
    let g = &r.c * (&gv - v * ell);
    let p = &r.c * v + &r.d * omega;
    p.norm_squared() * g.norm_squared() - p.dot(&g).powi(2)
}

/// Monte Carlo average of Sigma_0 over uniform reservoir directions at fixed
/// |w|, with its standard error; converges to Sigma_1.
pub fn sigma0_direction_average<F: RadialTestFunction>(
    f: &F,
    r: &BlockRotation,
    v: &DVector<f64>,
    w_norm: f64,
    directions: usize,
    seed: u64,
) -> (f64, f64) {
    let n = r.d.nrows();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sum = 0.0;
    let mut sq = 0.0;
    for _ in 0..directions {
        let mut omega = DVector::from_fn(n, |_, _| standard_normal(&mut rng));
        let norm = omega.norm();
        if norm == 0.0 {
            continue;
        }
        omega *= w_norm / norm;
        let s0 = sigma0(f, r, v, w_norm * w_norm, &omega);
        sum += s0;
        sq += s0 * s0;
    }
    let mean = sum / directions as f64;
    let var = (sq / directions as f64 - mean * mean).max(0.0);
    (mean, (var / directions as f64).sqrt())
}

#[derive(Clone, Copy, Debug)]
pub struct InequalityCheck {
    pub lhs: f64,
    pub sigma1: f64,
    pub sigma2: f64,
    /// sigma2 - (lhs - sigma1); nonnegative up to rounding when the
    /// inequality holds.
    pub slack: f64,
    pub scale: f64,
    pub pass: bool,
}

/// Pointwise check of |LF|^2 - Sigma_1 <= Sigma_2 with slack tolerance
/// 1e-9 relative to the largest term magnitude.
pub fn check_pointwise_inequality<F: RadialTestFunction>(
    f: &F,
    r: &BlockRotation,
    v: &DVector<f64>,
    w: &DVector<f64>,
) -> Result<InequalityCheck> {
    let lhs = angular_momentum_sq_closed_form(f, v, w)?;
    let s1 = sigma1(f, r, v, w)?;
    let s2 = sigma2(f, r, v, w)?;
    let scale = lhs.abs().max(s1.abs()).max(s2.abs()).max(1.0);
    let slack = s2 - (lhs - s1);
    Ok(InequalityCheck {
        lhs,
        sigma1: s1,
        sigma2: s2,
        slack,
        scale,
        pass: slack >= -1e-9 * scale,
    })
}

/// Uniformly random point on the sphere of radius sqrt(M+N), split into the
/// system and reservoir blocks.
pub fn random_sphere_point<R: Rng>(m: usize, n: usize, rng: &mut R) -> (DVector<f64>, DVector<f64>) {
    let dim = m + n;
    loop {
        let x = DVector::from_fn(dim, |_, _| standard_normal(rng));
        let norm = x.norm();
        if norm > 0.0 {
            let scaled = x * ((dim as f64).sqrt() / norm);
            return (scaled.rows(0, m).into_owned(), scaled.rows(m, n).into_owned());
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{derive_params, local_perturbation_rates};
    use approx::assert_abs_diff_eq;

    struct Constant;

    impl RadialTestFunction for Constant {
        fn value(&self, _: &DVector<f64>, _: f64) -> f64 {
            1.0
        }
        fn grad_v(&self, v: &DVector<f64>, _: f64) -> DVector<f64> {
            DVector::zeros(v.len())
        }
        fn dphi_du(&self, _: &DVector<f64>, _: f64) -> f64 {
            0.0
        }
    }

    /// phi depending only on the conserved radius |v|^2 + |w|^2:
    /// exp(b (|v|^2 + u)), i.e. a = 0, S = 2 b I, same b.
    fn radial_function(m: usize, b: f64) -> ExpQuadratic {
        ExpQuadratic::new(
            DVector::zeros(m),
            b,
            DMatrix::identity(m, m) * (2.0 * b),
        )
        .unwrap()
    }

    fn test_params(m: usize, n: usize) -> KacParams {
        let nu = CollisionMeasure::uniform();
        let (ls, lr, mu) = local_perturbation_rates(1.0, m, n).unwrap();
        derive_params(m, n, ls, lr, mu, &nu).unwrap()
    }

    #[test]
    fn constant_function_gives_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (v, w) = random_sphere_point(2, 3, &mut rng);
        let (total, int, ext) = angular_momentum_sq(&Constant, &v, &w).unwrap();
        assert_eq!((total, int, ext), (0.0, 0.0, 0.0));
        let r = BlockRotation::random(
            &test_params(2, 3),
            &CollisionMeasure::uniform(),
            5,
            &mut rng,
        );
        assert_eq!(sigma1(&Constant, &r, &v, &w).unwrap(), 0.0);
        assert_eq!(sigma2(&Constant, &r, &v, &w).unwrap(), 0.0);
        let check = check_pointwise_inequality(&Constant, &r, &v, &w).unwrap();
        assert!(check.pass);
        assert_eq!(check.lhs, 0.0);
    }

    #[test]
    fn radius_functions_have_zero_angular_momentum() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let (v, w) = random_sphere_point(2, 4, &mut rng);
            let f = radial_function(2, 0.3);
            let (total, _, _) = angular_momentum_sq(&f, &v, &w).unwrap();
            assert_abs_diff_eq!(total, 0.0, epsilon = 1e-18);
        }
    }

    #[test]
    fn generator_sum_matches_closed_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let m = 1 + (rng.gen::<f64>() * 3.0) as usize;
            let n = 2 + (rng.gen::<f64>() * 3.0) as usize;
            let f = ExpQuadratic::random(m, 0.4, &mut rng);
            let (v, w) = random_sphere_point(m, n, &mut rng);
            let (total, _internal, external) = angular_momentum_sq(&f, &v, &w).unwrap();
            let closed = angular_momentum_sq_closed_form(&f, &v, &w).unwrap();
            assert!(external.abs() < 1e-12 * total.max(1.0));
            assert_abs_diff_eq!(total, closed, epsilon = 1e-10 * total.max(1.0));
        }
    }

    #[test]
    fn off_sphere_points_are_rejected() {
        let f = ExpQuadratic::random(1, 0.3, &mut ChaCha8Rng::seed_from_u64(4));
        let v = DVector::from_vec(vec![1.0]);
        let w = DVector::from_vec(vec![2.0, 1.0]);
        assert!(matches!(
            angular_momentum_sq(&f, &v, &w),
            Err(KacError::OffSphere { .. })
        ));
    }

    #[test]
    fn identity_rotation_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (m, n) = (2usize, 3usize);
        let id = BlockRotation::identity(m, n);
        for _ in 0..20 {
            let f = ExpQuadratic::random(m, 0.4, &mut rng);
            let (v, w) = random_sphere_point(m, n, &mut rng);
            // C = 0 kills Sigma_1
            assert_eq!(sigma1(&f, &id, &v, &w).unwrap(), 0.0);
            // A = I: Sigma_2 = 2(|v|^2 |g|^2 - (v.g)^2) + (1 + 1/N)|w|^2 |lv - g|^2
            let w2 = w.norm_squared();
            let gv = f.grad_v(&v, w2);
            let shifted = &v * f.ell(&v, w2) - &gv;
            let expect = 2.0 * (v.norm_squared() * gv.norm_squared() - v.dot(&gv).powi(2))
                + (1.0 + 1.0 / n as f64) * w2 * shifted.norm_squared();
            assert_abs_diff_eq!(
                sigma2(&f, &id, &v, &w).unwrap(),
                expect,
                epsilon = 1e-10 * expect.abs().max(1.0)
            );
            // ... which dominates |LF|^2
            let lhs = angular_momentum_sq_closed_form(&f, &v, &w).unwrap();
            assert!(lhs <= expect + 1e-9 * expect.abs().max(1.0));
        }
    }

    #[test]
    fn block_identities_from_histories() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let params = test_params(2, 3);
        let nu = CollisionMeasure::uniform();
        for _ in 0..20 {
            let r = BlockRotation::random(&params, &nu, 8, &mut rng);
            let ata = r.a.transpose() * &r.a;
            let ctc = r.c.transpose() * &r.c;
            assert!((ata + ctc - DMatrix::identity(2, 2)).amax() < 1e-10);
            let dtc = r.d.transpose() * &r.c;
            let bta = r.b.transpose() * &r.a;
            assert!((dtc + bta).amax() < 1e-10);
            let tr_dtd = (r.d.transpose() * &r.d).trace();
            let tr_ata = (r.a.transpose() * &r.a).trace();
            assert_abs_diff_eq!(tr_dtd, 3.0 - 2.0 + tr_ata, epsilon = 1e-10);
        }
    }

    #[test]
    fn sigma0_average_matches_sigma1() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let nu = CollisionMeasure::uniform();
        for trial in 0..10 {
            let (m, n) = [(1usize, 2usize), (2, 3), (3, 8)][trial % 3];
            let params = test_params(m, n);
            let f = ExpQuadratic::random(m, 0.4, &mut rng);
            let r = BlockRotation::random(&params, &nu, 6, &mut rng);
            let (v, w) = random_sphere_point(m, n, &mut rng);
            let s1 = sigma1(&f, &r, &v, &w).unwrap();
            let (avg, stderr) =
                sigma0_direction_average(&f, &r, &v, w.norm(), 100_000, 1000 + trial as u64);
            assert!(
                (avg - s1).abs() < 3.0 * stderr + 1e-12,
                "trial {trial}: avg {avg} +- {stderr} vs sigma1 {s1}"
            );
        }
    }

    #[test]
    fn pointwise_inequality_randomized() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let nu = CollisionMeasure::uniform();
        let mut min_slack_rel = f64::INFINITY;
        for m in [1usize, 2, 3] {
            for n in [2usize, 3, 8] {
                let params = test_params(m, n);
                for _ in 0..200 {
                    let f = ExpQuadratic::random(m, 0.5, &mut rng);
                    let collisions = 1 + (rng.gen::<f64>() * 10.0) as usize;
                    let r = BlockRotation::random(&params, &nu, collisions, &mut rng);
                    let (v, w) = random_sphere_point(m, n, &mut rng);
                    let check = check_pointwise_inequality(&f, &r, &v, &w).unwrap();
                    assert!(
                        check.pass,
                        "M={m}, N={n}: lhs {} s1 {} s2 {}",
                        check.lhs, check.sigma1, check.sigma2
                    );
                    min_slack_rel = min_slack_rel.min(check.slack / check.scale);
                }
            }
        }
        // the inequality can come close to tight but is never violated
        assert!(min_slack_rel >= -1e-9);
    }

    #[test]
    fn rotation_invariance_of_generator_sum() {
        // |L(F o R^{-1})|^2 at p equals |LF|^2 at R^{-1} p. Composing an
        // ExpQuadratic with a block rotation leaves the radial family only
        // when the rotation fixes the blocks, so instead verify through the
        // raw generator sums on the rotated function evaluated numerically.
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..10 {
            let f = ExpQuadratic::random(2, 0.4, &mut rng);
            let mut h = RotationHistory::identity(2, 2);
            // reservoir-only rotation keeps F o R^{-1} in the radial family:
            // F(v, |w|^2) is invariant, so both sides must agree exactly
            let theta = 2.0 * std::f64::consts::PI * rng.gen::<f64>();
            h.push(&crate::model::PairIndex::new(2, 3, 2, 2).unwrap(), theta);
            let r = BlockRotation::from_history(&h);
            let (v, w) = random_sphere_point(2, 2, &mut rng);
            // R^{-1} (v, w) with the reservoir-only rotation
            let rw = r.d.transpose() * &w;
            let before = angular_momentum_sq_closed_form(&f, &v, &w).unwrap();
            let after = angular_momentum_sq_closed_form(&f, &v, &rw).unwrap();
            assert_abs_diff_eq!(before, after, epsilon = 1e-10 * before.abs().max(1.0));
        }
    }
}
