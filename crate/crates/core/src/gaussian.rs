//! Closed-form Gaussian-mixture calculus: rotations, marginalization, the
//! Ornstein-Uhlenbeck semigroup, and entropy / Fisher information relative to
//! the standard Gaussian exp(-pi |x|^2).
//!
//! Densities are stored as absolute densities with respect to Lebesgue
//! measure; only the functionals are relative to the Gaussian reference.

use std::f64::consts::PI;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{KacError, Result};

/// Floor added to a covariance that loses positive definiteness to rounding.
const COV_FLOOR: f64 = 1e-13;
/// Normalization tolerance for functional evaluation.
const NORM_TOL: f64 = 1e-12;

#[derive(Clone, Debug)]
pub struct GaussianComponent {
    pub weight: f64,
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

/// Weighted sum of full-covariance Gaussians on R^dim. The total mass may be
/// below one under series truncation.
#[derive(Clone, Debug)]
pub struct GaussianMixture {
    dim: usize,
    pub components: Vec<GaussianComponent>,
}

#[derive(Serialize, Deserialize)]
struct MixtureSchema {
    dim: usize,
    components: Vec<ComponentSchema>,
}

#[derive(Serialize, Deserialize)]
struct ComponentSchema {
    w: f64,
    mean: Vec<f64>,
    cov: Vec<Vec<f64>>,
}

impl GaussianMixture {
    /// The reference Gaussian gamma(x) = exp(-pi |x|^2): one component,
    /// mean zero, covariance I / (2 pi).
    pub fn standard(dim: usize) -> Self {
        GaussianMixture {
            dim,
            components: vec![GaussianComponent {
                weight: 1.0,
                mean: DVector::zeros(dim),
                cov: DMatrix::identity(dim, dim) / (2.0 * PI),
            }],
        }
    }

    /// Single centered 1-D Gaussian with variance a / (2 pi).
    pub fn gauss_1d(a: f64) -> Self {
        GaussianMixture {
            dim: 1,
            components: vec![GaussianComponent {
                weight: 1.0,
                mean: DVector::zeros(1),
                cov: DMatrix::from_element(1, 1, a / (2.0 * PI)),
            }],
        }
    }

    pub fn from_components(dim: usize, components: Vec<GaussianComponent>) -> Result<Self> {
        if components.is_empty() {
            return Err(KacError::InvalidMixture("no components".into()));
        }
        for comp in &components {
            if comp.weight <= 0.0 || !comp.weight.is_finite() {
                return Err(KacError::InvalidMixture(format!(
                    "nonpositive weight {}",
                    comp.weight
                )));
            }
            if comp.mean.len() != dim || comp.cov.nrows() != dim || comp.cov.ncols() != dim {
                return Err(KacError::InvalidMixture("dimension mismatch".into()));
            }
            let asym = (&comp.cov - comp.cov.transpose()).amax();
            if asym > 1e-10 {
                return Err(KacError::InvalidMixture(format!(
                    "covariance asymmetry {asym:e}"
                )));
            }
            if Cholesky::new(comp.cov.clone()).is_none() {
                return Err(KacError::InvalidMixture("covariance not SPD".into()));
            }
        }
        Ok(GaussianMixture { dim, components })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn total_weight(&self) -> f64 {
        self.components.iter().map(|c| c.weight).sum()
    }

    pub fn is_normalized(&self) -> bool {
        (self.total_weight() - 1.0).abs() <= NORM_TOL
    }

    /// Rescale weights to total mass one.
    pub fn normalized(mut self) -> Self {
        let total = self.total_weight();
        for comp in &mut self.components {
            comp.weight /= total;
        }
        self
    }

    /// Pushforward under a rotation (or any linear map) R.
    pub fn rotate(&self, r: &DMatrix<f64>) -> Self {
        let components = self
            .components
            .iter()
            .map(|comp| GaussianComponent {
                weight: comp.weight,
                mean: r * &comp.mean,
                cov: r * &comp.cov * r.transpose(),
            })
            .collect();
        GaussianMixture { dim: self.dim, components }
    }

    /// Marginal on the first m coordinates: leading blocks of every
    /// component, weights unchanged.
    pub fn marginalize_first(&self, m: usize) -> Result<Self> {
        if m < 1 || m >= self.dim {
            return Err(KacError::InvalidMixture(format!(
                "marginal dimension {m} out of range for dim {}",
                self.dim
            )));
        }
        let components = self
            .components
            .iter()
            .map(|comp| GaussianComponent {
                weight: comp.weight,
                mean: comp.mean.rows(0, m).into_owned(),
                cov: comp.cov.view((0, 0), (m, m)).into_owned(),
            })
            .collect();
        Ok(GaussianMixture { dim: m, components })
    }

    /// Ornstein-Uhlenbeck flow on absolute densities:
    /// mean -> e^{-s} mean, cov -> e^{-2s} cov + (1 - e^{-2s}) I / (2 pi).
    pub fn ou_evolve(&self, s: f64) -> Result<Self> {
        if s < 0.0 {
            return Err(KacError::NegativeTime(s));
        }
        let decay = (-s).exp();
        let decay2 = decay * decay;
        let fresh = (1.0 - decay2) / (2.0 * PI);
        let eye = DMatrix::identity(self.dim, self.dim);
        let components = self
            .components
            .iter()
            .map(|comp| GaussianComponent {
                weight: comp.weight,
                mean: &comp.mean * decay,
                cov: &comp.cov * decay2 + &eye * fresh,
            })
            .collect();
        Ok(GaussianMixture { dim: self.dim, components })
    }

    /// Second moment E[|x|^2] of the (possibly unnormalized) mixture,
    /// divided by the total mass.
    pub fn second_moment(&self) -> f64 {
        let total = self.total_weight();
        self.components
            .iter()
            .map(|c| c.weight * (c.cov.trace() + c.mean.norm_squared()))
            .sum::<f64>()
            / total
    }

    pub fn evaluator(&self) -> Result<MixtureEvaluator> {
        MixtureEvaluator::new(self)
    }

    pub fn sampler(&self) -> Result<MixtureSampler> {
        MixtureSampler::new(self)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let schema: MixtureSchema = serde_json::from_str(text)?;
        let components = schema
            .components
            .into_iter()
            .map(|c| {
                let dim = c.mean.len();
                GaussianComponent {
                    weight: c.w,
                    mean: DVector::from_vec(c.mean),
                    cov: DMatrix::from_fn(dim, dim, |r, s| c.cov[r][s]),
                }
            })
            .collect();
        Self::from_components(schema.dim, components)
    }

    pub fn to_json(&self) -> String {
        let schema = MixtureSchema {
            dim: self.dim,
            components: self
                .components
                .iter()
                .map(|c| ComponentSchema {
                    w: c.weight,
                    mean: c.mean.iter().copied().collect(),
                    cov: (0..self.dim)
                        .map(|r| (0..self.dim).map(|s| c.cov[(r, s)]).collect())
                        .collect(),
                })
                .collect(),
        };
        serde_json::to_string(&schema).expect("mixture serialization")
    }
}

struct CompEval {
    mean: DVector<f64>,
    precision: DMatrix<f64>,
    /// log of weight * normalization constant
    log_scale: f64,
}

/// Precomputed per-component factorizations for density and score queries.
pub struct MixtureEvaluator {
    dim: usize,
    comps: Vec<CompEval>,
}

fn cholesky_with_floor(cov: &DMatrix<f64>) -> Result<Cholesky<f64, Dyn>> {
    let sym = (cov + cov.transpose()) * 0.5;
    if let Some(chol) = Cholesky::new(sym.clone()) {
        return Ok(chol);
    }
    let floored = sym + DMatrix::identity(cov.nrows(), cov.ncols()) * COV_FLOOR;
    Cholesky::new(floored).ok_or_else(|| KacError::InvalidMixture("covariance not SPD".into()))
}

impl MixtureEvaluator {
    fn new(mix: &GaussianMixture) -> Result<Self> {
        let dim = mix.dim;
        let comps = mix
            .components
            .iter()
            .map(|comp| {
                let chol = cholesky_with_floor(&comp.cov)?;
                let log_det: f64 = (0..dim).map(|i| chol.l()[(i, i)].ln()).sum::<f64>() * 2.0;
                let precision = chol.inverse();
                let log_norm = -0.5 * (dim as f64 * (2.0 * PI).ln() + log_det);
                Ok(CompEval {
                    mean: comp.mean.clone(),
                    precision,
                    log_scale: comp.weight.ln() + log_norm,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(MixtureEvaluator { dim, comps })
    }

    /// log f(x).
    pub fn log_density(&self, x: &DVector<f64>) -> f64 {
        let mut best = f64::NEG_INFINITY;
        let exponents: Vec<f64> = self
            .comps
            .iter()
            .map(|c| {
                let d = x - &c.mean;
                let e = c.log_scale - 0.5 * (&c.precision * &d).dot(&d);
                if e > best {
                    best = e;
                }
                e
            })
            .collect();
        if best == f64::NEG_INFINITY {
            return f64::NEG_INFINITY;
        }
        best + exponents.iter().map(|e| (e - best).exp()).sum::<f64>().ln()
    }

    /// (log f(x), grad f / f at x).
    pub fn log_density_and_score(&self, x: &DVector<f64>) -> (f64, DVector<f64>) {
        let mut best = f64::NEG_INFINITY;
        let parts: Vec<(f64, DVector<f64>)> = self
            .comps
            .iter()
            .map(|c| {
                let d = x - &c.mean;
                let pd = &c.precision * &d;
                let e = c.log_scale - 0.5 * pd.dot(&d);
                if e > best {
                    best = e;
                }
                (e, pd)
            })
            .collect();
        if best == f64::NEG_INFINITY {
            return (f64::NEG_INFINITY, DVector::zeros(self.dim));
        }
        let mut total = 0.0;
        let mut score = DVector::zeros(self.dim);
        for (e, pd) in &parts {
            let r = (e - best).exp();
            total += r;
            score -= pd * r;
        }
        (best + total.ln(), score / total)
    }

}

/// Entropy / information functionals relative to gamma, with a quadrature
/// error estimate from grid refinement.
#[derive(Clone, Copy, Debug)]
pub struct FunctionalReport {
    pub entropy: f64,
    pub information: f64,
    pub quadrature_error_estimate: f64,
}

#[derive(Clone, Copy, Debug)]
pub struct QuadratureOpts {
    /// Refinement stops when successive S and I estimates differ by less.
    pub target: f64,
    /// Node budget per dimension.
    pub max_nodes_per_dim: usize,
    /// Integration range: union of per-component mean +- sigmas * sigma.
    pub sigmas: f64,
}

impl Default for QuadratureOpts {
    fn default() -> Self {
        QuadratureOpts { target: 1e-8, max_nodes_per_dim: 1 << 20, sigmas: 10.0 }
    }
}

fn integration_range(mix: &GaussianMixture, axis: usize, sigmas: f64) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for comp in &mix.components {
        let sd = comp.cov[(axis, axis)].max(0.0).sqrt();
        lo = lo.min(comp.mean[axis] - sigmas * sd);
        hi = hi.max(comp.mean[axis] + sigmas * sd);
    }
    (lo, hi)
}

/// One trapezoid pass over a fixed grid, accumulating both functionals.
fn functionals_on_grid(eval: &MixtureEvaluator, grids: &[Vec<f64>]) -> (f64, f64) {
    let dim = grids.len();
    let mut s_sum = 0.0;
    let mut i_sum = 0.0;
    let mut x = DVector::zeros(dim);
    let mut index = vec![0usize; dim];
    loop {
        let mut vol = 1.0;
        for (d, grid) in grids.iter().enumerate() {
            let ix = index[d];
            x[d] = grid[ix];
            let h = grid[1] - grid[0];
            vol *= if ix == 0 || ix == grid.len() - 1 { 0.5 * h } else { h };
        }
        let (logf, score) = eval.log_density_and_score(&x);
        if logf > -700.0 {
            let f = logf.exp();
            let log_gamma = -PI * x.norm_squared();
            s_sum += vol * f * (logf - log_gamma);
            let shifted = &score + &x * (2.0 * PI);
            i_sum += vol * f * shifted.norm_squared();
        }
        let mut pos = 0;
        loop {
            if pos == dim {
                return (s_sum, i_sum);
            }
            index[pos] += 1;
            if index[pos] < grids[pos].len() {
                break;
            }
            index[pos] = 0;
            pos += 1;
        }
    }
}

/// S = int f log(f / gamma) and I = int |grad f / f + 2 pi x|^2 f on an
/// adaptive composite grid. Quadrature mode supports dim <= 2.
pub fn entropy_information(
    mix: &GaussianMixture,
    opts: &QuadratureOpts,
) -> Result<FunctionalReport> {
    if mix.dim > 2 {
        return Err(KacError::InvalidMixture(format!(
            "quadrature mode supports dim <= 2, got {}",
            mix.dim
        )));
    }
    if !mix.is_normalized() {
        return Err(KacError::NotNormalized(mix.total_weight()));
    }
    let eval = mix.evaluator()?;
    let ranges: Vec<(f64, f64)> = (0..mix.dim)
        .map(|axis| integration_range(mix, axis, opts.sigmas))
        .collect();
    let max_nodes = if mix.dim == 2 {
        opts.max_nodes_per_dim.min(8192)
    } else {
        opts.max_nodes_per_dim
    };
    let mut n = if mix.dim == 2 { 64 } else { 256 };
    let mut prev: Option<(f64, f64)> = None;
    let mut change = f64::INFINITY;
    while n <= max_nodes {
        let grids: Vec<Vec<f64>> = ranges
            .iter()
            .map(|&(lo, hi)| {
                let h = (hi - lo) / n as f64;
                (0..=n).map(|i| lo + h * i as f64).collect()
            })
            .collect();
        let (s, i) = functionals_on_grid(&eval, &grids);
        if let Some((ps, pi)) = prev {
            change = (s - ps).abs().max((i - pi).abs());
            if change < opts.target {
                return Ok(FunctionalReport {
                    entropy: s,
                    information: i,
                    quadrature_error_estimate: change,
                });
            }
        }
        prev = Some((s, i));
        n *= 2;
    }
    Err(KacError::QuadratureNotConverged(change))
}

/// Deterministic seeded sampler over the mixture.
pub struct MixtureSampler {
    dim: usize,
    cum_weights: Vec<f64>,
    means: Vec<DVector<f64>>,
    chols: Vec<DMatrix<f64>>,
}

impl MixtureSampler {
    fn new(mix: &GaussianMixture) -> Result<Self> {
        let total = mix.total_weight();
        let mut acc = 0.0;
        let mut cum_weights = Vec::with_capacity(mix.components.len());
        let mut means = Vec::with_capacity(mix.components.len());
        let mut chols = Vec::with_capacity(mix.components.len());
        for comp in &mix.components {
            acc += comp.weight / total;
            cum_weights.push(acc);
            means.push(comp.mean.clone());
            chols.push(cholesky_with_floor(&comp.cov)?.l().into_owned());
        }
        Ok(MixtureSampler { dim: mix.dim, cum_weights, means, chols })
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> DVector<f64> {
        let u: f64 = rng.gen();
        let ix = match self
            .cum_weights
            .binary_search_by(|w| w.partial_cmp(&u).unwrap())
        {
            Ok(i) | Err(i) => i.min(self.cum_weights.len() - 1),
        };
        let z = DVector::from_fn(self.dim, |_, _| standard_normal(rng));
        &self.means[ix] + &self.chols[ix] * z
    }
}

/// Box-Muller standard normal draw.
pub fn standard_normal<R: Rng>(rng: &mut R) -> f64 {
    loop {
        let u1: f64 = rng.gen();
        let u2: f64 = rng.gen();
        if u1 > 0.0 {
            return (-2.0 * u1.ln()).sqrt() * (2.0 * PI * u2).cos();
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct McFunctionalReport {
    pub entropy: f64,
    pub entropy_stderr: f64,
    pub information: f64,
    pub information_stderr: f64,
    pub samples: usize,
}

/// Sample-average estimates of S and I using exact mixture density and
/// gradient evaluations at points drawn from the mixture itself.
pub fn entropy_information_mc(
    mix: &GaussianMixture,
    samples: usize,
    seed: u64,
) -> Result<McFunctionalReport> {
    if !mix.is_normalized() {
        return Err(KacError::NotNormalized(mix.total_weight()));
    }
    if samples < 1000 {
        return Err(KacError::InvalidConfig(format!(
            "need at least 1000 samples, got {samples}"
        )));
    }
    let eval = mix.evaluator()?;
    let sampler = mix.sampler()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s_sum = 0.0;
    let mut s_sq = 0.0;
    let mut i_sum = 0.0;
    let mut i_sq = 0.0;
    for _ in 0..samples {
        let x = sampler.sample(&mut rng);
        let (logf, score) = eval.log_density_and_score(&x);
        let s_term = logf + PI * x.norm_squared();
        let i_term = (&score + &x * (2.0 * PI)).norm_squared();
        s_sum += s_term;
        s_sq += s_term * s_term;
        i_sum += i_term;
        i_sq += i_term * i_term;
    }
    let n = samples as f64;
    let s_mean = s_sum / n;
    let i_mean = i_sum / n;
    Ok(McFunctionalReport {
        entropy: s_mean,
        entropy_stderr: ((s_sq / n - s_mean * s_mean).max(0.0) / n).sqrt(),
        information: i_mean,
        information_stderr: ((i_sq / n - i_mean * i_mean).max(0.0) / n).sqrt(),
        samples,
    })
}

/// Outcome of the Ornstein-Uhlenbeck identity suite on one mixture.
///
/// With the reference gamma = exp(-pi |x|^2) the semigroup generator is
/// (1 / 2 pi) Laplacian - x . grad, so the derivative identity reads
/// d/ds S(P_s f) = -I(P_s f) / (2 pi) and the entropy-information integral
/// is S(f) = (1 / 2 pi) int_0^inf I(P_s f) ds.
#[derive(Clone, Debug)]
pub struct OuCheckReport {
    pub s0: f64,
    pub i0: f64,
    /// max over the grid of I(P_s) - e^{-2s} I(f); contractivity wants <= 0.
    pub max_contractivity_violation: f64,
    /// max over the grid of |d/ds S(P_s) + I(P_s) / (2 pi)|.
    pub max_derivative_residual: f64,
    /// |S - [(1/2pi) int_0^smax I(P_s) ds + S(P_smax)]|.
    pub integral_residual: f64,
    /// S - I/2; the log-Sobolev inequality wants <= 0.
    pub log_sobolev_slack: f64,
    /// S - I/(4 pi); the sharp constant in these units.
    pub log_sobolev_sharp_slack: f64,
    pub pass: bool,
}

fn adaptive_simpson(
    f: &mut dyn FnMut(f64) -> Result<f64>,
    a: f64,
    b: f64,
    eps: f64,
) -> Result<f64> {
    fn simpson(fa: f64, fm: f64, fb: f64, a: f64, b: f64) -> f64 {
        (b - a) / 6.0 * (fa + 4.0 * fm + fb)
    }
    fn recurse(
        f: &mut dyn FnMut(f64) -> Result<f64>,
        a: f64,
        b: f64,
        fa: f64,
        fm: f64,
        fb: f64,
        whole: f64,
        eps: f64,
        depth: u32,
    ) -> Result<f64> {
        let m = 0.5 * (a + b);
        let lm = 0.5 * (a + m);
        let rm = 0.5 * (m + b);
        let flm = f(lm)?;
        let frm = f(rm)?;
        let left = simpson(fa, flm, fm, a, m);
        let right = simpson(fm, frm, fb, m, b);
        if depth == 0 || (left + right - whole).abs() <= 15.0 * eps {
            return Ok(left + right + (left + right - whole) / 15.0);
        }
        Ok(recurse(f, a, m, fa, flm, fm, left, eps / 2.0, depth - 1)?
            + recurse(f, m, b, fm, frm, fb, right, eps / 2.0, depth - 1)?)
    }
    let fa = f(a)?;
    let m = 0.5 * (a + b);
    let fm = f(m)?;
    let fb = f(b)?;
    let whole = simpson(fa, fm, fb, a, b);
    recurse(f, a, b, fa, fm, fb, whole, eps, 24)
}

/// Verify the OU identities on an s-grid: contractivity, the derivative
/// identity, the entropy-information integral, and log-Sobolev.
pub fn check_ou_identities(
    mix: &GaussianMixture,
    s_grid: &[f64],
    tol: f64,
) -> Result<OuCheckReport> {
    if mix.dim > 2 {
        return Err(KacError::InvalidMixture("OU checks need dim <= 2".into()));
    }
    let opts = QuadratureOpts { target: 1e-11, ..QuadratureOpts::default() };
    let report_at = |s: f64| -> Result<FunctionalReport> {
        entropy_information(&mix.ou_evolve(s)?, &opts)
    };
    let base = report_at(0.0)?;
    let s0 = base.entropy;
    let i0 = base.information;

    let mut max_contr: f64 = f64::NEG_INFINITY;
    let mut max_deriv: f64 = 0.0;
    let fd = 0.01;
    for &s in s_grid {
        let here = report_at(s)?;
        max_contr = max_contr.max(here.information - (-2.0 * s).exp() * i0);
        // five-point central difference of S(P_s) in s
        let sm2 = report_at((s - 2.0 * fd).max(0.0))?.entropy;
        let sm1 = report_at((s - fd).max(0.0))?.entropy;
        let sp1 = report_at(s + fd)?.entropy;
        let sp2 = report_at(s + 2.0 * fd)?.entropy;
        if s >= 2.0 * fd {
            let ds = (-sp2 + 8.0 * sp1 - 8.0 * sm1 + sm2) / (12.0 * fd);
            max_deriv = max_deriv.max((ds + here.information / (2.0 * PI)).abs());
        }
    }

    let smax = s_grid.iter().cloned().fold(0.0f64, f64::max);
    let mut integrand = |s: f64| -> Result<f64> { Ok(report_at(s)?.information) };
    // the integrand itself is only resolved to the quadrature target, so a
    // tighter Simpson tolerance buys nothing and explodes the recursion
    let integral = adaptive_simpson(&mut integrand, 0.0, smax, (tol * 0.05).max(1e-12))?;
    let tail_entropy = report_at(smax)?.entropy;
    let integral_residual = (s0 - (integral / (2.0 * PI) + tail_entropy)).abs();

    let report = OuCheckReport {
        s0,
        i0,
        max_contractivity_violation: max_contr,
        max_derivative_residual: max_deriv,
        integral_residual,
        log_sobolev_slack: s0 - 0.5 * i0,
        log_sobolev_sharp_slack: s0 - i0 / (4.0 * PI),
        pass: false,
    };
    let pass = report.max_contractivity_violation <= 1e-8
        && report.max_derivative_residual <= tol
        && report.integral_residual <= tol
        && report.log_sobolev_slack <= 1e-8;
    Ok(OuCheckReport { pass, ..report })
}

/// Closed-form relative entropy of a single Gaussian against gamma.
pub fn gaussian_relative_entropy(mean: &DVector<f64>, cov: &DMatrix<f64>) -> f64 {
    let d = mean.len();
    let scaled = cov * (2.0 * PI);
    let chol = Cholesky::new(scaled.clone()).expect("SPD covariance");
    let log_det: f64 = (0..d).map(|i| chol.l()[(i, i)].ln()).sum::<f64>() * 2.0;
    0.5 * (scaled.trace() - d as f64 - log_det + 2.0 * PI * mean.norm_squared())
}

/// Closed-form relative Fisher information of a single Gaussian against
/// gamma: E |  -Sigma^{-1}(x - m) + 2 pi x |^2.
pub fn gaussian_relative_information(mean: &DVector<f64>, cov: &DMatrix<f64>) -> f64 {
    let d = mean.len();
    let chol = Cholesky::new(cov.clone()).expect("SPD covariance");
    let precision = chol.inverse();
    let two_pi = 2.0 * PI;
    // A = 2 pi I - Sigma^{-1}; integrand (A x + Sigma^{-1} m) over N(m, Sigma)
    let a = DMatrix::identity(d, d) * two_pi - &precision;
    let shift = &a * mean + &precision * mean;
    let quad = (&a * cov * a.transpose()).trace();
    quad + shift.norm_squared()
}
