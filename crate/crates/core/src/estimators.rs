//! Sample-based relative-entropy estimation in up to three dimensions:
//! a Kozachenko-Leonenko nearest-neighbor differential-entropy estimator
//! combined with an evaluable log-density for the reference measure.

use std::f64::consts::PI;

use rayon::prelude::*;
use statrs::function::gamma::{digamma, ln_gamma};

use crate::error::{KacError, Result};

/// Maximum dimension for neighbor-based estimation.
const MAX_DIM: usize = 3;
/// Nonoverlapping blocks used for the standard error.
pub const DEFAULT_BLOCKS: usize = 20;
pub const DEFAULT_K: usize = 5;

#[derive(Clone, Debug)]
pub struct EntropyEstimate {
    /// Relative entropy in nats.
    pub value: f64,
    pub stderr: f64,
    pub n: usize,
    pub k: usize,
    /// Samples dropped for zero nearest-neighbor distance.
    pub dropped: usize,
}

/// Static kd-tree over points of a fixed small dimension.
struct KdTree<'a> {
    dim: usize,
    points: &'a [Vec<f64>],
    /// Permutation of point indices in tree layout.
    order: Vec<u32>,
    /// Split dimension per internal node, aligned with `order`.
    split_dim: Vec<u8>,
}

impl<'a> KdTree<'a> {
    fn build(points: &'a [Vec<f64>], dim: usize) -> Self {
        let mut order: Vec<u32> = (0..points.len() as u32).collect();
        let mut split_dim = vec![0u8; points.len()];
        build_recursive(points, dim, &mut order, &mut split_dim);
        KdTree { dim, points, order, split_dim }
    }

    /// Squared distance to the k-th nearest neighbor of `query`, skipping
    /// the point with index `skip` (the query itself).
    fn knn_dist2(&self, query: &[f64], k: usize, skip: u32) -> f64 {
        // bounded max-heap as a sorted insertion buffer (k is tiny)
        let mut best = vec![f64::INFINITY; k];
        self.search(0, self.order.len(), query, skip, &mut best);
        best[k - 1]
    }

    fn search(&self, lo: usize, hi: usize, query: &[f64], skip: u32, best: &mut [f64]) {
        if lo >= hi {
            return;
        }
        let mid = lo + (hi - lo) / 2;
        let ix = self.order[mid];
        if ix != skip {
            let p = &self.points[ix as usize];
            let d2: f64 = (0..self.dim).map(|d| (p[d] - query[d]).powi(2)).sum();
            let worst = best.len() - 1;
            if d2 < best[worst] {
                // insertion sort into the bounded buffer
                let mut pos = worst;
                while pos > 0 && best[pos - 1] > d2 {
                    best[pos] = best[pos - 1];
                    pos -= 1;
                }
                best[pos] = d2;
            }
        }
        let sd = self.split_dim[mid] as usize;
        let delta = query[sd] - self.points[ix as usize][sd];
        let (near, far) = if delta <= 0.0 {
            ((lo, mid), (mid + 1, hi))
        } else {
            ((mid + 1, hi), (lo, mid))
        };
        self.search(near.0, near.1, query, skip, best);
        if delta * delta < best[best.len() - 1] {
            self.search(far.0, far.1, query, skip, best);
        }
    }
}

fn build_recursive(
    points: &[Vec<f64>],
    dim: usize,
    order: &mut [u32],
    split_dim: &mut [u8],
) {
    if order.len() <= 1 {
        return;
    }
    // split on the widest dimension of this cell
    let sd = if dim == 1 {
        0
    } else {
        let mut widest = 0;
        let mut best_span = -1.0;
        for d in 0..dim {
            let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
            for &ix in order.iter() {
                let x = points[ix as usize][d];
                lo = lo.min(x);
                hi = hi.max(x);
            }
            if hi - lo > best_span {
                best_span = hi - lo;
                widest = d;
            }
        }
        widest
    };
    let mid = order.len() / 2;
    order.select_nth_unstable_by(mid, |&a, &b| {
        points[a as usize][sd]
            .partial_cmp(&points[b as usize][sd])
            .unwrap()
    });
    split_dim[mid] = sd as u8;
    let (left, rest) = order.split_at_mut(mid);
    let (sl, sr) = split_dim.split_at_mut(mid);
    build_recursive(points, dim, left, sl);
    build_recursive(points, dim, &mut rest[1..], &mut sr[1..]);
}

/// Log volume of the unit ball in d dimensions.
fn log_unit_ball_volume(d: usize) -> f64 {
    0.5 * d as f64 * PI.ln() - ln_gamma(d as f64 / 2.0 + 1.0)
}

/// Per-sample Kozachenko-Leonenko terms t_i with mean equal to the
/// differential-entropy estimate:
/// t_i = psi(n) - psi(k) + log V_d + d log r_i.
/// Samples with zero k-th neighbor distance yield NaN terms.
pub fn knn_entropy_terms(samples: &[Vec<f64>], k: usize) -> Result<Vec<f64>> {
    let n = samples.len();
    if n < 1000 {
        return Err(KacError::Estimator(format!("need n >= 1000 samples, got {n}")));
    }
    let dim = samples[0].len();
    if dim == 0 || dim > MAX_DIM {
        return Err(KacError::Estimator(format!("dimension {dim} outside 1..={MAX_DIM}")));
    }
    if k < 1 || k >= n {
        return Err(KacError::Estimator(format!("k = {k} out of range")));
    }
    let tree = KdTree::build(samples, dim);
    let constant = digamma(n as f64) - digamma(k as f64) + log_unit_ball_volume(dim);
    let terms: Vec<f64> = samples
        .par_iter()
        .enumerate()
        .map(|(i, x)| {
            let d2 = tree.knn_dist2(x, k, i as u32);
            if d2 <= 0.0 {
                f64::NAN
            } else {
                constant + 0.5 * dim as f64 * d2.ln()
            }
        })
        .collect();
    Ok(terms)
}

/// Differential entropy (nats) via nearest neighbors, with block stderr.
pub fn knn_entropy(samples: &[Vec<f64>], k: usize) -> Result<EntropyEstimate> {
    let terms = knn_entropy_terms(samples, k)?;
    aggregate(&terms, samples.len(), k)
}

/// Relative entropy S = int f log(f / reference) estimated as
/// -H_knn(samples) - mean(log reference(x_i)).
pub fn relative_entropy_knn<F>(
    samples: &[Vec<f64>],
    reference_logdensity: F,
    k: usize,
) -> Result<EntropyEstimate>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let terms = knn_entropy_terms(samples, k)?;
    let combined: Vec<f64> = samples
        .par_iter()
        .zip(&terms)
        .map(|(x, &t)| -t - reference_logdensity(x))
        .collect();
    aggregate(&combined, samples.len(), k)
}

fn aggregate(terms: &[f64], n: usize, k: usize) -> Result<EntropyEstimate> {
    let valid: Vec<f64> = terms.iter().copied().filter(|t| t.is_finite()).collect();
    let dropped = n - valid.len();
    if dropped * 100 > n {
        return Err(KacError::Estimator(format!(
            "{dropped} of {n} samples are degenerate duplicates (> 1%)"
        )));
    }
    let blocks = DEFAULT_BLOCKS.min(valid.len() / 50).max(2);
    let block_len = valid.len() / blocks;
    let mut block_means = Vec::with_capacity(blocks);
    for b in 0..blocks {
        let lo = b * block_len;
        let hi = if b + 1 == blocks { valid.len() } else { lo + block_len };
        block_means.push(valid[lo..hi].iter().sum::<f64>() / (hi - lo) as f64);
    }
    let value = valid.iter().sum::<f64>() / valid.len() as f64;
    let bm = block_means.iter().sum::<f64>() / blocks as f64;
    let var = block_means.iter().map(|m| (m - bm).powi(2)).sum::<f64>() / (blocks as f64 - 1.0);
    Ok(EntropyEstimate {
        value,
        stderr: (var / blocks as f64).sqrt().max(f64::MIN_POSITIVE),
        n,
        k,
        dropped,
    })
}

/// The v-marginal of the uniform measure on the sphere of radius
/// sqrt(M+N): density proportional to (1 - |v|^2 / (M+N))^{(N-2)/2}
/// on |v|^2 < M+N. The normalization is computed once by quadrature.
#[derive(Clone, Debug)]
pub struct SphereMarginal {
    pub m: usize,
    pub n: usize,
    log_norm: f64,
}

impl SphereMarginal {
    pub fn new(m: usize, n: usize) -> Result<Self> {
        if m < 1 || n < 2 {
            return Err(KacError::InvalidParams(format!(
                "sphere marginal needs M >= 1, N >= 2; got M={m}, N={n}"
            )));
        }
        // norm = S_{M-1} d^{M/2} int_0^{pi/2} sin^{M-1} cos^{N-1} dphi,
        // after r = sqrt(d) sin(phi); the integrand is smooth, so composite
        // Simpson converges fast.
        let d = (m + n) as f64;
        let log_sphere_area =
            (2.0f64).ln() + 0.5 * m as f64 * PI.ln() - ln_gamma(m as f64 / 2.0);
        let f = |phi: f64| -> f64 {
            phi.sin().powi(m as i32 - 1) * phi.cos().powi(n as i32 - 1)
        };
        let mut prev = f64::NAN;
        let mut integral = 0.0;
        let mut nodes = 64usize;
        for _ in 0..24 {
            let h = (PI / 2.0) / nodes as f64;
            let mut acc = f(0.0) + f(PI / 2.0);
            for i in 1..nodes {
                let w = if i % 2 == 1 { 4.0 } else { 2.0 };
                acc += w * f(h * i as f64);
            }
            integral = acc * h / 3.0;
            if (integral - prev).abs() < 1e-13 * integral.abs().max(1.0) {
                break;
            }
            prev = integral;
            nodes *= 2;
        }
        let log_norm = log_sphere_area + 0.5 * m as f64 * d.ln() + integral.ln();
        Ok(SphereMarginal { m, n, log_norm })
    }

    pub fn log_density(&self, v: &[f64]) -> Result<f64> {
        if v.len() != self.m {
            return Err(KacError::LengthMismatch(format!(
                "point has dim {}, marginal has M = {}",
                v.len(),
                self.m
            )));
        }
        let d = (self.m + self.n) as f64;
        let r2: f64 = v.iter().map(|x| x * x).sum();
        if r2 >= d {
            return Err(KacError::OffSphere { got: r2, expected: d });
        }
        Ok(0.5 * (self.n as f64 - 2.0) * (1.0 - r2 / d).ln() - self.log_norm)
    }

    /// Closed-form log normalization via the Beta function, for validation:
    /// norm = S_{M-1} d^{M/2} B(M/2, N/2) / 2.
    pub fn log_norm_closed_form(&self) -> f64 {
        let (m, n) = (self.m as f64, self.n as f64);
        let d = m + n;
        let log_sphere_area =
            (2.0f64).ln() + 0.5 * m * PI.ln() - ln_gamma(m / 2.0);
        log_sphere_area + 0.5 * m * d.ln() + ln_gamma(m / 2.0) + ln_gamma(n / 2.0)
            - ln_gamma(d / 2.0)
            - 2.0f64.ln()
    }

    pub fn log_norm(&self) -> f64 {
        self.log_norm
    }

    /// Integral of the density over its support by direct quadrature in the
    /// radial variable; should be 1.
    pub fn quadrature_mass(&self) -> f64 {
        let d = (self.m + self.n) as f64;
        let m = self.m as f64;
        let log_sphere_area = (2.0f64).ln() + 0.5 * m * PI.ln() - ln_gamma(m / 2.0);
        let f = |phi: f64| -> f64 {
            phi.sin().powi(self.m as i32 - 1) * phi.cos().powi(self.n as i32 - 1)
        };
        let nodes = 1 << 16;
        let h = (PI / 2.0) / nodes as f64;
        let mut acc = f(0.0) + f(PI / 2.0);
        for i in 1..nodes {
            let w = if i % 2 == 1 { 4.0 } else { 2.0 };
            acc += w * f(h * i as f64);
        }
        let integral = acc * h / 3.0;
        (log_sphere_area + 0.5 * m * d.ln() + integral.ln() - self.log_norm).exp()
    }
}

/// Log density of the M-dimensional Gaussian reference exp(-pi |x|^2).
pub fn gauss_reference_logdensity(v: &[f64]) -> f64 {
    -PI * v.iter().map(|x| x * x).sum::<f64>()
}
