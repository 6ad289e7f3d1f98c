//! The averaged matrix K, the closed-form coefficient C_k, the 2x2 matrix P
//! with its spectral decomposition, and a brute-force enumeration oracle.

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{KacError, Result};
use crate::model::{CollisionMeasure, KacParams, PairIndex, RotationHistory};

/// Default budget on evaluated matrix products in the brute-force sum.
pub const DEFAULT_BRUTE_FORCE_BUDGET: u64 = 100_000_000;

/// Spectral data of the 2x2 coefficient matrix P = I_2 - mu_nu/(Lambda N) [[N,-N],[-M,M]].
#[derive(Clone, Copy, Debug)]
pub struct DecayCoefficients {
    pub m: usize,
    pub n: usize,
    /// Entries of P, row major.
    pub p: [[f64; 2]; 2],
    /// Eigenvalue 1, eigenvector (1, 1).
    pub ell1: f64,
    /// Eigenvalue 1 - mu_nu (M+N) / (Lambda N), eigenvector (N, -M)/(M+N).
    pub ell2: f64,
}

impl DecayCoefficients {
    /// First component of P^k (1, 0)^T: the sum-rule coefficient C_k.
    pub fn c_k(&self, k: u32) -> f64 {
        let m = self.m as f64;
        let n = self.n as f64;
        m / (m + n) + n / (m + n) * self.ell2.powi(k as i32)
    }

    /// Second component of P^k (1, 0)^T: the reservoir-block coefficient.
    pub fn d_k(&self, k: u32) -> f64 {
        let m = self.m as f64;
        let n = self.n as f64;
        m / (m + n) * (1.0 - self.ell2.powi(k as i32))
    }

    /// P applied to a 2-vector.
    pub fn apply(&self, v: [f64; 2]) -> [f64; 2] {
        [
            self.p[0][0] * v[0] + self.p[0][1] * v[1],
            self.p[1][0] * v[0] + self.p[1][1] * v[1],
        ]
    }
}

/// The eigenvalue ell2 = 1 - mu_nu (M+N) / (Lambda N).
pub fn ell2(params: &KacParams) -> f64 {
    1.0 - params.mu_nu * (params.m + params.n) as f64 / (params.lambda * params.n as f64)
}

/// Closed form C_k = M/(N+M) + N/(M+N) ell2^k.
pub fn closed_form_ck(params: &KacParams, k: u32) -> f64 {
    let m = params.m as f64;
    let n = params.n as f64;
    m / (m + n) + n / (m + n) * ell2(params).powi(k as i32)
}

/// P with its eigenstructure.
pub fn spectral_p(params: &KacParams) -> DecayCoefficients {
    let m = params.m as f64;
    let n = params.n as f64;
    let c = params.mu_nu / (params.lambda * n);
    DecayCoefficients {
        m: params.m,
        n: params.n,
        p: [[1.0 - c * n, c * n], [c * m, 1.0 - c * m]],
        ell1: 1.0,
        ell2: ell2(params),
    }
}

struct Kahan {
    sum: f64,
    c: f64,
}

impl Kahan {
    fn new() -> Self {
        Kahan { sum: 0.0, c: 0.0 }
    }

    #[inline]
    fn add(&mut self, x: f64) {
        let y = x - self.c;
        let t = self.sum + y;
        self.c = (t - self.sum) - y;
        self.sum = t;
    }
}

/// Exact enumeration of K = sum over alpha-sequences and tensor-product angle
/// quadrature of lambda_{alpha_1} ... lambda_{alpha_k} A^T A.
///
/// Deterministic regardless of worker count: the reduction is sharded by the
/// first collision choice and combined in index order.
pub fn brute_force_k(
    params: &KacParams,
    nu: &CollisionMeasure,
    k: u32,
    budget: u64,
) -> Result<DMatrix<f64>> {
    let m = params.m;
    if k == 0 {
        return Ok(DMatrix::identity(m, m));
    }
    let pairs = params.weighted_pairs();
    let nodes = nu.nodes();
    let choices: Vec<(PairIndex, f64, f64, f64)> = pairs
        .iter()
        .flat_map(|&(pair, lw)| {
            nodes
                .iter()
                .map(move |node| (pair, node.cos, node.sin, lw * node.weight))
        })
        .collect();
    let n_choices = choices.len() as u64;
    let total: u64 = n_choices
        .checked_pow(k)
        .ok_or(KacError::BudgetExceeded { used: u64::MAX, budget })?;
    if total > budget {
        return Err(KacError::BudgetExceeded { used: total, budget });
    }

    // One shard per first-choice index; each shard enumerates the remaining
    // k-1 positions odometer style with Kahan accumulation per entry.
    let shards: Vec<Vec<Kahan>> = (0..choices.len())
        .into_par_iter()
        .map(|first| {
            let mut acc: Vec<Kahan> = (0..m * m).map(|_| Kahan::new()).collect();
            let mut odometer = vec![0usize; (k - 1) as usize];
            loop {
                let mut history = RotationHistory::identity(params.m, params.n);
                let (p0, c0, s0, w0) = choices[first];
                let mut weight = w0;
                history.push_cs(p0.i, p0.j, c0, s0);
                for &ix in &odometer {
                    let (pair, c, s, w) = choices[ix];
                    history.push_cs(pair.i, pair.j, c, s);
                    weight *= w;
                }
                let a = history.a();
                let ata = a.transpose() * a;
                for r in 0..m {
                    for col in 0..m {
                        acc[r * m + col].add(weight * ata[(r, col)]);
                    }
                }
                // advance odometer
                let mut pos = 0;
                loop {
                    if pos == odometer.len() {
                        return acc;
                    }
                    odometer[pos] += 1;
                    if odometer[pos] < choices.len() {
                        break;
                    }
                    odometer[pos] = 0;
                    pos += 1;
                }
            }
        })
        .collect();

    let mut out = DMatrix::zeros(m, m);
    for r in 0..m {
        for col in 0..m {
            let mut total = Kahan::new();
            for shard in &shards {
                total.add(shard[r * m + col].sum);
            }
            out[(r, col)] = total.sum;
        }
    }
    Ok(out)
}

/// The entropy/information decay factor of Theorems 1.1 and 1.3:
/// C(t) = M/(N+M) + N/(N+M) exp(-t mu_nu (N+M)/N).
pub fn decay_bound_gauss(params: &KacParams, t: f64) -> Result<f64> {
    if t < 0.0 {
        return Err(KacError::NegativeTime(t));
    }
    let m = params.m as f64;
    let n = params.n as f64;
    Ok(m / (m + n) + n / (m + n) * (-t * params.decay_rate()).exp())
}

/// The spherical factor of Theorem 1.5 / Corollary 1.6:
/// 2 (M/(M+N) + exp(-mu t) N/(M+N)) + M/N.
pub fn decay_bound_sphere(params: &KacParams, t: f64) -> Result<f64> {
    if t < 0.0 {
        return Err(KacError::NegativeTime(t));
    }
    let m = params.m as f64;
    let n = params.n as f64;
    Ok(2.0 * (m / (m + n) + (-params.mu * t).exp() * n / (m + n)) + m / n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::derive_params;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::PI;

    fn params_123() -> (KacParams, CollisionMeasure) {
        let nu = CollisionMeasure::uniform();
        (derive_params(1, 2, 0.0, 1.0, 1.0, &nu).unwrap(), nu)
    }

    #[test]
    fn closed_form_spot_values() {
        let (p, _) = params_123();
        assert_abs_diff_eq!(ell2(&p), 5.0 / 8.0, epsilon = 1e-15);
        assert_eq!(closed_form_ck(&p, 0), 1.0);
        assert_abs_diff_eq!(closed_form_ck(&p, 1), 0.75, epsilon = 1e-15);
        assert_abs_diff_eq!(closed_form_ck(&p, 2), 19.0 / 32.0, epsilon = 1e-15);
    }

    #[test]
    fn zero_coupling_means_constant_ck() {
        let nu = CollisionMeasure::uniform();
        let p = derive_params(2, 3, 1.0, 1.0, 0.0, &nu).unwrap();
        for k in 0..6 {
            assert_eq!(closed_form_ck(&p, k), 1.0);
        }
        let spec = spectral_p(&p);
        assert_eq!(spec.p, [[1.0, 0.0], [0.0, 1.0]]);
        assert_eq!(spec.ell2, 1.0);
    }

    #[test]
    fn spectral_p_row_sums_and_eigenpairs() {
        let (p, _) = params_123();
        let spec = spectral_p(&p);
        assert_abs_diff_eq!(spec.ell2, 5.0 / 8.0, epsilon = 1e-15);
        // P (1,1)^T = (1,1)^T
        let ones = spec.apply([1.0, 1.0]);
        assert_abs_diff_eq!(ones[0], 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(ones[1], 1.0, epsilon = 1e-14);
        // P (N,-M)^T = ell2 (N,-M)^T
        let v = spec.apply([p.n as f64, -(p.m as f64)]);
        assert_abs_diff_eq!(v[0], spec.ell2 * p.n as f64, epsilon = 1e-13);
        assert_abs_diff_eq!(v[1], -spec.ell2 * p.m as f64, epsilon = 1e-13);
        // decomposition of (1, 0)^T
        let m = p.m as f64;
        let n = p.n as f64;
        assert_abs_diff_eq!(m / (m + n) + n / (m + n), 1.0, epsilon = 1e-15);
        // mass conservation along (1,1): M C_k + N d_k = M
        for k in 0..8 {
            assert_abs_diff_eq!(
                m * spec.c_k(k) + n * spec.d_k(k),
                m,
                epsilon = 1e-13
            );
        }
    }

    #[test]
    fn ck_matches_iterated_p() {
        let (p, _) = params_123();
        let spec = spectral_p(&p);
        let mut v = [1.0, 0.0];
        for k in 0..8 {
            assert_abs_diff_eq!(v[0], spec.c_k(k), epsilon = 1e-14);
            assert_abs_diff_eq!(v[1], spec.d_k(k), epsilon = 1e-14);
            v = spec.apply(v);
        }
    }

    #[test]
    fn brute_force_identity_at_k_zero() {
        let (p, nu) = params_123();
        let k = brute_force_k(&p, &nu, 0, 1000).unwrap();
        assert_eq!(k, DMatrix::identity(1, 1));
    }

    #[test]
    fn brute_force_matches_closed_form_scalar_case() {
        let (p, nu) = params_123();
        let k1 = brute_force_k(&p, &nu, 1, DEFAULT_BRUTE_FORCE_BUDGET).unwrap();
        assert_abs_diff_eq!(k1[(0, 0)], 0.75, epsilon = 1e-12);
        let k2 = brute_force_k(&p, &nu, 2, DEFAULT_BRUTE_FORCE_BUDGET).unwrap();
        assert_abs_diff_eq!(k2[(0, 0)], 19.0 / 32.0, epsilon = 1e-12);
    }

    #[test]
    fn brute_force_matches_closed_form_matrix_case() {
        let nu = CollisionMeasure::atom_pi_half();
        let (ls, lr, mu) = crate::model::local_perturbation_rates(1.0, 2, 2).unwrap();
        let p = derive_params(2, 2, ls, lr, mu, &nu).unwrap();
        let k3 = brute_force_k(&p, &nu, 3, DEFAULT_BRUTE_FORCE_BUDGET).unwrap();
        let expect = closed_form_ck(&p, 3);
        for r in 0..2 {
            for c in 0..2 {
                let want = if r == c { expect } else { 0.0 };
                assert_abs_diff_eq!(k3[(r, c)], want, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn negative_ell2_still_agrees_with_enumeration() {
        // large mu_nu drives ell2 below zero; no clamping
        let nu = CollisionMeasure::atom_pi_half(); // sin^2 moment = 1
        let p = derive_params(1, 1, 0.0, 0.0, 3.0, &nu).unwrap();
        assert!(ell2(&p) < 0.0);
        for k in 1..4 {
            let bf = brute_force_k(&p, &nu, k, DEFAULT_BRUTE_FORCE_BUDGET).unwrap();
            assert_abs_diff_eq!(bf[(0, 0)], closed_form_ck(&p, k), epsilon = 1e-12);
        }
    }

    #[test]
    fn budget_is_enforced() {
        let (p, nu) = params_123();
        assert!(matches!(
            brute_force_k(&p, &nu, 4, 10),
            Err(KacError::BudgetExceeded { .. })
        ));
    }

    #[test]
    fn decay_bound_gauss_values() {
        let (p, _) = params_123();
        assert_eq!(decay_bound_gauss(&p, 0.0).unwrap(), 1.0);
        // rate mu_nu (M+N)/N = 3/4
        let got = decay_bound_gauss(&p, 1.0).unwrap();
        assert_abs_diff_eq!(
            got,
            1.0 / 3.0 + 2.0 / 3.0 * (-0.75f64).exp(),
            epsilon = 1e-15
        );
        assert_abs_diff_eq!(got, 0.6482444, epsilon = 1e-6);
        // monotone to M/(M+N)
        let far = decay_bound_gauss(&p, 1e3).unwrap();
        assert_abs_diff_eq!(far, 1.0 / 3.0, epsilon = 1e-12);
        assert!(decay_bound_gauss(&p, -0.1).is_err());
    }

    #[test]
    fn decay_bound_sphere_values() {
        let nu = CollisionMeasure::uniform();
        let p = derive_params(1, 10, 0.0, 0.0, 1.0, &nu).unwrap();
        assert_abs_diff_eq!(decay_bound_sphere(&p, 0.0).unwrap(), 2.1, epsilon = 1e-15);
        let got = decay_bound_sphere(&p, 2.0).unwrap();
        assert_abs_diff_eq!(
            got,
            2.0 * (1.0 / 11.0 + (-2.0f64).exp() * 10.0 / 11.0) + 0.1,
            epsilon = 1e-15
        );
        assert_abs_diff_eq!(got, 0.5278823, epsilon = 1e-6);
        let far = decay_bound_sphere(&p, 1e3).unwrap();
        assert_abs_diff_eq!(far, 2.0 / 11.0 + 0.1, epsilon = 1e-12);
    }

    #[test]
    fn ck_is_monotone_when_ell2_in_unit_interval() {
        let (p, _) = params_123();
        let mut prev = closed_form_ck(&p, 0);
        for k in 1..20 {
            let cur = closed_form_ck(&p, k);
            assert!(cur <= prev + 1e-15);
            assert!(cur >= 1.0 / 3.0 - 1e-15);
            prev = cur;
        }
    }

    #[test]
    fn poisson_resummation_matches_decay_bound() {
        let (p, _) = params_123();
        for &t in &[0.1, 0.5, 1.0, 2.0] {
            let lt = p.lambda * t;
            let mut pk = (-lt).exp();
            let mut sum = 0.0;
            for k in 0..200u32 {
                sum += pk * closed_form_ck(&p, k);
                pk *= lt / (k as f64 + 1.0);
            }
            assert_abs_diff_eq!(sum, decay_bound_gauss(&p, t).unwrap(), epsilon = 1e-12);
        }
    }

    #[test]
    fn off_diagonals_vanish_across_measures() {
        let nus = [
            CollisionMeasure::uniform(),
            CollisionMeasure::atom_pi_half(),
            CollisionMeasure::symmetric_atoms(PI / 3.0).unwrap(),
        ];
        for nu in &nus {
            let p = derive_params(2, 3, 1.0, 1.0, 2.0, nu).unwrap();
            for k in 1..=3u32 {
                let bf = brute_force_k(&p, nu, k, DEFAULT_BRUTE_FORCE_BUDGET).unwrap();
                let ck = closed_form_ck(&p, k);
                for r in 0..2 {
                    for c in 0..2 {
                        if r == c {
                            assert_abs_diff_eq!(bf[(r, c)], ck, epsilon = 1e-10);
                        } else {
                            assert!(bf[(r, c)].abs() < 1e-12);
                        }
                    }
                }
            }
        }
    }
}
