//! Kac model parameters, collision measures, single-collision rotations and
//! assembled collision histories with their block decomposition.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{KacError, Result};

/// Tolerance for the exact-measure invariants (weight normalization and the
/// vanishing sin*cos moment).
pub const MEASURE_TOL: f64 = 1e-14;

/// One quadrature node of the angle law, with the trigonometric values stored
/// explicitly so that special angles (multiples of pi/2) stay exact in f64.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QuadNode {
    pub theta: f64,
    pub cos: f64,
    pub sin: f64,
    pub weight: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub enum MeasureKind {
    /// Uniform law on [-pi, pi].
    Uniform,
    /// Finite collection of atoms (theta, weight).
    Atoms(Vec<(f64, f64)>),
}

/// The angle law nu, with exact quadrature nodes for trigonometric
/// polynomials up to degree 3.
#[derive(Clone, Debug)]
pub struct CollisionMeasure {
    kind: MeasureKind,
    nodes: Vec<QuadNode>,
}

/// JSON document form: {"kind":"uniform"} or
/// {"kind":"atoms","atoms":[{"theta":..,"weight":..}]}.
#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum MeasureSchema {
    Uniform,
    Atoms { atoms: Vec<AtomSchema> },
}

#[derive(Serialize, Deserialize)]
struct AtomSchema {
    theta: f64,
    weight: f64,
}

impl CollisionMeasure {
    /// Uniform measure on [-pi, pi]. The four equispaced nodes
    /// {-pi/2, 0, pi/2, pi} with equal weights integrate trigonometric
    /// polynomials up to degree 3 exactly.
    pub fn uniform() -> Self {
        let nodes = vec![
            QuadNode { theta: -PI / 2.0, cos: 0.0, sin: -1.0, weight: 0.25 },
            QuadNode { theta: 0.0, cos: 1.0, sin: 0.0, weight: 0.25 },
            QuadNode { theta: PI / 2.0, cos: 0.0, sin: 1.0, weight: 0.25 },
            QuadNode { theta: PI, cos: -1.0, sin: 0.0, weight: 0.25 },
        ];
        CollisionMeasure { kind: MeasureKind::Uniform, nodes }
    }

    /// Discrete measure from (theta, weight) atoms. Rejects atoms whose
    /// weights do not sum to one or that violate the moment hypothesis
    /// int sin(theta)cos(theta) dnu = 0.
    pub fn from_atoms(atoms: Vec<(f64, f64)>) -> Result<Self> {
        if atoms.is_empty() {
            return Err(KacError::InvalidMeasure("no atoms".into()));
        }
        for &(theta, w) in &atoms {
            if !theta.is_finite() || !w.is_finite() || w <= 0.0 {
                return Err(KacError::InvalidMeasure(format!(
                    "bad atom (theta={theta}, weight={w})"
                )));
            }
        }
        let total: f64 = atoms.iter().map(|&(_, w)| w).sum();
        if (total - 1.0).abs() > MEASURE_TOL {
            return Err(KacError::InvalidMeasure(format!(
                "weights sum to {total}, expected 1"
            )));
        }
        let nodes: Vec<QuadNode> = atoms
            .iter()
            .map(|&(theta, weight)| QuadNode {
                theta,
                cos: theta.cos(),
                sin: theta.sin(),
                weight,
            })
            .collect();
        let sincos: f64 = nodes.iter().map(|n| n.weight * n.sin * n.cos).sum();
        if sincos.abs() > MEASURE_TOL {
            return Err(KacError::InvalidMeasure(format!(
                "int sin cos dnu = {sincos:e}, hypothesis requires 0"
            )));
        }
        Ok(CollisionMeasure { kind: MeasureKind::Atoms(atoms), nodes })
    }

    /// Single atom at pi/2 (energy swap), which satisfies the moment
    /// hypothesis exactly.
    pub fn atom_pi_half() -> Self {
        CollisionMeasure {
            kind: MeasureKind::Atoms(vec![(PI / 2.0, 1.0)]),
            nodes: vec![QuadNode { theta: PI / 2.0, cos: 0.0, sin: 1.0, weight: 1.0 }],
        }
    }

    /// Two symmetric atoms at +-theta with equal weights.
    pub fn symmetric_atoms(theta: f64) -> Result<Self> {
        Self::from_atoms(vec![(theta, 0.5), (-theta, 0.5)])
    }

    pub fn kind(&self) -> &MeasureKind {
        &self.kind
    }

    /// Quadrature nodes, exact for trigonometric polynomials of degree <= 3.
    pub fn nodes(&self) -> &[QuadNode] {
        &self.nodes
    }

    /// int sin^2(theta) dnu, computed from the exact nodes.
    pub fn moment_sin2(&self) -> f64 {
        self.nodes.iter().map(|n| n.weight * n.sin * n.sin).sum()
    }

    /// int sin(theta)cos(theta) dnu; zero by construction.
    pub fn moment_sincos(&self) -> f64 {
        self.nodes.iter().map(|n| n.weight * n.sin * n.cos).sum()
    }

    /// Draw an angle from nu.
    pub fn sample<R: Rng>(&self, rng: &mut R) -> f64 {
        match &self.kind {
            MeasureKind::Uniform => rng.gen_range(-PI..PI),
            MeasureKind::Atoms(atoms) => {
                let u: f64 = rng.gen();
                let mut acc = 0.0;
                for &(theta, w) in atoms {
                    acc += w;
                    if u < acc {
                        return theta;
                    }
                }
                atoms.last().unwrap().0
            }
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let schema: MeasureSchema = serde_json::from_str(text)?;
        match schema {
            MeasureSchema::Uniform => Ok(Self::uniform()),
            MeasureSchema::Atoms { atoms } => {
                Self::from_atoms(atoms.into_iter().map(|a| (a.theta, a.weight)).collect())
            }
        }
    }

    pub fn to_json(&self) -> String {
        let schema = match &self.kind {
            MeasureKind::Uniform => MeasureSchema::Uniform,
            MeasureKind::Atoms(atoms) => MeasureSchema::Atoms {
                atoms: atoms
                    .iter()
                    .map(|&(theta, weight)| AtomSchema { theta, weight })
                    .collect(),
            },
        };
        serde_json::to_string(&schema).expect("measure serialization")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PairKind {
    SystemSystem,
    ReservoirReservoir,
    Cross,
}

/// An ordered pair of particle indices (0-based, i < j) with its class.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PairIndex {
    pub i: usize,
    pub j: usize,
    pub kind: PairKind,
}

impl PairIndex {
    /// 0-based indices i < j < m + n; the class is derived from the ranges.
    pub fn new(i: usize, j: usize, m: usize, n: usize) -> Result<Self> {
        let total = m + n;
        if i >= j || j >= total {
            return Err(KacError::InvalidPair { i, j, total });
        }
        let kind = if j < m {
            PairKind::SystemSystem
        } else if i >= m {
            PairKind::ReservoirReservoir
        } else {
            PairKind::Cross
        };
        Ok(PairIndex { i, j, kind })
    }
}

/// Model parameters with the derived jump-chain quantities.
#[derive(Clone, Copy, Debug)]
pub struct KacParams {
    pub m: usize,
    pub n: usize,
    /// System-system rate; zero when M = 1 (empty sum).
    pub lambda_s: f64,
    /// Reservoir-reservoir rate; zero when N = 1 (empty sum).
    pub lambda_r: f64,
    pub mu: f64,
    /// Total jump rate Lambda = (lambda_S M + lambda_R N + 2 mu M) / 2.
    pub lambda: f64,
    /// Effective cross rate mu_nu = mu * int sin^2 dnu.
    pub mu_nu: f64,
}

/// Lambda and per-pair weights per the jump-chain decomposition
/// L = Lambda (Q - I), where Q is a convex combination of rotation averages.
pub fn derive_params(
    m: usize,
    n: usize,
    lambda_s: f64,
    lambda_r: f64,
    mu: f64,
    nu: &CollisionMeasure,
) -> Result<KacParams> {
    if m < 1 || n < 1 {
        return Err(KacError::InvalidParams(format!("M={m}, N={n}; need M,N >= 1")));
    }
    for rate in [lambda_s, lambda_r, mu] {
        if rate < 0.0 || !rate.is_finite() {
            return Err(KacError::NegativeRate(rate));
        }
    }
    // Intra-group sums are empty for a single particle; the rate is ignored.
    let lambda_s = if m == 1 { 0.0 } else { lambda_s };
    let lambda_r = if n == 1 { 0.0 } else { lambda_r };
    let lambda = 0.5 * (lambda_s * m as f64 + lambda_r * n as f64 + 2.0 * mu * m as f64);
    if lambda <= 0.0 {
        return Err(KacError::ZeroTotalRate);
    }
    Ok(KacParams {
        m,
        n,
        lambda_s,
        lambda_r,
        mu,
        lambda,
        mu_nu: mu * nu.moment_sin2(),
    })
}

/// Remark-1.2 rates for a local perturbation of a single Kac system with
/// M + N particles: with these rates Lambda = lambda (M+N) and every pair
/// weight equals 1 / binom(M+N, 2).
pub fn local_perturbation_rates(lambda: f64, m: usize, n: usize) -> Result<(f64, f64, f64)> {
    if lambda <= 0.0 || !lambda.is_finite() {
        return Err(KacError::InvalidParams(format!("lambda = {lambda}, need > 0")));
    }
    let denom = (n + m - 1) as f64;
    Ok((
        2.0 * lambda * (m as f64 - 1.0) / denom,
        2.0 * lambda * (n as f64 - 1.0) / denom,
        2.0 * lambda * n as f64 / denom,
    ))
}

impl KacParams {
    /// Weight of a single system-system pair.
    pub fn system_pair_weight(&self) -> f64 {
        if self.m < 2 {
            0.0
        } else {
            self.lambda_s / ((self.m as f64 - 1.0) * self.lambda)
        }
    }

    /// Weight of a single reservoir-reservoir pair.
    pub fn reservoir_pair_weight(&self) -> f64 {
        if self.n < 2 {
            0.0
        } else {
            self.lambda_r / ((self.n as f64 - 1.0) * self.lambda)
        }
    }

    /// Weight of a single cross pair.
    pub fn cross_pair_weight(&self) -> f64 {
        self.mu / (self.n as f64 * self.lambda)
    }

    pub fn pair_weight(&self, pair: &PairIndex) -> f64 {
        match pair.kind {
            PairKind::SystemSystem => self.system_pair_weight(),
            PairKind::ReservoirReservoir => self.reservoir_pair_weight(),
            PairKind::Cross => self.cross_pair_weight(),
        }
    }

    /// All pairs with strictly positive weight, with their weights.
    pub fn weighted_pairs(&self) -> Vec<(PairIndex, f64)> {
        let total = self.m + self.n;
        let mut out = Vec::new();
        for i in 0..total {
            for j in (i + 1)..total {
                let pair = PairIndex::new(i, j, self.m, self.n).unwrap();
                let w = self.pair_weight(&pair);
                if w > 0.0 {
                    out.push((pair, w));
                }
            }
        }
        out
    }

    /// Probabilities of the three pair classes (system, reservoir, cross).
    pub fn class_probabilities(&self) -> [f64; 3] {
        let sys = self.system_pair_weight() * (self.m * self.m.saturating_sub(1) / 2) as f64;
        let res = self.reservoir_pair_weight() * (self.n * self.n.saturating_sub(1) / 2) as f64;
        let cross = self.cross_pair_weight() * (self.m * self.n) as f64;
        [sys, res, cross]
    }

    /// Draw a pair from the lambda_alpha distribution.
    pub fn sample_pair<R: Rng>(&self, rng: &mut R) -> PairIndex {
        let [sys, res, _] = self.class_probabilities();
        let u: f64 = rng.gen();
        if u < sys {
            // uniform system pair
            loop {
                let i = rng.gen_range(0..self.m);
                let j = rng.gen_range(0..self.m);
                if i != j {
                    return PairIndex::new(i.min(j), i.max(j), self.m, self.n).unwrap();
                }
            }
        } else if u < sys + res {
            loop {
                let i = self.m + rng.gen_range(0..self.n);
                let j = self.m + rng.gen_range(0..self.n);
                if i != j {
                    return PairIndex::new(i.min(j), i.max(j), self.m, self.n).unwrap();
                }
            }
        } else {
            let i = rng.gen_range(0..self.m);
            let j = self.m + rng.gen_range(0..self.n);
            PairIndex::new(i, j, self.m, self.n).unwrap()
        }
    }

    /// Exponential decay rate mu_nu (M+N) / N of the Theorems 1.1/1.3 bound.
    pub fn decay_rate(&self) -> f64 {
        self.mu_nu * (self.m + self.n) as f64 / self.n as f64
    }
}

/// In-place plane rotation of two state components by precomputed cos/sin:
/// x_i' = x_i c - x_j s, x_j' = x_i s + x_j c.
#[inline]
pub fn rotate_pair_in_place(state: &mut [f64], i: usize, j: usize, cos: f64, sin: f64) {
    let xi = state[i];
    let xj = state[j];
    state[i] = xi * cos - xj * sin;
    state[j] = xi * sin + xj * cos;
}

/// Single collision on a velocity vector, rotating components (i, j).
pub fn apply_collision(state: &[f64], pair: &PairIndex, theta: f64) -> Vec<f64> {
    let mut out = state.to_vec();
    rotate_pair_in_place(&mut out, pair.i, pair.j, theta.cos(), theta.sin());
    out
}

/// Left-multiply a matrix by the plane rotation acting on rows i and j.
pub fn plane_rotate_rows(mat: &mut DMatrix<f64>, i: usize, j: usize, cos: f64, sin: f64) {
    for col in 0..mat.ncols() {
        let xi = mat[(i, col)];
        let xj = mat[(j, col)];
        mat[(i, col)] = xi * cos - xj * sin;
        mat[(j, col)] = xi * sin + xj * cos;
    }
}

/// Right-multiply a matrix by the transpose of the plane rotation (columns).
pub fn plane_rotate_cols(mat: &mut DMatrix<f64>, i: usize, j: usize, cos: f64, sin: f64) {
    for row in 0..mat.nrows() {
        let xi = mat[(row, i)];
        let xj = mat[(row, j)];
        mat[(row, i)] = xi * cos - xj * sin;
        mat[(row, j)] = xi * sin + xj * cos;
    }
}

/// Conjugate a symmetric matrix by the plane rotation: S <- G S G^T.
pub fn plane_rotate_sym(mat: &mut DMatrix<f64>, i: usize, j: usize, cos: f64, sin: f64) {
    plane_rotate_rows(mat, i, j, cos, sin);
    plane_rotate_cols(mat, i, j, cos, sin);
}

/// Rotate a vector in place: x <- G x.
pub fn plane_rotate_vec(vec: &mut DVector<f64>, i: usize, j: usize, cos: f64, sin: f64) {
    let xi = vec[i];
    let xj = vec[j];
    vec[i] = xi * cos - xj * sin;
    vec[j] = xi * sin + xj * cos;
}

/// A collision history assembled into an (M+N) x (M+N) rotation with its
/// block decomposition R = (A B; C D), A being M x M.
#[derive(Clone, Debug)]
pub struct RotationHistory {
    pub m: usize,
    pub n: usize,
    pub matrix: DMatrix<f64>,
}

impl RotationHistory {
    pub fn identity(m: usize, n: usize) -> Self {
        RotationHistory { m, n, matrix: DMatrix::identity(m + n, m + n) }
    }

    /// Apply one more collision on top of the history (left multiplication,
    /// matching the order in which collisions act on states).
    pub fn push(&mut self, pair: &PairIndex, theta: f64) {
        plane_rotate_rows(&mut self.matrix, pair.i, pair.j, theta.cos(), theta.sin());
    }

    pub fn push_cs(&mut self, i: usize, j: usize, cos: f64, sin: f64) {
        plane_rotate_rows(&mut self.matrix, i, j, cos, sin);
    }

    pub fn a(&self) -> DMatrix<f64> {
        self.matrix.view((0, 0), (self.m, self.m)).into_owned()
    }

    pub fn b(&self) -> DMatrix<f64> {
        self.matrix.view((0, self.m), (self.m, self.n)).into_owned()
    }

    pub fn c(&self) -> DMatrix<f64> {
        self.matrix.view((self.m, 0), (self.n, self.m)).into_owned()
    }

    pub fn d(&self) -> DMatrix<f64> {
        self.matrix.view((self.m, self.m), (self.n, self.n)).into_owned()
    }
}

/// Assemble the product rotation of a (pair, angle) sequence. Chaining
/// `apply_collision` over the sequence equals multiplying by this matrix.
pub fn assemble_history(
    m: usize,
    n: usize,
    pairs: &[PairIndex],
    thetas: &[f64],
) -> Result<RotationHistory> {
    if pairs.len() != thetas.len() {
        return Err(KacError::LengthMismatch(format!(
            "{} pairs vs {} angles",
            pairs.len(),
            thetas.len()
        )));
    }
    let mut history = RotationHistory::identity(m, n);
    for (pair, &theta) in pairs.iter().zip(thetas) {
        history.push(pair, theta);
    }
    Ok(history)
}
