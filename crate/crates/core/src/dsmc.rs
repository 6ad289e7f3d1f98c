//! Direct stochastic simulation of the jump chain: a rate-Lambda exponential
//! clock per replica, a categorical pair choice with the lambda_alpha
//! weights, and a collision angle drawn from the measure. Works on R^{M+N}
//! with a Maxwellian reservoir and on the sphere of radius sqrt(M+N).

use std::f64::consts::PI;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{KacError, Result};
use crate::gaussian::{standard_normal, MixtureSampler};
use crate::model::{rotate_pair_in_place, CollisionMeasure, KacParams, PairKind};

/// Exact-radius rescaling period (collisions per replica) on the sphere.
const SPHERE_RENORM_PERIOD: u64 = 10_000;
/// Rejection-sampler guard: abort below this acceptance rate.
const MIN_ACCEPTANCE: f64 = 1e-4;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Geometry {
    Gauss,
    Sphere,
}

/// A population of independent replicas of the (M+N)-velocity state, each
/// with its own RNG stream keyed by (seed, replica index).
pub struct ParticleEnsemble {
    pub geometry: Geometry,
    pub m: usize,
    pub n: usize,
    pub time: f64,
    pub seed: u64,
    /// replicas x (M+N), row-major.
    pub states: Vec<Vec<f64>>,
    pub collision_counts: Vec<u64>,
    rngs: Vec<ChaCha8Rng>,
}

fn replica_rng(seed: u64, replica: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(replica as u64);
    rng
}

impl ParticleEnsemble {
    /// Product initial data: system block from the sampler, reservoir block
    /// i.i.d. Gaussian with variance 1/(2 pi).
    pub fn init_gauss(
        params: &KacParams,
        f0_sampler: &MixtureSampler,
        replicas: usize,
        seed: u64,
    ) -> Result<Self> {
        if replicas < 1 {
            return Err(KacError::InvalidConfig("need at least one replica".into()));
        }
        let (m, n) = (params.m, params.n);
        let scale = 1.0 / (2.0 * PI).sqrt();
        let mut states = Vec::with_capacity(replicas);
        let mut rngs = Vec::with_capacity(replicas);
        for r in 0..replicas {
            let mut rng = replica_rng(seed, r);
            let v = f0_sampler.sample(&mut rng);
            let mut state = Vec::with_capacity(m + n);
            state.extend(v.iter().copied());
            for _ in 0..n {
                state.push(scale * standard_normal(&mut rng));
            }
            states.push(state);
            rngs.push(rng);
        }
        Ok(ParticleEnsemble {
            geometry: Geometry::Gauss,
            m,
            n,
            time: 0.0,
            seed,
            states,
            collision_counts: vec![0; replicas],
            rngs,
        })
    }

    /// Rejection sampling on the sphere of radius sqrt(M+N): uniform
    /// proposals (normalized Gaussian vectors), accepted with probability
    /// g(v) / g_max, where g is a density factor depending on the system
    /// block only.
    pub fn init_sphere<G>(
        params: &KacParams,
        g: G,
        g_max: f64,
        replicas: usize,
        seed: u64,
    ) -> Result<Self>
    where
        G: Fn(&[f64]) -> f64,
    {
        if replicas < 1 {
            return Err(KacError::InvalidConfig("need at least one replica".into()));
        }
        if !(g_max > 0.0) {
            return Err(KacError::InvalidConfig(format!("g_max = {g_max}, need > 0")));
        }
        let (m, n) = (params.m, params.n);
        let dim = m + n;
        let radius = (dim as f64).sqrt();
        let max_attempts = ((replicas as f64 / MIN_ACCEPTANCE) as u64).max(100_000);
        let mut states = Vec::with_capacity(replicas);
        let mut rngs = Vec::with_capacity(replicas);
        let mut attempts: u64 = 0;
        for r in 0..replicas {
            let mut rng = replica_rng(seed, r);
            let state = loop {
                attempts += 1;
                if attempts > max_attempts {
                    return Err(KacError::LowAcceptance(
                        states.len() as f64 / attempts as f64,
                    ));
                }
                let mut x: Vec<f64> = (0..dim).map(|_| standard_normal(&mut rng)).collect();
                let norm = x.iter().map(|a| a * a).sum::<f64>().sqrt();
                if norm == 0.0 {
                    continue;
                }
                for a in &mut x {
                    *a *= radius / norm;
                }
                let accept = g(&x[..m]) / g_max;
                if rng.gen::<f64>() < accept {
                    break x;
                }
            };
            states.push(state);
            rngs.push(rng);
        }
        Ok(ParticleEnsemble {
            geometry: Geometry::Sphere,
            m,
            n,
            time: 0.0,
            seed,
            states,
            collision_counts: vec![0; replicas],
            rngs,
        })
    }

    pub fn replicas(&self) -> usize {
        self.states.len()
    }

    /// The v-block of every replica (replicas x M).
    pub fn checkpoint_marginal(&self) -> Vec<Vec<f64>> {
        self.states.iter().map(|s| s[..self.m].to_vec()).collect()
    }

    /// Advance every replica to the last grid time, recording the system
    /// energy |v|^2 at each grid point (paths are piecewise constant, so the
    /// recorded state is the one after the last event before the grid time).
    pub fn run(
        &mut self,
        params: &KacParams,
        nu: &CollisionMeasure,
        t_grid: &[f64],
    ) -> Result<TrajectoryObservables> {
        if t_grid.is_empty() {
            return Err(KacError::InvalidTimeGrid("empty grid".into()));
        }
        let mut prev = self.time;
        for &t in t_grid {
            if t < prev {
                return Err(KacError::InvalidTimeGrid(format!(
                    "grid time {t} precedes {prev}"
                )));
            }
            prev = t;
        }
        let m = self.m;
        let dim = self.m + self.n;
        let lambda = params.lambda;
        let sphere = self.geometry == Geometry::Sphere;
        let start = self.time;

        struct ReplicaOut {
            energies: Vec<f64>,
            class_counts: [u64; 3],
            collisions: u64,
        }

        let outs: Vec<ReplicaOut> = self
            .states
            .par_iter_mut()
            .zip(self.rngs.par_iter_mut())
            .zip(self.collision_counts.par_iter_mut())
            .map(|((state, rng), count)| {
                let mut energies = Vec::with_capacity(t_grid.len());
                let mut class_counts = [0u64; 3];
                let mut collisions = 0u64;
                let mut t = start;
                let mut next_event = t + exp_draw(rng) / lambda;
                for &tg in t_grid {
                    while next_event <= tg {
                        let pair = params.sample_pair(rng);
                        let theta = nu.sample(rng);
                        let (sin, cos) = theta.sin_cos();
                        rotate_pair_in_place(state, pair.i, pair.j, cos, sin);
                        t = next_event;
                        next_event = t + exp_draw(rng) / lambda;
                        collisions += 1;
                        class_counts[match pair.kind {
                            PairKind::SystemSystem => 0,
                            PairKind::ReservoirReservoir => 1,
                            PairKind::Cross => 2,
                        }] += 1;
                        if sphere && (*count + collisions) % SPHERE_RENORM_PERIOD == 0 {
                            renormalize_sphere(state, dim);
                        }
                    }
                    energies.push(state[..m].iter().map(|x| x * x).sum());
                }
                *count += collisions;
                ReplicaOut { energies, class_counts, collisions }
            })
            .collect();

        self.time = *t_grid.last().unwrap();
        let n_rep = outs.len() as f64;
        let mut mean = vec![0.0; t_grid.len()];
        let mut stderr = vec![0.0; t_grid.len()];
        let mut per_replica_energy = vec![Vec::with_capacity(outs.len()); t_grid.len()];
        for out in &outs {
            for (gi, &e) in out.energies.iter().enumerate() {
                mean[gi] += e;
                per_replica_energy[gi].push(e);
            }
        }
        for gi in 0..t_grid.len() {
            mean[gi] /= n_rep;
            let var = per_replica_energy[gi]
                .iter()
                .map(|e| (e - mean[gi]).powi(2))
                .sum::<f64>()
                / n_rep;
            stderr[gi] = (var / n_rep).sqrt();
        }
        let mut class_counts = [0u64; 3];
        let mut total = 0u64;
        for out in &outs {
            for c in 0..3 {
                class_counts[c] += out.class_counts[c];
            }
            total += out.collisions;
        }
        Ok(TrajectoryObservables {
            times: t_grid.to_vec(),
            system_energy_mean: mean,
            system_energy_stderr: stderr,
            per_replica_energy,
            class_counts,
            total_collisions: total,
        })
    }

    /// Total kinetic energy |x|^2 summed over replicas.
    pub fn total_energy(&self) -> f64 {
        self.states
            .iter()
            .map(|s| s.iter().map(|x| x * x).sum::<f64>())
            .sum()
    }

    /// Largest deviation of |x|^2 from M+N across replicas.
    pub fn max_radius_error(&self) -> f64 {
        let target = (self.m + self.n) as f64;
        self.states
            .iter()
            .map(|s| (s.iter().map(|x| x * x).sum::<f64>() - target).abs())
            .fold(0.0, f64::max)
    }
}

fn exp_draw<R: Rng>(rng: &mut R) -> f64 {
    loop {
        let u: f64 = rng.gen();
        if u > 0.0 {
            return -u.ln();
        }
    }
}

fn renormalize_sphere(state: &mut [f64], dim: usize) {
    let norm2: f64 = state.iter().map(|x| x * x).sum();
    if norm2 > 0.0 {
        let scale = (dim as f64 / norm2).sqrt();
        for x in state {
            *x *= scale;
        }
    }
}

#[derive(Clone, Debug)]
pub struct TrajectoryObservables {
    pub times: Vec<f64>,
    pub system_energy_mean: Vec<f64>,
    pub system_energy_stderr: Vec<f64>,
    /// Per grid time, the system energy of every replica.
    pub per_replica_energy: Vec<Vec<f64>>,
    /// Collision tallies by pair class (system, reservoir, cross).
    pub class_counts: [u64; 3],
    pub total_collisions: u64,
}

/// Least-squares fit of y(t) = c + a e^{-r t}: for each candidate rate the
/// optimal (c, a) is linear, and the rate is located by golden-section
/// search on the residual sum of squares over [lo, hi].
pub fn fit_offset_exponential(times: &[f64], values: &[f64], lo: f64, hi: f64) -> (f64, f64, f64) {
    assert_eq!(times.len(), values.len());
    let sse = |r: f64| -> (f64, f64, f64) {
        // linear LSQ in (c, a) against the basis {1, e^{-rt}}
        let n = times.len() as f64;
        let (mut sb, mut sbb, mut sy, mut sby) = (0.0, 0.0, 0.0, 0.0);
        for (&t, &y) in times.iter().zip(values) {
            let b = (-r * t).exp();
            sb += b;
            sbb += b * b;
            sy += y;
            sby += b * y;
        }
        let det = n * sbb - sb * sb;
        let (c, a) = if det.abs() < 1e-14 {
            (sy / n, 0.0)
        } else {
            ((sbb * sy - sb * sby) / det, (n * sby - sb * sy) / det)
        };
        let err: f64 = times
            .iter()
            .zip(values)
            .map(|(&t, &y)| (y - c - a * (-r * t).exp()).powi(2))
            .sum();
        (err, c, a)
    };
    let phi = (5.0f64.sqrt() - 1.0) / 2.0;
    let (mut lo, mut hi) = (lo, hi);
    let mut x1 = hi - phi * (hi - lo);
    let mut x2 = lo + phi * (hi - lo);
    let (mut f1, mut f2) = (sse(x1).0, sse(x2).0);
    for _ in 0..200 {
        if f1 < f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - phi * (hi - lo);
            f1 = sse(x1).0;
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + phi * (hi - lo);
            f2 = sse(x2).0;
        }
        if hi - lo < 1e-12 * (1.0 + hi.abs()) {
            break;
        }
    }
    let r = 0.5 * (lo + hi);
    let (_, c, a) = sse(r);
    (c, a, r)
}

/// Fit the relaxation rate per replica group and return (mean rate, stderr)
/// over the groups. Group g owns the replicas with index = g mod groups.
pub fn fit_rate_blocked(
    observables: &TrajectoryObservables,
    groups: usize,
    lo: f64,
    hi: f64,
) -> Result<(f64, f64)> {
    let replicas = observables
        .per_replica_energy
        .first()
        .map(|v| v.len())
        .unwrap_or(0);
    if groups < 2 || replicas < groups {
        return Err(KacError::InvalidConfig(format!(
            "need >= 2 groups and >= {groups} replicas"
        )));
    }
    let mut rates = Vec::with_capacity(groups);
    for g in 0..groups {
        let values: Vec<f64> = observables
            .per_replica_energy
            .iter()
            .map(|at_t| {
                let (mut sum, mut cnt) = (0.0, 0usize);
                for (r, &e) in at_t.iter().enumerate() {
                    if r % groups == g {
                        sum += e;
                        cnt += 1;
                    }
                }
                sum / cnt as f64
            })
            .collect();
        let (_, _, r) = fit_offset_exponential(&observables.times, &values, lo, hi);
        rates.push(r);
    }
    let mean = rates.iter().sum::<f64>() / groups as f64;
    let var = rates.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (groups as f64 - 1.0);
    Ok((mean, (var / groups as f64).sqrt()))
}
