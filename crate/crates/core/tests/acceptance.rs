//! End-to-end acceptance checks. Each test exercises one headline claim and
//! prints a single verdict line (visible with `--nocapture`).

use std::f64::consts::PI;

use kac_core::dsmc::{fit_rate_blocked, ParticleEnsemble};
use kac_core::estimators::{gauss_reference_logdensity, relative_entropy_knn, SphereMarginal};
use kac_core::gaussian::{
    check_ou_identities, entropy_information, GaussianComponent, GaussianMixture, QuadratureOpts,
};
use kac_core::model::{derive_params, local_perturbation_rates, CollisionMeasure, KacParams};
use kac_core::series::{evolve_marginal, verify_entropy_bound, verify_information_bound, SeriesConfig};
use kac_core::spherical::{
    check_pointwise_inequality, random_sphere_point, sigma0_direction_average, sigma1,
    BlockRotation, ExpQuadratic,
};
use kac_core::sum_rule::{
    brute_force_k, closed_form_ck, decay_bound_sphere, ell2, DEFAULT_BRUTE_FORCE_BUDGET,
};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn verdict(pass: bool) -> &'static str {
    if pass {
        "PASS"
    } else {
        "FAIL"
    }
}

fn remark_params(m: usize, n: usize, nu: &CollisionMeasure) -> KacParams {
    let (ls, lr, mu) = local_perturbation_rates(1.0, m, n).unwrap();
    derive_params(m, n, ls, lr, mu, nu).unwrap()
}

/// The four-point quadrature of the uniform angle measure, used as an atomic
/// measure in its own right so that stochastic simulation and the
/// deterministic expansion evolve exactly the same dynamics.
fn four_atom_measure() -> CollisionMeasure {
    CollisionMeasure::from_atoms(vec![
        (-PI / 2.0, 0.25),
        (0.0, 0.25),
        (PI / 2.0, 0.25),
        (PI, 0.25),
    ])
    .unwrap()
}

#[test]
fn criterion_1_sum_rule_vs_exhaustive_enumeration() {
    let measures = vec![
        CollisionMeasure::uniform(),
        CollisionMeasure::atom_pi_half(),
        CollisionMeasure::symmetric_atoms(PI / 3.0).unwrap(),
    ];
    let mut max_err: f64 = 0.0;
    for &(m, n) in &[(1usize, 2usize), (1, 3), (2, 2), (2, 3)] {
        for nu in &measures {
            for rate_set in 0..2 {
                let (ls, lr, mu) = if rate_set == 0 {
                    local_perturbation_rates(1.0, m, n).unwrap()
                } else {
                    (1.0, 1.0, 2.0)
                };
                let params = derive_params(m, n, ls, lr, mu, nu).unwrap();
                for k in 0..=4u32 {
                    let kmat = brute_force_k(&params, nu, k, DEFAULT_BRUTE_FORCE_BUDGET).unwrap();
                    let ck = closed_form_ck(&params, k);
                    for i in 0..m {
                        for j in 0..m {
                            let want = if i == j { ck } else { 0.0 };
                            max_err = max_err.max((kmat[(i, j)] - want).abs());
                        }
                    }
                }
            }
        }
    }
    let pass = max_err < 1e-10;
    println!(
        "criterion 1 (sum rule matrix vs exhaustive history enumeration): {} (max error {max_err:.3e})",
        verdict(pass)
    );
    assert!(pass);
}

#[test]
fn criterion_2_exact_spot_values() {
    let nu = CollisionMeasure::uniform();
    let params = derive_params(1, 2, 0.0, 1.0, 1.0, &nu).unwrap();
    let e1 = (ell2(&params) - 5.0 / 8.0).abs();
    let e2 = (closed_form_ck(&params, 1) - 3.0 / 4.0).abs();
    let e3 = (closed_form_ck(&params, 2) - 19.0 / 32.0).abs();
    let pass = e1 < 1e-14 && e2 < 1e-14 && e3 < 1e-14;
    println!(
        "criterion 2 (closed-form spot values 5/8, 3/4, 19/32): {} (errors {e1:.1e}, {e2:.1e}, {e3:.1e})",
        verdict(pass)
    );
    assert!(pass);
}

#[test]
fn criterion_3_relaxation_rate_from_simulation() {
    let nu = CollisionMeasure::uniform();
    let params = remark_params(1, 8, &nu);
    let rate = params.decay_rate();
    assert!((rate - 9.0 / 8.0).abs() < 1e-14);

    let replicas = 100_000;
    let sampler = GaussianMixture::gauss_1d(2.0).sampler().unwrap();
    let mut ens = ParticleEnsemble::init_gauss(&params, &sampler, replicas, 11).unwrap();
    let grid: Vec<f64> = (1..=10).map(|i| 0.4 * i as f64 / rate).collect();
    let obs = ens.run(&params, &nu, &grid).unwrap();
    let (fitted, stderr) = fit_rate_blocked(&obs, 20, 0.1 * rate, 10.0 * rate).unwrap();
    let rate_ok = (fitted - rate).abs() < 3.0 * stderr;

    // control: equilibrium initial data must stay flat
    let eq_sampler = GaussianMixture::gauss_1d(1.0).sampler().unwrap();
    let mut eq = ParticleEnsemble::init_gauss(&params, &eq_sampler, replicas, 12).unwrap();
    let eq_obs = eq.run(&params, &nu, &grid).unwrap();
    let target = 1.0 / (2.0 * PI);
    let mut over3 = 0usize;
    let mut flat_ok = true;
    for (mean, se) in eq_obs.system_energy_mean.iter().zip(&eq_obs.system_energy_stderr) {
        let dev = (mean - target).abs() / se;
        if dev > 3.0 {
            over3 += 1;
        }
        flat_ok &= dev < 4.0;
    }
    flat_ok &= over3 <= 1;

    let pass = rate_ok && flat_ok;
    println!(
        "criterion 3 (fitted relaxation rate {fitted:.4} +- {stderr:.4} vs model {rate:.4}, flat control): {}",
        verdict(pass)
    );
    assert!(pass);
}

#[test]
fn criterion_4_entropy_decay_bound() {
    let nu = four_atom_measure();
    let f0 = GaussianMixture::gauss_1d(2.0);
    let grid = [0.25, 0.5, 1.0, 2.0];
    let mut all_pass = true;
    let mut max_tol: f64 = 0.0;
    for &n in &[2usize, 4usize] {
        let params = remark_params(1, n, &nu);
        let cfg = SeriesConfig::enumerate(&params, 2.0, 1e-10).unwrap();
        let report = verify_entropy_bound(&params, &f0, &nu, &cfg, &grid).unwrap();
        all_pass &= report.all_pass;
        for check in &report.checks {
            max_tol = max_tol.max(check.tolerance);
        }
    }
    let tol_ok = max_tol <= 1e-4;

    // cross-check: stochastic simulation + nearest-neighbor estimate at t = 1
    let params = remark_params(1, 2, &nu);
    let cfg = SeriesConfig::enumerate(&params, 1.0, 1e-10).unwrap();
    let evolved = evolve_marginal(&params, &f0, &nu, &cfg).unwrap();
    let s_series = entropy_information(&evolved.normalized_mixture(), &QuadratureOpts::default())
        .unwrap()
        .entropy;
    let sampler = f0.sampler().unwrap();
    let mut ens = ParticleEnsemble::init_gauss(&params, &sampler, 100_000, 21).unwrap();
    ens.run(&params, &nu, &[1.0]).unwrap();
    let est = relative_entropy_knn(&ens.checkpoint_marginal(), gauss_reference_logdensity, 5).unwrap();
    let cross_ok = (est.value - s_series).abs() < 3.0 * est.stderr + 0.01;

    let pass = all_pass && tol_ok && cross_ok;
    println!(
        "criterion 4 (entropy bound on time grid, max tolerance {max_tol:.2e}; simulation cross-check {:.4} vs {:.4} +- {:.4}): {}",
        s_series, est.value, est.stderr, verdict(pass)
    );
    assert!(pass);
}

#[test]
fn criterion_5_information_decay_bound() {
    let nu = four_atom_measure();
    let f0 = GaussianMixture::gauss_1d(2.0);
    let grid = [0.25, 0.5, 1.0, 2.0];
    let mut all_pass = true;
    let mut max_tol: f64 = 0.0;
    for &n in &[2usize, 4usize] {
        let params = remark_params(1, n, &nu);
        let cfg = SeriesConfig::enumerate(&params, 2.0, 1e-10).unwrap();
        let report = verify_information_bound(&params, &f0, &nu, &cfg, &grid).unwrap();
        all_pass &= report.all_pass;
        for check in &report.checks {
            max_tol = max_tol.max(check.tolerance);
        }
    }
    let pass = all_pass && max_tol <= 1e-4;
    println!(
        "criterion 5 (Fisher information bound on time grid, max tolerance {max_tol:.2e}): {}",
        verdict(pass)
    );
    assert!(pass);
}

#[test]
fn criterion_6_smoothing_flow_identities() {
    let s_grid: Vec<f64> = (0..=12).map(|i| 0.25 * i as f64).collect();
    let mut mixtures = vec![GaussianMixture::gauss_1d(2.0)];
    let mut rng = ChaCha8Rng::seed_from_u64(123);
    for _ in 0..5 {
        let k = rng.gen_range(2..=3);
        let mut comps = Vec::new();
        let mut total = 0.0;
        for _ in 0..k {
            let w: f64 = rng.gen_range(0.2..1.0);
            total += w;
            comps.push(GaussianComponent {
                weight: w,
                mean: DVector::from_element(1, rng.gen_range(-1.0..1.0)),
                cov: DMatrix::from_element(1, 1, rng.gen_range(0.3..2.0) / (2.0 * PI)),
            });
        }
        for c in &mut comps {
            c.weight /= total;
        }
        mixtures.push(GaussianMixture::from_components(1, comps).unwrap());
    }
    let mut pass = true;
    let mut worst_deriv: f64 = 0.0;
    for mix in &mixtures {
        let report = check_ou_identities(mix, &s_grid, 1e-6).unwrap();
        pass &= report.max_contractivity_violation <= 1e-8;
        pass &= report.max_derivative_residual <= 1e-6;
        pass &= report.integral_residual <= 1e-6;
        pass &= report.log_sobolev_slack <= 1e-8;
        worst_deriv = worst_deriv.max(report.max_derivative_residual);
    }
    println!(
        "criterion 6 (smoothing-flow contractivity/derivative/integral/log-Sobolev on 6 mixtures, worst derivative residual {worst_deriv:.2e}): {}",
        verdict(pass)
    );
    assert!(pass);
}

#[test]
fn criterion_7_spherical_inequality_chain() {
    let nu = CollisionMeasure::uniform();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut pointwise_ok = true;
    let mut min_rel_slack = f64::INFINITY;
    let mut trials_done = 0usize;
    for &m in &[1usize, 2, 3] {
        for &n in &[2usize, 3, 8] {
            let params = remark_params(m, n, &nu);
            for _ in 0..1200 {
                let f = ExpQuadratic::random(m, 0.5, &mut rng);
                let r = BlockRotation::random(&params, &nu, 6, &mut rng);
                let (v, w) = random_sphere_point(m, n, &mut rng);
                let check = check_pointwise_inequality(&f, &r, &v, &w).unwrap();
                pointwise_ok &= check.pass;
                min_rel_slack = min_rel_slack.min(check.slack / check.scale);
                trials_done += 1;
            }
        }
    }

    // direction average of the outer-product term against its closed form
    let combos = [(1usize, 2usize), (2, 3), (3, 8)];
    let mut over3 = 0usize;
    let mut avg_ok = true;
    for trial in 0..100 {
        let (m, n) = combos[trial % combos.len()];
        let params = remark_params(m, n, &nu);
        let f = ExpQuadratic::random(m, 0.5, &mut rng);
        let r = BlockRotation::random(&params, &nu, 6, &mut rng);
        let (v, w) = random_sphere_point(m, n, &mut rng);
        let s1 = sigma1(&f, &r, &v, &w).unwrap();
        let (avg, stderr) = sigma0_direction_average(&f, &r, &v, w.norm(), 100_000, 900 + trial as u64);
        let dev = (avg - s1).abs() / stderr.max(1e-300);
        if dev > 3.0 {
            over3 += 1;
        }
        avg_ok &= dev < 4.5;
    }
    avg_ok &= over3 <= 2;

    let pass = pointwise_ok && avg_ok;
    println!(
        "criterion 7 (pointwise inequality on {trials_done} trials, min relative slack {min_rel_slack:.2e}; direction average {over3}/100 beyond 3 sigma): {}",
        verdict(pass)
    );
    assert!(pass);
}

#[test]
fn criterion_8_sphere_entropy_decay() {
    let nu = CollisionMeasure::uniform();
    let params = remark_params(1, 8, &nu);
    let marginal = SphereMarginal::new(1, 8).unwrap();
    let reference = |v: &[f64]| marginal.log_density(v).unwrap_or(f64::NAN);

    let g = |v: &[f64]| (-0.5 * v.iter().map(|x| x * x).sum::<f64>()).exp();
    let mut ens = ParticleEnsemble::init_sphere(&params, g, 1.0, 100_000, 5).unwrap();
    let s0 = relative_entropy_knn(&ens.checkpoint_marginal(), reference, 5).unwrap();

    let mut pass = s0.value > 0.05;
    let mut lines = Vec::new();
    for &t in &[0.5, 1.0, 2.0] {
        ens.run(&params, &nu, &[t]).unwrap();
        let est = relative_entropy_knn(&ens.checkpoint_marginal(), reference, 5).unwrap();
        let factor = decay_bound_sphere(&params, t).unwrap();
        let bound = factor * s0.value + 3.0 * (est.stderr + factor * s0.stderr) + 0.01;
        pass &= est.value <= bound;
        lines.push(format!("t={t}: {:.4} <= {:.4}", est.value, bound));
    }
    println!(
        "criterion 8 (sphere entropy decay, S(0) = {:.4} +- {:.4}; {}): {}",
        s0.value,
        s0.stderr,
        lines.join(", "),
        verdict(pass)
    );
    assert!(pass);
}
