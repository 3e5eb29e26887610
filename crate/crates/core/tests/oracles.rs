//! Checks against independently computed reference values.

use dpsurvey::agents::{CostModel, OffThreshold, Strategy, StrategyProfile};
use dpsurvey::equilibrium::{
    accuracy_experiment, best_response_audit, beta_rule, epsilon_rule, Scenario,
};
use dpsurvey::mechanism::{Mechanism, MechanismConfig, Report};
use dpsurvey::priors::{
    cost_threshold, posterior_bit_prob, posterior_clamped_mean, sample_population, CostDist,
    PriorSpec,
};
use dpsurvey::privacy::{dp_audit, laplace_sample, AuditSettings, NoiseMode, NoiseSpec};
use dpsurvey::rng::{open_unit, stream_rng, SimRng};
use dpsurvey::stats::{Verdict, Z99};
use rayon::prelude::*;

fn uniform_costs() -> CostDist {
    CostDist::Uniform { lo: 0.0, hi: 1.0 }
}

fn flat_prior() -> PriorSpec {
    PriorSpec::beta(1.0, 1.0, uniform_costs(), uniform_costs())
}

/// `Pr[Binomial(n, p) >= k]` by direct summation of the pmf.
fn binomial_upper_tail(n: u64, p: f64, k: u64) -> f64 {
    if p <= 0.0 {
        return if k == 0 { 1.0 } else { 0.0 };
    }
    if p >= 1.0 {
        return 1.0;
    }
    let mut log_pmf = n as f64 * (1.0 - p).ln();
    let mut tail = 0.0;
    for j in 0..=n {
        if j >= k {
            tail += log_pmf.exp();
        }
        log_pmf += ((n - j) as f64).ln() - ((j + 1) as f64).ln() + p.ln() - (1.0 - p).ln();
    }
    tail
}

#[test]
fn population_threshold_matches_binomial_tail() {
    let t = cost_threshold(&flat_prior(), 0.1, 0.1, 100, 1000, 0).unwrap();
    let k = (1..=10_000)
        .find(|&k| binomial_upper_tail(100, k as f64 * 1e-4, 90) >= 0.9)
        .unwrap();
    assert!(
        (t.tau_population - k as f64 * 1e-4).abs() < 1e-9,
        "{} vs {}",
        t.tau_population,
        k as f64 * 1e-4
    );
    assert!((t.tau_conditional - 0.9).abs() < 1e-12);
    assert_eq!(t.tau, t.tau_population.max(t.tau_conditional));
}

#[test]
fn point_mass_costs_fix_the_threshold() {
    for c in [0.0, 0.7] {
        let pm = CostDist::PointMass { value: c };
        let prior = PriorSpec::beta(2.0, 3.0, pm, pm);
        for (a, d) in [(0.1, 0.1), (0.3, 0.01)] {
            assert_eq!(cost_threshold(&prior, a, d, 50, 500, 4).unwrap().tau, c);
        }
    }
}

/// Draws the other agents' bits one at a time, unlike the library, which
/// draws their sum.
fn brute_force_clamped(
    theta_given_one: impl Fn(f64) -> f64 + Sync,
    n: usize,
    eps: f64,
    samples: u64,
) -> (f64, f64) {
    let values: Vec<f64> = (0..samples)
        .into_par_iter()
        .map(|t| {
            let mut rng = stream_rng(0xbeef, t);
            let theta = theta_given_one(open_unit(&mut rng));
            let ones = (1..n).filter(|_| open_unit(&mut rng) < theta).count();
            let u = open_unit(&mut rng);
            let lap = if u < 0.5 {
                (2.0 * u).ln() / eps
            } else {
                -(2.0 * (1.0 - u)).ln() / eps
            };
            ((ones as f64 + lap) / (n - 1) as f64).clamp(0.0, 1.0)
        })
        .collect();
    let mean = values.iter().sum::<f64>() / samples as f64;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (samples - 1) as f64;
    (mean, (var / samples as f64).sqrt())
}

#[test]
fn clamped_mean_matches_brute_force() {
    let noise = NoiseSpec::laplace(1.0).unwrap();
    let est = posterior_clamped_mean(&flat_prior(), 1, 200, &noise, 1_000_000, 11).unwrap();
    // Given one observed 1, theta ~ Beta(2, 1), whose inverse CDF is sqrt(u).
    let (mean, se) = brute_force_clamped(f64::sqrt, 200, 1.0, 200_000);
    let tol = 3.0 * (est.std_err.powi(2) + se * se).sqrt();
    assert!(
        (est.mean - mean).abs() <= tol,
        "{} vs {mean} (tol {tol})",
        est.mean
    );
}

#[test]
fn clamped_mean_approaches_posterior_without_noise() {
    let noise = NoiseSpec::laplace(1e6).unwrap();
    let est = posterior_clamped_mean(&flat_prior(), 1, 10_000, &noise, 200_000, 2).unwrap();
    assert!((est.mean - 2.0 / 3.0).abs() < 1e-2, "{}", est.mean);
    let fair = PriorSpec::point_mass(0.5, uniform_costs(), uniform_costs());
    let off = NoiseSpec::disabled_for_tests();
    for bit in [0, 1] {
        let est = posterior_clamped_mean(&fair, bit, 10_000, &off, 20_000, 3).unwrap();
        assert!((est.mean - 0.5).abs() < 1e-3);
    }
}

#[test]
fn posterior_bit_prob_matches_sampled_pairs() {
    let u = uniform_costs();
    for (a, b, expected) in [(1.0, 1.0, 2.0 / 3.0), (2.0, 2.0, 0.6)] {
        let prior = PriorSpec::beta(a, b, u, u);
        assert!((posterior_bit_prob(&prior, 1).unwrap() - expected).abs() < 1e-15);
        for bit in [0u8, 1] {
            let (hits, given) = (0..400_000u64)
                .into_par_iter()
                .map(|s| {
                    let pop = sample_population(&prior, 2, s).unwrap();
                    let (bi, bj) = (pop.agents[0].bit, pop.agents[1].bit);
                    (u64::from(bi == bit && bj == 1), u64::from(bi == bit))
                })
                .reduce(|| (0, 0), |x, y| (x.0 + y.0, x.1 + y.1));
            let freq = hits as f64 / given as f64;
            let p = posterior_bit_prob(&prior, bit).unwrap();
            let sigma = (p * (1.0 - p) / given as f64).sqrt();
            assert!(
                (freq - p).abs() <= 3.0 * sigma,
                "a={a} bit={bit}: {freq} vs {p}"
            );
        }
    }
}

#[test]
fn agents_are_exchangeable() {
    let prior = PriorSpec::beta(
        2.0,
        5.0,
        CostDist::Exponential { rate: 3.0 },
        uniform_costs(),
    );
    let trials = 100_000u64;
    let bucket = |bit: u8, cost: f64| usize::from(bit) * 4 + ((cost * 4.0) as usize).min(3);
    let counts = (0..trials)
        .into_par_iter()
        .map(|s| {
            let pop = sample_population(&prior, 6, s).unwrap();
            let mut c = [[0u64; 8]; 2];
            for (k, &i) in [0usize, 4].iter().enumerate() {
                c[k][bucket(pop.agents[i].bit, pop.agents[i].cost)] += 1;
            }
            c
        })
        .reduce(
            || [[0u64; 8]; 2],
            |mut a, b| {
                for k in 0..2 {
                    for j in 0..8 {
                        a[k][j] += b[k][j];
                    }
                }
                a
            },
        );
    for (j, (&x, &y)) in counts[0].iter().zip(&counts[1]).enumerate() {
        let (x, y) = (x as f64, y as f64);
        let p = (x + y) / (2.0 * trials as f64);
        let sigma = (2.0 * p * (1.0 - p) / trials as f64).sqrt();
        assert!(
            ((x - y) / trials as f64).abs() <= 3.0 * sigma.max(1e-12),
            "bucket {j}: {x} vs {y}"
        );
    }
}

#[test]
fn laplace_mean_and_tails() {
    let draws = 1_000_000u64;
    let scale = 2.0;
    let samples: Vec<f64> = (0..draws)
        .into_par_iter()
        .map(|t| laplace_sample(scale, &mut stream_rng(5, t)))
        .collect();
    let mean = samples.iter().sum::<f64>() / draws as f64;
    assert!(mean.abs() <= 3.0 * (2.0 * scale * scale / draws as f64).sqrt());
    for t in [1.0, 2.0, 3.0] {
        let freq = samples.iter().filter(|x| x.abs() >= t * scale).count() as f64 / draws as f64;
        let p = (-t).exp();
        assert!((freq - p).abs() <= 3.0 * (p * (1.0 - p) / draws as f64).sqrt());
    }
}

#[test]
fn noiseless_lying_flips_the_estimate() {
    let mut scenario = Scenario::new(flat_prior(), 300, 0.1, 0.1, 0.1, CostModel::linear());
    scenario.noise = NoiseMode::Disabled;
    scenario.posterior_samples = 20_000;
    scenario.threshold_trials = 1000;
    let resolved = scenario.resolve(1).unwrap();
    let (report, records) = accuracy_experiment(
        &scenario,
        &resolved,
        &StrategyProfile::Symmetric(Strategy::AlwaysLie),
        500,
        9,
    )
    .unwrap();
    assert_eq!(report.alpha_prime, 0.1);
    for r in &records {
        assert!((r.p_tilde - (1.0 - r.p_hat)).abs() < 1e-12);
        let oracle = (r.p_hat - (1.0 - r.p_hat)).abs();
        if (oracle - 0.1).abs() > 1e-9 {
            assert_eq!(r.success, oracle <= 0.1, "p_hat {}", r.p_hat);
        }
        assert_eq!(r.non_truthful, 300);
    }
    let (truthful, _) = accuracy_experiment(
        &scenario,
        &resolved,
        &StrategyProfile::Symmetric(Strategy::AlwaysTruth),
        200,
        9,
    )
    .unwrap();
    assert_eq!(truthful.success_fraction, 1.0);
    assert_eq!(truthful.mean_abs_error, 0.0);
}

fn audit_scenario(n: usize) -> Scenario {
    let eps = epsilon_rule(0.1, 0.1, n).unwrap();
    let mut s = Scenario::new(flat_prior(), n, 0.1, 0.1, eps, CostModel::linear());
    s.posterior_samples = 400_000;
    s
}

#[test]
fn audit_is_symmetric_in_the_bit_without_abstention() {
    // Abstentions count as zeros, which lowers every peer estimate and so
    // favours bit 0. Symmetry is only expected when nobody abstains.
    let abstaining = best_response_audit(&audit_scenario(200), 50_000, 21).unwrap();
    assert!(abstaining.per_bit[0].truth.mean_payment > abstaining.per_bit[1].truth.mean_payment);

    let mut scenario = audit_scenario(200);
    scenario.off_threshold = OffThreshold::Truth;
    let report = best_response_audit(&scenario, 100_000, 21).unwrap();
    let (zero, one) = (&report.per_bit[0], &report.per_bit[1]);
    for (a, b) in [(zero.truth, one.truth), (zero.lie, one.lie)] {
        let tol = a.payment_ci_halfwidth + b.payment_ci_halfwidth;
        assert!(
            (a.mean_payment - b.mean_payment).abs() <= tol,
            "{a:?} vs {b:?}; p0 {} p1 {}",
            report.p0,
            report.p1
        );
    }
    for bit in &report.per_bit {
        assert_eq!(bit.deviation_within_alpha, Verdict::Pass);
        assert_eq!(bit.within_payment_bound, Verdict::Pass);
        assert_eq!(bit.abstain.mean_payment, 0.0);
        assert!(bit.abstain.utility_lower_bound <= 0.0);
    }
}

#[test]
fn tiny_beta_fails_only_the_margin_diagnostic() {
    let mut scenario = audit_scenario(200);
    let resolved = scenario.resolve(3).unwrap();
    let rule = beta_rule(scenario.cost_model.kind, scenario.epsilon, resolved.tau).unwrap();
    scenario.beta_override = Some(rule * 1e-6);
    let report = best_response_audit(&scenario, 20_000, 3).unwrap();
    assert_eq!(report.verdicts.truth_ge_beta, Verdict::Pass);
    assert_eq!(report.privacy_margin, Verdict::Fail);
    assert_eq!(report.overall(), Verdict::Fail);
}

#[test]
fn released_estimate_leaks_no_more_than_the_noisy_sum() {
    let n = 4;
    let eps = 0.5;
    let config = MechanismConfig::new(n, 0.1, 1.0, eps, 1.0 / 3.0, 2.0 / 3.0).unwrap();
    let mech = Mechanism::new(config).unwrap();
    let reports = [Report::One, Report::One, Report::Zero, Report::Zero];
    let settings = AuditSettings::new(200_000, 20, 8).with_range(-8.0, 12.0);
    let sum = |r: &[Report], rng: &mut SimRng| mech.run(r, rng).unwrap().b_bar;
    let raw = dp_audit(sum, &reports, 2, Report::One, eps, &settings).unwrap();
    let est = |r: &[Report], rng: &mut SimRng| mech.run(r, rng).unwrap().estimate;
    let settings = AuditSettings {
        range: (0.0, 1.0),
        ..settings
    };
    let post = dp_audit(est, &reports, 2, Report::One, eps, &settings).unwrap();
    assert!(post.max_log_ratio <= raw.max_log_ratio + settings.tolerance);
    assert_eq!(raw.verdict, Verdict::Pass);
    assert_eq!(post.verdict, Verdict::Pass);
}

#[test]
fn sampled_payments_stay_under_the_cost_bound_at_small_n() {
    // The per-agent bound holds in expectation; check it with a CI on a
    // smaller, fully simulated survey.
    let scenario = audit_scenario(100);
    let resolved = scenario.resolve(4).unwrap();
    let mech = Mechanism::new(scenario.mechanism_config(&resolved).unwrap()).unwrap();
    let profile = scenario.equilibrium_profile(&resolved);
    let totals: Vec<f64> = (0..20_000u64)
        .into_par_iter()
        .map(|t| {
            let mut rng = stream_rng(77, t);
            let pop = sample_population(&scenario.prior, 100, t).unwrap();
            let reports = profile.apply(&pop.agents);
            mech.run(&reports, &mut rng).unwrap().total_payment()
        })
        .collect();
    let mean = totals.iter().sum::<f64>() / totals.len() as f64;
    let var = totals.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (totals.len() - 1) as f64;
    let ci = Z99 * (var / totals.len() as f64).sqrt();
    let bound = dpsurvey::equilibrium::total_payment_bound(
        resolved.beta,
        0.1,
        resolved.p0,
        resolved.p1,
        100,
    );
    assert!(mean - ci <= bound, "{mean} > {bound}");
}
