use std::collections::HashMap;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{ToPrimitive, Zero};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng;

use permlll_core::compression::{build_decomposition, compose, project, respects};
use permlll_core::oracle::{enumerate_solutions, exact_permanent};
use permlll_core::pdc::{SetSpec, Value};
use permlll_core::pdc_sampler::{
    ideal_kernel, projected_measure, rejection_sampling, residual_prp, uniform_valid, McmcSampler,
    SamplerConfig, SamplerTelemetry,
};
use permlll_core::prp::{max_zeros_per_line, permanent_bracket, PrpInstance};
use permlll_core::rng::stream;
use permlll_core::PdcFormula;

/// `m` sets of size `q`, `c` random constraints of width 2 or 3.
fn random_formula(seed: u64, m: usize, q: usize, c: usize) -> PdcFormula {
    let mut rng = stream(seed);
    let sets: Vec<SetSpec> = (0..m)
        .map(|i| {
            (
                format!("S{i}"),
                (0..q).map(|j| format!("x{i}.{j}")).collect(),
                (0..q as Value).collect(),
            )
        })
        .collect();
    let mut cs = Vec::new();
    for _ in 0..c {
        let w = rng.gen_range(2..=3);
        let mut vars: Vec<(usize, usize)> =
            (0..m).flat_map(|i| (0..q).map(move |j| (i, j))).collect();
        vars.shuffle(&mut rng);
        cs.push(
            vars[..w]
                .iter()
                .map(|&(i, j)| (format!("x{i}.{j}"), rng.gen_range(0..q as Value)))
                .collect::<Vec<_>>(),
        );
    }
    PdcFormula::new(sets, cs).unwrap()
}

/// A very dense instance with zeros scattered under the per-line cap.
fn random_dense(seed: u64, n: usize) -> PrpInstance {
    let mut rng = stream(seed);
    let cap = max_zeros_per_line(n);
    let mut rows = vec![0; n];
    let mut cols = vec![0; n];
    let mut zeros = Vec::new();
    for _ in 0..n * cap {
        let (i, j) = (rng.gen_range(0..n), rng.gen_range(0..n));
        if rows[i] < cap && cols[j] < cap && !zeros.contains(&(i, j)) {
            rows[i] += 1;
            cols[j] += 1;
            zeros.push((i, j));
        }
    }
    PrpInstance::from_zeros(n, &zeros).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn bracket_contains_permanent(seed in any::<u64>(), n in 2usize..=12) {
        let inst = random_dense(seed, n);
        let b = permanent_bracket(&inst).unwrap();
        let exact = exact_permanent(&inst).unwrap().to_f64().unwrap();
        prop_assert!(b.contains(exact), "n={n} exact={exact} bracket={b:?}");
    }

    #[test]
    fn measure_identity(seed in any::<u64>(), c in 0usize..5) {
        let f = random_formula(seed, 2, 4, c);
        let d = build_decomposition(&f, 0.5, 2).unwrap();
        let sols = enumerate_solutions(&f, 1e6).unwrap();
        prop_assume!(sols.count() > 0);
        let nu = projected_measure(&f, &d, 1e6).unwrap();
        let total = BigInt::from(sols.count());
        let mut by_state: HashMap<_, usize> = HashMap::new();
        for idx in 0..sols.count() {
            let a = sols.assignment(idx, f.universe());
            *by_state.entry(project(&f, &d, &a).unwrap()).or_default() += 1;
        }
        for idx in 0..sols.count() {
            let a = sols.assignment(idx, f.universe());
            let s = project(&f, &d, &a).unwrap();
            prop_assert!(respects(&d, &s, &a));
            let induced = compose(&f, &d, &s, None).unwrap();
            let inner = enumerate_solutions(&induced, 1e6).unwrap();
            prop_assert!(induced.is_satisfying(&a));
            prop_assert_eq!(inner.count(), by_state[&s]);
            let mu = BigRational::new(1.into(), total.clone());
            let mu_inner = BigRational::new(1.into(), BigInt::from(inner.count()));
            prop_assert_eq!(mu, &nu[&s] * mu_inner);
        }
    }

    #[test]
    fn glauber_detailed_balance(seed in any::<u64>(), c in 1usize..4) {
        let f = random_formula(seed, 2, 4, c);
        let d = build_decomposition(&f, 0.5, 2).unwrap();
        prop_assume!(enumerate_solutions(&f, 1e6).unwrap().count() > 0);
        let nu = projected_measure(&f, &d, 1e6).unwrap();
        let rows: HashMap<_, _> = nu.keys().map(|s| (s.clone(), ideal_kernel(&f, &d, s, 1e6).unwrap())).collect();
        for (s, row) in &rows {
            for (t, m) in row {
                let back = rows[t].get(s).cloned().unwrap_or_else(BigRational::zero);
                prop_assert_eq!(&nu[s] * m, &nu[t] * back);
            }
        }
    }

    #[test]
    fn residual_rho_bounded(seed in any::<u64>(), c in 0usize..8) {
        let f = random_formula(seed, 3, 4, c);
        let delta = f.params().delta.max(1);
        let a = uniform_valid(&f, &mut stream(seed ^ 1));
        let mut fixed = a.clone();
        for &v in &f.set(0).vars {
            fixed.clear(v);
        }
        if f.without_touching(0).is_satisfying(&a) {
            let (res, wide) = residual_prp(&f, 0, &fixed).unwrap();
            prop_assert!(res.rho <= f.set(0).len() * delta);
            let zeros: usize = res.allowed.iter().map(|r| f.set(0).len() - r.len()).sum();
            prop_assert_eq!(zeros, res.rho);
            prop_assert!(wide.iter().all(|w| w.width() >= 2));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn chain_outputs_are_valid(seed in any::<u64>(), c in 0usize..6, q in 2usize..5) {
        let f = random_formula(seed, 3, q, c);
        // an unsatisfiable component makes the subroutine exhaust its loops
        prop_assume!(enumerate_solutions(&f, 1e7).unwrap().count() > 0);
        let cfg = SamplerConfig { eps: 0.2, force_regime: true, seed, ..Default::default() };
        let s = McmcSampler::new(&f, &cfg).unwrap();
        for d in s.decomposition().blocks(0) {
            prop_assert!(d.len() <= cfg.block_limit);
        }
        let mut tele = SamplerTelemetry::default();
        let a = s.run(&mut stream(seed), &mut tele).unwrap();
        prop_assert!(f.is_valid(&a));
    }
}

#[test]
fn rejection_early_returns_are_uniform() {
    let f = random_formula(17, 2, 3, 2);
    let sols = enumerate_solutions(&f, 1e6).unwrap();
    assert!(sols.count() > 1);
    let mut rng = stream(9);
    let mut counts: HashMap<Vec<Value>, usize> = HashMap::new();
    let mut accepted = 0usize;
    for _ in 0..20_000 {
        let (a, ok) = rejection_sampling(&f, 3, &mut rng);
        if ok {
            accepted += 1;
            assert!(f.is_satisfying(&a));
            *counts.entry(a.key(&sols.vars)).or_default() += 1;
        }
    }
    let expect = accepted as f64 / sols.count() as f64;
    let chi2: f64 = sols
        .solutions
        .iter()
        .map(|s| {
            let o = counts.get(s).copied().unwrap_or(0) as f64;
            (o - expect).powi(2) / expect
        })
        .sum();
    let dist = statrs::distribution::ChiSquared::new((sols.count() - 1) as f64).unwrap();
    use statrs::distribution::ContinuousCDF;
    assert!(1.0 - dist.cdf(chi2) > 1e-3, "chi2 = {chi2}");
}

#[test]
fn exact_sampler_chi_square_full_seven() {
    use permlll_core::oracle::enumerate_prp;
    use permlll_core::par::Execution;
    use permlll_core::prp_sampler::sample_exact_batch;
    use statrs::distribution::ContinuousCDF;
    let inst = PrpInstance::full(7);
    let omega = enumerate_prp(&inst, 10_000).unwrap();
    let draws = 200_000;
    let mut counts: HashMap<Vec<usize>, usize> = HashMap::new();
    for (p, _) in sample_exact_batch(&inst, draws, 4, Execution::Parallel).unwrap() {
        *counts.entry(p.image).or_default() += 1;
    }
    assert_eq!(counts.len(), omega.len());
    let expect = draws as f64 / omega.len() as f64;
    let chi2: f64 = omega
        .iter()
        .map(|s| (counts[s] as f64 - expect).powi(2) / expect)
        .sum();
    let dist = statrs::distribution::ChiSquared::new((omega.len() - 1) as f64).unwrap();
    assert!(1.0 - dist.cdf(chi2) > 1e-3, "chi2 = {chi2}");
}
