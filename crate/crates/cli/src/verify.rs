//! Oracle cross-check suites behind `permlll verify`.

use std::f64::consts::E;

use num_traits::ToPrimitive;
use rand::Rng;
use serde::Serialize;

use permlll_core::oracle::{
    enumerate_solutions, exact_marginal, exact_permanent, tv_distance, EmpiricalDist,
};
use permlll_core::par::Execution;
use permlll_core::pdc::{SetSpec, Value};
use permlll_core::pdc_sampler::{mcmc_batch, SamplerConfig};
use permlll_core::prp::{max_zeros_per_line, permanent_bracket};
use permlll_core::rng::substream;
use permlll_core::PdcFormula;

use crate::gen::{gen_pdc_uniform, gen_prp};

/// Largest allowed ratio between the bracket ends.
pub const BRACKET_RATIO: f64 = 19.0;

#[derive(Clone, Debug, Serialize)]
pub struct SuiteResult {
    pub suite: String,
    pub cases: usize,
    pub violations: usize,
    pub passed: bool,
    pub detail: serde_json::Value,
}

/// Random very dense instances with `n` cycling through `2..=12`, checked
/// against the exact permanent.
pub fn bracket_suite(count: usize, seed: u64) -> SuiteResult {
    let mut violations = 0;
    let mut worst_ratio: f64 = 0.0;
    for i in 0..count {
        let mut rng = substream(seed, i as u64);
        let n = 2 + i % 11;
        let zeros = rng.gen_range(0..=n * max_zeros_per_line(n));
        let inst = gen_prp(n, zeros, &mut rng).expect("zeros within the cap");
        let b = permanent_bracket(&inst).expect("generated instances are very dense");
        let exact = exact_permanent(&inst).expect("n ≤ 12").to_f64().unwrap();
        worst_ratio = worst_ratio.max(b.ratio());
        if !b.contains(exact) || b.ratio() > BRACKET_RATIO {
            violations += 1;
        }
    }
    SuiteResult {
        suite: "bracket".into(),
        cases: count,
        violations,
        passed: violations == 0,
        detail: serde_json::json!({ "worst_ratio": worst_ratio }),
    }
}

/// TV of `runs` chain outputs on a (k=2, q=4, m=2) formula against the
/// enumerated uniform distribution, with a `3√(|Ω|/runs)` sampling slack.
pub fn tv_suite(runs: usize, eps: f64, seed: u64, exec: Execution) -> SuiteResult {
    let f = gen_pdc_uniform(2, 4, 2, 3, &mut substream(seed, 0)).expect("valid shape");
    let sols = enumerate_solutions(&f, 1e6).expect("small formula");
    let cfg = SamplerConfig {
        eps,
        seed,
        force_regime: true,
        ..Default::default()
    };
    let (outs, tele) = mcmc_batch(&f, &cfg, runs, exec).expect("chain runs");
    let mut emp = EmpiricalDist::new();
    for a in &outs {
        emp.add(a.key(&sols.vars));
    }
    let tv = tv_distance(&emp, &sols).expect("nonempty support");
    let tol = eps + 3.0 * (sols.count() as f64 / runs as f64).sqrt();
    SuiteResult {
        suite: "tv".into(),
        cases: runs,
        violations: usize::from(tv > tol),
        passed: tv <= tol,
        detail: serde_json::json!({ "tv": tv, "tolerance": tol, "solutions": sols.count(), "telemetry": tele }),
    }
}

/// Three sets of size 4 with `c` random width-3 constraints, one literal per
/// set.
pub fn marginal_formula(c: usize, rng: &mut impl Rng) -> PdcFormula {
    let sets: Vec<SetSpec> = (0..3)
        .map(|i| {
            (
                format!("P{i}"),
                (0..4).map(|j| format!("x{i}.{j}")).collect(),
                (0..4 as Value).collect(),
            )
        })
        .collect();
    let cs = (0..c)
        .map(|_| {
            (0..3)
                .map(|i| {
                    (
                        format!("x{i}.{}", rng.gen_range(0..4)),
                        rng.gen_range(0..4 as Value),
                    )
                })
                .collect()
        })
        .collect();
    PdcFormula::new(sets, cs).expect("valid formula")
}

/// Outcome of checking one formula against the marginal bounds.
#[derive(Clone, Debug, Default, Serialize)]
pub struct MarginalCheck {
    pub pairs: usize,
    pub violations: usize,
    /// Smallest slack to either bound over all pairs.
    pub min_slack: f64,
}

/// Every exact marginal `Pr[σ(v) = c]` against
/// `[1/|P| − 4ep'Δ, (1 + 4ep'Δ)/|P|]`, where `p'` is the largest violation
/// probability among constraints touching `P`. Requires `8epΔ ≤ 1`.
pub fn check_marginals(f: &PdcFormula) -> Option<MarginalCheck> {
    let prm = f.params();
    let delta = prm.delta.max(1) as f64;
    if 8.0 * E * prm.p * delta > 1.0 {
        return None;
    }
    let sols = enumerate_solutions(f, 1e7).ok()?;
    if sols.count() == 0 {
        return None;
    }
    let mut out = MarginalCheck {
        min_slack: f64::INFINITY,
        ..Default::default()
    };
    for (i, set) in f.sets().iter().enumerate() {
        let p_prime = f
            .touching(i)
            .iter()
            .map(|&ci| f.violation_prob(&f.constraints()[ci]))
            .fold(0.0, f64::max);
        let size = set.len() as f64;
        let lo = 1.0 / size - 4.0 * E * p_prime * delta;
        let hi = (1.0 + 4.0 * E * p_prime * delta) / size;
        for &v in &set.vars {
            for &c in &set.domain {
                let m = exact_marginal(&sols, v, c).ok()?.to_f64().unwrap();
                out.pairs += 1;
                let slack = (m - lo).min(hi - m);
                out.min_slack = out.min_slack.min(slack);
                // exact rationals compared in floating point; allow rounding
                if slack < -1e-12 {
                    out.violations += 1;
                }
            }
        }
    }
    Some(out)
}

/// `count` random formulas meeting `8epΔ ≤ 1`, each checked exhaustively.
pub fn marginal_suite(count: usize, seed: u64) -> SuiteResult {
    let mut checked = 0;
    let mut violations = 0;
    let mut pairs = 0;
    let mut min_slack = f64::INFINITY;
    let mut i = 0u64;
    while checked < count {
        let mut rng = substream(seed, i);
        i += 1;
        let c = rng.gen_range(1..=3);
        let f = marginal_formula(c, &mut rng);
        if let Some(r) = check_marginals(&f) {
            checked += 1;
            violations += r.violations;
            pairs += r.pairs;
            min_slack = min_slack.min(r.min_slack);
        }
    }
    SuiteResult {
        suite: "marginal".into(),
        cases: checked,
        violations,
        passed: violations == 0,
        detail: serde_json::json!({ "pairs": pairs, "min_slack": min_slack, "drawn": i }),
    }
}
