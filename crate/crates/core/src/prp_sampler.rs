//! Self-reducible rejection sampler for very dense restricted-position
//! instances, with a budgeted variant and a median-of-means counter.
//!
//! An attempt fills columns one at a time. At column `j` with unmatched rows
//! `A` and residual row sizes `r_k`, let `M = ∏_{k∈A} f(r_k)/e`. Row `i`
//! (among the rows `S ⊆ A` allowing `j`) is chosen with probability `M_i/M`,
//! where `M_i` is the same product after matching `i` to `j`; the leftover
//! mass restarts the attempt. The product bound guarantees `Σ M_i ≤ M`, and the
//! probabilities telescope so that every valid permutation is produced with
//! probability exactly `1/M_root` per attempt.

use std::f64::consts::E;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::par::{self, Execution};
use crate::prp::{self, ln_f_bound, PrpError, PrpInstance};
use crate::rng::{substream, RngStream};

/// Relative overshoot of the per-column acceptance mass that is clamped
/// rather than treated as a bug.
pub const MASS_TOLERANCE: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Permutation {
    pub image: Vec<usize>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleStats {
    /// Failed attempts before the returned one.
    pub restarts: u64,
    /// Columns filled across all attempts, including the successful one.
    pub rows_completed_total: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ApproxSample {
    pub perm: Permutation,
    pub stats: SampleStats,
    /// The restart budget ran out and `perm` came from a matching routine.
    pub fallback: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CountEstimate {
    pub value: f64,
    pub ln_value: f64,
    pub eps: f64,
    pub delta: f64,
    pub trials: u64,
    pub groups: u64,
    pub per_group: u64,
}

/// Order in which columns are filled.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum ColumnOrder {
    #[default]
    Input,
    /// Columns with fewer allowed rows first.
    AscendingDegree,
}

/// Reusable attempt state for one instance.
pub struct ExactSampler<'a> {
    inst: &'a PrpInstance,
    order: Vec<usize>,
    ln_f: Vec<f64>,
    inv_f: Vec<f64>,
    r: Vec<usize>,
    alive: Vec<usize>,
    members: Vec<usize>,
    image: Vec<usize>,
}

enum Step {
    Chosen { row: usize, prob: f64 },
    Dead,
}

impl<'a> ExactSampler<'a> {
    pub fn new(inst: &'a PrpInstance, order: ColumnOrder) -> Self {
        let n = inst.n();
        let mut cols: Vec<usize> = (0..n).collect();
        if order == ColumnOrder::AscendingDegree {
            cols.sort_by_key(|&j| inst.col_size(j));
        }
        let ln_f: Vec<f64> = (0..=n).map(ln_f_bound).collect();
        let inv_f: Vec<f64> = (0..=n)
            .map(|a| if a == 0 { 0.0 } else { 1.0 / prp::f_bound(a) })
            .collect();
        ExactSampler {
            inst,
            order: cols,
            ln_f,
            inv_f,
            r: vec![0; n],
            alive: Vec::with_capacity(n),
            members: Vec::with_capacity(n),
            image: vec![usize::MAX; n],
        }
    }

    /// `ln M_root`, the log of the expected number of attempts times `|Ω|`.
    pub fn ln_root_bound(&self) -> f64 {
        prp::ln_bregman_upper(self.inst)
    }

    fn reset(&mut self) {
        for k in 0..self.inst.n() {
            self.r[k] = self.inst.row_size(k);
        }
        self.alive.clear();
        self.alive.extend(0..self.inst.n());
    }

    /// Distribution over rows for column `j`. With `forced = Some(i)` the
    /// step follows row `i` and reports its probability; otherwise a row is
    /// drawn with `u`.
    fn step(&mut self, j: usize, u: f64, forced: Option<usize>) -> Step {
        self.members.clear();
        let mut zero_rows = 0usize;
        let mut zero_at = 0usize;
        let mut a_rest = 0.0;
        let mut a_full = 0.0;
        let mut inv_sum = 0.0;
        for (p, &k) in self.alive.iter().enumerate() {
            if self.inst.contains(k, j) {
                let rk = self.r[k];
                a_full += self.ln_f[rk];
                if rk == 1 {
                    zero_rows += 1;
                    zero_at = self.members.len();
                } else {
                    a_rest += self.ln_f[rk - 1];
                    inv_sum += self.inv_f[rk - 1];
                }
                self.members.push(p);
            }
        }
        if self.members.is_empty() || zero_rows >= 2 {
            return Step::Dead;
        }
        let scale = E * (a_rest - a_full).exp();
        let weight = |s: &Self, m: usize| -> f64 {
            if zero_rows == 1 {
                if m == zero_at {
                    scale
                } else {
                    0.0
                }
            } else {
                scale * s.inv_f[s.r[s.alive[s.members[m]]] - 1]
            }
        };
        let total = if zero_rows == 1 {
            scale
        } else {
            scale * inv_sum
        };
        assert!(
            total <= 1.0 + MASS_TOLERANCE,
            "column acceptance mass {total} exceeds 1; the weight recursion is broken"
        );
        let pick = match forced {
            Some(row) => match self.members.iter().position(|&p| self.alive[p] == row) {
                Some(m) => m,
                None => return Step::Dead,
            },
            None => {
                if u >= total.min(1.0) {
                    return Step::Dead;
                }
                let mut acc = 0.0;
                let mut chosen = self.members.len() - 1;
                for m in 0..self.members.len() {
                    acc += weight(self, m);
                    if u < acc {
                        chosen = m;
                        break;
                    }
                }
                // rounding can leave u just above the last partial sum
                while weight(self, chosen) == 0.0 && chosen > 0 {
                    chosen -= 1;
                }
                chosen
            }
        };
        let prob = weight(self, pick);
        let pos = self.members[pick];
        let row = self.alive[pos];
        for &p in &self.members {
            let k = self.alive[p];
            if k != row {
                self.r[k] -= 1;
            }
        }
        self.alive.swap_remove(pos);
        Step::Chosen { row, prob }
    }

    /// One attempt. Returns whether it completed and how many columns it
    /// filled.
    pub fn attempt<R: Rng + ?Sized>(&mut self, rng: &mut R) -> (bool, u64) {
        self.reset();
        for t in 0..self.order.len() {
            let j = self.order[t];
            let u: f64 = rng.gen();
            match self.step(j, u, None) {
                Step::Chosen { row, .. } => self.image[row] = j,
                Step::Dead => return (false, t as u64),
            }
        }
        (true, self.order.len() as u64)
    }

    /// Runs attempts until one completes, or `max_attempts` fail.
    pub fn sample<R: Rng + ?Sized>(
        &mut self,
        rng: &mut R,
        max_attempts: Option<u64>,
    ) -> (Option<Permutation>, SampleStats) {
        let mut stats = SampleStats::default();
        loop {
            let (ok, cols) = self.attempt(rng);
            stats.rows_completed_total += cols;
            if ok {
                debug_assert!(self.inst.accepts(&self.image));
                return (
                    Some(Permutation {
                        image: self.image.clone(),
                    }),
                    stats,
                );
            }
            stats.restarts += 1;
            if max_attempts.is_some_and(|m| stats.restarts >= m) {
                return (None, stats);
            }
        }
    }

    /// Probability that a single attempt outputs `image`.
    pub fn path_probability(&mut self, image: &[usize]) -> f64 {
        let n = self.inst.n();
        let mut row_of = vec![usize::MAX; n];
        for (i, &j) in image.iter().enumerate() {
            row_of[j] = i;
        }
        self.reset();
        let mut p = 1.0;
        for t in 0..self.order.len() {
            let j = self.order[t];
            match self.step(j, 0.0, Some(row_of[j])) {
                Step::Chosen { prob, .. } => p *= prob,
                Step::Dead => return 0.0,
            }
        }
        p
    }
}

fn check_feasible(inst: &PrpInstance) -> Result<(), PrpError> {
    match inst.empty_column() {
        Some(column) => Err(PrpError::Infeasible { column }),
        None => Ok(()),
    }
}

/// An exactly uniform valid permutation of a very dense instance.
pub fn sample_exact(
    inst: &PrpInstance,
    rng: &mut RngStream,
) -> Result<(Permutation, SampleStats), PrpError> {
    sample_exact_with(inst, ColumnOrder::Input, rng)
}

pub fn sample_exact_with(
    inst: &PrpInstance,
    order: ColumnOrder,
    rng: &mut RngStream,
) -> Result<(Permutation, SampleStats), PrpError> {
    prp::require_very_dense(inst)?;
    check_feasible(inst)?;
    let (perm, stats) = ExactSampler::new(inst, order).sample(rng, None);
    Ok((perm.expect("unbounded sampling always returns"), stats))
}

/// The same sampler without the density precondition, capped at
/// `max_attempts`. Exactly uniform whenever it returns `Some`.
pub fn sample_exact_budgeted(
    inst: &PrpInstance,
    max_attempts: u64,
    rng: &mut RngStream,
) -> Result<(Option<Permutation>, SampleStats), PrpError> {
    check_feasible(inst)?;
    Ok(ExactSampler::new(inst, ColumnOrder::Input).sample(rng, Some(max_attempts.max(1))))
}

/// Attempt budget `⌈ratio_bound(n)·ln(1/eps)⌉` used by [`sample_approx`].
pub fn approx_budget(n: usize, eps: f64) -> u64 {
    ((prp::ratio_bound(n) * (1.0 / eps).ln()).ceil() as u64).max(1)
}

/// A permutation within TV distance `eps` of uniform. If the attempt budget
/// runs out, a perfect matching from augmenting paths is returned instead and
/// flagged.
pub fn sample_approx(
    inst: &PrpInstance,
    eps: f64,
    rng: &mut RngStream,
) -> Result<ApproxSample, PrpError> {
    prp::require_very_dense(inst)?;
    check_feasible(inst)?;
    let budget = approx_budget(inst.n(), eps);
    let (perm, stats) = ExactSampler::new(inst, ColumnOrder::Input).sample(rng, Some(budget));
    Ok(match perm {
        Some(perm) => ApproxSample {
            perm,
            stats,
            fallback: false,
        },
        None => {
            let image = perfect_matching(inst).ok_or(PrpError::Infeasible { column: 0 })?;
            ApproxSample {
                perm: Permutation { image },
                stats,
                fallback: true,
            }
        }
    })
}

/// A deterministic perfect matching (Kuhn's augmenting paths), if one exists.
pub fn perfect_matching(inst: &PrpInstance) -> Option<Vec<usize>> {
    let n = inst.n();
    let mut row_of_col = vec![usize::MAX; n];
    fn augment(inst: &PrpInstance, i: usize, seen: &mut [bool], row_of_col: &mut [usize]) -> bool {
        for &j in inst.allowed(i) {
            if !seen[j] {
                seen[j] = true;
                if row_of_col[j] == usize::MAX || augment(inst, row_of_col[j], seen, row_of_col) {
                    row_of_col[j] = i;
                    return true;
                }
            }
        }
        false
    }
    for i in 0..n {
        let mut seen = vec![false; n];
        if !augment(inst, i, &mut seen, &mut row_of_col) {
            return None;
        }
    }
    let mut image = vec![0; n];
    for (j, &i) in row_of_col.iter().enumerate() {
        image[i] = j;
    }
    Some(image)
}

/// `(K, m)`: number of groups and attempts per group for the counter.
pub fn count_plan(n: usize, eps: f64, delta: f64) -> (u64, u64) {
    let k = ((8.0 * (1.0 / delta).ln()).ceil() as u64).max(1);
    let m = ((16.0 * prp::ratio_bound(n) / (eps * eps)).ceil() as u64).max(1);
    (k, m)
}

/// `(1 ± eps)`-approximation of the number of valid permutations with
/// probability at least `1 − delta`.
pub fn count_approx(
    inst: &PrpInstance,
    eps: f64,
    delta: f64,
    rng: &mut RngStream,
) -> Result<CountEstimate, PrpError> {
    count_approx_with(inst, eps, delta, rng, Execution::default())
}

pub fn count_approx_with(
    inst: &PrpInstance,
    eps: f64,
    delta: f64,
    rng: &mut RngStream,
    exec: Execution,
) -> Result<CountEstimate, PrpError> {
    prp::require_very_dense(inst)?;
    check_feasible(inst)?;
    let (k, m) = count_plan(inst.n(), eps, delta);
    if inst.n() == 1 {
        return Ok(CountEstimate {
            value: 1.0,
            ln_value: 0.0,
            eps,
            delta,
            trials: 1,
            groups: 1,
            per_group: 1,
        });
    }
    let seed: u64 = rng.gen();
    let mut means = par::map_indexed(k as usize, exec, |g| {
        let mut r = substream(seed, g as u64);
        let mut s = ExactSampler::new(inst, ColumnOrder::Input);
        let hits = (0..m).filter(|_| s.attempt(&mut r).0).count();
        hits as f64 / m as f64
    });
    means.sort_by(f64::total_cmp);
    let med = if means.len() % 2 == 1 {
        means[means.len() / 2]
    } else {
        0.5 * (means[means.len() / 2 - 1] + means[means.len() / 2])
    };
    let ln_value = prp::ln_bregman_upper(inst) + med.ln();
    Ok(CountEstimate {
        value: ln_value.exp(),
        ln_value,
        eps,
        delta,
        trials: k * m,
        groups: k,
        per_group: m,
    })
}

/// `count` exact samples, sample `i` drawn from substream `i` of `seed`.
pub fn sample_exact_batch(
    inst: &PrpInstance,
    count: usize,
    seed: u64,
    exec: Execution,
) -> Result<Vec<(Permutation, SampleStats)>, PrpError> {
    prp::require_very_dense(inst)?;
    check_feasible(inst)?;
    Ok(par::map_indexed(count, exec, |i| {
        let mut r = substream(seed, i as u64);
        let (p, s) = ExactSampler::new(inst, ColumnOrder::Input).sample(&mut r, None);
        (p.expect("unbounded"), s)
    }))
}

/// `count` budgeted samples, sample `i` drawn from substream `i` of `seed`.
pub fn sample_approx_batch(
    inst: &PrpInstance,
    count: usize,
    eps: f64,
    seed: u64,
    exec: Execution,
) -> Result<Vec<ApproxSample>, PrpError> {
    prp::require_very_dense(inst)?;
    par::map_indexed(count, exec, |i| {
        sample_approx(inst, eps, &mut substream(seed, i as u64))
    })
    .into_iter()
    .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::{enumerate_prp, exact_permanent};
    use crate::rng::stream;
    use num_traits::ToPrimitive;
    use proptest::prelude::*;

    #[test]
    fn single_row() {
        let inst = PrpInstance::full(1);
        let (p, s) = sample_exact(&inst, &mut stream(1)).unwrap();
        assert_eq!(p.image, vec![0]);
        assert_eq!(s.restarts, 0);
        let c = count_approx(&inst, 0.1, 0.1, &mut stream(1)).unwrap();
        assert_eq!(c.value, 1.0);
    }

    #[test]
    fn rejects_sparse() {
        let inst = PrpInstance::from_zeros(3, &[(0, 0)]).unwrap();
        assert!(matches!(
            sample_exact(&inst, &mut stream(1)),
            Err(PrpError::DensityViolation { .. })
        ));
    }

    #[test]
    fn deterministic_under_seed() {
        let inst = PrpInstance::full(6);
        let a: Vec<_> = (0..20)
            .scan(stream(3), |r, _| Some(sample_exact(&inst, r).unwrap()))
            .collect();
        let b: Vec<_> = (0..20)
            .scan(stream(3), |r, _| Some(sample_exact(&inst, r).unwrap()))
            .collect();
        assert_eq!(a, b);
    }

    #[test]
    fn batch_independent_of_execution() {
        let inst = PrpInstance::full(8);
        let a = sample_exact_batch(&inst, 50, 11, Execution::Parallel).unwrap();
        let b = sample_exact_batch(&inst, 50, 11, Execution::Sequential).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn approx_small_budget_and_fallback() {
        let inst = PrpInstance::full(3);
        assert!(approx_budget(3, 0.5) >= 1);
        let s = sample_approx(&inst, 0.5, &mut stream(2)).unwrap();
        assert!(inst.accepts(&s.perm.image));
        let m = perfect_matching(
            &PrpInstance::from_zeros(4, &[(0, 0), (1, 1), (2, 2), (3, 3)]).unwrap(),
        )
        .unwrap();
        assert!(m.iter().enumerate().all(|(i, &j)| i != j));
        assert!(perfect_matching(&PrpInstance::new(2, vec![vec![0], vec![0]]).unwrap()).is_none());
    }

    #[test]
    fn fallback_rate_bounded() {
        // n = 3 full: attempts succeed with probability 6 / M_root
        let inst = PrpInstance::full(3);
        let runs = 10_000;
        let fb = (0..runs)
            .filter(|&i| {
                sample_approx(&inst, 0.1, &mut substream(7, i))
                    .unwrap()
                    .fallback
            })
            .count();
        assert!((fb as f64) / (runs as f64) <= 0.1);
    }

    #[test]
    fn leaf_probabilities_equal_inverse_root_bound() {
        let insts = [
            PrpInstance::full(4),
            PrpInstance::from_zeros(4, &[(0, 0), (1, 2)]).unwrap(),
            PrpInstance::from_zeros(5, &[(0, 1), (1, 1), (2, 4), (4, 0)]).unwrap(),
            PrpInstance::from_zeros(5, &[(0, 0), (1, 1), (2, 2), (3, 3), (4, 4)]).unwrap(),
        ];
        for inst in &insts {
            let mut s = ExactSampler::new(inst, ColumnOrder::Input);
            let root = (-s.ln_root_bound()).exp();
            for sigma in enumerate_prp(inst, 10_000).unwrap() {
                let p = s.path_probability(&sigma);
                assert!((p - root).abs() <= 1e-9 * root, "{p} vs {root}");
            }
        }
    }

    #[test]
    fn mean_restarts_match_bound_ratio() {
        let inst = PrpInstance::from_zeros(5, &[(0, 0), (1, 1), (2, 3)]).unwrap();
        let count = exact_permanent(&inst).unwrap().to_f64().unwrap();
        let mut s = ExactSampler::new(&inst, ColumnOrder::Input);
        let expected_attempts = s.ln_root_bound().exp() / count;
        let p = 1.0 / expected_attempts;
        let mut rng = stream(99);
        let trials = 100_000u64;
        let hits = (0..trials).filter(|_| s.attempt(&mut rng).0).count() as f64;
        let se = (p * (1.0 - p) / trials as f64).sqrt();
        assert!(
            (hits / trials as f64 - p).abs() <= 3.0 * se,
            "{} vs {p}",
            hits / trials as f64
        );
    }

    #[test]
    fn count_small_full() {
        let inst = PrpInstance::full(3);
        let ok = (0..20)
            .filter(|&i| {
                let v = count_approx(&inst, 0.2, 0.1, &mut substream(1, i))
                    .unwrap()
                    .value;
                (4.8..=7.2).contains(&v)
            })
            .count();
        assert!(ok >= 18);
    }

    fn arb_dense() -> impl Strategy<Value = PrpInstance> {
        (2usize..6).prop_flat_map(|n| {
            proptest::collection::vec(proptest::bool::weighted(0.8), n * n).prop_filter_map(
                "feasible",
                move |cells| {
                    let mut m: Vec<Vec<bool>> = cells.chunks(n).map(|c| c.to_vec()).collect();
                    for (i, row) in m.iter_mut().enumerate() {
                        row[i] = true;
                    }
                    PrpInstance::from_matrix(&m).ok()
                },
            )
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn outputs_are_valid_and_mass_bounded(inst in arb_dense(), seed in any::<u64>()) {
            // mass assertion lives inside `step`; any instance with a perfect
            // matching must run without tripping it
            let mut s = ExactSampler::new(&inst, ColumnOrder::Input);
            let mut r = stream(seed);
            let (p, _) = s.sample(&mut r, Some(2000));
            if let Some(p) = p {
                prop_assert!(inst.accepts(&p.image));
            }
            let mut t = ExactSampler::new(&inst, ColumnOrder::AscendingDegree);
            if let (Some(p), _) = t.sample(&mut r, Some(2000)) {
                prop_assert!(inst.accepts(&p.image));
            }
        }

        #[test]
        fn leaf_uniformity_random(inst in arb_dense()) {
            let mut s = ExactSampler::new(&inst, ColumnOrder::Input);
            let root = (-s.ln_root_bound()).exp();
            for sigma in enumerate_prp(&inst, 10_000).unwrap() {
                let p = s.path_probability(&sigma);
                prop_assert!((p - root).abs() <= 1e-9 * root);
            }
        }
    }
}
