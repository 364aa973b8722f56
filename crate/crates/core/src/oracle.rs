//! Exact reference engines: Ryser's permanent, exhaustive enumeration of PRP
//! and PDC solutions, exact marginals, and total variation distance.

use std::collections::HashMap;
use std::hash::Hash;

use num_bigint::{BigInt, BigUint};
use num_rational::BigRational;
use num_traits::Zero;
use thiserror::Error;

use crate::pdc::{Assignment, PdcFormula, Value, Var};
use crate::prp::PrpInstance;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("instance too large for the oracle: {size} exceeds {limit}")]
    TooLarge { size: f64, limit: f64 },
    #[error("formula has no satisfying assignment")]
    Unsatisfiable,
    #[error("reference distribution is empty")]
    EmptySupport,
}

pub const MAX_PERMANENT_N: usize = 30;

/// Exact permanent of the 0-1 matrix of `inst` by Ryser's formula over a Gray
/// code. Arithmetic is modulo 2^128, which is exact because the permanent of
/// an `n ≤ 30` 0-1 matrix is at most `30! < 2^127`.
pub fn exact_permanent(inst: &PrpInstance) -> Result<BigUint, OracleError> {
    let n = inst.n();
    if n > MAX_PERMANENT_N {
        return Err(OracleError::TooLarge {
            size: n as f64,
            limit: MAX_PERMANENT_N as f64,
        });
    }
    let cols: Vec<Vec<usize>> = {
        let mut c = vec![Vec::new(); n];
        for i in 0..n {
            for &j in inst.allowed(i) {
                c[j].push(i);
            }
        }
        c
    };
    let mut row_sum = vec![0i64; n];
    let mut total: u128 = 0;
    let mut in_set = vec![false; n];
    let mut size = 0usize;
    for g in 1u64..(1u64 << n) {
        let j = g.trailing_zeros() as usize;
        let delta = if in_set[j] { -1 } else { 1 };
        in_set[j] = !in_set[j];
        if delta > 0 {
            size += 1;
        } else {
            size -= 1;
        }
        for &i in &cols[j] {
            row_sum[i] += delta;
        }
        let mut prod: u128 = 1;
        for &r in &row_sum {
            if r == 0 {
                prod = 0;
                break;
            }
            prod = prod.wrapping_mul(r as u128);
        }
        if (n - size) % 2 == 0 {
            total = total.wrapping_add(prod);
        } else {
            total = total.wrapping_sub(prod);
        }
    }
    Ok(BigUint::from(total))
}

/// Every valid permutation of `inst`, in lexicographic order.
pub fn enumerate_prp(inst: &PrpInstance, cap: usize) -> Result<Vec<Vec<usize>>, OracleError> {
    fn go(
        inst: &PrpInstance,
        i: usize,
        used: &mut [bool],
        cur: &mut Vec<usize>,
        out: &mut Vec<Vec<usize>>,
        cap: usize,
    ) -> bool {
        if i == inst.n() {
            out.push(cur.clone());
            return out.len() <= cap;
        }
        for &j in inst.allowed(i) {
            if !used[j] {
                used[j] = true;
                cur.push(j);
                let ok = go(inst, i + 1, used, cur, out, cap);
                cur.pop();
                used[j] = false;
                if !ok {
                    return false;
                }
            }
        }
        true
    }
    let mut out = Vec::new();
    let mut used = vec![false; inst.n()];
    if !go(inst, 0, &mut used, &mut Vec::new(), &mut out, cap) {
        return Err(OracleError::TooLarge {
            size: out.len() as f64,
            limit: cap as f64,
        });
    }
    Ok(out)
}

/// All satisfying assignments of a formula, as value vectors over `vars`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SolutionSet {
    pub vars: Vec<Var>,
    pub solutions: Vec<Vec<Value>>,
}

impl SolutionSet {
    pub fn count(&self) -> usize {
        self.solutions.len()
    }

    pub fn assignment(&self, idx: usize, universe: usize) -> Assignment {
        let mut a = Assignment::empty(universe);
        for (&v, &c) in self.vars.iter().zip(&self.solutions[idx]) {
            a.set(v, c);
        }
        a
    }

    /// The uniform distribution over the solutions.
    pub fn uniform(&self) -> HashMap<Vec<Value>, f64> {
        let p = 1.0 / self.count() as f64;
        self.solutions.iter().map(|s| (s.clone(), p)).collect()
    }
}

/// Satisfying assignments of `f` by backtracking over the sets' permutations.
/// Fails if `∏ |Q_i|! > cap`.
pub fn enumerate_solutions(f: &PdcFormula, cap: f64) -> Result<SolutionSet, OracleError> {
    let size = f.ln_valid_count().exp();
    if size > cap {
        return Err(OracleError::TooLarge { size, limit: cap });
    }
    let vars = f.variables();
    let pos: HashMap<Var, usize> = vars.iter().enumerate().map(|(i, &v)| (v, i)).collect();
    // constraints checked once their last variable is placed
    let mut due: Vec<Vec<usize>> = vec![Vec::new(); vars.len()];
    for (ci, c) in f.constraints().iter().enumerate() {
        if let Some(last) = c.vars().filter_map(|v| pos.get(&v).copied()).max() {
            if c.vars().all(|v| pos.contains_key(&v)) {
                due[last].push(ci);
            }
        }
    }
    let set_of: Vec<usize> = vars.iter().map(|&v| f.set_of(v).unwrap()).collect();
    let mut used: Vec<Vec<bool>> = f.sets().iter().map(|s| vec![false; s.len()]).collect();
    let mut a = f.empty_assignment();
    let mut out = Vec::new();

    struct Ctx<'a> {
        f: &'a PdcFormula,
        vars: &'a [Var],
        set_of: &'a [usize],
        due: &'a [Vec<usize>],
    }
    fn go(
        ctx: &Ctx,
        i: usize,
        used: &mut [Vec<bool>],
        a: &mut Assignment,
        out: &mut Vec<Vec<Value>>,
    ) {
        if i == ctx.vars.len() {
            out.push(ctx.vars.iter().map(|&v| a.get(v).unwrap()).collect());
            return;
        }
        let s = ctx.set_of[i];
        let dom = &ctx.f.set(s).domain;
        for k in 0..dom.len() {
            if used[s][k] {
                continue;
            }
            a.set(ctx.vars[i], dom[k]);
            if ctx.due[i]
                .iter()
                .all(|&ci| !ctx.f.constraints()[ci].violated_by(a))
            {
                used[s][k] = true;
                go(ctx, i + 1, used, a, out);
                used[s][k] = false;
            }
        }
        a.clear(ctx.vars[i]);
    }
    let ctx = Ctx {
        f,
        vars: &vars,
        set_of: &set_of,
        due: &due,
    };
    go(&ctx, 0, &mut used, &mut a, &mut out);
    Ok(SolutionSet {
        vars,
        solutions: out,
    })
}

/// `Pr[σ(v) = c]` under the uniform distribution on satisfying assignments.
pub fn exact_marginal(sols: &SolutionSet, v: Var, c: Value) -> Result<BigRational, OracleError> {
    if sols.count() == 0 {
        return Err(OracleError::Unsatisfiable);
    }
    let idx = sols.vars.iter().position(|&x| x == v);
    let hits = match idx {
        Some(i) => sols.solutions.iter().filter(|s| s[i] == c).count(),
        None => 0,
    };
    Ok(BigRational::new(
        BigInt::from(hits),
        BigInt::from(sols.count()),
    ))
}

/// Outcome counts from repeated draws.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EmpiricalDist<K: Eq + Hash = Vec<Value>> {
    pub counts: HashMap<K, u64>,
    pub total: u64,
}

impl<K: Eq + Hash> Default for EmpiricalDist<K> {
    fn default() -> Self {
        EmpiricalDist {
            counts: HashMap::new(),
            total: 0,
        }
    }
}

impl<K: Eq + Hash + Clone> EmpiricalDist<K> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, key: K) {
        *self.counts.entry(key).or_default() += 1;
        self.total += 1;
    }

    pub fn extend(&mut self, other: &EmpiricalDist<K>) {
        for (k, &c) in &other.counts {
            *self.counts.entry(k.clone()).or_default() += c;
        }
        self.total += other.total;
    }

    pub fn probs(&self) -> HashMap<K, f64> {
        let t = self.total as f64;
        self.counts
            .iter()
            .map(|(k, &c)| (k.clone(), c as f64 / t))
            .collect()
    }

    /// TV distance to the uniform distribution on `support`; mass outside the
    /// support counts in full.
    pub fn tv_to_uniform(&self, support: &[K]) -> Result<f64, OracleError> {
        if support.is_empty() {
            return Err(OracleError::EmptySupport);
        }
        let u = 1.0 / support.len() as f64;
        let t = self.total as f64;
        let mut in_support = 0u64;
        let mut sum = 0.0;
        for k in support {
            let c = self.counts.get(k).copied().unwrap_or(0);
            in_support += c;
            sum += (c as f64 / t - u).abs();
        }
        sum += (self.total - in_support) as f64 / t;
        Ok(0.5 * sum)
    }
}

/// TV distance between an empirical distribution and the uniform distribution
/// over a solution set.
pub fn tv_distance(emp: &EmpiricalDist, exact: &SolutionSet) -> Result<f64, OracleError> {
    emp.tv_to_uniform(&exact.solutions)
}

/// `½ Σ |p(x) − q(x)|` over the union of supports.
pub fn tv_between<K: Eq + Hash>(p: &HashMap<K, f64>, q: &HashMap<K, f64>) -> f64 {
    let mut s = 0.0;
    for (k, &a) in p {
        s += (a - q.get(k).copied().unwrap_or(0.0)).abs();
    }
    for (k, &b) in q {
        if !p.contains_key(k) {
            s += b;
        }
    }
    0.5 * s
}

/// Exact uniform distribution helper for rationals: `1/|Ω|` as a rational.
pub fn uniform_mass(count: usize) -> BigRational {
    if count == 0 {
        return BigRational::zero();
    }
    BigRational::new(BigInt::from(1), BigInt::from(count))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pdc::encode::encode_3partite_matching;
    use proptest::prelude::*;

    fn perm_brute(inst: &PrpInstance) -> u64 {
        fn heap(k: usize, a: &mut Vec<usize>, inst: &PrpInstance, acc: &mut u64) {
            if k == 1 {
                if a.iter().enumerate().all(|(i, &j)| inst.contains(i, j)) {
                    *acc += 1;
                }
                return;
            }
            heap(k - 1, a, inst, acc);
            for i in 0..k - 1 {
                if k % 2 == 0 {
                    a.swap(i, k - 1);
                } else {
                    a.swap(0, k - 1);
                }
                heap(k - 1, a, inst, acc);
            }
        }
        let mut a: Vec<usize> = (0..inst.n()).collect();
        let mut acc = 0;
        heap(inst.n(), &mut a, inst, &mut acc);
        acc
    }

    #[test]
    fn permanent_examples() {
        assert_eq!(
            exact_permanent(&PrpInstance::full(2)).unwrap(),
            BigUint::from(2u32)
        );
        let der = PrpInstance::from_zeros(4, &[(0, 0), (1, 1), (2, 2), (3, 3)]).unwrap();
        assert_eq!(exact_permanent(&der).unwrap(), BigUint::from(9u32));
        assert_eq!(perm_brute(&der), 9);
        let id = PrpInstance::new(5, (0..5).map(|i| vec![i]).collect()).unwrap();
        assert_eq!(exact_permanent(&id).unwrap(), BigUint::from(1u32));
    }

    #[test]
    fn permanent_of_large_full_is_factorial() {
        let n = 20;
        let fact: BigUint = (1..=n as u32).map(BigUint::from).product();
        assert_eq!(exact_permanent(&PrpInstance::full(n)).unwrap(), fact);
        assert!(exact_permanent(&PrpInstance::full(31)).is_err());
    }

    #[test]
    fn enumerate_examples() {
        let f = PdcFormula::new(
            vec![
                ("P".into(), vec!["v1".into(), "v2".into()], vec![1, 2]),
                ("U".into(), vec!["u1".into(), "u2".into()], vec![1, 2]),
            ],
            vec![],
        )
        .unwrap();
        assert_eq!(enumerate_solutions(&f, 1e6).unwrap().count(), 4);
        let g = PdcFormula::new(
            vec![
                ("P".into(), vec!["v1".into(), "v2".into()], vec![1, 2]),
                ("U".into(), vec!["u1".into(), "u2".into()], vec![1, 2]),
            ],
            vec![vec![("v1".into(), 1), ("u1".into(), 1)]],
        )
        .unwrap();
        assert_eq!(enumerate_solutions(&g, 1e6).unwrap().count(), 3);
        assert!(enumerate_solutions(&g, 3.0).is_err());
    }

    #[test]
    fn matching_encoding_counts() {
        // complete 2x2x2: matchings = 2!·2! = 4
        let all: Vec<[usize; 3]> = (0..2)
            .flat_map(|i| (0..2).flat_map(move |j| (0..2).map(move |k| [i, j, k])))
            .collect();
        assert_eq!(
            enumerate_solutions(&encode_3partite_matching(2, &all).unwrap(), 1e6)
                .unwrap()
                .count(),
            4
        );
        // drop (0,0,0): the matchings using it are {(0,0,0),(1,1,1)} only
        let missing: Vec<_> = all.iter().copied().filter(|e| *e != [0, 0, 0]).collect();
        assert_eq!(
            enumerate_solutions(&encode_3partite_matching(2, &missing).unwrap(), 1e6)
                .unwrap()
                .count(),
            3
        );
        assert_eq!(
            enumerate_solutions(&encode_3partite_matching(2, &[]).unwrap(), 1e6)
                .unwrap()
                .count(),
            0
        );
    }

    #[test]
    fn marginal_examples() {
        let f = PdcFormula::new(
            vec![(
                "P".into(),
                vec!["a".into(), "b".into(), "c".into()],
                vec![0, 1, 2],
            )],
            vec![],
        )
        .unwrap();
        let s = enumerate_solutions(&f, 1e6).unwrap();
        assert_eq!(
            exact_marginal(&s, Var(0), 2).unwrap(),
            BigRational::new(1.into(), 3.into())
        );
        let empty = SolutionSet {
            vars: vec![],
            solutions: vec![],
        };
        assert_eq!(
            exact_marginal(&empty, Var(0), 0),
            Err(OracleError::Unsatisfiable)
        );
    }

    #[test]
    fn tv_examples() {
        let support = vec![vec![0], vec![1]];
        let mut e = EmpiricalDist::new();
        e.add(vec![0]);
        e.add(vec![1]);
        assert_eq!(e.tv_to_uniform(&support).unwrap(), 0.0);
        let mut one = EmpiricalDist::new();
        one.add(vec![0]);
        one.add(vec![0]);
        assert_eq!(one.tv_to_uniform(&support).unwrap(), 0.5);
        let mut out = EmpiricalDist::new();
        out.add(vec![7]);
        assert_eq!(out.tv_to_uniform(&support).unwrap(), 1.0);
        assert!(e.tv_to_uniform(&[]).is_err());
    }

    #[test]
    fn tv_uniform_draws_small() {
        use rand::seq::SliceRandom;
        let support: Vec<Vec<Value>> = (0..24).map(|i| vec![i]).collect();
        let mut rng = crate::rng::stream(5);
        let mut e = EmpiricalDist::new();
        for _ in 0..100_000 {
            e.add(support.choose(&mut rng).unwrap().clone());
        }
        assert!(e.tv_to_uniform(&support).unwrap() <= 0.02);
    }

    fn arb_inst() -> impl Strategy<Value = PrpInstance> {
        (1usize..8).prop_flat_map(|n| {
            proptest::collection::vec(
                proptest::collection::vec(proptest::bool::weighted(0.7), n),
                n,
            )
            .prop_filter_map("nonempty rows", |m| PrpInstance::from_matrix(&m).ok())
        })
    }

    fn arb_dist() -> impl Strategy<Value = HashMap<u8, f64>> {
        proptest::collection::vec(0.0f64..1.0, 6).prop_map(|w| {
            let s: f64 = w.iter().sum::<f64>().max(1e-9);
            w.into_iter()
                .enumerate()
                .map(|(i, x)| (i as u8, x / s))
                .collect()
        })
    }

    proptest! {
        #[test]
        fn ryser_matches_enumeration(inst in arb_inst()) {
            let p = exact_permanent(&inst).unwrap();
            let e = enumerate_prp(&inst, usize::MAX).unwrap();
            prop_assert_eq!(p, BigUint::from(e.len()));
            prop_assert!(e.iter().all(|s| inst.accepts(s)));
        }

        #[test]
        fn ryser_invariant_under_permutation(inst in arb_inst(), seed in any::<u64>()) {
            use rand::seq::SliceRandom;
            let n = inst.n();
            let mut rng = crate::rng::stream(seed);
            let mut rp: Vec<usize> = (0..n).collect();
            let mut cp: Vec<usize> = (0..n).collect();
            rp.shuffle(&mut rng);
            cp.shuffle(&mut rng);
            prop_assert_eq!(exact_permanent(&inst).unwrap(), exact_permanent(&inst.permuted(&rp, &cp)).unwrap());
        }

        #[test]
        fn tv_is_a_metric(p in arb_dist(), q in arb_dist(), r in arb_dist()) {
            prop_assert!((tv_between(&p, &q) - tv_between(&q, &p)).abs() < 1e-12);
            prop_assert!(tv_between(&p, &r) <= tv_between(&p, &q) + tv_between(&q, &r) + 1e-12);
        }
    }
}
