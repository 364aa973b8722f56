//! State compression: decompositions of permutation sets into blocks, the
//! induced formulas, and the projection of assignments to block domains.

use std::collections::HashMap;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pdc::{is_permutation_of, Assignment, Constraint, PdcFormula, PermSet, Value, Var};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CompressionError {
    #[error("block limit must be at least 2, got {0}")]
    BlockLimit(usize),
    #[error("eta must lie in (0, 1], got {0}")]
    Eta(f64),
    #[error("assignment is not valid for the formula")]
    InvalidAssignment,
    #[error("block domains do not partition the domain of set {0}")]
    InconsistentDomains(usize),
}

/// Blocks of each permutation set, in variable order.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Decomposition {
    blocks: Vec<Vec<Vec<Var>>>,
}

/// A decomposition together with a domain for every block.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CompressedState {
    /// `domains[i][j]` is the sorted domain of block `j` of set `i`.
    pub domains: Vec<Vec<Vec<Value>>>,
}

impl Decomposition {
    /// One block per set.
    pub fn identity(f: &PdcFormula) -> Self {
        Decomposition {
            blocks: f.sets().iter().map(|s| vec![s.vars.clone()]).collect(),
        }
    }

    pub fn from_blocks(blocks: Vec<Vec<Vec<Var>>>) -> Self {
        Decomposition { blocks }
    }

    pub fn blocks(&self, set: usize) -> &[Vec<Var>] {
        &self.blocks[set]
    }

    pub fn num_sets(&self) -> usize {
        self.blocks.len()
    }

    pub fn block_sizes(&self, set: usize) -> Vec<usize> {
        self.blocks[set].iter().map(Vec::len).collect()
    }

    pub fn max_block(&self) -> usize {
        self.blocks
            .iter()
            .flatten()
            .map(Vec::len)
            .max()
            .unwrap_or(0)
    }

    /// `var → (set, block)`.
    fn locate(&self) -> HashMap<Var, (usize, usize)> {
        let mut m = HashMap::new();
        for (i, bs) in self.blocks.iter().enumerate() {
            for (j, b) in bs.iter().enumerate() {
                for &v in b {
                    m.insert(v, (i, j));
                }
            }
        }
        m
    }
}

/// Block size target `min(round(|P|^η), L)`, at least 1.
pub fn block_target(size: usize, eta: f64, limit: usize) -> usize {
    ((size as f64).powf(eta).round() as usize).min(limit).max(1)
}

/// Cuts each set, in variable order, into blocks of the target size. The
/// remainder joins the last block unless that would exceed `limit`, in which
/// case it forms a block of its own.
pub fn build_decomposition(
    f: &PdcFormula,
    eta: f64,
    limit: usize,
) -> Result<Decomposition, CompressionError> {
    if limit < 2 {
        return Err(CompressionError::BlockLimit(limit));
    }
    if !(eta > 0.0 && eta <= 1.0) {
        return Err(CompressionError::Eta(eta));
    }
    let blocks = f
        .sets()
        .iter()
        .map(|s| {
            let size = s.len();
            if size == 0 {
                return Vec::new();
            }
            let t = block_target(size, eta, limit);
            let full = size / t;
            let rem = size % t;
            let mut cuts: Vec<usize> = vec![t; full];
            if rem > 0 {
                if t + rem <= limit {
                    *cuts.last_mut().unwrap() += rem;
                } else {
                    cuts.push(rem);
                }
            }
            let mut out = Vec::with_capacity(cuts.len());
            let mut at = 0;
            for c in cuts {
                out.push(s.vars[at..at + c].to_vec());
                at += c;
            }
            out
        })
        .collect();
    Ok(Decomposition { blocks })
}

/// Block domains `σ(P')` for every block.
pub fn project(
    f: &PdcFormula,
    d: &Decomposition,
    sigma: &Assignment,
) -> Result<CompressedState, CompressionError> {
    if !f.is_valid(sigma) {
        return Err(CompressionError::InvalidAssignment);
    }
    Ok(project_unchecked(d, sigma))
}

pub(crate) fn project_unchecked(d: &Decomposition, sigma: &Assignment) -> CompressedState {
    let domains = d
        .blocks
        .iter()
        .map(|bs| {
            bs.iter()
                .map(|b| {
                    let mut v: Vec<Value> =
                        b.iter().map(|&x| sigma.get(x).expect("assigned")).collect();
                    v.sort_unstable();
                    v
                })
                .collect()
        })
        .collect();
    CompressedState { domains }
}

fn check_state(
    f: &PdcFormula,
    d: &Decomposition,
    s: &CompressedState,
) -> Result<(), CompressionError> {
    for (i, set) in f.sets().iter().enumerate() {
        let bs = d.blocks(i);
        if s.domains.get(i).map(Vec::len) != Some(bs.len()) {
            return Err(CompressionError::InconsistentDomains(i));
        }
        let mut all: Vec<Value> = Vec::with_capacity(set.len());
        for (b, q) in bs.iter().zip(&s.domains[i]) {
            if b.len() != q.len() {
                return Err(CompressionError::InconsistentDomains(i));
            }
            all.extend(q);
        }
        all.sort_unstable();
        if all != set.domain {
            return Err(CompressionError::InconsistentDomains(i));
        }
    }
    Ok(())
}

/// The formula whose sets are the blocks (with their domains), except that
/// set `whole` (if given) is kept intact with its original domain.
/// Constraints satisfied by the domain restriction are dropped.
pub fn compose(
    f: &PdcFormula,
    d: &Decomposition,
    state: &CompressedState,
    whole: Option<usize>,
) -> Result<PdcFormula, CompressionError> {
    check_state(f, d, state)?;
    Ok(compose_unchecked(f, d, state, whole))
}

pub(crate) fn compose_unchecked(
    f: &PdcFormula,
    d: &Decomposition,
    state: &CompressedState,
    whole: Option<usize>,
) -> PdcFormula {
    let mut sets = Vec::new();
    for (i, set) in f.sets().iter().enumerate() {
        if Some(i) == whole || d.blocks(i).len() == 1 && state.domains[i][0] == set.domain {
            sets.push(set.clone());
            continue;
        }
        for (j, (b, q)) in d.blocks(i).iter().zip(&state.domains[i]).enumerate() {
            sets.push(PermSet {
                name: format!("{}#{}", set.name, j),
                vars: b.clone(),
                domain: q.clone(),
            });
        }
    }
    let g = f.derive(sets, Vec::new());
    let cs: Vec<Constraint> = f
        .constraints()
        .iter()
        .filter(|c| !domain_satisfied(&g, c))
        .cloned()
        .collect();
    f.derive(g.sets().to_vec(), cs)
}

fn domain_satisfied(g: &PdcFormula, c: &Constraint) -> bool {
    c.literals().iter().any(|l| match g.set_of(l.var) {
        Some(s) => !g.set(s).has_value(l.value),
        None => false,
    })
}

/// The induced formula on the blocks with their assigned domains.
pub fn induced_formula(
    f: &PdcFormula,
    d: &Decomposition,
    state: &CompressedState,
) -> Result<PdcFormula, CompressionError> {
    compose(f, d, state, None)
}

/// Largest violation probability of any constraint over all block-domain
/// assignments: `∏_b 1/(|b|)_(k_b)` over the blocks `b` the constraint
/// touches, or 0 when no domain assignment can make it violable.
pub fn violation_bound_decomposed_exact(f: &PdcFormula, d: &Decomposition) -> BigRational {
    let loc = d.locate();
    let mut best = BigRational::zero();
    for c in f.constraints() {
        if let Some(p) = decomposed_prob(c, d, &loc) {
            if p > best {
                best = p;
            }
        }
    }
    best
}

pub fn violation_bound_decomposed(f: &PdcFormula, d: &Decomposition) -> f64 {
    violation_bound_decomposed_exact(f, d)
        .to_f64()
        .unwrap_or(0.0)
}

fn decomposed_prob(
    c: &Constraint,
    d: &Decomposition,
    loc: &HashMap<Var, (usize, usize)>,
) -> Option<BigRational> {
    let mut var_val: HashMap<Var, Value> = HashMap::new();
    let mut set_val: HashMap<(usize, Value), Var> = HashMap::new();
    let mut per_block: HashMap<(usize, usize), usize> = HashMap::new();
    for l in c.literals() {
        if let Some(&x) = var_val.get(&l.var) {
            if x != l.value {
                return None;
            }
            continue;
        }
        var_val.insert(l.var, l.value);
        let (s, b) = *loc.get(&l.var)?;
        if let Some(&other) = set_val.get(&(s, l.value)) {
            if other != l.var {
                return None;
            }
        }
        set_val.insert((s, l.value), l.var);
        *per_block.entry((s, b)).or_default() += 1;
    }
    let mut den = BigInt::one();
    for ((s, b), k) in per_block {
        let size = d.blocks(s)[b].len();
        if k > size {
            return None;
        }
        for t in 0..k {
            den *= BigInt::from(size - t);
        }
    }
    Some(BigRational::new(BigInt::one(), den))
}

/// Every element of `Ω[Φ, P']`: all ways to split each domain into block
/// domains of the right sizes. Exponential; for tests and oracles.
pub fn enumerate_states(f: &PdcFormula, d: &Decomposition) -> Vec<CompressedState> {
    fn splits(dom: &[Value], sizes: &[usize]) -> Vec<Vec<Vec<Value>>> {
        if sizes.is_empty() {
            return vec![Vec::new()];
        }
        let mut out = Vec::new();
        for pick in combinations(dom, sizes[0]) {
            let rest: Vec<Value> = dom.iter().copied().filter(|x| !pick.contains(x)).collect();
            for mut tail in splits(&rest, &sizes[1..]) {
                tail.insert(0, pick.clone());
                out.push(tail);
            }
        }
        out
    }
    let per_set: Vec<Vec<Vec<Vec<Value>>>> = f
        .sets()
        .iter()
        .enumerate()
        .map(|(i, s)| splits(&s.domain, &d.block_sizes(i)))
        .collect();
    let mut out = vec![Vec::new()];
    for options in per_set {
        let mut next = Vec::with_capacity(out.len() * options.len());
        for prefix in &out {
            for o in &options {
                let mut p: Vec<Vec<Vec<Value>>> = prefix.clone();
                p.push(o.clone());
                next.push(p);
            }
        }
        out = next;
    }
    out.into_iter()
        .map(|domains| CompressedState { domains })
        .collect()
}

fn combinations(items: &[Value], k: usize) -> Vec<Vec<Value>> {
    if k == 0 {
        return vec![Vec::new()];
    }
    if items.len() < k {
        return Vec::new();
    }
    let mut out = Vec::new();
    for mut c in combinations(&items[1..], k - 1) {
        c.insert(0, items[0]);
        out.push(c);
    }
    out.extend(combinations(&items[1..], k));
    out
}

/// Whether `a` respects every block domain of `state`.
pub fn respects(d: &Decomposition, state: &CompressedState, a: &Assignment) -> bool {
    d.blocks.iter().zip(&state.domains).all(|(bs, qs)| {
        bs.iter().zip(qs).all(|(b, q)| {
            let s = PermSet {
                name: String::new(),
                vars: b.clone(),
                domain: q.clone(),
            };
            is_permutation_of(&s, a)
        })
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::enumerate_solutions;
    use crate::pdc::SetSpec;

    fn one_set(n: usize) -> PdcFormula {
        let s: SetSpec = (
            "P".into(),
            (0..n).map(|i| format!("v{i}")).collect(),
            (0..n as Value).collect(),
        );
        PdcFormula::new(vec![s], vec![]).unwrap()
    }

    #[test]
    fn block_shapes() {
        let sizes = |n, eta, l| {
            build_decomposition(&one_set(n), eta, l)
                .unwrap()
                .block_sizes(0)
        };
        assert_eq!(sizes(16, 0.5, 100), vec![4, 4, 4, 4]);
        assert_eq!(sizes(5, 1.0, 100), vec![5]);
        assert_eq!(sizes(17, 0.5, 100), vec![4, 4, 4, 5]);
        // remainder would push the last block past L
        assert_eq!(sizes(11, 1.0, 4), vec![4, 4, 3]);
        assert!(build_decomposition(&one_set(3), 0.5, 1).is_err());
        assert!(build_decomposition(&one_set(3), 0.0, 4).is_err());
    }

    #[test]
    fn projection_examples() {
        let f = one_set(4);
        let mut sigma = f.empty_assignment();
        for (i, v) in f.variables().into_iter().enumerate() {
            sigma.set(v, i as Value);
        }
        let id = Decomposition::identity(&f);
        assert_eq!(
            project(&f, &id, &sigma).unwrap().domains[0],
            vec![f.set(0).domain.clone()]
        );
        let d = build_decomposition(&f, 0.5, 100).unwrap();
        assert_eq!(
            project(&f, &d, &sigma).unwrap().domains[0],
            vec![vec![0, 1], vec![2, 3]]
        );
        assert!(project(&f, &d, &f.empty_assignment()).is_err());
    }

    fn sixteen_with(lits: &[(usize, Value)]) -> PdcFormula {
        let s: SetSpec = (
            "P".into(),
            (0..16).map(|i| format!("v{i}")).collect(),
            (0..16).collect(),
        );
        PdcFormula::new(
            vec![s],
            vec![lits.iter().map(|&(i, c)| (format!("v{i}"), c)).collect()],
        )
        .unwrap()
    }

    #[test]
    fn decomposed_bound_examples() {
        let same = sixteen_with(&[(0, 1), (1, 2)]);
        let d = build_decomposition(&same, 0.5, 100).unwrap();
        assert_eq!(
            violation_bound_decomposed_exact(&same, &d),
            BigRational::new(1.into(), 12.into())
        );
        let apart = sixteen_with(&[(0, 1), (4, 2)]);
        assert_eq!(
            violation_bound_decomposed_exact(&apart, &d),
            BigRational::new(1.into(), 16.into())
        );
        let id = Decomposition::identity(&same);
        assert_eq!(
            violation_bound_decomposed_exact(&same, &id),
            same.params().p_exact.unwrap()
        );
    }

    #[test]
    fn induced_identity_and_drop() {
        let f = PdcFormula::new(
            vec![(
                "P".into(),
                (0..4).map(|i| format!("v{i}")).collect(),
                vec![0, 1, 2, 3],
            )],
            vec![
                vec![("v0".into(), 3)],
                vec![("v0".into(), 0), ("v1".into(), 1)],
            ],
        )
        .unwrap();
        let id = Decomposition::identity(&f);
        let st = CompressedState {
            domains: vec![vec![vec![0, 1, 2, 3]]],
        };
        assert_eq!(induced_formula(&f, &id, &st).unwrap(), f);
        let d = build_decomposition(&f, 0.5, 100).unwrap();
        let st = CompressedState {
            domains: vec![vec![vec![0, 1], vec![2, 3]]],
        };
        let g = induced_formula(&f, &d, &st).unwrap();
        assert_eq!(g.constraints().len(), 1);
        assert_eq!(g.sets().len(), 2);
        let bad = CompressedState {
            domains: vec![vec![vec![0, 1], vec![1, 3]]],
        };
        assert!(induced_formula(&f, &d, &bad).is_err());
    }

    #[test]
    fn states_enumerated() {
        let f = one_set(4);
        let d = build_decomposition(&f, 0.5, 100).unwrap();
        assert_eq!(enumerate_states(&f, &d).len(), 6);
    }

    #[test]
    fn unrelated_pairs_stay_unrelated() {
        let f = PdcFormula::new(
            vec![
                (
                    "P".into(),
                    (0..4).map(|i| format!("p{i}")).collect(),
                    vec![0, 1, 2, 3],
                ),
                (
                    "U".into(),
                    (0..4).map(|i| format!("u{i}")).collect(),
                    vec![0, 1, 2, 3],
                ),
            ],
            vec![
                vec![("p0".into(), 0), ("u0".into(), 1)],
                vec![("p1".into(), 2), ("u1".into(), 3)],
                vec![("p2".into(), 1)],
                vec![("u3".into(), 0), ("p3".into(), 3)],
            ],
        )
        .unwrap();
        let d = build_decomposition(&f, 0.5, 100).unwrap();
        let valid = enumerate_solutions(&f.derive(f.sets().to_vec(), vec![]), 1e6).unwrap();
        for sol in 0..valid.count() {
            let sigma = valid.assignment(sol, f.universe());
            let st = project(&f, &d, &sigma).unwrap();
            let g = induced_formula(&f, &d, &st).unwrap();
            for a in f.constraints() {
                for b in f.constraints() {
                    let in_g = g.constraints().contains(a) && g.constraints().contains(b);
                    if in_g && !f.related_constraints(a, b) {
                        assert!(!g.related_constraints(a, b));
                    }
                }
            }
        }
    }
}
