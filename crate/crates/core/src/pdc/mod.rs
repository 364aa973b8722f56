//! Formulas over permutations with disjunctive constraints.
//!
//! A formula has disjoint permutation sets `P_i` with domains `Q_i`
//! (`|P_i| = |Q_i|`) and constraints `C = (v₁ ≠ c₁) ∨ … ∨ (v_k ≠ c_k)`. An
//! assignment is valid when each `P_i` receives a permutation of `Q_i`, and
//! satisfying when it is valid and meets every constraint.

pub mod encode;

use std::collections::{BTreeMap, HashMap, HashSet};
use std::sync::Arc;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Var(pub u32);

impl Var {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

pub type Value = u32;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PdcError {
    #[error("variable `{0}` appears in more than one permutation set")]
    DuplicateVariable(String),
    #[error("set `{name}` has {vars} variables but a domain of {domain}")]
    SizeMismatch {
        name: String,
        vars: usize,
        domain: usize,
    },
    #[error("set `{0}` repeats a domain value")]
    DuplicateValue(String),
    #[error("constraint {0} is empty")]
    EmptyConstraint(usize),
    #[error("constraint {constraint} mentions unknown variable `{var}`")]
    UnknownVariable { constraint: usize, var: String },
    #[error("constraint {constraint} uses value {value} outside the domain of `{var}`")]
    ValueOutOfDomain {
        constraint: usize,
        var: String,
        value: Value,
    },
    #[error("constraint {0} repeats a literal")]
    DuplicateLiteral(usize),
    #[error("fixed values on set `{0}` are not a permutation of its domain")]
    NotPermutation(String),
    #[error("constraint {0} is falsified by the fixed values")]
    Falsified(usize),
    #[error("invalid encoder input: {0}")]
    Encoding(String),
}

/// The literal `var ≠ value`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Literal {
    pub var: Var,
    pub value: Value,
}

/// A disjunction of `≠` literals, kept sorted.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Constraint {
    lits: Vec<Literal>,
}

impl Constraint {
    pub fn new(mut lits: Vec<Literal>) -> Self {
        lits.sort_unstable();
        lits.dedup();
        Constraint { lits }
    }

    pub fn literals(&self) -> &[Literal] {
        &self.lits
    }

    pub fn width(&self) -> usize {
        self.lits.len()
    }

    pub fn vars(&self) -> impl Iterator<Item = Var> + '_ {
        self.lits.iter().map(|l| l.var)
    }

    pub fn mentions(&self, v: Var) -> bool {
        self.lits.iter().any(|l| l.var == v)
    }

    /// True iff every literal is assigned and equals its forbidden value.
    pub fn violated_by(&self, a: &Assignment) -> bool {
        self.lits.iter().all(|l| a.get(l.var) == Some(l.value))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PermSet {
    pub name: String,
    pub vars: Vec<Var>,
    /// Sorted.
    pub domain: Vec<Value>,
}

impl PermSet {
    pub fn len(&self) -> usize {
        self.vars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vars.is_empty()
    }

    pub fn has_value(&self, c: Value) -> bool {
        self.domain.binary_search(&c).is_ok()
    }
}

/// A partial map from variables to values, indexed over the variable universe
/// of the formula it came from.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Default)]
pub struct Assignment {
    values: Vec<Option<Value>>,
}

impl Assignment {
    pub fn empty(universe: usize) -> Self {
        Assignment {
            values: vec![None; universe],
        }
    }

    #[inline]
    pub fn get(&self, v: Var) -> Option<Value> {
        self.values.get(v.index()).copied().flatten()
    }

    #[inline]
    pub fn set(&mut self, v: Var, c: Value) {
        self.values[v.index()] = Some(c);
    }

    pub fn clear(&mut self, v: Var) {
        self.values[v.index()] = None;
    }

    /// Copies every assigned value of `other` into `self`.
    pub fn merge(&mut self, other: &Assignment) {
        for (dst, src) in self.values.iter_mut().zip(&other.values) {
            if src.is_some() {
                *dst = *src;
            }
        }
    }

    pub fn universe(&self) -> usize {
        self.values.len()
    }

    pub fn assigned(&self) -> impl Iterator<Item = (Var, Value)> + '_ {
        self.values
            .iter()
            .enumerate()
            .filter_map(|(i, v)| v.map(|c| (Var(i as u32), c)))
    }

    /// Values of `vars` in order; unassigned variables are skipped.
    pub fn key(&self, vars: &[Var]) -> Vec<Value> {
        vars.iter().filter_map(|&v| self.get(v)).collect()
    }
}

/// `k`, `d`, `Δ` (self included), `q` and `p` of a formula.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FormulaParams {
    pub k: usize,
    pub d: usize,
    pub delta: usize,
    pub q: usize,
    pub p: f64,
    #[serde(skip)]
    pub p_exact: Option<BigRational>,
    pub constraints: usize,
    pub vars: usize,
    pub sets: usize,
}

#[derive(Clone, Debug)]
pub struct PdcFormula {
    names: Arc<Vec<String>>,
    sets: Vec<PermSet>,
    constraints: Vec<Constraint>,
    set_of: HashMap<Var, usize>,
}

impl PartialEq for PdcFormula {
    fn eq(&self, other: &Self) -> bool {
        self.sets == other.sets
            && self.constraints == other.constraints
            && self.names == other.names
    }
}

pub type SetSpec = (String, Vec<String>, Vec<Value>);
pub type ConstraintSpec = Vec<(String, Value)>;

impl PdcFormula {
    /// Builds a formula from named sets and constraints. Variables are indexed
    /// in input order. Constraints that can never be violated (two literals of
    /// one set forbidding the same value on different variables, or one
    /// variable forbidding two values) are dropped with a warning.
    pub fn new(sets: Vec<SetSpec>, constraints: Vec<ConstraintSpec>) -> Result<Self, PdcError> {
        let mut names = Vec::new();
        let mut index: HashMap<String, Var> = HashMap::new();
        let mut out_sets = Vec::with_capacity(sets.len());
        for (name, vars, mut domain) in sets {
            if vars.len() != domain.len() {
                return Err(PdcError::SizeMismatch {
                    name,
                    vars: vars.len(),
                    domain: domain.len(),
                });
            }
            domain.sort_unstable();
            if domain.windows(2).any(|w| w[0] == w[1]) {
                return Err(PdcError::DuplicateValue(name));
            }
            let mut vs = Vec::with_capacity(vars.len());
            for v in vars {
                if index.contains_key(&v) {
                    return Err(PdcError::DuplicateVariable(v));
                }
                let id = Var(names.len() as u32);
                index.insert(v.clone(), id);
                names.push(v);
                vs.push(id);
            }
            out_sets.push(PermSet {
                name,
                vars: vs,
                domain,
            });
        }
        let names = Arc::new(names);
        let mut f = PdcFormula::from_parts(names, out_sets, Vec::new());
        let mut cs = Vec::with_capacity(constraints.len());
        for (ci, lits) in constraints.into_iter().enumerate() {
            if lits.is_empty() {
                return Err(PdcError::EmptyConstraint(ci));
            }
            let mut out = Vec::with_capacity(lits.len());
            for (name, value) in lits {
                let var = *index.get(&name).ok_or_else(|| PdcError::UnknownVariable {
                    constraint: ci,
                    var: name.clone(),
                })?;
                if !f.sets[f.set_of[&var]].has_value(value) {
                    return Err(PdcError::ValueOutOfDomain {
                        constraint: ci,
                        var: name,
                        value,
                    });
                }
                out.push(Literal { var, value });
            }
            let n = out.len();
            let c = Constraint::new(out);
            if c.width() != n {
                return Err(PdcError::DuplicateLiteral(ci));
            }
            if f.violation_factors(&c).is_none() {
                log::warn!("constraint {ci} can never be violated; dropped");
                continue;
            }
            cs.push(c);
        }
        f.constraints = cs;
        Ok(f)
    }

    pub(crate) fn from_parts(
        names: Arc<Vec<String>>,
        sets: Vec<PermSet>,
        constraints: Vec<Constraint>,
    ) -> Self {
        let mut set_of = HashMap::with_capacity(sets.iter().map(|s| s.len()).sum());
        for (i, s) in sets.iter().enumerate() {
            for &v in &s.vars {
                set_of.insert(v, i);
            }
        }
        PdcFormula {
            names,
            sets,
            constraints,
            set_of,
        }
    }

    /// Same universe, new sets and constraints.
    pub(crate) fn derive(&self, sets: Vec<PermSet>, constraints: Vec<Constraint>) -> Self {
        Self::from_parts(self.names.clone(), sets, constraints)
    }

    /// Size of the variable universe; [`Assignment`]s are indexed over it.
    pub fn universe(&self) -> usize {
        self.names.len()
    }

    pub fn var_name(&self, v: Var) -> &str {
        &self.names[v.index()]
    }

    pub fn var_by_name(&self, name: &str) -> Option<Var> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| Var(i as u32))
    }

    pub fn sets(&self) -> &[PermSet] {
        &self.sets
    }

    pub fn set(&self, i: usize) -> &PermSet {
        &self.sets[i]
    }

    pub fn constraints(&self) -> &[Constraint] {
        &self.constraints
    }

    /// Index of the set holding `v`, if `v` belongs to this formula.
    pub fn set_of(&self, v: Var) -> Option<usize> {
        self.set_of.get(&v).copied()
    }

    pub fn num_vars(&self) -> usize {
        self.set_of.len()
    }

    /// Variables in set order.
    pub fn variables(&self) -> Vec<Var> {
        self.sets
            .iter()
            .flat_map(|s| s.vars.iter().copied())
            .collect()
    }

    pub fn empty_assignment(&self) -> Assignment {
        Assignment::empty(self.universe())
    }

    /// Each set carries a permutation of its domain.
    pub fn is_valid(&self, a: &Assignment) -> bool {
        self.sets.iter().all(|s| is_permutation_of(s, a))
    }

    pub fn is_satisfying(&self, a: &Assignment) -> bool {
        self.is_valid(a) && self.constraints.iter().all(|c| !c.violated_by(a))
    }

    /// Constraints of this formula touching set `i`.
    pub fn touching(&self, i: usize) -> Vec<usize> {
        (0..self.constraints.len())
            .filter(|&ci| {
                self.constraints[ci]
                    .vars()
                    .any(|v| self.set_of(v) == Some(i))
            })
            .collect()
    }

    /// The formula without the constraints touching set `i`.
    pub fn without_touching(&self, i: usize) -> PdcFormula {
        let cs = self
            .constraints
            .iter()
            .filter(|c| !c.vars().any(|v| self.set_of(v) == Some(i)))
            .cloned()
            .collect();
        self.derive(self.sets.clone(), cs)
    }

    /// `(q_i, k_i)` per set touched by `c`, or `None` if `c` can never be
    /// violated under a valid assignment.
    fn violation_factors(&self, c: &Constraint) -> Option<Vec<(usize, usize)>> {
        let mut per_set: BTreeMap<usize, (HashSet<Var>, HashSet<Value>)> = BTreeMap::new();
        let mut by_var: HashMap<Var, Value> = HashMap::new();
        for l in c.literals() {
            if let Some(&prev) = by_var.get(&l.var) {
                if prev != l.value {
                    return None;
                }
            }
            by_var.insert(l.var, l.value);
            let si = self.set_of(l.var)?;
            if !self.sets[si].has_value(l.value) {
                return None;
            }
            let e = per_set.entry(si).or_default();
            e.0.insert(l.var);
            e.1.insert(l.value);
        }
        let mut out = Vec::with_capacity(per_set.len());
        for (si, (vars, vals)) in per_set {
            if vars.len() != vals.len() {
                return None;
            }
            out.push((self.sets[si].len(), vars.len()));
        }
        Some(out)
    }

    /// Exact probability that `c` is violated under a uniform valid
    /// assignment: `∏ 1/(q_i (q_i−1) ⋯ (q_i−k_i+1))`.
    pub fn violation_prob_exact(&self, c: &Constraint) -> BigRational {
        match self.violation_factors(c) {
            None => BigRational::zero(),
            Some(fs) => {
                let mut den = BigInt::one();
                for (q, k) in fs {
                    for t in 0..k {
                        den *= BigInt::from(q - t);
                    }
                }
                BigRational::new(BigInt::one(), den)
            }
        }
    }

    pub fn violation_prob(&self, c: &Constraint) -> f64 {
        match self.violation_factors(c) {
            None => 0.0,
            Some(fs) => fs
                .into_iter()
                .map(|(q, k)| (0..k).map(|t| 1.0 / (q - t) as f64).product::<f64>())
                .product(),
        }
    }

    /// Lopsided dependency between constraints `a` and `b`: they share a
    /// variable, or forbid the same value on variables of one set.
    pub fn related(&self, a: usize, b: usize) -> bool {
        self.related_constraints(&self.constraints[a], &self.constraints[b])
    }

    pub fn related_constraints(&self, a: &Constraint, b: &Constraint) -> bool {
        a.literals().iter().any(|x| {
            b.literals().iter().any(|y| {
                x.var == y.var || (x.value == y.value && self.set_of(x.var) == self.set_of(y.var))
            })
        })
    }

    /// For each constraint, the indices of related constraints (self included).
    pub fn neighbourhoods(&self) -> Vec<Vec<usize>> {
        let mut by_var: HashMap<Var, Vec<usize>> = HashMap::new();
        let mut by_val: HashMap<(usize, Value), Vec<usize>> = HashMap::new();
        for (ci, c) in self.constraints.iter().enumerate() {
            for l in c.literals() {
                by_var.entry(l.var).or_default().push(ci);
                if let Some(si) = self.set_of(l.var) {
                    by_val.entry((si, l.value)).or_default().push(ci);
                }
            }
        }
        self.constraints
            .iter()
            .map(|c| {
                let mut nb: Vec<usize> = Vec::new();
                for l in c.literals() {
                    nb.extend(&by_var[&l.var]);
                    if let Some(si) = self.set_of(l.var) {
                        nb.extend(&by_val[&(si, l.value)]);
                    }
                }
                nb.sort_unstable();
                nb.dedup();
                nb
            })
            .collect()
    }

    pub fn params(&self) -> FormulaParams {
        let k = self
            .constraints
            .iter()
            .map(|c| c.width())
            .max()
            .unwrap_or(0);
        let mut deg: HashMap<Var, usize> = HashMap::new();
        for c in &self.constraints {
            for v in c.vars() {
                *deg.entry(v).or_default() += 1;
            }
        }
        let d = deg.values().copied().max().unwrap_or(0);
        let delta = self
            .neighbourhoods()
            .iter()
            .map(Vec::len)
            .max()
            .unwrap_or(0);
        let q = self.sets.iter().map(|s| s.len()).min().unwrap_or(0);
        let p_exact = self
            .constraints
            .iter()
            .map(|c| self.violation_prob_exact(c))
            .max()
            .unwrap_or_else(BigRational::zero);
        let p = p_exact.to_f64().unwrap_or(0.0);
        FormulaParams {
            k,
            d,
            delta,
            q,
            p,
            p_exact: Some(p_exact),
            constraints: self.constraints.len(),
            vars: self.num_vars(),
            sets: self.sets.len(),
        }
    }

    /// `e·p·Δ ≤ 1`, with `p` exact.
    pub fn lll_check(&self) -> bool {
        let prm = self.params();
        prm.p * prm.delta as f64 * std::f64::consts::E <= 1.0
    }

    /// Residual formula after fixing whole permutation sets.
    ///
    /// Every set must be either fully assigned by `fixed` (with a permutation
    /// of its domain) or left untouched. Satisfied constraints vanish; literals
    /// on fixed variables that equal their forbidden value are deleted.
    pub fn simplify(&self, fixed: &Assignment) -> Result<PdcFormula, PdcError> {
        let mut keep = Vec::new();
        for s in &self.sets {
            let assigned = s.vars.iter().filter(|&&v| fixed.get(v).is_some()).count();
            if assigned == 0 {
                keep.push(s.clone());
            } else if assigned != s.len() || !is_permutation_of(s, fixed) {
                return Err(PdcError::NotPermutation(s.name.clone()));
            }
        }
        let mut cs = Vec::new();
        'outer: for (ci, c) in self.constraints.iter().enumerate() {
            let mut lits = Vec::with_capacity(c.width());
            for l in c.literals() {
                match fixed.get(l.var) {
                    Some(x) if x != l.value => continue 'outer,
                    Some(_) => {}
                    None => lits.push(*l),
                }
            }
            if lits.is_empty() {
                return Err(PdcError::Falsified(ci));
            }
            cs.push(Constraint { lits });
        }
        Ok(self.derive(keep, cs))
    }

    /// Whether `c` is satisfied by every valid assignment of this formula
    /// (some literal value lies outside its set's domain, or the violation
    /// event is impossible).
    pub fn trivially_satisfied(&self, c: &Constraint) -> bool {
        self.violation_factors(c).is_none()
    }

    /// Drops constraints satisfied by every valid assignment.
    pub fn prune(&self) -> PdcFormula {
        let cs = self
            .constraints
            .iter()
            .filter(|c| !self.trivially_satisfied(c))
            .cloned()
            .collect();
        self.derive(self.sets.clone(), cs)
    }

    /// Connected components of the hypergraph on permutation sets whose edges
    /// are the sets touched by each constraint, ordered by their first set.
    /// Constraints that no valid assignment can violate are dropped first.
    pub fn factorize(&self) -> Vec<PdcFormula> {
        let m = self.sets.len();
        let mut uf = UnionFind::new(m);
        let live: Vec<&Constraint> = self
            .constraints
            .iter()
            .filter(|c| !self.trivially_satisfied(c))
            .collect();
        for c in &live {
            let mut it = c.vars().filter_map(|v| self.set_of(v));
            if let Some(first) = it.next() {
                for s in it {
                    uf.union(first, s);
                }
            }
        }
        let mut comp_of_root: HashMap<usize, usize> = HashMap::new();
        let mut comps: Vec<(Vec<PermSet>, Vec<Constraint>)> = Vec::new();
        let mut set_comp = vec![0; m];
        for i in 0..m {
            let r = uf.find(i);
            let ci = *comp_of_root.entry(r).or_insert_with(|| {
                comps.push((Vec::new(), Vec::new()));
                comps.len() - 1
            });
            set_comp[i] = ci;
            comps[ci].0.push(self.sets[i].clone());
        }
        for c in live {
            if let Some(s) = c.vars().find_map(|v| self.set_of(v)) {
                comps[set_comp[s]].1.push(c.clone());
            }
        }
        comps.into_iter().map(|(s, c)| self.derive(s, c)).collect()
    }

    /// Number of valid assignments, `∏ |Q_i|!`, in log space.
    pub fn ln_valid_count(&self) -> f64 {
        self.sets
            .iter()
            .map(|s| crate::prp::ln_factorial(s.len()))
            .sum()
    }
}

pub(crate) fn is_permutation_of(s: &PermSet, a: &Assignment) -> bool {
    let mut vals: Vec<Value> = Vec::with_capacity(s.len());
    for &v in &s.vars {
        match a.get(v) {
            Some(c) => vals.push(c),
            None => return false,
        }
    }
    vals.sort_unstable();
    vals == s.domain
}

pub(crate) struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    pub(crate) fn new(n: usize) -> Self {
        UnionFind {
            parent: (0..n).collect(),
        }
    }

    pub(crate) fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    pub(crate) fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.parent[ra.max(rb)] = ra.min(rb);
        }
    }
}
