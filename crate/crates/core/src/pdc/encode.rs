//! Encoders from combinatorial problems to PDC formulas. All vertex and value
//! labels are 0-indexed.

use std::collections::HashSet;

use super::{ConstraintSpec, PdcError, PdcFormula, SetSpec, Value};

fn numbered(prefix: &str, q: usize) -> Vec<String> {
    (0..q).map(|i| format!("{prefix}{i}")).collect()
}

fn domain(q: usize) -> Vec<Value> {
    (0..q as Value).collect()
}

/// Perfect matchings of a 3-partite 3-uniform hypergraph with parts of size
/// `q` and hyperedges `(i, j, k)`.
///
/// Variable `a{i}` is the third-part vertex matched with first-part vertex
/// `i`, and `b{j}` likewise for the second part. Every missing triple
/// `(i, j, k)` contributes `(a{i} ≠ k) ∨ (b{j} ≠ k)`.
pub fn encode_3partite_matching(q: usize, edges: &[[usize; 3]]) -> Result<PdcFormula, PdcError> {
    let mut present = HashSet::new();
    for e in edges {
        if e.iter().any(|&x| x >= q) {
            return Err(PdcError::Encoding(format!(
                "hyperedge {e:?} leaves parts of size {q}"
            )));
        }
        present.insert(*e);
    }
    let sets = vec![
        ("A".to_string(), numbered("a", q), domain(q)),
        ("B".to_string(), numbered("b", q), domain(q)),
    ];
    let mut cs = Vec::new();
    for i in 0..q {
        for j in 0..q {
            for k in 0..q {
                if !present.contains(&[i, j, k]) {
                    cs.push(vec![
                        (format!("a{i}"), k as Value),
                        (format!("b{j}"), k as Value),
                    ]);
                }
            }
        }
    }
    PdcFormula::new(sets, cs)
}

/// A teacher assignment instance.
///
/// Subject `s` has `q` teachers `0..q`, of which `seniors[s]` may act as
/// homeroom teacher. Class `c` requests one teacher of every subject in
/// `classes[c]`, and needs at least one senior among them.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TeacherSpec {
    pub q: usize,
    pub seniors: Vec<Vec<usize>>,
    pub classes: Vec<Vec<usize>>,
}

/// One permutation set per subject, with a variable per class request and
/// idle slots padding it to `q`. Each class forbids every all-junior tuple.
pub fn encode_teacher_assignment(spec: &TeacherSpec) -> Result<PdcFormula, PdcError> {
    let m = spec.seniors.len();
    let q = spec.q;
    let mut requests: Vec<Vec<String>> = vec![Vec::new(); m];
    let mut class_vars: Vec<Vec<(usize, String)>> = Vec::with_capacity(spec.classes.len());
    for (ci, subjects) in spec.classes.iter().enumerate() {
        let mut seen = HashSet::new();
        let mut vars = Vec::with_capacity(subjects.len());
        for &s in subjects {
            if s >= m {
                return Err(PdcError::Encoding(format!(
                    "class {ci} requests unknown subject {s}"
                )));
            }
            if !seen.insert(s) {
                return Err(PdcError::Encoding(format!(
                    "class {ci} requests subject {s} twice"
                )));
            }
            let name = format!("s{s}.c{ci}");
            requests[s].push(name.clone());
            vars.push((s, name));
        }
        class_vars.push(vars);
    }
    let mut sets: Vec<SetSpec> = Vec::with_capacity(m);
    for (s, mut vars) in requests.into_iter().enumerate() {
        if vars.len() > q {
            return Err(PdcError::Encoding(format!(
                "subject {s} has demand {} > {q}",
                vars.len()
            )));
        }
        if spec.seniors[s].iter().any(|&t| t >= q) {
            return Err(PdcError::Encoding(format!(
                "subject {s} lists a senior outside 0..{q}"
            )));
        }
        for idle in vars.len()..q {
            vars.push(format!("s{s}.idle{idle}"));
        }
        sets.push((format!("subject{s}"), vars, domain(q)));
    }
    let juniors: Vec<Vec<usize>> = spec
        .seniors
        .iter()
        .map(|sen| (0..q).filter(|t| !sen.contains(t)).collect())
        .collect();
    let mut cs: Vec<ConstraintSpec> = Vec::new();
    for vars in &class_vars {
        if vars.is_empty() {
            continue;
        }
        let mut idx = vec![0usize; vars.len()];
        'tuples: loop {
            if vars.iter().any(|(s, _)| juniors[*s].is_empty()) {
                break;
            }
            cs.push(
                vars.iter()
                    .zip(&idx)
                    .map(|((s, v), &t)| (v.clone(), juniors[*s][t] as Value))
                    .collect(),
            );
            for pos in (0..vars.len()).rev() {
                idx[pos] += 1;
                if idx[pos] < juniors[vars[pos].0].len() {
                    continue 'tuples;
                }
                idx[pos] = 0;
            }
            break;
        }
    }
    PdcFormula::new(sets, cs)
}

/// Factors of independent transversals of an `m`-partite hypergraph with
/// parts of size `q`. A hyperedge is a list of `(part, vertex)` pairs with
/// distinct parts; for each hyperedge and each value `i` the formula forbids
/// all its vertices taking `i`.
pub fn encode_transversal_factors(
    m: usize,
    q: usize,
    edges: &[Vec<(usize, usize)>],
) -> Result<PdcFormula, PdcError> {
    let sets: Vec<SetSpec> = (0..m)
        .map(|p| (format!("V{p}"), numbered(&format!("x{p}."), q), domain(q)))
        .collect();
    let mut cs = Vec::with_capacity(edges.len() * q);
    for (ei, e) in edges.iter().enumerate() {
        let mut parts = HashSet::new();
        for &(p, v) in e {
            if p >= m || v >= q {
                return Err(PdcError::Encoding(format!(
                    "hyperedge {ei} has vertex ({p},{v}) outside the parts"
                )));
            }
            if !parts.insert(p) {
                return Err(PdcError::Encoding(format!(
                    "hyperedge {ei} has two vertices in part {p}"
                )));
            }
        }
        if e.is_empty() {
            return Err(PdcError::Encoding(format!("hyperedge {ei} is empty")));
        }
        for i in 0..q {
            cs.push(
                e.iter()
                    .map(|&(p, v)| (format!("x{p}.{v}"), i as Value))
                    .collect(),
            );
        }
    }
    PdcFormula::new(sets, cs)
}
