//! Seeded instance generators.

use rand::seq::SliceRandom;
use thiserror::Error;

use permlll_core::pdc::encode::{encode_3partite_matching, encode_teacher_assignment, TeacherSpec};
use permlll_core::pdc::{SetSpec, Value};
use permlll_core::prp::max_zeros_per_line;
use permlll_core::{PdcError, PdcFormula, PrpError, PrpInstance, RngStream};

#[derive(Debug, Error)]
pub enum GenError {
    #[error("{0}")]
    Infeasible(String),
    #[error(transparent)]
    Prp(#[from] PrpError),
    #[error(transparent)]
    Pdc(#[from] PdcError),
}

/// A very dense `n × n` instance with exactly `zeros` forbidden positions.
///
/// The zeros are a random subset of the first `cap` cyclic diagonals, where
/// `cap` is the per-line zero allowance, under random row and column
/// permutations.
pub fn gen_prp(n: usize, zeros: usize, rng: &mut RngStream) -> Result<PrpInstance, GenError> {
    if n == 0 {
        return Err(GenError::Infeasible("n must be positive".into()));
    }
    let cap = max_zeros_per_line(n);
    if zeros > n * cap {
        return Err(GenError::Infeasible(format!(
            "{zeros} zeros exceed the very dense limit of {} for n = {n} ({cap} per line)",
            n * cap
        )));
    }
    let mut cells: Vec<(usize, usize)> = (0..n)
        .flat_map(|i| (0..cap).map(move |d| (i, (i + d) % n)))
        .collect();
    cells.shuffle(rng);
    cells.truncate(zeros);
    let mut rp: Vec<usize> = (0..n).collect();
    let mut cp: Vec<usize> = (0..n).collect();
    rp.shuffle(rng);
    cp.shuffle(rng);
    let zs: Vec<(usize, usize)> = cells.into_iter().map(|(i, j)| (rp[i], cp[j])).collect();
    Ok(PrpInstance::from_zeros(n, &zs)?)
}

/// `m` sets `P{i}` of size `q` over values `0..q`, with `constraints`
/// random constraints of width `k`. Literals on one set get distinct values,
/// so every constraint can be violated.
pub fn gen_pdc_uniform(
    k: usize,
    q: usize,
    m: usize,
    constraints: usize,
    rng: &mut RngStream,
) -> Result<PdcFormula, GenError> {
    if k == 0 || q == 0 || m == 0 {
        return Err(GenError::Infeasible("k, q and m must be positive".into()));
    }
    if k > m * q {
        return Err(GenError::Infeasible(format!(
            "width {k} exceeds the {} variables",
            m * q
        )));
    }
    let sets: Vec<SetSpec> = (0..m)
        .map(|i| {
            (
                format!("P{i}"),
                (0..q).map(|j| format!("x{i}.{j}")).collect(),
                (0..q as Value).collect(),
            )
        })
        .collect();
    let all: Vec<(usize, usize)> = (0..m).flat_map(|i| (0..q).map(move |j| (i, j))).collect();
    let mut cs = Vec::with_capacity(constraints);
    for _ in 0..constraints {
        let vars: Vec<(usize, usize)> = all.choose_multiple(rng, k).copied().collect();
        let mut per_set: Vec<Vec<Value>> = vec![(0..q as Value).collect(); m];
        for vals in per_set.iter_mut() {
            vals.shuffle(rng);
        }
        let mut used = vec![0usize; m];
        let c = vars
            .into_iter()
            .map(|(i, j)| {
                let v = per_set[i][used[i]];
                used[i] += 1;
                (format!("x{i}.{j}"), v)
            })
            .collect();
        cs.push(c);
    }
    Ok(PdcFormula::new(sets, cs)?)
}

/// Perfect matchings of a 3-partite hypergraph with parts of size `q`:
/// all `q³` triples, or `edges` of them chosen at random.
pub fn gen_hypergraph(
    q: usize,
    edges: Option<usize>,
    rng: &mut RngStream,
) -> Result<PdcFormula, GenError> {
    let mut all: Vec<[usize; 3]> = (0..q)
        .flat_map(|i| (0..q).flat_map(move |j| (0..q).map(move |k| [i, j, k])))
        .collect();
    if let Some(e) = edges {
        if e > all.len() {
            return Err(GenError::Infeasible(format!(
                "{e} edges exceed the {} possible triples",
                all.len()
            )));
        }
        all.shuffle(rng);
        all.truncate(e);
        all.sort_unstable();
    }
    Ok(encode_3partite_matching(q, &all)?)
}

/// Teacher assignment with `subjects` subjects of `q` teachers each, of
/// which `seniors` per subject are senior, and `classes` classes each
/// requesting `per_class` random subjects.
pub fn gen_teachers(
    q: usize,
    subjects: usize,
    seniors: usize,
    classes: usize,
    per_class: usize,
    rng: &mut RngStream,
) -> Result<PdcFormula, GenError> {
    if seniors > q || per_class > subjects {
        return Err(GenError::Infeasible(
            "seniors must be ≤ q and per-class ≤ subjects".into(),
        ));
    }
    let seniors: Vec<Vec<usize>> = (0..subjects)
        .map(|_| {
            let mut t: Vec<usize> = (0..q).collect();
            t.shuffle(rng);
            t.truncate(seniors);
            t.sort_unstable();
            t
        })
        .collect();
    let mut load = vec![0usize; subjects];
    let mut cls = Vec::with_capacity(classes);
    for c in 0..classes {
        let open: Vec<usize> = (0..subjects).filter(|&s| load[s] < q).collect();
        if open.len() < per_class {
            return Err(GenError::Infeasible(format!(
                "class {c} cannot find {per_class} subjects with free teachers"
            )));
        }
        let mut pick: Vec<usize> = open.choose_multiple(rng, per_class).copied().collect();
        pick.sort_unstable();
        for &s in &pick {
            load[s] += 1;
        }
        cls.push(pick);
    }
    Ok(encode_teacher_assignment(&TeacherSpec {
        q,
        seniors,
        classes: cls,
    })?)
}
