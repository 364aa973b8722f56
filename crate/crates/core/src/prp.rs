//! Permutations with restricted positions: the instance type, the per-row
//! weight recursion `f`, the closed-form estimator `g`, density checks and the
//! permanent bracket for very dense instances.

use std::f64::consts::{E, PI};
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PrpError {
    #[error("instance must have n >= 1")]
    Empty,
    #[error("expected {expected} rows, found {found}")]
    RowCount { expected: usize, found: usize },
    #[error("row {row} has no allowed value")]
    EmptyRow { row: usize },
    #[error("row {row} lists value {value} outside 0..{n}")]
    OutOfRange { row: usize, value: usize, n: usize },
    #[error("row {row} lists value {value} twice")]
    Duplicate { row: usize, value: usize },
    #[error("instance is not very dense: min row {min_row}, min column {min_col}, threshold {threshold:.4}")]
    DensityViolation {
        min_row: usize,
        min_col: usize,
        threshold: f64,
    },
    #[error("instance has no valid permutation (column {column} is empty)")]
    Infeasible { column: usize },
    #[error("g({x}, {y}) is undefined: need x < y^2")]
    Domain { x: f64, y: f64 },
}

/// An `n`-row restricted-position instance: row `i` may take the values in
/// `allowed(i)`. Equivalently a 0-1 matrix with a `1` at `(i, j)` iff
/// `j ∈ allowed(i)`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawPrp", into = "RawPrp")]
pub struct PrpInstance {
    n: usize,
    allowed: Vec<Vec<usize>>,
    mask: Vec<bool>,
    col_sizes: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct RawPrp {
    n: usize,
    allowed: Vec<Vec<usize>>,
}

impl TryFrom<RawPrp> for PrpInstance {
    type Error = PrpError;
    fn try_from(raw: RawPrp) -> Result<Self, PrpError> {
        PrpInstance::new(raw.n, raw.allowed)
    }
}

impl From<PrpInstance> for RawPrp {
    fn from(p: PrpInstance) -> Self {
        RawPrp {
            n: p.n,
            allowed: p.allowed,
        }
    }
}

impl PrpInstance {
    /// Rows are sorted on construction; duplicates and out-of-range values are
    /// rejected.
    pub fn new(n: usize, mut allowed: Vec<Vec<usize>>) -> Result<Self, PrpError> {
        if n == 0 {
            return Err(PrpError::Empty);
        }
        if allowed.len() != n {
            return Err(PrpError::RowCount {
                expected: n,
                found: allowed.len(),
            });
        }
        let mut mask = vec![false; n * n];
        let mut col_sizes = vec![0; n];
        for (row, vals) in allowed.iter_mut().enumerate() {
            if vals.is_empty() {
                return Err(PrpError::EmptyRow { row });
            }
            vals.sort_unstable();
            for &value in vals.iter() {
                if value >= n {
                    return Err(PrpError::OutOfRange { row, value, n });
                }
                if mask[row * n + value] {
                    return Err(PrpError::Duplicate { row, value });
                }
                mask[row * n + value] = true;
                col_sizes[value] += 1;
            }
        }
        Ok(PrpInstance {
            n,
            allowed,
            mask,
            col_sizes,
        })
    }

    /// The all-ones instance `J_n`.
    pub fn full(n: usize) -> Self {
        Self::new(n, vec![(0..n).collect(); n]).expect("full instance is well formed")
    }

    /// Builds from a square boolean matrix.
    pub fn from_matrix(rows: &[Vec<bool>]) -> Result<Self, PrpError> {
        let n = rows.len();
        let mut allowed = Vec::with_capacity(n);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != n {
                return Err(PrpError::OutOfRange {
                    row: i,
                    value: r.len(),
                    n,
                });
            }
            allowed.push(
                r.iter()
                    .enumerate()
                    .filter(|(_, &b)| b)
                    .map(|(j, _)| j)
                    .collect(),
            );
        }
        Self::new(n, allowed)
    }

    /// Builds from a list of forbidden `(row, col)` cells.
    pub fn from_zeros(n: usize, zeros: &[(usize, usize)]) -> Result<Self, PrpError> {
        let mut m = vec![vec![true; n]; n];
        for &(i, j) in zeros {
            if i >= n || j >= n {
                return Err(PrpError::OutOfRange {
                    row: i.min(n),
                    value: j,
                    n,
                });
            }
            m[i][j] = false;
        }
        Self::from_matrix(&m)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn allowed(&self, row: usize) -> &[usize] {
        &self.allowed[row]
    }

    pub fn rows(&self) -> &[Vec<usize>] {
        &self.allowed
    }

    #[inline]
    pub fn contains(&self, row: usize, col: usize) -> bool {
        self.mask[row * self.n + col]
    }

    pub fn row_size(&self, row: usize) -> usize {
        self.allowed[row].len()
    }

    pub fn col_size(&self, col: usize) -> usize {
        self.col_sizes[col]
    }

    /// Number of forbidden cells.
    pub fn zeros(&self) -> usize {
        self.n * self.n - self.col_sizes.iter().sum::<usize>()
    }

    pub fn to_matrix(&self) -> Vec<Vec<bool>> {
        (0..self.n)
            .map(|i| self.mask[i * self.n..(i + 1) * self.n].to_vec())
            .collect()
    }

    /// The instance with row `i` moved to `row_perm[i]` and column `j` to
    /// `col_perm[j]`.
    pub fn permuted(&self, row_perm: &[usize], col_perm: &[usize]) -> Self {
        let mut allowed = vec![Vec::new(); self.n];
        for (i, vals) in self.allowed.iter().enumerate() {
            allowed[row_perm[i]] = vals.iter().map(|&j| col_perm[j]).collect();
        }
        Self::new(self.n, allowed).expect("permutation preserves well-formedness")
    }

    /// Row `i` and column `i` swap roles.
    pub fn transposed(&self) -> Result<Self, PrpError> {
        let mut allowed = vec![Vec::new(); self.n];
        for (i, vals) in self.allowed.iter().enumerate() {
            for &j in vals {
                allowed[j].push(i);
            }
        }
        Self::new(self.n, allowed)
    }

    /// Whether `image` is a bijection that respects every row.
    pub fn accepts(&self, image: &[usize]) -> bool {
        if image.len() != self.n {
            return false;
        }
        let mut seen = vec![false; self.n];
        for (i, &j) in image.iter().enumerate() {
            if j >= self.n || seen[j] || !self.contains(i, j) {
                return false;
            }
            seen[j] = true;
        }
        true
    }

    /// First empty column, if any.
    pub fn empty_column(&self) -> Option<usize> {
        self.col_sizes.iter().position(|&c| c == 0)
    }
}

const F_CACHE_LEN: usize = 1 << 16;

fn f_table() -> &'static [f64] {
    static TABLE: OnceLock<Vec<f64>> = OnceLock::new();
    TABLE.get_or_init(|| {
        let mut t = Vec::with_capacity(F_CACHE_LEN);
        t.push(0.0);
        t.push(E);
        while t.len() < F_CACHE_LEN {
            let x = *t.last().unwrap();
            t.push(f_step(x));
        }
        t
    })
}

#[inline]
fn f_step(x: f64) -> f64 {
    x + 1.0 + 1.0 / (2.0 * x) + 0.6 / (2.0 * x * x)
}

/// Per-row weight: `f(0) = 0`, `f(1) = e`,
/// `f(a+1) = f(a) + 1 + 1/(2 f(a)) + 0.6/(2 f(a)^2)`.
///
/// `∏ f(|R_i|)/e` bounds the number of valid permutations from above, and
/// `f(0) = 0` gives dead branches zero weight.
pub fn f_bound(a: usize) -> f64 {
    let t = f_table();
    if a < t.len() {
        return t[a];
    }
    let mut x = t[t.len() - 1];
    for _ in t.len()..=a {
        x = f_step(x);
    }
    x
}

/// `ln f(a)`, with `ln f(0) = -inf`.
pub fn ln_f_bound(a: usize) -> f64 {
    f_bound(a).ln()
}

/// `ln g(x, y)` where `g(x, y) = 2πy·exp(1/(3y))·(y/e)^y·(1 − x/y²)^y`.
pub fn ln_g_estimate(x: f64, y: f64) -> Result<f64, PrpError> {
    if !(y > 0.0) || !(x >= 0.0) || x >= y * y {
        return Err(PrpError::Domain { x, y });
    }
    Ok((2.0 * PI * y).ln() + 1.0 / (3.0 * y) + y * (y.ln() - 1.0) + y * (-x / (y * y)).ln_1p())
}

/// `g(x, y)`; overflows to `+inf` for large `y`, use [`ln_g_estimate`] there.
pub fn g_estimate(x: f64, y: f64) -> Result<f64, PrpError> {
    ln_g_estimate(x, y).map(f64::exp)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DensityReport {
    pub rho: usize,
    pub min_row_size: usize,
    pub min_col_size: usize,
    pub threshold: f64,
    pub very_dense: bool,
}

/// `n − √((n−2)/20)`. For `n = 1` the formula is undefined; the threshold is
/// taken as `n`, so only the full 1×1 matrix counts as very dense.
pub fn density_threshold(n: usize) -> f64 {
    if n < 2 {
        return n as f64;
    }
    n as f64 - ((n as f64 - 2.0) / 20.0).sqrt()
}

/// Largest number of zeros a single row or column of a very dense `n × n`
/// instance may carry.
pub fn max_zeros_per_line(n: usize) -> usize {
    let t = density_threshold(n);
    (0..=n).rev().find(|&z| (n - z) as f64 >= t).unwrap_or(0)
}

pub fn density_report(inst: &PrpInstance) -> DensityReport {
    let n = inst.n();
    let min_row_size = (0..n).map(|i| inst.row_size(i)).min().unwrap_or(0);
    let min_col_size = (0..n).map(|j| inst.col_size(j)).min().unwrap_or(0);
    let threshold = density_threshold(n);
    DensityReport {
        rho: inst.zeros(),
        min_row_size,
        min_col_size,
        threshold,
        very_dense: min_row_size as f64 >= threshold && min_col_size as f64 >= threshold,
    }
}

/// Checks the very-dense precondition.
pub fn require_very_dense(inst: &PrpInstance) -> Result<DensityReport, PrpError> {
    let r = density_report(inst);
    if r.very_dense {
        Ok(r)
    } else {
        Err(PrpError::DensityViolation {
            min_row: r.min_row_size,
            min_col: r.min_col_size,
            threshold: r.threshold,
        })
    }
}

/// `ln ∏ f(|R_i|)/e`.
pub fn ln_bregman_upper(inst: &PrpInstance) -> f64 {
    (0..inst.n())
        .map(|i| ln_f_bound(inst.row_size(i)) - 1.0)
        .sum()
}

/// `∏ f(|R_i|)/e`, an upper bound on the number of valid permutations.
pub fn bregman_upper(inst: &PrpInstance) -> f64 {
    ln_bregman_upper(inst).exp()
}

/// `ln ∏ (r_i!)^{1/r_i}`, the classical Minc–Bregman bound.
pub fn ln_bregman_classical(inst: &PrpInstance) -> f64 {
    (0..inst.n())
        .map(|i| {
            let r = inst.row_size(i);
            ln_factorial(r) / r as f64
        })
        .sum()
}

pub fn bregman_classical(inst: &PrpInstance) -> f64 {
    ln_bregman_classical(inst).exp()
}

pub(crate) fn ln_factorial(r: usize) -> f64 {
    (2..=r).map(|k| (k as f64).ln()).sum()
}

/// Lower and upper bounds on the number of valid permutations, in log space.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PermanentBracket {
    pub ln_lower: f64,
    pub ln_upper: f64,
}

impl PermanentBracket {
    pub fn lower(&self) -> f64 {
        self.ln_lower.exp()
    }

    pub fn upper(&self) -> f64 {
        self.ln_upper.exp()
    }

    /// `upper / lower`.
    pub fn ratio(&self) -> f64 {
        (self.ln_upper - self.ln_lower).exp()
    }

    pub fn contains(&self, count: f64) -> bool {
        let c = count.ln();
        c >= self.ln_lower - 1e-9 && c <= self.ln_upper + 1e-9
    }
}

/// `[g(ρ,n)/(√(2πn)e²), ∏ f(|R_i|)/e]` for a very dense instance.
pub fn permanent_bracket(inst: &PrpInstance) -> Result<PermanentBracket, PrpError> {
    let rep = require_very_dense(inst)?;
    let n = inst.n() as f64;
    let ln_lower = ln_g_estimate(rep.rho as f64, n)? - 0.5 * (2.0 * PI * n).ln() - 2.0;
    Ok(PermanentBracket {
        ln_lower,
        ln_upper: ln_bregman_upper(inst),
    })
}

/// `e³·(5.3√n)^{n/(n−√((n−2)/20))}/√(2πn)`: a bound on the expected number of
/// attempts of the exact sampler on very dense `n × n` instances. Returns 1 for
/// `n = 1`.
pub fn ratio_bound(n: usize) -> f64 {
    if n < 2 {
        return 1.0;
    }
    let nf = n as f64;
    let expo = nf / density_threshold(n);
    (3.0 + expo * (5.3 * nf.sqrt()).ln() - 0.5 * (2.0 * PI * nf).ln()).exp()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * b.abs().max(1.0)
    }

    #[test]
    fn f_frozen_values() {
        assert_eq!(f_bound(0), 0.0);
        assert_eq!(f_bound(1), E);
        assert!(close(f_bound(2), 3.9428221340157497, 1e-14));
        assert!(close(f_bound(3), 5.088932613394942, 1e-14));
    }

    #[test]
    fn f_beyond_cache_continues_recursion() {
        let a = F_CACHE_LEN + 5;
        let mut x = f_bound(F_CACHE_LEN - 1);
        for _ in 0..6 {
            x = f_step(x);
        }
        assert_eq!(f_bound(a), x);
    }

    #[test]
    fn f_growth_bound_and_monotone() {
        for a in 2..=10_000usize {
            let fa = f_bound(a);
            assert!(fa <= a as f64 + 0.5 * (a as f64).ln() + 1.65, "a={a}");
            assert!(fa > f_bound(a - 1));
        }
    }

    #[test]
    fn g_frozen_values() {
        // direct (non-log) evaluation as the second route
        let direct = |x: f64, y: f64| {
            2.0 * PI * y * (1.0 / (3.0 * y)).exp() * (y / E).powf(y) * (1.0 - x / (y * y)).powf(y)
        };
        assert!(close(g_estimate(0.0, 3.0).unwrap(), 28.317, 1e-4));
        assert!(close(g_estimate(1.0, 4.0).unwrap(), 98.94, 1e-4));
        for &(x, y) in &[(0.0, 3.0), (1.0, 4.0), (2.5, 7.0), (0.0, 1.0)] {
            assert!(close(g_estimate(x, y).unwrap(), direct(x, y), 1e-12));
        }
        assert!(g_estimate(16.0, 4.0).is_err());
        assert!(g_estimate(17.0, 4.0).is_err());
    }

    #[test]
    fn density_examples() {
        let r = density_report(&PrpInstance::full(2));
        assert_eq!(r.rho, 0);
        assert!(r.very_dense);

        let z21: Vec<_> = vec![(0, 0)];
        let r = density_report(&PrpInstance::from_zeros(21, &z21).unwrap());
        assert!(!r.very_dense);

        let z22: Vec<_> = (0..22).map(|i| (i, i)).collect();
        let r = density_report(&PrpInstance::from_zeros(22, &z22).unwrap());
        assert_eq!(r.threshold, 21.0);
        assert!(r.very_dense);
        assert_eq!(r.rho, 22);
    }

    #[test]
    fn zero_caps() {
        assert_eq!(max_zeros_per_line(1), 0);
        assert_eq!(max_zeros_per_line(21), 0);
        assert_eq!(max_zeros_per_line(22), 1);
        assert_eq!(max_zeros_per_line(100), 2);
        assert_eq!(max_zeros_per_line(1600), 8);
    }

    #[test]
    fn bregman_examples() {
        let u3 = bregman_upper(&PrpInstance::full(3));
        assert!(close(u3, 6.5614, 1e-4));
        assert!(u3 >= 6.0);
        assert!(close(bregman_upper(&PrpInstance::full(1)), 1.0, 1e-15));
        assert!(bregman_upper(&PrpInstance::full(4)) >= 24.0);
        // classical bound is tight on J_n rows: (n!)^{n/n} = n!
        assert!(close(bregman_classical(&PrpInstance::full(4)), 24.0, 1e-12));
    }

    #[test]
    fn bracket_small_full() {
        let b = permanent_bracket(&PrpInstance::full(3)).unwrap();
        assert!(close(b.lower(), 0.8827, 1e-3));
        assert!(close(b.upper(), 6.5614, 1e-4));
        assert!(b.contains(6.0));
        assert!(permanent_bracket(&PrpInstance::full(2))
            .unwrap()
            .contains(2.0));
        let sparse = PrpInstance::from_zeros(3, &[(0, 0)]).unwrap();
        assert!(matches!(
            permanent_bracket(&sparse),
            Err(PrpError::DensityViolation { .. })
        ));
    }

    #[test]
    fn ratio_bound_values() {
        assert!(
            (ratio_bound(100) - 46.5).abs() < 0.5,
            "{}",
            ratio_bound(100)
        );
        assert_eq!(ratio_bound(1), 1.0);
    }

    #[test]
    fn rejects_malformed() {
        assert_eq!(PrpInstance::new(0, vec![]), Err(PrpError::Empty));
        assert!(matches!(
            PrpInstance::new(2, vec![vec![0]]),
            Err(PrpError::RowCount { .. })
        ));
        assert!(matches!(
            PrpInstance::new(2, vec![vec![0], vec![]]),
            Err(PrpError::EmptyRow { row: 1 })
        ));
        assert!(matches!(
            PrpInstance::new(2, vec![vec![2], vec![0]]),
            Err(PrpError::OutOfRange { .. })
        ));
        assert!(matches!(
            PrpInstance::new(2, vec![vec![0, 0], vec![0]]),
            Err(PrpError::Duplicate { .. })
        ));
    }

    fn arb_instance() -> impl Strategy<Value = PrpInstance> {
        (1usize..9).prop_flat_map(|n| {
            proptest::collection::vec(proptest::collection::vec(any::<bool>(), n), n)
                .prop_filter_map("every row needs a one", |mut m| {
                    for (i, r) in m.iter_mut().enumerate() {
                        r[i] = true;
                    }
                    PrpInstance::from_matrix(&m).ok()
                })
        })
    }

    proptest! {
        #[test]
        fn g_decreasing_in_x(y in 1.0f64..50.0, a in 0.0f64..1.0, b in 0.0f64..1.0) {
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            prop_assume!(hi - lo > 1e-6);
            let y2 = y * y * 0.999;
            prop_assert!(ln_g_estimate(lo * y2, y).unwrap() > ln_g_estimate(hi * y2, y).unwrap());
        }

        #[test]
        fn density_order_invariant(inst in arb_instance(), seed in any::<u64>()) {
            use rand::seq::SliceRandom;
            let n = inst.n();
            let mut rng = crate::rng::stream(seed);
            let mut rp: Vec<usize> = (0..n).collect();
            let mut cp: Vec<usize> = (0..n).collect();
            rp.shuffle(&mut rng);
            cp.shuffle(&mut rng);
            prop_assert_eq!(density_report(&inst), density_report(&inst.permuted(&rp, &cp)));
        }

    }
}
