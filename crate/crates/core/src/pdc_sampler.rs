//! Markov chain sampler for PDC formulas: permutation-wise Glauber dynamics
//! on compressed states, the marginal `Sample` subroutine with its rejection
//! and correlated-factorization branches, and the regime validators.
//!
//! Budgets and loop counts use base-2 logarithms throughout.

use std::collections::{HashMap, HashSet};
use std::f64::consts::{E, LN_2, PI};

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{ToPrimitive, Zero};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::compression::{
    self, build_decomposition, CompressedState, CompressionError, Decomposition,
};
use crate::oracle::{self, OracleError};
use crate::par::{self, Execution};
use crate::pdc::{
    is_permutation_of, Assignment, Constraint, Literal, PdcError, PdcFormula, PermSet, Value, Var,
};
use crate::prp::{self, PrpError, PrpInstance};
use crate::prp_sampler::{self, ColumnOrder, ExactSampler};
use crate::rng::{stream, substream, RngStream};

#[derive(Debug, Error)]
pub enum SamplerError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("regime violation: {0}")]
    Regime(String),
    #[error("fixed sets do not satisfy their constraints")]
    UnsatisfiedSigmas,
    #[error(transparent)]
    Compression(#[from] CompressionError),
    #[error(transparent)]
    Pdc(#[from] PdcError),
    #[error(transparent)]
    Prp(#[from] PrpError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
}

/// The unspecified constants of the regime theorems.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegimeConstants {
    pub c: f64,
    pub zeta: f64,
    pub q_min: usize,
}

impl Default for RegimeConstants {
    fn default() -> Self {
        RegimeConstants {
            c: 1.0,
            zeta: 1.0,
            q_min: 2,
        }
    }
}

/// Which branch of `Sample` to run. `Auto` follows the guard.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum BranchPolicy {
    #[default]
    Auto,
    ForceRejection,
    ForceCorrelated,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub eps: f64,
    pub eta: f64,
    pub block_limit: usize,
    pub seed: u64,
    pub force_regime: bool,
    pub constants: RegimeConstants,
    pub branch: BranchPolicy,
    /// Residual instances up to this size are counted exactly.
    pub exact_count_limit: usize,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            eps: 0.05,
            eta: 0.5,
            block_limit: 2,
            seed: 0,
            force_regime: false,
            constants: RegimeConstants::default(),
            branch: BranchPolicy::Auto,
            exact_count_limit: 20,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<(), SamplerError> {
        if !(self.eps > 0.0 && self.eps < 1.0) {
            return Err(SamplerError::Config(format!(
                "eps must lie in (0,1), got {}",
                self.eps
            )));
        }
        if self.block_limit < 2 {
            return Err(SamplerError::Config(format!(
                "block limit must be at least 2, got {}",
                self.block_limit
            )));
        }
        if !(self.eta > 0.0 && self.eta <= 1.0) {
            return Err(SamplerError::Config(format!(
                "eta must lie in (0,1], got {}",
                self.eta
            )));
        }
        if self.exact_count_limit > 30 {
            return Err(SamplerError::Config(
                "exact count limit is at most 30".into(),
            ));
        }
        Ok(())
    }
}

/// Event counters. Every flagged path leaves a trace here.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SamplerTelemetry {
    pub steps: u64,
    pub rejection_calls: u64,
    pub rejection_draws: u64,
    /// Rejection sampling ran out of budget and returned an unchecked draw.
    pub rejection_exhausted: u64,
    pub rejection_branch: u64,
    pub rejection_branch_loops: u64,
    pub correlated_branch: u64,
    pub correlated_loops: u64,
    pub window_hits: u64,
    /// `N̂/N > 1`: the acceptance ratio was clamped.
    pub ratio_overflows: u64,
    /// `g(x, |P|)` was undefined and the branch gave up.
    pub estimator_failures: u64,
    pub prp_fallbacks: u64,
    /// Residual instances that were not very dense.
    pub density_fallbacks: u64,
    /// `Sample` fell through to a uniform valid assignment.
    pub subroutine_fallbacks: u64,
    /// Components above the size limit that were let through.
    pub condition_violations: u64,
}

impl SamplerTelemetry {
    pub fn merge(&mut self, o: &SamplerTelemetry) {
        self.steps += o.steps;
        self.rejection_calls += o.rejection_calls;
        self.rejection_draws += o.rejection_draws;
        self.rejection_exhausted += o.rejection_exhausted;
        self.rejection_branch += o.rejection_branch;
        self.rejection_branch_loops += o.rejection_branch_loops;
        self.correlated_branch += o.correlated_branch;
        self.correlated_loops += o.correlated_loops;
        self.window_hits += o.window_hits;
        self.ratio_overflows += o.ratio_overflows;
        self.estimator_failures += o.estimator_failures;
        self.prp_fallbacks += o.prp_fallbacks;
        self.density_fallbacks += o.density_fallbacks;
        self.subroutine_fallbacks += o.subroutine_fallbacks;
        self.condition_violations += o.condition_violations;
    }

    /// Whether any path without a TV guarantee was taken.
    pub fn flagged(&self) -> bool {
        self.rejection_exhausted
            + self.subroutine_fallbacks
            + self.prp_fallbacks
            + self.condition_violations
            > 0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegimeReport {
    pub uniform_ok: bool,
    pub general_ok: bool,
    pub is_uniform: bool,
    pub k: usize,
    pub q: usize,
    pub delta: usize,
    pub p: f64,
    /// `k ln q` against `ln(cζ k^24 Δ^32)`.
    pub uniform_lhs_ln: f64,
    pub uniform_rhs_ln: f64,
    /// `ln(c p k^518 Δ^786)`, compared with 0.
    pub general_lhs_ln: f64,
    pub constants: RegimeConstants,
}

/// Evaluates both regime inequalities in log space. `Δ = 0` counts as 1;
/// a formula without constraints passes both.
pub fn regime_check(f: &PdcFormula, constants: RegimeConstants) -> RegimeReport {
    let prm = f.params();
    let delta = prm.delta.max(1);
    let widths: HashSet<usize> = f.constraints().iter().map(Constraint::width).collect();
    let sizes: HashSet<usize> = f.sets().iter().map(|s| s.len()).collect();
    let is_uniform = widths.len() <= 1 && sizes.len() <= 1;
    let (k, q) = (prm.k, prm.q);
    let (c, zeta) = (constants.c, constants.zeta);
    let ln_k = (k.max(1) as f64).ln();
    let ln_d = (delta as f64).ln();
    let uniform_lhs_ln = k as f64 * (q.max(1) as f64).ln();
    let uniform_rhs_ln = c.ln() + zeta.ln() + 24.0 * ln_k + 32.0 * ln_d;
    let general_lhs_ln = c.ln() + prm.p.ln() + 518.0 * ln_k + 786.0 * ln_d;
    let empty = f.constraints().is_empty();
    let q_ok = q >= constants.q_min;
    RegimeReport {
        uniform_ok: empty || (is_uniform && k >= 24 && q_ok && uniform_lhs_ln >= uniform_rhs_ln),
        general_ok: empty || (q_ok && general_lhs_ln <= 0.0),
        is_uniform,
        k,
        q,
        delta: prm.delta,
        p: prm.p,
        uniform_lhs_ln,
        uniform_rhs_ln,
        general_lhs_ln,
        constants,
    }
}

fn ceil_count(x: f64) -> u64 {
    if x.is_finite() {
        x.ceil().max(0.0) as u64
    } else {
        u64::MAX
    }
}

/// Writes an independent uniform permutation of each set's domain into `a`.
fn fill_uniform(f: &PdcFormula, a: &mut Assignment, rng: &mut RngStream, buf: &mut Vec<Value>) {
    for s in f.sets() {
        buf.clear();
        buf.extend_from_slice(&s.domain);
        buf.shuffle(rng);
        for (&v, &c) in s.vars.iter().zip(buf.iter()) {
            a.set(v, c);
        }
    }
}

fn satisfied(f: &PdcFormula, a: &Assignment) -> bool {
    f.constraints().iter().all(|c| !c.violated_by(a))
}

/// A uniformly random valid assignment.
pub fn uniform_valid(f: &PdcFormula, rng: &mut RngStream) -> Assignment {
    let mut a = f.empty_assignment();
    fill_uniform(f, &mut a, rng, &mut Vec::new());
    a
}

fn rejection_into(
    f: &PdcFormula,
    budget: u64,
    a: &mut Assignment,
    rng: &mut RngStream,
    buf: &mut Vec<Value>,
    tele: &mut SamplerTelemetry,
) -> bool {
    tele.rejection_calls += 1;
    for _ in 0..budget {
        tele.rejection_draws += 1;
        fill_uniform(f, a, rng, buf);
        if satisfied(f, a) {
            return true;
        }
    }
    fill_uniform(f, a, rng, buf);
    tele.rejection_exhausted += 1;
    false
}

/// Up to `budget` uniform valid draws; the first satisfying one is returned
/// with `true`. Otherwise a fresh uniform valid assignment with `false`.
pub fn rejection_sampling(f: &PdcFormula, budget: u64, rng: &mut RngStream) -> (Assignment, bool) {
    let mut a = f.empty_assignment();
    let ok = rejection_into(
        f,
        budget,
        &mut a,
        rng,
        &mut Vec::new(),
        &mut SamplerTelemetry::default(),
    );
    (a, ok)
}

/// The width-1 part of the simplified constraints on one set, as a
/// restricted-position instance: row `i` is `vars[i]`, column `j` is
/// `values[j]`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResidualPrp {
    pub vars: Vec<Var>,
    pub values: Vec<Value>,
    pub allowed: Vec<Vec<usize>>,
    /// Distinct forbidden `(variable, value)` pairs.
    pub forbidden: Vec<(Var, Value)>,
    pub rho: usize,
}

impl ResidualPrp {
    /// Fails when some row has no allowed value, in which case the residual
    /// has no solutions.
    pub fn instance(&self) -> Result<PrpInstance, PrpError> {
        PrpInstance::new(self.vars.len(), self.allowed.clone())
    }

    /// Writes permutation `image` (row → column) into `a`.
    pub fn apply(&self, image: &[usize], a: &mut Assignment) {
        for (&v, &j) in self.vars.iter().zip(image) {
            a.set(v, self.values[j]);
        }
    }
}

/// Literals of a simplified constraint that can still be violated, or `None`
/// if it is satisfied or can never be violated.
fn simplified(c: &Constraint, a: &Assignment, on_p: &HashMap<Var, usize>) -> Option<Vec<Literal>> {
    let mut lits = Vec::with_capacity(c.width());
    for l in c.literals() {
        if on_p.contains_key(&l.var) {
            lits.push(*l);
        } else {
            match a.get(l.var) {
                Some(x) if x == l.value => {}
                _ => return None,
            }
        }
    }
    for (i, x) in lits.iter().enumerate() {
        for y in &lits[i + 1..] {
            if (x.var == y.var) != (x.value == y.value) {
                return None;
            }
        }
    }
    Some(lits)
}

fn residual_unchecked(
    f: &PdcFormula,
    p: usize,
    a: &Assignment,
    touching: &[usize],
) -> (ResidualPrp, Vec<Constraint>) {
    let set = f.set(p);
    let on_p: HashMap<Var, usize> = set.vars.iter().enumerate().map(|(i, &v)| (v, i)).collect();
    let mut forbidden: HashSet<(Var, Value)> = HashSet::new();
    let mut wide = Vec::new();
    for &ci in touching {
        let c = &f.constraints()[ci];
        if let Some(lits) = simplified(c, a, &on_p) {
            if lits.len() == 1 {
                forbidden.insert((lits[0].var, lits[0].value));
            } else {
                wide.push(Constraint::new(lits));
            }
        }
    }
    let col: HashMap<Value, usize> = set
        .domain
        .iter()
        .enumerate()
        .map(|(j, &c)| (c, j))
        .collect();
    let mut allowed: Vec<Vec<bool>> = vec![vec![true; set.len()]; set.len()];
    for &(v, c) in &forbidden {
        allowed[on_p[&v]][col[&c]] = false;
    }
    let mut forbidden: Vec<(Var, Value)> = forbidden.into_iter().collect();
    forbidden.sort_unstable();
    let rho = forbidden.len();
    let allowed = allowed
        .into_iter()
        .map(|row| (0..row.len()).filter(|&j| row[j]).collect())
        .collect();
    (
        ResidualPrp {
            vars: set.vars.clone(),
            values: set.domain.clone(),
            allowed,
            forbidden,
            rho,
        },
        wide,
    )
}

fn fixed_ok(f: &PdcFormula, p: usize, sigmas: &Assignment) -> bool {
    let sets_ok = f
        .sets()
        .iter()
        .enumerate()
        .all(|(i, s)| i == p || is_permutation_of(s, sigmas));
    let pv: HashSet<Var> = f.set(p).vars.iter().copied().collect();
    sets_ok
        && f.constraints()
            .iter()
            .filter(|c| !c.vars().any(|v| pv.contains(&v)))
            .all(|c| !c.violated_by(sigmas))
}

/// Simplifies the constraints touching set `p` under `sigmas`, which fixes
/// every other set. Width-1 residuals become forbidden positions; wider ones
/// are returned separately.
pub fn residual_prp(
    f: &PdcFormula,
    p: usize,
    sigmas: &Assignment,
) -> Result<(ResidualPrp, Vec<Constraint>), SamplerError> {
    if !fixed_ok(f, p, sigmas) {
        return Err(SamplerError::UnsatisfiedSigmas);
    }
    Ok(residual_unchecked(f, p, sigmas, &f.touching(p)))
}

/// Run-wide quantities the subroutine needs besides its component.
#[derive(Clone, Copy, Debug)]
struct Context {
    n: usize,
    delta: usize,
    branch: BranchPolicy,
    force_regime: bool,
    exact_count_limit: usize,
    /// Largest allowed constraint count of a neighbouring component.
    component_limit: Option<f64>,
}

/// One draw from (approximately) the uniform distribution on the solutions
/// of a connected formula `f` whose large set is `p`.
pub fn sample_subroutine(
    f: &PdcFormula,
    p: usize,
    eps: f64,
    cfg: &SamplerConfig,
    rng: &mut RngStream,
    tele: &mut SamplerTelemetry,
) -> Result<Assignment, SamplerError> {
    if !(eps > 0.0 && eps < 1.0) {
        return Err(SamplerError::Config(format!(
            "eps must lie in (0,1), got {eps}"
        )));
    }
    let ctx = Context {
        n: f.num_vars().max(1),
        delta: f.params().delta.max(1),
        branch: cfg.branch,
        force_regime: cfg.force_regime,
        exact_count_limit: cfg.exact_count_limit,
        component_limit: None,
    };
    subroutine(&ctx, f, p, eps, rng, tele)
}

/// Branch A loop count and per-component budget.
pub fn rejection_branch_plan(n: usize, eps: f64) -> (u64, u64) {
    let n = n as f64;
    let t = ceil_count(E.powi(4) * n / eps * (2.0 / eps).log2());
    let budget = ceil_count(n / eps * (2.0 * n * t as f64 / eps).log2());
    (t, budget)
}

/// Branch B initial budget, loop count and per-loop budget.
pub fn correlated_branch_plan(n: usize, size: usize, delta: usize, eps: f64) -> (u64, u64, u64) {
    let nf = n as f64;
    let init = ceil_count(nf / eps * (12.0 * nf / eps).log2());
    let denom = 1.0 - (-6.0 * E * LN_2 * delta as f64).exp();
    let t =
        ceil_count(2.0 * (2.0 * PI * size as f64).sqrt() * E.powi(3) / denom * (6.0 / eps).log2());
    let per = ceil_count(nf / eps * (6.0 * nf * t as f64 / eps).log2());
    (init, t, per)
}

/// `2eΔ ≤ log₂(e⁴n/ε)` or `p_max·|P|·Δ ≤ 1/4`.
pub fn rejection_guard(n: usize, delta: usize, p_max: f64, size: usize, eps: f64) -> bool {
    2.0 * E * delta as f64 <= (E.powi(4) * n as f64 / eps).log2()
        || p_max * size as f64 * delta as f64 <= 0.25
}

fn subroutine(
    ctx: &Context,
    f: &PdcFormula,
    p: usize,
    eps: f64,
    rng: &mut RngStream,
    tele: &mut SamplerTelemetry,
) -> Result<Assignment, SamplerError> {
    let touching = f.touching(p);
    let pvar0 = f.set(p).vars.first().copied();
    let mut others: Vec<PdcFormula> = f.without_touching(p).factorize();
    others.retain(|g| pvar0.map_or(true, |v0| g.set_of(v0).is_none()));
    if let Some(limit) = ctx.component_limit {
        if others.iter().any(|g| g.constraints().len() as f64 > limit) {
            if !ctx.force_regime {
                return Err(SamplerError::Regime(format!(
                    "a neighbouring component exceeds {limit:.1} constraints"
                )));
            }
            tele.condition_violations += 1;
        }
    }
    let size = f.set(p).len();
    let p_max = touching
        .iter()
        .map(|&ci| f.violation_prob(&f.constraints()[ci]))
        .fold(0.0, f64::max);
    let easy = match ctx.branch {
        BranchPolicy::Auto => rejection_guard(ctx.n, ctx.delta, p_max, size, eps),
        BranchPolicy::ForceRejection => true,
        BranchPolicy::ForceCorrelated => false,
    };
    let mut a = f.empty_assignment();
    let mut buf = Vec::new();
    let pset = std::slice::from_ref(f.set(p));
    if easy {
        tele.rejection_branch += 1;
        let (t, budget) = rejection_branch_plan(ctx.n, eps);
        for _ in 0..t {
            tele.rejection_branch_loops += 1;
            for g in &others {
                rejection_into(g, budget, &mut a, rng, &mut buf, tele);
            }
            fill_uniform_sets(pset, &mut a, rng, &mut buf);
            if satisfied(f, &a) {
                return Ok(checked(f, a));
            }
        }
    } else if let Some(a) = correlated(ctx, f, p, &touching, &others, eps, rng, tele)? {
        return Ok(checked(f, a));
    }
    tele.subroutine_fallbacks += 1;
    fill_uniform(f, &mut a, rng, &mut buf);
    Ok(checked(f, a))
}

fn fill_uniform_sets(
    sets: &[PermSet],
    a: &mut Assignment,
    rng: &mut RngStream,
    buf: &mut Vec<Value>,
) {
    for s in sets {
        buf.clear();
        buf.extend_from_slice(&s.domain);
        buf.shuffle(rng);
        for (&v, &c) in s.vars.iter().zip(buf.iter()) {
            a.set(v, c);
        }
    }
}

fn checked(f: &PdcFormula, a: Assignment) -> Assignment {
    assert!(f.is_valid(&a), "sampler produced an invalid assignment");
    a
}

/// The correlated-factorization branch. `None` means every loop failed.
#[allow(clippy::too_many_arguments)]
fn correlated(
    ctx: &Context,
    f: &PdcFormula,
    p: usize,
    touching: &[usize],
    others: &[PdcFormula],
    eps: f64,
    rng: &mut RngStream,
    tele: &mut SamplerTelemetry,
) -> Result<Option<Assignment>, SamplerError> {
    tele.correlated_branch += 1;
    let size = f.set(p).len();
    let sz = size as f64;
    let (init, t, per) = correlated_branch_plan(ctx.n, size, ctx.delta, eps);
    let mut a = f.empty_assignment();
    let mut buf = Vec::new();
    for g in others {
        rejection_into(g, init, &mut a, rng, &mut buf, tele);
    }
    let rho0 = residual_unchecked(f, p, &a, touching).0.rho as f64;
    let x = (rho0 - sz / 6.0).max(0.0);
    let ln_n = match prp::ln_g_estimate(x, sz) {
        Ok(v) => v,
        Err(_) => {
            tele.estimator_failures += 1;
            return Ok(None);
        }
    };
    let tf = t as f64;
    for _ in 0..t {
        tele.correlated_loops += 1;
        let mut all_ok = true;
        for g in others {
            all_ok &= rejection_into(g, per, &mut a, rng, &mut buf, tele);
        }
        if !all_ok {
            continue;
        }
        let (res, wide) = residual_unchecked(f, p, &a, touching);
        assert!(
            res.rho <= size * ctx.delta,
            "rho {} exceeds |P|Δ = {}",
            res.rho,
            size * ctx.delta
        );
        let rho = res.rho as f64;
        if !(x <= rho && rho <= x + sz / 2.0) {
            continue;
        }
        tele.window_hits += 1;
        let inst = match res.instance() {
            Ok(i) if i.empty_column().is_none() => i,
            _ => continue,
        };
        let Some((image, ln_count)) =
            draw_residual(ctx, &inst, eps / (6.0 * tf), eps / (12.0 * tf), rng, tele)?
        else {
            continue;
        };
        res.apply(&image, &mut a);
        if wide.iter().any(|c| c.violated_by(&a)) {
            continue;
        }
        let r: f64 = rng.gen();
        let ratio = (ln_count - ln_n).exp();
        if ratio > 1.0 {
            tele.ratio_overflows += 1;
        }
        if r <= ratio {
            debug_assert!(satisfied(f, &a));
            return Ok(Some(a));
        }
    }
    Ok(None)
}

/// A near-uniform solution of the residual instance and `ln` of an estimate
/// of its solution count, or `None` if none was produced.
fn draw_residual(
    ctx: &Context,
    inst: &PrpInstance,
    tv: f64,
    rel: f64,
    rng: &mut RngStream,
    tele: &mut SamplerTelemetry,
) -> Result<Option<(Vec<usize>, f64)>, SamplerError> {
    let n = inst.n();
    let exact = n <= ctx.exact_count_limit;
    let ln_exact = || -> Result<Option<f64>, SamplerError> {
        let c = oracle::exact_permanent(inst)?;
        Ok(if c.is_zero() { None } else { Some(ln_big(&c)) })
    };
    if prp::density_report(inst).very_dense {
        let s = prp_sampler::sample_approx(inst, tv, rng)?;
        if s.fallback {
            tele.prp_fallbacks += 1;
        }
        let ln_count = if exact {
            match ln_exact()? {
                Some(v) => v,
                None => return Ok(None),
            }
        } else {
            prp_sampler::count_approx(inst, rel, tv, rng)?.ln_value
        };
        return Ok(Some((s.perm.image, ln_count)));
    }
    tele.density_fallbacks += 1;
    if !exact {
        return Err(PrpError::DensityViolation {
            min_row: prp::density_report(inst).min_row_size,
            min_col: prp::density_report(inst).min_col_size,
            threshold: prp::density_threshold(n),
        }
        .into());
    }
    let Some(ln_count) = ln_exact()? else {
        return Ok(None);
    };
    let mut s = ExactSampler::new(inst, ColumnOrder::Input);
    let budget = ceil_count((s.ln_root_bound() - ln_count).exp() * (1.0 / tv).ln()).max(1);
    match s.sample(rng, Some(budget)).0 {
        Some(perm) => Ok(Some((perm.image, ln_count))),
        None => {
            tele.prp_fallbacks += 1;
            Ok(None)
        }
    }
}

fn ln_big(x: &num_bigint::BigUint) -> f64 {
    match x.to_f64() {
        Some(v) if v.is_finite() => v.ln(),
        _ => {
            let bits = x.bits();
            let shift = bits.saturating_sub(60);
            (x >> shift).to_f64().unwrap().ln() + shift as f64 * LN_2
        }
    }
}

/// `⌈2n·log₂(3n/ε)⌉`.
pub fn mcmc_steps(n: usize, eps: f64) -> u64 {
    let n = n as f64;
    ceil_count(2.0 * n * (3.0 * n / eps).log2())
}

/// Budget of the final rejection stage, `⌈(n/ε)·log₂(3n(T+1)/ε)⌉`.
pub fn final_budget(n: usize, eps: f64, steps: u64) -> u64 {
    let n = n as f64;
    ceil_count(n / eps * (3.0 * n * (steps as f64 + 1.0) / eps).log2())
}

/// The Glauber chain for one formula and configuration, with everything that
/// does not depend on the random stream computed up front.
pub struct McmcSampler<'a> {
    f: &'a PdcFormula,
    cfg: SamplerConfig,
    decomposition: Decomposition,
    regime: RegimeReport,
    n: usize,
    delta: usize,
    steps: u64,
}

impl<'a> McmcSampler<'a> {
    /// Fails on a bad configuration, or outside the regime unless forced.
    pub fn new(f: &'a PdcFormula, cfg: &SamplerConfig) -> Result<Self, SamplerError> {
        cfg.validate()?;
        let decomposition = build_decomposition(f, cfg.eta, cfg.block_limit)?;
        let regime = regime_check(f, cfg.constants);
        if !(regime.uniform_ok || regime.general_ok) {
            if !cfg.force_regime {
                return Err(SamplerError::Regime(format!(
                    "neither regime inequality holds (k={}, q={}, Δ={}, p={:e})",
                    regime.k, regime.q, regime.delta, regime.p
                )));
            }
            log::warn!("formula is outside the proven regime; running anyway");
        }
        let n = f.num_vars();
        Ok(McmcSampler {
            f,
            cfg: cfg.clone(),
            decomposition,
            regime,
            n,
            delta: f.params().delta.max(1),
            steps: mcmc_steps(n.max(1), cfg.eps),
        })
    }

    pub fn regime(&self) -> &RegimeReport {
        &self.regime
    }

    pub fn decomposition(&self) -> &Decomposition {
        &self.decomposition
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    fn context(&self) -> Context {
        let n = self.n.max(1);
        Context {
            n,
            delta: self.delta,
            branch: self.cfg.branch,
            force_regime: self.cfg.force_regime,
            exact_count_limit: self.cfg.exact_count_limit,
            component_limit: Some(self.delta as f64 * (n as f64 / self.cfg.eps).log2()),
        }
    }

    /// One Glauber update of set `i`, driven by the approximate subroutine.
    pub fn step(
        &self,
        state: &mut CompressedState,
        i: usize,
        rng: &mut RngStream,
        tele: &mut SamplerTelemetry,
    ) -> Result<(), SamplerError> {
        let f = self.f;
        let d = &self.decomposition;
        tele.steps += 1;
        let Some(&v0) = f.set(i).vars.first() else {
            return Ok(());
        };
        let eps_step = self.cfg.eps / (3.0 * (self.steps as f64 + 1.0));
        let composed = compression::compose_unchecked(f, d, state, Some(i));
        let comp = composed
            .factorize()
            .into_iter()
            .find(|g| g.set_of(v0).is_some())
            .expect("every set lies in a component");
        let p = comp.set_of(v0).expect("component holds the chosen set");
        let sigma = subroutine(&self.context(), &comp, p, eps_step, rng, tele)?;
        for (j, b) in d.blocks(i).iter().enumerate() {
            let dom = &mut state.domains[i][j];
            dom.clear();
            dom.extend(
                b.iter()
                    .map(|&v| sigma.get(v).expect("component assigns the chosen set")),
            );
            dom.sort_unstable();
        }
        Ok(())
    }

    /// A full run: random start, `T` Glauber steps, then rejection sampling
    /// of each component of the induced formula.
    pub fn run(
        &self,
        rng: &mut RngStream,
        tele: &mut SamplerTelemetry,
    ) -> Result<Assignment, SamplerError> {
        let f = self.f;
        let m = f.sets().len();
        if m == 0 {
            return Ok(f.empty_assignment());
        }
        let start = uniform_valid(f, rng);
        let mut state = compression::project_unchecked(&self.decomposition, &start);
        for _ in 0..self.steps {
            let i = rng.gen_range(0..m);
            self.step(&mut state, i, rng, tele)?;
        }
        self.finish(&state, rng, tele)
    }

    /// Final stage from a given compressed state.
    pub fn finish(
        &self,
        state: &CompressedState,
        rng: &mut RngStream,
        tele: &mut SamplerTelemetry,
    ) -> Result<Assignment, SamplerError> {
        let f = self.f;
        let induced = compression::compose_unchecked(f, &self.decomposition, state, None);
        let budget = final_budget(self.n.max(1), self.cfg.eps, self.steps);
        let mut a = f.empty_assignment();
        let mut buf = Vec::new();
        for g in induced.factorize() {
            rejection_into(&g, budget, &mut a, rng, &mut buf, tele);
        }
        assert!(f.is_valid(&a), "sampler produced an invalid assignment");
        Ok(a)
    }
}

/// One run of the chain seeded from `cfg.seed`.
pub fn mcmc_sample(
    f: &PdcFormula,
    cfg: &SamplerConfig,
) -> Result<(Assignment, SamplerTelemetry), SamplerError> {
    let s = McmcSampler::new(f, cfg)?;
    let mut tele = SamplerTelemetry::default();
    let a = s.run(&mut stream(cfg.seed), &mut tele)?;
    Ok((a, tele))
}

/// `count` independent runs; run `i` uses substream `i` of `cfg.seed`.
pub fn mcmc_batch(
    f: &PdcFormula,
    cfg: &SamplerConfig,
    count: usize,
    exec: Execution,
) -> Result<(Vec<Assignment>, SamplerTelemetry), SamplerError> {
    let s = McmcSampler::new(f, cfg)?;
    let runs = par::map_indexed(count, exec, |i| {
        let mut tele = SamplerTelemetry::default();
        s.run(&mut substream(cfg.seed, i as u64), &mut tele)
            .map(|a| (a, tele))
    });
    let mut out = Vec::with_capacity(count);
    let mut tele = SamplerTelemetry::default();
    for r in runs {
        let (a, t) = r?;
        tele.merge(&t);
        out.push(a);
    }
    Ok((out, tele))
}

/// Conditional law of the block domains of set `i` given the rest of
/// `state`, by enumeration: `Pr[σ(P') = Q*]` for `σ` uniform on the solutions
/// of the component of `P` in the formula with `P` kept whole.
pub fn ideal_conditional(
    f: &PdcFormula,
    d: &Decomposition,
    state: &CompressedState,
    i: usize,
    cap: f64,
) -> Result<HashMap<Vec<Vec<Value>>, BigRational>, SamplerError> {
    let composed = compression::compose(f, d, state, Some(i))?;
    let Some(&v0) = f.set(i).vars.first() else {
        return Ok(HashMap::from([(
            Vec::new(),
            BigRational::from_integer(1.into()),
        )]));
    };
    let comp = composed
        .factorize()
        .into_iter()
        .find(|g| g.set_of(v0).is_some())
        .expect("component of set");
    let sols = oracle::enumerate_solutions(&comp, cap)?;
    if sols.count() == 0 {
        return Err(OracleError::Unsatisfiable.into());
    }
    let pos: HashMap<Var, usize> = sols.vars.iter().enumerate().map(|(k, &v)| (v, k)).collect();
    let mut counts: HashMap<Vec<Vec<Value>>, usize> = HashMap::new();
    for s in &sols.solutions {
        let doms = d
            .blocks(i)
            .iter()
            .map(|b| {
                let mut q: Vec<Value> = b.iter().map(|v| s[pos[v]]).collect();
                q.sort_unstable();
                q
            })
            .collect();
        *counts.entry(doms).or_default() += 1;
    }
    let total = BigInt::from(sols.count());
    Ok(counts
        .into_iter()
        .map(|(k, c)| (k, BigRational::new(BigInt::from(c), total.clone())))
        .collect())
}

/// One step of the idealized dynamics on set `i`, sampled exactly.
pub fn glauber_step_ideal(
    f: &PdcFormula,
    d: &Decomposition,
    state: &CompressedState,
    i: usize,
    rng: &mut RngStream,
    cap: f64,
) -> Result<CompressedState, SamplerError> {
    let law = ideal_conditional(f, d, state, i, cap)?;
    let mut items: Vec<(Vec<Vec<Value>>, f64)> = law
        .into_iter()
        .map(|(k, p)| (k, p.to_f64().unwrap()))
        .collect();
    items.sort_by(|a, b| a.0.cmp(&b.0));
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    let mut pick = items.len() - 1;
    for (idx, (_, p)) in items.iter().enumerate() {
        acc += p;
        if u < acc {
            pick = idx;
            break;
        }
    }
    let mut next = state.clone();
    next.domains[i] = items.swap_remove(pick).0;
    Ok(next)
}

/// Row `state` of the idealized transition matrix, with the set chosen
/// uniformly.
pub fn ideal_kernel(
    f: &PdcFormula,
    d: &Decomposition,
    state: &CompressedState,
    cap: f64,
) -> Result<HashMap<CompressedState, BigRational>, SamplerError> {
    let m = f.sets().len();
    let mut row: HashMap<CompressedState, BigRational> = HashMap::new();
    let pick = BigRational::new(1.into(), BigInt::from(m));
    for i in 0..m {
        for (doms, pr) in ideal_conditional(f, d, state, i, cap)? {
            let mut next = state.clone();
            next.domains[i] = doms;
            *row.entry(next).or_insert_with(BigRational::zero) += &pr * &pick;
        }
    }
    Ok(row)
}

/// `ν(Q') = Pr_{σ∼μ}[project(σ) = Q']`, by enumeration.
pub fn projected_measure(
    f: &PdcFormula,
    d: &Decomposition,
    cap: f64,
) -> Result<HashMap<CompressedState, BigRational>, SamplerError> {
    let sols = oracle::enumerate_solutions(f, cap)?;
    if sols.count() == 0 {
        return Err(OracleError::Unsatisfiable.into());
    }
    let total = BigInt::from(sols.count());
    let mut counts: HashMap<CompressedState, usize> = HashMap::new();
    for idx in 0..sols.count() {
        let a = sols.assignment(idx, f.universe());
        *counts
            .entry(compression::project_unchecked(d, &a))
            .or_default() += 1;
    }
    Ok(counts
        .into_iter()
        .map(|(k, c)| (k, BigRational::new(BigInt::from(c), total.clone())))
        .collect())
}
