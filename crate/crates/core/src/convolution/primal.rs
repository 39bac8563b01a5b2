//! Direct minimization over allocations.
//!
//! The equality `sum_i mu_i X^i = x` is either kept as LP rows or eliminated
//! by solving for the component with the largest weight. Polyhedral members
//! are written as exact LP epigraphs (expected shortfall in its minimization
//! form `z + E[(-X - z)^+] / alpha`), entropic members are handled by
//! quasi-Newton or by gradient cuts, and anything non-convex falls back to a
//! pattern search.

use rand::Rng;

use super::{Allocation, ConvValue, ConvolutionResult, Method, SolverConfig, Term};
use crate::error::Result;
use crate::lp::{LinearProgram, RowKind};
use crate::measures::{gibbs_weights, RiskMeasureSpec};
use crate::optim::{bfgs, compass_search, BfgsOptions, CompassOptions};
use crate::space::Position;

/// Building blocks of a polyhedral measure: `sum_c w_c piece_c`.
#[derive(Debug, Clone, Copy, PartialEq)]
enum Piece {
    Expectation,
    Worst,
    Shortfall(f64),
}

/// Writes a coherent distortion-type measure as a nonnegative combination
/// of expected loss, maximum loss and expected shortfalls. Shortfall levels
/// at or below the smallest atom mass coincide with the maximum loss.
fn pieces(spec: &RiskMeasureSpec, min_p: f64) -> Option<Vec<(f64, Piece)>> {
    let classify = |alpha: f64| {
        if alpha >= 1.0 {
            Piece::Expectation
        } else if alpha <= min_p {
            Piece::Worst
        } else {
            Piece::Shortfall(alpha)
        }
    };
    match spec.canonical() {
        RiskMeasureSpec::ExpectedLoss => Some(vec![(1.0, Piece::Expectation)]),
        RiskMeasureSpec::MaximumLoss => Some(vec![(1.0, Piece::Worst)]),
        RiskMeasureSpec::ExpectedShortfall { alpha } => Some(vec![(1.0, classify(alpha))]),
        RiskMeasureSpec::SpectralMixture { components } => Some(
            components
                .iter()
                .filter(|c| c.mass > 0.0)
                .map(|c| (c.mass, classify(c.alpha)))
                .collect(),
        ),
        RiskMeasureSpec::Distortion { g } if g.is_concave() => {
            // slope s_j on segment j; weight of ES^{b_j} is (s_j - s_{j+1}) b_j
            let b = g.breakpoints();
            let v = g.values();
            let slopes: Vec<f64> = (1..b.len()).map(|j| (v[j] - v[j - 1]) / (b[j] - b[j - 1])).collect();
            let mut out = Vec::new();
            for j in 0..slopes.len() {
                let next = slopes.get(j + 1).copied().unwrap_or(0.0);
                let w = (slopes[j] - next).max(0.0) * b[j + 1];
                if w > 1e-15 {
                    out.push((w, classify(b[j + 1])));
                }
            }
            Some(out)
        }
        _ => None,
    }
}

enum RosterClass {
    Smooth,
    Polyhedral,
    Mixed,
    NonConvex,
}

fn classify(terms: &[Term<'_>], min_p: f64) -> RosterClass {
    let entropic = |t: &Term<'_>| matches!(t.spec.canonical(), RiskMeasureSpec::Entropic { .. });
    if terms.iter().all(entropic) {
        RosterClass::Smooth
    } else if terms.iter().all(|t| pieces(t.spec, min_p).is_some()) {
        RosterClass::Polyhedral
    } else if terms.iter().all(|t| entropic(t) || pieces(t.spec, min_p).is_some()) {
        RosterClass::Mixed
    } else {
        RosterClass::NonConvex
    }
}

pub(super) fn oracle(cfg: &SolverConfig, terms: &[Term<'_>], x: &Position, n_max: usize) -> Result<ConvolutionResult> {
    let n_top = n_max.min(terms.len());
    let threshold = -(x.sup_norm() + cfg.divergence_threshold);
    let mut trace = Vec::with_capacity(n_top);
    let mut best: Option<(f64, Vec<Position>)> = None;
    let mut notes = Vec::new();
    let mut warm: Option<Vec<Position>> = None;
    let mut diverged = false;
    for n in 1..=n_top {
        let sub = &terms[..n];
        let warm_start = warm.take().map(|mut w: Vec<Position>| {
            w.push(x.scale(0.0));
            w
        });
        let (value, comps, note) = solve_prefix(cfg, sub, x, warm_start, threshold)?;
        if let Some(note) = note {
            notes.push(format!("n = {n}: {note}"));
        }
        trace.push((n, value));
        if best.as_ref().is_none_or(|b| value < b.0) {
            best = Some((value, comps.clone()));
        }
        warm = Some(comps);
        if value < threshold {
            diverged = true;
            break;
        }
    }
    let (value, comps) = best.expect("n_max >= 1");
    let zero = x.scale(0.0);
    let components = terms
        .iter()
        .enumerate()
        .map(|(j, t)| (t.index, comps.get(j).cloned().unwrap_or_else(|| zero.clone())))
        .collect();
    let weights = terms.iter().map(|t| (t.index, t.weight)).collect();
    let allocation = Allocation::from_weights(weights, components)?;
    let value = if diverged {
        notes.push(format!(
            "objective fell below {threshold:.3e}; reported as evidence of an unbounded descent"
        ));
        ConvValue::DivergentEvidence { best_found: value }
    } else {
        ConvValue::Finite(value)
    };
    Ok(ConvolutionResult {
        value,
        method: Method::PrimalOracle,
        allocation: Some(allocation),
        dual_witness: None,
        finite_n_trace: Some(trace),
        notes,
    })
}

type Solved = (f64, Vec<Position>, Option<String>);

fn weighted_risk(terms: &[Term<'_>], comps: &[Position]) -> Result<f64> {
    let mut total = 0.0;
    for (t, c) in terms.iter().zip(comps) {
        total += t.weight * t.spec.evaluate(c)?;
    }
    Ok(total)
}

fn solve_prefix(
    cfg: &SolverConfig,
    terms: &[Term<'_>],
    x: &Position,
    warm: Option<Vec<Position>>,
    threshold: f64,
) -> Result<Solved> {
    let n = terms.len();
    if n == 1 {
        let comp = x.scale(1.0 / terms[0].weight);
        let v = terms[0].weight * terms[0].spec.evaluate(&comp)?;
        return Ok((v, vec![comp], None));
    }
    let min_p = x.probabilities().iter().copied().fold(f64::INFINITY, f64::min);
    match classify(terms, min_p) {
        RosterClass::Polyhedral => polyhedral(cfg, terms, x, min_p),
        RosterClass::Mixed => kelley(cfg, terms, x, min_p),
        RosterClass::Smooth => smooth(cfg, terms, x, warm),
        RosterClass::NonConvex => pattern(cfg, terms, x, warm, threshold),
    }
}

/// Total weight of the prefix; the constraint is `sum mu_i X^i = x` with these weights.
fn total_weight(terms: &[Term<'_>]) -> f64 {
    terms.iter().map(|t| t.weight).sum()
}

fn eliminated(terms: &[Term<'_>]) -> usize {
    let mut e = 0;
    for (j, t) in terms.iter().enumerate() {
        if t.weight > terms[e].weight {
            e = j;
        }
    }
    e
}

/// Full component list from the free components, solving for component `e`.
fn expand(terms: &[Term<'_>], x: &Position, e: usize, free: &[f64]) -> Vec<Vec<f64>> {
    let d = x.len();
    let n = terms.len();
    let mut comps = vec![vec![0.0; d]; n];
    let mut rest = x.values().to_vec();
    let mut slot = 0;
    for (j, comp) in comps.iter_mut().enumerate() {
        if j == e {
            continue;
        }
        comp.copy_from_slice(&free[slot * d..(slot + 1) * d]);
        for k in 0..d {
            rest[k] -= terms[j].weight * comp[k];
        }
        slot += 1;
    }
    comps[e] = rest.iter().map(|v| v / terms[e].weight).collect();
    comps
}

fn flatten_free(comps: &[Position], e: usize) -> Vec<f64> {
    comps
        .iter()
        .enumerate()
        .filter(|(j, _)| *j != e)
        .flat_map(|(_, c)| c.values().iter().copied())
        .collect()
}

fn to_positions(x: &Position, comps: Vec<Vec<f64>>) -> Result<Vec<Position>> {
    comps.into_iter().map(|c| x.with_values(c)).collect()
}

/// Seeds for the eliminated formulations: warm start, equal split, zeros, random.
fn seeds(cfg: &SolverConfig, terms: &[Term<'_>], x: &Position, e: usize, warm: Option<Vec<Position>>) -> Vec<Vec<f64>> {
    let n = terms.len();
    let d = x.len();
    let w = total_weight(terms);
    let mut out = Vec::new();
    if let Some(warm) = warm {
        if warm.len() == n {
            out.push(flatten_free(&warm, e));
        }
    }
    let split: Vec<Position> = (0..n).map(|_| x.scale(1.0 / w)).collect();
    out.push(flatten_free(&split, e));
    out.push(vec![0.0; (n - 1) * d]);
    let mut rng = cfg.rng();
    let scale = x.sup_norm() + 1.0;
    while out.len() < cfg.restarts.max(3) {
        let base = &out[1];
        out.push(base.iter().map(|v| v + scale * (rng.gen::<f64>() - 0.5)).collect());
    }
    out
}

fn smooth(cfg: &SolverConfig, terms: &[Term<'_>], x: &Position, warm: Option<Vec<Position>>) -> Result<Solved> {
    let e = eliminated(terms);
    let d = x.len();
    let gammas: Vec<f64> = terms
        .iter()
        .map(|t| match t.spec.canonical() {
            RiskMeasureSpec::Entropic { gamma } => gamma,
            _ => unreachable!("smooth rosters are entropic"),
        })
        .collect();
    let fg = |free: &[f64], grad: &mut [f64]| -> f64 {
        let comps = expand(terms, x, e, free);
        let mut total = 0.0;
        let mut tilts = Vec::with_capacity(comps.len());
        for (j, c) in comps.iter().enumerate() {
            let pos = x.with_values(c.clone()).expect("same space");
            total += terms[j].weight * RiskMeasureSpec::entropic(gammas[j]).evaluate(&pos).expect("valid");
            tilts.push(gibbs_weights(&pos, gammas[j]));
        }
        let mut slot = 0;
        for j in 0..comps.len() {
            if j == e {
                continue;
            }
            for k in 0..d {
                grad[slot * d + k] = terms[j].weight * (tilts[e][k] - tilts[j][k]);
            }
            slot += 1;
        }
        total
    };
    let opts = BfgsOptions {
        max_iters: 5000,
        grad_tol: 1e-13,
    };
    let mut best: Option<(f64, Vec<f64>)> = None;
    for seed in seeds(cfg, terms, x, e, warm) {
        let (free, _) = bfgs(fg, seed, &opts);
        let comps = to_positions(x, expand(terms, x, e, &free))?;
        let v = weighted_risk(terms, &comps)?;
        if best.as_ref().is_none_or(|b| v < b.0) {
            best = Some((v, free));
        }
    }
    let (v, free) = best.expect("seeds are nonempty");
    Ok((v, to_positions(x, expand(terms, x, e, &free))?, None))
}

/// LP columns for an allocation `X^i_k`, stored row-major by component.
struct AllocationLp {
    lp: LinearProgram,
    n: usize,
    d: usize,
}

impl AllocationLp {
    fn new(terms: &[Term<'_>], x: &Position, extra: usize) -> Self {
        let n = terms.len();
        let d = x.len();
        let mut lp = LinearProgram::new(n * d + extra);
        for j in 0..n * d {
            lp.set_free(j);
        }
        for k in 0..d {
            let row = (0..n).map(|i| (i * d + k, terms[i].weight)).collect();
            lp.add_row(row, RowKind::Eq, x.values()[k]);
        }
        Self { lp, n, d }
    }

    fn col(&self, i: usize, k: usize) -> usize {
        i * self.d + k
    }

    fn components(&self, sol: &[f64]) -> Vec<Vec<f64>> {
        (0..self.n).map(|i| sol[i * self.d..(i + 1) * self.d].to_vec()).collect()
    }
}

/// Number of auxiliary columns used by the epigraph of a polyhedral term.
fn aux_columns(ps: &[(f64, Piece)], d: usize) -> usize {
    ps.iter()
        .map(|(_, p)| match p {
            Piece::Expectation => 0,
            Piece::Worst => 1,
            Piece::Shortfall(_) => 1 + d,
        })
        .sum()
}

/// Adds the epigraph of `weight * sum_c w_c piece_c(X^i)` starting at column `next`.
fn add_epigraph(a: &mut AllocationLp, i: usize, weight: f64, ps: &[(f64, Piece)], p: &[f64], mut next: usize) -> usize {
    let d = a.d;
    for &(w, piece) in ps {
        let c = weight * w;
        match piece {
            Piece::Expectation => {
                for k in 0..d {
                    let col = a.col(i, k);
                    let cur = a.lp.objective_coefficient(col);
                    a.lp.set_objective(col, cur - c * p[k]);
                }
            }
            Piece::Worst => {
                let t = next;
                next += 1;
                a.lp.set_free(t);
                a.lp.set_objective(t, c);
                for k in 0..d {
                    a.lp.add_row(vec![(t, 1.0), (a.col(i, k), 1.0)], RowKind::Ge, 0.0);
                }
            }
            Piece::Shortfall(alpha) => {
                let z = next;
                next += 1;
                a.lp.set_free(z);
                a.lp.set_objective(z, c);
                for k in 0..d {
                    let u = next;
                    next += 1;
                    a.lp.set_objective(u, c * p[k] / alpha);
                    a.lp.add_row(vec![(u, 1.0), (a.col(i, k), 1.0), (z, 1.0)], RowKind::Ge, 0.0);
                }
            }
        }
    }
    next
}

fn polyhedral(cfg: &SolverConfig, terms: &[Term<'_>], x: &Position, min_p: f64) -> Result<Solved> {
    let d = x.len();
    let p = x.probabilities();
    let decomposed: Vec<Vec<(f64, Piece)>> = terms
        .iter()
        .map(|t| pieces(t.spec, min_p).expect("polyhedral roster"))
        .collect();
    let extra: usize = decomposed.iter().map(|ps| aux_columns(ps, d)).sum();
    let mut a = AllocationLp::new(terms, x, extra);
    let mut next = terms.len() * d;
    for (i, ps) in decomposed.iter().enumerate() {
        next = add_epigraph(&mut a, i, terms[i].weight, ps, p, next);
    }
    let sol = a.lp.minimize(&cfg.lp_options())?.into_optimal("primal allocation LP")?;
    let comps = to_positions(x, a.components(&sol.x))?;
    let v = weighted_risk(terms, &comps)?;
    Ok((v, comps, Some(format!("exact LP, objective {:.12e}, residual {:.1e}", sol.objective, sol.residual))))
}

/// Cutting planes for rosters mixing entropic and polyhedral members.
fn kelley(cfg: &SolverConfig, terms: &[Term<'_>], x: &Position, min_p: f64) -> Result<Solved> {
    let d = x.len();
    let n = terms.len();
    let p = x.probabilities();
    let decomposed: Vec<Option<Vec<(f64, Piece)>>> = terms.iter().map(|t| pieces(t.spec, min_p)).collect();
    let ent_gamma: Vec<Option<f64>> = terms
        .iter()
        .map(|t| match t.spec.canonical() {
            RiskMeasureSpec::Entropic { gamma } => Some(gamma),
            _ => None,
        })
        .collect();
    let extra: usize = decomposed
        .iter()
        .map(|ps| ps.as_ref().map_or(1, |ps| aux_columns(ps, d)))
        .sum();
    let mut base = AllocationLp::new(terms, x, extra);
    let mut next = n * d;
    let mut theta = vec![None; n];
    let bound: Vec<f64> = terms.iter().map(|t| 10.0 * (x.sup_norm() + 1.0) / t.weight).collect();
    for i in 0..n {
        for k in 0..d {
            let col = base.col(i, k);
            base.lp.set_bounds(col, -bound[i], bound[i]);
        }
        match &decomposed[i] {
            Some(ps) => next = add_epigraph(&mut base, i, terms[i].weight, ps, p, next),
            None => {
                let t = next;
                next += 1;
                base.lp.set_bounds(t, -bound[i], f64::INFINITY);
                base.lp.set_objective(t, terms[i].weight);
                theta[i] = Some(t);
            }
        }
    }
    let w = total_weight(terms);
    let mut point: Vec<Vec<f64>> = (0..n).map(|_| x.values().iter().map(|v| v / w).collect()).collect();
    let mut best_comps = to_positions(x, point.clone())?;
    let mut upper = weighted_risk(terms, &best_comps)?;
    let mut lower = f64::NEG_INFINITY;
    let tol = (cfg.oracle_tol * 1e-3).max(1e-12);
    let mut iters = 0;
    while upper - lower > tol && iters < 2000 {
        iters += 1;
        for i in 0..n {
            let (Some(t), Some(gamma)) = (theta[i], ent_gamma[i]) else { continue };
            let pos = x.with_values(point[i].clone())?;
            let value = RiskMeasureSpec::entropic(gamma).evaluate(&pos)?;
            let q = gibbs_weights(&pos, gamma);
            // theta >= Ent(Xbar) - q.(X - Xbar)
            let mut row = vec![(t, 1.0)];
            let mut rhs = value;
            for k in 0..d {
                row.push((base.col(i, k), q[k]));
                rhs += q[k] * point[i][k];
            }
            base.lp.add_row(row, RowKind::Ge, rhs);
        }
        let sol = base.lp.minimize(&cfg.lp_options())?.into_optimal("cutting-plane LP")?;
        lower = lower.max(sol.objective);
        point = base.components(&sol.x);
        let comps = to_positions(x, point.clone())?;
        let v = weighted_risk(terms, &comps)?;
        if v < upper {
            upper = v;
            best_comps = comps;
        }
    }
    Ok((
        upper,
        best_comps,
        Some(format!("cutting planes: {iters} rounds, gap {:.1e}", upper - lower)),
    ))
}

fn pattern(
    cfg: &SolverConfig,
    terms: &[Term<'_>],
    x: &Position,
    warm: Option<Vec<Position>>,
    threshold: f64,
) -> Result<Solved> {
    let e = eliminated(terms);
    let f = |free: &[f64]| -> f64 {
        let comps = expand(terms, x, e, free);
        comps
            .into_iter()
            .zip(terms)
            .map(|(c, t)| t.weight * t.spec.evaluate(&x.with_values(c).expect("same space")).expect("valid"))
            .sum()
    };
    let opts = CompassOptions {
        initial_step: x.sup_norm().max(1.0),
        min_step: 1e-9 * x.sup_norm().max(1.0),
        max_evals: 20_000,
        stop_below: threshold,
    };
    let mut best: Option<(f64, Vec<f64>)> = None;
    for seed in seeds(cfg, terms, x, e, warm) {
        let (free, v, reached) = compass_search(f, seed, &opts);
        if best.as_ref().is_none_or(|b| v < b.0) {
            best = Some((v, free));
        }
        if reached {
            break;
        }
    }
    let (v, free) = best.expect("seeds are nonempty");
    let note = (v < threshold).then(|| "pattern search found an unbounded descent".to_string());
    Ok((v, to_positions(x, expand(terms, x, e, &free))?, note))
}
