//! Finite probability spaces, positions and the distributional algebra on them.
//!
//! Every atom carries strictly positive mass, so "almost surely" statements
//! reduce to statements about every atom.

use std::sync::Arc;

use crate::error::{Error, Result};

/// Tolerance on the total probability mass.
pub const PROBABILITY_SUM_TOL: f64 = 1e-12;

/// Input masses further than this from one are rejected instead of normalized.
const NORMALIZATION_LIMIT: f64 = 1e-6;

/// Level tolerance used when comparing accumulated probabilities with a
/// quantile level, so that levels sitting on a breakpoint select the lower value.
const LEVEL_TOL: f64 = 1e-12;

/// A finite set of atoms with strictly positive probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct FiniteProbabilitySpace {
    probabilities: Vec<f64>,
    correction: f64,
}

impl FiniteProbabilitySpace {
    /// Builds a space from atom masses. Masses whose total is within `1e-6`
    /// of one are rescaled to sum to one and the applied correction
    /// (`sum - 1` before rescaling) is recorded.
    pub fn new(probabilities: Vec<f64>) -> Result<Self> {
        if probabilities.is_empty() {
            return Err(Error::Validation("a probability space needs at least one atom".into()));
        }
        if let Some((k, p)) = probabilities
            .iter()
            .enumerate()
            .find(|(_, p)| !(p.is_finite() && **p > 0.0))
        {
            return Err(Error::Validation(format!(
                "atom {k} has probability {p}; all probabilities must be finite and > 0"
            )));
        }
        let total: f64 = probabilities.iter().sum();
        let correction = total - 1.0;
        if correction.abs() > NORMALIZATION_LIMIT {
            return Err(Error::Validation(format!(
                "probabilities sum to {total}, expected 1"
            )));
        }
        let probabilities = if correction.abs() > PROBABILITY_SUM_TOL {
            probabilities.iter().map(|p| p / total).collect()
        } else {
            probabilities
        };
        Ok(Self {
            probabilities,
            correction,
        })
    }

    /// `d` atoms of mass `1/d`.
    pub fn equiprobable(d: usize) -> Result<Self> {
        if d == 0 {
            return Err(Error::Validation("a probability space needs at least one atom".into()));
        }
        Ok(Self {
            probabilities: vec![1.0 / d as f64; d],
            correction: 0.0,
        })
    }

    pub fn atom_count(&self) -> usize {
        self.probabilities.len()
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.probabilities
    }

    pub fn probability(&self, atom: usize) -> f64 {
        self.probabilities[atom]
    }

    /// `sum - 1` of the masses as supplied, before normalization.
    pub fn normalization_correction(&self) -> f64 {
        self.correction
    }

    pub fn is_equiprobable(&self) -> bool {
        let first = self.probabilities[0];
        self.probabilities
            .iter()
            .all(|p| (p - first).abs() <= PROBABILITY_SUM_TOL)
    }

    pub fn into_shared(self) -> Arc<Self> {
        Arc::new(self)
    }
}

/// A payoff with one value per atom. Positive values are gains.
#[derive(Debug, Clone)]
pub struct Position {
    values: Vec<f64>,
    space: Arc<FiniteProbabilitySpace>,
}

impl PartialEq for Position {
    fn eq(&self, other: &Self) -> bool {
        self.values == other.values && same_space(&self.space, &other.space)
    }
}

fn same_space(a: &Arc<FiniteProbabilitySpace>, b: &Arc<FiniteProbabilitySpace>) -> bool {
    Arc::ptr_eq(a, b) || a.probabilities == b.probabilities
}

impl Position {
    pub fn new(space: Arc<FiniteProbabilitySpace>, values: Vec<f64>) -> Result<Self> {
        if values.len() != space.atom_count() {
            return Err(Error::Structural(format!(
                "position has {} values but the space has {} atoms",
                values.len(),
                space.atom_count()
            )));
        }
        if let Some(k) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Domain(format!("position value at atom {k} is not finite")));
        }
        Ok(Self { values, space })
    }

    pub fn constant(space: Arc<FiniteProbabilitySpace>, c: f64) -> Result<Self> {
        let d = space.atom_count();
        Self::new(space, vec![c; d])
    }

    /// `-1_A` style indicator: `value` on the listed atoms, zero elsewhere.
    pub fn indicator(space: Arc<FiniteProbabilitySpace>, atoms: &[usize], value: f64) -> Result<Self> {
        let mut values = vec![0.0; space.atom_count()];
        for &a in atoms {
            if a >= values.len() {
                return Err(Error::Structural(format!("atom {a} out of range")));
            }
            values[a] = value;
        }
        Self::new(space, values)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn space(&self) -> &Arc<FiniteProbabilitySpace> {
        &self.space
    }

    pub fn probabilities(&self) -> &[f64] {
        self.space.probabilities()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn same_space_as(&self, other: &Position) -> bool {
        same_space(&self.space, &other.space)
    }

    pub(crate) fn ensure_same_space(&self, other: &Position) -> Result<()> {
        if self.same_space_as(other) {
            Ok(())
        } else {
            Err(Error::Structural("positions live on different spaces".into()))
        }
    }

    /// Builds a position on the same space from new atom values.
    pub fn with_values(&self, values: Vec<f64>) -> Result<Position> {
        Position::new(self.space.clone(), values)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Position> {
        self.with_values(self.values.iter().map(|&v| f(v)).collect())
    }

    pub fn scale(&self, factor: f64) -> Position {
        Position {
            values: self.values.iter().map(|v| v * factor).collect(),
            space: self.space.clone(),
        }
    }

    pub fn shift(&self, c: f64) -> Position {
        Position {
            values: self.values.iter().map(|v| v + c).collect(),
            space: self.space.clone(),
        }
    }

    pub fn add(&self, other: &Position) -> Result<Position> {
        self.ensure_same_space(other)?;
        Ok(Position {
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| a + b)
                .collect(),
            space: self.space.clone(),
        })
    }

    /// `a * self + b * other`.
    pub fn combine(&self, a: f64, other: &Position, b: f64) -> Result<Position> {
        self.ensure_same_space(other)?;
        Ok(Position {
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(x, y)| a * x + b * y)
                .collect(),
            space: self.space.clone(),
        })
    }

    /// Reorders atom values: entry `k` of the result is `self[perm[k]]`.
    pub fn permute(&self, perm: &[usize]) -> Result<Position> {
        if perm.len() != self.len() {
            return Err(Error::Structural("permutation length mismatch".into()));
        }
        self.with_values(perm.iter().map(|&j| self.values[j]).collect())
    }

    pub fn expectation(&self) -> f64 {
        self.values
            .iter()
            .zip(self.probabilities())
            .map(|(v, p)| v * p)
            .sum()
    }

    /// Expectation under an arbitrary weight vector on the atoms.
    pub fn expectation_under(&self, weights: &[f64]) -> f64 {
        self.values.iter().zip(weights).map(|(v, q)| v * q).sum()
    }

    pub fn ess_inf(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn ess_sup(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Sup-norm distance to another position.
    pub fn distance(&self, other: &Position) -> Result<f64> {
        self.ensure_same_space(other)?;
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs())))
    }

    /// `E[(X - t)^+]`.
    pub fn upper_partial_moment(&self, t: f64) -> f64 {
        self.values
            .iter()
            .zip(self.probabilities())
            .map(|(v, p)| p * (v - t).max(0.0))
            .sum()
    }

    /// Distinct values in increasing order, each with its total mass.
    pub fn distribution(&self) -> Vec<(f64, f64)> {
        let mut pairs: Vec<(f64, f64)> = self
            .values
            .iter()
            .copied()
            .zip(self.probabilities().iter().copied())
            .collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut out: Vec<(f64, f64)> = Vec::with_capacity(pairs.len());
        for (v, p) in pairs {
            match out.last_mut() {
                Some(last) if last.0 == v => last.1 += p,
                _ => out.push((v, p)),
            }
        }
        out
    }

    pub fn quantile_function(&self) -> QuantileFunction {
        QuantileFunction::of(self)
    }
}

/// Left-continuous step representation of `F^{-1}`.
///
/// On `(breakpoints[j-1], breakpoints[j]]` the quantile equals `values[j]`
/// (with `breakpoints[-1] = 0`). The last breakpoint is one.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantileFunction {
    breakpoints: Vec<f64>,
    values: Vec<f64>,
}

impl QuantileFunction {
    fn of(x: &Position) -> Self {
        let dist = x.distribution();
        let mut breakpoints = Vec::with_capacity(dist.len());
        let mut values = Vec::with_capacity(dist.len());
        let mut acc = 0.0;
        for (v, p) in dist {
            acc += p;
            breakpoints.push(acc);
            values.push(v);
        }
        if let Some(last) = breakpoints.last_mut() {
            *last = 1.0;
        }
        Self { breakpoints, values }
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// `inf{x : F(x) >= alpha}` for `alpha` in `(0, 1]`.
    pub fn evaluate(&self, alpha: f64) -> Result<f64> {
        if !(alpha > 0.0 && alpha <= 1.0) {
            return Err(Error::Domain(format!("quantile level {alpha} outside (0, 1]")));
        }
        let j = self
            .breakpoints
            .iter()
            .position(|&c| c + LEVEL_TOL >= alpha)
            .unwrap_or(self.values.len() - 1);
        Ok(self.values[j])
    }

    /// Levels in `(0, 1)` at which the quantile jumps, with the jump sizes.
    pub fn jumps(&self) -> Vec<(f64, f64)> {
        self.breakpoints
            .iter()
            .zip(self.values.windows(2))
            .map(|(&c, w)| (c, w[1] - w[0]))
            .collect()
    }

    /// `int_0^level F^{-1}(s) ds`, exact on the step function.
    pub fn integral_up_to(&self, level: f64) -> f64 {
        let mut acc = 0.0;
        let mut lo = 0.0;
        for (&c, &v) in self.breakpoints.iter().zip(&self.values) {
            if lo >= level {
                break;
            }
            let hi = c.min(level);
            acc += v * (hi - lo);
            lo = c;
        }
        acc
    }
}

/// `P(X <= t)`.
pub fn cdf(x: &Position, t: f64) -> f64 {
    x.values()
        .iter()
        .zip(x.probabilities())
        .filter(|(v, _)| **v <= t)
        .map(|(_, p)| p)
        .sum::<f64>()
        .min(1.0)
}

/// Left quantile `inf{t : P(X <= t) >= alpha}`.
pub fn left_quantile(x: &Position, alpha: f64) -> Result<f64> {
    x.quantile_function().evaluate(alpha)
}

/// `E[f(X)] <= E[f(Y)]` for every increasing convex `f`, i.e. `X` dominates
/// `Y` in second order.
///
/// The check compares upper partial moments `t -> E[(. - t)^+]` at every atom
/// value of both positions. Both functions are piecewise linear with kinks
/// only at atom values, their difference is linear between consecutive
/// merged atoms, and far to the left the difference is the constant
/// `E[X] - E[Y]`, which is already controlled at the smallest atom, so these
/// thresholds are exhaustive.
pub fn ssd_dominates(x: &Position, y: &Position) -> Result<bool> {
    ssd_dominates_within(x, y, 1e-12)
}

/// [`ssd_dominates`] with an absolute tolerance on the moment comparison.
pub fn ssd_dominates_within(x: &Position, y: &Position, tol: f64) -> Result<bool> {
    x.ensure_same_space(y)?;
    Ok(ssd_thresholds(&[x, y])
        .into_iter()
        .all(|t| x.upper_partial_moment(t) <= y.upper_partial_moment(t) + tol))
}

/// Largest violation `max_t E[(X-t)^+] - E[(Y-t)^+]` over merged atoms
/// (non-positive when `X` dominates `Y`).
pub fn ssd_gap(x: &Position, y: &Position) -> Result<f64> {
    x.ensure_same_space(y)?;
    Ok(ssd_thresholds(&[x, y])
        .into_iter()
        .map(|t| x.upper_partial_moment(t) - y.upper_partial_moment(t))
        .fold(f64::NEG_INFINITY, f64::max))
}

pub(crate) fn ssd_thresholds(positions: &[&Position]) -> Vec<f64> {
    let mut ts: Vec<f64> = positions
        .iter()
        .flat_map(|p| p.values().iter().copied())
        .collect();
    ts.sort_by(f64::total_cmp);
    // values equal up to round-off give the same moment
    ts.dedup_by(|a, b| (*a - *b).abs() <= 1e-12 * b.abs().max(1.0));
    ts
}

/// `(X(w) - X(w')) (Y(w) - Y(w')) >= 0` for all atom pairs; ties pass.
pub fn is_comonotone_pair(x: &Position, y: &Position) -> Result<bool> {
    is_comonotone_pair_within(x, y, 0.0)
}

/// Comonotonicity where differences of magnitude at most `tol` count as ties.
pub fn is_comonotone_pair_within(x: &Position, y: &Position, tol: f64) -> Result<bool> {
    x.ensure_same_space(y)?;
    let (xv, yv) = (x.values(), y.values());
    for a in 0..xv.len() {
        for b in (a + 1)..xv.len() {
            let dx = xv[a] - xv[b];
            let dy = yv[a] - yv[b];
            if dx.abs() <= tol || dy.abs() <= tol {
                continue;
            }
            if dx * dy < 0.0 {
                return Ok(false);
            }
        }
    }
    Ok(true)
}

/// `E[X | sigma(Z)]`: on each level set of `z`, the mass-weighted mean of `x`.
pub fn conditional_expectation_given(x: &Position, z: &Position) -> Result<Position> {
    x.ensure_same_space(z)?;
    let p = x.probabilities();
    let mut levels: Vec<(f64, f64, f64)> = Vec::new(); // (z value, mass, mass * x)
    for k in 0..x.len() {
        let zk = z.values()[k];
        match levels.iter_mut().find(|l| l.0 == zk) {
            Some(l) => {
                l.1 += p[k];
                l.2 += p[k] * x.values()[k];
            }
            None => levels.push((zk, p[k], p[k] * x.values()[k])),
        }
    }
    let values = z
        .values()
        .iter()
        .map(|zk| {
            let l = levels.iter().find(|l| l.0 == *zk).expect("level present");
            l.2 / l.1
        })
        .collect();
    x.with_values(values)
}
