//! Risk measures on finite spaces: evaluation, penalties, dual sets and
//! subgradient faces.
//!
//! Positions are payoffs, so a risk value of `r` means `r` units of capital
//! must be added to make the position acceptable.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::space::{FiniteProbabilitySpace, Position};

/// Width of the first segment of the maximum-loss distortion.
pub const ML_DISTORTION_EPS: f64 = 1e-9;

/// Largest space for which a distortion core is exported as halfspaces.
pub const CORE_ATOM_CAP: usize = 20;

/// Slack used when testing whether a dual vector lies in a dual set.
pub const MEMBERSHIP_TOL: f64 = 1e-9;

/// Tagged description of a single risk measure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum RiskMeasureSpec {
    ExpectedLoss,
    ValueAtRisk { alpha: f64 },
    ExpectedShortfall { alpha: f64 },
    Entropic { gamma: f64 },
    MaximumLoss,
    Distortion { g: DistortionFunction },
    SpectralMixture { components: Vec<SpectralComponent> },
    /// `gamma * base(X / gamma)`.
    Dilated { base: Box<RiskMeasureSpec>, gamma: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectralComponent {
    pub alpha: f64,
    pub mass: f64,
}

impl fmt::Display for RiskMeasureSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::ExpectedLoss => write!(f, "EL"),
            Self::ValueAtRisk { alpha } => write!(f, "VaR^{alpha}"),
            Self::ExpectedShortfall { alpha } => write!(f, "ES^{alpha}"),
            Self::Entropic { gamma } => write!(f, "Ent^{gamma}"),
            Self::MaximumLoss => write!(f, "ML"),
            Self::Distortion { .. } => write!(f, "Distortion"),
            Self::SpectralMixture { components } => {
                write!(f, "Spectral[")?;
                for (j, c) in components.iter().enumerate() {
                    if j > 0 {
                        write!(f, ", ")?;
                    }
                    write!(f, "{}*ES^{}", c.mass, c.alpha)?;
                }
                write!(f, "]")
            }
            Self::Dilated { base, gamma } => write!(f, "Dilated({base}, {gamma})"),
        }
    }
}

fn domain(msg: String) -> Error {
    Error::Domain(msg)
}

impl RiskMeasureSpec {
    pub fn es(alpha: f64) -> Self {
        Self::ExpectedShortfall { alpha }
    }

    pub fn var(alpha: f64) -> Self {
        Self::ValueAtRisk { alpha }
    }

    pub fn entropic(gamma: f64) -> Self {
        Self::Entropic { gamma }
    }

    pub fn dilated(base: RiskMeasureSpec, gamma: f64) -> Self {
        Self::Dilated {
            base: Box::new(base),
            gamma,
        }
    }

    /// Checks parameter ranges.
    pub fn validate(&self) -> Result<()> {
        match self {
            Self::ExpectedLoss | Self::MaximumLoss => Ok(()),
            Self::ValueAtRisk { alpha } => {
                if (0.0..=1.0).contains(alpha) {
                    Ok(())
                } else {
                    Err(domain(format!("VaR level {alpha} outside [0, 1]")))
                }
            }
            Self::ExpectedShortfall { alpha } => {
                if *alpha == 0.0 {
                    Err(domain("ES^0 is the maximum loss; use maximum_loss".into()))
                } else if *alpha > 0.0 && *alpha <= 1.0 {
                    Ok(())
                } else {
                    Err(domain(format!("ES level {alpha} outside (0, 1]")))
                }
            }
            Self::Entropic { gamma } => {
                if gamma.is_finite() && *gamma > 0.0 {
                    Ok(())
                } else {
                    Err(domain(format!("entropic parameter {gamma} must be finite and > 0")))
                }
            }
            Self::Distortion { .. } => Ok(()),
            Self::SpectralMixture { components } => {
                if components.is_empty() {
                    return Err(domain("spectral mixture has no components".into()));
                }
                for c in components {
                    if !(c.alpha > 0.0 && c.alpha <= 1.0) {
                        return Err(domain(format!("spectral level {} outside (0, 1]", c.alpha)));
                    }
                    if !(c.mass.is_finite() && c.mass >= 0.0) {
                        return Err(domain(format!("spectral mass {} must be >= 0", c.mass)));
                    }
                }
                let total: f64 = components.iter().map(|c| c.mass).sum();
                if (total - 1.0).abs() > 1e-9 {
                    return Err(domain(format!("spectral masses sum to {total}, expected 1")));
                }
                Ok(())
            }
            Self::Dilated { base, gamma } => {
                if !(gamma.is_finite() && *gamma > 0.0) {
                    return Err(domain(format!("dilation {gamma} must be finite and > 0")));
                }
                base.validate()
            }
        }
    }

    /// Removes dilations: positively homogeneous bases are unchanged by
    /// dilation and a dilated entropic measure is again entropic.
    pub fn canonical(&self) -> RiskMeasureSpec {
        match self {
            Self::Dilated { base, gamma } => match base.canonical() {
                Self::Entropic { gamma: a } => Self::Entropic { gamma: a / gamma },
                other => other,
            },
            other => other.clone(),
        }
    }

    pub fn is_convex(&self) -> bool {
        match self.canonical() {
            Self::ValueAtRisk { .. } => false,
            Self::Distortion { g } => g.is_concave(),
            _ => true,
        }
    }

    /// Convex and positively homogeneous.
    pub fn is_coherent(&self) -> bool {
        self.is_convex() && self.is_positively_homogeneous()
    }

    pub fn is_positively_homogeneous(&self) -> bool {
        !matches!(self.canonical(), Self::Entropic { .. })
    }

    /// Representable as a Choquet integral of a piecewise-linear distortion.
    pub fn is_distortion_representable(&self) -> bool {
        !matches!(
            self.canonical(),
            Self::Entropic { .. } | Self::ValueAtRisk { .. }
        )
    }

    pub fn is_comonotone_additive(&self) -> bool {
        !matches!(self.canonical(), Self::Entropic { .. })
    }

    /// `rho(X) >= -E[X]` for every `X`.
    pub fn is_loaded(&self) -> bool {
        match self.canonical() {
            Self::ValueAtRisk { .. } => false,
            Self::Distortion { g } => g
                .breakpoints()
                .iter()
                .zip(g.values())
                .all(|(t, v)| *v + 1e-12 >= *t),
            _ => true,
        }
    }

    /// `rho(X) <= -ess inf X` for every `X`. Holds for every supported kind.
    pub fn is_limited(&self) -> bool {
        true
    }

    pub fn evaluate(&self, x: &Position) -> Result<f64> {
        self.validate()?;
        Ok(self.evaluate_unchecked(x))
    }

    fn evaluate_unchecked(&self, x: &Position) -> f64 {
        match self {
            Self::ExpectedLoss => -x.expectation(),
            Self::ValueAtRisk { alpha } => value_at_risk(x, *alpha),
            Self::ExpectedShortfall { alpha } => expected_shortfall(x, *alpha),
            Self::Entropic { gamma } => entropic(x, *gamma),
            Self::MaximumLoss => -x.ess_inf(),
            Self::Distortion { g } => choquet(x, g),
            Self::SpectralMixture { components } => components
                .iter()
                .map(|c| c.mass * expected_shortfall(x, c.alpha))
                .sum(),
            Self::Dilated { base, gamma } => gamma * base.evaluate_unchecked(&x.scale(1.0 / gamma)),
        }
    }

    /// Minimal penalty of a dual vector. Coherent kinds give `0` on their dual
    /// set and `+inf` elsewhere.
    pub fn penalty(&self, q: &DualVector) -> Result<f64> {
        self.validate()?;
        match self {
            Self::Entropic { gamma } => Ok(relative_entropy(q) / gamma),
            Self::Dilated { base, gamma } => Ok(gamma * base.penalty(q)?),
            Self::ValueAtRisk { .. } => Err(Error::unsupported(self.to_string(), "not convex")),
            _ => {
                let system = self.dual_set_halfspaces(q.space())?;
                Ok(if system.contains(q.weights(), MEMBERSHIP_TOL) {
                    0.0
                } else {
                    f64::INFINITY
                })
            }
        }
    }

    /// The dual set of a coherent measure as a linear system in `q`.
    pub fn dual_set_halfspaces(&self, space: &FiniteProbabilitySpace) -> Result<HalfspaceSystem> {
        self.validate()?;
        let d = space.atom_count();
        let p = space.probabilities();
        let mut system = HalfspaceSystem::simplex(d);
        match self.canonical() {
            Self::ExpectedLoss => {
                for (k, pk) in p.iter().enumerate() {
                    system.equalities.push(LinearConstraint::unit(d, k, *pk));
                }
            }
            Self::ExpectedShortfall { alpha } => {
                for (ub, pk) in system.upper_bounds.iter_mut().zip(p) {
                    *ub = (pk / alpha).min(1.0);
                }
            }
            Self::MaximumLoss => {}
            spec @ (Self::Distortion { .. } | Self::SpectralMixture { .. }) => {
                let g = spec.distortion_of()?;
                if !g.is_concave() {
                    return Err(Error::unsupported(
                        spec.to_string(),
                        "non-concave distortion has no convex dual set",
                    ));
                }
                if d > CORE_ATOM_CAP {
                    return Err(Error::Size(format!(
                        "distortion core export needs d <= {CORE_ATOM_CAP}, got {d}"
                    )));
                }
                system.inequalities = core_constraints(&g, p);
            }
            other => {
                return Err(Error::unsupported(other.to_string(), "not coherent"));
            }
        }
        Ok(system)
    }

    /// `evaluate(x) <= 0`.
    pub fn acceptance_check(&self, x: &Position) -> Result<bool> {
        Ok(self.evaluate(x)? <= 0.0)
    }

    /// Dual vectors attaining the dual representation at `x`.
    pub fn subgradient_face(&self, x: &Position) -> Result<SubgradientFace> {
        self.validate()?;
        match self.canonical() {
            Self::Entropic { gamma } => Ok(SubgradientFace::Point(gibbs_dual(x, gamma))),
            spec if spec.is_coherent() => {
                let mut system = spec.dual_set_halfspaces(x.space())?;
                let value = spec.evaluate_unchecked(x);
                system.equalities.push(LinearConstraint {
                    coefficients: x.values().iter().map(|v| -v).collect(),
                    rhs: value,
                });
                Ok(SubgradientFace::Polytope(system))
            }
            spec => Err(Error::unsupported(spec.to_string(), "not convex")),
        }
    }

    /// One dual vector attaining the dual representation at `x`, i.e.
    /// `rho(x) = E_q[-x] - penalty(q)`. For coherent kinds this is the
    /// marginal vector of the distortion along the worst-first atom order.
    pub fn supporting_dual(&self, x: &Position) -> Result<DualVector> {
        self.validate()?;
        match self.canonical() {
            Self::Entropic { gamma } => Ok(gibbs_dual(x, gamma)),
            Self::ExpectedLoss => DualVector::new(x.space(), x.probabilities().to_vec()),
            spec if spec.is_coherent() => {
                let g = spec.distortion_of()?;
                DualVector::new(x.space(), marginal_vector(&g, x))
            }
            spec => Err(Error::unsupported(spec.to_string(), "not convex")),
        }
    }

    /// Piecewise-linear distortion `g` with `rho(X) = int (-X) d(g o P)`.
    pub fn distortion_of(&self) -> Result<DistortionFunction> {
        self.validate()?;
        match self.canonical() {
            Self::ExpectedLoss => Ok(DistortionFunction::identity()),
            Self::ExpectedShortfall { alpha } => Ok(DistortionFunction::expected_shortfall(alpha)),
            Self::MaximumLoss => Ok(DistortionFunction::maximum_loss()),
            Self::Distortion { g } => Ok(g),
            Self::SpectralMixture { components } => {
                let parts: Vec<(f64, DistortionFunction)> = components
                    .iter()
                    .map(|c| (c.mass, DistortionFunction::expected_shortfall(c.alpha)))
                    .collect();
                Ok(DistortionFunction::mixture(&parts))
            }
            spec @ Self::ValueAtRisk { .. } => Err(Error::unsupported(
                spec.to_string(),
                "its distortion is a step function, not piecewise linear",
            )),
            spec => Err(Error::unsupported(spec.to_string(), "not comonotone additive")),
        }
    }
}

fn value_at_risk(x: &Position, alpha: f64) -> f64 {
    if alpha == 0.0 {
        -x.ess_inf()
    } else {
        -x.quantile_function()
            .evaluate(alpha)
            .expect("level validated")
    }
}

fn expected_shortfall(x: &Position, alpha: f64) -> f64 {
    -x.quantile_function().integral_up_to(alpha) / alpha
}

fn entropic(x: &Position, gamma: f64) -> f64 {
    let exps: Vec<f64> = x.values().iter().map(|v| -gamma * v).collect();
    let m = exps.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let s: f64 = exps
        .iter()
        .zip(x.probabilities())
        .map(|(e, p)| p * (e - m).exp())
        .sum();
    (m + s.ln()) / gamma
}

/// Layered Choquet integral of the loss `-x`: with distinct losses
/// `l_1 > ... > l_m`, `rho = l_m + sum_j (l_j - l_{j+1}) g(P(L >= l_j))`.
fn choquet(x: &Position, g: &DistortionFunction) -> f64 {
    let dist = x.distribution();
    // ascending payoffs are descending losses
    let losses: Vec<(f64, f64)> = dist.iter().map(|(v, p)| (-v, *p)).collect();
    let m = losses.len();
    let mut tail = 0.0;
    let mut acc = losses[m - 1].0;
    for j in 0..m - 1 {
        tail += losses[j].1;
        acc += (losses[j].0 - losses[j + 1].0) * g.eval(tail);
    }
    acc
}

/// `int_0^1 VaR^u(x) g'(u) du`, integrating the step quantile against the
/// piecewise-constant slope of `g` on merged breakpoints.
pub fn quantile_weighted_integral(x: &Position, g: &DistortionFunction) -> f64 {
    let q = x.quantile_function();
    let mut cuts: Vec<f64> = q
        .breakpoints()
        .iter()
        .chain(g.breakpoints())
        .copied()
        .chain(std::iter::once(0.0))
        .collect();
    cuts.sort_by(f64::total_cmp);
    cuts.dedup_by(|a, b| (*a - *b).abs() <= 1e-15);
    let mut acc = 0.0;
    for w in cuts.windows(2) {
        let (lo, hi) = (w[0], w[1]);
        if hi <= lo {
            continue;
        }
        let mid = 0.5 * (lo + hi);
        let var = -q.evaluate(mid).expect("level in (0, 1)");
        acc += var * g.slope_at(mid) * (hi - lo);
    }
    acc
}

/// `sum_k q_k log(q_k / p_k)` with `0 log 0 = 0`.
fn relative_entropy(q: &DualVector) -> f64 {
    q.weights()
        .iter()
        .zip(q.space().probabilities())
        .filter(|(qk, _)| **qk > 0.0)
        .map(|(qk, pk)| qk * (qk / pk).ln())
        .sum()
}

/// Gibbs weights `q_k proportional to p_k exp(-gamma x_k)`.
pub fn gibbs_weights(x: &Position, gamma: f64) -> Vec<f64> {
    let m = x.values().iter().fold(f64::NEG_INFINITY, |m, v| m.max(-gamma * v));
    let raw: Vec<f64> = x
        .values()
        .iter()
        .zip(x.probabilities())
        .map(|(v, p)| p * (-gamma * v - m).exp())
        .collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|r| r / total).collect()
}

fn gibbs_dual(x: &Position, gamma: f64) -> DualVector {
    DualVector::new(x.space(), gibbs_weights(x, gamma)).expect("Gibbs weights form a probability")
}

/// Marginal vector of `g` along atoms sorted from worst to best payoff.
fn marginal_vector(g: &DistortionFunction, x: &Position) -> Vec<f64> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|a, b| x.values()[*a].total_cmp(&x.values()[*b]));
    let p = x.probabilities();
    let mut q = vec![0.0; x.len()];
    let mut cum = 0.0;
    let mut prev = 0.0;
    for (j, &k) in order.iter().enumerate() {
        cum += p[k];
        let cur = if j + 1 == order.len() { 1.0 } else { g.eval(cum) };
        q[k] = (cur - prev).max(0.0);
        prev = cur;
    }
    q
}

fn core_constraints(g: &DistortionFunction, p: &[f64]) -> Vec<LinearConstraint> {
    let d = p.len();
    let full = (1u64 << d) - 1;
    let mut out = Vec::new();
    for mask in 1..full {
        let mass: f64 = (0..d).filter(|k| mask >> k & 1 == 1).map(|k| p[k]).sum();
        let bound = g.eval(mass);
        if bound >= 1.0 {
            continue; // implied by the simplex
        }
        out.push(LinearConstraint {
            coefficients: (0..d).map(|k| (mask >> k & 1) as f64).collect(),
            rhs: bound,
        });
    }
    out
}

/// Piecewise-linear nondecreasing map of `[0, 1]` onto itself with
/// `g(0) = 0` and `g(1) = 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawDistortion", into = "RawDistortion")]
pub struct DistortionFunction {
    breakpoints: Vec<f64>,
    values: Vec<f64>,
    concave: bool,
}

#[derive(Serialize, Deserialize)]
struct RawDistortion {
    breakpoints: Vec<f64>,
    values: Vec<f64>,
}

impl TryFrom<RawDistortion> for DistortionFunction {
    type Error = Error;
    fn try_from(raw: RawDistortion) -> Result<Self> {
        DistortionFunction::new(raw.breakpoints, raw.values)
    }
}

impl From<DistortionFunction> for RawDistortion {
    fn from(g: DistortionFunction) -> Self {
        RawDistortion {
            breakpoints: g.breakpoints,
            values: g.values,
        }
    }
}

impl DistortionFunction {
    pub fn new(breakpoints: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if breakpoints.len() != values.len() || breakpoints.len() < 2 {
            return Err(domain("distortion needs matching breakpoints and values, at least two".into()));
        }
        if breakpoints[0] != 0.0 || *breakpoints.last().unwrap() != 1.0 {
            return Err(domain("distortion breakpoints must start at 0 and end at 1".into()));
        }
        if breakpoints.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(domain("distortion breakpoints must be strictly increasing".into()));
        }
        if values[0].abs() > 1e-12 || (values.last().unwrap() - 1.0).abs() > 1e-12 {
            return Err(domain("distortion must satisfy g(0) = 0 and g(1) = 1".into()));
        }
        if values.iter().any(|v| !v.is_finite()) || values.windows(2).any(|w| w[1] < w[0] - 1e-12) {
            return Err(domain("distortion values must be nondecreasing".into()));
        }
        let mut values = values;
        values[0] = 0.0;
        *values.last_mut().unwrap() = 1.0;
        let concave = slopes_nonincreasing(&breakpoints, &values);
        Ok(Self {
            breakpoints,
            values,
            concave,
        })
    }

    pub fn identity() -> Self {
        Self::new(vec![0.0, 1.0], vec![0.0, 1.0]).unwrap()
    }

    /// `min(t / alpha, 1)`.
    pub fn expected_shortfall(alpha: f64) -> Self {
        if alpha >= 1.0 {
            Self::identity()
        } else {
            Self::new(vec![0.0, alpha, 1.0], vec![0.0, 1.0, 1.0]).unwrap()
        }
    }

    /// Zero at zero and one from [`ML_DISTORTION_EPS`] on.
    pub fn maximum_loss() -> Self {
        Self::expected_shortfall(ML_DISTORTION_EPS)
    }

    /// `sum_j w_j g_j` on merged breakpoints; the weights should sum to one.
    pub fn mixture(parts: &[(f64, DistortionFunction)]) -> Self {
        let cuts = merged_breakpoints(parts.iter().map(|(_, g)| g));
        let values = cuts
            .iter()
            .map(|t| parts.iter().map(|(w, g)| w * g.eval(*t)).sum::<f64>())
            .collect::<Vec<_>>();
        let mut values = values;
        for k in 1..values.len() {
            values[k] = values[k].max(values[k - 1]);
        }
        Self::new(cuts, values).expect("mixture of distortions is a distortion")
    }

    /// Pointwise minimum, including crossing points between breakpoints.
    pub fn pointwise_min(gs: &[DistortionFunction]) -> Result<Self> {
        if gs.is_empty() {
            return Err(Error::Validation("minimum of an empty family".into()));
        }
        let base = merged_breakpoints(gs.iter());
        let mut cuts = base.clone();
        for w in base.windows(2) {
            let (lo, hi) = (w[0], w[1]);
            for a in 0..gs.len() {
                for b in (a + 1)..gs.len() {
                    let dlo = gs[a].eval(lo) - gs[b].eval(lo);
                    let dhi = gs[a].eval(hi) - gs[b].eval(hi);
                    if dlo * dhi < 0.0 {
                        let t = lo + (hi - lo) * dlo / (dlo - dhi);
                        if t > lo && t < hi {
                            cuts.push(t);
                        }
                    }
                }
            }
        }
        cuts.sort_by(f64::total_cmp);
        cuts.dedup_by(|a, b| (*a - *b).abs() <= 1e-15);
        let values = cuts
            .iter()
            .map(|t| gs.iter().map(|g| g.eval(*t)).fold(f64::INFINITY, f64::min))
            .collect();
        Self::new(cuts, values)
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn is_concave(&self) -> bool {
        self.concave
    }

    pub fn eval(&self, t: f64) -> f64 {
        if t <= 0.0 {
            return 0.0;
        }
        if t >= 1.0 {
            return 1.0;
        }
        let j = self.breakpoints.partition_point(|b| *b < t);
        let (t0, t1) = (self.breakpoints[j - 1], self.breakpoints[j]);
        let (v0, v1) = (self.values[j - 1], self.values[j]);
        v0 + (v1 - v0) * (t - t0) / (t1 - t0)
    }

    /// Right slope at an interior point of a segment.
    fn slope_at(&self, t: f64) -> f64 {
        let j = self.breakpoints.partition_point(|b| *b <= t).clamp(1, self.breakpoints.len() - 1);
        (self.values[j] - self.values[j - 1]) / (self.breakpoints[j] - self.breakpoints[j - 1])
    }
}

fn slopes_nonincreasing(b: &[f64], v: &[f64]) -> bool {
    let slopes: Vec<f64> = b
        .windows(2)
        .zip(v.windows(2))
        .map(|(bw, vw)| (vw[1] - vw[0]) / (bw[1] - bw[0]))
        .collect();
    slopes
        .windows(2)
        .all(|s| s[1] <= s[0] + 1e-9 * s[0].abs().max(1.0))
}

fn merged_breakpoints<'a>(gs: impl Iterator<Item = &'a DistortionFunction>) -> Vec<f64> {
    let mut cuts: Vec<f64> = gs.flat_map(|g| g.breakpoints.iter().copied()).collect();
    cuts.sort_by(f64::total_cmp);
    cuts.dedup_by(|a, b| (*a - *b).abs() <= 1e-15);
    cuts
}

/// A probability vector on the atoms of a space.
#[derive(Debug, Clone, PartialEq)]
pub struct DualVector {
    weights: Vec<f64>,
    density: Vec<f64>,
    space: std::sync::Arc<FiniteProbabilitySpace>,
}

impl DualVector {
    /// Accepts nonnegative weights summing to one within `1e-9`; clips
    /// round-off negatives and renormalizes.
    pub fn new(space: &std::sync::Arc<FiniteProbabilitySpace>, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != space.atom_count() {
            return Err(Error::Structural(format!(
                "dual vector has {} weights for {} atoms",
                weights.len(),
                space.atom_count()
            )));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < -1e-9) {
            return Err(Error::Validation("dual weights must be nonnegative".into()));
        }
        let weights: Vec<f64> = weights.into_iter().map(|w| w.max(0.0)).collect();
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Validation(format!("dual weights sum to {total}, expected 1")));
        }
        let weights: Vec<f64> = weights.into_iter().map(|w| w / total).collect();
        let density = weights
            .iter()
            .zip(space.probabilities())
            .map(|(q, p)| q / p)
            .collect();
        Ok(Self {
            weights,
            density,
            space: space.clone(),
        })
    }

    pub fn base(space: &std::sync::Arc<FiniteProbabilitySpace>) -> Self {
        Self::new(space, space.probabilities().to_vec()).unwrap()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// `q_k / p_k`.
    pub fn density(&self) -> &[f64] {
        &self.density
    }

    pub fn space(&self) -> &std::sync::Arc<FiniteProbabilitySpace> {
        &self.space
    }

    /// `E_q[-x]`.
    pub fn expected_loss(&self, x: &Position) -> f64 {
        -x.expectation_under(&self.weights)
    }
}

/// `coefficients . q <= rhs` or `= rhs`, depending on where it is stored.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearConstraint {
    pub coefficients: Vec<f64>,
    pub rhs: f64,
}

impl LinearConstraint {
    fn unit(d: usize, k: usize, rhs: f64) -> Self {
        let mut coefficients = vec![0.0; d];
        coefficients[k] = 1.0;
        Self { coefficients, rhs }
    }

    fn lhs(&self, q: &[f64]) -> f64 {
        self.coefficients.iter().zip(q).map(|(a, b)| a * b).sum()
    }
}

/// `{q : 0 <= q <= upper_bounds, equalities, inequalities}`. The simplex
/// equality `sum q = 1` is always the first equality.
#[derive(Debug, Clone, PartialEq)]
pub struct HalfspaceSystem {
    pub dim: usize,
    pub equalities: Vec<LinearConstraint>,
    pub inequalities: Vec<LinearConstraint>,
    pub upper_bounds: Vec<f64>,
}

impl HalfspaceSystem {
    pub fn simplex(dim: usize) -> Self {
        Self {
            dim,
            equalities: vec![LinearConstraint {
                coefficients: vec![1.0; dim],
                rhs: 1.0,
            }],
            inequalities: Vec::new(),
            upper_bounds: vec![1.0; dim],
        }
    }

    pub fn contains(&self, q: &[f64], tol: f64) -> bool {
        q.len() == self.dim
            && q.iter().zip(&self.upper_bounds).all(|(v, u)| *v >= -tol && *v <= u + tol)
            && self.equalities.iter().all(|c| (c.lhs(q) - c.rhs).abs() <= tol)
            && self.inequalities.iter().all(|c| c.lhs(q) <= c.rhs + tol)
    }

    /// Conjunction of two systems in the same dimension; the duplicate
    /// simplex row of `other` is dropped.
    pub fn intersect(&self, other: &HalfspaceSystem) -> Result<HalfspaceSystem> {
        if self.dim != other.dim {
            return Err(Error::Structural("halfspace systems of different dimension".into()));
        }
        let mut out = self.clone();
        out.equalities.extend(other.equalities.iter().skip(1).cloned());
        out.inequalities.extend(other.inequalities.iter().cloned());
        for (u, v) in out.upper_bounds.iter_mut().zip(&other.upper_bounds) {
            *u = u.min(*v);
        }
        Ok(out)
    }
}

/// Subdifferential of a convex measure at a position, as dual vectors.
#[derive(Debug, Clone, PartialEq)]
pub enum SubgradientFace {
    Polytope(HalfspaceSystem),
    Point(DualVector),
}
