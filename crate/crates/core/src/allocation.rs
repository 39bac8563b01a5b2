//! Optimality and Pareto certificates for allocations, comonotone
//! improvement and the flatness criterion for distortion rosters.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::convolution::{Allocation, ConvValue, ConvolutionEngine, MeasureRoster};
use crate::error::{Error, Result};
use crate::lp::{LinearProgram, LpOptions, LpOutcome, RowKind};
use crate::measures::{gibbs_weights, DistortionFunction, DualVector, RiskMeasureSpec};
use crate::space::{is_comonotone_pair_within, ssd_thresholds, Position};
use crate::weights::WeightScheme;

/// Tolerance for comonotonicity of computed allocations.
pub const COMONOTONE_TOL: f64 = 1e-9;
/// Certifying tolerance of the value match.
pub const VALUE_MATCH_TOL: f64 = 1e-6;
/// Gibbs tilts of entropic members must agree to this tolerance.
pub const TILT_TOL: f64 = 1e-8;
/// `g < g^i` is strict by more than this.
pub const STRICTNESS_TOL: f64 = 1e-12;
/// Quantile steps smaller than this are not jumps.
pub const JUMP_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CertificateKind {
    ValueMatch,
    SubgradientIntersection,
    Flatness,
}

impl std::fmt::Display for CertificateKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            CertificateKind::ValueMatch => "value_match",
            CertificateKind::SubgradientIntersection => "subgradient_intersection",
            CertificateKind::Flatness => "flatness",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum CertificateWitness {
    None,
    Dual(DualVector),
    Distortion(FlatnessRecord),
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimalityCertificate {
    pub kind: CertificateKind,
    pub witness: CertificateWitness,
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Verdict {
    Certified(OptimalityCertificate),
    Rejected {
        kind: CertificateKind,
        reason: String,
        residual: f64,
    },
}

impl Verdict {
    pub fn is_certified(&self) -> bool {
        matches!(self, Verdict::Certified(_))
    }

    pub fn residual(&self) -> f64 {
        match self {
            Verdict::Certified(c) => c.residual,
            Verdict::Rejected { residual, .. } => *residual,
        }
    }
}

fn ensure_nonempty(alloc: &Allocation) -> Result<()> {
    if alloc.is_empty() {
        Err(Error::Structural("allocation has an empty support".into()))
    } else {
        Ok(())
    }
}

fn scale_of(x: &Position) -> f64 {
    x.sup_norm().max(1.0)
}

/// Pairwise comonotonicity of all components.
pub fn is_comonotone_family(alloc: &Allocation) -> Result<bool> {
    ensure_nonempty(alloc)?;
    let comps = alloc.components();
    for a in 0..comps.len() {
        for b in (a + 1)..comps.len() {
            let tol = COMONOTONE_TOL * comps[a].1.sup_norm().max(comps[b].1.sup_norm()).max(1.0);
            if !is_comonotone_pair_within(&comps[a].1, &comps[b].1, tol)? {
                return Ok(false);
            }
        }
    }
    Ok(true)
}

/// `F_x^{-1} = sum_i mu_i F_{X^i}^{-1}` at every breakpoint level and between them.
pub fn quantile_additivity_check(alloc: &Allocation, x: &Position) -> Result<bool> {
    ensure_nonempty(alloc)?;
    let qx = x.quantile_function();
    let qs: Vec<_> = alloc.components().iter().map(|(_, c)| c.quantile_function()).collect();
    let mut levels: Vec<f64> = qx.breakpoints().to_vec();
    for q in &qs {
        levels.extend_from_slice(q.breakpoints());
    }
    levels.sort_by(f64::total_cmp);
    levels.dedup_by(|a, b| (*a - *b).abs() <= 1e-12);
    let mut probes = levels.clone();
    let mut prev = 0.0;
    for &l in &levels {
        probes.push(0.5 * (prev + l));
        prev = l;
    }
    let tol = 1e-9 * scale_of(x);
    for &u in &probes {
        let lhs = qx.evaluate(u)?;
        let mut rhs = 0.0;
        for ((_, w), q) in alloc.weights().iter().zip(&qs) {
            rhs += w * q.evaluate(u)?;
        }
        if (lhs - rhs).abs() > tol {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Nondecreasing piecewise-linear functions `h^i` of the aggregate position.
#[derive(Debug, Clone, PartialEq)]
pub struct AllocationRule {
    pub indices: Vec<usize>,
    pub weights: Vec<f64>,
    /// Sorted distinct values of the aggregate position.
    pub breakpoints: Vec<f64>,
    /// `values[i][k] = h^i(breakpoints[k])`.
    pub values: Vec<Vec<f64>>,
    /// Largest slope of each `h^i`; at most `1 / mu_i`.
    pub lipschitz_bounds: Vec<f64>,
}

impl AllocationRule {
    /// `h^i(t)`, linear between breakpoints and with slope one outside them,
    /// which keeps `sum_i mu_i h^i(t) = t` everywhere.
    pub fn apply(&self, component: usize, t: f64) -> f64 {
        let b = &self.breakpoints;
        let v = &self.values[component];
        if t <= b[0] {
            return v[0] + (t - b[0]);
        }
        let last = b.len() - 1;
        if t >= b[last] {
            return v[last] + (t - b[last]);
        }
        let j = b.partition_point(|x| *x < t);
        if b[j] == t {
            return v[j];
        }
        v[j - 1] + (v[j] - v[j - 1]) * (t - b[j - 1]) / (b[j] - b[j - 1])
    }

    /// Largest `|sum_i mu_i h^i(b_k) - b_k|` over breakpoints.
    pub fn sum_defect(&self) -> f64 {
        self.breakpoints
            .iter()
            .enumerate()
            .map(|(k, b)| {
                let s: f64 = self.weights.iter().zip(&self.values).map(|(w, v)| w * v[k]).sum();
                (s - b).abs()
            })
            .fold(0.0, f64::max)
    }
}

/// Upper partial moments of one component before and after improvement.
#[derive(Debug, Clone, PartialEq)]
pub struct SsdRow {
    pub index: usize,
    pub threshold: f64,
    pub improved: f64,
    pub original: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Improvement {
    pub allocation: Allocation,
    pub rule: AllocationRule,
    pub ssd_table: Vec<SsdRow>,
}

impl Improvement {
    /// Largest `E[(Y^i - t)^+] - E[(X^i - t)^+]` in the table.
    pub fn worst_ssd_gap(&self) -> f64 {
        self.ssd_table
            .iter()
            .map(|r| r.improved - r.original)
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

fn ensure_sums_to(alloc: &Allocation, x: &Position) -> Result<()> {
    let residual = alloc.sum_residual(x)?;
    if residual > 1e-9 * scale_of(x) {
        return Err(Error::Structural(format!(
            "allocation does not sum to the position (residual {residual:.3e})"
        )));
    }
    Ok(())
}

/// Replaces an allocation by a comonotone one `Y^i = h^i(x)` in which every
/// component dominates its original in second order.
///
/// The rule values at the distinct values of `x` solve a linear program:
/// monotone in `x`, summing to `x`, and with upper partial moments bounded
/// at every atom value of the original component (enough, since between
/// those atoms the original moment is linear and the new one convex). Among
/// feasible rules the one with the smallest total moment mass is returned.
pub fn comonotone_improve(alloc: &Allocation, x: &Position) -> Result<Improvement> {
    ensure_nonempty(alloc)?;
    if !x.space().is_equiprobable() {
        return Err(Error::Precondition(
            "comonotone improvement requires an equiprobable space".into(),
        ));
    }
    for (_, c) in alloc.components() {
        x.ensure_same_space(c)?;
    }
    ensure_sums_to(alloc, x)?;

    let dist = x.distribution();
    let levels: Vec<f64> = dist.iter().map(|d| d.0).collect();
    let mass: Vec<f64> = dist.iter().map(|d| d.1).collect();
    let m = levels.len();
    let n = alloc.len();
    let weights: Vec<f64> = alloc.weights().iter().map(|w| w.1).collect();
    let thresholds: Vec<Vec<f64>> = alloc
        .components()
        .iter()
        .map(|(_, c)| ssd_thresholds(&[c]))
        .collect();
    let h = |i: usize, k: usize| i * m + k;
    let mut s_offset = Vec::with_capacity(n);
    let mut next = n * m;
    for t in &thresholds {
        s_offset.push(next);
        next += t.len() * m;
    }
    let mut lp = LinearProgram::new(next);
    for i in 0..n {
        let c = &alloc.components()[i].1;
        for k in 0..m {
            lp.set_bounds(h(i, k), c.ess_inf(), c.ess_sup());
        }
        for k in 0..m.saturating_sub(1) {
            lp.add_row(vec![(h(i, k), 1.0), (h(i, k + 1), -1.0)], RowKind::Le, 0.0);
        }
    }
    for k in 0..m {
        lp.add_row((0..n).map(|i| (h(i, k), weights[i])).collect(), RowKind::Eq, levels[k]);
    }
    for i in 0..n {
        let c = &alloc.components()[i].1;
        for (ti, &t) in thresholds[i].iter().enumerate() {
            let base = s_offset[i] + ti * m;
            let mut moment_row = Vec::with_capacity(m);
            for k in 0..m {
                // s >= h - t
                lp.add_row(vec![(base + k, 1.0), (h(i, k), -1.0)], RowKind::Ge, -t);
                moment_row.push((base + k, mass[k]));
                lp.set_objective(base + k, weights[i] * mass[k]);
            }
            lp.add_row(moment_row, RowKind::Le, c.upper_partial_moment(t));
        }
    }
    let sol = match lp.minimize(&LpOptions::default())? {
        LpOutcome::Optimal(s) => s,
        other => {
            return Err(Error::Inconsistency(format!(
                "comonotone improvement program is {other:?} for {n} components on {m} levels; \
                 a feasible comonotone rule always exists"
            )))
        }
    };
    if sol.residual > 1e-8 * scale_of(x) {
        return Err(Error::Solver {
            message: "comonotone improvement program solution violates its constraints".into(),
            residual: sol.residual,
        });
    }
    let values: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let mut v: Vec<f64> = (0..m).map(|k| sol.x[h(i, k)]).collect();
            // remove round-off inversions
            for k in 1..m {
                if v[k] < v[k - 1] {
                    v[k] = v[k - 1];
                }
            }
            v
        })
        .collect();
    let lipschitz_bounds = values
        .iter()
        .map(|v| {
            (1..m)
                .map(|k| (v[k] - v[k - 1]) / (levels[k] - levels[k - 1]))
                .fold(0.0, f64::max)
        })
        .collect();
    let rule = AllocationRule {
        indices: alloc.weights().iter().map(|w| w.0).collect(),
        weights,
        breakpoints: levels.clone(),
        values,
        lipschitz_bounds,
    };
    let components = (0..n)
        .map(|i| {
            let vals = x
                .values()
                .iter()
                .map(|v| {
                    let k = levels.partition_point(|l| l < v);
                    rule.values[i][k]
                })
                .collect();
            Ok((rule.indices[i], x.with_values(vals)?))
        })
        .collect::<Result<Vec<_>>>()?;
    let improved = Allocation::from_weights(alloc.weights().to_vec(), components)?;
    let mut ssd_table = Vec::new();
    for ((i, y), (_, c)) in improved.components().iter().zip(alloc.components()) {
        for t in ssd_thresholds(&[y, c]) {
            ssd_table.push(SsdRow {
                index: *i,
                threshold: t,
                improved: y.upper_partial_moment(t),
                original: c.upper_partial_moment(t),
            });
        }
    }
    Ok(Improvement {
        allocation: improved,
        rule,
        ssd_table,
    })
}

fn ensure_weights_match(alloc: &Allocation, mu: &WeightScheme) -> Result<()> {
    let support = mu.effective_support()?;
    let same = support.len() == alloc.len()
        && support
            .entries()
            .iter()
            .zip(alloc.weights())
            .all(|(a, b)| a.0 == b.0 && (a.1 - b.1).abs() <= 1e-12);
    if same {
        Ok(())
    } else {
        Err(Error::Structural("allocation weights differ from the weighting scheme".into()))
    }
}

/// Value-match certificate against a reference convolution value.
pub fn check_optimal(
    alloc: &Allocation,
    roster: &MeasureRoster,
    mu: &WeightScheme,
    x: &Position,
    reference_value: f64,
) -> Result<Verdict> {
    ensure_nonempty(alloc)?;
    ensure_weights_match(alloc, mu)?;
    ensure_sums_to(alloc, x)?;
    let value = alloc.weighted_risk(roster)?;
    let residual = (value - reference_value).abs();
    Ok(if residual <= VALUE_MATCH_TOL {
        Verdict::Certified(OptimalityCertificate {
            kind: CertificateKind::ValueMatch,
            witness: CertificateWitness::None,
            residual,
        })
    } else {
        Verdict::Rejected {
            kind: CertificateKind::ValueMatch,
            reason: format!("weighted risk {value} differs from the convolution value {reference_value}"),
            residual,
        }
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParetoReport {
    pub pareto: bool,
    pub weighted_risk: f64,
    pub reference: ConvValue,
    /// For a suboptimal allocation: one that lowers every component's risk.
    pub improving: Option<Allocation>,
    /// Random balanced perturbations tried and how many improved somebody
    /// without hurting anybody.
    pub probes: usize,
    pub probe_improvements: usize,
}

/// Pareto optimality, decided by the value match and corroborated by a
/// random perturbation probe.
pub fn check_pareto_via_optimal(
    alloc: &Allocation,
    roster: &MeasureRoster,
    mu: &WeightScheme,
    x: &Position,
) -> Result<ParetoReport> {
    ensure_nonempty(alloc)?;
    ensure_weights_match(alloc, mu)?;
    ensure_sums_to(alloc, x)?;
    let support = mu.effective_support()?;
    let engine = ConvolutionEngine::default();
    let best = engine.best(roster, &support, x)?;
    let value = alloc.weighted_risk(roster)?;
    let pareto = match best.value {
        ConvValue::Finite(v) => (value - v).abs() <= VALUE_MATCH_TOL,
        ConvValue::DivergentEvidence { .. } => false,
    };
    let mut report = ParetoReport {
        pareto,
        weighted_risk: value,
        reference: best.value,
        improving: None,
        probes: 0,
        probe_improvements: 0,
    };
    if !pareto {
        let optimal = match best.allocation {
            Some(a) => a,
            None => engine
                .primal_oracle(roster, &support, x, support.len())?
                .allocation
                .expect("oracle returns an allocation"),
        };
        report.improving = Some(improving_allocation(alloc, &optimal, roster)?);
        return Ok(report);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let risks: Vec<f64> = alloc
        .components()
        .iter()
        .map(|(i, c)| roster.get(*i).expect("roster matches").evaluate(c))
        .collect::<Result<_>>()?;
    let eps = 1e-3 * scale_of(x);
    let probes = 200;
    for _ in 0..probes {
        let dirs = balanced_perturbation(alloc, &mut rng, eps)?;
        let mut better = false;
        let mut worse = false;
        for (((i, c), d), r) in alloc.components().iter().zip(&dirs).zip(&risks) {
            let spec = roster.get(*i).expect("roster matches");
            let v = spec.evaluate(&c.add(d)?)?;
            if v < r - 1e-7 {
                better = true;
            }
            if v > r + 1e-7 {
                worse = true;
            }
        }
        if better && !worse {
            report.probe_improvements += 1;
        }
    }
    report.probes = probes;
    Ok(report)
}

/// `Z^i = Y^i - k^i + k` with `k^i = rho^i(X^i) - rho^i(Y^i)` and
/// `k = sum_i mu_i k^i`: each component's risk drops by `k`.
pub fn improving_allocation(alloc: &Allocation, optimal: &Allocation, roster: &MeasureRoster) -> Result<Allocation> {
    let mut ks = Vec::with_capacity(alloc.len());
    for ((i, c), (_, y)) in alloc.components().iter().zip(optimal.components()) {
        let spec = roster.get(*i).expect("roster matches");
        ks.push(spec.evaluate(c)? - spec.evaluate(y)?);
    }
    let k: f64 = alloc.weights().iter().zip(&ks).map(|(w, ki)| w.1 * ki).sum();
    let shifts: Vec<f64> = ks.iter().map(|ki| k - ki).collect();
    Ok(optimal.translated(&shifts))
}

fn balanced_perturbation(alloc: &Allocation, rng: &mut ChaCha8Rng, eps: f64) -> Result<Vec<Position>> {
    let d = alloc.components()[0].1.len();
    let n = alloc.len();
    let mut raw: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..d).map(|_| eps * (rng.gen::<f64>() - 0.5)).collect())
        .collect();
    // remove the weighted mean so that sum_i mu_i D^i = 0
    for k in 0..d {
        let mean: f64 = alloc.weights().iter().zip(&raw).map(|(w, r)| w.1 * r[k]).sum();
        for r in raw.iter_mut() {
            r[k] -= mean;
        }
    }
    let space = alloc.components()[0].1.space().clone();
    raw.into_iter().map(|r| Position::new(space.clone(), r)).collect()
}

/// A common dual vector in every component's subgradient face.
pub fn subgradient_intersection_check(alloc: &Allocation, roster: &MeasureRoster, x: &Position) -> Result<Verdict> {
    ensure_nonempty(alloc)?;
    ensure_sums_to(alloc, x)?;
    let mut specs = Vec::with_capacity(alloc.len());
    for (i, _) in alloc.components() {
        let spec = roster
            .get(*i)
            .ok_or_else(|| Error::Validation(format!("no measure for index {i}")))?;
        if !spec.is_convex() {
            return Err(Error::unsupported(spec.to_string(), "subgradients need a convex measure"));
        }
        specs.push(spec.canonical());
    }
    let space = x.space();
    let tilts: Vec<Option<Vec<f64>>> = specs
        .iter()
        .zip(alloc.components())
        .map(|(s, (_, c))| match s {
            RiskMeasureSpec::Entropic { gamma } => Some(gibbs_weights(c, *gamma)),
            _ => None,
        })
        .collect();
    let scale = alloc
        .components()
        .iter()
        .map(|(_, c)| c.sup_norm())
        .fold(1.0, f64::max);

    if let Some(first) = tilts.iter().flatten().next() {
        let mut spread: f64 = 0.0;
        for t in tilts.iter().flatten() {
            for (a, b) in t.iter().zip(first) {
                spread = spread.max((a - b).abs());
            }
        }
        if spread > TILT_TOL {
            return Ok(Verdict::Rejected {
                kind: CertificateKind::SubgradientIntersection,
                reason: format!("Gibbs tilts of entropic components differ by {spread:.3e}"),
                residual: spread,
            });
        }
        let q = DualVector::new(space, first.clone())?;
        // the coherent faces must contain the common tilt
        let mut residual = spread;
        for (s, (_, c)) in specs.iter().zip(alloc.components()) {
            if matches!(s, RiskMeasureSpec::Entropic { .. }) {
                continue;
            }
            let system = s.dual_set_halfspaces(space)?;
            if !system.contains(q.weights(), 1e-9) {
                return Ok(Verdict::Rejected {
                    kind: CertificateKind::SubgradientIntersection,
                    reason: format!("common tilt lies outside the dual set of {s}"),
                    residual: f64::INFINITY,
                });
            }
            let gap = s.evaluate(c)? - q.expected_loss(c);
            residual = residual.max(gap);
            if gap > 1e-9 * scale {
                return Ok(Verdict::Rejected {
                    kind: CertificateKind::SubgradientIntersection,
                    reason: format!("common tilt does not attain {s} at its component"),
                    residual: gap,
                });
            }
        }
        return Ok(Verdict::Certified(OptimalityCertificate {
            kind: CertificateKind::SubgradientIntersection,
            witness: CertificateWitness::Dual(q),
            residual,
        }));
    }

    // All coherent: feasibility of the stacked faces.
    let d = x.len();
    let mut system = specs[0].dual_set_halfspaces(space)?;
    for s in &specs[1..] {
        system = system.intersect(&s.dual_set_halfspaces(space)?)?;
    }
    let mut lp = LinearProgram::new(d);
    for k in 0..d {
        lp.set_bounds(k, 0.0, system.upper_bounds[k]);
    }
    for c in &system.equalities {
        lp.add_dense_row(&c.coefficients, RowKind::Eq, c.rhs);
    }
    for c in &system.inequalities {
        lp.add_dense_row(&c.coefficients, RowKind::Le, c.rhs);
    }
    let mut rhos = Vec::with_capacity(specs.len());
    for (s, (_, c)) in specs.iter().zip(alloc.components()) {
        let rho = s.evaluate(c)?;
        rhos.push(rho);
        let coeffs: Vec<f64> = c.values().iter().map(|v| -v).collect();
        lp.add_dense_row(&coeffs, RowKind::Ge, rho - 1e-9 * scale);
    }
    match lp.minimize(&LpOptions::default())? {
        LpOutcome::Optimal(sol) => {
            let q = DualVector::new(space, sol.x)?;
            let residual = specs
                .iter()
                .zip(alloc.components())
                .zip(&rhos)
                .map(|((_, (_, c)), rho)| (rho - q.expected_loss(c)).max(0.0))
                .fold(0.0, f64::max);
            Ok(Verdict::Certified(OptimalityCertificate {
                kind: CertificateKind::SubgradientIntersection,
                witness: CertificateWitness::Dual(q),
                residual,
            }))
        }
        _ => Ok(Verdict::Rejected {
            kind: CertificateKind::SubgradientIntersection,
            reason: "no dual vector lies in every component's subgradient face".into(),
            residual: f64::INFINITY,
        }),
    }
}

/// Distortion comparison behind a flatness verdict.
#[derive(Debug, Clone, PartialEq)]
pub struct FlatnessRecord {
    /// Pointwise minimum of the member distortions.
    pub aggregate: DistortionFunction,
    /// `(index, level, g(level), g^i(level), component jump)` for each jump
    /// of a component quantile inside `{g < g^i}` where `x` also jumps.
    pub violations: Vec<(usize, f64, f64, f64, f64)>,
    pub note: String,
}

/// Flatness of every component quantile on `{g < g^i}` intersected with
/// the levels where the quantile of `x` increases.
pub fn flatness_check(alloc: &Allocation, roster: &MeasureRoster, x: &Position) -> Result<Verdict> {
    ensure_nonempty(alloc)?;
    ensure_sums_to(alloc, x)?;
    let mut gs = Vec::with_capacity(alloc.len());
    for (i, _) in alloc.components() {
        let spec = roster
            .get(*i)
            .ok_or_else(|| Error::Validation(format!("no measure for index {i}")))?;
        let g = spec.distortion_of()?;
        if !g.is_concave() {
            return Err(Error::Precondition(format!("{spec} has a non-concave distortion")));
        }
        gs.push(g);
    }
    if !x.space().is_equiprobable() {
        return Err(Error::Precondition("flatness check requires an equiprobable space".into()));
    }
    if !is_comonotone_family(alloc)? {
        return Err(Error::Precondition("flatness check requires a comonotone allocation".into()));
    }
    let aggregate = DistortionFunction::pointwise_min(&gs)?;
    let x_jumps: Vec<(f64, f64)> = x
        .quantile_function()
        .jumps()
        .into_iter()
        .filter(|(_, j)| *j > JUMP_TOL)
        .collect();
    let mut violations = Vec::new();
    for (((i, c), g_i), _) in alloc.components().iter().zip(&gs).zip(0..) {
        let qc = c.quantile_function();
        for &(level, _) in &x_jumps {
            // component jump across this level
            let below = qc.evaluate(level)?;
            let above = qc.evaluate((level + 1e-9).min(1.0))?;
            let jump = above - below;
            if jump.abs() <= JUMP_TOL {
                continue;
            }
            let (ga, gi) = (aggregate.eval(level), g_i.eval(level));
            if ga < gi - STRICTNESS_TOL {
                violations.push((*i, level, ga, gi, jump));
            }
        }
    }
    let residual = violations.iter().map(|v| v.4.abs()).fold(0.0, f64::max);
    let record = FlatnessRecord {
        aggregate,
        violations,
        note: "the boundary term at level 0+ vanishes: on a finite space the quantile at 0+ \
               equals the essential infimum"
            .into(),
    };
    Ok(if record.violations.is_empty() {
        Verdict::Certified(OptimalityCertificate {
            kind: CertificateKind::Flatness,
            witness: CertificateWitness::Distortion(record),
            residual,
        })
    } else {
        let (i, level, ..) = record.violations[0];
        Verdict::Rejected {
            kind: CertificateKind::Flatness,
            reason: format!("component {i} quantile jumps at level {level} where g < g^{i}"),
            residual,
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::space::{ssd_dominates_within, FiniteProbabilitySpace};
    use crate::weights::EffectiveSupport;
    use std::sync::Arc;

    fn space(d: usize) -> Arc<FiniteProbabilitySpace> {
        FiniteProbabilitySpace::equiprobable(d).unwrap().into_shared()
    }

    fn support(w: &[f64]) -> (WeightScheme, EffectiveSupport) {
        let mu = WeightScheme::from_weights(w).unwrap();
        let s = mu.effective_support().unwrap();
        (mu, s)
    }

    fn at(s: &Arc<FiniteProbabilitySpace>, v: &[f64]) -> Position {
        Position::new(s.clone(), v.to_vec()).unwrap()
    }

    fn roster(specs: Vec<RiskMeasureSpec>) -> MeasureRoster {
        MeasureRoster::new(specs.into_iter().enumerate().map(|(j, s)| (j + 1, s)).collect()).unwrap()
    }

    #[test]
    fn comonotone_family_examples() {
        let s = space(2);
        let (_, sup) = support(&[0.5, 0.5]);
        let x = at(&s, &[1.0, 2.0]);
        let same = Allocation::proportional(&sup, &x, &[1.0, 1.0]).unwrap();
        assert!(is_comonotone_family(&same).unwrap());
        let anti = Allocation::new(&sup, vec![(1, at(&s, &[1.0, 2.0])), (2, at(&s, &[2.0, 1.0]))]).unwrap();
        assert!(!is_comonotone_family(&anti).unwrap());
        assert!(!quantile_additivity_check(&anti, &at(&s, &[1.5, 1.5])).unwrap());
        assert!(quantile_additivity_check(&same, &x).unwrap());
    }

    #[test]
    fn improvement_of_cancelling_allocation() {
        let s = space(2);
        let (_, sup) = support(&[0.5, 0.5]);
        let x = at(&s, &[0.0, 0.0]);
        let alloc = Allocation::new(&sup, vec![(1, at(&s, &[-2.0, 2.0])), (2, at(&s, &[2.0, -2.0]))]).unwrap();
        let imp = comonotone_improve(&alloc, &x).unwrap();
        for (_, c) in imp.allocation.components() {
            for v in c.values() {
                assert!(v.abs() < 1e-12);
            }
        }
        assert!(imp.worst_ssd_gap() <= 1e-12);
    }

    #[test]
    fn improvement_keeps_comonotone_input_laws() {
        let s = space(4);
        let (_, sup) = support(&[0.25, 0.75]);
        let x = at(&s, &[-2.0, 1.0, 3.0, 0.5]);
        let alloc = Allocation::proportional(&sup, &x, &[2.0, 2.0 / 3.0]).unwrap();
        let imp = comonotone_improve(&alloc, &x).unwrap();
        assert!(is_comonotone_family(&imp.allocation).unwrap());
        for ((_, y), (_, c)) in imp.allocation.components().iter().zip(alloc.components()) {
            assert!(ssd_dominates_within(y, c, 1e-9).unwrap());
            assert!(ssd_dominates_within(c, y, 1e-9).unwrap());
        }
        assert!(imp.rule.sum_defect() < 1e-10);
        for (b, w) in imp.rule.lipschitz_bounds.iter().zip(&imp.rule.weights) {
            assert!(*b <= 1.0 / w + 1e-9);
        }
    }

    #[test]
    fn improvement_requires_equiprobable_space() {
        let s = FiniteProbabilitySpace::new(vec![0.3, 0.7]).unwrap().into_shared();
        let (_, sup) = support(&[1.0]);
        let x = at(&s, &[1.0, 2.0]);
        let alloc = Allocation::proportional(&sup, &x, &[1.0]).unwrap();
        assert!(matches!(comonotone_improve(&alloc, &x), Err(Error::Precondition(_))));
    }

    #[test]
    fn rule_extrapolates_with_unit_slope() {
        let rule = AllocationRule {
            indices: vec![1, 2],
            weights: vec![0.5, 0.5],
            breakpoints: vec![0.0, 1.0],
            values: vec![vec![0.0, 2.0], vec![0.0, 0.0]],
            lipschitz_bounds: vec![2.0, 0.0],
        };
        assert_eq!(rule.apply(0, 0.5), 1.0);
        assert_eq!(rule.apply(1, 3.0), 2.0);
        assert_eq!(0.5 * rule.apply(0, -1.0) + 0.5 * rule.apply(1, -1.0), -1.0);
    }

    #[test]
    fn dilated_entropic_certificates() {
        let s = space(3);
        let (mu, sup) = support(&[0.5, 0.5]);
        let x = at(&s, &[-1.0, 0.4, 2.0]);
        let r = roster(vec![RiskMeasureSpec::entropic(1.0), RiskMeasureSpec::entropic(3.0)]);
        let alloc = Allocation::proportional(&sup, &x, &[1.5, 0.5]).unwrap();
        let reference = RiskMeasureSpec::entropic(1.5).evaluate(&x).unwrap();
        let v = check_optimal(&alloc, &r, &mu, &x, reference).unwrap();
        assert!(v.is_certified() && v.residual() < 1e-9);
        let shifted = alloc.translated(&[1.0, -1.0]);
        assert!(check_optimal(&shifted, &r, &mu, &x, reference).unwrap().is_certified());
        assert!(subgradient_intersection_check(&alloc, &r, &x).unwrap().is_certified());
        let skew = Allocation::proportional(&sup, &x, &[1.0, 1.0]).unwrap();
        assert!(!subgradient_intersection_check(&skew, &r, &x).unwrap().is_certified());
        let p = check_pareto_via_optimal(&alloc, &r, &mu, &x).unwrap();
        assert!(p.pareto && p.probe_improvements == 0);
    }

    #[test]
    fn unbalanced_perturbation_is_structural_error() {
        let s = space(3);
        let (mu, sup) = support(&[0.5, 0.5]);
        let x = at(&s, &[-1.0, 0.4, 2.0]);
        let r = roster(vec![RiskMeasureSpec::entropic(1.0), RiskMeasureSpec::entropic(3.0)]);
        let bad = Allocation::new(&sup, vec![(1, x.scale(1.5).add(&at(&s, &[0.1, 0.0, 0.0])).unwrap()), (2, x.scale(0.5))]).unwrap();
        assert!(matches!(check_optimal(&bad, &r, &mu, &x, 0.0), Err(Error::Structural(_))));
    }

    #[test]
    fn suboptimal_allocation_gets_improved() {
        let s = space(3);
        let (mu, sup) = support(&[0.5, 0.5]);
        let x = at(&s, &[-1.0, 0.4, 2.0]);
        let r = roster(vec![RiskMeasureSpec::entropic(1.0), RiskMeasureSpec::entropic(3.0)]);
        let alloc = Allocation::proportional(&sup, &x, &[1.0, 1.0]).unwrap();
        let p = check_pareto_via_optimal(&alloc, &r, &mu, &x).unwrap();
        assert!(!p.pareto);
        let z = p.improving.unwrap();
        assert!(z.sum_residual(&x).unwrap() < 1e-12);
        for ((i, zc), (_, xc)) in z.components().iter().zip(alloc.components()) {
            let spec = r.get(*i).unwrap();
            assert!(spec.evaluate(zc).unwrap() < spec.evaluate(xc).unwrap());
        }
    }

    #[test]
    fn zero_allocation_is_pareto_for_zero() {
        let s = space(3);
        let (mu, sup) = support(&[0.5, 0.5]);
        let zero = at(&s, &[0.0; 3]);
        let r = roster(vec![RiskMeasureSpec::es(0.3), RiskMeasureSpec::MaximumLoss]);
        let alloc = Allocation::proportional(&sup, &zero, &[0.0, 0.0]).unwrap();
        assert!(check_pareto_via_optimal(&alloc, &r, &mu, &zero).unwrap().pareto);
    }

    #[test]
    fn expected_loss_roster_certifies_any_split() {
        let s = space(3);
        let (_, sup) = support(&[0.5, 0.5]);
        let x = at(&s, &[-1.0, 0.4, 2.0]);
        let r = roster(vec![RiskMeasureSpec::ExpectedLoss, RiskMeasureSpec::ExpectedLoss]);
        let alloc = Allocation::new(&sup, vec![(1, at(&s, &[3.0, -1.0, 0.0])), (2, at(&s, &[-5.0, 1.8, 4.0]))]).unwrap();
        let Verdict::Certified(c) = subgradient_intersection_check(&alloc, &r, &x).unwrap() else {
            panic!("expected a certificate");
        };
        let CertificateWitness::Dual(q) = c.witness else { panic!() };
        for w in q.weights() {
            assert!((w - 1.0 / 3.0).abs() < 1e-12);
        }
        let var = roster(vec![RiskMeasureSpec::var(0.3), RiskMeasureSpec::ExpectedLoss]);
        assert!(matches!(subgradient_intersection_check(&alloc, &var, &x), Err(Error::Unsupported { .. })));
    }

    #[test]
    fn flatness_examples() {
        let s = space(5);
        let (_, sup) = support(&[0.5, 0.5]);
        let x = at(&s, &[-3.0, -1.0, 0.0, 2.0, 4.0]);
        let r = roster(vec![RiskMeasureSpec::es(0.2), RiskMeasureSpec::es(0.4)]);
        // all of x on the ES^0.4 component
        let good = Allocation::new(&sup, vec![(1, at(&s, &[0.0; 5])), (2, x.scale(2.0))]).unwrap();
        assert!(flatness_check(&good, &r, &x).unwrap().is_certified());
        assert!((good.weighted_risk(&r).unwrap() - RiskMeasureSpec::es(0.4).evaluate(&x).unwrap()).abs() < 1e-12);
        // the ES^0.2 component jumps at level 0.2, where g = min(t/0.4, 1) < g^1
        let bad = Allocation::proportional(&sup, &x, &[1.0, 1.0]).unwrap();
        let v = flatness_check(&bad, &r, &x).unwrap();
        assert!(!v.is_certified());
        let single = roster(vec![RiskMeasureSpec::es(0.3)]);
        let (_, one) = support(&[1.0]);
        let alloc = Allocation::proportional(&one, &x, &[1.0]).unwrap();
        assert!(flatness_check(&alloc, &single, &x).unwrap().is_certified());
        let ent = roster(vec![RiskMeasureSpec::entropic(1.0)]);
        assert!(matches!(flatness_check(&alloc, &ent, &x), Err(Error::Unsupported { .. })));
        let anti = Allocation::new(&sup, vec![(1, x.scale(4.0)), (2, x.scale(-2.0))]).unwrap();
        assert!(matches!(flatness_check(&anti, &r, &x), Err(Error::Precondition(_))));
    }
}
