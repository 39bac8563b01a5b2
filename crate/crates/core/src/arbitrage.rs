//! Regulatory arbitrage of a single measure shared by every index:
//! `tau(x) = rho(x) - rho_conv(x)` for the homogeneous roster.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::convolution::{Allocation, ConvValue, ConvolutionEngine, MeasureRoster, Method};
use crate::error::{Error, Result};
use crate::measures::RiskMeasureSpec;
use crate::space::{FiniteProbabilitySpace, Position};
use crate::weights::{EffectiveSupport, WeightScheme};

/// Convex measures must satisfy `tau <= FREE_TOL` numerically.
pub const FREE_TOL: f64 = 1e-6;
/// Slack of the weighted Jensen inequality in the probe.
pub const JENSEN_TOL: f64 = 1e-9;
pub const DEFAULT_M_GRID: [f64; 4] = [1.0, 10.0, 100.0, 1000.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Classification {
    Free,
    Finite,
    InfiniteEvidence,
    Unknown,
}

impl std::fmt::Display for Classification {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Classification::Free => "free",
            Classification::Finite => "finite",
            Classification::InfiniteEvidence => "infinite_evidence",
            Classification::Unknown => "unknown",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassificationEvidence {
    pub classification: Classification,
    pub reason: String,
    /// For VaR: the partition size `k` and the `k + 1` indices it needs.
    pub k_threshold: Option<usize>,
    pub probe: Option<ProbeOutcome>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ProbeOutcome {
    Certificate {
        samples: usize,
        /// Largest `rho(sum mu_i X^i) - sum mu_i rho(X^i)` seen; at most the slack.
        max_excess: f64,
    },
    Counterexample {
        allocation: Allocation,
        /// `rho(sum mu_i X^i)`.
        lhs: f64,
        /// `sum mu_i rho(X^i)`.
        rhs: f64,
    },
}

impl ProbeOutcome {
    pub fn is_certificate(&self) -> bool {
        matches!(self, ProbeOutcome::Certificate { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TauValue {
    Finite(f64),
    /// Descent without bound; `certified_gap` is the largest reduction
    /// exhibited by an explicit allocation.
    InfiniteEvidence { certified_gap: f64 },
}

impl TauValue {
    pub fn finite(&self) -> Option<f64> {
        match self {
            TauValue::Finite(v) => Some(*v),
            TauValue::InfiniteEvidence { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArbitrageReport {
    pub spec: RiskMeasureSpec,
    pub rho: f64,
    pub tau_value: TauValue,
    pub convolution: Option<ConvValue>,
    pub method: Option<Method>,
    pub evidence: ClassificationEvidence,
    /// `(m, sum_i mu_i rho(X^i))` along the descent construction.
    pub descent_trace: Vec<(f64, f64)>,
    /// For the finite class: `0 <= tau <= ML(x) - EL(x)`.
    pub bounds: Option<(f64, f64)>,
    pub notes: Vec<String>,
}

/// Smallest `k >= 2` with `1/k < alpha`.
pub fn var_partition_threshold(alpha: f64) -> Result<usize> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::Domain(format!("VaR level {alpha} outside (0, 1]")));
    }
    let mut k = ((1.0 / alpha).floor() as usize).max(2);
    while !(1.0 / (k as f64) < alpha) {
        k += 1;
    }
    while k > 2 && 1.0 / ((k - 1) as f64) < alpha {
        k -= 1;
    }
    Ok(k)
}

fn var_partition_size(alpha: f64, support_len: usize, atoms: usize) -> Result<usize> {
    let k_min = var_partition_threshold(alpha)?;
    if support_len < k_min + 1 {
        return Err(Error::Precondition(format!(
            "insufficient support cardinality: VaR^{alpha} needs {} active weights, found {support_len}",
            k_min + 1
        )));
    }
    (k_min..support_len)
        .find(|k| atoms % k == 0)
        .ok_or_else(|| {
            Error::Precondition(format!(
                "no partition into k >= {k_min} blocks of probability 1/k exists on {atoms} equiprobable atoms \
                 with at most {} blocks",
                support_len - 1
            ))
        })
}

/// Explicit allocation driving the weighted VaR sum down by `m k/(k-1)`.
///
/// With blocks `B_1..B_k` of probability `1/k < alpha`, the first `k`
/// support indices take `m (1 - k 1_{B_j}) / ((k-1) mu_{i_j})`, whose loss
/// probability `1/k` lies below the level, and index `i_{k+1}` takes
/// `x / mu_{i_{k+1}}`. The remaining indices get zero.
pub fn var_descent_construction(alpha: f64, mu: &WeightScheme, x: &Position, m: f64) -> Result<(Allocation, f64)> {
    if !(m.is_finite() && m >= 0.0) {
        return Err(Error::Domain(format!("descent parameter {m} must be finite and >= 0")));
    }
    let support = mu.effective_support()?;
    descent_on_support(alpha, &support, x, m)
}

fn descent_on_support(alpha: f64, support: &EffectiveSupport, x: &Position, m: f64) -> Result<(Allocation, f64)> {
    if !x.space().is_equiprobable() {
        return Err(Error::Precondition(
            "the VaR descent partition needs an equiprobable space".into(),
        ));
    }
    let d = x.len();
    let k = var_partition_size(alpha, support.len(), d)?;
    let block = d / k;
    let entries = support.entries();
    let space = x.space().clone();
    let mut components = Vec::with_capacity(entries.len());
    for (j, &(i, w)) in entries.iter().enumerate() {
        let values = if j < k {
            let high = m / ((k - 1) as f64 * w);
            let low = -m / w;
            (0..d).map(|a| if a / block == j { low } else { high }).collect()
        } else if j == k {
            x.values().iter().map(|v| v / w).collect()
        } else {
            vec![0.0; d]
        };
        components.push((i, Position::new(space.clone(), values)?));
    }
    let allocation = Allocation::new(support, components)?;
    let objective = RiskMeasureSpec::var(alpha).evaluate(x)? - m * k as f64 / (k - 1) as f64;
    Ok((allocation, objective))
}

/// Samples allocations and checks `rho(sum mu_i X^i) <= sum mu_i rho(X^i)`.
/// For VaR the descent construction is tried first.
pub fn i_convexity_probe(spec: &RiskMeasureSpec, mu: &WeightScheme, sample_count: usize) -> Result<ProbeOutcome> {
    if sample_count == 0 {
        return Err(Error::Domain("sample_count must be at least 1".into()));
    }
    spec.validate()?;
    let support = mu.effective_support()?;
    if let RiskMeasureSpec::ValueAtRisk { alpha } = spec.canonical() {
        if let Ok(k) = var_partition_threshold(alpha) {
            if support.len() > k {
                let zero = Position::constant(FiniteProbabilitySpace::equiprobable(k)?.into_shared(), 0.0)?;
                if let Ok((allocation, objective)) = descent_on_support(alpha, &support, &zero, 1.0) {
                    return Ok(ProbeOutcome::Counterexample {
                        allocation,
                        lhs: spec.evaluate(&zero)?,
                        rhs: objective,
                    });
                }
            }
        }
    }
    let space = FiniteProbabilitySpace::equiprobable(6)?.into_shared();
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let mut max_excess = f64::NEG_INFINITY;
    for _ in 0..sample_count {
        let components = support
            .entries()
            .iter()
            .map(|&(i, _)| {
                let v = (0..space.atom_count()).map(|_| rng.gen_range(-5.0..5.0)).collect();
                Ok((i, Position::new(space.clone(), v)?))
            })
            .collect::<Result<Vec<_>>>()?;
        let allocation = Allocation::new(&support, components)?;
        let lhs = spec.evaluate(&allocation.aggregate()?)?;
        let mut rhs = 0.0;
        for ((_, w), (_, c)) in allocation.weights().iter().zip(allocation.components()) {
            rhs += w * spec.evaluate(c)?;
        }
        let excess = lhs - rhs;
        if excess > JENSEN_TOL * allocation.aggregate()?.sup_norm().max(1.0) {
            return Ok(ProbeOutcome::Counterexample { allocation, lhs, rhs });
        }
        max_excess = max_excess.max(excess);
    }
    Ok(ProbeOutcome::Certificate {
        samples: sample_count,
        max_excess,
    })
}

/// Rule-based classification; the probe is attached when no rule decides.
pub fn classify(spec: &RiskMeasureSpec, mu: &WeightScheme) -> Result<ClassificationEvidence> {
    spec.validate()?;
    let support = mu.effective_support()?;
    let canonical = spec.canonical();
    if canonical.is_convex() {
        return Ok(ClassificationEvidence {
            classification: Classification::Free,
            reason: format!("{spec} is convex, so it satisfies the weighted Jensen inequality"),
            k_threshold: None,
            probe: None,
        });
    }
    if let RiskMeasureSpec::ValueAtRisk { alpha } = canonical {
        let k = var_partition_threshold(alpha)?;
        if support.len() > k {
            return Ok(ClassificationEvidence {
                classification: Classification::InfiniteEvidence,
                reason: format!(
                    "partition size k = {k} has 1/k < {alpha} and the support has {} >= k + 1 indices",
                    support.len()
                ),
                k_threshold: Some(k),
                probe: None,
            });
        }
        return Ok(ClassificationEvidence {
            classification: Classification::Unknown,
            reason: format!(
                "the descent construction needs k + 1 = {} active weights, found {}",
                k + 1,
                support.len()
            ),
            k_threshold: Some(k),
            probe: Some(i_convexity_probe(spec, mu, 200)?),
        });
    }
    if canonical.is_loaded() && canonical.is_limited() {
        return Ok(ClassificationEvidence {
            classification: Classification::Finite,
            reason: format!("{spec} lies between EL and ML, so 0 <= tau <= ML - EL"),
            k_threshold: None,
            probe: None,
        });
    }
    Ok(ClassificationEvidence {
        classification: Classification::Unknown,
        reason: "no classification rule applies".into(),
        k_threshold: None,
        probe: Some(i_convexity_probe(spec, mu, 200)?),
    })
}

pub fn tau(spec: &RiskMeasureSpec, mu: &WeightScheme, x: &Position) -> Result<ArbitrageReport> {
    tau_with_grid(spec, mu, x, &DEFAULT_M_GRID)
}

/// `tau` with the descent parameters used for VaR evidence.
pub fn tau_with_grid(spec: &RiskMeasureSpec, mu: &WeightScheme, x: &Position, m_grid: &[f64]) -> Result<ArbitrageReport> {
    let evidence = classify(spec, mu)?;
    let support = mu.effective_support()?;
    let rho = spec.evaluate(x)?;
    let mut report = ArbitrageReport {
        spec: spec.clone(),
        rho,
        tau_value: TauValue::Finite(0.0),
        convolution: None,
        method: None,
        evidence,
        descent_trace: Vec::new(),
        bounds: None,
        notes: Vec::new(),
    };

    if let (Classification::InfiniteEvidence, RiskMeasureSpec::ValueAtRisk { alpha }) =
        (report.evidence.classification, spec.canonical())
    {
        let mut trace = Vec::with_capacity(m_grid.len());
        let mut failure = None;
        for &m in m_grid {
            match var_descent_construction(alpha, mu, x, m) {
                Ok((_, objective)) => trace.push((m, objective)),
                Err(e) => {
                    failure = Some(e);
                    break;
                }
            }
        }
        match failure {
            None if !trace.is_empty() => {
                let gap = trace.iter().map(|t| rho - t.1).fold(f64::NEG_INFINITY, f64::max);
                report.tau_value = TauValue::InfiniteEvidence { certified_gap: gap };
                report.descent_trace = trace;
                return Ok(report);
            }
            None => report.notes.push("empty descent grid".into()),
            Some(e) => report.notes.push(format!("descent construction unavailable on this space: {e}")),
        }
    }

    let roster = MeasureRoster::homogeneous(spec.clone(), &support)?;
    let result = ConvolutionEngine::default().best(&roster, &support, x)?;
    report.method = Some(result.method);
    report.convolution = Some(result.value);
    report.tau_value = match result.value {
        ConvValue::Finite(v) => TauValue::Finite(rho - v),
        ConvValue::DivergentEvidence { best_found } => TauValue::InfiniteEvidence {
            certified_gap: rho - best_found,
        },
    };
    if let Some(trace) = result.finite_n_trace {
        report.descent_trace = trace.into_iter().map(|(n, v)| (n as f64, v)).collect();
        report.notes.push("descent trace indexed by the number of active terms".into());
    }
    match report.evidence.classification {
        Classification::Free => {
            if let TauValue::Finite(t) = report.tau_value {
                if t > FREE_TOL {
                    report.notes.push(format!("numerical tau {t:.3e} exceeds {FREE_TOL:e}"));
                }
            }
        }
        Classification::Finite => {
            let ml = RiskMeasureSpec::MaximumLoss.evaluate(x)?;
            let el = RiskMeasureSpec::ExpectedLoss.evaluate(x)?;
            report.bounds = Some((0.0, ml - el));
        }
        _ => {}
    }
    Ok(report)
}
