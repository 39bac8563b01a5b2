//! Acceptance gate: one PASS/FAIL line per criterion, with runtime limits.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::*;
use riskconv::allocation::{check_optimal, comonotone_improve, subgradient_intersection_check, Verdict};
use riskconv::arbitrage::{classify, i_convexity_probe, tau, var_descent_construction, Classification, TauValue};
use riskconv::convolution::{penalty_objective, Allocation, ConvValue, ConvolutionEngine, MeasureRoster};
use riskconv::measures::{DualVector, RiskMeasureSpec, SpectralComponent};
use riskconv::space::Position;
use riskconv::weights::WeightScheme;

type Check = Result<String, String>;

fn ensure(ok: bool, msg: String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg)
    }
}

fn roster(specs: &[RiskMeasureSpec]) -> MeasureRoster {
    MeasureRoster::new(specs.iter().cloned().enumerate().map(|(j, s)| (j + 1, s)).collect()).unwrap()
}

fn value(v: ConvValue) -> f64 {
    v.finite().expect("finite convolution value")
}

fn es_family_vs_dual_lp() -> Check {
    let engine = ConvolutionEngine::default();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let space = equiprobable(10);
    let r = roster(&[RiskMeasureSpec::es(0.1), RiskMeasureSpec::es(0.3)]);
    let support = WeightScheme::from_weights(&[0.5, 0.5]).unwrap().effective_support().unwrap();
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let x = random_position(&mut rng, &space, 10.0);
        let target = es_ref(&x, 0.3);
        let closed = engine.closed_form(&r, &support, &x).unwrap().applicable().ok_or("closed form missing")?;
        let dual = engine.dual_lp(&r, &support, &x).unwrap();
        worst = worst
            .max((value(closed.value) - target).abs())
            .max((value(dual.value) - target).abs());
    }
    ensure(worst <= 1e-9, format!("max error {worst:.3e}"))?;
    Ok(format!("max |value - ES^0.3| = {worst:.2e} over 20 positions"))
}

fn dilated_entropic() -> Check {
    let engine = ConvolutionEngine::default();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let space = equiprobable(6);
    let r = roster(&[RiskMeasureSpec::entropic(1.0), RiskMeasureSpec::entropic(3.0)]);
    let mu = WeightScheme::from_weights(&[0.5, 0.5]).unwrap();
    let support = mu.effective_support().unwrap();
    let (mut value_err, mut cert_res): (f64, f64) = (0.0, 0.0);
    for _ in 0..10 {
        let x = random_position(&mut rng, &space, 3.0);
        let target = entropic_ref(&x, 1.5);
        let pen = engine.penalty_program(&r, &support, &x).map_err(|e| e.to_string())?;
        let orc = engine.primal_oracle(&r, &support, &x, 2).map_err(|e| e.to_string())?;
        value_err = value_err
            .max((value(pen.value) - target).abs())
            .max((value(orc.value) - target).abs());
        let alloc = Allocation::proportional(&support, &x, &[1.5, 0.5]).unwrap();
        for v in [
            check_optimal(&alloc, &r, &mu, &x, target).unwrap(),
            subgradient_intersection_check(&alloc, &r, &x).unwrap(),
        ] {
            let Verdict::Certified(c) = v else {
                return Err(format!("certificate rejected: {v:?}"));
            };
            cert_res = cert_res.max(c.residual);
        }
    }
    ensure(value_err <= 1e-6, format!("value error {value_err:.3e}"))?;
    ensure(cert_res < 1e-8, format!("certificate residual {cert_res:.3e}"))?;
    Ok(format!("value error {value_err:.2e}, certificate residual {cert_res:.2e}"))
}

/// Grid search over `{q >= 0, sum q = 1}` in dimension 4: the lattice
/// with step `1/n`, then a lattice of the same size on the box of
/// half-width `2/n` around the best coarse point.
fn grid_max(f: impl Fn(&[f64; 4]) -> f64, n: usize) -> (f64, usize) {
    let mut best = (f64::NEG_INFINITY, [0.0; 4]);
    let mut count = 0;
    let visit = |q: [f64; 4], best: &mut (f64, [f64; 4])| {
        let v = f(&q);
        if v > best.0 {
            *best = (v, q);
        }
    };
    let h = 1.0 / n as f64;
    for a in 0..=n {
        for b in 0..=(n - a) {
            for c in 0..=(n - a - b) {
                let d = n - a - b - c;
                visit([a as f64 * h, b as f64 * h, c as f64 * h, d as f64 * h], &mut best);
                count += 1;
            }
        }
    }
    let centre = best.1;
    let steps = 100;
    let fine = 4.0 * h / steps as f64;
    for i in 0..=steps {
        for j in 0..=steps {
            for k in 0..=steps {
                let a = centre[0] - 2.0 * h + i as f64 * fine;
                let b = centre[1] - 2.0 * h + j as f64 * fine;
                let c = centre[2] - 2.0 * h + k as f64 * fine;
                let d = 1.0 - a - b - c;
                if a >= 0.0 && b >= 0.0 && c >= 0.0 && d >= 0.0 {
                    visit([a, b, c, d], &mut best);
                    count += 1;
                }
            }
        }
    }
    (best.0, count)
}

fn penalty_additivity() -> Check {
    let engine = ConvolutionEngine::default();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let space = equiprobable(4);
    let gammas = [1.0, 2.0, 4.0];
    let weights = [0.2, 0.3, 0.5];
    let r = roster(&gammas.map(RiskMeasureSpec::entropic));
    let support = WeightScheme::from_weights(&weights).unwrap().effective_support().unwrap();
    let terms = r.terms(&support).unwrap();
    let c: f64 = weights.iter().zip(&gammas).map(|(w, g)| w / g).sum();
    let p = space.probabilities().to_vec();
    let mut decomposition: f64 = 0.0;
    for _ in 0..50 {
        let x = random_position(&mut rng, &space, 3.0);
        let raw: Vec<f64> = (0..4).map(|_| rng.gen_range(0.0..1.0f64).powi(2)).collect();
        let total: f64 = raw.iter().sum();
        let q = DualVector::new(&space, raw.iter().map(|v| v / total).collect()).unwrap();
        let got = penalty_objective(&terms, &x, &q).unwrap();
        let loss: f64 = -q.weights().iter().zip(x.values()).map(|(a, b)| a * b).sum::<f64>();
        let reference = loss - c * kl_ref(q.weights(), &p);
        decomposition = decomposition.max((got - reference).abs());
    }
    ensure(decomposition <= 1e-12, format!("decomposition error {decomposition:.3e}"))?;
    let mut grid_gap: f64 = 0.0;
    let mut points = 0;
    for _ in 0..3 {
        let x = random_position(&mut rng, &space, 3.0);
        let v = value(engine.penalty_program(&r, &support, &x).unwrap().value);
        let xv = x.values().to_vec();
        let (g, n) = grid_max(
            |q| {
                let loss: f64 = -q.iter().zip(&xv).map(|(a, b)| a * b).sum::<f64>();
                loss - c * kl_ref(q, &p)
            },
            180,
        );
        points = n;
        ensure(g <= v + 1e-9, format!("grid {g} beats the program value {v}"))?;
        grid_gap = grid_gap.max(v - g);
    }
    ensure(points >= 1_000_000, format!("grid has only {points} points"))?;
    ensure(grid_gap <= 1e-4, format!("grid gap {grid_gap:.3e}"))?;
    Ok(format!(
        "decomposition error {decomposition:.1e} on 50 duals; grid gap {grid_gap:.2e} with {points} points"
    ))
}

fn dual_intersection() -> Check {
    let engine = ConvolutionEngine::default();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst: f64 = 0.0;
    for inst in 0..30 {
        let d = rng.gen_range(3..=6);
        let space = random_space(&mut rng, d);
        let x = random_position(&mut rng, &space, 5.0);
        let w = rng.gen_range(0.1..0.9);
        let support = WeightScheme::from_weights(&[w, 1.0 - w]).unwrap().effective_support().unwrap();
        let a = rng.gen_range(0.05..0.95);
        let b = rng.gen_range(0.05..0.95);
        let specs = match inst % 3 {
            0 => [RiskMeasureSpec::ExpectedLoss, RiskMeasureSpec::es(a)],
            1 => [RiskMeasureSpec::es(a), RiskMeasureSpec::es(b)],
            _ => [
                RiskMeasureSpec::es(a),
                RiskMeasureSpec::Distortion { g: random_concave_distortion(&mut rng) },
            ],
        };
        let r = roster(&specs);
        let dual = value(engine.dual_lp(&r, &support, &x).map_err(|e| e.to_string())?.value);
        let oracle = value(engine.primal_oracle(&r, &support, &x, 2).map_err(|e| e.to_string())?.value);
        worst = worst.max((dual - oracle).abs());
    }
    ensure(worst <= 1e-5, format!("max gap {worst:.3e}"))?;
    Ok(format!("max |dual LP - primal oracle| = {worst:.2e} over 30 instances"))
}

fn var_descent() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let space = equiprobable(4);
    let mu = WeightScheme::uniform(3).unwrap();
    let w = mu.effective_support().unwrap().weights();
    let mut worst: f64 = 0.0;
    for _ in 0..5 {
        let x = random_position(&mut rng, &space, 5.0);
        let v = var_ref(&x, 0.6);
        for m in [1.0, 10.0, 100.0, 1000.0] {
            let (alloc, objective) = var_descent_construction(0.6, &mu, &x, m).map_err(|e| e.to_string())?;
            worst = worst.max((objective - (v - 2.0 * m)).abs());
            let sum = alloc.sum_residual(&x).unwrap();
            ensure(sum <= 1e-12 * m.max(1.0), format!("allocation misses x by {sum:.3e}"))?;
            let comps = alloc.components();
            // each block term contributes -m/(k-1) = -m, the last term VaR(x)
            for (j, (_, c)) in comps.iter().take(2).enumerate() {
                worst = worst.max((w[j] * var_ref(c, 0.6) + m).abs());
            }
            worst = worst.max((w[2] * var_ref(&comps[2].1, 0.6) - v).abs());
        }
    }
    ensure(worst <= 1e-9, format!("max formula error {worst:.3e}"))?;
    Ok(format!("max error {worst:.2e} over 5 positions and m in {{1, 10, 100, 1000}}"))
}

fn comonotone_improvement() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let space = equiprobable(8);
    let (mut como, mut ssd, mut sum, mut es_rise): (f64, f64, f64, f64) = (0.0, 0.0, 0.0, f64::NEG_INFINITY);
    for inst in 0..100 {
        let n = 2 + inst % 3;
        let w = random_weights(&mut rng, n);
        let support = WeightScheme::from_weights(&w).unwrap().effective_support().unwrap();
        let comps: Vec<(usize, Position)> = (0..n)
            .map(|i| {
                let v = (0..8).map(|_| rng.gen_range(-5..=5) as f64).collect();
                (i + 1, Position::new(space.clone(), v).unwrap())
            })
            .collect();
        let alloc = Allocation::new(&support, comps).unwrap();
        let x = alloc.aggregate().unwrap();
        let imp = comonotone_improve(&alloc, &x).map_err(|e| e.to_string())?;
        let ys = imp.allocation.components();
        for a in 0..n {
            for b in (a + 1)..n {
                como = como.max(-comonotone_defect(&ys[a].1, &ys[b].1));
            }
            let orig = &alloc.components()[a].1;
            for t in ys[a].1.values().iter().chain(orig.values()) {
                ssd = ssd.max(upper_moment_ref(&ys[a].1, *t) - upper_moment_ref(orig, *t));
            }
        }
        sum = sum.max(imp.allocation.sum_residual(&x).unwrap());
        let weighted = |al: &Allocation| -> f64 {
            al.weights().iter().zip(al.components()).map(|((_, w), (_, c))| w * es_ref(c, 0.25)).sum()
        };
        es_rise = es_rise.max(weighted(&imp.allocation) - weighted(&alloc));
    }
    ensure(como <= 1e-9, format!("comonotonicity defect {como:.3e}"))?;
    ensure(ssd <= 1e-9, format!("SSD violation {ssd:.3e}"))?;
    ensure(sum <= 1e-9, format!("sum residual {sum:.3e}"))?;
    ensure(es_rise <= 1e-8, format!("weighted ES rose by {es_rise:.3e}"))?;
    Ok(format!(
        "comonotone defect {como:.1e}, SSD {ssd:.1e}, sum {sum:.1e}, ES change <= {es_rise:.2e}"
    ))
}

struct Instance {
    roster: MeasureRoster,
    coherent: bool,
}

fn random_instance(rng: &mut ChaCha8Rng, coherent_only: bool) -> Instance {
    let a = rng.gen_range(0.1..0.9);
    let b = rng.gen_range(0.1..0.9);
    let kinds = if coherent_only { 3 } else { 5 };
    let (specs, coherent) = match rng.gen_range(0..kinds) {
        0 => (vec![RiskMeasureSpec::es(a), RiskMeasureSpec::es(b)], true),
        1 => (
            vec![
                RiskMeasureSpec::ExpectedLoss,
                RiskMeasureSpec::Distortion { g: random_concave_distortion(rng) },
            ],
            true,
        ),
        2 => (vec![RiskMeasureSpec::es(a), RiskMeasureSpec::MaximumLoss], true),
        3 => (vec![RiskMeasureSpec::entropic(a * 3.0), RiskMeasureSpec::entropic(b)], false),
        _ => (vec![RiskMeasureSpec::es(a), RiskMeasureSpec::entropic(b * 2.0)], false),
    };
    Instance {
        roster: roster(&specs),
        coherent,
    }
}

fn axiom_preservation() -> Check {
    let engine = ConvolutionEngine::default();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let tol = 1e-8;
    let mut violations: Vec<String> = Vec::new();
    let properties = [
        "monotonicity",
        "translation",
        "convexity",
        "positive homogeneity",
        "loadedness",
        "limitedness",
        "law invariance",
        "Lipschitz",
    ];
    for (p, name) in properties.iter().enumerate() {
        let mut count = 0;
        for _ in 0..500 {
            let inst = random_instance(&mut rng, p == 3);
            let w = rng.gen_range(0.1..0.9);
            let support = WeightScheme::from_weights(&[w, 1.0 - w]).unwrap().effective_support().unwrap();
            let d = rng.gen_range(2..=6);
            let space = equiprobable(d);
            let x = random_position(&mut rng, &space, 4.0);
            let y = random_position(&mut rng, &space, 4.0);
            let conv = |z: &Position| value(engine.best(&inst.roster, &support, z).unwrap().value);
            let cx = conv(&x);
            let bad = match p {
                0 => {
                    let up = x.add(&x.map(|_| 0.0).unwrap().with_values((0..d).map(|_| rng.gen_range(0.0..2.0)).collect()).unwrap()).unwrap();
                    conv(&up) > cx + tol
                }
                1 => {
                    let c = rng.gen_range(-5.0..5.0);
                    (conv(&x.shift(c)) - (cx - c)).abs() > tol
                }
                2 => {
                    let l = rng.gen_range(0.0..1.0);
                    conv(&x.combine(l, &y, 1.0 - l).unwrap()) > l * cx + (1.0 - l) * conv(&y) + tol
                }
                3 => {
                    assert!(inst.coherent);
                    let l = rng.gen_range(0.0..5.0);
                    (conv(&x.scale(l)) - l * cx).abs() > tol * l.max(1.0)
                }
                4 => cx < expected_loss_ref(&x) - tol,
                5 => cx > max_loss_ref(&x) + tol,
                6 => {
                    let mut perm: Vec<usize> = (0..d).collect();
                    perm.shuffle(&mut rng);
                    (conv(&x.permute(&perm).unwrap()) - cx).abs() > tol
                }
                _ => (conv(&y) - cx).abs() > x.distance(&y).unwrap() + tol,
            };
            if bad {
                count += 1;
            }
        }
        if count > 0 {
            violations.push(format!("{name}: {count}"));
        }
    }
    ensure(violations.is_empty(), format!("violations: {}", violations.join(", ")))?;
    Ok("0 violations across 8 properties x 500 instances".into())
}

fn arbitrage_taxonomy() -> Check {
    let engine = ConvolutionEngine::default();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let n = rng.gen_range(2..=4);
        let mu = WeightScheme::from_weights(&random_weights(&mut rng, n)).unwrap();
        let space = equiprobable(rng.gen_range(2..=6));
        let x = random_position(&mut rng, &space, 5.0);
        for spec in [
            RiskMeasureSpec::entropic(rng.gen_range(0.2..4.0)),
            RiskMeasureSpec::es(rng.gen_range(0.05..1.0)),
        ] {
            let r = tau(&spec, &mu, &x).map_err(|e| e.to_string())?;
            ensure(r.evidence.classification == Classification::Free, format!("{spec} not free"))?;
            let t = r.tau_value.finite().ok_or("tau not finite")?;
            ensure(t >= -1e-8, format!("tau({spec}) = {t} < 0"))?;
            worst = worst.max(t);
        }
    }
    ensure(worst <= 1e-6, format!("max tau {worst:.3e}"))?;

    // VaR: explicit descent, and the pattern search finds it on its own
    let space = equiprobable(4);
    let x = random_position(&mut rng, &space, 5.0);
    let mu = WeightScheme::uniform(3).unwrap();
    let r = tau(&RiskMeasureSpec::var(0.6), &mu, &x).map_err(|e| e.to_string())?;
    ensure(
        r.evidence.classification == Classification::InfiniteEvidence,
        "VaR not classified as infinite".into(),
    )?;
    ensure(matches!(r.tau_value, TauValue::InfiniteEvidence { .. }), "no infinite evidence".into())?;
    for pair in r.descent_trace.windows(2) {
        let slope = (pair[1].1 - pair[0].1) / (pair[1].0 - pair[0].0);
        ensure((slope + 2.0).abs() <= 1e-9 * 2.0, format!("trace slope {slope}"))?;
    }
    let small = equiprobable(2);
    let z = Position::new(small.clone(), vec![-1.0, 1.0]).unwrap();
    let support = mu.effective_support().unwrap();
    let var_roster = MeasureRoster::homogeneous(RiskMeasureSpec::var(0.6), &support).unwrap();
    let oracle = engine.primal_oracle(&var_roster, &support, &z, 3).map_err(|e| e.to_string())?;
    ensure(
        matches!(oracle.value, ConvValue::DivergentEvidence { .. }),
        format!("oracle did not diverge: {:?}", oracle.value),
    )?;

    // rule-based classes never contradict the probe
    let mut concordant = 0;
    for _ in 0..100 {
        let n = rng.gen_range(1..=5);
        let mu = WeightScheme::from_weights(&random_weights(&mut rng, n)).unwrap();
        let a = rng.gen_range(0.05..0.95);
        let spec = match rng.gen_range(0..7) {
            0 => RiskMeasureSpec::ExpectedLoss,
            1 => RiskMeasureSpec::es(a),
            2 => RiskMeasureSpec::entropic(a * 4.0),
            3 => RiskMeasureSpec::MaximumLoss,
            4 => RiskMeasureSpec::var(a),
            5 => RiskMeasureSpec::Distortion { g: random_concave_distortion(&mut rng) },
            _ => RiskMeasureSpec::SpectralMixture {
                components: vec![
                    SpectralComponent { alpha: a, mass: 0.5 },
                    SpectralComponent { alpha: 1.0, mass: 0.5 },
                ],
            },
        };
        let class = classify(&spec, &mu).map_err(|e| e.to_string())?.classification;
        let probe = i_convexity_probe(&spec, &mu, 100).map_err(|e| e.to_string())?;
        let ok = match class {
            Classification::Free => probe.is_certificate(),
            Classification::InfiniteEvidence => !probe.is_certificate(),
            _ => true,
        };
        if ok {
            concordant += 1;
        }
    }
    ensure(concordant == 100, format!("{concordant}/100 concordant"))?;
    Ok(format!("max tau {worst:.2e}; VaR slope -2; oracle divergent; 100/100 concordant"))
}

fn main() {
    let criteria: [(&str, u64, fn() -> Check); 8] = [
        ("ES closed form vs dual LP", 1, es_family_vs_dual_lp),
        ("dilated entropic values and certificates", 5, dilated_entropic),
        ("penalty additivity", 30, penalty_additivity),
        ("dual-set intersection", 60, dual_intersection),
        ("VaR descent construction", 1, var_descent),
        ("comonotone improvement", 60, comonotone_improvement),
        ("axiom preservation", 120, axiom_preservation),
        ("arbitrage taxonomy", 60, arbitrage_taxonomy),
    ];
    let mut failed = 0;
    for (n, (name, limit, f)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|_| Err("panicked".into()));
        let elapsed = start.elapsed();
        let in_time = elapsed < Duration::from_secs(*limit);
        let (status, detail) = match (&outcome, in_time) {
            (Ok(d), true) => ("PASS", d.clone()),
            (Ok(d), false) => ("FAIL", format!("{d}; too slow")),
            (Err(e), _) => ("FAIL", e.clone()),
        };
        if status == "FAIL" {
            failed += 1;
        }
        println!(
            "{status} [{}] {name}: {detail} ({:.3}s, limit {limit}s)",
            n + 1,
            elapsed.as_secs_f64()
        );
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
