//! Entropic desks with different risk aversions. The convolution is again
//! entropic, with aversion given by the weighted harmonic rule, and the
//! optimal allocation shares the position in proportion to 1/gamma.

use riskconv::allocation::{check_optimal, subgradient_intersection_check};
use riskconv::convolution::{ConvolutionEngine, MeasureRoster};
use riskconv::measures::RiskMeasureSpec;
use riskconv::space::{FiniteProbabilitySpace, Position};
use riskconv::weights::WeightScheme;

fn main() -> riskconv::Result<()> {
    let space = FiniteProbabilitySpace::new(vec![0.15, 0.25, 0.3, 0.2, 0.1])?.into_shared();
    let x = Position::new(space, vec![-2.0, -0.5, 0.2, 1.0, 2.5])?;
    let gammas = [0.5, 2.0, 4.0];
    let w = [0.5, 0.3, 0.2];
    let roster = MeasureRoster::new(
        gammas
            .iter()
            .enumerate()
            .map(|(j, g)| (j + 1, RiskMeasureSpec::entropic(*g)))
            .collect(),
    )?;
    let mu = WeightScheme::from_weights(&w)?;
    let support = mu.effective_support()?;
    let engine = ConvolutionEngine::default();

    let closed = engine.closed_form(&roster, &support, &x)?.applicable().expect("entropic family");
    let value = closed.value.finite().unwrap();
    let star = 1.0 / w.iter().zip(&gammas).map(|(m, g)| m / g).sum::<f64>();
    println!("aggregate aversion {star:.6}");
    println!("closed form        {value:.10}");
    println!("Ent^a*(x)          {:.10}", RiskMeasureSpec::entropic(star).evaluate(&x)?);
    assert!((value - RiskMeasureSpec::entropic(star).evaluate(&x)?).abs() < 1e-12);

    // The penalty program reaches the same value from the dual side.
    let pen = engine.penalty_program(&roster, &support, &x)?;
    println!("penalty program    {:.10}", pen.value.finite().unwrap());
    assert!((pen.value.finite().unwrap() - value).abs() < 1e-7);

    let alloc = closed.allocation.expect("entropic closed form comes with an allocation");
    for (i, c) in alloc.components() {
        println!("desk {i}: {:.4?}", c.values());
    }
    assert!(check_optimal(&alloc, &roster, &mu, &x, value)?.is_certified());
    assert!(subgradient_intersection_check(&alloc, &roster, &x)?.is_certified());

    // Same family written as dilations of one base measure.
    let base = RiskMeasureSpec::entropic(1.0);
    let dilated = MeasureRoster::new(
        gammas
            .iter()
            .enumerate()
            .map(|(j, g)| (j + 1, RiskMeasureSpec::dilated(base.clone(), 1.0 / g)))
            .collect(),
    )?;
    let again = engine.best(&dilated, &support, &x)?;
    println!("dilated roster     {:.10} via {}", again.value.finite().unwrap(), again.method);
    assert!((again.value.finite().unwrap() - value).abs() < 1e-9);
    Ok(())
}
