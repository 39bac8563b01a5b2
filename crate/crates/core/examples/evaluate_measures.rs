//! Evaluate the basic measures on a five-atom profit-and-loss vector.

use riskconv::measures::{DistortionFunction, RiskMeasureSpec};
use riskconv::space::{FiniteProbabilitySpace, Position};

fn main() -> riskconv::Result<()> {
    let space = FiniteProbabilitySpace::new(vec![0.1, 0.2, 0.3, 0.2, 0.2])?.into_shared();
    let x = Position::new(space, vec![-4.0, -1.0, 0.5, 2.0, 3.0])?;

    let g = DistortionFunction::new(vec![0.0, 0.3, 1.0], vec![0.0, 0.6, 1.0])?;
    let roster = [
        RiskMeasureSpec::ExpectedLoss,
        RiskMeasureSpec::var(0.25),
        RiskMeasureSpec::es(0.25),
        RiskMeasureSpec::entropic(1.5),
        RiskMeasureSpec::MaximumLoss,
        RiskMeasureSpec::Distortion { g },
    ];
    println!("{:<12} {:>10}  {:<8} dual", "measure", "value", "accepts");
    for spec in &roster {
        let v = spec.evaluate(&x)?;
        let dual = spec
            .supporting_dual(&x)
            .map(|q| format!("{:.3?}", q.weights()))
            .unwrap_or_else(|e| format!("({e})"));
        println!("{:<12} {:>10.5}  {:<8} {dual}", spec.to_string(), v, spec.acceptance_check(&x)?);
    }

    // ES at 0.25 averages the worst quarter: 0.1 at -4 and 0.15 at -1.
    let es = RiskMeasureSpec::es(0.25).evaluate(&x)?;
    assert!((es - (0.4 + 0.15) / 0.25).abs() < 1e-12);
    // Adding cash lowers every measure by the same amount.
    for spec in &roster {
        let shifted = spec.evaluate(&x.shift(1.0))?;
        assert!((shifted - (spec.evaluate(&x)? - 1.0)).abs() < 1e-9);
    }
    Ok(())
}
