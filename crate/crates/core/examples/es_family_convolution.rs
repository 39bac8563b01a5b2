//! Desks regulated by Expected Shortfall at different levels: the weighted
//! convolution is ES at the loosest level, and the dual LP agrees.

use riskconv::convolution::{ClosedForm, ConvolutionEngine, MeasureRoster};
use riskconv::measures::RiskMeasureSpec;
use riskconv::space::{FiniteProbabilitySpace, Position};
use riskconv::weights::WeightScheme;

fn main() -> riskconv::Result<()> {
    let space = FiniteProbabilitySpace::equiprobable(8)?.into_shared();
    let x = Position::new(space, vec![-6.0, -2.5, -1.0, 0.0, 0.5, 1.5, 3.0, 4.0])?;
    let roster = MeasureRoster::new(vec![
        (1, RiskMeasureSpec::es(0.1)),
        (2, RiskMeasureSpec::es(0.25)),
        (3, RiskMeasureSpec::es(0.5)),
    ])?;
    let mu = WeightScheme::from_weights(&[0.2, 0.5, 0.3])?;
    let support = mu.effective_support()?;
    let engine = ConvolutionEngine::default();

    let closed = match engine.closed_form(&roster, &support, &x)? {
        ClosedForm::Applicable(r) => r,
        ClosedForm::NotApplicable(why) => panic!("expected a closed form: {why}"),
    };
    let lp = engine.dual_lp(&roster, &support, &x)?;
    let c = closed.value.finite().unwrap();
    let l = lp.value.finite().unwrap();
    println!("closed form  {c:.10}");
    println!("dual LP      {l:.10}");
    println!("ES^0.5(x)    {:.10}", RiskMeasureSpec::es(0.5).evaluate(&x)?);
    if let Some(w) = &lp.dual_witness {
        println!("dual vector  {:.4?} (penalty {:.2e})", w.q.weights(), w.penalty);
    }
    assert!((c - l).abs() < 1e-9);
    assert!((c - RiskMeasureSpec::es(0.5).evaluate(&x)?).abs() < 1e-12);

    // Every allocation does at least as badly as the convolution.
    let even = riskconv::convolution::Allocation::proportional(&support, &x, &[1.0, 1.0, 1.0])?;
    let r = even.weighted_risk(&roster)?;
    println!("even split   {r:.10}");
    assert!(r >= c - 1e-12);
    Ok(())
}
