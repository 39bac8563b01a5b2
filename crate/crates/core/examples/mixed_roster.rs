//! A roster without a closed form: an ES desk and an entropic desk.
//! Compares the penalty program with the primal oracle, tests acceptability
//! of the aggregate, and adds a desk held to expected loss.

use riskconv::convolution::{ClosedForm, ConvolutionEngine, MeasureRoster};
use riskconv::measures::RiskMeasureSpec;
use riskconv::space::{FiniteProbabilitySpace, Position};
use riskconv::weights::WeightScheme;

fn main() -> riskconv::Result<()> {
    let space = FiniteProbabilitySpace::equiprobable(6)?.into_shared();
    let x = Position::new(space, vec![-3.0, -1.5, -0.2, 0.4, 1.8, 2.6])?;
    let roster = MeasureRoster::new(vec![
        (1, RiskMeasureSpec::es(0.3)),
        (2, RiskMeasureSpec::entropic(1.2)),
    ])?;
    let mu = WeightScheme::from_weights(&[0.5, 0.5])?;
    let support = mu.effective_support()?;
    let engine = ConvolutionEngine::default();

    if let ClosedForm::NotApplicable(why) = engine.closed_form(&roster, &support, &x)? {
        println!("no closed form: {why}");
    }
    let pen = engine.penalty_program(&roster, &support, &x)?;
    let oracle = engine.primal_oracle(&roster, &support, &x, 2)?;
    let p = pen.value.finite().unwrap();
    let o = oracle.value.finite().unwrap();
    println!("penalty program {p:.8}");
    for n in &pen.notes {
        println!("  note: {n}");
    }
    println!("primal oracle   {o:.8}");
    for (n, v) in oracle.finite_n_trace.as_deref().unwrap_or_default() {
        println!("  first {n} desks: {v:.8}");
    }
    assert!((p - o).abs() < 1e-5);

    // Below the equal split, above the expected loss.
    let split = 0.5 * RiskMeasureSpec::es(0.3).evaluate(&x)? + 0.5 * RiskMeasureSpec::entropic(1.2).evaluate(&x)?;
    assert!(p <= split);
    assert!(p >= -x.expectation() - 1e-9);

    // Shift the book until the group accepts it.
    for cash in [p - 0.5, p, p + 0.5] {
        let m = engine.acceptance_set_membership(&roster, &support, &x.shift(cash))?;
        println!(
            "cash {cash:.4}: accepted {} (value {:.6}, witness {})",
            m.accepted,
            m.value.best_bound(),
            m.witness.is_some()
        );
    }
    assert!(!engine.acceptance_set_membership(&roster, &support, &x.shift(p - 0.5))?.accepted);
    let m = engine.acceptance_set_membership(&roster, &support, &x.shift(p + 0.5))?;
    assert!(m.accepted && m.witness.is_some());

    // An expected-loss desk pins the dual vector to the base probability.
    let with_el = MeasureRoster::new(vec![
        (1, RiskMeasureSpec::es(0.3)),
        (2, RiskMeasureSpec::entropic(1.2)),
        (3, RiskMeasureSpec::ExpectedLoss),
    ])?;
    let mu3 = WeightScheme::from_weights(&[0.4, 0.4, 0.2])?.effective_support()?;
    let v = engine.penalty_program(&with_el, &mu3, &x)?.value.finite().unwrap();
    println!("with EL desk    {v:.8} (-E[x] = {:.8})", -x.expectation());
    assert!((v + x.expectation()).abs() < 1e-9);
    Ok(())
}
