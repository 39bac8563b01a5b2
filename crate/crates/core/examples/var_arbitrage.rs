//! Splitting a book across entities that all report VaR: the total capital
//! can be driven down without bound, while convex measures leave nothing
//! to gain.

use riskconv::arbitrage::{classify, tau_with_grid, var_descent_construction, var_partition_threshold, TauValue};
use riskconv::measures::RiskMeasureSpec;
use riskconv::space::{FiniteProbabilitySpace, Position};
use riskconv::weights::WeightScheme;

fn main() -> riskconv::Result<()> {
    let space = FiniteProbabilitySpace::equiprobable(4)?.into_shared();
    let x = Position::new(space, vec![-2.0, 1.0, 0.5, 3.0])?;
    let alpha = 0.6;
    let mu = WeightScheme::uniform(3)?;
    let k = var_partition_threshold(alpha)?;
    println!("VaR^{alpha}: partitions of size k = {k} need {} entities", k + 1);

    let var = RiskMeasureSpec::var(alpha);
    let rho = var.evaluate(&x)?;
    for m in [0.0, 1.0, 10.0, 100.0] {
        let (alloc, objective) = var_descent_construction(alpha, &mu, &x, m)?;
        println!("m = {m:>5}: weighted VaR {objective:>9.3}, sum residual {:.1e}", alloc.sum_residual(&x)?);
        assert!((objective - (rho - 2.0 * m)).abs() < 1e-9 * m.max(1.0));
    }

    let report = tau_with_grid(&var, &mu, &x, &[1.0, 1e3, 1e6])?;
    println!("{}: {}", report.evidence.classification, report.evidence.reason);
    match report.tau_value {
        TauValue::InfiniteEvidence { certified_gap } => println!("tau unbounded, certified gap {certified_gap:.3e}"),
        TauValue::Finite(t) => panic!("expected unbounded descent, got {t}"),
    }

    // Two entities are not enough at this level.
    let two = WeightScheme::uniform(2)?;
    assert!(var_descent_construction(alpha, &two, &x, 1.0).is_err());
    println!("two entities: {}", classify(&var, &two)?.classification);

    for spec in [RiskMeasureSpec::es(0.3), RiskMeasureSpec::entropic(2.0), RiskMeasureSpec::MaximumLoss] {
        let r = tau_with_grid(&spec, &mu, &x, &[1.0])?;
        println!("{spec}: {} with tau = {:.2e}", r.evidence.classification, r.tau_value.finite().unwrap());
        assert!(r.tau_value.finite().unwrap().abs() < 1e-9);
    }
    Ok(())
}
