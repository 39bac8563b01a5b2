//! Two desks holding crossed positions. Replacing them by nondecreasing
//! functions of the aggregate keeps the sum, makes every desk less risky in
//! second order, and here reaches the convolution value.

use riskconv::allocation::{
    check_pareto_via_optimal, comonotone_improve, improving_allocation, is_comonotone_family,
};
use riskconv::convolution::{Allocation, MeasureRoster};
use riskconv::measures::RiskMeasureSpec;
use riskconv::space::{FiniteProbabilitySpace, Position};
use riskconv::weights::WeightScheme;

fn main() -> riskconv::Result<()> {
    let space = FiniteProbabilitySpace::equiprobable(5)?.into_shared();
    let a = Position::new(space.clone(), vec![3.0, -2.0, 1.0, -1.0, 4.0])?;
    let b = Position::new(space, vec![-3.0, 1.0, 0.0, 2.0, -1.0])?;
    let mu = WeightScheme::from_weights(&[0.5, 0.5])?;
    let support = mu.effective_support()?;
    let crossed = Allocation::new(&support, vec![(1, a), (2, b)])?;
    let x = crossed.aggregate()?;
    println!("aggregate    {:?}", x.values());
    println!("comonotone before: {}", is_comonotone_family(&crossed)?);

    let imp = comonotone_improve(&crossed, &x)?;
    for (i, y) in imp.allocation.components() {
        println!("desk {i} after {:.4?}", y.values());
    }
    println!("rule breakpoints {:?}", imp.rule.breakpoints);
    println!("rule slopes at most {:.4?}, sum defect {:.1e}", imp.rule.lipschitz_bounds, imp.rule.sum_defect());
    println!("{:>5} {:>9} {:>10} {:>10}", "desk", "t", "improved", "original");
    for row in &imp.ssd_table {
        println!("{:>5} {:>9.3} {:>10.4} {:>10.4}", row.index, row.threshold, row.improved, row.original);
    }
    assert!(is_comonotone_family(&imp.allocation)?);
    assert!(imp.allocation.sum_residual(&x)? < 1e-9);
    assert!(imp.worst_ssd_gap() <= 1e-9);
    // The rule reproduces the components and extends to new values of x.
    println!("h^1(10) = {:.4}", imp.rule.apply(0, 10.0));

    // Every convex law-invariant desk measure prefers the improved book.
    let roster = MeasureRoster::new(vec![(1, RiskMeasureSpec::es(0.4)), (2, RiskMeasureSpec::entropic(1.0))])?;
    let before = crossed.weighted_risk(&roster)?;
    let after = imp.allocation.weighted_risk(&roster)?;
    println!("weighted risk {before:.6} -> {after:.6}");
    assert!(after <= before + 1e-9);

    let report = check_pareto_via_optimal(&crossed, &roster, &mu, &x)?;
    println!(
        "crossed book Pareto optimal: {} (gap to the convolution {:.6})",
        report.pareto,
        report.weighted_risk - report.reference.best_bound()
    );
    assert!(!report.pareto);
    if let Some(z) = &report.improving {
        for ((i, c), (_, zc)) in crossed.components().iter().zip(z.components()) {
            let spec = roster.get(*i).unwrap();
            println!("desk {i}: {:.6} -> {:.6}", spec.evaluate(c)?, spec.evaluate(zc)?);
            assert!(spec.evaluate(zc)? < spec.evaluate(c)?);
        }
    }
    // Translating the improved book the same way also helps every desk.
    let z = improving_allocation(&crossed, &imp.allocation, &roster)?;
    assert!(z.sum_residual(&x)? < 1e-9);
    Ok(())
}
