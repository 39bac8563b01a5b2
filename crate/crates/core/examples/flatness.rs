//! Comonotone allocations between distortion desks: optimal exactly when
//! each desk's quantile is flat wherever its distortion lies strictly above
//! the lower envelope of all distortions.

use riskconv::allocation::{flatness_check, CertificateWitness, Verdict};
use riskconv::convolution::{Allocation, ConvolutionEngine, MeasureRoster};
use riskconv::measures::{DistortionFunction, RiskMeasureSpec};
use riskconv::space::{FiniteProbabilitySpace, Position};
use riskconv::weights::WeightScheme;

fn report(label: &str, v: &Verdict) {
    match v {
        Verdict::Certified(c) => {
            println!("{label}: certified (residual {:.1e})", c.residual);
            if let CertificateWitness::Distortion(rec) = &c.witness {
                println!("  envelope breakpoints {:?}", rec.aggregate.breakpoints());
            }
        }
        Verdict::Rejected { reason, residual, .. } => println!("{label}: rejected, {reason} (residual {residual:.3})"),
    }
}

fn main() -> riskconv::Result<()> {
    let space = FiniteProbabilitySpace::equiprobable(5)?.into_shared();
    let x = Position::new(space, vec![-4.0, -1.0, 0.0, 2.0, 3.0])?;
    let tight = RiskMeasureSpec::es(0.2);
    let loose = RiskMeasureSpec::Distortion {
        g: DistortionFunction::new(vec![0.0, 0.5, 1.0], vec![0.0, 0.8, 1.0])?,
    };
    let roster = MeasureRoster::new(vec![(1, tight), (2, loose)])?;
    let mu = WeightScheme::from_weights(&[0.5, 0.5])?;
    let support = mu.effective_support()?;
    let value = ConvolutionEngine::default().best(&roster, &support, &x)?.value.finite().unwrap();

    // The loose desk lies below the tight one at every level, so the tight
    // desk must be flat: it holds cash and the loose desk takes the rest.
    let zero = x.scale(0.0);
    let flat = Allocation::new(&support, vec![(1, zero), (2, x.scale(2.0))])?;
    let even = Allocation::proportional(&support, &x, &[1.0, 1.0])?;
    let vf = flatness_check(&flat, &roster, &x)?;
    let ve = flatness_check(&even, &roster, &x)?;
    report("tight desk flat", &vf);
    report("even split     ", &ve);
    println!(
        "weighted risk: flat {:.6}, even {:.6}, convolution {value:.6}",
        flat.weighted_risk(&roster)?,
        even.weighted_risk(&roster)?
    );
    assert!(vf.is_certified() && !ve.is_certified());
    assert!((flat.weighted_risk(&roster)? - value).abs() < 1e-9);
    assert!(even.weighted_risk(&roster)? > value + 1e-6);
    Ok(())
}
