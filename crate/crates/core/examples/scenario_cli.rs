//! Load a scenario file and drive the command line from code.

use std::path::Path;

use riskconv::cli;
use riskconv::scenario::Scenario;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("examples/scenarios");
    let path = dir.join("four_atoms.json");
    let scenario = Scenario::load(&path)?;
    let x = scenario.position("x").expect("scenario has x");
    for entry in &scenario.file().roster {
        println!("{} ({}): {:.6}", entry.name, entry.measure, entry.measure.evaluate(&x)?);
    }
    let even = scenario.allocation("even").expect("named allocation")?;
    println!("even allocation weighted risk {:.6}", even.weighted_risk(&scenario.roster()?)?);

    let p = path.to_str().unwrap();
    let out = cli::run(["riskconv", "convolve", "--scenario", p, "--position", "x", "--json"])?;
    println!("{out}");
    let report: serde_json::Value = serde_json::from_str(&out)?;
    assert_eq!(report["value"], serde_json::json!(2.0));

    let out = cli::run(["riskconv", "evaluate", "--scenario", p, "--position", "x", "--measure", "ML"])?;
    print!("{out}");

    let err = cli::run(["riskconv", "evaluate", "--scenario", p, "--position", "missing"]).unwrap_err();
    println!("missing position -> exit {}: {}", err.code, err.message);
    assert_eq!(err.code, cli::EXIT_NAME);
    Ok(())
}
