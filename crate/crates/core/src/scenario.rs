//! JSON scenario files: a space, named positions, a measure roster, a
//! weighting scheme and optional named allocations.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::convolution::{Allocation, MeasureRoster};
use crate::error::{Error, Result};
use crate::measures::RiskMeasureSpec;
use crate::space::{FiniteProbabilitySpace, Position};
use crate::weights::{EffectiveSupport, WeightScheme};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RosterEntry {
    pub index: usize,
    pub name: String,
    pub measure: RiskMeasureSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    /// Atom probabilities.
    pub space: Vec<f64>,
    pub positions: BTreeMap<String, Vec<f64>>,
    pub roster: Vec<RosterEntry>,
    pub weights: WeightScheme,
    /// Named allocations: support index to component values.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub allocations: BTreeMap<String, BTreeMap<usize, Vec<f64>>>,
}

/// A parsed and validated scenario.
#[derive(Debug, Clone)]
pub struct Scenario {
    file: ScenarioFile,
    space: Arc<FiniteProbabilitySpace>,
}

impl ScenarioFile {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| {
            Error::Validation(format!(
                "scenario parse error at line {} column {}: {e}",
                e.line(),
                e.column()
            ))
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }
}

impl Scenario {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Validation(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Self::new(ScenarioFile::from_json(text)?)
    }

    pub fn new(file: ScenarioFile) -> Result<Self> {
        let space = FiniteProbabilitySpace::new(file.space.clone())?.into_shared();
        let d = space.atom_count();
        for (name, values) in &file.positions {
            if values.len() != d {
                return Err(Error::Validation(format!(
                    "position {name:?} has {} values but the space has {d} atoms",
                    values.len()
                )));
            }
        }
        let mut names = std::collections::BTreeSet::new();
        for (j, entry) in file.roster.iter().enumerate() {
            entry
                .measure
                .validate()
                .map_err(|e| Error::Validation(format!("roster[{j}] ({}): {e}", entry.name)))?;
            if !names.insert(entry.name.as_str()) {
                return Err(Error::Validation(format!("roster name {:?} used twice", entry.name)));
            }
        }
        file.weights
            .validate()
            .map_err(|e| Error::Validation(format!("weights: {e}")))?;
        for (name, comps) in &file.allocations {
            for (i, v) in comps {
                if v.len() != d {
                    return Err(Error::Validation(format!(
                        "allocation {name:?} component {i} has {} values but the space has {d} atoms",
                        v.len()
                    )));
                }
            }
        }
        let scenario = Self { file, space };
        // index uniqueness is checked here
        scenario.roster()?;
        Ok(scenario)
    }

    pub fn file(&self) -> &ScenarioFile {
        &self.file
    }

    pub fn space(&self) -> &Arc<FiniteProbabilitySpace> {
        &self.space
    }

    pub fn position(&self, name: &str) -> Option<Position> {
        self.file
            .positions
            .get(name)
            .map(|v| Position::new(self.space.clone(), v.clone()).expect("lengths validated"))
    }

    pub fn roster(&self) -> Result<MeasureRoster> {
        MeasureRoster::new(self.file.roster.iter().map(|e| (e.index, e.measure.clone())).collect())
    }

    pub fn support(&self) -> Result<EffectiveSupport> {
        self.file.weights.effective_support()
    }

    /// A roster name, or a measure written as `EL`, `ML`, `VaR^a`, `ES^a`,
    /// `Ent^g` (braces around the parameter allowed).
    pub fn measure(&self, name: &str) -> Option<RiskMeasureSpec> {
        self.file
            .roster
            .iter()
            .find(|e| e.name == name)
            .map(|e| e.measure.clone())
            .or_else(|| parse_measure_name(name))
    }

    /// `None` when no allocation has this name.
    pub fn allocation(&self, name: &str) -> Option<Result<Allocation>> {
        let comps = self.file.allocations.get(name)?;
        Some(self.support().and_then(|support| {
            let components = comps
                .iter()
                .map(|(i, v)| Ok((*i, Position::new(self.space.clone(), v.clone())?)))
                .collect::<Result<Vec<_>>>()?;
            Allocation::new(&support, components)
        }))
    }
}

pub fn parse_measure_name(name: &str) -> Option<RiskMeasureSpec> {
    let name = name.trim();
    match name {
        "EL" => return Some(RiskMeasureSpec::ExpectedLoss),
        "ML" => return Some(RiskMeasureSpec::MaximumLoss),
        _ => {}
    }
    let (kind, param) = name.split_once('^')?;
    let param = param.trim_start_matches('{').trim_end_matches('}');
    let p: f64 = param.parse().ok()?;
    let spec = match kind {
        "VaR" => RiskMeasureSpec::var(p),
        "ES" => RiskMeasureSpec::es(p),
        "Ent" => RiskMeasureSpec::entropic(p),
        _ => return None,
    };
    spec.validate().ok().map(|_| spec)
}

#[cfg(test)]
mod tests {
    use super::*;

    const TEXT: &str = r#"{
        "space": [0.25, 0.25, 0.25, 0.25],
        "positions": {"x": [-1, 0, 1, 2], "flat": [3, 3, 3, 3]},
        "roster": [
            {"index": 1, "name": "tight", "measure": {"type": "expected_shortfall", "alpha": 0.1}},
            {"index": 2, "name": "loose", "measure": {"type": "expected_shortfall", "alpha": 0.3}}
        ],
        "weights": {"entries": [[1, 0.5], [2, 0.5]]},
        "allocations": {"even": {"1": [-1, 0, 1, 2], "2": [-1, 0, 1, 2]}}
    }"#;

    #[test]
    fn parses_and_round_trips() {
        let s = Scenario::from_json(TEXT).unwrap();
        assert_eq!(s.position("x").unwrap().values(), &[-1.0, 0.0, 1.0, 2.0]);
        assert!(s.position("missing").is_none());
        assert_eq!(s.measure("loose"), Some(RiskMeasureSpec::es(0.3)));
        let alloc = s.allocation("even").unwrap().unwrap();
        assert_eq!(alloc.len(), 2);
        let again = ScenarioFile::from_json(&s.file().to_json()).unwrap();
        assert_eq!(&again, s.file());
    }

    #[test]
    fn measure_names() {
        assert_eq!(parse_measure_name("ES^{0.5}"), Some(RiskMeasureSpec::es(0.5)));
        assert_eq!(parse_measure_name("VaR^0.6"), Some(RiskMeasureSpec::var(0.6)));
        assert_eq!(parse_measure_name("Ent^2"), Some(RiskMeasureSpec::entropic(2.0)));
        assert_eq!(parse_measure_name("EL"), Some(RiskMeasureSpec::ExpectedLoss));
        assert_eq!(parse_measure_name("ES^2"), None);
        assert_eq!(parse_measure_name("nope"), None);
    }

    #[test]
    fn diagnostics_carry_location() {
        let err = Scenario::from_json("{\n  \"space\": [1.0],\n  \"positions\": 3\n}").unwrap_err();
        assert!(err.to_string().contains("line 3"), "{err}");
        let bad_len = TEXT.replace("[3, 3, 3, 3]", "[3, 3]");
        assert!(Scenario::from_json(&bad_len).unwrap_err().to_string().contains("flat"));
    }
}
