//! The `riskconv` command line: scenario ingestion, command dispatch and
//! report emission.
//!
//! Exit codes: 0 success, 1 internal or input error, 2 unresolved name,
//! 3 method precondition, 4 allocation precondition, 5 arbitrage precondition.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Map, Value};

use crate::allocation::{
    check_optimal, comonotone_improve, flatness_check, is_comonotone_family, subgradient_intersection_check,
    Verdict,
};
use crate::arbitrage::{tau_with_grid, ProbeOutcome, TauValue, DEFAULT_M_GRID};
use crate::convolution::{
    Allocation, ClosedForm, ConvValue, ConvolutionEngine, ConvolutionResult, Method, SolverConfig,
};
use crate::error::Error;
use crate::measures::{RiskMeasureSpec, CORE_ATOM_CAP};
use crate::scenario::Scenario;
use crate::space::Position;

pub const EXIT_INTERNAL: i32 = 1;
pub const EXIT_NAME: i32 = 2;
pub const EXIT_METHOD: i32 = 3;
pub const EXIT_ALLOCATION: i32 = 4;
pub const EXIT_ARBITRAGE: i32 = 5;

#[derive(Debug, Parser)]
#[command(name = "riskconv", version, about = "Weighted inf-convolutions of risk measures")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Evaluate roster measures on a position.
    Evaluate(Common),
    /// Compute the weighted inf-convolution of the roster.
    Convolve {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value_t = MethodArg::Auto)]
        method: MethodArg,
        /// Largest number of active terms for the primal oracle.
        #[arg(long)]
        n_max: Option<usize>,
        #[arg(long)]
        trace_csv: Option<PathBuf>,
    },
    /// Report an optimal allocation with improvement and certificates.
    Allocate {
        #[command(flatten)]
        common: Common,
        /// Named allocation from the scenario instead of the computed one.
        #[arg(long)]
        allocation: Option<String>,
        #[arg(long)]
        improve: bool,
        #[arg(long)]
        certify: bool,
    },
    /// Regulatory arbitrage of one measure used at every index.
    Arbitrage {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',')]
        m_grid: Option<Vec<f64>>,
        #[arg(long)]
        trace_csv: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
struct Common {
    #[arg(long)]
    scenario: PathBuf,
    #[arg(long)]
    position: String,
    /// Roster name or a measure such as `ES^0.5`.
    #[arg(long)]
    measure: Option<String>,
    #[arg(long)]
    json: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum MethodArg {
    Auto,
    Closed,
    Dual,
    Penalty,
    Oracle,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    fn new(code: i32, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

type CliResult<T> = std::result::Result<T, CliError>;

/// Precondition-type library errors map to `code`, everything else is internal.
fn lib_error(code: i32) -> impl Fn(Error) -> CliError {
    move |e| {
        let c = match e {
            Error::Precondition(_)
            | Error::Unsupported { .. }
            | Error::Size(_)
            | Error::Domain(_)
            | Error::Structural(_) => code,
            _ => EXIT_INTERNAL,
        };
        CliError::new(c, e.to_string())
    }
}

fn internal(e: Error) -> CliError {
    CliError::new(EXIT_INTERNAL, e.to_string())
}

/// Runs one command; the returned string is the report for stdout.
pub fn run<I, T>(args: I) -> CliResult<String>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => Ok(e.to_string()),
                _ => Err(CliError::new(EXIT_INTERNAL, e.to_string())),
            };
        }
    };
    let engine = ConvolutionEngine::new(SolverConfig::from_env());
    match cli.command {
        Command::Evaluate(common) => {
            let ctx = Context::open(&common)?;
            render(&cmd_evaluate(&ctx, common.measure.as_deref())?, common.json, None)
        }
        Command::Convolve {
            common,
            method,
            n_max,
            trace_csv,
        } => {
            let ctx = Context::open(&common)?;
            let (report, trace) = cmd_convolve(&ctx, &engine, method, n_max)?;
            if let Some(path) = trace_csv {
                write_trace_csv(&path, ("n", "value"), &trace)?;
            }
            render(&report, common.json, None)
        }
        Command::Allocate {
            common,
            allocation,
            improve,
            certify,
        } => {
            let ctx = Context::open(&common)?;
            render(
                &cmd_allocate(&ctx, &engine, allocation.as_deref(), improve, certify)?,
                common.json,
                None,
            )
        }
        Command::Arbitrage {
            common,
            m_grid,
            trace_csv,
        } => {
            let ctx = Context::open(&common)?;
            let grid = m_grid.unwrap_or_else(|| DEFAULT_M_GRID.to_vec());
            let name = common
                .measure
                .as_deref()
                .ok_or_else(|| CliError::new(EXIT_NAME, "arbitrage needs --measure"))?;
            let (report, trace) = cmd_arbitrage(&ctx, name, &grid)?;
            if let Some(path) = trace_csv {
                write_trace_csv(&path, ("m", "objective"), &trace)?;
            }
            render(&report, common.json, Some(("m", "objective", &trace)))
        }
    }
}

/// Entry point of the binary.
pub fn main() {
    match run(std::env::args_os()) {
        Ok(out) => print!("{out}"),
        Err(e) => {
            eprintln!("riskconv: {}", e.message);
            std::process::exit(e.code);
        }
    }
}

struct Context {
    scenario: Scenario,
    position_name: String,
    x: Position,
}

impl Context {
    fn open(common: &Common) -> CliResult<Self> {
        let scenario = Scenario::load(&common.scenario).map_err(internal)?;
        let x = scenario
            .position(&common.position)
            .ok_or_else(|| CliError::new(EXIT_NAME, format!("unknown position {:?}", common.position)))?;
        Ok(Self {
            scenario,
            position_name: common.position.clone(),
            x,
        })
    }

    fn measure(&self, name: &str) -> CliResult<RiskMeasureSpec> {
        self.scenario
            .measure(name)
            .ok_or_else(|| CliError::new(EXIT_NAME, format!("unknown measure {name:?}")))
    }
}

/// Rounds to 12 significant digits; non-finite values become strings.
pub fn num(v: f64) -> Value {
    if !v.is_finite() {
        return Value::String(
            if v.is_nan() {
                "nan"
            } else if v > 0.0 {
                "inf"
            } else {
                "-inf"
            }
            .into(),
        );
    }
    let rounded: f64 = format!("{v:.11e}").parse().expect("formatted float parses");
    // avoid "-0.0" in golden output
    let rounded = if rounded == 0.0 { 0.0 } else { rounded };
    serde_json::Number::from_f64(rounded).map(Value::Number).unwrap_or(Value::Null)
}

fn nums(vs: &[f64]) -> Value {
    Value::Array(vs.iter().map(|v| num(*v)).collect())
}

fn allocation_json(a: &Allocation) -> Value {
    Value::Array(
        a.weights()
            .iter()
            .zip(a.components())
            .map(|((i, w), (_, c))| json!({"index": i, "weight": num(*w), "values": nums(c.values())}))
            .collect(),
    )
}

fn conv_value_json(v: &ConvValue) -> Value {
    match v {
        ConvValue::Finite(x) => num(*x),
        ConvValue::DivergentEvidence { best_found } => json!({"divergent_evidence": {"best_found": num(*best_found)}}),
    }
}

fn result_json(r: &ConvolutionResult) -> Value {
    let mut m = Map::new();
    m.insert("method".into(), json!(r.method.to_string()));
    m.insert("value".into(), conv_value_json(&r.value));
    if let Some(a) = &r.allocation {
        m.insert("allocation".into(), allocation_json(a));
    }
    if let Some(w) = &r.dual_witness {
        m.insert("dual_witness".into(), json!({"q": nums(w.q.weights()), "penalty": num(w.penalty)}));
    }
    if let Some(t) = &r.finite_n_trace {
        m.insert(
            "finite_n_trace".into(),
            Value::Array(t.iter().map(|(n, v)| json!([n, num(*v)])).collect()),
        );
    }
    m.insert("notes".into(), json!(r.notes));
    Value::Object(m)
}

fn verdict_json(v: &Verdict) -> Value {
    match v {
        Verdict::Certified(c) => json!({
            "certified": true,
            "kind": c.kind.to_string(),
            "residual": num(c.residual),
        }),
        Verdict::Rejected { kind, reason, residual } => json!({
            "certified": false,
            "kind": kind.to_string(),
            "reason": reason,
            "residual": num(*residual),
        }),
    }
}

fn cmd_evaluate(ctx: &Context, measure: Option<&str>) -> CliResult<Value> {
    let specs: Vec<(String, RiskMeasureSpec)> = match measure {
        Some(name) => vec![(name.to_string(), ctx.measure(name)?)],
        None => ctx
            .scenario
            .file()
            .roster
            .iter()
            .map(|e| (e.name.clone(), e.measure.clone()))
            .collect(),
    };
    let mut rows = Vec::with_capacity(specs.len());
    for (name, spec) in specs {
        let value = spec.evaluate(&ctx.x).map_err(internal)?;
        let mut row = Map::new();
        row.insert("name".into(), json!(name));
        row.insert("measure".into(), json!(spec.to_string()));
        row.insert("value".into(), num(value));
        row.insert("accepted".into(), json!(value <= 0.0));
        if spec.is_convex() {
            let q = spec.supporting_dual(&ctx.x).map_err(internal)?;
            row.insert("dual_witness".into(), nums(q.weights()));
        }
        rows.push(Value::Object(row));
    }
    Ok(json!({"position": ctx.position_name, "measures": rows}))
}

fn cmd_convolve(
    ctx: &Context,
    engine: &ConvolutionEngine,
    method: MethodArg,
    n_max: Option<usize>,
) -> CliResult<(Value, Vec<(f64, f64)>)> {
    let roster = ctx.scenario.roster().map_err(internal)?;
    let support = ctx.scenario.support().map_err(internal)?;
    let x = &ctx.x;
    let err = lib_error(EXIT_METHOD);
    let n_max = n_max.unwrap_or(support.len());
    let mut cross_check = None;
    let result = match method {
        MethodArg::Closed => match engine.closed_form(&roster, &support, x).map_err(&err)? {
            ClosedForm::Applicable(r) => r,
            ClosedForm::NotApplicable(reason) => {
                return Err(CliError::new(EXIT_METHOD, format!("closed form not applicable: {reason}")))
            }
        },
        MethodArg::Dual => engine.dual_lp(&roster, &support, x).map_err(&err)?,
        MethodArg::Penalty => engine.penalty_program(&roster, &support, x).map_err(&err)?,
        MethodArg::Oracle => engine.primal_oracle(&roster, &support, x, n_max).map_err(&err)?,
        MethodArg::Auto => {
            let r = engine.best(&roster, &support, x).map_err(&err)?;
            if r.method == Method::ClosedForm {
                let coherent = roster
                    .terms(&support)
                    .map_err(internal)?
                    .iter()
                    .all(|t| t.spec.is_coherent());
                let check = if coherent && x.len() <= CORE_ATOM_CAP {
                    engine.dual_lp(&roster, &support, x)
                } else {
                    engine
                        .penalty_program(&roster, &support, x)
                        .or_else(|_| engine.primal_oracle(&roster, &support, x, n_max))
                };
                cross_check = Some(match check {
                    Ok(c) => {
                        let residual = match (r.value, c.value) {
                            (ConvValue::Finite(a), ConvValue::Finite(b)) => num((a - b).abs()),
                            _ => Value::Null,
                        };
                        json!({"method": c.method.to_string(), "value": conv_value_json(&c.value), "residual": residual})
                    }
                    Err(e) => json!({"error": e.to_string()}),
                });
            }
            r
        }
    };
    let trace: Vec<(f64, f64)> = result
        .finite_n_trace
        .as_ref()
        .map(|t| t.iter().map(|(n, v)| (*n as f64, *v)).collect())
        .unwrap_or_default();
    let mut report = result_json(&result);
    if let (Value::Object(m), Some(c)) = (&mut report, cross_check) {
        m.insert("cross_check".into(), c);
    }
    if let Value::Object(m) = &mut report {
        m.insert("position".into(), json!(ctx.position_name));
    }
    Ok((report, trace))
}

fn cmd_allocate(
    ctx: &Context,
    engine: &ConvolutionEngine,
    name: Option<&str>,
    improve: bool,
    certify: bool,
) -> CliResult<Value> {
    let roster = ctx.scenario.roster().map_err(internal)?;
    let support = ctx.scenario.support().map_err(internal)?;
    let x = &ctx.x;
    let err = lib_error(EXIT_ALLOCATION);
    let best = engine.best(&roster, &support, x).map_err(&err)?;
    let alloc = match name {
        Some(n) => ctx
            .scenario
            .allocation(n)
            .ok_or_else(|| CliError::new(EXIT_NAME, format!("unknown allocation {n:?}")))?
            .map_err(&err)?,
        None => match &best.allocation {
            Some(a) => a.clone(),
            None => {
                let r = engine
                    .primal_oracle(&roster, &support, x, support.len())
                    .map_err(&err)?;
                if r.value.finite().is_none() {
                    return Err(CliError::new(
                        EXIT_ALLOCATION,
                        "no optimal allocation: the convolution diverges",
                    ));
                }
                r.allocation.expect("oracle returns an allocation")
            }
        },
    };
    let mut report = Map::new();
    report.insert("position".into(), json!(ctx.position_name));
    report.insert("allocation".into(), allocation_json(&alloc));
    report.insert("convolution".into(), conv_value_json(&best.value));
    report.insert("weighted_risk".into(), num(alloc.weighted_risk(&roster).map_err(&err)?));
    report.insert("comonotone".into(), json!(is_comonotone_family(&alloc).map_err(&err)?));
    if improve {
        let imp = comonotone_improve(&alloc, x).map_err(&err)?;
        let table: Vec<Value> = imp
            .ssd_table
            .iter()
            .map(|r| {
                json!({
                    "index": r.index,
                    "threshold": num(r.threshold),
                    "improved": num(r.improved),
                    "original": num(r.original),
                })
            })
            .collect();
        report.insert(
            "improvement".into(),
            json!({
                "allocation": allocation_json(&imp.allocation),
                "comonotone": is_comonotone_family(&imp.allocation).map_err(&err)?,
                "weighted_risk": num(imp.allocation.weighted_risk(&roster).map_err(&err)?),
                "rule": {
                    "breakpoints": nums(&imp.rule.breakpoints),
                    "values": imp.rule.values.iter().map(|v| nums(v)).collect::<Vec<_>>(),
                    "lipschitz_bounds": nums(&imp.rule.lipschitz_bounds),
                },
                "ssd_table": table,
                "worst_ssd_gap": num(imp.worst_ssd_gap()),
            }),
        );
    }
    if certify {
        let mut certs = Map::new();
        let reference = best.value.finite().ok_or_else(|| {
            CliError::new(EXIT_ALLOCATION, "no reference value: the convolution diverges")
        })?;
        let mu = &ctx.scenario.file().weights;
        let v = check_optimal(&alloc, &roster, mu, x, reference).map_err(&err)?;
        certs.insert("value_match".into(), verdict_json(&v));
        let optional = |r: crate::Result<Verdict>| -> CliResult<Value> {
            match r {
                Ok(v) => Ok(verdict_json(&v)),
                Err(e @ (Error::Unsupported { .. } | Error::Precondition(_) | Error::Size(_))) => {
                    Ok(json!({"not_applicable": e.to_string()}))
                }
                Err(e) => Err(err(e)),
            }
        };
        certs.insert(
            "subgradient_intersection".into(),
            optional(subgradient_intersection_check(&alloc, &roster, x))?,
        );
        certs.insert("flatness".into(), optional(flatness_check(&alloc, &roster, x))?);
        report.insert("certificates".into(), Value::Object(certs));
    }
    Ok(Value::Object(report))
}

fn cmd_arbitrage(ctx: &Context, name: &str, grid: &[f64]) -> CliResult<(Value, Vec<(f64, f64)>)> {
    let spec = ctx.measure(name)?;
    let mu = &ctx.scenario.file().weights;
    let r = tau_with_grid(&spec, mu, &ctx.x, grid).map_err(lib_error(EXIT_ARBITRAGE))?;
    let tau = match r.tau_value {
        TauValue::Finite(t) => num(t),
        TauValue::InfiniteEvidence { certified_gap } => {
            json!({"infinite_evidence": {"certified_gap": num(certified_gap)}})
        }
    };
    let mut report = Map::new();
    report.insert("position".into(), json!(ctx.position_name));
    report.insert("measure".into(), json!(spec.to_string()));
    report.insert("rho".into(), num(r.rho));
    report.insert("tau".into(), tau);
    report.insert("classification".into(), json!(r.evidence.classification.to_string()));
    report.insert("reason".into(), json!(r.evidence.reason));
    if let Some(k) = r.evidence.k_threshold {
        report.insert("k_threshold".into(), json!(k));
    }
    if let Some(p) = &r.evidence.probe {
        let probe = match p {
            ProbeOutcome::Certificate { samples, max_excess } => {
                json!({"certificate": {"samples": samples, "max_excess": num(*max_excess)}})
            }
            ProbeOutcome::Counterexample { lhs, rhs, .. } => {
                json!({"counterexample": {"lhs": num(*lhs), "rhs": num(*rhs)}})
            }
        };
        report.insert("probe".into(), probe);
    }
    if let Some((lo, hi)) = r.bounds {
        report.insert("bounds".into(), json!([num(lo), num(hi)]));
    }
    if let Some(m) = r.method {
        report.insert("method".into(), json!(m.to_string()));
    }
    report.insert(
        "descent_trace".into(),
        Value::Array(r.descent_trace.iter().map(|(m, v)| json!([num(*m), num(*v)])).collect()),
    );
    report.insert("notes".into(), json!(r.notes));
    Ok((Value::Object(report), r.descent_trace))
}

fn write_trace_csv(path: &Path, header: (&str, &str), trace: &[(f64, f64)]) -> CliResult<()> {
    let io = |e: csv::Error| CliError::new(EXIT_INTERNAL, format!("cannot write {}: {e}", path.display()));
    let mut w = csv::Writer::from_path(path).map_err(io)?;
    w.write_record([header.0, header.1]).map_err(io)?;
    for (a, b) in trace {
        w.write_record([num(*a).to_string(), num(*b).to_string()]).map_err(io)?;
    }
    w.flush()
        .map_err(|e| CliError::new(EXIT_INTERNAL, format!("cannot write {}: {e}", path.display())))
}

fn render(report: &Value, as_json: bool, table: Option<(&str, &str, &[(f64, f64)])>) -> CliResult<String> {
    if as_json {
        let mut s = serde_json::to_string_pretty(report).expect("report serializes");
        s.push('\n');
        return Ok(s);
    }
    let mut out = String::new();
    human(report, 0, &mut out);
    if let Some((a, b, rows)) = table {
        if !rows.is_empty() {
            out.push_str(&format!("\n{a:>14}  {b:>20}\n"));
            for (x, y) in rows {
                out.push_str(&format!("{:>14}  {:>20}\n", scalar(&num(*x)), scalar(&num(*y))));
            }
        }
    }
    Ok(out)
}

fn is_scalar(v: &Value) -> bool {
    !matches!(v, Value::Object(_) | Value::Array(_))
}

fn scalar(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

fn human(v: &Value, indent: usize, out: &mut String) {
    let pad = "  ".repeat(indent);
    match v {
        Value::Object(m) => {
            for (k, val) in m {
                match val {
                    Value::Array(items) if items.iter().all(is_scalar) => out.push_str(&format!(
                        "{pad}{k}: [{}]\n",
                        items.iter().map(scalar).collect::<Vec<_>>().join(", ")
                    )),
                    v if is_scalar(v) => out.push_str(&format!("{pad}{k}: {}\n", scalar(v))),
                    nested => {
                        out.push_str(&format!("{pad}{k}:\n"));
                        human(nested, indent + 1, out);
                    }
                }
            }
        }
        Value::Array(items) => {
            for item in items {
                if is_scalar(item) {
                    out.push_str(&format!("{pad}- {}\n", scalar(item)));
                } else if let Value::Array(inner) = item {
                    out.push_str(&format!(
                        "{pad}- [{}]\n",
                        inner.iter().map(scalar).collect::<Vec<_>>().join(", ")
                    ));
                } else {
                    out.push_str(&format!("{pad}-\n"));
                    human(item, indent + 1, out);
                }
            }
        }
        other => out.push_str(&format!("{pad}{}\n", scalar(other))),
    }
}
