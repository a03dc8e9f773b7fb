//! Command-line front end. One thin binary dispatches to the library:
//!
//! ```text
//! gridmarket simulate         --network net.json --scenario sc.json --out traj.csv [--reference sol.json]
//! gridmarket solve-planner    --network net.json [--scenario sc.json] [--tol 1e-8] --out solution.json
//! gridmarket analyze-stability --network net.json --mechanism price_misaligned_regularized --rho 1 --out report.json
//! gridmarket check-kkt        --network net.json --reference sol.json [--tol 1e-6]
//! gridmarket check-kkt        --network net.json --traj traj.csv --time 150 [--scenario sc.json]
//! gridmarket plot             --traj traj.csv --columns 'omega_*' --out chart.svg [--network net.json]
//! ```
//!
//! Exit codes: 0 success, 1 validation error or failed check, 2 diverged
//! simulation (partial trajectory still written), 3 numerical failure.

use std::path::{Path, PathBuf};

use crate::csv::{write_trajectory, CsvError, TrajectoryTable};
use crate::dynamics::{
    simulate, DynamicsError, Mechanism, MechanismVariant, Scenario, SimulationStatus,
};
use crate::network::{load_network, NetworkError};
use crate::planner::{kkt_residual, solve_planner, PlannerError, PlannerSolution, DEFAULT_TOL};
use crate::stability::{analyze, StabilityError};
use crate::svg::render_chart;

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 1;
pub const EXIT_DIVERGED: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

/// Parsed invocation: subcommand, paths, and numeric overrides.
#[derive(Debug, Default, Clone)]
pub struct RunConfig {
    pub subcommand: String,
    pub network: Option<PathBuf>,
    pub scenarios: Vec<PathBuf>,
    pub out: Option<PathBuf>,
    pub reference: Option<PathBuf>,
    pub traj: Option<PathBuf>,
    pub mechanism: Option<String>,
    pub columns: Option<String>,
    pub tol: Option<f64>,
    pub rho: Option<f64>,
    pub dt: Option<f64>,
    pub horizon: Option<f64>,
    pub time: Option<f64>,
    pub jobs: usize,
}

enum CliError {
    Usage(String),
    Validation(String),
    Numerical(String),
}

impl From<NetworkError> for CliError {
    fn from(e: NetworkError) -> Self {
        match e {
            NetworkError::Numerical(_) => CliError::Numerical(e.to_string()),
            _ => CliError::Validation(e.to_string()),
        }
    }
}

impl From<DynamicsError> for CliError {
    fn from(e: DynamicsError) -> Self {
        match e {
            DynamicsError::NonFiniteState { .. } => CliError::Numerical(e.to_string()),
            _ => CliError::Validation(e.to_string()),
        }
    }
}

impl From<PlannerError> for CliError {
    fn from(e: PlannerError) -> Self {
        match e {
            PlannerError::MaxIterations { .. } => CliError::Numerical(e.to_string()),
            _ => CliError::Validation(e.to_string()),
        }
    }
}

impl From<StabilityError> for CliError {
    fn from(e: StabilityError) -> Self {
        match e {
            StabilityError::ConvergenceFailure(_) => CliError::Numerical(e.to_string()),
            _ => CliError::Validation(e.to_string()),
        }
    }
}

impl From<CsvError> for CliError {
    fn from(e: CsvError) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Validation(format!("io: {e}"))
    }
}

pub fn parse_args(args: &[String]) -> Result<RunConfig, String> {
    let mut cfg = RunConfig {
        jobs: 1,
        ..RunConfig::default()
    };
    let mut it = args.iter();
    cfg.subcommand = it.next().cloned().ok_or_else(usage)?;
    while let Some(flag) = it.next() {
        let mut value =
            || -> Result<&String, String> { it.next().ok_or(format!("flag {flag} needs a value")) };
        let parse_f64 = |v: &str, flag: &str| -> Result<f64, String> {
            v.parse::<f64>().map_err(|e| format!("flag {flag}: {e}"))
        };
        match flag.as_str() {
            "--network" => cfg.network = Some(PathBuf::from(value()?)),
            "--scenario" => cfg.scenarios.push(PathBuf::from(value()?)),
            "--out" => cfg.out = Some(PathBuf::from(value()?)),
            "--reference" => cfg.reference = Some(PathBuf::from(value()?)),
            "--traj" => cfg.traj = Some(PathBuf::from(value()?)),
            "--mechanism" => cfg.mechanism = Some(value()?.clone()),
            "--columns" => cfg.columns = Some(value()?.clone()),
            "--tol" => cfg.tol = Some(parse_f64(value()?, "--tol")?),
            "--rho" => cfg.rho = Some(parse_f64(value()?, "--rho")?),
            "--dt" => cfg.dt = Some(parse_f64(value()?, "--dt")?),
            "--horizon" => cfg.horizon = Some(parse_f64(value()?, "--horizon")?),
            "--time" => cfg.time = Some(parse_f64(value()?, "--time")?),
            "--jobs" => {
                cfg.jobs = value()?
                    .parse::<usize>()
                    .map_err(|e| format!("flag --jobs: {e}"))?
                    .max(1)
            }
            other => return Err(format!("unknown flag {other}\n{}", usage())),
        }
    }
    for (flag, positive) in [
        ("--tol", cfg.tol),
        ("--dt", cfg.dt),
        ("--horizon", cfg.horizon),
    ] {
        if let Some(v) = positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(format!("flag {flag} must be positive, got {v}"));
            }
        }
    }
    Ok(cfg)
}

fn usage() -> String {
    "usage: gridmarket <simulate|solve-planner|analyze-stability|check-kkt|plot> \
     --network PATH [--scenario PATH] [--out PATH] [--reference PATH] [--traj PATH] \
     [--mechanism NAME] [--columns GLOB] [--tol F] [--rho F] [--dt F] [--horizon F] \
     [--time F] [--jobs N]"
        .to_string()
}

fn echo_config(cfg: &RunConfig) {
    eprintln!("# gridmarket config");
    eprintln!("#   subcommand: {}", cfg.subcommand);
    if let Some(p) = &cfg.network {
        eprintln!("#   network: {}", p.display());
    }
    for s in &cfg.scenarios {
        eprintln!("#   scenario: {}", s.display());
    }
    if let Some(p) = &cfg.traj {
        eprintln!("#   traj: {}", p.display());
    }
    if let Some(p) = &cfg.reference {
        eprintln!("#   reference: {}", p.display());
    }
    eprintln!("#   dt: {}", cfg.dt.unwrap_or(crate::dynamics::DEFAULT_DT));
    eprintln!(
        "#   horizon: {}",
        cfg.horizon.unwrap_or(crate::dynamics::DEFAULT_HORIZON)
    );
    eprintln!("#   tol: {:e}", cfg.tol.unwrap_or(DEFAULT_TOL));
    if let Some(rho) = cfg.rho {
        eprintln!("#   rho: {rho}");
    }
    if let Some(p) = &cfg.out {
        eprintln!("#   out: {}", p.display());
    }
}

/// Entry point used by the binary; returns the process exit code.
pub fn run(args: &[String]) -> i32 {
    let cfg = match parse_args(args) {
        Ok(cfg) => cfg,
        Err(msg) => {
            eprintln!("{msg}");
            return EXIT_VALIDATION;
        }
    };
    echo_config(&cfg);
    let result = match cfg.subcommand.as_str() {
        "simulate" => cmd_simulate(&cfg),
        "solve-planner" => cmd_solve_planner(&cfg),
        "analyze-stability" => cmd_analyze_stability(&cfg),
        "check-kkt" => cmd_check_kkt(&cfg),
        "plot" => cmd_plot(&cfg),
        other => Err(CliError::Usage(format!(
            "unknown subcommand {other}\n{}",
            usage()
        ))),
    };
    match result {
        Ok(code) => code,
        Err(CliError::Usage(m)) | Err(CliError::Validation(m)) => {
            eprintln!("{m}");
            EXIT_VALIDATION
        }
        Err(CliError::Numerical(m)) => {
            eprintln!("{m}");
            EXIT_NUMERICAL
        }
    }
}

fn require<'a, T>(opt: &'a Option<T>, what: &str) -> Result<&'a T, CliError> {
    opt.as_ref()
        .ok_or_else(|| CliError::Usage(format!("missing {what}\n{}", usage())))
}

fn load_scenario_with_overrides(
    path: &Path,
    net: &crate::network::NetworkModel,
    cfg: &RunConfig,
) -> Result<Scenario, CliError> {
    let mut scenario = Scenario::load(path, net)?;
    if let Some(dt) = cfg.dt {
        scenario.dt = dt;
    }
    if let Some(horizon) = cfg.horizon {
        scenario.horizon = horizon;
    }
    if let Some(rho) = cfg.rho {
        match &mut scenario.mechanism.variant {
            MechanismVariant::PriceMisalignedRegularized { rho: r } => *r = rho,
            _ => {
                eprintln!(
                    "warning: --rho ignored for {}",
                    scenario.mechanism.variant.name()
                );
            }
        }
    }
    for warning in scenario.validate(net)? {
        eprintln!("warning: {warning}");
    }
    Ok(scenario)
}

fn run_one_simulation(
    net: &crate::network::NetworkModel,
    scenario: &Scenario,
    reference: Option<&PlannerSolution>,
    out: &Path,
) -> Result<i32, CliError> {
    let mats = crate::network::derive_matrices(net)?;
    let traj = simulate(net, &mats, scenario, reference)?;
    let text = write_trajectory(net, &mats, &scenario.mechanism.variant, &traj);
    std::fs::write(out, text)?;
    match traj.status {
        SimulationStatus::Completed => Ok(EXIT_OK),
        SimulationStatus::Diverged { t } => {
            eprintln!("diverged at t={t}; partial trajectory written");
            Ok(EXIT_DIVERGED)
        }
    }
}

fn cmd_simulate(cfg: &RunConfig) -> Result<i32, CliError> {
    let net = load_network(require(&cfg.network, "--network")?)?;
    if cfg.scenarios.is_empty() {
        return Err(CliError::Usage(format!("missing --scenario\n{}", usage())));
    }
    let out = require(&cfg.out, "--out")?;
    let reference = match &cfg.reference {
        Some(path) => Some(PlannerSolution::from_json(&std::fs::read_to_string(path)?)?),
        None => None,
    };

    if cfg.scenarios.len() == 1 {
        let scenario = load_scenario_with_overrides(&cfg.scenarios[0], &net, cfg)?;
        return run_one_simulation(&net, &scenario, reference.as_ref(), out);
    }

    // Several scenario files: `out` is a directory, independent runs may go
    // in parallel.
    std::fs::create_dir_all(out)?;
    let mut scenarios = Vec::new();
    for path in &cfg.scenarios {
        let stem = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "scenario".to_string());
        scenarios.push((
            load_scenario_with_overrides(path, &net, cfg)?,
            out.join(format!("{stem}.csv")),
        ));
    }
    let jobs = cfg.jobs.min(scenarios.len());
    let queue = std::sync::Mutex::new(scenarios.into_iter());
    let codes = std::sync::Mutex::new(Vec::new());
    std::thread::scope(|scope| {
        for _ in 0..jobs {
            scope.spawn(|| loop {
                let item = queue.lock().unwrap().next();
                let Some((scenario, path)) = item else { break };
                let code = match run_one_simulation(&net, &scenario, reference.as_ref(), &path) {
                    Ok(code) => code,
                    Err(CliError::Usage(m)) | Err(CliError::Validation(m)) => {
                        eprintln!("{m}");
                        EXIT_VALIDATION
                    }
                    Err(CliError::Numerical(m)) => {
                        eprintln!("{m}");
                        EXIT_NUMERICAL
                    }
                };
                codes.lock().unwrap().push(code);
            });
        }
    });
    let codes = codes.into_inner().unwrap();
    Ok(codes.into_iter().max().unwrap_or(EXIT_OK))
}

fn cmd_solve_planner(cfg: &RunConfig) -> Result<i32, CliError> {
    let net = load_network(require(&cfg.network, "--network")?)?;
    let net = match cfg.scenarios.first() {
        Some(path) => Scenario::load(path, &net)?.stepped_network(&net),
        None => net,
    };
    let mats = crate::network::derive_matrices(&net)?;
    let tol = cfg.tol.unwrap_or(DEFAULT_TOL);
    let sol = solve_planner(&net, &mats, tol)?;
    let json = sol.to_json();
    match &cfg.out {
        Some(path) => std::fs::write(path, json)?,
        None => println!("{json}"),
    }
    eprintln!(
        "solved: lambda = {:.6}, kkt residual = {:.3e}",
        sol.lambda_star, sol.kkt_residual
    );
    Ok(EXIT_OK)
}

fn parse_mechanism(name: &str, rho: Option<f64>) -> Result<Mechanism, CliError> {
    let variant = match name {
        "quantity" => MechanismVariant::Quantity,
        "price_aligned" => MechanismVariant::PriceAligned,
        "price_misaligned_naive" => MechanismVariant::PriceMisalignedNaive,
        "price_misaligned_regularized" => MechanismVariant::PriceMisalignedRegularized {
            rho: rho.ok_or_else(|| {
                CliError::Usage("price_misaligned_regularized needs --rho".into())
            })?,
        },
        other => {
            return Err(CliError::Usage(format!(
                "unknown mechanism {other}; expected quantity, price_aligned, \
                 price_misaligned_naive or price_misaligned_regularized"
            )))
        }
    };
    Ok(Mechanism::new(variant))
}

fn cmd_analyze_stability(cfg: &RunConfig) -> Result<i32, CliError> {
    let net = load_network(require(&cfg.network, "--network")?)?;
    let mech = parse_mechanism(require(&cfg.mechanism, "--mechanism")?, cfg.rho)?;
    for warning in mech.validate(&net)? {
        eprintln!("warning: {warning}");
    }
    let mats = crate::network::derive_matrices(&net)?;
    let report = analyze(&net, &mats, &mech, cfg.tol.unwrap_or(DEFAULT_TOL))?;
    let json = serde_json::to_string_pretty(&report).expect("report serialization cannot fail");
    match &cfg.out {
        Some(path) => std::fs::write(path, json)?,
        None => println!("{json}"),
    }
    eprintln!("verdict: {:?}", report.verdict);
    Ok(EXIT_OK)
}

fn cmd_check_kkt(cfg: &RunConfig) -> Result<i32, CliError> {
    let net = load_network(require(&cfg.network, "--network")?)?;
    let net = match cfg.scenarios.first() {
        Some(path) => Scenario::load(path, &net)?.stepped_network(&net),
        None => net,
    };
    let mats = crate::network::derive_matrices(&net)?;
    let tol = cfg.tol.unwrap_or(1e-6);

    let point = if let Some(path) = &cfg.reference {
        PlannerSolution::from_json(&std::fs::read_to_string(path)?)?.as_point()
    } else if let Some(path) = &cfg.traj {
        let time = *require(&cfg.time, "--time (with --traj)")?;
        let table = TrajectoryTable::parse(&std::fs::read_to_string(path)?)?;
        let row = table.row_at_time(time)?;
        table.planner_point(&net, row)?
    } else {
        return Err(CliError::Usage(format!(
            "check-kkt needs --reference or --traj/--time\n{}",
            usage()
        )));
    };

    let report = kkt_residual(&net, &mats, &point)?;
    println!("{report}");
    if report.overall() <= tol {
        println!("PASS (tol {tol:e})");
        Ok(EXIT_OK)
    } else {
        println!("FAIL (tol {tol:e})");
        Ok(EXIT_VALIDATION)
    }
}

fn cmd_plot(cfg: &RunConfig) -> Result<i32, CliError> {
    let table = TrajectoryTable::parse(&std::fs::read_to_string(require(&cfg.traj, "--traj")?)?)?;
    let columns = require(&cfg.columns, "--columns")?;
    let net = match &cfg.network {
        Some(path) => Some(load_network(path)?),
        None => None,
    };
    let svg = render_chart(&table, columns, net.as_ref())?;
    std::fs::write(require(&cfg.out, "--out")?, svg)?;
    Ok(EXIT_OK)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_basic_flags() {
        let args: Vec<String> = [
            "simulate",
            "--network",
            "net.json",
            "--scenario",
            "a.json",
            "--scenario",
            "b.json",
            "--out",
            "dir",
            "--dt",
            "0.005",
            "--jobs",
            "4",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
        let cfg = parse_args(&args).unwrap();
        assert_eq!(cfg.subcommand, "simulate");
        assert_eq!(cfg.scenarios.len(), 2);
        assert_eq!(cfg.dt, Some(0.005));
        assert_eq!(cfg.jobs, 4);
    }

    #[test]
    fn rejects_unknown_flag_and_bad_values() {
        let args: Vec<String> = ["plot", "--zap", "1"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        assert!(parse_args(&args).is_err());
        let args: Vec<String> = ["plot", "--dt", "-1"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        assert!(parse_args(&args).is_err());
    }

    #[test]
    fn missing_network_is_validation_exit() {
        let args: Vec<String> = ["solve-planner", "--network", "/nonexistent/net.json"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        assert_eq!(run(&args), EXIT_VALIDATION);
    }
}
