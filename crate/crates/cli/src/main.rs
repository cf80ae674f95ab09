use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use rejuv::export::{plot_data, write_json, write_plot_files, write_trace_csv};
use rejuv::pipeline::{build_system, run_pipeline_on, CertificateReport, System};
use rejuv::reach::{TuningStep, TuningStrategy};
use rejuv::scenario::{AttackKind, AttackSpec, Scenario};
use rejuv::sim::{monte_carlo_validate_on, simulate_with, SimOptions};
use rejuv::Error;

const EXIT_OK: u8 = 0;
const EXIT_FAILURE: u8 = 1;
const EXIT_INFEASIBLE: u8 = 2;
const EXIT_VIOLATION: u8 = 3;
const EXIT_CONFIG: u8 = 4;

#[derive(Parser)]
#[command(name = "rejuv", version, about = "Safety certification and simulation of periodic controller refresh")]
struct Cli {
    /// Directory for reports, traces and plot data.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,

    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Strategy {
    /// Shrink the inner safe set.
    Epsilon,
    /// Tighten the protected input limits.
    Limits,
}

impl From<Strategy> for TuningStrategy {
    fn from(s: Strategy) -> Self {
        match s {
            Strategy::Epsilon => TuningStrategy::ShrinkEpsilon,
            Strategy::Limits => TuningStrategy::TightenLimits,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize the safety ellipsoid and the refresh timing.
    Certify { scenario: PathBuf },
    /// Certify, then simulate the scenario and write its trace.
    Simulate {
        scenario: PathBuf,
        /// Keep only attacks of this kind (turn-off, take-over, random-box),
        /// or `none` for an attack-free run.
        #[arg(long)]
        attack: Option<String>,
    },
    /// Monte Carlo random-box attacks from random states of the inner set.
    Validate {
        scenario: PathBuf,
        #[arg(long)]
        runs: usize,
        #[arg(long)]
        seed: u64,
    },
    /// Make an infeasible timing feasible.
    Tune {
        scenario: PathBuf,
        #[arg(long, value_enum)]
        strategy: Strategy,
    },
}

/// Outcome of a command that ran to completion.
enum Verdict {
    Ok,
    Infeasible,
    Violation,
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::InfeasibleAtZero { .. } | Error::TuningExhausted { .. } => EXIT_INFEASIBLE,
        Error::Config(_) | Error::Json(_) | Error::Domain { .. } | Error::Dimension { .. } => EXIT_CONFIG,
        _ => EXIT_FAILURE,
    }
}

fn load(path: &Path) -> Result<Scenario, Error> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read scenario {}: {e}", path.display())))?;
    Scenario::from_json(&text)
}

fn certify(scn: &Scenario, tuning: Option<TuningStrategy>, out: &Path) -> Result<(System, CertificateReport), Error> {
    let sys = build_system(scn)?;
    let cert = run_pipeline_on(scn, &sys, tuning)?;
    write_json(&out.join("certificate.json"), &cert)?;
    Ok((sys, cert))
}

fn print_certificate(cert: &CertificateReport) {
    println!("scenario      {}", cert.scenario);
    println!("gamma         {:.6}", cert.gamma);
    println!("epsilon       {}", cert.epsilon);
    println!("T_SC bound    {:.4} s", cert.t_sc_bound);
    println!("T_SR          {} s", cert.t_sr);
    println!("T_UC          {:.2} s", cert.t_uc);
    println!("t_r           {:.2} s", cert.t_r);
    println!("verification  {}", if cert.verification.passed() { "passed" } else { "FAILED" });
    println!("feasible      {}", cert.feasible);
}

fn write_tuning_log(out: &Path, log: &[TuningStep]) -> Result<(), Error> {
    write_json(&out.join("tuning_log.json"), &log)
}

fn select_attacks(scn: &Scenario, name: Option<&str>) -> Result<Vec<AttackSpec>, Error> {
    let Some(name) = name else {
        return Ok(scn.attacks.clone());
    };
    if name == "none" {
        return Ok(Vec::new());
    }
    let kind = AttackKind::parse(name).ok_or_else(|| {
        Error::Config(format!("unknown attack `{name}`; expected turn-off, take-over, random-box or none"))
    })?;
    let chosen: Vec<AttackSpec> = scn.attacks.iter().filter(|a| a.kind == kind).cloned().collect();
    if !chosen.is_empty() {
        return Ok(chosen);
    }
    Ok(vec![AttackSpec { kind, start: 0.0, end: None, target: None, hold_steps: 1 }])
}

fn run(cli: &Cli) -> Result<Verdict, Error> {
    fs::create_dir_all(&cli.out)?;
    let out = cli.out.as_path();
    match &cli.command {
        Command::Certify { scenario } => {
            let scn = load(scenario)?;
            let (sys, cert) = certify(&scn, None, out)?;
            print_certificate(&cert);
            let plots = plot_data(&scn, &sys, &cert, None)?;
            write_json(&out.join("plot_data.json"), &plots)?;
            write_plot_files(out, &plots)?;
            Ok(if cert.feasible { Verdict::Ok } else { Verdict::Infeasible })
        }
        Command::Simulate { scenario, attack } => {
            let scn = load(scenario)?;
            let (sys, cert) = certify(&scn, None, out)?;
            if !cert.feasible {
                print_certificate(&cert);
                return Ok(Verdict::Infeasible);
            }
            let mut opts = SimOptions::from_scenario(&scn, sys.plant.n());
            opts.attacks = select_attacks(&scn, attack.as_deref())?;
            let sim = simulate_with(&scn, &sys, &cert, &opts, &mut |_| {})?;
            let file = BufWriter::new(File::create(out.join("trace.csv"))?);
            write_trace_csv(file, sys.plant.n(), sys.plant.m(), &sim.rows)?;
            write_json(&out.join("summary.json"), &sim.summary)?;
            let plots = plot_data(&scn, &sys, &cert, Some(&sim))?;
            write_json(&out.join("plot_data.json"), &plots)?;
            write_plot_files(out, &plots)?;
            let s = &sim.summary;
            println!("steps         {}", s.steps);
            println!("max V         {:.6}", s.max_v);
            println!("SC visits     {} (longest {:.3} s, bound {:.3} s)", s.sc_activations, s.max_sc_duration, cert.t_sc_bound);
            println!("attacked      {} steps", s.attacked_steps);
            if let Some(t) = s.violation_time {
                println!("SAFETY VIOLATION at t = {t:.4} s");
                return Ok(Verdict::Violation);
            }
            Ok(Verdict::Ok)
        }
        Command::Validate { scenario, runs, seed } => {
            let scn = load(scenario)?;
            let (sys, cert) = certify(&scn, None, out)?;
            if !cert.feasible {
                print_certificate(&cert);
                return Ok(Verdict::Infeasible);
            }
            let report = monte_carlo_validate_on(&scn, &sys, &cert, *runs, *seed)?;
            write_json(&out.join("validation.json"), &report)?;
            println!("runs          {}", report.runs);
            println!("violations    {}", report.violations);
            if let Some(v) = report.max_v {
                println!("max V         {v:.6}");
            }
            if let Some(rate) = report.reach_containment_rate {
                println!("reach tube    {:.4} ({} / {})", rate, report.reach_contained, report.reach_checks);
            }
            Ok(if report.violations > 0 { Verdict::Violation } else { Verdict::Ok })
        }
        Command::Tune { scenario, strategy } => {
            let scn = load(scenario)?;
            match certify(&scn, Some((*strategy).into()), out) {
                Ok((_, cert)) => {
                    write_tuning_log(out, cert.tuning.as_ref().map_or(&[], |t| &t.log))?;
                    print_certificate(&cert);
                    Ok(if cert.feasible { Verdict::Ok } else { Verdict::Infeasible })
                }
                Err(Error::TuningExhausted { log }) => {
                    write_tuning_log(out, &log)?;
                    eprintln!("tuning exhausted after {} steps", log.len());
                    Ok(Verdict::Infeasible)
                }
                Err(e) => Err(e),
            }
        }
    }
}

fn outcome_code(outcome: &Result<Verdict, Error>) -> u8 {
    match outcome {
        Ok(Verdict::Ok) => EXIT_OK,
        Ok(Verdict::Infeasible) => EXIT_INFEASIBLE,
        Ok(Verdict::Violation) => EXIT_VIOLATION,
        Err(e) => exit_code(e),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let outcome = run(&cli);
    match &outcome {
        Ok(Verdict::Infeasible) => eprintln!("infeasible: T_UC does not exceed T_SR"),
        Err(e) => eprintln!("error: {e}"),
        _ => {}
    }
    ExitCode::from(outcome_code(&outcome))
}
