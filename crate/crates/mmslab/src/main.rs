use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use mmslab::experiments::{brenier, heat, hopflax, ot};
use mmslab::io::{read_field, read_form, read_measure, read_space, read_space_spec, write_json};
use mmslab::{load_scenario, HarnessError, Report, Result, Scenario};
use mmslab_core::entropyflow::{
    entropy_report, jko_flow, oracle_candidates, slope_oracle, JkoOptions, OracleCandidates,
};
use mmslab_core::heatflow::{flow_diagnostics, heat_flow, ConvexEntropy};
use mmslab_core::hopflax::{hj_subsolution_report, hopf_lax};
use mmslab_core::space::{build_space, validate_space};
use mmslab_core::transport::{solve_w2, TransportModel};
use rayon::prelude::*;
use serde_json::json;

#[derive(Parser)]
#[command(
    name = "mmslab",
    version,
    about = "Calculus and gradient flows on finite metric measure spaces"
)]
struct Cli {
    /// Seed for every random draw; overrides scenario seeds.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (defaults to the number of cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Root directory for reports.
    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build or validate spaces.
    #[command(subcommand)]
    Space(SpaceCmd),
    /// Hopf-Lax evaluation and the exact audit suite.
    #[command(subcommand)]
    Hopflax(HopflaxCmd),
    /// Optimal transport: solve with certificate, audit suites.
    #[command(subcommand)]
    Ot(OtCmd),
    /// Heat flow runs and the exactness suite.
    #[command(subcommand)]
    Heat(HeatCmd),
    /// Minimizing-movement (JKO) trajectories.
    #[command(subcommand)]
    Jko(JkoCmd),
    /// Entropy, Fisher information and slope bounds.
    #[command(subcommand)]
    Entropy(EntropyCmd),
    /// Run scenario files (in parallel).
    Run {
        #[arg(required = true)]
        scenarios: Vec<PathBuf>,
    },
}

#[derive(Subcommand)]
enum SpaceCmd {
    /// Build a space from a TOML or JSON specification.
    Build {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Validate a space file.
    Validate { space: PathBuf },
}

#[derive(Subcommand)]
enum HopflaxCmd {
    /// `Q_t f` with argmin distances and the subsolution audit.
    Eval {
        #[arg(long)]
        space: PathBuf,
        #[arg(long)]
        field: PathBuf,
        #[arg(long, value_delimiter = ',', required = true)]
        times: Vec<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Exact audits on random spaces.
    Suite {
        #[arg(long, default_value_t = 100)]
        instances: usize,
    },
}

#[derive(Subcommand)]
enum OtCmd {
    /// Optimal plan, dual potentials and the certificate audit.
    Solve {
        #[arg(long)]
        space: PathBuf,
        #[arg(long)]
        mu: PathBuf,
        #[arg(long)]
        nu: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Certificate audits on random instances.
    Suite {
        #[arg(long, default_value_t = 500)]
        instances: usize,
    },
    /// Metric Brenier ladder on the circle.
    Brenier,
}

#[derive(Subcommand)]
enum HeatCmd {
    /// Implicit-Euler heat flow with diagnostics.
    Run {
        #[command(flatten)]
        form: FormArgs,
        #[arg(long)]
        f0: PathBuf,
        #[arg(long)]
        t: f64,
        #[arg(long, default_value_t = 100)]
        steps: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Exactness audits on random forms.
    Suite {
        #[arg(long, default_value_t = 200)]
        instances: usize,
    },
}

#[derive(Subcommand)]
enum JkoCmd {
    /// Minimizing-movement trajectory.
    Run {
        #[arg(long)]
        space: PathBuf,
        #[arg(long)]
        mu0: PathBuf,
        #[arg(long)]
        h: f64,
        #[arg(long)]
        t: f64,
        /// `graph` (exact discrete transport) or `cells` (interval/circle
        /// histograms).
        #[arg(long, default_value = "graph")]
        model: String,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum EntropyCmd {
    /// Entropy, Fisher information, slope and a candidate lower bound.
    Report {
        #[command(flatten)]
        form: FormArgs,
        #[arg(long)]
        mu: PathBuf,
        /// Also evaluate the candidate lower bound of the slope.
        #[arg(long)]
        oracle: bool,
        #[arg(long, default_value = "graph")]
        model: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct FormArgs {
    #[arg(long)]
    space: PathBuf,
    /// Conductance list; defaults to the space's canonical form.
    #[arg(long)]
    form: Option<PathBuf>,
}

fn model(name: &str) -> Result<TransportModel> {
    match name {
        "graph" => Ok(TransportModel::Graph),
        "cells" => Ok(TransportModel::Cells),
        other => Err(HarnessError::config(
            "model",
            format!("expected `graph` or `cells`, got `{other}`"),
        )),
    }
}

/// Writes a report, prints its summary, returns whether it passed.
fn finish(report: &Report, dir: &Path, started: Instant) -> Result<bool> {
    report.write(dir)?;
    print!("{}", report.summary());
    println!(
        "  runtime {:.2}s, report in {}",
        started.elapsed().as_secs_f64(),
        dir.display()
    );
    Ok(report.passed)
}

fn run_scenarios(paths: &[PathBuf], seed: Option<u64>, root: &Path) -> Result<bool> {
    let scenarios: Vec<Scenario> = paths
        .iter()
        .map(|p| load_scenario(p))
        .collect::<Result<_>>()?;
    let results: Vec<(Result<Report>, f64)> = scenarios
        .par_iter()
        .map(|s| {
            let started = Instant::now();
            (s.run(seed), started.elapsed().as_secs_f64())
        })
        .collect();
    let mut all = true;
    for (s, (result, secs)) in scenarios.iter().zip(results) {
        let report = result?;
        let dir = s.output_dir(root);
        report.write(&dir)?;
        print!("{}", report.summary());
        println!("  runtime {secs:.2}s, report in {}", dir.display());
        all &= report.passed;
    }
    Ok(all)
}

fn execute(cli: Cli) -> Result<bool> {
    let seed = cli.seed.unwrap_or(0);
    let root = cli.out_dir.as_path();
    let started = Instant::now();
    match cli.command {
        Command::Space(SpaceCmd::Build { spec, out }) => {
            let space = build_space(&read_space_spec(&spec)?)?;
            write_json(&out, &space.to_file())?;
            let issues = validate_space(&space);
            println!("built {} points -> {}", space.n(), out.display());
            Ok(issues.is_empty())
        }
        Command::Space(SpaceCmd::Validate { space }) => {
            let s = read_space(&space)?;
            let report = validate_space(&s);
            println!("{}", serde_json::to_string_pretty(&report.issues)?);
            Ok(report.is_empty())
        }
        Command::Hopflax(HopflaxCmd::Eval {
            space,
            field,
            times,
            out,
        }) => {
            let space = read_space(&space)?;
            let f = read_field(&field)?;
            let mut results = Vec::new();
            let mut passed = true;
            for t in times {
                let hl = hopf_lax(&space, &f, t)?;
                let audit = hj_subsolution_report(&space, &f, t)?;
                passed &= audit.passed();
                results.push(json!({ "result": hl, "subsolution": audit }));
            }
            write_json(&out, &results)?;
            Ok(passed)
        }
        Command::Hopflax(HopflaxCmd::Suite { instances }) => {
            let p = hopflax::HopflaxParams {
                instances,
                ..Default::default()
            };
            finish(
                &hopflax::run("hopflax_suite", seed, &p)?,
                &root.join("hopflax_suite"),
                started,
            )
        }
        Command::Ot(OtCmd::Solve { space, mu, nu, out }) => {
            let space = read_space(&space)?;
            let (mu, nu) = (read_measure(&mu)?, read_measure(&nu)?);
            let sol = solve_w2(&space, &mu, &nu)?;
            let audit = sol.certificate.audit(&space, &sol.plan);
            let passed = audit.passed(mmslab_core::transport::CERT_TOL);
            write_json(&out, &json!({ "solution": sol, "audit": audit }))?;
            println!(
                "W2 = {:.12e}, relative gap {:.3e}",
                sol.w2, audit.relative_gap
            );
            Ok(passed)
        }
        Command::Ot(OtCmd::Suite { instances }) => {
            let p = ot::OtParams {
                instances,
                ..Default::default()
            };
            finish(
                &ot::run("ot_certificates", seed, &p)?,
                &root.join("ot_certificates"),
                started,
            )
        }
        Command::Ot(OtCmd::Brenier) => {
            let s = Scenario::new(
                "brenier",
                mmslab::Experiment::Brenier(brenier::BrenierParams::default()),
            );
            finish(&s.run(Some(seed))?, &root.join("brenier"), started)
        }
        Command::Heat(HeatCmd::Run {
            form,
            f0,
            t,
            steps,
            out,
        }) => {
            let space = read_space(&form.space)?;
            let form = read_form(&space, form.form.as_deref())?;
            let f0 = read_field(&f0)?;
            let traj = heat_flow(&form, &f0, t, steps)?;
            let entropy = if f0.iter().all(|v| *v > 0.0) {
                ConvexEntropy::Boltzmann
            } else {
                ConvexEntropy::Quadratic
            };
            let diag = flow_diagnostics(&form, &traj, entropy);
            write_json(&out, &json!({ "trajectory": traj, "diagnostics": diag }))?;
            Ok(diag.passed())
        }
        Command::Heat(HeatCmd::Suite { instances }) => {
            let p = heat::HeatParams {
                instances,
                ..Default::default()
            };
            finish(
                &heat::run("heat_exactness", seed, &p)?,
                &root.join("heat_exactness"),
                started,
            )
        }
        Command::Jko(JkoCmd::Run {
            space,
            mu0,
            h,
            t,
            model: m,
            out,
        }) => {
            let space = read_space(&space)?;
            let mu0 = read_measure(&mu0)?;
            let opts = match model(&m)? {
                TransportModel::Graph => JkoOptions::default(),
                TransportModel::Cells => JkoOptions::cells(),
            };
            let traj = jko_flow(&space, &mu0, h, t, &opts)?;
            let monotone = traj
                .records
                .windows(2)
                .all(|w| w[1].entropy <= w[0].entropy + 1e-12);
            write_json(&out, &traj)?;
            println!(
                "{} steps, final entropy {:.12e}",
                traj.records.len(),
                traj.records.last().map_or(f64::NAN, |r| r.entropy)
            );
            Ok(monotone)
        }
        Command::Entropy(EntropyCmd::Report {
            form,
            mu,
            oracle,
            model: m,
            out,
        }) => {
            let space = read_space(&form.space)?;
            let form = read_form(&space, form.form.as_deref())?;
            let mu = read_measure(&mu)?;
            let transport = model(&m)?;
            let bound = if oracle {
                let opts = match transport {
                    TransportModel::Graph => JkoOptions::default(),
                    TransportModel::Cells => JkoOptions::cells(),
                };
                let spec = OracleCandidates {
                    seed,
                    ..Default::default()
                };
                let candidates = oracle_candidates(&space, &mu, &spec, &opts)?;
                Some(slope_oracle(&space, &mu, &candidates, transport)?)
            } else {
                None
            };
            let report = entropy_report(&space, &form, &mu, bound.as_ref());
            let text = serde_json::to_string_pretty(&report)?;
            match out {
                Some(path) => write_json(&path, &report)?,
                None => println!("{text}"),
            }
            let lower = -space.total_mass().ln();
            Ok(report.entropy >= lower - 1e-12
                && report
                    .oracle_lower_bound
                    .is_none_or(|o| o <= report.slope_squared.sqrt() + 1e-6))
        }
        Command::Run { scenarios } => run_scenarios(&scenarios, cli.seed, root),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
        {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    match execute(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
