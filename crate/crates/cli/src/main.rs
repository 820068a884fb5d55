//! `masgame` command-line front end.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use masgame::scenario::{attack_plans, equilibrium_report, resolve_scenario, run_scenario, RunOverrides, Snapshot, FIXTURES};
use masgame::Link;

#[derive(Parser)]
#[command(name = "masgame", version, about = "Two-layer robot network formation games under jamming and spoofing")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one or more scenarios and write trace.csv, events.log, snapshot.json and summary.json.
    Run {
        /// Scenario file or bundled fixture name. With several scenarios each gets `<out>/<name>/`.
        #[arg(required = true)]
        scenarios: Vec<String>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        max_steps: Option<usize>,
        /// Number of scenarios run concurrently.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Check whether a snapshot is a meta-equilibrium of the scenario.
    Verify {
        scenario: String,
        #[arg(long)]
        snapshot: PathBuf,
    },
    /// Print the exact worst-case and greedy jamming plans against a snapshot.
    AttackPlan {
        scenario: String,
        #[arg(long)]
        snapshot: PathBuf,
    },
    /// List the bundled fixtures.
    Fixtures,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("MASGAME_LOG", "warn")).init();
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(cmd: Command) -> Result<ExitCode> {
    match cmd {
        Command::Run { scenarios, out, seed, max_steps, jobs } => run(&scenarios, &out, RunOverrides { seed, max_steps }, jobs),
        Command::Verify { scenario, snapshot } => verify(&scenario, &snapshot),
        Command::AttackPlan { scenario, snapshot } => attack_plan(&scenario, &snapshot),
        Command::Fixtures => {
            for (name, _) in FIXTURES {
                println!("{name}");
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn run(scenarios: &[String], out: &Path, overrides: RunOverrides, jobs: usize) -> Result<ExitCode> {
    if jobs == 0 {
        bail!("--jobs must be at least 1");
    }
    let configs = scenarios
        .iter()
        .map(|s| resolve_scenario(s).with_context(|| format!("loading scenario {s}")))
        .collect::<Result<Vec<_>>>()?;
    let dirs: Vec<PathBuf> = if configs.len() == 1 {
        vec![out.to_path_buf()]
    } else {
        let mut names: Vec<&str> = configs.iter().map(|c| c.name.as_str()).collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) {
            bail!("scenario names must be distinct when running several at once");
        }
        configs.iter().map(|c| out.join(&c.name)).collect()
    };

    let next = AtomicUsize::new(0);
    let results = Mutex::new(vec![None; configs.len()]);
    std::thread::scope(|s| {
        for _ in 0..jobs.min(configs.len()) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(cfg) = configs.get(i) else { break };
                log::info!("running {} into {}", cfg.name, dirs[i].display());
                let r = run_scenario(cfg, &dirs[i], &overrides).map(|(_, summary)| summary).map_err(|e| format!("{}: {e}", cfg.name));
                results.lock().unwrap()[i] = Some(r);
            });
        }
    });

    let mut failed = false;
    for r in results.into_inner().unwrap().into_iter().flatten() {
        match r {
            Ok(s) => println!(
                "{}: {} after {} steps, nominal λ₂ {:.6}, worst-case λ₂ {:.6}, equilibrium {}",
                s.scenario,
                if s.converged { "converged" } else { "stopped" },
                s.steps,
                s.final_nominal_lambda2,
                s.final_worst_lambda2,
                if s.equilibrium.holds { "holds" } else { "does not hold" }
            ),
            Err(e) => {
                eprintln!("error: {e}");
                failed = true;
            }
        }
    }
    Ok(if failed { ExitCode::FAILURE } else { ExitCode::SUCCESS })
}

fn load(scenario: &str, snapshot: &Path) -> Result<(masgame::scenario::ScenarioConfig, Snapshot)> {
    let cfg = resolve_scenario(scenario).with_context(|| format!("loading scenario {scenario}"))?;
    let snap = Snapshot::load(snapshot)?;
    Ok((cfg, snap))
}

fn verify(scenario: &str, snapshot: &Path) -> Result<ExitCode> {
    let (cfg, snap) = load(scenario, snapshot)?;
    let r = equilibrium_report(&cfg, &snap.agents)?;
    println!("worst-case λ₂          {:.6}", r.worst_lambda2);
    println!("P1 best improvement    {:.3e}", r.improvement_p1);
    println!("P2 best improvement    {:.3e}", r.improvement_p2);
    println!("worst attack           {}", links(&r.attack.removed));
    println!("attack is best reply   {}", r.attack_is_best_response);
    println!("meta-equilibrium       {}", if r.holds { "holds" } else { "does not hold" });
    Ok(if r.holds { ExitCode::SUCCESS } else { ExitCode::from(2) })
}

fn attack_plan(scenario: &str, snapshot: &Path) -> Result<ExitCode> {
    let (cfg, snap) = load(scenario, snapshot)?;
    let p = attack_plans(&cfg, &snap.agents)?;
    println!("nominal λ₂ {:.6}, budget {}, {} candidate links", p.nominal_lambda2, p.budget_psi, p.candidates.len());
    println!("{:<28} {:<28}", "worst-case", "greedy");
    let wc = p.worst_case.removed.iter().map(link).collect::<Vec<_>>();
    let gr = p.greedy.removed.iter().map(link).collect::<Vec<_>>();
    for i in 0..wc.len().max(gr.len()) {
        println!("{:<28} {:<28}", wc.get(i).map_or("", String::as_str), gr.get(i).map_or("", String::as_str));
    }
    println!("{:<28} {:<28}", format!("λ₂ {:.6}", p.worst_case.resulting_lambda2), format!("λ₂ {:.6}", p.greedy.resulting_lambda2));
    Ok(ExitCode::SUCCESS)
}

fn link(l: &Link) -> String {
    format!("({}, {})", l.lo(), l.hi())
}

fn links(ls: &[Link]) -> String {
    if ls.is_empty() {
        return "none".into();
    }
    ls.iter().map(link).collect::<Vec<_>>().join(" ")
}
