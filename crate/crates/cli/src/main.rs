use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use taskmesh::amr::partition;
use taskmesh::sim::{self, init_scenario, RunConfig};

mod selftest;

/// Environment variable naming this process's rank for TCP runs.
const RANK_ENV: &str = "TASKMESH_RANK";

#[derive(Parser)]
#[command(
    name = "taskmesh",
    version,
    about = "Octree AMR hydro on an asynchronous task runtime"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Overrides {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Extra `key=value` settings applied after the config file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Runs a scenario and prints its metrics.
    Run {
        #[command(flatten)]
        overrides: Overrides,
        #[arg(long)]
        workers: Option<usize>,
        #[arg(long)]
        localities: Option<usize>,
        #[arg(long)]
        rank: Option<usize>,
        #[arg(long, value_parser = ["loopback", "tcp"])]
        parcelport: Option<String>,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        csv: Option<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Prints the leaf-to-locality assignment.
    Partition {
        #[command(flatten)]
        overrides: Overrides,
        #[arg(long)]
        localities: Option<usize>,
    },
    /// Runs the built-in invariant checks.
    Selftest,
}

fn load(o: &Overrides) -> Result<RunConfig> {
    let mut c = RunConfig::default();
    if let Some(path) = &o.config {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        c.apply(&text)?;
    }
    for kv in &o.set {
        let Some((k, v)) = kv.split_once('=') else {
            bail!("--set expects KEY=VALUE, got `{kv}`");
        };
        c.set(k.trim(), v.trim())?;
    }
    Ok(c)
}

fn run(mut c: RunConfig) -> Result<()> {
    if c.rank.is_none() {
        if let Ok(r) = std::env::var(RANK_ENV) {
            c.rank = Some(r.parse().with_context(|| format!("{RANK_ENV}={r}"))?);
        }
    }
    c.validate()?;
    let out = sim::run(&c)?;
    if out.rank != 0 {
        return Ok(());
    }
    let m = &out.metrics;
    let totals = m.totals();
    println!("scenario        {}", c.scenario);
    println!("steps           {}", m.steps.len());
    println!("t_end           {:.6}", m.end_time());
    println!("cells           {}", m.steps.first().map_or(0, |s| s.cells));
    if let Some(ms) = m.median_step_ms() {
        println!("median_step_ms  {ms:.3}");
    }
    if let Some(ms) = m.warmup_step_ms() {
        println!("warmup_step_ms  {ms:.3}");
    }
    println!("cells_per_s     {:.4e}", m.cells_per_second());
    println!("flop_estimate   {:.4e}", m.flop_estimate());
    println!("flops_per_s     {:.4e}", m.flops_per_second());
    println!("flop_per_cell   {:.1}", m.flop_model.per_cell_step());
    println!("tasks_spawned   {}", totals.tasks_spawned);
    println!("steals          {}", totals.steals);
    println!(
        "launches        {} ({} fused, {} solo)",
        totals.launches, totals.fused_launches, totals.solo_launches
    );
    println!("parcels_sent    {}", totals.parcels_sent);
    println!("messages_sent   {}", totals.messages_sent);
    println!("pool_created    {}", totals.pool_created);
    println!("floors          {}", totals.floors);
    let drift: Vec<String> = m.max_drift().iter().map(|d| format!("{d:.3e}")).collect();
    println!("drift           {}", drift.join(" "));
    Ok(())
}

fn show_partition(c: &RunConfig) -> Result<()> {
    c.validate()?;
    let tree = init_scenario(c)?;
    let leaves = tree.leaves();
    let owner = partition(&vec![1.0; leaves.len()], c.localities)?;
    let mut counts = vec![0usize; c.localities];
    for (k, o) in leaves.iter().zip(&owner) {
        println!("{k}\t{o}");
        counts[*o as usize] += 1;
    }
    for (r, n) in counts.iter().enumerate() {
        eprintln!("locality {r}: {n} sub-grids");
    }
    Ok(())
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run {
            overrides,
            workers,
            localities,
            rank,
            parcelport,
            steps,
            csv,
            checkpoint,
        } => load(&overrides).and_then(|mut c| {
            if let Some(w) = workers {
                c.workers = w;
            }
            if let Some(l) = localities {
                c.localities = l;
            }
            if rank.is_some() {
                c.rank = rank;
            }
            if let Some(p) = parcelport {
                c.set("dist.parcelport", &p)?;
            }
            if let Some(s) = steps {
                c.steps = s;
            }
            if csv.is_some() {
                c.csv = csv;
            }
            if checkpoint.is_some() {
                c.checkpoint = checkpoint;
            }
            run(c)
        }),
        Command::Partition { overrides, localities } => load(&overrides).and_then(|mut c| {
            if let Some(l) = localities {
                c.localities = l;
            }
            show_partition(&c)
        }),
        Command::Selftest => {
            if selftest::run_all() {
                Ok(())
            } else {
                Err(anyhow::anyhow!("self-test failed"))
            }
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn go(args: &[&str]) -> Result<()> {
        let cli = Cli::try_parse_from(std::iter::once("taskmesh").chain(args.iter().copied()))?;
        dispatch(cli)
    }

    #[test]
    fn run_writes_csv_and_checkpoint() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("blob.cfg");
        std::fs::write(
            &cfg,
            "scenario = gaussian-blob\namr.min_level = 1\namr.max_level = 1\nsteps = 2\n",
        )
        .unwrap();
        let csv = dir.path().join("m.csv");
        let ckpt = dir.path().join("s.ckpt");
        let (c, k) = (csv.to_str().unwrap(), ckpt.to_str().unwrap());
        go(&[
            "run",
            "--config",
            cfg.to_str().unwrap(),
            "--workers",
            "2",
            "--steps",
            "3",
            "--csv",
            c,
            "--checkpoint",
            k,
        ])
        .unwrap();
        let rows = std::fs::read_to_string(&csv).unwrap();
        // header, three steps, summary
        assert_eq!(rows.lines().filter(|l| !l.starts_with('#')).count(), 5);
        assert!(taskmesh::amr::Checkpoint::read(&ckpt).is_ok());
    }

    #[test]
    fn set_flags_apply_in_order() {
        let c = load(&Overrides {
            config: None,
            set: vec!["steps = 4".into(), "amr.roots=2,1,1".into()],
        })
        .unwrap();
        assert_eq!((c.steps, c.roots), (4, Some([2, 1, 1])));
    }

    #[test]
    fn partition_and_selftest_succeed() {
        go(&[
            "partition",
            "--set",
            "amr.min_level=1",
            "--set",
            "amr.max_level=1",
            "--localities",
            "3",
        ])
        .unwrap();
        go(&["selftest"]).unwrap();
    }

    #[test]
    fn bad_input_is_an_error() {
        assert!(go(&["run", "--set", "scenario=vortex"]).is_err());
        assert!(go(&["run", "--set", "nonsense"]).is_err());
        assert!(go(&["run", "--parcelport", "carrier-pigeon"]).is_err());
        assert!(go(&["run", "--config", "/nonexistent/x.cfg"]).is_err());
    }
}
