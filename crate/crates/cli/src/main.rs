// SPDX-License-Identifier: Apache-2.0

//! `hymos`: translate switch programs, check fabric capacity and run
//! simulations.
//!
//! Exit codes: 0 success, 1 input or validation failure, 2 usage error,
//! 3 capacity check failure.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use hymos_core::p4ir::{has_errors, load_entries, load_program, validate, EntrySet, Program, TableEntry};
use hymos_core::sim::{render_csv, sweep, Experiment, ExperimentConfig, StatsReport, SweepParam, SweepRow};
use hymos_core::switchcore::{check_nonblocking, LinkRateModel};
use hymos_core::xlate::{translate, Topology, TranslateOptions, DEFAULT_INTERNAL_ETHERTYPE};

#[derive(Parser)]
#[command(name = "hymos", version, about = "Modular switch laboratory: P4 line cards joined by a PCI-e fabric")]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Split a switch program into per-card programs.
    Translate {
        #[arg(long)]
        program: PathBuf,
        #[arg(long)]
        topology: PathBuf,
        /// Switch table entries; each card file then carries them plus its
        /// synthesized entries.
        #[arg(long)]
        entries: Option<PathBuf>,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value_t = DEFAULT_INTERNAL_ETHERTYPE, value_parser = parse_u16)]
        internal_ethertype: u16,
    },
    /// Report per-card fabric utilization; exit 3 if any card is blocking.
    Check {
        #[arg(long)]
        topology: PathBuf,
        #[arg(long, value_enum, default_value_t = Model::Table)]
        link_model: Model,
    },
    /// Run one experiment and write a CSV row.
    Run {
        #[command(flatten)]
        common: RunArgs,
    },
    /// Run an experiment once per value of a parameter.
    Sweep {
        #[command(flatten)]
        common: RunArgs,
        #[arg(long, value_enum)]
        param: Param,
        /// Comma-separated, monotone list of values.
        #[arg(long, value_parser = parse_values)]
        values: Values,
    },
}

#[derive(clap::Args)]
struct RunArgs {
    #[arg(long)]
    experiment: PathBuf,
    /// CSV destination; standard output when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also run the single-card baseline and add a norm_latency column.
    #[arg(long)]
    baseline: bool,
    /// Overrides the experiment's seed.
    #[arg(long, env = "HYMOS_SEED")]
    seed: Option<u64>,
    /// Write the full statistics as JSON to this file.
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Model {
    Table,
    AggregateSplit,
    Physical,
}

#[derive(Clone, Copy, ValueEnum)]
enum Param {
    Load,
    #[value(alias = "packet_size")]
    PacketSize,
}

#[derive(Clone)]
struct Values(Vec<f64>);

fn parse_values(s: &str) -> Result<Values, String> {
    let v = s
        .split(',')
        .map(str::trim)
        .filter(|x| !x.is_empty())
        .map(|x| x.parse::<f64>().map_err(|_| format!("`{x}` is not a number")))
        .collect::<Result<Vec<_>, _>>()?;
    if v.is_empty() {
        return Err("at least one value is required".into());
    }
    Ok(Values(v))
}

fn parse_u16(s: &str) -> Result<u16, String> {
    let v = match s.strip_prefix("0x").or_else(|| s.strip_prefix("0X")) {
        Some(hex) => u16::from_str_radix(hex, 16),
        None => s.parse(),
    };
    v.map_err(|_| format!("`{s}` is not a 16-bit value"))
}

enum Failure {
    Input(anyhow::Error),
    Capacity,
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Input(e)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.cmd {
        Command::Translate { program, topology, entries, out_dir, internal_ethertype } => {
            cmd_translate(&program, &topology, entries.as_deref(), &out_dir, internal_ethertype).map_err(Failure::from)
        }
        Command::Check { topology, link_model } => cmd_check(&topology, link_model),
        Command::Run { common } => cmd_run(&common, None).map_err(Failure::from),
        Command::Sweep { common, param, values } => cmd_run(&common, Some((param, values.0))).map_err(Failure::from),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Capacity) => ExitCode::from(3),
        Err(Failure::Input(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

/// Writes via a temporary file in the same directory, so readers never see
/// a partial file.
fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).with_context(|| format!("writing {}", path.display()))?;
    tmp.write_all(contents)?;
    tmp.persist(path).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn load_switch_program(path: &Path) -> Result<Program> {
    let program = load_program(&read(path)?).map_err(|e| anyhow!("{}: {e}", path.display()))?;
    let diags = validate(&program);
    for d in &diags {
        eprintln!("{}: {d}", path.display());
    }
    if has_errors(&diags) {
        bail!("{} failed validation", path.display());
    }
    Ok(program)
}

fn cmd_translate(
    program: &Path,
    topology: &Path,
    entries: Option<&Path>,
    out_dir: &Path,
    internal_ethertype: u16,
) -> Result<()> {
    let p = load_switch_program(program)?;
    let topo = Topology::parse(&read(topology)?).map_err(|e| anyhow!("{}: {e}", topology.display()))?;
    let switch_entries: Vec<TableEntry> = match entries {
        Some(path) => load_entries(&read(path)?).map_err(|e| anyhow!("{}: {e}", path.display()))?.entries,
        None => Vec::new(),
    };
    let r = translate(&p, &topo, &switch_entries, TranslateOptions { internal_ethertype })?;
    std::fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    for c in &r.cards {
        let set = EntrySet { entries: r.card_entries(c.card, &switch_entries) };
        write_atomic(&out_dir.join(format!("card{}.program.json", c.card)), c.program.to_json_pretty().as_bytes())?;
        write_atomic(&out_dir.join(format!("card{}.entries.json", c.card)), set.to_json_pretty().as_bytes())?;
    }
    let tables: Vec<usize> = r.cards.iter().map(|c| c.program.tables.len()).collect();
    for (c, t) in r.cards.iter().zip(&tables) {
        println!(
            "card {}: {t} tables, {} ports, {} synthesized entries",
            c.card,
            r.port_map.card_ports(c.card).len(),
            c.entries.len()
        );
    }
    if tables.windows(2).all(|w| w[0] == w[1]) {
        println!("{} cards, {} tables each", r.cards.len(), tables[0]);
    } else {
        println!("{} cards", r.cards.len());
    }
    Ok(())
}

fn cmd_check(topology: &Path, model: Model) -> Result<(), Failure> {
    let topo = Topology::parse_relaxed(&read(topology)?).map_err(|e| anyhow!("{}: {e}", topology.display()))?;
    let model = match model {
        Model::Table => LinkRateModel::Table,
        Model::AggregateSplit => LinkRateModel::AggregateSplit,
        Model::Physical => LinkRateModel::Physical,
    };
    let report = check_nonblocking(&topo, model).map_err(anyhow::Error::from)?;
    println!("{:>4}  {:>10}  {:>10}  {:>7}  status", "card", "ports Gb/s", "link Gb/s", "util");
    for c in &report {
        println!(
            "{:>4}  {:>10.1}  {:>10.1}  {:>6.1}%  {}",
            c.card,
            c.ports_gbps,
            c.link_gbps,
            c.utilization * 100.0,
            if c.nonblocking { "non-blocking" } else { "BLOCKING" }
        );
    }
    if report.iter().all(|c| c.nonblocking) {
        Ok(())
    } else {
        Err(Failure::Capacity)
    }
}

fn load_experiment(args: &RunArgs) -> Result<Experiment> {
    let mut exp =
        ExperimentConfig::load_file(&args.experiment).map_err(|e| anyhow!("{}: {e}", args.experiment.display()))?;
    if let Some(seed) = args.seed {
        exp.cfg.seed = seed;
    }
    Ok(exp)
}

fn cmd_run(args: &RunArgs, points: Option<(Param, Vec<f64>)>) -> Result<()> {
    let exp = load_experiment(args)?;
    let (param, values) = match points {
        Some((Param::Load, v)) => (SweepParam::Load, v),
        Some((Param::PacketSize, v)) => (SweepParam::PacketSize, v),
        None => (SweepParam::Load, vec![exp.cfg.traffic.load]),
    };
    let rows = sweep(&exp, param, &values, args.baseline)?;
    for r in &rows {
        summarize(r);
    }
    let csv = render_csv(&rows);
    match &args.out {
        Some(path) => write_atomic(path, csv.as_bytes())?,
        None => print!("{csv}"),
    }
    if let Some(path) = &args.json {
        let doc: Vec<serde_json::Value> = rows
            .iter()
            .map(|r| {
                serde_json::json!({
                    "param": r.param,
                    "hymos": r.report,
                    "baseline": r.baseline,
                    "norm_latency": r.norm_latency(),
                })
            })
            .collect();
        write_atomic(path, serde_json::to_string_pretty(&doc)?.as_bytes())?;
    }
    Ok(())
}

fn summarize(r: &SweepRow) {
    let s: &StatsReport = &r.report;
    let lat = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.3}"));
    eprint!(
        "param {}: offered {:.2} Gb/s, delivered {:.2} Gb/s, mean {} us, p99 {} us, drops {}, wasted grants {}",
        r.param,
        s.offered_gbps,
        s.delivered_gbps,
        lat(s.mean_latency_us),
        lat(s.p99_latency_us),
        s.drops,
        s.wasted_grants
    );
    match r.norm_latency() {
        Some(n) => eprintln!(", normalized {n:.3}"),
        None => eprintln!(),
    }
}
