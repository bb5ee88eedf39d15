use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use atomcount::config::RunConfig;
use atomcount::io;
use atomcount::pipeline;

#[derive(Parser)]
#[command(
    name = "atomcount",
    version,
    about = "Simulate and analyze cavity transmission records of trapped atoms"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Configuration file layered over the built-in defaults.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Output directory (overrides output.dir).
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Write the plateau table p0(N) for each configured y.
    Model {
        #[command(flatten)]
        common: Common,
    },
    /// Simulate a batch of detection records with ground truth.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Master seed (overrides sim.seed).
        #[arg(long)]
        seed: Option<u64>,
        /// Number of traces (overrides sim.n_traces).
        #[arg(long)]
        traces: Option<usize>,
        /// Also write every (time, N, k) event of each trajectory.
        #[arg(long)]
        dump_trajectories: bool,
    },
    /// Histogram traces, locate plateau bands and extract populations.
    Analyze {
        #[command(flatten)]
        common: Common,
        /// Manual band boundaries, decreasing, e.g. 0.85,0.55,0.25.
        #[arg(long, value_name = "LIST", value_delimiter = ',')]
        boundaries: Option<Vec<f64>>,
        /// Trace files or directories of them [default: <out>/traces].
        inputs: Vec<PathBuf>,
    },
    /// Fit the loss rate to a population-curves file.
    Fit {
        #[command(flatten)]
        common: Common,
        /// Population curves [default: <out>/populations.csv].
        curves: Option<PathBuf>,
    },
}

fn load_config(common: &Common) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::paper_defaults(),
    };
    if let Some(out) = &common.out {
        cfg.output_dir = out.clone();
    }
    Ok(cfg)
}

fn write(path: &Path, text: &str) -> Result<()> {
    io::write_text(path, text)?;
    Ok(())
}

fn cmd_model(cfg: &RunConfig) -> Result<()> {
    for (y, table) in pipeline::plateau_tables(cfg)? {
        let text = io::p0_table_to_string(&table);
        let path = cfg
            .output_dir
            .join(format!("p0_table_y{}.csv", io::fmt_num(y)));
        write(&path, &text)?;
        println!("# y={}", io::fmt_num(y));
        print!("{text}");
    }
    Ok(())
}

fn cmd_simulate(cfg: &RunConfig, dump: bool) -> Result<()> {
    let out = &cfg.output_dir;
    let width = cfg.sim.n_traces.saturating_sub(1).to_string().len().max(4);
    let rows = pipeline::simulate_each(cfg, |sim, traj| {
        let name = format!("{:0width$}", sim.index);
        let trace_file = format!("traces/trace_{name}.csv");
        let truth_file = format!("truth/truth_{name}.csv");
        io::write_trace(&out.join(&trace_file), &sim.trace)?;
        io::write_text(&out.join(&truth_file), &io::events_to_string(&sim.truth))?;
        if dump {
            let mut events = vec![atomcount::sim::Event {
                time: traj.t_start,
                state: traj.initial,
            }];
            events.extend_from_slice(&traj.events);
            io::write_text(
                &out.join(format!("trajectories/trajectory_{name}.csv")),
                &io::events_to_string(&events),
            )?;
        }
        Ok(format!(
            "{},{},{trace_file},{truth_file}\n",
            sim.index, sim.seed
        ))
    })?;
    let mut manifest = String::new();
    let _ = writeln!(manifest, "# master_seed={}", cfg.sim.seed);
    manifest.push_str("trace,seed,trace_file,truth_file\n");
    rows.iter().for_each(|r| manifest.push_str(r));
    write(&out.join("manifest.csv"), &manifest)?;
    write(&out.join("config.conf"), &cfg.to_text())?;
    eprintln!("wrote {} traces to {}", rows.len(), out.display());
    Ok(())
}

/// Trace files named directly, or every `.csv` inside named directories.
fn collect_trace_files(inputs: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for input in inputs {
        if input.is_dir() {
            let mut found: Vec<PathBuf> = std::fs::read_dir(input)
                .with_context(|| format!("reading directory {}", input.display()))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|x| x == "csv"))
                .collect();
            found.sort();
            if found.is_empty() {
                bail!("{}: no .csv trace files", input.display());
            }
            files.extend(found);
        } else {
            files.push(input.clone());
        }
    }
    if files.is_empty() {
        bail!("no trace files given");
    }
    Ok(files)
}

fn cmd_analyze(cfg: &RunConfig, inputs: &[PathBuf]) -> Result<()> {
    let out = &cfg.output_dir;
    let inputs = if inputs.is_empty() {
        vec![out.join("traces")]
    } else {
        inputs.to_vec()
    };
    let traces = collect_trace_files(&inputs)?
        .iter()
        .map(|p| io::read_trace(p))
        .collect::<atomcount::Result<Vec<_>>>()?;
    let result = match pipeline::analyze(&traces, cfg) {
        Err(e @ atomcount::Error::TooFewPeaks { .. }) => {
            return Err(e).context("band detection failed; pass --boundaries to set bands by hand");
        }
        r => r?,
    };
    write(
        &out.join("histogram.csv"),
        &io::histogram_to_string(&result.histogram),
    )?;
    write(
        &out.join("histogram_2d.csv"),
        &io::histogram_2d_to_string(&result.histogram_2d),
    )?;
    write(&out.join("bands.txt"), &io::bands_to_string(&result.bands))?;
    write(
        &out.join("populations.csv"),
        &io::curves_to_string(&result.curves),
    )?;
    eprintln!(
        "analyzed {} traces; boundaries {}",
        traces.len(),
        result
            .bands
            .boundaries
            .iter()
            .map(|b| io::fmt_num(*b))
            .collect::<Vec<_>>()
            .join(",")
    );
    Ok(())
}

fn cmd_fit(cfg: &RunConfig, curves: Option<PathBuf>) -> Result<()> {
    let out = &cfg.output_dir;
    let path = curves.unwrap_or_else(|| out.join("populations.csv"));
    let curves = io::read_curves(&path)?;
    let fit = pipeline::fit(&curves, cfg).with_context(|| format!("fitting {}", path.display()))?;
    if fit.result.warnings > 0 {
        eprintln!(
            "warning: {} population entries clamped or renormalized",
            fit.result.warnings
        );
    }
    let text = io::fit_result_to_string(&fit.result);
    write(&out.join("fit_result.txt"), &text)?;
    write(
        &out.join("fit_curves.csv"),
        &io::curves_to_string(&fit.model),
    )?;
    print!("{text}");
    Ok(())
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Model { common } => cmd_model(&load_config(&common)?),
        Command::Simulate {
            common,
            seed,
            traces,
            dump_trajectories,
        } => {
            let mut cfg = load_config(&common)?;
            if let Some(s) = seed {
                cfg.sim.seed = s;
            }
            if let Some(n) = traces {
                cfg.sim.n_traces = n;
            }
            cfg.validate()?;
            cmd_simulate(&cfg, dump_trajectories)
        }
        Command::Analyze {
            common,
            boundaries,
            inputs,
        } => {
            let mut cfg = load_config(&common)?;
            if boundaries.is_some() {
                cfg.analysis.boundaries = boundaries;
            }
            cfg.validate()?;
            cmd_analyze(&cfg, &inputs)
        }
        Command::Fit { common, curves } => cmd_fit(&load_config(&common)?, curves),
    }
}
