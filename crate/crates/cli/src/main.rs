//! `delaygossip` command-line interface.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use delaygossip::braess::run_braess;
use delaygossip::config::{ExperimentConfig, Mode, SeedSpec};
use delaygossip::experiment::Experiment;
use delaygossip::graph::time_diameter;
use delaygossip::plot::{render_svg, Figure, Series};
use delaygossip::traces::{aggregate, metrics, read_csv, to_csv_string, TraceRow, XAxis};
use delaygossip::{presets, Error};

#[derive(Parser)]
#[command(name = "delaygossip", version, about = "Delayed gossip and decentralized optimization experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct ConfigArg {
    /// Configuration file, or the name of a bundled preset.
    #[arg(long)]
    config: String,
}

#[derive(clap::Args)]
struct OutArg {
    /// Output directory.
    #[arg(long, env = "DELAYGOSSIP_OUT", default_value = "out")]
    out: PathBuf,
}

#[derive(clap::Args)]
struct SeedArgs {
    /// Seed count `N` (seeds 0..N) or a comma-separated list; overrides the config.
    #[arg(long)]
    seeds: Option<String>,
    /// Run seeds one after another instead of on the worker pool.
    #[arg(long)]
    serial: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Prints step sizes, certified rate, mean stability and capacity feasibility.
    Tune {
        #[command(flatten)]
        config: ConfigArg,
    },
    /// Runs the configured experiment and writes the trace CSV and a summary.
    Run {
        #[command(flatten)]
        config: ConfigArg,
        #[command(flatten)]
        seeds: SeedArgs,
        #[command(flatten)]
        out: OutArg,
        /// Overrides the scheduling mode.
        #[arg(long, value_parser = ["oracle", "protocol"])]
        mode: Option<String>,
    },
    /// Plots one or more trace CSVs into an SVG.
    Plot {
        /// Trace files; each becomes one series labelled by its file stem.
        #[arg(required = true)]
        csv: Vec<PathBuf>,
        #[arg(long, default_value = "time", value_parser = ["time", "updates", "energy"])]
        x_axis: String,
        #[arg(long, default_value = "err2")]
        metric: String,
        /// Adds the `bound_rhs` column of each file as a dashed series.
        #[arg(long)]
        bound: bool,
        /// SVG file to write.
        #[arg(long, default_value = "plot.svg")]
        out: PathBuf,
    },
    /// Sparsifies the graph, then compares gossip on the dense and pruned graphs.
    Braess {
        #[command(flatten)]
        config: ConfigArg,
        #[command(flatten)]
        seeds: SeedArgs,
        #[command(flatten)]
        out: OutArg,
    },
    /// Prints the time diameter of the delay-weighted graph.
    Diameter {
        #[command(flatten)]
        config: ConfigArg,
    },
}

enum Failure {
    Config(String),
    Certificate(String),
    Divergence(String),
    Other(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Io(_) => Failure::Other(e.to_string()),
            _ => Failure::Config(e.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Other(e.to_string())
    }
}

fn load_config(arg: &ConfigArg) -> Result<ExperimentConfig, Failure> {
    let path = Path::new(&arg.config);
    if path.exists() {
        return ExperimentConfig::from_path(path).map_err(|e| Failure::Config(format!("{}: {e}", path.display())));
    }
    match presets::source(&arg.config) {
        Some(_) => Ok(presets::load(&arg.config)?),
        None => Err(Failure::Config(format!("{} is neither a file nor a bundled preset", arg.config))),
    }
}

fn stem(config: &ExperimentConfig) -> String {
    config.name.clone().unwrap_or_else(|| "experiment".into())
}

fn seeds(config: &ExperimentConfig, args: &SeedArgs) -> Result<Vec<u64>, Failure> {
    let spec = match &args.seeds {
        Some(s) => SeedSpec::parse(s)?,
        None => config.run.seeds.clone(),
    };
    let seeds = spec.seeds();
    if seeds.is_empty() {
        return Err(Failure::Config("no seeds to run".into()));
    }
    Ok(seeds)
}

fn write(path: &Path, contents: &str) -> Result<(), Failure> {
    fs::write(path, contents).map_err(|e| Failure::Other(format!("{}: {e}", path.display())))
}

fn tune(arg: &ConfigArg) -> Result<(), Failure> {
    let exp = Experiment::new(load_config(arg)?)?;
    let Some(tuned) = &exp.tuned else {
        return Err(Failure::Config("sparsify configurations have no step sizes to certify".into()));
    };
    print!("{}", tuned.report());
    if !tuned.certified() {
        return Err(Failure::Certificate("certificate failed".into()));
    }
    Ok(())
}

fn run(arg: &ConfigArg, seed_args: &SeedArgs, out: &OutArg, mode: Option<&str>) -> Result<(), Failure> {
    let mut config = load_config(arg)?;
    if let Some(m) = mode {
        config.run.mode = if m == "protocol" { Mode::Protocol } else { Mode::Oracle };
        config.validate()?;
    }
    let seeds = seeds(&config, seed_args)?;
    let name = stem(&config);
    let exp = Experiment::new(config)?;
    let result = exp.run(&seeds, !seed_args.serial)?;
    fs::create_dir_all(&out.out)?;
    let csv_path = out.out.join(format!("{name}.csv"));
    write(&csv_path, &to_csv_string(&result.runs))?;
    let summary_path = out.out.join(format!("{name}_summary.json"));
    write(&summary_path, &serde_json::to_string_pretty(&result.summary).expect("summary serializes"))?;
    if let Some(t) = &exp.tuned {
        println!("gamma {:.6e}  horizon {:.6e}  seeds {}", exp.gamma.unwrap_or(t.gamma), exp.horizon, seeds.len());
    }
    if let Some(m) = result.summary.final_err2 {
        println!("final err2 {:.6e} +- {:.2e}", m.mean, m.se);
    }
    if let Some(m) = result.summary.final_ewa_err2 {
        println!("final ewa err2 {:.6e} +- {:.2e}", m.mean, m.se);
    }
    println!("wrote {} and {}", csv_path.display(), summary_path.display());
    if !result.summary.diverged_seeds.is_empty() {
        return Err(Failure::Divergence(format!("diverged seeds: {:?}", result.summary.diverged_seeds)));
    }
    Ok(())
}

fn figure(files: &[(String, Vec<TraceRow>)], axis: XAxis, metric: &str, bound: bool, title: &str) -> Result<Figure, Failure> {
    let mut series = Vec::new();
    for (label, rows) in files {
        series.push(Series::from_aggregate(label.clone(), &aggregate(rows, metric, axis)?, false));
    }
    if bound {
        for (label, rows) in files {
            series.push(Series::from_aggregate(format!("{label} bound"), &aggregate(rows, "bound_rhs", axis)?, true));
        }
    }
    Ok(Figure { title: title.into(), x_label: axis.label().into(), y_label: metric.into(), series })
}

fn plot(csv: &[PathBuf], x_axis: &str, metric: &str, bound: bool, out: &Path) -> Result<(), Failure> {
    let axis: XAxis = x_axis.parse()?;
    let mut files = Vec::new();
    for path in csv {
        let rows = read_csv(fs::File::open(path).map_err(|e| Failure::Other(format!("{}: {e}", path.display())))?)?;
        let label = path.file_stem().map_or_else(|| path.display().to_string(), |s| s.to_string_lossy().into_owned());
        files.push((label, rows));
    }
    let reference = metrics(&files[0].1);
    if let Some((label, _)) = files.iter().find(|(_, rows)| metrics(rows) != reference) {
        return Err(Failure::Config(format!("{label} has different metrics than {}", files[0].0)));
    }
    let svg = render_svg(&figure(&files, axis, metric, bound, metric)?)?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    write(out, &svg)?;
    println!("wrote {}", out.display());
    Ok(())
}

fn braess(arg: &ConfigArg, seed_args: &SeedArgs, out: &OutArg) -> Result<(), Failure> {
    let config = load_config(arg)?;
    let seeds = seeds(&config, seed_args)?;
    let name = stem(&config);
    let report = run_braess(&config, &seeds, !seed_args.serial)?;
    fs::create_dir_all(&out.out)?;
    let dense_rows = to_csv_string(&report.dense.runs);
    let pruned_rows = to_csv_string(&report.pruned.runs);
    write(&out.out.join(format!("{name}_dense.csv")), &dense_rows)?;
    write(&out.out.join(format!("{name}_pruned.csv")), &pruned_rows)?;
    write(&out.out.join(format!("{name}_pruned.toml")), &report.pruned_config.to_toml_string())?;
    let files = vec![
        ("dense G1".to_string(), read_csv(dense_rows.as_bytes())?),
        ("pruned G2".to_string(), read_csv(pruned_rows.as_bytes())?),
    ];
    for axis in [XAxis::Time, XAxis::Updates, XAxis::Energy] {
        let fig = figure(&files, axis, "err2", false, &format!("{name}: error vs {}", axis.label()))?;
        let file = format!("{name}_{}.svg", format!("{axis:?}").to_lowercase());
        write(&out.out.join(file), &render_svg(&fig)?)?;
    }
    let summary = report.summary();
    write(&out.out.join(format!("{name}_braess.txt")), &summary)?;
    print!("{summary}");
    println!("wrote results to {}", out.out.display());
    if report.dense.diverged() || report.pruned.diverged() {
        return Err(Failure::Divergence("a run diverged".into()));
    }
    Ok(())
}

fn diameter(arg: &ConfigArg) -> Result<(), Failure> {
    let net = load_config(arg)?.network()?;
    println!("{}", time_diameter(&net.graph, &net.delays)?);
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Tune { config } => tune(config),
        Command::Run { config, seeds, out, mode } => run(config, seeds, out, mode.as_deref()),
        Command::Plot { csv, x_axis, metric, bound, out } => plot(csv, x_axis, metric, *bound, out),
        Command::Braess { config, seeds, out } => braess(config, seeds, out),
        Command::Diameter { config } => diameter(config),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let (code, msg) = match f {
                Failure::Config(m) => (2, m),
                Failure::Certificate(m) => (3, m),
                Failure::Divergence(m) => (4, m),
                Failure::Other(m) => (1, m),
            };
            eprintln!("error: {msg}");
            ExitCode::from(code)
        }
    }
}
