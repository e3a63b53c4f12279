use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use beamlab::experiment::{run, ExperimentConfig};
use beamlab::Error;
use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::{Map, Value};

/// Run a beamlab experiment and write its CSV, JSON and SVG artifacts.
///
/// Values in a `--config` file override the command-line flags. The output
/// directory is `$BEAMLAB_OUT` when set, else `--out`, else the config's
/// `output`, else `out`; artifacts go to `<dir>/<experiment>/`.
#[derive(Parser, Debug)]
#[command(name = "beamlab", version)]
struct Cli {
    /// JSON experiment configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output root; artifacts go to `<out>/<experiment>/`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Seed for sampled points and frequencies.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Resolvent bound off the constructed bad frequency set.
    Resolvent(ResolventArgs),
    /// Eigenvalue counts against the Weyl law.
    Weyl(WeylArgs),
    /// Gaussian beam norms, residual decay and Riccati structure.
    Beam(BeamArgs),
    /// Stationary phase remainder rates.
    StationaryPhase(StationaryArgs),
    /// Point-value recovery from the beam product integral.
    Recover(RecoverArgs),
    /// Survey of the two-geodesic intersection condition.
    H1Check(H1Args),
    /// Conjugate points and Jacobi fields.
    Conjugate(ConjugateArgs),
    /// Boundary concentration limit on the half-space.
    Boundary(BoundaryArgs),
}

#[derive(Args, Debug, Serialize)]
struct ResolventArgs {
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    model: Option<String>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    delta: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    eps: Option<f64>,
    /// `lo:hi`
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    range: Option<String>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    samples: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    spectrum_max: Option<f64>,
}

#[derive(Args, Debug, Serialize)]
struct WeylArgs {
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    model: Option<String>,
    /// One or more semiclassical parameters.
    #[arg(long, num_args = 1.., value_delimiter = ',')]
    #[serde(skip_serializing_if = "Option::is_none")]
    h: Option<Vec<f64>>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    band: Option<f64>,
}

#[derive(Args, Debug, Serialize)]
struct BeamArgs {
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    model: Option<String>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    a: Option<f64>,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    point: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    direction: Option<Vec<f64>>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    delta1: Option<f64>,
    /// `lo:hi:count` or a comma-separated list.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    ladder: Option<String>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    points_per_width: Option<f64>,
}

#[derive(Args, Debug, Serialize)]
struct StationaryArgs {
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    alpha: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    ladder: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    kappa: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    radius: Option<f64>,
}

#[derive(Args, Debug, Serialize)]
struct RecoverArgs {
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    model: Option<String>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    a: Option<f64>,
    /// JSON potential description file.
    #[arg(long)]
    #[serde(skip)]
    potential: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    ladder: Option<String>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    delta1: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    alpha: Option<f64>,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    point: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    u: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    w: Option<Vec<f64>>,
}

#[derive(Args, Debug, Serialize)]
struct H1Args {
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    model: Option<String>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    a: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    samples: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    margin: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    angles: Option<usize>,
}

#[derive(Args, Debug, Serialize)]
struct ConjugateArgs {
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    model: Option<String>,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    point: Option<Vec<f64>>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    directions: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    cap: Option<f64>,
}

#[derive(Args, Debug, Serialize)]
struct BoundaryArgs {
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    n: Option<usize>,
    #[arg(long, allow_hyphen_values = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    q: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    u3: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    u4: Option<String>,
    /// Concentration scales as `lo:hi:count`.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    mu: Option<String>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    tolerance: Option<f64>,
}

/// Errors reported as usage errors (exit status 2).
#[derive(Debug)]
struct Usage(String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn flags(cmd: &Command) -> anyhow::Result<(&'static str, Value)> {
    let (name, mut v) = match cmd {
        Command::Resolvent(a) => ("resolvent", serde_json::to_value(a)?),
        Command::Weyl(a) => ("weyl", serde_json::to_value(a)?),
        Command::Beam(a) => ("beam", serde_json::to_value(a)?),
        Command::StationaryPhase(a) => ("stationary-phase", serde_json::to_value(a)?),
        Command::Recover(a) => ("recover", serde_json::to_value(a)?),
        Command::H1Check(a) => ("h1-check", serde_json::to_value(a)?),
        Command::Conjugate(a) => ("conjugate", serde_json::to_value(a)?),
        Command::Boundary(a) => ("boundary", serde_json::to_value(a)?),
    };
    if let Command::Recover(RecoverArgs { potential: Some(p), .. }) = cmd {
        let src = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
        let pot: Value = serde_json::from_str(&src).map_err(|e| Usage(format!("{}: {e}", p.display())))?;
        v["potential"] = pot;
    }
    Ok((name, v))
}

/// Recursive object merge; `top` wins on conflicts.
fn merge(base: &mut Value, top: Value) {
    match (base, top) {
        (Value::Object(b), Value::Object(t)) => {
            for (k, v) in t {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, t) => *slot = t,
    }
}

fn assemble(cli: &Cli) -> anyhow::Result<Value> {
    let mut doc = Value::Object(Map::new());
    if let Some(cmd) = &cli.command {
        let (name, v) = flags(cmd)?;
        doc["run"] = serde_json::json!({ name: v });
    }
    if let Some(s) = cli.seed {
        doc["seed"] = s.into();
    }
    if let Some(path) = &cli.config {
        let src = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        if src.trim().is_empty() {
            return Err(Usage(format!("{}: empty configuration", path.display())).into());
        }
        let file: Value = serde_json::from_str(&src).map_err(|e| Usage(format!("{}: {e}", path.display())))?;
        if !file.is_object() {
            return Err(Usage(format!("{}: configuration must be a JSON object", path.display())).into());
        }
        // a different experiment in the file replaces the flag one
        let same = match (file.get("run"), doc.get("run")) {
            (Some(Value::Object(f)), Some(Value::Object(d))) => f.keys().eq(d.keys()),
            _ => true,
        };
        if !same {
            doc.as_object_mut().expect("object").remove("run");
        }
        merge(&mut doc, file);
    }
    if doc.get("run").is_none() {
        return Err(Usage("no experiment given: pass a subcommand or a config with a `run` section".into()).into());
    }
    Ok(doc)
}

fn execute(cli: &Cli) -> anyhow::Result<bool> {
    let doc = assemble(cli)?;
    let cfg: ExperimentConfig = serde_json::from_value(doc).map_err(|e| Usage(format!("invalid configuration: {e}")))?;
    cfg.validate().map_err(|e| Usage(e.to_string()))?;
    let dir = std::env::var_os("BEAMLAB_OUT")
        .map(PathBuf::from)
        .or_else(|| cli.out.clone())
        .or_else(|| cfg.output.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"))
        .join(cfg.run.name());
    let outcome = run(&cfg).map_err(|e| match e {
        Error::Config { .. } => anyhow::Error::new(Usage(e.to_string())),
        e => anyhow::Error::new(e).context(format!("running {}", cfg.run.name())),
    })?;
    let files = outcome
        .artifacts
        .write(&dir)
        .with_context(|| format!("writing to {}", dir.display()))?;
    for c in &outcome.report.checks {
        println!(
            "{} {:<28} {:>14.6e}  {}",
            if c.pass { "PASS" } else { "FAIL" },
            c.name,
            c.value,
            c.condition
        );
    }
    for f in files {
        println!("wrote {}", f.display());
    }
    Ok(outcome.report.pass)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<Usage>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(3)
            }
        }
    }
}
