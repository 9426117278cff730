use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Parser, Subcommand};
use hri_core::multibody::load_model;
use hri_core::simulate::{run_scenario, Scenario};

#[derive(Parser, Debug)]
#[command(name = "hri", version, about = "Coupled human-robot dynamics toolkit")]
struct Cli {
    /// Only print errors.
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Check a model file and print a short summary.
    Validate { model: PathBuf },
    /// Run a scenario; writes log.csv and summary.json.
    Simulate {
        scenario: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// `dotted.key=value`; the value is parsed as JSON when possible.
        #[arg(long = "override", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Rank joint hypotheses for an articulated object; writes ranking.json.
    Identify {
        object: PathBuf,
        catalog: PathBuf,
        observations: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long = "override", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
}

/// Failure classes mapped to exit codes 1 and 2.
enum Failure {
    Invalid(anyhow::Error),
    Runtime(anyhow::Error),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.quiet { "error" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    let result = match &cli.command {
        Command::Validate { model } => validate(model),
        Command::Simulate {
            scenario,
            out,
            overrides,
        } => simulate(scenario, out, overrides, cli.quiet),
        Command::Identify {
            object,
            catalog,
            observations,
            out,
            overrides,
        } => identify(object, catalog, observations, out, overrides, cli.quiet),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Invalid(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn validate(path: &Path) -> Result<(), Failure> {
    let text = std::fs::read_to_string(path)
        .with_context(|| path.display().to_string())
        .map_err(Failure::Invalid)?;
    let model = load_model(&text)
        .with_context(|| path.display().to_string())
        .map_err(Failure::Invalid)?;
    let frames: usize = model.links.iter().map(|l| l.frames.len()).sum();
    println!(
        "{}: n = {}, {} links, {} extra frames, total mass {:.4} kg",
        model.name,
        model.dof(),
        model.links.len(),
        frames,
        model.total_mass()
    );
    Ok(())
}

fn simulate(path: &Path, out: &Path, overrides: &[String], quiet: bool) -> Result<(), Failure> {
    let value = read_json(path).map_err(Failure::Invalid)?;
    let value = apply_overrides(value, overrides).map_err(Failure::Invalid)?;
    let base = path.parent().unwrap_or(Path::new("."));
    let scenario = Scenario::from_value(value, base)
        .with_context(|| path.display().to_string())
        .map_err(Failure::Invalid)?;
    let run = run_scenario(&scenario).map_err(|e| {
        if e.is_config() {
            Failure::Invalid(e.into())
        } else {
            Failure::Runtime(e.into())
        }
    })?;
    std::fs::create_dir_all(out)
        .with_context(|| out.display().to_string())
        .map_err(Failure::Runtime)?;
    write_atomic(out, "log.csv", |w| run.write_csv(w).map_err(Into::into)).map_err(Failure::Runtime)?;
    write_atomic(out, "summary.json", |w| {
        w.write_all(run.summary_json().as_bytes())?;
        w.write_all(b"\n")?;
        Ok(())
    })
    .map_err(Failure::Runtime)?;
    if let Some(e) = run.failure {
        return Err(Failure::Runtime(anyhow!(
            "simulation stopped after {} steps: {e}",
            run.records.len()
        )));
    }
    if !quiet {
        let s = &run.summary;
        println!(
            "{}: {} steps, final state {}, {} contact switches, final |chi_err| {:.3e}, peak {:.3e}, max residual {:.3e}, V-dot violations {}",
            scenario.config.name,
            s.steps,
            s.final_state.as_deref().unwrap_or("-"),
            s.contact_switches,
            s.final_chi_err,
            s.peak_chi_err,
            s.max_constraint_residual,
            s.vdot_violations
        );
    }
    Ok(())
}

fn identify(
    object: &Path,
    catalog: &Path,
    observations: &Path,
    out: &Path,
    overrides: &[String],
    quiet: bool,
) -> Result<(), Failure> {
    use hri_core::topology::{identify_topology, read_observations, Catalog, IdentifyOptions, ObjectSpec};

    let object_value = read_json(object).map_err(Failure::Invalid)?;
    let object_value = apply_overrides(object_value, overrides).map_err(Failure::Invalid)?;
    let spec: ObjectSpec = serde_json::from_value(object_value)
        .with_context(|| object.display().to_string())
        .map_err(Failure::Invalid)?;
    let catalog_value = read_json(catalog).map_err(Failure::Invalid)?;
    let catalog_spec: Catalog = serde_json::from_value(catalog_value)
        .with_context(|| catalog.display().to_string())
        .map_err(Failure::Invalid)?;
    let obs = read_observations(observations)
        .with_context(|| observations.display().to_string())
        .map_err(Failure::Invalid)?;
    let ranking = identify_topology(&spec, &catalog_spec, &obs, &IdentifyOptions::default())
        .map_err(|e| Failure::Runtime(e.into()))?;
    std::fs::create_dir_all(out)
        .with_context(|| out.display().to_string())
        .map_err(Failure::Runtime)?;
    let text = serde_json::to_string_pretty(&ranking).map_err(|e| Failure::Runtime(e.into()))?;
    write_atomic(out, "ranking.json", |w| {
        w.write_all(text.as_bytes())?;
        w.write_all(b"\n")?;
        Ok(())
    })
    .map_err(Failure::Runtime)?;
    if !quiet {
        if let Some(best) = ranking.ranking.first() {
            println!(
                "best hypothesis {} (residual {:.3e}){}",
                best.label,
                best.residual,
                if ranking.ambiguous { ", ambiguous" } else { "" }
            );
        }
    }
    Ok(())
}

fn read_json(path: &Path) -> anyhow::Result<serde_json::Value> {
    let text = std::fs::read_to_string(path).with_context(|| path.display().to_string())?;
    serde_json::from_str(&text).with_context(|| path.display().to_string())
}

/// Applies `a.b.c=value` overrides; intermediate objects are created as needed.
fn apply_overrides(mut value: serde_json::Value, overrides: &[String]) -> anyhow::Result<serde_json::Value> {
    for item in overrides {
        let (key, raw) = item
            .split_once('=')
            .ok_or_else(|| anyhow!("override '{item}' is not KEY=VALUE"))?;
        let parsed = serde_json::from_str(raw).unwrap_or_else(|_| serde_json::Value::String(raw.to_string()));
        let mut cur = &mut value;
        let parts: Vec<&str> = key.split('.').collect();
        for (i, part) in parts.iter().enumerate() {
            if part.is_empty() {
                return Err(anyhow!("override key '{key}' has an empty segment"));
            }
            let last = i + 1 == parts.len();
            cur = match cur {
                serde_json::Value::Object(map) => {
                    if last {
                        map.insert(part.to_string(), parsed.clone());
                        break;
                    }
                    map.entry(part.to_string())
                        .or_insert_with(|| serde_json::Value::Object(Default::default()))
                }
                serde_json::Value::Array(items) => {
                    let idx: usize = part
                        .parse()
                        .map_err(|_| anyhow!("override key '{key}': '{part}' is not an array index"))?;
                    let len = items.len();
                    let slot = items
                        .get_mut(idx)
                        .ok_or_else(|| anyhow!("override key '{key}': index {idx} out of range ({len})"))?;
                    if last {
                        *slot = parsed.clone();
                        break;
                    }
                    slot
                }
                _ => return Err(anyhow!("override key '{key}': '{part}' is not inside an object")),
            };
        }
    }
    Ok(value)
}

/// Writes `dir/name` through a temporary file in the same directory.
fn write_atomic(
    dir: &Path,
    name: &str,
    body: impl FnOnce(&mut std::fs::File) -> anyhow::Result<()>,
) -> anyhow::Result<()> {
    let mut tmp = tempfile::NamedTempFile::new_in(dir).with_context(|| dir.display().to_string())?;
    body(tmp.as_file_mut())?;
    tmp.as_file_mut().sync_all()?;
    let target = dir.join(name);
    tmp.persist(&target).with_context(|| target.display().to_string())?;
    Ok(())
}
