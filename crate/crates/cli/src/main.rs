use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::io::Write as _;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use imagery_core::agents::{Agent, RemoteAgent, RemoteChatConfig, TaggedReplies};
use imagery_core::dataset::{read_manifest, save_problem_set, ProblemSet};
use imagery_core::eval::{
    load_transcripts, run_benchmark, run_probe_eval, verify_predictions, EulerReport, EvalReport,
    ProbeReport, Provenance, RunConfig, DEFAULT_MATCH_TAU,
};
use imagery_core::forge::{asymmetric_objects, ForgeConfig, ForgeConstraints};
use imagery_core::probes::{
    load_probe_pairs, make_direction_probes, make_sweep_dataset, save_probe_pairs, ProbePair,
    SweepAxis, SweepSpec,
};
use imagery_core::render::presentation_pose;
use imagery_core::report::{EmitReport, ReportFormat};
use imagery_core::{CameraRig, EulerAnglesDeg, RenderSettings};
use imagery_studio::StudioConfig;

#[derive(Parser)]
#[command(name = "bench", version, about = "Mental-rotation imagery benchmark")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate an odd-one-out problem set.
    Forge {
        #[arg(long)]
        seed: u64,
        #[arg(long, default_value_t = 40)]
        count: usize,
        #[arg(long, default_value = "data/default-set")]
        out: PathBuf,
    },
    /// Run an agent over a problem set as described by a JSON config.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Write the JSON report here as well.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        transcripts: Option<PathBuf>,
        #[arg(long, default_value = "md")]
        format: ReportFormat,
    },
    /// Generate small-rotation direction probes (six directions per object).
    MakeProbes {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 3)]
        objects: usize,
        #[arg(long, default_value_t = 15.0)]
        angle: f64,
    },
    /// Ask an image-capable agent for the rotation in each probe pair.
    Probes {
        /// `ground-truth` or `remote`.
        #[arg(long)]
        agent: String,
        #[arg(long)]
        pairs: PathBuf,
        /// JSON remote agent settings; the token is read from the variable
        /// named by `token_env`.
        #[arg(long)]
        agent_config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value = "md")]
        format: ReportFormat,
    },
    /// Generate an axis sweep and its ground-truth Euler angles.
    Sweep {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 3)]
        objects: usize,
        #[arg(long, default_value_t = 30)]
        step: u32,
        /// Comma-separated subset of yaw, pitch, roll.
        #[arg(long, default_value = "yaw,pitch,roll")]
        axes: String,
    },
    /// Re-apply predicted Euler angles and compare renders.
    VerifyEuler {
        #[arg(long)]
        pairs: PathBuf,
        /// JSON object mapping pair id to {pitch, yaw, roll} in degrees.
        #[arg(long)]
        preds: PathBuf,
        #[arg(long, default_value_t = DEFAULT_MATCH_TAU)]
        tau: f64,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value = "md")]
        format: ReportFormat,
    },
    /// Re-emit a JSON report, or score a directory of transcripts.
    Report {
        /// A report JSON file or a transcripts directory.
        input: PathBuf,
        #[arg(long, default_value = "md")]
        format: ReportFormat,
        /// Problem set the transcripts came from, for provenance.
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Serve the studio API.
    Serve {
        #[arg(long, default_value = "data/default-set")]
        dataset: PathBuf,
        #[arg(long, default_value = "127.0.0.1:8787")]
        bind: SocketAddr,
        #[arg(long)]
        records: Option<PathBuf>,
        #[arg(long)]
        read_only: bool,
    },
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Forge { seed, count, out } => {
            let mut set = ProblemSet::forge(seed, count, ForgeConfig::default())?;
            save_problem_set(&mut set, &out)
                .with_context(|| format!("writing {}", out.display()))?;
            println!(
                "{} problems -> {} (checksum {})",
                set.len(),
                out.display(),
                set.checksum.as_deref().unwrap_or("-")
            );
        }
        Command::Run {
            config,
            out,
            transcripts,
            format,
        } => {
            let mut cfg = read_run_config(&config)?;
            if transcripts.is_some() {
                cfg.transcripts_dir = transcripts;
            }
            let report = run_benchmark(&cfg)?;
            if let Some(path) = out {
                write_file(&path, &report.emit(ReportFormat::Json)?)?;
            }
            emit(&report, format, None)?;
        }
        Command::MakeProbes {
            out,
            seed,
            objects,
            angle,
        } => {
            let (rig, st) = (CameraRig::default(), RenderSettings::default());
            let mut pairs = Vec::new();
            for (i, o) in asymmetric_objects(seed, objects, &ForgeConstraints::default())?
                .iter()
                .enumerate()
            {
                pairs.extend(make_direction_probes(
                    &format!("obj{}", i + 1),
                    o,
                    presentation_pose(),
                    angle,
                    &rig,
                    &st,
                )?);
            }
            save_probe_pairs(&pairs, &out)?;
            println!("{} pairs -> {}", pairs.len(), out.display());
        }
        Command::Probes {
            agent,
            pairs,
            agent_config,
            out,
            format,
        } => {
            let pairs = load_probe_pairs(&pairs)?;
            let agent = probe_agent(&agent, agent_config.as_deref(), &pairs)?;
            let report: ProbeReport = run_probe_eval(agent.as_ref(), &pairs)?;
            if let Some(path) = out {
                write_file(&path, &report.emit(ReportFormat::Json)?)?;
            }
            emit(&report, format, None)?;
        }
        Command::Sweep {
            out,
            seed,
            objects,
            step,
            axes,
        } => {
            let spec = SweepSpec {
                axes: parse_axes(&axes)?,
                step_deg: step,
                ..SweepSpec::default()
            };
            let (rig, st) = (CameraRig::default(), RenderSettings::default());
            let mut pairs = Vec::new();
            for (i, o) in asymmetric_objects(seed, objects, &ForgeConstraints::default())?
                .iter()
                .enumerate()
            {
                pairs.extend(make_sweep_dataset(
                    &format!("obj{}", i + 1),
                    o,
                    presentation_pose(),
                    &spec,
                    &rig,
                    &st,
                )?);
            }
            save_probe_pairs(&pairs, &out)?;
            let truth: BTreeMap<&str, EulerAnglesDeg> = pairs
                .iter()
                .map(|p| (p.id.as_str(), p.ground_truth_euler()))
                .collect();
            write_file(&out.join("truth.json"), &serde_json::to_vec_pretty(&truth)?)?;
            println!("{} pairs -> {}", pairs.len(), out.display());
        }
        Command::VerifyEuler {
            pairs,
            preds,
            tau,
            out,
            format,
        } => {
            let pairs = load_probe_pairs(&pairs)?;
            let text = fs::read_to_string(&preds)
                .with_context(|| format!("reading {}", preds.display()))?;
            let predictions: BTreeMap<String, EulerAnglesDeg> = serde_json::from_str(&text)
                .with_context(|| format!("parsing {}", preds.display()))?;
            let report: EulerReport = verify_predictions(
                &pairs,
                &predictions,
                &CameraRig::default(),
                &RenderSettings::default(),
                tau,
            )?;
            if let Some(path) = out {
                write_file(&path, &report.emit(ReportFormat::Json)?)?;
            }
            emit(&report, format, None)?;
        }
        Command::Report {
            input,
            format,
            dataset,
            out,
        } => {
            if input.is_dir() {
                let report = score_transcripts(&input, dataset.as_deref())?;
                emit(&report, format, out.as_deref())?;
            } else {
                let text = fs::read_to_string(&input)
                    .with_context(|| format!("reading {}", input.display()))?;
                if let Ok(r) = serde_json::from_str::<EvalReport>(&text) {
                    emit(&r, format, out.as_deref())?;
                } else if let Ok(r) = serde_json::from_str::<ProbeReport>(&text) {
                    emit(&r, format, out.as_deref())?;
                } else if let Ok(r) = serde_json::from_str::<EulerReport>(&text) {
                    emit(&r, format, out.as_deref())?;
                } else {
                    bail!("{} is not a benchmark, probe or verifier report", input.display());
                }
            }
        }
        Command::Serve {
            dataset,
            bind,
            records,
            read_only,
        } => imagery_studio::serve_blocking(StudioConfig {
            dataset_dir: dataset,
            records_dir: records,
            bind,
            read_only,
            ..StudioConfig::default()
        })?,
    }
    Ok(())
}

fn read_run_config(path: &Path) -> Result<RunConfig> {
    let text =
        fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut cfg: RunConfig =
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    if cfg.problem_set.is_relative() {
        if let Some(base) = path.parent() {
            cfg.problem_set = base.join(&cfg.problem_set);
        }
    }
    Ok(cfg)
}

fn probe_agent(
    name: &str,
    config: Option<&Path>,
    pairs: &[ProbePair],
) -> Result<Box<dyn Agent>> {
    match name {
        "ground-truth" => {
            let replies: HashMap<String, String> = pairs
                .iter()
                .map(|p| (p.id.clone(), p.ground_truth()))
                .collect();
            Ok(Box::new(TaggedReplies::new("ground-truth", replies)))
        }
        "remote" => {
            let cfg: RemoteChatConfig = match config {
                Some(path) => serde_json::from_str(
                    &fs::read_to_string(path)
                        .with_context(|| format!("reading {}", path.display()))?,
                )
                .with_context(|| format!("parsing {}", path.display()))?,
                None => RemoteChatConfig::default(),
            };
            Ok(Box::new(RemoteAgent::new(cfg)))
        }
        other => bail!("unknown probe agent {other:?} (expected ground-truth or remote)"),
    }
}

fn parse_axes(s: &str) -> Result<Vec<SweepAxis>> {
    s.split(',')
        .map(|a| match a.trim() {
            "yaw" => Ok(SweepAxis::Yaw),
            "pitch" => Ok(SweepAxis::Pitch),
            "roll" => Ok(SweepAxis::Roll),
            other => bail!("unknown axis {other:?}"),
        })
        .collect()
}

/// Scores saved transcripts. The agent name comes from the transcripts.
fn score_transcripts(dir: &Path, dataset: Option<&Path>) -> Result<EvalReport> {
    let runs = load_transcripts(dir)?;
    if runs.is_empty() {
        bail!("no transcript.json below {}", dir.display());
    }
    let agents: BTreeSet<&str> = runs
        .iter()
        .flatten()
        .map(|(t, _)| t.agent.as_str())
        .collect();
    let checksum = match dataset {
        Some(d) => Some(read_manifest(d)?.checksum),
        None => None,
    };
    let provenance = Provenance {
        dataset: dataset
            .map(|d| d.display().to_string())
            .unwrap_or_else(|| dir.display().to_string()),
        dataset_checksum: checksum,
        agent: agents.into_iter().collect::<Vec<_>>().join(", "),
        condition: None,
        seed: 0,
        n_runs: runs.len() as u32,
        loop_config: None,
        note: Some(format!("scored from {}", dir.display())),
    };
    Ok(EvalReport::from_transcripts(provenance, &runs))
}

fn emit(report: &impl EmitReport, format: ReportFormat, out: Option<&Path>) -> Result<()> {
    let bytes = report.emit(format)?;
    match out {
        Some(path) => write_file(path, &bytes),
        None => {
            std::io::stdout().write_all(&bytes)?;
            Ok(())
        }
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}
