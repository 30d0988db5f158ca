//! Benchmark runs, probe scoring and rotation-estimate verification.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::{
    parse_probe_reply, probe_prompt, Agent, AgentError, OrbitSearchAgent, OrbitSearchConfig,
    RemoteAgent, RemoteChatConfig, ResetMatchAgent, ScriptedReplies, VoxelOracleAgent,
};
use crate::dataset::{load_problem_set, DatasetError, ProblemSet};
use crate::geometry::{pose_from_euler, EulerAnglesDeg};
use crate::probes::{pairs_checksum, ProbePair};
use crate::protocol::{OptionLabel, PromptVariant, Turn};
use crate::render::{image_diff, render, CameraRig, RenderError, RenderSettings};
use crate::session::{
    run_loop, LoopConfig, Outcome, Session, SessionError, SessionTranscript, Termination,
};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Session(#[from] SessionError),
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error("agent: {0}")]
    Agent(String),
    #[error("config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Condition {
    /// Reset to the canonical view is available.
    #[serde(rename = "c1-reset")]
    C1Reset,
    /// Full-turn sweeps are suggested.
    #[serde(rename = "c2-360hint")]
    C2Hint360,
    /// Incremental rotations only.
    #[serde(rename = "c3-incremental")]
    C3Incremental,
}

impl Condition {
    pub fn as_str(self) -> &'static str {
        match self {
            Condition::C1Reset => "c1-reset",
            Condition::C2Hint360 => "c2-360hint",
            Condition::C3Incremental => "c3-incremental",
        }
    }

    /// Sets the loop flags this condition implies.
    pub fn apply(self, cfg: &mut LoopConfig) {
        match self {
            Condition::C1Reset => {
                cfg.reset_enabled = true;
                cfg.hint_360 = false;
                cfg.prompt_variant = PromptVariant::ResetViews;
            }
            Condition::C2Hint360 => {
                cfg.reset_enabled = false;
                cfg.hint_360 = true;
                cfg.prompt_variant = PromptVariant::FullOrbit;
            }
            Condition::C3Incremental => {
                cfg.reset_enabled = false;
                cfg.hint_360 = false;
                cfg.prompt_variant = PromptVariant::Incremental;
            }
        }
    }
}

impl std::str::FromStr for Condition {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "c1-reset" | "c1" => Ok(Condition::C1Reset),
            "c2-360hint" | "c2" => Ok(Condition::C2Hint360),
            "c3-incremental" | "c3" => Ok(Condition::C3Incremental),
            other => Err(format!("unknown condition {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum AgentSpec {
    VoxelOracle,
    ResetMatch {
        #[serde(default)]
        tolerance: Option<f64>,
    },
    OrbitSearch {
        #[serde(default)]
        config: OrbitSearchConfig,
    },
    Remote(RemoteChatConfig),
    Scripted {
        replies: Vec<String>,
    },
}

impl AgentSpec {
    /// Short names accepted on the command line.
    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "voxel-oracle" => Some(AgentSpec::VoxelOracle),
            "reset-match" => Some(AgentSpec::ResetMatch { tolerance: None }),
            "orbit-search" => Some(AgentSpec::OrbitSearch {
                config: OrbitSearchConfig::default(),
            }),
            _ => None,
        }
    }

    pub fn build(&self, set: Arc<ProblemSet>) -> Result<Box<dyn Agent>, EvalError> {
        Ok(match self {
            AgentSpec::VoxelOracle => Box::new(VoxelOracleAgent::new(set)),
            AgentSpec::ResetMatch { tolerance } => Box::new(ResetMatchAgent {
                tolerance: tolerance.unwrap_or(ResetMatchAgent::default().tolerance),
            }),
            AgentSpec::OrbitSearch { config } => Box::new(OrbitSearchAgent::new(config.clone())),
            AgentSpec::Remote(cfg) => Box::new(RemoteAgent::new(cfg.clone())),
            AgentSpec::Scripted { replies } => {
                if replies.is_empty() {
                    return Err(EvalError::Config("scripted agent needs replies".into()));
                }
                Box::new(ScriptedReplies::new("scripted", replies.clone()))
            }
        })
    }
}

/// Optional replacements for loop defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LoopOverrides {
    pub min_iterations: Option<u32>,
    pub max_iterations: Option<u32>,
    pub max_sequences: Option<usize>,
    pub max_steps: Option<usize>,
    pub original_rotatable: Option<bool>,
    pub prompt_variant: Option<PromptVariant>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub problem_set: PathBuf,
    pub agent: AgentSpec,
    pub condition: Condition,
    #[serde(default = "one")]
    pub n_runs: u32,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, rename = "loop")]
    pub loop_overrides: LoopOverrides,
    /// Worker threads; 0 uses one per core.
    #[serde(default)]
    pub workers: usize,
    #[serde(default)]
    pub transcripts_dir: Option<PathBuf>,
    #[serde(default)]
    pub note: Option<String>,
}

fn one() -> u32 {
    1
}

impl RunConfig {
    /// Condition flags applied last, so they win over overrides.
    pub fn loop_config(&self) -> LoopConfig {
        let mut cfg = LoopConfig::default();
        let o = &self.loop_overrides;
        if let Some(v) = o.min_iterations {
            cfg.min_iterations = v;
        }
        if let Some(v) = o.max_iterations {
            cfg.max_iterations = v;
        }
        if let Some(v) = o.max_sequences {
            cfg.max_sequences = v;
        }
        if let Some(v) = o.max_steps {
            cfg.max_steps = v;
        }
        if let Some(v) = o.original_rotatable {
            cfg.original_rotatable = v;
        }
        self.condition.apply(&mut cfg);
        if let Some(v) = o.prompt_variant {
            cfg.prompt_variant = v;
        }
        cfg
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub dataset: String,
    pub dataset_checksum: Option<String>,
    pub agent: String,
    pub condition: Option<String>,
    pub seed: u64,
    pub n_runs: u32,
    pub loop_config: Option<LoopConfig>,
    #[serde(default)]
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemOutcome {
    pub run: u32,
    pub problem_id: String,
    pub expected: OptionLabel,
    pub answer: Option<OptionLabel>,
    pub outcome: Outcome,
    pub iterations: u32,
    pub termination: Option<Termination>,
    pub transcript: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub run: u32,
    pub attempted: usize,
    pub correct: usize,
    pub wrong: usize,
    pub failed: usize,
    /// correct / (correct + wrong); none when nothing was scored.
    pub accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub provenance: Provenance,
    pub runs: Vec<RunSummary>,
    pub min_accuracy: Option<f64>,
    pub mean_accuracy: Option<f64>,
    pub max_accuracy: Option<f64>,
    pub outcomes: Vec<ProblemOutcome>,
}

impl EvalReport {
    /// Scores transcripts grouped by run. Only transcript contents are used.
    pub fn from_transcripts(
        provenance: Provenance,
        runs: &[Vec<(SessionTranscript, Option<String>)>],
    ) -> Self {
        let mut outcomes = Vec::new();
        let mut summaries = Vec::new();
        for (r, transcripts) in runs.iter().enumerate() {
            let run = r as u32 + 1;
            let mut s = RunSummary {
                run,
                attempted: transcripts.len(),
                correct: 0,
                wrong: 0,
                failed: 0,
                accuracy: None,
            };
            for (t, path) in transcripts {
                let outcome = t.outcome();
                match outcome {
                    Outcome::Correct => s.correct += 1,
                    Outcome::Wrong => s.wrong += 1,
                    Outcome::Failed => s.failed += 1,
                }
                outcomes.push(ProblemOutcome {
                    run,
                    problem_id: t.problem_id.clone(),
                    expected: t.expected,
                    answer: t.final_answer,
                    outcome,
                    iterations: t.iterations.len() as u32,
                    termination: t.termination.clone(),
                    transcript: path.clone(),
                });
            }
            let scored = s.correct + s.wrong;
            s.accuracy = (scored > 0).then(|| s.correct as f64 / scored as f64);
            summaries.push(s);
        }
        let accs: Vec<f64> = summaries.iter().filter_map(|s| s.accuracy).collect();
        let (min, mean, max) = if accs.is_empty() {
            (None, None, None)
        } else {
            (
                accs.iter().copied().reduce(f64::min),
                Some(accs.iter().sum::<f64>() / accs.len() as f64),
                accs.iter().copied().reduce(f64::max),
            )
        };
        Self {
            provenance,
            runs: summaries,
            min_accuracy: min,
            mean_accuracy: mean,
            max_accuracy: max,
            outcomes,
        }
    }

    pub fn total_failed(&self) -> usize {
        self.runs.iter().map(|r| r.failed).sum()
    }
}

/// One run's transcripts, each with the directory it was saved to.
pub type RunTranscripts = Vec<(SessionTranscript, Option<String>)>;

/// Runs every problem once per run with the given agent.
pub fn run_sessions(
    set: &ProblemSet,
    agent: &dyn Agent,
    loop_cfg: &LoopConfig,
    n_runs: u32,
    workers: usize,
    transcripts_dir: Option<&Path>,
) -> Result<Vec<RunTranscripts>, EvalError> {
    loop_cfg
        .validate()
        .map_err(|e| EvalError::Config(e.to_string()))?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| EvalError::Config(e.to_string()))?;
    let mut runs = Vec::new();
    for run in 1..=n_runs {
        let results: Result<Vec<_>, EvalError> = pool.install(|| {
            set.problems
                .par_iter()
                .map(|p| {
                    let mut session = Session::from_set(set, &p.id, loop_cfg.clone())?;
                    let transcript = run_loop(&mut session, agent)?;
                    let path = match transcripts_dir {
                        Some(dir) => {
                            let d = dir.join(format!("run{run:02}")).join(&p.id);
                            transcript.save(&d)?;
                            Some(d.display().to_string())
                        }
                        None => None,
                    };
                    Ok((transcript, path))
                })
                .collect()
        });
        runs.push(results?);
    }
    Ok(runs)
}

pub fn run_benchmark(config: &RunConfig) -> Result<EvalReport, EvalError> {
    let set = Arc::new(load_problem_set(&config.problem_set)?);
    let agent = config.agent.build(Arc::clone(&set))?;
    let loop_cfg = config.loop_config();
    let runs = run_sessions(
        &set,
        agent.as_ref(),
        &loop_cfg,
        config.n_runs,
        config.workers,
        config.transcripts_dir.as_deref(),
    )?;
    let provenance = Provenance {
        dataset: config.problem_set.display().to_string(),
        dataset_checksum: set.checksum.clone(),
        agent: agent.name().to_string(),
        condition: Some(config.condition.as_str().to_string()),
        seed: config.seed,
        n_runs: config.n_runs,
        loop_config: Some(loop_cfg),
        note: config.note.clone(),
    };
    Ok(EvalReport::from_transcripts(provenance, &runs))
}

/// Loads every `transcript.json` below `dir`, grouped by `runNN` parent
/// directory when present.
pub fn load_transcripts(
    dir: &Path,
) -> Result<Vec<RunTranscripts>, EvalError> {
    let mut found: BTreeMap<String, Vec<(SessionTranscript, Option<String>)>> = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        let entries = fs::read_dir(&d).map_err(|source| DatasetError::Io {
            path: d.clone(),
            source,
        })?;
        let mut children: Vec<PathBuf> = entries.filter_map(|e| e.ok().map(|e| e.path())).collect();
        children.sort();
        for child in children {
            if child.is_dir() {
                stack.push(child);
            } else if child.file_name().is_some_and(|n| n == "transcript.json") {
                let tdir = child.parent().expect("file has a parent");
                let t = SessionTranscript::load(tdir)?;
                let run = tdir
                    .parent()
                    .and_then(|p| p.file_name())
                    .map(|n| n.to_string_lossy().to_string())
                    .filter(|n| n.starts_with("run"))
                    .unwrap_or_else(|| "run01".into());
                found
                    .entry(run)
                    .or_default()
                    .push((t, Some(tdir.display().to_string())));
            }
        }
    }
    let mut runs: Vec<_> = found.into_values().collect();
    for r in &mut runs {
        r.sort_by(|a, b| a.0.problem_id.cmp(&b.0.problem_id));
    }
    Ok(runs)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeRow {
    pub id: String,
    pub truth: String,
    pub predicted: Option<String>,
    pub raw: String,
    pub direction_correct: bool,
    /// Absolute angle error, only when the direction is right.
    pub angle_error: Option<f64>,
    pub multi: bool,
    pub unparsed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirectionAccuracy {
    pub correct: usize,
    pub total: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub agent: String,
    pub pairs_checksum: String,
    pub rows: Vec<ProbeRow>,
    /// Keyed by the true direction.
    pub per_direction: BTreeMap<String, DirectionAccuracy>,
    pub direction_accuracy: f64,
    pub angle_mae: Option<f64>,
    /// Counts keyed by true direction, then predicted direction or
    /// `unparsed`.
    pub confusion: BTreeMap<String, BTreeMap<String, usize>>,
}

pub const UNPARSED: &str = "unparsed";

fn score_probe(pair: &ProbePair, raw: String) -> ProbeRow {
    let pred = parse_probe_reply(&raw);
    let truth = pair.applied;
    let primary = pred.primary();
    let direction_correct = primary.is_some_and(|p| p.direction == truth.direction);
    ProbeRow {
        id: pair.id.clone(),
        truth: truth.to_string(),
        predicted: primary.map(|t| t.to_string()),
        raw,
        direction_correct,
        angle_error: primary
            .filter(|_| direction_correct)
            .map(|p| (p.angle_deg - truth.angle_deg).abs()),
        multi: pred.is_multi(),
        unparsed: pred.unparsed,
    }
}

pub fn probe_report(agent: &str, pairs: &[ProbePair], rows: Vec<ProbeRow>) -> ProbeReport {
    let mut per_direction: BTreeMap<String, DirectionAccuracy> = BTreeMap::new();
    let mut confusion: BTreeMap<String, BTreeMap<String, usize>> = BTreeMap::new();
    for (pair, row) in pairs.iter().zip(&rows) {
        let key = pair.applied.direction.to_string();
        let e = per_direction.entry(key.clone()).or_insert(DirectionAccuracy {
            correct: 0,
            total: 0,
        });
        e.total += 1;
        e.correct += usize::from(row.direction_correct);
        let predicted = row
            .predicted
            .as_ref()
            .and_then(|p| parse_probe_reply(p).primary())
            .map(|t: Turn| t.direction.to_string())
            .unwrap_or_else(|| UNPARSED.to_string());
        *confusion.entry(key).or_default().entry(predicted).or_insert(0) += 1;
    }
    let correct = rows.iter().filter(|r| r.direction_correct).count();
    let errors: Vec<f64> = rows.iter().filter_map(|r| r.angle_error).collect();
    ProbeReport {
        agent: agent.to_string(),
        pairs_checksum: pairs_checksum(pairs),
        direction_accuracy: if rows.is_empty() {
            0.0
        } else {
            correct as f64 / rows.len() as f64
        },
        angle_mae: (!errors.is_empty()).then(|| errors.iter().sum::<f64>() / errors.len() as f64),
        per_direction,
        confusion,
        rows,
    }
}

/// One prediction per pair; unusable replies are kept as flagged rows.
pub fn run_probe_eval(agent: &dyn Agent, pairs: &[ProbePair]) -> Result<ProbeReport, EvalError> {
    if !agent.accepts_images() {
        return Err(EvalError::Agent(format!(
            "{} does not accept images",
            agent.name()
        )));
    }
    let rows: Vec<ProbeRow> = pairs
        .par_iter()
        .map(|pair| {
            let raw = match agent.complete(&probe_prompt(pair)) {
                Ok(text) => text,
                Err(AgentError::InvalidReply { raw, .. }) => raw,
                Err(e) => {
                    log::warn!("{}: {e}", pair.id);
                    String::new()
                }
            };
            score_probe(pair, raw)
        })
        .collect();
    Ok(probe_report(agent.name(), pairs, rows))
}

/// Outcome of re-applying a rotation estimate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EulerVerdict {
    Match,
    /// Matches only after negating one axis; counted as a failure.
    Mirror,
    Fail,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EulerCheck {
    pub verdict: EulerVerdict,
    pub diff: f64,
    /// Axis whose sign flip produced the match, for mirrors.
    pub flipped_axis: Option<String>,
}

pub const DEFAULT_MATCH_TAU: f64 = 0.01;

pub fn verify_euler_prediction(
    pair: &ProbePair,
    predicted: &EulerAnglesDeg,
    rig: &CameraRig,
    settings: &RenderSettings,
    tau: f64,
) -> Result<EulerCheck, RenderError> {
    let diff_for = |e: &EulerAnglesDeg| -> Result<f64, RenderError> {
        let pose = pose_from_euler(e).then_after(&pair.base_pose);
        image_diff(&render(&pair.object, &pose, rig, settings)?, &pair.after)
    };
    let diff = diff_for(predicted)?;
    if diff < tau {
        return Ok(EulerCheck {
            verdict: EulerVerdict::Match,
            diff,
            flipped_axis: None,
        });
    }
    let flips = [
        ("pitch", EulerAnglesDeg::new(-predicted.pitch, predicted.yaw, predicted.roll)),
        ("yaw", EulerAnglesDeg::new(predicted.pitch, -predicted.yaw, predicted.roll)),
        ("roll", EulerAnglesDeg::new(predicted.pitch, predicted.yaw, -predicted.roll)),
    ];
    for (axis, e) in flips {
        if diff_for(&e)? < tau {
            return Ok(EulerCheck {
                verdict: EulerVerdict::Mirror,
                diff,
                flipped_axis: Some(axis.to_string()),
            });
        }
    }
    Ok(EulerCheck {
        verdict: EulerVerdict::Fail,
        diff,
        flipped_axis: None,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EulerRow {
    pub id: String,
    pub truth: String,
    pub predicted: EulerAnglesDeg,
    pub check: EulerCheck,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EulerReport {
    pub pairs_checksum: String,
    pub tau: f64,
    pub rows: Vec<EulerRow>,
    pub matches: usize,
    pub mirrors: usize,
    pub fails: usize,
    pub missing: Vec<String>,
}

pub fn verify_predictions(
    pairs: &[ProbePair],
    predictions: &BTreeMap<String, EulerAnglesDeg>,
    rig: &CameraRig,
    settings: &RenderSettings,
    tau: f64,
) -> Result<EulerReport, RenderError> {
    let mut report = EulerReport {
        pairs_checksum: pairs_checksum(pairs),
        tau,
        rows: Vec::new(),
        matches: 0,
        mirrors: 0,
        fails: 0,
        missing: Vec::new(),
    };
    for pair in pairs {
        let Some(pred) = predictions.get(&pair.id) else {
            report.missing.push(pair.id.clone());
            continue;
        };
        let check = verify_euler_prediction(pair, pred, rig, settings, tau)?;
        match check.verdict {
            EulerVerdict::Match => report.matches += 1,
            EulerVerdict::Mirror => report.mirrors += 1,
            EulerVerdict::Fail => report.fails += 1,
        }
        report.rows.push(EulerRow {
            id: pair.id.clone(),
            truth: pair.ground_truth(),
            predicted: *pred,
            check,
        });
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::TaggedReplies;
    use crate::forge::marker_object;
    use crate::probes::make_direction_probes;
    use crate::protocol::Direction;
    use crate::render::presentation_pose;
    use std::collections::HashMap;

    fn pairs() -> Vec<ProbePair> {
        make_direction_probes(
            "m",
            &marker_object(),
            presentation_pose(),
            15.0,
            &CameraRig::default(),
            &RenderSettings::default(),
        )
        .unwrap()
    }

    #[test]
    fn ground_truth_stub_scores_perfectly() {
        let pairs = pairs();
        let replies: HashMap<String, String> =
            pairs.iter().map(|p| (p.id.clone(), p.ground_truth())).collect();
        let report = run_probe_eval(&TaggedReplies::new("truth", replies), &pairs).unwrap();
        assert_eq!(report.rows.len(), 6);
        assert_eq!(report.direction_accuracy, 1.0);
        assert_eq!(report.angle_mae, Some(0.0));
    }

    #[test]
    fn wrong_direction_and_unparsed_rows() {
        let pairs = pairs();
        let mut replies = HashMap::new();
        let down = pairs.iter().find(|p| p.applied.direction == Direction::Down).unwrap();
        replies.insert(down.id.clone(), "up:15".to_string());
        let report = run_probe_eval(
            &TaggedReplies::new("stub", replies).with_fallback(""),
            &pairs,
        )
        .unwrap();
        assert_eq!(report.rows.len(), 6);
        let row = report.rows.iter().find(|r| r.id == down.id).unwrap();
        assert!(!row.direction_correct);
        assert_eq!(report.confusion["down"]["up"], 1);
        assert_eq!(report.rows.iter().filter(|r| r.unparsed).count(), 5);
        assert_eq!(report.angle_mae, None);
    }

    #[test]
    fn condition_flags() {
        let cfg = RunConfig {
            problem_set: "x".into(),
            agent: AgentSpec::VoxelOracle,
            condition: Condition::C1Reset,
            n_runs: 1,
            seed: 0,
            loop_overrides: LoopOverrides::default(),
            workers: 0,
            transcripts_dir: None,
            note: None,
        };
        assert!(cfg.loop_config().reset_enabled);
        let c2 = RunConfig {
            condition: Condition::C2Hint360,
            ..cfg.clone()
        };
        assert!(c2.loop_config().hint_360 && !c2.loop_config().reset_enabled);
    }

    #[test]
    fn run_config_json() {
        let text = r#"{
            "problem_set": "data/default-set",
            "agent": {"kind": "orbit-search"},
            "condition": "c2-360hint",
            "n_runs": 2,
            "loop": {"min_iterations": 3}
        }"#;
        let cfg: RunConfig = serde_json::from_str(text).unwrap();
        assert_eq!(cfg.n_runs, 2);
        assert_eq!(cfg.loop_config().min_iterations, 3);
        assert!(matches!(cfg.agent, AgentSpec::OrbitSearch { .. }));
    }
}
