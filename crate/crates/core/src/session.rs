//! The stateful turn loop between an agent and the imagery engine.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::{Agent, AgentError};
use crate::dataset::{write_atomic, DatasetError, ProblemSet};
use crate::forge::Problem;
use crate::geometry::{apply_camera_rotation, Polycube, Pose};
use crate::protocol::{
    format_sequence, parse_sequence, parse_turn_output, system_prompt, OptionLabel,
    PartialConclusion, PromptOptions, PromptVariant, RotationCommand, Target, TargetGrid,
    TurnContext, TurnOutput,
};
use crate::render::{
    encode_png, render, CameraRig, RasterImage, RenderError, RenderSettings, SnapshotGrid,
};

/// Label on fill snapshots of targets that received no commands.
pub const CURRENT_LABEL: &str = "current";

#[derive(Debug, Error)]
pub enum SessionError {
    #[error("invalid loop config: {0}")]
    Config(String),
    #[error("session already finished")]
    Finished,
    #[error("unknown problem {0}")]
    UnknownProblem(String),
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct LoopConfig {
    pub min_iterations: u32,
    pub max_iterations: u32,
    pub reset_enabled: bool,
    pub hint_360: bool,
    pub prompt_variant: PromptVariant,
    /// Command sequences executed per iteration; extras are rejected.
    pub max_sequences: usize,
    /// Steps allowed in one sequence.
    pub max_steps: usize,
    pub original_rotatable: bool,
}

impl Default for LoopConfig {
    fn default() -> Self {
        Self {
            min_iterations: 5,
            max_iterations: 15,
            reset_enabled: false,
            hint_360: false,
            prompt_variant: PromptVariant::Incremental,
            max_sequences: 8,
            max_steps: 64,
            original_rotatable: false,
        }
    }
}

impl LoopConfig {
    pub fn validate(&self) -> Result<(), SessionError> {
        if self.min_iterations < 1 || self.min_iterations > self.max_iterations {
            return Err(SessionError::Config(format!(
                "need 1 <= min_iterations ({}) <= max_iterations ({})",
                self.min_iterations, self.max_iterations
            )));
        }
        if self.max_sequences == 0 || self.max_steps == 0 {
            return Err(SessionError::Config(
                "sequence and step caps must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn prompt_options(&self) -> PromptOptions {
        PromptOptions {
            variant: self.prompt_variant,
            min_iterations: self.min_iterations,
            reset_enabled: self.reset_enabled,
            hint_360: self.hint_360,
            original_rotatable: self.original_rotatable,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectState {
    pub target: Target,
    pub object: Polycube,
    pub calibrated_pose: Pose,
    pub canonical_pose: Pose,
    pub pose: Pose,
    pub history: Vec<(RotationCommand, Pose)>,
}

impl ObjectState {
    pub fn apply(&mut self, cmd: &RotationCommand) -> Pose {
        self.pose = step(&self.pose, cmd, &self.canonical_pose);
        self.history.push((*cmd, self.pose));
        self.pose
    }

    /// Pose obtained by replaying the history from the calibrated pose.
    pub fn replay(&self) -> Pose {
        self.history
            .iter()
            .fold(self.calibrated_pose, |p, (cmd, _)| step(&p, cmd, &self.canonical_pose))
    }
}

fn step(pose: &Pose, cmd: &RotationCommand, canonical: &Pose) -> Pose {
    match cmd {
        RotationCommand::Turn(t) => apply_camera_rotation(pose, t),
        RotationCommand::Reset => *canonical,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutedSequence {
    pub target: Target,
    pub rotation_sequence: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridRecord {
    pub target: Target,
    pub labels: Vec<String>,
    /// File name inside the transcript directory.
    pub file: String,
    #[serde(skip)]
    pub png: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub index: u32,
    pub raw_output: String,
    pub turn_output: Option<TurnOutput>,
    pub parse_error: Option<String>,
    pub executed: Vec<ExecutedSequence>,
    pub grids: Vec<GridRecord>,
    /// Rejected sequences and other problems, echoed to the agent.
    pub errors: Vec<String>,
    /// Non-error notices (e.g. a deferred final answer), also echoed.
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Termination {
    /// The agent gave a final answer on or after the minimum iteration.
    Answered,
    /// Budget exhausted; the answer came from the last partial conclusion.
    BudgetTieBreak,
    /// Budget exhausted with no usable conclusion.
    Abstained,
    /// The agent could not be reached or was misconfigured.
    Failed { reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Correct,
    Wrong,
    /// Abstained or failed: excluded from accuracy denominators.
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionTranscript {
    pub problem_id: String,
    pub agent: String,
    pub config: LoopConfig,
    pub iterations: Vec<IterationRecord>,
    pub final_answer: Option<OptionLabel>,
    pub termination: Option<Termination>,
    pub expected: OptionLabel,
    pub correct: Option<bool>,
    pub final_poses: BTreeMap<Target, Pose>,
    /// Seconds per agent turn. Kept out of `transcript.json`.
    #[serde(skip)]
    pub timings: Vec<f64>,
}

impl SessionTranscript {
    pub fn outcome(&self) -> Outcome {
        match (self.final_answer, &self.termination) {
            (Some(a), Some(Termination::Answered | Termination::BudgetTieBreak)) => {
                if a == self.expected {
                    Outcome::Correct
                } else {
                    Outcome::Wrong
                }
            }
            _ => Outcome::Failed,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("transcript serializes")
    }

    /// `transcript.json`, one PNG per grid, and `timings.json`.
    pub fn save(&self, dir: &Path) -> Result<(), DatasetError> {
        fs::create_dir_all(dir).map_err(|source| DatasetError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
        for it in &self.iterations {
            for g in &it.grids {
                if !g.png.is_empty() {
                    write_atomic(&dir.join(&g.file), &g.png)?;
                }
            }
        }
        write_atomic(&dir.join("transcript.json"), self.to_json().as_bytes())?;
        let timings = serde_json::to_vec(&self.timings).expect("numbers serialize");
        write_atomic(&dir.join("timings.json"), &timings)
    }

    pub fn load(dir: &Path) -> Result<Self, DatasetError> {
        let path = dir.join("transcript.json");
        let bytes = fs::read(&path).map_err(|source| DatasetError::Io {
            path: path.clone(),
            source,
        })?;
        let mut t: SessionTranscript =
            serde_json::from_slice(&bytes).map_err(|e| DatasetError::Corrupt {
                path,
                reason: e.to_string(),
            })?;
        if let Ok(b) = fs::read(dir.join("timings.json")) {
            t.timings = serde_json::from_slice(&b).unwrap_or_default();
        }
        for it in &mut t.iterations {
            for g in &mut it.grids {
                g.png = fs::read(dir.join(&g.file)).unwrap_or_default();
            }
        }
        Ok(t)
    }

    /// Markdown thread: one section per iteration with the agent's reply,
    /// executed commands and grid links.
    pub fn to_markdown(&self) -> String {
        let mut md = format!("# Session {} ({})\n\n", self.problem_id, self.agent);
        for it in &self.iterations {
            md.push_str(&format!("## Iteration {}\n\n", it.index));
            if let Some(t) = &it.turn_output {
                md.push_str(&format!("Rationale: {}\n\n", t.memory.rationale));
                let pc = &t.memory.partial_conclusion;
                md.push_str(&format!(
                    "Partial conclusion: A={}, B={}, C={}\n\n",
                    pc.a.as_str(),
                    pc.b.as_str(),
                    pc.c.as_str()
                ));
            } else if let Some(e) = &it.parse_error {
                md.push_str(&format!("Unparsed reply ({e}):\n\n```\n{}\n```\n\n", it.raw_output));
            }
            for s in &it.executed {
                md.push_str(&format!("- `{}`: `{}`\n", s.target, s.rotation_sequence));
            }
            for e in it.errors.iter().chain(&it.notes) {
                md.push_str(&format!("- note: {e}\n"));
            }
            for g in &it.grids {
                md.push_str(&format!("\n![{} {}]({})\n", g.target, g.labels.join(" | "), g.file));
            }
            md.push('\n');
        }
        match (&self.termination, self.final_answer) {
            (Some(t), Some(a)) => md.push_str(&format!("Answer: {a} ({t:?})\n")),
            (Some(t), None) => md.push_str(&format!("No answer ({t:?})\n")),
            (None, _) => md.push_str("Unfinished\n"),
        }
        md
    }
}

/// Result of executing one turn.
#[derive(Debug, Clone)]
pub struct TurnResult {
    pub index: u32,
    pub grids: Vec<TargetGrid>,
    pub errors: Vec<String>,
    pub notes: Vec<String>,
    pub finished: bool,
}

pub struct Session {
    problem: Problem,
    problem_image: RasterImage,
    rig: CameraRig,
    settings: RenderSettings,
    config: LoopConfig,
    agent_name: String,
    system_prompt: String,
    objects: BTreeMap<Target, ObjectState>,
    iterations: Vec<IterationRecord>,
    previous_outputs: Vec<String>,
    feedback: Vec<String>,
    last_grids: Vec<TargetGrid>,
    last_conclusion: Option<PartialConclusion>,
    final_answer: Option<OptionLabel>,
    termination: Option<Termination>,
    timings: Vec<f64>,
}

pub fn start_session(
    problem: &Problem,
    problem_image: RasterImage,
    rig: CameraRig,
    settings: RenderSettings,
    config: LoopConfig,
) -> Result<Session, SessionError> {
    config.validate()?;
    rig.validate()?;
    let objects = Target::ALL
        .into_iter()
        .map(|t| {
            let pose = problem.calibrated_pose(t);
            (
                t,
                ObjectState {
                    target: t,
                    object: problem.object(t).clone(),
                    calibrated_pose: pose,
                    canonical_pose: problem.canonical_pose(t),
                    pose,
                    history: Vec::new(),
                },
            )
        })
        .collect();
    Ok(Session {
        system_prompt: system_prompt(&config.prompt_options()),
        problem: problem.clone(),
        problem_image,
        rig,
        settings,
        config,
        agent_name: String::new(),
        objects,
        iterations: Vec::new(),
        previous_outputs: Vec::new(),
        feedback: Vec::new(),
        last_grids: Vec::new(),
        last_conclusion: None,
        final_answer: None,
        termination: None,
        timings: Vec::new(),
    })
}

impl Session {
    pub fn from_set(set: &ProblemSet, id: &str, config: LoopConfig) -> Result<Self, SessionError> {
        let problem = set
            .get(id)
            .ok_or_else(|| SessionError::UnknownProblem(id.to_string()))?;
        let image = set
            .problem_image(id)
            .cloned()
            .ok_or_else(|| SessionError::UnknownProblem(id.to_string()))?;
        start_session(problem, image, *set.rig(), set.settings().clone(), config)
    }

    pub fn problem(&self) -> &Problem {
        &self.problem
    }

    pub fn config(&self) -> &LoopConfig {
        &self.config
    }

    pub fn set_agent_name(&mut self, name: impl Into<String>) {
        self.agent_name = name.into();
    }

    /// Completed iterations so far.
    pub fn counter(&self) -> u32 {
        self.iterations.len() as u32
    }

    pub fn is_finished(&self) -> bool {
        self.termination.is_some()
    }

    pub fn object(&self, target: Target) -> &ObjectState {
        &self.objects[&target]
    }

    pub fn iterations(&self) -> &[IterationRecord] {
        &self.iterations
    }

    pub fn final_answer(&self) -> Option<OptionLabel> {
        self.final_answer
    }

    pub fn termination(&self) -> Option<&Termination> {
        self.termination.as_ref()
    }

    pub fn last_grids(&self) -> &[TargetGrid] {
        &self.last_grids
    }

    pub fn snapshot(&self, target: Target) -> Result<RasterImage, RenderError> {
        let s = &self.objects[&target];
        render(&s.object, &s.pose, &self.rig, &self.settings)
    }

    pub fn build_context(&self) -> Result<TurnContext, SessionError> {
        Ok(TurnContext {
            problem_id: self.problem.id.clone(),
            system_prompt: self.system_prompt.clone(),
            statement: self.problem.statement.clone(),
            problem_image: self.problem_image.clone(),
            iteration: self.counter() + 1,
            previous_outputs: self.previous_outputs.clone(),
            feedback: self.feedback.clone(),
            last_grids: self.last_grids.clone(),
            original_snapshot: self.snapshot(Target::Original)?,
        })
    }

    pub fn record_timing(&mut self, seconds: f64) {
        self.timings.push(seconds);
    }

    /// Ends the session without an answer.
    pub fn fail(&mut self, reason: impl Into<String>) {
        if self.termination.is_none() {
            self.termination = Some(Termination::Failed {
                reason: reason.into(),
            });
        }
    }

    /// Parses and executes one raw agent reply.
    pub fn submit_turn(&mut self, raw: &str) -> Result<TurnResult, SessionError> {
        match parse_turn_output(raw) {
            Ok(turn) => self.execute(raw, Some(turn), None),
            Err(e) => self.execute(raw, None, Some(e.to_string())),
        }
    }

    /// Executes an already-parsed turn.
    pub fn submit_parsed(&mut self, raw: &str, turn: TurnOutput) -> Result<TurnResult, SessionError> {
        self.execute(raw, Some(turn), None)
    }

    fn execute(
        &mut self,
        raw: &str,
        turn: Option<TurnOutput>,
        parse_error: Option<String>,
    ) -> Result<TurnResult, SessionError> {
        if self.is_finished() {
            return Err(SessionError::Finished);
        }
        let index = self.counter() + 1;
        let mut errors = Vec::new();
        let mut notes = Vec::new();
        let mut executed = Vec::new();
        let mut cells: BTreeMap<Target, SnapshotGrid> = BTreeMap::new();

        if let Some(e) = &parse_error {
            errors.push(format!("your reply could not be used ({e}); nothing was executed"));
        }
        if let Some(turn) = &turn {
            if turn.iteration_number != index {
                notes.push(format!(
                    "iteration_number was {} but this is iteration {index}",
                    turn.iteration_number
                ));
            }
            for (i, req) in turn.commands.iter().enumerate() {
                if i >= self.config.max_sequences {
                    errors.push(format!(
                        "only {} sequences run per iteration; `{}` for {} was skipped",
                        self.config.max_sequences, req.rotation_sequence, req.target
                    ));
                    continue;
                }
                if req.target == Target::Original && !self.config.original_rotatable {
                    errors.push(format!(
                        "the original cannot be rotated; `{}` was rejected",
                        req.rotation_sequence
                    ));
                    continue;
                }
                let cmds = match parse_sequence(&req.rotation_sequence) {
                    Ok(c) => c,
                    Err(e) => {
                        errors.push(format!(
                            "{}: `{}` rejected: {e}",
                            req.target, req.rotation_sequence
                        ));
                        continue;
                    }
                };
                if !self.config.reset_enabled && cmds.contains(&RotationCommand::Reset) {
                    errors.push(format!(
                        "{}: `{}` rejected: reset is not available",
                        req.target, req.rotation_sequence
                    ));
                    continue;
                }
                if cmds.len() > self.config.max_steps {
                    errors.push(format!(
                        "{}: sequence of {} steps rejected (limit {})",
                        req.target,
                        cmds.len(),
                        self.config.max_steps
                    ));
                    continue;
                }
                let state = self.objects.get_mut(&req.target).expect("all targets present");
                let grid = cells.entry(req.target).or_default();
                for cmd in &cmds {
                    let pose = state.apply(cmd);
                    grid.push(render(&state.object, &pose, &self.rig, &self.settings)?, cmd.to_string());
                }
                executed.push(ExecutedSequence {
                    target: req.target,
                    rotation_sequence: format_sequence(&cmds),
                });
            }
        }
        for t in Target::ALL {
            if let std::collections::btree_map::Entry::Vacant(e) = cells.entry(t) {
                let mut g = SnapshotGrid::new();
                g.push(self.snapshot(t)?, CURRENT_LABEL);
                e.insert(g);
            }
        }

        if let Some(turn) = &turn {
            self.last_conclusion = Some(turn.memory.partial_conclusion);
            if let Some(answer) = turn.final_answer {
                if index < self.config.min_iterations {
                    notes.push(format!(
                        "final answer {answer} not accepted: at least {} iterations are required \
and this was iteration {index}",
                        self.config.min_iterations
                    ));
                } else {
                    self.final_answer = Some(answer);
                    self.termination = Some(Termination::Answered);
                }
            }
        }
        if self.termination.is_none() && index >= self.config.max_iterations {
            let pick = self
                .last_conclusion
                .and_then(|c| c.odd_vote().or_else(|| c.last_standing()));
            match pick {
                Some(a) => {
                    self.final_answer = Some(a);
                    self.termination = Some(Termination::BudgetTieBreak);
                }
                None => self.termination = Some(Termination::Abstained),
            }
        }

        let mut grids = Vec::new();
        let mut records = Vec::new();
        for (target, grid) in cells {
            let composite = grid.compose()?;
            records.push(GridRecord {
                target,
                labels: grid.cells.iter().map(|(_, l)| l.clone()).collect(),
                file: format!("iter{index:02}-{}.png", target.as_str()),
                png: encode_png(&composite)?,
            });
            grids.push(TargetGrid { target, grid });
        }

        self.iterations.push(IterationRecord {
            index,
            raw_output: raw.to_string(),
            turn_output: turn,
            parse_error,
            executed,
            grids: records,
            errors: errors.clone(),
            notes: notes.clone(),
        });
        self.previous_outputs.push(raw.to_string());
        self.feedback = errors.iter().chain(&notes).cloned().collect();
        self.last_grids = grids.clone();
        Ok(TurnResult {
            index,
            grids,
            errors,
            notes,
            finished: self.is_finished(),
        })
    }

    pub fn transcript(&self) -> SessionTranscript {
        SessionTranscript {
            problem_id: self.problem.id.clone(),
            agent: self.agent_name.clone(),
            config: self.config.clone(),
            iterations: self.iterations.clone(),
            final_answer: self.final_answer,
            termination: self.termination.clone(),
            expected: self.problem.odd,
            correct: self.final_answer.map(|a| a == self.problem.odd),
            final_poses: self.objects.iter().map(|(t, s)| (*t, s.pose)).collect(),
            timings: self.timings.clone(),
        }
    }
}

/// Drives the session with the agent until it terminates.
pub fn run_loop(session: &mut Session, agent: &dyn Agent) -> Result<SessionTranscript, SessionError> {
    session.set_agent_name(agent.name());
    while !session.is_finished() {
        let ctx = session.build_context()?;
        let started = Instant::now();
        let reply = agent.take_turn(&ctx);
        session.record_timing(started.elapsed().as_secs_f64());
        match reply {
            Ok(raw) => {
                session.submit_turn(&raw)?;
            }
            Err(AgentError::InvalidReply { raw, .. }) => {
                session.submit_turn(&raw)?;
            }
            Err(e) => session.fail(e.to_string()),
        }
    }
    Ok(session.transcript())
}

/// Replays executed sequences from the calibrated poses.
pub fn replay_poses(problem: &Problem, transcript: &SessionTranscript) -> BTreeMap<Target, Pose> {
    let mut poses: BTreeMap<Target, Pose> =
        Target::ALL.into_iter().map(|t| (t, problem.calibrated_pose(t))).collect();
    for it in &transcript.iterations {
        for s in &it.executed {
            let cmds = parse_sequence(&s.rotation_sequence).unwrap_or_default();
            let canonical = problem.canonical_pose(s.target);
            let pose = poses.get_mut(&s.target).expect("all targets present");
            for c in &cmds {
                *pose = step(pose, c, &canonical);
            }
        }
    }
    poses
}
