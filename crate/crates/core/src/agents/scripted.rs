//! Deterministic agents that mechanize the experimental conditions.
//!
//! They keep their working state in the `rationale` field of their own
//! replies (a `state=` JSON suffix) and read it back from the previous
//! outputs in the context, so they stay stateless between turns.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{Agent, AgentError};
use crate::dataset::ProblemSet;
use crate::protocol::{
    parse_turn_output, prompt_min_iterations, CommandRequest, Direction, Memory, OptionLabel,
    PartialConclusion, RotationCommand, Target, Turn, TurnContext, TurnOutput, Verdict,
};
use crate::render::{image_diff, RasterImage};

const STATE_MARK: &str = "state=";

/// Agent working memory carried inside the rationale text.
pub trait ScriptedState: Serialize + for<'de> Deserialize<'de> + Default {
    fn from_context(ctx: &TurnContext) -> Self {
        ctx.previous_outputs
            .last()
            .and_then(|raw| parse_turn_output(raw).ok())
            .and_then(|t| {
                let at = t.memory.rationale.rfind(STATE_MARK)?;
                serde_json::from_str(&t.memory.rationale[at + STATE_MARK.len()..]).ok()
            })
            .unwrap_or_default()
    }

    fn rationale(&self, text: &str) -> String {
        format!(
            "{text} {STATE_MARK}{}",
            serde_json::to_string(self).expect("state serializes")
        )
    }
}

fn snapshot_only() -> Vec<CommandRequest> {
    vec![CommandRequest::new(
        Target::A,
        &[RotationCommand::Turn(Turn::new(Direction::Left, 0.0))],
    )]
}

fn reply(
    rationale: String,
    conclusion: PartialConclusion,
    iteration: u32,
    commands: Vec<CommandRequest>,
    final_answer: Option<OptionLabel>,
) -> String {
    TurnOutput {
        memory: Memory {
            rationale,
            partial_conclusion: conclusion,
        },
        iteration_number: iteration,
        commands,
        final_answer,
    }
    .to_fenced()
}

fn conclusion_for(odd: Option<OptionLabel>, ruled_out: &[OptionLabel]) -> PartialConclusion {
    let mut pc = PartialConclusion::default();
    for l in ruled_out {
        pc.set(*l, Verdict::ProbablyNotTheAnswer);
    }
    if let Some(l) = odd {
        pc.set(l, Verdict::ProbablyTheOddOne);
    }
    pc
}

fn min_iterations(ctx: &TurnContext) -> u32 {
    prompt_min_iterations(&ctx.system_prompt).unwrap_or(1)
}

/// Ground-truth agent that reads the problem's polycubes out of band and
/// answers with the option that is not a rotation of the original.
pub struct VoxelOracleAgent {
    set: Arc<ProblemSet>,
}

impl VoxelOracleAgent {
    pub fn new(set: Arc<ProblemSet>) -> Self {
        Self { set }
    }
}

impl Agent for VoxelOracleAgent {
    fn name(&self) -> &str {
        "voxel-oracle"
    }

    fn accepts_images(&self) -> bool {
        false
    }

    fn take_turn(&self, ctx: &TurnContext) -> Result<String, AgentError> {
        let problem = self
            .set
            .get(&ctx.problem_id)
            .ok_or_else(|| AgentError::Config(format!("unknown problem {}", ctx.problem_id)))?;
        let odd = match problem.odd_options().as_slice() {
            [one] => Some(*one),
            _ => None,
        };
        let ruled_out: Vec<OptionLabel> =
            OptionLabel::ALL.into_iter().filter(|l| Some(*l) != odd).collect();
        let done = ctx.iteration >= min_iterations(ctx) && odd.is_some();
        Ok(reply(
            "Compared the voxel sets of every option with the original.".into(),
            conclusion_for(odd, if odd.is_some() { &ruled_out } else { &[] }),
            ctx.iteration,
            if done { Vec::new() } else { snapshot_only() },
            if done { odd } else { None },
        ))
    }
}

/// Pairwise comparisons of the options' latest snapshots, one entry per
/// canonical view: [A=B, A=C, B=C].
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ResetState {
    pub views: Vec<[bool; 3]>,
    pub rejected: bool,
}

impl ScriptedState for ResetState {}

const PAIRS: [(OptionLabel, OptionLabel); 3] = [
    (OptionLabel::A, OptionLabel::B),
    (OptionLabel::A, OptionLabel::C),
    (OptionLabel::B, OptionLabel::C),
];

/// Resets every option to its canonical pose and compares front, top and
/// side views; the option that matches neither of the others is odd.
pub struct ResetMatchAgent {
    /// Largest image difference still counted as identical.
    pub tolerance: f64,
}

impl Default for ResetMatchAgent {
    fn default() -> Self {
        Self { tolerance: 1e-3 }
    }
}

impl ResetMatchAgent {
    fn view_sequences() -> [&'static str; 3] {
        ["reset", "reset,down:90", "reset,left:90"]
    }

    fn latest(ctx: &TurnContext, label: OptionLabel) -> Option<&RasterImage> {
        ctx.last_grids
            .iter()
            .find(|g| g.target == Target::from(label))
            .and_then(|g| g.grid.last_image())
    }

    fn decide(views: &[[bool; 3]]) -> Option<OptionLabel> {
        let consistent: Vec<usize> = (0..3).filter(|&i| views.iter().all(|v| v[i])).collect();
        match consistent.as_slice() {
            [i] => {
                let (x, y) = PAIRS[*i];
                OptionLabel::ALL.into_iter().find(|l| *l != x && *l != y)
            }
            _ => None,
        }
    }
}

impl Agent for ResetMatchAgent {
    fn name(&self) -> &str {
        "reset-match"
    }

    fn accepts_images(&self) -> bool {
        true
    }

    fn take_turn(&self, ctx: &TurnContext) -> Result<String, AgentError> {
        let mut state = ResetState::from_context(ctx);
        if ctx.feedback.iter().any(|f| f.contains("reset is not available")) {
            state.rejected = true;
        }
        if state.rejected {
            return Ok(reply(
                state.rationale("Reset is unavailable, so views cannot be aligned."),
                PartialConclusion::default(),
                ctx.iteration,
                snapshot_only(),
                None,
            ));
        }
        let issued = ctx.iteration > 1 && state.views.len() < Self::view_sequences().len();
        if issued {
            let imgs: Option<Vec<&RasterImage>> =
                OptionLabel::ALL.iter().map(|l| Self::latest(ctx, *l)).collect();
            if let Some(imgs) = imgs {
                let same = |a: usize, b: usize| {
                    image_diff(imgs[a], imgs[b]).is_ok_and(|d| d <= self.tolerance)
                };
                state.views.push([same(0, 1), same(0, 2), same(1, 2)]);
            }
        }
        let next_view = state.views.len();
        if next_view < Self::view_sequences().len() {
            let seq = Self::view_sequences()[next_view];
            let commands = OptionLabel::ALL
                .iter()
                .map(|l| CommandRequest {
                    target: (*l).into(),
                    rotation_sequence: seq.to_string(),
                })
                .collect();
            return Ok(reply(
                state.rationale(&format!("Requesting canonical view `{seq}` for every option.")),
                PartialConclusion::default(),
                ctx.iteration,
                commands,
                None,
            ));
        }
        let odd = Self::decide(&state.views);
        let ruled_out: Vec<OptionLabel> = match odd {
            Some(o) => OptionLabel::ALL.into_iter().filter(|l| *l != o).collect(),
            None => Vec::new(),
        };
        let done = odd.is_some() && ctx.iteration >= min_iterations(ctx);
        let text = match odd {
            Some(o) => format!("After reset, {o} differs from the other two options."),
            None => "Canonical views did not single out one option.".to_string(),
        };
        Ok(reply(
            state.rationale(&text),
            conclusion_for(odd, &ruled_out),
            ctx.iteration,
            if done { Vec::new() } else { snapshot_only() },
            if done { odd } else { None },
        ))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrbitSearchConfig {
    /// Yaw step of each sweep, in degrees; must divide 360.
    pub step_deg: u32,
    /// Elevations tried after the plain sweep, in order.
    pub elevations_deg: Vec<f64>,
    /// Largest difference from the original's snapshot counted as a match.
    pub match_threshold: f64,
}

impl Default for OrbitSearchConfig {
    fn default() -> Self {
        Self {
            step_deg: 30,
            elevations_deg: vec![30.0, -30.0, 60.0, -60.0],
            match_threshold: 0.002,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct OrbitState {
    /// Searches issued so far; 0 = none.
    pub phase: usize,
    /// Smallest difference to the original seen per option.
    pub best: BTreeMap<OptionLabel, f64>,
}

impl ScriptedState for OrbitState {}

/// Sweeps every option through full turns (first about the vertical axis,
/// then about the vertical axis at several tilts) and compares each frame
/// with the original's snapshot.
#[derive(Default)]
pub struct OrbitSearchAgent {
    pub config: OrbitSearchConfig,
}

impl OrbitSearchAgent {
    pub fn new(config: OrbitSearchConfig) -> Self {
        Self { config }
    }

    /// Search `phase` (0-based) as a single command sequence.
    pub fn sweep(&self, phase: usize) -> Option<Vec<RotationCommand>> {
        let steps = 360 / self.config.step_deg.max(1);
        let step = RotationCommand::Turn(Turn::new(Direction::Right, f64::from(self.config.step_deg)));
        if phase == 0 {
            return Some(vec![step; steps as usize]);
        }
        let e = *self.config.elevations_deg.get(phase - 1)?;
        let up = RotationCommand::Turn(Turn::new(Direction::Up, e));
        let down = RotationCommand::Turn(Turn::new(Direction::Down, e));
        let mut seq = vec![up];
        for _ in 0..steps {
            seq.extend([step, down, up]);
        }
        seq.push(down);
        Some(seq)
    }

    fn phases(&self) -> usize {
        1 + self.config.elevations_deg.len()
    }
}

impl Agent for OrbitSearchAgent {
    fn name(&self) -> &str {
        "orbit-search"
    }

    fn accepts_images(&self) -> bool {
        true
    }

    fn take_turn(&self, ctx: &TurnContext) -> Result<String, AgentError> {
        let mut state = OrbitState::from_context(ctx);
        for g in &ctx.last_grids {
            let Some(label) = g.target.option() else {
                continue;
            };
            for (img, _) in &g.grid.cells {
                if let Ok(d) = image_diff(img, &ctx.original_snapshot) {
                    let best = state.best.entry(label).or_insert(f64::INFINITY);
                    *best = best.min(d);
                }
            }
        }
        let t = self.config.match_threshold;
        let matched: Vec<OptionLabel> = OptionLabel::ALL
            .into_iter()
            .filter(|l| state.best.get(l).is_some_and(|d| *d <= t))
            .collect();
        let worst = || {
            OptionLabel::ALL.into_iter().max_by(|a, b| {
                let da = state.best.get(a).copied().unwrap_or(f64::INFINITY);
                let db = state.best.get(b).copied().unwrap_or(f64::INFINITY);
                da.total_cmp(&db)
            })
        };
        let exhausted = state.phase >= self.phases();
        let odd = if matched.len() >= 2 || exhausted {
            let unmatched: Vec<OptionLabel> =
                OptionLabel::ALL.into_iter().filter(|l| !matched.contains(l)).collect();
            match unmatched.as_slice() {
                [one] => Some(*one),
                _ => worst(),
            }
        } else {
            None
        };

        if let Some(o) = odd {
            let ruled_out: Vec<OptionLabel> =
                OptionLabel::ALL.into_iter().filter(|l| *l != o).collect();
            let done = ctx.iteration >= min_iterations(ctx);
            return Ok(reply(
                state.rationale(&format!(
                    "Matched {:?} against the original; {o} has no matching frame.",
                    matched
                )),
                conclusion_for(Some(o), &ruled_out),
                ctx.iteration,
                if done { Vec::new() } else { snapshot_only() },
                if done { Some(o) } else { None },
            ));
        }

        let seq = self.sweep(state.phase).expect("phase within plan");
        let commands = OptionLabel::ALL
            .into_iter()
            .filter(|l| !matched.contains(l))
            .map(|l| CommandRequest::new(l.into(), &seq))
            .collect();
        state.phase += 1;
        Ok(reply(
            state.rationale(&format!("Sweep {} over the unmatched options.", state.phase)),
            conclusion_for(None, &matched),
            ctx.iteration,
            commands,
            None,
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn state_roundtrips_through_rationale() {
        let mut s = OrbitState {
            phase: 2,
            ..OrbitState::default()
        };
        s.best.insert(OptionLabel::B, 0.25);
        let text = s.rationale("note");
        let out = TurnOutput {
            memory: Memory {
                rationale: text,
                partial_conclusion: PartialConclusion::default(),
            },
            iteration_number: 1,
            commands: snapshot_only(),
            final_answer: None,
        };
        let parsed = parse_turn_output(&out.to_fenced()).unwrap();
        let at = parsed.memory.rationale.rfind(STATE_MARK).unwrap();
        let back: OrbitState =
            serde_json::from_str(&parsed.memory.rationale[at + STATE_MARK.len()..]).unwrap();
        assert_eq!(back.phase, 2);
        assert_eq!(back.best[&OptionLabel::B], 0.25);
    }

    #[test]
    fn reset_decision() {
        assert_eq!(
            ResetMatchAgent::decide(&[[false, true, false], [false, true, false]]),
            Some(OptionLabel::B)
        );
        assert_eq!(ResetMatchAgent::decide(&[[true, true, true]]), None);
        assert_eq!(ResetMatchAgent::decide(&[[true, false, false], [false, false, true]]), None);
    }

    #[test]
    fn sweeps_are_closed_loops() {
        let agent = OrbitSearchAgent::default();
        assert_eq!(agent.sweep(0).unwrap().len(), 12);
        assert_eq!(agent.sweep(1).unwrap().len(), 38);
        assert!(agent.sweep(agent.phases()).is_none());
    }
}
