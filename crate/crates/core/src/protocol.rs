//! Rotation-command grammar and the per-turn JSON contract spoken between
//! the reasoning agent and the imagery engine.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::render::{RasterImage, SnapshotGrid};

/// Question shown with every odd-one-out problem.
pub const PROBLEM_STATEMENT: &str = "The left image shows the original cube stack made of \
equal-sized small cubes. Which of the options on the right cannot be obtained by rotating the \
original cube stack? Please answer from options A, B or C.";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Left,
    Right,
    Up,
    Down,
    Cw,
    Ccw,
}

impl Direction {
    pub const ALL: [Direction; 6] = [
        Direction::Left,
        Direction::Right,
        Direction::Up,
        Direction::Down,
        Direction::Cw,
        Direction::Ccw,
    ];

    pub fn opposite(self) -> Direction {
        match self {
            Direction::Left => Direction::Right,
            Direction::Right => Direction::Left,
            Direction::Up => Direction::Down,
            Direction::Down => Direction::Up,
            Direction::Cw => Direction::Ccw,
            Direction::Ccw => Direction::Cw,
        }
    }

    pub fn keyword(self) -> &'static str {
        match self {
            Direction::Left => "left",
            Direction::Right => "right",
            Direction::Up => "up",
            Direction::Down => "down",
            Direction::Cw => "cw",
            Direction::Ccw => "ccw",
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.keyword())
    }
}

/// A camera-space turn by a finite angle in degrees. Negative angles are
/// legal and mean the opposite direction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Turn {
    pub direction: Direction,
    pub angle_deg: f64,
}

impl Turn {
    pub const fn new(direction: Direction, angle_deg: f64) -> Self {
        Self {
            direction,
            angle_deg,
        }
    }

    /// The command that undoes this one.
    pub fn inverse(&self) -> Turn {
        Turn::new(self.direction.opposite(), self.angle_deg)
    }
}

impl fmt::Display for Turn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.direction {
            Direction::Cw | Direction::Ccw => {
                write!(f, "rotate:{}:{}", self.direction, self.angle_deg)
            }
            _ => write!(f, "{}:{}", self.direction, self.angle_deg),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RotationCommand {
    Turn(Turn),
    /// Back to the object's canonical build pose.
    Reset,
}

impl RotationCommand {
    pub fn turn(direction: Direction, angle_deg: f64) -> Self {
        RotationCommand::Turn(Turn::new(direction, angle_deg))
    }
}

impl fmt::Display for RotationCommand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RotationCommand::Turn(t) => t.fmt(f),
            RotationCommand::Reset => f.write_str("reset"),
        }
    }
}

impl FromStr for RotationCommand {
    type Err = CommandError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_command(s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CommandError {
    #[error("empty command")]
    Empty,
    #[error("unknown keyword {token:?}")]
    UnknownKeyword { token: String },
    #[error("{token:?} needs the rotate: prefix (rotate:{token}:<angle>)")]
    MissingRotatePrefix { token: String },
    #[error("missing angle in {token:?}")]
    MissingAngle { token: String },
    #[error("bad angle {token:?}")]
    BadAngle { token: String },
    #[error("unexpected trailing input in {token:?}")]
    TrailingInput { token: String },
}

impl CommandError {
    pub fn category(&self) -> &'static str {
        match self {
            CommandError::Empty => "empty",
            CommandError::UnknownKeyword { .. } => "unknown_keyword",
            CommandError::MissingRotatePrefix { .. } => "missing_rotate_prefix",
            CommandError::MissingAngle { .. } => "missing_angle",
            CommandError::BadAngle { .. } => "bad_angle",
            CommandError::TrailingInput { .. } => "trailing_input",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
#[error("command {index}: {source}")]
pub struct SequenceError {
    pub index: usize,
    pub source: CommandError,
}

fn parse_angle(raw: &str, token: &str) -> Result<f64, CommandError> {
    let s = raw.trim();
    if s.is_empty() {
        return Err(CommandError::MissingAngle {
            token: token.to_string(),
        });
    }
    let digits = s.strip_prefix(['+', '-']).unwrap_or(s);
    let mut seen_digit = false;
    let mut seen_dot = false;
    for ch in digits.chars() {
        match ch {
            '0'..='9' => seen_digit = true,
            '.' if !seen_dot => seen_dot = true,
            _ => {
                return Err(CommandError::BadAngle {
                    token: token.to_string(),
                })
            }
        }
    }
    if !seen_digit {
        return Err(CommandError::BadAngle {
            token: token.to_string(),
        });
    }
    match s.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(CommandError::BadAngle {
            token: token.to_string(),
        }),
    }
}

/// Parses one command: `left:V | right:V | up:V | down:V | rotate:cw:V |
/// rotate:ccw:V | reset`, keywords case-insensitive.
pub fn parse_command(text: &str) -> Result<RotationCommand, CommandError> {
    let token = text.trim();
    if token.is_empty() {
        return Err(CommandError::Empty);
    }
    let parts: Vec<String> = token
        .split(':')
        .map(|p| p.trim().to_ascii_lowercase())
        .collect();
    let owned = || token.to_string();
    let basic = |d: Direction| -> Result<RotationCommand, CommandError> {
        match parts.len() {
            1 => Err(CommandError::MissingAngle { token: owned() }),
            2 => Ok(RotationCommand::turn(d, parse_angle(&parts[1], token)?)),
            _ => Err(CommandError::TrailingInput { token: owned() }),
        }
    };
    match parts[0].as_str() {
        "reset" if parts.len() == 1 => Ok(RotationCommand::Reset),
        "reset" => Err(CommandError::TrailingInput { token: owned() }),
        "left" => basic(Direction::Left),
        "right" => basic(Direction::Right),
        "up" => basic(Direction::Up),
        "down" => basic(Direction::Down),
        "cw" | "ccw" => Err(CommandError::MissingRotatePrefix {
            token: parts[0].clone(),
        }),
        "rotate" => {
            let direction = match parts.get(1).map(String::as_str) {
                Some("cw") => Direction::Cw,
                Some("ccw") => Direction::Ccw,
                Some("") | None => return Err(CommandError::MissingAngle { token: owned() }),
                Some(other) => {
                    return Err(CommandError::UnknownKeyword {
                        token: other.to_string(),
                    })
                }
            };
            match parts.len() {
                2 => Err(CommandError::MissingAngle { token: owned() }),
                3 => Ok(RotationCommand::turn(direction, parse_angle(&parts[2], token)?)),
                _ => Err(CommandError::TrailingInput { token: owned() }),
            }
        }
        other => Err(CommandError::UnknownKeyword {
            token: other.to_string(),
        }),
    }
}

/// Parses a comma-separated sequence; the first bad token fails the whole
/// sequence and reports its position.
pub fn parse_sequence(text: &str) -> Result<Vec<RotationCommand>, SequenceError> {
    text.split(',')
        .enumerate()
        .map(|(index, tok)| parse_command(tok).map_err(|source| SequenceError { index, source }))
        .collect()
}

pub fn format_sequence(cmds: &[RotationCommand]) -> String {
    cmds.iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join(",")
}

/// One of the three answer options.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum OptionLabel {
    A,
    B,
    C,
}

impl OptionLabel {
    pub const ALL: [OptionLabel; 3] = [OptionLabel::A, OptionLabel::B, OptionLabel::C];

    pub fn as_str(self) -> &'static str {
        match self {
            OptionLabel::A => "A",
            OptionLabel::B => "B",
            OptionLabel::C => "C",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for OptionLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for OptionLabel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "A" | "a" => Ok(OptionLabel::A),
            "B" | "b" => Ok(OptionLabel::B),
            "C" | "c" => Ok(OptionLabel::C),
            other => Err(format!("not an option label: {other:?}")),
        }
    }
}

/// Anything the imagery engine holds state for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Target {
    #[serde(rename = "original")]
    Original,
    A,
    B,
    C,
}

impl Target {
    pub const ALL: [Target; 4] = [Target::Original, Target::A, Target::B, Target::C];

    pub fn as_str(self) -> &'static str {
        match self {
            Target::Original => "original",
            Target::A => "A",
            Target::B => "B",
            Target::C => "C",
        }
    }

    pub fn option(self) -> Option<OptionLabel> {
        match self {
            Target::Original => None,
            Target::A => Some(OptionLabel::A),
            Target::B => Some(OptionLabel::B),
            Target::C => Some(OptionLabel::C),
        }
    }
}

impl From<OptionLabel> for Target {
    fn from(l: OptionLabel) -> Self {
        match l {
            OptionLabel::A => Target::A,
            OptionLabel::B => Target::B,
            OptionLabel::C => Target::C,
        }
    }
}

impl fmt::Display for Target {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Target {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let t = s.trim();
        if t.eq_ignore_ascii_case("original") {
            return Ok(Target::Original);
        }
        t.parse::<OptionLabel>().map(Target::from)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    #[default]
    Unknown,
    ProbablyNotTheAnswer,
    ProbablyTheOddOne,
}

impl Verdict {
    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::Unknown => "unknown",
            Verdict::ProbablyNotTheAnswer => "probably_not_the_answer",
            Verdict::ProbablyTheOddOne => "probably_the_odd_one",
        }
    }

    fn parse(s: &str) -> Option<Verdict> {
        match s {
            "unknown" => Some(Verdict::Unknown),
            "probably_not_the_answer" => Some(Verdict::ProbablyNotTheAnswer),
            "probably_the_odd_one" => Some(Verdict::ProbablyTheOddOne),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct PartialConclusion {
    #[serde(rename = "A")]
    pub a: Verdict,
    #[serde(rename = "B")]
    pub b: Verdict,
    #[serde(rename = "C")]
    pub c: Verdict,
}

impl PartialConclusion {
    pub fn get(&self, label: OptionLabel) -> Verdict {
        match label {
            OptionLabel::A => self.a,
            OptionLabel::B => self.b,
            OptionLabel::C => self.c,
        }
    }

    pub fn set(&mut self, label: OptionLabel, v: Verdict) {
        match label {
            OptionLabel::A => self.a = v,
            OptionLabel::B => self.b = v,
            OptionLabel::C => self.c = v,
        }
    }

    /// A single option named as the odd one.
    pub fn odd_vote(&self) -> Option<OptionLabel> {
        single(OptionLabel::ALL.iter().filter(|l| self.get(**l) == Verdict::ProbablyTheOddOne))
    }

    /// The single option not ruled out, when the other two are.
    pub fn last_standing(&self) -> Option<OptionLabel> {
        single(
            OptionLabel::ALL
                .iter()
                .filter(|l| self.get(**l) != Verdict::ProbablyNotTheAnswer),
        )
    }
}

fn single<'a>(mut it: impl Iterator<Item = &'a OptionLabel>) -> Option<OptionLabel> {
    let first = it.next()?;
    if it.next().is_some() {
        None
    } else {
        Some(*first)
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Memory {
    pub rationale: String,
    pub partial_conclusion: PartialConclusion,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommandRequest {
    pub target: Target,
    pub rotation_sequence: String,
}

impl CommandRequest {
    pub fn new(target: Target, cmds: &[RotationCommand]) -> Self {
        Self {
            target,
            rotation_sequence: format_sequence(cmds),
        }
    }

    pub fn parse(&self) -> Result<Vec<RotationCommand>, SequenceError> {
        parse_sequence(&self.rotation_sequence)
    }
}

/// The agent's reply for one turn.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TurnOutput {
    pub memory: Memory,
    pub iteration_number: u32,
    pub commands: Vec<CommandRequest>,
    pub final_answer: Option<OptionLabel>,
}

impl TurnOutput {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("turn output serializes")
    }

    /// The reply as an agent is asked to write it: one fenced `json` block.
    pub fn to_fenced(&self) -> String {
        format!("```json\n{}\n```", self.to_json())
    }

    /// All command sequences parsed; fails on the first malformed one.
    pub fn parsed_commands(&self) -> Result<Vec<(Target, Vec<RotationCommand>)>, TurnParseError> {
        self.commands
            .iter()
            .map(|c| {
                c.parse()
                    .map(|cmds| (c.target, cmds))
                    .map_err(|error| TurnParseError::BadCommand {
                        target: c.target,
                        error,
                    })
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldError {
    pub field: String,
    pub message: String,
}

impl fmt::Display for FieldError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TurnParseError {
    #[error("no JSON object found in reply")]
    NoJsonFound,
    #[error("invalid JSON: {0}")]
    InvalidJson(String),
    #[error("schema violation: {}", .0.iter().map(ToString::to_string).collect::<Vec<_>>().join("; "))]
    Schema(Vec<FieldError>),
    #[error("bad rotation_sequence for {target}: {error}")]
    BadCommand { target: Target, error: SequenceError },
}

impl TurnParseError {
    pub fn category(&self) -> &'static str {
        match self {
            TurnParseError::NoJsonFound => "no_json_found",
            TurnParseError::InvalidJson(_) => "invalid_json",
            TurnParseError::Schema(_) => "schema_violation",
            TurnParseError::BadCommand { .. } => "bad_command",
        }
    }
}

/// Locates the JSON payload: the first fenced `json` block, otherwise the
/// first balanced top-level `{...}`.
pub fn extract_json(raw: &str) -> Option<&str> {
    if let Some(start) = raw.find("```json") {
        let body = &raw[start + "```json".len()..];
        let end = body.find("```").unwrap_or(body.len());
        return Some(body[..end].trim());
    }
    let bytes = raw.as_bytes();
    let start = raw.find('{')?;
    let mut depth = 0usize;
    let mut in_string = false;
    let mut escaped = false;
    for (i, &b) in bytes.iter().enumerate().skip(start) {
        if in_string {
            if escaped {
                escaped = false;
            } else if b == b'\\' {
                escaped = true;
            } else if b == b'"' {
                in_string = false;
            }
            continue;
        }
        match b {
            b'"' => in_string = true,
            b'{' => depth += 1,
            b'}' => {
                depth -= 1;
                if depth == 0 {
                    return Some(&raw[start..=i]);
                }
            }
            _ => {}
        }
    }
    None
}

/// Extracts and validates a turn. Command sequences are kept as text; use
/// [`TurnOutput::parsed_commands`] or [`CommandRequest::parse`] to check them.
pub fn parse_turn_output(raw: &str) -> Result<TurnOutput, TurnParseError> {
    let payload = extract_json(raw).ok_or(TurnParseError::NoJsonFound)?;
    let value: Value =
        serde_json::from_str(payload).map_err(|e| TurnParseError::InvalidJson(e.to_string()))?;
    validate_turn(&value)
}

/// [`parse_turn_output`] plus a strict check of every command sequence.
pub fn parse_turn_output_strict(raw: &str) -> Result<TurnOutput, TurnParseError> {
    let turn = parse_turn_output(raw)?;
    turn.parsed_commands()?;
    Ok(turn)
}

fn err(errors: &mut Vec<FieldError>, field: &str, message: &str) {
    errors.push(FieldError {
        field: field.to_string(),
        message: message.to_string(),
    });
}

fn validate_turn(value: &Value) -> Result<TurnOutput, TurnParseError> {
    let mut errors = Vec::new();
    let Some(root) = value.as_object() else {
        err(&mut errors, "$", "expected a JSON object");
        return Err(TurnParseError::Schema(errors));
    };

    let mut memory = Memory::default();
    match root.get("memory").and_then(Value::as_object) {
        None => err(&mut errors, "memory", "missing or not an object"),
        Some(mem) => {
            match mem.get("rationale").and_then(Value::as_str) {
                Some(r) => memory.rationale = r.to_string(),
                None => err(&mut errors, "memory.rationale", "missing or not a string"),
            }
            match mem.get("partial_conclusion").and_then(Value::as_object) {
                None => err(&mut errors, "memory.partial_conclusion", "missing or not an object"),
                Some(pc) => {
                    for label in OptionLabel::ALL {
                        let field = format!("memory.partial_conclusion.{label}");
                        match pc.get(label.as_str()).and_then(Value::as_str) {
                            None => err(&mut errors, &field, "missing or not a string"),
                            Some(s) => match Verdict::parse(s) {
                                Some(v) => memory.partial_conclusion.set(label, v),
                                None => err(&mut errors, &field, &format!("unknown verdict {s:?}")),
                            },
                        }
                    }
                }
            }
        }
    }

    let mut iteration_number = 0;
    match root.get("iteration_number").and_then(Value::as_u64) {
        Some(n) if n >= 1 && n <= u64::from(u32::MAX) => iteration_number = n as u32,
        _ => err(&mut errors, "iteration_number", "expected an integer >= 1"),
    }

    let mut commands = Vec::new();
    match root.get("commands") {
        Some(Value::Array(items)) => {
            for (i, item) in items.iter().enumerate() {
                let obj = item.as_object();
                let target = obj
                    .and_then(|o| o.get("target"))
                    .and_then(Value::as_str)
                    .and_then(|t| t.parse::<Target>().ok());
                let seq = obj
                    .and_then(|o| o.get("rotation_sequence"))
                    .and_then(Value::as_str);
                if target.is_none() {
                    err(&mut errors, &format!("commands[{i}].target"), "expected A, B, C or original");
                }
                if seq.is_none() {
                    err(&mut errors, &format!("commands[{i}].rotation_sequence"), "missing or not a string");
                }
                if let (Some(target), Some(seq)) = (target, seq) {
                    commands.push(CommandRequest {
                        target,
                        rotation_sequence: seq.to_string(),
                    });
                }
            }
        }
        _ => err(&mut errors, "commands", "missing or not an array"),
    }

    let final_answer = match root.get("final_answer") {
        None | Some(Value::Null) => None,
        Some(Value::String(s)) => match s.parse::<OptionLabel>() {
            Ok(l) => Some(l),
            Err(_) => {
                err(&mut errors, "final_answer", "expected A, B, C or null");
                None
            }
        },
        Some(_) => {
            err(&mut errors, "final_answer", "expected A, B, C or null");
            None
        }
    };

    if errors.is_empty() && commands.is_empty() && final_answer.is_none() {
        err(&mut errors, "commands", "empty without a final_answer");
    }
    if !errors.is_empty() {
        return Err(TurnParseError::Schema(errors));
    }
    Ok(TurnOutput {
        memory,
        iteration_number,
        commands,
        final_answer,
    })
}

/// Which experimental instructions go into the system prompt.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptVariant {
    /// Incremental rotation only.
    #[default]
    Incremental,
    /// Reset available; encourages aligned top and side views.
    ResetViews,
    /// Suggests full 360° sweeps to search for a matching frame.
    FullOrbit,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptOptions {
    pub variant: PromptVariant,
    pub min_iterations: u32,
    pub reset_enabled: bool,
    pub hint_360: bool,
    pub original_rotatable: bool,
}

impl Default for PromptOptions {
    fn default() -> Self {
        Self {
            variant: PromptVariant::Incremental,
            min_iterations: 5,
            reset_enabled: false,
            hint_360: false,
            original_rotatable: false,
        }
    }
}

pub fn system_prompt(opts: &PromptOptions) -> String {
    let mut p = String::new();
    p.push_str("# TASK\n");
    p.push_str("You are solving a 3D mental-rotation problem. The problem statement is:\n");
    p.push_str(&format!("`{PROBLEM_STATEMENT}`\n\n"));
    p.push_str("# IMAGERY MODULE\n");
    p.push_str(
        "An imagery module keeps a 3D model of every object in the problem and renders it on \
request. Each object starts in the pose shown in the problem image and keeps its state between \
turns. You send rotation commands; the module applies them and returns one snapshot per command, \
joined into a single-row grid per target.\n",
    );
    p.push_str(
        "Commands are camera-relative: the object spins about its own center while your \
viewpoint stays put, as if you were turning it in your hands.\n",
    );
    if opts.original_rotatable {
        p.push_str("You may rotate the options A, B, C and the original.\n\n");
    } else {
        p.push_str("Only the options A, B and C can be rotated.\n\n");
    }
    p.push_str("Commands:\n");
    p.push_str("- `left:value` turns the object to the left\n");
    p.push_str("- `right:value` turns the object to the right\n");
    p.push_str("- `up:value` tips the object up\n");
    p.push_str("- `down:value` tips the object down\n");
    p.push_str("- `rotate:cw:value` spins the object clockwise in the image plane\n");
    p.push_str("- `rotate:ccw:value` spins the object counterclockwise in the image plane\n");
    if opts.reset_enabled {
        p.push_str("- `reset` returns the object to its canonical build orientation\n");
    }
    p.push_str(
        "`value` is in degrees. An angle of 0 just takes a snapshot of the current state. \
Separate several commands for one target with commas, e.g. `right:15,right:15,up:10`.\n\n",
    );
    match opts.variant {
        PromptVariant::Incremental => {}
        PromptVariant::ResetViews => p.push_str(
            "# HINT\nObjects that are rotations of each other look identical after `reset`. \
Reset the options and compare a top view (`reset,down:90`) and a side view (`reset,left:90`).\n\n",
        ),
        PromptVariant::FullOrbit => p.push_str(
            "# HINT\nYou can sweep an object through a full turn and look for a frame that \
matches the original, e.g. six steps `right:60,right:60,right:60,right:60,right:60,right:60` or \
twenty steps of `right:18`.\n\n",
        ),
    }
    if opts.hint_360 && opts.variant != PromptVariant::FullOrbit {
        p.push_str("A full 360° sweep of an option is a legal single sequence.\n\n");
    }
    p.push_str("# OUTPUT\nReply with exactly one JSON object inside a ```json fenced block:\n");
    p.push_str(
        r#"```json
{
  "memory": {
    "rationale": "your reasoning so far",
    "partial_conclusion": {
      "A": "unknown"|"probably_not_the_answer"|"probably_the_odd_one",
      "B": "unknown"|"probably_not_the_answer"|"probably_the_odd_one",
      "C": "unknown"|"probably_not_the_answer"|"probably_the_odd_one"
    }
  },
  "iteration_number": 1,
  "commands": [
    {"target": "A"|"B"|"C", "rotation_sequence": "right:15,right:15,up:10"}
  ],
  "final_answer": null
}
```
"#,
    );
    p.push_str(
        "`memory` is handed back to you every turn. `iteration_number` starts at 1 and grows by \
one each turn. Set `final_answer` to A, B or C once you are sure, otherwise null. Write one JSON \
reply and stop; the imagery module's turn happens outside your reply.\n\n",
    );
    p.push_str("# CONTEXT EACH TURN\n");
    p.push_str("- the problem statement text and image\n");
    p.push_str("- every reply you have written so far\n");
    p.push_str("- the snapshot grids from the last iteration only\n");
    p.push_str("- a snapshot of the original for comparison\n\n");
    p.push_str(&format!(
        "# STRATEGY\n- Use at least {} iterations before giving the final answer.\n",
        opts.min_iterations
    ));
    p
}

/// Reads the iteration minimum back out of a system prompt written by
/// [`system_prompt`].
pub fn prompt_min_iterations(prompt: &str) -> Option<u32> {
    let rest = prompt.split("Use at least ").nth(1)?;
    rest.split_whitespace().next()?.parse().ok()
}

/// Whether a system prompt written by [`system_prompt`] offers `reset`.
pub fn prompt_offers_reset(prompt: &str) -> bool {
    prompt.contains("- `reset`")
}

/// Snapshots produced for one target in one iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetGrid {
    pub target: Target,
    pub grid: SnapshotGrid,
}

/// Everything an agent may see on a given turn.
#[derive(Debug, Clone)]
pub struct TurnContext {
    pub problem_id: String,
    pub system_prompt: String,
    pub statement: String,
    pub problem_image: RasterImage,
    /// Iteration number the agent is expected to produce.
    pub iteration: u32,
    /// Raw replies from every earlier iteration, oldest first.
    pub previous_outputs: Vec<String>,
    /// Errors and notices from the last iteration.
    pub feedback: Vec<String>,
    pub last_grids: Vec<TargetGrid>,
    pub original_snapshot: RasterImage,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ContextPart {
    Text(String),
    Image { label: String, image: RasterImage },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Message {
    pub role: Role,
    pub parts: Vec<ContextPart>,
}

impl Message {
    pub fn text(role: Role, text: impl Into<String>) -> Self {
        Self {
            role,
            parts: vec![ContextPart::Text(text.into())],
        }
    }
}

/// A free-form multimodal request, as sent over the chat transport.
#[derive(Debug, Clone, PartialEq)]
pub struct Prompt {
    /// Opaque identifier (probe id, problem id) for scripted responders.
    pub tag: Option<String>,
    pub messages: Vec<Message>,
}

pub fn serialize_problem_statement(statement: &str) -> String {
    format!("# PROBLEM\n{statement}")
}

/// Orders the context into messages: statement and problem image, every
/// prior reply verbatim, last-iteration grids, then the original's current
/// snapshot.
pub fn serialize_turn_context(ctx: &TurnContext) -> Vec<Message> {
    let mut parts = vec![
        ContextPart::Text(serialize_problem_statement(&ctx.statement)),
        ContextPart::Image {
            label: "problem".into(),
            image: ctx.problem_image.clone(),
        },
    ];
    for (i, out) in ctx.previous_outputs.iter().enumerate() {
        parts.push(ContextPart::Text(format!(
            "# YOUR OUTPUT, ITERATION {}\n{}",
            i + 1,
            out
        )));
    }
    if !ctx.feedback.is_empty() {
        parts.push(ContextPart::Text(format!(
            "# IMAGERY MODULE NOTES\n{}",
            ctx.feedback
                .iter()
                .map(|f| format!("- {f}"))
                .collect::<Vec<_>>()
                .join("\n")
        )));
    }
    for g in &ctx.last_grids {
        let labels: Vec<&str> = g.grid.cells.iter().map(|(_, l)| l.as_str()).collect();
        parts.push(ContextPart::Text(format!(
            "# SNAPSHOTS {} (iteration {}): {}",
            g.target,
            ctx.iteration.saturating_sub(1),
            labels.join(" | ")
        )));
        parts.push(ContextPart::Image {
            label: format!("grid-{}", g.target),
            image: g.grid.compose().expect("grids are uniform"),
        });
    }
    parts.push(ContextPart::Text("# ORIGINAL (current view)".into()));
    parts.push(ContextPart::Image {
        label: "original".into(),
        image: ctx.original_snapshot.clone(),
    });
    parts.push(ContextPart::Text(format!(
        "Now write your reply for iteration {}.",
        ctx.iteration
    )));
    vec![
        Message::text(Role::System, ctx.system_prompt.clone()),
        Message {
            role: Role::User,
            parts,
        },
    ]
}

impl TurnContext {
    pub fn to_prompt(&self) -> Prompt {
        Prompt {
            tag: Some(self.problem_id.clone()),
            messages: serialize_turn_context(self),
        }
    }
}
