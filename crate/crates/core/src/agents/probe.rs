//! Rotation-detection probes: prompt construction and tolerant reply parsing.

use serde::{Deserialize, Serialize};

use crate::probes::ProbePair;
use crate::protocol::{
    parse_command, ContextPart, Direction, Message, Prompt, Role, RotationCommand, Turn,
};

pub const PROBE_INSTRUCTION: &str = "The two images show the same cube stack before and after \
one camera-relative rotation. Estimate the rotation direction and angle. Reply with a single \
command such as `left:30`, `up:15` or `rotate:cw:45`.";

pub fn probe_prompt(pair: &ProbePair) -> Prompt {
    Prompt {
        tag: Some(pair.id.clone()),
        messages: vec![
            Message::text(Role::System, PROBE_INSTRUCTION),
            Message {
                role: Role::User,
                parts: vec![
                    ContextPart::Text("Before:".into()),
                    ContextPart::Image {
                        label: "before".into(),
                        image: pair.before.clone(),
                    },
                    ContextPart::Text("After:".into()),
                    ContextPart::Image {
                        label: "after".into(),
                        image: pair.after.clone(),
                    },
                ],
            },
        ],
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbePrediction {
    pub raw: String,
    /// Every command found, in reply order.
    pub components: Vec<Turn>,
    /// No command could be read from the reply.
    pub unparsed: bool,
}

impl ProbePrediction {
    /// The scored component.
    pub fn primary(&self) -> Option<Turn> {
        self.components.first().copied()
    }

    pub fn is_multi(&self) -> bool {
        self.components.len() > 1
    }
}

fn normalize_segment(seg: &str) -> String {
    let lowered = seg
        .trim()
        .trim_matches(|c: char| matches!(c, '`' | '"' | '\'' | '.' | '*'))
        .to_ascii_lowercase()
        .replace('°', "")
        .replace("degrees", "")
        .replace("degree", "")
        .replace("deg", "");
    // "right 15" / "right = 15" → "right:15"
    let mut out = String::new();
    let mut prev_alpha = false;
    let mut pending_sep = false;
    for ch in lowered.chars() {
        if ch.is_whitespace() || ch == '=' {
            pending_sep = true;
            continue;
        }
        if pending_sep && !out.is_empty() {
            let starts_number = ch.is_ascii_digit() || ch == '-' || ch == '+' || ch == '.';
            if prev_alpha && starts_number {
                out.push(':');
            } else if !out.ends_with(':') && ch != ':' {
                out.push(' ');
            }
        }
        pending_sep = false;
        prev_alpha = ch.is_ascii_alphabetic();
        out.push(ch);
    }
    out
}

fn read_turn(token: &str) -> Option<Turn> {
    let token = token.trim();
    if token.is_empty() {
        return None;
    }
    let candidate = if token.starts_with("cw:") || token.starts_with("ccw:") {
        format!("rotate:{token}")
    } else {
        token.to_string()
    };
    match parse_command(&candidate).ok()? {
        RotationCommand::Turn(t) if t.angle_deg < 0.0 => {
            Some(Turn::new(t.direction.opposite(), -t.angle_deg))
        }
        RotationCommand::Turn(t) => Some(t),
        RotationCommand::Reset => None,
    }
}

/// Reads `direction:angle` commands from free text. Accepts the strict
/// grammar plus spaced forms (`right 15`), degree signs, bare `cw:`/`ccw:`
/// and negative angles (taken as the opposite direction).
pub fn parse_probe_reply(raw: &str) -> ProbePrediction {
    let mut components = Vec::new();
    for seg in raw.split([',', '\n', ';']) {
        let norm = normalize_segment(seg);
        for token in norm.split(' ') {
            if let Some(t) = read_turn(token) {
                components.push(t);
            }
        }
    }
    ProbePrediction {
        raw: raw.to_string(),
        unparsed: components.is_empty(),
        components,
    }
}

/// Direction a reply names, if any.
pub fn predicted_direction(p: &ProbePrediction) -> Option<Direction> {
    p.primary().map(|t| t.direction)
}
