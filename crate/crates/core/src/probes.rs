//! Controlled rotation-detection pairs, sweep datasets and post-rotation
//! generation probes.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::{write_atomic, DatasetError};
use crate::geometry::{apply_camera_rotation, camera_rotation, pose_to_euler, EulerAnglesDeg, Polycube, Pose};
use crate::protocol::{Direction, Turn};
use crate::render::{decode_png, encode_png, render, CameraRig, RasterImage, RenderError, RenderSettings};

/// A before/after pair of one object differing by a known camera turn.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbePair {
    pub id: String,
    pub object: Polycube,
    pub base_pose: Pose,
    pub applied: Turn,
    pub before: RasterImage,
    pub after: RasterImage,
}

impl ProbePair {
    /// Ground truth in the `direction:angle` surface form.
    pub fn ground_truth(&self) -> String {
        self.applied.to_string()
    }

    /// The applied turn as pitch/yaw/roll.
    pub fn ground_truth_euler(&self) -> EulerAnglesDeg {
        pose_to_euler(&camera_rotation(&self.applied))
    }

    pub fn after_pose(&self) -> Pose {
        apply_camera_rotation(&self.base_pose, &self.applied)
    }
}

pub fn make_probe_pair(
    id: impl Into<String>,
    object: &Polycube,
    applied: Turn,
    base_pose: Pose,
    rig: &CameraRig,
    settings: &RenderSettings,
) -> Result<ProbePair, RenderError> {
    let before = render(object, &base_pose, rig, settings)?;
    let after = render(object, &apply_camera_rotation(&base_pose, &applied), rig, settings)?;
    Ok(ProbePair {
        id: id.into(),
        object: object.clone(),
        base_pose,
        applied,
        before,
        after,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepAxis {
    Yaw,
    Pitch,
    Roll,
}

impl SweepAxis {
    pub const ALL: [SweepAxis; 3] = [SweepAxis::Yaw, SweepAxis::Pitch, SweepAxis::Roll];

    /// The camera command that sweeps this axis.
    pub fn direction(self) -> Direction {
        match self {
            SweepAxis::Yaw => Direction::Right,
            SweepAxis::Pitch => Direction::Up,
            SweepAxis::Roll => Direction::Cw,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub axes: Vec<SweepAxis>,
    pub start_deg: u32,
    pub end_deg: u32,
    pub step_deg: u32,
}

impl Default for SweepSpec {
    fn default() -> Self {
        Self {
            axes: SweepAxis::ALL.to_vec(),
            start_deg: 0,
            end_deg: 360,
            step_deg: 30,
        }
    }
}

impl SweepSpec {
    pub fn validate(&self) -> Result<(), String> {
        if self.step_deg == 0 || 360 % self.step_deg != 0 {
            return Err(format!("step {} must divide 360", self.step_deg));
        }
        if self.start_deg >= self.end_deg {
            return Err("empty angle range".into());
        }
        Ok(())
    }

    /// Angles from start (inclusive) to end (exclusive).
    pub fn angles(&self) -> Vec<u32> {
        (self.start_deg..self.end_deg)
            .step_by(self.step_deg.max(1) as usize)
            .collect()
    }
}

pub fn make_sweep_dataset(
    object_id: &str,
    object: &Polycube,
    base_pose: Pose,
    spec: &SweepSpec,
    rig: &CameraRig,
    settings: &RenderSettings,
) -> Result<Vec<ProbePair>, RenderError> {
    spec.validate().map_err(RenderError::BadRig)?;
    let before = render(object, &base_pose, rig, settings)?;
    let mut out = Vec::new();
    for &axis in &spec.axes {
        for angle in spec.angles() {
            let applied = Turn::new(axis.direction(), f64::from(angle));
            let after = render(object, &apply_camera_rotation(&base_pose, &applied), rig, settings)?;
            out.push(ProbePair {
                id: format!("{object_id}-{}-{angle:03}", applied.direction),
                object: object.clone(),
                base_pose,
                applied,
                before: before.clone(),
                after,
            });
        }
    }
    Ok(out)
}

/// Small-angle direction probes: every direction at one angle.
pub fn make_direction_probes(
    object_id: &str,
    object: &Polycube,
    base_pose: Pose,
    angle_deg: f64,
    rig: &CameraRig,
    settings: &RenderSettings,
) -> Result<Vec<ProbePair>, RenderError> {
    Direction::ALL
        .into_iter()
        .map(|d| {
            make_probe_pair(
                format!("{object_id}-{d}-{angle_deg}"),
                object,
                Turn::new(d, angle_deg),
                base_pose,
                rig,
                settings,
            )
        })
        .collect()
}

/// Bundle for image-generation models: input, instruction, expected output.
#[derive(Debug, Clone, PartialEq)]
pub struct GenerationProbe {
    pub command: Turn,
    pub input: RasterImage,
    pub instruction: String,
    pub ground_truth: RasterImage,
}

pub fn make_generation_probe(
    object: &Polycube,
    base_pose: Pose,
    command: Turn,
    rig: &CameraRig,
    settings: &RenderSettings,
) -> Result<GenerationProbe, RenderError> {
    let pair = make_probe_pair("gen", object, command, base_pose, rig, settings)?;
    let how = match command.direction {
        Direction::Left => "to the left",
        Direction::Right => "to the right",
        Direction::Up => "upward",
        Direction::Down => "downward",
        Direction::Cw => "clockwise in the image plane",
        Direction::Ccw => "counterclockwise in the image plane",
    };
    Ok(GenerationProbe {
        command,
        input: pair.before,
        instruction: format!(
            "Generate an image of the same cube stack after it turns {} degrees {how} about its \
own center. Keep the camera, lighting, colors and framing unchanged.",
            command.angle_deg
        ),
        ground_truth: pair.after,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct PairEntry {
    id: String,
    object: String,
    base_pose: Pose,
    applied: String,
    before: String,
    after: String,
}

/// Writes `pairs.json`, one `.cells` file per distinct object, and PNGs.
pub fn save_probe_pairs(pairs: &[ProbePair], dir: &Path) -> Result<(), DatasetError> {
    let images = dir.join("images");
    fs::create_dir_all(&images).map_err(|source| DatasetError::Io {
        path: images.clone(),
        source,
    })?;
    let mut objects: BTreeMap<String, String> = BTreeMap::new();
    let mut entries = Vec::new();
    for p in pairs {
        let text = p.object.to_text();
        let next = format!("objects/obj{}.cells", objects.len() + 1);
        let obj_rel = objects.entry(text.clone()).or_insert(next).clone();
        write_atomic(&dir.join(&obj_rel), text.as_bytes())?;
        let before = format!("images/{}-before.png", p.id);
        let after = format!("images/{}-after.png", p.id);
        for (rel, img) in [(&before, &p.before), (&after, &p.after)] {
            let bytes = encode_png(img).map_err(|e| DatasetError::Corrupt {
                path: dir.join(rel),
                reason: e.to_string(),
            })?;
            write_atomic(&dir.join(rel), &bytes)?;
        }
        entries.push(PairEntry {
            id: p.id.clone(),
            object: obj_rel,
            base_pose: p.base_pose,
            applied: p.applied.to_string(),
            before,
            after,
        });
    }
    let json = serde_json::to_vec_pretty(&entries).expect("serializable");
    write_atomic(&dir.join("pairs.json"), &json)
}

pub fn load_probe_pairs(dir: &Path) -> Result<Vec<ProbePair>, DatasetError> {
    let index = dir.join("pairs.json");
    let bytes = fs::read(&index).map_err(|source| DatasetError::Io {
        path: index.clone(),
        source,
    })?;
    let entries: Vec<PairEntry> =
        serde_json::from_slice(&bytes).map_err(|e| DatasetError::Corrupt {
            path: index.clone(),
            reason: e.to_string(),
        })?;
    let read = |rel: &str| {
        let path = dir.join(rel);
        fs::read(&path).map_err(|source| DatasetError::Io { path, source })
    };
    let corrupt = |rel: &str, reason: String| DatasetError::Corrupt {
        path: dir.join(rel),
        reason,
    };
    entries
        .into_iter()
        .map(|e| {
            let text = String::from_utf8(read(&e.object)?)
                .map_err(|err| corrupt(&e.object, err.to_string()))?;
            let object = Polycube::from_text(&text).map_err(|err| corrupt(&e.object, err.to_string()))?;
            let applied = match e.applied.parse::<crate::protocol::RotationCommand>() {
                Ok(crate::protocol::RotationCommand::Turn(t)) => t,
                _ => return Err(corrupt("pairs.json", format!("{}: bad command {:?}", e.id, e.applied))),
            };
            let before = decode_png(&read(&e.before)?).map_err(|err| corrupt(&e.before, err.to_string()))?;
            let after = decode_png(&read(&e.after)?).map_err(|err| corrupt(&e.after, err.to_string()))?;
            Ok(ProbePair {
                id: e.id,
                object,
                base_pose: e.base_pose,
                applied,
                before,
                after,
            })
        })
        .collect()
}

/// Content hash of a pair set: ids, objects, poses, turns and pixels.
pub fn pairs_checksum(pairs: &[ProbePair]) -> String {
    let mut h = Sha256::new();
    for p in pairs {
        h.update(p.id.as_bytes());
        h.update([0]);
        h.update(p.object.to_text().as_bytes());
        h.update(serde_json::to_vec(&p.base_pose).expect("serializable"));
        h.update(p.applied.to_string().as_bytes());
        for img in [&p.before, &p.after] {
            h.update(img.width().to_le_bytes());
            h.update(img.height().to_le_bytes());
            h.update(img.pixels());
        }
    }
    hex::encode(h.finalize())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::render::{image_diff, presentation_pose};

    fn obj() -> Polycube {
        crate::forge::marker_object()
    }

    #[test]
    fn probe_ground_truths() {
        let (rig, s) = (CameraRig::default(), RenderSettings::default());
        let p = make_probe_pair("x", &obj(), Turn::new(Direction::Left, 30.0), presentation_pose(), &rig, &s)
            .unwrap();
        assert_eq!(p.ground_truth(), "left:30");
        let p = make_probe_pair("x", &obj(), Turn::new(Direction::Right, 15.0), presentation_pose(), &rig, &s)
            .unwrap();
        assert_eq!(p.ground_truth(), "right:15");
        let p = make_probe_pair("x", &obj(), Turn::new(Direction::Up, 0.0), presentation_pose(), &rig, &s)
            .unwrap();
        assert_eq!(p.before, p.after);
    }

    #[test]
    fn sweep_shape() {
        let spec = SweepSpec::default();
        assert!(spec.angles().contains(&330));
        let pairs = make_sweep_dataset(
            "m",
            &obj(),
            presentation_pose(),
            &spec,
            &CameraRig::default(),
            &RenderSettings::default(),
        )
        .unwrap();
        assert_eq!(pairs.len(), 36);
        for p in pairs.iter().filter(|p| p.applied.angle_deg == 0.0) {
            assert_eq!(p.before, p.after);
        }
        assert!(SweepSpec { step_deg: 7, ..SweepSpec::default() }.validate().is_err());
    }

    #[test]
    fn generation_probe() {
        let (rig, s) = (CameraRig::default(), RenderSettings::default());
        let g0 = make_generation_probe(&obj(), presentation_pose(), Turn::new(Direction::Left, 0.0), &rig, &s)
            .unwrap();
        assert_eq!(g0.input, g0.ground_truth);
        let g = make_generation_probe(&obj(), presentation_pose(), Turn::new(Direction::Left, 30.0), &rig, &s)
            .unwrap();
        assert!(g.instruction.contains("30 degrees to the left"));
        assert!(image_diff(&g.input, &g.ground_truth).unwrap() > 0.01);
    }

    #[test]
    fn pairs_roundtrip_on_disk() {
        let dir = tempfile::tempdir().unwrap();
        let pairs = make_direction_probes(
            "m",
            &obj(),
            presentation_pose(),
            15.0,
            &CameraRig::default(),
            &RenderSettings::default(),
        )
        .unwrap();
        save_probe_pairs(&pairs, dir.path()).unwrap();
        assert_eq!(load_probe_pairs(dir.path()).unwrap(), pairs);
    }
}
