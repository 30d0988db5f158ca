//! On-disk problem sets.
//!
//! Layout:
//!
//! ```text
//! <dir>/manifest.json      metadata, problem index, sha256 checksum
//! <dir>/poses.json         calibrated and canonical poses per problem
//! <dir>/objects/*.cells    polycubes in text form (`x,y,z` per line)
//! <dir>/images/*.png       problem images: original, A, B, C left to right
//! ```
//!
//! The checksum covers the manifest (with an empty checksum field) and every
//! referenced file, so edits outside the tooling are detected on load.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::forge::{forge_problems, ForgeConfig, ForgeError, Problem};
use crate::geometry::{Polycube, Pose};
use crate::protocol::{OptionLabel, Target};
use crate::render::{decode_png, encode_png, split_grid, CameraRig, RasterImage, RenderSettings};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {reason}")]
    Corrupt { path: PathBuf, reason: String },
    #[error("{path}: checksum mismatch (manifest says {expected}, contents hash to {actual})")]
    Checksum {
        path: PathBuf,
        expected: String,
        actual: String,
    },
    #[error("unknown problem {0}")]
    UnknownProblem(String),
    #[error("{0}: dataset is read-only")]
    ReadOnly(PathBuf),
    #[error(transparent)]
    Forge(#[from] ForgeError),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn corrupt(path: &Path, reason: impl ToString) -> DatasetError {
    DatasetError::Corrupt {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemEntry {
    pub id: String,
    pub odd: OptionLabel,
    pub statement: String,
    pub original: String,
    pub options: BTreeMap<OptionLabel, String>,
    pub image: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub seed: u64,
    pub forge: ForgeConfig,
    pub problems: Vec<ProblemEntry>,
    #[serde(default)]
    pub checksum: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseRecord {
    pub calibrated: BTreeMap<Target, Pose>,
    pub canonical: BTreeMap<Target, Pose>,
}

/// Problems plus their reference images, as produced by the forge or loaded
/// from a directory.
#[derive(Debug, Clone, PartialEq)]
pub struct ProblemSet {
    pub seed: u64,
    pub forge: ForgeConfig,
    pub problems: Vec<Problem>,
    /// Problem images keyed by problem id.
    pub images: BTreeMap<String, RasterImage>,
    /// Checksum of the directory this set was loaded from or saved to.
    pub checksum: Option<String>,
}

impl ProblemSet {
    pub fn forge(seed: u64, count: usize, forge: ForgeConfig) -> Result<Self, DatasetError> {
        let problems = forge_problems(seed, count, &forge)?;
        let mut images = BTreeMap::new();
        for p in &problems {
            let img = p
                .render_problem_image(&forge.rig, &forge.settings)
                .map_err(ForgeError::from)?;
            images.insert(p.id.clone(), img);
        }
        Ok(Self {
            seed,
            forge,
            problems,
            images,
            checksum: None,
        })
    }

    pub fn len(&self) -> usize {
        self.problems.len()
    }

    pub fn is_empty(&self) -> bool {
        self.problems.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Problem> {
        self.problems.iter().find(|p| p.id == id)
    }

    pub fn problem_image(&self, id: &str) -> Option<&RasterImage> {
        self.images.get(id)
    }

    /// Tile for one target, cut out of the problem image.
    pub fn tile(&self, id: &str, target: Target) -> Option<RasterImage> {
        let img = self.images.get(id)?;
        let tiles = split_grid(img, Target::ALL.len() as u32)?;
        tiles.into_iter().nth(target_index(target))
    }

    pub fn rig(&self) -> &CameraRig {
        &self.forge.rig
    }

    pub fn settings(&self) -> &RenderSettings {
        &self.forge.settings
    }

    pub fn audit(&self) -> Result<(), String> {
        let mut seen = std::collections::BTreeSet::new();
        for p in &self.problems {
            if !seen.insert(p.id.as_str()) {
                return Err(format!("duplicate problem id {}", p.id));
            }
            p.audit()?;
        }
        Ok(())
    }
}

fn target_index(t: Target) -> usize {
    Target::ALL.iter().position(|x| *x == t).expect("listed")
}

fn object_path(id: &str, target: Target) -> String {
    format!("objects/{id}-{}.cells", target.as_str())
}

fn image_path(id: &str) -> String {
    format!("images/{id}.png")
}

pub const MANIFEST: &str = "manifest.json";
pub const POSES: &str = "poses.json";

fn referenced_files(m: &Manifest) -> Vec<String> {
    let mut files = vec![POSES.to_string()];
    for e in &m.problems {
        files.push(e.original.clone());
        files.extend(e.options.values().cloned());
        files.push(e.image.clone());
    }
    files.sort();
    files.dedup();
    files
}

/// Hash of the manifest (checksum blanked) and all referenced files.
pub fn compute_checksum(dir: &Path, manifest: &Manifest) -> Result<String, DatasetError> {
    let mut blank = manifest.clone();
    blank.checksum.clear();
    let mut h = Sha256::new();
    h.update(serde_json::to_vec(&blank).expect("manifest serializes"));
    for rel in referenced_files(manifest) {
        let path = dir.join(&rel);
        let bytes = fs::read(&path).map_err(io_err(&path))?;
        h.update(rel.as_bytes());
        h.update([0u8]);
        h.update((bytes.len() as u64).to_le_bytes());
        h.update(&bytes);
    }
    Ok(hex::encode(h.finalize()))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), DatasetError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    fs::write(path, bytes).map_err(io_err(path))
}

/// Writes via a temporary sibling and rename, so readers never see a torn file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), DatasetError> {
    let tmp = path.with_extension("tmp");
    write_file(&tmp, bytes)?;
    fs::rename(&tmp, path).map_err(io_err(path))
}

fn pose_records(set: &ProblemSet) -> BTreeMap<String, PoseRecord> {
    set.problems
        .iter()
        .map(|p| {
            (
                p.id.clone(),
                PoseRecord {
                    calibrated: p.calibrated_poses.clone(),
                    canonical: p.canonical_poses.clone(),
                },
            )
        })
        .collect()
}

fn manifest_for(set: &ProblemSet) -> Manifest {
    Manifest {
        version: FORMAT_VERSION,
        seed: set.seed,
        forge: set.forge.clone(),
        problems: set
            .problems
            .iter()
            .map(|p| ProblemEntry {
                id: p.id.clone(),
                odd: p.odd,
                statement: p.statement.clone(),
                original: object_path(&p.id, Target::Original),
                options: OptionLabel::ALL
                    .into_iter()
                    .map(|l| (l, object_path(&p.id, l.into())))
                    .collect(),
                image: image_path(&p.id),
            })
            .collect(),
        checksum: String::new(),
    }
}

fn json_pretty<T: Serialize>(v: &T) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(v).expect("serializable");
    out.push(b'\n');
    out
}

pub fn save_problem_set(set: &mut ProblemSet, dir: &Path) -> Result<(), DatasetError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    for p in &set.problems {
        for t in Target::ALL {
            write_file(&dir.join(object_path(&p.id, t)), p.object(t).to_text().as_bytes())?;
        }
        let img = set
            .images
            .get(&p.id)
            .ok_or_else(|| DatasetError::UnknownProblem(p.id.clone()))?;
        let png = encode_png(img).map_err(|e| corrupt(&dir.join(image_path(&p.id)), e))?;
        write_file(&dir.join(image_path(&p.id)), &png)?;
    }
    write_file(&dir.join(POSES), &json_pretty(&pose_records(set)))?;
    let mut manifest = manifest_for(set);
    manifest.checksum = compute_checksum(dir, &manifest)?;
    write_atomic(&dir.join(MANIFEST), &json_pretty(&manifest))?;
    set.checksum = Some(manifest.checksum);
    Ok(())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, DatasetError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    serde_json::from_slice(&bytes).map_err(|e| corrupt(path, e))
}

fn read_object(dir: &Path, rel: &str) -> Result<Polycube, DatasetError> {
    let path = dir.join(rel);
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    Polycube::from_text(&text).map_err(|e| corrupt(&path, e))
}

pub fn read_manifest(dir: &Path) -> Result<Manifest, DatasetError> {
    read_json(&dir.join(MANIFEST))
}

pub fn load_problem_set(dir: &Path) -> Result<ProblemSet, DatasetError> {
    let manifest_path = dir.join(MANIFEST);
    let manifest: Manifest = read_json(&manifest_path)?;
    if manifest.version != FORMAT_VERSION {
        return Err(corrupt(
            &manifest_path,
            format!("unsupported version {}", manifest.version),
        ));
    }
    let actual = compute_checksum(dir, &manifest)?;
    if actual != manifest.checksum {
        return Err(DatasetError::Checksum {
            path: manifest_path,
            expected: manifest.checksum.clone(),
            actual,
        });
    }
    let poses_path = dir.join(POSES);
    let poses: BTreeMap<String, PoseRecord> = read_json(&poses_path)?;
    let mut problems = Vec::with_capacity(manifest.problems.len());
    let mut images = BTreeMap::new();
    for e in &manifest.problems {
        let original = read_object(dir, &e.original)?;
        let mut options = BTreeMap::new();
        for label in OptionLabel::ALL {
            let rel = e
                .options
                .get(&label)
                .ok_or_else(|| corrupt(&manifest_path, format!("{}: no option {label}", e.id)))?;
            options.insert(label, read_object(dir, rel)?);
        }
        let record = poses
            .get(&e.id)
            .ok_or_else(|| corrupt(&poses_path, format!("no poses for {}", e.id)))?;
        let image_path = dir.join(&e.image);
        let bytes = fs::read(&image_path).map_err(io_err(&image_path))?;
        let img = decode_png(&bytes).map_err(|err| corrupt(&image_path, err))?;
        images.insert(e.id.clone(), img);
        problems.push(Problem {
            id: e.id.clone(),
            original,
            options,
            odd: e.odd,
            calibrated_poses: record.calibrated.clone(),
            canonical_poses: record.canonical.clone(),
            statement: e.statement.clone(),
        });
    }
    Ok(ProblemSet {
        seed: manifest.seed,
        forge: manifest.forge,
        problems,
        images,
        checksum: Some(manifest.checksum),
    })
}

/// True when the manifest is not writable, which marks the whole set as
/// read-only for calibration.
pub fn is_read_only(dir: &Path) -> Result<bool, DatasetError> {
    let manifest_path = dir.join(MANIFEST);
    Ok(fs::metadata(&manifest_path)
        .map_err(io_err(&manifest_path))?
        .permissions()
        .readonly())
}

/// Replaces one calibrated pose on disk and refreshes the checksum. Problem
/// images are left as they are: they are the reference being matched.
pub fn commit_calibrated_pose(
    dir: &Path,
    problem_id: &str,
    target: Target,
    pose: Pose,
) -> Result<String, DatasetError> {
    let poses_path = dir.join(POSES);
    let manifest_path = dir.join(MANIFEST);
    if is_read_only(dir)? {
        return Err(DatasetError::ReadOnly(dir.to_path_buf()));
    }
    let mut poses: BTreeMap<String, PoseRecord> = read_json(&poses_path)?;
    let record = poses
        .get_mut(problem_id)
        .ok_or_else(|| DatasetError::UnknownProblem(problem_id.to_string()))?;
    record.calibrated.insert(target, pose);
    write_atomic(&poses_path, &json_pretty(&poses))?;
    let mut manifest: Manifest = read_json(&manifest_path)?;
    manifest.checksum = compute_checksum(dir, &manifest)?;
    write_atomic(&manifest_path, &json_pretty(&manifest))?;
    Ok(manifest.checksum)
}
