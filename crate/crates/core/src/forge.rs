//! Seeded generation of polycubes and odd-one-out problems.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{
    canonical_orientations, count_components, rotation_equivalent, GridRotation, Polycube,
    Pose, VoxelCoord,
};
use crate::protocol::{Direction, OptionLabel, Target, Turn, PROBLEM_STATEMENT};
use crate::render::{
    compose_grid, image_diff, render, CameraRig, RasterImage, RenderError, RenderSettings,
};

#[derive(Debug, Error)]
pub enum ForgeError {
    #[error("constraints cannot be satisfied: {0}")]
    Unsatisfiable(String),
    #[error("seed {seed}: gave up after {attempts} attempts ({reason})")]
    RetriesExhausted {
        seed: u64,
        attempts: u32,
        reason: String,
    },
    #[error(transparent)]
    Render(#[from] RenderError),
}

/// Bounding box and size limits for generated objects. Height is measured
/// along Y, width along X and depth along Z.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ForgeConstraints {
    pub max_height: i32,
    pub max_width: i32,
    pub max_depth: i32,
    pub min_cubes: usize,
    pub max_cubes: usize,
}

impl Default for ForgeConstraints {
    fn default() -> Self {
        Self {
            max_height: 2,
            max_width: 5,
            max_depth: 5,
            min_cubes: 5,
            max_cubes: 8,
        }
    }
}

impl ForgeConstraints {
    pub fn validate(&self) -> Result<(), ForgeError> {
        let dims = [self.max_width, self.max_height, self.max_depth];
        if dims.iter().any(|&d| d < 1) {
            return Err(ForgeError::Unsatisfiable(format!(
                "box dimensions must be positive, got {dims:?}"
            )));
        }
        if self.min_cubes == 0 || self.min_cubes > self.max_cubes {
            return Err(ForgeError::Unsatisfiable(format!(
                "cube range {}..={} is empty",
                self.min_cubes, self.max_cubes
            )));
        }
        let volume = dims.iter().map(|&d| d as usize).product::<usize>();
        if self.min_cubes > volume {
            return Err(ForgeError::Unsatisfiable(format!(
                "{} cubes do not fit a {}x{}x{} box",
                self.min_cubes, self.max_width, self.max_height, self.max_depth
            )));
        }
        Ok(())
    }

    /// Checks the object as built, without reorienting it.
    pub fn admits(&self, p: &Polycube) -> bool {
        let [w, h, d] = p.dims();
        (self.min_cubes..=self.max_cubes).contains(&p.len())
            && w <= self.max_width
            && h <= self.max_height
            && d <= self.max_depth
    }

    /// Checks whether some grid rotation of the object fits.
    pub fn admits_rotated(&self, p: &Polycube) -> bool {
        canonical_orientations()
            .iter()
            .any(|r| self.admits(&p.rotated(r)))
    }
}

fn fits(cells: &BTreeSet<VoxelCoord>, c: &ForgeConstraints) -> bool {
    let mut lo = [i32::MAX; 3];
    let mut hi = [i32::MIN; 3];
    for v in cells {
        for (i, x) in [v.x, v.y, v.z].into_iter().enumerate() {
            lo[i] = lo[i].min(x);
            hi[i] = hi[i].max(x);
        }
    }
    hi[0] - lo[0] < c.max_width && hi[1] - lo[1] < c.max_height && hi[2] - lo[2] < c.max_depth
}

const GROWTH_TRIES: u32 = 200;

/// Grows a random connected object inside the constraint box.
pub fn generate_polycube_with<R: Rng + ?Sized>(
    rng: &mut R,
    c: &ForgeConstraints,
) -> Result<Polycube, ForgeError> {
    c.validate()?;
    let target = rng.random_range(c.min_cubes..=c.max_cubes);
    for _ in 0..GROWTH_TRIES {
        let mut cells = BTreeSet::from([VoxelCoord::new(0, 0, 0)]);
        let mut stalls = 0;
        while cells.len() < target && stalls < 64 {
            let list: Vec<VoxelCoord> = cells.iter().copied().collect();
            let from = *list.choose(rng).expect("non-empty");
            let next = from.neighbors()[rng.random_range(0..6)];
            if cells.contains(&next) {
                stalls += 1;
                continue;
            }
            cells.insert(next);
            if fits(&cells, c) {
                stalls = 0;
            } else {
                cells.remove(&next);
                stalls += 1;
            }
        }
        if cells.len() == target {
            return Polycube::new(cells).map_err(|e| ForgeError::Unsatisfiable(e.to_string()));
        }
    }
    Err(ForgeError::Unsatisfiable(format!(
        "could not grow {target} cubes inside the box"
    )))
}

pub fn generate_polycube(seed: u64, c: &ForgeConstraints) -> Result<Polycube, ForgeError> {
    generate_polycube_with(&mut ChaCha8Rng::seed_from_u64(seed), c)
}

/// Elevated three-quarter views offered to problem objects: a turn about
/// the vertical axis followed by a downward tilt toward the camera.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosePool {
    pub yaws_deg: Vec<f64>,
    pub elevation_deg: f64,
}

impl Default for PosePool {
    fn default() -> Self {
        Self {
            // multiples of 30 that are not edge-on
            yaws_deg: vec![30.0, 60.0, 120.0, 150.0, 210.0, 240.0, 300.0, 330.0],
            elevation_deg: 30.0,
        }
    }
}

impl PosePool {
    pub fn view(&self, yaw_deg: f64) -> Pose {
        let yaw = crate::geometry::camera_rotation(&Turn::new(Direction::Right, yaw_deg));
        let tilt = crate::geometry::camera_rotation(&Turn::new(Direction::Down, self.elevation_deg));
        tilt.then_after(&yaw)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForgeConfig {
    pub constraints: ForgeConstraints,
    pub pose_pool: PosePool,
    pub rig: CameraRig,
    pub settings: RenderSettings,
    pub max_attempts: u32,
}

impl Default for ForgeConfig {
    fn default() -> Self {
        Self {
            constraints: ForgeConstraints::default(),
            pose_pool: PosePool::default(),
            rig: CameraRig::default(),
            settings: RenderSettings::default(),
            max_attempts: 100,
        }
    }
}

/// One odd-one-out task. Every object lives in its own grid frame; the
/// canonical pose of a target maps that frame back onto the original's.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Problem {
    pub id: String,
    pub original: Polycube,
    pub options: BTreeMap<OptionLabel, Polycube>,
    pub odd: OptionLabel,
    /// Pose each target is shown in by the problem image.
    pub calibrated_poses: BTreeMap<Target, Pose>,
    /// Pose restored by `reset`.
    pub canonical_poses: BTreeMap<Target, Pose>,
    pub statement: String,
}

impl Problem {
    pub fn object(&self, target: Target) -> &Polycube {
        match target.option() {
            None => &self.original,
            Some(l) => &self.options[&l],
        }
    }

    pub fn calibrated_pose(&self, target: Target) -> Pose {
        self.calibrated_poses.get(&target).copied().unwrap_or_default()
    }

    pub fn canonical_pose(&self, target: Target) -> Pose {
        self.canonical_poses.get(&target).copied().unwrap_or_default()
    }

    /// Options that are not rotations of the original.
    pub fn odd_options(&self) -> Vec<OptionLabel> {
        OptionLabel::ALL
            .into_iter()
            .filter(|l| {
                self.options
                    .get(l)
                    .is_none_or(|p| !rotation_equivalent(&self.original, p))
            })
            .collect()
    }

    /// Exactly-one-odd check against the stored label.
    pub fn audit(&self) -> Result<(), String> {
        let odd = self.odd_options();
        if odd != [self.odd] {
            return Err(format!(
                "{}: expected only {} to be odd, oracle says {:?}",
                self.id, self.odd, odd
            ));
        }
        for t in Target::ALL {
            if !self.calibrated_poses.contains_key(&t) {
                return Err(format!("{}: no calibrated pose for {t}", self.id));
            }
        }
        Ok(())
    }

    pub fn render_tile(
        &self,
        target: Target,
        rig: &CameraRig,
        settings: &RenderSettings,
    ) -> Result<RasterImage, RenderError> {
        render(self.object(target), &self.calibrated_pose(target), rig, settings)
    }

    /// Original then A, B, C, each in its calibrated pose.
    pub fn render_problem_image(
        &self,
        rig: &CameraRig,
        settings: &RenderSettings,
    ) -> Result<RasterImage, RenderError> {
        let tiles = Target::ALL
            .into_iter()
            .map(|t| Ok((self.render_tile(t, rig, settings)?, t.as_str().to_string())))
            .collect::<Result<Vec<_>, RenderError>>()?;
        compose_grid(&tiles)
    }
}

fn random_rotation<R: Rng + ?Sized>(rng: &mut R) -> GridRotation {
    *canonical_orientations().choose(rng).expect("group is non-empty")
}

/// Moves one cube to another free spot, keeping the count, connectivity and
/// box constraints, such that the result is no rotation of the input.
fn one_cube_move<R: Rng + ?Sized>(
    rng: &mut R,
    p: &Polycube,
    c: &ForgeConstraints,
) -> Option<Polycube> {
    let cells: BTreeSet<VoxelCoord> = p.cells().collect();
    let mut removable: Vec<VoxelCoord> = cells.iter().copied().collect();
    removable.shuffle(rng);
    for cell in removable {
        let mut rest = cells.clone();
        rest.remove(&cell);
        if rest.is_empty() || count_components(&rest) != 1 {
            continue;
        }
        let mut spots: Vec<VoxelCoord> = rest
            .iter()
            .flat_map(|v| v.neighbors())
            .filter(|v| *v != cell && !rest.contains(v))
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        spots.shuffle(rng);
        for spot in spots {
            let mut moved = rest.clone();
            moved.insert(spot);
            if !fits(&moved, c) {
                continue;
            }
            let candidate = Polycube::new(moved).ok()?;
            if !rotation_equivalent(&candidate, p) {
                return Some(candidate);
            }
        }
    }
    None
}

/// Reset views used to make sure the odd option can be told apart: front,
/// top and side.
pub fn reset_view_turns() -> [Vec<Turn>; 3] {
    [
        vec![],
        vec![Turn::new(Direction::Down, 90.0)],
        vec![Turn::new(Direction::Left, 90.0)],
    ]
}

fn reset_views(
    object: &Polycube,
    canonical: &Pose,
    cfg: &ForgeConfig,
) -> Result<Vec<RasterImage>, RenderError> {
    reset_view_turns()
        .iter()
        .map(|turns| {
            let pose = turns.iter().fold(*canonical, |p, t| {
                crate::geometry::apply_camera_rotation(&p, t)
            });
            render(object, &pose, &cfg.rig, &cfg.settings)
        })
        .collect()
}

pub fn make_problem(id: &str, seed: u64, cfg: &ForgeConfig) -> Result<Problem, ForgeError> {
    cfg.constraints.validate()?;
    if cfg.pose_pool.yaws_deg.len() < 4 {
        return Err(ForgeError::Unsatisfiable(
            "pose pool needs at least four yaw angles".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut last_reason = String::new();
    for _ in 0..cfg.max_attempts {
        let original = generate_polycube_with(&mut rng, &cfg.constraints)?;
        let base_odd = if original.is_chiral() {
            original.mirror()
        } else {
            match one_cube_move(&mut rng, &original, &cfg.constraints) {
                Some(p) => p,
                None => {
                    last_reason = "no valid one-cube edit".into();
                    continue;
                }
            }
        };
        let odd = OptionLabel::ALL[rng.random_range(0..3)];

        let mut yaws = cfg.pose_pool.yaws_deg.clone();
        yaws.shuffle(&mut rng);
        let mut options = BTreeMap::new();
        let mut calibrated = BTreeMap::new();
        let mut canonical = BTreeMap::new();
        calibrated.insert(Target::Original, cfg.pose_pool.view(yaws[0]));
        canonical.insert(Target::Original, Pose::identity());
        for (i, label) in OptionLabel::ALL.into_iter().enumerate() {
            let r = random_rotation(&mut rng);
            let source = if label == odd { &base_odd } else { &original };
            let reset = r.to_pose().inverse();
            options.insert(label, source.rotated(&r));
            canonical.insert(label.into(), reset);
            calibrated.insert(label.into(), cfg.pose_pool.view(yaws[i + 1]).then_after(&reset));
        }
        let problem = Problem {
            id: id.to_string(),
            original,
            options,
            odd,
            calibrated_poses: calibrated,
            canonical_poses: canonical,
            statement: PROBLEM_STATEMENT.to_string(),
        };
        if let Err(e) = problem.audit() {
            last_reason = e;
            continue;
        }
        let reference = reset_views(&problem.original, &Pose::identity(), cfg)?;
        let odd_views = reset_views(
            problem.object(odd.into()),
            &problem.canonical_pose(odd.into()),
            cfg,
        )?;
        let same = reference
            .iter()
            .zip(&odd_views)
            .all(|(a, b)| image_diff(a, b).map(|d| d == 0.0).unwrap_or(false));
        if same {
            last_reason = "odd option indistinguishable in reset views".into();
            continue;
        }
        return Ok(problem);
    }
    Err(ForgeError::RetriesExhausted {
        seed,
        attempts: cfg.max_attempts,
        reason: last_reason,
    })
}

/// Per-problem seeds derived from one master seed.
pub fn problem_seeds(seed: u64, count: usize) -> Vec<u64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|_| rng.random()).collect()
}

pub fn problem_id(index: usize) -> String {
    format!("q{:03}", index + 1)
}

pub fn forge_problems(seed: u64, count: usize, cfg: &ForgeConfig) -> Result<Vec<Problem>, ForgeError> {
    problem_seeds(seed, count)
        .into_iter()
        .enumerate()
        .map(|(i, s)| make_problem(&problem_id(i), s, cfg))
        .collect()
}

/// Objects with no rotational symmetry, so every distinct pose renders a
/// distinct picture.
pub fn asymmetric_objects(seed: u64, count: usize, c: &ForgeConstraints) -> Result<Vec<Polycube>, ForgeError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out: Vec<Polycube> = Vec::new();
    let mut tries = 0;
    while out.len() < count {
        tries += 1;
        if tries > 10_000 {
            return Err(ForgeError::RetriesExhausted {
                seed,
                attempts: tries,
                reason: "not enough asymmetric objects".into(),
            });
        }
        let p = generate_polycube_with(&mut rng, c)?;
        if p.symmetries().len() == 1 && !out.iter().any(|q| rotation_equivalent(q, &p)) {
            out.push(p);
        }
    }
    Ok(out)
}

/// Small reference object used for sensitivity checks.
pub fn marker_object() -> Polycube {
    Polycube::from_triples(&[(0, 0, 0), (1, 0, 0), (2, 0, 0), (2, 1, 0), (0, 0, 1)])
        .expect("marker is connected")
}
