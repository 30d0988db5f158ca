//! Deterministic software rendering of polycubes to RGB rasters.
//!
//! Rasterization is a per-pixel depth test over the exposed cube faces.
//! Object coordinates are kept as exact integers (scaled by twice the cell
//! count so the centroid lands on the lattice) and the pose matrix is
//! snapped to a 2^-32 grid, which makes every world-space coordinate exact.
//! Rotating the object on the grid and counter-rotating the pose therefore
//! produces the same bytes, not merely a similar picture.

use std::collections::BTreeSet;
use std::io::Cursor;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::font::{glyph, GLYPH_ADVANCE, GLYPH_HEIGHT, GLYPH_WIDTH};
use crate::geometry::{apply_camera_rotation, Polycube, Pose, VoxelCoord};
use crate::protocol::{Direction, Turn};

/// Height of the label strip above every grid cell.
pub const BANNER_HEIGHT: u32 = 16;
/// Largest extent (in cells) accepted along any axis.
pub const MAX_EXTENT: i32 = 64;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RenderError {
    #[error("object spans {extent} cells along one axis (limit {MAX_EXTENT})")]
    TooLarge { extent: i32 },
    #[error("invalid camera rig: {0}")]
    BadRig(String),
    #[error("image size mismatch: {a:?} vs {b:?}")]
    SizeMismatch { a: (u32, u32), b: (u32, u32) },
    #[error("grid needs at least one image")]
    EmptyGrid,
    #[error("png encode failed: {0}")]
    Encode(String),
    #[error("png decode failed: {0}")]
    Decode(String),
}

/// Row-major RGB8 raster.
#[derive(Clone, PartialEq, Eq)]
pub struct RasterImage {
    width: u32,
    height: u32,
    pixels: Vec<u8>,
}

impl std::fmt::Debug for RasterImage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "RasterImage({}x{})", self.width, self.height)
    }
}

impl RasterImage {
    pub fn filled(width: u32, height: u32, rgb: [u8; 3]) -> Self {
        assert!(width > 0 && height > 0, "raster dimensions must be positive");
        let pixels = rgb
            .iter()
            .copied()
            .cycle()
            .take(width as usize * height as usize * 3)
            .collect();
        Self {
            width,
            height,
            pixels,
        }
    }

    pub fn from_raw(width: u32, height: u32, pixels: Vec<u8>) -> Option<Self> {
        (width > 0 && height > 0 && pixels.len() == width as usize * height as usize * 3).then_some(
            Self {
                width,
                height,
                pixels,
            },
        )
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn size(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn pixel(&self, x: u32, y: u32) -> [u8; 3] {
        let i = (y as usize * self.width as usize + x as usize) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    pub fn set_pixel(&mut self, x: u32, y: u32, rgb: [u8; 3]) {
        let i = (y as usize * self.width as usize + x as usize) * 3;
        self.pixels[i..i + 3].copy_from_slice(&rgb);
    }

    /// Copies `src` with its top-left corner at (x, y), clipped.
    pub fn blit(&mut self, src: &RasterImage, x: u32, y: u32) {
        let w = src.width.min(self.width.saturating_sub(x));
        let h = src.height.min(self.height.saturating_sub(y));
        for row in 0..h {
            let s = (row as usize * src.width as usize) * 3;
            let d = ((y + row) as usize * self.width as usize + x as usize) * 3;
            self.pixels[d..d + w as usize * 3].copy_from_slice(&src.pixels[s..s + w as usize * 3]);
        }
    }

    pub fn crop(&self, x: u32, y: u32, width: u32, height: u32) -> Option<RasterImage> {
        if width == 0 || height == 0 || x + width > self.width || y + height > self.height {
            return None;
        }
        let mut pixels = Vec::with_capacity(width as usize * height as usize * 3);
        for row in y..y + height {
            let s = (row as usize * self.width as usize + x as usize) * 3;
            pixels.extend_from_slice(&self.pixels[s..s + width as usize * 3]);
        }
        RasterImage::from_raw(width, height, pixels)
    }
}

/// Eye placement, expressed relative to the object's bounding radius.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraRig {
    /// Eye distance in multiples of the bounding radius.
    pub distance_factor: f64,
    pub fov_deg: f64,
}

impl Default for CameraRig {
    fn default() -> Self {
        Self {
            distance_factor: 4.5,
            fov_deg: 30.0,
        }
    }
}

impl CameraRig {
    pub fn validate(&self) -> Result<(), RenderError> {
        if !(self.distance_factor.is_finite() && self.distance_factor > 1.0) {
            return Err(RenderError::BadRig(format!(
                "distance factor {} must exceed 1",
                self.distance_factor
            )));
        }
        if !(10.0..=90.0).contains(&self.fov_deg) {
            return Err(RenderError::BadRig(format!(
                "fov {} outside [10, 90]",
                self.fov_deg
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RenderSettings {
    pub width: u32,
    pub height: u32,
    pub background: [u8; 3],
    /// Faces whose dominant world normal is vertical.
    pub top_color: [u8; 3],
    /// Faces facing mostly left or right.
    pub side_color: [u8; 3],
    /// Faces facing mostly toward or away from the camera.
    pub front_color: [u8; 3],
    pub edge_color: [u8; 3],
    /// Edge band width in pixels, measured inward from each face outline.
    pub edge_width: f64,
}

impl Default for RenderSettings {
    fn default() -> Self {
        Self {
            width: 256,
            height: 256,
            background: [255, 255, 255],
            top_color: [176, 210, 244],
            side_color: [108, 154, 214],
            front_color: [58, 100, 172],
            edge_color: [0, 0, 0],
            edge_width: 1.0,
        }
    }
}

/// A three-quarter view that shows the top, front and right faces of a
/// cube sitting in its build frame.
pub fn presentation_pose() -> Pose {
    let p = apply_camera_rotation(&Pose::identity(), &Turn::new(Direction::Left, 35.0));
    apply_camera_rotation(&p, &Turn::new(Direction::Down, 25.0))
}

const SNAP: f64 = 4_294_967_296.0; // 2^32

fn snapped_matrix(pose: &Pose) -> [[f64; 3]; 3] {
    let mut m = pose.rotation_matrix();
    for row in &mut m {
        for v in row.iter_mut() {
            *v = (*v * SNAP).round() / SNAP;
        }
    }
    m
}

fn mul(m: &[[f64; 3]; 3], v: [i64; 3]) -> [f64; 3] {
    let f = [v[0] as f64, v[1] as f64, v[2] as f64];
    [
        m[0][0] * f[0] + m[0][1] * f[1] + m[0][2] * f[2],
        m[1][0] * f[0] + m[1][1] * f[1] + m[1][2] * f[2],
        m[2][0] * f[0] + m[2][1] * f[1] + m[2][2] * f[2],
    ]
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Shade {
    Top,
    Side,
    Front,
}

struct Face {
    /// Exact world coordinates, in lattice units (scaled by 2n).
    corners: [[f64; 3]; 4],
    center: [f64; 3],
    normal: [f64; 3],
    shade: Shade,
}

/// Finite-value comparison that treats -0.0 and 0.0 as equal.
fn cmp(a: f64, b: f64) -> std::cmp::Ordering {
    a.partial_cmp(&b).unwrap_or(std::cmp::Ordering::Equal)
}

fn lex_less(a: &[f64; 3], b: &[f64; 3]) -> bool {
    for i in 0..3 {
        match cmp(a[i], b[i]) {
            std::cmp::Ordering::Less => return true,
            std::cmp::Ordering::Greater => return false,
            std::cmp::Ordering::Equal => {}
        }
    }
    false
}

/// Cyclic order starting at the lexicographically smallest corner, heading
/// toward its smaller neighbour, so the order depends only on world data.
fn canonical_cycle(c: [[f64; 3]; 4]) -> [[f64; 3]; 4] {
    let mut start = 0;
    for i in 1..4 {
        if lex_less(&c[i], &c[start]) {
            start = i;
        }
    }
    let next = c[(start + 1) % 4];
    let prev = c[(start + 3) % 4];
    if lex_less(&next, &prev) {
        [c[start], c[(start + 1) % 4], c[(start + 2) % 4], c[(start + 3) % 4]]
    } else {
        [c[start], c[(start + 3) % 4], c[(start + 2) % 4], c[(start + 1) % 4]]
    }
}

fn dominant_shade(n: [f64; 3]) -> Shade {
    let (ax, ay, az) = (n[0].abs(), n[1].abs(), n[2].abs());
    if ay >= ax && ay >= az {
        Shade::Top
    } else if ax >= az {
        Shade::Side
    } else {
        Shade::Front
    }
}

/// Corners of the face of unit cube `c` facing `dir` (index into
/// [`VoxelCoord::neighbors`] order: -x, +x, -y, +y, -z, +z), in cyclic order.
fn face_corners(c: VoxelCoord, dir: usize) -> [[i64; 3]; 4] {
    let (x, y, z) = (i64::from(c.x), i64::from(c.y), i64::from(c.z));
    let axis = dir / 2;
    let off = (dir % 2) as i64;
    let (u, v) = match axis {
        0 => (1, 2),
        1 => (0, 2),
        _ => (0, 1),
    };
    let base = [x, y, z];
    let mut out = [[0i64; 3]; 4];
    for (k, (du, dv)) in [(0, 0), (1, 0), (1, 1), (0, 1)].into_iter().enumerate() {
        let mut p = base;
        p[axis] += off;
        p[u] += du;
        p[v] += dv;
        out[k] = p;
    }
    out
}

/// Renders the polycube, centred on its centroid, as seen by the rig.
pub fn render(
    object: &Polycube,
    pose: &Pose,
    rig: &CameraRig,
    settings: &RenderSettings,
) -> Result<RasterImage, RenderError> {
    rig.validate()?;
    let extent = object.dims().into_iter().max().unwrap_or(0);
    if extent > MAX_EXTENT {
        return Err(RenderError::TooLarge { extent });
    }
    let cells: BTreeSet<VoxelCoord> = object.cells().collect();
    let n = cells.len() as i64;
    let sum = cells.iter().fold([0i64; 3], |acc, c| {
        [acc[0] + i64::from(c.x), acc[1] + i64::from(c.y), acc[2] + i64::from(c.z)]
    });
    // Lattice coordinates: 2n * (p - centroid), with the centroid taken over
    // cell centres.
    let lattice = |p: [i64; 3]| -> [i64; 3] {
        [
            2 * n * p[0] - 2 * sum[0] - n,
            2 * n * p[1] - 2 * sum[1] - n,
            2 * n * p[2] - 2 * sum[2] - n,
        ]
    };

    let mut radius_sq = 0i64;
    for c in &cells {
        for dx in 0..2 {
            for dy in 0..2 {
                for dz in 0..2 {
                    let l = lattice([
                        i64::from(c.x) + dx,
                        i64::from(c.y) + dy,
                        i64::from(c.z) + dz,
                    ]);
                    radius_sq = radius_sq.max(l[0] * l[0] + l[1] * l[1] + l[2] * l[2]);
                }
            }
        }
    }
    let radius = (radius_sq as f64).sqrt();
    let eye_z = rig.distance_factor * radius;

    let m = snapped_matrix(pose);
    let mut faces = Vec::new();
    for &c in &cells {
        for (dir, nb) in c.neighbors().into_iter().enumerate() {
            if cells.contains(&nb) {
                continue;
            }
            let mut axis = [0i64; 3];
            axis[dir / 2] = if dir % 2 == 0 { -1 } else { 1 };
            let normal = mul(&m, axis);
            let lat_corners = face_corners(c, dir).map(lattice);
            // Four times the face centre, still integral.
            let mut center_sum = [0i64; 3];
            for p in &lat_corners {
                for i in 0..3 {
                    center_sum[i] += p[i];
                }
            }
            let center4 = mul(&m, center_sum);
            let center = [center4[0] / 4.0, center4[1] / 4.0, center4[2] / 4.0];
            let to_eye = [-center[0], -center[1], eye_z - center[2]];
            let facing = normal[0] * to_eye[0] + normal[1] * to_eye[1] + normal[2] * to_eye[2];
            if facing <= 0.0 {
                continue;
            }
            let corners = canonical_cycle(lat_corners.map(|p| mul(&m, p)));
            faces.push(Face {
                corners,
                center,
                normal,
                shade: dominant_shade(normal),
            });
        }
    }
    faces.sort_by(|a, b| {
        let da = eye_z - a.center[2];
        let db = eye_z - b.center[2];
        cmp(da, db)
            .then(cmp(a.center[0], b.center[0]))
            .then(cmp(a.center[1], b.center[1]))
            .then(cmp(a.center[2], b.center[2]))
    });

    let w = settings.width;
    let h = settings.height;
    let mut img = RasterImage::filled(w, h, settings.background);
    let mut depth = vec![f64::INFINITY; w as usize * h as usize];
    let focal = (f64::from(h) / 2.0) / (rig.fov_deg.to_radians() / 2.0).tan();
    let (cx, cy) = (f64::from(w) / 2.0, f64::from(h) / 2.0);

    for face in &faces {
        let screen: Vec<[f64; 2]> = face
            .corners
            .iter()
            .map(|p| {
                let dz = eye_z - p[2];
                [cx + focal * p[0] / dz, cy - focal * p[1] / dz]
            })
            .collect();
        let area: f64 = (0..4)
            .map(|i| {
                let a = screen[i];
                let b = screen[(i + 1) % 4];
                a[0] * b[1] - b[0] * a[1]
            })
            .sum();
        if area == 0.0 {
            continue;
        }
        let orient = area.signum();
        let min_x = screen.iter().map(|p| p[0]).fold(f64::INFINITY, f64::min);
        let max_x = screen.iter().map(|p| p[0]).fold(f64::NEG_INFINITY, f64::max);
        let min_y = screen.iter().map(|p| p[1]).fold(f64::INFINITY, f64::min);
        let max_y = screen.iter().map(|p| p[1]).fold(f64::NEG_INFINITY, f64::max);
        let x0 = (min_x.floor().max(0.0)) as u32;
        let x1 = (max_x.ceil().min(f64::from(w))) as u32;
        let y0 = (min_y.floor().max(0.0)) as u32;
        let y1 = (max_y.ceil().min(f64::from(h))) as u32;

        let edges: Vec<([f64; 2], [f64; 2], f64)> = (0..4)
            .map(|i| {
                let a = screen[i];
                let b = screen[(i + 1) % 4];
                let len = ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2)).sqrt();
                (a, b, len)
            })
            .collect();
        let plane_d = face.normal[0] * face.center[0]
            + face.normal[1] * face.center[1]
            + face.normal[2] * (face.center[2] - eye_z);
        let color = match face.shade {
            Shade::Top => settings.top_color,
            Shade::Side => settings.side_color,
            Shade::Front => settings.front_color,
        };

        for py in y0..y1 {
            let sy = f64::from(py) + 0.5;
            for px in x0..x1 {
                let sx = f64::from(px) + 0.5;
                let mut inside = true;
                let mut min_dist = f64::INFINITY;
                for (a, b, len) in &edges {
                    let e = orient * ((b[0] - a[0]) * (sy - a[1]) - (b[1] - a[1]) * (sx - a[0]));
                    if e < 0.0 {
                        inside = false;
                        break;
                    }
                    if *len > 0.0 {
                        min_dist = min_dist.min(e / len);
                    }
                }
                if !inside {
                    continue;
                }
                let dir = [(sx - cx) / focal, -(sy - cy) / focal, -1.0];
                let denom =
                    face.normal[0] * dir[0] + face.normal[1] * dir[1] + face.normal[2] * dir[2];
                if denom == 0.0 {
                    continue;
                }
                let t = plane_d / denom;
                let slot = py as usize * w as usize + px as usize;
                if t < depth[slot] {
                    depth[slot] = t;
                    let rgb = if min_dist < settings.edge_width {
                        settings.edge_color
                    } else {
                        color
                    };
                    img.set_pixel(px, py, rgb);
                }
            }
        }
    }
    Ok(img)
}

/// Labelled snapshots laid out left to right.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SnapshotGrid {
    pub cells: Vec<(RasterImage, String)>,
}

impl SnapshotGrid {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, image: RasterImage, label: impl Into<String>) {
        self.cells.push((image, label.into()));
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn last_image(&self) -> Option<&RasterImage> {
        self.cells.last().map(|(img, _)| img)
    }

    pub fn compose(&self) -> Result<RasterImage, RenderError> {
        compose_grid(&self.cells)
    }
}

fn draw_text(img: &mut RasterImage, text: &str, x0: u32, y0: u32, scale: u32, rgb: [u8; 3]) {
    let mut x = x0;
    for ch in text.chars() {
        if x + GLYPH_WIDTH * scale > img.width() {
            break;
        }
        let rows = glyph(ch);
        for (ry, bits) in rows.iter().enumerate() {
            for rx in 0..GLYPH_WIDTH {
                if bits & (1 << (GLYPH_WIDTH - 1 - rx)) == 0 {
                    continue;
                }
                for sy in 0..scale {
                    for sx in 0..scale {
                        let px = x + rx * scale + sx;
                        let py = y0 + ry as u32 * scale + sy;
                        if px < img.width() && py < img.height() {
                            img.set_pixel(px, py, rgb);
                        }
                    }
                }
            }
        }
        x += GLYPH_ADVANCE * scale;
    }
}

/// Single-row composite with a [`BANNER_HEIGHT`] label strip over each cell.
pub fn compose_grid(images: &[(RasterImage, String)]) -> Result<RasterImage, RenderError> {
    let (first, _) = images.first().ok_or(RenderError::EmptyGrid)?;
    let (cw, ch) = first.size();
    for (img, _) in images {
        if img.size() != (cw, ch) {
            return Err(RenderError::SizeMismatch {
                a: (cw, ch),
                b: img.size(),
            });
        }
    }
    let n = images.len() as u32;
    let mut out = RasterImage::filled(cw * n, ch + BANNER_HEIGHT, [255, 255, 255]);
    for (i, (img, label)) in images.iter().enumerate() {
        let x = i as u32 * cw;
        for by in 0..BANNER_HEIGHT {
            for bx in 0..cw {
                out.set_pixel(x + bx, by, [228, 228, 228]);
            }
        }
        let chars = label.chars().count() as u32;
        let scale = if chars * GLYPH_ADVANCE * 2 + 4 <= cw { 2 } else { 1 };
        let top = (BANNER_HEIGHT - GLYPH_HEIGHT * scale) / 2;
        draw_text(&mut out, label, x + 2, top, scale, [0, 0, 0]);
        out.blit(img, x, BANNER_HEIGHT);
        if i > 0 {
            for y in 0..BANNER_HEIGHT {
                out.set_pixel(x, y, [128, 128, 128]);
            }
        }
    }
    Ok(out)
}

/// Recovers the cells of a composite built by [`compose_grid`].
pub fn split_grid(grid: &RasterImage, cells: u32) -> Option<Vec<RasterImage>> {
    if cells == 0 || !grid.width().is_multiple_of(cells) || grid.height() <= BANNER_HEIGHT {
        return None;
    }
    let cw = grid.width() / cells;
    (0..cells)
        .map(|i| grid.crop(i * cw, BANNER_HEIGHT, cw, grid.height() - BANNER_HEIGHT))
        .collect()
}

/// PNG with fixed encoder parameters (RGB8, no filter, balanced deflate).
pub fn encode_png(img: &RasterImage) -> Result<Vec<u8>, RenderError> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, img.width, img.height);
        enc.set_color(png::ColorType::Rgb);
        enc.set_depth(png::BitDepth::Eight);
        enc.set_compression(png::Compression::Balanced);
        enc.set_filter(png::Filter::NoFilter);
        let mut writer = enc
            .write_header()
            .map_err(|e| RenderError::Encode(e.to_string()))?;
        writer
            .write_image_data(&img.pixels)
            .map_err(|e| RenderError::Encode(e.to_string()))?;
        writer
            .finish()
            .map_err(|e| RenderError::Encode(e.to_string()))?;
    }
    Ok(out)
}

pub fn decode_png(bytes: &[u8]) -> Result<RasterImage, RenderError> {
    let mut dec = png::Decoder::new(Cursor::new(bytes));
    dec.set_transformations(png::Transformations::EXPAND | png::Transformations::STRIP_16);
    let mut reader = dec
        .read_info()
        .map_err(|e| RenderError::Decode(e.to_string()))?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| RenderError::Decode("image too large".into()))?;
    let mut buf = vec![0; size];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| RenderError::Decode(e.to_string()))?;
    buf.truncate(info.buffer_size());
    let rgb: Vec<u8> = match info.color_type {
        png::ColorType::Rgb => buf,
        png::ColorType::Rgba => buf.chunks_exact(4).flat_map(|p| [p[0], p[1], p[2]]).collect(),
        png::ColorType::Grayscale => buf.iter().flat_map(|&g| [g, g, g]).collect(),
        png::ColorType::GrayscaleAlpha => buf.chunks_exact(2).flat_map(|p| [p[0], p[0], p[0]]).collect(),
        png::ColorType::Indexed => {
            return Err(RenderError::Decode("unexpanded palette image".into()))
        }
    };
    RasterImage::from_raw(info.width, info.height, rgb)
        .ok_or_else(|| RenderError::Decode("pixel buffer size mismatch".into()))
}

/// Mean absolute per-channel difference scaled to [0, 1].
pub fn image_diff(a: &RasterImage, b: &RasterImage) -> Result<f64, RenderError> {
    if a.size() != b.size() {
        return Err(RenderError::SizeMismatch {
            a: a.size(),
            b: b.size(),
        });
    }
    let total: u64 = a
        .pixels
        .iter()
        .zip(&b.pixels)
        .map(|(&x, &y)| u64::from(x.abs_diff(y)))
        .sum();
    Ok(total as f64 / (a.pixels.len() as f64 * 255.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{canonical_orientations, Axis};

    fn cube() -> Polycube {
        Polycube::from_triples(&[(0, 0, 0)]).unwrap()
    }

    fn count_color(img: &RasterImage, rgb: [u8; 3]) -> usize {
        img.pixels().chunks_exact(3).filter(|p| *p == rgb).count()
    }

    #[test]
    fn presentation_view_of_a_cube_shows_three_shades() {
        let s = RenderSettings::default();
        let img = render(&cube(), &presentation_pose(), &CameraRig::default(), &s).unwrap();
        assert!(count_color(&img, s.top_color) > 500);
        assert!(count_color(&img, s.side_color) > 500);
        assert!(count_color(&img, s.front_color) > 500);
        assert!(count_color(&img, s.edge_color) > 50);
    }

    #[test]
    fn identity_pose_faces_the_front() {
        let s = RenderSettings::default();
        let img = render(&cube(), &Pose::identity(), &CameraRig::default(), &s).unwrap();
        assert!(count_color(&img, s.front_color) > 1000);
        assert_eq!(count_color(&img, s.top_color), 0);
        assert_eq!(img.pixel(128, 128), s.front_color);
        assert_eq!(img.pixel(0, 0), s.background);
    }

    #[test]
    fn render_is_deterministic() {
        let p = Polycube::from_triples(&[(0, 0, 0), (1, 0, 0), (1, 1, 0), (1, 1, 1)]).unwrap();
        let pose = Pose::from_axis_angle_deg(Axis::Y, 37.0);
        let s = RenderSettings::default();
        let a = render(&p, &pose, &CameraRig::default(), &s).unwrap();
        let b = render(&p, &pose, &CameraRig::default(), &s).unwrap();
        assert_eq!(encode_png(&a).unwrap(), encode_png(&b).unwrap());
    }

    #[test]
    fn bar_yaw_symmetry() {
        let bar = Polycube::from_triples(&[(0, 0, 0), (1, 0, 0)]).unwrap();
        let base = presentation_pose();
        let rig = CameraRig::default();
        let s = RenderSettings::default();
        let yaw = |deg: f64| {
            let p = apply_camera_rotation(&Pose::identity(), &Turn::new(Direction::Right, deg));
            render(&bar, &p.then_after(&base), &rig, &s).unwrap()
        };
        // about the camera's vertical axis; 180° maps the bar onto itself
        // only when the turn is a symmetry of the posed object.
        let body_yaw = |deg: f64| {
            let p = base.then_after(&Pose::from_axis_angle_deg(Axis::Y, deg));
            render(&bar, &p, &rig, &s).unwrap()
        };
        assert!(image_diff(&yaw(0.0), &yaw(90.0)).unwrap() > 0.01);
        assert_eq!(image_diff(&body_yaw(0.0), &body_yaw(180.0)).unwrap(), 0.0);
    }

    #[test]
    fn view_consistency_for_all_grid_rotations() {
        let p = Polycube::from_triples(&[(0, 0, 0), (1, 0, 0), (1, 1, 0), (1, 1, 1), (2, 1, 1)])
            .unwrap();
        let pose = presentation_pose().then_after(&Pose::from_axis_angle_deg(Axis::X, 13.0));
        let rig = CameraRig::default();
        let s = RenderSettings::default();
        let base = render(&p, &pose, &rig, &s).unwrap();
        for r in canonical_orientations() {
            let other = render(&p.rotated(r), &pose.then_after(&r.to_pose().inverse()), &rig, &s)
                .unwrap();
            assert_eq!(image_diff(&base, &other).unwrap(), 0.0);
        }
    }

    #[test]
    fn too_large_is_rejected() {
        let cells: Vec<(i32, i32, i32)> = (0..70).map(|x| (x, 0, 0)).collect();
        let p = Polycube::from_triples(&cells).unwrap();
        assert_eq!(
            render(&p, &Pose::identity(), &CameraRig::default(), &RenderSettings::default()),
            Err(RenderError::TooLarge { extent: 70 })
        );
    }

    #[test]
    fn grid_layout() {
        let img = RasterImage::filled(256, 256, [1, 2, 3]);
        let one = compose_grid(&[(img.clone(), "left:30".into())]).unwrap();
        assert_eq!(one.size(), (256, 256 + BANNER_HEIGHT));
        let six: Vec<_> = (0..6).map(|i| (img.clone(), format!("right:{}", i * 15))).collect();
        assert_eq!(compose_grid(&six).unwrap().width(), 6 * 256);
        let mixed = vec![
            (img.clone(), "a".to_string()),
            (RasterImage::filled(128, 128, [0, 0, 0]), "b".to_string()),
        ];
        assert!(matches!(compose_grid(&mixed), Err(RenderError::SizeMismatch { .. })));
        assert_eq!(compose_grid(&[]), Err(RenderError::EmptyGrid));
        let back = split_grid(&compose_grid(&six).unwrap(), 6).unwrap();
        assert_eq!(back[3], img);
    }

    #[test]
    fn png_roundtrip_and_truncation() {
        let mut img = RasterImage::filled(17, 9, [0, 0, 0]);
        let mut seed = 7u32;
        for y in 0..9 {
            for x in 0..17 {
                seed = seed.wrapping_mul(1_103_515_245).wrapping_add(12345);
                let b = seed.to_le_bytes();
                img.set_pixel(x, y, [b[0], b[1], b[2]]);
            }
        }
        let bytes = encode_png(&img).unwrap();
        assert_eq!(decode_png(&bytes).unwrap(), img);
        assert!(decode_png(&bytes[..bytes.len() / 2]).is_err());
        assert!(decode_png(b"not a png").is_err());
    }

    #[test]
    fn diff_bounds() {
        let black = RasterImage::filled(4, 4, [0, 0, 0]);
        let white = RasterImage::filled(4, 4, [255, 255, 255]);
        assert_eq!(image_diff(&black, &black).unwrap(), 0.0);
        assert_eq!(image_diff(&black, &white).unwrap(), 1.0);
        assert!(image_diff(&black, &RasterImage::filled(5, 4, [0, 0, 0])).is_err());
    }
}
