//! Procedural face corpus.
//!
//! Faces are drawn in a face frame measured in inter-eye distances, with the
//! eyes at `(-0.5, 0)` and `(0.5, 0)` and `v` pointing down. The identity
//! code is split in two halves. The inner half drives eyes, brows, nose and
//! mouth. The outer half drives a hair band above the forehead, ear bands at
//! the sides and a collar band below the chin. Skin and the head outline are
//! shared by everyone, so once the inner features are swapped, the outer
//! bands are the only trace of the source identity.
//!
//! The outer bands sit just outside what a tight crop (inter-eye distance
//! 0.35 of the crop width) can see and inside what a loose crop (0.27) sees.

use std::f64::consts::PI;
use std::path::Path;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::manifest::{Label, Manifest, ManifestEntry, Role, Split, MANIFEST_VERSION};
use crate::error::{Error, Result};
use crate::geometry::{LandmarkSet, Point, NUM_LANDMARKS};
use crate::image::FaceImage;

/// Pixels per face unit before scale jitter.
const UNIT_PX: f64 = 30.0;
const HAIR_EDGE: f64 = -1.40;
const SIDE_EDGE: f64 = 1.52;
const SIDE_OUTER: f64 = 2.05;
const COLLAR_EDGE: f64 = 1.68;
const HEAD_CENTER_V: f64 = 0.25;
const HEAD_AXES: (f64, f64) = (1.35, 1.80);
/// Region a face swap replaces, in inner-feature coordinates.
const INNER_CENTER: (f64, f64) = (0.0, 0.35);
const INNER_AXES: (f64, f64) = (1.05, 1.10);
/// Largest shift of the inner features against the head for full
/// out-of-plane rotation, in face units.
const MAX_FEATURE_SHIFT: f64 = 0.05;
/// Horizontal foreshortening of the inner features at full yaw.
const MAX_FORESHORTEN: f64 = 0.05;
const SKIN: [f64; 3] = [196.0, 160.0, 138.0];
/// Fixed seed of the code-to-appearance texture bank.
const BANK_SEED: u64 = 0x5EED_BA4C;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoseJitter {
    /// Largest in-plane rotation, degrees.
    pub rotation_deg: f64,
    /// Largest translation, pixels.
    pub translation_px: f64,
    /// Largest relative scale change.
    pub scale: f64,
    /// Largest yaw/pitch as a fraction of the full range.
    pub out_of_plane: f64,
}

impl PoseJitter {
    pub fn none() -> Self {
        Self {
            rotation_deg: 0.0,
            translation_px: 0.0,
            scale: 0.0,
            out_of_plane: 0.0,
        }
    }
}

impl Default for PoseJitter {
    fn default() -> Self {
        Self {
            rotation_deg: 15.0,
            translation_px: 5.0,
            scale: 0.05,
            out_of_plane: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthFaceConfig {
    pub n_identities: usize,
    /// Real frames per identity.
    pub images_per_identity: usize,
    pub frames_per_video: usize,
    /// Length of the identity code; the first half is the inner code.
    pub identity_dim: usize,
    pub pose_jitter: PoseJitter,
    /// 1.0 is a pixel-perfect inner replacement; lower values add noise
    /// along the seam.
    pub fake_fidelity: f64,
    /// Fake videos per identity in the test and validation splits.
    pub fake_test_videos: usize,
    pub fake_val_videos: usize,
    pub image_size: usize,
    pub rng_seed: u64,
}

impl Default for SynthFaceConfig {
    fn default() -> Self {
        Self {
            n_identities: 200,
            images_per_identity: 20,
            frames_per_video: 2,
            identity_dim: 32,
            pose_jitter: PoseJitter::default(),
            fake_fidelity: 1.0,
            fake_test_videos: 2,
            fake_val_videos: 1,
            image_size: 160,
            rng_seed: 0,
        }
    }
}

impl SynthFaceConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.n_identities < 2 {
            return bad(format!("n_identities must be at least 2, got {}", self.n_identities));
        }
        if self.images_per_identity == 0 || self.frames_per_video == 0 {
            return bad("images_per_identity and frames_per_video must be positive".into());
        }
        if self.identity_dim < 2 || self.identity_dim % 2 != 0 {
            return bad(format!("identity_dim must be even and at least 2, got {}", self.identity_dim));
        }
        if !(0.0..=1.0).contains(&self.fake_fidelity) {
            return bad(format!("fake_fidelity must be in [0, 1], got {}", self.fake_fidelity));
        }
        if self.image_size < 96 {
            return bad(format!("image_size must be at least 96, got {}", self.image_size));
        }
        let j = &self.pose_jitter;
        if ![j.rotation_deg, j.translation_px, j.scale, j.out_of_plane]
            .iter()
            .all(|v| v.is_finite() && *v >= 0.0)
            || j.scale >= 0.5
            || j.out_of_plane > 1.0
        {
            return bad("pose jitter must be non-negative, scale < 0.5, out_of_plane <= 1".into());
        }
        Ok(())
    }

    pub fn videos_per_identity(&self) -> usize {
        self.images_per_identity.div_ceil(self.frames_per_video)
    }
}

/// Appearance derived from an identity code.
#[derive(Clone, Debug, PartialEq)]
pub struct FaceParams {
    pub hair: [f64; 3],
    pub hair_pattern: (f64, f64, f64),
    pub side: [f64; 3],
    pub side_phase: f64,
    pub collar: [f64; 3],
    pub collar_pattern: (f64, f64),
    pub iris: [f64; 3],
    pub brow: [f64; 3],
    pub lips: [f64; 3],
    pub nose_tint: [f64; 3],
    pub eye_size: (f64, f64),
    pub brow_lift: f64,
    pub brow_thickness: f64,
    pub nose_length: f64,
    pub mouth_y: f64,
    pub mouth_width: f64,
}

const OUTER_FEATURES: usize = 16;
const INNER_FEATURES: usize = 20;

/// Fixed random projections from each code half to appearance features.
#[derive(Clone, Debug)]
struct TextureBank {
    outer: Vec<Vec<f64>>,
    inner: Vec<Vec<f64>>,
    phase: Vec<f64>,
}

impl TextureBank {
    fn new(half: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(BANK_SEED);
        let gain = 1.6 / (half as f64).sqrt();
        let mut rows = |n: usize| -> Vec<Vec<f64>> {
            (0..n)
                .map(|_| (0..half).map(|_| gain * rng.sample::<f64, _>(StandardNormal)).collect())
                .collect()
        };
        let outer = rows(OUTER_FEATURES);
        let inner = rows(INNER_FEATURES);
        let phase = (0..OUTER_FEATURES + INNER_FEATURES).map(|_| rng.random_range(0.0..2.0 * PI)).collect();
        Self { outer, inner, phase }
    }

    /// Features in [-1, 1], smooth in the code.
    fn project(rows: &[Vec<f64>], phase: &[f64], code: &[f64]) -> Vec<f64> {
        rows.iter()
            .zip(phase)
            .map(|(row, p)| (row.iter().zip(code).map(|(w, c)| w * c).sum::<f64>() + p).sin())
            .collect()
    }

    fn params(&self, code: &[f64]) -> FaceParams {
        let half = code.len() / 2;
        let o = Self::project(&self.outer, &self.phase[..OUTER_FEATURES], &code[half..]);
        let i = Self::project(&self.inner, &self.phase[OUTER_FEATURES..], &code[..half]);
        let color = |v: &[f64]| [128.0 + 105.0 * v[0], 128.0 + 105.0 * v[1], 128.0 + 105.0 * v[2]];
        FaceParams {
            hair: color(&o[0..3]),
            hair_pattern: (PI * o[3], 0.5 + 0.5 * o[4], PI * o[5]),
            side: color(&o[6..9]),
            side_phase: PI * o[9],
            collar: color(&o[10..13]),
            collar_pattern: (PI * o[13], 0.5 + 0.5 * o[14]),
            iris: color(&i[0..3]),
            brow: color(&i[3..6]).map(|c| c * 0.6),
            lips: color(&i[6..9]),
            nose_tint: [0.85 + 0.1 * i[9], 0.85 + 0.1 * i[10], 0.85 + 0.1 * i[11]],
            eye_size: (0.19 * (1.0 + 0.15 * i[12]), 0.085 * (1.0 + 0.2 * i[13])),
            brow_lift: 0.06 * i[14],
            brow_thickness: 0.065 * (1.0 + 0.3 * i[15]),
            nose_length: 0.55 * (1.0 + 0.12 * i[16]),
            mouth_y: 0.95 + 0.07 * i[17],
            mouth_width: 0.34 * (1.0 + 0.15 * i[18]),
        }
    }
}

/// Head pose and viewing conditions for one frame.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    /// In-plane rotation, radians.
    pub angle: f64,
    pub scale: f64,
    pub tx: f64,
    pub ty: f64,
    /// Out-of-plane rotation in [-1, 1].
    pub yaw: f64,
    pub pitch: f64,
}

impl Pose {
    pub fn frontal() -> Self {
        Self {
            angle: 0.0,
            scale: 1.0,
            tx: 0.0,
            ty: 0.0,
            yaw: 0.0,
            pitch: 0.0,
        }
    }

    fn feature_shift(&self) -> (f64, f64) {
        (MAX_FEATURE_SHIFT * self.yaw, MAX_FEATURE_SHIFT * self.pitch)
    }

    fn foreshorten(&self) -> f64 {
        1.0 - MAX_FORESHORTEN * self.yaw.abs()
    }

    /// Inner-feature coordinates to face coordinates.
    fn inner_to_face(&self, a: f64, b: f64) -> (f64, f64) {
        let (du, dv) = self.feature_shift();
        (du + self.foreshorten() * a, dv + b)
    }

    fn face_to_inner(&self, u: f64, v: f64) -> (f64, f64) {
        let (du, dv) = self.feature_shift();
        ((u - du) / self.foreshorten(), v - dv)
    }
}

/// Per-video lighting and background.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub light: f64,
    pub background: [f64; 3],
}

impl Scene {
    pub fn neutral() -> Self {
        Self {
            light: 1.0,
            background: [90.0, 110.0, 100.0],
        }
    }
}

/// Maps face coordinates to pixels for an image of `size` pixels.
#[derive(Clone, Copy, Debug)]
struct Camera {
    cos: f64,
    sin: f64,
    px_per_unit: f64,
    ox: f64,
    oy: f64,
}

impl Camera {
    fn new(pose: &Pose, size: usize) -> Self {
        let s = size as f64;
        Self {
            cos: pose.angle.cos(),
            sin: pose.angle.sin(),
            px_per_unit: UNIT_PX * pose.scale,
            ox: 0.5 * s + pose.tx,
            oy: 0.46 * s + pose.ty,
        }
    }

    fn to_pixel(&self, u: f64, v: f64) -> Point {
        let (x, y) = (u * self.px_per_unit, v * self.px_per_unit);
        Point::new(self.cos * x - self.sin * y + self.ox, self.sin * x + self.cos * y + self.oy)
    }

    fn to_face(&self, px: f64, py: f64) -> (f64, f64) {
        let (x, y) = (px - self.ox, py - self.oy);
        (
            (self.cos * x + self.sin * y) / self.px_per_unit,
            (-self.sin * x + self.cos * y) / self.px_per_unit,
        )
    }
}

/// Approximate signed distance to an axis-aligned ellipse (negative inside).
fn ellipse_sd(x: f64, y: f64, (cx, cy): (f64, f64), (ax, ay): (f64, f64)) -> f64 {
    let (nx, ny) = ((x - cx) / ax, (y - cy) / ay);
    ((nx * nx + ny * ny).sqrt() - 1.0) * ax.min(ay)
}

/// Signed distance to the segment `p`-`q`, minus a half thickness.
fn segment_sd(x: f64, y: f64, p: (f64, f64), q: (f64, f64), half: f64) -> f64 {
    let (dx, dy) = (q.0 - p.0, q.1 - p.1);
    let t = (((x - p.0) * dx + (y - p.1) * dy) / (dx * dx + dy * dy)).clamp(0.0, 1.0);
    let (ex, ey) = (x - p.0 - t * dx, y - p.1 - t * dy);
    (ex * ex + ey * ey).sqrt() - half
}

fn blend(dst: &mut [f64; 3], color: [f64; 3], alpha: f64) {
    if alpha > 0.0 {
        for c in 0..3 {
            dst[c] += (color[c] - dst[c]) * alpha;
        }
    }
}

fn brow_point(p: &FaceParams, side: f64, t: f64) -> (f64, f64) {
    // t in [0, 1] from the inner end to the outer end of the brow
    let a = side * (0.18 + 0.62 * t);
    let b = -0.27 - p.brow_lift - 0.07 * (PI * t).sin();
    (a, b)
}

fn mouth_center(p: &FaceParams) -> (f64, f64) {
    (0.0, p.mouth_y)
}

const MOUTH_HALF_HEIGHT: f64 = 0.085;

/// Colour of the outer layers (background, bands, head) at a face point.
fn outer_color(p: &FaceParams, scene: &Scene, u: f64, v: f64, aa: f64) -> [f64; 3] {
    let cover = |sd: f64| (0.5 - sd / aa).clamp(0.0, 1.0);
    let mut rgb = scene.background;

    let side_sd = (SIDE_EDGE - u.abs()).max(u.abs() - SIDE_OUTER).max(-1.6 - v).max(v - 1.3);
    let stripe = 1.0 + 0.22 * (2.0 * PI * v / 0.32 + p.side_phase + u.signum()).sin();
    blend(&mut rgb, p.side.map(|c| c * stripe), cover(side_sd));

    blend(&mut rgb, SKIN, cover(ellipse_sd(u, v, (0.0, HEAD_CENTER_V), HEAD_AXES)));

    let hair_sd = (v - HAIR_EDGE).max(u.abs() - SIDE_EDGE);
    let (angle, contrast, phase) = p.hair_pattern;
    let along = u * angle.cos() + v * angle.sin();
    let hair_mod = 1.0 + 0.3 * contrast * (2.0 * PI * along / 0.4 + phase).sin();
    blend(&mut rgb, p.hair.map(|c| c * hair_mod), cover(hair_sd));

    let (cphase, ccontrast) = p.collar_pattern;
    let collar_mod = 1.0 + 0.3 * ccontrast * (2.0 * PI * u / 0.45 + cphase).sin();
    blend(&mut rgb, p.collar.map(|c| c * collar_mod), cover(COLLAR_EDGE - v));
    rgb
}

/// Paints the inner features over `rgb` at inner-feature coordinates.
fn paint_inner(p: &FaceParams, a: f64, b: f64, aa: f64, rgb: &mut [f64; 3]) {
    let cover = |sd: f64| (0.5 - sd / aa).clamp(0.0, 1.0);
    if !(-1.1..=1.1).contains(&a) || !(-0.6..=1.3).contains(&b) {
        return;
    }
    // brows
    for side in [-1.0, 1.0] {
        let mut sd = f64::INFINITY;
        for k in 0..4 {
            let p0 = brow_point(p, side, k as f64 / 4.0);
            let p1 = brow_point(p, side, (k + 1) as f64 / 4.0);
            sd = sd.min(segment_sd(a, b, p0, p1, 0.5 * p.brow_thickness));
        }
        blend(rgb, p.brow, cover(sd));
    }
    // eyes
    let (ew, eh) = p.eye_size;
    for cx in [-0.5, 0.5] {
        let sclera = ellipse_sd(a, b, (cx, 0.0), (ew, eh));
        if sclera < aa {
            blend(rgb, [235.0, 235.0, 228.0], cover(sclera));
            let iris = ellipse_sd(a, b, (cx, 0.0), (0.07, 0.07)).max(sclera);
            blend(rgb, p.iris, cover(iris));
            let pupil = ellipse_sd(a, b, (cx, 0.0), (0.028, 0.028));
            blend(rgb, [20.0, 20.0, 24.0], cover(pupil));
        }
    }
    // nose
    let nose_color = [SKIN[0] * p.nose_tint[0], SKIN[1] * p.nose_tint[1], SKIN[2] * p.nose_tint[2]];
    let bridge = segment_sd(a, b, (0.0, 0.12), (0.0, 0.12 + p.nose_length), 0.045);
    blend(rgb, nose_color, cover(bridge));
    let tip = ellipse_sd(a, b, (0.0, 0.12 + p.nose_length), (0.16, 0.06));
    blend(rgb, nose_color.map(|c| c * 0.85), cover(tip));
    // mouth
    let (mx, my) = mouth_center(p);
    let lips = ellipse_sd(a, b, (mx, my), (p.mouth_width, MOUTH_HALF_HEIGHT));
    blend(rgb, p.lips, cover(lips));
    let gap = ellipse_sd(a, b, (mx, my), (0.75 * p.mouth_width, 0.018));
    blend(rgb, p.lips.map(|c| c * 0.45), cover(gap));
}

fn finish(rgb: [f64; 3], light: f64) -> [f32; 3] {
    rgb.map(|c| (c * light).clamp(0.0, 255.0) as f32)
}

/// Whether a face point lies in the region a swap replaces.
fn in_swap_region(pose: &Pose, u: f64, v: f64) -> bool {
    let (a, b) = pose.face_to_inner(u, v);
    ellipse_sd(a, b, INNER_CENTER, INNER_AXES) <= 0.0
}

/// Renders one identity at `pose` in `scene`.
pub fn render(params: &FaceParams, pose: &Pose, scene: &Scene, size: usize) -> FaceImage {
    render_with(params, params, pose, scene, size, |_, _| false)
}

/// Renders `outer` everywhere except the swap region, which comes from
/// `inner`. `seam` may perturb pixels near the region border.
fn render_with(
    outer: &FaceParams,
    inner: &FaceParams,
    pose: &Pose,
    scene: &Scene,
    size: usize,
    mut use_inner: impl FnMut(f64, f64) -> bool,
) -> FaceImage {
    let cam = Camera::new(pose, size);
    let aa = 1.0 / cam.px_per_unit;
    let mut img = FaceImage::new(size, size);
    for y in 0..size {
        for x in 0..size {
            let (u, v) = cam.to_face(x as f64, y as f64);
            let p = if use_inner(u, v) { inner } else { outer };
            let mut rgb = outer_color(p, scene, u, v, aa);
            let (a, b) = pose.face_to_inner(u, v);
            paint_inner(p, a, b, aa / pose.foreshorten(), &mut rgb);
            let px = finish(rgb, scene.light);
            for (c, val) in px.iter().enumerate() {
                img.set(x, y, c, *val);
            }
        }
    }
    img
}

/// Outer of `source`, swap region of `target`. With `fidelity < 1`,
/// pixels within a thin band around the region border get additive noise
/// of amplitude proportional to `1 - fidelity`.
pub fn render_swap(
    source: &FaceParams,
    target: &FaceParams,
    pose: &Pose,
    scene: &Scene,
    size: usize,
    fidelity: f64,
    seam_seed: u64,
) -> FaceImage {
    let mut img = render_with(source, target, pose, scene, size, |u, v| in_swap_region(pose, u, v));
    if fidelity < 1.0 {
        let cam = Camera::new(pose, size);
        let band = 3.0 / cam.px_per_unit;
        let amp = 60.0 * (1.0 - fidelity);
        let mut rng = ChaCha8Rng::seed_from_u64(seam_seed);
        for y in 0..size {
            for x in 0..size {
                let (u, v) = cam.to_face(x as f64, y as f64);
                let (a, b) = pose.face_to_inner(u, v);
                if ellipse_sd(a, b, INNER_CENTER, INNER_AXES).abs() <= band {
                    for c in 0..3 {
                        let n: f64 = rng.sample(StandardNormal);
                        let val = (img.get(x, y, c) as f64 + amp * n).clamp(0.0, 255.0);
                        img.set(x, y, c, val as f32);
                    }
                }
            }
        }
    }
    img
}

/// Pixel mask of the swap region for `pose`.
pub fn swap_region(pose: &Pose, size: usize) -> Vec<bool> {
    let cam = Camera::new(pose, size);
    let mut out = Vec::with_capacity(size * size);
    for y in 0..size {
        for x in 0..size {
            let (u, v) = cam.to_face(x as f64, y as f64);
            out.push(in_swap_region(pose, u, v));
        }
    }
    out
}

/// The 68 landmarks of a face: jaw from the shared head outline, the rest
/// from the inner features of `inner`.
pub fn landmarks(inner: &FaceParams, pose: &Pose, size: usize) -> LandmarkSet {
    let cam = Camera::new(pose, size);
    let mut face: Vec<(f64, f64)> = Vec::with_capacity(NUM_LANDMARKS);
    for i in 0..17 {
        let phi = PI * (1.0 - i as f64 / 16.0);
        face.push((HEAD_AXES.0 * phi.cos(), HEAD_CENTER_V + HEAD_AXES.1 * phi.sin()));
    }
    let mut inner_pts: Vec<(f64, f64)> = Vec::with_capacity(51);
    for side in [-1.0, 1.0] {
        for k in 0..5 {
            // left brow runs outer to inner, right brow inner to outer
            let t = if side < 0.0 { 1.0 - k as f64 / 4.0 } else { k as f64 / 4.0 };
            inner_pts.push(brow_point(inner, side, t));
        }
    }
    for k in 0..4 {
        inner_pts.push((0.0, 0.12 + inner.nose_length * k as f64 / 3.0));
    }
    let nose_end = 0.12 + inner.nose_length;
    for k in 0..5 {
        inner_pts.push((-0.14 + 0.07 * k as f64, nose_end + 0.03));
    }
    let (ew, eh) = inner.eye_size;
    for cx in [-0.5, 0.5] {
        let offs = [(-ew, 0.0), (-0.5 * ew, -eh), (0.5 * ew, -eh), (ew, 0.0), (0.5 * ew, eh), (-0.5 * ew, eh)];
        for (dx, dy) in offs {
            inner_pts.push((cx + dx, dy));
        }
    }
    let (mx, my) = mouth_center(inner);
    for k in 0..12 {
        let t = PI + 2.0 * PI * k as f64 / 12.0;
        inner_pts.push((mx + inner.mouth_width * t.cos(), my + MOUTH_HALF_HEIGHT * t.sin()));
    }
    for k in 0..8 {
        let t = PI + 2.0 * PI * k as f64 / 8.0;
        inner_pts.push((mx + 0.75 * inner.mouth_width * t.cos(), my + 0.03 * t.sin()));
    }
    face.extend(inner_pts.into_iter().map(|(a, b)| pose.inner_to_face(a, b)));
    let pts: Vec<Point> = face.into_iter().map(|(u, v)| cam.to_pixel(u, v)).collect();
    LandmarkSet::new(&pts).expect("synthetic landmarks are well formed")
}

/// Identity codes and appearance for every identity of a config.
#[derive(Clone, Debug)]
pub struct IdentityBook {
    pub codes: Vec<Vec<f64>>,
    pub params: Vec<FaceParams>,
}

fn identity_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

impl IdentityBook {
    pub fn new(cfg: &SynthFaceConfig) -> Self {
        let bank = TextureBank::new(cfg.identity_dim / 2);
        let codes: Vec<Vec<f64>> = (0..cfg.n_identities)
            .map(|i| {
                let mut rng = identity_rng(cfg.rng_seed, 2 * i as u64);
                (0..cfg.identity_dim).map(|_| rng.sample(StandardNormal)).collect()
            })
            .collect();
        let params = codes.iter().map(|c| bank.params(c)).collect();
        Self { codes, params }
    }
}

pub fn identity_name(i: usize) -> String {
    format!("id{i:04}")
}

fn uniform(rng: &mut ChaCha8Rng, half_width: f64) -> f64 {
    if half_width > 0.0 {
        rng.random_range(-half_width..=half_width)
    } else {
        0.0
    }
}

fn video_conditions(rng: &mut ChaCha8Rng, j: &PoseJitter) -> (Pose, Scene) {
    let pose = Pose {
        angle: uniform(rng, j.rotation_deg).to_radians(),
        scale: 1.0 + uniform(rng, j.scale),
        tx: uniform(rng, j.translation_px),
        ty: uniform(rng, j.translation_px),
        yaw: uniform(rng, j.out_of_plane),
        pitch: uniform(rng, j.out_of_plane),
    };
    let scene = Scene {
        light: 1.0 + uniform(rng, 0.1),
        background: [0, 1, 2].map(|_| rng.random_range(30.0..220.0)),
    };
    (pose, scene)
}

/// Small frame-to-frame motion within a video.
fn frame_pose(rng: &mut ChaCha8Rng, base: &Pose, j: &PoseJitter) -> Pose {
    let max = j.out_of_plane;
    Pose {
        angle: base.angle + uniform(rng, j.rotation_deg / 15.0).to_radians(),
        scale: base.scale,
        tx: base.tx + uniform(rng, j.translation_px / 5.0),
        ty: base.ty + uniform(rng, j.translation_px / 5.0),
        yaw: (base.yaw + uniform(rng, 0.1 * max)).clamp(-max, max),
        pitch: (base.pitch + uniform(rng, 0.1 * max)).clamp(-max, max),
    }
}

fn hash_rank(video_id: &str) -> [u8; 32] {
    Sha256::digest(video_id.as_bytes()).into()
}

/// Assigns splits to the real videos of one identity: rank by hash of the
/// video id, then 70% train, 10% val, the rest test.
fn split_videos(video_ids: &[String]) -> Vec<Split> {
    let n = video_ids.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by_key(|&i| hash_rank(&video_ids[i]));
    let n_train = ((0.7 * n as f64).round() as usize).max(1);
    let n_val = (0.1 * n as f64).round() as usize;
    let mut splits = vec![Split::Test; n];
    for (rank, &i) in order.iter().enumerate() {
        splits[i] = if rank < n_train {
            Split::Train
        } else if rank < n_train + n_val {
            Split::Val
        } else {
            Split::Test
        };
    }
    splits
}

/// Everything needed to render one frame.
#[derive(Clone, Debug, PartialEq)]
pub struct FramePlan {
    pub entry: ManifestEntry,
    pub pose: Pose,
    pub scene: Scene,
    /// Identity whose outer face is shown; equals the claimed identity for
    /// real frames.
    pub source: usize,
    /// Claimed identity.
    pub target: usize,
    pub seam_seed: u64,
}

/// Deterministic frame plan of one identity: its real videos followed by
/// fake videos that claim it.
pub fn plan_identity(cfg: &SynthFaceConfig, i: usize) -> Vec<FramePlan> {
    let mut rng = identity_rng(cfg.rng_seed, 2 * i as u64 + 1);
    let name = identity_name(i);
    let n_videos = cfg.videos_per_identity();
    let video_ids: Vec<String> = (0..n_videos).map(|v| format!("{name}_v{v:02}")).collect();
    let splits = split_videos(&video_ids);
    let mut plans = Vec::new();
    let mut push_video = |rng: &mut ChaCha8Rng,
                          video_id: &str,
                          n_frames: usize,
                          split: Split,
                          label: Label,
                          source: usize| {
        let (base, scene) = video_conditions(rng, &cfg.pose_jitter);
        for f in 0..n_frames {
            let pose = if f == 0 { base } else { frame_pose(rng, &base, &cfg.pose_jitter) };
            let frame_id = format!("{video_id}_f{f}");
            let role = if label == Label::Real && split != Split::Test {
                Role::ReferenceCandidate
            } else {
                Role::Suspect
            };
            plans.push(FramePlan {
                entry: ManifestEntry {
                    v: MANIFEST_VERSION,
                    image_path: format!("images/{name}/{frame_id}.png"),
                    landmarks_path: format!("landmarks/{name}/{frame_id}.txt"),
                    frame_id,
                    identity: name.clone(),
                    label,
                    method: (label == Label::Fake).then(|| "synthetic-swap".to_string()),
                    video_id: video_id.to_string(),
                    frame_index: f as u32,
                    split,
                    role,
                },
                pose,
                scene,
                source,
                target: i,
                seam_seed: rng.random(),
            });
        }
    };
    for (v, video_id) in video_ids.iter().enumerate() {
        let n_frames = (cfg.images_per_identity - v * cfg.frames_per_video).min(cfg.frames_per_video);
        push_video(&mut rng, video_id, n_frames, splits[v], Label::Real, i);
    }
    let fake_splits = std::iter::repeat_n(Split::Test, cfg.fake_test_videos)
        .chain(std::iter::repeat_n(Split::Val, cfg.fake_val_videos));
    for (k, split) in fake_splits.enumerate() {
        let mut source = rng.random_range(0..cfg.n_identities - 1);
        if source >= i {
            source += 1;
        }
        let video_id = format!("{name}_x{k:02}");
        push_video(&mut rng, &video_id, cfg.frames_per_video, split, Label::Fake, source);
    }
    plans
}

/// Renders a planned frame with its landmarks.
pub fn render_plan(book: &IdentityBook, plan: &FramePlan, cfg: &SynthFaceConfig) -> (FaceImage, LandmarkSet) {
    let target = &book.params[plan.target];
    let lms = landmarks(target, &plan.pose, cfg.image_size);
    let img = if plan.source == plan.target {
        render(target, &plan.pose, &plan.scene, cfg.image_size)
    } else {
        render_swap(
            &book.params[plan.source],
            target,
            &plan.pose,
            &plan.scene,
            cfg.image_size,
            cfg.fake_fidelity,
            plan.seam_seed,
        )
    };
    (img, lms)
}

/// Renders the whole corpus into `out_dir` and writes `manifest.jsonl`
/// there. Identities render in parallel; the manifest lists them in order.
pub fn generate_synthetic_corpus(cfg: &SynthFaceConfig, out_dir: &Path) -> Result<Manifest> {
    cfg.validate()?;
    let book = IdentityBook::new(cfg);
    let per_identity: Vec<Vec<ManifestEntry>> = (0..cfg.n_identities)
        .into_par_iter()
        .map(|i| {
            let name = identity_name(i);
            for sub in ["images", "landmarks"] {
                let dir = out_dir.join(sub).join(&name);
                std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
            }
            plan_identity(cfg, i)
                .into_iter()
                .map(|plan| {
                    let (img, lms) = render_plan(&book, &plan, cfg);
                    img.save_png(&out_dir.join(&plan.entry.image_path))?;
                    lms.save(&out_dir.join(&plan.entry.landmarks_path))?;
                    Ok(plan.entry)
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    let manifest = Manifest::new(out_dir, per_identity.into_iter().flatten().collect());
    manifest.validate()?;
    manifest.save(&out_dir.join("manifest.jsonl"))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{align_and_crop, CropSpec};

    fn small() -> SynthFaceConfig {
        SynthFaceConfig {
            n_identities: 3,
            images_per_identity: 20,
            ..SynthFaceConfig::default()
        }
    }

    #[test]
    fn splits_are_seventy_ten_twenty() {
        let cfg = small();
        let plans = plan_identity(&cfg, 1);
        let count = |s: Split, l: Label| {
            plans
                .iter()
                .filter(|p| p.entry.split == s && p.entry.label == l)
                .count()
        };
        assert_eq!(count(Split::Train, Label::Real), 14);
        assert_eq!(count(Split::Val, Label::Real), 2);
        assert_eq!(count(Split::Test, Label::Real), 4);
        assert_eq!(count(Split::Test, Label::Fake), 4);
        assert_eq!(count(Split::Val, Label::Fake), 2);
        assert_eq!(count(Split::Train, Label::Fake), 0);
        assert!(plans.iter().all(|p| p.entry.label == Label::Real || p.source != 1));
    }

    #[test]
    fn zero_jitter_landmarks_repeat() {
        let cfg = SynthFaceConfig {
            images_per_identity: 1,
            pose_jitter: PoseJitter::none(),
            ..small()
        };
        let book = IdentityBook::new(&cfg);
        let plan = &plan_identity(&cfg, 0)[0];
        let (img1, l1) = render_plan(&book, plan, &cfg);
        let (img2, l2) = render_plan(&book, plan, &cfg);
        assert_eq!(l1, l2);
        assert_eq!(img1, img2);
        let again = plan_identity(&cfg, 0);
        assert_eq!(landmarks(&book.params[0], &again[0].pose, cfg.image_size), l1);
    }

    #[test]
    fn landmarks_put_eyes_at_unit_distance() {
        let book = IdentityBook::new(&small());
        let lms = landmarks(&book.params[0], &Pose::frontal(), 160);
        let (l, r) = lms.eye_centers();
        assert!((l.dist(r) - UNIT_PX).abs() < 1e-9);
        assert!(l.x < r.x);
    }

    #[test]
    fn perfect_swap_is_composite_of_two_renders() {
        let book = IdentityBook::new(&small());
        let pose = Pose {
            angle: 0.2,
            scale: 1.03,
            tx: 2.0,
            ty: -3.0,
            yaw: 0.7,
            pitch: -0.4,
        };
        let scene = Scene::neutral();
        let (a, b) = (&book.params[0], &book.params[1]);
        let fake = render_swap(a, b, &pose, &scene, 160, 1.0, 0);
        let ra = render(a, &pose, &scene, 160);
        let rb = render(b, &pose, &scene, 160);
        let region = swap_region(&pose, 160);
        let mut outer_diff = 0.0f64;
        for (i, &inside) in region.iter().enumerate() {
            let (x, y) = (i % 160, i / 160);
            if inside {
                assert_eq!(fake.pixel(x, y), rb.pixel(x, y));
            } else {
                assert_eq!(fake.pixel(x, y), ra.pixel(x, y));
                outer_diff += (0..3).map(|c| (fake.get(x, y, c) - rb.get(x, y, c)).abs() as f64).sum::<f64>();
            }
        }
        assert!(outer_diff > 0.0);
    }

    #[test]
    fn tight_crop_cannot_see_outer_bands() {
        // A swap and the genuine target differ only in the outer bands, which
        // lie outside the 0.35 crop and inside the 0.27 crop.
        let book = IdentityBook::new(&small());
        let scene = Scene::neutral();
        for (yaw, pitch) in [(1.0, 1.0), (-1.0, -1.0), (1.0, -1.0), (0.0, 0.0)] {
            let pose = Pose {
                angle: 0.25,
                yaw,
                pitch,
                ..Pose::frontal()
            };
            let lms = landmarks(&book.params[1], &pose, 160);
            let fake = render_swap(&book.params[0], &book.params[1], &pose, &scene, 160, 1.0, 0);
            let real = render(&book.params[1], &pose, &scene, 160);
            let tight = CropSpec::new(0.35, 112).unwrap();
            let a = align_and_crop(&fake, &lms, &tight).unwrap().image;
            let b = align_and_crop(&real, &lms, &tight).unwrap().image;
            assert_eq!(a, b, "yaw {yaw} pitch {pitch}");
            let loose = CropSpec::default();
            let a = align_and_crop(&fake, &lms, &loose).unwrap().image;
            let b = align_and_crop(&real, &lms, &loose).unwrap().image;
            let diff = a.data().iter().zip(b.data()).filter(|(x, y)| x != y).count();
            assert!(diff > 1500, "only {diff} samples differ");
        }
    }

    #[test]
    fn low_fidelity_adds_seam_noise() {
        let book = IdentityBook::new(&small());
        let pose = Pose::frontal();
        let scene = Scene::neutral();
        let clean = render_swap(&book.params[0], &book.params[1], &pose, &scene, 160, 1.0, 4);
        let noisy = render_swap(&book.params[0], &book.params[1], &pose, &scene, 160, 0.5, 4);
        assert_ne!(clean, noisy);
        let again = render_swap(&book.params[0], &book.params[1], &pose, &scene, 160, 0.5, 4);
        assert_eq!(noisy, again);
    }

    #[test]
    fn corpus_on_disk_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = SynthFaceConfig {
            n_identities: 2,
            images_per_identity: 4,
            ..SynthFaceConfig::default()
        };
        let m = generate_synthetic_corpus(&cfg, dir.path()).unwrap();
        let loaded = Manifest::load(&dir.path().join("manifest.jsonl")).unwrap();
        assert_eq!(loaded.entries, m.entries);
        let e = &m.entries[0];
        let img = loaded.load_image(e).unwrap();
        assert_eq!((img.width(), img.height()), (160, 160));
        let book = IdentityBook::new(&cfg);
        let plan = &plan_identity(&cfg, 0)[0];
        let (expect, lms) = render_plan(&book, plan, &cfg);
        assert_eq!(img.to_rgb8(), expect.to_rgb8());
        let back = loaded.load_landmarks(e).unwrap();
        assert!(crate::geometry::landmark_distance(&back, &lms) < 1e-6);
    }
}
