//! Stick-figure rendering, procedural textures and the agnostic video.

use crate::keyframe::pose::{BONES, NUM_JOINTS};
use crate::keyframe::{generate_anchor_pose, Action, SkeletonPose, Target, View};
use crate::numerics::{SeededRng, Tensor};
use crate::{Error, Result};

use super::scene::SceneSpec;
use super::{FrameLabel, SyntheticSample};

/// Gray level that replaces the garment in the agnostic video.
pub const AGNOSTIC_FILL: f32 = 0.5;

const SKIN: [f32; 3] = [0.87, 0.72, 0.6];
const OCCLUDER: [f32; 3] = [0.22, 0.16, 0.1];
/// Limb half-thickness, head radius and minimum torso half-width, in units of the frame width.
const LIMB_RADIUS: f64 = 0.028;
const HEAD_RADIUS: f64 = 0.06;
const TORSO_MIN_HALF: f64 = 0.07;
const TORSO_PAD: f64 = 0.015;
const WARP_AMPLITUDE: f64 = 0.08;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GarmentSide {
    Front,
    Back,
}

fn color(rng: &mut SeededRng) -> [f32; 3] {
    [0; 3].map(|_| rng.range_f64(0.05, 0.95) as f32)
}

/// Garment texture at texture coordinates `(u, v) ∈ [0,1]²`.
///
/// The front carries slanted stripes with a round badge, the back a checkerboard.
pub fn garment_texel(texture: u64, side: GarmentSide, u: f64, v: f64) -> [f32; 3] {
    let mut rng = SeededRng::new(texture).fork(match side {
        GarmentSide::Front => 11,
        GarmentSide::Back => 12,
    });
    let (a, b, c) = (color(&mut rng), color(&mut rng), color(&mut rng));
    match side {
        GarmentSide::Front => {
            let n = 3.0 + rng.below(3) as f64;
            if (u - 0.5).powi(2) + (v - 0.3).powi(2) < 0.018 {
                return c;
            }
            if ((v + 0.25 * u) * 2.0 * n).floor() as i64 % 2 == 0 {
                a
            } else {
                b
            }
        }
        GarmentSide::Back => {
            let m = 3.0 + rng.below(3) as f64;
            if ((u * m).floor() as i64 + (v * m).floor() as i64) % 2 == 0 {
                a
            } else {
                c
            }
        }
    }
}

/// Background at normalized position `(x, y)`: shaded vertical panels with window blocks.
pub fn background_texel(texture: u64, x: f64, y: f64) -> [f32; 3] {
    let mut rng = SeededRng::new(texture).fork(21);
    let (a, b, c) = (color(&mut rng), color(&mut rng), color(&mut rng));
    let panels = 3.0 + rng.below(4) as f64;
    let wobble = rng.range_f64(0.0, 0.08);
    let (wx, wy) = (rng.range_f64(0.05, 0.6), rng.range_f64(0.05, 0.5));
    if (wx..wx + 0.25).contains(&x) && (wy..wy + 0.2).contains(&y) {
        return c;
    }
    let base = if ((x + wobble * (6.0 * y).sin()) * panels).floor() as i64 % 2 == 0 {
        a
    } else {
        b
    };
    let shade = (0.8 + 0.2 * y) as f32;
    base.map(|v| (v * shade).clamp(0.0, 1.0))
}

fn mirror(p: &SkeletonPose) -> SkeletonPose {
    p.map(|[x, y]| [1.0 - x, y])
}

fn lerp_joints(base: &mut SkeletonPose, target: &SkeletonPose, joints: &[usize], w: f64) {
    for &j in joints {
        for k in 0..2 {
            let (a, b) = (base.joints[j][k] as f64, target.joints[j][k] as f64);
            base.joints[j][k] = (a + (b - a) * w) as f32;
        }
    }
}

const ARMS: [usize; 4] = [7, 8, 9, 10];
const LEGS: [usize; 4] = [13, 14, 15, 16];

fn anchor(t: Target) -> SkeletonPose {
    generate_anchor_pose(t).expect("anchor table covers every target")
}

/// The skeleton of frame `t`: the view's anchor, blended toward active
/// actions, then scaled, shifted and jittered.
pub fn pose_at(spec: &SceneSpec, t: usize) -> SkeletonPose {
    let view = spec.views[t];
    let mirrored = matches!(view, View::Back | View::Right);
    let mut pose = anchor(Target::View(view));
    for e in spec.actions.iter().filter(|e| e.frames.contains(&t)) {
        let mut act = anchor(Target::Action(e.action));
        if mirrored {
            act = mirror(&act);
        }
        let k = (t - e.frames.start) as f64;
        let len = e.frames.len() as f64;
        match e.action {
            Action::RaiseHand => {
                let w = ((k + 1.0) / 2.0).min(1.0);
                lerp_joints(&mut pose, &act, &[8, 10], w);
            }
            Action::Turn => {
                let w = (std::f64::consts::PI * (k + 0.5) / len).sin();
                let all: Vec<usize> = (0..NUM_JOINTS).collect();
                lerp_joints(&mut pose, &act, &all, w);
            }
            Action::Walk => {
                let w = 0.5 + 0.5 * (std::f64::consts::PI * k / 2.0).sin();
                lerp_joints(&mut pose, &act, &ARMS, w);
                lerp_joints(&mut pose, &act, &LEGS, w);
            }
        }
    }
    let mut rng = SeededRng::new(spec.seed).fork(100 + t as u64);
    let mut global = SeededRng::new(spec.seed).fork(99);
    let scale = global.range_f64(0.86, 0.98);
    let drift = global.range_f64(-0.06, 0.06);
    let progress = t as f64 / (spec.frames.max(2) - 1) as f64;
    let dx = drift * (progress - 0.5);
    pose.map(|[x, y]| {
        let jx = 0.003 * rng.normal();
        let jy = 0.003 * rng.normal();
        [
            ((x as f64 - 0.5) * scale + 0.5 + dx + jx) as f32,
            ((y as f64 - 0.5) * scale + 0.5 + jy) as f32,
        ]
    })
}

fn segment_distance(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
    let len2 = dx * dx + dy * dy;
    let s = if len2 == 0.0 {
        0.0
    } else {
        (((p[0] - a[0]) * dx + (p[1] - a[1]) * dy) / len2).clamp(0.0, 1.0)
    };
    (p[0] - a[0] - s * dx).hypot(p[1] - a[1] - s * dy)
}

/// Torso trapezoid between shoulders and hips.
#[derive(Clone, Copy, Debug)]
pub struct Torso {
    top: f64,
    bottom: f64,
    a: ([f64; 2], [f64; 2]),
    b: ([f64; 2], [f64; 2]),
}

impl Torso {
    pub fn from_pose(p: &SkeletonPose) -> Self {
        let j = |i: usize| [p.joints[i][0] as f64, p.joints[i][1] as f64];
        let top = (j(5)[1] + j(6)[1]) / 2.0;
        let bottom = (j(11)[1] + j(12)[1]) / 2.0;
        Torso {
            top,
            bottom,
            a: (j(5), j(11)),
            b: (j(6), j(12)),
        }
    }

    /// Texture coordinates of a normalized point, if it lies on the torso.
    pub fn uv(&self, x: f64, y: f64) -> Option<(f64, f64)> {
        if self.bottom <= self.top || y < self.top || y >= self.bottom {
            return None;
        }
        let v = (y - self.top) / (self.bottom - self.top);
        let xa = self.a.0[0] + (self.a.1[0] - self.a.0[0]) * v;
        let xb = self.b.0[0] + (self.b.1[0] - self.b.0[0]) * v;
        let center = (xa + xb) / 2.0;
        let half = ((xa - xb).abs() / 2.0 + TORSO_PAD).max(TORSO_MIN_HALF);
        let u = (x - (center - half)) / (2.0 * half);
        (0.0..1.0).contains(&u).then_some((u, v))
    }
}

/// Per-frame render products.
pub struct FrameRender {
    /// `[3 × H × W]`.
    pub pixels: Vec<f32>,
    pub garment: Vec<f32>,
    pub human: Vec<f32>,
    pub occluded: Vec<f32>,
}

/// Garment side shown for a view.
pub fn side_for(view: View) -> GarmentSide {
    match view {
        View::Back => GarmentSide::Back,
        _ => GarmentSide::Front,
    }
}

pub fn render_frame(spec: &SceneSpec, t: usize, pose: &SkeletonPose) -> FrameRender {
    let (h, w) = (spec.height, spec.width);
    let n = h * w;
    let mut out = FrameRender {
        pixels: vec![0.0; 3 * n],
        garment: vec![0.0; n],
        human: vec![0.0; n],
        occluded: vec![0.0; n],
    };
    let torso = Torso::from_pose(pose);
    let side = side_for(spec.views[t]);
    let warped = !spec.actions_at(t).is_empty();
    let phase = 0.37 * t as f64;
    let joint = |i: usize| [pose.joints[i][0] as f64, pose.joints[i][1] as f64];
    let aspect = h as f64 / w as f64;
    for py in 0..h {
        for px in 0..w {
            let (x, y) = ((px as f64 + 0.5) / w as f64, (py as f64 + 0.5) / h as f64);
            let i = py * w + px;
            let mut rgb = background_texel(spec.background_texture, x, y);
            // distances measured in frame-width units
            let p = [x, y * aspect];
            let scaled = |q: [f64; 2]| [q[0], q[1] * aspect];
            let on_limb = BONES.iter().skip(4).any(|&(a, b)| {
                segment_distance(p, scaled(joint(a)), scaled(joint(b))) <= LIMB_RADIUS
            });
            let nose = scaled(joint(0));
            let on_head = (p[0] - nose[0]).hypot(p[1] - nose[1]) <= HEAD_RADIUS;
            if on_limb || on_head {
                out.human[i] = 1.0;
                rgb = SKIN;
            }
            if let Some((u, v)) = torso.uv(x, y) {
                out.human[i] = 1.0;
                out.garment[i] = 1.0;
                let u = if warped {
                    (u + WARP_AMPLITUDE * (std::f64::consts::TAU * (2.0 * v + phase)).sin())
                        .clamp(0.0, 0.999_999)
                } else {
                    u
                };
                rgb = garment_texel(spec.garment_texture, side, u, v);
            }
            for c in 0..3 {
                out.pixels[c * n + i] = rgb[c];
            }
        }
    }
    let fraction = spec.occlusion_at(t);
    if fraction > 0.0 {
        occlude_top(&mut out, h, w, fraction);
    }
    out
}

/// Covers the top garment rows so that about `fraction` of the garment is hidden.
fn occlude_top(out: &mut FrameRender, h: usize, w: usize, fraction: f64) {
    let n = h * w;
    let rows: Vec<usize> = (0..h)
        .map(|y| {
            out.garment[y * w..(y + 1) * w]
                .iter()
                .filter(|&&g| g > 0.0)
                .count()
        })
        .collect();
    let total: usize = rows.iter().sum();
    if total == 0 {
        return;
    }
    let goal = fraction * total as f64;
    let mut covered = 0usize;
    let mut cut = 0;
    for (y, &r) in rows.iter().enumerate() {
        // stop at the row boundary closest to the goal
        if (covered as f64 + r as f64 - goal).abs() > (covered as f64 - goal).abs() {
            break;
        }
        covered += r;
        cut = y + 1;
    }
    for i in 0..cut * w {
        if out.garment[i] > 0.0 {
            out.occluded[i] = 1.0;
            for c in 0..3 {
                out.pixels[c * n + i] = OCCLUDER[c];
            }
        }
    }
}

/// Skeleton map `[3 × H × W]`: each bone drawn in its own color on black.
pub fn render_pose_map(pose: &SkeletonPose, h: usize, w: usize) -> Vec<f32> {
    let n = h * w;
    let mut out = vec![0.0; 3 * n];
    for py in 0..h {
        for px in 0..w {
            let p = [px as f64 + 0.5, py as f64 + 0.5];
            for (bi, &(a, b)) in BONES.iter().enumerate() {
                let ja = [
                    pose.joints[a][0] as f64 * w as f64,
                    pose.joints[a][1] as f64 * h as f64,
                ];
                let jb = [
                    pose.joints[b][0] as f64 * w as f64,
                    pose.joints[b][1] as f64 * h as f64,
                ];
                if segment_distance(p, ja, jb) <= 0.75 {
                    let hue = bi as f64 / BONES.len() as f64;
                    let rgb = [
                        0.5 + 0.5 * (std::f64::consts::TAU * hue).cos(),
                        0.5 + 0.5 * (std::f64::consts::TAU * (hue + 1.0 / 3.0)).cos(),
                        0.5 + 0.5 * (std::f64::consts::TAU * (hue + 2.0 / 3.0)).cos(),
                    ];
                    for c in 0..3 {
                        out[c * n + py * w + px] = rgb[c] as f32;
                    }
                }
            }
        }
    }
    out
}

/// Replaces masked pixels with mid-gray; `video` is `[3×T×H×W]`, `masks` `[T×H×W]`.
pub fn make_agnostic(video: &Tensor, masks: &Tensor) -> Result<Tensor> {
    let &[3, t, h, w] = video.shape() else {
        return Err(Error::Shape(format!(
            "video must be [3×T×H×W], got {:?}",
            video.shape()
        )));
    };
    if masks.shape() != [t, h, w] {
        return Err(Error::Dimension(format!(
            "masks {:?} do not match video frames [{t}, {h}, {w}]",
            masks.shape()
        )));
    }
    let plane = t * h * w;
    let m = masks.data();
    let mut out = video.clone();
    for (i, v) in out.data_mut().iter_mut().enumerate() {
        if m[i % plane] > 0.0 {
            *v = AGNOSTIC_FILL;
        }
    }
    Ok(out)
}

/// Garment reference image: the front texture over the whole canvas.
pub fn garment_reference(spec: &SceneSpec) -> Tensor {
    let (h, w) = (spec.height, spec.width);
    let n = h * w;
    let mut data = vec![0.0; 3 * n];
    for py in 0..h {
        for px in 0..w {
            let (u, v) = ((px as f64 + 0.5) / w as f64, (py as f64 + 0.5) / h as f64);
            let rgb = garment_texel(spec.garment_texture, GarmentSide::Front, u, v);
            for c in 0..3 {
                data[c * n + py * w + px] = rgb[c];
            }
        }
    }
    Tensor::new([3, h, w], data).expect("extents match")
}

/// Renders a complete sample from its spec.
pub fn generate_scene(spec: &SceneSpec) -> Result<SyntheticSample> {
    spec.validate()?;
    let (t_len, h, w) = (spec.frames, spec.height, spec.width);
    let n = h * w;
    let plane = t_len * n;
    let mut video = vec![0.0; 3 * plane];
    let mut garment = vec![0.0; plane];
    let mut human = vec![0.0; plane];
    let mut occluded = vec![0.0; plane];
    let mut poses = Vec::with_capacity(t_len);
    let mut labels = Vec::with_capacity(t_len);
    for t in 0..t_len {
        let pose = pose_at(spec, t);
        let r = render_frame(spec, t, &pose);
        for c in 0..3 {
            video[c * plane + t * n..c * plane + (t + 1) * n]
                .copy_from_slice(&r.pixels[c * n..(c + 1) * n]);
        }
        garment[t * n..(t + 1) * n].copy_from_slice(&r.garment);
        human[t * n..(t + 1) * n].copy_from_slice(&r.human);
        occluded[t * n..(t + 1) * n].copy_from_slice(&r.occluded);
        poses.push(pose);
        labels.push(FrameLabel {
            index: t,
            timestamp: spec.timestamp(t),
            view: spec.views[t],
            actions: spec.actions_at(t),
        });
    }
    let video = Tensor::new([3, t_len, h, w], video)?;
    let garment_masks = Tensor::new([t_len, h, w], garment)?;
    let agnostic = make_agnostic(&video, &garment_masks)?;
    Ok(SyntheticSample {
        video,
        agnostic,
        garment_masks,
        human_masks: Tensor::new([t_len, h, w], human)?,
        occluded_masks: Tensor::new([t_len, h, w], occluded)?,
        poses,
        garment_ref: garment_reference(spec),
        labels,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::scene::OcclusionEvent;

    #[test]
    fn front_and_back_textures_differ() {
        let mut same = 0;
        for i in 0..100 {
            let (u, v) = (i as f64 / 100.0, (i * 7 % 100) as f64 / 100.0);
            if garment_texel(5, GarmentSide::Front, u, v)
                == garment_texel(5, GarmentSide::Back, u, v)
            {
                same += 1;
            }
        }
        assert!(same < 20);
    }

    #[test]
    fn back_view_uses_back_texture() {
        let spec = SceneSpec::still(4, 2, 48, View::Back).unwrap();
        let pose = pose_at(&spec, 0);
        let r = render_frame(&spec, 0, &pose);
        let torso = Torso::from_pose(&pose);
        let n = 48 * 48;
        let mut checked = 0;
        for i in 0..n {
            if r.garment[i] == 0.0 {
                continue;
            }
            let (x, y) = (
                ((i % 48) as f64 + 0.5) / 48.0,
                ((i / 48) as f64 + 0.5) / 48.0,
            );
            let (u, v) = torso.uv(x, y).unwrap();
            let expect = garment_texel(spec.garment_texture, GarmentSide::Back, u, v);
            for c in 0..3 {
                assert_eq!(r.pixels[c * n + i], expect[c]);
            }
            checked += 1;
        }
        assert!(checked > 50);
    }

    #[test]
    fn half_occlusion_within_a_row() {
        let mut spec = SceneSpec::still(9, 3, 64, View::Front).unwrap();
        spec.occlusions.push(OcclusionEvent {
            frames: 1..2,
            fraction: 0.5,
        });
        let pose = pose_at(&spec, 1);
        let r = render_frame(&spec, 1, &pose);
        let g: f32 = r.garment.iter().sum();
        let o: f32 = r.occluded.iter().sum();
        let widest = (0..64)
            .map(|y| r.garment[y * 64..(y + 1) * 64].iter().sum::<f32>())
            .fold(0.0, f32::max);
        assert!(((o - 0.5 * g).abs()) <= widest, "{o} of {g}");
    }

    #[test]
    fn agnostic_fill() {
        let video = Tensor::from_fn([3, 2, 4, 4], |i| (i % 7) as f32 / 7.0);
        let none = make_agnostic(&video, &Tensor::zeros([2, 4, 4])).unwrap();
        assert!(none.bit_eq(&video));
        let all = make_agnostic(&video, &Tensor::ones([2, 4, 4])).unwrap();
        assert!(all.data().iter().all(|&v| v == AGNOSTIC_FILL));
    }
}
