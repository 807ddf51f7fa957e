//! Brute-force reference implementations written straight from the formulas,
//! sharing no code with the library beyond its data types.

#![allow(dead_code)]

use std::collections::BTreeSet;

use keytailor::keyframe::pose::BONES;
use keytailor::keyframe::{
    generate_anchor_pose, Frame, InstructionTargets, SamplerConfig, ScoringMode, SkeletonPose,
    Target,
};
use keytailor::numerics::{SeededRng, Tensor};

pub fn area(m: &Tensor) -> f64 {
    m.data().iter().filter(|&&v| v > 0.5).count() as f64
}

/// Garment pixels over frame pixels.
pub fn s_r(f: &Frame) -> f64 {
    area(&f.garment_mask) / (f.height() * f.width()) as f64
}

/// Occluded garment pixels over garment pixels, 1 with no garment.
pub fn occlusion(f: &Frame) -> f64 {
    let g = area(&f.garment_mask);
    if g == 0.0 {
        return 1.0;
    }
    let both = f
        .garment_mask
        .data()
        .iter()
        .zip(f.occluded_garment_mask.data())
        .filter(|(&a, &b)| a > 0.5 && b > 0.5)
        .count();
    both as f64 / g
}

/// Cosine of the concatenated unit bone vectors over bones valid in both
/// poses, rescaled to `[0, 1]`.
pub fn similarity(a: &SkeletonPose, b: &SkeletonPose) -> f64 {
    let mut va = Vec::new();
    let mut vb = Vec::new();
    for &(p, c) in BONES.iter() {
        let da = [
            a.joints[c][0] as f64 - a.joints[p][0] as f64,
            a.joints[c][1] as f64 - a.joints[p][1] as f64,
        ];
        let db = [
            b.joints[c][0] as f64 - b.joints[p][0] as f64,
            b.joints[c][1] as f64 - b.joints[p][1] as f64,
        ];
        let (la, lb) = (da[0].hypot(da[1]), db[0].hypot(db[1]));
        if la < 1e-6 || lb < 1e-6 {
            continue;
        }
        va.extend([da[0] / la, da[1] / la]);
        vb.extend([db[0] / lb, db[1] / lb]);
    }
    if va.is_empty() {
        return 0.0;
    }
    let dot: f64 = va.iter().zip(&vb).map(|(x, y)| x * y).sum();
    let na = va.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = vb.iter().map(|x| x * x).sum::<f64>().sqrt();
    let cos = (dot / (na * nb)).clamp(-1.0, 1.0);
    (1.0 + cos) / 2.0
}

pub fn s_m(pose: &SkeletonPose, anchors: &[SkeletonPose]) -> f64 {
    anchors
        .iter()
        .map(|a| similarity(pose, a))
        .fold(f64::INFINITY, f64::min)
}

/// Background gray levels: `255 × luma`, zero on the person.
pub fn background_gray(f: &Frame) -> Vec<Vec<f64>> {
    let (h, w) = (f.height(), f.width());
    let p = f.pixels.data();
    let human = f.human_mask.data();
    (0..h)
        .map(|y| {
            (0..w)
                .map(|x| {
                    let i = y * w + x;
                    let r = p[i] as f64;
                    let g = p[h * w + i] as f64;
                    let b = p[2 * h * w + i] as f64;
                    let gray = 255.0 * (0.299 * r + 0.587 * g + 0.114 * b);
                    if human[i] > 0.5 {
                        0.0
                    } else {
                        gray
                    }
                })
                .collect()
        })
        .collect()
}

/// Sobel magnitude with explicit 3×3 kernels and replicated borders.
pub fn sobel(img: &[Vec<f64>]) -> Vec<Vec<f64>> {
    const KX: [[f64; 3]; 3] = [[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]];
    const KY: [[f64; 3]; 3] = [[-1.0, -2.0, -1.0], [0.0, 0.0, 0.0], [1.0, 2.0, 1.0]];
    let (h, w) = (img.len() as i64, img[0].len() as i64);
    let mut out = vec![vec![0.0; w as usize]; h as usize];
    for y in 0..h {
        for x in 0..w {
            let (mut gx, mut gy) = (0.0, 0.0);
            for dy in -1..=1i64 {
                for dx in -1..=1i64 {
                    let yy = (y + dy).clamp(0, h - 1) as usize;
                    let xx = (x + dx).clamp(0, w - 1) as usize;
                    let v = img[yy][xx];
                    gx += KX[(dy + 1) as usize][(dx + 1) as usize] * v;
                    gy += KY[(dy + 1) as usize][(dx + 1) as usize] * v;
                }
            }
            out[y as usize][x as usize] = (gx * gx + gy * gy).sqrt();
        }
    }
    out
}

pub fn clarity(f: &Frame, threshold: f64) -> f64 {
    let bg = f.human_mask.data().iter().filter(|&&v| v < 0.5).count() as f64;
    if bg == 0.0 {
        return 0.0;
    }
    let edges: Vec<f64> = sobel(&background_gray(f))
        .into_iter()
        .flatten()
        .filter(|&e| e > threshold)
        .collect();
    if edges.is_empty() {
        return 0.0;
    }
    let density = edges.len() as f64 / bg;
    let strength = edges.iter().sum::<f64>() / edges.len() as f64 / 255.0;
    density * strength
}

pub fn s_bg(f: &Frame, threshold: f64) -> f64 {
    let bg = f.human_mask.data().iter().filter(|&&v| v < 0.5).count() as f64;
    bg / (f.height() * f.width()) as f64 * clarity(f, threshold)
}

/// Mean SSIM with a full 11×11 Gaussian window (σ 1.5) evaluated at every
/// valid position, averaged over channels.
pub fn ssim(a: &Tensor, b: &Tensor) -> f64 {
    let s = a.shape();
    let (c, h, w) = (s[0], s[1], s[2]);
    let mut win = [[0.0; 11]; 11];
    let mut total = 0.0;
    for (i, row) in win.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            let (di, dj) = (i as f64 - 5.0, j as f64 - 5.0);
            *v = (-(di * di + dj * dj) / (2.0 * 1.5 * 1.5)).exp();
            total += *v;
        }
    }
    let (c1, c2) = (0.01f64.powi(2), 0.03f64.powi(2));
    let mut sum = 0.0;
    for ch in 0..c {
        let at = |t: &Tensor, y: usize, x: usize| t.data()[(ch * h + y) * w + x] as f64;
        let mut plane = 0.0;
        let mut count = 0;
        for y0 in 0..=h - 11 {
            for x0 in 0..=w - 11 {
                let (mut ma, mut mb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for i in 0..11 {
                    for j in 0..11 {
                        let k = win[i][j] / total;
                        let (va, vb) = (at(a, y0 + i, x0 + j), at(b, y0 + i, x0 + j));
                        ma += k * va;
                        mb += k * vb;
                        saa += k * va * va;
                        sbb += k * vb * vb;
                        sab += k * va * vb;
                    }
                }
                let (va, vb, cov) = (saa - ma * ma, sbb - mb * mb, sab - ma * mb);
                plane += ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
                    / ((ma * ma + mb * mb + c1) * (va + vb + c2));
                count += 1;
            }
        }
        sum += plane / count as f64;
    }
    sum / c as f64
}

/// Straight-line transcription of instruction-guided keyframe sampling.
/// The instruction score is the fraction of targets among the frame labels.
/// Returns the selected frame indices in selection order.
pub fn select(frames: &[Frame], targets: &InstructionTargets, cfg: &SamplerConfig) -> Vec<usize> {
    let mut anchors = Vec::new();
    for v in &targets.views {
        anchors.push(generate_anchor_pose(Target::View(*v)).unwrap());
    }
    for a in &targets.actions {
        anchors.push(generate_anchor_pose(Target::Action(*a)).unwrap());
    }
    let wanted: BTreeSet<Target> = targets.targets().into_iter().collect();

    let t_thres = cfg.t_thres.unwrap_or_else(|| {
        let first = frames.iter().map(|f| f.timestamp).fold(f64::MAX, f64::min);
        let last = frames.iter().map(|f| f.timestamp).fold(f64::MIN, f64::max);
        (last - first) / 5.0
    });

    // (idx, t, initial_score)
    let mut s: Vec<(usize, f64, f64)> = Vec::new();
    for f in frames {
        let s_ins = f.labels.intersection(&wanted).count() as f64 / wanted.len() as f64;
        let sm = s_m(&f.pose, &anchors);
        let s_cloth = s_r(f);
        if occlusion(f) > cfg.occlu_thres {
            continue;
        }
        let [w1, w2, w3, w4] = cfg.weights;
        let initial = match cfg.mode {
            ScoringMode::Algorithm => w1 * s_ins + w2 * (1.0 - sm) + w3 * s_cloth + w4 * 1.0,
            ScoringMode::Eq1 => 1.0 - sm + cfg.lambda * s_cloth,
        };
        s.push((f.index, f.timestamp, initial));
    }
    let score_of = |idx: usize| s.iter().find(|e| e.0 == idx).unwrap().2;

    let mut sorted = s.clone();
    sorted.sort_by(|x, y| y.2.partial_cmp(&x.2).unwrap());
    let mut idx_key: Vec<usize> = Vec::new();
    let mut t_selected: Vec<f64> = Vec::new();
    for &(idx, t, score) in &sorted {
        if idx_key.len() >= cfg.k_max {
            break;
        }
        let mut min_t_dist = f64::INFINITY;
        let s_t = if t_selected.is_empty() {
            1.0
        } else {
            for &ts in &t_selected {
                min_t_dist = min_t_dist.min((t - ts).abs());
            }
            min_t_dist / t_thres
        };
        let final_score = score * s_t;
        if idx_key.is_empty() {
            idx_key.push(idx);
            t_selected.push(t);
        } else {
            let mut min_score_diff = f64::INFINITY;
            for &ik in &idx_key {
                min_score_diff = min_score_diff.min((final_score - score_of(ik)).abs());
            }
            if min_score_diff >= cfg.score_diff_min && min_t_dist >= t_thres {
                idx_key.push(idx);
                t_selected.push(t);
            }
        }
    }
    idx_key
}

fn random_mask(h: usize, w: usize, rng: &mut SeededRng, within: Option<&Tensor>) -> Tensor {
    let (y0, x0) = (rng.below(h / 2), rng.below(w / 2));
    let (y1, x1) = (y0 + 1 + rng.below(h - y0), x0 + 1 + rng.below(w - x0));
    let speckle = rng.uniform() * 0.2;
    Tensor::from_fn([h, w], |i| {
        let (y, x) = (i / w, i % w);
        let inside = (y0..y1).contains(&y) && (x0..x1).contains(&x);
        let on = inside != (rng.uniform() < speckle);
        let allowed = within.is_none_or(|m| m.data()[i] > 0.5);
        if on && allowed {
            1.0
        } else {
            0.0
        }
    })
}

pub fn random_pose(rng: &mut SeededRng) -> SkeletonPose {
    let mut joints = [[0.0f32; 2]; 17];
    for j in joints.iter_mut() {
        *j = [rng.uniform() as f32, rng.uniform() as f32];
    }
    // sometimes collapse a bone
    if rng.chance(0.3) {
        let (p, c) = BONES[rng.below(BONES.len())];
        joints[c] = joints[p];
    }
    SkeletonPose::new(joints)
}

/// A frame with random pixels, nested masks and pose.
pub fn random_frame(rng: &mut SeededRng, index: usize) -> Frame {
    let (h, w) = (8 + rng.below(20), 8 + rng.below(20));
    let smooth = rng.chance(0.5);
    let pixels = if smooth {
        let (a, b) = (rng.uniform(), rng.uniform());
        Tensor::from_fn([3, h, w], |i| {
            let (y, x) = ((i / w) % h, i % w);
            (0.5 + 0.5 * ((a * 6.0 * x as f64).sin() * (b * 6.0 * y as f64).cos())) as f32
        })
    } else {
        Tensor::uniform([3, h, w], 0.0, 1.0, rng)
    };
    let human = if rng.chance(0.1) {
        Tensor::ones([h, w])
    } else {
        random_mask(h, w, rng, None)
    };
    let garment = random_mask(h, w, rng, Some(&human));
    let occluded = random_mask(h, w, rng, None);
    Frame {
        index,
        timestamp: index as f64 / 8.0,
        pixels,
        garment_mask: garment,
        human_mask: human,
        occluded_garment_mask: occluded,
        pose: random_pose(rng),
        labels: BTreeSet::new(),
    }
}

pub const INSTRUCTIONS: [&str; 4] = [
    "Show front and back of clothes, raise hand to display sleeves",
    "show the back, then turn",
    "walk toward the camera showing the left side",
    "front view, raise arms",
];

/// Outcome of comparing the sampler with [`select`] over seeded videos.
#[derive(Debug, Default)]
pub struct SamplerAgreement {
    pub videos: usize,
    pub matches: usize,
    /// Total keyframes selected and frames dropped for occlusion.
    pub selected: usize,
    pub filtered: usize,
    /// Descriptions of selections that broke a constraint.
    pub violations: Vec<String>,
    pub mismatches: Vec<String>,
}

/// Runs both samplers on `videos` synthetic clips in both scoring modes and
/// checks every selection against the constraints.
pub fn sampler_agreement(videos: u64) -> SamplerAgreement {
    use keytailor::keyframe::{parse_instruction, select_keyframes};
    use keytailor::synth::{generate_scene, SceneSpec};

    let mut out = SamplerAgreement::default();
    for seed in 0..videos {
        let spec = SceneSpec::from_seed(seed, 16, 48).unwrap();
        let frames = generate_scene(&spec).unwrap().frames().unwrap();
        let targets = parse_instruction(INSTRUCTIONS[seed as usize % INSTRUCTIONS.len()]).unwrap();
        for mode in [ScoringMode::Eq1, ScoringMode::Algorithm] {
            let cfg = SamplerConfig {
                mode,
                ..SamplerConfig::default()
            };
            let got = select_keyframes(&frames, &targets, &cfg).unwrap();
            let want = select(&frames, &targets, &cfg);
            out.videos += 1;
            out.selected += got.selected.len();
            out.filtered += got.scores.iter().filter(|s| s.filtered).count();
            if got.indices() == want {
                out.matches += 1;
            } else {
                out.mismatches.push(format!(
                    "seed {seed} {mode}: {:?} vs {want:?}",
                    got.indices()
                ));
            }
            let sel = &got.selected;
            if sel.len() > 3 {
                out.violations
                    .push(format!("seed {seed}: {} keyframes", sel.len()));
            }
            for (i, a) in sel.iter().enumerate() {
                if a.occlusion_ratio > 0.2 {
                    out.violations
                        .push(format!("seed {seed}: frame {} occluded", a.index));
                }
                for b in &sel[..i] {
                    if (a.timestamp - b.timestamp).abs() < got.t_thres {
                        out.violations.push(format!(
                            "seed {seed}: frames {} {} too close",
                            a.index, b.index
                        ));
                    }
                    let fin = a.final_score.unwrap();
                    if (fin - b.initial_score).abs() < 0.1 {
                        out.violations.push(format!(
                            "seed {seed}: frames {} {} too similar",
                            a.index, b.index
                        ));
                    }
                }
            }
        }
    }
    out
}

/// Largest deviation of each library score from its oracle over `inputs`
/// random frames and image pairs, as `(name, max_abs_error)`.
pub fn score_formula_errors(inputs: u64) -> Vec<(&'static str, f64)> {
    use keytailor::keyframe::motion_difference_score;
    use keytailor::keyframe::scores::{
        background_integrity_score, clarity as lib_clarity, garment_area_ratio, occlusion_ratio,
    };
    use keytailor::metrics::ssim as lib_ssim;

    let mut worst = [
        ("motion_difference", 0.0f64),
        ("garment_area_ratio", 0.0),
        ("occlusion_ratio", 0.0),
        ("clarity", 0.0),
        ("background_integrity", 0.0),
        ("ssim", 0.0),
    ];
    let mut bump = |k: usize, a: f64, b: f64| worst[k].1 = worst[k].1.max((a - b).abs());
    for seed in 0..inputs {
        let mut rng = SeededRng::new(seed).fork(0x5c0);
        let f = random_frame(&mut rng, seed as usize);
        let anchors: Vec<SkeletonPose> = (0..1 + rng.below(4))
            .map(|_| random_pose(&mut rng))
            .collect();
        let threshold = if rng.chance(0.5) {
            50.0
        } else {
            rng.range_f64(0.0, 400.0)
        };
        bump(
            0,
            motion_difference_score(&f.pose, &anchors).unwrap(),
            s_m(&f.pose, &anchors),
        );
        bump(1, garment_area_ratio(&f), s_r(&f));
        bump(2, occlusion_ratio(&f), occlusion(&f));
        bump(
            3,
            lib_clarity(&f, threshold).unwrap(),
            clarity(&f, threshold),
        );
        bump(
            4,
            background_integrity_score(&f, threshold).unwrap(),
            s_bg(&f, threshold),
        );

        let (c, h, w) = (1 + rng.below(3), 11 + rng.below(12), 11 + rng.below(12));
        let a = Tensor::uniform([c, h, w], 0.0, 1.0, &mut rng);
        let noise = rng.uniform();
        let b = Tensor::from_fn([c, h, w], |i| {
            (a.data()[i] as f64 + noise * (rng.uniform() - 0.5)).clamp(0.0, 1.0) as f32
        });
        bump(5, lib_ssim(&a, &b).unwrap(), ssim(&a, &b));
    }
    worst.to_vec()
}

/// Largest deviation from `x1` after Euler integration of the exact field
/// `u ≡ x1 − x0` in `steps` steps, over a few seeded latent pairs.
pub fn euler_oracle_error(steps: usize) -> f64 {
    use keytailor::dit::euler_integrate;
    let mut worst = 0.0f64;
    for seed in 0..4 {
        let mut rng = SeededRng::new(seed).fork(0xe0);
        let x0 = Tensor::randn([16, 4, 8, 8], 1.0, &mut rng);
        let x1 = Tensor::randn([16, 4, 8, 8], 1.0, &mut rng);
        let u = x1.sub(&x0).unwrap();
        let field = |x: &Tensor, _t: f64| -> keytailor::Result<Tensor> {
            assert_eq!(x.shape(), u.shape());
            Ok(u.clone())
        };
        let out = euler_integrate(&field, &x0, steps).unwrap();
        worst = worst.max(out.max_abs_diff(&x1).unwrap());
    }
    worst
}
