//! Deterministic face-like blendshape model for desk-scale experiments.
//!
//! The mean shape is a shallow dome-shaped face ellipse carrying seven
//! feature clusters (eyes, eyebrows, lips, nose); every remaining vertex is
//! skin. Vertices are laid out on sunflower spirals; features are sampled
//! more densely than skin.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{BlendshapeModel, Camera, ShapeParams, Vec3};
use crate::error::{invalid, Result};
use crate::part::PartLabel;

/// Model units per face: semi-axes of the face ellipse.
const FACE: (f64, f64) = (1.0, 1.25);
/// Gap kept free of skin vertices around every feature.
const MARGIN: f64 = 0.07;
/// Feature vertices are this many times denser than skin ones.
const FEATURE_DENSITY: f64 = 3.0;
/// Camera scale at 128 px; other sizes scale with the shorter side.
const PIXELS_PER_UNIT: f64 = 24.0;
const GOLDEN_ANGLE: f64 = 2.399_963_229_728_653;

#[derive(Clone, Copy, Debug)]
struct Feature {
    part: PartLabel,
    center: (f64, f64),
    axes: (f64, f64),
}

const FEATURES: [Feature; 7] = [
    Feature { part: PartLabel::LeftEye, center: (-0.42, 0.28), axes: (0.22, 0.11) },
    Feature { part: PartLabel::RightEye, center: (0.42, 0.28), axes: (0.22, 0.11) },
    Feature { part: PartLabel::LeftEyebrow, center: (-0.42, 0.58), axes: (0.26, 0.065) },
    Feature { part: PartLabel::RightEyebrow, center: (0.42, 0.58), axes: (0.26, 0.065) },
    Feature { part: PartLabel::UpLip, center: (0.0, -0.52), axes: (0.34, 0.075) },
    Feature { part: PartLabel::DownLip, center: (0.0, -0.76), axes: (0.32, 0.085) },
    Feature { part: PartLabel::Nose, center: (0.0, -0.1), axes: (0.13, 0.26) },
];

fn feature(part: PartLabel) -> Option<&'static Feature> {
    FEATURES.iter().find(|f| f.part == part)
}

fn ellipse_area(axes: (f64, f64)) -> f64 {
    PI * axes.0 * axes.1
}

fn inside(p: (f64, f64), center: (f64, f64), axes: (f64, f64)) -> bool {
    let dx = (p.0 - center.0) / axes.0;
    let dy = (p.1 - center.1) / axes.1;
    dx * dx + dy * dy < 1.0
}

fn sunflower(count: usize, center: (f64, f64), axes: (f64, f64), phase: f64) -> Vec<(f64, f64)> {
    (0..count)
        .map(|i| {
            let r = ((i as f64 + 0.5) / count as f64).sqrt();
            let t = i as f64 * GOLDEN_ANGLE + phase;
            (center.0 + axes.0 * r * t.cos(), center.1 + axes.1 * r * t.sin())
        })
        .collect()
}

fn depth(x: f64, y: f64) -> f64 {
    let dome = 0.25 * (1.0 - x * x - (y / FACE.1).powi(2));
    let nose = 0.18 * (-(x * x) / (0.12 * 0.12) - (y + 0.1).powi(2) / (0.25 * 0.25)).exp();
    dome + nose
}

/// A generated toy model together with its sampled ground truth.
#[derive(Clone, Debug)]
pub struct ToyFace {
    pub model: BlendshapeModel,
    pub truth: ShapeParams,
}

/// Orthographic camera framing the toy face in a `width x height` image.
pub fn toy_camera(width: usize, height: usize) -> Camera {
    let s = PIXELS_PER_UNIT * width.min(height) as f64 / 128.0;
    Camera::orthographic(s, width as f64 / 2.0, height as f64 / 2.0)
}

/// Builds the toy model and samples a ground-truth parameter vector.
///
/// Requires `n_vertices >= 8` (one vertex per part) and at least one
/// identity and one expression column.
pub fn gen_toy_model(seed: u64, n_vertices: usize, k_id: usize, k_exp: usize) -> Result<ToyFace> {
    if n_vertices < 8 {
        return Err(invalid(format!("toy model needs at least 8 vertices, got {n_vertices}")));
    }
    if k_id == 0 || k_exp == 0 {
        return Err(invalid("toy model needs at least one identity and one expression column"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let phase = rng.random_range(0.0..2.0 * PI);

    let feature_area: f64 = FEATURES.iter().map(|f| ellipse_area(f.axes)).sum();
    let hole_area: f64 = FEATURES
        .iter()
        .map(|f| ellipse_area((f.axes.0 + MARGIN, f.axes.1 + MARGIN)))
        .sum();
    let skin_area = ellipse_area(FACE) - hole_area;
    let density = n_vertices as f64 / (FEATURE_DENSITY * feature_area + skin_area);

    let mut positions: Vec<(f64, f64)> = Vec::with_capacity(n_vertices);
    let mut parts: BTreeMap<PartLabel, Vec<usize>> = BTreeMap::new();
    let mut budget = n_vertices - 1;
    for f in FEATURES.iter() {
        let want = ((FEATURE_DENSITY * density * ellipse_area(f.axes)).round() as usize).max(1).min(budget.saturating_sub(1).max(1));
        budget -= want.min(budget);
        let start = positions.len();
        positions.extend(sunflower(want, f.center, f.axes, phase));
        parts.insert(f.part, (start..positions.len()).collect());
    }
    let n_skin = n_vertices - positions.len();
    let skin = skin_points(n_skin, skin_area / ellipse_area(FACE), phase);
    let start = positions.len();
    positions.extend(skin);
    parts.insert(PartLabel::Skin, (start..positions.len()).collect());

    let mean: Vec<Vec3> = positions.iter().map(|&(x, y)| [x, y, depth(x, y)]).collect();
    let owner: Vec<PartLabel> = {
        let mut o = vec![PartLabel::Skin; n_vertices];
        for (p, idx) in &parts {
            for &i in idx {
                o[i] = *p;
            }
        }
        o
    };

    let id_fields: Vec<Vec<Vec3>> = (0..k_id).map(|j| identity_field(j, &mean, &owner, &mut rng)).collect();
    let exp_fields: Vec<Vec<Vec3>> = (0..k_exp).map(|j| expression_field(j, &mean, &owner, &mut rng)).collect();
    let id_basis = interleave(&id_fields, n_vertices);
    let exp_basis = interleave(&exp_fields, n_vertices);

    let landmarks = pick_landmarks(&mean, &parts);
    let model = BlendshapeModel::new(mean, id_basis, k_id, exp_basis, k_exp, parts, landmarks)?;

    let truth = ShapeParams {
        id: (0..k_id).map(|_| rng.random_range(-1.0..1.0)).collect(),
        exp: (0..k_exp).map(|_| rng.random_range(-0.5..1.0)).collect(),
        angles: [rng.random_range(-0.12..0.12), rng.random_range(-0.12..0.12), rng.random_range(-0.08..0.08)],
        translation: [rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1), 0.0],
    };
    Ok(ToyFace { model, truth })
}

fn skin_points(count: usize, area_fraction: f64, phase: f64) -> Vec<(f64, f64)> {
    if count == 0 {
        return Vec::new();
    }
    let keep = |p: &(f64, f64)| {
        !FEATURES
            .iter()
            .any(|f| inside(*p, f.center, (f.axes.0 + MARGIN, f.axes.1 + MARGIN)))
    };
    let mut total = ((count as f64 / area_fraction).ceil() as usize).max(count);
    let mut kept: Vec<(f64, f64)>;
    loop {
        kept = sunflower(total, (0.0, 0.0), FACE, phase).into_iter().filter(keep).collect();
        if kept.len() >= count {
            break;
        }
        total += (count - kept.len()).max(1);
    }
    // Thin evenly down to the exact count.
    let extra = kept.len() - count;
    if extra > 0 {
        let drop: Vec<usize> = (0..extra).map(|i| (2 * i + 1) * kept.len() / (2 * extra)).collect();
        let mut d = drop.into_iter().peekable();
        kept = kept
            .into_iter()
            .enumerate()
            .filter(|(i, _)| {
                if d.peek() == Some(i) {
                    d.next();
                    false
                } else {
                    true
                }
            })
            .map(|(_, p)| p)
            .collect();
    }
    kept
}

fn interleave(fields: &[Vec<Vec3>], n: usize) -> Vec<f64> {
    let k = fields.len();
    let mut out = vec![0.0; 3 * n * k];
    for (j, field) in fields.iter().enumerate() {
        for (i, d) in field.iter().enumerate() {
            for c in 0..3 {
                out[(3 * i + c) * k + j] = d[c];
            }
        }
    }
    out
}

fn is_eye(p: PartLabel) -> bool {
    matches!(p, PartLabel::LeftEye | PartLabel::RightEye)
}

fn is_lip(p: PartLabel) -> bool {
    matches!(p, PartLabel::UpLip | PartLabel::DownLip)
}

/// Displacement relative to the center of the vertex's own feature.
fn local(v: &Vec3, p: PartLabel) -> (f64, f64) {
    feature(p).map_or((0.0, 0.0), |f| (v[0] - f.center.0, v[1] - f.center.1))
}

fn random_smooth(mean: &[Vec3], owner: &[PartLabel], rng: &mut ChaCha8Rng, features_only: bool, amp: f64) -> Vec<Vec3> {
    let cx: [f64; 5] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
    let cy: [f64; 5] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
    mean.iter()
        .zip(owner)
        .map(|(v, &p)| {
            if features_only && p == PartLabel::Skin {
                return [0.0; 3];
            }
            let (x, y) = (v[0], v[1]);
            let basis = [x, y, x * y, x * x - 0.3, y * y - 0.4];
            let dx: f64 = basis.iter().zip(&cx).map(|(b, c)| b * c).sum();
            let dy: f64 = basis.iter().zip(&cy).map(|(b, c)| b * c).sum();
            [amp * dx, amp * dy, 0.0]
        })
        .collect()
}

fn identity_field(j: usize, mean: &[Vec3], owner: &[PartLabel], rng: &mut ChaCha8Rng) -> Vec<Vec3> {
    let gain = rng.random_range(0.8..1.2);
    let field: Vec<Vec3> = match j {
        0 => mean.iter().map(|v| [0.06 * v[0], 0.0, 0.0]).collect(),
        1 => mean.iter().map(|v| [0.0, 0.06 * v[1], 0.0]).collect(),
        _ => mean
            .iter()
            .zip(owner)
            .map(|(v, &p)| {
                let (lx, ly) = local(v, p);
                match j {
                    // eye spacing
                    2 if is_eye(p) || p.is_eyebrow() => [0.04 * v[0].signum(), 0.0, 0.0],
                    // eyebrow height
                    3 if p.is_eyebrow() => [0.0, 0.04, 0.0],
                    // nose size and protrusion
                    4 if p == PartLabel::Nose => [0.25 * lx, 0.2 * ly, 0.05],
                    // mouth width
                    5 if is_lip(p) => [0.12 * v[0], 0.0, 0.0],
                    // eye size
                    6 if is_eye(p) => [0.2 * lx, 0.2 * ly, 0.0],
                    // chin length
                    7 if p == PartLabel::Skin => [0.0, -0.04 * ((-v[1] - 0.5).max(0.0) / 0.75), 0.0],
                    7 if p == PartLabel::DownLip => [0.0, -0.005, 0.0],
                    _ => [0.0; 3],
                }
            })
            .collect(),
    };
    if j >= 8 {
        return random_smooth(mean, owner, rng, false, 0.03 * gain);
    }
    field.into_iter().map(|d| [d[0] * gain, d[1] * gain, d[2] * gain]).collect()
}

fn expression_field(j: usize, mean: &[Vec3], owner: &[PartLabel], rng: &mut ChaCha8Rng) -> Vec<Vec3> {
    let gain = rng.random_range(0.8..1.2);
    if j >= 6 {
        return random_smooth(mean, owner, rng, true, 0.02 * gain);
    }
    mean.iter()
        .zip(owner)
        .map(|(v, &p)| {
            let (_, ly) = local(v, p);
            let d = match j {
                // eyes close
                0 if is_eye(p) => [0.0, -0.3 * ly, 0.0],
                // mouth open
                1 if p == PartLabel::UpLip => [0.0, 0.02, 0.0],
                1 if p == PartLabel::DownLip => [0.0, -0.05, 0.0],
                1 if p == PartLabel::Skin && v[1] < -0.85 => [0.0, -0.04, 0.0],
                // smile
                2 if is_lip(p) => [0.03 * v[0] / 0.34, 0.05 * (v[0] / 0.34).powi(2), 0.0],
                // brow raise
                3 if p.is_eyebrow() => [0.0, 0.05, 0.0],
                // left wink
                4 if p == PartLabel::LeftEye => [0.0, -0.25 * ly, 0.0],
                // frown
                5 if p.is_eyebrow() => [-0.03 * v[0].signum(), -0.02, 0.0],
                _ => [0.0; 3],
            };
            [d[0] * gain, d[1] * gain, d[2] * gain]
        })
        .collect()
}

/// Extreme vertices of every feature plus the skin outline at 12 bearings.
fn pick_landmarks(mean: &[Vec3], parts: &BTreeMap<PartLabel, Vec<usize>>) -> Vec<usize> {
    let mut out = Vec::new();
    for (part, idx) in parts {
        if idx.is_empty() {
            continue;
        }
        if *part == PartLabel::Skin {
            for bin in 0..12 {
                let best = idx
                    .iter()
                    .copied()
                    .filter(|&i| {
                        let a = mean[i][1].atan2(mean[i][0]) + PI;
                        ((a / (2.0 * PI) * 12.0) as usize).min(11) == bin
                    })
                    .max_by(|&a, &b| {
                        let ra = (mean[a][0] / FACE.0).hypot(mean[a][1] / FACE.1);
                        let rb = (mean[b][0] / FACE.0).hypot(mean[b][1] / FACE.1);
                        ra.total_cmp(&rb).then(b.cmp(&a))
                    });
                out.extend(best);
            }
        } else {
            let by = |c: usize, max: bool| {
                idx.iter().copied().reduce(|a, b| {
                    let better = if max { mean[b][c] > mean[a][c] } else { mean[b][c] < mean[a][c] };
                    if better { b } else { a }
                })
            };
            out.extend([by(0, false), by(0, true), by(1, false), by(1, true)].into_iter().flatten());
        }
    }
    let mut seen = std::collections::BTreeSet::new();
    out.retain(|i| seen.insert(*i));
    out
}
