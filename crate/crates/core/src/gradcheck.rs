//! Finite-difference verification of every analytic gradient in the crate.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::baselines::{chamfer_loss, nn_loss_directed, soft_silhouette_iou_loss, SoftSilhouetteConfig};
use crate::error::{invalid, Result};
use crate::fitting::{total_loss, FitConfig, FitProblem, GeometricLoss, LossWeights};
use crate::geometry::{Point2, PointSet};
use crate::ingest::{Landmark, LandmarkSet, PartPointSets, Targets};
use crate::metrics::rasterize_points;
use crate::model::{assemble_vertices, gen_toy_model, part_points, project, toy_camera, PartFilter, ShapeParams, TargetContext};
use crate::part::PartLabel;
use crate::prdl::{descriptor_of, prdl_value_and_gradient, AnchorGrid, DistanceFunctionSet, PartInput};

/// Names of the checks, in report order.
pub const CHECKS: [&str; 10] = [
    "prdl",
    "chamfer",
    "nn-pred-to-target",
    "nn-target-to-pred",
    "soft-silhouette",
    "total-prdl",
    "total-chamfer",
    "total-nn-pred-to-target",
    "total-nn-target-to-pred",
    "total-soft-silhouette",
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GradCheckConfig {
    pub instances: usize,
    pub seed: u64,
    /// Central-difference step.
    pub step: f64,
    pub tolerance: f64,
    /// Test hook: negate the analytic gradient of this check.
    pub flip_sign: Option<String>,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            instances: 100,
            seed: 0,
            step: 1e-6,
            tolerance: 1e-5,
            flip_sign: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub instances: usize,
    /// Largest over instances of `max |analytic - fd| / max |fd|`.
    pub max_relative_error: f64,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub seed: u64,
    pub tolerance: f64,
    pub checks: Vec<CheckResult>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn to_table(&self) -> String {
        let mut s = format!("# seed={} tolerance={:e}\n", self.seed, self.tolerance);
        for c in &self.checks {
            s.push_str(&format!(
                "{:<26} {:>4} instances  max rel err {:.3e}  {}\n",
                c.name,
                c.instances,
                c.max_relative_error,
                if c.passed { "PASS" } else { "FAIL" }
            ));
        }
        s
    }
}

/// Max-norm relative error between an analytic gradient and central
/// differences of `f` around `x`. `None` when the gradient is too small for
/// central differences to resolve at the configured tolerance (rounding in
/// `f` alone would exceed it); such instances are redrawn.
fn compare(x: &[f64], analytic: &[f64], cfg: &GradCheckConfig, f: impl Fn(&[f64]) -> Result<f64>) -> Result<Option<f64>> {
    let h = cfg.step;
    let mut num = 0.0f64;
    let mut den = 0.0f64;
    let mut scale = f(x)?.abs();
    let mut v = x.to_vec();
    for c in 0..x.len() {
        v[c] = x[c] + h;
        let plus = f(&v)?;
        v[c] = x[c] - h;
        let minus = f(&v)?;
        v[c] = x[c];
        let fd = (plus - minus) / (2.0 * h);
        scale = scale.max(plus.abs()).max(minus.abs());
        num = num.max((fd - analytic[c]).abs());
        den = den.max(fd.abs());
    }
    let noise = 4.0 * f64::EPSILON * scale / h;
    if den < 10.0 * noise / cfg.tolerance {
        return Ok(None);
    }
    Ok(Some(num / den))
}

fn flatten(p: &[Point2]) -> Vec<f64> {
    p.iter().flat_map(|q| [q.x, q.y]).collect()
}

fn unflatten(v: &[f64]) -> Vec<Point2> {
    v.chunks(2).map(|c| Point2::new(c[0], c[1])).collect()
}

fn random_points(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<Point2> {
    (0..n).map(|_| Point2::new(rng.random_range(lo..hi), rng.random_range(lo..hi))).collect()
}

/// True when the two smallest and the two largest distances from every
/// anchor to `points` differ by at least `gap`, and no point sits on an
/// anchor.
fn selections_are_stable(points: &[Point2], anchors: &[Point2], gap: f64) -> bool {
    anchors.iter().all(|a| {
        let mut d: Vec<f64> = points.iter().map(|p| p.distance(*a)).collect();
        d.sort_by(f64::total_cmp);
        d[0] > gap && (d.len() < 2 || (d[1] - d[0] > gap && d[d.len() - 1] - d[d.len() - 2] > gap))
    })
}

fn check_prdl(rng: &mut ChaCha8Rng, cfg: &GradCheckConfig, sign: f64) -> Result<Option<f64>> {
    const SIZE: usize = 24;
    let fns = DistanceFunctionSet::all();
    loop {
        let n_anchor = rng.random_range(1..8);
        let anchor_pts = random_points(rng, n_anchor, 0.0, SIZE as f64);
        let anchors = AnchorGrid::from_points(&PointSet::new(anchor_pts.clone())?, SIZE, SIZE)?;
        let n_parts = rng.random_range(1..4);
        let preds: Vec<Vec<Point2>> = (0..n_parts).map(|_| {
            let n = rng.random_range(2..10);
            random_points(rng, n, 0.0, SIZE as f64)
        }).collect();
        if !preds.iter().all(|p| selections_are_stable(p, &anchor_pts, 1e-3)) {
            continue;
        }
        let targets = (0..n_parts)
            .map(|_| {
                let n = rng.random_range(1..10);
                descriptor_of(&random_points(rng, n, 0.0, SIZE as f64), &anchors, &fns)
            })
            .collect::<Result<Vec<_>>>()?;
        let weights: Vec<f64> = (0..n_parts).map(|_| rng.random_range(0.5..2.0)).collect();
        let sizes: Vec<usize> = preds.iter().map(Vec::len).collect();
        let eval = |flat: &[f64]| {
            let mut parts_pts = Vec::new();
            let mut off = 0;
            for &n in &sizes {
                parts_pts.push(unflatten(&flat[off..off + 2 * n]));
                off += 2 * n;
            }
            let inputs: Vec<PartInput> = parts_pts
                .iter()
                .zip(&targets)
                .zip(&weights)
                .map(|((p, t), &w)| PartInput { pred: p, target: t, weight: w })
                .collect();
            prdl_value_and_gradient(&inputs, &anchors, &fns, SIZE, SIZE)
        };
        let x: Vec<f64> = preds.iter().flat_map(|p| flatten(p)).collect();
        let base = eval(&x)?;
        let g: Vec<f64> = base.gradients.iter().flat_map(|p| flatten(p)).map(|v| sign * v).collect();
        return compare(&x, &g, cfg, |v| Ok(eval(v)?.loss));
    }
}

/// Random sets where every point's nearest neighbour in the other set is
/// unambiguous.
fn nn_instance(rng: &mut ChaCha8Rng) -> (Vec<Point2>, Vec<Point2>) {
    loop {
        let np = rng.random_range(1..10);
        let nt = rng.random_range(2..12);
        let p = random_points(rng, np, 2.0, 14.0);
        let t = random_points(rng, nt, 2.0, 14.0);
        let ok = |a: &[Point2], b: &[Point2]| {
            a.iter().all(|q| {
                let mut d: Vec<f64> = b.iter().map(|r| r.distance(*q)).collect();
                d.sort_by(f64::total_cmp);
                d.len() < 2 || d[1] - d[0] > 1e-3
            })
        };
        if ok(&p, &t) && (p.len() < 2 || ok(&t, &p)) {
            return (p, t);
        }
    }
}

fn check_baseline(name: &str, rng: &mut ChaCha8Rng, cfg: &GradCheckConfig, sign: f64) -> Result<Option<f64>> {
    let (p, t) = nn_instance(rng);
    let target = PointSet::new(t.clone())?;
    let x = flatten(&p);
    let eval = |flat: &[f64]| -> Result<(f64, Vec<Point2>)> {
        let pred = PointSet::new(unflatten(flat))?;
        Ok(match name {
            "chamfer" => {
                let e = chamfer_loss(&pred, &target)?;
                (e.value, e.grad)
            }
            "nn-pred-to-target" => {
                let e = nn_loss_directed(&pred, &target)?;
                (e.value, e.grad_from)
            }
            "nn-target-to-pred" => {
                let e = nn_loss_directed(&target, &pred)?;
                (e.value, e.grad_to)
            }
            _ => {
                let mask = rasterize_points(&t, 16, 16, 2.0)?;
                let e = soft_silhouette_iou_loss(&pred, &mask, &SoftSilhouetteConfig::default())?;
                (e.value, e.grad)
            }
        })
    };
    let g: Vec<f64> = flatten(&eval(&x)?.1).into_iter().map(|v| sign * v).collect();
    compare(&x, &g, cfg, |v| Ok(eval(v)?.0))
}

fn check_total(loss: GeometricLoss, rng: &mut ChaCha8Rng, cfg: &GradCheckConfig, sign: f64) -> Result<Option<f64>> {
    const SIZE: usize = 48;
    let toy = gen_toy_model(rng.random(), 80, 3, 2)?;
    let cam = toy_camera(SIZE, SIZE);
    let truth = ShapeParams {
        angles: [0.0; 3],
        translation: [0.0; 3],
        ..toy.truth.clone()
    };
    let pts = project(&cam, &assemble_vertices(&toy.model, &truth)?)?;
    let mut sets = PartPointSets::new(SIZE, SIZE);
    for (p, idx) in toy.model.parts() {
        sets.insert(*p, pts.select(idx));
    }
    let masks = PartLabel::ALL.iter().map(|&p| (p, sets.mask(p))).collect();
    let fit_cfg = FitConfig {
        loss,
        anchor_count: Some(48),
        anchor_start: rng.random_range(0..SIZE * SIZE),
        filter: PartFilter::visibility_only(),
        ..FitConfig::default()
    };
    let lm_vertex = rng.random_range(0..toy.model.n_vertices());
    let landmarks = LandmarkSet {
        landmarks: vec![Landmark {
            vertex: lm_vertex,
            position: Point2::new(rng.random_range(10.0..38.0), rng.random_range(10.0..38.0)),
        }],
    };
    let problem = FitProblem::new(Targets { sets, masks }, None, landmarks, &fit_cfg)?;
    let weights = LossWeights::standard();
    let mut p = toy.model.zero_params();
    for v in p.id.iter_mut().chain(p.exp.iter_mut()) {
        *v = rng.random_range(-0.5..0.5);
    }
    p.angles = [rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1)];
    p.translation = [rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1), 0.0];
    if loss == GeometricLoss::Prdl {
        for part in toy.model.parts().keys() {
            let pp = part_points(&toy.model, &cam, &p, *part, &fit_cfg.filter, &TargetContext::default())?;
            if !pp.points.is_empty() && !selections_are_stable(pp.points.points(), problem.anchors().points(), 1e-3) {
                return Ok(None);
            }
        }
    }
    let (k_id, k_exp) = (toy.model.k_id(), toy.model.k_exp());
    let eval = |v: &[f64]| total_loss(&toy.model, &cam, &ShapeParams::from_slice(k_id, k_exp, v)?, &problem, &weights, &fit_cfg);
    let x = p.to_vec();
    let g: Vec<f64> = eval(&x)?.gradient.into_iter().map(|v| sign * v).collect();
    compare(&x, &g, cfg, |v| Ok(eval(v)?.total))
}

/// Runs every check on `instances` seeded random instances each.
pub fn run_grad_check(cfg: &GradCheckConfig) -> Result<GradCheckReport> {
    if cfg.instances == 0 {
        return Err(invalid("grad check needs at least one instance"));
    }
    if !(cfg.step > 0.0) || !(cfg.tolerance > 0.0) {
        return Err(invalid("step and tolerance must be positive"));
    }
    if let Some(f) = &cfg.flip_sign {
        if !CHECKS.contains(&f.as_str()) {
            return Err(invalid(format!("unknown check '{f}'")));
        }
    }
    let mut checks = Vec::new();
    for (k, name) in CHECKS.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(k as u64 * 0x9e37_79b9));
        let sign = if cfg.flip_sign.as_deref() == Some(*name) { -1.0 } else { 1.0 };
        let mut worst = 0.0f64;
        let mut done = 0;
        let mut drawn = 0;
        while done < cfg.instances {
            drawn += 1;
            if drawn > 100 * cfg.instances {
                return Err(invalid(format!("{name}: could not draw well-conditioned instances")));
            }
            let e = match *name {
                "prdl" => check_prdl(&mut rng, cfg, sign)?,
                n if n.starts_with("total-") => {
                    let loss: GeometricLoss = n["total-".len()..].parse()?;
                    check_total(loss, &mut rng, cfg, sign)?
                }
                n => check_baseline(n, &mut rng, cfg, sign)?,
            };
            if let Some(e) = e {
                worst = worst.max(e);
                done += 1;
            }
        }
        checks.push(CheckResult {
            name: name.to_string(),
            instances: cfg.instances,
            max_relative_error: worst,
            passed: worst <= cfg.tolerance,
        });
    }
    Ok(GradCheckReport {
        seed: cfg.seed,
        tolerance: cfg.tolerance,
        checks,
    })
}
