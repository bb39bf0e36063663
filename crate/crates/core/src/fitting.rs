//! Per-image parameter fitting: loss composition, gradient chaining through
//! the model Jacobian, and an Adam loop with a plateau stopping rule.

use std::collections::BTreeMap;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::baselines::{chamfer_indexed, nn_directed_indexed, soft_silhouette_slice, SoftSilhouetteConfig};
use crate::error::{invalid, Error, Result};
use crate::geometry::{farthest_point_indices, Point2, PointSet, SpatialIndex};
use crate::ingest::{LandmarkSet, PartMask, Targets};
use crate::metrics::{iou_report, predicted_masks, IoUReport};
use crate::model::{jacobian_at, part_points_posed, BlendshapeModel, Camera, PartFilter, Posed, ShapeParams, TargetContext};
use crate::part::PartLabel;
use crate::prdl::{descriptor_of, prdl_value_and_gradient, AnchorGrid, DescriptorTensor, DistanceFunctionSet, PartInput};

/// Balance weights of the objective and per-part PRDL weights.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub lambda_prdl: f64,
    pub lambda_lmk: f64,
    pub lambda_reg: f64,
    /// Expression coefficients are regularized with `c_exp ‖α_exp‖²`.
    pub c_exp: f64,
    /// Missing parts weigh 1.
    pub part_weights: BTreeMap<PartLabel, f64>,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self::standard()
    }
}

impl LossWeights {
    pub fn standard() -> Self {
        LossWeights {
            lambda_prdl: 0.8e-3,
            lambda_lmk: 1.6e-3,
            lambda_reg: 3e-4,
            c_exp: 1.0,
            part_weights: BTreeMap::new(),
        }
    }

    /// Geometric term and regularizer only.
    pub fn prdl_only() -> Self {
        LossWeights {
            lambda_lmk: 0.0,
            ..Self::standard()
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "default" => Ok(Self::standard()),
            "prdl-only" => Ok(Self::prdl_only()),
            other => Err(invalid(format!("unknown weights preset '{other}' (expected default or prdl-only)"))),
        }
    }

    pub fn part_weight(&self, part: PartLabel) -> f64 {
        self.part_weights.get(&part).copied().unwrap_or(1.0)
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.lambda_prdl, self.lambda_lmk, self.lambda_reg, self.c_exp]
            .into_iter()
            .chain(self.part_weights.values().copied());
        for w in all {
            if !(w >= 0.0 && w.is_finite()) {
                return Err(invalid(format!("weights must be finite and non-negative, got {w}")));
            }
        }
        Ok(())
    }
}

/// Which geometric term fills the PRDL slot of the objective.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GeometricLoss {
    Prdl,
    Chamfer,
    /// Mean squared distance from each predicted point to the target.
    NnPredToTarget,
    /// Mean squared distance from each target pixel to the prediction.
    NnTargetToPred,
    SoftSilhouette,
}

impl GeometricLoss {
    pub const ALL: [GeometricLoss; 5] = [
        GeometricLoss::Prdl,
        GeometricLoss::Chamfer,
        GeometricLoss::NnPredToTarget,
        GeometricLoss::NnTargetToPred,
        GeometricLoss::SoftSilhouette,
    ];

    pub fn name(self) -> &'static str {
        match self {
            GeometricLoss::Prdl => "prdl",
            GeometricLoss::Chamfer => "chamfer",
            GeometricLoss::NnPredToTarget => "nn-pred-to-target",
            GeometricLoss::NnTargetToPred => "nn-target-to-pred",
            GeometricLoss::SoftSilhouette => "soft-silhouette",
        }
    }
}

impl std::str::FromStr for GeometricLoss {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|l| l.name() == s)
            .ok_or_else(|| invalid(format!("unknown loss '{s}'")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitConfig {
    pub max_iters: usize,
    pub lr: f64,
    /// Learning rate reached at the last iteration (geometric decay);
    /// `None` keeps `lr` constant.
    pub lr_final: Option<f64>,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// Stop when the relative change of the total loss stays below
    /// `tolerance` for `patience` consecutive iterations.
    pub tolerance: f64,
    pub patience: usize,
    /// FPS subsample of the pixel lattice; `None` uses every pixel.
    pub anchor_count: Option<usize>,
    pub anchor_start: usize,
    /// Skin point sets larger than this are reduced by FPS.
    pub skin_cap: usize,
    /// Seeds the FPS start of the skin reduction.
    pub seed: u64,
    pub functions: DistanceFunctionSet,
    pub loss: GeometricLoss,
    pub filter: PartFilter,
    pub silhouette: SoftSilhouetteConfig,
    /// Splat radius used when rasterizing predictions for IoU.
    pub splat_radius: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            max_iters: 2000,
            lr: 1e-4,
            lr_final: None,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            tolerance: 1e-6,
            patience: 20,
            anchor_count: None,
            anchor_start: 0,
            skin_cap: 3000,
            seed: 0,
            functions: DistanceFunctionSet::all(),
            loss: GeometricLoss::Prdl,
            filter: PartFilter::default(),
            silhouette: SoftSilhouetteConfig::default(),
            splat_radius: 0.5,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iters == 0 {
            return Err(invalid("max_iters must be at least 1"));
        }
        let lr_ok = |v: f64| v > 0.0 && v.is_finite();
        if !lr_ok(self.lr) || self.lr_final.is_some_and(|v| !lr_ok(v)) {
            return Err(invalid("learning rate must be positive"));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.adam_eps > 0.0) {
            return Err(invalid("Adam moments must lie in [0, 1) and eps must be positive"));
        }
        if self.skin_cap == 0 {
            return Err(invalid("skin_cap must be at least 1"));
        }
        if self.anchor_count == Some(0) {
            return Err(invalid("anchor_count must be at least 1"));
        }
        Ok(())
    }

    fn lr_at(&self, iter: usize) -> f64 {
        match self.lr_final {
            Some(end) if self.max_iters > 1 => {
                let t = iter as f64 / (self.max_iters - 1) as f64;
                self.lr * (end / self.lr).powf(t)
            }
            _ => self.lr,
        }
    }
}

/// `(1/(H W)) Σ ‖proj(vertex) − position‖²` with per-point gradients.
pub fn landmark_loss(pred: &[Point2], landmarks: &LandmarkSet, height: usize, width: usize) -> Result<(f64, Vec<Point2>)> {
    let norm = 1.0 / (height * width).max(1) as f64;
    let mut grad = vec![Point2::ZERO; pred.len()];
    let mut value = 0.0;
    for l in &landmarks.landmarks {
        let p = *pred
            .get(l.vertex)
            .ok_or_else(|| invalid(format!("landmark vertex {} out of range ({} vertices)", l.vertex, pred.len())))?;
        let d = p - l.position;
        value += d.dot(d);
        grad[l.vertex] += d * (2.0 * norm);
    }
    Ok((value * norm, grad))
}

/// `‖α_id‖² + c_exp ‖α_exp‖²`; gradient in [`ShapeParams::to_vec`] layout.
pub fn regularization_loss(params: &ShapeParams, c_exp: f64) -> (f64, Vec<f64>) {
    let mut grad = vec![0.0; params.dim()];
    let mut value = 0.0;
    for (j, a) in params.id.iter().enumerate() {
        value += a * a;
        grad[j] = 2.0 * a;
    }
    let k = params.id.len();
    for (j, a) in params.exp.iter().enumerate() {
        value += c_exp * a * a;
        grad[k + j] = 2.0 * c_exp * a;
    }
    (value, grad)
}

/// Targets and everything precomputed from them for one fit.
#[derive(Clone, Debug)]
pub struct FitProblem {
    pub width: usize,
    pub height: usize,
    pub targets: Targets,
    /// Ground-truth masks used for the IoU in the report.
    pub eval_masks: BTreeMap<PartLabel, PartMask>,
    pub landmarks: LandmarkSet,
    ctx: TargetContext,
    anchors: AnchorGrid,
    /// `H W / |A|`, so a subsampled lattice keeps the full-lattice scale.
    anchor_scale: f64,
    target_points: BTreeMap<PartLabel, Vec<Point2>>,
    target_desc: BTreeMap<PartLabel, DescriptorTensor>,
    target_index: BTreeMap<PartLabel, SpatialIndex>,
}

fn cap_points(points: &[Point2], cap: usize, seed: u64) -> Result<Vec<usize>> {
    if points.len() <= cap {
        return Ok((0..points.len()).collect());
    }
    let mut idx = farthest_point_indices(points, cap, (seed % points.len() as u64) as usize)?;
    idx.sort_unstable();
    Ok(idx)
}

impl FitProblem {
    pub fn new(targets: Targets, eval_masks: Option<BTreeMap<PartLabel, PartMask>>, landmarks: LandmarkSet, config: &FitConfig) -> Result<Self> {
        config.validate()?;
        let (width, height) = (targets.width(), targets.height());
        let lattice = AnchorGrid::lattice(width, height)?;
        let anchors = match config.anchor_count {
            Some(k) if k < lattice.len() => lattice.subsample(k, config.anchor_start)?,
            _ => lattice,
        };
        let anchor_scale = (width * height) as f64 / anchors.len() as f64;
        let mut target_points = BTreeMap::new();
        let mut target_desc = BTreeMap::new();
        let mut target_index = BTreeMap::new();
        for (part, set) in targets.sets.iter() {
            if set.is_empty() {
                continue;
            }
            let pts = if part == PartLabel::Skin {
                let keep = cap_points(set.points(), config.skin_cap, config.seed)?;
                keep.iter().map(|&i| set[i]).collect()
            } else {
                set.points().to_vec()
            };
            if config.loss == GeometricLoss::Prdl {
                target_desc.insert(part, descriptor_of(&pts, &anchors, &config.functions)?);
            }
            target_index.insert(part, SpatialIndex::build(&PointSet::new(pts.clone())?)?);
            target_points.insert(part, pts);
        }
        let ctx = TargetContext::from_targets(&targets.sets);
        let eval_masks = eval_masks.unwrap_or_else(|| targets.masks.clone());
        Ok(FitProblem {
            width,
            height,
            targets,
            eval_masks,
            landmarks,
            ctx,
            anchors,
            anchor_scale,
            target_points,
            target_desc,
            target_index,
        })
    }

    pub fn anchors(&self) -> &AnchorGrid {
        &self.anchors
    }

    pub fn has_signal(&self) -> bool {
        !self.target_points.is_empty() || !self.landmarks.is_empty()
    }

    pub fn target_descriptor(&self, part: PartLabel) -> Option<&DescriptorTensor> {
        self.target_desc.get(&part)
    }
}

/// Value of every term and the gradient of the total over the parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct TotalEval {
    /// Unweighted geometric term (PRDL or the selected baseline).
    pub geometric: f64,
    pub landmark: f64,
    pub regularization: f64,
    pub total: f64,
    pub gradient: Vec<f64>,
    pub clamped: usize,
    /// Parts with a target whose prediction was filtered to nothing.
    pub skipped_parts: Vec<PartLabel>,
}

/// `λ_prdl L_geo + λ_lmk L_lmk + λ_reg L_reg` with its analytic gradient.
pub fn total_loss(
    model: &BlendshapeModel,
    camera: &Camera,
    params: &ShapeParams,
    problem: &FitProblem,
    weights: &LossWeights,
    config: &FitConfig,
) -> Result<TotalEval> {
    let posed = Posed::new(model, camera, params)?;
    let n = model.n_vertices();
    let mut vgrad = vec![Point2::ZERO; n];
    let (h, w) = (problem.height, problem.width);

    // Gather per-part predictions.
    let mut parts: Vec<(PartLabel, Vec<Point2>, Vec<usize>, f64)> = Vec::new();
    let mut skipped = Vec::new();
    if weights.lambda_prdl > 0.0 {
        for &part in problem.target_points.keys() {
            let wp = weights.part_weight(part);
            if wp == 0.0 || !model.parts().contains_key(&part) {
                continue;
            }
            let proj = part_points_posed(model, &posed, params, part, &config.filter, &problem.ctx)?;
            let (mut pts, mut verts) = (proj.points.into_points(), proj.vertices);
            if pts.is_empty() {
                skipped.push(part);
                continue;
            }
            if part == PartLabel::Skin && pts.len() > config.skin_cap {
                let keep = cap_points(&pts, config.skin_cap, config.seed)?;
                pts = keep.iter().map(|&i| pts[i]).collect();
                verts = keep.iter().map(|&i| verts[i]).collect();
            }
            parts.push((part, pts, verts, wp));
        }
    }

    let mut geometric = 0.0;
    let mut clamped = 0;
    let mut point_grads: Vec<Vec<Point2>> = Vec::with_capacity(parts.len());
    match config.loss {
        GeometricLoss::Prdl => {
            let inputs: Vec<PartInput> = parts
                .iter()
                .map(|(p, pts, _, wp)| PartInput {
                    pred: pts,
                    target: &problem.target_desc[p],
                    weight: *wp,
                })
                .collect();
            let e = prdl_value_and_gradient(&inputs, &problem.anchors, &config.functions, h, w)?;
            geometric = e.loss * problem.anchor_scale;
            clamped = e.clamped;
            point_grads = e
                .gradients
                .into_iter()
                .map(|g| g.into_iter().map(|v| v * problem.anchor_scale).collect())
                .collect();
        }
        kind => {
            for (part, pts, _, wp) in &parts {
                let index = &problem.target_index[part];
                let (value, grad) = match kind {
                    GeometricLoss::Chamfer => {
                        let e = chamfer_indexed(pts, index)?;
                        (e.value, e.grad)
                    }
                    GeometricLoss::NnPredToTarget => {
                        let e = nn_directed_indexed(pts, index)?;
                        (e.value, e.grad_from)
                    }
                    GeometricLoss::NnTargetToPred => {
                        let pred_index = SpatialIndex::build(&PointSet::new(pts.clone())?)?;
                        let e = nn_directed_indexed(index.points(), &pred_index)?;
                        (e.value, e.grad_to)
                    }
                    GeometricLoss::SoftSilhouette => {
                        let e = soft_silhouette_slice(pts, &problem.targets.masks[part], &config.silhouette)?;
                        (e.value, e.grad)
                    }
                    GeometricLoss::Prdl => unreachable!(),
                };
                geometric += wp * value;
                point_grads.push(grad.into_iter().map(|g| g * *wp).collect());
            }
        }
    }
    for ((_, _, verts, _), grads) in parts.iter().zip(&point_grads) {
        for (&v, g) in verts.iter().zip(grads) {
            vgrad[v] += *g * weights.lambda_prdl;
        }
    }

    let mut landmark = 0.0;
    if weights.lambda_lmk > 0.0 && !problem.landmarks.is_empty() {
        let (value, grad) = landmark_loss(&posed.points, &problem.landmarks, h, w)?;
        landmark = value;
        for (acc, g) in vgrad.iter_mut().zip(grad) {
            *acc += g * weights.lambda_lmk;
        }
    }

    let (regularization, reg_grad) = regularization_loss(params, weights.c_exp);
    let jac = jacobian_at(model, camera, params, &posed)?;
    let mut gradient = jac.transpose_mul(&vgrad);
    for (g, r) in gradient.iter_mut().zip(reg_grad) {
        *g += weights.lambda_reg * r;
    }
    let total = weights.lambda_prdl * geometric + weights.lambda_lmk * landmark + weights.lambda_reg * regularization;
    Ok(TotalEval {
        geometric,
        landmark,
        regularization,
        total,
        gradient,
        clamped,
        skipped_parts: skipped,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Termination {
    Converged,
    MaxIters,
    NumericalAbort,
}

/// Loss decomposition logged at one iteration, before the update.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterRecord {
    pub iter: usize,
    pub prdl: f64,
    pub lmk: f64,
    pub reg: f64,
    pub total: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub seed: u64,
    pub loss: GeometricLoss,
    pub functions: DistanceFunctionSet,
    pub weights: LossWeights,
    pub iterations: Vec<IterRecord>,
    pub initial_params: ShapeParams,
    pub final_params: ShapeParams,
    pub iou: Option<IoUReport>,
    pub termination: Termination,
    /// Total count of clamped `1/d` factors over the run.
    pub clamped: usize,
    pub message: Option<String>,
    /// Seconds; kept out of the JSON so reports are reproducible byte for byte.
    #[serde(skip)]
    pub wall_time_s: f64,
}

impl FitReport {
    pub fn final_total(&self) -> f64 {
        self.iterations.last().map_or(f64::NAN, |r| r.total)
    }

    pub fn mean_iou(&self) -> f64 {
        self.iou.as_ref().map_or(f64::NAN, |r| r.mean)
    }

    pub fn loss_curve_csv(&self) -> String {
        let mut s = format!("# seed={}\niter,prdl,lmk,reg,total\n", self.seed);
        for r in &self.iterations {
            s.push_str(&format!("{},{},{},{},{}\n", r.iter, r.prdl, r.lmk, r.reg, r.total));
        }
        s
    }
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    fn new(dim: usize) -> Self {
        Adam {
            m: vec![0.0; dim],
            v: vec![0.0; dim],
            t: 0,
        }
    }

    fn step(&mut self, x: &mut [f64], g: &[f64], lr: f64, cfg: &FitConfig) {
        self.t += 1;
        let c1 = 1.0 - cfg.beta1.powi(self.t);
        let c2 = 1.0 - cfg.beta2.powi(self.t);
        for i in 0..x.len() {
            self.m[i] = cfg.beta1 * self.m[i] + (1.0 - cfg.beta1) * g[i];
            self.v[i] = cfg.beta2 * self.v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            x[i] -= lr * mh / (vh.sqrt() + cfg.adam_eps);
        }
    }
}

fn relative_change(prev: f64, cur: f64) -> f64 {
    if prev == cur {
        0.0
    } else {
        (cur - prev).abs() / prev.abs().max(f64::MIN_POSITIVE)
    }
}

/// Runs Adam from `init` until the plateau rule or `max_iters`.
///
/// A non-finite loss or gradient stops the run with
/// [`Termination::NumericalAbort`]; the report then holds the last finite
/// parameters.
pub fn fit(
    model: &BlendshapeModel,
    camera: &Camera,
    problem: &FitProblem,
    config: &FitConfig,
    weights: &LossWeights,
    init: &ShapeParams,
) -> Result<FitReport> {
    config.validate()?;
    weights.validate()?;
    if !problem.has_signal() {
        return Err(Error::NothingToFit);
    }
    if !init.is_finite() {
        return Err(invalid("initial parameters must be finite"));
    }
    let start = Instant::now();
    let (k_id, k_exp) = (model.k_id(), model.k_exp());
    let mut x = init.to_vec();
    let mut adam = Adam::new(x.len());
    let mut iterations = Vec::new();
    let mut clamped = 0;
    let mut stall = 0;
    let mut termination = Termination::MaxIters;
    let mut message = None;
    let mut best = x.clone();
    for iter in 0..config.max_iters {
        let params = ShapeParams::from_slice(k_id, k_exp, &x)?;
        let eval = match total_loss(model, camera, &params, problem, weights, config) {
            Ok(e) => e,
            Err(Error::Projection(msg)) => {
                termination = Termination::NumericalAbort;
                message = Some(format!("iteration {iter}: {msg}"));
                break;
            }
            Err(e) => return Err(e),
        };
        if !eval.total.is_finite() || eval.gradient.iter().any(|g| !g.is_finite()) {
            termination = Termination::NumericalAbort;
            message = Some(format!("iteration {iter}: non-finite loss or gradient"));
            break;
        }
        best.clone_from(&x);
        clamped += eval.clamped;
        if let Some(prev) = iterations.last().map(|r: &IterRecord| r.total) {
            if relative_change(prev, eval.total) < config.tolerance {
                stall += 1;
            } else {
                stall = 0;
            }
        }
        iterations.push(IterRecord {
            iter,
            prdl: eval.geometric,
            lmk: eval.landmark,
            reg: eval.regularization,
            total: eval.total,
        });
        if stall >= config.patience {
            termination = Termination::Converged;
            break;
        }
        adam.step(&mut x, &eval.gradient, config.lr_at(iter), config);
    }
    let final_params = ShapeParams::from_slice(k_id, k_exp, &best)?;
    let iou = if termination == Termination::NumericalAbort {
        None
    } else {
        let masks = predicted_masks(model, camera, &final_params, problem.width, problem.height, config.splat_radius)?;
        Some(iou_report(&masks, &problem.eval_masks)?)
    };
    Ok(FitReport {
        seed: config.seed,
        loss: config.loss,
        functions: config.functions.clone(),
        weights: weights.clone(),
        iterations,
        initial_params: init.clone(),
        final_params,
        iou,
        termination,
        clamped,
        message,
        wall_time_s: start.elapsed().as_secs_f64(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{Landmark, PartPointSets};
    use crate::model::{gen_toy_model, project, assemble_vertices, toy_camera};

    fn exact_targets(model: &BlendshapeModel, cam: &Camera, params: &ShapeParams, w: usize, h: usize) -> Targets {
        let pts = project(cam, &assemble_vertices(model, params).unwrap()).unwrap();
        let mut sets = PartPointSets::new(w, h);
        for (p, idx) in model.parts() {
            sets.insert(*p, pts.select(idx));
        }
        let masks = PartLabel::ALL.iter().map(|&p| (p, sets.mask(p))).collect();
        Targets { sets, masks }
    }

    fn small_config() -> FitConfig {
        FitConfig {
            anchor_count: Some(64),
            filter: PartFilter::visibility_only(),
            lr: 1e-2,
            ..FitConfig::default()
        }
    }

    #[test]
    fn landmark_examples() {
        let lm = LandmarkSet {
            landmarks: vec![Landmark {
                vertex: 0,
                position: Point2::new(3.0, 4.0),
            }],
        };
        assert_eq!(landmark_loss(&[Point2::new(3.0, 4.0)], &lm, 1, 1).unwrap().0, 0.0);
        assert_eq!(landmark_loss(&[Point2::ZERO], &lm, 1, 1).unwrap().0, 25.0);
        assert_eq!(landmark_loss(&[Point2::ZERO], &LandmarkSet::default(), 1, 1).unwrap().0, 0.0);
        assert!(landmark_loss(&[], &lm, 1, 1).is_err());
    }

    #[test]
    fn regularization_examples() {
        let mut p = ShapeParams::zeros(2, 2);
        assert_eq!(regularization_loss(&p, 1.0).0, 0.0);
        p.id[0] = 1.0;
        assert_eq!(regularization_loss(&p, 1.0).0, 1.0);
        p.id[0] = 2.0;
        assert_eq!(regularization_loss(&p, 1.0).0, 4.0);
        p.exp[1] = 1.0;
        assert_eq!(regularization_loss(&p, 0.5).0, 4.5);
    }

    #[test]
    fn presets() {
        let p = LossWeights::standard();
        assert_eq!((p.lambda_prdl, p.lambda_lmk, p.lambda_reg), (0.8e-3, 1.6e-3, 3e-4));
        assert_eq!(LossWeights::preset("prdl-only").unwrap().lambda_lmk, 0.0);
        assert!(LossWeights::preset("nope").is_err());
        assert_eq!(FitConfig::default().lr, 1e-4);
        assert_eq!(FitConfig::default().skin_cap, 3000);
    }

    #[test]
    fn zero_weights_give_zero_loss_and_gradient() {
        let t = gen_toy_model(1, 120, 3, 2).unwrap();
        let cam = toy_camera(64, 64);
        let targets = exact_targets(&t.model, &cam, &t.truth, 64, 64);
        let cfg = small_config();
        let problem = FitProblem::new(targets, None, LandmarkSet::default(), &cfg).unwrap();
        let w = LossWeights {
            lambda_prdl: 0.0,
            lambda_lmk: 0.0,
            lambda_reg: 0.0,
            ..LossWeights::standard()
        };
        let e = total_loss(&t.model, &cam, &t.model.zero_params(), &problem, &w, &cfg).unwrap();
        assert_eq!(e.total, 0.0);
        assert!(e.gradient.iter().all(|g| *g == 0.0));
    }

    #[test]
    fn ground_truth_with_exact_targets_is_stationary() {
        let t = gen_toy_model(2, 150, 3, 2).unwrap();
        let cam = toy_camera(64, 64);
        let targets = exact_targets(&t.model, &cam, &t.truth, 64, 64);
        let cfg = small_config();
        let problem = FitProblem::new(targets, None, LandmarkSet::default(), &cfg).unwrap();
        let w = LossWeights {
            lambda_reg: 0.0,
            ..LossWeights::prdl_only()
        };
        let e = total_loss(&t.model, &cam, &t.truth, &problem, &w, &cfg).unwrap();
        assert!(e.total.abs() < 1e-20);
        let report = fit(&t.model, &cam, &problem, &cfg, &w, &t.truth).unwrap();
        assert_eq!(report.termination, Termination::Converged);
        assert!(report.iterations.len() <= cfg.patience + 1);
        for (a, b) in report.final_params.to_vec().iter().zip(t.truth.to_vec()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn total_gradient_matches_finite_differences() {
        let t = gen_toy_model(3, 150, 3, 2).unwrap();
        let cam = toy_camera(64, 64);
        let targets = exact_targets(&t.model, &cam, &t.truth, 64, 64);
        for loss in GeometricLoss::ALL {
            let cfg = FitConfig { loss, ..small_config() };
            let lm = LandmarkSet {
                landmarks: vec![Landmark {
                    vertex: 3,
                    position: Point2::new(30.0, 31.0),
                }],
            };
            let problem = FitProblem::new(targets.clone(), None, lm, &cfg).unwrap();
            let w = LossWeights::standard();
            let mut p = t.model.zero_params();
            p.id[0] = 0.3;
            p.angles = [0.05, -0.04, 0.02];
            p.translation = [0.05, -0.03, 0.0];
            let base = total_loss(&t.model, &cam, &p, &problem, &w, &cfg).unwrap();
            let x = p.to_vec();
            let h = 1e-6;
            let mut num = 0.0f64;
            let mut den = 0.0f64;
            for c in 0..x.len() {
                let at = |d: f64| {
                    let mut v = x.clone();
                    v[c] += d;
                    let q = ShapeParams::from_slice(3, 2, &v).unwrap();
                    total_loss(&t.model, &cam, &q, &problem, &w, &cfg).unwrap().total
                };
                let fd = (at(h) - at(-h)) / (2.0 * h);
                num = num.max((fd - base.gradient[c]).abs());
                den = den.max(fd.abs());
            }
            assert!(num / den < 1e-4, "{}: relative error {}", loss.name(), num / den);
        }
    }

    #[test]
    fn empty_target_part_is_excluded() {
        let t = gen_toy_model(4, 150, 3, 2).unwrap();
        let cam = toy_camera(64, 64);
        let mut targets = exact_targets(&t.model, &cam, &t.truth, 64, 64);
        targets.sets.insert(PartLabel::Nose, PointSet::empty());
        let cfg = FitConfig {
            max_iters: 30,
            ..small_config()
        };
        let problem = FitProblem::new(targets, None, LandmarkSet::default(), &cfg).unwrap();
        let r = fit(&t.model, &cam, &problem, &cfg, &LossWeights::prdl_only(), &t.model.zero_params()).unwrap();
        assert_ne!(r.termination, Termination::NumericalAbort);
        assert!(r.iterations.iter().all(|i| i.total.is_finite()));
        assert!(problem.target_descriptor(PartLabel::Nose).is_none());
    }

    #[test]
    fn nothing_to_fit() {
        let t = gen_toy_model(4, 50, 1, 1).unwrap();
        let cam = toy_camera(32, 32);
        let targets = Targets {
            sets: PartPointSets::new(32, 32),
            masks: BTreeMap::new(),
        };
        let cfg = small_config();
        let problem = FitProblem::new(targets, None, LandmarkSet::default(), &cfg).unwrap();
        let r = fit(&t.model, &cam, &problem, &cfg, &LossWeights::standard(), &t.model.zero_params());
        assert!(matches!(r, Err(Error::NothingToFit)));
    }

    #[test]
    fn decomposition_sums_to_total() {
        let t = gen_toy_model(5, 150, 3, 2).unwrap();
        let cam = toy_camera(64, 64);
        let targets = exact_targets(&t.model, &cam, &t.truth, 64, 64);
        let cfg = FitConfig {
            max_iters: 15,
            ..small_config()
        };
        let problem = FitProblem::new(targets, None, LandmarkSet::default(), &cfg).unwrap();
        let w = LossWeights::standard();
        let r = fit(&t.model, &cam, &problem, &cfg, &w, &t.model.zero_params()).unwrap();
        for it in &r.iterations {
            let sum = w.lambda_prdl * it.prdl + w.lambda_lmk * it.lmk + w.lambda_reg * it.reg;
            assert!((sum - it.total).abs() <= 1e-9 * it.total.abs().max(1e-300));
        }
        let again = fit(&t.model, &cam, &problem, &cfg, &w, &t.model.zero_params()).unwrap();
        assert_eq!(r.iterations, again.iterations);
        assert_eq!(r.final_params, again.final_params);
    }
}
