//! Benchmark scenarios and the loss-comparison and distance-function
//! ablation harnesses.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::fitting::{fit, total_loss, FitConfig, FitProblem, FitReport, GeometricLoss, LossWeights};
use crate::ingest::{prepare_targets, Landmark, LabelMap, LandmarkSet, Manifest, Preprocess};
use crate::metrics::render_label_map;
use crate::model::{gen_toy_model, toy_camera, BlendshapeModel, Camera, PartFilter, Posed, ShapeParams, Vec3};
use crate::part::PartLabel;
use crate::prdl::{DistanceFn, DistanceFunctionSet};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScenarioKind {
    /// Toy face rendered at a sampled ground truth, fit from the mean face.
    Toy,
    /// A single disc whose target sits `displacement` sigmas away.
    DisplacedDisc,
    /// Disc whose target has a second, smaller cluster lying between the
    /// init and the true position.
    Decoy,
}

/// Everything needed to build a battery of scenario instances.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioSpec {
    pub kind: ScenarioKind,
    pub seeds: Vec<u64>,
    pub width: usize,
    pub height: usize,
    pub n_vertices: usize,
    pub k_id: usize,
    pub k_exp: usize,
    /// Soft-silhouette sigma in pixels; also the displacement unit.
    pub sigma: f64,
    pub displacement: f64,
    /// `default` or `prdl-only`.
    pub weights: String,
    pub losses: Vec<GeometricLoss>,
    pub preprocess: Preprocess,
    pub fit: FitConfig,
}

impl Default for ScenarioSpec {
    fn default() -> Self {
        ScenarioSpec::toy()
    }
}

fn scenario_fit_config() -> FitConfig {
    FitConfig {
        max_iters: 2000,
        lr: 3e-2,
        lr_final: Some(5e-4),
        anchor_count: Some(512),
        filter: PartFilter {
            occlusion_radius: None,
            ..PartFilter::default()
        },
        ..FitConfig::default()
    }
}

impl ScenarioSpec {
    pub fn toy() -> Self {
        ScenarioSpec {
            kind: ScenarioKind::Toy,
            seeds: (0..20).collect(),
            width: 128,
            height: 128,
            n_vertices: 600,
            k_id: 8,
            k_exp: 6,
            sigma: 1.5,
            displacement: 20.0,
            weights: "prdl-only".into(),
            losses: vec![GeometricLoss::Prdl, GeometricLoss::Chamfer, GeometricLoss::NnPredToTarget, GeometricLoss::NnTargetToPred],
            preprocess: Preprocess {
                min_area: 4,
                ..Preprocess::default()
            },
            fit: scenario_fit_config(),
        }
    }

    pub fn displaced_disc() -> Self {
        ScenarioSpec {
            kind: ScenarioKind::DisplacedDisc,
            seeds: vec![0],
            losses: vec![GeometricLoss::Prdl, GeometricLoss::SoftSilhouette],
            ..ScenarioSpec::toy()
        }
    }

    pub fn decoy() -> Self {
        ScenarioSpec {
            kind: ScenarioKind::Decoy,
            seeds: (0..10).collect(),
            losses: vec![GeometricLoss::Prdl, GeometricLoss::NnPredToTarget, GeometricLoss::NnTargetToPred, GeometricLoss::Chamfer],
            ..ScenarioSpec::toy()
        }
    }

    pub fn for_kind(kind: ScenarioKind) -> Self {
        match kind {
            ScenarioKind::Toy => Self::toy(),
            ScenarioKind::DisplacedDisc => Self::displaced_disc(),
            ScenarioKind::Decoy => Self::decoy(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(invalid("scenario needs at least one seed"));
        }
        if self.width < 16 || self.height < 16 {
            return Err(invalid("scenario images must be at least 16x16"));
        }
        if !(self.sigma > 0.0) {
            return Err(invalid("sigma must be positive"));
        }
        LossWeights::preset(&self.weights)?;
        self.fit.validate()
    }

    pub fn build(&self, seed: u64) -> Result<Scenario> {
        self.validate()?;
        let mut s = match self.kind {
            ScenarioKind::Toy => toy_scenario(seed, self)?,
            ScenarioKind::DisplacedDisc => disc_scenario(seed, self)?,
            ScenarioKind::Decoy => decoy_scenario(seed, self)?,
        };
        s.config.seed = seed;
        Ok(s)
    }

    pub fn build_all(&self) -> Result<Vec<Scenario>> {
        self.seeds.iter().map(|&s| self.build(s)).collect()
    }
}

/// One concrete fitting problem with known ground truth.
#[derive(Clone, Debug)]
pub struct Scenario {
    pub kind: ScenarioKind,
    pub seed: u64,
    pub model: BlendshapeModel,
    pub camera: Camera,
    pub width: usize,
    pub height: usize,
    pub truth: ShapeParams,
    pub init: ShapeParams,
    pub label_map: LabelMap,
    pub landmarks: LandmarkSet,
    pub preprocess: Preprocess,
    pub config: FitConfig,
    pub weights: LossWeights,
}

impl Scenario {
    pub fn problem(&self, config: &FitConfig) -> Result<FitProblem> {
        let manifest = Manifest::standard(self.width, self.height);
        let targets = prepare_targets(&self.label_map, &manifest, &self.preprocess)?;
        let eval = self.label_map.part_masks(&manifest)?;
        FitProblem::new(targets, Some(eval), self.landmarks.clone(), config)
    }

    pub fn run(&self, config: &FitConfig) -> Result<FitReport> {
        let problem = self.problem(config)?;
        fit(&self.model, &self.camera, &problem, config, &self.weights, &self.init)
    }

    pub fn run_with(&self, loss: GeometricLoss, functions: &DistanceFunctionSet) -> Result<FitReport> {
        let cfg = FitConfig {
            loss,
            functions: functions.clone(),
            ..self.config.clone()
        };
        self.run(&cfg)
    }

    /// Euclidean norm of the objective's parameter gradient at `init`.
    pub fn initial_gradient_norm(&self, config: &FitConfig) -> Result<f64> {
        let problem = self.problem(config)?;
        let e = total_loss(&self.model, &self.camera, &self.init, &problem, &self.weights, config)?;
        Ok(e.gradient.iter().map(|g| g * g).sum::<f64>().sqrt())
    }
}

fn landmarks_at(model: &BlendshapeModel, camera: &Camera, params: &ShapeParams) -> Result<LandmarkSet> {
    let posed = Posed::new(model, camera, params)?;
    Ok(LandmarkSet {
        landmarks: model
            .landmarks()
            .iter()
            .map(|&v| Landmark {
                vertex: v,
                position: posed.points[v],
            })
            .collect(),
    })
}

fn finish(
    kind: ScenarioKind,
    seed: u64,
    spec: &ScenarioSpec,
    model: BlendshapeModel,
    camera: Camera,
    truth: ShapeParams,
) -> Result<Scenario> {
    let label_map = render_label_map(&model, &camera, &truth, spec.width, spec.height, spec.fit.splat_radius)?;
    let landmarks = landmarks_at(&model, &camera, &truth)?;
    let init = model.zero_params();
    Ok(Scenario {
        kind,
        seed,
        camera,
        width: spec.width,
        height: spec.height,
        truth,
        init,
        label_map,
        landmarks,
        preprocess: spec.preprocess.clone(),
        config: spec.fit.clone(),
        weights: LossWeights::preset(&spec.weights)?,
        model,
    })
}

fn toy_scenario(seed: u64, spec: &ScenarioSpec) -> Result<Scenario> {
    let toy = gen_toy_model(seed, spec.n_vertices, spec.k_id, spec.k_exp)?;
    let camera = toy_camera(spec.width, spec.height);
    finish(ScenarioKind::Toy, seed, spec, toy.model, camera, toy.truth)
}

fn sunflower_disc(count: usize, center: (f64, f64), radius: f64) -> Vec<Vec3> {
    const GOLDEN_ANGLE: f64 = 2.399_963_229_728_653;
    (0..count)
        .map(|i| {
            let r = radius * ((i as f64 + 0.5) / count as f64).sqrt();
            let t = i as f64 * GOLDEN_ANGLE;
            [center.0 + r * t.cos(), center.1 + r * t.sin(), 0.0]
        })
        .collect()
}

/// Flat cluster model labelled as one part, with a small uniform-scale
/// identity column and a horizontal-stretch expression column.
fn cluster_model(mean: Vec<Vec3>) -> Result<BlendshapeModel> {
    let n = mean.len();
    let cx = mean.iter().map(|v| v[0]).sum::<f64>() / n as f64;
    let cy = mean.iter().map(|v| v[1]).sum::<f64>() / n as f64;
    let mut id = vec![0.0; 3 * n];
    let mut exp = vec![0.0; 3 * n];
    for (i, v) in mean.iter().enumerate() {
        id[3 * i] = 0.05 * (v[0] - cx);
        id[3 * i + 1] = 0.05 * (v[1] - cy);
        exp[3 * i] = 0.05 * (v[0] - cx);
    }
    let mut parts = BTreeMap::new();
    parts.insert(PartLabel::Nose, (0..n).collect());
    BlendshapeModel::new(mean, id, 1, exp, 1, parts, Vec::new())
}

/// Pixels per model unit for the synthetic cluster scenarios.
const CLUSTER_SCALE: f64 = 10.0;

/// Camera centred so that the init (model origin) and the target, `shift`
/// model units away, sit symmetrically about the image centre.
fn centered_camera(spec: &ScenarioSpec, shift: (f64, f64)) -> Camera {
    let s = CLUSTER_SCALE;
    Camera::orthographic(
        s,
        spec.width as f64 / 2.0 - s * shift.0 / 2.0,
        spec.height as f64 / 2.0 + s * shift.1 / 2.0,
    )
}

/// Range of the init-to-target distance in the decoy scenario, model units.
const DECOY_DISTANCE: (f64, f64) = (2.6, 3.4);

fn disc_scenario(seed: u64, spec: &ScenarioSpec) -> Result<Scenario> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let model = cluster_model(sunflower_disc(150, (0.0, 0.0), 0.8))?;
    let theta = rng.random_range(0.0..2.0 * PI);
    let dist = spec.displacement * spec.sigma / CLUSTER_SCALE;
    let shift = (dist * theta.cos(), dist * theta.sin());
    let mut truth = model.zero_params();
    truth.translation = [shift.0, shift.1, 0.0];
    let camera = centered_camera(spec, shift);
    finish(ScenarioKind::DisplacedDisc, seed, spec, model, camera, truth)
}

fn decoy_scenario(seed: u64, spec: &ScenarioSpec) -> Result<Scenario> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let theta = rng.random_range(0.0..2.0 * PI);
    let dist = rng.random_range(DECOY_DISTANCE.0..DECOY_DISTANCE.1);
    let along = rng.random_range(0.35..0.5) * dist;
    let across = rng.random_range(-0.2..0.2);
    let decoy_radius = rng.random_range(0.35..0.45);
    let dir = (theta.cos(), theta.sin());
    let model = cluster_model(sunflower_disc(150, (0.0, 0.0), 0.8))?;
    let shift = (dist * dir.0, dist * dir.1);
    let mut truth = model.zero_params();
    truth.translation = [shift.0, shift.1, 0.0];
    let camera = centered_camera(spec, shift);
    let mut sc = finish(ScenarioKind::Decoy, seed, spec, model, camera, truth)?;

    let c = (along * dir.0 - across * dir.1, along * dir.1 + across * dir.0);
    let decoy: Vec<crate::geometry::Point2> = sunflower_disc(40, c, decoy_radius)
        .into_iter()
        .map(|v| sc.camera.project_point(v))
        .collect::<Result<_>>()?;
    let mask = crate::metrics::rasterize_points(&decoy, sc.width, sc.height, spec.fit.splat_radius)?;
    sc.label_map.paint(&mask, PartLabel::Nose.code())?;
    Ok(sc)
}

/// One (scenario, loss) run in a comparison.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub seed: u64,
    pub loss: GeometricLoss,
    pub final_mean_iou: f64,
    pub final_total: f64,
    pub iterations: usize,
    pub initial_gradient_norm: f64,
    pub termination: crate::fitting::Termination,
    #[serde(skip)]
    pub wall_time_s: f64,
    #[serde(skip)]
    pub curve: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub kind: ScenarioKind,
    pub rows: Vec<ComparisonRow>,
}

impl ComparisonTable {
    pub fn rows_for(&self, loss: GeometricLoss) -> Vec<&ComparisonRow> {
        self.rows.iter().filter(|r| r.loss == loss).collect()
    }

    /// Mean of the final IoU per loss, in first-appearance order.
    pub fn mean_iou_by_loss(&self) -> Vec<(GeometricLoss, f64)> {
        let mut order: Vec<GeometricLoss> = Vec::new();
        for r in &self.rows {
            if !order.contains(&r.loss) {
                order.push(r.loss);
            }
        }
        order
            .into_iter()
            .map(|l| {
                let rows = self.rows_for(l);
                (l, rows.iter().map(|r| r.final_mean_iou).sum::<f64>() / rows.len() as f64)
            })
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("seed,loss,final_mean_iou,final_total,iterations,initial_gradient_norm,termination\n");
        for r in &self.rows {
            s.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                r.seed,
                r.loss.name(),
                r.final_mean_iou,
                r.final_total,
                r.iterations,
                r.initial_gradient_norm,
                serde_json::to_value(r.termination).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default()
            ));
        }
        s
    }
}

fn pool(jobs: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| invalid(format!("cannot start worker pool: {e}")))
}

/// Runs every loss on every scenario under identical init, config and seed.
/// Rows come out ordered by scenario, then by the order of `losses`.
pub fn run_loss_comparison(scenarios: &[Scenario], losses: &[GeometricLoss], jobs: usize) -> Result<ComparisonTable> {
    let kind = scenarios.first().ok_or_else(|| invalid("no scenarios"))?.kind;
    let tasks: Vec<(usize, GeometricLoss)> = (0..scenarios.len()).flat_map(|i| losses.iter().map(move |&l| (i, l))).collect();
    let rows = pool(jobs)?.install(|| {
        tasks
            .par_iter()
            .map(|&(i, loss)| {
                let sc = &scenarios[i];
                let cfg = FitConfig {
                    loss,
                    ..sc.config.clone()
                };
                let grad = sc.initial_gradient_norm(&cfg)?;
                let report = sc.run(&cfg)?;
                Ok(ComparisonRow {
                    seed: sc.seed,
                    loss,
                    final_mean_iou: report.mean_iou(),
                    final_total: report.final_total(),
                    iterations: report.iterations.len(),
                    initial_gradient_norm: grad,
                    termination: report.termination,
                    wall_time_s: report.wall_time_s,
                    curve: report.iterations.iter().map(|r| r.total).collect(),
                })
            })
            .collect::<Result<Vec<_>>>()
    })?;
    Ok(ComparisonTable { kind, rows })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub functions: DistanceFunctionSet,
    pub mean_iou: f64,
    pub per_seed: Vec<(u64, f64)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub fn variants() -> [DistanceFunctionSet; 4] {
        [
            DistanceFunctionSet::single(DistanceFn::Min),
            DistanceFunctionSet::single(DistanceFn::Max),
            DistanceFunctionSet::single(DistanceFn::Ave),
            DistanceFunctionSet::all(),
        ]
    }

    pub fn row(&self, f: &DistanceFunctionSet) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.functions == *f)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("functions,mean_iou");
        if let Some(first) = self.rows.first() {
            for (seed, _) in &first.per_seed {
                s.push_str(&format!(",seed_{seed}"));
            }
        }
        s.push('\n');
        for r in &self.rows {
            s.push_str(&format!("\"{}\",{}", r.functions.names(), r.mean_iou));
            for (_, v) in &r.per_seed {
                s.push_str(&format!(",{v}"));
            }
            s.push('\n');
        }
        s
    }
}

/// PRDL fits with `{min}`, `{max}`, `{ave}` and `{min, max, ave}`.
pub fn run_distance_ablation(scenarios: &[Scenario], jobs: usize) -> Result<AblationTable> {
    if scenarios.is_empty() {
        return Err(invalid("no scenarios"));
    }
    let variants = AblationTable::variants();
    let tasks: Vec<(usize, usize)> = (0..variants.len()).flat_map(|v| (0..scenarios.len()).map(move |i| (v, i))).collect();
    let ious = pool(jobs)?.install(|| {
        tasks
            .par_iter()
            .map(|&(v, i)| Ok(scenarios[i].run_with(GeometricLoss::Prdl, &variants[v])?.mean_iou()))
            .collect::<Result<Vec<f64>>>()
    })?;
    let rows = variants
        .iter()
        .enumerate()
        .map(|(v, f)| {
            let per_seed: Vec<(u64, f64)> = scenarios
                .iter()
                .enumerate()
                .map(|(i, sc)| (sc.seed, ious[v * scenarios.len() + i]))
                .collect();
            AblationRow {
                functions: f.clone(),
                mean_iou: per_seed.iter().map(|p| p.1).sum::<f64>() / per_seed.len() as f64,
                per_seed,
            }
        })
        .collect();
    Ok(AblationTable { rows })
}
