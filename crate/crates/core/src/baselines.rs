//! Competitor geometric losses: chamfer, one-directional nearest neighbor
//! and a soft-silhouette IoU built from Gaussian point splats.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::geometry::{Point2, PointSet, SpatialIndex};
use crate::ingest::PartMask;

/// Loss value with its gradient on the prediction.
#[derive(Clone, Debug, PartialEq)]
pub struct LossEval {
    pub value: f64,
    pub grad: Vec<Point2>,
}

/// Directed loss value with gradients on both arguments.
#[derive(Clone, Debug, PartialEq)]
pub struct DirectedEval {
    pub value: f64,
    pub grad_from: Vec<Point2>,
    pub grad_to: Vec<Point2>,
}

/// Mean over `from` of the squared distance to the nearest point of `to`.
pub fn nn_loss_directed(from: &PointSet, to: &PointSet) -> Result<DirectedEval> {
    let index = SpatialIndex::build(to)?;
    nn_directed_indexed(from.points(), &index)
}

pub(crate) fn nn_directed_indexed(from: &[Point2], to: &SpatialIndex) -> Result<DirectedEval> {
    if from.is_empty() {
        return Err(Error::EmptySet);
    }
    let n = from.len() as f64;
    let mut value = 0.0;
    let mut grad_from = Vec::with_capacity(from.len());
    let mut grad_to = vec![Point2::ZERO; to.len()];
    for &v in from {
        let nb = to.nearest(v);
        let c = to.points()[nb.index];
        value += v.distance_sq(c);
        let g = (v - c) * (2.0 / n);
        grad_from.push(g);
        grad_to[nb.index] += g * -1.0;
    }
    Ok(DirectedEval {
        value: value / n,
        grad_from,
        grad_to,
    })
}

/// Bidirectional chamfer: the sum of both directed losses; gradient on `pred`.
pub fn chamfer_loss(pred: &PointSet, target: &PointSet) -> Result<LossEval> {
    let t_index = SpatialIndex::build(target)?;
    chamfer_indexed(pred.points(), &t_index)
}

pub(crate) fn chamfer_indexed(pred: &[Point2], target: &SpatialIndex) -> Result<LossEval> {
    let fwd = nn_directed_indexed(pred, target)?;
    let p_index = SpatialIndex::build(&PointSet::new(pred.to_vec())?)?;
    let bwd = nn_directed_indexed(target.points(), &p_index)?;
    let grad = fwd.grad_from.iter().zip(&bwd.grad_to).map(|(a, b)| *a + *b).collect();
    Ok(LossEval {
        value: fwd.value + bwd.value,
        grad,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SoftSilhouetteConfig {
    /// Occupancy falloff in pixels.
    pub sigma: f64,
}

impl Default for SoftSilhouetteConfig {
    fn default() -> Self {
        SoftSilhouetteConfig { sigma: 1.5 }
    }
}

/// Splats are evaluated only where `‖q − v‖² ≤ CUTOFF σ²`; beyond that
/// `1 − exp(−d²/σ²)` already rounds to exactly 1.
const CUTOFF: f64 = 50.0;

fn window(v: Point2, radius: f64, width: usize, height: usize) -> Option<(usize, usize, usize, usize)> {
    let x0 = (v.x - radius).ceil().max(0.0);
    let x1 = (v.x + radius).floor().min(width as f64 - 1.0);
    let y0 = (v.y - radius).ceil().max(0.0);
    let y1 = (v.y + radius).floor().min(height as f64 - 1.0);
    if x0 > x1 || y0 > y1 {
        return None;
    }
    Some((x0 as usize, x1 as usize, y0 as usize, y1 as usize))
}

/// Per-pixel occupancy `o(q) = 1 − Π_v (1 − exp(−‖q − v‖² / σ²))`.
pub fn soft_occupancy(pred: &[Point2], width: usize, height: usize, sigma: f64) -> Vec<f64> {
    let (prod, zeros) = products(pred, width, height, sigma);
    prod.iter().zip(&zeros).map(|(p, &z)| if z > 0 { 1.0 } else { 1.0 - p }).collect()
}

/// Product of the non-zero `(1 − g)` factors per pixel and the number of
/// exactly-zero factors.
fn products(pred: &[Point2], width: usize, height: usize, sigma: f64) -> (Vec<f64>, Vec<u32>) {
    let s2 = sigma * sigma;
    let radius = (CUTOFF * s2).sqrt();
    let mut prod = vec![1.0; width * height];
    let mut zeros = vec![0u32; width * height];
    for &v in pred {
        let Some((x0, x1, y0, y1)) = window(v, radius, width, height) else {
            continue;
        };
        for y in y0..=y1 {
            for x in x0..=x1 {
                let d2 = v.distance_sq(Point2::new(x as f64, y as f64));
                let f = -(-d2 / s2).exp_m1();
                let q = y * width + x;
                if f == 0.0 {
                    zeros[q] += 1;
                } else {
                    prod[q] *= f;
                }
            }
        }
    }
    (prod, zeros)
}

/// `1 − softIoU(o, target)`, where `softIoU = Σ o t / Σ (o + t − o t)`.
/// An empty target mask gives loss 1 with zero gradient.
pub fn soft_silhouette_iou_loss(pred: &PointSet, target: &PartMask, cfg: &SoftSilhouetteConfig) -> Result<LossEval> {
    soft_silhouette_slice(pred.points(), target, cfg)
}

pub(crate) fn soft_silhouette_slice(pred: &[Point2], target: &PartMask, cfg: &SoftSilhouetteConfig) -> Result<LossEval> {
    if pred.is_empty() {
        return Err(Error::EmptySet);
    }
    if !(cfg.sigma > 0.0 && cfg.sigma.is_finite()) {
        return Err(invalid(format!("sigma must be positive, got {}", cfg.sigma)));
    }
    if target.is_empty() {
        return Ok(LossEval {
            value: 1.0,
            grad: vec![Point2::ZERO; pred.len()],
        });
    }
    let (w, h) = (target.width(), target.height());
    let (prod, zeros) = products(pred, w, h, cfg.sigma);
    let t = target.bits();
    let mut inter = 0.0;
    let mut union = 0.0;
    let occ: Vec<f64> = prod.iter().zip(&zeros).map(|(p, &z)| if z > 0 { 1.0 } else { 1.0 - p }).collect();
    for (o, &tb) in occ.iter().zip(t) {
        let tv = if tb { 1.0 } else { 0.0 };
        inter += o * tv;
        union += o + tv - o * tv;
    }
    let iou = inter / union;
    // dL/do(q) = −(t U − I (1 − t)) / U²
    let u2 = union * union;
    let s2 = cfg.sigma * cfg.sigma;
    let radius = (CUTOFF * s2).sqrt();
    let mut grad = vec![Point2::ZERO; pred.len()];
    for (g, &v) in grad.iter_mut().zip(pred) {
        let Some((x0, x1, y0, y1)) = window(v, radius, w, h) else {
            continue;
        };
        for y in y0..=y1 {
            for x in x0..=x1 {
                let q = y * w + x;
                let tv = if t[q] { 1.0 } else { 0.0 };
                let dl_do = -(tv * union - inter * (1.0 - tv)) / u2;
                let qp = Point2::new(x as f64, y as f64);
                let d2 = v.distance_sq(qp);
                let e = (-d2 / s2).exp();
                let f = -(-d2 / s2).exp_m1();
                // Product of the other points' factors.
                let others = if f == 0.0 {
                    if zeros[q] == 1 { prod[q] } else { 0.0 }
                } else if zeros[q] > 0 {
                    0.0
                } else {
                    prod[q] / f
                };
                // do/dv = others · dg/dv, dg/dv = −2 g (v − q) / σ²
                let k = dl_do * others * (-2.0 * e / s2);
                *g += (v - qp) * k;
            }
        }
    }
    Ok(LossEval { value: 1.0 - iou, grad })
}
