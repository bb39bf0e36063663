//! Point-set rasterization and the per-part IoU metric.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::geometry::{Point2, PointSet};
use crate::ingest::{LabelMap, Manifest, PartMask};
use crate::model::{BlendshapeModel, Camera, Posed, ShapeParams};
use crate::part::PartLabel;

/// Splats each point as a filled disc (pixels within `radius`, plus the
/// pixel the point rounds to), then applies one 3x3 closing. Points outside
/// the image are clipped.
pub fn rasterize_points(set: &[Point2], width: usize, height: usize, radius: f64) -> Result<PartMask> {
    if !(radius >= 0.0) {
        return Err(invalid(format!("splat radius must be non-negative, got {radius}")));
    }
    let mut mask = PartMask::new(width, height)?;
    if set.is_empty() {
        return Ok(mask);
    }
    let (wf, hf) = (width as f64, height as f64);
    let mark = |x: f64, y: f64, mask: &mut PartMask| {
        if x >= 0.0 && y >= 0.0 && x < wf && y < hf {
            mask.set(x as usize, y as usize, true);
        }
    };
    let r2 = radius * radius;
    for p in set {
        mark(p.x.round(), p.y.round(), &mut mask);
        let (x0, x1) = ((p.x - radius).ceil(), (p.x + radius).floor());
        let (y0, y1) = ((p.y - radius).ceil(), (p.y + radius).floor());
        let mut y = y0;
        while y <= y1 {
            let mut x = x0;
            while x <= x1 {
                if p.distance_sq(Point2::new(x, y)) <= r2 {
                    mark(x, y, &mut mask);
                }
                x += 1.0;
            }
            y += 1.0;
        }
    }
    Ok(close3(&mask))
}

/// 3x3 closing computed on a canvas padded by one pixel, so pixels near the
/// border neither gain from nor lose to the outside.
fn close3(mask: &PartMask) -> PartMask {
    let (w, h) = (mask.width() as isize, mask.height() as isize);
    let (pw, ph) = (w + 2, h + 2);
    // dilated[(y + 1) * pw + (x + 1)] covers x in -1..=w, y in -1..=h
    let mut dilated = vec![false; (pw * ph) as usize];
    for y in -1..=h {
        for x in -1..=w {
            let mut any = false;
            for dy in -1..=1 {
                for dx in -1..=1 {
                    let (sx, sy) = (x + dx, y + dy);
                    any |= sx >= 0 && sy >= 0 && sx < w && sy < h && mask.get(sx as usize, sy as usize);
                }
            }
            dilated[((y + 1) * pw + x + 1) as usize] = any;
        }
    }
    let mut out = PartMask::new(w as usize, h as usize).expect("same size");
    for y in 0..h {
        for x in 0..w {
            let all = (-1..=1).all(|dy| (-1..=1).all(|dx| dilated[((y + 1 + dy) * pw + x + 1 + dx) as usize]));
            out.set(x as usize, y as usize, all);
        }
    }
    out
}

/// `|A ∩ B| / |A ∪ B|`; two empty masks agree perfectly (1).
pub fn part_iou(pred: &PartMask, gt: &PartMask) -> Result<f64> {
    if pred.width() != gt.width() || pred.height() != gt.height() {
        return Err(invalid(format!(
            "mask sizes differ: {}x{} vs {}x{}",
            pred.width(),
            pred.height(),
            gt.width(),
            gt.height()
        )));
    }
    let mut inter = 0usize;
    let mut union = 0usize;
    for (&a, &b) in pred.bits().iter().zip(gt.bits()) {
        inter += (a && b) as usize;
        union += (a || b) as usize;
    }
    Ok(if union == 0 { 1.0 } else { inter as f64 / union as f64 })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IoUReport {
    pub per_part: BTreeMap<PartLabel, f64>,
    /// Mean over parts whose ground truth is non-empty.
    pub mean: f64,
    pub width: usize,
    pub height: usize,
}

pub fn iou_report(pred: &BTreeMap<PartLabel, PartMask>, gt: &BTreeMap<PartLabel, PartMask>) -> Result<IoUReport> {
    let mut per_part = BTreeMap::new();
    let mut sum = 0.0;
    let mut counted = 0usize;
    let (mut width, mut height) = (0, 0);
    for (part, g) in gt {
        let empty;
        let p = match pred.get(part) {
            Some(p) => p,
            None => {
                empty = PartMask::new(g.width(), g.height())?;
                &empty
            }
        };
        let iou = part_iou(p, g)?;
        (width, height) = (g.width(), g.height());
        per_part.insert(*part, iou);
        if !g.is_empty() {
            sum += iou;
            counted += 1;
        }
    }
    Ok(IoUReport {
        per_part,
        mean: if counted == 0 { 1.0 } else { sum / counted as f64 },
        width,
        height,
    })
}

/// Paints rasterized parts into a label map: skin first, then the features
/// in code order so they overwrite skin where they overlap.
pub fn render_label_map(
    model: &BlendshapeModel,
    camera: &Camera,
    params: &ShapeParams,
    width: usize,
    height: usize,
    radius: f64,
) -> Result<LabelMap> {
    let posed = Posed::new(model, camera, params)?;
    let mut map = LabelMap::new(width, height)?;
    let order = std::iter::once(PartLabel::Skin).chain(PartLabel::ALL.iter().copied().filter(|p| *p != PartLabel::Skin));
    for part in order {
        let pts: Vec<Point2> = model.part_indices(part).iter().map(|&i| posed.points[i]).collect();
        if pts.is_empty() {
            continue;
        }
        let mask = rasterize_points(&pts, width, height, radius)?;
        map.paint(&mask, part.code())?;
    }
    Ok(map)
}

/// Part masks of the model rendered at `params`, built the same way as the
/// toy ground truth.
pub fn predicted_masks(
    model: &BlendshapeModel,
    camera: &Camera,
    params: &ShapeParams,
    width: usize,
    height: usize,
    radius: f64,
) -> Result<BTreeMap<PartLabel, PartMask>> {
    render_label_map(model, camera, params, width, height, radius)?.part_masks(&Manifest::standard(width, height))
}

pub fn rasterize_set(set: &PointSet, width: usize, height: usize, radius: f64) -> Result<PartMask> {
    rasterize_points(set.points(), width, height, radius)
}
