//! Transfer of 2D part segmentation onto model vertices: every target pixel
//! votes for its `k` nearest visible projected vertices.

use std::collections::BTreeMap;

use super::{mat_vec, rotation_matrix, BlendshapeModel, Camera, Posed, ShapeParams};
use crate::error::{format_err, Error, Result};
use crate::geometry::{Point2, PointSet, SpatialIndex};
use crate::ingest::PartPointSets;
use crate::part::PartLabel;

/// Annotates the model from target point sets rendered with `params`.
/// A vertex is visible iff its rotated depth is at least the median depth
/// over all vertices minus `visibility_slack`.
pub fn annotate_parts(
    model: &BlendshapeModel,
    camera: &Camera,
    params: &ShapeParams,
    targets: &PartPointSets,
    k: usize,
    visibility_slack: f64,
) -> Result<BTreeMap<PartLabel, Vec<usize>>> {
    let posed = Posed::new(model, camera, params)?;
    let r = rotation_matrix(params.angles);
    let depth: Vec<f64> = posed.shape.iter().map(|s| mat_vec(&r, *s)[2]).collect();
    let mut sorted = depth.clone();
    sorted.sort_by(f64::total_cmp);
    let median = sorted[sorted.len() / 2];
    let visible: Vec<bool> = depth.iter().map(|z| *z >= median - visibility_slack).collect();
    annotate_with_visibility(&posed.points, &visible, targets, k)
}

/// Core of [`annotate_parts`] over already projected vertices.
///
/// Votes are counted per (vertex, part); a vertex goes to the part with the
/// most votes, ties to the lowest part code. Vertices nobody voted for stay
/// unannotated.
pub fn annotate_with_visibility(
    projected: &[Point2],
    visible: &[bool],
    targets: &PartPointSets,
    k: usize,
) -> Result<BTreeMap<PartLabel, Vec<usize>>> {
    if targets.total_points() == 0 {
        return Err(Error::Annotation("every target part is empty".into()));
    }
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    let ids: Vec<usize> = (0..projected.len()).filter(|&i| visible[i]).collect();
    if ids.is_empty() {
        return Err(Error::Annotation("no visible vertices".into()));
    }
    let index = SpatialIndex::build(&PointSet::new(ids.iter().map(|&i| projected[i]).collect())?)?;
    let mut votes: Vec<[u32; 8]> = vec![[0; 8]; projected.len()];
    for (part, set) in targets.iter() {
        for c in set.iter() {
            for nb in index.k_nearest(*c, k) {
                votes[ids[nb.index]][part.code() as usize - 1] += 1;
            }
        }
    }
    let mut out: BTreeMap<PartLabel, Vec<usize>> = PartLabel::ALL.iter().map(|&p| (p, Vec::new())).collect();
    for (v, counts) in votes.iter().enumerate() {
        let (best, n) = counts
            .iter()
            .enumerate()
            .fold((0, 0), |acc, (i, &c)| if c > acc.1 { (i, c) } else { acc });
        if n > 0 {
            out.get_mut(&PartLabel::ALL[best]).expect("all parts present").push(v);
        }
    }
    Ok(out)
}

/// `part_code: idx idx ...`, one line per part in code order.
pub fn format_annotation(parts: &BTreeMap<PartLabel, Vec<usize>>) -> String {
    let mut s = String::new();
    for (part, idx) in parts {
        s.push_str(&part.code().to_string());
        s.push(':');
        for i in idx {
            s.push(' ');
            s.push_str(&i.to_string());
        }
        s.push('\n');
    }
    s
}

pub fn parse_annotation(text: &str) -> Result<BTreeMap<PartLabel, Vec<usize>>> {
    let mut out = BTreeMap::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (code, rest) = line
            .split_once(':')
            .ok_or_else(|| format_err(format!("annotation line {}: missing ':'", lineno + 1)))?;
        let part: PartLabel = code.trim().parse()?;
        let idx = rest
            .split_whitespace()
            .map(|t| t.parse::<usize>().map_err(|_| format_err(format!("annotation line {}: bad index '{t}'", lineno + 1))))
            .collect::<Result<Vec<_>>>()?;
        out.insert(part, idx);
    }
    Ok(out)
}
