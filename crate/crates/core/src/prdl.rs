//! Part re-projection distance descriptors, the PRDL loss and its analytic
//! gradient with respect to the predicted points.
//!
//! For anchor `a` and point set `S`, `f_min`, `f_max` and `f_ave` are the
//! nearest, furthest and mean Euclidean distance from `a` to `S`. The
//! descriptor of `S` stacks these over every anchor (`|A| x |F|`, row-major).

use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{format_err, invalid, Error, Result};
use crate::geometry::{farthest_point_indices, Point2, PointSet};

/// Distance below which `1/d` is clamped to `1/EPSILON`.
pub const EPSILON: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DistanceFn {
    Min,
    Max,
    Ave,
}

impl DistanceFn {
    pub fn name(self) -> &'static str {
        match self {
            DistanceFn::Min => "min",
            DistanceFn::Max => "max",
            DistanceFn::Ave => "ave",
        }
    }
}

impl FromStr for DistanceFn {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "min" => Ok(DistanceFn::Min),
            "max" => Ok(DistanceFn::Max),
            "ave" | "avg" | "mean" => Ok(DistanceFn::Ave),
            other => Err(invalid(format!("unknown distance function '{other}'"))),
        }
    }
}

/// Non-empty subset of `{min, max, ave}`, always stored in that order.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<DistanceFn>", into = "Vec<DistanceFn>")]
pub struct DistanceFunctionSet {
    fns: Vec<DistanceFn>,
}

impl DistanceFunctionSet {
    pub fn all() -> Self {
        DistanceFunctionSet {
            fns: vec![DistanceFn::Min, DistanceFn::Max, DistanceFn::Ave],
        }
    }

    pub fn single(f: DistanceFn) -> Self {
        DistanceFunctionSet { fns: vec![f] }
    }

    /// Duplicates are rejected; the input order does not matter.
    pub fn new(fns: &[DistanceFn]) -> Result<Self> {
        if fns.is_empty() {
            return Err(invalid("distance function set is empty"));
        }
        let mut sorted = fns.to_vec();
        sorted.sort();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(invalid("duplicate distance function"));
        }
        Ok(DistanceFunctionSet { fns: sorted })
    }

    pub fn functions(&self) -> &[DistanceFn] {
        &self.fns
    }

    pub fn len(&self) -> usize {
        self.fns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fns.is_empty()
    }

    pub fn position(&self, f: DistanceFn) -> Option<usize> {
        self.fns.iter().position(|&g| g == f)
    }

    pub fn contains(&self, f: DistanceFn) -> bool {
        self.position(f).is_some()
    }

    pub fn names(&self) -> String {
        self.fns.iter().map(|f| f.name()).collect::<Vec<_>>().join(",")
    }
}

impl FromStr for DistanceFunctionSet {
    type Err = Error;

    /// Comma separated names, or `all`.
    fn from_str(s: &str) -> Result<Self> {
        if s.trim() == "all" {
            return Ok(Self::all());
        }
        let fns = s.split(',').map(str::parse).collect::<Result<Vec<DistanceFn>>>()?;
        Self::new(&fns)
    }
}

impl TryFrom<Vec<DistanceFn>> for DistanceFunctionSet {
    type Error = Error;

    fn try_from(v: Vec<DistanceFn>) -> Result<Self> {
        Self::new(&v)
    }
}

impl From<DistanceFunctionSet> for Vec<DistanceFn> {
    fn from(s: DistanceFunctionSet) -> Self {
        s.fns
    }
}

/// Fixed anchor positions. `lattice` remembers the `width x height` grid
/// the anchors were drawn from.
#[derive(Clone, Debug, PartialEq)]
pub struct AnchorGrid {
    anchors: Vec<Point2>,
    lattice: (usize, usize),
    full: bool,
}

impl AnchorGrid {
    /// Every integer pixel position, row-major.
    pub fn lattice(width: usize, height: usize) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(invalid("anchor lattice must be non-empty"));
        }
        let anchors = (0..height)
            .flat_map(|y| (0..width).map(move |x| Point2::new(x as f64, y as f64)))
            .collect();
        Ok(AnchorGrid {
            anchors,
            lattice: (width, height),
            full: true,
        })
    }

    pub fn from_points(set: &PointSet, width: usize, height: usize) -> Result<Self> {
        if set.is_empty() {
            return Err(Error::EmptySet);
        }
        Ok(AnchorGrid {
            anchors: set.points().to_vec(),
            lattice: (width, height),
            full: false,
        })
    }

    /// Farthest point subsample of `k` anchors seeded at `start_index`.
    /// `k == len()` returns the grid unchanged.
    pub fn subsample(&self, k: usize, start_index: usize) -> Result<Self> {
        if k == self.anchors.len() && start_index < k {
            return Ok(self.clone());
        }
        let idx = farthest_point_indices(&self.anchors, k, start_index)?;
        Ok(AnchorGrid {
            anchors: idx.iter().map(|&i| self.anchors[i]).collect(),
            lattice: self.lattice,
            full: false,
        })
    }

    pub fn points(&self) -> &[Point2] {
        &self.anchors
    }

    pub fn len(&self) -> usize {
        self.anchors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.anchors.is_empty()
    }

    pub fn width(&self) -> usize {
        self.lattice.0
    }

    pub fn height(&self) -> usize {
        self.lattice.1
    }

    /// True when the anchors are exactly the row-major pixel lattice.
    pub fn is_full_lattice(&self) -> bool {
        self.full
    }
}

/// Row-major `|A| x |F|` descriptor.
#[derive(Clone, Debug, PartialEq)]
pub struct DescriptorTensor {
    values: Vec<f64>,
    n_anchors: usize,
    functions: DistanceFunctionSet,
}

impl DescriptorTensor {
    /// Wraps raw row-major values; non-finite or negative entries are rejected.
    pub fn from_values(n_anchors: usize, functions: DistanceFunctionSet, values: Vec<f64>) -> Result<Self> {
        if values.len() != n_anchors * functions.len() {
            return Err(invalid(format!("expected {} values, got {}", n_anchors * functions.len(), values.len())));
        }
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(invalid("descriptor values must be finite and non-negative"));
        }
        Ok(DescriptorTensor { values, n_anchors, functions })
    }

    pub fn n_anchors(&self) -> usize {
        self.n_anchors
    }

    pub fn functions(&self) -> &DistanceFunctionSet {
        &self.functions
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, anchor: usize, f: usize) -> f64 {
        self.values[anchor * self.functions.len() + f]
    }

    pub fn row(&self, anchor: usize) -> &[f64] {
        let m = self.functions.len();
        &self.values[anchor * m..(anchor + 1) * m]
    }

    /// CSV with a `#` metadata line, then `x,y,<f>..` per anchor.
    pub fn to_csv(&self, anchors: &AnchorGrid) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "# width={} height={} functions={}",
            anchors.width(),
            anchors.height(),
            self.functions.names()
        );
        let _ = writeln!(s, "x,y,{}", self.functions.names());
        for (i, a) in anchors.points().iter().enumerate() {
            let _ = write!(s, "{},{}", a.x, a.y);
            for v in self.row(i) {
                let _ = write!(s, ",{v}");
            }
            s.push('\n');
        }
        s
    }

    /// One descriptor column as an 8-bit PGM scaled so the largest value is
    /// white. Requires a full-lattice anchor grid.
    pub fn to_pgm(&self, anchors: &AnchorGrid, f: DistanceFn) -> Result<Vec<u8>> {
        if !anchors.is_full_lattice() || anchors.len() != self.n_anchors {
            return Err(invalid("image export needs the full anchor lattice"));
        }
        let j = self
            .functions
            .position(f)
            .ok_or_else(|| invalid(format!("descriptor has no {} column", f.name())))?;
        let col: Vec<f64> = (0..self.n_anchors).map(|i| self.get(i, j)).collect();
        let peak = col.iter().fold(0.0f64, |a, &b| a.max(b));
        let mut out = format!("P5\n{} {}\n255\n", anchors.width(), anchors.height()).into_bytes();
        out.extend(col.iter().map(|v| if peak > 0.0 { (v / peak * 255.0).round() as u8 } else { 0 }));
        Ok(out)
    }

    /// Parses the CSV written by [`to_csv`](Self::to_csv).
    pub fn from_csv(text: &str) -> Result<(Self, Vec<Point2>)> {
        let mut lines = text.lines().filter(|l| !l.starts_with('#'));
        let header = lines.next().ok_or_else(|| format_err("descriptor csv is empty"))?;
        let names = header
            .strip_prefix("x,y,")
            .ok_or_else(|| format_err("descriptor csv header must start with x,y"))?;
        let functions: DistanceFunctionSet = names.parse().map_err(|e| format_err(format!("{e}")))?;
        let mut values = Vec::new();
        let mut anchors = Vec::new();
        for line in lines {
            let row = line
                .split(',')
                .map(|t| t.trim().parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|_| format_err("bad number in descriptor csv"))?;
            if row.len() != 2 + functions.len() {
                return Err(format_err("wrong column count in descriptor csv"));
            }
            anchors.push(Point2::new(row[0], row[1]));
            values.extend_from_slice(&row[2..]);
        }
        Ok((
            DescriptorTensor {
                values,
                n_anchors: anchors.len(),
                functions,
            },
            anchors,
        ))
    }
}

/// Per-anchor statistics from one linear pass; `min`/`max` carry the
/// lowest index among equally distant points.
#[derive(Clone, Copy, Debug)]
struct Scan {
    min: (f64, usize),
    max: (f64, usize),
    mean: f64,
}

fn scan(points: &[Point2], a: Point2, need_mean: bool) -> Scan {
    let mut min = (f64::INFINITY, 0);
    let mut max = (f64::NEG_INFINITY, 0);
    let mut sum = 0.0;
    for (k, p) in points.iter().enumerate() {
        let d2 = p.distance_sq(a);
        if d2 < min.0 {
            min = (d2, k);
        }
        if d2 > max.0 {
            max = (d2, k);
        }
        if need_mean {
            sum += d2.sqrt();
        }
    }
    Scan {
        min: (min.0.sqrt(), min.1),
        max: (max.0.sqrt(), max.1),
        mean: sum / points.len() as f64,
    }
}

fn fill_row(row: &mut [f64], fns: &DistanceFunctionSet, s: &Scan) {
    for (slot, f) in row.iter_mut().zip(fns.functions()) {
        *slot = match f {
            DistanceFn::Min => s.min.0,
            DistanceFn::Max => s.max.0,
            DistanceFn::Ave => s.mean,
        };
    }
}

/// `Γ(i, j) = f_j(set, a_i)`.
pub fn compute_descriptor(set: &PointSet, anchors: &AnchorGrid, fns: &DistanceFunctionSet) -> Result<DescriptorTensor> {
    descriptor_of(set.points(), anchors, fns)
}

pub fn descriptor_of(points: &[Point2], anchors: &AnchorGrid, fns: &DistanceFunctionSet) -> Result<DescriptorTensor> {
    if points.is_empty() {
        return Err(Error::EmptySet);
    }
    let m = fns.len();
    let need_mean = fns.contains(DistanceFn::Ave);
    let mut values = vec![0.0; anchors.len() * m];
    for (row, &a) in values.chunks_mut(m).zip(anchors.points()) {
        fill_row(row, fns, &scan(points, a, need_mean));
    }
    Ok(DescriptorTensor {
        values,
        n_anchors: anchors.len(),
        functions: fns.clone(),
    })
}

fn check_pair(pred: &DescriptorTensor, target: &DescriptorTensor) -> Result<()> {
    if pred.n_anchors != target.n_anchors || pred.functions != target.functions {
        return Err(invalid(format!(
            "descriptor shapes differ: {}x[{}] vs {}x[{}]",
            pred.n_anchors,
            pred.functions.names(),
            target.n_anchors,
            target.functions.names()
        )));
    }
    Ok(())
}

/// `(1 / (H W)) Σ_p w_p ‖Γ_p − Γ*_p‖²_F`; parts with zero weight are skipped
/// without looking at their descriptors' values.
pub fn prdl_loss(
    pred: &[DescriptorTensor],
    target: &[DescriptorTensor],
    weights: &[f64],
    height: usize,
    width: usize,
) -> Result<f64> {
    if pred.len() != target.len() || pred.len() != weights.len() {
        return Err(invalid("prediction, target and weight lists differ in length"));
    }
    if height == 0 || width == 0 {
        return Err(invalid("image size must be non-zero"));
    }
    let mut total = 0.0;
    for ((p, t), &w) in pred.iter().zip(target).zip(weights) {
        if w < 0.0 || !w.is_finite() {
            return Err(invalid(format!("part weight must be non-negative, got {w}")));
        }
        check_pair(p, t)?;
        if w == 0.0 {
            continue;
        }
        let sq: f64 = p.values.iter().zip(&t.values).map(|(a, b)| (a - b) * (a - b)).sum();
        total += w * sq;
    }
    Ok(total / (height * width) as f64)
}

/// One part's contribution to a joint loss/gradient evaluation.
#[derive(Clone, Copy, Debug)]
pub struct PartInput<'a> {
    pub pred: &'a [Point2],
    pub target: &'a DescriptorTensor,
    pub weight: f64,
}

/// Loss and per-point gradients of every part.
#[derive(Clone, Debug, PartialEq)]
pub struct PrdlEval {
    pub loss: f64,
    /// `gradients[p][k]` is `∂L/∂v_k` for point `k` of part `p`.
    pub gradients: Vec<Vec<Point2>>,
    /// Number of (anchor, point) terms whose `1/d` factor hit the clamp.
    pub clamped: usize,
}

fn inv(d: f64, clamped: &mut usize) -> f64 {
    if d < EPSILON {
        *clamped += 1;
        1.0 / EPSILON
    } else {
        1.0 / d
    }
}

/// PRDL value and analytic gradient. The argmin/argmax selections are held
/// fixed within the evaluation.
///
/// For a nearest or furthest selection `v_n` with target distance `d_m`,
/// `∂E/∂v_n = 2 (d_n − d_m) (v_n − a) / d_n`. For the mean,
/// `∂E/∂v_j = 2 (mean_V − mean_C) (v_j − a) / (|V| d_j)`.
pub fn prdl_value_and_gradient(
    parts: &[PartInput<'_>],
    anchors: &AnchorGrid,
    fns: &DistanceFunctionSet,
    height: usize,
    width: usize,
) -> Result<PrdlEval> {
    if height == 0 || width == 0 {
        return Err(invalid("image size must be non-zero"));
    }
    let norm = 1.0 / (height * width) as f64;
    let m = fns.len();
    let need_mean = fns.contains(DistanceFn::Ave);
    let mut loss = 0.0;
    let mut clamped = 0;
    let mut gradients = Vec::with_capacity(parts.len());
    for part in parts {
        let mut grad = vec![Point2::ZERO; part.pred.len()];
        if part.weight < 0.0 || !part.weight.is_finite() {
            return Err(invalid(format!("part weight must be non-negative, got {}", part.weight)));
        }
        if part.target.n_anchors != anchors.len() || part.target.functions != *fns {
            return Err(invalid("target descriptor does not match anchors and functions"));
        }
        if part.weight == 0.0 {
            gradients.push(grad);
            continue;
        }
        if part.pred.is_empty() {
            return Err(Error::EmptySet);
        }
        let scale = part.weight * norm;
        let nv = part.pred.len() as f64;
        let mut sq = 0.0;
        let mut row = vec![0.0; m];
        for (i, &a) in anchors.points().iter().enumerate() {
            let s = scan(part.pred, a, need_mean);
            fill_row(&mut row, fns, &s);
            let t = part.target.row(i);
            for (j, f) in fns.functions().iter().enumerate() {
                let r = row[j] - t[j];
                sq += r * r;
                if r == 0.0 {
                    continue;
                }
                match f {
                    DistanceFn::Min | DistanceFn::Max => {
                        let (d, k) = if *f == DistanceFn::Min { s.min } else { s.max };
                        let g = 2.0 * r * inv(d, &mut clamped) * scale;
                        grad[k] += (part.pred[k] - a) * g;
                    }
                    DistanceFn::Ave => {
                        let c = 2.0 * r / nv * scale;
                        for (gk, &v) in grad.iter_mut().zip(part.pred) {
                            let d = v.distance(a);
                            *gk += (v - a) * (c * inv(d, &mut clamped));
                        }
                    }
                }
            }
        }
        loss += part.weight * sq;
        gradients.push(grad);
    }
    Ok(PrdlEval {
        loss: loss * norm,
        gradients,
        clamped,
    })
}

/// Gradient only; see [`prdl_value_and_gradient`].
pub fn prdl_gradient(
    parts: &[PartInput<'_>],
    anchors: &AnchorGrid,
    fns: &DistanceFunctionSet,
    height: usize,
    width: usize,
) -> Result<Vec<Vec<Point2>>> {
    Ok(prdl_value_and_gradient(parts, anchors, fns, height, width)?.gradients)
}

pub fn subsample_anchors(grid: &AnchorGrid, k: usize, start_index: usize) -> Result<AnchorGrid> {
    grid.subsample(k, start_index)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn pts(xy: &[(f64, f64)]) -> PointSet {
        PointSet::from_xy(xy).unwrap()
    }

    fn anchors(xy: &[(f64, f64)]) -> AnchorGrid {
        AnchorGrid::from_points(&pts(xy), 8, 8).unwrap()
    }

    #[test]
    fn descriptor_examples() {
        let all = DistanceFunctionSet::all();
        let d = compute_descriptor(&pts(&[(0.0, 0.0)]), &anchors(&[(3.0, 4.0)]), &all).unwrap();
        assert_eq!(d.values(), &[5.0, 5.0, 5.0]);
        let d = compute_descriptor(&pts(&[(0.0, 0.0), (6.0, 8.0)]), &anchors(&[(0.0, 0.0)]), &all).unwrap();
        assert_eq!(d.values(), &[0.0, 10.0, 5.0]);
        assert!(matches!(compute_descriptor(&PointSet::empty(), &anchors(&[(0.0, 0.0)]), &all), Err(Error::EmptySet)));
    }

    #[test]
    fn function_set_order_and_parsing() {
        let s: DistanceFunctionSet = "ave,min".parse().unwrap();
        assert_eq!(s.functions(), &[DistanceFn::Min, DistanceFn::Ave]);
        assert_eq!("all".parse::<DistanceFunctionSet>().unwrap(), DistanceFunctionSet::all());
        assert!("min,min".parse::<DistanceFunctionSet>().is_err());
        assert!(DistanceFunctionSet::new(&[]).is_err());
        assert!("median".parse::<DistanceFunctionSet>().is_err());
    }

    #[test]
    fn loss_examples() {
        let f = DistanceFunctionSet::all();
        let a = anchors(&[(0.0, 0.0)]);
        let mk = |v: [f64; 3]| DescriptorTensor {
            values: v.to_vec(),
            n_anchors: 1,
            functions: f.clone(),
        };
        let p = mk([1.0, 2.0, 3.0]);
        let t = mk([0.0, 2.0, 3.0]);
        assert_eq!(prdl_loss(std::slice::from_ref(&p), std::slice::from_ref(&t), &[1.0], 1, 1).unwrap(), 1.0);
        assert_eq!(prdl_loss(std::slice::from_ref(&p), std::slice::from_ref(&p), &[1.0], 1, 1).unwrap(), 0.0);
        assert_eq!(prdl_loss(std::slice::from_ref(&p), std::slice::from_ref(&t), &[0.0], 1, 1).unwrap(), 0.0);
        let other = descriptor_of(&[Point2::ZERO], &a, &DistanceFunctionSet::single(DistanceFn::Min)).unwrap();
        assert!(matches!(prdl_loss(&[p], &[other], &[1.0], 1, 1), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn zero_weight_part_may_be_empty() {
        let f = DistanceFunctionSet::all();
        let a = anchors(&[(1.0, 1.0)]);
        let t = descriptor_of(&[Point2::ZERO], &a, &f).unwrap();
        let parts = [PartInput {
            pred: &[],
            target: &t,
            weight: 0.0,
        }];
        let e = prdl_value_and_gradient(&parts, &a, &f, 4, 4).unwrap();
        assert_eq!(e.loss, 0.0);
    }

    #[test]
    fn equal_distances_give_zero_gradient() {
        let f = DistanceFunctionSet::single(DistanceFn::Min);
        let a = anchors(&[(0.0, 0.0), (5.0, 5.0)]);
        // Prediction is the target mirrored through the anchor midpoint axis: same distances.
        let target = descriptor_of(&[Point2::new(1.0, 0.0)], &a, &f).unwrap();
        let pred = [Point2::new(0.0, 1.0)];
        let parts = [PartInput {
            pred: &pred,
            target: &target,
            weight: 1.0,
        }];
        let e = prdl_value_and_gradient(&parts, &a, &f, 1, 1).unwrap();
        assert_eq!(e.gradients[0], vec![Point2::ZERO]);
        assert_eq!(e.loss, 0.0);
    }

    #[test]
    fn descent_moves_far_point_toward_anchor() {
        let f = DistanceFunctionSet::single(DistanceFn::Min);
        let a = anchors(&[(0.0, 0.0)]);
        let target = descriptor_of(&[Point2::new(1.0, 0.0)], &a, &f).unwrap();
        let pred = [Point2::new(3.0, 4.0)];
        let parts = [PartInput {
            pred: &pred,
            target: &target,
            weight: 1.0,
        }];
        let g = prdl_gradient(&parts, &a, &f, 1, 1).unwrap()[0][0];
        let descent = g * -1.0;
        let to_anchor = Point2::ZERO - pred[0];
        assert!((descent.x * to_anchor.y - descent.y * to_anchor.x).abs() < 1e-12);
        assert!(descent.dot(to_anchor) > 0.0);
        // 2 (5 - 1) (v - a) / 5
        assert!((g.x - 4.8).abs() < 1e-12 && (g.y - 6.4).abs() < 1e-12);
    }

    #[test]
    fn anchor_coincident_point_is_clamped() {
        let f = DistanceFunctionSet::all();
        let a = anchors(&[(0.0, 0.0)]);
        let target = descriptor_of(&[Point2::new(2.0, 0.0)], &a, &f).unwrap();
        let pred = [Point2::ZERO, Point2::new(1.0, 0.0)];
        let parts = [PartInput {
            pred: &pred,
            target: &target,
            weight: 1.0,
        }];
        let e = prdl_value_and_gradient(&parts, &a, &f, 1, 1).unwrap();
        assert!(e.clamped > 0);
        assert!(e.gradients[0].iter().all(|g| g.is_finite()));
    }

    fn fd_relative_error(rng: &mut ChaCha8Rng, fns: &DistanceFunctionSet) -> f64 {
        let n_anchor = rng.random_range(1..6);
        let a = AnchorGrid::from_points(
            &PointSet::new((0..n_anchor).map(|_| Point2::new(rng.random_range(0.0..20.0), rng.random_range(0.0..20.0))).collect()).unwrap(),
            20,
            20,
        )
        .unwrap();
        let mk = |rng: &mut ChaCha8Rng, n: usize| -> Vec<Point2> {
            (0..n).map(|_| Point2::new(rng.random_range(0.0..20.0), rng.random_range(0.0..20.0))).collect()
        };
        let n_parts = rng.random_range(1..3);
        let mut preds = Vec::new();
        let mut targets = Vec::new();
        let mut weights = Vec::new();
        for _ in 0..n_parts {
            let np = rng.random_range(1..8);
            let nt = rng.random_range(1..8);
            preds.push(mk(rng, np));
            targets.push(descriptor_of(&mk(rng, nt), &a, fns).unwrap());
            weights.push(rng.random_range(0.5..2.0));
        }
        let eval = |preds: &[Vec<Point2>]| {
            let parts: Vec<PartInput> = preds
                .iter()
                .zip(&targets)
                .zip(&weights)
                .map(|((p, t), &w)| PartInput { pred: p, target: t, weight: w })
                .collect();
            prdl_value_and_gradient(&parts, &a, fns, 20, 20).unwrap()
        };
        let base = eval(&preds);
        let h = 1e-5;
        let mut num = 0.0f64;
        let mut den = 0.0f64;
        for p in 0..preds.len() {
            for k in 0..preds[p].len() {
                for axis in 0..2 {
                    let mut plus = preds.clone();
                    let mut minus = preds.clone();
                    if axis == 0 {
                        plus[p][k].x += h;
                        minus[p][k].x -= h;
                    } else {
                        plus[p][k].y += h;
                        minus[p][k].y -= h;
                    }
                    let fd = (eval(&plus).loss - eval(&minus).loss) / (2.0 * h);
                    let g = base.gradients[p][k];
                    let an = if axis == 0 { g.x } else { g.y };
                    num = num.max((an - fd).abs());
                    den = den.max(fd.abs());
                }
            }
        }
        if den == 0.0 { num } else { num / den }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let sets = [
            DistanceFunctionSet::all(),
            DistanceFunctionSet::single(DistanceFn::Min),
            DistanceFunctionSet::single(DistanceFn::Max),
            DistanceFunctionSet::single(DistanceFn::Ave),
        ];
        for trial in 0..100 {
            let f = &sets[trial % sets.len()];
            let err = fd_relative_error(&mut rng, f);
            assert!(err < 1e-5, "trial {trial} ({}) error {err}", f.names());
        }
    }

    #[test]
    fn unselected_points_get_no_min_gradient() {
        let f = DistanceFunctionSet::single(DistanceFn::Min);
        let a = anchors(&[(0.0, 0.0)]);
        let target = descriptor_of(&[Point2::new(9.0, 9.0)], &a, &f).unwrap();
        let pred = [Point2::new(1.0, 1.0), Point2::new(5.0, 5.0)];
        let parts = [PartInput {
            pred: &pred,
            target: &target,
            weight: 1.0,
        }];
        let g = prdl_gradient(&parts, &a, &f, 1, 1).unwrap();
        assert_ne!(g[0][0], Point2::ZERO);
        assert_eq!(g[0][1], Point2::ZERO);
    }

    #[test]
    fn subsample_examples() {
        let grid = AnchorGrid::lattice(4, 4).unwrap();
        assert_eq!(grid.subsample(16, 0).unwrap(), grid);
        let corners = grid.subsample(4, 0).unwrap();
        let want = [(0.0, 0.0), (3.0, 3.0), (3.0, 0.0), (0.0, 3.0)];
        assert_eq!(corners.points(), pts(&want).points());
        assert_eq!(grid.subsample(1, 5).unwrap().points(), &[Point2::new(1.0, 1.0)]);
        assert!(grid.subsample(17, 0).is_err());
        assert!(grid.subsample(0, 0).is_err());
    }

    #[test]
    fn csv_round_trip_and_image() {
        let grid = AnchorGrid::lattice(3, 2).unwrap();
        let d = compute_descriptor(&pts(&[(1.0, 1.0)]), &grid, &DistanceFunctionSet::all()).unwrap();
        let (back, a) = DescriptorTensor::from_csv(&d.to_csv(&grid)).unwrap();
        assert_eq!(back, d);
        assert_eq!(a, grid.points());
        let img = d.to_pgm(&grid, DistanceFn::Min).unwrap();
        assert!(img.starts_with(b"P5\n3 2\n255\n"));
        // Pixel (1,1) is the point itself.
        assert_eq!(img[img.len() - 6 + 4], 0);
        let sub = grid.subsample(2, 0).unwrap();
        let d2 = compute_descriptor(&pts(&[(1.0, 1.0)]), &sub, &DistanceFunctionSet::all()).unwrap();
        assert!(d2.to_pgm(&sub, DistanceFn::Min).is_err());
    }
}
