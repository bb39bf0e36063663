//! 2D point sets, nearest/furthest/mean distance queries and farthest point
//! sampling.
//!
//! All distances are Euclidean. Whenever several points attain the same
//! distance, the one with the lowest index in the original list wins.

use std::ops::{Add, Mul, Sub};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::part::PartLabel;

/// A pixel-space position: `x` is the column, `y` the row (growing downward).
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const ZERO: Point2 = Point2 { x: 0.0, y: 0.0 };

    pub const fn new(x: f64, y: f64) -> Self {
        Point2 { x, y }
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    pub fn distance_sq(self, other: Point2) -> f64 {
        let dx = self.x - other.x;
        let dy = self.y - other.y;
        dx * dx + dy * dy
    }

    pub fn distance(self, other: Point2) -> f64 {
        self.distance_sq(other).sqrt()
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn dot(self, other: Point2) -> f64 {
        self.x * other.x + self.y * other.y
    }
}

impl Add for Point2 {
    type Output = Point2;
    fn add(self, rhs: Point2) -> Point2 {
        Point2::new(self.x + rhs.x, self.y + rhs.y)
    }
}

impl Sub for Point2 {
    type Output = Point2;
    fn sub(self, rhs: Point2) -> Point2 {
        Point2::new(self.x - rhs.x, self.y - rhs.y)
    }
}

impl Mul<f64> for Point2 {
    type Output = Point2;
    fn mul(self, rhs: f64) -> Point2 {
        Point2::new(self.x * rhs, self.y * rhs)
    }
}

impl std::ops::AddAssign for Point2 {
    fn add_assign(&mut self, rhs: Point2) {
        self.x += rhs.x;
        self.y += rhs.y;
    }
}

/// Ordered list of finite 2D points, optionally tagged with a part label.
/// May be empty: an empty set marks an invisible part.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PointSet {
    points: Vec<Point2>,
    label: Option<PartLabel>,
}

impl PointSet {
    pub fn new(points: Vec<Point2>) -> Result<Self> {
        if let Some(i) = points.iter().position(|p| !p.is_finite()) {
            return Err(invalid(format!("point {i} is not finite")));
        }
        Ok(PointSet { points, label: None })
    }

    pub fn empty() -> Self {
        PointSet::default()
    }

    pub fn from_xy(coords: &[(f64, f64)]) -> Result<Self> {
        PointSet::new(coords.iter().map(|&(x, y)| Point2::new(x, y)).collect())
    }

    pub fn with_label(mut self, label: PartLabel) -> Self {
        self.label = Some(label);
        self
    }

    pub fn label(&self) -> Option<PartLabel> {
        self.label
    }

    pub fn points(&self) -> &[Point2] {
        &self.points
    }

    pub fn into_points(self) -> Vec<Point2> {
        self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Point2> {
        self.points.iter()
    }

    /// Keeps the points at `indices`, in the given order.
    pub fn select(&self, indices: &[usize]) -> PointSet {
        PointSet {
            points: indices.iter().map(|&i| self.points[i]).collect(),
            label: self.label,
        }
    }

    pub fn translated(&self, by: Point2) -> PointSet {
        PointSet {
            points: self.points.iter().map(|&p| p + by).collect(),
            label: self.label,
        }
    }
}

impl std::ops::Index<usize> for PointSet {
    type Output = Point2;
    fn index(&self, i: usize) -> &Point2 {
        &self.points[i]
    }
}

/// Result of a nearest or furthest query.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Neighbor {
    pub distance: f64,
    pub index: usize,
}

/// Immutable 2D k-d tree over one point set. Nearest and k-nearest queries
/// use the tree; furthest and mean queries scan the cached point list.
#[derive(Clone, Debug)]
pub struct SpatialIndex {
    points: Vec<Point2>,
    // Implicit balanced tree: `order[lo..hi]` is a subtree whose root sits at
    // the middle position and splits on axis `depth % 2`.
    order: Vec<usize>,
}

impl SpatialIndex {
    pub fn build(set: &PointSet) -> Result<Self> {
        if set.is_empty() {
            return Err(Error::EmptySet);
        }
        let points = set.points().to_vec();
        let mut order: Vec<usize> = (0..points.len()).collect();
        build_rec(&points, &mut order, 0);
        Ok(SpatialIndex { points, order })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Point2] {
        &self.points
    }

    pub fn nearest(&self, q: Point2) -> Neighbor {
        let mut best = (f64::INFINITY, usize::MAX);
        self.nearest_rec(q, 0, self.order.len(), 0, &mut best);
        Neighbor {
            distance: best.0.sqrt(),
            index: best.1,
        }
    }

    fn nearest_rec(&self, q: Point2, lo: usize, hi: usize, depth: usize, best: &mut (f64, usize)) {
        if lo >= hi {
            return;
        }
        let mid = lo + (hi - lo) / 2;
        let idx = self.order[mid];
        let p = self.points[idx];
        let d2 = q.distance_sq(p);
        if d2 < best.0 || (d2 == best.0 && idx < best.1) {
            *best = (d2, idx);
        }
        let diff = if depth.is_multiple_of(2) { q.x - p.x } else { q.y - p.y };
        let (near, far) = if diff < 0.0 { ((lo, mid), (mid + 1, hi)) } else { ((mid + 1, hi), (lo, mid)) };
        self.nearest_rec(q, near.0, near.1, depth + 1, best);
        // Equal bounds must still be visited: a lower index may hide there.
        if diff * diff <= best.0 {
            self.nearest_rec(q, far.0, far.1, depth + 1, best);
        }
    }

    /// The `k` nearest points ordered by (distance, index).
    pub fn k_nearest(&self, q: Point2, k: usize) -> Vec<Neighbor> {
        let k = k.min(self.points.len());
        if k == 0 {
            return Vec::new();
        }
        let mut heap: Vec<(f64, usize)> = Vec::with_capacity(k + 1);
        self.knn_rec(q, 0, self.order.len(), 0, k, &mut heap);
        heap.into_iter()
            .map(|(d2, index)| Neighbor {
                distance: d2.sqrt(),
                index,
            })
            .collect()
    }

    fn knn_rec(&self, q: Point2, lo: usize, hi: usize, depth: usize, k: usize, best: &mut Vec<(f64, usize)>) {
        if lo >= hi {
            return;
        }
        let mid = lo + (hi - lo) / 2;
        let idx = self.order[mid];
        let p = self.points[idx];
        let cand = (q.distance_sq(p), idx);
        let worse = |a: &(f64, usize), b: &(f64, usize)| a.0 > b.0 || (a.0 == b.0 && a.1 > b.1);
        if best.len() < k || worse(&best[best.len() - 1], &cand) {
            let pos = best.iter().position(|b| worse(b, &cand)).unwrap_or(best.len());
            best.insert(pos, cand);
            best.truncate(k);
        }
        let diff = if depth.is_multiple_of(2) { q.x - p.x } else { q.y - p.y };
        let (near, far) = if diff < 0.0 { ((lo, mid), (mid + 1, hi)) } else { ((mid + 1, hi), (lo, mid)) };
        self.knn_rec(q, near.0, near.1, depth + 1, k, best);
        if best.len() < k || diff * diff <= best[best.len() - 1].0 {
            self.knn_rec(q, far.0, far.1, depth + 1, k, best);
        }
    }

    pub fn furthest(&self, q: Point2) -> Neighbor {
        let mut best = (f64::NEG_INFINITY, 0usize);
        for (i, p) in self.points.iter().enumerate() {
            let d2 = q.distance_sq(*p);
            if d2 > best.0 {
                best = (d2, i);
            }
        }
        Neighbor {
            distance: best.0.sqrt(),
            index: best.1,
        }
    }

    pub fn mean_distance(&self, q: Point2) -> f64 {
        mean_distance_slice(&self.points, q)
    }
}

fn build_rec(points: &[Point2], order: &mut [usize], depth: usize) {
    if order.len() <= 1 {
        return;
    }
    let mid = order.len() / 2;
    let key = |i: &usize| if depth.is_multiple_of(2) { points[*i].x } else { points[*i].y };
    order.select_nth_unstable_by(mid, |a, b| key(a).total_cmp(&key(b)).then(a.cmp(b)));
    let (left, rest) = order.split_at_mut(mid);
    build_rec(points, left, depth + 1);
    build_rec(points, &mut rest[1..], depth + 1);
}

fn mean_distance_slice(points: &[Point2], q: Point2) -> f64 {
    points.iter().map(|p| q.distance(*p)).sum::<f64>() / points.len() as f64
}

/// Distance to, and index of, the closest point of the indexed set.
pub fn nearest_distance(index: &SpatialIndex, q: Point2) -> (f64, usize) {
    let n = index.nearest(q);
    (n.distance, n.index)
}

/// Distance to, and index of, the most distant point of the indexed set.
pub fn furthest_distance(index: &SpatialIndex, q: Point2) -> (f64, usize) {
    let n = index.furthest(q);
    (n.distance, n.index)
}

/// Arithmetic mean of the distances from `q` to every point of `set`.
pub fn mean_distance(set: &PointSet, q: Point2) -> Result<f64> {
    if set.is_empty() {
        return Err(Error::EmptySet);
    }
    Ok(mean_distance_slice(set.points(), q))
}

/// Indices chosen by greedy farthest point sampling, in selection order.
pub fn farthest_point_indices(points: &[Point2], k: usize, start_index: usize) -> Result<Vec<usize>> {
    let n = points.len();
    if k == 0 || k > n {
        return Err(invalid(format!("sample count {k} outside 1..={n}")));
    }
    if start_index >= n {
        return Err(invalid(format!("start index {start_index} outside 0..{n}")));
    }
    let mut selected = vec![false; n];
    let mut min_d2 = vec![f64::INFINITY; n];
    let mut out = Vec::with_capacity(k);
    let mut current = start_index;
    loop {
        selected[current] = true;
        out.push(current);
        if out.len() == k {
            break;
        }
        let c = points[current];
        let mut best: Option<(f64, usize)> = None;
        for i in 0..n {
            if selected[i] {
                continue;
            }
            let d2 = points[i].distance_sq(c);
            if d2 < min_d2[i] {
                min_d2[i] = d2;
            }
            if best.is_none_or(|(b, _)| min_d2[i] > b) {
                best = Some((min_d2[i], i));
            }
        }
        current = best.expect("k <= n leaves an unselected point").1;
    }
    Ok(out)
}

/// Greedy farthest point sampling seeded at `start_index`.
pub fn farthest_point_sampling(set: &PointSet, k: usize, start_index: usize) -> Result<PointSet> {
    let idx = farthest_point_indices(set.points(), k, start_index)?;
    Ok(set.select(&idx))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn set(xy: &[(f64, f64)]) -> PointSet {
        PointSet::from_xy(xy).unwrap()
    }

    fn random_set(rng: &mut ChaCha8Rng, n: usize) -> PointSet {
        PointSet::new((0..n).map(|_| Point2::new(rng.random_range(-50.0..50.0), rng.random_range(-50.0..50.0))).collect())
            .unwrap()
    }

    fn brute_nearest(points: &[Point2], q: Point2) -> (f64, usize) {
        let mut best = (f64::INFINITY, 0);
        for (i, p) in points.iter().enumerate() {
            let d = q.distance(*p);
            if d < best.0 {
                best = (d, i);
            }
        }
        best
    }

    #[test]
    fn empty_set_cannot_be_indexed() {
        assert!(matches!(SpatialIndex::build(&PointSet::empty()), Err(Error::EmptySet)));
        assert!(matches!(mean_distance(&PointSet::empty(), Point2::ZERO), Err(Error::EmptySet)));
    }

    #[test]
    fn non_finite_points_rejected() {
        assert!(PointSet::from_xy(&[(0.0, f64::NAN)]).is_err());
        assert!(PointSet::from_xy(&[(f64::INFINITY, 0.0)]).is_err());
    }

    #[test]
    fn nearest_examples() {
        let idx = SpatialIndex::build(&set(&[(0.0, 0.0), (3.0, 4.0)])).unwrap();
        assert_eq!(nearest_distance(&idx, Point2::new(0.0, 0.0)), (0.0, 0));
        assert_eq!(nearest_distance(&idx, Point2::new(3.0, 0.0)), (3.0, 0));
        assert_eq!(nearest_distance(&idx, Point2::new(6.0, 8.0)), (5.0, 1));
    }

    #[test]
    fn furthest_examples() {
        let idx = SpatialIndex::build(&set(&[(0.0, 0.0), (3.0, 4.0)])).unwrap();
        assert_eq!(furthest_distance(&idx, Point2::new(0.0, 0.0)), (5.0, 1));
        let single = SpatialIndex::build(&set(&[(0.0, 0.0)])).unwrap();
        assert_eq!(furthest_distance(&single, Point2::new(3.0, 4.0)), (5.0, 0));
    }

    #[test]
    fn single_point_index() {
        let idx = SpatialIndex::build(&set(&[(5.0, 5.0)])).unwrap();
        let q = Point2::new(8.0, 9.0);
        assert_eq!(idx.nearest(q).distance, 5.0);
        assert_eq!(idx.furthest(q).distance, 5.0);
        assert_eq!(idx.mean_distance(q), 5.0);
    }

    #[test]
    fn mean_examples() {
        assert_eq!(mean_distance(&set(&[(0.0, 0.0), (6.0, 8.0)]), Point2::ZERO).unwrap(), 5.0);
        assert_eq!(mean_distance(&set(&[(1.0, 1.0)]), Point2::new(1.0, 1.0)).unwrap(), 0.0);
        let m = mean_distance(&set(&[(0.0, 0.0), (3.0, 0.0), (0.0, 4.0)]), Point2::ZERO).unwrap();
        assert!((m - 7.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn ties_go_to_lowest_index() {
        let idx = SpatialIndex::build(&set(&[(1.0, 0.0), (-1.0, 0.0), (0.0, 1.0), (0.0, -1.0)])).unwrap();
        assert_eq!(idx.nearest(Point2::ZERO).index, 0);
        assert_eq!(idx.furthest(Point2::ZERO).index, 0);
        let dup = SpatialIndex::build(&set(&[(2.0, 2.0), (0.0, 0.0), (0.0, 0.0), (0.0, 0.0)])).unwrap();
        assert_eq!(dup.nearest(Point2::new(0.1, 0.1)).index, 1);
        let knn = dup.k_nearest(Point2::new(0.1, 0.1), 3);
        assert_eq!(knn.iter().map(|n| n.index).collect::<Vec<_>>(), vec![1, 2, 3]);
    }

    #[test]
    fn index_matches_brute_force_on_random_sets() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let s = random_set(&mut rng, 1000);
        let idx = SpatialIndex::build(&s).unwrap();
        for _ in 0..300 {
            let q = Point2::new(rng.random_range(-80.0..80.0), rng.random_range(-80.0..80.0));
            let (bd, bi) = brute_nearest(s.points(), q);
            let n = idx.nearest(q);
            assert_eq!(n.index, bi);
            assert!((n.distance - bd).abs() <= 1e-9 * bd.max(1.0));
            let far = s.points().iter().map(|p| q.distance(*p)).fold(0.0, f64::max);
            assert!((idx.furthest(q).distance - far).abs() <= 1e-9 * far);
            let mean = s.points().iter().map(|p| q.distance(*p)).sum::<f64>() / 1000.0;
            assert!((idx.mean_distance(q) - mean).abs() <= 1e-9 * mean);
        }
    }

    #[test]
    fn furthest_matches_brute_force_small() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let s = random_set(&mut rng, 200);
        let idx = SpatialIndex::build(&s).unwrap();
        for _ in 0..50 {
            let q = Point2::new(rng.random_range(-60.0..60.0), rng.random_range(-60.0..60.0));
            let mut best = (-1.0, 0);
            for (i, p) in s.iter().enumerate() {
                let d = q.distance(*p);
                if d > best.0 {
                    best = (d, i);
                }
            }
            assert_eq!(furthest_distance(&idx, q), best);
        }
    }

    #[test]
    fn knn_matches_sorted_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s = random_set(&mut rng, 400);
        let idx = SpatialIndex::build(&s).unwrap();
        for _ in 0..40 {
            let q = Point2::new(rng.random_range(-60.0..60.0), rng.random_range(-60.0..60.0));
            let mut all: Vec<(f64, usize)> = s.iter().enumerate().map(|(i, p)| (q.distance_sq(*p), i)).collect();
            all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let got: Vec<usize> = idx.k_nearest(q, 7).iter().map(|n| n.index).collect();
            let want: Vec<usize> = all[..7].iter().map(|a| a.1).collect();
            assert_eq!(got, want);
        }
    }

    #[test]
    fn fps_examples() {
        let s = set(&[(0.0, 0.0), (1.0, 0.0), (0.0, 1.0), (10.0, 10.0)]);
        assert_eq!(farthest_point_sampling(&s, 2, 0).unwrap(), set(&[(0.0, 0.0), (10.0, 10.0)]));
        assert_eq!(
            farthest_point_sampling(&s, 3, 0).unwrap(),
            set(&[(0.0, 0.0), (10.0, 10.0), (1.0, 0.0)])
        );
        let all = farthest_point_sampling(&s, 4, 0).unwrap();
        assert_eq!(all.len(), 4);
        assert!(matches!(farthest_point_sampling(&s, 0, 0), Err(Error::InvalidArgument(_))));
        assert!(matches!(farthest_point_sampling(&s, 5, 0), Err(Error::InvalidArgument(_))));
        assert!(matches!(farthest_point_sampling(&s, 2, 4), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn fps_with_duplicates_selects_each_index_once() {
        let s = set(&[(0.0, 0.0), (0.0, 0.0), (0.0, 0.0)]);
        assert_eq!(farthest_point_indices(s.points(), 3, 1).unwrap(), vec![1, 0, 2]);
    }

    #[test]
    fn fps_greedy_property_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for trial in 0..30 {
            let n = rng.random_range(2..=50);
            let s = random_set(&mut rng, n);
            let k = rng.random_range(1..=n);
            let start = rng.random_range(0..n);
            let picked = farthest_point_indices(s.points(), k, start).unwrap();
            assert_eq!(picked[0], start, "trial {trial}");
            for t in 1..k {
                let chosen = &picked[..t];
                let score = |i: usize| chosen.iter().map(|&c| s[i].distance(s[c])).fold(f64::INFINITY, f64::min);
                let best = (0..n).filter(|i| !chosen.contains(i)).map(score).fold(f64::NEG_INFINITY, f64::max);
                assert_eq!(score(picked[t]), best, "trial {trial} step {t}");
            }
        }
    }
}
