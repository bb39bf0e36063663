//! Linear blendshape face model, camera projection and the analytic
//! Jacobian of projected vertices with respect to the shape parameters.

mod annotate;
mod io;
mod toy;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::geometry::{Point2, PointSet, SpatialIndex};
use crate::ingest::PartPointSets;
use crate::part::PartLabel;

pub use annotate::{annotate_parts, annotate_with_visibility, format_annotation, parse_annotation};
pub use io::{load_model, read_model, save_model, write_model};
pub use toy::{gen_toy_model, toy_camera, ToyFace};

pub type Vec3 = [f64; 3];
pub type Mat3 = [[f64; 3]; 3];

/// Shape parameters: identity and expression coefficients, pitch/yaw/roll
/// in radians and a translation in model units.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShapeParams {
    pub id: Vec<f64>,
    pub exp: Vec<f64>,
    pub angles: [f64; 3],
    pub translation: [f64; 3],
}

impl ShapeParams {
    pub fn zeros(k_id: usize, k_exp: usize) -> Self {
        ShapeParams {
            id: vec![0.0; k_id],
            exp: vec![0.0; k_exp],
            angles: [0.0; 3],
            translation: [0.0; 3],
        }
    }

    pub fn dim(&self) -> usize {
        self.id.len() + self.exp.len() + 6
    }

    /// Flat layout: `[id.., exp.., pitch, yaw, roll, tx, ty, tz]`.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.dim());
        v.extend_from_slice(&self.id);
        v.extend_from_slice(&self.exp);
        v.extend_from_slice(&self.angles);
        v.extend_from_slice(&self.translation);
        v
    }

    pub fn from_slice(k_id: usize, k_exp: usize, flat: &[f64]) -> Result<Self> {
        if flat.len() != k_id + k_exp + 6 {
            return Err(invalid(format!("expected {} parameters, got {}", k_id + k_exp + 6, flat.len())));
        }
        let (id, rest) = flat.split_at(k_id);
        let (exp, rest) = rest.split_at(k_exp);
        Ok(ShapeParams {
            id: id.to_vec(),
            exp: exp.to_vec(),
            angles: [rest[0], rest[1], rest[2]],
            translation: [rest[3], rest[4], rest[5]],
        })
    }

    pub fn is_finite(&self) -> bool {
        self.to_vec().iter().all(|v| v.is_finite())
    }
}

/// How model-space points map onto the image plane.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum Projection {
    Orthographic,
    /// Per-vertex scale `focal / (z + depth_offset)`.
    WeakPerspective { focal: f64, depth_offset: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub projection: Projection,
    /// Pixels per model unit (orthographic mode).
    pub scale: f64,
    pub cx: f64,
    pub cy: f64,
}

impl Camera {
    pub fn orthographic(scale: f64, cx: f64, cy: f64) -> Self {
        Camera {
            projection: Projection::Orthographic,
            scale,
            cx,
            cy,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.scale > 0.0 && self.scale.is_finite()) {
            return Err(invalid(format!("camera scale must be positive, got {}", self.scale)));
        }
        if let Projection::WeakPerspective { focal, depth_offset } = self.projection {
            if !(focal > 0.0 && focal.is_finite() && depth_offset.is_finite()) {
                return Err(invalid("weak-perspective camera needs a positive focal length"));
            }
        }
        Ok(())
    }

    /// Image position of one model-space point.
    pub fn project_point(&self, v: Vec3) -> Result<Point2> {
        let s = self.point_scale(v)?;
        Ok(Point2::new(s * v[0] + self.cx, -s * v[1] + self.cy))
    }

    fn point_scale(&self, v: Vec3) -> Result<f64> {
        match self.projection {
            Projection::Orthographic => Ok(self.scale),
            Projection::WeakPerspective { focal, depth_offset } => {
                let depth = v[2] + depth_offset;
                if depth <= 0.0 {
                    return Err(Error::Projection(format!("non-positive depth {depth}")));
                }
                Ok(focal / depth)
            }
        }
    }

    /// Rows `d(u, v) / d(X, Y, Z)` at a model-space point.
    fn point_jacobian(&self, v: Vec3) -> Result<[[f64; 3]; 2]> {
        match self.projection {
            Projection::Orthographic => Ok([[self.scale, 0.0, 0.0], [0.0, -self.scale, 0.0]]),
            Projection::WeakPerspective { focal, depth_offset } => {
                let depth = v[2] + depth_offset;
                if depth <= 0.0 {
                    return Err(Error::Projection(format!("non-positive depth {depth}")));
                }
                let g = focal / depth;
                let dg = -focal / (depth * depth);
                Ok([[g, 0.0, dg * v[0]], [0.0, -g, -dg * v[1]]])
            }
        }
    }
}

/// `R = Rz(roll) * Ry(yaw) * Rx(pitch)` for angles `[pitch, yaw, roll]`.
pub fn rotation_matrix(angles: [f64; 3]) -> Mat3 {
    let [rx, ry, rz] = elementary(angles);
    mat_mul(&rz, &mat_mul(&ry, &rx))
}

/// Derivatives of the rotation with respect to pitch, yaw and roll.
pub fn rotation_derivatives(angles: [f64; 3]) -> [Mat3; 3] {
    let [rx, ry, rz] = elementary(angles);
    let [drx, dry, drz] = elementary_derivatives(angles);
    [
        mat_mul(&rz, &mat_mul(&ry, &drx)),
        mat_mul(&rz, &mat_mul(&dry, &rx)),
        mat_mul(&drz, &mat_mul(&ry, &rx)),
    ]
}

fn elementary(a: [f64; 3]) -> [Mat3; 3] {
    let (sp, cp) = a[0].sin_cos();
    let (sy, cy) = a[1].sin_cos();
    let (sr, cr) = a[2].sin_cos();
    [
        [[1.0, 0.0, 0.0], [0.0, cp, -sp], [0.0, sp, cp]],
        [[cy, 0.0, sy], [0.0, 1.0, 0.0], [-sy, 0.0, cy]],
        [[cr, -sr, 0.0], [sr, cr, 0.0], [0.0, 0.0, 1.0]],
    ]
}

fn elementary_derivatives(a: [f64; 3]) -> [Mat3; 3] {
    let (sp, cp) = a[0].sin_cos();
    let (sy, cy) = a[1].sin_cos();
    let (sr, cr) = a[2].sin_cos();
    [
        [[0.0, 0.0, 0.0], [0.0, -sp, -cp], [0.0, cp, -sp]],
        [[-sy, 0.0, cy], [0.0, 0.0, 0.0], [-cy, 0.0, -sy]],
        [[-sr, -cr, 0.0], [cr, -sr, 0.0], [0.0, 0.0, 0.0]],
    ]
}

pub fn mat_mul(a: &Mat3, b: &Mat3) -> Mat3 {
    let mut out = [[0.0; 3]; 3];
    for (i, row) in out.iter_mut().enumerate() {
        for (j, cell) in row.iter_mut().enumerate() {
            *cell = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    out
}

pub fn mat_vec(m: &Mat3, v: Vec3) -> Vec3 {
    [
        m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2],
        m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
        m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2],
    ]
}

/// Mean shape plus identity and expression bases, with per-part vertex
/// annotation and landmark vertices.
#[derive(Clone, Debug, PartialEq)]
pub struct BlendshapeModel {
    mean: Vec<Vec3>,
    /// Row-major `3n x k_id`; row `3 i + c` is coordinate `c` of vertex `i`.
    id_basis: Vec<f64>,
    exp_basis: Vec<f64>,
    k_id: usize,
    k_exp: usize,
    parts: BTreeMap<PartLabel, Vec<usize>>,
    landmarks: Vec<usize>,
}

impl BlendshapeModel {
    pub fn new(
        mean: Vec<Vec3>,
        id_basis: Vec<f64>,
        k_id: usize,
        exp_basis: Vec<f64>,
        k_exp: usize,
        parts: BTreeMap<PartLabel, Vec<usize>>,
        landmarks: Vec<usize>,
    ) -> Result<Self> {
        let n = mean.len();
        if n == 0 {
            return Err(invalid("model needs at least one vertex"));
        }
        if mean.iter().flatten().any(|v| !v.is_finite()) {
            return Err(invalid("mean shape has non-finite coordinates"));
        }
        if id_basis.len() != 3 * n * k_id {
            return Err(invalid(format!("identity basis has {} entries, expected 3n*k_id = {}", id_basis.len(), 3 * n * k_id)));
        }
        if exp_basis.len() != 3 * n * k_exp {
            return Err(invalid(format!(
                "expression basis has {} entries, expected 3n*k_exp = {}",
                exp_basis.len(),
                3 * n * k_exp
            )));
        }
        if id_basis.iter().chain(&exp_basis).any(|v| !v.is_finite()) {
            return Err(invalid("basis has non-finite entries"));
        }
        if let Some(&l) = landmarks.iter().find(|&&l| l >= n) {
            return Err(invalid(format!("landmark vertex {l} out of range")));
        }
        let mut model = BlendshapeModel {
            mean,
            id_basis,
            exp_basis,
            k_id,
            k_exp,
            parts: BTreeMap::new(),
            landmarks,
        };
        model.set_parts(parts)?;
        Ok(model)
    }

    /// Replaces the part annotation; indices are sorted and deduplicated and
    /// must be in range and disjoint across parts.
    pub fn set_parts(&mut self, parts: BTreeMap<PartLabel, Vec<usize>>) -> Result<()> {
        let n = self.mean.len();
        let mut owner: Vec<Option<PartLabel>> = vec![None; n];
        let mut clean = BTreeMap::new();
        for (part, mut idx) in parts {
            idx.sort_unstable();
            idx.dedup();
            for &i in &idx {
                if i >= n {
                    return Err(invalid(format!("{part}: vertex {i} out of range (n = {n})")));
                }
                if let Some(other) = owner[i] {
                    return Err(invalid(format!("vertex {i} annotated as both {other} and {part}")));
                }
                owner[i] = Some(part);
            }
            clean.insert(part, idx);
        }
        self.parts = clean;
        Ok(())
    }

    pub fn n_vertices(&self) -> usize {
        self.mean.len()
    }

    pub fn k_id(&self) -> usize {
        self.k_id
    }

    pub fn k_exp(&self) -> usize {
        self.k_exp
    }

    pub fn param_dim(&self) -> usize {
        self.k_id + self.k_exp + 6
    }

    pub fn mean(&self) -> &[Vec3] {
        &self.mean
    }

    pub fn id_basis(&self) -> &[f64] {
        &self.id_basis
    }

    pub fn exp_basis(&self) -> &[f64] {
        &self.exp_basis
    }

    pub fn parts(&self) -> &BTreeMap<PartLabel, Vec<usize>> {
        &self.parts
    }

    pub fn part_indices(&self, part: PartLabel) -> &[usize] {
        self.parts.get(&part).map_or(&[], Vec::as_slice)
    }

    pub fn landmarks(&self) -> &[usize] {
        &self.landmarks
    }

    pub fn zero_params(&self) -> ShapeParams {
        ShapeParams::zeros(self.k_id, self.k_exp)
    }

    fn check_params(&self, params: &ShapeParams) -> Result<()> {
        if params.id.len() != self.k_id || params.exp.len() != self.k_exp {
            return Err(invalid(format!(
                "params have {} identity / {} expression coefficients, model expects {} / {}",
                params.id.len(),
                params.exp.len(),
                self.k_id,
                self.k_exp
            )));
        }
        Ok(())
    }

    /// Vertex `i` of the unposed shape `mean + A_id a_id + A_exp a_exp`.
    fn deformed(&self, i: usize, params: &ShapeParams) -> Vec3 {
        let mut v = self.mean[i];
        for (c, coord) in v.iter_mut().enumerate() {
            let row = 3 * i + c;
            let id_row = &self.id_basis[row * self.k_id..(row + 1) * self.k_id];
            let exp_row = &self.exp_basis[row * self.k_exp..(row + 1) * self.k_exp];
            *coord += id_row.iter().zip(&params.id).map(|(a, b)| a * b).sum::<f64>();
            *coord += exp_row.iter().zip(&params.exp).map(|(a, b)| a * b).sum::<f64>();
        }
        v
    }
}

/// `R(angles) (mean + A_id a_id + A_exp a_exp) + t` for every vertex.
pub fn assemble_vertices(model: &BlendshapeModel, params: &ShapeParams) -> Result<Vec<Vec3>> {
    model.check_params(params)?;
    let r = rotation_matrix(params.angles);
    Ok((0..model.n_vertices())
        .map(|i| {
            let v = mat_vec(&r, model.deformed(i, params));
            [v[0] + params.translation[0], v[1] + params.translation[1], v[2] + params.translation[2]]
        })
        .collect())
}

/// Projects model-space vertices to the image (`y` down).
pub fn project(camera: &Camera, vertices: &[Vec3]) -> Result<PointSet> {
    camera.validate()?;
    let pts = vertices
        .iter()
        .map(|v| camera.project_point(*v))
        .collect::<Result<Vec<_>>>()?;
    PointSet::new(pts)
}

/// Everything derived from one (model, camera, params) evaluation.
#[derive(Clone, Debug)]
pub struct Posed {
    /// Unposed deformed shape.
    pub shape: Vec<Vec3>,
    /// Rotated and translated vertices.
    pub vertices: Vec<Vec3>,
    /// Image positions of all vertices.
    pub points: Vec<Point2>,
}

impl Posed {
    pub fn new(model: &BlendshapeModel, camera: &Camera, params: &ShapeParams) -> Result<Self> {
        model.check_params(params)?;
        camera.validate()?;
        let r = rotation_matrix(params.angles);
        let shape: Vec<Vec3> = (0..model.n_vertices()).map(|i| model.deformed(i, params)).collect();
        let vertices: Vec<Vec3> = shape
            .iter()
            .map(|s| {
                let v = mat_vec(&r, *s);
                [v[0] + params.translation[0], v[1] + params.translation[1], v[2] + params.translation[2]]
            })
            .collect();
        let points = vertices
            .iter()
            .map(|v| camera.project_point(*v))
            .collect::<Result<Vec<_>>>()?;
        Ok(Posed { shape, vertices, points })
    }
}

/// Dense `2n x dim` Jacobian of projected coordinates; row `2 i` is `x` of
/// vertex `i`, row `2 i + 1` its `y`. Columns follow [`ShapeParams::to_vec`].
#[derive(Clone, Debug, PartialEq)]
pub struct Jacobian {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Jacobian {
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// `J^T g` for per-vertex image-space gradients `g`.
    pub fn transpose_mul(&self, point_grads: &[Point2]) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        for (i, g) in point_grads.iter().enumerate() {
            if g.x == 0.0 && g.y == 0.0 {
                continue;
            }
            let rx = self.row(2 * i);
            let ry = self.row(2 * i + 1);
            for c in 0..self.cols {
                out[c] += g.x * rx[c] + g.y * ry[c];
            }
        }
        out
    }
}

/// Analytic derivative of every projected coordinate w.r.t. every parameter.
pub fn parameter_jacobian(model: &BlendshapeModel, camera: &Camera, params: &ShapeParams) -> Result<Jacobian> {
    let posed = Posed::new(model, camera, params)?;
    jacobian_at(model, camera, params, &posed)
}

pub(crate) fn jacobian_at(model: &BlendshapeModel, camera: &Camera, params: &ShapeParams, posed: &Posed) -> Result<Jacobian> {
    let n = model.n_vertices();
    let (k_id, k_exp) = (model.k_id, model.k_exp);
    let cols = model.param_dim();
    let mut data = vec![0.0; 2 * n * cols];
    let r = rotation_matrix(params.angles);
    let dr = rotation_derivatives(params.angles);
    for i in 0..n {
        let pj = camera.point_jacobian(posed.vertices[i])?;
        // Image rows through the rotation: M = P * R (2x3).
        let mut m = [[0.0; 3]; 2];
        for a in 0..2 {
            for c in 0..3 {
                m[a][c] = (0..3).map(|k| pj[a][k] * r[k][c]).sum();
            }
        }
        let (row_x, rest) = data[2 * i * cols..(2 * i + 2) * cols].split_at_mut(cols);
        let rows = [row_x, rest];
        for (a, row) in rows.into_iter().enumerate() {
            for j in 0..k_id {
                row[j] = (0..3).map(|c| m[a][c] * model.id_basis[(3 * i + c) * k_id + j]).sum();
            }
            for j in 0..k_exp {
                row[k_id + j] = (0..3).map(|c| m[a][c] * model.exp_basis[(3 * i + c) * k_exp + j]).sum();
            }
            for (t, d) in dr.iter().enumerate() {
                let dv = mat_vec(d, posed.shape[i]);
                row[k_id + k_exp + t] = (0..3).map(|c| pj[a][c] * dv[c]).sum();
            }
            for t in 0..3 {
                row[k_id + k_exp + 3 + t] = pj[a][t];
            }
        }
    }
    Ok(Jacobian { rows: 2 * n, cols, data })
}

/// Which projected vertices of a part are kept before comparing with targets.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PartFilter {
    /// A vertex is visible iff its rotated `z` is at least the part's median
    /// `z` minus this slack (model units).
    pub visibility_slack: f64,
    /// Drop points farther than this from every target pixel (hair
    /// occlusion). `None` disables the check; in config files that is
    /// written `"off"`.
    #[serde(with = "radius_or_off")]
    pub occlusion_radius: Option<f64>,
    /// Drop skin points above the target eyebrows.
    pub forehead_cut: bool,
}

impl Default for PartFilter {
    fn default() -> Self {
        PartFilter {
            visibility_slack: 0.5,
            occlusion_radius: Some(3.0),
            forehead_cut: true,
        }
    }
}

impl PartFilter {
    /// Visibility only; no target-dependent filtering.
    pub fn visibility_only() -> Self {
        PartFilter {
            occlusion_radius: None,
            forehead_cut: false,
            ..PartFilter::default()
        }
    }
}

mod radius_or_off {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Radius(f64),
        Word(String),
    }

    pub fn serialize<S: Serializer>(v: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
        match v {
            Some(r) => Repr::Radius(*r),
            None => Repr::Word("off".into()),
        }
        .serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<f64>, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Radius(r) => Ok(Some(r)),
            Repr::Word(w) if w == "off" => Ok(None),
            Repr::Word(w) => Err(serde::de::Error::custom(format!("expected a radius or \"off\", got \"{w}\""))),
        }
    }
}

/// Target-derived data the consistency filters need.
#[derive(Clone, Debug, Default)]
pub struct TargetContext {
    pub eyebrow_cut: Option<f64>,
    pub union: Option<SpatialIndex>,
}

impl TargetContext {
    pub fn from_targets(sets: &PartPointSets) -> Self {
        let all: Vec<Point2> = sets.iter().flat_map(|(_, s)| s.iter().copied()).collect();
        let union = PointSet::new(all).ok().and_then(|s| SpatialIndex::build(&s).ok());
        TargetContext {
            eyebrow_cut: sets.eyebrow_cut(),
            union,
        }
    }
}

/// Projected points of one part together with their vertex indices.
#[derive(Clone, Debug, PartialEq)]
pub struct PartProjection {
    pub points: PointSet,
    pub vertices: Vec<usize>,
}

/// Projects the vertices annotated as `part` and applies the visibility and
/// target-consistency filters.
pub fn part_points(
    model: &BlendshapeModel,
    camera: &Camera,
    params: &ShapeParams,
    part: PartLabel,
    filter: &PartFilter,
    ctx: &TargetContext,
) -> Result<PartProjection> {
    let posed = Posed::new(model, camera, params)?;
    part_points_posed(model, &posed, params, part, filter, ctx)
}

pub fn part_points_posed(
    model: &BlendshapeModel,
    posed: &Posed,
    params: &ShapeParams,
    part: PartLabel,
    filter: &PartFilter,
    ctx: &TargetContext,
) -> Result<PartProjection> {
    let idx = model
        .parts
        .get(&part)
        .ok_or_else(|| invalid(format!("part {part} is not annotated on this model")))?;
    if idx.is_empty() {
        return Ok(PartProjection {
            points: PointSet::empty().with_label(part),
            vertices: Vec::new(),
        });
    }
    let r = rotation_matrix(params.angles);
    let depth: Vec<f64> = idx.iter().map(|&i| mat_vec(&r, posed.shape[i])[2]).collect();
    let mut sorted = depth.clone();
    sorted.sort_by(f64::total_cmp);
    let median = sorted[sorted.len() / 2];
    let cut = if filter.forehead_cut && part == PartLabel::Skin {
        ctx.eyebrow_cut
    } else {
        None
    };
    let mut points = Vec::with_capacity(idx.len());
    let mut vertices = Vec::with_capacity(idx.len());
    for (k, &i) in idx.iter().enumerate() {
        if depth[k] < median - filter.visibility_slack {
            continue;
        }
        let p = posed.points[i];
        if cut.is_some_and(|c| p.y < c) {
            continue;
        }
        if let (Some(radius), Some(union)) = (filter.occlusion_radius, &ctx.union) {
            if union.nearest(p).distance > radius {
                continue;
            }
        }
        points.push(p);
        vertices.push(i);
    }
    Ok(PartProjection {
        points: PointSet::new(points)?.with_label(part),
        vertices,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::FRAC_PI_2;

    pub(crate) fn random_model(rng: &mut ChaCha8Rng, n: usize, k_id: usize, k_exp: usize) -> BlendshapeModel {
        let mean = (0..n)
            .map(|_| [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-0.3..0.3)])
            .collect();
        let id = (0..3 * n * k_id).map(|_| rng.random_range(-0.1..0.1)).collect();
        let exp = (0..3 * n * k_exp).map(|_| rng.random_range(-0.1..0.1)).collect();
        let mut parts = BTreeMap::new();
        parts.insert(PartLabel::Nose, (0..n).collect());
        BlendshapeModel::new(mean, id, k_id, exp, k_exp, parts, vec![0]).unwrap()
    }

    fn random_params(rng: &mut ChaCha8Rng, k_id: usize, k_exp: usize) -> ShapeParams {
        ShapeParams {
            id: (0..k_id).map(|_| rng.random_range(-1.0..1.0)).collect(),
            exp: (0..k_exp).map(|_| rng.random_range(-1.0..1.0)).collect(),
            angles: [rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5)],
            translation: [rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5)],
        }
    }

    fn tiny_model(mean: Vec<Vec3>, id: Vec<f64>, k_id: usize) -> BlendshapeModel {
        let n = mean.len();
        let exp = vec![1.0; 3 * n];
        BlendshapeModel::new(mean, id, k_id, exp, 1, BTreeMap::new(), vec![]).unwrap()
    }

    #[test]
    fn zero_params_give_mean_shape() {
        let m = tiny_model(vec![[1.0, 2.0, 3.0], [-1.0, 0.5, 0.0]], vec![0.3; 6], 1);
        assert_eq!(assemble_vertices(&m, &m.zero_params()).unwrap(), m.mean().to_vec());
    }

    #[test]
    fn translation_offsets_every_vertex() {
        let m = tiny_model(vec![[1.0, 2.0, 3.0], [0.0, 0.0, 0.0]], vec![0.0; 6], 1);
        let mut p = m.zero_params();
        p.translation = [1.0, 2.0, 3.0];
        assert_eq!(assemble_vertices(&m, &p).unwrap(), vec![[2.0, 4.0, 6.0], [1.0, 2.0, 3.0]]);
    }

    #[test]
    fn first_identity_column_adds_basis() {
        let id = vec![0.1, 9.0, 0.2, 9.0, 0.3, 9.0, 0.4, 9.0, 0.5, 9.0, 0.6, 9.0];
        let m = tiny_model(vec![[1.0, 1.0, 1.0], [2.0, 2.0, 2.0]], id, 2);
        let mut p = m.zero_params();
        p.id[0] = 1.0;
        let v = assemble_vertices(&m, &p).unwrap();
        let want = [[1.1, 1.2, 1.3], [2.4, 2.5, 2.6]];
        for (a, b) in v.iter().flatten().zip(want.iter().flatten()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let m = tiny_model(vec![[0.0; 3]], vec![0.0; 3], 1);
        assert!(matches!(assemble_vertices(&m, &ShapeParams::zeros(2, 1)), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn rotation_identity_and_orthonormality() {
        assert_eq!(rotation_matrix([0.0; 3]), [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            let a = [rng.random_range(-3.2..3.2), rng.random_range(-3.2..3.2), rng.random_range(-3.2..3.2)];
            let r = rotation_matrix(a);
            for i in 0..3 {
                for j in 0..3 {
                    let dot: f64 = (0..3).map(|k| r[k][i] * r[k][j]).sum();
                    assert!((dot - if i == j { 1.0 } else { 0.0 }).abs() < 1e-12);
                }
            }
            let det = r[0][0] * (r[1][1] * r[2][2] - r[1][2] * r[2][1]) - r[0][1] * (r[1][0] * r[2][2] - r[1][2] * r[2][0])
                + r[0][2] * (r[1][0] * r[2][1] - r[1][1] * r[2][0]);
            assert!((det - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn pitch_is_elementary_x_rotation() {
        let r = rotation_matrix([FRAC_PI_2, 0.0, 0.0]);
        let want = [[1.0, 0.0, 0.0], [0.0, 0.0, -1.0], [0.0, 1.0, 0.0]];
        for (a, b) in r.iter().flatten().zip(want.iter().flatten()) {
            assert!((a - b).abs() < 1e-15);
        }
        // Order: roll applied last.
        let (y, z) = (0.3, 0.7);
        let r = rotation_matrix([0.0, y, z]);
        let rz = [[z.cos(), -z.sin(), 0.0], [z.sin(), z.cos(), 0.0], [0.0, 0.0, 1.0]];
        let ry = [[y.cos(), 0.0, y.sin()], [0.0, 1.0, 0.0], [-y.sin(), 0.0, y.cos()]];
        let want = mat_mul(&rz, &ry);
        for (a, b) in r.iter().flatten().zip(want.iter().flatten()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn projection_examples() {
        let cam = Camera::orthographic(2.0, 0.0, 0.0);
        assert_eq!(project(&cam, &[[1.0, 2.0, 3.0]]).unwrap().points(), &[Point2::new(2.0, -4.0)]);
        let cam = Camera::orthographic(1.0, 100.0, 100.0);
        for z in [-5.0, 0.0, 7.0] {
            assert_eq!(cam.project_point([0.0, 0.0, z]).unwrap(), Point2::new(100.0, 100.0));
        }
        let persp = Camera {
            projection: Projection::WeakPerspective {
                focal: 100.0,
                depth_offset: 10.0,
            },
            scale: 1.0,
            cx: 5.0,
            cy: 0.0,
        };
        assert_eq!(persp.project_point([1.0, 0.0, 0.0]).unwrap().x, 100.0 / 10.0 + 5.0);
        assert!(matches!(persp.project_point([0.0, 0.0, -10.0]), Err(Error::Projection(_))));
        assert!(Camera::orthographic(0.0, 0.0, 0.0).validate().is_err());
    }

    #[test]
    fn jacobian_linear_cases() {
        let m = tiny_model(vec![[0.5, 0.25, 0.0]], vec![0.0; 3], 1);
        let cam = Camera::orthographic(3.0, 10.0, 10.0);
        let j = parameter_jacobian(&m, &cam, &m.zero_params()).unwrap();
        let tx = m.k_id() + m.k_exp() + 3;
        assert_eq!(j.get(0, tx), 3.0);
        assert_eq!(j.get(1, tx + 1), -3.0);
        // Expression column is (1,1,1): projected as (s, -s).
        assert_eq!(j.get(0, 1), 3.0);
        assert_eq!(j.get(1, 1), -3.0);
    }

    fn fd_check(model: &BlendshapeModel, cam: &Camera, params: &ShapeParams) -> f64 {
        let j = parameter_jacobian(model, cam, params).unwrap();
        let base = params.to_vec();
        let h = 1e-5;
        let mut worst: f64 = 0.0;
        let scale = j.data.iter().fold(0.0f64, |a, b| a.max(b.abs()));
        for c in 0..base.len() {
            let eval = |delta: f64| {
                let mut v = base.clone();
                v[c] += delta;
                let p = ShapeParams::from_slice(model.k_id(), model.k_exp(), &v).unwrap();
                project(cam, &assemble_vertices(model, &p).unwrap()).unwrap()
            };
            let (plus, minus) = (eval(h), eval(-h));
            for i in 0..model.n_vertices() {
                let dx = (plus[i].x - minus[i].x) / (2.0 * h);
                let dy = (plus[i].y - minus[i].y) / (2.0 * h);
                worst = worst.max((dx - j.get(2 * i, c)).abs() / scale);
                worst = worst.max((dy - j.get(2 * i + 1, c)).abs() / scale);
            }
        }
        worst
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..100 {
            let m = random_model(&mut rng, 12, 3, 2);
            let p = random_params(&mut rng, 3, 2);
            let cam = Camera::orthographic(rng.random_range(5.0..30.0), 64.0, 64.0);
            assert!(fd_check(&m, &cam, &p) < 1e-5);
        }
    }

    #[test]
    fn perspective_jacobian_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            let m = random_model(&mut rng, 10, 2, 2);
            let p = random_params(&mut rng, 2, 2);
            let cam = Camera {
                projection: Projection::WeakPerspective {
                    focal: 400.0,
                    depth_offset: 8.0,
                },
                scale: 1.0,
                cx: 64.0,
                cy: 64.0,
            };
            assert!(fd_check(&m, &cam, &p) < 1e-5);
        }
    }

    #[test]
    fn part_points_selects_annotated_vertices() {
        let mut m = tiny_model(vec![[1.0, 0.0, 0.0], [2.0, 0.0, 0.0]], vec![0.0; 6], 1);
        let mut parts = BTreeMap::new();
        parts.insert(PartLabel::Nose, vec![0]);
        parts.insert(PartLabel::LeftEye, vec![]);
        m.set_parts(parts).unwrap();
        let cam = Camera::orthographic(1.0, 0.0, 0.0);
        let ctx = TargetContext::default();
        let p = m.zero_params();
        let f = PartFilter::default();
        let nose = part_points(&m, &cam, &p, PartLabel::Nose, &f, &ctx).unwrap();
        assert_eq!(nose.points.points(), &[Point2::new(1.0, 0.0)]);
        assert_eq!(nose.vertices, vec![0]);
        assert!(part_points(&m, &cam, &p, PartLabel::LeftEye, &f, &ctx).unwrap().points.is_empty());
        assert!(matches!(part_points(&m, &cam, &p, PartLabel::Skin, &f, &ctx), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn filters_drop_hidden_forehead_and_occluded_points() {
        let mean = vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [2.0, 0.0, -5.0], [0.0, 5.0, 0.0], [9.0, 0.0, 0.0]];
        let mut m = tiny_model(mean, vec![0.0; 15], 1);
        let mut parts = BTreeMap::new();
        parts.insert(PartLabel::Skin, vec![0, 1, 2, 3, 4]);
        m.set_parts(parts).unwrap();
        let cam = Camera::orthographic(1.0, 0.0, 10.0);
        let mut targets = PartPointSets::new(20, 20);
        targets.insert(PartLabel::LeftEyebrow, PointSet::from_xy(&[(0.0, 8.0)]).unwrap());
        targets.insert(PartLabel::Skin, PointSet::from_xy(&[(0.0, 10.0), (1.0, 10.0), (2.0, 10.0)]).unwrap());
        let ctx = TargetContext::from_targets(&targets);
        let got = part_points(&m, &cam, &m.zero_params(), PartLabel::Skin, &PartFilter::default(), &ctx).unwrap();
        // vertex 2 hidden (deep), 3 above the eyebrows (y = 5), 4 far from any target pixel
        assert_eq!(got.vertices, vec![0, 1]);
        let loose = PartFilter::visibility_only();
        let got = part_points(&m, &cam, &m.zero_params(), PartLabel::Skin, &loose, &ctx).unwrap();
        assert_eq!(got.vertices, vec![0, 1, 3, 4]);
    }

    #[test]
    fn overlapping_parts_rejected() {
        let mut m = tiny_model(vec![[0.0; 3], [1.0; 3]], vec![0.0; 6], 1);
        let mut parts = BTreeMap::new();
        parts.insert(PartLabel::Nose, vec![0, 1]);
        parts.insert(PartLabel::Skin, vec![1]);
        assert!(m.set_parts(parts).is_err());
        let mut parts = BTreeMap::new();
        parts.insert(PartLabel::Nose, vec![2]);
        assert!(m.set_parts(parts).is_err());
    }
}
