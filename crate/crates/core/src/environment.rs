//! Obstacle environments and the ground-truth implicit-surface oracle.
//!
//! An [`EnvironmentSpec`] is a set of pairwise-disjoint obstacles (ellipses or
//! simple polygons) inside an axis-aligned world rectangle. The signed distance
//! returned by [`EnvironmentSpec::signed_distance`] is metric: positive outside,
//! zero on the boundary, negative inside. It is evaluated against a dense
//! boundary polyline, so its accuracy is bounded by the chord error of the
//! discretization.

use std::f64::consts::{PI, TAU};
use std::sync::OnceLock;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::Vec2;

/// Default number of segments used to discretize an ellipse boundary.
pub const DEFAULT_BOUNDARY_SEGMENTS: usize = 2048;

/// Segments used for the coarse disjointness test while sampling.
const SAMPLING_OUTLINE_SEGMENTS: usize = 256;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum Obstacle {
    Ellipse {
        /// (c_x, c_y), meters.
        semi_axes: [f64; 2],
        center: [f64; 2],
        /// Radians; the c_x axis points along (cos θ, sin θ).
        rotation: f64,
    },
    Polygon {
        /// Counter-clockwise vertex list, meters.
        vertices: Vec<[f64; 2]>,
    },
}

impl Obstacle {
    pub fn ellipse(cx: f64, cy: f64, center: Vec2, rotation: f64) -> Self {
        Obstacle::Ellipse {
            semi_axes: [cx, cy],
            center: [center.x, center.y],
            rotation,
        }
    }

    pub fn circle(radius: f64, center: Vec2) -> Self {
        Self::ellipse(radius, radius, center, 0.0)
    }

    pub fn polygon(vertices: &[Vec2]) -> Self {
        Obstacle::Polygon {
            vertices: vertices.iter().map(|v| [v.x, v.y]).collect(),
        }
    }

    /// Checks the type invariants: positive semi-axes, or a simple polygon
    /// with at least three vertices.
    pub fn validate(&self) -> Result<()> {
        match self {
            Obstacle::Ellipse {
                semi_axes,
                center,
                rotation,
            } => {
                if !(semi_axes[0] > 0.0 && semi_axes[1] > 0.0) {
                    return Err(Error::ConfigInvalid(format!(
                        "ellipse semi-axes must be positive, got {semi_axes:?}"
                    )));
                }
                if !(center.iter().all(|c| c.is_finite()) && rotation.is_finite()) {
                    return Err(Error::ConfigInvalid("non-finite ellipse parameters".into()));
                }
                Ok(())
            }
            Obstacle::Polygon { vertices } => {
                if vertices.len() < 3 {
                    return Err(Error::ConfigInvalid(
                        "polygon needs at least 3 vertices".into(),
                    ));
                }
                let pts: Vec<Vec2> = vertices.iter().map(|v| Vec2::new(v[0], v[1])).collect();
                if !is_simple_polygon(&pts) {
                    return Err(Error::ConfigInvalid("polygon is self-intersecting".into()));
                }
                Ok(())
            }
        }
    }

    /// Rotated normalized quadratic form of an ellipse minus one. Zero on the
    /// boundary, negative inside. Not a distance.
    pub fn level_value(&self, z: Vec2) -> Result<f64> {
        match self {
            Obstacle::Ellipse {
                semi_axes,
                center,
                rotation,
            } => {
                let (s, c) = rotation.sin_cos();
                let dx = z.x - center[0];
                let dy = z.y - center[1];
                let u = dx * c + dy * s;
                let v = dx * s - dy * c;
                Ok((u / semi_axes[0]).powi(2) + (v / semi_axes[1]).powi(2) - 1.0)
            }
            Obstacle::Polygon { .. } => Err(Error::WrongKind),
        }
    }

    pub fn contains(&self, z: Vec2) -> bool {
        match self {
            Obstacle::Ellipse { .. } => self.level_value(z).map(|v| v < 0.0).unwrap_or(false),
            Obstacle::Polygon { vertices } => point_in_polygon(vertices, z),
        }
    }

    /// Closed boundary polyline (the last vertex connects back to the first).
    /// Polygons ignore `segments` and return their own vertices.
    pub fn outline(&self, segments: usize) -> Vec<Vec2> {
        match self {
            Obstacle::Ellipse {
                semi_axes,
                center,
                rotation,
            } => {
                let (s, c) = rotation.sin_cos();
                (0..segments)
                    .map(|k| {
                        let t = TAU * k as f64 / segments as f64;
                        let u = semi_axes[0] * t.cos();
                        let v = semi_axes[1] * t.sin();
                        Vec2::new(center[0] + u * c - v * s, center[1] + u * s + v * c)
                    })
                    .collect()
            }
            Obstacle::Polygon { vertices } => {
                vertices.iter().map(|v| Vec2::new(v[0], v[1])).collect()
            }
        }
    }

    /// Smallest nonnegative ray parameter at which `origin + t·dir` meets the
    /// boundary. `dir` must be a unit vector.
    pub fn ray_intersect(&self, origin: Vec2, dir: Vec2) -> Option<f64> {
        match self {
            Obstacle::Ellipse {
                semi_axes,
                center,
                rotation,
            } => {
                // Map into the frame where the ellipse is the unit circle; the
                // map is affine so the ray parameter is preserved.
                let (s, c) = rotation.sin_cos();
                let ox = origin.x - center[0];
                let oy = origin.y - center[1];
                let o = Vec2::new(
                    (ox * c + oy * s) / semi_axes[0],
                    (-ox * s + oy * c) / semi_axes[1],
                );
                let d = Vec2::new(
                    (dir.x * c + dir.y * s) / semi_axes[0],
                    (-dir.x * s + dir.y * c) / semi_axes[1],
                );
                let a = d.norm_squared();
                let b = o.dot(&d);
                let cc = o.norm_squared() - 1.0;
                let disc = b * b - a * cc;
                if disc < 0.0 {
                    return None;
                }
                let sq = disc.sqrt();
                // Numerically stable pair of roots.
                let q = if b > 0.0 { -(b + sq) } else { -b + sq };
                let (mut t0, mut t1) = if q == 0.0 {
                    (0.0, 0.0)
                } else {
                    (q / a, cc / q)
                };
                if t0 > t1 {
                    std::mem::swap(&mut t0, &mut t1);
                }
                if t0 >= 0.0 {
                    Some(t0)
                } else if t1 >= 0.0 {
                    Some(t1)
                } else {
                    None
                }
            }
            Obstacle::Polygon { vertices } => {
                let n = vertices.len();
                let mut best: Option<f64> = None;
                for i in 0..n {
                    let a = Vec2::new(vertices[i][0], vertices[i][1]);
                    let b = Vec2::new(vertices[(i + 1) % n][0], vertices[(i + 1) % n][1]);
                    if let Some(t) = ray_segment(origin, dir, a, b) {
                        if best.is_none_or(|bt| t < bt) {
                            best = Some(t);
                        }
                    }
                }
                best
            }
        }
    }

    /// Radius of a circle about [`Obstacle::centroid`] that encloses the obstacle.
    pub fn bounding_radius(&self) -> f64 {
        match self {
            Obstacle::Ellipse { semi_axes, .. } => semi_axes[0].max(semi_axes[1]),
            Obstacle::Polygon { vertices } => {
                let c = self.centroid();
                vertices
                    .iter()
                    .map(|v| (Vec2::new(v[0], v[1]) - c).norm())
                    .fold(0.0, f64::max)
            }
        }
    }

    /// Center for ellipses, vertex mean for polygons.
    pub fn centroid(&self) -> Vec2 {
        match self {
            Obstacle::Ellipse { center, .. } => Vec2::new(center[0], center[1]),
            Obstacle::Polygon { vertices } => {
                let n = vertices.len() as f64;
                let sx: f64 = vertices.iter().map(|v| v[0]).sum();
                let sy: f64 = vertices.iter().map(|v| v[1]).sum();
                Vec2::new(sx / n, sy / n)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub min: [f64; 2],
    pub max: [f64; 2],
}

impl Bounds {
    pub fn square(half_width: f64) -> Self {
        Bounds {
            min: [-half_width, -half_width],
            max: [half_width, half_width],
        }
    }

    pub fn contains(&self, z: Vec2) -> bool {
        z.x >= self.min[0] && z.x <= self.max[0] && z.y >= self.min[1] && z.y <= self.max[1]
    }
}

impl Default for Bounds {
    fn default() -> Self {
        Bounds::square(4.0)
    }
}

fn default_segments() -> usize {
    DEFAULT_BOUNDARY_SEGMENTS
}

/// A sampled (or hand-built) obstacle environment.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EnvironmentSpec {
    pub obstacles: Vec<Obstacle>,
    pub world_bounds: Bounds,
    pub rng_seed: u64,
    #[serde(default = "default_segments")]
    pub boundary_segments: usize,
    #[serde(skip)]
    outlines: OnceLock<Vec<Vec<Vec2>>>,
}

impl PartialEq for EnvironmentSpec {
    fn eq(&self, other: &Self) -> bool {
        self.obstacles == other.obstacles
            && self.world_bounds == other.world_bounds
            && self.rng_seed == other.rng_seed
            && self.boundary_segments == other.boundary_segments
    }
}

impl EnvironmentSpec {
    pub fn new(obstacles: Vec<Obstacle>, world_bounds: Bounds, rng_seed: u64) -> Self {
        EnvironmentSpec {
            obstacles,
            world_bounds,
            rng_seed,
            boundary_segments: DEFAULT_BOUNDARY_SEGMENTS,
            outlines: OnceLock::new(),
        }
    }

    pub fn empty() -> Self {
        Self::new(Vec::new(), Bounds::default(), 0)
    }

    pub fn with_boundary_segments(mut self, segments: usize) -> Self {
        self.boundary_segments = segments;
        self.outlines = OnceLock::new();
        self
    }

    pub fn len(&self) -> usize {
        self.obstacles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.obstacles.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        for o in &self.obstacles {
            o.validate()?;
        }
        if self.boundary_segments < 3 {
            return Err(Error::ConfigInvalid("boundary_segments must be ≥ 3".into()));
        }
        Ok(())
    }

    /// Dense boundary polylines, one per obstacle, built on first use.
    pub fn outlines(&self) -> &[Vec<Vec2>] {
        self.outlines.get_or_init(|| {
            self.obstacles
                .iter()
                .map(|o| o.outline(self.boundary_segments))
                .collect()
        })
    }

    /// Largest chord length over all ellipse outlines (polygons are exact).
    pub fn chord_length(&self) -> f64 {
        self.obstacles
            .iter()
            .zip(self.outlines())
            .filter(|(o, _)| matches!(o, Obstacle::Ellipse { .. }))
            .flat_map(|(_, pts)| {
                (0..pts.len()).map(move |i| (pts[(i + 1) % pts.len()] - pts[i]).norm())
            })
            .fold(0.0, f64::max)
    }

    /// Metric signed distance to obstacle `index`: +d outside, −d inside.
    ///
    /// Panics if `index` is out of range.
    pub fn signed_distance(&self, index: usize, z: Vec2) -> f64 {
        let d = polyline_distance(&self.outlines()[index], z);
        if self.obstacles[index].contains(z) {
            -d
        } else {
            d
        }
    }

    /// Minimum signed distance over all obstacles (+∞ when empty).
    pub fn min_signed_distance(&self, z: Vec2) -> f64 {
        (0..self.obstacles.len())
            .map(|i| self.signed_distance(i, z))
            .fold(f64::INFINITY, f64::min)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let env: EnvironmentSpec = serde_json::from_str(s)?;
        env.validate()?;
        Ok(env)
    }
}

/// Shape family drawn by [`sample_environment`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapeFamily {
    Ellipse,
    Polygon,
    /// Fair coin between the two.
    Mixed,
}

/// Uniform sampling ranges for obstacle parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DistributionParams {
    pub semi_axis: [f64; 2],
    pub center: [f64; 2],
    pub rotation: [f64; 2],
    pub shape: ShapeFamily,
    /// Inclusive vertex-count range for star-shaped polygons.
    pub polygon_vertices: [usize; 2],
    /// Minimum surface-to-surface gap between obstacles, meters.
    pub clearance: f64,
    pub max_attempts: usize,
    pub world_bounds: Bounds,
}

impl Default for DistributionParams {
    fn default() -> Self {
        DistributionParams {
            semi_axis: [0.4, 0.8],
            center: [-0.8, 0.8],
            rotation: [0.0, TAU],
            shape: ShapeFamily::Ellipse,
            polygon_vertices: [5, 8],
            clearance: 0.1,
            max_attempts: 10_000,
            world_bounds: Bounds::default(),
        }
    }
}

impl DistributionParams {
    pub fn validate(&self) -> Result<()> {
        let intervals = [
            ("semi_axis", self.semi_axis),
            ("center", self.center),
            ("rotation", self.rotation),
        ];
        for (name, [lo, hi]) in intervals {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return Err(Error::ConfigInvalid(format!(
                    "{name} interval [{lo}, {hi}] is empty"
                )));
            }
        }
        if self.semi_axis[0] <= 0.0 {
            return Err(Error::ConfigInvalid("semi-axes must be positive".into()));
        }
        if self.polygon_vertices[0] < 3 || self.polygon_vertices[0] > self.polygon_vertices[1] {
            return Err(Error::ConfigInvalid("polygon vertex range invalid".into()));
        }
        if self.clearance < 0.0 {
            return Err(Error::ConfigInvalid("clearance must be ≥ 0".into()));
        }
        Ok(())
    }

    /// Draws one obstacle (no disjointness check).
    pub fn sample_obstacle<R: Rng + ?Sized>(&self, rng: &mut R) -> Obstacle {
        let polygon = match self.shape {
            ShapeFamily::Ellipse => false,
            ShapeFamily::Polygon => true,
            ShapeFamily::Mixed => rng.random_bool(0.5),
        };
        let center = Vec2::new(uniform(rng, self.center), uniform(rng, self.center));
        if !polygon {
            let cx = uniform(rng, self.semi_axis);
            let cy = uniform(rng, self.semi_axis);
            let rot = uniform(rng, self.rotation);
            return Obstacle::ellipse(cx, cy, center, rot);
        }
        let n = rng.random_range(self.polygon_vertices[0]..=self.polygon_vertices[1]);
        let scale = uniform(rng, self.semi_axis);
        let rot = uniform(rng, self.rotation);
        // Star-shaped about the center: jittered, strictly increasing angles
        // and radii in [0.6, 1]·scale keep the polygon simple and CCW.
        let vertices: Vec<Vec2> = (0..n)
            .map(|k| {
                let jitter: f64 = rng.random_range(-0.3..0.3);
                let angle = TAU * (k as f64 + 0.5 + jitter) / n as f64 + rot;
                let r = scale * rng.random_range(0.6..=1.0);
                center + Vec2::new(r * angle.cos(), r * angle.sin())
            })
            .collect();
        Obstacle::polygon(&vertices)
    }
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, [lo, hi]: [f64; 2]) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..hi)
    }
}

/// Samples `n_obs` pairwise-disjoint obstacles by rejection, deterministically
/// for a given seed.
pub fn sample_environment(
    params: &DistributionParams,
    n_obs: usize,
    seed: u64,
) -> Result<EnvironmentSpec> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut accepted: Vec<Obstacle> = Vec::with_capacity(n_obs);
    let mut outlines: Vec<Vec<Vec2>> = Vec::with_capacity(n_obs);
    let mut attempts = 0;
    while accepted.len() < n_obs {
        if attempts >= params.max_attempts {
            return Err(Error::SamplingBudgetExceeded {
                requested: n_obs,
                attempts,
            });
        }
        attempts += 1;
        let cand = params.sample_obstacle(&mut rng);
        let cand_outline = cand.outline(SAMPLING_OUTLINE_SEGMENTS);
        if !cand_outline.iter().all(|p| params.world_bounds.contains(*p)) {
            continue;
        }
        let ok = accepted.iter().zip(&outlines).all(|(o, out)| {
            separated(&cand, &cand_outline, o, out, params.clearance)
        });
        if ok {
            accepted.push(cand);
            outlines.push(cand_outline);
        }
    }
    Ok(EnvironmentSpec::new(accepted, params.world_bounds, seed))
}

fn separated(a: &Obstacle, a_out: &[Vec2], b: &Obstacle, b_out: &[Vec2], clearance: f64) -> bool {
    let gap = (a.centroid() - b.centroid()).norm();
    if gap > a.bounding_radius() + b.bounding_radius() + clearance {
        return true;
    }
    // Minimum distance between two closed polylines is attained at a vertex of
    // one of them unless they cross, which the containment test catches.
    let clear = |pts: &[Vec2], other: &Obstacle, other_out: &[Vec2]| {
        pts.iter()
            .all(|&p| !other.contains(p) && polyline_distance(other_out, p) > clearance)
    };
    clear(a_out, b, b_out) && clear(b_out, a, a_out)
}

pub(crate) fn point_segment_distance_sq(p: Vec2, a: Vec2, b: Vec2) -> f64 {
    let ab = b - a;
    let len2 = ab.norm_squared();
    let t = if len2 > 0.0 {
        ((p - a).dot(&ab) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    (a + ab * t - p).norm_squared()
}

/// Distance from `z` to a closed polyline.
pub fn polyline_distance(pts: &[Vec2], z: Vec2) -> f64 {
    let n = pts.len();
    let mut best = f64::INFINITY;
    for i in 0..n {
        let d = point_segment_distance_sq(z, pts[i], pts[(i + 1) % n]);
        if d < best {
            best = d;
        }
    }
    best.sqrt()
}

fn point_in_polygon(vertices: &[[f64; 2]], z: Vec2) -> bool {
    let n = vertices.len();
    let mut inside = false;
    let mut j = n - 1;
    for i in 0..n {
        let (xi, yi) = (vertices[i][0], vertices[i][1]);
        let (xj, yj) = (vertices[j][0], vertices[j][1]);
        if (yi > z.y) != (yj > z.y) && z.x < (xj - xi) * (z.y - yi) / (yj - yi) + xi {
            inside = !inside;
        }
        j = i;
    }
    inside
}

fn cross(a: Vec2, b: Vec2) -> f64 {
    a.x * b.y - a.y * b.x
}

fn ray_segment(origin: Vec2, dir: Vec2, a: Vec2, b: Vec2) -> Option<f64> {
    let e = b - a;
    let denom = cross(dir, e);
    if denom.abs() < 1e-15 {
        return None;
    }
    let w = a - origin;
    let t = cross(w, e) / denom;
    let s = cross(w, dir) / denom;
    if t >= 0.0 && (0.0..=1.0).contains(&s) {
        Some(t)
    } else {
        None
    }
}

fn segments_cross(p1: Vec2, p2: Vec2, q1: Vec2, q2: Vec2) -> bool {
    let d1 = cross(q2 - q1, p1 - q1);
    let d2 = cross(q2 - q1, p2 - q1);
    let d3 = cross(p2 - p1, q1 - p1);
    let d4 = cross(p2 - p1, q2 - p1);
    d1 * d2 < 0.0 && d3 * d4 < 0.0
}

fn is_simple_polygon(pts: &[Vec2]) -> bool {
    let n = pts.len();
    for i in 0..n {
        for j in i + 1..n {
            // adjacent edges share a vertex
            if j == i + 1 || (i == 0 && j == n - 1) {
                continue;
            }
            if segments_cross(pts[i], pts[(i + 1) % n], pts[j], pts[(j + 1) % n]) {
                return false;
            }
        }
    }
    true
}

/// Angle wrapped to (−π, π].
pub fn wrap_angle(a: f64) -> f64 {
    let mut w = a.rem_euclid(TAU);
    if w > PI {
        w -= TAU;
    }
    w
}
