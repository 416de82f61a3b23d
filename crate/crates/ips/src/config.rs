//! JSON experiment configuration.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{IpsError, Result};
use crate::grid::{GridSpec, Point};
use crate::indicators::Selection;
use crate::needle::{make_needle, Needle, NeedleOptions};
use crate::potential::ObstacleSpec;
use crate::rates::{ConeCase, Face};
use crate::sideb::SequenceMethod;
use crate::solver::DEFAULT_TOL;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    #[serde(default = "unit_box")]
    pub extents: [f64; 3],
    pub n: [usize; 3],
}

fn unit_box() -> [f64; 3] {
    [1.0; 3]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PointSet {
    List {
        name: String,
        points: Vec<Point>,
    },
    /// Points approaching `target` from `start`; their distances to the target
    /// shrink geometrically from |start - target| to `min_distance`.
    Line {
        name: String,
        start: Point,
        target: Point,
        count: usize,
        min_distance: f64,
        /// Whether the line should show blow-up; defaults to "target lies on the obstacle boundary".
        #[serde(default)]
        expect_blowup: Option<bool>,
    },
    /// A regular lattice of points, dropping those closer than the margins to
    /// the box boundary or to the obstacle boundary.
    Lattice {
        name: String,
        spacing: f64,
        boundary_margin: f64,
        obstacle_margin: f64,
    },
    /// Uniform random points with the same margins, drawn from the config seed.
    Random {
        name: String,
        count: usize,
        boundary_margin: f64,
        obstacle_margin: f64,
    },
}

impl PointSet {
    pub fn name(&self) -> &str {
        match self {
            PointSet::List { name, .. }
            | PointSet::Line { name, .. }
            | PointSet::Lattice { name, .. }
            | PointSet::Random { name, .. } => name,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NeedleConfig {
    pub name: String,
    pub boundary_point: Point,
    #[serde(default)]
    pub waypoints: Vec<Point>,
    pub tip: Point,
    /// Components j (0-based) to generate.
    #[serde(default = "all_components")]
    pub components: Vec<usize>,
}

fn all_components() -> Vec<usize> {
    vec![0, 1, 2]
}

impl NeedleConfig {
    pub fn build(&self, extents: [f64; 3]) -> Result<Needle> {
        make_needle(extents, self.boundary_point, &self.waypoints, self.tip)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassifyConfig {
    pub points: Vec<Point>,
    #[serde(default = "default_method")]
    pub method: SequenceMethod,
    #[serde(default)]
    pub j: usize,
    /// Sign required of a divergent sequence; `null` accepts either.
    #[serde(default)]
    pub expected_sign: Option<f64>,
    #[serde(default = "default_needle_count")]
    pub needles_per_point: usize,
}

fn default_method() -> SequenceMethod {
    SequenceMethod::Probe
}

fn default_needle_count() -> usize {
    3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RatesConfig {
    pub cones: Vec<ConeCase>,
    pub eps: Vec<f64>,
    pub outer_radius: f64,
    pub faces: Vec<Face>,
    pub face_distances: Vec<f64>,
    pub quadrature_tol: f64,
    /// Distances for the I1 approach; evaluated on the configured grid, skipped if empty.
    pub i1_distances: Vec<f64>,
}

impl Default for RatesConfig {
    fn default() -> Self {
        RatesConfig {
            cones: crate::rates::default_cone_cases(),
            eps: crate::rates::default_cone_eps(),
            outer_radius: 1.0,
            faces: vec![Face { axis: 2, upper: false }],
            face_distances: crate::rates::default_face_distances(),
            quadrature_tol: 1e-4,
            i1_distances: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub tol: f64,
    pub max_iter: usize,
    /// Smallest admissible |eigenvalue| of the discrete Dirichlet operator.
    pub wellposed_floor: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig { tol: DEFAULT_TOL, max_iter: 20_000, wellposed_floor: 1e-6 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForwardConfig {
    /// Random Dirichlet data sets solved by `forward`.
    pub samples: usize,
    /// Random exterior sources used for the L1-control constant.
    pub l1_samples: usize,
}

impl Default for ForwardConfig {
    fn default() -> Self {
        ForwardConfig { samples: 4, l1_samples: 8 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub name: String,
    pub grid: GridConfig,
    #[serde(default = "ObstacleSpec::empty")]
    pub obstacle: ObstacleSpec,
    #[serde(default)]
    pub points: Vec<PointSet>,
    #[serde(default)]
    pub indicators: Selection,
    #[serde(default)]
    pub needles: Vec<NeedleConfig>,
    #[serde(default)]
    pub needle_options: NeedleOptions,
    #[serde(default)]
    pub classify: Option<ClassifyConfig>,
    #[serde(default)]
    pub rates: RatesConfig,
    #[serde(default)]
    pub forward: ForwardConfig,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub seed: u64,
}

fn cfg_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(IpsError::Config(msg.into()))
}

fn strictly_inside(extents: [f64; 3], x: Point) -> bool {
    (0..3).all(|a| x[a] > 0.0 && x[a] < extents[a] && x[a].is_finite())
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let c: ExperimentConfig = serde_json::from_str(text).map_err(|e| IpsError::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| IpsError::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Hex SHA-256 of the compact JSON form.
    pub fn hash(&self) -> String {
        let text = serde_json::to_string(self).expect("config serializes");
        let d = Sha256::digest(text.as_bytes());
        d.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let e = self.grid.extents;
        if e.iter().any(|x| !(*x > 0.0) || !x.is_finite()) {
            return cfg_err("grid extents must be positive");
        }
        if self.grid.n.iter().any(|&n| n < 3) {
            return cfg_err("grid needs at least 3 interior points per axis");
        }
        self.obstacle.validate(e).map_err(|err| IpsError::Config(err.to_string()))?;
        let mut names = std::collections::BTreeSet::new();
        for s in &self.points {
            if !names.insert(s.name().to_string()) {
                return cfg_err(format!("duplicate point set name {}", s.name()));
            }
            match s {
                PointSet::List { points, .. } => {
                    if let Some(p) = points.iter().find(|p| !strictly_inside(e, **p)) {
                        return cfg_err(format!("point {p:?} is not inside the domain"));
                    }
                }
                PointSet::Line { start, target, count, min_distance, .. } => {
                    if *count < 4 {
                        return cfg_err("a line needs at least 4 points");
                    }
                    let len = dist(*start, *target);
                    if !(*min_distance > 0.0 && *min_distance < len) {
                        return cfg_err("line min_distance must lie in (0, |start - target|)");
                    }
                    if !strictly_inside(e, *start) {
                        return cfg_err(format!("line start {start:?} is not inside the domain"));
                    }
                    let closest = lerp(*target, *start, min_distance / len);
                    if !strictly_inside(e, closest) {
                        return cfg_err("line points leave the domain");
                    }
                }
                PointSet::Lattice { spacing, boundary_margin, obstacle_margin, .. } => {
                    if !(*spacing > 0.0) || *boundary_margin < 0.0 || *obstacle_margin < 0.0 {
                        return cfg_err("lattice spacing must be positive and margins non-negative");
                    }
                }
                PointSet::Random { count, boundary_margin, obstacle_margin, .. } => {
                    if *count == 0 || *boundary_margin < 0.0 || *obstacle_margin < 0.0 {
                        return cfg_err("random sets need a positive count and non-negative margins");
                    }
                }
            }
        }
        for n in &self.needles {
            n.build(e).map_err(|err| IpsError::Config(format!("needle {}: {err}", n.name)))?;
            if n.components.is_empty() || n.components.iter().any(|&j| j > 2) {
                return cfg_err(format!("needle {}: components must be a non-empty subset of 0, 1, 2", n.name));
            }
        }
        self.needle_options.validate().map_err(|err| IpsError::Config(err.to_string()))?;
        if let Some(c) = &self.classify {
            if c.j > 2 {
                return cfg_err("classify.j must be 0, 1 or 2");
            }
            if !(1..=3).contains(&c.needles_per_point) {
                return cfg_err("classify.needles_per_point must be 1, 2 or 3");
            }
            if let Some(s) = c.expected_sign {
                if s.abs() != 1.0 {
                    return cfg_err("classify.expected_sign must be 1 or -1");
                }
            }
            if let Some(p) = c.points.iter().find(|p| !strictly_inside(e, **p)) {
                return cfg_err(format!("classification point {p:?} is not inside the domain"));
            }
        }
        let r = &self.rates;
        if !(r.outer_radius > 0.0) || !(r.quadrature_tol > 0.0) {
            return cfg_err("rates.outer_radius and rates.quadrature_tol must be positive");
        }
        if r.eps.iter().any(|x| !(*x > 0.0 && *x < r.outer_radius)) {
            return cfg_err("rates.eps must lie in (0, outer_radius)");
        }
        if r.faces.iter().any(|f| f.axis > 2) {
            return cfg_err("rates.faces axis must be 0, 1 or 2");
        }
        for d in r.face_distances.iter().chain(&r.i1_distances) {
            if !(*d > 0.0 && 2.0 * d < e.iter().cloned().fold(f64::INFINITY, f64::min)) {
                return cfg_err("rates distances must be positive and below half the box");
            }
        }
        if !(self.solver.tol > 0.0) || !(self.solver.wellposed_floor > 0.0) || self.solver.max_iter == 0 {
            return cfg_err("solver tolerances must be positive");
        }
        Ok(())
    }

    /// Expands the point sets into (set, index, point). Points are moved off
    /// the lattice nodes by `grid.place_probe`.
    pub fn expand_points(&self, grid: &GridSpec) -> Vec<(String, usize, Point)> {
        let mut out = Vec::new();
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        for s in &self.points {
            let pts: Vec<Point> = match s {
                PointSet::List { points, .. } => points.clone(),
                PointSet::Line { start, target, count, min_distance, .. } => line_points(*start, *target, *count, *min_distance),
                PointSet::Lattice { spacing, boundary_margin, obstacle_margin, .. } => {
                    let e = grid.extents;
                    let counts: Vec<usize> = (0..3).map(|a| (e[a] / spacing).floor() as usize).collect();
                    let mut v = Vec::new();
                    for k in 0..counts[2] {
                        for j in 0..counts[1] {
                            for i in 0..counts[0] {
                                let p = [(i as f64 + 0.5) * spacing, (j as f64 + 0.5) * spacing, (k as f64 + 0.5) * spacing];
                                if self.admissible(grid, p, *boundary_margin, *obstacle_margin) {
                                    v.push(p);
                                }
                            }
                        }
                    }
                    v
                }
                PointSet::Random { count, boundary_margin, obstacle_margin, .. } => {
                    let e = grid.extents;
                    let mut v = Vec::new();
                    let mut tries = 0;
                    while v.len() < *count && tries < 1000 * count {
                        tries += 1;
                        let p = [rng.gen::<f64>() * e[0], rng.gen::<f64>() * e[1], rng.gen::<f64>() * e[2]];
                        if self.admissible(grid, p, *boundary_margin, *obstacle_margin) {
                            v.push(p);
                        }
                    }
                    v
                }
            };
            for (i, p) in pts.into_iter().enumerate() {
                out.push((s.name().to_string(), i, grid.place_probe(p)));
            }
        }
        out
    }

    fn admissible(&self, grid: &GridSpec, p: Point, boundary_margin: f64, obstacle_margin: f64) -> bool {
        grid.distance_to_boundary(p) >= boundary_margin
            && (self.obstacle.components.is_empty() || self.obstacle.distance(p).abs() >= obstacle_margin)
    }
}

fn dist(a: Point, b: Point) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

fn lerp(a: Point, b: Point, t: f64) -> Point {
    [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1]), a[2] + t * (b[2] - a[2])]
}

/// Points at distances len * q^k from the target, k = 0..count, ending at `min_distance`.
pub fn line_points(start: Point, target: Point, count: usize, min_distance: f64) -> Vec<Point> {
    let len = dist(start, target);
    let q = (min_distance / len).powf(1.0 / (count - 1) as f64);
    (0..count).map(|k| lerp(target, start, q.powi(k as i32))).collect()
}
