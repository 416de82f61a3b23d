//! Obstacle geometry, sampled potential and the well-posedness check.

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{invalid, IpsError, Result};
use crate::grid::{GridSpec, Point, ScalarField};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Shape {
    Ball { center: Point, radius: f64 },
    Box { lo: Point, hi: Point },
}

impl Shape {
    /// Exact signed distance, negative inside.
    pub fn signed_distance(&self, z: Point) -> f64 {
        match *self {
            Shape::Ball { center, radius } => {
                let d = [z[0] - center[0], z[1] - center[1], z[2] - center[2]];
                (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt() - radius
            }
            Shape::Box { lo, hi } => {
                let mut out = 0.0;
                let mut inner = f64::NEG_INFINITY;
                for a in 0..3 {
                    let c = 0.5 * (lo[a] + hi[a]);
                    let half = 0.5 * (hi[a] - lo[a]);
                    let q = (z[a] - c).abs() - half;
                    out += q.max(0.0) * q.max(0.0);
                    inner = inner.max(q);
                }
                out.sqrt() + inner.min(0.0)
            }
        }
    }

    fn bounds(&self) -> (Point, Point) {
        match *self {
            Shape::Ball { center, radius } => (
                [center[0] - radius, center[1] - radius, center[2] - radius],
                [center[0] + radius, center[1] + radius, center[2] + radius],
            ),
            Shape::Box { lo, hi } => (lo, hi),
        }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            Shape::Ball { radius, .. } if !(radius > 0.0) => invalid("ball radius must be positive"),
            Shape::Box { lo, hi } if (0..3).any(|a| !(hi[a] > lo[a])) => invalid("box corners must satisfy lo < hi"),
            _ => Ok(()),
        }
    }

    /// Lower bound on the distance between two shapes (exact for ball pairs).
    fn separation(&self, other: &Shape) -> f64 {
        match (*self, *other) {
            (Shape::Ball { center: c1, radius: r1 }, Shape::Ball { center: c2, radius: r2 }) => {
                let d = [c1[0] - c2[0], c1[1] - c2[1], c1[2] - c2[2]];
                (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt() - r1 - r2
            }
            (Shape::Ball { center, radius }, b @ Shape::Box { .. }) | (b @ Shape::Box { .. }, Shape::Ball { center, radius }) => {
                b.signed_distance(center) - radius
            }
            (Shape::Box { lo: l1, hi: h1 }, Shape::Box { lo: l2, hi: h2 }) => {
                let mut s = 0.0;
                for a in 0..3 {
                    let gap = (l2[a] - h1[a]).max(l1[a] - h2[a]).max(0.0);
                    s += gap * gap;
                }
                if s > 0.0 {
                    s.sqrt()
                } else {
                    -1.0
                }
            }
        }
    }
}

/// One signed component of the obstacle. The potential equals `amplitude`
/// inside the collar and `amplitude + variation * bump` deeper in.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Component {
    pub shape: Shape,
    pub amplitude: f64,
    #[serde(default)]
    pub variation: f64,
}

impl Component {
    pub fn sign(&self) -> f64 {
        self.amplitude.signum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObstacleSpec {
    pub components: Vec<Component>,
    /// Thickness of the boundary collar in which |V| >= jump floor.
    #[serde(default = "default_collar")]
    pub collar: f64,
}

fn default_collar() -> f64 {
    0.05
}

impl ObstacleSpec {
    pub fn empty() -> Self {
        ObstacleSpec { components: Vec::new(), collar: default_collar() }
    }

    pub fn single(shape: Shape, amplitude: f64) -> Self {
        ObstacleSpec { components: vec![Component { shape, amplitude, variation: 0.0 }], collar: default_collar() }
    }

    pub fn validate(&self, extents: [f64; 3]) -> Result<()> {
        if !(self.collar > 0.0) {
            return invalid("collar thickness must be positive");
        }
        for (i, c) in self.components.iter().enumerate() {
            c.shape.validate()?;
            if c.amplitude == 0.0 || !c.amplitude.is_finite() {
                return invalid(format!("component {i} needs a non-zero finite amplitude"));
            }
            let (lo, hi) = c.shape.bounds();
            for a in 0..3 {
                if !(lo[a] > 0.0 && hi[a] < extents[a]) {
                    return invalid(format!("component {i} touches or crosses the domain boundary"));
                }
            }
        }
        for (i, a) in self.components.iter().enumerate() {
            for b in &self.components[i + 1..] {
                if a.sign() != b.sign() && !(a.shape.separation(&b.shape) > 0.0) {
                    return invalid("components with opposite jump signs must have disjoint closures");
                }
            }
        }
        Ok(())
    }

    /// Signed distance to the boundary of the union, positive outside.
    pub fn distance(&self, z: Point) -> f64 {
        self.components.iter().map(|c| c.shape.signed_distance(z)).fold(f64::INFINITY, f64::min)
    }

    pub fn value_at(&self, z: Point) -> f64 {
        let mut v = 0.0;
        for c in &self.components {
            let sd = c.shape.signed_distance(z);
            if sd < 0.0 {
                let depth = -sd;
                let s = ((depth - self.collar) / self.collar).clamp(0.0, 1.0);
                let bump = s * s * (3.0 - 2.0 * s);
                v = c.amplitude + c.variation * bump;
                break;
            }
        }
        v
    }
}

#[derive(Debug, Clone)]
pub struct PotentialSpec {
    pub grid: Arc<GridSpec>,
    pub obstacle: ObstacleSpec,
    pub v: ScalarField,
    pub jump_floor: f64,
    hash: [u8; 32],
}

impl PotentialSpec {
    pub fn content_hash(&self) -> [u8; 32] {
        self.hash
    }

    /// Mask of nodes where V is non-zero.
    pub fn support(&self) -> Vec<bool> {
        self.v.values.iter().map(|&v| v != 0.0).collect()
    }

    pub fn is_zero(&self) -> bool {
        self.v.values.iter().all(|&v| v == 0.0)
    }

    pub fn distance_to_obstacle_boundary(&self, x: Point) -> f64 {
        self.obstacle.distance(x)
    }

    /// Mask of nodes inside the component shapes (the obstacle D).
    pub fn obstacle_mask(&self) -> Vec<bool> {
        (0..self.grid.len()).map(|p| self.obstacle.distance(self.grid.coords(p)) < 0.0).collect()
    }

    /// Potential with the same grid and an arbitrary nodal field (interior nodes only).
    pub fn from_values(grid: Arc<GridSpec>, values: Vec<f64>, jump_floor: f64) -> Result<Self> {
        let mut v = ScalarField::new(&grid, values)?;
        for &p in grid.boundary() {
            v.values[p] = 0.0;
        }
        let hash = hash_potential(&grid, &v);
        Ok(PotentialSpec { grid, obstacle: ObstacleSpec::empty(), v, jump_floor, hash })
    }
}

fn hash_potential(grid: &GridSpec, v: &ScalarField) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(b"potential-v1");
    h.update(grid.content_hash());
    for x in &v.values {
        h.update(x.to_le_bytes());
    }
    h.finalize().into()
}

pub fn sample_potential(grid: Arc<GridSpec>, obstacle: ObstacleSpec) -> Result<PotentialSpec> {
    obstacle.validate(grid.extents)?;
    let v = grid.sample(|z| obstacle.value_at(z));
    let jump_floor = obstacle.components.iter().map(|c| c.amplitude.abs()).fold(f64::INFINITY, f64::min);
    let jump_floor = if jump_floor.is_finite() { jump_floor } else { 0.0 };
    let hash = hash_potential(&grid, &v);
    Ok(PotentialSpec { grid, obstacle, v, jump_floor, hash })
}

pub fn distance_to_obstacle_boundary(obstacle: &ObstacleSpec, x: Point) -> f64 {
    obstacle.distance(x)
}

/// Outcome of the inverse iteration.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct Wellposedness {
    pub lambda_min: f64,
    pub iterations: usize,
}

/// Smallest-magnitude eigenvalue of the discrete Dirichlet operator by inverse
/// iteration; fails if |lambda| is below `floor`.
pub fn check_wellposed(op: &crate::solver::SchrodingerOperator, floor: f64) -> Result<Wellposedness> {
    let grid = op.grid();
    let mut x = ScalarField::zeros(grid);
    for &p in grid.interior() {
        let z = grid.coords(p);
        let mut s = 1.0;
        for a in 0..3 {
            s *= (std::f64::consts::PI * z[a] / grid.extents[a]).sin();
        }
        // small deterministic perturbation so the start is not orthogonal to the target mode
        x.values[p] = s + 1e-3 * ((p * 2654435761) % 1000) as f64 / 1000.0;
    }
    normalize(&mut x);
    let mut lambda = f64::NAN;
    let max_iter = 200;
    for it in 1..=max_iter {
        let y = op.solve_interior(&x, 1e-10)?;
        let ay = op.apply(&y);
        let num = crate::reduce::dot(&y.values, &ay.values);
        let den = crate::reduce::dot(&y.values, &y.values);
        let next = num / den;
        let mut y = y;
        normalize(&mut y);
        let done = (next - lambda).abs() <= 1e-7 * next.abs().max(1e-300);
        lambda = next;
        x = y;
        if done {
            if lambda.abs() < floor {
                return Err(IpsError::NotWellPosed { lambda, floor });
            }
            return Ok(Wellposedness { lambda_min: lambda, iterations: it });
        }
    }
    if lambda.abs() < floor {
        return Err(IpsError::NotWellPosed { lambda, floor });
    }
    Err(IpsError::EigenNoConvergence { iters: max_iter, lambda })
}

fn normalize(x: &mut ScalarField) {
    let n = crate::reduce::dot(&x.values, &x.values).sqrt();
    for v in x.values.iter_mut() {
        *v /= n;
    }
}
