//! Structured lattice on the box [0,L0]x[0,L1]x[0,L2], 7-point operators and quadrature.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{invalid, Result};
use crate::reduce;

pub type Point = [f64; 3];

/// Outward normal of a boundary node: axis and sign (+1 on the far face).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Normal {
    pub axis: usize,
    pub sign: i8,
}

impl Normal {
    pub fn vector(&self) -> Point {
        let mut v = [0.0; 3];
        v[self.axis] = self.sign as f64;
        v
    }
}

#[derive(Debug, Clone)]
pub struct GridSpec {
    pub extents: [f64; 3],
    pub n: [usize; 3],
    pub h: [f64; 3],
    /// Lattice points per axis, n + 2.
    pub dims: [usize; 3],
    interior: Vec<usize>,
    boundary: Vec<usize>,
    bnd_of: Vec<u32>,
    normals: Vec<Normal>,
    surf_w: Vec<f64>,
    hash: [u8; 32],
}

const NOT_BOUNDARY: u32 = u32::MAX;

impl GridSpec {
    pub fn cell_volume(&self) -> f64 {
        self.h[0] * self.h[1] * self.h[2]
    }

    pub fn len(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn idx(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.dims[0] * (j + self.dims[1] * k)
    }

    #[inline]
    pub fn ijk(&self, p: usize) -> [usize; 3] {
        let i = p % self.dims[0];
        let r = p / self.dims[0];
        [i, r % self.dims[1], r / self.dims[1]]
    }

    #[inline]
    pub fn stride(&self, axis: usize) -> usize {
        match axis {
            0 => 1,
            1 => self.dims[0],
            _ => self.dims[0] * self.dims[1],
        }
    }

    #[inline]
    pub fn coords(&self, p: usize) -> Point {
        let [i, j, k] = self.ijk(p);
        [i as f64 * self.h[0], j as f64 * self.h[1], k as f64 * self.h[2]]
    }

    pub fn interior(&self) -> &[usize] {
        &self.interior
    }

    pub fn boundary(&self) -> &[usize] {
        &self.boundary
    }

    pub fn boundary_len(&self) -> usize {
        self.boundary.len()
    }

    /// Position of lattice node `p` in the boundary list.
    pub fn boundary_slot(&self, p: usize) -> Option<usize> {
        match self.bnd_of[p] {
            NOT_BOUNDARY => None,
            b => Some(b as usize),
        }
    }

    pub fn is_boundary(&self, p: usize) -> bool {
        self.bnd_of[p] != NOT_BOUNDARY
    }

    pub fn normal(&self, b: usize) -> Normal {
        self.normals[b]
    }

    /// Surface quadrature weight of boundary slot `b`.
    pub fn surface_weight(&self, b: usize) -> f64 {
        self.surf_w[b]
    }

    /// Trapezoid volume weight of lattice node `p`.
    #[inline]
    pub fn volume_weight(&self, p: usize) -> f64 {
        let c = self.ijk(p);
        let mut w = self.cell_volume();
        for a in 0..3 {
            if c[a] == 0 || c[a] == self.dims[a] - 1 {
                w *= 0.5;
            }
        }
        w
    }

    pub fn content_hash(&self) -> [u8; 32] {
        self.hash
    }

    pub fn center(&self) -> Point {
        [self.extents[0] / 2.0, self.extents[1] / 2.0, self.extents[2] / 2.0]
    }

    pub fn min_h(&self) -> f64 {
        self.h[0].min(self.h[1]).min(self.h[2])
    }

    /// Distance from `x` to the box boundary (negative outside).
    pub fn distance_to_boundary(&self, x: Point) -> f64 {
        let mut d = f64::INFINITY;
        for a in 0..3 {
            d = d.min(x[a]).min(self.extents[a] - x[a]);
        }
        d
    }

    pub fn contains(&self, x: Point) -> bool {
        self.distance_to_boundary(x) > 0.0
    }

    /// Distance from `x` to the nearest lattice node, in units of the smallest spacing.
    pub fn lattice_offset(&self, x: Point) -> f64 {
        let mut s = 0.0;
        for a in 0..3 {
            let t = x[a] / self.h[a];
            let d = (t - t.round()) * self.h[a];
            s += d * d;
        }
        s.sqrt() / self.min_h()
    }

    /// Nearest point of the dual lattice (all coordinates at half-integer nodes).
    pub fn snap_off_lattice(&self, x: Point) -> Point {
        let mut y = x;
        for a in 0..3 {
            let t = (x[a] / self.h[a] - 0.5).round().clamp(0.0, self.n[a] as f64);
            y[a] = (t + 0.5) * self.h[a];
        }
        y
    }

    /// `x` itself unless it lies within h/4 of a node; then `x` is pushed
    /// radially away from that node to distance h/4 (along the diagonal when it
    /// sits on the node). Nearby inputs stay distinct.
    pub fn place_probe(&self, x: Point) -> Point {
        const R: f64 = 0.25;
        if self.lattice_offset(x) >= R {
            return x;
        }
        let mut d = [0.0; 3];
        for a in 0..3 {
            d[a] = x[a] - (x[a] / self.h[a]).round() * self.h[a];
        }
        let norm = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
        let s = R * self.min_h();
        let dir = if norm > 1e-3 * s { [d[0] / norm, d[1] / norm, d[2] / norm] } else { [1.0 / 3f64.sqrt(); 3] };
        let mut y = x;
        for a in 0..3 {
            y[a] += dir[a] * s - d[a];
        }
        y
    }

    pub fn sample<F>(&self, f: F) -> ScalarField
    where
        F: Fn(Point) -> f64 + Sync,
    {
        let values = (0..self.len()).into_par_iter().map(|p| f(self.coords(p))).collect();
        ScalarField { values }
    }

    pub fn sample_vector<F>(&self, f: F) -> VectorField
    where
        F: Fn(Point) -> Point + Sync,
    {
        let vals: Vec<Point> = (0..self.len()).into_par_iter().map(|p| f(self.coords(p))).collect();
        VectorField::from_fn(|c| ScalarField { values: vals.iter().map(|v| v[c]).collect() })
    }

    pub fn sample_boundary<F>(&self, f: F) -> BoundaryField
    where
        F: Fn(Point) -> f64 + Sync,
    {
        let values = self.boundary.par_iter().map(|&p| f(self.coords(p))).collect();
        BoundaryField { values }
    }
}

pub fn build_grid(extents: [f64; 3], n: [usize; 3]) -> Result<GridSpec> {
    for a in 0..3 {
        if !(extents[a] > 0.0) || !extents[a].is_finite() {
            return invalid(format!("extent {a} must be positive, got {}", extents[a]));
        }
        if n[a] < 3 {
            return invalid(format!("need at least 3 interior points per axis, got n[{a}] = {}", n[a]));
        }
    }
    let dims = [n[0] + 2, n[1] + 2, n[2] + 2];
    let h = [
        extents[0] / (n[0] + 1) as f64,
        extents[1] / (n[1] + 1) as f64,
        extents[2] / (n[2] + 1) as f64,
    ];
    let total = dims[0] * dims[1] * dims[2];
    let mut interior = Vec::with_capacity(n[0] * n[1] * n[2]);
    let mut boundary = Vec::with_capacity(total - n[0] * n[1] * n[2]);
    let mut bnd_of = vec![NOT_BOUNDARY; total];
    let mut normals = Vec::new();
    let mut surf_w = Vec::new();
    for k in 0..dims[2] {
        for j in 0..dims[1] {
            for i in 0..dims[0] {
                let p = i + dims[0] * (j + dims[1] * k);
                let c = [i, j, k];
                // face priority x, then y, then z
                let face = (0..3).find(|&a| c[a] == 0 || c[a] == dims[a] - 1);
                match face {
                    None => interior.push(p),
                    Some(a) => {
                        bnd_of[p] = boundary.len() as u32;
                        boundary.push(p);
                        let sign = if c[a] == 0 { -1 } else { 1 };
                        normals.push(Normal { axis: a, sign });
                        surf_w.push(face_weight(a, c, dims, h));
                    }
                }
            }
        }
    }
    let mut hasher = Sha256::new();
    hasher.update(b"grid-v1");
    for a in 0..3 {
        hasher.update(extents[a].to_le_bytes());
        hasher.update((n[a] as u64).to_le_bytes());
    }
    let hash: [u8; 32] = hasher.finalize().into();
    Ok(GridSpec { extents, n, h, dims, interior, boundary, bnd_of, normals, surf_w, hash })
}

// A face owns its edge rows only when it has priority over the neighbouring
// face; along an axis whose end rows belong to another face the open rule
// (3/2, 1, ..., 1, 3/2) keeps second order.
fn face_weight(face: usize, c: [usize; 3], dims: [usize; 3], h: [f64; 3]) -> f64 {
    let mut w = 1.0;
    for b in 0..3 {
        if b == face {
            continue;
        }
        let end = c[b] == 0 || c[b] == dims[b] - 1;
        let owns_ends = b > face;
        let f = if owns_ends {
            if end {
                0.5
            } else {
                1.0
            }
        } else if c[b] == 1 || c[b] == dims[b] - 2 {
            1.5
        } else {
            1.0
        };
        w *= f * h[b];
    }
    w
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ScalarField {
    pub values: Vec<f64>,
}

impl ScalarField {
    pub fn zeros(grid: &GridSpec) -> Self {
        ScalarField { values: vec![0.0; grid.len()] }
    }

    pub fn new(grid: &GridSpec, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return invalid(format!("field has {} values, lattice has {}", values.len(), grid.len()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return invalid("field contains non-finite values");
        }
        Ok(ScalarField { values })
    }

    pub fn trace(&self, grid: &GridSpec) -> BoundaryField {
        BoundaryField { values: grid.boundary().iter().map(|&p| self.values[p]).collect() }
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn axpy(&mut self, a: f64, x: &ScalarField) {
        for (s, v) in self.values.iter_mut().zip(&x.values) {
            *s += a * v;
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VectorField(pub [ScalarField; 3]);

impl VectorField {
    pub fn from_fn<F: FnMut(usize) -> ScalarField>(f: F) -> Self {
        VectorField(std::array::from_fn(f))
    }

    pub fn zeros(grid: &GridSpec) -> Self {
        Self::from_fn(|_| ScalarField::zeros(grid))
    }

    pub fn at(&self, p: usize) -> Point {
        [self.0[0].values[p], self.0[1].values[p], self.0[2].values[p]]
    }

    pub fn max_abs(&self) -> f64 {
        self.0.iter().map(|c| c.max_abs()).fold(0.0, f64::max)
    }

    pub fn add(&self, other: &VectorField) -> VectorField {
        Self::from_fn(|c| {
            let mut s = self.0[c].clone();
            s.axpy(1.0, &other.0[c]);
            s
        })
    }

    pub fn sub(&self, other: &VectorField) -> VectorField {
        Self::from_fn(|c| {
            let mut s = self.0[c].clone();
            s.axpy(-1.0, &other.0[c]);
            s
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryField {
    pub values: Vec<f64>,
}

impl BoundaryField {
    pub fn zeros(grid: &GridSpec) -> Self {
        BoundaryField { values: vec![0.0; grid.boundary_len()] }
    }

    pub fn new(grid: &GridSpec, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.boundary_len() {
            return invalid(format!(
                "boundary field has {} values, grid has {} boundary nodes",
                values.len(),
                grid.boundary_len()
            ));
        }
        Ok(BoundaryField { values })
    }

    /// Lattice field equal to this trace on the boundary and zero inside.
    pub fn extend_by_zero(&self, grid: &GridSpec) -> ScalarField {
        let mut f = ScalarField::zeros(grid);
        for (b, &p) in grid.boundary().iter().enumerate() {
            f.values[p] = self.values[b];
        }
        f
    }
}

/// 7-point Laplacian at interior nodes; boundary entries of the result are zero.
pub fn discrete_laplacian(grid: &GridSpec, f: &ScalarField) -> Result<ScalarField> {
    check_len(grid, f)?;
    let mut out = ScalarField::zeros(grid);
    let ih2 = [1.0 / (grid.h[0] * grid.h[0]), 1.0 / (grid.h[1] * grid.h[1]), 1.0 / (grid.h[2] * grid.h[2])];
    let s = [grid.stride(0), grid.stride(1), grid.stride(2)];
    for &p in grid.interior() {
        let u = &f.values;
        let mut acc = 0.0;
        for a in 0..3 {
            acc += (u[p + s[a]] - 2.0 * u[p] + u[p - s[a]]) * ih2[a];
        }
        out.values[p] = acc;
    }
    Ok(out)
}

/// Centered differences inside, second-order one-sided differences on lattice ends.
pub fn discrete_gradient(grid: &GridSpec, f: &ScalarField) -> Result<VectorField> {
    check_len(grid, f)?;
    let u = &f.values;
    Ok(VectorField::from_fn(|a| {
        let s = grid.stride(a);
        let last = grid.dims[a] - 1;
        let inv = 1.0 / (2.0 * grid.h[a]);
        let values = (0..grid.len())
            .map(|p| {
                let c = grid.ijk(p)[a];
                if c == 0 {
                    (-3.0 * u[p] + 4.0 * u[p + s] - u[p + 2 * s]) * inv
                } else if c == last {
                    (3.0 * u[p] - 4.0 * u[p - s] + u[p - 2 * s]) * inv
                } else {
                    (u[p + s] - u[p - s]) * inv
                }
            })
            .collect();
        ScalarField { values }
    }))
}

/// Outward normal derivative at every boundary node, 3-point one-sided stencil.
pub fn normal_derivative(grid: &GridSpec, f: &ScalarField) -> Result<BoundaryField> {
    check_len(grid, f)?;
    let u = &f.values;
    let values = grid
        .boundary()
        .iter()
        .enumerate()
        .map(|(b, &p)| {
            let nrm = grid.normal(b);
            let s = grid.stride(nrm.axis);
            let inv = 1.0 / (2.0 * grid.h[nrm.axis]);
            if nrm.sign > 0 {
                (3.0 * u[p] - 4.0 * u[p - s] + u[p - 2 * s]) * inv
            } else {
                (3.0 * u[p] - 4.0 * u[p + s] + u[p + 2 * s]) * inv
            }
        })
        .collect();
    Ok(BoundaryField { values })
}

/// Trapezoid volume quadrature, optionally restricted to `mask`.
pub fn integrate_volume(grid: &GridSpec, f: &ScalarField, mask: Option<&[bool]>) -> Result<f64> {
    check_len(grid, f)?;
    if let Some(m) = mask {
        if m.len() != grid.len() {
            return invalid("mask length differs from lattice size");
        }
    }
    Ok(reduce::sum_by(grid.len(), |p| match mask {
        Some(m) if !m[p] => 0.0,
        _ => grid.volume_weight(p) * f.values[p],
    }))
}

pub fn integrate_surface(grid: &GridSpec, bf: &BoundaryField) -> Result<f64> {
    if bf.values.len() != grid.boundary_len() {
        return invalid("boundary field length differs from boundary node count");
    }
    Ok(reduce::sum_by(bf.values.len(), |b| grid.surface_weight(b) * bf.values[b]))
}

/// Boundary-only pairing with the surface weights.
pub fn surface_dot(grid: &GridSpec, a: &BoundaryField, b: &BoundaryField) -> f64 {
    reduce::sum_by(a.values.len(), |i| grid.surface_weight(i) * a.values[i] * b.values[i])
}

/// Edge-based Dirichlet form. Edges touching an interior node carry full
/// weight; edges on faces carry 1/2 and edges on box edges 1/4, so that
/// E(w, v) = h^3 sum_interior w (-Lap_h v) whenever w vanishes on the boundary.
pub fn energy(grid: &GridSpec, u: &ScalarField, v: &ScalarField) -> f64 {
    let dv = grid.cell_volume();
    let planes = grid.dims[2];
    let partial: Vec<f64> = (0..planes)
        .into_par_iter()
        .map(|k| {
            let mut acc = 0.0;
            for j in 0..grid.dims[1] {
                for i in 0..grid.dims[0] {
                    let c = [i, j, k];
                    let p = grid.idx(i, j, k);
                    for a in 0..3 {
                        if c[a] + 1 >= grid.dims[a] {
                            continue;
                        }
                        let q = p + grid.stride(a);
                        let mut w = dv / (grid.h[a] * grid.h[a]);
                        for b in 0..3 {
                            if b != a && (c[b] == 0 || c[b] == grid.dims[b] - 1) {
                                w *= 0.5;
                            }
                        }
                        acc += w * (u.values[q] - u.values[p]) * (v.values[q] - v.values[p]);
                    }
                }
            }
            acc
        })
        .collect();
    reduce::sum(&partial)
}

pub fn energy_vec(grid: &GridSpec, u: &VectorField, v: &VectorField) -> f64 {
    (0..3).map(|c| energy(grid, &u.0[c], &v.0[c])).sum()
}

/// Weighted volume sum of `weight * u * v` over lattice nodes.
pub fn weighted_dot(grid: &GridSpec, weight: &ScalarField, u: &ScalarField, v: &ScalarField) -> f64 {
    reduce::sum_by(grid.len(), |p| {
        let w = weight.values[p];
        if w == 0.0 {
            0.0
        } else {
            grid.volume_weight(p) * w * u.values[p] * v.values[p]
        }
    })
}

pub fn weighted_dot_vec(grid: &GridSpec, weight: &ScalarField, u: &VectorField, v: &VectorField) -> f64 {
    (0..3).map(|c| weighted_dot(grid, weight, &u.0[c], &v.0[c])).sum()
}

fn check_len(grid: &GridSpec, f: &ScalarField) -> Result<()> {
    if f.values.len() != grid.len() {
        return invalid(format!("field has {} values, lattice has {}", f.values.len(), grid.len()));
    }
    Ok(())
}

// Cubic Lagrange weights on four consecutive nodes and their derivatives, at
// local coordinate t measured from the first node in units of h.
fn lagrange4(t: f64) -> ([f64; 4], [f64; 4]) {
    let n = [0.0, 1.0, 2.0, 3.0];
    let mut w = [0.0; 4];
    let mut d = [0.0; 4];
    for i in 0..4 {
        let mut den = 1.0;
        for j in 0..4 {
            if j != i {
                den *= n[i] - n[j];
            }
        }
        let mut num = 1.0;
        for j in 0..4 {
            if j != i {
                num *= t - n[j];
            }
        }
        w[i] = num / den;
        let mut dn = 0.0;
        for m in 0..4 {
            if m == i {
                continue;
            }
            let mut prod = 1.0;
            for j in 0..4 {
                if j != i && j != m {
                    prod *= t - n[j];
                }
            }
            dn += prod;
        }
        d[i] = dn / den;
    }
    (w, d)
}

struct Stencil {
    base: [usize; 3],
    w: [[f64; 4]; 3],
    d: [[f64; 4]; 3],
}

fn stencil(grid: &GridSpec, x: Point) -> Stencil {
    let mut base = [0; 3];
    let mut w = [[0.0; 4]; 3];
    let mut d = [[0.0; 4]; 3];
    for a in 0..3 {
        let t = x[a] / grid.h[a];
        let cell = t.floor() as i64;
        let b = (cell - 1).clamp(0, grid.dims[a] as i64 - 4) as usize;
        base[a] = b;
        let (wa, da) = lagrange4(t - b as f64);
        w[a] = wa;
        for m in 0..4 {
            d[a][m] = da[m] / grid.h[a];
        }
    }
    Stencil { base, w, d }
}

/// Tricubic interpolation of `f` at an arbitrary point of the closed box.
pub fn interpolate(grid: &GridSpec, f: &ScalarField, x: Point) -> f64 {
    let s = stencil(grid, x);
    let mut acc = 0.0;
    for c in 0..4 {
        for b in 0..4 {
            for a in 0..4 {
                let p = grid.idx(s.base[0] + a, s.base[1] + b, s.base[2] + c);
                acc += s.w[0][a] * s.w[1][b] * s.w[2][c] * f.values[p];
            }
        }
    }
    acc
}

/// Gradient of the tricubic interpolant at `x`.
pub fn interpolate_gradient(grid: &GridSpec, f: &ScalarField, x: Point) -> Point {
    let s = stencil(grid, x);
    let mut g = [0.0; 3];
    for c in 0..4 {
        for b in 0..4 {
            for a in 0..4 {
                let p = grid.idx(s.base[0] + a, s.base[1] + b, s.base[2] + c);
                let v = f.values[p];
                g[0] += s.d[0][a] * s.w[1][b] * s.w[2][c] * v;
                g[1] += s.w[0][a] * s.d[1][b] * s.w[2][c] * v;
                g[2] += s.w[0][a] * s.w[1][b] * s.d[2][c] * v;
            }
        }
    }
    g
}

/// Divergence at `x` of the tricubic interpolant of a vector field.
pub fn point_divergence(grid: &GridSpec, f: &VectorField, x: Point) -> f64 {
    (0..3).map(|a| interpolate_gradient(grid, &f.0[a], x)[a]).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit(n: usize) -> GridSpec {
        build_grid([1.0; 3], [n; 3]).unwrap()
    }

    #[test]
    fn counts_and_spacing() {
        let g = unit(3);
        assert_eq!(g.interior().len(), 27);
        assert_eq!(g.boundary_len(), 98);
        assert_eq!(g.h, [0.25; 3]);
        assert!(build_grid([1.0; 3], [0, 3, 3]).is_err());
        assert!(build_grid([-1.0, 1.0, 1.0], [3, 3, 3]).is_err());
    }

    #[test]
    fn index_sets_partition_the_lattice() {
        let g = build_grid([1.0, 2.0, 0.5], [4, 5, 3]).unwrap();
        let mut seen = vec![0u8; g.len()];
        for &p in g.interior() {
            seen[p] += 1;
        }
        for &p in g.boundary() {
            seen[p] += 1;
        }
        assert!(seen.iter().all(|&c| c == 1));
    }

    #[test]
    fn edge_nodes_take_x_normal_first() {
        let g = unit(4);
        let p = g.idx(0, 0, 0);
        let b = g.boundary_slot(p).unwrap();
        assert_eq!(g.normal(b), Normal { axis: 0, sign: -1 });
        let p = g.idx(2, 5, 5);
        let b = g.boundary_slot(p).unwrap();
        assert_eq!(g.normal(b), Normal { axis: 1, sign: 1 });
    }

    #[test]
    fn laplacian_of_polynomials() {
        let g = unit(5);
        let c = g.sample(|_| 3.0);
        let lin = g.sample(|z| 2.0 * z[0] - z[1] + 0.5 * z[2]);
        let quad = g.sample(|z| z[0] * z[0]);
        for (f, want) in [(&c, 0.0), (&lin, 0.0), (&quad, 2.0)] {
            let l = discrete_laplacian(&g, f).unwrap();
            for &p in g.interior() {
                assert!((l.values[p] - want).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn gradient_of_bilinear() {
        let g = unit(5);
        let f = g.sample(|z| z[0] * z[1]);
        let d = discrete_gradient(&g, &f).unwrap();
        for p in 0..g.len() {
            let z = g.coords(p);
            assert!((d.0[0].values[p] - z[1]).abs() < 1e-12);
            assert!((d.0[1].values[p] - z[0]).abs() < 1e-12);
            assert!(d.0[2].values[p].abs() < 1e-12);
        }
        let lin = discrete_gradient(&g, &g.sample(|z| z[0])).unwrap();
        assert!(lin.0[0].values.iter().all(|v| (v - 1.0).abs() < 1e-12));
    }

    #[test]
    fn normal_derivative_of_linear() {
        let g = unit(4);
        let f = g.sample(|z| z[0]);
        let dn = normal_derivative(&g, &f).unwrap();
        for b in 0..g.boundary_len() {
            let nrm = g.normal(b);
            let want = if nrm.axis == 0 { nrm.sign as f64 } else { 0.0 };
            assert!((dn.values[b] - want).abs() < 1e-12);
        }
        let c = normal_derivative(&g, &g.sample(|_| 2.0)).unwrap();
        assert!(c.values.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn quadrature_of_one() {
        for n in [3, 6, 11] {
            let g = build_grid([1.0, 0.7, 1.3], [n, n + 1, n + 2]).unwrap();
            let one = g.sample(|_| 1.0);
            let vol = integrate_volume(&g, &one, None).unwrap();
            assert!((vol - 0.91).abs() < 1e-12);
            let area = integrate_surface(&g, &one.trace(&g)).unwrap();
            let want = 2.0 * (0.7 + 1.3 + 0.91);
            assert!((area - want).abs() < 1e-12, "{area} vs {want}");
        }
    }

    #[test]
    fn energy_matches_interior_sum() {
        let g = unit(6);
        let w = {
            let mut f = g.sample(|z| (3.0 * z[0]).sin() * z[1] * (1.0 + z[2] * z[2]));
            for &p in g.boundary() {
                f.values[p] = 0.0;
            }
            f
        };
        let v = g.sample(|z| (z[0] * z[1]).exp() + z[2]);
        let lap = discrete_laplacian(&g, &v).unwrap();
        let rhs: f64 = g.interior().iter().map(|&p| -w.values[p] * lap.values[p]).sum::<f64>() * g.cell_volume();
        assert!((energy(&g, &w, &v) - rhs).abs() < 1e-12);
        let lin = g.sample(|z| z[0]);
        assert!((energy(&g, &lin, &lin) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn tricubic_reproduces_cubics() {
        let g = unit(7);
        let f = g.sample(|z| z[0] * z[0] * z[1] - z[2] * z[2] * z[2] + z[0] * z[1] * z[2]);
        let x: [f64; 3] = [0.31, 0.77, 0.05];
        let want = x[0] * x[0] * x[1] - x[2].powi(3) + x[0] * x[1] * x[2];
        assert!((interpolate(&g, &f, x) - want).abs() < 1e-12);
        let gr = interpolate_gradient(&g, &f, x);
        assert!((gr[0] - (2.0 * x[0] * x[1] + x[1] * x[2])).abs() < 1e-11);
        assert!((gr[1] - (x[0] * x[0] + x[0] * x[2])).abs() < 1e-11);
        assert!((gr[2] - (-3.0 * x[2] * x[2] + x[0] * x[1])).abs() < 1e-11);
    }

    #[test]
    fn snapping_lands_on_cell_centres() {
        let g = unit(9);
        let y = g.snap_off_lattice([0.33, 0.5, 0.97]);
        assert!((g.lattice_offset(y) - 3f64.sqrt() / 2.0).abs() < 1e-12);
    }

    #[test]
    fn probe_placement_keeps_points_apart() {
        let g = unit(9);
        let far = [0.33, 0.47, 0.52];
        assert_eq!(g.place_probe(far), far);
        let a = g.place_probe([0.301, 0.5, 0.5]);
        let b = g.place_probe([0.3, 0.5, 0.502]);
        let c = g.place_probe([0.3, 0.5, 0.5]);
        for y in [a, b, c] {
            assert!((g.lattice_offset(y) - 0.25).abs() < 1e-9);
        }
        assert!(a != b && b != c && a != c);
    }
}
