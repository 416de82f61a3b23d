//! Needles and harmonic needle sequences approximating d_j G(. - x) away from
//! the needle, built by regularized least squares over exterior sources.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, IpsError, Result};
use crate::grid::{self, GridSpec, Point, ScalarField, VectorField};
use crate::kernel;
use crate::potential::ObstacleSpec;

fn sub(a: Point, b: Point) -> Point {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn dot(a: Point, b: Point) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn norm(a: Point) -> f64 {
    dot(a, a).sqrt()
}

fn lerp(a: Point, b: Point, t: f64) -> Point {
    [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1]), a[2] + t * (b[2] - a[2])]
}

fn point_segment_distance(p: Point, a: Point, b: Point) -> f64 {
    let ab = sub(b, a);
    let t = (dot(sub(p, a), ab) / dot(ab, ab)).clamp(0.0, 1.0);
    norm(sub(p, lerp(a, b, t)))
}

fn segment_segment_distance(a0: Point, a1: Point, b0: Point, b1: Point) -> f64 {
    // Closest points of two segments (Lumelsky style clamping).
    let d1 = sub(a1, a0);
    let d2 = sub(b1, b0);
    let r = sub(a0, b0);
    let (aa, ee, f) = (dot(d1, d1), dot(d2, d2), dot(d2, r));
    let c = dot(d1, r);
    let bb = dot(d1, d2);
    let denom = aa * ee - bb * bb;
    let mut s = if denom > 1e-14 * aa * ee { ((bb * f - c * ee) / denom).clamp(0.0, 1.0) } else { 0.0 };
    let mut t = (bb * s + f) / ee;
    if t < 0.0 {
        t = 0.0;
        s = (-c / aa).clamp(0.0, 1.0);
    } else if t > 1.0 {
        t = 1.0;
        s = ((bb - c) / aa).clamp(0.0, 1.0);
    }
    norm(sub(lerp(a0, a1, s), lerp(b0, b1, t)))
}

/// Piecewise linear curve from a boundary point to a tip inside the box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Needle {
    vertices: Vec<Point>,
}

impl Needle {
    pub fn vertices(&self) -> &[Point] {
        &self.vertices
    }

    pub fn entry(&self) -> Point {
        self.vertices[0]
    }

    pub fn tip(&self) -> Point {
        *self.vertices.last().unwrap()
    }

    pub fn length(&self) -> f64 {
        self.vertices.windows(2).map(|w| norm(sub(w[1], w[0]))).sum()
    }

    /// Unit vector pointing out of the box along the first segment.
    pub fn outward(&self) -> Point {
        let d = sub(self.vertices[0], self.vertices[1]);
        let l = norm(d);
        [d[0] / l, d[1] / l, d[2] / l]
    }

    /// sigma(t) for t in [0, 1], parametrized by arc length.
    pub fn point_at(&self, t: f64) -> Point {
        let total = self.length();
        let mut left = t.clamp(0.0, 1.0) * total;
        for w in self.vertices.windows(2) {
            let l = norm(sub(w[1], w[0]));
            if left <= l {
                return lerp(w[0], w[1], left / l);
            }
            left -= l;
        }
        self.tip()
    }

    pub fn distance(&self, p: Point) -> f64 {
        self.vertices
            .windows(2)
            .map(|w| point_segment_distance(p, w[0], w[1]))
            .fold(f64::INFINITY, f64::min)
    }

    /// Whether the needle meets the closure of the obstacle.
    pub fn hits(&self, obstacle: &ObstacleSpec) -> bool {
        needle_hits(self, obstacle)
    }
}

/// Validates and builds a needle through `waypoints` from `boundary_point` to `tip`.
pub fn make_needle(extents: [f64; 3], boundary_point: Point, waypoints: &[Point], tip: Point) -> Result<Needle> {
    let scale = extents.iter().cloned().fold(0.0, f64::max);
    let eps = 1e-9 * scale;
    let inside = |p: Point| (0..3).all(|a| p[a] > eps && p[a] < extents[a] - eps);
    let on_boundary = |p: Point| {
        (0..3).all(|a| p[a] >= -eps && p[a] <= extents[a] + eps)
            && (0..3).any(|a| p[a].abs() <= eps || (p[a] - extents[a]).abs() <= eps)
    };
    if !on_boundary(boundary_point) {
        return invalid(format!("needle must start on the boundary, got {boundary_point:?}"));
    }
    if !inside(tip) {
        return invalid(format!("needle tip {tip:?} must lie strictly inside the domain"));
    }
    let mut vertices = vec![boundary_point];
    for &w in waypoints {
        if !inside(w) {
            return invalid(format!("needle vertex {w:?} must lie strictly inside the domain"));
        }
        vertices.push(w);
    }
    vertices.push(tip);
    for w in vertices.windows(2) {
        if norm(sub(w[1], w[0])) <= eps {
            return invalid("needle has a zero-length segment");
        }
    }
    if !inside(lerp(vertices[0], vertices[1], 0.5)) {
        return invalid("first needle segment runs along the boundary");
    }
    let ns = vertices.len() - 1;
    for i in 0..ns {
        for k in i + 1..ns {
            if k == i + 1 {
                let d1 = sub(vertices[i + 1], vertices[i]);
                let d2 = sub(vertices[k + 1], vertices[k]);
                let cos = dot(d1, d2) / (norm(d1) * norm(d2));
                if cos < -1.0 + 1e-12 {
                    return invalid("needle folds back on itself");
                }
            } else if segment_segment_distance(vertices[i], vertices[i + 1], vertices[k], vertices[k + 1]) <= eps {
                return invalid("needle intersects itself");
            }
        }
    }
    Ok(Needle { vertices })
}

/// True when the needle meets the closure of any obstacle component.
pub fn needle_hits(needle: &Needle, obstacle: &ObstacleSpec) -> bool {
    // Signed distances of convex shapes are convex along a segment.
    needle.vertices.windows(2).any(|w| {
        obstacle.components.iter().any(|c| {
            let f = |t: f64| c.shape.signed_distance(lerp(w[0], w[1], t));
            let (mut lo, mut hi) = (0.0f64, 1.0f64);
            for _ in 0..100 {
                let m1 = lo + (hi - lo) / 3.0;
                let m2 = hi - (hi - lo) / 3.0;
                if f(m1) <= f(m2) {
                    hi = m2;
                } else {
                    lo = m1;
                }
            }
            f(0.5 * (lo + hi)).min(f(0.0)).min(f(1.0)) <= 1e-12
        })
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NeedleOptions {
    pub levels: usize,
    /// Tube radius at level 0; level n excludes nodes closer than delta0 * 2^-n.
    pub delta0: f64,
    /// Discrepancy target at level 0; level n uses tau0 * 2^(-n/2).
    pub tau0: f64,
    /// Inflation of the box carrying the point sources.
    pub inflate: f64,
    /// Distance of the multipole centre outside the entry point.
    pub multipole_offset: f64,
    /// Distance from the needle beyond which the H1 diagnostic is measured;
    /// kept two cells clear of the tube of the level.
    pub shell: f64,
    /// Lower bound on the tube radius, in grid spacings.
    pub delta_floor: f64,
    /// Point sources per face edge of the inflated box.
    pub face_sources: usize,
    /// Multipole order at level n is order0 + order_step * n.
    pub order0: usize,
    pub order_step: usize,
    /// Weight of the finite-difference gradient rows, a length scale. Zero disables them.
    pub grad_weight: f64,
    /// A flagged level is regularized down to this multiple of its best residual.
    pub flag_slack: f64,
}

impl Default for NeedleOptions {
    fn default() -> Self {
        NeedleOptions {
            levels: 5,
            delta0: 0.32,
            tau0: 0.02,
            inflate: 1.5,
            multipole_offset: 0.05,
            shell: 0.15,
            delta_floor: 4.0,
            face_sources: 8,
            order0: 4,
            order_step: 6,
            grad_weight: 0.05,
            flag_slack: 1.05,
        }
    }
}

impl NeedleOptions {
    pub fn validate(&self) -> Result<()> {
        if self.levels == 0 || self.levels > 12 {
            return invalid("needle levels must be between 1 and 12");
        }
        if !(self.delta0 > 0.0 && self.tau0 > 0.0 && self.inflate > 1.0 && self.multipole_offset > 0.0 && self.shell > 0.0) {
            return invalid("needle options must be positive and inflate must exceed 1");
        }
        if !(self.delta_floor >= 0.0 && self.grad_weight >= 0.0 && self.flag_slack >= 1.0) || self.face_sources < 2 {
            return invalid("needle delta_floor, grad_weight must be non-negative, flag_slack at least 1, face_sources at least 2");
        }
        Ok(())
    }

    /// Tube radius at level n on a grid of spacing h.
    pub fn delta(&self, n: usize, h: f64) -> f64 {
        (self.delta0 * 0.5f64.powi(n as i32)).max(self.delta_floor * h)
    }

    pub fn tau(&self, n: usize) -> f64 {
        self.tau0 * 0.5f64.powf(n as f64 / 2.0)
    }

    /// Face grid size and multipole order at level n.
    pub fn basis_size(&self, n: usize) -> (usize, usize) {
        (self.face_sources, self.order0 + self.order_step * n)
    }
}

/// Exterior point sources plus an irregular multipole just outside the entry point.
#[derive(Debug, Clone, Serialize)]
pub struct SourceBasis {
    pub sources: Vec<Point>,
    pub center: Point,
    pub scale: f64,
    pub order: usize,
}

impl SourceBasis {
    pub fn new(extents: [f64; 3], needle: &Needle, m: usize, order: usize, opts: &NeedleOptions) -> Self {
        let c = [extents[0] / 2.0, extents[1] / 2.0, extents[2] / 2.0];
        let mut sources = Vec::with_capacity(6 * m * m);
        for f in 0..3 {
            let (a, b) = ((f + 1) % 3, (f + 2) % 3);
            for side in [0.0, 1.0] {
                for i in 0..m {
                    for k in 0..m {
                        let mut p = [0.0; 3];
                        p[f] = side * extents[f];
                        p[a] = (i as f64 + 0.5) / m as f64 * extents[a];
                        p[b] = (k as f64 + 0.5) / m as f64 * extents[b];
                        sources.push([
                            c[0] + opts.inflate * (p[0] - c[0]),
                            c[1] + opts.inflate * (p[1] - c[1]),
                            c[2] + opts.inflate * (p[2] - c[2]),
                        ]);
                    }
                }
            }
        }
        let u = needle.outward();
        let e = needle.entry();
        let t = opts.multipole_offset;
        SourceBasis { sources, center: [e[0] + t * u[0], e[1] + t * u[1], e[2] + t * u[2]], scale: t, order }
    }

    pub fn len(&self) -> usize {
        self.sources.len() + (self.order + 1) * (self.order + 1)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// All basis functions at `z`.
    pub fn eval(&self, z: Point, out: &mut [f64]) {
        let ns = self.sources.len();
        for (o, s) in out[..ns].iter_mut().zip(&self.sources) {
            *o = kernel::g(sub(z, *s));
        }
        irregular_harmonics(sub(z, self.center), self.scale, self.order, &mut out[ns..]);
    }
}

/// Real irregular solid harmonics (scale/r)^(l+1) P_l^m(cos t) {cos, sin}(m p), l <= order.
fn irregular_harmonics(d: Point, scale: f64, order: usize, out: &mut [f64]) {
    let r = norm(d);
    let ct = d[2] / r;
    let rho = (d[0] * d[0] + d[1] * d[1]).sqrt();
    let st = rho / r;
    let (cp, sp) = if rho > 0.0 { (d[0] / rho, d[1] / rho) } else { (1.0, 0.0) };
    let nl = order + 1;
    // Fully normalized associated Legendre functions.
    let mut p = vec![0.0; nl * nl];
    let at = |l: usize, m: usize| l * nl + m;
    p[at(0, 0)] = 1.0;
    for m in 1..nl {
        let f = if m == 1 { 3.0f64.sqrt() } else { ((2 * m + 1) as f64 / (2 * m) as f64).sqrt() };
        p[at(m, m)] = f * st * p[at(m - 1, m - 1)];
    }
    for m in 0..nl {
        if m + 1 < nl {
            p[at(m + 1, m)] = ((2 * m + 3) as f64).sqrt() * ct * p[at(m, m)];
        }
        for l in m + 2..nl {
            let (lf, mf) = (l as f64, m as f64);
            let a = ((4.0 * lf * lf - 1.0) / (lf * lf - mf * mf)).sqrt();
            let b = (((lf - 1.0) * (lf - 1.0) - mf * mf) / (4.0 * (lf - 1.0) * (lf - 1.0) - 1.0)).sqrt();
            p[at(l, m)] = a * (ct * p[at(l - 1, m)] - b * p[at(l - 2, m)]);
        }
    }
    let mut k = 0;
    let q = scale / r;
    let mut rad = q;
    for l in 0..nl {
        out[k] = rad * p[at(l, 0)];
        k += 1;
        let (mut cm, mut sm) = (1.0f64, 0.0f64);
        for m in 1..=l {
            let c2 = cm * cp - sm * sp;
            sm = sm * cp + cm * sp;
            cm = c2;
            out[k] = rad * p[at(l, m)] * cm;
            out[k + 1] = rad * p[at(l, m)] * sm;
            k += 2;
        }
        rad *= q;
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct NeedleLevel {
    pub n: usize,
    pub delta: f64,
    pub tau: f64,
    pub rows: usize,
    pub columns: usize,
    /// Relative least-squares residual achieved on the collocation rows.
    pub residual: f64,
    pub mu: f64,
    /// Discrepancy target missed even at the smallest regularization.
    pub flagged: bool,
    /// Relative H1 error against d_j G(. - x) outside max(shell, delta + 2h).
    pub shell_error: f64,
    #[serde(skip)]
    pub coefficients: Vec<f64>,
    #[serde(skip)]
    pub field: ScalarField,
}

/// v_n^j for one component j on consecutive levels n = 1, 2, ...
#[derive(Debug, Clone, Serialize)]
pub struct NeedleSequence {
    pub needle: Needle,
    pub j: usize,
    pub options: NeedleOptions,
    #[serde(skip)]
    pub bases: Vec<SourceBasis>,
    pub levels: Vec<NeedleLevel>,
}

impl NeedleSequence {
    pub fn tip(&self) -> Point {
        self.needle.tip()
    }

    pub fn level(&self, n: usize) -> Result<&NeedleLevel> {
        self.levels
            .iter()
            .find(|l| l.n == n)
            .ok_or_else(|| IpsError::Invalid(format!("needle sequence has no level {n}")))
    }

    /// Value of v_n^j at an arbitrary point, from the source representation.
    pub fn value_at(&self, n: usize, z: Point) -> Result<f64> {
        let lvl = self.level(n)?;
        let basis = &self.bases[self.levels.iter().position(|l| l.n == n).unwrap()];
        let mut b = vec![0.0; basis.len()];
        basis.eval(z, &mut b);
        Ok(b.iter().zip(&lvl.coefficients).map(|(a, c)| a * c).sum())
    }
}

fn target(x: Point, z: Point, j: usize) -> f64 {
    kernel::grad_g(sub(z, x))[j]
}

/// Needle sequences for each component in `components` (0-based), sharing one
/// factorization per level.
pub fn generate_needle_sequences(
    grid: &GridSpec,
    needle: &Needle,
    components: &[usize],
    opts: &NeedleOptions,
) -> Result<Vec<NeedleSequence>> {
    opts.validate()?;
    if components.is_empty() || components.iter().any(|&j| j > 2) {
        return invalid("needle components must be 0, 1 or 2");
    }
    let x = needle.tip();
    if grid.lattice_offset(x) < 1e-6 {
        return invalid("needle tip coincides with a lattice node");
    }
    faer::set_global_parallelism(faer::Par::Seq);
    let dist: Vec<f64> = (0..grid.len()).into_par_iter().map(|p| needle.distance(grid.coords(p))).collect();
    let mut seqs: Vec<NeedleSequence> = components
        .iter()
        .map(|&j| NeedleSequence { needle: needle.clone(), j, options: *opts, bases: Vec::new(), levels: Vec::new() })
        .collect();
    for n in 1..=opts.levels {
        let (m, order) = opts.basis_size(n);
        let basis = SourceBasis::new(grid.extents, needle, m, order, opts);
        let fits = fit_level(grid, needle, &dist, &basis, components, n, opts)?;
        for (seq, lvl) in seqs.iter_mut().zip(fits) {
            seq.bases.push(basis.clone());
            seq.levels.push(lvl);
        }
    }
    Ok(seqs)
}

/// The sequence for a single component j (0-based).
pub fn generate_needle_sequence(grid: &GridSpec, needle: &Needle, j: usize, opts: &NeedleOptions) -> Result<NeedleSequence> {
    Ok(generate_needle_sequences(grid, needle, &[j], opts)?.pop().unwrap())
}

const GRAD_STRIDE: usize = 2;
const QR_BLOCK: usize = 6000;

fn fit_level(
    grid: &GridSpec,
    needle: &Needle,
    dist: &[f64],
    basis: &SourceBasis,
    components: &[usize],
    n: usize,
    opts: &NeedleOptions,
) -> Result<Vec<NeedleLevel>> {
    let x = needle.tip();
    let delta = opts.delta(n, grid.min_h());
    let tau = opts.tau(n);
    let nc = basis.len();
    let use_grad = opts.grad_weight > 0.0;

    // Value rows on every node outside the tube, gradient rows on a sub-lattice.
    let mut value_pts = Vec::new();
    let mut grad_pts = Vec::new();
    for p in 0..grid.len() {
        if dist[p] < delta {
            continue;
        }
        value_pts.push(grid.coords(p));
        if use_grad && !grid.is_boundary(p) && grid.ijk(p).iter().all(|&i| i % GRAD_STRIDE == 0) {
            grad_pts.push(p);
        }
    }
    let nv = value_pts.len();
    let nrows = nv + 3 * grad_pts.len();
    if nrows <= nc {
        return invalid(format!("needle level {n} has {nrows} collocation rows for {nc} unknowns"));
    }
    let row_data: Vec<(Vec<f64>, Vec<f64>)> = (0..nrows)
        .into_par_iter()
        .map(|r| {
            let mut row = vec![0.0; nc];
            let mut rhs = vec![0.0; components.len()];
            if r < nv {
                basis.eval(value_pts[r], &mut row);
                for (k, &j) in components.iter().enumerate() {
                    rhs[k] = target(x, value_pts[r], j);
                }
            } else {
                let q = (r - nv) / 3;
                let a = (r - nv) % 3;
                let z = grid.coords(grad_pts[q]);
                let ha = grid.h[a];
                let mut zp = z;
                let mut zm = z;
                zp[a] += ha;
                zm[a] -= ha;
                let mut tmp = vec![0.0; nc];
                basis.eval(zp, &mut row);
                basis.eval(zm, &mut tmp);
                let s = opts.grad_weight / (2.0 * ha);
                for (o, t) in row.iter_mut().zip(&tmp) {
                    *o = s * (*o - t);
                }
                for (k, &j) in components.iter().enumerate() {
                    rhs[k] = s * (target(x, zp, j) - target(x, zm, j));
                }
            }
            (row, rhs)
        })
        .collect();
    let ncomp = components.len();
    let mut colnorm = vec![0.0; nc];
    let mut bnorm2 = vec![0.0; ncomp];
    for (row, rhs) in &row_data {
        for c in 0..nc {
            colnorm[c] += row[c] * row[c];
        }
        for k in 0..ncomp {
            bnorm2[k] += rhs[k] * rhs[k];
        }
    }
    for c in colnorm.iter_mut() {
        *c = if *c > 0.0 { c.sqrt() } else { 1.0 };
    }
    // Blocked QR of [A | b]; only the triangular factor is kept.
    let width = nc + ncomp;
    let mut r_acc = faer::Mat::<f64>::zeros(0, width);
    for block in row_data.chunks(QR_BLOCK) {
        let top = r_acc.nrows();
        let mut m = faer::Mat::<f64>::zeros(top + block.len(), width);
        for i in 0..top {
            for c in i..width {
                m[(i, c)] = r_acc[(i, c)];
            }
        }
        for (r, (row, rhs)) in block.iter().enumerate() {
            for c in 0..nc {
                m[(top + r, c)] = row[c] / colnorm[c];
            }
            for k in 0..ncomp {
                m[(top + r, nc + k)] = rhs[k];
            }
        }
        r_acc = m.qr().thin_R().to_owned();
    }
    drop(row_data);
    let r11 = faer::Mat::<f64>::from_fn(nc, nc, |i, c| if c >= i { r_acc[(i, c)] } else { 0.0 });
    let svd = r11
        .thin_svd()
        .map_err(|e| IpsError::Invalid(format!("needle level {n}: singular value decomposition failed: {e:?}")))?;
    let u = svd.U();
    let v = svd.V();
    let s: Vec<f64> = (0..nc).map(|i| svd.S().column_vector()[i]).collect();
    let smax = s[0];
    let mu_min = 1e-13 * smax;

    let mut out = Vec::with_capacity(ncomp);
    for k in 0..ncomp {
        let bnorm2 = bnorm2[k];
        let beta: Vec<f64> = (0..nc).map(|i| (0..nc).map(|r| u[(r, i)] * r_acc[(r, nc + k)]).sum()).collect();
        let perp2: f64 = (nc..r_acc.nrows()).map(|r| r_acc[(r, nc + k)].powi(2)).sum();
        let resid = |mu: f64| {
            let m2 = mu * mu;
            let r2: f64 = s.iter().zip(&beta).map(|(si, bi)| (m2 / (si * si + m2) * bi).powi(2)).sum();
            ((r2 + perp2) / bnorm2).sqrt()
        };
        // Largest mu meeting the discrepancy target, by bisection in log mu.
        let best = resid(mu_min);
        let flagged = best > tau;
        let goal = if flagged { opts.flag_slack * best } else { tau };
        let mu = if resid(smax) <= goal {
            smax
        } else {
            let (mut lo, mut hi) = (mu_min.ln(), smax.ln());
            for _ in 0..60 {
                let mid = 0.5 * (lo + hi);
                if resid(mid.exp()) <= goal {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            lo.exp()
        };
        let coef_n: Vec<f64> = (0..nc)
            .map(|c| (0..nc).map(|i| v[(c, i)] * s[i] / (s[i] * s[i] + mu * mu) * beta[i]).sum())
            .collect();
        let coefficients: Vec<f64> = coef_n.iter().zip(&colnorm).map(|(c, w)| c / w).collect();
        out.push((coefficients, resid(mu), mu, flagged));
    }

    // Realize every component on the whole lattice in one pass over the basis.
    let values: Vec<Vec<f64>> = (0..grid.len())
        .into_par_iter()
        .map_init(
            || vec![0.0; nc],
            |buf, p| {
                basis.eval(grid.coords(p), buf);
                out.iter().map(|(c, ..)| buf.iter().zip(c).map(|(a, b)| a * b).sum()).collect()
            },
        )
        .collect();
    let mut levels = Vec::with_capacity(components.len());
    for (k, (coefficients, residual, mu, flagged)) in out.into_iter().enumerate() {
        let field = ScalarField { values: values.iter().map(|v| v[k]).collect() };
        let shell_error = shell_h1_error(grid, &field, x, components[k], dist, opts.shell.max(delta + 2.0 * grid.h.iter().cloned().fold(0.0, f64::max)))?;
        levels.push(NeedleLevel {
            n,
            delta,
            tau,
            rows: nrows,
            columns: nc,
            residual,
            mu,
            flagged,
            shell_error,
            coefficients,
            field,
        });
    }
    Ok(levels)
}

fn shell_h1_error(grid: &GridSpec, v: &ScalarField, x: Point, j: usize, dist: &[f64], shell: f64) -> Result<f64> {
    let mask: Vec<bool> = (0..grid.len()).map(|p| dist[p] >= shell && !grid.is_boundary(p)).collect();
    let t = grid.sample(|z| target(x, z, j));
    relative_h1_error(grid, v, &t, &mask)
}

/// ||v - t||_H1(mask) / ||t||_H1(mask) with centred difference gradients.
pub fn relative_h1_error(grid: &GridSpec, v: &ScalarField, t: &ScalarField, mask: &[bool]) -> Result<f64> {
    let e = ScalarField { values: v.values.iter().zip(&t.values).map(|(a, b)| a - b).collect() };
    let num = h1_norm2(grid, &e, mask)?;
    let den = h1_norm2(grid, t, mask)?;
    if den == 0.0 {
        return Ok(num.sqrt());
    }
    Ok((num / den).sqrt())
}

fn h1_norm2(grid: &GridSpec, f: &ScalarField, mask: &[bool]) -> Result<f64> {
    let gr = grid::discrete_gradient(grid, f)?;
    let d = ScalarField {
        values: (0..grid.len())
            .map(|p| f.values[p].powi(2) + (0..3).map(|a| gr.0[a].values[p].powi(2)).sum::<f64>())
            .collect(),
    };
    grid::integrate_volume(grid, &d, Some(mask))
}

/// G_n^j(., x) = d_j G(. - x) - v_n^j on the lattice.
pub fn make_gnj(grid: &GridSpec, seq: &NeedleSequence, n: usize) -> Result<ScalarField> {
    let lvl = seq.level(n)?;
    let x = seq.tip();
    let j = seq.j;
    Ok(ScalarField {
        values: (0..grid.len()).map(|p| target(x, grid.coords(p), j) - lvl.field.values[p]).collect(),
    })
}

/// v_n^j + H^j(., x) per level.
pub fn modified_sequence(seq: &NeedleSequence, h: &VectorField) -> Vec<ScalarField> {
    seq.levels
        .iter()
        .map(|l| ScalarField { values: l.field.values.iter().zip(&h.0[seq.j].values).map(|(a, b)| a + b).collect() })
        .collect()
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct NormRow {
    pub n: usize,
    pub l2: f64,
    pub l1: f64,
    pub ratio: f64,
}

/// L2 and L1 norms of v_n^j over the masked region, per level.
pub fn needle_norm_series(grid: &GridSpec, seq: &NeedleSequence, mask: &[bool]) -> Result<Vec<NormRow>> {
    seq.levels
        .iter()
        .map(|l| {
            let sq = ScalarField { values: l.field.values.iter().map(|v| v * v).collect() };
            let ab = ScalarField { values: l.field.values.iter().map(|v| v.abs()).collect() };
            let l2 = grid::integrate_volume(grid, &sq, Some(mask))?.sqrt();
            let l1 = grid::integrate_volume(grid, &ab, Some(mask))?;
            Ok(NormRow { n: l.n, l2, l1, ratio: if l2 > 0.0 { l1 / l2 } else { 0.0 } })
        })
        .collect()
}

/// Finite surrogate for divergence: |last| >= 4 |first| and the last three
/// increments move away from zero with the sign of the last value.
pub fn blows_up(series: &[f64]) -> bool {
    if series.len() < 4 {
        return false;
    }
    let last = *series.last().unwrap();
    let s = last.signum();
    let k = series.len();
    last.abs() >= 4.0 * series[0].abs() && (k - 3..k).all(|i| s * (series[i] - series[i - 1]) > 0.0)
}

/// Spread of the last three values at most `rel` of the last magnitude.
pub fn converges(series: &[f64], rel: f64) -> bool {
    if series.len() < 3 {
        return false;
    }
    let tail = &series[series.len() - 3..];
    let hi = tail.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lo = tail.iter().cloned().fold(f64::INFINITY, f64::min);
    let last = tail[2].abs();
    hi - lo <= rel * last || (last == 0.0 && hi == lo)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::potential::Shape;

    #[test]
    fn straight_needle_is_valid() {
        let n = make_needle([1.0; 3], [0.0, 0.5, 0.5], &[], [0.5, 0.5, 0.5]).unwrap();
        assert!((n.length() - 0.5).abs() < 1e-15);
        assert_eq!(n.outward(), [-1.0, 0.0, 0.0]);
        assert!((n.distance([0.25, 0.5, 0.9]) - 0.4).abs() < 1e-15);
    }

    #[test]
    fn crossing_polyline_is_rejected() {
        let e = [1.0; 3];
        let r = make_needle(e, [0.0, 0.5, 0.5], &[[0.6, 0.5, 0.5], [0.6, 0.7, 0.5], [0.3, 0.7, 0.5]], [0.3, 0.3, 0.5]);
        assert!(r.is_err());
        assert!(make_needle(e, [0.0, 0.5, 0.5], &[[0.6, 0.5, 0.5]], [0.3, 0.5, 0.5]).is_err());
        assert!(make_needle(e, [0.1, 0.5, 0.5], &[], [0.5, 0.5, 0.5]).is_err());
        assert!(make_needle(e, [0.0, 0.5, 0.5], &[], [1.0, 0.5, 0.5]).is_err());
        assert!(make_needle(e, [0.0, 0.5, 0.5], &[[0.5, 0.5, 0.5]], [0.5, 0.8, 0.5]).is_ok());
    }

    #[test]
    fn hits_ball_obstacle() {
        let e = [1.0; 3];
        let obs = ObstacleSpec::single(Shape::Ball { center: [0.5; 3], radius: 0.2 }, 5.0);
        let through = make_needle(e, [0.0, 0.5, 0.5], &[], [0.9, 0.5, 0.5]).unwrap();
        let beside = make_needle(e, [0.0, 0.1, 0.1], &[], [0.9, 0.1, 0.1]).unwrap();
        let tangent = make_needle(e, [0.0, 0.7, 0.5], &[], [0.9, 0.7, 0.5]).unwrap();
        assert!(through.hits(&obs));
        assert!(!beside.hits(&obs));
        assert!(tangent.hits(&obs));
    }

    #[test]
    fn solid_harmonics_are_harmonic() {
        let mut out = vec![0.0; 81];
        let mut nb = vec![vec![0.0; 81]; 6];
        let z = [0.7, -0.4, 0.55];
        let h = 1e-3;
        irregular_harmonics(z, 0.3, 8, &mut out);
        for a in 0..3 {
            for (k, s) in [-1.0, 1.0].iter().enumerate() {
                let mut q = z;
                q[a] += s * h;
                irregular_harmonics(q, 0.3, 8, &mut nb[2 * a + k]);
            }
        }
        for c in 0..81 {
            let lap: f64 = nb.iter().map(|v| v[c]).sum::<f64>() - 6.0 * out[c];
            let scale = out[c].abs().max(1e-3);
            assert!(lap.abs() / (h * h) < 1e-3 * scale / 0.3f64.powi(2) * 100.0, "column {c}");
        }
    }

    #[test]
    fn decision_rules() {
        assert!(blows_up(&[1.0, 2.0, 3.0, 5.0, 8.0]));
        assert!(blows_up(&[-1.0, -2.0, -3.0, -5.0, -8.0]));
        assert!(!blows_up(&[1.0, 2.0, 9.0, 5.0, 8.0]));
        assert!(!blows_up(&[1.0, 1.1, 1.2, 1.3, 1.4]));
        assert!(converges(&[3.0, 1.0, 1.02, 1.01, 1.0], 0.1));
        assert!(!converges(&[1.0, 2.0, 4.0], 0.1));
    }
}
