//! Laplace fundamental solution, its derivatives, and the analytic integrals
//! built from them (cone energies, exterior Hessian energies, boundary norms).

use std::collections::BinaryHeap;
use std::f64::consts::PI;
use std::num::NonZeroUsize;
use std::sync::OnceLock;

use gauss_quad::GaussLegendre;

use crate::error::{invalid, IpsError, Result};
use crate::grid::Point;

const FOUR_PI: f64 = 4.0 * PI;
const MIN_NORM: f64 = 1e-14;

fn norm(z: Point) -> f64 {
    (z[0] * z[0] + z[1] * z[1] + z[2] * z[2]).sqrt()
}

fn sub(a: Point, b: Point) -> Point {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn dot(a: Point, b: Point) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
pub fn g(z: Point) -> f64 {
    1.0 / (FOUR_PI * norm(z))
}

#[inline]
pub fn grad_g(z: Point) -> Point {
    let r = norm(z);
    let c = -1.0 / (FOUR_PI * r * r * r);
    [c * z[0], c * z[1], c * z[2]]
}

#[inline]
pub fn hess_g(z: Point) -> [[f64; 3]; 3] {
    let r2 = dot(z, z);
    let r = r2.sqrt();
    let r3 = r2 * r;
    let r5 = r3 * r2;
    let mut h = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            h[i][j] = 3.0 * z[i] * z[j] / r5;
        }
        h[i][i] -= 1.0 / r3;
    }
    for row in h.iter_mut() {
        for v in row.iter_mut() {
            *v /= FOUR_PI;
        }
    }
    h
}

fn check(z: Point) -> Result<()> {
    let r = norm(z);
    if !(r >= MIN_NORM) {
        return invalid(format!("kernel evaluated at |z| = {r:e}"));
    }
    Ok(())
}

pub fn eval_g(z: Point) -> Result<f64> {
    check(z)?;
    Ok(g(z))
}

pub fn eval_grad_g(z: Point) -> Result<Point> {
    check(z)?;
    Ok(grad_g(z))
}

pub fn eval_hess_g(z: Point) -> Result<[[f64; 3]; 3]> {
    check(z)?;
    Ok(hess_g(z))
}

/// Gauss-Legendre nodes and weights on [0, 1].
pub(crate) fn gauss01(order: usize) -> &'static [(f64, f64)] {
    static RULES: OnceLock<Vec<Vec<(f64, f64)>>> = OnceLock::new();
    let rules = RULES.get_or_init(|| {
        (0..=24)
            .map(|m| {
                if m == 0 {
                    return Vec::new();
                }
                let q = GaussLegendre::new(NonZeroUsize::new(m).unwrap());
                q.as_node_weight_pairs().iter().map(|&(x, w)| (0.5 * (x + 1.0), 0.5 * w)).collect()
            })
            .collect()
    });
    &rules[order]
}

#[derive(Debug, Clone, Copy)]
struct Region<const D: usize> {
    lo: [f64; D],
    hi: [f64; D],
    value: f64,
    error: f64,
}

impl<const D: usize> PartialEq for Region<D> {
    fn eq(&self, other: &Self) -> bool {
        self.error == other.error
    }
}
impl<const D: usize> Eq for Region<D> {}
impl<const D: usize> PartialOrd for Region<D> {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl<const D: usize> Ord for Region<D> {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.error.total_cmp(&other.error)
    }
}

fn tensor_rule<const D: usize, F: Fn(&[f64; D]) -> f64>(f: &F, lo: &[f64; D], hi: &[f64; D], order: usize) -> f64 {
    let rule = gauss01(order);
    let m = rule.len();
    let total = m.pow(D as u32);
    let mut acc = 0.0;
    let mut x = [0.0; D];
    for flat in 0..total {
        let mut rem = flat;
        let mut w = 1.0;
        for d in 0..D {
            let (t, wt) = rule[rem % m];
            rem /= m;
            x[d] = lo[d] + t * (hi[d] - lo[d]);
            w *= wt * (hi[d] - lo[d]);
        }
        acc += w * f(&x);
    }
    acc
}

fn estimate<const D: usize, F: Fn(&[f64; D]) -> f64>(f: &F, lo: [f64; D], hi: [f64; D]) -> Region<D> {
    let fine = tensor_rule(f, &lo, &hi, 7);
    let coarse = tensor_rule(f, &lo, &hi, 5);
    Region { lo, hi, value: fine, error: (fine - coarse).abs() }
}

/// Outcome of an adaptive cubature.
#[derive(Debug, Clone, Copy)]
pub struct Quadrature {
    pub value: f64,
    pub error: f64,
    pub converged: bool,
}

/// Global adaptive cubature over the unit cube in D dimensions, starting from
/// a uniform split into `initial^D` boxes.
pub(crate) fn adaptive<const D: usize, F: Fn(&[f64; D]) -> f64>(
    f: F,
    initial: usize,
    rel_tol: f64,
    abs_tol: f64,
    max_regions: usize,
) -> Quadrature {
    let mut heap = BinaryHeap::new();
    let cells = initial.pow(D as u32);
    for flat in 0..cells {
        let mut rem = flat;
        let mut lo = [0.0; D];
        let mut hi = [0.0; D];
        for d in 0..D {
            let c = rem % initial;
            rem /= initial;
            lo[d] = c as f64 / initial as f64;
            hi[d] = (c + 1) as f64 / initial as f64;
        }
        heap.push(estimate(&f, lo, hi));
    }
    let mut count = cells;
    let (mut value, mut error) = heap.iter().fold((0.0, 0.0), |(v, e), r| (v + r.value, e + r.error));
    loop {
        if error <= rel_tol * value.abs() + abs_tol {
            return Quadrature { value: sum_regions(&heap), error, converged: true };
        }
        if count >= max_regions {
            return Quadrature { value: sum_regions(&heap), error, converged: false };
        }
        let worst = heap.pop().expect("non-empty heap");
        value -= worst.value;
        error -= worst.error;
        for corner in 0..(1usize << D) {
            let mut lo = worst.lo;
            let mut hi = worst.hi;
            for d in 0..D {
                let mid = 0.5 * (worst.lo[d] + worst.hi[d]);
                if corner >> d & 1 == 0 {
                    hi[d] = mid;
                } else {
                    lo[d] = mid;
                }
            }
            let child = estimate(&f, lo, hi);
            value += child.value;
            error += child.error;
            heap.push(child);
        }
        error = error.max(0.0);
        count += (1 << D) - 1;
    }
}

// Region order in the heap depends only on the error values, so a sorted sum
// keeps the result independent of insertion history ties.
fn sum_regions<const D: usize>(heap: &BinaryHeap<Region<D>>) -> f64 {
    let mut v: Vec<(f64, f64, f64)> = heap.iter().map(|r| (r.lo[0], r.lo[D - 1], r.value)).collect();
    v.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)).then(a.2.total_cmp(&b.2)));
    v.iter().map(|t| t.2).sum()
}

/// Face `f` of the box: fixed axis, side, and the two in-face axes.
struct Face {
    axis: usize,
    high: bool,
    u: usize,
    v: usize,
}

fn faces() -> [Face; 6] {
    let mk = |axis: usize, high: bool| Face { axis, high, u: (axis + 1) % 3, v: (axis + 2) % 3 };
    [mk(0, false), mk(0, true), mk(1, false), mk(1, true), mk(2, false), mk(2, true)]
}

fn face_point(ext: &[f64; 3], face: &Face, s: f64, t: f64) -> Point {
    let mut p = [0.0; 3];
    p[face.axis] = if face.high { ext[face.axis] } else { 0.0 };
    p[face.u] = s * ext[face.u];
    p[face.v] = t * ext[face.v];
    p
}

fn face_normal(face: &Face) -> Point {
    let mut n = [0.0; 3];
    n[face.axis] = if face.high { 1.0 } else { -1.0 };
    n
}

/// Parameters of the analytic quadratures.
#[derive(Debug, Clone, Copy)]
pub struct QuadratureOptions {
    pub rel_tol: f64,
    pub max_regions: usize,
}

impl Default for QuadratureOptions {
    fn default() -> Self {
        QuadratureOptions { rel_tol: 1e-6, max_regions: 20_000 }
    }
}

/// Surface integral over the box boundary of `f(z, outward normal)`.
pub fn box_surface_integral<F>(extents: [f64; 3], f: F, opts: QuadratureOptions) -> Quadrature
where
    F: Fn(Point, Point) -> f64,
{
    let mut total = Quadrature { value: 0.0, error: 0.0, converged: true };
    for face in faces() {
        let area = extents[face.u] * extents[face.v];
        let nrm = face_normal(&face);
        let q = adaptive::<2, _>(
            |st| area * f(face_point(&extents, &face, st[0], st[1]), nrm),
            2,
            opts.rel_tol,
            1e-300,
            opts.max_regions,
        );
        total.value += q.value;
        total.error += q.error;
        total.converged &= q.converged;
    }
    total
}

/// ||grad G(. - x)||^2 over the box boundary.
pub fn boundary_grad_norm(extents: [f64; 3], x: Point) -> Result<f64> {
    inside(extents, x)?;
    let q = box_surface_integral(
        extents,
        |z, _| {
            let gv = grad_g(sub(z, x));
            dot(gv, gv)
        },
        QuadratureOptions::default(),
    );
    finish(q)
}

/// Boundary pairing of grad G(. - x) with the normal derivative of grad G(. - y).
pub fn boundary_hess_pairing(extents: [f64; 3], x: Point, y: Point) -> Result<f64> {
    inside(extents, x)?;
    inside(extents, y)?;
    let q = box_surface_integral(
        extents,
        |z, nu| {
            let gx = grad_g(sub(z, x));
            let hy = hess_g(sub(z, y));
            let mut acc = 0.0;
            for i in 0..3 {
                acc += gx[i] * dot(hy[i], nu);
            }
            acc
        },
        QuadratureOptions::default(),
    );
    finish(q)
}

/// Integral over the exterior of the box of the Frobenius product of the
/// Hessians of G centred at x and y. Each face is swept by rays from the box
/// centre, z = c + (p - c)/t with t in (0, 1], which maps the unbounded region
/// onto a cube and turns the r^-6 far field into a polynomial in t.
pub fn exterior_hess_energy(extents: [f64; 3], x: Point, y: Option<Point>, rel_tol: f64) -> Result<f64> {
    inside(extents, x)?;
    let y = y.unwrap_or(x);
    inside(extents, y)?;
    let c = [extents[0] / 2.0, extents[1] / 2.0, extents[2] / 2.0];
    let mut value = 0.0;
    let mut error = 0.0;
    let mut converged = true;
    for face in faces() {
        let area = extents[face.u] * extents[face.v];
        let d = extents[face.axis] / 2.0;
        let q = adaptive::<3, _>(
            |st| {
                let p = face_point(&extents, &face, st[0], st[1]);
                let t = st[2];
                if t <= 0.0 {
                    return 0.0;
                }
                let z = [c[0] + (p[0] - c[0]) / t, c[1] + (p[1] - c[1]) / t, c[2] + (p[2] - c[2]) / t];
                let hx = hess_g(sub(z, x));
                let hy = hess_g(sub(z, y));
                let mut acc = 0.0;
                for i in 0..3 {
                    acc += dot(hx[i], hy[i]);
                }
                acc * area * d / (t * t * t * t)
            },
            2,
            rel_tol * 0.1,
            1e-300,
            60_000,
        );
        value += q.value;
        error += q.error;
        converged &= q.converged;
    }
    let q = Quadrature { value, error, converged };
    if !q.converged && q.error > rel_tol * q.value.abs() {
        return Err(IpsError::Quadrature { value: q.value, error: q.error });
    }
    Ok(q.value)
}

/// Closed form of the exterior energy tail beyond a sphere of radius `r` for a
/// source at the sphere centre: integral of |Hess G|^2 = 6/(16 pi^2 r^6).
pub fn hess_energy_tail(r: f64) -> f64 {
    1.0 / (2.0 * PI * r * r * r)
}

fn inside(extents: [f64; 3], x: Point) -> Result<()> {
    for a in 0..3 {
        if !(x[a] > 0.0 && x[a] < extents[a]) {
            return invalid(format!("point {x:?} is not inside the box"));
        }
    }
    Ok(())
}

fn finish(q: Quadrature) -> Result<f64> {
    if q.converged {
        Ok(q.value)
    } else {
        Err(IpsError::Quadrature { value: q.value, error: q.error })
    }
}

/// Half-angle value meaning "all directions".
pub const FULL_SPHERE: f64 = PI;

/// Integral of |grad G(z) . b|^2 over the truncated cone with axis `a`,
/// half-angle `theta`, and radii in (eps, r_outer). theta = pi gives the
/// full shell.
pub fn cone_energy_integral(a: Point, theta: f64, b: Point, eps: f64, r_outer: f64) -> Result<f64> {
    if !(theta > 1e-6 && theta <= PI) {
        return invalid(format!("degenerate cone half-angle {theta}"));
    }
    if !(eps > 0.0 && eps < r_outer) {
        return invalid(format!("need 0 < eps < R, got eps = {eps}, R = {r_outer}"));
    }
    let na = norm(a);
    let nb = norm(b);
    if na < MIN_NORM || nb < MIN_NORM {
        return invalid("axis and direction must be non-zero");
    }
    let a = [a[0] / na, a[1] / na, a[2] / na];
    let b = [b[0] / nb, b[1] / nb, b[2] / nb];
    let (e1, e2) = orthonormal_pair(a);
    // angular part: Gauss in theta, trapezoid in phi (integrand is a degree-2
    // trigonometric polynomial in phi)
    let rule = gauss01(16);
    let panels = 8;
    let nphi = 16;
    let mut ang = 0.0;
    for pnl in 0..panels {
        let t0 = theta * pnl as f64 / panels as f64;
        let dt = theta / panels as f64;
        for &(s, w) in rule {
            let th = t0 + s * dt;
            let (st, ct) = th.sin_cos();
            let mut ring = 0.0;
            for k in 0..nphi {
                let ph = 2.0 * PI * k as f64 / nphi as f64;
                let (sp, cp) = ph.sin_cos();
                let om = [
                    st * cp * e1[0] + st * sp * e2[0] + ct * a[0],
                    st * cp * e1[1] + st * sp * e2[1] + ct * a[1],
                    st * cp * e1[2] + st * sp * e2[2] + ct * a[2],
                ];
                let ob = dot(om, b);
                ring += ob * ob;
            }
            ang += w * dt * st * ring * 2.0 * PI / nphi as f64;
        }
    }
    // radial part in log r: integral of r^-2 dr = integral of e^-u du
    let (u0, u1) = (eps.ln(), r_outer.ln());
    let rpanels = 32;
    let mut rad = 0.0;
    for pnl in 0..rpanels {
        let lo = u0 + (u1 - u0) * pnl as f64 / rpanels as f64;
        let du = (u1 - u0) / rpanels as f64;
        for &(s, w) in rule {
            rad += w * du * (-(lo + s * du)).exp();
        }
    }
    Ok(ang * rad / (16.0 * PI * PI))
}

fn orthonormal_pair(a: Point) -> (Point, Point) {
    let seed = if a[0].abs() < 0.9 { [1.0, 0.0, 0.0] } else { [0.0, 1.0, 0.0] };
    let d = dot(seed, a);
    let mut e1 = [seed[0] - d * a[0], seed[1] - d * a[1], seed[2] - d * a[2]];
    let n1 = norm(e1);
    for v in e1.iter_mut() {
        *v /= n1;
    }
    let e2 = [a[1] * e1[2] - a[2] * e1[1], a[2] * e1[0] - a[0] * e1[2], a[0] * e1[1] - a[1] * e1[0]];
    (e1, e2)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn closed_forms_on_axis() {
        assert!((eval_g([1.0, 0.0, 0.0]).unwrap() - 0.0795774715459477).abs() < 1e-15);
        let gr = eval_grad_g([1.0, 0.0, 0.0]).unwrap();
        assert!((gr[0] + 1.0 / FOUR_PI).abs() < 1e-15 && gr[1] == 0.0 && gr[2] == 0.0);
        assert!(eval_g([0.0; 3]).is_err());
        assert!(eval_hess_g([1e-15, 0.0, 0.0]).is_err());
    }

    #[test]
    fn hessian_is_traceless_and_symmetric() {
        for z in [[0.3, -0.2, 0.9], [1e-3, 2e-3, -5e-4], [7.0, 1.0, 0.1]] {
            let h = eval_hess_g(z).unwrap();
            let tr = h[0][0] + h[1][1] + h[2][2];
            let scale = h.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
            assert!(tr.abs() <= 1e-12 * scale);
            assert_eq!(h[0][1], h[1][0]);
        }
    }

    #[test]
    fn full_sphere_cone_matches_closed_form() {
        let v = cone_energy_integral([0.0, 0.0, 1.0], FULL_SPHERE, [1.0, 0.0, 0.0], 0.01, 1.0).unwrap();
        let want = (1.0 / (12.0 * PI)) * (1.0 / 0.01 - 1.0);
        assert!((v - want).abs() < 1e-10 * want, "{v} vs {want}");
        assert!((want - 2.6261).abs() < 1e-4);
    }

    #[test]
    fn exterior_tail_formula() {
        assert!((hess_energy_tail(1.0) - 1.0 / (2.0 * PI)).abs() < 1e-15);
    }
}
