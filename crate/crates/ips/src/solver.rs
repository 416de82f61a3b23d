//! Discrete Dirichlet problems for -Lap_h + V, the DtN map and its pairings.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{invalid, IpsError, Result};
use crate::grid::{self, BoundaryField, GridSpec, Point, ScalarField, VectorField};
use crate::kernel;
use crate::potential::PotentialSpec;
use crate::reduce;

pub const DEFAULT_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, Default, Serialize)]
pub struct SolverStats {
    pub solves: usize,
    pub total_iterations: usize,
    pub max_iterations: usize,
    pub max_relative_residual: f64,
}

/// Matrix-free -Lap_h + V on interior nodes, Jacobi-preconditioned CG with a
/// MINRES fallback for indefinite operators.
#[derive(Debug)]
pub struct SchrodingerOperator {
    grid: Arc<GridSpec>,
    v: ScalarField,
    potential_hash: [u8; 32],
    pub tol: f64,
    pub max_iter: usize,
    stats: Mutex<SolverStats>,
}

impl SchrodingerOperator {
    pub fn new(potential: &PotentialSpec) -> Self {
        SchrodingerOperator {
            grid: potential.grid.clone(),
            v: potential.v.clone(),
            potential_hash: potential.content_hash(),
            tol: DEFAULT_TOL,
            max_iter: 20_000,
            stats: Mutex::new(SolverStats::default()),
        }
    }

    /// The V = 0 operator on the same grid.
    pub fn laplace(grid: Arc<GridSpec>) -> Self {
        let v = ScalarField::zeros(&grid);
        let mut h = Sha256::new();
        h.update(b"potential-v1");
        h.update(grid.content_hash());
        for x in &v.values {
            h.update(x.to_le_bytes());
        }
        SchrodingerOperator {
            grid,
            v,
            potential_hash: h.finalize().into(),
            tol: DEFAULT_TOL,
            max_iter: 20_000,
            stats: Mutex::new(SolverStats::default()),
        }
    }

    pub fn without_potential(&self) -> Self {
        let mut op = Self::laplace(self.grid.clone());
        op.tol = self.tol;
        op
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn grid_arc(&self) -> Arc<GridSpec> {
        self.grid.clone()
    }

    pub fn potential(&self) -> &ScalarField {
        &self.v
    }

    pub fn potential_hash(&self) -> [u8; 32] {
        self.potential_hash
    }

    pub fn has_potential(&self) -> bool {
        self.v.values.iter().any(|&x| x != 0.0)
    }

    pub fn stats(&self) -> SolverStats {
        *self.stats.lock().unwrap()
    }

    fn record(&self, iters: usize, res: f64) {
        let mut s = self.stats.lock().unwrap();
        s.solves += 1;
        s.total_iterations += iters;
        s.max_iterations = s.max_iterations.max(iters);
        s.max_relative_residual = s.max_relative_residual.max(res);
    }

    /// (-Lap_h + V) u at interior nodes, using the boundary values of `u`.
    pub fn apply(&self, u: &ScalarField) -> ScalarField {
        let g = &*self.grid;
        let mut out = ScalarField::zeros(g);
        let ih2 = [1.0 / (g.h[0] * g.h[0]), 1.0 / (g.h[1] * g.h[1]), 1.0 / (g.h[2] * g.h[2])];
        let diag = 2.0 * (ih2[0] + ih2[1] + ih2[2]);
        let (sy, sz) = (g.stride(1), g.stride(2));
        let plane = sz;
        let [nx, ny, nz] = g.n;
        let uv = &u.values;
        let vv = &self.v.values;
        out.values.par_chunks_mut(plane).enumerate().for_each(|(k, slab)| {
            if k == 0 || k > nz {
                return;
            }
            for j in 1..=ny {
                let row = k * plane + j * sy;
                for i in 1..=nx {
                    let p = row + i;
                    let lap = ih2[0] * (uv[p + 1] + uv[p - 1])
                        + ih2[1] * (uv[p + sy] + uv[p - sy])
                        + ih2[2] * (uv[p + sz] + uv[p - sz]);
                    slab[j * sy + i] = (diag + vv[p]) * uv[p] - lap;
                }
            }
        });
        out
    }

    fn inv_diag(&self) -> Vec<f64> {
        let g = &*self.grid;
        let d0 = 2.0 * (1.0 / (g.h[0] * g.h[0]) + 1.0 / (g.h[1] * g.h[1]) + 1.0 / (g.h[2] * g.h[2]));
        let mut m = vec![0.0; g.len()];
        for &p in g.interior() {
            let d = d0 + self.v.values[p];
            m[p] = if d.abs() > 1e-12 * d0 { 1.0 / d } else { 1.0 / d0 };
        }
        m
    }

    /// Solves A e = rhs on interior nodes with e = 0 on the boundary.
    pub fn solve_interior(&self, rhs: &ScalarField, tol: f64) -> Result<ScalarField> {
        let g = &*self.grid;
        let mut b = ScalarField::zeros(g);
        for &p in g.interior() {
            b.values[p] = rhs.values[p];
        }
        let bnorm = reduce::dot(&b.values, &b.values).sqrt();
        if bnorm == 0.0 {
            self.record(0, 0.0);
            return Ok(b);
        }
        match self.pcg(&b, bnorm, tol) {
            Ok(x) => Ok(x),
            Err(Indefinite) => self.minres(&b, bnorm, tol),
        }
    }

    fn pcg(&self, b: &ScalarField, bnorm: f64, tol: f64) -> std::result::Result<ScalarField, Indefinite> {
        let minv = self.inv_diag();
        let n = b.values.len();
        let mut x = vec![0.0; n];
        let mut r = b.values.clone();
        let mut z: Vec<f64> = r.iter().zip(&minv).map(|(a, m)| a * m).collect();
        let mut p = ScalarField { values: z.clone() };
        let mut rz = reduce::dot(&r, &z);
        for it in 1..=self.max_iter {
            let ap = self.apply(&p);
            let pap = reduce::dot(&p.values, &ap.values);
            if !(pap > 0.0) {
                return Err(Indefinite);
            }
            let alpha = rz / pap;
            x.par_iter_mut().zip(&p.values).for_each(|(xi, pi)| *xi += alpha * pi);
            r.par_iter_mut().zip(&ap.values).for_each(|(ri, ai)| *ri -= alpha * ai);
            let rn = reduce::dot(&r, &r).sqrt();
            if rn <= tol * bnorm {
                self.record(it, rn / bnorm);
                return Ok(ScalarField { values: x });
            }
            z.par_iter_mut().zip(r.par_iter().zip(&minv)).for_each(|(zi, (ri, mi))| *zi = ri * mi);
            let rz_new = reduce::dot(&r, &z);
            let beta = rz_new / rz;
            rz = rz_new;
            p.values.par_iter_mut().zip(&z).for_each(|(pi, zi)| *pi = zi + beta * *pi);
        }
        Err(Indefinite)
    }

    // Unpreconditioned MINRES (Paige-Saunders recurrences).
    fn minres(&self, b: &ScalarField, beta1: f64, tol: f64) -> Result<ScalarField> {
        let n = b.values.len();
        let mut x = vec![0.0; n];
        let mut r1 = b.values.clone();
        let mut r2 = b.values.clone();
        let mut y = ScalarField { values: b.values.clone() };
        let mut w = vec![0.0; n];
        let mut w2 = vec![0.0; n];
        let (mut oldb, mut beta) = (0.0, beta1);
        let (mut dbar, mut epsln, mut phibar) = (0.0, 0.0, beta1);
        let (mut cs, mut sn) = (-1.0f64, 0.0f64);
        let max_iter = self.max_iter * 4;
        for it in 1..=max_iter {
            let s = 1.0 / beta;
            let v: Vec<f64> = y.values.iter().map(|t| s * t).collect();
            y = self.apply(&ScalarField { values: v.clone() });
            if it >= 2 {
                let c = beta / oldb;
                y.values.iter_mut().zip(&r1).for_each(|(a, b)| *a -= c * b);
            }
            let alfa = reduce::dot(&v, &y.values);
            let c = alfa / beta;
            y.values.iter_mut().zip(&r2).for_each(|(a, b)| *a -= c * b);
            r1 = std::mem::replace(&mut r2, y.values.clone());
            oldb = beta;
            beta = reduce::dot(&y.values, &y.values).sqrt();
            let oldeps = epsln;
            let delta = cs * dbar + sn * alfa;
            let gbar = sn * dbar - cs * alfa;
            epsln = sn * beta;
            dbar = -cs * beta;
            let gamma = (gbar * gbar + beta * beta).sqrt().max(f64::EPSILON);
            cs = gbar / gamma;
            sn = beta / gamma;
            let phi = cs * phibar;
            phibar *= sn;
            let w1 = std::mem::replace(&mut w2, w.clone());
            for i in 0..n {
                w[i] = (v[i] - oldeps * w1[i] - delta * w2[i]) / gamma;
                x[i] += phi * w[i];
            }
            if phibar <= tol * beta1 || beta == 0.0 {
                self.record(it, phibar / beta1);
                return Ok(ScalarField { values: x });
            }
        }
        Err(IpsError::SolverNoConvergence { iters: max_iter, residual: phibar / beta1 })
    }

    /// Discrete solution with boundary values `bc` and interior right-hand side `rhs`.
    pub fn solve_dirichlet(&self, bc: &BoundaryField, rhs: &ScalarField) -> Result<ScalarField> {
        let g = &*self.grid;
        if bc.values.len() != g.boundary_len() || rhs.values.len() != g.len() {
            return invalid("boundary data or right-hand side has the wrong size");
        }
        let lift = bc.extend_by_zero(g);
        let a_lift = self.apply(&lift);
        let mut r = ScalarField::zeros(g);
        for &p in g.interior() {
            r.values[p] = rhs.values[p] - a_lift.values[p];
        }
        let mut u = self.solve_interior(&r, self.tol)?;
        for (b, &p) in g.boundary().iter().enumerate() {
            u.values[p] = bc.values[b];
        }
        Ok(u)
    }

    /// Relative residual of a candidate solution of A u = rhs.
    pub fn residual(&self, u: &ScalarField, rhs: &ScalarField) -> f64 {
        let au = self.apply(u);
        let g = &*self.grid;
        let mut num = 0.0f64;
        let mut den = 0.0f64;
        for &p in g.interior() {
            num = num.max((au.values[p] - rhs.values[p]).abs());
            den = den.max(rhs.values[p].abs()).max(au.values[p].abs());
        }
        if den == 0.0 {
            0.0
        } else {
            num / den
        }
    }
}

#[derive(Debug)]
struct Indefinite;

/// Nodal samples of grad G(. - x) on the whole lattice.
pub fn grad_g_field(grid: &GridSpec, x: Point) -> VectorField {
    grid.sample_vector(|z| kernel::grad_g([z[0] - x[0], z[1] - x[1], z[2] - x[2]]))
}

fn check_probe(grid: &GridSpec, x: Point) -> Result<()> {
    if !grid.contains(x) {
        return invalid(format!("probe point {x:?} is outside the domain"));
    }
    if grid.lattice_offset(x) < 1e-6 {
        return invalid(format!("probe point {x:?} coincides with a lattice node"));
    }
    Ok(())
}

fn solve_components<F>(op: &SchrodingerOperator, f: F) -> Result<VectorField>
where
    F: Fn(usize) -> Result<ScalarField> + Sync + Send,
{
    let parts: Vec<Result<ScalarField>> = (0..3).into_par_iter().map(f).collect();
    let mut it = parts.into_iter();
    let a = it.next().unwrap()?;
    let b = it.next().unwrap()?;
    let c = it.next().unwrap()?;
    let _ = op;
    Ok(VectorField([a, b, c]))
}

fn masked_rhs(op: &SchrodingerOperator, src: &VectorField, c: usize) -> ScalarField {
    let v = &op.v.values;
    ScalarField { values: src.0[c].values.iter().zip(v).map(|(s, vv)| -vv * s).collect() }
}

/// w_x: A w = -V grad G(. - x), w = 0 on the boundary.
pub fn solve_w(op: &SchrodingerOperator, x: Point) -> Result<VectorField> {
    check_probe(op.grid(), x)?;
    let gx = grad_g_field(op.grid(), x);
    solve_w_with(op, &gx)
}

pub(crate) fn solve_w_with(op: &SchrodingerOperator, src: &VectorField) -> Result<VectorField> {
    let zero = BoundaryField::zeros(op.grid());
    solve_components(op, |c| op.solve_dirichlet(&zero, &masked_rhs(op, src, c)))
}

/// w1_x: A w = 0, w = grad G(. - x) on the boundary.
pub fn solve_w1(op: &SchrodingerOperator, x: Point) -> Result<VectorField> {
    check_probe(op.grid(), x)?;
    let gx = grad_g_field(op.grid(), x);
    let zero = ScalarField::zeros(op.grid());
    solve_components(op, |c| op.solve_dirichlet(&gx.0[c].trace(op.grid()), &zero))
}

/// W_x: A W = -V grad G(. - x), W = grad G(. - x) on the boundary.
pub fn solve_big_w(op: &SchrodingerOperator, x: Point) -> Result<VectorField> {
    check_probe(op.grid(), x)?;
    let gx = grad_g_field(op.grid(), x);
    solve_components(op, |c| op.solve_dirichlet(&gx.0[c].trace(op.grid()), &masked_rhs(op, &gx, c)))
}

/// H(., x): harmonic with boundary values -grad G(. - x).
pub fn solve_h(grid: Arc<GridSpec>, x: Point) -> Result<VectorField> {
    check_probe(&grid, x)?;
    let op0 = SchrodingerOperator::laplace(grid);
    let gx = grad_g_field(op0.grid(), x);
    let zero = ScalarField::zeros(op0.grid());
    solve_components(&op0, |c| {
        let mut t = gx.0[c].trace(op0.grid());
        t.values.iter_mut().for_each(|v| *v = -*v);
        op0.solve_dirichlet(&t, &zero)
    })
}

/// w*_x: A w = -V (grad G(. - x) + H(., x)), w = 0 on the boundary.
pub fn solve_wstar(op: &SchrodingerOperator, x: Point, h: &VectorField) -> Result<VectorField> {
    check_probe(op.grid(), x)?;
    let gx = grad_g_field(op.grid(), x);
    let src = gx.add(h);
    solve_w_with(op, &src)
}

/// Lambda_V f by one solve and the one-sided normal derivative.
pub fn apply_dtn(op: &SchrodingerOperator, f: &BoundaryField) -> Result<BoundaryField> {
    let u = op.solve_dirichlet(f, &ScalarField::zeros(op.grid()))?;
    grid::normal_derivative(op.grid(), &u)
}

/// Weak form E_h(u, v) + (V u, v) with u the V-solution for f and v the
/// harmonic extension of g.
pub fn dtn_pairing(op: &SchrodingerOperator, f: &BoundaryField, g: &BoundaryField) -> Result<f64> {
    let zero = ScalarField::zeros(op.grid());
    let u = op.solve_dirichlet(f, &zero)?;
    let v = op.without_potential().solve_dirichlet(g, &zero)?;
    Ok(weak_pairing(op, &u, &v))
}

/// E_h(u, v) + h^3 sum V u v for lattice fields.
pub fn weak_pairing(op: &SchrodingerOperator, u: &ScalarField, v: &ScalarField) -> f64 {
    grid::energy(op.grid(), u, v) + grid::weighted_dot(op.grid(), &op.v, u, v)
}

/// <(Lambda_V - Lambda_0) f, g> = h^3 sum V u_f v_g with v_g harmonic.
pub fn dtn_difference_pairing(op: &SchrodingerOperator, u_f: &ScalarField, v_g: &ScalarField) -> f64 {
    grid::weighted_dot(op.grid(), &op.v, u_f, v_g)
}

/// Dense Dirichlet-to-Neumann data: `normal` holds one-sided normal
/// derivatives (column j is Lambda_V e_j) and `pairing` the weak-form matrix
/// M[i][j] = <Lambda_V e_j, e_i>.
#[derive(Debug, Clone)]
pub struct DtnMap {
    pub boundary_len: usize,
    pub grid_hash: [u8; 32],
    pub potential_hash: [u8; 32],
    pub normal: Vec<f64>,
    pub pairing: Vec<f64>,
}

pub const DTN_GUARD: usize = 20_000;
const DTN_MAGIC: &[u8; 8] = b"IPSDTN\0\0";
const DTN_VERSION: u32 = 1;

impl DtnMap {
    pub fn apply(&self, f: &BoundaryField) -> BoundaryField {
        let nb = self.boundary_len;
        let values = (0..nb)
            .into_par_iter()
            .map(|i| {
                let row = &self.normal[i * nb..(i + 1) * nb];
                row.iter().zip(&f.values).map(|(a, b)| a * b).sum()
            })
            .collect();
        BoundaryField { values }
    }

    pub fn pair(&self, f: &BoundaryField, g: &BoundaryField) -> f64 {
        let nb = self.boundary_len;
        reduce::sum_by(nb, |i| {
            let row = &self.pairing[i * nb..(i + 1) * nb];
            g.values[i] * row.iter().zip(&f.values).map(|(a, b)| a * b).sum::<f64>()
        })
    }

    /// Largest |M - M^T| entry relative to the largest |M| entry.
    pub fn pairing_asymmetry(&self) -> f64 {
        let nb = self.boundary_len;
        let mut num = 0.0f64;
        let mut den = 0.0f64;
        for i in 0..nb {
            for j in 0..nb {
                num = num.max((self.pairing[i * nb + j] - self.pairing[j * nb + i]).abs());
                den = den.max(self.pairing[i * nb + j].abs());
            }
        }
        num / den
    }

    pub fn cache_name(&self) -> String {
        cache_name(&self.grid_hash, &self.potential_hash)
    }

    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        fs::create_dir_all(dir)?;
        let path = dir.join(self.cache_name());
        let tmp = dir.join(format!("{}.tmp{}", self.cache_name(), std::process::id()));
        {
            let mut f = std::io::BufWriter::new(fs::File::create(&tmp)?);
            f.write_all(DTN_MAGIC)?;
            f.write_all(&DTN_VERSION.to_le_bytes())?;
            f.write_all(&self.grid_hash)?;
            f.write_all(&self.potential_hash)?;
            f.write_all(&(self.boundary_len as u64).to_le_bytes())?;
            for v in self.normal.iter().chain(&self.pairing) {
                f.write_all(&v.to_le_bytes())?;
            }
            f.flush()?;
        }
        fs::rename(&tmp, &path)?;
        Ok(path)
    }

    pub fn read(path: &Path, grid_hash: &[u8; 32], potential_hash: &[u8; 32]) -> Result<Option<DtnMap>> {
        let mut buf = Vec::new();
        match fs::File::open(path) {
            Ok(mut f) => f.read_to_end(&mut buf)?,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(e.into()),
        };
        let head = 8 + 4 + 32 + 32 + 8;
        if buf.len() < head || &buf[..8] != DTN_MAGIC {
            return Ok(None);
        }
        let version = u32::from_le_bytes(buf[8..12].try_into().unwrap());
        if version != DTN_VERSION || &buf[12..44] != grid_hash || &buf[44..76] != potential_hash {
            return Ok(None);
        }
        let nb = u64::from_le_bytes(buf[76..84].try_into().unwrap()) as usize;
        if buf.len() != head + 16 * nb * nb {
            return Ok(None);
        }
        let floats: Vec<f64> = buf[head..].chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        let (normal, pairing) = floats.split_at(nb * nb);
        Ok(Some(DtnMap {
            boundary_len: nb,
            grid_hash: *grid_hash,
            potential_hash: *potential_hash,
            normal: normal.to_vec(),
            pairing: pairing.to_vec(),
        }))
    }
}

fn cache_name(grid_hash: &[u8; 32], pot_hash: &[u8; 32]) -> String {
    let hex = |b: &[u8]| b.iter().take(12).map(|x| format!("{x:02x}")).collect::<String>();
    format!("dtn-{}-{}.bin", hex(grid_hash), hex(pot_hash))
}

/// Column-by-column assembly of the dense DtN data, reusing `cache_dir` if given.
pub fn assemble_dense_dtn(op: &SchrodingerOperator, cache_dir: Option<&Path>) -> Result<DtnMap> {
    let g = op.grid();
    let nb = g.boundary_len();
    if nb > DTN_GUARD {
        return Err(IpsError::SizeGuard(format!("{nb} boundary nodes exceed the dense guard of {DTN_GUARD}")));
    }
    let gh = g.content_hash();
    let ph = op.potential_hash();
    if let Some(dir) = cache_dir {
        if let Some(map) = DtnMap::read(&dir.join(cache_name(&gh, &ph)), &gh, &ph)? {
            return Ok(map);
        }
    }
    let zero = ScalarField::zeros(g);
    let columns: Vec<Result<(Vec<f64>, Vec<f64>)>> = (0..nb)
        .into_par_iter()
        .map(|j| {
            let mut e = BoundaryField::zeros(g);
            e.values[j] = 1.0;
            let u = op.solve_dirichlet(&e, &zero)?;
            let dn = grid::normal_derivative(g, &u)?;
            Ok((dn.values, boundary_flux(g, &u)))
        })
        .collect();
    let mut normal = vec![0.0; nb * nb];
    let mut pairing = vec![0.0; nb * nb];
    for (j, col) in columns.into_iter().enumerate() {
        let (dn, fl) = col?;
        for i in 0..nb {
            normal[i * nb + j] = dn[i];
            pairing[i * nb + j] = fl[i];
        }
    }
    let map = DtnMap { boundary_len: nb, grid_hash: gh, potential_hash: ph, normal, pairing };
    if let Some(dir) = cache_dir {
        map.write(dir)?;
    }
    Ok(map)
}

/// E_h(u, e_i) for every boundary slot i: the weak boundary flux of u.
pub fn boundary_flux(g: &GridSpec, u: &ScalarField) -> Vec<f64> {
    let dv = g.cell_volume();
    g.boundary()
        .iter()
        .map(|&p| {
            let c = g.ijk(p);
            let mut acc = 0.0;
            for a in 0..3 {
                for dir in [-1i64, 1] {
                    let ca = c[a] as i64 + dir;
                    if ca < 0 || ca >= g.dims[a] as i64 {
                        continue;
                    }
                    let q = if dir > 0 { p + g.stride(a) } else { p - g.stride(a) };
                    let mut w = dv / (g.h[a] * g.h[a]);
                    for b in 0..3 {
                        if b != a && (c[b] == 0 || c[b] == g.dims[b] - 1) {
                            w *= 0.5;
                        }
                    }
                    acc += w * (u.values[p] - u.values[q]);
                }
            }
            acc
        })
        .collect()
}

pub const ORACLE_GUARD: usize = 1331;

/// Dense LU solve of the same discretization; the cross-check for the iterative solver.
pub fn dense_oracle_solve(op: &SchrodingerOperator, bc: &BoundaryField, rhs: &ScalarField) -> Result<ScalarField> {
    use faer::linalg::solvers::Solve;
    let g = op.grid();
    let ni = g.interior().len();
    if ni > ORACLE_GUARD {
        return Err(IpsError::SizeGuard(format!("{ni} interior nodes exceed the dense oracle guard of {ORACLE_GUARD}")));
    }
    let mut slot = vec![usize::MAX; g.len()];
    for (k, &p) in g.interior().iter().enumerate() {
        slot[p] = k;
    }
    let lift = bc.extend_by_zero(g);
    let mut a = faer::Mat::<f64>::zeros(ni, ni);
    let mut b = faer::Mat::<f64>::zeros(ni, 1);
    for (k, &p) in g.interior().iter().enumerate() {
        let mut diag = op.v.values[p];
        let mut r = rhs.values[p];
        for ax in 0..3 {
            let ih2 = 1.0 / (g.h[ax] * g.h[ax]);
            diag += 2.0 * ih2;
            for q in [p - g.stride(ax), p + g.stride(ax)] {
                if slot[q] == usize::MAX {
                    r += ih2 * lift.values[q];
                } else {
                    a[(k, slot[q])] = -ih2;
                }
            }
        }
        a[(k, k)] = diag;
        b[(k, 0)] = r;
    }
    let x = a.partial_piv_lu().solve(&b);
    let mut u = lift;
    for (k, &p) in g.interior().iter().enumerate() {
        u.values[p] = x[(k, 0)];
    }
    Ok(u)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::build_grid;
    use crate::potential::{sample_potential, ObstacleSpec, Shape};

    fn setup(n: usize, amp: f64) -> SchrodingerOperator {
        let g = Arc::new(build_grid([1.0; 3], [n; 3]).unwrap());
        let obs = if amp == 0.0 {
            ObstacleSpec::empty()
        } else {
            ObstacleSpec::single(Shape::Ball { center: [0.5; 3], radius: 0.25 }, amp)
        };
        SchrodingerOperator::new(&sample_potential(g, obs).unwrap())
    }

    #[test]
    fn affine_data_is_reproduced() {
        let op = setup(8, 0.0);
        let g = op.grid();
        let f = g.sample(|z| 1.0 + z[0] - 2.0 * z[2]);
        let u = op.solve_dirichlet(&f.trace(g), &ScalarField::zeros(g)).unwrap();
        for p in 0..g.len() {
            assert!((u.values[p] - f.values[p]).abs() < 1e-9);
        }
        let zero = op.solve_dirichlet(&BoundaryField::zeros(g), &ScalarField::zeros(g)).unwrap();
        assert!(zero.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn oracle_agrees_with_cg() {
        let op = setup(6, 5.0);
        let g = op.grid();
        let bc = g.sample_boundary(|z| (z[0] * 3.0).sin() + z[1] * z[2]);
        let rhs = g.sample(|z| z[0] - z[1]);
        let u = op.solve_dirichlet(&bc, &rhs).unwrap();
        let d = dense_oracle_solve(&op, &bc, &rhs).unwrap();
        let scale = d.max_abs();
        for p in 0..g.len() {
            assert!((u.values[p] - d.values[p]).abs() <= 1e-10 * scale);
        }
        assert!(op.residual(&d, &rhs) < 1e-12);
    }

    #[test]
    fn dense_dtn_columns_and_symmetry() {
        let op = setup(4, 5.0);
        let g = op.grid();
        let dir = tempfile::tempdir().unwrap();
        let map = assemble_dense_dtn(&op, Some(dir.path())).unwrap();
        assert!(map.pairing_asymmetry() < 1e-10);
        let f = g.sample_boundary(|z| z[0] * z[1] - z[2]);
        let direct = apply_dtn(&op, &f).unwrap();
        let via = map.apply(&f);
        for (a, b) in direct.values.iter().zip(&via.values) {
            assert!((a - b).abs() < 1e-8 * (1.0 + a.abs()));
        }
        let again = assemble_dense_dtn(&op, Some(dir.path())).unwrap();
        assert_eq!(again.normal, map.normal);
        let op0 = setup(4, 0.0);
        let m0 = assemble_dense_dtn(&op0, None).unwrap();
        let m0b = assemble_dense_dtn(&op0.without_potential(), None).unwrap();
        assert_eq!(m0.pairing, m0b.pairing);
    }

    #[test]
    fn pairing_of_linear_trace() {
        let op = setup(8, 0.0);
        let g = op.grid();
        let f = g.sample(|z| z[0]).trace(g);
        let v = dtn_pairing(&op, &f, &f).unwrap();
        assert!((v - 1.0).abs() < 1e-9);
    }

    #[test]
    fn w_vanishes_without_potential() {
        let op = setup(6, 0.0);
        let w = solve_w(&op, [0.21, 0.33, 0.47]).unwrap();
        assert_eq!(w.max_abs(), 0.0);
    }
}
