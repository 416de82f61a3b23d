//! Side A indicators. Every quantity is computed along at least two paths and
//! the discrepancy is returned next to the value.

use std::collections::BTreeMap;
use std::sync::OnceLock;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{invalid, IpsError, Result};
use crate::grid::{self, BoundaryField, GridSpec, Point, ScalarField, VectorField};
use crate::kernel;
use crate::needle::NeedleSequence;
use crate::reduce;
use crate::solver::{self, SchrodingerOperator};

/// Relative tolerance passed to the exterior Hessian quadrature.
pub const QUAD_TOL: f64 = 1e-7;

fn rel(a: f64, b: f64) -> f64 {
    let s = a.abs().max(b.abs());
    if s == 0.0 {
        0.0
    } else {
        (a - b).abs() / s
    }
}

fn get_or_try<'c, T>(cell: &'c OnceLock<T>, f: impl FnOnce() -> Result<T>) -> Result<&'c T> {
    if let Some(v) = cell.get() {
        return Ok(v);
    }
    let v = f()?;
    let _ = cell.set(v);
    Ok(cell.get().unwrap())
}

fn flux3(g: &GridSpec, f: &VectorField) -> [Vec<f64>; 3] {
    [solver::boundary_flux(g, &f.0[0]), solver::boundary_flux(g, &f.0[1]), solver::boundary_flux(g, &f.0[2])]
}

/// sum over boundary slots of flux_c * f_c: the surface integral of d_nu u . f.
fn flux_dot(g: &GridSpec, flux: &[Vec<f64>; 3], f: &VectorField) -> f64 {
    let b = g.boundary();
    (0..3).map(|c| reduce::sum_by(b.len(), |i| flux[c][i] * f.0[c].values[b[i]])).sum()
}

fn vdot(op: &SchrodingerOperator, a: &VectorField, b: &VectorField) -> f64 {
    grid::weighted_dot_vec(op.grid(), op.potential(), a, b)
}

fn form(op: &SchrodingerOperator, a: &VectorField, b: &VectorField) -> f64 {
    grid::energy_vec(op.grid(), a, b) + vdot(op, a, b)
}

/// Solved fields attached to one probe point, computed on first use.
pub struct Probe<'a> {
    op: &'a SchrodingerOperator,
    x: Point,
    g: VectorField,
    w: OnceLock<VectorField>,
    w1: OnceLock<VectorField>,
    big_w: OnceLock<VectorField>,
    h: OnceLock<VectorField>,
    wstar: OnceLock<VectorField>,
    flux_w: OnceLock<[Vec<f64>; 3]>,
    flux_w1: OnceLock<[Vec<f64>; 3]>,
    flux_h: OnceLock<[Vec<f64>; 3]>,
}

impl<'a> Probe<'a> {
    pub fn new(op: &'a SchrodingerOperator, x: Point) -> Result<Self> {
        let g = op.grid();
        if !g.contains(x) || g.lattice_offset(x) < 1e-6 {
            return invalid(format!("probe point {x:?} is outside the box or on a lattice node"));
        }
        Ok(Probe {
            op,
            x,
            g: solver::grad_g_field(g, x),
            w: OnceLock::new(),
            w1: OnceLock::new(),
            big_w: OnceLock::new(),
            h: OnceLock::new(),
            wstar: OnceLock::new(),
            flux_w: OnceLock::new(),
            flux_w1: OnceLock::new(),
            flux_h: OnceLock::new(),
        })
    }

    pub fn x(&self) -> Point {
        self.x
    }

    pub fn grad_g(&self) -> &VectorField {
        &self.g
    }

    pub fn w(&self) -> Result<&VectorField> {
        get_or_try(&self.w, || solver::solve_w(self.op, self.x))
    }

    pub fn w1(&self) -> Result<&VectorField> {
        get_or_try(&self.w1, || solver::solve_w1(self.op, self.x))
    }

    pub fn big_w(&self) -> Result<&VectorField> {
        get_or_try(&self.big_w, || solver::solve_big_w(self.op, self.x))
    }

    pub fn h(&self) -> Result<&VectorField> {
        get_or_try(&self.h, || solver::solve_h(self.op.grid_arc(), self.x))
    }

    pub fn wstar(&self) -> Result<&VectorField> {
        let h = self.h()?;
        get_or_try(&self.wstar, || solver::solve_wstar(self.op, self.x, h))
    }

    fn flux_w(&self) -> Result<&[Vec<f64>; 3]> {
        let w = self.w()?;
        get_or_try(&self.flux_w, || Ok(flux3(self.op.grid(), w)))
    }

    fn flux_w1(&self) -> Result<&[Vec<f64>; 3]> {
        let w1 = self.w1()?;
        get_or_try(&self.flux_w1, || Ok(flux3(self.op.grid(), w1)))
    }

    fn flux_h(&self) -> Result<&[Vec<f64>; 3]> {
        let h = self.h()?;
        get_or_try(&self.flux_h, || Ok(flux3(self.op.grid(), h)))
    }

    /// sum V (w_x + grad G_x) . f
    fn reflected_dot(&self, f: &VectorField) -> Result<f64> {
        Ok(vdot(self.op, self.w()?, f) + vdot(self.op, &self.g, f))
    }

    /// Surface integral of d_nu w_x . grad G(. - y).
    pub fn surface_w(&self, gy: &VectorField) -> Result<f64> {
        Ok(flux_dot(self.op.grid(), self.flux_w()?, gy))
    }

    /// <Lambda_V grad G_x, grad G_y>.
    pub fn dtn_w1(&self, gy: &VectorField) -> Result<f64> {
        Ok(flux_dot(self.op.grid(), self.flux_w1()?, gy))
    }

    /// <(Lambda_V - Lambda_0) grad G_x, grad G_x>, from the fluxes of w1_x and of -H.
    pub fn dtn_difference_self(&self) -> Result<f64> {
        let g = self.op.grid();
        let a = flux_dot(g, self.flux_w1()?, &self.g);
        let b = flux_dot(g, self.flux_h()?, &self.g);
        Ok(a + b)
    }
}

/// A value with one independent cross-check.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct Paired {
    pub value: f64,
    pub check: f64,
    pub residual: f64,
}

impl Paired {
    fn new(value: f64, check: f64) -> Self {
        Paired { value, check, residual: rel(value, check) }
    }
}

/// I(x): sum V (w_x + grad G) . grad G, checked against the energy form.
pub fn probe_indicator_direct(op: &SchrodingerOperator, x: Point) -> Result<Paired> {
    probe_indicator(&Probe::new(op, x)?)
}

pub fn probe_indicator(p: &Probe) -> Result<Paired> {
    let direct = p.reflected_dot(&p.g)?;
    let w = p.w()?;
    let energy = -form(p.op, w, w) + vdot(p.op, &p.g, &p.g);
    Ok(Paired::new(direct, energy))
}

/// I(x, y) by the symmetric energy form, checked against the one-sided form.
pub fn probe_lifting(op: &SchrodingerOperator, x: Point, y: Point) -> Result<Paired> {
    lifting(&Probe::new(op, x)?, &Probe::new(op, y)?)
}

pub fn lifting(px: &Probe, py: &Probe) -> Result<Paired> {
    let op = px.op;
    let sym = -form(op, px.w()?, py.w()?) + vdot(op, &px.g, &py.g);
    let one_sided = px.reflected_dot(&py.g)?;
    Ok(Paired::new(sym, one_sided))
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct SsmValue {
    /// Boundary flux plus volume representation.
    pub value: f64,
    /// Divergence of the interpolated field.
    pub pointwise: f64,
    pub residual: f64,
    /// y is close to the obstacle interface or the box, where the pointwise path degrades.
    pub flagged: bool,
}

fn near_interface(op: &SchrodingerOperator, obstacle_distance: Option<f64>, y: Point) -> bool {
    let h = op.grid().min_h();
    op.grid().distance_to_boundary(y) < 3.0 * h || obstacle_distance.is_some_and(|d| d.abs() < 3.0 * h)
}

/// div w_x(y), default y = x. `obstacle_distance` is the signed distance of y
/// to the obstacle boundary, used only to flag the pointwise path.
pub fn ssm_indicator(op: &SchrodingerOperator, x: Point, y: Option<Point>, obstacle_distance: Option<f64>) -> Result<SsmValue> {
    let px = Probe::new(op, x)?;
    match y {
        None => ssm_at(&px, None, obstacle_distance),
        Some(y) => ssm_at(&px, Some(&Probe::new(op, y)?), obstacle_distance),
    }
}

pub fn ssm_at(px: &Probe, py: Option<&Probe>, obstacle_distance: Option<f64>) -> Result<SsmValue> {
    let (y, gy) = match py {
        Some(p) => (p.x, &p.g),
        None => (px.x, &px.g),
    };
    let value = -px.surface_w(gy)? + px.reflected_dot(gy)?;
    let pointwise = grid::point_divergence(px.op.grid(), px.w()?, y);
    Ok(SsmValue { value, pointwise, residual: rel(value, pointwise), flagged: near_interface(px.op, obstacle_distance, y) })
}

/// Three-way evaluation of I1(x, y).
#[derive(Debug, Clone, Copy, Serialize)]
pub struct I1Value {
    /// DtN form: surface Hessian pairing minus <Lambda_V grad G_x, grad G_y>.
    pub value: f64,
    /// Energy plus surface Hessian pairing.
    pub surface: f64,
    /// Energy minus the exterior Hessian energy.
    pub energy: f64,
    pub residual_surface: f64,
    pub residual_energy: f64,
}

pub fn i1_indicator(op: &SchrodingerOperator, x: Point, y: Option<Point>) -> Result<I1Value> {
    let px = Probe::new(op, x)?;
    match y {
        None => i1_at(&px, None),
        Some(y) => i1_at(&px, Some(&Probe::new(op, y)?)),
    }
}

pub fn i1_at(px: &Probe, py: Option<&Probe>) -> Result<I1Value> {
    let op = px.op;
    let ext = op.grid().extents;
    let py = py.unwrap_or(px);
    let (x, y) = (px.x, py.x);
    let s_xy = kernel::boundary_hess_pairing(ext, x, y)?;
    let s_yx = if x == y { s_xy } else { kernel::boundary_hess_pairing(ext, y, x)? };
    let ext_energy = kernel::exterior_hess_energy(ext, x, Some(y), QUAD_TOL)?;
    let value = s_yx - px.dtn_w1(&py.g)?;
    let e = form(op, px.w1()?, py.w1()?);
    let surface = -e + s_xy;
    let energy = -e - ext_energy;
    Ok(I1Value {
        value,
        surface,
        energy,
        residual_surface: rel(value, surface),
        residual_energy: rel(value, energy),
    })
}

/// Two independently computed sides of an identity.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct Identity {
    pub lhs: f64,
    pub rhs: f64,
    pub residual: f64,
    /// Sum of the magnitudes of the terms entering the identity.
    pub scale: f64,
    pub relative: f64,
}

impl Identity {
    fn new(lhs: f64, rhs: f64, terms: &[f64]) -> Self {
        let scale: f64 = terms.iter().map(|t| t.abs()).sum();
        let residual = (lhs - rhs).abs();
        Identity { lhs, rhs, residual, scale, relative: if scale > 0.0 { residual / scale } else { residual } }
    }
}

/// div w_x(x) + div w1_x(x) against I(x) + I1(x), divergences pointwise.
pub fn ips_decomposition(op: &SchrodingerOperator, x: Point) -> Result<Identity> {
    decomposition(&Probe::new(op, x)?)
}

pub fn decomposition(p: &Probe) -> Result<Identity> {
    let g = p.op.grid();
    let dw = grid::point_divergence(g, p.w()?, p.x);
    let dw1 = grid::point_divergence(g, p.w1()?, p.x);
    let i = probe_indicator(p)?.check;
    let i1 = i1_at(p, None)?.value;
    Ok(Identity::new(dw + dw1, i + i1, &[dw, dw1, i, i1]))
}

/// The two-point version, including the antisymmetric surface terms.
pub fn ips_decomposition_pair(op: &SchrodingerOperator, x: Point, y: Point) -> Result<Identity> {
    decomposition_pair(&Probe::new(op, x)?, &Probe::new(op, y)?)
}

pub fn decomposition_pair(px: &Probe, py: &Probe) -> Result<Identity> {
    let g = px.op.grid();
    let dw = grid::point_divergence(g, px.w()?, py.x);
    let dw1 = grid::point_divergence(g, px.w1()?, py.x);
    let i = lifting(px, py)?.value;
    let i1 = i1_at(px, Some(py))?.value;
    let s1 = py.surface_w(&px.g)?;
    let s2 = px.surface_w(&py.g)?;
    Ok(Identity::new(dw + dw1, i + i1 + s1 - s2, &[dw, dw1, i, i1, s1, s2]))
}

/// Termwise div w1_x(x) = I + II + III, against the pointwise divergence.
pub fn divergence_w1_terms(op: &SchrodingerOperator, x: Point) -> Result<(Identity, [f64; 3])> {
    let p = Probe::new(op, x)?;
    let t = w1_terms(&p)?;
    let d = grid::point_divergence(op.grid(), p.w1()?, x);
    Ok((Identity::new(d, t.iter().sum(), &t), t))
}

fn w1_terms(p: &Probe) -> Result<[f64; 3]> {
    let t1 = -p.dtn_w1(&p.g)?;
    let t2 = kernel::boundary_hess_pairing(p.op.grid().extents, p.x, p.x)?;
    let t3 = vdot(p.op, p.w1()?, &p.g);
    Ok([t1, t2, t3])
}

/// div w1_x(x) from its DtN, surface and volume terms; pointwise as the check.
pub fn div_w1_at(p: &Probe, obstacle_distance: Option<f64>) -> Result<SsmValue> {
    let value: f64 = w1_terms(p)?.iter().sum();
    let pointwise = grid::point_divergence(p.op.grid(), p.w1()?, p.x);
    Ok(SsmValue { value, pointwise, residual: rel(value, pointwise), flagged: near_interface(p.op, obstacle_distance, p.x) })
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct IpsFunction {
    /// Pointwise divergence of the solved W_x.
    pub value: f64,
    pub energy: f64,
    /// div w_x(x) + div w1_x(x).
    pub split: f64,
    pub residual_energy: f64,
    pub residual_split: f64,
}

pub fn ips_function(op: &SchrodingerOperator, x: Point) -> Result<IpsFunction> {
    ips_function_at(&Probe::new(op, x)?)
}

pub fn ips_function_at(p: &Probe) -> Result<IpsFunction> {
    let op = p.op;
    let g = op.grid();
    let bw = p.big_w()?;
    let value = grid::point_divergence(g, bw, p.x);
    let ext = kernel::exterior_hess_energy(g.extents, p.x, None, QUAD_TOL)?;
    let energy = -form(op, bw, bw) + vdot(op, &p.g, &p.g) - ext;
    let split = grid::point_divergence(g, p.w()?, p.x) + grid::point_divergence(g, p.w1()?, p.x);
    Ok(IpsFunction { value, energy, split, residual_energy: rel(value, energy), residual_split: rel(value, split) })
}

/// The symmetrized integro-differential identity for W at (x, y).
pub fn integro_differential_check(op: &SchrodingerOperator, x: Point, y: Point) -> Result<Identity> {
    let (px, py) = (Probe::new(op, x)?, Probe::new(op, y)?);
    let g = op.grid();
    let (wx, wy) = (px.big_w()?, py.big_w()?);
    let d = 0.5 * (grid::point_divergence(g, wx, y) + grid::point_divergence(g, wy, x));
    let e = form(op, wx, wy);
    let v = vdot(op, &px.g, &py.g);
    let ext = kernel::exterior_hess_energy(g.extents, x, Some(y), QUAD_TOL)?;
    Ok(Identity::new(d + e, v - ext, &[d, e, v, ext]))
}

/// |E(w_x, w1_y) + (V w_x, w1_y)| relative to the product of the form norms.
pub fn orthogonality(op: &SchrodingerOperator, x: Point, y: Point) -> Result<f64> {
    let (px, py) = (Probe::new(op, x)?, Probe::new(op, y)?);
    let (w, w1) = (px.w()?, py.w1()?);
    let cross = form(op, w, w1);
    let g = op.grid();
    let n1 = grid::energy_vec(g, w, w) + grid::weighted_dot_vec(g, &abs_field(op.potential()), w, w);
    let n2 = grid::energy_vec(g, w1, w1) + grid::weighted_dot_vec(g, &abs_field(op.potential()), w1, w1);
    Ok(cross.abs() / (n1 * n2).sqrt().max(f64::MIN_POSITIVE))
}

fn abs_field(f: &ScalarField) -> ScalarField {
    ScalarField { values: f.values.iter().map(|v| v.abs()).collect() }
}

/// Completely integrated indicator and its three relations.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct CimValue {
    /// Volume formula with w*_x and H.
    pub value: f64,
    /// Pointwise divergence of w*_x at x.
    pub divergence: f64,
    /// I + 2 (I1 - div w1_x(x)) + <(Lambda_V - Lambda_0) grad G, grad G>.
    pub relation_i: f64,
    /// div w_x(x) + (I1 - div w1_x(x)) + the same DtN term.
    pub relation_div: f64,
    pub residual_divergence: f64,
    pub residual_relation_i: f64,
    pub residual_relation_div: f64,
}

pub fn cim_indicator(op: &SchrodingerOperator, x: Point) -> Result<CimValue> {
    cim_at(&Probe::new(op, x)?)
}

pub fn cim_at(p: &Probe) -> Result<CimValue> {
    let op = p.op;
    let g = op.grid();
    let gh = p.g.add(p.h()?);
    let value = vdot(op, &gh, &gh) + vdot(op, p.wstar()?, &gh);
    let divergence = grid::point_divergence(g, p.wstar()?, p.x);
    let i = probe_indicator(p)?.value;
    let i1 = i1_at(p, None)?.value;
    let dw1 = div_w1_at(p, None)?.value;
    let dw = ssm_at(p, None, None)?.value;
    let dtn = p.dtn_difference_self()?;
    let relation_i = i + 2.0 * (i1 - dw1) + dtn;
    let relation_div = dw + (i1 - dw1) + dtn;
    Ok(CimValue {
        value,
        divergence,
        relation_i,
        relation_div,
        residual_divergence: rel(value, divergence),
        residual_relation_i: rel(value, relation_i),
        residual_relation_div: rel(divergence, relation_div),
    })
}

/// All indicator values at one point, with method tags and residuals.
#[derive(Debug, Clone, Serialize)]
pub struct IndicatorResult {
    pub x: Point,
    pub y: Option<Point>,
    pub values: BTreeMap<String, f64>,
    pub methods: BTreeMap<String, String>,
    pub residuals: BTreeMap<String, f64>,
    pub flags: Vec<String>,
}

impl IndicatorResult {
    pub fn new(x: Point, y: Option<Point>) -> Self {
        IndicatorResult { x, y, values: BTreeMap::new(), methods: BTreeMap::new(), residuals: BTreeMap::new(), flags: Vec::new() }
    }

    pub fn put(&mut self, name: &str, value: f64, method: &str) {
        self.values.insert(name.to_string(), value);
        self.methods.insert(name.to_string(), method.to_string());
    }

    pub fn residual(&mut self, name: &str, r: f64) {
        self.residuals.insert(name.to_string(), r);
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.values.get(name).copied()
    }

    pub fn all_finite(&self) -> bool {
        self.values.values().chain(self.residuals.values()).all(|v| v.is_finite())
    }
}

/// Which groups of indicators `evaluate_point` computes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Selection {
    pub probe: bool,
    pub ssm: bool,
    pub i1: bool,
    pub ips: bool,
    pub cim: bool,
    pub weak_kernel: bool,
}

impl Default for Selection {
    fn default() -> Self {
        Selection { probe: true, ssm: true, i1: true, ips: true, cim: true, weak_kernel: false }
    }
}

/// Evaluates the selected indicators at x. `obstacle_distance` only feeds flags.
pub fn evaluate_point(op: &SchrodingerOperator, x: Point, sel: &Selection, obstacle_distance: Option<f64>) -> Result<IndicatorResult> {
    let p = Probe::new(op, x)?;
    let mut r = IndicatorResult::new(x, None);
    if sel.probe {
        let i = probe_indicator(&p)?;
        r.put("I", i.value, "direct");
        r.residual("I_energy", i.residual);
    }
    if sel.ssm {
        let s = ssm_at(&p, None, obstacle_distance)?;
        r.put("div_w", s.value, "surface-volume");
        r.residual("div_w_pointwise", s.residual);
        if s.flagged {
            r.flags.push("div_w_pointwise_near_interface".into());
        }
    }
    if sel.i1 || sel.ips || sel.cim {
        let i1 = i1_at(&p, None)?;
        r.put("I1", i1.value, "dtn");
        r.residual("I1_surface", i1.residual_surface);
        r.residual("I1_energy", i1.residual_energy);
        let dw1 = div_w1_at(&p, obstacle_distance)?;
        r.put("div_w1", dw1.value, "dtn-surface-volume");
        r.residual("div_w1_pointwise", dw1.residual);
    }
    if sel.ips {
        let f = ips_function_at(&p)?;
        r.put("div_W", f.value, "pointwise");
        r.residual("div_W_energy", f.residual_energy);
        r.residual("div_W_split", f.residual_split);
        let d = decomposition(&p)?;
        r.residual("decomposition", d.relative);
    }
    if sel.cim {
        let c = cim_at(&p)?;
        r.put("I_star", c.value, "direct");
        r.put("div_w_star", c.divergence, "pointwise");
        r.residual("I_star_divergence", c.residual_divergence);
        r.residual("I_star_relation", c.residual_relation_i);
        r.residual("div_w_star_relation", c.residual_relation_div);
    }
    if sel.weak_kernel {
        let k = weak_kernel_negative_result(op, x)?;
        r.put("weak_kernel", k.value, "direct");
        r.residual("weak_kernel_energy", k.residual);
    }
    Ok(r)
}

/// Estimator modes of the DtN-limit pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LimitMode {
    Probe,
    Ssm,
    Cim,
    /// I(x, y) from needle sequences for x and for y.
    ProbeLifting,
    /// div w_x(y) from needle sequences for x and for y.
    SsmLifting,
}

/// The needle field v_n^j on the lattice and its V-solution u = v + r, where
/// (-Delta_h + V) r = -V v with r = 0 on the boundary. Only the values of v on
/// the support of V enter, as for the reflected solution of G.
#[derive(Debug, Clone)]
pub struct LevelSolve {
    pub u: ScalarField,
    pub harmonic: ScalarField,
}

pub fn level_solves(op: &SchrodingerOperator, seq: &NeedleSequence) -> Result<Vec<LevelSolve>> {
    let g = op.grid();
    let v = op.potential();
    let bc = BoundaryField::zeros(g);
    seq.levels
        .iter()
        .map(|l| {
            let f = &l.field;
            let rhs = ScalarField { values: v.values.iter().zip(&f.values).map(|(a, b)| -a * b).collect() };
            let mut u = op.solve_dirichlet(&bc, &rhs)?;
            u.axpy(1.0, f);
            Ok(LevelSolve { u, harmonic: f.clone() })
        })
        .collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct LimitSeries {
    pub mode: LimitMode,
    pub levels: Vec<usize>,
    pub values: Vec<f64>,
    /// The direct-formula value the series should approach.
    pub target: f64,
    pub errors: Vec<f64>,
}

impl LimitSeries {
    pub fn final_error(&self) -> f64 {
        *self.errors.last().unwrap_or(&f64::NAN)
    }
}

fn check_bundle(seqs: &[NeedleSequence]) -> Result<()> {
    if seqs.len() != 3 || (0..3).any(|j| seqs[j].j != j) {
        return invalid("a needle bundle holds the sequences for j = 0, 1, 2 in order");
    }
    let n = seqs[0].levels.len();
    if seqs.iter().any(|s| s.levels.len() != n) {
        return invalid("needle sequences in a bundle have different level counts");
    }
    Ok(())
}

/// Per-level pairing sums over j. `seqs_y` is required for the lifting modes.
pub fn dtn_limit_estimator(
    op: &SchrodingerOperator,
    seqs: &[NeedleSequence],
    mode: LimitMode,
    seqs_y: Option<&[NeedleSequence]>,
) -> Result<LimitSeries> {
    check_bundle(seqs)?;
    let is_lifting = matches!(mode, LimitMode::ProbeLifting | LimitMode::SsmLifting);
    let seqs_y = match (is_lifting, seqs_y) {
        (true, Some(s)) => {
            check_bundle(s)?;
            if s[0].levels.len() != seqs[0].levels.len() {
                return invalid("needle bundles for x and y have different level counts");
            }
            Some(s)
        }
        (true, None) => return invalid("lifting modes need needle sequences for y"),
        (false, _) => None,
    };
    let x = seqs[0].tip();
    let px = Probe::new(op, x)?;
    let py = match seqs_y {
        Some(s) => Some(Probe::new(op, s[0].tip())?),
        None => None,
    };
    let g = op.grid();
    let v = op.potential();
    let nlev = seqs[0].levels.len();
    let mut values = vec![0.0; nlev];
    for j in 0..3 {
        let sx = level_solves(op, &seqs[j])?;
        let sy = match seqs_y {
            Some(s) => Some(level_solves(op, &s[j])?),
            None => None,
        };
        for n in 0..nlev {
            let LevelSolve { u, harmonic } = &sx[n];
            values[n] += match mode {
                LimitMode::Probe => grid::weighted_dot(g, v, u, harmonic),
                LimitMode::Ssm => {
                    let mut t = harmonic.clone();
                    t.axpy(1.0, &px.h()?.0[j]);
                    grid::weighted_dot(g, v, u, &t)
                }
                LimitMode::Cim => {
                    let mut a = px.w1()?.0[j].clone();
                    a.axpy(-1.0, u);
                    let mut b = px.h()?.0[j].clone();
                    b.axpy(1.0, harmonic);
                    -grid::weighted_dot(g, v, &a, &b)
                }
                LimitMode::ProbeLifting => grid::weighted_dot(g, v, u, &sy.as_ref().unwrap()[n].harmonic),
                LimitMode::SsmLifting => {
                    let mut t = sy.as_ref().unwrap()[n].harmonic.clone();
                    t.axpy(1.0, &py.as_ref().unwrap().h()?.0[j]);
                    grid::weighted_dot(g, v, u, &t)
                }
            };
        }
    }
    let target = match mode {
        LimitMode::Probe => probe_indicator(&px)?.value,
        LimitMode::Ssm => ssm_at(&px, None, None)?.value,
        LimitMode::Cim => cim_at(&px)?.value,
        LimitMode::ProbeLifting => lifting(&px, py.as_ref().unwrap())?.value,
        LimitMode::SsmLifting => ssm_at(&px, py.as_ref(), None)?.value,
    };
    let errors = values.iter().map(|v| (v - target).abs() / target.abs().max(f64::MIN_POSITIVE)).collect();
    Ok(LimitSeries { mode, levels: seqs[0].levels.iter().map(|l| l.n).collect(), values, target, errors })
}

#[derive(Debug, Clone, Serialize)]
pub struct JumpEstimate {
    pub alpha: f64,
    pub distances: Vec<f64>,
    pub ratios: Vec<f64>,
    /// The last three ratios do not settle (extrapolation moved the value by more than 25%).
    pub flagged: bool,
}

/// I(x) / int_D |grad G(. - x)|^2 along points approaching the obstacle,
/// extrapolated to zero distance by a quadratic through the last three points.
pub fn jump_magnitude_estimate(op: &SchrodingerOperator, mask: &[bool], line: &[Point], distances: &[f64]) -> Result<JumpEstimate> {
    if line.len() < 3 || line.len() != distances.len() {
        return invalid("the approach line needs at least three points with distances");
    }
    let g = op.grid();
    if mask.len() != g.len() {
        return invalid("obstacle mask length differs from lattice size");
    }
    let one = ScalarField { values: mask.iter().map(|&m| if m { 1.0 } else { 0.0 }).collect() };
    let mut ratios = Vec::with_capacity(line.len());
    for &x in line {
        let p = Probe::new(op, x)?;
        let i = probe_indicator(&p)?.value;
        let den = vdot_weight(g, &one, &p.g);
        ratios.push(if den > 0.0 { i / den } else { 0.0 });
    }
    let k = ratios.len();
    let (d, r) = (&distances[k - 3..], &ratios[k - 3..]);
    // Lagrange value at d = 0.
    let mut alpha = 0.0;
    for a in 0..3 {
        let mut l = 1.0;
        for b in 0..3 {
            if a != b {
                l *= d[b] / (d[b] - d[a]);
            }
        }
        alpha += l * r[a];
    }
    let flagged = !alpha.is_finite() || (alpha - r[2]).abs() > 0.25 * r[2].abs().max(f64::MIN_POSITIVE);
    Ok(JumpEstimate { alpha, distances: distances.to_vec(), ratios, flagged })
}

fn vdot_weight(g: &GridSpec, w: &ScalarField, f: &VectorField) -> f64 {
    grid::weighted_dot_vec(g, w, f, f)
}

/// The G-based functional: sum V G^2 + sum V w G with A w = -V G, w = 0 on
/// the boundary; checked against its energy form.
pub fn weak_kernel_negative_result(op: &SchrodingerOperator, x: Point) -> Result<Paired> {
    let g = op.grid();
    if !g.contains(x) || g.lattice_offset(x) < 1e-6 {
        return invalid(format!("probe point {x:?} is outside the box or on a lattice node"));
    }
    let gf = g.sample(|z| kernel::g([z[0] - x[0], z[1] - x[1], z[2] - x[2]]));
    let v = op.potential();
    let rhs = ScalarField { values: gf.values.iter().zip(&v.values).map(|(a, b)| -a * b).collect() };
    let w = op.solve_dirichlet(&BoundaryField::zeros(g), &rhs)?;
    let direct = grid::weighted_dot(g, v, &gf, &gf) + grid::weighted_dot(g, v, &w, &gf);
    let energy = -(grid::energy(g, &w, &w) + grid::weighted_dot(g, v, &w, &w)) + grid::weighted_dot(g, v, &gf, &gf);
    Ok(Paired::new(direct, energy))
}

/// Seven-point Laplacian of `f` at y with spacing s, times s^2, over the
/// largest magnitude on the stencil.
pub fn harmonicity_defect<F>(f: F, y: Point, s: f64) -> Result<f64>
where
    F: Fn(Point) -> Result<f64>,
{
    let c = f(y)?;
    let mut acc = -6.0 * c;
    let mut scale = c.abs();
    for a in 0..3 {
        for sg in [-1.0, 1.0] {
            let mut z = y;
            z[a] += sg * s;
            let v = f(z)?;
            acc += v;
            scale = scale.max(v.abs());
        }
    }
    Ok(if scale > 0.0 { acc.abs() / scale } else { 0.0 })
}

/// Alessandrini identity and the energy decomposition for boundary data f.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct AlessandriniCheck {
    /// Difference of the weak boundary fluxes paired with f.
    pub dtn: f64,
    /// int V (u - v) v + int V v^2.
    pub alessandrini: f64,
    /// -E(u - v) - (V (u - v), u - v) + (V v, v).
    pub energy: f64,
    pub residual_alessandrini: f64,
    pub residual_energy: f64,
}

pub fn alessandrini_check(op: &SchrodingerOperator, f: &BoundaryField) -> Result<AlessandriniCheck> {
    let g = op.grid();
    let zero = ScalarField::zeros(g);
    let u = op.solve_dirichlet(f, &zero)?;
    let v = op.without_potential().solve_dirichlet(f, &zero)?;
    let fu = solver::boundary_flux(g, &u);
    let fv = solver::boundary_flux(g, &v);
    let dtn = reduce::sum_by(f.values.len(), |i| (fu[i] - fv[i]) * f.values[i]);
    let mut e = u.clone();
    e.axpy(-1.0, &v);
    let pot = op.potential();
    let alessandrini = grid::weighted_dot(g, pot, &e, &v) + grid::weighted_dot(g, pot, &v, &v);
    let energy = -(grid::energy(g, &e, &e) + grid::weighted_dot(g, pot, &e, &e)) + grid::weighted_dot(g, pot, &v, &v);
    Ok(AlessandriniCheck {
        dtn,
        alessandrini,
        energy,
        residual_alessandrini: rel(dtn, alessandrini),
        residual_energy: rel(dtn, energy),
    })
}

/// Largest ||u - v||_L2(mask) / ||v||_L1(mask) over `samples` random discrete
/// harmonic v built from exterior point sources.
pub fn l1_control_constant(op: &SchrodingerOperator, mask: &[bool], samples: usize, seed: u64) -> Result<f64> {
    let g = op.grid();
    if mask.len() != g.len() {
        return invalid("mask length differs from lattice size");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let c = g.center();
    let radius = 0.5 * (g.extents[0].powi(2) + g.extents[1].powi(2) + g.extents[2].powi(2)).sqrt();
    let op0 = op.without_potential();
    let zero = ScalarField::zeros(g);
    let mut worst = 0.0f64;
    for _ in 0..samples {
        let k = rng.gen_range(1..=4);
        let mut src = Vec::with_capacity(k);
        for _ in 0..k {
            let dir: [f64; 3] = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
            let n = (dir[0] * dir[0] + dir[1] * dir[1] + dir[2] * dir[2]).sqrt().max(1e-3);
            let r = radius * rng.gen_range(1.05..2.0);
            let s = [c[0] + r * dir[0] / n, c[1] + r * dir[1] / n, c[2] + r * dir[2] / n];
            src.push((s, rng.gen_range(-1.0..1.0)));
        }
        let f = g.sample_boundary(|z| src.iter().map(|(s, a)| a * kernel::g([z[0] - s[0], z[1] - s[1], z[2] - s[2]])).sum());
        let v = op0.solve_dirichlet(&f, &zero)?;
        let u = op.solve_dirichlet(&f, &zero)?;
        let mut l2 = 0.0;
        let mut l1 = 0.0;
        for p in 0..g.len() {
            if mask[p] {
                let w = g.volume_weight(p);
                l2 += w * (u.values[p] - v.values[p]).powi(2);
                l1 += w * v.values[p].abs();
            }
        }
        if l1 > 0.0 {
            worst = worst.max(l2.sqrt() / l1);
        }
    }
    if !worst.is_finite() {
        return Err(IpsError::Invalid("L1-control ratio is not finite".into()));
    }
    Ok(worst)
}
