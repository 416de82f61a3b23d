//! Indicator sequences for a fixed component j and the membership test built
//! on their divergence.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::grid::{self, GridSpec, Point, ScalarField};
use crate::indicators::{level_solves, LevelSolve};
use crate::needle::{self, generate_needle_sequence, make_needle, Needle, NeedleOptions, NeedleSequence};
use crate::solver::{self, SchrodingerOperator};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SequenceMethod {
    Probe,
    Ssm,
    Cim,
}

impl SequenceMethod {
    pub const ALL: [SequenceMethod; 3] = [SequenceMethod::Probe, SequenceMethod::Ssm, SequenceMethod::Cim];

    pub fn name(&self) -> &'static str {
        match self {
            SequenceMethod::Probe => "probe",
            SequenceMethod::Ssm => "ssm",
            SequenceMethod::Cim => "cim",
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct IndicatorSequence {
    pub x: Point,
    pub needle: Vec<Point>,
    pub j: usize,
    pub method: SequenceMethod,
    pub levels: Vec<usize>,
    pub values: Vec<f64>,
    /// The ssm values rebuilt from the probe and cim values; empty for other methods.
    pub ssm_algebraic: Vec<f64>,
    pub ssm_residual: Vec<f64>,
    /// Norms of v_n^j over the region mask (normally D).
    pub l2: Vec<f64>,
    pub l1: Vec<f64>,
}

impl IndicatorSequence {
    pub fn ratio(&self) -> Vec<f64> {
        self.l1.iter().zip(&self.l2).map(|(a, b)| if *b > 0.0 { a / b } else { 0.0 }).collect()
    }
}

/// All three pairings per level, sharing the solves.
#[derive(Debug, Clone, Serialize)]
pub struct SequenceBundle {
    pub levels: Vec<usize>,
    pub probe: Vec<f64>,
    pub ssm: Vec<f64>,
    pub cim: Vec<f64>,
    /// <(Lambda_V - Lambda_0) d_j G, d_j G>.
    pub reference: f64,
    pub ssm_algebraic: Vec<f64>,
    pub ssm_residual: Vec<f64>,
    pub l2: Vec<f64>,
    pub l1: Vec<f64>,
    #[serde(skip)]
    solves: Vec<LevelSolve>,
}

impl SequenceBundle {
    pub fn values(&self, m: SequenceMethod) -> &[f64] {
        match m {
            SequenceMethod::Probe => &self.probe,
            SequenceMethod::Ssm => &self.ssm,
            SequenceMethod::Cim => &self.cim,
        }
    }
}

/// Pairings of the needle traces and of d_j G(. - x) for every level.
pub fn sequence_bundle(op: &SchrodingerOperator, seq: &NeedleSequence, mask: &[bool]) -> Result<SequenceBundle> {
    let g = op.grid();
    if mask.len() != g.len() {
        return invalid("region mask length differs from lattice size");
    }
    let x = seq.tip();
    if !g.contains(x) || g.lattice_offset(x) < 1e-6 {
        return invalid(format!("needle tip {x:?} is outside the box or on a lattice node"));
    }
    let j = seq.j;
    let zero = ScalarField::zeros(g);
    let gx = solver::grad_g_field(g, x);
    let trace = gx.0[j].trace(g);
    // V-solution and harmonic extension of d_j G(. - x); the latter is -H^j.
    let wj = op.solve_dirichlet(&trace, &zero)?;
    let hj = op.without_potential().solve_dirichlet(&trace, &zero)?;
    let v = op.potential();
    let reference = grid::weighted_dot(g, v, &wj, &hj);
    let solves = level_solves(op, seq)?;
    let norms = needle::needle_norm_series(g, seq, mask)?;
    let mut b = SequenceBundle {
        levels: seq.levels.iter().map(|l| l.n).collect(),
        probe: Vec::new(),
        ssm: Vec::new(),
        cim: Vec::new(),
        reference,
        ssm_algebraic: Vec::new(),
        ssm_residual: Vec::new(),
        l2: norms.iter().map(|r| r.l2).collect(),
        l1: norms.iter().map(|r| r.l1).collect(),
        solves: Vec::new(),
    };
    for s in &solves {
        let uv = grid::weighted_dot(g, v, &s.u, &s.harmonic);
        let ug = grid::weighted_dot(g, v, &s.u, &hj);
        let wv = grid::weighted_dot(g, v, &wj, &s.harmonic);
        let probe = uv;
        let ssm = uv - ug;
        let cim = reference - wv - ug + uv;
        let algebraic = 0.5 * (probe + cim - reference);
        let scale = probe.abs().max(cim.abs()).max(reference.abs()).max(ssm.abs());
        b.probe.push(probe);
        b.ssm.push(ssm);
        b.cim.push(cim);
        b.ssm_algebraic.push(algebraic);
        b.ssm_residual.push(if scale > 0.0 { (ssm - algebraic).abs() / scale } else { 0.0 });
    }
    b.solves = solves;
    Ok(b)
}

pub fn indicator_sequence(op: &SchrodingerOperator, seq: &NeedleSequence, method: SequenceMethod, mask: &[bool]) -> Result<IndicatorSequence> {
    let b = sequence_bundle(op, seq, mask)?;
    Ok(to_sequence(seq, &b, method))
}

fn to_sequence(seq: &NeedleSequence, b: &SequenceBundle, method: SequenceMethod) -> IndicatorSequence {
    let ssm = method == SequenceMethod::Ssm;
    IndicatorSequence {
        x: seq.tip(),
        needle: seq.needle.vertices().to_vec(),
        j: seq.j,
        method,
        levels: b.levels.clone(),
        values: b.values(method).to_vec(),
        ssm_algebraic: if ssm { b.ssm_algebraic.clone() } else { Vec::new() },
        ssm_residual: if ssm { b.ssm_residual.clone() } else { Vec::new() },
        l2: b.l2.clone(),
        l1: b.l1.clone(),
    }
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct Certificate {
    pub level: usize,
    /// sign * <(Lambda_V - Lambda_0) f, f> for the trace f of v_n^j.
    pub lhs: f64,
    /// C ||v||^2 - C'' ||v|| ||v||_1 on D, v the harmonic extension of f.
    pub rhs: f64,
    pub holds: bool,
    pub l2: f64,
    pub l1: f64,
}

/// The Alessandrini lower bound at level n. `sign` is the sign of the jump,
/// `c` the jump floor, `c2` the constant of the L1 control.
pub fn lower_bound_certificate(
    op: &SchrodingerOperator,
    bundle: &SequenceBundle,
    n: usize,
    mask: &[bool],
    sign: f64,
    c: f64,
    c2: f64,
) -> Result<Certificate> {
    if !(c > 0.0) {
        return invalid("the lower-bound certificate needs a positive jump floor");
    }
    if sign.abs() != 1.0 {
        return invalid("jump sign must be +1 or -1");
    }
    let k = bundle
        .levels
        .iter()
        .position(|&l| l == n)
        .ok_or_else(|| crate::IpsError::Invalid(format!("bundle has no level {n}")))?;
    let g = op.grid();
    let vt = &bundle.solves[k].harmonic;
    let (mut l2, mut l1) = (0.0, 0.0);
    for p in 0..g.len() {
        if mask[p] {
            let w = g.volume_weight(p);
            l2 += w * vt.values[p] * vt.values[p];
            l1 += w * vt.values[p].abs();
        }
    }
    let l2 = l2.sqrt();
    let lhs = sign * bundle.probe[k];
    let rhs = c * l2 * l2 - c2 * l2 * l1;
    Ok(Certificate { level: n, lhs, rhs, holds: lhs >= rhs, l2, l1 })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    InsideDbar,
    Outside,
    Inconclusive,
}

#[derive(Debug, Clone, Serialize)]
pub struct NeedleEvidence {
    pub needle: Vec<Point>,
    pub values: Vec<f64>,
    pub growth: f64,
    pub diverges: bool,
    pub converges: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct MembershipVerdict {
    pub x: Point,
    pub verdict: Verdict,
    pub method: SequenceMethod,
    pub j: usize,
    pub evidence: Vec<NeedleEvidence>,
}

/// Tolerance of the convergence surrogate: spread of the last three levels
/// relative to the last magnitude.
pub const CONVERGENCE_SPREAD: f64 = 0.1;

/// Straight needles to x from the nearest face along each axis.
pub fn default_needles(grid: &GridSpec, x: Point) -> Result<Vec<Needle>> {
    let e = grid.extents;
    let mut axes: Vec<(f64, usize, f64)> =
        (0..3).map(|a| if x[a] <= e[a] - x[a] { (x[a], a, 0.0) } else { (e[a] - x[a], a, e[a]) }).collect();
    axes.sort_by(|p, q| p.0.total_cmp(&q.0).then(p.1.cmp(&q.1)));
    axes.iter()
        .map(|&(_, a, side)| {
            let mut b = x;
            b[a] = side;
            make_needle(e, b, &[], x)
        })
        .collect()
}

/// Runs the sequences over the needles and applies the decision rule:
/// divergence with sign `expected_sign` (if given) on every needle means
/// inside, convergence on some needle means outside. Stops at the first
/// convergent needle.
#[allow(clippy::too_many_arguments)]
pub fn classify_point(
    op: &SchrodingerOperator,
    x: Point,
    needles: &[Needle],
    method: SequenceMethod,
    j: usize,
    opts: &NeedleOptions,
    mask: &[bool],
    expected_sign: Option<f64>,
) -> Result<MembershipVerdict> {
    if needles.is_empty() {
        return invalid("classification needs at least one needle");
    }
    let mut evidence = Vec::new();
    let mut all_diverge = true;
    for nd in needles {
        if nd.tip() != x {
            return invalid("every needle must end at the classified point");
        }
        let seq = generate_needle_sequence(op.grid(), nd, j, opts)?;
        let b = sequence_bundle(op, &seq, mask)?;
        let values = b.values(method).to_vec();
        let first = values[0].abs();
        let growth = if first > 0.0 { values.last().unwrap().abs() / first } else { f64::INFINITY };
        let sign_ok = expected_sign.is_none_or(|s| values.last().unwrap().signum() == s.signum());
        let diverges = needle::blows_up(&values) && sign_ok;
        let converges = !diverges && needle::converges(&values, CONVERGENCE_SPREAD);
        all_diverge &= diverges;
        evidence.push(NeedleEvidence { needle: nd.vertices().to_vec(), values, growth, diverges, converges });
        if converges {
            return Ok(MembershipVerdict { x, verdict: Verdict::Outside, method, j, evidence });
        }
    }
    let verdict = if all_diverge { Verdict::InsideDbar } else { Verdict::Inconclusive };
    Ok(MembershipVerdict { x, verdict, method, j, evidence })
}
