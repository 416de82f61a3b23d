//! Experiment runs over point sets, needles and rate batteries.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{ExperimentConfig, PointSet};
use crate::error::{IpsError, Result};
use crate::grid::{build_grid, BoundaryField, GridSpec, Point, ScalarField};
use crate::indicators::{self, evaluate_point, IndicatorResult};
use crate::needle::{self, generate_needle_sequences};
use crate::potential::{check_wellposed, sample_potential, PotentialSpec, Wellposedness};
use crate::rates::{self, fit_rate, grows_monotonically, RateFit};
use crate::sideb::{classify_point, default_needles, Verdict};
use crate::solver::{self, SchrodingerOperator, SolverStats};

/// Quantities fitted along approach lines.
pub const FIT_QUANTITIES: [&str; 6] = ["I", "div_w", "I_star", "div_W", "I1", "weak_kernel"];
/// Quantities that must blow up along lines ending on the obstacle boundary.
pub const BLOWUP_QUANTITIES: [&str; 3] = ["I", "div_w", "I_star"];
/// Largest fitted exponent accepted as blow-up.
pub const BLOWUP_EXPONENT: f64 = -0.85;
/// Residual budget of the identity checks.
pub const IDENTITY_BUDGET: f64 = 3e-2;
/// Points closer than this many cells to the box are not held to the budget.
pub const INTERIOR_CELLS: f64 = 4.0;
const IDENTITY_KEYS: [&str; 4] = ["decomposition", "I_star_divergence", "I_star_relation", "div_w_star_relation"];

#[derive(Debug, Clone, Serialize)]
pub struct PointRecord {
    pub set: String,
    pub index: usize,
    pub x: Point,
    pub obstacle_distance: f64,
    pub result: Option<IndicatorResult>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct LineFit {
    pub set: String,
    pub quantity: String,
    pub expect_blowup: bool,
    pub expected_sign: f64,
    pub monotone: bool,
    pub fit: Option<RateFit>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ClassRecord {
    pub x: Point,
    pub obstacle_distance: f64,
    pub truth: Verdict,
    pub near_boundary: bool,
    pub verdict: Option<Verdict>,
    pub correct: bool,
    pub needles_tried: usize,
    pub growth: Vec<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        Check { name: name.into(), passed, detail: detail.into() }
    }
}

/// A CSV-shaped table; cells are already formatted.
#[derive(Debug, Clone, Serialize)]
pub struct Table {
    pub name: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    fn new(name: &str, columns: &[&str]) -> Self {
        Table { name: name.to_string(), columns: columns.iter().map(|c| c.to_string()).collect(), rows: Vec::new() }
    }
}

/// Deterministic text form of a number.
pub fn fmt_num(v: f64) -> String {
    format!("{v:e}")
}

#[derive(Debug, Clone, Serialize)]
pub struct ScanReport {
    pub kind: String,
    pub name: String,
    pub version: String,
    pub config_hash: String,
    pub config: ExperimentConfig,
    pub wellposedness: Option<Wellposedness>,
    pub points: Vec<PointRecord>,
    pub fits: Vec<LineFit>,
    pub classification: Vec<ClassRecord>,
    #[serde(skip)]
    pub tables: Vec<Table>,
    pub checks: Vec<Check>,
    pub solver: SolverStats,
}

impl ScanReport {
    fn new(kind: &str, cfg: &ExperimentConfig) -> Self {
        ScanReport {
            kind: kind.to_string(),
            name: cfg.name.clone(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            config_hash: cfg.hash(),
            config: cfg.clone(),
            wellposedness: None,
            points: Vec::new(),
            fits: Vec::new(),
            classification: Vec::new(),
            tables: Vec::new(),
            checks: Vec::new(),
            solver: SolverStats::default(),
        }
    }

    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

/// Grid, potential and operator for a config.
pub struct Setup {
    pub grid: Arc<GridSpec>,
    pub potential: PotentialSpec,
    pub op: SchrodingerOperator,
}

pub fn setup(cfg: &ExperimentConfig) -> Result<Setup> {
    cfg.validate()?;
    let grid = Arc::new(build_grid(cfg.grid.extents, cfg.grid.n).map_err(|e| IpsError::Config(e.to_string()))?);
    let potential = sample_potential(grid.clone(), cfg.obstacle.clone()).map_err(|e| IpsError::Config(e.to_string()))?;
    let mut op = SchrodingerOperator::new(&potential);
    op.tol = cfg.solver.tol;
    op.max_iter = cfg.solver.max_iter;
    Ok(Setup { grid, potential, op })
}

fn wellposed(s: &Setup, cfg: &ExperimentConfig) -> Result<Wellposedness> {
    check_wellposed(&s.op, cfg.solver.wellposed_floor)
}

/// Runs `f`, turning both errors and panics into a message.
fn isolate<T>(f: impl FnOnce() -> Result<T>) -> std::result::Result<T, String> {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(v)) => Ok(v),
        Ok(Err(e)) => Err(e.to_string()),
        Err(p) => Err(match p.downcast_ref::<&str>() {
            Some(s) => format!("panic: {s}"),
            None => match p.downcast_ref::<String>() {
                Some(s) => format!("panic: {s}"),
                None => "panic".to_string(),
            },
        }),
    }
}

/// Side A indicators over all configured point sets, with rate fits along lines.
pub fn run_scan(cfg: &ExperimentConfig) -> Result<ScanReport> {
    let s = setup(cfg)?;
    let mut report = ScanReport::new("scan", cfg);
    report.wellposedness = Some(wellposed(&s, cfg)?);
    let pts = cfg.expand_points(&s.grid);
    let obstacle = &cfg.obstacle;
    let has_obstacle = !obstacle.components.is_empty();
    report.points = pts
        .par_iter()
        .map(|(set, index, x)| {
            let od = if has_obstacle { obstacle.distance(*x) } else { f64::INFINITY };
            let r = isolate(|| evaluate_point(&s.op, *x, &cfg.indicators, has_obstacle.then_some(od)));
            let (result, error) = match r {
                Ok(v) => (Some(v), None),
                Err(e) => (None, Some(e)),
            };
            PointRecord { set: set.clone(), index: *index, x: *x, obstacle_distance: od, result, error }
        })
        .collect();
    for set in &cfg.points {
        if let PointSet::Line { name, target, expect_blowup, .. } = set {
            let expect = expect_blowup.unwrap_or(has_obstacle && obstacle.distance(*target).abs() < 1e-9);
            let sign = nearest_sign(cfg, *target);
            let recs: Vec<&PointRecord> = report.points.iter().filter(|p| &p.set == name).collect();
            report.fits.extend(line_fits(name, &recs, expect, sign));
        }
    }
    let failed = report.points.iter().filter(|p| p.error.is_some()).count();
    report.checks.push(Check::new("points evaluated", failed == 0, format!("{failed} of {} points failed", report.points.len())));
    for f in report.fits.iter().filter(|f| f.expect_blowup && BLOWUP_QUANTITIES.contains(&f.quantity.as_str())) {
        let ok = match &f.fit {
            Some(fit) => fit.exponent <= BLOWUP_EXPONENT && fit.sign == f.expected_sign && f.monotone,
            None => false,
        };
        let detail = match &f.fit {
            Some(fit) => format!("exponent {:.3}, sign {:+}, monotone {}", fit.exponent, fit.sign, f.monotone),
            None => f.error.clone().unwrap_or_default(),
        };
        report.checks.push(Check::new(format!("blow-up {} on {}", f.quantity, f.set), ok, detail));
    }
    // The budget applies to interior points; points within a few cells of the
    // box are reported but not judged.
    let margin = INTERIOR_CELLS * s.grid.h.iter().cloned().fold(0.0, f64::max);
    for key in IDENTITY_KEYS {
        let worst = |interior: bool| {
            report
                .points
                .iter()
                .filter(|p| (s.grid.distance_to_boundary(p.x) >= margin) == interior)
                .filter_map(|p| p.result.as_ref().and_then(|r| r.residuals.get(key)))
                .cloned()
                .fold(None, |a: Option<f64>, b| Some(a.map_or(b, |a| a.max(b))))
        };
        let near = worst(false).map(|w| format!(", near boundary {w:.3e}")).unwrap_or_default();
        if let Some(w) = worst(true) {
            report.checks.push(Check::new(format!("residual {key}"), w <= IDENTITY_BUDGET, format!("interior max {w:.3e}{near}")));
        }
    }
    report.solver = s.op.stats();
    Ok(report)
}

fn nearest_sign(cfg: &ExperimentConfig, z: Point) -> f64 {
    cfg.obstacle
        .components
        .iter()
        .min_by(|a, b| a.shape.signed_distance(z).abs().total_cmp(&b.shape.signed_distance(z).abs()))
        .map(|c| c.sign())
        .unwrap_or(0.0)
}

fn line_fits(name: &str, recs: &[&PointRecord], expect: bool, sign: f64) -> Vec<LineFit> {
    let mut out = Vec::new();
    for q in FIT_QUANTITIES {
        let vals: Option<Vec<f64>> = recs.iter().map(|r| r.result.as_ref().and_then(|x| x.get(q))).collect();
        let Some(vals) = vals else { continue };
        let d: Vec<f64> = recs.iter().map(|r| r.obstacle_distance.abs()).collect();
        let (fit, error) = match fit_rate(&d, &vals) {
            Ok(f) => (Some(f), None),
            Err(e) => (None, Some(e.to_string())),
        };
        out.push(LineFit {
            set: name.to_string(),
            quantity: q.to_string(),
            expect_blowup: expect,
            expected_sign: sign,
            monotone: grows_monotonically(&vals, vals.len().min(5)),
            fit,
            error,
        });
    }
    out
}

/// Side B membership tests at the configured points.
pub fn run_classify(cfg: &ExperimentConfig) -> Result<ScanReport> {
    let Some(cc) = &cfg.classify else {
        return Err(IpsError::Config("classify section missing".into()));
    };
    let s = setup(cfg)?;
    let mut report = ScanReport::new("classify", cfg);
    report.wellposedness = Some(wellposed(&s, cfg)?);
    let mask = s.potential.obstacle_mask();
    let h = s.grid.min_h();
    let has_obstacle = !cfg.obstacle.components.is_empty();
    report.classification = cc
        .points
        .par_iter()
        .map(|&p| {
            let x = s.grid.place_probe(p);
            let od = if has_obstacle { cfg.obstacle.distance(x) } else { f64::INFINITY };
            let truth = if od < 0.0 { Verdict::InsideDbar } else { Verdict::Outside };
            let near = od.abs() <= 2.0 * h;
            let r = isolate(|| {
                let mut needles = default_needles(&s.grid, x)?;
                needles.truncate(cc.needles_per_point);
                classify_point(&s.op, x, &needles, cc.method, cc.j, &cfg.needle_options, &mask, cc.expected_sign)
            });
            match r {
                Ok(v) => ClassRecord {
                    x,
                    obstacle_distance: od,
                    truth,
                    near_boundary: near,
                    verdict: Some(v.verdict),
                    correct: v.verdict == truth || (near && v.verdict == Verdict::Inconclusive),
                    needles_tried: v.evidence.len(),
                    growth: v.evidence.iter().map(|e| e.growth).collect(),
                    error: None,
                },
                Err(e) => ClassRecord {
                    x,
                    obstacle_distance: od,
                    truth,
                    near_boundary: near,
                    verdict: None,
                    correct: false,
                    needles_tried: 0,
                    growth: Vec::new(),
                    error: Some(e),
                },
            }
        })
        .collect();
    let wrong = report.classification.iter().filter(|c| !c.correct).count();
    report.checks.push(Check::new(
        "classification",
        wrong == 0,
        format!("{wrong} of {} points misclassified or failed", report.classification.len()),
    ));
    report.solver = s.op.stats();
    Ok(report)
}

/// Random Dirichlet data: solves, DtN pairings and the Alessandrini identity.
pub fn run_forward(cfg: &ExperimentConfig) -> Result<ScanReport> {
    let s = setup(cfg)?;
    let mut report = ScanReport::new("forward", cfg);
    report.wellposedness = Some(wellposed(&s, cfg)?);
    let g = &*s.grid;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let data: Vec<BoundaryField> = (0..cfg.forward.samples)
        .map(|_| BoundaryField { values: (0..g.boundary_len()).map(|_| rng.gen_range(-1.0..1.0)).collect() })
        .collect();
    let rows: Vec<Result<(f64, f64, f64, f64, f64)>> = data
        .par_iter()
        .map(|f| {
            let zero = ScalarField::zeros(g);
            let u = s.op.solve_dirichlet(f, &zero)?;
            let res = s.op.residual(&u, &zero);
            let pair = solver::dtn_pairing(&s.op, f, f)?;
            let a = indicators::alessandrini_check(&s.op, f)?;
            Ok((u.max_abs(), res, pair, a.residual_alessandrini, a.residual_energy))
        })
        .collect();
    let mut t = Table::new("forward", &["sample", "max_abs_u", "residual", "dtn_pairing", "alessandrini_residual", "energy_residual"]);
    let mut worst: f64 = 0.0;
    for (i, r) in rows.into_iter().enumerate() {
        let (m, res, pair, ra, re) = r?;
        worst = worst.max(ra).max(re);
        t.rows.push(vec![i.to_string(), fmt_num(m), fmt_num(res), fmt_num(pair), fmt_num(ra), fmt_num(re)]);
    }
    report.tables.push(t);
    report.checks.push(Check::new("alessandrini identity", worst <= 1e-6, format!("max residual {worst:.3e}")));
    if !cfg.obstacle.components.is_empty() && cfg.forward.l1_samples > 0 {
        let mask = s.potential.obstacle_mask();
        let c = indicators::l1_control_constant(&s.op, &mask, cfg.forward.l1_samples, cfg.seed)?;
        let mut t = Table::new("l1_control", &["samples", "constant"]);
        t.rows.push(vec![cfg.forward.l1_samples.to_string(), fmt_num(c)]);
        report.tables.push(t);
    }
    report.solver = s.op.stats();
    Ok(report)
}

/// Needle sequence diagnostics for the configured needles.
pub fn run_needles(cfg: &ExperimentConfig) -> Result<ScanReport> {
    if cfg.needles.is_empty() {
        return Err(IpsError::Config("no needles configured".into()));
    }
    let s = setup(cfg)?;
    let mut report = ScanReport::new("needle", cfg);
    let mask = s.potential.obstacle_mask();
    let mut t = Table::new(
        "needle_levels",
        &["needle", "j", "n", "delta", "tau", "rows", "columns", "residual", "mu", "flagged", "l2_D", "l1_D"],
    );
    let mut checks = Vec::new();
    for nc in &cfg.needles {
        let nd = nc.build(s.grid.extents)?;
        let seqs = generate_needle_sequences(&s.grid, &nd, &nc.components, &cfg.needle_options)?;
        for seq in &seqs {
            let norms = needle::needle_norm_series(&s.grid, seq, &mask)?;
            for (l, nr) in seq.levels.iter().zip(&norms) {
                t.rows.push(vec![
                    nc.name.clone(),
                    seq.j.to_string(),
                    l.n.to_string(),
                    fmt_num(l.delta),
                    fmt_num(l.tau),
                    l.rows.to_string(),
                    l.columns.to_string(),
                    fmt_num(l.residual),
                    fmt_num(l.mu),
                    l.flagged.to_string(),
                    fmt_num(nr.l2),
                    fmt_num(nr.l1),
                ]);
            }
            let l2: Vec<f64> = norms.iter().map(|r| r.l2).collect();
            let hits = !cfg.obstacle.components.is_empty() && needle_meets(&nd, &cfg.obstacle);
            let detail = format!("L2(D) series {:?}", l2.iter().map(|v| format!("{v:.3e}")).collect::<Vec<_>>());
            let ok = if hits { needle::blows_up(&l2) } else { !needle::blows_up(&l2) };
            checks.push(Check::new(format!("needle {} j={} {}", nc.name, seq.j, if hits { "diverges on D" } else { "bounded on D" }), ok, detail));
        }
    }
    report.tables.push(t);
    report.checks = checks;
    Ok(report)
}

/// Kernel-integral rates and, if requested, the I1 approach on the configured grid.
pub fn run_rates(cfg: &ExperimentConfig) -> Result<ScanReport> {
    cfg.validate()?;
    let r = &cfg.rates;
    let mut report = ScanReport::new("rates", cfg);
    let cones = rates::cone_rates(&r.cones, &r.eps, r.outer_radius)?;
    let mut t = Table::new("cone_rates", &["case", "half_angle", "axis_dot_direction", "exponent", "r2"]);
    for (i, c) in cones.iter().enumerate() {
        let ad = c.case.axis.iter().zip(&c.case.direction).map(|(a, b)| a * b).sum::<f64>();
        t.rows.push(vec![i.to_string(), fmt_num(c.case.half_angle), fmt_num(ad), fmt_num(c.fit.exponent), fmt_num(c.fit.r2)]);
        report.checks.push(Check::new(
            format!("cone case {i} exponent"),
            (c.fit.exponent + 1.0).abs() <= 0.05,
            format!("{:.4}", c.fit.exponent),
        ));
    }
    report.tables.push(t);
    if let Some(&eps) = r.eps.first() {
        let sc = rates::full_sphere_check(eps, r.outer_radius)?;
        report.checks.push(Check::new(
            "full sphere closed form",
            sc.relative <= 1e-2,
            format!("quadrature {:.6e} closed {:.6e} rel {:.2e}", sc.quadrature, sc.closed_form, sc.relative),
        ));
    }
    let mut t = Table::new("face_approach", &["axis", "upper", "distance", "exterior", "boundary", "ratio"]);
    for &face in &r.faces {
        let fa = rates::face_approach(cfg.grid.extents, face, &r.face_distances, r.quadrature_tol)?;
        for i in 0..fa.distances.len() {
            t.rows.push(vec![
                face.axis.to_string(),
                face.upper.to_string(),
                fmt_num(fa.distances[i]),
                fmt_num(fa.exterior[i]),
                fmt_num(fa.boundary[i]),
                fmt_num(fa.ratio[i]),
            ]);
        }
        report.checks.push(Check::new(
            format!("exterior energy exponent face {}{}", face.axis, if face.upper { "+" } else { "-" }),
            (fa.exterior_fit.exponent + 3.0).abs() <= 0.1,
            format!("{:.4}", fa.exterior_fit.exponent),
        ));
        report.checks.push(Check::new(
            format!("boundary/exterior ratio exponent face {}{}", face.axis, if face.upper { "+" } else { "-" }),
            fa.ratio_fit.exponent >= 0.4,
            format!("{:.4}", fa.ratio_fit.exponent),
        ));
    }
    report.tables.push(t);
    if !r.i1_distances.is_empty() {
        let s = setup(cfg)?;
        report.wellposedness = Some(wellposed(&s, cfg)?);
        let mut t = Table::new("i1_approach", &["axis", "upper", "distance", "I1"]);
        for &face in &r.faces {
            let a = rates::i1_approach(&s.op, face, &r.i1_distances)?;
            for (d, v) in a.distances.iter().zip(&a.values) {
                t.rows.push(vec![face.axis.to_string(), face.upper.to_string(), fmt_num(*d), fmt_num(*v)]);
            }
            report.checks.push(Check::new(format!("I1 decreasing toward face {}", face.axis), a.decreasing, format!("{:?}", a.values)));
        }
        report.tables.push(t);
        report.solver = s.op.stats();
    }
    Ok(report)
}

/// Whether the needle passes through the closure of the obstacle, sampled densely.
pub fn needle_meets(nd: &needle::Needle, obstacle: &crate::potential::ObstacleSpec) -> bool {
    nd.vertices().windows(2).any(|w| {
        (0..=400).any(|k| {
            let t = k as f64 / 400.0;
            let z = [w[0][0] + t * (w[1][0] - w[0][0]), w[0][1] + t * (w[1][1] - w[0][1]), w[0][2] + t * (w[1][2] - w[0][2])];
            obstacle.distance(z) <= 0.0
        })
    })
}
