//! Acceptance battery. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails. Takes several minutes in release mode.

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use ips::config::ExperimentConfig;
use ips::grid::{build_grid, BoundaryField, GridSpec, Point, ScalarField};
use ips::indicators::{self, LimitMode, Probe};
use ips::needle::{self, generate_needle_sequence, generate_needle_sequences, make_needle, NeedleOptions};
use ips::potential::{sample_potential, ObstacleSpec, PotentialSpec, Shape};
use ips::rates::{self, Face};
use ips::report::emit_report;
use ips::scan::{self, ScanReport};
use ips::sideb::{default_needles, sequence_bundle, SequenceMethod};
use ips::solver::{dense_oracle_solve, SchrodingerOperator};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const PROBES: [Point; 5] = [[0.23, 0.31, 0.47], [0.74, 0.27, 0.52], [0.5, 0.19, 0.77], [0.81, 0.71, 0.33], [0.36, 0.77, 0.69]];
const GRIDS: [usize; 4] = [16, 24, 32, 48];

struct Fixture {
    grid: Arc<GridSpec>,
    potential: PotentialSpec,
    op: SchrodingerOperator,
}

fn fixture(n: usize, center: Point, radius: f64, amp: f64) -> Fixture {
    let grid = Arc::new(build_grid([1.0; 3], [n; 3]).unwrap());
    let potential = sample_potential(grid.clone(), ObstacleSpec::single(Shape::Ball { center, radius }, amp)).unwrap();
    let op = SchrodingerOperator::new(&potential);
    Fixture { grid, potential, op }
}

fn ball(n: usize, amp: f64) -> Fixture {
    fixture(n, [0.5; 3], 0.2, amp)
}

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: impl Into<String>) -> Outcome {
    Outcome { passed, detail: detail.into() }
}

fn e(v: f64) -> String {
    format!("{v:.3e}")
}

/// Least-squares slope of log r against log h.
fn order(hs: &[f64], rs: &[f64]) -> f64 {
    let x: Vec<f64> = hs.iter().map(|h| h.ln()).collect();
    let y: Vec<f64> = rs.iter().map(|r| r.ln()).collect();
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let sxy: f64 = x.iter().zip(&y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

fn decreasing(v: &[f64]) -> bool {
    v.windows(2).all(|w| w[1] < w[0])
}

/// Residuals of the single- and two-point identities per grid and probe point.
struct Refinement {
    h: Vec<f64>,
    single: Vec<[f64; 5]>,
    pair: Vec<[f64; 5]>,
    /// At 32^3: (I* vs div w*, I* relation, div w* relation) per point.
    cim32: Vec<[f64; 3]>,
}

fn refinement() -> Refinement {
    let mut r = Refinement { h: Vec::new(), single: Vec::new(), pair: Vec::new(), cim32: Vec::new() };
    for n in GRIDS {
        let f = ball(n, 5.0);
        let probes: Vec<Probe> = PROBES.iter().map(|&x| Probe::new(&f.op, x).unwrap()).collect();
        let mut s = [0.0; 5];
        let mut p = [0.0; 5];
        for k in 0..5 {
            s[k] = indicators::decomposition(&probes[k]).unwrap().relative;
            p[k] = indicators::decomposition_pair(&probes[k], &probes[(k + 1) % 5]).unwrap().relative;
            if n == 32 {
                let c = indicators::cim_at(&probes[k]).unwrap();
                r.cim32.push([c.residual_divergence, c.residual_relation_i, c.residual_relation_div]);
            }
        }
        r.h.push(f.grid.min_h());
        r.single.push(s);
        r.pair.push(p);
    }
    r
}

fn refinement_verdict(h: &[f64], res: &[[f64; 5]]) -> Outcome {
    let i32 = GRIDS.iter().position(|&n| n == 32).unwrap();
    let mut ok = true;
    let mut worst_order = f64::INFINITY;
    let mut worst32: f64 = 0.0;
    for k in 0..5 {
        let series: Vec<f64> = res.iter().map(|r| r[k]).collect();
        let p = order(h, &series);
        worst_order = worst_order.min(p);
        worst32 = worst32.max(series[i32]);
        ok &= p >= 1.5 && decreasing(&series) && series[i32] <= 3e-2;
    }
    let first: Vec<String> = res.iter().map(|r| e(r[0])).collect();
    outcome(ok, format!("max at 32^3 {}, worst order {worst_order:.2}, point 0 series {first:?}", e(worst32)))
}

fn c01() -> Outcome {
    let f = ball(8, 5.0);
    let mut op = f.op;
    op.tol = 1e-13;
    let g = op.grid();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let rhs = ScalarField::zeros(g);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let bc = BoundaryField::new(g, (0..g.boundary_len()).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        let u = op.solve_dirichlet(&bc, &rhs).unwrap();
        let d = dense_oracle_solve(&op, &bc, &rhs).unwrap();
        let diff = u.values.iter().zip(&d.values).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        worst = worst.max(diff / d.max_abs());
    }
    outcome(worst <= 1e-10, format!("max relative Linf difference {}", e(worst)))
}

fn c04() -> Outcome {
    let f = ball(24, 5.0);
    let probes: Vec<Probe> = PROBES.iter().map(|&x| Probe::new(&f.op, x).unwrap()).collect();
    let (mut ai, mut a1d, mut a1e): (f64, f64, f64) = (0.0, 0.0, 0.0);
    for k in 0..5 {
        let (px, py) = (&probes[k], &probes[(k + 2) % 5]);
        let (l, m) = (indicators::lifting(px, py).unwrap(), indicators::lifting(py, px).unwrap());
        ai = ai.max((l.value - m.value).abs() / l.value.abs());
        let (a, b) = (indicators::i1_at(px, Some(py)).unwrap(), indicators::i1_at(py, Some(px)).unwrap());
        a1d = a1d.max((a.value - b.value).abs() / a.value.abs());
        a1e = a1e.max((a.energy - b.energy).abs() / a.energy.abs());
    }
    outcome(
        ai <= 1e-9 && a1d <= 1e-3 && a1e <= 1e-3,
        format!("I asymmetry {}, I1 asymmetry dtn form {} energy form {}", e(ai), e(a1d), e(a1e)),
    )
}

fn c05() -> Outcome {
    let f = ball(24, 5.0);
    let h = f.grid.min_h();
    let px = Probe::new(&f.op, PROBES[0]).unwrap();
    let mut worst_i: f64 = 0.0;
    let mut worst_s: f64 = 0.0;
    for y in [PROBES[1], PROBES[2], PROBES[3]] {
        let y = f.grid.place_probe(y);
        let di = indicators::harmonicity_defect(|z| indicators::lifting(&px, &Probe::new(&f.op, z)?).map(|p| p.value), y, h).unwrap();
        let ds = indicators::harmonicity_defect(|z| indicators::ssm_at(&px, Some(&Probe::new(&f.op, z)?), None).map(|s| s.value), y, h)
            .unwrap();
        worst_i = worst_i.max(di);
        worst_s = worst_s.max(ds);
    }
    let bound = 10.0 * h * h;
    outcome(worst_i <= bound && worst_s <= bound, format!("I(x,.) {}, div w_x(.) {}, bound {}", e(worst_i), e(worst_s), e(bound)))
}

fn line_config(n: usize, amp: f64) -> ExperimentConfig {
    ExperimentConfig::from_json(&format!(
        r#"{{
        "name": "approach", "grid": {{ "n": [{n}, {n}, {n}] }},
        "obstacle": {{ "components": [{{ "shape": {{ "kind": "ball", "center": [0.5, 0.5, 0.5], "radius": 0.2 }}, "amplitude": {amp} }}] }},
        "points": [{{ "kind": "line", "name": "approach", "start": [0.51, 0.49, 0.82], "target": [0.5, 0.5, 0.7], "count": 8, "min_distance": 0.03 }}],
        "indicators": {{ "probe": true, "ssm": true, "i1": false, "ips": false, "cim": true, "weak_kernel": true }}
    }}"#
    ))
    .unwrap()
}

fn c06(lines: &[(f64, ScanReport)]) -> Outcome {
    let mut ok = true;
    let mut parts = Vec::new();
    for (amp, rep) in lines {
        for q in scan::BLOWUP_QUANTITIES {
            let c = rep.checks.iter().find(|c| c.name == format!("blow-up {q} on approach"));
            match c {
                Some(c) => {
                    ok &= c.passed;
                    parts.push(format!("V={amp} {q}: {}", c.detail));
                }
                None => {
                    ok = false;
                    parts.push(format!("V={amp} {q}: missing"));
                }
            }
        }
    }
    outcome(ok, parts.join("; "))
}

fn c08(lines: &[(f64, ScanReport)]) -> Outcome {
    let mut ok = true;
    let mut parts = Vec::new();
    for (amp, rep) in lines {
        let vals = |q: &str| -> Vec<f64> { rep.points.iter().map(|p| p.result.as_ref().and_then(|r| r.get(q)).unwrap_or(f64::NAN)).collect() };
        let (i, k) = (vals("I"), vals("weak_kernel"));
        let growth = i.last().unwrap().abs() / i[0].abs();
        let mid = k[k.len() / 2];
        let spread = k.iter().map(|v| (v / mid).max(mid / v)).fold(0.0, f64::max);
        ok &= growth >= 10.0 && spread <= 2.0 && k.iter().all(|v| v.is_finite() && v.signum() == mid.signum());
        parts.push(format!("V={amp}: I grows {growth:.1}x, weak kernel within factor {spread:.3} of mid value"));
    }
    outcome(ok, parts.join("; "))
}

fn c07() -> Outcome {
    let pts: [Point; 5] = [[0.52, 0.47, 0.51], [0.2, 0.2, 0.2], [0.8, 0.2, 0.8], [0.18, 0.8, 0.5], [0.8, 0.82, 0.21]];
    let mut m = Vec::new();
    for n in [32, 48] {
        let f = ball(n, 5.0);
        let (mut a, mut b): (f64, f64) = (0.0, 0.0);
        for &x in &pts {
            assert!(f.potential.distance_to_obstacle_boundary(x).abs() >= 0.15 && f.grid.distance_to_boundary(x) >= 0.15);
            let p = Probe::new(&f.op, x).unwrap();
            let i = indicators::probe_indicator(&p).unwrap().value;
            let s = indicators::ssm_at(&p, None, None).unwrap().value;
            let c = indicators::cim_at(&p).unwrap().value;
            a = a.max((c - i).abs());
            b = b.max((s - i).abs());
        }
        m.push((a, b));
    }
    let ca = (m[1].0 - m[0].0).abs() / m[0].0;
    let cb = (m[1].1 - m[0].1).abs() / m[0].1;
    outcome(
        ca <= 0.2 && cb <= 0.2,
        format!(
            "max|I*-I| {} -> {} ({:.1}%), max|div w-I| {} -> {} ({:.1}%)",
            e(m[0].0),
            e(m[1].0),
            100.0 * ca,
            e(m[0].1),
            e(m[1].1),
            100.0 * cb
        ),
    )
}

fn c09() -> Outcome {
    let f = fixture(24, [0.5, 0.5, 0.35], 0.15, 5.0);
    let opts = NeedleOptions::default();
    let x = f.grid.place_probe([0.5, 0.5, 0.78]);
    let y = f.grid.place_probe([0.8, 0.5, 0.7]);
    let nx = make_needle([1.0; 3], [0.5, 0.5, 1.0], &[], x).unwrap();
    let ny = make_needle([1.0; 3], [1.0, 0.5, 0.7], &[], y).unwrap();
    let ob = ObstacleSpec::single(Shape::Ball { center: [0.5, 0.5, 0.35], radius: 0.15 }, 5.0);
    let sep = [&nx, &ny].iter().map(|n| (0..=200).map(|k| ob.distance(n.point_at(k as f64 / 200.0))).fold(f64::INFINITY, f64::min)).fold(f64::INFINITY, f64::min);
    let sx = generate_needle_sequences(&f.grid, &nx, &[0, 1, 2], &opts).unwrap();
    let sy = generate_needle_sequences(&f.grid, &ny, &[0, 1, 2], &opts).unwrap();
    let mut ok = sep >= 0.2;
    let mut parts = vec![format!("separation {sep:.3}")];
    for mode in [LimitMode::Probe, LimitMode::Ssm, LimitMode::Cim, LimitMode::ProbeLifting, LimitMode::SsmLifting] {
        let s = indicators::dtn_limit_estimator(&f.op, &sx, mode, Some(&sy)).unwrap();
        let k = s.errors.len();
        let good = s.final_error() <= 0.1 && decreasing(&s.errors[k - 3..]);
        ok &= good;
        parts.push(format!("{mode:?} final error {} tail {:?}", e(s.final_error()), s.errors[k - 3..].iter().map(|v| e(*v)).collect::<Vec<_>>()));
    }
    outcome(ok, parts.join("; "))
}

fn c10(r: &Refinement) -> Outcome {
    let mut w = [0.0f64; 3];
    for c in &r.cim32 {
        for i in 0..3 {
            w[i] = w[i].max(c[i]);
        }
    }
    outcome(
        w.iter().all(|v| *v <= 3e-2),
        format!("at 32^3: I* vs div w* {}, I* relation {}, div w* relation {}", e(w[0]), e(w[1]), e(w[2])),
    )
}

/// Needle bundles for a needle ending inside D and one avoiding it, per jump sign.
struct SideB {
    rows: Vec<(f64, &'static str, ips::sideb::SequenceBundle)>,
}

fn side_b() -> SideB {
    let mut rows = Vec::new();
    for amp in [5.0, -3.0] {
        let mut f = ball(24, amp);
        f.op.tol = 1e-12;
        let mask = f.potential.obstacle_mask();
        for (name, x) in [("hit", [0.47, 0.52, 0.5]), ("avoid", [0.26, 0.3, 0.5])] {
            let x = f.grid.place_probe(x);
            let nd = default_needles(&f.grid, x).unwrap().remove(0);
            let seq = generate_needle_sequence(&f.grid, &nd, 0, &NeedleOptions::default()).unwrap();
            rows.push((amp, name, sequence_bundle(&f.op, &seq, &mask).unwrap()));
        }
    }
    SideB { rows }
}

fn c11(sb: &SideB) -> Outcome {
    let mut ok = true;
    let mut parts = Vec::new();
    for (amp, name, b) in &sb.rows {
        for m in SequenceMethod::ALL {
            let v = b.values(m);
            let last = *v.last().unwrap();
            let good = if *name == "hit" {
                last.abs() >= 4.0 * v[0].abs() && last.signum() == amp.signum()
            } else {
                needle::converges(v, ips::sideb::CONVERGENCE_SPREAD)
            };
            ok &= good;
            if !good || m == SequenceMethod::Probe {
                parts.push(format!("V={amp} {name} {}: {} -> {}", m.name(), e(v[0]), e(last)));
            }
        }
    }
    let cfg = ExperimentConfig::from_json(
        r#"{
        "name": "battery", "grid": { "n": [24, 24, 24] },
        "obstacle": { "components": [{ "shape": { "kind": "ball", "center": [0.5, 0.5, 0.5], "radius": 0.2 }, "amplitude": 5.0 }] },
        "classify": {
            "points": [[0.5, 0.5, 0.5], [0.45, 0.52, 0.55], [0.58, 0.44, 0.47], [0.39, 0.6, 0.43], [0.6, 0.57, 0.6], [0.5, 0.38, 0.52],
                       [0.22, 0.25, 0.5], [0.8, 0.75, 0.3], [0.5, 0.5, 0.8], [0.17, 0.8, 0.78], [0.77, 0.2, 0.74], [0.24, 0.52, 0.5]],
            "method": "probe", "j": 0, "expected_sign": 1.0, "needles_per_point": 2
        },
        "solver": { "tol": 1e-12 }
    }"#,
    )
    .unwrap();
    let rep = scan::run_classify(&cfg).unwrap();
    let wrong = rep.classification.iter().filter(|c| !c.correct).count();
    let inconclusive = rep.classification.iter().filter(|c| c.verdict == Some(ips::sideb::Verdict::Inconclusive)).count();
    ok &= wrong == 0;
    parts.push(format!("battery: {wrong} of {} misclassified, {inconclusive} inconclusive", rep.classification.len()));
    outcome(ok, parts.join("; "))
}

fn c12(sb: &SideB) -> Outcome {
    let mut ok = true;
    let mut parts = Vec::new();
    for (amp, _, b) in sb.rows.iter().filter(|r| r.1 == "hit") {
        let k = b.l2.len();
        let ratio: Vec<f64> = b.l1.iter().zip(&b.l2).map(|(a, c)| a / c).collect();
        let grows = b.l2[k - 1] >= 4.0 * b.l2[0];
        ok &= grows && decreasing(&ratio[k - 3..]);
        parts.push(format!("V={amp}: L2(D) {} -> {}, L1/L2 tail {:?}", e(b.l2[0]), e(b.l2[k - 1]), ratio[k - 3..].iter().map(|v| e(*v)).collect::<Vec<_>>()));
    }
    outcome(ok, parts.join("; "))
}

fn c13() -> Outcome {
    let cases = rates::default_cone_cases();
    let has_perp = cases.iter().any(|c| c.axis.iter().zip(&c.direction).map(|(a, b)| a * b).sum::<f64>().abs() < 1e-12);
    let cones = rates::cone_rates(&cases, &rates::default_cone_eps(), 1.0).unwrap();
    let worst = cones.iter().map(|c| (c.fit.exponent + 1.0).abs()).fold(0.0, f64::max);
    let sphere = rates::full_sphere_check(1e-2, 1.0).unwrap();
    outcome(
        has_perp && cones.len() == 5 && worst <= 0.05 && sphere.relative <= 1e-2,
        format!("exponents {:?}, full sphere relative {}", cones.iter().map(|c| format!("{:.4}", c.fit.exponent)).collect::<Vec<_>>(), e(sphere.relative)),
    )
}

fn c14() -> Outcome {
    let face = Face { axis: 2, upper: false };
    let fa = rates::face_approach([1.0; 3], face, &rates::default_face_distances(), 1e-4).unwrap();
    let f = ball(24, 5.0);
    let a = rates::i1_approach(&f.op, face, &[0.24, 0.2, 0.16, 0.12, 0.1, 0.08]).unwrap();
    outcome(
        (fa.exterior_fit.exponent + 3.0).abs() <= 0.1 && fa.ratio_fit.exponent >= 0.4 && a.decreasing,
        format!(
            "exterior exponent {:.4}, ratio exponent {:.4}, I1 {:?}",
            fa.exterior_fit.exponent,
            fa.ratio_fit.exponent,
            a.values.iter().map(|v| e(*v)).collect::<Vec<_>>()
        ),
    )
}

fn c15() -> Outcome {
    let mut ok = true;
    let mut parts = Vec::new();
    for amp in [5.0, -3.0] {
        let f = ball(48, amp);
        let mask = f.potential.obstacle_mask();
        let ds = [0.16, 0.12, 0.09, 0.07, 0.055, 0.045, 0.035];
        let line: Vec<Point> = ds.iter().map(|d| f.grid.place_probe([0.513, 0.493, 0.7 + d])).collect();
        let dist: Vec<f64> = line.iter().map(|x| f.potential.distance_to_obstacle_boundary(*x)).collect();
        let j = indicators::jump_magnitude_estimate(&f.op, &mask, &line, &dist).unwrap();
        let rel = (j.alpha - amp).abs() / amp.abs();
        ok &= rel <= 0.1;
        parts.push(format!("V={amp}: alpha {:.4} ({:.2}%)", j.alpha, 100.0 * rel));
    }
    outcome(ok, parts.join("; "))
}

fn determinism_config() -> ExperimentConfig {
    ExperimentConfig::from_json(
        r#"{
        "name": "determinism", "grid": { "n": [16, 16, 16] },
        "obstacle": { "components": [{ "shape": { "kind": "ball", "center": [0.5, 0.5, 0.5], "radius": 0.2 }, "amplitude": 5.0 }] },
        "points": [
            { "kind": "list", "name": "probes", "points": [[0.23, 0.31, 0.47], [0.74, 0.27, 0.52], [0.5, 0.19, 0.77]] },
            { "kind": "line", "name": "approach", "start": [0.5, 0.5, 0.93], "target": [0.5, 0.5, 0.7], "count": 5, "min_distance": 0.08 }
        ],
        "seed": 11
    }"#,
    )
    .unwrap()
}

fn csv_bytes(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    for ent in std::fs::read_dir(dir).unwrap() {
        let p = ent.unwrap().path();
        if p.extension().is_some_and(|x| x == "csv") {
            out.insert(p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap());
        }
    }
    out
}

fn c16() -> Outcome {
    let cfg = determinism_config();
    let tmp = tempfile::tempdir().unwrap();
    let mut runs = Vec::new();
    for threads in [1, 4, 8] {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        let mut files = BTreeMap::new();
        for kind in ["scan", "forward"] {
            let dir = tmp.path().join(format!("{threads}/{kind}"));
            let rep = pool.install(|| if kind == "scan" { scan::run_scan(&cfg) } else { scan::run_forward(&cfg) }).unwrap();
            emit_report(&rep, &dir).unwrap();
            for (k, v) in csv_bytes(&dir) {
                files.insert(format!("{kind}/{k}"), v);
            }
        }
        runs.push(files);
    }
    let same = runs.windows(2).all(|w| w[0] == w[1]);
    let n = runs[0].len();
    outcome(same && n >= 3, format!("{n} CSV files compared across 1, 4 and 8 threads, identical: {same}"))
}

fn main() {
    let start = Instant::now();
    let mut results: Vec<(u32, &str, Outcome)> = Vec::new();
    let mut run = |id: u32, name: &'static str, f: &mut dyn FnMut() -> Outcome| {
        let t = Instant::now();
        let o = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            let msg = p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default();
            outcome(false, format!("panicked: {msg}"))
        });
        let line = format!("{} criterion {id:2} {name}: {} [{:.0}s]", if o.passed { "PASS" } else { "FAIL" }, o.detail, t.elapsed().as_secs_f64());
        println!("{line}");
        results.push((id, name, o));
    };

    run(1, "oracle equivalence", &mut c01);
    let mut refine = None;
    run(2, "decomposition identity", &mut || {
        let r = refinement();
        let o = refinement_verdict(&r.h, &r.single);
        refine = Some(r);
        o
    });
    run(3, "lifting identity", &mut || refinement_verdict(&refine.as_ref().unwrap().h, &refine.as_ref().unwrap().pair));
    run(4, "symmetries", &mut c04);
    run(5, "harmonicity", &mut c05);
    let mut lines = Vec::new();
    run(6, "blow-up with sign", &mut || {
        lines = [5.0, -3.0].iter().map(|&a| (a, scan::run_scan(&line_config(32, a)).unwrap())).collect();
        c06(&lines)
    });
    run(7, "boundedness", &mut c07);
    run(8, "negative control", &mut || c08(&lines));
    run(9, "DtN-limit convergence", &mut c09);
    run(10, "completely integrated identities", &mut || c10(refine.as_ref().unwrap()));
    let mut sb = None;
    run(11, "Side B sequences and classification", &mut || {
        let s = side_b();
        let o = c11(&s);
        sb = Some(s);
        o
    });
    run(12, "L2(D) divergence and L1/L2 ratio", &mut || c12(sb.as_ref().unwrap()));
    run(13, "cutoff cone integral", &mut c13);
    run(14, "exterior Hessian energy and I1 trend", &mut c14);
    run(15, "jump magnitude", &mut c15);
    run(16, "determinism", &mut c16);

    let failed: Vec<u32> = results.iter().filter(|r| !r.2.passed).map(|r| r.0).collect();
    println!("acceptance: {} of {} criteria passed in {:.0}s", results.len() - failed.len(), results.len(), start.elapsed().as_secs_f64());
    if !failed.is_empty() {
        println!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
