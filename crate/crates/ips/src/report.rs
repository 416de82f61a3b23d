//! Report files: CSV tables, a JSON sidecar and a pass/fail summary.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{IpsError, Result};
use crate::scan::{fmt_num, ScanReport, Table};

fn csv_err(e: csv::Error) -> IpsError {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => IpsError::Io(io),
        other => IpsError::Io(std::io::Error::other(format!("{other:?}"))),
    }
}

fn write_table(path: &Path, table: &Table) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(&table.columns).map_err(csv_err)?;
    for r in &table.rows {
        w.write_record(r).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

fn opt(v: Option<f64>) -> String {
    v.map(fmt_num).unwrap_or_default()
}

/// Indicator values and residuals per point; the columns are the union of the keys.
pub fn points_table(report: &ScanReport) -> Table {
    let mut vkeys = BTreeSet::new();
    let mut rkeys = BTreeSet::new();
    for p in &report.points {
        if let Some(r) = &p.result {
            vkeys.extend(r.values.keys().cloned());
            rkeys.extend(r.residuals.keys().cloned());
        }
    }
    let mut columns: Vec<String> =
        ["set", "index", "x", "y", "z", "obstacle_distance", "status"].iter().map(|s| s.to_string()).collect();
    columns.extend(vkeys.iter().cloned());
    columns.extend(rkeys.iter().map(|k| format!("res_{k}")));
    columns.push("flags".into());
    columns.push("error".into());
    let rows = report
        .points
        .iter()
        .map(|p| {
            let mut row = vec![
                p.set.clone(),
                p.index.to_string(),
                fmt_num(p.x[0]),
                fmt_num(p.x[1]),
                fmt_num(p.x[2]),
                fmt_num(p.obstacle_distance),
                if p.error.is_none() { "ok".into() } else { "failed".into() },
            ];
            let r = p.result.as_ref();
            row.extend(vkeys.iter().map(|k| opt(r.and_then(|r| r.values.get(k).copied()))));
            row.extend(rkeys.iter().map(|k| opt(r.and_then(|r| r.residuals.get(k).copied()))));
            row.push(r.map(|r| r.flags.join(";")).unwrap_or_default());
            row.push(p.error.clone().unwrap_or_default());
            row
        })
        .collect();
    Table { name: "points".into(), columns, rows }
}

pub fn fits_table(report: &ScanReport) -> Table {
    let columns = ["set", "quantity", "expect_blowup", "expected_sign", "exponent", "intercept", "r2", "sign", "used", "flagged", "monotone", "error"];
    let rows = report
        .fits
        .iter()
        .map(|f| {
            let fit = f.fit.as_ref();
            vec![
                f.set.clone(),
                f.quantity.clone(),
                f.expect_blowup.to_string(),
                fmt_num(f.expected_sign),
                opt(fit.map(|x| x.exponent)),
                opt(fit.map(|x| x.intercept)),
                opt(fit.map(|x| x.r2)),
                opt(fit.map(|x| x.sign)),
                fit.map(|x| x.used.to_string()).unwrap_or_default(),
                fit.map(|x| x.flagged.to_string()).unwrap_or_default(),
                f.monotone.to_string(),
                f.error.clone().unwrap_or_default(),
            ]
        })
        .collect();
    Table { name: "fits".into(), columns: columns.iter().map(|s| s.to_string()).collect(), rows }
}

fn verdict_name(v: crate::sideb::Verdict) -> &'static str {
    match v {
        crate::sideb::Verdict::InsideDbar => "inside_Dbar",
        crate::sideb::Verdict::Outside => "outside",
        crate::sideb::Verdict::Inconclusive => "inconclusive",
    }
}

pub fn classification_table(report: &ScanReport) -> Table {
    let columns = ["x", "y", "z", "obstacle_distance", "truth", "near_boundary", "verdict", "correct", "needles_tried", "growth", "error"];
    let rows = report
        .classification
        .iter()
        .map(|c| {
            vec![
                fmt_num(c.x[0]),
                fmt_num(c.x[1]),
                fmt_num(c.x[2]),
                fmt_num(c.obstacle_distance),
                verdict_name(c.truth).into(),
                c.near_boundary.to_string(),
                c.verdict.map(verdict_name).unwrap_or("").into(),
                c.correct.to_string(),
                c.needles_tried.to_string(),
                c.growth.iter().map(|g| fmt_num(*g)).collect::<Vec<_>>().join(";"),
                c.error.clone().unwrap_or_default(),
            ]
        })
        .collect();
    Table { name: "classification".into(), columns: columns.iter().map(|s| s.to_string()).collect(), rows }
}

/// Plain-text summary: one PASS/FAIL line per check plus solver statistics.
pub fn summary_text(report: &ScanReport) -> String {
    let mut s = format!("{} {} (config {})\n", report.kind, report.name, &report.config_hash[..16]);
    if let Some(w) = &report.wellposedness {
        s += &format!("smallest |eigenvalue| {:.6e} after {} iterations\n", w.lambda_min, w.iterations);
    }
    for c in &report.checks {
        s += &format!("{} {}: {}\n", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    let st = &report.solver;
    s += &format!(
        "solver: {} solves, {} iterations total, {} max, worst relative residual {:.3e}\n",
        st.solves, st.total_iterations, st.max_iterations, st.max_relative_residual
    );
    s
}

/// Writes the report into `dir`, creating it if needed. Returns the files written.
pub fn emit_report(report: &ScanReport, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut files = Vec::new();
    let mut tables = Vec::new();
    if !report.points.is_empty() {
        tables.push(points_table(report));
    }
    if !report.fits.is_empty() {
        tables.push(fits_table(report));
    }
    if !report.classification.is_empty() {
        tables.push(classification_table(report));
    }
    tables.extend(report.tables.iter().cloned());
    for t in &tables {
        let p = dir.join(format!("{}.csv", t.name));
        write_table(&p, t)?;
        files.push(p);
    }
    let p = dir.join("report.json");
    let json = serde_json::to_string_pretty(report).map_err(|e| IpsError::Io(std::io::Error::other(e)))?;
    fs::write(&p, json + "\n")?;
    files.push(p);
    let p = dir.join("summary.txt");
    fs::write(&p, summary_text(report))?;
    files.push(p);
    Ok(files)
}
