//! Log-log rate fits and the rate checks for the kernel integrals.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::grid::Point;
use crate::indicators;
use crate::kernel;
use crate::solver::SchrodingerOperator;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RateFit {
    pub exponent: f64,
    pub intercept: f64,
    pub r2: f64,
    /// Sign of the values used in the fit.
    pub sign: f64,
    pub used: usize,
    /// Values of mixed sign (or zeros) were present and dropped.
    pub flagged: bool,
}

/// Least squares of log|value| on log distance. Distances must be positive and
/// strictly decreasing. Mixed signs keep only the points carrying the sign of
/// the last value and flag the fit.
pub fn fit_rate(distances: &[f64], values: &[f64]) -> Result<RateFit> {
    if distances.len() != values.len() {
        return invalid("distances and values differ in length");
    }
    if distances.len() < 4 {
        return invalid("a rate fit needs at least 4 points");
    }
    if distances.iter().any(|d| !(*d > 0.0) || !d.is_finite()) {
        return invalid("distances must be positive and finite");
    }
    if distances.windows(2).any(|w| w[1] >= w[0]) {
        return invalid("distances must be strictly decreasing");
    }
    if values.iter().any(|v| !v.is_finite()) {
        return invalid("values must be finite");
    }
    let sign = values.last().unwrap().signum();
    if *values.last().unwrap() == 0.0 {
        return invalid("last value is zero; no sign to fit");
    }
    let keep: Vec<usize> = (0..values.len()).filter(|&i| values[i] != 0.0 && values[i].signum() == sign).collect();
    let flagged = keep.len() != values.len();
    if keep.len() < 3 {
        return invalid("fewer than 3 values share the sign of the last value");
    }
    let xs: Vec<f64> = keep.iter().map(|&i| distances[i].ln()).collect();
    let ys: Vec<f64> = keep.iter().map(|&i| values[i].abs().ln()).collect();
    let (slope, intercept, r2) = least_squares(&xs, &ys);
    Ok(RateFit { exponent: slope, intercept, r2, sign, used: keep.len(), flagged })
}

fn least_squares(xs: &[f64], ys: &[f64]) -> (f64, f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = xs.iter().zip(ys).map(|(x, y)| (y - intercept - slope * x).powi(2)).sum();
    let r2 = if syy > 0.0 { 1.0 - ss_res / syy } else { 1.0 };
    (slope, intercept, r2)
}

/// True when the last `k` values move monotonically away from zero.
pub fn grows_monotonically(values: &[f64], k: usize) -> bool {
    if values.len() < k || k < 2 {
        return false;
    }
    let tail = &values[values.len() - k..];
    let s = tail[k - 1].signum();
    tail.windows(2).all(|w| s * (w[1] - w[0]) > 0.0 && w[1].signum() == s)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConeCase {
    pub axis: Point,
    pub half_angle: f64,
    pub direction: Point,
}

#[derive(Debug, Clone, Serialize)]
pub struct ConeRate {
    pub case: ConeCase,
    pub eps: Vec<f64>,
    pub values: Vec<f64>,
    pub fit: RateFit,
}

/// Cases with generic, oblique and perpendicular directions.
pub fn default_cone_cases() -> Vec<ConeCase> {
    let s = 1.0 / 3f64.sqrt();
    let r = 1.0 / 2f64.sqrt();
    vec![
        ConeCase { axis: [0.0, 0.0, 1.0], half_angle: std::f64::consts::FRAC_PI_6, direction: [0.0, 0.0, 1.0] },
        ConeCase { axis: [0.0, 0.0, 1.0], half_angle: std::f64::consts::FRAC_PI_4, direction: [s, s, s] },
        ConeCase { axis: [1.0, 0.0, 0.0], half_angle: std::f64::consts::FRAC_PI_3, direction: [0.0, 1.0, 0.0] },
        ConeCase { axis: [0.0, r, r], half_angle: 0.2, direction: [1.0, 0.0, 0.0] },
        ConeCase { axis: [0.0, 1.0, 0.0], half_angle: 1.2, direction: [r, r, 0.0] },
    ]
}

pub fn default_cone_eps() -> Vec<f64> {
    vec![1e-2, 3e-3, 1e-3, 3e-4, 1e-4]
}

pub fn cone_rates(cases: &[ConeCase], eps: &[f64], r_outer: f64) -> Result<Vec<ConeRate>> {
    cases
        .iter()
        .map(|c| {
            let values = eps
                .iter()
                .map(|&e| kernel::cone_energy_integral(c.axis, c.half_angle, c.direction, e, r_outer))
                .collect::<Result<Vec<f64>>>()?;
            let fit = fit_rate(eps, &values)?;
            Ok(ConeRate { case: *c, eps: eps.to_vec(), values, fit })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct SphereCheck {
    pub eps: f64,
    pub r_outer: f64,
    pub quadrature: f64,
    pub closed_form: f64,
    pub relative: f64,
}

/// All directions against (1/(12 pi)) (1/eps - 1/R).
pub fn full_sphere_check(eps: f64, r_outer: f64) -> Result<SphereCheck> {
    let q = kernel::cone_energy_integral([0.0, 0.0, 1.0], kernel::FULL_SPHERE, [0.0, 0.0, 1.0], eps, r_outer)?;
    let closed = (1.0 / eps - 1.0 / r_outer) / (12.0 * std::f64::consts::PI);
    Ok(SphereCheck { eps, r_outer, quadrature: q, closed_form: closed, relative: (q - closed).abs() / closed })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Face {
    pub axis: usize,
    /// false for the face at 0, true for the face at the extent.
    pub upper: bool,
}

impl Face {
    pub fn center(&self, extents: [f64; 3]) -> Point {
        let mut b = [extents[0] / 2.0, extents[1] / 2.0, extents[2] / 2.0];
        b[self.axis] = if self.upper { extents[self.axis] } else { 0.0 };
        b
    }

    /// The point at distance d inside the box on the inward normal through the face centre.
    pub fn approach(&self, extents: [f64; 3], d: f64) -> Point {
        let mut x = self.center(extents);
        x[self.axis] += if self.upper { -d } else { d };
        x
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct FaceApproach {
    pub face: Face,
    pub distances: Vec<f64>,
    pub exterior: Vec<f64>,
    pub boundary: Vec<f64>,
    pub ratio: Vec<f64>,
    pub exterior_fit: RateFit,
    pub ratio_fit: RateFit,
}

pub fn default_face_distances() -> Vec<f64> {
    vec![0.16, 0.08, 0.04, 0.02, 0.01, 0.005]
}

/// Exterior Hessian energy and the boundary-to-exterior ratio as x approaches
/// the centre of a face.
pub fn face_approach(extents: [f64; 3], face: Face, distances: &[f64], rel_tol: f64) -> Result<FaceApproach> {
    if face.axis > 2 {
        return invalid("face axis must be 0, 1 or 2");
    }
    let mut exterior = Vec::new();
    let mut boundary = Vec::new();
    for &d in distances {
        let x = face.approach(extents, d);
        exterior.push(kernel::exterior_hess_energy(extents, x, None, rel_tol)?);
        boundary.push(kernel::boundary_grad_norm(extents, x)?);
    }
    let ratio: Vec<f64> = boundary.iter().zip(&exterior).map(|(b, e)| b / e).collect();
    let exterior_fit = fit_rate(distances, &exterior)?;
    let ratio_fit = fit_rate(distances, &ratio)?;
    Ok(FaceApproach { face, distances: distances.to_vec(), exterior, boundary, ratio, exterior_fit, ratio_fit })
}

#[derive(Debug, Clone, Serialize)]
pub struct I1Approach {
    pub face: Face,
    pub distances: Vec<f64>,
    pub values: Vec<f64>,
    /// The last five values decrease monotonically.
    pub decreasing: bool,
}

/// I1(x) along the inward normal through a face centre.
pub fn i1_approach(op: &SchrodingerOperator, face: Face, distances: &[f64]) -> Result<I1Approach> {
    let g = op.grid();
    let values = distances
        .iter()
        .map(|&d| {
            let x = g.place_probe(face.approach(g.extents, d));
            indicators::i1_indicator(op, x, None).map(|v| v.value)
        })
        .collect::<Result<Vec<f64>>>()?;
    let k = values.len().min(5);
    let tail = &values[values.len() - k..];
    let decreasing = k >= 2 && tail.windows(2).all(|w| w[1] < w[0]);
    Ok(I1Approach { face, distances: distances.to_vec(), values, decreasing })
}
