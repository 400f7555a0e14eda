//! Adaptive composite Simpson quadrature for scalar- and vector-valued
//! integrands, plus the lower incomplete gamma function used by the
//! noncommutative Schwarzschild family.

use crate::error::FieldError;

pub const DEFAULT_TOL: f64 = 1e-9;
pub const DEFAULT_NODE_BUDGET: usize = 1 << 16;

fn simpson(a: f64, b: f64, fa: &[f64], fm: &[f64], fb: &[f64]) -> Vec<f64> {
    let h = (b - a) / 6.0;
    fa.iter()
        .zip(fm)
        .zip(fb)
        .map(|((&va, &vm), &vb)| h * (va + 4.0 * vm + vb))
        .collect()
}

#[allow(clippy::too_many_arguments)]
fn adapt<F: FnMut(f64) -> Result<Vec<f64>, FieldError>>(
    f: &mut F,
    a: f64,
    b: f64,
    fa: Vec<f64>,
    fm: Vec<f64>,
    fb: Vec<f64>,
    whole: Vec<f64>,
    tol: f64,
    budget: &mut isize,
    depth: usize,
) -> Result<Vec<f64>, FieldError> {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm)?;
    let frm = f(rm)?;
    *budget -= 2;
    let left = simpson(a, m, &fa, &flm, &fm);
    let right = simpson(m, b, &fm, &frm, &fb);
    let err: f64 = left
        .iter()
        .zip(&right)
        .zip(&whole)
        .map(|((l, r), w)| (l + r - w).abs())
        .fold(0.0, f64::max);
    if err <= 15.0 * tol || depth >= 48 {
        if *budget < 0 {
            return Err(FieldError::Quadrature(format!(
                "node budget exhausted with error estimate {:e}",
                err / 15.0
            )));
        }
        // Richardson correction term
        return Ok(left
            .iter()
            .zip(&right)
            .zip(&whole)
            .map(|((l, r), w)| l + r + (l + r - w) / 15.0)
            .collect());
    }
    if *budget < 0 {
        return Err(FieldError::Quadrature(
            "node budget exhausted before tolerance met".into(),
        ));
    }
    let lv = adapt(f, a, m, fa, flm, fm.clone(), left, 0.5 * tol, budget, depth + 1)?;
    let rv = adapt(f, m, b, fm, frm, fb, right, 0.5 * tol, budget, depth + 1)?;
    Ok(lv.iter().zip(&rv).map(|(l, r)| l + r).collect())
}

/// Integrate a vector-valued integrand over [a, b] with adaptive Simpson.
pub fn integrate_vec<F: FnMut(f64) -> Result<Vec<f64>, FieldError>>(
    mut f: F,
    a: f64,
    b: f64,
    tol: f64,
    node_budget: usize,
) -> Result<Vec<f64>, FieldError> {
    if a == b {
        let n = f(a)?.len();
        return Ok(vec![0.0; n]);
    }
    let (lo, hi, sign) = if a < b { (a, b, 1.0) } else { (b, a, -1.0) };
    let fa = f(lo)?;
    let fb = f(hi)?;
    let m = 0.5 * (lo + hi);
    let fm = f(m)?;
    let whole = simpson(lo, hi, &fa, &fm, &fb);
    let mut budget = node_budget as isize;
    let v = adapt(&mut f, lo, hi, fa, fm, fb, whole, tol, &mut budget, 0)?;
    Ok(v.into_iter().map(|x| sign * x).collect())
}

pub fn integrate<F: FnMut(f64) -> Result<f64, FieldError>>(
    mut f: F,
    a: f64,
    b: f64,
    tol: f64,
    node_budget: usize,
) -> Result<f64, FieldError> {
    let v = integrate_vec(|t| f(t).map(|x| vec![x]), a, b, tol, node_budget)?;
    Ok(v[0])
}

/// Lower incomplete gamma gamma(3/2, x) = int_0^x sqrt(p) e^{-p} dp,
/// by adaptive quadrature of the defining integral.
pub fn lower_incomplete_gamma_3_2(x: f64) -> Result<f64, FieldError> {
    if x <= 0.0 {
        return Ok(0.0);
    }
    // Beyond ~45 the tail is below f64 resolution of Gamma(3/2).
    let cut = x.min(45.0);
    let head = integrate(
        |p| Ok(p.sqrt() * (-p).exp()),
        0.0,
        cut,
        1e-13,
        DEFAULT_NODE_BUDGET,
    )?;
    Ok(head)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polynomial_exact() {
        let v = integrate(|t| Ok(t * t), 0.0, 3.0, 1e-12, 1 << 14).unwrap();
        assert!((v - 9.0).abs() < 1e-12);
    }

    #[test]
    fn oscillatory() {
        let v = integrate(|t| Ok((5.0 * t).sin()), 0.0, 2.0, 1e-11, 1 << 16).unwrap();
        let exact = (1.0 - (10.0f64).cos()) / 5.0;
        assert!((v - exact).abs() < 1e-10);
    }

    #[test]
    fn reversed_limits() {
        let v = integrate(|t| Ok(t), 2.0, 0.0, 1e-12, 1 << 12).unwrap();
        assert!((v + 2.0).abs() < 1e-12);
    }

    #[test]
    fn incomplete_gamma_limit() {
        // gamma(3/2, inf) = sqrt(pi)/2
        let v = lower_incomplete_gamma_3_2(40.0).unwrap();
        assert!((v - std::f64::consts::PI.sqrt() / 2.0).abs() < 1e-12);
    }
}
