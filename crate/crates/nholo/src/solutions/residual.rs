//! Residual verification of the decoupled field equations and the
//! Levi-Civita extraction constraints.

use crate::connections::{self, ConnectionKind};
use crate::error::SolutionError;
use crate::field::ScalarField;
use crate::geometry::DMetric;
use crate::report::{EquationResidual, ResidualReport};

/// Rectangular sample grid over (x1, x2, v) with a fixed y4 slice.
#[derive(Clone, Copy, Debug)]
pub struct Grid3 {
    pub x1: (f64, f64, usize),
    pub x2: (f64, f64, usize),
    pub v: (f64, f64, usize),
    pub y4: f64,
}

impl Grid3 {
    pub fn cube(lo: [f64; 3], hi: [f64; 3], n: usize) -> Grid3 {
        Grid3 {
            x1: (lo[0], hi[0], n),
            x2: (lo[1], hi[1], n),
            v: (lo[2], hi[2], n),
            y4: 0.0,
        }
    }

    pub fn points(&self) -> Vec<[f64; 4]> {
        let axis = |(lo, hi, n): (f64, f64, usize)| -> Vec<f64> {
            if n <= 1 {
                vec![0.5 * (lo + hi)]
            } else {
                (0..n)
                    .map(|k| lo + (hi - lo) * k as f64 / (n - 1) as f64)
                    .collect()
            }
        };
        let xs = axis(self.x1);
        let ys = axis(self.x2);
        let vs = axis(self.v);
        let mut out = Vec::with_capacity(xs.len() * ys.len() * vs.len());
        for &x in &xs {
            for &y in &ys {
                for &v in &vs {
                    out.push([x, y, v, self.y4]);
                }
            }
        }
        out
    }
}

struct AnsatzJets {
    g1: crate::field::JetValue,
    g2: crate::field::JetValue,
    h3: crate::field::JetValue,
    h4: crate::field::JetValue,
    w: [crate::field::JetValue; 2],
    n: [crate::field::JetValue; 2],
}

fn ansatz_jets(m: &DMetric, p: &[f64; 4], order: usize) -> Result<AnsatzJets, SolutionError> {
    let ej = |f: &ScalarField| f.eval_jet(p, order).map_err(SolutionError::Field);
    Ok(AnsatzJets {
        g1: ej(&m.g[0][0])?,
        g2: ej(&m.g[1][1])?,
        h3: ej(&m.h[0][0])?,
        h4: ej(&m.h[1][1])?,
        w: [ej(&m.n_conn.coefficients[0][0])?, ej(&m.n_conn.coefficients[0][1])?],
        n: [ej(&m.n_conn.coefficients[1][0])?, ej(&m.n_conn.coefficients[1][1])?],
    })
}

/// Sanity-check that the metric is in the reduced ansatz class:
/// diagonal blocks, g_i = g_i(x^k), h_a = h_a(x^k, v).
fn check_ansatz_shape(m: &DMetric, pts: &[[f64; 4]]) -> Result<(), SolutionError> {
    let sample = &pts[pts.len() / 2];
    let offdiag_g = m.g[0][1].eval(sample).map_err(SolutionError::Field)?;
    let offdiag_h = m.h[0][1].eval(sample).map_err(SolutionError::Field)?;
    if offdiag_g.abs() > 1e-12 || offdiag_h.abs() > 1e-12 {
        return Err(SolutionError::AnsatzShape(
            "metric blocks must be diagonal".into(),
        ));
    }
    for p in pts.iter().step_by((pts.len() / 5).max(1)) {
        let g1 = m.g[0][0].eval_jet(p, 1).map_err(SolutionError::Field)?;
        let g2 = m.g[1][1].eval_jet(p, 1).map_err(SolutionError::Field)?;
        for f in [&g1, &g2] {
            if f.partial(&[2]).abs() > 1e-10 || f.partial(&[3]).abs() > 1e-10 {
                return Err(SolutionError::AnsatzShape(
                    "g_i must not depend on the v-coordinates".into(),
                ));
            }
        }
        let h3 = m.h[0][0].eval_jet(p, 1).map_err(SolutionError::Field)?;
        let h4 = m.h[1][1].eval_jet(p, 1).map_err(SolutionError::Field)?;
        if h3.partial(&[3]).abs() > 1e-10 || h4.partial(&[3]).abs() > 1e-10 {
            return Err(SolutionError::AnsatzShape(
                "h_a must not depend on y4".into(),
            ));
        }
    }
    Ok(())
}

/// Dual-path residual verification of the decoupled system.
///
/// Path (a): the reduced closed forms of the four equation families.
/// Path (b): the full canonical-d-connection Einstein tensor against the
/// diagonal source. Pass requires both below tolerance.
pub fn residual_ep1a(
    m: &DMetric,
    y2: Option<&ScalarField>,
    y4: Option<&ScalarField>,
    grid: &Grid3,
    tol: f64,
    quad_tol: f64,
) -> Result<ResidualReport, SolutionError> {
    let pts = grid.points();
    check_ansatz_shape(m, &pts)?;

    let mut r_h = Vec::new();
    let mut r_v = Vec::new();
    let mut r_w = Vec::new();
    let mut r_n = Vec::new();
    let mut r_einstein = Vec::new();
    let mut skipped = 0usize;
    let mut h3s_zero_h4s_nonzero = 0usize;

    for p in &pts {
        let aj = ansatz_jets(m, p, 2)?;
        let g1 = aj.g1.value();
        let g2 = aj.g2.value();
        let h3 = aj.h3.value();
        let h4 = aj.h4.value();
        if g1.abs() < 1e-13 || g2.abs() < 1e-13 || h3.abs() < 1e-13 || h4.abs() < 1e-13 {
            skipped += 1;
            continue;
        }
        let y2v = match y2 {
            Some(f) => f.eval(p).map_err(SolutionError::Field)?,
            None => 0.0,
        };
        let y4v = match y4 {
            Some(f) => f.eval(p).map_err(SolutionError::Field)?,
            None => 0.0,
        };

        // equation 1: R^1_1 = R^2_2 = -Y4 (reduced closed form)
        {
            let d1g1 = aj.g1.partial(&[0]);
            let d1g2 = aj.g2.partial(&[0]);
            let d2g1 = aj.g1.partial(&[1]);
            let d2g2 = aj.g2.partial(&[1]);
            let d11g2 = aj.g2.partial(&[0, 0]);
            let d22g1 = aj.g1.partial(&[1, 1]);
            let bracket = d1g1 * d1g2 / (2.0 * g1) + d1g2 * d1g2 / (2.0 * g2) - d11g2
                + d2g1 * d2g2 / (2.0 * g2)
                + d2g1 * d2g1 / (2.0 * g1)
                - d22g1;
            let r11 = bracket / (2.0 * g1 * g2);
            r_h.push(r11 + y4v);
        }

        // equations 2-4 need h3*, h4* and the auxiliary coefficients
        let h3s = aj.h3.partial(&[2]);
        let h4s = aj.h4.partial(&[2]);
        let h4ss = aj.h4.partial(&[2, 2]);
        {
            // S^3_3 = (1/2 h3 h4)[h4* (ln sqrt|h3 h4|)* - h4**] = -Y2
            let logstar = 0.5 * (h3s / h3 + h4s / h4);
            let s33 = (h4s * logstar - h4ss) / (2.0 * h3 * h4);
            r_v.push(s33 + y2v);
        }
        if h4s.abs() < 1e-12 && h3s.abs() > 1e-10 {
            // the inverse special branch (h4* = 0, h3* != 0) is not covered
            // by these reduced forms
            h3s_zero_h4s_nonzero += 1;
        }
        if h4s.abs() < 1e-12 {
            // the reduced w/n forms assume h4* != 0: skip eq. 3/4 here,
            // the Einstein path below still covers the point.
            skipped += 1;
        } else {
            // phi = ln|h4*| - (1/2) ln|h3| - (1/2) ln|h4|
            let phi_star = h4ss / h4s - 0.5 * (h3s / h3) - 0.5 * (h4s / h4);
            let beta = h4s * phi_star;
            for i in 0..2 {
                let dih4s = aj.h4.partial(&[i, 2]);
                let dih3 = aj.h3.partial(&[i]);
                let dih4 = aj.h4.partial(&[i]);
                let di_phi = dih4s / h4s - 0.5 * (dih3 / h3) - 0.5 * (dih4 / h4);
                let alpha_i = h4s * di_phi;
                let w_i = aj.w[i].value();
                let r3i = -w_i * beta / (2.0 * h4) - alpha_i / (2.0 * h4);
                r_w.push(r3i);
            }
            // R_{4i} = -(h3 / 2 h4) [n_i** + gamma n_i*] = 0
            let gamma = 1.5 * h4s / h4 - h3s / h3;
            for i in 0..2 {
                let nis = aj.n[i].partial(&[2]);
                let niss = aj.n[i].partial(&[2, 2]);
                let r4i = -(h3 / (2.0 * h4)) * (niss + gamma * nis);
                r_n.push(r4i);
            }
        }

        // path (b): Einstein tensor of the canonical d-connection vs the
        // diagonal source [Y2, Y2, Y4, Y4]. The Ricci d-tensor is not
        // symmetric; the system annihilates the (h, v)-ordered mixed
        // components R_{ia} (the (v, h) order is generically nonzero on
        // this class and is reported by the curvature data, not asserted).
        {
            let jets = m.jets(p, 2).map_err(SolutionError::Field)?;
            let curv = connections::curvature_from_jets(&jets, ConnectionKind::CanonicalD)
                .map_err(SolutionError::Geom)?;
            let e = connections::einstein_mixed(&jets, &curv).map_err(SolutionError::Geom)?;
            let src = [y2v, y2v, y4v, y4v];
            for block in [[0usize, 1usize], [2, 3]] {
                for &a in &block {
                    for &b in &block {
                        let target = if a == b { src[a] } else { 0.0 };
                        r_einstein.push(e[a * 4 + b] - target);
                    }
                }
            }
            for i in 0..2 {
                for a in 2..4 {
                    r_einstein.push(curv.ricci_at(i, a));
                }
            }
        }
    }

    if h3s_zero_h4s_nonzero > pts.len() / 2 {
        return Err(SolutionError::AnsatzShape(
            "h4* = 0, h3* != 0 ansatz branch: this class needs a different method".into(),
        ));
    }

    Ok(ResidualReport {
        equations: vec![
            EquationResidual::from_samples("R11_h_equation", &r_h, tol),
            EquationResidual::from_samples("S33_v_equation", &r_v, tol),
            EquationResidual::from_samples("R3i_w_equation", &r_w, tol),
            EquationResidual::from_samples("R4i_n_equation", &r_n, tol),
            EquationResidual::from_samples("einstein_mixed", &r_einstein, tol),
        ],
        skipped_points: skipped,
        quadrature_tol: quad_tol,
    })
}

/// Constraints extracting Levi-Civita (vacuum Einstein) solutions from the
/// canonical-d-connection class: the w-compatibility PDE, n-curl, and the
/// w_i = -d_i(phi)/phi* consistency (evaluated in multiplied form).
pub fn check_levi_civita_conditions(
    m: &DMetric,
    grid: &Grid3,
    tol: f64,
) -> Result<ResidualReport, SolutionError> {
    let pts = grid.points();
    check_ansatz_shape(m, &pts)?;
    let mut r_w_pde = Vec::new();
    let mut r_n_curl = Vec::new();
    let mut r_w_phi = Vec::new();
    let mut skipped = 0usize;
    for p in &pts {
        let aj = ansatz_jets(m, p, 2)?;
        // n_k must not depend on v in this class
        for i in 0..2 {
            if aj.n[i].partial(&[2]).abs() > 1e-10 {
                return Err(SolutionError::AnsatzShape(
                    "n_k must be independent of v for the Levi-Civita class".into(),
                ));
            }
        }
        let w1 = aj.w[0].value();
        let w2 = aj.w[1].value();
        let w1p = aj.w[0].partial(&[1]);
        let w2b = aj.w[1].partial(&[0]);
        let w1s = aj.w[0].partial(&[2]);
        let w2s = aj.w[1].partial(&[2]);
        r_w_pde.push(w1p - w2b + w2 * w1s - w1 * w2s);
        r_n_curl.push(aj.n[0].partial(&[1]) - aj.n[1].partial(&[0]));

        let h3 = aj.h3.value();
        let h4 = aj.h4.value();
        let h3s = aj.h3.partial(&[2]);
        let h4s = aj.h4.partial(&[2]);
        let h4ss = aj.h4.partial(&[2, 2]);
        if h3.abs() < 1e-13 || h4.abs() < 1e-13 || h4s.abs() < 1e-12 {
            skipped += 1;
            continue;
        }
        let phi_star = h4ss / h4s - 0.5 * (h3s / h3) - 0.5 * (h4s / h4);
        for i in 0..2 {
            let dih4s = aj.h4.partial(&[i, 2]);
            let dih3 = aj.h3.partial(&[i]);
            let dih4 = aj.h4.partial(&[i]);
            let di_phi = dih4s / h4s - 0.5 * (dih3 / h3) - 0.5 * (dih4 / h4);
            // w_i = -d_i(phi)/phi*  <=>  w_i phi* + d_i(phi) = 0
            r_w_phi.push(aj.w[i].value() * phi_star + di_phi);
        }
    }
    Ok(ResidualReport {
        equations: vec![
            EquationResidual::from_samples("w_compat_pde", &r_w_pde, tol),
            EquationResidual::from_samples("n_curl", &r_n_curl, tol),
            EquationResidual::from_samples("w_phi_consistency", &r_w_phi, tol),
        ],
        skipped_points: skipped,
        quadrature_tol: 0.0,
    })
}

/// Vacuum Einstein residual of the Levi-Civita connection in the coordinate
/// frame (used for the extraction invariant).
pub fn levi_civita_vacuum_residual(m: &DMetric, pts: &[[f64; 4]]) -> Result<f64, SolutionError> {
    let mut worst = 0.0f64;
    for p in pts {
        let curv =
            connections::curvature(m, ConnectionKind::LeviCivita, p).map_err(SolutionError::Geom)?;
        worst = worst.max(curv.max_abs_ricci());
    }
    Ok(worst)
}
