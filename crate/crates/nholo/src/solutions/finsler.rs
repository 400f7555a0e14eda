//! Re-encoding of an off-diagonal solution in (pseudo) Finsler variables:
//! the two-step vielbein transform between the Finsler d-metric data and the
//! solution metric.

use crate::error::SolutionError;
use crate::field::ScalarField;
use crate::geometry::DMetric;

/// Fundamental Finsler data: Sasaki-form coefficients f_i, f_a and the
/// Cartan N-connection coefficients cN^a_i.
#[derive(Clone, Debug)]
pub struct FinslerData {
    pub f_i: [ScalarField; 2],
    pub f_a: [ScalarField; 2],
    /// c_n[a][i] = cN^{2+a}_i
    pub c_n: [[ScalarField; 2]; 2],
}

/// Pointwise vielbein set of the re-encoding (the + square-root branch).
#[derive(Clone, Debug)]
pub struct VielbeinSet {
    /// Intermediate blocks (g_1', g_2', h_3', h_4').
    pub g_prime: [f64; 2],
    pub h_prime: [f64; 2],
    /// Off-block components: e^{3'}_{1''} and e^{2'}_{4''}.
    pub e_v_h: f64,
    pub e_h_v: f64,
    /// Diagonal rescalings e^{alpha'}_alpha between the Finsler data and the
    /// intermediate blocks.
    pub diag: [f64; 4],
    /// Max-abs reassembly defect of the four block identities.
    pub reassembly_residual: f64,
}

/// Re-encode the solution metric at one point. The solution must be in the
/// diagonal-block ansatz (g_i, h_a, w_i, n_i).
pub fn finsler_reencode(
    m_solution: &DMetric,
    fd: &FinslerData,
    point: &[f64; 4],
    tol: f64,
) -> Result<VielbeinSet, SolutionError> {
    let ev = |f: &ScalarField| -> Result<f64, SolutionError> {
        f.eval(point).map_err(SolutionError::Field)
    };
    let g_ring = [ev(&m_solution.g[0][0])?, ev(&m_solution.g[1][1])?];
    let h_ring = [ev(&m_solution.h[0][0])?, ev(&m_solution.h[1][1])?];
    let w_ring = [
        ev(&m_solution.n_conn.coefficients[0][0])?,
        ev(&m_solution.n_conn.coefficients[0][1])?,
    ];
    let n_ring = [
        ev(&m_solution.n_conn.coefficients[1][0])?,
        ev(&m_solution.n_conn.coefficients[1][1])?,
    ];
    let f_i = [ev(&fd.f_i[0])?, ev(&fd.f_i[1])?];
    let f_a = [ev(&fd.f_a[0])?, ev(&fd.f_a[1])?];
    let cw = [ev(&fd.c_n[0][0])?, ev(&fd.c_n[0][1])?];
    let cn = [ev(&fd.c_n[1][0])?, ev(&fd.c_n[1][1])?];

    for (v, name) in [(cw[0], "cw1"), (cw[1], "cw2"), (cn[0], "cn1"), (cn[1], "cn2")] {
        if v.abs() < 1e-14 {
            return Err(SolutionError::Division(format!(
                "Cartan coefficient {name} vanishes"
            )));
        }
    }

    // step-3 compatibility: Theta_1' = Theta_2'
    let theta_i = |i: usize| (w_ring[i] / cw[i]).powi(2) * (n_ring[i] / cn[i]).powi(2);
    let (t1, t2) = (theta_i(0), theta_i(1));
    let defect = (t1 - t2).abs();
    if defect > tol * t1.abs().max(1.0) {
        return Err(SolutionError::Compatibility { defect, tol });
    }

    // intermediate blocks: h3' anchored by the reassembly zero pattern,
    // g_i' and h4' from the step-3 relations.
    let h3p = h_ring[0];
    let gp = [
        f_i[0] * (w_ring[0] / cw[0]).powi(2) * h3p / f_a[0],
        f_i[1] * (w_ring[1] / cw[1]).powi(2) * h3p / f_a[0],
    ];
    let h4p = gp[0] * f_a[1] / (f_i[0] * (n_ring[0] / cn[0]).powi(2));

    // off-block vielbeins of the zero pattern (+ branch)
    let rad1 = (g_ring[0] - gp[0]) / h3p;
    if rad1 < -1e-12 {
        return Err(SolutionError::RadicandSign(format!(
            "(g1 - g1')/h3' = {rad1:e}"
        )));
    }
    let e_v_h = rad1.max(0.0).sqrt();
    let rad2 = (h_ring[1] - h4p) / gp[1];
    if rad2 < -1e-12 {
        return Err(SolutionError::RadicandSign(format!(
            "(h4 - h4')/g2' = {rad2:e}"
        )));
    }
    let e_h_v = rad2.max(0.0).sqrt();

    // diagonal rescalings e^{alpha'}_alpha = sqrt|f_alpha / (g', h')|
    let diag = [
        (f_i[0] / gp[0]).abs().sqrt(),
        (f_i[1] / gp[1]).abs().sqrt(),
        (f_a[0] / h3p).abs().sqrt(),
        (f_a[1] / h4p).abs().sqrt(),
    ];

    // reassembly verification
    let mut resid = 0.0f64;
    resid = resid.max((g_ring[0] - (gp[0] + h3p * e_v_h * e_v_h)).abs());
    resid = resid.max((g_ring[1] - gp[1]).abs());
    resid = resid.max((h_ring[0] - h3p).abs());
    resid = resid.max((h_ring[1] - (gp[1] * e_h_v * e_h_v + h4p)).abs());

    Ok(VielbeinSet {
        g_prime: gp,
        h_prime: [h3p, h4p],
        e_v_h,
        e_h_v,
        diag,
        reassembly_residual: resid,
    })
}
