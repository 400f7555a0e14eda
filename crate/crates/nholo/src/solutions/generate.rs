//! Exact off-diagonal solution assembly from generating data.

use crate::error::{FieldError, SolutionError};
use crate::field::{Chart, ScalarField};
use crate::geometry::{DMetric, NConnection};
use crate::quadrature;

/// Inputs of the anholonomic deformation generator on the 2+2 chart
/// (x1, x2, v = y3, y4). The sources Y2, Y4 are `None` for vacuum.
#[derive(Clone, Debug)]
pub struct GeneratingData {
    pub psi: ScalarField,
    pub f: ScalarField,
    pub f0: ScalarField,
    pub h0: ScalarField,
    pub sigma0: ScalarField,
    pub n1k: [ScalarField; 2],
    pub n2k: [ScalarField; 2],
    pub y2: Option<ScalarField>,
    pub y4: Option<ScalarField>,
    pub eps: [f64; 4],
    pub theta: f64,
    /// Quadrature base point v0 (domain lower edge of the v axis).
    pub v0: f64,
    /// Optional w_i override, admissible only when Y2 is absent.
    pub w_override: Option<[ScalarField; 2]>,
}

#[derive(Clone, Copy, Debug)]
pub struct GenerateOptions {
    pub quad_tol: f64,
    pub psi_tol: f64,
}

impl Default for GenerateOptions {
    fn default() -> Self {
        GenerateOptions {
            quad_tol: quadrature::DEFAULT_TOL,
            psi_tol: 1e-8,
        }
    }
}

impl GeneratingData {
    pub fn chart(&self) -> Chart {
        Chart::standard_2_2(self.eps)
    }

    /// Vacuum data with trivial psi and integration functions.
    pub fn vacuum(f: ScalarField, f0: ScalarField, h0: ScalarField, eps: [f64; 4], v0: f64) -> Self {
        let z = ScalarField::zero(4);
        GeneratingData {
            psi: z.clone(),
            f,
            f0,
            h0,
            sigma0: ScalarField::constant(4, 1.0),
            n1k: [z.clone(), z.clone()],
            n2k: [z.clone(), z.clone()],
            y2: None,
            y4: None,
            eps,
            theta: 0.0,
            v0,
            w_override: None,
        }
    }
}

/// The conformal-factor profile of the v-metric: the exact solution of the
/// second decoupled equation. Returns 1 identically when Y2 is absent.
///
/// 1/sigma(x, v) = 1/sigma0(x) + 2 eps3 h0^2(x) int_{v0}^{v} Y2 f* (f - f0) dv'
pub fn sigma_profile(gen: &GeneratingData, quad_tol: f64) -> ScalarField {
    match &gen.y2 {
        None => ScalarField::constant(4, 1.0),
        Some(y2) => {
            let fstar = gen.f.derivative(2);
            let integrand = y2.mul(&fstar).mul(&gen.f.sub(&gen.f0));
            let integral = ScalarField::integral(integrand, 2, gen.v0, quad_tol);
            let h0sq = gen.h0.mul(&gen.h0);
            let denom = gen
                .sigma0
                .map_jet(0, |j| j.recip())
                .add(&integral.mul(&h0sq).scale(2.0 * gen.eps[2]));
            denom.map_jet(0, |j| j.recip())
        }
    }
}

/// Assembled solution together with the profile fields that built it.
#[derive(Clone, Debug)]
pub struct GeneratedSolution {
    pub metric: DMetric,
    pub sigma: ScalarField,
    pub h3: ScalarField,
    pub h4: ScalarField,
    pub w: [ScalarField; 2],
    pub n: [ScalarField; 2],
}

/// Assemble the exact off-diagonal metric of the generating data and verify
/// the generator preconditions on the given sample points.
pub fn generate_metric(
    gen: &GeneratingData,
    check_points: &[[f64; 4]],
    opts: GenerateOptions,
) -> Result<GeneratedSolution, SolutionError> {
    let chart = gen.chart();
    let eps = gen.eps;
    let fstar = gen.f.derivative(2);
    let fdiff = gen.f.sub(&gen.f0);

    // precondition sweep: |f*| > 0 and f != f0, including the quadrature
    // base line v = v0 (the n-integrand is singular where f = f0)
    let needs_n_integral = !(gen.n2k[0].is_const_zero() && gen.n2k[1].is_const_zero());
    for p in check_points {
        let fs = fstar.eval(p).map_err(SolutionError::Field)?;
        if fs.abs() < 1e-12 {
            return Err(SolutionError::GeneratorDegeneracy(format!(
                "f* vanishes at {p:?}"
            )));
        }
        let fd = fdiff.eval(p).map_err(SolutionError::Field)?;
        if fd.abs() < 1e-12 {
            return Err(SolutionError::GeneratorDegeneracy(format!(
                "f = f0 at {p:?}"
            )));
        }
        if needs_n_integral {
            let base = [p[0], p[1], gen.v0, p[3]];
            let fd0 = fdiff.eval(&base).map_err(SolutionError::Field)?;
            if fd0.abs() < 1e-6 {
                return Err(SolutionError::GeneratorDegeneracy(format!(
                    "f = f0 on the quadrature base line at {base:?}"
                )));
            }
        }
    }

    // psi verification against the first decoupled equation:
    // eps1 psi_11 + eps2 psi_22 = 2 e^psi Y4  (the RHS is zero for vacuum).
    let mut worst = 0.0f64;
    for p in check_points {
        let pj = gen.psi.eval_jet(p, 2).map_err(SolutionError::Field)?;
        let mut r = eps[0] * pj.partial(&[0, 0]) + eps[1] * pj.partial(&[1, 1]);
        if let Some(y4) = &gen.y4 {
            r -= 2.0 * pj.value().exp() * y4.eval(p).map_err(SolutionError::Field)?;
        }
        worst = worst.max(r.abs());
    }
    if worst > opts.psi_tol {
        return Err(SolutionError::PsiResidual {
            max: worst,
            tol: opts.psi_tol,
        });
    }

    let sigma = sigma_profile(gen, opts.quad_tol);

    // |sigma| must be single-signed on the domain
    let mut sign = 0.0;
    for p in check_points {
        let s = sigma.eval(p).map_err(SolutionError::Field)?;
        if s == 0.0 {
            return Err(SolutionError::Branch("sigma vanishes".into()));
        }
        if sign == 0.0 {
            sign = s.signum();
        } else if sign != s.signum() {
            return Err(SolutionError::Branch("sigma".into()));
        }
    }
    if sign == 0.0 {
        sign = 1.0;
    }
    let sigma_abs = if sign >= 0.0 {
        sigma.clone()
    } else {
        sigma.scale(-1.0)
    };

    // metric blocks
    let e_psi = gen.psi.map_jet(0, |j| j.exp());
    let g1 = e_psi.scale(eps[0]);
    let g2 = e_psi.scale(eps[1]);
    let h0sq = gen.h0.mul(&gen.h0);
    let h3 = h0sq.mul(&fstar.mul(&fstar)).mul(&sigma_abs).scale(eps[2]);
    let h4 = fdiff.mul(&fdiff).scale(eps[3]);

    // N-connection coefficients
    let w: [ScalarField; 2] = match (&gen.y2, &gen.w_override) {
        (None, Some(ws)) => ws.clone(),
        (None, None) => [ScalarField::zero(4), ScalarField::zero(4)],
        (Some(_), _) => {
            // w_k = -d_k(phi)/phi* with phi = ln|h4*/sqrt|h3 h4||
            //     = -d_k(sigma)/sigma* - 2 sigma d_k(h0)/(h0 sigma*)
            let sig_star = sigma.derivative(2);
            for p in check_points {
                let sv = sig_star.eval(p).map_err(SolutionError::Field)?;
                if sv.abs() < 1e-14 {
                    return Err(SolutionError::Division("sigma*".into()));
                }
            }
            let mk = |k: usize| -> ScalarField {
                let dk_sigma = sigma.derivative(k);
                let dk_h0 = gen.h0.derivative(k);
                let t1 = dk_sigma.div(&sig_star).scale(-1.0);
                let t2 = sigma.mul(&dk_h0).div(&gen.h0.mul(&sig_star)).scale(-2.0);
                t1.add(&t2)
            };
            [mk(0), mk(1)]
        }
    };

    // n_k = 1n_k + 2n_k int (f*)^2 sigma / (f - f0)^3 dv
    // (the integrand is singular where f = f0; the base point v0 must stay
    // away from such loci, which the precondition sweep enforces)
    let n: [ScalarField; 2] = if gen.n2k[0].is_const_zero() && gen.n2k[1].is_const_zero() {
        [gen.n1k[0].clone(), gen.n1k[1].clone()]
    } else {
        let n_integrand = fstar
            .mul(&fstar)
            .mul(&sigma)
            .div(&fdiff.mul(&fdiff).mul(&fdiff));
        let n_int = ScalarField::integral(n_integrand, 2, gen.v0, opts.quad_tol);
        [
            gen.n1k[0].add(&gen.n2k[0].mul(&n_int)),
            gen.n1k[1].add(&gen.n2k[1].mul(&n_int)),
        ]
    };

    let z = ScalarField::zero(4);
    let g = vec![vec![g1, z.clone()], vec![z.clone(), g2]];
    let h = vec![vec![h3.clone(), z.clone()], vec![z.clone(), h4.clone()]];
    let n_conn = NConnection::new(
        chart.clone(),
        vec![
            vec![w[0].clone(), w[1].clone()],
            vec![n[0].clone(), n[1].clone()],
        ],
    )
    .map_err(SolutionError::Geom)?;
    let metric = DMetric::new(chart, g, h, n_conn).map_err(SolutionError::Geom)?;
    Ok(GeneratedSolution {
        metric,
        sigma,
        h3,
        h4,
        w,
        n,
    })
}

/// Harmonic psi candidates for the vacuum case.
pub fn harmonic_psi(kind: usize, amplitude: f64) -> Result<ScalarField, FieldError> {
    let chart = Chart::euclidean_2_2();
    match kind {
        0 => ScalarField::from_expr(&format!("{amplitude}*(x1^2 - x2^2)"), &chart),
        1 => ScalarField::from_expr(&format!("{amplitude}*x1*x2"), &chart),
        2 => ScalarField::from_expr(&format!("{amplitude}*exp(x1)*cos(x2)"), &chart),
        _ => ScalarField::from_expr(&format!("{amplitude}*sin(x1)*sinh(x2)"), &chart),
    }
}
