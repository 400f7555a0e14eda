//! Named metric families: Schwarzschild prime data, theta^2-polarized
//! corrections, the incomplete-Gamma noncommutative metric, rotoid
//! deformations and solitonic distributions.

use std::sync::Arc;

use crate::error::{FieldError, SolutionError};
use crate::field::{Chart, Domain, ScalarField};
use crate::geometry::{DMetric, NConnection};
use crate::jet::Jet;
use crate::quadrature;
use crate::report::{EquationResidual, ResidualReport};

use super::residual::Grid3;

pub const HORIZON_MARGIN: f64 = 0.05;

fn schw_chart() -> Chart {
    // (x1 = r or xi, x2 = theta angle, y3 = phi, y4 = t), signature (-,-,-,+)
    Chart::new(2, 2, &["x1", "x2", "y3", "y4"], &[-1.0, -1.0, -1.0, 1.0]).unwrap()
}

/// Prime Schwarzschild data |g1 = -(1 - a/r)^{-1}, |g2 = -r^2,
/// |h3 = -r^2 sin^2(theta), |h4 = 1 - a/r, with N = 0.
///
/// With `use_xi_coordinate`, x1 is the tortoise-like coordinate
/// xi(r) = int |1 - 2 mu0/r + theta/r^2|^{1/2} dr and the coefficient set is
/// (-1, -r^2(xi), -r^2(xi) sin^2, varpi^2(xi)).
pub fn schwarzschild_prime(
    alpha: f64,
    use_xi_coordinate: bool,
    theta: f64,
) -> Result<DMetric, SolutionError> {
    if alpha <= 0.0 {
        return Err(SolutionError::Horizon("alpha must be positive".into()));
    }
    let chart = schw_chart();
    let mu0 = alpha / 2.0;
    let disc = mu0 * mu0 - theta;
    let r_h = if disc >= 0.0 { mu0 + disc.sqrt() } else { 0.0 };
    let r_min = (r_h * (1.0 + HORIZON_MARGIN)).max(1e-6);
    let domain = Domain {
        lo: vec![if use_xi_coordinate { f64::NEG_INFINITY } else { r_min }, 1e-6, f64::NEG_INFINITY, f64::NEG_INFINITY],
        hi: vec![f64::INFINITY, std::f64::consts::PI - 1e-6, f64::INFINITY, f64::INFINITY],
        excluded: Vec::new(),
    };
    let z = ScalarField::zero(4);
    let diag: Vec<ScalarField> = if !use_xi_coordinate {
        vec![
            ScalarField::from_expr(&format!("-1/(1 - {alpha}/x1)"), &chart)?,
            ScalarField::from_expr("-x1^2", &chart)?,
            ScalarField::from_expr("-x1^2*sin(x2)^2", &chart)?,
            ScalarField::from_expr(&format!("1 - {alpha}/x1"), &chart)?,
        ]
    } else {
        let r_of_xi = RadialMap::new(mu0, theta, r_min);
        let r_field = r_of_xi.clone().field();
        let w2 = move |r: &Jet| {
            // varpi^2(r) = 1 - 2 mu0 / r + theta / r^2
            let inv = r.recip();
            Jet::constant(r.dim(), r.order(), 1.0)
                .sub(&inv.scale(2.0 * mu0))
                .add(&inv.mul(&inv).scale(theta))
        };
        let g2 = r_field.map_jet(0, |r| r.mul(&r).neg());
        let h3 = {
            let rf = r_field.clone();
            ScalarField::from_fn(4, 3, move |p, k| {
                let r = rf.eval_jet(p, k)?.jet().clone();
                let s = Jet::variable(4, k, 1, p[1]).sin();
                Ok(r.mul(&r).mul(&s).mul(&s).neg())
            })
        };
        let h4 = {
            let rf = r_field.clone();
            let w2c = w2.clone();
            ScalarField::from_fn(4, 3, move |p, k| {
                let r = rf.eval_jet(p, k)?.jet().clone();
                Ok(w2c(&r))
            })
        };
        let _ = z;
        vec![ScalarField::constant(4, -1.0), g2, h3, h4]
    };
    let diag: Vec<ScalarField> = diag
        .into_iter()
        .map(|f| f.with_domain(domain.clone()))
        .collect();
    Ok(DMetric::diagonal(&chart, diag))
}

/// xi(r) quadrature and its jet-exact inverse r(xi).
#[derive(Clone)]
pub struct RadialMap {
    mu0: f64,
    theta: f64,
    r_base: f64,
}

impl RadialMap {
    pub fn new(mu0: f64, theta: f64, r_base: f64) -> Arc<RadialMap> {
        Arc::new(RadialMap {
            mu0,
            theta,
            r_base,
        })
    }

    fn w(&self, r: f64) -> f64 {
        let mut v = 1.0;
        if self.mu0 != 0.0 {
            v -= 2.0 * self.mu0 / r;
        }
        if self.theta != 0.0 {
            v += self.theta / (r * r);
        }
        v.abs().sqrt()
    }

    /// xi(r) = int_{r_base}^{r} dr' / |varpi(r')|, so that -d xi (x) d xi
    /// carries the full radial block of the prime metric.
    pub fn xi_of_r(&self, r: f64) -> Result<f64, FieldError> {
        quadrature::integrate(
            |t| Ok(1.0 / self.w(t)),
            self.r_base,
            r,
            1e-12,
            quadrature::DEFAULT_NODE_BUDGET,
        )
    }

    pub fn r_of_xi(&self, xi: f64) -> Result<f64, FieldError> {
        // monotone map: Newton with bisection fallback
        let mut lo = self.r_base;
        let mut hi = (self.r_base + xi.abs() + 1.0) * 2.0;
        while self.xi_of_r(hi)? < xi {
            hi *= 2.0;
            if hi > 1e12 {
                return Err(FieldError::Quadrature("r(xi) bracket failed".into()));
            }
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if self.xi_of_r(mid)? < xi {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo < 1e-14 * (1.0 + hi.abs()) {
                break;
            }
        }
        Ok(0.5 * (lo + hi))
    }

    /// r as a field of the chart coordinate x1 = xi (jet-exact inverse by
    /// Newton iteration in the jet ring).
    pub fn field(self: Arc<Self>) -> ScalarField {
        let me = self;
        ScalarField::from_fn(4, 3, move |p, k| {
            let xi = p[0];
            let r0 = me.r_of_xi(xi)?;
            let xi_jet = Jet::variable(4, k, 0, xi);
            // Newton in the jet ring on G(R) = Xi(R) - xi_jet, with
            // Xi expanded around r0: Xi(r0) = xi (by construction) and
            // Xi' = 1/w, so the Newton step divides by 1/w, i.e.
            // multiplies by w.
            let mut r_jet = Jet::constant(4, k, r0);
            for _ in 0..k.max(1) {
                let xi_of_r = me.xi_taylor(r0, xi, &r_jet, k)?;
                let res = xi_of_r.sub(&xi_jet);
                let wj = me.w_jet(&r_jet);
                r_jet = r_jet.sub(&res.mul(&wj));
            }
            Ok(r_jet)
        })
    }

    fn w_jet(&self, r: &Jet) -> Jet {
        let inv = r.recip();
        let w2 = Jet::constant(r.dim(), r.order(), 1.0)
            .sub(&inv.scale(2.0 * self.mu0))
            .add(&inv.mul(&inv).scale(self.theta));
        w2.abs().sqrt()
    }

    fn xi_taylor(&self, r0: f64, xi0: f64, r_jet: &Jet, order: usize) -> Result<Jet, FieldError> {
        // Xi(R) as a univariate Taylor series around r0 composed with R-jet.
        // derivatives of Xi at r0: Xi' = 1/w, Xi'' = (1/w)', ... from the
        // analytic 1/w(r) jet in a 1-d dummy variable.
        let rvar = Jet::variable(1, order.min(3), 0, r0);
        let wj = self.w_jet(&rvar).recip();
        let mut outer = [0.0; 5];
        outer[0] = xi0;
        for kk in 1..=order {
            // Xi^{(kk)} = (1/w)^{(kk-1)}
            let mut idx = [0u8; crate::jet::MAX_DIM];
            idx[0] = (kk - 1) as u8;
            outer[kk] = wj.partial(&idx);
        }
        Ok(r_jet.compose(&outer[..=order]))
    }
}

/// theta^2-polarized Schwarzschild deformation (closed-form corrections).
/// For theta = 0 the prime data is returned unchanged.
pub fn nc_polarize_schwarzschild(alpha: f64, theta: f64) -> Result<DMetric, SolutionError> {
    if theta == 0.0 {
        return schwarzschild_prime(alpha, false, 0.0);
    }
    let chart = schw_chart();
    let a = alpha;
    let t2 = theta * theta;
    let r_min = a * (1.0 + HORIZON_MARGIN);
    let domain = Domain {
        lo: vec![r_min, 1e-6, f64::NEG_INFINITY, f64::NEG_INFINITY],
        hi: vec![
            f64::INFINITY,
            std::f64::consts::PI - 1e-6,
            f64::INFINITY,
            f64::INFINITY,
        ],
        excluded: Vec::new(),
    };
    let expr = |s: &str| -> Result<ScalarField, SolutionError> {
        Ok(ScalarField::from_expr(s, &chart)?.with_domain(domain.clone()))
    };
    let diag = vec![
        expr(&format!(
            "-1/(1 - {a}/x1) + ({t2})*(-({a})*(4*x1 - 3*{a})/(16*x1^2*(x1 - {a})^2))"
        ))?,
        expr(&format!(
            "-x1^2 + ({t2})*(-(2*x1^2 - 17*{a}*(x1 - {a}))/(32*x1*(x1 - {a})))"
        ))?,
        expr(&format!(
            "-x1^2*sin(x2)^2 + ({t2})*(-((x1^2 + {a}*x1 - {a}^2)*cos(x2) - {a}*(2*x1 - {a}))/(16*x1*(x1 - {a})))"
        ))?,
        expr(&format!(
            "1 - {a}/x1 + ({t2})*(-({a})*(8*x1 - 11*{a})/(16*x1^4))"
        ))?,
    ];
    Ok(DMetric::diagonal(&chart, diag))
}

/// The closed-form theta^2 correction coefficients (for golden tests).
pub fn defaux_corrections(alpha: f64, r: f64, theta_angle: f64) -> [f64; 4] {
    let a = alpha;
    [
        -(a * (4.0 * r - 3.0 * a)) / (16.0 * r * r * (r - a) * (r - a)),
        -(2.0 * r * r - 17.0 * a * (r - a)) / (32.0 * r * (r - a)),
        -((r * r + a * r - a * a) * theta_angle.cos() - a * (2.0 * r - a)) / (16.0 * r * (r - a)),
        -(a * (8.0 * r - 11.0 * a)) / (16.0 * r.powi(4)),
    ]
}

/// Diagonal effective source of the Gamma-function metric: a
/// self-gravitating anisotropic fluid with smeared-mass density rho_theta.
#[derive(Clone, Debug)]
pub struct NcSource {
    pub rho: ScalarField,
    pub p_radial: ScalarField,
    pub p_perp: ScalarField,
}

/// Noncommutative Schwarzschild with the lower incomplete Gamma profile:
/// h4 = 1 - (4 mu0 / (sqrt(pi) r)) gamma(3/2, r^2 / 4 theta), g1 = -1/h4.
pub fn nc_schwarzschild_gamma(mu0: f64, theta: f64) -> Result<(DMetric, NcSource), SolutionError> {
    if theta <= 0.0 {
        return Err(SolutionError::Horizon("theta must be positive".into()));
    }
    let chart = schw_chart();
    // locate the noncommutative horizon (largest root of h4 = 0), if any
    let h4_scalar = |r: f64| -> Result<f64, FieldError> {
        let g = quadrature::lower_incomplete_gamma_3_2(r * r / (4.0 * theta))?;
        Ok(1.0 - 4.0 * mu0 / (std::f64::consts::PI.sqrt() * r) * g)
    };
    let mut r_h = 0.0;
    {
        let mut lo = 1e-6;
        let mut hi = 2.0 * mu0 + 10.0 * theta.sqrt();
        if h4_scalar(hi).map_err(SolutionError::Field)? < 0.0 {
            return Err(SolutionError::Horizon("no exterior region found".into()));
        }
        // scan for a sign change
        let mut found = false;
        let steps = 400;
        let mut prev = h4_scalar(lo).map_err(SolutionError::Field)?;
        for k in 1..=steps {
            let r = lo + (hi - lo) * k as f64 / steps as f64;
            let v = h4_scalar(r).map_err(SolutionError::Field)?;
            if prev < 0.0 && v >= 0.0 {
                found = true;
                lo = r - (hi - lo) / steps as f64;
                hi = r;
                break;
            }
            prev = v;
        }
        if found {
            for _ in 0..100 {
                let mid = 0.5 * (lo + hi);
                if h4_scalar(mid).map_err(SolutionError::Field)? < 0.0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            r_h = 0.5 * (lo + hi);
        }
    }
    let r_min = if r_h > 0.0 {
        r_h * (1.0 + HORIZON_MARGIN)
    } else {
        1e-6
    };
    let domain = Domain {
        lo: vec![r_min, 1e-6, f64::NEG_INFINITY, f64::NEG_INFINITY],
        hi: vec![
            f64::INFINITY,
            std::f64::consts::PI - 1e-6,
            f64::INFINITY,
            f64::INFINITY,
        ],
        excluded: Vec::new(),
    };

    let h4 = ScalarField::from_fn(4, 3, move |p, k| {
        let r = Jet::variable(4, k, 0, p[0]);
        // x = r^2 / 4 theta, gamma(3/2, x) via composition with the analytic
        // integrand derivatives  d gamma / dx = sqrt(x) e^{-x}
        let x = r.mul(&r).scale(1.0 / (4.0 * theta));
        let x0 = x.value();
        let g0 = quadrature::lower_incomplete_gamma_3_2(x0)?;
        let mut outer = [0.0; 5];
        outer[0] = g0;
        if k >= 1 {
            let xv = Jet::variable(1, k - 1, 0, x0);
            let integrand = xv.sqrt().mul(&xv.neg().exp());
            for kk in 1..=k {
                let mut idx = [0u8; crate::jet::MAX_DIM];
                idx[0] = (kk - 1) as u8;
                outer[kk] = integrand.partial(&idx);
            }
        }
        let gamma_jet = x.compose(&outer[..=k]);
        let pref = r.recip().scale(-4.0 * mu0 / std::f64::consts::PI.sqrt());
        Ok(Jet::constant(4, k, 1.0).add(&pref.mul(&gamma_jet)))
    })
    .with_domain(domain.clone());
    let g1 = h4.map_jet(0, |j| j.recip().neg());
    let g2 = ScalarField::from_expr("-x1^2", &chart)?.with_domain(domain.clone());
    let h3 = ScalarField::from_expr("-x1^2*sin(x2)^2", &chart)?.with_domain(domain.clone());
    let metric = DMetric::diagonal(&chart, vec![g1, g2, h3, h4]);

    // rho_theta = mu0 (4 pi theta)^{-3/2} e^{-r^2/4 theta}
    let norm = mu0 * (4.0 * std::f64::consts::PI * theta).powf(-1.5);
    let rho = ScalarField::from_expr(&format!("{norm}*exp(-x1^2/(4*{theta}))"), &chart)?;
    let p_radial = rho.scale(-1.0);
    let drho = rho.derivative(0);
    let half_r = ScalarField::from_expr("x1/2", &chart)?;
    let p_perp = rho.scale(-1.0).sub(&half_r.mul(&drho));
    Ok((
        metric,
        NcSource {
            rho,
            p_radial,
            p_perp,
        },
    ))
}

/// Rotoid parameters: q = 1 - 2 mu(x1, x2, v)/x1 with
/// mu = mu0 + thetabar*mu1, s = (q0(x1)/4 mu^2) sin(omega0 v + phi0).
#[derive(Clone, Debug)]
pub struct RotoidParams {
    pub mu0: f64,
    pub thetabar: f64,
    pub omega0: f64,
    pub phi0: f64,
    pub q0: ScalarField,
    pub mu1: ScalarField,
}

impl RotoidParams {
    fn mu(&self) -> ScalarField {
        self.mu1.scale(self.thetabar).add_const(self.mu0)
    }

    fn q(&self) -> ScalarField {
        // q = 1 - 2 mu / x1
        let chart = schw_chart();
        let inv_r = ScalarField::from_expr("1/x1", &chart).unwrap();
        self.mu().mul(&inv_r).scale(-2.0).add_const(1.0)
    }

    fn s(&self) -> ScalarField {
        let chart = schw_chart();
        let osc =
            ScalarField::from_expr(&format!("sin({}*y3 + {})", self.omega0, self.phi0), &chart)
                .unwrap();
        let mu = self.mu();
        self.q0.mul(&osc).div(&mu.mul(&mu).scale(4.0))
    }
}

/// Stationary rotoid d-metric (x1 = radial, x2 = angle, v = y3 = azimuth,
/// y4 = t): h4 = q + thetabar*s, h3 = -4[(sqrt|q|)*]^2 [1 + thetabar
/// ((s/sqrt|q|)*)/(sqrt|q|)*]. When thetabar = 0 the undeformed pair
/// (q, -4[(sqrt q)*]^2) is built without any thetabar terms.
pub fn rotoid_metric(
    params: &RotoidParams,
    psi: &ScalarField,
    w: [ScalarField; 2],
    n: [ScalarField; 2],
    check_points: &[[f64; 4]],
) -> Result<DMetric, SolutionError> {
    let chart = schw_chart();
    if params.thetabar < 0.0 || params.thetabar > 0.1 {
        return Err(SolutionError::Branch(
            "thetabar must lie in [0, 0.1]".into(),
        ));
    }
    let q = params.q();
    for p in check_points {
        let qv = q.eval(p).map_err(SolutionError::Field)?;
        if qv <= 0.0 {
            return Err(SolutionError::Branch(format!("q changes sign at {p:?}")));
        }
    }
    let sqrt_q = q.map_jet(0, |j| j.abs().sqrt());
    let b_star = sqrt_q.derivative(2);
    let h4;
    let h3;
    if params.thetabar == 0.0 {
        h4 = q.clone();
        h3 = b_star.mul(&b_star).scale(-4.0);
    } else {
        let s = params.s();
        h4 = q.add(&s.scale(params.thetabar));
        let corr = s.div(&sqrt_q).derivative(2).div(&b_star);
        h3 = b_star
            .mul(&b_star)
            .mul(&corr.scale(params.thetabar).add_const(1.0))
            .scale(-4.0);
    }
    let e_psi_neg = psi.map_jet(0, |j| j.exp().neg());
    let z = ScalarField::zero(4);
    let g = vec![
        vec![e_psi_neg.clone(), z.clone()],
        vec![z.clone(), e_psi_neg],
    ];
    let h = vec![vec![h3, z.clone()], vec![z.clone(), h4]];
    let n_conn = NConnection::new(
        chart.clone(),
        vec![vec![w[0].clone(), w[1].clone()], vec![n[0].clone(), n[1].clone()]],
    )
    .map_err(SolutionError::Geom)?;
    DMetric::new(chart, g, h, n_conn).map_err(SolutionError::Geom)
}

/// Horizon locus of the rotoid: the radial root of h4(r, phi) = 0 at fixed
/// angle coordinates, by bisection.
pub fn rotoid_horizon_root(params: &RotoidParams, x2: f64, phi: f64) -> Result<f64, SolutionError> {
    let q = params.q();
    let h4 = if params.thetabar == 0.0 {
        q
    } else {
        q.add(&params.s().scale(params.thetabar))
    };
    let eval = |r: f64| h4.eval(&[r, x2, phi, 0.0]).map_err(SolutionError::Field);
    let mut lo = 1e-3 * params.mu0;
    let mut hi = 10.0 * params.mu0;
    if eval(lo)? >= 0.0 || eval(hi)? <= 0.0 {
        return Err(SolutionError::Horizon("no bracketing interval".into()));
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if eval(mid)? < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Static 3-d solitonic distribution eta(x1, x2, v) with the defining
/// equation  eta_11 + eps (eta_2 + 6 eta eta_v + eta_vvv)_v = 0.
#[derive(Clone, Debug)]
pub struct SolitonField {
    pub eta: ScalarField,
    pub epsilon_sign: f64,
}

/// Pointwise residual of the solitonic equation over a grid.
pub fn soliton_residual(s: &SolitonField, grid: &Grid3, tol: f64) -> Result<ResidualReport, SolutionError> {
    let mut res = Vec::new();
    for p in grid.points() {
        let j = s.eta.eval_jet(&p, 4).map_err(SolutionError::Field)?;
        let eta_11 = j.partial(&[0, 0]);
        let eta_2v = j.partial(&[1, 2]);
        let eta_v = j.partial(&[2]);
        let eta_vv = j.partial(&[2, 2]);
        let eta_vvvv = j.partial(&[2, 2, 2, 2]);
        let inner_v = eta_2v + 6.0 * (eta_v * eta_v + j.value() * eta_vv) + eta_vvvv;
        res.push(eta_11 + s.epsilon_sign * inner_v);
    }
    Ok(ResidualReport {
        equations: vec![EquationResidual::from_samples("soliton_eq", &res, tol)],
        skipped_points: 0,
        quadrature_tol: 0.0,
    })
}
