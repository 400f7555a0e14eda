//! Effective Lagrange models: Hessian v-metric, canonical semispray and
//! N-connection, nonlinear geodesics vs Euler-Lagrange, almost
//! complex/symplectic structures, the normal d-connection and the
//! Chern-Weyl form.

use crate::connections::{self, ConnectionKind, CurvatureData};
use crate::error::LagrangeError;
use crate::field::{Chart, ScalarField};
use crate::geometry::{DMetric, DMetricJets, NConnection};
use crate::jet::Jet;
use crate::linalg;

/// Regular effective Lagrangian L(x, y) on an n+n chart.
#[derive(Clone, Debug)]
pub struct LagrangianModel {
    pub chart: Chart,
    pub l: ScalarField,
}

impl LagrangianModel {
    pub fn new(chart: Chart, l: ScalarField) -> LagrangianModel {
        assert_eq!(chart.dim_h, chart.dim_v, "Lagrange models need an n+n split");
        LagrangianModel { chart, l }
    }

    pub fn n(&self) -> usize {
        self.chart.dim_h
    }

    fn l_jet(&self, point: &[f64], order: usize) -> Result<Jet, LagrangeError> {
        Ok(self.l.eval_jet(point, order)?.jet().clone())
    }

    /// Hessian jets hcheck_{ab} = 1/2 d^2 L / dy^a dy^b at `order`
    /// (consumes L-jets of order + 2).
    fn hessian_jets(&self, point: &[f64], order: usize) -> Result<Vec<Vec<Jet>>, LagrangeError> {
        let n = self.n();
        let lj = self.l_jet(point, order + 2)?;
        let mut h = vec![vec![Jet::constant(2 * n, order, 0.0); n]; n];
        for a in 0..n {
            for b in a..n {
                let jab = lj.derive(n + a).derive(n + b).scale(0.5);
                h[a][b] = jab.clone();
                h[b][a] = jab;
            }
        }
        Ok(h)
    }

    /// Semispray jets G^a at `order` (consumes L-jets of order + 2).
    fn semispray_jets(&self, point: &[f64], order: usize) -> Result<Vec<Jet>, LagrangeError> {
        let n = self.n();
        let h = self.hessian_jets(point, order)?;
        let det = linalg::det(
            &h.iter()
                .map(|r| r.iter().map(|j| j.value()).collect::<Vec<_>>())
                .collect::<Vec<_>>(),
        );
        if det.abs() < 1e-12 {
            return Err(LagrangeError::DegenerateHessian {
                point: point.to_vec(),
                det,
            });
        }
        let hinv = linalg::inverse_jet(&h).ok_or(LagrangeError::DegenerateHessian {
            point: point.to_vec(),
            det,
        })?;
        let lj = self.l_jet(point, order + 2)?;
        // rhs_i = d^2 L / dy^{n+i} dx^k * y^{n+k} - dL/dx^i
        let mut rhs = Vec::with_capacity(n);
        for i in 0..n {
            let mut acc = lj.derive(i).neg().truncate(order);
            for k in 0..n {
                let yk = Jet::variable(2 * n, order, n + k, point[n + k]);
                acc = acc.add(&lj.derive(n + i).derive(k).truncate(order).mul(&yk));
            }
            rhs.push(acc);
        }
        // 2 G^a = 1/2 hinv^{a i} rhs_i
        let mut g = Vec::with_capacity(n);
        for a in 0..n {
            let mut acc = Jet::constant(2 * n, order, 0.0);
            for i in 0..n {
                acc = acc.add(&hinv[a][i].truncate(order).mul(&rhs[i]));
            }
            g.push(acc.scale(0.25));
        }
        Ok(g)
    }
}

/// Hessian v-metric at a point.
pub fn hessian_metric(model: &LagrangianModel, point: &[f64]) -> Result<Vec<Vec<f64>>, LagrangeError> {
    let h = model.hessian_jets(point, 0)?;
    let vals: Vec<Vec<f64>> = h
        .iter()
        .map(|r| r.iter().map(|j| j.value()).collect())
        .collect();
    let det = linalg::det(&vals);
    if det.abs() < 1e-12 {
        return Err(LagrangeError::DegenerateHessian {
            point: point.to_vec(),
            det,
        });
    }
    Ok(vals)
}

/// Canonical semispray coefficients G^a at a point.
pub fn semispray(model: &LagrangianModel, point: &[f64]) -> Result<Vec<f64>, LagrangeError> {
    Ok(model
        .semispray_jets(point, 0)?
        .iter()
        .map(|j| j.value())
        .collect())
}

/// Canonical N-connection coefficients Ncheck^a_i = dG^a / dy^{n+i}.
pub fn canonical_nconnection(
    model: &LagrangianModel,
    point: &[f64],
) -> Result<Vec<Vec<f64>>, LagrangeError> {
    let n = model.n();
    let g = model.semispray_jets(point, 1)?;
    Ok((0..n)
        .map(|a| (0..n).map(|i| g[a].d1(n + i)).collect())
        .collect())
}

/// The d-metric of the model in Lagrange variables: both blocks carry the
/// Hessian, the N-connection is the canonical one. The N fields support one
/// derivative order (all the normal-d-connection curvature needs).
pub fn lagrange_dmetric(model: &LagrangianModel) -> DMetric {
    let n = model.n();
    let z = ScalarField::zero(2 * n);
    let mut g = vec![vec![z.clone(); n]; n];
    let mut h = vec![vec![z.clone(); n]; n];
    for a in 0..n {
        for b in 0..n {
            let m = model.clone();
            let field = ScalarField::from_fn(2 * n, 2, move |p, k| {
                m.hessian_jets(p, k)
                    .map(|hj| hj[a][b].clone())
                    .map_err(|e| match e {
                        LagrangeError::Field(f) => f,
                        other => crate::error::FieldError::Quadrature(other.to_string()),
                    })
            });
            g[a][b] = field.clone();
            h[a][b] = field;
        }
    }
    let mut nc = vec![vec![z; n]; n];
    for (a, row) in nc.iter_mut().enumerate() {
        for (i, slot) in row.iter_mut().enumerate() {
            let m = model.clone();
            *slot = ScalarField::from_fn(2 * n, 1, move |p, k| {
                let g = m.semispray_jets(p, k + 1).map_err(|e| match e {
                    LagrangeError::Field(f) => f,
                    other => crate::error::FieldError::Quadrature(other.to_string()),
                })?;
                Ok(g[a].derive(m.n() + i))
            });
        }
    }
    let n_conn = NConnection::new(model.chart.clone(), nc).unwrap();
    DMetric::new(model.chart.clone(), g, h, n_conn).unwrap()
}

/// Metric jets for the normal-d-connection curvature: blocks to the
/// requested order, N zero-embedded beyond first order (the padded
/// coefficients are provably unused by that chain).
pub fn lagrange_metric_jets(
    model: &LagrangianModel,
    point: &[f64],
    order: usize,
) -> Result<DMetricJets, LagrangeError> {
    let n = model.n();
    let h = model.hessian_jets(point, order)?;
    let gsem = model.semispray_jets(point, 2)?;
    let mut njets = vec![vec![Jet::constant(2 * n, order, 0.0); n]; n];
    for a in 0..n {
        for i in 0..n {
            njets[a][i] = gsem[a].derive(n + i).embed(order);
        }
    }
    Ok(DMetricJets {
        dim_h: n,
        dim_v: n,
        g: h.clone(),
        h,
        n: njets,
    })
}

/// Trajectory pair of the nonlinear-geodesic and Euler-Lagrange systems.
#[derive(Clone, Debug)]
pub struct GeodesicComparison {
    /// (tau, x, y) samples of the semispray path.
    pub spray: Vec<(f64, Vec<f64>, Vec<f64>)>,
    /// (tau, x, y) samples of the Euler-Lagrange path (momentum form).
    pub euler_lagrange: Vec<(f64, Vec<f64>, Vec<f64>)>,
    pub max_deviation: f64,
}

fn rk4_step<F: Fn(&[f64]) -> Result<Vec<f64>, LagrangeError>>(
    f: &F,
    state: &[f64],
    dt: f64,
) -> Result<Vec<f64>, LagrangeError> {
    let k1 = f(state)?;
    let s2: Vec<f64> = state.iter().zip(&k1).map(|(s, k)| s + 0.5 * dt * k).collect();
    let k2 = f(&s2)?;
    let s3: Vec<f64> = state.iter().zip(&k2).map(|(s, k)| s + 0.5 * dt * k).collect();
    let k3 = f(&s3)?;
    let s4: Vec<f64> = state.iter().zip(&k3).map(|(s, k)| s + dt * k).collect();
    let k4 = f(&s4)?;
    Ok(state
        .iter()
        .enumerate()
        .map(|(i, s)| s + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
        .collect())
}

/// Integrate d^2x/dtau^2 + 2G(x, dx/dtau) = 0 and, independently, the
/// Euler-Lagrange system in momentum form, and report the sup-norm
/// deviation of the base trajectories.
pub fn geodesic_compare(
    model: &LagrangianModel,
    x0: &[f64],
    y0: &[f64],
    tau_end: f64,
    dt: f64,
) -> Result<GeodesicComparison, LagrangeError> {
    let n = model.n();
    let steps = (tau_end / dt).round() as usize;

    // (1) semispray path: state = (x, y)
    let spray_rhs = |s: &[f64]| -> Result<Vec<f64>, LagrangeError> {
        let g = semispray(model, s)?;
        let mut out = Vec::with_capacity(2 * n);
        out.extend_from_slice(&s[n..2 * n]);
        for ga in g.iter() {
            out.push(-2.0 * ga);
        }
        Ok(out)
    };
    let mut spray = Vec::with_capacity(steps + 1);
    let mut state: Vec<f64> = x0.iter().chain(y0.iter()).copied().collect();
    spray.push((0.0, state[..n].to_vec(), state[n..].to_vec()));
    for k in 0..steps {
        state = rk4_step(&spray_rhs, &state, dt)?;
        if state.iter().any(|v| !v.is_finite()) {
            return Err(LagrangeError::Integration(format!(
                "spray path diverged at step {k}"
            )));
        }
        spray.push(((k + 1) as f64 * dt, state[..n].to_vec(), state[n..].to_vec()));
    }

    // (2) Euler-Lagrange in momentum form: state = (x, p),
    // p_i = dL/dy^{n+i}, pdot_i = dL/dx^i, with y(x, p) by Newton.
    let velocity_from = |x: &[f64], p: &[f64], guess: &[f64]| -> Result<Vec<f64>, LagrangeError> {
        let mut y = guess.to_vec();
        for _ in 0..50 {
            let mut point = x.to_vec();
            point.extend_from_slice(&y);
            let lj = model.l_jet(&point, 2)?;
            let mut res = vec![0.0; n];
            let mut worst = 0.0f64;
            for i in 0..n {
                res[i] = lj.d1(n + i) - p[i];
                worst = worst.max(res[i].abs());
            }
            if worst < 1e-13 {
                return Ok(y);
            }
            // Jacobian d p_i / d y^j
            let mut jac = vec![vec![0.0; n]; n];
            for i in 0..n {
                for j in 0..n {
                    jac[i][j] = lj.d2(n + i, n + j);
                }
            }
            let jinv = linalg::inverse(&jac).ok_or(LagrangeError::Integration(
                "singular velocity Jacobian".into(),
            ))?;
            for (j, yj) in y.iter_mut().enumerate() {
                let mut dy = 0.0;
                for i in 0..n {
                    dy += jinv[j][i] * res[i];
                }
                *yj -= dy;
            }
        }
        Err(LagrangeError::Integration(
            "velocity inversion did not converge".into(),
        ))
    };
    let mut p0point = x0.to_vec();
    p0point.extend_from_slice(y0);
    let lj0 = model.l_jet(&p0point, 1)?;
    let mut el_state: Vec<f64> = x0.to_vec();
    for i in 0..n {
        el_state.push(lj0.d1(n + i));
    }
    let mut y_guess = y0.to_vec();
    let mut euler_lagrange = Vec::with_capacity(steps + 1);
    euler_lagrange.push((0.0, x0.to_vec(), y0.to_vec()));
    for k in 0..steps {
        let guess = y_guess.clone();
        let el_rhs = |s: &[f64]| -> Result<Vec<f64>, LagrangeError> {
            let x = &s[..n];
            let p = &s[n..2 * n];
            let y = velocity_from(x, p, &guess)?;
            let mut point = x.to_vec();
            point.extend_from_slice(&y);
            let lj = model.l_jet(&point, 1)?;
            let mut out = y.clone();
            for i in 0..n {
                out.push(lj.d1(i));
            }
            Ok(out)
        };
        el_state = rk4_step(&el_rhs, &el_state, dt)?;
        y_guess = velocity_from(&el_state[..n], &el_state[n..], &y_guess)?;
        euler_lagrange.push((
            (k + 1) as f64 * dt,
            el_state[..n].to_vec(),
            y_guess.clone(),
        ));
    }

    let mut dev = 0.0f64;
    for (a, b) in spray.iter().zip(&euler_lagrange) {
        for (xa, xb) in a.1.iter().zip(&b.1) {
            dev = dev.max((xa - xb).abs());
        }
    }
    Ok(GeodesicComparison {
        spray,
        euler_lagrange,
        max_deviation: dev,
    })
}

/// Almost complex / almost symplectic structures of the model at a point.
#[derive(Clone, Debug)]
pub struct AlmostStructure {
    /// J^alpha_beta in the N-adapted basis.
    pub j_matrix: Vec<Vec<f64>>,
    /// theta_{alpha beta} coefficients in the N-adapted cobasis.
    pub theta: Vec<Vec<f64>>,
    /// omega_i = 1/2 dL/dy^{n+i} (coordinate 1-form components on dx^i).
    pub omega: Vec<f64>,
}

pub fn almost_symplectic(
    model: &LagrangianModel,
    point: &[f64],
) -> Result<AlmostStructure, LagrangeError> {
    let n = model.n();
    let h = hessian_metric(model, point)?;
    let d = 2 * n;
    let mut j = vec![vec![0.0; d]; d];
    for i in 0..n {
        // J(e_i) = -e_{n+i}, J(e_{n+i}) = e_i
        j[n + i][i] = -1.0;
        j[i][n + i] = 1.0;
    }
    let mut theta = vec![vec![0.0; d]; d];
    for i in 0..n {
        for k in 0..n {
            theta[n + i][k] = h[i][k];
            theta[k][n + i] = -h[i][k];
        }
    }
    let lj = model.l_jet(point, 1)?;
    let omega = (0..n).map(|i| 0.5 * lj.d1(n + i)).collect();
    Ok(AlmostStructure {
        j_matrix: j,
        theta,
        omega,
    })
}

/// Max-abs coefficient of d(theta) at a point via an independent
/// exterior-derivative routine on the coordinate-cobasis coefficients
/// (vanishes identically since theta = d(omega)).
pub fn dtheta_residual(model: &LagrangianModel, point: &[f64]) -> Result<f64, LagrangeError> {
    let n = model.n();
    let d = 2 * n;
    // theta_{alpha beta} in the coordinate cobasis:
    //   theta_{(n+i) j} = hcheck_{ij} = - theta_{j (n+i)}
    //   theta_{k j} = sum_i (hcheck_{ij} N^{n+i}_k - hcheck_{ik} N^{n+i}_j)
    let coeff_jet = |p: &[f64], al: usize, be: usize, order: usize| -> Result<Jet, LagrangeError> {
        let hj = model.hessian_jets(p, order)?;
        let zero = Jet::constant(d, order, 0.0);
        if al >= n && be < n {
            Ok(hj[al - n][be].clone())
        } else if al < n && be >= n {
            Ok(hj[be - n][al].neg())
        } else if al < n && be < n {
            let g = model.semispray_jets(p, order + 1)?;
            let mut acc = zero;
            for i in 0..n {
                let n_ik = g[i].derive(n + al); // N^{n+i}_(al)
                let n_ij = g[i].derive(n + be);
                acc = acc
                    .add(&hj[i][be].mul(&n_ik.truncate(order)))
                    .sub(&hj[i][al].mul(&n_ij.truncate(order)));
            }
            Ok(acc)
        } else {
            Ok(zero)
        }
    };
    // (d theta)_{abc} = d_a theta_{bc} + d_b theta_{ca} + d_c theta_{ab}
    let mut worst = 0.0f64;
    for a in 0..d {
        for b in (a + 1)..d {
            for c in (b + 1)..d {
                let t_bc = coeff_jet(point, b, c, 1)?;
                let t_ca = coeff_jet(point, c, a, 1)?;
                let t_ab = coeff_jet(point, a, b, 1)?;
                let v = t_bc.d1(a) + t_ca.d1(b) + t_ab.d1(c);
                worst = worst.max(v.abs());
            }
        }
    }
    Ok(worst)
}

/// theta = d(omega) verification at a point, comparing the
/// coordinate-cobasis theta coefficients with the exterior derivative of
/// omega = 1/2 (dL/dy^{n+i}) dx^i.
pub fn theta_equals_domega_residual(
    model: &LagrangianModel,
    point: &[f64],
) -> Result<f64, LagrangeError> {
    let n = model.n();
    let d = 2 * n;
    let lj = model.l_jet(point, 2)?;
    let domega = |a: usize, b: usize| -> f64 {
        let grad = |al: usize, dir: usize| -> f64 {
            if al < n {
                0.5 * lj.derive(n + al).d1(dir)
            } else {
                0.0
            }
        };
        grad(b, a) - grad(a, b)
    };
    let hj = model.hessian_jets(point, 0)?;
    let g = model.semispray_jets(point, 1)?;
    let theta = |a: usize, b: usize| -> f64 {
        if a >= n && b < n {
            hj[a - n][b].value()
        } else if a < n && b >= n {
            -hj[b - n][a].value()
        } else if a < n && b < n {
            let mut acc = 0.0;
            for i in 0..n {
                acc += hj[i][b].value() * g[i].d1(n + a) - hj[i][a].value() * g[i].d1(n + b);
            }
            acc
        } else {
            0.0
        }
    };
    let mut worst = 0.0f64;
    for a in 0..d {
        for b in 0..d {
            worst = worst.max((theta(a, b) - domega(a, b)).abs());
        }
    }
    Ok(worst)
}

/// Normal d-connection coefficients and curvature of the model.
pub struct NormalConnectionData {
    pub connection: connections::ConnectionData,
    pub curvature: CurvatureData,
}

pub fn normal_dconnection(
    model: &LagrangianModel,
    point: &[f64],
) -> Result<NormalConnectionData, LagrangeError> {
    let jets = lagrange_metric_jets(model, point, 2)?;
    let curvature = connections::curvature_from_jets(&jets, ConnectionKind::NormalD)
        .map_err(|e| LagrangeError::Integration(e.to_string()))?;
    let m = lagrange_dmetric(model);
    let connection = connections::normal_dconnection(&m, point)
        .map_err(|e| LagrangeError::Integration(e.to_string()))?;
    Ok(NormalConnectionData {
        connection,
        curvature,
    })
}

/// Chern-Weyl 2-form coefficients gamma_{mu nu} = -1/4 J^{alpha}_tau
/// R^tau_{alpha mu nu} in the N-adapted cobasis.
pub fn chern_weyl(model: &LagrangianModel, point: &[f64]) -> Result<Vec<Vec<f64>>, LagrangeError> {
    let n = model.n();
    let d = 2 * n;
    let nd = normal_dconnection(model, point)?;
    let st = almost_symplectic(model, point)?;
    let mut out = vec![vec![0.0; d]; d];
    for mu in 0..d {
        for nu in 0..d {
            let mut acc = 0.0;
            for tau in 0..d {
                for al in 0..d {
                    acc += st.j_matrix[al][tau] * nd.curvature.riemann_at(tau, al, mu, nu);
                }
            }
            out[mu][nu] = -0.25 * acc;
        }
    }
    Ok(out)
}
