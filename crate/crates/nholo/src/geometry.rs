//! N-connections, adapted frames, anholonomy coefficients and d-metrics.

use crate::error::{FieldError, GeomError};
use crate::field::{Chart, ScalarField};
use crate::jet::Jet;
use crate::linalg;

/// Nonlinear connection coefficients N^a_i (a vertical, i horizontal),
/// stored as fields on the full chart.
#[derive(Clone, Debug)]
pub struct NConnection {
    pub chart: Chart,
    /// coefficients[a][i] = N^{n+a}_i
    pub coefficients: Vec<Vec<ScalarField>>,
}

impl NConnection {
    pub fn new(chart: Chart, coefficients: Vec<Vec<ScalarField>>) -> Result<Self, GeomError> {
        if coefficients.len() != chart.dim_v
            || coefficients.iter().any(|row| row.len() != chart.dim_h)
        {
            return Err(GeomError::Dimension(format!(
                "N-connection must be {} x {}",
                chart.dim_v, chart.dim_h
            )));
        }
        Ok(NConnection {
            chart,
            coefficients,
        })
    }

    pub fn zero(chart: &Chart) -> NConnection {
        let z = ScalarField::zero(chart.dim());
        NConnection {
            chart: chart.clone(),
            coefficients: vec![vec![z.clone(); chart.dim_h]; chart.dim_v],
        }
    }

    pub fn jets(&self, point: &[f64], order: usize) -> Result<Vec<Vec<Jet>>, FieldError> {
        self.coefficients
            .iter()
            .map(|row| {
                row.iter()
                    .map(|f| Ok(f.eval_jet(point, order)?.jet().clone()))
                    .collect()
            })
            .collect()
    }
}

/// Pointwise N-adapted frame/coframe in the block form of the paper's
/// frame-transform parametrization: the matrices are mutual inverses, the
/// upper-right block of the frame carries +N^a_i and of the coframe -N^a_i.
#[derive(Clone, Debug)]
pub struct FrameBasis {
    pub frame_matrix: Vec<Vec<f64>>,
    pub coframe_matrix: Vec<Vec<f64>>,
}

/// Frame-bracket coefficients W^gamma_{alpha beta} ([e_a, e_b] = W^c_{ab} e_c)
/// and the N-connection curvature slice Omega^a_{ij}.
#[derive(Clone, Debug)]
pub struct AnholonomyData {
    pub dim_h: usize,
    pub dim_v: usize,
    w: Vec<f64>,
}

impl AnholonomyData {
    pub(crate) fn from_raw(dim_h: usize, dim_v: usize, w: Vec<f64>) -> AnholonomyData {
        AnholonomyData { dim_h, dim_v, w }
    }

    fn dim(&self) -> usize {
        self.dim_h + self.dim_v
    }

    fn pos(&self, g: usize, a: usize, b: usize) -> usize {
        let d = self.dim();
        (g * d + a) * d + b
    }

    pub fn w(&self, gamma: usize, alpha: usize, beta: usize) -> f64 {
        self.w[self.pos(gamma, alpha, beta)]
    }

    /// Omega^a_{ij} (vertical label a in 0..dim_v, horizontal i, j).
    pub fn omega(&self, a: usize, i: usize, j: usize) -> f64 {
        self.w(self.dim_h + a, i, j)
    }
}

/// d-metric: block (g_ij, h_ab) with an associated N-connection.
#[derive(Clone, Debug)]
pub struct DMetric {
    pub chart: Chart,
    pub g: Vec<Vec<ScalarField>>,
    pub h: Vec<Vec<ScalarField>>,
    pub n_conn: NConnection,
}

/// All metric data evaluated as jets at one point; the input for every
/// connection/curvature computation.
#[derive(Clone, Debug)]
pub struct DMetricJets {
    pub dim_h: usize,
    pub dim_v: usize,
    pub g: Vec<Vec<Jet>>,
    pub h: Vec<Vec<Jet>>,
    /// n[a][i] = jets of N^{n+a}_i
    pub n: Vec<Vec<Jet>>,
}

impl DMetric {
    pub fn new(
        chart: Chart,
        g: Vec<Vec<ScalarField>>,
        h: Vec<Vec<ScalarField>>,
        n_conn: NConnection,
    ) -> Result<DMetric, GeomError> {
        if g.len() != chart.dim_h || g.iter().any(|r| r.len() != chart.dim_h) {
            return Err(GeomError::Dimension("g block must be dim_h x dim_h".into()));
        }
        if h.len() != chart.dim_v || h.iter().any(|r| r.len() != chart.dim_v) {
            return Err(GeomError::Dimension("h block must be dim_v x dim_v".into()));
        }
        Ok(DMetric {
            chart,
            g,
            h,
            n_conn,
        })
    }

    /// Diagonal d-metric from per-coordinate fields, N = 0.
    pub fn diagonal(chart: &Chart, diag: Vec<ScalarField>) -> DMetric {
        assert_eq!(diag.len(), chart.dim());
        let z = ScalarField::zero(chart.dim());
        let mut g = vec![vec![z.clone(); chart.dim_h]; chart.dim_h];
        let mut h = vec![vec![z.clone(); chart.dim_v]; chart.dim_v];
        for i in 0..chart.dim_h {
            g[i][i] = diag[i].clone();
        }
        for a in 0..chart.dim_v {
            h[a][a] = diag[chart.dim_h + a].clone();
        }
        DMetric {
            chart: chart.clone(),
            g,
            h,
            n_conn: NConnection::zero(chart),
        }
    }

    /// Flat metric with the chart signature.
    pub fn flat(chart: &Chart) -> DMetric {
        let diag = chart
            .signature
            .iter()
            .map(|&s| ScalarField::constant(chart.dim(), s))
            .collect();
        DMetric::diagonal(chart, diag)
    }

    pub fn jets(&self, point: &[f64], order: usize) -> Result<DMetricJets, FieldError> {
        let jet_of = |f: &ScalarField| -> Result<Jet, FieldError> {
            Ok(f.eval_jet(point, order)?.jet().clone())
        };
        let g = self
            .g
            .iter()
            .map(|r| r.iter().map(jet_of).collect::<Result<Vec<_>, _>>())
            .collect::<Result<Vec<_>, _>>()?;
        let h = self
            .h
            .iter()
            .map(|r| r.iter().map(jet_of).collect::<Result<Vec<_>, _>>())
            .collect::<Result<Vec<_>, _>>()?;
        let n = self.n_conn.jets(point, order)?;
        Ok(DMetricJets {
            dim_h: self.chart.dim_h,
            dim_v: self.chart.dim_v,
            g,
            h,
            n,
        })
    }
}

impl DMetricJets {
    pub fn dim(&self) -> usize {
        self.dim_h + self.dim_v
    }

    /// N-elongated derivative of a jet along frame direction alpha:
    /// e_i = d_i - N^a_i d_a for horizontal, e_a = d_a for vertical.
    pub fn elongated_derive(&self, f: &Jet, alpha: usize) -> Jet {
        if alpha < self.dim_h {
            let mut out = f.derive(alpha);
            for a in 0..self.dim_v {
                if self.n[a][alpha].is_zero() {
                    continue;
                }
                let fd = f.derive(self.dim_h + a);
                if fd.is_zero() {
                    continue;
                }
                let n = self.n[a][alpha].truncate(out.order());
                out = out.sub(&n.mul(&fd));
            }
            out
        } else {
            f.derive(alpha)
        }
    }

    /// Value of the N-elongated derivative (no jet allocation).
    pub fn elongated_d1(&self, f: &Jet, alpha: usize) -> f64 {
        if alpha < self.dim_h {
            let mut v = f.d1(alpha);
            for a in 0..self.dim_v {
                let nv = self.n[a][alpha].value();
                if nv != 0.0 {
                    v -= nv * f.d1(self.dim_h + a);
                }
            }
            v
        } else {
            f.d1(alpha)
        }
    }

    pub fn g_values(&self) -> Vec<Vec<f64>> {
        self.g
            .iter()
            .map(|r| r.iter().map(|j| j.value()).collect())
            .collect()
    }

    pub fn h_values(&self) -> Vec<Vec<f64>> {
        self.h
            .iter()
            .map(|r| r.iter().map(|j| j.value()).collect())
            .collect()
    }

    pub fn n_values(&self) -> Vec<Vec<f64>> {
        self.n
            .iter()
            .map(|r| r.iter().map(|j| j.value()).collect())
            .collect()
    }
}

/// N-adapted frame and coframe matrices at a point.
pub fn adapted_frames(n_conn: &NConnection, point: &[f64]) -> Result<FrameBasis, GeomError> {
    let chart = &n_conn.chart;
    let (nh, nv, d) = (chart.dim_h, chart.dim_v, chart.dim());
    let mut frame = linalg::identity(d);
    let mut coframe = linalg::identity(d);
    for a in 0..nv {
        for i in 0..nh {
            let v = n_conn.coefficients[a][i].eval(point)?;
            frame[i][nh + a] = v;
            coframe[i][nh + a] = -v;
        }
    }
    Ok(FrameBasis {
        frame_matrix: frame,
        coframe_matrix: coframe,
    })
}

/// Anholonomy coefficients of the N-adapted frame at a point.
pub fn anholonomy(n_conn: &NConnection, point: &[f64]) -> Result<AnholonomyData, GeomError> {
    let chart = &n_conn.chart;
    let (nh, nv, d) = (chart.dim_h, chart.dim_v, chart.dim());
    let njets = n_conn.jets(point, 1)?;
    let mut data = AnholonomyData {
        dim_h: nh,
        dim_v: nv,
        w: vec![0.0; d * d * d],
    };
    // W^{n+c}_{i, n+a} = d_{y^a} N^c_i, antisymmetric partner negated.
    for c in 0..nv {
        for i in 0..nh {
            for a in 0..nv {
                let v = njets[c][i].d1(nh + a);
                let p1 = data.pos(nh + c, i, nh + a);
                let p2 = data.pos(nh + c, nh + a, i);
                data.w[p1] = v;
                data.w[p2] = -v;
            }
        }
    }
    // W^{n+a}_{ij} = Omega^a_{ij} = e_j(N^a_i) - e_i(N^a_j).
    for a in 0..nv {
        for i in 0..nh {
            for j in (i + 1)..nh {
                let e_j_ni = elongated_scalar(&njets, nh, nv, &njets[a][i], j);
                let e_i_nj = elongated_scalar(&njets, nh, nv, &njets[a][j], i);
                let omega = e_j_ni - e_i_nj;
                let p1 = data.pos(nh + a, i, j);
                let p2 = data.pos(nh + a, j, i);
                data.w[p1] = omega;
                data.w[p2] = -omega;
            }
        }
    }
    Ok(data)
}

fn elongated_scalar(n: &[Vec<Jet>], nh: usize, nv: usize, f: &Jet, dir: usize) -> f64 {
    if dir < nh {
        let mut v = f.d1(dir);
        for a in 0..nv {
            v -= n[a][dir].value() * f.d1(nh + a);
        }
        v
    } else {
        f.d1(dir)
    }
}

/// Off-diagonal coordinate matrix of a d-metric at a point.
pub fn to_offdiagonal(m: &DMetric, point: &[f64]) -> Result<Vec<Vec<f64>>, GeomError> {
    let jets = m.jets(point, 0)?;
    let g = jets.g_values();
    let h = jets.h_values();
    let nv = jets.n_values();
    let detg = linalg::det(&g);
    let deth = linalg::det(&h);
    if detg == 0.0 || deth == 0.0 {
        return Err(GeomError::SingularMetric {
            point: point.to_vec(),
            det: detg * deth,
        });
    }
    let (n, mdim, d) = (jets.dim_h, jets.dim_v, jets.dim());
    let mut out = vec![vec![0.0; d]; d];
    for i in 0..n {
        for j in 0..n {
            let mut v = g[i][j];
            for a in 0..mdim {
                for b in 0..mdim {
                    v += nv[a][i] * nv[b][j] * h[a][b];
                }
            }
            out[i][j] = v;
        }
    }
    for i in 0..n {
        for b in 0..mdim {
            let mut v = 0.0;
            for a in 0..mdim {
                v += nv[a][i] * h[a][b];
            }
            out[i][n + b] = v;
            out[n + b][i] = v;
        }
    }
    for a in 0..mdim {
        for b in 0..mdim {
            out[n + a][n + b] = h[a][b];
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::Chart;

    fn chart() -> Chart {
        Chart::euclidean_2_2()
    }

    #[test]
    fn zero_connection_gives_identity_frames() {
        let n = NConnection::zero(&chart());
        let fb = adapted_frames(&n, &[0.1, 0.2, 0.3, 0.4]).unwrap();
        assert_eq!(fb.frame_matrix, linalg::identity(4));
        assert_eq!(fb.coframe_matrix, linalg::identity(4));
    }

    #[test]
    fn frame_blocks_carry_n() {
        let c = chart();
        let z = ScalarField::zero(4);
        let n = NConnection::new(
            c.clone(),
            vec![
                vec![ScalarField::constant(4, 2.0), z.clone()],
                vec![ScalarField::constant(4, 5.0), z.clone()],
            ],
        )
        .unwrap();
        let fb = adapted_frames(&n, &[0.0; 4]).unwrap();
        assert_eq!(fb.frame_matrix[0][2], 2.0);
        assert_eq!(fb.frame_matrix[0][3], 5.0);
        assert_eq!(fb.frame_matrix[1][2], 0.0);
        assert_eq!(fb.coframe_matrix[0][2], -2.0);
        let prod = linalg::mat_mul(&fb.frame_matrix, &fb.coframe_matrix);
        for i in 0..4 {
            for j in 0..4 {
                let e = if i == j { 1.0 } else { 0.0 };
                assert!((prod[i][j] - e).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn constant_n_has_zero_anholonomy() {
        let c = chart();
        let n = NConnection::new(
            c.clone(),
            vec![
                vec![ScalarField::constant(4, 1.5), ScalarField::constant(4, -0.5)],
                vec![ScalarField::constant(4, 0.25), ScalarField::constant(4, 2.0)],
            ],
        )
        .unwrap();
        let w = anholonomy(&n, &[0.3, 0.4, 0.5, 0.6]).unwrap();
        for g in 0..4 {
            for a in 0..4 {
                for b in 0..4 {
                    assert_eq!(w.w(g, a, b), 0.0);
                }
            }
        }
    }

    #[test]
    fn omega_matches_closed_formula() {
        // N^3_1 = x2 * y3 -> nontrivial Omega and dN/dy terms
        let c = chart();
        let z = ScalarField::zero(4);
        let n31 = ScalarField::from_expr("x2*y3", &c).unwrap();
        let n = NConnection::new(
            c.clone(),
            vec![vec![n31, ScalarField::from_expr("x1", &c).unwrap()], vec![z.clone(), z.clone()]],
        )
        .unwrap();
        let p = [0.7, 2.0, 3.0, 0.1];
        let w = anholonomy(&n, &p).unwrap();
        // closed four-term formula of the Nijenhuis/N-curvature coefficients
        let (x2, y3) = (p[1], p[2]);
        // N^3_1 = x2*y3, N^3_2 = x1; partials: d2 N31 = y3, d1 N32 = 1,
        // dy3 N31 = x2, dy3 N32 = 0
        let omega_expect = (y3 - 1.0) + (x2 * y3) * 0.0 - x2 * 0.0 - 0.0
            - 0.0 * 0.0
            + 0.0;
        // Omega^3_{12} = d2 N31 - d1 N32 + N^b_1 db N32 - N^b_2 db N31
        //            = y3 - 1 + (x2 y3)*0 - x1 * x2
        let omega_exact = y3 - 1.0 - p[0] * x2;
        let _ = omega_expect;
        assert!((w.omega(0, 0, 1) - omega_exact).abs() < 1e-12);
        assert!((w.omega(0, 1, 0) + omega_exact).abs() < 1e-12);
        // W^3_{1 y3} = d_{y3} N^3_1 = x2
        assert!((w.w(2, 0, 2) - x2).abs() < 1e-13);
    }

    #[test]
    fn offdiagonal_congruence() {
        let c = chart();
        let g00 = ScalarField::from_expr("1 + 0.2*sin(x1)", &c).unwrap();
        let g11 = ScalarField::from_expr("2 + 0.1*x2^2", &c).unwrap();
        let h00 = ScalarField::from_expr("1.5 + 0.1*cos(x1)", &c).unwrap();
        let h11 = ScalarField::from_expr("1 + 0.3*y3^2", &c).unwrap();
        let z = ScalarField::zero(4);
        let mut g = vec![vec![z.clone(); 2]; 2];
        g[0][0] = g00;
        g[1][1] = g11;
        g[0][1] = ScalarField::constant(4, 0.1);
        g[1][0] = ScalarField::constant(4, 0.1);
        let mut h = vec![vec![z.clone(); 2]; 2];
        h[0][0] = h00;
        h[1][1] = h11;
        let n = NConnection::new(
            c.clone(),
            vec![
                vec![
                    ScalarField::from_expr("0.3*x1*y3", &c).unwrap(),
                    ScalarField::from_expr("0.2*x2", &c).unwrap(),
                ],
                vec![
                    ScalarField::from_expr("sin(x2)", &c).unwrap(),
                    ScalarField::constant(4, 0.7),
                ],
            ],
        )
        .unwrap();
        let m = DMetric::new(c.clone(), g, h, n.clone()).unwrap();
        let p = [0.4, 0.8, 1.2, -0.3];
        let off = to_offdiagonal(&m, &p).unwrap();
        // congruence against blockdiag(g, h) conjugated with the frame
        let fb = adapted_frames(&n, &p).unwrap();
        let jets = m.jets(&p, 0).unwrap();
        let mut d = vec![vec![0.0; 4]; 4];
        let gv = jets.g_values();
        let hv = jets.h_values();
        for i in 0..2 {
            for j in 0..2 {
                d[i][j] = gv[i][j];
                d[2 + i][2 + j] = hv[i][j];
            }
        }
        let e = linalg::mat_transpose(&fb.frame_matrix);
        let prod = linalg::mat_mul(&linalg::mat_transpose(&e), &linalg::mat_mul(&d, &e));
        for i in 0..4 {
            for j in 0..4 {
                assert!((off[i][j] - prod[i][j]).abs() < 1e-12, "({i},{j})");
                assert!((off[i][j] - off[j][i]).abs() < 1e-13);
            }
        }
    }
}
