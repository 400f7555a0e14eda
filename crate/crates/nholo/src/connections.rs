//! Canonical d-connection, Levi-Civita connection, distortion, and the
//! torsion/curvature/Ricci engine.
//!
//! Index convention throughout: `gamma[c][a][b]` holds Gamma^c_{a b} where
//! `a` is the differentiated label and `b` the direction, i.e.
//! D_{e_b} e_a = Gamma^c_{a b} e_c. Curvature is stored in the component
//! layout R^alpha_{beta gamma delta} used for the closed-form families
//! (contraction of the first and fourth indices gives the Ricci d-tensor).

use crate::error::GeomError;
use crate::geometry::{AnholonomyData, DMetric, DMetricJets};
use crate::jet::Jet;
use crate::linalg;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ConnectionKind {
    CanonicalD,
    LeviCivita,
    NormalD,
}

#[derive(Clone, Debug)]
pub struct ConnectionData {
    pub kind: ConnectionKind,
    pub dim_h: usize,
    pub dim_v: usize,
    /// Gamma^c_{a b} values, flattened [c][a][b].
    pub values: Vec<f64>,
    /// Order-1 jets of the coefficients (used by the curvature pass).
    jets: Vec<Jet>,
}

impl ConnectionData {
    pub fn dim(&self) -> usize {
        self.dim_h + self.dim_v
    }

    #[inline]
    fn pos(&self, c: usize, a: usize, b: usize) -> usize {
        let d = self.dim();
        (c * d + a) * d + b
    }

    pub fn gamma(&self, c: usize, a: usize, b: usize) -> f64 {
        self.values[self.pos(c, a, b)]
    }

    /// L^i_{jk} family (all horizontal).
    pub fn l_hh(&self, i: usize, j: usize, k: usize) -> f64 {
        self.gamma(i, j, k)
    }

    /// L^a_{bk} family (vertical labels, horizontal direction).
    pub fn l_vv(&self, a: usize, b: usize, k: usize) -> f64 {
        self.gamma(self.dim_h + a, self.dim_h + b, k)
    }

    /// C^i_{jc} family (horizontal labels, vertical direction).
    pub fn c_hh(&self, i: usize, j: usize, c: usize) -> f64 {
        self.gamma(i, j, self.dim_h + c)
    }

    /// C^a_{bc} family (all vertical).
    pub fn c_vv(&self, a: usize, b: usize, c: usize) -> f64 {
        self.gamma(self.dim_h + a, self.dim_h + b, self.dim_h + c)
    }
}

#[derive(Clone, Debug)]
pub struct CurvatureData {
    pub dim_h: usize,
    pub dim_v: usize,
    /// T^c_{ab}, flattened [c][a][b]; antisymmetric in (a, b).
    pub torsion: Vec<f64>,
    /// R^a_{b c d}, flattened; antisymmetric in the last two indices.
    pub riemann: Option<Vec<f64>>,
    /// Ricci R_{bc} = R^a_{b c a} (not symmetric for d-connections).
    pub ricci: Option<Vec<f64>>,
    pub scalar_h: Option<f64>,
    pub scalar_v: Option<f64>,
    pub scalar: Option<f64>,
}

impl CurvatureData {
    pub fn dim(&self) -> usize {
        self.dim_h + self.dim_v
    }

    pub fn torsion_at(&self, c: usize, a: usize, b: usize) -> f64 {
        let d = self.dim();
        self.torsion[(c * d + a) * d + b]
    }

    pub fn riemann_at(&self, a: usize, b: usize, c: usize, dd: usize) -> f64 {
        let d = self.dim();
        self.riemann.as_ref().expect("curvature not computed")[((a * d + b) * d + c) * d + dd]
    }

    pub fn ricci_at(&self, b: usize, c: usize) -> f64 {
        let d = self.dim();
        self.ricci.as_ref().expect("curvature not computed")[b * d + c]
    }

    pub fn ricci_matrix(&self) -> Vec<Vec<f64>> {
        let d = self.dim();
        (0..d)
            .map(|b| (0..d).map(|c| self.ricci_at(b, c)).collect())
            .collect()
    }

    pub fn max_abs_ricci(&self) -> f64 {
        self.ricci
            .as_ref()
            .expect("curvature not computed")
            .iter()
            .fold(0.0f64, |m, v| m.max(v.abs()))
    }
}

#[derive(Clone, Debug)]
pub struct DistortionData {
    pub dim_h: usize,
    pub dim_v: usize,
    /// Z^c_{ab} = |Gamma^c_{ab} (N-adapted Levi-Civita) - canonical Gamma^c_{ab}.
    pub z: Vec<f64>,
}

impl DistortionData {
    pub fn z_at(&self, c: usize, a: usize, b: usize) -> f64 {
        let d = self.dim_h + self.dim_v;
        self.z[(c * d + a) * d + b]
    }
}

fn singular(point: &[f64], det: f64) -> GeomError {
    GeomError::SingularMetric {
        point: point.to_vec(),
        det,
    }
}

/// Canonical d-connection coefficients as order-(q-1) jets from metric jets
/// of order q. Only the four d-families are populated.
pub fn canonical_gamma_jets(jets: &DMetricJets) -> Result<Vec<Jet>, GeomError> {
    let (nh, nv, d) = (jets.dim_h, jets.dim_v, jets.dim());
    let order = jets.g[0][0].order();
    assert!(order >= 1, "need metric jets of order >= 1");
    let out_order = order - 1;
    let dim = jets.g[0][0].dim();
    let zero = Jet::constant(dim, out_order, 0.0);
    let mut gamma = vec![zero.clone(); d * d * d];
    let idx = |c: usize, a: usize, b: usize| (c * d + a) * d + b;

    let g_lo: Vec<Vec<Jet>> = jets
        .g
        .iter()
        .map(|r| r.iter().map(|j| j.truncate(out_order)).collect())
        .collect();
    let h_lo: Vec<Vec<Jet>> = jets
        .h
        .iter()
        .map(|r| r.iter().map(|j| j.truncate(out_order)).collect())
        .collect();
    let g_inv = linalg::inverse_jet(&g_lo).ok_or_else(|| singular(&[], 0.0))?;
    let h_inv = linalg::inverse_jet(&h_lo).ok_or_else(|| singular(&[], 0.0))?;

    // e-derivatives of metric blocks (one order lower; exploit symmetry).
    let sym_derivs = |block: &Vec<Vec<Jet>>, nb: usize| -> Vec<Vec<Vec<Jet>>> {
        (0..d)
            .map(|mu| {
                let mut rows = vec![vec![zero.clone(); nb]; nb];
                for a in 0..nb {
                    for b in a..nb {
                        let v = jets.elongated_derive(&block[a][b], mu);
                        rows[a][b] = v.clone();
                        rows[b][a] = v;
                    }
                }
                rows
            })
            .collect()
    };
    let e_g = sym_derivs(&jets.g, nh);
    let e_h = sym_derivs(&jets.h, nv);
    // plain vertical derivatives of N^a_k
    let dn: Vec<Vec<Vec<Jet>>> = (0..nv)
        .map(|b| {
            jets.n
                .iter()
                .map(|row| row.iter().map(|f| f.derive(nh + b)).collect())
                .collect()
        })
        .collect();

    // L^i_{jk} = 1/2 g^{ir} (e_k g_jr + e_j g_kr - e_r g_jk), symmetric in
    // (j, k)
    for j in 0..nh {
        for k in j..nh {
            for i in 0..nh {
                let mut acc = zero.clone();
                for r in 0..nh {
                    let mut t = e_g[k][j][r].add(&e_g[j][k][r]);
                    t = t.sub(&e_g[r][j][k]);
                    acc.mul_add_assign(&g_inv[i][r], &t, 0.5);
                }
                gamma[idx(i, j, k)] = acc.clone();
                gamma[idx(i, k, j)] = acc;
            }
        }
    }
    // L^a_{bk} = d_b(N^a_k) + 1/2 h^{ac} (e_k h_bc - h_dc d_b N^d_k - h_db d_c N^d_k)
    for a in 0..nv {
        for b in 0..nv {
            for k in 0..nh {
                let mut acc = dn[b][a][k].clone();
                for c in 0..nv {
                    let mut t = e_h[k][b][c].clone();
                    for dd in 0..nv {
                        if !dn[b][dd][k].is_zero() {
                            t.mul_add_assign(&h_lo[dd][c], &dn[b][dd][k], -1.0);
                        }
                        if !dn[c][dd][k].is_zero() {
                            t.mul_add_assign(&h_lo[dd][b], &dn[c][dd][k], -1.0);
                        }
                    }
                    acc.mul_add_assign(&h_inv[a][c], &t, 0.5);
                }
                gamma[idx(nh + a, nh + b, k)] = acc;
            }
        }
    }
    // C^i_{jc} = 1/2 g^{ik} d_c g_jk
    for i in 0..nh {
        for j in 0..nh {
            for c in 0..nv {
                let mut acc = zero.clone();
                for k in 0..nh {
                    acc.mul_add_assign(&g_inv[i][k], &jets.g[j][k].derive(nh + c), 0.5);
                }
                gamma[idx(i, j, nh + c)] = acc;
            }
        }
    }
    // C^a_{bc} = 1/2 h^{ad} (d_c h_bd + d_b h_cd - d_d h_bc), symmetric in
    // (b, c)
    for b in 0..nv {
        for c in b..nv {
            for a in 0..nv {
                let mut acc = zero.clone();
                for dd in 0..nv {
                    let mut t = jets.h[b][dd].derive(nh + c);
                    t = t.add(&jets.h[c][dd].derive(nh + b));
                    t = t.sub(&jets.h[b][c].derive(nh + dd));
                    acc.mul_add_assign(&h_inv[a][dd], &t, 0.5);
                }
                gamma[idx(nh + a, nh + b, nh + c)] = acc.clone();
                gamma[idx(nh + a, nh + c, nh + b)] = acc;
            }
        }
    }
    Ok(gamma)
}

/// Normal d-connection (Lagrange-variables form): the two (cdcc) families,
/// duplicated onto the v-labels via the a = n+i identification. The d-metric
/// must be in Lagrange variables (g block equal to the Hessian h block).
pub fn normal_gamma_jets(jets: &DMetricJets) -> Result<Vec<Jet>, GeomError> {
    let (nh, nv, d) = (jets.dim_h, jets.dim_v, jets.dim());
    assert_eq!(nh, nv, "normal d-connection requires an n+n split");
    let order = jets.g[0][0].order();
    let out_order = order - 1;
    let dim = jets.g[0][0].dim();
    let zero = Jet::constant(dim, out_order, 0.0);
    let mut gamma = vec![zero.clone(); d * d * d];
    let idx = |c: usize, a: usize, b: usize| (c * d + a) * d + b;

    let gv = &jets.h; // check-g in Lagrange variables (the v Hessian)
    let g_inv = linalg::inverse_jet(gv).ok_or_else(|| singular(&[], 0.0))?;

    for i in 0..nh {
        for j in 0..nh {
            // L^i_{jk} = 1/2 g^{ih} (e_k g_jh + e_j g_hk - e_h g_jk)
            for k in 0..nh {
                let mut acc = zero.clone();
                for hh in 0..nh {
                    let t = jets
                        .elongated_derive(&gv[j][hh], k)
                        .add(&jets.elongated_derive(&gv[hh][k], j))
                        .sub(&jets.elongated_derive(&gv[j][k], hh));
                    acc = acc.add(&g_inv[i][hh].truncate(out_order).mul(&t));
                }
                let l = acc.scale(0.5);
                gamma[idx(i, j, k)] = l.clone();
                gamma[idx(nh + i, nh + j, k)] = l;
            }
            // C^i_{jk} = 1/2 g^{ih} (d_{y^k} g_jh + d_{y^j} g_hk - d_{y^h} g_jk)
            for k in 0..nh {
                let mut acc = zero.clone();
                for hh in 0..nh {
                    let t = gv[j][hh]
                        .derive(nh + k)
                        .add(&gv[hh][k].derive(nh + j))
                        .sub(&gv[j][k].derive(nh + hh));
                    acc = acc.add(&g_inv[i][hh].truncate(out_order).mul(&t));
                }
                let c = acc.scale(0.5);
                gamma[idx(i, j, nh + k)] = c.clone();
                gamma[idx(nh + i, nh + j, nh + k)] = c;
            }
        }
    }
    Ok(gamma)
}

/// Coordinate (off-diagonal) metric as jets: the (2ansatz) assembly.
pub fn coordinate_metric_jets(jets: &DMetricJets) -> Vec<Vec<Jet>> {
    let (nh, nv, d) = (jets.dim_h, jets.dim_v, jets.dim());
    let order = jets.g[0][0].order();
    let dim = jets.g[0][0].dim();
    let zero = Jet::constant(dim, order, 0.0);
    let mut out = vec![vec![zero.clone(); d]; d];
    for i in 0..nh {
        for j in 0..nh {
            let mut v = jets.g[i][j].clone();
            for a in 0..nv {
                for b in 0..nv {
                    v = v.add(&jets.n[a][i].mul(&jets.n[b][j]).mul(&jets.h[a][b]));
                }
            }
            out[i][j] = v;
        }
    }
    for i in 0..nh {
        for b in 0..nv {
            let mut v = zero.clone();
            for a in 0..nv {
                v = v.add(&jets.n[a][i].mul(&jets.h[a][b]));
            }
            out[i][nh + b] = v.clone();
            out[nh + b][i] = v;
        }
    }
    for a in 0..nv {
        for b in 0..nv {
            out[nh + a][nh + b] = jets.h[a][b].clone();
        }
    }
    out
}

/// Christoffel symbols of the coordinate metric, as order-(q-1) jets.
pub fn levi_civita_gamma_jets(jets: &DMetricJets) -> Result<Vec<Jet>, GeomError> {
    let d = jets.dim();
    let order = jets.g[0][0].order();
    let out_order = order - 1;
    let dim = jets.g[0][0].dim();
    let gc = coordinate_metric_jets(jets);
    let gi = linalg::inverse_jet(&gc).ok_or_else(|| singular(&[], 0.0))?;
    let zero = Jet::constant(dim, out_order, 0.0);
    let mut gamma = vec![zero.clone(); d * d * d];
    let idx = |c: usize, a: usize, b: usize| (c * d + a) * d + b;
    for c in 0..d {
        for a in 0..d {
            for b in a..d {
                let mut acc = zero.clone();
                for e in 0..d {
                    let t = gc[e][a]
                        .derive(b)
                        .add(&gc[e][b].derive(a))
                        .sub(&gc[a][b].derive(e));
                    acc = acc.add(&gi[c][e].truncate(out_order).mul(&t));
                }
                let v = acc.scale(0.5);
                gamma[idx(c, a, b)] = v.clone();
                gamma[idx(c, b, a)] = v;
            }
        }
    }
    Ok(gamma)
}

fn connection_from_jets(
    kind: ConnectionKind,
    jets: &DMetricJets,
    gamma_jets: Vec<Jet>,
) -> ConnectionData {
    let d = jets.dim();
    let values = gamma_jets.iter().map(|j| j.value()).collect();
    ConnectionData {
        kind,
        dim_h: jets.dim_h,
        dim_v: jets.dim_v,
        values,
        jets: {
            let _ = d;
            gamma_jets
        },
    }
}

pub fn canonical_dconnection(m: &DMetric, point: &[f64]) -> Result<ConnectionData, GeomError> {
    let jets = m.jets(point, 1).map_err(GeomError::Field)?;
    check_invertible(&jets, point)?;
    let gamma = canonical_gamma_jets(&jets)?;
    Ok(connection_from_jets(ConnectionKind::CanonicalD, &jets, gamma))
}

/// Levi-Civita Christoffels of the off-diagonal coordinate metric,
/// returned in the coordinate frame.
pub fn levi_civita(m: &DMetric, point: &[f64]) -> Result<ConnectionData, GeomError> {
    let jets = m.jets(point, 1).map_err(GeomError::Field)?;
    check_invertible(&jets, point)?;
    let gamma = levi_civita_gamma_jets(&jets)?;
    Ok(connection_from_jets(ConnectionKind::LeviCivita, &jets, gamma))
}

pub fn normal_dconnection(m: &DMetric, point: &[f64]) -> Result<ConnectionData, GeomError> {
    let jets = m.jets(point, 1).map_err(GeomError::Field)?;
    check_invertible(&jets, point)?;
    let gamma = normal_gamma_jets(&jets)?;
    Ok(connection_from_jets(ConnectionKind::NormalD, &jets, gamma))
}

fn check_invertible(jets: &DMetricJets, point: &[f64]) -> Result<(), GeomError> {
    let dg = linalg::det(&jets.g_values());
    let dh = linalg::det(&jets.h_values());
    if dg.abs() < 1e-14 || dh.abs() < 1e-14 {
        return Err(singular(point, dg * dh));
    }
    Ok(())
}

/// Levi-Civita coefficients transformed to the N-adapted frame.
///
/// The true frame is e_i = d_i - N^a_i d_a, e_a = d_a with dual
/// e^i = dx^i, e^a = dy^a + N^a_i dx^i.
pub fn levi_civita_nadapted(m: &DMetric, point: &[f64]) -> Result<ConnectionData, GeomError> {
    let jets = m.jets(point, 1).map_err(GeomError::Field)?;
    check_invertible(&jets, point)?;
    let lc = levi_civita_gamma_jets(&jets)?;
    let (nh, nv, d) = (jets.dim_h, jets.dim_v, jets.dim());
    let idx = |c: usize, a: usize, b: usize| (c * d + a) * d + b;

    // frame rows A[label][coord] and coframe rows B[label][coord]
    let mut a_mat = linalg::identity(d);
    let mut b_mat = linalg::identity(d);
    let nvals = jets.n_values();
    for aa in 0..nv {
        for i in 0..nh {
            a_mat[i][nh + aa] = -nvals[aa][i];
            b_mat[nh + aa][i] = nvals[aa][i];
        }
    }
    // coordinate partials of the frame coefficients: dA[beta][label][coord]
    // (only the -N^a_i entries are nonconstant)
    let mut da = vec![vec![vec![0.0; d]; d]; d];
    for aa in 0..nv {
        for i in 0..nh {
            for beta in 0..d {
                da[beta][i][nh + aa] = -jets.n[aa][i].d1(beta);
            }
        }
    }
    let mut values = vec![0.0; d * d * d];
    for gp in 0..d {
        for ap in 0..d {
            for bp in 0..d {
                let mut acc = 0.0;
                for g in 0..d {
                    let bg = b_mat[gp][g];
                    if bg == 0.0 {
                        continue;
                    }
                    let mut inner = 0.0;
                    for b in 0..d {
                        let ab = a_mat[bp][b];
                        if ab == 0.0 {
                            continue;
                        }
                        // connection term
                        for a in 0..d {
                            let aa_ = a_mat[ap][a];
                            if aa_ == 0.0 {
                                continue;
                            }
                            inner += ab * aa_ * lc[idx(g, a, b)].value();
                        }
                        // derivative term d_b (A_{ap}^g)
                        inner += ab * da[b][ap][g];
                    }
                    acc += bg * inner;
                }
                values[idx(gp, ap, bp)] = acc;
            }
        }
    }
    Ok(ConnectionData {
        kind: ConnectionKind::LeviCivita,
        dim_h: nh,
        dim_v: nv,
        values,
        jets: Vec::new(),
    })
}

/// Distortion Z = (N-adapted Levi-Civita) - (canonical d-connection).
pub fn distortion(m: &DMetric, point: &[f64]) -> Result<DistortionData, GeomError> {
    let lc = levi_civita_nadapted(m, point)?;
    let can = canonical_dconnection(m, point)?;
    let z = lc
        .values
        .iter()
        .zip(&can.values)
        .map(|(a, b)| a - b)
        .collect();
    Ok(DistortionData {
        dim_h: lc.dim_h,
        dim_v: lc.dim_v,
        z,
    })
}

/// Anholonomy coefficients computed from metric jets (order >= 1).
pub fn anholonomy_from_jets(jets: &DMetricJets) -> AnholonomyData {
    let (nh, nv, d) = (jets.dim_h, jets.dim_v, jets.dim());
    let mut w = vec![0.0; d * d * d];
    let pos = |g: usize, a: usize, b: usize| (g * d + a) * d + b;
    for c in 0..nv {
        for i in 0..nh {
            for a in 0..nv {
                let v = jets.n[c][i].d1(nh + a);
                w[pos(nh + c, i, nh + a)] = v;
                w[pos(nh + c, nh + a, i)] = -v;
            }
        }
    }
    for a in 0..nv {
        for i in 0..nh {
            for j in (i + 1)..nh {
                let e_j_ni = jets.elongated_derive(&jets.n[a][i], j).value();
                let e_i_nj = jets.elongated_derive(&jets.n[a][j], i).value();
                let omega = e_j_ni - e_i_nj;
                w[pos(nh + a, i, j)] = omega;
                w[pos(nh + a, j, i)] = -omega;
            }
        }
    }
    AnholonomyData::from_raw(nh, nv, w)
}

/// Frame-bracket coefficient jets W^c_{ab} (layout (c d + a) d + b), one
/// order below the metric jets.
pub fn anholonomy_jets(jets: &DMetricJets) -> Vec<Jet> {
    let (nh, nv, d) = (jets.dim_h, jets.dim_v, jets.dim());
    let order = jets.g[0][0].order() - 1;
    let dim = jets.g[0][0].dim();
    let zero = Jet::constant(dim, order, 0.0);
    let mut w = vec![zero; d * d * d];
    let pos = |g: usize, a: usize, b: usize| (g * d + a) * d + b;
    for c in 0..nv {
        for i in 0..nh {
            for a in 0..nv {
                let v = jets.n[c][i].derive(nh + a);
                w[pos(nh + c, i, nh + a)] = v.clone();
                w[pos(nh + c, nh + a, i)] = v.neg();
            }
        }
    }
    for a in 0..nv {
        for i in 0..nh {
            for j in (i + 1)..nh {
                let omega = jets
                    .elongated_derive(&jets.n[a][i], j)
                    .sub(&jets.elongated_derive(&jets.n[a][j], i));
                w[pos(nh + a, i, j)] = omega.clone();
                w[pos(nh + a, j, i)] = omega.neg();
            }
        }
    }
    w
}

/// Torsion T^c_{ab} = Gamma^c_{ab} - Gamma^c_{ba} + W^c_{ab}.
fn torsion_values(conn: &ConnectionData, w: Option<&AnholonomyData>) -> Vec<f64> {
    let d = conn.dim();
    let mut t = vec![0.0; d * d * d];
    for c in 0..d {
        for a in 0..d {
            for b in 0..d {
                let mut v = conn.gamma(c, a, b) - conn.gamma(c, b, a);
                if let Some(w) = w {
                    v += w.w(c, a, b);
                }
                t[(c * d + a) * d + b] = v;
            }
        }
    }
    t
}

/// Full curvature of a connection given its coefficient jets.
/// `elong` supplies the frame (N-elongation + bracket); `None` means a
/// coordinate frame (plain partials, zero bracket).
fn curvature_values(
    gamma_jets: &[Jet],
    dim_h: usize,
    dim_v: usize,
    elong: Option<(&DMetricJets, &AnholonomyData)>,
) -> Vec<f64> {
    let d = dim_h + dim_v;
    let idx3 = |c: usize, a: usize, b: usize| (c * d + a) * d + b;
    let idx4 = |a: usize, b: usize, c: usize, dd: usize| ((a * d + b) * d + c) * d + dd;
    // e_mu(Gamma^c_{ab}) at value level
    let mut dgamma = vec![0.0; d * d * d * d]; // [mu][c][a][b]
    for mu in 0..d {
        for c in 0..d {
            for a in 0..d {
                for b in 0..d {
                    let j = &gamma_jets[idx3(c, a, b)];
                    let v = match elong {
                        Some((jets, _)) => jets.elongated_d1(j, mu),
                        None => j.d1(mu),
                    };
                    dgamma[((mu * d + c) * d + a) * d + b] = v;
                }
            }
        }
    }
    let gv_flat: Vec<f64> = gamma_jets.iter().map(|j| j.value()).collect();
    let gv = |c: usize, a: usize, b: usize| gv_flat[idx3(c, a, b)];
    let mut riem = vec![0.0; d * d * d * d];
    for al in 0..d {
        for be in 0..d {
            for ga in 0..d {
                for de in 0..d {
                    // R^al_{be ga de} = e_de G^al_{be ga} - e_ga G^al_{be de}
                    //   + G^ep_{be ga} G^al_{ep de} - G^ep_{be de} G^al_{ep ga}
                    //   + W^ep_{ga de} G^al_{be ep}
                    let mut v = dgamma[((de * d + al) * d + be) * d + ga]
                        - dgamma[((ga * d + al) * d + be) * d + de];
                    for ep in 0..d {
                        v += gv(ep, be, ga) * gv(al, ep, de) - gv(ep, be, de) * gv(al, ep, ga);
                    }
                    if let Some((_, w)) = elong {
                        for ep in 0..d {
                            let wv = w.w(ep, ga, de);
                            if wv != 0.0 {
                                v += wv * gv(al, be, ep);
                            }
                        }
                    }
                    riem[idx4(al, be, ga, de)] = v;
                }
            }
        }
    }
    riem
}

fn ricci_from_riemann(riem: &[f64], d: usize) -> Vec<f64> {
    let idx4 = |a: usize, b: usize, c: usize, dd: usize| ((a * d + b) * d + c) * d + dd;
    let mut ric = vec![0.0; d * d];
    for b in 0..d {
        for c in 0..d {
            let mut v = 0.0;
            for a in 0..d {
                v += riem[idx4(a, b, c, a)];
            }
            ric[b * d + c] = v;
        }
    }
    ric
}

/// Ricci (and scalar) of the canonical d-connection only: contracts the
/// curvature on the fly without materializing the full Riemann tensor.
/// Returns (connection, ricci[b*d+c], scalar_h, scalar_v).
pub fn canonical_ricci_from_jets(
    jets: &DMetricJets,
) -> Result<(ConnectionData, Vec<f64>, f64, f64), GeomError> {
    let (nh, nv, d) = (jets.dim_h, jets.dim_v, jets.dim());
    let gamma_jets = canonical_gamma_jets(jets)?;
    let w = anholonomy_from_jets(jets);
    let idx3 = |c: usize, a: usize, b: usize| (c * d + a) * d + b;
    let gv_flat: Vec<f64> = gamma_jets.iter().map(|j| j.value()).collect();
    let gv = |c: usize, a: usize, b: usize| gv_flat[idx3(c, a, b)];
    // e_mu Gamma values, only the contractions needed:
    // Ric_{b c} = sum_al [ e_al G^al_{b c} - e_c G^al_{b al}
    //   + sum_ep (G^ep_{b c} G^al_{ep al} - G^ep_{b al} G^al_{ep c})
    //   + sum_ep W^ep_{c al} G^al_{b ep} ]
    let mut ric = vec![0.0; d * d];
    for b in 0..d {
        for c in 0..d {
            let mut acc = 0.0;
            for al in 0..d {
                let mut v = jets.elongated_d1(&gamma_jets[idx3(al, b, c)], al)
                    - jets.elongated_d1(&gamma_jets[idx3(al, b, al)], c);
                for ep in 0..d {
                    v += gv(ep, b, c) * gv(al, ep, al) - gv(ep, b, al) * gv(al, ep, c);
                }
                for ep in 0..d {
                    let wv = w.w(ep, c, al);
                    if wv != 0.0 {
                        v += wv * gv(al, b, ep);
                    }
                }
                acc += v;
            }
            ric[b * d + c] = acc;
        }
    }
    let gi = linalg::inverse(&jets.g_values()).ok_or_else(|| singular(&[], 0.0))?;
    let hi = linalg::inverse(&jets.h_values()).ok_or_else(|| singular(&[], 0.0))?;
    let mut sh = 0.0;
    for i in 0..nh {
        for j in 0..nh {
            sh += gi[i][j] * ric[i * d + j];
        }
    }
    let mut sv = 0.0;
    for a in 0..nv {
        for b in 0..nv {
            sv += hi[a][b] * ric[(nh + a) * d + nh + b];
        }
    }
    let conn = ConnectionData {
        kind: ConnectionKind::CanonicalD,
        dim_h: nh,
        dim_v: nv,
        values: gv_flat,
        jets: gamma_jets,
    };
    Ok((conn, ric, sh, sv))
}

/// Torsion data only (metric smoothness 1 suffices).
pub fn torsion(m: &DMetric, kind: ConnectionKind, point: &[f64]) -> Result<CurvatureData, GeomError> {
    let jets = m.jets(point, 1).map_err(GeomError::Field)?;
    check_invertible(&jets, point)?;
    let (conn, w) = match kind {
        ConnectionKind::CanonicalD => {
            let g = canonical_gamma_jets(&jets)?;
            (
                connection_from_jets(kind, &jets, g),
                Some(anholonomy_from_jets(&jets)),
            )
        }
        ConnectionKind::NormalD => {
            let g = normal_gamma_jets(&jets)?;
            (
                connection_from_jets(kind, &jets, g),
                Some(anholonomy_from_jets(&jets)),
            )
        }
        ConnectionKind::LeviCivita => {
            let g = levi_civita_gamma_jets(&jets)?;
            (connection_from_jets(kind, &jets, g), None)
        }
    };
    Ok(CurvatureData {
        dim_h: jets.dim_h,
        dim_v: jets.dim_v,
        torsion: torsion_values(&conn, w.as_ref()),
        riemann: None,
        ricci: None,
        scalar_h: None,
        scalar_v: None,
        scalar: None,
    })
}

/// Full curvature (torsion, Riemann, Ricci, scalar) at a point.
pub fn curvature(
    m: &DMetric,
    kind: ConnectionKind,
    point: &[f64],
) -> Result<CurvatureData, GeomError> {
    let jets = m.jets(point, 2).map_err(GeomError::Field)?;
    check_invertible(&jets, point)?;
    curvature_from_jets(&jets, kind)
}

/// Full curvature from already-evaluated metric jets of order 2.
pub fn curvature_from_jets(
    jets: &DMetricJets,
    kind: ConnectionKind,
) -> Result<CurvatureData, GeomError> {
    Ok(connection_and_curvature_from_jets(jets, kind)?.1)
}

/// Connection data together with the full curvature, sharing one
/// coefficient-jet computation.
pub fn connection_and_curvature_from_jets(
    jets: &DMetricJets,
    kind: ConnectionKind,
) -> Result<(ConnectionData, CurvatureData), GeomError> {
    let (nh, nv, d) = (jets.dim_h, jets.dim_v, jets.dim());
    match kind {
        ConnectionKind::CanonicalD | ConnectionKind::NormalD => {
            let gamma_jets = match kind {
                ConnectionKind::CanonicalD => canonical_gamma_jets(jets)?,
                _ => normal_gamma_jets(jets)?,
            };
            let w = anholonomy_from_jets(jets);
            let conn = ConnectionData {
                kind,
                dim_h: nh,
                dim_v: nv,
                values: gamma_jets.iter().map(|j| j.value()).collect(),
                jets: gamma_jets,
            };
            let riem = curvature_values(&conn.jets, nh, nv, Some((jets, &w)));
            let ric = ricci_from_riemann(&riem, d);
            let gi = linalg::inverse(&jets.g_values()).ok_or_else(|| singular(&[], 0.0))?;
            let hi = linalg::inverse(&jets.h_values()).ok_or_else(|| singular(&[], 0.0))?;
            let mut sh = 0.0;
            for i in 0..nh {
                for j in 0..nh {
                    sh += gi[i][j] * ric[i * d + j];
                }
            }
            let mut sv = 0.0;
            for a in 0..nv {
                for b in 0..nv {
                    sv += hi[a][b] * ric[(nh + a) * d + nh + b];
                }
            }
            let curv = CurvatureData {
                dim_h: nh,
                dim_v: nv,
                torsion: torsion_values(&conn, Some(&w)),
                riemann: Some(riem),
                ricci: Some(ric),
                scalar_h: Some(sh),
                scalar_v: Some(sv),
                scalar: Some(sh + sv),
            };
            Ok((conn, curv))
        }
        ConnectionKind::LeviCivita => {
            let gamma_jets = levi_civita_gamma_jets(jets)?;
            let conn = ConnectionData {
                kind,
                dim_h: nh,
                dim_v: nv,
                values: gamma_jets.iter().map(|j| j.value()).collect(),
                jets: gamma_jets,
            };
            let riem = curvature_values(&conn.jets, nh, nv, None);
            let ric = ricci_from_riemann(&riem, d);
            let gc = coordinate_metric_jets(jets);
            let gc_vals: Vec<Vec<f64>> = gc
                .iter()
                .map(|r| r.iter().map(|j| j.value()).collect())
                .collect();
            let gi = linalg::inverse(&gc_vals).ok_or_else(|| singular(&[], 0.0))?;
            let mut s = 0.0;
            for a in 0..d {
                for b in 0..d {
                    s += gi[a][b] * ric[a * d + b];
                }
            }
            let curv = CurvatureData {
                dim_h: nh,
                dim_v: nv,
                torsion: torsion_values(&conn, None),
                riemann: Some(riem),
                ricci: Some(ric),
                scalar_h: None,
                scalar_v: None,
                scalar: Some(s),
            };
            Ok((conn, curv))
        }
    }
}

/// Mixed Einstein tensor E^a_b = Ric^a_b - 1/2 delta^a_b sR for a
/// d-connection, using the blockwise d-metric inverse.
pub fn einstein_mixed(jets: &DMetricJets, curv: &CurvatureData) -> Result<Vec<f64>, GeomError> {
    let (nh, nv, d) = (jets.dim_h, jets.dim_v, jets.dim());
    let gi = linalg::inverse(&jets.g_values()).ok_or_else(|| singular(&[], 0.0))?;
    let hi = linalg::inverse(&jets.h_values()).ok_or_else(|| singular(&[], 0.0))?;
    let ric = curv.ricci.as_ref().expect("need curvature");
    let sr = curv.scalar.expect("need curvature");
    let mut e = vec![0.0; d * d];
    for a in 0..d {
        for b in 0..d {
            let mut up = 0.0;
            if a < nh {
                for j in 0..nh {
                    up += gi[a][j] * ric[j * d + b];
                }
            } else {
                for c in 0..nv {
                    up += hi[a - nh][c] * ric[(nh + c) * d + b];
                }
            }
            e[a * d + b] = up - if a == b { 0.5 * sr } else { 0.0 };
        }
    }
    Ok(e)
}

/// Componentwise max-abs of the covariant derivative of the d-metric
/// (metric-compatibility residual of the canonical d-connection).
pub fn metric_compat_residual(m: &DMetric, point: &[f64]) -> Result<f64, GeomError> {
    let jets = m.jets(point, 1).map_err(GeomError::Field)?;
    check_invertible(&jets, point)?;
    let gamma = canonical_gamma_jets(&jets)?;
    let (nh, _nv, d) = (jets.dim_h, jets.dim_v, jets.dim());
    let idx3 = |c: usize, a: usize, b: usize| (c * d + a) * d + b;
    let gval = |c: usize, a: usize, b: usize| gamma[idx3(c, a, b)].value();
    // d-metric components in the N-adapted frame: block diagonal
    let gm = |a: usize, b: usize| -> f64 {
        if a < nh && b < nh {
            jets.g[a][b].value()
        } else if a >= nh && b >= nh {
            jets.h[a - nh][b - nh].value()
        } else {
            0.0
        }
    };
    let mut worst = 0.0f64;
    for mu in 0..d {
        for a in 0..d {
            for b in 0..d {
                // e_mu(g_ab) - G^c_{a mu} g_cb - G^c_{b mu} g_ac
                let e_g = if a < nh && b < nh {
                    jets.elongated_derive(&jets.g[a][b], mu).value()
                } else if a >= nh && b >= nh {
                    jets.elongated_derive(&jets.h[a - nh][b - nh], mu).value()
                } else {
                    0.0
                };
                let mut v = e_g;
                for c in 0..d {
                    v -= gval(c, a, mu) * gm(c, b) + gval(c, b, mu) * gm(a, c);
                }
                worst = worst.max(v.abs());
            }
        }
    }
    Ok(worst)
}
