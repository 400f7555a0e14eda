//! Gamma d-matrices from N-adapted vielbeins, the canonical spin
//! d-connection, and the Dirac d-operator with its h/v split.
//!
//! Complex arithmetic appears only in this module. The flat gamma basis is a
//! fixed Dirac representation adapted to the chart signature: Hermitian
//! Euclidean generators, multiplied by i on negative-signature slots, so the
//! flat anticommutation relations are exact in integer/imaginary arithmetic.

use num_complex::Complex64;

use crate::connections;
use crate::error::{FieldError, GeomError};
use crate::field::ScalarField;
use crate::geometry::{DMetric, DMetricJets};
use crate::jet::Jet;
use crate::linalg;

pub type CMat = [[Complex64; 4]; 4];

pub fn cmat_zero() -> CMat {
    [[Complex64::new(0.0, 0.0); 4]; 4]
}

pub fn cmat_mul(a: &CMat, b: &CMat) -> CMat {
    let mut out = cmat_zero();
    for i in 0..4 {
        for j in 0..4 {
            let mut s = Complex64::new(0.0, 0.0);
            for k in 0..4 {
                s += a[i][k] * b[k][j];
            }
            out[i][j] = s;
        }
    }
    out
}

pub fn cmat_add(a: &CMat, b: &CMat) -> CMat {
    let mut out = *a;
    for i in 0..4 {
        for j in 0..4 {
            out[i][j] += b[i][j];
        }
    }
    out
}

pub fn cmat_sub(a: &CMat, b: &CMat) -> CMat {
    let mut out = *a;
    for i in 0..4 {
        for j in 0..4 {
            out[i][j] -= b[i][j];
        }
    }
    out
}

pub fn cmat_scale(a: &CMat, s: Complex64) -> CMat {
    let mut out = *a;
    for row in out.iter_mut() {
        for v in row.iter_mut() {
            *v *= s;
        }
    }
    out
}

pub fn cmat_adjoint(a: &CMat) -> CMat {
    let mut out = cmat_zero();
    for i in 0..4 {
        for j in 0..4 {
            out[i][j] = a[j][i].conj();
        }
    }
    out
}

pub fn cmat_max_abs(a: &CMat) -> f64 {
    a.iter()
        .flat_map(|r| r.iter())
        .fold(0.0f64, |m, v| m.max(v.norm()))
}

pub fn anticommutator(a: &CMat, b: &CMat) -> CMat {
    cmat_add(&cmat_mul(a, b), &cmat_mul(b, a))
}

pub fn commutator(a: &CMat, b: &CMat) -> CMat {
    cmat_sub(&cmat_mul(a, b), &cmat_mul(b, a))
}

/// Flat and curved gamma matrices at a point.
#[derive(Clone, Debug)]
pub struct GammaSet {
    /// Flat gammas gamma^{hat a} for the chart signature.
    pub flat: [CMat; 4],
    /// Curved gammas gamma^alpha(u) = e_{hat a}^alpha gamma^{hat a}.
    pub curved: [CMat; 4],
    /// Frame matrix e_{hat a}^alpha (columns hat-a, rows alpha).
    pub vielbein: Vec<Vec<f64>>,
}

fn pauli() -> [[[Complex64; 2]; 2]; 3] {
    let o = Complex64::new(0.0, 0.0);
    let l = Complex64::new(1.0, 0.0);
    let i = Complex64::new(0.0, 1.0);
    [
        [[o, l], [l, o]],
        [[o, -i], [i, o]],
        [[l, o], [o, -l]],
    ]
}

/// Hermitian Euclidean Dirac generators: gamma_k = offdiag(-i sigma_k,
/// i sigma_k) for k = 1..3 and gamma_4 = diag(I, -I); each squares to +I.
pub fn euclidean_gammas() -> [CMat; 4] {
    let s = pauli();
    let i = Complex64::new(0.0, 1.0);
    let mut out = [cmat_zero(); 4];
    for (k, sk) in s.iter().enumerate() {
        let mut m = cmat_zero();
        for a in 0..2 {
            for b in 0..2 {
                m[a][2 + b] = -i * sk[a][b];
                m[2 + a][b] = i * sk[a][b];
            }
        }
        out[k] = m;
    }
    let mut g4 = cmat_zero();
    for a in 0..2 {
        g4[a][a] = Complex64::new(1.0, 0.0);
        g4[2 + a][2 + a] = Complex64::new(-1.0, 0.0);
    }
    out[3] = g4;
    out
}

/// Flat gamma basis for a signature: negative slots carry a factor i so
/// that (gamma^a)^2 = signature[a] * I exactly.
pub fn flat_gammas(signature: &[f64]) -> [CMat; 4] {
    let base = euclidean_gammas();
    let mut out = [cmat_zero(); 4];
    for a in 0..4 {
        out[a] = if signature[a] > 0.0 {
            base[a]
        } else {
            cmat_scale(&base[a], Complex64::new(0.0, 1.0))
        };
    }
    out
}

/// Per-block eigendecomposition-based orthonormal vielbein: columns e_{hat a}
/// with sum_ab eta^{ab} e_a e_b^T = g^{-1} blockwise (signature-weighted).
pub fn orthonormal_vielbein(
    m: &DMetric,
    point: &[f64],
) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>), GeomError> {
    let jets = m.jets(point, 0).map_err(GeomError::Field)?;
    let (nh, nv, d) = (jets.dim_h, jets.dim_v, jets.dim());
    let mut viel = linalg::identity(d);
    let mut build = |vals: &Vec<Vec<f64>>, off: usize, nb: usize| -> Result<(), GeomError> {
        let (evals, evecs) = linalg::sym_eigen(vals);
        // pair each signature slot with an unused eigenvalue of equal sign
        let mut used = vec![false; nb];
        for a in 0..nb {
            let want = m.chart.signature[off + a];
            let mut found = None;
            for (k, &lam) in evals.iter().enumerate() {
                if !used[k] && (lam.signum() - want).abs() < 0.5 {
                    found = Some(k);
                    break;
                }
            }
            let k = found.ok_or(GeomError::SingularMetric {
                point: point.to_vec(),
                det: 0.0,
            })?;
            used[k] = true;
            for r in 0..nb {
                viel[off + r][off + a] = evecs[r][k] / evals[k].abs().sqrt();
            }
        }
        Ok(())
    };
    build(&jets.g_values(), 0, nh)?;
    build(&jets.h_values(), nh, nv)?;
    let inv = linalg::inverse(&viel).ok_or(GeomError::SingularMetric {
        point: point.to_vec(),
        det: 0.0,
    })?;
    Ok((viel, inv))
}

/// Signed LDL^T (Cholesky-type) vielbein as jets: smooth in the metric, so
/// frame derivatives are analytic. Returns e_{hat a}^alpha jets (block
/// diagonal; columns hat-a).
fn ldlt_vielbein_jets(jets: &DMetricJets, signature: &[f64]) -> Result<Vec<Vec<Jet>>, GeomError> {
    let (nh, nv, d) = (jets.dim_h, jets.dim_v, jets.dim());
    let order = jets.g[0][0].order();
    let dim = jets.g[0][0].dim();
    let zero = Jet::constant(dim, order, 0.0);
    let mut e = vec![vec![zero.clone(); d]; d];
    let mut block = |g: &Vec<Vec<Jet>>, off: usize, nb: usize| -> Result<(), GeomError> {
        // theta = sqrt|D| L^T upper-triangular coframe with g = L D L^T;
        // frame = theta^{-1}
        let mut l = vec![vec![zero.clone(); nb]; nb];
        let mut dvec = vec![zero.clone(); nb];
        for jcol in 0..nb {
            for irow in jcol..nb {
                let mut sum = g[irow][jcol].clone();
                for k in 0..jcol {
                    sum = sum.sub(&l[irow][k].mul(&l[jcol][k]).mul(&dvec[k]));
                }
                if irow == jcol {
                    if sum.value().signum() != signature[off + jcol].signum() {
                        return Err(GeomError::SingularMetric {
                            point: vec![],
                            det: sum.value(),
                        });
                    }
                    dvec[jcol] = sum;
                    l[jcol][jcol] = Jet::constant(dim, order, 1.0);
                } else {
                    l[irow][jcol] = sum.div(&dvec[jcol]);
                }
            }
        }
        // theta^{hat a}_alpha = sqrt|d_a| (L^T)_{a alpha}
        let mut theta = vec![vec![zero.clone(); nb]; nb];
        for a in 0..nb {
            let root = dvec[a].abs().sqrt();
            for al in 0..nb {
                theta[a][al] = root.mul(&l[al][a]);
            }
        }
        let inv = linalg::inverse_jet(&theta).ok_or(GeomError::SingularMetric {
            point: vec![],
            det: 0.0,
        })?;
        // frame e_{hat a}^alpha = (theta^{-1})^alpha_{hat a}
        for al in 0..nb {
            for a in 0..nb {
                e[off + al][off + a] = inv[al][a].clone();
            }
        }
        Ok(())
    };
    block(&jets.g, 0, nh)?;
    block(&jets.h, nh, nv)?;
    Ok(e)
}

/// Gamma set at a point, built on the smooth LDL^T vielbein.
pub fn gamma_set(m: &DMetric, point: &[f64]) -> Result<GammaSet, GeomError> {
    let jets = m.jets(point, 1).map_err(GeomError::Field)?;
    let e = ldlt_vielbein_jets(&jets, &m.chart.signature)?;
    let flat = flat_gammas(&m.chart.signature);
    let mut curved = [cmat_zero(); 4];
    let mut viel = vec![vec![0.0; 4]; 4];
    for al in 0..4 {
        let mut acc = cmat_zero();
        for a in 0..4 {
            let v = e[al][a].value();
            viel[al][a] = v;
            if v != 0.0 {
                acc = cmat_add(&acc, &cmat_scale(&flat[a], Complex64::new(v, 0.0)));
            }
        }
        curved[al] = acc;
    }
    Ok(GammaSet {
        flat,
        curved,
        vielbein: viel,
    })
}

/// Canonical spin d-connection: per N-adapted direction mu, the matrix
/// Omega_mu = 1/4 omega_{mu a b} gamma^a gamma^b with
/// omega_mu^a_b = e^a_nu (e_mu(e_b^nu) + Gamma^nu_{lam mu} e_b^lam).
pub struct SpinConnection {
    pub omega: [CMat; 4],
    /// the underlying frame coefficient values e_{hat a}^alpha
    pub vielbein: Vec<Vec<f64>>,
    /// coefficient matrix omega_{mu}{}^{hat a}{}_{hat b}
    pub omega_coeff: [[[f64; 4]; 4]; 4],
}

pub fn spin_dconnection(m: &DMetric, point: &[f64]) -> Result<SpinConnection, GeomError> {
    let jets = m.jets(point, 1).map_err(GeomError::Field)?;
    let e_jets = ldlt_vielbein_jets(&jets, &m.chart.signature)?;
    let conn = connections::canonical_dconnection(m, point)?;
    let d = 4usize;
    // inverse vielbein theta^{hat b}_nu (values)
    let e_vals: Vec<Vec<f64>> = e_jets
        .iter()
        .map(|r| r.iter().map(|j| j.value()).collect())
        .collect();
    let theta = linalg::inverse(&e_vals).ok_or(GeomError::SingularMetric {
        point: point.to_vec(),
        det: 0.0,
    })?;
    // theta indexed [hat a][nu]: inverse of e[nu][hat a]
    let flat = flat_gammas(&m.chart.signature);
    let eta: Vec<f64> = m.chart.signature.clone();
    let mut omega = [cmat_zero(); 4];
    let mut omega_coeff = [[[0.0; 4]; 4]; 4];
    for mu in 0..d {
        // omega_mu^{hat a}_{hat b}
        let mut om = [[0.0f64; 4]; 4];
        for a in 0..d {
            for b in 0..d {
                let mut acc = 0.0;
                for nu in 0..d {
                    let mut v = jets.elongated_d1(&e_jets[nu][b], mu);
                    for lam in 0..d {
                        v += conn.gamma(nu, lam, mu) * e_vals[lam][b];
                    }
                    acc += theta[a][nu] * v;
                }
                om[a][b] = acc;
            }
        }
        omega_coeff[mu] = om;
        // Omega_mu = 1/4 eta_{a c} om^c_b gamma^a gamma^b
        let mut acc = cmat_zero();
        for a in 0..d {
            for b in 0..d {
                let w = eta[a] * om[a][b];
                if w != 0.0 {
                    let gg = cmat_mul(&flat[a], &flat[b]);
                    acc = cmat_add(&acc, &cmat_scale(&gg, Complex64::new(0.25 * w, 0.0)));
                }
            }
        }
        omega[mu] = acc;
    }
    Ok(SpinConnection {
        omega,
        vielbein: e_vals,
        omega_coeff,
    })
}

/// 4-component complex spinor field: component pairs (re, im).
#[derive(Clone, Debug)]
pub struct SpinorField {
    pub components: [(ScalarField, ScalarField); 4],
}

impl SpinorField {
    pub fn constant(dim: usize, values: [Complex64; 4]) -> SpinorField {
        SpinorField {
            components: std::array::from_fn(|k| {
                (
                    ScalarField::constant(dim, values[k].re),
                    ScalarField::constant(dim, values[k].im),
                )
            }),
        }
    }

    pub fn value(&self, point: &[f64]) -> Result<[Complex64; 4], FieldError> {
        let mut out = [Complex64::new(0.0, 0.0); 4];
        for (k, (re, im)) in self.components.iter().enumerate() {
            out[k] = Complex64::new(re.eval(point)?, im.eval(point)?);
        }
        Ok(out)
    }

    fn jets(&self, point: &[f64]) -> Result<[(Jet, Jet); 4], FieldError> {
        let mut out: Vec<(Jet, Jet)> = Vec::with_capacity(4);
        for (re, im) in &self.components {
            out.push((
                re.eval_jet(point, 1)?.jet().clone(),
                im.eval_jet(point, 1)?.jet().clone(),
            ));
        }
        Ok(out.try_into().unwrap())
    }
}

/// Result of applying the Dirac d-operator: total and the h/v parts.
#[derive(Clone, Debug)]
pub struct DiracValue {
    pub total: [Complex64; 4],
    pub h_part: [Complex64; 4],
    pub v_part: [Complex64; 4],
}

/// Dirac d-operator: D psi = -i gamma^alpha (e_alpha psi + Omega_alpha psi),
/// with the horizontal and vertical parts reported separately.
pub fn dirac_apply(m: &DMetric, psi: &SpinorField, point: &[f64]) -> Result<DiracValue, GeomError> {
    let jets = m.jets(point, 1).map_err(GeomError::Field)?;
    let sc = spin_dconnection(m, point)?;
    let gs = gamma_set(m, point)?;
    let pj = psi.jets(point).map_err(GeomError::Field)?;
    let psi_val: [Complex64; 4] =
        std::array::from_fn(|k| Complex64::new(pj[k].0.value(), pj[k].1.value()));
    let minus_i = Complex64::new(0.0, -1.0);
    let mut h = [Complex64::new(0.0, 0.0); 4];
    let mut v = [Complex64::new(0.0, 0.0); 4];
    for al in 0..4 {
        // e_alpha psi + Omega_alpha psi
        let mut dpsi = [Complex64::new(0.0, 0.0); 4];
        for k in 0..4 {
            dpsi[k] = Complex64::new(
                jets.elongated_d1(&pj[k].0, al),
                jets.elongated_d1(&pj[k].1, al),
            );
            for l in 0..4 {
                dpsi[k] += sc.omega[al][k][l] * psi_val[l];
            }
        }
        // gamma^alpha acting on it
        for k in 0..4 {
            let mut acc = Complex64::new(0.0, 0.0);
            for l in 0..4 {
                acc += gs.curved[al][k][l] * dpsi[l];
            }
            let contrib = minus_i * acc;
            if al < 2 {
                h[k] += contrib;
            } else {
                v[k] += contrib;
            }
        }
    }
    let total = std::array::from_fn(|k| h[k] + v[k]);
    Ok(DiracValue {
        total,
        h_part: h,
        v_part: v,
    })
}

/// Residual of the covariant constancy of the curved gammas (the tetrad
/// postulate) in direction mu.
pub fn tetrad_postulate_residual(m: &DMetric, point: &[f64]) -> Result<f64, GeomError> {
    let jets = m.jets(point, 1).map_err(GeomError::Field)?;
    let e_jets = ldlt_vielbein_jets(&jets, &m.chart.signature)?;
    let conn = connections::canonical_dconnection(m, point)?;
    let sc = spin_dconnection(m, point)?;
    let flat = flat_gammas(&m.chart.signature);
    let mut worst = 0.0f64;
    for mu in 0..4 {
        for nu in 0..4 {
            // e_mu(gamma^nu) + Gamma^nu_{lam mu} gamma^lam + [Omega_mu, gamma^nu]
            let mut mat = cmat_zero();
            for a in 0..4 {
                let dv = jets.elongated_d1(&e_jets[nu][a], mu);
                if dv != 0.0 {
                    mat = cmat_add(&mat, &cmat_scale(&flat[a], Complex64::new(dv, 0.0)));
                }
            }
            let mut gamma_nu = cmat_zero();
            let mut gamma_lam = [cmat_zero(); 4];
            for lam in 0..4 {
                for a in 0..4 {
                    let v = e_jets[lam][a].value();
                    if v != 0.0 {
                        gamma_lam[lam] =
                            cmat_add(&gamma_lam[lam], &cmat_scale(&flat[a], Complex64::new(v, 0.0)));
                    }
                }
            }
            gamma_nu = cmat_add(&gamma_nu, &gamma_lam[nu]);
            for lam in 0..4 {
                let g = conn.gamma(nu, lam, mu);
                if g != 0.0 {
                    mat = cmat_add(&mat, &cmat_scale(&gamma_lam[lam], Complex64::new(g, 0.0)));
                }
            }
            mat = cmat_add(&mat, &commutator(&sc.omega[mu], &gamma_nu));
            worst = worst.max(cmat_max_abs(&mat));
        }
    }
    Ok(worst)
}

/// L2 scalar product <psi, phi> = int (psi|phi) |nu_g| over a coordinate
/// box by the tensor trapezoid rule.
pub fn scalar_product(
    m: &DMetric,
    psi: &SpinorField,
    phi: &SpinorField,
    lo: &[f64; 4],
    hi: &[f64; 4],
    n_per_axis: usize,
) -> Result<Complex64, GeomError> {
    let n = n_per_axis;
    let mut acc = Complex64::new(0.0, 0.0);
    let step: Vec<f64> = (0..4).map(|d| (hi[d] - lo[d]) / (n as f64 - 1.0)).collect();
    let weight = |k: usize| if k == 0 || k == n - 1 { 0.5 } else { 1.0 };
    for i0 in 0..n {
        for i1 in 0..n {
            for i2 in 0..n {
                for i3 in 0..n {
                    let p = [
                        lo[0] + step[0] * i0 as f64,
                        lo[1] + step[1] * i1 as f64,
                        lo[2] + step[2] * i2 as f64,
                        lo[3] + step[3] * i3 as f64,
                    ];
                    let jets = m.jets(&p, 0).map_err(GeomError::Field)?;
                    let vol = (linalg::det(&jets.g_values()).abs()
                        * linalg::det(&jets.h_values()).abs())
                    .sqrt();
                    let a = psi.value(&p).map_err(GeomError::Field)?;
                    let b = phi.value(&p).map_err(GeomError::Field)?;
                    let mut dot = Complex64::new(0.0, 0.0);
                    for k in 0..4 {
                        dot += a[k].conj() * b[k];
                    }
                    let w = weight(i0) * weight(i1) * weight(i2) * weight(i3);
                    acc += dot * vol * w;
                }
            }
        }
    }
    let cell: f64 = step.iter().product();
    Ok(acc * cell)
}
