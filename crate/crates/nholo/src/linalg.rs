//! Small dense linear algebra (dims <= 8), over f64 and over the jet ring.

use crate::jet::Jet;

pub fn mat_mul(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = a.len();
    let m = b[0].len();
    let k = b.len();
    let mut out = vec![vec![0.0; m]; n];
    for i in 0..n {
        for j in 0..m {
            let mut s = 0.0;
            for l in 0..k {
                s += a[i][l] * b[l][j];
            }
            out[i][j] = s;
        }
    }
    out
}

pub fn mat_transpose(a: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = a.len();
    let m = a[0].len();
    let mut out = vec![vec![0.0; n]; m];
    for i in 0..n {
        for j in 0..m {
            out[j][i] = a[i][j];
        }
    }
    out
}

pub fn identity(n: usize) -> Vec<Vec<f64>> {
    let mut m = vec![vec![0.0; n]; n];
    for (i, row) in m.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    m
}

/// Determinant by LU with partial pivoting.
pub fn det(a: &[Vec<f64>]) -> f64 {
    let n = a.len();
    let mut m: Vec<Vec<f64>> = a.to_vec();
    let mut d = 1.0;
    for col in 0..n {
        let mut piv = col;
        for r in col + 1..n {
            if m[r][col].abs() > m[piv][col].abs() {
                piv = r;
            }
        }
        if m[piv][col] == 0.0 {
            return 0.0;
        }
        if piv != col {
            m.swap(piv, col);
            d = -d;
        }
        d *= m[col][col];
        for r in col + 1..n {
            let f = m[r][col] / m[col][col];
            for c in col..n {
                m[r][c] -= f * m[col][c];
            }
        }
    }
    d
}

/// Inverse by Gauss-Jordan with partial pivoting; None when singular.
pub fn inverse(a: &[Vec<f64>]) -> Option<Vec<Vec<f64>>> {
    let n = a.len();
    let mut m: Vec<Vec<f64>> = a.to_vec();
    let mut inv = identity(n);
    for col in 0..n {
        let mut piv = col;
        for r in col + 1..n {
            if m[r][col].abs() > m[piv][col].abs() {
                piv = r;
            }
        }
        if m[piv][col].abs() < 1e-300 {
            return None;
        }
        m.swap(piv, col);
        inv.swap(piv, col);
        let p = m[col][col];
        for c in 0..n {
            m[col][c] /= p;
            inv[col][c] /= p;
        }
        for r in 0..n {
            if r == col {
                continue;
            }
            let f = m[r][col];
            if f == 0.0 {
                continue;
            }
            for c in 0..n {
                m[r][c] -= f * m[col][c];
                inv[r][c] -= f * inv[col][c];
            }
        }
    }
    Some(inv)
}

/// Inverse of a jet-valued matrix (pivot by value part). The jets form a
/// commutative ring; the constant part must be an invertible matrix.
pub fn inverse_jet(a: &[Vec<Jet>]) -> Option<Vec<Vec<Jet>>> {
    let n = a.len();
    let dim = a[0][0].dim();
    let order = a[0][0].order();
    let mut m: Vec<Vec<Jet>> = a.to_vec();
    let mut inv: Vec<Vec<Jet>> = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| Jet::constant(dim, order, if i == j { 1.0 } else { 0.0 }))
                .collect()
        })
        .collect();
    for col in 0..n {
        let mut piv = col;
        for r in col + 1..n {
            if m[r][col].value().abs() > m[piv][col].value().abs() {
                piv = r;
            }
        }
        if m[piv][col].value().abs() < 1e-300 {
            return None;
        }
        m.swap(piv, col);
        inv.swap(piv, col);
        let p = m[col][col].recip();
        for c in 0..n {
            m[col][c] = m[col][c].mul(&p);
            inv[col][c] = inv[col][c].mul(&p);
        }
        for r in 0..n {
            if r == col {
                continue;
            }
            let f = m[r][col].clone();
            if f.value() == 0.0 && f.coeff.iter().all(|&x| x == 0.0) {
                continue;
            }
            for c in 0..n {
                m[r][c] = m[r][c].sub(&f.mul(&m[col][c]));
                inv[r][c] = inv[r][c].sub(&f.mul(&inv[col][c]));
            }
        }
    }
    Some(inv)
}

pub fn det_jet(a: &[Vec<Jet>]) -> Jet {
    let n = a.len();
    match n {
        1 => a[0][0].clone(),
        2 => a[0][0].mul(&a[1][1]).sub(&a[0][1].mul(&a[1][0])),
        _ => {
            // Laplace expansion along the first row (n <= 4 in practice).
            let dim = a[0][0].dim();
            let order = a[0][0].order();
            let mut acc = Jet::constant(dim, order, 0.0);
            for j in 0..n {
                let minor: Vec<Vec<Jet>> = (1..n)
                    .map(|r| {
                        (0..n)
                            .filter(|&c| c != j)
                            .map(|c| a[r][c].clone())
                            .collect()
                    })
                    .collect();
                let term = a[0][j].mul(&det_jet(&minor));
                acc = if j % 2 == 0 { acc.add(&term) } else { acc.sub(&term) };
            }
            acc
        }
    }
}

/// Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.
/// Returns (eigenvalues, eigenvectors as columns).
pub fn sym_eigen(a: &[Vec<f64>]) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = a.len();
    let mut m: Vec<Vec<f64>> = a.to_vec();
    let mut v = identity(n);
    for _sweep in 0..64 {
        let mut off = 0.0;
        for i in 0..n {
            for j in i + 1..n {
                off += m[i][j] * m[i][j];
            }
        }
        if off < 1e-30 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if m[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (m[q][q] - m[p][p]) / (2.0 * m[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[k][p];
                    let mkq = m[k][q];
                    m[k][p] = c * mkp - s * mkq;
                    m[k][q] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[p][k];
                    let mqk = m[q][k];
                    m[p][k] = c * mpk - s * mqk;
                    m[q][k] = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let vkp = v[k][p];
                    let vkq = v[k][q];
                    v[k][p] = c * vkp - s * vkq;
                    v[k][q] = s * vkp + c * vkq;
                }
            }
        }
    }
    let vals = (0..n).map(|i| m[i][i]).collect();
    (vals, v)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inverse_roundtrip() {
        let a = vec![
            vec![2.0, 1.0, 0.0],
            vec![1.0, 3.0, 0.5],
            vec![0.0, 0.5, 1.5],
        ];
        let inv = inverse(&a).unwrap();
        let id = mat_mul(&a, &inv);
        for i in 0..3 {
            for j in 0..3 {
                let e = if i == j { 1.0 } else { 0.0 };
                assert!((id[i][j] - e).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn jacobi_eigen() {
        let a = vec![vec![2.0, 1.0], vec![1.0, 2.0]];
        let (vals, vecs) = sym_eigen(&a);
        let mut sorted = vals.clone();
        sorted.sort_by(f64::total_cmp);
        assert!((sorted[0] - 1.0).abs() < 1e-12);
        assert!((sorted[1] - 3.0).abs() < 1e-12);
        // A v = lambda v
        for k in 0..2 {
            for i in 0..2 {
                let av: f64 = (0..2).map(|j| a[i][j] * vecs[j][k]).sum();
                assert!((av - vals[k] * vecs[i][k]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn jet_matrix_inverse() {
        // g = [[1 + x^2, x],[x, 2]] as jets at x = 0.3
        let x = Jet::variable(1, 2, 0, 0.3);
        let one = Jet::constant(1, 2, 1.0);
        let two = Jet::constant(1, 2, 2.0);
        let g = vec![
            vec![one.add(&x.mul(&x)), x.clone()],
            vec![x.clone(), two],
        ];
        let gi = inverse_jet(&g).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                let mut s = Jet::constant(1, 2, 0.0);
                for l in 0..2 {
                    s = s.add(&g[i][l].mul(&gi[l][j]));
                }
                let e = if i == j { 1.0 } else { 0.0 };
                assert!((s.value() - e).abs() < 1e-14);
                assert!(s.d1(0).abs() < 1e-13);
            }
        }
    }
}
