//! Truncated multivariate Taylor arithmetic (forward-mode jets).
//!
//! A [`Jet`] stores the Taylor coefficients c_alpha = (d^alpha f)/alpha! of a
//! function at a point, for every multi-index |alpha| <= order. Arithmetic,
//! composition with elementary functions and derivative extraction all stay
//! inside this ring, so any quantity assembled from jets carries analytic
//! derivatives of the inputs with no truncation error beyond f64 rounding.

use std::collections::HashMap;
use std::sync::OnceLock;

pub const MAX_DIM: usize = 8;
pub const MAX_ORDER: usize = 4;

pub type MultiIndex = [u8; MAX_DIM];

/// Index tables for one (dim, order) combination.
#[derive(Debug)]
pub struct JetShape {
    pub dim: usize,
    pub order: usize,
    /// Multi-indices in canonical order (by total degree, then lexicographic).
    pub indices: Vec<MultiIndex>,
    /// Total degree of each slot.
    pub degree: Vec<u8>,
    lookup: HashMap<MultiIndex, usize>,
    /// (i, j, k) triples with indices[i] + indices[j] = indices[k],
    /// deg_i + deg_j <= order.
    mul_table: Vec<(u16, u16, u16)>,
    /// Per direction: (out_pos, src_pos, factor) triples mapping this shape
    /// onto the order-1-lower shape under d_dir.
    deriv_tables: Vec<Vec<(u16, u16, f64)>>,
    /// Position of the degree-1 coefficient per direction.
    d1_pos: Vec<usize>,
    /// Position of the degree-2 coefficient per sorted pair (a <= b),
    /// flattened a * dim + b.
    d2_pos: Vec<usize>,
}

impl JetShape {
    fn build(dim: usize, order: usize) -> Self {
        assert!(dim >= 1 && dim <= MAX_DIM && order <= MAX_ORDER);
        let mut indices = Vec::new();
        let mut cur = vec![[0u8; MAX_DIM]];
        indices.push([0u8; MAX_DIM]);
        for _deg in 1..=order {
            let mut next = Vec::new();
            for idx in &cur {
                // raise only at positions >= last raised position to avoid duplicates
                let last = (0..dim).rev().find(|&d| idx[d] > 0).unwrap_or(0);
                for d in last..dim {
                    let mut n = *idx;
                    n[d] += 1;
                    next.push(n);
                }
            }
            next.sort();
            next.dedup();
            indices.extend(next.iter().copied());
            cur = next;
        }
        let degree: Vec<u8> = indices.iter().map(|i| i.iter().sum()).collect();
        let lookup: HashMap<MultiIndex, usize> = indices
            .iter()
            .enumerate()
            .map(|(k, i)| (*i, k))
            .collect();
        let mut mul_table = Vec::new();
        for (i, ia) in indices.iter().enumerate() {
            for (j, ib) in indices.iter().enumerate() {
                if degree[i] + degree[j] > order as u8 {
                    continue;
                }
                let mut sum = *ia;
                for d in 0..dim {
                    sum[d] += ib[d];
                }
                let k = lookup[&sum];
                mul_table.push((i as u16, j as u16, k as u16));
            }
        }
        let mut deriv_tables = Vec::with_capacity(dim);
        if order >= 1 {
            let lower = JetShape::indices_only(dim, order - 1);
            for dir in 0..dim {
                let mut tab = Vec::new();
                for (out_pos, idx) in lower.iter().enumerate() {
                    let mut src = *idx;
                    src[dir] += 1;
                    if let Some(&src_pos) = lookup.get(&src) {
                        tab.push((out_pos as u16, src_pos as u16, idx[dir] as f64 + 1.0));
                    }
                }
                deriv_tables.push(tab);
            }
        }
        let mut d1_pos = vec![usize::MAX; dim];
        let mut d2_pos = vec![usize::MAX; dim * dim];
        if order >= 1 {
            for dir in 0..dim {
                let mut idx = [0u8; MAX_DIM];
                idx[dir] = 1;
                d1_pos[dir] = lookup[&idx];
            }
        }
        if order >= 2 {
            for a in 0..dim {
                for b in a..dim {
                    let mut idx = [0u8; MAX_DIM];
                    idx[a] += 1;
                    idx[b] += 1;
                    let pos = lookup[&idx];
                    d2_pos[a * dim + b] = pos;
                    d2_pos[b * dim + a] = pos;
                }
            }
        }
        JetShape {
            dim,
            order,
            indices,
            degree,
            lookup,
            mul_table,
            deriv_tables,
            d1_pos,
            d2_pos,
        }
    }

    fn indices_only(dim: usize, order: usize) -> Vec<MultiIndex> {
        let mut indices = Vec::new();
        let mut cur = vec![[0u8; MAX_DIM]];
        indices.push([0u8; MAX_DIM]);
        for _deg in 1..=order {
            let mut next = Vec::new();
            for idx in &cur {
                let last = (0..dim).rev().find(|&d| idx[d] > 0).unwrap_or(0);
                for d in last..dim {
                    let mut n = *idx;
                    n[d] += 1;
                    next.push(n);
                }
            }
            next.sort();
            next.dedup();
            indices.extend(next.iter().copied());
            cur = next;
        }
        indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn position(&self, idx: &MultiIndex) -> Option<usize> {
        self.lookup.get(idx).copied()
    }
}

static SHAPES: [[OnceLock<&'static JetShape>; MAX_ORDER + 1]; MAX_DIM + 1] =
    [const { [const { OnceLock::new() }; MAX_ORDER + 1] }; MAX_DIM + 1];

/// Shapes are interned for the process lifetime; jets hold plain references
/// (no refcount traffic on the hot paths).
pub fn shape(dim: usize, order: usize) -> &'static JetShape {
    SHAPES[dim][order].get_or_init(|| Box::leak(Box::new(JetShape::build(dim, order))))
}

pub fn factorial(n: u8) -> f64 {
    const TAB: [f64; 9] = [1.0, 1.0, 2.0, 6.0, 24.0, 120.0, 720.0, 5040.0, 40320.0];
    TAB[n as usize]
}

/// alpha! for a multi-index.
pub fn multi_factorial(idx: &MultiIndex) -> f64 {
    idx.iter().map(|&k| factorial(k)).product()
}

/// Coefficient storage: inline up to 16 entries (order <= 2 in dim 4),
/// heap beyond.
#[derive(Clone, Debug)]
pub enum Coeffs {
    Small(u8, [f64; 16]),
    Big(Vec<f64>),
}

impl Coeffs {
    #[inline]
    pub fn zeros(len: usize) -> Coeffs {
        if len <= 16 {
            Coeffs::Small(len as u8, [0.0; 16])
        } else {
            Coeffs::Big(vec![0.0; len])
        }
    }

    #[inline]
    pub fn from_vec(v: Vec<f64>) -> Coeffs {
        if v.len() <= 16 {
            let mut a = [0.0; 16];
            a[..v.len()].copy_from_slice(&v);
            Coeffs::Small(v.len() as u8, a)
        } else {
            Coeffs::Big(v)
        }
    }
}

impl std::ops::Deref for Coeffs {
    type Target = [f64];
    #[inline]
    fn deref(&self) -> &[f64] {
        match self {
            Coeffs::Small(n, a) => &a[..*n as usize],
            Coeffs::Big(v) => v,
        }
    }
}

impl std::ops::DerefMut for Coeffs {
    #[inline]
    fn deref_mut(&mut self) -> &mut [f64] {
        match self {
            Coeffs::Small(n, a) => &mut a[..*n as usize],
            Coeffs::Big(v) => v,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Jet {
    pub shape: &'static JetShape,
    /// Taylor coefficients in shape order.
    pub coeff: Coeffs,
}

impl Jet {
    #[inline]
    pub fn from_vec(shape: &'static JetShape, coeff: Vec<f64>) -> Jet {
        debug_assert_eq!(coeff.len(), shape.len());
        Jet {
            shape,
            coeff: Coeffs::from_vec(coeff),
        }
    }

    #[inline]
    pub fn zeros_of(shape: &'static JetShape) -> Jet {
        let coeff = Coeffs::zeros(shape.len());
        Jet { shape, coeff }
    }
}

impl Jet {
    pub fn constant(dim: usize, order: usize, value: f64) -> Jet {
        let shape = shape(dim, order);
        let mut coeff = Coeffs::zeros(shape.len());
        coeff[0] = value;
        Jet { shape, coeff }
    }

    /// Jet of the coordinate function u^var at a point with u^var = value.
    pub fn variable(dim: usize, order: usize, var: usize, value: f64) -> Jet {
        let mut j = Jet::constant(dim, order, value);
        if order >= 1 {
            let mut idx = [0u8; MAX_DIM];
            idx[var] = 1;
            let pos = j.shape.position(&idx).unwrap();
            j.coeff[pos] = 1.0;
        }
        j
    }

    pub fn dim(&self) -> usize {
        self.shape.dim
    }

    pub fn order(&self) -> usize {
        self.shape.order
    }

    pub fn value(&self) -> f64 {
        self.coeff[0]
    }

    pub fn is_finite(&self) -> bool {
        self.coeff.iter().all(|c| c.is_finite())
    }

    /// Partial derivative d^alpha f (with the factorial reinstated).
    pub fn partial(&self, idx: &MultiIndex) -> f64 {
        match self.shape.position(idx) {
            Some(p) => self.coeff[p] * multi_factorial(idx),
            None => 0.0,
        }
    }

    /// First partial along `dir` (table-indexed).
    #[inline]
    pub fn d1(&self, dir: usize) -> f64 {
        if self.order() < 1 {
            return 0.0;
        }
        self.coeff[self.shape.d1_pos[dir]]
    }

    /// Second partial along (a, b) (table-indexed, factorial reinstated).
    #[inline]
    pub fn d2(&self, a: usize, b: usize) -> f64 {
        if self.order() < 2 {
            return 0.0;
        }
        let c = self.coeff[self.shape.d2_pos[a * self.dim() + b]];
        if a == b {
            2.0 * c
        } else {
            c
        }
    }

    /// Jet of the derivative d_dir f, truncated one order lower.
    pub fn derive(&self, dir: usize) -> Jet {
        assert!(self.order() >= 1, "cannot derive an order-0 jet");
        let out_shape = shape(self.dim(), self.order() - 1);
        let mut coeff = Coeffs::zeros(out_shape.len());
        for &(out, src, fac) in &self.shape.deriv_tables[dir] {
            coeff[out as usize] = self.coeff[src as usize] * fac;
        }
        Jet {
            shape: out_shape,
            coeff,
        }
    }

    /// Zero-extend to a higher order (or return unchanged). Only valid when
    /// the consumer provably ignores the padded coefficients. The canonical
    /// index order sorts by total degree, so lower-order coefficients form a
    /// prefix of the higher-order layout.
    pub fn embed(&self, order: usize) -> Jet {
        if order <= self.order() {
            return self.truncate(order);
        }
        let out_shape = shape(self.dim(), order);
        let mut coeff = Coeffs::zeros(out_shape.len());
        coeff[..self.coeff.len()].copy_from_slice(&self.coeff);
        Jet {
            shape: out_shape,
            coeff,
        }
    }

    /// Truncate to a lower order (or return unchanged); prefix slice under
    /// the canonical degree-major ordering.
    pub fn truncate(&self, order: usize) -> Jet {
        if order >= self.order() {
            return self.clone();
        }
        let out_shape = shape(self.dim(), order);
        let mut coeff = Coeffs::zeros(out_shape.len());
        let n = out_shape.len();
        coeff.copy_from_slice(&self.coeff[..n]);
        Jet {
            shape: out_shape,
            coeff,
        }
    }

    pub fn is_zero(&self) -> bool {
        self.coeff.iter().all(|&c| c == 0.0)
    }

    /// All derivative coefficients vanish (a constant jet).
    pub fn is_constant(&self) -> bool {
        self.coeff[1..].iter().all(|&c| c == 0.0)
    }

    pub fn scale(&self, s: f64) -> Jet {
        let mut out = self.clone();
        out.coeff.iter_mut().for_each(|c| *c *= s);
        out
    }

    pub fn add(&self, rhs: &Jet) -> Jet {
        debug_assert!(std::ptr::eq(self.shape, rhs.shape) || self.shape.len() == rhs.shape.len());
        let mut out = self.clone();
        out.coeff
            .iter_mut()
            .zip(rhs.coeff.iter())
            .for_each(|(a, b)| *a += b);
        out
    }

    pub fn sub(&self, rhs: &Jet) -> Jet {
        let mut out = self.clone();
        out.coeff
            .iter_mut()
            .zip(rhs.coeff.iter())
            .for_each(|(a, b)| *a -= b);
        out
    }

    pub fn neg(&self) -> Jet {
        self.scale(-1.0)
    }

    pub fn add_scalar(&self, s: f64) -> Jet {
        let mut out = self.clone();
        out.coeff[0] += s;
        out
    }

    pub fn mul(&self, rhs: &Jet) -> Jet {
        let shape = self.shape;
        if self.is_zero() || rhs.is_zero() {
            return Jet::zeros_of(shape);
        }
        let mut coeff = Coeffs::zeros(shape.len());
        for &(i, j, k) in &shape.mul_table {
            coeff[k as usize] += self.coeff[i as usize] * rhs.coeff[j as usize];
        }
        Jet { shape, coeff }
    }

    /// self += s * a * b without temporaries (shapes must match).
    pub fn mul_add_assign(&mut self, a: &Jet, b: &Jet, s: f64) {
        if a.is_zero() || b.is_zero() {
            return;
        }
        let shape = self.shape;
        for &(i, j, k) in &shape.mul_table {
            self.coeff[k as usize] += s * a.coeff[i as usize] * b.coeff[j as usize];
        }
    }

    /// self += s * a (shapes must match).
    pub fn add_assign_scaled(&mut self, a: &Jet, s: f64) {
        self.coeff
            .iter_mut()
            .zip(a.coeff.iter())
            .for_each(|(x, y)| *x += s * y);
    }

    /// Compose with a univariate function given its derivatives at self.value().
    /// `outer[k]` must hold the k-th derivative of the outer map, k = 0..=order.
    pub fn compose(&self, outer: &[f64]) -> Jet {
        let order = self.order();
        // delta = self with the constant part removed
        let mut delta = self.clone();
        delta.coeff[0] = 0.0;
        let mut result = Jet::constant(self.dim(), order, outer[0]);
        let mut power = Jet::constant(self.dim(), order, 1.0);
        for k in 1..=order {
            power = power.mul(&delta);
            result = result.add(&power.scale(outer[k] / factorial(k as u8)));
        }
        result
    }

    pub fn exp(&self) -> Jet {
        let e = self.value().exp();
        let d = [e; MAX_ORDER + 1];
        self.compose(&d[..=self.order()])
    }

    pub fn ln(&self) -> Jet {
        let v = self.value();
        let mut d = [0.0; MAX_ORDER + 1];
        d[0] = v.ln();
        // d^k ln v = (-1)^{k-1} (k-1)! / v^k
        let mut p = v;
        for k in 1..=self.order() {
            d[k] = if k % 2 == 1 { 1.0 } else { -1.0 } * factorial(k as u8 - 1) / p;
            p *= v;
        }
        self.compose(&d[..=self.order()])
    }

    pub fn sin(&self) -> Jet {
        let (s, c) = self.value().sin_cos();
        let cyc = [s, c, -s, -c, s];
        self.compose(&cyc[..=self.order()])
    }

    pub fn cos(&self) -> Jet {
        let (s, c) = self.value().sin_cos();
        let cyc = [c, -s, -c, s, c];
        self.compose(&cyc[..=self.order()])
    }

    pub fn sinh(&self) -> Jet {
        let (s, c) = (self.value().sinh(), self.value().cosh());
        let cyc = [s, c, s, c, s];
        self.compose(&cyc[..=self.order()])
    }

    pub fn cosh(&self) -> Jet {
        let (s, c) = (self.value().sinh(), self.value().cosh());
        let cyc = [c, s, c, s, c];
        self.compose(&cyc[..=self.order()])
    }

    pub fn tanh(&self) -> Jet {
        let t = self.value().tanh();
        let sech2 = 1.0 - t * t;
        // derivatives of tanh in terms of t
        let d1 = sech2;
        let d2 = -2.0 * t * sech2;
        let d3 = sech2 * (6.0 * t * t - 2.0);
        let d4 = sech2 * t * (16.0 - 24.0 * t * t) * -1.0 + 0.0;
        // d4 tanh = -8 t sech2 (3 t^2 - 2) ... use explicit formula:
        // t' = 1 - t^2; iterate symbolically:
        // d1 = 1 - t^2
        // d2 = -2 t (1-t^2)
        // d3 = (1-t^2)(6t^2 - 2)
        // d4 = (1-t^2)(-24 t^3 + 16 t) = -8t(1-t^2)(3t^2-2)
        let d4 = {
            let _ = d4;
            (1.0 - t * t) * (-24.0 * t * t * t + 16.0 * t)
        };
        let d = [t, d1, d2, d3, d4];
        self.compose(&d[..=self.order()])
    }

    pub fn sqrt(&self) -> Jet {
        let v = self.value();
        let r = v.sqrt();
        let mut d = [0.0; MAX_ORDER + 1];
        d[0] = r;
        // d^k sqrt(v): 1/2 v^{-1/2}, -1/4 v^{-3/2}, 3/8 v^{-5/2}, -15/16 v^{-7/2}
        let coefs = [0.5, -0.25, 0.375, -0.9375];
        let mut p = r / v; // v^{-1/2}
        for k in 1..=self.order() {
            d[k] = coefs[k - 1] * p;
            p /= v;
        }
        self.compose(&d[..=self.order()])
    }

    pub fn recip(&self) -> Jet {
        let v = self.value();
        let mut d = [0.0; MAX_ORDER + 1];
        let mut p = 1.0 / v;
        d[0] = p;
        for k in 1..=self.order() {
            p /= -v;
            d[k] = p * factorial(k as u8);
        }
        self.compose(&d[..=self.order()])
    }

    pub fn div(&self, rhs: &Jet) -> Jet {
        self.mul(&rhs.recip())
    }

    /// |f|, valid away from zeros of f (domain contract).
    pub fn abs(&self) -> Jet {
        if self.value() >= 0.0 {
            self.clone()
        } else {
            self.neg()
        }
    }

    pub fn powi(&self, n: i32) -> Jet {
        if n == 0 {
            return Jet::constant(self.dim(), self.order(), 1.0);
        }
        let mut base = if n < 0 { self.recip() } else { self.clone() };
        let mut k = n.unsigned_abs();
        let mut acc = Jet::constant(self.dim(), self.order(), 1.0);
        while k > 0 {
            if k & 1 == 1 {
                acc = acc.mul(&base);
            }
            base = base.mul(&base);
            k >>= 1;
        }
        acc
    }

    pub fn powf(&self, p: f64) -> Jet {
        if p == p.round() && p.abs() <= 16.0 {
            return self.powi(p as i32);
        }
        let v = self.value();
        let mut d = [0.0; MAX_ORDER + 1];
        let mut c = 1.0;
        let mut vp = v.powf(p);
        for k in 0..=self.order() {
            d[k] = c * vp;
            c *= p - k as f64;
            vp /= v;
        }
        self.compose(&d[..=self.order()])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn jet_xy(order: usize, x: f64, y: f64) -> (Jet, Jet) {
        (
            Jet::variable(2, order, 0, x),
            Jet::variable(2, order, 1, y),
        )
    }

    #[test]
    fn product_rule() {
        let (x, y) = jet_xy(2, 2.0, 3.0);
        let f = x.mul(&y);
        assert_eq!(f.value(), 6.0);
        assert_eq!(f.d1(0), 3.0);
        assert_eq!(f.d1(1), 2.0);
        assert_eq!(f.d2(0, 1), 1.0);
        assert_eq!(f.d2(0, 0), 0.0);
    }

    #[test]
    fn composition_chain() {
        // f = sin(x) * exp(y), third order mixed partials
        let (x, y) = jet_xy(3, 0.7, -0.4);
        let f = x.sin().mul(&y.exp());
        let ey = (-0.4f64).exp();
        let mut idx = [0u8; MAX_DIM];
        idx[0] = 2;
        idx[1] = 1;
        // d^2/dx^2 d/dy sin x e^y = -sin x e^y
        let expect = -(0.7f64).sin() * ey;
        assert!((f.partial(&idx) - expect).abs() < 1e-12);
    }

    #[test]
    fn reciprocal_and_sqrt() {
        let x = Jet::variable(1, 4, 0, 4.0);
        let r = x.sqrt();
        assert!((r.value() - 2.0).abs() < 1e-15);
        assert!((r.d1(0) - 0.25).abs() < 1e-15);
        let mut idx = [0u8; MAX_DIM];
        idx[0] = 2;
        assert!((r.partial(&idx) + 1.0 / 32.0).abs() < 1e-15);
        let inv = x.recip();
        assert!((inv.value() - 0.25).abs() < 1e-16);
        assert!((inv.d1(0) + 1.0 / 16.0).abs() < 1e-16);
    }

    #[test]
    fn derive_lowers_order() {
        let (x, y) = jet_xy(3, 1.1, 0.3);
        let f = x.powi(2).mul(&y.powi(3));
        let fx = f.derive(0);
        assert!((fx.value() - 2.0 * 1.1 * 0.3f64.powi(3)).abs() < 1e-14);
        assert!((fx.d1(1) - 2.0 * 1.1 * 3.0 * 0.3f64.powi(2)).abs() < 1e-13);
    }

    #[test]
    fn tanh_derivatives() {
        let x = Jet::variable(1, 4, 0, 0.3);
        let t = x.tanh();
        let h = 1e-5f64;
        let fd = ((0.3 + h).tanh() - (0.3 - h).tanh()) / (2.0 * h);
        assert!((t.d1(0) - fd).abs() < 1e-9);
    }
}
