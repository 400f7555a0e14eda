//! N-adapted Moyal star product and the formal Wick/Fedosov machinery:
//! graded formal elements, the fiber Wick product, the delta operators, the
//! extended derivation, the flatness recursion and the induced star product
//! to low order.
//!
//! Fixed-point mode: every coefficient is a (complex) jet at the base point,
//! so all operators are finite-dimensional linear algebra. The imaginary
//! unit lives in split real/imaginary coefficient parts.

use std::collections::BTreeMap;

use num_complex::Complex64;

use crate::error::FedosovError;
use crate::field::ScalarField;
use crate::geometry::DMetricJets;
use crate::jet::Jet;
use crate::linalg;

pub const DEFAULT_DEG_MAX: u32 = 6;

/// Complex-valued jet (split real/imaginary parts).
#[derive(Clone, Debug)]
pub struct CJet {
    pub re: Jet,
    pub im: Jet,
}

impl CJet {
    pub fn zero(dim: usize, order: usize) -> CJet {
        CJet {
            re: Jet::constant(dim, order, 0.0),
            im: Jet::constant(dim, order, 0.0),
        }
    }

    pub fn from_real(j: Jet) -> CJet {
        let z = Jet::constant(j.dim(), j.order(), 0.0);
        CJet { re: j, im: z }
    }

    pub fn constant(dim: usize, order: usize, c: Complex64) -> CJet {
        CJet {
            re: Jet::constant(dim, order, c.re),
            im: Jet::constant(dim, order, c.im),
        }
    }

    pub fn value(&self) -> Complex64 {
        Complex64::new(self.re.value(), self.im.value())
    }

    fn order(&self) -> usize {
        self.re.order()
    }

    fn norm_min(a: &CJet, b: &CJet) -> usize {
        a.order().min(b.order())
    }

    pub fn add(&self, rhs: &CJet) -> CJet {
        let k = CJet::norm_min(self, rhs);
        CJet {
            re: self.re.truncate(k).add(&rhs.re.truncate(k)),
            im: self.im.truncate(k).add(&rhs.im.truncate(k)),
        }
    }

    pub fn mul(&self, rhs: &CJet) -> CJet {
        // constant factors rescale the other operand at its own order,
        // preserving its derivative content
        if self.re.is_constant() && self.im.is_constant() {
            return rhs.scale(self.value());
        }
        if rhs.re.is_constant() && rhs.im.is_constant() {
            return self.scale(rhs.value());
        }
        let k = CJet::norm_min(self, rhs);
        let (ar, ai) = (self.re.truncate(k), self.im.truncate(k));
        let (br, bi) = (rhs.re.truncate(k), rhs.im.truncate(k));
        CJet {
            re: ar.mul(&br).sub(&ai.mul(&bi)),
            im: ar.mul(&bi).add(&ai.mul(&br)),
        }
    }

    pub fn add_lenient(&self, rhs: &CJet) -> CJet {
        // adding a constant to a jet keeps the jet's order
        if (self.re.is_constant() && self.im.is_constant()) && self.re.order() < rhs.re.order() {
            let mut out = rhs.clone();
            out.re.coeff[0] += self.re.value();
            out.im.coeff[0] += self.im.value();
            return out;
        }
        if (rhs.re.is_constant() && rhs.im.is_constant()) && rhs.re.order() < self.re.order() {
            let mut out = self.clone();
            out.re.coeff[0] += rhs.re.value();
            out.im.coeff[0] += rhs.im.value();
            return out;
        }
        self.add(rhs)
    }

    pub fn scale(&self, c: Complex64) -> CJet {
        CJet {
            re: self.re.scale(c.re).sub(&self.im.scale(c.im)),
            im: self.re.scale(c.im).add(&self.im.scale(c.re)),
        }
    }

    pub fn is_negligible(&self, eps: f64) -> bool {
        self.re.coeff.iter().all(|c| c.abs() < eps) && self.im.coeff.iter().all(|c| c.abs() < eps)
    }
}

/// Term key: v-power, z-multidegree, wedge bitmask (ascending canonical).
pub type TermKey = (u8, [u8; 8], u8);

/// Finite sum of terms coeff(u) v^r z^{multi} e^{wedge-set}.
#[derive(Clone, Debug)]
pub struct FormalElement {
    /// number of z-variables (the chart dimension 2n)
    pub dim: usize,
    pub terms: BTreeMap<TermKey, CJet>,
}

pub fn deg_s(z: &[u8; 8]) -> u32 {
    z.iter().map(|&k| k as u32).sum()
}

pub fn total_deg(key: &TermKey) -> u32 {
    2 * key.0 as u32 + deg_s(&key.1)
}

impl FormalElement {
    pub fn zero(dim: usize) -> FormalElement {
        FormalElement {
            dim,
            terms: BTreeMap::new(),
        }
    }

    pub fn add_term(&mut self, key: TermKey, c: CJet) {
        if c.is_negligible(0.0) {
            return;
        }
        match self.terms.get_mut(&key) {
            Some(existing) => {
                *existing = existing.add_lenient(&c);
            }
            None => {
                self.terms.insert(key, c);
            }
        }
    }

    pub fn add(&self, rhs: &FormalElement) -> FormalElement {
        let mut out = self.clone();
        for (k, c) in &rhs.terms {
            out.add_term(*k, c.clone());
        }
        out
    }

    pub fn scale(&self, c: Complex64) -> FormalElement {
        FormalElement {
            dim: self.dim,
            terms: self
                .terms
                .iter()
                .map(|(k, v)| (*k, v.scale(c)))
                .collect(),
        }
    }

    pub fn sub(&self, rhs: &FormalElement) -> FormalElement {
        self.add(&rhs.scale(Complex64::new(-1.0, 0.0)))
    }

    /// Drop numerically-zero terms.
    pub fn compact(&self) -> FormalElement {
        FormalElement {
            dim: self.dim,
            terms: self
                .terms
                .iter()
                .filter(|(_, c)| !c.is_negligible(1e-300))
                .map(|(k, c)| (*k, c.clone()))
                .collect(),
        }
    }

    pub fn max_abs_value(&self) -> f64 {
        self.terms
            .values()
            .fold(0.0f64, |m, c| m.max(c.value().norm()))
    }

    /// Drop terms whose coefficient magnitude is below `eps` and,
    /// optionally, any term above a degree cap.
    pub fn pruned(&self, eps: f64, deg_cap: Option<u32>) -> FormalElement {
        FormalElement {
            dim: self.dim,
            terms: self
                .terms
                .iter()
                .filter(|(k, c)| {
                    !c.is_negligible(eps)
                        && deg_cap.map(|cap| total_deg(k) <= cap).unwrap_or(true)
                })
                .map(|(k, c)| (*k, c.clone()))
                .collect(),
        }
    }

    /// Max-abs value of the difference (by matching term keys).
    pub fn max_abs_diff(&self, rhs: &FormalElement) -> f64 {
        let mut worst = 0.0f64;
        for (k, c) in &self.terms {
            let other = rhs.terms.get(k).map(|c| c.value()).unwrap_or_default();
            worst = worst.max((c.value() - other).norm());
        }
        for (k, c) in &rhs.terms {
            if !self.terms.contains_key(k) {
                worst = worst.max(c.value().norm());
            }
        }
        worst
    }

    /// Projection onto the (deg_s, deg_a) = (0, 0) part.
    pub fn sigma(&self) -> FormalElement {
        FormalElement {
            dim: self.dim,
            terms: self
                .terms
                .iter()
                .filter(|(k, _)| deg_s(&k.1) == 0 && k.2 == 0)
                .map(|(k, c)| (*k, c.clone()))
                .collect(),
        }
    }

    /// Grading seen by the graded commutator: the form degree.
    pub fn max_deg_a(&self) -> u32 {
        self.terms
            .keys()
            .map(|k| k.2.count_ones())
            .max()
            .unwrap_or(0)
    }
}

/// Sign of prepending e^alpha to an ascending wedge set.
fn wedge_prepend(wedge: u8, alpha: usize) -> Option<(u8, f64)> {
    let bit = 1u8 << alpha;
    if wedge & bit != 0 {
        return None;
    }
    let below = (wedge & (bit - 1)).count_ones();
    let sign = if below % 2 == 0 { 1.0 } else { -1.0 };
    Some((wedge | bit, sign))
}

/// Sign of the exterior product of two disjoint ascending wedge sets
/// (a-set factors on the left).
fn wedge_product(wa: u8, wb: u8) -> Option<(u8, f64)> {
    if wa & wb != 0 {
        return None;
    }
    // count inversions: pairs (i in wa, j in wb) with i > j
    let mut inversions = 0u32;
    for j in 0..8 {
        if wb & (1 << j) != 0 {
            inversions += (wa >> (j + 1)).count_ones();
        }
    }
    let sign = if inversions % 2 == 0 { 1.0 } else { -1.0 };
    Some((wa | wb, sign))
}

/// Interior product contraction: removing e^alpha from an ascending wedge
/// gives (-1)^{position}.
fn wedge_remove(wedge: u8, alpha: usize) -> Option<(u8, f64)> {
    let bit = 1u8 << alpha;
    if wedge & bit == 0 {
        return None;
    }
    let below = (wedge & (bit - 1)).count_ones();
    let sign = if below % 2 == 0 { 1.0 } else { -1.0 };
    Some((wedge & !bit, sign))
}

/// Formal Wick product with truncation at `deg_max`; the overflow flag
/// reports dropped terms.
pub fn wick_product(
    a: &FormalElement,
    b: &FormalElement,
    lambda: &[Vec<CJet>],
    deg_max: u32,
) -> (FormalElement, bool) {
    let dim = a.dim;
    let mut out = FormalElement::zero(dim);
    let mut overflow = false;
    let half_i = Complex64::new(0.0, 0.5);
    let coeff_order = lambda[0][0].re.order();
    for (ka, ca) in &a.terms {
        for (kb, cb) in &b.terms {
            let Some((wedge, wsign)) = wedge_product(ka.2, kb.2) else {
                continue;
            };
            let base = ca.mul(cb).scale(Complex64::new(wsign, 0.0));
            // iterate ordered single contractions; path factors carry the
            // Lambda coefficient jets
            let mut frontier: BTreeMap<([u8; 8], [u8; 8]), CJet> = BTreeMap::new();
            frontier.insert(
                (ka.1, kb.1),
                CJet::constant(dim, coeff_order, Complex64::new(1.0, 0.0)),
            );
            let mut t = 0u32;
            let mut tfac = 1.0f64;
            loop {
                for ((za, zb), f) in &frontier {
                    let mut z = *za;
                    for d in 0..dim {
                        z[d] += zb[d];
                    }
                    let v = ka.0 as u32 + kb.0 as u32 + t;
                    let key = (v as u8, z, wedge);
                    if total_deg(&key) > deg_max {
                        overflow = true;
                        continue;
                    }
                    let fac = half_i.powu(t) / tfac;
                    out.add_term(key, base.mul(f).scale(fac));
                }
                let mut next: BTreeMap<([u8; 8], [u8; 8]), CJet> = BTreeMap::new();
                for ((za, zb), f) in &frontier {
                    for al in 0..dim {
                        if za[al] == 0 {
                            continue;
                        }
                        for be in 0..dim {
                            if zb[be] == 0 || lambda[al][be].is_negligible(0.0) {
                                continue;
                            }
                            let mut na = *za;
                            let mut nb = *zb;
                            na[al] -= 1;
                            nb[be] -= 1;
                            let add = f
                                .mul(&lambda[al][be])
                                .scale(Complex64::new(za[al] as f64 * zb[be] as f64, 0.0));
                            match next.get_mut(&(na, nb)) {
                                Some(e) => *e = e.add(&add),
                                None => {
                                    next.insert((na, nb), add);
                                }
                            }
                        }
                    }
                }
                if next.is_empty() {
                    break;
                }
                frontier = next;
                t += 1;
                tfac *= t as f64;
            }
        }
    }
    (out.compact(), overflow)
}

/// delta(a) = e^alpha wedge d_{z^alpha} a.
pub fn delta(a: &FormalElement) -> FormalElement {
    let mut out = FormalElement::zero(a.dim);
    for (k, c) in &a.terms {
        for al in 0..a.dim {
            if k.1[al] == 0 {
                continue;
            }
            let Some((wedge, sign)) = wedge_prepend(k.2, al) else {
                continue;
            };
            let mut z = k.1;
            z[al] -= 1;
            out.add_term(
                (k.0, z, wedge),
                c.scale(Complex64::new(sign * k.1[al] as f64, 0.0)),
            );
        }
    }
    out.compact()
}

/// delta^{-1}(a) = (1/(p+q)) z^alpha iota_{e_alpha}(a) on bihomogeneous
/// parts, zero on p = q = 0.
pub fn delta_inv(a: &FormalElement) -> FormalElement {
    let mut out = FormalElement::zero(a.dim);
    for (k, c) in &a.terms {
        let p = deg_s(&k.1);
        let q = k.2.count_ones();
        if p + q == 0 {
            continue;
        }
        for al in 0..a.dim {
            let Some((wedge, sign)) = wedge_remove(k.2, al) else {
                continue;
            };
            let mut z = k.1;
            z[al] += 1;
            out.add_term(
                (k.0, z, wedge),
                c.scale(Complex64::new(sign / (p + q) as f64, 0.0)),
            );
        }
    }
    out.compact()
}

/// Geometric data of the fixed-point Fedosov machinery.
pub struct FedosovContext {
    /// number of horizontal directions n (chart dimension 2n)
    pub n: usize,
    /// theta_{alpha beta} coefficient jets (N-adapted cobasis)
    pub theta_lo: Vec<Vec<Jet>>,
    /// theta^{alpha beta} values with theta^{rho mu} theta_{rho tau} = delta
    pub theta_up: Vec<Vec<f64>>,
    /// Lambda^{alpha beta} = theta^{alpha beta} - i g^{alpha beta}
    /// (coefficient jets; the Wick product differentiates through them)
    pub lambda: Vec<Vec<CJet>>,
    /// connection coefficient jets Gamma^c_{a b} (flattened (c d + a) d + b)
    pub gamma: Vec<Jet>,
    /// frame bracket coefficient jets W^c_{a b} (same layout)
    pub w_jets: Vec<Jet>,
    /// metric jets for N-elongated coefficient derivatives
    pub jets: DMetricJets,
}

impl FedosovContext {
    pub fn dim(&self) -> usize {
        2 * self.n
    }

    /// Flat trivial context: constant symplectic/metric data, zero
    /// connection.
    pub fn flat(n: usize, coeff_order: usize) -> FedosovContext {
        let d = 2 * n;
        let zero = Jet::constant(d, coeff_order, 0.0);
        let mut theta_lo = vec![vec![zero.clone(); d]; d];
        let mut theta_vals = vec![vec![0.0; d]; d];
        for i in 0..n {
            theta_lo[n + i][i] = Jet::constant(d, coeff_order, 1.0);
            theta_lo[i][n + i] = Jet::constant(d, coeff_order, -1.0);
            theta_vals[n + i][i] = 1.0;
            theta_vals[i][n + i] = -1.0;
        }
        let theta_up = linalg::mat_transpose(&linalg::inverse(&theta_vals).unwrap());
        let mut lambda = vec![vec![CJet::zero(d, coeff_order); d]; d];
        for a in 0..d {
            for b in 0..d {
                let g_up = if a == b { 1.0 } else { 0.0 };
                lambda[a][b] =
                    CJet::constant(d, coeff_order, Complex64::new(theta_up[a][b], -g_up));
            }
        }
        let gamma = vec![zero.clone(); d * d * d];
        let w_jets = vec![zero.clone(); d * d * d];
        let one = Jet::constant(d, coeff_order, 1.0);
        let mut g = vec![vec![zero.clone(); n]; n];
        for i in 0..n {
            g[i][i] = one.clone();
        }
        let jets = DMetricJets {
            dim_h: n,
            dim_v: n,
            g: g.clone(),
            h: g,
            n: vec![vec![zero.clone(); n]; n],
        };
        FedosovContext {
            n,
            theta_lo,
            theta_up,
            lambda,
            gamma,
            w_jets,
            jets,
        }
    }

    /// Context from an effective Lagrange model at a point: normal
    /// d-connection coefficients, the almost symplectic form from the
    /// Hessian, frame-bracket jets, and Lambda as coefficient jets.
    pub fn from_lagrange(
        model: &crate::lagrange::LagrangianModel,
        point: &[f64],
    ) -> Result<FedosovContext, crate::error::LagrangeError> {
        let n = model.n();
        let d = 2 * n;
        let order = 1usize;
        let jets = crate::lagrange::lagrange_metric_jets(model, point, 2)?;
        let gamma = crate::connections::normal_gamma_jets(&jets)
            .map_err(|e| crate::error::LagrangeError::Integration(e.to_string()))?;
        let zero = Jet::constant(d, order, 0.0);
        let mut theta_lo = vec![vec![zero.clone(); d]; d];
        for i in 0..n {
            for j in 0..n {
                theta_lo[n + i][j] = jets.h[i][j].truncate(order);
                theta_lo[j][n + i] = jets.h[i][j].truncate(order).neg();
            }
        }
        let theta_vals: Vec<Vec<f64>> = theta_lo
            .iter()
            .map(|r| r.iter().map(|j| j.value()).collect())
            .collect();
        let theta_up = linalg::mat_transpose(
            &linalg::inverse(&theta_vals)
                .ok_or_else(|| crate::error::LagrangeError::Integration("singular theta".into()))?,
        );
        let theta_up_jets = {
            let inv = linalg::inverse_jet(&theta_lo)
                .ok_or_else(|| crate::error::LagrangeError::Integration("singular theta".into()))?;
            let mut t = vec![vec![zero.clone(); d]; d];
            for a in 0..d {
                for b in 0..d {
                    t[a][b] = inv[b][a].clone();
                }
            }
            t
        };
        let h_lo: Vec<Vec<Jet>> = jets
            .h
            .iter()
            .map(|r| r.iter().map(|j| j.truncate(order)).collect())
            .collect();
        let hinv_jets = linalg::inverse_jet(&h_lo)
            .ok_or_else(|| crate::error::LagrangeError::Integration("singular metric".into()))?;
        let mut lambda = vec![vec![CJet::zero(d, order); d]; d];
        for a in 0..d {
            for b in 0..d {
                let gup = if a < n && b < n {
                    hinv_jets[a][b].clone()
                } else if a >= n && b >= n {
                    hinv_jets[a - n][b - n].clone()
                } else {
                    zero.clone()
                };
                lambda[a][b] = CJet {
                    re: theta_up_jets[a][b].clone(),
                    im: gup.scale(-1.0),
                };
            }
        }
        let w_jets = crate::connections::anholonomy_jets(&jets);
        Ok(FedosovContext {
            n,
            theta_lo,
            theta_up,
            lambda,
            gamma,
            w_jets,
            jets,
        })
    }

    /// Synthetic constant-coefficient context with unitary-algebra-valued
    /// connection matrices: Gamma^nu_{beta alpha} = (A_alpha)^nu_beta with
    /// each A in u(n) (antisymmetric and J-commuting), which makes the
    /// connection compatible with both the flat metric and the canonical
    /// symplectic form (so the extended derivation respects the Wick
    /// product), with nonzero torsion and curvature.
    pub fn synthetic(n: usize, coeff_order: usize, weights: &[f64]) -> FedosovContext {
        let mut ctx = FedosovContext::flat(n, coeff_order);
        let d = 2 * n;
        // u(2) generators for the block complex structure J = [[0, I], [-I, 0]]:
        // A = [[P, Q], [-Q, P]] with P antisymmetric, Q symmetric.
        let make_a = |p: f64, q11: f64, q12: f64, q22: f64| -> Vec<Vec<f64>> {
            let mut a = vec![vec![0.0; 4]; 4];
            a[0][1] = p;
            a[1][0] = -p;
            a[2][3] = p;
            a[3][2] = -p;
            let q = [[q11, q12], [q12, q22]];
            for i in 0..2 {
                for j in 0..2 {
                    a[i][2 + j] = q[i][j];
                    a[2 + i][j] = -q[i][j];
                }
            }
            a
        };
        let k1 = make_a(0.3, 0.2, -0.1, 0.15);
        let k2 = make_a(-0.12, 0.05, 0.22, -0.08);
        for al in 0..d {
            let (wa, wb) = (weights[al % weights.len()], weights[(al + 1) % weights.len()]);
            for nu in 0..d {
                for be in 0..d {
                    let v = wa * k1[nu][be] + wb * k2[nu][be];
                    ctx.gamma[(nu * d + be) * d + al] = Jet::constant(d, coeff_order, v);
                }
            }
        }
        ctx
    }

    fn gamma_at(&self, c: usize, a: usize, b: usize) -> &Jet {
        let d = self.dim();
        &self.gamma[(c * d + a) * d + b]
    }

    fn w_at(&self, c: usize, a: usize, b: usize) -> &Jet {
        let d = self.dim();
        &self.w_jets[(c * d + a) * d + b]
    }

    /// Torsion coefficient jets T^c_{ab} = Gamma^c_{ab} - Gamma^c_{ba} + W^c_{ab}.
    pub fn torsion_jet(&self, c: usize, a: usize, b: usize) -> Jet {
        self.gamma_at(c, a, b)
            .sub(self.gamma_at(c, b, a))
            .add(self.w_at(c, a, b))
    }

    /// Curvature coefficient jets in the component layout
    /// R^al_{be ga de} = e_de G^al_{be ga} - e_ga G^al_{be de} + G G - G G
    /// + W^ep_{ga de} G^al_{be ep} (values; coefficient jets one order lower).
    pub fn riemann_jet(&self, al: usize, be: usize, ga: usize, de: usize) -> Jet {
        let d = self.dim();
        let mut v = if self.gamma_at(al, be, ga).order() >= 1 {
            self.jets
                .elongated_derive(self.gamma_at(al, be, ga), de)
                .sub(&self.jets.elongated_derive(self.gamma_at(al, be, de), ga))
        } else {
            // constant-coefficient context: derivative terms vanish
            Jet::constant(d, 0, 0.0)
        };
        for ep in 0..self.dim() {
            let order = v.order();
            v = v.add(
                &self
                    .gamma_at(ep, be, ga)
                    .truncate(order)
                    .mul(&self.gamma_at(al, ep, de).truncate(order)),
            );
            v = v.sub(
                &self
                    .gamma_at(ep, be, de)
                    .truncate(order)
                    .mul(&self.gamma_at(al, ep, ga).truncate(order)),
            );
            let w = self.w_at(ep, ga, de);
            v = v.add(&w.truncate(order).mul(&self.gamma_at(al, be, ep).truncate(order)));
        }
        v
    }

    /// The torsion element zT = (z^gamma / 2) theta_{gamma tau} T^tau_{alpha
    /// beta} e^alpha wedge e^beta.
    pub fn torsion_element(&self, coeff_order: usize) -> FormalElement {
        let d = self.dim();
        let mut out = FormalElement::zero(d);
        for ga in 0..d {
            for al in 0..d {
                for be in 0..d {
                    if al == be {
                        continue;
                    }
                    let mut coeff = Jet::constant(d, coeff_order, 0.0);
                    for tau in 0..d {
                        let t = self.torsion_jet(tau, al, be).truncate(coeff_order);
                        coeff = coeff.add(&self.theta_lo[ga][tau].truncate(coeff_order).mul(&t));
                    }
                    // wedge e^al ^ e^be with al possibly > be
                    let (lo, hi, sgn) = if al < be {
                        (al, be, 1.0)
                    } else {
                        (be, al, -1.0)
                    };
                    let mut z = [0u8; 8];
                    z[ga] = 1;
                    let wedge = (1u8 << lo) | (1u8 << hi);
                    out.add_term(
                        (0, z, wedge),
                        CJet::from_real(coeff.scale(0.5 * sgn)),
                    );
                }
            }
        }
        out.compact()
    }

    /// The curvature element zR = (z^gamma z^phi / 4) theta_{gamma tau}
    /// R^tau_{phi alpha beta} e^alpha wedge e^beta.
    pub fn curvature_element(&self, coeff_order: usize) -> FormalElement {
        let d = self.dim();
        let mut out = FormalElement::zero(d);
        for ga in 0..d {
            for phi in 0..d {
                for al in 0..d {
                    for be in 0..d {
                        if al == be {
                            continue;
                        }
                        let mut coeff = Jet::constant(d, coeff_order, 0.0);
                        for tau in 0..d {
                            let r = self.riemann_jet(tau, phi, al, be).truncate(coeff_order);
                            coeff =
                                coeff.add(&self.theta_lo[ga][tau].truncate(coeff_order).mul(&r));
                        }
                        let (lo, hi, sgn) = if al < be {
                            (al, be, 1.0)
                        } else {
                            (be, al, -1.0)
                        };
                        let mut z = [0u8; 8];
                        z[ga] += 1;
                        z[phi] += 1;
                        let wedge = (1u8 << lo) | (1u8 << hi);
                        out.add_term(
                            (0, z, wedge),
                            CJet::from_real(coeff.scale(0.25 * sgn)),
                        );
                    }
                }
            }
        }
        out.compact()
    }
}

/// The extended derivation D(a): N-elongated coefficient derivative wedged
/// by e^alpha, the -z^beta Gamma^gamma_{beta alpha} d_{z^gamma} term, and
/// the anholonomic d(lambda) action on wedge factors
/// (d e^mu = -1/2 W^mu_{alpha beta} e^alpha wedge e^beta).
pub fn extend_d(a: &FormalElement, ctx: &FedosovContext) -> FormalElement {
    let d = ctx.dim();
    let mut out = FormalElement::zero(d);
    for (k, c) in &a.terms {
        // (1) coefficient derivative
        for al in 0..d {
            if c.order() == 0 {
                break;
            }
            let dc = CJet {
                re: ctx.jets.elongated_derive(&c.re, al),
                im: ctx.jets.elongated_derive(&c.im, al),
            };
            if dc.is_negligible(0.0) {
                continue;
            }
            if let Some((wedge, sign)) = wedge_prepend(k.2, al) {
                out.add_term((k.0, k.1, wedge), dc.scale(Complex64::new(sign, 0.0)));
            }
        }
        // (2) z-connection term: - e^al ^ z^be Gamma^ga_{be al} d_{z^ga}
        for al in 0..d {
            let Some((wedge, sign)) = wedge_prepend(k.2, al) else {
                continue;
            };
            for ga in 0..d {
                if k.1[ga] == 0 {
                    continue;
                }
                for be in 0..d {
                    let gam = ctx.gamma_at(ga, be, al);
                    if gam.is_zero() {
                        continue;
                    }
                    let mut z = k.1;
                    z[ga] -= 1;
                    z[be] += 1;
                    let coeff = c.mul(&CJet::from_real(gam.clone()));
                    out.add_term(
                        (k.0, z, wedge),
                        coeff.scale(Complex64::new(-sign * k.1[ga] as f64, 0.0)),
                    );
                }
            }
        }
        // (3) d(lambda): replace each wedge factor e^mu by
        // -1/2 W^mu_{al be} e^al ^ e^be. Extracting e^mu to the front via
        // wedge_remove already carries the Leibniz pass-over sign.
        for mu in 0..8 {
            if k.2 & (1 << mu) == 0 {
                continue;
            }
            let (rest, rsign) = wedge_remove(k.2, mu).unwrap();
            for al in 0..d {
                for be in (al + 1)..d {
                    let w = ctx.w_at(mu, al, be);
                    if w.is_zero() {
                        continue;
                    }
                    let Some((w1, s1)) = wedge_prepend(rest, be) else {
                        continue;
                    };
                    let Some((w2, s2)) = wedge_prepend(w1, al) else {
                        continue;
                    };
                    let coeff = c.mul(&CJet::from_real(w.clone()));
                    // d e^mu = - sum_{al < be} W^mu_{al be} e^al ^ e^be
                    out.add_term(
                        (k.0, k.1, w2),
                        coeff.scale(Complex64::new(-rsign * s1 * s2, 0.0)),
                    );
                }
            }
        }
    }
    out.compact()
}

/// Graded Wick commutator [a, b] = a o b - (-1)^{qa qb} b o a.
pub fn graded_commutator(
    a: &FormalElement,
    b: &FormalElement,
    ctx: &FedosovContext,
    deg_max: u32,
) -> (FormalElement, bool) {
    let (ab, o1) = wick_product(a, b, &ctx.lambda, deg_max);
    let (ba, o2) = wick_product(b, a, &ctx.lambda, deg_max);
    let qa = a.max_deg_a();
    let qb = b.max_deg_a();
    let sign = if (qa * qb) % 2 == 0 { -1.0 } else { 1.0 };
    (ab.add(&ba.scale(Complex64::new(sign, 0.0))), o1 || o2)
}

/// (i/v) ad_Wick(r)(a): the graded commutator divided by v (every surviving
/// commutator term carries at least one contraction, so v-powers stay
/// nonnegative).
pub fn ad_over_v(
    r: &FormalElement,
    a: &FormalElement,
    ctx: &FedosovContext,
    deg_max: u32,
) -> Result<FormalElement, FedosovError> {
    let (comm, _) = graded_commutator(r, a, ctx, deg_max + 2);
    let mut out = FormalElement::zero(comm.dim);
    for (k, c) in &comm.terms {
        if k.0 == 0 {
            if c.is_negligible(1e-12) {
                continue;
            }
            return Err(FedosovError::TruncationOverflow { deg_max });
        }
        let key = (k.0 - 1, k.1, k.2);
        if total_deg(&key) > deg_max {
            continue;
        }
        out.add_term(key, c.scale(Complex64::new(0.0, 1.0)));
    }
    Ok(out.compact())
}

/// The flatness recursion: r with r^{(0)} = r^{(1)} = 0,
/// r^{(2)} = dinv(T), r^{(3)} = dinv(R + D r2 - (i/v) r2 o r2), and the
/// Deg-balanced quadratic pairing for k >= 1.
pub fn recursion_r(
    ctx: &FedosovContext,
    deg_max: u32,
    coeff_order: usize,
) -> Result<Vec<FormalElement>, FedosovError> {
    let d = ctx.dim();
    let t_el = ctx.torsion_element(coeff_order);
    let r_el = ctx.curvature_element(coeff_order);
    let mut comps: Vec<FormalElement> = vec![FormalElement::zero(d); (deg_max + 1) as usize];
    if deg_max < 3 {
        return Err(FedosovError::Order {
            requested: deg_max as usize,
            cap: 3,
        });
    }
    comps[2] = delta_inv(&t_el);
    {
        let dr2 = extend_d(&comps[2], ctx);
        let (q, _) = wick_product(&comps[2], &comps[2], &ctx.lambda, deg_max + 2);
        let quad = shift_v_down(&q, deg_max)?;
        comps[3] = delta_inv(&r_el.add(&dr2).sub(&quad));
    }
    for k in 1..=(deg_max as usize).saturating_sub(3) {
        // r^{(k+3)} = dinv( D r^{(k+2)} - (i/v) sum_{l=0}^{k} r^{(l+2)} o r^{(k-l+2)} );
        // the t = 0 layers cancel across the symmetric l-sum, so the v-shift
        // happens after accumulation.
        let mut rhs = extend_d(&comps[k + 2], ctx);
        let mut quad_sum = FormalElement::zero(d);
        for l in 0..=k {
            let (q, _) = wick_product(&comps[l + 2], &comps[k - l + 2], &ctx.lambda, deg_max + 2);
            quad_sum = quad_sum.add(&q);
        }
        rhs = rhs.sub(&shift_v_down(&quad_sum, deg_max)?);
        comps[k + 3] = delta_inv(&rhs);
    }
    Ok(comps)
}

/// (i/v) a: shift v-powers down by one (the t = 0 layer must have cancelled
/// in the caller's accumulation; a surviving one is an error).
fn shift_v_down(a: &FormalElement, deg_max: u32) -> Result<FormalElement, FedosovError> {
    let mut out = FormalElement::zero(a.dim);
    for (k, c) in &a.terms {
        if k.0 == 0 {
            if c.is_negligible(1e-12) {
                continue;
            }
            return Err(FedosovError::TruncationOverflow { deg_max });
        }
        let key = (k.0 - 1, k.1, k.2);
        if total_deg(&key) > deg_max {
            continue;
        }
        out.add_term(key, c.scale(Complex64::new(0.0, 1.0)));
    }
    Ok(out.compact())
}

/// The Abelian connection applied to a test element:
/// D_A(a) = -delta(a) + D(a) - (i/v) ad(r)(a).
pub fn abelian_connection(
    a: &FormalElement,
    r_comps: &[FormalElement],
    ctx: &FedosovContext,
    deg_max: u32,
) -> Result<FormalElement, FedosovError> {
    let mut out = delta(a).scale(Complex64::new(-1.0, 0.0));
    out = out.add(&extend_d(a, ctx));
    for rc in r_comps {
        if rc.terms.is_empty() {
            continue;
        }
        out = out.sub(&ad_over_v(rc, a, ctx, deg_max)?);
    }
    Ok(out.compact())
}

/// tau(f): the flat section with sigma(tau(f)) = f, built by the Deg
/// recursion tau^{(k+1)} = dinv( D tau^{(k)} - (i/v) sum ad(r^{(l+2)})
/// tau^{(k-l)} ).
pub fn tau_lift(
    f_jet: &Jet,
    r_comps: &[FormalElement],
    ctx: &FedosovContext,
    deg_max: u32,
) -> Result<FormalElement, FedosovError> {
    let d = ctx.dim();
    let mut comps: Vec<FormalElement> = Vec::new();
    let mut t0 = FormalElement::zero(d);
    t0.add_term((0, [0u8; 8], 0), CJet::from_real(f_jet.clone()));
    comps.push(t0);
    for k in 0..deg_max as usize {
        let mut rhs = extend_d(&comps[k], ctx);
        for l in 0..=k {
            if l + 2 < r_comps.len() && !r_comps[l + 2].terms.is_empty() {
                let ad = ad_over_v(&r_comps[l + 2], &comps[k - l], ctx, deg_max)?;
                rhs = rhs.sub(&ad);
            }
        }
        comps.push(delta_inv(&rhs));
    }
    let mut total = FormalElement::zero(d);
    for c in comps {
        total = total.add(&c);
    }
    Ok(total.compact())
}

/// Star-product coefficients of two scalar fields at the base point: the
/// v-expansion of sigma(tau(f) o tau(g)) through v^{v_order}.
pub fn fedosov_star(
    f: &ScalarField,
    g: &ScalarField,
    point: &[f64],
    r_comps: &[FormalElement],
    ctx: &FedosovContext,
    deg_max: u32,
    v_order: usize,
) -> Result<Vec<Complex64>, FedosovError> {
    if v_order > 2 {
        return Err(FedosovError::Order {
            requested: v_order,
            cap: 2,
        });
    }
    let order = crate::jet::MAX_ORDER.min(deg_max as usize);
    let fj = f.eval_jet(point, order)?.jet().clone();
    let gj = g.eval_jet(point, order)?.jet().clone();
    let tf = tau_lift(&fj, r_comps, ctx, deg_max)?;
    let tg = tau_lift(&gj, r_comps, ctx, deg_max)?;
    let (prod, _) = wick_product(&tf, &tg, &ctx.lambda, deg_max);
    let proj = prod.sigma();
    let mut coeffs = vec![Complex64::new(0.0, 0.0); v_order + 1];
    for (k, c) in &proj.terms {
        let vp = k.0 as usize;
        if vp <= v_order {
            coeffs[vp] += c.value();
        }
    }
    Ok(coeffs)
}

/// N-elongated Moyal star product evaluated at a point: sum over k <= order
/// of (1/k!)(i/2)^k theta^{a1 b1} ... (e_{a...} f)(e_{b...} g).
pub fn moyal_star(
    f: &ScalarField,
    g: &ScalarField,
    theta: &[Vec<f64>],
    jets: &DMetricJets,
    order: usize,
    point: &[f64],
) -> Result<Complex64, FedosovError> {
    if order > 3 {
        return Err(FedosovError::Order {
            requested: order,
            cap: 3,
        });
    }
    let d = jets.dim();
    let fj = f.eval_jet(point, order)?.jet().clone();
    let gj = g.eval_jet(point, order)?.jet().clone();
    // iterated N-elongated derivative values for all direction sequences
    fn iterated(jets: &DMetricJets, base: &Jet, seq: &[usize]) -> f64 {
        let mut j = base.clone();
        for &dir in &seq[..seq.len().saturating_sub(1)] {
            j = jets.elongated_derive(&j, dir);
        }
        match seq.last() {
            Some(&dir) => jets.elongated_d1(&j, dir),
            None => j.value(),
        }
    }
    let half_i = Complex64::new(0.0, 0.5);
    let mut total = Complex64::new(fj.value() * gj.value(), 0.0);
    let mut seqs: Vec<(Vec<usize>, Vec<usize>, f64)> = vec![(vec![], vec![], 1.0)];
    let mut pref = Complex64::new(1.0, 0.0);
    for k in 1..=order {
        pref *= half_i;
        let mut next = Vec::new();
        for (sa, sb, w) in &seqs {
            for al in 0..d {
                for be in 0..d {
                    if theta[al][be] == 0.0 {
                        continue;
                    }
                    let mut na = sa.clone();
                    let mut nb = sb.clone();
                    na.push(al);
                    nb.push(be);
                    next.push((na, nb, w * theta[al][be]));
                }
            }
        }
        seqs = next;
        let mut level = 0.0;
        for (sa, sb, w) in &seqs {
            level += w * iterated(jets, &fj, sa) * iterated(jets, &gj, sb);
        }
        total += pref * level / k_factorial(k);
    }
    Ok(total)
}

fn k_factorial(k: usize) -> f64 {
    (1..=k).map(|x| x as f64).product::<f64>().max(1.0)
}
