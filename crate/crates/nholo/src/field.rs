//! Charts, domains and evaluable scalar fields with jet evaluation and an
//! independent finite-difference oracle.

use std::collections::{BTreeMap, HashMap};
use std::sync::{Arc, Mutex};

use crate::error::FieldError;
use crate::expr::{self, Expr};
use crate::jet::{multi_factorial, Jet, MultiIndex, MAX_DIM};
use crate::quadrature;

/// Coordinate chart u = (x^i, y^a) with a declared h/v split and signature.
#[derive(Clone, Debug)]
pub struct Chart {
    pub dim_h: usize,
    pub dim_v: usize,
    pub coordinate_names: Vec<String>,
    /// +1.0 or -1.0 per coordinate.
    pub signature: Vec<f64>,
}

impl Chart {
    pub fn new(
        dim_h: usize,
        dim_v: usize,
        names: &[&str],
        signature: &[f64],
    ) -> Result<Chart, FieldError> {
        let dim = dim_h + dim_v;
        if dim_h < 1 || dim_v < 1 || dim > MAX_DIM {
            return Err(FieldError::Parse {
                line: 0,
                col: 0,
                msg: format!("unsupported chart dimensions {dim_h}+{dim_v}"),
            });
        }
        if names.len() != dim || signature.len() != dim {
            return Err(FieldError::Parse {
                line: 0,
                col: 0,
                msg: "coordinate names / signature length must equal dim_h + dim_v".into(),
            });
        }
        if signature.iter().any(|s| s.abs() != 1.0) {
            return Err(FieldError::Parse {
                line: 0,
                col: 0,
                msg: "signature entries must be +1 or -1".into(),
            });
        }
        Ok(Chart {
            dim_h,
            dim_v,
            coordinate_names: names.iter().map(|s| s.to_string()).collect(),
            signature: signature.to_vec(),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim_h + self.dim_v
    }

    /// The 2+2 chart used by the gravity configurations.
    pub fn standard_2_2(signature: [f64; 4]) -> Chart {
        Chart::new(2, 2, &["x1", "x2", "y3", "y4"], &signature).unwrap()
    }

    pub fn euclidean_2_2() -> Chart {
        Chart::standard_2_2([1.0, 1.0, 1.0, 1.0])
    }
}

/// Axis-aligned box domain with optional excluded bands per axis.
#[derive(Clone, Debug)]
pub struct Domain {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub excluded: Vec<(usize, f64, f64)>,
}

impl Domain {
    pub fn unbounded(dim: usize) -> Domain {
        Domain {
            lo: vec![f64::NEG_INFINITY; dim],
            hi: vec![f64::INFINITY; dim],
            excluded: Vec::new(),
        }
    }

    pub fn boxed(lo: Vec<f64>, hi: Vec<f64>) -> Domain {
        Domain {
            lo,
            hi,
            excluded: Vec::new(),
        }
    }

    pub fn exclude_band(mut self, axis: usize, lo: f64, hi: f64) -> Domain {
        self.excluded.push((axis, lo, hi));
        self
    }

    pub fn contains(&self, p: &[f64]) -> bool {
        if p.len() != self.lo.len() {
            return false;
        }
        for i in 0..p.len() {
            if p[i] < self.lo[i] || p[i] > self.hi[i] {
                return false;
            }
        }
        for &(axis, lo, hi) in &self.excluded {
            if p[axis] > lo && p[axis] < hi {
                return false;
            }
        }
        true
    }

    /// Distance from the point to the nearest boundary (conservative, per axis).
    pub fn boundary_distance(&self, p: &[f64]) -> f64 {
        let mut d = f64::INFINITY;
        for i in 0..p.len() {
            if self.lo[i].is_finite() {
                d = d.min(p[i] - self.lo[i]);
            }
            if self.hi[i].is_finite() {
                d = d.min(self.hi[i] - p[i]);
            }
        }
        for &(axis, lo, hi) in &self.excluded {
            d = d.min((p[axis] - hi).abs().min((p[axis] - lo).abs()));
        }
        d
    }
}

/// Value and partial derivatives of a field at a point.
#[derive(Clone, Debug)]
pub struct JetValue {
    pub order: usize,
    jet: Jet,
}

impl JetValue {
    pub fn from_jet(jet: Jet) -> JetValue {
        JetValue {
            order: jet.order(),
            jet,
        }
    }

    pub fn value(&self) -> f64 {
        self.jet.value()
    }

    pub fn jet(&self) -> &Jet {
        &self.jet
    }

    /// Partial derivative for a list of directions; insensitive to ordering
    /// (mixed partials commute, storage is by canonical sorted multi-index).
    pub fn partial(&self, dirs: &[usize]) -> f64 {
        let mut idx: MultiIndex = [0; MAX_DIM];
        for &d in dirs {
            idx[d] += 1;
        }
        self.jet.partial(&idx)
    }

    pub fn partial_idx(&self, idx: &MultiIndex) -> f64 {
        self.jet.partial(idx)
    }

    /// All stored partials as (multi-index, value) pairs.
    pub fn partials(&self) -> Vec<(MultiIndex, f64)> {
        self.jet
            .shape
            .indices
            .iter()
            .map(|idx| (*idx, self.jet.partial(idx)))
            .collect()
    }
}

type JetFn = dyn Fn(&[f64], usize) -> Result<Jet, FieldError> + Send + Sync;

#[derive(Clone)]
enum Kind {
    Const(f64),
    Expr(Arc<Expr>),
    Func(Arc<JetFn>),
    Integral(Arc<IntegralNode>),
}

/// An evaluable real function on a chart, differentiable to a declared order.
#[derive(Clone)]
pub struct ScalarField {
    dim: usize,
    kind: Kind,
    smoothness: usize,
    domain: Arc<Domain>,
    overrides: Option<Arc<Vec<(MultiIndex, ScalarField)>>>,
}

impl std::fmt::Debug for ScalarField {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let kind = match &self.kind {
            Kind::Const(c) => format!("const {c}"),
            Kind::Expr(_) => "expr".into(),
            Kind::Func(_) => "func".into(),
            Kind::Integral(_) => "integral".into(),
        };
        write!(f, "ScalarField[{kind}, dim {}, C^{}]", self.dim, self.smoothness)
    }
}

impl ScalarField {
    pub fn constant(dim: usize, value: f64) -> ScalarField {
        ScalarField {
            dim,
            kind: Kind::Const(value),
            smoothness: crate::jet::MAX_ORDER,
            domain: Arc::new(Domain::unbounded(dim)),
            overrides: None,
        }
    }

    pub fn zero(dim: usize) -> ScalarField {
        ScalarField::constant(dim, 0.0)
    }

    /// Parse an expression in the chart's coordinates.
    pub fn from_expr(src: &str, chart: &Chart) -> Result<ScalarField, FieldError> {
        let e = expr::parse(src, &chart.coordinate_names)?;
        Ok(ScalarField {
            dim: chart.dim(),
            kind: Kind::Expr(Arc::new(e)),
            smoothness: crate::jet::MAX_ORDER,
            domain: Arc::new(Domain::unbounded(chart.dim())),
            overrides: None,
        })
    }

    pub fn from_fn<F>(dim: usize, smoothness: usize, f: F) -> ScalarField
    where
        F: Fn(&[f64], usize) -> Result<Jet, FieldError> + Send + Sync + 'static,
    {
        ScalarField {
            dim,
            kind: Kind::Func(Arc::new(f)),
            smoothness,
            domain: Arc::new(Domain::unbounded(dim)),
            overrides: None,
        }
    }

    /// Definite-integral node: u |-> int_{base}^{u_var} integrand dt, resolved
    /// by adaptive Simpson with a per-line memo cache.
    pub fn integral(integrand: ScalarField, var: usize, base: f64, tol: f64) -> ScalarField {
        let dim = integrand.dim;
        let smoothness = (integrand.smoothness + 1).min(crate::jet::MAX_ORDER);
        let domain = integrand.domain.clone();
        ScalarField {
            dim,
            kind: Kind::Integral(Arc::new(IntegralNode {
                integrand,
                var,
                base,
                tol,
                cache: Mutex::new(HashMap::new()),
            })),
            smoothness,
            domain,
            overrides: None,
        }
    }

    pub fn with_domain(mut self, domain: Domain) -> ScalarField {
        self.domain = Arc::new(domain);
        self
    }

    pub fn with_smoothness(mut self, smoothness: usize) -> ScalarField {
        self.smoothness = smoothness.min(crate::jet::MAX_ORDER);
        self
    }

    /// Attach analytic-derivative overrides; each multi-index's partial is
    /// replaced by the attached field's value at the evaluation point.
    pub fn with_overrides(mut self, ov: Vec<(MultiIndex, ScalarField)>) -> ScalarField {
        self.overrides = Some(Arc::new(ov));
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_const_zero(&self) -> bool {
        matches!(self.kind, Kind::Const(c) if c == 0.0)
    }

    pub fn smoothness(&self) -> usize {
        self.smoothness
    }

    pub fn domain(&self) -> &Domain {
        &self.domain
    }

    fn raw_jet(&self, point: &[f64], order: usize) -> Result<Jet, FieldError> {
        match &self.kind {
            Kind::Const(c) => Ok(Jet::constant(self.dim, order, *c)),
            Kind::Expr(e) => {
                let vars: Vec<Jet> = (0..self.dim)
                    .map(|i| Jet::variable(self.dim, order, i, point[i]))
                    .collect();
                Ok(e.eval_jet(&vars))
            }
            Kind::Func(f) => f(point, order),
            Kind::Integral(node) => node.eval(point, order),
        }
    }

    /// Evaluate the field with all partial derivatives up to `order`.
    pub fn eval_jet(&self, point: &[f64], order: usize) -> Result<JetValue, FieldError> {
        if order > self.smoothness {
            return Err(FieldError::Order {
                requested: order,
                declared: self.smoothness,
            });
        }
        if !self.domain.contains(point) {
            return Err(FieldError::Domain {
                point: point.to_vec(),
                reason: "outside declared box / inside excluded band".into(),
            });
        }
        let mut jet = self.raw_jet(point, order)?;
        if let Some(ov) = &self.overrides {
            for (idx, f) in ov.iter() {
                let deg: u8 = idx.iter().sum();
                if (deg as usize) <= order {
                    if let Some(pos) = jet.shape.position(idx) {
                        let v = f.eval(point)?;
                        jet.coeff[pos] = v / multi_factorial(idx);
                    }
                }
            }
        }
        if !jet.is_finite() {
            return Err(FieldError::NonFinite);
        }
        Ok(JetValue::from_jet(jet))
    }

    pub fn eval(&self, point: &[f64]) -> Result<f64, FieldError> {
        Ok(self.eval_jet(point, 0)?.value())
    }

    /// The derivative field d_dir(self); loses one order of smoothness.
    pub fn derivative(&self, dir: usize) -> ScalarField {
        let inner = self.clone();
        let sm = self.smoothness.saturating_sub(1);
        ScalarField::from_fn(self.dim, sm, move |p, k| {
            Ok(inner.raw_jet(p, k + 1)?.derive(dir))
        })
        .with_domain((*self.domain).clone())
    }

    fn combine(
        a: &ScalarField,
        b: &ScalarField,
        op: fn(&Jet, &Jet) -> Jet,
    ) -> ScalarField {
        let (fa, fb) = (a.clone(), b.clone());
        let sm = a.smoothness.min(b.smoothness);
        ScalarField::from_fn(a.dim, sm, move |p, k| {
            Ok(op(&fa.raw_jet(p, k)?, &fb.raw_jet(p, k)?))
        })
        .with_domain((*a.domain).clone())
    }

    pub fn add(&self, rhs: &ScalarField) -> ScalarField {
        Self::combine(self, rhs, |x, y| x.add(y))
    }

    pub fn sub(&self, rhs: &ScalarField) -> ScalarField {
        Self::combine(self, rhs, |x, y| x.sub(y))
    }

    pub fn mul(&self, rhs: &ScalarField) -> ScalarField {
        Self::combine(self, rhs, |x, y| x.mul(y))
    }

    pub fn div(&self, rhs: &ScalarField) -> ScalarField {
        Self::combine(self, rhs, |x, y| x.div(y))
    }

    pub fn scale(&self, s: f64) -> ScalarField {
        let f = self.clone();
        ScalarField::from_fn(self.dim, self.smoothness, move |p, k| {
            Ok(f.raw_jet(p, k)?.scale(s))
        })
        .with_domain((*self.domain).clone())
    }

    pub fn add_const(&self, c: f64) -> ScalarField {
        let f = self.clone();
        ScalarField::from_fn(self.dim, self.smoothness, move |p, k| {
            Ok(f.raw_jet(p, k)?.add_scalar(c))
        })
        .with_domain((*self.domain).clone())
    }

    pub fn abs(&self) -> ScalarField {
        let f = self.clone();
        ScalarField::from_fn(self.dim, self.smoothness, move |p, k| Ok(f.raw_jet(p, k)?.abs()))
            .with_domain((*self.domain).clone())
    }

    pub fn map_jet(
        &self,
        smoothness_cost: usize,
        op: impl Fn(Jet) -> Jet + Send + Sync + 'static,
    ) -> ScalarField {
        let f = self.clone();
        let sm = self.smoothness.saturating_sub(smoothness_cost);
        ScalarField::from_fn(self.dim, sm, move |p, k| Ok(op(f.raw_jet(p, k)?)))
            .with_domain((*self.domain).clone())
    }
}

struct IntegralNode {
    integrand: ScalarField,
    var: usize,
    base: f64,
    tol: f64,
    cache: Mutex<HashMap<(Vec<u64>, usize), BTreeMap<u64, Vec<f64>>>>,
}

impl IntegralNode {
    /// Multi-indices with zero component along the integration variable.
    fn face_indices(&self, dim: usize, order: usize) -> Vec<MultiIndex> {
        crate::jet::shape(dim, order)
            .indices
            .iter()
            .filter(|idx| idx[self.var] == 0)
            .copied()
            .collect()
    }

    fn eval(&self, point: &[f64], order: usize) -> Result<Jet, FieldError> {
        let dim = self.integrand.dim();
        let v = point[self.var];
        let face = self.face_indices(dim, order);

        // Cumulative integrals of d^alpha F along the line, from the cache's
        // nearest checkpoint (memoized per (x-line, order)).
        let key: Vec<u64> = point
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != self.var)
            .map(|(_, x)| x.to_bits())
            .collect();
        let mut start = self.base;
        let mut acc = vec![0.0; face.len()];
        {
            let cache = self.cache.lock().unwrap();
            if let Some(line) = cache.get(&(key.clone(), order)) {
                let mut best: Option<(f64, &Vec<f64>)> = None;
                for (bits, vals) in line.iter() {
                    let cv = f64::from_bits(*bits);
                    let better = match best {
                        None => true,
                        Some((bv, _)) => (cv - v).abs() < (bv - v).abs(),
                    };
                    if better {
                        best = Some((cv, vals));
                    }
                }
                if let Some((cv, vals)) = best {
                    if (cv - v).abs() < (self.base - v).abs() {
                        start = cv;
                        acc = vals.clone();
                    }
                }
            }
        }

        if start != v {
            let mut q = point.to_vec();
            let integrand = &self.integrand;
            let var = self.var;
            let face_ref = &face;
            let seg = quadrature::integrate_vec(
                |t| {
                    q[var] = t;
                    let jet = integrand.raw_jet(&q, order)?;
                    Ok(face_ref.iter().map(|idx| jet.partial(idx)).collect())
                },
                start,
                v,
                self.tol,
                quadrature::DEFAULT_NODE_BUDGET,
            )?;
            for (a, s) in acc.iter_mut().zip(&seg) {
                *a += s;
            }
            let mut cache = self.cache.lock().unwrap();
            cache
                .entry((key, order))
                .or_default()
                .insert(v.to_bits(), acc.clone());
        }

        // Assemble the jet: face coefficients from the quadrature, the
        // var-direction coefficients from the integrand's own jet.
        let shape = crate::jet::shape(dim, order);
        let mut coeff = vec![0.0; shape.len()];
        for (i, idx) in face.iter().enumerate() {
            let pos = shape.position(idx).unwrap();
            coeff[pos] = acc[i] / multi_factorial(idx);
        }
        if order >= 1 {
            let fjet = self.integrand.raw_jet(point, order - 1)?;
            for (pos, idx) in shape.indices.iter().enumerate() {
                if idx[self.var] == 0 {
                    continue;
                }
                let mut inner = *idx;
                inner[self.var] -= 1;
                coeff[pos] = fjet.partial(&inner) / multi_factorial(idx);
            }
        }
        Ok(Jet::from_vec(shape, coeff))
    }
}

/// Central-difference oracle with one Richardson extrapolation level.
/// Test-side reference only; production paths never call it.
pub fn fd_oracle(
    field: &ScalarField,
    point: &[f64],
    order: usize,
    step: f64,
) -> Result<JetValue, FieldError> {
    if step <= 0.0 {
        return Err(FieldError::Quadrature("fd_oracle needs step > 0".into()));
    }
    if !field.domain().contains(point) {
        return Err(FieldError::Domain {
            point: point.to_vec(),
            reason: "outside declared box / inside excluded band".into(),
        });
    }
    let need = field.domain().boundary_distance(point);
    if need.is_finite() && need < order as f64 * step {
        return Err(FieldError::Domain {
            point: point.to_vec(),
            reason: "too close to domain boundary for the requested stencil".into(),
        });
    }
    let dim = field.dim();
    let shape = crate::jet::shape(dim, order);
    let mut coeff = vec![0.0; shape.len()];

    fn central(
        field: &ScalarField,
        p: &mut Vec<f64>,
        dirs: &[usize],
        h: f64,
    ) -> Result<f64, FieldError> {
        match dirs.split_first() {
            None => field.eval(p),
            Some((&d, rest)) => {
                p[d] += h;
                let hi = central(field, p, rest, h)?;
                p[d] -= 2.0 * h;
                let lo = central(field, p, rest, h)?;
                p[d] += h;
                Ok((hi - lo) / (2.0 * h))
            }
        }
    }

    for (pos, idx) in shape.indices.iter().enumerate() {
        let deg: u8 = idx.iter().sum();
        if deg == 0 {
            coeff[pos] = field.eval(point)?;
            continue;
        }
        let mut dirs = Vec::new();
        for (d, &k) in idx.iter().enumerate().take(dim) {
            for _ in 0..k {
                dirs.push(d);
            }
        }
        let mut p = point.to_vec();
        let d_h = central(field, &mut p, &dirs, step)?;
        let d_h2 = central(field, &mut p, &dirs, step / 2.0)?;
        let richardson = (4.0 * d_h2 - d_h) / 3.0;
        coeff[pos] = richardson / multi_factorial(idx);
    }
    Ok(JetValue::from_jet(Jet::from_vec(shape, coeff)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polynomial_jet() {
        // f = x1 * x2 at (2, 3): value 6, d1 = 3, d2 = 2
        let chart = Chart::euclidean_2_2();
        let f = ScalarField::from_expr("x1*x2", &chart).unwrap();
        let jv = f.eval_jet(&[2.0, 3.0, 0.0, 0.0], 1).unwrap();
        assert_eq!(jv.value(), 6.0);
        assert_eq!(jv.partial(&[0]), 3.0);
        assert_eq!(jv.partial(&[1]), 2.0);
    }

    #[test]
    fn schwarzschild_factor() {
        // f = 1 - 1/r at r = 4: value 0.75, f' = 1/16, f'' = -1/32
        let chart = Chart::new(1, 1, &["r", "t"], &[1.0, 1.0]).unwrap();
        let f = ScalarField::from_expr("1 - 1/r", &chart).unwrap();
        let jv = f.eval_jet(&[4.0, 0.0], 2).unwrap();
        assert!((jv.value() - 0.75).abs() < 1e-15);
        assert!((jv.partial(&[0]) - 1.0 / 16.0).abs() < 1e-15);
        assert!((jv.partial(&[0, 0]) + 1.0 / 32.0).abs() < 1e-15);
    }

    #[test]
    fn fd_simple() {
        let chart = Chart::new(1, 1, &["x", "y"], &[1.0, 1.0]).unwrap();
        let f = ScalarField::from_expr("x^2", &chart).unwrap();
        let jv = fd_oracle(&f, &[1.0, 0.0], 1, 1e-3).unwrap();
        assert!((jv.partial(&[0]) - 2.0).abs() < 1e-9);
        let g = ScalarField::from_expr("exp(x)", &chart).unwrap();
        let jv = fd_oracle(&g, &[0.0, 0.0], 2, 1e-3).unwrap();
        assert!((jv.partial(&[0, 0]) - 1.0).abs() < 1e-6);
    }

    #[test]
    fn order_and_domain_errors() {
        let chart = Chart::euclidean_2_2();
        let f = ScalarField::from_expr("x1", &chart)
            .unwrap()
            .with_smoothness(2)
            .with_domain(Domain::boxed(vec![0.0; 4], vec![1.0; 4]));
        assert!(matches!(
            f.eval_jet(&[0.5; 4], 3),
            Err(FieldError::Order { .. })
        ));
        assert!(matches!(
            f.eval_jet(&[2.0, 0.5, 0.5, 0.5], 1),
            Err(FieldError::Domain { .. })
        ));
    }

    #[test]
    fn integral_node_jets() {
        // G(x, v) = int_0^v x * t dt = x v^2 / 2 on the 2+2 chart (var = 2)
        let chart = Chart::euclidean_2_2();
        let integrand = ScalarField::from_expr("x1*y3", &chart).unwrap();
        let g = ScalarField::integral(integrand, 2, 0.0, 1e-12);
        let p = [3.0, 0.0, 2.0, 0.0];
        let jv = g.eval_jet(&p, 2).unwrap();
        assert!((jv.value() - 6.0).abs() < 1e-10);
        assert!((jv.partial(&[2]) - 6.0).abs() < 1e-12); // dG/dv = x v
        assert!((jv.partial(&[0]) - 2.0).abs() < 1e-10); // dG/dx = v^2/2
        assert!((jv.partial(&[0, 2]) - 2.0).abs() < 1e-12); // d2G/dxdv = v
        assert!((jv.partial(&[2, 2]) - 3.0).abs() < 1e-12); // d2G/dv2 = x
    }

    #[test]
    fn linearity_of_jets() {
        let chart = Chart::euclidean_2_2();
        let f = ScalarField::from_expr("sin(x1)*y3", &chart).unwrap();
        let g = ScalarField::from_expr("exp(x2)", &chart).unwrap();
        let combo = f.scale(2.5).add(&g.scale(-1.25));
        let p = [0.3, 0.1, 0.7, 0.0];
        let a = combo.eval_jet(&p, 3).unwrap();
        let fj = f.eval_jet(&p, 3).unwrap();
        let gj = g.eval_jet(&p, 3).unwrap();
        for (idx, v) in a.partials() {
            let expect = 2.5 * fj.partial_idx(&idx) - 1.25 * gj.partial_idx(&idx);
            assert!((v - expect).abs() <= 1e-14 * (1.0 + expect.abs()));
        }
    }
}
