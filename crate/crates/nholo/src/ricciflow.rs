//! Nonholonomic Ricci flow on periodic grids: the coupled metric/f
//! evolution, frame evolution, Perelman-type functional monitors and the
//! monotonicity probe.
//!
//! The domain is the flat 4-torus [0, 2pi)^4 with all grid fields depending
//! on the two base coordinates only; the N-connection is fixed in the flow
//! parameter. Spatial derivatives are 4th-order central differences on the
//! periodic base grid; the Ricci d-tensor is evaluated per node by the
//! connections engine on finite-difference jets.

use serde::Serialize;

use crate::connections::{self, ConnectionData, ConnectionKind, CurvatureData};
use crate::error::FlowError;
use crate::geometry::DMetricJets;
use crate::jet::{shape, Jet, MAX_DIM};
use crate::linalg;

pub const TWO_PI: f64 = 2.0 * std::f64::consts::PI;

/// Which coupled f-equation drives the flow: the F-functional form
/// (preserves int e^{-f} dV) or the W-functional form with the +(n+m)/(2 tau)
/// term (preserves int mu dV, tau = tau0 - chi).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FlowCoupling {
    FEntropy,
    WEntropy,
}

#[derive(Clone, Copy, Debug)]
pub struct FlowGrid {
    pub nx: usize,
    pub ny: usize,
}

impl FlowGrid {
    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn hx(&self) -> f64 {
        TWO_PI / self.nx as f64
    }

    pub fn hy(&self) -> f64 {
        TWO_PI / self.ny as f64
    }

    #[inline]
    pub fn idx(&self, i: usize, j: usize) -> usize {
        (i % self.nx) * self.ny + (j % self.ny)
    }

    pub fn point(&self, i: usize, j: usize) -> [f64; 2] {
        [i as f64 * self.hx(), j as f64 * self.hy()]
    }
}

/// Symmetric 2x2 block sampled on the grid (three independent components);
/// the evolved blocks stay exactly symmetric by representation.
#[derive(Clone, Debug)]
pub struct SymBlock {
    pub c11: Vec<f64>,
    pub c12: Vec<f64>,
    pub c22: Vec<f64>,
}

impl SymBlock {
    fn constant(n: usize, d11: f64, d22: f64) -> SymBlock {
        SymBlock {
            c11: vec![d11; n],
            c12: vec![0.0; n],
            c22: vec![d22; n],
        }
    }

    pub fn at(&self, k: usize) -> [[f64; 2]; 2] {
        [[self.c11[k], self.c12[k]], [self.c12[k], self.c22[k]]]
    }
}

/// Grid-sampled flow state.
#[derive(Clone, Debug)]
pub struct FlowState {
    pub grid: FlowGrid,
    pub g: SymBlock,
    pub h: SymBlock,
    /// Fixed N-connection samples n[a][i][node].
    pub n: [[Vec<f64>; 2]; 2],
    pub f: Vec<f64>,
    pub chi: f64,
    pub tau0: f64,
    pub coupling: FlowCoupling,
}

impl FlowState {
    pub fn tau(&self) -> f64 {
        self.tau0 - self.chi
    }

    pub fn flat_torus(grid: FlowGrid, f0: f64, tau0: f64) -> FlowState {
        let n = grid.len();
        FlowState {
            grid,
            g: SymBlock::constant(n, 1.0, 1.0),
            h: SymBlock::constant(n, 1.0, 1.0),
            n: [
                [vec![0.0; n], vec![0.0; n]],
                [vec![0.0; n], vec![0.0; n]],
            ],
            f: vec![f0; n],
            chi: 0.0,
            tau0,
            coupling: FlowCoupling::FEntropy,
        }
    }

    /// g = e^{2 phi(x)} delta with a flat fiber block.
    pub fn conformal(grid: FlowGrid, phi: impl Fn(f64, f64) -> f64, tau0: f64) -> FlowState {
        let mut st = FlowState::flat_torus(grid, 0.0, tau0);
        for i in 0..grid.nx {
            for j in 0..grid.ny {
                let p = grid.point(i, j);
                let e = (2.0 * phi(p[0], p[1])).exp();
                let k = grid.idx(i, j);
                st.g.c11[k] = e;
                st.g.c22[k] = e;
            }
        }
        st
    }

    /// Normalize f by an additive constant so that int mu dV = 1 at the
    /// current tau.
    pub fn normalize_measure(&mut self) {
        let mut total = 0.0;
        let cell = self.grid.hx() * self.grid.hy() * TWO_PI * TWO_PI;
        for k in 0..self.grid.len() {
            total += self.mu(k) * self.dvol(k) * cell;
        }
        let shift = total.ln();
        self.f.iter_mut().for_each(|f| *f += shift);
    }

    pub fn mu(&self, k: usize) -> f64 {
        (4.0 * std::f64::consts::PI * self.tau()).powf(-2.0) * (-self.f[k]).exp()
    }

    /// Volume element sqrt(det g det h) at a node.
    pub fn dvol(&self, k: usize) -> f64 {
        let g = self.g.at(k);
        let h = self.h.at(k);
        let dg = g[0][0] * g[1][1] - g[0][1] * g[0][1];
        let dh = h[0][0] * h[1][1] - h[0][1] * h[0][1];
        (dg * dh).abs().sqrt()
    }

    pub fn total_volume(&self) -> f64 {
        let cell = self.grid.hx() * self.grid.hy() * TWO_PI * TWO_PI;
        (0..self.grid.len()).map(|k| self.dvol(k) * cell).sum()
    }

    /// int e^{-f} dV (the conserved measure of the F-coupled system).
    pub fn f_measure(&self) -> f64 {
        let cell = self.grid.hx() * self.grid.hy() * TWO_PI * TWO_PI;
        (0..self.grid.len())
            .map(|k| (-self.f[k]).exp() * self.dvol(k) * cell)
            .sum()
    }

    /// int mu dV (the conserved measure of the W-coupled system).
    pub fn mu_measure(&self) -> f64 {
        let cell = self.grid.hx() * self.grid.hy() * TWO_PI * TWO_PI;
        (0..self.grid.len())
            .map(|k| self.mu(k) * self.dvol(k) * cell)
            .sum()
    }
}

/// 4th-order periodic central differences of a grid array.
struct Stencil<'a> {
    grid: FlowGrid,
    data: &'a [f64],
}

impl<'a> Stencil<'a> {
    fn sample(&self, i: usize, j: usize, axis: usize, off: i64) -> f64 {
        let g = self.grid;
        let (ii, jj) = if axis == 0 {
            (
                ((i as i64 + off).rem_euclid(g.nx as i64)) as usize,
                j,
            )
        } else {
            (
                i,
                ((j as i64 + off).rem_euclid(g.ny as i64)) as usize,
            )
        };
        self.data[g.idx(ii, jj)]
    }

    fn d1(&self, i: usize, j: usize, axis: usize) -> f64 {
        let h = if axis == 0 { self.grid.hx() } else { self.grid.hy() };
        (-self.sample(i, j, axis, 2) + 8.0 * self.sample(i, j, axis, 1)
            - 8.0 * self.sample(i, j, axis, -1)
            + self.sample(i, j, axis, -2))
            / (12.0 * h)
    }

    fn d2(&self, i: usize, j: usize, axis: usize) -> f64 {
        let h = if axis == 0 { self.grid.hx() } else { self.grid.hy() };
        (-self.sample(i, j, axis, 2) + 16.0 * self.sample(i, j, axis, 1)
            - 30.0 * self.sample(i, j, axis, 0)
            + 16.0 * self.sample(i, j, axis, -1)
            - self.sample(i, j, axis, -2))
            / (12.0 * h * h)
    }

    fn d1d2(&self, i: usize, j: usize) -> f64 {
        let h = self.grid.hx();
        let dy = |off: i64| -> f64 {
            let ii = ((i as i64 + off).rem_euclid(self.grid.nx as i64)) as usize;
            self.d1(ii, j, 1)
        };
        (-dy(2) + 8.0 * dy(1) - 8.0 * dy(-1) + dy(-2)) / (12.0 * h)
    }
}

/// Order-2 jet of a grid field at a node (base-only dependence).
fn node_jet(grid: FlowGrid, data: &[f64], i: usize, j: usize) -> Jet {
    let st = Stencil { grid, data };
    let sh = shape(4, 2);
    let mut coeff = vec![0.0; sh.len()];
    let mut put = |idx: [u8; MAX_DIM], v: f64| {
        let pos = sh.position(&idx).unwrap();
        coeff[pos] = v;
    };
    let mut idx = [0u8; MAX_DIM];
    put(idx, data[grid.idx(i, j)]);
    idx = [0; MAX_DIM];
    idx[0] = 1;
    put(idx, st.d1(i, j, 0));
    idx = [0; MAX_DIM];
    idx[1] = 1;
    put(idx, st.d1(i, j, 1));
    idx = [0; MAX_DIM];
    idx[0] = 2;
    put(idx, st.d2(i, j, 0) / 2.0);
    idx = [0; MAX_DIM];
    idx[1] = 2;
    put(idx, st.d2(i, j, 1) / 2.0);
    idx = [0; MAX_DIM];
    idx[0] = 1;
    idx[1] = 1;
    put(idx, st.d1d2(i, j));
    Jet::from_vec(sh, coeff)
}

struct NodeGeometry {
    conn: ConnectionData,
    curv: CurvatureData,
    f_jet: Jet,
    jets: DMetricJets,
}

/// Lighter node data for the stepper: Ricci + scalar only.
struct NodeRicci {
    conn: ConnectionData,
    ricci: Vec<f64>,
    scalar: f64,
    f_jet: Jet,
    jets: DMetricJets,
}

fn node_ricci(state: &FlowState, i: usize, j: usize) -> Result<NodeRicci, FlowError> {
    let jets = build_node_jets(state, i, j)?;
    let (conn, ricci, sh, sv) =
        connections::canonical_ricci_from_jets(&jets).map_err(FlowError::Geom)?;
    let f_jet = node_jet(state.grid, &state.f, i, j);
    Ok(NodeRicci {
        conn,
        ricci,
        scalar: sh + sv,
        f_jet,
        jets,
    })
}

fn build_node_jets(state: &FlowState, i: usize, j: usize) -> Result<DMetricJets, FlowError> {
    let grid = state.grid;
    let jet_of = |data: &[f64]| node_jet(grid, data, i, j);
    let g = vec![
        vec![jet_of(&state.g.c11), jet_of(&state.g.c12)],
        vec![jet_of(&state.g.c12), jet_of(&state.g.c22)],
    ];
    let h = vec![
        vec![jet_of(&state.h.c11), jet_of(&state.h.c12)],
        vec![jet_of(&state.h.c12), jet_of(&state.h.c22)],
    ];
    let n = vec![
        vec![jet_of(&state.n[0][0]), jet_of(&state.n[0][1])],
        vec![jet_of(&state.n[1][0]), jet_of(&state.n[1][1])],
    ];
    let k = grid.idx(i, j);
    let det_g = state.g.c11[k] * state.g.c22[k] - state.g.c12[k] * state.g.c12[k];
    let det_h = state.h.c11[k] * state.h.c22[k] - state.h.c12[k] * state.h.c12[k];
    if det_g.abs() < 1e-12 || det_h.abs() < 1e-12 {
        return Err(FlowError::Degeneration {
            node: (i, j),
            det: det_g * det_h,
        });
    }
    Ok(DMetricJets {
        dim_h: 2,
        dim_v: 2,
        g,
        h,
        n,
    })
}

fn node_geometry(state: &FlowState, i: usize, j: usize) -> Result<NodeGeometry, FlowError> {
    let grid = state.grid;
    let jet_of = |data: &[f64]| node_jet(grid, data, i, j);
    let g = vec![
        vec![jet_of(&state.g.c11), jet_of(&state.g.c12)],
        vec![jet_of(&state.g.c12), jet_of(&state.g.c22)],
    ];
    let h = vec![
        vec![jet_of(&state.h.c11), jet_of(&state.h.c12)],
        vec![jet_of(&state.h.c12), jet_of(&state.h.c22)],
    ];
    let n = vec![
        vec![jet_of(&state.n[0][0]), jet_of(&state.n[0][1])],
        vec![jet_of(&state.n[1][0]), jet_of(&state.n[1][1])],
    ];
    let jets = DMetricJets {
        dim_h: 2,
        dim_v: 2,
        g,
        h,
        n,
    };
    let k = grid.idx(i, j);
    let det_g = state.g.c11[k] * state.g.c22[k] - state.g.c12[k] * state.g.c12[k];
    let det_h = state.h.c11[k] * state.h.c22[k] - state.h.c12[k] * state.h.c12[k];
    if det_g.abs() < 1e-12 || det_h.abs() < 1e-12 {
        return Err(FlowError::Degeneration {
            node: (i, j),
            det: det_g * det_h,
        });
    }
    let (conn, curv) =
        connections::connection_and_curvature_from_jets(&jets, ConnectionKind::CanonicalD)
            .map_err(FlowError::Geom)?;
    let f_jet = jet_of(&state.f);
    Ok(NodeGeometry {
        conn,
        curv,
        f_jet,
        jets,
    })
}

/// Hessian blocks D_i D_j f and D_a D_b f of a scalar from its jet and the
/// connection.
fn hessians_of(
    conn: &ConnectionData,
    f: &Jet,
    jets: &DMetricJets,
) -> ([[f64; 2]; 2], [[f64; 2]; 2]) {
    let ef: Vec<f64> = (0..4).map(|mu| jets.elongated_d1(f, mu)).collect();
    let mut hh = [[0.0; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            let ejf = jets.elongated_derive(f, j);
            let mut v = jets.elongated_d1(&ejf, i);
            for k in 0..2 {
                v -= conn.l_hh(k, j, i) * ef[k];
            }
            hh[j][i] = v;
        }
    }
    let mut vv = [[0.0; 2]; 2];
    for a in 0..2 {
        for b in 0..2 {
            let mut v = f.d2(2 + a, 2 + b);
            for c in 0..2 {
                v -= conn.c_vv(c, b, a) * ef[2 + c];
            }
            vv[b][a] = v;
        }
    }
    (hh, vv)
}

fn hessians(geo: &NodeGeometry) -> ([[f64; 2]; 2], [[f64; 2]; 2]) {
    hessians_of(&geo.conn, &geo.f_jet, &geo.jets)
}

fn inv2(m: [[f64; 2]; 2]) -> [[f64; 2]; 2] {
    let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    [
        [m[1][1] / det, -m[0][1] / det],
        [-m[1][0] / det, m[0][0] / det],
    ]
}

struct FlowRhs {
    dg: SymBlock,
    dh: SymBlock,
    df: Vec<f64>,
}

type NodeResult = (usize, [f64; 3], [f64; 3], f64, f64);

fn flow_rhs(state: &FlowState, normalized: bool, threads: usize) -> Result<FlowRhs, FlowError> {
    let grid = state.grid;
    let nn = grid.len();
    let mut dg = SymBlock::constant(nn, 0.0, 0.0);
    let mut dh = SymBlock::constant(nn, 0.0, 0.0);
    let mut df = vec![0.0; nn];
    let mut scal = vec![0.0; nn];

    let node_eval = |i: usize, j: usize| -> Result<NodeResult, FlowError> {
        let geo = node_ricci(state, i, j)?;
        let k = grid.idx(i, j);
        let ric = &geo.ricci;
        let d = 4;
        // only the symmetric part of Ric drives the evolution
        let rs = |a: usize, b: usize| 0.5 * (ric[a * d + b] + ric[b * d + a]);
        let gdot = [-2.0 * rs(0, 0), -2.0 * rs(0, 1), -2.0 * rs(1, 1)];
        let hdot = [-2.0 * rs(2, 2), -2.0 * rs(2, 3), -2.0 * rs(3, 3)];
        let (hh, vv) = hessians_of(&geo.conn, &geo.f_jet, &geo.jets);
        let gi = inv2(state.g.at(k));
        let hi = inv2(state.h.at(k));
        let ef: Vec<f64> = (0..4)
            .map(|mu| geo.jets.elongated_d1(&geo.f_jet, mu))
            .collect();
        let mut lap = 0.0;
        let mut grad2 = 0.0;
        for a in 0..2 {
            for b in 0..2 {
                lap += gi[a][b] * hh[a][b] + hi[a][b] * vv[a][b];
                grad2 += gi[a][b] * ef[a] * ef[b] + hi[a][b] * ef[2 + a] * ef[2 + b];
            }
        }
        let sr = geo.scalar;
        let mut fdot = -lap + grad2 - sr;
        if state.coupling == FlowCoupling::WEntropy {
            fdot += 4.0 / (2.0 * state.tau());
        }
        Ok((k, gdot, hdot, fdot, sr))
    };

    let results: Vec<NodeResult> = if threads <= 1 {
        let mut out = Vec::with_capacity(nn);
        for i in 0..grid.nx {
            for j in 0..grid.ny {
                out.push(node_eval(i, j)?);
            }
        }
        out
    } else {
        let coords: Vec<(usize, usize)> = (0..grid.nx)
            .flat_map(|i| (0..grid.ny).map(move |j| (i, j)))
            .collect();
        let chunk = coords.len().div_ceil(threads);
        let mut collected: Vec<Result<NodeResult, FlowError>> = Vec::with_capacity(nn);
        std::thread::scope(|scope| {
            let handles: Vec<_> = coords
                .chunks(chunk)
                .map(|part| {
                    scope.spawn(move || {
                        part.iter()
                            .map(|&(i, j)| node_eval(i, j))
                            .collect::<Vec<_>>()
                    })
                })
                .collect();
            for handle in handles {
                collected.extend(handle.join().expect("flow worker panicked"));
            }
        });
        collected.into_iter().collect::<Result<Vec<_>, _>>()?
    };

    for (k, gdot, hdot, fdot, sr) in results {
        dg.c11[k] = gdot[0];
        dg.c12[k] = gdot[1];
        dg.c22[k] = gdot[2];
        dh.c11[k] = hdot[0];
        dh.c12[k] = hdot[1];
        dh.c22[k] = hdot[2];
        df[k] = fdot;
        scal[k] = sr;
    }

    if normalized {
        // r = int sR dV / int dV; the normalized flow adds (2 r / 5) g
        let cell = grid.hx() * grid.hy() * TWO_PI * TWO_PI;
        let mut vol = 0.0;
        let mut int_sr = 0.0;
        for k in 0..nn {
            let dv = state.dvol(k) * cell;
            vol += dv;
            int_sr += scal[k] * dv;
        }
        let c = 2.0 * (int_sr / vol) / 5.0;
        for k in 0..nn {
            dg.c11[k] += c * state.g.c11[k];
            dg.c12[k] += c * state.g.c12[k];
            dg.c22[k] += c * state.g.c22[k];
            dh.c11[k] += c * state.h.c11[k];
            dh.c12[k] += c * state.h.c12[k];
            dh.c22[k] += c * state.h.c22[k];
        }
    }

    Ok(FlowRhs { dg, dh, df })
}

fn axpy(state: &FlowState, rhs: &FlowRhs, dt: f64) -> FlowState {
    let mut out = state.clone();
    for k in 0..state.grid.len() {
        out.g.c11[k] += dt * rhs.dg.c11[k];
        out.g.c12[k] += dt * rhs.dg.c12[k];
        out.g.c22[k] += dt * rhs.dg.c22[k];
        out.h.c11[k] += dt * rhs.dh.c11[k];
        out.h.c12[k] += dt * rhs.dh.c12[k];
        out.h.c22[k] += dt * rhs.dh.c22[k];
        out.f[k] += dt * rhs.df[k];
    }
    out
}

/// Conservative stability bound for the explicit RK4 diffusion step.
pub fn stability_bound(state: &FlowState) -> f64 {
    let mut diffusivity = 0.0f64;
    for k in 0..state.grid.len() {
        let gi = inv2(state.g.at(k));
        let hi = inv2(state.h.at(k));
        let norm = gi
            .iter()
            .chain(hi.iter())
            .flat_map(|r| r.iter())
            .fold(0.0f64, |m, v| m.max(v.abs()));
        diffusivity = diffusivity.max(norm);
    }
    let h2 = state.grid.hx().min(state.grid.hy()).powi(2);
    // lambda_max of the 4th-order 1-d stencil is 16/(3 h^2); two dimensions
    // double it; RK4 real-axis stability reaches ~2.78. Keep a 0.9 margin.
    0.9 * 2.78 * h2 * 3.0 / (16.0 * 2.0 * diffusivity.max(1e-12))
}

/// One RK4 step of the coupled flow.
pub fn flow_step(
    state: &FlowState,
    dchi: f64,
    normalized: bool,
    threads: usize,
) -> Result<FlowState, FlowError> {
    if dchi <= 0.0 {
        return Err(FlowError::Stability("dchi must be positive".into()));
    }
    let bound = stability_bound(state);
    if dchi > bound {
        return Err(FlowError::Stability(format!(
            "dchi {dchi:e} exceeds the stability bound {bound:e}"
        )));
    }

    let k1 = flow_rhs(state, normalized, threads)?;
    let s2 = axpy(state, &k1, 0.5 * dchi);
    let k2 = flow_rhs(&s2, normalized, threads)?;
    let s3 = axpy(state, &k2, 0.5 * dchi);
    let k3 = flow_rhs(&s3, normalized, threads)?;
    let s4 = axpy(state, &k3, dchi);
    let k4 = flow_rhs(&s4, normalized, threads)?;

    let mut out = state.clone();
    let comb = |a: f64, b: f64, c: f64, d: f64| (a + 2.0 * b + 2.0 * c + d) / 6.0;
    for k in 0..state.grid.len() {
        out.g.c11[k] += dchi * comb(k1.dg.c11[k], k2.dg.c11[k], k3.dg.c11[k], k4.dg.c11[k]);
        out.g.c12[k] += dchi * comb(k1.dg.c12[k], k2.dg.c12[k], k3.dg.c12[k], k4.dg.c12[k]);
        out.g.c22[k] += dchi * comb(k1.dg.c22[k], k2.dg.c22[k], k3.dg.c22[k], k4.dg.c22[k]);
        out.h.c11[k] += dchi * comb(k1.dh.c11[k], k2.dh.c11[k], k3.dh.c11[k], k4.dh.c11[k]);
        out.h.c12[k] += dchi * comb(k1.dh.c12[k], k2.dh.c12[k], k3.dh.c12[k], k4.dh.c12[k]);
        out.h.c22[k] += dchi * comb(k1.dh.c22[k], k2.dh.c22[k], k3.dh.c22[k], k4.dh.c22[k]);
        out.f[k] += dchi * comb(k1.df[k], k2.df[k], k3.df[k], k4.df[k]);
    }
    out.chi += dchi;
    for i in 0..out.grid.nx {
        for j in 0..out.grid.ny {
            let k = out.grid.idx(i, j);
            let g = out.g.at(k);
            let h = out.h.at(k);
            let dgdet = g[0][0] * g[1][1] - g[0][1] * g[0][1];
            let dhdet = h[0][0] * h[1][1] - h[0][1] * h[0][1];
            if dgdet <= 1e-10 || dhdet <= 1e-10 {
                return Err(FlowError::Degeneration {
                    node: (i, j),
                    det: dgdet * dhdet,
                });
            }
        }
    }
    Ok(out)
}

/// Per-node coframe diagonal blocks evolving along the flow: the metric is
/// recoverable as g^{-1} = C C^T for the Euclidean signature.
#[derive(Clone, Debug)]
pub struct FrameField {
    pub ch: Vec<[[f64; 2]; 2]>,
    pub cv: Vec<[[f64; 2]; 2]>,
}

impl FrameField {
    pub fn init(state: &FlowState) -> FrameField {
        let n = state.grid.len();
        let mut ch = Vec::with_capacity(n);
        let mut cv = Vec::with_capacity(n);
        for k in 0..n {
            ch.push(inv_sqrt_2x2(state.g.at(k)));
            cv.push(inv_sqrt_2x2(state.h.at(k)));
        }
        FrameField { ch, cv }
    }

    /// Reconstruct the metric blocks from the coframes.
    pub fn metric_blocks(&self, k: usize) -> ([[f64; 2]; 2], [[f64; 2]; 2]) {
        (from_coframe(self.ch[k]), from_coframe(self.cv[k]))
    }
}

fn inv_sqrt_2x2(m: [[f64; 2]; 2]) -> [[f64; 2]; 2] {
    let mv: Vec<Vec<f64>> = m.iter().map(|r| r.to_vec()).collect();
    let (vals, vecs) = linalg::sym_eigen(&mv);
    let mut out = [[0.0; 2]; 2];
    for a in 0..2 {
        for b in 0..2 {
            let mut acc = 0.0;
            for kk in 0..2 {
                acc += vecs[a][kk] * vecs[b][kk] / vals[kk].sqrt();
            }
            out[a][b] = acc;
        }
    }
    out
}

fn from_coframe(c: [[f64; 2]; 2]) -> [[f64; 2]; 2] {
    let mut ginv = [[0.0; 2]; 2];
    for a in 0..2 {
        for b in 0..2 {
            ginv[a][b] = c[a][0] * c[b][0] + c[a][1] * c[b][1];
        }
    }
    inv2(ginv)
}

/// Advance state and coframes jointly by one RK4 step: the coframe blocks
/// follow the linear equation dC/dchi = (g^{-1} R_sym) C with the symmetric
/// Ricci contraction.
pub fn evolve_frames(
    state: &FlowState,
    frames: &FrameField,
    dchi: f64,
    threads: usize,
) -> Result<(FlowState, FrameField), FlowError> {
    let kmat = |st: &FlowState| -> Result<(Vec<[[f64; 2]; 2]>, Vec<[[f64; 2]; 2]>), FlowError> {
        let grid = st.grid;
        let mut kh = Vec::with_capacity(grid.len());
        let mut kv = Vec::with_capacity(grid.len());
        for i in 0..grid.nx {
            for j in 0..grid.ny {
                let geo = node_ricci(st, i, j)?;
                let k = grid.idx(i, j);
                let ric = &geo.ricci;
                let rs = |a: usize, b: usize| 0.5 * (ric[a * 4 + b] + ric[b * 4 + a]);
                let gi = inv2(st.g.at(k));
                let hi = inv2(st.h.at(k));
                let mut mh = [[0.0; 2]; 2];
                let mut mv = [[0.0; 2]; 2];
                for a in 0..2 {
                    for b in 0..2 {
                        let mut acc_h = 0.0;
                        let mut acc_v = 0.0;
                        for c in 0..2 {
                            acc_h += gi[a][c] * rs(c, b);
                            acc_v += hi[a][c] * rs(2 + c, 2 + b);
                        }
                        mh[a][b] = acc_h;
                        mv[a][b] = acc_v;
                    }
                }
                kh.push(mh);
                kv.push(mv);
            }
        }
        Ok((kh, kv))
    };
    let mul = |k: &[[f64; 2]; 2], c: &[[f64; 2]; 2]| -> [[f64; 2]; 2] {
        let mut out = [[0.0; 2]; 2];
        for a in 0..2 {
            for b in 0..2 {
                out[a][b] = k[a][0] * c[0][b] + k[a][1] * c[1][b];
            }
        }
        out
    };

    let k1m = flow_rhs(state, false, threads)?;
    let (k1h, k1v) = kmat(state)?;
    let s2 = axpy(state, &k1m, 0.5 * dchi);
    let (k2h, k2v) = kmat(&s2)?;
    let k2m = flow_rhs(&s2, false, threads)?;
    let s3 = axpy(state, &k2m, 0.5 * dchi);
    let (k3h, k3v) = kmat(&s3)?;
    let k3m = flow_rhs(&s3, false, threads)?;
    let s4 = axpy(state, &k3m, dchi);
    let (k4h, k4v) = kmat(&s4)?;

    let next = flow_step(state, dchi, false, threads)?;
    let mut ch = frames.ch.clone();
    let mut cv = frames.cv.clone();
    for k in 0..state.grid.len() {
        let step = |c: &[[f64; 2]; 2],
                    ks: (&[[f64; 2]; 2], &[[f64; 2]; 2], &[[f64; 2]; 2], &[[f64; 2]; 2])|
         -> [[f64; 2]; 2] {
            let c1 = mul(ks.0, c);
            let c2 = mul(ks.1, &add_scaled(c, &c1, 0.5 * dchi));
            let c3 = mul(ks.2, &add_scaled(c, &c2, 0.5 * dchi));
            let c4 = mul(ks.3, &add_scaled(c, &c3, dchi));
            let mut out = *c;
            for a in 0..2 {
                for b in 0..2 {
                    out[a][b] +=
                        dchi / 6.0 * (c1[a][b] + 2.0 * c2[a][b] + 2.0 * c3[a][b] + c4[a][b]);
                }
            }
            out
        };
        ch[k] = step(&ch[k], (&k1h[k], &k2h[k], &k3h[k], &k4h[k]));
        cv[k] = step(&cv[k], (&k1v[k], &k2v[k], &k3v[k], &k4v[k]));
    }
    Ok((next, FrameField { ch, cv }))
}

fn add_scaled(a: &[[f64; 2]; 2], b: &[[f64; 2]; 2], s: f64) -> [[f64; 2]; 2] {
    let mut out = *a;
    for i in 0..2 {
        for j in 0..2 {
            out[i][j] += s * b[i][j];
        }
    }
    out
}

/// Node metric jets for cross-checks in tests.
pub fn debug_node_jets(state: &FlowState, i: usize, j: usize) -> DMetricJets {
    build_node_jets(state, i, j).expect("nondegenerate node")
}

/// Node jet of the f field for cross-checks in tests.
pub fn debug_node_jet_of(state: &FlowState, i: usize, j: usize) -> Jet {
    node_jet(state.grid, &state.f, i, j)
}

/// Perelman-type functional monitors of a state.
#[derive(Clone, Debug, Serialize)]
pub struct FunctionalReport {
    pub f_hat: f64,
    pub w_hat: f64,
    /// F evaluated at the state's f under the normalized measure: an upper
    /// bound for the d-energy (the infimum over f is not searched).
    pub lambda_hat_upper: f64,
    pub energy: f64,
    pub entropy: f64,
    pub fluctuation: f64,
    pub log_z: f64,
    pub volume: f64,
    pub measure: f64,
}

pub fn functionals(state: &FlowState) -> Result<FunctionalReport, FlowError> {
    let tau = state.tau();
    if tau <= 0.0 {
        return Err(FlowError::Quadrature("tau must stay positive".into()));
    }
    let grid = state.grid;
    let cell = grid.hx() * grid.hy() * TWO_PI * TWO_PI;
    let mut f_hat = 0.0;
    let mut w_hat = 0.0;
    let mut energy = 0.0;
    let mut entropy = 0.0;
    let mut fluct = 0.0;
    let mut log_z = 0.0;
    let mut measure = 0.0;
    for i in 0..grid.nx {
        for j in 0..grid.ny {
            let k = grid.idx(i, j);
            let geo = node_geometry(state, i, j)?;
            let sr = geo.curv.scalar.unwrap();
            let gi = inv2(state.g.at(k));
            let hi = inv2(state.h.at(k));
            let ef: Vec<f64> = (0..4)
                .map(|mu| geo.jets.elongated_derive(&geo.f_jet, mu).value())
                .collect();
            let mut grad2 = 0.0;
            for a in 0..2 {
                for b in 0..2 {
                    grad2 += gi[a][b] * ef[a] * ef[b] + hi[a][b] * ef[2 + a] * ef[2 + b];
                }
            }
            let dv = state.dvol(k) * cell;
            let mu = state.mu(k);
            let emf = (-state.f[k]).exp();
            f_hat += (sr + grad2) * emf * dv;
            w_hat += (tau * (sr + grad2) + state.f[k] - 4.0) * mu * dv;
            log_z += (-state.f[k] + 2.0) * mu * dv;
            measure += mu * dv;

            // scalar curvature of the conformally scaled d-metric e^{-f} g
            let sr_scaled = {
                let scale = geo.f_jet.neg().exp();
                let mut jets = geo.jets.clone();
                for a in 0..2 {
                    for b in 0..2 {
                        jets.g[a][b] = jets.g[a][b].mul(&scale);
                        jets.h[a][b] = jets.h[a][b].mul(&scale);
                    }
                }
                connections::curvature_from_jets(&jets, ConnectionKind::CanonicalD)
                    .map_err(FlowError::Geom)?
                    .scalar
                    .unwrap()
            };
            energy += -tau * tau * (sr_scaled + 3.0 * grad2 - 4.0 / (2.0 * tau)) * mu * dv;
            entropy += -(tau * (sr_scaled - 3.0 * state.f[k].exp() * grad2) + state.f[k] - 4.0)
                * mu
                * dv;

            let (hh, vv) = hessians(&geo);
            let ric = geo.curv.ricci.as_ref().unwrap();
            let g = state.g.at(k);
            let h = state.h.at(k);
            let mut norm2 = 0.0;
            for a in 0..2 {
                for b in 0..2 {
                    for c in 0..2 {
                        for dd in 0..2 {
                            let uh = 0.5 * (ric[a * 4 + b] + ric[b * 4 + a]) + hh[a][b]
                                - g[a][b] / (2.0 * tau);
                            let vh = 0.5 * (ric[c * 4 + dd] + ric[dd * 4 + c]) + hh[c][dd]
                                - g[c][dd] / (2.0 * tau);
                            norm2 += gi[a][c] * gi[b][dd] * uh * vh;
                            let uv = 0.5 * (ric[(2 + a) * 4 + 2 + b] + ric[(2 + b) * 4 + 2 + a])
                                + vv[a][b]
                                - h[a][b] / (2.0 * tau);
                            let vv2 = 0.5
                                * (ric[(2 + c) * 4 + 2 + dd] + ric[(2 + dd) * 4 + 2 + c])
                                + vv[c][dd]
                                - h[c][dd] / (2.0 * tau);
                            norm2 += hi[a][c] * hi[b][dd] * uv * vv2;
                        }
                    }
                }
            }
            fluct += 2.0 * tau * tau * norm2 * mu * dv;
        }
    }
    Ok(FunctionalReport {
        f_hat,
        w_hat,
        lambda_hat_upper: f_hat,
        energy,
        entropy,
        fluctuation: fluct,
        log_z,
        volume: state.total_volume(),
        measure,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct MonotonicityReport {
    pub lhs_df_dchi: f64,
    pub rhs_integral: f64,
    pub relative_defect: f64,
    pub rhs_nonnegative: bool,
}

pub enum ProbeFunctional {
    FHat,
    WHat,
}

/// Monotonicity probe: central-difference derivative across three
/// consecutive states against the stated right-hand-side integral at the
/// middle state.
pub fn monotonicity_probe(
    states: &[FlowState; 3],
    which: ProbeFunctional,
) -> Result<MonotonicityReport, FlowError> {
    let dchi = states[1].chi - states[0].chi;
    let (v0, v2) = match which {
        ProbeFunctional::FHat => (
            functionals(&states[0])?.f_hat,
            functionals(&states[2])?.f_hat,
        ),
        ProbeFunctional::WHat => (
            functionals(&states[0])?.w_hat,
            functionals(&states[2])?.w_hat,
        ),
    };
    let lhs = (v2 - v0) / (2.0 * dchi);
    let st = &states[1];
    let grid = st.grid;
    let cell = grid.hx() * grid.hy() * TWO_PI * TWO_PI;
    let tau = st.tau();
    let mut rhs = 0.0;
    for i in 0..grid.nx {
        for j in 0..grid.ny {
            let k = grid.idx(i, j);
            let geo = node_geometry(st, i, j)?;
            let (hh, vv) = hessians(&geo);
            let ric = geo.curv.ricci.as_ref().unwrap();
            let gi = inv2(st.g.at(k));
            let hi = inv2(st.h.at(k));
            let g = st.g.at(k);
            let h = st.h.at(k);
            let shift = match which {
                ProbeFunctional::FHat => 0.0,
                ProbeFunctional::WHat => 1.0 / (2.0 * tau),
            };
            let mut norm2 = 0.0;
            for a in 0..2 {
                for b in 0..2 {
                    for c in 0..2 {
                        for dd in 0..2 {
                            let uh =
                                0.5 * (ric[a * 4 + b] + ric[b * 4 + a]) + hh[a][b] - shift * g[a][b];
                            let vh = 0.5 * (ric[c * 4 + dd] + ric[dd * 4 + c]) + hh[c][dd]
                                - shift * g[c][dd];
                            norm2 += gi[a][c] * gi[b][dd] * uh * vh;
                            let uv = 0.5 * (ric[(2 + a) * 4 + 2 + b] + ric[(2 + b) * 4 + 2 + a])
                                + vv[a][b]
                                - shift * h[a][b];
                            let vv2 = 0.5
                                * (ric[(2 + c) * 4 + 2 + dd] + ric[(2 + dd) * 4 + 2 + c])
                                + vv[c][dd]
                                - shift * h[c][dd];
                            norm2 += hi[a][c] * hi[b][dd] * uv * vv2;
                        }
                    }
                }
            }
            let dv = st.dvol(k) * cell;
            let weight = match which {
                ProbeFunctional::FHat => (-st.f[k]).exp(),
                ProbeFunctional::WHat => tau * st.mu(k),
            };
            rhs += 2.0 * norm2 * weight * dv;
        }
    }
    let defect = (lhs - rhs).abs() / rhs.abs().max(1e-12);
    Ok(MonotonicityReport {
        lhs_df_dchi: lhs,
        rhs_integral: rhs,
        relative_defect: defect,
        rhs_nonnegative: rhs >= 0.0,
    })
}
