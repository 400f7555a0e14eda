//! Ricci-flow tests: fixed point, the conformal scalar-PDE oracle,
//! measure/volume preservation, frame evolution and monotonicity probes.

use std::sync::Mutex;

use nholo::ricciflow::{
    evolve_frames, flow_step, functionals, monotonicity_probe, stability_bound, FlowCoupling,
    FlowGrid, FlowState, FrameField, ProbeFunctional, TWO_PI,
};

/// Heavy tests take this lock so wall-clock assertions do not race each
/// other on small machines.
static HEAVY: Mutex<()> = Mutex::new(());

#[test]
fn flat_torus_is_fixed_point() {
    let grid = FlowGrid { nx: 16, ny: 16 };
    let mut st = FlowState::flat_torus(grid, 0.3, 4.0);
    let dchi = 1e-3;
    let steps = (1.0 / dchi) as usize;
    let g0 = st.g.clone();
    for _ in 0..steps {
        st = flow_step(&st, dchi, false, 1).unwrap();
    }
    let mut drift = 0.0f64;
    for k in 0..grid.len() {
        drift = drift.max((st.g.c11[k] - g0.c11[k]).abs());
        drift = drift.max((st.g.c12[k] - g0.c12[k]).abs());
        drift = drift.max((st.g.c22[k] - g0.c22[k]).abs());
    }
    assert!(drift < 1e-10, "flat torus drift {drift:e} per unit chi");
    // F-trace identically zero along the way
    let rep = functionals(&st).unwrap();
    assert!(rep.f_hat.abs() < 1e-10);
}

/// Independent method-of-lines oracle for the 2-d conformal flow
/// d(phi)/d(chi) = e^{-2 phi} Lap0 phi on the periodic grid, using the same
/// 4th-order stencil but an entirely separate implementation path.
struct PhiOracle {
    nx: usize,
    ny: usize,
    h: f64,
    phi: Vec<f64>,
}

impl PhiOracle {
    fn lap(&self, p: &[f64]) -> Vec<f64> {
        let (nx, ny, h) = (self.nx, self.ny, self.h);
        let at = |i: i64, j: i64| -> f64 {
            p[(i.rem_euclid(nx as i64) as usize) * ny + j.rem_euclid(ny as i64) as usize]
        };
        let mut out = vec![0.0; p.len()];
        for i in 0..nx as i64 {
            for j in 0..ny as i64 {
                let dxx = (-at(i + 2, j) + 16.0 * at(i + 1, j) - 30.0 * at(i, j)
                    + 16.0 * at(i - 1, j)
                    - at(i - 2, j))
                    / (12.0 * h * h);
                let dyy = (-at(i, j + 2) + 16.0 * at(i, j + 1) - 30.0 * at(i, j)
                    + 16.0 * at(i, j - 1)
                    - at(i, j - 2))
                    / (12.0 * h * h);
                out[(i as usize) * ny + j as usize] = dxx + dyy;
            }
        }
        out
    }

    fn rhs(&self, p: &[f64]) -> Vec<f64> {
        let lap = self.lap(p);
        p.iter()
            .zip(&lap)
            .map(|(phi, l)| (-2.0 * phi).exp() * l)
            .collect()
    }

    fn rk4(&mut self, dt: f64) {
        let k1 = self.rhs(&self.phi);
        let s2: Vec<f64> = self
            .phi
            .iter()
            .zip(&k1)
            .map(|(p, k)| p + 0.5 * dt * k)
            .collect();
        let k2 = self.rhs(&s2);
        let s3: Vec<f64> = self
            .phi
            .iter()
            .zip(&k2)
            .map(|(p, k)| p + 0.5 * dt * k)
            .collect();
        let k3 = self.rhs(&s3);
        let s4: Vec<f64> = self.phi.iter().zip(&k3).map(|(p, k)| p + dt * k).collect();
        let k4 = self.rhs(&s4);
        for (i, p) in self.phi.iter_mut().enumerate() {
            *p += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
    }
}

#[test]
fn conformal_flow_matches_scalar_pde_oracle() {
    let _guard = HEAVY.lock().unwrap();
    let n = 64;
    let grid = FlowGrid { nx: n, ny: n };
    let phi0 = |x: f64, y: f64| 0.08 * (x.sin() * y.cos()) + 0.03 * (2.0 * x).cos();
    let mut st = FlowState::conformal(grid, phi0, 4.0);
    let mut oracle = PhiOracle {
        nx: n,
        ny: n,
        h: TWO_PI / n as f64,
        phi: (0..n)
            .flat_map(|i| {
                (0..n).map(move |j| {
                    phi0(
                        i as f64 * TWO_PI / n as f64,
                        j as f64 * TWO_PI / n as f64,
                    )
                })
            })
            .collect(),
    };
    let chi_end = 0.1;
    let steps = 64usize;
    let dchi = chi_end / steps as f64;
    assert!(dchi < stability_bound(&st), "step within stability bound");
    let t0 = std::time::Instant::now();
    for _ in 0..steps {
        st = flow_step(&st, dchi, false, 2).unwrap();
        oracle.rk4(dchi);
    }
    let elapsed = t0.elapsed().as_secs_f64();
    let mut sup = 0.0f64;
    for k in 0..grid.len() {
        let phi_flow = 0.5 * st.g.c11[k].ln();
        sup = sup.max((phi_flow - oracle.phi[k]).abs());
        // h block stays frozen at the flat fiber
        assert!((st.h.c11[k] - 1.0).abs() < 1e-12);
        assert!((st.g.c11[k] - st.g.c22[k]).abs() < 1e-10);
    }
    assert!(sup < 1e-4, "sup-norm {sup:e} against the scalar PDE oracle");
    assert!(elapsed < 60.0, "conformal flow took {elapsed:.1} s");
}

#[test]
fn normalized_flow_preserves_volume() {
    let _guard = HEAVY.lock().unwrap();
    let grid = FlowGrid { nx: 24, ny: 24 };
    let st0 = FlowState::conformal(grid, |x, y| 0.06 * (x + y).sin(), 4.0);
    let vol0 = st0.total_volume();
    let mut st = st0;
    let dchi = 2.0e-3;
    let steps = (0.5f64 / dchi).round() as usize;
    for _ in 0..steps {
        st = flow_step(&st, dchi, true, 1).unwrap();
    }
    let drift = (st.total_volume() - vol0).abs() / vol0;
    assert!(drift < 1e-5, "volume drift {drift:e}");
}

#[test]
fn coupled_system_preserves_measures() {
    let _guard = HEAVY.lock().unwrap();
    let grid = FlowGrid { nx: 48, ny: 48 };
    // F-coupling preserves int e^{-f} dV
    let mut st = FlowState::conformal(grid, |x, y| 0.05 * x.sin() * y.sin(), 4.0);
    for (k, f) in st.f.iter_mut().enumerate() {
        *f = 0.2 + 0.05 * ((k % 5) as f64); // rough non-constant start
    }
    // smooth non-constant f start instead
    for i in 0..grid.nx {
        for j in 0..grid.ny {
            let p = grid.point(i, j);
            st.f[grid.idx(i, j)] = 0.2 + 0.05 * p[0].cos();
        }
    }
    let m0 = st.f_measure();
    let dchi = 4.0e-4;
    for _ in 0..40 {
        st = flow_step(&st, dchi, false, 2).unwrap();
    }
    let rel = (st.f_measure() - m0).abs() / m0;
    assert!(rel < 1e-6, "e^-f measure drift {rel:e}");

    // W-coupling preserves int mu dV with tau = tau0 - chi
    let mut stw = FlowState::conformal(grid, |x, y| 0.05 * x.sin() * y.sin(), 4.0);
    stw.coupling = FlowCoupling::WEntropy;
    for i in 0..grid.nx {
        for j in 0..grid.ny {
            let p = grid.point(i, j);
            stw.f[grid.idx(i, j)] = 0.2 + 0.05 * p[1].sin();
        }
    }
    stw.normalize_measure();
    let w0 = stw.mu_measure();
    assert!((w0 - 1.0).abs() < 1e-12);
    for _ in 0..40 {
        stw = flow_step(&stw, dchi, false, 2).unwrap();
    }
    let relw = (stw.mu_measure() - w0).abs();
    assert!(relw < 1e-6, "mu measure drift {relw:e}");
}

#[test]
fn frame_evolution_tracks_metric() {
    let _guard = HEAVY.lock().unwrap();
    let grid = FlowGrid { nx: 24, ny: 24 };
    let st0 = FlowState::conformal(grid, |x, _| 0.05 * x.sin(), 4.0);
    let mut st = st0.clone();
    let mut frames = FrameField::init(&st0);
    let dchi = 1.5e-3;
    for _ in 0..30 {
        let (next, fr) = evolve_frames(&st, &frames, dchi, 1).unwrap();
        st = next;
        frames = fr;
    }
    let mut worst = 0.0f64;
    for k in 0..grid.len() {
        let (gh, hv) = frames.metric_blocks(k);
        let g = st.g.at(k);
        let h = st.h.at(k);
        for a in 0..2 {
            for b in 0..2 {
                worst = worst.max((gh[a][b] - g[a][b]).abs());
                worst = worst.max((hv[a][b] - h[a][b]).abs());
            }
        }
    }
    assert!(worst < 1e-4, "frame-reconstructed metric defect {worst:e}");
}

#[test]
fn monotonicity_probes() {
    let _guard = HEAVY.lock().unwrap();
    let grid = FlowGrid { nx: 24, ny: 24 };
    // perturbed flat start g = (1 + 0.05 sin x1) delta
    let mut st = FlowState::flat_torus(grid, 0.0, 4.0);
    for i in 0..grid.nx {
        for j in 0..grid.ny {
            let p = grid.point(i, j);
            let k = grid.idx(i, j);
            let v = 1.0 + 0.05 * p[0].sin();
            st.g.c11[k] = v;
            st.g.c22[k] = v;
            st.f[k] = 0.1 * p[0].cos();
        }
    }
    st.normalize_measure();
    let dchi = 1.0e-3;

    // F probe on the F-coupled system
    let s0 = st.clone();
    let s1 = flow_step(&s0, dchi, false, 1).unwrap();
    let s2 = flow_step(&s1, dchi, false, 1).unwrap();
    let rep = monotonicity_probe(&[s0.clone(), s1, s2], ProbeFunctional::FHat).unwrap();
    assert!(rep.rhs_nonnegative);
    assert!(
        rep.relative_defect < 1e-2,
        "F-monotonicity defect {:e} (lhs {:e}, rhs {:e})",
        rep.relative_defect,
        rep.lhs_df_dchi,
        rep.rhs_integral
    );

    // W probe on the W-coupled system
    let mut sw0 = s0;
    sw0.coupling = FlowCoupling::WEntropy;
    let sw1 = flow_step(&sw0, dchi, false, 1).unwrap();
    let sw2 = flow_step(&sw1, dchi, false, 1).unwrap();
    let repw = monotonicity_probe(&[sw0, sw1, sw2], ProbeFunctional::WHat).unwrap();
    assert!(repw.rhs_nonnegative);
    assert!(
        repw.relative_defect < 5e-2,
        "W-monotonicity defect {:e}",
        repw.relative_defect
    );
}

#[test]
fn functional_identities() {
    let grid = FlowGrid { nx: 16, ny: 16 };
    // flat torus, f = const with normalized measure: F = 0, sigma-hat = 0
    let mut st = FlowState::flat_torus(grid, 0.0, 1.0 / (4.0 * std::f64::consts::PI));
    // pick tau so (4 pi tau)^{-2} e^{-f} integrates to 1 with f = const:
    // simpler: just normalize
    st.normalize_measure();
    let rep = functionals(&st).unwrap();
    assert!(rep.f_hat.abs() < 1e-12);
    assert!((rep.measure - 1.0).abs() < 1e-12);
    // flat + constant f: Ric = 0, Hess = 0, fluctuation reduces to the
    // pure -g/(2 tau) norm term; it must be nonnegative in any case
    assert!(rep.fluctuation >= 0.0);

    // entropy sign convention: W = -S on f = 0 data (no scaling, no
    // gradient: the two functionals are exact negatives)
    let st2 = FlowState::flat_torus(grid, 0.0, 4.0);
    let rep2 = functionals(&st2).unwrap();
    assert!(
        (rep2.w_hat + rep2.entropy).abs() < 1e-10 * (1.0 + rep2.w_hat.abs()),
        "W = -S on f = 0 data: {} vs {}",
        rep2.w_hat,
        -rep2.entropy
    );

    // sigma-hat stays nonnegative on a curved state
    let st3 = FlowState::conformal(grid, |x, y| 0.05 * (x - y).sin(), 4.0);
    let rep3 = functionals(&st3).unwrap();
    assert!(rep3.fluctuation >= 0.0);
}

#[test]
fn fluctuation_matches_independent_contraction() {
    // assemble sigma-hat by an independent index-loop oracle: same node
    // ingredients (engine Ricci, connection, f-jet), independent loops
    use nholo::connections::{self, ConnectionKind};
    let grid = FlowGrid { nx: 12, ny: 12 };
    let mut st = FlowState::conformal(grid, |x, y| 0.05 * x.sin() + 0.03 * y.cos(), 4.0);
    for i in 0..grid.nx {
        for j in 0..grid.ny {
            let p = grid.point(i, j);
            st.f[grid.idx(i, j)] = 0.1 * p[0].sin();
        }
    }
    let rep = functionals(&st).unwrap();
    let tau = st.tau();
    let cell = grid.hx() * grid.hy() * TWO_PI * TWO_PI;
    let mut oracle = 0.0;
    for i in 0..grid.nx {
        for j in 0..grid.ny {
            let k = grid.idx(i, j);
            let jets = nholo::ricciflow::debug_node_jets(&st, i, j);
            let (conn, curv) =
                connections::connection_and_curvature_from_jets(&jets, ConnectionKind::CanonicalD)
                    .unwrap();
            // f-jet through the same public helper
            let f_jet = nholo::ricciflow::debug_node_jet_of(&st, i, j);
            let ef: Vec<f64> = (0..4).map(|mu| jets.elongated_d1(&f_jet, mu)).collect();
            // independent covariant Hessian assembly
            let mut hess = [[0.0f64; 4]; 4];
            for a in 0..2 {
                for b in 0..2 {
                    let ebf = jets.elongated_derive(&f_jet, b);
                    let mut v = jets.elongated_d1(&ebf, a);
                    for c in 0..2 {
                        v -= conn.gamma(c, b, a) * ef[c];
                    }
                    hess[b][a] = v;
                    let mut vv = f_jet.d2(2 + a, 2 + b);
                    for c in 0..2 {
                        vv -= conn.gamma(2 + c, 2 + b, 2 + a) * ef[2 + c];
                    }
                    hess[2 + b][2 + a] = vv;
                }
            }
            let g = st.g.at(k);
            let h = st.h.at(k);
            let gi = [[1.0 / g[0][0], 0.0], [0.0, 1.0 / g[1][1]]];
            let hi = [[1.0 / h[0][0], 0.0], [0.0, 1.0 / h[1][1]]];
            let gm = |x: usize, y: usize| -> f64 {
                if x < 2 && y < 2 {
                    g[x][y]
                } else if x >= 2 && y >= 2 {
                    h[x - 2][y - 2]
                } else {
                    0.0
                }
            };
            let upper = |x: usize, y: usize| -> f64 {
                if x < 2 && y < 2 {
                    gi[x][y]
                } else if x >= 2 && y >= 2 {
                    hi[x - 2][y - 2]
                } else {
                    0.0
                }
            };
            let term = |a: usize, b: usize| -> f64 {
                0.5 * (curv.ricci_at(a, b) + curv.ricci_at(b, a)) + hess[a][b]
                    - gm(a, b) / (2.0 * tau)
            };
            let mut norm2 = 0.0;
            // block norms only (h-block and v-block families)
            for block in [[0usize, 1usize], [2, 3]] {
                for &a in &block {
                    for &b in &block {
                        for &c in &block {
                            for &dd in &block {
                                norm2 += upper(a, c) * upper(b, dd) * term(a, b) * term(c, dd);
                            }
                        }
                    }
                }
            }
            let dv = st.dvol(k) * cell;
            oracle += 2.0 * tau * tau * norm2 * st.mu(k) * dv;
        }
    }
    let rel = (rep.fluctuation - oracle).abs() / oracle.abs().max(1e-12);
    assert!(
        rel < 1e-8,
        "fluctuation {:e} vs oracle {:e} (rel {rel:e})",
        rep.fluctuation,
        oracle
    );
}

#[test]
fn grid_refinement_convergence() {
    // doubling nodes: F-hat changes consistently with >= 2nd order
    let phi = |x: f64, y: f64| 0.07 * x.sin() * y.cos();
    let f_of = |n: usize| {
        let grid = FlowGrid { nx: n, ny: n };
        let mut st = FlowState::conformal(grid, phi, 4.0);
        for i in 0..n {
            for j in 0..n {
                let p = grid.point(i, j);
                st.f[grid.idx(i, j)] = 0.1 * p[0].sin();
            }
        }
        functionals(&st).unwrap().f_hat
    };
    let f16 = f_of(16);
    let f32 = f_of(32);
    let f64v = f_of(64);
    let e1 = (f16 - f64v).abs();
    let e2 = (f32 - f64v).abs();
    let slope = (e1 / e2).log2();
    assert!(slope >= 2.0, "refinement slope {slope:.2} ({e1:e} -> {e2:e})");
}

#[test]
fn stability_guard_rejects_large_steps() {
    let grid = FlowGrid { nx: 16, ny: 16 };
    let st = FlowState::flat_torus(grid, 0.0, 4.0);
    let bound = stability_bound(&st);
    assert!(flow_step(&st, bound * 10.0, false, 1).is_err());
}

#[test]
fn fast_ricci_path_matches_full_engine() {
    // the stepper's contracted-Ricci path must agree with the full
    // curvature engine componentwise
    use nholo::connections::{self, ConnectionKind};
    let grid = FlowGrid { nx: 12, ny: 12 };
    let mut st = FlowState::conformal(grid, |x, y| 0.1 * (x + y).sin(), 4.0);
    // make it less symmetric: perturb h and N
    for i in 0..grid.nx {
        for j in 0..grid.ny {
            let p = grid.point(i, j);
            let k = grid.idx(i, j);
            st.h.c11[k] = 1.0 + 0.1 * p[1].cos();
            st.h.c12[k] = 0.05 * p[0].sin();
            st.n[0][0][k] = 0.1 * p[0].sin();
            st.n[1][1][k] = 0.08 * p[1].cos();
        }
    }
    // one step exercises the fast path; compare rhs-equivalent quantities by
    // reconstructing the node jets and calling both engines
    let jets = nholo::ricciflow::debug_node_jets(&st, 3, 5);
    let (_, ric_fast, sh, sv) = connections::canonical_ricci_from_jets(&jets).unwrap();
    let full = connections::curvature_from_jets(&jets, ConnectionKind::CanonicalD).unwrap();
    for b in 0..4 {
        for c in 0..4 {
            assert!(
                (ric_fast[b * 4 + c] - full.ricci_at(b, c)).abs() < 1e-12,
                "Ricci mismatch at ({b},{c})"
            );
        }
    }
    assert!((sh + sv - full.scalar.unwrap()).abs() < 1e-12);
}

#[test]
fn threaded_rhs_is_deterministic() {
    let grid = FlowGrid { nx: 16, ny: 16 };
    let st = FlowState::conformal(grid, |x, y| 0.05 * (x + 2.0 * y).sin(), 4.0);
    let a = flow_step(&st, 1e-3, false, 1).unwrap();
    let b = flow_step(&st, 1e-3, false, 4).unwrap();
    for k in 0..grid.len() {
        assert_eq!(a.g.c11[k].to_bits(), b.g.c11[k].to_bits());
        assert_eq!(a.f[k].to_bits(), b.f[k].to_bits());
    }
}
