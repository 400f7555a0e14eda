//! Lagrange model tests: Hessian/semispray/N-connection oracles, geodesic
//! equivalence, almost-Kaehler structure, normal d-connection and the
//! Chern-Weyl form.

use nholo::connections;
use nholo::field::{Chart, ScalarField};
use nholo::geometry::DMetric;
use nholo::lagrange::{
    almost_symplectic, canonical_nconnection, chern_weyl, dtheta_residual, geodesic_compare,
    hessian_metric, lagrange_dmetric, normal_dconnection, semispray,
    theta_equals_domega_residual, LagrangianModel,
};
use nholo::linalg;

fn chart() -> Chart {
    Chart::euclidean_2_2()
}

fn model(src: &str) -> LagrangianModel {
    let c = chart();
    LagrangianModel::new(c.clone(), ScalarField::from_expr(src, &c).unwrap())
}

/// L = g_ij(x) y^i y^j with g = diag(1, 1 + x1)
fn quadratic_model() -> LagrangianModel {
    model("y3^2 + (1 + x1)*y4^2")
}

/// A quartic (Finsler-type) sample: L = F^2 = sqrt(y3^4 + y4^4 + c y3^2 y4^2)
fn quartic_model() -> LagrangianModel {
    model("sqrt(y3^4 + y4^4 + 2.5*y3^2*y4^2)")
}

#[test]
fn hessian_simple_cases() {
    // L = y3^2 + y4^2 -> hcheck = diag(1, 1)
    let m = model("y3^2 + y4^2");
    let h = hessian_metric(&m, &[0.0, 0.0, 0.7, -0.3]).unwrap();
    assert!((h[0][0] - 1.0).abs() < 1e-14);
    assert!((h[1][1] - 1.0).abs() < 1e-14);
    assert!(h[0][1].abs() < 1e-14);

    // quadratic L recovers g(x)
    let m = quadratic_model();
    let p = [0.4, 0.0, 0.6, 0.2];
    let h = hessian_metric(&m, &p).unwrap();
    assert!((h[0][0] - 1.0).abs() < 1e-13);
    assert!((h[1][1] - 1.4).abs() < 1e-13);
}

#[test]
fn hessian_matches_fd_oracle_for_quartic() {
    let m = quartic_model();
    let p = [0.3, -0.2, 0.8, 0.5];
    let h = hessian_metric(&m, &p).unwrap();
    let fd = nholo::field::fd_oracle(&m.l, &p, 2, 1e-3).unwrap();
    for a in 0..2 {
        for b in 0..2 {
            let expect = 0.5 * fd.partial(&[2 + a, 2 + b]);
            assert!((h[a][b] - expect).abs() < 1e-6, "h[{a}][{b}]");
        }
    }
}

#[test]
fn semispray_oracles() {
    // L independent of x -> G = 0
    let m = model("y3^2 + 3*y4^2 + y3*y4");
    let g = semispray(&m, &[0.5, 0.5, 0.4, 0.6]).unwrap();
    assert!(g.iter().all(|v| v.abs() < 1e-14));

    // quadratic L: G^a = 1/2 Gamma^a_{bc}(x) y^b y^c with the Christoffel
    // symbols of g = diag(1, 1 + x1)
    let m = quadratic_model();
    let p = [0.4, 0.9, 0.6, 0.2];
    let g = semispray(&m, &p).unwrap();
    // Christoffels: Gamma^1_{22} = -g22,1 / 2 = -1/2; Gamma^2_{12} = g22,1/(2 g22)
    let g22 = 1.0 + p[0];
    let gamma1_22 = -0.5;
    let gamma2_12 = 0.5 / g22;
    let (y1, y2) = (p[2], p[3]);
    let expect0 = 0.5 * gamma1_22 * y2 * y2;
    let expect1 = 0.5 * (2.0 * gamma2_12 * y1 * y2);
    assert!((g[0] - expect0).abs() < 1e-12, "{} vs {expect0}", g[0]);
    assert!((g[1] - expect1).abs() < 1e-12, "{} vs {expect1}", g[1]);

    // homogeneity for L = F^2: G(x, lambda y) = lambda^2 G(x, y)
    let m = quartic_model();
    let p1 = [0.3, -0.2, 0.8, 0.5];
    let p2 = [0.3, -0.2, 1.6, 1.0];
    let g1 = semispray(&m, &p1).unwrap();
    let g2 = semispray(&m, &p2).unwrap();
    for a in 0..2 {
        assert!(
            (g2[a] - 4.0 * g1[a]).abs() < 1e-10 * (1.0 + g1[a].abs()),
            "homogeneity {a}"
        );
    }
}

#[test]
fn nconnection_oracles() {
    // independent of x -> 0
    let m = model("y3^2 + 3*y4^2");
    let nc = canonical_nconnection(&m, &[0.5, 0.5, 0.4, 0.6]).unwrap();
    assert!(nc.iter().flatten().all(|v| v.abs() < 1e-14));

    // quadratic: N^a_i = Gamma^a_{i b} y^b
    let m = quadratic_model();
    let p = [0.4, 0.9, 0.6, 0.2];
    let nc = canonical_nconnection(&m, &p).unwrap();
    let g22 = 1.0 + p[0];
    let gamma2_12 = 0.5 / g22;
    let gamma1_22 = -0.5;
    // N^1_1 = Gamma^1_{1b} y^b = 0; N^1_2 = Gamma^1_{2b} y^b = gamma1_22 y^2
    // N^2_1 = Gamma^2_{1b} y^b = gamma2_12 y^2; N^2_2 = gamma2_12 y^1
    assert!(nc[0][0].abs() < 1e-12);
    assert!((nc[0][1] - gamma1_22 * p[3]).abs() < 1e-12);
    assert!((nc[1][0] - gamma2_12 * p[3]).abs() < 1e-12);
    assert!((nc[1][1] - gamma2_12 * p[2]).abs() < 1e-12);

    // N equals the fd derivative of the semispray
    let m = quartic_model();
    let p = [0.3, -0.2, 0.8, 0.5];
    let nc = canonical_nconnection(&m, &p).unwrap();
    let h = 1e-5;
    for a in 0..2 {
        for i in 0..2 {
            let mut ph = p;
            ph[2 + i] += h;
            let mut pl = p;
            pl[2 + i] -= h;
            let fd = (semispray(&m, &ph).unwrap()[a] - semispray(&m, &pl).unwrap()[a]) / (2.0 * h);
            assert!((nc[a][i] - fd).abs() < 1e-6, "N^{a}_{i}");
        }
    }
}

#[test]
fn geodesics_agree() {
    // flat quadratic: straight lines, machine-level agreement
    let m = model("y3^2 + y4^2");
    let cmp = geodesic_compare(&m, &[0.0, 0.0], &[0.3, -0.2], 1.0, 1e-2).unwrap();
    assert!(cmp.max_deviation < 1e-12);
    let last = cmp.spray.last().unwrap();
    assert!((last.1[0] - 0.3).abs() < 1e-12);

    // curved quadratic: deviation < 1e-6 at RK4 step 1e-3 over tau in [0,1]
    let m = model("y3^2 + (1 + x1)^2*y4^2");
    let cmp = geodesic_compare(&m, &[0.1, 0.0], &[0.2, 0.3], 1.0, 1e-3).unwrap();
    assert!(cmp.max_deviation < 1e-6, "deviation {:e}", cmp.max_deviation);

    // energy conservation along the spray path for L = F^2
    let m = quartic_model();
    let cmp = geodesic_compare(&m, &[0.1, -0.1], &[0.5, 0.4], 1.0, 1e-3).unwrap();
    let l_of = |x: &[f64], y: &[f64]| {
        m.l.eval(&[x[0], x[1], y[0], y[1]]).unwrap()
    };
    let e0 = l_of(&cmp.spray[0].1, &cmp.spray[0].2);
    for s in cmp.spray.iter().step_by(100) {
        let e = l_of(&s.1, &s.2);
        assert!((e - e0).abs() < 1e-6, "energy drift {:e}", (e - e0).abs());
    }
}

#[test]
fn rk4_convergence_slope() {
    let m = model("y3^2 + (1 + x1)^2*y4^2");
    let reference = geodesic_compare(&m, &[0.1, 0.0], &[0.2, 0.3], 0.5, 1.0 / 2048.0).unwrap();
    let xref = &reference.spray.last().unwrap().1;
    let mut errs = Vec::new();
    for steps in [16usize, 32, 64] {
        let dt = 0.5 / steps as f64;
        let c = geodesic_compare(&m, &[0.1, 0.0], &[0.2, 0.3], 0.5, dt).unwrap();
        let x = &c.spray.last().unwrap().1;
        let e: f64 = x
            .iter()
            .zip(xref)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        errs.push(e);
    }
    let slope1 = (errs[0] / errs[1]).log2();
    let slope2 = (errs[1] / errs[2]).log2();
    assert!(
        slope1 >= 3.8 && slope2 >= 3.8,
        "slopes {slope1:.2}, {slope2:.2}, errs {errs:?}"
    );
}

#[test]
fn almost_kaehler_structure() {
    // canonical symplectic form for L = sum (y^a)^2
    let m = model("y3^2 + y4^2");
    let st = almost_symplectic(&m, &[0.2, 0.1, 0.5, 0.7]).unwrap();
    assert!((st.theta[2][0] - 1.0).abs() < 1e-14);
    assert!((st.theta[3][1] - 1.0).abs() < 1e-14);
    assert!(st.theta[2][1].abs() < 1e-14);

    // J^2 = -I at many points for the quartic model
    let m = quartic_model();
    for k in 0..50 {
        let p = [
            0.1 * k as f64 / 7.0,
            -0.2 + 0.01 * k as f64,
            0.5 + 0.01 * k as f64,
            0.8 - 0.005 * k as f64,
        ];
        let st = almost_symplectic(&m, &p).unwrap();
        let j2 = linalg::mat_mul(&st.j_matrix, &st.j_matrix);
        for a in 0..4 {
            for b in 0..4 {
                let expect = if a == b { -1.0 } else { 0.0 };
                assert!((j2[a][b] - expect).abs() < 1e-12);
            }
        }
        // theta(X, Y) = g(JX, Y) with the d-metric blocks
        let h = hessian_metric(&m, &p).unwrap();
        let mut gfull = vec![vec![0.0; 4]; 4];
        for i in 0..2 {
            for j in 0..2 {
                gfull[i][j] = h[i][j];
                gfull[2 + i][2 + j] = h[i][j];
            }
        }
        for al in 0..4 {
            for be in 0..4 {
                let mut gjx = 0.0;
                for t in 0..4 {
                    gjx += gfull[t][be] * st.j_matrix[t][al];
                }
                assert!(
                    (st.theta[al][be] - gjx).abs() < 1e-12,
                    "theta vs g(J.,.) at ({al},{be})"
                );
            }
        }
    }

    // theta = d(omega) and d(theta) = 0
    let m = quartic_model();
    let p = [0.3, -0.2, 0.8, 0.5];
    assert!(theta_equals_domega_residual(&m, &p).unwrap() < 1e-11);
    assert!(dtheta_residual(&m, &p).unwrap() < 1e-9);
    let m2 = model("(1 + 0.3*sin(x1))*y3^2 + (1 + 0.2*x2^2)*y4^2 + 0.1*y3*y4");
    assert!(dtheta_residual(&m2, &p).unwrap() < 1e-9);
}

#[test]
fn normal_connection_properties() {
    // flat quadratic -> all coefficients vanish
    let m = model("y3^2 + y4^2");
    let nd = normal_dconnection(&m, &[0.1, 0.2, 0.4, 0.5]).unwrap();
    assert!(nd.connection.values.iter().all(|v| v.abs() < 1e-13));

    // metric compatibility of the normal d-connection on the Lagrange
    // d-metric: D g = 0 evaluated from the connection and metric jets
    let m = quartic_model();
    let p = [0.3, -0.2, 0.8, 0.5];
    let jets = nholo::lagrange::lagrange_metric_jets(&m, &p, 2).unwrap();
    let nd = normal_dconnection(&m, &p).unwrap();
    let mut worst = 0.0f64;
    for mu in 0..4 {
        for a in 0..4 {
            for b in 0..4 {
                let gm = |x: usize, y: usize| -> f64 {
                    if x < 2 && y < 2 {
                        jets.g[x][y].value()
                    } else if x >= 2 && y >= 2 {
                        jets.h[x - 2][y - 2].value()
                    } else {
                        0.0
                    }
                };
                let e_g = if a < 2 && b < 2 {
                    jets.elongated_derive(&jets.g[a][b], mu).value()
                } else if a >= 2 && b >= 2 {
                    jets.elongated_derive(&jets.h[a - 2][b - 2], mu).value()
                } else {
                    0.0
                };
                let mut v = e_g;
                for cc in 0..4 {
                    v -= nd.connection.gamma(cc, a, mu) * gm(cc, b)
                        + nd.connection.gamma(cc, b, mu) * gm(a, cc);
                }
                worst = worst.max(v.abs());
            }
        }
    }
    assert!(worst < 1e-9, "D g residual {worst:e}");

    // torsion structure: T^i_{jk} = 0, T^a_{bc} = 0, T^a_{ij} = Omega^a_{ij}
    let curv = &nd.curvature;
    for i in 0..2 {
        for j in 0..2 {
            for k in 0..2 {
                assert!(curv.torsion_at(i, j, k).abs() < 1e-11);
                assert!(curv.torsion_at(2 + i, 2 + j, 2 + k).abs() < 1e-11);
            }
        }
    }
    let w = connections::anholonomy_from_jets(&jets);
    for a in 0..2 {
        for i in 0..2 {
            for j in 0..2 {
                assert!(
                    (curv.torsion_at(2 + a, i, j) - w.omega(a, i, j)).abs() < 1e-10,
                    "T^a_ij vs Omega"
                );
            }
        }
    }
}

#[test]
fn curvature_closed_forms() {
    // engine families vs the closed forms of the curvature of the normal
    // d-connection (with the mixed-torsion correction in the P-family)
    let m = quartic_model();
    let p = [0.3, -0.2, 0.8, 0.5];
    let jets = nholo::lagrange::lagrange_metric_jets(&m, &p, 2).unwrap();
    let nd = normal_dconnection(&m, &p).unwrap();
    let curv = &nd.curvature;
    let w = connections::anholonomy_from_jets(&jets);

    // gamma jets for derivative access
    let gamma = connections::normal_gamma_jets(&jets).unwrap();
    let d = 4usize;
    let idx3 = |c: usize, a: usize, b: usize| (c * d + a) * d + b;
    let e_of = |j: &nholo::jet::Jet, mu: usize| jets.elongated_derive(j, mu).value();
    let gv = |c: usize, a: usize, b: usize| gamma[idx3(c, a, b)].value();

    // R^i_{hjk} = e_k L^i_{hj} - e_j L^i_{hk} + L^m_{hj} L^i_{mk}
    //           - L^m_{hk} L^i_{mj} - C^i_{ha} Omega^a_{kj}
    for i in 0..2 {
        for hh in 0..2 {
            for j in 0..2 {
                for k in 0..2 {
                    let mut v = e_of(&gamma[idx3(i, hh, j)], k) - e_of(&gamma[idx3(i, hh, k)], j);
                    for mm in 0..2 {
                        v += gv(mm, hh, j) * gv(i, mm, k) - gv(mm, hh, k) * gv(i, mm, j);
                    }
                    for a in 0..2 {
                        v -= gv(i, hh, 2 + a) * w.omega(a, k, j);
                    }
                    assert!(
                        (curv.riemann_at(i, hh, j, k) - v).abs() < 1e-9,
                        "R^{i}_{hh}{j}{k}"
                    );
                }
            }
        }
    }
    // S^a_{bcd} = e_d C^a_{bc} - e_c C^a_{bd} + C^e_{bc} C^a_{ed} - C^e_{bd} C^a_{ec}
    for a in 0..2 {
        for b in 0..2 {
            for c in 0..2 {
                for dd in 0..2 {
                    let (aa, bb, cc, ddd) = (2 + a, 2 + b, 2 + c, 2 + dd);
                    let mut v =
                        e_of(&gamma[idx3(aa, bb, cc)], ddd) - e_of(&gamma[idx3(aa, bb, ddd)], cc);
                    for ee in 0..2 {
                        v += gv(2 + ee, bb, cc) * gv(aa, 2 + ee, ddd)
                            - gv(2 + ee, bb, ddd) * gv(aa, 2 + ee, cc);
                    }
                    assert!(
                        (curv.riemann_at(aa, bb, cc, ddd) - v).abs() < 1e-9,
                        "S^{a}_{b}{c}{dd}"
                    );
                }
            }
        }
    }
    // P^i_{jka} = e_a L^i_{jk} - D_k C^i_{ja} + C^i_{jb} T^b_{ka}
    for i in 0..2 {
        for j in 0..2 {
            for k in 0..2 {
                for a in 0..2 {
                    let av = 2 + a;
                    let mut dk_c = e_of(&gamma[idx3(i, j, av)], k);
                    for mm in 0..2 {
                        dk_c += gv(i, mm, k) * gv(mm, j, av) - gv(mm, j, k) * gv(i, mm, av);
                    }
                    for b in 0..2 {
                        // -L^b_{a k} C^i_{jb} term of the covariant derivative
                        dk_c -= gv(2 + b, av, k) * gv(i, j, 2 + b);
                    }
                    let mut v = e_of(&gamma[idx3(i, j, k)], av) - dk_c;
                    for b in 0..2 {
                        v += gv(i, j, 2 + b) * curv.torsion_at(2 + b, k, av);
                    }
                    // engine stores the (k, a)-plane as R^i_{j k a}... the
                    // 2-form pairing is (gamma, delta) = (k, av)
                    assert!(
                        (curv.riemann_at(i, j, k, av) - v).abs() < 1e-9,
                        "P^{i}_{j}{k}{a}: {} vs {v}",
                        curv.riemann_at(i, j, k, av)
                    );
                }
            }
        }
    }
}

#[test]
fn chern_weyl_properties() {
    // flat quadratic -> 0
    let m = model("y3^2 + y4^2");
    let g = chern_weyl(&m, &[0.1, 0.2, 0.4, 0.5]).unwrap();
    assert!(g.iter().flatten().all(|v| v.abs() < 1e-13));

    // antisymmetry and the independent contraction oracle
    let m = quartic_model();
    let p = [0.3, -0.2, 0.8, 0.5];
    let g = chern_weyl(&m, &p).unwrap();
    let nd = normal_dconnection(&m, &p).unwrap();
    let st = almost_symplectic(&m, &p).unwrap();
    for mu in 0..4 {
        for nu in 0..4 {
            assert!((g[mu][nu] + g[nu][mu]).abs() < 1e-12, "antisymmetry");
            // independent loop (explicit family sum)
            let mut acc = 0.0;
            for tau in 0..4 {
                for al in 0..4 {
                    acc += st.j_matrix[al][tau] * nd.curvature.riemann_at(tau, al, mu, nu);
                }
            }
            assert!((g[mu][nu] + 0.25 * acc).abs() < 1e-10);
        }
    }
}

#[test]
fn modeling_equivalence_quadratic() {
    // the Lagrange d-metric of a quadratic model equals the base metric in
    // the N-adapted basis
    let m = quadratic_model();
    let dm = lagrange_dmetric(&m);
    let p = [0.4, 0.9, 0.6, 0.2];
    let g22 = 1.0 + p[0];
    assert!((dm.g[0][0].eval(&p).unwrap() - 1.0).abs() < 1e-10);
    assert!((dm.g[1][1].eval(&p).unwrap() - g22).abs() < 1e-10);
    assert!((dm.h[1][1].eval(&p).unwrap() - g22).abs() < 1e-10);
    assert!(dm.g[0][1].eval(&p).unwrap().abs() < 1e-10);
}

#[test]
fn lccon_distortion_closed_form() {
    // Levi-Civita vs normal d-connection: the difference-form distortion
    // matches the closed-form components (with the corrected contraction
    // in the L^a_{bk} line).
    let m = model("(1 + 0.2*sin(x1))*y3^2 + (1 + 0.1*x2)*y4^2 + 0.15*x1*y3*y4");
    let p = [0.3, -0.2, 0.8, 0.5];
    let dm = lagrange_dmetric(&m);
    let lc = connections::levi_civita_nadapted(&dm, &p).unwrap();
    let nd = normal_dconnection(&m, &p).unwrap();
    let jets = nholo::lagrange::lagrange_metric_jets(&m, &p, 2).unwrap();
    let w = connections::anholonomy_from_jets(&jets);
    let gch = hessian_metric(&m, &p).unwrap();
    let gin = linalg::inverse(&gch).unwrap();
    let n = 2usize;
    // L-circle: oL^c_{aj} = L^c_{aj} - d_{y^a} N^c_j (v-labels mapped to 0..n)
    let ol = |c: usize, a: usize, j: usize| -> f64 {
        nd.connection.gamma(n + c, n + a, j) - jets.n[c][j].d1(n + a)
    };
    let xi_h = |i: usize, h: usize, j: usize, k: usize| -> f64 {
        0.5 * ((if i == j { 1.0 } else { 0.0 }) * (if h == k { 1.0 } else { 0.0 })
            - gch[j][k] * gin[i][h])
    };
    let xi_pm = |sgn: f64, a: usize, b: usize, c: usize, dd: usize| -> f64 {
        0.5 * ((if a == c { 1.0 } else { 0.0 }) * (if b == dd { 1.0 } else { 0.0 })
            + sgn * gch[c][dd] * gin[a][b])
    };
    let zdiff = |cc: usize, a: usize, b: usize| -> f64 {
        lc.gamma(cc, a, b) - nd.connection.gamma(cc, a, b)
    };
    // Z^i_{jk} = 0
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                assert!(zdiff(i, j, k).abs() < 1e-9, "Z^i_jk");
            }
        }
    }
    // Z^a_{bc} = 0 (all vertical)
    for a in 0..n {
        for b in 0..n {
            for c in 0..n {
                assert!(zdiff(n + a, n + b, n + c).abs() < 1e-9, "Z^a_bc");
            }
        }
    }
    // Z^a_{jk} = -C^i_{jb} g_{ik} g^{ab} - 1/2 Omega^a_{jk}
    for a in 0..n {
        for j in 0..n {
            for k in 0..n {
                let mut v = -0.5 * w.omega(a, j, k);
                for i in 0..n {
                    for b in 0..n {
                        v -= nd.connection.gamma(i, j, n + b) * gch[i][k] * gin[a][b];
                    }
                }
                assert!(
                    (zdiff(n + a, j, k) - v).abs() < 1e-8,
                    "Z^a_jk ({a},{j},{k}): {} vs {v}",
                    zdiff(n + a, j, k)
                );
            }
        }
    }
    // Z^i_{bk} = 1/2 Omega^c_{jk} g_{cb} g^{ji} - Xi^{ih}_{jk} C^j_{hb}
    for i in 0..n {
        for b in 0..n {
            for k in 0..n {
                let mut v = 0.0;
                for c in 0..n {
                    for j in 0..n {
                        v += 0.5 * w.omega(c, j, k) * gch[c][b] * gin[j][i];
                    }
                }
                for j in 0..n {
                    for hh in 0..n {
                        v -= xi_h(i, hh, j, k) * nd.connection.gamma(j, hh, n + b);
                    }
                }
                assert!(
                    (zdiff(i, n + b, k) - v).abs() < 1e-8,
                    "Z^i_bk ({i},{b},{k}): {} vs {v}",
                    zdiff(i, n + b, k)
                );
            }
        }
    }
    // Z^a_{bk} = +Xi^{ab}_{cd} oL^c_{dk}
    for a in 0..n {
        for b in 0..n {
            for k in 0..n {
                let mut v = 0.0;
                for c in 0..n {
                    for dd in 0..n {
                        v += xi_pm(1.0, a, b, c, dd) * ol(c, dd, k);
                    }
                }
                assert!(
                    (zdiff(n + a, n + b, k) - v).abs() < 1e-8,
                    "Z^a_bk ({a},{b},{k}): {} vs {v}",
                    zdiff(n + a, n + b, k)
                );
            }
        }
    }
    // Z^i_{kb} = 1/2 Omega^c_{jk} g_{cb} g^{ji} + Xi^{ih}_{jk} C^j_{hb}
    for i in 0..n {
        for k in 0..n {
            for b in 0..n {
                let mut v = 0.0;
                for c in 0..n {
                    for j in 0..n {
                        v += 0.5 * w.omega(c, j, k) * gch[c][b] * gin[j][i];
                    }
                }
                for j in 0..n {
                    for hh in 0..n {
                        v += xi_h(i, hh, j, k) * nd.connection.gamma(j, hh, n + b);
                    }
                }
                assert!(
                    (zdiff(i, k, n + b) - v).abs() < 1e-8,
                    "Z^i_kb ({i},{k},{b}): {} vs {v}",
                    zdiff(i, k, n + b)
                );
            }
        }
    }
    // Z^a_{jb} = - (-Xi)^{ad}_{cb} oL^c_{dj}
    for a in 0..n {
        for j in 0..n {
            for b in 0..n {
                let mut v = 0.0;
                for c in 0..n {
                    for dd in 0..n {
                        v -= xi_pm(-1.0, a, dd, c, b) * ol(c, dd, j);
                    }
                }
                assert!(
                    (zdiff(n + a, j, n + b) - v).abs() < 1e-8,
                    "Z^a_jb ({a},{j},{b}): {} vs {v}",
                    zdiff(n + a, j, n + b)
                );
            }
        }
    }
    // Z^i_{ab} = -g^{ij}/2 [oL^c_{aj} g_{cb} + oL^c_{bj} g_{ca}]
    for i in 0..n {
        for a in 0..n {
            for b in 0..n {
                let mut v = 0.0;
                for j in 0..n {
                    for c in 0..n {
                        v -= 0.5 * gin[i][j] * (ol(c, a, j) * gch[c][b] + ol(c, b, j) * gch[c][a]);
                    }
                }
                assert!(
                    (zdiff(i, n + a, n + b) - v).abs() < 1e-8,
                    "Z^i_ab ({i},{a},{b}): {} vs {v}",
                    zdiff(i, n + a, n + b)
                );
            }
        }
    }
    let _ = DMetric::flat(&chart());
}
