//! Pipeline dispatch: build the requested objects from a parsed
//! configuration, run the checks, and emit reports.

use std::fmt::Write as _;
use std::path::Path;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use nholo::connections::{self, ConnectionKind};
use nholo::field::{Chart, ScalarField};
use nholo::geometry::{DMetric, NConnection};
use nholo::lagrange::{
    dtheta_residual, geodesic_compare, LagrangianModel,
};
use nholo::report::{EquationResidual, ResidualReport};
use nholo::ricciflow::{flow_step, functionals, FlowCoupling, FlowGrid, FlowState};
use nholo::solutions::{
    self, generate_metric, residual_ep1a, GenerateOptions, GeneratingData, Grid3,
};

use crate::config::Value;

pub struct RunError {
    pub exit: i32,
    pub message: String,
}

impl RunError {
    fn config(msg: impl Into<String>) -> RunError {
        RunError {
            exit: 2,
            message: msg.into(),
        }
    }

    fn numeric(msg: impl Into<String>) -> RunError {
        RunError {
            exit: 1,
            message: msg.into(),
        }
    }
}

#[derive(Serialize)]
pub struct Report {
    pub command: String,
    pub seed: u64,
    pub tol_scale: f64,
    pub items: Vec<EquationResidual>,
    pub pass: bool,
}

pub struct Options {
    pub out_dir: std::path::PathBuf,
    pub threads: usize,
    pub seed: u64,
    pub tol_scale: f64,
}

fn get_str<'a>(cfg: &'a Value, path: &str) -> Result<&'a str, RunError> {
    cfg.get(path)
        .and_then(Value::as_str)
        .ok_or_else(|| RunError::config(format!("missing string key `{path}`")))
}

fn get_num(cfg: &Value, path: &str) -> Result<f64, RunError> {
    cfg.get(path)
        .and_then(Value::as_num)
        .ok_or_else(|| RunError::config(format!("missing numeric key `{path}`")))
}

fn get_num_or(cfg: &Value, path: &str, default: f64) -> f64 {
    cfg.get(path).and_then(Value::as_num).unwrap_or(default)
}

fn get_bool_or(cfg: &Value, path: &str, default: bool) -> bool {
    cfg.get(path).and_then(Value::as_bool).unwrap_or(default)
}

fn get_vec(cfg: &Value, path: &str) -> Result<Vec<f64>, RunError> {
    let arr = cfg
        .get(path)
        .and_then(Value::as_array)
        .ok_or_else(|| RunError::config(format!("missing array key `{path}`")))?;
    arr.iter()
        .map(|v| {
            v.as_num()
                .ok_or_else(|| RunError::config(format!("non-numeric entry in `{path}`")))
        })
        .collect()
}

fn chart() -> Chart {
    Chart::euclidean_2_2()
}

fn field_from(cfg: &Value, path: &str, c: &Chart) -> Result<ScalarField, RunError> {
    let src = get_str(cfg, path)?;
    ScalarField::from_expr(src, c).map_err(|e| RunError::config(format!("`{path}`: {e}")))
}

fn field_or_zero(cfg: &Value, path: &str, c: &Chart) -> Result<ScalarField, RunError> {
    match cfg.get(path) {
        None => Ok(ScalarField::zero(4)),
        Some(_) => field_from(cfg, path, c),
    }
}

/// Build a d-metric from a `[metric]` table: either a named family or
/// componentwise expressions.
fn build_metric(cfg: &Value) -> Result<DMetric, RunError> {
    let kind = get_str(cfg, "metric.kind")?;
    match kind {
        "schwarzschild" => {
            let alpha = get_num(cfg, "metric.alpha")?;
            let use_xi = get_bool_or(cfg, "metric.use_xi", false);
            let theta = get_num_or(cfg, "metric.theta", 0.0);
            solutions::schwarzschild_prime(alpha, use_xi, theta)
                .map_err(|e| RunError::numeric(e.to_string()))
        }
        "nc-polarized" => {
            let alpha = get_num(cfg, "metric.alpha")?;
            let theta = get_num(cfg, "metric.theta")?;
            solutions::nc_polarize_schwarzschild(alpha, theta)
                .map_err(|e| RunError::numeric(e.to_string()))
        }
        "nc-gamma" => {
            let mu0 = get_num(cfg, "metric.mu0")?;
            let theta = get_num(cfg, "metric.theta")?;
            solutions::nc_schwarzschild_gamma(mu0, theta)
                .map(|(m, _)| m)
                .map_err(|e| RunError::numeric(e.to_string()))
        }
        "expressions" => {
            let c = chart();
            let z = ScalarField::zero(4);
            let mut g = vec![vec![z.clone(); 2]; 2];
            let mut h = vec![vec![z.clone(); 2]; 2];
            g[0][0] = field_from(cfg, "metric.g11", &c)?;
            g[1][1] = field_from(cfg, "metric.g22", &c)?;
            g[0][1] = field_or_zero(cfg, "metric.g12", &c)?;
            g[1][0] = g[0][1].clone();
            h[0][0] = field_from(cfg, "metric.h33", &c)?;
            h[1][1] = field_from(cfg, "metric.h44", &c)?;
            h[0][1] = field_or_zero(cfg, "metric.h34", &c)?;
            h[1][0] = h[0][1].clone();
            let n = NConnection::new(
                c.clone(),
                vec![
                    vec![
                        field_or_zero(cfg, "metric.n31", &c)?,
                        field_or_zero(cfg, "metric.n32", &c)?,
                    ],
                    vec![
                        field_or_zero(cfg, "metric.n41", &c)?,
                        field_or_zero(cfg, "metric.n42", &c)?,
                    ],
                ],
            )
            .map_err(|e| RunError::config(e.to_string()))?;
            DMetric::new(c, g, h, n).map_err(|e| RunError::config(e.to_string()))
        }
        other => Err(RunError::config(format!("unknown metric kind `{other}`"))),
    }
}

fn grid_points(cfg: &Value) -> Result<Vec<[f64; 4]>, RunError> {
    let lo = get_vec(cfg, "grid.lo")?;
    let hi = get_vec(cfg, "grid.hi")?;
    let n = get_vec(cfg, "grid.n")?;
    if lo.len() != 3 || hi.len() != 3 || n.len() != 3 {
        return Err(RunError::config("grid lo/hi/n must have 3 entries"));
    }
    let y4 = get_num_or(cfg, "grid.y4", 0.0);
    let g = Grid3 {
        x1: (lo[0], hi[0], n[0] as usize),
        x2: (lo[1], hi[1], n[1] as usize),
        v: (lo[2], hi[2], n[2] as usize),
        y4,
    };
    let pts = g.points();
    if pts.is_empty() {
        return Err(RunError::config("grid is empty"));
    }
    Ok(pts)
}

/// Random analytic d-metric for structure checks (seeded).
fn random_metric(rng: &mut ChaCha8Rng) -> DMetric {
    let c = chart();
    let mut cv = [0.0f64; 12];
    for v in cv.iter_mut() {
        *v = 0.05 + 0.2 * rng.gen::<f64>();
    }
    let z = ScalarField::zero(4);
    let mut g = vec![vec![z.clone(); 2]; 2];
    g[0][0] =
        ScalarField::from_expr(&format!("1 + {}*sin(x1) + {}*y3", cv[0], cv[1]), &c).unwrap();
    g[1][1] = ScalarField::from_expr(&format!("1.5 + {}*cos(x2)", cv[2]), &c).unwrap();
    g[0][1] = ScalarField::from_expr(&format!("{}*x1*x2", 0.25 * cv[3]), &c).unwrap();
    g[1][0] = g[0][1].clone();
    let mut h = vec![vec![z.clone(); 2]; 2];
    h[0][0] = ScalarField::from_expr(&format!("1 + {}*y3^2", cv[4]), &c).unwrap();
    h[1][1] = ScalarField::from_expr(&format!("2 - {}*cos(x1)", cv[5]), &c).unwrap();
    h[0][1] = ScalarField::from_expr(&format!("{}*x2", 0.15 * cv[6]), &c).unwrap();
    h[1][0] = h[0][1].clone();
    let n = NConnection::new(
        c.clone(),
        vec![
            vec![
                ScalarField::from_expr(&format!("{}*x2*y3", cv[7]), &c).unwrap(),
                ScalarField::from_expr(&format!("{}*sin(x1)", cv[8]), &c).unwrap(),
            ],
            vec![
                ScalarField::from_expr(&format!("{}*x1", cv[9]), &c).unwrap(),
                ScalarField::from_expr(&format!("{}*y4", cv[10]), &c).unwrap(),
            ],
        ],
    )
    .unwrap();
    DMetric::new(c, g, h, n).unwrap()
}

fn run_verify(cfg: &Value, opts: &Options) -> Result<Report, RunError> {
    let mut items = Vec::new();
    let checks: Vec<String> = match cfg.get("checks").and_then(Value::as_array) {
        Some(arr) => arr
            .iter()
            .map(|v| v.as_str().unwrap_or("").to_string())
            .collect(),
        None => vec!["ricci".to_string()],
    };
    for check in &checks {
        match check.as_str() {
            "ricci" => {
                let m = build_metric(cfg)?;
                let pts = grid_points(cfg)?;
                let tol = get_num_or(cfg, "tol", 1e-8) * opts.tol_scale;
                let kind = match get_str(cfg, "connection").unwrap_or("levi-civita") {
                    "levi-civita" => ConnectionKind::LeviCivita,
                    "canonical" => ConnectionKind::CanonicalD,
                    other => {
                        return Err(RunError::config(format!("unknown connection `{other}`")))
                    }
                };
                let mut samples = Vec::with_capacity(pts.len());
                for p in &pts {
                    let curv = connections::curvature(&m, kind, p)
                        .map_err(|e| RunError::numeric(e.to_string()))?;
                    samples.push(curv.max_abs_ricci());
                }
                items.push(EquationResidual::from_samples("ricci_max_abs", &samples, tol));
            }
            "structure" => {
                // canonical d-connection structure on seeded random metrics
                let n_metrics = get_num_or(cfg, "structure.metrics", 10.0) as usize;
                let n_points = get_num_or(cfg, "structure.points", 200.0) as usize;
                let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
                let mut t_h = Vec::new();
                let mut t_v = Vec::new();
                let mut compat = Vec::new();
                let mut distort = Vec::new();
                for _ in 0..n_metrics {
                    let m = random_metric(&mut rng);
                    for _ in 0..n_points {
                        let p = [
                            0.1 + 0.8 * rng.gen::<f64>(),
                            0.1 + 0.8 * rng.gen::<f64>(),
                            0.1 + 0.8 * rng.gen::<f64>(),
                            0.8 * rng.gen::<f64>(),
                        ];
                        let tor = connections::torsion(&m, ConnectionKind::CanonicalD, &p)
                            .map_err(|e| RunError::numeric(e.to_string()))?;
                        let mut th = 0.0f64;
                        let mut tv = 0.0f64;
                        for i in 0..2 {
                            for j in 0..2 {
                                for k in 0..2 {
                                    th = th.max(tor.torsion_at(i, j, k).abs());
                                    tv = tv.max(tor.torsion_at(2 + i, 2 + j, 2 + k).abs());
                                }
                            }
                        }
                        t_h.push(th);
                        t_v.push(tv);
                        compat.push(
                            connections::metric_compat_residual(&m, &p)
                                .map_err(|e| RunError::numeric(e.to_string()))?,
                        );
                        let lc = connections::levi_civita_nadapted(&m, &p)
                            .map_err(|e| RunError::numeric(e.to_string()))?;
                        let can = connections::canonical_dconnection(&m, &p)
                            .map_err(|e| RunError::numeric(e.to_string()))?;
                        let z = connections::distortion(&m, &p)
                            .map_err(|e| RunError::numeric(e.to_string()))?;
                        let mut worst = 0.0f64;
                        for cix in 0..4 {
                            for a in 0..4 {
                                for b in 0..4 {
                                    worst = worst.max(
                                        (lc.gamma(cix, a, b)
                                            - can.gamma(cix, a, b)
                                            - z.z_at(cix, a, b))
                                        .abs(),
                                    );
                                }
                            }
                        }
                        distort.push(worst);
                    }
                }
                items.push(EquationResidual::from_samples(
                    "torsion_hh",
                    &t_h,
                    1e-10 * opts.tol_scale,
                ));
                items.push(EquationResidual::from_samples(
                    "torsion_vv",
                    &t_v,
                    1e-10 * opts.tol_scale,
                ));
                items.push(EquationResidual::from_samples(
                    "metric_compatibility",
                    &compat,
                    1e-9 * opts.tol_scale,
                ));
                items.push(EquationResidual::from_samples(
                    "distortion_identity",
                    &distort,
                    1e-10 * opts.tol_scale,
                ));
            }
            "families" => {
                // closed-form golden values of the named families
                let alpha = 1.0;
                let r = 2.0;
                let th_angle = std::f64::consts::FRAC_PI_3;
                let corr = solutions::defaux_corrections(alpha, r, th_angle);
                let m = solutions::nc_polarize_schwarzschild(alpha, 0.05)
                    .map_err(|e| RunError::numeric(e.to_string()))?;
                let prime = solutions::schwarzschild_prime(alpha, false, 0.0)
                    .map_err(|e| RunError::numeric(e.to_string()))?;
                let p = [r, th_angle, 0.2, 0.1];
                let mut defs = Vec::new();
                let comps_m = [
                    m.g[0][0].eval(&p).unwrap(),
                    m.g[1][1].eval(&p).unwrap(),
                    m.h[0][0].eval(&p).unwrap(),
                    m.h[1][1].eval(&p).unwrap(),
                ];
                let comps_p = [
                    prime.g[0][0].eval(&p).unwrap(),
                    prime.g[1][1].eval(&p).unwrap(),
                    prime.h[0][0].eval(&p).unwrap(),
                    prime.h[1][1].eval(&p).unwrap(),
                ];
                for i in 0..4 {
                    defs.push(comps_m[i] - (comps_p[i] + 0.05f64.powi(2) * corr[i]));
                }
                items.push(EquationResidual::from_samples(
                    "defaux_theta2_corrections",
                    &defs,
                    1e-14 * opts.tol_scale,
                ));

                // rotoid horizon vs the parametric ellipse
                let params = solutions::RotoidParams {
                    mu0: 1.0,
                    thetabar: 0.08,
                    omega0: 3.0,
                    phi0: 0.4,
                    q0: ScalarField::constant(4, 0.6),
                    mu1: ScalarField::zero(4),
                };
                let mut rot = Vec::new();
                for k in 0..16 {
                    let phi = 2.0 * std::f64::consts::PI * k as f64 / 16.0;
                    let root = solutions::rotoid_horizon_root(&params, 1.0, phi)
                        .map_err(|e| RunError::numeric(e.to_string()))?;
                    let s = 0.6 / 4.0 * (3.0 * phi + 0.4).sin();
                    rot.push(root - 2.0 / (1.0 + 0.08 * s));
                }
                items.push(EquationResidual::from_samples(
                    "rotoid_horizon_ellipse",
                    &rot,
                    1e-10 * opts.tol_scale,
                ));

                // Gamma-function metric reproduces Schwarzschild at r^2/4theta = 30
                let mu0 = 1.0;
                let theta = 0.05;
                let (mg, _) = solutions::nc_schwarzschild_gamma(mu0, theta)
                    .map_err(|e| RunError::numeric(e.to_string()))?;
                let rr = (30.0 * 4.0 * theta).sqrt();
                let h4 = mg.h[1][1].eval(&[rr, 1.0, 0.0, 0.0]).unwrap();
                items.push(EquationResidual::from_samples(
                    "nc_gamma_schwarzschild_limit",
                    &[h4 - (1.0 - 2.0 * mu0 / rr)],
                    1e-10 * opts.tol_scale,
                ));
            }
            other => return Err(RunError::config(format!("unknown check `{other}`"))),
        }
    }
    let pass = items.iter().all(|e| e.pass);
    Ok(Report {
        command: "verify-solution".into(),
        seed: opts.seed,
        tol_scale: opts.tol_scale,
        items,
        pass,
    })
}

fn generating_data(cfg: &Value, set: &str) -> Result<GeneratingData, RunError> {
    let c = chart();
    let base = |key: &str| format!("{set}.{key}");
    let eps = match cfg.get(&base("eps")).and_then(Value::as_array) {
        Some(arr) if arr.len() == 4 => {
            let mut e = [1.0; 4];
            for (i, v) in arr.iter().enumerate() {
                e[i] = v.as_num().unwrap_or(1.0);
            }
            e
        }
        _ => [1.0; 4],
    };
    let mut gen = GeneratingData::vacuum(
        field_from(cfg, &base("f"), &c)?,
        field_or_zero(cfg, &base("f0"), &c)?,
        match cfg.get(&base("h0")) {
            Some(Value::Num(v)) => ScalarField::constant(4, *v),
            _ => field_from(cfg, &base("h0"), &c)?,
        },
        eps,
        get_num_or(cfg, &base("v0"), 0.0),
    );
    gen.psi = field_or_zero(cfg, &base("psi"), &c)?;
    if cfg.get(&base("y2")).is_some() {
        gen.y2 = Some(field_from(cfg, &base("y2"), &c)?);
    }
    if cfg.get(&base("y4")).is_some() {
        gen.y4 = Some(field_from(cfg, &base("y4"), &c)?);
    }
    if cfg.get(&base("n1k1")).is_some() || cfg.get(&base("n1k2")).is_some() {
        gen.n1k = [
            field_or_zero(cfg, &base("n1k1"), &c)?,
            field_or_zero(cfg, &base("n1k2"), &c)?,
        ];
    }
    if cfg.get(&base("n2k1")).is_some() || cfg.get(&base("n2k2")).is_some() {
        gen.n2k = [
            field_or_zero(cfg, &base("n2k1"), &c)?,
            field_or_zero(cfg, &base("n2k2"), &c)?,
        ];
    }
    Ok(gen)
}

fn run_generate(cfg: &Value, opts: &Options) -> Result<Report, RunError> {
    let sets: Vec<String> = match cfg.get("sets").and_then(Value::as_array) {
        Some(arr) => arr
            .iter()
            .map(|v| v.as_str().unwrap_or("").to_string())
            .collect(),
        None => vec!["generating".to_string()],
    };
    let pts = grid_points(cfg)?;
    let lo = get_vec(cfg, "grid.lo")?;
    let hi = get_vec(cfg, "grid.hi")?;
    let n = get_vec(cfg, "grid.n")?;
    let grid = Grid3 {
        x1: (lo[0], hi[0], n[0] as usize),
        x2: (lo[1], hi[1], n[1] as usize),
        v: (lo[2], hi[2], n[2] as usize),
        y4: get_num_or(cfg, "grid.y4", 0.0),
    };
    let tol = get_num_or(cfg, "tol", 1e-7) * opts.tol_scale;
    let quad_tol = get_num_or(cfg, "quad_tol", 1e-9);
    let mut items = Vec::new();
    for set in &sets {
        let gen = generating_data(cfg, set)?;
        let sol = generate_metric(&gen, &pts, GenerateOptions {
            quad_tol,
            psi_tol: get_num_or(cfg, "psi_tol", 1e-8),
        })
        .map_err(|e| RunError::numeric(e.to_string()))?;
        let report: ResidualReport = residual_ep1a(
            &sol.metric,
            gen.y2.as_ref(),
            gen.y4.as_ref(),
            &grid,
            tol,
            quad_tol,
        )
        .map_err(|e| RunError::numeric(e.to_string()))?;
        for mut e in report.equations {
            e.equation_id = format!("{set}.{}", e.equation_id);
            items.push(e);
        }
    }
    let pass = items.iter().all(|e| e.pass);
    Ok(Report {
        command: "generate-solution".into(),
        seed: opts.seed,
        tol_scale: opts.tol_scale,
        items,
        pass,
    })
}

fn run_flow(cfg: &Value, opts: &Options, out: &Path) -> Result<Report, RunError> {
    let n = get_num_or(cfg, "flow.n", 16.0) as usize;
    let grid = FlowGrid { nx: n, ny: n };
    let tau0 = get_num_or(cfg, "flow.tau0", 4.0);
    let mut state = match cfg.get("flow.phi").and_then(Value::as_str) {
        Some(src) => {
            let c = chart();
            let phi = ScalarField::from_expr(src, &c)
                .map_err(|e| RunError::config(format!("flow.phi: {e}")))?;
            FlowState::conformal(grid, move |x, y| phi.eval(&[x, y, 0.0, 0.0]).unwrap_or(0.0), tau0)
        }
        None => FlowState::flat_torus(grid, get_num_or(cfg, "flow.f0", 0.0), tau0),
    };
    if let Some(src) = cfg.get("flow.f").and_then(Value::as_str) {
        let c = chart();
        let f = ScalarField::from_expr(src, &c)
            .map_err(|e| RunError::config(format!("flow.f: {e}")))?;
        for i in 0..grid.nx {
            for j in 0..grid.ny {
                let p = grid.point(i, j);
                state.f[grid.idx(i, j)] = f.eval(&[p[0], p[1], 0.0, 0.0]).unwrap_or(0.0);
            }
        }
    }
    if get_bool_or(cfg, "flow.w_coupling", false) {
        state.coupling = FlowCoupling::WEntropy;
    }
    if get_bool_or(cfg, "flow.normalize_measure", true) {
        state.normalize_measure();
    }
    let steps = get_num_or(cfg, "flow.steps", 50.0) as usize;
    let dchi = get_num(cfg, "flow.dchi")?;
    let normalized = get_bool_or(cfg, "flow.normalized", false);
    let sample_every = get_num_or(cfg, "flow.sample_every", 10.0) as usize;
    let snapshot_every = get_num_or(cfg, "flow.snapshot_every", 0.0) as usize;

    let mut trace = String::from("chi,f_hat,w_hat,energy,entropy,fluctuation,volume\n");
    let mut samples = Vec::new();
    let record = |st: &FlowState, trace: &mut String, samples: &mut Vec<f64>| -> Result<(), RunError> {
        let rep = functionals(st).map_err(|e| RunError::numeric(e.to_string()))?;
        let _ = writeln!(
            trace,
            "{:.6},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e}",
            st.chi, rep.f_hat, rep.w_hat, rep.energy, rep.entropy, rep.fluctuation, rep.volume
        );
        samples.push(rep.f_hat);
        Ok(())
    };
    record(&state, &mut trace, &mut samples)?;
    let vol0 = state.total_volume();
    for step in 1..=steps {
        state = flow_step(&state, dchi, normalized, opts.threads)
            .map_err(|e| RunError::numeric(e.to_string()))?;
        if step % sample_every.max(1) == 0 || step == steps {
            record(&state, &mut trace, &mut samples)?;
        }
        if snapshot_every > 0 && step % snapshot_every == 0 {
            let snap = serde_json::json!({
                "chi": state.chi,
                "g11": state.g.c11,
                "g22": state.g.c22,
                "f": state.f,
            });
            std::fs::write(
                out.join(format!("snapshot_{step:05}.json")),
                serde_json::to_string(&snap).unwrap(),
            )
            .map_err(|e| RunError::numeric(e.to_string()))?;
        }
    }
    std::fs::write(out.join("trace.csv"), trace).map_err(|e| RunError::numeric(e.to_string()))?;

    let mut items = Vec::new();
    if let Some(tol) = cfg.get("flow.f_hat_tol").and_then(Value::as_num) {
        items.push(EquationResidual::from_samples(
            "f_hat_trace",
            &samples,
            tol * opts.tol_scale,
        ));
    }
    if let Some(tol) = cfg.get("flow.volume_tol").and_then(Value::as_num) {
        let drift = (state.total_volume() - vol0).abs() / vol0;
        items.push(EquationResidual::from_samples(
            "volume_drift",
            &[drift],
            tol * opts.tol_scale,
        ));
    }
    let pass = items.iter().all(|e| e.pass);
    Ok(Report {
        command: "flow-run".into(),
        seed: opts.seed,
        tol_scale: opts.tol_scale,
        items,
        pass,
    })
}

fn run_lagrange(cfg: &Value, opts: &Options, out: &Path) -> Result<Report, RunError> {
    let c = chart();
    let sets: Vec<String> = match cfg.get("models").and_then(Value::as_array) {
        Some(arr) => arr
            .iter()
            .map(|v| v.as_str().unwrap_or("").to_string())
            .collect(),
        None => vec!["lagrange".to_string()],
    };
    let mut items = Vec::new();
    for set in &sets {
        let l = field_from(cfg, &format!("{set}.l"), &c)?;
        let model = LagrangianModel::new(c.clone(), l);
        let x0 = get_vec(cfg, &format!("{set}.x0"))?;
        let y0 = get_vec(cfg, &format!("{set}.y0"))?;
        let tau_end = get_num_or(cfg, &format!("{set}.tau_end"), 1.0);
        let dt = get_num_or(cfg, &format!("{set}.dt"), 1e-3);
        let cmp = geodesic_compare(&model, &x0, &y0, tau_end, dt)
            .map_err(|e| RunError::numeric(e.to_string()))?;
        items.push(EquationResidual::from_samples(
            &format!("{set}.geodesic_deviation"),
            &[cmp.max_deviation],
            get_num_or(cfg, "deviation_tol", 1e-6) * opts.tol_scale,
        ));
        let p0 = [x0[0], x0[1], y0[0], y0[1]];
        let dth = dtheta_residual(&model, &p0).map_err(|e| RunError::numeric(e.to_string()))?;
        items.push(EquationResidual::from_samples(
            &format!("{set}.dtheta"),
            &[dth],
            get_num_or(cfg, "dtheta_tol", 1e-9) * opts.tol_scale,
        ));
        // trajectory CSV (tau, x, y)
        let mut csv = String::from("tau,x1,x2,y3,y4\n");
        for (tau, x, y) in &cmp.spray {
            let _ = writeln!(csv, "{:.6},{:.10e},{:.10e},{:.10e},{:.10e}", tau, x[0], x[1], y[0], y[1]);
        }
        std::fs::write(out.join(format!("trajectory_{set}.csv")), csv)
            .map_err(|e| RunError::numeric(e.to_string()))?;
    }
    let pass = items.iter().all(|e| e.pass);
    Ok(Report {
        command: "lagrange-model".into(),
        seed: opts.seed,
        tol_scale: opts.tol_scale,
        items,
        pass,
    })
}

fn run_dirac(cfg: &Value, opts: &Options) -> Result<Report, RunError> {
    let n_points = get_num_or(cfg, "dirac.points", 100.0) as usize;
    let n_metrics = get_num_or(cfg, "dirac.metrics", 5.0) as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut anticomm = Vec::new();
    let mut tetrad = Vec::new();
    for _ in 0..n_metrics {
        let m = random_metric(&mut rng);
        for _ in 0..n_points {
            let p = [
                0.1 + 0.8 * rng.gen::<f64>(),
                0.1 + 0.8 * rng.gen::<f64>(),
                0.1 + 0.8 * rng.gen::<f64>(),
                0.8 * rng.gen::<f64>(),
            ];
            let gs = nholo::clifford::gamma_set(&m, &p)
                .map_err(|e| RunError::numeric(e.to_string()))?;
            let jets = m.jets(&p, 0).map_err(|e| RunError::numeric(e.to_string()))?;
            let gi = nholo::linalg::inverse(&jets.g_values())
                .ok_or_else(|| RunError::numeric("singular g"))?;
            let hi = nholo::linalg::inverse(&jets.h_values())
                .ok_or_else(|| RunError::numeric("singular h"))?;
            let gup = |a: usize, b: usize| -> f64 {
                if a < 2 && b < 2 {
                    gi[a][b]
                } else if a >= 2 && b >= 2 {
                    hi[a - 2][b - 2]
                } else {
                    0.0
                }
            };
            let mut worst = 0.0f64;
            for al in 0..4 {
                for be in 0..4 {
                    let ac = nholo::clifford::anticommutator(&gs.curved[al], &gs.curved[be]);
                    for i in 0..4 {
                        for j in 0..4 {
                            let expect = if i == j { 2.0 * gup(al, be) } else { 0.0 };
                            worst = worst
                                .max((ac[i][j] - Complex64::new(expect, 0.0)).norm());
                        }
                    }
                }
            }
            anticomm.push(worst);
            tetrad.push(
                nholo::clifford::tetrad_postulate_residual(&m, &p)
                    .map_err(|e| RunError::numeric(e.to_string()))?,
            );
        }
    }
    let items = vec![
        EquationResidual::from_samples(
            "curved_anticommutator",
            &anticomm,
            1e-12 * opts.tol_scale,
        ),
        EquationResidual::from_samples("tetrad_postulate", &tetrad, 1e-8 * opts.tol_scale),
    ];
    let pass = items.iter().all(|e| e.pass);
    Ok(Report {
        command: "dirac-check".into(),
        seed: opts.seed,
        tol_scale: opts.tol_scale,
        items,
        pass,
    })
}

fn run_star(cfg: &Value, opts: &Options) -> Result<Report, RunError> {
    let c = chart();
    let f = field_from(cfg, "star.f", &c)?;
    let g = field_from(cfg, "star.g", &c)?;
    let order = get_num_or(cfg, "star.order", 2.0) as usize;
    let point = get_vec(cfg, "star.point")?;
    let p = [point[0], point[1], point[2], point[3]];
    let theta_entries = get_vec(cfg, "star.theta")?; // [a, b, value] triples flattened
    let mut theta = vec![vec![0.0; 4]; 4];
    for chunk in theta_entries.chunks(3) {
        let (a, b, v) = (chunk[0] as usize, chunk[1] as usize, chunk[2]);
        theta[a][b] = v;
        theta[b][a] = -v;
    }
    let m = DMetric::flat(&c);
    let jets = m.jets(&p, 3).map_err(|e| RunError::numeric(e.to_string()))?;
    // emit per-order coefficient contributions
    let mut items = Vec::new();
    let mut prev = Complex64::new(0.0, 0.0);
    for k in 0..=order {
        let v = nholo::fedosov::moyal_star(&f, &g, &theta, &jets, k, &p)
            .map_err(|e| RunError::numeric(e.to_string()))?;
        let contrib = v - prev;
        prev = v;
        items.push(EquationResidual::from_samples(
            &format!("moyal_order_{k}_re"),
            &[contrib.re],
            f64::INFINITY,
        ));
        items.push(EquationResidual::from_samples(
            &format!("moyal_order_{k}_im"),
            &[contrib.im],
            f64::INFINITY,
        ));
    }
    Ok(Report {
        command: "star-prod".into(),
        seed: opts.seed,
        tol_scale: opts.tol_scale,
        items,
        pass: true,
    })
}

fn run_fedosov(cfg: &Value, opts: &Options) -> Result<Report, RunError> {
    use nholo::fedosov::{
        delta, delta_inv, recursion_r, wick_product, CJet, FedosovContext, FormalElement,
    };
    let c = chart();
    let deg_max = get_num_or(cfg, "fedosov.deg_max", 6.0) as u32;
    let ctx = FedosovContext::flat(2, 2);
    let comps = recursion_r(&ctx, deg_max, 1).map_err(|e| RunError::numeric(e.to_string()))?;
    let r_norm: f64 = comps.iter().map(|cmp| cmp.max_abs_value()).sum();
    // structural residuals on a deterministic element
    let mut a = FormalElement::zero(4);
    let mut key = (0u8, [0u8; 8], 0u8);
    key.1[0] = 1;
    key.1[2] = 1;
    a.add_term(key, CJet::constant(4, 2, Complex64::new(0.7, 0.0)));
    let dd = delta(&delta(&a)).max_abs_value();
    let hodge = delta(&delta_inv(&a))
        .add(&delta_inv(&delta(&a)))
        .add(&a.sigma())
        .max_abs_diff(&a);
    let f = field_from(cfg, "fedosov.f", &c)?;
    let g = field_from(cfg, "fedosov.g", &c)?;
    let point = get_vec(cfg, "fedosov.point")?;
    let p = [point[0], point[1], point[2], point[3]];
    let coeffs = nholo::fedosov::fedosov_star(&f, &g, &p, &comps, &ctx, deg_max, 2)
        .map_err(|e| RunError::numeric(e.to_string()))?;
    let (prod, _) = wick_product(&a, &a, &ctx.lambda, deg_max);
    let _ = prod;
    let mut items = vec![
        EquationResidual::from_samples("flat_r_norm", &[r_norm], 1e-12 * opts.tol_scale),
        EquationResidual::from_samples("delta_squared", &[dd], 0.0),
        EquationResidual::from_samples("hodge_identity", &[hodge], 1e-14 * opts.tol_scale),
    ];
    for (k, v) in coeffs.iter().enumerate() {
        items.push(EquationResidual::from_samples(
            &format!("star_coeff_{k}_re"),
            &[v.re],
            f64::INFINITY,
        ));
        items.push(EquationResidual::from_samples(
            &format!("star_coeff_{k}_im"),
            &[v.im],
            f64::INFINITY,
        ));
    }
    let pass = items.iter().all(|e| e.pass);
    Ok(Report {
        command: "fedosov-run".into(),
        seed: opts.seed,
        tol_scale: opts.tol_scale,
        items,
        pass,
    })
}

/// Dispatch a parsed configuration; returns the report.
pub fn run(cfg: &Value, opts: &Options) -> Result<Report, RunError> {
    let command = get_str(cfg, "command")?;
    std::fs::create_dir_all(&opts.out_dir)
        .map_err(|e| RunError::numeric(format!("cannot create out dir: {e}")))?;
    let report = match command {
        "verify-solution" => run_verify(cfg, opts)?,
        "generate-solution" => run_generate(cfg, opts)?,
        "flow-run" => run_flow(cfg, opts, &opts.out_dir)?,
        "lagrange-model" => run_lagrange(cfg, opts, &opts.out_dir)?,
        "dirac-check" => run_dirac(cfg, opts)?,
        "star-prod" => run_star(cfg, opts)?,
        "fedosov-run" => run_fedosov(cfg, opts)?,
        other => return Err(RunError::config(format!("unknown command `{other}`"))),
    };
    // machine report
    let json = serde_json::to_string_pretty(&report).unwrap();
    std::fs::write(opts.out_dir.join("report.json"), json)
        .map_err(|e| RunError::numeric(e.to_string()))?;
    // human summary
    let mut summary = format!("command: {}\nseed: {}\n", report.command, report.seed);
    let rr = ResidualReport {
        equations: report.items.clone(),
        skipped_points: 0,
        quadrature_tol: 0.0,
    };
    for line in rr.summary_lines() {
        summary.push_str(&line);
        summary.push('\n');
    }
    summary.push_str(if report.pass { "PASS\n" } else { "FAIL\n" });
    std::fs::write(opts.out_dir.join("summary.txt"), summary)
        .map_err(|e| RunError::numeric(e.to_string()))?;
    Ok(report)
}

