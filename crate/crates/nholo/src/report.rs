//! Residual reports shared by the solution verifiers and the CLI.

use serde::Serialize;

/// Per-equation residual summary over a sample grid.
#[derive(Clone, Debug, Serialize)]
pub struct EquationResidual {
    pub equation_id: String,
    pub max_abs: f64,
    pub rms: f64,
    pub n_points: usize,
    pub tol: f64,
    pub pass: bool,
}

impl EquationResidual {
    pub fn from_samples(id: &str, samples: &[f64], tol: f64) -> EquationResidual {
        let n = samples.len();
        let max_abs = samples.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let rms = if n == 0 {
            0.0
        } else {
            (samples.iter().map(|v| v * v).sum::<f64>() / n as f64).sqrt()
        };
        EquationResidual {
            equation_id: id.to_string(),
            max_abs,
            rms,
            n_points: n,
            tol,
            pass: max_abs <= tol,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ResidualReport {
    pub equations: Vec<EquationResidual>,
    /// Points skipped by singular guards (h* = 0 loci etc.).
    pub skipped_points: usize,
    pub quadrature_tol: f64,
}

impl ResidualReport {
    pub fn pass(&self) -> bool {
        self.equations.iter().all(|e| e.pass)
    }

    pub fn max_abs(&self) -> f64 {
        self.equations.iter().fold(0.0f64, |m, e| m.max(e.max_abs))
    }

    pub fn summary_lines(&self) -> Vec<String> {
        self.equations
            .iter()
            .map(|e| {
                format!(
                    "{:<24} max {:>12.4e}  rms {:>12.4e}  n {:>6}  tol {:>8.1e}  {}",
                    e.equation_id,
                    e.max_abs,
                    e.rms,
                    e.n_points,
                    e.tol,
                    if e.pass { "pass" } else { "FAIL" }
                )
            })
            .collect()
    }
}
