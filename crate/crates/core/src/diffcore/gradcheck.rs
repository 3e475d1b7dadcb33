//! Central finite-difference verification of analytic gradients (64-bit).

use super::graph::{Graph, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug)]
pub struct GradCheckOptions {
    /// Central-difference step.
    pub h: f64,
    /// Relative tolerance per element.
    pub tol: f64,
    /// Upper bound on probed elements per input; `None` probes all of them.
    pub max_probes: Option<usize>,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self { h: 1e-5, tol: 1e-4, max_probes: None }
    }
}

#[derive(Clone, Debug)]
pub struct InputCheck {
    pub index: usize,
    pub probes: usize,
    pub max_rel_err: f64,
    pub passed: bool,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub inputs: Vec<InputCheck>,
    pub tol: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.inputs.iter().all(|c| c.passed)
    }

    pub fn max_rel_err(&self) -> f64 {
        self.inputs.iter().map(|c| c.max_rel_err).fold(0.0, f64::max)
    }
}

/// Relative error with a small absolute floor so exact zeros compare sanely.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs()).max(1e-6);
    (analytic - numeric).abs() / scale
}

fn evaluate<F>(f: &F, inputs: &[Tensor<f64>]) -> Result<f64>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.constant(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    g.check_finite()?;
    g.value(out).item()
}

fn probe_indices(numel: usize, max_probes: Option<usize>) -> Vec<usize> {
    match max_probes {
        Some(m) if m < numel => (0..m).map(|i| i * numel / m).collect(),
        _ => (0..numel).collect(),
    }
}

/// Compares the analytic gradient of scalar `f` at `inputs` against
/// central differences, element by element.
pub fn grad_check<F>(f: F, inputs: &[Tensor<f64>], opts: GradCheckOptions) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    g.check_finite()?;
    if g.value(out).numel() != 1 {
        return Err(Error::Usage(format!("grad_check needs a scalar function, got shape {:?}", g.value(out).shape())));
    }
    g.backward(out)?;

    let mut checks = Vec::with_capacity(inputs.len());
    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    for (idx, var) in vars.iter().enumerate() {
        let analytic = g.grad(*var).unwrap_or_else(|| Tensor::zeros(inputs[idx].shape()));
        let probes = probe_indices(inputs[idx].numel(), opts.max_probes);
        let mut max_err = 0.0f64;
        for &e in &probes {
            let orig = work[idx].data()[e];
            work[idx].data_mut()[e] = orig + opts.h;
            let fp = evaluate(&f, &work)?;
            work[idx].data_mut()[e] = orig - opts.h;
            let fm = evaluate(&f, &work)?;
            work[idx].data_mut()[e] = orig;
            let numeric = (fp - fm) / (2.0 * opts.h);
            max_err = max_err.max(relative_error(analytic.data()[e], numeric));
        }
        checks.push(InputCheck { index: idx, probes: probes.len(), max_rel_err: max_err, passed: max_err <= opts.tol });
    }
    Ok(GradCheckReport { inputs: checks, tol: opts.tol })
}
