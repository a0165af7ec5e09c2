//! Central finite-difference verification of recorded backward passes.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

pub mod suite;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradcheckConfig {
    /// Perturbation `h` in `(f(θ+h) − f(θ−h)) / 2h`; must lie in `[1e-6, 1e-3]`.
    pub step: f64,
    /// Maximum tolerated relative error.
    pub tol: f64,
    /// Denominator floor: errors on gradients smaller than this are measured
    /// relative to the floor instead.
    pub floor: f64,
    /// Check at most this many coordinates per tensor (evenly spaced).
    pub max_coords: Option<usize>,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        Self {
            step: 1e-5,
            tol: 1e-4,
            floor: 1e-4,
            max_coords: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamCheck {
    pub index: usize,
    pub max_rel_error: f64,
    pub worst_coord: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradReport {
    pub params: Vec<ParamCheck>,
    pub tol: f64,
}

impl GradReport {
    pub fn max_rel_error(&self) -> f64 {
        self.params.iter().map(|p| p.max_rel_error).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.params.iter().all(|p| p.max_rel_error <= self.tol)
    }
}

pub fn rel_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

fn evaluate<F>(f: &F, params: &[Tensor]) -> Result<f64>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = params.iter().map(|p| g.constant(p.clone())).collect();
    let out = f(&mut g, &vars)?;
    let v = g.value(out);
    if v.len() != 1 {
        return Err(Error::InvalidArgument(format!("gradcheck needs a scalar output, got {:?}", v.dims())));
    }
    let value = v.data()[0];
    if !value.is_finite() {
        return Err(Error::NonFinite { op: "gradcheck" });
    }
    Ok(value)
}

fn coords(n: usize, max: Option<usize>) -> Vec<usize> {
    match max {
        Some(m) if m < n && m > 0 => {
            let mut out: Vec<usize> = (0..m).map(|i| i * (n - 1) / (m - 1).max(1)).collect();
            out.dedup();
            out
        }
        _ => (0..n).collect(),
    }
}

/// Compares the backward pass of `f` at `params` against central differences.
///
/// `f` receives one [`Var`] per entry of `params` and must return a scalar.
pub fn gradcheck<F>(f: F, params: &[Tensor], cfg: &GradcheckConfig) -> Result<GradReport>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    if !(1e-6..=1e-3).contains(&cfg.step) {
        return Err(Error::InvalidArgument(format!("gradcheck step {} outside [1e-6, 1e-3]", cfg.step)));
    }
    let mut g = Graph::new();
    let vars: Vec<Var> = params.iter().map(|p| g.param(p.clone())).collect();
    let out = f(&mut g, &vars)?;
    if !g.value(out).data()[0].is_finite() {
        return Err(Error::NonFinite { op: "gradcheck" });
    }
    g.backward(out)?;

    let mut work: Vec<Tensor> = params.to_vec();
    let mut report = Vec::with_capacity(params.len());
    for (pi, var) in vars.iter().enumerate() {
        let zeros;
        let analytic = match g.grad(*var) {
            Some(a) => a,
            None => {
                zeros = alloc::vec![0.0; params[pi].len()];
                &zeros
            }
        };
        let mut check = ParamCheck {
            index: pi,
            max_rel_error: 0.0,
            worst_coord: 0,
            analytic: 0.0,
            numeric: 0.0,
        };
        for c in coords(params[pi].len(), cfg.max_coords) {
            let orig = params[pi].data()[c];
            work[pi].data_mut()[c] = orig + cfg.step;
            let plus = evaluate(&f, &work)?;
            work[pi].data_mut()[c] = orig - cfg.step;
            let minus = evaluate(&f, &work)?;
            work[pi].data_mut()[c] = orig;
            let numeric = (plus - minus) / (2.0 * cfg.step);
            let err = rel_error(analytic[c], numeric, cfg.floor);
            if err > check.max_rel_error || c == 0 {
                check.max_rel_error = err;
                check.worst_coord = c;
                check.analytic = analytic[c];
                check.numeric = numeric;
            }
        }
        report.push(check);
    }
    Ok(GradReport {
        params: report,
        tol: cfg.tol,
    })
}
