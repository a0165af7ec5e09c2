//! The randomized finite-difference suite: every graph primitive, every loss,
//! and the end-to-end training objective of each task on a small model.

use alloc::string::ToString;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{gradcheck, GradReport, GradcheckConfig};
use crate::data::{Batch, Task};
use crate::error::Result;
use crate::graph::{Graph, Var};
use crate::model::{FusionModel, Mode, ModelConfig, StreamSpec, AU_UNITS, EXPR_CLASSES};
use crate::objectives::{
    au_loss_with_grad, ccc_with_grad, ce_loss_with_grad, mse_with_grad, va_loss_with_grad, AuWeights,
};
use crate::tensor::Tensor;
use crate::train::batch_loss;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Check {
    MatMul,
    MatMulNt,
    BatchedMatMul,
    Add,
    AddBroadcast,
    Sub,
    Mul,
    Scale,
    Tanh,
    Sigmoid,
    Relu,
    Softmax,
    LayerNorm,
    Concat,
    Narrow,
    Sum,
    Mean,
    Mse,
    Ccc,
    VaLoss,
    CrossEntropy,
    AuLoss,
    ModelVa,
    ModelExpr,
    ModelAu,
}

impl Check {
    pub const ALL: [Check; 25] = [
        Check::MatMul,
        Check::MatMulNt,
        Check::BatchedMatMul,
        Check::Add,
        Check::AddBroadcast,
        Check::Sub,
        Check::Mul,
        Check::Scale,
        Check::Tanh,
        Check::Sigmoid,
        Check::Relu,
        Check::Softmax,
        Check::LayerNorm,
        Check::Concat,
        Check::Narrow,
        Check::Sum,
        Check::Mean,
        Check::Mse,
        Check::Ccc,
        Check::VaLoss,
        Check::CrossEntropy,
        Check::AuLoss,
        Check::ModelVa,
        Check::ModelExpr,
        Check::ModelAu,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Check::MatMul => "matmul",
            Check::MatMulNt => "matmul_nt",
            Check::BatchedMatMul => "batched_matmul",
            Check::Add => "add",
            Check::AddBroadcast => "add_broadcast",
            Check::Sub => "sub",
            Check::Mul => "mul",
            Check::Scale => "scale",
            Check::Tanh => "tanh",
            Check::Sigmoid => "sigmoid",
            Check::Relu => "relu",
            Check::Softmax => "softmax",
            Check::LayerNorm => "layernorm",
            Check::Concat => "concat",
            Check::Narrow => "narrow",
            Check::Sum => "sum",
            Check::Mean => "mean",
            Check::Mse => "mse",
            Check::Ccc => "ccc",
            Check::VaLoss => "va_loss",
            Check::CrossEntropy => "cross_entropy",
            Check::AuLoss => "au_loss",
            Check::ModelVa => "model_va",
            Check::ModelExpr => "model_expr",
            Check::ModelAu => "model_au",
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.name() == name)
    }

    fn index(self) -> u64 {
        Self::ALL.iter().position(|c| *c == self).unwrap_or(0) as u64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub check: Check,
    pub seed: u64,
    pub report: GradReport,
}

fn rng_for(check: Check, seed: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(check.index());
    r
}

fn uniform(r: &mut ChaCha8Rng, dims: &[usize], scale: f64) -> Tensor {
    let n: usize = dims.iter().product();
    let data = (0..n).map(|_| scale * r.random_range(-1.0..=1.0)).collect();
    Tensor::new(dims, data).expect("positive extents")
}

/// Values bounded away from zero so that perturbations never cross a kink.
fn off_zero(r: &mut ChaCha8Rng, dims: &[usize]) -> Tensor {
    let n: usize = dims.iter().product();
    let data = (0..n)
        .map(|_| {
            let m = r.random_range(0.1..=1.0);
            if r.random::<bool>() {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::new(dims, data).expect("positive extents")
}

fn extent(r: &mut ChaCha8Rng, lo: usize, hi: usize) -> usize {
    r.random_range(lo..=hi)
}

fn random_dims(r: &mut ChaCha8Rng) -> Vec<usize> {
    let rank = extent(r, 1, 3);
    (0..rank).map(|_| extent(r, 1, 4)).collect()
}

/// A mask with at least `min_valid` true entries.
fn random_mask(r: &mut ChaCha8Rng, n: usize, min_valid: usize) -> Vec<bool> {
    let mut m: Vec<bool> = (0..n).map(|_| r.random::<f64>() < 0.8).collect();
    for slot in m.iter_mut().take(min_valid) {
        *slot = true;
    }
    m
}

/// Contracts `y` with a fixed random tensor so every output element matters.
fn weighted_sum(g: &mut Graph, y: Var, w: &Tensor) -> Result<Var> {
    let wv = g.constant(w.clone());
    let prod = g.mul(y, wv)?;
    g.sum(prod)
}

fn unary(
    r: &mut ChaCha8Rng,
    cfg: &GradcheckConfig,
    x: Tensor,
    op: fn(&mut Graph, Var) -> Result<Var>,
) -> Result<GradReport> {
    let w = uniform(r, x.dims(), 1.0);
    gradcheck(
        |g, v| {
            let y = op(g, v[0])?;
            weighted_sum(g, y, &w)
        },
        &[x],
        cfg,
    )
}

fn binary(
    r: &mut ChaCha8Rng,
    cfg: &GradcheckConfig,
    op: fn(&mut Graph, Var, Var) -> Result<Var>,
) -> Result<GradReport> {
    let dims = random_dims(r);
    let a = uniform(r, &dims, 1.0);
    let b = uniform(r, &dims, 1.0);
    let w = uniform(r, &dims, 1.0);
    gradcheck(
        |g, v| {
            let y = op(g, v[0], v[1])?;
            weighted_sum(g, y, &w)
        },
        &[a, b],
        cfg,
    )
}

/// Records a fused loss on `g` from a callback computing value and gradient.
fn fused(
    g: &mut Graph,
    x: Var,
    loss: impl Fn(&[f64]) -> Result<(f64, Vec<f64>)>,
) -> Result<Var> {
    let (value, grad) = loss(g.value(x).data())?;
    g.scalar_fn(x, value, grad)
}

/// Runs one check at one seed.
pub fn run_check(check: Check, seed: u64, cfg: &GradcheckConfig) -> Result<GradReport> {
    let r = &mut rng_for(check, seed);
    match check {
        Check::MatMul => {
            let (m, k, n) = (extent(r, 1, 4), extent(r, 1, 4), extent(r, 1, 4));
            let a = if r.random::<bool>() {
                let bs = extent(r, 1, 3);
                uniform(r, &[bs, m, k], 1.0)
            } else {
                uniform(r, &[m, k], 1.0)
            };
            let b = uniform(r, &[k, n], 1.0);
            let mut out = a.dims().to_vec();
            *out.last_mut().expect("rank >= 2") = n;
            let w = uniform(r, &out, 1.0);
            gradcheck(
                |g, v| {
                    let y = g.matmul(v[0], v[1])?;
                    weighted_sum(g, y, &w)
                },
                &[a, b],
                cfg,
            )
        }
        Check::MatMulNt => {
            let (m, k, n) = (extent(r, 1, 4), extent(r, 1, 4), extent(r, 1, 4));
            let a = uniform(r, &[m, k], 1.0);
            let b = uniform(r, &[n, k], 1.0);
            let w = uniform(r, &[m, n], 1.0);
            gradcheck(
                |g, v| {
                    let y = g.matmul_nt(v[0], v[1])?;
                    weighted_sum(g, y, &w)
                },
                &[a, b],
                cfg,
            )
        }
        Check::BatchedMatMul => {
            let (bs, m, k, n) = (extent(r, 1, 3), extent(r, 1, 4), extent(r, 1, 4), extent(r, 1, 4));
            let a = uniform(r, &[bs, m, k], 1.0);
            let b = uniform(r, &[bs, k, n], 1.0);
            let w = uniform(r, &[bs, m, n], 1.0);
            gradcheck(
                |g, v| {
                    let y = g.matmul(v[0], v[1])?;
                    weighted_sum(g, y, &w)
                },
                &[a, b],
                cfg,
            )
        }
        Check::Add => binary(r, cfg, Graph::add),
        Check::Sub => binary(r, cfg, Graph::sub),
        Check::Mul => binary(r, cfg, Graph::mul),
        Check::AddBroadcast => {
            let dims = [extent(r, 1, 3), extent(r, 1, 4), extent(r, 1, 4)];
            let a = uniform(r, &dims, 1.0);
            let b = if r.random::<bool>() {
                uniform(r, &dims[2..], 1.0)
            } else {
                uniform(r, &dims[1..], 1.0)
            };
            let w = uniform(r, &dims, 1.0);
            gradcheck(
                |g, v| {
                    let y = g.add_broadcast(v[0], v[1])?;
                    weighted_sum(g, y, &w)
                },
                &[a, b],
                cfg,
            )
        }
        Check::Scale => {
            let dims = random_dims(r);
            let x = uniform(r, &dims, 1.0);
            let k = r.random_range(-3.0..=3.0);
            let w = uniform(r, &dims, 1.0);
            gradcheck(
                |g, v| {
                    let y = g.scale(v[0], k)?;
                    weighted_sum(g, y, &w)
                },
                &[x],
                cfg,
            )
        }
        Check::Tanh => {
            let dims = random_dims(r);
            let x = uniform(r, &dims, 2.0);
            unary(r, cfg, x, Graph::tanh)
        }
        Check::Sigmoid => {
            let dims = random_dims(r);
            let x = uniform(r, &dims, 3.0);
            unary(r, cfg, x, Graph::sigmoid)
        }
        Check::Relu => {
            let dims = random_dims(r);
            let x = off_zero(r, &dims);
            unary(r, cfg, x, Graph::relu)
        }
        Check::Softmax => {
            let dims = random_dims(r);
            let axis = extent(r, 0, dims.len() - 1);
            let x = uniform(r, &dims, 2.0);
            let w = uniform(r, &dims, 1.0);
            gradcheck(
                |g, v| {
                    let y = g.softmax(v[0], axis)?;
                    weighted_sum(g, y, &w)
                },
                &[x],
                cfg,
            )
        }
        Check::LayerNorm => {
            let mut dims = random_dims(r);
            *dims.last_mut().expect("rank >= 1") = extent(r, 2, 6);
            let d = dims[dims.len() - 1];
            let x = uniform(r, &dims, 1.0);
            let gain = uniform(r, &[d], 1.0);
            let bias = uniform(r, &[d], 1.0);
            let w = uniform(r, &dims, 1.0);
            gradcheck(
                |g, v| {
                    let y = g.layernorm(v[0], v[1], v[2], 1e-5)?;
                    weighted_sum(g, y, &w)
                },
                &[x, gain, bias],
                cfg,
            )
        }
        Check::Concat => {
            let dims = random_dims(r);
            let axis = extent(r, 0, dims.len() - 1);
            let mut parts = Vec::new();
            let mut total = 0;
            for _ in 0..3 {
                let mut d = dims.clone();
                d[axis] = extent(r, 1, 3);
                total += d[axis];
                parts.push(uniform(r, &d, 1.0));
            }
            let mut out = dims.clone();
            out[axis] = total;
            let w = uniform(r, &out, 1.0);
            gradcheck(
                |g, v| {
                    let y = g.concat(v, axis)?;
                    weighted_sum(g, y, &w)
                },
                &parts,
                cfg,
            )
        }
        Check::Narrow => {
            let mut dims = random_dims(r);
            let axis = extent(r, 0, dims.len() - 1);
            dims[axis] = extent(r, 2, 5);
            let start = extent(r, 0, dims[axis] - 1);
            let len = extent(r, 1, dims[axis] - start);
            let x = uniform(r, &dims, 1.0);
            let mut out = dims.clone();
            out[axis] = len;
            let w = uniform(r, &out, 1.0);
            gradcheck(
                |g, v| {
                    let y = g.narrow(v[0], axis, start, len)?;
                    weighted_sum(g, y, &w)
                },
                &[x],
                cfg,
            )
        }
        Check::Sum | Check::Mean => {
            let dims = random_dims(r);
            let x = uniform(r, &dims, 1.0);
            gradcheck(
                |g, v| {
                    let s = if check == Check::Sum { g.sum(v[0])? } else { g.mean(v[0])? };
                    g.mul(s, s)
                },
                &[x],
                cfg,
            )
        }
        Check::Mse => {
            let n = extent(r, 1, 12);
            let x = uniform(r, &[n], 1.0);
            let y = uniform(r, &[n], 1.0).into_data();
            let mask = random_mask(r, n, 1);
            gradcheck(|g, v| fused(g, v[0], |p| mse_with_grad(p, &y, &mask)), &[x], cfg)
        }
        Check::Ccc => {
            let n = extent(r, 3, 12);
            let x = uniform(r, &[n], 1.0);
            let y = uniform(r, &[n], 1.0).into_data();
            let mask = random_mask(r, n, 2);
            gradcheck(|g, v| fused(g, v[0], |p| ccc_with_grad(p, &y, &mask)), &[x], cfg)
        }
        Check::VaLoss => {
            let n = extent(r, 3, 10);
            let x = uniform(r, &[n, 2], 0.9);
            let y = uniform(r, &[n, 2], 1.0).into_data();
            let mask = random_mask(r, 2 * n, 4);
            let lambda = r.random_range(0.0..=1.0);
            gradcheck(|g, v| fused(g, v[0], |p| va_loss_with_grad(p, &y, &mask, lambda)), &[x], cfg)
        }
        Check::CrossEntropy => {
            let n = extent(r, 1, 6);
            let x = uniform(r, &[n, EXPR_CLASSES], 3.0);
            let labels: Vec<usize> = (0..n).map(|_| r.random_range(0..EXPR_CLASSES)).collect();
            let mask = random_mask(r, n, 1);
            gradcheck(
                |g, v| fused(g, v[0], |p| ce_loss_with_grad(p, EXPR_CLASSES, &labels, &mask)),
                &[x],
                cfg,
            )
        }
        Check::AuLoss => {
            let n = extent(r, 1, 4);
            let x = uniform(r, &[n, AU_UNITS], 3.0);
            let labels: Vec<f64> = (0..n * AU_UNITS).map(|_| f64::from(r.random::<bool>() as u8)).collect();
            let mask = random_mask(r, n * AU_UNITS, 1);
            let weights = AuWeights((0..AU_UNITS).map(|_| r.random_range(0.2..=3.0)).collect());
            let modulated = r.random::<f64>() < 0.75;
            gradcheck(
                |g, v| fused(g, v[0], |p| au_loss_with_grad(p, &labels, &mask, &weights, modulated)),
                &[x],
                cfg,
            )
        }
        Check::ModelVa => model_check(r, seed, Task::Va, cfg),
        Check::ModelExpr => model_check(r, seed, Task::Expr, cfg),
        Check::ModelAu => model_check(r, seed, Task::Au, cfg),
    }
}

/// The small two-stream model the end-to-end checks run on.
pub fn toy_model_config(seed: u64) -> ModelConfig {
    ModelConfig {
        streams: vec![StreamSpec::new("a", 3), StreamSpec::new("b", 5)],
        d_model: 8,
        n_heads: 2,
        n_layers: 2,
        d_ff: 12,
        dropout: 0.0,
        window: 2,
        max_len: 8,
        init_seed: seed,
        ..Default::default()
    }
}

fn model_check(r: &mut ChaCha8Rng, seed: u64, task: Task, cfg: &GradcheckConfig) -> Result<GradReport> {
    let config = toy_model_config(seed);
    let mut model = FusionModel::new(config.clone())?;
    // move biases and gains off their symmetric initial values
    for p in model.params_mut().iter_mut() {
        let is_gain = p.name.ends_with(".gain");
        if is_gain || p.name.ends_with(".bias") {
            for x in p.tensor.data_mut() {
                let z: f64 = r.sample(StandardNormal);
                *x = if is_gain { 1.0 + 0.2 * z } else { 0.1 * z };
            }
        }
    }
    let t = config.window;
    let inputs: Vec<Tensor> = config.streams.iter().map(|s| uniform(r, &[1, t, s.dim], 1.0)).collect();
    let batch = Batch {
        inputs: inputs.clone(),
        windows: 1,
        len: t,
        frame_ids: (0..t as u64).collect(),
        real: vec![true; t],
        va: (0..2 * t).map(|_| r.random_range(-1.0..=1.0)).collect(),
        va_mask: vec![true; 2 * t],
        expr: (0..t).map(|_| r.random_range(0..EXPR_CLASSES)).collect(),
        expr_mask: vec![true; t],
        au: (0..t * AU_UNITS).map(|_| f64::from(r.random::<bool>() as u8)).collect(),
        au_mask: vec![true; t * AU_UNITS],
    };
    let weights = AuWeights((0..AU_UNITS).map(|_| r.random_range(0.5..=2.0)).collect());
    let lambda = 0.5;
    let params: Vec<Tensor> = model.params().iter().map(|p| p.tensor.clone()).collect();
    gradcheck(
        |g, p| {
            let xs: Vec<Var> = inputs.iter().map(|x| g.constant(x.clone())).collect();
            let out = model.forward(g, p, &xs, &mut Mode::Eval)?;
            let loss = batch_loss(g, &out, &batch, task, lambda, &weights)?
                .ok_or_else(|| crate::Error::InvalidArgument("toy batch carries no labels".to_string()))?;
            Ok(loss.loss)
        },
        &params,
        cfg,
    )
}

/// Runs `checks` at every seed in `seeds`, in order.
pub fn run_suite(checks: &[Check], seeds: core::ops::Range<u64>, cfg: &GradcheckConfig) -> Result<Vec<CheckOutcome>> {
    let mut out = Vec::with_capacity(checks.len() * (seeds.end.saturating_sub(seeds.start)) as usize);
    for &check in checks {
        for seed in seeds.clone() {
            out.push(CheckOutcome {
                check,
                seed,
                report: run_check(check, seed, cfg)?,
            });
        }
    }
    Ok(out)
}
