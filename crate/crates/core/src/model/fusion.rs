use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::{ModelConfig, AU_UNITS, EXPR_CLASSES, VA_OUTPUTS};
use super::params::{ParamId, ParamSet};
use super::positional::PositionalTable;
use crate::error::{shape_err, Error, Result};
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

/// Whether dropout is active during a forward pass.
pub enum Mode<'a> {
    Eval,
    Train { rng: &'a mut ChaCha8Rng },
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Linear {
    weight: ParamId,
    bias: ParamId,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Norm {
    gain: ParamId,
    bias: ParamId,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Block {
    ln1: Norm,
    q: Linear,
    k: Linear,
    v: Linear,
    o: Linear,
    ln2: Norm,
    ff1: Linear,
    ff2: Linear,
}

#[derive(Debug, Clone, PartialEq)]
struct Layout {
    affine: Vec<Linear>,
    fuse: ParamId,
    blocks: Vec<Block>,
    head_va: Linear,
    head_expr: Linear,
    head_au: Linear,
}

/// Graph handles of the three head outputs for one forward pass.
#[derive(Debug, Clone, Copy)]
pub struct Outputs {
    /// Encoder output, `[.., T, d_model]`.
    pub temporal: Var,
    /// `tanh`-bounded valence and arousal, `[.., T, 2]`.
    pub va: Var,
    /// Raw expression logits, `[.., T, 8]`.
    pub expr: Var,
    /// Raw action-unit logits, `[.., T, 12]`.
    pub au: Var,
}

/// Concrete head outputs of an inference pass.
#[derive(Debug, Clone, PartialEq)]
pub struct Predictions {
    pub va: Tensor,
    pub expr: Tensor,
    pub au: Tensor,
}

/// Affine alignment, positional encoding, per-frame fusion, a pre-norm
/// transformer encoder and three task heads.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionModel {
    config: ModelConfig,
    pos: PositionalTable,
    params: ParamSet,
    layout: Layout,
}

fn xavier(rng: &mut ChaCha8Rng, fan_out: usize, fan_in: usize) -> Result<Tensor> {
    let bound = libm::sqrt(6.0 / (fan_in + fan_out) as f64);
    let data = (0..fan_out * fan_in)
        .map(|_| rng.random_range(-bound..bound))
        .collect();
    Tensor::new(&[fan_out, fan_in], data)
}

struct Builder<'a> {
    params: ParamSet,
    rng: &'a mut ChaCha8Rng,
}

impl Builder<'_> {
    fn linear(&mut self, name: &str, out: usize, inp: usize) -> Result<Linear> {
        let w = xavier(self.rng, out, inp)?;
        Ok(Linear {
            weight: self.params.add(format!("{name}.weight"), w),
            bias: self.params.add(format!("{name}.bias"), Tensor::zeros(&[out])?),
        })
    }

    fn norm(&mut self, name: &str, width: usize) -> Result<Norm> {
        Ok(Norm {
            gain: self.params.add(format!("{name}.gain"), Tensor::filled(crate::Shape::new(&[width])?, 1.0)),
            bias: self.params.add(format!("{name}.bias"), Tensor::zeros(&[width])?),
        })
    }
}

impl FusionModel {
    /// Builds a model with weights drawn uniformly from `±sqrt(6/(fan_in+fan_out))`
    /// using `config.init_seed`; biases start at zero, norm gains at one.
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.init_seed);
        let d = config.d_model;
        let mut b = Builder {
            params: ParamSet::new(),
            rng: &mut rng,
        };
        let mut affine = Vec::with_capacity(config.n_streams());
        for s in &config.streams {
            affine.push(b.linear(&format!("affine.{}", s.name), d, s.dim)?);
        }
        let fuse_w = xavier(b.rng, d, d * config.n_streams())?;
        let fuse = b.params.add(String::from("fuse.weight"), fuse_w);
        let mut blocks = Vec::with_capacity(config.n_layers);
        for l in 0..config.n_layers {
            let p = format!("encoder.{l}");
            blocks.push(Block {
                ln1: b.norm(&format!("{p}.ln1"), d)?,
                q: b.linear(&format!("{p}.attn.q"), d, d)?,
                k: b.linear(&format!("{p}.attn.k"), d, d)?,
                v: b.linear(&format!("{p}.attn.v"), d, d)?,
                o: b.linear(&format!("{p}.attn.o"), d, d)?,
                ln2: b.norm(&format!("{p}.ln2"), d)?,
                ff1: b.linear(&format!("{p}.ff1"), config.d_ff, d)?,
                ff2: b.linear(&format!("{p}.ff2"), d, config.d_ff)?,
            });
        }
        let head_va = b.linear("head.va", VA_OUTPUTS, d)?;
        let head_expr = b.linear("head.expr", EXPR_CLASSES, d)?;
        let head_au = b.linear("head.au", AU_UNITS, d)?;
        let params = b.params;
        Ok(Self {
            pos: PositionalTable::new(config.max_len, d)?,
            config,
            params,
            layout: Layout {
                affine,
                fuse,
                blocks,
                head_va,
                head_expr,
                head_au,
            },
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn positional(&self) -> &PositionalTable {
        &self.pos
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    /// Turns the positional term on or off without rebuilding.
    pub fn set_positional(&mut self, enabled: bool) {
        self.config.positional = enabled;
    }

    fn linear(&self, g: &mut Graph, p: &[Var], l: Linear, x: Var) -> Result<Var> {
        let y = g.matmul_nt(x, p[l.weight.index()])?;
        g.add_broadcast(y, p[l.bias.index()])
    }

    fn seq_len(&self, g: &Graph, x: Var) -> Result<usize> {
        let dims = g.shape(x);
        let dims = dims.dims();
        if dims.len() < 2 {
            return Err(shape_err("forward", format!("expected [T, d] or [B, T, d], got {dims:?}")));
        }
        let t = dims[dims.len() - 2];
        if t > self.pos.max_len() {
            return Err(Error::SequenceTooLong {
                len: t,
                max: self.pos.max_len(),
            });
        }
        Ok(t)
    }

    /// `x·Kᵀ + c + PE[0..T]` for one stream; `x` is `[T, d_in]` or `[B, T, d_in]`.
    pub fn affine_align(&self, g: &mut Graph, p: &[Var], stream: usize, x: Var) -> Result<Var> {
        let spec = self
            .config
            .streams
            .get(stream)
            .ok_or_else(|| Error::UnknownStream(format!("#{stream}")))?;
        let d_in = g.shape(x).last();
        if d_in != spec.dim {
            return Err(Error::StreamDimension {
                stream: spec.name.clone(),
                expected: spec.dim,
                actual: d_in,
            });
        }
        let t = self.seq_len(g, x)?;
        let y = self.linear(g, p, self.layout.affine[stream], x)?;
        if self.config.positional {
            let pe = g.constant(self.pos.rows(t)?);
            g.add_broadcast(y, pe)
        } else {
            Ok(y)
        }
    }

    /// Per-frame channel concatenation of the aligned streams followed by the
    /// learned projection back to `d_model`.
    pub fn fuse(&self, g: &mut Graph, p: &[Var], aligned: &[Var]) -> Result<Var> {
        if aligned.len() != self.config.n_streams() {
            return Err(Error::InvalidArgument(format!(
                "fuse expects {} streams, got {}",
                self.config.n_streams(),
                aligned.len()
            )));
        }
        let axis = g.shape(aligned[0]).rank() - 1;
        let joined = g.concat(aligned, axis)?;
        g.matmul_nt(joined, p[self.layout.fuse.index()])
    }

    fn dropout(&self, g: &mut Graph, x: Var, mode: &mut Mode<'_>) -> Result<Var> {
        let rate = self.config.dropout;
        match mode {
            Mode::Train { rng } if rate > 0.0 => {
                let shape = g.shape(x);
                let keep = 1.0 / (1.0 - rate);
                let mask = (0..shape.numel())
                    .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep })
                    .collect();
                let m = g.constant(Tensor::from_shape(shape, mask)?);
                g.mul(x, m)
            }
            _ => Ok(x),
        }
    }

    /// Transformer encoder over `[T, d]` or `[B, T, d]`.
    pub fn encode(&self, g: &mut Graph, p: &[Var], x: Var, mode: &mut Mode<'_>) -> Result<Var> {
        self.encode_traced(g, p, x, mode).map(|(y, _)| y)
    }

    /// Like [`encode`](Self::encode), also returning each layer's per-head
    /// attention weights (`[.., T, T]`, softmax over the last axis).
    pub fn encode_traced(
        &self,
        g: &mut Graph,
        p: &[Var],
        mut x: Var,
        mode: &mut Mode<'_>,
    ) -> Result<(Var, Vec<Vec<Var>>)> {
        self.seq_len(g, x)?;
        if g.shape(x).last() != self.config.d_model {
            return Err(shape_err(
                "encode",
                format!("input width {} != d_model {}", g.shape(x).last(), self.config.d_model),
            ));
        }
        let eps = self.config.layernorm_eps;
        let dh = self.config.head_dim();
        let scale = 1.0 / libm::sqrt(dh as f64);
        let mut trace = Vec::with_capacity(self.layout.blocks.len());
        for blk in &self.layout.blocks {
            let axis = g.shape(x).rank() - 1;
            let h = g.layernorm(x, p[blk.ln1.gain.index()], p[blk.ln1.bias.index()], eps)?;
            let q = self.linear(g, p, blk.q, h)?;
            let k = self.linear(g, p, blk.k, h)?;
            let v = self.linear(g, p, blk.v, h)?;
            let mut heads = Vec::with_capacity(self.config.n_heads);
            let mut weights = Vec::with_capacity(self.config.n_heads);
            for i in 0..self.config.n_heads {
                let qh = g.narrow(q, axis, i * dh, dh)?;
                let kh = g.narrow(k, axis, i * dh, dh)?;
                let vh = g.narrow(v, axis, i * dh, dh)?;
                let scores = g.matmul_nt(qh, kh)?;
                let scores = g.scale(scores, scale)?;
                let attn = g.softmax(scores, axis)?;
                weights.push(attn);
                heads.push(g.matmul(attn, vh)?);
            }
            trace.push(weights);
            let ctx = g.concat(&heads, axis)?;
            let att = self.linear(g, p, blk.o, ctx)?;
            let att = self.dropout(g, att, mode)?;
            x = g.add(x, att)?;

            let h = g.layernorm(x, p[blk.ln2.gain.index()], p[blk.ln2.bias.index()], eps)?;
            let f = self.linear(g, p, blk.ff1, h)?;
            let f = g.relu(f)?;
            let f = self.linear(g, p, blk.ff2, f)?;
            let f = self.dropout(g, f, mode)?;
            x = g.add(x, f)?;
        }
        Ok((x, trace))
    }

    pub fn heads(&self, g: &mut Graph, p: &[Var], temporal: Var) -> Result<Outputs> {
        let va = self.linear(g, p, self.layout.head_va, temporal)?;
        let va = g.tanh(va)?;
        let expr = self.linear(g, p, self.layout.head_expr, temporal)?;
        let au = self.linear(g, p, self.layout.head_au, temporal)?;
        Ok(Outputs {
            temporal,
            va,
            expr,
            au,
        })
    }

    /// Full pass over one input per configured stream, in configuration order.
    pub fn forward(&self, g: &mut Graph, p: &[Var], inputs: &[Var], mode: &mut Mode<'_>) -> Result<Outputs> {
        if inputs.len() != self.config.n_streams() {
            return Err(Error::InvalidArgument(format!(
                "model expects {} streams, got {}",
                self.config.n_streams(),
                inputs.len()
            )));
        }
        let aligned = inputs
            .iter()
            .enumerate()
            .map(|(i, x)| self.affine_align(g, p, i, *x))
            .collect::<Result<Vec<_>>>()?;
        let fused = self.fuse(g, p, &aligned)?;
        let t = self.encode(g, p, fused, mode)?;
        self.heads(g, p, t)
    }

    /// Inference with dropout disabled. Safe to call concurrently on a shared model.
    pub fn predict(&self, inputs: &[Tensor]) -> Result<Predictions> {
        let mut g = Graph::new();
        let p = self.params.bind_frozen(&mut g);
        let xs: Vec<Var> = inputs.iter().map(|t| g.constant(t.clone())).collect();
        let out = self.forward(&mut g, &p, &xs, &mut Mode::Eval)?;
        Ok(Predictions {
            va: g.value(out.va).clone(),
            expr: g.value(out.expr).clone(),
            au: g.value(out.au).clone(),
        })
    }

    /// Copies parameter values from `other` by name; shapes must match.
    pub fn load_params_from(&mut self, other: &ParamSet) -> Result<()> {
        for p in other.iter() {
            self.params.set(&p.name, p.tensor.data())?;
        }
        Ok(())
    }

    /// Zero-filled parameter sizes, useful when the caller only needs the layout.
    pub fn param_shapes(&self) -> Vec<(String, Vec<usize>)> {
        self.params
            .iter()
            .map(|p| (p.name.clone(), p.tensor.dims().to_vec()))
            .collect()
    }
}

#[cfg(test)]
#[path = "fusion_tests.rs"]
mod tests;
