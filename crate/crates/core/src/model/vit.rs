use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use super::config::ViTConfig;
use super::layers::{embed, encoder_block, patchify, regression_head, BlockParams, HeadParams};
use crate::autodiff::{BatchNormState, Graph, Mode, Var};
use crate::error::{dim_err, Error, Result};
use crate::rng::{stream, Purpose};
use crate::tensor::Tensor;

/// Which side of the feature/regression split a tensor belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Part {
    Vit,
    Head,
}

impl std::str::FromStr for Part {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "vit" => Ok(Part::Vit),
            "head" => Ok(Part::Head),
            other => Err(Error::Config(format!("unknown model part '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
    pub part: Part,
    pub frozen: bool,
}

#[derive(Debug, Clone, PartialEq)]
struct Layout {
    embed_w: usize,
    embed_b: usize,
    pos: usize,
    blocks: Vec<BlockParams<usize>>,
    head: HeadParams<usize>,
}

#[derive(Clone, Copy)]
enum Init {
    Glorot,
    Zeros,
    Ones,
    Normal(f64),
}

/// Graph variables of every parameter, in model order.
#[derive(Debug, Clone)]
pub struct Bound {
    pub vars: Vec<Var>,
}

/// Patch-transformer feature extractor with a fully connected regression head.
#[derive(Debug, Clone, PartialEq)]
pub struct ViTFc {
    config: ViTConfig,
    params: Vec<Param>,
    layout: Layout,
    pub bn: BatchNormState,
}

pub const POS_EMBED_STD: f64 = 0.02;

impl ViTFc {
    pub fn new(config: ViTConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = stream(seed, Purpose::Init, 0, 0);
        let mut params = Vec::new();
        let mut add = |name: String, shape: &[usize], part: Part, init: Init| -> usize {
            let n: usize = shape.iter().product();
            let data: Vec<f64> = match init {
                Init::Zeros => vec![0.0; n],
                Init::Ones => vec![1.0; n],
                Init::Normal(std) => {
                    let d = Normal::new(0.0, std).expect("positive std");
                    (0..n).map(|_| d.sample(&mut rng)).collect()
                }
                Init::Glorot => {
                    let limit = (6.0 / (shape[0] + shape[1]) as f64).sqrt();
                    let d = Uniform::new_inclusive(-limit, limit).expect("finite limit");
                    (0..n).map(|_| d.sample(&mut rng)).collect()
                }
            };
            params.push(Param {
                name,
                value: Tensor::new(shape.to_vec(), data).expect("shape matches data"),
                part,
                frozen: false,
            });
            params.len() - 1
        };
        let c = &config;
        let (d, v) = (c.d_embed, Part::Vit);
        let embed_w = add("embed.weight".into(), &[c.patch_len(), d], v, Init::Glorot);
        let embed_b = add("embed.bias".into(), &[d], v, Init::Zeros);
        let pos = add("pos_embed".into(), &[c.tokens(), d], v, Init::Normal(POS_EMBED_STD));
        let mut blocks = Vec::with_capacity(c.depth);
        for i in 0..c.depth {
            let p = |s: &str| format!("blocks.{i}.{s}");
            let ln1_gamma = add(p("ln1.gamma"), &[d], v, Init::Ones);
            let ln1_beta = add(p("ln1.beta"), &[d], v, Init::Zeros);
            let mut proj = |kind: &str| -> Vec<usize> {
                (0..c.heads)
                    .map(|h| add(p(&format!("attn.{kind}.{h}")), &[d, c.d_head], v, Init::Glorot))
                    .collect()
            };
            let (wq, wk, wv) = (proj("wq"), proj("wk"), proj("wv"));
            blocks.push(BlockParams {
                ln1_gamma,
                ln1_beta,
                wq,
                wk,
                wv,
                w_out: add(p("attn.out.weight"), &[d, d], v, Init::Glorot),
                b_out: add(p("attn.out.bias"), &[d], v, Init::Zeros),
                ln2_gamma: add(p("ln2.gamma"), &[d], v, Init::Ones),
                ln2_beta: add(p("ln2.beta"), &[d], v, Init::Zeros),
                fc1_w: add(p("mlp.fc1.weight"), &[d, c.mlp_hidden], v, Init::Glorot),
                fc1_b: add(p("mlp.fc1.bias"), &[c.mlp_hidden], v, Init::Zeros),
                fc2_w: add(p("mlp.fc2.weight"), &[c.mlp_hidden, d], v, Init::Glorot),
                fc2_b: add(p("mlp.fc2.bias"), &[d], v, Init::Zeros),
            });
        }
        let hd = Part::Head;
        let head = HeadParams {
            fc1_w: add("head.fc1.weight".into(), &[d, c.fc_hidden], hd, Init::Glorot),
            fc1_b: add("head.fc1.bias".into(), &[c.fc_hidden], hd, Init::Zeros),
            bn_gamma: add("head.bn.gamma".into(), &[c.fc_hidden], hd, Init::Ones),
            bn_beta: add("head.bn.beta".into(), &[c.fc_hidden], hd, Init::Zeros),
            fc2_w: add("head.fc2.weight".into(), &[c.fc_hidden, 1], hd, Init::Glorot),
            fc2_b: add("head.fc2.bias".into(), &[1], hd, Init::Zeros),
        };
        let layout = Layout {
            embed_w,
            embed_b,
            pos,
            blocks,
            head,
        };
        Ok(Self {
            bn: BatchNormState::new(config.fc_hidden),
            config,
            params,
            layout,
        })
    }

    pub fn config(&self) -> &ViTConfig {
        &self.config
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param] {
        &mut self.params
    }

    pub fn param(&self, name: &str) -> Option<&Param> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut Param> {
        self.params.iter_mut().find(|p| p.name == name)
    }

    pub fn parameter_count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Sets the freeze flag of every tensor in `part`.
    pub fn apply_freeze(&mut self, part: Part, frozen: bool) {
        for p in self.params.iter_mut().filter(|p| p.part == part) {
            p.frozen = frozen;
        }
    }

    /// Adds every tensor to `g`; frozen tensors become constants.
    pub fn bind(&self, g: &mut Graph) -> Bound {
        let vars = self
            .params
            .iter()
            .map(|p| {
                if p.frozen {
                    g.constant(p.value.clone())
                } else {
                    g.param(p.value.clone())
                }
            })
            .collect();
        Bound { vars }
    }

    /// Stacks the patch sequences of `inputs` (each `F × L_V`, channel-major)
    /// into a `B·L × patch_len` matrix.
    pub fn patch_batch(&self, inputs: &[&[f64]]) -> Result<Tensor> {
        let (l, p) = (self.config.tokens(), self.config.patch_len());
        let mut data = Vec::with_capacity(inputs.len() * l * p);
        for x in inputs {
            data.extend(patchify(x, &self.config)?.into_data());
        }
        Tensor::matrix(inputs.len() * l, p, data)
    }

    /// Pooled encoder features, `B × d_embed`.
    pub fn encode<R: Rng + ?Sized>(
        &self,
        g: &mut Graph,
        bound: &Bound,
        patches: Var,
        mode: Mode,
        rng: &mut R,
    ) -> Result<Var> {
        let v = &bound.vars;
        let lay = &self.layout;
        let rate = self.config.dropout;
        let tokens = self.config.tokens();
        if g.value(patches).cols() != self.config.patch_len() {
            return dim_err(format!(
                "patch width {} but the model expects {}",
                g.value(patches).cols(),
                self.config.patch_len()
            ));
        }
        let mut x = embed(g, patches, v[lay.embed_w], v[lay.embed_b], v[lay.pos], rate, rng, mode)?;
        for block in &lay.blocks {
            let p = block.map(|i| v[i]);
            x = encoder_block(g, x, &p, tokens, rate, rng, mode)?;
        }
        g.mean_row_groups(x, tokens)
    }

    /// Regression head on pooled features, `B × 1`.
    pub fn head(&self, g: &mut Graph, bound: &Bound, pooled: Var, mode: Mode, bn: &mut BatchNormState) -> Result<Var> {
        let p = self.layout.head.map(|i| bound.vars[i]);
        regression_head(g, pooled, &p, bn, mode)
    }

    pub fn forward<R: Rng + ?Sized>(
        &self,
        g: &mut Graph,
        bound: &Bound,
        patches: Var,
        mode: Mode,
        rng: &mut R,
        bn: &mut BatchNormState,
    ) -> Result<Var> {
        let pooled = self.encode(g, bound, patches, mode, rng)?;
        self.head(g, bound, pooled, mode, bn)
    }

    /// Eval-mode pooled features for each input.
    pub fn features(&self, inputs: &[&[f64]]) -> Result<Tensor> {
        let mut rows = Vec::with_capacity(inputs.len());
        for chunk in inputs.chunks(EVAL_CHUNK) {
            let mut g = Graph::new();
            let bound = self.bind_frozen(&mut g);
            let x = g.constant(self.patch_batch(chunk)?);
            let pooled = self.encode(&mut g, &bound, x, Mode::Eval, &mut stream(0, Purpose::Dropout, 0, 0))?;
            let t = g.value(pooled);
            rows.extend((0..t.rows()).map(|i| t.row(i).to_vec()));
        }
        Tensor::from_rows(&rows)
    }

    /// Eval-mode predictions; never mutates the model.
    pub fn predict(&self, inputs: &[&[f64]]) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(inputs.len());
        let mut bn = self.bn.clone();
        for chunk in inputs.chunks(EVAL_CHUNK) {
            let mut g = Graph::new();
            let bound = self.bind_frozen(&mut g);
            let x = g.constant(self.patch_batch(chunk)?);
            let y = self.forward(
                &mut g,
                &bound,
                x,
                Mode::Eval,
                &mut stream(0, Purpose::Dropout, 0, 0),
                &mut bn,
            )?;
            out.extend_from_slice(g.value(y).data());
        }
        Ok(out)
    }

    /// Binds every tensor as a constant (no gradients needed).
    fn bind_frozen(&self, g: &mut Graph) -> Bound {
        Bound {
            vars: self.params.iter().map(|p| g.constant(p.value.clone())).collect(),
        }
    }

    /// Replaces tensor values, checking names and shapes.
    pub fn load_values(&mut self, values: Vec<(String, Tensor, bool)>, bn: BatchNormState) -> Result<()> {
        if values.len() != self.params.len() {
            return Err(Error::Format(format!(
                "checkpoint holds {} tensors, model has {}",
                values.len(),
                self.params.len()
            )));
        }
        for (p, (name, t, frozen)) in self.params.iter_mut().zip(values) {
            if p.name != name || p.value.shape() != t.shape() {
                return Err(Error::Format(format!(
                    "tensor {name} {:?} does not match {} {:?}",
                    t.shape(),
                    p.name,
                    p.value.shape()
                )));
            }
            p.value = t;
            p.frozen = frozen;
        }
        if bn.running_mean.len() != self.config.fc_hidden || bn.running_var.len() != self.config.fc_hidden {
            return Err(Error::Format("batch-norm statistics have the wrong width".into()));
        }
        self.bn = bn;
        Ok(())
    }
}

const EVAL_CHUNK: usize = 64;
