use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::config::ModelConfig;
use crate::error::{Error, Result};
use crate::real::{c, Real};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<F> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<F>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockIndex {
    pub norm1_scale: usize,
    pub norm1_offset: usize,
    pub q_weight: usize,
    pub q_bias: usize,
    pub k_weight: usize,
    pub k_bias: usize,
    pub v_weight: usize,
    pub v_bias: usize,
    pub out_weight: usize,
    pub out_bias: usize,
    pub norm2_scale: usize,
    pub norm2_offset: usize,
    pub fc1_weight: usize,
    pub fc1_bias: usize,
    pub fc2_weight: usize,
    pub fc2_bias: usize,
}

/// Tensor indices of one task head. `hidden` is set for two-layer heads;
/// `weight`/`bias` are then the output layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HeadIndex {
    pub hidden: Option<(usize, usize)>,
    pub weight: usize,
    pub bias: usize,
}

impl HeadIndex {
    pub fn tensors(&self) -> Vec<usize> {
        let mut v = Vec::with_capacity(4);
        if let Some((w, b)) = self.hidden {
            v.push(w);
            v.push(b);
        }
        v.push(self.weight);
        v.push(self.bias);
        v
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Init {
    /// Truncated normal scaled by 1/sqrt(fan_in).
    Affine {
        fan_in: usize,
    },
    /// Truncated normal with a fixed small scale.
    Embedding,
    Zeros,
    Ones,
}

/// Names, shapes and positions of every parameter tensor for a config.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    pub names: Vec<String>,
    pub shapes: Vec<Vec<usize>>,
    init: Vec<Init>,
    pub patch_weight: usize,
    pub patch_bias: usize,
    pub summary_token: usize,
    pub pos_embed: usize,
    pub blocks: Vec<BlockIndex>,
    pub norm_scale: usize,
    pub norm_offset: usize,
    pub heads: Vec<HeadIndex>,
}

impl Layout {
    pub fn new(cfg: &ModelConfig) -> Self {
        let mut l = Layout {
            names: Vec::new(),
            shapes: Vec::new(),
            init: Vec::new(),
            patch_weight: 0,
            patch_bias: 0,
            summary_token: 0,
            pos_embed: 0,
            blocks: Vec::new(),
            norm_scale: 0,
            norm_offset: 0,
            heads: Vec::new(),
        };
        let d = cfg.embed_dim;
        let m = cfg.mlp_hidden();
        let push = |l: &mut Layout, name: String, shape: Vec<usize>, init: Init| {
            l.names.push(name);
            l.shapes.push(shape);
            l.init.push(init);
            l.names.len() - 1
        };
        let affine = |fan_in| Init::Affine { fan_in };

        l.patch_weight = push(
            &mut l,
            "patch_embed.weight".into(),
            vec![d, cfg.patch_len()],
            affine(cfg.patch_len()),
        );
        l.patch_bias = push(&mut l, "patch_embed.bias".into(), vec![d], Init::Zeros);
        l.summary_token = push(&mut l, "summary_token".into(), vec![d], Init::Embedding);
        l.pos_embed = push(
            &mut l,
            "pos_embed".into(),
            vec![cfg.n_tokens() + 1, d],
            Init::Embedding,
        );
        for b in 0..cfg.depth {
            let p = format!("blocks.{b}");
            let lin = |l: &mut Layout, name: &str, out: usize, inp: usize| {
                let w = push(l, format!("{p}.{name}.weight"), vec![out, inp], affine(inp));
                let bias = push(l, format!("{p}.{name}.bias"), vec![out], Init::Zeros);
                (w, bias)
            };
            let norm1_scale = push(&mut l, format!("{p}.norm1.scale"), vec![d], Init::Ones);
            let norm1_offset = push(&mut l, format!("{p}.norm1.offset"), vec![d], Init::Zeros);
            let (q_weight, q_bias) = lin(&mut l, "attn.query", d, d);
            let (k_weight, k_bias) = lin(&mut l, "attn.key", d, d);
            let (v_weight, v_bias) = lin(&mut l, "attn.value", d, d);
            let (out_weight, out_bias) = lin(&mut l, "attn.out", d, d);
            let norm2_scale = push(&mut l, format!("{p}.norm2.scale"), vec![d], Init::Ones);
            let norm2_offset = push(&mut l, format!("{p}.norm2.offset"), vec![d], Init::Zeros);
            let (fc1_weight, fc1_bias) = lin(&mut l, "mlp.fc1", m, d);
            let (fc2_weight, fc2_bias) = lin(&mut l, "mlp.fc2", d, m);
            l.blocks.push(BlockIndex {
                norm1_scale,
                norm1_offset,
                q_weight,
                q_bias,
                k_weight,
                k_bias,
                v_weight,
                v_bias,
                out_weight,
                out_bias,
                norm2_scale,
                norm2_offset,
                fc1_weight,
                fc1_bias,
                fc2_weight,
                fc2_bias,
            });
        }
        l.norm_scale = push(&mut l, "norm.scale".into(), vec![d], Init::Ones);
        l.norm_offset = push(&mut l, "norm.offset".into(), vec![d], Init::Zeros);
        for j in 0..cfg.n_tasks {
            let p = format!("heads.{}", j + 1);
            let (hidden, in_out) = if cfg.head_hidden > 0 {
                let h = cfg.head_hidden;
                let w = push(&mut l, format!("{p}.hidden.weight"), vec![h, d], affine(d));
                let b = push(&mut l, format!("{p}.hidden.bias"), vec![h], Init::Zeros);
                (Some((w, b)), h)
            } else {
                (None, d)
            };
            let weight = push(
                &mut l,
                format!("{p}.weight"),
                vec![1, in_out],
                affine(in_out),
            );
            let bias = push(&mut l, format!("{p}.bias"), vec![1], Init::Zeros);
            l.heads.push(HeadIndex {
                hidden,
                weight,
                bias,
            });
        }
        l
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn numel(&self, i: usize) -> usize {
        self.shapes[i].iter().product()
    }
}

/// All learnable tensors of the trunk and the heads.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<F> {
    pub config: ModelConfig,
    pub layout: Layout,
    pub tensors: Vec<Tensor<F>>,
}

impl<F: Real> ModelParams<F> {
    /// Assembles parameters from raw tensor data in layout order.
    pub fn from_data(config: ModelConfig, data: Vec<Vec<F>>) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(&config);
        if data.len() != layout.len() {
            return Err(Error::Shape(format!(
                "expected {} tensors, got {}",
                layout.len(),
                data.len()
            )));
        }
        let mut tensors = Vec::with_capacity(data.len());
        for (i, d) in data.into_iter().enumerate() {
            if d.len() != layout.numel(i) {
                return Err(Error::Shape(format!(
                    "{}: expected {} values, got {}",
                    layout.names[i],
                    layout.numel(i),
                    d.len()
                )));
            }
            if d.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite(format!("parameter {}", layout.names[i])));
            }
            tensors.push(Tensor {
                name: layout.names[i].clone(),
                shape: layout.shapes[i].clone(),
                data: d,
            });
        }
        Ok(ModelParams {
            config,
            layout,
            tensors,
        })
    }

    pub fn param_count(&self) -> usize {
        self.tensors.iter().map(|t| t.data.len()).sum()
    }

    #[inline]
    pub fn t(&self, i: usize) -> &[F] {
        &self.tensors[i].data
    }

    pub fn cast<G: Real>(&self) -> ModelParams<G> {
        ModelParams {
            config: self.config.clone(),
            layout: self.layout.clone(),
            tensors: self
                .tensors
                .iter()
                .map(|t| Tensor {
                    name: t.name.clone(),
                    shape: t.shape.clone(),
                    data: t
                        .data
                        .iter()
                        .map(|&x| G::from_f64_lossy(x.to_f64().unwrap()))
                        .collect(),
                })
                .collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.tensors
            .iter()
            .all(|t| t.data.iter().all(|x| x.is_finite()))
    }
}

fn truncated_normal(rng: &mut ChaCha8Rng) -> f64 {
    loop {
        let x: f64 = StandardNormal.sample(rng);
        if x.abs() <= 2.0 {
            return x;
        }
    }
}

const EMBEDDING_SCALE: f64 = 0.02;

/// Deterministic initialization from `seed`: affine weights ~ truncated
/// normal (|x| <= 2 sd) with sd 1/sqrt(fan_in), summary token and position
/// embeddings with sd 0.02, biases and norm offsets 0, norm scales 1.
/// Values are drawn in f64, so f32 and f64 parameters agree up to rounding.
pub fn init_params<F: Real>(cfg: &ModelConfig, seed: u64) -> Result<ModelParams<F>> {
    cfg.validate()?;
    let layout = Layout::new(cfg);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..layout.len())
        .map(|i| {
            let n = layout.numel(i);
            match layout.init[i] {
                Init::Zeros => vec![F::zero(); n],
                Init::Ones => vec![F::one(); n],
                Init::Affine { fan_in } => {
                    let sd = 1.0 / (fan_in as f64).sqrt();
                    (0..n).map(|_| c(sd * truncated_normal(&mut rng))).collect()
                }
                Init::Embedding => (0..n)
                    .map(|_| c(EMBEDDING_SCALE * truncated_normal(&mut rng)))
                    .collect(),
            }
        })
        .collect();
    ModelParams::from_data(cfg.clone(), data)
}

/// Gradient (or any per-parameter quantity) mirroring `ModelParams` layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<F> {
    pub tensors: Vec<Vec<F>>,
}

impl<F: Real> Gradients<F> {
    pub fn zeros_like(p: &ModelParams<F>) -> Self {
        Gradients {
            tensors: p
                .tensors
                .iter()
                .map(|t| vec![F::zero(); t.data.len()])
                .collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Gradients<F>) {
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += *y;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(|t| t.iter().all(|x| x.is_finite()))
    }

    pub fn max_abs(&self) -> F {
        self.tensors
            .iter()
            .flat_map(|t| t.iter())
            .fold(F::zero(), |m, x| m.max(x.abs()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_is_deterministic() {
        let cfg = ModelConfig::tiny();
        let a: ModelParams<f32> = init_params(&cfg, 5).unwrap();
        let b: ModelParams<f32> = init_params(&cfg, 5).unwrap();
        assert_eq!(a, b);
        let c: ModelParams<f32> = init_params(&cfg, 6).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn layout_matches_closed_form_count() {
        for cfg in [
            ModelConfig::default(),
            ModelConfig::tiny(),
            ModelConfig {
                head_hidden: 16,
                depth: 3,
                ..ModelConfig::tiny()
            },
            ModelConfig {
                input_dims: [16, 16, 32],
                patch_size: 16,
                ..ModelConfig::default()
            },
        ] {
            let p: ModelParams<f32> = init_params(&cfg, 0).unwrap();
            assert_eq!(p.param_count(), cfg.param_count(), "{cfg:?}");
        }
    }

    #[test]
    fn init_conventions() {
        let cfg = ModelConfig::tiny();
        let p: ModelParams<f64> = init_params(&cfg, 1).unwrap();
        let l = &p.layout;
        assert!(p.t(l.patch_bias).iter().all(|&x| x == 0.0));
        assert!(p.t(l.norm_scale).iter().all(|&x| x == 1.0));
        assert!(p.t(l.blocks[0].norm1_offset).iter().all(|&x| x == 0.0));
        let bound = 2.0 / (cfg.patch_len() as f64).sqrt();
        assert!(p.t(l.patch_weight).iter().all(|x| x.abs() <= bound));
        assert!(p.t(l.pos_embed).iter().all(|x| x.abs() <= 0.04));
    }

    #[test]
    fn cast_round_trips_through_f64() {
        let p: ModelParams<f32> = init_params(&ModelConfig::tiny(), 2).unwrap();
        let back: ModelParams<f32> = p.cast::<f64>().cast();
        assert_eq!(p, back);
    }
}
