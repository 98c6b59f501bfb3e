use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::N_TASKS;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Voxels per side of each cubic patch.
    pub patch_size: usize,
    pub embed_dim: usize,
    /// Number of transformer blocks.
    pub depth: usize,
    pub n_heads: usize,
    pub mlp_ratio: usize,
    /// Hidden width of each task head; 0 means a single affine map.
    pub head_hidden: usize,
    pub n_tasks: usize,
    pub input_dims: [usize; 3],
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            patch_size: 8,
            embed_dim: 64,
            depth: 4,
            n_heads: 4,
            mlp_ratio: 4,
            head_hidden: 0,
            n_tasks: N_TASKS,
            input_dims: [32, 32, 32],
        }
    }
}

impl ModelConfig {
    /// Small model used for gradient checks and quick overfit runs
    /// (5,637 parameters at 32^3 input).
    pub fn tiny() -> Self {
        ModelConfig {
            embed_dim: 8,
            depth: 1,
            n_heads: 2,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n_tasks != N_TASKS {
            return bad(format!("n_tasks must be {N_TASKS}, got {}", self.n_tasks));
        }
        if self.patch_size == 0 {
            return bad("patch_size must be positive".into());
        }
        if self
            .input_dims
            .iter()
            .any(|&d| d == 0 || d % self.patch_size != 0)
        {
            return bad(format!(
                "input dims {:?} not divisible by patch size {}",
                self.input_dims, self.patch_size
            ));
        }
        if self.embed_dim == 0 || self.n_heads == 0 {
            return bad("embed_dim and n_heads must be positive".into());
        }
        if !self.embed_dim.is_multiple_of(self.n_heads) {
            return bad(format!(
                "embed_dim {} not divisible by n_heads {}",
                self.embed_dim, self.n_heads
            ));
        }
        if self.mlp_ratio == 0 {
            return bad("mlp_ratio must be positive".into());
        }
        Ok(())
    }

    pub fn n_tokens(&self) -> usize {
        self.input_dims
            .iter()
            .map(|d| d / self.patch_size)
            .product()
    }

    pub fn patch_len(&self) -> usize {
        self.patch_size.pow(3)
    }

    pub fn head_dim(&self) -> usize {
        self.embed_dim / self.n_heads
    }

    pub fn mlp_hidden(&self) -> usize {
        self.mlp_ratio * self.embed_dim
    }

    /// Closed-form parameter count.
    pub fn param_count(&self) -> usize {
        let d = self.embed_dim;
        let p = self.patch_len();
        let m = self.mlp_hidden();
        let patch = d * p + d;
        let tokens = d + (self.n_tokens() + 1) * d;
        let block = 4 * d + 4 * (d * d + d) + (m * d + m) + (d * m + d);
        let head = if self.head_hidden == 0 {
            d + 1
        } else {
            let h = self.head_hidden;
            h * d + h + h + 1
        };
        patch + tokens + self.depth * block + 2 * d + self.n_tasks * head
    }
}
