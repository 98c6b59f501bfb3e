use crate::data::Volume;
use crate::error::{Error, Result};

/// Patch tokens of one volume: `n_tokens` rows of `patch_len` voxels.
#[derive(Debug, Clone, PartialEq)]
pub struct Tokens {
    pub n_tokens: usize,
    pub patch_len: usize,
    pub data: Vec<f32>,
}

impl Tokens {
    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.patch_len..(i + 1) * self.patch_len]
    }
}

fn check(dims: [usize; 3], p: usize) -> Result<[usize; 3]> {
    if p == 0 || dims.iter().any(|&d| d == 0 || d % p != 0) {
        return Err(Error::Shape(format!(
            "dims {dims:?} not divisible by patch size {p}"
        )));
    }
    Ok([dims[0] / p, dims[1] / p, dims[2] / p])
}

/// Splits a volume into cubic patches. Patches are ordered row-major over the
/// patch grid, and voxels row-major within each patch.
pub fn patchify(v: &Volume, p: usize) -> Result<Tokens> {
    let [gz, gy, gx] = check(v.dims, p)?;
    let patch_len = p * p * p;
    let n_tokens = gz * gy * gx;
    let mut data = Vec::with_capacity(n_tokens * patch_len);
    for pz in 0..gz {
        for py in 0..gy {
            for px in 0..gx {
                for dz in 0..p {
                    for dy in 0..p {
                        let start = v.index(pz * p + dz, py * p + dy, px * p);
                        data.extend_from_slice(&v.voxels[start..start + p]);
                    }
                }
            }
        }
    }
    Ok(Tokens {
        n_tokens,
        patch_len,
        data,
    })
}

/// Inverse of [`patchify`].
pub fn unpatchify(t: &Tokens, dims: [usize; 3], p: usize) -> Result<Volume> {
    let [gz, gy, gx] = check(dims, p)?;
    if t.n_tokens != gz * gy * gx || t.patch_len != p * p * p {
        return Err(Error::Shape(format!(
            "{} tokens of {} voxels do not tile {dims:?} with patch {p}",
            t.n_tokens, t.patch_len
        )));
    }
    let mut v = Volume {
        subject_id: String::new(),
        dims,
        voxels: vec![0.0; dims.iter().product()],
    };
    let mut src = t.data.chunks_exact(p);
    for pz in 0..gz {
        for py in 0..gy {
            for px in 0..gx {
                for dz in 0..p {
                    for dy in 0..p {
                        let start = v.index(pz * p + dz, py * p + dy, px * p);
                        v.voxels[start..start + p].copy_from_slice(src.next().unwrap());
                    }
                }
            }
        }
    }
    Ok(v)
}
