use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

/// 16-byte header that opens every volume file.
pub const VOLUME_MAGIC: [u8; 16] = *b"SUBSCOREVOL\0\0\0\0\0";

/// One subject's baseline scan as a dense voxel grid, depth outermost.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    pub subject_id: String,
    pub dims: [usize; 3],
    pub voxels: Vec<f32>,
}

impl Volume {
    pub fn new(subject_id: impl Into<String>, dims: [usize; 3], voxels: Vec<f32>) -> Result<Self> {
        let v = Volume {
            subject_id: subject_id.into(),
            dims,
            voxels,
        };
        v.validate()?;
        Ok(v)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dims.contains(&0) {
            return Err(Error::Shape(format!(
                "volume {}: dims {:?} must all be >= 1",
                self.subject_id, self.dims
            )));
        }
        let n: usize = self.dims.iter().product();
        if n != self.voxels.len() {
            return Err(Error::Shape(format!(
                "volume {}: dims {:?} imply {} voxels, found {}",
                self.subject_id,
                self.dims,
                n,
                self.voxels.len()
            )));
        }
        if let Some(i) = self.voxels.iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFinite(format!(
                "volume {}: voxel {} is {}",
                self.subject_id, i, self.voxels[i]
            )));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.voxels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.voxels.is_empty()
    }

    #[inline]
    pub fn index(&self, z: usize, y: usize, x: usize) -> usize {
        (z * self.dims[1] + y) * self.dims[2] + x
    }
}

/// Output of [`normalize_volume`].
#[derive(Debug, Clone, PartialEq)]
pub struct Normalized {
    pub volume: Volume,
    /// Set when the input was constant; the volume is then all zeros.
    pub degenerate: bool,
}

/// Z-scores intensities to mean 0, population standard deviation 1.
///
/// Statistics are accumulated in f64. A constant volume maps to all zeros
/// with `degenerate` set.
pub fn normalize_volume(v: &Volume) -> Normalized {
    let n = v.voxels.len() as f64;
    let mean = v.voxels.iter().map(|&x| x as f64).sum::<f64>() / n;
    let var = v
        .voxels
        .iter()
        .map(|&x| {
            let d = x as f64 - mean;
            d * d
        })
        .sum::<f64>()
        / n;
    let sd = var.sqrt();
    if sd == 0.0 || !sd.is_finite() {
        return Normalized {
            volume: Volume {
                subject_id: v.subject_id.clone(),
                dims: v.dims,
                voxels: vec![0.0; v.voxels.len()],
            },
            degenerate: true,
        };
    }
    let voxels = v
        .voxels
        .iter()
        .map(|&x| ((x as f64 - mean) / sd) as f32)
        .collect();
    Normalized {
        volume: Volume {
            subject_id: v.subject_id.clone(),
            dims: v.dims,
            voxels,
        },
        degenerate: false,
    }
}

pub fn write_volume(path: &Path, v: &Volume) -> Result<()> {
    let mut buf = Vec::with_capacity(16 + 12 + 4 * v.voxels.len());
    buf.extend_from_slice(&VOLUME_MAGIC);
    for &d in &v.dims {
        let d = u32::try_from(d)
            .map_err(|_| Error::Shape(format!("dimension {d} does not fit in u32")))?;
        buf.extend_from_slice(&d.to_le_bytes());
    }
    for &x in &v.voxels {
        buf.extend_from_slice(&x.to_le_bytes());
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))
}

/// Reads a volume file. The subject id is left empty; callers attach it.
pub fn read_volume(path: &Path) -> Result<Volume> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_volume(&bytes).map_err(|e| e.context(path.display().to_string()))
}

fn parse_volume(bytes: &[u8]) -> Result<Volume> {
    if bytes.len() < 28 {
        return Err(Error::Data(format!(
            "volume file truncated ({} bytes)",
            bytes.len()
        )));
    }
    if bytes[..16] != VOLUME_MAGIC {
        return Err(Error::Data("bad volume magic".into()));
    }
    let mut dims = [0usize; 3];
    for (i, d) in dims.iter_mut().enumerate() {
        let off = 16 + 4 * i;
        *d = u32::from_le_bytes(bytes[off..off + 4].try_into().unwrap()) as usize;
    }
    let n = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::Data(format!("dims {dims:?} overflow")))?;
    let body = &bytes[28..];
    if body.len() != n * 4 {
        return Err(Error::Data(format!(
            "dims {dims:?} need {} payload bytes, found {}",
            n * 4,
            body.len()
        )));
    }
    let voxels = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Volume::new(String::new(), dims, voxels)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vol(dims: [usize; 3], voxels: Vec<f32>) -> Volume {
        Volume::new("t", dims, voxels).unwrap()
    }

    #[test]
    fn normalize_matches_direct_zscore() {
        let n = normalize_volume(&vol([1, 1, 4], vec![1.0, 2.0, 3.0, 4.0]));
        assert!(!n.degenerate);
        // mean 2.5, population sd sqrt(1.25)
        let sd = 1.25f64.sqrt();
        for (x, raw) in n.volume.voxels.iter().zip([1.0, 2.0, 3.0, 4.0]) {
            assert!((*x as f64 - (raw - 2.5) / sd).abs() < 1e-6);
        }
        assert!((n.volume.voxels[0] + 1.342).abs() < 1e-3);
        assert!((n.volume.voxels[1] + 0.447).abs() < 1e-3);
    }

    #[test]
    fn normalize_constant_volume_is_flagged() {
        let n = normalize_volume(&vol([2, 2, 2], vec![0.0; 8]));
        assert!(n.degenerate);
        assert!(n.volume.voxels.iter().all(|&x| x == 0.0));
        let n = normalize_volume(&vol([1, 1, 3], vec![7.5; 3]));
        assert!(n.degenerate);
        assert_eq!(n.volume.voxels, vec![0.0; 3]);
    }

    #[test]
    fn normalize_is_idempotent() {
        let raw: Vec<f32> = (0..64)
            .map(|i| ((i * 37) % 11) as f32 * 0.3 - 1.0)
            .collect();
        let once = normalize_volume(&vol([4, 4, 4], raw)).volume;
        let twice = normalize_volume(&once).volume;
        for (a, b) in once.voxels.iter().zip(&twice.voxels) {
            assert!((a - b).abs() < 1e-5);
        }
    }

    #[test]
    fn rejects_bad_shapes() {
        assert!(Volume::new("a", [0, 1, 1], vec![]).is_err());
        assert!(Volume::new("a", [2, 1, 1], vec![1.0]).is_err());
        assert!(matches!(
            Volume::new("a", [1, 1, 1], vec![f32::NAN]),
            Err(Error::NonFinite(_))
        ));
    }

    #[test]
    fn file_layout_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("v.vol");
        let v = vol([1, 2, 3], vec![0.5, -1.0, 2.0, 3.25, 0.0, 1e-3]);
        write_volume(&p, &v).unwrap();
        let bytes = fs::read(&p).unwrap();
        assert_eq!(bytes.len(), 16 + 12 + 24);
        assert_eq!(&bytes[..16], b"SUBSCOREVOL\0\0\0\0\0");
        assert_eq!(&bytes[16..20], &1u32.to_le_bytes());
        assert_eq!(&bytes[20..24], &2u32.to_le_bytes());
        assert_eq!(&bytes[24..28], &3u32.to_le_bytes());
        assert_eq!(&bytes[28..32], &0.5f32.to_le_bytes());
        let back = read_volume(&p).unwrap();
        assert_eq!(back.dims, v.dims);
        assert_eq!(back.voxels, v.voxels);
    }

    #[test]
    fn truncated_file_is_rejected() {
        let mut bytes = VOLUME_MAGIC.to_vec();
        for d in [2u32, 2, 2] {
            bytes.extend_from_slice(&d.to_le_bytes());
        }
        bytes.extend_from_slice(&1.0f32.to_le_bytes());
        assert!(parse_volume(&bytes).is_err());
        assert!(parse_volume(b"NOTAVOLUME").is_err());
    }
}
