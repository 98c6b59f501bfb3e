//! Synthetic cohorts standing in for access-gated scan data.
//!
//! Each subject carries a latent atrophy value drawn per group. The latent
//! darkens a central (medial) region of an otherwise ellipsoidal volume and
//! drives every item score through a per-item loading chosen so that the
//! item/global correlation matches a target for large cohorts.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use super::cohort::{write_manifest, Cohort, Group, Provenance, Sex, SubjectRecord};
use super::scores::{ScoreVector, DEFAULT_MAXIMA};
use super::volume::{write_volume, Volume};
use crate::error::{Error, Result};
use crate::N_TASKS;

/// Item/global Pearson correlations observed on the reference cohort;
/// Q4 (0.84), Q1 (0.77) and Q8 (0.70) dominate.
pub const REFERENCE_ITEM_CORRELATIONS: [f64; N_TASKS] = [
    0.77, 0.13, 0.16, 0.84, 0.20, 0.04, 0.34, 0.70, 0.14, 0.12, 0.19, 0.02, 0.35,
];

/// Item standard deviations reported alongside those correlations; used as
/// the per-item score scale.
pub const REFERENCE_ITEM_SD: [f64; N_TASKS] = [
    1.34, 0.28, 0.52, 2.11, 0.26, 0.23, 0.46, 2.24, 0.09, 0.09, 0.32, 0.12, 0.80,
];

/// Upper bound on the global score of a retained subject.
pub const MAX_GLOBAL: f64 = 20.0;

const ATROPHY_MEAN_CN: f64 = 2.0;
const ATROPHY_MEAN_MCI: f64 = 3.2;
// item mean = MEAN_PER_SD * item sd; puts the cohort global mean near 10.6
const MEAN_PER_SD: f64 = 1.2;
const MEDIAL_DEPRESSION: f64 = 0.12;
const VOXEL_NOISE: f64 = 0.05;
const MAX_REDRAWS: usize = 10_000;

#[derive(Debug, Clone)]
pub struct SynthConfig {
    pub n_cn: usize,
    pub n_mci: usize,
    pub dims: [usize; 3],
    pub seed: u64,
    pub corr_targets: [f64; N_TASKS],
    pub item_sd: [f64; N_TASKS],
    pub maxima: [f64; N_TASKS],
    /// Dims must be divisible by this.
    pub patch_size: usize,
}

impl SynthConfig {
    pub fn new(n_cn: usize, n_mci: usize, seed: u64) -> Self {
        SynthConfig {
            n_cn,
            n_mci,
            dims: [32, 32, 32],
            seed,
            corr_targets: REFERENCE_ITEM_CORRELATIONS,
            item_sd: REFERENCE_ITEM_SD,
            maxima: DEFAULT_MAXIMA,
            patch_size: 8,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.patch_size == 0 {
            return Err(Error::Config("patch size must be positive".into()));
        }
        if self
            .dims
            .iter()
            .any(|&d| d == 0 || d % self.patch_size != 0)
        {
            return Err(Error::Config(format!(
                "dims {:?} must be positive multiples of patch size {}",
                self.dims, self.patch_size
            )));
        }
        if self.corr_targets.iter().any(|r| !(-1.0..=1.0).contains(r)) {
            return Err(Error::Config(
                "correlation targets must lie in [-1, 1]".into(),
            ));
        }
        if self.item_sd.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(Error::Config("item scales must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticCohort {
    pub cohort: Cohort,
    /// Raw (unnormalized) volumes, parallel to `cohort.subjects`.
    pub volumes: Vec<Volume>,
}

/// Item/global correlations implied by loadings `rho` and scales `sd`
/// when the latent and the item noises are independent standard normals
/// (no clamping).
pub fn implied_correlations(rho: &[f64; N_TASKS], sd: &[f64; N_TASKS]) -> [f64; N_TASKS] {
    let s: f64 = sd.iter().zip(rho).map(|(s, r)| s * r).sum();
    let var_g = s * s
        + sd.iter()
            .zip(rho)
            .map(|(s, r)| s * s * (1.0 - r * r))
            .sum::<f64>();
    let sd_g = var_g.sqrt();
    std::array::from_fn(|j| {
        (sd[j] * rho[j] * s + sd[j] * sd[j] * (1.0 - rho[j] * rho[j])) / (sd[j] * sd_g)
    })
}

/// Solves for item loadings in [-1, 1] whose implied correlations match
/// `targets`, by coordinate-wise bisection sweeps. Unreachable targets
/// saturate at the nearest end.
pub fn solve_loadings(targets: &[f64; N_TASKS], sd: &[f64; N_TASKS]) -> [f64; N_TASKS] {
    let mut rho = *targets;
    for _ in 0..200 {
        let prev = rho;
        for j in 0..N_TASKS {
            let corr_at = |x: f64, rho: &mut [f64; N_TASKS]| {
                rho[j] = x;
                implied_correlations(rho, sd)[j] - targets[j]
            };
            let (mut lo, mut hi) = (-1.0, 1.0);
            let f_lo = corr_at(lo, &mut rho);
            let f_hi = corr_at(hi, &mut rho);
            if f_lo >= 0.0 {
                rho[j] = lo;
                continue;
            }
            if f_hi <= 0.0 {
                rho[j] = hi;
                continue;
            }
            for _ in 0..80 {
                let mid = 0.5 * (lo + hi);
                if corr_at(mid, &mut rho) < 0.0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            rho[j] = 0.5 * (lo + hi);
        }
        if rho.iter().zip(&prev).all(|(a, b)| (a - b).abs() < 1e-13) {
            break;
        }
    }
    rho
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

struct Latent {
    mean: f64,
    sd: f64,
}

/// Draws the synthetic cohort. Subject `i` uses its own ChaCha stream, so
/// output is independent of thread count.
pub fn generate_synthetic_cohort(cfg: &SynthConfig) -> Result<SyntheticCohort> {
    cfg.validate()?;
    let n = cfg.n_cn + cfg.n_mci;
    let rho = solve_loadings(&cfg.corr_targets, &cfg.item_sd);
    let means: [f64; N_TASKS] = std::array::from_fn(|j| MEAN_PER_SD * cfg.item_sd[j]);
    let latent = if n == 0 {
        Latent { mean: 0.0, sd: 1.0 }
    } else {
        let p = cfg.n_mci as f64 / n as f64;
        let delta = ATROPHY_MEAN_MCI - ATROPHY_MEAN_CN;
        Latent {
            mean: ATROPHY_MEAN_CN + p * delta,
            sd: (1.0 + p * (1.0 - p) * delta * delta).sqrt(),
        }
    };

    let drawn: Vec<Result<(SubjectRecord, Volume)>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let group = if i < cfg.n_cn { Group::CN } else { Group::MCI };
            draw_subject(cfg, i, group, &rho, &means, &latent)
        })
        .collect();
    let mut subjects = Vec::with_capacity(n);
    let mut volumes = Vec::with_capacity(n);
    for d in drawn {
        let (s, v) = d?;
        subjects.push(s);
        volumes.push(v);
    }
    let cohort = Cohort::new(subjects, Provenance::Synthetic, cfg.maxima, PathBuf::new())?;
    Ok(SyntheticCohort { cohort, volumes })
}

fn draw_subject(
    cfg: &SynthConfig,
    index: usize,
    group: Group,
    rho: &[f64; N_TASKS],
    means: &[f64; N_TASKS],
    latent: &Latent,
) -> Result<(SubjectRecord, Volume)> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(index as u64);
    let subject_id = format!("S{:04}", index + 1);

    let (age_mean, age_sd, p_male) = match group {
        Group::CN => (76.0, 5.2, 83.0 / 163.0),
        Group::MCI => (75.0, 7.3, 64.0 / 95.0),
    };
    let age = ((age_mean + age_sd * normal(&mut rng)) * 10.0).round() / 10.0;
    let sex = if rng.random::<f64>() < p_male {
        Sex::M
    } else {
        Sex::F
    };

    let group_mean = match group {
        Group::CN => ATROPHY_MEAN_CN,
        Group::MCI => ATROPHY_MEAN_MCI,
    };
    let mut accepted = None;
    for _ in 0..MAX_REDRAWS {
        let a = group_mean + normal(&mut rng);
        let z = (a - latent.mean) / latent.sd;
        let q: [f64; N_TASKS] = std::array::from_fn(|j| {
            let e = normal(&mut rng);
            let raw = means[j] + cfg.item_sd[j] * (rho[j] * z + (1.0 - rho[j] * rho[j]).sqrt() * e);
            raw.clamp(0.0, cfg.maxima[j])
        });
        if q.iter().sum::<f64>() <= MAX_GLOBAL {
            accepted = Some((a, q));
            break;
        }
    }
    let (atrophy, q) = accepted
        .ok_or_else(|| Error::Data(format!("{subject_id}: no draw with global <= {MAX_GLOBAL}")))?;
    let scores_m24 = ScoreVector::new(q, cfg.maxima)?;

    let volume = draw_volume(&subject_id, cfg.dims, atrophy, &mut rng)?;
    let record = SubjectRecord {
        volume_path: format!("volumes/{subject_id}.vol"),
        subject_id,
        group,
        age,
        sex,
        scores_m24,
    };
    Ok((record, volume))
}

fn draw_volume(id: &str, dims: [usize; 3], atrophy: f64, rng: &mut ChaCha8Rng) -> Result<Volume> {
    let [d, h, w] = dims;
    let medial = 1.0 - MEDIAL_DEPRESSION * atrophy.max(0.0);
    let mut voxels = Vec::with_capacity(d * h * w);
    let coord = |i: usize, n: usize| (i as f64 + 0.5) / n as f64 * 2.0 - 1.0;
    for zi in 0..d {
        let u = coord(zi, d);
        for yi in 0..h {
            let v = coord(yi, h);
            for xi in 0..w {
                let x = coord(xi, w);
                let r2 = u * u + v * v + x * x;
                let base = if r2 <= 0.0625 {
                    medial
                } else if r2 <= 0.64 {
                    1.0
                } else {
                    0.1
                };
                voxels.push((base + VOXEL_NOISE * normal(rng)) as f32);
            }
        }
    }
    Volume::new(id, dims, voxels)
}

/// Writes `manifest.csv` and `volumes/*.vol` under `dir`; returns the cohort
/// re-rooted at `dir`.
pub fn write_synthetic_cohort(dir: &Path, synth: &SyntheticCohort) -> Result<Cohort> {
    let vol_dir = dir.join("volumes");
    fs::create_dir_all(&vol_dir).map_err(|e| Error::io(&vol_dir, e))?;
    synth
        .cohort
        .subjects
        .par_iter()
        .zip(&synth.volumes)
        .try_for_each(|(s, v)| write_volume(&dir.join(&s.volume_path), v))?;
    let mut cohort = synth.cohort.clone();
    cohort.base_dir = dir.to_path_buf();
    write_manifest(&dir.join("manifest.csv"), &cohort)?;
    Ok(cohort)
}
