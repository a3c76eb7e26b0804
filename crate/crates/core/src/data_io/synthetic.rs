//! Synthetic labeled phantoms standing in for real fMRI volumes.
//!
//! Each volume is `baseline + blob + subject field + noise`:
//!
//! - the blob is an isotropic Gaussian of height `amplitude` whose center
//!   depends on the stimulus (faces left, objects right; subcategories split
//!   along the second axis), shifted by a small per-subject jitter;
//! - the subject field is a per-subject offset plus a weak linear gradient;
//! - the noise is i.i.d. Gaussian with std `noise_sigma`.
//!
//! Every subject and every volume draws from its own derived RNG stream, so
//! changing `noise_sigma` never changes the blob or subject structure.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::dataset::{Stimulus, VolumeRecord};
use crate::error::{Error, Result};
use crate::tensor::{derive_seed, Rng, Tensor};

pub const MIN_EXTENT: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub n_subjects: usize,
    pub volumes_per_class: usize,
    pub shape: [usize; 3],
    pub baseline: f64,
    pub amplitude: f64,
    /// Blob standard deviation in voxels.
    pub blob_sigma: f64,
    pub noise_sigma: f64,
    /// Std of the per-subject additive offset.
    pub subject_bias: f64,
    /// Std of each component of the per-subject linear gradient, expressed
    /// as the change across the full extent of that axis.
    pub subject_gradient: f64,
    /// Std of the per-subject blob displacement, in voxels.
    pub center_jitter: f64,
    /// Blob center per stimulus as fractions of each extent.
    pub centers: BTreeMap<Stimulus, [f64; 3]>,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            n_subjects: 10,
            volumes_per_class: 40,
            shape: [24, 24, 24],
            baseline: 1.0,
            amplitude: 0.5,
            blob_sigma: 3.0,
            noise_sigma: 1.0,
            subject_bias: 0.2,
            subject_gradient: 0.05,
            center_jitter: 0.75,
            centers: default_centers(),
            seed: 0,
        }
    }
}

pub fn default_centers() -> BTreeMap<Stimulus, [f64; 3]> {
    BTreeMap::from([
        (Stimulus::MaleFace, [0.3, 0.3, 0.5]),
        (Stimulus::FemaleFace, [0.3, 0.7, 0.5]),
        (Stimulus::NaturalObject, [0.7, 0.3, 0.5]),
        (Stimulus::ArtificialObject, [0.7, 0.7, 0.5]),
    ])
}

/// Subject identifier for index `i` of `n`, zero-padded to a common width.
pub fn subject_id(i: usize, n: usize) -> String {
    let width = n.saturating_sub(1).to_string().len().max(2);
    format!("s{i:0width$}")
}

struct SubjectField {
    offset: f64,
    gradient: [f64; 3],
    jitter: [f64; 3],
}

fn stimulus_index(s: Stimulus) -> u64 {
    Stimulus::ALL.iter().position(|&t| t == s).expect("listed") as u64
}

/// Generates `n_subjects × 4 × volumes_per_class` records ordered by
/// subject, then stimulus, then repetition.
pub fn generate_synthetic_dataset(cfg: &SyntheticConfig) -> Result<Vec<VolumeRecord>> {
    if cfg.shape.iter().any(|&e| e < MIN_EXTENT) {
        return Err(Error::BadShape {
            shape: cfg.shape.to_vec(),
            reason: format!("every extent must be at least {MIN_EXTENT}"),
        });
    }
    if cfg.n_subjects == 0 || cfg.volumes_per_class == 0 {
        return Err(Error::InvalidConfig("need at least one subject and one volume per class".into()));
    }
    for (name, v) in [
        ("noise_sigma", cfg.noise_sigma),
        ("blob_sigma", cfg.blob_sigma),
        ("subject_bias", cfg.subject_bias),
        ("subject_gradient", cfg.subject_gradient),
        ("center_jitter", cfg.center_jitter),
    ] {
        if !(v >= 0.0 && v.is_finite()) {
            return Err(Error::InvalidConfig(format!("{name} must be finite and non-negative, got {v}")));
        }
    }
    if cfg.blob_sigma == 0.0 {
        return Err(Error::InvalidConfig("blob_sigma must be positive".into()));
    }
    if let Some(s) = Stimulus::ALL.iter().find(|s| !cfg.centers.contains_key(s)) {
        return Err(Error::InvalidConfig(format!("no blob center for stimulus {s}")));
    }

    let [h, w, d] = cfg.shape;
    let root = Rng::new(cfg.seed);
    let mut records = Vec::with_capacity(cfg.n_subjects * 4 * cfg.volumes_per_class);
    for si in 0..cfg.n_subjects {
        let subject = subject_id(si, cfg.n_subjects);
        let mut srng = root.derive(2 * si as u64);
        let field = SubjectField {
            offset: cfg.subject_bias * srng.normal(),
            gradient: std::array::from_fn(|_| cfg.subject_gradient * srng.normal()),
            jitter: std::array::from_fn(|_| cfg.center_jitter * srng.normal()),
        };
        let noise_root = derive_seed(cfg.seed, 2 * si as u64 + 1);

        // Structure shared by every volume of (subject, stimulus); only the
        // noise differs between repetitions.
        for stimulus in Stimulus::ALL {
            let frac = cfg.centers[&stimulus];
            let center: [f64; 3] =
                std::array::from_fn(|a| frac[a] * (cfg.shape[a] - 1) as f64 + field.jitter[a]);
            let inv_two_var = 1.0 / (2.0 * cfg.blob_sigma * cfg.blob_sigma);
            let mut clean = Vec::with_capacity(h * w * d);
            for z in 0..h {
                for y in 0..w {
                    for x in 0..d {
                        let p = [z as f64, y as f64, x as f64];
                        let r2: f64 = (0..3).map(|a| (p[a] - center[a]).powi(2)).sum();
                        let blob = cfg.amplitude * (-r2 * inv_two_var).exp();
                        let bias: f64 = field.offset
                            + (0..3)
                                .map(|a| field.gradient[a] * (p[a] / (cfg.shape[a] - 1) as f64 - 0.5))
                                .sum::<f64>();
                        clean.push(cfg.baseline + blob + bias);
                    }
                }
            }
            let stim_seed = derive_seed(noise_root, stimulus_index(stimulus));
            for rep in 0..cfg.volumes_per_class {
                let mut nrng = Rng::new(derive_seed(stim_seed, rep as u64));
                let data: Vec<f32> = clean
                    .iter()
                    .map(|&c| {
                        let noise = if cfg.noise_sigma > 0.0 { cfg.noise_sigma * nrng.normal() } else { 0.0 };
                        (c + noise) as f32
                    })
                    .collect();
                records.push(VolumeRecord {
                    id: format!("{subject}-{stimulus}-{rep:03}"),
                    volume: Tensor::from_vec(&cfg.shape, data)?,
                    label: None,
                    subject: subject.clone(),
                    stimulus,
                    averaged_from: 1,
                });
            }
        }
    }
    Ok(records)
}
