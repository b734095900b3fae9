use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{default_vocabulary, LabelSet, Tuple, TupleDataset};
use crate::config::{join_list, KvConfig, KvMap};
use crate::error::{Error, Result};

/// Latent-factor generator for paired multi-sensor data.
///
/// Each class owns a fixed prototype in a latent space. A tuple's latent
/// vector is the sum of its classes' prototypes plus isotropic jitter; each
/// modality observes it through its own fixed random linear map followed by
/// `tanh` and additive Gaussian noise.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub num_classes: usize,
    pub multi_label: bool,
    /// Inclusive range of labels per tuple when `multi_label` is set.
    pub labels_min: usize,
    pub labels_max: usize,
    pub latent_dim: usize,
    pub input_dims: Vec<usize>,
    pub noise_sigma: f64,
    /// Standard deviation of the per-tuple latent jitter.
    pub latent_jitter: f64,
    pub num_tuples: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            num_classes: 8,
            multi_label: false,
            labels_min: 1,
            labels_max: 3,
            latent_dim: 16,
            input_dims: vec![32, 32],
            noise_sigma: 0.1,
            latent_jitter: 0.3,
            num_tuples: 2000,
            seed: 0,
        }
    }
}

impl KvConfig for SynthConfig {
    fn apply(&mut self, kv: &mut KvMap) -> Result<()> {
        kv.take("num_classes", &mut self.num_classes)?;
        kv.take("multi_label", &mut self.multi_label)?;
        kv.take("labels_min", &mut self.labels_min)?;
        kv.take("labels_max", &mut self.labels_max)?;
        kv.take("latent_dim", &mut self.latent_dim)?;
        kv.take_list("input_dims", &mut self.input_dims)?;
        kv.take("noise_sigma", &mut self.noise_sigma)?;
        kv.take("latent_jitter", &mut self.latent_jitter)?;
        kv.take("num_tuples", &mut self.num_tuples)?;
        kv.take("seed", &mut self.seed)?;
        Ok(())
    }

    fn to_kv(&self) -> KvMap {
        let mut kv = KvMap::new();
        kv.insert("num_classes", self.num_classes);
        kv.insert("multi_label", self.multi_label);
        kv.insert("labels_min", self.labels_min);
        kv.insert("labels_max", self.labels_max);
        kv.insert("latent_dim", self.latent_dim);
        kv.insert("input_dims", join_list(&self.input_dims));
        kv.insert("noise_sigma", self.noise_sigma);
        kv.insert("latent_jitter", self.latent_jitter);
        kv.insert("num_tuples", self.num_tuples);
        kv.insert("seed", self.seed);
        kv
    }

    fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::config("num_classes", "need at least 2 classes"));
        }
        if self.num_tuples < 10 {
            return Err(Error::config("num_tuples", "need at least 10 tuples"));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::config("noise_sigma", "must be finite and >= 0"));
        }
        if !(self.latent_jitter >= 0.0 && self.latent_jitter.is_finite()) {
            return Err(Error::config("latent_jitter", "must be finite and >= 0"));
        }
        if self.latent_dim == 0 {
            return Err(Error::config("latent_dim", "must be positive"));
        }
        if self.input_dims.len() < 2 || self.input_dims.contains(&0) {
            return Err(Error::config(
                "input_dims",
                "need at least 2 positive modality widths",
            ));
        }
        if self.multi_label
            && !(1 <= self.labels_min
                && self.labels_min <= self.labels_max
                && self.labels_max <= self.num_classes)
        {
            return Err(Error::config(
                "labels_max",
                "label count range must satisfy 1 <= labels_min <= labels_max <= num_classes",
            ));
        }
        Ok(())
    }
}

fn gaussian(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            z * scale
        })
        .collect()
}

pub fn generate_synthetic(config: &SynthConfig) -> Result<TupleDataset> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let latent = config.latent_dim;

    let prototypes: Vec<Vec<f64>> = (0..config.num_classes)
        .map(|_| gaussian(&mut rng, latent, 1.0))
        .collect();
    // maps[j] is input_dims[j] x latent, row-major
    let map_scale = 1.0 / (latent as f64).sqrt();
    let maps: Vec<Vec<f64>> = config
        .input_dims
        .iter()
        .map(|&d| gaussian(&mut rng, d * latent, map_scale))
        .collect();

    let mut tuples = Vec::with_capacity(config.num_tuples);
    for id in 0..config.num_tuples {
        let labels: LabelSet = if config.multi_label {
            let count = rng.random_range(config.labels_min..=config.labels_max);
            sample(&mut rng, config.num_classes, count)
                .into_iter()
                .map(|c| c as u32)
                .collect()
        } else {
            std::iter::once(rng.random_range(0..config.num_classes) as u32).collect()
        };

        let mut z = gaussian(&mut rng, latent, config.latent_jitter);
        for &c in &labels {
            z.iter_mut()
                .zip(&prototypes[c as usize])
                .for_each(|(a, p)| *a += p);
        }

        let views = config
            .input_dims
            .iter()
            .zip(&maps)
            .map(|(&d, map)| {
                let noise = gaussian(&mut rng, d, config.noise_sigma);
                map.chunks(latent)
                    .zip(noise)
                    .map(|(row, eps)| crate::tensor::dot(row, &z).tanh() + eps)
                    .collect()
            })
            .collect();

        tuples.push(Tuple {
            id: id as u64,
            labels,
            views,
        });
    }

    TupleDataset::new(
        config.input_dims.clone(),
        default_vocabulary(config.num_classes),
        tuples,
    )
}
