//! Paired visible / thermal crowd scenes with a per-pixel density target.

use serde::{Deserialize, Serialize};

use super::quantize;
use crate::error::{Error, Result};
use crate::model::SamplePair;
use crate::tensor::{Rng, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Illumination {
    Bright,
    Dark,
}

/// Contrast factor applied to the visible image in dark scenes.
pub const DARK_CONTRAST: f32 = 0.15;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DensitySceneSpec {
    pub height: usize,
    pub width: usize,
    /// People per scene are drawn uniformly from this inclusive range.
    pub n_people: (usize, usize),
    pub gaussian_sigma: f64,
    /// Probability of a dark scene.
    pub dark_prob: f64,
    pub sensor_noise: f32,
    pub seed: u64,
}

impl Default for DensitySceneSpec {
    fn default() -> Self {
        Self {
            height: 64,
            width: 64,
            n_people: (0, 30),
            gaussian_sigma: 1.5,
            dark_prob: 0.5,
            sensor_noise: 0.02,
            seed: 0,
        }
    }
}

/// Gaussian bump centred at `(cy, cx)`, renormalised to unit mass over the
/// pixels inside the grid.
pub fn unit_gaussian(h: usize, w: usize, cy: f64, cx: f64, sigma: f64) -> Vec<f64> {
    let mut g: Vec<f64> = (0..h * w)
        .map(|i| {
            let (y, x) = ((i / w) as f64 + 0.5, (i % w) as f64 + 0.5);
            (-((y - cy).powi(2) + (x - cx).powi(2)) / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let s: f64 = g.iter().sum();
    if s > 0.0 {
        g.iter_mut().for_each(|v| *v /= s);
    }
    g
}

impl DensitySceneSpec {
    pub fn validate(&self) -> Result<()> {
        if self.height < 4 || self.width < 4 {
            return Err(Error::invalid(format!("scene {}×{} is too small", self.height, self.width)));
        }
        if self.n_people.0 > self.n_people.1 {
            return Err(Error::invalid("n_people range is empty"));
        }
        if !(self.gaussian_sigma > 0.0) || !(0.0..=1.0).contains(&self.dark_prob) {
            return Err(Error::invalid("gaussian_sigma must be > 0 and dark_prob in [0, 1]"));
        }
        Ok(())
    }

    /// Scene `index` with explicit people count and lighting.
    pub fn generate_with(&self, index: u64, people: usize, light: Illumination) -> Result<SamplePair> {
        self.validate()?;
        let (h, w) = (self.height, self.width);
        let mut rng = Rng::new(self.seed).fork(index).fork(1);
        let points: Vec<(f64, f64)> = (0..people)
            .map(|_| (rng.range(0.0, h as f64), rng.range(0.0, w as f64)))
            .collect();

        let mut density = vec![0.0f64; h * w];
        let mut blobs = vec![0.0f64; h * w];
        for &(cy, cx) in &points {
            let g = unit_gaussian(h, w, cy, cx, self.gaussian_sigma);
            let peak = g.iter().cloned().fold(0.0, f64::max);
            for i in 0..h * w {
                density[i] += g[i];
                blobs[i] += g[i] / peak;
            }
        }
        // visible: smooth gradient plus texture with bright figures; thermal: cool
        // flat background with warm figures regardless of lighting
        let (gy, gx) = (rng.range(-0.2, 0.2), rng.range(-0.2, 0.2));
        let mut visible = Vec::with_capacity(h * w);
        let mut thermal = Vec::with_capacity(h * w);
        for i in 0..h * w {
            let (y, x) = ((i / w) as f64 / h as f64, (i % w) as f64 / w as f64);
            let base = 0.4 + gy * y + gx * x + rng.range(-0.15, 0.15);
            let mut v = (base + 0.5 * blobs[i].min(1.0)) as f32;
            if light == Illumination::Dark {
                v *= DARK_CONTRAST;
            }
            v += rng.normal() as f32 * self.sensor_noise;
            visible.push(quantize(v.clamp(0.0, 1.0)));
            let t = 0.1 + 0.8 * blobs[i].min(1.0) + rng.normal() * self.sensor_noise as f64;
            thermal.push(quantize((t as f32).clamp(0.0, 1.0)));
        }
        SamplePair::new(
            Tensor::new(&[h, w, 1], visible)?,
            Tensor::new(&[h, w, 1], thermal)?,
            Tensor::new(&[h, w], density.into_iter().map(|v| v as f32).collect())?,
        )
    }

    pub fn generate(&self, index: u64) -> Result<SamplePair> {
        let mut rng = Rng::new(self.seed).fork(index).fork(0);
        let people = self.n_people.0 + rng.below(self.n_people.1 - self.n_people.0 + 1);
        let light = if rng.bernoulli(self.dark_prob) { Illumination::Dark } else { Illumination::Bright };
        self.generate_with(index, people, light)
    }
}

pub fn gen_density_pair(spec: &DensitySceneSpec, index: u64) -> Result<SamplePair> {
    spec.generate(index)
}
