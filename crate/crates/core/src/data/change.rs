//! Bi-temporal rectangle scenes with appearing, vanishing and moving objects.

use serde::{Deserialize, Serialize};

use super::quantize;
use crate::error::{Error, Result};
use crate::model::SamplePair;
use crate::tensor::{Rng, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChangeSceneSpec {
    pub height: usize,
    pub width: usize,
    pub n_rects: usize,
    /// Probability that a rectangle takes part in a change event.
    pub change_prob: f64,
    pub min_side: usize,
    pub max_side: usize,
    /// Background noise band, shared by both images.
    pub background: (f32, f32),
    /// Rectangle intensity band, disjoint from the background band.
    pub foreground: (f32, f32),
    /// Standard deviation of independent per-image noise.
    pub sensor_noise: f32,
    pub seed: u64,
}

impl Default for ChangeSceneSpec {
    fn default() -> Self {
        Self {
            height: 64,
            width: 64,
            n_rects: 6,
            change_prob: 0.4,
            min_side: 8,
            max_side: 20,
            background: (0.0, 0.35),
            foreground: (0.55, 1.0),
            sensor_noise: 0.03,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Rect {
    pub y: usize,
    pub x: usize,
    pub h: usize,
    pub w: usize,
}

impl Rect {
    pub fn contains(&self, y: usize, x: usize) -> bool {
        y >= self.y && y < self.y + self.h && x >= self.x && x < self.x + self.w
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChangeEvent {
    Unchanged,
    /// Present only in the second image.
    Appear,
    /// Present only in the first image.
    Vanish,
    /// Present in both, at a different place in the second image.
    Move(Rect),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneObject {
    pub rect: Rect,
    pub value: f32,
    pub event: ChangeEvent,
}

impl ChangeSceneSpec {
    pub fn validate(&self) -> Result<()> {
        if self.height < 4 || self.width < 4 {
            return Err(Error::invalid(format!("scene {}×{} is too small", self.height, self.width)));
        }
        if self.min_side == 0 || self.min_side > self.max_side || self.max_side > self.height.min(self.width) {
            return Err(Error::invalid("rectangle sides must satisfy 1 <= min_side <= max_side <= scene size"));
        }
        if !(0.0..=1.0).contains(&self.change_prob) {
            return Err(Error::invalid("change_prob must lie in [0, 1]"));
        }
        let (b, f) = (self.background, self.foreground);
        if !(0.0 <= b.0 && b.0 <= b.1 && b.1 < f.0 && f.0 <= f.1 && f.1 <= 1.0) {
            return Err(Error::invalid("background and foreground bands must be ordered, disjoint and inside [0, 1]"));
        }
        Ok(())
    }

    fn random_rect(&self, rng: &mut Rng) -> Rect {
        let h = self.min_side + rng.below(self.max_side - self.min_side + 1);
        let w = self.min_side + rng.below(self.max_side - self.min_side + 1);
        Rect {
            y: rng.below(self.height - h + 1),
            x: rng.below(self.width - w + 1),
            h,
            w,
        }
    }

    /// Objects and their change events for sample `index`.
    pub fn objects(&self, index: u64) -> Vec<SceneObject> {
        let mut rng = Rng::new(self.seed).fork(index).fork(0);
        (0..self.n_rects)
            .map(|_| {
                let rect = self.random_rect(&mut rng);
                let value = rng.range(self.foreground.0 as f64, self.foreground.1 as f64) as f32;
                let event = if rng.bernoulli(self.change_prob) {
                    match rng.below(3) {
                        0 => ChangeEvent::Appear,
                        1 => ChangeEvent::Vanish,
                        _ => loop {
                            let to = Rect { y: rng.below(self.height - rect.h + 1), x: rng.below(self.width - rect.w + 1), ..rect };
                            if to != rect {
                                break ChangeEvent::Move(to);
                            }
                        },
                    }
                } else {
                    ChangeEvent::Unchanged
                };
                SceneObject { rect, value, event }
            })
            .collect()
    }

    /// Noise-free renders of both epochs: unchanged objects first, changed
    /// objects on top, in generation order.
    pub fn render(&self, objects: &[SceneObject], background: &[f32]) -> (Vec<f32>, Vec<f32>) {
        let mut a = background.to_vec();
        let mut b = background.to_vec();
        let paint = |img: &mut [f32], r: &Rect, v: f32| {
            for y in r.y..r.y + r.h {
                for x in r.x..r.x + r.w {
                    img[y * self.width + x] = v;
                }
            }
        };
        let (still, moving): (Vec<_>, Vec<_>) = objects.iter().partition(|o| o.event == ChangeEvent::Unchanged);
        for o in still.into_iter().chain(moving) {
            match o.event {
                ChangeEvent::Unchanged => {
                    paint(&mut a, &o.rect, o.value);
                    paint(&mut b, &o.rect, o.value);
                }
                ChangeEvent::Appear => paint(&mut b, &o.rect, o.value),
                ChangeEvent::Vanish => paint(&mut a, &o.rect, o.value),
                ChangeEvent::Move(to) => {
                    paint(&mut a, &o.rect, o.value);
                    paint(&mut b, &to, o.value);
                }
            }
        }
        (a, b)
    }

    pub fn generate(&self, index: u64) -> Result<SamplePair> {
        self.validate()?;
        let (h, w) = (self.height, self.width);
        let objects = self.objects(index);
        let mut rng = Rng::new(self.seed).fork(index).fork(1);
        let background: Vec<f32> = (0..h * w)
            .map(|_| rng.range(self.background.0 as f64, self.background.1 as f64) as f32)
            .collect();
        let (clean1, clean2) = self.render(&objects, &background);
        let mask: Vec<f32> = clean1.iter().zip(&clean2).map(|(a, b)| if a != b { 1.0 } else { 0.0 }).collect();
        let mut noisy = |clean: &[f32]| -> Vec<f32> {
            clean
                .iter()
                .map(|&v| {
                    let n = if self.sensor_noise > 0.0 { rng.normal() as f32 * self.sensor_noise } else { 0.0 };
                    quantize((v + n).clamp(0.0, 1.0))
                })
                .collect()
        };
        let img1 = noisy(&clean1);
        let img2 = noisy(&clean2);
        SamplePair::new(
            Tensor::new(&[h, w, 1], img1)?,
            Tensor::new(&[h, w, 1], img2)?,
            Tensor::new(&[h, w], mask)?,
        )
    }
}

/// `index`-th pair of the scene family described by `spec`.
pub fn gen_change_pair(spec: &ChangeSceneSpec, index: u64) -> Result<SamplePair> {
    spec.generate(index)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn no_changes_means_empty_mask_and_equal_images() {
        let spec = ChangeSceneSpec {
            change_prob: 0.0,
            sensor_noise: 0.0,
            ..Default::default()
        };
        for i in 0..5 {
            let s = spec.generate(i).unwrap();
            assert!(s.target.data().iter().all(|&v| v == 0.0));
            assert_eq!(s.img1, s.img2);
        }
    }

    #[test]
    fn single_rectangle_mask_is_its_footprint_difference() {
        let spec = ChangeSceneSpec {
            n_rects: 1,
            change_prob: 1.0,
            ..Default::default()
        };
        for i in 0..30 {
            let objs = spec.objects(i);
            let o = &objs[0];
            let s = spec.generate(i).unwrap();
            for y in 0..64 {
                for x in 0..64 {
                    let want = match o.event {
                        ChangeEvent::Appear | ChangeEvent::Vanish => o.rect.contains(y, x),
                        ChangeEvent::Move(to) => o.rect.contains(y, x) != to.contains(y, x),
                        ChangeEvent::Unchanged => unreachable!(),
                    };
                    assert_eq!(s.target.at(&[y, x]) == 1.0, want, "sample {i} at ({y}, {x})");
                }
            }
        }
    }

    #[test]
    fn same_seed_same_bits() {
        let spec = ChangeSceneSpec { seed: 9, ..Default::default() };
        assert_eq!(spec.generate(3).unwrap(), spec.generate(3).unwrap());
        assert_ne!(spec.generate(3).unwrap(), spec.generate(4).unwrap());
    }

    #[test]
    fn any_event_leaves_a_mark() {
        let spec = ChangeSceneSpec { change_prob: 0.5, n_rects: 8, ..Default::default() };
        for i in 0..200 {
            let fired = spec.objects(i).iter().any(|o| o.event != ChangeEvent::Unchanged);
            let area: f32 = spec.generate(i).unwrap().target.sum();
            assert_eq!(fired, area > 0.0, "sample {i}");
        }
    }

    #[test]
    fn rejects_bad_specs() {
        assert!(ChangeSceneSpec { height: 2, ..Default::default() }.validate().is_err());
        assert!(ChangeSceneSpec { background: (0.0, 0.7), ..Default::default() }.validate().is_err());
        assert!(ChangeSceneSpec { min_side: 30, max_side: 10, ..Default::default() }.validate().is_err());
    }
}
