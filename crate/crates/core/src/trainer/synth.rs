//! Deterministic four-class shape images.

use rand::Rng;

use crate::error::Result;
use crate::tensor::{mix_seed, seeded_rng};
use crate::trainer::Dataset;

/// Side length of generated images.
pub const SYNTH_SIZE: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShapeClass {
    Bar,
    Cross,
    Blob,
    Ring,
}

impl ShapeClass {
    pub const ALL: [ShapeClass; 4] = [ShapeClass::Bar, ShapeClass::Cross, ShapeClass::Blob, ShapeClass::Ring];

    /// The class of image `i`: classes cycle in declaration order.
    pub fn of_index(i: usize) -> ShapeClass {
        Self::ALL[i % 4]
    }

    pub fn label(self) -> usize {
        self as usize
    }
}

fn draw(class: ShapeClass, rng: &mut impl Rng, img: &mut [f64]) {
    let s = SYNTH_SIZE as f64;
    let intensity = rng.random_range(0.6..1.0);
    let cy = rng.random_range(8.0..s - 8.0);
    let cx = rng.random_range(8.0..s - 8.0);
    let half_len = rng.random_range(4.0..8.0);
    let half_width = rng.random_range(0.8..1.8);
    let radius: f64 = rng.random_range(3.0..6.5);
    let vertical = rng.random_bool(0.5);

    for y in 0..SYNTH_SIZE {
        for x in 0..SYNTH_SIZE {
            let (dy, dx) = (y as f64 + 0.5 - cy, x as f64 + 0.5 - cx);
            let horizontal_bar = dy.abs() <= half_width && dx.abs() <= half_len;
            let vertical_bar = dx.abs() <= half_width && dy.abs() <= half_len;
            let r = (dy * dy + dx * dx).sqrt();
            let v = match class {
                ShapeClass::Bar => {
                    let hit = if vertical { vertical_bar } else { horizontal_bar };
                    if hit {
                        1.0
                    } else {
                        0.0
                    }
                }
                ShapeClass::Cross => {
                    if horizontal_bar || vertical_bar {
                        1.0
                    } else {
                        0.0
                    }
                }
                ShapeClass::Blob => (-(r * r) / (2.0 * (radius / 1.6).powi(2))).exp(),
                ShapeClass::Ring => {
                    if (r - radius - 1.0).abs() <= 1.0 {
                        1.0
                    } else {
                        0.0
                    }
                }
            };
            let px = &mut img[y * SYNTH_SIZE + x];
            *px = (*px + intensity * v).min(1.0);
        }
    }
}

/// `n` images of `SYNTH_SIZE x SYNTH_SIZE x 1` with label `i % 4`
/// (bar, cross, blob, ring) at random positions over a faint noise floor.
pub fn synth_shapes(n: usize, seed: u64) -> Result<Dataset> {
    let len = SYNTH_SIZE * SYNTH_SIZE;
    let mut data = vec![0.0; n * len];
    let mut labels = Vec::with_capacity(n);
    for (i, img) in data.chunks_mut(len).enumerate() {
        let mut rng = seeded_rng(mix_seed(seed, i as u64));
        for px in img.iter_mut() {
            *px = rng.random_range(0.0..0.1);
        }
        let class = ShapeClass::of_index(i);
        draw(class, &mut rng, img);
        labels.push(class.label());
    }
    Dataset::new(vec![SYNTH_SIZE, SYNTH_SIZE, 1], data, labels, 4)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_seed_sensitive() {
        assert_eq!(synth_shapes(8, 3).unwrap(), synth_shapes(8, 3).unwrap());
        assert_ne!(synth_shapes(8, 3).unwrap(), synth_shapes(8, 4).unwrap());
    }

    #[test]
    fn prefix_stable() {
        let a = synth_shapes(10, 1).unwrap();
        assert_eq!(a.slice(0..5).unwrap(), synth_shapes(5, 1).unwrap());
    }

    #[test]
    fn balanced_labels_and_range() {
        let d = synth_shapes(41, 0).unwrap();
        let mut counts = [0usize; 4];
        for (i, &l) in d.labels().iter().enumerate() {
            assert_eq!(l, ShapeClass::of_index(i).label());
            counts[l] += 1;
        }
        let (lo, hi) = (counts.iter().min().unwrap(), counts.iter().max().unwrap());
        assert!(hi - lo <= 1);
        assert!(d.pixels().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn shapes_are_visible() {
        let d = synth_shapes(4, 7).unwrap();
        for i in 0..4 {
            let img = d.image(i).unwrap();
            let bright = img.data().iter().filter(|&&v| v > 0.5).count();
            assert!(bright >= 10, "image {i} has {bright} bright pixels");
        }
    }
}
