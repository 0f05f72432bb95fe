//! Built-in synthetic test images.

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{mix_seed, seeded_rng, Tensor};

fn color(rng: &mut impl Rng, c: usize) -> Vec<f64> {
    (0..c).map(|_| rng.random_range(0.0..1.0)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DeskImage {
    /// Colored gradient with a few overlapping discs and boxes under a
    /// multi-scale grating texture.
    Scene,
    /// Oriented sinusoidal grating.
    Stripes,
    Checker,
    /// Concentric rings around a random center.
    Rings,
    /// Dark left half, bright right half.
    Step,
}

impl DeskImage {
    pub const ALL: [DeskImage; 5] = [
        DeskImage::Scene,
        DeskImage::Stripes,
        DeskImage::Checker,
        DeskImage::Rings,
        DeskImage::Step,
    ];

    pub fn name(self) -> &'static str {
        match self {
            DeskImage::Scene => "scene",
            DeskImage::Stripes => "stripes",
            DeskImage::Checker => "checker",
            DeskImage::Rings => "rings",
            DeskImage::Step => "step",
        }
    }

    /// An `[h, w, c]` image with values in `[0, 1]`.
    pub fn render(self, h: usize, w: usize, c: usize, seed: u64) -> Result<Tensor> {
        if h == 0 || w == 0 || c == 0 {
            return Err(Error::InvalidArgument(format!(
                "image extents must be positive, got {h}x{w}x{c}"
            )));
        }
        let mut rng = seeded_rng(mix_seed(seed, self as u64));
        let mut img = vec![0.0; h * w * c];
        let (hf, wf) = (h as f64, w as f64);
        match self {
            DeskImage::Scene => {
                let (top, bottom) = (color(&mut rng, c), color(&mut rng, c));
                for y in 0..h {
                    let t = y as f64 / (hf - 1.0).max(1.0);
                    for x in 0..w {
                        for ch in 0..c {
                            img[(y * w + x) * c + ch] = (1.0 - t) * top[ch] + t * bottom[ch];
                        }
                    }
                }
                let shapes = rng.random_range(3..6);
                for _ in 0..shapes {
                    let col = color(&mut rng, c);
                    let cy = rng.random_range(0.0..hf);
                    let cx = rng.random_range(0.0..wf);
                    let ry = rng.random_range(0.1..0.35) * hf;
                    let rx = rng.random_range(0.1..0.35) * wf;
                    let disc = rng.random_bool(0.5);
                    for y in 0..h {
                        for x in 0..w {
                            let dy = (y as f64 + 0.5 - cy) / ry;
                            let dx = (x as f64 + 0.5 - cx) / rx;
                            let inside = if disc {
                                dy * dy + dx * dx <= 1.0
                            } else {
                                dy.abs() <= 1.0 && dx.abs() <= 1.0
                            };
                            if inside {
                                img[(y * w + x) * c..(y * w + x + 1) * c].copy_from_slice(&col);
                            }
                        }
                    }
                }
                // Photographs are textured everywhere; overlay a few gratings.
                for _ in 0..4 {
                    let angle = rng.random_range(0.0..std::f64::consts::PI);
                    let period = rng.random_range(3.0..16.0);
                    let phase = rng.random_range(0.0..std::f64::consts::TAU);
                    let gain = color(&mut rng, c);
                    for y in 0..h {
                        for x in 0..w {
                            let u = x as f64 * angle.cos() + y as f64 * angle.sin();
                            let t = 0.08 * (std::f64::consts::TAU * u / period + phase).sin();
                            for ch in 0..c {
                                img[(y * w + x) * c + ch] += t * (0.5 + gain[ch]);
                            }
                        }
                    }
                }
                for v in img.iter_mut() {
                    *v = (*v + rng.random_range(-0.03..0.03)).clamp(0.0, 1.0);
                }
            }
            DeskImage::Stripes => {
                let angle = rng.random_range(0.0..std::f64::consts::PI);
                let period = rng.random_range(4.0..12.0);
                let phase = rng.random_range(0.0..std::f64::consts::TAU);
                let tint = color(&mut rng, c);
                for y in 0..h {
                    for x in 0..w {
                        let u = x as f64 * angle.cos() + y as f64 * angle.sin();
                        let s = 0.5 + 0.5 * (std::f64::consts::TAU * u / period + phase).sin();
                        for ch in 0..c {
                            img[(y * w + x) * c + ch] = 0.2 * tint[ch] + 0.8 * s;
                        }
                    }
                }
            }
            DeskImage::Checker => {
                let cell = rng.random_range(4..12);
                let (a, b) = (color(&mut rng, c), color(&mut rng, c));
                for y in 0..h {
                    for x in 0..w {
                        let col = if (y / cell + x / cell) % 2 == 0 { &a } else { &b };
                        img[(y * w + x) * c..(y * w + x + 1) * c].copy_from_slice(col);
                    }
                }
            }
            DeskImage::Rings => {
                let cy = rng.random_range(0.25..0.75) * hf;
                let cx = rng.random_range(0.25..0.75) * wf;
                let period = rng.random_range(5.0..12.0);
                let tint = color(&mut rng, c);
                for y in 0..h {
                    for x in 0..w {
                        let r = ((y as f64 - cy).powi(2) + (x as f64 - cx).powi(2)).sqrt();
                        let s = 0.5 + 0.5 * (std::f64::consts::TAU * r / period).cos();
                        for ch in 0..c {
                            img[(y * w + x) * c + ch] = 0.3 * tint[ch] + 0.7 * s;
                        }
                    }
                }
            }
            DeskImage::Step => {
                for y in 0..h {
                    for x in 0..w {
                        let v = if x < w / 2 { 0.2 } else { 0.8 };
                        img[(y * w + x) * c..(y * w + x + 1) * c].fill(v);
                    }
                }
            }
        }
        Tensor::new(vec![h, w, c], img)
    }
}

impl fmt::Display for DeskImage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DeskImage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        DeskImage::ALL.into_iter().find(|d| d.name() == s).ok_or_else(|| {
            let names: Vec<&str> = DeskImage::ALL.iter().map(|d| d.name()).collect();
            Error::Config(format!(
                "unknown desk image {s:?}; expected one of {}",
                names.join(", ")
            ))
        })
    }
}

/// `n` textured images cycling through scene, stripes, checker and rings,
/// each with its own derived seed.
pub fn desk_batch(n: usize, h: usize, w: usize, c: usize, seed: u64) -> Result<Vec<Tensor>> {
    const KINDS: [DeskImage; 4] = [
        DeskImage::Scene,
        DeskImage::Stripes,
        DeskImage::Checker,
        DeskImage::Rings,
    ];
    (0..n)
        .map(|i| KINDS[i % KINDS.len()].render(h, w, c, mix_seed(seed, i as u64)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_in_range() {
        for d in DeskImage::ALL {
            let a = d.render(20, 24, 3, 5).unwrap();
            assert_eq!(a, d.render(20, 24, 3, 5).unwrap());
            assert_eq!(a.shape(), &[20, 24, 3]);
            assert!(a.data().iter().all(|v| (0.0..=1.0).contains(v)), "{d}");
            assert_eq!(d.name().parse::<DeskImage>().unwrap(), d);
        }
        assert!("tabby".parse::<DeskImage>().is_err());
    }

    #[test]
    fn textured_images_vary_with_seed() {
        for d in &DeskImage::ALL[..4] {
            assert_ne!(d.render(16, 16, 1, 1).unwrap(), d.render(16, 16, 1, 2).unwrap(), "{d}");
        }
    }

    #[test]
    fn step_has_one_edge() {
        let s = DeskImage::Step.render(4, 6, 1, 0).unwrap();
        assert_eq!(&s.data()[..6], &[0.2, 0.2, 0.2, 0.8, 0.8, 0.8]);
    }

    #[test]
    fn batch_distinct() {
        let b = desk_batch(6, 8, 8, 3, 0).unwrap();
        assert_eq!(b.len(), 6);
        assert_ne!(b[0], b[4]);
    }
}
