//! Seeded disk-segmentation images: bright disks on a dark background.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::Sample;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Shape4, Tensor4};

pub const BACKGROUND: f64 = 0.1;
pub const FOREGROUND: f64 = 0.8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub count: usize,
    /// Height and width; a power of two.
    pub size: usize,
    pub blobs_min: usize,
    pub blobs_max: usize,
    pub radius_min: f64,
    pub radius_max: f64,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            count: 8,
            size: 32,
            blobs_min: 1,
            blobs_max: 3,
            radius_min: 3.0,
            radius_max: 7.0,
            noise_sigma: 0.05,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.count == 0 {
            return fail("synthetic count must be >= 1".into());
        }
        if self.size < 2 || !self.size.is_power_of_two() {
            return fail(format!("synthetic size {} is not a power of two >= 2", self.size));
        }
        if self.blobs_min < 1 || self.blobs_min > self.blobs_max {
            return fail(format!(
                "blob count range {}..={} is empty or zero",
                self.blobs_min, self.blobs_max
            ));
        }
        if !(self.radius_min > 0.0 && self.radius_min <= self.radius_max) {
            return fail(format!(
                "radius range {}..={} is invalid",
                self.radius_min, self.radius_max
            ));
        }
        if 2.0 * self.radius_max > (self.size - 1) as f64 {
            return fail(format!(
                "radius {} does not fit a {}px image",
                self.radius_max, self.size
            ));
        }
        if !self.noise_sigma.is_finite() || self.noise_sigma < 0.0 {
            return fail(format!("noise_sigma {} must be >= 0", self.noise_sigma));
        }
        Ok(())
    }
}

/// Disk centre and radius in pixel coordinates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Disk {
    pub cx: f64,
    pub cy: f64,
    pub r: f64,
}

impl Disk {
    pub fn contains(&self, x: usize, y: usize) -> bool {
        let (dx, dy) = (x as f64 - self.cx, y as f64 - self.cy);
        dx * dx + dy * dy <= self.r * self.r
    }
}

/// Samples together with the disks that produced them.
pub fn gen_synthetic_with_disks<T: Scalar>(cfg: &SynthConfig) -> Result<Vec<(Sample<T>, Vec<Disk>)>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let noise =
        Normal::new(0.0, cfg.noise_sigma.max(f64::MIN_POSITIVE)).map_err(|e| Error::Config(format!("noise: {e}")))?;
    let n = cfg.size;
    let shape = Shape4::new(1, 1, n, n)?;
    let width = cfg.count.to_string().len().max(3);
    (0..cfg.count)
        .map(|k| {
            let blobs = rng.random_range(cfg.blobs_min..=cfg.blobs_max);
            let disks: Vec<Disk> = (0..blobs)
                .map(|_| {
                    let r = if cfg.radius_min == cfg.radius_max {
                        cfg.radius_min
                    } else {
                        rng.random_range(cfg.radius_min..cfg.radius_max)
                    };
                    let hi = (n - 1) as f64 - r;
                    let mut centre = || if r < hi { rng.random_range(r..hi) } else { r };
                    Disk {
                        cx: centre(),
                        cy: centre(),
                        r,
                    }
                })
                .collect();
            let mask = Tensor4::from_fn(shape, |_, _, y, x| {
                if disks.iter().any(|d| d.contains(x, y)) {
                    T::one()
                } else {
                    T::zero()
                }
            })?;
            let image = Tensor4::from_fn(shape, |_, _, y, x| {
                let base = if mask.at(0, 0, y, x) == T::one() {
                    FOREGROUND
                } else {
                    BACKGROUND
                };
                let v = if cfg.noise_sigma > 0.0 {
                    base + noise.sample(&mut rng)
                } else {
                    base
                };
                T::lit(v.clamp(0.0, 1.0))
            })?;
            Ok((
                Sample {
                    id: format!("synth_{k:0width$}"),
                    image,
                    mask,
                },
                disks,
            ))
        })
        .collect()
}

pub fn gen_synthetic<T: Scalar>(cfg: &SynthConfig) -> Result<Vec<Sample<T>>> {
    Ok(gen_synthetic_with_disks(cfg)?.into_iter().map(|(s, _)| s).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{FRAC_1_SQRT_2, PI};

    #[test]
    fn clean_single_disk_is_exact() {
        let cfg = SynthConfig {
            count: 5,
            blobs_min: 1,
            blobs_max: 1,
            noise_sigma: 0.0,
            ..Default::default()
        };
        for (s, disks) in gen_synthetic_with_disks::<f64>(&cfg).unwrap() {
            let d = disks[0];
            for y in 0..32 {
                for x in 0..32 {
                    let inside = d.contains(x, y);
                    assert_eq!(s.mask.at(0, 0, y, x), if inside { 1.0 } else { 0.0 });
                    assert_eq!(s.image.at(0, 0, y, x), if inside { FOREGROUND } else { BACKGROUND });
                }
            }
            assert!(d.cx - d.r >= 0.0 && d.cx + d.r <= 31.0);
        }
    }

    #[test]
    fn seeded_and_distinct() {
        let cfg = SynthConfig::default();
        let a = gen_synthetic::<f32>(&cfg).unwrap();
        assert_eq!(a, gen_synthetic::<f32>(&cfg).unwrap());
        let b = gen_synthetic::<f32>(&SynthConfig { seed: 1, ..cfg }).unwrap();
        assert_ne!(a, b);
        assert!(a.iter().all(|s| s.image.data().iter().all(|v| (0.0..=1.0).contains(v))));
    }

    #[test]
    fn foreground_area_within_radius_bounds() {
        let cfg = SynthConfig {
            count: 100,
            size: 64,
            blobs_min: 1,
            blobs_max: 4,
            radius_min: 3.0,
            radius_max: 9.0,
            ..Default::default()
        };
        let lo = PI * (cfg.radius_min - FRAC_1_SQRT_2).powi(2);
        let hi = cfg.blobs_max as f64 * PI * (cfg.radius_max + FRAC_1_SQRT_2).powi(2);
        for s in gen_synthetic::<f64>(&cfg).unwrap() {
            let count = s.mask.sum();
            assert!(count >= lo && count <= hi, "{}: {count} not in [{lo}, {hi}]", s.id);
        }
    }

    #[test]
    fn validation() {
        for bad in [
            SynthConfig {
                size: 48,
                ..Default::default()
            },
            SynthConfig {
                count: 0,
                ..Default::default()
            },
            SynthConfig {
                blobs_min: 3,
                blobs_max: 2,
                ..Default::default()
            },
            SynthConfig {
                radius_max: 20.0,
                ..Default::default()
            },
            SynthConfig {
                noise_sigma: -1.0,
                ..Default::default()
            },
        ] {
            assert!(bad.validate().is_err(), "{bad:?}");
        }
    }
}
