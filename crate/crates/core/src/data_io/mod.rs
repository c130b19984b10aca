//! Image ingestion, resizing, dataset splits and synthetic data.
//!
//! On-disk layout of a dataset directory:
//!
//! ```text
//! images/NAME.pgm | images/NAME.ppm
//! masks/NAME.pgm
//! manifest.json        {"entries": [{"id": NAME, "split": "train" | "val"}, ...]}
//! ```

mod netpbm;
mod synth;

pub use netpbm::{decode_netpbm, encode_netpbm, read_mask, read_netpbm, write_mask, write_netpbm, PnmImage};
pub use synth::{gen_synthetic, gen_synthetic_with_disks, Disk, SynthConfig, BACKGROUND, FOREGROUND};

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Shape4, Tensor4};

#[derive(Clone, Debug, PartialEq)]
pub struct Sample<T> {
    pub id: String,
    /// `(1, C, H, W)` in [0, 1].
    pub image: Tensor4<T>,
    /// `(1, 1, H, W)` with values in {0, 1}.
    pub mask: Tensor4<T>,
}

impl<T: Scalar> Sample<T> {
    pub fn new(id: impl Into<String>, image: Tensor4<T>, mask: Tensor4<T>) -> Result<Self> {
        let id = id.into();
        let (i, m) = (image.shape(), mask.shape());
        if i.n != 1 || m.n != 1 || m.c != 1 || i.h != m.h || i.w != m.w {
            return Err(Error::Dataset(format!("{id}: image {i} and mask {m} are not aligned")));
        }
        if mask.data().iter().any(|&v| v != T::zero() && v != T::one()) {
            return Err(Error::Dataset(format!("{id}: mask is not binary")));
        }
        Ok(Sample { id, image, mask })
    }
}

/// Nearest-neighbour resampling; output pixel `i` reads `floor(i·H/new_h)`.
pub fn resize_nearest<T: Scalar>(img: &Tensor4<T>, new_h: usize, new_w: usize) -> Result<Tensor4<T>> {
    let s = img.shape();
    Tensor4::from_fn(Shape4::new(s.n, s.c, new_h, new_w)?, |n, c, y, x| {
        img.at(n, c, y * s.h / new_h, x * s.w / new_w)
    })
}

/// Seeded shuffle, then the first `round(len · train_fraction)` items train.
pub fn split<S>(samples: Vec<S>, train_fraction: f64, seed: u64) -> Result<(Vec<S>, Vec<S>)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::Config(format!("train fraction {train_fraction} not in (0, 1)")));
    }
    let len = samples.len();
    let n_train = (len as f64 * train_fraction).round() as usize;
    if n_train == 0 || n_train == len {
        return Err(Error::Dataset(format!(
            "splitting {len} samples at {train_fraction} leaves one side empty"
        )));
    }
    let mut order: Vec<usize> = (0..len).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut slots: Vec<Option<S>> = samples.into_iter().map(Some).collect();
    let mut take = |i: &usize| slots[*i].take().expect("each index once");
    let train = order[..n_train].iter().map(&mut take).collect();
    let val = order[n_train..].iter().map(&mut take).collect();
    Ok((train, val))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub id: String,
    pub split: Split,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
}

pub const DATASET_MANIFEST: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset<T> {
    pub train: Vec<Sample<T>>,
    pub val: Vec<Sample<T>>,
}

fn check_id(id: &str) -> Result<()> {
    let ok = !id.is_empty()
        && !id.starts_with('.')
        && id
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.'));
    if ok {
        Ok(())
    } else {
        Err(Error::Dataset(format!("sample id '{id}' is not a plain file stem")))
    }
}

fn mkdir(p: &Path) -> Result<()> {
    std::fs::create_dir_all(p).map_err(|e| Error::io(p, e))
}

/// Writes images, masks and the manifest under `dir`.
pub fn write_dataset<T: Scalar>(dir: &Path, data: &Dataset<T>) -> Result<()> {
    mkdir(&dir.join("images"))?;
    mkdir(&dir.join("masks"))?;
    let mut manifest = DatasetManifest::default();
    for (split, samples) in [(Split::Train, &data.train), (Split::Val, &data.val)] {
        for s in samples {
            check_id(&s.id)?;
            let ext = if s.image.shape().c == 3 { "ppm" } else { "pgm" };
            write_netpbm(&dir.join("images").join(format!("{}.{ext}", s.id)), &s.image)?;
            write_mask(&dir.join("masks").join(format!("{}.pgm", s.id)), &s.mask)?;
            manifest.entries.push(ManifestEntry {
                id: s.id.clone(),
                split,
            });
        }
    }
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    let path = dir.join(DATASET_MANIFEST);
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

/// Reads a dataset directory, optionally resizing every pair to `resize`.
pub fn read_dataset<T: Scalar>(dir: &Path, resize: Option<(usize, usize)>) -> Result<Dataset<T>> {
    let path = dir.join(DATASET_MANIFEST);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: DatasetManifest = serde_json::from_str(&text)?;
    let mut out = Dataset {
        train: Vec::new(),
        val: Vec::new(),
    };
    for e in &manifest.entries {
        check_id(&e.id)?;
        let pgm = dir.join("images").join(format!("{}.pgm", e.id));
        let ppm = dir.join("images").join(format!("{}.ppm", e.id));
        let image_path = if pgm.exists() { pgm } else { ppm };
        if !image_path.exists() {
            return Err(Error::Dataset(format!("no image file for '{}'", e.id)));
        }
        let mut image = read_netpbm(&image_path)?;
        let mut mask = read_mask(&dir.join("masks").join(format!("{}.pgm", e.id)))?;
        if let Some((h, w)) = resize {
            image = resize_nearest(&image, h, w)?;
            mask = resize_nearest(&mask, h, w)?;
        }
        let sample = Sample::new(e.id.clone(), image, mask)?;
        match e.split {
            Split::Train => out.train.push(sample),
            Split::Val => out.val.push(sample),
        }
    }
    if out.train.is_empty() && out.val.is_empty() {
        return Err(Error::Dataset(format!("{} lists no samples", path.display())));
    }
    Ok(out)
}

/// Stacks images and masks of `samples` into two batch tensors.
pub fn batch<T: Scalar>(samples: &[&Sample<T>]) -> Result<(Tensor4<T>, Tensor4<T>)> {
    let images: Vec<&Tensor4<T>> = samples.iter().map(|s| &s.image).collect();
    let masks: Vec<&Tensor4<T>> = samples.iter().map(|s| &s.mask).collect();
    Ok((Tensor4::stack_batch(&images)?, Tensor4::stack_batch(&masks)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn_ops::upsample_nearest2;
    use std::collections::BTreeSet;

    fn grid(h: usize, w: usize) -> Tensor4<f64> {
        Tensor4::from_fn(Shape4::new(1, 1, h, w).unwrap(), |_, _, y, x| (y * w + x) as f64).unwrap()
    }

    #[test]
    fn resize_examples() {
        let g = grid(4, 4);
        assert_eq!(resize_nearest(&g, 4, 4).unwrap(), g);
        assert_eq!(resize_nearest(&g, 2, 2).unwrap().data(), &[0.0, 2.0, 8.0, 10.0]);
        let small = Tensor4::from_vec(Shape4::new(1, 1, 2, 2).unwrap(), vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(
            resize_nearest(&small, 4, 4).unwrap(),
            upsample_nearest2(&small).unwrap()
        );
    }

    #[test]
    fn resized_masks_stay_binary() {
        let m = Tensor4::from_fn(Shape4::new(1, 1, 7, 5).unwrap(), |_, _, y, x| ((x + y) % 2) as f64).unwrap();
        let r = resize_nearest(&m, 16, 3).unwrap();
        assert!(r.data().iter().all(|&v| v == 0.0 || v == 1.0));
    }

    #[test]
    fn split_partitions() {
        let ids: Vec<usize> = (0..10).collect();
        let (a, b) = split(ids.clone(), 0.8, 3).unwrap();
        assert_eq!((a.len(), b.len()), (8, 2));
        let union: BTreeSet<usize> = a.iter().chain(&b).copied().collect();
        assert_eq!(union.len(), 10);
        assert_eq!(split(ids.clone(), 0.8, 3).unwrap(), (a, b));
        assert!(split(ids.clone(), 0.01, 0).is_err());
        assert!(split(ids, 1.0, 0).is_err());
    }

    #[test]
    fn dataset_dir_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let samples: Vec<Sample<f32>> = gen_synthetic(&SynthConfig::default()).unwrap();
        let (train, val) = split(samples, 0.75, 0).unwrap();
        let data = Dataset { train, val };
        write_dataset(dir.path(), &data).unwrap();
        let back: Dataset<f32> = read_dataset(dir.path(), None).unwrap();
        assert_eq!(back.train.len(), 6);
        assert_eq!(back.val.len(), 2);
        for (a, b) in back.train.iter().zip(&data.train) {
            assert_eq!(a.id, b.id);
            assert_eq!(a.mask, b.mask);
            assert!(a.image.max_abs_diff(&b.image).unwrap() <= 0.5 / 255.0 + 1e-6);
        }
    }

    #[test]
    fn unsafe_ids_rejected() {
        assert!(check_id("../x").is_err());
        assert!(check_id("a/b").is_err());
        assert!(check_id("img_01.v2").is_ok());
    }
}
