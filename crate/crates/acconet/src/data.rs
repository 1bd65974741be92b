//! Dataset discovery, preprocessing, and the eight-fold dihedral
//! flip/rotation augmentation for `<root>/<split>/{images,gt}` layouts.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use ndarray::{Array2, Array3, Array4, ArrayD, Axis, Ix4};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::ops;
use crate::Scalar;

pub const IMAGE_EXTS: [&str; 3] = ["png", "jpg", "jpeg"];
pub const MASK_EXTS: [&str; 3] = ["png", "jpg", "jpeg"];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SamplePair {
    pub image: PathBuf,
    pub mask: PathBuf,
    pub stem: String,
}

fn collect_by_stem(dir: &Path, exts: &[&str]) -> Result<BTreeMap<String, PathBuf>> {
    let mut out = BTreeMap::new();
    if !dir.exists() {
        return Err(Error::Dataset(format!(
            "missing dataset directory {}",
            dir.display()
        )));
    }
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let path = entry.path();
        let Some(ext) = path.extension().and_then(|e| e.to_str()) else { continue };
        if !exts.contains(&ext.to_ascii_lowercase().as_str()) {
            continue;
        }
        if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
            out.insert(stem.to_string(), path);
        }
    }
    Ok(out)
}

/// Scan one split: images under `<root>/<split>/images`, masks under
/// `<root>/<split>/gt`, matched by basename and sorted. Orphans on either
/// side are an error listing every unmatched name.
pub fn scan_split(root: &Path, split: &str) -> Result<Vec<SamplePair>> {
    let images = collect_by_stem(&root.join(split).join("images"), &IMAGE_EXTS)?;
    let masks = collect_by_stem(&root.join(split).join("gt"), &MASK_EXTS)?;
    let orphan_images: Vec<&String> = images.keys().filter(|k| !masks.contains_key(*k)).collect();
    let orphan_masks: Vec<&String> = masks.keys().filter(|k| !images.contains_key(*k)).collect();
    if !orphan_images.is_empty() || !orphan_masks.is_empty() {
        let mut parts = Vec::new();
        if !orphan_images.is_empty() {
            parts.push(format!(
                "images without masks: {}",
                orphan_images.iter().map(|s| s.as_str()).collect::<Vec<_>>().join(", ")
            ));
        }
        if !orphan_masks.is_empty() {
            parts.push(format!(
                "masks without images: {}",
                orphan_masks.iter().map(|s| s.as_str()).collect::<Vec<_>>().join(", ")
            ));
        }
        return Err(Error::Dataset(format!(
            "orphan files in {}/{}; {}",
            root.display(),
            split,
            parts.join("; ")
        )));
    }
    Ok(images
        .into_iter()
        .map(|(stem, image)| SamplePair {
            mask: masks[&stem].clone(),
            image,
            stem,
        })
        .collect())
}

#[derive(Debug, Clone)]
pub struct DatasetSplits {
    pub train: Vec<SamplePair>,
    pub test: Vec<SamplePair>,
}

pub fn scan_dataset(root: &Path) -> Result<DatasetSplits> {
    Ok(DatasetSplits {
        train: scan_split(root, "train")?,
        test: scan_split(root, "test")?,
    })
}

/// Load an image as (3, H, W) RGB in [0, 1].
pub fn load_image_rgb(path: &Path) -> Result<Array3<f64>> {
    let img = image::open(path)
        .map_err(|e| Error::Image {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?
        .into_rgb8();
    let (w, h) = img.dimensions();
    Ok(Array3::from_shape_fn(
        (3, h as usize, w as usize),
        |(c, i, j)| img.get_pixel(j as u32, i as u32)[c] as f64 / 255.0,
    ))
}

/// Load a single-channel mask in [0, 1].
pub fn load_mask_gray(path: &Path) -> Result<Array2<f64>> {
    let img = image::open(path)
        .map_err(|e| Error::Image {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?
        .into_luma8();
    let (w, h) = img.dimensions();
    Ok(Array2::from_shape_fn((h as usize, w as usize), |(i, j)| {
        img.get_pixel(j as u32, i as u32)[0] as f64 / 255.0
    }))
}

fn resize_bilinear3(img: &Array3<f64>, size: usize) -> Array3<f64> {
    let (c, h, w) = img.dim();
    if h == size && w == size {
        return img.clone();
    }
    let batched = img
        .clone()
        .into_shape_with_order((1, c, h, w))
        .expect("contiguous");
    let resized = ops::bilinear_resize(&batched.view(), size, size);
    resized
        .into_shape_with_order((c, size, size))
        .expect("resize output")
}

fn resize_nearest2(mask: &Array2<f64>, size: usize) -> Array2<f64> {
    let (h, w) = mask.dim();
    if h == size && w == size {
        return mask.clone();
    }
    Array2::from_shape_fn((size, size), |(i, j)| {
        let si = ((i as f64 + 0.5) * h as f64 / size as f64).floor() as usize;
        let sj = ((j as f64 + 0.5) * w as f64 / size as f64).floor() as usize;
        mask[[si.min(h - 1), sj.min(w - 1)]]
    })
}

/// Input preprocessing: bilinear resize to the schedule size and per-channel
/// normalization for images; nearest-neighbor resize and mid-scale
/// binarization for masks.
#[derive(Debug, Clone)]
pub struct Preprocess {
    pub size: usize,
    pub mean: [f64; 3],
    pub std: [f64; 3],
}

impl Preprocess {
    pub fn new(size: usize, mean: [f64; 3], std: [f64; 3]) -> Self {
        Preprocess { size, mean, std }
    }

    /// Identity normalization at a given size.
    pub fn plain(size: usize) -> Self {
        Preprocess::new(size, [0.0; 3], [1.0; 3])
    }

    pub fn image<S: Scalar>(&self, img: &Array3<f64>) -> Array3<S> {
        let resized = resize_bilinear3(img, self.size);
        Array3::from_shape_fn(resized.dim(), |(c, i, j)| {
            S::from_f64((resized[[c, i, j]] - self.mean[c]) / self.std[c])
        })
    }

    /// Masks binarize at half of full scale: 8-bit values {0, 255} map to
    /// {0, 1} and already-binary masks pass through unchanged.
    pub fn mask<S: Scalar>(&self, mask: &Array2<f64>) -> Array2<S> {
        let resized = resize_nearest2(mask, self.size);
        resized.mapv(|v| if v > 0.5 { S::one() } else { S::zero() })
    }

    pub fn load_pair<S: Scalar>(&self, pair: &SamplePair) -> Result<(Array3<S>, Array2<S>)> {
        let img = load_image_rgb(&pair.image)?;
        let mask = load_mask_gray(&pair.mask)?;
        Ok((self.image(&img), self.mask(&mask)))
    }
}

/// The eight square-image variants: four rotations, each optionally
/// horizontally flipped. Vertical flip is rot180 composed with the
/// horizontal flip, so the set covers both flip axes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dihedral {
    /// Quarter turns, clockwise.
    pub quarter_turns: u8,
    pub hflip: bool,
}

impl Dihedral {
    pub const ALL: [Dihedral; 8] = [
        Dihedral { quarter_turns: 0, hflip: false },
        Dihedral { quarter_turns: 1, hflip: false },
        Dihedral { quarter_turns: 2, hflip: false },
        Dihedral { quarter_turns: 3, hflip: false },
        Dihedral { quarter_turns: 0, hflip: true },
        Dihedral { quarter_turns: 1, hflip: true },
        Dihedral { quarter_turns: 2, hflip: true },
        Dihedral { quarter_turns: 3, hflip: true },
    ];

    pub const IDENTITY: Dihedral = Dihedral { quarter_turns: 0, hflip: false };

    pub fn apply2<T: Copy>(&self, a: &Array2<T>) -> Array2<T> {
        let n = a.dim().0;
        assert_eq!(a.dim().0, a.dim().1, "dihedral variants need square inputs");
        let mut out = Array2::from_shape_fn((n, n), |(i, j)| {
            // inverse map: output (i, j) <- rotated source coordinates
            let (si, sj) = match self.quarter_turns % 4 {
                0 => (i, j),
                1 => (n - 1 - j, i),
                2 => (n - 1 - i, n - 1 - j),
                _ => (j, n - 1 - i),
            };
            a[[si, sj]]
        });
        if self.hflip {
            out = Array2::from_shape_fn((n, n), |(i, j)| out[[i, n - 1 - j]]);
        }
        out
    }

    pub fn apply3<T: Copy>(&self, a: &Array3<T>) -> Array3<T> {
        let (c, h, w) = a.dim();
        assert_eq!(h, w, "dihedral variants need square inputs");
        let mut out = Array3::from_shape_fn((c, h, w), |(ch, i, j)| {
            let n = h;
            let (si, sj) = match self.quarter_turns % 4 {
                0 => (i, j),
                1 => (n - 1 - j, i),
                2 => (n - 1 - i, n - 1 - j),
                _ => (j, n - 1 - i),
            };
            a[[ch, si, sj]]
        });
        if self.hflip {
            out = Array3::from_shape_fn((c, h, w), |(ch, i, j)| out[[ch, i, w - 1 - j]]);
        }
        out
    }
}

/// All eight dihedral variants of an image/mask pair, transformed in
/// lockstep. Inputs must be square.
pub fn augment_eightfold<S: Scalar>(
    img: &Array3<S>,
    mask: &Array2<S>,
) -> Result<Vec<(Array3<S>, Array2<S>)>> {
    let (_, h, w) = img.dim();
    if h != w {
        return Err(Error::Dataset(format!(
            "augmentation needs square inputs (rotation would change shape), got {h}x{w}"
        )));
    }
    if mask.dim() != (h, w) {
        return Err(Error::shape(
            "augmentation mask",
            format!("({h}, {w})"),
            format!("{:?}", mask.dim()),
        ));
    }
    Ok(Dihedral::ALL
        .iter()
        .map(|d| (d.apply3(img), d.apply2(mask)))
        .collect())
}

/// Per-epoch sample schedule: each source pair contributes its eight
/// variants (or just itself when augmentation is off), shuffled by a
/// per-epoch stream derived from the master seed.
#[derive(Debug, Clone, Copy)]
pub struct EpochSampler {
    pub n_pairs: usize,
    pub augment: bool,
}

impl EpochSampler {
    pub fn len(&self) -> usize {
        self.n_pairs * if self.augment { Dihedral::ALL.len() } else { 1 }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn indices(&self, master_seed: u64, epoch: usize) -> Vec<(usize, Dihedral)> {
        let mut items: Vec<(usize, Dihedral)> = if self.augment {
            (0..self.n_pairs)
                .flat_map(|p| Dihedral::ALL.iter().map(move |&d| (p, d)))
                .collect()
        } else {
            (0..self.n_pairs).map(|p| (p, Dihedral::IDENTITY)).collect()
        };
        let seed = master_seed ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        items.shuffle(&mut rng);
        items
    }
}

/// Stack (image, mask) samples into batch tensors (B,3,H,W) and (B,1,H,W).
pub fn make_batch<S: Scalar>(items: &[(Array3<S>, Array2<S>)]) -> (ArrayD<S>, ArrayD<S>) {
    assert!(!items.is_empty());
    let (c, h, w) = items[0].0.dim();
    let b = items.len();
    let mut images = Array4::<S>::zeros((b, c, h, w));
    let mut masks = Array4::<S>::zeros((b, 1, h, w));
    for (k, (img, mask)) in items.iter().enumerate() {
        images.index_axis_mut(Axis(0), k).assign(img);
        masks
            .index_axis_mut(Axis(0), k)
            .index_axis_mut(Axis(0), 0)
            .assign(mask);
    }
    (
        images.into_dimensionality::<Ix4>().unwrap().into_dyn(),
        masks.into_dyn(),
    )
}
