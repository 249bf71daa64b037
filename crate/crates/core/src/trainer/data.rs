//! Augmentation and fold assignment.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::activation::ActivationImage;
use crate::error::{Error, Result};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Augmentation {
    pub hflip: bool,
    /// Zero-pad by this many pixels, then crop back at a random offset.
    pub random_crop_pad: usize,
}

impl Default for Augmentation {
    fn default() -> Self {
        Self {
            hflip: true,
            random_crop_pad: 2,
        }
    }
}

/// Per-sample draw: flip flag and crop offset (each in 0..=2·pad).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AugmentDraw {
    pub flip: bool,
    pub dx: usize,
    pub dy: usize,
}

impl Augmentation {
    pub fn draw(&self, rng: &mut impl Rng) -> AugmentDraw {
        let flip = self.hflip && rng.random_bool(0.5);
        let span = 2 * self.random_crop_pad + 1;
        let (dx, dy) = if self.random_crop_pad > 0 {
            (rng.random_range(0..span), rng.random_range(0..span))
        } else {
            (0, 0)
        };
        AugmentDraw { flip, dx, dy }
    }

    pub fn apply(&self, img: &ActivationImage, d: AugmentDraw) -> ActivationImage {
        let flipped;
        let src = if d.flip {
            flipped = hflip(img);
            &flipped
        } else {
            img
        };
        if self.random_crop_pad == 0 {
            return src.clone();
        }
        pad_crop(src, self.random_crop_pad, d.dx, d.dy)
    }
}

pub fn hflip(img: &ActivationImage) -> ActivationImage {
    let (w, h, c) = (img.width(), img.height(), img.channels());
    let mut data = Vec::with_capacity(img.data().len());
    for r in 0..h {
        for col in (0..w).rev() {
            data.extend_from_slice(img.pixel(r, col));
        }
    }
    ActivationImage::new(w, h, c, data, img.post_relu()).expect("flip preserves validity")
}

/// Zero-pad by `pad` on every side and crop a same-size window whose top-left
/// corner sits at (`dy`, `dx`) in padded coordinates.
pub fn pad_crop(img: &ActivationImage, pad: usize, dx: usize, dy: usize) -> ActivationImage {
    let (w, h, c) = (img.width(), img.height(), img.channels());
    let mut data = vec![0.0f32; w * h * c];
    for r in 0..h {
        let sr = (r + dy) as isize - pad as isize;
        if sr < 0 || sr >= h as isize {
            continue;
        }
        for col in 0..w {
            let sc = (col + dx) as isize - pad as isize;
            if sc < 0 || sc >= w as isize {
                continue;
            }
            data[(r * w + col) * c..][..c].copy_from_slice(img.pixel(sr as usize, sc as usize));
        }
    }
    ActivationImage::new(w, h, c, data, img.post_relu()).expect("crop preserves validity")
}

/// Class-stratified fold index for every sample. Each class is shuffled and
/// dealt round-robin, continuing where the previous class stopped, so both
/// per-class and total fold sizes differ by at most one.
pub fn stratified_folds(labels: &[u32], folds: usize, seed_value: u64) -> Result<Vec<usize>> {
    if folds < 2 {
        return Err(Error::Config(format!("cross-validation needs at least 2 folds, got {folds}")));
    }
    if labels.len() < folds {
        return Err(Error::Config(format!("{} samples cannot fill {folds} folds", labels.len())));
    }
    let mut by_class: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for (i, &l) in labels.iter().enumerate() {
        by_class.entry(l).or_default().push(i);
    }
    let mut rng = seed::rng(seed_value, seed::stream::FOLDS);
    let mut assignment = vec![0; labels.len()];
    let mut next = 0;
    for members in by_class.values_mut() {
        members.shuffle(&mut rng);
        for &i in members.iter() {
            assignment[i] = next;
            next = (next + 1) % folds;
        }
    }
    Ok(assignment)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ramp(w: usize, h: usize, c: usize) -> ActivationImage {
        let data = (0..w * h * c).map(|i| i as f32 + 1.0).collect();
        ActivationImage::new(w, h, c, data, true).unwrap()
    }

    #[test]
    fn flip_twice_is_identity() {
        let img = ramp(5, 4, 3);
        assert_eq!(hflip(&hflip(&img)), img);
        assert_eq!(hflip(&img).pixel(0, 0), img.pixel(0, 4));
        let aug = Augmentation {
            hflip: true,
            random_crop_pad: 0,
        };
        let d = AugmentDraw { flip: true, dx: 0, dy: 0 };
        assert_eq!(aug.apply(&aug.apply(&img, d), d), img);
    }

    #[test]
    fn centered_crop_is_identity_and_shift_moves_content() {
        let img = ramp(4, 4, 2);
        assert_eq!(pad_crop(&img, 2, 2, 2), img);
        let shifted = pad_crop(&img, 2, 3, 2);
        assert_eq!(shifted.pixel(0, 0), img.pixel(0, 1));
        assert_eq!(shifted.pixel(0, 3), &[0.0, 0.0]);
    }

    #[test]
    fn too_few_folds_rejected() {
        assert!(stratified_folds(&[0, 1, 0, 1], 1, 0).is_err());
        assert!(stratified_folds(&[0, 1], 3, 0).is_err());
    }

    proptest! {
        #[test]
        fn folds_partition_and_stratify(
            labels in proptest::collection::vec(0u32..5, 10..200),
            folds in 2usize..7,
            seed_value in any::<u64>(),
        ) {
            prop_assume!(labels.len() >= folds);
            let a = stratified_folds(&labels, folds, seed_value).unwrap();
            prop_assert_eq!(a.len(), labels.len());
            prop_assert!(a.iter().all(|&f| f < folds));
            let sizes: Vec<usize> = (0..folds).map(|f| a.iter().filter(|&&x| x == f).count()).collect();
            prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
            for c in 0..5u32 {
                let per: Vec<usize> = (0..folds)
                    .map(|f| a.iter().zip(&labels).filter(|(&x, &l)| x == f && l == c).count())
                    .collect();
                prop_assert!(per.iter().max().unwrap() - per.iter().min().unwrap() <= 1);
            }
            prop_assert_eq!(&a, &stratified_folds(&labels, folds, seed_value).unwrap());
        }
    }
}
