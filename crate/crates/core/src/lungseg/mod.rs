//! Lung segmentation and the three preprocessing regimes.
//!
//! * `Raw`: histogram equalization of the whole image.
//! * `Crop`: segment, take the square around the lung fields, crop the
//!   unmasked image, equalize.
//! * `Segment`: as `Crop`, then dilate the cropped mask 5x5, black out
//!   everything outside it and equalize only inside it.

mod heuristic;
mod unet;

pub use heuristic::{connected_components, fill_holes, keep_largest_components, otsu_threshold, HeuristicSegmenter};
pub use unet::{train_unet, UNet, UNetConfig, UNetSegmenter, UNetTrainConfig};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::imgproc::{self, GrayImage, ImgError, LungMask};

#[derive(Debug, Error)]
pub enum SegError {
    #[error("segmentation produced an empty lung mask")]
    EmptyMask,
    #[error(transparent)]
    Image(#[from] ImgError),
    #[error(transparent)]
    Model(#[from] crate::model::ModelError),
}

/// Anything that maps a radiograph to a same-sized lung mask.
pub trait Segmenter: Send + Sync {
    fn segment(&self, img: &GrayImage) -> LungMask;
}

impl<S: Segmenter + ?Sized> Segmenter for Box<S> {
    fn segment(&self, img: &GrayImage) -> LungMask {
        (**self).segment(img)
    }
}

impl<S: Segmenter + ?Sized> Segmenter for &S {
    fn segment(&self, img: &GrayImage) -> LungMask {
        (**self).segment(img)
    }
}

/// Runs `segmenter`, failing on an empty mask.
pub fn segment_lungs(segmenter: &dyn Segmenter, img: &GrayImage) -> Result<LungMask, SegError> {
    let mask = segmenter.segment(img);
    assert_eq!(
        (mask.width(), mask.height()),
        (img.width(), img.height()),
        "segmenter changed the image dimensions"
    );
    if mask.count() == 0 {
        return Err(SegError::EmptyMask);
    }
    Ok(mask)
}

/// Square region of interest around the lung fields.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingSquare {
    pub center_row: f64,
    pub center_col: f64,
    pub side: usize,
}

/// First and last index with a non-zero entry of an accumulated profile.
fn profile_extent(profile: &[usize]) -> Option<(usize, usize)> {
    let first = profile.iter().position(|&v| v > 0)?;
    let last = profile.iter().rposition(|&v| v > 0)?;
    Some((first, last))
}

/// Square centered on the midpoints of the vertical and horizontal
/// foreground extents, with side equal to the longer extent.
///
/// The extents come from the row and column sums of the mask: the first and
/// last rows (columns) holding any lung pixel bound the vertical
/// (horizontal) segment.
pub fn bounding_square(mask: &LungMask) -> Result<BoundingSquare, SegError> {
    let (w, h) = (mask.width(), mask.height());
    let mut rows = vec![0usize; h];
    let mut cols = vec![0usize; w];
    for r in 0..h {
        for c in 0..w {
            if mask.get(r, c) {
                rows[r] += 1;
                cols[c] += 1;
            }
        }
    }
    let (top, bottom) = profile_extent(&rows).ok_or(SegError::EmptyMask)?;
    let (left, right) = profile_extent(&cols).ok_or(SegError::EmptyMask)?;
    let vertical = bottom - top + 1;
    let horizontal = right - left + 1;
    Ok(BoundingSquare {
        center_row: (top + bottom) as f64 / 2.0,
        center_col: (left + right) as f64 / 2.0,
        side: vertical.max(horizontal),
    })
}

/// Window origin along one axis. A square longer than the axis centers the
/// whole axis in the window; otherwise the window is centered on `center` and
/// may overhang the border (the overhang is zero-filled).
fn window_origin(center: f64, side: usize, len: usize) -> isize {
    if side >= len {
        -(((side - len) / 2) as isize)
    } else {
        (center - (side as f64 - 1.0) / 2.0).floor() as isize
    }
}

fn crop_generic<T: Copy>(src: &[T], w: usize, h: usize, sq: &BoundingSquare, zero: T) -> Vec<T> {
    let side = sq.side;
    let r0 = window_origin(sq.center_row, side, h);
    let c0 = window_origin(sq.center_col, side, w);
    let mut out = vec![zero; side * side];
    for r in 0..side {
        let sr = r0 + r as isize;
        if sr < 0 || sr >= h as isize {
            continue;
        }
        for c in 0..side {
            let sc = c0 + c as isize;
            if sc >= 0 && sc < w as isize {
                out[r * side + c] = src[sr as usize * w + sc as usize];
            }
        }
    }
    out
}

/// `side x side` crop around the square's center, zero-filled where the
/// window leaves the image.
pub fn crop_to_square(img: &GrayImage, sq: &BoundingSquare) -> GrayImage {
    assert!(sq.side >= 1, "square side must be positive");
    let px = crop_generic(img.pixels(), img.width(), img.height(), sq, 0u16);
    GrayImage::new(sq.side, sq.side, px).expect("square dims")
}

pub fn crop_mask_to_square(mask: &LungMask, sq: &BoundingSquare) -> LungMask {
    let bits = crop_generic(mask.bits(), mask.width(), mask.height(), sq, false);
    LungMask::new(sq.side, sq.side, bits).expect("square dims")
}

/// The three preprocessing regimes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PreprocessMode {
    Raw,
    Crop,
    Segment,
}

impl PreprocessMode {
    pub fn as_str(self) -> &'static str {
        match self {
            PreprocessMode::Raw => "raw",
            PreprocessMode::Crop => "crop",
            PreprocessMode::Segment => "segment",
        }
    }
}

impl fmt::Display for PreprocessMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PreprocessMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "raw" => Ok(PreprocessMode::Raw),
            "crop" => Ok(PreprocessMode::Crop),
            "segment" => Ok(PreprocessMode::Segment),
            other => Err(format!("unknown preprocessing mode {other:?}")),
        }
    }
}

/// Output of [`preprocess_detailed`].
#[derive(Debug, Clone)]
pub struct Preprocessed {
    pub image: GrayImage,
    /// Square used for cropping (Crop / Segment).
    pub square: Option<BoundingSquare>,
    /// Cropped lung mask (Crop / Segment).
    pub mask: Option<LungMask>,
    /// Dilated mask that bounds the visible region (Segment only).
    pub region: Option<LungMask>,
}

pub fn preprocess(img: &GrayImage, mode: PreprocessMode, segmenter: &dyn Segmenter) -> Result<GrayImage, SegError> {
    Ok(preprocess_detailed(img, mode, segmenter)?.image)
}

pub fn preprocess_detailed(
    img: &GrayImage,
    mode: PreprocessMode,
    segmenter: &dyn Segmenter,
) -> Result<Preprocessed, SegError> {
    if mode == PreprocessMode::Raw {
        return Ok(Preprocessed { image: imgproc::equalize(img, None)?, square: None, mask: None, region: None });
    }
    let mask = segment_lungs(segmenter, img)?;
    let sq = bounding_square(&mask)?;
    let cropped = crop_to_square(img, &sq);
    let cropped_mask = crop_mask_to_square(&mask, &sq);
    match mode {
        PreprocessMode::Crop => Ok(Preprocessed {
            image: imgproc::equalize(&cropped, None)?,
            square: Some(sq),
            mask: Some(cropped_mask),
            region: None,
        }),
        PreprocessMode::Segment => {
            let region = imgproc::dilate5(&cropped_mask);
            let mut masked = cropped;
            for (p, &inside) in masked.pixels_mut().iter_mut().zip(region.bits()) {
                if !inside {
                    *p = 0;
                }
            }
            let image = imgproc::equalize(&masked, Some(&region))?;
            Ok(Preprocessed { image, square: Some(sq), mask: Some(cropped_mask), region: Some(region) })
        }
        PreprocessMode::Raw => unreachable!(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phantom::{PhantomConfig, PhantomGenerator};
    use proptest::prelude::*;

    fn brute_force(mask: &LungMask) -> Option<(usize, usize, usize, usize)> {
        let mut ext: Option<(usize, usize, usize, usize)> = None;
        for r in 0..mask.height() {
            for c in 0..mask.width() {
                if mask.get(r, c) {
                    ext = Some(match ext {
                        None => (r, r, c, c),
                        Some((a, b, x, y)) => (a.min(r), b.max(r), x.min(c), y.max(c)),
                    });
                }
            }
        }
        ext
    }

    #[test]
    fn bounding_square_examples() {
        let m = LungMask::from_fn(100, 120, |r, c| (10..=89).contains(&r) && (20..=59).contains(&c));
        let sq = bounding_square(&m).unwrap();
        assert_eq!(sq, BoundingSquare { center_row: 49.5, center_col: 39.5, side: 80 });

        let full = LungMask::from_fn(30, 50, |_, _| true);
        let sq = bounding_square(&full).unwrap();
        assert_eq!(sq.side, 50);
        assert_eq!((sq.center_row, sq.center_col), (24.5, 14.5));

        let mut one = LungMask::empty(9, 9);
        one.set(3, 7, true);
        assert_eq!(bounding_square(&one).unwrap(), BoundingSquare { center_row: 3.0, center_col: 7.0, side: 1 });

        assert!(matches!(bounding_square(&LungMask::empty(4, 4)), Err(SegError::EmptyMask)));
    }

    proptest! {
        #[test]
        fn bounding_square_matches_brute_force(
            (w, h, bits) in (1usize..24, 1usize..24).prop_flat_map(|(w, h)| {
                (Just(w), Just(h), prop::collection::vec(prop::bool::weighted(0.05), w * h))
            })
        ) {
            let mask = LungMask::new(w, h, bits).unwrap();
            match brute_force(&mask) {
                None => prop_assert!(bounding_square(&mask).is_err()),
                Some((r0, r1, c0, c1)) => {
                    let sq = bounding_square(&mask).unwrap();
                    prop_assert_eq!(sq.side, (r1 - r0 + 1).max(c1 - c0 + 1));
                    prop_assert_eq!(sq.center_row, (r0 + r1) as f64 / 2.0);
                    prop_assert_eq!(sq.center_col, (c0 + c1) as f64 / 2.0);
                }
            }
        }
    }

    #[test]
    fn crop_interior_is_subraster() {
        let img = GrayImage::from_fn(50, 40, |r, c| (r * 50 + c) as u16);
        let sq = BoundingSquare { center_row: 20.0, center_col: 25.0, side: 11 };
        let out = crop_to_square(&img, &sq);
        for r in 0..11 {
            for c in 0..11 {
                assert_eq!(out.get(r, c), img.get(15 + r, 20 + c));
            }
        }
    }

    #[test]
    fn crop_pads_top_overhang_with_zeros() {
        let img = GrayImage::filled(60, 60, 7);
        // Window rows -5..15.
        let sq = BoundingSquare { center_row: 4.5, center_col: 30.0, side: 20 };
        let out = crop_to_square(&img, &sq);
        for r in 0..20 {
            let expect = if r < 5 { 0 } else { 7 };
            assert!((0..20).all(|c| out.get(r, c) == expect), "row {r}");
        }
    }

    #[test]
    fn oversized_square_centers_whole_image() {
        let img = GrayImage::from_fn(10, 6, |r, c| (r * 10 + c + 1) as u16);
        let sq = BoundingSquare { center_row: 1.0, center_col: 8.0, side: 16 };
        let out = crop_to_square(&img, &sq);
        let sum = |px: &[u16]| px.iter().map(|&p| p as u64).sum::<u64>();
        assert_eq!(sum(out.pixels()), sum(img.pixels()));
        // Origin (-5, -3): pixel (0, 0) lands at (5, 3).
        assert_eq!(out.get(5, 3), img.get(0, 0));
    }

    struct Fixed(LungMask);
    impl Segmenter for Fixed {
        fn segment(&self, _: &GrayImage) -> LungMask {
            self.0.clone()
        }
    }

    #[test]
    fn raw_mode_keeps_dims_and_constant_images() {
        let seg = Fixed(LungMask::empty(5, 3));
        let img = GrayImage::filled(5, 3, 999);
        assert_eq!(preprocess(&img, PreprocessMode::Raw, &seg).unwrap(), img);
        assert!(matches!(preprocess(&img, PreprocessMode::Crop, &seg), Err(SegError::EmptyMask)));
    }

    #[test]
    fn segment_mode_blacks_out_and_is_square() {
        let gen = PhantomGenerator::new(PhantomConfig { width: 160, height: 128, ..Default::default() });
        let heuristic = HeuristicSegmenter::default();
        for seed in 0..5 {
            let ph = gen.generate(crate::corpus::Label::Covid19, seed);
            let out = preprocess_detailed(&ph.image, PreprocessMode::Segment, &heuristic).unwrap();
            let region = out.region.unwrap();
            assert_eq!(out.image.width(), out.image.height());
            for (p, &inside) in out.image.pixels().iter().zip(region.bits()) {
                if !inside {
                    assert_eq!(*p, 0);
                }
            }
            assert!(out.mask.unwrap().is_subset_of(&region));
            let crop = preprocess(&ph.image, PreprocessMode::Crop, &heuristic).unwrap();
            assert_eq!(crop.width(), crop.height());
        }
    }

    #[test]
    fn mode_parsing() {
        assert_eq!("Segment".parse::<PreprocessMode>().unwrap(), PreprocessMode::Segment);
        assert!("zoom".parse::<PreprocessMode>().is_err());
        assert_eq!(serde_json::to_string(&PreprocessMode::Crop).unwrap(), "\"crop\"");
    }
}
