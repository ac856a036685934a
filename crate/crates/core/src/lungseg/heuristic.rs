use std::collections::VecDeque;

use super::Segmenter;
use crate::imgproc::{GrayImage, LungMask};

/// Threshold-based lung segmentation for bright-lung phantoms: box blur,
/// Otsu threshold, keep the two largest 4-connected components, fill holes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeuristicSegmenter {
    pub blur_radius: usize,
    pub components: usize,
}

impl Default for HeuristicSegmenter {
    fn default() -> Self {
        HeuristicSegmenter { blur_radius: 2, components: 2 }
    }
}

impl Segmenter for HeuristicSegmenter {
    fn segment(&self, img: &GrayImage) -> LungMask {
        let smooth = box_blur(img, self.blur_radius);
        let t = otsu_threshold(&smooth);
        let raw = LungMask::new(img.width(), img.height(), smooth.pixels().iter().map(|&p| p > t).collect())
            .expect("same dims");
        fill_holes(&keep_largest_components(&raw, self.components))
    }
}

fn box_blur(img: &GrayImage, radius: usize) -> GrayImage {
    if radius == 0 {
        return img.clone();
    }
    let (w, h) = (img.width(), img.height());
    // Summed-area table.
    let mut sat = vec![0u64; (w + 1) * (h + 1)];
    for r in 0..h {
        let mut row = 0u64;
        for c in 0..w {
            row += img.get(r, c) as u64;
            sat[(r + 1) * (w + 1) + c + 1] = sat[r * (w + 1) + c + 1] + row;
        }
    }
    GrayImage::from_fn(w, h, |r, c| {
        let r0 = r.saturating_sub(radius);
        let r1 = (r + radius + 1).min(h);
        let c0 = c.saturating_sub(radius);
        let c1 = (c + radius + 1).min(w);
        let s = sat[r1 * (w + 1) + c1] + sat[r0 * (w + 1) + c0] - sat[r0 * (w + 1) + c1] - sat[r1 * (w + 1) + c0];
        (s / ((r1 - r0) * (c1 - c0)) as u64) as u16
    })
}

/// Otsu threshold on a 256-bin histogram of the 16-bit image; pixels strictly
/// above the returned value are foreground.
pub fn otsu_threshold(img: &GrayImage) -> u16 {
    let mut hist = [0u64; 256];
    for &p in img.pixels() {
        hist[(p >> 8) as usize] += 1;
    }
    let total: u64 = hist.iter().sum();
    let sum_all: f64 = hist.iter().enumerate().map(|(i, &n)| i as f64 * n as f64).sum();
    let (mut w_bg, mut sum_bg) = (0u64, 0.0f64);
    let (mut best, mut best_var) = (0usize, -1.0f64);
    for (t, &n) in hist.iter().enumerate() {
        w_bg += n;
        if w_bg == 0 {
            continue;
        }
        let w_fg = total - w_bg;
        if w_fg == 0 {
            break;
        }
        sum_bg += t as f64 * n as f64;
        let m_bg = sum_bg / w_bg as f64;
        let m_fg = (sum_all - sum_bg) / w_fg as f64;
        let var = w_bg as f64 * w_fg as f64 * (m_bg - m_fg).powi(2);
        if var > best_var {
            best_var = var;
            best = t;
        }
    }
    ((best as u32) << 8 | 0xff) as u16
}

/// 4-connected component labels (0 = background, 1.. = components) and the
/// size of each component (index 0 unused).
pub fn connected_components(mask: &LungMask) -> (Vec<u32>, Vec<usize>) {
    let (w, h) = (mask.width(), mask.height());
    let mut labels = vec![0u32; w * h];
    let mut sizes = vec![0usize];
    let mut queue = VecDeque::new();
    for start in 0..w * h {
        if !mask.bits()[start] || labels[start] != 0 {
            continue;
        }
        let id = sizes.len() as u32;
        let mut size = 0;
        labels[start] = id;
        queue.push_back(start);
        while let Some(i) = queue.pop_front() {
            size += 1;
            let (r, c) = (i / w, i % w);
            let mut visit = |j: usize| {
                if mask.bits()[j] && labels[j] == 0 {
                    labels[j] = id;
                    queue.push_back(j);
                }
            };
            if r > 0 {
                visit(i - w);
            }
            if r + 1 < h {
                visit(i + w);
            }
            if c > 0 {
                visit(i - 1);
            }
            if c + 1 < w {
                visit(i + 1);
            }
        }
        sizes.push(size);
    }
    (labels, sizes)
}

/// Keeps the `n` largest components (ties: lower label first).
pub fn keep_largest_components(mask: &LungMask, n: usize) -> LungMask {
    let (labels, sizes) = connected_components(mask);
    let mut order: Vec<usize> = (1..sizes.len()).collect();
    order.sort_by(|&a, &b| sizes[b].cmp(&sizes[a]).then(a.cmp(&b)));
    let mut keep = vec![false; sizes.len()];
    for &id in order.iter().take(n) {
        keep[id] = true;
    }
    LungMask::new(mask.width(), mask.height(), labels.iter().map(|&l| keep[l as usize]).collect())
        .expect("same dims")
}

/// Sets every background pixel not 4-connected to the border as foreground.
pub fn fill_holes(mask: &LungMask) -> LungMask {
    let (w, h) = (mask.width(), mask.height());
    let mut outside = vec![false; w * h];
    let mut queue = VecDeque::new();
    for r in 0..h {
        for c in 0..w {
            let border = r == 0 || c == 0 || r + 1 == h || c + 1 == w;
            let i = r * w + c;
            if border && !mask.bits()[i] {
                outside[i] = true;
                queue.push_back(i);
            }
        }
    }
    while let Some(i) = queue.pop_front() {
        let (r, c) = (i / w, i % w);
        let neighbours = [
            (r > 0).then(|| i - w),
            (r + 1 < h).then(|| i + w),
            (c > 0).then(|| i - 1),
            (c + 1 < w).then(|| i + 1),
        ];
        for j in neighbours.into_iter().flatten() {
            if !mask.bits()[j] && !outside[j] {
                outside[j] = true;
                queue.push_back(j);
            }
        }
    }
    LungMask::new(w, h, outside.iter().map(|&o| !o).collect()).expect("same dims")
}
