//! Dense histogram-of-oriented-gradients descriptor.
//!
//! Centered-difference gradients with replicated borders, unsigned
//! orientations in `[0, 180)` degrees voted into `bins` bins (centers at
//! `(b + 0.5) * 180 / bins`) with linear interpolation between the two
//! nearest centers, cells of `cell_size` pixels, and overlapping blocks of
//! `block_cells x block_cells` cells at one-cell stride, each L2-Hys
//! normalized.

use serde::{Deserialize, Serialize};

use super::DescriptorError;
use crate::corpus::ImageBuffer;

const NORM_EPS: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HogParams {
    pub cell_size: usize,
    pub block_cells: usize,
    pub bins: usize,
    pub clip: f64,
}

impl Default for HogParams {
    fn default() -> Self {
        Self {
            cell_size: 8,
            block_cells: 2,
            bins: 9,
            clip: 0.2,
        }
    }
}

impl HogParams {
    pub fn validate(&self) -> Result<(), DescriptorError> {
        if self.cell_size == 0 || self.block_cells == 0 || self.bins == 0 {
            return Err(DescriptorError::InvalidParams(
                "cell_size, block_cells and bins must be positive".into(),
            ));
        }
        if !(self.clip > 0.0 && self.clip <= 1.0) {
            return Err(DescriptorError::InvalidParams(format!(
                "clip must lie in (0, 1], got {}",
                self.clip
            )));
        }
        Ok(())
    }

    /// Descriptor length for a `width x height` image.
    pub fn descriptor_len(&self, width: usize, height: usize) -> usize {
        let bx = (width / self.cell_size + 1).saturating_sub(self.block_cells);
        let by = (height / self.cell_size + 1).saturating_sub(self.block_cells);
        bx * by * self.block_cells * self.block_cells * self.bins
    }
}

fn l2_hys(block: &mut [f64], clip: f64) {
    let norm = (block.iter().map(|v| v * v).sum::<f64>() + NORM_EPS).sqrt();
    for v in block.iter_mut() {
        *v = (*v / norm).min(clip);
    }
    let norm = (block.iter().map(|v| v * v).sum::<f64>() + NORM_EPS).sqrt();
    for v in block.iter_mut() {
        *v /= norm;
    }
}

pub fn compute_hog(image: &ImageBuffer, params: &HogParams) -> Result<Vec<f64>, DescriptorError> {
    params.validate()?;
    let (w, h) = (image.width, image.height);
    let cs = params.cell_size;
    if w % cs != 0 || h % cs != 0 {
        return Err(DescriptorError::NotDivisible {
            width: w,
            height: h,
            cell_size: cs,
        });
    }
    let (cells_x, cells_y) = (w / cs, h / cs);
    if cells_x < params.block_cells || cells_y < params.block_cells {
        return Err(DescriptorError::TooSmall {
            width: w,
            height: h,
            min_side: cs * params.block_cells,
        });
    }

    let bins = params.bins;
    let bin_width = 180.0 / bins as f64;
    let mut hist = vec![0.0; cells_x * cells_y * bins];
    for y in 0..h {
        let (ym, yp) = (y.saturating_sub(1), (y + 1).min(h - 1));
        for x in 0..w {
            let (xm, xp) = (x.saturating_sub(1), (x + 1).min(w - 1));
            let gx = image.get(xp, y) - image.get(xm, y);
            let gy = image.get(x, yp) - image.get(x, ym);
            let mag = gx.hypot(gy);
            if mag == 0.0 {
                continue;
            }
            let mut angle = gy.atan2(gx).to_degrees();
            if angle < 0.0 {
                angle += 180.0;
            }
            if angle >= 180.0 {
                angle -= 180.0;
            }
            // position relative to bin centers
            let pos = angle / bin_width - 0.5;
            let lo = pos.floor();
            let frac = pos - lo;
            let b0 = (lo as isize).rem_euclid(bins as isize) as usize;
            let b1 = (b0 + 1) % bins;
            let cell = ((y / cs) * cells_x + x / cs) * bins;
            hist[cell + b0] += mag * (1.0 - frac);
            hist[cell + b1] += mag * frac;
        }
    }

    let bc = params.block_cells;
    let (blocks_x, blocks_y) = (cells_x - bc + 1, cells_y - bc + 1);
    let block_len = bc * bc * bins;
    let mut out = Vec::with_capacity(blocks_x * blocks_y * block_len);
    for by in 0..blocks_y {
        for bx in 0..blocks_x {
            let start = out.len();
            for cy in by..by + bc {
                for cx in bx..bx + bc {
                    let c = (cy * cells_x + cx) * bins;
                    out.extend_from_slice(&hist[c..c + bins]);
                }
            }
            l2_hys(&mut out[start..], params.clip);
        }
    }
    Ok(out)
}
