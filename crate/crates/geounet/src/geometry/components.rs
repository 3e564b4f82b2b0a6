//! Connected-component utilities for Cartesian masks.
//!
//! Pixel-branch predictions can fragment; keeping only the largest
//! 8-connected blob is the standard cleanup before measuring anything.

use super::CartesianMask;
use ndarray::Array2;
use std::collections::VecDeque;

/// Labels 8-connected foreground components in row-major discovery order.
/// Returns the label grid (0 = background, components numbered from 1) and
/// the area of each component, indexed by `label - 1`.
pub fn label_components(grid: &Array2<u8>) -> (Array2<u32>, Vec<usize>) {
    let (h, w) = grid.dim();
    let mut labels = Array2::<u32>::zeros((h, w));
    let mut areas = Vec::new();
    let mut queue = VecDeque::new();
    for i in 0..h {
        for j in 0..w {
            if grid[[i, j]] == 0 || labels[[i, j]] != 0 {
                continue;
            }
            let label = areas.len() as u32 + 1;
            let mut area = 0usize;
            labels[[i, j]] = label;
            queue.push_back((i, j));
            while let Some((ci, cj)) = queue.pop_front() {
                area += 1;
                for di in -1i64..=1 {
                    for dj in -1i64..=1 {
                        if di == 0 && dj == 0 {
                            continue;
                        }
                        let ni = ci as i64 + di;
                        let nj = cj as i64 + dj;
                        if ni < 0 || nj < 0 || ni >= h as i64 || nj >= w as i64 {
                            continue;
                        }
                        let (ni, nj) = (ni as usize, nj as usize);
                        if grid[[ni, nj]] == 1 && labels[[ni, nj]] == 0 {
                            labels[[ni, nj]] = label;
                            queue.push_back((ni, nj));
                        }
                    }
                }
            }
            areas.push(area);
        }
    }
    (labels, areas)
}

/// Keeps only the largest 8-connected component of a binary grid. Ties go to
/// the component whose first pixel comes earliest in row-major order. An
/// empty grid stays empty.
pub fn largest_component_grid(grid: &Array2<u8>) -> Array2<u8> {
    let (labels, areas) = label_components(grid);
    let Some(best) = areas
        .iter()
        .enumerate()
        // `max_by_key` keeps the LAST maximum, so compare (area, reverse
        // label) — labels follow row-major discovery order, making the
        // earliest component win ties.
        .max_by_key(|&(idx, &area)| (area, std::cmp::Reverse(idx)))
        .map(|(idx, _)| idx as u32 + 1)
    else {
        return Array2::zeros(grid.dim());
    };
    labels.mapv(|l| u8::from(l == best))
}

/// [`largest_component_grid`] lifted to a [`CartesianMask`].
pub fn largest_component(mask: &CartesianMask) -> CartesianMask {
    CartesianMask {
        pixels: largest_component_grid(&mask.pixels),
        mm_per_pixel: mask.mm_per_pixel,
        center: mask.center,
    }
}
