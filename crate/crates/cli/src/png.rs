//! 16-bit grayscale PNG previews of grids.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use depthprior_core::grid::ScalarGrid;
use image::{ImageBuffer, Luma};

use crate::report::Report;

/// Sidecar path holding the value range of a preview.
pub fn sidecar_path(png: &Path) -> PathBuf {
    let mut name = png.file_name().unwrap_or_default().to_os_string();
    name.push(".range.txt");
    png.with_file_name(name)
}

/// Min-max normalized 16-bit levels; a constant grid maps to 0.
pub fn quantize(grid: &ScalarGrid) -> (Vec<u16>, f64, f64) {
    let (lo, hi) = (grid.min_value(), grid.max_value());
    let span = hi - lo;
    let levels = grid
        .values()
        .iter()
        .map(|v| {
            if span > 0.0 {
                ((v - lo) / span * 65535.0).round() as u16
            } else {
                0
            }
        })
        .collect();
    (levels, lo, hi)
}

/// Writes the preview and its range sidecar; returns both paths.
pub fn export_png(grid: &ScalarGrid, png: &Path) -> Result<(PathBuf, PathBuf)> {
    anyhow::ensure!(grid.all_finite(), "grid has non-finite values");
    let (levels, lo, hi) = quantize(grid);
    let img: ImageBuffer<Luma<u16>, Vec<u16>> =
        ImageBuffer::from_raw(grid.width() as u32, grid.height() as u32, levels)
            .context("image buffer size")?;
    img.save_with_format(png, image::ImageFormat::Png)
        .with_context(|| format!("writing {}", png.display()))?;
    let mut side = Report::new();
    side.push("min", lo);
    side.push("max", hi);
    side.push("levels", 65535);
    let sidecar = sidecar_path(png);
    side.write(&sidecar)?;
    Ok((png.to_path_buf(), sidecar))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantize_spans_full_range() {
        let g = ScalarGrid::new(1, 3, vec![2.0, 3.0, 4.0]).unwrap();
        let (l, lo, hi) = quantize(&g);
        assert_eq!(l, vec![0, 32768, 65535]);
        assert_eq!((lo, hi), (2.0, 4.0));
        assert_eq!(quantize(&ScalarGrid::filled(2, 2, 5.0)).0, vec![0; 4]);
    }

    #[test]
    fn sidecar_name() {
        assert_eq!(
            sidecar_path(Path::new("/x/depth.png")),
            Path::new("/x/depth.png.range.txt")
        );
    }
}
