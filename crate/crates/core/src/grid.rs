//! Dense row-major grids: depth maps, image channels, masks and loss maps.

use crate::error::{Error, Result};

/// A height x width row-major array.
#[derive(Clone, Debug, PartialEq)]
pub struct Grid<T> {
    height: usize,
    width: usize,
    values: Vec<T>,
}

/// Real-valued grid (image channel, depth map, mask, loss map).
pub type ScalarGrid = Grid<f64>;

impl<T: Clone> Grid<T> {
    pub fn new(height: usize, width: usize, values: Vec<T>) -> Result<Self> {
        if values.len() != height * width {
            return Err(Error::Shape(format!(
                "{} values for a {height}x{width} grid",
                values.len()
            )));
        }
        Ok(Self {
            height,
            width,
            values,
        })
    }

    pub fn filled(height: usize, width: usize, value: T) -> Self {
        Self {
            height,
            width,
            values: vec![value; height * width],
        }
    }

    /// Builds a grid from `f(x, y)` where `x` is the column and `y` the row.
    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut values = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                values.push(f(x, y));
            }
        }
        Self {
            height,
            width,
            values,
        }
    }

    pub fn map<U>(&self, f: impl FnMut(&T) -> U) -> Grid<U> {
        Grid {
            height: self.height,
            width: self.width,
            values: self.values.iter().map(f).collect(),
        }
    }
}

impl<T> Grid<T> {
    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.values.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize) -> usize {
        y * self.width + x
    }

    /// Column and row of a flat index.
    #[inline]
    pub fn coords(&self, index: usize) -> (usize, usize) {
        (index % self.width, index / self.width)
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> &T {
        &self.values[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, value: T) {
        let i = self.index(x, y);
        self.values[i] = value;
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [T] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<T> {
        self.values
    }

    pub fn same_shape<U>(&self, other: &Grid<U>) -> bool {
        self.height == other.height && self.width == other.width
    }

    pub fn ensure_same_shape<U>(&self, other: &Grid<U>, what: &str) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::Shape(format!(
                "{what}: {}x{} vs {}x{}",
                self.height, self.width, other.height, other.width
            )))
        }
    }
}

impl ScalarGrid {
    pub fn zeros(height: usize, width: usize) -> Self {
        Self::filled(height, width, 0.0)
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// True when every entry is exactly 0 or 1.
    pub fn is_binary(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0 || v == 1.0)
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    /// Mean over entries whose mask value is nonzero, or `None` if the mask is empty.
    pub fn masked_mean(&self, mask: &ScalarGrid) -> Option<f64> {
        let mut sum = 0.0;
        let mut count = 0usize;
        for (v, m) in self.values.iter().zip(mask.values()) {
            if *m != 0.0 {
                sum += v;
                count += 1;
            }
        }
        (count > 0).then(|| sum / count as f64)
    }

    pub fn min_value(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_value(&self) -> f64 {
        self.values
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Rejects depth maps with any non-positive or non-finite entry.
    pub fn ensure_positive(&self) -> Result<()> {
        for (i, &v) in self.values.iter().enumerate() {
            if !(v > 0.0) || !v.is_finite() {
                let (x, y) = self.coords(i);
                return Err(Error::NonPositiveDepth { x, y, value: v });
            }
        }
        Ok(())
    }

    /// Copies the `width` x `height` window whose top-left corner is `(x0, y0)`.
    pub fn crop(&self, x0: usize, y0: usize, width: usize, height: usize) -> Result<Self> {
        if x0 + width > self.width || y0 + height > self.height {
            return Err(Error::Shape(format!(
                "crop {width}x{height}+{x0}+{y0} exceeds {}x{}",
                self.width, self.height
            )));
        }
        Ok(Self::from_fn(height, width, |x, y| {
            *self.get(x0 + x, y0 + y)
        }))
    }
}

/// Multi-channel image with values nominally in [0, 1].
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    channels: Vec<ScalarGrid>,
}

impl Image {
    pub fn new(channels: Vec<ScalarGrid>) -> Result<Self> {
        let first = channels
            .first()
            .ok_or_else(|| Error::Shape("image with no channels".into()))?;
        for c in &channels[1..] {
            first.ensure_same_shape(c, "image channels")?;
        }
        Ok(Self { channels })
    }

    pub fn gray(grid: ScalarGrid) -> Self {
        Self {
            channels: vec![grid],
        }
    }

    pub fn channels(&self) -> &[ScalarGrid] {
        &self.channels
    }

    pub fn channel_count(&self) -> usize {
        self.channels.len()
    }

    pub fn height(&self) -> usize {
        self.channels[0].height()
    }

    pub fn width(&self) -> usize {
        self.channels[0].width()
    }

    /// Channel mean per pixel.
    pub fn luminance(&self) -> ScalarGrid {
        let n = self.channels.len() as f64;
        let mut out = ScalarGrid::zeros(self.height(), self.width());
        for c in &self.channels {
            for (o, v) in out.values_mut().iter_mut().zip(c.values()) {
                *o += v / n;
            }
        }
        out
    }

    pub fn ensure_same_shape(&self, other: &Image, what: &str) -> Result<()> {
        if self.channel_count() != other.channel_count() {
            return Err(Error::Shape(format!(
                "{what}: {} vs {} channels",
                self.channel_count(),
                other.channel_count()
            )));
        }
        self.channels[0].ensure_same_shape(&other.channels[0], what)
    }

    pub fn crop(&self, x0: usize, y0: usize, width: usize, height: usize) -> Result<Self> {
        let channels = self
            .channels
            .iter()
            .map(|c| c.crop(x0, y0, width, height))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { channels })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_wrong_length() {
        assert!(ScalarGrid::new(2, 3, vec![0.0; 5]).is_err());
    }

    #[test]
    fn from_fn_is_row_major() {
        let g = ScalarGrid::from_fn(2, 3, |x, y| (10 * y + x) as f64);
        assert_eq!(g.values(), &[0.0, 1.0, 2.0, 10.0, 11.0, 12.0]);
        assert_eq!(g.coords(4), (1, 1));
    }

    #[test]
    fn ensure_positive_names_pixel() {
        let mut g = ScalarGrid::filled(2, 2, 1.0);
        g.set(1, 0, 0.0);
        match g.ensure_positive() {
            Err(Error::NonPositiveDepth { x: 1, y: 0, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn masked_mean_ignores_zero_mask() {
        let g = ScalarGrid::new(1, 4, vec![1.0, 2.0, 3.0, 100.0]).unwrap();
        let m = ScalarGrid::new(1, 4, vec![1.0, 1.0, 1.0, 0.0]).unwrap();
        assert_eq!(g.masked_mean(&m), Some(2.0));
        assert_eq!(g.masked_mean(&ScalarGrid::zeros(1, 4)), None);
    }
}
