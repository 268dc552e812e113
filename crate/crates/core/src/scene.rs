//! Two-view training sample.

use crate::error::{Error, Result};
use crate::geometry::{CameraIntrinsics, PoseSE3};
use crate::grid::{Image, ScalarGrid};
use crate::prior::NormalGrid;

/// Images, ground truth and pseudo-depth for a source/target view pair.
///
/// View a is the target whose depth is refined; view b is the source that
/// `pose_ab` maps into.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneSample {
    pub intrinsics: CameraIntrinsics,
    pub image_a: Image,
    pub image_b: Image,
    pub depth_a: ScalarGrid,
    pub depth_b: ScalarGrid,
    pub pose_ab: PoseSE3,
    /// 1 on pixels of independently moving objects in view a.
    pub dynamic_mask: ScalarGrid,
    pub pseudo_depth: ScalarGrid,
    pub normals_a: NormalGrid,
}

impl SceneSample {
    pub fn width(&self) -> usize {
        self.intrinsics.width
    }

    pub fn height(&self) -> usize {
        self.intrinsics.height
    }

    pub fn validate(&self) -> Result<()> {
        self.intrinsics.validate()?;
        self.pose_ab.validate()?;
        let k = &self.intrinsics;
        for g in [
            &self.depth_a,
            &self.depth_b,
            &self.dynamic_mask,
            &self.pseudo_depth,
        ] {
            k.ensure_matches(g)?;
        }
        k.ensure_matches(&self.image_a.channels()[0])?;
        self.image_a
            .ensure_same_shape(&self.image_b, "scene images")?;
        self.depth_a.ensure_positive()?;
        self.depth_b.ensure_positive()?;
        self.pseudo_depth.ensure_positive()?;
        if !self.dynamic_mask.is_binary() {
            return Err(Error::Contract("dynamic mask must be binary".into()));
        }
        if self.normals_a.width != k.width || self.normals_a.height != k.height {
            return Err(Error::Shape("normal grid does not match the camera".into()));
        }
        Ok(())
    }

    /// The `width` x `height` window at `(x0, y0)` with intrinsics shifted accordingly.
    pub fn crop(&self, x0: usize, y0: usize, width: usize, height: usize) -> Result<Self> {
        let normals = NormalGrid {
            height,
            width,
            normals: (0..height)
                .flat_map(|y| (0..width).map(move |x| (x, y)))
                .map(|(x, y)| self.normals_a.get(x0 + x, y0 + y))
                .collect(),
            degenerate: Vec::new(),
        };
        Ok(Self {
            intrinsics: self.intrinsics.crop(x0, y0, width, height)?,
            image_a: self.image_a.crop(x0, y0, width, height)?,
            image_b: self.image_b.crop(x0, y0, width, height)?,
            depth_a: self.depth_a.crop(x0, y0, width, height)?,
            depth_b: self.depth_b.crop(x0, y0, width, height)?,
            pose_ab: self.pose_ab,
            dynamic_mask: self.dynamic_mask.crop(x0, y0, width, height)?,
            pseudo_depth: self.pseudo_depth.crop(x0, y0, width, height)?,
            normals_a: normals,
        })
    }

    /// Centered crop of at most `size` x `size` pixels.
    pub fn center_crop(&self, size: usize) -> Result<Self> {
        let (w, h) = (size.min(self.width()), size.min(self.height()));
        self.crop((self.width() - w) / 2, (self.height() - h) / 2, w, h)
    }
}
