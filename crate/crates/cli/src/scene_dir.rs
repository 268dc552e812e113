//! A scene stored as grid files plus a `manifest.txt`.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use depthprior_core::geometry::{CameraIntrinsics, PoseSE3};
use depthprior_core::grid::{Image, ScalarGrid};
use depthprior_core::gridfile::{read_grid, read_grids, write_grid, write_grids, DType};
use depthprior_core::prior::NormalGrid;
use depthprior_core::scene::SceneSample;

use crate::report::{join_floats, parse_floats, Report};

pub const MANIFEST: &str = "manifest.txt";
pub const FORMAT: &str = "depthprior-scene";

/// Grid files of a scene directory, in manifest order.
pub const FILES: [&str; 9] = [
    "image_a",
    "image_b",
    "depth_a",
    "depth_b",
    "dynamic_mask",
    "pseudo_depth",
    "normal_x",
    "normal_y",
    "normal_z",
];

fn file_name(name: &str) -> String {
    format!("{name}.grid")
}

/// Writes every grid of `sample` and the manifest; returns the paths written.
pub fn write_scene(
    dir: &Path,
    sample: &SceneSample,
    seed: u64,
    preset: &str,
) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let (h, w) = (sample.height(), sample.width());
    let normal = |k: usize| {
        ScalarGrid::new(
            h,
            w,
            sample.normals_a.normals.iter().map(|n| n[k]).collect(),
        )
    };
    let grids: [Vec<ScalarGrid>; 9] = [
        sample.image_a.channels().to_vec(),
        sample.image_b.channels().to_vec(),
        vec![sample.depth_a.clone()],
        vec![sample.depth_b.clone()],
        vec![sample.dynamic_mask.clone()],
        vec![sample.pseudo_depth.clone()],
        vec![normal(0)?],
        vec![normal(1)?],
        vec![normal(2)?],
    ];
    let mut written = Vec::new();
    for (name, channels) in FILES.iter().zip(&grids) {
        let path = dir.join(file_name(name));
        write_grids(&path, channels, DType::F64)
            .with_context(|| format!("writing {}", path.display()))?;
        written.push(path);
    }
    let k = &sample.intrinsics;
    let mut m = Report::new();
    m.push("format", FORMAT);
    m.push("version", 1);
    m.push("seed", seed);
    m.push("preset", preset);
    m.push("width", w);
    m.push("height", h);
    m.push("intrinsics", join_floats(&[k.fx, k.fy, k.cx, k.cy]));
    m.push("pose_ab", join_floats(&sample.pose_ab.to_rows()));
    for name in FILES {
        m.push(format!("file.{name}"), file_name(name));
    }
    let path = dir.join(MANIFEST);
    m.write(&path)?;
    written.push(path);
    Ok(written)
}

fn required<'a>(m: &'a Report, key: &str, path: &Path) -> Result<&'a str> {
    m.get(key)
        .with_context(|| format!("{} lacks `{key}`", path.display()))
}

/// Reads a scene directory written by `write_scene`.
pub fn read_scene(dir: &Path) -> Result<(SceneSample, Report)> {
    let manifest_path = dir.join(MANIFEST);
    let text = std::fs::read_to_string(&manifest_path)
        .with_context(|| format!("cannot read scene manifest {}", manifest_path.display()))?;
    let m = Report::parse(&text).with_context(|| format!("parsing {}", manifest_path.display()))?;
    if m.get("format") != Some(FORMAT) {
        bail!("{} is not a scene manifest", manifest_path.display());
    }
    let width: usize = required(&m, "width", &manifest_path)?
        .parse()
        .context("width")?;
    let height: usize = required(&m, "height", &manifest_path)?
        .parse()
        .context("height")?;
    let k = parse_floats(required(&m, "intrinsics", &manifest_path)?)?;
    if k.len() != 4 {
        bail!("intrinsics need 4 values, got {}", k.len());
    }
    let intrinsics = CameraIntrinsics::new(k[0], k[1], k[2], k[3], width, height)?;
    let rows: [f64; 12] = parse_floats(required(&m, "pose_ab", &manifest_path)?)?
        .try_into()
        .map_err(|v: Vec<f64>| anyhow::anyhow!("pose_ab needs 12 values, got {}", v.len()))?;
    let pose_ab = PoseSE3::from_rows(rows)?;

    let load = |name: &str| -> Result<Vec<ScalarGrid>> {
        let file = required(&m, &format!("file.{name}"), &manifest_path)?;
        let path = dir.join(file);
        let grids = read_grids(&path)
            .with_context(|| format!("cannot read scene file {}", path.display()))?;
        if grids[0].width() != width || grids[0].height() != height {
            bail!(
                "{} is {}x{}, manifest says {width}x{height}",
                path.display(),
                grids[0].width(),
                grids[0].height()
            );
        }
        Ok(grids)
    };
    let single = |name: &str| -> Result<ScalarGrid> {
        let mut g = load(name)?;
        if g.len() != 1 {
            bail!(
                "scene file for `{name}` has {} channels, expected 1",
                g.len()
            );
        }
        Ok(g.remove(0))
    };
    let (nx, ny, nz) = (
        single("normal_x")?,
        single("normal_y")?,
        single("normal_z")?,
    );
    let normals_a = NormalGrid {
        height,
        width,
        normals: (0..width * height)
            .map(|i| [nx.values()[i], ny.values()[i], nz.values()[i]])
            .collect(),
        degenerate: Vec::new(),
    };
    let sample = SceneSample {
        intrinsics,
        image_a: Image::new(load("image_a")?)?,
        image_b: Image::new(load("image_b")?)?,
        depth_a: single("depth_a")?,
        depth_b: single("depth_b")?,
        pose_ab,
        dynamic_mask: single("dynamic_mask")?,
        pseudo_depth: single("pseudo_depth")?,
        normals_a,
    };
    sample.validate()?;
    Ok((sample, m))
}

/// A depth argument: `gt` selects the scene's ground truth, anything else is a grid file.
pub fn depth_arg(arg: &str, gt: &ScalarGrid) -> Result<ScalarGrid> {
    if arg == "gt" {
        return Ok(gt.clone());
    }
    let path = Path::new(arg);
    let grid =
        read_grid(path).with_context(|| format!("cannot read depth file {}", path.display()))?;
    if !grid.same_shape(gt) {
        bail!(
            "{} is {}x{}, scene is {}x{}",
            path.display(),
            grid.width(),
            grid.height(),
            gt.width(),
            gt.height()
        );
    }
    Ok(grid)
}

pub fn write_depth(path: &Path, depth: &ScalarGrid) -> Result<()> {
    write_grid(path, depth, DType::F64).with_context(|| format!("writing {}", path.display()))
}
