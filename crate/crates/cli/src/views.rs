//! Posed view directories: `NNNN.llfm` feature maps next to `NNNN.pose`
//! text files holding the camera and the world-to-camera pose.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use anyhow::{bail, Context};
use gsloc_core::field::TrainView;
use gsloc_core::pipeline::QueryCase;
use gsloc_core::scene::{load_feature_map, save_feature_map, Camera, Pose};
use nalgebra::{Matrix3, Vector3};

pub fn pose_to_text(camera: &Camera, pose: &Pose) -> String {
    let mut s = String::new();
    let r = &pose.rotation;
    let t = &pose.translation;
    let _ = writeln!(s, "width = {}", camera.width);
    let _ = writeln!(s, "height = {}", camera.height);
    let _ = writeln!(s, "fx = {}\nfy = {}\ncx = {}\ncy = {}", camera.fx, camera.fy, camera.cx, camera.cy);
    let rows: Vec<String> = (0..3).flat_map(|i| (0..3).map(move |j| r[(i, j)].to_string())).collect();
    let _ = writeln!(s, "rotation = {}", rows.join(" "));
    let _ = writeln!(s, "translation = {} {} {}", t.x, t.y, t.z);
    s
}

pub fn parse_pose(text: &str) -> anyhow::Result<(Camera, Pose)> {
    let mut size = [None; 2];
    let mut intr = [None; 4];
    let mut rot = None;
    let mut trans = None;
    let numbers = |v: &str, n: usize, key: &str| -> anyhow::Result<Vec<f64>> {
        let xs: Vec<f64> = v
            .split_whitespace()
            .map(str::parse)
            .collect::<Result<_, _>>()
            .with_context(|| format!("bad number in {key}"))?;
        if xs.len() != n {
            bail!("{key} needs {n} values, got {}", xs.len());
        }
        Ok(xs)
    };
    for line in text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
        let Some((k, v)) = line.split_once('=') else {
            bail!("expected `key = value`, got {line:?}");
        };
        let (k, v) = (k.trim(), v.trim());
        match k {
            "width" => size[0] = Some(v.parse::<usize>()?),
            "height" => size[1] = Some(v.parse::<usize>()?),
            "fx" => intr[0] = Some(v.parse::<f64>()?),
            "fy" => intr[1] = Some(v.parse::<f64>()?),
            "cx" => intr[2] = Some(v.parse::<f64>()?),
            "cy" => intr[3] = Some(v.parse::<f64>()?),
            "rotation" => rot = Some(Matrix3::from_row_slice(&numbers(v, 9, k)?)),
            "translation" => trans = Some(Vector3::from_row_slice(&numbers(v, 3, k)?)),
            _ => bail!("unknown key {k:?}"),
        }
    }
    let ([Some(w), Some(h)], [Some(fx), Some(fy), Some(cx), Some(cy)], Some(r), Some(t)) = (size, intr, rot, trans) else {
        bail!("pose file needs width, height, fx, fy, cx, cy, rotation and translation");
    };
    let camera = Camera::new(fx, fy, cx, cy, w, h)?;
    let pose = Pose { rotation: r, translation: t };
    if !pose.is_valid(1e-6) {
        bail!("rotation is not orthonormal");
    }
    Ok((camera, pose))
}

pub fn load_pose(path: &Path) -> anyhow::Result<(Camera, Pose)> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    parse_pose(&text).with_context(|| format!("in {}", path.display()))
}

pub fn write_views(dir: &Path, camera: &Camera, cases: &[QueryCase]) -> anyhow::Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    for c in cases {
        save_feature_map(&c.query, dir.join(format!("{:04}.llfm", c.id)))?;
        fs::write(dir.join(format!("{:04}.pose", c.id)), pose_to_text(camera, &c.pose))?;
    }
    Ok(())
}

/// Every `*.llfm` in `dir` with its `.pose` sibling, in file-name order.
pub fn load_views(dir: &Path) -> anyhow::Result<Vec<TrainView>> {
    let mut maps: Vec<_> = fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "llfm"))
        .collect();
    maps.sort();
    maps.iter()
        .map(|p| {
            let (camera, pose) = load_pose(&p.with_extension("pose"))?;
            let target = load_feature_map(p).with_context(|| format!("reading {}", p.display()))?;
            Ok(TrainView { camera, pose, target })
        })
        .collect()
}
