//! On-disk scene bundle:
//!
//! ```text
//! cameras.json                 background + one entry per view
//! points.ply                   initial Gaussians
//! gt.ply                       ground truth without floaters (synthetic only)
//! labels.json                  one label per Gaussian of points.ply (synthetic only)
//! recipe.json                  generator parameters (synthetic only)
//! images/<name>.png            targets
//! depth/<name>_depth.pfm       depth priors, optional
//! depth/<name>_uncert.pfm      uncertainty maps, optional
//! masks/<name>_fg.png          foreground masks, optional
//! masks/<name>_static.png      static-region masks, optional
//! ```
//!
//! Images are stored as 8-bit PNG and read back as raw `[0, 1]` values with
//! no sRGB conversion.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{read_pfm, read_png_mask, read_png_rgb, write_pfm, write_png_mask, write_png_rgb, Mask};
use crate::model::{Camera, Scene, Split, View};
use crate::ply::{load_ply_with, save_ply, PlyLoadOptions};
use crate::renderer::render;
use crate::synth::{Label, LabeledScene};
use crate::trainer::{read_json, write_json};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraRecord {
    pub name: String,
    #[serde(default = "default_split")]
    pub split: Split,
    pub width: usize,
    pub height: usize,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    /// World-to-camera rotation, row-major.
    pub rotation: [[f64; 3]; 3],
    pub translation: [f64; 3],
}

fn default_split() -> Split {
    Split::Train
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CamerasFile {
    #[serde(default)]
    pub background: [f64; 3],
    pub views: Vec<CameraRecord>,
}

impl CameraRecord {
    pub fn from_view(v: &View) -> Self {
        let c = &v.camera;
        let r = &c.rotation;
        CameraRecord {
            name: v.name.clone(),
            split: v.split,
            width: c.width,
            height: c.height,
            fx: c.fx,
            fy: c.fy,
            cx: c.cx,
            cy: c.cy,
            rotation: [0, 1, 2].map(|i| [r[(i, 0)], r[(i, 1)], r[(i, 2)]]),
            translation: [c.translation.x, c.translation.y, c.translation.z],
        }
    }

    pub fn camera(&self) -> Result<Camera> {
        let rows = self.rotation;
        Camera::new(
            self.fx,
            self.fy,
            self.cx,
            self.cy,
            self.width,
            self.height,
            Matrix3::from_row_slice(&rows.concat()),
            Vector3::from(self.translation),
        )
        .map_err(|e| Error::Config(format!("camera {}: {e}", self.name)))
    }
}

/// Optional per-view masks used by evaluation.
#[derive(Debug, Clone, Default)]
pub struct ViewMasks {
    pub foreground: Option<Mask>,
    pub static_region: Option<Mask>,
}

#[derive(Debug, Clone)]
pub struct Bundle {
    pub scene: Scene,
    pub labels: Option<Vec<Label>>,
    pub masks: Vec<ViewMasks>,
}

pub fn image_path(dir: &Path, name: &str) -> PathBuf {
    dir.join("images").join(format!("{name}.png"))
}

pub fn depth_path(dir: &Path, name: &str) -> PathBuf {
    dir.join("depth").join(format!("{name}_depth.pfm"))
}

pub fn uncert_path(dir: &Path, name: &str) -> PathBuf {
    dir.join("depth").join(format!("{name}_uncert.pfm"))
}

pub fn fg_mask_path(dir: &Path, name: &str) -> PathBuf {
    dir.join("masks").join(format!("{name}_fg.png"))
}

pub fn static_mask_path(dir: &Path, name: &str) -> PathBuf {
    dir.join("masks").join(format!("{name}_static.png"))
}

fn mkdir(p: &Path) -> Result<()> {
    fs::create_dir_all(p).map_err(|e| Error::io(p, e))
}

pub fn read_cameras(path: &Path) -> Result<CamerasFile> {
    read_json(path).map_err(|e| match e {
        Error::Json(j) => Error::Config(format!("{}: {j}", path.display())),
        other => other,
    })
}

/// Writes `scene` (cameras, initial PLY, targets, depth grids) to `dir`.
pub fn write_scene(dir: &Path, scene: &Scene) -> Result<()> {
    mkdir(dir)?;
    let cams = CamerasFile {
        background: scene.background,
        views: scene.views.iter().map(CameraRecord::from_view).collect(),
    };
    write_json(&dir.join("cameras.json"), &cams)?;
    save_ply(&scene.cloud, &dir.join("points.ply"))?;
    for v in &scene.views {
        if let Some(t) = &v.target {
            mkdir(&dir.join("images"))?;
            write_png_rgb(&image_path(dir, &v.name), t)?;
        }
        if let Some(d) = &v.depth_prior {
            mkdir(&dir.join("depth"))?;
            write_pfm(&depth_path(dir, &v.name), d)?;
        }
        if let Some(u) = &v.uncertainty {
            mkdir(&dir.join("depth"))?;
            write_pfm(&uncert_path(dir, &v.name), u)?;
        }
    }
    Ok(())
}

/// Accumulated ground-truth opacity above which a pixel is foreground. Kept
/// below the default leakage threshold so the ground truth itself never leaks.
pub const FOREGROUND_THRESHOLD: f64 = 0.01;

/// Foreground mask of the ground truth.
pub fn coverage_mask(ls: &LabeledScene, cam: &Camera) -> Mask {
    let out = render(&ls.clean, cam, ls.scene.background);
    Mask {
        width: cam.width,
        height: cam.height,
        data: out
            .final_transmittance
            .data
            .iter()
            .map(|t| 1.0 - t > FOREGROUND_THRESHOLD)
            .collect(),
    }
}

/// Writes a synthetic scene with its ground truth, labels, recipe and
/// foreground masks.
pub fn write_labeled(dir: &Path, ls: &LabeledScene) -> Result<()> {
    write_scene(dir, &ls.scene)?;
    save_ply(&ls.clean, &dir.join("gt.ply"))?;
    write_json(&dir.join("labels.json"), &ls.labels)?;
    write_json(&dir.join("recipe.json"), &ls.recipe)?;
    mkdir(&dir.join("masks"))?;
    for v in &ls.scene.views {
        write_png_mask(&fg_mask_path(dir, &v.name), &coverage_mask(ls, &v.camera))?;
    }
    Ok(())
}

/// Reads a bundle. `points` overrides the Gaussians (default `points.ply`).
pub fn read_bundle(dir: &Path, points: Option<&Path>, ply_opts: PlyLoadOptions) -> Result<Bundle> {
    let cams = read_cameras(&dir.join("cameras.json"))?;
    let ply = points.map(Path::to_path_buf).unwrap_or_else(|| dir.join("points.ply"));
    let cloud = load_ply_with(&ply, ply_opts)?;
    let mut views = Vec::with_capacity(cams.views.len());
    let mut masks = Vec::with_capacity(cams.views.len());
    for rec in &cams.views {
        let mut v = View::new(rec.name.clone(), rec.camera()?);
        v.split = rec.split;
        let optional = |p: PathBuf| p.exists().then_some(p);
        if let Some(p) = optional(image_path(dir, &rec.name)) {
            v.target = Some(read_png_rgb(&p)?);
        }
        if let Some(p) = optional(depth_path(dir, &rec.name)) {
            v.depth_prior = Some(read_pfm(&p)?);
        }
        if let Some(p) = optional(uncert_path(dir, &rec.name)) {
            v.uncertainty = Some(read_pfm(&p)?);
        }
        masks.push(ViewMasks {
            foreground: optional(fg_mask_path(dir, &rec.name)).map(|p| read_png_mask(&p)).transpose()?,
            static_region: optional(static_mask_path(dir, &rec.name))
                .map(|p| read_png_mask(&p))
                .transpose()?,
        });
        views.push(v);
    }
    let labels_path = dir.join("labels.json");
    let labels: Option<Vec<Label>> = if labels_path.exists() && points.is_none() {
        Some(read_json(&labels_path)?)
    } else {
        None
    };
    if let Some(l) = &labels {
        if l.len() != cloud.len() {
            return Err(Error::Format(format!(
                "labels.json has {} entries for {} Gaussians",
                l.len(),
                cloud.len()
            )));
        }
    }
    for (v, m) in views.iter().zip(&masks) {
        for mask in [&m.foreground, &m.static_region].into_iter().flatten() {
            if mask.width != v.camera.width || mask.height != v.camera.height {
                return Err(Error::Shape(format!("view {}: mask does not match camera", v.name)));
            }
        }
    }
    Ok(Bundle {
        scene: Scene::new(cloud, views, cams.background)?,
        labels,
        masks,
    })
}
