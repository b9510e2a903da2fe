//! Multi-view scene container and its on-disk layout.
//!
//! ```text
//! scene/cameras.json          [{width, height, intrinsics[9], extrinsics[16]}]
//! scene/images/%04d.png       8-bit RGB
//! scene/depth/%04d.pfm        optional, little-endian PFM
//! scene/masks_gt/%04d.png     optional, 0 = distractor, 255 = static
//! scene/entities/%04d.png     optional, 16-bit entity IDs
//! scene/clean/%04d.png        optional, distractor-free plates
//! ```

use std::path::{Path, PathBuf};

use image::{GrayImage, ImageBuffer as PngBuffer, Luma, RgbImage};
use nalgebra::{Matrix3, Matrix4};
use serde::{Deserialize, Serialize};

use crate::error::{check_dims, Error, Result};
use crate::real::Real;
use crate::scene_model::{BinaryMask, Camera, DepthMap, EntityMap, ImageBuffer};

#[derive(Clone, Debug, PartialEq)]
pub struct SceneDataset<T: Real> {
    pub name: String,
    pub cameras: Vec<Camera<T>>,
    pub images: Vec<ImageBuffer<T>>,
    pub depths: Option<Vec<DepthMap<T>>>,
    /// Ground-truth distractor masks (0 = distractor).
    pub distractor_masks: Option<Vec<BinaryMask>>,
    pub entities: Option<Vec<EntityMap>>,
    /// Distractor-free plates kept for evaluation.
    pub clean_images: Option<Vec<ImageBuffer<T>>>,
}

impl<T: Real> SceneDataset<T> {
    pub fn new(name: impl Into<String>, cameras: Vec<Camera<T>>, images: Vec<ImageBuffer<T>>) -> Result<Self> {
        let ds = Self {
            name: name.into(),
            cameras,
            images,
            depths: None,
            distractor_masks: None,
            entities: None,
            clean_images: None,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn len(&self) -> usize {
        self.cameras.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cameras.is_empty()
    }

    /// Checks sequence lengths and per-view raster dimensions.
    pub fn validate(&self) -> Result<()> {
        let n = self.cameras.len();
        let len_check = |what: &str, len: usize| -> Result<()> {
            if len != n {
                return Err(Error::Dataset(format!("length mismatch: {n} cameras but {len} {what}")));
            }
            Ok(())
        };
        len_check("images", self.images.len())?;
        for (cam, img) in self.cameras.iter().zip(&self.images) {
            check_dims("dataset image", cam.dims(), img.dims())?;
        }
        if let Some(d) = &self.depths {
            len_check("depth maps", d.len())?;
            for (cam, r) in self.cameras.iter().zip(d) {
                check_dims("dataset depth", cam.dims(), r.dims())?;
            }
        }
        if let Some(d) = &self.distractor_masks {
            len_check("distractor masks", d.len())?;
            for (cam, r) in self.cameras.iter().zip(d) {
                check_dims("dataset mask", cam.dims(), r.dims())?;
            }
        }
        if let Some(d) = &self.entities {
            len_check("entity maps", d.len())?;
            for (cam, r) in self.cameras.iter().zip(d) {
                check_dims("dataset entities", cam.dims(), r.dims())?;
            }
        }
        if let Some(d) = &self.clean_images {
            len_check("clean images", d.len())?;
            for (cam, r) in self.cameras.iter().zip(d) {
                check_dims("dataset clean image", cam.dims(), r.dims())?;
            }
        }
        Ok(())
    }
}

/// One entry of `cameras.json`; matrices are row-major decimal strings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraRecord {
    pub width: usize,
    pub height: usize,
    pub intrinsics: Vec<String>,
    pub extrinsics: Vec<String>,
}

impl CameraRecord {
    pub fn from_camera<T: Real>(cam: &Camera<T>) -> Self {
        let k = cam.intrinsics();
        let e = cam.extrinsics();
        Self {
            width: cam.width(),
            height: cam.height(),
            intrinsics: (0..3).flat_map(|r| (0..3).map(move |c| (r, c))).map(|(r, c)| k[(r, c)].to_string()).collect(),
            extrinsics: (0..4).flat_map(|r| (0..4).map(move |c| (r, c))).map(|(r, c)| e[(r, c)].to_string()).collect(),
        }
    }

    pub fn to_camera<T: Real>(&self) -> Result<Camera<T>> {
        let parse = |s: &String| -> Result<T> {
            s.trim().parse::<T>().map_err(|_| Error::Dataset(format!("camera entry {s:?} is not a decimal number")))
        };
        if self.intrinsics.len() != 9 || self.extrinsics.len() != 16 {
            return Err(Error::Dataset(format!(
                "camera record needs 9 intrinsics and 16 extrinsics, got {} and {}",
                self.intrinsics.len(),
                self.extrinsics.len()
            )));
        }
        let k: Vec<T> = self.intrinsics.iter().map(parse).collect::<Result<_>>()?;
        let e: Vec<T> = self.extrinsics.iter().map(parse).collect::<Result<_>>()?;
        let k = Matrix3::from_row_slice(&k);
        let e = Matrix4::from_row_slice(&e);
        Camera::new(k, e, self.width, self.height).map_err(|err| Error::Dataset(err.to_string()))
    }
}

pub(crate) fn frame_name(dir: &Path, index: usize, ext: &str) -> PathBuf {
    dir.join(format!("{index:04}.{ext}"))
}

pub fn write_json<S: Serialize>(path: &Path, value: &S) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::json(path, e))?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub fn read_json<D: for<'de> Deserialize<'de>>(path: &Path) -> Result<D> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(path, e))
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn image_err(path: &Path, source: image::ImageError) -> Error {
    Error::Image { path: path.to_path_buf(), source }
}

pub fn save_image_png<T: Real>(path: &Path, img: &ImageBuffer<T>) -> Result<()> {
    let bytes: Vec<u8> = img.data().iter().map(|c| (c.as_f64() * 255.0).round().clamp(0.0, 255.0) as u8).collect();
    let out =
        RgbImage::from_raw(img.width() as u32, img.height() as u32, bytes).expect("buffer sized from image dimensions");
    out.save(path).map_err(|e| image_err(path, e))
}

pub fn load_image_png<T: Real>(path: &Path) -> Result<ImageBuffer<T>> {
    let img = image::open(path).map_err(|e| image_err(path, e))?.to_rgb8();
    let (w, h) = img.dimensions();
    let data = img.into_raw().into_iter().map(|b| T::lit(b as f64 / 255.0)).collect();
    ImageBuffer::new(w as usize, h as usize, data)
}

pub fn save_mask_png(path: &Path, mask: &BinaryMask) -> Result<()> {
    let bytes = mask.data().iter().map(|b| if *b { 255u8 } else { 0 }).collect();
    let out = GrayImage::from_raw(mask.width() as u32, mask.height() as u32, bytes)
        .expect("buffer sized from mask dimensions");
    out.save(path).map_err(|e| image_err(path, e))
}

pub fn load_mask_png(path: &Path) -> Result<BinaryMask> {
    let img = image::open(path).map_err(|e| image_err(path, e))?.to_luma8();
    let (w, h) = img.dimensions();
    let mut data = Vec::with_capacity((w * h) as usize);
    for v in img.into_raw() {
        match v {
            0 => data.push(false),
            255 => data.push(true),
            other => {
                return Err(Error::Dataset(format!("{}: mask value {other} is neither 0 nor 255", path.display())))
            }
        }
    }
    BinaryMask::new(w as usize, h as usize, data)
}

pub fn save_entities_png(path: &Path, map: &EntityMap) -> Result<()> {
    let mut px = Vec::with_capacity(map.data().len());
    for id in map.data() {
        let v =
            u16::try_from(*id).map_err(|_| Error::InvalidInput(format!("entity ID {id} exceeds 16-bit storage")))?;
        px.push(v);
    }
    let out: PngBuffer<Luma<u16>, Vec<u16>> = PngBuffer::from_raw(map.width() as u32, map.height() as u32, px)
        .expect("buffer sized from entity map dimensions");
    out.save(path).map_err(|e| image_err(path, e))
}

pub fn load_entities_png(path: &Path) -> Result<EntityMap> {
    let img = image::open(path).map_err(|e| image_err(path, e))?.to_luma16();
    let (w, h) = img.dimensions();
    let data = img.into_raw().into_iter().map(u32::from).collect();
    EntityMap::new(w as usize, h as usize, data)
}

pub fn save_dataset<T: Real>(dataset: &SceneDataset<T>, dir: &Path) -> Result<()> {
    dataset.validate()?;
    create_dir(&dir.join("images"))?;
    let records: Vec<CameraRecord> = dataset.cameras.iter().map(CameraRecord::from_camera).collect();
    write_json(&dir.join("cameras.json"), &records)?;
    for (i, img) in dataset.images.iter().enumerate() {
        save_image_png(&frame_name(&dir.join("images"), i, "png"), img)?;
    }
    if let Some(depths) = &dataset.depths {
        let sub = dir.join("depth");
        create_dir(&sub)?;
        for (i, d) in depths.iter().enumerate() {
            super::pfm::write_depth_pfm(&frame_name(&sub, i, "pfm"), d)?;
        }
    }
    if let Some(masks) = &dataset.distractor_masks {
        let sub = dir.join("masks_gt");
        create_dir(&sub)?;
        for (i, m) in masks.iter().enumerate() {
            save_mask_png(&frame_name(&sub, i, "png"), m)?;
        }
    }
    if let Some(ents) = &dataset.entities {
        let sub = dir.join("entities");
        create_dir(&sub)?;
        for (i, m) in ents.iter().enumerate() {
            save_entities_png(&frame_name(&sub, i, "png"), m)?;
        }
    }
    if let Some(clean) = &dataset.clean_images {
        let sub = dir.join("clean");
        create_dir(&sub)?;
        for (i, img) in clean.iter().enumerate() {
            save_image_png(&frame_name(&sub, i, "png"), img)?;
        }
    }
    Ok(())
}

fn count_frames(dir: &Path, ext: &str) -> Result<usize> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut n = 0;
    for e in entries {
        let e = e.map_err(|err| Error::io(dir, err))?;
        if e.path().extension().and_then(|s| s.to_str()) == Some(ext) {
            n += 1;
        }
    }
    Ok(n)
}

fn load_optional<R>(
    dir: &Path,
    sub: &str,
    ext: &str,
    n: usize,
    mut load: impl FnMut(&Path) -> Result<R>,
) -> Result<Option<Vec<R>>> {
    let sub = dir.join(sub);
    if !sub.is_dir() {
        return Ok(None);
    }
    let found = count_frames(&sub, ext)?;
    if found != n {
        return Err(Error::Dataset(format!("length mismatch: {n} cameras but {found} files in {}", sub.display())));
    }
    (0..n)
        .map(|i| {
            let p = frame_name(&sub, i, ext);
            if !p.is_file() {
                return Err(Error::Dataset(format!("missing file {}", p.display())));
            }
            load(&p)
        })
        .collect::<Result<Vec<_>>>()
        .map(Some)
}

pub fn load_dataset<T: Real>(dir: &Path) -> Result<SceneDataset<T>> {
    let cam_path = dir.join("cameras.json");
    if !cam_path.is_file() {
        return Err(Error::Dataset(format!("missing file {}", cam_path.display())));
    }
    let records: Vec<CameraRecord> = read_json(&cam_path)?;
    let cameras: Vec<Camera<T>> = records.iter().map(|r| r.to_camera()).collect::<Result<_>>()?;
    let n = cameras.len();
    let images = load_optional(dir, "images", "png", n, |p| load_image_png(p))?
        .ok_or_else(|| Error::Dataset(format!("missing directory {}", dir.join("images").display())))?;
    let depths = load_optional(dir, "depth", "pfm", n, |p| {
        let (w, h, data) = super::pfm::read_pfm(p)?;
        DepthMap::new(w, h, data.into_iter().map(|v| T::lit(v as f64)).collect())
    })?;
    let distractor_masks = load_optional(dir, "masks_gt", "png", n, load_mask_png)?;
    let entities = load_optional(dir, "entities", "png", n, load_entities_png)?;
    let clean_images = load_optional(dir, "clean", "png", n, |p| load_image_png(p))?;
    let name = dir.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "scene".into());
    let ds = SceneDataset { name, cameras, images, depths, distractor_masks, entities, clean_images };
    ds.validate()?;
    Ok(ds)
}
