//! Image decoding for perceptual hashing.

use std::path::{Path, PathBuf};

use image::DynamicImage;
use mknn_core::phash::{self, PerceptualHash, Raster};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// One gallery or query item of a dedup run. `image` is resolved against
/// the directory of the file that lists it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Item {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image: Option<String>,
    pub caption: String,
}

/// Grayscale images hash from their single channel; everything else from
/// 8-bit RGB, ignoring alpha.
pub fn hash_image(img: &DynamicImage) -> PerceptualHash {
    let (w, h) = (img.width() as usize, img.height() as usize);
    if img.color().has_color() {
        let rgb = img.to_rgb8();
        phash::phash(&Raster::new(w, h, 3, rgb.as_raw()).expect("decoded raster"))
    } else {
        let luma = img.to_luma8();
        phash::phash(&Raster::new(w, h, 1, luma.as_raw()).expect("decoded raster"))
    }
}

pub fn hash_file(path: &Path) -> Result<PerceptualHash, String> {
    let img = image::open(path).map_err(|e| e.to_string())?;
    if img.width() == 0 || img.height() == 0 {
        return Err("image has no pixels".into());
    }
    Ok(hash_image(&img))
}

/// Hashes every path in parallel, preserving order.
pub fn hash_files(paths: &[PathBuf]) -> Vec<Result<PerceptualHash, String>> {
    paths.par_iter().map(|p| hash_file(p)).collect()
}
