//! PNG codecs for images, trimaps and mattes; corpora on disk; click files.
//!
//! Trimap PNGs are 8-bit grayscale with background 0, unknown 128 and
//! foreground 255. Alpha PNGs are 8-bit grayscale.

use std::fs;
use std::path::Path;

use image::{ExtendedColorType, ImageEncoder};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::training::SyntheticSample;
use crate::types::{AlphaMatte, Click, Image, LabelClass, Raster, Trimap};

fn encode_png(bytes: &[u8], w: usize, h: usize, color: ExtendedColorType) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    image::codecs::png::PngEncoder::new(&mut out).write_image(bytes, w as u32, h as u32, color)?;
    Ok(out)
}

fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn image_to_png(img: &Image) -> Result<Vec<u8>> {
    let bytes: Vec<u8> = img.data().iter().flat_map(|p| p.map(quantize)).collect();
    encode_png(&bytes, img.width(), img.height(), ExtendedColorType::Rgb8)
}

/// Width and height from the image header, without decoding pixels.
pub fn image_dimensions(bytes: &[u8]) -> Result<(usize, usize)> {
    let reader = image::ImageReader::new(std::io::Cursor::new(bytes))
        .with_guessed_format()
        .map_err(|e| Error::io("<memory>", e))?;
    let (w, h) = reader.into_dimensions()?;
    Ok((w as usize, h as usize))
}

/// Decodes any supported image format to RGB in `[0, 1]`.
pub fn image_from_bytes(bytes: &[u8]) -> Result<Image> {
    let rgb = image::load_from_memory(bytes)?.to_rgb8();
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    let data = rgb
        .pixels()
        .map(|p| p.0.map(|c| c as f32 / 255.0))
        .collect();
    Raster::from_vec(w, h, data)
}

pub fn trimap_to_png(t: &Trimap) -> Result<Vec<u8>> {
    let bytes: Vec<u8> = t.data().iter().map(|l| l.to_u8()).collect();
    encode_png(&bytes, t.width(), t.height(), ExtendedColorType::L8)
}

/// Decodes a grayscale trimap; values other than 0, 128 and 255 are rejected.
pub fn trimap_from_bytes(bytes: &[u8]) -> Result<Trimap> {
    let gray = image::load_from_memory(bytes)?.to_luma8();
    let (w, h) = (gray.width() as usize, gray.height() as usize);
    let data = gray
        .pixels()
        .map(|p| {
            match p.0[0] {
                v @ (0 | 128 | 255) => Ok(LabelClass::from_u8(v)),
                v => Err(Error::OutOfRange(format!("trimap value {v} is not 0, 128 or 255"))),
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Raster::from_vec(w, h, data)
}

pub fn alpha_to_png(a: &AlphaMatte) -> Result<Vec<u8>> {
    let bytes: Vec<u8> = a.data().iter().map(|&v| quantize(v)).collect();
    encode_png(&bytes, a.width(), a.height(), ExtendedColorType::L8)
}

pub fn alpha_from_bytes(bytes: &[u8]) -> Result<AlphaMatte> {
    let gray = image::load_from_memory(bytes)?.to_luma8();
    let (w, h) = (gray.width() as usize, gray.height() as usize);
    Raster::from_vec(w, h, gray.pixels().map(|p| p.0[0] as f32 / 255.0).collect())
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_image(path: &Path) -> Result<Image> {
    image_from_bytes(&read(path)?)
}

pub fn save_image(path: &Path, img: &Image) -> Result<()> {
    write(path, &image_to_png(img)?)
}

pub fn load_trimap(path: &Path) -> Result<Trimap> {
    trimap_from_bytes(&read(path)?)
}

pub fn save_trimap(path: &Path, t: &Trimap) -> Result<()> {
    write(path, &trimap_to_png(t)?)
}

pub fn load_alpha(path: &Path) -> Result<AlphaMatte> {
    alpha_from_bytes(&read(path)?)
}

pub fn save_alpha(path: &Path, a: &AlphaMatte) -> Result<()> {
    write(path, &alpha_to_png(a)?)
}

/// Written next to a corpus as `manifest.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub seed: Option<u64>,
    pub size: Option<usize>,
    pub ids: Vec<String>,
    pub hash: String,
}

pub const CORPUS_MANIFEST: &str = "manifest.json";

/// SHA-256 over ids, dimensions and the raw pixel data of every sample.
pub fn corpus_hash(samples: &[SyntheticSample]) -> String {
    let mut h = Sha256::new();
    for s in samples {
        h.update((s.id.len() as u64).to_le_bytes());
        h.update(s.id.as_bytes());
        h.update((s.image.width() as u64).to_le_bytes());
        h.update((s.image.height() as u64).to_le_bytes());
        for p in s.image.data() {
            for c in p {
                h.update(c.to_le_bytes());
            }
        }
        for a in s.gt_alpha.data() {
            h.update(a.to_le_bytes());
        }
        let labels: Vec<u8> = s.gt_trimap.data().iter().map(|l| l.to_u8()).collect();
        h.update(&labels);
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// Writes `images/`, `alphas/` and `trimaps/` PNGs plus a manifest. Images
/// and mattes are quantized to 8 bits, so reloading gives the quantized
/// corpus.
pub fn write_corpus(dir: &Path, samples: &[SyntheticSample], seed: Option<u64>, size: Option<usize>) -> Result<CorpusManifest> {
    for s in samples {
        save_image(&dir.join("images").join(format!("{}.png", s.id)), &s.image)?;
        save_alpha(&dir.join("alphas").join(format!("{}.png", s.id)), &s.gt_alpha)?;
        save_trimap(&dir.join("trimaps").join(format!("{}.png", s.id)), &s.gt_trimap)?;
    }
    let manifest = CorpusManifest {
        seed,
        size,
        ids: samples.iter().map(|s| s.id.clone()).collect(),
        hash: corpus_hash(samples),
    };
    write(&dir.join(CORPUS_MANIFEST), &serde_json::to_vec_pretty(&manifest)?)?;
    Ok(manifest)
}

/// Loads a corpus written by [`write_corpus`], or any directory with the same
/// layout and a manifest listing the ids.
pub fn load_corpus(dir: &Path) -> Result<(CorpusManifest, Vec<SyntheticSample>)> {
    let manifest: CorpusManifest = serde_json::from_slice(&read(&dir.join(CORPUS_MANIFEST))?)?;
    if manifest.ids.is_empty() {
        return Err(Error::Dataset(format!("{} lists no samples", dir.display())));
    }
    let samples = manifest
        .ids
        .iter()
        .map(|id| {
            let image = load_image(&dir.join("images").join(format!("{id}.png")))?;
            let gt_alpha = load_alpha(&dir.join("alphas").join(format!("{id}.png")))?;
            let gt_trimap = load_trimap(&dir.join("trimaps").join(format!("{id}.png")))?;
            image.ensure_same_dims(&gt_alpha)?;
            image.ensure_same_dims(&gt_trimap)?;
            Ok(SyntheticSample {
                id: id.clone(),
                image,
                gt_alpha,
                gt_trimap,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((manifest, samples))
}

#[derive(Deserialize)]
struct ClickEntry {
    x: i64,
    y: i64,
    label: String,
}

/// Parses `[{"x": .., "y": .., "label": "F" | "B" | "U"}, ...]`, assigning
/// ordinals in file order and checking bounds against `dims`.
pub fn parse_clicks(json: &str, dims: (usize, usize)) -> Result<Vec<Click>> {
    let entries: Vec<ClickEntry> = serde_json::from_str(json)?;
    entries
        .into_iter()
        .enumerate()
        .map(|(i, e)| {
            let label = LabelClass::from_code(&e.label)
                .ok_or_else(|| Error::OutOfRange(format!("unknown click label {:?}", e.label)))?;
            if e.x < 0 || e.y < 0 || e.x as usize >= dims.0 || e.y as usize >= dims.1 {
                return Err(Error::OutOfBounds {
                    x: e.x,
                    y: e.y,
                    width: dims.0,
                    height: dims.1,
                });
            }
            Ok(Click::new(e.x as usize, e.y as usize, label, i))
        })
        .collect()
}

pub fn load_clicks(path: &Path, dims: (usize, usize)) -> Result<Vec<Click>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_clicks(&text, dims)
}
