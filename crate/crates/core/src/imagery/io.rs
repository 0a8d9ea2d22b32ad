//! Image files and the `<root>/<split>/<class>/<files>` dataset layout.
//!
//! Two encodings are supported. `.png`: 16-bit grayscale, amplitude quantised
//! as `round(a / scale)`. `.f32`: raw little-endian 32-bit floats, row-major.
//! Both carry a sidecar `<name>.json` holding `{height, width, scale}`.

use std::fs;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::SarImage;
use crate::error::{Error, Result};

pub const UNLABELED_CLASS: &str = "unlabeled";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImageMeta {
    pub height: usize,
    pub width: usize,
    pub scale: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ImageFormat {
    #[default]
    F32,
    Png,
}

impl ImageFormat {
    pub fn extension(self) -> &'static str {
        match self {
            ImageFormat::F32 => "f32",
            ImageFormat::Png => "png",
        }
    }
}

fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

fn format_err(path: &Path, reason: impl Into<String>) -> Error {
    Error::Format {
        path: path.display().to_string(),
        reason: reason.into(),
    }
}

fn write_sidecar(path: &Path, meta: &ImageMeta) -> Result<()> {
    fs::write(sidecar_path(path), serde_json::to_vec_pretty(meta)?)?;
    Ok(())
}

fn read_sidecar(path: &Path) -> Result<Option<ImageMeta>> {
    let side = sidecar_path(path);
    if !side.exists() {
        return Ok(None);
    }
    Ok(Some(serde_json::from_slice(&fs::read(side)?)?))
}

/// Writes raw little-endian floats plus the sidecar (scale 1).
pub fn write_f32(img: &SarImage, path: &Path) -> Result<()> {
    let mut out = BufWriter::new(fs::File::create(path)?);
    for v in img.data() {
        out.write_all(&(*v as f32).to_le_bytes())?;
    }
    out.flush()?;
    write_sidecar(
        path,
        &ImageMeta {
            height: img.height(),
            width: img.width(),
            scale: 1.0,
        },
    )
}

/// Reads little-endian floats; the sidecar is required for the dimensions.
pub fn read_f32(path: &Path) -> Result<SarImage> {
    let meta = read_sidecar(path)?.ok_or_else(|| format_err(path, "missing sidecar .json"))?;
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    if bytes.len() != meta.height * meta.width * 4 {
        return Err(format_err(
            path,
            format!("expected {} bytes, found {}", meta.height * meta.width * 4, bytes.len()),
        ));
    }
    let data = bytes
        .chunks_exact(4)
        .map(|c| f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]])) * meta.scale)
        .collect();
    SarImage::new(meta.height, meta.width, data)
}

/// Writes a 16-bit grayscale PNG and returns the quantisation scale.
pub fn write_png16(img: &SarImage, path: &Path) -> Result<f64> {
    let max = img.max();
    let scale = if max > 0.0 { max / f64::from(u16::MAX) } else { 1.0 };
    let file = BufWriter::new(fs::File::create(path)?);
    let mut enc = png::Encoder::new(file, img.width() as u32, img.height() as u32);
    enc.set_color(png::ColorType::Grayscale);
    enc.set_depth(png::BitDepth::Sixteen);
    let mut writer = enc
        .write_header()
        .map_err(|e| format_err(path, e.to_string()))?;
    let mut buf = Vec::with_capacity(img.data().len() * 2);
    for v in img.data() {
        let q = (v / scale).round().clamp(0.0, f64::from(u16::MAX)) as u16;
        buf.extend_from_slice(&q.to_be_bytes());
    }
    writer
        .write_image_data(&buf)
        .map_err(|e| format_err(path, e.to_string()))?;
    writer.finish().map_err(|e| format_err(path, e.to_string()))?;
    write_sidecar(
        path,
        &ImageMeta {
            height: img.height(),
            width: img.width(),
            scale,
        },
    )?;
    Ok(scale)
}

/// Reads a grayscale PNG (8 or 16 bit). Without a sidecar the scale is 1.
pub fn read_png16(path: &Path) -> Result<SarImage> {
    let scale = read_sidecar(path)?.map_or(1.0, |m| m.scale);
    let decoder = png::Decoder::new(std::io::BufReader::new(fs::File::open(path)?));
    let mut reader = decoder
        .read_info()
        .map_err(|e| format_err(path, e.to_string()))?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| format_err(path, "image too large"))?;
    let mut buf = vec![0u8; size];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| format_err(path, e.to_string()))?;
    if info.color_type != png::ColorType::Grayscale {
        return Err(format_err(path, "expected a single-channel grayscale PNG"));
    }
    let (h, w) = (info.height as usize, info.width as usize);
    let data: Vec<f64> = match info.bit_depth {
        png::BitDepth::Sixteen => buf[..h * w * 2]
            .chunks_exact(2)
            .map(|c| f64::from(u16::from_be_bytes([c[0], c[1]])) * scale)
            .collect(),
        png::BitDepth::Eight => buf[..h * w].iter().map(|v| f64::from(*v) * scale).collect(),
        other => return Err(format_err(path, format!("unsupported bit depth {other:?}"))),
    };
    SarImage::new(h, w, data)
}

/// Dispatches on the file extension.
pub fn read_image(path: &Path) -> Result<SarImage> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("f32") => read_f32(path),
        Some("png") => read_png16(path),
        _ => Err(format_err(path, "unknown image extension (expected .f32 or .png)")),
    }
}

/// Images with integer labels indexing `class_names`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    pub class_names: Vec<String>,
    pub images: Vec<SarImage>,
    pub labels: Vec<usize>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn n_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            class_names: self.class_names.clone(),
            images: indices.iter().map(|&i| self.images[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    /// Writes `<root>/<split>/<class>/img_NNNNN.<ext>` and returns the file paths.
    pub fn save(&self, root: &Path, split: &str, format: ImageFormat) -> Result<Vec<PathBuf>> {
        let mut paths = Vec::with_capacity(self.len());
        for (i, (img, &label)) in self.images.iter().zip(&self.labels).enumerate() {
            let dir = root.join(split).join(&self.class_names[label]);
            fs::create_dir_all(&dir)?;
            let path = dir.join(format!("img_{i:05}.{}", format.extension()));
            match format {
                ImageFormat::F32 => write_f32(img, &path)?,
                ImageFormat::Png => {
                    write_png16(img, &path)?;
                }
            }
            paths.push(path);
        }
        Ok(paths)
    }

    /// Loads a split; labels follow the sorted class-folder names.
    pub fn load(root: &Path, split: &str) -> Result<Dataset> {
        let split_dir = root.join(split);
        let mut classes: Vec<String> = fs::read_dir(&split_dir)
            .map_err(|e| format_err(&split_dir, e.to_string()))?
            .filter_map(|e| e.ok())
            .filter(|e| e.path().is_dir())
            .map(|e| e.file_name().to_string_lossy().into_owned())
            .collect();
        classes.sort();
        if classes.is_empty() {
            return Err(format_err(&split_dir, "no class folders"));
        }
        let mut ds = Dataset {
            class_names: classes.clone(),
            ..Dataset::default()
        };
        for (label, class) in classes.iter().enumerate() {
            let mut files: Vec<PathBuf> = fs::read_dir(split_dir.join(class))?
                .filter_map(|e| e.ok())
                .map(|e| e.path())
                .filter(|p| matches!(p.extension().and_then(|e| e.to_str()), Some("f32" | "png")))
                .collect();
            files.sort();
            for f in files {
                ds.images.push(read_image(&f)?);
                ds.labels.push(label);
            }
        }
        if ds.is_empty() {
            return Err(format_err(&split_dir, "no image files"));
        }
        Ok(ds)
    }
}
