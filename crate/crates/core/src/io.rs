//! File formats: 16-bit PGM depth, 8-bit PGM masks, PPM/PNG encoded images,
//! JSON lines records and numbered frame directories.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::{DynamicImage, ExtendedColorType, ImageEncoder, ImageFormat, ImageReader};
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::depthimage::DepthImage;
use crate::encoding::RgbImage;
use crate::error::{Error, Result};

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

/// Reads a depth frame. Samples are millimeters, `0` = invalid.
pub fn read_depth_pgm(path: &Path) -> Result<DepthImage> {
    let reader = ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?;
    if reader.format() != Some(ImageFormat::Pnm) {
        return Err(Error::format(path, "not a PGM file"));
    }
    let img = reader.decode().map_err(|e| Error::format(path, e))?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    match img {
        DynamicImage::ImageLuma16(buf) => DepthImage::from_millimeters(w, h, buf.as_raw()),
        DynamicImage::ImageLuma8(buf) => {
            let mm: Vec<u16> = buf.as_raw().iter().map(|&v| v as u16).collect();
            DepthImage::from_millimeters(w, h, &mm)
        }
        other => Err(Error::format(
            path,
            format!("expected a single-channel PGM, got {:?}", other.color()),
        )),
    }
}

fn write_pnm(path: &Path, bytes: &[u8], w: usize, h: usize, color: ExtendedColorType, subtype: PnmSubtype) -> Result<()> {
    let mut out = create(path)?;
    PnmEncoder::new(&mut out)
        .with_subtype(subtype)
        .write_image(bytes, w as u32, h as u32, color)
        .map_err(|e| Error::format(path, e))?;
    out.flush().map_err(|e| Error::io(path, e))
}

/// Writes a binary 16-bit PGM (P5, maxval 65535), depths rounded to whole
/// millimeters.
pub fn write_depth_pgm(path: &Path, img: &DepthImage) -> Result<()> {
    // The image crate's PNM encoder has no 16-bit path.
    let mut out = create(path)?;
    let header = format!("P5\n{} {}\n65535\n", img.width(), img.height());
    let mut bytes = header.into_bytes();
    bytes.extend(img.to_millimeters().iter().flat_map(|v| v.to_be_bytes()));
    out.write_all(&bytes)
        .and_then(|_| out.flush())
        .map_err(|e| Error::io(path, e))
}

/// Writes an 8-bit PGM with 255 where `mask` is set.
pub fn write_mask_pgm(path: &Path, mask: &[bool], width: usize, height: usize) -> Result<()> {
    let bytes: Vec<u8> = mask.iter().map(|&m| if m { 255 } else { 0 }).collect();
    write_pnm(
        path,
        &bytes,
        width,
        height,
        ExtendedColorType::L8,
        PnmSubtype::Graymap(SampleEncoding::Binary),
    )
}

/// Writes an RGB image as binary PPM (P6) or PNG, chosen by extension.
pub fn write_rgb(path: &Path, img: &RgbImage) -> Result<()> {
    let ext = path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
    match ext.as_deref() {
        Some("png") => {
            let buf = image::RgbImage::from_raw(img.width as u32, img.height as u32, img.data.clone())
                .ok_or_else(|| Error::format(path, "RGB buffer size mismatch"))?;
            buf.save_with_format(path, ImageFormat::Png).map_err(|e| Error::format(path, e))
        }
        Some("ppm") | None => write_pnm(
            path,
            &img.data,
            img.width,
            img.height,
            ExtendedColorType::Rgb8,
            PnmSubtype::Pixmap(SampleEncoding::Binary),
        ),
        Some(other) => Err(Error::format(path, format!("unsupported output extension `.{other}` (use .ppm or .png)"))),
    }
}

/// Parses one JSON value per non-blank line.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let value = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(value);
    }
    Ok(out)
}

pub fn write_jsonl_to<W: Write, T: Serialize>(out: &mut W, items: &[T]) -> std::io::Result<()> {
    for item in items {
        serde_json::to_writer(&mut *out, item)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let mut out = create(path)?;
    write_jsonl_to(&mut out, items)
        .and_then(|_| out.flush())
        .map_err(|e| Error::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut out = create(path)?;
    serde_json::to_writer_pretty(&mut out, value).map_err(|e| Error::format(path, e))?;
    out.write_all(b"\n")
        .and_then(|_| out.flush())
        .map_err(|e| Error::io(path, e))
}

/// File name of frame `id` in a sequence directory.
pub fn frame_file_name(id: u64) -> String {
    format!("{id:06}.pgm")
}

/// Frames of a sequence directory: `*.pgm` files whose stem is a number,
/// sorted by that number. Other files are ignored.
pub fn list_frames(dir: &Path) -> Result<Vec<(u64, PathBuf)>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut frames = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let is_pgm = path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| e.eq_ignore_ascii_case("pgm"));
        let id = path.file_stem().and_then(|s| s.to_str()).and_then(|s| s.parse::<u64>().ok());
        if let (true, Some(id)) = (is_pgm, id) {
            frames.push((id, path));
        }
    }
    frames.sort();
    Ok(frames)
}
