//! Grayscale PNG exchange format for inference and montages.
//!
//! Images are written as 16-bit grayscale with `v * 65535` rounded. Reading
//! accepts 8- or 16-bit grayscale and scales to `[0, 1]`.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use ndarray::{Array2, ArrayView2};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot decode {path}: {reason}")]
    Decode { path: PathBuf, reason: String },
    #[error("cannot encode {path}: {reason}")]
    Encode { path: PathBuf, reason: String },
}

/// Quantise `[0, 1]` to 16 bits. Values outside the range saturate.
pub fn to_u16(v: f32) -> u16 {
    (v.clamp(0.0, 1.0) * 65535.0).round() as u16
}

pub fn write_png16(path: &Path, img: ArrayView2<f32>) -> Result<(), ImageError> {
    let (h, w) = img.dim();
    let enc_err = |reason: String| ImageError::Encode { path: path.to_path_buf(), reason };
    let file = File::create(path).map_err(|source| ImageError::Io { path: path.to_path_buf(), source })?;
    let mut enc = png::Encoder::new(BufWriter::new(file), w as u32, h as u32);
    enc.set_color(png::ColorType::Grayscale);
    enc.set_depth(png::BitDepth::Sixteen);
    let mut writer = enc.write_header().map_err(|e| enc_err(e.to_string()))?;
    let bytes: Vec<u8> = img.iter().flat_map(|&v| to_u16(v).to_be_bytes()).collect();
    writer.write_image_data(&bytes).map_err(|e| enc_err(e.to_string()))?;
    writer.finish().map_err(|e| enc_err(e.to_string()))
}

pub fn read_png(path: &Path) -> Result<Array2<f32>, ImageError> {
    let bad = |reason: String| ImageError::Decode { path: path.to_path_buf(), reason };
    let file = File::open(path).map_err(|source| ImageError::Io { path: path.to_path_buf(), source })?;
    let mut decoder = png::Decoder::new(BufReader::new(file));
    decoder.set_transformations(png::Transformations::EXPAND);
    let mut reader = decoder.read_info().map_err(|e| bad(e.to_string()))?;
    let mut buf = vec![0; reader.output_buffer_size().ok_or_else(|| bad("image too large".into()))?];
    let info = reader.next_frame(&mut buf).map_err(|e| bad(e.to_string()))?;
    if info.color_type != png::ColorType::Grayscale {
        return Err(bad(format!("expected grayscale, found {:?}", info.color_type)));
    }
    let (w, h) = (info.width as usize, info.height as usize);
    let data = &buf[..info.buffer_size()];
    let values: Vec<f32> = match info.bit_depth {
        png::BitDepth::Sixteen => {
            data.chunks_exact(2).map(|c| u16::from_be_bytes([c[0], c[1]]) as f32 / 65535.0).collect()
        }
        png::BitDepth::Eight => data.iter().map(|&b| b as f32 / 255.0).collect(),
        other => return Err(bad(format!("unsupported bit depth {other:?}"))),
    };
    Array2::from_shape_vec((h, w), values).map_err(|e| bad(e.to_string()))
}
