//! Image files to and from `h x w x 3` tensors in `[0, 1]`.

use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

fn image_err(e: image::ImageError) -> Error {
    match e {
        image::ImageError::IoError(io) => Error::Io(io),
        other => Error::Image(other.to_string()),
    }
}

/// Load a PPM (P6) or PNG file as RGB.
pub fn load_image(path: &Path) -> Result<Tensor> {
    let img = image::open(path).map_err(image_err)?.to_rgb8();
    let (w, h) = img.dimensions();
    let data = img.into_raw().into_iter().map(|v| v as f64 / 255.0).collect();
    Tensor::new(vec![h as usize, w as usize, 3], data)
}

/// Clamp to `[0, 1]` and quantise to 8 bits.
pub fn to_rgb8(t: &Tensor) -> Result<(u32, u32, Vec<u8>)> {
    let (h, w, c) = t.hwc()?;
    if c != 3 {
        return Err(Error::dims(&[h, w, 3], t.shape()));
    }
    let bytes = t
        .data()
        .iter()
        .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    Ok((w as u32, h as u32, bytes))
}

/// Save as PPM or PNG depending on the extension.
pub fn save_image(path: &Path, t: &Tensor) -> Result<()> {
    let (w, h, bytes) = to_rgb8(t)?;
    let img = image::RgbImage::from_raw(w, h, bytes)
        .ok_or_else(|| Error::Image("buffer size mismatch".into()))?;
    let is_ppm = path
        .extension()
        .map(|e| e.eq_ignore_ascii_case("ppm"))
        .unwrap_or(false);
    if is_ppm {
        let f = std::io::BufWriter::new(std::fs::File::create(path)?);
        let enc = image::codecs::pnm::PnmEncoder::new(f)
            .with_subtype(image::codecs::pnm::PnmSubtype::Pixmap(image::codecs::pnm::SampleEncoding::Binary));
        img.write_with_encoder(enc).map_err(image_err)
    } else {
        img.save(path).map_err(image_err)
    }
}

/// Every `.ppm` / `.png` file in a directory, sorted by file name.
pub fn load_dir(dir: &Path) -> Result<Vec<(String, Tensor)>> {
    let mut paths: Vec<_> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .map(|e| matches!(e.to_ascii_lowercase().as_str(), "ppm" | "png"))
                .unwrap_or(false)
        })
        .collect();
    paths.sort();
    paths
        .into_iter()
        .map(|p| {
            let name = p.file_stem().and_then(|s| s.to_str()).unwrap_or("image").to_string();
            load_image(&p).map(|t| (name, t))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::dataset::synthetic_image;

    #[test]
    fn ppm_roundtrip_is_lossless_for_8bit_content() {
        let dir = tempfile::tempdir().unwrap();
        let img = synthetic_image(32, 3);
        for name in ["a.ppm", "b.png"] {
            let p = dir.path().join(name);
            save_image(&p, &img).unwrap();
            assert_eq!(load_image(&p).unwrap(), img);
        }
        let raw = std::fs::read(dir.path().join("a.ppm")).unwrap();
        assert!(raw.starts_with(b"P6"));
        assert_eq!(load_dir(dir.path()).unwrap().len(), 2);
    }
}
