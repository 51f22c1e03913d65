//! Axial slice montages: every z slice laid out left to right, top to
//! bottom, on a near-square grid. Rows run along x, columns along y.

use std::path::Path;

use super::write_atomic;
use crate::data::Volume;
use crate::error::{Error, Result};

/// 8-bit grayscale pixels and the image width/height. Values are clamped
/// to `[lo, hi]` and mapped linearly to 0..=255.
pub fn montage_pixels(v: &Volume, lo: f32, hi: f32) -> Result<(Vec<u8>, usize, usize)> {
    if !(lo < hi) {
        return Err(Error::arg("montage", format!("display range [{lo}, {hi}] is empty")));
    }
    let [nx, ny, nz] = v.dims;
    let cols = (nz as f64).sqrt().ceil() as usize;
    let rows = nz.div_ceil(cols);
    let (w, h) = (cols * ny, rows * nx);
    let mut px = vec![0u8; w * h];
    for z in 0..nz {
        let (r, c) = (z / cols, z % cols);
        for x in 0..nx {
            for y in 0..ny {
                let t = ((v.at(x, y, z) - lo) / (hi - lo)).clamp(0.0, 1.0);
                px[(r * nx + x) * w + c * ny + y] = (t * 255.0).round() as u8;
            }
        }
    }
    Ok((px, w, h))
}

/// Writes a PNG when `path` ends in `.png`, binary PGM otherwise.
pub fn write_montage(v: &Volume, path: &Path, lo: f32, hi: f32) -> Result<()> {
    let (px, w, h) = montage_pixels(v, lo, hi)?;
    let is_png = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("png"));
    let bytes = if is_png {
        let mut buf = Vec::new();
        let mut enc = png::Encoder::new(&mut buf, w as u32, h as u32);
        enc.set_color(png::ColorType::Grayscale);
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc.write_header().map_err(|e| std::io::Error::other(e.to_string()))?;
        writer.write_image_data(&px).map_err(|e| std::io::Error::other(e.to_string()))?;
        writer.finish().map_err(|e| std::io::Error::other(e.to_string()))?;
        buf
    } else {
        let mut buf = format!("P5\n{w} {h}\n255\n").into_bytes();
        buf.extend_from_slice(&px);
        buf
    };
    write_atomic(path, &bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{index, IntensityDomain};

    #[test]
    fn layout_places_slices_on_grid() {
        let dims = [2, 3, 5];
        let mut v = Volume::filled(dims, 0.0, IntensityDomain::Normalized);
        for z in 0..5 {
            v.data[index(dims, 1, 2, z)] = z as f32 / 4.0;
        }
        let (px, w, h) = montage_pixels(&v, 0.0, 1.0).unwrap();
        assert_eq!((w, h), (9, 4));
        // slice 4 sits at grid row 1, column 1
        assert_eq!(px[3 * w + 3 + 2], 255);
        assert_eq!(px[w + 3 + 2], 64);
        assert_eq!(px.iter().filter(|&&p| p > 0).count(), 4);
    }

    #[test]
    fn pgm_and_png_files() {
        let v = Volume::filled([4, 4, 4], 0.5, IntensityDomain::Normalized);
        let dir = tempfile::tempdir().unwrap();
        let pgm = dir.path().join("m.pgm");
        write_montage(&v, &pgm, 0.0, 1.0).unwrap();
        let bytes = std::fs::read(&pgm).unwrap();
        assert!(bytes.starts_with(b"P5\n8 8\n255\n"));
        assert_eq!(bytes.len(), 11 + 64);
        let png_path = dir.path().join("m.png");
        write_montage(&v, &png_path, 0.0, 1.0).unwrap();
        let decoder = png::Decoder::new(std::io::BufReader::new(std::fs::File::open(&png_path).unwrap()));
        let reader = decoder.read_info().unwrap();
        assert_eq!((reader.info().width, reader.info().height), (8, 8));
    }
}
