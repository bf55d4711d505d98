//! 8-bit grayscale PNG and ASCII PGM, mapped to `[0, 1]`.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::{GrayImage, ImageEncoder, ImageFormat};
use rcs_deblur::Image;

use crate::error::{CliError, CliResult};

fn format_of(path: &Path) -> CliResult<ImageFormat> {
    match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
        Some("png") => Ok(ImageFormat::Png),
        Some("pgm") => Ok(ImageFormat::Pnm),
        _ => Err(CliError::Usage(format!(
            "{}: unsupported image extension (use .png or .pgm)",
            path.display()
        ))),
    }
}

pub fn read_image(path: &Path) -> CliResult<Image> {
    let format = format_of(path)?;
    let reader = std::io::BufReader::new(File::open(path).map_err(|e| CliError::io(path, e))?);
    let decoded = image::load(reader, format).map_err(|e| CliError::io(path, e))?;
    let gray = decoded.into_luma8();
    let (w, h) = gray.dimensions();
    let data = gray.into_raw().into_iter().map(|v| f64::from(v) / 255.0).collect();
    Ok(Image::new(h as usize, w as usize, data)?)
}

/// Clamps to `[0, 1]` and quantizes to 8 bits.
pub fn quantize(img: &Image) -> Vec<u8> {
    img.data().iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect()
}

pub fn write_image(path: &Path, img: &Image) -> CliResult<()> {
    let format = format_of(path)?;
    let (h, w) = (img.height() as u32, img.width() as u32);
    let buf = GrayImage::from_raw(w, h, quantize(img)).expect("buffer matches dimensions");
    let file = BufWriter::new(File::create(path).map_err(|e| CliError::io(path, e))?);
    let result = match format {
        ImageFormat::Pnm => PnmEncoder::new(file)
            .with_subtype(PnmSubtype::Graymap(SampleEncoding::Ascii))
            .write_image(buf.as_raw(), w, h, image::ExtendedColorType::L8),
        _ => buf.write_with_encoder(image::codecs::png::PngEncoder::new(file)),
    };
    result.map_err(|e| CliError::io(path, e))
}
