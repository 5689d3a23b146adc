use std::path::Path;

use image::{GrayImage, Luma};

use crate::error::{Error, Result};
use crate::geometry::Icosphere;

/// Equirectangular rendering of a vertex map, `width x width/2` pixels, with
/// values scaled so the maximum is white.
pub fn unfold(values: &[f64], mesh: &Icosphere, width: u32) -> Result<GrayImage> {
    if values.len() != mesh.vertex_count() {
        return Err(Error::Data(format!(
            "{} values for a mesh of {} vertices",
            values.len(),
            mesh.vertex_count()
        )));
    }
    if width < 2 {
        return Err(Error::Bounds {
            what: "image width",
            detail: format!("{width} < 2"),
        });
    }
    let height = width / 2;
    let peak = values.iter().copied().fold(0.0, f64::max);
    let scale = if peak > 0.0 { 255.0 / peak } else { 0.0 };
    let mut img = GrayImage::new(width, height);
    for y in 0..height {
        let lat = std::f64::consts::FRAC_PI_2 - std::f64::consts::PI * (y as f64 + 0.5) / height as f64;
        for x in 0..width {
            let lon = -std::f64::consts::PI + std::f64::consts::TAU * (x as f64 + 0.5) / width as f64;
            let p = [lat.cos() * lon.cos(), lat.cos() * lon.sin(), lat.sin()];
            let loc = mesh.locate(&p);
            let face = mesh.faces()[loc.face];
            let v: f64 = face
                .iter()
                .zip(loc.barycentric)
                .map(|(&i, w)| w * values[i as usize])
                .sum();
            img.put_pixel(x, y, Luma([(v * scale).clamp(0.0, 255.0).round() as u8]));
        }
    }
    Ok(img)
}

/// Stacks one unfolding per head vertically and writes a PNG.
pub fn write_unfolding_png(heads: &[Vec<f64>], mesh: &Icosphere, width: u32, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let height = width / 2;
    let mut sheet = GrayImage::new(width, height * heads.len().max(1) as u32);
    for (h, values) in heads.iter().enumerate() {
        let img = unfold(values, mesh, width)?;
        image::imageops::replace(&mut sheet, &img, 0, (h as u32 * height) as i64);
    }
    sheet
        .save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| Error::io(path, std::io::Error::other(e.to_string())))
}
