use image::imageops::{self, FilterType};
use image::{DynamicImage, Rgb, RgbImage, RgbaImage};
use rand::Rng;

use crate::error::{Error, Result};

/// Canvas fill behind a composited object.
#[derive(Debug, Clone)]
pub enum Background {
    Flat([u8; 3]),
    Image(RgbImage),
}

/// Alpha-composites `object` onto a `width x height` canvas.
///
/// The object is scaled down to fit if needed, then placed at the centre
/// plus a uniform jitter that keeps it fully inside the canvas. Image
/// backgrounds smaller than the canvas are rejected; larger ones are resized.
pub fn compose_object_on_background<R: Rng>(
    object: &DynamicImage,
    background: &Background,
    width: u32,
    height: u32,
    rng: &mut R,
) -> Result<RgbImage> {
    if !object.color().has_alpha() {
        return Err(Error::Generation("object crop has no alpha mask".into()));
    }
    let mut canvas = match background {
        Background::Flat(rgb) => RgbImage::from_pixel(width, height, Rgb(*rgb)),
        Background::Image(img) => {
            if img.width() < width || img.height() < height {
                return Err(Error::Generation(format!(
                    "background {}x{} is smaller than the {width}x{height} canvas",
                    img.width(),
                    img.height()
                )));
            }
            if img.dimensions() == (width, height) {
                img.clone()
            } else {
                imageops::resize(img, width, height, FilterType::Triangle)
            }
        }
    };
    let mut crop: RgbaImage = object.to_rgba8();
    if crop.width() > width || crop.height() > height {
        let scale = (width as f64 / crop.width() as f64).min(height as f64 / crop.height() as f64);
        let w = ((crop.width() as f64 * scale).floor() as u32).clamp(1, width);
        let h = ((crop.height() as f64 * scale).floor() as u32).clamp(1, height);
        crop = imageops::resize(&crop, w, h, FilterType::Triangle);
    }
    let (slack_x, slack_y) = (width - crop.width(), height - crop.height());
    let jitter = |rng: &mut R, slack: u32| -> u32 {
        let centre = slack / 2;
        let reach = centre.min(slack - centre) as i64;
        (centre as i64 + rng.random_range(-reach..=reach)) as u32
    };
    let left = jitter(rng, slack_x);
    let top = jitter(rng, slack_y);
    for (x, y, px) in crop.enumerate_pixels() {
        let a = px[3] as u32;
        let dst = canvas.get_pixel_mut(left + x, top + y);
        for c in 0..3 {
            let blended = px[c] as u32 * a + dst[c] as u32 * (255 - a);
            dst[c] = ((blended + 127) / 255) as u8;
        }
    }
    Ok(canvas)
}
