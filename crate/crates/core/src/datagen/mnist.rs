use std::collections::BTreeMap;
use std::path::Path;

use image::{Rgb, RgbImage};
use rand::seq::index::sample;
use rand::Rng;

use super::manifest::{combination_rng, validation_count, DatasetManifest, ManifestBuilder, Partition};
use crate::error::{Error, IoContext, Result};
use crate::splits::{Combination, SplitPlan};

/// Grayscale digit images grouped by label.
#[derive(Debug, Clone, Default)]
pub struct DigitPool {
    pub rows: usize,
    pub cols: usize,
    /// `images[d]`: every image of digit `d`, row-major.
    pub images: BTreeMap<u8, Vec<Vec<u8>>>,
}

impl DigitPool {
    pub fn from_images(rows: usize, cols: usize, labels: &[u8], pixels: &[u8]) -> Result<Self> {
        let size = rows * cols;
        if pixels.len() != labels.len() * size {
            return Err(Error::Generation(format!(
                "{} labels but {} pixel bytes of {rows}x{cols} images",
                labels.len(),
                pixels.len()
            )));
        }
        let mut images: BTreeMap<u8, Vec<Vec<u8>>> = BTreeMap::new();
        for (i, &l) in labels.iter().enumerate() {
            images.entry(l).or_default().push(pixels[i * size..(i + 1) * size].to_vec());
        }
        Ok(DigitPool { rows, cols, images })
    }

    /// Reads an IDX image file and its label file.
    pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<Self> {
        let (img_dims, pixels) = read_idx(images_path, 0x0803)?;
        let (lbl_dims, labels) = read_idx(labels_path, 0x0801)?;
        if img_dims.len() != 3 || lbl_dims.len() != 1 || img_dims[0] != lbl_dims[0] {
            return Err(Error::Generation(format!(
                "IDX shapes {img_dims:?} and {lbl_dims:?} do not describe one labelled image set"
            )));
        }
        Self::from_images(img_dims[1], img_dims[2], &labels, &pixels)
    }

    /// Train and test pools from the standard file names under `dir`.
    pub fn load_mnist_dir(dir: &Path) -> Result<(Self, Self)> {
        let train = Self::load_idx(&dir.join("train-images-idx3-ubyte"), &dir.join("train-labels-idx1-ubyte"))?;
        let test = Self::load_idx(&dir.join("t10k-images-idx3-ubyte"), &dir.join("t10k-labels-idx1-ubyte"))?;
        Ok((train, test))
    }

    pub fn count(&self, digit: u8) -> usize {
        self.images.get(&digit).map_or(0, Vec::len)
    }
}

fn read_idx(path: &Path, magic: u32) -> Result<(Vec<usize>, Vec<u8>)> {
    let bytes = std::fs::read(path).at(path)?;
    let bad = |what: &str| Error::Generation(format!("{}: {what}", path.display()));
    if bytes.len() < 4 {
        return Err(bad("truncated header"));
    }
    let found = u32::from_be_bytes(bytes[0..4].try_into().unwrap());
    if found != magic {
        return Err(bad(&format!("magic {found:#010x}, expected {magic:#010x}")));
    }
    let rank = (magic & 0xff) as usize;
    let header = 4 + 4 * rank;
    if bytes.len() < header {
        return Err(bad("truncated header"));
    }
    let dims: Vec<usize> = (0..rank)
        .map(|i| u32::from_be_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap()) as usize)
        .collect();
    let expected: usize = dims.iter().product();
    if bytes.len() - header != expected {
        return Err(bad(&format!("{} data bytes for dims {dims:?}", bytes.len() - header)));
    }
    Ok((dims, bytes[header..].to_vec()))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ColorMnistOptions {
    /// Output side length; digits are centred with zero padding.
    pub image_size: usize,
    /// Allow drawing the same source digit twice within a combination.
    pub with_replacement: bool,
}

impl Default for ColorMnistOptions {
    fn default() -> Self {
        ColorMnistOptions {
            image_size: 32,
            with_replacement: false,
        }
    }
}

/// Multiplies each grayscale intensity into `rgb`: `round(i / 255 * c)`.
pub fn tint_digit(gray: &[u8], rows: usize, cols: usize, rgb: [u8; 3], size: usize) -> Result<RgbImage> {
    if rows > size || cols > size {
        return Err(Error::Generation(format!("{rows}x{cols} digit does not fit a {size}px canvas")));
    }
    let (top, left) = ((size - rows) / 2, (size - cols) / 2);
    let mut img = RgbImage::new(size as u32, size as u32);
    for y in 0..rows {
        for x in 0..cols {
            let i = gray[y * cols + x] as u32;
            let px = rgb.map(|c| ((i * c as u32 + 127) / 255) as u8);
            img.put_pixel((left + x) as u32, (top + y) as u32, Rgb(px));
        }
    }
    Ok(img)
}

fn draw_indices<R: Rng>(rng: &mut R, available: usize, count: usize, with_replacement: bool) -> Option<Vec<usize>> {
    if available == 0 {
        return None;
    }
    if with_replacement {
        return Some((0..count).map(|_| rng.random_range(0..available)).collect());
    }
    (count <= available).then(|| sample(rng, available, count).into_vec())
}

/// Renders a coloured-digit dataset for `plan` under `root`.
///
/// Attribute `digit_attr` holds digit identifiers `"0"`..`"9"`; the other
/// attribute holds colour names resolved through `colors`. Training
/// combinations draw from `train_pool` (a tenth of each draw becomes
/// validation data), test tuples draw from `test_pool`. Each combination uses
/// its own random stream, so draws are independent across combinations.
#[allow(clippy::too_many_arguments)]
pub fn generate_color_mnist(
    plan: &SplitPlan,
    train_pool: &DigitPool,
    test_pool: &DigitPool,
    colors: &BTreeMap<String, [u8; 3]>,
    digit_attr: usize,
    seed: u64,
    options: &ColorMnistOptions,
    root: &Path,
) -> Result<DatasetManifest> {
    if plan.attribute_count() != 2 || digit_attr > 1 {
        return Err(Error::Generation("coloured digits need exactly a digit and a colour attribute".into()));
    }
    let color_attr = 1 - digit_attr;
    let resolve = |combo: &Combination| -> Result<(u8, [u8; 3])> {
        let digit: u8 = combo[digit_attr]
            .parse()
            .ok()
            .filter(|d| *d < 10)
            .ok_or_else(|| Error::Generation(format!("`{}` is not a digit", combo[digit_attr])))?;
        let rgb = colors
            .get(&combo[color_attr])
            .ok_or_else(|| Error::Generation(format!("no RGB value for colour `{}`", combo[color_attr])))?;
        Ok((digit, *rgb))
    };

    let size = options.image_size;
    let mut builder = ManifestBuilder::new(root, plan.clone(), [3, size, size]);
    let render = |builder: &mut ManifestBuilder,
                      pool: &DigitPool,
                      partition: Partition,
                      combo: &Combination,
                      count: usize,
                      val: usize|
     -> Result<()> {
        let (digit, rgb) = resolve(combo)?;
        let digits = pool.images.get(&digit).map(Vec::as_slice).unwrap_or(&[]);
        let mut rng = combination_rng(seed, partition, combo);
        let picks = draw_indices(&mut rng, digits.len(), count, options.with_replacement).ok_or_else(|| {
            Error::Generation(format!(
                "{partition} combination ({}) needs {count} images of digit {digit}, pool has {}",
                combo.join(", "),
                digits.len()
            ))
        })?;
        for (k, &i) in picks.iter().enumerate() {
            let img = tint_digit(&digits[i], pool.rows, pool.cols, rgb, size)?;
            let part = if k < val { Partition::Val } else { partition };
            builder.add(part, combo, &img)?;
        }
        Ok(())
    };

    let n = plan.samples_per_combination;
    let n_val = validation_count(n);
    if n_val >= n {
        return Err(Error::Generation(format!(
            "samples_per_combination {n} leaves no training images after {n_val} validation images"
        )));
    }
    for combo in &plan.train_combinations {
        render(&mut builder, train_pool, Partition::Train, combo, n, n_val)?;
    }
    for combos in plan.test_groups.values() {
        for combo in combos {
            render(&mut builder, test_pool, Partition::Test, combo, plan.test_samples_per_tuple, 0)?;
        }
    }
    let manifest = builder.finish("color-mnist", seed, true);
    manifest.save()?;
    Ok(manifest)
}
