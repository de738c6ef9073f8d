use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};
use log::warn;

use crate::error::{Error, IoContext, Result};
use crate::metrics::{EvalReport, LabeledMatrix};

/// 3x5 bitmap glyphs, rows top to bottom, `#` marks a lit pixel.
const GLYPHS: &[(char, &str)] = &[
    ('0', "####.##.##.####"),
    ('1', ".#.##..#..#.###"),
    ('2', "###..#####..###"),
    ('3', "###..####..####"),
    ('4', "#.##.####..#..#"),
    ('5', "####..###..####"),
    ('6', "####..####.####"),
    ('7', "###..#..#..#..#"),
    ('8', "####.#####.####"),
    ('9', "####.####..####"),
    ('A', ".#.#.#####.##.#"),
    ('B', "##.#.###.#.###."),
    ('C', "####..#..#..###"),
    ('D', "##.#.##.##.###."),
    ('E', "####..###..####"),
    ('F', "####..###..#..."),
    ('G', "####..#.##.####"),
    ('H', "#.##.####.##.##"),
    ('I', "###.#..#..#.###"),
    ('J', "..#..#..##.####"),
    ('K', "#.##.###.#.##.#"),
    ('L', "#..#..#..#..###"),
    ('M', "#.#####.##.##.#"),
    ('N', "##.#.##.##.##.#"),
    ('O', "####.##.##.####"),
    ('P', "####.####..#..."),
    ('Q', "####.##.####..#"),
    ('R', "####.###.#.##.#"),
    ('S', "####..###..####"),
    ('T', "###.#..#..#..#."),
    ('U', "#.##.##.##.####"),
    ('V', "#.##.##.##.#.#."),
    ('W', "#.##.########.#"),
    ('X', "#.##.#.#.#.##.#"),
    ('Y', "#.##.#.#..#..#."),
    ('Z', "###..#.#.#..###"),
    ('.', "............#.."),
    ('-', "......###......"),
    ('_', "............###"),
    ('/', "..#..#.#.#..#.."),
    ('%', "#.#..#.#.#..#.#"),
    ('(', ".#.#..#..#...#."),
    (')', ".#...#..#..#.#."),
    (':', "....#.....#...."),
    ('?', "###..#.#.....#."),
];

const SCALE: u32 = 2;
const GLYPH_W: u32 = 3 * SCALE;
const ADVANCE: u32 = 4 * SCALE;
const GLYPH_H: u32 = 5 * SCALE;
const PAD: u32 = 6;
const CELL_H: u32 = 28;
const MIN_CELL_W: u32 = 56;
const WHITE: Rgb<u8> = Rgb([255, 255, 255]);
const BLACK: Rgb<u8> = Rgb([0, 0, 0]);
const DARK_BLUE: [f64; 3] = [8.0, 48.0, 107.0];

fn glyph(c: char) -> Option<&'static str> {
    let c = c.to_ascii_uppercase();
    if c == ' ' {
        return None;
    }
    GLYPHS
        .iter()
        .find(|(g, _)| *g == c)
        .or_else(|| GLYPHS.iter().find(|(g, _)| *g == '?'))
        .map(|(_, bits)| *bits)
}

fn text_width(text: &str) -> u32 {
    (text.chars().count() as u32 * ADVANCE).saturating_sub(ADVANCE - GLYPH_W)
}

fn draw_text(img: &mut RgbImage, text: &str, x: u32, y: u32, color: Rgb<u8>) {
    for (i, c) in text.chars().enumerate() {
        let Some(bits) = glyph(c) else { continue };
        let ox = x + i as u32 * ADVANCE;
        for (p, b) in bits.bytes().take(15).enumerate() {
            if b != b'#' {
                continue;
            }
            let (gx, gy) = (p as u32 % 3, p as u32 / 3);
            for dy in 0..SCALE {
                for dx in 0..SCALE {
                    let (px, py) = (ox + gx * SCALE + dx, y + gy * SCALE + dy);
                    if px < img.width() && py < img.height() {
                        img.put_pixel(px, py, color);
                    }
                }
            }
        }
    }
}

/// White at `t = 0` to dark blue at `t = 1`.
fn colormap(t: f64) -> Rgb<u8> {
    let t = if t.is_finite() { t.clamp(0.0, 1.0) } else { 0.0 };
    Rgb(DARK_BLUE.map(|c| (255.0 + (c - 255.0) * t).round() as u8))
}

/// Renders `matrix` as an annotated heatmap. Values are mapped linearly from
/// `range` onto the colour scale and printed with `decimals` digits.
pub fn render_heatmap(matrix: &LabeledMatrix, range: (f64, f64), decimals: usize) -> RgbImage {
    let cells: Vec<Vec<String>> = matrix
        .values
        .iter()
        .map(|row| row.iter().map(|v| format!("{v:.decimals$}")).collect())
        .collect();
    let widest = |labels: &mut dyn Iterator<Item = &String>| labels.map(|l| text_width(l)).max().unwrap_or(0);
    let label_w = widest(&mut matrix.row_labels.iter()) + 2 * PAD;
    let cell_w = widest(&mut matrix.column_labels.iter().chain(cells.iter().flatten()))
        .saturating_add(2 * PAD)
        .max(MIN_CELL_W);
    let rows = matrix.values.len() as u32;
    let cols = matrix.column_labels.len() as u32;
    let mut img = RgbImage::from_pixel(label_w + cols * cell_w, CELL_H * (rows + 1), WHITE);
    let text_y = (CELL_H - GLYPH_H) / 2;

    for (c, label) in matrix.column_labels.iter().enumerate() {
        let x = label_w + c as u32 * cell_w + (cell_w - text_width(label)) / 2;
        draw_text(&mut img, label, x, text_y, BLACK);
    }
    let span = range.1 - range.0;
    for (r, row) in matrix.values.iter().enumerate() {
        let y0 = CELL_H * (r as u32 + 1);
        draw_text(&mut img, &matrix.row_labels[r], PAD, y0 + text_y, BLACK);
        for (c, v) in row.iter().enumerate() {
            let t = if span > 0.0 { (v - range.0) / span } else { 0.0 };
            let fill = colormap(t);
            let x0 = label_w + c as u32 * cell_w;
            for y in y0..y0 + CELL_H - 1 {
                for x in x0..x0 + cell_w - 1 {
                    img.put_pixel(x, y, fill);
                }
            }
            let ink = if t > 0.5 { WHITE } else { BLACK };
            let text = &cells[r][c];
            draw_text(&mut img, text, x0 + (cell_w - text_width(text)) / 2, y0 + text_y, ink);
        }
    }
    img
}

fn save_png(img: &RgbImage, path: &Path) -> Result<()> {
    img.save(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}

fn finite_extent(m: &LabeledMatrix) -> (f64, f64) {
    m.values
        .iter()
        .flatten()
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
}

/// Writes `confidence_matrix-<scorer>.png` and, when present,
/// `explainability_matrix-<scorer>.png` into `out_dir`.
pub fn emit_figures(report: &EvalReport, out_dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out_dir).at(out_dir)?;
    let mut written = Vec::new();
    // Probabilities fill [0, 1]; unbounded scores such as logits use their extent.
    let (lo, hi) = finite_extent(&report.confidence_matrix);
    let range = (lo.min(0.0), hi.max(1.0));
    let conf = out_dir.join(format!("confidence_matrix-{}.png", report.scorer));
    save_png(&render_heatmap(&report.confidence_matrix, range, 2), &conf)?;
    written.push(conf);
    match &report.explainability_matrix {
        Some(m) => {
            let path = out_dir.join(format!("explainability_matrix-{}.png", report.scorer));
            save_png(&render_heatmap(m, (0.0, 100.0), 1), &path)?;
            written.push(path);
        }
        None => warn!(
            "report for `{}` has no explainability matrix; only the confidence heatmap was written",
            report.scorer
        ),
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn glyphs_are_three_by_five() {
        for (c, bits) in GLYPHS {
            assert_eq!(bits.len(), 15, "glyph {c}");
        }
    }

    #[test]
    fn colormap_ends() {
        assert_eq!(colormap(0.0), WHITE);
        assert_eq!(colormap(1.0), Rgb([8, 48, 107]));
        assert_eq!(colormap(f64::NAN), WHITE);
    }
}
