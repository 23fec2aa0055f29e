//! Tiny PNG plotting: bar charts and matrix tables with a 5x7 bitmap font.
//! Enough for the per-color bar plot and the frozen/normal loss matrix.

use std::path::Path;

use crate::error::{Error, Result};

pub struct Canvas {
    pub w: usize,
    pub h: usize,
    rgb: Vec<u8>,
}

const FG: [u8; 3] = [30, 30, 34];
const BAR: [u8; 3] = [70, 120, 200];
const REF: [u8; 3] = [150, 150, 150];
const GRID: [u8; 3] = [220, 220, 224];

// 5x7 glyphs, row-major, low 5 bits per row.
fn glyph(c: char) -> [u8; 7] {
    match c.to_ascii_uppercase() {
        'A' => [0x0E, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11],
        'B' => [0x1E, 0x11, 0x11, 0x1E, 0x11, 0x11, 0x1E],
        'C' => [0x0E, 0x11, 0x10, 0x10, 0x10, 0x11, 0x0E],
        'D' => [0x1E, 0x11, 0x11, 0x11, 0x11, 0x11, 0x1E],
        'E' => [0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x1F],
        'F' => [0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x10],
        'G' => [0x0E, 0x11, 0x10, 0x17, 0x11, 0x11, 0x0F],
        'H' => [0x11, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11],
        'I' => [0x0E, 0x04, 0x04, 0x04, 0x04, 0x04, 0x0E],
        'J' => [0x07, 0x02, 0x02, 0x02, 0x02, 0x12, 0x0C],
        'K' => [0x11, 0x12, 0x14, 0x18, 0x14, 0x12, 0x11],
        'L' => [0x10, 0x10, 0x10, 0x10, 0x10, 0x10, 0x1F],
        'M' => [0x11, 0x1B, 0x15, 0x15, 0x11, 0x11, 0x11],
        'N' => [0x11, 0x19, 0x15, 0x13, 0x11, 0x11, 0x11],
        'O' => [0x0E, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E],
        'P' => [0x1E, 0x11, 0x11, 0x1E, 0x10, 0x10, 0x10],
        'Q' => [0x0E, 0x11, 0x11, 0x11, 0x15, 0x12, 0x0D],
        'R' => [0x1E, 0x11, 0x11, 0x1E, 0x14, 0x12, 0x11],
        'S' => [0x0F, 0x10, 0x10, 0x0E, 0x01, 0x01, 0x1E],
        'T' => [0x1F, 0x04, 0x04, 0x04, 0x04, 0x04, 0x04],
        'U' => [0x11, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E],
        'V' => [0x11, 0x11, 0x11, 0x11, 0x11, 0x0A, 0x04],
        'W' => [0x11, 0x11, 0x11, 0x15, 0x15, 0x1B, 0x11],
        'X' => [0x11, 0x0A, 0x04, 0x04, 0x04, 0x0A, 0x11],
        'Y' => [0x11, 0x0A, 0x04, 0x04, 0x04, 0x04, 0x04],
        'Z' => [0x1F, 0x01, 0x02, 0x04, 0x08, 0x10, 0x1F],
        '0' => [0x0E, 0x13, 0x15, 0x15, 0x15, 0x19, 0x0E],
        '1' => [0x04, 0x0C, 0x04, 0x04, 0x04, 0x04, 0x0E],
        '2' => [0x0E, 0x11, 0x01, 0x02, 0x04, 0x08, 0x1F],
        '3' => [0x0E, 0x11, 0x01, 0x06, 0x01, 0x11, 0x0E],
        '4' => [0x02, 0x06, 0x0A, 0x12, 0x1F, 0x02, 0x02],
        '5' => [0x1F, 0x10, 0x1E, 0x01, 0x01, 0x11, 0x0E],
        '6' => [0x06, 0x08, 0x10, 0x1E, 0x11, 0x11, 0x0E],
        '7' => [0x1F, 0x01, 0x02, 0x04, 0x08, 0x08, 0x08],
        '8' => [0x0E, 0x11, 0x11, 0x0E, 0x11, 0x11, 0x0E],
        '9' => [0x0E, 0x11, 0x11, 0x0F, 0x01, 0x02, 0x0C],
        '-' => [0x00, 0x00, 0x00, 0x1F, 0x00, 0x00, 0x00],
        '.' => [0x00, 0x00, 0x00, 0x00, 0x00, 0x0C, 0x0C],
        '/' => [0x01, 0x02, 0x02, 0x04, 0x08, 0x08, 0x10],
        '%' => [0x19, 0x1A, 0x02, 0x04, 0x08, 0x0B, 0x13],
        ':' => [0x00, 0x0C, 0x0C, 0x00, 0x0C, 0x0C, 0x00],
        _ => [0; 7],
    }
}

impl Canvas {
    pub fn new(w: usize, h: usize) -> Self {
        Canvas { w, h, rgb: vec![255; w * h * 3] }
    }

    pub fn fill_rect(&mut self, x: usize, y: usize, rw: usize, rh: usize, color: [u8; 3]) {
        for yy in y..(y + rh).min(self.h) {
            for xx in x..(x + rw).min(self.w) {
                let base = (yy * self.w + xx) * 3;
                self.rgb[base..base + 3].copy_from_slice(&color);
            }
        }
    }

    pub fn text(&mut self, x: usize, y: usize, s: &str, color: [u8; 3]) {
        let mut cx = x;
        for ch in s.chars() {
            let g = glyph(ch);
            for (row, bits) in g.iter().enumerate() {
                for col in 0..5 {
                    if bits & (0x10 >> col) != 0 {
                        let (px, py) = (cx + col, y + row);
                        if px < self.w && py < self.h {
                            let base = (py * self.w + px) * 3;
                            self.rgb[base..base + 3].copy_from_slice(&color);
                        }
                    }
                }
            }
            cx += 6;
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut enc = png::Encoder::new(std::io::BufWriter::new(file), self.w as u32, self.h as u32);
        enc.set_color(png::ColorType::Rgb);
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc
            .write_header()
            .map_err(|e| Error::Png { path: path.to_path_buf(), reason: e.to_string() })?;
        writer
            .write_image_data(&self.rgb)
            .map_err(|e| Error::Png { path: path.to_path_buf(), reason: e.to_string() })
    }
}

/// Vertical bar chart with per-bar value labels; `reference` draws a gray
/// comparison bar at the end.
pub fn bar_chart(
    path: &Path,
    title: &str,
    labels: &[String],
    values: &[f64],
    reference: Option<(&str, f64)>,
) -> Result<()> {
    assert_eq!(labels.len(), values.len());
    let mut all: Vec<(String, f64, bool)> = labels
        .iter()
        .zip(values)
        .map(|(l, &v)| (l.clone(), v, false))
        .collect();
    if let Some((name, v)) = reference {
        all.push((name.to_string(), v, true));
    }
    let bar_w = 44;
    let gap = 14;
    let chart_h = 170;
    let w = 30 + all.len() * (bar_w + gap) + 20;
    let h = chart_h + 70;
    let mut canvas = Canvas::new(w, h);
    canvas.text(10, 6, title, FG);
    let max = all.iter().map(|(_, v, _)| *v).fold(f64::EPSILON, f64::max);
    for (k, (label, value, is_ref)) in all.iter().enumerate() {
        let x = 30 + k * (bar_w + gap);
        let bh = ((value / max) * chart_h as f64).round().max(1.0) as usize;
        let y = 20 + chart_h - bh;
        canvas.fill_rect(x, y, bar_w, bh, if *is_ref { REF } else { BAR });
        canvas.text(x, y.saturating_sub(10), &format!("{value:.3}"), FG);
        canvas.text(x, 20 + chart_h + 8, label, FG);
    }
    canvas.save(path)
}

/// Rows x cols table of numbers with labels.
pub fn matrix_table(
    path: &Path,
    title: &str,
    row_labels: &[String],
    col_labels: &[String],
    values: &[Vec<f64>],
) -> Result<()> {
    let cell_w = 110;
    let cell_h = 26;
    let left = 130;
    let top = 40;
    let w = left + col_labels.len() * cell_w + 10;
    let h = top + (row_labels.len() + 1) * cell_h + 10;
    let mut canvas = Canvas::new(w, h);
    canvas.text(10, 6, title, FG);
    for (c, cl) in col_labels.iter().enumerate() {
        canvas.text(left + c * cell_w + 4, top, cl, FG);
    }
    for (r, rl) in row_labels.iter().enumerate() {
        let y = top + (r + 1) * cell_h;
        canvas.text(6, y + 6, rl, FG);
        for c in 0..col_labels.len() {
            let x = left + c * cell_w;
            canvas.fill_rect(x, y, cell_w - 4, cell_h - 4, GRID);
            canvas.text(x + 6, y + 6, &format!("{:.4}", values[r][c]), FG);
        }
    }
    canvas.save(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn charts_render_and_save() {
        let dir = std::env::temp_dir().join(format!("centrifuge-plots-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        bar_chart(
            &dir.join("bars.png"),
            "LOSS PER COLOR",
            &["black".into(), "white".into()],
            &[0.1, 0.25],
            Some(("pairs", 0.2)),
        )
        .unwrap();
        matrix_table(
            &dir.join("matrix.png"),
            "TRAIN/TEST",
            &["2 frozen".into(), "2 normal".into()],
            &["2 frozen".into(), "2 normal".into(), "1-1".into()],
            &[vec![0.165, 0.233, 0.198], vec![0.205, 0.133, 0.127]],
        )
        .unwrap();
        // Both decode as valid PNGs.
        for name in ["bars.png", "matrix.png"] {
            let f = std::fs::File::open(dir.join(name)).unwrap();
            let mut reader = png::Decoder::new(std::io::BufReader::new(f)).read_info().unwrap();
            let mut buf = vec![0; reader.output_buffer_size().unwrap()];
            reader.next_frame(&mut buf).unwrap();
        }
        let _ = std::fs::remove_dir_all(&dir);
    }
}
