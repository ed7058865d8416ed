//! Plot rendering with no drawing dependencies: bar histograms and a
//! confusion heatmap rasterized directly into RGB buffers, labeled with a
//! built-in 5x7 bitmap font. Output contains no timestamps, so renders are
//! reproducible.

use image::{Rgb, RgbImage};

use super::Histogram;

const BG: Rgb<u8> = Rgb([255, 255, 255]);
const INK: Rgb<u8> = Rgb([40, 40, 40]);
const BAR: Rgb<u8> = Rgb([70, 110, 180]);
const GRID: Rgb<u8> = Rgb([210, 210, 210]);

/// 5x7 glyphs, one byte per row, low 5 bits used.
fn glyph(c: char) -> [u8; 7] {
    match c.to_ascii_uppercase() {
        '0' => [0x0E, 0x11, 0x13, 0x15, 0x19, 0x11, 0x0E],
        '1' => [0x04, 0x0C, 0x04, 0x04, 0x04, 0x04, 0x0E],
        '2' => [0x0E, 0x11, 0x01, 0x02, 0x04, 0x08, 0x1F],
        '3' => [0x1F, 0x02, 0x04, 0x02, 0x01, 0x11, 0x0E],
        '4' => [0x02, 0x06, 0x0A, 0x12, 0x1F, 0x02, 0x02],
        '5' => [0x1F, 0x10, 0x1E, 0x01, 0x01, 0x11, 0x0E],
        '6' => [0x06, 0x08, 0x10, 0x1E, 0x11, 0x11, 0x0E],
        '7' => [0x1F, 0x01, 0x02, 0x04, 0x08, 0x08, 0x08],
        '8' => [0x0E, 0x11, 0x11, 0x0E, 0x11, 0x11, 0x0E],
        '9' => [0x0E, 0x11, 0x11, 0x0F, 0x01, 0x02, 0x0C],
        'A' => [0x0E, 0x11, 0x11, 0x11, 0x1F, 0x11, 0x11],
        'B' => [0x1E, 0x11, 0x11, 0x1E, 0x11, 0x11, 0x1E],
        'C' => [0x0E, 0x11, 0x10, 0x10, 0x10, 0x11, 0x0E],
        'D' => [0x1C, 0x12, 0x11, 0x11, 0x11, 0x12, 0x1C],
        'E' => [0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x1F],
        'F' => [0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x10],
        'G' => [0x0E, 0x11, 0x10, 0x17, 0x11, 0x11, 0x0F],
        'H' => [0x11, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11],
        'I' => [0x0E, 0x04, 0x04, 0x04, 0x04, 0x04, 0x0E],
        'J' => [0x07, 0x02, 0x02, 0x02, 0x02, 0x12, 0x0C],
        'K' => [0x11, 0x12, 0x14, 0x18, 0x14, 0x12, 0x11],
        'L' => [0x10, 0x10, 0x10, 0x10, 0x10, 0x10, 0x1F],
        'M' => [0x11, 0x1B, 0x15, 0x15, 0x11, 0x11, 0x11],
        'N' => [0x11, 0x11, 0x19, 0x15, 0x13, 0x11, 0x11],
        'O' => [0x0E, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E],
        'P' => [0x1E, 0x11, 0x11, 0x1E, 0x10, 0x10, 0x10],
        'Q' => [0x0E, 0x11, 0x11, 0x11, 0x15, 0x12, 0x0D],
        'R' => [0x1E, 0x11, 0x11, 0x1E, 0x14, 0x12, 0x11],
        'S' => [0x0F, 0x10, 0x10, 0x0E, 0x01, 0x01, 0x1E],
        'T' => [0x1F, 0x04, 0x04, 0x04, 0x04, 0x04, 0x04],
        'U' => [0x11, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E],
        'V' => [0x11, 0x11, 0x11, 0x11, 0x11, 0x0A, 0x04],
        'W' => [0x11, 0x11, 0x11, 0x15, 0x15, 0x15, 0x0A],
        'X' => [0x11, 0x11, 0x0A, 0x04, 0x0A, 0x11, 0x11],
        'Y' => [0x11, 0x11, 0x11, 0x0A, 0x04, 0x04, 0x04],
        'Z' => [0x1F, 0x01, 0x02, 0x04, 0x08, 0x10, 0x1F],
        '.' => [0x00, 0x00, 0x00, 0x00, 0x00, 0x0C, 0x0C],
        '-' => [0x00, 0x00, 0x00, 0x1F, 0x00, 0x00, 0x00],
        '%' => [0x18, 0x19, 0x02, 0x04, 0x08, 0x13, 0x03],
        '/' => [0x01, 0x01, 0x02, 0x04, 0x08, 0x10, 0x10],
        ':' => [0x00, 0x0C, 0x0C, 0x00, 0x0C, 0x0C, 0x00],
        _ => [0; 7],
    }
}

fn draw_text(img: &mut RgbImage, x: i64, y: i64, scale: u32, text: &str, color: Rgb<u8>) {
    let mut cx = x;
    for c in text.chars() {
        let rows = glyph(c);
        for (ry, row) in rows.iter().enumerate() {
            for rx in 0..5 {
                if row & (0x10 >> rx) != 0 {
                    for sy in 0..scale {
                        for sx in 0..scale {
                            let px = cx + (rx as u32 * scale + sx) as i64;
                            let py = y + (ry as u32 * scale + sy) as i64;
                            if px >= 0
                                && py >= 0
                                && (px as u32) < img.width()
                                && (py as u32) < img.height()
                            {
                                img.put_pixel(px as u32, py as u32, color);
                            }
                        }
                    }
                }
            }
        }
        cx += (6 * scale) as i64;
    }
}

fn text_width(text: &str, scale: u32) -> i64 {
    (text.chars().count() as u32 * 6 * scale) as i64
}

fn fill_rect(img: &mut RgbImage, x0: u32, y0: u32, x1: u32, y1: u32, color: Rgb<u8>) {
    for y in y0..y1.min(img.height()) {
        for x in x0..x1.min(img.width()) {
            img.put_pixel(x, y, color);
        }
    }
}

fn no_data_overlay(img: &mut RgbImage) {
    let text = "NO DATA";
    let scale = 4;
    let x = (img.width() as i64 - text_width(text, scale)) / 2;
    let y = (img.height() as i64 - (7 * scale) as i64) / 2;
    draw_text(img, x, y, scale, text, Rgb([180, 60, 60]));
}

pub(super) fn render_histogram(hist: &Histogram, title: &str) -> RgbImage {
    let (width, height) = (560u32, 360u32);
    let (left, right, top, bottom) = (56u32, 16u32, 34u32, 44u32);
    let mut img = RgbImage::from_pixel(width, height, BG);
    let plot_w = width - left - right;
    let plot_h = height - top - bottom;

    draw_text(&mut img, 10, 10, 2, title, INK);

    // Axes.
    fill_rect(&mut img, left - 1, top, left, height - bottom, INK);
    fill_rect(&mut img, left - 1, height - bottom, width - right, height - bottom + 1, INK);

    let max = hist.counts.iter().copied().max().unwrap_or(0);
    if max == 0 {
        no_data_overlay(&mut img);
        return img;
    }

    for (i, &count) in hist.counts.iter().enumerate() {
        let x0 = left + (i as u32 * plot_w) / hist.bins as u32;
        let x1 = left + ((i as u32 + 1) * plot_w) / hist.bins as u32;
        let bar_h = ((count as f64 / max as f64) * plot_h as f64).round() as u32;
        let y0 = height - bottom - bar_h;
        fill_rect(&mut img, x0 + 1, y0, x1.saturating_sub(1), height - bottom, BAR);
    }

    // X ticks at 0, 0.5, 1 and the max-count label on Y.
    for (frac, label) in [(0.0, "0"), (0.5, "0.5"), (1.0, "1")] {
        let x = left + (frac * plot_w as f64) as u32;
        fill_rect(&mut img, x, height - bottom, x + 1, height - bottom + 5, INK);
        draw_text(
            &mut img,
            x as i64 - text_width(label, 2) / 2,
            (height - bottom + 9) as i64,
            2,
            label,
            INK,
        );
    }
    let max_label = max.to_string();
    draw_text(
        &mut img,
        (left as i64) - text_width(&max_label, 2) - 6,
        top as i64 - 4,
        2,
        &max_label,
        INK,
    );
    fill_rect(&mut img, left - 5, top, left, top + 1, GRID);

    img
}

pub(super) fn render_confusion(confusion: &[Vec<u64>]) -> RgbImage {
    let n = confusion.len() as u32;
    let cell = 40u32;
    let margin = 46u32;
    let size = margin + n * cell + 12;
    let mut img = RgbImage::from_pixel(size, size, BG);

    let max = confusion.iter().flatten().copied().max().unwrap_or(0);
    draw_text(&mut img, 6, 6, 2, "PRED", INK);
    draw_text(&mut img, 6, 22, 2, "TRUE V", INK);

    for t in 0..n {
        for p in 0..n {
            let v = confusion[t as usize][p as usize];
            let x0 = margin + p * cell;
            let y0 = margin + t * cell;
            let intensity = if max == 0 { 0.0 } else { v as f64 / max as f64 };
            let shade = Rgb([
                (255.0 - 185.0 * intensity) as u8,
                (255.0 - 145.0 * intensity) as u8,
                255,
            ]);
            fill_rect(&mut img, x0, y0, x0 + cell - 1, y0 + cell - 1, shade);
            if v > 0 {
                let text = v.to_string();
                let color = if intensity > 0.6 { BG } else { INK };
                draw_text(
                    &mut img,
                    (x0 + cell / 2) as i64 - text_width(&text, 1) / 2,
                    (y0 + cell / 2 - 4) as i64,
                    1,
                    &text,
                    color,
                );
            }
        }
    }
    for k in 0..n {
        let label = k.to_string();
        draw_text(
            &mut img,
            (margin + k * cell + cell / 2) as i64 - text_width(&label, 2) / 2,
            (margin - 16) as i64,
            2,
            &label,
            INK,
        );
        draw_text(
            &mut img,
            (margin - 20) as i64,
            (margin + k * cell + cell / 2 - 7) as i64,
            2,
            &label,
            INK,
        );
    }

    if max == 0 {
        no_data_overlay(&mut img);
    }
    img
}
