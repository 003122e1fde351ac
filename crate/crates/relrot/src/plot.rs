//! Raster figures: image grids, saliency panels and scatter plots, plus the
//! SVG loss curves of the report.

use std::fmt::Write as _;
use std::path::Path;

use relrot_core::data::Domain;
use relrot_core::Image;

use crate::error::Result;
use crate::imageio;

pub const SOURCE_RGB: [u8; 3] = [214, 39, 40];
pub const TARGET_RGB: [u8; 3] = [31, 119, 180];

/// An 8-bit RGB raster.
#[derive(Debug, Clone, PartialEq)]
pub struct Canvas {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

impl Canvas {
    pub fn new(width: usize, height: usize, background: [u8; 3]) -> Self {
        Canvas {
            width,
            height,
            pixels: background.iter().copied().cycle().take(3 * width * height).collect(),
        }
    }

    pub fn put(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        if x < self.width && y < self.height {
            let i = 3 * (y * self.width + x);
            self.pixels[i..i + 3].copy_from_slice(&rgb);
        }
    }

    /// Copy an image with values in [0, 1] to `(x0, y0)`, each pixel drawn
    /// as a `scale`-by-`scale` block. One-channel images are drawn grey.
    pub fn blit(&mut self, img: &Image, x0: usize, y0: usize, scale: usize) {
        for y in 0..img.height() * scale {
            for x in 0..img.width() * scale {
                let p = img.pixel(y / scale, x / scale);
                let c = |v: f32| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
                let rgb = if p.len() == 3 { [c(p[0]), c(p[1]), c(p[2])] } else { [c(p[0]); 3] };
                self.put(x0 + x, y0 + y, rgb);
            }
        }
    }

    pub fn dot(&mut self, cx: f64, cy: f64, radius: f64, rgb: [u8; 3]) {
        let r = radius.ceil() as i64;
        let (x0, y0) = (cx.round() as i64, cy.round() as i64);
        for dy in -r..=r {
            for dx in -r..=r {
                if ((dx * dx + dy * dy) as f64) <= radius * radius {
                    let (x, y) = (x0 + dx, y0 + dy);
                    if x >= 0 && y >= 0 {
                        self.put(x as usize, y as usize, rgb);
                    }
                }
            }
        }
    }

    pub fn save(self, path: &Path) -> Result<()> {
        imageio::write_rgb(self.width as u32, self.height as u32, self.pixels, path)
    }
}

/// Lay out rows of equally sized panels with a gap between them.
pub fn panel_grid(rows: &[Vec<Image>], scale: usize, gap: usize) -> Canvas {
    let side_h = rows.iter().flatten().map(Image::height).max().unwrap_or(1) * scale;
    let side_w = rows.iter().flatten().map(Image::width).max().unwrap_or(1) * scale;
    let cols = rows.iter().map(Vec::len).max().unwrap_or(1);
    let mut c = Canvas::new(
        gap + cols * (side_w + gap),
        gap + rows.len() * (side_h + gap),
        [255, 255, 255],
    );
    for (r, row) in rows.iter().enumerate() {
        for (k, img) in row.iter().enumerate() {
            c.blit(img, gap + k * (side_w + gap), gap + r * (side_h + gap), scale);
        }
    }
    c
}

/// Map scaled to [0, 1] by its maximum, as a one-channel image.
pub fn heatmap(values: &[f32], height: usize, width: usize) -> Image {
    let max = values.iter().copied().fold(0.0f32, f32::max);
    let k = if max > 0.0 { 1.0 / max } else { 0.0 };
    Image::from_vec(height, width, 1, values.iter().map(|v| v * k).collect()).expect("map matches its size")
}

pub fn binary_image(mask: &[u8], height: usize, width: usize) -> Image {
    Image::from_vec(height, width, 1, mask.iter().map(|&b| b as f32).collect()).expect("mask matches its size")
}

/// Scatter of a 2-D embedding: source red, target blue, on a white square.
pub fn scatter(points: &[[f64; 2]], domains: &[Domain], size: usize) -> Canvas {
    let mut c = Canvas::new(size, size, [255, 255, 255]);
    if points.is_empty() {
        return c;
    }
    let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    for p in points {
        for a in 0..2 {
            lo[a] = lo[a].min(p[a]);
            hi[a] = hi[a].max(p[a]);
        }
    }
    let margin = 0.05 * size as f64;
    let span = (hi[0] - lo[0]).max(hi[1] - lo[1]).max(1e-12);
    let k = (size as f64 - 2.0 * margin) / span;
    for (p, d) in points.iter().zip(domains) {
        let x = margin + (p[0] - lo[0]) * k;
        let y = size as f64 - margin - (p[1] - lo[1]) * k;
        let rgb = match d {
            Domain::Source => SOURCE_RGB,
            Domain::Target => TARGET_RGB,
        };
        c.dot(x, y, 2.0, rgb);
    }
    c
}

/// Line chart of named series over epochs as a standalone SVG document.
pub fn line_chart_svg(title: &str, epochs: &[f64], series: &[(&str, Vec<Option<f64>>)]) -> String {
    const W: f64 = 640.0;
    const H: f64 = 360.0;
    const PAD: f64 = 48.0;
    const COLORS: [&str; 6] = ["#d62728", "#1f77b4", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];
    let vals: Vec<f64> = series.iter().flat_map(|(_, v)| v.iter().flatten().copied()).filter(|v| v.is_finite()).collect();
    let (ymin, ymax) = vals.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let (ymin, ymax) = if vals.is_empty() { (0.0, 1.0) } else if ymax > ymin { (ymin, ymax) } else { (ymin - 0.5, ymax + 0.5) };
    let (xmin, xmax) = (
        epochs.first().copied().unwrap_or(0.0),
        epochs.last().copied().unwrap_or(1.0).max(epochs.first().copied().unwrap_or(0.0) + 1.0),
    );
    let sx = |x: f64| PAD + (x - xmin) / (xmax - xmin) * (W - 2.0 * PAD);
    let sy = |y: f64| H - PAD - (y - ymin) / (ymax - ymin) * (H - 2.0 * PAD);
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{PAD}" y="20">{title}</text>"#);
    let _ = writeln!(
        s,
        r#"<path d="M{PAD},{} L{PAD},{} L{},{}" stroke="black" fill="none"/>"#,
        PAD,
        H - PAD,
        W - PAD,
        H - PAD
    );
    let _ = writeln!(s, r#"<text x="4" y="{}">{ymax:.3}</text><text x="4" y="{}">{ymin:.3}</text>"#, PAD + 4.0, H - PAD);
    let _ = writeln!(s, r#"<text x="{}" y="{}">epoch {xmin}</text><text x="{}" y="{}">{xmax}</text>"#, PAD, H - PAD + 16.0, W - PAD - 16.0, H - PAD + 16.0);
    for (i, (name, v)) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let pts: Vec<String> = epochs
            .iter()
            .zip(v)
            .filter_map(|(&x, y)| y.filter(|y| y.is_finite()).map(|y| format!("{:.1},{:.1}", sx(x), sy(y))))
            .collect();
        if !pts.is_empty() {
            let _ = writeln!(s, r#"<polyline points="{}" stroke="{color}" fill="none" stroke-width="1.5"/>"#, pts.join(" "));
        }
        let _ = writeln!(s, r#"<text x="{}" y="{}" fill="{color}">{name}</text>"#, W - PAD - 150.0, PAD + 14.0 * i as f64);
    }
    s.push_str("</svg>\n");
    s
}
