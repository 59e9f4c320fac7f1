//! Static PNG outputs: loss-curve charts and colorized LST maps. Everything is
//! drawn directly into an RGB buffer; no font or plotting dependencies.

use std::path::Path;

use crate::error::{Error, Result};
use crate::raster::Raster;
use crate::training::LossTrace;

struct Canvas {
    width: usize,
    height: usize,
    pixels: Vec<u8>, // RGB8
}

impl Canvas {
    fn new(width: usize, height: usize) -> Self {
        Canvas {
            width,
            height,
            pixels: vec![255u8; width * height * 3],
        }
    }

    fn put(&mut self, x: i64, y: i64, rgb: [u8; 3]) {
        if x < 0 || y < 0 || x >= self.width as i64 || y >= self.height as i64 {
            return;
        }
        let i = (y as usize * self.width + x as usize) * 3;
        self.pixels[i..i + 3].copy_from_slice(&rgb);
    }

    fn line(&mut self, x0: f64, y0: f64, x1: f64, y1: f64, rgb: [u8; 3]) {
        let steps = ((x1 - x0).abs().max((y1 - y0).abs()).ceil() as usize).max(1);
        for s in 0..=steps {
            let t = s as f64 / steps as f64;
            let x = x0 + (x1 - x0) * t;
            let y = y0 + (y1 - y0) * t;
            self.put(x.round() as i64, y.round() as i64, rgb);
        }
    }

    fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        let mut encoder = png::Encoder::new(std::io::BufWriter::new(file), self.width as u32, self.height as u32);
        encoder.set_color(png::ColorType::Rgb);
        encoder.set_depth(png::BitDepth::Eight);
        let mut writer = encoder
            .write_header()
            .map_err(|e| Error::Png(e.to_string()))?;
        writer
            .write_image_data(&self.pixels)
            .map_err(|e| Error::Png(e.to_string()))?;
        Ok(())
    }
}

/// 3x5 glyphs for digits and a few symbols, row-major bit masks.
fn glyph(c: char) -> Option<[u8; 5]> {
    Some(match c {
        '0' => [0b111, 0b101, 0b101, 0b101, 0b111],
        '1' => [0b010, 0b110, 0b010, 0b010, 0b111],
        '2' => [0b111, 0b001, 0b111, 0b100, 0b111],
        '3' => [0b111, 0b001, 0b111, 0b001, 0b111],
        '4' => [0b101, 0b101, 0b111, 0b001, 0b001],
        '5' => [0b111, 0b100, 0b111, 0b001, 0b111],
        '6' => [0b111, 0b100, 0b111, 0b101, 0b111],
        '7' => [0b111, 0b001, 0b010, 0b010, 0b010],
        '8' => [0b111, 0b101, 0b111, 0b101, 0b111],
        '9' => [0b111, 0b101, 0b111, 0b001, 0b111],
        '.' => [0b000, 0b000, 0b000, 0b000, 0b010],
        '-' => [0b000, 0b000, 0b111, 0b000, 0b000],
        'e' => [0b000, 0b111, 0b110, 0b100, 0b111],
        'G' => [0b111, 0b100, 0b101, 0b101, 0b111],
        'D' => [0b110, 0b101, 0b101, 0b101, 0b110],
        ' ' => [0; 5],
        _ => return None,
    })
}

fn draw_text(canvas: &mut Canvas, x: i64, y: i64, text: &str, rgb: [u8; 3]) {
    let mut cx = x;
    for c in text.chars() {
        if let Some(rows) = glyph(c) {
            for (ry, bits) in rows.iter().enumerate() {
                for rx in 0..3 {
                    if bits & (0b100 >> rx) != 0 {
                        canvas.put(cx + rx as i64, y + ry as i64, rgb);
                    }
                }
            }
        }
        cx += 4;
    }
}

fn fmt_tick(v: f64) -> String {
    if v == 0.0 {
        "0".to_string()
    } else if v.abs() >= 1000.0 || v.abs() < 0.01 {
        format!("{v:.0e}").replace('E', "e")
    } else {
        format!("{v:.2}")
    }
}

/// Line chart of generator and discriminator losses over steps.
pub fn plot_loss_curves(trace: &LossTrace, path: impl AsRef<Path>) -> Result<()> {
    let records = trace.records();
    if records.is_empty() {
        return Err(Error::invalid("cannot plot an empty loss trace"));
    }
    let (w, h) = (900usize, 540usize);
    let (ml, mr, mt, mb) = (60f64, 20f64, 20f64, 40f64);
    let mut canvas = Canvas::new(w, h);

    let series: [(&str, [u8; 3], Vec<f64>); 2] = [
        ("G", [178, 34, 34], records.iter().map(|r| r.loss_g).collect()),
        ("D", [30, 80, 200], records.iter().map(|r| r.loss_d).collect()),
    ];
    let ymin = series
        .iter()
        .flat_map(|s| s.2.iter())
        .cloned()
        .fold(f64::INFINITY, f64::min)
        .min(0.0);
    let ymax = series
        .iter()
        .flat_map(|s| s.2.iter())
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max)
        .max(1e-9);
    let xmax = records.last().expect("non-empty").step as f64;
    let xmin = records.first().expect("non-empty").step as f64;
    let plot_w = w as f64 - ml - mr;
    let plot_h = h as f64 - mt - mb;
    let to_xy = |step: f64, v: f64| -> (f64, f64) {
        let x = ml + (step - xmin) / (xmax - xmin).max(1.0) * plot_w;
        let y = mt + (1.0 - (v - ymin) / (ymax - ymin).max(1e-12)) * plot_h;
        (x, y)
    };

    let axis = [90u8, 90, 90];
    canvas.line(ml, mt, ml, mt + plot_h, axis);
    canvas.line(ml, mt + plot_h, ml + plot_w, mt + plot_h, axis);
    draw_text(&mut canvas, 8, (mt - 2.0) as i64, &fmt_tick(ymax), axis);
    draw_text(&mut canvas, 8, (mt + plot_h - 3.0) as i64, &fmt_tick(ymin), axis);
    draw_text(&mut canvas, (ml - 4.0) as i64, (mt + plot_h + 8.0) as i64, &fmt_tick(xmin), axis);
    draw_text(
        &mut canvas,
        (ml + plot_w - 20.0) as i64,
        (mt + plot_h + 8.0) as i64,
        &fmt_tick(xmax),
        axis,
    );

    for (label, color, values) in &series {
        let mut prev: Option<(f64, f64)> = None;
        for (r, v) in records.iter().zip(values) {
            let (x, y) = to_xy(r.step as f64, *v);
            if let Some((px, py)) = prev {
                canvas.line(px, py, x, y, *color);
            }
            prev = Some((x, y));
        }
        let idx = if *label == "G" { 0 } else { 1 };
        draw_text(&mut canvas, (ml + plot_w - 40.0) as i64, (mt + 6.0 + idx as f64 * 10.0) as i64, label, *color);
    }
    canvas.save(path.as_ref())
}

/// Blue-to-red thermal gradient.
fn thermal_rgb(t: f64) -> [u8; 3] {
    let stops: [(f64, [f64; 3]); 5] = [
        (0.00, [20.0, 30.0, 120.0]),
        (0.25, [40.0, 140.0, 200.0]),
        (0.50, [240.0, 230.0, 120.0]),
        (0.75, [230.0, 120.0, 40.0]),
        (1.00, [150.0, 20.0, 20.0]),
    ];
    let t = t.clamp(0.0, 1.0);
    for k in 0..stops.len() - 1 {
        let (t0, c0) = stops[k];
        let (t1, c1) = stops[k + 1];
        if t <= t1 {
            let f = (t - t0) / (t1 - t0);
            return [
                (c0[0] + (c1[0] - c0[0]) * f) as u8,
                (c0[1] + (c1[1] - c0[1]) * f) as u8,
                (c0[2] + (c1[2] - c0[2]) * f) as u8,
            ];
        }
    }
    [150, 20, 20]
}

/// 8-bit colorized rendering of a single-band raster (masked pixels gray);
/// the value range defaults to the raster's min/max.
pub fn render_colormap(
    raster: &Raster,
    path: impl AsRef<Path>,
    range: Option<(f64, f64)>,
) -> Result<()> {
    if raster.bands != 1 {
        return Err(Error::invalid("colormap rendering expects one band"));
    }
    let (h, w) = (raster.grid.height, raster.grid.width);
    let (lo, hi) = match range {
        Some(r) => r,
        None => {
            let mut lo = f64::INFINITY;
            let mut hi = f64::NEG_INFINITY;
            for (i, v) in raster.band(0).iter().enumerate() {
                if raster.mask()[i] {
                    lo = lo.min(*v as f64);
                    hi = hi.max(*v as f64);
                }
            }
            if !lo.is_finite() || hi <= lo {
                (0.0, 1.0)
            } else {
                (lo, hi)
            }
        }
    };
    let mut canvas = Canvas::new(w, h);
    for i in 0..h {
        for j in 0..w {
            let rgb = if raster.is_valid(i, j) {
                let t = (raster.get(0, i, j) as f64 - lo) / (hi - lo);
                thermal_rgb(t)
            } else {
                [128, 128, 128]
            };
            canvas.put(j as i64, i as i64, rgb);
        }
    }
    canvas.save(path.as_ref())
}
