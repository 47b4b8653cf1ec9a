//! Deterministic SVG composition: colour-mapped raster, hatch texture,
//! reliability glyphs, legend and boundary outline.

use std::fmt::Write as _;

use base64::Engine as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{BBox, GridSpec, Polygon};
use crate::raster::RasterField;
use crate::uncertainty::{GlyphGrid, HatchField};

/// Piecewise-linear colour ramp over evenly spaced stops (RGB in 0..=255).
#[derive(Debug, Clone, PartialEq)]
pub struct Ramp {
    stops: Vec<[f64; 3]>,
}

impl Ramp {
    pub fn new(stops: Vec<[f64; 3]>) -> Result<Self> {
        if stops.len() < 2 {
            return Err(Error::Config("a colour ramp needs at least two stops".into()));
        }
        Ok(Self { stops })
    }

    pub fn named(name: &str) -> Result<Self> {
        let hex: &[u32] = match name {
            "viridis" => &[
                0x440154, 0x482878, 0x3e4989, 0x31688e, 0x26828e, 0x1f9e89, 0x35b779, 0x6ece58, 0xb5de2b, 0xfde725,
            ],
            "magma" => &[
                0x000004, 0x1c1044, 0x4f127b, 0x812581, 0xb5367a, 0xe55064, 0xfb8761, 0xfec287, 0xfcfdbf,
            ],
            "coolwarm" => &[0x3b4cc0, 0x6f92f3, 0xaac7fd, 0xdddcdc, 0xf7b89c, 0xe7745b, 0xb40426],
            "gray" => &[0x000000, 0x404040, 0x808080, 0xbfbfbf, 0xffffff],
            _ => return Err(Error::Config(format!("unknown colormap {name:?}"))),
        };
        Self::new(
            hex.iter()
                .map(|h| [((h >> 16) & 0xff) as f64, ((h >> 8) & 0xff) as f64, (h & 0xff) as f64])
                .collect(),
        )
    }

    pub fn stops(&self) -> &[[f64; 3]] {
        &self.stops
    }
}

pub fn colormap(value: f64, vmin: f64, vmax: f64, ramp: &Ramp) -> [f64; 3] {
    let t = if vmax > vmin {
        ((value - vmin) / (vmax - vmin)).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let t = if t.is_nan() { 0.0 } else { t };
    let segs = (ramp.stops.len() - 1) as f64;
    let pos = t * segs;
    let k = (pos.floor() as usize).min(ramp.stops.len() - 2);
    let f = pos - k as f64;
    let (a, b) = (ramp.stops[k], ramp.stops[k + 1]);
    [
        a[0] + (b[0] - a[0]) * f,
        a[1] + (b[1] - a[1]) * f,
        a[2] + (b[2] - a[2]) * f,
    ]
}

fn to_u8(c: [f64; 3]) -> [u8; 3] {
    c.map(|v| v.round().clamp(0.0, 255.0) as u8)
}

fn hex(c: [u8; 3]) -> String {
    format!("#{:02x}{:02x}{:02x}", c[0], c[1], c[2])
}

fn gray(level: u8) -> String {
    hex([level; 3])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RenderSpec {
    pub colormap: String,
    /// Map width in pixels; height follows the bounds aspect.
    pub width_px: u32,
    /// Glyph cells along the longer side.
    pub glyph_grid: usize,
    /// Hatch stripe period in pixels.
    pub stripe_period: f64,
    pub hatch_angle: f64,
    pub boundary_stroke: String,
    pub boundary_width: f64,
    pub vmin: Option<f64>,
    pub vmax: Option<f64>,
}

impl Default for RenderSpec {
    fn default() -> Self {
        Self {
            colormap: "viridis".into(),
            width_px: 800,
            glyph_grid: 12,
            stripe_period: 8.0,
            hatch_angle: 45.0,
            boundary_stroke: "#000000".into(),
            boundary_width: 1.5,
            vmin: None,
            vmax: None,
        }
    }
}

const LEGEND_HEIGHT: f64 = 48.0;

struct Canvas {
    bounds: BBox,
    w: f64,
    h: f64,
}

impl Canvas {
    fn x(&self, lng: f64) -> f64 {
        (lng - self.bounds.min_x) / self.bounds.width() * self.w
    }

    fn y(&self, lat: f64) -> f64 {
        (self.bounds.max_y - lat) / self.bounds.height() * self.h
    }
}

fn same_bounds(a: BBox, b: BBox) -> bool {
    let tol = 1e-9 * a.diagonal().max(1e-12);
    (a.min_x - b.min_x).abs() <= tol
        && (a.min_y - b.min_y).abs() <= tol
        && (a.max_x - b.max_x).abs() <= tol
        && (a.max_y - b.max_y).abs() <= tol
}

/// Glyph grid matching a raster's bounds.
pub fn glyph_grid_for(raster: &RasterField, cells: usize) -> GridSpec {
    GridSpec::with_long_side(raster.bounds(), cells.max(1))
}

fn encode_png(raster: &RasterField, frame: usize, vmin: f64, vmax: f64, ramp: &Ramp) -> Result<Vec<u8>> {
    let (w, h) = (raster.width(), raster.height());
    let mut rgba = Vec::with_capacity(w * h * 4);
    for &v in raster.frame(frame) {
        if raster.is_valid(v) {
            let c = to_u8(colormap(f64::from(v), vmin, vmax, ramp));
            rgba.extend_from_slice(&[c[0], c[1], c[2], 255]);
        } else {
            rgba.extend_from_slice(&[0, 0, 0, 0]);
        }
    }
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, w as u32, h as u32);
        enc.set_color(png::ColorType::Rgba);
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc
            .write_header()
            .map_err(|e| Error::Config(format!("cannot encode raster: {e}")))?;
        writer
            .write_image_data(&rgba)
            .map_err(|e| Error::Config(format!("cannot encode raster: {e}")))?;
    }
    Ok(out)
}

/// Compose one frame. Output bytes depend only on the inputs.
pub fn render(
    raster: &RasterField,
    frame: usize,
    glyphs: Option<&GlyphGrid>,
    hatch: Option<&HatchField>,
    boundary: &Polygon,
    spec: &RenderSpec,
) -> Result<String> {
    if frame >= raster.frames {
        return Err(Error::Config(format!(
            "frame {frame} is past the last of {}",
            raster.frames
        )));
    }
    let bounds = raster.bounds();
    if let Some(g) = glyphs {
        if !same_bounds(g.grid.bounds, bounds) {
            return Err(Error::Shape("glyph grid bounds differ from the raster bounds".into()));
        }
    }
    if let Some(hf) = hatch {
        if !same_bounds(hf.grid.bounds, bounds) {
            return Err(Error::Shape("hatch grid bounds differ from the raster bounds".into()));
        }
    }
    let ramp = Ramp::named(&spec.colormap)?;
    let (fmin, fmax) = raster
        .frame_range(frame)
        .map(|(a, b)| (f64::from(a), f64::from(b)))
        .unwrap_or((0.0, 1.0));
    let vmin = spec.vmin.unwrap_or(fmin);
    let mut vmax = spec.vmax.unwrap_or(fmax);
    if !(vmax > vmin) {
        vmax = vmin + 1.0;
    }
    let w = f64::from(spec.width_px.max(16));
    let h = (w * bounds.height() / bounds.width()).round().max(1.0);
    let canvas = Canvas { bounds, w, h };
    let total_h = h + LEGEND_HEIGHT;

    let mut svg = String::new();
    let _ = writeln!(svg, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w:.0}" height="{total_h:.0}" viewBox="0 0 {w:.0} {total_h:.0}">"#
    );

    let png = encode_png(raster, frame, vmin, vmax, &ramp)?;
    let b64 = base64::engine::general_purpose::STANDARD.encode(png);
    let _ = writeln!(
        svg,
        r#"<g id="heatmap"><image x="0" y="0" width="{w:.0}" height="{h:.0}" preserveAspectRatio="none" style="image-rendering:pixelated" href="data:image/png;base64,{b64}"/></g>"#
    );

    svg.push_str(&hatch_layer(hatch, &canvas, spec));
    svg.push_str(&glyph_layer(glyphs, &canvas));
    svg.push_str(&legend_layer(&ramp, vmin, vmax, &canvas));

    let mut d = String::new();
    for (k, p) in boundary.ring().iter().enumerate() {
        let _ = write!(
            d,
            "{}{:.2},{:.2} ",
            if k == 0 { "M" } else { "L" },
            canvas.x(p.x),
            canvas.y(p.y)
        );
    }
    d.push('Z');
    let _ = writeln!(
        svg,
        r#"<g id="boundary"><path d="{d}" fill="none" stroke="{}" stroke-width="{:.2}"/></g>"#,
        spec.boundary_stroke, spec.boundary_width
    );
    svg.push_str("</svg>\n");
    Ok(svg)
}

fn hatch_layer(hatch: Option<&HatchField>, canvas: &Canvas, spec: &RenderSpec) -> String {
    let mut out = String::from(r#"<g id="hatch">"#);
    if let Some(hf) = hatch {
        let p = spec.stripe_period.max(2.0);
        let _ = write!(
            out,
            r#"<defs><pattern id="hatch-stripes" patternUnits="userSpaceOnUse" width="{p:.2}" height="{p:.2}" patternTransform="rotate({:.1})"><rect x="0" y="0" width="{:.2}" height="{p:.2}" fill="{}"/></pattern></defs>"#,
            spec.hatch_angle,
            p / 2.0,
            gray(64)
        );
        let g = hf.grid;
        let (cw, ch) = (canvas.w / g.width as f64, canvas.h / g.height as f64);
        let level = |v: f64| (v * 20.0).round() as u32;
        for r in 0..g.height {
            let mut c = 0;
            while c < g.width {
                let q = level(hf.opacity[r * g.width + c]);
                let mut e = c + 1;
                while e < g.width && level(hf.opacity[r * g.width + e]) == q {
                    e += 1;
                }
                if q > 0 {
                    let _ = write!(
                        out,
                        "\n<rect x=\"{:.2}\" y=\"{:.2}\" width=\"{:.2}\" height=\"{:.2}\" fill=\"url(#hatch-stripes)\" fill-opacity=\"{:.2}\"/>",
                        c as f64 * cw,
                        r as f64 * ch,
                        (e - c) as f64 * cw,
                        ch,
                        f64::from(q) / 20.0
                    );
                }
                c = e;
            }
        }
    }
    out.push_str("</g>\n");
    out
}

fn glyph_layer(glyphs: Option<&GlyphGrid>, canvas: &Canvas) -> String {
    let mut out = String::from(r#"<g id="glyphs">"#);
    if let Some(gg) = glyphs {
        let g = gg.grid;
        let (cw, ch) = (canvas.w / g.width as f64, canvas.h / g.height as f64);
        let reach = 0.3 * ch;
        for cell in &gg.cells {
            let cx = (cell.col as f64 + 0.5) * cw;
            let cy = (cell.row as f64 + 0.5) * ch;
            let half = 0.3 * cw * (0.4 + 0.6 * cell.w);
            let _ = write!(
                out,
                "\n<line class=\"marker\" x1=\"{:.2}\" y1=\"{cy:.2}\" x2=\"{:.2}\" y2=\"{cy:.2}\" stroke=\"{}\" stroke-width=\"1\"/>",
                cx - half,
                cx + half,
                gray(128)
            );
            let (Some(hp), Some(lo), Some(hi)) = (cell.h_p, cell.h_low, cell.h_high) else {
                continue;
            };
            if hp == 0.0 && lo == 0.0 && hi == 0.0 {
                continue;
            }
            let sign = if hp < 0.0 { -1.0 } else { 1.0 };
            let apex = sign * (1.0 - cell.w) * 0.15 * ch;
            let (y_lo, y_hi) = (cy - lo * reach, cy - hi * reach);
            let band = half * 0.8;
            let _ = write!(
                out,
                "\n<polygon class=\"arrow band\" points=\"{:.2},{:.2} {cx:.2},{:.2} {:.2},{:.2} {:.2},{:.2} {cx:.2},{:.2} {:.2},{:.2}\" fill=\"{}\" fill-opacity=\"0.8\"/>",
                cx - band,
                y_hi,
                y_hi - apex,
                cx + band,
                y_hi,
                cx + band,
                y_lo,
                y_lo - apex,
                cx - band,
                y_lo,
                gray(191)
            );
            let tip = cy - hp * reach;
            let _ = write!(
                out,
                "\n<path class=\"arrow primary\" d=\"M{cx:.2},{cy:.2} L{cx:.2},{tip:.2} M{:.2},{tip:.2} L{:.2},{tip:.2}\" fill=\"none\" stroke=\"{}\" stroke-width=\"2\"/>",
                cx - 0.15 * cw,
                cx + 0.15 * cw,
                gray(38)
            );
        }
    }
    out.push_str("</g>\n");
    out
}

fn legend_layer(ramp: &Ramp, vmin: f64, vmax: f64, canvas: &Canvas) -> String {
    let mut out = String::from(r#"<g id="legend"><defs><linearGradient id="legend-ramp" x1="0" y1="0" x2="1" y2="0">"#);
    let n = ramp.stops().len();
    for (k, &s) in ramp.stops().iter().enumerate() {
        let _ = write!(
            out,
            r#"<stop offset="{:.4}" stop-color="{}"/>"#,
            k as f64 / (n - 1) as f64,
            hex(to_u8(s))
        );
    }
    let y = canvas.h + 8.0;
    let bar_w = canvas.w * 0.6;
    let x0 = (canvas.w - bar_w) / 2.0;
    let _ = write!(
        out,
        "</linearGradient></defs>\n<rect x=\"{x0:.2}\" y=\"{y:.2}\" width=\"{bar_w:.2}\" height=\"14\" fill=\"url(#legend-ramp)\"/>\n<text x=\"{x0:.2}\" y=\"{:.2}\" font-size=\"11\" text-anchor=\"start\">{vmin:.2}</text>\n<text x=\"{:.2}\" y=\"{:.2}\" font-size=\"11\" text-anchor=\"end\">{vmax:.2}</text>",
        y + 30.0,
        x0 + bar_w,
        y + 30.0
    );
    out.push_str("</g>\n");
    out
}
