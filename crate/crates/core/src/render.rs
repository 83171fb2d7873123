//! Rasterization of events into RGB images of circumferences.
//!
//! Horizontal position follows η, vertical position follows φ, the radius is
//! `C·ln(value)` pixels for the object's energy or transverse momentum, and
//! the colour identifies the object type. Circles are one pixel thick, clip
//! at the canvas edges and never wrap around in φ.

use std::f64::consts::PI;
use std::io::Cursor;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::event::{Event, ObjectKind, PhysicsObject};

#[derive(Debug, Error)]
pub enum RenderError {
    #[error("radius needs a positive finite value, got {0}")]
    NonPositive(f64),
    #[error("invalid canvas: {0}")]
    Canvas(String),
    #[error("png encoding failed: {0}")]
    Png(#[from] png::EncodingError),
    #[error("png decoding failed: {0}")]
    PngDecode(#[from] png::DecodingError),
    #[error("unsupported png layout: {0}")]
    PngLayout(String),
}

/// An 8-bit RGB colour.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Rgb(pub [u8; 3]);

impl Rgb {
    pub const WHITE: Rgb = Rgb([255, 255, 255]);
    pub const BLACK: Rgb = Rgb([0, 0, 0]);
}

/// Colour per object kind.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ColorMap {
    pub electron: Rgb,
    pub muon: Rgb,
    pub jet: Rgb,
    pub bjet: Rgb,
    pub met: Rgb,
}

impl Default for ColorMap {
    fn default() -> Self {
        ColorMap {
            electron: Rgb([0, 0, 255]),
            muon: Rgb([0, 200, 0]),
            jet: Rgb([255, 120, 120]),
            bjet: Rgb([150, 0, 0]),
            met: Rgb::BLACK,
        }
    }
}

impl ColorMap {
    pub fn color(&self, kind: ObjectKind) -> Rgb {
        match kind {
            ObjectKind::Electron => self.electron,
            ObjectKind::Muon => self.muon,
            ObjectKind::Jet => self.jet,
            ObjectKind::BJet => self.bjet,
            ObjectKind::Met => self.met,
        }
    }

    fn entries(&self) -> [(&'static str, Rgb); 5] {
        [
            ("electron", self.electron),
            ("muon", self.muon),
            ("jet", self.jet),
            ("bjet", self.bjet),
            ("met", self.met),
        ]
    }
}

/// Which quantity sets the circle radius.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SizeVariable {
    Energy,
    TransverseMomentum,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CanvasSpec {
    pub width: u32,
    pub height: u32,
    /// Pixels per unit of `ln(value)`.
    pub scale_c: f64,
    pub eta_range: [f64; 2],
    pub phi_range: [f64; 2],
    pub min_radius: u32,
    pub color_map: ColorMap,
    pub background: Rgb,
    pub size_variable: SizeVariable,
}

impl Default for CanvasSpec {
    fn default() -> Self {
        CanvasSpec {
            width: 224,
            height: 224,
            scale_c: 10.5,
            eta_range: [-3.0, 3.0],
            phi_range: [-PI, PI],
            min_radius: 1,
            color_map: ColorMap::default(),
            background: Rgb::WHITE,
            size_variable: SizeVariable::TransverseMomentum,
        }
    }
}

impl CanvasSpec {
    /// Canvas for dimuon images: radius from the muon energy.
    pub fn dimuon() -> Self {
        CanvasSpec {
            size_variable: SizeVariable::Energy,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<(), RenderError> {
        if self.width == 0 || self.height == 0 {
            return Err(RenderError::Canvas("width and height must be positive".into()));
        }
        if !(self.scale_c > 0.0) || !self.scale_c.is_finite() {
            return Err(RenderError::Canvas(format!(
                "scale_c must be positive, got {}",
                self.scale_c
            )));
        }
        for (name, [lo, hi]) in [("eta_range", self.eta_range), ("phi_range", self.phi_range)] {
            if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
                return Err(RenderError::Canvas(format!("{name} must satisfy lo < hi")));
            }
        }
        if self.min_radius == 0 {
            return Err(RenderError::Canvas("min_radius must be at least 1".into()));
        }
        for (name, c) in self.color_map.entries() {
            if c == self.background {
                return Err(RenderError::Canvas(format!("{name} colour equals the background")));
            }
        }
        Ok(())
    }
}

/// Height × width × 3 raster, row-major, rows indexed by `y`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ImageTensor {
    width: u32,
    height: u32,
    data: Vec<u8>,
}

impl ImageTensor {
    pub fn filled(width: u32, height: u32, color: Rgb) -> Self {
        let n = width as usize * height as usize;
        let mut data = Vec::with_capacity(n * 3);
        for _ in 0..n {
            data.extend_from_slice(&color.0);
        }
        ImageTensor { width, height, data }
    }

    pub fn from_raw(width: u32, height: u32, data: Vec<u8>) -> Option<Self> {
        (data.len() == width as usize * height as usize * 3).then_some(ImageTensor { width, height, data })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn as_raw(&self) -> &[u8] {
        &self.data
    }

    pub fn shape(&self) -> [usize; 3] {
        [self.height as usize, self.width as usize, 3]
    }

    fn index(&self, x: u32, y: u32) -> usize {
        (y as usize * self.width as usize + x as usize) * 3
    }

    pub fn get(&self, x: u32, y: u32) -> Rgb {
        let i = self.index(x, y);
        Rgb([self.data[i], self.data[i + 1], self.data[i + 2]])
    }

    pub fn set(&mut self, x: u32, y: u32, color: Rgb) {
        let i = self.index(x, y);
        self.data[i..i + 3].copy_from_slice(&color.0);
    }

    /// Sets a pixel given signed coordinates; no-op outside the canvas.
    pub fn put(&mut self, x: i64, y: i64, color: Rgb) {
        if x >= 0 && y >= 0 && x < i64::from(self.width) && y < i64::from(self.height) {
            self.set(x as u32, y as u32, color);
        }
    }

    pub fn pixels(&self) -> impl Iterator<Item = (u32, u32, Rgb)> + '_ {
        let w = self.width;
        self.data
            .chunks_exact(3)
            .enumerate()
            .map(move |(i, c)| ((i as u32) % w, (i as u32) / w, Rgb([c[0], c[1], c[2]])))
    }

    pub fn count_not(&self, color: Rgb) -> usize {
        self.data.chunks_exact(3).filter(|c| **c != color.0).count()
    }
}

/// `round(C·ln(value))` pixels, half away from zero, at least `min_radius`.
pub fn radius_for(value: f64, spec: &CanvasSpec) -> Result<u32, RenderError> {
    if !(value > 0.0) || !value.is_finite() {
        return Err(RenderError::NonPositive(value));
    }
    let r = (spec.scale_c * value.ln()).round();
    let r = if r < f64::from(spec.min_radius) {
        spec.min_radius
    } else {
        r.min(f64::from(u32::MAX)) as u32
    };
    Ok(r)
}

fn axis_pixel(v: f64, [lo, hi]: [f64; 2], n: u32) -> u32 {
    let t = ((v - lo) / (hi - lo) * f64::from(n)).floor();
    if t.is_nan() || t < 0.0 {
        0
    } else if t >= f64::from(n - 1) {
        n - 1
    } else {
        t as u32
    }
}

/// Pixel column from η and row from φ, floored then clamped to the canvas.
pub fn to_pixel(eta: f64, phi: f64, spec: &CanvasSpec) -> (u32, u32) {
    (
        axis_pixel(eta, spec.eta_range, spec.width),
        axis_pixel(phi, spec.phi_range, spec.height),
    )
}

/// Draws the one-pixel outline of the circle: every pixel whose distance to
/// the centre rounds to `radius`, clipped at the canvas borders.
///
/// `round(d) == r` for `d ≥ 0` is `(2r−1)² ≤ 4d² < (2r+1)²`, so each row's
/// span comes from two integer square roots.
pub fn rasterize_circle(canvas: &mut ImageTensor, center: (i64, i64), radius: u32, color: Rgb) {
    let (cx, cy) = center;
    let r = i64::from(radius);
    let outer = r * r + r;
    let inner = r * r - r;
    let (w, h) = (i64::from(canvas.width), i64::from(canvas.height));
    let y_lo = (cy - r).max(0);
    let y_hi = (cy + r).min(h - 1);
    for y in y_lo..=y_hi {
        let dy = y - cy;
        let dy2 = dy * dy;
        let dx_max = (outer - dy2).max(0).unsigned_abs().isqrt() as i64;
        let t = inner - dy2;
        let dx_min = if t < 0 { 0 } else { t.unsigned_abs().isqrt() as i64 + 1 };
        if dx_min > dx_max {
            continue;
        }
        // right arc, then left arc
        for (a, b) in [(cx + dx_min, cx + dx_max), (cx - dx_max, cx - dx_min)] {
            let a = a.max(0);
            let b = b.min(w - 1);
            for x in a..=b {
                canvas.set(x as u32, y as u32, color);
            }
        }
    }
}

fn draw_rank(kind: ObjectKind) -> u8 {
    match kind {
        ObjectKind::Met => 0,
        ObjectKind::Jet => 1,
        ObjectKind::BJet => 2,
        ObjectKind::Electron => 3,
        ObjectKind::Muon => 4,
    }
}

/// Image plus the number of objects that could not be drawn.
#[derive(Clone, Debug, PartialEq)]
pub struct RenderOutcome {
    pub image: ImageTensor,
    pub skipped: usize,
}

/// Circle that an object turns into.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Glyph {
    pub center: (u32, u32),
    pub radius: u32,
    pub color: Rgb,
}

fn glyph_for(obj: &PhysicsObject, spec: &CanvasSpec) -> Result<Glyph, RenderError> {
    let (eta, value) = if obj.kind == ObjectKind::Met {
        (0.0, obj.pt)
    } else {
        let v = match spec.size_variable {
            SizeVariable::TransverseMomentum => obj.pt,
            SizeVariable::Energy => obj.energy(),
        };
        (obj.eta, v)
    };
    Ok(Glyph {
        center: to_pixel(eta, obj.phi, spec),
        radius: radius_for(value, spec)?,
        color: spec.color_map.color(obj.kind),
    })
}

/// Circles of an event in draw order: MET, jets, b-jets, electrons, muons.
/// A MET of exactly zero means none was measured and yields no circle.
/// Objects whose size value is not positive are counted in the second field.
pub fn layout_event(event: &Event, spec: &CanvasSpec) -> (Vec<Glyph>, usize) {
    let mut objs: Vec<&PhysicsObject> = Vec::with_capacity(event.objects.len() + 1);
    if event.met.pt != 0.0 {
        objs.push(&event.met);
    }
    objs.extend(event.objects.iter());
    // stable: input order within a kind
    objs.sort_by_key(|o| draw_rank(o.kind));
    let mut skipped = 0;
    let glyphs = objs
        .into_iter()
        .filter_map(|o| match glyph_for(o, spec) {
            Ok(g) => Some(g),
            Err(_) => {
                skipped += 1;
                None
            }
        })
        .collect();
    (glyphs, skipped)
}

/// Renders an event. The result depends only on `(event, spec)`.
pub fn render_event(event: &Event, spec: &CanvasSpec) -> RenderOutcome {
    let (glyphs, skipped) = layout_event(event, spec);
    let mut image = ImageTensor::filled(spec.width, spec.height, spec.background);
    for g in glyphs {
        rasterize_circle(
            &mut image,
            (i64::from(g.center.0), i64::from(g.center.1)),
            g.radius,
            g.color,
        );
    }
    RenderOutcome { image, skipped }
}

/// Lossless 8-bit RGB PNG with fixed filter and deflate settings.
pub fn encode_png(image: &ImageTensor) -> Result<Vec<u8>, RenderError> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, image.width, image.height);
        enc.set_color(png::ColorType::Rgb);
        enc.set_depth(png::BitDepth::Eight);
        enc.set_deflate_compression(png::DeflateCompression::Level(6));
        enc.set_filter(png::Filter::Up);
        let mut writer = enc.write_header()?;
        writer.write_image_data(&image.data)?;
        writer.finish()?;
    }
    Ok(out)
}

/// Decodes an 8-bit RGB PNG.
pub fn decode_png(bytes: &[u8]) -> Result<ImageTensor, RenderError> {
    let decoder = png::Decoder::new(Cursor::new(bytes));
    let mut reader = decoder.read_info()?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| RenderError::PngLayout("image too large".into()))?;
    let mut buf = vec![0; size];
    let info = reader.next_frame(&mut buf)?;
    if info.color_type != png::ColorType::Rgb || info.bit_depth != png::BitDepth::Eight {
        return Err(RenderError::PngLayout(format!(
            "expected 8-bit RGB, got {:?} {:?}",
            info.color_type, info.bit_depth
        )));
    }
    buf.truncate(info.buffer_size());
    ImageTensor::from_raw(info.width, info.height, buf)
        .ok_or_else(|| RenderError::PngLayout("buffer size mismatch".into()))
}
