//! Deterministic overlay rendering: numbered colored boxes and landmark dots
//! drawn onto the whole image, leaving every other pixel bit-identical to the
//! source.
//!
//! No cropping, no blurring, no masking — the face regions are highlighted
//! while the surrounding context stays untouched. All drawing uses integer
//! raster math and the embedded digit font, so identical inputs produce
//! bit-identical rasters on every platform.

use crate::digest::sha256_hex_parts;
use crate::font;
use crate::geometry::AnnotatedFace;
use image::{Rgb, RgbImage};
use serde::{Deserialize, Serialize};
use std::io::Cursor;
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RenderError {
    #[error("invalid render style: {0}")]
    InvalidStyle(String),
    #[error("face {id} extends {overshoot} px beyond the {width}x{height} image (2 px limit)")]
    FaceOutOfBounds {
        id: u32,
        overshoot: i64,
        width: u32,
        height: u32,
    },
    #[error("png encoding failed: {0}")]
    Encode(#[from] image::ImageError),
    #[error("failed to write {path}: {source}")]
    Write {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// How overlays are drawn. Sizes are fractions of per-face geometry with
/// pixel floors so small faces stay legible.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RenderStyle {
    /// Color cycle; face id k uses `palette[(k - 1) % len]`.
    pub palette: Vec<[u8; 3]>,
    /// Box stroke = max(2 px, frac * box diagonal).
    pub line_thickness_frac: f64,
    /// Digit height = clamp(12 px, frac * box height, 48 px).
    pub label_scale_frac: f64,
    /// Dot radius = max(2 px, frac * box diagonal).
    pub landmark_radius_frac: f64,
    pub draw_boxes: bool,
    pub draw_numbers: bool,
    pub draw_landmarks: bool,
}

impl Default for RenderStyle {
    fn default() -> Self {
        Self {
            // chosen for contrast on photographs
            palette: vec![
                [255, 0, 0],     // red
                [0, 255, 0],     // lime
                [0, 0, 255],     // blue
                [255, 255, 0],   // yellow
                [0, 255, 255],   // cyan
                [255, 0, 255],   // magenta
                [255, 165, 0],   // orange
                [128, 0, 128],   // purple
                [255, 255, 255], // white
                [0, 0, 0],       // black
            ],
            line_thickness_frac: 0.01,
            label_scale_frac: 0.25,
            landmark_radius_frac: 0.02,
            draw_boxes: true,
            draw_numbers: true,
            draw_landmarks: true,
        }
    }
}

impl RenderStyle {
    /// Style variant with every overlay disabled; rendering with it is the
    /// identity on pixels (the baseline prompt arm).
    pub fn none() -> Self {
        Self {
            draw_boxes: false,
            draw_numbers: false,
            draw_landmarks: false,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), RenderError> {
        if self.palette.is_empty() {
            return Err(RenderError::InvalidStyle("palette is empty".into()));
        }
        for (name, v) in [
            ("line_thickness_frac", self.line_thickness_frac),
            ("label_scale_frac", self.label_scale_frac),
            ("landmark_radius_frac", self.landmark_radius_frac),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(RenderError::InvalidStyle(format!(
                    "{name} must be a positive finite number, got {v}"
                )));
            }
        }
        Ok(())
    }

    pub fn color_for(&self, id: u32) -> Rgb<u8> {
        let idx = ((id - 1) as usize) % self.palette.len();
        Rgb(self.palette[idx])
    }
}

/// A rendered overlay image together with the faces it shows.
#[derive(Debug, Clone)]
pub struct SovImage {
    pub pixels: RgbImage,
    pub faces: Vec<AnnotatedFace>,
    pub style: RenderStyle,
    /// Content hash of the *source* raster, before any overlay.
    pub source_digest: String,
}

impl SovImage {
    pub fn width(&self) -> u32 {
        self.pixels.width()
    }

    pub fn height(&self) -> u32 {
        self.pixels.height()
    }

    /// Ids of the faces drawn, in id order.
    pub fn face_ids(&self) -> Vec<u32> {
        self.faces.iter().map(|f| f.id).collect()
    }

    /// Lossless PNG bytes of the rendered raster.
    pub fn png_bytes(&self) -> Result<Vec<u8>, RenderError> {
        encode_png_bytes(&self.pixels)
    }
}

/// Content hash of a raster: dimensions plus raw RGB bytes.
pub fn raster_digest(image: &RgbImage) -> String {
    sha256_hex_parts(&[
        &image.width().to_be_bytes(),
        &image.height().to_be_bytes(),
        image.as_raw(),
    ])
}

/// Encodes a raster as lossless PNG in memory.
pub fn encode_png_bytes(image: &RgbImage) -> Result<Vec<u8>, RenderError> {
    let mut buf = Cursor::new(Vec::new());
    image.write_to(&mut buf, image::ImageFormat::Png)?;
    Ok(buf.into_inner())
}

/// Decodes PNG bytes back to an RGB raster.
pub fn decode_png(bytes: &[u8]) -> Result<RgbImage, RenderError> {
    let img = image::load_from_memory_with_format(bytes, image::ImageFormat::Png)?;
    Ok(img.to_rgb8())
}

/// Writes the rendered image as a lossless PNG file.
pub fn encode_png(image: &SovImage, path: &Path) -> Result<(), RenderError> {
    let bytes = image.png_bytes()?;
    std::fs::write(path, bytes).map_err(|source| RenderError::Write {
        path: path.to_path_buf(),
        source,
    })
}

/// Integer pixel rectangle, half-open on the max side, clipped to the image.
#[derive(Debug, Clone, Copy)]
struct PixelRect {
    x0: i64,
    y0: i64,
    x1: i64,
    y1: i64,
}

impl PixelRect {
    fn from_face(face: &AnnotatedFace, width: u32, height: u32) -> Result<Self, RenderError> {
        let x0 = face.bbox.x_min.round() as i64;
        let y0 = face.bbox.y_min.round() as i64;
        let x1 = face.bbox.x_max.round() as i64;
        let y1 = face.bbox.y_max.round() as i64;
        let (w, h) = (i64::from(width), i64::from(height));
        // Box coordinates are non-negative by invariant, so only the far
        // edges can overshoot.
        let overshoot = (x1 - w).max(y1 - h).max(0);
        if overshoot > 2 {
            return Err(RenderError::FaceOutOfBounds {
                id: face.id,
                overshoot,
                width,
                height,
            });
        }
        if overshoot > 0 {
            log::warn!(
                "face {} clipped to the image: {} px over the edge",
                face.id,
                overshoot
            );
        }
        Ok(Self {
            x0: x0.min(w),
            y0: y0.min(h),
            x1: x1.min(w),
            y1: y1.min(h),
        })
    }
}

/// Renders numbered boxes and landmark dots over a copy of `source`.
///
/// Pixels not covered by a stroke, label, or dot are bit-identical to the
/// source. An empty face list returns the source unchanged. Faces are drawn
/// in list order, so later ids paint over earlier ones where overlays touch.
pub fn render(
    source: &RgbImage,
    faces: &[AnnotatedFace],
    style: &RenderStyle,
) -> Result<SovImage, RenderError> {
    style.validate()?;
    let source_digest = raster_digest(source);
    let mut canvas = source.clone();

    for face in faces {
        let rect = PixelRect::from_face(face, canvas.width(), canvas.height())?;
        let color = style.color_for(face.id);
        if style.draw_boxes {
            let thickness = stroke_thickness(face, style);
            paint_ring(&mut canvas, rect, thickness, color);
        }
        if style.draw_landmarks {
            if let Some(set) = &face.landmarks {
                let radius = dot_radius(face, style);
                for p in set.points() {
                    paint_dot(&mut canvas, p.x.round() as i64, p.y.round() as i64, radius, color);
                }
            }
        }
        if style.draw_numbers {
            paint_label(&mut canvas, face, rect, style, color);
        }
    }

    Ok(SovImage {
        pixels: canvas,
        faces: faces.to_vec(),
        style: style.clone(),
        source_digest,
    })
}

/// Stroke thickness in pixels for one face box.
pub fn stroke_thickness(face: &AnnotatedFace, style: &RenderStyle) -> i64 {
    ((style.line_thickness_frac * face.bbox.diagonal()).round() as i64).max(2)
}

/// Landmark dot radius in pixels for one face box.
pub fn dot_radius(face: &AnnotatedFace, style: &RenderStyle) -> i64 {
    ((style.landmark_radius_frac * face.bbox.diagonal()).round() as i64).max(2)
}

/// Label digit height in pixels for one face box.
pub fn label_height(face: &AnnotatedFace, style: &RenderStyle) -> i64 {
    (style.label_scale_frac * face.bbox.height()).round().clamp(12.0, 48.0) as i64
}

fn put(canvas: &mut RgbImage, x: i64, y: i64, color: Rgb<u8>) {
    if x >= 0 && y >= 0 && x < i64::from(canvas.width()) && y < i64::from(canvas.height()) {
        canvas.put_pixel(x as u32, y as u32, color);
    }
}

/// Rectangle ring of `t` pixels drawn inward from the rect boundary.
fn paint_ring(canvas: &mut RgbImage, rect: PixelRect, t: i64, color: Rgb<u8>) {
    for y in rect.y0..rect.y1 {
        for x in rect.x0..rect.x1 {
            let on_edge =
                x < rect.x0 + t || x >= rect.x1 - t || y < rect.y0 + t || y >= rect.y1 - t;
            if on_edge {
                put(canvas, x, y, color);
            }
        }
    }
}

/// Filled circle in the face color with a one-pixel darker outline.
fn paint_dot(canvas: &mut RgbImage, cx: i64, cy: i64, r: i64, color: Rgb<u8>) {
    let outline = Rgb([color.0[0] / 2, color.0[1] / 2, color.0[2] / 2]);
    let rr = r * r;
    let outer = (r + 1) * (r + 1);
    for dy in -(r + 1)..=(r + 1) {
        for dx in -(r + 1)..=(r + 1) {
            let d2 = dx * dx + dy * dy;
            if d2 <= rr {
                put(canvas, cx + dx, cy + dy, color);
            } else if d2 <= outer {
                put(canvas, cx + dx, cy + dy, outline);
            }
        }
    }
}

/// Draws the decimal id just above the box's top-left corner, shifting the
/// label inside the image if it would clip. Only glyph pixels are painted.
fn paint_label(
    canvas: &mut RgbImage,
    face: &AnnotatedFace,
    rect: PixelRect,
    style: &RenderStyle,
    color: Rgb<u8>,
) {
    let h = label_height(face, style);
    let digit_w = ((h * i64::from(font::GLYPH_WIDTH)) as f64 / f64::from(font::GLYPH_HEIGHT))
        .round()
        .max(1.0) as i64;
    let gap = (h / 7).max(1);
    let digits: Vec<u8> = face
        .id
        .to_string()
        .bytes()
        .map(|b| b - b'0')
        .collect();
    let label_w = digit_w * digits.len() as i64 + gap * (digits.len() as i64 - 1);

    let (img_w, img_h) = (i64::from(canvas.width()), i64::from(canvas.height()));
    // preferred: bottom of the label 2 px above the box top edge
    let mut y = rect.y0 - 2 - h;
    if y < 0 {
        // fall back to just inside the box
        y = rect.y0 + 2;
    }
    y = y.min(img_h - h).max(0);
    let mut x = rect.x0;
    if x + label_w > img_w {
        x = img_w - label_w;
    }
    x = x.max(0);

    for (i, &d) in digits.iter().enumerate() {
        let x_off = x + i as i64 * (digit_w + gap);
        for gy in 0..h {
            for gx in 0..digit_w {
                if font::scaled_bit(d, gx as u32, gy as u32, digit_w as u32, h as u32) {
                    put(canvas, x_off + gx, y + gy, color);
                }
            }
        }
    }
}
