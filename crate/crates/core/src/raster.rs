//! Time and distance rendering of ink into a three-channel image.
//!
//! Each point gets a color: red is elapsed time relative to the longest
//! elapsed time in the ink, green and blue are the absolute x and y steps
//! from the previous point of the same stroke relative to the largest step in
//! the ink. Segments interpolate the colors of their endpoints.

use std::io::Cursor;
use std::path::{Path, PathBuf};

use image::{ImageFormat, RgbImage};
use thiserror::Error;

use crate::ink::{bounding_box, CanvasSpec, FitTransform, Ink, InkError};

/// Canvas side length the default stroke width is calibrated for.
pub const REFERENCE_SIZE: u32 = 448;
/// Stroke width in pixels at [`REFERENCE_SIZE`].
pub const REFERENCE_STROKE_WIDTH: f64 = 2.0;
/// Smallest accepted image side.
pub const MIN_SIDE: u32 = 8;

#[derive(Debug, Error)]
pub enum RasterError {
    #[error("canvas {w}x{h} is smaller than the {MIN_SIDE}x{MIN_SIDE} minimum")]
    CanvasTooSmall { w: u32, h: u32 },
    #[error("stroke width must be at least 1 pixel, got {0}")]
    BadStrokeWidth(u32),
    #[error(transparent)]
    Geometry(#[from] InkError),
    #[error("failed to write image {}: {source}", path.display())]
    Write {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
    #[error("failed to encode image: {0}")]
    Encode(#[source] image::ImageError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointColor {
    pub r: f64,
    pub g: f64,
    pub b: f64,
}

impl PointColor {
    pub const BLACK: PointColor = PointColor { r: 0.0, g: 0.0, b: 0.0 };

    fn lerp(self, other: PointColor, s: f64) -> PointColor {
        let mix = |a: f64, b: f64| ((1.0 - s) * a + s * b).clamp(0.0, 1.0);
        PointColor {
            r: mix(self.r, other.r),
            g: mix(self.g, other.g),
            b: mix(self.b, other.b),
        }
    }
}

/// Per-point colors, grouped like the ink's strokes.
///
/// The first point of every stroke has zero x/y step. A channel whose
/// maximum over the ink is zero is zero everywhere.
pub fn point_colors(ink: &Ink) -> Vec<Vec<PointColor>> {
    let t0 = ink.first_time();
    let mut max_t = 0.0f64;
    let mut max_dx = 0.0f64;
    let mut max_dy = 0.0f64;
    for stroke in ink.strokes() {
        let pts = stroke.points();
        for (j, p) in pts.iter().enumerate() {
            max_t = max_t.max(p.t - t0);
            if j > 0 {
                max_dx = max_dx.max((p.x - pts[j - 1].x).abs());
                max_dy = max_dy.max((p.y - pts[j - 1].y).abs());
            }
        }
    }
    let ratio = |v: f64, max: f64| if max > 0.0 { (v / max).clamp(0.0, 1.0) } else { 0.0 };

    ink.strokes()
        .iter()
        .map(|stroke| {
            let pts = stroke.points();
            pts.iter()
                .enumerate()
                .map(|(j, p)| {
                    let (dx, dy) = if j == 0 {
                        (0.0, 0.0)
                    } else {
                        ((p.x - pts[j - 1].x).abs(), (p.y - pts[j - 1].y).abs())
                    };
                    PointColor {
                        r: ratio(p.t - t0, max_t),
                        g: ratio(dx, max_dx),
                        b: ratio(dy, max_dy),
                    }
                })
                .collect()
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RenderOptions {
    /// Pen width in pixels, stamped as a disc of this diameter.
    pub stroke_width: u32,
    /// Blank border kept around the fitted ink, in pixels.
    pub margin: f64,
}

impl RenderOptions {
    /// Width scales linearly from 2 px at 448 px, never below 1 px. The
    /// margin equals the stroke width.
    pub fn for_size(side: u32) -> Self {
        let width = (REFERENCE_STROKE_WIDTH * side as f64 / REFERENCE_SIZE as f64)
            .round()
            .max(1.0) as u32;
        Self {
            stroke_width: width,
            margin: width as f64,
        }
    }
}

impl Default for RenderOptions {
    fn default() -> Self {
        Self::for_size(REFERENCE_SIZE)
    }
}

/// Planar RGB image with channel values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RasterImage {
    width: u32,
    height: u32,
    // R plane, then G plane, then B plane; row-major.
    data: Vec<f32>,
}

impl RasterImage {
    pub fn black(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            data: vec![0.0; 3 * width as usize * height as usize],
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    fn plane_len(&self) -> usize {
        self.width as usize * self.height as usize
    }

    /// Value of `channel` (0 = R, 1 = G, 2 = B) at pixel `(x, y)`.
    pub fn get(&self, channel: usize, x: u32, y: u32) -> f32 {
        self.data[channel * self.plane_len() + y as usize * self.width as usize + x as usize]
    }

    pub fn pixel(&self, x: u32, y: u32) -> [f32; 3] {
        [self.get(0, x, y), self.get(1, x, y), self.get(2, x, y)]
    }

    fn set(&mut self, x: u32, y: u32, c: PointColor) {
        let n = self.plane_len();
        let idx = y as usize * self.width as usize + x as usize;
        self.data[idx] = c.r as f32;
        self.data[n + idx] = c.g as f32;
        self.data[2 * n + idx] = c.b as f32;
    }

    /// Planar data, `3 * width * height` values.
    pub fn planes(&self) -> &[f32] {
        &self.data
    }

    /// Interleaved `height x width x 3` copy.
    pub fn to_hwc(&self) -> Vec<f32> {
        let n = self.plane_len();
        let mut out = Vec::with_capacity(3 * n);
        for i in 0..n {
            out.extend_from_slice(&[self.data[i], self.data[n + i], self.data[2 * n + i]]);
        }
        out
    }

    /// 8-bit quantization, `round(v * 255)`.
    pub fn to_rgb8(&self) -> RgbImage {
        let q = |v: f32| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
        RgbImage::from_fn(self.width, self.height, |x, y| {
            let [r, g, b] = self.pixel(x, y);
            image::Rgb([q(r), q(g), q(b)])
        })
    }

    pub fn to_png_bytes(&self) -> Result<Vec<u8>, RasterError> {
        let mut buf = Cursor::new(Vec::new());
        self.to_rgb8()
            .write_to(&mut buf, ImageFormat::Png)
            .map_err(RasterError::Encode)?;
        Ok(buf.into_inner())
    }
}

fn disc_offsets(width: u32) -> Vec<(i64, i64)> {
    let r = width as f64 / 2.0;
    let reach = r.ceil() as i64;
    let mut out = Vec::new();
    for dy in -reach..=reach {
        for dx in -reach..=reach {
            if ((dx * dx + dy * dy) as f64) <= r * r {
                out.push((dx, dy));
            }
        }
    }
    out
}

struct Painter {
    img: RasterImage,
    disc: Vec<(i64, i64)>,
}

impl Painter {
    fn cell(v: f64, limit: u32) -> i64 {
        (v.floor() as i64).clamp(0, limit as i64 - 1)
    }

    fn stamp(&mut self, x: f64, y: f64, c: PointColor) {
        let cx = Self::cell(x, self.img.width);
        let cy = Self::cell(y, self.img.height);
        for &(dx, dy) in &self.disc {
            let (px, py) = (cx + dx, cy + dy);
            if px >= 0 && py >= 0 && px < self.img.width as i64 && py < self.img.height as i64 {
                self.img.set(px as u32, py as u32, c);
            }
        }
    }

    fn segment(&mut self, a: (f64, f64), b: (f64, f64), ca: PointColor, cb: PointColor) {
        let steps = (b.0 - a.0).abs().max((b.1 - a.1).abs()).ceil().max(1.0) as u64;
        for k in 0..=steps {
            let s = k as f64 / steps as f64;
            let x = a.0 + s * (b.0 - a.0);
            let y = a.1 + s * (b.1 - a.1);
            self.stamp(x, y, ca.lerp(cb, s));
        }
    }
}

/// Renders `ink` onto a black canvas of `canvas` pixels (rounded to integers).
///
/// The ink is fitted with [`FitTransform::fit`]; strokes are painted in order,
/// later pixels overwriting earlier ones.
pub fn render(ink: &Ink, canvas: CanvasSpec, opts: RenderOptions) -> Result<RasterImage, RasterError> {
    let width = canvas.w.round() as u32;
    let height = canvas.h.round() as u32;
    if width < MIN_SIDE || height < MIN_SIDE {
        return Err(RasterError::CanvasTooSmall { w: width, h: height });
    }
    if opts.stroke_width == 0 {
        return Err(RasterError::BadStrokeWidth(0));
    }
    let pixel_canvas = CanvasSpec::new(width as f64, height as f64)?;
    let transform = FitTransform::fit(&bounding_box(ink), pixel_canvas, opts.margin)?;
    let colors = point_colors(ink);

    let mut painter = Painter {
        img: RasterImage::black(width, height),
        disc: disc_offsets(opts.stroke_width),
    };
    for (stroke, stroke_colors) in ink.strokes().iter().zip(&colors) {
        let pts: Vec<(f64, f64)> = stroke.points().iter().map(|p| transform.apply(p.x, p.y)).collect();
        if pts.len() == 1 {
            painter.stamp(pts[0].0, pts[0].1, stroke_colors[0]);
            continue;
        }
        for j in 1..pts.len() {
            painter.segment(pts[j - 1], pts[j], stroke_colors[j - 1], stroke_colors[j]);
        }
    }
    Ok(painter.img)
}

/// Pixel cell that a fitted canvas coordinate falls into.
pub fn pixel_of(x: f64, y: f64, width: u32, height: u32) -> (u32, u32) {
    (Painter::cell(x, width) as u32, Painter::cell(y, height) as u32)
}

/// Writes a lossless 8-bit PNG.
pub fn export_image(img: &RasterImage, path: &Path) -> Result<(), RasterError> {
    img.to_rgb8()
        .save_with_format(path, ImageFormat::Png)
        .map_err(|source| RasterError::Write {
            path: path.to_path_buf(),
            source,
        })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ink::{Point, Stroke};

    fn ink(strokes: &[&[(f64, f64, f64)]]) -> Ink {
        Ink::new(
            strokes
                .iter()
                .map(|s| Stroke::new(s.iter().map(|&(x, y, t)| Point::new(x, y, t)).collect()).unwrap())
                .collect(),
        )
        .unwrap()
    }

    fn rgb(c: &PointColor) -> (f64, f64, f64) {
        (c.r, c.g, c.b)
    }

    #[test]
    fn single_point_is_black() {
        let c = point_colors(&ink(&[&[(4.0, 2.0, 0.0)]]));
        assert_eq!(rgb(&c[0][0]), (0.0, 0.0, 0.0));
    }

    #[test]
    fn three_point_stroke_colors() {
        let c = point_colors(&ink(&[&[(0.0, 0.0, 0.0), (3.0, 0.0, 1.0), (0.0, 4.0, 2.0)]]));
        let got: Vec<_> = c[0].iter().map(rgb).collect();
        assert_eq!(got, vec![(0.0, 0.0, 0.0), (0.5, 1.0, 0.0), (1.0, 1.0, 1.0)]);
    }

    #[test]
    fn steps_reset_at_stroke_start() {
        let c = point_colors(&ink(&[&[(0.0, 0.0, 0.0), (1.0, 0.0, 1.0)], &[(5.0, 5.0, 2.0)]]));
        assert_eq!(rgb(&c[1][0]), (1.0, 0.0, 0.0));
        assert_eq!(rgb(&c[0][1]), (0.5, 1.0, 0.0));
    }

    #[test]
    fn vertical_writing_has_empty_green() {
        let c = point_colors(&ink(&[&[(1.0, 0.0, 0.0), (1.0, 3.0, 1.0), (1.0, 5.0, 2.0)]]));
        assert!(c[0].iter().all(|p| p.g == 0.0));
        assert_eq!(c[0][1].b, 1.0);
    }

    #[test]
    fn colors_use_elapsed_time() {
        let c = point_colors(&ink(&[&[(0.0, 0.0, 10.0), (1.0, 0.0, 12.0), (2.0, 0.0, 14.0)]]));
        assert_eq!(c[0][1].r, 0.5);
    }

    #[test]
    fn render_dims_and_background() {
        let img = render(
            &ink(&[&[(3.0, 3.0, 0.0)]]),
            CanvasSpec::square(64.0).unwrap(),
            RenderOptions::for_size(64),
        )
        .unwrap();
        assert_eq!((img.width(), img.height()), (64, 64));
        assert!(img.planes().iter().all(|&v| v == 0.0));

        let img = render(
            &ink(&[&[(0.0, 0.0, 0.0), (5.0, 1.0, 1.0)]]),
            CanvasSpec::new(100.4, 50.6).unwrap(),
            RenderOptions::for_size(100),
        )
        .unwrap();
        assert_eq!((img.width(), img.height()), (100, 51));
    }

    #[test]
    fn horizontal_stroke_red_ramps() {
        let size = 64;
        let opts = RenderOptions::for_size(size);
        let img = render(
            &ink(&[&[(0.0, 0.0, 0.0), (10.0, 0.0, 1.0)]]),
            CanvasSpec::square(size as f64).unwrap(),
            opts,
        )
        .unwrap();
        let row = size / 2;
        let reds: Vec<f32> = (0..size)
            .map(|x| img.get(0, x, row))
            .skip(opts.margin as usize)
            .take(size as usize - 2 * opts.margin as usize + 1)
            .collect();
        assert!(reds.windows(2).all(|w| w[0] <= w[1]), "{reds:?}");
        assert_eq!(*reds.first().unwrap(), 0.0);
        assert_eq!(*reds.last().unwrap(), 1.0);
    }

    #[test]
    fn later_strokes_overwrite() {
        // Two strokes crossing at the center; the second one wins there.
        let i = ink(&[
            &[(0.0, 5.0, 0.0), (10.0, 5.0, 1.0)],
            &[(5.0, 0.0, 2.0), (5.0, 10.0, 3.0)],
        ]);
        let img = render(&i, CanvasSpec::square(64.0).unwrap(), RenderOptions::for_size(64)).unwrap();
        let [_, g, b] = img.pixel(32, 32);
        assert_eq!(g, 0.0);
        assert!(b > 0.0);
    }

    #[test]
    fn rejects_tiny_canvas() {
        let r = render(
            &ink(&[&[(0.0, 0.0, 0.0)]]),
            CanvasSpec::square(4.0).unwrap(),
            RenderOptions::for_size(4),
        );
        assert!(matches!(r, Err(RasterError::CanvasTooSmall { .. })));
    }

    #[test]
    fn default_width_scales_with_size() {
        assert_eq!(RenderOptions::for_size(448).stroke_width, 2);
        assert_eq!(RenderOptions::for_size(896).stroke_width, 4);
        assert_eq!(RenderOptions::for_size(64).stroke_width, 1);
        assert_eq!(disc_offsets(1), vec![(0, 0)]);
        assert_eq!(disc_offsets(2).len(), 5);
        assert_eq!(disc_offsets(3).len(), 9);
    }

    #[test]
    fn png_roundtrip_quantizes() {
        let i = ink(&[&[(0.0, 0.0, 0.0), (3.0, 1.0, 1.0), (6.0, 0.0, 3.0)]]);
        let img = render(&i, CanvasSpec::square(32.0).unwrap(), RenderOptions::for_size(32)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ink.png");
        export_image(&img, &path).unwrap();
        let back = image::open(&path).unwrap().to_rgb8();
        assert_eq!(back, img.to_rgb8());
        let px = back.get_pixel(0, 0);
        assert_eq!(px.0, [0, 0, 0]);
    }

    #[test]
    fn export_reports_path() {
        let img = RasterImage::black(8, 8);
        let err = export_image(&img, Path::new("/nonexistent-dir/x.png")).unwrap_err();
        assert!(err.to_string().contains("/nonexistent-dir/x.png"));
    }
}
