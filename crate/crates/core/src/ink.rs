//! Geometric model for online ink: timestamped points grouped into strokes.
//!
//! All types are plain immutable values. Coordinates are abstract canvas
//! units; pixel discretization only happens in [`crate::raster`].

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum InkError {
    #[error("stroke {stroke} has no points")]
    EmptyStroke { stroke: usize },
    #[error("ink has no strokes")]
    EmptyInk,
    #[error("non-finite value at stroke {stroke}, point {point}")]
    NonFinite { stroke: usize, point: usize },
    #[error("timestamps decrease at stroke {stroke}, point {point}")]
    DecreasingTime { stroke: usize, point: usize },
    #[error("invalid canvas {w}x{h}: both sides must be positive and finite")]
    InvalidCanvas { w: f64, h: f64 },
    #[error("margin {margin} does not fit a {w}x{h} canvas")]
    InvalidMargin { margin: f64, w: f64, h: f64 },
    #[error("inverted box: ({x_min}, {y_min}, {x_max}, {y_max})")]
    InvertedBox {
        x_min: f64,
        y_min: f64,
        x_max: f64,
        y_max: f64,
    },
}

/// A sampled pen position. Serialized as `[x, y, t]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 3]", into = "[f64; 3]")]
pub struct Point {
    pub x: f64,
    pub y: f64,
    /// Seconds since an arbitrary epoch.
    pub t: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64, t: f64) -> Self {
        Self { x, y, t }
    }

    fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.t.is_finite()
    }
}

impl From<[f64; 3]> for Point {
    fn from([x, y, t]: [f64; 3]) -> Self {
        Self { x, y, t }
    }
}

impl From<Point> for [f64; 3] {
    fn from(p: Point) -> Self {
        [p.x, p.y, p.t]
    }
}

/// A pen-down to pen-up trajectory with non-decreasing timestamps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Point>", into = "Vec<Point>")]
pub struct Stroke {
    points: Vec<Point>,
}

impl Stroke {
    /// Strict constructor: rejects empty strokes, non-finite values and
    /// decreasing timestamps.
    pub fn new(points: Vec<Point>) -> Result<Self, InkError> {
        Self::validate(&points, 0)?;
        Ok(Self { points })
    }

    /// Constructor for raw device captures. A timestamp lower than its
    /// predecessor is clamped up to the predecessor's value.
    pub fn from_capture(mut points: Vec<Point>) -> Result<Self, InkError> {
        for i in 1..points.len() {
            if points[i].t < points[i - 1].t {
                points[i].t = points[i - 1].t;
            }
        }
        Self::validate(&points, 0)?;
        Ok(Self { points })
    }

    fn validate(points: &[Point], stroke: usize) -> Result<(), InkError> {
        if points.is_empty() {
            return Err(InkError::EmptyStroke { stroke });
        }
        for (i, p) in points.iter().enumerate() {
            if !p.is_finite() {
                return Err(InkError::NonFinite { stroke, point: i });
            }
            if i > 0 && p.t < points[i - 1].t {
                return Err(InkError::DecreasingTime { stroke, point: i });
            }
        }
        Ok(())
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

impl TryFrom<Vec<Point>> for Stroke {
    type Error = InkError;

    fn try_from(points: Vec<Point>) -> Result<Self, Self::Error> {
        Stroke::new(points)
    }
}

impl From<Stroke> for Vec<Point> {
    fn from(s: Stroke) -> Self {
        s.points
    }
}

impl TryFrom<Vec<Stroke>> for Ink {
    type Error = InkError;

    fn try_from(strokes: Vec<Stroke>) -> Result<Self, Self::Error> {
        Ink::new(strokes)
    }
}

impl From<Ink> for Vec<Stroke> {
    fn from(ink: Ink) -> Self {
        ink.strokes
    }
}

/// An ordered, non-empty sequence of strokes in capture order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Stroke>", into = "Vec<Stroke>")]
pub struct Ink {
    strokes: Vec<Stroke>,
}

impl Ink {
    pub fn new(strokes: Vec<Stroke>) -> Result<Self, InkError> {
        if strokes.is_empty() {
            return Err(InkError::EmptyInk);
        }
        Ok(Self { strokes })
    }

    /// Builds an ink from raw point lists, clamping decreasing timestamps.
    pub fn from_capture(strokes: Vec<Vec<Point>>) -> Result<Self, InkError> {
        let strokes = strokes
            .into_iter()
            .enumerate()
            .map(|(i, pts)| {
                Stroke::from_capture(pts).map_err(|e| match e {
                    InkError::EmptyStroke { .. } => InkError::EmptyStroke { stroke: i },
                    InkError::NonFinite { point, .. } => InkError::NonFinite { stroke: i, point },
                    other => other,
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(strokes)
    }

    pub fn strokes(&self) -> &[Stroke] {
        &self.strokes
    }

    pub fn points(&self) -> impl Iterator<Item = &Point> + '_ {
        self.strokes.iter().flat_map(|s| s.points.iter())
    }

    pub fn num_points(&self) -> usize {
        self.strokes.iter().map(Stroke::len).sum()
    }

    /// Applies `f` to every point. The caller is responsible for keeping
    /// timestamps non-decreasing within each stroke.
    pub fn map_points(&self, mut f: impl FnMut(Point) -> Point) -> Self {
        Self {
            strokes: self
                .strokes
                .iter()
                .map(|s| Stroke {
                    points: s.points.iter().map(|&p| f(p)).collect(),
                })
                .collect(),
        }
    }

    pub fn translated(&self, dx: f64, dy: f64) -> Self {
        self.map_points(|p| Point::new(p.x + dx, p.y + dy, p.t))
    }

    /// Uniform spatial scale about the origin; time untouched.
    pub fn scaled(&self, factor: f64) -> Self {
        self.map_points(|p| Point::new(p.x * factor, p.y * factor, p.t))
    }

    pub fn first_time(&self) -> f64 {
        self.strokes[0].points[0].t
    }
}

/// Tight axis-aligned bounding box over all points of the ink.
pub fn bounding_box(ink: &Ink) -> BBox {
    let mut pts = ink.points();
    let first = pts.next().expect("ink is non-empty by construction");
    let mut b = BBox {
        x_min: first.x,
        y_min: first.y,
        x_max: first.x,
        y_max: first.y,
    };
    for p in pts {
        b.x_min = b.x_min.min(p.x);
        b.y_min = b.y_min.min(p.y);
        b.x_max = b.x_max.max(p.x);
        b.y_max = b.y_max.max(p.y);
    }
    b
}

/// Shifts all timestamps so the first point of the first stroke is at t = 0.
pub fn normalize_time(ink: &Ink) -> Ink {
    let t0 = ink.first_time();
    if t0 == 0.0 {
        return ink.clone();
    }
    ink.map_points(|p| Point::new(p.x, p.y, p.t - t0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl BBox {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Result<Self, InkError> {
        if !(x_min <= x_max && y_min <= y_max) {
            return Err(InkError::InvertedBox {
                x_min,
                y_min,
                x_max,
                y_max,
            });
        }
        Ok(Self {
            x_min,
            y_min,
            x_max,
            y_max,
        })
    }

    /// Builds a box from two arbitrary corners, swapping as needed.
    pub fn from_corners(x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        Self {
            x_min: x0.min(x1),
            y_min: y0.min(y1),
            x_max: x0.max(x1),
            y_max: y0.max(y1),
        }
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn translated(&self, dx: f64, dy: f64) -> Self {
        Self {
            x_min: self.x_min + dx,
            y_min: self.y_min + dy,
            x_max: self.x_max + dx,
            y_max: self.y_max + dy,
        }
    }

    /// Grows the box by `pad` on every side.
    pub fn expanded(&self, pad: f64) -> Self {
        Self {
            x_min: self.x_min - pad,
            y_min: self.y_min - pad,
            x_max: self.x_max + pad,
            y_max: self.y_max + pad,
        }
    }

    pub fn contains(&self, other: &BBox) -> bool {
        other.x_min >= self.x_min && other.y_min >= self.y_min && other.x_max <= self.x_max && other.y_max <= self.y_max
    }
}

/// Size of the writing area in canvas units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CanvasSpec {
    pub w: f64,
    pub h: f64,
}

impl CanvasSpec {
    pub fn new(w: f64, h: f64) -> Result<Self, InkError> {
        if !(w.is_finite() && h.is_finite() && w > 0.0 && h > 0.0) {
            return Err(InkError::InvalidCanvas { w, h });
        }
        Ok(Self { w, h })
    }

    pub fn square(side: f64) -> Result<Self, InkError> {
        Self::new(side, side)
    }
}

/// A uniform scale followed by a translation: `p' = (p - origin) * scale + offset`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitTransform {
    pub origin_x: f64,
    pub origin_y: f64,
    pub scale: f64,
    pub offset_x: f64,
    pub offset_y: f64,
}

impl FitTransform {
    /// Computes the transform that fits `source` into `canvas` minus `margin`
    /// on each side with one scale factor, centering along the slack axis.
    ///
    /// A box with zero extent on both axes keeps scale 1 and lands at the
    /// canvas center. With zero extent on one axis, the other axis decides
    /// the scale.
    pub fn fit(source: &BBox, canvas: CanvasSpec, margin: f64) -> Result<Self, InkError> {
        if !(margin >= 0.0 && 2.0 * margin < canvas.w.min(canvas.h)) {
            return Err(InkError::InvalidMargin {
                margin,
                w: canvas.w,
                h: canvas.h,
            });
        }
        let avail_w = canvas.w - 2.0 * margin;
        let avail_h = canvas.h - 2.0 * margin;
        let (ew, eh) = (source.width(), source.height());
        let scale = match (ew > 0.0, eh > 0.0) {
            (true, true) => (avail_w / ew).min(avail_h / eh),
            (true, false) => avail_w / ew,
            (false, true) => avail_h / eh,
            (false, false) => 1.0,
        };
        Ok(Self {
            origin_x: source.x_min,
            origin_y: source.y_min,
            scale,
            offset_x: margin + (avail_w - ew * scale) / 2.0,
            offset_y: margin + (avail_h - eh * scale) / 2.0,
        })
    }

    pub fn apply(&self, x: f64, y: f64) -> (f64, f64) {
        (
            (x - self.origin_x) * self.scale + self.offset_x,
            (y - self.origin_y) * self.scale + self.offset_y,
        )
    }

    pub fn apply_box(&self, b: &BBox) -> BBox {
        let (x0, y0) = self.apply(b.x_min, b.y_min);
        let (x1, y1) = self.apply(b.x_max, b.y_max);
        BBox::from_corners(x0, y0, x1, y1)
    }

    pub fn apply_ink(&self, ink: &Ink) -> Ink {
        ink.map_points(|p| {
            let (x, y) = self.apply(p.x, p.y);
            Point::new(x, y, p.t)
        })
    }
}

/// Maps the ink into `canvas` with uniform scale, preserving aspect ratio.
pub fn fit_to_canvas(ink: &Ink, canvas: CanvasSpec, margin: f64) -> Result<Ink, InkError> {
    let transform = FitTransform::fit(&bounding_box(ink), canvas, margin)?;
    Ok(transform.apply_ink(ink))
}
