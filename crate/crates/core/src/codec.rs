//! Prompt construction and the segmentation target grammar.
//!
//! A segmentation target is a flat token sequence:
//!
//! ```text
//! target    := group*
//! group     := int SP int SP int SP int SP classname
//! int       := 0 ..= grid - 1
//! ```
//!
//! Groups of one class are contiguous and classes appear in prompt order.
//! The encoder is strict; the decoder accepts raw model output and reports
//! what it skipped.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ink::{BBox, CanvasSpec, InkError};

pub const TEXT_QUESTION: &str = "What is written in the image?";
pub const MATH_QUESTION: &str = "What is written in the image in LaTeX?";
pub const MATH_LANGUAGE: &str = "LaTeX";
pub const SKETCH_QUESTION: &str = "What is drawn in this sketch?";
pub const SCRIPT_QUESTION: &str = "What script is this text written in?";
/// Marker for an absent prompt field.
pub const NULL_FIELD: &str = "-";

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CodecError {
    #[error("unknown segmentation class '{0}'")]
    UnknownClass(String),
    #[error("class '{class}' is level {class_level}, not level {level}")]
    ClassLevelMismatch {
        class: SegClass,
        class_level: u8,
        level: u8,
    },
    #[error("segmentation level {0} does not exist (expected 0, 1 or 2)")]
    BadLevel(u8),
    #[error("'one' mode takes exactly one class, got {0}")]
    OneModeArity(usize),
    #[error("prompt lists no classes")]
    NoClasses,
    #[error("class '{0}' is listed twice")]
    DuplicateClass(SegClass),
    #[error("object class '{0}' is not in the class order")]
    ClassNotInOrder(SegClass),
    #[error("{coord} = {value} lies outside [0, {limit}]")]
    OutOfRange {
        coord: &'static str,
        value: f64,
        limit: f64,
    },
    #[error("inverted box: {0}")]
    Inverted(String),
    #[error("grid must have at least 2 bins, got {0}")]
    BadGrid(u32),
    #[error(transparent)]
    Geometry(#[from] InkError),
}

macro_rules! seg_classes {
    ($($variant:ident => $name:literal, $level:literal;)*) => {
        /// Closed vocabulary of page elements, each tied to one level.
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
        pub enum SegClass {
            $($variant,)*
        }

        impl SegClass {
            /// Level 2 first, the order pages are usually reported in.
            pub const ALL: &'static [SegClass] = &[$(SegClass::$variant,)*];

            pub fn name(self) -> &'static str {
                match self {
                    $(SegClass::$variant => $name,)*
                }
            }

            pub fn level(self) -> u8 {
                match self {
                    $(SegClass::$variant => $level,)*
                }
            }
        }

        impl FromStr for SegClass {
            type Err = CodecError;

            fn from_str(s: &str) -> Result<Self, Self::Err> {
                match s {
                    $($name => Ok(SegClass::$variant),)*
                    other => Err(CodecError::UnknownClass(other.to_string())),
                }
            }
        }
    };
}

seg_classes! {
    Textblock => "textblock", 2;
    Diagram => "diagram", 2;
    List => "list", 2;
    Drawing => "drawing", 2;
    Table => "table", 2;
    Textline => "textline", 1;
    Enclosure => "enclosure", 1;
    Word => "word", 0;
    Arrow => "arrow", 0;
    Oval => "oval", 0;
    Box => "box", 0;
}

impl SegClass {
    /// Classes of `level` in alphabetical order.
    pub fn of_level(level: u8) -> Vec<SegClass> {
        let mut v: Vec<_> = Self::ALL.iter().copied().filter(|c| c.level() == level).collect();
        v.sort_by_key(|c| c.name());
        v
    }
}

impl fmt::Display for SegClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl Serialize for SegClass {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for SegClass {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

fn check_level(level: u8) -> Result<u8, CodecError> {
    if level > 2 {
        return Err(CodecError::BadLevel(level));
    }
    Ok(level)
}

/// Box on the integer target grid. Serialized as `[x_min, y_min, x_max, y_max]`
/// regardless of the token order used in target strings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "[u32; 4]", into = "[u32; 4]")]
pub struct GridBox {
    pub x_min: u32,
    pub y_min: u32,
    pub x_max: u32,
    pub y_max: u32,
}

impl GridBox {
    pub fn new(x_min: u32, y_min: u32, x_max: u32, y_max: u32) -> Result<Self, CodecError> {
        if x_min > x_max || y_min > y_max {
            return Err(CodecError::Inverted(format!("[{x_min}, {y_min}, {x_max}, {y_max}]")));
        }
        Ok(Self {
            x_min,
            y_min,
            x_max,
            y_max,
        })
    }

    pub fn from_corners(x0: u32, y0: u32, x1: u32, y1: u32) -> Self {
        Self {
            x_min: x0.min(x1),
            y_min: y0.min(y1),
            x_max: x0.max(x1),
            y_max: y0.max(y1),
        }
    }

    /// Quantizes a canvas box: each coordinate maps to
    /// `round(v / side * (grid - 1))`, clamped to the grid.
    pub fn quantize(b: &BBox, canvas: CanvasSpec, grid: u32) -> Self {
        let max = (grid - 1) as f64;
        let q = |v: f64, side: f64| ((v / side) * max).round().clamp(0.0, max) as u32;
        Self::from_corners(
            q(b.x_min, canvas.w),
            q(b.y_min, canvas.h),
            q(b.x_max, canvas.w),
            q(b.y_max, canvas.h),
        )
    }

    pub fn to_bbox(self) -> BBox {
        BBox::from_corners(
            self.x_min as f64,
            self.y_min as f64,
            self.x_max as f64,
            self.y_max as f64,
        )
    }

    fn max_coord(&self) -> u32 {
        self.x_max.max(self.y_max)
    }
}

impl TryFrom<[u32; 4]> for GridBox {
    type Error = CodecError;

    fn try_from([a, b, c, d]: [u32; 4]) -> Result<Self, Self::Error> {
        GridBox::new(a, b, c, d)
    }
}

impl From<GridBox> for [u32; 4] {
    fn from(b: GridBox) -> Self {
        [b.x_min, b.y_min, b.x_max, b.y_max]
    }
}

/// One annotated page element on the target grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SegObject {
    pub class: SegClass,
    pub bbox: GridBox,
}

impl SegObject {
    pub fn new(class: SegClass, bbox: GridBox) -> Self {
        Self { class, bbox }
    }

    pub fn level(&self) -> u8 {
        self.class.level()
    }
}

/// Order of the four integers in a target group.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CoordOrder {
    /// `y_min x_min y_max x_max`
    #[default]
    Yxyx,
    /// `x_min y_min x_max y_max`
    Xyxy,
}

impl FromStr for CoordOrder {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "yxyx" => Ok(Self::Yxyx),
            "xyxy" => Ok(Self::Xyxy),
            other => Err(format!("unknown coordinate order '{other}' (expected yxyx or xyxy)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CodecConfig {
    pub order: CoordOrder,
    /// Number of quantization bins per axis; coordinates run `0..grid`.
    pub grid: u32,
}

impl Default for CodecConfig {
    fn default() -> Self {
        Self {
            order: CoordOrder::Yxyx,
            grid: 1024,
        }
    }
}

impl CodecConfig {
    pub fn grid_max(&self) -> u32 {
        self.grid - 1
    }

    pub fn validate(&self) -> Result<(), CodecError> {
        if self.grid < 2 {
            return Err(CodecError::BadGrid(self.grid));
        }
        Ok(())
    }

    fn tokens_of(&self, b: &GridBox) -> [u32; 4] {
        match self.order {
            CoordOrder::Yxyx => [b.y_min, b.x_min, b.y_max, b.x_max],
            CoordOrder::Xyxy => [b.x_min, b.y_min, b.x_max, b.y_max],
        }
    }

    fn box_from_tokens(&self, [a, b, c, d]: [u32; 4]) -> (GridBox, bool) {
        let (x0, y0, x1, y1) = match self.order {
            CoordOrder::Yxyx => (b, a, d, c),
            CoordOrder::Xyxy => (a, b, c, d),
        };
        let inverted = x0 > x1 || y0 > y1;
        (GridBox::from_corners(x0, y0, x1, y1), inverted)
    }
}

/// Serializes objects grouped by class in `class_order`, keeping input order
/// within each class.
pub fn encode_seg_target(
    objects: &[SegObject],
    class_order: &[SegClass],
    cfg: &CodecConfig,
) -> Result<String, CodecError> {
    cfg.validate()?;
    for (i, c) in class_order.iter().enumerate() {
        if class_order[..i].contains(c) {
            return Err(CodecError::DuplicateClass(*c));
        }
    }
    for o in objects {
        if !class_order.contains(&o.class) {
            return Err(CodecError::ClassNotInOrder(o.class));
        }
        if o.bbox.max_coord() > cfg.grid_max() {
            return Err(CodecError::OutOfRange {
                coord: "grid coordinate",
                value: o.bbox.max_coord() as f64,
                limit: cfg.grid_max() as f64,
            });
        }
    }
    let mut parts: Vec<String> = Vec::with_capacity(objects.len());
    for class in class_order {
        for o in objects.iter().filter(|o| o.class == *class) {
            let [a, b, c, d] = cfg.tokens_of(&o.bbox);
            parts.push(format!("{a} {b} {c} {d} {class}"));
        }
    }
    Ok(parts.join(" "))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DiagnosticKind {
    /// A class name preceded by fewer than four integers.
    MalformedGroup {
        ints: usize,
    },
    /// Integers with no class name after them.
    StrayInts {
        count: usize,
    },
    UnknownClass {
        name: String,
    },
    /// Known class that belongs to another level than the one requested.
    WrongLevel {
        class: String,
        level: u8,
    },
    OutOfGrid {
        value: u64,
    },
    /// Corners were swapped to form a valid box.
    InvertedBox,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnostic {
    /// Index of the whitespace-separated token the diagnostic refers to.
    pub token: usize,
    #[serde(flatten)]
    pub kind: DiagnosticKind,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "token {}: ", self.token)?;
        match &self.kind {
            DiagnosticKind::MalformedGroup { ints } => {
                write!(f, "class name after {ints} integers, expected 4")
            }
            DiagnosticKind::StrayInts { count } => write!(f, "{count} integers without a class name"),
            DiagnosticKind::UnknownClass { name } => write!(f, "unknown token '{name}'"),
            DiagnosticKind::WrongLevel { class, level } => {
                write!(f, "class '{class}' is not a level {level} class")
            }
            DiagnosticKind::OutOfGrid { value } => write!(f, "coordinate {value} outside the grid"),
            DiagnosticKind::InvertedBox => f.write_str("inverted box corners swapped"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Decoded {
    pub objects: Vec<SegObject>,
    pub diagnostics: Vec<Diagnostic>,
}

impl Decoded {
    /// True when nothing was skipped. Swapped corners alone do not count.
    pub fn is_clean(&self) -> bool {
        self.diagnostics.iter().all(|d| d.kind == DiagnosticKind::InvertedBox)
    }
}

/// Lenient left-to-right parse of model output. Never fails.
///
/// When more than four integers precede a class name, the last four form the
/// group and the rest are reported as stray. `level` filters out classes of
/// other levels.
pub fn decode_seg_target(s: &str, level: Option<u8>, cfg: &CodecConfig) -> Decoded {
    let mut out = Decoded::default();
    let mut pending: Vec<(usize, u64)> = Vec::new();
    let grid_max = cfg.grid_max().max(1) as u64;

    let diag = |out: &mut Decoded, token: usize, kind: DiagnosticKind| {
        out.diagnostics.push(Diagnostic { token, kind });
    };

    for (idx, tok) in s.split_whitespace().enumerate() {
        if !tok.is_empty() && tok.bytes().all(|b| b.is_ascii_digit()) {
            // Overlong digit runs saturate and are caught by the grid check.
            let v = tok.parse::<u64>().unwrap_or(u64::MAX);
            pending.push((idx, v));
            continue;
        }
        let ints = std::mem::take(&mut pending);
        let class = match tok.parse::<SegClass>() {
            Ok(c) => c,
            Err(_) => {
                if !ints.is_empty() {
                    diag(&mut out, ints[0].0, DiagnosticKind::StrayInts { count: ints.len() });
                }
                diag(&mut out, idx, DiagnosticKind::UnknownClass { name: tok.to_string() });
                continue;
            }
        };
        if ints.len() < 4 {
            diag(&mut out, idx, DiagnosticKind::MalformedGroup { ints: ints.len() });
            continue;
        }
        let extra = ints.len() - 4;
        if extra > 0 {
            diag(&mut out, ints[0].0, DiagnosticKind::StrayInts { count: extra });
        }
        let group = &ints[extra..];
        if let Some(&(token, value)) = group.iter().find(|(_, v)| *v > grid_max) {
            diag(&mut out, token, DiagnosticKind::OutOfGrid { value });
            continue;
        }
        if let Some(l) = level {
            if class.level() != l {
                diag(
                    &mut out,
                    idx,
                    DiagnosticKind::WrongLevel {
                        class: class.name().to_string(),
                        level: l,
                    },
                );
                continue;
            }
        }
        let vals = [group[0].1, group[1].1, group[2].1, group[3].1].map(|v| v as u32);
        let (bbox, inverted) = cfg.box_from_tokens(vals);
        if inverted {
            diag(&mut out, group[0].0, DiagnosticKind::InvertedBox);
        }
        out.objects.push(SegObject::new(class, bbox));
    }
    if !pending.is_empty() {
        diag(
            &mut out,
            pending[0].0,
            DiagnosticKind::StrayInts { count: pending.len() },
        );
    }
    out
}

/// Classes in order of first appearance; the order that re-encodes a decoded
/// target to itself.
pub fn first_seen_order(objects: &[SegObject]) -> Vec<SegClass> {
    let mut order = Vec::new();
    for o in objects {
        if !order.contains(&o.class) {
            order.push(o.class);
        }
    }
    order
}

/// Re-encodes a decoded target using its own class order.
pub fn canonicalize(s: &str, cfg: &CodecConfig) -> Result<String, CodecError> {
    let decoded = decode_seg_target(s, None, cfg);
    encode_seg_target(&decoded.objects, &first_seen_order(&decoded.objects), cfg)
}

/// Stable grouping of `objects` by `class_order`, the form `decode(encode(x))`
/// returns.
pub fn group_by_class(objects: &[SegObject], class_order: &[SegClass]) -> Vec<SegObject> {
    class_order
        .iter()
        .flat_map(|c| objects.iter().filter(move |o| o.class == *c).copied())
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SegMode {
    One,
    #[default]
    Many,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegPrompt {
    pub level: u8,
    /// Prompt order, which is also the target order.
    pub classes: Vec<SegClass>,
    pub mode: SegMode,
}

impl SegPrompt {
    pub fn one(class: SegClass) -> Self {
        Self {
            level: class.level(),
            classes: vec![class],
            mode: SegMode::One,
        }
    }

    /// Every class of `level`, alphabetical.
    pub fn all_of_level(level: u8) -> Result<Self, CodecError> {
        check_level(level)?;
        Ok(Self {
            level,
            classes: SegClass::of_level(level),
            mode: SegMode::Many,
        })
    }

    pub fn validate(&self) -> Result<(), CodecError> {
        check_level(self.level)?;
        if self.classes.is_empty() {
            return Err(CodecError::NoClasses);
        }
        if self.mode == SegMode::One && self.classes.len() != 1 {
            return Err(CodecError::OneModeArity(self.classes.len()));
        }
        for (i, c) in self.classes.iter().enumerate() {
            if c.level() != self.level {
                return Err(CodecError::ClassLevelMismatch {
                    class: *c,
                    class_level: c.level(),
                    level: self.level,
                });
            }
            if self.classes[..i].contains(c) {
                return Err(CodecError::DuplicateClass(*c));
            }
        }
        Ok(())
    }
}

pub fn build_seg_prompt(p: &SegPrompt) -> Result<String, CodecError> {
    p.validate()?;
    let names: Vec<&str> = p.classes.iter().map(|c| c.name()).collect();
    Ok(format!(
        "Where are the level {} objects located? Detect multiple {}",
        p.level,
        names.join(", ")
    ))
}

/// Ink box relative to the writing canvas, as four fractions in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 4]", into = "[f64; 4]")]
pub struct Placement([f64; 4]);

impl Placement {
    pub fn new(fractions: [f64; 4]) -> Result<Self, CodecError> {
        const NAMES: [&str; 4] = ["x_min/w", "y_min/h", "x_max/w", "y_max/h"];
        for (v, name) in fractions.iter().zip(NAMES) {
            if !(0.0..=1.0).contains(v) {
                return Err(CodecError::OutOfRange {
                    coord: name,
                    value: *v,
                    limit: 1.0,
                });
            }
        }
        let [x0, y0, x1, y1] = fractions;
        if x0 > x1 || y0 > y1 {
            return Err(CodecError::Inverted(format!("{fractions:?}")));
        }
        Ok(Self(fractions))
    }

    pub fn from_box(b: &BBox, canvas: CanvasSpec) -> Result<Self, CodecError> {
        let checks = [
            ("x_min", b.x_min, canvas.w),
            ("y_min", b.y_min, canvas.h),
            ("x_max", b.x_max, canvas.w),
            ("y_max", b.y_max, canvas.h),
        ];
        for (coord, value, limit) in checks {
            if !(0.0..=limit).contains(&value) {
                return Err(CodecError::OutOfRange { coord, value, limit });
            }
        }
        Self::new([
            b.x_min / canvas.w,
            b.y_min / canvas.h,
            b.x_max / canvas.w,
            b.y_max / canvas.h,
        ])
    }

    pub fn fractions(&self) -> [f64; 4] {
        self.0
    }
}

impl TryFrom<[f64; 4]> for Placement {
    type Error = CodecError;

    fn try_from(v: [f64; 4]) -> Result<Self, Self::Error> {
        Placement::new(v)
    }
}

impl From<Placement> for [f64; 4] {
    fn from(p: Placement) -> Self {
        p.0
    }
}

/// Hundredths with round-half-up. Values within 1e-9 of a half are treated
/// as exact halves so that e.g. 5/200 formats as 0.03.
fn hundredths(frac: f64) -> u32 {
    let v = frac * 100.0;
    let floor = v.floor();
    let r = if (v - floor - 0.5).abs() < 1e-9 {
        floor + 1.0
    } else {
        v.round()
    };
    r.clamp(0.0, 100.0) as u32
}

impl fmt::Display for Placement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, v) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            let h = hundredths(*v);
            write!(f, "{}.{:02}", h / 100, h % 100)?;
        }
        Ok(())
    }
}

/// `x_min/w,y_min/h,x_max/w,y_max/h`, two decimals each.
pub fn placement_string(b: &BBox, canvas: CanvasSpec) -> Result<String, CodecError> {
    Ok(Placement::from_box(b, canvas)?.to_string())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecognitionPrompt {
    pub question: String,
    pub language: Option<String>,
    pub precontext: Option<String>,
    pub placement: Option<Placement>,
}

impl RecognitionPrompt {
    pub fn text(language: Option<&str>, precontext: Option<&str>, placement: Option<Placement>) -> Self {
        Self {
            question: TEXT_QUESTION.to_string(),
            language: language.map(str::to_string),
            precontext: precontext.map(str::to_string),
            placement,
        }
    }

    pub fn math(placement: Option<Placement>) -> Self {
        Self {
            question: MATH_QUESTION.to_string(),
            language: Some(MATH_LANGUAGE.to_string()),
            precontext: None,
            placement,
        }
    }

    /// Same prompt without the language field.
    pub fn without_language(mut self) -> Self {
        self.language = None;
        self
    }
}

fn field_or_null(v: &Option<String>) -> &str {
    match v.as_deref().map(str::trim) {
        Some(s) if !s.is_empty() => s,
        _ => NULL_FIELD,
    }
}

pub fn build_recognition_prompt(p: &RecognitionPrompt) -> String {
    let mut s = format!(
        "{} Language {} Precontext {}",
        p.question,
        field_or_null(&p.language),
        field_or_null(&p.precontext)
    );
    if let Some(pl) = &p.placement {
        s.push_str(" Placement ");
        s.push_str(&pl.to_string());
    }
    s
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClassificationKind {
    Sketch,
    Script,
}

pub fn build_classification_prompt(kind: ClassificationKind) -> &'static str {
    match kind {
        ClassificationKind::Sketch => SKETCH_QUESTION,
        ClassificationKind::Script => SCRIPT_QUESTION,
    }
}
