use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use super::IngestError;
use crate::codec::{
    build_seg_prompt, encode_seg_target, CodecConfig, CodecError, GridBox, SegClass, SegObject, SegPrompt,
};
use crate::example::{ExampleMeta, Task, TaskExample};
use crate::ink::{bounding_box, BBox, CanvasSpec, FitTransform, Ink, InkError};
use crate::raster::RenderOptions;

/// An annotated element in page (ink) coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PageObject {
    pub class: SegClass,
    pub bbox: BBox,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
}

/// A full page of ink with its segmentation at every level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PageAnnotation {
    pub page_id: String,
    pub ink: Ink,
    pub objects: Vec<PageObject>,
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

impl PageAnnotation {
    pub fn new(page_id: impl Into<String>, ink: Ink, objects: Vec<PageObject>) -> Self {
        Self {
            page_id: page_id.into(),
            ink,
            objects,
            extra: Map::new(),
        }
    }

    /// Checks every object box against the ink's box grown by `tolerance`.
    pub fn validate(&self, tolerance: f64) -> Result<(), IngestError> {
        let bounds = bounding_box(&self.ink).expanded(tolerance);
        for (index, o) in self.objects.iter().enumerate() {
            if !bounds.contains(&o.bbox) {
                return Err(IngestError::ObjectOutsidePage {
                    index,
                    class: o.class.to_string(),
                });
            }
        }
        Ok(())
    }

    pub fn count(&self, class: SegClass) -> usize {
        self.objects.iter().filter(|o| o.class == class).count()
    }

    /// Objects mapped onto the target grid of the rendered image: the same
    /// fit the renderer applies, then quantization to `cfg.grid` bins.
    pub fn seg_objects(
        &self,
        canvas: CanvasSpec,
        opts: RenderOptions,
        cfg: &CodecConfig,
    ) -> Result<Vec<SegObject>, InkError> {
        let pixel_canvas = CanvasSpec {
            w: canvas.w.round(),
            h: canvas.h.round(),
        };
        let fit = FitTransform::fit(&bounding_box(&self.ink), pixel_canvas, opts.margin)?;
        Ok(self
            .objects
            .iter()
            .map(|o| {
                let b = fit.apply_box(&o.bbox);
                SegObject::new(o.class, GridBox::quantize(&b, pixel_canvas, cfg.grid))
            })
            .collect())
    }

    /// A segmentation example for `prompt`, carrying the page ink.
    pub fn seg_example(
        &self,
        prompt: &SegPrompt,
        canvas: CanvasSpec,
        opts: RenderOptions,
        cfg: &CodecConfig,
    ) -> Result<TaskExample, CodecError> {
        let text = build_seg_prompt(prompt)?;
        let objects: Vec<SegObject> = self
            .seg_objects(canvas, opts, cfg)?
            .into_iter()
            .filter(|o| prompt.classes.contains(&o.class))
            .collect();
        let target = encode_seg_target(&objects, &prompt.classes, cfg)?;
        let meta = ExampleMeta {
            source: self
                .extra
                .get("source")
                .and_then(Value::as_str)
                .unwrap_or("pages")
                .to_string(),
            language: self.extra.get("language").and_then(Value::as_str).map(str::to_string),
            sample_id: self.page_id.clone(),
        };
        Ok(TaskExample::new(Task::Segmentation, text, target, meta).with_ink(self.ink.clone()))
    }
}
