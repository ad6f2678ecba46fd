//! The training/evaluation record emitted by the mixture.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::ink::Ink;

/// Task family of an example.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Segmentation,
    Recognition,
    Math,
    Classification,
}

impl Task {
    pub const ALL: [Task; 4] = [Task::Segmentation, Task::Recognition, Task::Math, Task::Classification];

    pub fn name(self) -> &'static str {
        match self {
            Task::Segmentation => "segmentation",
            Task::Recognition => "recognition",
            Task::Math => "math",
            Task::Classification => "classification",
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Task {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "segmentation" | "seg" => Ok(Task::Segmentation),
            "recognition" | "rec" => Ok(Task::Recognition),
            "math" => Ok(Task::Math),
            "classification" | "cls" => Ok(Task::Classification),
            other => Err(format!(
                "unknown task '{other}' (expected segmentation, recognition, math or classification)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ExampleMeta {
    /// Dataset the example came from.
    pub source: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub language: Option<String>,
    pub sample_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskExample {
    pub task: Task,
    pub prompt: String,
    pub target: String,
    /// Path of a rendered image, when one has been exported.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image: Option<String>,
    /// Source ink, when the image is rendered on demand.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ink: Option<Ink>,
    pub meta: ExampleMeta,
    /// Fields this version does not know about, kept verbatim.
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

impl TaskExample {
    pub fn new(task: Task, prompt: impl Into<String>, target: impl Into<String>, meta: ExampleMeta) -> Self {
        Self {
            task,
            prompt: prompt.into(),
            target: target.into(),
            image: None,
            ink: None,
            meta,
            extra: Map::new(),
        }
    }

    pub fn with_ink(mut self, ink: Ink) -> Self {
        self.ink = Some(ink);
        self
    }

    /// Training records need both a prompt and a target.
    pub fn is_trainable(&self) -> bool {
        !self.prompt.is_empty() && !self.target.is_empty()
    }
}
