use std::path::{Path, PathBuf};

use inkpipe::client::EndpointConfig;
use inkpipe::codec::CodecConfig;
use inkpipe::metrics::edit_distance;
use inkpipe::raster::{MIN_SIDE, REFERENCE_SIZE};
use serde::Deserialize;

use crate::CliError;

/// Settings shared by the subcommands. Flags override these.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    /// Square canvas side in pixels.
    pub canvas: Option<u32>,
    pub stroke_width: Option<u32>,
    #[serde(default)]
    pub codec: CodecConfig,
    /// Mixture spec, relative to the config file.
    pub mixture: Option<PathBuf>,
    #[serde(default)]
    pub endpoint: EndpointConfig,
}

const TOP_KEYS: &[&str] = &["canvas", "stroke_width", "codec", "mixture", "endpoint"];
const CODEC_KEYS: &[&str] = &["order", "grid"];
const ENDPOINT_KEYS: &[&str] = &[
    "url",
    "token_env",
    "concurrency",
    "max_attempts",
    "backoff_ms",
    "timeout_ms",
    "resolution",
];

/// Closest known key within a few edits.
fn suggestion<'a>(key: &str, known: &[&'a str]) -> Option<&'a str> {
    known
        .iter()
        .map(|k| (edit_distance(key, k), *k))
        .filter(|(d, k)| *d <= 2.max(k.len() / 3))
        .min()
        .map(|(_, k)| k)
}

fn check_keys(table: &toml::Table, known: &[&str], prefix: &str) -> Result<(), String> {
    for key in table.keys() {
        if !known.contains(&key.as_str()) {
            let hint = suggestion(key, known)
                .map(|s| format!(" (did you mean '{prefix}{s}'?)"))
                .unwrap_or_else(|| format!(" (known keys: {})", known.join(", ")));
            return Err(format!("unknown key '{prefix}{key}'{hint}"));
        }
    }
    Ok(())
}

impl Config {
    pub fn parse(text: &str) -> Result<Self, String> {
        let table: toml::Table = text.parse().map_err(|e: toml::de::Error| e.message().to_string())?;
        check_keys(&table, TOP_KEYS, "")?;
        for (section, known) in [("codec", CODEC_KEYS), ("endpoint", ENDPOINT_KEYS)] {
            if let Some(toml::Value::Table(t)) = table.get(section) {
                check_keys(t, known, &format!("{section}."))?;
            }
        }
        let cfg: Config = toml::from_str(text).map_err(|e| e.message().to_string())?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let mut cfg = Self::parse(&text).map_err(|e| CliError::Invalid(format!("{}: {e}", path.display())))?;
        if let (Some(m), Some(dir)) = (&cfg.mixture, path.parent()) {
            if m.is_relative() {
                cfg.mixture = Some(dir.join(m));
            }
        }
        Ok(cfg)
    }

    fn validate(&self) -> Result<(), String> {
        if let Some(c) = self.canvas {
            check_canvas(c)?;
        }
        if self.stroke_width == Some(0) {
            return Err("stroke_width must be at least 1".into());
        }
        self.codec.validate().map_err(|e| e.to_string())?;
        self.endpoint.validate().map_err(|e| e.to_string())
    }

    pub fn canvas_or(&self, flag: Option<u32>) -> Result<u32, CliError> {
        let c = flag.or(self.canvas).unwrap_or(REFERENCE_SIZE);
        check_canvas(c).map_err(CliError::Invalid)?;
        Ok(c)
    }
}

fn check_canvas(c: u32) -> Result<(), String> {
    if c < MIN_SIDE {
        return Err(format!("canvas {c} is below the minimum of {MIN_SIDE} pixels"));
    }
    Ok(())
}
