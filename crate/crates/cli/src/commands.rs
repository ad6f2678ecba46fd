use std::collections::BTreeSet;
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use inkpipe::client::{infer_batch, HttpTransport, InferenceResponse};
use inkpipe::codec::{decode_seg_target, SegClass, SegMode, SegPrompt};
use inkpipe::example::TaskExample;
use inkpipe::ingest::{
    compute_stats, read_inkml, read_jsonl, read_jsonl_from, read_ndjson_sketches, read_raw_records, write_jsonl,
    write_jsonl_to, PageAnnotation, RawRecord, Record, ScoredObject, SegRecord, TextRecord,
};
use inkpipe::ink::{CanvasSpec, Ink};
use inkpipe::mixture::{group_sources, sample_range, MixtureSpec};
use inkpipe::pipeline::{evaluate, example_request, EvalReport};
use inkpipe::raster::{export_image, render as render_ink, RenderOptions};
use rayon::prelude::*;
use serde_json::Map;

use crate::config::Config;
use crate::{CliError, DecodeArgs, EncodeArgs, EvalArgs, InferArgs, MixArgs, RenderArgs, StatsArgs};

fn render_options(cfg: &Config, flag: Option<u32>, side: u32) -> Result<RenderOptions, CliError> {
    match flag.or(cfg.stroke_width) {
        Some(0) => Err(CliError::Invalid("stroke width must be at least 1".into())),
        Some(w) => Ok(RenderOptions {
            stroke_width: w,
            margin: w as f64,
        }),
        None => Ok(RenderOptions::for_size(side)),
    }
}

fn open_input(path: &str) -> Result<Box<dyn BufRead>, CliError> {
    if path == "-" {
        return Ok(Box::new(io::stdin().lock()));
    }
    let file = File::open(path).map_err(|e| CliError::io(Path::new(path), e))?;
    Ok(Box::new(BufReader::new(file)))
}

fn open_output(path: &str) -> Result<Box<dyn Write>, CliError> {
    if path == "-" {
        return Ok(Box::new(BufWriter::new(io::stdout().lock())));
    }
    let file = File::create(path).map_err(|e| CliError::io(Path::new(path), e))?;
    Ok(Box::new(BufWriter::new(file)))
}

fn read_raw(path: &Path) -> Result<Vec<RawRecord>, CliError> {
    let file = File::open(path).map_err(|e| CliError::io(path, e))?;
    read_raw_records(BufReader::new(file)).map_err(|e| CliError::Invalid(format!("{}: {e}", path.display())))
}

fn out_of_range(path: &Path, index: usize, n: usize) -> CliError {
    CliError::Invalid(format!("{}: index {index} is out of range ({n} inks)", path.display()))
}

fn load_ink(path: &Path, index: usize) -> Result<Ink, CliError> {
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .unwrap_or_default()
        .to_ascii_lowercase();
    match ext.as_str() {
        "inkml" => {
            let docs = read_inkml(path)?;
            let n = docs.len();
            let doc = docs
                .into_iter()
                .nth(index)
                .ok_or_else(|| out_of_range(path, index, n))?;
            for d in &doc.diagnostics {
                eprintln!("warning: {}: {d}", path.display());
            }
            Ok(doc.ink)
        }
        "ndjson" => {
            let set = read_ndjson_sketches(path)?;
            for d in &set.diagnostics {
                eprintln!("warning: {}:{}: {}", path.display(), d.line, d.message);
            }
            let n = set.sketches.len();
            let sketch = set
                .sketches
                .into_iter()
                .nth(index)
                .ok_or_else(|| out_of_range(path, index, n))?;
            Ok(sketch.ink)
        }
        "jsonl" => {
            let raws = read_raw(path)?;
            let n = raws.len();
            let raw = raws
                .into_iter()
                .nth(index)
                .ok_or_else(|| out_of_range(path, index, n))?;
            if raw.kind == PageAnnotation::KIND {
                Ok(raw.decode::<PageAnnotation>()?.ink)
            } else {
                let ex: TaskExample = raw.decode()?;
                ex.ink.ok_or_else(|| {
                    CliError::Invalid(format!(
                        "{}: example '{}' carries no ink",
                        path.display(),
                        ex.meta.sample_id
                    ))
                })
            }
        }
        "json" => {
            let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
            serde_json::from_str(&text).map_err(|e| CliError::Invalid(format!("{}: {e}", path.display())))
        }
        _ => Err(CliError::Invalid(format!(
            "{}: unsupported ink file (expected .inkml, .ndjson, .jsonl or .json)",
            path.display()
        ))),
    }
}

pub fn render(cfg: &Config, a: RenderArgs) -> Result<(), CliError> {
    let side = cfg.canvas_or(a.canvas)?;
    let opts = render_options(cfg, a.stroke_width, side)?;
    let ink = load_ink(&a.input, a.index)?;
    let img = render_ink(&ink, CanvasSpec::square(side as f64)?, opts)?;
    export_image(&img, &a.output)?;
    Ok(())
}

fn seg_prompt(a: &EncodeArgs) -> Result<SegPrompt, CliError> {
    if let Some(level) = a.level {
        return Ok(SegPrompt::all_of_level(level)?);
    }
    let classes = a
        .class
        .iter()
        .map(|c| c.trim().parse::<SegClass>())
        .collect::<Result<Vec<_>, _>>()?;
    let prompt = match classes.as_slice() {
        [] => return Err(CliError::Invalid("give --level or --class".into())),
        [one] => SegPrompt::one(*one),
        more => SegPrompt {
            level: more[0].level(),
            classes: more.to_vec(),
            mode: SegMode::Many,
        },
    };
    prompt.validate()?;
    Ok(prompt)
}

pub fn encode(cfg: &Config, a: EncodeArgs) -> Result<(), CliError> {
    let prompt = seg_prompt(&a)?;
    let side = cfg.canvas_or(a.canvas)?;
    let opts = render_options(cfg, None, side)?;
    let canvas = CanvasSpec::square(side as f64)?;
    let pages: Vec<PageAnnotation> = read_jsonl_from(open_input(&a.input)?)?;
    let examples = pages
        .par_iter()
        .map(|p| {
            p.seg_example(&prompt, canvas, opts, &cfg.codec)
                .map_err(|e| CliError::Invalid(format!("page '{}': {e}", p.page_id)))
        })
        .collect::<Result<Vec<_>, _>>()?;
    write_jsonl_to(open_output(&a.output)?, &examples)?;
    Ok(())
}

fn decode_inputs(a: &DecodeArgs) -> Result<Vec<(String, String)>, CliError> {
    let input = open_input(&a.input)?;
    if a.raw {
        let mut out = Vec::new();
        for (i, line) in input.lines().enumerate() {
            let line = line.map_err(|e| CliError::Io(format!("{}: {e}", a.input)))?;
            out.push(((i + 1).to_string(), line));
        }
        return Ok(out);
    }
    read_raw_records(input)?
        .into_iter()
        .map(|raw| match raw.kind.as_str() {
            k if k == TextRecord::KIND => raw.decode::<TextRecord>().map(|r| (r.id, r.text)),
            k if k == InferenceResponse::KIND => raw
                .decode::<InferenceResponse>()
                .map(|r| (r.id.clone(), r.answer().unwrap_or_default().to_string())),
            _ => raw.decode::<TaskExample>().map(|e| (e.meta.sample_id, e.target)),
        })
        .collect::<Result<_, _>>()
        .map_err(CliError::from)
}

pub fn decode(cfg: &Config, a: DecodeArgs) -> Result<(), CliError> {
    let inputs = decode_inputs(&a)?;
    let decoded: Vec<(SegRecord, bool)> = inputs
        .par_iter()
        .map(|(id, text)| {
            let d = decode_seg_target(text, a.level, &cfg.codec);
            let clean = d.is_clean();
            let rec = SegRecord {
                id: id.clone(),
                level: a.level,
                objects: d
                    .objects
                    .into_iter()
                    .map(|object| ScoredObject { object, score: None })
                    .collect(),
                diagnostics: d.diagnostics,
                extra: Map::new(),
            };
            (rec, clean)
        })
        .collect();
    write_jsonl_to(open_output(&a.output)?, decoded.iter().map(|(r, _)| r))?;
    let mut bad = 0;
    for (r, clean) in &decoded {
        if !clean {
            bad += 1;
            for d in &r.diagnostics {
                eprintln!("{}: {d}", r.id);
            }
        }
    }
    if bad > 0 {
        return Err(CliError::Invalid(format!(
            "{bad} of {} targets were malformed",
            decoded.len()
        )));
    }
    Ok(())
}

pub fn mix(cfg: &Config, a: MixArgs) -> Result<(), CliError> {
    let path: PathBuf = a
        .spec
        .or_else(|| cfg.mixture.clone())
        .ok_or_else(|| CliError::Invalid("give --spec or set 'mixture' in the config".into()))?;
    let text = std::fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
    let mut spec =
        MixtureSpec::from_toml(&text).map_err(|e| CliError::Invalid(format!("{}: {}", path.display(), e.message())))?;
    if let Some(seed) = a.seed {
        spec.seed = seed;
    }
    let mut examples = Vec::new();
    for d in &a.data {
        examples.extend(read_jsonl::<TaskExample>(d)?);
    }
    let sources = group_sources(&spec, examples);
    let end = a
        .start
        .checked_add(a.n)
        .ok_or_else(|| CliError::Invalid("--start + --n overflows".into()))?;
    let drawn = sample_range(&spec, &sources, a.start..end)?;
    write_jsonl(&a.out, &drawn)?;
    Ok(())
}

pub fn eval(cfg: &Config, a: EvalArgs) -> Result<(), CliError> {
    let report = evaluate(a.task, read_raw(&a.pred)?, read_raw(&a.gt)?, &cfg.codec)?.rounded();
    let unmatched = match &report {
        EvalReport::Seg(s) => &s.unmatched_ids,
        EvalReport::Rec(t) | EvalReport::Cls(t) => &t.unmatched_ids,
    };
    if !unmatched.is_empty() {
        eprintln!("warning: {} ids appear on one side only", unmatched.len());
    }
    let json = serde_json::to_string_pretty(&report).expect("report serializes");
    if let Some(out) = &a.out {
        std::fs::write(out, format!("{json}\n")).map_err(|e| CliError::io(out, e))?;
    }
    if a.json {
        println!("{json}");
    } else {
        println!("{report}");
    }
    Ok(())
}

pub fn stats(a: StatsArgs) -> Result<(), CliError> {
    let pages: Vec<PageAnnotation> = read_jsonl(&a.input)?;
    let stats = compute_stats(&pages);
    if a.json {
        println!("{}", serde_json::to_string_pretty(&stats).expect("stats serialize"));
    } else {
        println!("{stats}");
    }
    Ok(())
}

pub fn infer(cfg: &Config, a: InferArgs) -> Result<(), CliError> {
    let mut endpoint = cfg.endpoint.clone();
    if let Some(u) = a.url {
        endpoint.url = u;
    }
    if let Some(c) = a.concurrency {
        endpoint.concurrency = c;
    }
    if let Some(r) = a.retries {
        endpoint.max_attempts = r;
    }
    if let Some(t) = a.timeout_ms {
        endpoint.timeout_ms = t;
    }
    if let Some(r) = a.resolution {
        endpoint.resolution = r;
    }
    endpoint.validate()?;
    let side = cfg.canvas_or(Some(endpoint.resolution))?;
    let opts = render_options(cfg, None, side)?;

    let examples: Vec<TaskExample> = read_jsonl(&a.input)?;
    let mut seen = BTreeSet::new();
    if let Some(dup) = examples.iter().find(|e| !seen.insert(e.meta.sample_id.as_str())) {
        return Err(CliError::Invalid(format!(
            "sample id '{}' appears twice",
            dup.meta.sample_id
        )));
    }
    let requests = examples
        .par_iter()
        .map(|e| example_request(e, side, opts))
        .collect::<Result<Vec<_>, _>>()?;
    let transport = HttpTransport::new(&endpoint)?;
    let answers = infer_batch(&requests, &transport, &endpoint);
    write_jsonl(&a.out, &answers)?;

    let failed: Vec<&InferenceResponse> = answers.iter().filter(|r| r.error().is_some()).collect();
    for r in &failed {
        eprintln!("{}: {}", r.id, r.error().unwrap_or_default());
    }
    eprintln!("{} answered, {} failed", answers.len() - failed.len(), failed.len());
    if !failed.is_empty() {
        return Err(CliError::Io(format!(
            "{} of {} requests failed",
            failed.len(),
            answers.len()
        )));
    }
    Ok(())
}
