use std::collections::HashMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};

use inkpipe::client::{WireRequest, WireResponse};
use inkpipe::codec::{encode_seg_target, first_seen_order, SegClass, SegObject};
use inkpipe::example::{ExampleMeta, Task, TaskExample};
use inkpipe::ingest::{read_jsonl, write_jsonl, PageAnnotation, PageObject, SegRecord, TextRecord};
use inkpipe::ink::{BBox, Ink, Point, Stroke};
use tempfile::TempDir;

const TARGET: &str = "38 41 67 273 textline 94 106 118 200 textline";

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn inkpipe(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_inkpipe"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn inkpipe_stdin(args: &[&str], stdin: &str) -> Output {
    let mut child = Command::new(env!("CARGO_BIN_EXE_inkpipe"))
        .args(args)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .expect("binary runs");
    child.stdin.take().unwrap().write_all(stdin.as_bytes()).unwrap();
    child.wait_with_output().unwrap()
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "exit {:?}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn word(b: BBox, t0: f64) -> Stroke {
    let pts = (0..5)
        .map(|k| {
            let y = if k % 2 == 0 { b.y_max } else { b.y_min };
            Point::new(b.x_min + b.width() * k as f64 / 4.0, y, t0 + 0.01 * k as f64)
        })
        .collect();
    Stroke::new(pts).unwrap()
}

/// Pages of two lines, each of two or three words.
fn pages(n: usize) -> Vec<PageAnnotation> {
    (0..n)
        .map(|i| {
            let mut strokes = Vec::new();
            let mut objects = Vec::new();
            let mut t = 0.0;
            for line in 0..2 {
                let y = 50.0 + 120.0 * line as f64 + 7.0 * i as f64;
                let words = 2 + (i + line) % 2;
                let mut boxes = Vec::new();
                for w in 0..words {
                    let x = 40.0 + 150.0 * w as f64 + 3.0 * i as f64;
                    let b = BBox::new(x, y, x + 110.0, y + 45.0).unwrap();
                    strokes.push(word(b, t));
                    t += 0.5;
                    boxes.push(b);
                    objects.push(PageObject {
                        class: SegClass::Word,
                        bbox: b,
                        text: None,
                    });
                }
                let last = boxes.last().unwrap();
                objects.push(PageObject {
                    class: SegClass::Textline,
                    bbox: BBox::new(boxes[0].x_min, y, last.x_max, y + 45.0).unwrap(),
                    text: None,
                });
            }
            PageAnnotation::new(format!("page-{i:02}"), Ink::new(strokes).unwrap(), objects)
        })
        .collect()
}

fn write_pages(dir: &TempDir, n: usize) -> PathBuf {
    let path = dir.path().join("pages.jsonl");
    write_jsonl(&path, &pages(n)).unwrap();
    path
}

fn png_size(path: &Path) -> (u32, u32) {
    image::image_dimensions(path).unwrap()
}

#[test]
fn render_inkml_default_and_custom_canvas() {
    let dir = TempDir::new().unwrap();
    let a = dir.path().join("a.png");
    let b = dir.path().join("b.png");
    let c = dir.path().join("c.png");
    let input = fixture("sample.inkml");
    ok(&inkpipe(&["render", "-i", s(&input), "-o", s(&a)]));
    ok(&inkpipe(&["render", "-i", s(&input), "-o", s(&b)]));
    ok(&inkpipe(&["render", "-i", s(&input), "-o", s(&c), "--canvas", "224"]));
    assert_eq!(png_size(&a), (448, 448));
    assert_eq!(png_size(&c), (224, 224));
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
}

#[test]
fn render_ndjson_by_index_and_out_of_range() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("dog.png");
    let input = fixture("sketches.ndjson");
    ok(&inkpipe(&["render", "-i", s(&input), "-o", s(&out), "--index", "1"]));
    assert_eq!(png_size(&out), (448, 448));
    let bad = inkpipe(&["render", "-i", s(&input), "-o", s(&out), "--index", "5"]);
    assert_eq!(bad.status.code(), Some(2));
    assert!(stderr(&bad).contains("out of range"));
}

#[test]
fn render_exit_codes() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("x.png");
    let missing = inkpipe(&["render", "-i", "/nonexistent/ink.inkml", "-o", s(&out)]);
    assert_eq!(missing.status.code(), Some(1));
    let unsupported = inkpipe(&["render", "-i", s(&fixture("mix.toml")), "-o", s(&out)]);
    assert_eq!(unsupported.status.code(), Some(2));
    let tiny = inkpipe(&[
        "render",
        "-i",
        s(&fixture("sample.inkml")),
        "-o",
        s(&out),
        "--canvas",
        "4",
    ]);
    assert_eq!(tiny.status.code(), Some(2));
    let no_args = inkpipe(&["render"]);
    assert_eq!(no_args.status.code(), Some(2));
}

#[test]
fn decode_raw_target_from_stdin() {
    let out = inkpipe_stdin(&["decode", "--raw"], &format!("{TARGET}\n"));
    let stdout = ok(&out);
    let raws = inkpipe::ingest::read_raw_records(stdout.as_bytes()).unwrap();
    let rec: SegRecord = raws.into_iter().next().unwrap().decode().unwrap();
    assert_eq!(rec.id, "1");
    assert_eq!(rec.objects.len(), 2);
    assert!(rec.objects.iter().all(|o| o.object.class == SegClass::Textline));
    assert_eq!(rec.objects[0].object.bbox.x_min, 41);
    assert_eq!(rec.objects[0].object.bbox.x_max, 273);
    assert_eq!(rec.objects[0].object.bbox.y_max, 67);
}

#[test]
fn decode_malformed_exits_2_with_diagnostics() {
    let out = inkpipe_stdin(&["decode", "--raw"], &format!("{TARGET}\n12 13 textline\n"));
    assert_eq!(out.status.code(), Some(2));
    let err = stderr(&out);
    assert!(err.starts_with("2: "), "{err}");
    assert!(err.contains("1 of 2 targets were malformed"), "{err}");
    // Good records are still written.
    let raws = inkpipe::ingest::read_raw_records(&out.stdout[..]).unwrap();
    assert_eq!(raws.len(), 2);
}

fn seg_objects(rec: &SegRecord) -> Vec<SegObject> {
    rec.objects.iter().map(|o| o.object).collect()
}

#[test]
fn encode_then_decode_roundtrips() {
    let dir = TempDir::new().unwrap();
    let pages = write_pages(&dir, 6);
    for (flag, value) in [("--level", "1"), ("--level", "0"), ("--class", "word")] {
        let examples = dir.path().join("ex.jsonl");
        let segs = dir.path().join("seg.jsonl");
        ok(&inkpipe(&["encode", "-i", s(&pages), "-o", s(&examples), flag, value]));
        ok(&inkpipe(&["decode", "-i", s(&examples), "-o", s(&segs)]));
        let exs: Vec<TaskExample> = read_jsonl(&examples).unwrap();
        let recs: Vec<SegRecord> = read_jsonl(&segs).unwrap();
        assert_eq!(exs.len(), 6);
        assert_eq!(recs.len(), 6);
        for (ex, rec) in exs.iter().zip(&recs) {
            assert_eq!(ex.task, Task::Segmentation);
            assert!(ex.ink.is_some());
            assert_eq!(ex.meta.sample_id, rec.id);
            let objs = seg_objects(rec);
            assert!(!objs.is_empty());
            let again = encode_seg_target(&objs, &first_seen_order(&objs), &Default::default()).unwrap();
            assert_eq!(again, ex.target, "{flag} {value}");
        }
    }
}

#[test]
fn encode_stdin_to_stdout() {
    let dir = TempDir::new().unwrap();
    let pages = write_pages(&dir, 2);
    let text = std::fs::read_to_string(&pages).unwrap();
    let stdout = ok(&inkpipe_stdin(&["encode", "--class", "word"], &text));
    assert_eq!(stdout.lines().count(), 2);
    assert!(stdout.lines().all(|l| l.starts_with(r#"{"v":1,"kind":"example""#)));
}

#[test]
fn encode_rejects_bad_class() {
    let dir = TempDir::new().unwrap();
    let pages = write_pages(&dir, 1);
    let out = inkpipe(&["encode", "-i", s(&pages), "--class", "paragraph"]);
    assert_eq!(out.status.code(), Some(2));
    let none = inkpipe(&["encode", "-i", s(&pages)]);
    assert_eq!(none.status.code(), Some(2));
}

fn example(task: Task, source: &str, language: Option<&str>, id: &str) -> TaskExample {
    TaskExample::new(
        task,
        format!("prompt {id}"),
        format!("target {id}"),
        ExampleMeta {
            source: source.into(),
            language: language.map(str::to_string),
            sample_id: id.into(),
        },
    )
}

fn mix_data(dir: &TempDir) -> PathBuf {
    let mut exs = Vec::new();
    for i in 0..5 {
        exs.push(example(Task::Segmentation, "pages", None, &format!("seg{i}")));
        exs.push(example(Task::Recognition, "lines", Some("English"), &format!("en{i}")));
        exs.push(example(
            Task::Recognition,
            "lines",
            Some("Vietnamese"),
            &format!("vi{i}"),
        ));
        exs.push(example(Task::Math, "formulas", None, &format!("math{i}")));
        exs.push(example(Task::Classification, "quickdraw", None, &format!("cls{i}")));
    }
    let path = dir.path().join("data.jsonl");
    write_jsonl(&path, &exs).unwrap();
    path
}

fn ids(path: &Path) -> Vec<String> {
    read_jsonl::<TaskExample>(path)
        .unwrap()
        .into_iter()
        .map(|e| e.meta.sample_id)
        .collect()
}

#[test]
fn mix_is_reproducible_and_seed_overridable() {
    let dir = TempDir::new().unwrap();
    let data = mix_data(&dir);
    let spec = fixture("mix.toml");
    let run = |name: &str, extra: &[&str]| {
        let out = dir.path().join(name);
        let mut args = vec!["mix", "--spec", s(&spec), "--data", s(&data), "--out", s(&out)];
        args.extend_from_slice(extra);
        ok(&inkpipe(&args));
        out
    };
    let a = run("a.jsonl", &["--n", "200"]);
    let b = run("b.jsonl", &["--n", "200"]);
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    assert_eq!(ids(&a).len(), 200);

    let tail = run("tail.jsonl", &["--n", "50", "--start", "150"]);
    assert_eq!(ids(&tail), ids(&a)[150..].to_vec());

    let reseeded = run("c.jsonl", &["--n", "200", "--seed", "8"]);
    assert_ne!(ids(&reseeded), ids(&a));
}

#[test]
fn mix_reports_missing_source() {
    let dir = TempDir::new().unwrap();
    let data = dir.path().join("only_math.jsonl");
    write_jsonl(&data, &[example(Task::Math, "formulas", None, "m")]).unwrap();
    let out = dir.path().join("o.jsonl");
    let r = inkpipe(&[
        "mix",
        "--spec",
        s(&fixture("mix.toml")),
        "--data",
        s(&data),
        "--out",
        s(&out),
        "--n",
        "5",
    ]);
    assert_eq!(r.status.code(), Some(2));
}

#[test]
fn eval_seg_prints_percent_table_and_json() {
    let dir = TempDir::new().unwrap();
    let pages = write_pages(&dir, 4);
    let examples = dir.path().join("ex.jsonl");
    ok(&inkpipe(&[
        "encode",
        "-i",
        s(&pages),
        "-o",
        s(&examples),
        "--level",
        "1",
    ]));
    let report = dir.path().join("report.json");
    let table = ok(&inkpipe(&[
        "eval",
        "--task",
        "seg",
        "--pred",
        s(&examples),
        "--gt",
        s(&examples),
        "--out",
        s(&report),
    ]));
    assert!(table.contains("100.00"), "{table}");
    assert!(table.contains("textline"), "{table}");
    let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(json["task"], "seg");
    assert_eq!(json["map"], 100.0);
    assert_eq!(json["map50"], 100.0);
}

#[test]
fn eval_rec_reports_cer_in_percent() {
    let dir = TempDir::new().unwrap();
    let gt = dir.path().join("gt.jsonl");
    let pred = dir.path().join("pred.jsonl");
    let text = |id: &str, t: &str| TextRecord {
        id: id.into(),
        text: t.into(),
        extra: Default::default(),
    };
    write_jsonl(&gt, &[text("a", "hello"), text("b", "world")]).unwrap();
    write_jsonl(&pred, &[text("a", "hallo"), text("b", "world")]).unwrap();
    let out = ok(&inkpipe(&[
        "eval",
        "--task",
        "rec",
        "--pred",
        s(&pred),
        "--gt",
        s(&gt),
        "--json",
    ]));
    let json: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert_eq!(json["task"], "rec");
    assert_eq!(json["cer"], 10.0);
    assert_eq!(json["accuracy"], 50.0);
}

#[test]
fn stats_prints_table() {
    let dir = TempDir::new().unwrap();
    let pages = write_pages(&dir, 3);
    let out = ok(&inkpipe(&["stats", "-i", s(&pages)]));
    assert!(out.contains("% present"), "{out}");
    assert!(out.contains("textline"), "{out}");
    assert!(out.contains("100.00"), "{out}");
    assert!(out.contains("pages: 3"), "{out}");
    let json: serde_json::Value = serde_json::from_str(&ok(&inkpipe(&["stats", "-i", s(&pages), "--json"]))).unwrap();
    assert_eq!(json["pages"], 3);
}

/// Answers each request with the target stored for its id.
fn answer_server(answers: HashMap<String, String>) -> (String, std::thread::JoinHandle<usize>) {
    let server = tiny_http::Server::http("127.0.0.1:0").unwrap();
    let url = format!("http://{}/infer", server.server_addr().to_ip().unwrap());
    let n = answers.len();
    let handle = std::thread::spawn(move || {
        let mut served = 0;
        for mut req in server.incoming_requests().take(n) {
            let mut body = String::new();
            req.as_reader().read_to_string(&mut body).unwrap();
            let wire: WireRequest = serde_json::from_str(&body).unwrap();
            let img = wire.decode_image().unwrap();
            assert_eq!(img.dimensions(), (224, 224));
            let resp = WireResponse {
                id: wire.id.clone(),
                answer: answers[&wire.id].clone(),
            };
            let header = tiny_http::Header::from_bytes("Content-Type", "application/json").unwrap();
            req.respond(tiny_http::Response::from_string(serde_json::to_string(&resp).unwrap()).with_header(header))
                .unwrap();
            served += 1;
        }
        served
    });
    (url, handle)
}

#[test]
fn infer_then_eval_against_local_server() {
    let dir = TempDir::new().unwrap();
    let pages = write_pages(&dir, 5);
    let examples = dir.path().join("ex.jsonl");
    ok(&inkpipe(&[
        "encode",
        "-i",
        s(&pages),
        "-o",
        s(&examples),
        "--level",
        "0",
    ]));
    let exs: Vec<TaskExample> = read_jsonl(&examples).unwrap();
    let answers = exs
        .iter()
        .map(|e| (e.meta.sample_id.clone(), e.target.clone()))
        .collect();
    let (url, server) = answer_server(answers);

    let config = dir.path().join("inkpipe.toml");
    std::fs::write(
        &config,
        format!("[endpoint]\nurl = \"{url}\"\nresolution = 224\nconcurrency = 2\n"),
    )
    .unwrap();
    let out = dir.path().join("answers.jsonl");
    let r = inkpipe(&["--config", s(&config), "infer", "-i", s(&examples), "-o", s(&out)]);
    ok(&r);
    assert!(stderr(&r).contains("5 answered, 0 failed"), "{}", stderr(&r));
    assert_eq!(server.join().unwrap(), 5);

    let json: serde_json::Value = serde_json::from_str(&ok(&inkpipe(&[
        "eval",
        "--task",
        "seg",
        "--pred",
        s(&out),
        "--gt",
        s(&examples),
        "--json",
    ])))
    .unwrap();
    assert_eq!(json["map"], 100.0);
}

#[test]
fn infer_unreachable_endpoint_exits_1() {
    let dir = TempDir::new().unwrap();
    let pages = write_pages(&dir, 1);
    let examples = dir.path().join("ex.jsonl");
    ok(&inkpipe(&[
        "encode",
        "-i",
        s(&pages),
        "-o",
        s(&examples),
        "--level",
        "1",
    ]));
    let port = std::net::TcpListener::bind("127.0.0.1:0")
        .unwrap()
        .local_addr()
        .unwrap()
        .port();
    let url = format!("http://127.0.0.1:{port}/infer");
    let out = dir.path().join("answers.jsonl");
    let r = inkpipe(&[
        "infer",
        "-i",
        s(&examples),
        "-o",
        s(&out),
        "--url",
        &url,
        "--retries",
        "1",
    ]);
    assert_eq!(r.status.code(), Some(1));
    assert!(stderr(&r).contains("1 of 1 requests failed"), "{}", stderr(&r));
    assert!(out.exists());

    let no_url = inkpipe(&["infer", "-i", s(&examples), "-o", s(&out)]);
    assert_eq!(no_url.status.code(), Some(2));
}

#[test]
fn unknown_config_key_suggests_fix() {
    let dir = TempDir::new().unwrap();
    let config = dir.path().join("inkpipe.toml");
    std::fs::write(&config, "canvs = 224\n").unwrap();
    let r = inkpipe(&["--config", s(&config), "stats", "-i", "x.jsonl"]);
    assert_eq!(r.status.code(), Some(2));
    assert!(stderr(&r).contains("did you mean 'canvas'?"), "{}", stderr(&r));
}

#[test]
fn flags_override_config() {
    let dir = TempDir::new().unwrap();
    let config = dir.path().join("inkpipe.toml");
    std::fs::write(&config, "canvas = 224\nmixture = \"mix.toml\"\n").unwrap();
    let input = fixture("sample.inkml");
    let a = dir.path().join("a.png");
    let b = dir.path().join("b.png");
    ok(&inkpipe(&[
        "--config",
        s(&config),
        "render",
        "-i",
        s(&input),
        "-o",
        s(&a),
    ]));
    ok(&inkpipe(&[
        "--config",
        s(&config),
        "render",
        "-i",
        s(&input),
        "-o",
        s(&b),
        "--canvas",
        "128",
    ]));
    assert_eq!(png_size(&a), (224, 224));
    assert_eq!(png_size(&b), (128, 128));

    // The mixture path resolves next to the config file.
    std::fs::copy(fixture("mix.toml"), dir.path().join("mix.toml")).unwrap();
    let data = mix_data(&dir);
    let out = dir.path().join("m.jsonl");
    ok(&inkpipe(&[
        "--config",
        s(&config),
        "mix",
        "--data",
        s(&data),
        "--out",
        s(&out),
        "--n",
        "10",
    ]));
    assert_eq!(ids(&out).len(), 10);
}
