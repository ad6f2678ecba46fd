//! Synthetic annotated pages shared by the integration tests.

#![allow(dead_code)]

use inkpipe::codec::SegClass;
use inkpipe::ingest::{PageAnnotation, PageObject};
use inkpipe::ink::{BBox, Ink, Point, Stroke};
use rand::Rng;

fn union(boxes: &[BBox]) -> BBox {
    let mut it = boxes.iter();
    let first = *it.next().expect("non-empty");
    it.fold(first, |a, b| {
        BBox::new(
            a.x_min.min(b.x_min),
            a.y_min.min(b.y_min),
            a.x_max.max(b.x_max),
            a.y_max.max(b.y_max),
        )
        .unwrap()
    })
}

/// A zigzag stroke whose bounding box is exactly `b`.
fn word_stroke(b: &BBox, t0: f64) -> Stroke {
    let xs = [0.0, 0.25, 0.5, 0.75, 1.0];
    let pts = xs
        .iter()
        .enumerate()
        .map(|(k, f)| {
            let y = if k % 2 == 0 { b.y_max } else { b.y_min };
            Point::new(b.x_min + f * b.width(), y, t0 + 0.01 * k as f64)
        })
        .collect();
    Stroke::new(pts).unwrap()
}

/// Blocks of lines of words, each word drawn as one stroke. Objects are
/// annotated at all three levels: textblock, textline and word.
pub fn synthetic_page(rng: &mut impl Rng, id: &str) -> PageAnnotation {
    let mut strokes = Vec::new();
    let mut objects = Vec::new();
    let mut t = 0.0;
    let mut y = 40.0 + rng.gen_range(0.0..40.0);
    let blocks = rng.gen_range(1..=3);
    for _ in 0..blocks {
        let mut lines = Vec::new();
        for _ in 0..rng.gen_range(1..=4) {
            let h = rng.gen_range(30.0..50.0);
            let mut x = 40.0 + rng.gen_range(0.0..60.0);
            let mut words = Vec::new();
            for _ in 0..rng.gen_range(1..=4) {
                let w = rng.gen_range(50.0..160.0);
                let b = BBox::new(x, y, x + w, y + h).unwrap();
                strokes.push(word_stroke(&b, t));
                t += 0.3;
                words.push(b);
                x += w + rng.gen_range(15.0..40.0);
            }
            let line = union(&words);
            objects.extend(words.iter().map(|&bbox| PageObject {
                class: SegClass::Word,
                bbox,
                text: None,
            }));
            objects.push(PageObject {
                class: SegClass::Textline,
                bbox: line,
                text: None,
            });
            lines.push(line);
            y += h + rng.gen_range(20.0..40.0);
        }
        objects.push(PageObject {
            class: SegClass::Textblock,
            bbox: union(&lines),
            text: None,
        });
        y += rng.gen_range(60.0..120.0);
    }
    PageAnnotation::new(id, Ink::new(strokes).unwrap(), objects)
}
