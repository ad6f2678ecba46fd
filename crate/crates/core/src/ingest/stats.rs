use std::fmt;

use serde::{Deserialize, Serialize};

use super::PageAnnotation;
use crate::codec::SegClass;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassStats {
    pub class: SegClass,
    pub level: u8,
    pub pages_present: usize,
    pub instances: usize,
    /// Share of pages with at least one instance, in percent.
    pub percent_present: f64,
    /// Mean instances per page.
    pub avg_count: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub pages: usize,
    /// One row per class, level 2 down to level 0.
    pub rows: Vec<ClassStats>,
}

impl DatasetStats {
    pub fn get(&self, class: SegClass) -> &ClassStats {
        self.rows
            .iter()
            .find(|r| r.class == class)
            .expect("every class has a row")
    }
}

pub fn compute_stats(pages: &[PageAnnotation]) -> DatasetStats {
    let n = pages.len();
    let rows = SegClass::ALL
        .iter()
        .map(|&class| {
            let counts = pages.iter().map(|p| p.count(class));
            let (present, instances) = counts.fold((0usize, 0usize), |(p, i), c| (p + usize::from(c > 0), i + c));
            let (percent_present, avg_count) = if n == 0 {
                (0.0, 0.0)
            } else {
                (present as f64 * 100.0 / n as f64, instances as f64 / n as f64)
            };
            ClassStats {
                class,
                level: class.level(),
                pages_present: present,
                instances,
                percent_present,
                avg_count,
            }
        })
        .collect();
    DatasetStats { pages: n, rows }
}

impl fmt::Display for DatasetStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<5} {:<10} {:>9} {:>7}", "level", "class", "% present", "avg #")?;
        let mut last_level = None;
        for r in &self.rows {
            if last_level.is_some_and(|l| l != r.level) {
                writeln!(f, "{}", "-".repeat(34))?;
            }
            last_level = Some(r.level);
            writeln!(
                f,
                "{:<5} {:<10} {:>9.2} {:>7.2}",
                r.level,
                r.class.name(),
                r.percent_present,
                r.avg_count
            )?;
        }
        write!(f, "pages: {}", self.pages)
    }
}
