//! Sampling weights and a reproducible training stream.
//!
//! Draw `i` of a stream depends only on `(seed, i)`: a ChaCha8 generator is
//! keyed by the seed and positioned on stream `i`. Any index range can
//! therefore be planned independently; only the per-source read positions
//! need the counts of earlier draws.

use std::collections::BTreeMap;
use std::fmt;
use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::example::{Task, TaskExample};

/// Allowed deviation of a weight table's sum from 1.
pub const SUM_TOLERANCE: f64 = 1e-9;
/// Minimum share of every language after rebalancing.
pub const DEFAULT_FLOOR: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MixtureError {
    #[error("weight table is empty")]
    Empty,
    #[error("weight '{name}' = {value} must be finite and non-negative")]
    BadWeight { name: String, value: f64 },
    #[error("weights sum to {0}, expected 1")]
    BadSum(f64),
    #[error("floor {floor} times {n} entries exceeds 1")]
    InfeasibleFloor { floor: f64, n: usize },
    #[error("floor {0} must lie in [0, 1]")]
    BadFloor(f64),
    #[error("no source for {0}")]
    MissingSource(SourceKey),
    #[error("source {0} is empty")]
    EmptySource(SourceKey),
    #[error("{0}")]
    UnknownTask(String),
}

/// Named fractions summing to 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "BTreeMap<String, f64>", into = "BTreeMap<String, f64>")]
pub struct WeightTable {
    entries: BTreeMap<String, f64>,
}

impl WeightTable {
    pub fn new(entries: BTreeMap<String, f64>) -> Result<Self, MixtureError> {
        if entries.is_empty() {
            return Err(MixtureError::Empty);
        }
        for (name, &value) in &entries {
            if !(value.is_finite() && value >= 0.0) {
                return Err(MixtureError::BadWeight {
                    name: name.clone(),
                    value,
                });
            }
        }
        let sum: f64 = entries.values().sum();
        if (sum - 1.0).abs() > SUM_TOLERANCE {
            return Err(MixtureError::BadSum(sum));
        }
        Ok(Self { entries })
    }

    /// Normalizes non-negative raw amounts (e.g. sample counts) to shares.
    pub fn from_amounts<K: Into<String>>(amounts: impl IntoIterator<Item = (K, f64)>) -> Result<Self, MixtureError> {
        let raw: BTreeMap<String, f64> = amounts.into_iter().map(|(k, v)| (k.into(), v)).collect();
        for (name, &value) in &raw {
            if !(value.is_finite() && value >= 0.0) {
                return Err(MixtureError::BadWeight {
                    name: name.clone(),
                    value,
                });
            }
        }
        let sum: f64 = raw.values().sum();
        if raw.is_empty() || sum <= 0.0 {
            return Err(MixtureError::Empty);
        }
        Self::new(raw.into_iter().map(|(k, v)| (k, v / sum)).collect())
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.entries.get(name).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, f64)> + '_ {
        self.entries.iter().map(|(k, &v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn sum(&self) -> f64 {
        self.entries.values().sum()
    }
}

impl TryFrom<BTreeMap<String, f64>> for WeightTable {
    type Error = MixtureError;

    fn try_from(m: BTreeMap<String, f64>) -> Result<Self, Self::Error> {
        WeightTable::new(m)
    }
}

impl From<WeightTable> for BTreeMap<String, f64> {
    fn from(t: WeightTable) -> Self {
        t.entries
    }
}

/// Raises every share below `floor` to exactly `floor` and scales the rest
/// down proportionally, repeating until no scaled share falls below the
/// floor (water-filling). A table already at or above the floor everywhere is
/// returned unchanged.
pub fn rebalance(raw: &WeightTable, floor: f64) -> Result<WeightTable, MixtureError> {
    if !(0.0..=1.0).contains(&floor) {
        return Err(MixtureError::BadFloor(floor));
    }
    let n = raw.len();
    if floor * n as f64 > 1.0 + SUM_TOLERANCE {
        return Err(MixtureError::InfeasibleFloor { floor, n });
    }
    if raw.iter().all(|(_, v)| v >= floor) {
        return Ok(raw.clone());
    }

    let mut pinned: Vec<&str> = Vec::new();
    let factor = loop {
        let free_mass = 1.0 - floor * pinned.len() as f64;
        let free_sum: f64 = raw.iter().filter(|(k, _)| !pinned.contains(k)).map(|(_, v)| v).sum();
        let factor = if free_sum > 0.0 { free_mass / free_sum } else { 0.0 };
        let below: Vec<&str> = raw
            .iter()
            .filter(|(k, v)| !pinned.contains(k) && v * factor < floor)
            .map(|(k, _)| k)
            .collect();
        if below.is_empty() {
            break factor;
        }
        pinned.extend(below);
    };

    let entries = raw
        .iter()
        .map(|(k, v)| {
            let w = if pinned.contains(&k) { floor } else { v * factor };
            (k.to_string(), w)
        })
        .collect();
    WeightTable::new(entries)
}

/// Default classification sub-task weights.
pub fn classification_weighting(overrides: Option<&WeightTable>) -> WeightTable {
    if let Some(t) = overrides {
        return t.clone();
    }
    WeightTable::new(
        [("quickdraw", 0.48), ("shape", 0.11), ("languages", 0.41)]
            .into_iter()
            .map(|(k, v)| (k.to_string(), v))
            .collect(),
    )
    .expect("default classification weights are valid")
}

/// Default task weights.
pub fn default_task_weights() -> WeightTable {
    WeightTable::new(
        [
            ("segmentation", 0.15),
            ("recognition", 0.50),
            ("math", 0.15),
            ("classification", 0.20),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect(),
    )
    .expect("default task weights are valid")
}

/// Identifies one example source: a task plus, where the task is further
/// split, the language (recognition) or sub-dataset name.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SourceKey {
    pub task: Task,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sub: Option<String>,
}

impl SourceKey {
    pub fn new(task: Task, sub: Option<&str>) -> Self {
        Self {
            task,
            sub: sub.map(str::to_string),
        }
    }
}

impl fmt::Display for SourceKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.sub {
            Some(s) => write!(f, "({}, {s})", self.task),
            None => write!(f, "({})", self.task),
        }
    }
}

fn default_floor() -> f64 {
    DEFAULT_FLOOR
}

/// Human-editable mixture configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixtureSpec {
    pub seed: u64,
    #[serde(default = "default_floor")]
    pub floor: f64,
    pub task_weights: WeightTable,
    /// Raw language shares for recognition; rebalanced with `floor`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub language_weights: Option<WeightTable>,
    /// Sub-dataset weights per task name, used as given.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub subset_weights: BTreeMap<String, WeightTable>,
}

impl MixtureSpec {
    pub fn from_toml(s: &str) -> Result<Self, toml::de::Error> {
        toml::from_str(s)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("spec serializes")
    }

    /// Which source an example belongs to under this spec.
    pub fn key_for(&self, ex: &TaskExample) -> SourceKey {
        let sub = match ex.task {
            Task::Recognition if self.language_weights.is_some() => ex.meta.language.clone(),
            t if self.subset_weights.contains_key(t.name()) => Some(ex.meta.source.clone()),
            _ => None,
        };
        SourceKey { task: ex.task, sub }
    }
}

#[derive(Debug, Clone)]
struct Cumulative<T> {
    items: Vec<(T, f64)>,
}

impl<T: Clone> Cumulative<T> {
    fn new(weights: impl IntoIterator<Item = (T, f64)>) -> Self {
        let mut acc = 0.0;
        let items = weights
            .into_iter()
            .map(|(k, w)| {
                acc += w;
                (k, acc)
            })
            .collect();
        Self { items }
    }

    fn pick(&self, u: f64) -> &T {
        let total = self.items.last().map(|(_, c)| *c).unwrap_or(1.0);
        let target = u * total;
        self.items
            .iter()
            .find(|(_, c)| target < *c)
            .or_else(|| self.items.last())
            .map(|(k, _)| k)
            .expect("non-empty weight table")
    }
}

/// A validated spec, ready to draw from.
#[derive(Debug, Clone)]
pub struct MixturePlan {
    key: [u8; 32],
    tasks: Cumulative<Task>,
    languages: Option<Cumulative<String>>,
    subsets: BTreeMap<Task, Cumulative<String>>,
    positive: Vec<SourceKey>,
}

impl MixturePlan {
    pub fn new(spec: &MixtureSpec) -> Result<Self, MixtureError> {
        let mut tasks = Vec::new();
        for (name, w) in spec.task_weights.iter() {
            let task: Task = name.parse().map_err(MixtureError::UnknownTask)?;
            tasks.push((task, w));
        }
        let languages = spec
            .language_weights
            .as_ref()
            .map(|t| rebalance(t, spec.floor))
            .transpose()?;
        let mut subsets = BTreeMap::new();
        for (name, table) in &spec.subset_weights {
            let task: Task = name.parse().map_err(MixtureError::UnknownTask)?;
            subsets.insert(task, table.clone());
        }

        let mut positive = Vec::new();
        for &(task, w) in &tasks {
            if w <= 0.0 {
                continue;
            }
            let subs: Option<Vec<(String, f64)>> = match (task, &languages) {
                (Task::Recognition, Some(l)) => Some(l.iter().map(|(k, v)| (k.to_string(), v)).collect()),
                _ => subsets
                    .get(&task)
                    .map(|t: &WeightTable| t.iter().map(|(k, v)| (k.to_string(), v)).collect()),
            };
            match subs {
                Some(subs) => positive.extend(
                    subs.into_iter()
                        .filter(|(_, v)| *v > 0.0)
                        .map(|(k, _)| SourceKey::new(task, Some(&k))),
                ),
                None => positive.push(SourceKey::new(task, None)),
            }
        }

        Ok(Self {
            key: ChaCha8Rng::seed_from_u64(spec.seed).get_seed(),
            tasks: Cumulative::new(tasks),
            languages: languages
                .map(|t| Cumulative::new(t.iter().map(|(k, v)| (k.to_string(), v)).collect::<Vec<_>>())),
            subsets: subsets
                .into_iter()
                .map(|(t, w)| {
                    (
                        t,
                        Cumulative::new(w.iter().map(|(k, v)| (k.to_string(), v)).collect::<Vec<_>>()),
                    )
                })
                .collect(),
            positive,
        })
    }

    /// Every source that can be drawn.
    pub fn reachable_sources(&self) -> &[SourceKey] {
        &self.positive
    }

    /// Source chosen by draw `index`.
    pub fn key_at(&self, index: u64) -> SourceKey {
        let mut rng = ChaCha8Rng::from_seed(self.key);
        rng.set_stream(index);
        let task = *self.tasks.pick(rng.gen::<f64>());
        let u_sub = rng.gen::<f64>();
        let sub = match (task, &self.languages) {
            (Task::Recognition, Some(l)) => Some(l.pick(u_sub).clone()),
            _ => self.subsets.get(&task).map(|c| c.pick(u_sub).clone()),
        };
        SourceKey { task, sub }
    }
}

/// Draws `range` of the stream, reading each source in order and wrapping
/// around when it runs out.
pub fn sample_range(
    spec: &MixtureSpec,
    sources: &BTreeMap<SourceKey, Vec<TaskExample>>,
    range: Range<u64>,
) -> Result<Vec<TaskExample>, MixtureError> {
    let plan = MixturePlan::new(spec)?;
    for key in plan.reachable_sources() {
        match sources.get(key) {
            None => return Err(MixtureError::MissingSource(key.clone())),
            Some(v) if v.is_empty() => return Err(MixtureError::EmptySource(key.clone())),
            Some(_) => {}
        }
    }
    let mut cursor: BTreeMap<SourceKey, usize> = BTreeMap::new();
    for i in 0..range.start {
        *cursor.entry(plan.key_at(i)).or_default() += 1;
    }
    let mut out = Vec::with_capacity((range.end.saturating_sub(range.start)) as usize);
    for i in range {
        let key = plan.key_at(i);
        let src = &sources[&key];
        let pos = cursor.entry(key).or_default();
        out.push(src[*pos % src.len()].clone());
        *pos += 1;
    }
    Ok(out)
}

/// The first `n` examples of the stream.
pub fn sample_stream(
    spec: &MixtureSpec,
    sources: &BTreeMap<SourceKey, Vec<TaskExample>>,
    n: u64,
) -> Result<Vec<TaskExample>, MixtureError> {
    sample_range(spec, sources, 0..n)
}

/// Groups examples into sources according to `spec`, keeping file order.
pub fn group_sources(
    spec: &MixtureSpec,
    examples: impl IntoIterator<Item = TaskExample>,
) -> BTreeMap<SourceKey, Vec<TaskExample>> {
    let mut out: BTreeMap<SourceKey, Vec<TaskExample>> = BTreeMap::new();
    for ex in examples {
        out.entry(spec.key_for(&ex)).or_default().push(ex);
    }
    out
}
