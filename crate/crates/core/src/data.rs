//! Interaction log ingestion, activity filtering, dense indexing and the
//! leave-one-out split.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One row of an implicit-feedback log.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawInteraction {
    pub user_key: String,
    pub item_key: String,
    pub timestamp: Option<i64>,
}

impl RawInteraction {
    pub fn new(user: impl Into<String>, item: impl Into<String>, timestamp: Option<i64>) -> Self {
        Self {
            user_key: user.into(),
            item_key: item.into(),
            timestamp,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Delimiter {
    Tab,
    Comma,
    /// Tab if the first data line contains one, comma otherwise.
    #[default]
    Auto,
}

/// Column layout of a log file. Ratings are read past and ignored.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Columns {
    /// Two fields: user,item. Three: user,item,timestamp. Four or more:
    /// user,item,rating,timestamp.
    #[default]
    Auto,
    UserItem,
    UserItemTimestamp,
    UserItemRating,
    UserItemRatingTimestamp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct InputFormat {
    #[serde(default)]
    pub delimiter: Delimiter,
    #[serde(default)]
    pub columns: Columns,
    /// Skip the first non-empty line.
    #[serde(default)]
    pub header: bool,
}

impl Columns {
    fn timestamp_field(self, n_fields: usize) -> Option<usize> {
        match self {
            Columns::Auto => match n_fields {
                0..=2 => None,
                3 => Some(2),
                _ => Some(3),
            },
            Columns::UserItem | Columns::UserItemRating => None,
            Columns::UserItemTimestamp => Some(2),
            Columns::UserItemRatingTimestamp => Some(3),
        }
    }
}

/// Reads a delimiter-separated interaction log.
pub fn load_interactions(path: impl AsRef<Path>, format: InputFormat) -> Result<Vec<RawInteraction>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_interactions(&text, format)
}

/// Parses log text. Rows come back in file order; a repeated (user, item)
/// pair keeps its first position and the earliest timestamp seen.
pub fn parse_interactions(text: &str, format: InputFormat) -> Result<Vec<RawInteraction>> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim_end_matches('\r')))
        .filter(|(_, l)| !l.trim().is_empty())
        .peekable();
    if format.header {
        lines.next();
    }
    let delim = match format.delimiter {
        Delimiter::Tab => '\t',
        Delimiter::Comma => ',',
        Delimiter::Auto => match lines.peek() {
            Some((_, l)) if l.contains('\t') => '\t',
            _ => ',',
        },
    };

    let mut rows = Vec::new();
    for (line_no, line) in lines {
        let fields: Vec<&str> = line.split(delim).map(str::trim).collect();
        if fields.len() < 2 || fields[0].is_empty() || fields[1].is_empty() {
            return Err(Error::Parse {
                line: line_no,
                message: format!("expected at least user and item fields, got {line:?}"),
            });
        }
        let ts_field = format.columns.timestamp_field(fields.len());
        let timestamp = match ts_field {
            None => None,
            Some(k) => {
                let raw = fields.get(k).ok_or_else(|| Error::Parse {
                    line: line_no,
                    message: format!("missing timestamp column {}", k + 1),
                })?;
                Some(parse_timestamp(raw).ok_or_else(|| Error::Parse {
                    line: line_no,
                    message: format!("invalid timestamp {raw:?}"),
                })?)
            }
        };
        rows.push(RawInteraction::new(fields[0], fields[1], timestamp));
    }
    if rows.is_empty() {
        return Err(Error::EmptyInput);
    }
    Ok(dedup_interactions(rows))
}

fn parse_timestamp(raw: &str) -> Option<i64> {
    if let Ok(v) = raw.parse::<i64>() {
        return Some(v);
    }
    let f: f64 = raw.parse().ok()?;
    f.is_finite().then(|| f.floor() as i64)
}

/// Collapses repeated (user, item) pairs onto their first occurrence,
/// keeping the minimum timestamp.
pub fn dedup_interactions(rows: Vec<RawInteraction>) -> Vec<RawInteraction> {
    let mut seen: HashMap<(String, String), usize> = HashMap::with_capacity(rows.len());
    let mut out: Vec<RawInteraction> = Vec::with_capacity(rows.len());
    for row in rows {
        let key = (row.user_key.clone(), row.item_key.clone());
        match seen.get(&key) {
            Some(&pos) => {
                let kept = &mut out[pos];
                kept.timestamp = match (kept.timestamp, row.timestamp) {
                    (Some(a), Some(b)) => Some(a.min(b)),
                    (a, b) => a.or(b),
                };
            }
            None => {
                seen.insert(key, out.len());
                out.push(row);
            }
        }
    }
    out
}

/// Per-user held-out items plus the remaining training positives.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train_pos: Vec<Vec<u32>>,
    pub val_item: Vec<u32>,
    pub test_item: Vec<u32>,
}

/// Leave-one-out split over per-user histories of `(item, timestamp)`.
///
/// A user whose every interaction is timestamped gives up its latest item
/// for test and the second latest for validation, ordering by
/// `(timestamp, item index)`. Other users get two items drawn uniformly at
/// random from a single stream seeded with `seed`, visited in user order.
pub fn leave_one_out_split(histories: &[Vec<(u32, Option<i64>)>], seed: u64) -> Result<Split> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = histories.len();
    let mut split = Split {
        train_pos: Vec::with_capacity(n),
        val_item: Vec::with_capacity(n),
        test_item: Vec::with_capacity(n),
    };
    for (u, hist) in histories.iter().enumerate() {
        if hist.len() < 3 {
            return Err(Error::TooFewInteractions {
                user: format!("#{u}"),
                count: hist.len(),
            });
        }
        let (test, val) = if hist.iter().all(|(_, t)| t.is_some()) {
            let mut ordered: Vec<(i64, u32)> = hist.iter().map(|&(i, t)| (t.unwrap(), i)).collect();
            ordered.sort_unstable();
            let k = ordered.len();
            (ordered[k - 1].1, ordered[k - 2].1)
        } else {
            let picks = index::sample(&mut rng, hist.len(), 2);
            (hist[picks.index(0)].0, hist[picks.index(1)].0)
        };
        let mut train: Vec<u32> = hist
            .iter()
            .map(|&(i, _)| i)
            .filter(|&i| i != test && i != val)
            .collect();
        train.sort_unstable();
        split.train_pos.push(train);
        split.val_item.push(val);
        split.test_item.push(test);
    }
    Ok(split)
}

/// Options for [`build_dataset`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BuildOptions {
    pub min_ratings: usize,
    /// Seeds the random hold-out for users without timestamps.
    pub seed: u64,
}

impl Default for BuildOptions {
    fn default() -> Self {
        Self {
            min_ratings: 5,
            seed: 0,
        }
    }
}

/// Filters users with fewer than `min_ratings` interactions, indexes the
/// survivors densely (first-appearance order) and applies the leave-one-out
/// split.
pub fn build_dataset(rows: &[RawInteraction], opts: BuildOptions) -> Result<Dataset> {
    if rows.is_empty() {
        return Err(Error::EmptyInput);
    }
    let rows = dedup_interactions(rows.to_vec());

    let mut counts: HashMap<&str, usize> = HashMap::new();
    for r in &rows {
        *counts.entry(r.user_key.as_str()).or_default() += 1;
    }

    let mut user_keys: Vec<String> = Vec::new();
    let mut item_keys: Vec<String> = Vec::new();
    let mut user_lookup: HashMap<String, u32> = HashMap::new();
    let mut item_lookup: HashMap<String, u32> = HashMap::new();
    let mut histories: Vec<Vec<(u32, Option<i64>)>> = Vec::new();

    for r in &rows {
        if counts[r.user_key.as_str()] < opts.min_ratings {
            continue;
        }
        let u = *user_lookup.entry(r.user_key.clone()).or_insert_with(|| {
            user_keys.push(r.user_key.clone());
            histories.push(Vec::new());
            (user_keys.len() - 1) as u32
        });
        let i = *item_lookup.entry(r.item_key.clone()).or_insert_with(|| {
            item_keys.push(r.item_key.clone());
            (item_keys.len() - 1) as u32
        });
        histories[u as usize].push((i, r.timestamp));
    }
    if user_keys.is_empty() {
        return Err(Error::NoSurvivingUsers {
            min_ratings: opts.min_ratings,
        });
    }
    if let Some((u, h)) = histories.iter().enumerate().find(|(_, h)| h.len() < 3) {
        return Err(Error::TooFewInteractions {
            user: user_keys[u].clone(),
            count: h.len(),
        });
    }

    let split = leave_one_out_split(&histories, opts.seed)?;
    Ok(Dataset {
        n: user_keys.len(),
        m: item_keys.len(),
        train_pos: split.train_pos,
        val_item: split.val_item,
        test_item: split.test_item,
        user_keys,
        item_keys,
        user_lookup,
        item_lookup,
        seed: opts.seed,
        min_ratings: opts.min_ratings,
    })
}

/// Indexed user/item universe with a leave-one-out split. Immutable once
/// built.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "DatasetRepr", into = "DatasetRepr")]
pub struct Dataset {
    n: usize,
    m: usize,
    train_pos: Vec<Vec<u32>>,
    val_item: Vec<u32>,
    test_item: Vec<u32>,
    user_keys: Vec<String>,
    item_keys: Vec<String>,
    user_lookup: HashMap<String, u32>,
    item_lookup: HashMap<String, u32>,
    seed: u64,
    min_ratings: usize,
}

#[derive(Serialize, Deserialize)]
struct DatasetRepr {
    version: u32,
    seed: u64,
    min_ratings: usize,
    n: usize,
    m: usize,
    user_keys: Vec<String>,
    item_keys: Vec<String>,
    train_pos: Vec<Vec<u32>>,
    val_item: Vec<u32>,
    test_item: Vec<u32>,
}

impl From<DatasetRepr> for Dataset {
    fn from(r: DatasetRepr) -> Self {
        let user_lookup = index_keys(&r.user_keys);
        let item_lookup = index_keys(&r.item_keys);
        Dataset {
            n: r.n,
            m: r.m,
            train_pos: r.train_pos,
            val_item: r.val_item,
            test_item: r.test_item,
            user_keys: r.user_keys,
            item_keys: r.item_keys,
            user_lookup,
            item_lookup,
            seed: r.seed,
            min_ratings: r.min_ratings,
        }
    }
}

impl From<Dataset> for DatasetRepr {
    fn from(d: Dataset) -> Self {
        DatasetRepr {
            version: 1,
            seed: d.seed,
            min_ratings: d.min_ratings,
            n: d.n,
            m: d.m,
            user_keys: d.user_keys,
            item_keys: d.item_keys,
            train_pos: d.train_pos,
            val_item: d.val_item,
            test_item: d.test_item,
        }
    }
}

fn index_keys(keys: &[String]) -> HashMap<String, u32> {
    keys.iter().enumerate().map(|(i, k)| (k.clone(), i as u32)).collect()
}

impl Dataset {
    /// Builds a dataset directly from dense indices. Keys are the decimal
    /// indices. Used for synthetic data and tests.
    pub fn from_split(m: usize, split: Split) -> Result<Self> {
        let n = split.train_pos.len();
        if split.val_item.len() != n || split.test_item.len() != n {
            return Err(Error::Shape("split vectors differ in length".into()));
        }
        let mut train_pos = split.train_pos;
        for (u, items) in train_pos.iter_mut().enumerate() {
            items.sort_unstable();
            items.dedup();
            let (v, t) = (split.val_item[u], split.test_item[u]);
            let out_of_range = items.iter().chain([&v, &t]).any(|&i| i as usize >= m);
            if out_of_range || v == t || items.binary_search(&v).is_ok() || items.binary_search(&t).is_ok() {
                return Err(Error::Shape(format!("user {u} violates split invariants")));
            }
        }
        let user_keys: Vec<String> = (0..n).map(|u| u.to_string()).collect();
        let item_keys: Vec<String> = (0..m).map(|i| i.to_string()).collect();
        Ok(Dataset {
            n,
            m,
            train_pos,
            val_item: split.val_item,
            test_item: split.test_item,
            user_lookup: index_keys(&user_keys),
            item_lookup: index_keys(&item_keys),
            user_keys,
            item_keys,
            seed: 0,
            min_ratings: 0,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn min_ratings(&self) -> usize {
        self.min_ratings
    }

    /// Sorted training positives of `u`.
    pub fn train_items(&self, u: u32) -> &[u32] {
        &self.train_pos[u as usize]
    }

    pub fn is_train(&self, u: u32, i: u32) -> bool {
        self.train_pos[u as usize].binary_search(&i).is_ok()
    }

    pub fn val_item(&self, u: u32) -> u32 {
        self.val_item[u as usize]
    }

    pub fn test_item(&self, u: u32) -> u32 {
        self.test_item[u as usize]
    }

    pub fn user_key(&self, u: u32) -> &str {
        &self.user_keys[u as usize]
    }

    pub fn item_key(&self, i: u32) -> &str {
        &self.item_keys[i as usize]
    }

    pub fn user_index(&self, key: &str) -> Option<u32> {
        self.user_lookup.get(key).copied()
    }

    pub fn item_index(&self, key: &str) -> Option<u32> {
        self.item_lookup.get(key).copied()
    }

    pub fn num_train(&self) -> usize {
        self.train_pos.iter().map(Vec::len).sum()
    }

    /// Training interactions plus the held-out pair of every user.
    pub fn num_interactions(&self) -> usize {
        self.num_train() + 2 * self.n
    }

    pub fn sparsity(&self) -> f64 {
        1.0 - self.num_interactions() as f64 / (self.n as f64 * self.m as f64)
    }

    /// All training `(user, item)` pairs in user-major order.
    pub fn train_pairs(&self) -> Vec<(u32, u32)> {
        let mut pairs = Vec::with_capacity(self.num_train());
        for (u, items) in self.train_pos.iter().enumerate() {
            pairs.extend(items.iter().map(|&i| (u as u32, i)));
        }
        pairs
    }

    /// Items not observed in training for `u`, ascending, minus `exclude`.
    pub fn candidates(&self, u: u32, exclude: Option<u32>) -> Vec<u32> {
        let train = self.train_items(u);
        let mut out = Vec::with_capacity(self.m - train.len());
        let mut t = 0;
        for i in 0..self.m as u32 {
            if t < train.len() && train[t] == i {
                t += 1;
                continue;
            }
            if Some(i) != exclude {
                out.push(i);
            }
        }
        out
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

/// Synthetic implicit-feedback logs for tests and benchmarks.
pub mod synthetic {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    use super::RawInteraction;

    /// Each user interacts with `per_user` items drawn without replacement
    /// with probability proportional to `exp(sharpness * <a_u, b_i>)`, where
    /// `a_u` and `b_i` are standard normal vectors of dimension `rank`.
    /// Timestamps follow the draw order.
    pub fn low_rank(
        n_users: usize,
        n_items: usize,
        rank: usize,
        per_user: usize,
        sharpness: f64,
        seed: u64,
    ) -> Vec<RawInteraction> {
        assert!(per_user <= n_items);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = |rng: &mut ChaCha8Rng, k: usize| -> Vec<f64> {
            (0..k).map(|_| StandardNormal.sample(rng)).collect()
        };
        let users: Vec<Vec<f64>> = (0..n_users).map(|_| normal(&mut rng, rank)).collect();
        let items: Vec<Vec<f64>> = (0..n_items).map(|_| normal(&mut rng, rank)).collect();
        let mut rows = Vec::with_capacity(n_users * per_user);
        for (u, a) in users.iter().enumerate() {
            let mut weights: Vec<f64> = items
                .iter()
                .map(|b| (sharpness * a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>()).exp())
                .collect();
            for t in 0..per_user {
                let total: f64 = weights.iter().sum();
                let mut r = rng.random::<f64>() * total;
                let mut pick = weights.iter().rposition(|&w| w > 0.0).unwrap();
                for (i, &w) in weights.iter().enumerate() {
                    if w > 0.0 && r < w {
                        pick = i;
                        break;
                    }
                    r -= w;
                }
                weights[pick] = 0.0;
                rows.push(RawInteraction::new(
                    format!("u{u}"),
                    format!("i{pick}"),
                    Some(t as i64),
                ));
            }
        }
        rows
    }
}
