//! Rating data model, delimited-file ingestion, activity filtering and the
//! test-user split shared by every experiment.
//!
//! Users and items are interned into dense indices in ascending id order, so
//! iterating by index is iterating by id. Views produced by [`split_users`]
//! keep the same index tables as their parent dataset.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum GroupLabel {
    #[serde(rename = "A")]
    Advantaged,
    #[serde(rename = "D")]
    Disadvantaged,
}

impl GroupLabel {
    pub fn code(self) -> &'static str {
        match self {
            GroupLabel::Advantaged => "A",
            GroupLabel::Disadvantaged => "D",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.trim() {
            "A" | "a" => Some(GroupLabel::Advantaged),
            "D" | "d" => Some(GroupLabel::Disadvantaged),
            _ => None,
        }
    }
}

impl fmt::Display for GroupLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

/// Item id to group label.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ItemCatalog {
    entries: BTreeMap<String, GroupLabel>,
}

impl ItemCatalog {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts or relabels an item.
    pub fn insert(&mut self, item: impl Into<String>, group: GroupLabel) {
        self.entries.insert(item.into(), group);
    }

    pub fn get(&self, item: &str) -> Option<GroupLabel> {
        self.entries.get(item).copied()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, GroupLabel)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), *v))
    }

    /// `(|advantaged|, |disadvantaged|)`.
    pub fn counts(&self) -> (usize, usize) {
        let d = self
            .entries
            .values()
            .filter(|g| **g == GroupLabel::Disadvantaged)
            .count();
        (self.entries.len() - d, d)
    }

    pub fn load(path: impl AsRef<Path>, delimiter: u8) -> Result<Self> {
        let path = path.as_ref();
        let mut reader = csv_reader(path, delimiter)?;
        let mut catalog = ItemCatalog::new();
        let mut seen = HashSet::new();
        for record in reader.records() {
            let record = record?;
            let line = record.position().map(|p| p.line()).unwrap_or(0);
            let parse_err = |message: String| Error::Parse {
                path: path.display().to_string(),
                line,
                message,
            };
            if record.len() != 2 {
                return Err(parse_err(format!(
                    "expected 2 fields, got {}",
                    record.len()
                )));
            }
            let item = record[0].trim();
            if item.is_empty() {
                return Err(parse_err("empty item id".into()));
            }
            let group = GroupLabel::parse(&record[1])
                .ok_or_else(|| parse_err(format!("group must be A or D, got {:?}", &record[1])))?;
            if !seen.insert(item.to_string()) {
                return Err(parse_err(format!("duplicate item id {item}")));
            }
            catalog.insert(item, group);
        }
        Ok(catalog)
    }

    pub fn write(&self, path: impl AsRef<Path>, delimiter: u8) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv_writer(path, delimiter)?;
        w.write_record(["item_id", "group"])?;
        for (item, group) in self.iter() {
            w.write_record([item, group.code()])?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Sparse per-user rating rows over dense item indices.
///
/// Values are not range-checked: the same structure holds raw ratings and
/// debiased ratings, which may exceed the rating scale.
#[derive(Clone, Debug, PartialEq)]
pub struct RatingMatrix {
    n_items: usize,
    rows: Vec<Vec<(u32, f64)>>,
}

impl RatingMatrix {
    /// Rows must be sorted by item index without duplicates.
    pub fn new(n_items: usize, rows: Vec<Vec<(u32, f64)>>) -> Self {
        debug_assert!(rows.iter().all(|r| r.windows(2).all(|w| w[0].0 < w[1].0)
            && r.iter().all(|&(i, _)| (i as usize) < n_items)));
        Self { n_items, rows }
    }

    pub fn n_users(&self) -> usize {
        self.rows.len()
    }

    pub fn n_items(&self) -> usize {
        self.n_items
    }

    pub fn nnz(&self) -> usize {
        self.rows.iter().map(Vec::len).sum()
    }

    pub fn row(&self, user: u32) -> &[(u32, f64)] {
        &self.rows[user as usize]
    }

    pub fn rows(&self) -> &[Vec<(u32, f64)>] {
        &self.rows
    }

    /// Column view: for each item, `(user, value)` sorted by user.
    pub fn columns(&self) -> Vec<Vec<(u32, f64)>> {
        let mut cols = vec![Vec::new(); self.n_items];
        for (u, row) in self.rows.iter().enumerate() {
            for &(i, r) in row {
                cols[i as usize].push((u as u32, r));
            }
        }
        cols
    }

    pub fn triples(&self) -> impl Iterator<Item = (u32, u32, f64)> + '_ {
        self.rows
            .iter()
            .enumerate()
            .flat_map(|(u, row)| row.iter().map(move |&(i, r)| (u as u32, i, r)))
    }

    pub fn global_mean(&self) -> Option<f64> {
        let n = self.nnz();
        if n == 0 {
            None
        } else {
            Some(self.triples().map(|t| t.2).sum::<f64>() / n as f64)
        }
    }

    pub fn get(&self, user: u32, item: u32) -> Option<f64> {
        let row = &self.rows[user as usize];
        row.binary_search_by_key(&item, |e| e.0)
            .ok()
            .map(|k| row[k].1)
    }
}

/// Explicit ratings on `[1, scale_max]` with a group label per item.
#[derive(Clone, Debug, PartialEq)]
pub struct RatingsDataset {
    scale_max: f64,
    users: Arc<[String]>,
    items: Arc<[String]>,
    groups: Arc<[GroupLabel]>,
    matrix: RatingMatrix,
}

/// Bookkeeping from [`load_ratings`].
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct LoadStats {
    pub rows_read: usize,
    pub zeros_dropped: usize,
    pub duplicates: usize,
    pub uncatalogued_dropped: usize,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ZeroPolicy {
    /// Zero marks implicit feedback; such rows are skipped.
    #[default]
    Drop,
    Reject,
}

impl RatingsDataset {
    /// Builds a dataset from id triples. Later duplicates of `(user, item)`
    /// replace earlier ones; the number replaced is returned.
    pub fn from_triples<I>(
        scale_max: f64,
        triples: I,
        catalog: &ItemCatalog,
    ) -> Result<(Self, usize)>
    where
        I: IntoIterator<Item = (String, String, f64)>,
    {
        Self::build(scale_max, 1.0, &[], triples, catalog)
    }

    /// Like [`RatingsDataset::from_triples`], but `users` are kept even when
    /// they have no ratings and ratings only need to be in `(0, scale_max]`.
    /// Used for unclamped synthetic data, where draws below 1 can occur.
    pub(crate) fn from_generated<I>(
        scale_max: f64,
        users: &[String],
        triples: I,
        catalog: &ItemCatalog,
    ) -> Result<Self>
    where
        I: IntoIterator<Item = (String, String, f64)>,
    {
        Ok(Self::build(scale_max, f64::MIN_POSITIVE, users, triples, catalog)?.0)
    }

    fn build<I>(
        scale_max: f64,
        min_rating: f64,
        extra_users: &[String],
        triples: I,
        catalog: &ItemCatalog,
    ) -> Result<(Self, usize)>
    where
        I: IntoIterator<Item = (String, String, f64)>,
    {
        if !(scale_max >= 1.0 && scale_max.is_finite()) {
            return Err(Error::Config(format!(
                "scale_max must be >= 1, got {scale_max}"
            )));
        }
        let mut by_pair: BTreeMap<(String, String), f64> = BTreeMap::new();
        let mut duplicates = 0;
        for (user, item, rating) in triples {
            if !(min_rating..=scale_max).contains(&rating) {
                return Err(Error::OutOfScale {
                    user,
                    item,
                    rating,
                    scale_max,
                });
            }
            if catalog.get(&item).is_none() {
                return Err(Error::UnknownItem(item));
            }
            if by_pair.insert((user, item), rating).is_some() {
                duplicates += 1;
            }
        }

        let users: Vec<String> = {
            let set: std::collections::BTreeSet<&String> = by_pair
                .keys()
                .map(|(u, _)| u)
                .chain(extra_users.iter())
                .collect();
            set.into_iter().cloned().collect()
        };
        let items: Vec<String> = {
            let set: std::collections::BTreeSet<&String> = by_pair.keys().map(|(_, i)| i).collect();
            set.into_iter().cloned().collect()
        };
        let item_index: BTreeMap<&str, u32> = items
            .iter()
            .enumerate()
            .map(|(k, id)| (id.as_str(), k as u32))
            .collect();
        let groups: Vec<GroupLabel> = items.iter().map(|i| catalog.get(i).unwrap()).collect();

        let mut rows: Vec<Vec<(u32, f64)>> = vec![Vec::new(); users.len()];
        let mut u_idx = 0usize;
        for ((user, item), rating) in &by_pair {
            while users[u_idx] != *user {
                u_idx += 1;
            }
            rows[u_idx].push((item_index[item.as_str()], *rating));
        }
        for row in &mut rows {
            row.sort_by_key(|e| e.0);
        }
        let n_items = items.len();
        Ok((
            Self {
                scale_max,
                users: users.into(),
                items: items.into(),
                groups: groups.into(),
                matrix: RatingMatrix::new(n_items, rows),
            },
            duplicates,
        ))
    }

    /// Same id tables, different ratings. Used for train/test views.
    pub(crate) fn with_matrix(&self, matrix: RatingMatrix) -> Self {
        Self {
            scale_max: self.scale_max,
            users: self.users.clone(),
            items: self.items.clone(),
            groups: self.groups.clone(),
            matrix,
        }
    }

    pub fn scale_max(&self) -> f64 {
        self.scale_max
    }

    pub fn matrix(&self) -> &RatingMatrix {
        &self.matrix
    }

    pub fn n_users(&self) -> usize {
        self.users.len()
    }

    pub fn n_items(&self) -> usize {
        self.items.len()
    }

    pub fn n_ratings(&self) -> usize {
        self.matrix.nnz()
    }

    pub fn user_ids(&self) -> &[String] {
        &self.users
    }

    pub fn item_ids(&self) -> &[String] {
        &self.items
    }

    /// Group label per item index.
    pub fn groups(&self) -> &[GroupLabel] {
        &self.groups
    }

    pub fn user_index(&self, user: &str) -> Option<u32> {
        self.users
            .binary_search_by(|u| u.as_str().cmp(user))
            .ok()
            .map(|k| k as u32)
    }

    pub fn item_index(&self, item: &str) -> Option<u32> {
        self.items
            .binary_search_by(|i| i.as_str().cmp(item))
            .ok()
            .map(|k| k as u32)
    }

    /// Catalog restricted to the items of this dataset.
    pub fn catalog(&self) -> ItemCatalog {
        let mut c = ItemCatalog::new();
        for (id, g) in self.items.iter().zip(self.groups.iter()) {
            c.insert(id.clone(), *g);
        }
        c
    }

    /// Rated triples by id, sorted by (user, item).
    pub fn id_triples(&self) -> impl Iterator<Item = (&str, &str, f64)> + '_ {
        self.matrix.triples().map(|(u, i, r)| {
            (
                self.users[u as usize].as_str(),
                self.items[i as usize].as_str(),
                r,
            )
        })
    }

    /// Canonical serialized form: header, rows sorted by (user, item).
    pub fn write(&self, path: impl AsRef<Path>, delimiter: u8) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv_writer(path, delimiter)?;
        self.write_to(&mut w)?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn write_to<W: Write>(&self, w: &mut csv::Writer<W>) -> Result<()> {
        w.write_record(["user_id", "item_id", "rating"])?;
        for (u, i, r) in self.id_triples() {
            w.write_record([u, i, &r.to_string()])?;
        }
        Ok(())
    }
}

/// Ratings of one user in one view.
#[derive(Clone, Debug, PartialEq)]
pub struct UserProfile {
    pub user_id: String,
    pub ratings: BTreeMap<String, f64>,
}

impl UserProfile {
    /// `X_u`, the rated items.
    pub fn items(&self) -> impl Iterator<Item = &str> {
        self.ratings.keys().map(String::as_str)
    }
}

pub fn user_profile(ds: &RatingsDataset, user: &str) -> Result<UserProfile> {
    let u = ds.user_index(user).ok_or_else(|| Error::NotFound {
        kind: "user",
        id: user.to_string(),
    })?;
    let ratings = ds
        .matrix
        .row(u)
        .iter()
        .map(|&(i, r)| (ds.items[i as usize].clone(), r))
        .collect();
    Ok(UserProfile {
        user_id: user.to_string(),
        ratings,
    })
}

#[derive(Clone, Debug)]
pub struct LoadOptions {
    pub scale_max: f64,
    pub zero_policy: ZeroPolicy,
    pub delimiter: u8,
}

impl Default for LoadOptions {
    fn default() -> Self {
        Self {
            scale_max: 5.0,
            zero_policy: ZeroPolicy::Drop,
            delimiter: b',',
        }
    }
}

/// Reads `user_id,item_id,rating` rows. Items missing from `catalog` are
/// skipped and counted (they are the books enrichment could not label).
pub fn load_ratings(
    path: impl AsRef<Path>,
    catalog: &ItemCatalog,
    opts: &LoadOptions,
) -> Result<(RatingsDataset, LoadStats)> {
    let path = path.as_ref();
    let mut reader = csv_reader(path, opts.delimiter)?;
    let mut stats = LoadStats::default();
    let mut triples = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            Error::Parse {
                path: path.display().to_string(),
                line,
                message: e.to_string(),
            }
        })?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let parse_err = |message: String| Error::Parse {
            path: path.display().to_string(),
            line,
            message,
        };
        if record.len() != 3 {
            return Err(parse_err(format!(
                "expected 3 fields, got {}",
                record.len()
            )));
        }
        stats.rows_read += 1;
        let user = record[0].trim();
        let item = record[1].trim();
        if user.is_empty() || item.is_empty() {
            return Err(parse_err("empty user or item id".into()));
        }
        let rating: f64 = record[2]
            .trim()
            .parse()
            .map_err(|_| parse_err(format!("rating {:?} is not a number", &record[2])))?;
        if !rating.is_finite() {
            return Err(parse_err(format!("rating {rating} is not finite")));
        }
        if rating == 0.0 {
            match opts.zero_policy {
                ZeroPolicy::Drop => {
                    stats.zeros_dropped += 1;
                    continue;
                }
                ZeroPolicy::Reject => {
                    return Err(parse_err("zero rating rejected by zero policy".into()));
                }
            }
        }
        if !(1.0..=opts.scale_max).contains(&rating) {
            return Err(Error::OutOfScale {
                user: user.to_string(),
                item: item.to_string(),
                rating,
                scale_max: opts.scale_max,
            });
        }
        if catalog.get(item).is_none() {
            stats.uncatalogued_dropped += 1;
            continue;
        }
        triples.push((user.to_string(), item.to_string(), rating));
    }
    let (ds, duplicates) = RatingsDataset::from_triples(opts.scale_max, triples, catalog)?;
    stats.duplicates = duplicates;
    Ok((ds, stats))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FilterMode {
    /// Items first, then users, one pass each.
    #[default]
    Sequential,
    /// Repeat both until nothing changes (k-core).
    Fixpoint,
}

/// Keeps items with at least `min_item_ratings` ratings and users with at
/// least `min_user_ratings` ratings.
pub fn filter_by_activity(
    ds: &RatingsDataset,
    min_item_ratings: usize,
    min_user_ratings: usize,
    mode: FilterMode,
) -> Result<RatingsDataset> {
    if min_item_ratings == 0 || min_user_ratings == 0 {
        return Err(Error::Config("activity thresholds must be >= 1".into()));
    }
    let n_items = ds.n_items();
    let mut rows: Vec<Vec<(u32, f64)>> = ds.matrix.rows().to_vec();

    let drop_items = |rows: &mut Vec<Vec<(u32, f64)>>| -> bool {
        let mut counts = vec![0usize; n_items];
        for row in rows.iter() {
            for &(i, _) in row {
                counts[i as usize] += 1;
            }
        }
        let mut changed = false;
        for row in rows.iter_mut() {
            let before = row.len();
            row.retain(|&(i, _)| counts[i as usize] >= min_item_ratings);
            changed |= row.len() != before;
        }
        changed
    };
    let drop_users = |rows: &mut Vec<Vec<(u32, f64)>>| -> bool {
        let mut changed = false;
        for row in rows.iter_mut() {
            if !row.is_empty() && row.len() < min_user_ratings {
                row.clear();
                changed = true;
            }
        }
        changed
    };

    match mode {
        FilterMode::Sequential => {
            drop_items(&mut rows);
            drop_users(&mut rows);
        }
        FilterMode::Fixpoint => loop {
            let a = drop_items(&mut rows);
            let b = drop_users(&mut rows);
            if !a && !b {
                break;
            }
        },
    }

    if rows.iter().all(Vec::is_empty) {
        return Err(Error::EmptyAfterFilter);
    }
    let triples = rows.iter().enumerate().flat_map(|(u, row)| {
        row.iter()
            .map(move |&(i, r)| (ds.users[u].clone(), ds.items[i as usize].clone(), r))
    });
    let (out, _) =
        RatingsDataset::from_triples(ds.scale_max, triples.collect::<Vec<_>>(), &ds.catalog())?;
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSpec {
    pub test_user_fraction: f64,
    pub holdout_fraction: f64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            test_user_fraction: 0.2,
            holdout_fraction: 0.5,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("test_user_fraction", self.test_user_fraction),
            ("holdout_fraction", self.holdout_fraction),
        ] {
            if !(v > 0.0 && v < 1.0) {
                return Err(Error::Config(format!("{name} must be in (0, 1), got {v}")));
            }
        }
        Ok(())
    }
}

/// A held-out user: `visible` ratings feed bias estimation and fold-in,
/// `held_out` ratings are evaluation targets only.
#[derive(Clone, Debug, PartialEq)]
pub struct TestUser {
    pub user: u32,
    pub visible: Vec<(u32, f64)>,
    pub held_out: Vec<(u32, f64)>,
}

#[derive(Clone, Debug)]
pub struct Split {
    /// Ratings of non-test users. Test-user rows are empty.
    pub train: RatingsDataset,
    pub test_users: Vec<TestUser>,
    /// Sampled test users with fewer than two ratings.
    pub excluded: usize,
}

impl Split {
    /// Train view plus the visible ratings of every test user.
    pub fn visible_view(&self) -> RatingsDataset {
        let mut rows = self.train.matrix.rows().to_vec();
        for t in &self.test_users {
            rows[t.user as usize] = t.visible.clone();
        }
        self.train
            .with_matrix(RatingMatrix::new(self.train.n_items(), rows))
    }

    /// SHA-256 over the partition, for asserting that runs share a split.
    pub fn partition_hash(&self) -> String {
        let mut h = Sha256::new();
        for t in &self.test_users {
            h.update(self.train.users[t.user as usize].as_bytes());
            h.update([0u8]);
            for (tag, part) in [(b'v', &t.visible), (b'h', &t.held_out)] {
                h.update([tag]);
                for &(i, _) in part {
                    h.update(i.to_le_bytes());
                }
            }
        }
        hex::encode(h.finalize())
    }
}

/// Round half away from zero, as used for all split sizes.
fn round_count(x: f64) -> usize {
    x.round().max(0.0) as usize
}

pub fn split_users(ds: &RatingsDataset, spec: &SplitSpec, seed: u64) -> Result<Split> {
    spec.validate()?;
    if ds.n_users() == 0 || ds.n_ratings() == 0 {
        return Err(Error::EmptyDataset);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<u32> = (0..ds.n_users() as u32).collect();
    order.shuffle(&mut rng);
    let n_test = round_count(spec.test_user_fraction * ds.n_users() as f64);
    let mut chosen: Vec<u32> = order[..n_test.min(order.len())].to_vec();
    chosen.sort_unstable();

    let mut rows = ds.matrix.rows().to_vec();
    let mut test_users = Vec::with_capacity(chosen.len());
    let mut excluded = 0;
    for u in chosen {
        let row = &ds.matrix.rows()[u as usize];
        let k = row.len();
        if k < 2 {
            excluded += 1;
            continue;
        }
        let mut user_rng = ChaCha8Rng::seed_from_u64(seed);
        user_rng.set_stream(1 + u as u64);
        let mut positions: Vec<usize> = (0..k).collect();
        positions.shuffle(&mut user_rng);
        let held = round_count(spec.holdout_fraction * k as f64).clamp(1, k - 1);
        let mut held_pos = positions[..held].to_vec();
        held_pos.sort_unstable();
        let mut visible = Vec::with_capacity(k - held);
        let mut held_out = Vec::with_capacity(held);
        let mut hp = held_pos.iter().peekable();
        for (p, &e) in row.iter().enumerate() {
            if hp.peek() == Some(&&p) {
                hp.next();
                held_out.push(e);
            } else {
                visible.push(e);
            }
        }
        rows[u as usize].clear();
        test_users.push(TestUser {
            user: u,
            visible,
            held_out,
        });
    }
    if excluded > 0 {
        log::warn!("{excluded} sampled test users have fewer than 2 ratings and were excluded");
    }
    Ok(Split {
        train: ds.with_matrix(RatingMatrix::new(ds.n_items(), rows)),
        test_users,
        excluded,
    })
}

pub(crate) fn csv_reader(path: &Path, delimiter: u8) -> Result<csv::Reader<std::fs::File>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(file))
}

pub(crate) fn csv_writer(path: &Path, delimiter: u8) -> Result<csv::Writer<std::fs::File>> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::WriterBuilder::new()
        .delimiter(delimiter)
        .from_writer(file))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn catalog(items: &[(&str, GroupLabel)]) -> ItemCatalog {
        let mut c = ItemCatalog::new();
        for (i, g) in items {
            c.insert(*i, *g);
        }
        c
    }

    fn write_tmp(dir: &tempfile::TempDir, name: &str, body: &str) -> std::path::PathBuf {
        let p = dir.path().join(name);
        std::fs::write(&p, body).unwrap();
        p
    }

    fn abc() -> ItemCatalog {
        catalog(&[
            ("i1", GroupLabel::Advantaged),
            ("i2", GroupLabel::Disadvantaged),
            ("i3", GroupLabel::Advantaged),
            ("i4", GroupLabel::Disadvantaged),
        ])
    }

    fn ds(triples: &[(&str, &str, f64)]) -> RatingsDataset {
        RatingsDataset::from_triples(
            10.0,
            triples
                .iter()
                .map(|(u, i, r)| (u.to_string(), i.to_string(), *r)),
            &abc(),
        )
        .unwrap()
        .0
    }

    #[test]
    fn zero_ratings_dropped() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_tmp(
            &dir,
            "r.csv",
            "user_id,item_id,rating\nu1,i1,4\nu1,i2,0\nu2,i1,5\n",
        );
        let (d, stats) = load_ratings(&p, &abc(), &LoadOptions::default()).unwrap();
        assert_eq!(d.n_ratings(), 2);
        assert_eq!(stats.zeros_dropped, 1);
    }

    #[test]
    fn zero_rejected_by_policy() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_tmp(&dir, "r.csv", "user_id,item_id,rating\nu1,i1,4\nu1,i2,0\n");
        let opts = LoadOptions {
            zero_policy: ZeroPolicy::Reject,
            ..Default::default()
        };
        match load_ratings(&p, &abc(), &opts) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn duplicate_last_wins() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_tmp(&dir, "r.csv", "user_id,item_id,rating\nu1,i1,3\nu1,i1,5\n");
        let (d, stats) = load_ratings(&p, &abc(), &LoadOptions::default()).unwrap();
        assert_eq!(d.n_ratings(), 1);
        assert_eq!(d.matrix().get(0, 0), Some(5.0));
        assert_eq!(stats.duplicates, 1);
    }

    #[test]
    fn out_of_scale_is_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_tmp(&dir, "r.csv", "user_id,item_id,rating\nu1,i1,11\n");
        let opts = LoadOptions {
            scale_max: 10.0,
            ..Default::default()
        };
        assert!(matches!(
            load_ratings(&p, &abc(), &opts),
            Err(Error::OutOfScale { .. })
        ));
    }

    #[test]
    fn malformed_row_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_tmp(
            &dir,
            "r.csv",
            "user_id,item_id,rating\nu1,i1,4\nu2,i1,abc\n",
        );
        match load_ratings(&p, &abc(), &LoadOptions::default()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        let p = write_tmp(&dir, "r2.csv", "user_id,item_id,rating\nu1,i1\n");
        assert!(matches!(
            load_ratings(&p, &abc(), &LoadOptions::default()),
            Err(Error::Parse { line: 2, .. })
        ));
    }

    #[test]
    fn custom_delimiter_and_uncatalogued() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_tmp(
            &dir,
            "r.tsv",
            "user_id\titem_id\trating\nu1\ti1\t4\nu1\tzz\t3\n",
        );
        let opts = LoadOptions {
            delimiter: b'\t',
            ..Default::default()
        };
        let (d, stats) = load_ratings(&p, &abc(), &opts).unwrap();
        assert_eq!(d.n_ratings(), 1);
        assert_eq!(stats.uncatalogued_dropped, 1);
    }

    #[test]
    fn filter_keeps_full_matrix() {
        let mut t = Vec::new();
        for u in ["a", "b", "c"] {
            for i in ["i1", "i2", "i3"] {
                t.push((u, i, 3.0));
            }
        }
        let d = ds(&t);
        for mode in [FilterMode::Sequential, FilterMode::Fixpoint] {
            assert_eq!(filter_by_activity(&d, 2, 2, mode).unwrap(), d);
        }
    }

    #[test]
    fn filter_cascade_empties() {
        let d = ds(&[
            ("a", "i1", 3.0),
            ("a", "i2", 3.0),
            ("b", "i1", 3.0),
            ("c", "i1", 3.0),
        ]);
        assert!(matches!(
            filter_by_activity(&d, 2, 2, FilterMode::Sequential),
            Err(Error::EmptyAfterFilter)
        ));
        assert_eq!(
            filter_by_activity(&d, 1, 1, FilterMode::Sequential).unwrap(),
            d
        );
    }

    #[test]
    fn sequential_vs_fixpoint() {
        // Dropping i3 removes user c, which leaves i2 with a single rating.
        // Only the fixpoint mode goes back and removes i2 as well.
        let d = ds(&[
            ("a", "i1", 3.0),
            ("a", "i2", 3.0),
            ("a", "i4", 3.0),
            ("b", "i1", 3.0),
            ("b", "i4", 3.0),
            ("c", "i2", 3.0),
            ("c", "i3", 3.0),
        ]);
        let seq = filter_by_activity(&d, 2, 2, FilterMode::Sequential).unwrap();
        assert_eq!(seq.user_ids(), ["a", "b"]);
        assert_eq!(seq.item_ids(), ["i1", "i2", "i4"]);
        let fix = filter_by_activity(&d, 2, 2, FilterMode::Fixpoint).unwrap();
        assert_eq!(fix.user_ids(), ["a", "b"]);
        assert_eq!(fix.item_ids(), ["i1", "i4"]);
        assert_eq!(fix.n_ratings(), 4);
    }

    #[test]
    fn profile_and_not_found() {
        let d = ds(&[("u1", "i1", 4.0), ("u2", "i1", 5.0), ("u2", "i2", 5.0)]);
        let p = user_profile(&d, "u1").unwrap();
        assert_eq!(p.items().collect::<Vec<_>>(), ["i1"]);
        assert_eq!(p.ratings["i1"], 4.0);
        let filtered = filter_by_activity(&d, 1, 2, FilterMode::Sequential).unwrap();
        assert!(matches!(
            user_profile(&filtered, "u1"),
            Err(Error::NotFound { .. })
        ));
    }

    fn many_users(n: usize, per_user: usize) -> RatingsDataset {
        let mut c = ItemCatalog::new();
        let mut t = Vec::new();
        for i in 0..per_user {
            c.insert(format!("i{i:03}"), GroupLabel::Advantaged);
        }
        for u in 0..n {
            for i in 0..per_user {
                t.push((
                    format!("u{u:03}"),
                    format!("i{i:03}"),
                    1.0 + ((u + i) % 5) as f64,
                ));
            }
        }
        RatingsDataset::from_triples(5.0, t, &c).unwrap().0
    }

    #[test]
    fn split_is_deterministic() {
        let d = many_users(10, 4);
        let s1 = split_users(&d, &SplitSpec::default(), 7).unwrap();
        let s2 = split_users(&d, &SplitSpec::default(), 7).unwrap();
        assert_eq!(s1.test_users.len(), 2);
        assert_eq!(s1.test_users, s2.test_users);
        assert_eq!(s1.partition_hash(), s2.partition_hash());
        for t in &s1.test_users {
            assert_eq!(t.visible.len(), 2);
            assert_eq!(t.held_out.len(), 2);
            assert!(s1.train.matrix().row(t.user).is_empty());
            let p = user_profile(&s1.train, &d.user_ids()[t.user as usize]).unwrap();
            assert!(p.ratings.is_empty());
        }
    }

    #[test]
    fn split_size_rounding() {
        assert_eq!(round_count(0.2 * 44792.0), 8958);
        assert_eq!(round_count(0.2 * 376.0), 75);
    }

    #[test]
    fn split_excludes_single_rating_users() {
        let mut t = vec![];
        for u in 0..5 {
            t.push((format!("u{u}"), "i1".to_string(), 3.0));
        }
        let d = RatingsDataset::from_triples(5.0, t, &abc()).unwrap().0;
        let s = split_users(
            &d,
            &SplitSpec {
                test_user_fraction: 0.4,
                holdout_fraction: 0.5,
            },
            1,
        )
        .unwrap();
        assert!(s.test_users.is_empty());
        assert_eq!(s.excluded, 2);
    }

    proptest::proptest! {
        #[test]
        fn write_then_load_is_identity(
            raw in proptest::collection::vec((0usize..6, 0usize..4, 1.0f64..=10.0), 1..40)
        ) {
            let items = ["i1", "i2", "i3", "i4"];
            let triples: Vec<(String, String, f64)> = raw
                .iter()
                .map(|&(u, i, r)| (format!("u{u}"), items[i].to_string(), r))
                .collect();
            let (original, _) = RatingsDataset::from_triples(10.0, triples, &abc()).unwrap();
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("r.csv");
            original.write(&path, b';').unwrap();
            let opts = LoadOptions { scale_max: 10.0, delimiter: b';', ..Default::default() };
            let (back, stats) = load_ratings(&path, &abc(), &opts).unwrap();
            proptest::prop_assert_eq!(stats.duplicates, 0);
            proptest::prop_assert_eq!(back, original);
        }
    }

    #[test]
    fn split_spec_validation() {
        let bad = SplitSpec {
            test_user_fraction: 1.0,
            holdout_fraction: 0.5,
        };
        assert!(bad.validate().is_err());
    }
}
