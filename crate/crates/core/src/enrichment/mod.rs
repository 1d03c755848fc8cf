//! ISBN → author → first name → gender → group label.
//!
//! Lookups go through an ordered chain of providers behind an
//! [`EnrichmentCache`]. A cache hit never reaches a provider, so a rerun over
//! a warm cache is offline and reproduces the same catalog.

mod cache;
mod isbn;
mod names;
mod provider;

use std::collections::BTreeSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{csv_writer, GroupLabel, ItemCatalog};
use crate::error::{Error, Result};

pub use cache::{read_records, EnrichmentCache, GenderAnswer, Record};
pub use isbn::normalize_isbn;
pub use names::{first_listed_author, first_name};
pub use provider::{
    AuthorHttpConfig, AuthorProvider, FixtureProvider, GenderHttpConfig, GenderProvider,
    HttpAuthorProvider, HttpGenderProvider, HttpSettings,
};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AuthorRecord {
    pub isbn: String,
    pub author_full_name: String,
    /// Non-empty.
    pub first_name: String,
    /// Provider id.
    pub source: String,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum AuthorResolution {
    Resolved(AuthorRecord),
    Unresolved,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Gender {
    Female,
    Male,
    Unknown,
}

impl Gender {
    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "female" | "f" => Some(Gender::Female),
            "male" | "m" => Some(Gender::Male),
            "unknown" => Some(Gender::Unknown),
            _ => None,
        }
    }
}

impl fmt::Display for Gender {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Gender::Female => "female",
            Gender::Male => "male",
            Gender::Unknown => "unknown",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GenderInference {
    pub first_name: String,
    pub gender: Gender,
    /// In `[0, 1]`.
    pub confidence: f64,
    /// Every provider failed; the result is not cached.
    pub failed: bool,
}

/// Which group each inferred gender is assigned to. An unmapped gender drops
/// the item.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenderGroups {
    pub female: Option<GroupLabel>,
    pub male: Option<GroupLabel>,
}

impl Default for GenderGroups {
    fn default() -> Self {
        Self {
            female: Some(GroupLabel::Disadvantaged),
            male: Some(GroupLabel::Advantaged),
        }
    }
}

impl GenderGroups {
    pub fn group(&self, gender: Gender) -> Option<GroupLabel> {
        match gender {
            Gender::Female => self.female,
            Gender::Male => self.male,
            Gender::Unknown => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum DropReason {
    AuthorUnresolved,
    GenderUnknown,
}

impl fmt::Display for DropReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DropReason::AuthorUnresolved => "author-unresolved",
            DropReason::GenderUnknown => "gender-unknown",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct DroppedItem {
    pub isbn: String,
    pub reason: DropReason,
    pub detail: String,
}

/// Items left out of the catalog, sorted by ISBN.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct DropReport {
    pub items: Vec<DroppedItem>,
}

impl DropReport {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn count(&self, reason: DropReason) -> usize {
        self.items.iter().filter(|d| d.reason == reason).count()
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv_writer(path, b',')?;
        w.write_record(["isbn", "reason", "detail"])?;
        for d in &self.items {
            w.write_record([d.isbn.as_str(), &d.reason.to_string(), &d.detail])?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Queries `providers` in order for an author; the first answer wins and is
/// cached. A miss is cached only when every provider answered; a failing
/// provider is skipped.
pub fn resolve_author(
    isbn: &str,
    providers: &[Arc<dyn AuthorProvider>],
    cache: &EnrichmentCache,
) -> Result<AuthorResolution> {
    let isbn = normalize_isbn(isbn)?;
    if let Some(hit) = cache.author(&isbn) {
        return Ok(hit.map_or(AuthorResolution::Unresolved, AuthorResolution::Resolved));
    }
    let mut any_failed = false;
    for p in providers {
        match p.lookup_author(&isbn) {
            Ok(Some(full)) => {
                let Some(first) = first_name(&full) else {
                    log::debug!("{}: no first name in {full:?} for {isbn}", p.id());
                    continue;
                };
                let record = AuthorRecord {
                    isbn: isbn.clone(),
                    author_full_name: full,
                    first_name: first,
                    source: p.id().to_string(),
                };
                cache.insert(Record::Author(record.clone()))?;
                return Ok(AuthorResolution::Resolved(record));
            }
            Ok(None) => {}
            Err(e) => {
                log::warn!("author lookup for {isbn} failed: {e}");
                any_failed = true;
            }
        }
    }
    if !any_failed {
        cache.insert(Record::AuthorMiss { isbn })?;
    }
    Ok(AuthorResolution::Unresolved)
}

fn apply_threshold(name: &str, gender: Gender, confidence: f64, threshold: f64) -> GenderInference {
    GenderInference {
        first_name: name.to_string(),
        gender: if confidence >= threshold {
            gender
        } else {
            Gender::Unknown
        },
        confidence,
        failed: false,
    }
}

/// Gender of a first name. Answers below `threshold` confidence become
/// [`Gender::Unknown`]; the raw answer is cached so the threshold can change.
pub fn infer_gender(
    name: &str,
    threshold: f64,
    providers: &[Arc<dyn GenderProvider>],
    cache: &EnrichmentCache,
) -> Result<GenderInference> {
    let name = name.trim();
    if name.is_empty() {
        return Err(Error::Input("empty first name".into()));
    }
    if let Some(hit) = cache.gender(name) {
        return Ok(apply_threshold(name, hit.gender, hit.confidence, threshold));
    }
    let mut any_failed = false;
    for p in providers {
        match p.lookup_gender(name) {
            Ok(Some((gender, confidence))) => {
                cache.insert(Record::Gender(GenderAnswer {
                    name: name.to_string(),
                    gender,
                    confidence,
                    source: p.id().to_string(),
                }))?;
                return Ok(apply_threshold(name, gender, confidence, threshold));
            }
            Ok(None) => {}
            Err(e) => {
                log::warn!("gender lookup for {name:?} failed: {e}");
                any_failed = true;
            }
        }
    }
    if !any_failed && !providers.is_empty() {
        cache.insert(Record::Gender(GenderAnswer {
            name: name.to_string(),
            gender: Gender::Unknown,
            confidence: 0.0,
            source: "none".into(),
        }))?;
    }
    Ok(GenderInference {
        first_name: name.to_string(),
        gender: Gender::Unknown,
        confidence: 0.0,
        failed: any_failed,
    })
}

/// Provider chains built from an [`EnrichConfig`].
#[derive(Clone, Default)]
pub struct Providers {
    pub authors: Vec<Arc<dyn AuthorProvider>>,
    pub genders: Vec<Arc<dyn GenderProvider>>,
}

impl Providers {
    /// Lookups issued across every provider.
    pub fn calls(&self) -> usize {
        self.authors.iter().map(|p| p.calls()).sum::<usize>()
            + self.genders.iter().map(|p| p.calls()).sum::<usize>()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnrichConfig {
    /// Minimum gender confidence.
    pub threshold: f64,
    pub max_in_flight: usize,
    pub cache: Option<PathBuf>,
    /// Record files served by a fixture provider ahead of any HTTP provider.
    pub fixtures: Vec<PathBuf>,
    /// Use only the cache and fixtures.
    pub offline: bool,
    pub gender_groups: GenderGroups,
    pub author_providers: Vec<AuthorHttpConfig>,
    pub gender_providers: Vec<GenderHttpConfig>,
}

impl Default for EnrichConfig {
    fn default() -> Self {
        Self {
            threshold: 0.9,
            max_in_flight: 4,
            cache: None,
            fixtures: Vec::new(),
            offline: false,
            gender_groups: GenderGroups::default(),
            author_providers: Vec::new(),
            gender_providers: Vec::new(),
        }
    }
}

impl EnrichConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(Error::Config("threshold must lie in [0, 1]".into()));
        }
        if self.max_in_flight == 0 {
            return Err(Error::Config("max_in_flight must be >= 1".into()));
        }
        Ok(())
    }

    /// Fixture provider first, then HTTP providers unless offline.
    pub fn build_providers(&self) -> Result<Providers> {
        let mut out = Providers::default();
        if !self.fixtures.is_empty() {
            let fixture = Arc::new(FixtureProvider::load(&self.fixtures)?);
            out.authors.push(fixture.clone());
            out.genders.push(fixture);
        }
        if !self.offline {
            for c in &self.author_providers {
                out.authors.push(Arc::new(HttpAuthorProvider::new(c)?));
            }
            for c in &self.gender_providers {
                out.genders.push(Arc::new(HttpGenderProvider::new(c)?));
            }
        }
        Ok(out)
    }

    pub fn open_cache(&self) -> Result<EnrichmentCache> {
        match &self.cache {
            Some(path) => EnrichmentCache::open(path),
            None => Ok(EnrichmentCache::in_memory()),
        }
    }
}

enum Outcome {
    Labeled(GroupLabel),
    Dropped(DropReason, String),
}

fn enrich_one(
    isbn: &str,
    config: &EnrichConfig,
    providers: &Providers,
    cache: &EnrichmentCache,
) -> Result<Outcome> {
    let record = match resolve_author(isbn, &providers.authors, cache) {
        Ok(AuthorResolution::Resolved(r)) => r,
        Ok(AuthorResolution::Unresolved) => {
            return Ok(Outcome::Dropped(
                DropReason::AuthorUnresolved,
                "no provider knows the author".into(),
            ))
        }
        Err(Error::Input(msg)) => return Ok(Outcome::Dropped(DropReason::AuthorUnresolved, msg)),
        Err(e) => return Err(e),
    };
    let inference = infer_gender(
        &record.first_name,
        config.threshold,
        &providers.genders,
        cache,
    )?;
    if inference.gender == Gender::Unknown {
        let detail = if inference.failed {
            format!("provider failure for {:?}", inference.first_name)
        } else if inference.confidence > 0.0 {
            format!(
                "confidence {} for {:?} below threshold",
                inference.confidence, inference.first_name
            )
        } else {
            format!("no gender for {:?}", inference.first_name)
        };
        return Ok(Outcome::Dropped(DropReason::GenderUnknown, detail));
    }
    match config.gender_groups.group(inference.gender) {
        Some(g) => Ok(Outcome::Labeled(g)),
        None => Ok(Outcome::Dropped(
            DropReason::GenderUnknown,
            format!("gender {} has no group", inference.gender),
        )),
    }
}

/// Labels every distinct ISBN or lists it in the drop report. At most
/// `max_in_flight` lookups run at once.
pub fn enrich_catalog(
    isbns: &[String],
    config: &EnrichConfig,
    providers: &Providers,
    cache: &EnrichmentCache,
) -> Result<(ItemCatalog, DropReport)> {
    config.validate()?;
    let unique: Vec<&String> = isbns.iter().collect::<BTreeSet<_>>().into_iter().collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.max_in_flight)
        .build()
        .map_err(|e| Error::Config(format!("cannot start lookup workers: {e}")))?;
    let outcomes: Vec<Result<Outcome>> = pool.install(|| {
        unique
            .par_iter()
            .map(|i| enrich_one(i, config, providers, cache))
            .collect()
    });
    let mut catalog = ItemCatalog::new();
    let mut report = DropReport::default();
    for (isbn, outcome) in unique.into_iter().zip(outcomes) {
        match outcome? {
            Outcome::Labeled(g) => catalog.insert(isbn.clone(), g),
            Outcome::Dropped(reason, detail) => report.items.push(DroppedItem {
                isbn: isbn.clone(),
                reason,
                detail,
            }),
        }
    }
    Ok((catalog, report))
}
