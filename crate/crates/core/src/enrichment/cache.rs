use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Mutex, RwLock};

use super::{AuthorRecord, Gender};
use crate::error::{Error, Result};

/// One line of a cache or fixture file. Fields are tab-separated:
///
/// ```text
/// author       <isbn>  <full name>  <first name>  <source>
/// author-miss  <isbn>
/// gender       <name>  <female|male|unknown>  <confidence>  <source>
/// ```
///
/// Blank lines and lines starting with `#` are ignored.
#[derive(Clone, Debug, PartialEq)]
pub enum Record {
    Author(AuthorRecord),
    AuthorMiss { isbn: String },
    Gender(GenderAnswer),
}

/// A gender provider's raw answer; the confidence threshold is applied later.
#[derive(Clone, Debug, PartialEq)]
pub struct GenderAnswer {
    pub name: String,
    pub gender: Gender,
    pub confidence: f64,
    pub source: String,
}

fn clean(field: &str) -> String {
    field.replace(['\t', '\n', '\r'], " ")
}

impl Record {
    pub fn to_line(&self) -> String {
        match self {
            Record::Author(a) => format!(
                "author\t{}\t{}\t{}\t{}",
                clean(&a.isbn),
                clean(&a.author_full_name),
                clean(&a.first_name),
                clean(&a.source)
            ),
            Record::AuthorMiss { isbn } => format!("author-miss\t{}", clean(isbn)),
            Record::Gender(g) => format!(
                "gender\t{}\t{}\t{}\t{}",
                clean(&g.name),
                g.gender,
                g.confidence,
                clean(&g.source)
            ),
        }
    }

    fn parse(line: &str) -> std::result::Result<Self, String> {
        let f: Vec<&str> = line.split('\t').map(str::trim).collect();
        match (f[0], f.len()) {
            ("author", 5) => Ok(Record::Author(AuthorRecord {
                isbn: f[1].into(),
                author_full_name: f[2].into(),
                first_name: f[3].into(),
                source: f[4].into(),
            })),
            ("author-miss", 2) => Ok(Record::AuthorMiss { isbn: f[1].into() }),
            ("gender", 5) => {
                let gender =
                    Gender::parse(f[2]).ok_or_else(|| format!("unknown gender {:?}", f[2]))?;
                let confidence: f64 = f[3]
                    .parse()
                    .map_err(|_| format!("bad confidence {:?}", f[3]))?;
                if !(0.0..=1.0).contains(&confidence) {
                    return Err(format!("confidence {confidence} outside [0, 1]"));
                }
                Ok(Record::Gender(GenderAnswer {
                    name: f[1].into(),
                    gender,
                    confidence,
                    source: f[4].into(),
                }))
            }
            (kind, n) => Err(format!("unrecognised record {kind:?} with {n} fields")),
        }
    }
}

/// Reads every record of a cache or fixture file.
pub fn read_records(path: impl AsRef<Path>) -> Result<Vec<Record>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (k, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let trimmed = line.trim_end_matches(['\r', '\n']);
        if trimmed.trim().is_empty() || trimmed.starts_with('#') {
            continue;
        }
        out.push(Record::parse(trimmed).map_err(|message| Error::Parse {
            path: path.display().to_string(),
            line: k as u64 + 1,
            message,
        })?);
    }
    Ok(out)
}

pub(crate) fn name_key(name: &str) -> String {
    name.trim().to_lowercase()
}

/// ISBN and first-name lookups persisted as an append-only record file.
/// The first entry for a key wins and is never rewritten.
#[derive(Debug, Default)]
pub struct EnrichmentCache {
    path: Option<PathBuf>,
    authors: RwLock<HashMap<String, Option<AuthorRecord>>>,
    genders: RwLock<HashMap<String, GenderAnswer>>,
    writer: Mutex<Option<File>>,
}

impl EnrichmentCache {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Loads `path` if it exists; new entries are appended to it.
    pub fn open(path: impl Into<PathBuf>) -> Result<Self> {
        let path = path.into();
        let cache = Self {
            path: Some(path.clone()),
            ..Self::default()
        };
        if path.exists() {
            for record in read_records(&path)? {
                cache.absorb(record);
            }
        }
        Ok(cache)
    }

    fn absorb(&self, record: Record) -> bool {
        match record {
            Record::Author(a) => {
                let mut map = self.authors.write().unwrap();
                if map.contains_key(&a.isbn) {
                    return false;
                }
                map.insert(a.isbn.clone(), Some(a));
            }
            Record::AuthorMiss { isbn } => {
                let mut map = self.authors.write().unwrap();
                if map.contains_key(&isbn) {
                    return false;
                }
                map.insert(isbn, None);
            }
            Record::Gender(g) => {
                let mut map = self.genders.write().unwrap();
                let key = name_key(&g.name);
                if map.contains_key(&key) {
                    return false;
                }
                map.insert(key, g);
            }
        }
        true
    }

    /// `Some(None)` is a cached miss.
    pub fn author(&self, isbn: &str) -> Option<Option<AuthorRecord>> {
        self.authors.read().unwrap().get(isbn).cloned()
    }

    pub fn gender(&self, name: &str) -> Option<GenderAnswer> {
        self.genders.read().unwrap().get(&name_key(name)).cloned()
    }

    /// Adds a record unless its key is already present, persisting it.
    pub fn insert(&self, record: Record) -> Result<()> {
        let line = record.to_line();
        if !self.absorb(record) {
            return Ok(());
        }
        let Some(path) = &self.path else {
            return Ok(());
        };
        let mut writer = self.writer.lock().unwrap();
        if writer.is_none() {
            if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            }
            let file = OpenOptions::new()
                .create(true)
                .append(true)
                .open(path)
                .map_err(|e| Error::io(path, e))?;
            *writer = Some(file);
        }
        let file = writer.as_mut().unwrap();
        writeln!(file, "{line}")
            .and_then(|_| file.flush())
            .map_err(|e| Error::io(path, e))
    }

    pub fn len(&self) -> usize {
        self.authors.read().unwrap().len() + self.genders.read().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}
