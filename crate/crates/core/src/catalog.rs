//! Relational record of trained models and the images generated from them,
//! plus the directory that holds those images.
//!
//! ```text
//! models(id, artifact_uri, endpoint, fid_score, is_score, class_label, created_at)
//! generated_images(id, cloud_storage_url, used_model_id -> models.id, created_at)
//! ```
//!
//! Timestamps are UTC ISO-8601 text with microseconds, so lexical order is
//! time order. A new row never gets an earlier timestamp than the newest
//! existing one, which keeps `created_at` non-decreasing in `id` even if
//! the wall clock steps back.

use std::path::{Path, PathBuf};

use chrono::{DateTime, SecondsFormat, Utc};
use rusqlite::{params, Connection, ErrorCode, OptionalExtension};
use thiserror::Error;

/// Environment variable naming the catalog database file.
pub const DB_ENV: &str = "SYNTHFORGE_DB";
/// Environment variable naming the object store root.
pub const STORE_ENV: &str = "SYNTHFORGE_STORE";

const SCHEMA: &str = "
CREATE TABLE IF NOT EXISTS models (
    id INTEGER PRIMARY KEY AUTOINCREMENT,
    artifact_uri TEXT NOT NULL,
    endpoint TEXT NULL,
    fid_score REAL,
    is_score REAL,
    class_label TEXT,
    created_at TEXT NOT NULL
);
CREATE TABLE IF NOT EXISTS generated_images (
    id INTEGER PRIMARY KEY AUTOINCREMENT,
    cloud_storage_url TEXT UNIQUE NOT NULL,
    used_model_id INTEGER NOT NULL REFERENCES models(id),
    created_at TEXT NOT NULL
);
";

#[derive(Debug, Error)]
pub enum CatalogError {
    #[error("catalog has no models")]
    NoModels,
    #[error("no model with id {0}")]
    UnknownModel(i64),
    #[error("image url already recorded: {0}")]
    DuplicateUrl(String),
    #[error("model artifact not found: {0}")]
    MissingArtifact(String),
    #[error("image file for {url} not found at {path}")]
    MissingImage { url: String, path: PathBuf },
    #[error("model {id} still has {images} generated images")]
    ModelInUse { id: i64, images: usize },
    #[error("nothing to record")]
    EmptyBatch,
    #[error("cannot create {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("storage failure: {0}")]
    Storage(#[from] rusqlite::Error),
}

/// A `models` row.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelRecord {
    pub id: i64,
    pub artifact_uri: String,
    pub endpoint: Option<String>,
    pub fid_score: Option<f64>,
    pub is_score: Option<f64>,
    pub class_label: Option<String>,
    pub created_at: String,
}

/// Fields supplied when registering a model.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct NewModel {
    pub artifact_uri: String,
    pub endpoint: Option<String>,
    pub fid_score: Option<f64>,
    pub is_score: Option<f64>,
    pub class_label: Option<String>,
}

/// A `generated_images` row.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedImageRecord {
    pub id: i64,
    pub storage_url: String,
    pub used_model_id: i64,
    pub created_at: String,
}

/// Rooted directory for generated files. URLs are store-relative paths
/// with a leading `/`, e.g. `/gen_images/1.png`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ObjectStore {
    root: PathBuf,
}

impl ObjectStore {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        ObjectStore { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Filesystem path for `url`.
    pub fn resolve(&self, url: &str) -> PathBuf {
        self.root.join(url.trim_start_matches('/'))
    }

    /// URL for a path relative to the root.
    pub fn url_for(&self, relative: &str) -> String {
        format!("/{}", relative.trim_start_matches('/'))
    }
}

pub struct Catalog {
    conn: Connection,
}

fn timestamp(t: DateTime<Utc>) -> String {
    t.to_rfc3339_opts(SecondsFormat::Micros, true)
}

fn model_row(row: &rusqlite::Row<'_>) -> rusqlite::Result<ModelRecord> {
    Ok(ModelRecord {
        id: row.get(0)?,
        artifact_uri: row.get(1)?,
        endpoint: row.get(2)?,
        fid_score: row.get(3)?,
        is_score: row.get(4)?,
        class_label: row.get(5)?,
        created_at: row.get(6)?,
    })
}

const MODEL_COLUMNS: &str = "id, artifact_uri, endpoint, fid_score, is_score, class_label, created_at";

impl Catalog {
    /// Opens or creates the database file and its tables.
    pub fn open(path: &Path) -> Result<Self, CatalogError> {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent).map_err(|source| CatalogError::Io { path: parent.to_path_buf(), source })?;
        }
        Self::init(Connection::open(path)?)
    }

    pub fn open_in_memory() -> Result<Self, CatalogError> {
        Self::init(Connection::open_in_memory()?)
    }

    fn init(conn: Connection) -> Result<Self, CatalogError> {
        conn.busy_timeout(std::time::Duration::from_secs(10))?;
        conn.pragma_update(None, "foreign_keys", "ON")?;
        conn.execute_batch(SCHEMA)?;
        Ok(Catalog { conn })
    }

    fn next_timestamp(conn: &Connection, table: &str) -> Result<String, CatalogError> {
        let now = timestamp(Utc::now());
        let newest: Option<String> =
            conn.query_row(&format!("SELECT MAX(created_at) FROM {table}"), [], |r| r.get(0))?;
        Ok(match newest {
            Some(n) if n > now => n,
            _ => now,
        })
    }

    /// Inserts a model row. `artifact_uri` must name an existing file or
    /// directory. Registering the same artifact twice creates a new version.
    pub fn register_model(&mut self, model: &NewModel) -> Result<i64, CatalogError> {
        if model.artifact_uri.is_empty() || !Path::new(&model.artifact_uri).exists() {
            return Err(CatalogError::MissingArtifact(model.artifact_uri.clone()));
        }
        let tx = self.conn.transaction()?;
        let created = Self::next_timestamp(&tx, "models")?;
        tx.execute(
            "INSERT INTO models (artifact_uri, endpoint, fid_score, is_score, class_label, created_at)
             VALUES (?1, ?2, ?3, ?4, ?5, ?6)",
            params![model.artifact_uri, model.endpoint, model.fid_score, model.is_score, model.class_label, created],
        )?;
        let id = tx.last_insert_rowid();
        tx.commit()?;
        Ok(id)
    }

    /// The most recently added model; equal timestamps go to the higher id.
    pub fn latest_model(&self) -> Result<ModelRecord, CatalogError> {
        self.conn
            .query_row(
                &format!("SELECT {MODEL_COLUMNS} FROM models ORDER BY created_at DESC, id DESC LIMIT 1"),
                [],
                model_row,
            )
            .optional()?
            .ok_or(CatalogError::NoModels)
    }

    pub fn model(&self, id: i64) -> Result<ModelRecord, CatalogError> {
        self.conn
            .query_row(&format!("SELECT {MODEL_COLUMNS} FROM models WHERE id = ?1"), [id], model_row)
            .optional()?
            .ok_or(CatalogError::UnknownModel(id))
    }

    pub fn models(&self) -> Result<Vec<ModelRecord>, CatalogError> {
        let mut stmt = self.conn.prepare(&format!("SELECT {MODEL_COLUMNS} FROM models ORDER BY id"))?;
        let rows = stmt.query_map([], model_row)?.collect::<Result<Vec<_>, _>>()?;
        Ok(rows)
    }

    /// Overwrites the stored scores of model `id`.
    pub fn update_scores(&mut self, id: i64, fid: f64, is: f64) -> Result<(), CatalogError> {
        let n = self.conn.execute("UPDATE models SET fid_score = ?1, is_score = ?2 WHERE id = ?3", params![fid, is, id])?;
        if n == 0 {
            return Err(CatalogError::UnknownModel(id));
        }
        Ok(())
    }

    /// Deletes a model that has no generated images.
    pub fn delete_model(&mut self, id: i64) -> Result<(), CatalogError> {
        let images = self.count_images(Some(id))?;
        if images > 0 {
            return Err(CatalogError::ModelInUse { id, images });
        }
        if self.conn.execute("DELETE FROM models WHERE id = ?1", [id])? == 0 {
            return Err(CatalogError::UnknownModel(id));
        }
        Ok(())
    }

    /// Records one row per URL in a single transaction: either every row is
    /// inserted or none is. Each URL must resolve to an existing file in
    /// `store` at the moment its row is written.
    pub fn record_generated_images(
        &mut self,
        model_id: i64,
        urls: &[String],
        store: &ObjectStore,
    ) -> Result<Vec<i64>, CatalogError> {
        if urls.is_empty() {
            return Err(CatalogError::EmptyBatch);
        }
        let tx = self.conn.transaction()?;
        let known: Option<i64> = tx.query_row("SELECT id FROM models WHERE id = ?1", [model_id], |r| r.get(0)).optional()?;
        if known.is_none() {
            return Err(CatalogError::UnknownModel(model_id));
        }
        let created = Self::next_timestamp(&tx, "generated_images")?;
        let mut ids = Vec::with_capacity(urls.len());
        {
            let mut insert = tx.prepare(
                "INSERT INTO generated_images (cloud_storage_url, used_model_id, created_at) VALUES (?1, ?2, ?3)",
            )?;
            for url in urls {
                let path = store.resolve(url);
                if !path.is_file() {
                    return Err(CatalogError::MissingImage { url: url.clone(), path });
                }
                match insert.execute(params![url, model_id, created]) {
                    Ok(_) => ids.push(tx.last_insert_rowid()),
                    Err(rusqlite::Error::SqliteFailure(e, _)) if e.code == ErrorCode::ConstraintViolation => {
                        return Err(if e.extended_code == rusqlite::ffi::SQLITE_CONSTRAINT_FOREIGNKEY {
                            CatalogError::UnknownModel(model_id)
                        } else {
                            CatalogError::DuplicateUrl(url.clone())
                        });
                    }
                    Err(e) => return Err(e.into()),
                }
            }
        }
        tx.commit()?;
        Ok(ids)
    }

    /// Image rows ordered by id, optionally for one model.
    pub fn query_images(
        &self,
        model_id: Option<i64>,
        limit: Option<usize>,
        offset: usize,
    ) -> Result<Vec<GeneratedImageRecord>, CatalogError> {
        let limit = limit.map_or(-1, |l| l as i64);
        let mut stmt = self.conn.prepare(
            "SELECT id, cloud_storage_url, used_model_id, created_at FROM generated_images
             WHERE ?1 IS NULL OR used_model_id = ?1 ORDER BY id LIMIT ?2 OFFSET ?3",
        )?;
        let rows = stmt
            .query_map(params![model_id, limit, offset as i64], |r| {
                Ok(GeneratedImageRecord {
                    id: r.get(0)?,
                    storage_url: r.get(1)?,
                    used_model_id: r.get(2)?,
                    created_at: r.get(3)?,
                })
            })?
            .collect::<Result<Vec<_>, _>>()?;
        Ok(rows)
    }

    pub fn count_images(&self, model_id: Option<i64>) -> Result<usize, CatalogError> {
        let n: i64 = self.conn.query_row(
            "SELECT COUNT(*) FROM generated_images WHERE ?1 IS NULL OR used_model_id = ?1",
            [model_id],
            |r| r.get(0),
        )?;
        Ok(n as usize)
    }

    /// Runs raw SQL against the underlying connection; for inspection tools
    /// and tests.
    pub fn connection(&self) -> &Connection {
        &self.conn
    }
}
