//! T3 — embedding-keyed persistent response cache with per-workspace
//! namespacing and TTL. Entries live in a single-file embedded SQLite
//! store; nearest-neighbor is an exact linear scan with early exit, which
//! keeps hits deterministic at desk scale.

use std::sync::{Arc, Mutex};
use std::time::Duration;

use rusqlite::{params, Connection, OptionalExtension};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::ChatClient;
use crate::clock::Clock;
use crate::tokens::count_tokens;
use crate::types::{ChatRequest, ChatResponse, ResponseSource, TokenUsage};

pub const SCHEMA_VERSION: u32 = 1;

/// System-prompt prefix folded into the embedded key text, in estimated
/// tokens (bounds embedding cost while still capturing intent).
const SYSTEM_PREFIX_TOKENS: usize = 512;

#[derive(Debug, Error)]
pub enum CacheError {
    #[error("cache store error: {0}")]
    Store(#[from] rusqlite::Error),
    #[error("embedding dimension {got} does not match the store's declared dimension {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("only cloud responses are cached (got source={0})")]
    RejectedSource(&'static str),
    #[error("embedding backend failed: {0}")]
    Embedding(#[from] crate::backends::BackendError),
}

/// A stored response keyed by request embedding.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CacheEntry {
    pub id: String,
    pub workspace_id: String,
    pub embedding: Vec<f32>,
    pub request_fingerprint: String,
    pub response_content: String,
    pub response_usage: TokenUsage,
    pub created_at_ms: i64,
    pub ttl_ms: i64,
}

#[derive(Debug, Clone)]
pub struct CacheHit {
    pub entry: CacheEntry,
    pub similarity: f64,
}

/// What the pipeline snapshots at T3's position so the write-on-miss stores
/// the request as it stood before compression.
#[derive(Debug, Clone)]
pub struct CacheSnapshot {
    pub text: String,
    pub fingerprint: String,
    pub workspace_id: String,
    pub embedding: Option<Vec<f32>>,
    pub embed_latency_ms: u64,
}

pub fn cosine_similarity(u: &[f32], v: &[f32]) -> f64 {
    if u.is_empty() || u.len() != v.len() {
        return 0.0;
    }
    let mut dot = 0.0f64;
    let mut nu = 0.0f64;
    let mut nv = 0.0f64;
    for (a, b) in u.iter().zip(v.iter()) {
        dot += *a as f64 * *b as f64;
        nu += *a as f64 * *a as f64;
        nv += *b as f64 * *b as f64;
    }
    if nu == 0.0 || nv == 0.0 {
        return 0.0;
    }
    dot / (nu.sqrt() * nv.sqrt())
}

fn embedding_to_blob(embedding: &[f32]) -> Vec<u8> {
    let mut blob = Vec::with_capacity(embedding.len() * 4);
    for value in embedding {
        blob.extend_from_slice(&value.to_le_bytes());
    }
    blob
}

fn blob_to_embedding(blob: &[u8]) -> Vec<f32> {
    blob.chunks_exact(4)
        .map(|chunk| f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]))
        .collect()
}

pub struct SemanticCache {
    conn: Mutex<Connection>,
    embedder: Arc<dyn ChatClient>,
    clock: Arc<dyn Clock>,
}

impl SemanticCache {
    /// Open (or create) the store at `path`; `:memory:` keeps it
    /// process-local. The schema carries an embedded version row.
    pub fn open(
        path: &str,
        embedder: Arc<dyn ChatClient>,
        clock: Arc<dyn Clock>,
    ) -> Result<Self, CacheError> {
        if path != ":memory:" {
            if let Some(parent) = std::path::Path::new(path).parent() {
                if !parent.as_os_str().is_empty() {
                    let _ = std::fs::create_dir_all(parent);
                }
            }
        }
        let conn = Connection::open(path)?;
        conn.execute_batch(
            "CREATE TABLE IF NOT EXISTS meta(key TEXT PRIMARY KEY, value TEXT NOT NULL);
             CREATE TABLE IF NOT EXISTS entries(
                 id TEXT PRIMARY KEY,
                 workspace TEXT NOT NULL,
                 fingerprint TEXT NOT NULL,
                 embedding BLOB NOT NULL,
                 dim INTEGER NOT NULL,
                 content TEXT NOT NULL,
                 input_tokens INTEGER NOT NULL,
                 output_tokens INTEGER NOT NULL,
                 created_at_ms INTEGER NOT NULL,
                 ttl_ms INTEGER NOT NULL
             );
             CREATE INDEX IF NOT EXISTS idx_entries_workspace ON entries(workspace);",
        )?;
        conn.execute(
            "INSERT OR IGNORE INTO meta(key, value) VALUES ('schema_version', ?1)",
            params![SCHEMA_VERSION.to_string()],
        )?;
        Ok(Self { conn: Mutex::new(conn), embedder, clock })
    }

    /// The text embedded as the cache key: the last user message plus the
    /// leading slice of the system prompt.
    pub fn embedding_text(request: &ChatRequest) -> String {
        let mut text = request
            .last_user_message()
            .map(|m| m.content.clone())
            .unwrap_or_default();
        if let Some(system) = request.system_prompt() {
            let take_chars = SYSTEM_PREFIX_TOKENS * 4;
            let prefix: String = system.chars().take(take_chars).collect();
            if !prefix.is_empty() {
                text.push('\n');
                text.push_str(&prefix);
            }
        }
        text
    }

    pub fn fingerprint(text: &str) -> String {
        use sha2::{Digest, Sha256};
        hex::encode(Sha256::digest(text.as_bytes()))
    }

    fn declared_dim(conn: &Connection) -> Result<Option<usize>, rusqlite::Error> {
        conn.query_row(
            "SELECT value FROM meta WHERE key = 'embedding_dim'",
            [],
            |row| row.get::<_, String>(0),
        )
        .optional()
        .map(|v| v.and_then(|s| s.parse().ok()))
    }

    /// Embed the request and return the best unexpired same-workspace entry
    /// at or above `threshold`. `no_cache` requests return `None` without
    /// embedding. Also returns the snapshot the pipeline needs for the
    /// write-on-miss.
    pub async fn lookup(
        &self,
        request: &ChatRequest,
        threshold: f64,
    ) -> Result<(Option<CacheHit>, CacheSnapshot), CacheError> {
        let text = Self::embedding_text(request);
        let mut snapshot = CacheSnapshot {
            fingerprint: Self::fingerprint(&text),
            workspace_id: request.workspace_id.clone(),
            text,
            embedding: None,
            embed_latency_ms: 0,
        };
        if request.no_cache {
            return Ok((None, snapshot));
        }
        let embedded = self.embedder.embed(&snapshot.text).await?;
        snapshot.embedding = Some(embedded.vector.clone());
        snapshot.embed_latency_ms = embedded.latency_ms;
        let hit =
            self.lookup_by_embedding(&request.workspace_id, &embedded.vector, threshold)?;
        Ok((hit, snapshot))
    }

    /// Model name of the configured embedder, for run metadata.
    pub fn embedder_model(&self) -> String {
        self.embedder.descriptor().model_name.clone()
    }

    /// Exact scan over unexpired entries in one workspace.
    pub fn lookup_by_embedding(
        &self,
        workspace: &str,
        embedding: &[f32],
        threshold: f64,
    ) -> Result<Option<CacheHit>, CacheError> {
        let now = self.clock.now_ms();
        let conn = self.conn.lock().expect("cache lock");
        if let Some(expected) = Self::declared_dim(&conn)? {
            if expected != embedding.len() {
                return Err(CacheError::DimensionMismatch { expected, got: embedding.len() });
            }
        }
        let mut stmt = conn.prepare_cached(
            "SELECT id, workspace, fingerprint, embedding, content, input_tokens, output_tokens,
                    created_at_ms, ttl_ms
             FROM entries
             WHERE workspace = ?1 AND created_at_ms + ttl_ms > ?2",
        )?;
        let rows = stmt.query_map(params![workspace, now], |row| {
            Ok(CacheEntry {
                id: row.get(0)?,
                workspace_id: row.get(1)?,
                request_fingerprint: row.get(2)?,
                embedding: blob_to_embedding(&row.get::<_, Vec<u8>>(3)?),
                response_content: row.get(4)?,
                response_usage: TokenUsage::new(
                    row.get::<_, i64>(5)? as u64,
                    row.get::<_, i64>(6)? as u64,
                ),
                created_at_ms: row.get(7)?,
                ttl_ms: row.get(8)?,
            })
        })?;
        let mut best: Option<CacheHit> = None;
        for entry in rows {
            let entry = entry?;
            let similarity = cosine_similarity(embedding, &entry.embedding);
            if similarity >= threshold
                && best.as_ref().map(|b| similarity > b.similarity).unwrap_or(true)
            {
                let exact = similarity >= 1.0 - 1e-9;
                best = Some(CacheHit { entry, similarity });
                if exact {
                    break;
                }
            }
        }
        Ok(best)
    }

    /// Persist a cloud response under the snapshot taken at lookup time.
    /// Cache-served and locally-answered responses are never stored.
    pub async fn store(
        &self,
        snapshot: &CacheSnapshot,
        response: &ChatResponse,
        ttl: Duration,
    ) -> Result<String, CacheError> {
        if response.source != ResponseSource::Cloud {
            return Err(CacheError::RejectedSource(response.source.as_str()));
        }
        let embedding = match &snapshot.embedding {
            Some(v) => v.clone(),
            None => self.embedder.embed(&snapshot.text).await?.vector,
        };
        let now = self.clock.now_ms();
        let id = uuid::Uuid::new_v4().to_string();
        let conn = self.conn.lock().expect("cache lock");
        match Self::declared_dim(&conn)? {
            Some(expected) if expected != embedding.len() => {
                return Err(CacheError::DimensionMismatch { expected, got: embedding.len() })
            }
            None => {
                conn.execute(
                    "INSERT OR REPLACE INTO meta(key, value) VALUES ('embedding_dim', ?1)",
                    params![embedding.len().to_string()],
                )?;
            }
            _ => {}
        }
        conn.execute(
            "INSERT INTO entries(id, workspace, fingerprint, embedding, dim, content,
                                 input_tokens, output_tokens, created_at_ms, ttl_ms)
             VALUES (?1, ?2, ?3, ?4, ?5, ?6, ?7, ?8, ?9, ?10)",
            params![
                id,
                snapshot.workspace_id,
                snapshot.fingerprint,
                embedding_to_blob(&embedding),
                embedding.len() as i64,
                response.content,
                response.usage.input_tokens as i64,
                response.usage.output_tokens as i64,
                now,
                ttl.as_millis() as i64,
            ],
        )?;
        Ok(id)
    }

    /// Remove every expired entry; idempotent.
    pub fn evict_expired(&self) -> Result<usize, CacheError> {
        let now = self.clock.now_ms();
        let conn = self.conn.lock().expect("cache lock");
        let removed = conn.execute(
            "DELETE FROM entries WHERE created_at_ms + ttl_ms <= ?1",
            params![now],
        )?;
        Ok(removed)
    }

    pub fn clear(&self) -> Result<usize, CacheError> {
        let conn = self.conn.lock().expect("cache lock");
        let removed = conn.execute("DELETE FROM entries", [])?;
        Ok(removed)
    }

    pub fn len(&self) -> Result<usize, CacheError> {
        let conn = self.conn.lock().expect("cache lock");
        let count: i64 = conn.query_row("SELECT COUNT(*) FROM entries", [], |row| row.get(0))?;
        Ok(count as usize)
    }

    pub fn is_empty(&self) -> Result<bool, CacheError> {
        Ok(self.len()? == 0)
    }

    /// All entries, for the `cache dump` line-delimited export.
    pub fn dump(&self) -> Result<Vec<CacheEntry>, CacheError> {
        let conn = self.conn.lock().expect("cache lock");
        let mut stmt = conn.prepare(
            "SELECT id, workspace, fingerprint, embedding, content, input_tokens, output_tokens,
                    created_at_ms, ttl_ms
             FROM entries ORDER BY created_at_ms, id",
        )?;
        let rows = stmt.query_map([], |row| {
            Ok(CacheEntry {
                id: row.get(0)?,
                workspace_id: row.get(1)?,
                request_fingerprint: row.get(2)?,
                embedding: blob_to_embedding(&row.get::<_, Vec<u8>>(3)?),
                response_content: row.get(4)?,
                response_usage: TokenUsage::new(
                    row.get::<_, i64>(5)? as u64,
                    row.get::<_, i64>(6)? as u64,
                ),
                created_at_ms: row.get(7)?,
                ttl_ms: row.get(8)?,
            })
        })?;
        let mut entries = Vec::new();
        for entry in rows {
            entries.push(entry?);
        }
        Ok(entries)
    }

    /// Token estimate used when a hit is credited as "tokens the answer
    /// would have cost at cloud".
    pub fn estimated_hit_tokens(entry: &CacheEntry) -> u64 {
        count_tokens(&entry.response_content, Some(entry.response_usage))
    }
}
