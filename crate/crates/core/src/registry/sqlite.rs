use std::path::Path;
use std::sync::Mutex;

use async_trait::async_trait;
use rusqlite::types::Value;
use rusqlite::{params, params_from_iter, Connection, OptionalExtension, Row, Transaction};

use super::{
    EpisodeFilter, EpisodeRow, GroupBy, GroupStats, ProcessingOutcome, Registration, Registry, RegistryError,
};
use crate::datamodel::{validate_metadata, EpisodeRecord, Verdict};

const SCHEMA: &str = "
CREATE TABLE IF NOT EXISTS episodes (
    id                  INTEGER PRIMARY KEY AUTOINCREMENT,
    episode_hash        TEXT NOT NULL UNIQUE,
    operator            TEXT NOT NULL,
    lab                 TEXT NOT NULL,
    task                TEXT NOT NULL,
    embodiment          TEXT NOT NULL,
    robot_name          TEXT,
    num_frames          INTEGER,
    task_description    TEXT NOT NULL,
    scene               TEXT NOT NULL,
    objects             TEXT NOT NULL,
    processed_path      TEXT,
    processing_error    TEXT,
    mp4_path            TEXT,
    is_deleted          INTEGER NOT NULL DEFAULT 0,
    is_eval             INTEGER NOT NULL DEFAULT 0,
    eval_score          REAL,
    eval_success        INTEGER,
    processing_attempts INTEGER NOT NULL DEFAULT 0,
    CHECK (processed_path IS NULL OR processing_error IS NULL)
);
CREATE INDEX IF NOT EXISTS episodes_order ON episodes (lab, task, episode_hash);
";

const COLUMNS: &str = "episode_hash, operator, lab, task, embodiment, robot_name, num_frames, \
     task_description, scene, objects, processed_path, processing_error, mp4_path, is_deleted, \
     is_eval, eval_score, eval_success, processing_attempts";

/// Registry backed by an embedded SQLite database.
pub struct SqliteRegistry {
    conn: Mutex<Connection>,
}

impl SqliteRegistry {
    pub fn open(path: impl AsRef<Path>) -> Result<Self, RegistryError> {
        let conn = Connection::open(path).map_err(storage)?;
        conn.pragma_update(None, "journal_mode", "WAL").map_err(storage)?;
        conn.busy_timeout(std::time::Duration::from_secs(5)).map_err(storage)?;
        Self::init(conn)
    }

    pub fn in_memory() -> Result<Self, RegistryError> {
        Self::init(Connection::open_in_memory().map_err(storage)?)
    }

    fn init(conn: Connection) -> Result<Self, RegistryError> {
        conn.execute_batch(SCHEMA).map_err(storage)?;
        Ok(Self { conn: Mutex::new(conn) })
    }

    fn with_tx<T>(&self, f: impl FnOnce(&Transaction<'_>) -> Result<T, RegistryError>) -> Result<T, RegistryError> {
        let mut conn = self.conn.lock().unwrap_or_else(|e| e.into_inner());
        let tx = conn.transaction().map_err(storage)?;
        let out = f(&tx)?;
        tx.commit().map_err(storage)?;
        Ok(out)
    }
}

fn storage(e: rusqlite::Error) -> RegistryError {
    RegistryError::Storage(e.to_string())
}

fn not_found(hash: &str) -> RegistryError {
    RegistryError::NotFound(format!("episode {hash}"))
}

fn row_to_episode(row: &Row<'_>) -> rusqlite::Result<EpisodeRow> {
    let embodiment: String = row.get("embodiment")?;
    let objects: String = row.get("objects")?;
    let convert = |i: usize, e: Box<dyn std::error::Error + Send + Sync>| {
        rusqlite::Error::FromSqlConversionFailure(i, rusqlite::types::Type::Text, e)
    };
    let record = EpisodeRecord {
        episode_hash: row.get("episode_hash")?,
        operator: row.get("operator")?,
        lab: row.get("lab")?,
        task: row.get("task")?,
        embodiment: embodiment.parse().map_err(|e| convert(4, Box::new(e)))?,
        robot_name: row.get("robot_name")?,
        num_frames: row.get::<_, Option<i64>>("num_frames")?.map(|n| n as u64),
        task_description: row.get("task_description")?,
        scene: row.get("scene")?,
        objects: serde_json::from_str(&objects).map_err(|e| convert(9, Box::new(e)))?,
        processed_path: row.get("processed_path")?,
        processing_error: row.get("processing_error")?,
        mp4_path: row.get("mp4_path")?,
        is_deleted: row.get("is_deleted")?,
        is_eval: row.get("is_eval")?,
        eval_score: row.get("eval_score")?,
        eval_success: row.get("eval_success")?,
    };
    Ok(EpisodeRow {
        record,
        processing_attempts: row.get::<_, i64>("processing_attempts")? as u32,
    })
}

fn fetch(tx: &Transaction<'_>, hash: &str) -> Result<Option<(i64, EpisodeRow)>, RegistryError> {
    tx.query_row(
        &format!("SELECT id, {COLUMNS} FROM episodes WHERE episode_hash = ?1"),
        [hash],
        |row| Ok((row.get("id")?, row_to_episode(row)?)),
    )
    .optional()
    .map_err(storage)
}

fn fetch_existing(tx: &Transaction<'_>, hash: &str) -> Result<EpisodeRow, RegistryError> {
    fetch(tx, hash)?.map(|(_, row)| row).ok_or_else(|| not_found(hash))
}

#[async_trait]
impl Registry for SqliteRegistry {
    async fn register_episode(&self, record: &EpisodeRecord) -> Result<Registration, RegistryError> {
        if let Verdict::Invalid(violations) = validate_metadata(record) {
            return Err(RegistryError::Validation(violations));
        }
        self.with_tx(|tx| {
            if let Some((id, existing)) = fetch(tx, &record.episode_hash)? {
                return if existing.record.same_upload_fields(record) {
                    Ok(Registration { id, created: false })
                } else {
                    Err(RegistryError::Conflict(format!(
                        "episode {} already registered with different metadata",
                        record.episode_hash
                    )))
                };
            }
            let objects = serde_json::to_string(&record.objects).expect("strings serialize");
            tx.execute(
                &format!(
                    "INSERT INTO episodes ({COLUMNS}) VALUES \
                     (?1, ?2, ?3, ?4, ?5, ?6, ?7, ?8, ?9, ?10, ?11, ?12, ?13, ?14, ?15, ?16, ?17, 0)"
                ),
                params![
                    record.episode_hash,
                    record.operator,
                    record.lab,
                    record.task,
                    record.embodiment.as_str(),
                    record.robot_name,
                    record.num_frames.map(|n| n as i64),
                    record.task_description,
                    record.scene,
                    objects,
                    record.processed_path,
                    record.processing_error,
                    record.mp4_path,
                    record.is_deleted,
                    record.is_eval,
                    record.eval_score,
                    record.eval_success,
                ],
            )
            .map_err(storage)?;
            Ok(Registration {
                id: tx.last_insert_rowid(),
                created: true,
            })
        })
    }

    async fn update_processing(
        &self,
        episode_hash: &str,
        outcome: &ProcessingOutcome,
    ) -> Result<EpisodeRecord, RegistryError> {
        outcome.check()?;
        self.with_tx(|tx| {
            fetch_existing(tx, episode_hash)?;
            if outcome.is_success() {
                tx.execute(
                    "UPDATE episodes SET processed_path = ?2, num_frames = ?3, mp4_path = ?4, \
                     processing_error = NULL WHERE episode_hash = ?1",
                    params![
                        episode_hash,
                        outcome.processed_path,
                        outcome.num_frames.map(|n| n as i64),
                        outcome.mp4_path
                    ],
                )
            } else {
                tx.execute(
                    "UPDATE episodes SET processed_path = NULL, num_frames = NULL, mp4_path = NULL, \
                     processing_error = ?2, processing_attempts = processing_attempts + 1 \
                     WHERE episode_hash = ?1",
                    params![episode_hash, outcome.processing_error],
                )
            }
            .map_err(storage)?;
            Ok(fetch_existing(tx, episode_hash)?.record)
        })
    }

    async fn query(&self, filter: &EpisodeFilter, include_deleted: bool) -> Result<Vec<EpisodeRecord>, RegistryError> {
        let mut clauses: Vec<&str> = Vec::new();
        let mut values: Vec<Value> = Vec::new();
        let mut eq = |clause: &'static str, v: &Option<String>| {
            if let Some(v) = v {
                clauses.push(clause);
                values.push(Value::Text(v.clone()));
            }
        };
        eq("operator = ?", &filter.operator);
        eq("lab = ?", &filter.lab);
        eq("task = ?", &filter.task);
        eq("scene = ?", &filter.scene);
        eq("robot_name = ?", &filter.robot_name);
        eq("embodiment = ?", &filter.embodiment.map(|e| e.as_str().to_owned()));
        eq("instr(lower(task_description), lower(?)) > 0", &filter.text);
        if !include_deleted {
            clauses.push("is_deleted = 0");
        }
        let mut flag = |yes: &'static str, no: &'static str, v: Option<bool>| match v {
            Some(true) => clauses.push(yes),
            Some(false) => clauses.push(no),
            None => {}
        };
        flag("is_deleted = 1", "is_deleted = 0", filter.is_deleted);
        flag("is_eval = 1", "is_eval = 0", filter.is_eval);
        flag("processed_path IS NOT NULL", "processed_path IS NULL", filter.has_processed_path);
        flag("processing_error IS NOT NULL", "processing_error IS NULL", filter.has_processing_error);

        let mut sql = format!("SELECT {COLUMNS} FROM episodes");
        if !clauses.is_empty() {
            sql.push_str(" WHERE ");
            sql.push_str(&clauses.join(" AND "));
        }
        sql.push_str(" ORDER BY lab, task, episode_hash");

        self.with_tx(|tx| {
            let mut stmt = tx.prepare(&sql).map_err(storage)?;
            let rows = stmt
                .query_map(params_from_iter(values.iter()), |row| Ok(row_to_episode(row)?.record))
                .map_err(storage)?;
            rows.collect::<Result<Vec<_>, _>>().map_err(storage)
        })
    }

    async fn get(&self, episode_hash: &str) -> Result<EpisodeRow, RegistryError> {
        self.with_tx(|tx| fetch_existing(tx, episode_hash))
    }

    async fn mark_deleted(&self, episode_hash: &str) -> Result<EpisodeRecord, RegistryError> {
        self.with_tx(|tx| {
            fetch_existing(tx, episode_hash)?;
            tx.execute("UPDATE episodes SET is_deleted = 1 WHERE episode_hash = ?1", [episode_hash])
                .map_err(storage)?;
            Ok(fetch_existing(tx, episode_hash)?.record)
        })
    }

    async fn record_eval(
        &self,
        episode_hash: &str,
        eval_score: f64,
        eval_success: bool,
    ) -> Result<EpisodeRecord, RegistryError> {
        if !eval_score.is_finite() {
            return Err(RegistryError::InvalidArgument(format!("eval_score {eval_score} is not finite")));
        }
        self.with_tx(|tx| {
            let row = fetch_existing(tx, episode_hash)?;
            if !row.record.is_eval {
                return Err(RegistryError::Precondition(format!(
                    "episode {episode_hash} is not an evaluation episode"
                )));
            }
            tx.execute(
                "UPDATE episodes SET eval_score = ?2, eval_success = ?3 WHERE episode_hash = ?1",
                params![episode_hash, eval_score, eval_success],
            )
            .map_err(storage)?;
            Ok(fetch_existing(tx, episode_hash)?.record)
        })
    }

    async fn stats(&self, group_by: GroupBy) -> Result<Vec<GroupStats>, RegistryError> {
        let col = group_by.column();
        let sql = format!(
            "SELECT {col}, COUNT(*), COALESCE(SUM(num_frames), 0) FROM episodes \
             WHERE is_deleted = 0 GROUP BY {col} ORDER BY {col}"
        );
        self.with_tx(|tx| {
            let mut stmt = tx.prepare(&sql).map_err(storage)?;
            let rows = stmt
                .query_map([], |row| {
                    Ok(GroupStats {
                        group: row.get(0)?,
                        episodes: row.get::<_, i64>(1)? as u64,
                        total_frames: row.get::<_, i64>(2)? as u64,
                    })
                })
                .map_err(storage)?;
            rows.collect::<Result<Vec<_>, _>>().map_err(storage)
        })
    }
}
