use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use super::{structure_of, GroundedQuery, ShapeTag};
use crate::error::{Error, Result};
use crate::kg::{EntityId, RelationId};

/// One line of a query file. Fields other than the known ones are kept in
/// `extra` and written back unchanged.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryRecord {
    pub structure: ShapeTag,
    pub anchors: Vec<EntityId>,
    pub rels: Vec<RelationId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answers: Option<Vec<EntityId>>,
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

impl QueryRecord {
    pub fn from_query(q: &GroundedQuery, answers: Option<Vec<EntityId>>) -> Self {
        QueryRecord {
            structure: q.tag(),
            anchors: q.anchors.clone(),
            rels: q.rels.clone(),
            answers,
            extra: Map::new(),
        }
    }

    pub fn to_query(&self) -> Result<GroundedQuery> {
        GroundedQuery::new(structure_of(self.structure), self.anchors.clone(), self.rels.clone())
    }
}

/// Reads a JSON Lines query file; blank lines are skipped.
pub fn read_queries(path: impl AsRef<Path>) -> Result<Vec<QueryRecord>> {
    let path = path.as_ref();
    let reader = BufReader::new(fs::File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            msg: e.to_string(),
        })?;
        out.push(rec);
    }
    Ok(out)
}

pub fn write_queries(path: impl AsRef<Path>, records: &[QueryRecord]) -> Result<()> {
    let mut out = BufWriter::new(fs::File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}
