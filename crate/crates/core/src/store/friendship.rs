//! Friendship edge lists: one whitespace-separated pair per line, `#` starts a
//! comment. Edges are undirected and deduplicated.

use std::fs;
use std::io::{self, Write};
use std::path::Path;

use super::StoreError;
use crate::model::{FriendshipGraph, ModelError, UserId};

pub fn parse_friendship(text: &str) -> Result<FriendshipGraph, StoreError> {
    let mut graph = FriendshipGraph::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or_default().trim();
        if content.is_empty() {
            continue;
        }
        let fields: Vec<&str> = content.split_whitespace().collect();
        let [a, b] = fields[..] else {
            return Err(StoreError::Parse {
                line,
                reason: format!("expected two user ids, found {}", fields.len()),
            });
        };
        let parse = |s: &str| {
            UserId::new(s).map_err(|e| StoreError::Parse {
                line,
                reason: e.to_string(),
            })
        };
        match graph.add_edge(parse(a)?, parse(b)?) {
            Ok(_) => {}
            Err(ModelError::SelfFriendship) => {
                return Err(StoreError::SelfLoop {
                    line,
                    user: a.to_string(),
                })
            }
            Err(e) => unreachable!("add_edge only rejects self-loops: {e}"),
        }
    }
    Ok(graph)
}

pub fn load_friendship(path: &Path) -> Result<FriendshipGraph, StoreError> {
    parse_friendship(&fs::read_to_string(path)?)
}

/// Writes `edges` in the edge-list format, one pair per line.
pub fn write_friendship<'a>(
    out: &mut impl Write,
    edges: impl IntoIterator<Item = (&'a UserId, &'a UserId)>,
) -> io::Result<()> {
    for (a, b) in edges {
        writeln!(out, "{a} {b}")?;
    }
    Ok(())
}
