//! The join history: one DAG holding every join order of every join set
//! seen so far, grown incrementally and persisted between runs.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::Path;

use log::{debug, info};
use serde::{Deserialize, Serialize};

use crate::catalog::{hex_digest, Catalog};
use crate::enumerate::{enumerate, Space, SpaceOp};
use crate::error::{Error, Result};
use crate::expr::LogicalExpr;
use crate::memo::{Dag, DagDocument, FORMAT_VERSION};
use crate::predicate::JoinCondition;

pub const DEFAULT_MAX_EDGES: usize = 8;
/// Joins in one connected component of the history.
pub const MAX_COMPONENT_JOINS: usize = 16;
pub const COMPLETE_ROOT: &str = "complete";

#[derive(Clone, Debug)]
pub struct HistoryDag {
    pub dag: Dag,
    /// Joins already materialized, by canonical text.
    pub known_joins: BTreeMap<String, JoinCondition>,
    pub version: u64,
    pub catalog_fingerprint: String,
}

impl HistoryDag {
    pub fn empty(catalog: &Catalog) -> Self {
        HistoryDag {
            dag: Dag::new(),
            known_joins: BTreeMap::new(),
            version: 0,
            catalog_fingerprint: catalog.fingerprint().to_string(),
        }
    }

    pub fn check_catalog(&self, catalog: &Catalog) -> Result<()> {
        if self.catalog_fingerprint != catalog.fingerprint() {
            return Err(Error::FingerprintMismatch {
                expected: self.catalog_fingerprint.clone(),
                found: catalog.fingerprint().to_string(),
            });
        }
        Ok(())
    }
}

/// Connected components of a join set, each a sorted list of joins.
fn components(joins: &BTreeMap<String, JoinCondition>) -> Vec<Vec<JoinCondition>> {
    let mut rels: Vec<&str> = joins
        .values()
        .flat_map(|j| [j.left.relation.as_str(), j.right.relation.as_str()])
        .collect();
    rels.sort_unstable();
    rels.dedup();
    let idx = |r: &str| rels.binary_search(&r).expect("relation listed");
    let mut parent: Vec<usize> = (0..rels.len()).collect();
    fn find(p: &mut [usize], mut i: usize) -> usize {
        while p[i] != i {
            p[i] = p[p[i]];
            i = p[i];
        }
        i
    }
    for j in joins.values() {
        let (a, b) = (
            find(&mut parent, idx(&j.left.relation)),
            find(&mut parent, idx(&j.right.relation)),
        );
        parent[a] = b;
    }
    let mut by_root: BTreeMap<usize, Vec<JoinCondition>> = BTreeMap::new();
    for j in joins.values() {
        let r = find(&mut parent, idx(&j.left.relation));
        by_root.entry(r).or_default().push(j.clone());
    }
    by_root.into_values().collect()
}

fn component_space(joins: &[JoinCondition], catalog: &Catalog) -> Result<Space> {
    if joins.len() > MAX_COMPONENT_JOINS {
        return Err(Error::LimitExceeded {
            what: "joins in one history component",
            n: joins.len(),
            limit: MAX_COMPONENT_JOINS,
        });
    }
    let rels: BTreeSet<&str> = joins
        .iter()
        .flat_map(|j| [j.left.relation.as_str(), j.right.relation.as_str()])
        .collect();
    let leaves = rels
        .into_iter()
        .map(|r| Ok(LogicalExpr::base(r, catalog.relation(r)?.cardinality)))
        .collect::<Result<Vec<_>>>()?;
    Ok(Space {
        leaves,
        ops: joins.iter().cloned().map(SpaceOp::Join).collect(),
    })
}

/// History holding every join order over the schema's foreign-key edges.
pub fn build_complete_history(catalog: &Catalog, max_edges: usize) -> Result<HistoryDag> {
    let edges = &catalog.schema_graph().edges;
    if edges.len() > max_edges {
        return Err(Error::LimitExceeded {
            what: "schema edges",
            n: edges.len(),
            limit: max_edges,
        });
    }
    let mut h = HistoryDag::empty(catalog);
    for e in edges {
        let j = JoinCondition::new(e.left.clone(), e.right.clone(), e.jsf);
        h.known_joins.insert(j.canonical(), j);
    }
    let comps = components(&h.known_joins);
    let many = comps.len() > 1;
    for (i, comp) in comps.iter().enumerate() {
        let out = enumerate(&mut h.dag, &component_space(comp, catalog)?, 0)?;
        let name = if many {
            format!("{COMPLETE_ROOT}/{}", i + 1)
        } else {
            COMPLETE_ROOT.to_string()
        };
        h.dag.set_root(&name, out.roots[0])?;
    }
    h.version = 1;
    info!(
        "complete history: {} eq-nodes, {} op-nodes",
        h.dag.eq_nodes().len(),
        h.dag.op_nodes().len()
    );
    Ok(h)
}

/// Extends `old` with `joins`. Only trees involving at least one new join
/// are enumerated; everything else is already present.
pub fn build_incremental(
    old: &HistoryDag,
    joins: &[JoinCondition],
    catalog: &Catalog,
) -> Result<HistoryDag> {
    old.check_catalog(catalog)?;
    let mut h = old.clone();
    let fresh: BTreeMap<String, JoinCondition> = joins
        .iter()
        .filter(|j| !old.known_joins.contains_key(&j.canonical()))
        .map(|j| (j.canonical(), j.clone()))
        .collect();
    h.version += 1;
    if fresh.is_empty() {
        return Ok(h);
    }
    h.known_joins.extend(fresh.clone());
    for comp in components(&h.known_joins) {
        if !comp.iter().any(|j| fresh.contains_key(&j.canonical())) {
            continue;
        }
        let space = component_space(&comp, catalog)?;
        let focus = comp
            .iter()
            .enumerate()
            .filter(|(_, j)| fresh.contains_key(&j.canonical()))
            .fold(0u64, |m, (i, _)| m | 1 << i);
        enumerate(&mut h.dag, &space, focus)?;
    }
    debug!(
        "history v{}: +{} joins, {} eq-nodes",
        h.version,
        fresh.len(),
        h.dag.eq_nodes().len()
    );
    Ok(h)
}

#[derive(Serialize, Deserialize)]
struct HistoryBody {
    version: u64,
    catalog_fingerprint: String,
    known_joins: Vec<JoinCondition>,
    dag: DagDocument,
}

#[derive(Serialize, Deserialize)]
struct HistoryFile {
    format: u64,
    checksum: String,
    body: serde_json::Value,
}

fn body_digest(body: &serde_json::Value) -> Result<String> {
    Ok(hex_digest(serde_json::to_string(body)?.as_bytes()))
}

/// Writes the history atomically: a temporary sibling file is renamed over
/// `path`.
pub fn save_history(h: &HistoryDag, path: &Path) -> Result<()> {
    let body = serde_json::to_value(HistoryBody {
        version: h.version,
        catalog_fingerprint: h.catalog_fingerprint.clone(),
        known_joins: h.known_joins.values().cloned().collect(),
        dag: h.dag.to_document(),
    })?;
    let file = HistoryFile {
        format: FORMAT_VERSION,
        checksum: body_digest(&body)?,
        body,
    };
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    serde_json::to_writer_pretty(&mut tmp, &file)?;
    tmp.write_all(b"\n")?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

pub fn load_history(path: &Path) -> Result<HistoryDag> {
    let text = std::fs::read_to_string(path)?;
    let raw: serde_json::Value = serde_json::from_str(&text)?;
    let format = raw.get("format").and_then(|f| f.as_u64()).unwrap_or(0);
    if format != FORMAT_VERSION {
        return Err(Error::FormatVersion {
            found: format,
            expected: FORMAT_VERSION,
        });
    }
    let file: HistoryFile = serde_json::from_value(raw)?;
    if body_digest(&file.body)? != file.checksum {
        return Err(Error::Checksum);
    }
    let body: HistoryBody = serde_json::from_value(file.body)?;
    Ok(HistoryDag {
        dag: Dag::from_document(body.dag)?,
        known_joins: body
            .known_joins
            .into_iter()
            .map(|j| (j.canonical(), j))
            .collect(),
        version: body.version,
        catalog_fingerprint: body.catalog_fingerprint,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::{Attribute, Relation};
    use crate::predicate::ColumnRef;

    fn catalog(edges: &[(&str, &str)]) -> Catalog {
        let rels = ["a", "b", "c", "d"]
            .iter()
            .map(|n| Relation {
                name: n.to_string(),
                cardinality: 100.0,
                attributes: vec![Attribute {
                    name: "k".into(),
                    distinct_count: 100.0,
                    is_key: true,
                }],
            })
            .collect();
        let edges = edges
            .iter()
            .map(|(l, r)| (ColumnRef::new(*l, "k"), ColumnRef::new(*r, "k"), Some(0.01)))
            .collect();
        Catalog::from_parts(rels, edges, Default::default()).unwrap()
    }

    fn j(l: &str, r: &str) -> JoinCondition {
        JoinCondition::new(ColumnRef::new(l, "k"), ColumnRef::new(r, "k"), 0.01)
    }

    #[test]
    fn single_edge_history() {
        let h = build_complete_history(&catalog(&[("a", "b")]), 8).unwrap();
        let c = h.dag.count_nodes();
        assert_eq!((c.eq_total, c.op_count), (3, 1));
        assert!(h.dag.roots().contains_key(COMPLETE_ROOT));
    }

    #[test]
    fn incremental_matches_complete() {
        let cat = catalog(&[("a", "b"), ("b", "c"), ("c", "d")]);
        let complete = build_complete_history(&cat, 8).unwrap();
        let h1 = build_incremental(&HistoryDag::empty(&cat), &[j("a", "b")], &cat).unwrap();
        let h2 = build_incremental(&h1, &[j("c", "d")], &cat).unwrap();
        let h3 = build_incremental(&h2, &[j("b", "c"), j("a", "b")], &cat).unwrap();
        assert_eq!(h3.dag.signature_set(), complete.dag.signature_set());
        assert_eq!(h3.dag.arc_set(), complete.dag.arc_set());
        assert_eq!(h3.version, 3);
        let same = build_incremental(&h3, &[j("a", "b")], &cat).unwrap();
        assert_eq!(same.version, 4);
    }

    #[test]
    fn edge_limit() {
        let cat = catalog(&[("a", "b"), ("b", "c"), ("c", "d")]);
        assert!(matches!(
            build_complete_history(&cat, 2),
            Err(Error::LimitExceeded { n: 3, limit: 2, .. })
        ));
    }

    #[test]
    fn save_and_load() {
        let cat = catalog(&[("a", "b"), ("b", "c")]);
        let h = build_complete_history(&cat, 8).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("h.json");
        save_history(&h, &path).unwrap();
        let back = load_history(&path).unwrap();
        back.check_catalog(&cat).unwrap();
        assert_eq!(back.dag.arc_set(), h.dag.arc_set());
        assert_eq!(back.known_joins, h.known_joins);

        let text = std::fs::read_to_string(&path).unwrap();
        std::fs::write(&path, text.replacen("\"version\": 1", "\"version\": 7", 1)).unwrap();
        assert!(matches!(load_history(&path), Err(Error::Checksum)));
        std::fs::write(&path, text.replacen("\"format\": 1", "\"format\": 9", 1)).unwrap();
        assert!(matches!(
            load_history(&path),
            Err(Error::FormatVersion { found: 9, .. })
        ));

        let other = catalog(&[("a", "b")]);
        assert!(matches!(
            back.check_catalog(&other),
            Err(Error::FingerprintMismatch { .. })
        ));
    }
}
