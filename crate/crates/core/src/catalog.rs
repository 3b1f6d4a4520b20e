//! Schema, statistics, and the foreign-key schema graph.
//!
//! A [`Catalog`] is loaded once from a JSON document and is immutable
//! afterwards. Join selectivity factors (jsf) live on schema-graph edges;
//! select selectivity factors (ssf) come from per-predicate overrides, the
//! `1/d` rule for equality predicates, or a configurable default.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::predicate::{CmpOp, ColumnRef, HavingCondition, SelectCondition};

pub const DEFAULT_SSF: f64 = 0.1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Attribute {
    pub name: String,
    pub distinct_count: f64,
    pub is_key: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Relation {
    pub name: String,
    pub cardinality: f64,
    pub attributes: Vec<Attribute>,
}

impl Relation {
    pub fn attribute(&self, name: &str) -> Option<&Attribute> {
        self.attributes.iter().find(|a| a.name == name)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FkEdge {
    pub left: ColumnRef,
    pub right: ColumnRef,
    pub jsf: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SchemaGraph {
    pub nodes: BTreeSet<String>,
    pub edges: Vec<FkEdge>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stats {
    pub default_ssf: f64,
    pub predicate_ssf_overrides: BTreeMap<String, f64>,
}

impl Default for Stats {
    fn default() -> Self {
        Stats {
            default_ssf: DEFAULT_SSF,
            predicate_ssf_overrides: BTreeMap::new(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Catalog {
    relations: BTreeMap<String, Relation>,
    graph: SchemaGraph,
    stats: Stats,
    fingerprint: String,
}

// On-disk document shapes.

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SchemaDoc {
    relations: Vec<RelationDoc>,
    #[serde(default)]
    fk_edges: Vec<EdgeDoc>,
    #[serde(default)]
    stats: Option<StatsDoc>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RelationDoc {
    name: String,
    cardinality: f64,
    attributes: Vec<AttributeDoc>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct AttributeDoc {
    name: String,
    distinct: f64,
    #[serde(default)]
    key: bool,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct EdgeDoc {
    left: String,
    right: String,
    #[serde(default)]
    jsf: Option<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct StatsDoc {
    #[serde(default)]
    default_ssf: Option<f64>,
    #[serde(default)]
    overrides: BTreeMap<String, f64>,
}

fn json_error(source_name: &str, err: serde_json::Error) -> Error {
    Error::Parse {
        source_name: source_name.to_string(),
        line: err.line(),
        column: err.column(),
        message: err.to_string(),
    }
}

/// Loads and validates a catalog. `stats_source`, when given, takes
/// precedence over a `stats` section embedded in the schema document.
pub fn load_catalog(schema_source: &str, stats_source: Option<&str>) -> Result<Catalog> {
    let doc: SchemaDoc =
        serde_json::from_str(schema_source).map_err(|e| json_error("schema", e))?;
    let mut stats_doc = doc.stats;
    if let Some(src) = stats_source {
        let parsed: StatsDoc = serde_json::from_str(src).map_err(|e| json_error("stats", e))?;
        stats_doc = Some(parsed);
    }

    let relations = doc
        .relations
        .into_iter()
        .map(|r| Relation {
            name: r.name.to_lowercase(),
            cardinality: r.cardinality,
            attributes: r
                .attributes
                .into_iter()
                .map(|a| Attribute {
                    name: a.name.to_lowercase(),
                    distinct_count: a.distinct,
                    is_key: a.key,
                })
                .collect(),
        })
        .collect::<Vec<_>>();

    let mut edges = Vec::with_capacity(doc.fk_edges.len());
    for (i, e) in doc.fk_edges.into_iter().enumerate() {
        let left = ColumnRef::parse(&e.left).ok_or_else(|| {
            Error::validation(format!(
                "fk_edges[{i}].left `{}` is not relation.attribute",
                e.left
            ))
        })?;
        let right = ColumnRef::parse(&e.right).ok_or_else(|| {
            Error::validation(format!(
                "fk_edges[{i}].right `{}` is not relation.attribute",
                e.right
            ))
        })?;
        edges.push((left, right, e.jsf));
    }

    let stats = match stats_doc {
        Some(s) => Stats {
            default_ssf: s.default_ssf.unwrap_or(DEFAULT_SSF),
            predicate_ssf_overrides: s
                .overrides
                .into_iter()
                .map(|(k, v)| (normalize_predicate_text(&k), v))
                .collect(),
        },
        None => Stats::default(),
    };

    Catalog::from_parts(relations, edges, stats)
}

fn normalize_predicate_text(text: &str) -> String {
    text.to_lowercase()
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
}

fn check_factor(what: &str, value: f64) -> Result<()> {
    if !(value > 0.0 && value <= 1.0) {
        return Err(Error::validation(format!(
            "{what} = {value} is outside (0, 1]"
        )));
    }
    Ok(())
}

impl Catalog {
    /// Builds a catalog from parts, resolving missing jsf values with
    /// `1 / max(d_left, d_right)` and validating every invariant.
    pub fn from_parts(
        relations: Vec<Relation>,
        edges: Vec<(ColumnRef, ColumnRef, Option<f64>)>,
        stats: Stats,
    ) -> Result<Catalog> {
        let mut by_name = BTreeMap::new();
        for rel in relations {
            if rel.name.is_empty() {
                return Err(Error::validation("relation with empty name"));
            }
            if !rel.cardinality.is_finite() || rel.cardinality < 0.0 {
                return Err(Error::validation(format!(
                    "relation `{}` has invalid cardinality {}",
                    rel.name, rel.cardinality
                )));
            }
            let mut seen = BTreeSet::new();
            for attr in &rel.attributes {
                if !seen.insert(attr.name.as_str()) {
                    return Err(Error::validation(format!(
                        "attribute `{}` repeated in relation `{}`",
                        attr.name, rel.name
                    )));
                }
                if attr.distinct_count.is_nan() || attr.distinct_count < 1.0 {
                    return Err(Error::validation(format!(
                        "{}.{} has distinct count {} < 1",
                        rel.name, attr.name, attr.distinct_count
                    )));
                }
                if rel.cardinality > 0.0 && attr.distinct_count > rel.cardinality {
                    return Err(Error::validation(format!(
                        "{}.{} has distinct count {} above cardinality {}",
                        rel.name, attr.name, attr.distinct_count, rel.cardinality
                    )));
                }
            }
            if by_name.contains_key(&rel.name) {
                return Err(Error::validation(format!(
                    "relation `{}` defined twice",
                    rel.name
                )));
            }
            by_name.insert(rel.name.clone(), rel);
        }

        check_factor("default_ssf", stats.default_ssf)?;
        for (text, v) in &stats.predicate_ssf_overrides {
            check_factor(&format!("ssf override `{text}`"), *v)?;
        }

        let mut catalog = Catalog {
            relations: by_name,
            graph: SchemaGraph::default(),
            stats,
            fingerprint: String::new(),
        };

        let mut fk_edges = Vec::with_capacity(edges.len());
        for (left, right, jsf) in edges {
            let dl = catalog.attribute(&left)?.distinct_count;
            let dr = catalog.attribute(&right)?.distinct_count;
            if left == right {
                return Err(Error::validation(format!("fk edge joins {left} to itself")));
            }
            let jsf = jsf.unwrap_or_else(|| 1.0 / dl.max(dr));
            check_factor(&format!("jsf of {left} = {right}"), jsf)?;
            fk_edges.push(FkEdge { left, right, jsf });
        }
        catalog.graph = SchemaGraph {
            nodes: catalog.relations.keys().cloned().collect(),
            edges: fk_edges,
        };
        catalog.fingerprint = catalog.compute_fingerprint();
        Ok(catalog)
    }

    fn compute_fingerprint(&self) -> String {
        #[derive(Serialize)]
        struct Canon<'a> {
            relations: Vec<&'a Relation>,
            edges: &'a [FkEdge],
        }
        let canon = Canon {
            relations: self.relations.values().collect(),
            edges: &self.graph.edges,
        };
        let bytes = serde_json::to_vec(&canon).expect("catalog serializes");
        hex_digest(&bytes)
    }

    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    pub fn relations(&self) -> impl Iterator<Item = &Relation> {
        self.relations.values()
    }

    pub fn relation(&self, name: &str) -> Result<&Relation> {
        self.relations
            .get(name)
            .ok_or_else(|| Error::UnknownRelation(name.to_string()))
    }

    pub fn attribute(&self, col: &ColumnRef) -> Result<&Attribute> {
        self.relation(&col.relation)?
            .attribute(&col.attribute)
            .ok_or_else(|| Error::UnknownAttribute(col.to_string()))
    }

    pub fn schema_graph(&self) -> &SchemaGraph {
        &self.graph
    }

    pub fn stats(&self) -> &Stats {
        &self.stats
    }

    /// jsf for an equi-join: the schema edge's factor when the pair is a
    /// known foreign key, else `1 / max(d_left, d_right)`.
    pub fn jsf(&self, a: &ColumnRef, b: &ColumnRef) -> Result<f64> {
        let da = self.attribute(a)?.distinct_count;
        let db = self.attribute(b)?.distinct_count;
        let edge = self
            .graph
            .edges
            .iter()
            .find(|e| (&e.left == a && &e.right == b) || (&e.left == b && &e.right == a));
        Ok(match edge {
            Some(e) => e.jsf,
            None => 1.0 / da.max(db),
        })
    }

    /// Selectivity of a single-relation predicate: override, then `1/d`
    /// for equality, then the default.
    pub fn lookup_ssf(&self, predicate: &SelectCondition) -> Result<f64> {
        let attr = self.attribute(&predicate.column)?;
        if let Some(v) = self
            .stats
            .predicate_ssf_overrides
            .get(&predicate.canonical())
        {
            return Ok(*v);
        }
        if predicate.op == CmpOp::Eq {
            return Ok(1.0 / attr.distinct_count);
        }
        Ok(self.stats.default_ssf)
    }

    /// Having selectivity applies to the group count.
    pub fn lookup_having_ssf(&self, having: &HavingCondition) -> f64 {
        self.stats
            .predicate_ssf_overrides
            .get(&having.canonical())
            .copied()
            .unwrap_or(self.stats.default_ssf)
    }

    /// Relations carrying an attribute with this name.
    pub fn relations_with_attribute(&self, attribute: &str) -> Vec<&str> {
        self.relations
            .values()
            .filter(|r| r.attribute(attribute).is_some())
            .map(|r| r.name.as_str())
            .collect()
    }
}

pub(crate) fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::predicate::Literal;

    const TWO: &str = r#"{
        "relations": [
            {"name": "R", "cardinality": 100, "attributes": [
                {"name": "a", "distinct": 100, "key": true},
                {"name": "b", "distinct": 10}
            ]},
            {"name": "S", "cardinality": 50, "attributes": [{"name": "c", "distinct": 25}]}
        ],
        "fk_edges": [{"left": "r.a", "right": "s.c"}],
        "stats": {"default_ssf": 0.1, "overrides": {"R.b  >  3": 0.3}}
    }"#;

    #[test]
    fn missing_jsf_uses_max_distinct() {
        let cat = load_catalog(TWO, None).unwrap();
        assert_eq!(cat.schema_graph().edges.len(), 1);
        assert!((cat.schema_graph().edges[0].jsf - 0.01).abs() < 1e-15);
    }

    #[test]
    fn single_relation_without_edges() {
        let src = r#"{"relations": [{"name": "t", "cardinality": 5, "attributes": [{"name": "x", "distinct": 5}]}]}"#;
        let cat = load_catalog(src, None).unwrap();
        assert!(cat.schema_graph().edges.is_empty());
        assert_eq!(cat.schema_graph().nodes.len(), 1);
    }

    #[test]
    fn edge_on_missing_attribute_is_rejected() {
        let src = TWO.replace("\"s.c\"", "\"s.zz\"");
        assert!(matches!(
            load_catalog(&src, None),
            Err(Error::UnknownAttribute(_))
        ));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let src = r#"{"relations": [], "bogus": 1}"#;
        match load_catalog(src, None) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 1),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn ssf_out_of_range_names_the_invariant() {
        let src = TWO.replace("0.3", "1.5");
        let err = load_catalog(&src, None).unwrap_err().to_string();
        assert!(err.contains("outside (0, 1]"), "{err}");
    }

    #[test]
    fn distinct_above_cardinality_is_rejected() {
        let src = TWO.replace("\"distinct\": 25", "\"distinct\": 80");
        assert!(matches!(
            load_catalog(&src, None),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn ssf_lookup_precedence() {
        let cat = load_catalog(TWO, None).unwrap();
        let eq = SelectCondition::new(
            ColumnRef::new("r", "a"),
            CmpOp::Eq,
            Literal::Number("7".into()),
            1.0,
        );
        assert!((cat.lookup_ssf(&eq).unwrap() - 0.01).abs() < 1e-15);
        let over = SelectCondition::new(
            ColumnRef::new("r", "b"),
            CmpOp::Gt,
            Literal::Number("3".into()),
            1.0,
        );
        assert_eq!(cat.lookup_ssf(&over).unwrap(), 0.3);
        let range = SelectCondition::new(
            ColumnRef::new("s", "c"),
            CmpOp::Lt,
            Literal::Number("3".into()),
            1.0,
        );
        assert_eq!(cat.lookup_ssf(&range).unwrap(), 0.1);
        let bad = SelectCondition::new(
            ColumnRef::new("s", "nope"),
            CmpOp::Lt,
            Literal::Number("3".into()),
            1.0,
        );
        assert!(cat.lookup_ssf(&bad).is_err());
    }

    #[test]
    fn separate_stats_document_wins() {
        let cat = load_catalog(TWO, Some(r#"{"default_ssf": 0.25}"#)).unwrap();
        assert_eq!(cat.stats().default_ssf, 0.25);
        assert!(cat.stats().predicate_ssf_overrides.is_empty());
    }
}
