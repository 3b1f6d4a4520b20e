//! Conjunctive SQL subset: parsing, name resolution, normalization and
//! rendering back to canonical SQL.
//!
//! Supported: `SELECT` columns and aggregates, a `FROM` list of tables
//! (optionally aliased) or one derived table, a `WHERE` conjunction of
//! equi-joins and `column op literal` selections, `GROUP BY`, a single
//! `HAVING` aggregate predicate, `ORDER BY`, and one level of uncorrelated
//! `IN` / `FROM` subquery.

mod lexer;
mod parser;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::catalog::Catalog;
use crate::error::{Error, Result};
use crate::predicate::{
    Aggregate, ColumnRef, HavingCondition, JoinCondition, OrderKey, SelectCondition,
};
use parser::{RawCol, RawCond, RawFrom, RawItem, RawOperand, RawQuery};

/// Alias given to the derived relation produced by an `IN` subquery.
pub const IN_SUBQUERY_ALIAS: &str = "in_subquery";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Projection {
    Column(ColumnRef),
    Aggregate(Aggregate),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DerivedColumn {
    pub name: String,
    pub origin: ColumnRef,
    pub distinct_count: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum SubqueryLink {
    /// `FROM (select ...) alias`
    From,
    /// `outer IN (select col ...)`; the matching join sits in the outer
    /// query's join list.
    In { outer: ColumnRef },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Subquery {
    pub alias: String,
    pub link: SubqueryLink,
    pub query: Query,
    pub columns: Vec<DerivedColumn>,
}

/// A normalized conjunctive query. Joins and selects are deduplicated and
/// sorted by canonical text; an empty projection list means `*`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Query {
    pub tables: BTreeSet<String>,
    pub joins: Vec<JoinCondition>,
    pub selects: Vec<SelectCondition>,
    pub projections: Vec<Projection>,
    pub group_by: Vec<ColumnRef>,
    pub having: Option<HavingCondition>,
    pub order_by: Vec<OrderKey>,
    pub subquery: Option<Box<Subquery>>,
}

impl Query {
    /// Every relation name the query's operators range over, including a
    /// subquery alias.
    pub fn relation_names(&self) -> BTreeSet<String> {
        let mut out = self.tables.clone();
        if let Some(sub) = &self.subquery {
            out.insert(sub.alias.clone());
        }
        out
    }

    /// Joins whose endpoints are both base relations.
    pub fn base_joins(&self) -> Vec<JoinCondition> {
        self.joins
            .iter()
            .filter(|j| {
                self.tables.contains(&j.left.relation) && self.tables.contains(&j.right.relation)
            })
            .cloned()
            .collect()
    }

    pub fn op_count(&self) -> usize {
        self.joins.len() + self.selects.len()
    }
}

/// Deduplicated join conditions in canonical order.
pub fn extract_join_set(query: &Query) -> Vec<JoinCondition> {
    let mut by_text = BTreeMap::new();
    for j in &query.joins {
        by_text.entry(j.canonical()).or_insert_with(|| j.clone());
    }
    by_text.into_values().collect()
}

pub fn parse_query(sql_text: &str, catalog: &Catalog) -> Result<Query> {
    let raw = parser::parse(sql_text)?;
    resolve(&raw, catalog, None)
}

enum Source {
    Base(String),
    Derived(Vec<DerivedColumn>),
}

struct Entry {
    qualifiers: Vec<String>,
    name: String,
    source: Source,
}

struct Scope<'a> {
    catalog: &'a Catalog,
    entries: Vec<Entry>,
    outer: Option<&'a Scope<'a>>,
}

impl Scope<'_> {
    fn has_column(&self, e: &Entry, name: &str) -> bool {
        match &e.source {
            Source::Base(rel) => self
                .catalog
                .relation(rel)
                .map(|r| r.attribute(name).is_some())
                .unwrap_or(false),
            Source::Derived(cols) => cols.iter().any(|c| c.name == name),
        }
    }

    fn distinct(&self, e: &Entry, name: &str) -> f64 {
        match &e.source {
            Source::Base(rel) => self
                .catalog
                .relation(rel)
                .ok()
                .and_then(|r| r.attribute(name))
                .map(|a| a.distinct_count)
                .unwrap_or(1.0),
            Source::Derived(cols) => cols
                .iter()
                .find(|c| c.name == name)
                .map(|c| c.distinct_count)
                .unwrap_or(1.0),
        }
    }

    fn find(&self, raw: &RawCol) -> Result<&Entry> {
        match &raw.qualifier {
            Some(q) => {
                let entry = self.entries.iter().find(|e| e.qualifiers.contains(q));
                match entry {
                    Some(e) if self.has_column(e, &raw.name) => Ok(e),
                    Some(e) => Err(Error::UnknownAttribute(format!("{}.{}", e.name, raw.name))),
                    None => {
                        if self
                            .outer
                            .is_some_and(|o| o.entries.iter().any(|e| e.qualifiers.contains(q)))
                        {
                            Err(Error::Unsupported(format!(
                                "correlated reference `{q}.{}`",
                                raw.name
                            )))
                        } else {
                            Err(Error::UnknownRelation(q.clone()))
                        }
                    }
                }
            }
            None => {
                let hits: Vec<&Entry> = self
                    .entries
                    .iter()
                    .filter(|e| self.has_column(e, &raw.name))
                    .collect();
                match hits.as_slice() {
                    [one] => Ok(one),
                    [] => {
                        if self
                            .outer
                            .is_some_and(|o| o.entries.iter().any(|e| o.has_column(e, &raw.name)))
                        {
                            Err(Error::Unsupported(format!(
                                "correlated reference `{}`",
                                raw.name
                            )))
                        } else {
                            Err(Error::UnknownAttribute(raw.name.clone()))
                        }
                    }
                    many => Err(Error::AmbiguousAttribute {
                        name: raw.name.clone(),
                        candidates: many
                            .iter()
                            .map(|e| e.name.as_str())
                            .collect::<Vec<_>>()
                            .join(", "),
                    }),
                }
            }
        }
    }

    /// Resolves a column to its canonical reference and distinct count.
    fn resolve(&self, raw: &RawCol) -> Result<(ColumnRef, f64)> {
        let e = self.find(raw)?;
        Ok((
            ColumnRef::new(&e.name, &raw.name),
            self.distinct(e, &raw.name),
        ))
    }

    /// The base column a derived column stems from, for selectivity lookup.
    fn origin(&self, col: &ColumnRef) -> ColumnRef {
        for e in &self.entries {
            if let Source::Derived(cols) = &e.source {
                if e.name == col.relation {
                    if let Some(c) = cols.iter().find(|c| c.name == col.attribute) {
                        return c.origin.clone();
                    }
                }
            }
        }
        col.clone()
    }
}

fn resolve(raw: &RawQuery, catalog: &Catalog, outer: Option<&Scope<'_>>) -> Result<Query> {
    let mut scope = Scope {
        catalog,
        entries: Vec::new(),
        outer,
    };
    let mut tables = BTreeSet::new();
    let mut subquery: Option<Subquery> = None;

    for item in &raw.from {
        match item {
            RawFrom::Table { name, alias } => {
                catalog.relation(name)?;
                if !tables.insert(name.clone()) {
                    return Err(Error::Unsupported(format!(
                        "relation `{name}` listed twice (self-join)"
                    )));
                }
                let mut qualifiers = vec![name.clone()];
                qualifiers.extend(alias.iter().cloned());
                scope.entries.push(Entry {
                    qualifiers,
                    name: name.clone(),
                    source: Source::Base(name.clone()),
                });
            }
            RawFrom::Sub { query, alias } => {
                if outer.is_some() {
                    return Err(Error::Unsupported(
                        "subquery nesting deeper than two levels".into(),
                    ));
                }
                if subquery.is_some() {
                    return Err(Error::Unsupported("more than one subquery".into()));
                }
                if catalog.relation(alias).is_ok() {
                    return Err(Error::validation(format!(
                        "subquery alias `{alias}` shadows a relation"
                    )));
                }
                let inner = resolve(query, catalog, Some(&scope))?;
                let columns = derived_columns(&inner, catalog)?;
                scope.entries.push(Entry {
                    qualifiers: vec![alias.clone()],
                    name: alias.clone(),
                    source: Source::Derived(columns.clone()),
                });
                subquery = Some(Subquery {
                    alias: alias.clone(),
                    link: SubqueryLink::From,
                    query: inner,
                    columns,
                });
            }
        }
    }

    let mut joins: BTreeMap<String, JoinCondition> = BTreeMap::new();
    let mut selects: BTreeMap<String, SelectCondition> = BTreeMap::new();

    for cond in &raw.conds {
        match cond {
            RawCond::Cmp(RawOperand::Col(a), op, RawOperand::Col(b)) => {
                let (ca, da) = scope.resolve(a)?;
                let (cb, db) = scope.resolve(b)?;
                if *op != crate::predicate::CmpOp::Eq {
                    return Err(Error::Unsupported(format!("theta join `{ca} {op} {cb}`")));
                }
                if ca.relation == cb.relation {
                    return Err(Error::Unsupported(format!(
                        "same-relation comparison `{ca} = {cb}`"
                    )));
                }
                let both_base = tables.contains(&ca.relation) && tables.contains(&cb.relation);
                let jsf = if both_base {
                    catalog.jsf(&ca, &cb)?
                } else {
                    1.0 / da.max(db)
                };
                let j = JoinCondition::new(ca, cb, jsf);
                joins.entry(j.canonical()).or_insert(j);
            }
            RawCond::Cmp(RawOperand::Col(c), op, RawOperand::Lit(l)) => {
                let s = make_select(&scope, c, *op, l.clone())?;
                selects.entry(s.canonical()).or_insert(s);
            }
            RawCond::Cmp(RawOperand::Lit(l), op, RawOperand::Col(c)) => {
                let s = make_select(&scope, c, op.flipped(), l.clone())?;
                selects.entry(s.canonical()).or_insert(s);
            }
            RawCond::Cmp(RawOperand::Lit(a), op, RawOperand::Lit(b)) => {
                return Err(Error::Unsupported(format!(
                    "constant comparison `{a} {op} {b}`"
                )));
            }
            RawCond::In(col, sub) => {
                if outer.is_some() {
                    return Err(Error::Unsupported(
                        "subquery nesting deeper than two levels".into(),
                    ));
                }
                if subquery.is_some() {
                    return Err(Error::Unsupported("more than one subquery".into()));
                }
                let (outer_col, d_outer) = scope.resolve(col)?;
                let inner = resolve(sub, catalog, Some(&scope))?;
                let columns = derived_columns(&inner, catalog)?;
                if columns.len() != 1 {
                    return Err(Error::validation(
                        "IN subquery must select exactly one column",
                    ));
                }
                let inner_col = ColumnRef::new(IN_SUBQUERY_ALIAS, &columns[0].name);
                let jsf = 1.0 / d_outer.max(columns[0].distinct_count);
                let j = JoinCondition::new(outer_col.clone(), inner_col, jsf);
                joins.entry(j.canonical()).or_insert(j);
                subquery = Some(Subquery {
                    alias: IN_SUBQUERY_ALIAS.to_string(),
                    link: SubqueryLink::In { outer: outer_col },
                    query: inner,
                    columns,
                });
            }
        }
    }

    let mut projections = Vec::new();
    for item in &raw.items {
        match item {
            RawItem::Star => {
                if raw.items.len() > 1 {
                    return Err(Error::Unsupported(
                        "`*` mixed with other select items".into(),
                    ));
                }
            }
            RawItem::Col(c) => projections.push(Projection::Column(scope.resolve(c)?.0)),
            RawItem::Agg(func, arg) => {
                let arg = arg
                    .as_ref()
                    .map(|a| scope.resolve(a))
                    .transpose()?
                    .map(|r| r.0);
                projections.push(Projection::Aggregate(Aggregate { func: *func, arg }));
            }
        }
    }

    let group_by = raw
        .group_by
        .iter()
        .map(|c| scope.resolve(c).map(|r| r.0))
        .collect::<Result<Vec<_>>>()?;

    let having = match &raw.having {
        None => None,
        Some(h) => {
            if group_by.is_empty() {
                return Err(Error::validation("HAVING requires GROUP BY"));
            }
            let arg = h
                .arg
                .as_ref()
                .map(|a| scope.resolve(a))
                .transpose()?
                .map(|r| r.0);
            let mut hc = HavingCondition {
                aggregate: Aggregate { func: h.func, arg },
                op: h.op,
                literal: h.literal.clone(),
                ssf: 1.0,
            };
            hc.ssf = catalog.lookup_having_ssf(&hc);
            Some(hc)
        }
    };

    let order_by = raw
        .order_by
        .iter()
        .map(|(c, desc)| {
            scope.resolve(c).map(|r| OrderKey {
                column: r.0,
                descending: *desc,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let query = Query {
        tables,
        joins: joins.into_values().collect(),
        selects: selects.into_values().collect(),
        projections,
        group_by,
        having,
        order_by,
        subquery: subquery.map(Box::new),
    };
    check_connected(&query)?;
    Ok(query)
}

fn make_select(
    scope: &Scope<'_>,
    col: &RawCol,
    op: crate::predicate::CmpOp,
    literal: crate::predicate::Literal,
) -> Result<SelectCondition> {
    let (c, _) = scope.resolve(col)?;
    let origin = scope.origin(&c);
    let probe = SelectCondition::new(origin, op, literal.clone(), 1.0);
    let ssf = scope.catalog.lookup_ssf(&probe)?;
    Ok(SelectCondition::new(c, op, literal, ssf))
}

fn derived_columns(inner: &Query, catalog: &Catalog) -> Result<Vec<DerivedColumn>> {
    if inner.projections.is_empty() {
        return Err(Error::Unsupported(
            "subquery must name its output columns".into(),
        ));
    }
    let mut out: Vec<DerivedColumn> = Vec::new();
    for p in &inner.projections {
        match p {
            Projection::Column(c) => {
                if out.iter().any(|d| d.name == c.attribute) {
                    return Err(Error::validation(format!(
                        "subquery outputs `{}` twice",
                        c.attribute
                    )));
                }
                let distinct = match &inner.subquery {
                    Some(sub) if sub.alias == c.relation => sub
                        .columns
                        .iter()
                        .find(|d| d.name == c.attribute)
                        .map(|d| d.distinct_count)
                        .unwrap_or(1.0),
                    _ => catalog.attribute(c)?.distinct_count,
                };
                out.push(DerivedColumn {
                    name: c.attribute.clone(),
                    origin: c.clone(),
                    distinct_count: distinct,
                });
            }
            Projection::Aggregate(a) => {
                return Err(Error::Unsupported(format!(
                    "aggregate `{a}` as a subquery output"
                )));
            }
        }
    }
    Ok(out)
}

/// Union-find connectivity over the query's relations.
pub(crate) fn join_graph_connected(relations: &BTreeSet<String>, joins: &[JoinCondition]) -> bool {
    let names: Vec<&String> = relations.iter().collect();
    let index = |n: &str| names.iter().position(|x| x.as_str() == n);
    let mut parent: Vec<usize> = (0..names.len()).collect();
    fn root(parent: &mut [usize], mut i: usize) -> usize {
        while parent[i] != i {
            parent[i] = parent[parent[i]];
            i = parent[i];
        }
        i
    }
    for j in joins {
        if let (Some(a), Some(b)) = (index(&j.left.relation), index(&j.right.relation)) {
            let (ra, rb) = (root(&mut parent, a), root(&mut parent, b));
            parent[ra] = rb;
        }
    }
    let roots: BTreeSet<usize> = (0..names.len()).map(|i| root(&mut parent, i)).collect();
    roots.len() <= 1
}

fn check_connected(q: &Query) -> Result<()> {
    let rels = q.relation_names();
    if join_graph_connected(&rels, &q.joins) {
        Ok(())
    } else {
        Err(Error::DisconnectedJoinGraph(format!(
            "relations {} are not linked by join conditions",
            rels.into_iter().collect::<Vec<_>>().join(", ")
        )))
    }
}

/// Canonical SQL text; `parse_query(render(q))` reproduces `q`.
pub fn render(q: &Query) -> String {
    let mut out = String::from("select ");
    if q.projections.is_empty() {
        out.push('*');
    } else {
        let items: Vec<String> = q
            .projections
            .iter()
            .map(|p| match p {
                Projection::Column(c) => c.to_string(),
                Projection::Aggregate(a) => a.to_string(),
            })
            .collect();
        out.push_str(&items.join(", "));
    }
    let mut from: Vec<String> = q.tables.iter().cloned().collect();
    let mut conds: Vec<String> = Vec::new();
    let in_link = q.subquery.as_ref().and_then(|s| match &s.link {
        SubqueryLink::In { outer } => Some((outer.clone(), s)),
        SubqueryLink::From => None,
    });
    if let Some(sub) = &q.subquery {
        if sub.link == SubqueryLink::From {
            from.push(format!("({}) {}", render(&sub.query), sub.alias));
        }
    }
    for j in &q.joins {
        let is_link = in_link.as_ref().is_some_and(|(_, s)| j.touches(&s.alias));
        if !is_link {
            conds.push(j.canonical());
        }
    }
    for s in &q.selects {
        conds.push(format!("{} {} {}", s.column, s.op, s.literal));
    }
    if let Some((outer, sub)) = &in_link {
        conds.push(format!("{outer} in ({})", render(&sub.query)));
    }
    let _ = write!(out, " from {}", from.join(", "));
    if !conds.is_empty() {
        let _ = write!(out, " where {}", conds.join(" and "));
    }
    if !q.group_by.is_empty() {
        let cols: Vec<String> = q.group_by.iter().map(|c| c.to_string()).collect();
        let _ = write!(out, " group by {}", cols.join(", "));
    }
    if let Some(h) = &q.having {
        let _ = write!(out, " having {} {} {}", h.aggregate, h.op, h.literal);
    }
    if !q.order_by.is_empty() {
        let keys: Vec<String> = q.order_by.iter().map(|k| k.to_string()).collect();
        let _ = write!(out, " order by {}", keys.join(", "));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::load_catalog;

    const SCHEMA: &str = r#"{
        "relations": [
            {"name": "r", "cardinality": 100, "attributes": [
                {"name": "ra", "distinct": 100, "key": true}, {"name": "rb", "distinct": 10}]},
            {"name": "s", "cardinality": 50, "attributes": [
                {"name": "sa", "distinct": 50}, {"name": "sb", "distinct": 5}, {"name": "shared", "distinct": 5}]},
            {"name": "t", "cardinality": 20, "attributes": [
                {"name": "ta", "distinct": 20}, {"name": "shared", "distinct": 2}]}
        ],
        "fk_edges": [{"left": "r.ra", "right": "s.sa", "jsf": 0.02}, {"left": "s.sb", "right": "t.ta"}]
    }"#;

    fn cat() -> Catalog {
        load_catalog(SCHEMA, None).unwrap()
    }

    #[test]
    fn splits_joins_and_selects() {
        let q = parse_query(
            "select rb from r, s where ra = sa and rb > 3 and 7 = sb",
            &cat(),
        )
        .unwrap();
        assert_eq!(q.joins.len(), 1);
        assert_eq!(q.joins[0].jsf, 0.02);
        assert_eq!(q.selects.len(), 2);
        assert_eq!(q.selects[0].canonical(), "r.rb > 3");
        assert_eq!(q.selects[1].canonical(), "s.sb = 7");
        assert_eq!(q.selects[1].ssf, 0.2);
    }

    #[test]
    fn minimal_query() {
        let q = parse_query("select ra from r", &cat()).unwrap();
        assert!(q.joins.is_empty() && q.selects.is_empty());
    }

    #[test]
    fn duplicate_join_is_deduplicated() {
        let q = parse_query(
            "select ra from r, s where r.ra = s.sa and s.sa = r.ra",
            &cat(),
        )
        .unwrap();
        assert_eq!(extract_join_set(&q).len(), 1);
    }

    #[test]
    fn resolution_errors() {
        let c = cat();
        assert!(matches!(
            parse_query("select shared from s, t where sb = ta", &c),
            Err(Error::AmbiguousAttribute { .. })
        ));
        assert!(matches!(
            parse_query("select zz from r", &c),
            Err(Error::UnknownAttribute(_))
        ));
        assert!(matches!(
            parse_query("select ra from nope", &c),
            Err(Error::UnknownRelation(_))
        ));
        assert!(matches!(
            parse_query("select ra from r, t", &c),
            Err(Error::DisconnectedJoinGraph(_))
        ));
        assert!(matches!(
            parse_query("select ra from r where ra < rb", &c),
            Err(Error::Unsupported(_))
        ));
        assert!(matches!(
            parse_query("select ra from r having sum(rb) > 1", &c),
            Err(Error::Validation(_))
        ));
        assert!(matches!(
            parse_query(
                "select ra from r where ra in (select sa from s where sb = rb)",
                &c
            ),
            Err(Error::Unsupported(_))
        ));
    }

    #[test]
    fn syntax_error_has_position() {
        match parse_query("select ra\nfrom r where ra >", &cat()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn in_subquery_becomes_link_join() {
        let q = parse_query(
            "select rb from r where ra in (select sa from s where sb = 1)",
            &cat(),
        )
        .unwrap();
        assert_eq!(q.joins.len(), 1);
        assert!(q.joins[0].touches(IN_SUBQUERY_ALIAS));
        assert!(q.base_joins().is_empty());
        let sub = q.subquery.as_ref().unwrap();
        assert_eq!(sub.query.selects.len(), 1);
    }

    #[test]
    fn render_round_trips() {
        let c = cat();
        for sql in [
            "select rb, sum(sa), count(*) from r, s where ra = sa and rb >= 3 group by rb having sum(sa) > 10 order by rb desc",
            "select ra from r where ra in (select sa from s where sb <> 'x''y')",
            "select d.sa, ta from (select sa, sb from s where sb < date '2001-01-01') d, t where d.sb = ta",
            "select * from r",
        ] {
            let q = parse_query(sql, &c).unwrap();
            let again = parse_query(&render(&q), &c).unwrap();
            assert_eq!(q, again, "{}", render(&q));
        }
    }
}
