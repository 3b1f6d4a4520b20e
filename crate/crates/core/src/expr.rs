//! Logical expressions: the content of an eq-node.
//!
//! A [`LogicalExpr::Block`] is a select-join block: a set of leaves, the
//! join conditions applied among them and the selections applied on top.
//! Because the block is a set, every join order and every select placement
//! that yields the same content produces the same signature. Non-reorderable
//! operators (grouping, having, ordering, projection, renaming) wrap an input
//! expression; a wrapped expression that is joined further becomes a
//! [`Leaf::Nested`] of the enclosing block.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::costplan;
use crate::predicate::{
    Aggregate, ColumnRef, HavingCondition, JoinCondition, OrderKey, SelectCondition,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Leaf {
    Base { relation: String, cardinality: f64 },
    Nested(Box<LogicalExpr>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum WrapOp {
    GroupBy {
        attrs: Vec<ColumnRef>,
        aggregates: Vec<Aggregate>,
        /// Product of the grouping attributes' distinct counts.
        distinct: f64,
    },
    Having(HavingCondition),
    OrderBy(Vec<OrderKey>),
    Project(Vec<String>),
    /// Renames a subquery result so the outer query can join it.
    Alias(String),
}

impl WrapOp {
    pub fn name(&self) -> &'static str {
        match self {
            WrapOp::GroupBy { .. } => "groupby",
            WrapOp::Having(_) => "having",
            WrapOp::OrderBy(_) => "orderby",
            WrapOp::Project(_) => "project",
            WrapOp::Alias(_) => "alias",
        }
    }

    pub fn predicate(&self) -> String {
        match self {
            WrapOp::GroupBy {
                attrs, aggregates, ..
            } => {
                let mut parts: Vec<String> = attrs.iter().map(|a| a.to_string()).collect();
                if !aggregates.is_empty() {
                    let aggs: Vec<String> = aggregates.iter().map(|a| a.to_string()).collect();
                    parts.push(format!("[{}]", aggs.join(", ")));
                }
                parts.join(", ")
            }
            WrapOp::Having(h) => h.canonical(),
            WrapOp::OrderBy(keys) => keys
                .iter()
                .map(|k| k.to_string())
                .collect::<Vec<_>>()
                .join(", "),
            WrapOp::Project(cols) => cols.join(", "),
            WrapOp::Alias(a) => a.clone(),
        }
    }

    pub fn canonical(&self) -> String {
        format!("{}({})", self.name(), self.predicate())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum LogicalExpr {
    Block {
        /// Keyed by leaf signature.
        leaves: BTreeMap<String, Leaf>,
        /// Keyed by canonical text.
        joins: BTreeMap<String, JoinCondition>,
        selects: BTreeMap<String, SelectCondition>,
    },
    Wrap {
        op: WrapOp,
        input: Box<LogicalExpr>,
    },
}

impl Leaf {
    pub fn signature(&self) -> String {
        match self {
            Leaf::Base { relation, .. } => relation.clone(),
            Leaf::Nested(e) => e.signature(),
        }
    }

    fn size(&self) -> f64 {
        match self {
            Leaf::Base { cardinality, .. } => *cardinality,
            Leaf::Nested(e) => e.est_size(),
        }
    }

    fn covers(&self) -> BTreeSet<String> {
        match self {
            Leaf::Base { relation, .. } => BTreeSet::from([relation.clone()]),
            Leaf::Nested(e) => e.base_set(),
        }
    }

    fn weight(&self) -> u32 {
        match self {
            Leaf::Base { .. } => 1,
            Leaf::Nested(e) => e.weight(),
        }
    }
}

impl LogicalExpr {
    pub fn base(relation: &str, cardinality: f64) -> Self {
        let leaf = Leaf::Base {
            relation: relation.to_string(),
            cardinality,
        };
        LogicalExpr::Block {
            leaves: BTreeMap::from([(relation.to_string(), leaf)]),
            joins: BTreeMap::new(),
            selects: BTreeMap::new(),
        }
    }

    pub fn is_base(&self) -> bool {
        matches!(self, LogicalExpr::Block { leaves, joins, selects }
            if leaves.len() == 1 && joins.is_empty() && selects.is_empty()
               && matches!(leaves.values().next(), Some(Leaf::Base { .. })))
    }

    /// Canonical key. A base relation's signature is its name.
    pub fn signature(&self) -> String {
        match self {
            LogicalExpr::Block {
                leaves,
                joins,
                selects,
            } => {
                if self.is_base() {
                    return leaves.keys().next().cloned().unwrap_or_default();
                }
                let mut s = String::from("{");
                s.push_str(&leaves.keys().cloned().collect::<Vec<_>>().join(", "));
                if !joins.is_empty() {
                    let _ = write!(
                        s,
                        " | {}",
                        joins.keys().cloned().collect::<Vec<_>>().join(" and ")
                    );
                }
                if !selects.is_empty() {
                    let _ = write!(
                        s,
                        " | {}",
                        selects.keys().cloned().collect::<Vec<_>>().join(" and ")
                    );
                }
                s.push('}');
                s
            }
            LogicalExpr::Wrap { op, input } => format!("{}[{}]", op.canonical(), input.signature()),
        }
    }

    /// Estimated result size, evaluated in canonical order so equal
    /// signatures always give bit-identical sizes.
    pub fn est_size(&self) -> f64 {
        match self {
            LogicalExpr::Block {
                leaves,
                joins,
                selects,
            } => {
                let mut size = 1.0;
                for leaf in leaves.values() {
                    size *= leaf.size();
                }
                for j in joins.values() {
                    size *= j.jsf;
                }
                for s in selects.values() {
                    size *= s.ssf;
                }
                size
            }
            LogicalExpr::Wrap { op, input } => {
                let a = input.est_size();
                match op {
                    WrapOp::GroupBy { distinct, .. } => costplan::estimate_size(
                        costplan::SizeRule::GroupBy {
                            distinct: *distinct,
                        },
                        &[a],
                    ),
                    WrapOp::Having(h) => {
                        costplan::estimate_size(costplan::SizeRule::Having { ssf: h.ssf }, &[a])
                    }
                    WrapOp::OrderBy(_) => {
                        costplan::estimate_size(costplan::SizeRule::OrderBy, &[a])
                    }
                    WrapOp::Project(_) | WrapOp::Alias(_) => {
                        costplan::estimate_size(costplan::SizeRule::Project, &[a])
                    }
                }
            }
        }
    }

    /// Relation names (or subquery aliases) the expression ranges over.
    pub fn base_set(&self) -> BTreeSet<String> {
        match self {
            LogicalExpr::Block { leaves, .. } => leaves.values().flat_map(|l| l.covers()).collect(),
            LogicalExpr::Wrap {
                op: WrapOp::Alias(a),
                ..
            } => BTreeSet::from([a.clone()]),
            LogicalExpr::Wrap { input, .. } => input.base_set(),
        }
    }

    /// Strictly increases along every operator, which makes the memo
    /// acyclic by construction.
    pub fn weight(&self) -> u32 {
        match self {
            LogicalExpr::Block {
                leaves,
                joins,
                selects,
            } => {
                leaves.values().map(Leaf::weight).sum::<u32>()
                    + joins.len() as u32
                    + selects.len() as u32
            }
            LogicalExpr::Wrap { input, .. } => input.weight() + 1,
        }
    }

    pub fn joins(&self) -> Vec<&JoinCondition> {
        match self {
            LogicalExpr::Block { leaves, joins, .. } => {
                let mut out: Vec<&JoinCondition> = joins.values().collect();
                for l in leaves.values() {
                    if let Leaf::Nested(e) = l {
                        out.extend(e.joins());
                    }
                }
                out
            }
            LogicalExpr::Wrap { input, .. } => input.joins(),
        }
    }

    /// Does the expression apply this join anywhere inside it?
    pub fn contains_join(&self, canonical: &str) -> bool {
        self.joins().iter().any(|j| j.canonical() == canonical)
    }

    fn into_block(
        self,
    ) -> (
        BTreeMap<String, Leaf>,
        BTreeMap<String, JoinCondition>,
        BTreeMap<String, SelectCondition>,
    ) {
        match self {
            LogicalExpr::Block {
                leaves,
                joins,
                selects,
            } => (leaves, joins, selects),
            wrap @ LogicalExpr::Wrap { .. } => {
                let leaf = Leaf::Nested(Box::new(wrap));
                (
                    BTreeMap::from([(leaf.signature(), leaf)]),
                    BTreeMap::new(),
                    BTreeMap::new(),
                )
            }
        }
    }

    fn normalized(self) -> Self {
        if let LogicalExpr::Block {
            leaves,
            joins,
            selects,
        } = &self
        {
            if leaves.len() == 1 && joins.is_empty() && selects.is_empty() {
                if let Some(Leaf::Nested(inner)) = leaves.values().next() {
                    return (**inner).clone();
                }
            }
        }
        self
    }

    pub fn with_join(a: &LogicalExpr, b: &LogicalExpr, j: &JoinCondition) -> Self {
        let (mut leaves, mut joins, mut selects) = a.clone().into_block();
        let (l2, j2, s2) = b.clone().into_block();
        leaves.extend(l2);
        joins.extend(j2);
        selects.extend(s2);
        joins.insert(j.canonical(), j.clone());
        LogicalExpr::Block {
            leaves,
            joins,
            selects,
        }
    }

    pub fn with_filter_join(a: &LogicalExpr, j: &JoinCondition) -> Self {
        let (leaves, mut joins, selects) = a.clone().into_block();
        joins.insert(j.canonical(), j.clone());
        LogicalExpr::Block {
            leaves,
            joins,
            selects,
        }
    }

    pub fn with_select(a: &LogicalExpr, s: &SelectCondition) -> Self {
        let (leaves, joins, mut selects) = a.clone().into_block();
        selects.insert(s.canonical(), s.clone());
        LogicalExpr::Block {
            leaves,
            joins,
            selects,
        }
    }

    pub fn wrap(op: WrapOp, a: &LogicalExpr) -> Self {
        LogicalExpr::Wrap {
            op,
            input: Box::new(a.clone()),
        }
    }

    /// Block made of the given parts; a lone nested leaf collapses to its
    /// inner expression.
    pub fn block(
        parts: &[&LogicalExpr],
        joins: &[&JoinCondition],
        selects: &[&SelectCondition],
    ) -> Self {
        let mut leaves = BTreeMap::new();
        let mut js = BTreeMap::new();
        let mut ss = BTreeMap::new();
        for p in parts {
            let (l, j, s) = (*p).clone().into_block();
            leaves.extend(l);
            js.extend(j);
            ss.extend(s);
        }
        for j in joins {
            js.insert(j.canonical(), (*j).clone());
        }
        for s in selects {
            ss.insert(s.canonical(), (*s).clone());
        }
        LogicalExpr::Block {
            leaves,
            joins: js,
            selects: ss,
        }
        .normalized()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::predicate::{CmpOp, Literal};

    fn j(a: &str, b: &str) -> JoinCondition {
        JoinCondition::new(
            ColumnRef::parse(a).unwrap(),
            ColumnRef::parse(b).unwrap(),
            0.1,
        )
    }

    #[test]
    fn join_order_does_not_change_signature() {
        let (a, b, c, d) = (
            LogicalExpr::base("a", 10.0),
            LogicalExpr::base("b", 20.0),
            LogicalExpr::base("c", 30.0),
            LogicalExpr::base("d", 40.0),
        );
        let (jab, jbc, jcd) = (j("a.x", "b.x"), j("b.y", "c.y"), j("c.z", "d.z"));
        let left = LogicalExpr::with_join(
            &LogicalExpr::with_join(&LogicalExpr::with_join(&a, &b, &jab), &c, &jbc),
            &d,
            &jcd,
        );
        let right = LogicalExpr::with_join(
            &a,
            &LogicalExpr::with_join(&b, &LogicalExpr::with_join(&c, &d, &jcd), &jbc),
            &jab,
        );
        assert_eq!(left.signature(), right.signature());
        assert_eq!(left.est_size().to_bits(), right.est_size().to_bits());
        assert_eq!(left.weight(), 7);
    }

    #[test]
    fn base_signature_is_relation_name() {
        let a = LogicalExpr::base("employee", 5.0);
        assert!(a.is_base());
        assert_eq!(a.signature(), "employee");
    }

    #[test]
    fn wrapped_input_becomes_nested_leaf() {
        let a = LogicalExpr::base("a", 100.0);
        let g = LogicalExpr::wrap(
            WrapOp::GroupBy {
                attrs: vec![ColumnRef::new("a", "x")],
                aggregates: vec![],
                distinct: 5.0,
            },
            &a,
        );
        assert_eq!(g.est_size(), 5.0);
        let b = LogicalExpr::base("b", 10.0);
        let joined = LogicalExpr::with_join(&g, &b, &j("a.x", "b.x"));
        assert_eq!(
            joined.base_set(),
            BTreeSet::from(["a".to_string(), "b".to_string()])
        );
        assert!((joined.est_size() - 5.0).abs() < 1e-12);
        assert_eq!(LogicalExpr::block(&[&g], &[], &[]), g);
    }

    #[test]
    fn select_multiplies_size() {
        let a = LogicalExpr::base("a", 100.0);
        let s = SelectCondition::new(
            ColumnRef::new("a", "x"),
            CmpOp::Gt,
            Literal::Number("1".into()),
            0.25,
        );
        let e = LogicalExpr::with_select(&a, &s);
        assert_eq!(e.est_size(), 25.0);
        assert_eq!(e.signature(), "{a | a.x > 1}");
    }
}
