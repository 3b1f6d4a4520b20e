//! Baseline optimizer: one DAG holding every ordering of a query's joins
//! and selects.

use log::debug;

use crate::catalog::Catalog;
use crate::enumerate::{enumerate, factorial, Space, SpaceOp};
use crate::error::{Error, Result};
use crate::expr::{LogicalExpr, WrapOp};
use crate::memo::{Dag, EqId, NodeCounts, OpKind};
use crate::sprinkle::apply_suffix;
use crate::sqlfront::Query;

pub const DEFAULT_MAX_OPS: usize = 8;

#[derive(Clone, Debug, PartialEq)]
pub struct NaiveBuild {
    pub root: EqId,
    /// `n!` orderings of the query's `n` joins and selects.
    pub permutations: u128,
    pub valid_sequences: u128,
    pub op_count: usize,
}

pub(crate) fn base_leaves(query: &Query, catalog: &Catalog) -> Result<Vec<LogicalExpr>> {
    query
        .tables
        .iter()
        .map(|t| Ok(LogicalExpr::base(t, catalog.relation(t)?.cardinality)))
        .collect()
}

fn check_limit(query: &Query, limit: usize) -> Result<()> {
    let n = query.op_count();
    if n > limit {
        return Err(Error::LimitExceeded {
            what: "operations per query (naive)",
            n,
            limit,
        });
    }
    Ok(())
}

/// Builds the naive DAG of `query` into `dag` and registers it under
/// `query_id`.
pub fn build_naive_into(
    dag: &mut Dag,
    query: &Query,
    catalog: &Catalog,
    limit: usize,
    query_id: &str,
) -> Result<NaiveBuild> {
    check_limit(query, limit)?;
    let nested = match &query.subquery {
        Some(sub) => {
            let inner = build_naive_into(
                dag,
                &sub.query,
                catalog,
                limit,
                &format!("{query_id}/{}", sub.alias),
            )?;
            let (alias, _) = dag.apply(
                OpKind::Wrap(WrapOp::Alias(sub.alias.clone())),
                &[inner.root],
            )?;
            Some(alias)
        }
        None => None,
    };
    let mut leaves = base_leaves(query, catalog)?;
    if let Some(a) = nested {
        leaves.push(dag.eq(a).expr.clone());
    }
    let mut ops: Vec<SpaceOp> = query.joins.iter().cloned().map(SpaceOp::Join).collect();
    ops.extend(query.selects.iter().cloned().map(SpaceOp::Select));
    let outcome = enumerate(dag, &Space { leaves, ops }, 0)?;
    let [core] = outcome.roots[..] else {
        return Err(Error::DisconnectedJoinGraph(format!(
            "{} components",
            outcome.roots.len()
        )));
    };
    let root = apply_suffix(dag, core, query, catalog)?;
    dag.set_root(query_id, root)?;
    let n = query.op_count();
    debug!(
        "naive {query_id}: {n} ops, {} valid sequences",
        outcome.valid_sequences
    );
    Ok(NaiveBuild {
        root,
        permutations: factorial(n),
        valid_sequences: outcome.valid_sequences,
        op_count: n,
    })
}

pub fn build_naive_dag(
    query: &Query,
    catalog: &Catalog,
    limit: usize,
) -> Result<(Dag, NaiveBuild)> {
    let mut dag = Dag::new();
    let b = build_naive_into(&mut dag, query, catalog, limit, "q")?;
    Ok((dag, b))
}

#[derive(Clone, Debug, PartialEq)]
pub struct WorkloadDelta {
    pub before: NodeCounts,
    pub after: NodeCounts,
}

/// Union of the naive DAGs of several queries, rebuilt on every addition.
#[derive(Clone, Debug)]
pub struct NaiveWorkload {
    queries: Vec<(String, Query)>,
    dag: Dag,
    limit: usize,
}

impl NaiveWorkload {
    pub fn new(limit: usize) -> Self {
        NaiveWorkload {
            queries: Vec::new(),
            dag: Dag::new(),
            limit,
        }
    }

    pub fn dag(&self) -> &Dag {
        &self.dag
    }

    pub fn add(
        &mut self,
        query_id: &str,
        query: Query,
        catalog: &Catalog,
    ) -> Result<WorkloadDelta> {
        let before = self.dag.count_nodes();
        let mut dag = Dag::new();
        for (id, q) in &self.queries {
            build_naive_into(&mut dag, q, catalog, self.limit, id)?;
        }
        build_naive_into(&mut dag, &query, catalog, self.limit, query_id)?;
        self.queries.push((query_id.to_string(), query));
        self.dag = dag;
        Ok(WorkloadDelta {
            before,
            after: self.dag.count_nodes(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::{Attribute, Relation};
    use crate::sqlfront::parse_query;

    fn catalog() -> Catalog {
        let rel = |n: &str, c: f64| Relation {
            name: n.into(),
            cardinality: c,
            attributes: vec![
                Attribute {
                    name: "k".into(),
                    distinct_count: c,
                    is_key: true,
                },
                Attribute {
                    name: "v".into(),
                    distinct_count: 10.0,
                    is_key: false,
                },
            ],
        };
        Catalog::from_parts(
            vec![rel("a", 100.0), rel("b", 50.0), rel("c", 20.0)],
            vec![],
            Default::default(),
        )
        .unwrap()
    }

    #[test]
    fn one_join_one_select() {
        let cat = catalog();
        let q = parse_query("select * from a, b where a.k = b.k and a.v = 3", &cat).unwrap();
        let (dag, b) = build_naive_dag(&q, &cat, 8).unwrap();
        assert_eq!(b.permutations, 2);
        assert_eq!(b.valid_sequences, 2);
        // a, b, σa, a⋈b, root
        assert_eq!(dag.count_reachable(b.root).eq_total, 5);
        assert_eq!(dag.plan_count(b.root), 2);
    }

    #[test]
    fn limit_is_enforced() {
        let cat = catalog();
        let q = parse_query(
            "select * from a, b, c where a.k = b.k and b.k = c.k and a.v = 1 and b.v = 2",
            &cat,
        )
        .unwrap();
        assert!(matches!(
            build_naive_dag(&q, &cat, 3),
            Err(Error::LimitExceeded { n: 4, limit: 3, .. })
        ));
        assert!(build_naive_dag(&q, &cat, 4).is_ok());
    }

    #[test]
    fn workload_grows() {
        let cat = catalog();
        let mut w = NaiveWorkload::new(8);
        let d1 = w
            .add(
                "q1",
                parse_query("select * from a, b where a.k = b.k", &cat).unwrap(),
                &cat,
            )
            .unwrap();
        assert_eq!(d1.after.eq_total, 3);
        let d2 = w
            .add(
                "q2",
                parse_query("select * from a, b, c where a.k = b.k and b.k = c.k", &cat).unwrap(),
                &cat,
            )
            .unwrap();
        assert_eq!(d2.before.eq_total, 3);
        assert!(d2.after.eq_total > 3);
        assert_eq!(w.dag().roots().len(), 2);
    }
}
