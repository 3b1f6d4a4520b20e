//! End-to-end optimization of one query in either mode.

use std::time::Instant;

use log::info;
use serde::{Deserialize, Serialize};

use crate::catalog::Catalog;
use crate::costplan::{best_plan, Plan};
use crate::enumerate::{enumerate, factorial, Space, SpaceOp};
use crate::error::{Error, Result};
use crate::expr::{LogicalExpr, WrapOp};
use crate::joindag::{build_incremental, HistoryDag};
use crate::memo::{Dag, EqId, OpKind};
use crate::naive::{base_leaves, build_naive_into, DEFAULT_MAX_OPS};
use crate::sprinkle::{
    sprinkle_groupby_orderby, sprinkle_projects, sprinkle_selects, SprinkleOptions, SprinkleReport,
};
use crate::sqlfront::Query;

pub const DEFAULT_MAX_JOINS: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Naive,
    Joindag,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Naive => "naive",
            Mode::Joindag => "joindag",
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "naive" => Ok(Mode::Naive),
            "joindag" => Ok(Mode::Joindag),
            other => Err(Error::validation(format!("unknown mode `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct OptimizeOptions {
    /// Joins plus selects per query block in naive mode.
    pub max_ops: usize,
    /// Joins per query block in join-DAG mode.
    pub max_joins: usize,
    pub sprinkle: SprinkleOptions,
}

impl Default for OptimizeOptions {
    fn default() -> Self {
        OptimizeOptions {
            max_ops: DEFAULT_MAX_OPS,
            max_joins: DEFAULT_MAX_JOINS,
            sprinkle: SprinkleOptions::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct QueryMetrics {
    pub mode: Mode,
    /// Eq-nodes reachable from the query root.
    pub eq_nodes: usize,
    pub op_nodes: usize,
    pub plans: u128,
    pub build_ms: f64,
    pub best_cost: f64,
    /// Naive mode: orderings of all joins and selects (`n!`).
    pub permutations: Option<u128>,
    /// Join-DAG mode: orderings of the joins alone (`j!`).
    pub join_combinations: Option<u128>,
    /// Join-DAG mode: plans and eq-nodes below the join root before sprinkling.
    pub join_plans: Option<u128>,
    pub join_eq_nodes: Option<usize>,
    #[serde(skip)]
    pub sprinkle: Option<SprinkleReport>,
}

#[derive(Clone, Debug)]
pub struct Optimized {
    pub dag: Dag,
    pub root: EqId,
    pub plan: Plan,
    pub metrics: QueryMetrics,
}

fn elapsed_ms(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

pub fn optimize_naive(
    query: &Query,
    catalog: &Catalog,
    query_id: &str,
    opts: &OptimizeOptions,
) -> Result<Optimized> {
    let t = Instant::now();
    let mut dag = Dag::new();
    let built = build_naive_into(&mut dag, query, catalog, opts.max_ops, query_id)?;
    let plan = best_plan(&dag, built.root)?;
    let build_ms = elapsed_ms(t);
    let counts = dag.count_reachable(built.root);
    info!(
        "{query_id} naive: {} eq-nodes, cost {}",
        counts.eq_total,
        plan.cost()
    );
    Ok(Optimized {
        metrics: QueryMetrics {
            mode: Mode::Naive,
            eq_nodes: counts.eq_total,
            op_nodes: counts.op_count,
            plans: counts.plans,
            build_ms,
            best_cost: plan.cost(),
            permutations: Some(built.permutations),
            join_combinations: None,
            join_plans: None,
            join_eq_nodes: None,
            sprinkle: None,
        },
        root: built.root,
        plan,
        dag,
    })
}

/// Base-table joins of every block, outer first.
pub fn all_base_joins(query: &Query) -> Vec<crate::predicate::JoinCondition> {
    let mut out = query.base_joins();
    if let Some(sub) = &query.subquery {
        out.extend(all_base_joins(&sub.query));
    }
    out
}

fn check_joins(query: &Query, max_joins: usize) -> Result<()> {
    if query.joins.len() > max_joins {
        return Err(Error::LimitExceeded {
            what: "joins per query (join DAG)",
            n: query.joins.len(),
            limit: max_joins,
        });
    }
    if let Some(sub) = &query.subquery {
        check_joins(&sub.query, max_joins)?;
    }
    Ok(())
}

struct BlockResult {
    root: EqId,
    join_root: EqId,
    sprinkle: SprinkleReport,
}

/// Optimizes one query block inside `dag`, whose history already holds the
/// block's base joins.
fn joindag_block(
    dag: &mut Dag,
    query: &Query,
    catalog: &Catalog,
    opts: &OptimizeOptions,
    scope: &mut Vec<(Query, EqId)>,
) -> Result<BlockResult> {
    let mut leaves = base_leaves(query, catalog)?;
    let join_root = if let Some(sub) = &query.subquery {
        let inner = joindag_block(dag, &sub.query, catalog, opts, scope)?;
        let (alias, _) = dag.apply(
            OpKind::Wrap(WrapOp::Alias(sub.alias.clone())),
            &[inner.root],
        )?;
        leaves.push(dag.eq(alias).expr.clone());
        let ops = query.joins.iter().cloned().map(SpaceOp::Join).collect();
        let out = enumerate(dag, &Space { leaves, ops }, 0)?;
        match out.roots[..] {
            [r] => r,
            _ => {
                return Err(Error::DisconnectedJoinGraph(format!(
                    "{} components",
                    out.roots.len()
                )))
            }
        }
    } else {
        let parts: Vec<&LogicalExpr> = leaves.iter().collect();
        let joins: Vec<_> = query.joins.iter().collect();
        let expr = LogicalExpr::block(&parts, &joins, &[]);
        match dag.lookup(&expr.signature()) {
            Some(r) => r,
            None if query.joins.is_empty() => dag.intern(expr)?,
            None => {
                return Err(Error::validation(format!(
                    "join set `{}` missing from the history",
                    expr.signature()
                )))
            }
        }
    };
    let sprinkle = sprinkle_selects(dag, join_root, &query.selects, opts.sprinkle)?;
    let placed = sprinkle_groupby_orderby(dag, sprinkle.root, query, catalog)?;
    scope.push((query.clone(), placed.root));
    let refs: Vec<(&Query, EqId)> = scope.iter().map(|(q, r)| (q, *r)).collect();
    let root = sprinkle_projects(dag, placed.root, &refs, catalog)?;
    scope.last_mut().expect("just pushed").1 = root;
    Ok(BlockResult {
        root,
        join_root,
        sprinkle,
    })
}

/// Grows `history` with the query's joins, then sprinkles the remaining
/// operators onto a copy of it.
pub fn optimize_joindag(
    query: &Query,
    catalog: &Catalog,
    history: &mut HistoryDag,
    query_id: &str,
    opts: &OptimizeOptions,
) -> Result<Optimized> {
    check_joins(query, opts.max_joins)?;
    let t = Instant::now();
    *history = build_incremental(history, &all_base_joins(query), catalog)?;
    let mut dag = history.dag.clone();
    let mut scope = Vec::new();
    let block = joindag_block(&mut dag, query, catalog, opts, &mut scope)?;
    dag.set_root(query_id, block.root)?;
    let plan = best_plan(&dag, block.root)?;
    let build_ms = elapsed_ms(t);
    let counts = dag.count_reachable(block.root);
    let join_counts = dag.count_reachable(block.join_root);
    info!(
        "{query_id} joindag: {} eq-nodes, cost {}",
        counts.eq_total,
        plan.cost()
    );
    Ok(Optimized {
        metrics: QueryMetrics {
            mode: Mode::Joindag,
            eq_nodes: counts.eq_total,
            op_nodes: counts.op_count,
            plans: counts.plans,
            build_ms,
            best_cost: plan.cost(),
            permutations: None,
            // every ordering of the joins is a valid sequence
            join_combinations: Some(factorial(query.joins.len())),
            join_plans: Some(join_counts.plans),
            join_eq_nodes: Some(join_counts.eq_total),
            sprinkle: Some(block.sprinkle),
        },
        root: block.root,
        plan,
        dag,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::load_catalog;
    use crate::sqlfront::parse_query;

    const SCHEMA: &str = r#"{
      "relations": [
        {"name": "a", "cardinality": 1000, "attributes": [{"name": "k", "distinct": 1000, "key": true}, {"name": "v", "distinct": 10}]},
        {"name": "b", "cardinality": 200, "attributes": [{"name": "k", "distinct": 200, "key": true}, {"name": "ak", "distinct": 200}, {"name": "w", "distinct": 4}]},
        {"name": "c", "cardinality": 50, "attributes": [{"name": "bk", "distinct": 50}, {"name": "z", "distinct": 5}]}
      ],
      "fk_edges": [
        {"left": "b.ak", "right": "a.k"},
        {"left": "c.bk", "right": "b.k"}
      ]
    }"#;

    #[test]
    fn both_modes_agree_on_cost() {
        let cat = load_catalog(SCHEMA, None).unwrap();
        let q = parse_query(
            "select a.v from a, b, c where b.ak = a.k and c.bk = b.k and a.v = 3 and c.z > 2",
            &cat,
        )
        .unwrap();
        let n = optimize_naive(&q, &cat, "q", &OptimizeOptions::default()).unwrap();
        let mut h = HistoryDag::empty(&cat);
        let j = optimize_joindag(&q, &cat, &mut h, "q", &OptimizeOptions::default()).unwrap();
        assert!((n.plan.cost() - j.plan.cost()).abs() <= 1e-9 * n.plan.cost());
        assert_eq!(n.metrics.permutations, Some(24));
        assert_eq!(j.metrics.join_combinations, Some(2));
        assert!(j.metrics.eq_nodes < n.metrics.eq_nodes);
        assert_eq!(h.version, 1);
    }

    #[test]
    fn nested_query_references_inner_root() {
        let cat = load_catalog(SCHEMA, None).unwrap();
        let q = parse_query(
            "select b.w from b where b.ak in (select a.k from a where a.v = 1)",
            &cat,
        )
        .unwrap();
        let mut h = HistoryDag::empty(&cat);
        let j = optimize_joindag(&q, &cat, &mut h, "q", &OptimizeOptions::default()).unwrap();
        assert!(j.plan.root.walk().iter().any(|n| n.kind == "alias"));
        let n = optimize_naive(&q, &cat, "q", &OptimizeOptions::default()).unwrap();
        assert!((n.plan.cost() - j.plan.cost()).abs() <= 1e-9 * n.plan.cost());
    }

    #[test]
    fn join_limit() {
        let cat = load_catalog(SCHEMA, None).unwrap();
        let q = parse_query(
            "select * from a, b, c where b.ak = a.k and c.bk = b.k",
            &cat,
        )
        .unwrap();
        let opts = OptimizeOptions {
            max_joins: 1,
            ..Default::default()
        };
        assert!(matches!(
            optimize_joindag(&q, &cat, &mut HistoryDag::empty(&cat), "q", &opts),
            Err(Error::LimitExceeded { .. })
        ));
    }
}
