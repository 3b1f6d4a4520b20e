//! Operation-sequence enumeration shared by the naive and join-DAG builders.
//!
//! A state is the set of operations applied so far. The partial results
//! form a forest over the leaves: leaves connected by applied joins share a
//! tree, and each select sits in the tree of its relation. From any state,
//! a join whose endpoints lie in different trees merges them; a join whose
//! endpoints already share a tree (a cycle in the join graph) filters that
//! tree; a select filters its relation's tree. Exploring every state once
//! materializes exactly the union of all sequence plans.

use std::collections::{BTreeSet, HashMap};

use crate::error::{Error, Result};
use crate::expr::LogicalExpr;
use crate::memo::{Dag, EqId, OpKind};
use crate::predicate::{JoinCondition, SelectCondition};

pub const MAX_ENUMERATED_OPS: usize = 20;

#[derive(Clone, Debug)]
pub enum SpaceOp {
    Join(JoinCondition),
    Select(SelectCondition),
}

impl SpaceOp {
    fn relations(&self) -> Vec<&str> {
        match self {
            SpaceOp::Join(j) => vec![&j.left.relation, &j.right.relation],
            SpaceOp::Select(s) => vec![s.relation()],
        }
    }
}

#[derive(Clone, Debug)]
pub struct Space {
    pub leaves: Vec<LogicalExpr>,
    pub ops: Vec<SpaceOp>,
}

#[derive(Clone, Debug)]
pub struct Outcome {
    /// Eq-node of each final tree, ordered by signature.
    pub roots: Vec<EqId>,
    /// Number of complete valid operation sequences.
    pub valid_sequences: u128,
}

struct Resolved {
    /// Leaf indices each op touches.
    ends: Vec<Vec<usize>>,
}

fn resolve(space: &Space) -> Result<Resolved> {
    let mut owner: HashMap<String, usize> = HashMap::new();
    for (i, leaf) in space.leaves.iter().enumerate() {
        for rel in leaf.base_set() {
            if owner.insert(rel.clone(), i).is_some() {
                return Err(Error::validation(format!(
                    "relation `{rel}` appears in two leaves"
                )));
            }
        }
    }
    let mut ends = Vec::with_capacity(space.ops.len());
    for op in &space.ops {
        let mut idx = Vec::new();
        for rel in op.relations() {
            let i = *owner
                .get(rel)
                .ok_or_else(|| Error::UnknownRelation(rel.to_string()))?;
            idx.push(i);
        }
        ends.push(idx);
    }
    Ok(Resolved { ends })
}

struct Walker<'a> {
    space: &'a Space,
    ends: Vec<Vec<usize>>,
    focus: u64,
    /// (leaf mask, op mask) of a tree -> eq-node.
    trees: HashMap<(u64, u64), EqId>,
    counts: HashMap<u64, u128>,
}

impl Walker<'_> {
    /// Trees of a state as (leaf mask, op mask) pairs.
    fn forest(&self, mask: u64) -> Vec<(u64, u64)> {
        let n = self.space.leaves.len();
        let mut parent: Vec<usize> = (0..n).collect();
        fn find(p: &mut [usize], mut i: usize) -> usize {
            while p[i] != i {
                p[i] = p[p[i]];
                i = p[i];
            }
            i
        }
        for (k, ends) in self.ends.iter().enumerate() {
            if mask >> k & 1 == 1 && ends.len() == 2 {
                let (a, b) = (find(&mut parent, ends[0]), find(&mut parent, ends[1]));
                parent[a] = b;
            }
        }
        let mut trees: HashMap<usize, (u64, u64)> = HashMap::new();
        for i in 0..n {
            let r = find(&mut parent, i);
            trees.entry(r).or_default().0 |= 1 << i;
        }
        for (k, ends) in self.ends.iter().enumerate() {
            if mask >> k & 1 == 1 {
                let r = find(&mut parent, ends[0]);
                trees.get_mut(&r).expect("tree exists").1 |= 1 << k;
            }
        }
        let mut out: Vec<(u64, u64)> = trees.into_values().collect();
        out.sort_unstable();
        out
    }

    fn tree_expr(&self, leaves: u64, ops: u64) -> LogicalExpr {
        let parts: Vec<&LogicalExpr> = (0..self.space.leaves.len())
            .filter(|i| leaves >> i & 1 == 1)
            .map(|i| &self.space.leaves[i])
            .collect();
        let mut joins = Vec::new();
        let mut selects = Vec::new();
        for (k, op) in self.space.ops.iter().enumerate() {
            if ops >> k & 1 == 1 {
                match op {
                    SpaceOp::Join(j) => joins.push(j),
                    SpaceOp::Select(s) => selects.push(s),
                }
            }
        }
        LogicalExpr::block(&parts, &joins, &selects)
    }

    fn tree_id(&mut self, dag: &mut Dag, tree: (u64, u64)) -> Result<EqId> {
        if let Some(&id) = self.trees.get(&tree) {
            return Ok(id);
        }
        let id = dag.intern(self.tree_expr(tree.0, tree.1))?;
        self.trees.insert(tree, id);
        Ok(id)
    }

    fn visit(&mut self, dag: &mut Dag, mask: u64) -> Result<u128> {
        if let Some(&c) = self.counts.get(&mask) {
            return Ok(c);
        }
        let n_ops = self.space.ops.len();
        let full = if n_ops == 64 {
            u64::MAX
        } else {
            (1u64 << n_ops) - 1
        };
        if mask == full {
            self.counts.insert(mask, 1);
            return Ok(1);
        }
        let forest = self.forest(mask);
        let tree_of = |leaf: usize| {
            forest
                .iter()
                .copied()
                .find(|t| t.0 >> leaf & 1 == 1)
                .expect("leaf in forest")
        };
        let mut total: u128 = 0;
        for k in 0..n_ops {
            if mask >> k & 1 == 1 {
                continue;
            }
            let ends = &self.ends[k];
            let inputs: Vec<(u64, u64)> = {
                let mut v: Vec<(u64, u64)> = ends.iter().map(|&l| tree_of(l)).collect();
                v.dedup();
                v
            };
            let out_tree = (
                inputs.iter().fold(0, |m, t| m | t.0),
                inputs.iter().fold(1u64 << k, |m, t| m | t.1),
            );
            let in_focus = self.focus == 0 || out_tree.1 & self.focus != 0;
            if in_focus {
                let children: Vec<EqId> = inputs
                    .iter()
                    .map(|&t| self.tree_id(dag, t))
                    .collect::<Result<_>>()?;
                let kind = match (&self.space.ops[k], inputs.len()) {
                    (SpaceOp::Join(j), 2) => OpKind::Join(j.clone()),
                    (SpaceOp::Join(j), _) => OpKind::JoinFilter(j.clone()),
                    (SpaceOp::Select(s), _) => OpKind::Select(s.clone()),
                };
                let (parent, _) = dag.apply(kind, &children)?;
                self.trees.insert(out_tree, parent);
            }
            let sub = self.visit(dag, mask | 1 << k)?;
            total = total.saturating_add(sub);
        }
        self.counts.insert(mask, total);
        Ok(total)
    }
}

/// Materializes every valid sequence of `space.ops` into `dag`. With a
/// nonzero `focus` op mask, only trees containing a focused op are added;
/// the others are assumed present already.
pub fn enumerate(dag: &mut Dag, space: &Space, focus: u64) -> Result<Outcome> {
    if space.ops.len() > MAX_ENUMERATED_OPS || space.leaves.len() > 64 {
        return Err(Error::LimitExceeded {
            what: "enumerated operations",
            n: space.ops.len(),
            limit: MAX_ENUMERATED_OPS,
        });
    }
    let Resolved { ends } = resolve(space)?;
    let mut w = Walker {
        space,
        ends,
        focus,
        trees: HashMap::new(),
        counts: HashMap::new(),
    };
    for (i, leaf) in space.leaves.iter().enumerate() {
        let id = dag.intern(leaf.clone())?;
        w.trees.insert((1 << i, 0), id);
    }
    let valid_sequences = w.visit(dag, 0)?;
    let full = if space.ops.is_empty() {
        0
    } else {
        (1u64 << space.ops.len()) - 1
    };
    let mut roots = Vec::new();
    for tree in w.forest(full) {
        roots.push(w.tree_id(dag, tree)?);
    }
    let mut sorted: Vec<EqId> = roots
        .into_iter()
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    sorted.sort_by(|a, b| dag.eq(*a).signature.cmp(&dag.eq(*b).signature));
    Ok(Outcome {
        roots: sorted,
        valid_sequences,
    })
}

/// `n!` as an exact count (saturating).
pub fn factorial(n: usize) -> u128 {
    (1..=n as u128).fold(1u128, |acc, k| acc.saturating_mul(k))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::predicate::{CmpOp, ColumnRef, Literal};

    fn chain(n: usize) -> Space {
        let leaves = (0..n)
            .map(|i| LogicalExpr::base(&format!("r{i}"), 10.0 * (i + 1) as f64))
            .collect();
        let ops = (0..n - 1)
            .map(|i| {
                SpaceOp::Join(JoinCondition::new(
                    ColumnRef::new(format!("r{i}"), "b"),
                    ColumnRef::new(format!("r{}", i + 1), "a"),
                    0.1,
                ))
            })
            .collect();
        Space { leaves, ops }
    }

    #[test]
    fn chain_of_three_merges_both_orders() {
        let mut dag = Dag::new();
        let out = enumerate(&mut dag, &chain(3), 0).unwrap();
        assert_eq!(out.roots.len(), 1);
        assert_eq!(out.valid_sequences, 2);
        assert_eq!(dag.plan_count(out.roots[0]), 2);
        // 3 bases, 2 pairs, 1 root
        assert_eq!(dag.eq_nodes().len(), 6);
    }

    #[test]
    fn single_edge() {
        let mut dag = Dag::new();
        enumerate(&mut dag, &chain(2), 0).unwrap();
        let c = dag.count_nodes();
        assert_eq!((c.eq_total, c.op_count), (3, 1));
    }

    #[test]
    fn cycle_uses_filter_joins() {
        let mut space = chain(3);
        space.ops.push(SpaceOp::Join(JoinCondition::new(
            ColumnRef::new("r0", "z"),
            ColumnRef::new("r2", "z"),
            0.5,
        )));
        let mut dag = Dag::new();
        let out = enumerate(&mut dag, &space, 0).unwrap();
        assert_eq!(out.valid_sequences, 6);
        assert_eq!(out.roots.len(), 1);
        assert!(dag
            .op_nodes()
            .iter()
            .any(|o| matches!(o.kind, OpKind::JoinFilter(_))));
    }

    #[test]
    fn one_select_no_joins() {
        let space = Space {
            leaves: vec![LogicalExpr::base("t", 100.0)],
            ops: vec![SpaceOp::Select(SelectCondition::new(
                ColumnRef::new("t", "x"),
                CmpOp::Eq,
                Literal::Number("1".into()),
                0.1,
            ))],
        };
        let mut dag = Dag::new();
        let out = enumerate(&mut dag, &space, 0).unwrap();
        assert_eq!(out.valid_sequences, 1);
        let c = dag.count_nodes();
        assert_eq!((c.eq_total, c.op_count, c.plans), (2, 1, 1));
    }

    #[test]
    fn factorials() {
        assert_eq!(factorial(0), 1);
        assert_eq!(factorial(4), 24);
        assert_eq!(factorial(6), 720);
    }
}
