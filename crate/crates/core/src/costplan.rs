//! Size estimates, operator costs and best-plan extraction.
//!
//! Every operator's cost is its work term: `|A|·|B|` for a join, the input
//! size for any unary operator. A plan's cost is the sum over its
//! operators.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::memo::{Dag, EqId, OpId, OpKind};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SizeRule {
    Join { jsf: f64 },
    Select { ssf: f64 },
    GroupBy { distinct: f64 },
    Having { ssf: f64 },
    Project,
    OrderBy,
}

pub fn estimate_size(rule: SizeRule, inputs: &[f64]) -> f64 {
    match rule {
        SizeRule::Join { jsf } => jsf * inputs[0] * inputs[1],
        SizeRule::Select { ssf } | SizeRule::Having { ssf } => ssf * inputs[0],
        SizeRule::GroupBy { distinct } => distinct.min(inputs[0]),
        SizeRule::Project | SizeRule::OrderBy => inputs[0],
    }
}

pub fn op_cost(kind: &OpKind, inputs: &[f64]) -> f64 {
    match kind {
        OpKind::Join(_) => inputs[0] * inputs[1],
        OpKind::Wrap(crate::expr::WrapOp::Alias(_)) => 0.0,
        _ => inputs[0],
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Order {
    SelectAfterJoin,
    SelectBeforeJoin,
}

/// Local decision between filtering `A` before or after joining it with
/// `B`: `cost1 = |A||B| + jsf|A||B|`, `cost2 = |A| + ssf|A||B|`.
/// Ties go to pushing the select down.
pub fn choose_order(a: f64, b: f64, jsf: f64, ssf: f64) -> Order {
    let cost1 = a * b + jsf * a * b;
    let cost2 = a + (ssf * a) * b;
    if cost1 < cost2 {
        Order::SelectAfterJoin
    } else {
        Order::SelectBeforeJoin
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanNode {
    pub kind: String,
    pub predicate: Option<String>,
    pub est_size: f64,
    pub op_cost: f64,
    pub cum_cost: f64,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub children: Vec<PlanNode>,
    #[serde(skip)]
    pub eq: EqId,
    #[serde(skip)]
    pub op: Option<OpId>,
}

impl PlanNode {
    /// Pre-order walk.
    pub fn walk(&self) -> Vec<&PlanNode> {
        let mut out = vec![self];
        for c in &self.children {
            out.extend(c.walk());
        }
        out
    }

    pub fn count_kind(&self, kind: &str) -> usize {
        self.walk().iter().filter(|n| n.kind == kind).count()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Plan {
    pub root: PlanNode,
}

impl Plan {
    pub fn cost(&self) -> f64 {
        self.root.cum_cost
    }
}

/// Cheapest expansion of `root`; ties go to the smaller canonical op text.
pub fn best_plan(dag: &Dag, root: EqId) -> Result<Plan> {
    if root as usize >= dag.eq_nodes().len() {
        return Err(Error::UnreachableRoot(format!(
            "eq-node {root} does not exist"
        )));
    }
    let mut memo: HashMap<EqId, Option<(f64, Option<OpId>)>> = HashMap::new();
    if best_cost(dag, root, &mut memo).is_none() {
        return Err(Error::UnreachableRoot(format!(
            "eq-node `{}` has no derivation from base relations",
            dag.eq(root).signature
        )));
    }
    Ok(Plan {
        root: materialize(dag, root, &memo),
    })
}

fn best_cost(
    dag: &Dag,
    e: EqId,
    memo: &mut HashMap<EqId, Option<(f64, Option<OpId>)>>,
) -> Option<f64> {
    if let Some(v) = memo.get(&e) {
        return v.map(|x| x.0);
    }
    let node = dag.eq(e);
    let result = if node.child_ops.is_empty() {
        node.is_base().then_some((0.0, None))
    } else {
        let mut best: Option<(f64, Option<OpId>, String)> = None;
        for &o in &node.child_ops {
            let op = dag.op(o);
            let mut total = op.op_cost;
            let mut ok = true;
            for &c in &op.children {
                match best_cost(dag, c, memo) {
                    Some(v) => total += v,
                    None => ok = false,
                }
            }
            if !ok {
                continue;
            }
            let text = op.kind.canonical();
            let better = match &best {
                None => true,
                Some((bc, _, bt)) => total < *bc || (total == *bc && text < *bt),
            };
            if better {
                best = Some((total, Some(o), text));
            }
        }
        best.map(|(c, o, _)| (c, o))
    };
    memo.insert(e, result);
    result.map(|x| x.0)
}

fn materialize(dag: &Dag, e: EqId, memo: &HashMap<EqId, Option<(f64, Option<OpId>)>>) -> PlanNode {
    let node = dag.eq(e);
    let (cum, op) = memo[&e].expect("best plan computed");
    match op {
        None => PlanNode {
            kind: "base".into(),
            predicate: Some(node.signature.clone()),
            est_size: node.est_size,
            op_cost: 0.0,
            cum_cost: 0.0,
            children: vec![],
            eq: e,
            op: None,
        },
        Some(o) => {
            let op = dag.op(o);
            PlanNode {
                kind: op.kind.name().into(),
                predicate: Some(op.kind.predicate()),
                est_size: node.est_size,
                op_cost: op.op_cost,
                cum_cost: cum,
                children: op
                    .children
                    .iter()
                    .map(|&c| materialize(dag, c, memo))
                    .collect(),
                eq: e,
                op: Some(o),
            }
        }
    }
}

/// Cost of every full expansion below `root`, for oracles on small DAGs.
pub fn expansion_costs(dag: &Dag, root: EqId, limit: usize) -> Option<Vec<f64>> {
    fn rec(dag: &Dag, e: EqId, limit: usize) -> Option<Vec<f64>> {
        let node = dag.eq(e);
        if node.child_ops.is_empty() {
            return Some(vec![0.0]);
        }
        let mut out = Vec::new();
        for &o in &node.child_ops {
            let op = dag.op(o);
            let mut acc = vec![op.op_cost];
            for &c in &op.children {
                let sub = rec(dag, c, limit)?;
                let mut next = Vec::with_capacity(acc.len() * sub.len());
                for a in &acc {
                    for s in &sub {
                        next.push(a + s);
                    }
                }
                if next.len() > limit {
                    return None;
                }
                acc = next;
            }
            out.extend(acc);
            if out.len() > limit {
                return None;
            }
        }
        Some(out)
    }
    rec(dag, root, limit)
}
