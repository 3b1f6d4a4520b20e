//! The AND/OR DAG: deduplicated eq-nodes (OR) and op-nodes (AND).

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::costplan;
use crate::error::{Error, Result};
use crate::expr::{LogicalExpr, WrapOp};
use crate::predicate::{JoinCondition, SelectCondition};

pub type EqId = u32;
pub type OpId = u32;

pub const FORMAT_VERSION: u64 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum OpKind {
    Join(JoinCondition),
    /// A join whose endpoints are already in the same input (a cycle in
    /// the join graph); applied as a filter.
    JoinFilter(JoinCondition),
    Select(SelectCondition),
    Wrap(WrapOp),
}

impl OpKind {
    pub fn name(&self) -> &'static str {
        match self {
            OpKind::Join(_) => "join",
            OpKind::JoinFilter(_) => "joinfilter",
            OpKind::Select(_) => "select",
            OpKind::Wrap(w) => w.name(),
        }
    }

    pub fn predicate(&self) -> String {
        match self {
            OpKind::Join(j) | OpKind::JoinFilter(j) => j.canonical(),
            OpKind::Select(s) => s.canonical(),
            OpKind::Wrap(w) => w.predicate(),
        }
    }

    pub fn canonical(&self) -> String {
        format!("{}({})", self.name(), self.predicate())
    }

    pub fn arity(&self) -> usize {
        match self {
            OpKind::Join(_) => 2,
            _ => 1,
        }
    }

    pub fn is_join(&self) -> bool {
        matches!(self, OpKind::Join(_) | OpKind::JoinFilter(_))
    }

    /// Logical result of applying this operator to `inputs`.
    pub fn apply(&self, inputs: &[&LogicalExpr]) -> LogicalExpr {
        match self {
            OpKind::Join(j) => LogicalExpr::with_join(inputs[0], inputs[1], j),
            OpKind::JoinFilter(j) => LogicalExpr::with_filter_join(inputs[0], j),
            OpKind::Select(s) => LogicalExpr::with_select(inputs[0], s),
            OpKind::Wrap(w) => LogicalExpr::wrap(w.clone(), inputs[0]),
        }
    }
}

#[derive(Clone, Debug)]
pub struct EqNode {
    pub id: EqId,
    pub signature: String,
    pub expr: LogicalExpr,
    pub est_size: f64,
    pub child_ops: Vec<OpId>,
    pub parent_ops: Vec<OpId>,
    pub base_set: BTreeSet<String>,
    pub weight: u32,
}

impl EqNode {
    pub fn is_base(&self) -> bool {
        self.expr.is_base()
    }
}

#[derive(Clone, Debug)]
pub struct OpNode {
    pub id: OpId,
    pub kind: OpKind,
    pub children: Vec<EqId>,
    pub parent: EqId,
    pub op_cost: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NodeCounts {
    pub eq_total: usize,
    pub eq_internal: usize,
    pub op_count: usize,
    /// Saturates at `u128::MAX`.
    pub plans: u128,
}

#[derive(Clone, Debug, Default)]
pub struct Dag {
    eq_nodes: Vec<EqNode>,
    op_nodes: Vec<OpNode>,
    eq_index: HashMap<String, EqId>,
    op_index: HashMap<(String, Vec<EqId>), OpId>,
    roots: BTreeMap<String, EqId>,
    /// Attributes each eq-node must retain for its consumers.
    retained: BTreeMap<EqId, BTreeSet<String>>,
    weight_order_broken: bool,
}

impl Dag {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn eq(&self, id: EqId) -> &EqNode {
        &self.eq_nodes[id as usize]
    }

    pub fn op(&self, id: OpId) -> &OpNode {
        &self.op_nodes[id as usize]
    }

    pub fn eq_nodes(&self) -> &[EqNode] {
        &self.eq_nodes
    }

    pub fn op_nodes(&self) -> &[OpNode] {
        &self.op_nodes
    }

    pub fn lookup(&self, signature: &str) -> Option<EqId> {
        self.eq_index.get(signature).copied()
    }

    pub fn roots(&self) -> &BTreeMap<String, EqId> {
        &self.roots
    }

    pub fn set_root(&mut self, query_id: &str, root: EqId) -> Result<()> {
        if root as usize >= self.eq_nodes.len() {
            return Err(Error::Dangling(format!("root eq-node {root}")));
        }
        self.roots.insert(query_id.to_string(), root);
        Ok(())
    }

    pub fn retained(&self) -> &BTreeMap<EqId, BTreeSet<String>> {
        &self.retained
    }

    pub fn set_retained(&mut self, id: EqId, attrs: BTreeSet<String>) {
        self.retained.insert(id, attrs);
    }

    /// Returns the eq-node for `expr`, creating it if needed.
    pub fn intern(&mut self, expr: LogicalExpr) -> Result<EqId> {
        let signature = expr.signature();
        let est_size = expr.est_size();
        if est_size.is_nan() || est_size < 0.0 {
            return Err(Error::validation(format!(
                "negative or NaN size for `{signature}`"
            )));
        }
        if let Some(&id) = self.eq_index.get(&signature) {
            let existing = self.eq_nodes[id as usize].est_size;
            let scale = existing.abs().max(est_size.abs()).max(f64::MIN_POSITIVE);
            if (existing - est_size).abs() / scale > 1e-9 {
                return Err(Error::InconsistentSize {
                    signature,
                    existing,
                    new: est_size,
                });
            }
            return Ok(id);
        }
        let id = self.eq_nodes.len() as EqId;
        self.eq_nodes.push(EqNode {
            id,
            signature: signature.clone(),
            base_set: expr.base_set(),
            weight: expr.weight(),
            est_size,
            expr,
            child_ops: Vec::new(),
            parent_ops: Vec::new(),
        });
        self.eq_index.insert(signature, id);
        Ok(id)
    }

    /// Adds `kind(children)` as an alternative derivation of `parent`.
    /// Identical `(kind, children)` pairs are stored once.
    pub fn attach_op(
        &mut self,
        parent: EqId,
        kind: OpKind,
        mut children: Vec<EqId>,
    ) -> Result<OpId> {
        let n = self.eq_nodes.len() as EqId;
        if parent >= n {
            return Err(Error::Dangling(format!("parent eq-node {parent}")));
        }
        if let Some(c) = children.iter().find(|&&c| c >= n) {
            return Err(Error::Dangling(format!("child eq-node {c}")));
        }
        if children.len() != kind.arity() {
            return Err(Error::validation(format!(
                "{} expects {} children, got {}",
                kind.name(),
                kind.arity(),
                children.len()
            )));
        }
        if kind.arity() == 2 {
            children.sort_by(|a, b| self.eq(*a).signature.cmp(&self.eq(*b).signature));
        }
        let key = (kind.canonical(), children.clone());
        if let Some(&existing) = self.op_index.get(&key) {
            if self.op(existing).parent != parent {
                return Err(Error::validation(format!(
                    "op {} already derives eq-node {}, not {parent}",
                    key.0,
                    self.op(existing).parent
                )));
            }
            return Ok(existing);
        }
        // Weights strictly decrease along derivations, so the reachability
        // search is only needed once some arc has broken that order.
        let pw = self.eq(parent).weight;
        let ordered = children.iter().all(|&c| self.eq(c).weight < pw);
        if !ordered || self.weight_order_broken {
            if children.iter().any(|&c| self.reaches(c, parent)) {
                return Err(Error::Cycle(parent));
            }
            self.weight_order_broken |= !ordered;
        }
        let sizes: Vec<f64> = children.iter().map(|&c| self.eq(c).est_size).collect();
        let op_cost = costplan::op_cost(&kind, &sizes);
        let id = self.op_nodes.len() as OpId;
        for &c in &children {
            self.eq_nodes[c as usize].parent_ops.push(id);
        }
        self.eq_nodes[parent as usize].child_ops.push(id);
        self.op_nodes.push(OpNode {
            id,
            kind,
            children,
            parent,
            op_cost,
        });
        self.op_index.insert(key, id);
        Ok(id)
    }

    /// Interns the result of `kind(children)` and attaches the op.
    pub fn apply(&mut self, kind: OpKind, children: &[EqId]) -> Result<(EqId, OpId)> {
        let exprs: Vec<&LogicalExpr> = children.iter().map(|&c| &self.eq(c).expr).collect();
        let result = kind.apply(&exprs);
        let parent = self.intern(result)?;
        let op = self.attach_op(parent, kind, children.to_vec())?;
        Ok((parent, op))
    }

    /// Is `target` reachable downward from `from`?
    fn reaches(&self, from: EqId, target: EqId) -> bool {
        let mut stack = vec![from];
        let mut seen = BTreeSet::new();
        while let Some(e) = stack.pop() {
            if e == target {
                return true;
            }
            if !seen.insert(e) {
                continue;
            }
            for &o in &self.eq(e).child_ops {
                stack.extend(self.op(o).children.iter().copied());
            }
        }
        false
    }

    /// Eq-nodes reachable from `root`, in ascending id order.
    pub fn reachable(&self, root: EqId) -> BTreeSet<EqId> {
        let mut seen = BTreeSet::new();
        let mut stack = vec![root];
        while let Some(e) = stack.pop() {
            if !seen.insert(e) {
                continue;
            }
            for &o in &self.eq(e).child_ops {
                stack.extend(self.op(o).children.iter().copied());
            }
        }
        seen
    }

    /// Number of distinct full expansions below `root`.
    pub fn plan_count(&self, root: EqId) -> u128 {
        let mut memo = HashMap::new();
        self.plan_count_rec(root, &mut memo)
    }

    fn plan_count_rec(&self, e: EqId, memo: &mut HashMap<EqId, u128>) -> u128 {
        if let Some(&v) = memo.get(&e) {
            return v;
        }
        let node = self.eq(e);
        let v = if node.child_ops.is_empty() {
            1
        } else {
            node.child_ops.iter().fold(0u128, |acc, &o| {
                let prod = self.op(o).children.iter().fold(1u128, |p, &c| {
                    p.saturating_mul(self.plan_count_rec(c, memo))
                });
                acc.saturating_add(prod)
            })
        };
        memo.insert(e, v);
        v
    }

    /// Counts over the whole DAG; `plans` sums over registered roots (or
    /// over parentless eq-nodes when no root is registered).
    pub fn count_nodes(&self) -> NodeCounts {
        let internal = self.eq_nodes.iter().filter(|e| !e.is_base()).count();
        let tops: Vec<EqId> = if self.roots.is_empty() {
            self.eq_nodes
                .iter()
                .filter(|e| e.parent_ops.is_empty())
                .map(|e| e.id)
                .collect()
        } else {
            self.roots
                .values()
                .copied()
                .collect::<BTreeSet<_>>()
                .into_iter()
                .collect()
        };
        let plans = tops
            .iter()
            .fold(0u128, |acc, &r| acc.saturating_add(self.plan_count(r)));
        NodeCounts {
            eq_total: self.eq_nodes.len(),
            eq_internal: internal,
            op_count: self.op_nodes.len(),
            plans: if self.eq_nodes.is_empty() { 0 } else { plans },
        }
    }

    /// Counts restricted to what `root` can reach.
    pub fn count_reachable(&self, root: EqId) -> NodeCounts {
        let eqs = self.reachable(root);
        let ops: usize = eqs.iter().map(|&e| self.eq(e).child_ops.len()).sum();
        NodeCounts {
            eq_total: eqs.len(),
            eq_internal: eqs.iter().filter(|&&e| !self.eq(e).is_base()).count(),
            op_count: ops,
            plans: self.plan_count(root),
        }
    }

    pub fn signature_set(&self) -> BTreeSet<String> {
        self.eq_nodes.iter().map(|e| e.signature.clone()).collect()
    }

    /// Arcs as `(parent signature, op canonical text, child signatures)`,
    /// independent of id numbering.
    pub fn arc_set(&self) -> BTreeSet<(String, String, Vec<String>)> {
        self.op_nodes
            .iter()
            .map(|o| {
                (
                    self.eq(o.parent).signature.clone(),
                    o.kind.canonical(),
                    o.children
                        .iter()
                        .map(|&c| self.eq(c).signature.clone())
                        .collect(),
                )
            })
            .collect()
    }

    /// Graphviz rendering; deterministic for a given DAG.
    pub fn export_dot(&self) -> String {
        let mut out = String::from("digraph dag {\n  rankdir=BT;\n");
        for e in &self.eq_nodes {
            let _ = writeln!(
                out,
                "  e{} [shape=ellipse, label=\"{}\\nsize={}\"];",
                e.id,
                dot_escape(&e.signature),
                fmt_num(e.est_size)
            );
        }
        for o in &self.op_nodes {
            let _ = writeln!(
                out,
                "  o{} [shape=box, label=\"{}\\ncost={}\"];",
                o.id,
                dot_escape(&o.kind.canonical()),
                fmt_num(o.op_cost)
            );
        }
        for o in &self.op_nodes {
            let _ = writeln!(out, "  o{} -> e{};", o.id, o.parent);
            for c in &o.children {
                let _ = writeln!(out, "  e{} -> o{};", c, o.id);
            }
        }
        for (q, r) in &self.roots {
            let _ = writeln!(
                out,
                "  root_{} [shape=plaintext, label=\"{}\"];",
                sanitize_id(q),
                dot_escape(q)
            );
            let _ = writeln!(out, "  e{} -> root_{};", r, sanitize_id(q));
        }
        out.push_str("}\n");
        out
    }

    pub fn to_document(&self) -> DagDocument {
        DagDocument {
            format: FORMAT_VERSION,
            eq_nodes: self
                .eq_nodes
                .iter()
                .map(|e| EqDoc {
                    id: e.id,
                    signature: e.signature.clone(),
                    est_size: e.est_size,
                    expr: e.expr.clone(),
                })
                .collect(),
            op_nodes: self
                .op_nodes
                .iter()
                .map(|o| OpDoc {
                    id: o.id,
                    kind: o.kind.clone(),
                    children: o.children.clone(),
                    op_cost: o.op_cost,
                })
                .collect(),
            arcs: self
                .op_nodes
                .iter()
                .map(|o| ArcDoc {
                    eq: o.parent,
                    op: o.id,
                })
                .collect(),
            roots: self.roots.clone(),
            retained: self.retained.clone(),
        }
    }

    /// Rebuilds a DAG from its document, re-validating every node.
    pub fn from_document(doc: DagDocument) -> Result<Self> {
        if doc.format != FORMAT_VERSION {
            return Err(Error::FormatVersion {
                found: doc.format,
                expected: FORMAT_VERSION,
            });
        }
        let mut dag = Dag::new();
        for (i, e) in doc.eq_nodes.into_iter().enumerate() {
            if e.id as usize != i {
                return Err(Error::validation(format!(
                    "eq-node ids out of order at {}",
                    e.id
                )));
            }
            let id = dag.intern(e.expr)?;
            if id != e.id || dag.eq(id).signature != e.signature {
                return Err(Error::validation(format!(
                    "eq-node {} does not match its signature",
                    e.id
                )));
            }
        }
        let mut parents: HashMap<OpId, EqId> = HashMap::new();
        for a in &doc.arcs {
            if parents.insert(a.op, a.eq).is_some() {
                return Err(Error::validation(format!(
                    "op-node {} has two parents",
                    a.op
                )));
            }
        }
        for (i, o) in doc.op_nodes.into_iter().enumerate() {
            if o.id as usize != i {
                return Err(Error::validation(format!(
                    "op-node ids out of order at {}",
                    o.id
                )));
            }
            let parent = *parents
                .get(&o.id)
                .ok_or_else(|| Error::Dangling(format!("op-node {} has no parent arc", o.id)))?;
            let exprs: Vec<&LogicalExpr> = o
                .children
                .iter()
                .map(|&c| {
                    dag.eq_nodes
                        .get(c as usize)
                        .map(|n| &n.expr)
                        .ok_or_else(|| Error::Dangling(format!("child eq-node {c}")))
                })
                .collect::<Result<_>>()?;
            if o.children.len() != o.kind.arity() {
                return Err(Error::validation(format!(
                    "op-node {} has wrong arity",
                    o.id
                )));
            }
            let derived = o.kind.apply(&exprs).signature();
            if dag.eq_nodes.get(parent as usize).map(|p| &p.signature) != Some(&derived) {
                return Err(Error::validation(format!(
                    "op-node {} does not derive its parent",
                    o.id
                )));
            }
            dag.attach_op(parent, o.kind, o.children)?;
        }
        for (q, r) in doc.roots {
            dag.set_root(&q, r)?;
        }
        for (e, attrs) in doc.retained {
            if e as usize >= dag.eq_nodes.len() {
                return Err(Error::Dangling(format!("retained set for eq-node {e}")));
            }
            dag.retained.insert(e, attrs);
        }
        Ok(dag)
    }

    /// Interns every node of `other` into `self`, returning the id mapping.
    pub fn absorb(&mut self, other: &Dag) -> Result<Vec<EqId>> {
        let mut map = Vec::with_capacity(other.eq_nodes.len());
        for e in &other.eq_nodes {
            map.push(self.intern(e.expr.clone())?);
        }
        for o in &other.op_nodes {
            let children = o.children.iter().map(|&c| map[c as usize]).collect();
            self.attach_op(map[o.parent as usize], o.kind.clone(), children)?;
        }
        for (q, r) in &other.roots {
            self.roots.insert(q.clone(), map[*r as usize]);
        }
        Ok(map)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EqDoc {
    pub id: EqId,
    pub signature: String,
    pub est_size: f64,
    pub expr: LogicalExpr,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct OpDoc {
    pub id: OpId,
    pub kind: OpKind,
    pub children: Vec<EqId>,
    pub op_cost: f64,
}

/// An `eq -> op` arc (the op is one way of computing the eq-node).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ArcDoc {
    pub eq: EqId,
    pub op: OpId,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DagDocument {
    pub format: u64,
    pub eq_nodes: Vec<EqDoc>,
    pub op_nodes: Vec<OpDoc>,
    pub arcs: Vec<ArcDoc>,
    pub roots: BTreeMap<String, EqId>,
    #[serde(default)]
    pub retained: BTreeMap<EqId, BTreeSet<String>>,
}

fn dot_escape(s: &str) -> String {
    s.replace('\\', "\\\\").replace('"', "\\\"")
}

fn sanitize_id(s: &str) -> String {
    s.chars()
        .map(|c| if c.is_ascii_alphanumeric() { c } else { '_' })
        .collect()
}

pub(crate) fn fmt_num(v: f64) -> String {
    if v.fract() == 0.0 && v.abs() < 1e15 {
        format!("{v:.0}")
    } else {
        format!("{v:.4}")
    }
}
