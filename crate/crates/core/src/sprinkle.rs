//! Placing selections, grouping, ordering and projections onto join plans.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::rc::Rc;

use log::debug;

use crate::catalog::Catalog;
use crate::costplan::{self, PlanNode};
use crate::error::{Error, Result};
use crate::expr::WrapOp;
use crate::memo::{Dag, EqId, OpKind};
use crate::predicate::{Aggregate, ColumnRef, SelectCondition};
use crate::sqlfront::{Projection, Query};

pub const DEFAULT_PLAN_LIMIT: u128 = 1_000_000;
pub const MAX_SELECTS: usize = 16;

#[derive(Clone, Copy, Debug)]
pub struct SprinkleOptions {
    pub plan_limit: u128,
    /// Skip plans whose cost lower bound exceeds the best plan so far.
    pub prune: bool,
}

impl Default for SprinkleOptions {
    fn default() -> Self {
        SprinkleOptions {
            plan_limit: DEFAULT_PLAN_LIMIT,
            prune: true,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SprinkleReport {
    pub root: EqId,
    pub join_plans: u128,
    pub plans_evaluated: usize,
    pub plans_pruned: usize,
    /// New eq-nodes produced directly by select operators.
    pub select_nodes_added: usize,
    pub eq_delta: usize,
    pub op_delta: usize,
    /// Selects whose walk-up placement differs from the cost-optimal one.
    pub local_rule_divergences: usize,
    pub best_cost: f64,
}

/// One join-only expansion; subtrees are shared between expansions.
enum JPlan {
    Leaf(EqId),
    Node {
        eq: EqId,
        kind: OpKind,
        children: Vec<Rc<JPlan>>,
    },
}

fn is_join_leaf(dag: &Dag, e: EqId) -> bool {
    !dag.eq(e)
        .child_ops
        .iter()
        .any(|&o| dag.op(o).kind.is_join())
}

fn expand(dag: &Dag, e: EqId, memo: &mut HashMap<EqId, Rc<Vec<Rc<JPlan>>>>) -> Rc<Vec<Rc<JPlan>>> {
    if let Some(v) = memo.get(&e) {
        return v.clone();
    }
    let mut out = Vec::new();
    if is_join_leaf(dag, e) {
        out.push(Rc::new(JPlan::Leaf(e)));
    } else {
        let mut ops: Vec<_> = dag
            .eq(e)
            .child_ops
            .iter()
            .map(|&o| dag.op(o))
            .filter(|o| o.kind.is_join())
            .collect();
        ops.sort_by_key(|o| (o.kind.canonical(), o.children.clone()));
        for op in ops {
            let mut combos: Vec<Vec<Rc<JPlan>>> = vec![vec![]];
            for &c in &op.children {
                let subs = expand(dag, c, memo);
                let mut next = Vec::with_capacity(combos.len() * subs.len());
                for prefix in &combos {
                    for s in subs.iter() {
                        let mut v = prefix.clone();
                        v.push(s.clone());
                        next.push(v);
                    }
                }
                combos = next;
            }
            for children in combos {
                out.push(Rc::new(JPlan::Node {
                    eq: e,
                    kind: op.kind.clone(),
                    children,
                }));
            }
        }
    }
    let rc = Rc::new(out);
    memo.insert(e, rc.clone());
    rc
}

/// Join plan flattened into an arena for the placement search.
struct Arena {
    eq: Vec<EqId>,
    kind: Vec<Option<OpKind>>,
    children: Vec<Vec<usize>>,
    parent: Vec<Option<usize>>,
    size0: Vec<f64>,
    mask: Vec<u32>,
    root: usize,
}

impl Arena {
    fn build(dag: &Dag, plan: &JPlan, selects: &[SelectCondition]) -> Arena {
        let mut a = Arena {
            eq: vec![],
            kind: vec![],
            children: vec![],
            parent: vec![],
            size0: vec![],
            mask: vec![],
            root: 0,
        };
        a.root = a.add(dag, plan, selects, None);
        a
    }

    fn add(
        &mut self,
        dag: &Dag,
        plan: &JPlan,
        selects: &[SelectCondition],
        parent: Option<usize>,
    ) -> usize {
        let idx = self.eq.len();
        let (eq, kind) = match plan {
            JPlan::Leaf(e) => (*e, None),
            JPlan::Node { eq, kind, .. } => (*eq, Some(kind.clone())),
        };
        let node = dag.eq(eq);
        let mask = selects
            .iter()
            .enumerate()
            .filter(|(_, s)| node.base_set.contains(s.relation()))
            .fold(0u32, |m, (i, _)| m | 1 << i);
        self.eq.push(eq);
        self.kind.push(kind);
        self.children.push(vec![]);
        self.parent.push(parent);
        self.size0.push(node.est_size);
        self.mask.push(mask);
        if let JPlan::Node { children, .. } = plan {
            for c in children {
                let ci = self.add(dag, c, selects, Some(idx));
                self.children[idx].push(ci);
            }
        }
        idx
    }
}

fn submasks(mask: u32) -> impl Iterator<Item = u32> {
    let mut next = Some(mask);
    std::iter::from_fn(move || {
        let cur = next?;
        next = if cur == 0 {
            None
        } else {
            Some((cur - 1) & mask)
        };
        Some(cur)
    })
}

struct Placement<'a> {
    ssf: Vec<f64>,
    prod: Vec<f64>,
    arena: &'a Arena,
}

impl Placement<'_> {
    fn size(&self, node: usize, applied: u32) -> f64 {
        self.arena.size0[node] * self.prod[applied as usize]
    }

    /// Cost of applying `here` as a stack, most selective first.
    fn stack_cost(&self, here: u32, mut x: f64) -> f64 {
        let mut cost = 0.0;
        for i in 0..self.ssf.len() {
            if here >> i & 1 == 1 {
                cost += x;
                x *= self.ssf[i];
            }
        }
        cost
    }

    /// `dp[node][applied] = (cost, applied-below)`.
    fn solve(&self, node: usize, dp: &mut Vec<HashMap<u32, (f64, u32)>>) {
        for &c in &self.arena.children[node] {
            self.solve(c, dp);
        }
        let mask = self.arena.mask[node];
        let children = &self.arena.children[node];
        let mut table = HashMap::new();
        for a in submasks(mask) {
            let mut best: Option<(f64, u32)> = None;
            let mut consider = |cost: f64, below: u32| {
                let better = match best {
                    None => true,
                    Some((bc, bb)) => {
                        cost < bc
                            || (cost == bc && (below.count_ones(), below) < (bb.count_ones(), bb))
                    }
                };
                if better {
                    best = Some((cost, below));
                }
            };
            match children.as_slice() {
                [] => consider(self.stack_cost(a, self.arena.size0[node]), 0),
                [c] => {
                    for b in submasks(a) {
                        let (cc, _) = dp[*c][&b];
                        let cost =
                            cc + self.size(*c, b) + self.stack_cost(a & !b, self.size(node, b));
                        consider(cost, b);
                    }
                }
                [l, r] => {
                    let (al, ar) = (a & self.arena.mask[*l], a & self.arena.mask[*r]);
                    for bl in submasks(al) {
                        let (cl, _) = dp[*l][&bl];
                        let sl = self.size(*l, bl);
                        for br in submasks(ar) {
                            let (cr, _) = dp[*r][&br];
                            let b = bl | br;
                            let cost = cl
                                + cr
                                + sl * self.size(*r, br)
                                + self.stack_cost(a & !b, self.size(node, b));
                            consider(cost, b);
                        }
                    }
                }
                _ => unreachable!("operators are unary or binary"),
            }
            table.insert(a, best.expect("at least one candidate"));
        }
        dp[node] = table;
    }

    fn lower_bound(&self) -> f64 {
        let a = self.arena;
        let mut lb = 0.0;
        for node in 0..a.eq.len() {
            match a.children[node].as_slice() {
                [c] => lb += self.size(*c, a.mask[*c]),
                [l, r] => lb += self.size(*l, a.mask[*l]) * self.size(*r, a.mask[*r]),
                _ => {}
            }
        }
        lb
    }

    /// Selects applied directly on top of each node.
    fn here_sets(&self, dp: &[HashMap<u32, (f64, u32)>]) -> Vec<u32> {
        let a = self.arena;
        let mut here = vec![0u32; a.eq.len()];
        let mut stack = vec![(a.root, a.mask[a.root])];
        while let Some((node, applied)) = stack.pop() {
            let (_, below) = dp[node][&applied];
            here[node] = applied & !below;
            for &c in &a.children[node] {
                stack.push((c, below & a.mask[c]));
            }
        }
        here
    }

    /// Position the one-pass walk-up rule would pick for select `i`.
    fn walk_up_position(&self, i: usize) -> usize {
        let a = self.arena;
        let mut t = (0..a.eq.len())
            .find(|&n| a.children[n].is_empty() && a.mask[n] >> i & 1 == 1)
            .expect("select relation is a leaf");
        loop {
            let Some(p) = a.parent[t] else { return t };
            if a.children[p].len() == 1 {
                t = p;
                continue;
            }
            let sib = a.children[p]
                .iter()
                .copied()
                .find(|&c| c != t)
                .expect("binary");
            let (st, sb) = (a.size0[t], a.size0[sib]);
            let val1 = st * sb + a.size0[p];
            let val2 = st + self.ssf[i] * st * sb;
            if val1 > val2 {
                return t;
            }
            t = p;
        }
    }
}

/// Places every select on every join plan below `join_root` at the
/// position minimizing that plan's total cost, and interns the results.
/// All decorated plans share one root.
pub fn sprinkle_selects(
    dag: &mut Dag,
    join_root: EqId,
    selects: &[SelectCondition],
    opts: SprinkleOptions,
) -> Result<SprinkleReport> {
    if selects.is_empty() {
        return Ok(SprinkleReport {
            root: join_root,
            join_plans: dag.plan_count(join_root),
            best_cost: costplan::best_plan(dag, join_root)?.cost(),
            ..Default::default()
        });
    }
    if selects.len() > MAX_SELECTS {
        return Err(Error::LimitExceeded {
            what: "selects per query",
            n: selects.len(),
            limit: MAX_SELECTS,
        });
    }
    let base_set = dag.eq(join_root).base_set.clone();
    for s in selects {
        if !base_set.contains(s.relation()) {
            return Err(Error::validation(format!(
                "select `{}` on relation absent from the join DAG",
                s.canonical()
            )));
        }
    }
    let mut selects = selects.to_vec();
    selects.sort_by(|a, b| {
        a.ssf
            .total_cmp(&b.ssf)
            .then_with(|| a.canonical().cmp(&b.canonical()))
    });
    selects.dedup_by(|a, b| a.canonical() == b.canonical());

    let join_plans = dag.plan_count(join_root);
    if join_plans > opts.plan_limit {
        return Err(Error::LimitExceeded {
            what: "join plans",
            n: usize::try_from(join_plans).unwrap_or(usize::MAX),
            limit: usize::try_from(opts.plan_limit).unwrap_or(usize::MAX),
        });
    }
    let plans = expand(dag, join_root, &mut HashMap::new());

    let k = selects.len();
    let ssf: Vec<f64> = selects.iter().map(|s| s.ssf).collect();
    let prod: Vec<f64> = (0..1u32 << k)
        .map(|m| {
            (0..k)
                .filter(|i| m >> i & 1 == 1)
                .fold(1.0, |p, i| p * ssf[i])
        })
        .collect();

    let eq_before = dag.eq_nodes().len();
    let op_before = dag.op_nodes().len();
    let mut report = SprinkleReport {
        join_plans,
        best_cost: f64::INFINITY,
        ..Default::default()
    };
    let mut select_nodes: BTreeSet<EqId> = BTreeSet::new();
    let mut root: Option<EqId> = None;

    for plan in plans.iter() {
        let arena = Arena::build(dag, plan, &selects);
        let pl = Placement {
            ssf: ssf.clone(),
            prod: prod.clone(),
            arena: &arena,
        };
        if opts.prune && pl.lower_bound() > report.best_cost {
            report.plans_pruned += 1;
            continue;
        }
        let mut dp = vec![HashMap::new(); arena.eq.len()];
        pl.solve(arena.root, &mut dp);
        let (cost, _) = dp[arena.root][&arena.mask[arena.root]];
        report.plans_evaluated += 1;
        if cost < report.best_cost {
            report.best_cost = cost;
        }
        let here = pl.here_sets(&dp);
        for i in 0..k {
            let pos = pl.walk_up_position(i);
            if here[pos] >> i & 1 == 0 {
                report.local_rule_divergences += 1;
            }
        }
        let r = insert_decorated(
            dag,
            &arena,
            &here,
            &selects,
            arena.root,
            eq_before,
            &mut select_nodes,
        )?;
        match root {
            None => root = Some(r),
            Some(prev) if prev != r => {
                return Err(Error::validation("decorated plans disagree on their root"));
            }
            _ => {}
        }
    }
    report.root = root.expect("at least one plan is evaluated");
    report.select_nodes_added = select_nodes.len();
    report.eq_delta = dag.eq_nodes().len() - eq_before;
    report.op_delta = dag.op_nodes().len() - op_before;
    debug!(
        "sprinkled {k} selects over {} plans ({} pruned), +{} eq-nodes",
        report.join_plans, report.plans_pruned, report.eq_delta
    );
    Ok(report)
}

fn insert_decorated(
    dag: &mut Dag,
    arena: &Arena,
    here: &[u32],
    selects: &[SelectCondition],
    node: usize,
    eq_before: usize,
    select_nodes: &mut BTreeSet<EqId>,
) -> Result<EqId> {
    let mut id = match &arena.kind[node] {
        None => arena.eq[node],
        Some(kind) => {
            let children = arena.children[node]
                .iter()
                .map(|&c| insert_decorated(dag, arena, here, selects, c, eq_before, select_nodes))
                .collect::<Result<Vec<_>>>()?;
            dag.apply(kind.clone(), &children)?.0
        }
    };
    for (i, s) in selects.iter().enumerate() {
        if here[node] >> i & 1 == 1 {
            id = dag.apply(OpKind::Select(s.clone()), &[id])?.0;
            if id as usize >= eq_before {
                select_nodes.insert(id);
            }
        }
    }
    Ok(id)
}

// ---------------------------------------------------------------------------
// Grouping, having, ordering and projection.

/// Operator tree that can be edited and re-interned.
#[derive(Clone, Debug)]
pub enum DTree {
    Leaf(EqId),
    Op {
        eq: Option<EqId>,
        kind: OpKind,
        children: Vec<DTree>,
    },
}

impl DTree {
    pub fn from_plan(dag: &Dag, node: &PlanNode) -> DTree {
        match node.op {
            None => DTree::Leaf(node.eq),
            Some(o) => DTree::Op {
                eq: Some(node.eq),
                kind: dag.op(o).kind.clone(),
                children: node
                    .children
                    .iter()
                    .map(|c| DTree::from_plan(dag, c))
                    .collect(),
            },
        }
    }

    pub fn intern(&self, dag: &mut Dag) -> Result<EqId> {
        match self {
            DTree::Leaf(e) => Ok(*e),
            DTree::Op { kind, children, .. } => {
                let ids = children
                    .iter()
                    .map(|c| c.intern(dag))
                    .collect::<Result<Vec<_>>>()?;
                Ok(dag.apply(kind.clone(), &ids)?.0)
            }
        }
    }

    fn eq(&self) -> EqId {
        match self {
            DTree::Leaf(e) => *e,
            DTree::Op { eq, .. } => eq.expect("eq known for unmodified nodes"),
        }
    }

    fn children(&self) -> &[DTree] {
        match self {
            DTree::Leaf(_) => &[],
            DTree::Op { children, .. } => children,
        }
    }

    fn at(&self, path: &[usize]) -> &DTree {
        path.iter().fold(self, |t, &i| &t.children()[i])
    }

    fn wrap_at(&mut self, path: &[usize], kinds: Vec<OpKind>) {
        let target = path.iter().fold(self, |t, &i| match t {
            DTree::Op { children, .. } => &mut children[i],
            DTree::Leaf(_) => unreachable!("path stays inside the tree"),
        });
        let mut sub = std::mem::replace(target, DTree::Leaf(0));
        for kind in kinds {
            sub = DTree::Op {
                eq: None,
                kind,
                children: vec![sub],
            };
        }
        *target = sub;
    }
}

#[derive(Clone, Copy, Debug)]
enum WrapRule {
    GroupBy { distinct: f64 },
    OrderBy,
}

/// Deepest node whose relations include `needed`.
fn lowest_covering(dag: &Dag, tree: &DTree, needed: &BTreeSet<String>) -> Vec<usize> {
    let mut path = Vec::new();
    let mut t = tree;
    loop {
        let next = t
            .children()
            .iter()
            .position(|c| needed.is_subset(&dag.eq(c.eq()).base_set));
        match next {
            Some(i) => {
                path.push(i);
                t = &t.children()[i];
            }
            None => return path,
        }
    }
}

/// Selects or filter joins above `path` that touch its relations.
fn blocked(dag: &Dag, tree: &DTree, path: &[usize]) -> bool {
    let rels = &dag.eq(tree.at(path).eq()).base_set;
    (0..path.len()).any(|depth| match tree.at(&path[..depth]) {
        DTree::Op {
            kind: OpKind::Select(s),
            ..
        } => rels.contains(s.relation()),
        DTree::Op {
            kind: OpKind::JoinFilter(j),
            ..
        } => rels.contains(&j.left.relation) || rels.contains(&j.right.relation),
        _ => false,
    })
}

/// Walks up from `start`: below each binary parent the wrap stays if
/// `val1 > val2`; unary parents are passed through; the root takes it
/// otherwise.
fn walk_up(dag: &Dag, tree: &DTree, start: Vec<usize>, rule: WrapRule) -> Vec<usize> {
    let mut p = start;
    while let Some((&last, parent_path)) = p.split_last() {
        let parent = tree.at(parent_path);
        if parent.children().len() == 2 && !blocked(dag, tree, &p) {
            let t = dag.eq(tree.at(&p).eq()).est_size;
            let b = dag.eq(parent.children()[1 - last].eq()).est_size;
            let e1 = dag.eq(parent.eq()).est_size;
            let val1 = t * b + e1;
            let val2 = match rule {
                WrapRule::GroupBy { distinct } => t + distinct.min(t) * b,
                WrapRule::OrderBy => t + t * b,
            };
            if val1 > val2 {
                return p;
            }
        }
        p = parent_path.to_vec();
    }
    p
}

pub(crate) fn column_distinct(col: &ColumnRef, query: &Query, catalog: &Catalog) -> f64 {
    if let Some(sub) = &query.subquery {
        if sub.alias == col.relation {
            return sub
                .columns
                .iter()
                .find(|c| c.name == col.attribute)
                .map(|c| c.distinct_count)
                .unwrap_or(1.0);
        }
    }
    catalog
        .attribute(col)
        .map(|a| a.distinct_count)
        .unwrap_or(1.0)
}

fn aggregates(query: &Query) -> Vec<Aggregate> {
    let mut out: Vec<Aggregate> = query
        .projections
        .iter()
        .filter_map(|p| match p {
            Projection::Aggregate(a) => Some(a.clone()),
            Projection::Column(_) => None,
        })
        .collect();
    if let Some(h) = &query.having {
        out.push(h.aggregate.clone());
    }
    let mut seen = BTreeSet::new();
    out.retain(|a| seen.insert(a.to_string()));
    out
}

/// Group-by operator for the query: explicit grouping, or a scalar
/// aggregate (one group) when aggregates appear without `GROUP BY`.
pub fn groupby_op(query: &Query, catalog: &Catalog) -> Option<WrapOp> {
    let aggs = aggregates(query);
    if query.group_by.is_empty() && aggs.is_empty() {
        return None;
    }
    let distinct = query
        .group_by
        .iter()
        .map(|c| column_distinct(c, query, catalog))
        .product();
    Some(WrapOp::GroupBy {
        attrs: query.group_by.clone(),
        aggregates: aggs,
        distinct,
    })
}

pub fn having_op(query: &Query) -> Option<WrapOp> {
    query.having.clone().map(WrapOp::Having)
}

pub fn orderby_op(query: &Query) -> Option<WrapOp> {
    (!query.order_by.is_empty()).then(|| WrapOp::OrderBy(query.order_by.clone()))
}

/// Root projection, elided for `*` or when every attribute is kept.
pub fn project_op(query: &Query, catalog: &Catalog) -> Option<WrapOp> {
    if query.projections.is_empty() {
        return None;
    }
    let items: Vec<String> = query
        .projections
        .iter()
        .map(|p| match p {
            Projection::Column(c) => c.to_string(),
            Projection::Aggregate(a) => a.to_string(),
        })
        .collect();
    let kept: BTreeSet<&String> = items.iter().collect();
    let all: BTreeSet<String> = available_attributes(&query.relation_names(), query, catalog);
    if all.iter().all(|a| kept.contains(a)) && items.iter().all(|i| all.contains(i)) {
        return None;
    }
    Some(WrapOp::Project(items))
}

fn available_attributes(
    rels: &BTreeSet<String>,
    query: &Query,
    catalog: &Catalog,
) -> BTreeSet<String> {
    let mut out = BTreeSet::new();
    for rel in rels {
        if let Ok(r) = catalog.relation(rel) {
            out.extend(r.attributes.iter().map(|a| format!("{rel}.{}", a.name)));
        } else if let Some(sub) = query.subquery.as_ref().filter(|s| &s.alias == rel) {
            out.extend(sub.columns.iter().map(|c| format!("{rel}.{}", c.name)));
        }
    }
    out
}

/// Appends group-by, having, order-by and projection at the root, in that
/// order.
pub fn apply_suffix(dag: &mut Dag, root: EqId, query: &Query, catalog: &Catalog) -> Result<EqId> {
    let mut id = root;
    for w in [
        groupby_op(query, catalog),
        having_op(query),
        orderby_op(query),
        project_op(query, catalog),
    ]
    .into_iter()
    .flatten()
    {
        id = dag.apply(OpKind::Wrap(w), &[id])?.0;
    }
    Ok(id)
}

fn relations_of<'a>(cols: impl Iterator<Item = &'a ColumnRef>) -> BTreeSet<String> {
    cols.map(|c| c.relation.clone()).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClausePlacement {
    pub root: EqId,
    /// Depth below the root where the group-by landed (0 = at the root).
    pub groupby_depth: Option<usize>,
    pub orderby_depth: Option<usize>,
}

/// Places group-by (with having directly above it) and order-by on the
/// cheapest plan below `root`.
pub fn sprinkle_groupby_orderby(
    dag: &mut Dag,
    root: EqId,
    query: &Query,
    catalog: &Catalog,
) -> Result<ClausePlacement> {
    let g = groupby_op(query, catalog);
    let o = orderby_op(query);
    if g.is_none() && o.is_none() {
        return Ok(ClausePlacement {
            root,
            groupby_depth: None,
            orderby_depth: None,
        });
    }
    if query.having.is_some() && query.group_by.is_empty() {
        return Err(Error::validation("having without group-by"));
    }
    let best = costplan::best_plan(dag, root)?;
    let mut tree = DTree::from_plan(dag, &best.root);

    let mut groupby_depth = None;
    let mut order_start: Option<Vec<usize>> = None;
    if let Some(WrapOp::GroupBy {
        attrs,
        aggregates,
        distinct,
    }) = &g
    {
        let path = if attrs.is_empty() {
            Vec::new()
        } else {
            let mut needed = relations_of(attrs.iter());
            needed.extend(relations_of(
                aggregates.iter().filter_map(|a| a.arg.as_ref()),
            ));
            let start = lowest_covering(dag, &tree, &needed);
            walk_up(
                dag,
                &tree,
                start,
                WrapRule::GroupBy {
                    distinct: *distinct,
                },
            )
        };
        let mut kinds = vec![OpKind::Wrap(g.clone().expect("group-by present"))];
        kinds.extend(having_op(query).map(OpKind::Wrap));
        tree.wrap_at(&path, kinds);
        groupby_depth = Some(path.len());
        order_start = Some(path);
    }
    let mut orderby_depth = None;
    if let Some(ob) = o {
        let start = match order_start {
            Some(p) => p,
            None => lowest_covering(
                dag,
                &tree,
                &relations_of(query.order_by.iter().map(|k| &k.column)),
            ),
        };
        let path = if g.is_some() {
            // sizes above the inserted group-by are not interned yet; keep
            // order-by on the path above it, deciding with interned sizes
            let interned = tree.intern(dag)?;
            let best = costplan::best_plan(dag, interned)?;
            tree = DTree::from_plan(dag, &best.root);
            walk_up(dag, &tree, start, WrapRule::OrderBy)
        } else {
            walk_up(dag, &tree, start, WrapRule::OrderBy)
        };
        orderby_depth = Some(path.len());
        tree.wrap_at(&path, vec![OpKind::Wrap(ob)]);
    }
    let new_root = tree.intern(dag)?;
    Ok(ClausePlacement {
        root: new_root,
        groupby_depth,
        orderby_depth,
    })
}

/// Adds the root projection and records, for every eq-node reachable from
/// the registered roots, the attributes its consumers need.
pub fn sprinkle_projects(
    dag: &mut Dag,
    root: EqId,
    queries: &[(&Query, EqId)],
    catalog: &Catalog,
) -> Result<EqId> {
    let own = queries.iter().find(|(_, r)| *r == root).map(|(q, _)| *q);
    let new_root = match own.and_then(|q| project_op(q, catalog)) {
        Some(p) => dag.apply(OpKind::Wrap(p), &[root])?.0,
        None => root,
    };
    let mut tops: Vec<(EqId, BTreeSet<String>, &Query)> = Vec::new();
    for (q, r) in queries {
        let r = if *r == root { new_root } else { *r };
        tops.push((r, output_attributes(q), q));
    }
    annotate_retained(dag, &tops, catalog);
    Ok(new_root)
}

fn output_attributes(q: &Query) -> BTreeSet<String> {
    let mut out = BTreeSet::new();
    for p in &q.projections {
        match p {
            Projection::Column(c) => {
                out.insert(c.to_string());
            }
            Projection::Aggregate(a) => {
                if let Some(c) = &a.arg {
                    out.insert(c.to_string());
                }
            }
        }
    }
    out
}

fn attributes_used(kind: &OpKind) -> BTreeSet<String> {
    let mut out = BTreeSet::new();
    match kind {
        OpKind::Join(j) | OpKind::JoinFilter(j) => {
            out.insert(j.left.to_string());
            out.insert(j.right.to_string());
        }
        OpKind::Select(s) => {
            out.insert(s.column.to_string());
        }
        OpKind::Wrap(WrapOp::GroupBy {
            attrs, aggregates, ..
        }) => {
            out.extend(attrs.iter().map(|a| a.to_string()));
            out.extend(
                aggregates
                    .iter()
                    .filter_map(|a| a.arg.as_ref())
                    .map(|c| c.to_string()),
            );
        }
        OpKind::Wrap(WrapOp::Having(h)) => {
            out.extend(h.aggregate.arg.iter().map(|c| c.to_string()));
        }
        OpKind::Wrap(WrapOp::OrderBy(keys)) => {
            out.extend(keys.iter().map(|k| k.column.to_string()));
        }
        OpKind::Wrap(WrapOp::Project(items)) => {
            for item in items {
                let inner = item
                    .find('(')
                    .map(|i| &item[i + 1..item.len() - 1])
                    .unwrap_or(item);
                if ColumnRef::parse(inner).is_some() {
                    out.insert(inner.to_string());
                }
            }
        }
        OpKind::Wrap(WrapOp::Alias(_)) => {}
    }
    out
}

fn annotate_retained(dag: &mut Dag, tops: &[(EqId, BTreeSet<String>, &Query)], catalog: &Catalog) {
    let mut region: BTreeSet<EqId> = BTreeSet::new();
    for (r, _, _) in tops {
        region.extend(dag.reachable(*r));
    }
    let mut order: Vec<EqId> = region.iter().copied().collect();
    order.sort_by_key(|&e| std::cmp::Reverse(dag.eq(e).weight));

    let mut available: BTreeMap<EqId, BTreeSet<String>> = BTreeMap::new();
    let all_queries_attrs = |e: EqId| -> BTreeSet<String> {
        let rels = dag.eq(e).base_set.clone();
        let mut out = BTreeSet::new();
        for (_, _, q) in tops {
            out.extend(available_attributes(&rels, q, catalog));
        }
        out
    };
    for &e in &order {
        available.insert(e, all_queries_attrs(e));
    }

    let mut need: BTreeMap<EqId, BTreeSet<String>> = BTreeMap::new();
    for (r, out, _) in tops {
        need.entry(*r).or_default().extend(out.iter().cloned());
    }
    for &e in &order {
        let mine = need.get(&e).cloned().unwrap_or_default();
        let ops = dag.eq(e).child_ops.clone();
        for o in ops {
            let op = dag.op(o).clone();
            let mut passed = mine.clone();
            passed.extend(attributes_used(&op.kind));
            for c in op.children {
                let avail = &available[&c];
                let entry = need.entry(c).or_default();
                if matches!(op.kind, OpKind::Wrap(WrapOp::Alias(_))) {
                    entry.extend(avail.iter().cloned());
                } else {
                    entry.extend(passed.iter().filter(|a| avail.contains(*a)).cloned());
                }
            }
        }
    }
    for (e, attrs) in need {
        let kept: BTreeSet<String> = attrs
            .into_iter()
            .filter(|a| available[&e].contains(a))
            .collect();
        dag.set_retained(e, kept);
    }
}
