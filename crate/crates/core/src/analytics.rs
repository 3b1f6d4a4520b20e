//! Closed-form complexity estimators and the per-query metrics report.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};

use crate::catalog::Catalog;
use crate::enumerate::{enumerate, Space, SpaceOp};
use crate::error::{Error, Result};
use crate::expr::LogicalExpr;
use crate::memo::Dag;
use crate::optimizer::{Mode, QueryMetrics};
use crate::sqlfront::Query;

/// Value quoted for the naive worked example (`j = 4, s = 3`), which the
/// naive formula does not reproduce.
pub const QUOTED_NAIVE_N7: u64 = 6_356_724;

fn factorial(n: u64) -> BigInt {
    (1..=n).fold(BigInt::one(), |acc, k| acc * k)
}

fn int(n: u64) -> BigInt {
    BigInt::from(n)
}

/// `N_eq + q·p`
pub fn joindag_eqnodes_after_selects(n_eq: u64, p: u64, q: u64) -> BigInt {
    int(n_eq) + int(q) * int(p)
}

/// `p · n · (n+1) ⋯ (n+q−1)`
pub fn andor_plans_after_selects(p: u64, n: u64, q: u64) -> BigInt {
    (0..q).fold(int(p), |acc, i| acc * int(n + i))
}

/// `N_eq + p · Σ_{k<q} Π_{i≤k} (n+i)`
pub fn andor_eqnodes_after_selects(n_eq: u64, p: u64, n: u64, q: u64) -> BigInt {
    let mut sum = BigInt::zero();
    let mut prod = BigInt::one();
    for k in 0..q {
        prod *= int(n + k);
        sum += &prod;
    }
    int(n_eq) + int(p) * sum
}

/// `f + m²/2 · (f(f+1)/2 − 1)` with `f = m!`, shared by both time formulas.
fn merge_time(m: u64) -> BigRational {
    let f = factorial(m);
    let inner = (&f * (&f + 1u32)) / 2u32 - 1u32;
    BigRational::from_integer(f)
        + BigRational::new(int(m * m), int(2)) * BigRational::from_integer(inner)
}

/// `n! + n²/2 · [n!(n!+1)/2 − 1]`
pub fn naive_time_complexity(n: u64) -> BigRational {
    merge_time(n)
}

/// `j! + j²/2 · [j!(j!+1)/2 − 1] + s² + j·s·j!`
pub fn joindag_time_complexity(j: u64, s: u64) -> BigRational {
    merge_time(j) + BigRational::from_integer(int(s * s) + int(j) * int(s) * factorial(j))
}

/// Exact decimal text when the expansion terminates, else `p/q`.
pub fn format_rational(r: &BigRational) -> String {
    if r.is_integer() {
        return r.to_integer().to_string();
    }
    let mut d = r.denom().clone();
    for f in [2u32, 5] {
        while (&d % f).is_zero() {
            d /= f;
        }
    }
    if !d.is_one() {
        return format!("{}/{}", r.numer(), r.denom());
    }
    let sign = if r.is_negative() { "-" } else { "" };
    let a = r.abs();
    let whole = a.to_integer();
    let mut frac = a - BigRational::from_integer(whole.clone());
    let mut digits = String::new();
    while !frac.is_zero() {
        frac *= BigRational::from_integer(int(10));
        let digit = frac.to_integer();
        digits.push_str(&digit.to_string());
        frac -= BigRational::from_integer(digit);
    }
    format!("{sign}{whole}.{digits}")
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ComplexityParams {
    pub j: u64,
    pub s: u64,
    pub n_eq: u64,
    pub p: u64,
}

fn total_ops(q: &Query) -> (u64, u64) {
    let (mut j, mut s) = (q.joins.len() as u64, q.selects.len() as u64);
    if let Some(sub) = &q.subquery {
        let (ij, is) = total_ops(&sub.query);
        j += ij;
        s += is;
    }
    (j, s)
}

/// Join and select counts over all query blocks, plus the eq-nodes and
/// plans of the outer block's join space.
pub fn complexity_params(query: &Query, catalog: &Catalog) -> Result<ComplexityParams> {
    let (j, s) = total_ops(query);
    let mut leaves = Vec::new();
    for t in &query.tables {
        leaves.push(LogicalExpr::base(t, catalog.relation(t)?.cardinality));
    }
    if let Some(sub) = &query.subquery {
        leaves.push(LogicalExpr::base(&sub.alias, 1.0));
    }
    let mut dag = Dag::new();
    let out = enumerate(
        &mut dag,
        &Space {
            leaves,
            ops: query.joins.iter().cloned().map(SpaceOp::Join).collect(),
        },
        0,
    )?;
    let root = out
        .roots
        .first()
        .copied()
        .ok_or_else(|| Error::validation("empty query"))?;
    let c = dag.count_reachable(root);
    Ok(ComplexityParams {
        j,
        s,
        n_eq: c.eq_total as u64,
        p: c.plans.min(u64::MAX as u128) as u64,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub query_id: String,
    pub mode: String,
    pub eq_nodes: Option<usize>,
    pub op_nodes: Option<usize>,
    pub plans: Option<u128>,
    pub build_ms: Option<f64>,
    pub best_cost: Option<f64>,
    pub est_eq_nodes: String,
    pub est_plans: String,
    pub est_time_complexity: String,
    pub status: String,
    pub notes: String,
}

pub fn discrepancy_note(n: u64) -> Option<String> {
    (n == 7).then(|| {
        format!(
            "naive formula gives {} for n=7; the quoted {QUOTED_NAIVE_N7} does not satisfy it",
            format_rational(&naive_time_complexity(7))
        )
    })
}

/// Estimator columns for a mode: naive rows use the AND/OR formulas with
/// `n = j`, join-DAG rows the sprinkled-join-DAG ones.
pub fn estimates(mode: Mode, p: &ComplexityParams) -> (String, String, String) {
    match mode {
        Mode::Naive => (
            andor_eqnodes_after_selects(p.n_eq, p.p, p.j, p.s).to_string(),
            andor_plans_after_selects(p.p, p.j, p.s).to_string(),
            format_rational(&naive_time_complexity(p.j + p.s)),
        ),
        Mode::Joindag => (
            joindag_eqnodes_after_selects(p.n_eq, p.p, p.s).to_string(),
            p.p.to_string(),
            format_rational(&joindag_time_complexity(p.j, p.s)),
        ),
    }
}

fn base_row(query_id: &str, mode: Mode, params: &ComplexityParams, status: &str) -> MetricsRow {
    let (est_eq_nodes, est_plans, est_time_complexity) = estimates(mode, params);
    let notes = if mode == Mode::Naive {
        discrepancy_note(params.j + params.s).unwrap_or_default()
    } else {
        String::new()
    };
    MetricsRow {
        query_id: query_id.to_string(),
        mode: mode.as_str().to_string(),
        eq_nodes: None,
        op_nodes: None,
        plans: None,
        build_ms: None,
        best_cost: None,
        est_eq_nodes,
        est_plans,
        est_time_complexity,
        status: status.to_string(),
        notes,
    }
}

pub fn collect_metrics(
    query_id: &str,
    metrics: &QueryMetrics,
    params: &ComplexityParams,
) -> MetricsRow {
    MetricsRow {
        eq_nodes: Some(metrics.eq_nodes),
        op_nodes: Some(metrics.op_nodes),
        plans: Some(metrics.plans),
        build_ms: Some(metrics.build_ms),
        best_cost: Some(metrics.best_cost),
        ..base_row(query_id, metrics.mode, params, "ok")
    }
}

/// Row for a query that was not optimized (`skipped` or `error`).
pub fn unfinished_row(
    query_id: &str,
    mode: Mode,
    params: Option<&ComplexityParams>,
    status: &str,
    note: &str,
) -> MetricsRow {
    let mut row = match params {
        Some(p) => base_row(query_id, mode, p, status),
        None => MetricsRow {
            query_id: query_id.to_string(),
            mode: mode.as_str().to_string(),
            eq_nodes: None,
            op_nodes: None,
            plans: None,
            build_ms: None,
            best_cost: None,
            est_eq_nodes: String::new(),
            est_plans: String::new(),
            est_time_complexity: String::new(),
            status: status.to_string(),
            notes: String::new(),
        },
    };
    row.notes = [row.notes.as_str(), note]
        .iter()
        .filter(|s| !s.is_empty())
        .cloned()
        .collect::<Vec<_>>()
        .join("; ");
    row
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub rows: Vec<MetricsRow>,
}

const HEADER: [&str; 12] = [
    "query_id",
    "mode",
    "eq_nodes",
    "op_nodes",
    "plans",
    "build_ms",
    "best_cost",
    "est_eq_nodes",
    "est_plans",
    "est_time_complexity",
    "status",
    "notes",
];

impl MetricsReport {
    /// Rows ordered by query id, then mode.
    pub fn sort(&mut self) {
        self.rows
            .sort_by(|a, b| (&a.query_id, &a.mode).cmp(&(&b.query_id, &b.mode)));
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::WriterBuilder::new()
            .has_headers(false)
            .from_writer(Vec::new());
        w.write_record(HEADER).map_err(csv_err)?;
        for r in &self.rows {
            w.serialize(r).map_err(csv_err)?;
        }
        let bytes = w
            .into_inner()
            .map_err(|e| Error::validation(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| Error::validation(e.to_string()))
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut r = csv::Reader::from_reader(text.as_bytes());
        let header = r.headers().map_err(csv_err)?;
        if header.iter().ne(HEADER) {
            return Err(Error::validation("unexpected report header"));
        }
        let rows = r
            .deserialize()
            .collect::<std::result::Result<Vec<MetricsRow>, _>>()
            .map_err(csv_err)?;
        Ok(MetricsReport { rows })
    }

    /// `(query_id, naive/joindag eq ratio, op ratio)` for queries with both
    /// modes measured.
    pub fn ratios(&self) -> Vec<(String, f64, f64)> {
        let mut out = Vec::new();
        for n in self
            .rows
            .iter()
            .filter(|r| r.mode == "naive" && r.status == "ok")
        {
            let Some(j) = self
                .rows
                .iter()
                .find(|r| r.mode == "joindag" && r.query_id == n.query_id && r.status == "ok")
            else {
                continue;
            };
            let ratio = |a: Option<usize>, b: Option<usize>| {
                a.unwrap_or(0) as f64 / b.unwrap_or(1).max(1) as f64
            };
            out.push((
                n.query_id.clone(),
                ratio(n.eq_nodes, j.eq_nodes),
                ratio(n.op_nodes, j.op_nodes),
            ));
        }
        out
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::validation(format!("csv: {e}"))
}

/// Lossy view of an estimator for plotting.
pub fn to_f64(r: &BigRational) -> f64 {
    r.to_f64().unwrap_or(f64::INFINITY)
}
