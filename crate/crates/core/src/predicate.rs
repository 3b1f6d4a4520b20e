//! Column references and the predicate forms the optimizer moves around:
//! equi-join conditions, single-relation selections, and having clauses.
//!
//! Every predicate has a canonical text (lowercase, single-space separated)
//! which is used for deduplication, memo signatures, and ssf overrides.

use std::fmt;

use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ColumnRef {
    pub relation: String,
    pub attribute: String,
}

impl ColumnRef {
    pub fn new(relation: impl Into<String>, attribute: impl Into<String>) -> Self {
        ColumnRef {
            relation: relation.into().to_lowercase(),
            attribute: attribute.into().to_lowercase(),
        }
    }

    /// Parses `relation.attribute`.
    pub fn parse(text: &str) -> Option<Self> {
        let (rel, attr) = text.trim().split_once('.')?;
        if rel.is_empty() || attr.is_empty() || attr.contains('.') {
            return None;
        }
        Some(ColumnRef::new(rel, attr))
    }
}

impl fmt::Display for ColumnRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.relation, self.attribute)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum CmpOp {
    #[serde(rename = "=")]
    Eq,
    #[serde(rename = "<")]
    Lt,
    #[serde(rename = ">")]
    Gt,
    #[serde(rename = "<=")]
    Le,
    #[serde(rename = ">=")]
    Ge,
    #[serde(rename = "<>")]
    Ne,
}

impl CmpOp {
    pub fn as_str(self) -> &'static str {
        match self {
            CmpOp::Eq => "=",
            CmpOp::Lt => "<",
            CmpOp::Gt => ">",
            CmpOp::Le => "<=",
            CmpOp::Ge => ">=",
            CmpOp::Ne => "<>",
        }
    }

    /// The operator with its operands swapped (`5 < x` becomes `x > 5`).
    pub fn flipped(self) -> Self {
        match self {
            CmpOp::Lt => CmpOp::Gt,
            CmpOp::Gt => CmpOp::Lt,
            CmpOp::Le => CmpOp::Ge,
            CmpOp::Ge => CmpOp::Le,
            other => other,
        }
    }
}

impl fmt::Display for CmpOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A typed constant. Numbers keep their source text so that canonical
/// forms are stable; dates compare lexically as ISO-8601 strings.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(tag = "type", content = "value", rename_all = "lowercase")]
pub enum Literal {
    Number(String),
    Str(String),
    Date(String),
}

impl fmt::Display for Literal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Literal::Number(n) => f.write_str(n),
            Literal::Str(s) => write!(f, "'{}'", s.replace('\'', "''")),
            Literal::Date(d) => write!(f, "date '{d}'"),
        }
    }
}

/// Equi-join between two relations. Endpoints are stored in sorted order
/// so `a.x = b.y` and `b.y = a.x` are the same condition.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JoinCondition {
    pub left: ColumnRef,
    pub right: ColumnRef,
    pub jsf: f64,
}

impl JoinCondition {
    pub fn new(a: ColumnRef, b: ColumnRef, jsf: f64) -> Self {
        let (left, right) = if a <= b { (a, b) } else { (b, a) };
        JoinCondition { left, right, jsf }
    }

    pub fn canonical(&self) -> String {
        format!("{} = {}", self.left, self.right)
    }

    pub fn relations(&self) -> (&str, &str) {
        (&self.left.relation, &self.right.relation)
    }

    pub fn touches(&self, relation: &str) -> bool {
        self.left.relation == relation || self.right.relation == relation
    }
}

impl fmt::Display for JoinCondition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.canonical())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectCondition {
    pub column: ColumnRef,
    pub op: CmpOp,
    pub literal: Literal,
    pub ssf: f64,
}

impl SelectCondition {
    pub fn new(column: ColumnRef, op: CmpOp, literal: Literal, ssf: f64) -> Self {
        SelectCondition {
            column,
            op,
            literal,
            ssf,
        }
    }

    pub fn canonical(&self) -> String {
        canonical_predicate(&self.column.to_string(), self.op, &self.literal)
    }

    pub fn relation(&self) -> &str {
        &self.column.relation
    }
}

impl fmt::Display for SelectCondition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.canonical())
    }
}

/// `lhs op literal`, lowercased and single-space separated.
pub fn canonical_predicate(lhs: &str, op: CmpOp, literal: &Literal) -> String {
    let text = format!("{lhs} {op} {literal}").to_lowercase();
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AggFunc {
    Sum,
    Avg,
    Count,
    Min,
    Max,
}

impl AggFunc {
    pub fn from_name(name: &str) -> Option<Self> {
        Some(match name.to_ascii_lowercase().as_str() {
            "sum" => AggFunc::Sum,
            "avg" => AggFunc::Avg,
            "count" => AggFunc::Count,
            "min" => AggFunc::Min,
            "max" => AggFunc::Max,
            _ => return None,
        })
    }

    pub fn as_str(self) -> &'static str {
        match self {
            AggFunc::Sum => "sum",
            AggFunc::Avg => "avg",
            AggFunc::Count => "count",
            AggFunc::Min => "min",
            AggFunc::Max => "max",
        }
    }
}

/// Aggregate call carried as a plan annotation; `arg == None` is `count(*)`.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Aggregate {
    pub func: AggFunc,
    pub arg: Option<ColumnRef>,
}

impl fmt::Display for Aggregate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.arg {
            Some(col) => write!(f, "{}({})", self.func.as_str(), col),
            None => write!(f, "{}(*)", self.func.as_str()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HavingCondition {
    pub aggregate: Aggregate,
    pub op: CmpOp,
    pub literal: Literal,
    pub ssf: f64,
}

impl HavingCondition {
    pub fn canonical(&self) -> String {
        canonical_predicate(&self.aggregate.to_string(), self.op, &self.literal)
    }
}

impl fmt::Display for HavingCondition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.canonical())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct OrderKey {
    pub column: ColumnRef,
    pub descending: bool,
}

impl fmt::Display for OrderKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.descending {
            write!(f, "{} desc", self.column)
        } else {
            write!(f, "{}", self.column)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn join_endpoints_are_order_insensitive() {
        let a = ColumnRef::new("Employee", "SSN");
        let b = ColumnRef::new("works_on", "ssn");
        let j1 = JoinCondition::new(a.clone(), b.clone(), 0.5);
        let j2 = JoinCondition::new(b, a, 0.5);
        assert_eq!(j1.canonical(), j2.canonical());
        assert_eq!(j1.canonical(), "employee.ssn = works_on.ssn");
    }

    #[test]
    fn select_canonical_text_is_lowercase() {
        let s = SelectCondition::new(
            ColumnRef::new("Project", "PLocation"),
            CmpOp::Eq,
            Literal::Str("Hyderabad".into()),
            0.2,
        );
        assert_eq!(s.canonical(), "project.plocation = 'hyderabad'");
    }

    #[test]
    fn column_ref_parse_rejects_malformed() {
        assert!(ColumnRef::parse("a.b").is_some());
        assert!(ColumnRef::parse("ab").is_none());
        assert!(ColumnRef::parse(".b").is_none());
        assert!(ColumnRef::parse("a.b.c").is_none());
    }
}
