//! Recursive-descent parser producing an unresolved syntax tree.

use super::lexer::{syntax_error, tokenize, Tok, Token};
use crate::error::{Error, Result};
use crate::predicate::{AggFunc, CmpOp, Literal};

#[derive(Clone, Debug)]
pub(crate) struct RawCol {
    pub qualifier: Option<String>,
    pub name: String,
}

#[derive(Clone, Debug)]
pub(crate) enum RawItem {
    Star,
    Col(RawCol),
    Agg(AggFunc, Option<RawCol>),
}

#[derive(Clone, Debug)]
pub(crate) enum RawFrom {
    Table { name: String, alias: Option<String> },
    Sub { query: Box<RawQuery>, alias: String },
}

#[derive(Clone, Debug)]
pub(crate) enum RawOperand {
    Col(RawCol),
    Lit(Literal),
}

#[derive(Clone, Debug)]
pub(crate) enum RawCond {
    Cmp(RawOperand, CmpOp, RawOperand),
    In(RawCol, Box<RawQuery>),
}

#[derive(Clone, Debug)]
pub(crate) struct RawHaving {
    pub func: AggFunc,
    pub arg: Option<RawCol>,
    pub op: CmpOp,
    pub literal: Literal,
}

#[derive(Clone, Debug, Default)]
pub(crate) struct RawQuery {
    pub items: Vec<RawItem>,
    pub from: Vec<RawFrom>,
    pub conds: Vec<RawCond>,
    pub group_by: Vec<RawCol>,
    pub having: Option<RawHaving>,
    pub order_by: Vec<(RawCol, bool)>,
}

const RESERVED: &[&str] = &[
    "select", "from", "where", "and", "or", "not", "group", "by", "having", "order", "asc", "desc",
    "in", "as", "date", "between", "like", "exists", "join", "on", "union", "distinct", "limit",
    "inner", "left", "right", "outer", "cross", "is", "null",
];

const UNSUPPORTED_KEYWORDS: &[&str] = &[
    "or", "not", "between", "like", "exists", "join", "on", "union", "distinct", "limit", "inner",
    "left", "right", "outer", "cross", "is", "null",
];

pub(crate) fn parse(text: &str) -> Result<RawQuery> {
    let mut p = Parser {
        toks: tokenize(text)?,
        pos: 0,
    };
    let q = p.query()?;
    p.eat_sym(";");
    match &p.peek().tok {
        Tok::Eof => Ok(q),
        _ => Err(p.unexpected("end of query")),
    }
}

struct Parser {
    toks: Vec<Token>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> &Token {
        &self.toks[self.pos]
    }

    fn bump(&mut self) -> Token {
        let t = self.toks[self.pos].clone();
        if !matches!(t.tok, Tok::Eof) {
            self.pos += 1;
        }
        t
    }

    fn peek_keyword(&self, kw: &str) -> bool {
        matches!(&self.peek().tok, Tok::Ident(s) if s.eq_ignore_ascii_case(kw))
    }

    fn eat_keyword(&mut self, kw: &str) -> bool {
        if self.peek_keyword(kw) {
            self.bump();
            true
        } else {
            false
        }
    }

    fn eat_sym(&mut self, sym: &str) -> bool {
        if matches!(self.peek().tok, Tok::Sym(s) if s == sym) {
            self.bump();
            true
        } else {
            false
        }
    }

    fn unexpected(&self, wanted: &str) -> Error {
        let t = self.peek();
        if let Tok::Ident(s) = &t.tok {
            let lower = s.to_ascii_lowercase();
            if UNSUPPORTED_KEYWORDS.contains(&lower.as_str()) {
                return Error::Unsupported(format!(
                    "`{}` at line {}, column {}",
                    lower.to_uppercase(),
                    t.line,
                    t.column
                ));
            }
        }
        let found = match &t.tok {
            Tok::Ident(s) => format!("`{s}`"),
            Tok::Number(n) => format!("number `{n}`"),
            Tok::Str(s) => format!("string '{s}'"),
            Tok::Sym(s) => format!("`{s}`"),
            Tok::Eof => "end of input".to_string(),
        };
        syntax_error(
            t.line,
            t.column,
            format!("expected {wanted}, found {found}"),
        )
    }

    fn expect_keyword(&mut self, kw: &str) -> Result<()> {
        if self.eat_keyword(kw) {
            Ok(())
        } else {
            Err(self.unexpected(&format!("`{}`", kw.to_uppercase())))
        }
    }

    fn expect_sym(&mut self, sym: &str) -> Result<()> {
        if self.eat_sym(sym) {
            Ok(())
        } else {
            Err(self.unexpected(&format!("`{sym}`")))
        }
    }

    fn ident(&mut self) -> Result<String> {
        match &self.peek().tok {
            Tok::Ident(s) if !RESERVED.contains(&s.to_ascii_lowercase().as_str()) => {
                let s = s.to_ascii_lowercase();
                self.bump();
                Ok(s)
            }
            _ => Err(self.unexpected("identifier")),
        }
    }

    fn query(&mut self) -> Result<RawQuery> {
        let mut q = RawQuery::default();
        self.expect_keyword("select")?;
        if self.peek_keyword("distinct") {
            return Err(self.unexpected("select list"));
        }
        loop {
            q.items.push(self.select_item()?);
            if !self.eat_sym(",") {
                break;
            }
        }
        self.expect_keyword("from")?;
        loop {
            q.from.push(self.table_ref()?);
            if !self.eat_sym(",") {
                break;
            }
        }
        if self.eat_keyword("where") {
            loop {
                q.conds.push(self.condition()?);
                if !self.eat_keyword("and") {
                    break;
                }
            }
        }
        if self.eat_keyword("group") {
            self.expect_keyword("by")?;
            loop {
                q.group_by.push(self.column()?);
                if !self.eat_sym(",") {
                    break;
                }
            }
        }
        if self.eat_keyword("having") {
            q.having = Some(self.having()?);
        }
        if self.eat_keyword("order") {
            self.expect_keyword("by")?;
            loop {
                let col = self.column()?;
                let desc = if self.eat_keyword("desc") {
                    true
                } else {
                    self.eat_keyword("asc");
                    false
                };
                q.order_by.push((col, desc));
                if !self.eat_sym(",") {
                    break;
                }
            }
        }
        Ok(q)
    }

    fn aggregate_name(&self) -> Option<AggFunc> {
        let next_is_paren = matches!(
            self.toks.get(self.pos + 1).map(|t| &t.tok),
            Some(Tok::Sym("("))
        );
        match &self.peek().tok {
            Tok::Ident(s) if next_is_paren => AggFunc::from_name(s),
            _ => None,
        }
    }

    fn aggregate(&mut self, func: AggFunc) -> Result<(AggFunc, Option<RawCol>)> {
        self.bump();
        self.expect_sym("(")?;
        let arg = if self.eat_sym("*") {
            if func != AggFunc::Count {
                return Err(self.unexpected("column"));
            }
            None
        } else {
            Some(self.column()?)
        };
        self.expect_sym(")")?;
        Ok((func, arg))
    }

    fn select_item(&mut self) -> Result<RawItem> {
        if self.eat_sym("*") {
            return Ok(RawItem::Star);
        }
        if let Some(func) = self.aggregate_name() {
            let (func, arg) = self.aggregate(func)?;
            return Ok(RawItem::Agg(func, arg));
        }
        Ok(RawItem::Col(self.column()?))
    }

    fn column(&mut self) -> Result<RawCol> {
        let first = self.ident()?;
        if self.eat_sym(".") {
            let name = self.ident()?;
            Ok(RawCol {
                qualifier: Some(first),
                name,
            })
        } else {
            Ok(RawCol {
                qualifier: None,
                name: first,
            })
        }
    }

    fn table_ref(&mut self) -> Result<RawFrom> {
        if self.eat_sym("(") {
            let query = self.query()?;
            self.expect_sym(")")?;
            self.eat_keyword("as");
            let alias = self.ident()?;
            return Ok(RawFrom::Sub {
                query: Box::new(query),
                alias,
            });
        }
        let name = self.ident()?;
        let bare_alias = matches!(&self.peek().tok, Tok::Ident(s) if !RESERVED.contains(&s.to_ascii_lowercase().as_str()));
        let alias = if self.eat_keyword("as") || bare_alias {
            Some(self.ident()?)
        } else {
            None
        };
        Ok(RawFrom::Table { name, alias })
    }

    fn literal(&mut self) -> Option<Literal> {
        let lit = match &self.peek().tok {
            Tok::Number(n) => Literal::Number(n.clone()),
            Tok::Str(s) => Literal::Str(s.clone()),
            Tok::Ident(s) if s.eq_ignore_ascii_case("date") => {
                match self.toks.get(self.pos + 1).map(|t| &t.tok) {
                    Some(Tok::Str(d)) => {
                        let d = d.clone();
                        self.bump();
                        Literal::Date(d)
                    }
                    _ => return None,
                }
            }
            _ => return None,
        };
        self.bump();
        Some(lit)
    }

    fn operand(&mut self) -> Result<RawOperand> {
        if self.peek_keyword("date")
            && !matches!(
                self.toks.get(self.pos + 1).map(|t| &t.tok),
                Some(Tok::Str(_))
            )
        {
            return Err(self.unexpected("date literal"));
        }
        if let Some(lit) = self.literal() {
            return Ok(RawOperand::Lit(lit));
        }
        if self.aggregate_name().is_some() {
            let t = self.peek();
            return Err(syntax_error(
                t.line,
                t.column,
                "aggregate not allowed in WHERE",
            ));
        }
        if matches!(self.peek().tok, Tok::Sym("(")) {
            let t = self.peek();
            return Err(Error::Unsupported(format!(
                "parenthesized expression at line {}, column {}",
                t.line, t.column
            )));
        }
        Ok(RawOperand::Col(self.column()?))
    }

    fn cmp_op(&mut self) -> Result<CmpOp> {
        let op = match self.peek().tok {
            Tok::Sym("=") => CmpOp::Eq,
            Tok::Sym("<") => CmpOp::Lt,
            Tok::Sym(">") => CmpOp::Gt,
            Tok::Sym("<=") => CmpOp::Le,
            Tok::Sym(">=") => CmpOp::Ge,
            Tok::Sym("<>") => CmpOp::Ne,
            _ => return Err(self.unexpected("comparison operator")),
        };
        self.bump();
        Ok(op)
    }

    fn condition(&mut self) -> Result<RawCond> {
        let lhs = self.operand()?;
        if self.eat_keyword("in") {
            let col = match lhs {
                RawOperand::Col(c) => c,
                RawOperand::Lit(_) => return Err(self.unexpected("column before IN")),
            };
            self.expect_sym("(")?;
            let sub = self.query()?;
            self.expect_sym(")")?;
            return Ok(RawCond::In(col, Box::new(sub)));
        }
        let op = self.cmp_op()?;
        let rhs = self.operand()?;
        if self.peek_keyword("or") {
            return Err(self.unexpected("AND"));
        }
        Ok(RawCond::Cmp(lhs, op, rhs))
    }

    fn having(&mut self) -> Result<RawHaving> {
        let Some(func) = self.aggregate_name() else {
            return Err(self.unexpected("aggregate in HAVING"));
        };
        let (func, arg) = self.aggregate(func)?;
        let op = self.cmp_op()?;
        let literal = self.literal().ok_or_else(|| self.unexpected("literal"))?;
        if self.peek_keyword("and") || self.peek_keyword("or") {
            let t = self.peek();
            return Err(Error::Unsupported(format!(
                "HAVING with more than one predicate at line {}, column {}",
                t.line, t.column
            )));
        }
        Ok(RawHaving {
            func,
            arg,
            op,
            literal,
        })
    }
}
