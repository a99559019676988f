//! Recursive-descent parser for the SQL subset and its lowering into
//! [`LogicalPlan`]. The grammar covers:
//!
//! ```text
//! [WITH name AS (select) [, ...]]
//! SELECT expr [AS alias] [, ...]
//! [FROM table [alias] [[LEFT] JOIN table [alias] ON cond]*]
//! [WHERE pred] [GROUP BY cols] [ORDER BY expr [ASC|DESC], ...] [LIMIT n]
//! ```
//!
//! with scalar subqueries in WHERE/SELECT and one level of equi-correlated
//! scalar-aggregate subquery. Anything else is reported as unsupported, not
//! silently misparsed.

use std::collections::HashMap;

use super::lexer::{lex, Tok};
use super::{AggSpec, FilterExpr, JoinKind, LogicalPlan, PacMode, PlanError, ProjItem, SortKey};
use crate::aggregates::AggKind;
use crate::relcore::{parse_date, BinaryOp, ScalarExpr, Schema, Value, ValueType};

#[derive(Debug, Clone)]
enum AstExpr {
    Name { qualifier: Option<String>, name: String, pos: usize },
    Lit(Value),
    Binary { op: BinaryOp, left: Box<AstExpr>, right: Box<AstExpr> },
    Not(Box<AstExpr>),
    Neg(Box<AstExpr>),
    Case { branches: Vec<(AstExpr, AstExpr)>, otherwise: Option<Box<AstExpr>> },
    Cast { expr: Box<AstExpr>, ty: ValueType },
    Agg { kind: AggKind, arg: Option<Box<AstExpr>>, pos: usize },
    Subquery { stmt: Box<SelectStmt>, pos: usize },
}

#[derive(Debug, Clone)]
enum SelectItem {
    Star,
    Expr { expr: AstExpr, alias: Option<String> },
}

#[derive(Debug, Clone)]
struct TableRef {
    table: String,
    alias: String,
}

#[derive(Debug, Clone)]
struct JoinClause {
    kind: JoinKind,
    table: TableRef,
    on: AstExpr,
}

#[derive(Debug, Clone)]
struct SelectStmt {
    ctes: Vec<(String, SelectStmt)>,
    items: Vec<SelectItem>,
    from: Option<(TableRef, Vec<JoinClause>)>,
    filter: Option<AstExpr>,
    group_by: Vec<(Option<String>, String)>,
    order_by: Vec<(AstExpr, bool)>,
    limit: Option<usize>,
}

// ---------------------------------------------------------------------------
// token cursor

struct Cursor {
    toks: Vec<(Tok, usize)>,
    at: usize,
    end: usize,
}

const REJECTED_KEYWORDS: [&str; 11] = [
    "over", "union", "intersect", "except", "recursive", "exists", "in", "having", "distinct",
    "window", "partition",
];

impl Cursor {
    fn new(text: &str) -> Result<Cursor, PlanError> {
        let toks = lex(text)?;
        for (t, _) in &toks {
            if let Tok::Ident(w) = t {
                if REJECTED_KEYWORDS.contains(&w.as_str()) {
                    return Err(PlanError::Unsupported { construct: w.to_uppercase() });
                }
            }
        }
        let end = text.len();
        Ok(Cursor { toks, at: 0, end })
    }

    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.at).map(|(t, _)| t)
    }

    fn pos(&self) -> usize {
        self.toks.get(self.at).map_or(self.end, |(_, p)| *p)
    }

    fn next(&mut self) -> Option<Tok> {
        let t = self.toks.get(self.at).map(|(t, _)| t.clone());
        if t.is_some() {
            self.at += 1;
        }
        t
    }

    fn eat_kw(&mut self, kw: &str) -> bool {
        if let Some(Tok::Ident(w)) = self.peek() {
            if w == kw {
                self.at += 1;
                return true;
            }
        }
        false
    }

    fn peek_kw(&self, kw: &str) -> bool {
        matches!(self.peek(), Some(Tok::Ident(w)) if w == kw)
    }

    fn expect_kw(&mut self, kw: &str) -> Result<(), PlanError> {
        if self.eat_kw(kw) {
            Ok(())
        } else {
            Err(PlanError::syntax(
                self.pos(),
                format!("expected {}", kw.to_uppercase()),
            ))
        }
    }

    fn eat_punct(&mut self, p: &str) -> bool {
        if let Some(Tok::Punct(q)) = self.peek() {
            if *q == p {
                self.at += 1;
                return true;
            }
        }
        false
    }

    fn expect_punct(&mut self, p: &str) -> Result<(), PlanError> {
        if self.eat_punct(p) {
            Ok(())
        } else {
            Err(PlanError::syntax(self.pos(), format!("expected `{p}`")))
        }
    }

    fn ident(&mut self) -> Result<String, PlanError> {
        match self.next() {
            Some(Tok::Ident(w)) => Ok(w),
            other => Err(PlanError::syntax(
                self.pos(),
                format!(
                    "expected identifier{}",
                    other.map_or(String::new(), |t| format!(", found {}", t.describe()))
                ),
            )),
        }
    }
}

const KEYWORDS: [&str; 27] = [
    "select", "from", "where", "group", "by", "order", "limit", "join", "left", "inner", "on",
    "as", "and", "or", "not", "case", "when", "then", "else", "end", "cast", "date", "true",
    "false", "null", "with", "asc",
];

fn is_keyword(w: &str) -> bool {
    KEYWORDS.contains(&w) || w == "desc"
}

// ---------------------------------------------------------------------------
// grammar

fn parse_select(cur: &mut Cursor) -> Result<SelectStmt, PlanError> {
    let mut ctes = Vec::new();
    if cur.eat_kw("with") {
        loop {
            let name = cur.ident()?;
            cur.expect_kw("as")?;
            cur.expect_punct("(")?;
            let body = parse_select(cur)?;
            cur.expect_punct(")")?;
            ctes.push((name, body));
            if !cur.eat_punct(",") {
                break;
            }
        }
    }
    cur.expect_kw("select")?;

    let mut items = Vec::new();
    loop {
        if cur.eat_punct("*") {
            items.push(SelectItem::Star);
        } else {
            let expr = parse_expr(cur)?;
            let alias = if cur.eat_kw("as") {
                Some(cur.ident()?)
            } else if let Some(Tok::Ident(w)) = cur.peek() {
                if !is_keyword(w) {
                    Some(cur.ident()?)
                } else {
                    None
                }
            } else {
                None
            };
            items.push(SelectItem::Expr { expr, alias });
        }
        if !cur.eat_punct(",") {
            break;
        }
    }
    if items.is_empty() {
        return Err(PlanError::syntax(cur.pos(), "empty select list"));
    }

    let from = if cur.eat_kw("from") {
        let base = parse_table_ref(cur)?;
        let mut joins = Vec::new();
        loop {
            let kind = if cur.eat_kw("left") {
                cur.eat_kw("join");
                JoinKind::Left
            } else if cur.eat_kw("inner") {
                cur.expect_kw("join")?;
                JoinKind::Inner
            } else if cur.eat_kw("join") {
                JoinKind::Inner
            } else {
                break;
            };
            let table = parse_table_ref(cur)?;
            cur.expect_kw("on")?;
            let on = parse_expr(cur)?;
            joins.push(JoinClause { kind, table, on });
        }
        Some((base, joins))
    } else {
        None
    };

    let filter = if cur.eat_kw("where") { Some(parse_expr(cur)?) } else { None };

    let mut group_by = Vec::new();
    if cur.eat_kw("group") {
        cur.expect_kw("by")?;
        loop {
            let first = cur.ident()?;
            if cur.eat_punct(".") {
                group_by.push((Some(first), cur.ident()?));
            } else {
                group_by.push((None, first));
            }
            if !cur.eat_punct(",") {
                break;
            }
        }
    }

    let mut order_by = Vec::new();
    if cur.eat_kw("order") {
        cur.expect_kw("by")?;
        loop {
            let e = parse_expr(cur)?;
            let asc = if cur.eat_kw("desc") {
                false
            } else {
                cur.eat_kw("asc");
                true
            };
            order_by.push((e, asc));
            if !cur.eat_punct(",") {
                break;
            }
        }
    }

    let limit = if cur.eat_kw("limit") {
        match cur.next() {
            Some(Tok::Int(n)) if n >= 0 => Some(n as usize),
            _ => return Err(PlanError::syntax(cur.pos(), "LIMIT expects a nonnegative integer")),
        }
    } else {
        None
    };

    Ok(SelectStmt { ctes, items, from, filter, group_by, order_by, limit })
}

fn parse_table_ref(cur: &mut Cursor) -> Result<TableRef, PlanError> {
    let table = cur.ident()?;
    let alias = if cur.eat_kw("as") {
        cur.ident()?
    } else if let Some(Tok::Ident(w)) = cur.peek() {
        if !is_keyword(w) {
            cur.ident()?
        } else {
            table.clone()
        }
    } else {
        table.clone()
    };
    Ok(TableRef { table, alias })
}

fn parse_expr(cur: &mut Cursor) -> Result<AstExpr, PlanError> {
    parse_or(cur)
}

fn parse_or(cur: &mut Cursor) -> Result<AstExpr, PlanError> {
    let mut left = parse_and(cur)?;
    while cur.eat_kw("or") {
        let right = parse_and(cur)?;
        left = AstExpr::Binary { op: BinaryOp::Or, left: Box::new(left), right: Box::new(right) };
    }
    Ok(left)
}

fn parse_and(cur: &mut Cursor) -> Result<AstExpr, PlanError> {
    let mut left = parse_not(cur)?;
    while cur.eat_kw("and") {
        let right = parse_not(cur)?;
        left = AstExpr::Binary { op: BinaryOp::And, left: Box::new(left), right: Box::new(right) };
    }
    Ok(left)
}

fn parse_not(cur: &mut Cursor) -> Result<AstExpr, PlanError> {
    if cur.eat_kw("not") {
        Ok(AstExpr::Not(Box::new(parse_not(cur)?)))
    } else {
        parse_cmp(cur)
    }
}

fn parse_cmp(cur: &mut Cursor) -> Result<AstExpr, PlanError> {
    let left = parse_additive(cur)?;
    let op = match cur.peek() {
        Some(Tok::Punct("<")) => Some(BinaryOp::Lt),
        Some(Tok::Punct("<=")) => Some(BinaryOp::Le),
        Some(Tok::Punct("=")) => Some(BinaryOp::Eq),
        Some(Tok::Punct("<>")) => Some(BinaryOp::Ne),
        Some(Tok::Punct(">=")) => Some(BinaryOp::Ge),
        Some(Tok::Punct(">")) => Some(BinaryOp::Gt),
        _ => None,
    };
    match op {
        Some(op) => {
            cur.next();
            let right = parse_additive(cur)?;
            Ok(AstExpr::Binary { op, left: Box::new(left), right: Box::new(right) })
        }
        None => Ok(left),
    }
}

fn parse_additive(cur: &mut Cursor) -> Result<AstExpr, PlanError> {
    let mut left = parse_multiplicative(cur)?;
    loop {
        let op = match cur.peek() {
            Some(Tok::Punct("+")) => BinaryOp::Add,
            Some(Tok::Punct("-")) => BinaryOp::Sub,
            _ => break,
        };
        cur.next();
        let right = parse_multiplicative(cur)?;
        left = AstExpr::Binary { op, left: Box::new(left), right: Box::new(right) };
    }
    Ok(left)
}

fn parse_multiplicative(cur: &mut Cursor) -> Result<AstExpr, PlanError> {
    let mut left = parse_unary(cur)?;
    loop {
        let op = match cur.peek() {
            Some(Tok::Punct("*")) => BinaryOp::Mul,
            Some(Tok::Punct("/")) => BinaryOp::Div,
            _ => break,
        };
        cur.next();
        let right = parse_unary(cur)?;
        left = AstExpr::Binary { op, left: Box::new(left), right: Box::new(right) };
    }
    Ok(left)
}

fn parse_unary(cur: &mut Cursor) -> Result<AstExpr, PlanError> {
    if cur.eat_punct("-") {
        Ok(AstExpr::Neg(Box::new(parse_unary(cur)?)))
    } else {
        parse_atom(cur)
    }
}

fn agg_kind(name: &str) -> Option<AggKind> {
    match name {
        "count" => Some(AggKind::Count),
        "sum" => Some(AggKind::Sum),
        "avg" => Some(AggKind::Avg),
        "min" => Some(AggKind::Min),
        "max" => Some(AggKind::Max),
        _ => None,
    }
}

fn parse_atom(cur: &mut Cursor) -> Result<AstExpr, PlanError> {
    let pos = cur.pos();
    match cur.next() {
        Some(Tok::Int(v)) => Ok(AstExpr::Lit(Value::Int64(v))),
        Some(Tok::Float(v)) => Ok(AstExpr::Lit(Value::Float64(v))),
        Some(Tok::Str(s)) => Ok(AstExpr::Lit(Value::Text(s))),
        Some(Tok::Punct("(")) => {
            if cur.peek_kw("select") {
                let stmt = parse_select(cur)?;
                cur.expect_punct(")")?;
                Ok(AstExpr::Subquery { stmt: Box::new(stmt), pos })
            } else {
                let e = parse_expr(cur)?;
                cur.expect_punct(")")?;
                Ok(e)
            }
        }
        Some(Tok::Ident(w)) => match w.as_str() {
            "true" => Ok(AstExpr::Lit(Value::Boolean(true))),
            "false" => Ok(AstExpr::Lit(Value::Boolean(false))),
            "null" => Ok(AstExpr::Lit(Value::Null)),
            "date" => match cur.next() {
                Some(Tok::Str(s)) => match parse_date(&s) {
                    Some(d) => Ok(AstExpr::Lit(Value::Date(d))),
                    None => Err(PlanError::syntax(pos, format!("bad date literal '{s}'"))),
                },
                _ => Err(PlanError::syntax(pos, "DATE expects a string literal")),
            },
            "case" => {
                let mut branches = Vec::new();
                while cur.eat_kw("when") {
                    let c = parse_expr(cur)?;
                    cur.expect_kw("then")?;
                    let r = parse_expr(cur)?;
                    branches.push((c, r));
                }
                if branches.is_empty() {
                    return Err(PlanError::syntax(cur.pos(), "CASE needs at least one WHEN"));
                }
                let otherwise = if cur.eat_kw("else") {
                    Some(Box::new(parse_expr(cur)?))
                } else {
                    None
                };
                cur.expect_kw("end")?;
                Ok(AstExpr::Case { branches, otherwise })
            }
            "cast" => {
                cur.expect_punct("(")?;
                let e = parse_expr(cur)?;
                cur.expect_kw("as")?;
                let ty_name = cur.ident()?;
                let ty = type_name(&ty_name).ok_or_else(|| {
                    PlanError::syntax(cur.pos(), format!("unknown type `{ty_name}`"))
                })?;
                // swallow optional (p[, s]) on decimal-style names
                if cur.eat_punct("(") {
                    while !cur.eat_punct(")") {
                        if cur.next().is_none() {
                            return Err(PlanError::syntax(cur.pos(), "unterminated type args"));
                        }
                    }
                }
                cur.expect_punct(")")?;
                Ok(AstExpr::Cast { expr: Box::new(e), ty })
            }
            _ => {
                if cur.eat_punct("(") {
                    let kind = match agg_kind(&w) {
                        Some(k) => k,
                        None => {
                            return Err(PlanError::Unsupported {
                                construct: format!("function {w}()"),
                            })
                        }
                    };
                    if cur.eat_punct("*") {
                        cur.expect_punct(")")?;
                        if kind != AggKind::Count {
                            return Err(PlanError::syntax(pos, "only COUNT accepts *"));
                        }
                        return Ok(AstExpr::Agg { kind: AggKind::CountStar, arg: None, pos });
                    }
                    let arg = parse_expr(cur)?;
                    cur.expect_punct(")")?;
                    Ok(AstExpr::Agg { kind, arg: Some(Box::new(arg)), pos })
                } else if cur.eat_punct(".") {
                    let name = cur.ident()?;
                    Ok(AstExpr::Name { qualifier: Some(w), name, pos })
                } else {
                    Ok(AstExpr::Name { qualifier: None, name: w, pos })
                }
            }
        },
        other => Err(PlanError::syntax(
            pos,
            format!(
                "expected expression{}",
                other.map_or(String::new(), |t| format!(", found {}", t.describe()))
            ),
        )),
    }
}

pub(crate) fn type_name(name: &str) -> Option<ValueType> {
    match name {
        "int" | "integer" | "bigint" | "smallint" | "tinyint" | "int64" => Some(ValueType::Int64),
        "double" | "float" | "real" | "float64" | "decimal" | "numeric" => {
            Some(ValueType::Float64)
        }
        "varchar" | "text" | "char" | "string" => Some(ValueType::Text),
        "date" => Some(ValueType::Date),
        "boolean" | "bool" => Some(ValueType::Boolean),
        _ => None,
    }
}

// ---------------------------------------------------------------------------
// lowering

struct Scope<'a> {
    /// (alias, visible schema) in FROM order
    tables: Vec<(String, Schema)>,
    outer: Option<&'a Scope<'a>>,
}

enum Resolution {
    Local(String),
    Outer(String),
}

impl<'a> Scope<'a> {
    fn resolve(&self, qualifier: Option<&str>, name: &str, pos: usize) -> Result<Resolution, PlanError> {
        let mut hits = Vec::new();
        for (alias, schema) in &self.tables {
            if let Some(q) = qualifier {
                if q != alias {
                    continue;
                }
            }
            if schema.index_of(name).is_some() {
                hits.push(alias.clone());
            }
        }
        match hits.len() {
            1 => Ok(Resolution::Local(name.to_string())),
            0 => match self.outer {
                Some(outer) => match outer.resolve(qualifier, name, pos)? {
                    Resolution::Local(n) | Resolution::Outer(n) => Ok(Resolution::Outer(n)),
                },
                None => Err(PlanError::syntax(
                    pos,
                    format!(
                        "unknown column `{}{name}`",
                        qualifier.map_or(String::new(), |q| format!("{q}."))
                    ),
                )),
            },
            _ => Err(PlanError::syntax(pos, format!("ambiguous column `{name}`"))),
        }
    }
}

struct Lowerer<'a> {
    tables: &'a HashMap<String, Schema>,
    ctes: Vec<(String, Schema)>,
    sq_counter: usize,
}

/// Parses one SELECT statement into a logical plan. Table schemas are needed
/// to resolve columns, expand `*`, and detect subquery correlation.
pub fn parse_query(
    text: &str,
    tables: &HashMap<String, Schema>,
) -> Result<LogicalPlan, PlanError> {
    let mut cur = Cursor::new(text)?;
    let stmt = parse_select(&mut cur)?;
    if let Some(t) = cur.peek() {
        return Err(PlanError::syntax(cur.pos(), format!("trailing input {}", t.describe())));
    }
    let mut lower = Lowerer { tables, ctes: Vec::new(), sq_counter: 0 };
    lower.lower_select(&stmt, None)
}

impl<'a> Lowerer<'a> {
    fn table_schema(&self, name: &str) -> Result<Schema, PlanError> {
        if let Some((_, s)) = self.ctes.iter().rev().find(|(n, _)| n == name) {
            return Ok(s.clone());
        }
        self.tables
            .get(name)
            .cloned()
            .ok_or_else(|| PlanError::Semantic(format!("unknown table `{name}`")))
    }

    fn lower_select(
        &mut self,
        stmt: &SelectStmt,
        outer: Option<&Scope<'_>>,
    ) -> Result<LogicalPlan, PlanError> {
        // CTEs first: they are visible to the main body and to each other in
        // declaration order.
        let mut cte_plans: Vec<(String, LogicalPlan)> = Vec::new();
        for (name, body) in &stmt.ctes {
            let plan = self.lower_select(body, None)?;
            let schema = super::schema_of(&plan, self.tables).map_err(|e| match e {
                PlanError::Semantic(m) => PlanError::Semantic(format!("in CTE `{name}`: {m}")),
                other => other,
            })?;
            // schema_of cannot see sibling CTEs by itself; register as we go
            self.ctes.push((name.clone(), schema));
            cte_plans.push((name.clone(), plan));
        }

        let mut plan;
        let mut scope_tables: Vec<(String, Schema)> = Vec::new();
        match &stmt.from {
            Some((base, joins)) => {
                let base_schema = self.table_schema(&base.table)?;
                scope_tables.push((base.alias.clone(), base_schema));
                plan = LogicalPlan::Scan { table: base.table.clone() };
                for j in joins {
                    let right_schema = self.table_schema(&j.table.table)?;
                    scope_tables.push((j.table.alias.clone(), right_schema.clone()));
                    let scope = Scope { tables: scope_tables.clone(), outer };
                    let (lk, rk, residual) =
                        self.split_join_condition(&j.on, &scope, &right_schema)?;
                    plan = LogicalPlan::Join {
                        left: Box::new(plan),
                        right: Box::new(LogicalPlan::Scan { table: j.table.table.clone() }),
                        kind: j.kind,
                        left_keys: lk,
                        right_keys: rk,
                        residual,
                    };
                }
            }
            None => {
                if stmt.items.iter().any(|i| matches!(i, SelectItem::Star)) {
                    return Err(PlanError::Semantic("SELECT * needs a FROM clause".into()));
                }
                // constant select: a one-row relation with no columns
                plan = LogicalPlan::Scan { table: "#dual".to_string() };
            }
        }

        let scope = Scope { tables: scope_tables.clone(), outer };

        // WHERE: extract scalar subqueries, then filter
        if let Some(filter) = &stmt.filter {
            let (expr, plan2) = self.lower_expr_with_subqueries(filter, &scope, plan)?;
            plan = LogicalPlan::Filter { input: Box::new(plan2), pred: FilterExpr::Scalar(expr) };
        }

        // split select items into aggregate and plain paths
        let has_aggs = stmt.items.iter().any(|i| match i {
            SelectItem::Expr { expr, .. } => contains_agg(expr),
            SelectItem::Star => false,
        }) || !stmt.group_by.is_empty()
            || stmt.order_by.iter().any(|(e, _)| contains_agg(e));

        let items = self.expand_items(&stmt.items, &scope)?;

        let mut output: Vec<ProjItem> = Vec::new();
        if has_aggs {
            let mut group_keys = Vec::new();
            for (q, name) in &stmt.group_by {
                match scope.resolve(q.as_deref(), name, 0)? {
                    Resolution::Local(n) => group_keys.push(n),
                    Resolution::Outer(_) => {
                        return Err(PlanError::Semantic(format!(
                            "GROUP BY column `{name}` is not in scope"
                        )))
                    }
                }
            }
            let mut specs: Vec<AggSpec> = Vec::new();
            for (expr, alias) in &items {
                let lowered = self.lower_agg_item(expr, &scope, &group_keys, &mut specs)?;
                output.push(ProjItem { expr: super::PlanExpr::Scalar(lowered), alias: alias.clone() });
            }
            plan = LogicalPlan::Aggregate { input: Box::new(plan), group_keys, specs };
            plan = LogicalPlan::Project { input: Box::new(plan), items: output.clone() };
        } else {
            for (expr, alias) in &items {
                let (lowered, plan2) = self.lower_expr_with_subqueries(expr, &scope, plan)?;
                plan = plan2;
                output.push(ProjItem { expr: super::PlanExpr::Scalar(lowered), alias: alias.clone() });
            }
            plan = LogicalPlan::Project { input: Box::new(plan), items: output.clone() };
        }

        // ORDER BY resolves against the output schema
        if !stmt.order_by.is_empty() {
            let out_schema = Schema::new(
                output
                    .iter()
                    .map(|i| Schema::col(&i.alias, ValueType::Float64))
                    .collect::<Vec<_>>(),
            )
            .map_err(|_| PlanError::Semantic("duplicate output column name".into()))?;
            let out_scope =
                Scope { tables: vec![("#out".to_string(), out_schema)], outer: None };
            let mut keys = Vec::new();
            for (e, asc) in &stmt.order_by {
                let lowered = self.lower_scalar(e, &out_scope)?;
                keys.push(SortKey { expr: lowered, asc: *asc });
            }
            plan = LogicalPlan::Sort { input: Box::new(plan), keys };
        }

        if let Some(n) = stmt.limit {
            plan = LogicalPlan::Limit { input: Box::new(plan), n };
        }

        for (name, body) in cte_plans.into_iter().rev() {
            self.ctes.pop();
            plan = LogicalPlan::Cte { name, body: Box::new(body), rest: Box::new(plan) };
        }
        Ok(plan)
    }

    fn expand_items(
        &mut self,
        items: &[SelectItem],
        scope: &Scope<'_>,
    ) -> Result<Vec<(AstExpr, String)>, PlanError> {
        let mut out = Vec::new();
        for (i, item) in items.iter().enumerate() {
            match item {
                SelectItem::Star => {
                    for (_, schema) in &scope.tables {
                        for c in &schema.columns {
                            out.push((
                                AstExpr::Name { qualifier: None, name: c.name.clone(), pos: 0 },
                                c.name.clone(),
                            ));
                        }
                    }
                }
                SelectItem::Expr { expr, alias } => {
                    let alias = alias.clone().unwrap_or_else(|| default_alias(expr, i));
                    out.push((expr.clone(), alias));
                }
            }
        }
        Ok(out)
    }

    /// Lowers one select item of an aggregate query: aggregate calls become
    /// specs, everything else must be a group key or constant.
    fn lower_agg_item(
        &mut self,
        expr: &AstExpr,
        scope: &Scope<'_>,
        group_keys: &[String],
        specs: &mut Vec<AggSpec>,
    ) -> Result<ScalarExpr, PlanError> {
        match expr {
            AstExpr::Agg { kind, arg, pos } => {
                let input = match arg {
                    Some(a) => {
                        if contains_agg(a) {
                            return Err(PlanError::syntax(*pos, "nested aggregates"));
                        }
                        Some(self.lower_scalar(a, scope)?)
                    }
                    None => None,
                };
                let alias = format!("#a{}", specs.len());
                specs.push(AggSpec { kind: *kind, input, alias: alias.clone(), pac: PacMode::None });
                Ok(ScalarExpr::col(alias))
            }
            AstExpr::Name { qualifier, name, pos } => {
                match scope.resolve(qualifier.as_deref(), name, *pos)? {
                    Resolution::Local(n) => {
                        if !group_keys.contains(&n) {
                            return Err(PlanError::Semantic(format!(
                                "column `{n}` must appear in GROUP BY or inside an aggregate"
                            )));
                        }
                        Ok(ScalarExpr::col(n))
                    }
                    Resolution::Outer(n) => Ok(ScalarExpr::col(n)),
                }
            }
            AstExpr::Lit(v) => Ok(ScalarExpr::lit(v.clone())),
            AstExpr::Binary { op, left, right } => Ok(ScalarExpr::binary(
                *op,
                self.lower_agg_item(left, scope, group_keys, specs)?,
                self.lower_agg_item(right, scope, group_keys, specs)?,
            )),
            AstExpr::Not(e) => Ok(ScalarExpr::Not(Box::new(
                self.lower_agg_item(e, scope, group_keys, specs)?,
            ))),
            AstExpr::Neg(e) => Ok(ScalarExpr::Neg(Box::new(
                self.lower_agg_item(e, scope, group_keys, specs)?,
            ))),
            AstExpr::Case { branches, otherwise } => {
                let mut bs = Vec::new();
                for (c, r) in branches {
                    bs.push((
                        self.lower_agg_item(c, scope, group_keys, specs)?,
                        self.lower_agg_item(r, scope, group_keys, specs)?,
                    ));
                }
                let o = match otherwise {
                    Some(o) => {
                        Some(Box::new(self.lower_agg_item(o, scope, group_keys, specs)?))
                    }
                    None => None,
                };
                Ok(ScalarExpr::Case { branches: bs, otherwise: o })
            }
            AstExpr::Cast { expr, ty } => Ok(ScalarExpr::Cast {
                expr: Box::new(self.lower_agg_item(expr, scope, group_keys, specs)?),
                ty: *ty,
            }),
            AstExpr::Subquery { pos, .. } => Err(PlanError::syntax(
                *pos,
                "scalar subqueries are not supported inside aggregate select lists",
            )),
        }
    }

    /// Plain scalar lowering; aggregates and subqueries are rejected.
    fn lower_scalar(&mut self, expr: &AstExpr, scope: &Scope<'_>) -> Result<ScalarExpr, PlanError> {
        match expr {
            AstExpr::Name { qualifier, name, pos } => {
                match scope.resolve(qualifier.as_deref(), name, *pos)? {
                    Resolution::Local(n) | Resolution::Outer(n) => Ok(ScalarExpr::col(n)),
                }
            }
            AstExpr::Lit(v) => Ok(ScalarExpr::lit(v.clone())),
            AstExpr::Binary { op, left, right } => Ok(ScalarExpr::binary(
                *op,
                self.lower_scalar(left, scope)?,
                self.lower_scalar(right, scope)?,
            )),
            AstExpr::Not(e) => Ok(ScalarExpr::Not(Box::new(self.lower_scalar(e, scope)?))),
            AstExpr::Neg(e) => Ok(ScalarExpr::Neg(Box::new(self.lower_scalar(e, scope)?))),
            AstExpr::Case { branches, otherwise } => {
                let mut bs = Vec::new();
                for (c, r) in branches {
                    bs.push((self.lower_scalar(c, scope)?, self.lower_scalar(r, scope)?));
                }
                let o = match otherwise {
                    Some(o) => Some(Box::new(self.lower_scalar(o, scope)?)),
                    None => None,
                };
                Ok(ScalarExpr::Case { branches: bs, otherwise: o })
            }
            AstExpr::Cast { expr, ty } => {
                Ok(ScalarExpr::Cast { expr: Box::new(self.lower_scalar(expr, scope)?), ty: *ty })
            }
            AstExpr::Agg { pos, .. } => {
                Err(PlanError::syntax(*pos, "aggregate not allowed here"))
            }
            AstExpr::Subquery { pos, .. } => {
                Err(PlanError::syntax(*pos, "subquery not allowed here"))
            }
        }
    }

    /// Lowers an expression that may contain scalar subqueries, attaching
    /// each one to the plan as a `SubqueryScalar` node and replacing it with
    /// a reference to the subquery's value column.
    fn lower_expr_with_subqueries(
        &mut self,
        expr: &AstExpr,
        scope: &Scope<'_>,
        plan: LogicalPlan,
    ) -> Result<(ScalarExpr, LogicalPlan), PlanError> {
        let mut plan = plan;
        let lowered = self.lower_with_sq(expr, scope, &mut plan)?;
        Ok((lowered, plan))
    }

    fn lower_with_sq(
        &mut self,
        expr: &AstExpr,
        scope: &Scope<'_>,
        plan: &mut LogicalPlan,
    ) -> Result<ScalarExpr, PlanError> {
        match expr {
            AstExpr::Subquery { stmt, pos } => {
                let (node, alias) = self.lower_subquery(stmt, scope, *pos)?;
                let input = std::mem::replace(plan, LogicalPlan::Scan { table: String::new() });
                *plan = LogicalPlan::SubqueryScalar {
                    input: Box::new(input),
                    subplan: Box::new(node.subplan),
                    correlation: node.correlation,
                    alias: alias.clone(),
                };
                Ok(ScalarExpr::col(alias))
            }
            AstExpr::Binary { op, left, right } => Ok(ScalarExpr::binary(
                *op,
                self.lower_with_sq(left, scope, plan)?,
                self.lower_with_sq(right, scope, plan)?,
            )),
            AstExpr::Not(e) => Ok(ScalarExpr::Not(Box::new(self.lower_with_sq(e, scope, plan)?))),
            AstExpr::Neg(e) => Ok(ScalarExpr::Neg(Box::new(self.lower_with_sq(e, scope, plan)?))),
            AstExpr::Case { branches, otherwise } => {
                let mut bs = Vec::new();
                for (c, r) in branches {
                    bs.push((
                        self.lower_with_sq(c, scope, plan)?,
                        self.lower_with_sq(r, scope, plan)?,
                    ));
                }
                let o = match otherwise {
                    Some(o) => Some(Box::new(self.lower_with_sq(o, scope, plan)?)),
                    None => None,
                };
                Ok(ScalarExpr::Case { branches: bs, otherwise: o })
            }
            AstExpr::Cast { expr, ty } => Ok(ScalarExpr::Cast {
                expr: Box::new(self.lower_with_sq(expr, scope, plan)?),
                ty: *ty,
            }),
            other => self.lower_scalar(other, scope),
        }
    }

    fn lower_subquery(
        &mut self,
        stmt: &SelectStmt,
        outer: &Scope<'_>,
        pos: usize,
    ) -> Result<(SubqueryParts, String), PlanError> {
        if !stmt.ctes.is_empty() || !stmt.group_by.is_empty() || !stmt.order_by.is_empty() {
            return Err(PlanError::syntax(pos, "subquery must be a bare scalar aggregate"));
        }
        let [SelectItem::Expr { expr: AstExpr::Agg { kind, arg, .. }, .. }] = stmt.items.as_slice()
        else {
            return Err(PlanError::syntax(
                pos,
                "subquery must select exactly one aggregate expression",
            ));
        };

        let sq_id = self.sq_counter;
        self.sq_counter += 1;
        let value_alias = format!("#sq{sq_id}");

        let Some((base, joins)) = &stmt.from else {
            return Err(PlanError::syntax(pos, "subquery needs a FROM clause"));
        };
        let mut scope_tables = vec![(base.alias.clone(), self.table_schema(&base.table)?)];
        let mut inner_plan = LogicalPlan::Scan { table: base.table.clone() };
        for j in joins {
            let right_schema = self.table_schema(&j.table.table)?;
            scope_tables.push((j.table.alias.clone(), right_schema.clone()));
            let scope = Scope { tables: scope_tables.clone(), outer: Some(outer) };
            let (lk, rk, residual) = self.split_join_condition(&j.on, &scope, &right_schema)?;
            inner_plan = LogicalPlan::Join {
                left: Box::new(inner_plan),
                right: Box::new(LogicalPlan::Scan { table: j.table.table.clone() }),
                kind: j.kind,
                left_keys: lk,
                right_keys: rk,
                residual,
            };
        }
        let inner_scope = Scope { tables: scope_tables, outer: Some(outer) };

        // split the subquery WHERE into equi-correlation pairs and the
        // purely local remainder
        let mut correlation: Vec<(String, String)> = Vec::new();
        let mut local: Vec<ScalarExpr> = Vec::new();
        if let Some(filter) = &stmt.filter {
            for conj in split_conjuncts(filter) {
                if let Some((outer_col, inner_col)) =
                    self.as_correlation(&conj, &inner_scope)?
                {
                    correlation.push((outer_col, inner_col));
                } else {
                    local.push(self.lower_scalar(&conj, &inner_scope)?);
                }
            }
        }
        if !local.is_empty() {
            let pred = local
                .into_iter()
                .reduce(|a, b| ScalarExpr::binary(BinaryOp::And, a, b))
                .unwrap();
            inner_plan =
                LogicalPlan::Filter { input: Box::new(inner_plan), pred: FilterExpr::Scalar(pred) };
        }

        // group the aggregate by the inner correlation keys (decorrelation)
        let input = match arg {
            Some(a) => Some(self.lower_scalar(a, &inner_scope)?),
            None => None,
        };
        let group_keys: Vec<String> = correlation.iter().map(|(_, inner)| inner.clone()).collect();
        let agg_alias = "#agg".to_string();
        inner_plan = LogicalPlan::Aggregate {
            input: Box::new(inner_plan),
            group_keys: group_keys.clone(),
            specs: vec![AggSpec {
                kind: *kind,
                input,
                alias: agg_alias.clone(),
                pac: PacMode::None,
            }],
        };
        // rename outputs so they cannot collide with outer columns
        let mut items = Vec::new();
        let mut renamed_correlation = Vec::new();
        for ((outer_col, inner_col), _) in correlation.iter().zip(0..) {
            let renamed = format!("{value_alias}_{inner_col}");
            items.push(ProjItem {
                expr: super::PlanExpr::Scalar(ScalarExpr::col(inner_col.clone())),
                alias: renamed.clone(),
            });
            renamed_correlation.push((outer_col.clone(), renamed));
        }
        items.push(ProjItem {
            expr: super::PlanExpr::Scalar(ScalarExpr::col(agg_alias)),
            alias: value_alias.clone(),
        });
        inner_plan = LogicalPlan::Project { input: Box::new(inner_plan), items };

        Ok((SubqueryParts { subplan: inner_plan, correlation: renamed_correlation }, value_alias))
    }

    /// `inner = outer` (either orientation) where exactly one side is local.
    fn as_correlation(
        &mut self,
        e: &AstExpr,
        inner_scope: &Scope<'_>,
    ) -> Result<Option<(String, String)>, PlanError> {
        let AstExpr::Binary { op: BinaryOp::Eq, left, right } = e else { return Ok(None) };
        let sides = [(left, right), (right, left)];
        for (a, b) in sides {
            if let (
                AstExpr::Name { qualifier: qa, name: na, pos: pa },
                AstExpr::Name { qualifier: qb, name: nb, pos: pb },
            ) = (a.as_ref(), b.as_ref())
            {
                let ra = inner_scope.resolve(qa.as_deref(), na, *pa)?;
                let rb = inner_scope.resolve(qb.as_deref(), nb, *pb)?;
                if let (Resolution::Local(inner), Resolution::Outer(outer)) = (ra, rb) {
                    return Ok(Some((outer, inner)));
                }
            }
        }
        Ok(None)
    }

    /// Splits a join condition into equi pairs (left side / right side) and
    /// a residual predicate over the combined row.
    fn split_join_condition(
        &mut self,
        on: &AstExpr,
        scope: &Scope<'_>,
        right_schema: &Schema,
    ) -> Result<(Vec<String>, Vec<String>, Option<ScalarExpr>), PlanError> {
        let mut lk = Vec::new();
        let mut rk = Vec::new();
        let mut residual = Vec::new();
        for conj in split_conjuncts(on) {
            let mut handled = false;
            if let AstExpr::Binary { op: BinaryOp::Eq, left, right } = &conj {
                if let (
                    AstExpr::Name { qualifier: ql, name: nl, pos: pl },
                    AstExpr::Name { qualifier: qr, name: nr, pos: pr },
                ) = (left.as_ref(), right.as_ref())
                {
                    let l_res = scope.resolve(ql.as_deref(), nl, *pl)?;
                    let r_res = scope.resolve(qr.as_deref(), nr, *pr)?;
                    if let (Resolution::Local(a), Resolution::Local(b)) = (l_res, r_res) {
                        // whichever side lives in the newly joined table is
                        // the right key
                        if right_schema.index_of(&b).is_some() {
                            lk.push(a);
                            rk.push(b);
                            handled = true;
                        } else if right_schema.index_of(&a).is_some() {
                            lk.push(b);
                            rk.push(a);
                            handled = true;
                        }
                    }
                }
            }
            if !handled {
                residual.push(self.lower_scalar(&conj, scope)?);
            }
        }
        let residual = residual.into_iter().reduce(|a, b| ScalarExpr::binary(BinaryOp::And, a, b));
        Ok((lk, rk, residual))
    }
}

struct SubqueryParts {
    subplan: LogicalPlan,
    correlation: Vec<(String, String)>,
}

fn split_conjuncts(e: &AstExpr) -> Vec<AstExpr> {
    match e {
        AstExpr::Binary { op: BinaryOp::And, left, right } => {
            let mut out = split_conjuncts(left);
            out.extend(split_conjuncts(right));
            out
        }
        other => vec![other.clone()],
    }
}

fn contains_agg(e: &AstExpr) -> bool {
    match e {
        AstExpr::Agg { .. } => true,
        AstExpr::Binary { left, right, .. } => contains_agg(left) || contains_agg(right),
        AstExpr::Not(x) | AstExpr::Neg(x) => contains_agg(x),
        AstExpr::Case { branches, otherwise } => {
            branches.iter().any(|(c, r)| contains_agg(c) || contains_agg(r))
                || otherwise.as_ref().is_some_and(|o| contains_agg(o))
        }
        AstExpr::Cast { expr, .. } => contains_agg(expr),
        _ => false,
    }
}

fn default_alias(e: &AstExpr, idx: usize) -> String {
    match e {
        AstExpr::Name { name, .. } => name.clone(),
        AstExpr::Agg { kind, arg, .. } => match arg {
            Some(a) => match a.as_ref() {
                AstExpr::Name { name, .. } => format!("{}({})", kind.name(), name),
                _ => format!("{}(col{idx})", kind.name()),
            },
            None => "count(*)".to_string(),
        },
        _ => format!("col{idx}"),
    }
}
