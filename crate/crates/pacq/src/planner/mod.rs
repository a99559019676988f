//! SQL parsing, logical plans, and the privacy rewrite.

mod explain;
mod lexer;
mod optimize;
mod parser;
mod rewrite;

pub use explain::{explain, render_plan};
pub use lexer::{lex, Tok};
pub use optimize::optimize;
pub use parser::parse_query;
pub(crate) use parser::type_name as parser_type_name;
pub use rewrite::{pac_rewrite, RewriteRule, RewriteTrace};

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::aggregates::AggKind;
use crate::relcore::{type_check, BinaryOp, RelError, ScalarExpr, Schema, ValueType};

#[derive(Debug, Error)]
pub enum PlanError {
    #[error("syntax error at byte {pos}: {msg}")]
    Syntax { pos: usize, msg: String },
    #[error("unsupported syntax: {construct}")]
    Unsupported { construct: String },
    #[error("{0}")]
    Semantic(String),
}

impl PlanError {
    pub fn syntax(pos: usize, msg: impl Into<String>) -> Self {
        PlanError::Syntax { pos, msg: msg.into() }
    }
}

impl From<RelError> for PlanError {
    fn from(e: RelError) -> Self {
        PlanError::Semantic(e.to_string())
    }
}

/// Internal column names introduced by the rewriter.
pub const PU_COL: &str = "#pu";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum JoinKind {
    Inner,
    Left,
}

/// How an aggregate participates in the privacy rewrite. Fused aggregates
/// noise at finalization and release one scalar; unfused ones hand their
/// 64-world vector to downstream lifted expressions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum PacMode {
    None,
    Fused { pu: String },
    Unfused { pu: String },
}

impl PacMode {
    pub fn pu_column(&self) -> Option<&str> {
        match self {
            PacMode::None => None,
            PacMode::Fused { pu } | PacMode::Unfused { pu } => Some(pu),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggSpec {
    pub kind: AggKind,
    pub input: Option<ScalarExpr>,
    pub alias: String,
    pub pac: PacMode,
}

/// Projection expression: plain scalar, or one of the privacy forms the
/// rewriter introduces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum PlanExpr {
    Scalar(ScalarExpr),
    /// pu := pac_hash(keys, query salt)
    PacHash { keys: Vec<ScalarExpr> },
    /// world-lifted expression noised into a single released scalar
    PacNoised { lifted: ScalarExpr, scale: f64 },
    /// pu := pu AND lifted-boolean (reduced hash)
    PacSelect { pu: String, lifted: ScalarExpr },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjItem {
    pub expr: PlanExpr,
    pub alias: String,
}

impl ProjItem {
    pub fn column(name: &str) -> Self {
        ProjItem { expr: PlanExpr::Scalar(ScalarExpr::col(name)), alias: name.to_string() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum FilterExpr {
    Scalar(ScalarExpr),
    /// probabilistic row choice from a lifted boolean vector
    PacFilter { lifted: ScalarExpr },
    /// keep rows that survive in at least one world
    PuNonZero { pu: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SortKey {
    pub expr: ScalarExpr,
    pub asc: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum LogicalPlan {
    Scan {
        table: String,
    },
    Filter {
        input: Box<LogicalPlan>,
        pred: FilterExpr,
    },
    Project {
        input: Box<LogicalPlan>,
        items: Vec<ProjItem>,
    },
    Join {
        left: Box<LogicalPlan>,
        right: Box<LogicalPlan>,
        kind: JoinKind,
        left_keys: Vec<String>,
        right_keys: Vec<String>,
        residual: Option<ScalarExpr>,
    },
    Aggregate {
        input: Box<LogicalPlan>,
        group_keys: Vec<String>,
        specs: Vec<AggSpec>,
    },
    Sort {
        input: Box<LogicalPlan>,
        keys: Vec<SortKey>,
    },
    Limit {
        input: Box<LogicalPlan>,
        n: usize,
    },
    /// Scalar-aggregate subquery attached to `input` rows via equi
    /// correlation; normalization lowers it to a join.
    SubqueryScalar {
        input: Box<LogicalPlan>,
        subplan: Box<LogicalPlan>,
        /// (outer column, subplan key column) pairs; empty when uncorrelated
        correlation: Vec<(String, String)>,
        alias: String,
    },
    Cte {
        name: String,
        body: Box<LogicalPlan>,
        rest: Box<LogicalPlan>,
    },
}

impl LogicalPlan {
    pub fn children(&self) -> Vec<&LogicalPlan> {
        match self {
            LogicalPlan::Scan { .. } => vec![],
            LogicalPlan::Filter { input, .. }
            | LogicalPlan::Project { input, .. }
            | LogicalPlan::Aggregate { input, .. }
            | LogicalPlan::Sort { input, .. }
            | LogicalPlan::Limit { input, .. } => vec![input],
            LogicalPlan::Join { left, right, .. } => vec![left, right],
            LogicalPlan::SubqueryScalar { input, subplan, .. } => vec![input, subplan],
            LogicalPlan::Cte { body, rest, .. } => vec![body, rest],
        }
    }

    /// Base tables scanned anywhere in the plan (CTE references excluded).
    pub fn scanned_tables(&self) -> Vec<String> {
        let mut out = Vec::new();
        let mut ctes = Vec::new();
        fn walk(plan: &LogicalPlan, out: &mut Vec<String>, ctes: &mut Vec<String>) {
            if let LogicalPlan::Cte { name, .. } = plan {
                ctes.push(name.clone());
            }
            if let LogicalPlan::Scan { table } = plan {
                if !ctes.contains(table) && !out.contains(table) {
                    out.push(table.clone());
                }
            }
            for c in plan.children() {
                walk(c, out, ctes);
            }
        }
        walk(self, &mut out, &mut ctes);
        out
    }
}

/// Output schema of a plan under the given base-table schemas, type-checking
/// every expression along the way.
pub fn schema_of(
    plan: &LogicalPlan,
    tables: &HashMap<String, Schema>,
) -> Result<Schema, PlanError> {
    let mut env: HashMap<String, Schema> = HashMap::new();
    schema_rec(plan, tables, &mut env)
}

fn schema_rec(
    plan: &LogicalPlan,
    tables: &HashMap<String, Schema>,
    env: &mut HashMap<String, Schema>,
) -> Result<Schema, PlanError> {
    match plan {
        LogicalPlan::Scan { table } if table == "#dual" => Ok(Schema::default()),
        LogicalPlan::Scan { table } => env
            .get(table)
            .or_else(|| tables.get(table))
            .cloned()
            .ok_or_else(|| PlanError::Semantic(format!("unknown table `{table}`"))),
        LogicalPlan::Filter { input, pred } => {
            let schema = schema_rec(input, tables, env)?;
            match pred {
                FilterExpr::Scalar(e) => {
                    let t = type_check(e, &schema)?;
                    if t != ValueType::Boolean {
                        return Err(PlanError::Semantic(format!(
                            "filter predicate has type {t}, expected BOOLEAN"
                        )));
                    }
                }
                FilterExpr::PacFilter { lifted } => {
                    type_check(lifted, &scalarized(&schema))?;
                }
                FilterExpr::PuNonZero { pu } => {
                    if schema.index_of(pu).is_none() {
                        return Err(PlanError::Semantic(format!("unknown pu column `{pu}`")));
                    }
                }
            }
            Ok(schema)
        }
        LogicalPlan::Project { input, items } => {
            let schema = schema_rec(input, tables, env)?;
            let mut cols = Vec::new();
            for item in items {
                let ty = match &item.expr {
                    PlanExpr::Scalar(e) => type_check(e, &schema)?,
                    PlanExpr::PacHash { keys } => {
                        for k in keys {
                            type_check(k, &schema)?;
                        }
                        ValueType::Hash
                    }
                    PlanExpr::PacNoised { lifted, .. } => {
                        type_check(lifted, &scalarized(&schema))?;
                        ValueType::Float64
                    }
                    PlanExpr::PacSelect { pu, lifted } => {
                        if schema.index_of(pu).is_none() {
                            return Err(PlanError::Semantic(format!(
                                "unknown pu column `{pu}`"
                            )));
                        }
                        type_check(lifted, &scalarized(&schema))?;
                        ValueType::Hash
                    }
                };
                cols.push(Schema::col(&item.alias, ty));
            }
            Schema::new(cols).map_err(Into::into)
        }
        LogicalPlan::Join { left, right, kind: _, left_keys, right_keys, residual } => {
            let ls = schema_rec(left, tables, env)?;
            let rs = schema_rec(right, tables, env)?;
            if left_keys.len() != right_keys.len() {
                return Err(PlanError::Semantic("join key arity mismatch".into()));
            }
            for k in left_keys {
                if ls.index_of(k).is_none() {
                    return Err(PlanError::Semantic(format!("unknown join key `{k}`")));
                }
            }
            for k in right_keys {
                if rs.index_of(k).is_none() {
                    return Err(PlanError::Semantic(format!("unknown join key `{k}`")));
                }
            }
            let mut cols = ls.columns.clone();
            cols.extend(rs.columns.iter().cloned());
            let combined = Schema::new(cols).map_err(|e| {
                PlanError::Semantic(format!("ambiguous column across join: {e}"))
            })?;
            if let Some(r) = residual {
                let t = type_check(r, &combined)?;
                if t != ValueType::Boolean {
                    return Err(PlanError::Semantic("join residual must be boolean".into()));
                }
            }
            Ok(combined)
        }
        LogicalPlan::Aggregate { input, group_keys, specs } => {
            let schema = schema_rec(input, tables, env)?;
            let mut cols = Vec::new();
            for k in group_keys {
                let idx = schema
                    .index_of(k)
                    .ok_or_else(|| PlanError::Semantic(format!("unknown group key `{k}`")))?;
                cols.push(schema.columns[idx].clone());
            }
            for spec in specs {
                let input_ty = match &spec.input {
                    Some(e) => Some(type_check(e, &schema)?),
                    None => None,
                };
                let ty = if spec.pac != PacMode::None {
                    ValueType::VectorF64
                } else {
                    agg_output_type(spec.kind, input_ty)?
                };
                cols.push(Schema::col(&spec.alias, ty));
            }
            Schema::new(cols).map_err(Into::into)
        }
        LogicalPlan::Sort { input, keys } => {
            let schema = schema_rec(input, tables, env)?;
            for k in keys {
                type_check(&k.expr, &schema)?;
            }
            Ok(schema)
        }
        LogicalPlan::Limit { input, .. } => schema_rec(input, tables, env),
        LogicalPlan::SubqueryScalar { input, subplan, correlation, .. } => {
            let is = schema_rec(input, tables, env)?;
            let ss = schema_rec(subplan, tables, env)?;
            for (outer, inner) in correlation {
                if is.index_of(outer).is_none() {
                    return Err(PlanError::Semantic(format!(
                        "unknown correlation column `{outer}`"
                    )));
                }
                if ss.index_of(inner).is_none() {
                    return Err(PlanError::Semantic(format!(
                        "unknown correlation column `{inner}`"
                    )));
                }
            }
            let mut cols = is.columns;
            cols.extend(ss.columns);
            Schema::new(cols).map_err(Into::into)
        }
        LogicalPlan::Cte { name, body, rest } => {
            let body_schema = schema_rec(body, tables, env)?;
            env.insert(name.clone(), body_schema);
            let out = schema_rec(rest, tables, env);
            env.remove(name);
            out
        }
    }
}

/// Lifted expressions evaluate vector columns slot-wise: type-check them
/// against a schema where every vector column reads as FLOAT64.
pub fn scalarized(schema: &Schema) -> Schema {
    let cols = schema
        .columns
        .iter()
        .map(|c| {
            let ty = if c.ty == ValueType::VectorF64 { ValueType::Float64 } else { c.ty };
            crate::relcore::Column { name: c.name.clone(), ty, nullable: true }
        })
        .collect();
    Schema { columns: cols }
}

pub fn agg_output_type(
    kind: AggKind,
    input: Option<ValueType>,
) -> Result<ValueType, PlanError> {
    use ValueType as T;
    let numeric_input = || -> Result<ValueType, PlanError> {
        match input {
            Some(T::Int64) | Some(T::Date) => Ok(T::Int64),
            Some(T::Float64) => Ok(T::Float64),
            Some(t) => Err(PlanError::Semantic(format!("cannot aggregate over {t}"))),
            None => Err(PlanError::Semantic("aggregate needs an argument".into())),
        }
    };
    match kind {
        AggKind::CountStar => Ok(T::Int64),
        AggKind::Count => {
            if input.is_none() {
                return Err(PlanError::Semantic("count needs an argument".into()));
            }
            Ok(T::Int64)
        }
        AggKind::Sum => numeric_input(),
        AggKind::Avg => {
            numeric_input()?;
            Ok(T::Float64)
        }
        AggKind::Min | AggKind::Max => match input {
            Some(T::Int64) | Some(T::Float64) | Some(T::Date) => Ok(input.unwrap()),
            Some(t) => Err(PlanError::Semantic(format!("cannot take extremes of {t}"))),
            None => Err(PlanError::Semantic("aggregate needs an argument".into())),
        },
    }
}

/// Rewrites scalar subqueries into joins and folds the single multiplicative
/// constant around subquery comparisons so the vector lands alone on one
/// side (`x < 0.2 * sq` becomes `x * 5 < sq`).
pub fn normalize(plan: LogicalPlan) -> LogicalPlan {
    let plan = map_plan(plan, &|p| match p {
        LogicalPlan::SubqueryScalar { input, subplan, correlation, alias: _ } => {
            let (left_keys, right_keys) =
                correlation.iter().cloned().unzip::<String, String, Vec<_>, Vec<_>>();
            LogicalPlan::Join {
                left: input,
                right: subplan,
                kind: JoinKind::Left,
                left_keys,
                right_keys,
                residual: None,
            }
        }
        other => other,
    });
    map_exprs(plan, &fold_subquery_comparison)
}

/// Applies `f` bottom-up over every plan node.
pub fn map_plan(plan: LogicalPlan, f: &impl Fn(LogicalPlan) -> LogicalPlan) -> LogicalPlan {
    let mapped = match plan {
        LogicalPlan::Scan { table } => LogicalPlan::Scan { table },
        LogicalPlan::Filter { input, pred } => {
            LogicalPlan::Filter { input: Box::new(map_plan(*input, f)), pred }
        }
        LogicalPlan::Project { input, items } => {
            LogicalPlan::Project { input: Box::new(map_plan(*input, f)), items }
        }
        LogicalPlan::Join { left, right, kind, left_keys, right_keys, residual } => {
            LogicalPlan::Join {
                left: Box::new(map_plan(*left, f)),
                right: Box::new(map_plan(*right, f)),
                kind,
                left_keys,
                right_keys,
                residual,
            }
        }
        LogicalPlan::Aggregate { input, group_keys, specs } => LogicalPlan::Aggregate {
            input: Box::new(map_plan(*input, f)),
            group_keys,
            specs,
        },
        LogicalPlan::Sort { input, keys } => {
            LogicalPlan::Sort { input: Box::new(map_plan(*input, f)), keys }
        }
        LogicalPlan::Limit { input, n } => {
            LogicalPlan::Limit { input: Box::new(map_plan(*input, f)), n }
        }
        LogicalPlan::SubqueryScalar { input, subplan, correlation, alias } => {
            LogicalPlan::SubqueryScalar {
                input: Box::new(map_plan(*input, f)),
                subplan: Box::new(map_plan(*subplan, f)),
                correlation,
                alias,
            }
        }
        LogicalPlan::Cte { name, body, rest } => LogicalPlan::Cte {
            name,
            body: Box::new(map_plan(*body, f)),
            rest: Box::new(map_plan(*rest, f)),
        },
    };
    f(mapped)
}

fn map_exprs(plan: LogicalPlan, f: &impl Fn(ScalarExpr) -> ScalarExpr) -> LogicalPlan {
    map_plan(plan, &|p| match p {
        LogicalPlan::Filter { input, pred } => {
            let pred = match pred {
                FilterExpr::Scalar(e) => FilterExpr::Scalar(f(e)),
                other => other,
            };
            LogicalPlan::Filter { input, pred }
        }
        other => other,
    })
}

fn is_subquery_col(e: &ScalarExpr) -> bool {
    matches!(e, ScalarExpr::Column(c) if c.name.starts_with("#sq"))
}

/// Bottom-up map over an expression tree.
fn expr_map(e: ScalarExpr, f: &impl Fn(ScalarExpr) -> ScalarExpr) -> ScalarExpr {
    let mapped = match e {
        ScalarExpr::Binary { op, left, right } => ScalarExpr::Binary {
            op,
            left: Box::new(expr_map(*left, f)),
            right: Box::new(expr_map(*right, f)),
        },
        ScalarExpr::Not(x) => ScalarExpr::Not(Box::new(expr_map(*x, f))),
        ScalarExpr::Neg(x) => ScalarExpr::Neg(Box::new(expr_map(*x, f))),
        ScalarExpr::Case { branches, otherwise } => ScalarExpr::Case {
            branches: branches
                .into_iter()
                .map(|(c, r)| (expr_map(c, f), expr_map(r, f)))
                .collect(),
            otherwise: otherwise.map(|o| Box::new(expr_map(*o, f))),
        },
        ScalarExpr::Cast { expr, ty } => {
            ScalarExpr::Cast { expr: Box::new(expr_map(*expr, f)), ty }
        }
        leaf => leaf,
    };
    f(mapped)
}

/// `expr CMP k * sq` -> `expr * (1/k) CMP sq` (and the Div / mirrored
/// variants), for positive literal k only.
fn fold_subquery_comparison(e: ScalarExpr) -> ScalarExpr {
    expr_map(e, &|node| {
        let ScalarExpr::Binary { op, left, right } = node else { return node };
        if !op.is_comparison() {
            return ScalarExpr::Binary { op, left, right };
        }

        fn constant_of(e: &ScalarExpr) -> Option<f64> {
            match e {
                ScalarExpr::Literal(v) => v.as_f64().filter(|c| *c > 0.0),
                _ => None,
            }
        }

        // (sq column, multiplier for the opposite side)
        fn split(side: &ScalarExpr) -> Option<(ScalarExpr, f64)> {
            if let ScalarExpr::Binary { op, left, right } = side {
                match op {
                    BinaryOp::Mul => {
                        if constant_of(left).is_some() && is_subquery_col(right) {
                            return Some(((**right).clone(), 1.0 / constant_of(left).unwrap()));
                        }
                        if is_subquery_col(left) && constant_of(right).is_some() {
                            return Some(((**left).clone(), 1.0 / constant_of(right).unwrap()));
                        }
                    }
                    BinaryOp::Div => {
                        if is_subquery_col(left) {
                            if let Some(c) = constant_of(right) {
                                return Some(((**left).clone(), c));
                            }
                        }
                    }
                    _ => {}
                }
            }
            None
        }

        let scale = |e: Box<ScalarExpr>, m: f64| {
            ScalarExpr::binary(BinaryOp::Mul, *e, ScalarExpr::lit(crate::relcore::Value::Float64(m)))
        };

        if let Some((sq, m)) = split(&right) {
            return ScalarExpr::Binary { op, left: Box::new(scale(left, m)), right: Box::new(sq) };
        }
        if let Some((sq, m)) = split(&left) {
            return ScalarExpr::Binary { op, left: Box::new(sq), right: Box::new(scale(right, m)) };
        }
        ScalarExpr::Binary { op, left, right }
    })
}
