//! Post-rewrite plan optimization. Deliberately small: scalar filter
//! pushdown through joins, so chain-augmented scans filter early. The
//! privacy forms (probabilistic filters, hash reductions) never move — their
//! draw order is part of the query's semantics. Projection pruning happens
//! where it matters: the rewriter's added chain scans already project only
//! key and hash-source columns.

use std::collections::HashMap;

use super::{map_plan, FilterExpr, JoinKind, LogicalPlan};
use crate::relcore::{BinaryOp, ScalarExpr, Schema};

pub fn optimize(plan: LogicalPlan, tables: &HashMap<String, Schema>) -> LogicalPlan {
    map_plan(plan, &|p| push_filter(p, tables))
}

fn push_filter(plan: LogicalPlan, tables: &HashMap<String, Schema>) -> LogicalPlan {
    let LogicalPlan::Filter { input, pred } = plan else { return plan };
    let FilterExpr::Scalar(pred) = pred else {
        return LogicalPlan::Filter { input, pred };
    };
    let LogicalPlan::Join { left, right, kind, left_keys, right_keys, residual } = *input else {
        return LogicalPlan::Filter {
            input,
            pred: FilterExpr::Scalar(pred),
        };
    };

    // a conjunct sinks to whichever side holds all its columns; pushing into
    // the null-padded side of a left join would change semantics
    let left_cols = side_columns(&left, tables);
    let right_cols = side_columns(&right, tables);
    let mut keep = Vec::new();
    let mut to_left = Vec::new();
    let mut to_right = Vec::new();
    for conj in flatten(pred) {
        let mut cols = Vec::new();
        conj.for_each_column(&mut |c| cols.push(c.name.clone()));
        if cols.iter().all(|c| left_cols.contains(c)) {
            to_left.push(conj);
        } else if kind == JoinKind::Inner && cols.iter().all(|c| right_cols.contains(c)) {
            to_right.push(conj);
        } else {
            keep.push(conj);
        }
    }

    let wrap = |side: Box<LogicalPlan>, conjs: Vec<ScalarExpr>| -> Box<LogicalPlan> {
        match conjs.into_iter().reduce(|a, b| ScalarExpr::binary(BinaryOp::And, a, b)) {
            Some(p) => {
                Box::new(LogicalPlan::Filter { input: side, pred: FilterExpr::Scalar(p) })
            }
            None => side,
        }
    };
    let joined = LogicalPlan::Join {
        left: wrap(left, to_left),
        right: wrap(right, to_right),
        kind,
        left_keys,
        right_keys,
        residual,
    };
    match keep.into_iter().reduce(|a, b| ScalarExpr::binary(BinaryOp::And, a, b)) {
        Some(p) => LogicalPlan::Filter { input: Box::new(joined), pred: FilterExpr::Scalar(p) },
        None => joined,
    }
}

/// Output column names of a subtree. CTE references resolve to nothing,
/// which conservatively keeps their filters in place.
fn side_columns(plan: &LogicalPlan, tables: &HashMap<String, Schema>) -> Vec<String> {
    match plan {
        LogicalPlan::Scan { table } => tables
            .get(table)
            .map(|s| s.names().into_iter().map(|n| n.to_string()).collect())
            .unwrap_or_default(),
        LogicalPlan::Project { items, .. } => items.iter().map(|i| i.alias.clone()).collect(),
        LogicalPlan::Aggregate { group_keys, specs, .. } => {
            let mut out = group_keys.clone();
            out.extend(specs.iter().map(|s| s.alias.clone()));
            out
        }
        LogicalPlan::Join { left, right, .. } => {
            let mut out = side_columns(left, tables);
            out.extend(side_columns(right, tables));
            out
        }
        LogicalPlan::Filter { input, .. }
        | LogicalPlan::Sort { input, .. }
        | LogicalPlan::Limit { input, .. } => side_columns(input, tables),
        _ => Vec::new(),
    }
}

fn flatten(e: ScalarExpr) -> Vec<ScalarExpr> {
    match e {
        ScalarExpr::Binary { op: BinaryOp::And, left, right } => {
            let mut out = flatten(*left);
            out.extend(flatten(*right));
            out
        }
        other => vec![other],
    }
}
