//! PacDiff: full-outer comparison of the privatized result against the
//! exact (unprivatized) result, yielding MAPE, precision, and recall.

use std::collections::BTreeMap;

use serde::Serialize;

use super::{execute, EngineError, ExecConfig, SortableRow};
use crate::catalog::{classify, Classification, PrivacyCatalog};
use crate::planner::{normalize, parse_query};
use crate::relcore::{Relation, Value};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum RowClass {
    /// present in both results
    Matched,
    /// exact row missing from the privatized result
    Missing,
    /// row only present in the privatized result
    Spurious,
}

impl RowClass {
    pub fn symbol(self) -> &'static str {
        match self {
            RowClass::Matched => "=",
            RowClass::Missing => "-",
            RowClass::Spurious => "+",
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct DiffReport {
    /// mean of |result - exact| / |exact| over matched numeric cells with
    /// nonzero exact value
    pub mape: f64,
    pub precision: f64,
    pub recall: f64,
    pub matched: usize,
    pub missing: usize,
    pub spurious: usize,
    #[serde(skip)]
    pub rows: Vec<(RowClass, Vec<Value>)>,
}

/// Runs the unprivatized and privatized variants of a rewritable query and
/// joins them full-outer on the first `key_cols` output columns.
pub fn pac_diff(
    sql: &str,
    catalog: &PrivacyCatalog,
    db: &super::Database,
    config: &ExecConfig,
    key_cols: usize,
) -> Result<DiffReport, EngineError> {
    let plan = normalize(parse_query(sql, &catalog.schemas)?);
    match classify(&plan, catalog) {
        Classification::Rewritable => {}
        other => {
            return Err(EngineError::Plan(crate::planner::PlanError::Semantic(format!(
                "pac_diff needs a rewritable query, got {other:?}"
            ))))
        }
    }
    // the exact reference runs the original plan with no privacy machinery
    let exact = execute(&plan, db, config)?;
    let (rewritten, _trace) = crate::planner::pac_rewrite(&plan, catalog)?;
    let rewritten = crate::planner::optimize(rewritten, &catalog.schemas);
    let privatized = execute(&rewritten, db, config)?;
    diff_relations(&exact, &privatized, key_cols)
}

pub fn diff_relations(
    exact: &Relation,
    privatized: &Relation,
    key_cols: usize,
) -> Result<DiffReport, EngineError> {
    let index = |rel: &Relation, side: &'static str| -> Result<BTreeMap<SortableRow, Vec<Value>>, EngineError> {
        let mut map = BTreeMap::new();
        for i in 0..rel.row_count() {
            let row = rel.row(i);
            let key = SortableRow(row[..key_cols.min(row.len())].to_vec());
            if map.insert(key, row).is_some() {
                return Err(EngineError::KeyCollision(side));
            }
        }
        Ok(map)
    };
    let exact_rows = index(exact, "exact")?;
    let mut priv_rows = index(privatized, "privatized")?;

    let mut rows = Vec::new();
    let mut err_sum = 0.0;
    let mut err_n = 0usize;
    let (mut matched, mut missing, mut spurious) = (0usize, 0usize, 0usize);

    for (key, exact_row) in exact_rows {
        match priv_rows.remove(&key) {
            Some(priv_row) => {
                matched += 1;
                for (e, p) in exact_row[key_cols..].iter().zip(&priv_row[key_cols..]) {
                    if let (Some(ev), Some(pv)) = (e.as_f64(), p.as_f64()) {
                        if ev != 0.0 {
                            err_sum += (pv - ev).abs() / ev.abs();
                            err_n += 1;
                        }
                    }
                }
                rows.push((RowClass::Matched, priv_row));
            }
            None => {
                missing += 1;
                rows.push((RowClass::Missing, exact_row));
            }
        }
    }
    for (_, priv_row) in priv_rows {
        spurious += 1;
        rows.push((RowClass::Spurious, priv_row));
    }

    let ratio = |num: usize, den: usize| if den == 0 { 1.0 } else { num as f64 / den as f64 };
    Ok(DiffReport {
        mape: if err_n == 0 { 0.0 } else { err_sum / err_n as f64 },
        precision: ratio(matched, matched + spurious),
        recall: ratio(matched, matched + missing),
        matched,
        missing,
        spurious,
        rows,
    })
}
