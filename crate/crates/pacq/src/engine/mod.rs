//! Plan execution over in-memory relations.
//!
//! The executor runs both the privatized single-pass plans (stochastic
//! aggregate kernels plus one shared noise session) and plain plans (the
//! scalar reference semantics the oracle replays per world). Rows carry a
//! composite stable row id derived from their base-table positions, and
//! aggregation always feeds kernels in row-id order, so the engine and the
//! materialized-worlds oracle accumulate floating-point values in the same
//! sequence.

mod diff;
mod oracle;

pub use diff::{diff_relations, pac_diff, DiffReport, RowClass};
pub use oracle::execute_oracle;

use std::collections::{BTreeMap, HashMap};

use thiserror::Error;

use crate::aggregates::{AggInput, AggKind, AggValue, Accumulator, TierConfig};
use crate::catalog::PrivacyCatalog;
use crate::hashing::{pac_hash, HashError, PuHash};
use crate::planner::{
    schema_of, AggSpec, FilterExpr, JoinKind, LogicalPlan, PlanError, PlanExpr, SortKey, PU_COL,
};
use crate::relcore::{
    eval_scalar, type_check, RelError, Relation, ScalarExpr, Schema, Value, ValueType,
};
use crate::worlds::{
    lift_predicate, pac_filter, pac_noised, vector_lift, LiftInput, NoiseSession, WorldVector,
    WorldsError,
};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error(transparent)]
    Worlds(#[from] WorldsError),
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error(transparent)]
    Rel(#[from] RelError),
    #[error(transparent)]
    Hash(#[from] HashError),
    #[error("unknown table `{0}`")]
    MissingTable(String),
    #[error("diff key is not unique in the {0} result")]
    KeyCollision(&'static str),
}

/// Loaded tables. `scan_rids` lets the oracle present world-restricted
/// relations whose rows keep their original base-table row ids.
#[derive(Debug, Clone, Default)]
pub struct Database {
    pub tables: HashMap<String, Relation>,
    pub scan_rids: HashMap<String, Vec<u64>>,
}

impl Database {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, rel: Relation) {
        self.tables.insert(name.into(), rel);
    }

    pub fn schemas(&self) -> HashMap<String, Schema> {
        self.tables.iter().map(|(n, r)| (n.clone(), r.schema.clone())).collect()
    }
}

/// Everything that pins down one reproducible run: equal seed and budget
/// give identical query salt, secret world, and RNG stream in both the
/// engine and oracle paths.
#[derive(Debug, Clone, Copy)]
pub struct ExecConfig {
    pub seed: u64,
    /// per-cell MI budget in nats
    pub mi_budget: f64,
    pub noise_enabled: bool,
    pub tiers: TierConfig,
}

impl Default for ExecConfig {
    fn default() -> Self {
        ExecConfig {
            seed: 0,
            mi_budget: 1.0 / 128.0,
            noise_enabled: true,
            tiers: TierConfig::default(),
        }
    }
}

impl ExecConfig {
    pub fn session(&self) -> NoiseSession {
        NoiseSession::new(self.seed, self.mi_budget, self.noise_enabled)
    }
}

/// Row-major intermediate result with per-row stable ids.
#[derive(Debug, Clone)]
pub(crate) struct Chunk {
    pub schema: Schema,
    pub rows: Vec<Vec<Value>>,
    pub rids: Vec<Vec<u64>>,
    pub rid_width: usize,
}

impl Chunk {
    fn empty(schema: Schema, rid_width: usize) -> Self {
        Chunk { schema, rows: Vec::new(), rids: Vec::new(), rid_width }
    }

    pub(crate) fn into_relation(self) -> Relation {
        let mut rel = Relation::empty(self.schema);
        for row in self.rows {
            rel.push_row(row);
        }
        rel
    }

    /// Indices of the rows in row-id order.
    pub(crate) fn rid_order(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.rows.len()).collect();
        idx.sort_by(|&a, &b| self.rids[a].cmp(&self.rids[b]));
        idx
    }
}

pub(crate) struct Executor<'a> {
    pub db: &'a Database,
    pub session: &'a mut NoiseSession,
    pub tiers: TierConfig,
    pub ctes: HashMap<String, Chunk>,
}

/// Executes a plan against loaded tables. Output order is deterministic:
/// aggregate results are emitted in group-key order, and the only
/// randomness flows through the seeded session.
pub fn execute(
    plan: &LogicalPlan,
    db: &Database,
    config: &ExecConfig,
) -> Result<Relation, EngineError> {
    let mut session = config.session();
    execute_with_session(plan, db, &mut session, config.tiers)
}

pub(crate) fn execute_with_session(
    plan: &LogicalPlan,
    db: &Database,
    session: &mut NoiseSession,
    tiers: TierConfig,
) -> Result<Relation, EngineError> {
    let mut exec = Executor { db, session, tiers, ctes: HashMap::new() };
    Ok(exec.run(plan)?.into_relation())
}

impl<'a> Executor<'a> {
    pub(crate) fn run(&mut self, plan: &LogicalPlan) -> Result<Chunk, EngineError> {
        match plan {
            LogicalPlan::Scan { table } => self.scan(table),
            LogicalPlan::Filter { input, pred } => self.filter(input, pred),
            LogicalPlan::Project { input, items } => self.project(input, items),
            LogicalPlan::Join { left, right, kind, left_keys, right_keys, residual } => {
                self.join(left, right, *kind, left_keys, right_keys, residual.as_ref())
            }
            LogicalPlan::Aggregate { input, group_keys, specs } => {
                self.aggregate(input, group_keys, specs)
            }
            LogicalPlan::Sort { input, keys } => self.sort(input, keys),
            LogicalPlan::Limit { input, n } => {
                let mut chunk = self.run(input)?;
                chunk.rows.truncate(*n);
                chunk.rids.truncate(*n);
                Ok(chunk)
            }
            LogicalPlan::Cte { name, body, rest } => {
                let body_chunk = self.run(body)?;
                // consumers address CTE rows by their materialized position
                let fresh = Chunk {
                    schema: body_chunk.schema.clone(),
                    rids: (0..body_chunk.rows.len() as u64).map(|i| vec![i]).collect(),
                    rid_width: 1,
                    rows: body_chunk.rows,
                };
                self.ctes.insert(name.clone(), fresh);
                let out = self.run(rest);
                self.ctes.remove(name);
                out
            }
            LogicalPlan::SubqueryScalar { .. } => Err(PlanError::Semantic(
                "plan must be normalized before execution".into(),
            )
            .into()),
        }
    }

    fn scan(&mut self, table: &str) -> Result<Chunk, EngineError> {
        if table == "#dual" {
            let mut chunk = Chunk::empty(Schema::default(), 1);
            chunk.rows.push(vec![]);
            chunk.rids.push(vec![0]);
            return Ok(chunk);
        }
        if let Some(cte) = self.ctes.get(table) {
            return Ok(cte.clone());
        }
        let rel = self
            .db
            .tables
            .get(table)
            .ok_or_else(|| EngineError::MissingTable(table.to_string()))?;
        let rid_base = self.db.scan_rids.get(table);
        let mut chunk = Chunk::empty(rel.schema.clone(), 1);
        for i in 0..rel.row_count() {
            chunk.rows.push(rel.row(i));
            let rid = rid_base.map_or(i as u64, |b| b[i]);
            chunk.rids.push(vec![rid]);
        }
        Ok(chunk)
    }

    fn filter(&mut self, input: &LogicalPlan, pred: &FilterExpr) -> Result<Chunk, EngineError> {
        let chunk = self.run(input)?;
        match pred {
            FilterExpr::Scalar(e) => {
                let e = e.bind(&chunk.schema)?;
                let mut out = Chunk::empty(chunk.schema.clone(), chunk.rid_width);
                for (row, rid) in chunk.rows.into_iter().zip(chunk.rids) {
                    if eval_scalar(&e, &out.schema, &row) == Value::Boolean(true) {
                        out.rows.push(row);
                        out.rids.push(rid);
                    }
                }
                Ok(out)
            }
            FilterExpr::PuNonZero { pu } => {
                let idx = chunk
                    .schema
                    .index_of(pu)
                    .ok_or_else(|| PlanError::Semantic(format!("unknown pu column `{pu}`")))?;
                let mut out = Chunk::empty(chunk.schema.clone(), chunk.rid_width);
                for (row, rid) in chunk.rows.into_iter().zip(chunk.rids) {
                    if matches!(row[idx], Value::Hash(h) if h != 0) {
                        out.rows.push(row);
                        out.rids.push(rid);
                    }
                }
                Ok(out)
            }
            FilterExpr::PacFilter { lifted } => {
                // probabilistic row choice: draws happen in row-id order so
                // the oracle consumes the identical stream
                let lifted = lifted.bind(&chunk.schema)?;
                let pu_idx = chunk.schema.index_of(PU_COL);
                let order = chunk.rid_order();
                let mut out = Chunk::empty(chunk.schema.clone(), chunk.rid_width);
                for i in order {
                    let row = &chunk.rows[i];
                    let mut bits = eval_lift_predicate(&lifted, &chunk.schema, row);
                    if let Some(pi) = pu_idx {
                        bits &= match row[pi] {
                            Value::Hash(h) => h,
                            _ => 0,
                        };
                    }
                    if pac_filter(bits, self.session) {
                        out.rows.push(row.clone());
                        out.rids.push(chunk.rids[i].clone());
                    }
                }
                Ok(out)
            }
        }
    }

    fn project(
        &mut self,
        input: &LogicalPlan,
        items: &[crate::planner::ProjItem],
    ) -> Result<Chunk, EngineError> {
        let chunk = self.run(input)?;
        let in_schema = &chunk.schema;
        let mut out_cols = Vec::with_capacity(items.len());
        #[derive(Clone)]
        enum Prepared {
            Scalar(ScalarExpr),
            Hash(Vec<ScalarExpr>),
            Noised { lifted: ScalarExpr, scale: f64 },
            Select { pu_idx: usize, lifted: ScalarExpr },
        }
        let mut prepared = Vec::with_capacity(items.len());
        for item in items {
            let (ty, prep) = match &item.expr {
                PlanExpr::Scalar(e) => {
                    let bound = e.bind(in_schema)?;
                    (type_check(&bound, in_schema)?, Prepared::Scalar(bound))
                }
                PlanExpr::PacHash { keys } => {
                    let mut bound = Vec::new();
                    for k in keys {
                        bound.push(k.bind(in_schema)?);
                    }
                    (ValueType::Hash, Prepared::Hash(bound))
                }
                PlanExpr::PacNoised { lifted, scale } => {
                    let bound = lifted.bind(&crate::planner::scalarized(in_schema))?;
                    (ValueType::Float64, Prepared::Noised { lifted: bound, scale: *scale })
                }
                PlanExpr::PacSelect { pu, lifted } => {
                    let pu_idx = in_schema.index_of(pu).ok_or_else(|| {
                        PlanError::Semantic(format!("unknown pu column `{pu}`"))
                    })?;
                    let bound = lifted.bind(&crate::planner::scalarized(in_schema))?;
                    (ValueType::Hash, Prepared::Select { pu_idx, lifted: bound })
                }
            };
            out_cols.push(Schema::col(&item.alias, ty));
            prepared.push(prep);
        }
        let out_schema = Schema::new(out_cols).map_err(PlanError::from)?;

        // released cells consume randomness in row-major, then projection
        // order; aggregate inputs arrive group-sorted already
        let mut out = Chunk::empty(out_schema, chunk.rid_width);
        for (row, rid) in chunk.rows.iter().zip(&chunk.rids) {
            let mut out_row = Vec::with_capacity(prepared.len());
            for prep in &prepared {
                let v = match prep {
                    Prepared::Scalar(e) => eval_scalar(e, in_schema, row),
                    Prepared::Hash(keys) => {
                        let vals: Vec<Value> =
                            keys.iter().map(|k| eval_scalar(k, in_schema, row)).collect();
                        Value::Hash(pac_hash(&vals, self.session.salt)?.0)
                    }
                    Prepared::Noised { lifted, scale } => {
                        let vector = lift_vector(lifted, in_schema, row);
                        pac_noised(&vector, self.session, *scale)
                    }
                    Prepared::Select { pu_idx, lifted } => {
                        let bits = eval_lift_predicate(lifted, in_schema, row);
                        let pu = match row[*pu_idx] {
                            Value::Hash(h) => h,
                            _ => 0,
                        };
                        Value::Hash(pu & bits)
                    }
                };
                out_row.push(v);
            }
            out.rows.push(out_row);
            out.rids.push(rid.clone());
        }
        Ok(out)
    }

    fn join(
        &mut self,
        left: &LogicalPlan,
        right: &LogicalPlan,
        kind: JoinKind,
        left_keys: &[String],
        right_keys: &[String],
        residual: Option<&ScalarExpr>,
    ) -> Result<Chunk, EngineError> {
        let lc = self.run(left)?;
        let rc = self.run(right)?;
        let mut cols = lc.schema.columns.clone();
        cols.extend(rc.schema.columns.iter().cloned());
        let out_schema = Schema::new(cols).map_err(PlanError::from)?;
        let residual = residual.map(|r| r.bind(&out_schema)).transpose()?;

        let l_idx: Vec<usize> =
            left_keys.iter().map(|k| lc.schema.index_of(k).unwrap()).collect();
        let r_idx: Vec<usize> =
            right_keys.iter().map(|k| rc.schema.index_of(k).unwrap()).collect();

        // hash join: build on the right, probe in left row order
        let mut built: HashMap<Vec<HashableValue>, Vec<usize>> = HashMap::new();
        for (i, row) in rc.rows.iter().enumerate() {
            let Some(key) = join_key(row, &r_idx) else { continue };
            built.entry(key).or_default().push(i);
        }

        let rid_width = lc.rid_width + rc.rid_width;
        let mut out = Chunk::empty(out_schema, rid_width);
        let empty = Vec::new();
        for (li, lrow) in lc.rows.iter().enumerate() {
            let matches = match join_key(lrow, &l_idx) {
                Some(key) => built.get(&key).unwrap_or(&empty),
                None => &empty,
            };
            let mut emitted = false;
            for &ri in matches {
                let mut row = lrow.clone();
                row.extend(rc.rows[ri].iter().cloned());
                if let Some(res) = &residual {
                    if eval_scalar(res, &out.schema, &row) != Value::Boolean(true) {
                        continue;
                    }
                }
                let mut rid = lc.rids[li].clone();
                rid.extend(&rc.rids[ri]);
                out.rows.push(row);
                out.rids.push(rid);
                emitted = true;
            }
            if !emitted && kind == JoinKind::Left {
                let mut row = lrow.clone();
                row.extend(std::iter::repeat_n(Value::Null, rc.schema.len()));
                let mut rid = lc.rids[li].clone();
                rid.extend(std::iter::repeat_n(u64::MAX, rc.rid_width));
                out.rows.push(row);
                out.rids.push(rid);
            }
        }
        Ok(out)
    }

    fn aggregate(
        &mut self,
        input: &LogicalPlan,
        group_keys: &[String],
        specs: &[AggSpec],
    ) -> Result<Chunk, EngineError> {
        let chunk = self.run(input)?;
        let detailed = aggregate_groups(&chunk, group_keys, specs, &self.tiers)?;

        let mut cols = Vec::new();
        for k in group_keys {
            let idx = chunk
                .schema
                .index_of(k)
                .ok_or_else(|| PlanError::Semantic(format!("unknown group key `{k}`")))?;
            cols.push(chunk.schema.columns[idx].clone());
        }
        for spec in specs {
            let ty = if spec.pac == crate::planner::PacMode::None {
                let input_ty =
                    spec.input.as_ref().map(|e| type_check(e, &chunk.schema)).transpose()?;
                crate::planner::agg_output_type(spec.kind, input_ty)?
            } else {
                ValueType::VectorF64
            };
            cols.push(Schema::col(&spec.alias, ty));
        }
        let out_schema = Schema::new(cols).map_err(PlanError::from)?;

        let mut out = Chunk::empty(out_schema, 1);
        for (gi, (key_vals, cells)) in detailed.into_iter().enumerate() {
            let mut row = key_vals;
            for cell in cells {
                row.push(cell.into_value()?);
            }
            out.rows.push(row);
            out.rids.push(vec![gi as u64]);
        }
        Ok(out)
    }

    fn sort(&mut self, input: &LogicalPlan, keys: &[SortKey]) -> Result<Chunk, EngineError> {
        let chunk = self.run(input)?;
        sort_chunk(chunk, keys)
    }
}

/// Stable sort of a chunk by the given keys (NULLs first ascending).
pub(crate) fn sort_chunk(chunk: Chunk, keys: &[SortKey]) -> Result<Chunk, EngineError> {
    let bound: Vec<(ScalarExpr, bool)> = keys
        .iter()
        .map(|k| k.expr.bind(&chunk.schema).map(|e| (e, k.asc)))
        .collect::<Result<_, _>>()?;
    let sort_vals: Vec<Vec<Value>> = chunk
        .rows
        .iter()
        .map(|row| bound.iter().map(|(e, _)| eval_scalar(e, &chunk.schema, row)).collect())
        .collect();
    let mut idx: Vec<usize> = (0..chunk.rows.len()).collect();
    idx.sort_by(|&a, &b| {
        for (ki, (_, asc)) in bound.iter().enumerate() {
            let ord = sort_vals[a][ki].cmp_total(&sort_vals[b][ki]);
            let ord = if *asc { ord } else { ord.reverse() };
            if ord != std::cmp::Ordering::Equal {
                return ord;
            }
        }
        std::cmp::Ordering::Equal
    });
    let mut out = Chunk::empty(chunk.schema.clone(), chunk.rid_width);
    for i in idx {
        out.rows.push(chunk.rows[i].clone());
        out.rids.push(chunk.rids[i].clone());
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// aggregation internals (shared with the oracle)

/// One finalized aggregate cell.
pub(crate) enum Cell {
    Std { value: Value, updates: u64 },
    Pac(Accumulator),
}

impl Cell {
    fn into_value(self) -> Result<Value, EngineError> {
        match self {
            Cell::Std { value, .. } => Ok(value),
            Cell::Pac(acc) => {
                let v = acc.finalize_raw()?;
                Ok(Value::VectorF64(Box::new(v)))
            }
        }
    }

    pub(crate) fn std_parts(self) -> (Value, u64) {
        match self {
            Cell::Std { value, updates } => (value, updates),
            Cell::Pac(_) => unreachable!("oracle aggregation is always standard"),
        }
    }
}

/// Groups a chunk and folds every spec, feeding rows in row-id order.
/// Returns groups sorted by key value.
pub(crate) fn aggregate_groups(
    chunk: &Chunk,
    group_keys: &[String],
    specs: &[AggSpec],
    tiers: &TierConfig,
) -> Result<Vec<(Vec<Value>, Vec<Cell>)>, EngineError> {
    let schema = &chunk.schema;
    let key_idx: Vec<usize> = group_keys
        .iter()
        .map(|k| {
            schema
                .index_of(k)
                .ok_or_else(|| PlanError::Semantic(format!("unknown group key `{k}`")))
        })
        .collect::<Result<_, _>>()?;

    struct BoundSpec {
        kind: AggKind,
        input: Option<ScalarExpr>,
        agg_input: AggInput,
        pac_pu_idx: Option<usize>,
    }
    let mut bound = Vec::with_capacity(specs.len());
    for spec in specs {
        let input = spec.input.as_ref().map(|e| e.bind(schema)).transpose()?;
        let agg_input = match &input {
            None => AggInput::Unit,
            Some(e) => match type_check(e, schema)? {
                ValueType::Float64 => AggInput::Float,
                _ => AggInput::Int,
            },
        };
        let pac_pu_idx = match spec.pac.pu_column() {
            Some(pu) => Some(
                schema
                    .index_of(pu)
                    .ok_or_else(|| PlanError::Semantic(format!("unknown pu column `{pu}`")))?,
            ),
            None => None,
        };
        bound.push(BoundSpec { kind: spec.kind, input, agg_input, pac_pu_idx });
    }

    let mut groups: BTreeMap<SortableRow, Vec<Cell>> = BTreeMap::new();
    let make_cells = |tiers: &TierConfig| -> Vec<Cell> {
        bound
            .iter()
            .map(|b| {
                if b.pac_pu_idx.is_some() {
                    Cell::Pac(Accumulator::new(b.kind, b.agg_input, tiers))
                } else {
                    Cell::Std { value: Value::Null, updates: 0 }
                }
            })
            .collect()
    };

    // standard accumulators are folded inline to keep Cell small
    enum StdAcc {
        Count(i64),
        SumInt(i128, u64),
        SumFloat(f64, u64),
        AvgInt(i128, u64),
        AvgFloat(f64, u64),
        Extreme(Option<Value>, bool, u64), // (current, is_max, updates)
    }
    let mk_std = |b: &BoundSpec| match (b.kind, b.agg_input) {
        (AggKind::Count | AggKind::CountStar, _) => StdAcc::Count(0),
        (AggKind::Sum, AggInput::Float) => StdAcc::SumFloat(0.0, 0),
        (AggKind::Sum, _) => StdAcc::SumInt(0, 0),
        (AggKind::Avg, AggInput::Float) => StdAcc::AvgFloat(0.0, 0),
        (AggKind::Avg, _) => StdAcc::AvgInt(0, 0),
        (AggKind::Min, _) => StdAcc::Extreme(None, false, 0),
        (AggKind::Max, _) => StdAcc::Extreme(None, true, 0),
    };

    let mut std_state: HashMap<(usize, usize), StdAcc> = HashMap::new(); // (group ordinal, spec)
    let mut group_ordinals: HashMap<SortableRow, usize> = HashMap::new();

    // ungrouped aggregation always yields one row, even over no input
    if group_keys.is_empty() {
        groups.insert(SortableRow(vec![]), make_cells(tiers));
        group_ordinals.insert(SortableRow(vec![]), 0);
        for (si, b) in bound.iter().enumerate() {
            if b.pac_pu_idx.is_none() {
                std_state.insert((0, si), mk_std(b));
            }
        }
    }

    for i in chunk.rid_order() {
        let row = &chunk.rows[i];
        let key = SortableRow(key_idx.iter().map(|&k| row[k].clone()).collect());
        let next_ordinal = group_ordinals.len();
        let ordinal = *group_ordinals.entry(key.clone()).or_insert(next_ordinal);
        let cells = groups.entry(key).or_insert_with(|| make_cells(tiers));
        for (si, b) in bound.iter().enumerate() {
            let arg = match &b.input {
                Some(e) => {
                    let v = eval_scalar(e, schema, row);
                    if v.is_null() {
                        // SQL aggregates skip NULL inputs
                        continue;
                    }
                    Some(v)
                }
                None => None,
            };
            match (&mut cells[si], b.pac_pu_idx) {
                (Cell::Pac(acc), Some(pu_idx)) => {
                    let pu = match row[pu_idx] {
                        Value::Hash(h) => PuHash(h),
                        // rows outside every world contribute nothing
                        _ => continue,
                    };
                    if pu.0 == 0 {
                        continue;
                    }
                    let av = match (b.agg_input, &arg) {
                        (AggInput::Unit, _) => AggValue::Unit,
                        (AggInput::Int, Some(v)) => AggValue::Int(v.as_i64().unwrap_or(0)),
                        (AggInput::Float, Some(v)) => AggValue::Float(v.as_f64().unwrap_or(0.0)),
                        _ => continue,
                    };
                    acc.update(pu, av);
                }
                (Cell::Std { .. }, _) => {
                    let acc = std_state.entry((ordinal, si)).or_insert_with(|| mk_std(b));
                    match acc {
                        StdAcc::Count(n) => *n += 1,
                        StdAcc::SumInt(s, n) => {
                            *s += arg.as_ref().and_then(|v| v.as_i64()).unwrap_or(0) as i128;
                            *n += 1;
                        }
                        StdAcc::SumFloat(s, n) => {
                            *s += arg.as_ref().and_then(|v| v.as_f64()).unwrap_or(0.0);
                            *n += 1;
                        }
                        StdAcc::AvgInt(s, n) => {
                            *s += arg.as_ref().and_then(|v| v.as_i64()).unwrap_or(0) as i128;
                            *n += 1;
                        }
                        StdAcc::AvgFloat(s, n) => {
                            *s += arg.as_ref().and_then(|v| v.as_f64()).unwrap_or(0.0);
                            *n += 1;
                        }
                        StdAcc::Extreme(cur, is_max, n) => {
                            let v = arg.clone().unwrap_or(Value::Null);
                            let take = match cur {
                                None => true,
                                Some(c) => {
                                    let ord = v.cmp_total(c);
                                    if *is_max {
                                        ord == std::cmp::Ordering::Greater
                                    } else {
                                        ord == std::cmp::Ordering::Less
                                    }
                                }
                            };
                            if take {
                                *cur = Some(v);
                            }
                            *n += 1;
                        }
                    }
                }
                _ => unreachable!(),
            }
        }
    }

    // finalize standard cells
    let mut out = Vec::with_capacity(groups.len());
    for (key, mut cells) in groups {
        let ordinal = group_ordinals[&key];
        for (si, cell) in cells.iter_mut().enumerate() {
            if let Cell::Std { value, updates } = cell {
                let acc = std_state.remove(&(ordinal, si));
                let (v, n) = match acc {
                    None => (finalize_empty_std(bound[si].kind), 0),
                    Some(StdAcc::Count(n)) => (Value::Int64(n), n as u64),
                    Some(StdAcc::SumInt(s, n)) => (
                        if n == 0 { Value::Null } else { Value::Int64(s as i64) },
                        n,
                    ),
                    Some(StdAcc::SumFloat(s, n)) => {
                        (if n == 0 { Value::Null } else { Value::Float64(s) }, n)
                    }
                    Some(StdAcc::AvgInt(s, n)) => (
                        if n == 0 { Value::Null } else { Value::Float64(s as f64 / n as f64) },
                        n,
                    ),
                    Some(StdAcc::AvgFloat(s, n)) => (
                        if n == 0 { Value::Null } else { Value::Float64(s / n as f64) },
                        n,
                    ),
                    Some(StdAcc::Extreme(cur, _, n)) => (cur.unwrap_or(Value::Null), n),
                };
                *value = v;
                *updates = n;
            }
        }
        out.push((key.0, cells));
    }
    Ok(out)
}

fn finalize_empty_std(kind: AggKind) -> Value {
    match kind {
        AggKind::Count | AggKind::CountStar => Value::Int64(0),
        _ => Value::Null,
    }
}

/// Group-key wrapper ordered by the total value order, so BTreeMap iteration
/// is the canonical group order.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct SortableRow(pub Vec<Value>);

impl Eq for SortableRow {}

impl PartialOrd for SortableRow {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for SortableRow {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        for (a, b) in self.0.iter().zip(&other.0) {
            let ord = a.cmp_total(b);
            if ord != std::cmp::Ordering::Equal {
                return ord;
            }
        }
        self.0.len().cmp(&other.0.len())
    }
}

impl std::hash::Hash for SortableRow {
    fn hash<H: std::hash::Hasher>(&self, state: &mut H) {
        for v in &self.0 {
            match v {
                Value::Int64(x) => (0u8, *x).hash(state),
                Value::Float64(f) => (1u8, f.to_bits()).hash(state),
                Value::Boolean(b) => (2u8, *b).hash(state),
                Value::Text(s) => (3u8, s).hash(state),
                Value::Date(d) => (4u8, *d).hash(state),
                Value::Null => 5u8.hash(state),
                Value::Hash(h) => (6u8, *h).hash(state),
                Value::VectorF64(_) => 7u8.hash(state),
            }
        }
    }
}

/// Join-key encoding; NULL keys never match.
type HashableValue = u64;

fn join_key(row: &[Value], idx: &[usize]) -> Option<Vec<HashableValue>> {
    let mut out = Vec::with_capacity(idx.len());
    for &i in idx {
        let enc = match &row[i] {
            Value::Null => return None,
            Value::Int64(x) => crate::hashing::mix64(*x as u64),
            Value::Date(d) => crate::hashing::mix64(*d as i64 as u64),
            Value::Float64(f) => crate::hashing::mix64(f.to_bits()),
            Value::Boolean(b) => crate::hashing::mix64(*b as u64),
            Value::Text(s) => {
                let mut h: u64 = 0xcbf2_9ce4_8422_2325;
                for b in s.as_bytes() {
                    h ^= *b as u64;
                    h = h.wrapping_mul(0x0000_0100_0000_01b3);
                }
                h
            }
            Value::Hash(h) => *h,
            Value::VectorF64(_) => return None,
        };
        out.push(enc);
    }
    Some(out)
}

/// Builds the lift inputs for one row: vector columns feed slot-wise, NULL
/// vector cells read as the all-absent vector, everything else broadcasts.
fn lift_inputs<'r>(schema: &Schema, row: &'r [Value]) -> Vec<LiftInput<'r>> {
    static EMPTY: WorldVector = WorldVector { values: [0.0; 64], mask: 0 };
    schema
        .columns
        .iter()
        .zip(row)
        .map(|(col, v)| {
            if col.ty == ValueType::VectorF64 {
                match v {
                    Value::VectorF64(b) => LiftInput::Vector(b),
                    _ => LiftInput::Vector(&EMPTY),
                }
            } else {
                LiftInput::Scalar(v.clone())
            }
        })
        .collect()
}

pub(crate) fn lift_vector(expr: &ScalarExpr, schema: &Schema, row: &[Value]) -> WorldVector {
    let inputs = lift_inputs(schema, row);
    vector_lift(expr, &crate::planner::scalarized(schema), &inputs)
}

pub(crate) fn eval_lift_predicate(expr: &ScalarExpr, schema: &Schema, row: &[Value]) -> u64 {
    let inputs = lift_inputs(schema, row);
    lift_predicate(expr, &crate::planner::scalarized(schema), &inputs)
}

/// End-to-end front door used by the CLI and tests: classify, rewrite when
/// needed, execute.
#[derive(Debug)]
pub struct QueryOutcome {
    pub classification: crate::catalog::Classification,
    pub result: Option<Relation>,
    pub trace: Option<crate::planner::RewriteTrace>,
    pub cells_released: u64,
    pub total_mi: f64,
}

pub fn run_query(
    sql: &str,
    catalog: &PrivacyCatalog,
    db: &Database,
    config: &ExecConfig,
) -> Result<QueryOutcome, EngineError> {
    let plan = crate::planner::parse_query(sql, &catalog.schemas)?;
    let plan = crate::planner::normalize(plan);
    schema_of(&plan, &catalog.schemas)?;
    let classification = crate::catalog::classify(&plan, catalog);
    match classification {
        crate::catalog::Classification::Rejected { .. } => Ok(QueryOutcome {
            classification,
            result: None,
            trace: None,
            cells_released: 0,
            total_mi: 0.0,
        }),
        crate::catalog::Classification::Inconspicuous => {
            let result = execute(&plan, db, config)?;
            Ok(QueryOutcome {
                classification,
                result: Some(result),
                trace: None,
                cells_released: 0,
                total_mi: 0.0,
            })
        }
        crate::catalog::Classification::Rewritable => {
            let (rewritten, trace) = match crate::planner::pac_rewrite(&plan, catalog) {
                Ok(x) => x,
                Err(PlanError::Unsupported { construct }) => {
                    return Ok(QueryOutcome {
                        classification: crate::catalog::Classification::Rejected {
                            reason: crate::catalog::RejectReason::UnsupportedOperator,
                            message: construct,
                        },
                        result: None,
                        trace: None,
                        cells_released: 0,
                        total_mi: 0.0,
                    })
                }
                Err(e) => return Err(e.into()),
            };
            let optimized = crate::planner::optimize(rewritten, &catalog.schemas);
            let mut session = config.session();
            let result = execute_with_session(&optimized, db, &mut session, config.tiers)?;
            Ok(QueryOutcome {
                classification,
                result: Some(result),
                trace: Some(trace),
                cells_released: session.cells_released,
                total_mi: session.total_mi(),
            })
        }
    }
}
