//! The m-fold reference oracle.
//!
//! Instead of one bitslice pass, the oracle materializes the database
//! restricted to each of the 64 worlds — filtering PU-linked rows by their
//! precomputed hash bit, so both strategies sample the very same worlds —
//! runs the original plan per world with the plain scalar interpreter,
//! collects the per-cell 64-value lists, and then applies the identical
//! noise session in the identical cell order as the engine.

use std::collections::{BTreeMap, HashMap, HashSet};

use super::{
    aggregate_groups, sort_chunk, Chunk, Database, EngineError, ExecConfig, Executor,
};
use crate::aggregates::{AggKind, TierConfig};
use crate::catalog::PrivacyCatalog;
use crate::hashing::{base_hash, pac_hash_raw, QuerySalt};
use crate::planner::{
    schema_of, AggSpec, FilterExpr, LogicalPlan, PlanError, PlanExpr, ProjItem, SortKey,
};
use crate::relcore::{eval_scalar, BinaryOp, Relation, ScalarExpr, Schema, Value, ValueType};
use crate::worlds::{pac_filter, pac_noised, NoiseSession, WorldVector, WORLDS};

/// Executes the original (unrewritten, normalized) plan under the
/// materialized-worlds semantics, coupled to the engine through the shared
/// seed: same salt, same secret world, same posterior, same draw order.
pub fn execute_oracle(
    plan: &LogicalPlan,
    db: &Database,
    catalog: &PrivacyCatalog,
    config: &ExecConfig,
) -> Result<Relation, EngineError> {
    let mut session = config.session();
    let pu = assign_pu(db, catalog, session.salt)?;
    let mut oracle = Oracle {
        db,
        catalog,
        pu,
        overlay: HashMap::new(),
        pending: Vec::new(),
        tiers: config.tiers,
    };
    oracle.run(plan, &mut session)
}

/// Per-row world masks for every PU-linked base table, derived once by
/// following the FK chains.
fn assign_pu(
    db: &Database,
    catalog: &PrivacyCatalog,
    salt: QuerySalt,
) -> Result<HashMap<String, Vec<u64>>, EngineError> {
    let mut out: HashMap<String, Vec<u64>> = HashMap::new();
    let Some(pu_table) = catalog.pu_table.as_deref() else {
        return Ok(out);
    };

    // order: PU table first, then by chain length
    let mut order: Vec<(usize, String)> = Vec::new();
    for name in db.tables.keys() {
        if let Some(chain) = catalog.fk_path(name) {
            order.push((chain.len(), name.clone()));
        }
    }
    order.sort();

    for (_, table) in order {
        let rel = &db.tables[&table];
        let masks: Vec<u64> = if table == pu_table {
            let key_idx: Vec<usize> = catalog
                .pac_key
                .iter()
                .map(|c| rel.schema.index_of(c).unwrap())
                .collect();
            (0..rel.row_count())
                .map(|i| {
                    let key: Vec<Value> =
                        key_idx.iter().map(|&k| rel.columns[k][i].clone()).collect();
                    Ok(pac_hash_raw(base_hash(&key)?, salt).0)
                })
                .collect::<Result<_, EngineError>>()?
        } else {
            let link = catalog.links.iter().find(|l| l.from_table == table).unwrap();
            let local_idx: Vec<usize> = link
                .local_columns
                .iter()
                .map(|c| rel.schema.index_of(c).unwrap())
                .collect();
            if link.to_table == pu_table {
                // the FK references the PU key directly: hash the FK value
                (0..rel.row_count())
                    .map(|i| {
                        let key: Vec<Value> =
                            local_idx.iter().map(|&k| rel.columns[k][i].clone()).collect();
                        Ok(pac_hash_raw(base_hash(&key)?, salt).0)
                    })
                    .collect::<Result<_, EngineError>>()?
            } else {
                // look the parent row up and inherit its mask; orphans
                // belong to no world (the engine's chain join drops them)
                let parent = &db.tables[&link.to_table];
                let parent_masks = &out[&link.to_table];
                let ref_idx: Vec<usize> = link
                    .referenced_columns
                    .iter()
                    .map(|c| parent.schema.index_of(c).unwrap())
                    .collect();
                let mut index: HashMap<super::SortableRow, u64> = HashMap::new();
                for i in 0..parent.row_count() {
                    let key = super::SortableRow(
                        ref_idx.iter().map(|&k| parent.columns[k][i].clone()).collect(),
                    );
                    index.insert(key, parent_masks[i]);
                }
                (0..rel.row_count())
                    .map(|i| {
                        let key = super::SortableRow(
                            local_idx.iter().map(|&k| rel.columns[k][i].clone()).collect(),
                        );
                        index.get(&key).copied().unwrap_or(0)
                    })
                    .collect()
            }
        };
        out.insert(table, masks);
    }
    Ok(out)
}

struct Oracle<'a> {
    db: &'a Database,
    catalog: &'a PrivacyCatalog,
    pu: HashMap<String, Vec<u64>>,
    /// privatized CTE results, already noised
    overlay: HashMap<String, Relation>,
    /// raw CTEs inlined into the per-world runs
    pending: Vec<(String, LogicalPlan)>,
    tiers: TierConfig,
}

enum PostOp {
    Sort(Vec<SortKey>),
    Limit(usize),
}

struct Spine {
    post: Vec<PostOp>,
    items: Vec<ProjItem>,
    shape: SpineShape,
}

enum SpineShape {
    TopAgg { group_keys: Vec<String>, specs: Vec<AggSpec>, core: LogicalPlan },
    Rows { categorical: Option<ScalarExpr>, core: LogicalPlan },
}

impl<'a> Oracle<'a> {
    fn run(
        &mut self,
        plan: &LogicalPlan,
        session: &mut NoiseSession,
    ) -> Result<Relation, EngineError> {
        match plan {
            LogicalPlan::Cte { name, body, rest } => {
                if self.block_privatized(body) {
                    // release boundary: the body materializes noised cells
                    let rel = self.run_block(body, session)?;
                    self.overlay.insert(name.clone(), rel);
                } else {
                    self.pending.push((name.clone(), (**body).clone()));
                }
                let out = self.run(rest, session);
                self.overlay.remove(name);
                self.pending.retain(|(n, _)| n != name);
                out
            }
            other => self.run_block(other, session),
        }
    }

    /// Aggregates over sensitive input grouped by non-sensitive keys get
    /// noised, which makes their block a release boundary. Mirrors the
    /// rewriter's decision exactly.
    fn block_privatized(&self, plan: &LogicalPlan) -> bool {
        match plan {
            LogicalPlan::Aggregate { input, group_keys, .. } => {
                (self.subtree_sensitive(input) && !self.keys_sensitive(group_keys))
                    || self.block_privatized(input)
            }
            other => other.children().iter().any(|c| self.block_privatized(c)),
        }
    }

    fn keys_sensitive(&self, keys: &[String]) -> bool {
        keys.iter().any(|k| self.catalog.protected.iter().any(|(_, c)| c == k))
    }

    fn subtree_sensitive(&self, plan: &LogicalPlan) -> bool {
        match plan {
            LogicalPlan::Scan { table } => self.table_sensitive(table),
            LogicalPlan::Aggregate { input, group_keys, .. } => {
                self.subtree_sensitive(input) && self.keys_sensitive(group_keys)
            }
            other => other.children().iter().any(|c| self.subtree_sensitive(c)),
        }
    }

    fn table_sensitive(&self, table: &str) -> bool {
        if self.overlay.contains_key(table) {
            return false;
        }
        if let Some((_, body)) = self.pending.iter().find(|(n, _)| n == table) {
            return self.subtree_sensitive(body);
        }
        self.catalog.reaches_pu(table)
    }

    fn tables_with_overlay(&self) -> HashMap<String, Schema> {
        let mut t = self.catalog.schemas.clone();
        for (name, rel) in &self.overlay {
            t.insert(name.clone(), rel.schema.clone());
        }
        for (name, body) in &self.pending {
            if let Ok(s) = schema_of(body, &t) {
                t.insert(name.clone(), s);
            }
        }
        t
    }

    fn run_block(
        &mut self,
        plan: &LogicalPlan,
        session: &mut NoiseSession,
    ) -> Result<Relation, EngineError> {
        let scans = plan.scanned_tables();
        let touches_sensitive = scans.iter().any(|t| self.table_sensitive(t))
            || self
                .pending
                .iter()
                .any(|(n, body)| scans.contains(n) && self.subtree_sensitive(body));
        if !touches_sensitive {
            // post-processing over privatized or unlinked data runs once
            let full = self.full_db();
            let wrapped = self.wrap_pending(plan.clone());
            return exec_plain(&wrapped, &full, self.tiers);
        }

        let spine = self.split_spine(plan)?;
        match spine.shape {
            SpineShape::TopAgg { ref group_keys, ref specs, ref core } => {
                self.run_top_agg(&spine, group_keys, specs, core, session)
            }
            SpineShape::Rows { ref categorical, ref core } => match categorical {
                Some(pred) => self.run_row_release(&spine, pred, core, session),
                None => {
                    // sensitive rows released raw: no aggregates, no
                    // stochastic choices — identical to the plain run
                    let full = self.full_db();
                    let wrapped = self.wrap_pending(plan.clone());
                    exec_plain(&wrapped, &full, self.tiers)
                }
            },
        }
    }

    // -- spine analysis ------------------------------------------------------

    fn split_spine(&self, plan: &LogicalPlan) -> Result<Spine, EngineError> {
        let sq_sensitive = self.sensitive_subqueries(plan);
        let mut post = Vec::new();
        let mut node = plan;
        loop {
            match node {
                LogicalPlan::Sort { input, keys } => {
                    post.push(PostOp::Sort(keys.clone()));
                    node = input;
                }
                LogicalPlan::Limit { input, n } => {
                    post.push(PostOp::Limit(*n));
                    node = input;
                }
                _ => break,
            }
        }
        let LogicalPlan::Project { input, items } = node else {
            return Err(PlanError::Semantic("query block must end in a projection".into()).into());
        };
        let items = items.clone();

        // filters between the projection and the core
        let mut categorical: Vec<ScalarExpr> = Vec::new();
        let mut plain: Vec<ScalarExpr> = Vec::new();
        let mut node = input.as_ref();
        while let LogicalPlan::Filter { input, pred } = node {
            let FilterExpr::Scalar(pred) = pred else {
                return Err(PlanError::Semantic("oracle expects the original plan".into()).into());
            };
            for conj in flatten_conjuncts(pred.clone()) {
                if references_any(&conj, &sq_sensitive) {
                    categorical.push(conj);
                } else {
                    plain.push(conj);
                }
            }
            node = input;
        }

        if let LogicalPlan::Aggregate { input, group_keys, specs } = node {
            if !categorical.is_empty() || !plain.is_empty() {
                return Err(PlanError::Unsupported {
                    construct: "filter between projection and aggregation".into(),
                }
                .into());
            }
            return Ok(Spine {
                post,
                items,
                shape: SpineShape::TopAgg {
                    group_keys: group_keys.clone(),
                    specs: specs.clone(),
                    core: (**input).clone(),
                },
            });
        }

        let mut core = node.clone();
        if let Some(p) =
            plain.into_iter().reduce(|a, b| ScalarExpr::binary(BinaryOp::And, a, b))
        {
            core = LogicalPlan::Filter { input: Box::new(core), pred: FilterExpr::Scalar(p) };
        }
        let categorical =
            categorical.into_iter().reduce(|a, b| ScalarExpr::binary(BinaryOp::And, a, b));
        Ok(Spine { post, items, shape: SpineShape::Rows { categorical, core } })
    }

    /// Value columns of scalar subqueries whose aggregate runs over
    /// sensitive data — the columns whose comparisons the engine lifts into
    /// per-world outcomes.
    fn sensitive_subqueries(&self, plan: &LogicalPlan) -> HashSet<String> {
        let mut out = HashSet::new();
        let mut stack = vec![plan];
        while let Some(node) = stack.pop() {
            if let LogicalPlan::Join { right, .. } = node {
                if let LogicalPlan::Project { items, .. } = right.as_ref() {
                    for item in items {
                        if item.alias.starts_with("#sq")
                            && !item.alias.contains('_')
                            && self.block_privatized(right)
                        {
                            out.insert(item.alias.clone());
                        }
                    }
                }
            }
            stack.extend(node.children());
        }
        out
    }

    // -- world materialization -----------------------------------------------

    fn full_db(&self) -> Database {
        let mut db = Database::new();
        for (name, rel) in &self.db.tables {
            db.tables.insert(name.clone(), rel.clone());
        }
        for (name, rel) in &self.overlay {
            db.tables.insert(name.clone(), rel.clone());
        }
        db
    }

    /// The database instance of world `j`: PU-linked tables keep only rows
    /// whose mask has bit `j`, with row ids preserved from the base table.
    fn world_db(&self, needed: &[String], j: usize) -> Database {
        let mut db = Database::new();
        for name in needed {
            if let Some(rel) = self.overlay.get(name) {
                db.tables.insert(name.clone(), rel.clone());
                continue;
            }
            let Some(rel) = self.db.tables.get(name) else { continue };
            match self.pu.get(name) {
                Some(masks) => {
                    let mut filtered = Relation::empty(rel.schema.clone());
                    let mut rids = Vec::new();
                    for i in 0..rel.row_count() {
                        if (masks[i] >> j) & 1 == 1 {
                            filtered.push_row(rel.row(i));
                            rids.push(i as u64);
                        }
                    }
                    db.tables.insert(name.clone(), filtered);
                    db.scan_rids.insert(name.clone(), rids);
                }
                None => {
                    db.tables.insert(name.clone(), rel.clone());
                }
            }
        }
        db
    }

    fn wrap_pending(&self, core: LogicalPlan) -> LogicalPlan {
        let mut out = core;
        let used = out.scanned_tables();
        let mut needed: Vec<(String, LogicalPlan)> = Vec::new();
        for (name, body) in self.pending.iter().rev() {
            let uses = used.contains(name)
                || needed.iter().any(|(_, b)| b.scanned_tables().contains(name));
            if uses {
                needed.push((name.clone(), body.clone()));
            }
        }
        for (name, body) in needed {
            out = LogicalPlan::Cte { name, body: Box::new(body), rest: Box::new(out) };
        }
        out
    }

    // -- pattern A: noised aggregate cells ------------------------------------

    fn run_top_agg(
        &mut self,
        spine: &Spine,
        group_keys: &[String],
        specs: &[AggSpec],
        core: &LogicalPlan,
        session: &mut NoiseSession,
    ) -> Result<Relation, EngineError> {
        let core = self.wrap_pending(core.clone());
        let needed = core.scanned_tables();
        let tables = self.tables_with_overlay();
        let core_schema = schema_of(&core, &tables)?;

        // collect per-world cells per group
        struct CellVec {
            values: [f64; WORLDS],
            mask: u64,
        }
        let mut collected: BTreeMap<super::SortableRow, Vec<CellVec>> = BTreeMap::new();
        for j in 0..WORLDS {
            let dbj = self.world_db(&needed, j);
            let chunk = exec_chunk(&core, &dbj, self.tiers)?;
            let groups = aggregate_groups(&chunk, group_keys, specs, &self.tiers)?;
            for (key, cells) in groups {
                let entry = collected.entry(super::SortableRow(key)).or_insert_with(|| {
                    specs
                        .iter()
                        .map(|_| CellVec { values: [0.0; WORLDS], mask: 0 })
                        .collect()
                });
                for (si, cell) in cells.into_iter().enumerate() {
                    let (value, updates) = cell.std_parts();
                    if updates > 0 {
                        if let Some(x) = value.as_f64() {
                            entry[si].values[j] = x;
                            entry[si].mask |= 1 << j;
                        }
                    }
                }
            }
        }

        // release: per group in key order, per projection item in order
        let alias_of: Vec<&str> = specs.iter().map(|s| s.alias.as_str()).collect();
        let kind_of: HashMap<&str, AggKind> =
            specs.iter().map(|s| (s.alias.as_str(), s.kind)).collect();

        // evaluation schema: group keys native, aggregate aliases as floats
        let mut eval_cols = Vec::new();
        for k in group_keys {
            let idx = core_schema
                .index_of(k)
                .ok_or_else(|| PlanError::Semantic(format!("unknown group key `{k}`")))?;
            eval_cols.push(core_schema.columns[idx].clone());
        }
        for s in specs {
            eval_cols.push(Schema::col(&s.alias, ValueType::Float64));
        }
        let eval_schema = Schema::new(eval_cols).map_err(PlanError::from)?;

        let mut out_cols = Vec::new();
        let mut bound_items = Vec::new();
        for item in &spine.items {
            let PlanExpr::Scalar(expr) = &item.expr else {
                return Err(PlanError::Semantic("oracle expects the original plan".into()).into());
            };
            let bound = expr.bind(&eval_schema)?;
            let refs: Vec<String> = {
                let mut v = Vec::new();
                bound.for_each_column(&mut |c| {
                    if alias_of.contains(&c.name.as_str()) && !v.contains(&c.name) {
                        v.push(c.name.clone());
                    }
                });
                v
            };
            let ty = if refs.is_empty() {
                crate::relcore::type_check(&bound, &eval_schema)?
            } else {
                ValueType::Float64
            };
            out_cols.push(Schema::col(&item.alias, ty));
            bound_items.push((bound, refs));
        }
        let out_schema = Schema::new(out_cols).map_err(PlanError::from)?;

        let mut out = Chunk::empty(out_schema, 1);
        for (gi, (key, cells)) in collected.iter().enumerate() {
            let mut out_row = Vec::with_capacity(bound_items.len());
            for (expr, refs) in &bound_items {
                if refs.is_empty() {
                    // group keys and constants pass through unprivatized
                    let row: Vec<Value> = key
                        .0
                        .iter()
                        .cloned()
                        .chain(specs.iter().map(|_| Value::Null))
                        .collect();
                    out_row.push(eval_scalar(expr, &eval_schema, &row));
                    continue;
                }
                // per-world evaluation of the output expression
                let mut base_mask = u64::MAX;
                for r in refs {
                    let si = alias_of.iter().position(|a| a == r).unwrap();
                    base_mask &= cells[si].mask;
                }
                let mut vector = WorldVector::empty();
                for j in 0..WORLDS {
                    if (base_mask >> j) & 1 == 0 {
                        continue;
                    }
                    let row: Vec<Value> = key
                        .0
                        .iter()
                        .cloned()
                        .chain(specs.iter().enumerate().map(|(si, s)| {
                            if refs.iter().any(|r| r == &s.alias) {
                                Value::Float64(cells[si].values[j])
                            } else {
                                Value::Null
                            }
                        }))
                        .collect();
                    if let Some(x) = eval_scalar(expr, &eval_schema, &row).as_f64() {
                        vector.values[j] = x;
                        vector.mask |= 1 << j;
                    }
                }
                let scale = if refs.len() == 1 {
                    kind_of[refs[0].as_str()].noise_scale()
                } else {
                    1.0
                };
                out_row.push(pac_noised(&vector, session, scale));
            }
            out.rows.push(out_row);
            out.rids.push(vec![gi as u64]);
        }

        self.apply_post(out, &spine.post)
    }

    // -- pattern B: probabilistic row release ----------------------------------

    fn run_row_release(
        &mut self,
        spine: &Spine,
        categorical: &ScalarExpr,
        core: &LogicalPlan,
        session: &mut NoiseSession,
    ) -> Result<Relation, EngineError> {
        let core = self.wrap_pending(core.clone());
        let needed = core.scanned_tables();
        let tables = self.tables_with_overlay();
        let core_schema = schema_of(&core, &tables)?;
        let stable = stable_rid_positions(&core, &tables)?;
        let pred = categorical.bind(&core_schema)?;

        struct Cand {
            values: Vec<Value>,
            bits: u64,
        }
        let mut candidates: BTreeMap<Vec<u64>, Cand> = BTreeMap::new();
        for j in 0..WORLDS {
            let dbj = self.world_db(&needed, j);
            let chunk = exec_chunk(&core, &dbj, self.tiers)?;
            for (row, rid) in chunk.rows.into_iter().zip(chunk.rids) {
                let key: Vec<u64> = rid
                    .iter()
                    .zip(&stable)
                    .filter(|(_, s)| **s)
                    .map(|(r, _)| *r)
                    .collect();
                let hit = eval_scalar(&pred, &core_schema, &row) == Value::Boolean(true);
                let entry =
                    candidates.entry(key).or_insert(Cand { values: row, bits: 0 });
                if hit {
                    entry.bits |= 1 << j;
                }
            }
        }

        // output schema mirrors the engine's released projection
        let mut out_cols = Vec::new();
        let mut bound_items = Vec::new();
        for item in &spine.items {
            let PlanExpr::Scalar(expr) = &item.expr else {
                return Err(PlanError::Semantic("oracle expects the original plan".into()).into());
            };
            let bound = expr.bind(&core_schema)?;
            let mut touches_sq = false;
            bound.for_each_column(&mut |c| touches_sq |= c.name.starts_with("#sq"));
            if touches_sq {
                return Err(PlanError::Unsupported {
                    construct: "releasing subquery aggregates without an enclosing aggregate"
                        .into(),
                }
                .into());
            }
            out_cols.push(Schema::col(
                &item.alias,
                crate::relcore::type_check(&bound, &core_schema)?,
            ));
            bound_items.push(bound);
        }
        let out_schema = Schema::new(out_cols).map_err(PlanError::from)?;

        let mut out = Chunk::empty(out_schema, 1);
        for (i, cand) in candidates.values().enumerate() {
            if pac_filter(cand.bits, session) {
                let row: Vec<Value> = bound_items
                    .iter()
                    .map(|e| eval_scalar(e, &core_schema, &cand.values))
                    .collect();
                out.rows.push(row);
                out.rids.push(vec![i as u64]);
            }
        }
        self.apply_post(out, &spine.post)
    }

    fn apply_post(&self, mut chunk: Chunk, post: &[PostOp]) -> Result<Relation, EngineError> {
        for op in post.iter().rev() {
            match op {
                PostOp::Sort(keys) => chunk = sort_chunk(chunk, keys)?,
                PostOp::Limit(n) => {
                    chunk.rows.truncate(*n);
                    chunk.rids.truncate(*n);
                }
            }
        }
        Ok(chunk.into_relation())
    }
}

fn exec_chunk(
    plan: &LogicalPlan,
    db: &Database,
    tiers: TierConfig,
) -> Result<Chunk, EngineError> {
    // the plan is original: it contains no noised expressions, so this
    // session is never touched
    let mut dummy = NoiseSession::new(0, 1.0, false);
    let mut exec = Executor { db, session: &mut dummy, tiers, ctes: HashMap::new() };
    exec.run(plan)
}

fn exec_plain(
    plan: &LogicalPlan,
    db: &Database,
    tiers: TierConfig,
) -> Result<Relation, EngineError> {
    Ok(exec_chunk(plan, db, tiers)?.into_relation())
}

/// Which rid components are stable across worlds (base-table positions)
/// versus world-local ordinals (aggregate and CTE outputs).
fn stable_rid_positions(
    plan: &LogicalPlan,
    _tables: &HashMap<String, Schema>,
) -> Result<Vec<bool>, EngineError> {
    fn walk(plan: &LogicalPlan, ctes: &mut HashSet<String>) -> Vec<bool> {
        match plan {
            LogicalPlan::Scan { table } => vec![!ctes.contains(table)],
            LogicalPlan::Aggregate { .. } => vec![false],
            LogicalPlan::Join { left, right, .. } => {
                let mut out = walk(left, ctes);
                out.extend(walk(right, ctes));
                out
            }
            LogicalPlan::Filter { input, .. }
            | LogicalPlan::Project { input, .. }
            | LogicalPlan::Sort { input, .. }
            | LogicalPlan::Limit { input, .. } => walk(input, ctes),
            LogicalPlan::Cte { name, rest, .. } => {
                ctes.insert(name.clone());
                let out = walk(rest, ctes);
                ctes.remove(name);
                out
            }
            LogicalPlan::SubqueryScalar { .. } => vec![false],
        }
    }
    let mut ctes = HashSet::new();
    Ok(walk(plan, &mut ctes))
}

fn flatten_conjuncts(e: ScalarExpr) -> Vec<ScalarExpr> {
    match e {
        ScalarExpr::Binary { op: BinaryOp::And, left, right } => {
            let mut out = flatten_conjuncts(*left);
            out.extend(flatten_conjuncts(*right));
            out
        }
        other => vec![other],
    }
}

fn references_any(e: &ScalarExpr, names: &HashSet<String>) -> bool {
    let mut hit = false;
    e.for_each_column(&mut |c| hit |= names.contains(&c.name));
    hit
}
