//! The privacy rewrite: a top-down pass inserts PU-key joins and derives the
//! hash column, then a bottom-up pass replaces aggregates with their
//! stochastic counterparts and rewrites categorical expressions (filters and
//! projections over per-world aggregate vectors).

use std::collections::HashMap;

use serde::Serialize;

use super::{
    schema_of, FilterExpr, JoinKind, LogicalPlan, PacMode, PlanError, PlanExpr, ProjItem, PU_COL,
};
use crate::aggregates::AggKind;
use crate::catalog::PrivacyCatalog;
use crate::relcore::{BinaryOp, ScalarExpr, Schema, ValueType};

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub enum RewriteRule {
    JoinAdded { from: String, to: String },
    JoinEliminated { table: String },
    HashProjected { source: String },
    AggReplaced { kind: AggKind, fused: bool },
    VectorLifted { output: String },
    SelectInserted,
    FilterProbabilistic,
    CtePropagated { name: String },
}

impl RewriteRule {
    pub fn render(&self) -> String {
        match self {
            RewriteRule::JoinAdded { from, to } => format!("JoinAdded({from}\u{2192}{to})"),
            RewriteRule::JoinEliminated { table } => format!("JoinEliminated({table})"),
            RewriteRule::HashProjected { source } => format!("HashProjected({source})"),
            RewriteRule::AggReplaced { kind, fused } => {
                format!("AggReplaced({} {})", if *fused { "fused" } else { "unfused" }, kind.name())
            }
            RewriteRule::VectorLifted { output } => format!("VectorLifted({output})"),
            RewriteRule::SelectInserted => "SelectInserted".to_string(),
            RewriteRule::FilterProbabilistic => "FilterProbabilistic".to_string(),
            RewriteRule::CtePropagated { name } => format!("CtePropagated({name})"),
        }
    }
}

/// Ordered record of the rules applied by one rewrite. The rewrite is a
/// deterministic function of (plan, catalog), so re-running it over the
/// original plan reproduces both the rewritten plan and this trace.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct RewriteTrace {
    pub rules: Vec<RewriteRule>,
}

/// Applies the privacy rewrite to a normalized, rewritable plan. Rewriting
/// is idempotent: an already-rewritten plan comes back unchanged with an
/// empty trace.
pub fn pac_rewrite(
    plan: &LogicalPlan,
    catalog: &PrivacyCatalog,
) -> Result<(LogicalPlan, RewriteTrace), PlanError> {
    if already_rewritten(plan) {
        return Ok((plan.clone(), RewriteTrace::default()));
    }
    let mut rw = Rewriter { catalog, trace: Vec::new(), cte_schemas: HashMap::new() };
    let mut out = rw.rewrite_query(plan.clone())?;
    #[cfg(debug_assertions)]
    {
        if let Err(msg) = rw.validate(&out) {
            return Err(PlanError::Semantic(format!("rewrite validator: {msg}")));
        }
    }
    let mut trace = RewriteTrace { rules: std::mem::take(&mut rw.trace) };
    settle_pac_modes(&mut out, &mut trace);
    Ok((out, trace))
}

fn already_rewritten(plan: &LogicalPlan) -> bool {
    let local = match plan {
        LogicalPlan::Project { items, .. } => {
            items.iter().any(|i| !matches!(i.expr, PlanExpr::Scalar(_)))
        }
        LogicalPlan::Aggregate { specs, .. } => specs.iter().any(|s| s.pac != PacMode::None),
        LogicalPlan::Filter { pred, .. } => !matches!(pred, FilterExpr::Scalar(_)),
        _ => false,
    };
    local || plan.children().iter().any(|c| already_rewritten(c))
}

struct Rewriter<'a> {
    catalog: &'a PrivacyCatalog,
    trace: Vec<RewriteRule>,
    /// rewritten CTE schemas (they change when a body noises or exports pu)
    cte_schemas: HashMap<String, Schema>,
}

impl<'a> Rewriter<'a> {
    fn tables(&self) -> HashMap<String, Schema> {
        let mut t = self.catalog.schemas.clone();
        for (name, s) in &self.cte_schemas {
            t.insert(name.clone(), s.clone());
        }
        t
    }

    fn schema(&self, plan: &LogicalPlan) -> Result<Schema, PlanError> {
        schema_of(plan, &self.tables())
    }

    /// CTE chains only appear at the query root; each body is rewritten as
    /// its own block before the main body.
    fn rewrite_query(&mut self, plan: LogicalPlan) -> Result<LogicalPlan, PlanError> {
        match plan {
            LogicalPlan::Cte { name, body, rest } => {
                // A body whose aggregation will be privatized is a release
                // boundary: it materializes noised scalars. Anything else
                // stays raw and must export the hash to its consumers.
                let release = self.block_has_pac_agg(&body)?;
                let body = self.rewrite_block(*body, release)?;
                let body_schema = self.schema(&body)?;
                if body_schema.index_of(PU_COL).is_some() {
                    self.trace.push(RewriteRule::CtePropagated { name: name.clone() });
                }
                self.cte_schemas.insert(name.clone(), body_schema);
                let rest = self.rewrite_query(*rest)?;
                self.cte_schemas.remove(&name);
                Ok(LogicalPlan::Cte { name, body: Box::new(body), rest: Box::new(rest) })
            }
            other => self.rewrite_block(other, true),
        }
    }

    /// Does this block contain an aggregate that the rewrite will turn
    /// stochastic (sensitive input, non-sensitive grouping keys)?
    fn block_has_pac_agg(&self, plan: &LogicalPlan) -> Result<bool, PlanError> {
        let found = match plan {
            LogicalPlan::Aggregate { input, group_keys, .. } => {
                (self.subtree_sensitive(input) && !self.keys_sensitive(group_keys))
                    || self.block_has_pac_agg(input)?
            }
            other => {
                let mut any = false;
                for c in other.children() {
                    any = any || self.block_has_pac_agg(c)?;
                }
                any
            }
        };
        Ok(found)
    }

    fn subtree_sensitive(&self, plan: &LogicalPlan) -> bool {
        match plan {
            LogicalPlan::Scan { table } => match self.cte_schemas.get(table) {
                Some(s) => s.index_of(PU_COL).is_some(),
                None => self.catalog.reaches_pu(table),
            },
            LogicalPlan::Aggregate { input, group_keys, .. } => {
                // a privatized aggregate consumes the hash; only the
                // single-owner sub-aggregation keeps its rows sensitive
                self.subtree_sensitive(input) && self.keys_sensitive(group_keys)
            }
            other => other.children().iter().any(|c| self.subtree_sensitive(c)),
        }
    }

    fn rewrite_block(
        &mut self,
        plan: LogicalPlan,
        release_at_root: bool,
    ) -> Result<LogicalPlan, PlanError> {
        let plan = self.instrument(plan, release_at_root)?;
        self.transform(plan, false, true)
    }

    // -- top-down phase ------------------------------------------------------

    /// Ensures every row of PU-linked data carries the `#pu` hash column.
    /// `at_root` is true on the spine of root projections; when the root is
    /// a release boundary the hash stops below it.
    fn instrument(&mut self, plan: LogicalPlan, at_root: bool) -> Result<LogicalPlan, PlanError> {
        match plan {
            node @ (LogicalPlan::Scan { .. } | LogicalPlan::Join { .. }) => {
                self.instrument_join_tree(node)
            }
            LogicalPlan::Filter { input, pred } => Ok(LogicalPlan::Filter {
                input: Box::new(self.instrument(*input, false)?),
                pred,
            }),
            LogicalPlan::Project { input, items } => {
                let input = self.instrument(*input, false)?;
                let schema = self.schema(&input)?;
                let mut items = items;
                if !at_root
                    && schema.index_of(PU_COL).is_some()
                    && !items.iter().any(|i| i.alias == PU_COL)
                {
                    items.push(ProjItem::column(PU_COL));
                }
                Ok(LogicalPlan::Project { input: Box::new(input), items })
            }
            LogicalPlan::Aggregate { input, mut group_keys, specs } => {
                let input = self.instrument(*input, false)?;
                let schema = self.schema(&input)?;
                if schema.index_of(PU_COL).is_some() && self.keys_sensitive(&group_keys) {
                    // single-owner sub-aggregation: the grouping key must pin
                    // down one privacy unit, and the hash rides along as an
                    // extra group column
                    if !self.keys_determine_pu(&group_keys) {
                        return Err(PlanError::Unsupported {
                            construct: format!(
                                "sub-aggregation grouped by protected columns [{}] that do not \
                                 determine the privacy unit",
                                group_keys.join(", ")
                            ),
                        });
                    }
                    group_keys.push(PU_COL.to_string());
                }
                Ok(LogicalPlan::Aggregate { input: Box::new(input), group_keys, specs })
            }
            LogicalPlan::Sort { input, keys } => Ok(LogicalPlan::Sort {
                input: Box::new(self.instrument(*input, at_root)?),
                keys,
            }),
            LogicalPlan::Limit { input, n } => Ok(LogicalPlan::Limit {
                input: Box::new(self.instrument(*input, at_root)?),
                n,
            }),
            LogicalPlan::Cte { .. } => Err(PlanError::Semantic(
                "CTE nodes must sit at the query root".into(),
            )),
            LogicalPlan::SubqueryScalar { .. } => Err(PlanError::Semantic(
                "plan must be normalized before the privacy rewrite".into(),
            )),
        }
    }

    /// Flattens a join tree, picks the cheapest hash provider among its scan
    /// leaves (the table closest to the PU along its FK chain, or a CTE that
    /// already exports the hash), and instruments exactly that leaf. Opaque
    /// non-scan leaves (subquery aggregate plans) are instrumented
    /// independently.
    fn instrument_join_tree(&mut self, node: LogicalPlan) -> Result<LogicalPlan, PlanError> {
        enum Leaf {
            Scan(String),
            Opaque(LogicalPlan),
        }
        type JoinShape = (JoinKind, Vec<String>, Vec<String>, Option<ScalarExpr>);
        fn flatten(node: LogicalPlan, leaves: &mut Vec<Leaf>, shape: &mut Vec<JoinShape>) {
            match node {
                LogicalPlan::Join { left, right, kind, left_keys, right_keys, residual } => {
                    flatten(*left, leaves, shape);
                    match *right {
                        LogicalPlan::Scan { table } => leaves.push(Leaf::Scan(table)),
                        other => leaves.push(Leaf::Opaque(other)),
                    }
                    shape.push((kind, left_keys, right_keys, residual));
                }
                LogicalPlan::Scan { table } => leaves.push(Leaf::Scan(table)),
                other => leaves.push(Leaf::Opaque(other)),
            }
        }
        let mut leaves = Vec::new();
        let mut shape = Vec::new();
        flatten(node, &mut leaves, &mut shape);

        // choose the provider leaf
        let mut best: Option<(usize, usize)> = None; // (leaf index, cost)
        for (i, leaf) in leaves.iter().enumerate() {
            let Leaf::Scan(table) = leaf else { continue };
            if let Some(schema) = self.cte_schemas.get(table) {
                if schema.index_of(PU_COL).is_some() {
                    best = Some((i, 0));
                    break;
                }
                continue;
            }
            if let Some(chain) = self.catalog.fk_path(table) {
                let cost = chain.len() + 1;
                if best.is_none_or(|(_, c)| cost < c) {
                    best = Some((i, cost));
                }
            }
        }

        let mut rebuilt: Vec<LogicalPlan> = Vec::new();
        for (i, leaf) in leaves.into_iter().enumerate() {
            let plan = match leaf {
                Leaf::Scan(table) => {
                    let is_best = best.map(|(bi, _)| bi) == Some(i);
                    let is_cte = self.cte_schemas.contains_key(&table);
                    if is_best && !is_cte {
                        self.attach_hash(table)?
                    } else {
                        LogicalPlan::Scan { table }
                    }
                }
                Leaf::Opaque(other) => self.instrument(other, false)?,
            };
            rebuilt.push(plan);
        }

        // reassemble left-deep, dropping a duplicate hash from the right side
        let mut iter = rebuilt.into_iter();
        let mut out = iter.next().unwrap();
        for (plan, (kind, lk, rk, residual)) in iter.zip(shape) {
            let left_has = self.schema(&out)?.index_of(PU_COL).is_some();
            let right_cols = self.schema(&plan)?;
            let right = if left_has && right_cols.index_of(PU_COL).is_some() {
                let names: Vec<String> =
                    right_cols.names().into_iter().map(|s| s.to_string()).collect();
                drop_column(plan, PU_COL, &names)
            } else {
                plan
            };
            out = LogicalPlan::Join {
                left: Box::new(out),
                right: Box::new(right),
                kind,
                left_keys: lk,
                right_keys: rk,
                residual,
            };
        }
        Ok(out)
    }

    /// Wraps a scan so its rows carry `#pu`, adding the minimal FK chain.
    /// The final hop to the PU table is never joined: by referential
    /// integrity the FK value hashes to the same world mask as the primary
    /// key it references.
    fn attach_hash(&mut self, table: String) -> Result<LogicalPlan, PlanError> {
        let chain: Vec<crate::catalog::PacLink> = self
            .catalog
            .fk_path(&table)
            .ok_or_else(|| PlanError::Semantic(format!("`{table}` does not reach the PU")))?
            .into_iter()
            .cloned()
            .collect();
        let base_schema = self
            .catalog
            .schema(&table)
            .ok_or_else(|| PlanError::Semantic(format!("unknown table `{table}`")))?
            .clone();
        let mut plan = LogicalPlan::Scan { table: table.clone() };
        let mut cols: Vec<String> = base_schema.names().iter().map(|s| s.to_string()).collect();

        let (hash_cols, source_desc) = if chain.is_empty() {
            // scanning the PU table itself: hash its PAC key directly
            (self.catalog.pac_key.clone(), format!("{table}.{}", self.catalog.pac_key.join("+")))
        } else if chain.len() == 1 {
            // the FK column already references the PU key: no join needed
            self.trace.push(RewriteRule::JoinEliminated { table: chain[0].to_table.clone() });
            (
                chain[0].local_columns.clone(),
                format!("{table}.{}", chain[0].local_columns.join("+")),
            )
        } else {
            // join the chain up to the last table before the PU
            let mut prev = table.clone();
            for (i, link) in chain.iter().enumerate().take(chain.len() - 1) {
                let next_link = &chain[i + 1];
                let mut keep: Vec<String> = link.referenced_columns.clone();
                for c in &next_link.local_columns {
                    if !keep.contains(c) {
                        keep.push(c.clone());
                    }
                }
                let proj = LogicalPlan::Project {
                    input: Box::new(LogicalPlan::Scan { table: link.to_table.clone() }),
                    items: keep.iter().map(|c| ProjItem::column(c)).collect(),
                };
                plan = LogicalPlan::Join {
                    left: Box::new(plan),
                    right: Box::new(proj),
                    kind: JoinKind::Inner,
                    left_keys: link.local_columns.clone(),
                    right_keys: link.referenced_columns.clone(),
                    residual: None,
                };
                self.trace.push(RewriteRule::JoinAdded {
                    from: prev.clone(),
                    to: link.to_table.clone(),
                });
                cols.extend(keep);
                prev = link.to_table.clone();
            }
            let last = chain.last().unwrap();
            self.trace.push(RewriteRule::JoinEliminated { table: last.to_table.clone() });
            (last.local_columns.clone(), format!("{prev}.{}", last.local_columns.join("+")))
        };

        self.trace.push(RewriteRule::HashProjected { source: source_desc });
        let mut items: Vec<ProjItem> = cols.iter().map(|c| ProjItem::column(c)).collect();
        items.push(ProjItem {
            expr: PlanExpr::PacHash {
                keys: hash_cols.iter().map(|c| ScalarExpr::col(c.clone())).collect(),
            },
            alias: PU_COL.to_string(),
        });
        Ok(LogicalPlan::Project { input: Box::new(plan), items })
    }

    fn keys_sensitive(&self, keys: &[String]) -> bool {
        keys.iter().any(|k| self.catalog.protected.iter().any(|(_, c)| c == k))
    }

    /// A sensitive grouping key set is allowed only when it pins down a
    /// single privacy unit per group: it must contain the PAC key or an FK
    /// column on the chain toward the PU.
    fn keys_determine_pu(&self, keys: &[String]) -> bool {
        keys.iter().any(|k| {
            self.catalog.pac_key.contains(k)
                || self.catalog.links.iter().any(|l| {
                    (l.local_columns.contains(k) || l.referenced_columns.contains(k))
                        && self.catalog.reaches_pu(&l.to_table)
                })
        })
    }

    // -- bottom-up phase -----------------------------------------------------

    /// Replaces aggregates and rewrites categorical expressions. Children
    /// are transformed first, so vector-typed columns are visible in the
    /// input schemas. `agg_above` is set while below an enclosing
    /// stochastic aggregate; `at_root` marks the release projection spine.
    fn transform(
        &mut self,
        plan: LogicalPlan,
        agg_above: bool,
        at_root: bool,
    ) -> Result<LogicalPlan, PlanError> {
        match plan {
            LogicalPlan::Aggregate { input, group_keys, mut specs } => {
                let input_schema = self.schema(&input)?;
                let is_pac = input_schema.index_of(PU_COL).is_some()
                    && !group_keys.contains(&PU_COL.to_string());
                let input = self.transform(*input, agg_above || is_pac, false)?;
                if is_pac {
                    for spec in &mut specs {
                        // fused vs unfused is settled afterwards from the
                        // consumer analysis
                        spec.pac = PacMode::Unfused { pu: PU_COL.to_string() };
                    }
                }
                Ok(LogicalPlan::Aggregate { input: Box::new(input), group_keys, specs })
            }
            LogicalPlan::Filter { input, pred } => {
                let input = self.transform(*input, agg_above, false)?;
                let schema = self.schema(&input)?;
                let vectors = vector_column_kinds(&input, &schema);
                let FilterExpr::Scalar(pred) = pred else {
                    return Ok(LogicalPlan::Filter { input: Box::new(input), pred });
                };
                let (plain, lifted) = split_vector_conjuncts(pred, &vectors);
                let mut plan = input;
                if let Some(p) = plain {
                    plan =
                        LogicalPlan::Filter { input: Box::new(plan), pred: FilterExpr::Scalar(p) };
                }
                if let Some(lifted) = lifted {
                    if agg_above {
                        // an enclosing stochastic aggregate needs per-world
                        // outcomes: AND them into the hash rather than
                        // making an eager yes/no choice
                        if schema.index_of(PU_COL).is_none() {
                            return Err(PlanError::Unsupported {
                                construct: "world-vector filter without a PU hash".into(),
                            });
                        }
                        let mut items: Vec<ProjItem> = schema
                            .names()
                            .iter()
                            .filter(|n| **n != PU_COL)
                            .map(|n| ProjItem::column(n))
                            .collect();
                        items.push(ProjItem {
                            expr: PlanExpr::PacSelect { pu: PU_COL.to_string(), lifted },
                            alias: PU_COL.to_string(),
                        });
                        self.trace.push(RewriteRule::SelectInserted);
                        plan = LogicalPlan::Project { input: Box::new(plan), items };
                        plan = LogicalPlan::Filter {
                            input: Box::new(plan),
                            pred: FilterExpr::PuNonZero { pu: PU_COL.to_string() },
                        };
                    } else {
                        self.trace.push(RewriteRule::FilterProbabilistic);
                        plan = LogicalPlan::Filter {
                            input: Box::new(plan),
                            pred: FilterExpr::PacFilter { lifted },
                        };
                    }
                }
                Ok(plan)
            }
            LogicalPlan::Project { input, items } => {
                let input = self.transform(*input, agg_above, false)?;
                let schema = self.schema(&input)?;
                let vectors = vector_column_kinds(&input, &schema);
                let mut out_items = Vec::with_capacity(items.len());
                for item in items {
                    let PlanExpr::Scalar(expr) = &item.expr else {
                        out_items.push(item);
                        continue;
                    };
                    let refs = vector_refs(expr, &vectors);
                    if refs.is_empty() {
                        out_items.push(item);
                        continue;
                    }
                    if matches!(expr, ScalarExpr::Column(_)) && !at_root {
                        // bare rename keeps the vector flowing
                        out_items.push(item);
                        continue;
                    }
                    if !at_root {
                        return Err(PlanError::Unsupported {
                            construct: format!(
                                "expression over per-world aggregates outside a release \
                                 projection (column `{}`)",
                                item.alias
                            ),
                        });
                    }
                    let scale = release_scale(&refs, &vectors);
                    if refs.len() > 1 || !matches!(expr, ScalarExpr::Column(_)) {
                        self.trace.push(RewriteRule::VectorLifted { output: item.alias.clone() });
                    }
                    out_items.push(ProjItem {
                        expr: PlanExpr::PacNoised { lifted: expr.clone(), scale },
                        alias: item.alias,
                    });
                }
                Ok(LogicalPlan::Project { input: Box::new(input), items: out_items })
            }
            LogicalPlan::Sort { input, keys } => Ok(LogicalPlan::Sort {
                input: Box::new(self.transform(*input, agg_above, at_root)?),
                keys,
            }),
            LogicalPlan::Limit { input, n } => Ok(LogicalPlan::Limit {
                input: Box::new(self.transform(*input, agg_above, at_root)?),
                n,
            }),
            LogicalPlan::Join { left, right, kind, left_keys, right_keys, residual } => {
                Ok(LogicalPlan::Join {
                    left: Box::new(self.transform(*left, agg_above, false)?),
                    right: Box::new(self.transform(*right, agg_above, false)?),
                    kind,
                    left_keys,
                    right_keys,
                    residual,
                })
            }
            other @ LogicalPlan::Scan { .. } => Ok(other),
            LogicalPlan::Cte { .. } => {
                Err(PlanError::Semantic("CTE nodes must sit at the query root".into()))
            }
            LogicalPlan::SubqueryScalar { .. } => Err(PlanError::Semantic(
                "plan must be normalized before the privacy rewrite".into(),
            )),
        }
    }

    /// Debug-mode invariants on the rewritten plan: the release projection
    /// consumes every world vector and no hash column escapes.
    fn validate(&self, plan: &LogicalPlan) -> Result<(), String> {
        let schema = self.schema(plan).map_err(|e| e.to_string())?;
        for c in &schema.columns {
            if c.ty == ValueType::VectorF64 {
                return Err(format!("world vector `{}` escapes the release projection", c.name));
            }
            if c.ty == ValueType::Hash {
                return Err(format!("hash column `{}` escapes to the output", c.name));
            }
        }
        Ok(())
    }
}

/// COUNT and SUM estimates are doubled at release (each world holds half the
/// population); location estimates and multi-aggregate expressions release
/// the world value as-is.
fn release_scale(refs: &[String], vectors: &HashMap<String, AggKind>) -> f64 {
    if refs.len() != 1 {
        return 1.0;
    }
    vectors.get(&refs[0]).map_or(1.0, |k| k.noise_scale())
}

/// Vector-typed columns of `schema`, mapped to the aggregate kind that
/// produced them (following bare renames through projections).
fn vector_column_kinds(plan: &LogicalPlan, schema: &Schema) -> HashMap<String, AggKind> {
    let mut kinds = HashMap::new();
    collect_kinds(plan, &mut kinds);
    schema
        .columns
        .iter()
        .filter(|c| c.ty == ValueType::VectorF64)
        .map(|c| (c.name.clone(), kinds.get(&c.name).copied().unwrap_or(AggKind::Sum)))
        .collect()
}

fn collect_kinds(plan: &LogicalPlan, kinds: &mut HashMap<String, AggKind>) {
    match plan {
        LogicalPlan::Aggregate { input, specs, .. } => {
            collect_kinds(input, kinds);
            for s in specs {
                kinds.insert(s.alias.clone(), s.kind);
            }
        }
        LogicalPlan::Project { input, items } => {
            collect_kinds(input, kinds);
            let mut renamed = HashMap::new();
            for item in items {
                if let PlanExpr::Scalar(ScalarExpr::Column(c)) = &item.expr {
                    if let Some(k) = kinds.get(&c.name) {
                        renamed.insert(item.alias.clone(), *k);
                    }
                }
            }
            kinds.extend(renamed);
        }
        other => {
            for c in other.children() {
                collect_kinds(c, kinds);
            }
        }
    }
}

/// Settles fused/unfused per stochastic aggregate from its consumers and
/// records the replacement trace entries.
fn settle_pac_modes(plan: &mut LogicalPlan, trace: &mut RewriteTrace) {
    // usage[alias] = (bare release references, categorical references)
    let mut usage: HashMap<String, (usize, usize)> = HashMap::new();
    let mut renames: HashMap<String, String> = HashMap::new();
    collect_renames(plan, &mut renames);
    collect_usage(plan, &renames, &mut usage);
    apply_modes(plan, &usage, trace);
}

/// alias -> original aggregate alias, through bare column renames
fn collect_renames(plan: &LogicalPlan, renames: &mut HashMap<String, String>) {
    match plan {
        LogicalPlan::Project { input, items } => {
            collect_renames(input, renames);
            for item in items {
                if let PlanExpr::Scalar(ScalarExpr::Column(c)) = &item.expr {
                    let root = renames.get(&c.name).cloned().unwrap_or_else(|| c.name.clone());
                    renames.insert(item.alias.clone(), root);
                }
            }
        }
        other => {
            for c in other.children() {
                collect_renames(c, renames);
            }
        }
    }
}

fn canonical<'b>(renames: &'b HashMap<String, String>, name: &'b str) -> &'b str {
    renames.get(name).map(|s| s.as_str()).unwrap_or(name)
}

fn collect_usage(
    plan: &LogicalPlan,
    renames: &HashMap<String, String>,
    usage: &mut HashMap<String, (usize, usize)>,
) {
    match plan {
        LogicalPlan::Project { input, items } => {
            for item in items {
                match &item.expr {
                    PlanExpr::PacNoised { lifted, .. } => {
                        let bare = single_ref_affine(lifted);
                        lifted.for_each_column(&mut |c| {
                            let e = usage.entry(canonical(renames, &c.name).to_string()).or_default();
                            if bare {
                                e.0 += 1;
                            } else {
                                e.1 += 1;
                            }
                        });
                    }
                    PlanExpr::PacSelect { lifted, .. } => {
                        lifted.for_each_column(&mut |c| {
                            usage.entry(canonical(renames, &c.name).to_string()).or_default().1 += 1;
                        });
                    }
                    _ => {}
                }
            }
            collect_usage(input, renames, usage);
        }
        LogicalPlan::Filter { input, pred } => {
            if let FilterExpr::PacFilter { lifted } = pred {
                lifted.for_each_column(&mut |c| {
                    usage.entry(canonical(renames, &c.name).to_string()).or_default().1 += 1;
                });
            }
            collect_usage(input, renames, usage);
        }
        other => {
            for c in other.children() {
                collect_usage(c, renames, usage);
            }
        }
    }
}

/// exactly one column reference, combined only with literals through
/// arithmetic — deterministic post-processing of a single release
fn single_ref_affine(e: &ScalarExpr) -> bool {
    fn arithmetic_only(e: &ScalarExpr) -> bool {
        match e {
            ScalarExpr::Column(_) | ScalarExpr::Literal(_) => true,
            ScalarExpr::Binary { op, left, right } => {
                matches!(op, BinaryOp::Add | BinaryOp::Sub | BinaryOp::Mul | BinaryOp::Div)
                    && arithmetic_only(left)
                    && arithmetic_only(right)
            }
            ScalarExpr::Neg(x) => arithmetic_only(x),
            _ => false,
        }
    }
    let mut n = 0;
    e.for_each_column(&mut |_| n += 1);
    n == 1 && arithmetic_only(e)
}

fn apply_modes(
    plan: &mut LogicalPlan,
    usage: &HashMap<String, (usize, usize)>,
    trace: &mut RewriteTrace,
) {
    match plan {
        LogicalPlan::Aggregate { input, specs, .. } => {
            apply_modes(input, usage, trace);
            for spec in specs {
                if let PacMode::Unfused { pu } = spec.pac.clone() {
                    let (bare, categorical) = usage.get(&spec.alias).copied().unwrap_or((0, 0));
                    let fused = categorical == 0 && bare <= 1;
                    trace.rules.push(RewriteRule::AggReplaced { kind: spec.kind, fused });
                    if fused {
                        spec.pac = PacMode::Fused { pu };
                    }
                }
            }
        }
        LogicalPlan::Scan { .. } => {}
        other => {
            let children: Vec<&mut LogicalPlan> = match other {
                LogicalPlan::Filter { input, .. }
                | LogicalPlan::Project { input, .. }
                | LogicalPlan::Sort { input, .. }
                | LogicalPlan::Limit { input, .. } => vec![input],
                LogicalPlan::Join { left, right, .. } => vec![left, right],
                LogicalPlan::Cte { body, rest, .. } => vec![body, rest],
                LogicalPlan::SubqueryScalar { input, subplan, .. } => vec![input, subplan],
                _ => vec![],
            };
            for c in children {
                apply_modes(c, usage, trace);
            }
        }
    }
}

fn vector_refs(e: &ScalarExpr, vectors: &HashMap<String, AggKind>) -> Vec<String> {
    let mut out = Vec::new();
    e.for_each_column(&mut |c| {
        if vectors.contains_key(&c.name) && !out.contains(&c.name) {
            out.push(c.name.clone());
        }
    });
    out
}

/// Splits a predicate into the AND of vector-free conjuncts and the AND of
/// everything vector-touching (zipped into one lifted boolean).
fn split_vector_conjuncts(
    pred: ScalarExpr,
    vectors: &HashMap<String, AggKind>,
) -> (Option<ScalarExpr>, Option<ScalarExpr>) {
    let mut plain = Vec::new();
    let mut lifted = Vec::new();
    for conj in flatten_conjuncts(pred) {
        if vector_refs(&conj, vectors).is_empty() {
            plain.push(conj);
        } else {
            lifted.push(conj);
        }
    }
    let and_all =
        |v: Vec<ScalarExpr>| v.into_iter().reduce(|a, b| ScalarExpr::binary(BinaryOp::And, a, b));
    (and_all(plain), and_all(lifted))
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

fn drop_column(plan: LogicalPlan, name: &str, cols: &[String]) -> LogicalPlan {
    let items: Vec<ProjItem> =
        cols.iter().filter(|c| c.as_str() != name).map(|c| ProjItem::column(c)).collect();
    LogicalPlan::Project { input: Box::new(plan), items }
}
