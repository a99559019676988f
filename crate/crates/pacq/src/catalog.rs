//! Privacy metadata and query classification.
//!
//! The catalog holds the single privacy-unit table, its PAC key, the
//! protected column set, and the acyclic PAC-link FK graph. Incoming plans
//! classify as inconspicuous (no PU data touched), rejected (with a reason
//! code), or rewritable.

use std::collections::{BTreeSet, HashMap, HashSet};

use thiserror::Error;

use crate::planner::{lex, LogicalPlan, PlanExpr, Tok};
use crate::relcore::Schema;

#[derive(Debug, Error)]
pub enum CatalogError {
    #[error("ddl syntax error at byte {pos}: {msg}")]
    Syntax { pos: usize, msg: String },
    #[error("a PU table is already declared (`{0}`)")]
    DuplicatePu(String),
    #[error("PAC links must not form cycles (adding {0})")]
    CyclicLink(String),
    #[error("PAC_LINK arity mismatch: {0} local vs {1} referenced columns")]
    ArityMismatch(usize, usize),
    #[error("unknown referenced table `{0}`")]
    UnknownTable(String),
    #[error("table `{0}` is already defined")]
    DuplicateTable(String),
    #[error("table `{0}` already has an outgoing PAC link; one FK path per table")]
    MultipleLinks(String),
    #[error("unknown column `{column}` in {clause}")]
    UnknownColumn { column: String, clause: String },
    #[error("{0}")]
    Schema(#[from] crate::relcore::RelError),
}

/// Why a query was refused. Tests assert on the code, not message text.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RejectReason {
    ProtectedColumnRelease,
    ProtectedGroupKey,
    NonLinkJoin,
    UnsupportedOperator,
}

impl RejectReason {
    pub fn code(self) -> &'static str {
        match self {
            RejectReason::ProtectedColumnRelease => "ProtectedColumnRelease",
            RejectReason::ProtectedGroupKey => "ProtectedGroupKey",
            RejectReason::NonLinkJoin => "NonLinkJoin",
            RejectReason::UnsupportedOperator => "UnsupportedOperator",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Classification {
    Inconspicuous,
    Rejected { reason: RejectReason, message: String },
    Rewritable,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PacLink {
    pub from_table: String,
    pub local_columns: Vec<String>,
    pub to_table: String,
    pub referenced_columns: Vec<String>,
}

#[derive(Debug, Clone, Default)]
pub struct PrivacyCatalog {
    pub pu_table: Option<String>,
    pub pac_key: Vec<String>,
    pub protected: HashSet<(String, String)>,
    pub links: Vec<PacLink>,
    pub schemas: HashMap<String, Schema>,
    /// table definition order, for deterministic iteration
    pub table_order: Vec<String>,
}

impl PrivacyCatalog {
    pub fn new() -> Self {
        Self::default()
    }

    /// Parses `CREATE [PU] TABLE` statements and updates the catalog.
    pub fn load_ddl(&mut self, text: &str) -> Result<(), CatalogError> {
        let toks = lex(text).map_err(|e| match e {
            crate::planner::PlanError::Syntax { pos, msg } => CatalogError::Syntax { pos, msg },
            other => CatalogError::Syntax { pos: 0, msg: other.to_string() },
        })?;
        let mut cur = DdlCursor { toks, at: 0 };
        while cur.peek().is_some() {
            self.parse_create(&mut cur)?;
            while cur.eat_punct(";") {}
        }
        Ok(())
    }

    fn parse_create(&mut self, cur: &mut DdlCursor) -> Result<(), CatalogError> {
        cur.expect_kw("create")?;
        let is_pu = cur.eat_kw("pu");
        cur.expect_kw("table")?;
        let table = cur.ident()?;
        if self.schemas.contains_key(&table) {
            return Err(CatalogError::DuplicateTable(table));
        }
        if is_pu {
            if let Some(existing) = &self.pu_table {
                return Err(CatalogError::DuplicatePu(existing.clone()));
            }
        }
        cur.expect_punct("(")?;

        let mut columns = Vec::new();
        let mut pac_key: Vec<String> = Vec::new();
        let mut protected: Option<Vec<String>> = None;
        let mut link: Option<PacLink> = None;

        loop {
            if cur.eat_kw("pac_key") {
                pac_key = cur.column_list()?;
            } else if cur.eat_kw("protected") {
                protected = Some(cur.column_list()?);
            } else if cur.eat_kw("pac_link") {
                let local = cur.column_list()?;
                cur.expect_kw("references")?;
                let to_table = cur.ident()?;
                let referenced = cur.column_list()?;
                if local.len() != referenced.len() {
                    return Err(CatalogError::ArityMismatch(local.len(), referenced.len()));
                }
                if link.is_some() {
                    return Err(CatalogError::MultipleLinks(table.clone()));
                }
                link = Some(PacLink {
                    from_table: table.clone(),
                    local_columns: local,
                    to_table,
                    referenced_columns: referenced,
                });
            } else {
                let name = cur.ident()?;
                let ty_name = cur.ident()?;
                let ty = crate::planner::parser_type_name(&ty_name).ok_or_else(|| {
                    CatalogError::Syntax { pos: cur.pos(), msg: format!("unknown type `{ty_name}`") }
                })?;
                // swallow optional (p[, s])
                if cur.eat_punct("(") {
                    while !cur.eat_punct(")") {
                        if cur.next().is_none() {
                            return Err(CatalogError::Syntax {
                                pos: cur.pos(),
                                msg: "unterminated type arguments".into(),
                            });
                        }
                    }
                }
                columns.push(Schema::col(&name, ty));
            }
            if !cur.eat_punct(",") {
                break;
            }
        }
        cur.expect_punct(")")?;
        let schema = Schema::new(columns)?;

        let check_cols = |cols: &[String], clause: &str| -> Result<(), CatalogError> {
            for c in cols {
                if schema.index_of(c).is_none() {
                    return Err(CatalogError::UnknownColumn {
                        column: c.clone(),
                        clause: clause.to_string(),
                    });
                }
            }
            Ok(())
        };

        if is_pu {
            if pac_key.is_empty() {
                return Err(CatalogError::Syntax {
                    pos: cur.pos(),
                    msg: "PU table needs a PAC_KEY clause".into(),
                });
            }
            check_cols(&pac_key, "PAC_KEY")?;
            // all columns protected by default; PROTECTED(...) overrides
            // with the listed columns; the PAC key stays protected always
            let mut prot: Vec<String> = match protected {
                Some(cols) => {
                    check_cols(&cols, "PROTECTED")?;
                    cols
                }
                None => schema.names().iter().map(|s| s.to_string()).collect(),
            };
            prot.extend(pac_key.iter().cloned());
            for c in prot {
                self.protected.insert((table.clone(), c));
            }
            self.pu_table = Some(table.clone());
            self.pac_key = pac_key;
        } else if let Some(link) = link {
            check_cols(&link.local_columns, "PAC_LINK")?;
            if link.to_table == table {
                return Err(CatalogError::CyclicLink(format!("{table} -> {table}")));
            }
            let target = self.schemas.get(&link.to_table).ok_or_else(|| {
                CatalogError::UnknownTable(link.to_table.clone())
            })?;
            for c in &link.referenced_columns {
                if target.index_of(c).is_none() {
                    return Err(CatalogError::UnknownColumn {
                        column: c.clone(),
                        clause: "PAC_LINK REFERENCES".into(),
                    });
                }
            }
            // local and referenced link columns are both protected
            for c in &link.local_columns {
                self.protected.insert((table.clone(), c.clone()));
            }
            for c in &link.referenced_columns {
                self.protected.insert((link.to_table.clone(), c.clone()));
            }
            self.links.push(link);
            if self.has_cycle() {
                let link = self.links.pop().unwrap();
                return Err(CatalogError::CyclicLink(format!(
                    "{} -> {}",
                    link.from_table, link.to_table
                )));
            }
        }

        self.table_order.push(table.clone());
        self.schemas.insert(table, schema);
        Ok(())
    }

    fn has_cycle(&self) -> bool {
        // each table has at most one outgoing link, so following the chain
        // either terminates or revisits a node
        for start in self.links.iter().map(|l| l.from_table.as_str()) {
            let mut seen = vec![start];
            let mut cur = start;
            while let Some(link) = self.links.iter().find(|l| l.from_table == cur) {
                cur = &link.to_table;
                if seen.contains(&cur) {
                    return true;
                }
                seen.push(cur);
            }
        }
        false
    }

    /// FK chain from `table` to the PU table: `Some(vec![])` when the table
    /// is the PU itself, `None` when it never reaches it.
    pub fn fk_path(&self, table: &str) -> Option<Vec<&PacLink>> {
        let pu = self.pu_table.as_deref()?;
        if table == pu {
            return Some(vec![]);
        }
        let mut chain = Vec::new();
        let mut cur = table;
        loop {
            let link = self.links.iter().find(|l| l.from_table == cur)?;
            chain.push(link);
            cur = &link.to_table;
            if cur == pu {
                return Some(chain);
            }
            if chain.len() > self.links.len() {
                return None;
            }
        }
    }

    /// Does the table's data belong to privacy units?
    pub fn reaches_pu(&self, table: &str) -> bool {
        self.fk_path(table).is_some()
    }

    pub fn is_protected(&self, table: &str, column: &str) -> bool {
        self.protected.contains(&(table.to_string(), column.to_string()))
    }

    pub fn schema(&self, table: &str) -> Option<&Schema> {
        self.schemas.get(table)
    }
}

struct DdlCursor {
    toks: Vec<(Tok, usize)>,
    at: usize,
}

impl DdlCursor {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.at).map(|(t, _)| t)
    }
    fn pos(&self) -> usize {
        self.toks.get(self.at).map_or(usize::MAX, |(_, p)| *p)
    }
    fn next(&mut self) -> Option<Tok> {
        let t = self.toks.get(self.at).map(|(t, _)| t.clone());
        if t.is_some() {
            self.at += 1;
        }
        t
    }
    fn eat_kw(&mut self, kw: &str) -> bool {
        if matches!(self.peek(), Some(Tok::Ident(w)) if w == kw) {
            self.at += 1;
            true
        } else {
            false
        }
    }
    fn expect_kw(&mut self, kw: &str) -> Result<(), CatalogError> {
        if self.eat_kw(kw) {
            Ok(())
        } else {
            Err(CatalogError::Syntax {
                pos: self.pos(),
                msg: format!("expected {}", kw.to_uppercase()),
            })
        }
    }
    fn eat_punct(&mut self, p: &str) -> bool {
        if matches!(self.peek(), Some(Tok::Punct(q)) if *q == p) {
            self.at += 1;
            true
        } else {
            false
        }
    }
    fn expect_punct(&mut self, p: &str) -> Result<(), CatalogError> {
        if self.eat_punct(p) {
            Ok(())
        } else {
            Err(CatalogError::Syntax { pos: self.pos(), msg: format!("expected `{p}`") })
        }
    }
    fn ident(&mut self) -> Result<String, CatalogError> {
        match self.next() {
            Some(Tok::Ident(w)) => Ok(w),
            _ => Err(CatalogError::Syntax { pos: self.pos(), msg: "expected identifier".into() }),
        }
    }
    fn column_list(&mut self) -> Result<Vec<String>, CatalogError> {
        self.expect_punct("(")?;
        let mut out = vec![self.ident()?];
        while self.eat_punct(",") {
            out.push(self.ident()?);
        }
        self.expect_punct(")")?;
        Ok(out)
    }
}

// ---------------------------------------------------------------------------
// classification

/// Where a column's value can come from without passing through an
/// aggregate function (which launders it).
#[derive(Debug, Clone, Default)]
struct ColProv {
    sources: BTreeSet<(String, String)>,
    via_group_key: bool,
}

impl ColProv {
    fn union(mut self, other: &ColProv) -> ColProv {
        self.sources.extend(other.sources.iter().cloned());
        self.via_group_key |= other.via_group_key;
        self
    }
}

/// Deterministic, total classification of a type-checked, normalized plan.
pub fn classify(plan: &LogicalPlan, catalog: &PrivacyCatalog) -> Classification {
    let scanned = plan.scanned_tables();
    if !scanned.iter().any(|t| catalog.reaches_pu(t)) {
        return Classification::Inconspicuous;
    }

    // (c) joins between PU-linked sides must be exact PAC-link equi-joins
    // (or joins onto an aggregate keyed by exactly the join columns)
    if let Some(msg) = find_non_link_join(plan, catalog) {
        return Classification::Rejected { reason: RejectReason::NonLinkJoin, message: msg };
    }

    // (a)/(b) protected columns in the terminal output
    let mut env: HashMap<String, Vec<(String, ColProv)>> = HashMap::new();
    let out = provenance(plan, catalog, &mut env);
    for (name, prov) in &out {
        let hit = prov
            .sources
            .iter()
            .find(|(t, c)| catalog.is_protected(t, c));
        if let Some((t, c)) = hit {
            let reason = if prov.via_group_key {
                RejectReason::ProtectedGroupKey
            } else {
                RejectReason::ProtectedColumnRelease
            };
            return Classification::Rejected {
                reason,
                message: format!("output column `{name}` exposes protected `{t}.{c}`"),
            };
        }
    }

    Classification::Rewritable
}

fn provenance(
    plan: &LogicalPlan,
    catalog: &PrivacyCatalog,
    env: &mut HashMap<String, Vec<(String, ColProv)>>,
) -> Vec<(String, ColProv)> {
    match plan {
        LogicalPlan::Scan { table } => {
            if let Some(cols) = env.get(table) {
                return cols.clone();
            }
            match catalog.schema(table) {
                Some(schema) => schema
                    .columns
                    .iter()
                    .map(|c| {
                        let mut p = ColProv::default();
                        p.sources.insert((table.clone(), c.name.clone()));
                        (c.name.clone(), p)
                    })
                    .collect(),
                None => vec![],
            }
        }
        LogicalPlan::Filter { input, .. }
        | LogicalPlan::Sort { input, .. }
        | LogicalPlan::Limit { input, .. } => provenance(input, catalog, env),
        LogicalPlan::Project { input, items } => {
            let inp = provenance(input, catalog, env);
            items
                .iter()
                .map(|item| {
                    let prov = match &item.expr {
                        PlanExpr::Scalar(e) => expr_prov(e, &inp),
                        // privacy forms only exist post-rewrite; they never
                        // release raw values
                        _ => ColProv::default(),
                    };
                    (item.alias.clone(), prov)
                })
                .collect()
        }
        LogicalPlan::Join { left, right, .. } => {
            let mut out = provenance(left, catalog, env);
            out.extend(provenance(right, catalog, env));
            out
        }
        LogicalPlan::Aggregate { input, group_keys, specs } => {
            let inp = provenance(input, catalog, env);
            let mut out = Vec::new();
            for k in group_keys {
                let mut p = lookup(&inp, k);
                p.via_group_key = true;
                out.push((k.clone(), p));
            }
            for s in specs {
                out.push((s.alias.clone(), ColProv::default()));
            }
            out
        }
        LogicalPlan::SubqueryScalar { input, subplan, .. } => {
            let mut out = provenance(input, catalog, env);
            out.extend(provenance(subplan, catalog, env));
            out
        }
        LogicalPlan::Cte { name, body, rest } => {
            let body_prov = provenance(body, catalog, env);
            env.insert(name.clone(), body_prov);
            let out = provenance(rest, catalog, env);
            env.remove(name);
            out
        }
    }
}

fn lookup(cols: &[(String, ColProv)], name: &str) -> ColProv {
    cols.iter().find(|(n, _)| n == name).map(|(_, p)| p.clone()).unwrap_or_default()
}

fn expr_prov(e: &crate::relcore::ScalarExpr, inp: &[(String, ColProv)]) -> ColProv {
    let mut out = ColProv::default();
    e.for_each_column(&mut |c| {
        out = std::mem::take(&mut out).union(&lookup(inp, &c.name));
    });
    out
}

/// Any join whose two sides both carry PU-linked data and whose keys are
/// neither an exact PAC link nor a grouped-aggregate key.
fn find_non_link_join(plan: &LogicalPlan, catalog: &PrivacyCatalog) -> Option<String> {
    let mut cte_sensitive: HashMap<String, bool> = HashMap::new();
    find_nlj(plan, catalog, &mut cte_sensitive)
}

fn side_sensitive(
    plan: &LogicalPlan,
    catalog: &PrivacyCatalog,
    ctes: &HashMap<String, bool>,
) -> bool {
    match plan {
        LogicalPlan::Scan { table } => {
            ctes.get(table).copied().unwrap_or_else(|| catalog.reaches_pu(table))
        }
        other => other.children().iter().any(|c| side_sensitive(c, catalog, ctes)),
    }
}

fn find_nlj(
    plan: &LogicalPlan,
    catalog: &PrivacyCatalog,
    ctes: &mut HashMap<String, bool>,
) -> Option<String> {
    if let LogicalPlan::Cte { name, body, rest } = plan {
        if let Some(m) = find_nlj(body, catalog, ctes) {
            return Some(m);
        }
        // a CTE whose body ends in aggregation releases laundered values;
        // treat it as sensitive only if its raw columns flow through
        let sensitive = side_sensitive(body, catalog, ctes) && !body_fully_aggregated(body);
        ctes.insert(name.clone(), sensitive);
        let out = find_nlj(rest, catalog, ctes);
        ctes.remove(name);
        return out;
    }

    if let LogicalPlan::Join { left, right, left_keys, right_keys, .. } = plan {
        let ls = side_sensitive(left, catalog, ctes);
        let rs = side_sensitive(right, catalog, ctes);
        if ls && rs {
            let ok = keys_match_link(catalog, left_keys, right_keys)
                || side_is_aggregate_keyed(right, right_keys)
                || side_is_aggregate_keyed(left, left_keys);
            if !ok {
                return Some(format!(
                    "join on [{}] = [{}] is not an exact PAC link",
                    left_keys.join(", "),
                    right_keys.join(", ")
                ));
            }
        }
    }
    for c in plan.children() {
        if let Some(m) = find_nlj(c, catalog, ctes) {
            return Some(m);
        }
    }
    None
}

fn body_fully_aggregated(body: &LogicalPlan) -> bool {
    match body {
        LogicalPlan::Aggregate { .. } => true,
        LogicalPlan::Project { input, .. }
        | LogicalPlan::Sort { input, .. }
        | LogicalPlan::Limit { input, .. }
        | LogicalPlan::Filter { input, .. } => body_fully_aggregated(input),
        _ => false,
    }
}

fn keys_match_link(catalog: &PrivacyCatalog, lk: &[String], rk: &[String]) -> bool {
    if lk.is_empty() {
        return false;
    }
    catalog.links.iter().any(|link| {
        let pairs: Vec<(&str, &str)> = link
            .local_columns
            .iter()
            .map(|s| s.as_str())
            .zip(link.referenced_columns.iter().map(|s| s.as_str()))
            .collect();
        let forward: Vec<(&str, &str)> =
            lk.iter().map(|s| s.as_str()).zip(rk.iter().map(|s| s.as_str())).collect();
        let backward: Vec<(&str, &str)> =
            rk.iter().map(|s| s.as_str()).zip(lk.iter().map(|s| s.as_str())).collect();
        pairs.len() == forward.len()
            && (pairs.iter().all(|p| forward.contains(p)) || pairs.iter().all(|p| backward.contains(p)))
    })
}

/// True when the side is an aggregation grouped by exactly the join keys
/// (possibly renamed through projections) — the key-preserving join shape.
fn side_is_aggregate_keyed(plan: &LogicalPlan, keys: &[String]) -> bool {
    match plan {
        LogicalPlan::Aggregate { group_keys, .. } => {
            let ks: BTreeSet<&str> = keys.iter().map(|s| s.as_str()).collect();
            let gs: BTreeSet<&str> = group_keys.iter().map(|s| s.as_str()).collect();
            ks == gs
        }
        LogicalPlan::Project { input, items } => {
            // map each key back through simple column aliases
            let mut mapped = Vec::new();
            for k in keys {
                match items.iter().find(|i| &i.alias == k) {
                    Some(item) => match &item.expr {
                        PlanExpr::Scalar(crate::relcore::ScalarExpr::Column(c)) => {
                            mapped.push(c.name.clone())
                        }
                        _ => return false,
                    },
                    None => return false,
                }
            }
            side_is_aggregate_keyed(input, &mapped)
        }
        LogicalPlan::Filter { input, .. }
        | LogicalPlan::Sort { input, .. }
        | LogicalPlan::Limit { input, .. } => side_is_aggregate_keyed(input, keys),
        _ => false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::MINI_SCHEMA_DDL;

    fn mini_catalog() -> PrivacyCatalog {
        let mut c = PrivacyCatalog::new();
        c.load_ddl(MINI_SCHEMA_DDL).unwrap();
        c
    }

    #[test]
    fn loads_mini_schema() {
        let c = mini_catalog();
        assert_eq!(c.pu_table.as_deref(), Some("customer"));
        assert_eq!(c.pac_key, vec!["c_custkey"]);
        assert!(c.is_protected("customer", "c_name"));
        assert!(c.is_protected("customer", "c_acctbal"));
        assert!(c.is_protected("customer", "c_custkey")); // pac key itself
        assert!(!c.is_protected("customer", "c_mktsegment")); // overridden list
        assert!(c.is_protected("orders", "o_custkey")); // link local column
        assert!(c.is_protected("lineitem", "l_orderkey"));
        assert!(c.is_protected("orders", "o_orderkey")); // link referenced column
    }

    #[test]
    fn fk_paths() {
        let c = mini_catalog();
        let li = c.fk_path("lineitem").unwrap();
        assert_eq!(li.len(), 2);
        assert_eq!(li[0].to_table, "orders");
        assert_eq!(li[1].to_table, "customer");
        assert_eq!(c.fk_path("customer").unwrap().len(), 0);
        assert!(c.fk_path("part").is_none());
        assert!(c.fk_path("nowhere").is_none());
    }

    #[test]
    fn rejects_duplicate_pu_and_cycles() {
        let mut c = mini_catalog();
        let err = c.load_ddl("CREATE PU TABLE extra (x BIGINT, PAC_KEY(x))");
        assert!(matches!(err, Err(CatalogError::DuplicatePu(_))));

        let mut c2 = PrivacyCatalog::new();
        let err = c2.load_ddl(
            "CREATE PU TABLE u (k BIGINT, PAC_KEY(k));
             CREATE TABLE t (a BIGINT, PAC_LINK(a) REFERENCES t (a));",
        );
        assert!(matches!(err, Err(CatalogError::CyclicLink(_))));
    }

    #[test]
    fn rejects_arity_mismatch() {
        let mut c = PrivacyCatalog::new();
        let err = c.load_ddl(
            "CREATE PU TABLE u (k BIGINT, j BIGINT, PAC_KEY(k));
             CREATE TABLE t (a BIGINT, PAC_LINK(a) REFERENCES u (k, j));",
        );
        assert!(matches!(err, Err(CatalogError::ArityMismatch(1, 2))));
    }

    #[test]
    fn rejects_second_outgoing_link() {
        let mut c = PrivacyCatalog::new();
        let err = c.load_ddl(
            "CREATE PU TABLE u (k BIGINT, PAC_KEY(k));
             CREATE TABLE m (x BIGINT, PAC_LINK(x) REFERENCES u (k));
             CREATE TABLE t (a BIGINT, b BIGINT,
                 PAC_LINK(a) REFERENCES u (k),
                 PAC_LINK(b) REFERENCES m (x));",
        );
        assert!(matches!(err, Err(CatalogError::MultipleLinks(_))));
    }
}
