//! Parser, classification, and rewrite behavior over the mini schema.

use pacq::aggregates::AggKind;
use pacq::catalog::{classify, Classification, PrivacyCatalog, RejectReason};
use pacq::datagen::MINI_SCHEMA_DDL;
use pacq::planner::{
    explain, normalize, pac_rewrite, parse_query, schema_of, LogicalPlan, PacMode, PlanError,
};
use pacq::relcore::ValueType;

fn catalog() -> PrivacyCatalog {
    let mut c = PrivacyCatalog::new();
    c.load_ddl(MINI_SCHEMA_DDL).unwrap();
    c
}

fn plan(sql: &str) -> LogicalPlan {
    let c = catalog();
    let p = parse_query(sql, &c.schemas).expect("parse");
    let p = normalize(p);
    schema_of(&p, &c.schemas).expect("typecheck");
    p
}

#[test]
fn parses_q01_shape() {
    let p = plan(
        "SELECT l_returnflag, l_linestatus, SUM(l_quantity) AS sum_qty, AVG(l_quantity) AS avg_qty, \
         COUNT(*) AS cnt FROM lineitem WHERE l_shipdate <= DATE '1998-09-02' \
         GROUP BY l_returnflag, l_linestatus ORDER BY l_returnflag, l_linestatus",
    );
    // Sort(Project(Aggregate(...))) with the expected group keys and kinds
    let LogicalPlan::Sort { input, .. } = p else { panic!("expected sort on top") };
    let LogicalPlan::Project { input, .. } = *input else { panic!("expected projection") };
    let LogicalPlan::Aggregate { group_keys, specs, .. } = *input else {
        panic!("expected aggregate")
    };
    assert_eq!(group_keys, vec!["l_returnflag", "l_linestatus"]);
    assert_eq!(
        specs.iter().map(|s| s.kind).collect::<Vec<_>>(),
        vec![AggKind::Sum, AggKind::Avg, AggKind::CountStar]
    );
}

#[test]
fn parses_q17_correlated_subquery() {
    let c = catalog();
    let p = parse_query(
        "SELECT SUM(l_extendedprice) / 7.0 AS avg_yearly FROM lineitem \
         JOIN part ON l_partkey = p_partkey \
         WHERE p_brand = 'BRAND#1' AND \
         l_quantity < 0.2 * (SELECT AVG(l2.l_quantity) FROM lineitem l2 WHERE l2.l_partkey = p_partkey)",
        &c.schemas,
    )
    .expect("parse");
    // before normalization the subquery is an explicit plan node
    fn find_subquery(p: &LogicalPlan) -> bool {
        matches!(p, LogicalPlan::SubqueryScalar { .. })
            || p.children().iter().any(|c| find_subquery(c))
    }
    assert!(find_subquery(&p), "expected a SubqueryScalar node");

    // normalization decorrelates into an equi join
    let n = normalize(p);
    assert!(!find_subquery(&n));
    schema_of(&n, &c.schemas).unwrap();
}

#[test]
fn bare_select_from_is_a_syntax_error() {
    let c = catalog();
    let err = parse_query("SELECT FROM lineitem", &c.schemas).unwrap_err();
    assert!(matches!(err, PlanError::Syntax { .. }), "got {err:?}");
}

#[test]
fn unsupported_constructs_are_flagged_not_misparsed() {
    let c = catalog();
    for sql in [
        "SELECT o_orderkey, SUM(o_totalprice) OVER (PARTITION BY o_custkey) FROM orders",
        "SELECT o_orderkey FROM orders UNION SELECT o_orderkey FROM orders",
        "SELECT COUNT(*) FROM orders WHERE EXISTS (SELECT 1 FROM lineitem)",
        "SELECT DISTINCT o_orderstatus FROM orders",
    ] {
        let err = parse_query(sql, &c.schemas).unwrap_err();
        assert!(matches!(err, PlanError::Unsupported { .. }), "{sql} -> {err:?}");
    }
}

#[test]
fn classification_matrix() {
    let c = catalog();
    let classify_sql = |sql: &str| classify(&plan(sql), &c);

    assert_eq!(classify_sql("SELECT p_brand FROM part"), Classification::Inconspicuous);
    assert_eq!(
        classify_sql("SELECT COUNT(*) AS n FROM lineitem"),
        Classification::Rewritable
    );
    match classify_sql("SELECT c_name FROM customer") {
        Classification::Rejected { reason, .. } => {
            assert_eq!(reason, RejectReason::ProtectedColumnRelease)
        }
        other => panic!("expected rejection, got {other:?}"),
    }
    match classify_sql("SELECT o_custkey, COUNT(*) AS n FROM orders GROUP BY o_custkey") {
        Classification::Rejected { reason, .. } => {
            assert_eq!(reason, RejectReason::ProtectedGroupKey)
        }
        other => panic!("expected rejection, got {other:?}"),
    }
    match classify_sql(
        "SELECT COUNT(*) AS n FROM orders JOIN lineitem ON o_totalprice = l_extendedprice",
    ) {
        Classification::Rejected { reason, .. } => assert_eq!(reason, RejectReason::NonLinkJoin),
        other => panic!("expected rejection, got {other:?}"),
    }
    // deep protected group key under a re-aggregation is fine
    assert_eq!(
        classify_sql(
            "WITH per_cust AS (SELECT o_custkey AS ck, COUNT(*) AS cnt FROM orders GROUP BY o_custkey) \
             SELECT cnt, COUNT(*) AS n FROM per_cust GROUP BY cnt"
        ),
        Classification::Rewritable
    );
}

#[test]
fn rewrite_q01_adds_chain_and_fuses() {
    let c = catalog();
    let p = plan(
        "SELECT l_returnflag, SUM(l_quantity) AS q FROM lineitem GROUP BY l_returnflag",
    );
    let (rewritten, trace) = pac_rewrite(&p, &c).unwrap();
    let text = explain(&rewritten, &trace);
    assert!(text.contains("+ JoinAdded(lineitem\u{2192}orders)"), "{text}");
    assert!(text.contains("+ JoinEliminated(customer)"), "{text}");
    assert!(text.contains("+ HashProjected(orders.o_custkey)"), "{text}");
    assert!(text.contains("AggReplaced(fused sum)"), "{text}");
    // the rewritten plan never scans the PU table
    assert!(!rewritten.scanned_tables().contains(&"customer".to_string()));
}

#[test]
fn rewrite_q17_uses_pac_select() {
    let c = catalog();
    let p = plan(
        "SELECT SUM(l_extendedprice) / 7.0 AS avg_yearly FROM lineitem \
         JOIN part ON l_partkey = p_partkey \
         WHERE p_brand = 'BRAND#1' AND \
         l_quantity < 0.2 * (SELECT AVG(l2.l_quantity) FROM lineitem l2 WHERE l2.l_partkey = p_partkey)",
    );
    let (rewritten, trace) = pac_rewrite(&p, &c).unwrap();
    let text = explain(&rewritten, &trace);
    assert!(text.contains("SelectInserted"), "{text}");
    assert!(text.contains("Filter(pu != 0)"), "{text}");
    assert!(text.contains("AggReplaced(unfused avg)"), "{text}");
    assert!(text.contains("AggReplaced(fused sum)"), "{text}");
    // constant folding moved 0.2 to the scalar side as *5
    assert!(text.contains("* 5"), "expected folded comparison in {text}");
}

#[test]
fn rewrite_is_idempotent_and_passthrough_traces_empty() {
    let c = catalog();
    let p = plan("SELECT l_returnflag, SUM(l_quantity) AS q FROM lineitem GROUP BY l_returnflag");
    let (r1, t1) = pac_rewrite(&p, &c).unwrap();
    let (r2, t2) = pac_rewrite(&r1, &c).unwrap();
    assert_eq!(r1, r2, "rewrite must be idempotent");
    assert!(t2.rules.is_empty());
    assert!(!t1.rules.is_empty());

    // an inconspicuous plan comes back unchanged with zero rewrites
    let p = plan("SELECT p_brand, COUNT(*) AS n FROM part GROUP BY p_brand");
    let (r, t) = pac_rewrite(&p, &c).unwrap();
    let text = explain(&r, &t);
    assert!(text.contains("0 rewrites"), "{text}");
}

#[test]
fn rewrite_trace_is_deterministic() {
    let c = catalog();
    let sql = "SELECT o_orderstatus, SUM(o_totalprice) AS t FROM orders GROUP BY o_orderstatus";
    let (r1, t1) = pac_rewrite(&plan(sql), &c).unwrap();
    let (r2, t2) = pac_rewrite(&plan(sql), &c).unwrap();
    assert_eq!(r1, r2);
    assert_eq!(t1, t2);
}

#[test]
fn sensitive_subaggregation_needs_a_determining_key() {
    let c = catalog();
    // grouping protected data by a non-key protected column cannot keep the
    // single-owner property
    let p = plan(
        "WITH x AS (SELECT o_orderkey AS k, COUNT(*) AS cnt FROM orders GROUP BY o_orderkey) \
         SELECT cnt, COUNT(*) AS n FROM x GROUP BY cnt",
    );
    // o_orderkey is protected (referenced by lineitem's link) but it is a
    // link column on the chain, so this one is allowed
    assert!(pac_rewrite(&p, &c).is_ok());
}

#[test]
fn rewritten_plan_types_check() {
    let c = catalog();
    for sql in [
        "SELECT COUNT(*) AS n FROM lineitem",
        "SELECT l_returnflag, MIN(l_quantity) AS mn, MAX(l_quantity) AS mx FROM lineitem GROUP BY l_returnflag",
        "SELECT SUM(CASE WHEN l_returnflag = 'A' THEN l_extendedprice ELSE 0.0 END) / SUM(l_extendedprice) AS share FROM lineitem",
    ] {
        let p = plan(sql);
        let (rewritten, _) = pac_rewrite(&p, &c).unwrap();
        let schema = schema_of(&rewritten, &c.schemas).unwrap();
        for col in &schema.columns {
            assert_ne!(col.ty, ValueType::VectorF64, "vector escaped in {sql}");
            assert_ne!(col.ty, ValueType::Hash, "hash escaped in {sql}");
        }
    }
}

#[test]
fn unfused_only_when_consumed_categorically() {
    let c = catalog();
    let p = plan(
        "SELECT SUM(CASE WHEN l_returnflag = 'A' THEN l_extendedprice ELSE 0.0 END) / SUM(l_extendedprice) AS share FROM lineitem",
    );
    let (rewritten, _) = pac_rewrite(&p, &c).unwrap();
    fn collect_modes(p: &LogicalPlan, out: &mut Vec<PacMode>) {
        if let LogicalPlan::Aggregate { specs, .. } = p {
            out.extend(specs.iter().map(|s| s.pac.clone()));
        }
        for ch in p.children() {
            collect_modes(ch, out);
        }
    }
    let mut modes = Vec::new();
    collect_modes(&rewritten, &mut modes);
    assert_eq!(modes.len(), 2);
    assert!(modes.iter().all(|m| matches!(m, PacMode::Unfused { .. })), "{modes:?}");
}

#[test]
fn explain_snapshot_q01() {
    let c = catalog();
    let p = plan("SELECT l_returnflag, SUM(l_quantity) AS q FROM lineitem GROUP BY l_returnflag");
    let (rewritten, trace) = pac_rewrite(&p, &c).unwrap();
    let expected = "\
Project [l_returnflag, q := pac_noised(#a0, scale=2)]
  Aggregate group=[l_returnflag] aggs=[pac_sum fused(l_quantity)]
    Project [l_orderkey, l_linenumber, l_partkey, l_quantity, l_extendedprice, l_discount, l_tax, l_returnflag, l_linestatus, l_shipdate, o_orderkey, o_custkey, pu := pac_hash(o_custkey)]
      Join inner on l_orderkey = o_orderkey
        Scan lineitem
        Project [o_orderkey, o_custkey]
          Scan orders
4 rewrites
+ JoinAdded(lineitem\u{2192}orders)
+ JoinEliminated(customer)
+ HashProjected(orders.o_custkey)
+ AggReplaced(fused sum)
";
    assert_eq!(explain(&rewritten, &trace), expected);
}
