//! The privacy rewrite, end to end on plans.
//!
//! Queries classify as inconspicuous (no PU data), rejected (with a reason
//! code), or rewritable. Rewritable plans get PU-key joins inserted with the
//! final hop eliminated, aggregates replaced by their stochastic forms, and
//! categorical expressions lifted across the 64 worlds.
//!
//! ```bash
//! cargo run --example query_rewriting
//! ```

use pacq::catalog::{classify, Classification, PrivacyCatalog};
use pacq::datagen::MINI_SCHEMA_DDL;
use pacq::planner::{explain, normalize, pac_rewrite, parse_query, schema_of};

fn show(title: &str, sql: &str, catalog: &PrivacyCatalog) {
    println!("== {title}");
    println!("   {sql}\n");
    let plan = match parse_query(sql, &catalog.schemas) {
        Ok(p) => normalize(p),
        Err(e) => {
            println!("   unsupported: {e}\n");
            return;
        }
    };
    schema_of(&plan, &catalog.schemas).unwrap();
    match classify(&plan, catalog) {
        Classification::Inconspicuous => println!("   inconspicuous: executed unmodified\n"),
        Classification::Rejected { reason, message } => {
            println!("   rejected ({}): {message}\n", reason.code())
        }
        Classification::Rewritable => {
            let (rewritten, trace) = pac_rewrite(&plan, catalog).unwrap();
            for line in explain(&rewritten, &trace).lines() {
                println!("   {line}");
            }
            println!();
        }
    }
}

fn main() {
    let mut catalog = PrivacyCatalog::new();
    catalog.load_ddl(MINI_SCHEMA_DDL).unwrap();

    show(
        "pricing summary (fused aggregates, chain join added)",
        "SELECT l_returnflag, SUM(l_quantity) AS sum_qty, AVG(l_quantity) AS avg_qty \
         FROM lineitem GROUP BY l_returnflag",
        &catalog,
    );
    show(
        "small-quantity revenue (correlated subquery, per-world filter)",
        "SELECT SUM(l_extendedprice) / 7.0 AS avg_yearly FROM lineitem \
         JOIN part ON l_partkey = p_partkey WHERE p_brand = 'BRAND#1' AND \
         l_quantity < 0.2 * (SELECT AVG(l2.l_quantity) FROM lineitem l2 WHERE l2.l_partkey = p_partkey)",
        &catalog,
    );
    show(
        "market share (two sums, one lifted release)",
        "SELECT SUM(CASE WHEN l_returnflag = 'A' THEN l_extendedprice ELSE 0.0 END) \
         / SUM(l_extendedprice) AS share FROM lineitem",
        &catalog,
    );
    show(
        "probabilistic row filter (no enclosing aggregate)",
        "SELECT o_orderdate, o_totalprice FROM orders \
         WHERE o_totalprice > (SELECT AVG(o2.o_totalprice) FROM orders o2)",
        &catalog,
    );
    show(
        "unlinked table (no privacy unit reached)",
        "SELECT p_brand, COUNT(*) AS n FROM part GROUP BY p_brand",
        &catalog,
    );
    show(
        "raw protected column",
        "SELECT c_name, c_acctbal FROM customer",
        &catalog,
    );
    show(
        "join off the PAC link",
        "SELECT COUNT(*) AS n FROM orders JOIN lineitem ON o_totalprice = l_extendedprice",
        &catalog,
    );
    show(
        "window function",
        "SELECT o_orderkey, SUM(o_totalprice) OVER (PARTITION BY o_custkey) FROM orders",
        &catalog,
    );
}
