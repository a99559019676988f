//! Deterministic plan rendering for the `explain` subcommand and snapshot
//! tests.

use super::{FilterExpr, LogicalPlan, PacMode, PlanExpr, RewriteTrace};

pub fn render_plan(plan: &LogicalPlan) -> String {
    let mut out = String::new();
    render(plan, 0, &mut out);
    out
}

fn indent(depth: usize, out: &mut String) {
    for _ in 0..depth {
        out.push_str("  ");
    }
}

fn show_name(name: &str) -> &str {
    name.strip_prefix('#').unwrap_or(name)
}

fn render(plan: &LogicalPlan, depth: usize, out: &mut String) {
    indent(depth, out);
    match plan {
        LogicalPlan::Scan { table } => {
            out.push_str(&format!("Scan {table}\n"));
        }
        LogicalPlan::Filter { input, pred } => {
            let p = match pred {
                FilterExpr::Scalar(e) => e.render(),
                FilterExpr::PacFilter { lifted } => format!("pac_filter({})", lifted.render()),
                FilterExpr::PuNonZero { .. } => "pu != 0".to_string(),
            };
            out.push_str(&format!("Filter({p})\n"));
            render(input, depth + 1, out);
        }
        LogicalPlan::Project { input, items } => {
            let rendered: Vec<String> = items
                .iter()
                .map(|item| {
                    let alias = show_name(&item.alias);
                    match &item.expr {
                        PlanExpr::Scalar(crate::relcore::ScalarExpr::Column(c))
                            if c.name == item.alias =>
                        {
                            alias.to_string()
                        }
                        PlanExpr::Scalar(e) => format!("{alias} := {}", e.render()),
                        PlanExpr::PacHash { keys } => {
                            let cols: Vec<String> = keys.iter().map(|k| k.render()).collect();
                            format!("{alias} := pac_hash({})", cols.join(", "))
                        }
                        PlanExpr::PacNoised { lifted, scale } => {
                            format!("{alias} := pac_noised({}, scale={scale})", lifted.render())
                        }
                        PlanExpr::PacSelect { lifted, .. } => {
                            format!("{alias} := pac_select(pu, {})", lifted.render())
                        }
                    }
                })
                .collect();
            out.push_str(&format!("Project [{}]\n", rendered.join(", ")));
            render(input, depth + 1, out);
        }
        LogicalPlan::Join { left, right, kind, left_keys, right_keys, residual } => {
            let kw = match kind {
                super::JoinKind::Inner => "inner",
                super::JoinKind::Left => "left",
            };
            let keys: Vec<String> = left_keys
                .iter()
                .zip(right_keys)
                .map(|(l, r)| format!("{} = {}", show_name(l), show_name(r)))
                .collect();
            let mut line = format!("Join {kw}");
            if keys.is_empty() {
                line.push_str(" (cross)");
            } else {
                line.push_str(&format!(" on {}", keys.join(" AND ")));
            }
            if let Some(r) = residual {
                line.push_str(&format!(" residual {}", r.render()));
            }
            out.push_str(&line);
            out.push('\n');
            render(left, depth + 1, out);
            render(right, depth + 1, out);
        }
        LogicalPlan::Aggregate { input, group_keys, specs } => {
            let keys: Vec<&str> = group_keys.iter().map(|k| show_name(k)).collect();
            let aggs: Vec<String> = specs
                .iter()
                .map(|s| {
                    let arg = s.input.as_ref().map_or("*".to_string(), |e| e.render());
                    match &s.pac {
                        PacMode::None => format!("{}({arg})", s.kind.name()),
                        PacMode::Fused { .. } => format!("pac_{} fused({arg})", s.kind.name()),
                        PacMode::Unfused { .. } => {
                            format!("pac_{} unfused({arg})", s.kind.name())
                        }
                    }
                })
                .collect();
            out.push_str(&format!(
                "Aggregate group=[{}] aggs=[{}]\n",
                keys.join(", "),
                aggs.join(", ")
            ));
            render(input, depth + 1, out);
        }
        LogicalPlan::Sort { input, keys } => {
            let ks: Vec<String> = keys
                .iter()
                .map(|k| format!("{}{}", k.expr.render(), if k.asc { "" } else { " desc" }))
                .collect();
            out.push_str(&format!("Sort [{}]\n", ks.join(", ")));
            render(input, depth + 1, out);
        }
        LogicalPlan::Limit { input, n } => {
            out.push_str(&format!("Limit {n}\n"));
            render(input, depth + 1, out);
        }
        LogicalPlan::SubqueryScalar { input, subplan, correlation, alias } => {
            let corr: Vec<String> = correlation
                .iter()
                .map(|(o, i)| format!("{} = {}", show_name(o), show_name(i)))
                .collect();
            out.push_str(&format!(
                "SubqueryScalar {} on [{}]\n",
                show_name(alias),
                corr.join(", ")
            ));
            render(input, depth + 1, out);
            render(subplan, depth + 1, out);
        }
        LogicalPlan::Cte { name, body, rest } => {
            out.push_str(&format!("Cte {name}\n"));
            render(body, depth + 1, out);
            render(rest, depth, out);
        }
    }
}

/// Plan tree plus the rewrite trace, stable across runs for snapshot tests.
pub fn explain(plan: &LogicalPlan, trace: &RewriteTrace) -> String {
    let mut out = render_plan(plan);
    out.push_str(&format!("{} rewrites\n", trace.rules.len()));
    for rule in &trace.rules {
        out.push_str(&format!("+ {}\n", rule.render()));
    }
    out
}
