use serde::{Deserialize, Serialize};

use super::value::{format_f64, Value, ValueType};
use super::{RelError, Schema};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Div,
    Lt,
    Le,
    Eq,
    Ne,
    Ge,
    Gt,
    And,
    Or,
}

impl BinaryOp {
    pub fn is_comparison(self) -> bool {
        matches!(
            self,
            BinaryOp::Lt | BinaryOp::Le | BinaryOp::Eq | BinaryOp::Ne | BinaryOp::Ge | BinaryOp::Gt
        )
    }

    pub fn is_arithmetic(self) -> bool {
        matches!(self, BinaryOp::Add | BinaryOp::Sub | BinaryOp::Mul | BinaryOp::Div)
    }

    pub fn symbol(self) -> &'static str {
        match self {
            BinaryOp::Add => "+",
            BinaryOp::Sub => "-",
            BinaryOp::Mul => "*",
            BinaryOp::Div => "/",
            BinaryOp::Lt => "<",
            BinaryOp::Le => "<=",
            BinaryOp::Eq => "=",
            BinaryOp::Ne => "<>",
            BinaryOp::Ge => ">=",
            BinaryOp::Gt => ">",
            BinaryOp::And => "AND",
            BinaryOp::Or => "OR",
        }
    }
}

/// Column reference. `index` is filled in by [`ScalarExpr::bind`]; evaluation
/// falls back to a name lookup when unbound, which keeps ad-hoc expression
/// tests simple while the executor always runs bound.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnRef {
    pub name: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub index: Option<usize>,
}

impl ColumnRef {
    pub fn new(name: impl Into<String>) -> Self {
        ColumnRef { name: name.into(), index: None }
    }
}

/// Scalar expression tree over one row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ScalarExpr {
    Column(ColumnRef),
    Literal(Value),
    Binary { op: BinaryOp, left: Box<ScalarExpr>, right: Box<ScalarExpr> },
    Not(Box<ScalarExpr>),
    Neg(Box<ScalarExpr>),
    Case { branches: Vec<(ScalarExpr, ScalarExpr)>, otherwise: Option<Box<ScalarExpr>> },
    Cast { expr: Box<ScalarExpr>, ty: ValueType },
}

impl ScalarExpr {
    pub fn col(name: impl Into<String>) -> Self {
        ScalarExpr::Column(ColumnRef::new(name))
    }

    pub fn lit(v: Value) -> Self {
        ScalarExpr::Literal(v)
    }

    pub fn binary(op: BinaryOp, left: ScalarExpr, right: ScalarExpr) -> Self {
        ScalarExpr::Binary { op, left: Box::new(left), right: Box::new(right) }
    }

    /// Resolves every column reference against `schema`.
    pub fn bind(&self, schema: &Schema) -> Result<ScalarExpr, RelError> {
        let mut out = self.clone();
        out.bind_in_place(schema)?;
        Ok(out)
    }

    fn bind_in_place(&mut self, schema: &Schema) -> Result<(), RelError> {
        match self {
            ScalarExpr::Column(c) => {
                let idx = schema
                    .index_of(&c.name)
                    .ok_or_else(|| RelError::UnknownColumn(c.name.clone()))?;
                c.index = Some(idx);
                Ok(())
            }
            ScalarExpr::Literal(_) => Ok(()),
            ScalarExpr::Binary { left, right, .. } => {
                left.bind_in_place(schema)?;
                right.bind_in_place(schema)
            }
            ScalarExpr::Not(e) | ScalarExpr::Neg(e) => e.bind_in_place(schema),
            ScalarExpr::Case { branches, otherwise } => {
                for (c, r) in branches.iter_mut() {
                    c.bind_in_place(schema)?;
                    r.bind_in_place(schema)?;
                }
                if let Some(e) = otherwise {
                    e.bind_in_place(schema)?;
                }
                Ok(())
            }
            ScalarExpr::Cast { expr, .. } => expr.bind_in_place(schema),
        }
    }

    pub fn for_each_column<'a>(&'a self, f: &mut impl FnMut(&'a ColumnRef)) {
        match self {
            ScalarExpr::Column(c) => f(c),
            ScalarExpr::Literal(_) => {}
            ScalarExpr::Binary { left, right, .. } => {
                left.for_each_column(f);
                right.for_each_column(f);
            }
            ScalarExpr::Not(e) | ScalarExpr::Neg(e) => e.for_each_column(f),
            ScalarExpr::Case { branches, otherwise } => {
                for (c, r) in branches {
                    c.for_each_column(f);
                    r.for_each_column(f);
                }
                if let Some(e) = otherwise {
                    e.for_each_column(f);
                }
            }
            ScalarExpr::Cast { expr, .. } => expr.for_each_column(f),
        }
    }

    pub fn render(&self) -> String {
        match self {
            ScalarExpr::Column(c) => c.name.clone(),
            ScalarExpr::Literal(Value::Text(s)) => format!("'{s}'"),
            ScalarExpr::Literal(Value::Float64(v)) => format_f64(*v),
            ScalarExpr::Literal(v) => v.render(),
            ScalarExpr::Binary { op, left, right } => {
                format!("({} {} {})", left.render(), op.symbol(), right.render())
            }
            ScalarExpr::Not(e) => format!("NOT {}", e.render()),
            ScalarExpr::Neg(e) => format!("-{}", e.render()),
            ScalarExpr::Case { branches, otherwise } => {
                let mut s = String::from("CASE");
                for (c, r) in branches {
                    s.push_str(&format!(" WHEN {} THEN {}", c.render(), r.render()));
                }
                if let Some(e) = otherwise {
                    s.push_str(&format!(" ELSE {}", e.render()));
                }
                s.push_str(" END");
                s
            }
            ScalarExpr::Cast { expr, ty } => format!("CAST({} AS {})", expr.render(), ty),
        }
    }
}

/// Infers the result type of `expr` under `schema`, or reports why it is
/// ill-typed. Numeric inference follows standard Int64 -> Float64 promotion;
/// date arithmetic is closed over Int64 day offsets.
pub fn type_check(expr: &ScalarExpr, schema: &Schema) -> Result<ValueType, RelError> {
    Ok(infer(expr, schema)?.unwrap_or(ValueType::Int64))
}

/// `None` means "untyped NULL": it unifies with everything.
fn infer(expr: &ScalarExpr, schema: &Schema) -> Result<Option<ValueType>, RelError> {
    use ValueType as T;
    match expr {
        ScalarExpr::Column(c) => {
            let idx = match c.index {
                Some(i) if i < schema.len() => i,
                _ => schema
                    .index_of(&c.name)
                    .ok_or_else(|| RelError::UnknownColumn(c.name.clone()))?,
            };
            Ok(Some(schema.columns[idx].ty))
        }
        ScalarExpr::Literal(v) => Ok(v.value_type()),
        ScalarExpr::Binary { op, left, right } => {
            let lt = infer(left, schema)?;
            let rt = infer(right, schema)?;
            if *op == BinaryOp::And || *op == BinaryOp::Or {
                for t in [lt, rt].into_iter().flatten() {
                    if t != T::Boolean {
                        return Err(RelError::TypeMismatch(format!(
                            "{} expects booleans, got {t}",
                            op.symbol()
                        )));
                    }
                }
                return Ok(Some(T::Boolean));
            }
            if op.is_comparison() {
                unify(lt, rt, op.symbol())?;
                return Ok(Some(T::Boolean));
            }
            // arithmetic
            match (lt, rt) {
                (None, other) | (other, None) => Ok(other),
                (Some(T::Date), Some(T::Int64)) | (Some(T::Int64), Some(T::Date))
                    if matches!(op, BinaryOp::Add | BinaryOp::Sub) =>
                {
                    Ok(Some(T::Date))
                }
                (Some(T::Date), Some(T::Date)) if *op == BinaryOp::Sub => Ok(Some(T::Int64)),
                (Some(a), Some(b)) => {
                    let (an, bn) = (numeric(a), numeric(b));
                    match (an, bn) {
                        (Some(x), Some(y)) => {
                            if x == T::Float64 || y == T::Float64 {
                                Ok(Some(T::Float64))
                            } else {
                                Ok(Some(T::Int64))
                            }
                        }
                        _ => Err(RelError::TypeMismatch(format!(
                            "cannot apply {} to {a} and {b}",
                            op.symbol()
                        ))),
                    }
                }
            }
        }
        ScalarExpr::Not(e) => {
            match infer(e, schema)? {
                Some(T::Boolean) | None => Ok(Some(T::Boolean)),
                Some(t) => Err(RelError::TypeMismatch(format!("NOT expects boolean, got {t}"))),
            }
        }
        ScalarExpr::Neg(e) => match infer(e, schema)? {
            Some(T::Int64) => Ok(Some(T::Int64)),
            Some(T::Float64) => Ok(Some(T::Float64)),
            None => Ok(None),
            Some(t) => Err(RelError::TypeMismatch(format!("cannot negate {t}"))),
        },
        ScalarExpr::Case { branches, otherwise } => {
            let mut out: Option<ValueType> = None;
            for (cond, res) in branches {
                match infer(cond, schema)? {
                    Some(T::Boolean) | None => {}
                    Some(t) => {
                        return Err(RelError::TypeMismatch(format!(
                            "CASE condition must be boolean, got {t}"
                        )))
                    }
                }
                out = unify(out, infer(res, schema)?, "CASE")?;
            }
            if let Some(e) = otherwise {
                out = unify(out, infer(e, schema)?, "CASE")?;
            }
            Ok(out)
        }
        ScalarExpr::Cast { expr, ty } => {
            let src = infer(expr, schema)?;
            if let Some(s) = src {
                let ok = match (s, ty) {
                    (T::Hash | T::VectorF64, _) | (_, T::Hash | T::VectorF64) => false,
                    (T::Text, _) | (_, T::Text) => true,
                    (a, b) => numeric_or_date(a) && numeric_or_date(*b) || a == *b,
                };
                if !ok {
                    return Err(RelError::TypeMismatch(format!("cannot cast {s} to {ty}")));
                }
            }
            Ok(Some(*ty))
        }
    }
}

fn numeric(t: ValueType) -> Option<ValueType> {
    match t {
        ValueType::Int64 | ValueType::Float64 => Some(t),
        _ => None,
    }
}

fn numeric_or_date(t: ValueType) -> bool {
    matches!(t, ValueType::Int64 | ValueType::Float64 | ValueType::Date | ValueType::Boolean)
}

fn unify(
    a: Option<ValueType>,
    b: Option<ValueType>,
    ctx: &str,
) -> Result<Option<ValueType>, RelError> {
    use ValueType as T;
    match (a, b) {
        (None, x) | (x, None) => Ok(x),
        (Some(x), Some(y)) if x == y => Ok(Some(x)),
        (Some(T::Int64), Some(T::Float64)) | (Some(T::Float64), Some(T::Int64)) => {
            Ok(Some(T::Float64))
        }
        (Some(x), Some(y)) => {
            Err(RelError::TypeMismatch(format!("{ctx}: incompatible types {x} and {y}")))
        }
    }
}

/// Evaluates `expr` over one row. Pure in `(expr, row)`; never panics on
/// type-checked input. Standard three-valued NULL semantics: arithmetic with
/// NULL yields NULL, comparisons with NULL yield NULL, and division by zero
/// yields NULL.
pub fn eval_scalar(expr: &ScalarExpr, schema: &Schema, row: &[Value]) -> Value {
    match expr {
        ScalarExpr::Column(c) => {
            let idx = c.index.or_else(|| schema.index_of(&c.name));
            match idx {
                Some(i) if i < row.len() => row[i].clone(),
                _ => Value::Null,
            }
        }
        ScalarExpr::Literal(v) => v.clone(),
        ScalarExpr::Binary { op, left, right } => {
            if *op == BinaryOp::And || *op == BinaryOp::Or {
                return eval_logic(*op, expr_bool(left, schema, row), expr_bool(right, schema, row));
            }
            let l = eval_scalar(left, schema, row);
            let r = eval_scalar(right, schema, row);
            if l.is_null() || r.is_null() {
                return Value::Null;
            }
            if op.is_comparison() {
                return eval_compare(*op, &l, &r);
            }
            eval_arith(*op, &l, &r)
        }
        ScalarExpr::Not(e) => match expr_bool(e, schema, row) {
            Some(b) => Value::Boolean(!b),
            None => Value::Null,
        },
        ScalarExpr::Neg(e) => match eval_scalar(e, schema, row) {
            Value::Int64(v) => Value::Int64(v.wrapping_neg()),
            Value::Float64(v) => Value::Float64(-v),
            _ => Value::Null,
        },
        ScalarExpr::Case { branches, otherwise } => {
            for (cond, res) in branches {
                if expr_bool(cond, schema, row) == Some(true) {
                    return eval_scalar(res, schema, row);
                }
            }
            match otherwise {
                Some(e) => eval_scalar(e, schema, row),
                None => Value::Null,
            }
        }
        ScalarExpr::Cast { expr, ty } => eval_cast(eval_scalar(expr, schema, row), *ty),
    }
}

/// Boolean view with NULL -> None.
pub(crate) fn expr_bool(expr: &ScalarExpr, schema: &Schema, row: &[Value]) -> Option<bool> {
    match eval_scalar(expr, schema, row) {
        Value::Boolean(b) => Some(b),
        _ => None,
    }
}

fn eval_logic(op: BinaryOp, l: Option<bool>, r: Option<bool>) -> Value {
    let v = match op {
        BinaryOp::And => match (l, r) {
            (Some(false), _) | (_, Some(false)) => Some(false),
            (Some(true), Some(true)) => Some(true),
            _ => None,
        },
        BinaryOp::Or => match (l, r) {
            (Some(true), _) | (_, Some(true)) => Some(true),
            (Some(false), Some(false)) => Some(false),
            _ => None,
        },
        _ => unreachable!(),
    };
    v.map_or(Value::Null, Value::Boolean)
}

fn eval_compare(op: BinaryOp, l: &Value, r: &Value) -> Value {
    use std::cmp::Ordering;
    let ord = match (l, r) {
        (Value::Int64(a), Value::Int64(b)) => a.cmp(b),
        (Value::Date(a), Value::Date(b)) => a.cmp(b),
        (Value::Text(a), Value::Text(b)) => a.cmp(b),
        (Value::Boolean(a), Value::Boolean(b)) => a.cmp(b),
        (Value::Hash(a), Value::Hash(b)) => a.cmp(b),
        _ => match (l.as_f64(), r.as_f64()) {
            (Some(a), Some(b)) => match a.partial_cmp(&b) {
                Some(o) => o,
                None => return Value::Null,
            },
            _ => return Value::Null,
        },
    };
    let out = match op {
        BinaryOp::Lt => ord == Ordering::Less,
        BinaryOp::Le => ord != Ordering::Greater,
        BinaryOp::Eq => ord == Ordering::Equal,
        BinaryOp::Ne => ord != Ordering::Equal,
        BinaryOp::Ge => ord != Ordering::Less,
        BinaryOp::Gt => ord == Ordering::Greater,
        _ => unreachable!(),
    };
    Value::Boolean(out)
}

fn eval_arith(op: BinaryOp, l: &Value, r: &Value) -> Value {
    use Value::*;
    match (op, l, r) {
        (BinaryOp::Add, Date(d), Int64(n)) | (BinaryOp::Add, Int64(n), Date(d)) => {
            Date(d.wrapping_add(*n as i32))
        }
        (BinaryOp::Sub, Date(d), Int64(n)) => Date(d.wrapping_sub(*n as i32)),
        (BinaryOp::Sub, Date(a), Date(b)) => Int64(*a as i64 - *b as i64),
        (_, Int64(a), Int64(b)) => match op {
            BinaryOp::Add => Int64(a.wrapping_add(*b)),
            BinaryOp::Sub => Int64(a.wrapping_sub(*b)),
            BinaryOp::Mul => Int64(a.wrapping_mul(*b)),
            BinaryOp::Div => {
                if *b == 0 {
                    Null
                } else {
                    Int64(a.wrapping_div(*b))
                }
            }
            _ => unreachable!(),
        },
        _ => {
            let (a, b) = match (l.as_f64(), r.as_f64()) {
                (Some(a), Some(b)) => (a, b),
                _ => return Null,
            };
            match op {
                BinaryOp::Add => Float64(a + b),
                BinaryOp::Sub => Float64(a - b),
                BinaryOp::Mul => Float64(a * b),
                BinaryOp::Div => {
                    if b == 0.0 {
                        Null
                    } else {
                        Float64(a / b)
                    }
                }
                _ => unreachable!(),
            }
        }
    }
}

fn eval_cast(v: Value, ty: ValueType) -> Value {
    use ValueType as T;
    if v.is_null() {
        return Value::Null;
    }
    match ty {
        T::Int64 => match v {
            Value::Int64(_) => v,
            Value::Float64(f) => Value::Int64(f.trunc() as i64),
            Value::Boolean(b) => Value::Int64(b as i64),
            Value::Date(d) => Value::Int64(d as i64),
            Value::Text(s) => s.trim().parse().map_or(Value::Null, Value::Int64),
            _ => Value::Null,
        },
        T::Float64 => match v {
            Value::Float64(_) => v,
            Value::Int64(i) => Value::Float64(i as f64),
            Value::Boolean(b) => Value::Float64(b as i64 as f64),
            Value::Date(d) => Value::Float64(d as f64),
            Value::Text(s) => s.trim().parse().map_or(Value::Null, Value::Float64),
            _ => Value::Null,
        },
        T::Boolean => match v {
            Value::Boolean(_) => v,
            Value::Int64(i) => Value::Boolean(i != 0),
            Value::Text(s) => match s.trim().to_ascii_lowercase().as_str() {
                "true" | "t" | "1" => Value::Boolean(true),
                "false" | "f" | "0" => Value::Boolean(false),
                _ => Value::Null,
            },
            _ => Value::Null,
        },
        T::Text => Value::Text(v.render()),
        T::Date => match v {
            Value::Date(_) => v,
            Value::Int64(i) => Value::Date(i as i32),
            Value::Text(s) => super::value::parse_date(s.trim()).map_or(Value::Null, Value::Date),
            _ => Value::Null,
        },
        T::Hash | T::VectorF64 => Value::Null,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::relcore::Schema;

    fn lineitem_schema() -> Schema {
        Schema::new(vec![
            Schema::col("l_quantity", ValueType::Int64),
            Schema::col("avg_qty", ValueType::Float64),
            Schema::col("l_ep", ValueType::Float64),
            Schema::col("l_disc", ValueType::Float64),
        ])
        .unwrap()
    }

    #[test]
    fn type_check_int_closure() {
        let schema = lineitem_schema();
        let e = ScalarExpr::binary(BinaryOp::Add, ScalarExpr::col("l_quantity"), ScalarExpr::lit(Value::Int64(1)));
        assert_eq!(type_check(&e, &schema).unwrap(), ValueType::Int64);
    }

    #[test]
    fn type_check_q17_predicate() {
        let schema = lineitem_schema();
        // l_quantity < 0.2 * avg_qty
        let e = ScalarExpr::binary(
            BinaryOp::Lt,
            ScalarExpr::col("l_quantity"),
            ScalarExpr::binary(BinaryOp::Mul, ScalarExpr::lit(Value::Float64(0.2)), ScalarExpr::col("avg_qty")),
        );
        assert_eq!(type_check(&e, &schema).unwrap(), ValueType::Boolean);
    }

    #[test]
    fn type_check_rejects_text_plus_int() {
        let schema = lineitem_schema();
        let e = ScalarExpr::binary(
            BinaryOp::Add,
            ScalarExpr::lit(Value::Text("a".into())),
            ScalarExpr::lit(Value::Int64(1)),
        );
        assert!(matches!(type_check(&e, &schema), Err(RelError::TypeMismatch(_))));
    }

    #[test]
    fn type_check_unknown_column() {
        let schema = lineitem_schema();
        let e = ScalarExpr::col("nope");
        assert!(matches!(type_check(&e, &schema), Err(RelError::UnknownColumn(_))));
    }

    #[test]
    fn eval_case_and_division() {
        let schema = Schema::default();
        let case = ScalarExpr::Case {
            branches: vec![(ScalarExpr::lit(Value::Boolean(true)), ScalarExpr::lit(Value::Int64(3)))],
            otherwise: Some(Box::new(ScalarExpr::lit(Value::Int64(0)))),
        };
        assert_eq!(eval_scalar(&case, &schema, &[]), Value::Int64(3));

        let div = ScalarExpr::binary(BinaryOp::Div, ScalarExpr::lit(Value::Int64(1)), ScalarExpr::lit(Value::Int64(0)));
        assert_eq!(eval_scalar(&div, &schema, &[]), Value::Null);
    }

    #[test]
    fn eval_revenue_expression() {
        // l_ep * (1 - l_disc) on row (10.0, 0.1) -> 9.0
        let schema = Schema::new(vec![
            Schema::col("l_ep", ValueType::Float64),
            Schema::col("l_disc", ValueType::Float64),
        ])
        .unwrap();
        let e = ScalarExpr::binary(
            BinaryOp::Mul,
            ScalarExpr::col("l_ep"),
            ScalarExpr::binary(BinaryOp::Sub, ScalarExpr::lit(Value::Int64(1)), ScalarExpr::col("l_disc")),
        );
        let e = e.bind(&schema).unwrap();
        let got = eval_scalar(&e, &schema, &[Value::Float64(10.0), Value::Float64(0.1)]);
        assert_eq!(got, Value::Float64(9.0));
    }

    #[test]
    fn three_valued_logic() {
        let schema = Schema::new(vec![Schema::col("b", ValueType::Boolean)]).unwrap();
        let and = ScalarExpr::binary(BinaryOp::And, ScalarExpr::lit(Value::Boolean(false)), ScalarExpr::col("b"));
        assert_eq!(eval_scalar(&and, &schema, &[Value::Null]), Value::Boolean(false));
        let or = ScalarExpr::binary(BinaryOp::Or, ScalarExpr::lit(Value::Boolean(false)), ScalarExpr::col("b"));
        assert_eq!(eval_scalar(&or, &schema, &[Value::Null]), Value::Null);
    }

    mod totality {
        use super::*;
        use proptest::prelude::*;

        fn arb_expr() -> impl Strategy<Value = ScalarExpr> {
            let leaf = prop_oneof![
                Just(ScalarExpr::col("a")),
                Just(ScalarExpr::col("b")),
                Just(ScalarExpr::col("f")),
                any::<i64>().prop_map(|v| ScalarExpr::lit(Value::Int64(v))),
                (-1e6f64..1e6).prop_map(|v| ScalarExpr::lit(Value::Float64(v))),
                Just(ScalarExpr::lit(Value::Null)),
            ];
            leaf.prop_recursive(4, 32, 3, |inner| {
                (inner.clone(), inner, 0usize..6).prop_map(|(l, r, op)| {
                    let op = [
                        BinaryOp::Add,
                        BinaryOp::Sub,
                        BinaryOp::Mul,
                        BinaryOp::Div,
                        BinaryOp::Lt,
                        BinaryOp::Eq,
                    ][op];
                    ScalarExpr::binary(op, l, r)
                })
            })
        }

        proptest! {
            // Every expression the type checker accepts evaluates without
            // aborting, on any row, including NULLs and zero divisors.
            #[test]
            fn accepted_expressions_never_abort(
                expr in arb_expr(),
                a in any::<i64>(),
                b in any::<i64>(),
                f in -1e9f64..1e9,
                nulls in any::<u8>(),
            ) {
                let schema = Schema::new(vec![
                    Schema::col("a", ValueType::Int64),
                    Schema::col("b", ValueType::Int64),
                    Schema::col("f", ValueType::Float64),
                ]).unwrap();
                if type_check(&expr, &schema).is_ok() {
                    let row = vec![
                        if nulls & 1 == 0 { Value::Int64(a) } else { Value::Null },
                        if nulls & 2 == 0 { Value::Int64(b) } else { Value::Null },
                        if nulls & 4 == 0 { Value::Float64(f) } else { Value::Null },
                    ];
                    let out = eval_scalar(&expr, &schema, &row);
                    // pure function of (expr, row)
                    prop_assert_eq!(eval_scalar(&expr, &schema, &row), out);
                }
            }
        }
    }
}
