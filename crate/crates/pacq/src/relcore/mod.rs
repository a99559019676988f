//! Typed columnar relational data model and the scalar expression language
//! shared by the parser, rewriter, executor, and oracle.

mod csvio;
mod expr;
mod value;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use csvio::{csv_bytes, read_csv, write_csv};
pub use expr::{eval_scalar, type_check, BinaryOp, ColumnRef, ScalarExpr};
pub use value::{
    civil_from_days, days_from_civil, format_date, format_f64, parse_date, Value, ValueType,
};

#[derive(Debug, Error)]
pub enum RelError {
    #[error("unknown column `{0}`")]
    UnknownColumn(String),
    #[error("type mismatch: {0}")]
    TypeMismatch(String),
    #[error("duplicate column `{0}` in schema")]
    DuplicateColumn(String),
    #[error("column `{col}` has {got} rows, expected {want}")]
    RaggedColumns { col: String, got: usize, want: usize },
    #[error("csv error: {0}")]
    Csv(String),
    #[error("value `{value}` does not parse as {ty} (column `{col}`)")]
    BadCell { value: String, ty: ValueType, col: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Column {
    pub name: String,
    pub ty: ValueType,
    pub nullable: bool,
}

/// Ordered column list; names are unique within one schema.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Schema {
    pub columns: Vec<Column>,
}

impl Schema {
    pub fn new(columns: Vec<Column>) -> Result<Self, RelError> {
        for (i, c) in columns.iter().enumerate() {
            if columns[..i].iter().any(|p| p.name == c.name) {
                return Err(RelError::DuplicateColumn(c.name.clone()));
            }
        }
        Ok(Schema { columns })
    }

    pub fn col(name: &str, ty: ValueType) -> Column {
        Column { name: name.to_string(), ty, nullable: true }
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.name == name)
    }

    pub fn len(&self) -> usize {
        self.columns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.columns.is_empty()
    }

    pub fn names(&self) -> Vec<&str> {
        self.columns.iter().map(|c| c.name.as_str()).collect()
    }
}

/// Immutable columnar relation: one value array per schema column, all of
/// equal length. Relations are never mutated after load, so they can be
/// shared across threads by reference.
#[derive(Debug, Clone, PartialEq)]
pub struct Relation {
    pub schema: Schema,
    pub columns: Vec<Vec<Value>>,
}

impl Relation {
    pub fn empty(schema: Schema) -> Self {
        let columns = vec![Vec::new(); schema.len()];
        Relation { schema, columns }
    }

    pub fn new(schema: Schema, columns: Vec<Vec<Value>>) -> Result<Self, RelError> {
        let want = columns.first().map_or(0, |c| c.len());
        for (i, col) in columns.iter().enumerate() {
            if col.len() != want {
                return Err(RelError::RaggedColumns {
                    col: schema.columns[i].name.clone(),
                    got: col.len(),
                    want,
                });
            }
        }
        Ok(Relation { schema, columns })
    }

    pub fn row_count(&self) -> usize {
        self.columns.first().map_or(0, |c| c.len())
    }

    pub fn row(&self, idx: usize) -> Vec<Value> {
        self.columns.iter().map(|c| c[idx].clone()).collect()
    }

    pub fn push_row(&mut self, row: Vec<Value>) {
        debug_assert_eq!(row.len(), self.schema.len());
        for (col, v) in self.columns.iter_mut().zip(row) {
            col.push(v);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schema_rejects_duplicates() {
        let err = Schema::new(vec![
            Schema::col("a", ValueType::Int64),
            Schema::col("a", ValueType::Text),
        ]);
        assert!(matches!(err, Err(RelError::DuplicateColumn(_))));
    }

    #[test]
    fn relation_rejects_ragged_columns() {
        let schema = Schema::new(vec![
            Schema::col("a", ValueType::Int64),
            Schema::col("b", ValueType::Int64),
        ])
        .unwrap();
        let err = Relation::new(schema, vec![vec![Value::Int64(1)], vec![]]);
        assert!(matches!(err, Err(RelError::RaggedColumns { .. })));
    }
}
