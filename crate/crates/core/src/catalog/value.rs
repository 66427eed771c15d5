//! Typed cell values. Stored values are JSON scalars already in the
//! canonical form for their column type.

use std::cmp::Ordering;

use serde_json::Value;

use super::model::{CatalogModel, ColumnDef, ValueType};
use super::CatalogError;
use crate::clock::Timestamp;
use crate::idspace::parse_id;

/// Converts an incoming value to the canonical stored form for `column`.
/// Strings are accepted for every type so that wire and CSV input work.
pub fn coerce(
    model: &CatalogModel,
    column: &ColumnDef,
    raw: &Value,
) -> Result<Value, CatalogError> {
    let violation = |detail: String| CatalogError::TypeViolation {
        column: column.name.clone(),
        detail,
    };
    if raw.is_null() {
        return Ok(Value::Null);
    }
    let text = raw.as_str();
    match column.value_type {
        ValueType::Text => text
            .map(|s| Value::String(s.to_string()))
            .ok_or_else(|| violation(format!("expected text, got {raw}"))),
        ValueType::Integer => match raw {
            Value::Number(n) if n.is_i64() => Ok(raw.clone()),
            Value::String(s) => s
                .trim()
                .parse::<i64>()
                .map(Value::from)
                .map_err(|_| violation(format!("`{s}` is not an integer"))),
            _ => Err(violation(format!("expected an integer, got {raw}"))),
        },
        ValueType::Float => {
            let f = match raw {
                Value::Number(n) => n.as_f64(),
                Value::String(s) => s.trim().parse::<f64>().ok(),
                _ => None,
            };
            f.filter(|f| f.is_finite())
                .and_then(serde_json::Number::from_f64)
                .map(Value::Number)
                .ok_or_else(|| violation(format!("expected a number, got {raw}")))
        }
        ValueType::Boolean => match raw {
            Value::Bool(_) => Ok(raw.clone()),
            Value::String(s) if s.trim().eq_ignore_ascii_case("true") => Ok(Value::Bool(true)),
            Value::String(s) if s.trim().eq_ignore_ascii_case("false") => Ok(Value::Bool(false)),
            _ => Err(violation(format!("expected true or false, got {raw}"))),
        },
        ValueType::Timestamp => text
            .and_then(|s| Timestamp::parse(s.trim()))
            .map(|t| Value::String(t.to_string()))
            .ok_or_else(|| violation(format!("expected an RFC 3339 timestamp, got {raw}"))),
        ValueType::Identifier => {
            let s = text.ok_or_else(|| violation(format!("expected an identifier, got {raw}")))?;
            parse_id(s.trim())
                .map(|id| Value::String(id.to_string()))
                .map_err(|e| violation(e.to_string()))
        }
        ValueType::Term => {
            let s = text.ok_or_else(|| violation(format!("expected a term, got {raw}")))?;
            let vocabulary = column
                .vocabulary
                .as_ref()
                .and_then(|v| model.table(v))
                .ok_or_else(|| violation("vocabulary is missing".into()))?;
            vocabulary
                .normalize_term(s)
                .map(|t| Value::String(t.to_string()))
                .ok_or_else(|| CatalogError::UnknownTerm {
                    column: column.name.clone(),
                    value: s.to_string(),
                })
        }
    }
}

/// Ordering between two stored values of the same column. `None` when the
/// values are not comparable (either is null, or the types differ).
pub fn compare(a: &Value, b: &Value) -> Option<Ordering> {
    match (a, b) {
        (Value::Number(x), Value::Number(y)) => match (x.as_i64(), y.as_i64()) {
            (Some(x), Some(y)) => Some(x.cmp(&y)),
            _ => x.as_f64()?.partial_cmp(&y.as_f64()?),
        },
        (Value::String(x), Value::String(y)) => Some(x.as_bytes().cmp(y.as_bytes())),
        (Value::Bool(x), Value::Bool(y)) => Some(x.cmp(y)),
        _ => None,
    }
}

/// Total order used to sort facet values: nulls first, then by type.
pub fn total_order(a: &Value, b: &Value) -> Ordering {
    fn rank(v: &Value) -> u8 {
        match v {
            Value::Null => 0,
            Value::Bool(_) => 1,
            Value::Number(_) => 2,
            Value::String(_) => 3,
            _ => 4,
        }
    }
    rank(a)
        .cmp(&rank(b))
        .then_with(|| compare(a, b).unwrap_or(Ordering::Equal))
}

/// The CSV cell for a stored value; null becomes the empty cell.
pub fn to_cell(value: &Value) -> String {
    match value {
        Value::Null => String::new(),
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::model::{ColumnSpec, ModelChange, TableRef, VocabularyTerm};
    use serde_json::json;

    fn column(value_type: ValueType) -> ColumnDef {
        ColumnDef {
            id: 1,
            name: "C".into(),
            value_type,
            nullable: true,
            vocabulary: None,
            aliases: vec![],
        }
    }

    #[test]
    fn coercion_accepts_strings_and_canonicalizes() {
        let m = CatalogModel::default();
        assert_eq!(
            coerce(&m, &column(ValueType::Integer), &json!("42")).unwrap(),
            json!(42)
        );
        assert_eq!(
            coerce(&m, &column(ValueType::Float), &json!("2.5")).unwrap(),
            json!(2.5)
        );
        assert_eq!(
            coerce(&m, &column(ValueType::Boolean), &json!("TRUE")).unwrap(),
            json!(true)
        );
        assert_eq!(
            coerce(
                &m,
                &column(ValueType::Timestamp),
                &json!("2024-05-01T12:00:00+02:00")
            )
            .unwrap(),
            json!("2024-05-01T10:00:00Z")
        );
        assert_eq!(
            coerce(&m, &column(ValueType::Identifier), &json!("synapse:1-1acr")).unwrap(),
            json!("SYNAPSE:1-1ACR")
        );
        assert_eq!(
            coerce(&m, &column(ValueType::Text), &Value::Null).unwrap(),
            Value::Null
        );
    }

    #[test]
    fn coercion_rejects_wrong_types() {
        let m = CatalogModel::default();
        for (t, v) in [
            (ValueType::Integer, json!(1.5)),
            (ValueType::Integer, json!("x")),
            (ValueType::Text, json!(3)),
            (ValueType::Boolean, json!("yes")),
            (ValueType::Timestamp, json!("yesterday")),
            (ValueType::Identifier, json!("SYNAPSE:1-1ACI")),
        ] {
            let err = coerce(&m, &column(t), &v).unwrap_err();
            assert_eq!(err.code(), "TypeViolation", "{t:?} {v}");
        }
    }

    #[test]
    fn terms_normalize_through_the_vocabulary() {
        let vocab = TableRef::parse("V:Status").unwrap();
        let m = CatalogModel::default()
            .apply(&ModelChange::AddVocabulary {
                table: vocab.clone(),
                terms: vec![VocabularyTerm::new("completed").with_synonyms(&["done"])],
            })
            .unwrap();
        let spec = ColumnSpec::term("S", vocab);
        let col = ColumnDef {
            vocabulary: spec.vocabulary,
            ..column(ValueType::Term)
        };
        assert_eq!(
            coerce(&m, &col, &json!(" DONE")).unwrap(),
            json!("completed")
        );
        let err = coerce(&m, &col, &json!("finnished")).unwrap_err();
        assert_eq!(err.code(), "UnknownTerm");
    }

    #[test]
    fn numbers_compare_numerically() {
        assert_eq!(compare(&json!(9), &json!(10)), Some(Ordering::Less));
        assert_eq!(compare(&json!(2.5), &json!(2)), Some(Ordering::Greater));
        assert_eq!(compare(&json!(null), &json!(1)), None);
    }
}
