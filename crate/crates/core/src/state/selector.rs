//! A small document selector language: comparisons on dot-separated field
//! paths combined with `and`/`or`.
//!
//! Selectors can be built directly or parsed from a Mango-style JSON form:
//!
//! ```json
//! {"kind": "animal", "liters": {"$gte": 100, "$lt": 200},
//!  "$or": [{"farm": "F1"}, {"farm": "F2"}]}
//! ```
//!
//! Fields at the same level are implicitly and-ed. A missing field, or a
//! field holding a value of a different type than the operand, never
//! matches.

use std::cmp::Ordering;

use serde_json::Value;

use crate::codec::Doc;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Scalar {
    Null,
    Bool(bool),
    Int(i64),
    Str(String),
}

impl Scalar {
    fn compare(&self, doc: &Doc) -> Option<Ordering> {
        match (doc, self) {
            (Doc::Null, Scalar::Null) => Some(Ordering::Equal),
            (Doc::Bool(a), Scalar::Bool(b)) => Some(a.cmp(b)),
            (Doc::Int(a), Scalar::Int(b)) => Some(a.cmp(b)),
            (Doc::Str(a), Scalar::Str(b)) => Some(a.as_str().cmp(b.as_str())),
            _ => None,
        }
    }

    fn from_json(value: &Value) -> Result<Scalar, SelectorError> {
        match value {
            Value::Null => Ok(Scalar::Null),
            Value::Bool(b) => Ok(Scalar::Bool(*b)),
            Value::Number(n) => n
                .as_i64()
                .map(Scalar::Int)
                .ok_or_else(|| SelectorError::Malformed(format!("non-integer operand {n}"))),
            Value::String(s) => Ok(Scalar::Str(s.clone())),
            other => Err(SelectorError::Malformed(format!("non-scalar operand {other}"))),
        }
    }
}

impl From<&str> for Scalar {
    fn from(s: &str) -> Self {
        Scalar::Str(s.to_string())
    }
}

impl From<i64> for Scalar {
    fn from(i: i64) -> Self {
        Scalar::Int(i)
    }
}

impl From<bool> for Scalar {
    fn from(b: bool) -> Self {
        Scalar::Bool(b)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CmpOp {
    Eq,
    Gt,
    Lt,
    Gte,
    Lte,
}

impl CmpOp {
    fn holds(self, ord: Ordering) -> bool {
        match self {
            CmpOp::Eq => ord == Ordering::Equal,
            CmpOp::Gt => ord == Ordering::Greater,
            CmpOp::Lt => ord == Ordering::Less,
            CmpOp::Gte => ord != Ordering::Less,
            CmpOp::Lte => ord != Ordering::Greater,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Selector {
    Cmp { op: CmpOp, path: String, value: Scalar },
    And(Vec<Selector>),
    Or(Vec<Selector>),
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SelectorError {
    #[error("malformed selector: {0}")]
    Malformed(String),
}

impl SelectorError {
    pub fn code(&self) -> &'static str {
        "MALFORMED_SELECTOR"
    }
}

fn cmp(op: CmpOp, path: &str, value: impl Into<Scalar>) -> Selector {
    Selector::Cmp { op, path: path.to_string(), value: value.into() }
}

impl Selector {
    pub fn eq(path: &str, value: impl Into<Scalar>) -> Self {
        cmp(CmpOp::Eq, path, value)
    }
    pub fn gt(path: &str, value: impl Into<Scalar>) -> Self {
        cmp(CmpOp::Gt, path, value)
    }
    pub fn lt(path: &str, value: impl Into<Scalar>) -> Self {
        cmp(CmpOp::Lt, path, value)
    }
    pub fn gte(path: &str, value: impl Into<Scalar>) -> Self {
        cmp(CmpOp::Gte, path, value)
    }
    pub fn lte(path: &str, value: impl Into<Scalar>) -> Self {
        cmp(CmpOp::Lte, path, value)
    }
    pub fn and(parts: Vec<Selector>) -> Self {
        Selector::And(parts)
    }
    pub fn or(parts: Vec<Selector>) -> Self {
        Selector::Or(parts)
    }

    pub fn matches(&self, doc: &Doc) -> bool {
        match self {
            Selector::Cmp { op, path, value } => doc
                .path(path)
                .and_then(|field| value.compare(field))
                .is_some_and(|ord| op.holds(ord)),
            Selector::And(parts) => parts.iter().all(|s| s.matches(doc)),
            Selector::Or(parts) => parts.iter().any(|s| s.matches(doc)),
        }
    }

    /// Structural check: non-empty combinators and non-empty path segments.
    pub fn validate(&self) -> Result<(), SelectorError> {
        match self {
            Selector::Cmp { path, .. } => {
                if path.is_empty() || path.split('.').any(str::is_empty) {
                    return Err(SelectorError::Malformed(format!("bad field path {path:?}")));
                }
                Ok(())
            }
            Selector::And(parts) | Selector::Or(parts) => {
                if parts.is_empty() {
                    return Err(SelectorError::Malformed("empty combinator".into()));
                }
                parts.iter().try_for_each(Selector::validate)
            }
        }
    }

    pub fn parse(value: &Value) -> Result<Selector, SelectorError> {
        let sel = parse_object(value)?;
        sel.validate()?;
        Ok(sel)
    }
}

fn parse_object(value: &Value) -> Result<Selector, SelectorError> {
    let Value::Object(map) = value else {
        return Err(SelectorError::Malformed(format!("expected object, got {value}")));
    };
    let mut parts = Vec::new();
    for (key, v) in map {
        match key.as_str() {
            "$and" | "$or" => {
                let Value::Array(items) = v else {
                    return Err(SelectorError::Malformed(format!("{key} takes an array")));
                };
                let subs = items.iter().map(parse_object).collect::<Result<Vec<_>, _>>()?;
                parts.push(if key == "$and" { Selector::And(subs) } else { Selector::Or(subs) });
            }
            k if k.starts_with('$') => {
                return Err(SelectorError::Malformed(format!("unknown operator {k}")));
            }
            path => match v {
                Value::Object(ops) => {
                    if ops.is_empty() {
                        return Err(SelectorError::Malformed(format!("no operators for {path}")));
                    }
                    for (op, operand) in ops {
                        let op = match op.as_str() {
                            "$eq" => CmpOp::Eq,
                            "$gt" => CmpOp::Gt,
                            "$lt" => CmpOp::Lt,
                            "$gte" => CmpOp::Gte,
                            "$lte" => CmpOp::Lte,
                            other => {
                                return Err(SelectorError::Malformed(format!("unknown operator {other}")))
                            }
                        };
                        parts.push(Selector::Cmp {
                            op,
                            path: path.to_string(),
                            value: Scalar::from_json(operand)?,
                        });
                    }
                }
                scalar => parts.push(Selector::Cmp {
                    op: CmpOp::Eq,
                    path: path.to_string(),
                    value: Scalar::from_json(scalar)?,
                }),
            },
        }
    }
    Ok(if parts.len() == 1 { parts.pop().unwrap() } else { Selector::And(parts) })
}
