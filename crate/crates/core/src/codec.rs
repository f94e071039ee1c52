//! Deterministic binary encoding used for hashing, signing, the peer wire
//! format and the ledger files.
//!
//! Layout rules:
//!
//! * integers are fixed-width big-endian (`u32` for lengths and counts,
//!   `u64`/`i64` for values);
//! * strings and byte strings are a `u32` length followed by the bytes;
//! * lists are a `u32` count followed by the items;
//! * structs are their fields in declaration order, with no framing;
//! * [`Doc`] values are tagged, and map entries are written in ascending key
//!   order. The decoder rejects out-of-order or duplicate keys, so every
//!   value has exactly one encoding.
//!
//! There is no floating-point representation; converting a JSON document
//! containing a float fails with [`CodecError::Unencodable`].

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::hash::{hash_payload, Hash};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CodecError {
    #[error("value cannot be canonically encoded: {0}")]
    Unencodable(String),
    #[error("unexpected end of input")]
    Truncated,
    #[error("{0} trailing bytes after value")]
    TrailingBytes(usize),
    #[error("invalid tag byte {0:#04x}")]
    InvalidTag(u8),
    #[error("invalid utf-8 in string")]
    InvalidUtf8,
    #[error("non-canonical encoding: {0}")]
    NonCanonical(&'static str),
}

impl CodecError {
    pub fn code(&self) -> &'static str {
        match self {
            CodecError::Unencodable(_) => "UNENCODABLE",
            _ => "MALFORMED_ENCODING",
        }
    }
}

/// A value with a canonical byte encoding.
pub trait Canonical: Sized {
    fn encode_to(&self, out: &mut Vec<u8>);
    fn decode_from(reader: &mut Reader<'_>) -> Result<Self, CodecError>;
}

pub fn canonical_encode<T: Canonical>(value: &T) -> Vec<u8> {
    let mut out = Vec::new();
    value.encode_to(&mut out);
    out
}

/// Decodes a complete value, rejecting trailing bytes.
pub fn canonical_decode<T: Canonical>(bytes: &[u8]) -> Result<T, CodecError> {
    let mut reader = Reader::new(bytes);
    let value = T::decode_from(&mut reader)?;
    if reader.remaining() != 0 {
        return Err(CodecError::TrailingBytes(reader.remaining()));
    }
    Ok(value)
}

pub fn canonical_hash<T: Canonical>(value: &T) -> Hash {
    hash_payload(&canonical_encode(value))
}

/// Canonical encoding of an arbitrary JSON value.
pub fn encode_json(value: &serde_json::Value) -> Result<Vec<u8>, CodecError> {
    Ok(canonical_encode(&Doc::try_from(value.clone())?))
}

pub struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Reader { buf, pos: 0 }
    }

    pub fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8], CodecError> {
        if self.remaining() < n {
            return Err(CodecError::Truncated);
        }
        let slice = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    pub fn byte(&mut self) -> Result<u8, CodecError> {
        Ok(self.take(1)?[0])
    }

    pub fn array<const N: usize>(&mut self) -> Result<[u8; N], CodecError> {
        let mut arr = [0u8; N];
        arr.copy_from_slice(self.take(N)?);
        Ok(arr)
    }

    /// Reads a list count. Every item occupies at least one byte, so a count
    /// larger than the remaining input is rejected before anything is
    /// allocated.
    pub fn count(&mut self) -> Result<usize, CodecError> {
        let n = u32::decode_from(self)? as usize;
        if n > self.remaining() {
            return Err(CodecError::Truncated);
        }
        Ok(n)
    }
}

macro_rules! fixed_int {
    ($($t:ty),*) => {$(
        impl Canonical for $t {
            fn encode_to(&self, out: &mut Vec<u8>) {
                out.extend_from_slice(&self.to_be_bytes());
            }
            fn decode_from(reader: &mut Reader<'_>) -> Result<Self, CodecError> {
                Ok(<$t>::from_be_bytes(reader.array()?))
            }
        }
    )*};
}

fixed_int!(u8, u32, u64, i64);

impl Canonical for bool {
    fn encode_to(&self, out: &mut Vec<u8>) {
        out.push(*self as u8);
    }
    fn decode_from(reader: &mut Reader<'_>) -> Result<Self, CodecError> {
        match reader.byte()? {
            0 => Ok(false),
            1 => Ok(true),
            t => Err(CodecError::InvalidTag(t)),
        }
    }
}

impl Canonical for String {
    fn encode_to(&self, out: &mut Vec<u8>) {
        (self.len() as u32).encode_to(out);
        out.extend_from_slice(self.as_bytes());
    }
    fn decode_from(reader: &mut Reader<'_>) -> Result<Self, CodecError> {
        let len = u32::decode_from(reader)? as usize;
        let bytes = reader.take(len)?;
        String::from_utf8(bytes.to_vec()).map_err(|_| CodecError::InvalidUtf8)
    }
}

impl<const N: usize> Canonical for [u8; N] {
    fn encode_to(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(self);
    }
    fn decode_from(reader: &mut Reader<'_>) -> Result<Self, CodecError> {
        reader.array()
    }
}

impl Canonical for Hash {
    fn encode_to(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.0);
    }
    fn decode_from(reader: &mut Reader<'_>) -> Result<Self, CodecError> {
        Ok(Hash(reader.array()?))
    }
}

impl<T: Canonical> Canonical for Vec<T> {
    fn encode_to(&self, out: &mut Vec<u8>) {
        (self.len() as u32).encode_to(out);
        for item in self {
            item.encode_to(out);
        }
    }
    fn decode_from(reader: &mut Reader<'_>) -> Result<Self, CodecError> {
        let n = reader.count()?;
        let mut items = Vec::with_capacity(n);
        for _ in 0..n {
            items.push(T::decode_from(reader)?);
        }
        Ok(items)
    }
}

impl<T: Canonical> Canonical for Option<T> {
    fn encode_to(&self, out: &mut Vec<u8>) {
        match self {
            None => out.push(0),
            Some(v) => {
                out.push(1);
                v.encode_to(out);
            }
        }
    }
    fn decode_from(reader: &mut Reader<'_>) -> Result<Self, CodecError> {
        match reader.byte()? {
            0 => Ok(None),
            1 => Ok(Some(T::decode_from(reader)?)),
            t => Err(CodecError::InvalidTag(t)),
        }
    }
}

impl<A: Canonical, B: Canonical> Canonical for (A, B) {
    fn encode_to(&self, out: &mut Vec<u8>) {
        self.0.encode_to(out);
        self.1.encode_to(out);
    }
    fn decode_from(reader: &mut Reader<'_>) -> Result<Self, CodecError> {
        Ok((A::decode_from(reader)?, B::decode_from(reader)?))
    }
}

impl<T: Canonical + Ord> Canonical for BTreeSet<T> {
    fn encode_to(&self, out: &mut Vec<u8>) {
        (self.len() as u32).encode_to(out);
        for item in self {
            item.encode_to(out);
        }
    }
    fn decode_from(reader: &mut Reader<'_>) -> Result<Self, CodecError> {
        let items: Vec<T> = Vec::decode_from(reader)?;
        if items.windows(2).any(|w| w[0] >= w[1]) {
            return Err(CodecError::NonCanonical("set items out of order"));
        }
        Ok(items.into_iter().collect())
    }
}

/// A structured document: the JSON data model without floats.
#[derive(Clone, PartialEq, Eq, Default)]
pub enum Doc {
    #[default]
    Null,
    Bool(bool),
    Int(i64),
    Str(String),
    List(Vec<Doc>),
    Map(BTreeMap<String, Doc>),
}

const TAG_NULL: u8 = 0x00;
const TAG_FALSE: u8 = 0x01;
const TAG_TRUE: u8 = 0x02;
const TAG_INT: u8 = 0x03;
const TAG_STR: u8 = 0x04;
const TAG_LIST: u8 = 0x06;
const TAG_MAP: u8 = 0x07;

impl Doc {
    pub fn map() -> Doc {
        Doc::Map(BTreeMap::new())
    }

    /// Builder-style insert; no-op on non-map values.
    pub fn with(mut self, key: &str, value: impl Into<Doc>) -> Doc {
        if let Doc::Map(m) = &mut self {
            m.insert(key.to_string(), value.into());
        }
        self
    }

    pub fn get(&self, key: &str) -> Option<&Doc> {
        match self {
            Doc::Map(m) => m.get(key),
            _ => None,
        }
    }

    /// Looks up a dot-separated field path such as `"meta.farm"`.
    pub fn path(&self, path: &str) -> Option<&Doc> {
        path.split('.').try_fold(self, |doc, seg| doc.get(seg))
    }

    pub fn as_str(&self) -> Option<&str> {
        match self {
            Doc::Str(s) => Some(s),
            _ => None,
        }
    }

    pub fn as_int(&self) -> Option<i64> {
        match self {
            Doc::Int(i) => Some(*i),
            _ => None,
        }
    }

    pub fn as_bool(&self) -> Option<bool> {
        match self {
            Doc::Bool(b) => Some(*b),
            _ => None,
        }
    }

    pub fn as_list(&self) -> Option<&[Doc]> {
        match self {
            Doc::List(l) => Some(l),
            _ => None,
        }
    }

    pub fn to_json(&self) -> serde_json::Value {
        use serde_json::Value;
        match self {
            Doc::Null => Value::Null,
            Doc::Bool(b) => Value::Bool(*b),
            Doc::Int(i) => Value::from(*i),
            Doc::Str(s) => Value::String(s.clone()),
            Doc::List(l) => Value::Array(l.iter().map(Doc::to_json).collect()),
            Doc::Map(m) => Value::Object(
                m.iter()
                    .map(|(k, v)| (k.clone(), v.to_json()))
                    .collect(),
            ),
        }
    }

    /// Converts a serializable value into a document.
    pub fn from_serde<T: Serialize>(value: &T) -> Result<Doc, CodecError> {
        let json =
            serde_json::to_value(value).map_err(|e| CodecError::Unencodable(e.to_string()))?;
        Doc::try_from(json)
    }

    /// Deserializes a document into a typed value.
    pub fn to_serde<T: DeserializeOwned>(&self) -> Result<T, serde_json::Error> {
        serde_json::from_value(self.to_json())
    }
}

impl fmt::Debug for Doc {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.to_json())
    }
}

impl From<&str> for Doc {
    fn from(s: &str) -> Doc {
        Doc::Str(s.to_string())
    }
}

impl From<String> for Doc {
    fn from(s: String) -> Doc {
        Doc::Str(s)
    }
}

impl From<i64> for Doc {
    fn from(i: i64) -> Doc {
        Doc::Int(i)
    }
}

impl From<bool> for Doc {
    fn from(b: bool) -> Doc {
        Doc::Bool(b)
    }
}

impl<T: Into<Doc>> From<Vec<T>> for Doc {
    fn from(items: Vec<T>) -> Doc {
        Doc::List(items.into_iter().map(Into::into).collect())
    }
}

impl TryFrom<serde_json::Value> for Doc {
    type Error = CodecError;

    fn try_from(value: serde_json::Value) -> Result<Doc, CodecError> {
        use serde_json::Value;
        Ok(match value {
            Value::Null => Doc::Null,
            Value::Bool(b) => Doc::Bool(b),
            Value::Number(n) => match n.as_i64() {
                Some(i) => Doc::Int(i),
                None => return Err(CodecError::Unencodable(format!("number {n}"))),
            },
            Value::String(s) => Doc::Str(s),
            Value::Array(items) => Doc::List(
                items
                    .into_iter()
                    .map(Doc::try_from)
                    .collect::<Result<_, _>>()?,
            ),
            Value::Object(map) => Doc::Map(
                map.into_iter()
                    .map(|(k, v)| Ok((k, Doc::try_from(v)?)))
                    .collect::<Result<_, CodecError>>()?,
            ),
        })
    }
}

impl Serialize for Doc {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        self.to_json().serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Doc {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Doc, D::Error> {
        let json = serde_json::Value::deserialize(deserializer)?;
        Doc::try_from(json).map_err(serde::de::Error::custom)
    }
}

impl Canonical for Doc {
    fn encode_to(&self, out: &mut Vec<u8>) {
        match self {
            Doc::Null => out.push(TAG_NULL),
            Doc::Bool(false) => out.push(TAG_FALSE),
            Doc::Bool(true) => out.push(TAG_TRUE),
            Doc::Int(i) => {
                out.push(TAG_INT);
                i.encode_to(out);
            }
            Doc::Str(s) => {
                out.push(TAG_STR);
                s.encode_to(out);
            }
            Doc::List(items) => {
                out.push(TAG_LIST);
                items.encode_to(out);
            }
            Doc::Map(map) => {
                out.push(TAG_MAP);
                (map.len() as u32).encode_to(out);
                for (k, v) in map {
                    k.encode_to(out);
                    v.encode_to(out);
                }
            }
        }
    }

    fn decode_from(reader: &mut Reader<'_>) -> Result<Self, CodecError> {
        Ok(match reader.byte()? {
            TAG_NULL => Doc::Null,
            TAG_FALSE => Doc::Bool(false),
            TAG_TRUE => Doc::Bool(true),
            TAG_INT => Doc::Int(i64::decode_from(reader)?),
            TAG_STR => Doc::Str(String::decode_from(reader)?),
            TAG_LIST => Doc::List(Vec::decode_from(reader)?),
            TAG_MAP => {
                let n = reader.count()?;
                let mut map = BTreeMap::new();
                let mut last: Option<String> = None;
                for _ in 0..n {
                    let key = String::decode_from(reader)?;
                    if last.as_ref().is_some_and(|prev| *prev >= key) {
                        return Err(CodecError::NonCanonical("map keys out of order"));
                    }
                    let value = Doc::decode_from(reader)?;
                    last = Some(key.clone());
                    map.insert(key, value);
                }
                Doc::Map(map)
            }
            t => return Err(CodecError::InvalidTag(t)),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use serde_json::json;

    #[test]
    fn map_encoding_ignores_insertion_order() {
        let a = json!({"b": 1, "a": 2, "c": {"y": true, "x": null}});
        let mut m = serde_json::Map::new();
        m.insert("c".into(), json!({"x": null, "y": true}));
        m.insert("a".into(), json!(2));
        m.insert("b".into(), json!(1));
        assert_eq!(
            encode_json(&a).unwrap(),
            encode_json(&serde_json::Value::Object(m)).unwrap()
        );
    }

    #[test]
    fn empty_map_is_fixed_marker() {
        assert_eq!(canonical_encode(&Doc::map()), vec![TAG_MAP, 0, 0, 0, 0]);
    }

    #[test]
    fn floats_are_unencodable() {
        let err = encode_json(&json!({"liters": 1.5})).unwrap_err();
        assert_eq!(err.code(), "UNENCODABLE");
        assert!(encode_json(&json!(u64::MAX)).is_err());
    }

    #[test]
    fn integers_are_fixed_width_big_endian() {
        assert_eq!(canonical_encode(&258u64), vec![0, 0, 0, 0, 0, 0, 1, 2]);
        assert_eq!(
            canonical_encode(&Doc::Int(-1)),
            vec![TAG_INT, 0xff, 0xff, 0xff, 0xff, 0xff, 0xff, 0xff, 0xff]
        );
    }

    #[test]
    fn decoder_rejects_unsorted_keys_and_trailing_bytes() {
        let mut bytes = vec![TAG_MAP];
        2u32.encode_to(&mut bytes);
        "b".to_string().encode_to(&mut bytes);
        Doc::Null.encode_to(&mut bytes);
        "a".to_string().encode_to(&mut bytes);
        Doc::Null.encode_to(&mut bytes);
        assert!(matches!(
            canonical_decode::<Doc>(&bytes),
            Err(CodecError::NonCanonical(_))
        ));

        let mut ok = canonical_encode(&Doc::Int(3));
        ok.push(0);
        assert_eq!(canonical_decode::<Doc>(&ok), Err(CodecError::TrailingBytes(1)));
    }

    #[test]
    fn huge_count_does_not_allocate() {
        let bytes = [TAG_LIST, 0xff, 0xff, 0xff, 0xff];
        assert_eq!(canonical_decode::<Doc>(&bytes), Err(CodecError::Truncated));
    }

    fn arb_doc() -> impl Strategy<Value = Doc> {
        let leaf = prop_oneof![
            Just(Doc::Null),
            any::<bool>().prop_map(Doc::Bool),
            any::<i64>().prop_map(Doc::Int),
            "[a-z0-9 ]{0,8}".prop_map(Doc::Str),
        ];
        leaf.prop_recursive(4, 32, 6, |inner| {
            prop_oneof![
                prop::collection::vec(inner.clone(), 0..6).prop_map(Doc::List),
                prop::collection::btree_map("[a-z]{1,4}", inner, 0..6).prop_map(Doc::Map),
            ]
        })
    }

    proptest! {
        #[test]
        fn doc_round_trips(doc in arb_doc()) {
            let bytes = canonical_encode(&doc);
            prop_assert_eq!(canonical_decode::<Doc>(&bytes).unwrap(), doc.clone());
            let via_json = Doc::try_from(doc.to_json()).unwrap();
            prop_assert_eq!(canonical_encode(&via_json), bytes);
        }
    }
}
