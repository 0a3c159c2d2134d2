//! Opaque values flowing through functions, and the identifiers that name
//! endpoints and stored objects.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Identifies a network endpoint in the simulated topology.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EndpointId(pub String);

impl EndpointId {
    pub fn new(id: impl Into<String>) -> Self {
        EndpointId(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for EndpointId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for EndpointId {
    fn from(s: &str) -> Self {
        EndpointId(s.to_owned())
    }
}

/// An object stored behind an endpoint: `(endpoint, object-id)`. This is also
/// the freshen cache key.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ObjectKey {
    pub endpoint: EndpointId,
    pub object: String,
}

impl ObjectKey {
    pub fn new(endpoint: impl Into<EndpointId>, object: impl Into<String>) -> Self {
        Self {
            endpoint: endpoint.into(),
            object: object.into(),
        }
    }
}

impl fmt::Display for ObjectKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.endpoint, self.object)
    }
}

/// A fetched object. The model never materializes object bytes; `digest`
/// stands in for the content.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Blob {
    pub key: ObjectKey,
    pub size: u64,
    pub version: u64,
    pub digest: u64,
}

/// An opaque value. Cloning is cheap.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub enum Value {
    #[default]
    Unit,
    Bool(bool),
    Int(i64),
    Text(Arc<str>),
    Bytes(Arc<[u8]>),
    Blob(Arc<Blob>),
    Hash(u64),
}

impl Value {
    pub fn text(s: impl AsRef<str>) -> Self {
        Value::Text(Arc::from(s.as_ref()))
    }

    pub fn bytes(b: impl AsRef<[u8]>) -> Self {
        Value::Bytes(Arc::from(b.as_ref()))
    }

    pub fn as_blob(&self) -> Option<&Blob> {
        match self {
            Value::Blob(b) => Some(b),
            _ => None,
        }
    }

    /// Stable content fingerprint, identical across runs and platforms.
    pub fn fingerprint(&self) -> u64 {
        let mut h = Sha256::new();
        self.feed(&mut h);
        finish(h)
    }

    fn feed(&self, h: &mut Sha256) {
        match self {
            Value::Unit => h.update([0u8]),
            Value::Bool(b) => h.update([1u8, *b as u8]),
            Value::Int(i) => {
                h.update([2u8]);
                h.update(i.to_le_bytes());
            }
            Value::Text(s) => {
                h.update([3u8]);
                h.update((s.len() as u64).to_le_bytes());
                h.update(s.as_bytes());
            }
            Value::Bytes(b) => {
                h.update([4u8]);
                h.update((b.len() as u64).to_le_bytes());
                h.update(b);
            }
            Value::Blob(b) => {
                h.update([5u8]);
                h.update(b.digest.to_le_bytes());
                h.update(b.version.to_le_bytes());
                h.update(b.size.to_le_bytes());
            }
            Value::Hash(x) => {
                h.update([6u8]);
                h.update(x.to_le_bytes());
            }
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Unit => f.write_str("()"),
            Value::Bool(b) => write!(f, "{b}"),
            Value::Int(i) => write!(f, "{i}"),
            Value::Text(s) => write!(f, "{s:?}"),
            Value::Bytes(b) => write!(f, "<{} bytes>", b.len()),
            Value::Blob(b) => write!(f, "<{} v{} {} bytes #{:016x}>", b.key, b.version, b.size, b.digest),
            Value::Hash(x) => write!(f, "#{x:016x}"),
        }
    }
}

/// Fingerprint of an ordered sequence of values.
pub fn combine<'a>(label: &str, values: impl IntoIterator<Item = &'a Value>) -> u64 {
    let mut h = Sha256::new();
    h.update(label.as_bytes());
    for v in values {
        v.feed(&mut h);
    }
    finish(h)
}

/// Fingerprint of raw strings, used for synthetic object content.
pub fn digest_strs(parts: &[&str]) -> u64 {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p.as_bytes());
    }
    finish(h)
}

fn finish(h: Sha256) -> u64 {
    let out = h.finalize();
    let mut first = [0u8; 8];
    first.copy_from_slice(&out[..8]);
    u64::from_le_bytes(first)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fingerprint_distinguishes_variants() {
        assert_ne!(Value::Int(1).fingerprint(), Value::Hash(1).fingerprint());
        assert_ne!(Value::text("a").fingerprint(), Value::bytes("a").fingerprint());
        assert_eq!(Value::text("x").fingerprint(), Value::text("x").fingerprint());
    }

    #[test]
    fn combine_is_order_sensitive() {
        let a = Value::Int(1);
        let b = Value::Int(2);
        assert_ne!(combine("c", [&a, &b]), combine("c", [&b, &a]));
    }
}
