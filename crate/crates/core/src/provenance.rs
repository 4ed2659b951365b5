use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Where a reported number came from: a method tag plus a hash of the inputs
/// that produced it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub method: String,
    pub inputs_digest: String,
}

impl Provenance {
    pub fn new<T: Serialize + ?Sized>(method: &str, inputs: &T) -> Self {
        Provenance {
            method: method.to_string(),
            inputs_digest: digest(inputs),
        }
    }
}

/// SHA-256 of the canonical JSON encoding of `value`, hex encoded.
pub fn digest<T: Serialize + ?Sized>(value: &T) -> String {
    let bytes = serde_json::to_vec(value).expect("inputs serialize to JSON");
    hex::encode(Sha256::digest(&bytes))
}
