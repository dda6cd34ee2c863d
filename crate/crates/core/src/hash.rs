use sha2::{Digest, Sha256};

/// Lower-case hex SHA-256 of `bytes`.
pub fn sha256_hex(bytes: impl AsRef<[u8]>) -> String {
    hex::encode(Sha256::digest(bytes.as_ref()))
}

/// Hash of a list of strings, newline-joined.
pub fn hash_lines<S: AsRef<str>>(items: &[S]) -> String {
    let mut h = Sha256::new();
    for s in items {
        h.update(s.as_ref().as_bytes());
        h.update(b"\n");
    }
    hex::encode(h.finalize())
}
