use sha2::{Digest, Sha256};

/// First 12 hex characters of SHA-256 over the given parts.
///
/// Parts are separated by a NUL byte so `("ab", "c")` and `("a", "bc")` differ.
pub fn short_hash(parts: &[&str]) -> String {
    let mut hasher = Sha256::new();
    for (i, part) in parts.iter().enumerate() {
        if i > 0 {
            hasher.update([0u8]);
        }
        hasher.update(part.as_bytes());
    }
    let digest = hasher.finalize();
    hex::encode(digest)[..12].to_string()
}

pub(crate) fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn short_hash_is_twelve_hex_chars() {
        let id = short_hash(&["clinical-notes", "0"]);
        assert_eq!(id.len(), 12);
        assert!(id.chars().all(|c| c.is_ascii_hexdigit()));
        assert_eq!(id, short_hash(&["clinical-notes", "0"]));
        assert_ne!(id, short_hash(&["clinical-notes", "1"]));
        assert_ne!(short_hash(&["ab", "c"]), short_hash(&["a", "bc"]));
    }
}
