//! Hash-name identity: `<32-char base-32 digest>-<name-version>`.
//!
//! A package version is named by a digest of everything that went into
//! building it plus a human-readable label. Two packages with the same
//! hash-name are the same package.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Base-32 alphabet; omits `e`, `o`, `t` and `u`.
pub const ALPHABET: &[u8; 32] = b"0123456789abcdfghijklmnpqrsvwxyz";

pub const DIGEST_LEN: usize = 32;

/// Raw digest bytes kept after truncating SHA-256 (160 bits).
pub const RAW_DIGEST_LEN: usize = 20;

pub fn is_alphabet_byte(b: u8) -> bool {
    ALPHABET.contains(&b)
}

fn is_label_byte(b: u8, first: bool) -> bool {
    b.is_ascii_alphanumeric() || matches!(b, b'.' | b'_' | b'+') || (!first && b == b'-')
}

pub fn is_valid_label(label: &str) -> bool {
    let bytes = label.as_bytes();
    !bytes.is_empty()
        && bytes
            .iter()
            .enumerate()
            .all(|(i, &b)| is_label_byte(b, i == 0))
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct HashName {
    digest: String,
    label: String,
}

impl HashName {
    pub fn new(digest: impl Into<String>, label: impl Into<String>) -> Result<Self> {
        let digest = digest.into();
        let label = label.into();
        let rendered = format!("{digest}-{label}");
        if digest.len() != DIGEST_LEN {
            return Err(malformed(rendered, "digest must be 32 characters"));
        }
        if !digest.bytes().all(is_alphabet_byte) {
            return Err(malformed(rendered, "digest has a character outside the base-32 alphabet"));
        }
        if !is_valid_label(&label) {
            return Err(malformed(rendered, "label is empty or has invalid characters"));
        }
        Ok(HashName { digest, label })
    }

    pub fn digest(&self) -> &str {
        &self.digest
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn render(&self) -> String {
        self.to_string()
    }
}

fn malformed(text: impl Into<String>, reason: &'static str) -> Error {
    Error::MalformedHashName {
        text: text.into(),
        reason,
    }
}

/// Parses a single `<digest>-<label>` token.
pub fn parse_hash_name(text: &str) -> Result<HashName> {
    let bytes = text.as_bytes();
    let digest_len = bytes.iter().take_while(|b| is_alphabet_byte(**b)).count();
    if digest_len < DIGEST_LEN {
        return Err(malformed(text, "digest must be 32 base-32 characters"));
    }
    if bytes.get(DIGEST_LEN) != Some(&b'-') {
        return Err(malformed(text, "expected '-' after the 32-character digest"));
    }
    HashName::new(&text[..DIGEST_LEN], &text[DIGEST_LEN + 1..])
}

impl FromStr for HashName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        parse_hash_name(s)
    }
}

impl TryFrom<String> for HashName {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        parse_hash_name(&s)
    }
}

impl From<HashName> for String {
    fn from(h: HashName) -> String {
        h.to_string()
    }
}

impl fmt::Display for HashName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}", self.digest, self.label)
    }
}

/// Encodes 20 bytes as a 160-bit big-endian integer in 32 base-32 digits,
/// most significant first.
pub fn base32_encode(digest: &[u8]) -> Result<String> {
    if digest.len() != RAW_DIGEST_LEN {
        return Err(Error::WrongLength(digest.len()));
    }
    // 160 bits split into 32 groups of 5, read from the top.
    let out = (0..DIGEST_LEN)
        .map(|i| {
            let bit = i * 5;
            let byte = bit / 8;
            let shift = bit % 8;
            let hi = u16::from(digest[byte]) << 8;
            let lo = digest.get(byte + 1).copied().map(u16::from).unwrap_or(0);
            let window = hi | lo;
            let value = (window >> (11 - shift)) & 0x1f;
            ALPHABET[value as usize] as char
        })
        .collect();
    Ok(out)
}

/// Everything that determines a package's digest.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HashInputs {
    pub recipe_bytes: Vec<u8>,
    pub helper_bytes: Vec<u8>,
    pub system: String,
    dep_hashes: Vec<String>,
}

impl HashInputs {
    /// Dependency hash-names are sorted and deduplicated.
    pub fn new(
        recipe_bytes: impl Into<Vec<u8>>,
        helper_bytes: impl Into<Vec<u8>>,
        system: impl Into<String>,
        deps: impl IntoIterator<Item = String>,
    ) -> Result<Self> {
        let system = system.into();
        if system.is_empty() {
            return Err(Error::InvalidHashInputs("system tag is empty".into()));
        }
        let mut dep_hashes: Vec<String> = deps.into_iter().collect();
        dep_hashes.sort();
        dep_hashes.dedup();
        Ok(HashInputs {
            recipe_bytes: recipe_bytes.into(),
            helper_bytes: helper_bytes.into(),
            system,
            dep_hashes,
        })
    }

    pub fn dep_hashes(&self) -> &[String] {
        &self.dep_hashes
    }

    /// Length-prefixed byte stream that is hashed.
    pub fn framed(&self) -> Vec<u8> {
        let mut out = Vec::new();
        let fields = [
            self.recipe_bytes.as_slice(),
            self.helper_bytes.as_slice(),
            self.system.as_bytes(),
        ]
        .into_iter()
        .chain(self.dep_hashes.iter().map(String::as_bytes));
        for field in fields {
            out.extend_from_slice(&(field.len() as u64).to_be_bytes());
            out.extend_from_slice(field);
        }
        out
    }
}

pub fn compute_package_hash(inputs: &HashInputs) -> String {
    let digest = Sha256::digest(inputs.framed());
    base32_encode(&digest[..RAW_DIGEST_LEN]).expect("truncated digest is 20 bytes")
}

#[cfg(test)]
mod tests {
    use num_bigint::BigUint;
    use proptest::prelude::*;

    use super::*;

    /// Independent encoder: repeated division of an arbitrary-precision integer.
    fn oracle_encode(bytes: &[u8]) -> String {
        let mut n = BigUint::from_bytes_be(bytes);
        let base = BigUint::from(32u32);
        let mut digits = Vec::new();
        for _ in 0..DIGEST_LEN {
            let rem = (&n % &base).to_u32_digits().first().copied().unwrap_or(0);
            digits.push(ALPHABET[rem as usize] as char);
            n /= &base;
        }
        digits.iter().rev().collect()
    }

    #[test]
    fn parses_gcc_hash_name() {
        let h = parse_hash_name("bj61jjvy9fnm3xxpyq12zpxw2mzg09c8-gcc-4.6.1").unwrap();
        assert_eq!(h.digest(), "bj61jjvy9fnm3xxpyq12zpxw2mzg09c8");
        assert_eq!(h.label(), "gcc-4.6.1");
        assert_eq!(h.to_string(), "bj61jjvy9fnm3xxpyq12zpxw2mzg09c8-gcc-4.6.1");
    }

    #[test]
    fn minimal_token() {
        let h = parse_hash_name("00000000000000000000000000000000-x").unwrap();
        assert_eq!(h.digest(), "0".repeat(32));
        assert_eq!(h.label(), "x");
    }

    #[test]
    fn rejects_malformed() {
        for bad in [
            "bj61-gcc",
            "bj61jjvy9fnm3xxpyq12zpxw2mzg09c8-",
            "bj61jjvy9fnm3xxpyq12zpxw2mzg09c8gcc",
            "ej61jjvy9fnm3xxpyq12zpxw2mzg09c8-gcc",
            "bj61jjvy9fnm3xxpyq12zpxw2mzg09c8-gc c",
            "bj61jjvy9fnm3xxpyq12zpxw2mzg09c8-a/b",
            "bj61jjvy9fnm3xxpyq12zpxw2mzg09c8--lead",
            "",
        ] {
            assert!(
                matches!(parse_hash_name(bad), Err(Error::MalformedHashName { .. })),
                "{bad:?} should be rejected"
            );
        }
    }

    #[test]
    fn base32_fixed_values() {
        assert_eq!(base32_encode(&[0; 20]).unwrap(), "0".repeat(32));
        let mut one = [0u8; 20];
        one[19] = 1;
        // Oracle value: integer 1 is the digit '1'.
        assert_eq!(base32_encode(&one).unwrap(), "00000000000000000000000000000001");
        assert_eq!(base32_encode(&[0xff; 20]).unwrap(), "z".repeat(32));
        let mut ten = [0u8; 20];
        ten[19] = 10;
        assert_eq!(base32_encode(&ten).unwrap(), "0000000000000000000000000000000a");
    }

    #[test]
    fn base32_wrong_length() {
        assert!(matches!(base32_encode(&[0; 19]), Err(Error::WrongLength(19))));
        assert!(matches!(base32_encode(&[0; 32]), Err(Error::WrongLength(32))));
    }

    fn golden_inputs() -> HashInputs {
        HashInputs::new(
            b"name = \"toy\"\nversion = \"1.0\"\ninstall_command = \"./garden-helper --install\"\n".to_vec(),
            b"#!/bin/sh\nexit 0\n".to_vec(),
            "x86_64-linux",
            [
                "bj61jjvy9fnm3xxpyq12zpxw2mzg09c8-gcc-4.6.1".to_string(),
                "00000000000000000000000000000000-x".to_string(),
            ],
        )
        .unwrap()
    }

    #[test]
    fn golden_package_hash() {
        // Pinned from a scripted hashlib + big-integer conversion run.
        assert_eq!(
            compute_package_hash(&golden_inputs()),
            "dq4m61pi8hmjrs6aiihdj5s0k61fncaq"
        );
        let digest = Sha256::digest(golden_inputs().framed());
        assert_eq!(oracle_encode(&digest[..20]), "dq4m61pi8hmjrs6aiihdj5s0k61fncaq");
    }

    #[test]
    fn dependency_sensitivity() {
        let a = golden_inputs();
        let mut deps = a.dep_hashes().to_vec();
        deps[0] = "00000000000000000000000000000001-x".into();
        let b = HashInputs::new(a.recipe_bytes.clone(), a.helper_bytes.clone(), "x86_64-linux", deps).unwrap();
        assert_ne!(compute_package_hash(&a), compute_package_hash(&b));
    }

    #[test]
    fn framing_separates_field_boundaries() {
        let a = HashInputs::new(b"ab".to_vec(), b"c".to_vec(), "s", []).unwrap();
        let b = HashInputs::new(b"a".to_vec(), b"bc".to_vec(), "s", []).unwrap();
        assert_ne!(a.framed(), b.framed());
    }

    #[test]
    fn empty_system_rejected() {
        assert!(HashInputs::new(vec![], vec![], "", []).is_err());
    }

    fn arb_hashname() -> impl Strategy<Value = HashName> {
        (
            proptest::collection::vec(0usize..32, 32),
            "[A-Za-z0-9._+][A-Za-z0-9._+-]{0,20}",
        )
            .prop_map(|(idx, label)| {
                let digest: String = idx.iter().map(|&i| ALPHABET[i] as char).collect();
                HashName::new(digest, label).unwrap()
            })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn parse_render_roundtrip(h in arb_hashname()) {
            prop_assert_eq!(parse_hash_name(&h.render()).unwrap(), h);
        }

        #[test]
        fn encode_matches_bigint_oracle(bytes in proptest::array::uniform20(any::<u8>())) {
            prop_assert_eq!(base32_encode(&bytes).unwrap(), oracle_encode(&bytes));
        }

        #[test]
        fn encoding_preserves_order(a in proptest::array::uniform20(any::<u8>()), b in proptest::array::uniform20(any::<u8>())) {
            let (ea, eb) = (base32_encode(&a).unwrap(), base32_encode(&b).unwrap());
            // Alphabet is in ascending ASCII order, so text order follows integer order.
            prop_assert_eq!(a.cmp(&b), ea.cmp(&eb));
        }
    }
}
