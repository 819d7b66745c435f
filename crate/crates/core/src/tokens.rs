//! Per-file canary identifiers.
//!
//! Two verification schemes share one framing:
//!
//! * **HMAC**: `HMAC-SHA256(org_key, file_id)[..16]`, checked by exact lookup
//!   in a registry of issued tokens.
//! * **EdDSA**: `file_uuid = SHA-256(file_id)[..4]` followed by the Ed25519
//!   signature over it, checked against registered organization public keys.
//!
//! Every embedded payload is framed as a 2-byte big-endian length followed by
//! the token bytes, so decoders can recover it without external metadata.

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use ed25519_dalek::{Signature, Signer, SigningKey, Verifier, VerifyingKey};
use hmac::{Hmac, Mac};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const HMAC_TOKEN_LEN: usize = 16;
pub const FILE_UUID_LEN: usize = 4;
pub const SIGNATURE_LEN: usize = 64;
pub const EDDSA_TOKEN_LEN: usize = FILE_UUID_LEN + SIGNATURE_LEN;
pub const FRAME_HEADER_LEN: usize = 2;
pub const MIN_KEY_LEN: usize = 16;

/// Environment variable that names a file holding the organization key.
pub const KEY_FILE_ENV: &str = "CANARY_KEY_FILE";

/// Organization secret. Never serialized by scan-side code.
#[derive(Clone)]
pub struct OrgKey(Vec<u8>);

impl OrgKey {
    pub fn new(bytes: impl Into<Vec<u8>>) -> Result<Self> {
        let bytes = bytes.into();
        if bytes.len() < MIN_KEY_LEN {
            return Err(Error::invalid(format!(
                "organization key must be at least {MIN_KEY_LEN} bytes, got {}",
                bytes.len()
            )));
        }
        Ok(OrgKey(bytes))
    }

    /// Reads the raw key bytes from a file.
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::new(bytes)
    }

    /// Reads the key from the file named by [`KEY_FILE_ENV`]. The variable
    /// holds a path, never the key itself.
    pub fn from_env() -> Result<Self> {
        let path = std::env::var_os(KEY_FILE_ENV)
            .ok_or_else(|| Error::invalid(format!("{KEY_FILE_ENV} is not set")))?;
        Self::from_file(path)
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.0
    }

    /// Deterministic Ed25519 key pair; the seed is `SHA-256(key_bytes)`.
    pub fn signing_key(&self) -> SigningKey {
        let seed: [u8; 32] = Sha256::digest(&self.0).into();
        SigningKey::from_bytes(&seed)
    }

    pub fn public_key(&self) -> VerifyingKey {
        self.signing_key().verifying_key()
    }
}

impl fmt::Debug for OrgKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "OrgKey(<{} bytes redacted>)", self.0.len())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct HmacToken(pub [u8; HMAC_TOKEN_LEN]);

impl HmacToken {
    pub fn as_bytes(&self) -> &[u8] {
        &self.0
    }

    pub fn digest(&self) -> String {
        hex::encode(self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EddsaToken {
    pub file_uuid: [u8; FILE_UUID_LEN],
    pub signature: [u8; SIGNATURE_LEN],
}

impl EddsaToken {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(EDDSA_TOKEN_LEN);
        out.extend_from_slice(&self.file_uuid);
        out.extend_from_slice(&self.signature);
        out
    }

    pub fn verify(&self, public_key: &VerifyingKey) -> bool {
        let sig = Signature::from_bytes(&self.signature);
        public_key.verify(&self.file_uuid, &sig).is_ok()
    }
}

fn check_file_id(file_id: &str) -> Result<()> {
    if file_id.is_empty() {
        return Err(Error::invalid("file_id must not be empty"));
    }
    Ok(())
}

pub fn derive_hmac_token(key: &OrgKey, file_id: &str) -> Result<HmacToken> {
    check_file_id(file_id)?;
    let mut mac =
        Hmac::<Sha256>::new_from_slice(key.as_bytes()).expect("HMAC accepts keys of any length");
    mac.update(file_id.as_bytes());
    let tag = mac.finalize().into_bytes();
    let mut token = [0u8; HMAC_TOKEN_LEN];
    token.copy_from_slice(&tag[..HMAC_TOKEN_LEN]);
    Ok(HmacToken(token))
}

pub fn file_uuid(file_id: &str) -> [u8; FILE_UUID_LEN] {
    let digest = Sha256::digest(file_id.as_bytes());
    let mut uuid = [0u8; FILE_UUID_LEN];
    uuid.copy_from_slice(&digest[..FILE_UUID_LEN]);
    uuid
}

pub fn derive_eddsa_token(key: &OrgKey, file_id: &str) -> Result<EddsaToken> {
    check_file_id(file_id)?;
    let file_uuid = file_uuid(file_id);
    let signature = key.signing_key().sign(&file_uuid).to_bytes();
    Ok(EddsaToken {
        file_uuid,
        signature,
    })
}

/// Prepends the 2-byte big-endian length of `body`.
pub fn frame(body: &[u8]) -> Result<Vec<u8>> {
    if body.is_empty() || body.len() > u16::MAX as usize {
        return Err(Error::invalid(format!(
            "frame body must be 1..=65535 bytes, got {}",
            body.len()
        )));
    }
    let mut out = Vec::with_capacity(FRAME_HEADER_LEN + body.len());
    out.extend_from_slice(&(body.len() as u16).to_be_bytes());
    out.extend_from_slice(body);
    Ok(out)
}

/// A validated `len_be16 ‖ body` byte string, as carried by every layer.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct FramedPayload(Vec<u8>);

impl FramedPayload {
    pub fn new(body: &[u8]) -> Result<Self> {
        frame(body).map(FramedPayload)
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.0
    }

    pub fn body(&self) -> &[u8] {
        &self.0[FRAME_HEADER_LEN..]
    }

    /// Framed length in bytes (header included).
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

/// Declared body length of a frame, if the header is present.
pub fn declared_len(bytes: &[u8]) -> Option<usize> {
    match bytes {
        [hi, lo, ..] => Some(u16::from_be_bytes([*hi, *lo]) as usize),
        _ => None,
    }
}

/// Returns the framed body, ignoring any trailing bytes. A zero declared
/// length is rejected because [`frame`] never produces one.
pub fn unframe(bytes: &[u8]) -> Result<&[u8]> {
    let len = declared_len(bytes).ok_or(Error::MalformedFrame)?;
    if len == 0 || bytes.len() < FRAME_HEADER_LEN + len {
        return Err(Error::MalformedFrame);
    }
    Ok(&bytes[FRAME_HEADER_LEN..FRAME_HEADER_LEN + len])
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    #[default]
    Hmac,
    Eddsa,
}

impl Scheme {
    pub fn token_len(self) -> usize {
        match self {
            Scheme::Hmac => HMAC_TOKEN_LEN,
            Scheme::Eddsa => EDDSA_TOKEN_LEN,
        }
    }

    /// Raw token bytes for `file_id` under this scheme.
    pub fn derive(self, key: &OrgKey, file_id: &str) -> Result<Vec<u8>> {
        match self {
            Scheme::Hmac => Ok(derive_hmac_token(key, file_id)?.0.to_vec()),
            Scheme::Eddsa => Ok(derive_eddsa_token(key, file_id)?.to_bytes()),
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scheme::Hmac => "hmac",
            Scheme::Eddsa => "eddsa",
        })
    }
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "hmac" | "hmac-sha256" => Ok(Scheme::Hmac),
            "eddsa" | "ed25519" => Ok(Scheme::Eddsa),
            other => Err(Error::invalid(format!("unknown scheme {other:?}"))),
        }
    }
}

/// What a verified payload resolved to.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(tag = "scheme", rename_all = "lowercase")]
pub enum ScanIdentity {
    Hmac { digest: String },
    Eddsa { org_id: String, file_uuid: String },
}

impl ScanIdentity {
    /// Short identifier suitable for logs and block responses.
    pub fn digest(&self) -> String {
        match self {
            ScanIdentity::Hmac { digest } => digest.clone(),
            ScanIdentity::Eddsa { org_id, file_uuid } => format!("{org_id}:{file_uuid}"),
        }
    }
}

/// Issued HMAC tokens and registered organization public keys.
///
/// On disk the registry is line oriented: a bare hex line is a 16-byte HMAC
/// token, `org_id<TAB>hex_public_key` registers an Ed25519 key. Blank lines
/// and lines starting with `#` are ignored.
#[derive(Clone, Debug, Default)]
pub struct TokenRegistry {
    tokens: HashSet<[u8; HMAC_TOKEN_LEN]>,
    public_keys: Vec<(String, VerifyingKey)>,
}

impl TokenRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_token_capacity(n: usize) -> Self {
        TokenRegistry {
            tokens: HashSet::with_capacity(n),
            public_keys: Vec::new(),
        }
    }

    pub fn insert_token(&mut self, token: HmacToken) -> bool {
        self.tokens.insert(token.0)
    }

    /// Registers (or replaces) the public key of `org_id`.
    pub fn insert_public_key(&mut self, org_id: impl Into<String>, key: VerifyingKey) {
        let org_id = org_id.into();
        match self.public_keys.iter_mut().find(|(id, _)| *id == org_id) {
            Some(slot) => slot.1 = key,
            None => self.public_keys.push((org_id, key)),
        }
    }

    pub fn token_count(&self) -> usize {
        self.tokens.len()
    }

    pub fn public_key_count(&self) -> usize {
        self.public_keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty() && self.public_keys.is_empty()
    }

    pub fn contains_token(&self, token: &[u8]) -> bool {
        <[u8; HMAC_TOKEN_LEN]>::try_from(token).is_ok_and(|t| self.tokens.contains(&t))
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut reg = TokenRegistry::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = |reason: &str| Error::RegistryFormat {
                line: idx + 1,
                reason: reason.to_string(),
            };
            if let Some((org, pk_hex)) = line.split_once('\t') {
                let bytes: [u8; 32] = hex::decode(pk_hex.trim())
                    .ok()
                    .and_then(|b| b.try_into().ok())
                    .ok_or_else(|| bad("public key must be 32 hex-encoded bytes"))?;
                let key = VerifyingKey::from_bytes(&bytes)
                    .map_err(|_| bad("not a valid Ed25519 public key"))?;
                reg.insert_public_key(org.trim(), key);
            } else {
                let token: [u8; HMAC_TOKEN_LEN] = hex::decode(line)
                    .ok()
                    .and_then(|b| b.try_into().ok())
                    .ok_or_else(|| bad("token must be 16 hex-encoded bytes"))?;
                reg.tokens.insert(token);
            }
        }
        Ok(reg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// Serialized form; tokens are sorted so the output is stable.
    pub fn to_lines(&self) -> String {
        let mut tokens: Vec<_> = self.tokens.iter().map(hex::encode).collect();
        tokens.sort();
        let mut out = String::new();
        for t in tokens {
            out.push_str(&t);
            out.push('\n');
        }
        for (org, key) in &self.public_keys {
            out.push_str(&format!("{org}\t{}\n", hex::encode(key.as_bytes())));
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_lines()).map_err(|e| Error::io(path, e))
    }
}

/// Appends one registry record to `path`, creating the file if needed.
pub fn append_registry_line(path: impl AsRef<Path>, line: &str) -> Result<()> {
    let path = path.as_ref();
    let mut f = fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    writeln!(f, "{line}").map_err(|e| Error::io(path, e))
}

/// Checks a recovered (unframed) payload. Every rejection path yields `None`
/// without further detail.
pub fn verify(payload: &[u8], registry: &TokenRegistry, scheme: Scheme) -> Option<ScanIdentity> {
    match scheme {
        Scheme::Hmac => {
            if payload.len() == HMAC_TOKEN_LEN && registry.contains_token(payload) {
                Some(ScanIdentity::Hmac {
                    digest: hex::encode(payload),
                })
            } else {
                None
            }
        }
        Scheme::Eddsa => {
            if payload.len() != EDDSA_TOKEN_LEN {
                return None;
            }
            let (uuid, sig) = payload.split_at(FILE_UUID_LEN);
            let sig = Signature::from_bytes(sig.try_into().ok()?);
            registry
                .public_keys
                .iter()
                .find(|(_, pk)| pk.verify(uuid, &sig).is_ok())
                .map(|(org, _)| ScanIdentity::Eddsa {
                    org_id: org.clone(),
                    file_uuid: hex::encode(uuid),
                })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn key() -> OrgKey {
        OrgKey::new(b"organization-secret-key-0001".to_vec()).unwrap()
    }

    #[test]
    fn short_keys_are_rejected() {
        assert!(OrgKey::new(vec![1u8; 15]).is_err());
        assert!(OrgKey::new(vec![1u8; 16]).is_ok());
    }

    #[test]
    fn debug_redacts_key() {
        assert!(!format!("{:?}", key()).contains("secret"));
    }

    #[test]
    fn empty_file_id_is_invalid() {
        assert!(matches!(
            derive_hmac_token(&key(), ""),
            Err(Error::InvalidArgument(_))
        ));
        assert!(derive_eddsa_token(&key(), "").is_err());
    }

    #[test]
    fn hmac_token_is_deterministic_and_distinct() {
        let k = key();
        assert_eq!(
            derive_hmac_token(&k, "dir/a.txt").unwrap(),
            derive_hmac_token(&k, "dir/a.txt").unwrap()
        );
        assert_ne!(
            derive_hmac_token(&k, "a").unwrap(),
            derive_hmac_token(&k, "b").unwrap()
        );
    }

    #[test]
    fn eddsa_round_trip_and_bit_flip() {
        let k = key();
        let tok = derive_eddsa_token(&k, "dir/a.txt").unwrap();
        assert_eq!(tok, derive_eddsa_token(&k, "dir/a.txt").unwrap());
        assert_eq!(tok.file_uuid, file_uuid("dir/a.txt"));
        assert!(tok.verify(&k.public_key()));
        for bit in 0..SIGNATURE_LEN * 8 {
            let mut bad = tok;
            bad.signature[bit / 8] ^= 1 << (bit % 8);
            assert!(!bad.verify(&k.public_key()), "bit {bit} flip accepted");
        }
    }

    #[test]
    fn frame_examples() {
        let f16 = frame(&[7u8; 16]).unwrap();
        assert_eq!(f16.len(), 18);
        assert_eq!(&f16[..2], &[0x00, 0x10]);
        let f68 = frame(&[7u8; 68]).unwrap();
        assert_eq!(f68.len(), 70);
        assert_eq!(&f68[..2], &[0x00, 0x44]);
        assert_eq!(frame(&[0xAB]).unwrap(), vec![0x00, 0x01, 0xAB]);
        assert!(frame(&[]).is_err());
        assert!(frame(&vec![0u8; 65536]).is_err());
        assert_eq!(frame(&vec![0u8; 65535]).unwrap().len(), 65537);
    }

    #[test]
    fn unframe_examples() {
        assert_eq!(
            unframe(&[0x00, 0x03, 0x01, 0x02, 0x03, 0xFF, 0xFF]).unwrap(),
            &[0x01, 0x02, 0x03]
        );
        assert!(matches!(
            unframe(&[0x00, 0x05, 0x01]),
            Err(Error::MalformedFrame)
        ));
        assert!(unframe(&[0x00]).is_err());
        assert!(unframe(&[0x00, 0x00, 0x01]).is_err());
    }

    #[test]
    fn verify_hits_and_misses() {
        let k = key();
        let mut reg = TokenRegistry::new();
        let tok = derive_hmac_token(&k, "f").unwrap();
        reg.insert_token(tok);
        reg.insert_public_key("acme", k.public_key());

        assert_eq!(
            verify(&tok.0, &reg, Scheme::Hmac),
            Some(ScanIdentity::Hmac {
                digest: tok.digest()
            })
        );
        assert_eq!(verify(&tok.0[..15], &reg, Scheme::Hmac), None);
        assert_eq!(verify(&tok.0, &reg, Scheme::Eddsa), None);

        let ed = derive_eddsa_token(&k, "f").unwrap();
        assert_eq!(
            verify(&ed.to_bytes(), &reg, Scheme::Eddsa),
            Some(ScanIdentity::Eddsa {
                org_id: "acme".into(),
                file_uuid: hex::encode(ed.file_uuid)
            })
        );
        assert_eq!(verify(&ed.to_bytes(), &reg, Scheme::Hmac), None);
    }

    #[test]
    fn registry_file_round_trip() {
        let k = key();
        let mut reg = TokenRegistry::new();
        for id in ["a", "b", "c"] {
            reg.insert_token(derive_hmac_token(&k, id).unwrap());
        }
        reg.insert_public_key("acme", k.public_key());
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("registry.txt");
        reg.save(&path).unwrap();
        let back = TokenRegistry::load(&path).unwrap();
        assert_eq!(back.token_count(), 3);
        assert_eq!(back.public_key_count(), 1);
        assert_eq!(back.to_lines(), reg.to_lines());

        append_registry_line(&path, &derive_hmac_token(&k, "d").unwrap().digest()).unwrap();
        assert_eq!(TokenRegistry::load(&path).unwrap().token_count(), 4);
    }

    #[test]
    fn registry_rejects_garbage() {
        let err = TokenRegistry::parse("# comment\n\nzz\n").unwrap_err();
        assert!(matches!(err, Error::RegistryFormat { line: 3, .. }));
        assert!(TokenRegistry::parse("acme\t00ff\n").is_err());
    }

    #[test]
    fn key_from_env_names_a_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("org.key");
        fs::write(&path, b"0123456789abcdef0123").unwrap();
        assert_eq!(OrgKey::from_file(&path).unwrap().as_bytes().len(), 20);
    }

    proptest! {
        #[test]
        fn frame_unframe_identity(body in proptest::collection::vec(any::<u8>(), 1..512),
                                  pad in proptest::collection::vec(any::<u8>(), 0..8)) {
            let mut framed = frame(&body).unwrap();
            framed.extend_from_slice(&pad);
            prop_assert_eq!(unframe(&framed).unwrap(), &body[..]);
        }
    }
}
