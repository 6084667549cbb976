//! Encryption of gateway/platform secrets at rest under a key derived from a
//! master secret (HKDF-SHA256, per-file random salt).
//!
//! Layout: `0x01 | salt[16] | nonce[24] | XChaCha20-Poly1305(ciphertext || tag)`.

use chacha20poly1305::aead::{Aead, KeyInit, Payload};
use chacha20poly1305::{XChaCha20Poly1305, XNonce};
use hkdf::Hkdf;
use sha2::Sha256;
use zeroize::Zeroizing;

use super::{CryptoError, WIRE_VERSION};
use crate::rng::CryptoRngCore;

fn derive(master: &[u8], salt: &[u8], label: &str) -> Zeroizing<[u8; 32]> {
    let mut key = Zeroizing::new([0u8; 32]);
    Hkdf::<Sha256>::new(Some(salt), master)
        .expand(label.as_bytes(), key.as_mut())
        .expect("32 bytes is a valid HKDF-SHA256 output length");
    key
}

pub fn seal_at_rest<R: CryptoRngCore>(rng: &mut R, master: &[u8], label: &str, plaintext: &[u8]) -> Vec<u8> {
    let mut salt = [0u8; 16];
    let mut nonce = [0u8; 24];
    rng.fill_bytes(&mut salt);
    rng.fill_bytes(&mut nonce);
    let key = derive(master, &salt, label);
    let ct = XChaCha20Poly1305::new(key.as_ref().into())
        .encrypt(XNonce::from_slice(&nonce), Payload { msg: plaintext, aad: label.as_bytes() })
        .expect("in-memory encryption");
    let mut out = Vec::with_capacity(1 + 16 + 24 + ct.len());
    out.push(WIRE_VERSION);
    out.extend_from_slice(&salt);
    out.extend_from_slice(&nonce);
    out.extend_from_slice(&ct);
    out
}

pub fn open_at_rest(master: &[u8], label: &str, sealed: &[u8]) -> Result<Zeroizing<Vec<u8>>, CryptoError> {
    if sealed.len() < 1 + 16 + 24 + super::TAG_LEN || sealed[0] != WIRE_VERSION {
        return Err(CryptoError::Malformed("at-rest envelope".into()));
    }
    let (salt, rest) = sealed[1..].split_at(16);
    let (nonce, ct) = rest.split_at(24);
    let key = derive(master, salt, label);
    XChaCha20Poly1305::new(key.as_ref().into())
        .decrypt(XNonce::from_slice(nonce), Payload { msg: ct, aad: label.as_bytes() })
        .map(Zeroizing::new)
        .map_err(|_| CryptoError::AuthFailure)
}
