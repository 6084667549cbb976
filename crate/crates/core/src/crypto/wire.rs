//! Versioned binary encodings for field ciphertexts, key grants, and the
//! gateway keystore. Integers are little-endian; strings and byte strings are
//! prefixed with a u32 length. See `docs/wire-format.md`.

use super::{Aad, CryptoError, EpochKey, FieldCiphertext, GrantReason, KeyGrant, Keystore, WIRE_VERSION};
use crate::ids::{FieldId, OwnerId, RecordId, RuleId, ServiceId};

pub const KIND_CIPHERTEXT: u8 = 0x01;
pub const KIND_GRANT: u8 = 0x02;
pub const KIND_KEYSTORE: u8 = 0x03;

#[derive(Default)]
pub struct Writer(Vec<u8>);

impl Writer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn u8(&mut self, v: u8) {
        self.0.push(v);
    }

    pub fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }

    pub fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }

    pub fn raw(&mut self, b: &[u8]) {
        self.0.extend_from_slice(b);
    }

    pub fn bytes(&mut self, b: &[u8]) {
        self.u32(u32::try_from(b.len()).expect("field shorter than 4 GiB"));
        self.raw(b);
    }

    pub fn str(&mut self, s: &str) {
        self.bytes(s.as_bytes());
    }

    pub fn finish(self) -> Vec<u8> {
        self.0
    }
}

pub struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

fn malformed(what: &str) -> CryptoError {
    CryptoError::Malformed(what.to_string())
}

impl<'a> Reader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    pub fn raw(&mut self, n: usize) -> Result<&'a [u8], CryptoError> {
        let end = self.pos.checked_add(n).filter(|e| *e <= self.buf.len()).ok_or_else(|| malformed("truncated"))?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    pub fn u8(&mut self) -> Result<u8, CryptoError> {
        Ok(self.raw(1)?[0])
    }

    pub fn u32(&mut self) -> Result<u32, CryptoError> {
        Ok(u32::from_le_bytes(self.raw(4)?.try_into().expect("4 bytes")))
    }

    pub fn u64(&mut self) -> Result<u64, CryptoError> {
        Ok(u64::from_le_bytes(self.raw(8)?.try_into().expect("8 bytes")))
    }

    pub fn bytes(&mut self) -> Result<&'a [u8], CryptoError> {
        let n = self.u32()? as usize;
        self.raw(n)
    }

    pub fn str(&mut self) -> Result<String, CryptoError> {
        String::from_utf8(self.bytes()?.to_vec()).map_err(|_| malformed("invalid UTF-8"))
    }

    pub fn array<const N: usize>(&mut self) -> Result<[u8; N], CryptoError> {
        Ok(self.raw(N)?.try_into().expect("exact length"))
    }

    pub fn end(&self) -> Result<(), CryptoError> {
        if self.pos == self.buf.len() {
            Ok(())
        } else {
            Err(malformed("trailing bytes"))
        }
    }
}

fn header(r: &mut Reader<'_>, kind: u8) -> Result<(), CryptoError> {
    if r.u8()? != WIRE_VERSION {
        return Err(malformed("unsupported version"));
    }
    if r.u8()? != kind {
        return Err(malformed("unexpected record kind"));
    }
    Ok(())
}

pub fn encode_ciphertext(ct: &FieldCiphertext) -> Vec<u8> {
    let mut w = Writer::new();
    w.u8(WIRE_VERSION);
    w.u8(KIND_CIPHERTEXT);
    w.str(ct.aad.owner.as_str());
    w.str(ct.aad.record_id.as_str());
    w.str(ct.field.as_str());
    w.u64(ct.epoch);
    w.u64(ct.aad.timestamp);
    w.raw(&ct.nonce);
    w.bytes(&ct.ciphertext);
    w.finish()
}

pub fn decode_ciphertext(buf: &[u8]) -> Result<FieldCiphertext, CryptoError> {
    let mut r = Reader::new(buf);
    header(&mut r, KIND_CIPHERTEXT)?;
    let owner = OwnerId(r.str()?);
    let record_id = RecordId(r.str()?);
    let field = FieldId(r.str()?);
    let epoch = r.u64()?;
    let timestamp = r.u64()?;
    let nonce = r.array::<24>()?;
    let ciphertext = r.bytes()?.to_vec();
    r.end()?;
    Ok(FieldCiphertext {
        field: field.clone(),
        epoch,
        nonce,
        ciphertext,
        aad: Aad { owner, record_id, field, epoch, timestamp },
    })
}

pub fn encode_grant(g: &KeyGrant) -> Vec<u8> {
    let mut w = Writer::new();
    w.u8(WIRE_VERSION);
    w.u8(KIND_GRANT);
    w.str(g.grantee.as_str());
    w.str(g.owner.as_str());
    w.str(g.field.as_str());
    w.u64(g.epoch_lo);
    w.u64(g.epoch_hi);
    w.u64(g.issued_at);
    match g.expires_at {
        Some(t) => {
            w.u8(1);
            w.u64(t);
        }
        None => w.u8(0),
    }
    match &g.reason {
        GrantReason::Consent => w.u8(0),
        GrantReason::Emergency { rule_id } => {
            w.u8(1);
            w.str(rule_id.as_str());
        }
    }
    w.u32(u32::try_from(g.wrapped.len()).expect("fewer than 2^32 epochs"));
    for sealed in &g.wrapped {
        w.bytes(sealed);
    }
    w.finish()
}

pub fn decode_grant(buf: &[u8]) -> Result<KeyGrant, CryptoError> {
    let mut r = Reader::new(buf);
    header(&mut r, KIND_GRANT)?;
    let grantee = ServiceId(r.str()?);
    let owner = OwnerId(r.str()?);
    let field = FieldId(r.str()?);
    let epoch_lo = r.u64()?;
    let epoch_hi = r.u64()?;
    let issued_at = r.u64()?;
    let expires_at = match r.u8()? {
        0 => None,
        1 => Some(r.u64()?),
        _ => return Err(malformed("expiry flag")),
    };
    let reason = match r.u8()? {
        0 => GrantReason::Consent,
        1 => GrantReason::Emergency { rule_id: RuleId(r.str()?) },
        _ => return Err(malformed("grant reason")),
    };
    let n = r.u32()? as usize;
    let wrapped = (0..n).map(|_| r.bytes().map(<[u8]>::to_vec)).collect::<Result<Vec<_>, _>>()?;
    r.end()?;
    Ok(KeyGrant { grantee, owner, field, epoch_lo, epoch_hi, wrapped, issued_at, expires_at, reason })
}

/// Plaintext keystore encoding; only ever written to disk through `seal_at_rest`.
pub fn encode_keystore(ks: &Keystore) -> zeroize::Zeroizing<Vec<u8>> {
    let mut w = Writer::new();
    w.u8(WIRE_VERSION);
    w.u8(KIND_KEYSTORE);
    w.u32(u32::try_from(ks.len()).expect("fewer than 2^32 keys"));
    for k in ks.iter() {
        w.str(k.owner.as_str());
        w.str(k.field.as_str());
        w.u64(k.epoch);
        w.raw(k.expose_material());
    }
    zeroize::Zeroizing::new(w.finish())
}

pub fn decode_keystore(buf: &[u8]) -> Result<Keystore, CryptoError> {
    let mut r = Reader::new(buf);
    header(&mut r, KIND_KEYSTORE)?;
    let n = r.u32()?;
    let mut ks = Keystore::new();
    for _ in 0..n {
        let owner = OwnerId(r.str()?);
        let field = FieldId(r.str()?);
        let epoch = r.u64()?;
        let material = r.array::<32>()?;
        ks.insert(EpochKey::from_material(owner, field, epoch, material));
    }
    r.end()?;
    Ok(ks)
}
