use ed25519_dalek::Signer;
use serde::{Deserialize, Serialize};
use std::fmt;
use zeroize::Zeroizing;

use crate::rng::CryptoRngCore;

/// X25519 public key that grants and log entries are sealed to.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct SealingPublicKey(pub [u8; 32]);

impl SealingPublicKey {
    pub fn seal<R: CryptoRngCore>(&self, rng: &mut R, plaintext: &[u8]) -> Vec<u8> {
        crypto_box::PublicKey::from(self.0)
            .seal(rng, plaintext)
            .expect("sealing an in-memory buffer cannot fail")
    }
}

#[derive(Clone)]
pub struct SealingSecretKey(Zeroizing<[u8; 32]>);

impl SealingSecretKey {
    pub fn from_bytes(bytes: [u8; 32]) -> Self {
        Self(Zeroizing::new(bytes))
    }

    pub fn public_key(&self) -> SealingPublicKey {
        SealingPublicKey(*crypto_box::SecretKey::from(*self.0).public_key().as_bytes())
    }

    pub fn unseal(&self, sealed: &[u8]) -> Option<Vec<u8>> {
        crypto_box::SecretKey::from(*self.0).unseal(sealed).ok()
    }

    pub fn expose_bytes(&self) -> &[u8; 32] {
        &self.0
    }
}

impl fmt::Debug for SealingSecretKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "SealingSecretKey({:?})", self.public_key())
    }
}

#[derive(Debug, Clone)]
pub struct SealingKeyPair {
    pub public: SealingPublicKey,
    pub secret: SealingSecretKey,
}

impl SealingKeyPair {
    pub fn generate<R: CryptoRngCore>(rng: &mut R) -> Self {
        let sk = crypto_box::SecretKey::generate(rng);
        let secret = SealingSecretKey::from_bytes(sk.to_bytes());
        Self { public: secret.public_key(), secret }
    }

    pub fn from_secret(secret: SealingSecretKey) -> Self {
        Self { public: secret.public_key(), secret }
    }
}

/// Ed25519 verification key.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct SigningPublicKey(pub [u8; 32]);

#[derive(Clone)]
pub struct SigningKeyPair {
    key: ed25519_dalek::SigningKey,
}

impl fmt::Debug for SigningKeyPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "SigningKeyPair({:?})", self.public())
    }
}

impl SigningKeyPair {
    pub fn generate<R: CryptoRngCore>(rng: &mut R) -> Self {
        Self { key: ed25519_dalek::SigningKey::generate(rng) }
    }

    pub fn from_secret_bytes(bytes: &[u8; 32]) -> Self {
        Self { key: ed25519_dalek::SigningKey::from_bytes(bytes) }
    }

    pub fn expose_secret_bytes(&self) -> Zeroizing<[u8; 32]> {
        Zeroizing::new(self.key.to_bytes())
    }

    pub fn public(&self) -> SigningPublicKey {
        SigningPublicKey(self.key.verifying_key().to_bytes())
    }

    pub fn sign(&self, msg: &[u8]) -> Signature {
        Signature(self.key.sign(msg).to_bytes())
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Signature(pub [u8; 64]);

impl fmt::Debug for Signature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Signature({}..)", &hex::encode(self.0)[..16])
    }
}

pub fn sign(key: &SigningKeyPair, msg: &[u8]) -> Signature {
    key.sign(msg)
}

/// Never panics or errors: malformed keys or signatures simply fail verification.
pub fn verify(pk: &SigningPublicKey, msg: &[u8], sig: &Signature) -> bool {
    PreparedVerifier::new(pk).verify(msg, sig)
}

/// A public key decompressed once, for verifying many signatures.
pub struct PreparedVerifier(Option<ed25519_dalek::VerifyingKey>);

impl PreparedVerifier {
    pub fn new(pk: &SigningPublicKey) -> Self {
        Self(ed25519_dalek::VerifyingKey::from_bytes(&pk.0).ok())
    }

    pub fn verify(&self, msg: &[u8], sig: &Signature) -> bool {
        self.0
            .as_ref()
            .is_some_and(|vk| vk.verify_strict(msg, &ed25519_dalek::Signature::from_bytes(&sig.0)).is_ok())
    }
}

macro_rules! hex_bytes {
    ($name:ident, $n:expr) => {
        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&hex::encode(self.0))
            }
        }

        impl std::str::FromStr for $name {
            type Err = String;

            fn from_str(s: &str) -> Result<Self, Self::Err> {
                let mut out = [0u8; $n];
                hex::decode_to_slice(s, &mut out).map_err(|e| format!("{}: {e}", stringify!($name)))?;
                Ok(Self(out))
            }
        }

        impl TryFrom<String> for $name {
            type Error = String;

            fn try_from(s: String) -> Result<Self, Self::Error> {
                s.parse()
            }
        }

        impl From<$name> for String {
            fn from(k: $name) -> String {
                k.to_string()
            }
        }
    };
}

hex_bytes!(SealingPublicKey, 32);
hex_bytes!(SigningPublicKey, 32);
hex_bytes!(Signature, 64);

impl fmt::Debug for SealingPublicKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "SealingPublicKey({}..)", &self.to_string()[..12])
    }
}

impl fmt::Debug for SigningPublicKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "SigningPublicKey({}..)", &self.to_string()[..12])
    }
}

/// Roles a key file can be generated for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KeyRole {
    Owner,
    Service,
    Platform,
    Ttp,
}

/// On-disk key material for one principal. Owners and services get a sealing
/// pair; platforms and TTPs get a signing pair.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KeyFile {
    pub role: KeyRole,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sealing_public: Option<SealingPublicKey>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sealing_secret: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub signing_public: Option<SigningPublicKey>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub signing_secret: Option<String>,
}

impl KeyFile {
    pub fn generate<R: CryptoRngCore>(rng: &mut R, role: KeyRole) -> Self {
        let mut file = KeyFile { role, sealing_public: None, sealing_secret: None, signing_public: None, signing_secret: None };
        match role {
            KeyRole::Owner | KeyRole::Service => {
                let kp = SealingKeyPair::generate(rng);
                file.sealing_public = Some(kp.public);
                file.sealing_secret = Some(hex::encode(kp.secret.expose_bytes()));
            }
            KeyRole::Platform | KeyRole::Ttp => {
                let kp = SigningKeyPair::generate(rng);
                file.signing_public = Some(kp.public());
                file.signing_secret = Some(hex::encode(kp.expose_secret_bytes().as_ref()));
            }
        }
        file
    }

    pub fn sealing(&self) -> Option<SealingKeyPair> {
        let mut bytes = [0u8; 32];
        hex::decode_to_slice(self.sealing_secret.as_ref()?, &mut bytes).ok()?;
        Some(SealingKeyPair::from_secret(SealingSecretKey::from_bytes(bytes)))
    }

    pub fn signing(&self) -> Option<SigningKeyPair> {
        let mut bytes = Zeroizing::new([0u8; 32]);
        hex::decode_to_slice(self.signing_secret.as_ref()?, bytes.as_mut()).ok()?;
        Some(SigningKeyPair::from_secret_bytes(&bytes))
    }

    /// The same file with secrets removed, suitable for publishing.
    pub fn public_only(&self) -> Self {
        Self { sealing_secret: None, signing_secret: None, ..self.clone() }
    }
}
