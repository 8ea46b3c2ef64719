//! Key management and the Personal Sign (EIP-191) scheme.
//!
//! Both sides of the toolkit use this module: the scanner signs probe
//! messages with throwaway test identities, and the simulator verifies
//! them the way a production back-end would. Signing is deterministic
//! (RFC 6979 via `k256`), so a scan transcript is reproducible.

use k256::ecdsa::{RecoveryId, Signature, SigningKey, VerifyingKey};
use k256::elliptic_curve::ops::Reduce;
use k256::elliptic_curve::scalar::IsHigh;
use k256::{NonZeroScalar, Scalar, U256};
use sha3::{Digest, Keccak256};

const PERSONAL_PREFIX: &str = "\x19Ethereum Signed Message:\n";

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum CryptoError {
    /// The seed reduces to the zero scalar, which has no key pair.
    #[error("seed reduces to the zero scalar")]
    InvalidSeed,
    #[error("invalid signature: {0}")]
    InvalidSignature(&'static str),
}

/// A 20-byte account identifier (last 20 bytes of the keccak-256 hash of
/// the uncompressed public key).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Address(pub [u8; 20]);

impl Address {
    /// Lowercase hex with `0x` prefix — the wire convention everywhere
    /// except EIP-55 output.
    pub fn to_hex(self) -> String {
        format!("0x{}", hex::encode(self.0))
    }

    /// EIP-55 mixed-case checksum encoding.
    pub fn to_checksum(self) -> String {
        let lower = hex::encode(self.0);
        let digest = hex::encode(keccak256(lower.as_bytes()));
        let mut out = String::with_capacity(42);
        out.push_str("0x");
        for (ch, nibble) in lower.chars().zip(digest.chars()) {
            if ch.is_ascii_alphabetic() && nibble.to_digit(16).unwrap() >= 8 {
                out.push(ch.to_ascii_uppercase());
            } else {
                out.push(ch);
            }
        }
        out
    }

    /// Parses `0x`-prefixed or bare 40-digit hex, any case.
    pub fn from_hex(s: &str) -> Option<Address> {
        let body = s.strip_prefix("0x").unwrap_or(s);
        if body.len() != 40 {
            return None;
        }
        let bytes = hex::decode(body).ok()?;
        let mut out = [0u8; 20];
        out.copy_from_slice(&bytes);
        Some(Address(out))
    }
}

impl std::fmt::Display for Address {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.to_hex())
    }
}

/// EIP-55 checksum form of a 20-byte address.
pub fn to_checksum_address(addr: Address) -> String {
    addr.to_checksum()
}

/// A secp256k1 signing identity. Immutable; clone freely across threads.
#[derive(Clone)]
pub struct KeyPair {
    signing: SigningKey,
    address: Address,
}

impl std::fmt::Debug for KeyPair {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        // never print the secret scalar
        f.debug_struct("KeyPair")
            .field("address", &self.address)
            .finish()
    }
}

impl KeyPair {
    /// Derives a key pair from a 32-byte seed, reducing it into the scalar
    /// field. A seed that reduces to zero has no key and is rejected.
    pub fn from_seed(seed: &[u8; 32]) -> Result<KeyPair, CryptoError> {
        let scalar = <Scalar as Reduce<U256>>::reduce_bytes((*seed).as_slice().into());
        let nz = Option::<NonZeroScalar>::from(NonZeroScalar::new(scalar))
            .ok_or(CryptoError::InvalidSeed)?;
        let signing = SigningKey::from(nz);
        let address = address_of(signing.verifying_key());
        Ok(KeyPair { signing, address })
    }

    pub fn address(&self) -> Address {
        self.address
    }
}

fn address_of(key: &VerifyingKey) -> Address {
    let point = key.to_encoded_point(false);
    let digest = keccak256(&point.as_bytes()[1..]);
    let mut out = [0u8; 20];
    out.copy_from_slice(&digest[12..]);
    Address(out)
}

pub fn keccak256(data: &[u8]) -> [u8; 32] {
    let mut hasher = Keccak256::new();
    hasher.update(data);
    hasher.finalize().into()
}

/// keccak256 of `"\x19Ethereum Signed Message:\n" ‖ len ‖ message`.
pub fn personal_hash(message: &str) -> [u8; 32] {
    let mut data = Vec::with_capacity(PERSONAL_PREFIX.len() + 24 + message.len());
    data.extend_from_slice(PERSONAL_PREFIX.as_bytes());
    data.extend_from_slice(message.len().to_string().as_bytes());
    data.extend_from_slice(message.as_bytes());
    keccak256(&data)
}

/// A recoverable ECDSA signature in the 65-byte `r ‖ s ‖ v` layout with
/// legacy `v ∈ {27, 28}` and canonical (low) `s`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SignatureBundle {
    pub r: [u8; 32],
    pub s: [u8; 32],
    pub v: u8,
}

impl SignatureBundle {
    pub fn encoded(&self) -> [u8; 65] {
        let mut out = [0u8; 65];
        out[..32].copy_from_slice(&self.r);
        out[32..64].copy_from_slice(&self.s);
        out[64] = self.v;
        out
    }

    /// 132-char hex form including the `0x` prefix.
    pub fn to_hex(&self) -> String {
        format!("0x{}", hex::encode(self.encoded()))
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<SignatureBundle, CryptoError> {
        if bytes.len() != 65 {
            return Err(CryptoError::InvalidSignature("length is not 65 bytes"));
        }
        let mut r = [0u8; 32];
        let mut s = [0u8; 32];
        r.copy_from_slice(&bytes[..32]);
        s.copy_from_slice(&bytes[32..64]);
        Ok(SignatureBundle { r, s, v: bytes[64] })
    }

    pub fn from_hex(s: &str) -> Result<SignatureBundle, CryptoError> {
        let body = s.strip_prefix("0x").unwrap_or(s);
        let bytes = hex::decode(body).map_err(|_| CryptoError::InvalidSignature("bad hex"))?;
        SignatureBundle::from_bytes(&bytes)
    }
}

/// Signs a message under EIP-191 with a deterministic (RFC 6979) nonce,
/// so identical inputs always produce identical bundles.
pub fn personal_sign(message: &str, key: &KeyPair) -> SignatureBundle {
    let hash = personal_hash(message);
    let (sig, recovery) = key
        .signing
        .sign_prehash_recoverable(&hash)
        .expect("prehash signing cannot fail for a valid key");
    let bytes = sig.to_bytes();
    let mut r = [0u8; 32];
    let mut s = [0u8; 32];
    r.copy_from_slice(&bytes[..32]);
    s.copy_from_slice(&bytes[32..]);
    SignatureBundle {
        r,
        s,
        v: 27 + recovery.to_byte(),
    }
}

/// Recovers the signer's address from an EIP-191 signature. Rejects
/// `v ∉ {27, 28}` and non-canonical (high) `s` values.
pub fn recover_address(message: &str, sig: &SignatureBundle) -> Result<Address, CryptoError> {
    if sig.v != 27 && sig.v != 28 {
        return Err(CryptoError::InvalidSignature("v must be 27 or 28"));
    }
    let mut compact = [0u8; 64];
    compact[..32].copy_from_slice(&sig.r);
    compact[32..].copy_from_slice(&sig.s);
    let signature = Signature::from_slice(&compact)
        .map_err(|_| CryptoError::InvalidSignature("r or s out of range"))?;
    if signature.s().is_high().into() {
        return Err(CryptoError::InvalidSignature("non-canonical s"));
    }
    let recovery = RecoveryId::from_byte(sig.v - 27)
        .ok_or(CryptoError::InvalidSignature("bad recovery id"))?;
    let hash = personal_hash(message);
    let key = VerifyingKey::recover_from_prehash(&hash, &signature, recovery)
        .map_err(|_| CryptoError::InvalidSignature("no point recovers"))?;
    Ok(address_of(&key))
}

/// A deterministic pool of test identities derived from one u64 seed.
/// The scanner needs at least two distinct addresses; scans share the
/// pool read-only.
#[derive(Debug, Clone)]
pub struct KeypairPool {
    keys: Vec<KeyPair>,
}

impl KeypairPool {
    pub fn from_seed(seed: u64, count: usize) -> KeypairPool {
        let mut keys = Vec::with_capacity(count);
        let mut index = 0u64;
        while keys.len() < count {
            let mut material = Vec::with_capacity(16);
            material.extend_from_slice(&seed.to_be_bytes());
            material.extend_from_slice(&index.to_be_bytes());
            index += 1;
            // keccak output is uniform; a zero reduction is astronomically
            // unlikely but skipped rather than unwrapped
            if let Ok(key) = KeyPair::from_seed(&keccak256(&material)) {
                keys.push(key);
            }
        }
        KeypairPool { keys }
    }

    pub fn key(&self, index: usize) -> &KeyPair {
        &self.keys[index % self.keys.len()]
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn key_from_int(n: u8) -> KeyPair {
        let mut seed = [0u8; 32];
        seed[31] = n;
        KeyPair::from_seed(&seed).unwrap()
    }

    pub(crate) const SAMPLE_MESSAGE: &str = "Welcome to Harborview!\n\nSigning is free and will not submit a blockchain transaction.\nSign in to accept the Harborview Terms of Service:\nhttps://harborview.example/tos\n\nYour session resets after 24 hours.\n\nWallet address: 0x36e7c6feb20a90b07f63863d09cc12c4c9f39064\nNonce: 66ffb8f1-5eb1-4477-9558-36a60eb1b51f";

    #[test]
    fn zero_seed_is_rejected() {
        assert_eq!(
            KeyPair::from_seed(&[0u8; 32]).unwrap_err(),
            CryptoError::InvalidSeed
        );
    }

    #[test]
    fn seed_derivation_is_deterministic() {
        let a = key_from_int(7);
        let b = key_from_int(7);
        assert_eq!(a.address(), b.address());
    }

    #[test]
    fn address_matches_reference_derivation() {
        // frozen from an independent keccak + secp256k1 oracle
        let key = key_from_int(1);
        assert_eq!(
            key.address().to_hex(),
            "0x7e5f4552091a69125d5dfcb7b8c2659029395bdf"
        );
        assert_eq!(
            key.address().to_checksum(),
            "0x7E5F4552091A69125d5DfCb7b8C2659029395Bdf"
        );
    }

    #[test]
    fn personal_sign_matches_reference_oracle() {
        // frozen from the independent RFC 6979 + EIP-191 oracle
        let sig = personal_sign(SAMPLE_MESSAGE, &key_from_int(1));
        assert_eq!(
            sig.to_hex(),
            "0xfb6868386525ad9d0105c8f1c4aee16ccf9e6c54cb8316078f0f64136300422354b6c13e294ca13a16a21e10d8c16f3ed9e1d06734f2da96871a6427fe2786ee1c"
        );
        assert_eq!(sig.encoded().len(), 65);
        assert_eq!(sig.to_hex().len(), 132);
    }

    #[test]
    fn personal_sign_matches_wallet_produced_vector() {
        // signature produced by a real wallet for ("test", this key)
        let seed: [u8; 32] =
            hex::decode("65860affb4b570dba06db294aa7c676f68e04a5bf2721243ad3cbc05a79c68c0")
                .unwrap()
                .try_into()
                .unwrap();
        let key = KeyPair::from_seed(&seed).unwrap();
        assert_eq!(
            key.address().to_checksum(),
            "0x11E807fcc88dD319270493fB2e822e388Fe36ab0"
        );
        let sig = personal_sign("test", &key);
        assert_eq!(
            sig.to_hex(),
            "0x724fc31d9272b34d8406e2e3a12a182e72510b008de6cc44684577e31e20d9626fb760d6a0badd79a6cf4cd56b2fc0fbd60c438b809aa7d29bfb598c13e7b50e1b"
        );
    }

    #[test]
    fn signing_is_reproducible() {
        let key = key_from_int(42);
        assert_eq!(personal_sign("hello", &key), personal_sign("hello", &key));
    }

    #[test]
    fn recover_roundtrip() {
        let key = key_from_int(9);
        let sig = personal_sign("roundtrip", &key);
        assert_eq!(recover_address("roundtrip", &sig).unwrap(), key.address());
    }

    #[test]
    fn tampered_message_recovers_other_address() {
        let key = key_from_int(9);
        let sig = personal_sign("payload", &key);
        // failing to recover at all also binds the message
        if let Ok(addr) = recover_address("payl0ad", &sig) {
            assert_ne!(addr, key.address());
        }
    }

    #[test]
    fn v_outside_legacy_range_is_rejected() {
        let key = key_from_int(9);
        let mut sig = personal_sign("x", &key);
        sig.v = 2;
        assert!(matches!(
            recover_address("x", &sig),
            Err(CryptoError::InvalidSignature(_))
        ));
    }

    #[test]
    fn high_s_is_rejected() {
        // order - s of a valid signature is the non-canonical twin
        const ORDER: [u8; 32] = [
            0xff, 0xff, 0xff, 0xff, 0xff, 0xff, 0xff, 0xff, 0xff, 0xff, 0xff, 0xff, 0xff, 0xff,
            0xff, 0xfe, 0xba, 0xae, 0xdc, 0xe6, 0xaf, 0x48, 0xa0, 0x3b, 0xbf, 0xd2, 0x5e, 0x8c,
            0xd0, 0x36, 0x41, 0x41,
        ];
        let key = key_from_int(9);
        let mut sig = personal_sign("x", &key);
        let mut borrow = 0i16;
        let mut high = [0u8; 32];
        for i in (0..32).rev() {
            let d = ORDER[i] as i16 - sig.s[i] as i16 - borrow;
            borrow = if d < 0 { 1 } else { 0 };
            high[i] = (d + if d < 0 { 256 } else { 0 }) as u8;
        }
        sig.s = high;
        sig.v = if sig.v == 27 { 28 } else { 27 };
        assert_eq!(
            recover_address("x", &sig),
            Err(CryptoError::InvalidSignature("non-canonical s"))
        );
    }

    #[test]
    fn prefix_binds_personal_sign_domain() {
        // a personal_sign signature must not verify as a raw signature of
        // keccak256(message)
        let key = key_from_int(3);
        let sig = personal_sign("bind me", &key);
        let raw_hash = keccak256(b"bind me");
        let mut compact = [0u8; 64];
        compact[..32].copy_from_slice(&sig.r);
        compact[32..].copy_from_slice(&sig.s);
        let signature = Signature::from_slice(&compact).unwrap();
        let recovery = RecoveryId::from_byte(sig.v - 27).unwrap();
        if let Ok(k) = VerifyingKey::recover_from_prehash(&raw_hash, &signature, recovery) {
            assert_ne!(address_of(&k), key.address());
        }
    }

    #[test]
    fn checksum_of_sample_address_matches_oracle() {
        let addr = Address::from_hex("0x36e7c6feb20a90b07f63863d09cc12c4c9f39064").unwrap();
        // frozen from the independent EIP-55 oracle
        assert_eq!(
            addr.to_checksum(),
            "0x36E7C6FeB20A90b07F63863D09cC12C4c9f39064"
        );
    }

    #[test]
    fn checksum_zero_address_keeps_digits() {
        let addr = Address([0u8; 20]);
        assert_eq!(addr.to_checksum(), format!("0x{}", "0".repeat(40)));
    }

    #[test]
    fn checksum_is_idempotent_over_case() {
        let addr = Address::from_hex("0x36E7C6FeB20A90b07F63863D09cC12C4c9f39064").unwrap();
        let lower = Address::from_hex(&addr.to_hex()).unwrap();
        assert_eq!(addr.to_checksum(), lower.to_checksum());
    }

    #[test]
    fn eip55_reference_vectors() {
        for (lower, expect) in [
            (
                "0x5aaeb6053f3e94c9b9a09f33669435e7ef1beaed",
                "0x5aAeb6053F3E94C9b9A09f33669435E7Ef1BeAed",
            ),
            (
                "0xfb6916095ca1df60bb79ce92ce3ea74c37c5d359",
                "0xfB6916095ca1df60bB79Ce92cE3Ea74c37c5d359",
            ),
        ] {
            assert_eq!(Address::from_hex(lower).unwrap().to_checksum(), expect);
        }
    }

    #[test]
    fn pool_is_deterministic_and_distinct() {
        let a = KeypairPool::from_seed(1234, 4);
        let b = KeypairPool::from_seed(1234, 4);
        for i in 0..4 {
            assert_eq!(a.key(i).address(), b.key(i).address());
        }
        assert_ne!(a.key(0).address(), a.key(1).address());
    }
}
