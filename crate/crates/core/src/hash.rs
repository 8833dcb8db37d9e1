//! 256-bit hash values and the arithmetic needed to compare them with stake thresholds.
//!
//! Every digest in the simulator is SHA-256. The 32 digest bytes are read as
//! a little-endian unsigned integer (byte 0 is least significant), which
//! fixes both the ordering used by the stake check and the "least
//! significant bit" used by modifier selection. Hex strings show the integer
//! most-significant digit first.

use std::cmp::Ordering;
use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};

#[derive(Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct Hash256([u8; 32]);

impl Hash256 {
    pub const ZERO: Self = Self([0; 32]);
    pub const MAX: Self = Self([0xff; 32]);

    pub const fn from_le_bytes(bytes: [u8; 32]) -> Self {
        Self(bytes)
    }

    pub fn to_le_bytes(self) -> [u8; 32] {
        self.0
    }

    pub fn as_le_bytes(&self) -> &[u8; 32] {
        &self.0
    }

    /// Limbs, least significant first.
    pub fn from_limbs(limbs: [u64; 4]) -> Self {
        let mut out = [0u8; 32];
        for (i, limb) in limbs.iter().enumerate() {
            out[i * 8..i * 8 + 8].copy_from_slice(&limb.to_le_bytes());
        }
        Self(out)
    }

    pub fn limbs(&self) -> [u64; 4] {
        let mut limbs = [0u64; 4];
        for (i, limb) in limbs.iter_mut().enumerate() {
            *limb = u64::from_le_bytes(self.0[i * 8..i * 8 + 8].try_into().unwrap());
        }
        limbs
    }

    pub fn from_u64(v: u64) -> Self {
        Self::from_limbs([v, 0, 0, 0])
    }

    pub fn is_zero(&self) -> bool {
        self.0 == [0; 32]
    }

    pub fn bit(&self, i: u32) -> bool {
        (self.0[(i / 8) as usize] >> (i % 8)) & 1 == 1
    }

    pub fn lsb(&self) -> bool {
        self.bit(0)
    }

    /// Low 64 bits of the integer.
    pub fn low_u64(&self) -> u64 {
        self.limbs()[0]
    }

    pub fn to_hex(&self) -> String {
        let mut be = self.0;
        be.reverse();
        hex::encode(be)
    }

    pub fn from_hex(s: &str) -> Result<Self, hex::FromHexError> {
        let mut be = [0u8; 32];
        hex::decode_to_slice(s, &mut be)?;
        be.reverse();
        Ok(Self(be))
    }

    /// Nearest representable value to a non-negative float; saturates at [`Hash256::MAX`].
    pub fn from_f64(x: f64) -> Self {
        if !(x >= 1.0) {
            return Self::ZERO;
        }
        if x >= 2f64.powi(256) {
            return Self::MAX;
        }
        let bits = x.to_bits();
        let exponent = ((bits >> 52) & 0x7ff) as i32 - 1075;
        let mantissa = (bits & ((1u64 << 52) - 1)) | (1u64 << 52);
        let mut wide = [0u64; 8];
        wide[0] = mantissa;
        let wide = if exponent >= 0 {
            shl(wide, exponent as u32)
        } else {
            shr(wide, (-exponent) as u32)
        };
        narrow(wide)
    }

    pub fn to_f64(&self) -> f64 {
        self.limbs()
            .iter()
            .enumerate()
            .map(|(i, &l)| l as f64 * 2f64.powi(64 * i as i32))
            .sum()
    }

    /// `self * m`, saturating at [`Hash256::MAX`].
    pub fn saturating_mul_u64(self, m: u64) -> Self {
        narrow(mul_small(widen(self), m))
    }

    /// `self * num / den` with a 512-bit intermediate, saturating. `den` must be non-zero.
    pub fn mul_div_u64(self, num: u64, den: u64) -> Self {
        assert!(den != 0, "division by zero");
        narrow(div_small(mul_small(widen(self), num), den))
    }

    /// `self * amount * weight / 2^32` with a 512-bit intermediate, saturating.
    ///
    /// `weight` is a fixed-point factor with 32 fractional bits.
    pub fn scale_by(self, amount: u64, weight_fp: u64) -> Self {
        let wide = mul_small(mul_small(widen(self), amount), weight_fp);
        narrow(shr(wide, 32))
    }

    pub fn div_u64(self, d: u64) -> Self {
        narrow(div_small(widen(self), d))
    }
}

fn widen(h: Hash256) -> [u64; 8] {
    let l = h.limbs();
    [l[0], l[1], l[2], l[3], 0, 0, 0, 0]
}

fn narrow(w: [u64; 8]) -> Hash256 {
    if w[4..].iter().any(|&l| l != 0) {
        Hash256::MAX
    } else {
        Hash256::from_limbs([w[0], w[1], w[2], w[3]])
    }
}

/// Multiplication by a single limb. Inputs never exceed 384 bits, so nothing is lost.
fn mul_small(a: [u64; 8], m: u64) -> [u64; 8] {
    let mut out = [0u64; 8];
    let mut carry: u128 = 0;
    for i in 0..8 {
        let t = a[i] as u128 * m as u128 + carry;
        out[i] = t as u64;
        carry = t >> 64;
    }
    debug_assert_eq!(carry, 0);
    out
}

fn div_small(a: [u64; 8], d: u64) -> [u64; 8] {
    let mut out = [0u64; 8];
    let mut rem: u128 = 0;
    for i in (0..8).rev() {
        let cur = (rem << 64) | a[i] as u128;
        out[i] = (cur / d as u128) as u64;
        rem = cur % d as u128;
    }
    out
}

fn shr(a: [u64; 8], bits: u32) -> [u64; 8] {
    let limbs = (bits / 64) as usize;
    let rem = bits % 64;
    let mut out = [0u64; 8];
    for i in 0..8 {
        let src = i + limbs;
        if src >= 8 {
            break;
        }
        let mut v = a[src] >> rem;
        if rem > 0 && src + 1 < 8 {
            v |= a[src + 1] << (64 - rem);
        }
        out[i] = v;
    }
    out
}

fn shl(a: [u64; 8], bits: u32) -> [u64; 8] {
    let limbs = (bits / 64) as usize;
    let rem = bits % 64;
    let mut out = [0u64; 8];
    for i in (0..8).rev() {
        if i < limbs {
            break;
        }
        let src = i - limbs;
        let mut v = a[src] << rem;
        if rem > 0 && src > 0 {
            v |= a[src - 1] >> (64 - rem);
        }
        out[i] = v;
    }
    out
}

impl Ord for Hash256 {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.iter().rev().cmp(other.0.iter().rev())
    }
}

impl PartialOrd for Hash256 {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Debug for Hash256 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Hash256({})", self.to_hex())
    }
}

impl fmt::Display for Hash256 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl Serialize for Hash256 {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for Hash256 {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Hash256::from_hex(&s).map_err(serde::de::Error::custom)
    }
}

/// SHA-256 over the concatenation of `parts`.
pub fn sha256(parts: &[&[u8]]) -> Hash256 {
    let mut hasher = Sha256::new();
    for part in parts {
        hasher.update(part);
    }
    let digest: [u8; 32] = hasher.finalize().into();
    Hash256(digest)
}
