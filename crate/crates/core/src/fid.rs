//! Link identifiers and forwarding identifiers.
//!
//! Every directed link carries an m-bit [`LinkId`]. A path or tree is encoded
//! as the bitwise OR of the ids of its links, giving a [`Fid`] that travels in
//! the packet header. A node forwards a packet on an attached link iff all of
//! that link's bits are present in the FID, so no routing state is needed.
//!
//! Two assignment modes exist: `exact` gives each link a unique single bit
//! (no false positives, width must cover every link) and `bloom` sets `k`
//! random bits per link (fixed width, some false positives).

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::simkernel::substream;

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum FidError {
    #[error("width mismatch: {0} bits vs {1} bits")]
    WidthMismatch(usize, usize),
    #[error("exact mode needs one bit per directed link: {links} links > m = {m}")]
    Capacity { links: usize, m: usize },
    #[error("invalid FID parameters: m = {m}, k = {k} (need 1 <= k < m)")]
    InvalidParams { m: usize, k: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FidMode {
    Exact,
    Bloom,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FidConfig {
    pub m: usize,
    pub k: usize,
    pub mode: FidMode,
}

impl Default for FidConfig {
    fn default() -> Self {
        FidConfig {
            m: 256,
            k: 5,
            mode: FidMode::Exact,
        }
    }
}

impl FidConfig {
    pub fn bloom(m: usize, k: usize) -> Self {
        FidConfig {
            m,
            k,
            mode: FidMode::Bloom,
        }
    }

    pub fn exact(m: usize) -> Self {
        FidConfig {
            m,
            k: 1,
            mode: FidMode::Exact,
        }
    }

    pub fn validate(&self, directed_links: usize) -> Result<(), FidError> {
        if self.k < 1 || self.k >= self.m {
            return Err(FidError::InvalidParams {
                m: self.m,
                k: self.k,
            });
        }
        if self.mode == FidMode::Exact && directed_links > self.m {
            return Err(FidError::Capacity {
                links: directed_links,
                m: self.m,
            });
        }
        Ok(())
    }
}

/// Fixed-width bit vector.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Bits {
    width: usize,
    words: Vec<u64>,
}

impl Bits {
    pub fn zeros(width: usize) -> Self {
        Bits {
            width,
            words: vec![0; width.div_ceil(64)],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn set(&mut self, bit: usize) {
        assert!(bit < self.width, "bit {bit} out of range {}", self.width);
        self.words[bit / 64] |= 1 << (bit % 64);
    }

    pub fn get(&self, bit: usize) -> bool {
        bit < self.width && self.words[bit / 64] & (1 << (bit % 64)) != 0
    }

    pub fn count_ones(&self) -> u32 {
        self.words.iter().map(|w| w.count_ones()).sum()
    }

    pub fn is_zero(&self) -> bool {
        self.words.iter().all(|&w| w == 0)
    }

    pub fn ones(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.width).filter(move |&b| self.get(b))
    }

    fn or_assign(&mut self, other: &Bits) {
        for (a, b) in self.words.iter_mut().zip(&other.words) {
            *a |= b;
        }
    }

    /// True iff every bit of `self` is also set in `other`.
    fn subset_of(&self, other: &Bits) -> bool {
        self.words
            .iter()
            .zip(&other.words)
            .all(|(a, b)| a & b == *a)
    }

    /// Lowercase hex, most significant word first.
    pub fn to_hex(&self) -> String {
        self.words
            .iter()
            .rev()
            .map(|w| format!("{w:016x}"))
            .collect()
    }
}

impl fmt::Debug for Bits {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Bits[{}]{{", self.width)?;
        for (i, b) in self.ones().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{b}")?;
        }
        write!(f, "}}")
    }
}

/// Membership token of one directed link.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct LinkId {
    pub bits: Bits,
    pub link_index: usize,
}

/// Forwarding identifier carried in packet headers.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Fid {
    pub bits: Bits,
}

impl Fid {
    pub fn zero(m: usize) -> Self {
        Fid {
            bits: Bits::zeros(m),
        }
    }

    pub fn width(&self) -> usize {
        self.bits.width()
    }

    pub fn is_zero(&self) -> bool {
        self.bits.is_zero()
    }

    pub fn to_hex(&self) -> String {
        self.bits.to_hex()
    }
}

/// Assigns an id to each of `n_links` directed links (index order).
pub fn assign_link_ids(
    n_links: usize,
    config: &FidConfig,
    seed: u64,
) -> Result<Vec<LinkId>, FidError> {
    config.validate(n_links)?;
    match config.mode {
        FidMode::Exact => Ok((0..n_links)
            .map(|i| {
                let mut bits = Bits::zeros(config.m);
                bits.set(i);
                LinkId {
                    bits,
                    link_index: i,
                }
            })
            .collect()),
        FidMode::Bloom => {
            let mut rng = substream(seed, "fid.link_ids");
            Ok((0..n_links)
                .map(|i| {
                    let mut bits = Bits::zeros(config.m);
                    while (bits.count_ones() as usize) < config.k {
                        bits.set(rng.random_range(0..config.m));
                    }
                    LinkId {
                        bits,
                        link_index: i,
                    }
                })
                .collect())
        }
    }
}

/// Encodes a path (or any link set) as the OR of its link ids.
pub fn encode_path<'a, I>(m: usize, link_ids: I) -> Result<Fid, FidError>
where
    I: IntoIterator<Item = &'a LinkId>,
{
    let mut fid = Fid::zero(m);
    for lid in link_ids {
        if lid.bits.width() != m {
            return Err(FidError::WidthMismatch(m, lid.bits.width()));
        }
        fid.bits.or_assign(&lid.bits);
    }
    Ok(fid)
}

/// The forwarding test: `(fid & lid) == lid`.
pub fn should_forward(fid: &Fid, lid: &LinkId) -> bool {
    debug_assert_eq!(fid.width(), lid.bits.width());
    fid.width() == lid.bits.width() && lid.bits.subset_of(&fid.bits)
}

/// Merges FIDs into one tree FID (bitwise OR).
pub fn combine_trees<'a, I>(m: usize, fids: I) -> Result<Fid, FidError>
where
    I: IntoIterator<Item = &'a Fid>,
{
    let mut out = Fid::zero(m);
    for f in fids {
        if f.width() != m {
            return Err(FidError::WidthMismatch(m, f.width()));
        }
        out.bits.or_assign(&f.bits);
    }
    Ok(out)
}

/// Probability that a non-member link passes the test after `n` links of `k`
/// bits each were OR-ed into an `m`-bit filter: `(1 - (1 - 1/m)^(k n))^k`.
pub fn false_positive_rate(m: usize, k: usize, n: usize) -> f64 {
    if n == 0 || m == 0 {
        return 0.0;
    }
    let p_zero = (1.0 - 1.0 / m as f64).powf((k * n) as f64);
    (1.0 - p_zero).powi(k as i32)
}
