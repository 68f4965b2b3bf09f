//! Fixed-width bit arrays used for net markings and transition masks.
//!
//! Bit `i` stands for place `i`. Storage is normalised (no trailing zero
//! words), so two markings compare equal iff they mark the same places,
//! independent of the width they were built for.

use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct Marking {
    words: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MarkingError {
    #[error("state is {actual} bytes, expected {expected}")]
    WrongLength { expected: usize, actual: usize },
    #[error("state marks place {place} beyond width {width}")]
    OutOfRange { place: usize, width: usize },
}

/// Number of bytes needed to carry `width` bits.
pub fn byte_len(width: usize) -> usize {
    width.div_ceil(8).max(1)
}

impl Marking {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn singleton(place: usize) -> Self {
        let mut m = Self::empty();
        m.insert(place);
        m
    }

    pub fn from_places<I: IntoIterator<Item = usize>>(places: I) -> Self {
        let mut m = Self::empty();
        for p in places {
            m.insert(p);
        }
        m
    }

    pub fn contains(&self, place: usize) -> bool {
        self.words
            .get(place / 64)
            .is_some_and(|w| w & (1u64 << (place % 64)) != 0)
    }

    /// Sets the bit for `place`; returns false if it was already set.
    pub fn insert(&mut self, place: usize) -> bool {
        let idx = place / 64;
        if self.words.len() <= idx {
            self.words.resize(idx + 1, 0);
        }
        let bit = 1u64 << (place % 64);
        let fresh = self.words[idx] & bit == 0;
        self.words[idx] |= bit;
        fresh
    }

    pub fn remove(&mut self, place: usize) {
        if let Some(w) = self.words.get_mut(place / 64) {
            *w &= !(1u64 << (place % 64));
        }
        self.normalise();
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn count(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    /// True iff every bit of `mask` is set in `self`.
    pub fn covers(&self, mask: &Marking) -> bool {
        mask.words
            .iter()
            .enumerate()
            .all(|(i, m)| self.words.get(i).copied().unwrap_or(0) & m == *m)
    }

    pub fn is_subset(&self, other: &Marking) -> bool {
        other.covers(self)
    }

    pub fn intersects(&self, other: &Marking) -> bool {
        self.words.iter().zip(&other.words).any(|(a, b)| a & b != 0)
    }

    pub fn union(&self, other: &Marking) -> Marking {
        let len = self.words.len().max(other.words.len());
        let words = (0..len)
            .map(|i| self.words.get(i).copied().unwrap_or(0) | other.words.get(i).copied().unwrap_or(0))
            .collect();
        Marking { words }
    }

    pub fn difference(&self, other: &Marking) -> Marking {
        let mut words: Vec<u64> = self
            .words
            .iter()
            .enumerate()
            .map(|(i, w)| w & !other.words.get(i).copied().unwrap_or(0))
            .collect();
        while words.last() == Some(&0) {
            words.pop();
        }
        Marking { words }
    }

    /// `(self \ consume) ∪ produce`, without any enablement check.
    pub fn fire(&self, consume: &Marking, produce: &Marking) -> Marking {
        self.difference(consume).union(produce)
    }

    pub fn places(&self) -> impl Iterator<Item = usize> + '_ {
        self.words.iter().enumerate().flat_map(|(i, w)| {
            let w = *w;
            (0..64).filter(move |b| w & (1u64 << b) != 0).map(move |b| i * 64 + b)
        })
    }

    /// Highest marked place plus one; zero for the empty marking.
    pub fn span(&self) -> usize {
        self.places().last().map_or(0, |p| p + 1)
    }

    /// Big-endian encoding of the bit vector as an unsigned integer, padded
    /// to `byte_len(width)` bytes. Place 0 is the least significant bit.
    pub fn to_bytes(&self, width: usize) -> Vec<u8> {
        let n = byte_len(width);
        let mut out = vec![0u8; n];
        for p in self.places() {
            debug_assert!(p < width.max(1), "place {p} outside width {width}");
            let byte = p / 8;
            if byte < n {
                out[n - 1 - byte] |= 1 << (p % 8);
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], width: usize) -> Result<Self, MarkingError> {
        let n = byte_len(width);
        if bytes.len() != n {
            return Err(MarkingError::WrongLength { expected: n, actual: bytes.len() });
        }
        let mut m = Marking::empty();
        for (i, b) in bytes.iter().rev().enumerate() {
            for bit in 0..8 {
                if b & (1 << bit) != 0 {
                    let place = i * 8 + bit;
                    if place >= width {
                        return Err(MarkingError::OutOfRange { place, width });
                    }
                    m.insert(place);
                }
            }
        }
        Ok(m)
    }

    pub fn to_hex(&self, width: usize) -> String {
        hex::encode(self.to_bytes(width))
    }

    fn normalise(&mut self) {
        while self.words.last() == Some(&0) {
            self.words.pop();
        }
    }
}

impl fmt::Debug for Marking {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_set().entries(self.places()).finish()
    }
}

impl Serialize for Marking {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(self.places())
    }
}

impl<'de> Deserialize<'de> for Marking {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let places = Vec::<usize>::deserialize(d)?;
        Ok(Marking::from_places(places))
    }
}
