//! Fixed-length binary vectors.
//!
//! Coordinate 0 is stored in the most significant used bit, so the derived
//! ordering of two vectors of equal length is lexicographic by coordinate.
//! That ordering is the canonical order for states of the world and for
//! assignment cells.

use std::fmt;
use std::str::FromStr;

use crate::error::Error;

pub const MAX_BITS: usize = 64;

#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct Bits {
    len: u8,
    word: u64,
}

impl Bits {
    pub fn zeros(len: usize) -> Self {
        assert!(len <= MAX_BITS, "bit vector longer than {MAX_BITS}");
        Bits { len: len as u8, word: 0 }
    }

    pub fn ones(len: usize) -> Self {
        let mut b = Bits::zeros(len);
        b.word = low_mask(len);
        b
    }

    /// The `rank`-th vector of length `len` in lexicographic order.
    pub fn from_rank(len: usize, rank: u64) -> Self {
        assert!(len <= MAX_BITS);
        debug_assert!(len == 64 || rank < (1u64 << len));
        Bits { len: len as u8, word: rank }
    }

    pub fn from_bools(values: &[bool]) -> Self {
        let mut b = Bits::zeros(values.len());
        for (k, &v) in values.iter().enumerate() {
            b.set(k, v);
        }
        b
    }

    pub fn len(&self) -> usize {
        self.len as usize
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Lexicographic rank, i.e. the packed word.
    pub fn rank(&self) -> u64 {
        self.word
    }

    fn shift(&self, k: usize) -> usize {
        assert!(k < self.len(), "coordinate {k} out of range for length {}", self.len);
        self.len() - 1 - k
    }

    pub fn get(&self, k: usize) -> bool {
        (self.word >> self.shift(k)) & 1 == 1
    }

    pub fn set(&mut self, k: usize, value: bool) {
        let s = self.shift(k);
        if value {
            self.word |= 1 << s;
        } else {
            self.word &= !(1 << s);
        }
    }

    pub fn with(mut self, k: usize, value: bool) -> Self {
        self.set(k, value);
        self
    }

    /// Drops coordinate `k`, shifting later coordinates down by one.
    pub fn remove(&self, k: usize) -> Bits {
        let s = self.shift(k);
        let high = (self.word >> (s + 1)) << s;
        let low = self.word & low_mask(s);
        Bits { len: self.len - 1, word: high | low }
    }

    /// Inserts `value` so that it becomes coordinate `k`.
    pub fn insert(&self, k: usize, value: bool) -> Bits {
        assert!(k <= self.len());
        assert!(self.len() < MAX_BITS);
        let s = self.len() - k;
        let high = (self.word >> s) << (s + 1);
        let low = self.word & low_mask(s);
        Bits { len: self.len + 1, word: high | ((value as u64) << s) | low }
    }

    pub fn count_ones(&self) -> usize {
        self.word.count_ones() as usize
    }

    /// Zeroes every coordinate where `keep` is false.
    pub fn mask(&self, keep: &Bits) -> Bits {
        assert_eq!(self.len, keep.len);
        Bits { len: self.len, word: self.word & keep.word }
    }

    pub fn iter(&self) -> impl Iterator<Item = bool> + '_ {
        (0..self.len()).map(move |k| self.get(k))
    }

    pub fn ones_positions(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.len()).filter(move |&k| self.get(k))
    }

    /// All vectors of length `len` in lexicographic order.
    pub fn all(len: usize) -> impl Iterator<Item = Bits> {
        assert!(len < MAX_BITS);
        (0..(1u64 << len)).map(move |r| Bits::from_rank(len, r))
    }
}

fn low_mask(n: usize) -> u64 {
    if n >= 64 {
        u64::MAX
    } else {
        (1u64 << n) - 1
    }
}

impl fmt::Display for Bits {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for v in self.iter() {
            f.write_str(if v { "1" } else { "0" })?;
        }
        Ok(())
    }
}

impl fmt::Debug for Bits {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Bits({self})")
    }
}

impl FromStr for Bits {
    type Err = Error;

    /// Parses a string of `0`/`1` characters; the empty string is the empty vector.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.len() > MAX_BITS {
            return Err(Error::invalid(format!("bit string longer than {MAX_BITS}: {s}")));
        }
        let mut b = Bits::zeros(s.len());
        for (k, c) in s.chars().enumerate() {
            match c {
                '0' => {}
                '1' => b.set(k, true),
                other => return Err(Error::invalid(format!("bad bit character {other:?} in {s:?}"))),
            }
        }
        Ok(b)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn lexicographic_rank_order() {
        let all: Vec<String> = Bits::all(2).map(|b| b.to_string()).collect();
        assert_eq!(all, ["00", "01", "10", "11"]);
        assert!(Bits::from_bools(&[false, true, true]) < Bits::from_bools(&[true, false, false]));
    }

    #[test]
    fn remove_and_insert() {
        let b: Bits = "10110".parse().unwrap();
        assert_eq!(b.remove(0).to_string(), "0110");
        assert_eq!(b.remove(2).to_string(), "1010");
        assert_eq!(b.remove(4).to_string(), "1011");
        assert_eq!(b.remove(2).insert(2, true), b);
        assert_eq!(Bits::zeros(0).insert(0, true).to_string(), "1");
    }

    #[test]
    fn rejects_garbage() {
        assert!("10x".parse::<Bits>().is_err());
    }

    proptest! {
        #[test]
        fn insert_inverts_remove(word in any::<u64>(), len in 1usize..40, k in 0usize..40) {
            let k = k % len;
            let b = Bits::from_rank(len, word & low_mask(len));
            prop_assert_eq!(b.remove(k).insert(k, b.get(k)), b);
            prop_assert_eq!(b.to_string().parse::<Bits>().unwrap(), b);
        }
    }
}
