//! Static-table rANS with a 64-bit state and byte-wise renormalization.
//!
//! The encoder consumes symbols in reverse decode order and the finished
//! stream stores the final state first, so the decoder reads bytes forward.

use std::collections::BinaryHeap;

use crate::error::{Error, Result};

/// Default table precision: `m = 2^14`.
pub const PRECISION_BITS: u32 = 14;
/// Lower bound of the normalized state interval `[L, 2^8·L)`.
pub const RANS_L: u64 = 1 << 32;

/// Quantized frequencies over the alphabet `lo ..= lo + len − 1`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FrequencyTable {
    pub precision_bits: u32,
    pub lo: i64,
    /// `l_s`, all ≥ 1, summing to `m`.
    pub freqs: Vec<u32>,
    /// `b_s`; `cum[0] = 0`, `cum[len] = m`.
    pub cum: Vec<u32>,
}

impl FrequencyTable {
    pub fn total(&self) -> u32 {
        1 << self.precision_bits
    }

    pub fn hi(&self) -> i64 {
        self.lo + self.freqs.len() as i64 - 1
    }

    pub fn len(&self) -> usize {
        self.freqs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.freqs.is_empty()
    }

    /// Index of a symbol value, if it is in the alphabet.
    pub fn index(&self, symbol: i64) -> Option<usize> {
        let i = symbol.checked_sub(self.lo)?;
        (0..self.freqs.len() as i64)
            .contains(&i)
            .then_some(i as usize)
    }

    /// Table from explicit frequencies, which must sum to `2^precision_bits`.
    pub fn from_freqs(lo: i64, freqs: Vec<u32>, precision_bits: u32) -> Result<Self> {
        if !(1..=16).contains(&precision_bits) {
            return Err(Error::InvalidArgument(format!(
                "precision {precision_bits} outside 1..=16"
            )));
        }
        if freqs.is_empty() || freqs.contains(&0) {
            return Err(Error::InvalidArgument(
                "frequencies must be non-empty and positive".into(),
            ));
        }
        let mut cum = Vec::with_capacity(freqs.len() + 1);
        let mut acc = 0u64;
        cum.push(0);
        for &f in &freqs {
            acc += f as u64;
            cum.push(acc.min(u32::MAX as u64) as u32);
        }
        if acc != 1u64 << precision_bits {
            return Err(Error::InvalidArgument(format!(
                "frequencies sum to {acc}, expected {}",
                1u64 << precision_bits
            )));
        }
        Ok(Self {
            precision_bits,
            lo,
            freqs,
            cum,
        })
    }

    /// Symbol index whose interval holds `slot` (binary search on `b`).
    pub fn find(&self, slot: u32) -> usize {
        self.cum.partition_point(|&c| c <= slot) - 1
    }

    /// Cost of coding `symbol` in bits, `−log2(l_s/m)`.
    pub fn cost_bits(&self, symbol: i64) -> Option<f64> {
        let i = self.index(symbol)?;
        Some(self.precision_bits as f64 - (self.freqs[i] as f64).log2())
    }
}

/// Largest-remainder quantization of `pmf` (over symbols `lo..`) to integer
/// frequencies summing to `2^precision_bits`, each at least 1.
///
/// Symbols raised to the floor of 1 create a surplus that is taken one unit
/// at a time from the currently largest frequency (lowest index on ties);
/// any remaining deficit goes to the largest fractional remainders.
pub fn build_table(pmf: &[f64], lo: i64, precision_bits: u32) -> Result<FrequencyTable> {
    let m = 1u64 << precision_bits;
    let n = pmf.len();
    if n == 0 {
        return Err(Error::InvalidArgument("empty pmf".into()));
    }
    if n as u64 > m {
        return Err(Error::InvalidArgument(format!(
            "alphabet of {n} symbols exceeds table total {m}"
        )));
    }
    if pmf.iter().any(|p| !p.is_finite() || *p < 0.0) {
        return Err(Error::InvalidArgument(
            "pmf entries must be finite and non-negative".into(),
        ));
    }
    let total: f64 = pmf.iter().sum();
    if total <= 0.0 {
        return Err(Error::InvalidArgument("pmf has no mass".into()));
    }
    let scaled: Vec<f64> = pmf.iter().map(|p| p / total * m as f64).collect();
    let mut freqs: Vec<u64> = scaled.iter().map(|s| s.floor() as u64).collect();
    let assigned: u64 = freqs.iter().sum();
    let deficit = m - assigned.min(m);
    // Remainders descending, lower index first on ties.
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        let ra = scaled[a] - scaled[a].floor();
        let rb = scaled[b] - scaled[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &i in order.iter().cycle().take(deficit as usize) {
        freqs[i] += 1;
    }
    let mut surplus = 0u64;
    for f in &mut freqs {
        if *f == 0 {
            *f = 1;
            surplus += 1;
        }
    }
    if surplus > 0 {
        // Max-heap on (freq, −index) so ties resolve to the lower index.
        let mut heap: BinaryHeap<(u64, std::cmp::Reverse<usize>)> = freqs
            .iter()
            .enumerate()
            .filter(|(_, &f)| f > 1)
            .map(|(i, &f)| (f, std::cmp::Reverse(i)))
            .collect();
        while surplus > 0 {
            let (f, std::cmp::Reverse(i)) = heap.pop().expect("alphabet ≤ m leaves room");
            freqs[i] = f - 1;
            surplus -= 1;
            if f - 1 > 1 {
                heap.push((f - 1, std::cmp::Reverse(i)));
            }
        }
    }
    FrequencyTable::from_freqs(
        lo,
        freqs.into_iter().map(|f| f as u32).collect(),
        precision_bits,
    )
}

/// The bare state transition `C(s,x) = m·⌊x/l_s⌋ + b_s + (x mod l_s)`.
pub fn rans_step(x: u64, freq: u64, cum: u64, precision_bits: u32) -> u64 {
    ((x / freq) << precision_bits) + cum + x % freq
}

/// Inverse transition: returns `(symbol index, previous state)`.
pub fn rans_unstep(x: u64, table: &FrequencyTable) -> (usize, u64) {
    let mask = (1u64 << table.precision_bits) - 1;
    let slot = (x & mask) as u32;
    let s = table.find(slot);
    let prev =
        table.freqs[s] as u64 * (x >> table.precision_bits) + (x & mask) - table.cum[s] as u64;
    (s, prev)
}

/// Streaming encoder. Feed symbols in reverse decode order.
pub struct RansEncoder {
    state: u64,
    /// Renormalization bytes in emission order.
    bytes: Vec<u8>,
}

impl Default for RansEncoder {
    fn default() -> Self {
        Self::new()
    }
}

impl RansEncoder {
    pub fn new() -> Self {
        Self {
            state: RANS_L,
            bytes: Vec::new(),
        }
    }

    pub fn state(&self) -> u64 {
        self.state
    }

    pub fn encode(&mut self, symbol: i64, table: &FrequencyTable) -> Result<()> {
        let i = table.index(symbol).ok_or_else(|| {
            Error::InvalidArgument(format!(
                "symbol {symbol} outside table alphabet {}..={}",
                table.lo,
                table.hi()
            ))
        })?;
        let freq = table.freqs[i] as u64;
        let x_max = freq << (32 + 8 - table.precision_bits);
        while self.state >= x_max {
            self.bytes.push(self.state as u8);
            self.state >>= 8;
        }
        self.state = rans_step(self.state, freq, table.cum[i] as u64, table.precision_bits);
        Ok(())
    }

    /// Final state (8 bytes LE) followed by the bytes the decoder will read,
    /// in reading order.
    pub fn finish(self) -> Vec<u8> {
        let mut out = Vec::with_capacity(8 + self.bytes.len());
        out.extend_from_slice(&self.state.to_le_bytes());
        out.extend(self.bytes.iter().rev());
        out
    }
}

/// Streaming decoder over a byte slice produced by [`RansEncoder::finish`].
pub struct RansDecoder<'a> {
    state: u64,
    data: &'a [u8],
    pos: usize,
}

impl<'a> RansDecoder<'a> {
    pub fn new(data: &'a [u8]) -> Result<Self> {
        let head: [u8; 8] = data
            .get(..8)
            .and_then(|h| h.try_into().ok())
            .ok_or_else(|| Error::Truncated("rANS stream shorter than its 8-byte state".into()))?;
        let state = u64::from_le_bytes(head);
        if !(RANS_L..RANS_L << 8).contains(&state) {
            return Err(Error::Corrupt(format!(
                "initial rANS state {state:#x} out of range"
            )));
        }
        Ok(Self {
            state,
            data,
            pos: 8,
        })
    }

    pub fn state(&self) -> u64 {
        self.state
    }

    /// Bytes consumed so far, including the 8-byte state.
    pub fn position(&self) -> usize {
        self.pos
    }

    pub fn decode(&mut self, table: &FrequencyTable) -> Result<i64> {
        let (s, mut x) = rans_unstep(self.state, table);
        while x < RANS_L {
            let b = *self
                .data
                .get(self.pos)
                .ok_or_else(|| Error::Truncated("rANS stream ended during refill".into()))?;
            self.pos += 1;
            x = (x << 8) | b as u64;
        }
        self.state = x;
        Ok(table.lo + s as i64)
    }

    /// Checks that the stream was consumed exactly and the state returned to
    /// its initial value.
    pub fn finish(&self) -> Result<()> {
        if self.state != RANS_L {
            return Err(Error::Corrupt(format!(
                "final rANS state {:#x} differs from the initial state",
                self.state
            )));
        }
        if self.pos != self.data.len() {
            return Err(Error::Corrupt(format!(
                "{} trailing bytes after the rANS stream",
                self.data.len() - self.pos
            )));
        }
        Ok(())
    }
}

/// Encodes `(symbol, table)` pairs given in decode order.
pub fn encode_stream<'t>(
    items: impl DoubleEndedIterator<Item = (i64, &'t FrequencyTable)>,
) -> Result<Vec<u8>> {
    let mut enc = RansEncoder::new();
    for (s, t) in items.rev() {
        enc.encode(s, t)?;
    }
    Ok(enc.finish())
}
