//! Packed binary matrices, activation bitplane transpose, and the batched
//! AND/popcount matvec kernel.
//!
//! A [`BitMatrix`] packs one bit per element into 64-bit words, row-major;
//! bit `j` of word `w` in a row holds column `w * 64 + j`. Padding bits past
//! the last column are always zero, which makes them neutral under AND.
//!
//! A fixed-point activation vector is rearranged into a `k x len` bitplane
//! matrix by [`bitplane_transpose`]: row 0 is the two's complement sign plane
//! (scale `-2^(k-1)`), row `j` holds bit `k-1-j` (scale `2^(k-1-j)`). The
//! kernel [`binary_matvec_batch`] then computes popcounts of ANDed rows, one
//! count per (weight row, plane) pair, and [`reduce_planes`] folds the counts
//! with the plane scales back into per-row integer dot products.

use crate::error::{Error, Result};

pub const WORD_BITS: usize = 64;

/// Binary matrix packed row-major into 64-bit words.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BitMatrix {
    rows: usize,
    cols: usize,
    words_per_row: usize,
    data: Vec<u64>,
}

impl BitMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        let words_per_row = cols.div_ceil(WORD_BITS);
        Self { rows, cols, words_per_row, data: vec![0; rows * words_per_row] }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn words_per_row(&self) -> usize {
        self.words_per_row
    }

    pub fn get(&self, r: usize, c: usize) -> bool {
        debug_assert!(r < self.rows && c < self.cols);
        let word = self.data[r * self.words_per_row + c / WORD_BITS];
        (word >> (c % WORD_BITS)) & 1 == 1
    }

    pub fn set(&mut self, r: usize, c: usize, bit: bool) {
        debug_assert!(r < self.rows && c < self.cols);
        let word = &mut self.data[r * self.words_per_row + c / WORD_BITS];
        let mask = 1u64 << (c % WORD_BITS);
        if bit {
            *word |= mask;
        } else {
            *word &= !mask;
        }
    }

    pub fn row_words(&self, r: usize) -> &[u64] {
        &self.data[r * self.words_per_row..(r + 1) * self.words_per_row]
    }

    /// Packed size in bytes; equals the actual allocation.
    pub fn packed_bytes(&self) -> u64 {
        self.data.len() as u64 * 8
    }

    /// Dense 0/1 expansion, row-major.
    pub fn unpack(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.rows * self.cols);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.push(u8::from(self.get(r, c)));
            }
        }
        out
    }

    /// True when no padding bit (column index >= cols) is set.
    pub fn padding_is_zero(&self) -> bool {
        let tail_bits = self.cols % WORD_BITS;
        if tail_bits == 0 || self.words_per_row == 0 {
            return true;
        }
        let pad_mask = !0u64 << tail_bits;
        (0..self.rows).all(|r| self.row_words(r)[self.words_per_row - 1] & pad_mask == 0)
    }
}

/// Pack a dense row-major 0/1 matrix into a [`BitMatrix`].
pub fn pack_bit_matrix(rows: usize, cols: usize, values: &[u8]) -> Result<BitMatrix> {
    if values.len() != rows * cols {
        return Err(Error::DimensionMismatch(format!(
            "expected {rows}x{cols} = {} values, got {}",
            rows * cols,
            values.len()
        )));
    }
    let mut m = BitMatrix::zeros(rows, cols);
    for (idx, &v) in values.iter().enumerate() {
        match v {
            0 => {}
            1 => m.set(idx / cols.max(1), idx % cols.max(1), true),
            _ => {
                return Err(Error::NonBinaryElement {
                    row: idx / cols.max(1),
                    col: idx % cols.max(1),
                    value: v,
                })
            }
        }
    }
    Ok(m)
}

/// Integer vector in fixed point: real value = `values[i] / 2^frac_bits`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FixedPointVector {
    pub values: Vec<i32>,
    pub frac_bits: u32,
}

impl FixedPointVector {
    pub fn new(values: Vec<i32>, frac_bits: u32) -> Self {
        Self { values, frac_bits }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Plane scales for `k`-bit two's complement: `[-2^(k-1), 2^(k-2), ..., 1]`.
pub fn plane_scales(k: u32) -> Vec<i64> {
    let mut s = Vec::with_capacity(k as usize);
    s.push(-(1i64 << (k - 1)));
    for j in 1..k {
        s.push(1i64 << (k - 1 - j));
    }
    s
}

/// Transpose a fixed-point vector into its `k` bitplanes.
///
/// Row 0 is the sign plane; row `j` holds bit `k-1-j` of each element.
/// Values outside the `k`-bit two's complement range saturate to the range
/// bounds; the number of saturated elements is returned with the planes.
pub fn bitplane_transpose(v: &FixedPointVector, k: u32) -> Result<(BitMatrix, u64)> {
    if !(1..=32).contains(&k) {
        return Err(Error::InvalidBitWidth { bits: k, min: 1, max: 32 });
    }
    let len = v.values.len();
    let mut planes = BitMatrix::zeros(k as usize, len);
    let lo = -(1i64 << (k - 1));
    let hi = (1i64 << (k - 1)) - 1;
    let mut saturated = 0u64;
    let wpr = planes.words_per_row;
    for (c, &raw) in v.values.iter().enumerate() {
        let mut val = raw as i64;
        if val < lo {
            val = lo;
            saturated += 1;
        } else if val > hi {
            val = hi;
            saturated += 1;
        }
        let code = (val as u64) & (u64::MAX >> (64 - k));
        let word = c / WORD_BITS;
        let mask = 1u64 << (c % WORD_BITS);
        for j in 0..k {
            if (code >> (k - 1 - j)) & 1 == 1 {
                planes.data[j as usize * wpr + word] |= mask;
            }
        }
    }
    Ok((planes, saturated))
}

/// Length of the leading run of plane rows bit-identical to row 0.
///
/// For two's complement bitplanes of range-limited values, the top planes
/// are sign-extension copies of the sign plane; they produce identical
/// popcounts, so their scales can be summed and the planes folded into one.
pub fn leading_duplicate_planes(planes: &BitMatrix) -> usize {
    if planes.rows == 0 {
        return 0;
    }
    let first = planes.row_words(0);
    let mut run = 1;
    while run < planes.rows && planes.row_words(run) == first {
        run += 1;
    }
    run
}

/// Copy `planes` keeping row 0 once and dropping the `run - 1` rows after it.
pub fn fold_leading_planes(planes: &BitMatrix, run: usize) -> BitMatrix {
    debug_assert!(run >= 1 && run <= planes.rows);
    let mut out = BitMatrix::zeros(planes.rows - run + 1, planes.cols);
    let wpr = planes.words_per_row;
    out.data[..wpr].copy_from_slice(planes.row_words(0));
    for (dst, src) in (run..planes.rows).enumerate() {
        out.data[(dst + 1) * wpr..(dst + 2) * wpr].copy_from_slice(planes.row_words(src));
    }
    out
}

/// Popcount matrix: one count per (weight row, activation plane) pair.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CountMatrix {
    pub rows: usize,
    pub planes: usize,
    pub data: Vec<u32>,
}

impl CountMatrix {
    pub fn zeros(rows: usize, planes: usize) -> Self {
        Self { rows, planes, data: vec![0; rows * planes] }
    }

    pub fn get(&self, r: usize, j: usize) -> u32 {
        self.data[r * self.planes + j]
    }
}

/// `counts[r][j] = popcount(w.row(r) AND planes.row(j))`.
pub fn binary_matvec_batch(w: &BitMatrix, planes: &BitMatrix) -> Result<CountMatrix> {
    let mut out = CountMatrix::zeros(w.rows, planes.rows);
    binary_matvec_batch_into(w, planes, &mut out)?;
    Ok(out)
}

/// As [`binary_matvec_batch`], reusing an output buffer across calls.
pub fn binary_matvec_batch_into(
    w: &BitMatrix,
    planes: &BitMatrix,
    out: &mut CountMatrix,
) -> Result<()> {
    if w.cols != planes.cols {
        return Err(Error::DimensionMismatch(format!(
            "weight cols {} != plane cols {}",
            w.cols, planes.cols
        )));
    }
    if out.rows != w.rows || out.planes != planes.rows {
        out.rows = w.rows;
        out.planes = planes.rows;
        out.data.clear();
        out.data.resize(w.rows * planes.rows, 0);
    }

    #[cfg(target_arch = "x86_64")]
    {
        if std::arch::is_x86_feature_detected!("avx512vpopcntdq") {
            // SAFETY: feature checked at runtime.
            unsafe { matvec_body_avx512(w, planes, out) };
            return Ok(());
        }
        if std::arch::is_x86_feature_detected!("popcnt") {
            // SAFETY: feature checked at runtime.
            unsafe { matvec_body_popcnt(w, planes, out) };
            return Ok(());
        }
    }
    matvec_body(w, planes, out);
    Ok(())
}

#[inline(always)]
fn matvec_body(w: &BitMatrix, planes: &BitMatrix, out: &mut CountMatrix) {
    let k = planes.rows;
    for r in 0..w.rows {
        let wrow = w.row_words(r);
        let dst = &mut out.data[r * k..(r + 1) * k];
        for (j, d) in dst.iter_mut().enumerate() {
            *d = dot_words(wrow, planes.row_words(j)) as u32;
        }
    }
}

#[inline(always)]
fn dot_words(a: &[u64], b: &[u64]) -> u64 {
    let mut acc = [0u64; 4];
    for (ca, cb) in a.chunks_exact(4).zip(b.chunks_exact(4)) {
        acc[0] += (ca[0] & cb[0]).count_ones() as u64;
        acc[1] += (ca[1] & cb[1]).count_ones() as u64;
        acc[2] += (ca[2] & cb[2]).count_ones() as u64;
        acc[3] += (ca[3] & cb[3]).count_ones() as u64;
    }
    let tail = a.len() - a.len() % 4;
    for (x, y) in a[tail..].iter().zip(&b[tail..]) {
        acc[0] += (x & y).count_ones() as u64;
    }
    acc[0] + acc[1] + acc[2] + acc[3]
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "popcnt")]
unsafe fn matvec_body_popcnt(w: &BitMatrix, planes: &BitMatrix, out: &mut CountMatrix) {
    matvec_body(w, planes, out);
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx512f,avx512vpopcntdq")]
unsafe fn dot_words_avx512(a: &[u64], b: &[u64]) -> u64 {
    use std::arch::x86_64::*;
    let chunks = a.len() / 8;
    let mut acc = _mm512_setzero_si512();
    for i in 0..chunks {
        let va = _mm512_loadu_si512(a.as_ptr().add(i * 8) as *const _);
        let vb = _mm512_loadu_si512(b.as_ptr().add(i * 8) as *const _);
        acc = _mm512_add_epi64(acc, _mm512_popcnt_epi64(_mm512_and_si512(va, vb)));
    }
    let mut total = _mm512_reduce_add_epi64(acc) as u64;
    for i in chunks * 8..a.len() {
        total += (a[i] & b[i]).count_ones() as u64;
    }
    total
}

/// Register-blocked kernel: two weight rows against four planes at a time,
/// so every loaded 8-word chunk feeds eight AND/popcount accumulations.
#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx512f,avx512vpopcntdq")]
unsafe fn matvec_body_avx512(w: &BitMatrix, planes: &BitMatrix, out: &mut CountMatrix) {
    use std::arch::x86_64::*;
    let k = planes.rows;
    let wpr = w.words_per_row;
    let chunks = wpr / 8;
    let mut r = 0;
    while r + 2 <= w.rows {
        let w0 = w.row_words(r);
        let w1 = w.row_words(r + 1);
        let mut j = 0;
        while j + 4 <= k {
            let p0 = planes.row_words(j);
            let p1 = planes.row_words(j + 1);
            let p2 = planes.row_words(j + 2);
            let p3 = planes.row_words(j + 3);
            let mut a00 = _mm512_setzero_si512();
            let mut a01 = _mm512_setzero_si512();
            let mut a02 = _mm512_setzero_si512();
            let mut a03 = _mm512_setzero_si512();
            let mut a10 = _mm512_setzero_si512();
            let mut a11 = _mm512_setzero_si512();
            let mut a12 = _mm512_setzero_si512();
            let mut a13 = _mm512_setzero_si512();
            for i in 0..chunks {
                let va = _mm512_loadu_si512(w0.as_ptr().add(i * 8) as *const _);
                let vb = _mm512_loadu_si512(w1.as_ptr().add(i * 8) as *const _);
                let q0 = _mm512_loadu_si512(p0.as_ptr().add(i * 8) as *const _);
                a00 = _mm512_add_epi64(a00, _mm512_popcnt_epi64(_mm512_and_si512(va, q0)));
                a10 = _mm512_add_epi64(a10, _mm512_popcnt_epi64(_mm512_and_si512(vb, q0)));
                let q1 = _mm512_loadu_si512(p1.as_ptr().add(i * 8) as *const _);
                a01 = _mm512_add_epi64(a01, _mm512_popcnt_epi64(_mm512_and_si512(va, q1)));
                a11 = _mm512_add_epi64(a11, _mm512_popcnt_epi64(_mm512_and_si512(vb, q1)));
                let q2 = _mm512_loadu_si512(p2.as_ptr().add(i * 8) as *const _);
                a02 = _mm512_add_epi64(a02, _mm512_popcnt_epi64(_mm512_and_si512(va, q2)));
                a12 = _mm512_add_epi64(a12, _mm512_popcnt_epi64(_mm512_and_si512(vb, q2)));
                let q3 = _mm512_loadu_si512(p3.as_ptr().add(i * 8) as *const _);
                a03 = _mm512_add_epi64(a03, _mm512_popcnt_epi64(_mm512_and_si512(va, q3)));
                a13 = _mm512_add_epi64(a13, _mm512_popcnt_epi64(_mm512_and_si512(vb, q3)));
            }
            let mut totals = [
                _mm512_reduce_add_epi64(a00) as u64,
                _mm512_reduce_add_epi64(a01) as u64,
                _mm512_reduce_add_epi64(a02) as u64,
                _mm512_reduce_add_epi64(a03) as u64,
                _mm512_reduce_add_epi64(a10) as u64,
                _mm512_reduce_add_epi64(a11) as u64,
                _mm512_reduce_add_epi64(a12) as u64,
                _mm512_reduce_add_epi64(a13) as u64,
            ];
            for i in chunks * 8..wpr {
                for (jj, p) in [p0, p1, p2, p3].into_iter().enumerate() {
                    totals[jj] += (w0[i] & p[i]).count_ones() as u64;
                    totals[4 + jj] += (w1[i] & p[i]).count_ones() as u64;
                }
            }
            for jj in 0..4 {
                out.data[r * k + j + jj] = totals[jj] as u32;
                out.data[(r + 1) * k + j + jj] = totals[4 + jj] as u32;
            }
            j += 4;
        }
        while j < k {
            let prow = planes.row_words(j);
            out.data[r * k + j] = dot_words_avx512(w0, prow) as u32;
            out.data[(r + 1) * k + j] = dot_words_avx512(w1, prow) as u32;
            j += 1;
        }
        r += 2;
    }
    if r < w.rows {
        let wrow = w.row_words(r);
        for j in 0..k {
            out.data[r * k + j] = dot_words_avx512(wrow, planes.row_words(j)) as u32;
        }
    }
}

/// Fold plane counts with plane scales: `out[r] = sum_j counts[r][j] * scales[j]`.
///
/// All arithmetic is 64-bit signed; with `cols <= 2^20` the per-plane fold is
/// bounded by `cols * 2^31 < 2^63` and cannot overflow.
pub fn reduce_planes(counts: &CountMatrix, scales: &[i64]) -> Vec<i64> {
    assert_eq!(counts.planes, scales.len(), "one scale per plane");
    let mut out = Vec::with_capacity(counts.rows);
    for r in 0..counts.rows {
        let row = &counts.data[r * counts.planes..(r + 1) * counts.planes];
        let mut acc = 0i64;
        for (&c, &s) in row.iter().zip(scales) {
            acc += c as i64 * s;
        }
        out.push(acc);
    }
    out
}
