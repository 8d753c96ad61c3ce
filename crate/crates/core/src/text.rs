//! Character-offset helpers. All offsets in records count Unicode scalar
//! values, not bytes.

pub fn char_len(s: &str) -> usize {
    s.chars().count()
}

/// Byte index of the `idx`-th char, or `s.len()` when `idx == char_len(s)`.
pub fn byte_index(s: &str, idx: usize) -> Option<usize> {
    if idx == 0 {
        return Some(0);
    }
    let mut count = 0;
    for (b, _) in s.char_indices() {
        if count == idx {
            return Some(b);
        }
        count += 1;
    }
    (count == idx).then_some(s.len())
}

/// Substring by char offsets `[start, end)`.
pub fn char_slice(s: &str, start: usize, end: usize) -> Option<&str> {
    if start > end {
        return None;
    }
    let b0 = byte_index(s, start)?;
    let b1 = byte_index(s, end)?;
    Some(&s[b0..b1])
}

/// SplitMix64 finalizer.
pub fn mix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Stable 64-bit string hash: FNV-1a followed by [`mix64`].
pub fn hash_str(s: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in s.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    mix64(h)
}
