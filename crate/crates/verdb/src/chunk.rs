//! Content-defined chunking for the cell store.
//!
//! Values are cut into chunks wherever a rolling hash of the recent input
//! dips below a threshold, so chunk boundaries depend on *content*, not on
//! offsets. A small edit in the middle of a large value therefore re-chunks
//! only the neighborhood of the edit: all boundaries before it are untouched,
//! and the cut points after it re-synchronize as soon as the rolling window
//! clears the edited bytes. That is what makes version-to-version
//! deduplication effective for the multi-version storage model.
//!
//! The rolling hash is a gear hash: `h = (h << 1) + GEAR[byte]`, a degenerate
//! polynomial whose state only retains the last 64 input bytes. The gear
//! table is derived deterministically from SHA-256 so two processes always
//! agree on boundaries.

use std::ops::Range;
use std::sync::OnceLock;

use sha2::{Digest as _, Sha256};

/// Chunking parameters. Values shorter than `min` become a single chunk; no
/// chunk exceeds `max`; the mean chunk size is `target` (the cut judgment
/// starts after `min` bytes with probability `1/(target-min)` per byte).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ChunkerParams {
    pub min: usize,
    pub target: usize,
    pub max: usize,
}

impl Default for ChunkerParams {
    fn default() -> Self {
        // 2 KiB mean with a 1 KiB floor and 16 KiB ceiling. The floor keeps
        // per-chunk bookkeeping bounded; the mean is small enough that a
        // point edit in a large value rewrites only a couple of KiB.
        ChunkerParams {
            min: 1024,
            target: 2048,
            max: 16 * 1024,
        }
    }
}

impl ChunkerParams {
    fn threshold(&self) -> u64 {
        debug_assert!(self.min < self.target && self.target <= self.max);
        u64::MAX / (self.target - self.min) as u64
    }
}

fn gear_table() -> &'static [u64; 256] {
    static TABLE: OnceLock<[u64; 256]> = OnceLock::new();
    TABLE.get_or_init(|| {
        let mut table = [0u64; 256];
        for (i, slot) in table.iter_mut().enumerate() {
            let mut h = Sha256::new();
            h.update([i as u8]);
            let digest = h.finalize();
            *slot = u64::from_be_bytes(digest[..8].try_into().unwrap());
        }
        table
    })
}

/// Cuts `data` into chunk ranges. The concatenation of the ranges is always
/// exactly `data`; every range except possibly the last is at least `min`
/// and none exceeds `max`.
pub fn chunk_ranges(data: &[u8], params: ChunkerParams) -> Vec<Range<usize>> {
    let gear = gear_table();
    let threshold = params.threshold();
    let mut ranges = Vec::with_capacity(data.len() / params.target + 1);
    let mut start = 0usize;
    while start < data.len() {
        let remaining = data.len() - start;
        if remaining <= params.min {
            ranges.push(start..data.len());
            break;
        }
        let limit = remaining.min(params.max);
        let mut h: u64 = 0;
        let mut cut = limit;
        for (i, &b) in data[start..start + limit].iter().enumerate() {
            h = (h << 1).wrapping_add(gear[b as usize]);
            if i + 1 >= params.min && h < threshold {
                cut = i + 1;
                break;
            }
        }
        ranges.push(start..start + cut);
        start += cut;
    }
    ranges
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    fn random_bytes(seed: u64, len: usize) -> Vec<u8> {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let mut out = vec![0u8; len];
        rng.fill(&mut out[..]);
        out
    }

    #[test]
    fn ranges_partition_the_input() {
        let data = random_bytes(1, 100_000);
        let params = ChunkerParams::default();
        let ranges = chunk_ranges(&data, params);
        let mut expected_start = 0;
        for r in &ranges {
            assert_eq!(r.start, expected_start);
            expected_start = r.end;
        }
        assert_eq!(expected_start, data.len());
    }

    #[test]
    fn chunking_is_deterministic() {
        let data = random_bytes(2, 64 * 1024);
        let params = ChunkerParams::default();
        assert_eq!(chunk_ranges(&data, params), chunk_ranges(&data, params));
    }

    #[test]
    fn sizes_respect_bounds_and_mean() {
        let data = random_bytes(3, 4 << 20);
        let params = ChunkerParams::default();
        let ranges = chunk_ranges(&data, params);
        for r in &ranges[..ranges.len() - 1] {
            assert!(r.len() >= params.min, "chunk below min: {}", r.len());
            assert!(r.len() <= params.max, "chunk above max: {}", r.len());
        }
        let mean = data.len() / ranges.len();
        assert!(
            mean > params.target / 2 && mean < params.target * 2,
            "mean chunk size {mean} too far from target {}",
            params.target
        );
    }

    #[test]
    fn small_values_are_one_chunk() {
        let params = ChunkerParams::default();
        for len in [0, 1, 20, params.min - 1, params.min] {
            let data = random_bytes(4, len);
            let ranges = chunk_ranges(&data, params);
            if len == 0 {
                assert!(ranges.is_empty());
            } else {
                assert_eq!(ranges.len(), 1);
                assert_eq!(ranges[0], 0..len);
            }
        }
    }

    #[test]
    fn mid_stream_edit_rewrites_a_bounded_neighborhood() {
        let params = ChunkerParams::default();
        let page = random_bytes(5, 16 * 1024);
        let mut edited = page.clone();
        for (i, b) in edited[7000..7010].iter_mut().enumerate() {
            *b = b.wrapping_add(i as u8 + 1);
        }

        let chunks = |data: &[u8]| -> std::collections::HashSet<Vec<u8>> {
            chunk_ranges(data, params)
                .into_iter()
                .map(|r| data[r].to_vec())
                .collect()
        };
        let before = chunks(&page);
        let after = chunks(&edited);
        let new_bytes: usize = after.difference(&before).map(|c| c.len()).sum();
        assert!(new_bytes > 0, "the edit must change at least one chunk");
        assert!(
            new_bytes < 16 * 1024 * 2 / 5,
            "a 10-byte edit rewrote {new_bytes} bytes of a 16 KiB page"
        );
    }
}
