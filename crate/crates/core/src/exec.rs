//! Deterministic work-cell execution and seed derivation.
//!
//! Experiments decompose into independent cells (one per width/basis/control
//! combination, or per RB sequence). Each cell derives its own RNG seed from
//! the master seed and its cell tags, so the result of a campaign is
//! identical whether cells run sequentially or on a thread pool, and
//! regardless of scheduling order.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// One round of the splitmix64 mixer.
fn splitmix64(state: u64) -> u64 {
    let mut z = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives a per-cell seed from a master seed and a list of cell tags.
///
/// The derivation is a fixed splitmix64 chain, so seeds are stable across
/// platforms and releases; tests freeze a few values to catch accidental
/// drift.
pub fn derive_seed(master: u64, tags: &[u64]) -> u64 {
    let mut state = splitmix64(master);
    for &tag in tags {
        state = splitmix64(state ^ tag.wrapping_mul(0x9e37_79b9_7f4a_7c15));
    }
    state
}

/// Maps `f` over `0..n`, collecting results in index order.
///
/// Uses the rayon pool when the `parallel` feature is enabled; otherwise
/// falls back to [`map_indexed_seq`]. Both paths produce identical output
/// for any `f` that depends only on its index.
pub fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        // Cells are often microseconds of work; chunking keeps the task
        // overhead from dominating small campaigns.
        (0..n).into_par_iter().with_min_len(16).map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        map_indexed_seq(n, f)
    }
}

/// Sequential reference implementation of [`map_indexed`].
///
/// Always available; the criterion bench suite compares it against the
/// parallel path on real workloads.
pub fn map_indexed_seq<T, F>(n: usize, f: F) -> Vec<T>
where
    F: Fn(usize) -> T,
{
    (0..n).map(f).collect()
}

// Stage tags for seed derivation; disjoint constants keep the seed streams
// of different pipeline stages independent.
pub const STAGE_AMPLITUDE_SWEEP: u64 = 0x11;
pub const STAGE_TOMOGRAPHY_BASELINE: u64 = 0x22;
pub const STAGE_TOMOGRAPHY_CANCEL_PROBE: u64 = 0x33;
pub const STAGE_VERIFY_GATE: u64 = 0x44;
pub const STAGE_VERIFY_INVERSE: u64 = 0x55;
pub const STAGE_RB: u64 = 0x66;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derived_seeds_are_stable() {
        // Frozen values: a change here means previously recorded campaigns
        // no longer reproduce.
        assert_eq!(derive_seed(0, &[]), 16294208416658607535);
        assert_eq!(
            derive_seed(7, &[STAGE_AMPLITUDE_SWEEP, 3]),
            4591423336350987940
        );
        assert_eq!(
            derive_seed(7, &[STAGE_AMPLITUDE_SWEEP, 4]),
            18042080943378558801
        );
    }

    #[test]
    fn derived_seeds_distinguish_tag_order() {
        assert_ne!(derive_seed(1, &[2, 3]), derive_seed(1, &[3, 2]));
        assert_ne!(derive_seed(1, &[2]), derive_seed(2, &[2]));
    }

    #[test]
    fn parallel_and_sequential_mapping_agree() {
        let par: Vec<u64> = map_indexed(257, |i| derive_seed(42, &[i as u64]));
        let seq: Vec<u64> = map_indexed_seq(257, |i| derive_seed(42, &[i as u64]));
        assert_eq!(par, seq);
    }
}
