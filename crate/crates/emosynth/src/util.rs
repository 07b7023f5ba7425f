//! Small shared helpers: seeded RNG construction, a version-stable shuffle,
//! and field sanitization for tab-separated exports.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Deterministic RNG for everything seed-driven in the toolkit.
pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Fisher-Yates shuffle written out by hand. Sampled subsets and split
/// manifests are long-lived artifacts, so the permutation for a given seed
/// must not depend on rand's internal shuffle implementation.
pub fn shuffle<T>(items: &mut [T], rng: &mut impl Rng) {
    if items.len() < 2 {
        return;
    }
    for i in (1..items.len()).rev() {
        let j = rng.gen_range(0..=i);
        items.swap(i, j);
    }
}

/// Whitespace-token count used as the cheap length estimate in reports.
pub fn token_estimate(text: &str) -> usize {
    text.split_whitespace().count()
}

/// Make a free-text value safe for one tab-separated field: tabs and
/// newlines become single spaces.
pub fn sanitize_field(text: &str) -> String {
    text.replace(['\t', '\n', '\r'], " ")
}

/// Population mean and standard deviation. Empty input yields (0, 0).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}
