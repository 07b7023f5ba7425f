//! Partial string-similarity ratio.
//!
//! Slides the shorter string across every same-length character window of
//! the longer one and keeps the best plain ratio 2·matches/(len_a+len_b),
//! where matches is the longest common subsequence under an
//! insertion/deletion alignment. Detects a short utterance embedded in a
//! longer rewriting even when the surroundings changed completely.

/// Best windowed similarity in [0, 1]. Symmetric; equal-length inputs
/// reduce to the plain full-string ratio; either side empty is 0.
pub fn partial_levenshtein_ratio(a: &str, b: &str) -> f64 {
    let a_chars: Vec<char> = a.chars().collect();
    let b_chars: Vec<char> = b.chars().collect();
    if a_chars.is_empty() || b_chars.is_empty() {
        return 0.0;
    }
    let (short, long) =
        if a_chars.len() <= b_chars.len() { (&a_chars, &b_chars) } else { (&b_chars, &a_chars) };
    let width = short.len();
    let mut best = 0.0f64;
    for start in 0..=(long.len() - width) {
        let window = &long[start..start + width];
        let matches = common_subsequence_length(short, window);
        let ratio = 2.0 * matches as f64 / (width + width) as f64;
        if ratio > best {
            best = ratio;
        }
        if best == 1.0 {
            break;
        }
    }
    best
}

/// Longest common subsequence length, two-row dynamic programming.
fn common_subsequence_length(a: &[char], b: &[char]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut current = vec![0usize; b.len() + 1];
    for &ca in a {
        for (j, &cb) in b.iter().enumerate() {
            current[j + 1] = if ca == cb { prev[j] + 1 } else { prev[j + 1].max(current[j]) };
        }
        std::mem::swap(&mut prev, &mut current);
    }
    prev[b.len()]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn substring_of_longer_text_scores_one() {
        assert_eq!(partial_levenshtein_ratio("abc", "xxabcxx"), 1.0);
        assert_eq!(partial_levenshtein_ratio("the dark", "into the darkness"), 1.0);
    }

    #[test]
    fn identical_strings_score_one() {
        assert_eq!(partial_levenshtein_ratio("same text", "same text"), 1.0);
    }

    #[test]
    fn empty_input_scores_zero() {
        assert_eq!(partial_levenshtein_ratio("", "abc"), 0.0);
        assert_eq!(partial_levenshtein_ratio("abc", ""), 0.0);
        assert_eq!(partial_levenshtein_ratio("", ""), 0.0);
    }

    #[test]
    fn disjoint_alphabets_score_zero() {
        assert_eq!(partial_levenshtein_ratio("aaa", "bbbbb"), 0.0);
    }

    #[test]
    fn ratio_is_symmetric() {
        let pairs = [("kitten", "sitting"), ("abcd", "xxbcdx"), ("a", "aaa")];
        for (x, y) in pairs {
            assert_eq!(
                partial_levenshtein_ratio(x, y),
                partial_levenshtein_ratio(y, x),
                "{x} vs {y}"
            );
        }
    }

    #[test]
    fn equal_lengths_reduce_to_plain_ratio() {
        // kitten vs sitten: 5 shared of 6 each
        let ratio = partial_levenshtein_ratio("kitten", "sitten");
        assert!((ratio - 2.0 * 5.0 / 12.0).abs() < 1e-12);
    }

    #[test]
    fn picks_the_best_window() {
        // "abc" against "azcabc": the final window matches fully
        assert_eq!(partial_levenshtein_ratio("abc", "azcabc"), 1.0);
        // "abcde" against "xbcdex": best window shares 4 of 5
        let ratio = partial_levenshtein_ratio("abcde", "xbcdex");
        assert!((ratio - 2.0 * 4.0 / 10.0).abs() < 1e-12);
    }

    #[test]
    fn unicode_is_compared_per_character() {
        assert_eq!(partial_levenshtein_ratio("héllo", "say héllo twice"), 1.0);
        let ratio = partial_levenshtein_ratio("héllo", "hello");
        assert!((ratio - 2.0 * 4.0 / 10.0).abs() < 1e-12);
    }

    #[test]
    fn matches_indel_distance_oracle_on_random_pairs() {
        // matches = (la + lb − indel_distance) / 2 on each window
        fn indel_distance(a: &[char], b: &[char]) -> usize {
            let mut prev: Vec<usize> = (0..=b.len()).collect();
            let mut current = vec![0usize; b.len() + 1];
            for (i, &ca) in a.iter().enumerate() {
                current[0] = i + 1;
                for (j, &cb) in b.iter().enumerate() {
                    current[j + 1] =
                        if ca == cb { prev[j] } else { 1 + prev[j + 1].min(current[j]) };
                }
                std::mem::swap(&mut prev, &mut current);
            }
            prev[b.len()]
        }
        fn oracle(a: &str, b: &str) -> f64 {
            let a_chars: Vec<char> = a.chars().collect();
            let b_chars: Vec<char> = b.chars().collect();
            if a_chars.is_empty() || b_chars.is_empty() {
                return 0.0;
            }
            let (short, long) = if a_chars.len() <= b_chars.len() {
                (a_chars, b_chars)
            } else {
                (b_chars, a_chars)
            };
            let mut best = 0.0f64;
            for start in 0..=(long.len() - short.len()) {
                let window = &long[start..start + short.len()];
                let distance = indel_distance(&short, window);
                let matches = (short.len() + window.len() - distance) / 2;
                best = best.max(matches as f64 / short.len() as f64);
            }
            best
        }

        let mut state = 0x9e3779b97f4a7c15u64;
        let mut next = move || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            state
        };
        for _ in 0..200 {
            let len_a = (next() % 12 + 1) as usize;
            let len_b = (next() % 12 + 1) as usize;
            let a: String = (0..len_a).map(|_| (b'a' + (next() % 4) as u8) as char).collect();
            let b: String = (0..len_b).map(|_| (b'a' + (next() % 4) as u8) as char).collect();
            assert_eq!(partial_levenshtein_ratio(&a, &b), oracle(&a, &b), "{a} vs {b}");
        }
    }
}
