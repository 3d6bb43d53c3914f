//! Scalar-generic numeric kernels shared across the engine.
//!
//! These are the closed forms the workflow decisions hang off: normalized
//! edit-distance similarity between traces, the decaying transition
//! threshold, softmax consensus weights, lexical Jaccard overlap, and the
//! EMA performance update.

use std::collections::BTreeSet;

use crate::num::Scalar;

/// Levenshtein distance over slices of comparable elements (two-row DP).
pub fn edit_distance<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    if a.is_empty() {
        return b.len();
    }
    if b.is_empty() {
        return a.len();
    }
    let mut cur: Vec<usize> = (0..=b.len()).collect();
    for (i, ea) in a.iter().enumerate() {
        let mut prev = cur[0];
        cur[0] = i + 1;
        for (j, eb) in b.iter().enumerate() {
            let tmp = cur[j + 1];
            let subst = prev + usize::from(ea != eb);
            cur[j + 1] = subst.min(tmp + 1).min(cur[j] + 1);
            prev = tmp;
        }
    }
    cur[b.len()]
}

/// Similarity `1 - dist / max(|a|, |b|)` in `[0, 1]`.
///
/// Two empty sequences compare as identical (1); an empty sequence against
/// a nonempty one falls out of the formula as 0.
pub fn normalized_edit_similarity<T: PartialEq, S: Scalar>(a: &[T], b: &[T]) -> S {
    let longest = a.len().max(b.len());
    if longest == 0 {
        return S::one();
    }
    let dist = S::from_count(edit_distance(a, b));
    S::one() - dist / S::from_count(longest)
}

/// Decaying threshold `delta0 * exp(-lambda * t/t_max * complexity)`.
pub fn decay_threshold<S: Scalar>(delta0: S, lambda: S, t: u32, t_max: u32, complexity: S) -> S {
    let frac = S::from_u32(t).unwrap() / S::from_u32(t_max.max(1)).unwrap();
    delta0 * (-lambda * frac * complexity).exp()
}

/// Softmax of `scores / temperature`, max-subtracted for stability.
///
/// Returns an empty vector for empty input; otherwise the weights are
/// strictly positive and sum to 1.
pub fn softmax<S: Scalar>(scores: &[S], temperature: S) -> Vec<S> {
    if scores.is_empty() {
        return Vec::new();
    }
    let scaled: Vec<S> = scores.iter().map(|&s| s / temperature).collect();
    let top = scaled.iter().cloned().fold(S::neg_infinity(), S::max);
    let exps: Vec<S> = scaled.iter().map(|&s| (s - top).exp()).collect();
    let total: S = exps.iter().cloned().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Jaccard overlap of two token sets.
///
/// Either set being empty scores 0: the measure is used for relevance and
/// alignment, where "nothing said" must never look like agreement.
pub fn jaccard<S: Scalar>(a: &BTreeSet<String>, b: &BTreeSet<String>) -> S {
    if a.is_empty() || b.is_empty() {
        return S::zero();
    }
    let inter = a.intersection(b).count();
    let union = a.union(b).count();
    S::from_count(inter) / S::from_count(union)
}

/// Lowercased alphanumeric tokens of a text.
pub fn token_set(text: &str) -> BTreeSet<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(|t| t.to_lowercase())
        .collect()
}

/// Exponential moving average step `(1-beta)*prev + beta*target`.
pub fn ema<S: Scalar>(prev: S, target: S, beta: S) -> S {
    (S::one() - beta) * prev + beta * target
}

/// Clamp into `[0, 1]`.
pub fn clamp01<S: Scalar>(x: S) -> S {
    x.max(S::zero()).min(S::one())
}

/// Arithmetic mean; 0 for empty input.
pub fn mean<S: Scalar>(xs: &[S]) -> S {
    if xs.is_empty() {
        return S::zero();
    }
    let total: S = xs.iter().cloned().sum();
    total / S::from_count(xs.len())
}

/// Population standard deviation; 0 for empty input.
pub fn population_std<S: Scalar>(xs: &[S]) -> S {
    if xs.is_empty() {
        return S::zero();
    }
    let m = mean(xs);
    let var: S = xs.iter().map(|&x| (x - m) * (x - m)).sum::<S>() / S::from_count(xs.len());
    var.sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    // Independent full-matrix reference, kept deliberately separate from the
    // two-row implementation above.
    fn dp_oracle<T: PartialEq>(a: &[T], b: &[T]) -> usize {
        let mut m = vec![vec![0usize; b.len() + 1]; a.len() + 1];
        for (i, row) in m.iter_mut().enumerate() {
            row[0] = i;
        }
        for (j, cell) in m[0].iter_mut().enumerate() {
            *cell = j;
        }
        for i in 1..=a.len() {
            for j in 1..=b.len() {
                let cost = usize::from(a[i - 1] != b[j - 1]);
                m[i][j] = (m[i - 1][j] + 1)
                    .min(m[i][j - 1] + 1)
                    .min(m[i - 1][j - 1] + cost);
            }
        }
        m[a.len()][b.len()]
    }

    #[test]
    fn edit_distance_matches_full_matrix_oracle() {
        let cases: &[(&[u8], &[u8])] = &[
            (b"", b""),
            (b"abc", b""),
            (b"abc", b"abd"),
            (b"kitten", b"sitting"),
            (b"flaw", b"lawn"),
            (b"aaaa", b"bbbb"),
        ];
        for (a, b) in cases {
            assert_eq!(edit_distance(a, b), dp_oracle(a, b), "{a:?} vs {b:?}");
        }
    }

    #[test]
    fn similarity_basic_values() {
        // [A,B,C] vs [A,B,D]: one substitution over length 3.
        let s: f64 = normalized_edit_similarity(&['a', 'b', 'c'], &['a', 'b', 'd']);
        assert!((s - (1.0 - 1.0 / 3.0)).abs() < 1e-12);
        // Disjoint equal-length: all substitutions.
        let z: f64 = normalized_edit_similarity(&[1, 2, 3, 4], &[5, 6, 7, 8]);
        assert_eq!(z, 0.0);
        // Both empty compare as identical.
        let e: f64 = normalized_edit_similarity::<u8, f64>(&[], &[]);
        assert_eq!(e, 1.0);
        // One empty is maximally dissimilar.
        let h: f64 = normalized_edit_similarity(&[], &[1, 2]);
        assert_eq!(h, 0.0);
    }

    #[test]
    fn similarity_generic_over_f32() {
        let s: f32 = normalized_edit_similarity(&['x', 'y'], &['x', 'z']);
        assert!((s - 0.5).abs() < 1e-6);
    }

    #[test]
    fn decay_threshold_closed_form() {
        // t = t_max, full complexity: delta0 * e^{-lambda}.
        let d: f64 = decay_threshold(0.85, 0.5, 4, 4, 1.0);
        assert!((d - 0.85 * (-0.5f64).exp()).abs() < 1e-12);
        // Complexity 0 leaves the threshold at delta0 for any t.
        for t in 1..=4 {
            let d: f64 = decay_threshold(0.85, 0.5, t, 4, 0.0);
            assert!((d - 0.85).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_two_point() {
        let w = softmax(&[1.0f64, 0.0], 1.0);
        assert!((w[0] - 0.731_058_578_630_004_9).abs() < 1e-12);
        assert!((w[1] - 0.268_941_421_369_995_1).abs() < 1e-12);
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn softmax_uniform_on_equal_scores() {
        let w = softmax(&[0.3f32, 0.3, 0.3], 1.0);
        for x in &w {
            assert!((x - 1.0 / 3.0).abs() < 1e-6);
        }
    }

    #[test]
    fn jaccard_and_tokens() {
        let a = token_set("Sort the Numbers, then print them!");
        assert!(a.contains("sort") && a.contains("numbers"));
        let j: f64 = jaccard(&token_set("alpha beta"), &token_set("beta gamma"));
        assert!((j - 1.0 / 3.0).abs() < 1e-12);
        let full: f64 = jaccard(&token_set("same text"), &token_set("Same, text."));
        assert_eq!(full, 1.0);
        let none: f64 = jaccard(&token_set(""), &token_set("anything"));
        assert_eq!(none, 0.0);
    }

    #[test]
    fn ema_step() {
        let next: f64 = ema(0.0, 1.0, 0.3);
        assert!((next - 0.3).abs() < 1e-12);
        assert_eq!(ema(0.0f64, 0.0, 0.3), 0.0);
    }

    #[test]
    fn mean_and_population_std() {
        let xs = [0.8f64, 0.9];
        assert!((mean(&xs) - 0.85).abs() < 1e-12);
        assert!((population_std(&xs) - 0.05).abs() < 1e-12);
        assert_eq!(population_std::<f64>(&[]), 0.0);
    }
}
