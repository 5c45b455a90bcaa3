use std::collections::HashMap;

/// Shannon entropy of the character distribution of `s`, in bits per character.
///
/// The empty string has entropy 0.
pub fn shannon_entropy(s: &str) -> f64 {
    let mut counts: HashMap<char, usize> = HashMap::new();
    let mut total = 0usize;
    for c in s.chars() {
        *counts.entry(c).or_insert(0) += 1;
        total += 1;
    }
    if total == 0 {
        return 0.0;
    }
    let n = total as f64;
    let mut counts: Vec<usize> = counts.into_values().collect();
    // fixed summation order keeps the result independent of hash iteration order
    counts.sort_unstable();
    let h: f64 = counts
        .into_iter()
        .map(|c| {
            let p = c as f64 / n;
            -p * p.log2()
        })
        .sum();
    // a single repeated symbol yields -0.0
    h.max(0.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_symbol_is_zero() {
        assert_eq!(shannon_entropy("aaaa"), 0.0);
        assert_eq!(shannon_entropy(""), 0.0);
    }

    #[test]
    fn sixteen_uniform_symbols() {
        assert_eq!(shannon_entropy("0123456789abcdef"), 4.0);
    }

    #[test]
    fn password_is_two_point_seven_five() {
        // s appears twice, six other letters once each, N = 8
        assert!((shannon_entropy("password") - 2.75).abs() < 1e-12);
    }

    #[test]
    fn counts_chars_not_bytes() {
        assert_eq!(shannon_entropy("éé"), 0.0);
        assert!((shannon_entropy("éa") - 1.0).abs() < 1e-12);
    }
}
