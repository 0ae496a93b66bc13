//! Exact sign test over paired differences.

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Alternative {
    /// Differences tend to be positive.
    Greater,
    TwoSided,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SignTest {
    pub positive: usize,
    pub negative: usize,
    pub ties: usize,
    pub p_value: f64,
}

fn binom_tail_ge(n: usize, k: usize) -> f64 {
    // P(X >= k), X ~ Binomial(n, 1/2).
    let mut c = 1.0f64;
    let mut total = 0.0;
    for i in 0..=n {
        if i >= k {
            total += c;
        }
        c = c * (n - i) as f64 / (i + 1) as f64;
    }
    total / 2f64.powi(n as i32)
}

/// Zero differences are dropped.
pub fn sign_test(diffs: &[f64], alternative: Alternative) -> SignTest {
    let positive = diffs.iter().filter(|&&d| d > 0.0).count();
    let negative = diffs.iter().filter(|&&d| d < 0.0).count();
    let ties = diffs.len() - positive - negative;
    let n = positive + negative;
    let p_value = if n == 0 {
        1.0
    } else {
        match alternative {
            Alternative::Greater => binom_tail_ge(n, positive),
            Alternative::TwoSided => {
                let upper = binom_tail_ge(n, positive);
                let lower = binom_tail_ge(n, negative);
                (2.0 * upper.min(lower)).min(1.0)
            }
        }
    };
    SignTest {
        positive,
        negative,
        ties,
        p_value,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn five_of_five() {
        let t = sign_test(&[0.1, 0.2, 0.3, 0.1, 0.05], Alternative::Greater);
        assert!((t.p_value - 1.0 / 32.0).abs() < 1e-15);
        let t = sign_test(&[0.1, 0.2, 0.3, 0.1, 0.05], Alternative::TwoSided);
        assert!((t.p_value - 1.0 / 16.0).abs() < 1e-15);
    }

    #[test]
    fn four_of_five() {
        let t = sign_test(&[0.1, 0.2, -0.3, 0.1, 0.05], Alternative::Greater);
        assert!((t.p_value - 6.0 / 32.0).abs() < 1e-15);
    }

    #[test]
    fn ties_dropped() {
        let t = sign_test(&[0.0, 0.1, 0.1, 0.1, 0.1], Alternative::Greater);
        assert_eq!(t.ties, 1);
        assert!((t.p_value - 1.0 / 16.0).abs() < 1e-15);
        assert_eq!(sign_test(&[0.0], Alternative::TwoSided).p_value, 1.0);
    }
}
