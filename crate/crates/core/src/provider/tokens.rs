//! Approximate token counting.

/// Counts tokens the way a provider tokenizer would, or close enough for
/// enforcing context limits.
pub trait TokenCounter: Send + Sync {
    fn count(&self, text: &str) -> usize;
}

/// Word/punctuation heuristic: `ceil((words + punctuation) * numer / denom)`.
///
/// A word is a whitespace-delimited token holding at least one alphanumeric
/// character; every punctuation character counts once on top of that, so
/// `"Hello, world."` is 2 words + 2 marks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ApproxTokenCounter {
    numer: u64,
    denom: u64,
}

impl ApproxTokenCounter {
    pub const DEFAULT_SCALE: (u64, u64) = (4, 3);

    /// Scale factor `numer / denom`. Panics if `denom` is zero.
    pub fn with_scale(numer: u64, denom: u64) -> Self {
        assert!(denom > 0, "token scale denominator must be positive");
        Self { numer, denom }
    }

    /// Unscaled count: words plus punctuation marks.
    pub fn unit() -> Self {
        Self::with_scale(1, 1)
    }

    pub fn raw_units(text: &str) -> u64 {
        let words = text
            .split_whitespace()
            .filter(|w| w.chars().any(char::is_alphanumeric))
            .count() as u64;
        let marks = text.chars().filter(|c| is_punctuation(*c)).count() as u64;
        words + marks
    }
}

impl Default for ApproxTokenCounter {
    fn default() -> Self {
        let (n, d) = Self::DEFAULT_SCALE;
        Self::with_scale(n, d)
    }
}

impl TokenCounter for ApproxTokenCounter {
    fn count(&self, text: &str) -> usize {
        let units = Self::raw_units(text) * self.numer;
        units.div_ceil(self.denom) as usize
    }
}

fn is_punctuation(c: char) -> bool {
    c.is_ascii_punctuation()
        || matches!(
            c,
            '\u{2010}'
                ..='\u{2027}' | '\u{00A1}' | '\u{00AB}' | '\u{00BB}' | '\u{00BF}' | '\u{00A7}'
        )
}

/// Counts with the default heuristic.
pub fn count_tokens(text: &str) -> usize {
    ApproxTokenCounter::default().count(text)
}
