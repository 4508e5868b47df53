fn is_punct(c: char) -> bool {
    c.is_ascii_punctuation() || matches!(c, '“' | '”' | '‘' | '’' | '…' | '–' | '—' | '«' | '»')
}

/// Whitespace split, then leading and trailing punctuation characters
/// become tokens of their own. Inner punctuation (`don't`, `e.g`) stays.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for word in text.split_whitespace() {
        let chars: Vec<char> = word.chars().collect();
        let mut lo = 0;
        while lo < chars.len() && is_punct(chars[lo]) {
            lo += 1;
        }
        if lo == chars.len() {
            out.extend(chars.iter().map(|c| c.to_string()));
            continue;
        }
        let mut hi = chars.len();
        while hi > lo && is_punct(chars[hi - 1]) {
            hi -= 1;
        }
        out.extend(chars[..lo].iter().map(|c| c.to_string()));
        out.push(chars[lo..hi].iter().collect());
        out.extend(chars[hi..].iter().map(|c| c.to_string()));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::tokenize;

    #[test]
    fn splits_edge_punctuation() {
        assert_eq!(tokenize("(Hello), world."), vec!["(", "Hello", ")", ",", "world", "."]);
    }

    #[test]
    fn keeps_inner_punctuation() {
        assert_eq!(tokenize("don't e.g. U.S."), vec!["don't", "e.g", ".", "U.S", "."]);
    }

    #[test]
    fn punctuation_only_word() {
        assert_eq!(tokenize("..."), vec![".", ".", "."]);
        assert!(tokenize("   ").is_empty());
    }
}
