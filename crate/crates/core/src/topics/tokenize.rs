/// English stopword list (the common NLTK set).
pub const STOPWORDS: &[&str] = &[
    "a", "about", "above", "after", "again", "against", "ain", "all", "am", "an", "and", "any",
    "are", "aren", "as", "at", "be", "because", "been", "before", "being", "below", "between",
    "both", "but", "by", "can", "couldn", "d", "did", "didn", "do", "does", "doesn", "doing",
    "don", "down", "during", "each", "few", "for", "from", "further", "had", "hadn", "has",
    "hasn", "have", "haven", "having", "he", "her", "here", "hers", "herself", "him", "himself",
    "his", "how", "i", "if", "in", "into", "is", "isn", "it", "its", "itself", "just", "ll", "m",
    "ma", "me", "mightn", "more", "most", "mustn", "my", "myself", "needn", "no", "nor", "not",
    "now", "o", "of", "off", "on", "once", "only", "or", "other", "our", "ours", "ourselves",
    "out", "over", "own", "re", "s", "same", "shan", "she", "should", "shouldn", "so", "some",
    "such", "t", "than", "that", "the", "their", "theirs", "them", "themselves", "then", "there",
    "these", "they", "this", "those", "through", "to", "too", "under", "until", "up", "ve",
    "very", "was", "wasn", "we", "were", "weren", "what", "when", "where", "which", "while",
    "who", "whom", "why", "will", "with", "won", "wouldn", "y", "you", "your", "yours",
    "yourself", "yourselves",
];

pub fn is_stopword(word: &str) -> bool {
    STOPWORDS.binary_search(&word).is_ok()
}

/// Lowercases, replaces every non-alphabetic character with a space, splits
/// on whitespace, and drops stopwords and tokens shorter than 2 characters.
pub fn tokenize(text: &str) -> Vec<String> {
    let cleaned: String = text
        .chars()
        .flat_map(char::to_lowercase)
        .map(|c| if c.is_alphabetic() { c } else { ' ' })
        .collect();
    cleaned
        .split_whitespace()
        .filter(|w| w.chars().count() >= 2 && !is_stopword(w))
        .map(str::to_string)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stopwords_sorted_for_binary_search() {
        assert!(STOPWORDS.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn simple_question() {
        assert_eq!(tokenize("Will Putin win?"), vec!["putin", "win"]);
        assert!(tokenize("").is_empty());
    }

    #[test]
    fn long_question_rule_trace() {
        let text = "By 1 January 2012 will the Iraqi government sign a security agreement \
                    that allows US troops to remain in Iraq? Yes, by 15 October 2011; \
                    otherwise the U.N. Security-Council's resolution (if any) won't matter \
                    for NATO's 3rd-party observers.";
        // Rule trace: lowercase; digits/punctuation -> spaces ("u.n." -> "u n",
        // "security-council's" -> "security council s", "won't" -> "won t",
        // "3rd-party" -> "rd party"); drop stopwords (by, will, the, a, that,
        // to, in, if, any, won, t, s, for) and 1-char tokens (u, n).
        let expected = [
            "january", "iraqi", "government", "sign", "security", "agreement", "allows", "us",
            "troops", "remain", "iraq", "yes", "october", "otherwise", "security", "council",
            "resolution", "matter", "nato", "rd", "party", "observers",
        ];
        assert_eq!(tokenize(text), expected);
    }
}
