/// Rule-based tweet tokenizer.
///
/// Lowercases, splits on whitespace and separates punctuation into single
/// character tokens. Any `@mention` becomes `@user`; any `#tag` becomes the
/// two tokens `#`, `hashtag`. Apostrophes between word characters stay inside
/// the word (`don't`).
pub fn tokenize(raw: &str) -> Vec<String> {
    let chars: Vec<char> = raw.chars().flat_map(char::to_lowercase).collect();
    let mut out = Vec::new();
    let mut word = String::new();
    let mut i = 0;
    let is_word = |c: char| c.is_alphanumeric() || c == '_';

    let flush = |word: &mut String, out: &mut Vec<String>| {
        if !word.is_empty() {
            out.push(std::mem::take(word));
        }
    };

    while i < chars.len() {
        let c = chars[i];
        let next = chars.get(i + 1).copied();
        if c.is_whitespace() {
            flush(&mut word, &mut out);
            i += 1;
        } else if is_word(c) {
            word.push(c);
            i += 1;
        } else if (c == '@' || c == '#') && word.is_empty() && next.is_some_and(is_word) {
            out.push(if c == '@' { "@user".into() } else { "#".into() });
            if c == '#' {
                out.push("hashtag".into());
            }
            i += 1;
            while i < chars.len() && is_word(chars[i]) {
                i += 1;
            }
        } else if c == '\'' && !word.is_empty() && next.is_some_and(char::is_alphanumeric) {
            word.push(c);
            i += 1;
        } else {
            flush(&mut word, &mut out);
            out.push(c.to_string());
            i += 1;
        }
    }
    flush(&mut word, &mut out);
    out
}

/// Joins tokens back into the canonical single-space text form.
pub fn detokenize<S: AsRef<str>>(tokens: &[S]) -> String {
    tokens
        .iter()
        .map(AsRef::as_ref)
        .collect::<Vec<_>>()
        .join(" ")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn mentions_and_punctuation() {
        assert_eq!(
            tokenize("@Alice ur prolly tired now, arent u?"),
            ["@user", "ur", "prolly", "tired", "now", ",", "arent", "u", "?"]
        );
    }

    #[test]
    fn empty_input() {
        assert!(tokenize("").is_empty());
        assert!(tokenize("   \t\n").is_empty());
    }

    #[test]
    fn hashtags_are_normalized() {
        assert_eq!(
            tokenize("Check #WinterSale NOW!!"),
            ["check", "#", "hashtag", "now", "!", "!"]
        );
    }

    #[test]
    fn apostrophes_stay_inside_words() {
        assert_eq!(tokenize("I don't know."), ["i", "don't", "know", "."]);
        assert_eq!(tokenize("'quoted'"), ["'", "quoted", "'"]);
    }

    #[test]
    fn bare_symbols_are_kept() {
        assert_eq!(tokenize("@ # x@y"), ["@", "#", "x", "@", "y"]);
    }

    proptest! {
        #[test]
        fn idempotent_on_joined_output(s in "[ a-zA-Z0-9@#'.,!?:()_-]{0,60}") {
            let once = tokenize(&s);
            let twice = tokenize(&detokenize(&once));
            prop_assert_eq!(once, twice);
        }
    }
}
