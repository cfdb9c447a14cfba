//! The "13a" tokenizer of mteval-v13a, as used by standard BLEU tooling.

use std::sync::OnceLock;

use regex::Regex;

struct Rules {
    symbols: Regex,
    period_comma_after_nondigit: Regex,
    period_comma_before_nondigit: Regex,
    dash_after_digit: Regex,
}

fn rules() -> &'static Rules {
    static RULES: OnceLock<Rules> = OnceLock::new();
    RULES.get_or_init(|| Rules {
        symbols: Regex::new(r"([\{-~\[-` -&\(-\+:-@/])").unwrap(),
        period_comma_after_nondigit: Regex::new(r"([^0-9])([\.,])").unwrap(),
        period_comma_before_nondigit: Regex::new(r"([\.,])([^0-9])").unwrap(),
        dash_after_digit: Regex::new(r"([0-9])(-)").unwrap(),
    })
}

pub fn tokenize_13a(line: &str) -> String {
    let mut s = line.replace("<skipped>", "").replace("-\n", "").replace('\n', " ");
    if s.contains('&') {
        s = s
            .replace("&quot;", "\"")
            .replace("&amp;", "&")
            .replace("&lt;", "<")
            .replace("&gt;", ">");
    }
    let s = format!(" {s} ");
    let r = rules();
    let s = r.symbols.replace_all(&s, " $1 ");
    let s = r.period_comma_after_nondigit.replace_all(&s, "$1 $2 ");
    let s = r.period_comma_before_nondigit.replace_all(&s, " $1 $2");
    let s = r.dash_after_digit.replace_all(&s, "$1 $2 ");
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn basic_rules() {
        assert_eq!(
            tokenize_13a("Hello, world! 3.5 and 1,000 - 5-6 a.b \"q\" &amp; (x)"),
            "Hello , world ! 3.5 and 1,000 - 5 - 6 a . b \" q \" & ( x )"
        );
        assert_eq!(tokenize_13a("um 56 %."), "um 56 % .");
        assert_eq!(tokenize_13a("a\tb\nc"), "a b c");
        assert_eq!(tokenize_13a("   "), "");
    }

    #[test]
    fn golden_file() {
        let input = include_str!("../../tests/data/tok13a_input.txt");
        let expected = include_str!("../../tests/data/tok13a_expected.txt");
        let got: String = input.lines().map(|l| tokenize_13a(l) + "\n").collect();
        assert_eq!(got.as_bytes(), expected.as_bytes());
    }
}
