//! Answer extraction and equivalence judging.
//!
//! Covers the common shapes of math benchmark answers: integers, reduced
//! fractions, decimals, and plain strings. Set/interval/symbolic answers are
//! out of scope and fall back to trimmed lowercase string comparison.

use regex::Regex;
use std::sync::OnceLock;

use crate::domain::Verdict;

/// Normalized answer value.
#[derive(Debug, Clone, PartialEq)]
pub enum CanonicalAnswer {
    Integer(i128),
    /// Fully reduced, denominator > 1 (den == 1 collapses to Integer).
    Rational { num: i128, den: i128 },
    /// Parsed decimal with the number of fraction digits it was written with.
    Decimal { value: f64, precision: u32 },
    /// Trimmed, lowercase fallback.
    Str(String),
}

impl CanonicalAnswer {
    fn as_f64(&self) -> Option<f64> {
        match self {
            CanonicalAnswer::Integer(n) => Some(*n as f64),
            CanonicalAnswer::Rational { num, den } => Some(*num as f64 / *den as f64),
            CanonicalAnswer::Decimal { value, .. } => Some(*value),
            CanonicalAnswer::Str(_) => None,
        }
    }
}

/// Render a canonical answer back to a plain string. `normalize` of the
/// rendering yields the same canonical value.
pub fn render(answer: &CanonicalAnswer) -> String {
    match answer {
        CanonicalAnswer::Integer(n) => n.to_string(),
        CanonicalAnswer::Rational { num, den } => format!("{num}/{den}"),
        CanonicalAnswer::Decimal { value, precision } => {
            format!("{value:.*}", *precision as usize)
        }
        CanonicalAnswer::Str(s) => s.clone(),
    }
}

fn number_token_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"-?\d+(?:,\d{3})*(?:\.\d+)?").unwrap())
}

fn frac_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^\\[dt]?frac\{(-?\d+)\}\{(-?\d+)\}$").unwrap())
}

fn slash_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^(-?\d+)\s*/\s*(-?\d+)$").unwrap())
}

fn thousands_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^-?\d{1,3}(?:,\d{3})+(?:\.\d+)?$").unwrap())
}

/// Extract a candidate answer string from answer text.
///
/// Priority: content of the last `\boxed{...}` (balanced braces), then the
/// text after the last "the answer is", then the last standalone number
/// token. Absence is a value, not an error.
pub fn extract_answer(answer_text: &str) -> Option<String> {
    if let Some(inner) = last_boxed(answer_text) {
        let trimmed = inner.trim();
        if !trimmed.is_empty() {
            return Some(trimmed.to_string());
        }
    }
    if let Some(rest) = after_last_answer_is(answer_text) {
        if !rest.is_empty() {
            return Some(rest);
        }
    }
    last_standalone_number(answer_text)
}

fn last_boxed(text: &str) -> Option<&str> {
    const NEEDLE: &str = "\\boxed{";
    let start = text.rfind(NEEDLE)? + NEEDLE.len();
    let mut depth = 1usize;
    for (i, ch) in text[start..].char_indices() {
        match ch {
            '{' => depth += 1,
            '}' => {
                depth -= 1;
                if depth == 0 {
                    return Some(&text[start..start + i]);
                }
            }
            _ => {}
        }
    }
    // Tolerate a truncated box: take everything after it.
    Some(&text[start..])
}

fn after_last_answer_is(text: &str) -> Option<String> {
    let at = find_last_ascii_ci(text, "the answer is")?;
    let rest = &text[at + "the answer is".len()..];
    let first_line = rest.lines().next().unwrap_or("");
    let cleaned = strip_trailing_punct(first_line.trim()).trim().to_string();
    (!cleaned.is_empty()).then_some(cleaned)
}

fn find_last_ascii_ci(haystack: &str, needle: &str) -> Option<usize> {
    let h = haystack.as_bytes();
    let n = needle.as_bytes();
    if n.is_empty() || h.len() < n.len() {
        return None;
    }
    (0..=h.len() - n.len()).rev().find(|&i| h[i..i + n.len()].eq_ignore_ascii_case(n))
}

fn last_standalone_number(text: &str) -> Option<String> {
    let bytes = text.as_bytes();
    let mut last = None;
    for m in number_token_re().find_iter(text) {
        // Reject tokens glued to a word or a decimal tail ("x2", "v1.2b", "3rd").
        let before_ok = m.start() == 0 || {
            let b = bytes[m.start() - 1];
            !(b.is_ascii_alphanumeric() || b == b'_' || b == b'.')
        };
        let after_ok = m.end() == bytes.len() || !bytes[m.end()].is_ascii_alphabetic();
        if before_ok && after_ok {
            last = Some(m.as_str().to_string());
        }
    }
    last
}

fn strip_trailing_punct(s: &str) -> &str {
    s.trim_end_matches(|c: char| matches!(c, '.' | ',' | ';' | ':' | '!' | '?') || c.is_whitespace())
}

fn strip_wrapping(s: &str) -> String {
    let mut cur = s.trim().to_string();
    loop {
        let before = cur.clone();
        cur = strip_trailing_punct(&cur).trim().to_string();
        cur = cur.trim_matches('$').trim().to_string();
        // Unwrap one matching outer brace pair.
        if cur.len() >= 2 && cur.starts_with('{') && cur.ends_with('}') {
            let inner = &cur[1..cur.len() - 1];
            let mut depth = 0i64;
            let mut balanced = true;
            for ch in inner.chars() {
                match ch {
                    '{' => depth += 1,
                    '}' => {
                        depth -= 1;
                        if depth < 0 {
                            balanced = false;
                            break;
                        }
                    }
                    _ => {}
                }
            }
            if balanced && depth == 0 {
                cur = inner.trim().to_string();
            }
        }
        if cur == before {
            return cur;
        }
    }
}

/// Normalize a raw candidate string into a canonical answer.
///
/// Strips wrapping (whitespace, `$`, trailing punctuation, outer braces),
/// rewrites `\frac{a}{b}` and `a/b` to reduced rationals, drops thousands
/// separators, then classifies. Unparseable math falls through to the
/// string kind.
pub fn normalize(candidate: &str) -> CanonicalAnswer {
    let s = strip_wrapping(candidate);

    if let Some(caps) = frac_re().captures(&s) {
        if let Some(r) = make_rational(&caps[1], &caps[2]) {
            return r;
        }
    }
    if let Some(caps) = slash_re().captures(&s) {
        if let Some(r) = make_rational(&caps[1], &caps[2]) {
            return r;
        }
    }

    let digits = if thousands_re().is_match(&s) { s.replace(',', "") } else { s.clone() };

    if Regex::new(r"^-?\d+$").unwrap().is_match(&digits) {
        if let Ok(n) = digits.parse::<i128>() {
            return CanonicalAnswer::Integer(n);
        }
    }
    if let Some(caps) = Regex::new(r"^(-?)(\d*)\.(\d+)$").unwrap().captures(&digits) {
        let precision = caps[3].len() as u32;
        let text = format!(
            "{}{}.{}",
            &caps[1],
            if caps[2].is_empty() { "0" } else { &caps[2] },
            &caps[3]
        );
        if let Ok(value) = text.parse::<f64>() {
            return CanonicalAnswer::Decimal { value, precision };
        }
    }

    CanonicalAnswer::Str(s.to_lowercase())
}

fn make_rational(num: &str, den: &str) -> Option<CanonicalAnswer> {
    let mut num: i128 = num.parse().ok()?;
    let mut den: i128 = den.parse().ok()?;
    if den == 0 {
        return None;
    }
    if den < 0 {
        num = -num;
        den = -den;
    }
    let g = gcd(num.unsigned_abs(), den.unsigned_abs()) as i128;
    if g > 0 {
        num /= g;
        den /= g;
    }
    if den == 1 {
        Some(CanonicalAnswer::Integer(num))
    } else {
        Some(CanonicalAnswer::Rational { num, den })
    }
}

fn gcd(mut a: u128, mut b: u128) -> u128 {
    while b != 0 {
        let t = a % b;
        a = b;
        b = t;
    }
    a
}

const DECIMAL_REL_TOL: f64 = 1e-9;

fn approx_eq(a: f64, b: f64) -> bool {
    if a == b {
        return true;
    }
    (a - b).abs() <= DECIMAL_REL_TOL * a.abs().max(b.abs())
}

fn equivalent(a: &CanonicalAnswer, b: &CanonicalAnswer) -> bool {
    use CanonicalAnswer::*;
    match (a, b) {
        (Integer(x), Integer(y)) => x == y,
        (Rational { num: n1, den: d1 }, Rational { num: n2, den: d2 }) => n1 == n2 && d1 == d2,
        (Integer(x), Rational { num, den }) | (Rational { num, den }, Integer(x)) => {
            *den == 1 && num == x
        }
        (Str(x), Str(y)) => x == y,
        (Str(_), _) | (_, Str(_)) => false,
        // At least one side is a decimal: compare numerically.
        _ => match (a.as_f64(), b.as_f64()) {
            (Some(x), Some(y)) => approx_eq(x, y),
            _ => false,
        },
    }
}

/// Judge a predicted answer against the gold one.
///
/// Integer and rational kinds compare exactly; decimals within a relative
/// tolerance of 1e-9; strings after normalization. An absent prediction is
/// unverifiable (scored as not correct downstream).
pub fn judge(predicted: Option<&CanonicalAnswer>, gold: &CanonicalAnswer) -> Verdict {
    match predicted {
        None => Verdict::Unverifiable,
        Some(p) => {
            if equivalent(p, gold) {
                Verdict::Correct
            } else {
                Verdict::Incorrect
            }
        }
    }
}

/// Extract, normalize, and judge in one step.
pub fn judge_answer_text(answer_text: &str, gold_answer: &str) -> (Option<String>, Verdict) {
    let gold = normalize(gold_answer);
    match extract_answer(answer_text) {
        None => (None, Verdict::Unverifiable),
        Some(candidate) => {
            let verdict = judge(Some(&normalize(&candidate)), &gold);
            (Some(candidate), verdict)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn boxed_literal() {
        assert_eq!(extract_answer("thus \\boxed{72}.").as_deref(), Some("72"));
    }

    #[test]
    fn boxed_nesting_balances() {
        assert_eq!(
            extract_answer("so \\boxed{\\frac{1}{2}}").as_deref(),
            Some("\\frac{1}{2}")
        );
    }

    #[test]
    fn last_boxed_wins() {
        assert_eq!(
            extract_answer("\\boxed{1} then corrected: \\boxed{2}").as_deref(),
            Some("2")
        );
    }

    #[test]
    fn answer_is_fallback() {
        assert_eq!(extract_answer("The answer is 3/4.").as_deref(), Some("3/4"));
    }

    #[test]
    fn last_number_fallback() {
        assert_eq!(extract_answer("we get 10 then 30").as_deref(), Some("30"));
        assert_eq!(extract_answer("totals $1,024.").as_deref(), Some("1,024"));
    }

    #[test]
    fn glued_digits_are_not_standalone() {
        assert_eq!(extract_answer("see v2 docs").as_deref(), None);
        assert_eq!(extract_answer("the 3rd time, total 12").as_deref(), Some("12"));
    }

    #[test]
    fn no_candidate_is_absent() {
        assert_eq!(extract_answer("I cannot determine this."), None);
    }

    #[test]
    fn normalize_frac() {
        assert_eq!(
            normalize("\\frac{1}{2}"),
            CanonicalAnswer::Rational { num: 1, den: 2 }
        );
        assert_eq!(normalize("\\frac{4}{2}"), CanonicalAnswer::Integer(2));
        assert_eq!(
            normalize("\\frac{-2}{-4}"),
            CanonicalAnswer::Rational { num: 1, den: 2 }
        );
    }

    #[test]
    fn normalize_thousands() {
        assert_eq!(normalize("1,024"), CanonicalAnswer::Integer(1024));
    }

    #[test]
    fn normalize_decimal_keeps_precision() {
        assert_eq!(
            normalize("0.50"),
            CanonicalAnswer::Decimal { value: 0.5, precision: 2 }
        );
    }

    #[test]
    fn normalize_strips_wrapping() {
        assert_eq!(normalize(" $72$. "), CanonicalAnswer::Integer(72));
        assert_eq!(normalize("{72}"), CanonicalAnswer::Integer(72));
    }

    #[test]
    fn normalize_falls_back_to_string() {
        assert_eq!(
            normalize("\\sqrt{2}/2"),
            CanonicalAnswer::Str("\\sqrt{2}/2".into())
        );
    }

    #[test]
    fn judge_rational_decimal_coercion() {
        let half = normalize("1/2");
        let point_five = normalize("0.5");
        assert_eq!(judge(Some(&half), &point_five), Verdict::Correct);
        assert_eq!(judge(Some(&point_five), &half), Verdict::Correct);
    }

    #[test]
    fn judge_incorrect_and_unverifiable() {
        assert_eq!(
            judge(Some(&normalize("73")), &normalize("72")),
            Verdict::Incorrect
        );
        assert_eq!(judge(None, &normalize("72")), Verdict::Unverifiable);
    }

    #[test]
    fn normalize_idempotent_through_render() {
        for raw in ["1/2", "0.50", "1,024", "-3", "\\frac{3}{9}", "some words"] {
            let once = normalize(raw);
            let twice = normalize(&render(&once));
            assert_eq!(once, twice, "idempotence failed for {raw}");
        }
    }

    #[test]
    fn trailing_punctuation_does_not_flip_verdict() {
        let gold = normalize("72");
        for raw in ["72", "72.", "72 ", "72?!", "$72$."] {
            assert_eq!(judge(Some(&normalize(raw)), &gold), Verdict::Correct, "{raw}");
        }
    }

    #[test]
    fn judge_answer_text_end_to_end() {
        let (cand, verdict) = judge_answer_text("steps... thus \\boxed{72}.", "72");
        assert_eq!(cand.as_deref(), Some("72"));
        assert_eq!(verdict, Verdict::Correct);
    }
}
