use super::rules::CompiledRules;

/// A quantity written in the text, already converted to currency units.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct QuantityMatch {
    pub start: usize,
    pub end: usize,
    pub value: u128,
}

/// `number * multiplier` in exact arithmetic. `None` on overflow, on a
/// malformed number, or when the result is not a whole unit.
pub fn scale(number: &str, multiplier: u64) -> Option<u128> {
    let cleaned: String = number.chars().filter(|c| *c != ',').collect();
    let (int_part, frac_part) = match cleaned.split_once('.') {
        Some((i, f)) => (i, f),
        None => (cleaned.as_str(), ""),
    };
    if int_part.is_empty() || !int_part.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    if !frac_part.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    let frac_part = frac_part.trim_end_matches('0');
    let digits = format!("{int_part}{frac_part}");
    let mantissa: u128 = digits.parse().ok()?;
    let scaled = mantissa.checked_mul(u128::from(multiplier))?;
    let divisor = 10u128.checked_pow(u32::try_from(frac_part.len()).ok()?)?;
    (scaled % divisor == 0).then(|| scaled / divisor)
}

/// All quantities in `text`, left to right. Where patterns overlap the
/// earliest match wins, then the longest.
pub fn scan(text: &str, rules: &CompiledRules) -> Vec<QuantityMatch> {
    let mut found: Vec<(usize, usize, Option<u128>)> = Vec::new();
    for q in &rules.quantities {
        for caps in q.regex.captures_iter(text) {
            let whole = caps.get(0).expect("group 0");
            let value = caps.get(1).and_then(|n| scale(n.as_str(), q.multiplier));
            found.push((whole.start(), whole.end(), value));
        }
    }
    found.sort_by_key(|&(s, e, _)| (s, std::cmp::Reverse(e)));
    let mut out = Vec::new();
    let mut covered = 0;
    for (start, end, value) in found {
        if start < covered {
            continue;
        }
        covered = end;
        if let Some(value) = value {
            out.push(QuantityMatch { start, end, value });
        }
    }
    out
}

/// The single trade size stated in `text`. Repeating the same size is fine;
/// two different sizes, or none, give `None`.
pub fn parse_quantity(text: &str, rules: &CompiledRules) -> Option<u64> {
    let text = super::text::normalize(text);
    let mut values: Vec<u128> = scan(&text, rules).into_iter().map(|m| m.value).filter(|v| *v > 0).collect();
    values.sort_unstable();
    values.dedup();
    match values.as_slice() {
        [one] => u64::try_from(*one).ok(),
        _ => None,
    }
}
