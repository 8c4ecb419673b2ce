//! Numeric formatting shared by every machine-readable output.

use crate::engine::IterationRecord;
use crate::error::Result;

/// Format with 6 significant digits, `%g` style: trailing zeros trimmed,
/// scientific notation outside `[1e-4, 1e6)`.
pub fn fmt_sig6(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return x.to_string();
    }
    let sci = format!("{x:.5e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if !(-4..6).contains(&exp) {
        let mantissa = trim_zeros(mantissa);
        return format!("{mantissa}e{exp}");
    }
    let decimals = (5 - exp).max(0) as usize;
    trim_zeros(&format!("{x:.decimals$}")).to_string()
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

/// Round to 6 significant digits.
pub fn sig6(x: f64) -> f64 {
    if x.is_finite() {
        fmt_sig6(x).parse().unwrap_or(x)
    } else {
        x
    }
}

fn round_record(r: &IterationRecord) -> IterationRecord {
    IterationRecord {
        params: r
            .params
            .as_ref()
            .map(|p| p.iter().copied().map(sig6).collect()),
        reward_min: sig6(r.reward_min),
        reward_mean: sig6(r.reward_mean),
        reward_max: sig6(r.reward_max),
        threshold: r.threshold.map(sig6),
        weight_sum: sig6(r.weight_sum),
        acceptance_rate: sig6(r.acceptance_rate),
        max_change: sig6(r.max_change),
        ..r.clone()
    }
}

/// One JSON object per iteration, one per line.
pub fn trace_jsonl(records: &[IterationRecord]) -> Result<String> {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(&round_record(r))?);
        out.push('\n');
    }
    Ok(out)
}
