//! Delimited and text renderings of the pipeline artifacts.

use std::fmt::Write as _;

use causal_segments::cate::{CateTable, Decision, SegmentCateEstimate};
use causal_segments::effects::{EffectKind, EvaluationMode, RuleEffectEstimate};

/// `%g` with `digits` significant digits.
pub fn format_g(x: f64, digits: usize) -> String {
    if x.is_nan() {
        return "NA".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "Inf".into() } else { "-Inf".into() };
    }
    if x == 0.0 {
        return "0".into();
    }
    let digits = digits.max(1);
    let sci = format!("{:.*e}", digits - 1, x);
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if exp < -4 || exp >= digits as i32 {
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{}e{sign}{:02}", trim_zeros(mantissa), exp.abs())
    } else {
        let decimals = (digits as i32 - 1 - exp).max(0) as usize;
        trim_zeros(&format!("{x:.decimals$}")).to_string()
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

fn g6(x: f64) -> String {
    format_g(x, 6)
}

fn decision_label(table: &CateTable, e: &SegmentCateEstimate) -> &'static str {
    if !table.is_tested() {
        "NA"
    } else if e.decision == Decision::Treat {
        "Yes"
    } else {
        "No"
    }
}

fn csv_bytes(header: Vec<String>, rows: Vec<Vec<String>>) -> Vec<u8> {
    let mut wtr = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    wtr.write_record(&header).expect("in-memory write");
    for row in rows {
        wtr.write_record(&row).expect("in-memory write");
    }
    wtr.into_inner().expect("in-memory flush")
}

/// One row per segment; the p-value column holds the multiplicity-adjusted
/// value, `NA` where untested.
pub fn cate_table_csv(table: &CateTable) -> Vec<u8> {
    let mut header = table.columns.clone();
    header.extend(
        ["Segment Proportion", "CATE", "Lower CL", "Upper CL", "Std. Err.", "p-value", "Treat?"].map(String::from),
    );
    let rows = table
        .estimates
        .iter()
        .map(|e| {
            let mut row = e.segment.0.clone();
            row.extend([
                g6(e.proportion),
                g6(e.cate),
                g6(e.ci_lower),
                g6(e.ci_upper),
                g6(e.se),
                e.p_adjusted.map_or_else(|| "NA".into(), g6),
                decision_label(table, e).into(),
            ]);
            row
        })
        .collect();
    csv_bytes(header, rows)
}

pub fn plot_csv(table: &CateTable) -> Vec<u8> {
    let header = ["label", "cate", "ci_lower", "ci_upper", "decision"].map(String::from).to_vec();
    let rows = table
        .estimates
        .iter()
        .map(|e| {
            vec![
                e.segment.label(),
                g6(e.cate),
                g6(e.ci_lower),
                g6(e.ci_upper),
                decision_label(table, e).into(),
            ]
        })
        .collect();
    csv_bytes(header, rows)
}

pub fn json_bytes<T: serde::Serialize>(value: &T) -> Vec<u8> {
    let mut bytes = serde_json::to_vec_pretty(value).expect("serialisable artifact");
    bytes.push(b'\n');
    bytes
}

pub fn effect_label(kind: EffectKind) -> String {
    match kind {
        EffectKind::Value => "value(d)".into(),
        EffectKind::Ote { static_arm } => format!("OTE(d vs static {static_arm})"),
        EffectKind::Hte => "HTE(T vs complement)".into(),
    }
}

/// Human-readable effects summary.
pub fn effects_text(estimates: &[RuleEffectEstimate], failures: &[(String, String)]) -> String {
    let mut s = String::new();
    let mode = estimates.first().map(|e| e.evaluation_mode);
    if let Some(mode) = mode {
        let mode = match mode {
            EvaluationMode::PlugIn => "plug-in rule",
            EvaluationMode::CrossValidated => "cross-validated rule",
        };
        let _ = writeln!(s, "Evaluation: {mode}");
    }
    let _ = writeln!(
        s,
        "{:<24} {:>12} {:>12} {:>12} {:>12}",
        "Effect", "Estimate", "Std. Err.", "Lower CL", "Upper CL"
    );
    for e in estimates {
        let _ = writeln!(
            s,
            "{:<24} {:>12} {:>12} {:>12} {:>12}",
            effect_label(e.kind),
            g6(e.estimate),
            g6(e.se),
            g6(e.ci_lower),
            g6(e.ci_upper)
        );
    }
    for (label, reason) in failures {
        let _ = writeln!(s, "{label:<24} not estimated: {reason}");
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn g_format_matches_printf() {
        let cases = [
            (0.283, "0.283"),
            (-0.595, "-0.595"),
            (0.1085577, "0.108558"),
            (123456.7, "123457"),
            (1234567.0, "1.23457e+06"),
            (0.0001234, "0.0001234"),
            (0.00001234, "1.234e-05"),
            (999999.7, "1e+06"),
            (1.0, "1"),
            (100.0, "100"),
            (0.0, "0"),
            (f64::INFINITY, "Inf"),
        ];
        for (x, want) in cases {
            assert_eq!(format_g(x, 6), want, "{x}");
        }
    }
}
