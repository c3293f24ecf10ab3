//! Deterministic number formatting for reports: money with 2 decimals, MW
//! with 3, `.` separator, no grouping, and no negative zero.

use crate::scalar::Scalar;

fn normalize(s: String) -> String {
    if s.starts_with('-') && s[1..].chars().all(|c| c == '0' || c == '.') {
        s[1..].to_string()
    } else {
        s
    }
}

pub fn fmt_money<S: Scalar>(v: S) -> String {
    normalize(format!("{:.2}", v))
}

pub fn fmt_mw<S: Scalar>(v: S) -> String {
    normalize(format!("{:.3}", v))
}
