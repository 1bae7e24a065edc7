//! Text formatting shared by every file writer.

/// Decimal text with 17 significant digits; round-trips any f64 exactly.
pub fn f17(x: f64) -> String {
    if x == 0.0 {
        // Keep the sign of negative zero out of output files.
        "0.0000000000000000e0".to_string()
    } else {
        format!("{x:.16e}")
    }
}
