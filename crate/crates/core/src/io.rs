//! Text formatting shared by every CSV writer.

/// Formats a float with 17 significant digits in scientific notation, the
/// shortest fixed-width form that round-trips every `f64`.
pub fn fmt17(x: f64) -> String {
    format!("{x:.16e}")
}
