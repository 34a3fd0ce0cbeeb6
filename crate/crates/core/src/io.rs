//! Plain-text number formatting shared by all table writers.

/// Float with 17 significant digits; round-trips exactly.
pub fn fmt_f64(x: f64) -> String {
    if x == 0.0 {
        // keep the sign of zero out of tables
        return "0.0000000000000000e0".to_string();
    }
    format!("{x:.16e}")
}

/// Join already formatted cells into one CSV line.
pub fn csv_line<I, S>(cells: I) -> String
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    let mut out = String::new();
    for (i, c) in cells.into_iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        out.push_str(c.as_ref());
    }
    out.push('\n');
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trips() {
        for x in [0.1, 1.0 / 3.0, -2.5e-300, 6.02e23, f64::MIN_POSITIVE] {
            assert_eq!(fmt_f64(x).parse::<f64>().unwrap(), x);
        }
        assert_eq!(fmt_f64(-0.0), fmt_f64(0.0));
    }
}
