//! Human-readable number formatting shared by reports and the CLI.

/// Six significant digits in fixed notation (scientific for very large or
/// very small magnitudes).
pub fn sig6(x: f64) -> String {
    sig(x, 6)
}

pub fn sig(x: f64, digits: usize) -> String {
    if !x.is_finite() {
        return x.to_string();
    }
    if x == 0.0 {
        return format!("{:.*}", digits.saturating_sub(1), 0.0);
    }
    let magnitude = x.abs().log10().floor() as i32;
    if !(-5..=15).contains(&magnitude) {
        return format!("{:.*e}", digits.saturating_sub(1), x);
    }
    let decimals = (digits as i32 - 1 - magnitude).max(0) as usize;
    let s = format!("{x:.decimals$}");
    // rounding can carry into a new digit (9.999995 -> 10.00000)
    let rounded: f64 = s.parse().unwrap_or(x);
    let new_mag = rounded.abs().log10().floor() as i32;
    if rounded != 0.0 && new_mag > magnitude {
        let decimals = (digits as i32 - 1 - new_mag).max(0) as usize;
        return format!("{rounded:.decimals$}");
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn six_significant_digits() {
        assert_eq!(sig6(0.69), "0.690000");
        assert_eq!(sig6(0.0548303), "0.0548303");
        assert_eq!(sig6(-2.94), "-2.94000");
        assert_eq!(sig6(1603.0), "1603.00");
        assert_eq!(sig6(0.0), "0.00000");
        assert_eq!(sig6(9.9999996), "10.0000");
        assert_eq!(sig6(1.5e-9), "1.50000e-9");
        assert_eq!(sig6(f64::NAN), "NaN");
    }
}
