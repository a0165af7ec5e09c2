//! Number rendering shared by every human- and machine-readable output.
//!
//! Values are rounded to twelve significant digits, printed as the shortest
//! decimal of that rounded value and padded with trailing zeros to at least
//! six significant digits. A printed table and a key-value file therefore
//! always carry identical text.

const MIN_SIGNIFICANT: usize = 6;
const MAX_SIGNIFICANT: usize = 12;

fn significant_digits(s: &str) -> usize {
    let mantissa = s.split(['e', 'E']).next().unwrap_or("");
    let digits: String = mantissa.chars().filter(char::is_ascii_digit).collect();
    let trimmed = digits.trim_start_matches('0');
    if trimmed.is_empty() {
        1
    } else {
        trimmed.len()
    }
}

fn pad(s: String) -> String {
    let missing = MIN_SIGNIFICANT.saturating_sub(significant_digits(&s));
    if missing == 0 {
        return s;
    }
    let (mantissa, exponent) = match s.find(['e', 'E']) {
        Some(i) => (&s[..i], &s[i..]),
        None => (s.as_str(), ""),
    };
    let dot = if mantissa.contains('.') { "" } else { "." };
    format!("{mantissa}{dot}{}{exponent}", "0".repeat(missing))
}

pub fn fmt_f64(x: f64) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    let x: f64 = format!("{:.*e}", MAX_SIGNIFICANT - 1, x).parse().expect("float formatting round-trips");
    let a = x.abs();
    let s = if x == 0.0 || (1e-4..1e15).contains(&a) {
        format!("{x}")
    } else {
        format!("{x:e}")
    };
    pad(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pads_short_values() {
        assert_eq!(fmt_f64(1.1015), "1.10150");
        assert_eq!(fmt_f64(0.0), "0.00000");
        assert_eq!(fmt_f64(2.0), "2.00000");
        assert_eq!(fmt_f64(-0.25), "-0.250000");
        assert_eq!(fmt_f64(1e-7), "1.00000e-7");
    }

    #[test]
    fn drops_representation_noise() {
        assert_eq!(fmt_f64((0.414 + 0.425) / 2.0 + 0.249 + 0.433), "1.10150");
        assert_eq!(fmt_f64(0.1 + 0.2), "0.300000");
    }

    #[test]
    fn keeps_twelve_digits() {
        for x in [1.0 / 3.0, 123456.789, -9.87654321e-9, 6.02e23, 0.123456789012345] {
            let s = fmt_f64(x);
            let back: f64 = s.parse().unwrap();
            assert!(((back - x) / x).abs() < 1e-11, "{s}");
            assert!(significant_digits(&s) >= 6);
        }
    }
}
