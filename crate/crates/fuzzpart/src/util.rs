//! Small shared helpers: deterministic file output and content hashing.

/// FNV-1a-64 over raw bytes. Seed contents and simulated-seed identities
/// are deduplicated by this hash.
pub fn fnv1a_64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= *b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Format a float with 9 significant digits and a `.` decimal separator, so
/// golden-file comparisons are portable. Never uses exponent notation for
/// the magnitude range this crate emits.
pub fn fmt_sig9(value: f64) -> String {
    if value == 0.0 || !value.is_finite() {
        // Normalizes -0.0 as well.
        return if value == 0.0 {
            "0".to_string()
        } else {
            format!("{value}")
        };
    }
    let magnitude = value.abs().log10().floor() as i32;
    let decimals = (8 - magnitude).clamp(0, 17) as usize;
    format!("{value:.decimals$}")
}

#[cfg(test)]
mod tests {
    use super::{fmt_sig9, fnv1a_64};

    #[test]
    fn content_hash_is_stable() {
        assert_eq!(fnv1a_64(b"abc"), fnv1a_64(b"abc"));
        assert_ne!(fnv1a_64(b"abc"), fnv1a_64(b"abd"));
    }

    #[test]
    fn nine_significant_digits() {
        assert_eq!(fmt_sig9(0.0), "0");
        assert_eq!(fmt_sig9(-0.0), "0");
        assert_eq!(fmt_sig9(1.0), "1.00000000");
        assert_eq!(fmt_sig9(0.5), "0.500000000");
        assert_eq!(fmt_sig9(123.456789123), "123.456789");
        assert_eq!(fmt_sig9(0.000123456789), "0.000123456789");
        assert_eq!(fmt_sig9(987654321.0), "987654321");
        assert_eq!(fmt_sig9(-2.5), "-2.50000000");
    }
}
