//! Time and rate helpers. The simulation clock is integer nanoseconds so
//! that identical runs replay identical event sequences bit for bit.

/// Simulation time in nanoseconds since the start of the run.
pub type TimeNs = u64;

pub const NS_PER_SEC: u64 = 1_000_000_000;

/// Converts a duration in seconds to nanoseconds, rounding half up.
pub fn secs_to_ns(seconds: f64) -> TimeNs {
    (seconds * NS_PER_SEC as f64).round() as TimeNs
}

pub fn ns_to_secs(ns: TimeNs) -> f64 {
    ns as f64 / NS_PER_SEC as f64
}

/// Wire time of a frame on a link, rounded half up to whole nanoseconds.
pub fn serialization_ns(size_bytes: u32, capacity_bps: u64) -> TimeNs {
    let bits = size_bytes as u128 * 8;
    ((bits * NS_PER_SEC as u128 + capacity_bps as u128 / 2) / capacity_bps as u128) as TimeNs
}

/// Renders a nanosecond timestamp as seconds with exactly nine fractional
/// digits, without any float rounding.
pub fn format_ns_as_secs(ns: TimeNs) -> String {
    format!("{}.{:09}", ns / NS_PER_SEC, ns % NS_PER_SEC)
}

/// Renders an integer quantity in the fixed nine-fractional-digit CSV style.
pub fn format_u64_fixed(v: u64) -> String {
    format!("{v}.000000000")
}

/// Renders a float in the fixed nine-fractional-digit CSV style.
pub fn format_f64_fixed(v: f64) -> String {
    format!("{v:.9}")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn serialization_matches_arithmetic_oracle() {
        // 1518 B * 8 / 930 Mbps = 13.058 us
        assert_eq!(serialization_ns(1518, 930_000_000), 13_058);
        // 1518 B * 8 / 10 Gbps = 1.214 us
        assert_eq!(serialization_ns(1518, 10_000_000_000), 1_214);
        assert_eq!(serialization_ns(98, 930_000_000), 843);
    }

    #[test]
    fn fixed_formatting_is_exact() {
        assert_eq!(format_ns_as_secs(0), "0.000000000");
        assert_eq!(format_ns_as_secs(30_000_500_000), "30.000500000");
        assert_eq!(format_u64_fixed(133), "133.000000000");
        assert_eq!(format_f64_fixed(0.5), "0.500000000");
    }

    #[test]
    fn secs_round_trip() {
        assert_eq!(secs_to_ns(0.0005), 500_000);
        assert_eq!(secs_to_ns(60.0), 60 * NS_PER_SEC);
    }
}
