//! Unit conversions and the seconds-based serde representation of simulated
//! durations.

use std::time::Duration;

use crate::{Error, Result};

/// Bytes per second in one gigabit per second.
pub const BYTES_PER_SEC_PER_GBPS: f64 = 1.25e8;
/// Bytes per second in one megabit per second.
pub const BYTES_PER_SEC_PER_MBPS: f64 = 1.25e5;
/// Decimal gigabyte.
pub const BYTES_PER_GB: f64 = 1e9;

pub fn gbps_to_bytes_per_sec(gbps: f64) -> f64 {
    gbps * BYTES_PER_SEC_PER_GBPS
}

pub fn mbps_to_bytes_per_sec(mbps: f64) -> f64 {
    mbps * BYTES_PER_SEC_PER_MBPS
}

/// Converts an integer-nanosecond duration to seconds.
///
/// All seconds values reported by the crate go through this one conversion, so
/// two durations with equal nanosecond counts always map to the same `f64`.
pub fn secs(d: Duration) -> f64 {
    d.as_nanos() as f64 / 1e9
}

/// Signed nanoseconds to seconds, using the same rounding as [`secs`].
pub fn signed_secs(ns: i128) -> f64 {
    ns as f64 / 1e9
}

/// Rounds a non-negative, finite number of seconds to the nanosecond grid.
pub fn duration_from_secs(s: f64) -> Result<Duration> {
    if !s.is_finite() || s < 0.0 {
        return Err(Error::domain(format!("time {s} s is not a finite non-negative value")));
    }
    let ns = (s * 1e9).round();
    if ns >= u64::MAX as f64 {
        return Err(Error::domain(format!("time {s} s overflows the simulator clock")));
    }
    Ok(Duration::from_nanos(ns as u64))
}

pub mod serde_secs {
    use std::time::Duration;

    use serde::Serializer;

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(super::secs(*d))
    }
}

pub mod serde_opt_secs {
    use std::time::Duration;

    use serde::Serializer;

    pub fn serialize<S: Serializer>(d: &Option<Duration>, s: S) -> Result<S::Ok, S::Error> {
        match d {
            Some(d) => s.serialize_some(&super::secs(*d)),
            None => s.serialize_none(),
        }
    }
}

pub mod serde_opt_signed_secs {
    use serde::Serializer;

    pub fn serialize<S: Serializer>(ns: &Option<i128>, s: S) -> Result<S::Ok, S::Error> {
        match ns {
            Some(ns) => s.serialize_some(&super::signed_secs(*ns)),
            None => s.serialize_none(),
        }
    }
}
