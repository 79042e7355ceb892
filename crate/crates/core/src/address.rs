use std::fmt;
use std::str::FromStr;

use thiserror::Error;

/// Exclusive upper bound of a code address. The top 16 bits of a wire word
/// are reserved for tags.
pub const ADDRESS_LIMIT: u64 = 1 << 48;

/// A code address in the simulated program.
///
/// Always non-zero (zero is the absent sentinel on the wire) and below 2^48.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Address(u64);

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AddressError {
    #[error("address 0 is reserved")]
    Zero,
    #[error("address {0:#x} does not fit in 48 bits")]
    TooWide(u64),
    #[error("invalid hex address `{0}`")]
    Syntax(String),
}

impl Address {
    pub fn new(value: u64) -> Result<Self, AddressError> {
        if value == 0 {
            Err(AddressError::Zero)
        } else if value >= ADDRESS_LIMIT {
            Err(AddressError::TooWide(value))
        } else {
            Ok(Address(value))
        }
    }

    #[inline]
    pub fn get(self) -> u64 {
        self.0
    }

    /// Parses a bare hex address (no `0x` prefix).
    pub fn parse_hex(s: &str) -> Result<Self, AddressError> {
        if s.is_empty() || s.starts_with('+') || s.starts_with("0x") {
            return Err(AddressError::Syntax(s.to_string()));
        }
        let v = u64::from_str_radix(s, 16).map_err(|_| AddressError::Syntax(s.to_string()))?;
        Address::new(v)
    }
}

impl FromStr for Address {
    type Err = AddressError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Address::parse_hex(s)
    }
}

impl fmt::Display for Address {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:x}", self.0)
    }
}

impl fmt::Debug for Address {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:x}", self.0)
    }
}

/// Shorthand used throughout the tests and fixtures. Panics on invalid input.
pub fn addr(value: u64) -> Address {
    Address::new(value).expect("valid address")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bounds() {
        assert_eq!(Address::new(0), Err(AddressError::Zero));
        assert!(Address::new(ADDRESS_LIMIT - 1).is_ok());
        assert_eq!(Address::new(ADDRESS_LIMIT), Err(AddressError::TooWide(ADDRESS_LIMIT)));
    }

    #[test]
    fn hex_round_trip() {
        let a = Address::parse_hex("406416").unwrap();
        assert_eq!(a.get(), 0x406416);
        assert_eq!(a.to_string(), "406416");
        assert!(Address::parse_hex("0x10").is_err());
        assert!(Address::parse_hex("").is_err());
        assert!(Address::parse_hex("zz").is_err());
        assert!(Address::parse_hex("1000000000000").is_err());
    }
}
