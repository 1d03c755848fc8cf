use crate::error::{Error, Result};

/// Canonical form of an ISBN-10 or ISBN-13: hyphens and spaces removed, a
/// trailing `x` upper-cased. Fails unless the check digit is valid.
pub fn normalize_isbn(raw: &str) -> Result<String> {
    let s: String = raw
        .chars()
        .filter(|c| *c != '-' && !c.is_whitespace())
        .map(|c| c.to_ascii_uppercase())
        .collect();
    let valid = match s.len() {
        10 => isbn10_valid(s.as_bytes()),
        13 => isbn13_valid(s.as_bytes()),
        _ => false,
    };
    if valid {
        Ok(s)
    } else {
        Err(Error::Input(format!("invalid ISBN {raw:?}")))
    }
}

fn isbn10_valid(b: &[u8]) -> bool {
    let mut sum = 0u32;
    for (k, &c) in b.iter().enumerate() {
        let d = match c {
            b'0'..=b'9' => (c - b'0') as u32,
            b'X' if k == 9 => 10,
            _ => return false,
        };
        sum += (10 - k as u32) * d;
    }
    sum.is_multiple_of(11)
}

fn isbn13_valid(b: &[u8]) -> bool {
    if !b.iter().all(u8::is_ascii_digit) {
        return false;
    }
    let sum: u32 = b
        .iter()
        .enumerate()
        .map(|(k, &c)| (c - b'0') as u32 * if k % 2 == 0 { 1 } else { 3 })
        .sum();
    sum.is_multiple_of(10)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn accepts_valid_forms() {
        assert_eq!(normalize_isbn("0-306-40615-2").unwrap(), "0306406152");
        assert_eq!(
            normalize_isbn("978-0-306-40615-7").unwrap(),
            "9780306406157"
        );
        assert_eq!(normalize_isbn("080442957x").unwrap(), "080442957X");
    }

    #[test]
    fn rejects_bad_check_digits_and_shapes() {
        for bad in [
            "0306406153",
            "9780306406158",
            "03064X6152",
            "12345",
            "",
            "97803064061X7",
        ] {
            assert!(normalize_isbn(bad).is_err(), "{bad}");
        }
    }
}
