//! GF(2^8) arithmetic with reduction polynomial x^8+x^4+x^3+x+1 (0x11B).
//!
//! Multiplication goes through log/antilog tables built at compile time from
//! the generator 0x03. Addition is XOR.

use std::ops::{Add, AddAssign, Div, Mul, Sub, SubAssign};
use thiserror::Error;

pub const REDUCTION_POLY: u16 = 0x11B;

/// Carry-less polynomial multiply reduced mod 0x11B. Table-free; used to
/// build the tables and as the independent oracle in tests.
pub const fn mul_slow(a: u8, b: u8) -> u8 {
    let mut acc: u16 = 0;
    let mut a = a as u16;
    let mut b = b;
    while b != 0 {
        if b & 1 != 0 {
            acc ^= a;
        }
        a <<= 1;
        if a & 0x100 != 0 {
            a ^= REDUCTION_POLY;
        }
        b >>= 1;
    }
    acc as u8
}

const fn build_tables() -> ([u8; 256], [u8; 512]) {
    let mut log = [0u8; 256];
    let mut exp = [0u8; 512];
    let mut x: u8 = 1;
    let mut i = 0;
    while i < 255 {
        exp[i] = x;
        exp[i + 255] = x;
        log[x as usize] = i as u8;
        x = mul_slow(x, 0x03);
        i += 1;
    }
    exp[510] = exp[255];
    exp[511] = exp[256];
    (log, exp)
}

const TABLES: ([u8; 256], [u8; 512]) = build_tables();
const LOG: [u8; 256] = TABLES.0;
const EXP: [u8; 512] = TABLES.1;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum GfError {
    #[error("division by zero in GF(2^8)")]
    DivisionByZero,
}

/// An element of GF(2^8).
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Gf256(pub u8);

impl Gf256 {
    pub const ZERO: Gf256 = Gf256(0);
    pub const ONE: Gf256 = Gf256(1);

    pub fn is_zero(self) -> bool {
        self.0 == 0
    }

    /// Multiplicative inverse; errors on zero.
    pub fn inv(self) -> Result<Gf256, GfError> {
        if self.0 == 0 {
            return Err(GfError::DivisionByZero);
        }
        Ok(Gf256(EXP[255 - LOG[self.0 as usize] as usize]))
    }
}

impl Add for Gf256 {
    type Output = Gf256;
    // In characteristic 2 addition is XOR.
    #[allow(clippy::suspicious_arithmetic_impl)]
    fn add(self, rhs: Gf256) -> Gf256 {
        Gf256(self.0 ^ rhs.0)
    }
}

impl AddAssign for Gf256 {
    #[allow(clippy::suspicious_op_assign_impl)]
    fn add_assign(&mut self, rhs: Gf256) {
        self.0 ^= rhs.0;
    }
}

impl Sub for Gf256 {
    type Output = Gf256;
    // Subtraction equals addition in characteristic 2.
    #[allow(clippy::suspicious_arithmetic_impl)]
    fn sub(self, rhs: Gf256) -> Gf256 {
        self + rhs
    }
}

impl SubAssign for Gf256 {
    #[allow(clippy::suspicious_op_assign_impl)]
    fn sub_assign(&mut self, rhs: Gf256) {
        *self += rhs;
    }
}

impl Mul for Gf256 {
    type Output = Gf256;
    fn mul(self, rhs: Gf256) -> Gf256 {
        if self.0 == 0 || rhs.0 == 0 {
            return Gf256::ZERO;
        }
        Gf256(EXP[LOG[self.0 as usize] as usize + LOG[rhs.0 as usize] as usize])
    }
}

impl Div for Gf256 {
    type Output = Result<Gf256, GfError>;
    #[allow(clippy::suspicious_arithmetic_impl)]
    fn div(self, rhs: Gf256) -> Result<Gf256, GfError> {
        Ok(self * rhs.inv()?)
    }
}

/// In place: `dst += coeff * src`, elementwise over byte slices.
pub fn axpy(dst: &mut [u8], coeff: Gf256, src: &[u8]) {
    debug_assert_eq!(dst.len(), src.len());
    if coeff.is_zero() {
        return;
    }
    for (d, s) in dst.iter_mut().zip(src) {
        *d ^= (coeff * Gf256(*s)).0;
    }
}

/// In place: `row *= coeff`.
pub fn scale(row: &mut [u8], coeff: Gf256) {
    for b in row.iter_mut() {
        *b = (coeff * Gf256(*b)).0;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn multiplicative_identity() {
        for a in 0..=255u8 {
            assert_eq!(Gf256(a) * Gf256::ONE, Gf256(a));
        }
    }

    #[test]
    fn small_product_without_reduction() {
        assert_eq!(Gf256(0x02) * Gf256(0x03), Gf256(0x06));
    }

    #[test]
    fn single_reduction_step() {
        // 0x80 * 0x02 = 0x100, one reduction by 0x11B leaves 0x1B.
        assert_eq!(Gf256(0x80) * Gf256(0x02), Gf256(0x1B));
    }

    #[test]
    fn table_mul_matches_slow_oracle_exhaustively() {
        for a in 0..=255u8 {
            for b in 0..=255u8 {
                assert_eq!((Gf256(a) * Gf256(b)).0, mul_slow(a, b), "{a} * {b}");
            }
        }
    }

    #[test]
    fn every_nonzero_element_has_an_inverse() {
        for a in 1..=255u8 {
            let inv = Gf256(a).inv().unwrap();
            assert_eq!(Gf256(a) * inv, Gf256::ONE, "a = {a}");
        }
    }

    #[test]
    fn inverse_is_involutive() {
        assert_eq!(Gf256::ONE.inv().unwrap(), Gf256::ONE);
        for a in 1..=255u8 {
            assert_eq!(Gf256(a).inv().unwrap().inv().unwrap(), Gf256(a));
        }
    }

    #[test]
    fn zero_has_no_inverse() {
        assert_eq!(Gf256::ZERO.inv(), Err(GfError::DivisionByZero));
    }

    #[test]
    fn distributivity_spot_checks() {
        for (a, b, c) in [(7u8, 19u8, 200u8), (255, 254, 253), (1, 2, 3)] {
            let (a, b, c) = (Gf256(a), Gf256(b), Gf256(c));
            assert_eq!(a * (b + c), a * b + a * c);
        }
    }
}
