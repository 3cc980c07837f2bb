//! Elements of the representation ring of the two-element group, in the
//! coordinates (total dimension, fixed-part dimension).
//!
//! A virtual Z2-representation is determined by the integer pair
//! `(total, fixed)`: the difference of total dimensions and the difference of
//! dimensions of the fixed (trivial isotypic) parts. Addition is
//! coordinatewise; the forgetful map to the integers keeps the total
//! coordinate; the antifixed part is `total - fixed`.

use std::fmt;
use std::iter::Sum;
use std::ops::{Add, AddAssign, Neg, Sub, SubAssign};

/// A virtual Z2-representation, written `(total, fixed)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct RepRingElement {
    /// Difference of total dimensions.
    pub total: i64,
    /// Difference of dimensions of the fixed subspaces.
    pub fixed: i64,
}

impl RepRingElement {
    pub const ZERO: RepRingElement = RepRingElement { total: 0, fixed: 0 };

    pub fn new(total: i64, fixed: i64) -> Self {
        RepRingElement { total, fixed }
    }

    /// Element with the given fixed and antifixed multiplicities.
    pub fn from_parts(fixed: i64, anti: i64) -> Self {
        RepRingElement {
            total: fixed + anti,
            fixed,
        }
    }

    /// Forgetful map to the integers (total dimension).
    pub fn forgetful(self) -> i64 {
        self.total
    }

    /// Multiplicity of the trivial (fixed) summand.
    pub fn fixed_part(self) -> i64 {
        self.fixed
    }

    /// Multiplicity of the sign (antifixed) summand.
    pub fn anti_part(self) -> i64 {
        self.total - self.fixed
    }

    pub fn is_zero(self) -> bool {
        self == Self::ZERO
    }
}

impl Add for RepRingElement {
    type Output = RepRingElement;
    fn add(self, rhs: Self) -> Self {
        RepRingElement::new(self.total + rhs.total, self.fixed + rhs.fixed)
    }
}

impl AddAssign for RepRingElement {
    fn add_assign(&mut self, rhs: Self) {
        *self = *self + rhs;
    }
}

impl Sub for RepRingElement {
    type Output = RepRingElement;
    fn sub(self, rhs: Self) -> Self {
        RepRingElement::new(self.total - rhs.total, self.fixed - rhs.fixed)
    }
}

impl SubAssign for RepRingElement {
    fn sub_assign(&mut self, rhs: Self) {
        *self = *self - rhs;
    }
}

impl Neg for RepRingElement {
    type Output = RepRingElement;
    fn neg(self) -> Self {
        RepRingElement::new(-self.total, -self.fixed)
    }
}

impl Sum for RepRingElement {
    fn sum<I: Iterator<Item = Self>>(iter: I) -> Self {
        iter.fold(Self::ZERO, Add::add)
    }
}

impl fmt::Display for RepRingElement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.total, self.fixed)
    }
}
