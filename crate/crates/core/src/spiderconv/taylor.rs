//! The order-3 Taylor filter basis and its sub-families.

use crate::error::{Error, Result};

pub const NUM_MONOMIALS: usize = 20;

/// Monomial names in basis order.
pub const MONOMIAL_NAMES: [&str; NUM_MONOMIALS] = [
    "1", "x", "y", "z", "xy", "yz", "xz", "x^2", "y^2", "z^2", "xy^2", "x^2y", "y^2z", "yz^2",
    "x^2z", "xz^2", "xyz", "x^3", "y^3", "z^3",
];

/// The 20 monomials of `d = (x, y, z)` up to total degree 3, in basis order:
/// `1, x, y, z, xy, yz, xz, x², y², z², xy², x²y, y²z, yz², x²z, xz², xyz, x³, y³, z³`.
pub fn taylor_features(d: [f64; 3]) -> [f64; NUM_MONOMIALS] {
    let [x, y, z] = d;
    let (xx, yy, zz) = (x * x, y * y, z * z);
    [
        1.0,
        x,
        y,
        z,
        x * y,
        y * z,
        x * z,
        xx,
        yy,
        zz,
        x * yy,
        xx * y,
        yy * z,
        y * zz,
        xx * z,
        x * zz,
        x * y * z,
        xx * x,
        yy * y,
        zz * z,
    ]
}

/// Coefficients of one Taylor filter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TaylorCoeffs(pub [f64; NUM_MONOMIALS]);

impl TaylorCoeffs {
    pub fn zeros() -> Self {
        TaylorCoeffs([0.0; NUM_MONOMIALS])
    }

    pub fn from_slice(w: &[f64]) -> Result<Self> {
        let arr: [f64; NUM_MONOMIALS] = w.try_into().map_err(|_| {
            Error::shape(
                "taylor",
                format!("need {NUM_MONOMIALS} coefficients, got {}", w.len()),
            )
        })?;
        Ok(TaylorCoeffs(arr))
    }

    pub fn eval(&self, d: [f64; 3]) -> f64 {
        taylor_features(d)
            .iter()
            .zip(&self.0)
            .map(|(m, w)| m * w)
            .sum()
    }

    pub fn scaled(&self, alpha: f64) -> Self {
        TaylorCoeffs(self.0.map(|w| w * alpha))
    }
}

/// Which monomials a filter family may use.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaylorBasis {
    Order3,
    Order2,
    Linear,
    /// The trilinear interpolants: `1, x, y, z, xy, yz, xz, xyz`.
    Trilinear,
}

const ORDER3: [usize; 20] = [
    0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14, 15, 16, 17, 18, 19,
];
const TRILINEAR: [usize; 8] = [0, 1, 2, 3, 4, 5, 6, 16];

impl TaylorBasis {
    pub fn active(self) -> &'static [usize] {
        match self {
            TaylorBasis::Order3 => &ORDER3,
            TaylorBasis::Order2 => &ORDER3[..10],
            TaylorBasis::Linear => &ORDER3[..4],
            TaylorBasis::Trilinear => &TRILINEAR,
        }
    }

    /// 1.0 for monomials in the family, 0.0 otherwise.
    pub fn mask(self) -> [f64; NUM_MONOMIALS] {
        let mut m = [0.0; NUM_MONOMIALS];
        for &i in self.active() {
            m[i] = 1.0;
        }
        m
    }

    /// Basis features with inactive monomials zeroed.
    pub fn features(self, d: [f64; 3]) -> [f64; NUM_MONOMIALS] {
        let f = taylor_features(d);
        if self == TaylorBasis::Order3 {
            return f;
        }
        let mut out = [0.0; NUM_MONOMIALS];
        for &i in self.active() {
            out[i] = f[i];
        }
        out
    }

    pub fn name(self) -> &'static str {
        match self {
            TaylorBasis::Order3 => "taylor3",
            TaylorBasis::Order2 => "taylor2",
            TaylorBasis::Linear => "linear",
            TaylorBasis::Trilinear => "trilinear",
        }
    }
}

/// Trilinear-interpolant coefficients for values `corners[i][j][k]` at the
/// unit-cube vertex `(i, j, k)`.
///
/// The interpolation system is unitriangular over the subset lattice of
/// `{x, y, z}`: the coefficient of the monomial over variable set `S` is the
/// alternating sum of corner values over subsets of `S`. Only indices
/// `{0, 1, 2, 3, 4, 5, 6, 16}` are nonzero.
pub fn trilinear_coeffs(corners: [[[f64; 2]; 2]; 2]) -> TaylorCoeffs {
    // Monomial index by variable subset, bit 0 = x, bit 1 = y, bit 2 = z.
    const BY_SUBSET: [usize; 8] = [0, 1, 2, 4, 3, 6, 5, 16];
    let value = |s: usize| corners[s & 1][(s >> 1) & 1][(s >> 2) & 1];
    let mut w = [0.0; NUM_MONOMIALS];
    for s in 0..8usize {
        let mut acc = 0.0;
        // Enumerate subsets t of s.
        let mut t = s;
        loop {
            let sign = if (s.count_ones() - t.count_ones()) % 2 == 0 {
                1.0
            } else {
                -1.0
            };
            acc += sign * value(t);
            if t == 0 {
                break;
            }
            t = (t - 1) & s;
        }
        w[BY_SUBSET[s]] = acc;
    }
    TaylorCoeffs(w)
}
