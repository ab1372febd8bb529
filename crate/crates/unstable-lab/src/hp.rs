//! Minimal extended-precision binary floats for the covariance oracle.
//!
//! Direct state-space propagation of an unfiltered covariance grows like
//! `exp(2*lambda_1*k)` along the leading unstable mode while the quantities
//! extracted from it stay order one, so at a few hundred steps the working
//! precision must exceed the ~200 bits of dynamic range that f64 cannot
//! represent. This wraps `num_bigint::BigInt` as a mantissa/exponent pair
//! with round-to-truncation at a fixed precision; only the handful of
//! operations the oracle needs are provided.

use num_bigint::BigInt;
use num_traits::{ToPrimitive, Zero};

/// Working mantissa precision in bits.
const PRECISION: u64 = 384;

/// Extended-precision value `mant * 2^exp`.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Wide {
    mant: BigInt,
    exp: i64,
}

fn pow2(mut e: i64) -> f64 {
    let mut out = 1.0f64;
    while e > 1023 {
        out *= f64::from_bits((2046u64) << 52); // 2^1023
        e -= 1023;
    }
    while e < -1022 {
        out *= f64::from_bits(1u64 << 52); // 2^-1022
        e += 1022;
    }
    out * f64::from_bits(((e + 1023) as u64) << 52)
}

impl Wide {
    pub fn zero() -> Self {
        Wide { mant: BigInt::zero(), exp: 0 }
    }

    pub fn from_f64(v: f64) -> Self {
        assert!(v.is_finite(), "Wide::from_f64 needs finite input, got {v}");
        if v == 0.0 {
            return Wide::zero();
        }
        let bits = v.to_bits();
        let sign_negative = bits >> 63 == 1;
        let biased = ((bits >> 52) & 0x7ff) as i64;
        let frac = bits & ((1u64 << 52) - 1);
        let (mant_u, exp) = if biased == 0 {
            (frac, -1074)
        } else {
            (frac | (1u64 << 52), biased - 1075)
        };
        let mut mant = BigInt::from(mant_u);
        if sign_negative {
            mant = -mant;
        }
        Wide { mant, exp }
    }

    pub fn to_f64(&self) -> f64 {
        if self.mant.is_zero() {
            return 0.0;
        }
        let bits = self.mant.bits();
        let shift = bits.saturating_sub(53) as i64;
        let top = (&self.mant >> shift).to_i64().expect("53-bit mantissa fits i64");
        top as f64 * pow2(self.exp + shift)
    }

    fn normalize(&mut self) {
        let bits = self.mant.bits();
        if bits > PRECISION {
            let shift = (bits - PRECISION) as i64;
            self.mant = &self.mant >> shift;
            self.exp += shift;
        }
    }

    /// Position of the most significant bit relative to 2^0, for cheap
    /// magnitude comparison.
    fn magnitude(&self) -> i64 {
        self.mant.bits() as i64 + self.exp
    }

    pub fn add(&self, other: &Wide) -> Wide {
        if self.mant.is_zero() {
            return other.clone();
        }
        if other.mant.is_zero() {
            return self.clone();
        }
        let (hi, lo) = if self.magnitude() >= other.magnitude() { (self, other) } else { (other, self) };
        // The smaller operand is below the rounding error of the larger one.
        if hi.magnitude() - lo.magnitude() > PRECISION as i64 + 4 {
            return hi.clone();
        }
        let diff = hi.exp - lo.exp;
        let mut out = if diff >= 0 {
            Wide { mant: (&hi.mant << diff) + &lo.mant, exp: lo.exp }
        } else {
            Wide { mant: &hi.mant + (&lo.mant << -diff), exp: hi.exp }
        };
        out.normalize();
        out
    }

    pub fn mul(&self, other: &Wide) -> Wide {
        if self.mant.is_zero() || other.mant.is_zero() {
            return Wide::zero();
        }
        let mut out = Wide { mant: &self.mant * &other.mant, exp: self.exp + other.exp };
        out.normalize();
        out
    }

}

/// Dense row-major matrix of [`Wide`] entries.
#[derive(Debug, Clone)]
pub(crate) struct WideMatrix {
    pub rows: usize,
    pub cols: usize,
    data: Vec<Wide>,
}

impl WideMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        WideMatrix { rows, cols, data: vec![Wide::zero(); rows * cols] }
    }

    pub fn from_f64(m: &nalgebra::DMatrix<f64>) -> Self {
        let mut out = WideMatrix::zeros(m.nrows(), m.ncols());
        for r in 0..m.nrows() {
            for c in 0..m.ncols() {
                *out.get_mut(r, c) = Wide::from_f64(m[(r, c)]);
            }
        }
        out
    }

    pub fn get(&self, r: usize, c: usize) -> &Wide {
        &self.data[r * self.cols + c]
    }

    pub fn get_mut(&mut self, r: usize, c: usize) -> &mut Wide {
        &mut self.data[r * self.cols + c]
    }

    pub fn matmul(&self, other: &WideMatrix) -> WideMatrix {
        assert_eq!(self.cols, other.rows);
        let mut out = WideMatrix::zeros(self.rows, other.cols);
        for r in 0..self.rows {
            for c in 0..other.cols {
                let mut acc = Wide::zero();
                for j in 0..self.cols {
                    acc = acc.add(&self.get(r, j).mul(other.get(j, c)));
                }
                *out.get_mut(r, c) = acc;
            }
        }
        out
    }

    pub fn matmul_transpose(&self, other: &WideMatrix) -> WideMatrix {
        assert_eq!(self.cols, other.cols);
        let mut out = WideMatrix::zeros(self.rows, other.rows);
        for r in 0..self.rows {
            for c in 0..other.rows {
                let mut acc = Wide::zero();
                for j in 0..self.cols {
                    acc = acc.add(&self.get(r, j).mul(other.get(c, j)));
                }
                *out.get_mut(r, c) = acc;
            }
        }
        out
    }

    pub fn add(&self, other: &WideMatrix) -> WideMatrix {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        let mut out = WideMatrix::zeros(self.rows, self.cols);
        for i in 0..self.data.len() {
            out.data[i] = self.data[i].add(&other.data[i]);
        }
        out
    }

    /// Bilinear form `v^T M v` for an f64 vector.
    pub fn bilinear(&self, v: &nalgebra::DVector<f64>) -> Wide {
        assert_eq!(self.rows, v.len());
        let wide_v: Vec<Wide> = v.iter().map(|&x| Wide::from_f64(x)).collect();
        let mut acc = Wide::zero();
        for r in 0..self.rows {
            let mut row_acc = Wide::zero();
            for c in 0..self.cols {
                row_acc = row_acc.add(&self.get(r, c).mul(&wide_v[c]));
            }
            acc = acc.add(&row_acc.mul(&wide_v[r]));
        }
        acc
    }
}
