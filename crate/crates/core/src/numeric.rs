//! Scalar-generic statistics shared by the profiler, ranking and reporting code.
//!
//! Everything here is written against [`Scalar`] so the same kernels serve
//! `f32` and `f64`. Rates are computed over exact integer ratios and only turned
//! into decimals at the edge (see [`percent_hundredths`]).

use std::fmt::Debug;

use num_rational::Ratio;
use num_traits::{Float, FromPrimitive, ToPrimitive};
use serde::{Deserialize, Serialize};

/// Floating-point scalar usable by the statistics kernels.
pub trait Scalar: Float + FromPrimitive + ToPrimitive + Debug + Default + Send + Sync + 'static {
    fn of(v: f64) -> Self {
        Self::from_f64(v).expect("finite f64 converts to scalar")
    }

    fn of_usize(v: usize) -> Self {
        Self::from_usize(v).expect("usize converts to scalar")
    }

    fn hundred() -> Self {
        Self::of(100.0)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Sort a copy of `values` ascending; NaNs are rejected by the caller contract.
pub fn sorted<T: Scalar>(values: &[T]) -> Vec<T> {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).expect("NaN in statistics input"));
    v
}

/// Quantile using the midpoint convention: with `h = (n - 1) p`, the result is
/// the mean of the order statistics at `floor(h)` and `ceil(h)`.
///
/// For `p = 0.5` this is the usual median (mean of the two central values when
/// `n` is even). `sorted_values` must already be ascending.
pub fn quantile_sorted<T: Scalar>(sorted_values: &[T], p: T) -> Option<T> {
    let n = sorted_values.len();
    if n == 0 {
        return None;
    }
    let h = T::of_usize(n - 1) * p.max(T::zero()).min(T::one());
    let lo = h.floor().to_usize().unwrap_or(0).min(n - 1);
    let hi = h.ceil().to_usize().unwrap_or(0).min(n - 1);
    let two = T::one() + T::one();
    Some((sorted_values[lo] + sorted_values[hi]) / two)
}

pub fn median<T: Scalar>(values: &[T]) -> Option<T> {
    quantile_sorted(&sorted(values), T::of(0.5))
}

pub fn mean<T: Scalar>(values: &[T]) -> Option<T> {
    if values.is_empty() {
        return None;
    }
    let sum = values.iter().fold(T::zero(), |acc, &v| acc + v);
    Some(sum / T::of_usize(values.len()))
}

/// Relative change `(before - after) / before * 100`.
///
/// Returns `None` when `before` is zero.
pub fn improvement_pct<T: Scalar>(before: T, after: T) -> Option<T> {
    if before == T::zero() {
        return None;
    }
    Some((before - after) / before * T::hundred())
}

/// Five-number summary plus Tukey whiskers for one group of values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxplotData<T> {
    pub group: String,
    pub n: usize,
    pub min: T,
    pub q1: T,
    pub median: T,
    pub q3: T,
    pub max: T,
    /// Most extreme values within 1.5 IQR of the box.
    pub whisker_low: T,
    pub whisker_high: T,
    pub outliers: Vec<T>,
}

impl<T: Scalar> BoxplotData<T> {
    pub fn from_values(group: impl Into<String>, values: &[T]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let s = sorted(values);
        let q1 = quantile_sorted(&s, T::of(0.25))?;
        let median = quantile_sorted(&s, T::of(0.5))?;
        let q3 = quantile_sorted(&s, T::of(0.75))?;
        let fence = (q3 - q1) * T::of(1.5);
        let (lo_fence, hi_fence) = (q1 - fence, q3 + fence);
        let inside: Vec<T> = s.iter().copied().filter(|v| *v >= lo_fence && *v <= hi_fence).collect();
        let outliers = s.iter().copied().filter(|v| *v < lo_fence || *v > hi_fence).collect();
        Some(Self {
            group: group.into(),
            n: s.len(),
            min: s[0],
            q1,
            median,
            q3,
            max: s[s.len() - 1],
            whisker_low: inside.first().copied().unwrap_or(q1),
            whisker_high: inside.last().copied().unwrap_or(q3),
            outliers,
        })
    }
}

/// `numerator / denominator` as a percentage in integer hundredths, rounded
/// half-up. `153/164` gives `9329`, i.e. 93.29%.
pub fn percent_hundredths(numerator: u64, denominator: u64) -> Option<u64> {
    if denominator == 0 {
        return None;
    }
    let r = Ratio::new(u128::from(numerator) * 10_000, u128::from(denominator));
    let rounded = (r + Ratio::new(1, 2)).floor().to_integer();
    u64::try_from(rounded).ok()
}

/// Format integer hundredths as a fixed two-decimal string.
pub fn format_hundredths(h: u64) -> String {
    format!("{}.{:02}", h / 100, h % 100)
}

/// Round half-up to two decimals for display of already-floating values.
pub fn round2<T: Scalar>(v: T) -> T {
    let h = T::hundred();
    (v * h + T::of(0.5)).floor() / h
}
