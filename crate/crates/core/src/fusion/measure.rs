//! Sugeno λ-measures and the Choquet integral.

use crate::error::{Error, Result};

/// Densities summing to one within this tolerance give the additive measure.
const ADDITIVE_TOL: f64 = 1e-12;
/// Open-bracket margin kept away from -1 and 0.
const BRACKET_MARGIN: f64 = 1e-12;
/// Required |∏(1+λg) − (1+λ)|, scaled by |1+λ| once that exceeds one.
pub const RESIDUAL_TOL: f64 = 1e-10;

/// `∏(1 + λ gᵢ) − (1 + λ)`
pub fn lambda_residual(densities: &[f64], lambda: f64) -> f64 {
    densities.iter().map(|g| 1.0 + lambda * g).product::<f64>() - (1.0 + lambda)
}

fn residual_slope(densities: &[f64], lambda: f64) -> f64 {
    let mut slope = 0.0;
    for (i, gi) in densities.iter().enumerate() {
        let rest: f64 = densities
            .iter()
            .enumerate()
            .filter(|(k, _)| *k != i)
            .map(|(_, g)| 1.0 + lambda * g)
            .product();
        slope += gi * rest;
    }
    slope - 1.0
}

/// Solves `∏(1 + λ gᵢ) = 1 + λ` for the unique root `λ > -1`, `λ ≠ 0`
/// (or `λ = 0` when the densities already sum to one).
///
/// Bisection on a sign-changing bracket, then a Newton step that is kept
/// only if it lowers the residual.
pub fn solve_lambda(densities: &[f64]) -> Result<f64> {
    if densities.len() < 2 {
        return Err(Error::Domain(format!(
            "need at least 2 densities, got {}",
            densities.len()
        )));
    }
    if let Some(g) = densities.iter().find(|g| !(**g > 0.0 && **g < 1.0)) {
        return Err(Error::Domain(format!("density {g} outside (0, 1)")));
    }
    let sum: f64 = densities.iter().sum();
    if (sum - 1.0).abs() <= ADDITIVE_TOL {
        return Ok(0.0);
    }
    let r = |l: f64| lambda_residual(densities, l);

    // `lo` keeps r > 0 and `hi` keeps r < 0 in both branches.
    let (mut a, mut b) = if sum > 1.0 {
        let (lo, hi) = (-1.0 + BRACKET_MARGIN, -BRACKET_MARGIN);
        if r(lo) <= 0.0 {
            return Ok(lo);
        }
        if r(hi) >= 0.0 {
            return Ok(hi / 2.0);
        }
        (lo, hi)
    } else {
        let lo = BRACKET_MARGIN;
        if r(lo) >= 0.0 {
            return Ok(lo / 2.0);
        }
        let mut hi = 1.0;
        while r(hi) <= 0.0 {
            hi *= 2.0;
            if !hi.is_finite() || hi > 1e300 {
                return Err(Error::Numeric(format!(
                    "no upper bracket for densities {densities:?}"
                )));
            }
        }
        (hi, lo)
    };
    // a: positive residual end, b: negative residual end

    for _ in 0..4096 {
        let mid = a + (b - a) / 2.0;
        if mid == a || mid == b {
            break;
        }
        let rm = r(mid);
        if rm == 0.0 {
            a = mid;
            b = mid;
            break;
        }
        if rm > 0.0 {
            a = mid;
        } else {
            b = mid;
        }
    }
    let mut lambda = if r(a).abs() <= r(b).abs() { a } else { b };

    let slope = residual_slope(densities, lambda);
    if slope != 0.0 {
        let polished = lambda - r(lambda) / slope;
        if polished > -1.0 && polished.is_finite() && r(polished).abs() < r(lambda).abs() {
            lambda = polished;
        }
    }

    let res = r(lambda).abs();
    if res > RESIDUAL_TOL * (1.0 + lambda).abs().max(1.0) {
        return Err(Error::Numeric(format!(
            "λ solve for {densities:?} stopped at residual {res:e}"
        )));
    }
    Ok(lambda)
}

/// A Sugeno λ-measure over classifiers `0..densities.len()`.
#[derive(Debug, Clone, PartialEq)]
pub struct FuzzyMeasure {
    densities: Vec<f64>,
    lambda: f64,
}

impl FuzzyMeasure {
    pub fn new(densities: Vec<f64>) -> Result<Self> {
        let lambda = solve_lambda(&densities)?;
        Ok(Self { densities, lambda })
    }

    pub fn densities(&self) -> &[f64] {
        &self.densities
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn len(&self) -> usize {
        self.densities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.densities.is_empty()
    }

    /// `g(A ∪ {x}) = g(A) + gˣ + λ g(A) gˣ`
    fn extend(&self, acc: f64, i: usize) -> f64 {
        let gx = self.densities[i];
        acc + gx + self.lambda * acc * gx
    }

    /// Measure of a set of classifier indices (duplicates ignored).
    pub fn measure_of_subset(&self, subset: &[usize]) -> Result<f64> {
        let mut idx = subset.to_vec();
        idx.sort_unstable();
        idx.dedup();
        if let Some(&bad) = idx.iter().find(|&&i| i >= self.densities.len()) {
            return Err(Error::Domain(format!(
                "classifier index {bad} out of range 0..{}",
                self.densities.len()
            )));
        }
        Ok(idx.iter().fold(0.0, |acc, &i| self.extend(acc, i)))
    }
}

/// Choquet integral of per-classifier supports `f` against `measure`.
///
/// With classifiers sorted ascending by support (ties by index) and
/// `A₍ᵢ₎` the set of the i-th smallest and everything above it, the value is
/// `Σ (f₍ᵢ₎ − f₍ᵢ₋₁₎) g(A₍ᵢ₎)` with `f₍₀₎ = 0`.
pub fn choquet_integral(f: &[f64], measure: &FuzzyMeasure) -> Result<f64> {
    if f.len() != measure.len() {
        return Err(Error::Domain(format!(
            "{} support values for a measure over {} classifiers",
            f.len(),
            measure.len()
        )));
    }
    if let Some(v) = f.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::Domain(format!("support value {v} outside [0, 1]")));
    }
    let mut order: Vec<usize> = (0..f.len()).collect();
    order.sort_by(|&a, &b| f[a].total_cmp(&f[b]).then(a.cmp(&b)));

    // g(A₍ᵢ₎) built from the largest support downwards
    let mut tail = vec![0.0; order.len()];
    let mut acc = 0.0;
    for (pos, &i) in order.iter().enumerate().rev() {
        acc = measure.extend(acc, i);
        tail[pos] = acc;
    }
    let mut prev = 0.0;
    let mut total = 0.0;
    for (pos, &i) in order.iter().enumerate() {
        total += (f[i] - prev) * tail[pos];
        prev = f[i];
    }
    Ok(total)
}
