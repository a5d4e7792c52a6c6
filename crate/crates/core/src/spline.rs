//! Univariate B-splines on open knot vectors over `[0, 1]`.
//!
//! Everything downstream (surface patches, Greville quadrature, interpolation)
//! is built from the span-local evaluators in this module.

use crate::error::{Error, Result};

/// Relative tolerance used when comparing knot values for equality.
const KNOT_EPS: f64 = 1e-14;

/// An open knot vector on `[0, 1]` together with its polynomial degree.
#[derive(Debug, Clone, PartialEq)]
pub struct KnotVector {
    knots: Vec<f64>,
    degree: usize,
}

impl KnotVector {
    pub fn new(knots: Vec<f64>, degree: usize) -> Result<Self> {
        let p = degree;
        if knots.len() < 2 * (p + 1) {
            return Err(Error::InvalidKnots(format!(
                "{} knots cannot carry {} basis functions of degree {p}",
                knots.len(),
                p + 1
            )));
        }
        if knots.iter().any(|k| !k.is_finite()) {
            return Err(Error::InvalidKnots("non-finite knot".into()));
        }
        if knots.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::InvalidKnots("knots must be nondecreasing".into()));
        }
        if knots[0] != 0.0 || *knots.last().unwrap() != 1.0 {
            return Err(Error::InvalidKnots("knot vector must span [0, 1]".into()));
        }
        let mults = multiplicities(&knots);
        let (first, last) = (mults[0].1, mults[mults.len() - 1].1);
        if first != p + 1 || last != p + 1 {
            return Err(Error::InvalidKnots(format!(
                "end knots must be repeated exactly {} times (found {first} and {last})",
                p + 1
            )));
        }
        if let Some((u, m)) = mults[1..mults.len() - 1].iter().find(|(_, m)| *m > p) {
            return Err(Error::InvalidKnots(format!(
                "interior knot {u} has multiplicity {m} > degree {p}"
            )));
        }
        Ok(Self { knots, degree })
    }

    /// Open knot vector with `cells` equal knot spans.
    pub fn uniform(degree: usize, cells: usize) -> Result<Self> {
        if cells == 0 {
            return Err(Error::InvalidKnots("at least one knot span required".into()));
        }
        let mut knots = vec![0.0; degree + 1];
        knots.extend((1..cells).map(|i| i as f64 / cells as f64));
        knots.extend(std::iter::repeat(1.0).take(degree + 1));
        Self::new(knots, degree)
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    /// Number of basis functions.
    pub fn len(&self) -> usize {
        self.knots.len() - self.degree - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Distinct knot values, i.e. the Bezier breakpoints.
    pub fn breakpoints(&self) -> Vec<f64> {
        multiplicities(&self.knots).into_iter().map(|(u, _)| u).collect()
    }

    pub fn multiplicity(&self, u: f64) -> usize {
        self.knots.iter().filter(|&&k| (k - u).abs() <= KNOT_EPS).count()
    }

    /// Index `k` of the knot span with `knots[k] <= u < knots[k+1]`, clamped so
    /// that `u = 1` falls into the last nonempty span.
    pub fn find_span(&self, u: f64) -> usize {
        let p = self.degree;
        let n = self.len();
        if u >= self.knots[n] {
            return n - 1;
        }
        if u <= self.knots[p] {
            return p;
        }
        // partition_point returns the first index with knots[i] > u.
        self.knots[..=n].partition_point(|&k| k <= u) - 1
    }

    fn check_param(&self, u: f64) -> Result<()> {
        if !(0.0..=1.0).contains(&u) || u.is_nan() {
            return Err(Error::Domain(format!("parameter {u} outside [0, 1]")));
        }
        Ok(())
    }

    /// The `p + 1` nonzero basis values on the span containing `u`.
    /// Returns `(span, values)` where `values[r]` belongs to basis `span - p + r`.
    pub fn span_basis(&self, u: f64) -> (usize, Vec<f64>) {
        let span = self.find_span(u);
        (span, self.basis_on_span(span, u))
    }

    fn basis_on_span(&self, span: usize, u: f64) -> Vec<f64> {
        let p = self.degree;
        let kv = &self.knots;
        let mut n = vec![0.0; p + 1];
        let mut left = vec![0.0; p + 1];
        let mut right = vec![0.0; p + 1];
        n[0] = 1.0;
        for j in 1..=p {
            left[j] = u - kv[span + 1 - j];
            right[j] = kv[span + j] - u;
            let mut saved = 0.0;
            for r in 0..j {
                let temp = n[r] / (right[r + 1] + left[j - r]);
                n[r] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            n[j] = saved;
        }
        n
    }

    /// Span-local basis values and derivatives up to `order` (capped at `p`).
    /// Row `k` of the result holds the `k`-th derivatives of the `p + 1`
    /// functions active on the span.
    pub fn span_derivs(&self, u: f64, order: usize) -> (usize, Vec<Vec<f64>>) {
        let p = self.degree;
        let span = self.find_span(u);
        let kv = &self.knots;
        let nd = order.min(p);
        let mut ndu = vec![vec![0.0; p + 1]; p + 1];
        let mut left = vec![0.0; p + 1];
        let mut right = vec![0.0; p + 1];
        ndu[0][0] = 1.0;
        for j in 1..=p {
            left[j] = u - kv[span + 1 - j];
            right[j] = kv[span + j] - u;
            let mut saved = 0.0;
            for r in 0..j {
                // lower triangle holds knot differences
                ndu[j][r] = right[r + 1] + left[j - r];
                let temp = ndu[r][j - 1] / ndu[j][r];
                ndu[r][j] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            ndu[j][j] = saved;
        }
        let mut ders = vec![vec![0.0; p + 1]; order + 1];
        for j in 0..=p {
            ders[0][j] = ndu[j][p];
        }
        let mut a = vec![vec![0.0; p + 1]; 2];
        for r in 0..=p {
            let (mut s1, mut s2) = (0usize, 1usize);
            a[0][0] = 1.0;
            for k in 1..=nd {
                let mut d = 0.0;
                let rk = r as isize - k as isize;
                let pk = p - k;
                if r >= k {
                    a[s2][0] = a[s1][0] / ndu[pk + 1][rk as usize];
                    d = a[s2][0] * ndu[rk as usize][pk];
                }
                let j1 = if rk >= -1 { 1 } else { (-rk) as usize };
                let j2 = if r <= pk + 1 { k - 1 } else { p - r };
                for j in j1..=j2 {
                    let idx = (rk + j as isize) as usize;
                    a[s2][j] = (a[s1][j] - a[s1][j - 1]) / ndu[pk + 1][idx];
                    d += a[s2][j] * ndu[idx][pk];
                }
                if r <= pk {
                    a[s2][k] = -a[s1][k - 1] / ndu[pk + 1][r];
                    d += a[s2][k] * ndu[r][pk];
                }
                ders[k][r] = d;
                std::mem::swap(&mut s1, &mut s2);
            }
        }
        let mut factor = p as f64;
        for k in 1..=nd {
            for v in ders[k].iter_mut() {
                *v *= factor;
            }
            factor *= (p - k) as f64;
        }
        (span, ders)
    }
}

/// Distinct knot values and their multiplicities.
fn multiplicities(knots: &[f64]) -> Vec<(f64, usize)> {
    let mut out: Vec<(f64, usize)> = Vec::new();
    for &k in knots {
        match out.last_mut() {
            Some((u, m)) if (k - *u).abs() <= KNOT_EPS => *m += 1,
            _ => out.push((k, 1)),
        }
    }
    out
}

/// Values of all `n` basis functions at `u`; zero outside their support.
pub fn eval_bspline_basis(kv: &KnotVector, u: f64) -> Result<Vec<f64>> {
    kv.check_param(u)?;
    let p = kv.degree();
    let (span, local) = kv.span_basis(u);
    let mut out = vec![0.0; kv.len()];
    out[span - p..=span].copy_from_slice(&local);
    Ok(out)
}

/// Derivative table returned by [`eval_bspline_derivs`].
#[derive(Debug, Clone, PartialEq)]
pub struct BasisDerivatives {
    /// `rows[k][i]` is the `k`-th derivative of basis function `i`.
    pub rows: Vec<Vec<f64>>,
    /// Set when derivatives above the degree were requested; those rows are zero.
    pub beyond_degree: bool,
}

pub fn eval_bspline_derivs(kv: &KnotVector, u: f64, order: usize) -> Result<BasisDerivatives> {
    kv.check_param(u)?;
    let p = kv.degree();
    let (span, local) = kv.span_derivs(u, order);
    let rows = local
        .into_iter()
        .map(|row| {
            let mut full = vec![0.0; kv.len()];
            full[span - p..=span].copy_from_slice(&row);
            full
        })
        .collect();
    Ok(BasisDerivatives { rows, beyond_degree: order > p })
}

/// Greville abscissae of `kv`, strictly increasing.
#[derive(Debug, Clone, PartialEq)]
pub struct GrevilleSet {
    points: Vec<f64>,
}

impl GrevilleSet {
    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

pub fn greville_points(kv: &KnotVector) -> Result<GrevilleSet> {
    let p = kv.degree();
    if p == 0 {
        return Err(Error::InvalidKnots("Greville points need degree >= 1".into()));
    }
    let k = kv.knots();
    let points: Vec<f64> = (0..kv.len())
        .map(|i| k[i + 1..=i + p].iter().sum::<f64>() / p as f64)
        .collect();
    debug_assert!(points.windows(2).all(|w| w[1] > w[0]));
    Ok(GrevilleSet { points })
}

/// Exact integral of basis function `i` (0-based) over `[0, 1]`.
pub fn bspline_moment(kv: &KnotVector, i: usize) -> Result<f64> {
    if i >= kv.len() {
        return Err(Error::IndexOutOfRange { index: i, len: kv.len() });
    }
    let p = kv.degree();
    let k = kv.knots();
    Ok((k[i + p + 1] - k[i]) / (p + 1) as f64)
}

/// Inserts `u` once (Boehm), working on homogeneous coordinates `(w·P, w)` so
/// that the rational curve is unchanged.
pub fn insert_knot<const D: usize>(
    kv: &KnotVector,
    points: &[[f64; D]],
    weights: &[f64],
    u: f64,
) -> Result<(KnotVector, Vec<[f64; D]>, Vec<f64>)> {
    let p = kv.degree();
    let n = kv.len();
    if points.len() != n || weights.len() != n {
        return Err(Error::Shape(format!(
            "{} control points / {} weights for {n} basis functions",
            points.len(),
            weights.len()
        )));
    }
    if !(u > 0.0 && u < 1.0) {
        return Err(Error::Domain(format!("knot {u} must lie in the open interval (0, 1)")));
    }
    let m = kv.multiplicity(u);
    if m + 1 > p {
        return Err(Error::Multiplicity { knot: u, multiplicity: m, degree: p });
    }
    let k = kv.knots();
    let span = kv.find_span(u);

    let homog: Vec<([f64; D], f64)> = points
        .iter()
        .zip(weights)
        .map(|(pt, &w)| (pt.map(|c| c * w), w))
        .collect();

    let mut new_h = Vec::with_capacity(n + 1);
    for i in 0..=n {
        let h = if i + p <= span {
            homog[i]
        } else if i > span {
            homog[i - 1]
        } else {
            let alpha = (u - k[i]) / (k[i + p] - k[i]);
            let (a, wa) = homog[i];
            let (b, wb) = homog[i - 1];
            let mut c = [0.0; D];
            for d in 0..D {
                c[d] = alpha * a[d] + (1.0 - alpha) * b[d];
            }
            (c, alpha * wa + (1.0 - alpha) * wb)
        };
        new_h.push(h);
    }

    let mut knots = k.to_vec();
    knots.insert(span + 1, u);
    let new_kv = KnotVector::new(knots, p)?;
    let new_w: Vec<f64> = new_h.iter().map(|&(_, w)| w).collect();
    let new_pts = new_h.iter().map(|&(c, w)| c.map(|x| x / w)).collect();
    Ok((new_kv, new_pts, new_w))
}

/// Evaluates the rational curve `Σ w_i B_i P_i / Σ w_i B_i`.
pub fn eval_rational_curve<const D: usize>(
    kv: &KnotVector,
    points: &[[f64; D]],
    weights: &[f64],
    u: f64,
) -> Result<[f64; D]> {
    kv.check_param(u)?;
    let p = kv.degree();
    let (span, b) = kv.span_basis(u);
    let mut num = [0.0; D];
    let mut den = 0.0;
    for (r, &bv) in b.iter().enumerate() {
        let i = span - p + r;
        let wb = weights[i] * bv;
        den += wb;
        for d in 0..D {
            num[d] += wb * points[i][d];
        }
    }
    Ok(num.map(|x| x / den))
}
