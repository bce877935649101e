//! Approximate designs: finitely supported probability measures on an interval.

use std::io::{Read, Write};

use crate::error::{Error, Result};

/// Tolerance on `Σω = 1`.
pub const WEIGHT_SUM_TOL: f64 = 1e-12;

/// Default pruning threshold `ε^0.25` for double precision (≈ 1.22e-4).
pub fn default_prune_threshold() -> f64 {
    f64::EPSILON.powf(0.25)
}

/// Closed design interval `[lower, upper]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub lower: f64,
    pub upper: f64,
}

impl Interval {
    pub fn new(lower: f64, upper: f64) -> Result<Self> {
        if !lower.is_finite() || !upper.is_finite() || lower >= upper {
            return Err(Error::InvalidArgument(format!(
                "design space needs finite lower < upper, got [{lower}, {upper}]"
            )));
        }
        Ok(Self { lower, upper })
    }

    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.lower && x <= self.upper
    }

    /// `n` equispaced points including both ends.
    pub fn grid(&self, n: usize) -> Vec<f64> {
        match n {
            0 => Vec::new(),
            1 => vec![self.lower],
            _ => {
                let h = self.width() / (n - 1) as f64;
                let mut g: Vec<f64> = (0..n).map(|k| self.lower + k as f64 * h).collect();
                g[n - 1] = self.upper;
                g
            }
        }
    }
}

/// An approximate design. Support strictly increasing, weights on the simplex.
#[derive(Debug, Clone, PartialEq)]
pub struct Design {
    points: Vec<f64>,
    weights: Vec<f64>,
}

impl Design {
    /// Validating constructor: the input must already satisfy every invariant.
    pub fn new(points: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        let d = Self { points, weights };
        d.validate()?;
        Ok(d)
    }

    /// Sorts, merges exact duplicates and renormalises before validating.
    pub fn from_unsorted(points: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if points.len() != weights.len() {
            return Err(Error::InvalidArgument(format!(
                "{} points but {} weights",
                points.len(),
                weights.len()
            )));
        }
        if points.is_empty() {
            return Err(Error::InvalidArgument("design has empty support".into()));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidArgument("weights must be finite and nonnegative".into()));
        }
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return Err(Error::InvalidArgument("weights sum to zero".into()));
        }
        let mut pairs: Vec<(f64, f64)> = points.into_iter().zip(weights).collect();
        if pairs.iter().any(|(x, _)| !x.is_finite()) {
            return Err(Error::InvalidArgument("support points must be finite".into()));
        }
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut xs: Vec<f64> = Vec::with_capacity(pairs.len());
        let mut ws: Vec<f64> = Vec::with_capacity(pairs.len());
        for (x, w) in pairs {
            if xs.last() == Some(&x) {
                *ws.last_mut().unwrap() += w;
            } else {
                xs.push(x);
                ws.push(w);
            }
        }
        let total: f64 = ws.iter().sum();
        ws.iter_mut().for_each(|w| *w /= total);
        Self::new(xs, ws)
    }

    /// Uniform weights on the given points.
    pub fn uniform(points: Vec<f64>) -> Result<Self> {
        let n = points.len();
        Self::from_unsorted(points, vec![1.0; n])
    }

    pub fn point_mass(x: f64) -> Result<Self> {
        Self::new(vec![x], vec![1.0])
    }

    fn validate(&self) -> Result<()> {
        if self.points.is_empty() {
            return Err(Error::InvalidArgument("design has empty support".into()));
        }
        if self.points.len() != self.weights.len() {
            return Err(Error::InvalidArgument(format!(
                "{} points but {} weights",
                self.points.len(),
                self.weights.len()
            )));
        }
        if self.points.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidArgument("support points must be finite".into()));
        }
        if self.points.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidArgument(
                "support points must be strictly increasing".into(),
            ));
        }
        if self.weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidArgument("weights must be finite and nonnegative".into()));
        }
        let total: f64 = self.weights.iter().sum();
        if (total - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(Error::InvalidArgument(format!(
                "weights sum to {total}, not 1"
            )));
        }
        Ok(())
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.points.iter().copied().zip(self.weights.iter().copied())
    }

    pub fn check_in(&self, space: &Interval) -> Result<()> {
        match self.points.iter().find(|x| !space.contains(**x)) {
            Some(x) => Err(Error::InvalidArgument(format!(
                "support point {x} outside the design space [{}, {}]",
                space.lower, space.upper
            ))),
            None => Ok(()),
        }
    }

    /// Same support with new weights (renormalised).
    pub fn with_weights(&self, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != self.points.len() {
            return Err(Error::InvalidArgument("weight vector length mismatch".into()));
        }
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) {
            return Err(Error::InvalidArgument("weights sum to zero".into()));
        }
        Self::new(self.points.clone(), weights.iter().map(|w| w / total).collect())
    }
}

/// Merges points closer than `merge_tol` into their weighted mean, scanning
/// left to right against the running cluster location.
pub fn canonicalize(d: &Design, merge_tol: f64) -> Result<Design> {
    if d.is_empty() {
        return Err(Error::InvalidArgument("design has empty support".into()));
    }
    if !(merge_tol >= 0.0) {
        return Err(Error::InvalidArgument(format!("merge tolerance {merge_tol} < 0")));
    }
    let mut xs: Vec<f64> = Vec::with_capacity(d.len());
    let mut ws: Vec<f64> = Vec::with_capacity(d.len());
    for (x, w) in d.iter() {
        match (xs.last_mut(), ws.last_mut()) {
            (Some(cx), Some(cw)) if x - *cx < merge_tol => {
                let total = *cw + w;
                if total > 0.0 {
                    *cx = (*cx * *cw + x * w) / total;
                } else {
                    *cx = 0.5 * (*cx + x);
                }
                *cw = total;
            }
            _ => {
                xs.push(x);
                ws.push(w);
            }
        }
    }
    let total: f64 = ws.iter().sum();
    ws.iter_mut().for_each(|w| *w /= total);
    Design::new(xs, ws)
}

/// Drops support points with weight below `threshold` and renormalises.
pub fn prune(d: &Design, threshold: f64) -> Result<Design> {
    if !(0.0..1.0).contains(&threshold) {
        return Err(Error::InvalidArgument(format!(
            "prune threshold {threshold} not in [0, 1)"
        )));
    }
    let (xs, ws): (Vec<f64>, Vec<f64>) = d.iter().filter(|(_, w)| *w >= threshold).unzip();
    if xs.is_empty() {
        return Err(Error::DegenerateDesign(format!(
            "every weight is below the pruning threshold {threshold:e}"
        )));
    }
    if xs.len() == d.len() {
        return Ok(d.clone());
    }
    let total: f64 = ws.iter().sum();
    Design::new(xs, ws.iter().map(|w| w / total).collect())
}

/// `(1-α)ξ + αζ` on the union of supports. Coincident points are merged exactly.
pub fn mix(xi: &Design, zeta: &Design, alpha: f64) -> Result<Design> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::InvalidArgument(format!("mixing weight {alpha} not in [0, 1]")));
    }
    let mut pairs: Vec<(f64, f64)> = xi.iter().map(|(x, w)| (x, (1.0 - alpha) * w)).collect();
    pairs.extend(zeta.iter().map(|(x, w)| (x, alpha * w)));
    pairs.retain(|(_, w)| *w > 0.0);
    let (xs, ws) = pairs.into_iter().unzip();
    Design::from_unsorted(xs, ws)
}

/// Apportions `n` runs to the support: at least one run per point, after which
/// each remaining run goes to the point with the largest deficit `n·ω_i − n_i`
/// (ties to the lowest index).
pub fn round_to_runs(d: &Design, n: usize) -> Result<Vec<usize>> {
    let k = d.len();
    if n < k {
        return Err(Error::InvalidArgument(format!(
            "{n} runs cannot cover {k} support points"
        )));
    }
    let mut runs = vec![1usize; k];
    for _ in k..n {
        let mut best = 0;
        let mut best_deficit = f64::NEG_INFINITY;
        for (i, w) in d.weights().iter().enumerate() {
            let deficit = n as f64 * w - runs[i] as f64;
            if deficit > best_deficit {
                best = i;
                best_deficit = deficit;
            }
        }
        runs[best] += 1;
    }
    Ok(runs)
}

/// Writes `x,weight` with 17 significant digits.
pub fn write_csv<W: Write>(d: &Design, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let io = |e: csv::Error| Error::Io(e.to_string());
    w.write_record(["x", "weight"]).map_err(io)?;
    for (x, wt) in d.iter() {
        w.write_record([fmt17(x), fmt17(wt)]).map_err(io)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads an `x,weight` CSV; the result must satisfy the design invariants.
pub fn read_csv<R: Read>(input: R) -> Result<Design> {
    let mut r = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(input);
    let headers = r.headers().map_err(|e| Error::Io(e.to_string()))?.clone();
    if headers.len() != 2 || &headers[0] != "x" || &headers[1] != "weight" {
        return Err(Error::InvalidArgument(format!(
            "design CSV header must be `x,weight`, got `{}`",
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut xs = Vec::new();
    let mut ws = Vec::new();
    for (row, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| Error::InvalidArgument(format!("design CSV: {e}")))?;
        let field = |i: usize| -> Result<f64> {
            rec.get(i)
                .ok_or_else(|| Error::InvalidArgument(format!("row {}: missing column", row + 2)))?
                .parse::<f64>()
                .map_err(|e| Error::InvalidArgument(format!("row {}: {e}", row + 2)))
        };
        xs.push(field(0)?);
        ws.push(field(1)?);
    }
    Design::new(xs, ws)
}

/// 17 significant digits, scientific notation.
pub fn fmt17(v: f64) -> String {
    format!("{v:.16e}")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn d(pts: &[f64], ws: &[f64]) -> Design {
        Design::new(pts.to_vec(), ws.to_vec()).unwrap()
    }

    #[test]
    fn constructor_rejects_invariant_violations() {
        assert!(Design::new(vec![], vec![]).is_err());
        assert!(Design::new(vec![1.0, 0.0], vec![0.5, 0.5]).is_err());
        assert!(Design::new(vec![0.0, 1.0], vec![0.5, 0.4]).is_err());
        assert!(Design::new(vec![0.0, 1.0], vec![1.5, -0.5]).is_err());
        assert!(Design::new(vec![0.0, 0.0], vec![0.5, 0.5]).is_err());
    }

    #[test]
    fn canonicalize_merges_close_points() {
        let c = canonicalize(
            &Design::from_unsorted(vec![0.0, 1e-9, 1.0], vec![0.5, 0.2, 0.3]).unwrap(),
            1e-6,
        )
        .unwrap();
        assert_eq!(c.len(), 2);
        assert!(c.points()[0].abs() < 1e-9);
        assert!((c.weights()[0] - 0.7).abs() < 1e-15);
        assert_eq!(c.points()[1], 1.0);
    }

    #[test]
    fn canonicalize_identity_below_gap() {
        let x = d(&[0.0, 0.5, 1.0], &[0.2, 0.3, 0.5]);
        assert_eq!(canonicalize(&x, 0.1).unwrap(), x);
    }

    #[test]
    fn canonicalize_cascade_left_to_right() {
        let third = 1.0 / 3.0;
        let x = d(&[0.0, 0.5, 1.0], &[third, third, 1.0 - 2.0 * third]);
        let c = canonicalize(&x, 0.6).unwrap();
        assert_eq!(c.len(), 2);
        assert!((c.points()[0] - 0.25).abs() < 1e-15);
        assert!((c.weights()[0] - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(c.points()[1], 1.0);
    }

    #[test]
    fn prune_examples() {
        let x = Design::from_unsorted(vec![0.0, 5.0], vec![0.9999, 1e-5]).unwrap();
        let p = prune(&x, 1.22e-4).unwrap();
        assert_eq!(p.points(), &[0.0]);
        assert_eq!(p.weights(), &[1.0]);
        let y = d(&[0.0, 1.0], &[0.5, 0.5]);
        assert_eq!(prune(&y, 0.0).unwrap(), y);
        assert_eq!(prune(&y, 0.1).unwrap(), y);
        assert!(matches!(prune(&y, 0.9), Err(Error::DegenerateDesign(_))));
        assert!(prune(&y, 1.0).is_err());
    }

    #[test]
    fn default_threshold_value() {
        assert!((default_prune_threshold() - 1.2207e-4).abs() < 1e-7);
    }

    #[test]
    fn mix_examples() {
        let xi = d(&[0.0, 1.0], &[0.3, 0.7]);
        let zeta = d(&[0.5], &[1.0]);
        assert_eq!(mix(&xi, &zeta, 0.0).unwrap(), xi);
        let same = mix(&xi, &xi, 0.37).unwrap();
        for (a, b) in same.weights().iter().zip(xi.weights()) {
            assert!((a - b).abs() < 1e-15);
        }
        let m = mix(&d(&[0.0], &[1.0]), &d(&[1.0], &[1.0]), 0.25).unwrap();
        assert_eq!(m.points(), &[0.0, 1.0]);
        assert_eq!(m.weights(), &[0.75, 0.25]);
        assert!(mix(&xi, &zeta, 1.5).is_err());
    }

    #[test]
    fn rounding_examples() {
        assert_eq!(round_to_runs(&d(&[0.0, 0.5, 1.0], &[0.25, 0.5, 0.25]), 4).unwrap(), vec![1, 2, 1]);
        assert_eq!(round_to_runs(&d(&[3.0], &[1.0]), 7).unwrap(), vec![7]);
        let t1 = d(&[0.0, 0.441, 1.952, 10.0], &[0.209, 0.385, 0.291, 0.115]);
        assert_eq!(round_to_runs(&t1, 20).unwrap(), vec![4, 8, 6, 2]);
        assert!(round_to_runs(&t1, 3).is_err());
    }

    /// Smallest achievable `max_i |n_i/n − ω_i|` over compositions with `n_i ≥ 1`.
    fn brute_force_minimax(w: &[f64], n: usize) -> f64 {
        fn rec(w: &[f64], n: usize, left: usize, acc: &mut Vec<usize>, best: &mut f64) {
            let k = acc.len();
            if k + 1 == w.len() {
                if left >= 1 {
                    acc.push(left);
                    let dev = acc
                        .iter()
                        .zip(w)
                        .map(|(c, wi)| (*c as f64 / n as f64 - wi).abs())
                        .fold(0.0, f64::max);
                    *best = best.min(dev);
                    acc.pop();
                }
                return;
            }
            let remaining_slots = w.len() - k - 1;
            for c in 1..=left.saturating_sub(remaining_slots) {
                acc.push(c);
                rec(w, n, left - c, acc, best);
                acc.pop();
            }
        }
        let mut best = f64::INFINITY;
        rec(w, n, n, &mut Vec::new(), &mut best);
        best
    }

    #[test]
    fn rounding_oracle_on_table_design() {
        let w = [0.209, 0.385, 0.291, 0.115];
        let runs = round_to_runs(&d(&[0.0, 0.441, 1.952, 10.0], &w), 20).unwrap();
        let dev = runs
            .iter()
            .zip(&w)
            .map(|(c, wi)| (*c as f64 / 20.0 - wi).abs())
            .fold(0.0, f64::max);
        assert!((dev - brute_force_minimax(&w, 20)).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn rounding_matches_minimax_oracle(raw in prop::collection::vec(0.01f64..1.0, 1..5), extra in 0usize..10) {
            let total: f64 = raw.iter().sum();
            let w: Vec<f64> = raw.iter().map(|v| v / total).collect();
            let pts: Vec<f64> = (0..w.len()).map(|i| i as f64).collect();
            let design = Design::from_unsorted(pts, w.clone()).unwrap();
            let n = w.len() + extra;
            let runs = round_to_runs(&design, n).unwrap();
            prop_assert_eq!(runs.iter().sum::<usize>(), n);
            prop_assert!(runs.iter().all(|r| *r >= 1));
            let dev = runs.iter().zip(design.weights()).map(|(c, wi)| (*c as f64 / n as f64 - wi).abs()).fold(0.0, f64::max);
            prop_assert!(dev <= brute_force_minimax(design.weights(), n) + 1e-12);
        }

        #[test]
        fn canonicalize_and_prune_idempotent(
            pts in prop::collection::vec(0.0f64..1.0, 1..8),
            raw in prop::collection::vec(0.0f64..1.0, 8),
            tol in 0.0f64..0.2,
            thr in 0.0f64..0.2,
        ) {
            let n = pts.len();
            let mut ws: Vec<f64> = raw[..n].to_vec();
            ws[0] += 0.5;
            let x = Design::from_unsorted(pts, ws).unwrap();
            let c = canonicalize(&x, tol).unwrap();
            let cc = canonicalize(&c, tol).unwrap();
            prop_assert_eq!(c.len(), cc.len());
            for ((a, b), (u, v)) in c.iter().zip(cc.iter()) {
                prop_assert!((a - u).abs() < 1e-12 && (b - v).abs() < 1e-12);
            }
            if let Ok(p) = prune(&x, thr) {
                let pp = prune(&p, thr);
                // renormalisation can lift weights but never push one below the threshold
                prop_assert_eq!(pp.unwrap(), p);
            }
        }

        #[test]
        fn csv_round_trip_is_lossless(
            pts in prop::collection::vec(-1e3f64..1e3, 1..10),
            raw in prop::collection::vec(0.001f64..1.0, 10),
        ) {
            let n = pts.len();
            let x = Design::from_unsorted(pts, raw[..n].to_vec()).unwrap();
            let mut buf = Vec::new();
            write_csv(&x, &mut buf).unwrap();
            let y = read_csv(buf.as_slice()).unwrap();
            prop_assert_eq!(x, y);
        }
    }

    #[test]
    fn read_csv_rejects_bad_input() {
        assert!(read_csv("x,weight\n0,0.5\n1,0.4\n".as_bytes()).is_err());
        assert!(read_csv("a,b\n0,1\n".as_bytes()).is_err());
        assert!(read_csv("x,weight\n0,abc\n".as_bytes()).is_err());
        let ok = read_csv("x,weight\n0,0.25\n0.5,0.5\n1,0.25\n".as_bytes()).unwrap();
        assert_eq!(ok.len(), 3);
    }

    #[test]
    fn grid_hits_endpoints() {
        let g = Interval::new(0.0, 10.0).unwrap().grid(11);
        assert_eq!(g.len(), 11);
        assert_eq!(g[0], 0.0);
        assert_eq!(g[10], 10.0);
        assert_eq!(g[3], 3.0);
        assert!(Interval::new(1.0, 1.0).is_err());
    }
}
