use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::flow::FlowField;
use crate::image::{read_pnm, Point2};

/// Fraction of predictions within each threshold of the ground truth.
#[derive(Clone, Debug, PartialEq)]
pub struct PckCurve {
    pub thresholds: Vec<f64>,
    pub values: Vec<f64>,
    pub n: usize,
}

impl PckCurve {
    /// Value at threshold `theta`, if it is on the curve.
    pub fn at(&self, theta: f64) -> Option<f64> {
        self.thresholds.iter().position(|&t| t == theta).map(|i| self.values[i])
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("theta,pck\n");
        for (t, v) in self.thresholds.iter().zip(&self.values) {
            let _ = writeln!(out, "{t},{v}");
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

/// PCK with inclusive comparison `error <= theta`. Thresholds are sorted.
pub fn pck(pred: &[Point2], gt: &[Point2], thetas: &[f64]) -> Result<PckCurve> {
    if pred.len() != gt.len() {
        return Err(Error::LengthMismatch(pred.len(), gt.len()));
    }
    if pred.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut thresholds = thetas.to_vec();
    thresholds.sort_by(f64::total_cmp);
    let mut errors: Vec<f64> = pred.iter().zip(gt).map(|(p, g)| p.distance(*g)).collect();
    errors.sort_by(f64::total_cmp);
    let n = errors.len();
    let values = thresholds
        .iter()
        .map(|&t| errors.partition_point(|&e| e <= t) as f64 / n as f64)
        .collect();
    Ok(PckCurve { thresholds, values, n })
}

fn check_shapes(flow: &FlowField, gt: &FlowField, mask: &[bool]) -> Result<()> {
    if flow.width != gt.width || flow.height != gt.height {
        return Err(Error::DimensionMismatch(flow.width, flow.height, gt.width, gt.height));
    }
    if mask.len() != gt.len() {
        return Err(Error::LengthMismatch(mask.len(), gt.len()));
    }
    Ok(())
}

fn endpoint_error(flow: &FlowField, gt: &FlowField, i: usize) -> f64 {
    (flow.u[i] - gt.u[i]).hypot(flow.v[i] - gt.v[i])
}

/// Mean endpoint error over the masked pixels.
pub fn epe(flow: &FlowField, gt: &FlowField, mask: &[bool]) -> Result<f64> {
    check_shapes(flow, gt, mask)?;
    let (mut sum, mut n) = (0.0, 0usize);
    for i in (0..mask.len()).filter(|&i| mask[i]) {
        sum += endpoint_error(flow, gt, i);
        n += 1;
    }
    if n == 0 {
        return Err(Error::EmptyMask);
    }
    Ok(sum / n as f64)
}

/// Outlier rule: error above 3 px and above 5% of the true magnitude.
pub fn is_fl_outlier(error: f64, gt_magnitude: f64) -> bool {
    error > 3.0 && error > 0.05 * gt_magnitude
}

/// Fraction of masked pixels that are outliers under [`is_fl_outlier`].
pub fn fl_outlier_rate(flow: &FlowField, gt: &FlowField, mask: &[bool]) -> Result<f64> {
    check_shapes(flow, gt, mask)?;
    let (mut out, mut n) = (0usize, 0usize);
    for i in (0..mask.len()).filter(|&i| mask[i]) {
        if is_fl_outlier(endpoint_error(flow, gt, i), gt.u[i].hypot(gt.v[i])) {
            out += 1;
        }
        n += 1;
    }
    if n == 0 {
        return Err(Error::EmptyMask);
    }
    Ok(out as f64 / n as f64)
}

/// Region mask from a PGM/PPM file; nonzero pixels are in the region.
pub fn read_mask(path: impl AsRef<Path>) -> Result<(usize, usize, Vec<bool>)> {
    let img = read_pnm(path)?;
    let mask = img.data().chunks(img.channels()).map(|px| px.iter().any(|&v| v != 0.0)).collect();
    Ok((img.width(), img.height(), mask))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn flow1(u: f64, v: f64) -> FlowField {
        FlowField::constant(1, 1, u, v)
    }

    #[test]
    fn pck_examples() {
        let gt = vec![Point2::new(0.0, 0.0); 3];
        let pred = vec![Point2::new(0.0, 0.0), Point2::new(4.0, 0.0), Point2::new(6.0, 8.0)];
        let c = pck(&pred, &gt, &[10.0, 0.0, 5.0]).unwrap();
        assert_eq!(c.thresholds, vec![0.0, 5.0, 10.0]);
        assert_eq!(c.at(5.0), Some(2.0 / 3.0));
        assert_eq!(c.at(10.0), Some(1.0));
        assert_eq!(c.at(0.0), Some(1.0 / 3.0));
        assert_eq!(c.n, 3);
        assert!(matches!(pck(&[], &[], &[1.0]), Err(Error::EmptyInput)));
        assert!(matches!(pck(&pred, &gt[..2], &[1.0]), Err(Error::LengthMismatch(3, 2))));
        assert_eq!(c.to_csv(), "theta,pck\n0,0.3333333333333333\n5,0.6666666666666666\n10,1\n");
    }

    #[test]
    fn epe_examples() {
        assert_eq!(epe(&flow1(3.0, 4.0), &flow1(0.0, 0.0), &[true]).unwrap(), 5.0);
        assert_eq!(epe(&flow1(3.0, 4.0), &flow1(3.0, 4.0), &[true]).unwrap(), 0.0);
        let mut f = FlowField::constant(2, 1, 0.0, 0.0);
        f.u[1] = 3.0;
        f.v[1] = 4.0;
        assert_eq!(epe(&f, &FlowField::constant(2, 1, 0.0, 0.0), &[true, true]).unwrap(), 2.5);
        assert!(matches!(epe(&f, &f, &[false, false]), Err(Error::EmptyMask)));
    }

    #[test]
    fn fl_rule() {
        assert!(!is_fl_outlier(4.0, 100.0));
        assert!(is_fl_outlier(4.0, 10.0));
        assert!(!is_fl_outlier(3.0, 0.0));
        assert_eq!(fl_outlier_rate(&flow1(104.0, 0.0), &flow1(100.0, 0.0), &[true]).unwrap(), 0.0);
        assert_eq!(fl_outlier_rate(&flow1(14.0, 0.0), &flow1(10.0, 0.0), &[true]).unwrap(), 1.0);
        let g = FlowField::constant(3, 2, 1.0, -2.0);
        assert_eq!(fl_outlier_rate(&g, &g, &[true; 6]).unwrap(), 0.0);
    }

    proptest! {
        #[test]
        fn pck_monotone_and_reaches_one(errs in prop::collection::vec(0.0f64..50.0, 1..40), mut thetas in prop::collection::vec(0.0f64..60.0, 1..10)) {
            let gt = vec![Point2::new(0.0, 0.0); errs.len()];
            let pred: Vec<_> = errs.iter().map(|&e| Point2::new(e, 0.0)).collect();
            let max = errs.iter().cloned().fold(0.0, f64::max);
            thetas.push(max);
            let c = pck(&pred, &gt, &thetas).unwrap();
            for w in c.values.windows(2) {
                prop_assert!(w[0] <= w[1]);
            }
            prop_assert!(c.values.iter().all(|v| (0.0..=1.0).contains(v)));
            prop_assert_eq!(c.at(max), Some(1.0));
        }

        #[test]
        fn fl_rate_bounded_by_epe3_fraction(data in prop::collection::vec((-20.0f64..20.0, -20.0f64..20.0, -20.0f64..20.0, -20.0f64..20.0), 1..50)) {
            let n = data.len();
            let mut f = FlowField::constant(n, 1, 0.0, 0.0);
            let mut g = FlowField::constant(n, 1, 0.0, 0.0);
            for (i, &(a, b, c, d)) in data.iter().enumerate() {
                f.u[i] = a; f.v[i] = b; g.u[i] = c; g.v[i] = d;
            }
            let mask = vec![true; n];
            let above3 = (0..n).filter(|&i| (f.u[i] - g.u[i]).hypot(f.v[i] - g.v[i]) > 3.0).count() as f64 / n as f64;
            prop_assert!(fl_outlier_rate(&f, &g, &mask).unwrap() <= above3);
        }
    }
}
