use crate::image::Point2;
use crate::matching::{DenseMatches, MatchRecord};

/// Keeps valid forward matches `x -> x'` whose backward match at `round(x')`
/// lands within `t` pixels of `x`. Matches whose `x'` falls off the backward
/// grid are dropped.
pub fn forward_backward_filter(fwd: &DenseMatches, bwd: &DenseMatches, t: f64) -> Vec<MatchRecord> {
    fwd.matches
        .iter()
        .filter(|m| m.valid)
        .filter(|m| {
            let back = Point2::new(m.refined.x.round(), m.refined.y.round());
            bwd.lookup(back)
                .is_some_and(|b| b.valid && b.refined.distance(m.query) <= t)
        })
        .map(MatchRecord::from)
        .collect()
}

/// Keeps matches whose displacement lies in `[-w, w]` on both axes.
pub fn motion_window_filter(matches: &[MatchRecord], w: f64) -> Vec<MatchRecord> {
    matches
        .iter()
        .filter(|m| {
            let (u, v) = m.displacement();
            u.abs() <= w && v.abs() <= w
        })
        .copied()
        .collect()
}
