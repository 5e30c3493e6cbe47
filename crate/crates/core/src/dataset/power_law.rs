use std::collections::BTreeMap;

use super::InteractionMatrix;

/// Number of items and users having exactly `degree` interactions.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DegreeRow {
    pub degree: usize,
    pub items: usize,
    pub users: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PowerLawReport {
    pub rows: Vec<DegreeRow>,
    /// Least-squares slope of log(frequency) against log(degree) for items.
    pub item_slope: Option<f64>,
    pub user_slope: Option<f64>,
}

/// Slope of the least-squares line through `(ln k, ln freq)` over nonzero
/// bins; `None` with fewer than two bins.
pub(crate) fn log_log_slope(histogram: &BTreeMap<usize, usize>) -> Option<f64> {
    let points: Vec<(f64, f64)> = histogram
        .iter()
        .filter(|&(&k, &f)| k > 0 && f > 0)
        .map(|(&k, &f)| ((k as f64).ln(), (f as f64).ln()))
        .collect();
    if points.len() < 2 {
        return None;
    }
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    Some(sxy / sxx)
}

/// Degree histograms of items and users over purchase events.
pub fn power_law_report(m: &InteractionMatrix) -> PowerLawReport {
    let mut item_deg = vec![0usize; m.n_items()];
    let mut user_deg = vec![0usize; m.n_users()];
    for ev in m.interactions() {
        item_deg[ev.item] += 1;
        user_deg[ev.user] += 1;
    }
    let histogram = |degs: &[usize]| {
        let mut h: BTreeMap<usize, usize> = BTreeMap::new();
        for &d in degs.iter().filter(|&&d| d > 0) {
            *h.entry(d).or_default() += 1;
        }
        h
    };
    let items = histogram(&item_deg);
    let users = histogram(&user_deg);
    let mut degrees: Vec<usize> = items.keys().chain(users.keys()).copied().collect();
    degrees.sort_unstable();
    degrees.dedup();
    let rows = degrees
        .into_iter()
        .map(|d| DegreeRow {
            degree: d,
            items: items.get(&d).copied().unwrap_or(0),
            users: users.get(&d).copied().unwrap_or(0),
        })
        .collect();
    PowerLawReport {
        rows,
        item_slope: log_log_slope(&items),
        user_slope: log_log_slope(&users),
    }
}
