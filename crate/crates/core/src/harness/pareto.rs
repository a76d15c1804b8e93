//! Pareto dominance over (quality, cost) points: quality higher is better,
//! cost lower is better.

use crate::nn::PrecisionAssignment;

#[derive(Debug, Clone)]
pub struct ParetoPoint {
    pub assignment: PrecisionAssignment,
    /// Accuracy fraction (or another higher-is-better metric).
    pub quality: f64,
    /// Modeled or measured seconds (or bytes); lower is better.
    pub cost: f64,
    pub dominated: bool,
}

/// `(q1, c1)` dominates `(q2, c2)` when it is at least as good in both
/// dimensions and strictly better in one.
pub fn dominates(q1: f64, c1: f64, q2: f64, c2: f64) -> bool {
    q1 >= q2 && c1 <= c2 && (q1 > q2 || c1 < c2)
}

/// Set the `dominated` flag on every point; the frontier is the rest.
pub fn mark_frontier(points: &mut [ParetoPoint]) {
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&a, &b| {
        points[a]
            .cost
            .total_cmp(&points[b].cost)
            .then(points[b].quality.total_cmp(&points[a].quality))
    });
    let mut best_quality = f64::NEG_INFINITY;
    let mut best_cost = f64::INFINITY;
    for &i in &order {
        let p = &mut points[i];
        p.dominated = best_quality > p.quality
            || (best_quality == p.quality && best_cost < p.cost);
        if p.quality > best_quality {
            best_quality = p.quality;
            best_cost = p.cost;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn point(q: f64, c: f64) -> ParetoPoint {
        ParetoPoint {
            assignment: PrecisionAssignment::all_float(1),
            quality: q,
            cost: c,
            dominated: false,
        }
    }

    /// O(m^2) dominance oracle.
    fn oracle(points: &[ParetoPoint]) -> Vec<bool> {
        points
            .iter()
            .map(|p| {
                points
                    .iter()
                    .any(|q| dominates(q.quality, q.cost, p.quality, p.cost))
            })
            .collect()
    }

    #[test]
    fn single_point_is_frontier() {
        let mut pts = vec![point(0.5, 1.0)];
        mark_frontier(&mut pts);
        assert!(!pts[0].dominated);
    }

    #[test]
    fn simple_dominance() {
        let mut pts = vec![point(0.9, 1.0), point(0.8, 2.0), point(0.95, 0.5)];
        mark_frontier(&mut pts);
        assert!(pts[0].dominated);
        assert!(pts[1].dominated);
        assert!(!pts[2].dominated);
    }

    #[test]
    fn duplicates_stay_on_frontier() {
        let mut pts = vec![point(0.9, 1.0), point(0.9, 1.0)];
        mark_frontier(&mut pts);
        assert!(!pts[0].dominated);
        assert!(!pts[1].dominated);
    }

    #[test]
    fn matches_quadratic_oracle_on_random_points() {
        let mut rng = StdRng::seed_from_u64(70);
        for _ in 0..50 {
            let n = rng.random_range(1..60);
            let mut pts: Vec<ParetoPoint> = (0..n)
                .map(|_| {
                    point(
                        (rng.random_range(0..10) as f64) / 10.0, // ties likely
                        (rng.random_range(0..10) as f64) / 2.0,
                    )
                })
                .collect();
            mark_frontier(&mut pts);
            let expect = oracle(&pts);
            for (p, e) in pts.iter().zip(&expect) {
                assert_eq!(p.dominated, *e, "q={} c={}", p.quality, p.cost);
            }
        }
    }
}
