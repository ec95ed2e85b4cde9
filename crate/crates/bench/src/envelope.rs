//! Lower (Pareto) envelope of (time, MSE) points, grouped by algorithm.

use crate::io::ResultRow;

/// One candidate point: a timing/error pair with its configuration tag.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvelopePoint {
    pub time_s: f64,
    pub mse: f64,
    /// Group key; envelopes are computed per distinct value.
    pub group: String,
    /// Tie-break tag, lexicographic.
    pub tag: String,
}

impl EnvelopePoint {
    pub fn from_result(row: &ResultRow) -> Self {
        Self {
            time_s: row.time_s,
            mse: row.mse,
            group: row.alg.clone(),
            tag: row.cell_key(),
        }
    }
}

/// Per group: the Pareto-minimal points sorted by time. A point is dropped
/// when another point is at least as good in both coordinates (ties broken
/// by (time, mse, tag), first survivor wins).
pub fn lower_envelope(points: &[EnvelopePoint]) -> Vec<EnvelopePoint> {
    let mut groups: Vec<String> = points.iter().map(|p| p.group.clone()).collect();
    groups.sort();
    groups.dedup();

    let mut out = Vec::new();
    for group in groups {
        let mut members: Vec<&EnvelopePoint> =
            points.iter().filter(|p| p.group == group).collect();
        members.sort_by(|a, b| {
            a.time_s
                .total_cmp(&b.time_s)
                .then(a.mse.total_cmp(&b.mse))
                .then(a.tag.cmp(&b.tag))
        });
        let mut best = f64::INFINITY;
        for p in members {
            if p.mse < best {
                best = p.mse;
                out.push(p.clone());
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pt(time_s: f64, mse: f64, tag: &str) -> EnvelopePoint {
        EnvelopePoint {
            time_s,
            mse,
            group: "a".into(),
            tag: tag.into(),
        }
    }

    #[test]
    fn drops_dominated_points() {
        let points = vec![pt(1.0, 10.0, "x"), pt(2.0, 5.0, "y"), pt(3.0, 6.0, "z")];
        let kept = lower_envelope(&points);
        assert_eq!(kept.len(), 2);
        assert_eq!(kept[0].tag, "x");
        assert_eq!(kept[1].tag, "y");
    }

    #[test]
    fn single_point_survives() {
        let kept = lower_envelope(&[pt(1.0, 1.0, "only")]);
        assert_eq!(kept.len(), 1);
    }

    #[test]
    fn equal_points_keep_first_by_tag() {
        let kept = lower_envelope(&[pt(1.0, 1.0, "b"), pt(1.0, 1.0, "a"), pt(1.0, 1.0, "c")]);
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].tag, "a");
    }

    #[test]
    fn groups_are_independent() {
        let mut p1 = pt(1.0, 1.0, "cheap");
        p1.group = "one".into();
        let mut p2 = pt(2.0, 2.0, "dominated-in-one");
        p2.group = "two".into();
        let kept = lower_envelope(&[p1, p2]);
        assert_eq!(kept.len(), 2);
    }

    /// Random point clouds against a quadratic domination check.
    #[test]
    fn matches_brute_force_on_random_sets() {
        let mut state = 0x1234_5678_u64;
        let mut next = move || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((state >> 33) as f64) / (u32::MAX as f64 / 4.0)
        };
        for trial in 0..50 {
            let n = 3 + trial % 17;
            let points: Vec<EnvelopePoint> = (0..n)
                .map(|i| pt((next() * 4.0).round(), (next() * 4.0).round(), &format!("t{i:02}")))
                .collect();
            let kept = lower_envelope(&points);

            let mut sorted: Vec<&EnvelopePoint> = points.iter().collect();
            sorted.sort_by(|a, b| {
                a.time_s
                    .total_cmp(&b.time_s)
                    .then(a.mse.total_cmp(&b.mse))
                    .then(a.tag.cmp(&b.tag))
            });
            let brute: Vec<&EnvelopePoint> = sorted
                .iter()
                .enumerate()
                .filter(|(i, p)| {
                    !sorted.iter().enumerate().any(|(j, q)| {
                        j < *i && q.time_s <= p.time_s && q.mse <= p.mse
                    })
                })
                .map(|(_, p)| *p)
                .collect();
            let brute_tags: Vec<&str> = brute.iter().map(|p| p.tag.as_str()).collect();
            let kept_tags: Vec<&str> = kept.iter().map(|p| p.tag.as_str()).collect();
            assert_eq!(kept_tags, brute_tags, "trial {trial}");
        }
    }
}
