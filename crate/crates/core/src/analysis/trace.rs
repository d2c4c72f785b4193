use std::fmt::Write as _;

use serde::Serialize;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceRecord {
    pub iteration: usize,
    /// Largest Frobenius change of an information block from the previous iteration.
    pub frobenius_delta: Option<f64>,
    /// Largest absolute change of a message mean from the previous iteration.
    pub mean_delta: Option<f64>,
    /// Part distance to the fixed point; undefined while some block is singular.
    pub part_distance: Option<f64>,
    /// `L ⪯ C ⪯ U`, checked from iteration 1 on.
    pub in_bounds: Option<bool>,
    pub bounds_margin: Option<f64>,
    pub norm_bound_ok: Option<bool>,
}

impl TraceRecord {
    pub fn new(iteration: usize) -> Self {
        Self {
            iteration,
            frobenius_delta: None,
            mean_delta: None,
            part_distance: None,
            in_bounds: None,
            bounds_margin: None,
            norm_bound_ok: None,
        }
    }
}

/// Per-iteration diagnostics of one run, dense in the iteration index.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ConvergenceTrace {
    pub records: Vec<TraceRecord>,
    /// Radius of the exclusion ball around the fixed point, once known.
    pub epsilon: Option<f64>,
}

impl ConvergenceTrace {
    pub fn part_distances(&self) -> Vec<f64> {
        self.records
            .iter()
            .map(|r| r.part_distance.unwrap_or(f64::INFINITY))
            .collect()
    }

    /// CSV with one row per iteration. `header` lines are emitted first as
    /// `# ` comments.
    pub fn to_csv(&self, header: &[(&str, String)]) -> String {
        let mut s = String::new();
        for (k, v) in header {
            writeln!(s, "# {k}: {v}").unwrap();
        }
        s.push_str("iteration,frobenius_delta,part_distance,in_bounds,norm_bound_ok,mean_delta\n");
        let num = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x:.16e}"));
        let flag = |v: Option<bool>| v.map_or(String::new(), |x| x.to_string());
        for r in &self.records {
            writeln!(
                s,
                "{},{},{},{},{},{}",
                r.iteration,
                num(r.frobenius_delta),
                num(r.part_distance),
                flag(r.in_bounds),
                flag(r.norm_bound_ok),
                num(r.mean_delta)
            )
            .unwrap();
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_layout() {
        let mut t = ConvergenceTrace::default();
        t.records.push(TraceRecord::new(0));
        let mut r = TraceRecord::new(1);
        r.frobenius_delta = Some(0.5);
        r.in_bounds = Some(true);
        t.records.push(r);
        let csv = t.to_csv(&[("seed", "7".into())]);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "# seed: 7");
        assert_eq!(
            lines[1],
            "iteration,frobenius_delta,part_distance,in_bounds,norm_bound_ok,mean_delta"
        );
        assert_eq!(lines[2], "0,,,,,");
        assert_eq!(lines[3], "1,5.0000000000000000e-1,,true,,");
    }
}
