//! Corridor map matching and path-integral construction.
//!
//! Each fix is scored against every link with the point-to-segment distance
//! and snapped to the closest one. Positions along the corridor are measured
//! in link units: link `s` at parameter `alpha` sits at `s + (1 - alpha)`,
//! which increases from the `a` end of link 0 to the `b` end of the last link.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::point_to_segment_distance;
use crate::network::RoadNetwork;
use crate::preprocess::{GpsFix, Trace};

pub const DEFAULT_MAX_SNAP_M: f64 = 50.0;
pub const DEFAULT_MAX_GAP_S: i64 = 600;

/// Coverage fractions below this are treated as numerical noise at a node.
const MIN_FRACTION: f64 = 1e-9;
const TIE_EPS_M: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct MatchedFix {
    pub fix: GpsFix,
    pub segment_id: usize,
    pub alpha: f64,
    pub snap_distance_m: f64,
}

impl MatchedFix {
    /// Position along the corridor in link units.
    pub fn chain_position(&self) -> f64 {
        self.segment_id as f64 + (1.0 - self.alpha)
    }

    /// Fraction of the link covered from its `a` end.
    fn along(&self) -> f64 {
        1.0 - self.alpha
    }
}

/// One line of the optional match dump.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchRecord {
    pub t: i64,
    pub seg: usize,
    pub alpha: f64,
    pub snap_m: f64,
}

impl From<&MatchedFix> for MatchRecord {
    fn from(m: &MatchedFix) -> Self {
        MatchRecord {
            t: m.fix.t,
            seg: m.segment_id,
            alpha: m.alpha,
            snap_m: m.snap_distance_m,
        }
    }
}

/// An observed traversal between two matched fixes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathIntegral {
    pub t_start: i64,
    pub t_end: i64,
    /// Link id to the fraction of that link traversed.
    pub coverage: BTreeMap<usize, f64>,
}

impl PathIntegral {
    pub fn travel_time_s(&self) -> f64 {
        (self.t_end - self.t_start) as f64
    }

    /// Checks the structural invariants: positive duration, a nonempty
    /// contiguous run of links, and full coverage of interior links.
    pub fn validate(&self, n_links: usize) -> Result<()> {
        if self.t_end <= self.t_start {
            return Err(Error::Validation(format!(
                "path integral ends at {} before it starts at {}",
                self.t_end, self.t_start
            )));
        }
        let (first, last) = match (
            self.coverage.keys().next(),
            self.coverage.keys().next_back(),
        ) {
            (Some(&f), Some(&l)) => (f, l),
            _ => return Err(Error::Validation("path integral covers no links".into())),
        };
        if last >= n_links {
            return Err(Error::Validation(format!("unknown link {last}")));
        }
        if last - first + 1 != self.coverage.len() {
            return Err(Error::Validation("covered links are not contiguous".into()));
        }
        for (&id, &frac) in &self.coverage {
            if !(frac > 0.0 && frac <= 1.0) {
                return Err(Error::Validation(format!(
                    "link {id} has coverage fraction {frac}"
                )));
            }
            if id != first && id != last && frac != 1.0 {
                return Err(Error::Validation(format!(
                    "interior link {id} is only partially covered"
                )));
            }
        }
        Ok(())
    }
}

/// Snaps one fix to its nearest link; `None` if it lies farther than
/// `max_snap_m` from the corridor. Ties go to the lowest link id.
pub fn match_point(fix: &GpsFix, net: &RoadNetwork, max_snap_m: f64) -> Option<MatchedFix> {
    let mut best: Option<(usize, f64, f64)> = None;
    for seg in net.segments() {
        let proj = match point_to_segment_distance(fix.pos, seg.a, seg.b) {
            Ok(p) => p,
            Err(_) => continue,
        };
        let better = match best {
            None => true,
            Some((_, _, d)) => proj.distance_m < d - TIE_EPS_M,
        };
        if better {
            best = Some((seg.id, proj.alpha, proj.distance_m));
        }
    }
    let (segment_id, alpha, snap_distance_m) = best?;
    if snap_distance_m > max_snap_m {
        return None;
    }
    Some(MatchedFix {
        fix: fix.clone(),
        segment_id,
        alpha,
        snap_distance_m,
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct MatchStats {
    pub rejected: usize,
    /// Fixes more than one link behind the running maximum.
    pub outliers: usize,
    /// Fixes behind the running maximum by at most one link.
    pub regressions: usize,
}

/// Matches every fix of a trace and keeps those that progress along the
/// corridor.
pub fn match_trace(trace: &Trace, net: &RoadNetwork, max_snap_m: f64) -> Vec<MatchedFix> {
    match_trace_with_stats(trace, net, max_snap_m).0
}

pub fn match_trace_with_stats(
    trace: &Trace,
    net: &RoadNetwork,
    max_snap_m: f64,
) -> (Vec<MatchedFix>, MatchStats) {
    let mut stats = MatchStats::default();
    let mut out: Vec<MatchedFix> = Vec::with_capacity(trace.len());
    let mut running_max = f64::NEG_INFINITY;
    for fix in &trace.fixes {
        let Some(m) = match_point(fix, net, max_snap_m) else {
            stats.rejected += 1;
            continue;
        };
        let pos = m.chain_position();
        if pos < running_max - 1.0 {
            stats.outliers += 1;
            continue;
        }
        if pos < running_max {
            stats.regressions += 1;
            continue;
        }
        running_max = pos;
        out.push(m);
    }
    (out, stats)
}

/// Coverage between two corridor positions given as (link, fraction along).
fn coverage_between(
    from: (usize, f64),
    to: (usize, f64),
) -> BTreeMap<usize, f64> {
    let mut cov = BTreeMap::new();
    let mut insert = |id: usize, frac: f64| {
        if frac > MIN_FRACTION {
            cov.insert(id, frac.min(1.0));
        }
    };
    if from.0 == to.0 {
        insert(from.0, to.1 - from.1);
    } else {
        insert(from.0, 1.0 - from.1);
        for id in from.0 + 1..to.0 {
            insert(id, 1.0);
        }
        insert(to.0, to.1);
    }
    cov
}

/// Turns each consecutive pair of matched fixes into a path integral.
///
/// Pairs without forward progress and pairs more than `max_gap_s` apart are
/// skipped.
pub fn build_path_integrals(
    matched: &[MatchedFix],
    net: &RoadNetwork,
    max_gap_s: i64,
) -> Vec<PathIntegral> {
    let mut out = Vec::new();
    for pair in matched.windows(2) {
        let (p, q) = (&pair[0], &pair[1]);
        let dt = q.fix.t - p.fix.t;
        if dt <= 0 || dt > max_gap_s {
            continue;
        }
        if q.chain_position() <= p.chain_position() {
            continue;
        }
        let coverage = coverage_between((p.segment_id, p.along()), (q.segment_id, q.along()));
        if coverage.is_empty() || coverage.keys().any(|&id| id >= net.n_links()) {
            continue;
        }
        out.push(PathIntegral {
            t_start: p.fix.t,
            t_end: q.fix.t,
            coverage,
        });
    }
    out
}
