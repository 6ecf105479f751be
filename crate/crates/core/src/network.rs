//! Corridor road model: an ordered chain of straight links.

use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::{geodesic_distance, GeoPoint};

/// Maximum coordinate mismatch, in degrees, between the end of one link and
/// the start of the next.
pub const CHAIN_TOLERANCE_DEG: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct RoadSegment {
    pub id: usize,
    pub a: GeoPoint,
    pub b: GeoPoint,
    pub length_m: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoadNetwork {
    segments: Vec<RoadSegment>,
    /// Chain distance from the corridor start to the start of each link.
    offsets_m: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct NetworkFile {
    segments: Vec<SegmentRecord>,
}

#[derive(Debug, Serialize, Deserialize)]
struct SegmentRecord {
    id: usize,
    a: GeoPoint,
    b: GeoPoint,
    #[serde(default, skip_serializing)]
    #[allow(dead_code)]
    length_m: Option<f64>,
}

impl RoadNetwork {
    /// Builds a validated corridor from consecutive link endpoints.
    pub fn from_links(links: &[(GeoPoint, GeoPoint)]) -> Result<Self> {
        if links.is_empty() {
            return Err(Error::Validation("network has no segments".into()));
        }
        let mut segments = Vec::with_capacity(links.len());
        let mut offsets_m = Vec::with_capacity(links.len());
        let mut offset = 0.0;
        for (id, &(a, b)) in links.iter().enumerate() {
            let length_m = geodesic_distance(a, b);
            if length_m <= 0.0 {
                return Err(Error::Validation(format!("segment {id} has zero length")));
            }
            if let Some(prev) = segments.last() {
                let prev: &RoadSegment = prev;
                if (prev.b.lat() - a.lat()).abs() > CHAIN_TOLERANCE_DEG
                    || (prev.b.lon() - a.lon()).abs() > CHAIN_TOLERANCE_DEG
                {
                    return Err(Error::Validation(format!(
                        "chain broken between segment {} and {}: segment {} ends at ({}, {}) \
                         but segment {} starts at ({}, {})",
                        id - 1,
                        id,
                        id - 1,
                        prev.b.lat(),
                        prev.b.lon(),
                        id,
                        a.lat(),
                        a.lon()
                    )));
                }
            }
            offsets_m.push(offset);
            offset += length_m;
            segments.push(RoadSegment {
                id,
                a,
                b,
                length_m,
            });
        }
        Ok(RoadNetwork {
            segments,
            offsets_m,
        })
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let file: NetworkFile = serde_json::from_str(s)
            .map_err(|e| Error::Validation(format!("network JSON: {e}")))?;
        Self::from_file_records(file)
    }

    fn from_file_records(file: NetworkFile) -> Result<Self> {
        for (pos, rec) in file.segments.iter().enumerate() {
            if rec.id != pos {
                return Err(Error::Validation(format!(
                    "segment at position {pos} has id {}; ids must be 0..N-1 in chain order",
                    rec.id
                )));
            }
        }
        let links: Vec<_> = file.segments.iter().map(|s| (s.a, s.b)).collect();
        Self::from_links(&links)
    }

    pub fn to_json_string(&self) -> String {
        let file = NetworkFile {
            segments: self
                .segments
                .iter()
                .map(|s| SegmentRecord {
                    id: s.id,
                    a: s.a,
                    b: s.b,
                    length_m: None,
                })
                .collect(),
        };
        serde_json::to_string_pretty(&file).expect("network serializes")
    }

    pub fn segments(&self) -> &[RoadSegment] {
        &self.segments
    }

    pub fn segment(&self, id: usize) -> Option<&RoadSegment> {
        self.segments.get(id)
    }

    pub fn n_links(&self) -> usize {
        self.segments.len()
    }

    pub fn lengths(&self) -> Vec<f64> {
        self.segments.iter().map(|s| s.length_m).collect()
    }

    pub fn total_length_m(&self) -> f64 {
        self.segments.iter().map(|s| s.length_m).sum()
    }

    /// Chain distance from the corridor start to a point on link `id` that is
    /// a fraction `along` of the way from its `a` end to its `b` end.
    pub fn chain_distance_m(&self, id: usize, along: f64) -> f64 {
        self.offsets_m[id] + along * self.segments[id].length_m
    }
}

/// Reads and validates a network JSON file.
pub fn load_network(path: impl AsRef<Path>) -> Result<RoadNetwork> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    RoadNetwork::from_json_str(&text)
}

/// First-difference operator over the link chain: row `m` maps a link-time
/// vector to `theta[m + 1] - theta[m]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DifferenceMatrix {
    n_links: usize,
}

impl DifferenceMatrix {
    pub fn new(n_links: usize) -> Self {
        DifferenceMatrix { n_links }
    }

    pub fn rows(&self) -> usize {
        self.n_links.saturating_sub(1)
    }

    pub fn cols(&self) -> usize {
        self.n_links
    }

    pub fn apply(&self, theta: &[f64]) -> Vec<f64> {
        assert_eq!(theta.len(), self.n_links, "difference matrix dimension");
        theta.windows(2).map(|w| w[1] - w[0]).collect()
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut d = DMatrix::zeros(self.rows(), self.cols());
        for m in 0..self.rows() {
            d[(m, m)] = -1.0;
            d[(m, m + 1)] = 1.0;
        }
        d
    }

    /// `DᵀD`, the tridiagonal chain Laplacian.
    pub fn gram(&self) -> DMatrix<f64> {
        let n = self.n_links;
        let mut g = DMatrix::zeros(n, n);
        for m in 0..self.rows() {
            g[(m, m)] += 1.0;
            g[(m + 1, m + 1)] += 1.0;
            g[(m, m + 1)] -= 1.0;
            g[(m + 1, m)] -= 1.0;
        }
        g
    }
}

/// A network with fewer than two links yields an empty operator and the
/// smoothness penalty vanishes.
pub fn build_difference_matrix(net: &RoadNetwork) -> DifferenceMatrix {
    DifferenceMatrix::new(net.n_links())
}
