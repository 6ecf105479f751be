//! Spherical geodesy for street-scale geometry.
//!
//! Distances are great-circle (haversine) on a sphere of mean Earth radius.
//! Road links are straight two-point segments whose interior points are the
//! convex combinations `alpha * a + (1 - alpha) * b` of the endpoint
//! coordinates, so `alpha = 1` sits on `a` and `alpha = 0` on `b`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const EARTH_RADIUS_M: f64 = 6_371_000.0;

/// Latitude/longitude pair in decimal degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 2]", into = "[f64; 2]")]
pub struct GeoPoint {
    lat: f64,
    lon: f64,
}

impl GeoPoint {
    pub fn new(lat: f64, lon: f64) -> Result<Self> {
        if !lat.is_finite() || !lon.is_finite() {
            return Err(Error::InvalidInput(format!(
                "non-finite coordinate ({lat}, {lon})"
            )));
        }
        if !(-90.0..=90.0).contains(&lat) {
            return Err(Error::InvalidInput(format!("latitude {lat} out of range")));
        }
        if !(-180.0..=180.0).contains(&lon) {
            return Err(Error::InvalidInput(format!("longitude {lon} out of range")));
        }
        Ok(GeoPoint { lat, lon })
    }

    pub fn lat(&self) -> f64 {
        self.lat
    }

    pub fn lon(&self) -> f64 {
        self.lon
    }
}

impl TryFrom<[f64; 2]> for GeoPoint {
    type Error = Error;

    fn try_from(v: [f64; 2]) -> Result<Self> {
        GeoPoint::new(v[0], v[1])
    }
}

impl From<GeoPoint> for [f64; 2] {
    fn from(p: GeoPoint) -> Self {
        [p.lat, p.lon]
    }
}

/// Closest point on a segment, expressed as the segment parameter `alpha`
/// (1 at the first endpoint, 0 at the second) and the distance to it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SegmentProjection {
    pub alpha: f64,
    pub distance_m: f64,
}

/// Haversine great-circle distance in meters.
pub fn geodesic_distance(p1: GeoPoint, p2: GeoPoint) -> f64 {
    let lat1 = p1.lat.to_radians();
    let lat2 = p2.lat.to_radians();
    let dlat = (p2.lat - p1.lat).to_radians();
    let dlon = (p2.lon - p1.lon).to_radians();
    let s_lat = (dlat / 2.0).sin();
    let s_lon = (dlon / 2.0).sin();
    let a = (s_lat * s_lat + lat1.cos() * lat2.cos() * s_lon * s_lon).clamp(0.0, 1.0);
    2.0 * EARTH_RADIUS_M * a.sqrt().atan2((1.0 - a).sqrt())
}

/// The point `alpha * a + (1 - alpha) * b`, taken directly in coordinate space.
pub fn interpolate(seg_a: GeoPoint, seg_b: GeoPoint, alpha: f64) -> Result<GeoPoint> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Domain(format!("alpha {alpha} outside [0, 1]")));
    }
    let beta = 1.0 - alpha;
    GeoPoint::new(
        alpha * seg_a.lat + beta * seg_b.lat,
        alpha * seg_a.lon + beta * seg_b.lon,
    )
}

/// Local equirectangular frame in meters, centered on `origin`.
///
/// The map from (lat, lon) to (x, y) is affine, so straight lines in
/// coordinate space stay straight and segment parameters are preserved.
#[derive(Debug, Clone, Copy)]
pub(crate) struct LocalFrame {
    origin: GeoPoint,
    m_per_deg_lat: f64,
    m_per_deg_lon: f64,
}

impl LocalFrame {
    pub(crate) fn new(origin: GeoPoint) -> Self {
        let m_per_deg = EARTH_RADIUS_M * std::f64::consts::PI / 180.0;
        LocalFrame {
            origin,
            m_per_deg_lat: m_per_deg,
            m_per_deg_lon: m_per_deg * origin.lat.to_radians().cos(),
        }
    }

    pub(crate) fn to_xy(&self, p: GeoPoint) -> (f64, f64) {
        (
            (p.lon - self.origin.lon) * self.m_per_deg_lon,
            (p.lat - self.origin.lat) * self.m_per_deg_lat,
        )
    }

    /// Inverse of [`to_xy`](Self::to_xy); fails if the result leaves the
    /// valid coordinate range.
    pub(crate) fn to_geo(&self, x: f64, y: f64) -> Result<GeoPoint> {
        GeoPoint::new(
            self.origin.lat + y / self.m_per_deg_lat,
            self.origin.lon + x / self.m_per_deg_lon,
        )
    }
}

/// Distance from `p` to the segment `[seg_a, seg_b]`.
///
/// When the foot of the perpendicular from `p` falls strictly inside the
/// segment (both interior angles of the triangle `p, a, b` at `a` and `b` are
/// acute) the distance is minimized over the segment parameter; otherwise it is
/// the distance to the nearer endpoint. The inner minimization uses the closed
/// form planar projection in a local frame centered on the segment midpoint.
pub fn point_to_segment_distance(
    p: GeoPoint,
    seg_a: GeoPoint,
    seg_b: GeoPoint,
) -> Result<SegmentProjection> {
    if seg_a == seg_b {
        return Err(Error::Domain(format!(
            "zero-length segment at ({}, {})",
            seg_a.lat, seg_a.lon
        )));
    }
    let mid = interpolate(seg_a, seg_b, 0.5)?;
    let frame = LocalFrame::new(mid);
    let (ax, ay) = frame.to_xy(seg_a);
    let (bx, by) = frame.to_xy(seg_b);
    let (px, py) = frame.to_xy(p);
    let (ux, uy) = (bx - ax, by - ay);
    let len2 = ux * ux + uy * uy;
    if len2 <= 0.0 {
        return Err(Error::Domain("degenerate segment".into()));
    }
    // Fraction of the way from a to b; the acute-angle test at both
    // endpoints is equivalent to 0 < u < 1.
    let u = ((px - ax) * ux + (py - ay) * uy) / len2;

    let d_a = geodesic_distance(seg_a, p);
    let d_b = geodesic_distance(seg_b, p);
    let endpoint = if d_a <= d_b {
        SegmentProjection {
            alpha: 1.0,
            distance_m: d_a,
        }
    } else {
        SegmentProjection {
            alpha: 0.0,
            distance_m: d_b,
        }
    };

    if u > 0.0 && u < 1.0 {
        let alpha = 1.0 - u;
        let foot = interpolate(seg_a, seg_b, alpha)?;
        let d = geodesic_distance(foot, p);
        // The endpoints are members of the segment too; keep whichever is
        // closest so the result never exceeds the endpoint distance.
        if d <= endpoint.distance_m {
            return Ok(SegmentProjection {
                alpha,
                distance_m: d,
            });
        }
    }
    Ok(endpoint)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pt(lat: f64, lon: f64) -> GeoPoint {
        GeoPoint::new(lat, lon).unwrap()
    }

    fn brute_force(p: GeoPoint, a: GeoPoint, b: GeoPoint) -> (f64, f64) {
        let mut best = (f64::INFINITY, 0.0);
        for i in 0..=10_000 {
            let alpha = i as f64 * 1e-4;
            let d = geodesic_distance(interpolate(a, b, alpha).unwrap(), p);
            if d < best.0 {
                best = (d, alpha);
            }
        }
        best
    }

    #[test]
    fn rejects_bad_coordinates() {
        assert!(GeoPoint::new(f64::NAN, 0.0).is_err());
        assert!(GeoPoint::new(0.0, f64::INFINITY).is_err());
        assert!(GeoPoint::new(90.5, 0.0).is_err());
        assert!(GeoPoint::new(0.0, -180.5).is_err());
        assert!(GeoPoint::try_from([10.0, 20.0]).is_ok());
    }

    #[test]
    fn known_distances() {
        assert_eq!(geodesic_distance(pt(0.0, 0.0), pt(0.0, 0.0)), 0.0);
        // pi/180 * R along the equator
        let d = geodesic_distance(pt(0.0, 0.0), pt(0.0, 1.0));
        assert!((d - 111_194.926_644_558_7).abs() < 0.1, "{d}");
        // quarter great circle
        let d = geodesic_distance(pt(0.0, 0.0), pt(90.0, 0.0));
        assert!((d - 10_007_543.398).abs() < 1.0, "{d}");
    }

    #[test]
    fn interpolation() {
        let a = pt(10.0, 20.0);
        let b = pt(14.0, 24.0);
        assert_eq!(interpolate(a, b, 1.0).unwrap(), a);
        assert_eq!(interpolate(a, b, 0.0).unwrap(), b);
        assert_eq!(interpolate(a, b, 0.25).unwrap(), pt(13.0, 23.0));
        assert_eq!(
            interpolate(pt(0.0, 0.0), pt(0.0, 2.0), 0.5).unwrap(),
            pt(0.0, 1.0)
        );
        assert!(matches!(interpolate(a, b, 1.5), Err(Error::Domain(_))));
        assert!(matches!(interpolate(a, b, -0.1), Err(Error::Domain(_))));
    }

    #[test]
    fn quarter_alpha_matches_convex_combination() {
        // 0.25 * A + 0.75 * B with A=(10,20), B=(14,24)
        let p = interpolate(pt(10.0, 20.0), pt(14.0, 24.0), 0.25).unwrap();
        assert_eq!((p.lat(), p.lon()), (13.0, 23.0));
    }

    #[test]
    fn segment_distance_at_endpoint() {
        let a = pt(28.6, 77.2);
        let b = pt(28.601, 77.201);
        let proj = point_to_segment_distance(a, a, b).unwrap();
        assert_eq!(proj.distance_m, 0.0);
        assert_eq!(proj.alpha, 1.0);
    }

    #[test]
    fn segment_distance_beyond_b() {
        let a = pt(0.0, 0.0);
        let b = pt(0.0, 0.001);
        let p = pt(0.0, 0.0015);
        let proj = point_to_segment_distance(p, a, b).unwrap();
        assert_eq!(proj.alpha, 0.0);
        assert_eq!(proj.distance_m, geodesic_distance(b, p));
    }

    #[test]
    fn segment_distance_perpendicular_midpoint() {
        let a = pt(28.6, 77.2);
        let b = pt(28.6, 77.21);
        let frame = LocalFrame::new(interpolate(a, b, 0.5).unwrap());
        let p = frame.to_geo(0.0, 40.0).unwrap();
        let proj = point_to_segment_distance(p, a, b).unwrap();
        assert!((proj.alpha - 0.5).abs() < 1e-9, "{}", proj.alpha);
        assert!((proj.distance_m - 40.0).abs() < 0.01, "{}", proj.distance_m);
        let (bf_d, bf_alpha) = brute_force(p, a, b);
        assert!((proj.distance_m - bf_d).abs() < 1e-3);
        assert!((proj.alpha - bf_alpha).abs() <= 1e-4);
    }

    #[test]
    fn degenerate_segment() {
        let a = pt(1.0, 1.0);
        assert!(matches!(
            point_to_segment_distance(pt(0.0, 0.0), a, a),
            Err(Error::Domain(_))
        ));
    }

    fn near_point() -> impl Strategy<Value = GeoPoint> {
        (-60.0f64..60.0, -170.0f64..170.0).prop_map(|(lat, lon)| pt(lat, lon))
    }

    proptest! {
        #[test]
        fn distance_is_symmetric(a in near_point(), b in near_point()) {
            prop_assert_eq!(geodesic_distance(a, b), geodesic_distance(b, a));
        }

        #[test]
        fn triangle_inequality(a in near_point(), b in near_point(), c in near_point()) {
            let ab = geodesic_distance(a, b);
            let bc = geodesic_distance(b, c);
            let ac = geodesic_distance(a, c);
            prop_assert!(ac <= (ab + bc) * (1.0 + 1e-6) + 1e-9);
        }

        #[test]
        fn segment_distance_bounded_by_endpoints(
            origin in near_point(),
            dx in -800.0f64..800.0, dy in -800.0f64..800.0,
            px in -1500.0f64..1500.0, py in -1500.0f64..1500.0,
        ) {
            prop_assume!(dx.abs() + dy.abs() > 1.0);
            let frame = LocalFrame::new(origin);
            let a = origin;
            let b = frame.to_geo(dx, dy).unwrap();
            let p = frame.to_geo(px, py).unwrap();
            let proj = point_to_segment_distance(p, a, b).unwrap();
            prop_assert!(proj.distance_m <= geodesic_distance(p, a).min(geodesic_distance(p, b)));
            prop_assert!((0.0..=1.0).contains(&proj.alpha));
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]
        #[test]
        fn segment_distance_matches_brute_force(
            origin in near_point(),
            dx in -700.0f64..700.0, dy in -700.0f64..700.0,
            px in -600.0f64..600.0, py in -600.0f64..600.0,
        ) {
            prop_assume!(dx.hypot(dy) > 10.0);
            let frame = LocalFrame::new(origin);
            let a = frame.to_geo(-dx / 2.0, -dy / 2.0).unwrap();
            let b = frame.to_geo(dx / 2.0, dy / 2.0).unwrap();
            let p = frame.to_geo(px, py).unwrap();
            let proj = point_to_segment_distance(p, a, b).unwrap();
            let (bf, _) = brute_force(p, a, b);
            prop_assert!((proj.distance_m - bf).abs() <= 0.5, "{} vs {}", proj.distance_m, bf);
        }
    }
}
