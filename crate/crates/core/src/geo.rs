//! Coordinates, lat/lon rectangles and great-circle distance.
//!
//! Boxes use a half-open convention `[min, max)` on both axes. A box may
//! additionally close its top (`max_lat`) and/or right (`max_lon`) edge; the
//! quadtree root closes both, and every child sharing one of the root's max
//! edges inherits the closure, so each point inside the root belongs to exactly
//! one leaf.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// IUGG mean Earth radius.
pub const EARTH_RADIUS_KM: f64 = 6371.0088;

pub const KM_PER_MILE: f64 = 1.609_344;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoPoint {
    pub lat: f64,
    pub lon: f64,
}

impl GeoPoint {
    pub fn new(lat: f64, lon: f64) -> Result<Self> {
        let valid = lat.is_finite()
            && lon.is_finite()
            && (-90.0..=90.0).contains(&lat)
            && (-180.0..=180.0).contains(&lon);
        if valid {
            Ok(GeoPoint { lat, lon })
        } else {
            Err(Error::InvalidCoordinate { lat, lon })
        }
    }
}

/// Great-circle distance in kilometres (haversine formula on a sphere).
pub fn haversine_km(a: GeoPoint, b: GeoPoint) -> f64 {
    let (phi1, phi2) = (a.lat.to_radians(), b.lat.to_radians());
    let dphi = phi2 - phi1;
    let dlambda = (b.lon - a.lon).to_radians();
    let h = (dphi / 2.0).sin().powi(2) + phi1.cos() * phi2.cos() * (dlambda / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_KM * h.sqrt().min(1.0).asin()
}

/// Planar mean of latitudes and longitudes.
///
/// Accumulated as offsets from the first point, so coincident points give
/// back that point exactly.
pub fn centroid(points: &[GeoPoint]) -> Result<GeoPoint> {
    let first = points.first().ok_or(Error::EmptyInput)?;
    let n = points.len() as f64;
    let (dlat, dlon) = points.iter().fold((0.0, 0.0), |(la, lo), p| {
        (la + (p.lat - first.lat), lo + (p.lon - first.lon))
    });
    Ok(GeoPoint {
        lat: (first.lat + dlat / n).clamp(-90.0, 90.0),
        lon: (first.lon + dlon / n).clamp(-180.0, 180.0),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub min_lat: f64,
    pub max_lat: f64,
    pub min_lon: f64,
    pub max_lon: f64,
}

/// Index of a quadrant in the order returned by [`BoundingBox::quadrants`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Quadrant {
    NorthWest = 0,
    NorthEast = 1,
    SouthWest = 2,
    SouthEast = 3,
}

impl Quadrant {
    pub const ALL: [Quadrant; 4] = [
        Quadrant::NorthWest,
        Quadrant::NorthEast,
        Quadrant::SouthWest,
        Quadrant::SouthEast,
    ];

    pub fn is_north(self) -> bool {
        matches!(self, Quadrant::NorthWest | Quadrant::NorthEast)
    }

    pub fn is_east(self) -> bool {
        matches!(self, Quadrant::NorthEast | Quadrant::SouthEast)
    }
}

/// Which max edges of a box are treated as inclusive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ClosedEdges {
    pub top: bool,
    pub right: bool,
}

impl ClosedEdges {
    pub const ROOT: ClosedEdges = ClosedEdges {
        top: true,
        right: true,
    };
    pub const OPEN: ClosedEdges = ClosedEdges {
        top: false,
        right: false,
    };

    /// Closure inherited by a child quadrant.
    pub fn child(self, q: Quadrant) -> ClosedEdges {
        ClosedEdges {
            top: self.top && q.is_north(),
            right: self.right && q.is_east(),
        }
    }
}

impl BoundingBox {
    pub fn new(min_lat: f64, max_lat: f64, min_lon: f64, max_lon: f64) -> Result<Self> {
        let finite = [min_lat, max_lat, min_lon, max_lon]
            .iter()
            .all(|v| v.is_finite());
        if !finite || min_lat > max_lat || min_lon > max_lon {
            return Err(Error::InvalidBox(format!(
                "[{min_lat}, {max_lat}] x [{min_lon}, {max_lon}]"
            )));
        }
        if min_lat < -90.0 || max_lat > 90.0 || min_lon < -180.0 || max_lon > 180.0 {
            return Err(Error::InvalidBox("extends beyond valid coordinates".into()));
        }
        Ok(BoundingBox {
            min_lat,
            max_lat,
            min_lon,
            max_lon,
        })
    }

    /// Smallest box covering all points.
    pub fn enclosing(points: impl IntoIterator<Item = GeoPoint>) -> Result<Self> {
        let mut it = points.into_iter();
        let first = it.next().ok_or(Error::EmptyInput)?;
        let mut b = BoundingBox {
            min_lat: first.lat,
            max_lat: first.lat,
            min_lon: first.lon,
            max_lon: first.lon,
        };
        for p in it {
            b.min_lat = b.min_lat.min(p.lat);
            b.max_lat = b.max_lat.max(p.lat);
            b.min_lon = b.min_lon.min(p.lon);
            b.max_lon = b.max_lon.max(p.lon);
        }
        Ok(b)
    }

    /// Grow every side by `margin` degrees (clamped to valid coordinates).
    pub fn padded(&self, margin: f64) -> Self {
        BoundingBox {
            min_lat: (self.min_lat - margin).max(-90.0),
            max_lat: (self.max_lat + margin).min(90.0),
            min_lon: (self.min_lon - margin).max(-180.0),
            max_lon: (self.max_lon + margin).min(180.0),
        }
    }

    /// Half-open containment: `min <= v < max` on both axes.
    pub fn contains(&self, p: GeoPoint) -> bool {
        self.contains_with(p, ClosedEdges::OPEN)
    }

    /// Containment for a root box, whose max edges are inclusive.
    pub fn contains_closed(&self, p: GeoPoint) -> bool {
        self.contains_with(p, ClosedEdges::ROOT)
    }

    pub fn contains_with(&self, p: GeoPoint, closed: ClosedEdges) -> bool {
        let lat_ok = self.min_lat <= p.lat
            && (p.lat < self.max_lat || (closed.top && p.lat == self.max_lat));
        let lon_ok = self.min_lon <= p.lon
            && (p.lon < self.max_lon || (closed.right && p.lon == self.max_lon));
        lat_ok && lon_ok
    }

    pub fn mid_lat(&self) -> f64 {
        (self.min_lat + self.max_lat) / 2.0
    }

    pub fn mid_lon(&self) -> f64 {
        (self.min_lon + self.max_lon) / 2.0
    }

    pub fn center(&self) -> GeoPoint {
        GeoPoint {
            lat: self.mid_lat(),
            lon: self.mid_lon(),
        }
    }

    /// Planar area in square degrees.
    pub fn area(&self) -> f64 {
        (self.max_lat - self.min_lat) * (self.max_lon - self.min_lon)
    }

    /// Midpoint split into NW, NE, SW, SE.
    pub fn quadrants(&self) -> Result<[BoundingBox; 4]> {
        let (mid_lat, mid_lon) = (self.mid_lat(), self.mid_lon());
        // a split that does not strictly separate the edges cannot make progress
        let splittable = self.min_lat < mid_lat
            && mid_lat < self.max_lat
            && self.min_lon < mid_lon
            && mid_lon < self.max_lon;
        if !splittable {
            return Err(Error::DegenerateBox);
        }
        let b = |min_lat, max_lat, min_lon, max_lon| BoundingBox {
            min_lat,
            max_lat,
            min_lon,
            max_lon,
        };
        Ok([
            b(mid_lat, self.max_lat, self.min_lon, mid_lon),
            b(mid_lat, self.max_lat, mid_lon, self.max_lon),
            b(self.min_lat, mid_lat, self.min_lon, mid_lon),
            b(self.min_lat, mid_lat, mid_lon, self.max_lon),
        ])
    }

    /// Quadrant a point falls into under the half-open midpoint rule.
    pub fn quadrant_of(&self, p: GeoPoint) -> Quadrant {
        match (p.lat >= self.mid_lat(), p.lon >= self.mid_lon()) {
            (true, false) => Quadrant::NorthWest,
            (true, true) => Quadrant::NorthEast,
            (false, false) => Quadrant::SouthWest,
            (false, true) => Quadrant::SouthEast,
        }
    }

    /// Diagonal length from the SW to the NE corner.
    pub fn diagonal_km(&self) -> f64 {
        haversine_km(
            GeoPoint {
                lat: self.min_lat,
                lon: self.min_lon,
            },
            GeoPoint {
                lat: self.max_lat,
                lon: self.max_lon,
            },
        )
    }

    /// Minimum great-circle distance from `p` to any point of the closed box.
    ///
    /// Zero inside. Outside, the minimum lies on the boundary: along a
    /// parallel the distance grows with the longitude gap, so the clamped
    /// longitude is optimal; along a meridian the distance is unimodal with
    /// its foot at `atan2(sin φ, cos φ cos Δλ)`, so the clamped foot and the
    /// two endpoints bound it.
    pub fn min_distance_km(&self, p: GeoPoint) -> f64 {
        if self.contains_closed(p) {
            return 0.0;
        }
        let clamp_lon = p.lon.clamp(self.min_lon, self.max_lon);
        let mut best = f64::INFINITY;
        for lat in [self.min_lat, self.max_lat] {
            best = best.min(haversine_km(
                p,
                GeoPoint {
                    lat,
                    lon: clamp_lon,
                },
            ));
        }
        for lon in [self.min_lon, self.max_lon] {
            best = best.min(meridian_segment_distance(
                p,
                lon,
                self.min_lat,
                self.max_lat,
            ));
        }
        best
    }
}

fn meridian_segment_distance(p: GeoPoint, lon: f64, lat_lo: f64, lat_hi: f64) -> f64 {
    let dlambda = (lon - p.lon).to_radians();
    let phi = p.lat.to_radians();
    let foot = phi.sin().atan2(phi.cos() * dlambda.cos()).to_degrees();
    [lat_lo, lat_hi, foot.clamp(lat_lo, lat_hi)]
        .into_iter()
        .map(|lat| haversine_km(p, GeoPoint { lat, lon }))
        .fold(f64::INFINITY, f64::min)
}
