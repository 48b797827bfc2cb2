//! Capacity-bounded point-region quadtree.
//!
//! Nodes holding more than `capacity` points split at the box midpoints until
//! `max_depth` is reached. Quadrants that receive no points are dropped, so
//! every leaf holds at least one point and has a well-defined centroid. Leaves
//! are numbered densely in depth-first NW, NE, SW, SE order and serve as the
//! class labels of the location classifier.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::geo::{centroid, haversine_km, BoundingBox, ClosedEdges, GeoPoint, Quadrant};

pub const DEFAULT_MAX_DEPTH: u32 = 20;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IndexedPoint {
    pub id: u64,
    pub point: GeoPoint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadtreeNode {
    pub bbox: BoundingBox,
    pub depth: u32,
    pub closed: ClosedEdges,
    pub kind: NodeKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum NodeKind {
    /// Children in NW, NE, SW, SE order; `None` for pruned empty quadrants.
    Internal(Box<[Option<QuadtreeNode>; 4]>),
    Leaf(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Leaf {
    pub id: usize,
    pub bbox: BoundingBox,
    pub depth: u32,
    pub points: Vec<IndexedPoint>,
    pub centroid: GeoPoint,
}

/// One row of [`QuadtreePartition::leaf_stats`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LeafStat {
    pub leaf_id: usize,
    pub point_count: usize,
    pub depth: u32,
    pub bbox: BoundingBox,
    pub centroid: GeoPoint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadtreePartition {
    root: QuadtreeNode,
    capacity: usize,
    max_depth: u32,
    leaves: Vec<Leaf>,
}

impl QuadtreePartition {
    pub fn build(
        points: &[IndexedPoint],
        bounds: BoundingBox,
        capacity: usize,
        max_depth: u32,
    ) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::InvalidParameter(
                "capacity must be at least 1".into(),
            ));
        }
        if max_depth == 0 {
            return Err(Error::InvalidParameter(
                "max_depth must be at least 1".into(),
            ));
        }
        if points.is_empty() {
            return Err(Error::EmptyInput);
        }
        if let Some(p) = points.iter().find(|p| !bounds.contains_closed(p.point)) {
            return Err(Error::PointOutOfBounds(p.id));
        }

        let mut builder = Builder {
            capacity,
            max_depth,
            leaves: Vec::new(),
        };
        let root = builder.node(bounds, 0, ClosedEdges::ROOT, points.to_vec());
        Ok(QuadtreePartition {
            root,
            capacity,
            max_depth,
            leaves: builder.leaves,
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn max_depth(&self) -> u32 {
        self.max_depth
    }

    pub fn bounds(&self) -> BoundingBox {
        self.root.bbox
    }

    pub fn root(&self) -> &QuadtreeNode {
        &self.root
    }

    pub fn leaves(&self) -> &[Leaf] {
        &self.leaves
    }

    pub fn num_leaves(&self) -> usize {
        self.leaves.len()
    }

    pub fn leaf(&self, id: usize) -> Option<&Leaf> {
        self.leaves.get(id)
    }

    pub fn num_points(&self) -> usize {
        self.leaves.iter().map(|l| l.points.len()).sum()
    }

    /// Leaf assignment of every indexed record.
    pub fn record_labels(&self) -> HashMap<u64, usize> {
        self.leaves
            .iter()
            .flat_map(|l| l.points.iter().map(move |p| (p.id, l.id)))
            .collect()
    }

    /// Leaf whose box holds `p`; falls back to the nearest leaf centroid when
    /// the descent ends in a pruned quadrant.
    pub fn locate(&self, p: GeoPoint) -> Result<usize> {
        if !self.root.bbox.contains_closed(p) {
            return Err(Error::OutOfBounds {
                lat: p.lat,
                lon: p.lon,
            });
        }
        let mut node = &self.root;
        loop {
            match &node.kind {
                NodeKind::Leaf(id) => return Ok(*id),
                NodeKind::Internal(children) => {
                    let q = node.bbox.quadrant_of(p);
                    match &children[q as usize] {
                        Some(child) => node = child,
                        None => return Ok(self.nearest_leaf(p)),
                    }
                }
            }
        }
    }

    /// Leaf with the closest centroid; ties go to the lowest id.
    pub fn nearest_leaf(&self, p: GeoPoint) -> usize {
        let mut best = (0, f64::INFINITY);
        for leaf in &self.leaves {
            let d = haversine_km(p, leaf.centroid);
            if d < best.1 {
                best = (leaf.id, d);
            }
        }
        best.0
    }

    /// Ids of all indexed points within `radius_km` of `center`, ascending.
    pub fn radius_query(&self, center: GeoPoint, radius_km: f64) -> Vec<u64> {
        let mut found = Vec::new();
        let mut stack = vec![&self.root];
        while let Some(node) = stack.pop() {
            if node.bbox.min_distance_km(center) > radius_km {
                continue;
            }
            match &node.kind {
                NodeKind::Leaf(id) => found.extend(
                    self.leaves[*id]
                        .points
                        .iter()
                        .filter(|p| haversine_km(center, p.point) <= radius_km)
                        .map(|p| p.id),
                ),
                NodeKind::Internal(children) => stack.extend(children.iter().flatten()),
            }
        }
        found.sort_unstable();
        found
    }

    pub fn leaf_stats(&self) -> Vec<LeafStat> {
        self.leaves
            .iter()
            .map(|l| LeafStat {
                leaf_id: l.id,
                point_count: l.points.len(),
                depth: l.depth,
                bbox: l.bbox,
                centroid: l.centroid,
            })
            .collect()
    }

    /// FeatureCollection with one Polygon per leaf box and one Point per
    /// leaf centroid.
    pub fn to_geojson(&self, fingerprint: Option<&str>) -> Value {
        let mut features = Vec::with_capacity(self.leaves.len() * 2);
        for l in &self.leaves {
            let b = l.bbox;
            features.push(json!({
                "type": "Feature",
                "geometry": {
                    "type": "Polygon",
                    "coordinates": [[
                        [b.min_lon, b.min_lat],
                        [b.max_lon, b.min_lat],
                        [b.max_lon, b.max_lat],
                        [b.min_lon, b.max_lat],
                        [b.min_lon, b.min_lat],
                    ]],
                },
                "properties": {
                    "kind": "cell",
                    "leaf_id": l.id,
                    "count": l.points.len(),
                    "depth": l.depth,
                },
            }));
        }
        for l in &self.leaves {
            features.push(json!({
                "type": "Feature",
                "geometry": {
                    "type": "Point",
                    "coordinates": [l.centroid.lon, l.centroid.lat],
                },
                "properties": {
                    "kind": "centroid",
                    "leaf_id": l.id,
                    "count": l.points.len(),
                    "depth": l.depth,
                },
            }));
        }
        let mut collection = json!({
            "type": "FeatureCollection",
            "features": features,
        });
        if let Some(fp) = fingerprint {
            collection["fingerprint"] = Value::String(fp.to_owned());
        }
        collection
    }
}

struct Builder {
    capacity: usize,
    max_depth: u32,
    leaves: Vec<Leaf>,
}

impl Builder {
    fn node(
        &mut self,
        bbox: BoundingBox,
        depth: u32,
        closed: ClosedEdges,
        points: Vec<IndexedPoint>,
    ) -> QuadtreeNode {
        let quads = if points.len() > self.capacity && depth < self.max_depth {
            bbox.quadrants().ok()
        } else {
            None
        };
        let kind = match quads {
            Some(quads) => {
                let mut buckets: [Vec<IndexedPoint>; 4] = Default::default();
                for p in points {
                    buckets[bbox.quadrant_of(p.point) as usize].push(p);
                }
                let mut children: [Option<QuadtreeNode>; 4] = Default::default();
                for (q, bucket) in Quadrant::ALL.into_iter().zip(buckets) {
                    if !bucket.is_empty() {
                        children[q as usize] =
                            Some(self.node(quads[q as usize], depth + 1, closed.child(q), bucket));
                    }
                }
                NodeKind::Internal(Box::new(children))
            }
            None => {
                let id = self.leaves.len();
                let coords: Vec<GeoPoint> = points.iter().map(|p| p.point).collect();
                let centroid = centroid(&coords).expect("leaves are never empty");
                self.leaves.push(Leaf {
                    id,
                    bbox,
                    depth,
                    points,
                    centroid,
                });
                NodeKind::Leaf(id)
            }
        };
        QuadtreeNode {
            bbox,
            depth,
            closed,
            kind,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn ip(id: u64, lat: f64, lon: f64) -> IndexedPoint {
        IndexedPoint {
            id,
            point: GeoPoint::new(lat, lon).unwrap(),
        }
    }

    fn square4() -> BoundingBox {
        BoundingBox::new(0.0, 4.0, 0.0, 4.0).unwrap()
    }

    fn four_quadrants() -> QuadtreePartition {
        let pts = [
            ip(0, 3.0, 1.0),
            ip(1, 3.0, 3.0),
            ip(2, 1.0, 1.0),
            ip(3, 1.0, 3.0),
        ];
        QuadtreePartition::build(&pts, square4(), 1, DEFAULT_MAX_DEPTH).unwrap()
    }

    fn random_points(rng: &mut ChaCha8Rng, n: usize, b: BoundingBox) -> Vec<IndexedPoint> {
        (0..n as u64)
            .map(|id| {
                ip(
                    id,
                    rng.gen_range(b.min_lat..b.max_lat),
                    rng.gen_range(b.min_lon..b.max_lon),
                )
            })
            .collect()
    }

    fn us() -> BoundingBox {
        BoundingBox::new(24.0, 50.0, -125.0, -66.0).unwrap()
    }

    #[test]
    fn one_point_per_quadrant_splits_once() {
        let t = four_quadrants();
        assert_eq!(t.num_leaves(), 4);
        let stats = t.leaf_stats();
        for (i, s) in stats.iter().enumerate() {
            assert_eq!(s.leaf_id, i);
            assert_eq!(s.point_count, 1);
            assert_eq!(s.depth, 1);
        }
        // NW, NE, SW, SE order
        assert_eq!(t.leaf(0).unwrap().points[0].id, 0);
        assert_eq!(t.leaf(1).unwrap().points[0].id, 1);
        assert_eq!(t.leaf(2).unwrap().points[0].id, 2);
        assert_eq!(t.leaf(3).unwrap().points[0].id, 3);
    }

    #[test]
    fn under_capacity_is_single_leaf() {
        let pts = [ip(0, 1.0, 1.0), ip(1, 2.0, 2.0), ip(2, 3.0, 3.0)];
        let t = QuadtreePartition::build(&pts, square4(), 3, 5).unwrap();
        let stats = t.leaf_stats();
        assert_eq!(stats.len(), 1);
        assert_eq!(stats[0].leaf_id, 0);
        assert_eq!(stats[0].point_count, 3);
        assert_eq!(stats[0].depth, 0);
        assert_eq!(stats[0].bbox, square4());
        assert_eq!(stats[0].centroid, GeoPoint::new(2.0, 2.0).unwrap());
    }

    #[test]
    fn duplicates_stop_at_max_depth() {
        let pts: Vec<_> = (0..10).map(|i| ip(i, 1.3, 2.7)).collect();
        let t = QuadtreePartition::build(&pts, square4(), 1, 5).unwrap();
        assert_eq!(t.num_leaves(), 1);
        assert_eq!(t.leaves()[0].depth, 5);
        assert_eq!(t.leaves()[0].points.len(), 10);
    }

    #[test]
    fn build_errors() {
        let pts = [ip(7, 5.0, 1.0)];
        assert!(matches!(
            QuadtreePartition::build(&pts, square4(), 1, 5),
            Err(Error::PointOutOfBounds(7))
        ));
        let ok = [ip(0, 1.0, 1.0)];
        assert!(matches!(
            QuadtreePartition::build(&ok, square4(), 0, 5),
            Err(Error::InvalidParameter(_))
        ));
        assert!(matches!(
            QuadtreePartition::build(&ok, square4(), 1, 0),
            Err(Error::InvalidParameter(_))
        ));
    }

    #[test]
    fn points_on_max_edges_are_kept() {
        let pts = [
            ip(0, 4.0, 4.0),
            ip(1, 0.0, 0.0),
            ip(2, 2.0, 2.0),
            ip(3, 4.0, 0.0),
        ];
        let t = QuadtreePartition::build(&pts, square4(), 1, 10).unwrap();
        assert_eq!(t.num_points(), 4);
        for p in &pts {
            let leaf = t.locate(p.point).unwrap();
            assert!(t.leaf(leaf).unwrap().points.iter().any(|q| q.id == p.id));
        }
    }

    #[test]
    fn locate_on_split_line_is_unique() {
        let t = four_quadrants();
        // on both midlines: north-east by the half-open rule
        assert_eq!(t.locate(GeoPoint::new(2.0, 2.0).unwrap()).unwrap(), 1);
        assert_eq!(t.locate(GeoPoint::new(2.0, 0.5).unwrap()).unwrap(), 0);
        assert_eq!(t.locate(GeoPoint::new(1.9, 2.0).unwrap()).unwrap(), 3);
        assert!(matches!(
            t.locate(GeoPoint::new(4.5, 1.0).unwrap()),
            Err(Error::OutOfBounds { .. })
        ));
    }

    #[test]
    fn pruned_quadrant_ties_go_to_lower_leaf() {
        // points only in NW and NE, mirrored about lon 2; the SW/SE quadrants are
        // pruned and (0, 2) is equidistant from both centroids
        let pts = [ip(0, 3.0, 1.0), ip(1, 3.0, 3.0)];
        let t = QuadtreePartition::build(&pts, square4(), 1, 5).unwrap();
        assert_eq!(t.num_leaves(), 2);
        let probe = GeoPoint::new(1.0, 2.0).unwrap();
        let c0 = t.leaf(0).unwrap().centroid;
        let c1 = t.leaf(1).unwrap().centroid;
        assert_eq!(haversine_km(probe, c0), haversine_km(probe, c1));
        assert_eq!(t.locate(probe).unwrap(), 0);
        // off-centre probe picks the closer one
        assert_eq!(t.locate(GeoPoint::new(1.0, 3.5).unwrap()).unwrap(), 1);
    }

    #[test]
    fn radius_query_edges() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let pts = random_points(&mut rng, 300, us());
        let t = QuadtreePartition::build(&pts, us(), 10, 20).unwrap();
        let center = pts[17].point;
        assert_eq!(t.radius_query(center, 0.0), vec![17]);
        let all = t.radius_query(center, us().diagonal_km());
        assert_eq!(all.len(), 300);
    }

    #[test]
    fn radius_query_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let pts = random_points(&mut rng, 100, us());
        let t = QuadtreePartition::build(&pts, us(), 4, 20).unwrap();
        for _ in 0..50 {
            let c = GeoPoint::new(rng.gen_range(24.0..50.0), rng.gen_range(-125.0..-66.0)).unwrap();
            let r = if rng.gen_bool(0.5) {
                50.0
            } else {
                rng.gen_range(0.0..800.0)
            };
            let mut brute: Vec<u64> = pts
                .iter()
                .filter(|p| haversine_km(c, p.point) <= r)
                .map(|p| p.id)
                .collect();
            brute.sort_unstable();
            assert_eq!(t.radius_query(c, r), brute);
        }
    }

    #[test]
    fn build_is_deterministic_and_serializable() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let pts = random_points(&mut rng, 2000, us());
        let a = QuadtreePartition::build(&pts, us(), 50, 20).unwrap();
        let b = QuadtreePartition::build(&pts, us(), 50, 20).unwrap();
        assert_eq!(a, b);
        let json = serde_json::to_string(&a).unwrap();
        let back: QuadtreePartition = serde_json::from_str(&json).unwrap();
        assert_eq!(a, back);
    }

    #[test]
    fn geojson_has_polygon_and_point_per_leaf() {
        let g = four_quadrants().to_geojson(Some("abc"));
        let features = g["features"].as_array().unwrap();
        assert_eq!(features.len(), 8);
        let polys = features
            .iter()
            .filter(|f| f["geometry"]["type"] == "Polygon")
            .count();
        assert_eq!(polys, 4);
        assert_eq!(g["fingerprint"], "abc");
        assert_eq!(features[0]["properties"]["count"], 1);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn structural_invariants(seed in any::<u64>(), n in 1usize..400, cap in 1usize..40) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut pts = random_points(&mut rng, n, us());
            // sprinkle duplicates
            for i in (0..n).step_by(7) {
                let p = pts[0].point;
                pts[i].point = p;
            }
            let t = QuadtreePartition::build(&pts, us(), cap, 12).unwrap();
            prop_assert_eq!(t.num_points(), n);
            let labels = t.record_labels();
            prop_assert_eq!(labels.len(), n);
            for leaf in t.leaves() {
                prop_assert!(!leaf.points.is_empty());
                prop_assert!(leaf.points.len() <= cap || leaf.depth == 12);
                let coords: Vec<_> = leaf.points.iter().map(|p| p.point).collect();
                prop_assert_eq!(leaf.centroid, centroid(&coords).unwrap());
            }
            for p in &pts {
                prop_assert_eq!(t.locate(p.point).unwrap(), labels[&p.id]);
            }
        }
    }
}
