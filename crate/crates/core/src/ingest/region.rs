//! Point-in-polygon join of pings to census block groups.
//!
//! Containment uses the even-odd rule over every ring of a region (outer
//! rings, holes and multipolygon parts alike). Edge crossings are counted
//! half-open: a vertex is on the ray's side when `y > py`, and the crossing
//! must lie strictly right of the point. For an axis-aligned cell this
//! makes the region `[west, east) × [south, north)`, so a point on a border
//! shared by two regions belongs to exactly one of them.

use std::collections::BTreeMap;
use std::io::Read;

use serde_json::Value;

use crate::{Error, Result};

/// Length of a census tract GEOID (state 2 + county 3 + tract 6).
pub const TRACT_GEOID_LEN: usize = 11;

/// Tract GEOID of a block-group (or tract) GEOID.
pub fn tract_of(geoid: &str) -> &str {
    &geoid[..TRACT_GEOID_LEN.min(geoid.len())]
}

/// Closed ring of `[lon, lat]` vertices. The closing vertex may be repeated.
pub type Ring = Vec<[f64; 2]>;

#[derive(Debug, Clone, PartialEq)]
pub struct Region {
    pub id: String,
    pub rings: Vec<Ring>,
}

impl Region {
    pub fn new(id: impl Into<String>, rings: Vec<Ring>) -> Self {
        Self {
            id: id.into(),
            rings,
        }
    }

    /// Axis-aligned rectangle `[west, east) × [south, north)`.
    pub fn rectangle(id: impl Into<String>, west: f64, south: f64, east: f64, north: f64) -> Self {
        Self::new(
            id,
            vec![vec![
                [west, south],
                [east, south],
                [east, north],
                [west, north],
                [west, south],
            ]],
        )
    }

    pub fn contains(&self, lat: f64, lon: f64) -> bool {
        let mut inside = false;
        for ring in &self.rings {
            let n = ring.len();
            if n < 3 {
                continue;
            }
            let mut j = n - 1;
            for i in 0..n {
                let [xi, yi] = ring[i];
                let [xj, yj] = ring[j];
                if (yi > lat) != (yj > lat) {
                    let x_cross = xi + (lat - yi) * (xj - xi) / (yj - yi);
                    if lon < x_cross {
                        inside = !inside;
                    }
                }
                j = i;
            }
        }
        inside
    }

    fn bbox(&self) -> Option<[f64; 4]> {
        let mut it = self.rings.iter().flatten();
        let &[x, y] = it.next()?;
        Some(it.fold([x, y, x, y], |[w, s, e, n], &[x, y]| {
            [w.min(x), s.min(y), e.max(x), n.max(y)]
        }))
    }
}

#[derive(Debug, Clone)]
struct Grid {
    west: f64,
    south: f64,
    cell_w: f64,
    cell_h: f64,
    nx: usize,
    ny: usize,
    cells: Vec<Vec<u32>>,
}

impl Grid {
    fn col(&self, lon: f64) -> usize {
        (((lon - self.west) / self.cell_w).floor().max(0.0) as usize).min(self.nx - 1)
    }

    fn row(&self, lat: f64) -> usize {
        (((lat - self.south) / self.cell_h).floor().max(0.0) as usize).min(self.ny - 1)
    }
}

/// Immutable spatial index over block-group polygons.
#[derive(Debug, Clone)]
pub struct RegionIndex {
    regions: Vec<Region>,
    bboxes: Vec<[f64; 4]>,
    grid: Option<Grid>,
}

impl RegionIndex {
    /// Builds the index. Regions are ordered by GEOID; every GEOID must be
    /// at least a tract GEOID long and unique.
    pub fn new(mut regions: Vec<Region>) -> Result<Self> {
        regions.sort_by(|a, b| a.id.cmp(&b.id));
        for pair in regions.windows(2) {
            if pair[0].id == pair[1].id {
                return Err(Error::Data(format!("duplicate region GEOID {}", pair[0].id)));
            }
        }
        let mut bboxes = Vec::with_capacity(regions.len());
        for r in &regions {
            if r.id.len() < TRACT_GEOID_LEN {
                return Err(Error::Data(format!(
                    "region id {:?} is shorter than a tract GEOID",
                    r.id
                )));
            }
            bboxes.push(
                r.bbox()
                    .ok_or_else(|| Error::Data(format!("region {} has no vertices", r.id)))?,
            );
        }
        let grid = Self::build_grid(&bboxes);
        Ok(Self {
            regions,
            bboxes,
            grid,
        })
    }

    fn build_grid(bboxes: &[[f64; 4]]) -> Option<Grid> {
        let first = bboxes.first()?;
        let [west, south, east, north] = bboxes.iter().fold(*first, |[w, s, e, n], b| {
            [w.min(b[0]), s.min(b[1]), e.max(b[2]), n.max(b[3])]
        });
        let side = ((bboxes.len() as f64).sqrt() * 2.0).ceil().clamp(1.0, 1024.0) as usize;
        let cell_w = ((east - west) / side as f64).max(f64::MIN_POSITIVE);
        let cell_h = ((north - south) / side as f64).max(f64::MIN_POSITIVE);
        let mut grid = Grid {
            west,
            south,
            cell_w,
            cell_h,
            nx: side,
            ny: side,
            cells: vec![Vec::new(); side * side],
        };
        for (idx, b) in bboxes.iter().enumerate() {
            for row in grid.row(b[1])..=grid.row(b[3]) {
                for col in grid.col(b[0])..=grid.col(b[2]) {
                    grid.cells[row * side + col].push(idx as u32);
                }
            }
        }
        Some(grid)
    }

    pub fn len(&self) -> usize {
        self.regions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.regions.is_empty()
    }

    pub fn region_id(&self, idx: usize) -> &str {
        &self.regions[idx].id
    }

    pub fn tract_id(&self, idx: usize) -> &str {
        tract_of(&self.regions[idx].id)
    }

    pub fn regions(&self) -> &[Region] {
        &self.regions
    }

    fn in_bbox(&self, idx: usize, lat: f64, lon: f64) -> bool {
        let [w, s, e, n] = self.bboxes[idx];
        (w..=e).contains(&lon) && (s..=n).contains(&lat)
    }

    /// Index of the region containing the point, using the grid pre-filter.
    pub fn locate(&self, lat: f64, lon: f64) -> Option<usize> {
        let grid = self.grid.as_ref()?;
        if !(lat.is_finite() && lon.is_finite()) {
            return None;
        }
        let cell = &grid.cells[grid.row(lat) * grid.nx + grid.col(lon)];
        cell.iter()
            .map(|&i| i as usize)
            .find(|&i| self.in_bbox(i, lat, lon) && self.regions[i].contains(lat, lon))
    }

    /// Same contract as [`locate`](Self::locate) by scanning every polygon.
    pub fn locate_by_scan(&self, lat: f64, lon: f64) -> Option<usize> {
        self.regions.iter().position(|r| r.contains(lat, lon))
    }

    /// Reads a GeoJSON FeatureCollection of Polygon / MultiPolygon features
    /// identified by the string (or integer) property `id_property`.
    /// Features sharing an id are merged into one region.
    pub fn from_geojson<R: Read>(source: R, id_property: &str) -> Result<Self> {
        let doc: Value = serde_json::from_reader(source)?;
        let features = doc
            .get("features")
            .and_then(Value::as_array)
            .ok_or_else(|| Error::Data("GeoJSON has no features array".into()))?;
        let mut merged: BTreeMap<String, Vec<Ring>> = BTreeMap::new();
        for (n, feature) in features.iter().enumerate() {
            let id = match feature.get("properties").and_then(|p| p.get(id_property)) {
                Some(Value::String(s)) => s.clone(),
                Some(Value::Number(x)) => x.to_string(),
                _ => {
                    return Err(Error::Data(format!(
                        "feature {n} has no {id_property} property"
                    )))
                }
            };
            let geometry = feature
                .get("geometry")
                .ok_or_else(|| Error::Data(format!("feature {id} has no geometry")))?;
            let coords = geometry.get("coordinates");
            let polygons: Vec<&Value> = match geometry.get("type").and_then(Value::as_str) {
                Some("Polygon") => coords.into_iter().collect(),
                Some("MultiPolygon") => coords
                    .and_then(Value::as_array)
                    .map(|a| a.iter().collect())
                    .unwrap_or_default(),
                other => {
                    return Err(Error::Data(format!(
                        "feature {id} has unsupported geometry {other:?}"
                    )))
                }
            };
            let rings = merged.entry(id.clone()).or_default();
            for polygon in polygons {
                let polygon = polygon
                    .as_array()
                    .ok_or_else(|| Error::Data(format!("feature {id} has malformed coordinates")))?;
                for ring in polygon {
                    rings.push(parse_ring(ring).ok_or_else(|| {
                        Error::Data(format!("feature {id} has a malformed ring"))
                    })?);
                }
            }
        }
        Self::new(
            merged
                .into_iter()
                .map(|(id, rings)| Region::new(id, rings))
                .collect(),
        )
    }
}

fn parse_ring(value: &Value) -> Option<Ring> {
    value
        .as_array()?
        .iter()
        .map(|pt| {
            let pt = pt.as_array()?;
            Some([pt.first()?.as_f64()?, pt.get(1)?.as_f64()?])
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn grid_city(n: usize, side: f64) -> RegionIndex {
        let mut regions = Vec::new();
        for row in 0..n {
            for col in 0..n {
                let west = -74.0 + col as f64 * side;
                let south = 40.6 + row as f64 * side;
                let id = format!("36047{:04}00{}", row * n + col, 1);
                regions.push(Region::rectangle(id, west, south, west + side, south + side));
            }
        }
        RegionIndex::new(regions).unwrap()
    }

    #[test]
    fn centroid_and_outside() {
        let idx = RegionIndex::new(vec![Region::rectangle("360470001001", 0.0, 0.0, 1.0, 1.0)]).unwrap();
        assert_eq!(idx.locate(0.5, 0.5), Some(0));
        assert_eq!(idx.locate(5.0, 5.0), None);
        assert_eq!(idx.locate(-0.5, 0.5), None);
    }

    #[test]
    fn shared_border_belongs_to_one_region() {
        let idx = grid_city(3, 0.01);
        // interior vertical and horizontal borders, and a shared corner
        for (lat, lon) in [(40.605, -73.99), (40.61, -73.995), (40.61, -73.99)] {
            let hits = idx.regions().iter().filter(|r| r.contains(lat, lon)).count();
            assert_eq!(hits, 1, "({lat},{lon})");
            assert!(idx.locate(lat, lon).is_some());
        }
    }

    #[test]
    fn holes_follow_even_odd() {
        let ring = |w: f64, s: f64, e: f64, n: f64| vec![[w, s], [e, s], [e, n], [w, n]];
        let donut = Region::new("360470001001", vec![ring(0.0, 0.0, 4.0, 4.0), ring(1.0, 1.0, 3.0, 3.0)]);
        assert!(donut.contains(0.5, 0.5));
        assert!(!donut.contains(2.0, 2.0));
    }

    #[test]
    fn grid_matches_exhaustive_scan() {
        let idx = grid_city(7, 0.013);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..1000 {
            let lat = rng.gen_range(40.58..40.71);
            let lon = rng.gen_range(-74.02..-73.89);
            assert_eq!(idx.locate(lat, lon), idx.locate_by_scan(lat, lon));
        }
    }

    #[test]
    fn geojson_loading() {
        let doc = r#"{"type":"FeatureCollection","features":[
          {"type":"Feature","properties":{"GEOID":"360470001002"},
           "geometry":{"type":"Polygon","coordinates":[[[1,0],[2,0],[2,1],[1,1],[1,0]]]}},
          {"type":"Feature","properties":{"GEOID":"360470001001"},
           "geometry":{"type":"MultiPolygon","coordinates":[[[[0,0],[1,0],[1,1],[0,1],[0,0]]]]}}]}"#;
        let idx = RegionIndex::from_geojson(doc.as_bytes(), "GEOID").unwrap();
        assert_eq!(idx.len(), 2);
        assert_eq!(idx.region_id(0), "360470001001");
        assert_eq!(idx.locate(0.5, 1.5).map(|i| idx.region_id(i)), Some("360470001002"));
        assert_eq!(idx.tract_id(0), "36047000100");
        assert!(RegionIndex::from_geojson(doc.as_bytes(), "NAME").is_err());
    }

    #[test]
    fn short_geoid_rejected() {
        assert!(RegionIndex::new(vec![Region::rectangle("3604", 0.0, 0.0, 1.0, 1.0)]).is_err());
    }
}
