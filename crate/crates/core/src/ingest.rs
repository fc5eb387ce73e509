//! Spatial event records to a weekly area count matrix, and partial
//! correlation edges back out as GeoJSON.
//!
//! Areas are the `A` busiest cells of a regular `nx × ny` grid over the event
//! extent. Weeks are 7-day blocks from January 1; days 365 and 366 fold into
//! the 52nd week, so every year yields exactly 52 rows.

use std::fs;
use std::path::Path;

use chrono::{Datelike, NaiveDate, NaiveDateTime};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{validation, Error, Result};
use crate::model::CountMatrix;
use crate::posterior::EdgeSet;

pub const WEEKS_PER_YEAR: usize = 52;

/// Input column names.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnMap {
    pub time: String,
    pub x: String,
    pub y: String,
    pub category: Option<String>,
}

impl Default for ColumnMap {
    /// Column names used by common calls-for-service extracts.
    fn default() -> Self {
        Self {
            time: "occ_date".into(),
            x: "x_coordinate".into(),
            y: "y_coordinate".into(),
            category: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EventRecord {
    pub timestamp: NaiveDateTime,
    pub x: f64,
    pub y: f64,
    pub category: Option<String>,
}

const DATETIME_FORMATS: [&str; 6] = [
    "%Y-%m-%dT%H:%M:%S%.f",
    "%Y-%m-%d %H:%M:%S%.f",
    "%Y-%m-%dT%H:%M",
    "%Y-%m-%d %H:%M",
    "%m/%d/%Y %H:%M:%S",
    "%m/%d/%Y %H:%M",
];
const DATE_FORMATS: [&str; 3] = ["%Y-%m-%d", "%m/%d/%Y", "%Y/%m/%d"];

pub fn parse_timestamp(s: &str) -> Option<NaiveDateTime> {
    let s = s.trim();
    if let Ok(dt) = chrono::DateTime::parse_from_rfc3339(s) {
        return Some(dt.naive_local());
    }
    DATETIME_FORMATS
        .iter()
        .find_map(|f| NaiveDateTime::parse_from_str(s, f).ok())
        .or_else(|| {
            DATE_FORMATS
                .iter()
                .find_map(|f| NaiveDate::parse_from_str(s, f).ok())
                .and_then(|d| d.and_hms_opt(0, 0, 0))
        })
}

#[derive(Debug, Clone)]
pub struct ParsedEvents {
    pub events: Vec<EventRecord>,
    /// Data rows read, including skipped ones.
    pub rows: u64,
    /// Rows dropped for an unparseable timestamp or coordinate.
    pub skipped: u64,
}

pub fn parse_events(path: &Path, columns: &ColumnMap) -> Result<ParsedEvents> {
    let mut rdr = csv::ReaderBuilder::new()
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::Data(format!("cannot read {}: {e}", path.display())))?;
    let headers = rdr.headers()?.clone();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Config(format!("column {name:?} not found in {}", path.display())))
    };
    let ti = find(&columns.time)?;
    let xi = find(&columns.x)?;
    let yi = find(&columns.y)?;
    let ci = columns.category.as_deref().map(find).transpose()?;

    let mut events = Vec::new();
    let (mut rows, mut skipped) = (0u64, 0u64);
    for rec in rdr.records() {
        rows += 1;
        let Ok(rec) = rec else {
            skipped += 1;
            continue;
        };
        let ts = rec.get(ti).and_then(parse_timestamp);
        let x = rec.get(xi).and_then(|v| v.parse::<f64>().ok()).filter(|v| v.is_finite());
        let y = rec.get(yi).and_then(|v| v.parse::<f64>().ok()).filter(|v| v.is_finite());
        match (ts, x, y) {
            (Some(timestamp), Some(x), Some(y)) => events.push(EventRecord {
                timestamp,
                x,
                y,
                category: ci.and_then(|c| rec.get(c)).map(str::to_string),
            }),
            _ => skipped += 1,
        }
    }
    if events.is_empty() {
        return Err(Error::Data(format!("{}: no valid event rows", path.display())));
    }
    Ok(ParsedEvents { events, rows, skipped })
}

/// Writes events with the given column names; timestamps as ISO 8601.
pub fn write_events(events: &[EventRecord], columns: &ColumnMap, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let cat = columns.category.clone().unwrap_or_else(|| "category".into());
    w.write_record([&columns.time, &columns.x, &columns.y, &cat])?;
    for e in events {
        w.write_record([
            e.timestamp.format("%Y-%m-%dT%H:%M:%S%.f").to_string(),
            e.x.to_string(),
            e.y.to_string(),
            e.category.clone().unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// A retained grid cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Area {
    /// Column index in the count matrix.
    pub area_id: usize,
    /// Row-major cell id, `row * nx + col`.
    pub cell_id: usize,
    pub centroid: [f64; 2],
    pub total_count: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AreaGrid {
    /// `[min_x, min_y, max_x, max_y]`.
    pub bbox: [f64; 4],
    pub nx: usize,
    pub ny: usize,
    pub selected: Vec<Area>,
}

impl AreaGrid {
    fn cell_size(&self) -> (f64, f64) {
        (
            (self.bbox[2] - self.bbox[0]) / self.nx as f64,
            (self.bbox[3] - self.bbox[1]) / self.ny as f64,
        )
    }

    /// Cell id containing `(x, y)`, or `None` outside the box. The upper
    /// edges belong to the last row/column.
    pub fn cell_of(&self, x: f64, y: f64) -> Option<usize> {
        let [x0, y0, x1, y1] = self.bbox;
        if !(x >= x0 && x <= x1 && y >= y0 && y <= y1) {
            return None;
        }
        let (w, h) = self.cell_size();
        let col = (((x - x0) / w).floor() as usize).min(self.nx - 1);
        let row = (((y - y0) / h).floor() as usize).min(self.ny - 1);
        Some(row * self.nx + col)
    }

    pub fn cell_centroid(&self, cell_id: usize) -> [f64; 2] {
        let (w, h) = self.cell_size();
        let (row, col) = (cell_id / self.nx, cell_id % self.nx);
        [
            self.bbox[0] + (col as f64 + 0.5) * w,
            self.bbox[1] + (row as f64 + 0.5) * h,
        ]
    }

    pub fn area_of(&self, x: f64, y: f64) -> Option<usize> {
        let cell = self.cell_of(x, y)?;
        self.selected.iter().find(|a| a.cell_id == cell).map(|a| a.area_id)
    }
}

/// Grid over the event extent keeping the `areas` busiest cells (ties by
/// cell id). A zero-width extent is widened by 0.5 on each side.
pub fn build_grid(events: &[EventRecord], nx: usize, ny: usize, areas: usize) -> Result<AreaGrid> {
    if events.is_empty() {
        return validation("cannot build a grid from zero events");
    }
    if nx == 0 || ny == 0 || areas == 0 {
        return validation("grid dimensions and area count must be positive");
    }
    if areas > nx * ny {
        return validation(format!("{areas} areas requested from a {nx}x{ny} grid"));
    }
    let fold = |f: fn(f64, f64) -> f64, init: f64, sel: fn(&EventRecord) -> f64| events.iter().map(sel).fold(init, f);
    let (mut x0, mut x1) = (fold(f64::min, f64::INFINITY, |e| e.x), fold(f64::max, f64::NEG_INFINITY, |e| e.x));
    let (mut y0, mut y1) = (fold(f64::min, f64::INFINITY, |e| e.y), fold(f64::max, f64::NEG_INFINITY, |e| e.y));
    if x1 <= x0 {
        x0 -= 0.5;
        x1 += 0.5;
    }
    if y1 <= y0 {
        y0 -= 0.5;
        y1 += 0.5;
    }
    let mut grid = AreaGrid {
        bbox: [x0, y0, x1, y1],
        nx,
        ny,
        selected: Vec::new(),
    };
    let mut counts = vec![0u64; nx * ny];
    for e in events {
        if let Some(c) = grid.cell_of(e.x, e.y) {
            counts[c] += 1;
        }
    }
    let mut ranked: Vec<usize> = (0..nx * ny).filter(|&c| counts[c] > 0).collect();
    if ranked.len() < areas {
        return Err(Error::Data(format!(
            "only {} non-empty cells for {areas} requested areas; use a smaller area count or a finer grid",
            ranked.len()
        )));
    }
    ranked.sort_by(|&a, &b| counts[b].cmp(&counts[a]).then(a.cmp(&b)));
    grid.selected = ranked[..areas]
        .iter()
        .enumerate()
        .map(|(area_id, &cell_id)| Area {
            area_id,
            cell_id,
            centroid: grid.cell_centroid(cell_id),
            total_count: counts[cell_id],
        })
        .collect();
    Ok(grid)
}

/// Row accounting for one ingestion run. `rows = skipped + out_of_year +
/// outside_areas + counted`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestTallies {
    pub rows: u64,
    pub skipped: u64,
    pub out_of_year: u64,
    pub outside_areas: u64,
    pub counted: u64,
}

impl IngestTallies {
    pub fn reconciles(&self) -> bool {
        self.rows == self.skipped + self.out_of_year + self.outside_areas + self.counted
    }
}

/// Zero-based week of a date: `min(ordinal0 / 7, 51)`.
pub fn week_index(date: NaiveDate) -> usize {
    (date.ordinal0() as usize / 7).min(WEEKS_PER_YEAR - 1)
}

/// 52×A counts of events in `year` per week and retained area.
pub fn aggregate_weekly(events: &[EventRecord], grid: &AreaGrid, year: i32) -> Result<(CountMatrix, IngestTallies)> {
    let a = grid.selected.len();
    if a == 0 {
        return validation("grid has no retained areas");
    }
    let mut counts = DMatrix::<u64>::zeros(WEEKS_PER_YEAR, a);
    let mut tallies = IngestTallies::default();
    for e in events {
        tallies.rows += 1;
        let date = e.timestamp.date();
        if date.year() != year {
            tallies.out_of_year += 1;
            continue;
        }
        match grid.area_of(e.x, e.y) {
            Some(i) => {
                counts[(week_index(date), i)] += 1;
                tallies.counted += 1;
            }
            None => tallies.outside_areas += 1,
        }
    }
    Ok((CountMatrix::new(counts)?, tallies))
}

#[derive(Debug, Clone)]
pub struct IngestResult {
    pub counts: CountMatrix,
    pub grid: AreaGrid,
    pub tallies: IngestTallies,
}

/// Parse, keep `year`, grid the year's events and aggregate by week.
pub fn ingest(path: &Path, columns: &ColumnMap, year: i32, nx: usize, ny: usize, areas: usize) -> Result<IngestResult> {
    let parsed = parse_events(path, columns)?;
    let in_year: Vec<EventRecord> = parsed
        .events
        .iter()
        .filter(|e| e.timestamp.date().year() == year)
        .cloned()
        .collect();
    if in_year.is_empty() {
        return Err(Error::Data(format!("no events in year {year}")));
    }
    let grid = build_grid(&in_year, nx, ny, areas)?;
    let (counts, mut tallies) = aggregate_weekly(&parsed.events, &grid, year)?;
    tallies.rows = parsed.rows;
    tallies.skipped = parsed.skipped;
    Ok(IngestResult { counts, grid, tallies })
}

/// Contents of `areas.json`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AreasFile {
    pub year: i32,
    pub grid: AreaGrid,
    pub tallies: IngestTallies,
}

impl AreasFile {
    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read areas file {}: {e}", path.display())))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }
}

/// GeoJSON FeatureCollection: one LineString per edge between area
/// centroids, one Point per area.
///
/// Coordinates are echoed in input units. Unless `lonlat` is set, the
/// collection carries a `"coordinates": "planar"` member marking that they
/// are not WGS84; with `lonlat` they are range-checked instead.
pub fn geojson(edges: &EdgeSet, grid: &AreaGrid, lonlat: bool) -> Result<Value> {
    let centroid = |k: usize| {
        grid.selected
            .get(k)
            .map(|a| a.centroid)
            .ok_or_else(|| Error::Validation(format!("edge references area {k} without a centroid")))
    };
    if lonlat {
        for a in &grid.selected {
            let [lon, lat] = a.centroid;
            if !((-180.0..=180.0).contains(&lon) && (-90.0..=90.0).contains(&lat)) {
                return validation(format!("area {} centroid ({lon}, {lat}) is not lon/lat", a.area_id));
            }
        }
    }
    let mut features = Vec::with_capacity(edges.edges.len() + grid.selected.len());
    for e in &edges.edges {
        let (p, q) = (centroid(e.i)?, centroid(e.j)?);
        features.push(json!({
            "type": "Feature",
            "geometry": { "type": "LineString", "coordinates": [p, q] },
            "properties": { "i": e.i, "j": e.j, "weight": e.weight, "abs_weight": e.weight.abs() },
        }));
    }
    for a in &grid.selected {
        features.push(json!({
            "type": "Feature",
            "geometry": { "type": "Point", "coordinates": a.centroid },
            "properties": { "area_id": a.area_id, "total_count": a.total_count },
        }));
    }
    let mut fc = json!({ "type": "FeatureCollection", "features": features });
    if !lonlat {
        fc["coordinates"] = json!("planar");
    }
    Ok(fc)
}

pub fn export_geojson(edges: &EdgeSet, grid: &AreaGrid, path: &Path, lonlat: bool) -> Result<()> {
    let v = geojson(edges, grid, lonlat)?;
    fs::write(path, serde_json::to_string_pretty(&v)? + "\n")?;
    Ok(())
}
