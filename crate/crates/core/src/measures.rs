//! Points, discrete probability measures, weighted measure collections and
//! ground-cost matrices, plus the JSON file formats for measures and datasets.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on `|sum(weights) - 1|` for a probability measure.
pub const WEIGHT_SUM_TOL: f64 = 1e-9;

/// A point of `R^d` with finite coordinates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Point(Vec<f64>);

impl Point {
    pub fn new(coords: Vec<f64>) -> Result<Self> {
        if coords.is_empty() {
            return Err(Error::input("point must have at least one coordinate"));
        }
        if let Some(c) = coords.iter().find(|c| !c.is_finite()) {
            return Err(Error::input(format!("non-finite coordinate {c}")));
        }
        Ok(Point(coords))
    }

    pub fn coords(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}

impl From<f64> for Point {
    fn from(x: f64) -> Self {
        Point::new(vec![x]).expect("finite scalar")
    }
}

/// Euclidean distance between two points of equal dimension.
pub fn euclidean(a: &Point, b: &Point) -> f64 {
    squared_euclidean(a, b).sqrt()
}

pub fn squared_euclidean(a: &Point, b: &Point) -> f64 {
    a.0.iter().zip(&b.0).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// A finitely supported probability measure `sum_i w_i delta_{x_i}`.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscreteMeasure {
    locations: Vec<Point>,
    weights: Vec<f64>,
}

impl DiscreteMeasure {
    /// Validates shape, nonnegativity and `sum(weights) = 1` within [`WEIGHT_SUM_TOL`].
    pub fn new(locations: Vec<Point>, weights: Vec<f64>) -> Result<Self> {
        Self::check_shape(&locations, &weights)?;
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(Error::input(format!(
                "weights sum to {total}, expected 1 within {WEIGHT_SUM_TOL:e}"
            )));
        }
        Ok(DiscreteMeasure { locations, weights })
    }

    /// Like [`DiscreteMeasure::new`] but rescales the weights to sum to one.
    pub fn new_normalized(locations: Vec<Point>, weights: Vec<f64>) -> Result<Self> {
        Self::check_shape(&locations, &weights)?;
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return Err(Error::input("weights have zero total mass"));
        }
        let weights = weights.into_iter().map(|w| w / total).collect();
        Ok(DiscreteMeasure { locations, weights })
    }

    /// Unit point mass.
    pub fn dirac(point: Point) -> Self {
        DiscreteMeasure {
            locations: vec![point],
            weights: vec![1.0],
        }
    }

    /// Uniform weights over the given locations.
    pub fn uniform(locations: Vec<Point>) -> Result<Self> {
        let n = locations.len();
        Self::new_normalized(locations, vec![1.0; n])
    }

    fn check_shape(locations: &[Point], weights: &[f64]) -> Result<()> {
        if locations.is_empty() {
            return Err(Error::input("measure must have at least one atom"));
        }
        if locations.len() != weights.len() {
            return Err(Error::input(format!(
                "{} locations but {} weights",
                locations.len(),
                weights.len()
            )));
        }
        let d = locations[0].dim();
        if let Some(p) = locations.iter().find(|p| p.dim() != d) {
            return Err(Error::input(format!(
                "mixed dimensions in measure: {d} and {}",
                p.dim()
            )));
        }
        if let Some(w) = weights.iter().find(|w| !(w.is_finite() && **w >= 0.0)) {
            return Err(Error::input(format!("invalid weight {w}")));
        }
        Ok(())
    }

    pub fn locations(&self) -> &[Point] {
        &self.locations
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.locations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.locations.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.locations[0].dim()
    }

    pub fn into_parts(self) -> (Vec<Point>, Vec<f64>) {
        (self.locations, self.weights)
    }
}

/// A collection of measures with positive set weights (the input set or a coreset).
#[derive(Clone, Debug, PartialEq)]
pub struct WeightedMeasureSet {
    measures: Vec<DiscreteMeasure>,
    set_weights: Vec<f64>,
}

impl WeightedMeasureSet {
    pub fn new(measures: Vec<DiscreteMeasure>, set_weights: Vec<f64>) -> Result<Self> {
        if measures.is_empty() {
            return Err(Error::input("measure set is empty"));
        }
        if measures.len() != set_weights.len() {
            return Err(Error::input(format!(
                "{} measures but {} set weights",
                measures.len(),
                set_weights.len()
            )));
        }
        if let Some(w) = set_weights.iter().find(|w| !(w.is_finite() && **w > 0.0)) {
            return Err(Error::input(format!("set weight {w} is not positive")));
        }
        let d = measures[0].dim();
        if measures.iter().any(|m| m.dim() != d) {
            return Err(Error::input("measures in a set must share one dimension"));
        }
        Ok(WeightedMeasureSet {
            measures,
            set_weights,
        })
    }

    /// All set weights equal to one.
    pub fn uniform(measures: Vec<DiscreteMeasure>) -> Result<Self> {
        let m = measures.len();
        Self::new(measures, vec![1.0; m])
    }

    pub fn measures(&self) -> &[DiscreteMeasure] {
        &self.measures
    }

    pub fn set_weights(&self) -> &[f64] {
        &self.set_weights
    }

    pub fn len(&self) -> usize {
        self.measures.len()
    }

    pub fn is_empty(&self) -> bool {
        self.measures.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.measures[0].dim()
    }

    pub fn total_weight(&self) -> f64 {
        self.set_weights.iter().sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&DiscreteMeasure, f64)> {
        self.measures.iter().zip(self.set_weights.iter().copied())
    }
}

/// Dense row-major matrix of nonnegative transport costs.
#[derive(Clone, Debug, PartialEq)]
pub struct CostMatrix {
    rows: usize,
    cols: usize,
    entries: Vec<f64>,
    exponent: f64,
}

impl CostMatrix {
    /// Wraps explicit entries. Rejects negative, NaN or infinite costs.
    pub fn from_entries(rows: usize, cols: usize, entries: Vec<f64>, exponent: f64) -> Result<Self> {
        if entries.len() != rows * cols {
            return Err(Error::input(format!(
                "cost matrix has {} entries, expected {rows}x{cols}",
                entries.len()
            )));
        }
        if let Some(c) = entries.iter().find(|c| !(c.is_finite() && **c >= 0.0)) {
            return Err(Error::input(format!("cost entry {c} is not finite and nonnegative")));
        }
        Ok(CostMatrix {
            rows,
            cols,
            entries,
            exponent,
        })
    }

    /// Convenience constructor from nested rows (exponent recorded as 1).
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|row| row.len() != c) {
            return Err(Error::input("ragged cost matrix"));
        }
        Self::from_entries(r, c, rows.concat(), 1.0)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn exponent(&self) -> f64 {
        self.exponent
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.cols + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.entries[i * self.cols..(i + 1) * self.cols]
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    pub fn max(&self) -> f64 {
        self.entries.iter().copied().fold(0.0, f64::max)
    }

    pub fn transpose(&self) -> CostMatrix {
        let mut entries = Vec::with_capacity(self.entries.len());
        for j in 0..self.cols {
            for i in 0..self.rows {
                entries.push(self.get(i, j));
            }
        }
        CostMatrix {
            rows: self.cols,
            cols: self.rows,
            entries,
            exponent: self.exponent,
        }
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.rows).map(|i| self.row(i).to_vec()).collect()
    }
}

/// `C_ij = ||x_i - y_j||_2^z`.
pub fn build_cost_matrix(xs: &[Point], ys: &[Point], z: f64) -> Result<CostMatrix> {
    build_cost_matrix_with(xs, ys, z, euclidean)
}

/// Cost matrix under an arbitrary ground metric.
pub fn build_cost_matrix_with<F>(xs: &[Point], ys: &[Point], z: f64, dist: F) -> Result<CostMatrix>
where
    F: Fn(&Point, &Point) -> f64,
{
    if !(z >= 1.0 && z.is_finite()) {
        return Err(Error::input(format!("exponent z = {z} must be >= 1")));
    }
    let d = xs.first().or(ys.first()).map_or(0, Point::dim);
    if let Some(p) = xs.iter().chain(ys).find(|p| p.dim() != d) {
        return Err(Error::input(format!(
            "dimension mismatch: expected {d}, found {}",
            p.dim()
        )));
    }
    let mut entries = Vec::with_capacity(xs.len() * ys.len());
    for x in xs {
        for y in ys {
            entries.push(power(dist(x, y), z));
        }
    }
    Ok(CostMatrix {
        rows: xs.len(),
        cols: ys.len(),
        entries,
        exponent: z,
    })
}

/// `t^z` with the common exponents computed exactly.
pub(crate) fn power(t: f64, z: f64) -> f64 {
    if z == 1.0 {
        t
    } else if z == 2.0 {
        t * t
    } else {
        t.powf(z)
    }
}

// ---------------------------------------------------------------------------
// JSON formats

#[derive(Debug, Serialize, Deserialize)]
pub(crate) struct MeasureFile {
    pub points: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
pub(crate) struct DatasetFile {
    pub measures: Vec<MeasureFile>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub set_weights: Option<Vec<f64>>,
}

impl From<&DiscreteMeasure> for MeasureFile {
    fn from(m: &DiscreteMeasure) -> Self {
        MeasureFile {
            points: m.locations.iter().map(|p| p.0.clone()).collect(),
            weights: m.weights.clone(),
        }
    }
}

/// 1-based line/column of the `nth` occurrence of `needle`, or (1, 1).
fn locate(text: &str, needle: &str, nth: usize) -> (usize, usize) {
    let Some((offset, _)) = text.match_indices(needle).nth(nth) else {
        return (1, 1);
    };
    let before = &text[..offset];
    let line = before.matches('\n').count() + 1;
    let column = offset - before.rfind('\n').map_or(0, |p| p + 1) + 1;
    (line, column)
}

fn json_error(e: serde_json::Error) -> Error {
    Error::Parse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    }
}

fn measure_from_file(file: MeasureFile, text: &str, index: usize) -> Result<DiscreteMeasure> {
    let to_parse = |e: Error, key: &str| {
        let (line, column) = locate(text, key, index);
        Error::Parse {
            line,
            column,
            message: e.to_string(),
        }
    };
    let points = file
        .points
        .into_iter()
        .map(Point::new)
        .collect::<Result<Vec<_>>>()
        .map_err(|e| to_parse(e, "\"points\""))?;
    DiscreteMeasure::new(points, file.weights).map_err(|e| to_parse(e, "\"weights\""))
}

/// Parse a measure from JSON text `{"points": [[..], ..], "weights": [..]}`.
pub fn parse_measure(text: &str) -> Result<DiscreteMeasure> {
    let file: MeasureFile = serde_json::from_str(text).map_err(json_error)?;
    measure_from_file(file, text, 0)
}

pub fn measure_to_json(measure: &DiscreteMeasure) -> String {
    serde_json::to_string(&MeasureFile::from(measure)).expect("measure serializes")
}

pub fn load_measure(path: impl AsRef<Path>) -> Result<DiscreteMeasure> {
    parse_measure(&fs::read_to_string(path)?)
}

pub fn save_measure(measure: &DiscreteMeasure, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, measure_to_json(measure))?;
    Ok(())
}

/// Parse a dataset `{"measures": [...], "set_weights": [...]}`; absent set
/// weights default to all ones.
pub fn parse_dataset(text: &str) -> Result<WeightedMeasureSet> {
    let file: DatasetFile = serde_json::from_str(text).map_err(json_error)?;
    let measures = file
        .measures
        .into_iter()
        .enumerate()
        .map(|(k, m)| measure_from_file(m, text, k))
        .collect::<Result<Vec<_>>>()?;
    let set_weights = file.set_weights.unwrap_or_else(|| vec![1.0; measures.len()]);
    WeightedMeasureSet::new(measures, set_weights).map_err(|e| {
        let (line, column) = locate(text, "\"set_weights\"", 0);
        Error::Parse {
            line,
            column,
            message: e.to_string(),
        }
    })
}

pub fn dataset_to_json(set: &WeightedMeasureSet) -> String {
    let file = DatasetFile {
        measures: set.measures.iter().map(MeasureFile::from).collect(),
        set_weights: Some(set.set_weights.clone()),
    };
    serde_json::to_string(&file).expect("dataset serializes")
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<WeightedMeasureSet> {
    parse_dataset(&fs::read_to_string(path)?)
}

pub fn save_dataset(set: &WeightedMeasureSet, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, dataset_to_json(set))?;
    Ok(())
}
