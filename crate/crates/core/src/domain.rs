//! Value types shared by every stage of the pipeline: county covariates,
//! treatment conditions on a rectangular level grid, raw simulation
//! observations, and the z-score transform applied to GP inputs.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of columns produced by [`CountyFeatures::to_vec`].
pub const FEATURE_DIM: usize = 6;

/// Column names in [`CountyFeatures::to_vec`] order.
pub const FEATURE_NAMES: [&str; FEATURE_DIM] = [
    "lat",
    "lon",
    "median_income",
    "pop_density",
    "pct_black",
    "population",
];

/// Spatial and socio-economic covariates of one county.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountyFeatures {
    pub county_id: String,
    /// Centroid latitude in degrees.
    #[serde(rename = "lat")]
    pub centroid_lat: f64,
    /// Centroid longitude in degrees.
    #[serde(rename = "lon")]
    pub centroid_lon: f64,
    /// USD per year.
    pub median_income: f64,
    /// Persons per square km.
    pub pop_density: f64,
    /// Fraction in `[0, 1]`, not a percentage.
    pub pct_black: f64,
    pub population: u64,
}

impl CountyFeatures {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::invalid(format!("county {}: {what}", self.county_id)));
        if self.county_id.is_empty() {
            return Err(Error::invalid("empty county_id"));
        }
        if !(-90.0..=90.0).contains(&self.centroid_lat) {
            return bad("latitude outside [-90, 90]");
        }
        if !(-180.0..=180.0).contains(&self.centroid_lon) {
            return bad("longitude outside [-180, 180]");
        }
        if !(self.median_income > 0.0) || !(self.pop_density > 0.0) || self.population == 0 {
            return bad("income, density and population must be positive");
        }
        if !(0.0..=1.0).contains(&self.pct_black) {
            return bad("pct_black must be a fraction in [0, 1]");
        }
        Ok(())
    }

    pub fn to_vec(&self) -> [f64; FEATURE_DIM] {
        [
            self.centroid_lat,
            self.centroid_lon,
            self.median_income,
            self.pop_density,
            self.pct_black,
            self.population as f64,
        ]
    }
}

/// Reads `county_id,lat,lon,median_income,pop_density,pct_black,population`.
pub fn read_counties_csv(path: impl AsRef<Path>) -> Result<Vec<CountyFeatures>> {
    let rdr = csv::Reader::from_path(path)?;
    read_counties(rdr)
}

pub fn read_counties<R: std::io::Read>(mut rdr: csv::Reader<R>) -> Result<Vec<CountyFeatures>> {
    let expected = ["county_id", "lat", "lon", "median_income", "pop_density", "pct_black", "population"];
    let headers = rdr.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != expected {
        return Err(Error::invalid(format!(
            "county CSV header must be `{}`",
            expected.join(",")
        )));
    }
    let mut out = Vec::new();
    for row in rdr.deserialize() {
        let c: CountyFeatures = row?;
        c.validate()?;
        out.push(c);
    }
    let mut ids: Vec<&str> = out.iter().map(|c| c.county_id.as_str()).collect();
    ids.sort_unstable();
    if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
        return Err(Error::invalid(format!("duplicate county_id `{}`", w[0])));
    }
    Ok(out)
}

pub fn write_counties_csv(path: impl AsRef<Path>, counties: &[CountyFeatures]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for c in counties {
        w.serialize(c)?;
    }
    w.flush()?;
    Ok(())
}

/// An integer level pair; `(0, 0)` is baseline dispensing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TreatmentCondition {
    /// Naloxone level.
    pub n: u32,
    /// Buprenorphine level.
    pub b: u32,
}

impl TreatmentCondition {
    pub const BASELINE: TreatmentCondition = TreatmentCondition { n: 0, b: 0 };

    pub fn new(n: u32, b: u32) -> Self {
        TreatmentCondition { n, b }
    }
}

impl std::fmt::Display for TreatmentCondition {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({},{})", self.n, self.b)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct TreatmentGrid {
    levels_n: u32,
    levels_b: u32,
}

impl TreatmentGrid {
    pub fn new(levels_n: u32, levels_b: u32) -> Result<Self> {
        if levels_n < 2 || levels_b < 2 {
            return Err(Error::invalid(format!(
                "treatment grid needs at least 2 levels per factor, got {levels_n}x{levels_b}"
            )));
        }
        Ok(TreatmentGrid { levels_n, levels_b })
    }

    pub fn levels_n(&self) -> u32 {
        self.levels_n
    }

    pub fn levels_b(&self) -> u32 {
        self.levels_b
    }

    pub fn size(&self) -> usize {
        (self.levels_n * self.levels_b) as usize
    }

    pub fn contains(&self, c: TreatmentCondition) -> bool {
        c.n < self.levels_n && c.b < self.levels_b
    }

    /// Row-major enumeration: `n` outer, `b` inner.
    pub fn conditions(&self) -> impl Iterator<Item = TreatmentCondition> + '_ {
        (0..self.levels_n).flat_map(move |n| (0..self.levels_b).map(move |b| TreatmentCondition { n, b }))
    }

    pub fn enumerate(&self) -> Vec<TreatmentCondition> {
        self.conditions().collect()
    }

    pub fn index_of(&self, c: TreatmentCondition) -> Option<usize> {
        self.contains(c).then(|| (c.n * self.levels_b + c.b) as usize)
    }
}

impl<'de> Deserialize<'de> for TreatmentGrid {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(deny_unknown_fields)]
        struct Raw {
            levels_n: u32,
            levels_b: u32,
        }
        let raw = Raw::deserialize(d)?;
        TreatmentGrid::new(raw.levels_n, raw.levels_b).map_err(serde::de::Error::custom)
    }
}

impl Default for TreatmentGrid {
    fn default() -> Self {
        TreatmentGrid { levels_n: 5, levels_b: 5 }
    }
}

/// One simulation replicate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub county_id: String,
    pub condition: TreatmentCondition,
    /// Deaths per 100,000 persons over the horizon.
    pub outcome: f64,
    pub replicate_seed: u64,
}

/// Per-column z-score transform, fitted on a training set of counties.
///
/// Uses the sample (n - 1) standard deviation. Columns with zero spread are
/// flagged constant and map to 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
}

impl Standardizer {
    pub fn fit(rows: &[Vec<f64>]) -> Result<Self> {
        if rows.len() < 2 {
            return Err(Error::invalid("standardization needs at least 2 rows"));
        }
        let dim = rows[0].len();
        if let Some(r) = rows.iter().find(|r| r.len() != dim) {
            return Err(Error::DimensionMismatch { expected: dim, got: r.len() });
        }
        let n = rows.len() as f64;
        let mut mean = vec![0.0; dim];
        for r in rows {
            for (m, v) in mean.iter_mut().zip(r) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut sd = vec![0.0; dim];
        for r in rows {
            for j in 0..dim {
                sd[j] += (r[j] - mean[j]).powi(2);
            }
        }
        for (j, s) in sd.iter_mut().enumerate() {
            *s = (*s / (n - 1.0)).sqrt();
            // Relative test so that e.g. a constant income of 5e4 is not
            // mistaken for spread by rounding in the mean.
            if *s <= 1e-12 * mean[j].abs().max(1.0) {
                *s = 0.0;
            }
        }
        Ok(Standardizer { mean, sd })
    }

    pub fn fit_counties(counties: &[CountyFeatures]) -> Result<Self> {
        let rows: Vec<Vec<f64>> = counties.iter().map(|c| c.to_vec().to_vec()).collect();
        Self::fit(&rows)
    }

    pub fn is_constant(&self, column: usize) -> bool {
        self.sd[column] == 0.0
    }

    pub fn transform(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.mean.iter().zip(&self.sd))
            .map(|(v, (m, s))| if *s == 0.0 { 0.0 } else { (v - m) / s })
            .collect()
    }

    /// Exact inverse on non-constant columns; constant columns return their mean.
    pub fn inverse(&self, z: &[f64]) -> Vec<f64> {
        z.iter()
            .zip(self.mean.iter().zip(&self.sd))
            .map(|(v, (m, s))| m + v * s)
            .collect()
    }
}

/// Fits the transform on `features` and returns it together with the
/// transformed rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StandardizedFeatures {
    pub transform: Standardizer,
    pub rows: Vec<Vec<f64>>,
}

pub fn standardize(features: &[CountyFeatures]) -> Result<StandardizedFeatures> {
    let transform = Standardizer::fit_counties(features)?;
    let rows = features.iter().map(|c| transform.transform(&c.to_vec())).collect();
    Ok(StandardizedFeatures { transform, rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn county(id: &str, income: f64) -> CountyFeatures {
        CountyFeatures {
            county_id: id.into(),
            centroid_lat: 40.0,
            centroid_lon: -77.0,
            median_income: income,
            pop_density: 100.0,
            pct_black: 0.1,
            population: 50_000,
        }
    }

    #[test]
    fn grid_rejects_single_level() {
        assert!(TreatmentGrid::new(1, 5).is_err());
        assert!(TreatmentGrid::new(5, 1).is_err());
    }

    #[test]
    fn grid_two_by_two_is_row_major() {
        let g = TreatmentGrid::new(2, 2).unwrap();
        let got: Vec<(u32, u32)> = g.enumerate().iter().map(|c| (c.n, c.b)).collect();
        assert_eq!(got, vec![(0, 0), (0, 1), (1, 0), (1, 1)]);
    }

    #[test]
    fn grid_five_by_five_has_25_conditions() {
        let g = TreatmentGrid::new(5, 5).unwrap();
        assert_eq!(g.enumerate().len(), 25);
        for (i, c) in g.conditions().enumerate() {
            assert_eq!(g.index_of(c), Some(i));
        }
        assert_eq!(g.index_of(TreatmentCondition::new(5, 0)), None);
    }

    #[test]
    fn two_incomes_use_sample_sd() {
        let s = standardize(&[county("a", 40_000.0), county("b", 60_000.0)]).unwrap();
        let z: Vec<f64> = s.rows.iter().map(|r| r[2]).collect();
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert!((z[0] + h).abs() < 1e-12 && (z[1] - h).abs() < 1e-12, "{z:?}");
    }

    #[test]
    fn constant_column_maps_to_zero() {
        let s = standardize(&[county("a", 40_000.0), county("b", 60_000.0)]).unwrap();
        assert!(s.transform.is_constant(0));
        assert!(s.rows.iter().all(|r| r[0] == 0.0 && r[3] == 0.0));
    }

    #[test]
    fn one_county_is_rejected() {
        assert!(standardize(&[county("a", 1.0)]).is_err());
    }

    #[test]
    fn csv_header_is_checked() {
        let data = "county_id,lat,lon,median_income,pop_density,pct_black,population\n\
                    a,40.1,-77.2,52000,120.5,0.12,90000\n";
        let v = read_counties(csv::Reader::from_reader(data.as_bytes())).unwrap();
        assert_eq!(v[0].median_income, 52000.0);
        let bad = "id,lat,lon,median_income,pop_density,pct_black,population\na,1,1,1,1,0,1\n";
        assert!(read_counties(csv::Reader::from_reader(bad.as_bytes())).is_err());
        let pct = "county_id,lat,lon,median_income,pop_density,pct_black,population\n\
                   a,40.1,-77.2,52000,120.5,12,90000\n";
        assert!(read_counties(csv::Reader::from_reader(pct.as_bytes())).is_err());
    }
}
