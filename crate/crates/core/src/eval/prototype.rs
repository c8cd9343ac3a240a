use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::domain::Standardizer;
use crate::error::{Error, Result};

/// Trend summary used to match an uncalibrated county to a calibrated one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountySummaryFeatures {
    pub county_id: String,
    pub mean_death_rate: f64,
    pub death_slope: f64,
    pub opioid_slope: f64,
    pub naloxone_slope: f64,
    pub buprenorphine_slope: f64,
    pub fentanyl_slope: f64,
    pub population: f64,
}

/// Least-squares slope of `ys` against `0, 1, 2, ...`; 0 for fewer than two points.
pub fn ols_slope(ys: &[f64]) -> f64 {
    let n = ys.len();
    if n < 2 {
        return 0.0;
    }
    let tbar = (n - 1) as f64 / 2.0;
    let ybar = ys.iter().sum::<f64>() / n as f64;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (t, y) in ys.iter().enumerate() {
        let dt = t as f64 - tbar;
        sxy += dt * (y - ybar);
        sxx += dt * dt;
    }
    sxy / sxx
}

impl CountySummaryFeatures {
    /// Builds the summary from annual series.
    pub fn from_series(
        county_id: impl Into<String>,
        death_rate: &[f64],
        opioid: &[f64],
        naloxone: &[f64],
        buprenorphine: &[f64],
        fentanyl: &[f64],
        population: f64,
    ) -> Result<Self> {
        if death_rate.is_empty() {
            return Err(Error::invalid("empty death-rate series"));
        }
        let s = CountySummaryFeatures {
            county_id: county_id.into(),
            mean_death_rate: death_rate.iter().sum::<f64>() / death_rate.len() as f64,
            death_slope: ols_slope(death_rate),
            opioid_slope: ols_slope(opioid),
            naloxone_slope: ols_slope(naloxone),
            buprenorphine_slope: ols_slope(buprenorphine),
            fentanyl_slope: ols_slope(fentanyl),
            population,
        };
        if s.to_vec().iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("county {}: non-finite summary feature", s.county_id)));
        }
        Ok(s)
    }

    /// Matching vector; dispensing trends enter by magnitude.
    pub fn to_vec(&self) -> Vec<f64> {
        vec![
            self.mean_death_rate,
            self.death_slope,
            self.opioid_slope.abs(),
            self.naloxone_slope.abs(),
            self.buprenorphine_slope.abs(),
            self.fentanyl_slope.abs(),
            self.population,
        ]
    }
}

/// Z-scores every summary vector over the full set of counties.
pub fn zscore_summaries(summaries: &[CountySummaryFeatures]) -> Result<BTreeMap<String, Vec<f64>>> {
    let rows: Vec<Vec<f64>> = summaries.iter().map(CountySummaryFeatures::to_vec).collect();
    let t = Standardizer::fit(&rows)?;
    Ok(summaries.iter().zip(&rows).map(|(s, r)| (s.county_id.clone(), t.transform(r))).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Assignment {
    pub prototype: String,
    pub distance: f64,
}

/// Nearest prototype by Euclidean distance. Prototypes map to themselves;
/// ties go to the lexicographically smallest prototype id.
pub fn assign_prototypes(
    vectors: &BTreeMap<String, Vec<f64>>,
    prototypes: &[String],
) -> Result<BTreeMap<String, Assignment>> {
    if prototypes.is_empty() {
        return Err(Error::invalid("at least one prototype is required"));
    }
    let mut protos: Vec<&String> = prototypes.iter().collect();
    protos.sort();
    protos.dedup();
    let pvecs = protos
        .iter()
        .map(|p| vectors.get(*p).map(|v| (*p, v)).ok_or_else(|| Error::UnknownCounty((*p).clone())))
        .collect::<Result<Vec<_>>>()?;
    vectors
        .iter()
        .map(|(id, v)| {
            if pvecs.iter().any(|(p, _)| *p == id) {
                return Ok((id.clone(), Assignment { prototype: id.clone(), distance: 0.0 }));
            }
            let mut best: Option<(&String, f64)> = None;
            for (p, pv) in &pvecs {
                if pv.len() != v.len() {
                    return Err(Error::DimensionMismatch { expected: pv.len(), got: v.len() });
                }
                let d = v.iter().zip(pv.iter()).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
                if best.is_none_or(|(_, bd)| d < bd) {
                    best = Some((p, d));
                }
            }
            let (p, d) = best.expect("non-empty prototypes");
            Ok((id.clone(), Assignment { prototype: p.clone(), distance: d }))
        })
        .collect()
}

#[derive(Debug, Clone, Deserialize)]
struct SeriesRow {
    county_id: String,
    year: i32,
    death_rate: f64,
    opioid: f64,
    naloxone: f64,
    buprenorphine: f64,
    fentanyl: f64,
    population: f64,
}

/// Reads long-format annual series
/// (`county_id,year,death_rate,opioid,naloxone,buprenorphine,fentanyl,population`)
/// into one summary per county, sorted by id. Population is the series mean.
pub fn read_series_csv<R: std::io::Read>(r: R) -> Result<Vec<CountySummaryFeatures>> {
    let mut by_county: BTreeMap<String, Vec<SeriesRow>> = BTreeMap::new();
    for row in csv::Reader::from_reader(r).deserialize() {
        let row: SeriesRow = row?;
        by_county.entry(row.county_id.clone()).or_default().push(row);
    }
    by_county
        .into_iter()
        .map(|(id, mut rows)| {
            rows.sort_by_key(|r| r.year);
            if rows.windows(2).any(|w| w[0].year == w[1].year) {
                return Err(Error::invalid(format!("county {id}: duplicate year")));
            }
            let col = |f: fn(&SeriesRow) -> f64| rows.iter().map(f).collect::<Vec<f64>>();
            let pop = col(|r| r.population);
            CountySummaryFeatures::from_series(
                id,
                &col(|r| r.death_rate),
                &col(|r| r.opioid),
                &col(|r| r.naloxone),
                &col(|r| r.buprenorphine),
                &col(|r| r.fentanyl),
                pop.iter().sum::<f64>() / pop.len() as f64,
            )
        })
        .collect()
}
