//! CSV ingestion and panel assembly.
//!
//! Expected files in the data directory (UTF-8, header row):
//!
//! | file | columns |
//! |------|---------|
//! | `responses.csv` | `country,date,series,value`, series ∈ {gdp, transit, excess_deaths_per_100k, log_r} |
//! | `npi.csv` | `country,date,npi_id,score` |
//! | `vaccination.csv` | `country,date,total_doses,population` (optional) |
//! | `variants.csv` | `country,iso_week,who_label` |
//! | `characteristics.csv` | `country,feature,value` (post-hoc only) |
//! | `borders.csv` | `country_a,country_b,km` (optional) |

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use chrono::{Duration, NaiveDate, Weekday};
use serde::{Deserialize, Serialize};

use super::transforms::{
    check_npi_scores, collapse_weekly, compute_trend_growth, downsample_weekly,
    is_weekly_cadence, transform_transit, variant_dummy, Variant,
};
use super::{
    impute_border_weighted, week_start, CharacteristicsTable, CountryCharacteristics,
    CountryPanel, PanelDataset, RawSeries, WeeklySeries,
};
use crate::{Error, Result};

/// Calendar windows and transform settings used when assembling a panel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub window_start: NaiveDate,
    pub window_end: NaiveDate,
    /// Pre-pandemic window for the GDP trend.
    pub trend_start: NaiveDate,
    pub trend_end: NaiveDate,
    pub ed_lead_weeks: usize,
    /// Countries with fewer usable weeks are dropped.
    pub min_weeks: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            window_start: NaiveDate::from_ymd_opt(2020, 1, 1).unwrap(),
            window_end: NaiveDate::from_ymd_opt(2021, 12, 31).unwrap(),
            trend_start: NaiveDate::from_ymd_opt(2016, 1, 1).unwrap(),
            trend_end: NaiveDate::from_ymd_opt(2019, 12, 31).unwrap(),
            ed_lead_weeks: super::transforms::DEFAULT_ED_LEAD_WEEKS,
            min_weeks: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DroppedCountry {
    pub country: String,
    pub reason: String,
}

/// An assembled panel plus the countries that could not be included.
#[derive(Debug, Clone)]
pub struct PanelLoad {
    pub panel: PanelDataset,
    pub dropped: Vec<DroppedCountry>,
}

const SERIES: [&str; 4] = ["gdp", "transit", "excess_deaths_per_100k", "log_r"];

struct CsvRows {
    file: String,
    headers: Vec<String>,
    rows: Vec<(usize, csv::StringRecord)>,
}

impl CsvRows {
    fn read(path: &Path, required: &[&str]) -> Result<CsvRows> {
        let file = path
            .file_name()
            .map(|f| f.to_string_lossy().into_owned())
            .unwrap_or_default();
        let mut rdr = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_path(path)
            .map_err(|e| Error::Data(format!("cannot open {}: {e}", path.display())))?;
        let headers: Vec<String> = rdr
            .headers()
            .map_err(|e| Error::Parse { file: file.clone(), row: 1, msg: e.to_string() })?
            .iter()
            .map(str::to_string)
            .collect();
        for col in required {
            if !headers.iter().any(|h| h == col) {
                return Err(Error::Parse {
                    file,
                    row: 1,
                    msg: format!("missing column '{col}'"),
                });
            }
        }
        let mut rows = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let row = i + 2;
            let rec = rec.map_err(|e| Error::Parse { file: file.clone(), row, msg: e.to_string() })?;
            rows.push((row, rec));
        }
        Ok(CsvRows { file, headers, rows })
    }

    fn col(&self, name: &str) -> usize {
        self.headers.iter().position(|h| h == name).unwrap()
    }

    fn err(&self, row: usize, msg: impl Into<String>) -> Error {
        Error::Parse { file: self.file.clone(), row, msg: msg.into() }
    }

    fn date(&self, row: usize, s: &str) -> Result<NaiveDate> {
        NaiveDate::parse_from_str(s, "%Y-%m-%d")
            .map_err(|e| self.err(row, format!("bad date '{s}': {e}")))
    }

    /// Parses a number; empty and `NA` cells are `None`.
    fn number(&self, row: usize, s: &str) -> Result<Option<f64>> {
        if s.is_empty() || s.eq_ignore_ascii_case("na") || s.eq_ignore_ascii_case("nan") {
            return Ok(None);
        }
        let v: f64 = s
            .parse()
            .map_err(|_| self.err(row, format!("bad number '{s}'")))?;
        if !v.is_finite() {
            return Err(self.err(row, format!("non-finite value '{s}'")));
        }
        Ok(Some(v))
    }
}

type Keyed = BTreeMap<(String, String), Vec<(NaiveDate, f64, usize)>>;

/// Sort each keyed series by date and reject duplicate dates.
fn into_series(rows: &CsvRows, keyed: Keyed) -> Result<BTreeMap<(String, String), RawSeries>> {
    let mut out = BTreeMap::new();
    for ((country, key), mut pts) in keyed {
        pts.sort_by_key(|p| (p.0, p.2));
        if let Some(w) = pts.windows(2).find(|w| w[0].0 == w[1].0) {
            return Err(rows.err(
                w[1].2,
                format!("duplicate ({country}, {key}, {}) also on row {}", w[1].0, w[0].2),
            ));
        }
        let series = RawSeries::new(country.clone(), pts.into_iter().map(|p| (p.0, p.1)).collect())?;
        out.insert((country, key), series);
    }
    Ok(out)
}

fn to_weekly(series: &RawSeries) -> Result<WeeklySeries> {
    if is_weekly_cadence(series) {
        Ok(collapse_weekly(series))
    } else {
        downsample_weekly(series)
    }
}

fn parse_iso_week(s: &str) -> Option<NaiveDate> {
    if let Some((y, w)) = s.split_once("-W") {
        let y: i32 = y.parse().ok()?;
        let w: u32 = w.parse().ok()?;
        return NaiveDate::from_isoywd_opt(y, w, Weekday::Mon);
    }
    NaiveDate::parse_from_str(s, "%Y-%m-%d").ok().map(week_start)
}

/// Border lengths, symmetric: `country -> [(neighbour, km)]`.
pub fn read_borders(path: &Path) -> Result<BTreeMap<String, Vec<(String, f64)>>> {
    let rows = CsvRows::read(path, &["country_a", "country_b", "km"])?;
    let (ca, cb, ckm) = (rows.col("country_a"), rows.col("country_b"), rows.col("km"));
    let mut out: BTreeMap<String, Vec<(String, f64)>> = BTreeMap::new();
    for (row, rec) in &rows.rows {
        let a = rec[ca].to_string();
        let b = rec[cb].to_string();
        let km = rows
            .number(*row, &rec[ckm])?
            .filter(|k| *k > 0.0)
            .ok_or_else(|| rows.err(*row, "border length must be a positive number"))?;
        out.entry(a.clone()).or_default().push((b.clone(), km));
        out.entry(b).or_default().push((a, km));
    }
    Ok(out)
}

/// Country characteristics in long format; absent or `NA` values stay missing.
pub fn load_characteristics(path: &Path) -> Result<CharacteristicsTable> {
    let rows = CsvRows::read(path, &["country", "feature", "value"])?;
    let (cc, cf, cv) = (rows.col("country"), rows.col("feature"), rows.col("value"));
    let mut features: Vec<String> = Vec::new();
    let mut cells: BTreeMap<String, HashMap<String, (Option<f64>, usize)>> = BTreeMap::new();
    for (row, rec) in &rows.rows {
        let feature = rec[cf].to_string();
        if !features.contains(&feature) {
            features.push(feature.clone());
        }
        let value = rows.number(*row, &rec[cv])?;
        let entry = cells.entry(rec[cc].to_string()).or_default();
        if let Some((_, first)) = entry.insert(feature.clone(), (value, *row)) {
            return Err(rows.err(
                *row,
                format!("duplicate ({}, {feature}) also on row {first}", &rec[cc]),
            ));
        }
    }
    let countries = cells
        .into_iter()
        .map(|(country, map)| CountryCharacteristics {
            values: features
                .iter()
                .map(|f| map.get(f).and_then(|(v, _)| *v))
                .collect(),
            country,
        })
        .collect();
    Ok(CharacteristicsTable { features, countries })
}

/// Everything known about one country after per-series transforms, keyed by week.
#[derive(Default)]
struct CountryColumns {
    log_r: WeeklySeries,
    log_ed: BTreeMap<NaiveDate, f64>,
    d_gdp: BTreeMap<NaiveDate, f64>,
    d_transit: WeeklySeries,
    npi_weekly: Vec<WeeklySeries>,
    vacc: WeeklySeries,
}

/// Read the CSV files in `dir` and assemble the weekly panel.
///
/// Countries missing a mandatory series (any response, any selected NPI or
/// the variant labels) or with too short a usable window are dropped and
/// reported; malformed files, duplicate keys and out-of-range scores are
/// errors.
pub fn load_panel(dir: &Path, npi_ids: &[String], config: &DataConfig) -> Result<PanelLoad> {
    let mut dropped: Vec<DroppedCountry> = Vec::new();
    let mut exclude = |country: &str, reason: String| {
        log::warn!("dropping {country}: {reason}");
        dropped.push(DroppedCountry { country: country.to_string(), reason });
    };

    // responses.csv
    let rows = CsvRows::read(&dir.join("responses.csv"), &["country", "date", "series", "value"])?;
    let (cc, cd, cs, cv) = (rows.col("country"), rows.col("date"), rows.col("series"), rows.col("value"));
    let mut keyed: Keyed = BTreeMap::new();
    for (row, rec) in &rows.rows {
        let series = &rec[cs];
        if !SERIES.contains(&series) {
            return Err(rows.err(*row, format!("unknown series '{series}'")));
        }
        let date = rows.date(*row, &rec[cd])?;
        if let Some(v) = rows.number(*row, &rec[cv])? {
            keyed
                .entry((rec[cc].to_string(), series.to_string()))
                .or_default()
                .push((date, v, *row));
        }
    }
    let responses = into_series(&rows, keyed)?;

    // npi.csv
    let rows = CsvRows::read(&dir.join("npi.csv"), &["country", "date", "npi_id", "score"])?;
    let (cc, cd, ci, cs) = (rows.col("country"), rows.col("date"), rows.col("npi_id"), rows.col("score"));
    let mut keyed: Keyed = BTreeMap::new();
    for (row, rec) in &rows.rows {
        let id = rec[ci].to_ascii_uppercase();
        if !npi_ids.iter().any(|n| n.eq_ignore_ascii_case(&id)) {
            continue;
        }
        let date = rows.date(*row, &rec[cd])?;
        if let Some(v) = rows.number(*row, &rec[cs])? {
            keyed.entry((rec[cc].to_string(), id)).or_default().push((date, v, *row));
        }
    }
    let npis = into_series(&rows, keyed)?;
    for ((country, id), series) in &npis {
        check_npi_scores(id, country, &series.points)?;
    }

    // vaccination.csv (optional)
    let vacc_path = dir.join("vaccination.csv");
    let mut vacc_series = BTreeMap::new();
    if vacc_path.exists() {
        let rows = CsvRows::read(&vacc_path, &["country", "date", "total_doses", "population"])?;
        let (cc, cd, ct, cp) = (rows.col("country"), rows.col("date"), rows.col("total_doses"), rows.col("population"));
        let mut keyed: Keyed = BTreeMap::new();
        for (row, rec) in &rows.rows {
            let date = rows.date(*row, &rec[cd])?;
            let doses = rows.number(*row, &rec[ct])?;
            let pop = rows.number(*row, &rec[cp])?;
            if let (Some(d), Some(p)) = (doses, pop) {
                if p <= 0.0 {
                    return Err(rows.err(*row, "population must be positive"));
                }
                keyed
                    .entry((rec[cc].to_string(), String::from("doses")))
                    .or_default()
                    .push((date, d / p, *row));
            }
        }
        vacc_series = into_series(&rows, keyed)?;
    } else {
        log::warn!("no vaccination.csv in {}; doses per capita set to 0", dir.display());
    }

    // variants.csv
    let rows = CsvRows::read(&dir.join("variants.csv"), &["country", "iso_week", "who_label"])?;
    let (cc, cw, cl) = (rows.col("country"), rows.col("iso_week"), rows.col("who_label"));
    let mut variants: BTreeMap<String, BTreeMap<NaiveDate, [f64; 4]>> = BTreeMap::new();
    for (row, rec) in &rows.rows {
        let week = parse_iso_week(&rec[cw])
            .ok_or_else(|| rows.err(*row, format!("bad ISO week '{}'", &rec[cw])))?;
        let label: Variant = rec[cl].parse().map_err(|e: Error| rows.err(*row, e.to_string()))?;
        if variants
            .entry(rec[cc].to_string())
            .or_default()
            .insert(week, variant_dummy(label))
            .is_some()
        {
            return Err(rows.err(*row, format!("duplicate ({}, {})", &rec[cc], &rec[cw])));
        }
    }

    let borders_path = dir.join("borders.csv");
    let borders = if borders_path.exists() {
        read_borders(&borders_path)?
    } else {
        BTreeMap::new()
    };

    let first_week = {
        let w = week_start(config.window_start);
        if w == config.window_start { w } else { w + Duration::days(7) }
    };
    let last_week = {
        let w = week_start(config.window_end);
        if config.window_end - w == Duration::days(6) { w } else { w - Duration::days(7) }
    };
    let window: Vec<NaiveDate> = std::iter::successors(Some(first_week), |w| {
        Some(*w + Duration::days(7)).filter(|n| *n <= last_week)
    })
    .collect();
    let lag = Duration::days(7);

    let countries: BTreeSet<String> = responses
        .keys()
        .map(|(c, _)| c.clone())
        .chain(npis.keys().map(|(c, _)| c.clone()))
        .collect();

    let mut panels = Vec::new();
    'country: for country in &countries {
        let get = |s: &str| responses.get(&(country.clone(), s.to_string()));
        let mut cols = CountryColumns::default();
        for s in SERIES {
            if get(s).is_none() {
                exclude(country, format!("missing {s} series"));
                continue 'country;
            }
        }
        if !variants.contains_key(country) {
            exclude(country, "missing variant labels".into());
            continue 'country;
        }
        for id in npi_ids {
            let Some(series) = npis.get(&(country.clone(), id.to_ascii_uppercase())) else {
                exclude(country, format!("missing NPI {id}"));
                continue 'country;
            };
            cols.npi_weekly.push(to_weekly(series)?);
        }

        // ΔGDP against the pre-pandemic trend.
        let gdp = to_weekly(get("gdp").unwrap())?;
        let history: Vec<f64> = gdp
            .points()
            .iter()
            .filter(|(w, _)| *w >= config.trend_start && *w <= config.trend_end)
            .map(|p| p.1)
            .collect();
        let trend = match compute_trend_growth(&history) {
            Ok(g) => g,
            Err(e) => {
                exclude(country, format!("GDP trend: {e}"));
                continue 'country;
            }
        };
        for pair in gdp.points().windows(2) {
            if pair[1].0 - pair[0].0 == lag {
                cols.d_gdp.insert(pair[1].0, (pair[1].1 - pair[0].1 - trend) / 10.0);
            }
        }

        let ed = to_weekly(get("excess_deaths_per_100k").unwrap())?;
        let lead = Duration::days(7 * config.ed_lead_weeks as i64);
        for &(w, v) in ed.points() {
            if !(v > -1.0) {
                return Err(Error::Data(format!(
                    "{country}: excess deaths per 100k {v} <= -1 in the week of {w}"
                )));
            }
            cols.log_ed.insert(w - lead, v.ln_1p());
        }

        cols.log_r = to_weekly(get("log_r").unwrap())?;
        cols.d_transit = transform_transit(get("transit").unwrap())?;
        if let Some(v) = vacc_series.get(&(country.clone(), "doses".to_string())) {
            cols.vacc = to_weekly(v)?;
        }

        // Variant dummies, imputing uncovered window weeks from neighbours.
        let own = &variants[country];
        let mut dummies: BTreeMap<NaiveDate, [f64; 4]> = own.clone();
        let missing: Vec<NaiveDate> = window
            .iter()
            .copied()
            .filter(|w| !own.contains_key(w))
            .collect();
        if let (false, Some(nb)) = (missing.is_empty(), borders.get(country)) {
            let mut filled = vec![[0.0; 4]; missing.len()];
            let mut ok = true;
            for j in 0..4 {
                match impute_border_weighted(country, &missing, nb, |c, w| {
                    variants.get(c).and_then(|m| m.get(&w)).map(|d| d[j])
                }) {
                    Ok(vals) => vals.iter().enumerate().for_each(|(i, v)| filled[i][j] = *v),
                    Err(_) => ok = false,
                }
            }
            if ok {
                log::info!("{country}: imputed {} variant weeks from neighbours", missing.len());
                dummies.extend(missing.iter().copied().zip(filled));
            } else {
                log::warn!("{country}: neighbours do not cover all missing variant weeks");
            }
        }

        // Longest run of window weeks where every column exists.
        let row_for = |w: NaiveDate| -> Option<([f64; 4], Vec<f64>, Vec<f64>, f64, [f64; 4])> {
            let y = [
                cols.log_r.get(w)?,
                *cols.log_ed.get(&w)?,
                *cols.d_gdp.get(&w)?,
                cols.d_transit.get(w)?,
            ];
            let mut level = Vec::with_capacity(npi_ids.len());
            let mut change = Vec::with_capacity(npi_ids.len());
            for s in &cols.npi_weekly {
                let l1 = s.get(w - lag)?;
                let l2 = s.get(w - lag - lag)?;
                level.push(l1);
                change.push(l1 - l2);
            }
            let vacc = cols
                .vacc
                .points()
                .iter()
                .take_while(|p| p.0 <= w)
                .last()
                .map_or(0.0, |p| p.1);
            Some((y, level, change, vacc, *dummies.get(&w)?))
        };
        let mut best: Vec<(NaiveDate, _)> = Vec::new();
        let mut run = Vec::new();
        for &w in &window {
            match row_for(w) {
                Some(r) => run.push((w, r)),
                None => {
                    if run.len() > best.len() {
                        best = std::mem::take(&mut run);
                    }
                    run.clear();
                }
            }
        }
        if run.len() > best.len() {
            best = run;
        }
        if best.len() < config.min_weeks {
            exclude(country, format!("only {} usable weeks in the window", best.len()));
            continue;
        }
        let mut panel = CountryPanel {
            country: country.clone(),
            weeks: Vec::new(),
            y: Vec::new(),
            x_level: Vec::new(),
            x_change: Vec::new(),
            vacc: Vec::new(),
            variants: Vec::new(),
        };
        for (w, (y, level, change, vacc, dummy)) in best {
            panel.weeks.push(w);
            panel.y.push(y);
            panel.x_level.push(level);
            panel.x_change.push(change);
            panel.vacc.push(vacc);
            panel.variants.push(dummy);
        }
        panels.push(panel);
    }

    let panel = PanelDataset {
        npi_names: npi_ids.iter().map(|s| s.to_ascii_uppercase()).collect(),
        countries: panels,
    };
    panel.validate()?;
    if !dropped.is_empty() {
        let names: Vec<&str> = dropped.iter().map(|d| d.country.as_str()).collect();
        log::warn!("excluded countries: {}", names.join(", "));
    }
    Ok(PanelLoad { panel, dropped })
}
