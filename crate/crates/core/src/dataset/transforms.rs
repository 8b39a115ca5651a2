//! Pure per-series transforms turning raw inputs into model columns.

use chrono::{Datelike, Duration, NaiveDate};

use super::{week_start, RawSeries, WeeklySeries};
use crate::{Error, Result};

/// Weeks by which excess deaths are led to line up with transmission.
pub const DEFAULT_ED_LEAD_WEEKS: usize = 3;

/// Longest run of missing days in a daily series that is filled by linear
/// interpolation.
pub const MAX_INTERPOLATED_GAP_DAYS: i64 = 7;

/// Mean weekly first difference of a GDP level series.
pub fn compute_trend_growth(history: &[f64]) -> Result<f64> {
    if history.len() < 52 {
        return Err(Error::InvalidInput(format!(
            "trend window has {} weekly observations, need at least 52",
            history.len()
        )));
    }
    if let Some(i) = history.iter().position(|v| !v.is_finite()) {
        return Err(Error::Data(format!("non-finite GDP level at history index {i}")));
    }
    let n = history.len() - 1;
    let sum: f64 = history.windows(2).map(|w| w[1] - w[0]).sum();
    Ok(sum / n as f64)
}

/// De-trended, scaled weekly GDP change: `(gdp[t] - gdp[t-1] - trend) / 10`.
///
/// Output element `i` belongs to input week `i + 1`.
pub fn transform_gdp(gdp: &[f64], trend_growth: f64) -> Result<Vec<f64>> {
    if gdp.len() < 2 {
        return Err(Error::InvalidInput("ΔGDP needs at least two weekly levels".into()));
    }
    if let Some(i) = gdp.iter().position(|v| !v.is_finite()) {
        return Err(Error::Data(format!("non-finite GDP level at index {i}")));
    }
    if !trend_growth.is_finite() {
        return Err(Error::InvalidInput("trend growth is not finite".into()));
    }
    Ok(gdp
        .windows(2)
        .map(|w| (w[1] - w[0] - trend_growth) / 10.0)
        .collect())
}

/// `log(1 + ed)` led by `lead_weeks`: output `t` is the transform of input `t + lead_weeks`.
pub fn transform_excess_deaths(ed_per_100k: &[f64], lead_weeks: usize) -> Result<Vec<f64>> {
    if let Some(i) = ed_per_100k.iter().position(|&v| !(v > -1.0) || !v.is_finite()) {
        return Err(Error::Data(format!(
            "excess deaths per 100k must be finite and > -1, got {} at week index {i}",
            ed_per_100k[i]
        )));
    }
    Ok(ed_per_100k
        .iter()
        .skip(lead_weeks)
        .map(|v| v.ln_1p())
        .collect())
}

/// Inverse of the excess-death transform (without the lead).
pub fn inverse_excess_deaths(log_ed: f64) -> f64 {
    log_ed.exp_m1()
}

/// Fill missing days by linear interpolation. Gaps longer than `max_gap` days are errors.
pub fn fill_daily_gaps(series: &RawSeries, max_gap: i64) -> Result<RawSeries> {
    let mut points = Vec::with_capacity(series.points.len());
    for (i, &(date, value)) in series.points.iter().enumerate() {
        if let Some(&(prev_date, prev_value)) = i.checked_sub(1).map(|j| &series.points[j]) {
            let span = (date - prev_date).num_days();
            let missing = span - 1;
            if missing > max_gap {
                return Err(Error::Data(format!(
                    "{}: gap of {missing} missing days before {date} exceeds {max_gap}",
                    series.country
                )));
            }
            for k in 1..span {
                let w = k as f64 / span as f64;
                points.push((prev_date + Duration::days(k), prev_value + w * (value - prev_value)));
            }
        }
        points.push((date, value));
    }
    Ok(RawSeries {
        country: series.country.clone(),
        points,
    })
}

/// Weekly change in transit use from daily percent-change-from-baseline values.
///
/// Short gaps are interpolated, a trailing 7-day moving average is sampled on
/// the last day of each ISO week and differenced week over week, then divided
/// by 100 so that a level of 1 is the pre-pandemic baseline. Each output is
/// keyed by the Monday of the later week.
pub fn transform_transit(daily: &RawSeries) -> Result<WeeklySeries> {
    let filled = fill_daily_gaps(daily, MAX_INTERPOLATED_GAP_DAYS)?;
    let pts = &filled.points;
    let mut weekly: Vec<(NaiveDate, f64)> = Vec::new();
    for i in 6..pts.len() {
        let date = pts[i].0;
        if date.weekday() == chrono::Weekday::Sun {
            let avg = pts[i - 6..=i].iter().map(|p| p.1).sum::<f64>() / 7.0;
            weekly.push((week_start(date), avg));
        }
    }
    let values = weekly
        .windows(2)
        .filter(|w| (w[1].0 - w[0].0).num_days() == 7)
        .map(|w| (w[1].0, (w[1].1 - w[0].1) / 100.0))
        .collect();
    Ok(WeeklySeries::new(values))
}

/// Mean of the daily values in each ISO week.
///
/// Partial weeks at either end of the series are dropped; an interior week
/// without any observation is an error.
pub fn downsample_weekly(daily: &RawSeries) -> Result<WeeklySeries> {
    let Some(&(first, _)) = daily.points.first() else {
        return Ok(WeeklySeries::default());
    };
    let last = daily.points.last().unwrap().0;
    let first_week = if first.weekday() == chrono::Weekday::Mon {
        week_start(first)
    } else {
        week_start(first) + Duration::days(7)
    };
    let last_week = if last.weekday() == chrono::Weekday::Sun {
        week_start(last)
    } else {
        week_start(last) - Duration::days(7)
    };
    let mut out = Vec::new();
    let mut idx = 0;
    let mut week = first_week;
    while week <= last_week {
        let end = week + Duration::days(7);
        let mut sum = 0.0;
        let mut n = 0usize;
        while idx < daily.points.len() && daily.points[idx].0 < end {
            if daily.points[idx].0 >= week {
                sum += daily.points[idx].1;
                n += 1;
            }
            idx += 1;
        }
        if n == 0 {
            return Err(Error::Data(format!(
                "{}: no observations in ISO week starting {week}",
                daily.country
            )));
        }
        out.push((week, sum / n as f64));
        week = end;
    }
    Ok(WeeklySeries::new(out))
}

/// Mean of whatever observations fall in each ISO week; for series that are
/// already weekly this is the identity up to re-keying on Mondays.
pub fn collapse_weekly(series: &RawSeries) -> WeeklySeries {
    let mut out: Vec<(NaiveDate, f64, usize)> = Vec::new();
    for &(date, value) in &series.points {
        let w = week_start(date);
        match out.last_mut() {
            Some(last) if last.0 == w => {
                last.1 += value;
                last.2 += 1;
            }
            _ => out.push((w, value, 1)),
        }
    }
    WeeklySeries::new(out.into_iter().map(|(w, s, n)| (w, s / n as f64)).collect())
}

/// True if no ISO week holds more than one observation.
pub fn is_weekly_cadence(series: &RawSeries) -> bool {
    series
        .points
        .windows(2)
        .all(|w| week_start(w[0].0) != week_start(w[1].0))
}

/// Inclusive maximum score of an ordinal OxCGRT indicator.
pub fn npi_max_score(npi_id: &str) -> Option<f64> {
    let max = match npi_id.to_ascii_uppercase().as_str() {
        "C1" | "C2" | "C6" | "C7" => 3.0,
        "C3" | "C5" => 2.0,
        "C4" | "C8" => 4.0,
        "E1" | "E2" => 2.0,
        "H1" | "H3" => 2.0,
        "H2" | "H8" => 3.0,
        "H6" => 4.0,
        "H7" => 5.0,
        _ => return None,
    };
    Some(max)
}

/// Human-readable name of an OxCGRT indicator.
pub fn npi_display_name(npi_id: &str) -> &'static str {
    match npi_id.to_ascii_uppercase().as_str() {
        "C1" => "School closing",
        "C2" => "Workplace closure",
        "C3" => "Cancel public events",
        "C4" => "Restrictions on gatherings",
        "C5" => "Close public transport",
        "C6" => "Stay at home requirement",
        "C7" => "Restrictions on internal movement",
        "C8" => "International travel controls",
        "E1" => "Income support",
        "E2" => "Debt/contract relief",
        "H1" => "Public information campaigns",
        "H2" => "Testing policy",
        "H3" => "Contact tracing",
        "H6" => "Facial coverings",
        "H7" => "Vaccination policy",
        "H8" => "Protection of elderly people",
        _ => "Unknown",
    }
}

/// The nine indicators entering the default model.
pub fn default_npi_ids() -> Vec<String> {
    ["C1", "C2", "C4", "C5", "C8", "H2", "H6", "H8", "E1"]
        .into_iter()
        .map(String::from)
        .collect()
}

/// Check every score of one indicator against its codebook range.
pub fn check_npi_scores(npi_id: &str, country: &str, scores: &[(NaiveDate, f64)]) -> Result<()> {
    let max = npi_max_score(npi_id)
        .ok_or_else(|| Error::InvalidInput(format!("unknown NPI indicator '{npi_id}'")))?;
    for &(date, s) in scores {
        if !(0.0..=max).contains(&s) {
            return Err(Error::Data(format!(
                "NPI {npi_id} score {s} outside codebook range 0-{max} for {country}, week of {}",
                week_start(date)
            )));
        }
    }
    Ok(())
}

/// Lagged level and change regressors from weekly NPI levels.
///
/// `levels[k][w]` is the level of indicator `k` in week `w`. Row `r` of the
/// result belongs to week `r + 2`: the level column holds week `r + 1` and
/// the change column the difference between weeks `r + 1` and `r`, so both
/// regressors enter one week behind the response.
#[derive(Debug, Clone, PartialEq)]
pub struct NpiFeatures {
    /// Index of the input week that row 0 belongs to.
    pub first_week: usize,
    pub level: Vec<Vec<f64>>,
    pub change: Vec<Vec<f64>>,
}

pub fn build_npi_features(levels: &[Vec<f64>]) -> Result<NpiFeatures> {
    let n = levels.first().map_or(0, Vec::len);
    if levels.iter().any(|l| l.len() != n) {
        return Err(Error::Dimension("NPI level columns differ in length".into()));
    }
    let rows = n.saturating_sub(2);
    let mut level = Vec::with_capacity(rows);
    let mut change = Vec::with_capacity(rows);
    for w in 2..n {
        level.push(levels.iter().map(|l| l[w - 1]).collect());
        change.push(levels.iter().map(|l| l[w - 1] - l[w - 2]).collect());
    }
    Ok(NpiFeatures {
        first_week: 2,
        level,
        change,
    })
}

/// Dominant-variant labels, in emergence order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    WildType,
    Alpha,
    Delta,
    Omicron,
}

impl std::str::FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "wt" | "wild type" | "wildtype" | "wild-type" => Ok(Variant::WildType),
            "alpha" => Ok(Variant::Alpha),
            "delta" => Ok(Variant::Delta),
            "omicron" => Ok(Variant::Omicron),
            _ => Err(Error::Data(format!("unknown WHO variant label '{s}'"))),
        }
    }
}

impl Variant {
    pub fn label(self) -> &'static str {
        match self {
            Variant::WildType => "WT",
            Variant::Alpha => "Alpha",
            Variant::Delta => "Delta",
            Variant::Omicron => "Omicron",
        }
    }
}

/// Cumulative variant indicators `[WT, Alpha, Delta, Omicron]` for one week.
///
/// WT is always 1, Alpha is 1 once WT is no longer dominant, Delta once
/// neither WT nor Alpha is, and Omicron only while Omicron itself dominates.
pub fn variant_dummy(dominant: Variant) -> [f64; 4] {
    match dominant {
        Variant::WildType => [1.0, 0.0, 0.0, 0.0],
        Variant::Alpha => [1.0, 1.0, 0.0, 0.0],
        Variant::Delta => [1.0, 1.0, 1.0, 0.0],
        Variant::Omicron => [1.0, 1.0, 1.0, 1.0],
    }
}

pub fn build_variant_dummies<S: AsRef<str>>(dominant: &[S]) -> Result<Vec<[f64; 4]>> {
    dominant
        .iter()
        .map(|s| s.as_ref().parse::<Variant>().map(variant_dummy))
        .collect()
}

/// Border-length weighted mean of neighbour values: `Σ wᵢxᵢ / Σ wᵢ`.
pub fn border_weighted_mean(neighbors: &[(f64, f64)]) -> Result<f64> {
    if neighbors.is_empty() {
        return Err(Error::Data("no neighbour coverage for imputation".into()));
    }
    if let Some(&(w, _)) = neighbors.iter().find(|(w, _)| !(*w > 0.0)) {
        return Err(Error::InvalidInput(format!("border weight must be positive, got {w}")));
    }
    let total: f64 = neighbors.iter().map(|(w, _)| w).sum();
    Ok(neighbors.iter().map(|(w, x)| w * x).sum::<f64>() / total)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn day(y: i32, m: u32, d: u32) -> NaiveDate {
        NaiveDate::from_ymd_opt(y, m, d).unwrap()
    }

    fn daily(start: NaiveDate, values: &[f64]) -> RawSeries {
        RawSeries::new(
            "XX",
            values
                .iter()
                .enumerate()
                .map(|(i, &v)| (start + Duration::days(i as i64), v))
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn gdp_formula() {
        let out = transform_gdp(&[100.0, 101.0], 0.1).unwrap();
        assert!((out[0] - 0.09).abs() < 1e-12);
        assert_eq!(transform_gdp(&[100.0, 100.0], 0.0).unwrap(), vec![0.0]);
        assert!(transform_gdp(&[1.0], 0.0).is_err());
        assert!(transform_gdp(&[1.0, f64::NAN], 0.0).is_err());
    }

    #[test]
    fn trend_growth_round_trip() {
        // 2016-2019 history with constant growth 0.2 then a flat-trend pandemic period.
        let history: Vec<f64> = (0..209).map(|i| 100.0 + 0.2 * i as f64).collect();
        let g = compute_trend_growth(&history).unwrap();
        assert!((g - 0.2).abs() < 1e-12);
        let last = *history.last().unwrap();
        let pandemic: Vec<f64> = (0..20).map(|i| last + 0.2 * i as f64).collect();
        for d in transform_gdp(&pandemic, g).unwrap() {
            assert!(d.abs() < 1e-12);
        }
    }

    #[test]
    fn trend_growth_cases() {
        let linear: Vec<f64> = (0..60).map(|i| 0.3 * i as f64).collect();
        assert!((compute_trend_growth(&linear).unwrap() - 0.3).abs() < 1e-12);
        assert_eq!(compute_trend_growth(&[5.0; 60]).unwrap(), 0.0);
        assert!(compute_trend_growth(&[5.0; 51]).is_err());
    }

    #[test]
    fn trend_growth_noisy_matches_mean_of_differences() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let series: Vec<f64> = (0..208)
            .map(|i| 0.25 * i as f64 + rng.random_range(-0.5..0.5))
            .collect();
        let mut brute = 0.0;
        for i in 1..series.len() {
            brute += series[i] - series[i - 1];
        }
        brute /= (series.len() - 1) as f64;
        let g = compute_trend_growth(&series).unwrap();
        assert!((g - brute).abs() < 1e-12);
        // Telescoping sum: error bounded by the noise range over n - 1.
        assert!((g - 0.25).abs() < 1.0 / 207.0);
    }

    #[test]
    fn excess_deaths() {
        assert_eq!(transform_excess_deaths(&[0.0], 0).unwrap(), vec![0.0]);
        let e = transform_excess_deaths(&[std::f64::consts::E - 1.0], 0).unwrap();
        assert!((e[0] - 1.0).abs() < 1e-15);
        let led = transform_excess_deaths(&[0.1, 0.2, 0.3, 0.4, 0.5], 3).unwrap();
        assert_eq!(led, vec![0.4f64.ln_1p(), 0.5f64.ln_1p()]);
        let err = transform_excess_deaths(&[0.0, -1.0], 0).unwrap_err();
        assert!(err.to_string().contains("week index 1"));
    }

    #[test]
    fn excess_deaths_inverse() {
        for &v in &[-0.9, -0.3, 0.0, 0.7, 12.5, 250.0] {
            let x = transform_excess_deaths(&[v], 0).unwrap()[0];
            let back = inverse_excess_deaths(x);
            assert!(((back - v) / v.abs().max(1e-300)).abs() < 1e-12 || (back - v).abs() < 1e-15);
        }
    }

    #[test]
    fn transit_constant_is_zero() {
        // Monday 2020-03-02 for 5 weeks.
        let s = daily(day(2020, 3, 2), &[0.0; 35]);
        let out = transform_transit(&s).unwrap();
        assert_eq!(out.len(), 4);
        assert!(out.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn transit_step_is_spread_by_smoothing() {
        // Step from 0 to -70 on a Thursday; trailing average sampled on Sundays.
        let mut v = vec![0.0; 10];
        v.extend(vec![-70.0; 25]);
        let s = daily(day(2020, 3, 2), &v);
        let out = transform_transit(&s).unwrap();
        // Hand rolled: weekly means are 0, -40, -70, -70, -70.
        let expected = [-0.4, -0.3, 0.0, 0.0];
        for (got, want) in out.values().iter().zip(expected) {
            assert!((got - want).abs() < 1e-12, "{got} vs {want}");
        }
        let total: f64 = out.values().iter().sum();
        assert!((total + 0.7).abs() < 1e-12);
    }

    #[test]
    fn transit_missing_day_interpolated() {
        let mut pts: Vec<(NaiveDate, f64)> =
            (0..21).map(|i| (day(2020, 3, 2) + Duration::days(i), -20.0)).collect();
        pts.remove(9);
        let s = RawSeries::new("XX", pts).unwrap();
        let out = transform_transit(&s).unwrap();
        assert!(out.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn transit_long_gap_rejected() {
        let mut pts: Vec<(NaiveDate, f64)> =
            (0..30).map(|i| (day(2020, 3, 2) + Duration::days(i), 1.0)).collect();
        pts.drain(5..13);
        let s = RawSeries::new("XX", pts).unwrap();
        assert!(transform_transit(&s).is_err());
    }

    #[test]
    fn downsample_examples() {
        let s = daily(day(2020, 3, 2), &[4.5; 7]);
        assert_eq!(downsample_weekly(&s).unwrap().values(), vec![4.5]);
        let s = daily(day(2020, 3, 2), &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0]);
        assert_eq!(downsample_weekly(&s).unwrap().values(), vec![4.0]);
        let s = daily(day(2020, 3, 2), &[1.0; 14]);
        assert_eq!(downsample_weekly(&s).unwrap().len(), 2);
        // Partial boundary weeks are dropped.
        let s = daily(day(2020, 3, 4), &[1.0; 14]);
        assert_eq!(downsample_weekly(&s).unwrap().len(), 1);
    }

    #[test]
    fn downsample_empty_interior_week_is_error() {
        let mut pts: Vec<(NaiveDate, f64)> =
            (0..21).map(|i| (day(2020, 3, 2) + Duration::days(i), 1.0)).collect();
        pts.drain(7..14);
        let s = RawSeries::new("XX", pts).unwrap();
        assert!(downsample_weekly(&s).is_err());
    }

    #[test]
    fn npi_constant_and_step() {
        let out = build_npi_features(&[vec![2.0; 6]]).unwrap();
        assert_eq!(out.level.len(), 4);
        assert!(out.level.iter().all(|r| r[0] == 2.0));
        assert!(out.change.iter().all(|r| r[0] == 0.0));

        // Step 0 -> 3 at input week 3; visible one week later.
        let out = build_npi_features(&[vec![0.0, 0.0, 0.0, 3.0, 3.0, 3.0]]).unwrap();
        let change: Vec<f64> = out.change.iter().map(|r| r[0]).collect();
        assert_eq!(change, vec![0.0, 0.0, 3.0, 0.0]);
        // Row 2 belongs to input week 4 = step week + 1.
        assert_eq!(out.first_week + 2, 4);
    }

    #[test]
    fn npi_nine_defaults() {
        let ids = default_npi_ids();
        assert_eq!(ids.len(), 9);
        let levels: Vec<Vec<f64>> = ids.iter().map(|_| vec![1.0; 5]).collect();
        let out = build_npi_features(&levels).unwrap();
        assert_eq!(out.level[0].len(), 9);
        assert_eq!(out.change[0].len(), 9);
    }

    #[test]
    fn npi_codebook_range() {
        let d = day(2020, 4, 1);
        assert!(check_npi_scores("C1", "DE", &[(d, 3.0)]).is_ok());
        let err = check_npi_scores("C1", "DE", &[(d, 4.0)]).unwrap_err();
        assert!(err.to_string().contains("C1") && err.to_string().contains("DE"));
        assert!(check_npi_scores("E1", "DE", &[(d, -1.0)]).is_err());
    }

    #[test]
    fn variant_dummies_examples() {
        let d = build_variant_dummies(&["WT", "WT", "Alpha", "Delta"]).unwrap();
        let col = |j: usize| d.iter().map(|r| r[j]).collect::<Vec<_>>();
        assert_eq!(col(0), vec![1.0, 1.0, 1.0, 1.0]);
        assert_eq!(col(1), vec![0.0, 0.0, 1.0, 1.0]);
        assert_eq!(col(2), vec![0.0, 0.0, 0.0, 1.0]);
        assert_eq!(col(3), vec![0.0, 0.0, 0.0, 0.0]);

        let d = build_variant_dummies(&["WT"; 5]).unwrap();
        assert!(d.iter().all(|r| *r == [1.0, 0.0, 0.0, 0.0]));

        let d = build_variant_dummies(&["Delta", "Omicron", "Delta"]).unwrap();
        assert_eq!(d.iter().map(|r| r[3]).collect::<Vec<_>>(), vec![0.0, 1.0, 0.0]);
        assert_eq!(d.iter().map(|r| r[2]).collect::<Vec<_>>(), vec![1.0, 1.0, 1.0]);

        assert!(build_variant_dummies(&["Beta"]).is_err());
    }

    #[test]
    fn border_weighting() {
        assert_eq!(border_weighted_mean(&[(2.0, 10.0), (3.0, 20.0)]).unwrap(), 16.0);
        assert_eq!(border_weighted_mean(&[(7.0, 4.2)]).unwrap(), 4.2);
        assert_eq!(border_weighted_mean(&[(1.0, 1.0), (1.0, 2.0), (1.0, 3.0)]).unwrap(), 2.0);
        assert!(border_weighted_mean(&[]).is_err());
        assert!(border_weighted_mean(&[(0.0, 1.0)]).is_err());
    }
}
