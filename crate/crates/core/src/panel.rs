//! Monthly multi-country price panel: loading, validation, CSV round-trip
//! and sliding windows.

use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A calendar month, `YYYY-MM`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Month {
    pub year: i32,
    /// 1..=12
    pub month: u32,
}

impl Month {
    pub fn new(year: i32, month: u32) -> Option<Self> {
        (1..=12).contains(&month).then_some(Month { year, month })
    }

    /// Months since year 0, January.
    pub fn ordinal(self) -> i64 {
        self.year as i64 * 12 + (self.month as i64 - 1)
    }

    pub fn from_ordinal(ord: i64) -> Self {
        Month {
            year: ord.div_euclid(12) as i32,
            month: ord.rem_euclid(12) as u32 + 1,
        }
    }

    pub fn offset(self, months: i64) -> Self {
        Self::from_ordinal(self.ordinal() + months)
    }
}

impl fmt::Display for Month {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:04}-{:02}", self.year, self.month)
    }
}

impl FromStr for Month {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        let (y, m) = s
            .split_once('-')
            .ok_or_else(|| format!("expected YYYY-MM, got {s:?}"))?;
        if y.len() != 4 || m.len() != 2 {
            return Err(format!("expected YYYY-MM, got {s:?}"));
        }
        let year: i32 = y.parse().map_err(|_| format!("bad year in {s:?}"))?;
        let month: u32 = m.parse().map_err(|_| format!("bad month in {s:?}"))?;
        Month::new(year, month).ok_or_else(|| format!("month out of range in {s:?}"))
    }
}

/// Dates × countries matrix of positive price-index levels; `None` is missing.
#[derive(Debug, Clone, PartialEq)]
pub struct PricePanel {
    start: Month,
    countries: Vec<String>,
    /// One series per country, each `len()` months long.
    series: Vec<Vec<Option<f64>>>,
}

impl PricePanel {
    /// Builds a panel from per-country series starting at `start`, checking
    /// every invariant that [`load_panel`] checks.
    pub fn new(start: Month, countries: Vec<String>, series: Vec<Vec<Option<f64>>>) -> Result<Self> {
        if countries.len() != series.len() {
            return Err(Error::ShapeError(format!(
                "{} country codes for {} series",
                countries.len(),
                series.len()
            )));
        }
        let len = series.first().map_or(0, Vec::len);
        if len == 0 {
            return Err(Error::MalformedDates("panel has no dates".into()));
        }
        if let Some(s) = series.iter().find(|s| s.len() != len) {
            return Err(Error::ShapeError(format!("series lengths differ ({} vs {len})", s.len())));
        }
        check_country_codes(&countries)?;
        for (code, s) in countries.iter().zip(&series) {
            for (row, v) in s.iter().enumerate() {
                if let Some(v) = v {
                    check_value(*v).map_err(|reason| Error::BadValue {
                        row: row + 1,
                        column: code.clone(),
                        reason,
                    })?;
                }
            }
            check_contiguous(code, s)?;
        }
        Ok(PricePanel {
            start,
            countries,
            series,
        })
    }

    pub fn start(&self) -> Month {
        self.start
    }

    pub fn len(&self) -> usize {
        self.series.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn date(&self, t: usize) -> Month {
        self.start.offset(t as i64)
    }

    pub fn dates(&self) -> impl Iterator<Item = Month> + '_ {
        (0..self.len()).map(|t| self.date(t))
    }

    pub fn countries(&self) -> &[String] {
        &self.countries
    }

    pub fn series(&self, country: usize) -> &[Option<f64>] {
        &self.series[country]
    }

    pub fn value(&self, t: usize, country: usize) -> Option<f64> {
        self.series[country][t]
    }

    /// Number of countries with an observation at date `t`.
    pub fn observed_at(&self, t: usize) -> usize {
        self.series.iter().filter(|s| s[t].is_some()).count()
    }
}

fn check_country_codes(countries: &[String]) -> Result<()> {
    let mut seen = std::collections::BTreeSet::new();
    for c in countries {
        if c.trim().is_empty() {
            return Err(Error::BadInput("empty country code in header".into()));
        }
        if !seen.insert(c.as_str()) {
            return Err(Error::BadInput(format!("duplicate country code {c}")));
        }
    }
    Ok(())
}

fn check_value(v: f64) -> std::result::Result<(), String> {
    if !v.is_finite() {
        Err(format!("non-finite price {v}"))
    } else if v <= 0.0 {
        Err(format!("non-positive price {v}"))
    } else {
        Ok(())
    }
}

fn check_contiguous(code: &str, s: &[Option<f64>]) -> Result<()> {
    let first = s.iter().position(Option::is_some);
    let last = s.iter().rposition(Option::is_some);
    if let (Some(a), Some(b)) = (first, last) {
        if s[a..=b].iter().any(Option::is_none) {
            return Err(Error::GapInSeries(code.to_string()));
        }
    }
    Ok(())
}

/// Reads the wide CSV format: header `date,<CC1>,<CC2>,...`, dates `YYYY-MM`,
/// empty fields missing.
pub fn load_panel<R: Read>(source: R) -> Result<PricePanel> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .trim(csv::Trim::All)
        .from_reader(source);
    let header = rdr.headers()?.clone();
    if header.len() < 2 {
        return Err(Error::BadInput("header needs a date column and at least one country".into()));
    }
    let countries: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
    check_country_codes(&countries)?;

    let mut start: Option<Month> = None;
    let mut prev: Option<Month> = None;
    let mut series: Vec<Vec<Option<f64>>> = vec![Vec::new(); countries.len()];
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = i + 1;
        let date: Month = rec
            .get(0)
            .unwrap_or_default()
            .parse()
            .map_err(|e| Error::MalformedDates(format!("data row {row}: {e}")))?;
        if let Some(p) = prev {
            if date.ordinal() != p.ordinal() + 1 {
                return Err(Error::MalformedDates(format!(
                    "data row {row}: {date} does not follow {p} by one month"
                )));
            }
        } else {
            start = Some(date);
        }
        prev = Some(date);
        for (c, field) in rec.iter().skip(1).enumerate() {
            let v = if field.is_empty() {
                None
            } else {
                let v: f64 = field.parse().map_err(|_| Error::BadValue {
                    row,
                    column: countries[c].clone(),
                    reason: format!("not a number: {field:?}"),
                })?;
                check_value(v).map_err(|reason| Error::BadValue {
                    row,
                    column: countries[c].clone(),
                    reason,
                })?;
                Some(v)
            };
            series[c].push(v);
        }
    }
    let start = start.ok_or_else(|| Error::MalformedDates("no data rows".into()))?;
    for (code, s) in countries.iter().zip(&series) {
        check_contiguous(code, s)?;
    }
    Ok(PricePanel {
        start,
        countries,
        series,
    })
}

/// Writes the panel in the format [`load_panel`] reads. Values use the
/// shortest representation that parses back to the same `f64`.
pub fn write_panel<W: Write>(panel: &PricePanel, sink: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(sink);
    let mut header = vec!["date".to_string()];
    header.extend(panel.countries.iter().cloned());
    w.write_record(&header)?;
    for t in 0..panel.len() {
        let mut rec = Vec::with_capacity(panel.countries.len() + 1);
        rec.push(panel.date(t).to_string());
        rec.extend(panel.series.iter().map(|s| s[t].map(|v| v.to_string()).unwrap_or_default()));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io("<panel sink>", e))?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowSpec {
    pub length_months: usize,
    pub step_months: usize,
}

impl Default for WindowSpec {
    fn default() -> Self {
        WindowSpec {
            length_months: 72,
            step_months: 12,
        }
    }
}

impl WindowSpec {
    pub fn new(length_months: usize, step_months: usize) -> Result<Self> {
        let spec = WindowSpec {
            length_months,
            step_months,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.step_months == 0 {
            return Err(Error::BadWindowSpec("step_months must be positive".into()));
        }
        if self.length_months < 24 {
            return Err(Error::BadWindowSpec(format!(
                "length_months {} below the 24-month minimum",
                self.length_months
            )));
        }
        if self.step_months > self.length_months {
            return Err(Error::BadWindowSpec(format!(
                "step_months {} exceeds length_months {}",
                self.step_months, self.length_months
            )));
        }
        Ok(())
    }

    /// `floor((months - length) / step) + 1`, or 0 if the panel is too short.
    pub fn window_count(&self, months: usize) -> usize {
        if months < self.length_months {
            0
        } else {
            (months - self.length_months) / self.step_months + 1
        }
    }
}

/// A borrowed window over a [`PricePanel`].
#[derive(Debug, Clone, Copy)]
pub struct WindowView<'a> {
    pub window_index: usize,
    pub start: Month,
    pub end: Month,
    /// Calendar year of the window's last month.
    pub label_year: i32,
    panel: &'a PricePanel,
    offset: usize,
    len: usize,
}

impl<'a> WindowView<'a> {
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn panel(&self) -> &'a PricePanel {
        self.panel
    }

    /// Offset of the window's first month in the panel.
    pub fn offset(&self) -> usize {
        self.offset
    }

    pub fn countries(&self) -> &'a [String] {
        self.panel.countries()
    }

    pub fn series(&self, country: usize) -> &'a [Option<f64>] {
        &self.panel.series(country)[self.offset..self.offset + self.len]
    }

    pub fn observed(&self, country: usize) -> usize {
        self.series(country).iter().filter(|v| v.is_some()).count()
    }
}

pub fn slice_windows<'a>(panel: &'a PricePanel, spec: &WindowSpec) -> Result<Vec<WindowView<'a>>> {
    spec.validate()?;
    let n = spec.window_count(panel.len());
    if n == 0 {
        return Err(Error::PanelTooShort {
            months: panel.len(),
            window: spec.length_months,
        });
    }
    Ok((0..n)
        .map(|w| {
            let offset = w * spec.step_months;
            let start = panel.date(offset);
            let end = panel.date(offset + spec.length_months - 1);
            WindowView {
                window_index: w,
                start,
                end,
                label_year: end.year,
                panel,
                offset,
                len: spec.length_months,
            }
        })
        .collect())
}
