use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use super::{MarketDataError, PriceFrame, Result};

/// Column mapping for price CSVs with a header row `date,TICKER1,...`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsvConfig {
    #[serde(default = "default_date_column")]
    pub date_column: String,
    /// Price columns to keep; all non-date columns when `None`.
    #[serde(default)]
    pub columns: Option<Vec<String>>,
}

fn default_date_column() -> String {
    "date".to_string()
}

impl Default for CsvConfig {
    fn default() -> Self {
        Self { date_column: default_date_column(), columns: None }
    }
}

/// Rows with any missing price are dropped; rows are sorted by date.
pub fn load_csv(path: impl AsRef<Path>, config: &CsvConfig) -> Result<PriceFrame> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| MarketDataError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_csv(&text, config)
}

pub(crate) fn parse_csv(text: &str, config: &CsvConfig) -> Result<PriceFrame> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let header = reader
        .headers()
        .map_err(|e| MarketDataError::Parse { line: 1, message: e.to_string() })?
        .clone();
    let date_idx = header
        .iter()
        .position(|h| h == config.date_column)
        .ok_or_else(|| MarketDataError::Parse {
            line: 1,
            message: format!("missing date column '{}'", config.date_column),
        })?;
    let price_cols: Vec<(usize, String)> = match &config.columns {
        Some(cols) => cols
            .iter()
            .map(|c| {
                header
                    .iter()
                    .position(|h| h == c)
                    .map(|i| (i, c.clone()))
                    .ok_or_else(|| MarketDataError::Parse {
                        line: 1,
                        message: format!("missing price column '{c}'"),
                    })
            })
            .collect::<Result<_>>()?,
        None => header
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != date_idx)
            .map(|(i, h)| (i, h.to_string()))
            .collect(),
    };
    if price_cols.is_empty() {
        return Err(MarketDataError::Parse { line: 1, message: "no price columns".into() });
    }

    let mut rows: Vec<(NaiveDate, Vec<f64>)> = Vec::new();
    for (k, record) in reader.records().enumerate() {
        let line = k + 2;
        let record = record.map_err(|e| MarketDataError::Parse { line, message: e.to_string() })?;
        let date_raw = record.get(date_idx).unwrap_or_default();
        let date = NaiveDate::parse_from_str(date_raw, "%Y-%m-%d").map_err(|e| {
            MarketDataError::Parse { line, message: format!("bad date '{date_raw}': {e}") }
        })?;
        let mut prices = Vec::with_capacity(price_cols.len());
        let mut missing = false;
        for (idx, name) in &price_cols {
            let cell = record.get(*idx).unwrap_or_default();
            if cell.is_empty() || cell.eq_ignore_ascii_case("nan") || cell.eq_ignore_ascii_case("na") {
                missing = true;
                break;
            }
            let p: f64 = cell.parse().map_err(|_| MarketDataError::Parse {
                line,
                message: format!("non-numeric price '{cell}' for {name}"),
            })?;
            if !(p > 0.0) || !p.is_finite() {
                return Err(MarketDataError::Validation(format!(
                    "non-positive price {p} for {name} at line {line}"
                )));
            }
            prices.push(p);
        }
        if missing {
            log::debug!("dropping line {line}: missing price");
            continue;
        }
        rows.push((date, prices));
    }
    rows.sort_by_key(|(d, _)| *d);
    if let Some(w) = rows.windows(2).find(|w| w[0].0 == w[1].0) {
        return Err(MarketDataError::Validation(format!("duplicate date {}", w[0].0)));
    }
    let timestamps = rows.iter().map(|(d, _)| *d).collect();
    let values = rows.into_iter().flat_map(|(_, p)| p).collect();
    PriceFrame::new(timestamps, price_cols.into_iter().map(|(_, n)| n).collect(), values)
}

/// Writes `date,ASSET...` rows with ISO-8601 dates.
pub fn write_csv(frame: &PriceFrame, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let io_err = |source: std::io::Error| MarketDataError::Io { path: path.display().to_string(), source };
    let mut writer = csv::Writer::from_path(path).map_err(|e| io_err(e.into()))?;
    let mut header = vec!["date".to_string()];
    header.extend(frame.assets().iter().cloned());
    writer.write_record(&header).map_err(|e| io_err(e.into()))?;
    for t in 0..frame.len() {
        let mut rec = vec![frame.timestamps()[t].format("%Y-%m-%d").to_string()];
        rec.extend(frame.row(t).iter().map(|p| format!("{p}")));
        writer.write_record(&rec).map_err(|e| io_err(e.into()))?;
    }
    writer.flush().map_err(io_err)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_three_rows() {
        let f = parse_csv("date,AAA\n2020-01-01,100\n2020-01-02,110\n2020-01-03,99\n", &CsvConfig::default())
            .unwrap();
        assert_eq!(f.len(), 3);
        assert_eq!(f.column(0), vec![100.0, 110.0, 99.0]);
    }

    #[test]
    fn sorts_shuffled_dates() {
        let f = parse_csv(
            "date,A,B\n2020-01-03,3,30\n2020-01-01,1,10\n2020-01-02,2,20\n",
            &CsvConfig::default(),
        )
        .unwrap();
        assert_eq!(f.column(0), vec![1.0, 2.0, 3.0]);
        assert_eq!(f.column(1), vec![10.0, 20.0, 30.0]);
    }

    #[test]
    fn zero_price_is_validation_error() {
        let err = parse_csv("date,A\n2020-01-01,1\n2020-01-02,0\n", &CsvConfig::default()).unwrap_err();
        assert!(matches!(err, MarketDataError::Validation(_)));
    }

    #[test]
    fn malformed_row_reports_line() {
        let err = parse_csv("date,A\n2020-01-01,1\n2020-01-02,abc\n", &CsvConfig::default()).unwrap_err();
        assert!(matches!(err, MarketDataError::Parse { line: 3, .. }), "{err}");
    }

    #[test]
    fn drops_rows_with_missing_prices() {
        let f = parse_csv("date,A,B\n2020-01-01,1,2\n2020-01-02,,3\n2020-01-03,4,5\n", &CsvConfig::default())
            .unwrap();
        assert_eq!(f.len(), 2);
    }

    #[test]
    fn column_selection() {
        let cfg = CsvConfig { date_column: "day".into(), columns: Some(vec!["B".into()]) };
        let f = parse_csv("day,A,B\n2020-01-01,1,2\n2020-01-02,3,4\n", &cfg).unwrap();
        assert_eq!(f.assets(), &["B".to_string()]);
        assert_eq!(f.column(0), vec![2.0, 4.0]);
    }
}
