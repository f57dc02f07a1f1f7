//! CSV artifacts: training traces, per-sample reports and sweep summaries.

use std::io::{Read, Write};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::evaluator::{SampleReport, SweepRow};
use crate::trainer::TrainingTrace;

pub const TRACE_HEADER: [&str; 7] = [
    "step",
    "bidder",
    "regret",
    "revenue",
    "lambda",
    "grad_norm_pre",
    "grad_norm_post",
];
pub const SAMPLE_HEADER: [&str; 5] = ["sample_id", "j", "misreport", "u1", "revenue"];
pub const SUMMARY_HEADER: [&str; 6] = [
    "sigma",
    "max_regret_misreporter",
    "max_regret_truthful",
    "min_revenue",
    "beta",
    "outperforming_count",
];
/// Marker written in the `u1` and `revenue` columns of failed auctions.
pub const FAILED: &str = "failed";

fn opt(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

pub fn join_misreport(bid: &[f64]) -> String {
    bid.iter().map(f64::to_string).collect::<Vec<_>>().join(";")
}

pub fn write_trace_csv<W: Write>(out: W, trace: &TrainingTrace) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(TRACE_HEADER)?;
    for step in &trace.steps {
        for (i, b) in step.bidders.iter().enumerate() {
            w.write_record([
                step.step.to_string(),
                i.to_string(),
                b.regret.to_string(),
                step.revenue.to_string(),
                b.lambda.to_string(),
                b.grad_norm_pre.to_string(),
                b.grad_norm_post.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// One row per trained auction, `j = 0` being the truthful auction.
pub fn write_sample_csv<'a, W: Write>(
    out: W,
    reports: impl IntoIterator<Item = &'a SampleReport>,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(SAMPLE_HEADER)?;
    for report in reports {
        for rec in &report.records {
            let (u1, revenue) = match &rec.result {
                Ok(m) => (m.u1.to_string(), m.revenue.to_string()),
                Err(_) => (FAILED.to_string(), FAILED.to_string()),
            };
            w.write_record([
                report.sample_id.to_string(),
                rec.j.to_string(),
                join_misreport(&rec.misreport),
                u1,
                revenue,
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_summary_csv<'a, W: Write>(
    out: W,
    rows: impl IntoIterator<Item = &'a SweepRow>,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(SUMMARY_HEADER)?;
    for row in rows {
        w.write_record([
            row.sigma_label(),
            opt(row.max_regret_misreporter),
            opt(row.max_regret_truthful),
            opt(row.min_revenue),
            opt(row.beta.map(|b| b.value)),
            row.outperforming_count.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// A parsed sample-report row. `u1`/`revenue` are `None` for failed auctions.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SampleRow {
    pub sample_id: u64,
    pub j: usize,
    pub misreport: Vec<f64>,
    pub u1: Option<f64>,
    pub revenue: Option<f64>,
}

fn parse_err(row: usize, msg: impl std::fmt::Display) -> Error {
    Error::InvalidValue(format!("row {row}: {msg}"))
}

fn parse_num<T: std::str::FromStr>(row: usize, column: &str, s: &str) -> Result<T> {
    s.trim()
        .parse()
        .map_err(|_| parse_err(row, format!("cannot parse {column} value {s:?}")))
}

/// Reads a sample-report CSV. Row numbers in errors are 1-based and count
/// the header line.
pub fn read_sample_csv<R: Read>(input: R) -> Result<Vec<SampleRow>> {
    let mut r = csv::ReaderBuilder::new().flexible(true).from_reader(input);
    let header = r.headers()?.clone();
    if header.iter().collect::<Vec<_>>() != SAMPLE_HEADER {
        return Err(parse_err(
            1,
            format!("unexpected header {:?}", header.iter().collect::<Vec<_>>()),
        ));
    }
    let mut rows = Vec::new();
    for (k, rec) in r.records().enumerate() {
        let row = k + 2;
        let rec = rec.map_err(|e| parse_err(row, e))?;
        if rec.len() != SAMPLE_HEADER.len() {
            return Err(parse_err(
                row,
                format!("expected 5 fields, found {}", rec.len()),
            ));
        }
        let misreport = if rec[2].is_empty() {
            Vec::new()
        } else {
            rec[2]
                .split(';')
                .map(|x| parse_num::<f64>(row, "misreport", x))
                .collect::<Result<_>>()?
        };
        let value = |col: usize, name: &str| -> Result<Option<f64>> {
            if &rec[col] == FAILED {
                Ok(None)
            } else {
                parse_num(row, name, &rec[col]).map(Some)
            }
        };
        rows.push(SampleRow {
            sample_id: parse_num(row, "sample_id", &rec[0])?,
            j: parse_num(row, "j", &rec[1])?,
            misreport,
            u1: value(3, "u1")?,
            revenue: value(4, "revenue")?,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evaluator::{assemble_report, AuctionMetrics, AuctionRecord};
    use crate::valuations::BidProfile;

    fn report() -> SampleReport {
        let m = |u1: f64, revenue: f64| {
            Ok(AuctionMetrics {
                u1,
                revenue,
                u_truthful: None,
            })
        };
        let records = vec![
            AuctionRecord {
                j: 0,
                misreport: vec![1.0, 0.0],
                result: m(0.25, 1.5),
            },
            AuctionRecord {
                j: 1,
                misreport: vec![0.0, 0.0],
                result: m(0.5, 1.0),
            },
            AuctionRecord {
                j: 2,
                misreport: vec![0.0, 1.0],
                result: Err("diverged".into()),
            },
        ];
        assemble_report(
            7,
            BidProfile::from_rows(&[[1.0, 0.0], [0.0, 1.0]]).unwrap(),
            records,
            2.1,
        )
    }

    #[test]
    fn sample_csv_format_and_parse() {
        let mut buf = Vec::new();
        write_sample_csv(&mut buf, [&report()]).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert_eq!(
            text,
            "sample_id,j,misreport,u1,revenue\n7,0,1;0,0.25,1.5\n7,1,0;0,0.5,1\n7,2,0;1,failed,failed\n"
        );
        let rows = read_sample_csv(buf.as_slice()).unwrap();
        assert_eq!(rows.len(), 3);
        assert_eq!(rows[1].misreport, vec![0.0, 0.0]);
        assert_eq!(rows[2].u1, None);
    }

    #[test]
    fn malformed_rows_report_line_numbers() {
        let text = "sample_id,j,misreport,u1,revenue\n0,0,1,0.5,1\n0,x,1,0.5,1\n";
        let err = read_sample_csv(text.as_bytes()).unwrap_err();
        assert!(err.to_string().contains("row 3"), "{err}");
        let err = read_sample_csv("a,b\n1,2\n".as_bytes()).unwrap_err();
        assert!(err.to_string().contains("row 1"), "{err}");
        let err =
            read_sample_csv("sample_id,j,misreport,u1,revenue\n0,0,1\n".as_bytes()).unwrap_err();
        assert!(err.to_string().contains("row 2"), "{err}");
    }

    #[test]
    fn summary_header_is_exact() {
        let mut buf = Vec::new();
        write_summary_csv(&mut buf, []).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "sigma,max_regret_misreporter,max_regret_truthful,min_revenue,beta,outperforming_count\n"
        );
    }
}
