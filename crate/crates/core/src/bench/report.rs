//! Percentiles and CSV output.

use std::io::Write;

use crate::bench::LoadPointResult;

pub const CSV_HEADER: &str = "offered_load,delivered,lost,loss_fraction,latency_p50,latency_p99";

/// Nearest-rank percentile of ascending `sorted`: the value at index
/// `ceil(p/100 * n) - 1`. Empty input gives 0.
pub fn percentile(sorted: &[u64], p: f64) -> u64 {
    if sorted.is_empty() {
        return 0;
    }
    let rank = ((p / 100.0) * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

pub fn write_csv<W: Write>(results: &[LoadPointResult], mut out: W) -> std::io::Result<()> {
    writeln!(out, "{CSV_HEADER}")?;
    for r in results {
        writeln!(
            out,
            "{},{},{},{:.6},{},{}",
            r.offered_load, r.delivered, r.lost, r.loss_fraction, r.latency_p50, r.latency_p99
        )?;
    }
    out.flush()
}

pub fn csv_string(results: &[LoadPointResult]) -> String {
    let mut buf = Vec::new();
    write_csv(results, &mut buf).expect("writing to memory");
    String::from_utf8(buf).expect("ascii")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nearest_rank() {
        assert_eq!(percentile(&[1, 2, 3, 4], 50.0), 2);
        assert_eq!(percentile(&[1, 2, 3, 4], 99.0), 4);
        assert_eq!(percentile(&[1, 2, 3, 4], 0.0), 1);
        assert_eq!(percentile(&[7], 99.0), 7);
        assert_eq!(percentile(&[], 50.0), 0);
        let hundred: Vec<u64> = (1..=100).collect();
        assert_eq!(percentile(&hundred, 99.0), 99);
        assert_eq!(percentile(&hundred, 50.0), 50);
    }

    #[test]
    fn csv_format() {
        let r = LoadPointResult {
            offered_load: 100,
            injected: 3,
            delivered: 2,
            lost: 1,
            loss_fraction: 1.0 / 3.0,
            latency_p50: 4,
            latency_p99: 9,
        };
        assert_eq!(
            csv_string(&[r]),
            format!("{CSV_HEADER}\n100,2,1,0.333333,4,9\n")
        );
        assert_eq!(csv_string(&[]), format!("{CSV_HEADER}\n"));
    }
}
