use std::fmt::Write as _;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::relative_reduction;
use crate::dsp::Waveform;
use crate::error::{Error, Result};
use crate::pipeline::Converter;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub model_name: String,
    /// Best total over all repeats.
    pub total_seconds: f64,
    pub n_utterances: usize,
    pub param_count: usize,
    pub repeats: usize,
    /// Total of every repeat, in run order.
    pub runs: Vec<f64>,
}

/// Times `work` over every item, `repeats` times, on a dedicated
/// single-thread pool; reports the fastest repeat.
pub fn bench<T: Sync>(
    model_name: &str,
    param_count: usize,
    items: &[T],
    repeats: usize,
    work: impl Fn(&T) -> Result<()> + Sync,
) -> Result<BenchReport> {
    if items.is_empty() {
        return Err(Error::Empty("benchmark inputs".into()));
    }
    if repeats == 0 {
        return Err(Error::Config("benchmark repeats must be positive".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let runs = pool.install(|| {
        (0..repeats)
            .map(|_| {
                let start = Instant::now();
                for item in items {
                    work(item)?;
                }
                Ok(start.elapsed().as_secs_f64())
            })
            .collect::<Result<Vec<f64>>>()
    })?;
    let best = runs.iter().cloned().fold(f64::INFINITY, f64::min);
    Ok(BenchReport {
        model_name: model_name.to_string(),
        total_seconds: best.max(f64::MIN_POSITIVE),
        n_utterances: items.len(),
        param_count,
        repeats,
        runs,
    })
}

/// Times feature extraction, inference and point estimation of a converter.
/// Phase reconstruction is outside the timed region.
pub fn bench_convert(
    converter: &dyn Converter,
    utterances: &[Waveform],
    repeats: usize,
) -> Result<BenchReport> {
    bench(
        converter.name(),
        converter.param_count(),
        utterances,
        repeats,
        |w| converter.convert_spectrogram(w).map(|_| ()),
    )
}

/// Conversion time and parameter count per network and per conversion path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyTable {
    pub net1: BenchReport,
    pub net2: BenchReport,
    pub net3: BenchReport,
    pub cascade: BenchReport,
}

impl LatencyTable {
    /// Cascade seconds: the separately timed networks summed, as the two
    /// stages run back to back.
    pub fn baseline_seconds(&self) -> f64 {
        self.net1.total_seconds + self.net2.total_seconds
    }

    pub fn baseline_params(&self) -> usize {
        self.net1.param_count + self.net2.param_count
    }

    pub fn time_reduction(&self) -> Result<f64> {
        relative_reduction(self.baseline_seconds(), self.net3.total_seconds)
    }

    pub fn param_reduction(&self) -> Result<f64> {
        relative_reduction(self.baseline_params() as f64, self.net3.param_count as f64)
    }

    fn rows(&self) -> Result<Vec<(String, String, String)>> {
        let secs = |s: f64| format!("{s:.3}");
        Ok(vec![
            ("Network 1".into(), secs(self.net1.total_seconds), self.net1.param_count.to_string()),
            ("Network 2".into(), secs(self.net2.total_seconds), self.net2.param_count.to_string()),
            ("Network 3".into(), secs(self.net3.total_seconds), self.net3.param_count.to_string()),
            (
                "Baseline (Network 1 + Network 2)".into(),
                secs(self.baseline_seconds()),
                self.baseline_params().to_string(),
            ),
            ("Proposed (Network 3)".into(), secs(self.net3.total_seconds), self.net3.param_count.to_string()),
            (
                "Relative reduction (%)".into(),
                format!("{:.1}", self.time_reduction()?),
                format!("{:.1}", self.param_reduction()?),
            ),
        ])
    }

    /// Tab-separated `model, seconds, params` records with a header line.
    pub fn to_tsv(&self) -> Result<String> {
        let mut out = String::from("model\tconversion_seconds\tparameters\n");
        for (m, s, p) in self.rows()? {
            let _ = writeln!(out, "{m}\t{s}\t{p}");
        }
        let _ = writeln!(out, "cascade_measured\t{:.3}\t{}", self.cascade.total_seconds, self.cascade.param_count);
        Ok(out)
    }

    /// Human-readable table.
    pub fn to_table(&self) -> Result<String> {
        let rows = self.rows()?;
        let header = ("Models", "Conversion time (seconds)", "# of network parameters");
        let w0 = rows.iter().map(|r| r.0.len()).max().unwrap_or(0).max(header.0.len());
        let w1 = header.1.len();
        let w2 = header.2.len();
        let mut out = String::new();
        let _ = writeln!(out, "{:<w0$}  {:>w1$}  {:>w2$}", header.0, header.1, header.2);
        let _ = writeln!(out, "{}", "-".repeat(w0 + w1 + w2 + 4));
        for (m, s, p) in rows {
            let _ = writeln!(out, "{m:<w0$}  {s:>w1$}  {p:>w2$}");
        }
        let n = self.net3.n_utterances;
        let _ = writeln!(
            out,
            "{n} utterances, best of {} repeats, single thread, vocoder excluded; cascade timed end to end: {:.3} s",
            self.net3.repeats, self.cascade.total_seconds
        );
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn report(name: &str, secs: f64, params: usize) -> BenchReport {
        BenchReport {
            model_name: name.into(),
            total_seconds: secs,
            n_utterances: 30,
            param_count: params,
            repeats: 3,
            runs: vec![secs; 3],
        }
    }

    #[test]
    fn reports_the_fastest_repeat() {
        let calls = std::sync::atomic::AtomicUsize::new(0);
        let r = bench("m", 1, &[0u8; 2], 3, |_| {
            let n = calls.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
            if n < 2 {
                std::thread::sleep(std::time::Duration::from_millis(20));
            }
            Ok(())
        })
        .unwrap();
        assert_eq!(r.runs.len(), 3);
        assert_eq!(r.total_seconds, r.runs.iter().cloned().fold(f64::INFINITY, f64::min));
        assert!(r.total_seconds < r.runs[0]);
    }

    #[test]
    fn table_reproduces_published_rows() {
        let t = LatencyTable {
            net1: report("net1", 5.42, 5_256_509),
            net2: report("net2", 6.71, 7_258_895),
            net3: report("net3", 6.73, 7_268_623),
            cascade: report("cascade", 12.13, 12_515_404),
        };
        assert_eq!(t.baseline_params(), 12_515_404);
        assert_eq!(t.time_reduction().unwrap(), 44.5);
        assert_eq!(t.param_reduction().unwrap(), 41.9);
        let table = t.to_table().unwrap();
        for row in ["Network 1", "Network 2", "Network 3", "Baseline", "Proposed", "Relative reduction"] {
            assert!(table.contains(row), "{table}");
        }
        assert!(table.contains("12.130") && table.contains("44.5") && table.contains("41.9"));
        assert_eq!(t.to_tsv().unwrap().lines().count(), 8);
    }
}
