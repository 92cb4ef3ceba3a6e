use std::fs::File;
use std::io::Write;
use std::path::Path;

use crate::error::Result;
use crate::trainer::ConvergenceReport;

/// Settings echoed in the report's `#` header lines.
#[derive(Clone, Debug, PartialEq)]
pub struct ReportContext {
    pub threshold: f64,
    pub eval_window: usize,
    pub seeds_per_config: usize,
    /// Free-form `key=value` pairs appended to the header.
    pub extra: Vec<(String, String)>,
}

const COLUMNS: [&str; 13] = [
    "row_type",
    "config_index",
    "label",
    "mask_kind",
    "u_len",
    "noise_dim",
    "seed",
    "episodes_to_threshold",
    "median",
    "min",
    "max",
    "speedup_vs_identity",
    "note",
];

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// One `run` row per (configuration, seed), then one `summary` row per
/// configuration. Runs that never converged have an empty
/// `episodes_to_threshold` and count as `num_episodes` in the statistics.
pub fn write_report(path: &Path, ctx: &ReportContext, report: &ConvergenceReport) -> Result<()> {
    let mut file = File::create(path)?;
    write!(
        file,
        "# threshold={} eval_window={} seeds_per_config={}",
        ctx.threshold, ctx.eval_window, ctx.seeds_per_config
    )?;
    for (k, v) in &ctx.extra {
        write!(file, " {k}={v}")?;
    }
    writeln!(file)?;
    let mut w = csv::Writer::from_writer(file);
    w.write_record(COLUMNS)?;
    let speedups = report.speedups();
    for (pos, s) in report.summaries.iter().enumerate() {
        let common = |seed: String| {
            vec![
                s.config_index.to_string(),
                s.label.clone(),
                s.kind.as_str().to_string(),
                s.u_len.to_string(),
                s.noise_dim.to_string(),
                seed,
            ]
        };
        for (seed, eps) in &s.episodes {
            let mut rec = vec!["run".to_string()];
            rec.extend(common(seed.to_string()));
            rec.push(opt(*eps));
            rec.extend([String::new(), String::new(), String::new(), String::new()]);
            rec.push(if eps.is_some() { String::new() } else { format!("did not converge; counted as {}", s.censor_at) });
            w.write_record(&rec)?;
        }
        for (seed, msg) in &s.failures {
            let mut rec = vec!["failed".to_string()];
            rec.extend(common(seed.to_string()));
            rec.extend(std::iter::repeat_n(String::new(), 5));
            rec.push(msg.clone());
            w.write_record(&rec)?;
        }
        let mut rec = vec!["summary".to_string()];
        rec.extend(common(String::new()));
        rec.push(String::new());
        rec.push(opt(s.median));
        rec.push(opt(s.min));
        rec.push(opt(s.max));
        rec.push(opt(speedups[pos]));
        rec.push(format!("{}/{} converged", s.converged(), s.episodes.len() + s.failures.len()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::masks::MaskKind;
    use crate::trainer::KindSummary;

    #[test]
    fn report_rows_and_header() {
        let report = ConvergenceReport {
            summaries: vec![
                KindSummary::new(0, MaskKind::Identity, 0, 32, 100, vec![(0, Some(80)), (1, None)], vec![]),
                KindSummary::new(1, MaskKind::Epic, 148, 32, 100, vec![(0, Some(30))], vec![(1, "numerical error: nan".into())]),
            ],
        };
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.csv");
        let ctx = ReportContext {
            threshold: 0.9,
            eval_window: 10,
            seeds_per_config: 2,
            extra: vec![("radius_unit".into(), "blocks".into())],
        };
        write_report(&p, &ctx, &report).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "# threshold=0.9 eval_window=10 seeds_per_config=2 radius_unit=blocks");
        assert_eq!(lines[1], COLUMNS.join(","));
        assert_eq!(lines[2], "run,0,No mask,identity,0,32,0,80,,,,,");
        assert_eq!(lines[3], "run,0,No mask,identity,0,32,1,,,,,,did not converge; counted as 100");
        assert_eq!(lines[4], "summary,0,No mask,identity,0,32,,,90,80,100,1,1/2 converged");
        assert_eq!(lines[6], "failed,1,EPIC (148),epic,148,32,1,,,,,,numerical error: nan");
        assert_eq!(lines[7], "summary,1,EPIC (148),epic,148,32,,,30,30,30,3,1/2 converged");
    }
}
