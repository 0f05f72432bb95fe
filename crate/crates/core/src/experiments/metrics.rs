//! Metrics CSV rows and the run manifest.

use std::fmt::Write as _;
use std::io::Write;

use crate::experiments::config::{ExperimentConfig, ExperimentId};
use crate::visualize::VisMethod;

pub const METRICS_HEADER: &str = "experiment,seed,method,target_logit,metric,value";

/// One CSV line. `seed` is `None` for aggregates over seeds, `method` for
/// metrics that do not belong to a single method.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub experiment: ExperimentId,
    pub seed: Option<u64>,
    pub method: Option<VisMethod>,
    pub target_logit: Option<usize>,
    pub metric: String,
    pub value: f64,
}

impl MetricsRow {
    pub fn new(experiment: ExperimentId, seed: Option<u64>, metric: impl Into<String>, value: f64) -> Self {
        MetricsRow {
            experiment,
            seed,
            method: None,
            target_logit: None,
            metric: metric.into(),
            value,
        }
    }

    pub fn method(mut self, method: VisMethod) -> Self {
        self.method = Some(method);
        self
    }

    pub fn target(mut self, k: usize) -> Self {
        self.target_logit = Some(k);
        self
    }

    pub fn csv_line(&self) -> String {
        let seed = self.seed.map_or_else(|| "all".to_string(), |s| s.to_string());
        let method = self.method.map_or("-", VisMethod::name);
        let target = self.target_logit.map_or_else(|| "-".to_string(), |k| k.to_string());
        format!(
            "{},{seed},{method},{target},{},{}",
            self.experiment, self.metric, self.value
        )
    }
}

pub fn write_metrics(rows: &[MetricsRow], mut w: impl Write) -> std::io::Result<()> {
    writeln!(w, "{METRICS_HEADER}")?;
    for r in rows {
        writeln!(w, "{}", r.csv_line())?;
    }
    w.flush()
}

/// Looks up a metric value; `seed = None` selects aggregate rows.
pub fn find_metric(rows: &[MetricsRow], seed: Option<u64>, method: Option<VisMethod>, metric: &str) -> Option<f64> {
    rows.iter()
        .find(|r| r.seed == seed && r.method == method && r.metric == metric)
        .map(|r| r.value)
}

/// Text manifest: engine version, the effective configuration and the files
/// written. Contains nothing that varies between identical runs.
pub fn manifest(cfg: &ExperimentConfig, files: &[String]) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "engine = backvis {}", env!("CARGO_PKG_VERSION"));
    let _ = writeln!(
        s,
        "seeds = {}",
        cfg.seeds.iter().map(u64::to_string).collect::<Vec<_>>().join(",")
    );
    let _ = writeln!(s, "[config]");
    s.push_str(&cfg.echo());
    let _ = writeln!(s, "[outputs]");
    for f in files {
        let _ = writeln!(s, "{f}");
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_format() {
        let rows = vec![
            MetricsRow::new(ExperimentId::Fgsm, Some(3), "flip_rate", 0.5),
            MetricsRow::new(ExperimentId::Fgsm, None, "l2_change", 0.25)
                .method(VisMethod::Gbp)
                .target(2),
        ];
        let mut out = Vec::new();
        write_metrics(&rows, &mut out).unwrap();
        assert_eq!(
            String::from_utf8(out).unwrap(),
            "experiment,seed,method,target_logit,metric,value\nfgsm,3,-,-,flip_rate,0.5\nfgsm,all,gbp,2,l2_change,0.25\n"
        );
        assert_eq!(find_metric(&rows, None, Some(VisMethod::Gbp), "l2_change"), Some(0.25));
        assert_eq!(find_metric(&rows, Some(3), None, "l2_change"), None);
    }

    #[test]
    fn manifest_lists_config_and_outputs() {
        let cfg = ExperimentConfig::new(ExperimentId::Depth);
        let m = manifest(&cfg, &["metrics.csv".into()]);
        assert!(m.starts_with("engine = backvis "));
        assert!(m.contains("experiment = depth\n"));
        assert!(m.ends_with("[outputs]\nmetrics.csv\n"));
    }
}
