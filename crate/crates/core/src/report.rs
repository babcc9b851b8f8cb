//! Evaluation reports, result tables and loss-curve plots.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::{EvalSection, ProtocolKind, RunConfig};
use crate::error::{Error, Result};
use crate::evaluation::{protocol_regdb, protocol_sysu, FeatureSet, MetricsReport, RegdbReport};
use crate::model::{Stage, ThreeStreamModel};
use crate::training::{feature_sets_for, RunDir, StepRecord};

/// Version of the serialized [`EvalReport`] document.
pub const REPORT_VERSION: u32 = 1;

/// Outcome of one evaluation, with per-trial detail.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub version: u32,
    pub protocol: ProtocolKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sysu: Option<MetricsReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub regdb: Option<RegdbReport>,
}

impl EvalReport {
    /// Named result rows: one for SYSU, one per direction for RegDB.
    pub fn rows(&self) -> Vec<(String, &MetricsReport)> {
        let mut out = Vec::new();
        if let Some(s) = &self.sysu {
            out.push(("infrared to visible".to_string(), s));
        }
        if let Some(r) = &self.regdb {
            out.push(("visible to infrared".to_string(), &r.visible_to_infrared));
            out.push(("infrared to visible".to_string(), &r.infrared_to_visible));
        }
        out
    }

    /// Infrared-query metrics, the setting shared by both protocols.
    pub fn infrared_to_visible(&self) -> &MetricsReport {
        match (&self.sysu, &self.regdb) {
            (Some(s), _) => s,
            (None, Some(r)) => &r.infrared_to_visible,
            (None, None) => unreachable!("report holds one protocol"),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json() + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Load(format!("{}: {e}", path.display())))
    }
}

/// Runs the configured protocol on precomputed features.
pub fn evaluate_features(visible: &FeatureSet, infrared: &FeatureSet, eval: &EvalSection) -> Result<EvalReport> {
    let (sysu, regdb) = match eval.protocol {
        ProtocolKind::Sysu => (Some(protocol_sysu(infrared, visible, &eval.sysu)?), None),
        ProtocolKind::Regdb => (None, Some(protocol_regdb(visible, infrared, &eval.regdb)?)),
    };
    Ok(EvalReport {
        version: REPORT_VERSION,
        protocol: eval.protocol,
        sysu,
        regdb,
    })
}

/// Embeds the configured evaluation split with `model` and scores it.
pub fn evaluate_model(config: &RunConfig, model: &ThreeStreamModel) -> Result<EvalReport> {
    let data = config.eval_data()?;
    let aug = config.augmentation_for(&model.arch);
    let (vis, ir) = feature_sets_for(model, &data.dataset, &aug)?;
    evaluate_features(&vis, &ir, &config.eval)
}

/// Markdown table with the standard retrieval columns.
pub fn metrics_table(rows: &[(String, &MetricsReport)]) -> String {
    let mut s = String::from("| setting | Rank-1 | Rank-10 | Rank-20 | mAP | mINP |\n|---|---|---|---|---|---|\n");
    let pct = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{:.2}", 100.0 * v));
    for (name, r) in rows {
        let at = |k: usize| r.cmc.get(k - 1).copied();
        let _ = writeln!(
            s,
            "| {name} | {} | {} | {} | {} | {} |",
            pct(at(1)),
            pct(at(10)),
            pct(at(20)),
            pct(Some(r.map)),
            pct(Some(r.minp))
        );
    }
    s
}

/// Mean loss per epoch for each stage in the log.
pub fn epoch_losses(records: &[StepRecord]) -> BTreeMap<Stage, Vec<(usize, f64)>> {
    let mut acc: BTreeMap<Stage, BTreeMap<usize, (f64, usize)>> = BTreeMap::new();
    for r in records {
        let e = acc.entry(r.stage).or_default().entry(r.epoch).or_insert((0.0, 0));
        e.0 += r.loss;
        e.1 += 1;
    }
    acc.into_iter()
        .map(|(s, m)| (s, m.into_iter().map(|(e, (sum, n))| (e, sum / n as f64)).collect()))
        .collect()
}

/// Loss-per-step line plot as a standalone SVG document.
pub fn loss_curve_svg(title: &str, losses: &[f64]) -> String {
    let (w, h, pad) = (640.0, 360.0, 48.0);
    let n = losses.len().max(2) as f64 - 1.0;
    let lo = losses.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = losses.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = if hi > lo { hi - lo } else { 1.0 };
    let points: Vec<String> = losses
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let x = pad + (w - 2.0 * pad) * i as f64 / n;
            let y = h - pad - (h - 2.0 * pad) * (v - lo) / span;
            format!("{x:.2},{y:.2}")
        })
        .collect();
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#);
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<line x1="{pad}" y1="{0}" x2="{1}" y2="{0}" stroke="black"/><line x1="{pad}" y1="{pad}" x2="{pad}" y2="{0}" stroke="black"/>"#,
        h - pad,
        w - pad
    );
    let _ = writeln!(s, r#"<text x="{}" y="24" text-anchor="middle" font-family="sans-serif" font-size="16">{title}</text>"#, w / 2.0);
    let _ = writeln!(s, r#"<text x="{pad}" y="{}" font-family="sans-serif" font-size="11">step</text>"#, h - 16.0);
    let _ = writeln!(s, r#"<text x="4" y="{}" font-family="sans-serif" font-size="11">{hi:.3}</text>"#, pad + 4.0);
    let _ = writeln!(s, r#"<text x="4" y="{}" font-family="sans-serif" font-size="11">{lo:.3}</text>"#, h - pad);
    let _ = writeln!(s, r#"<polyline fill="none" stroke="steelblue" stroke-width="1.5" points="{}"/>"#, points.join(" "));
    s.push_str("</svg>\n");
    s
}

/// What `report` produced.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub table: String,
    pub plots: Vec<PathBuf>,
}

/// Summarises a run directory: the step log, per-stage losses and, when a
/// `report.json` evaluation exists, its metrics. With `plots`, writes one
/// loss-curve SVG per stage under `plots/`.
pub fn summarize_run(run: &RunDir, plots: bool) -> Result<RunSummary> {
    if !run.metrics_log().exists() && !run.root.join("report.json").exists() {
        return Err(Error::validation(format!("{} holds no training log or evaluation report", run.root.display())));
    }
    let records = if run.metrics_log().exists() { run.read_metrics()? } else { Vec::new() };
    let mut table = String::new();
    let eval_path = run.root.join("report.json");
    if eval_path.exists() {
        let r = EvalReport::load(&eval_path)?;
        table.push_str(&metrics_table(&r.rows()));
        table.push('\n');
    }
    let per_epoch = epoch_losses(&records);
    if !per_epoch.is_empty() {
        table.push_str("| stage | epochs | first loss | last loss |\n|---|---|---|---|\n");
        for (stage, e) in &per_epoch {
            let _ = writeln!(
                table,
                "| {} ({stage}) | {} | {:.4} | {:.4} |",
                stage.number(),
                e.len(),
                e.first().map_or(f64::NAN, |x| x.1),
                e.last().map_or(f64::NAN, |x| x.1)
            );
        }
    }
    let mut written = Vec::new();
    if plots {
        let dir = run.root.join("plots");
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        for stage in Stage::ALL {
            let losses: Vec<f64> = records.iter().filter(|r| r.stage == stage).map(|r| r.loss).collect();
            if losses.is_empty() {
                continue;
            }
            let path = dir.join(format!("stage{}_loss.svg", stage.number()));
            let svg = loss_curve_svg(&format!("stage {} ({stage}) loss", stage.number()), &losses);
            fs::write(&path, svg).map_err(|e| Error::io(&path, e))?;
            written.push(path);
        }
    }
    Ok(RunSummary { table, plots: written })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evaluation::TrialMetrics;

    #[test]
    fn table_has_standard_columns() {
        let r = MetricsReport::from_trials(vec![TrialMetrics {
            cmc: vec![0.5; 20],
            map: 0.25,
            minp: 0.125,
            queries: 4,
            excluded: 0,
            gallery_size: 8,
        }]);
        let t = metrics_table(&[("x".into(), &r)]);
        assert!(t.starts_with("| setting | Rank-1 | Rank-10 | Rank-20 | mAP | mINP |"));
        assert!(t.contains("| x | 50.00 | 50.00 | 50.00 | 25.00 | 12.50 |"));
    }

    #[test]
    fn svg_has_one_point_per_step() {
        let svg = loss_curve_svg("t", &[3.0, 2.0, 1.0]);
        let pts = svg.split("points=\"").nth(1).unwrap().split('"').next().unwrap();
        assert_eq!(pts.split(' ').count(), 3);
    }

    #[test]
    fn empty_run_dir_is_an_error() {
        let d = tempfile::tempdir().unwrap();
        assert!(summarize_run(&RunDir::new(d.path()), false).is_err());
    }
}
