//! Report emission: comparison tables, the coordinate-law and sweep plots as
//! static SVG, and a text summary. Every number here is an aggregation of
//! rows from the raw CSVs written by earlier stages.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use anyhow::Result;

use opline_core::metrics::coordinate_correlation;
use opline_core::select::SelectorMode;

use crate::csvutil::{column, fnum, read_csv, write_csv};
use crate::stages::{read_selection, read_sweep, Ctx};
use crate::svg::{color, render_plot, Series};

pub fn report_stage(ctx: &Ctx) -> Result<Vec<String>> {
    let (mheader, mrows) = read_csv(&ctx.out.join("evaluate/metrics.csv"))?;
    let sweep = read_sweep(&ctx.out.join("sweep/alpha_sweep.csv"))?;
    let selection = read_selection(&ctx.out.join("select/selection.csv"))?;

    let primary = if ctx.cfg.select.mode == SelectorMode::Prefix {
        "future_l2"
    } else {
        "full_l2"
    };

    // --- OOD comparison table -------------------------------------------
    let c_method = column(&mheader, "method")?;
    let c_metric = column(&mheader, "metric")?;
    let c_value = column(&mheader, "value")?;
    let c_role = column(&mheader, "role")?;
    let c_valid = column(&mheader, "validation")?;

    let mut per_method: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for r in &mrows {
        if r[c_metric] == primary && r[c_role].starts_with("ood") && r[c_valid] == "false" {
            per_method
                .entry(r[c_method].clone())
                .or_default()
                .push(fnum(&r[c_value])?);
        }
    }
    let summarize = |vals: &[f64]| -> (f64, f64) {
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        let worst = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        (mean, worst)
    };
    let base_mean = per_method.get("base").map(|v| summarize(v).0);
    let mut ood_rows: Vec<Vec<String>> = Vec::new();
    for (method, vals) in &per_method {
        let (mean, worst) = summarize(vals);
        let gain = base_mean
            .filter(|b| *b != 0.0)
            .map(|b| (b - mean) / b)
            .map(|g| g.to_string())
            .unwrap_or_default();
        ood_rows.push(vec![
            method.clone(),
            primary.to_string(),
            mean.to_string(),
            worst.to_string(),
            gain,
        ]);
    }
    write_csv(
        &ctx.out.join("report/ood_comparison.csv"),
        &["method", "metric", "ood_mean", "ood_worst", "gain_vs_base"],
        &ood_rows,
    )?;

    // --- coordinate law ----------------------------------------------------
    let mut law_rows: Vec<Vec<String>> = Vec::new();
    let mut law_pairs: Vec<(f64, f64)> = Vec::new();
    let selected_mode = match ctx.cfg.select.mode {
        SelectorMode::Coord => "coord",
        SelectorMode::Scale => "scale",
        SelectorMode::Prefix => "prefix",
        SelectorMode::Oracle => "oracle",
        SelectorMode::WrongSign => "wrong-sign",
    };
    for row in selection.iter().filter(|r| {
        r.mode == "oracle" && r.scope == "task" && !r.validation
    }) {
        let selected = selection
            .iter()
            .find(|r| {
                r.mode == selected_mode
                    && r.scope == "task"
                    && r.lambda == row.lambda
            })
            .map(|r| r.alpha_hat.to_string())
            .unwrap_or_default();
        law_rows.push(vec![
            row.lambda.to_string(),
            row.s.to_string(),
            row.role.clone(),
            row.alpha_hat.to_string(),
            selected,
        ]);
        law_pairs.push((row.s, row.alpha_hat));
    }
    write_csv(
        &ctx.out.join("report/coordinate_law.csv"),
        &["lambda", "s", "role", "oracle_alpha", "selected_alpha"],
        &law_rows,
    )?;
    let pearson = coordinate_correlation(&law_pairs).ok();

    // --- plots --------------------------------------------------------------
    let mut law_series = vec![Series {
        label: "oracle alpha".into(),
        points: law_pairs.clone(),
        color: color(0),
        draw_line: false,
    }];
    if !law_pairs.is_empty() {
        let lo = law_pairs.iter().map(|(s, _)| *s).fold(f64::INFINITY, f64::min);
        let hi = law_pairs
            .iter()
            .map(|(s, _)| *s)
            .fold(f64::NEG_INFINITY, f64::max);
        law_series.push(Series {
            label: "identity".into(),
            points: vec![(lo, lo), (hi, hi)],
            color: color(7),
            draw_line: true,
        });
    }
    std::fs::create_dir_all(ctx.out.join("report"))?;
    std::fs::write(
        ctx.out.join("report/coordinate_law.svg"),
        render_plot(
            "Physical coordinate vs oracle coordinate",
            "normalized coordinate s",
            "oracle alpha",
            &law_series,
        ),
    )?;

    // Loss profiles along the line, one series per non-validation regime.
    let mut regimes: Vec<(String, f64)> = sweep
        .iter()
        .filter(|r| !r.validation)
        .map(|r| (r.lambda.to_string(), r.s))
        .collect();
    regimes.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap());
    regimes.dedup();
    let mut sweep_series = Vec::new();
    for (i, (lambda, s)) in regimes.iter().enumerate() {
        let mut by_alpha: BTreeMap<String, Vec<f64>> = BTreeMap::new();
        for r in sweep.iter().filter(|r| r.lambda.to_string() == *lambda) {
            let value = if primary == "future_l2" {
                r.future_l2
            } else {
                r.full_l2
            };
            by_alpha.entry(r.alpha.to_string()).or_default().push(value);
        }
        let mut points: Vec<(f64, f64)> = by_alpha
            .iter()
            .map(|(a, v)| {
                (
                    a.parse::<f64>().unwrap_or(f64::NAN),
                    v.iter().sum::<f64>() / v.len() as f64,
                )
            })
            .collect();
        points.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        sweep_series.push(Series {
            label: format!("s = {s:.2}"),
            points,
            color: color(i),
            draw_line: true,
        });
    }
    std::fs::write(
        ctx.out.join("report/alpha_sweep.svg"),
        render_plot(
            "Rollout error along the coordinate line",
            "alpha",
            primary,
            &sweep_series,
        ),
    )?;

    let ood_series: Vec<Series> = ood_rows
        .iter()
        .enumerate()
        .map(|(i, r)| Series {
            label: r[0].clone(),
            points: vec![(i as f64, r[2].parse().unwrap_or(f64::NAN))],
            color: color(i),
            draw_line: false,
        })
        .collect();
    std::fs::write(
        ctx.out.join("report/ood_comparison.svg"),
        render_plot(
            "OOD comparison by method",
            "method index",
            primary,
            &ood_series,
        ),
    )?;

    // --- text summary ---------------------------------------------------
    let mut text = String::new();
    let _ = writeln!(text, "experiment: {}", ctx.cfg.name);
    let _ = writeln!(text, "config digest: {}", ctx.config_digest);
    let _ = writeln!(
        text,
        "conventions: relative L2 is the per-frame norm ratio over grid and channels;"
    );
    let _ = writeln!(
        text,
        "  frame means are taken per sample first, then sample means, then regime means."
    );
    let _ = writeln!(text, "primary metric: {primary}");
    let _ = writeln!(text);
    let _ = writeln!(text, "OOD comparison ({primary}; gain relative to base):");
    for r in &ood_rows {
        let _ = writeln!(
            text,
            "  {:<18} mean {:>12}  worst {:>12}  gain {}",
            r[0], r[2], r[3], r[4]
        );
    }
    let _ = writeln!(text);
    match pearson {
        Some(r) => {
            let _ = writeln!(text, "coordinate law: Pearson r(s, oracle alpha) = {r:.4}");
        }
        None => {
            let _ = writeln!(text, "coordinate law: not enough regimes for a correlation");
        }
    }
    if let Ok(gamma) = crate::stages::load_gamma(ctx) {
        let _ = writeln!(text, "calibrated gamma: {gamma}");
    }
    let _ = writeln!(
        text,
        "generic merge baselines use trim={} / drop={} (source-method defaults; recorded in lineage)",
        ctx.cfg.baselines.ties_trim, ctx.cfg.baselines.dare_drop
    );
    if let Ok((bheader, brows)) = read_csv(&ctx.out.join("theory/bound_report.csv")) {
        if let (Ok(ca), Ok(cs)) = (column(&bheader, "alpha"), column(&bheader, "slack")) {
            let min_slack = brows
                .iter()
                .filter_map(|r| fnum(&r[cs]).ok().map(|v| (r[ca].clone(), v)))
                .min_by(|a, b| a.1.partial_cmp(&b.1).unwrap());
            if let Some((alpha, slack)) = min_slack {
                let _ = writeln!(
                    text,
                    "continuation-bound audit: minimum slack {slack} at alpha {alpha}"
                );
            }
        }
    }
    std::fs::write(ctx.out.join("report/summary.txt"), text)?;

    Ok(vec![
        "report/ood_comparison.csv".into(),
        "report/coordinate_law.csv".into(),
        "report/coordinate_law.svg".into(),
        "report/alpha_sweep.svg".into(),
        "report/ood_comparison.svg".into(),
        "report/summary.txt".into(),
    ])
}
