//! Simulated active-learning experiments: one learning curve per
//! configuration and seed, a comparison table, and an SVG plot.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use rayon::prelude::*;
use spatiotag_core::active::{run_active_learning, ALConfig, Decoder, LearningCurve, SimulatedOracle};
use spatiotag_core::corpus::Corpus;
use spatiotag_core::features::FeatureConfig;

#[derive(Clone, Debug, PartialEq)]
pub struct Run {
    pub config: ALConfig,
    pub curve: LearningCurve,
}

impl Run {
    pub fn file_name(&self) -> String {
        format!("{}-seed{}.csv", self.config.label(), self.config.seed)
    }

    pub fn initial_f1(&self) -> f64 {
        self.curve.rows.first().map_or(0.0, |r| r.micro_f1)
    }

    pub fn final_f1(&self) -> f64 {
        self.curve.rows.last().map_or(0.0, |r| r.micro_f1)
    }
}

pub fn simulate(pool: &Corpus, test: &Corpus, features: &FeatureConfig, config: &ALConfig) -> Result<Run> {
    let mut oracle = SimulatedOracle::new(pool)?;
    let (learner, _) = run_active_learning(pool, test, features, config, &mut oracle)
        .with_context(|| format!("simulating {} with seed {}", config.label(), config.seed))?;
    Ok(Run {
        config: config.clone(),
        curve: learner.curve().clone(),
    })
}

/// Runs every configuration in parallel; results keep the input order.
pub fn simulate_all(pool: &Corpus, test: &Corpus, features: &FeatureConfig, configs: &[ALConfig]) -> Result<Vec<Run>> {
    configs.par_iter().map(|c| simulate(pool, test, features, c)).collect()
}

pub fn write_curves(runs: &[Run], dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    runs.iter()
        .map(|r| {
            let path = dir.join(r.file_name());
            std::fs::write(&path, r.curve.to_csv()).with_context(|| format!("writing {}", path.display()))?;
            Ok(path)
        })
        .collect()
}

/// Summary of one configuration over its seeds.
#[derive(Clone, Debug, PartialEq)]
pub struct ConfigSummary {
    pub label: String,
    pub decoder: Decoder,
    pub seeds: usize,
    pub mean_initial_f1: f64,
    pub mean_final_f1: f64,
    /// Seeds whose final F1 is above their round-0 F1.
    pub improved: usize,
}

/// Summaries in order of first appearance.
pub fn summarize(runs: &[Run]) -> Vec<ConfigSummary> {
    let mut out: Vec<ConfigSummary> = Vec::new();
    for r in runs {
        let label = r.config.label();
        let i = match out.iter().position(|s| s.label == label) {
            Some(i) => i,
            None => {
                out.push(ConfigSummary {
                    label,
                    decoder: r.config.decoder,
                    seeds: 0,
                    mean_initial_f1: 0.0,
                    mean_final_f1: 0.0,
                    improved: 0,
                });
                out.len() - 1
            }
        };
        let s = &mut out[i];
        s.seeds += 1;
        s.mean_initial_f1 += r.initial_f1();
        s.mean_final_f1 += r.final_f1();
        s.improved += usize::from(r.final_f1() > r.initial_f1());
    }
    for s in &mut out {
        s.mean_initial_f1 /= s.seeds as f64;
        s.mean_final_f1 /= s.seeds as f64;
    }
    out
}

/// Mean final F1 of BP-decoded against Viterbi-decoded ensembles.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DecoderComparison {
    pub bp_mean: f64,
    pub vt_mean: f64,
}

/// Regressions smaller than this are not flagged.
pub const DECODER_TOLERANCE: f64 = 0.02;

impl DecoderComparison {
    pub fn of(runs: &[Run]) -> Option<DecoderComparison> {
        let mean = |d: Decoder| {
            let f: Vec<f64> = runs
                .iter()
                .filter(|r| r.config.decoder == d)
                .map(Run::final_f1)
                .collect();
            (!f.is_empty()).then(|| f.iter().sum::<f64>() / f.len() as f64)
        };
        Some(DecoderComparison {
            bp_mean: mean(Decoder::Bp)?,
            vt_mean: mean(Decoder::Viterbi)?,
        })
    }

    pub fn flagged(&self) -> bool {
        self.vt_mean - self.bp_mean > DECODER_TOLERANCE
    }
}

pub fn comparison_table(runs: &[Run]) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<12} {:>5} {:>10} {:>10} {:>9}",
        "config", "seeds", "round0_f1", "final_f1", "improved"
    );
    for s in summarize(runs) {
        let _ = writeln!(
            out,
            "{:<12} {:>5} {:>10.4} {:>10.4} {:>9}",
            s.label,
            s.seeds,
            s.mean_initial_f1,
            s.mean_final_f1,
            format!("{}/{}", s.improved, s.seeds)
        );
    }
    if let Some(c) = DecoderComparison::of(runs) {
        let _ = writeln!(
            out,
            "\nbp mean final F1 {:.4}, vt mean final F1 {:.4}{}",
            c.bp_mean,
            c.vt_mean,
            if c.flagged() {
                "  (bp trails vt by more than 2 points)"
            } else {
                ""
            }
        );
    }
    out
}

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f",
];

/// Mean micro F1 against labeled count, one line per configuration.
pub fn svg_plot(runs: &[Run]) -> String {
    let (w, h, margin) = (640.0, 400.0, 50.0);
    let mut series: Vec<(String, Vec<(f64, f64)>)> = Vec::new();
    for s in summarize(runs) {
        let members: Vec<&Run> = runs.iter().filter(|r| r.config.label() == s.label).collect();
        let len = members.iter().map(|r| r.curve.rows.len()).min().unwrap_or(0);
        let points = (0..len)
            .map(|i| {
                let n = members.len() as f64;
                let x = members
                    .iter()
                    .map(|r| r.curve.rows[i].labeled_count as f64)
                    .sum::<f64>()
                    / n;
                let y = members.iter().map(|r| r.curve.rows[i].micro_f1).sum::<f64>() / n;
                (x, y)
            })
            .collect();
        series.push((s.label, points));
    }
    let xmax = series
        .iter()
        .flat_map(|(_, p)| p.iter().map(|q| q.0))
        .fold(1.0, f64::max);
    let sx = |x: f64| margin + x / xmax * (w - 2.0 * margin);
    let sy = |y: f64| h - margin - y * (h - 2.0 * margin);

    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(out, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        out,
        r#"<path d="M{m} {t} L{m} {b} L{r} {b}" stroke="black" fill="none"/>"#,
        m = margin,
        t = margin,
        b = h - margin,
        r = w - margin
    );
    for tick in 0..=5 {
        let y = tick as f64 / 5.0;
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{:.1}" text-anchor="end">{y:.1}</text>"#,
            margin - 6.0,
            sy(y) + 4.0
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="{}" y="{}" text-anchor="middle">labeled sentences (max {xmax})</text>"#,
        w / 2.0,
        h - 15.0
    );
    let _ = writeln!(
        out,
        r#"<text x="15" y="{}" transform="rotate(-90 15 {})" text-anchor="middle">micro F1</text>"#,
        h / 2.0,
        h / 2.0
    );
    for (i, (label, points)) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let d: Vec<String> = points
            .iter()
            .map(|&(x, y)| format!("{:.1},{:.1}", sx(x), sy(y)))
            .collect();
        let _ = writeln!(
            out,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#,
            d.join(" ")
        );
        let ly = margin + 14.0 * i as f64;
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{ly:.1}" fill="{color}">{label}</text>"#,
            w - margin - 70.0
        );
    }
    out.push_str("</svg>\n");
    out
}
