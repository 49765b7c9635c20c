//! Pieces of the `suba` command line that are worth testing on their own:
//! config layering, output files and the text report.

use std::fmt::Write as _;
use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use anyhow::{bail, Context, Result};
use suba::simulator::{DesignSummary, StudyResult, SweepResult};
use suba::{DesignKind, Scenario, StudyConfig};

/// Study settings given on the command line. `None` leaves the default.
#[derive(Debug, Clone, Default, clap::Args)]
pub struct StudyFlags {
    /// Scenario number, 1 to 6.
    #[arg(long)]
    pub scenario: Option<u8>,
    /// Designs to run, comma separated (suba, er, ar, reg).
    #[arg(long = "design", value_delimiter = ',')]
    pub designs: Option<Vec<DesignKind>>,
    #[arg(long)]
    pub replicates: Option<usize>,
    /// Master seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Maximum sample size.
    #[arg(long = "N")]
    pub max_enrollment: Option<usize>,
    #[arg(long)]
    pub runin: Option<usize>,
    #[arg(long)]
    pub phi: Option<f64>,
    /// Grid values per marker for the exclusion check.
    #[arg(long = "grid")]
    pub grid_points: Option<usize>,
}

impl StudyFlags {
    pub fn apply(&self, config: &mut StudyConfig) -> Result<()> {
        if let Some(s) = self.scenario {
            config.scenario = Scenario::new(s)?;
        }
        if let Some(d) = &self.designs {
            config.designs = d.clone();
        }
        macro_rules! set {
            ($($field:ident),*) => {$(
                if let Some(v) = self.$field {
                    config.$field = v;
                }
            )*};
        }
        set!(replicates, seed, max_enrollment, runin, phi, grid_points);
        Ok(())
    }
}

/// Defaults, then flags, then the config file: a key present in the file
/// wins over the flag for the same setting.
pub fn resolve_config(flags: &StudyFlags, file: Option<&str>) -> Result<StudyConfig> {
    let mut config = StudyConfig::default();
    flags.apply(&mut config)?;
    if let Some(text) = file {
        let overrides: toml::Table = toml::from_str(text).context("parsing config file")?;
        let mut merged = toml::Table::try_from(&config).context("encoding configuration")?;
        for (k, v) in overrides {
            merged.insert(k, v);
        }
        config = merged.try_into().context("config file")?;
    }
    config.validate()?;
    Ok(config)
}

pub fn read_config_file(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

/// Writes `replicates.csv`, `orr_differences.csv`, `q_differences.csv` and
/// `summary.json` into `dir`.
pub fn write_study(result: &StudyResult, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let create = |name: &str| -> Result<BufWriter<File>> {
        let path = dir.join(name);
        Ok(BufWriter::new(File::create(&path).with_context(|| format!("creating {}", path.display()))?))
    };
    result.write_replicates_csv(create("replicates.csv")?)?;
    result.write_orr_differences_csv(create("orr_differences.csv")?)?;
    if result.config.designs.contains(&DesignKind::Suba) {
        result.write_q_differences_csv(create("q_differences.csv")?)?;
    }
    result.write_summary_json(create("summary.json")?)?;
    Ok(())
}

/// Writes one study directory per axis value plus `sweep.json`.
pub fn write_sweep(sweep: &SweepResult, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    for p in &sweep.points {
        write_study(&p.result, &dir.join(format!("{}={}", axis_name(sweep), p.value)))?;
    }
    let f = File::create(dir.join("sweep.json"))?;
    serde_json::to_writer_pretty(BufWriter::new(f), sweep)?;
    Ok(())
}

fn axis_name(sweep: &SweepResult) -> &'static str {
    match sweep.axis {
        suba::simulator::SweepAxis::Phi => "phi",
        suba::simulator::SweepAxis::MaxEnrollment => "N",
    }
}

fn estimate(e: &suba::simulator::Estimate) -> String {
    format!("{:.2} ({:.2})", e.mean, e.se)
}

fn design_rows(out: &mut String, s: &DesignSummary) {
    let orr = s.orr.as_ref().map_or("-".to_string(), |e| format!("{:.3} ({:.3})", e.mean, e.se));
    let anp: Vec<String> = s.anp.iter().map(estimate).collect();
    let _ = writeln!(
        out,
        "{:<5} ORR {orr}  stop {}  early stops {}/{}  ANP {}",
        s.design.name(),
        estimate(&s.stop_size),
        s.early_stops,
        s.replicates,
        anp.join(" | ")
    );
    for (b, row) in s.anp_subset.iter().enumerate() {
        let cells: Vec<String> = row.iter().map(estimate).collect();
        let _ = writeln!(out, "      subset {}: {}", b + 1, cells.join(" | "));
    }
    if !s.q1_better.is_empty() {
        let f: Vec<String> = s.q1_better.iter().map(|v| format!("{v:.3}")).collect();
        let _ = writeln!(out, "      fraction with q(1) > q(t), t = 2..: {}", f.join(" "));
    }
}

/// Plain-text summary of a study: one block per design, then the ORR
/// comparisons against the adaptive design. Standard errors in parentheses.
pub fn render_report(result: &StudyResult) -> String {
    let c = &result.config;
    let mut out = String::new();
    let _ = writeln!(
        out,
        "scenario {}  replicates {}  N {}  run-in {}  phi {}  grid {}  seed {}",
        c.scenario, c.replicates, c.max_enrollment, c.runin, c.phi, c.grid_points, c.seed
    );
    for s in &result.summaries {
        design_rows(&mut out, s);
    }
    for cmp in &result.orr_comparisons {
        let _ = writeln!(
            out,
            "suba - {:<4} ORR difference {}  suba better in {:.1}%  mean |diff| {:.4}",
            cmp.versus.name(),
            format_args!("{:.4} ({:.4})", cmp.difference.mean, cmp.difference.se),
            100.0 * cmp.fraction_better,
            cmp.mean_absolute_difference
        );
    }
    out
}

/// Reads a `summary.json` or `sweep.json` written by this tool and renders it.
pub fn report_file(path: &Path) -> Result<String> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let value: serde_json::Value = serde_json::from_str(&text)?;
    if value.get("points").is_some() {
        let sweep: SweepResult = serde_json::from_value(value)?;
        let mut out = String::new();
        for p in &sweep.points {
            let _ = writeln!(out, "== {} = {}", axis_name(&sweep), p.value);
            out.push_str(&render_report(&p.result));
        }
        Ok(out)
    } else if value.get("summaries").is_some() {
        Ok(render_report(&serde_json::from_value(value)?))
    } else {
        bail!("{} is neither a study summary nor a sweep", path.display())
    }
}
