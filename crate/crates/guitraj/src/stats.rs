//! Dataset statistics: platform/software/website distributions, steps per
//! trajectory, action-type distributions per platform class, and summary
//! averages. Reports merge associatively so per-shard partials can be
//! combined deterministically.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::model::{GroundedEpisode, PlatformClass};

/// User-supplied name-to-category mapping (two-column TSV, case-folded
/// exact match). Unmapped names land in "other".
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CategoryMap {
    entries: BTreeMap<String, String>,
}

impl CategoryMap {
    pub fn from_tsv(text: &str) -> Self {
        let mut entries = BTreeMap::new();
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some((name, category)) = line.split_once('\t') {
                entries.insert(name.trim().to_lowercase(), category.trim().to_string());
            }
        }
        CategoryMap { entries }
    }

    pub fn load(path: &Path) -> std::io::Result<Self> {
        Ok(Self::from_tsv(&std::fs::read_to_string(path)?))
    }

    pub fn category(&self, name: &str) -> String {
        self.entries
            .get(&name.to_lowercase())
            .cloned()
            .unwrap_or_else(|| "other".to_string())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StatsReport {
    pub episodes: u64,
    pub steps: u64,
    /// One observation frame per step.
    pub frames: u64,
    /// Exact `steps / episodes`; null when there are no episodes.
    pub mean_steps: Option<f64>,
    pub platforms: BTreeMap<String, u64>,
    pub software: BTreeMap<String, u64>,
    pub websites: BTreeMap<String, u64>,
    pub software_categories: BTreeMap<String, u64>,
    pub website_categories: BTreeMap<String, u64>,
    /// Steps-per-episode histogram, keyed by step count.
    pub steps_histogram: BTreeMap<u64, u64>,
    pub action_types_desktop: BTreeMap<String, u64>,
    pub action_types_mobile: BTreeMap<String, u64>,
    /// Distinct software names plus website names, case-folded exact match.
    pub environments: u64,
    pub complete_episodes: u64,
    pub notes: Vec<String>,
    // Not part of the rendered counts; carried so merges stay exact.
    #[serde(default)]
    environment_names: Vec<String>,
}

fn bump(map: &mut BTreeMap<String, u64>, key: &str) {
    *map.entry(key.to_string()).or_insert(0) += 1;
}

/// Single pass over episodes. `mapping` drives the category rollups.
pub fn compute_stats(episodes: &[GroundedEpisode], mapping: Option<&CategoryMap>) -> StatsReport {
    let mut report = StatsReport {
        notes: vec![
            "environments = distinct case-folded software and website names (exact match)"
                .to_string(),
        ],
        ..StatsReport::default()
    };
    let default_map = CategoryMap::default();
    let mapping = mapping.unwrap_or(&default_map);

    for episode in episodes {
        report.episodes += 1;
        let steps = episode.steps.len() as u64;
        report.steps += steps;
        report.frames += steps;
        if episode.complete {
            report.complete_episodes += 1;
        }
        *report.steps_histogram.entry(steps).or_insert(0) += 1;
        bump(&mut report.platforms, episode.platform.as_str());
        bump(&mut report.software, &episode.software);
        bump(
            &mut report.software_categories,
            &mapping.category(&episode.software),
        );
        report
            .environment_names
            .push(episode.software.to_lowercase());
        if let Some(site) = &episode.website {
            bump(&mut report.websites, site);
            bump(&mut report.website_categories, &mapping.category(site));
            report.environment_names.push(site.to_lowercase());
        }
        let actions = match episode.platform.class() {
            PlatformClass::Desktop => &mut report.action_types_desktop,
            PlatformClass::Mobile => &mut report.action_types_mobile,
        };
        for step in &episode.steps {
            bump(actions, &step.base.action_type);
        }
    }

    report.environment_names.sort_unstable();
    report.environment_names.dedup();
    report.environments = report.environment_names.len() as u64;
    // Integer totals divided once: mean * count == steps exactly.
    report.mean_steps = if report.episodes > 0 {
        Some(report.steps as f64 / report.episodes as f64)
    } else {
        None
    };
    report
}

fn merge_counts(a: &mut BTreeMap<String, u64>, b: &BTreeMap<String, u64>) {
    for (k, v) in b {
        *a.entry(k.clone()).or_insert(0) += v;
    }
}

impl StatsReport {
    /// Associative merge of partial reports.
    pub fn merge(mut self, other: &StatsReport) -> StatsReport {
        self.episodes += other.episodes;
        self.steps += other.steps;
        self.frames += other.frames;
        self.complete_episodes += other.complete_episodes;
        merge_counts(&mut self.platforms, &other.platforms);
        merge_counts(&mut self.software, &other.software);
        merge_counts(&mut self.websites, &other.websites);
        merge_counts(&mut self.software_categories, &other.software_categories);
        merge_counts(&mut self.website_categories, &other.website_categories);
        merge_counts(&mut self.action_types_desktop, &other.action_types_desktop);
        merge_counts(&mut self.action_types_mobile, &other.action_types_mobile);
        for (k, v) in &other.steps_histogram {
            *self.steps_histogram.entry(*k).or_insert(0) += v;
        }
        self.environment_names
            .extend(other.environment_names.iter().cloned());
        self.environment_names.sort_unstable();
        self.environment_names.dedup();
        self.environments = self.environment_names.len() as u64;
        for note in &other.notes {
            if !self.notes.contains(note) {
                self.notes.push(note.clone());
            }
        }
        self.mean_steps = if self.episodes > 0 {
            Some(self.steps as f64 / self.episodes as f64)
        } else {
            None
        };
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    TextTable,
}

/// Rows sorted by count descending, then name ascending on ties.
fn sorted_rows(map: &BTreeMap<String, u64>) -> Vec<(&str, u64)> {
    let mut rows: Vec<(&str, u64)> = map.iter().map(|(k, v)| (k.as_str(), *v)).collect();
    rows.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    rows
}

fn render_table_section(out: &mut String, title: &str, map: &BTreeMap<String, u64>) {
    if map.is_empty() {
        return;
    }
    out.push_str(&format!("\n{title}\n"));
    for (name, count) in sorted_rows(map) {
        out.push_str(&format!("  {count:>8}  {name}\n"));
    }
}

/// Deterministic rendering; the JSON form round-trips through serde.
pub fn render_report(report: &StatsReport, format: ReportFormat) -> String {
    match format {
        ReportFormat::Json => {
            serde_json::to_string_pretty(report).expect("report serializes") + "\n"
        }
        ReportFormat::TextTable => {
            let mut out = String::new();
            out.push_str(&format!(
                "episodes: {} (complete: {})\nsteps: {}\nframes: {}\nmean steps/episode: {}\nenvironments: {}\n",
                report.episodes,
                report.complete_episodes,
                report.steps,
                report.frames,
                report
                    .mean_steps
                    .map_or("null".to_string(), |m| format!("{m}")),
                report.environments,
            ));
            render_table_section(&mut out, "platforms", &report.platforms);
            render_table_section(&mut out, "software", &report.software);
            render_table_section(&mut out, "websites", &report.websites);
            render_table_section(&mut out, "software categories", &report.software_categories);
            render_table_section(&mut out, "website categories", &report.website_categories);
            render_table_section(&mut out, "desktop action types", &report.action_types_desktop);
            render_table_section(&mut out, "mobile action types", &report.action_types_mobile);
            if !report.steps_histogram.is_empty() {
                out.push_str("\nsteps per episode\n");
                for (steps, count) in &report.steps_histogram {
                    out.push_str(&format!("  {steps:>4} steps: {count}\n"));
                }
            }
            out
        }
    }
}
