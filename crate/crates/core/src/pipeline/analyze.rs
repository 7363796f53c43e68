//! Post-hoc analysis of a generation run: how many questions were lost and
//! why, what words generated questions start with, and how long generation
//! took. Emits one JSON report plus plot-ready CSVs.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::load_pairs;
use crate::error::{Error, Result};
use crate::llm::{starting_word_report, GenerationStats, LatencySummary};

pub const STARTING_WORDS_TOP_N: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct StartingWord {
    pub word: String,
    pub percent: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct AnalysisReport {
    pub total: usize,
    pub kept: usize,
    pub empty: usize,
    pub prompt_duplicate: usize,
    /// Percentages of total, e.g. 0.2 for 2 lost out of 1000.
    pub lost_percent: f64,
    pub empty_percent: f64,
    pub duplicate_percent: f64,
    pub pair_count: usize,
    pub starting_words: Vec<StartingWord>,
    /// Sum of the listed starting-word percentages.
    pub starting_words_total_percent: f64,
    pub timing: LatencySummary,
}

/// Build the analysis from a pairs file and its generation stats file.
pub fn analyze(pairs_path: impl AsRef<Path>, stats_path: impl AsRef<Path>) -> Result<AnalysisReport> {
    let pairs = load_pairs(pairs_path)?;
    if pairs.is_empty() {
        return Err(Error::InvalidInput("pairs file holds no pairs".into()));
    }
    let stats = GenerationStats::load(stats_path)?;
    if stats.total == 0 {
        return Err(Error::InvalidInput("stats file reports zero documents".into()));
    }
    if stats.kept + stats.empty + stats.prompt_duplicate != stats.total {
        return Err(Error::InvalidInput(format!(
            "stats do not add up: {} + {} + {} != {}",
            stats.kept, stats.empty, stats.prompt_duplicate, stats.total
        )));
    }
    let pct = |n: usize| 100.0 * n as f64 / stats.total as f64;
    let words = starting_word_report(&pairs, STARTING_WORDS_TOP_N)?;
    let starting_words: Vec<StartingWord> = words
        .into_iter()
        .map(|(word, percent)| StartingWord { word, percent })
        .collect();
    let total_percent = starting_words.iter().map(|w| w.percent).sum();
    Ok(AnalysisReport {
        total: stats.total,
        kept: stats.kept,
        empty: stats.empty,
        prompt_duplicate: stats.prompt_duplicate,
        lost_percent: pct(stats.empty + stats.prompt_duplicate),
        empty_percent: pct(stats.empty),
        duplicate_percent: pct(stats.prompt_duplicate),
        pair_count: pairs.len(),
        starting_words,
        starting_words_total_percent: total_percent,
        timing: stats.latencies_ms,
    })
}

impl AnalysisReport {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut json = serde_json::to_string_pretty(self)?;
        json.push('\n');
        fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Write analysis.json plus lost.csv, starting-words.csv, timing.csv
    /// under a directory.
    pub fn write_dir(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.save(dir.join("analysis.json"))?;

        let mut lost = String::from("category,count,percent\n");
        lost.push_str(&format!("kept,{},{}\n", self.kept, 100.0 * self.kept as f64 / self.total as f64));
        lost.push_str(&format!("empty,{},{}\n", self.empty, self.empty_percent));
        lost.push_str(&format!(
            "prompt-duplicate,{},{}\n",
            self.prompt_duplicate, self.duplicate_percent
        ));
        lost.push_str(&format!(
            "lost,{},{}\n",
            self.empty + self.prompt_duplicate,
            self.lost_percent
        ));
        let lost_path = dir.join("lost.csv");
        fs::write(&lost_path, lost).map_err(|e| Error::io(&lost_path, e))?;

        let mut words = String::from("word,percent\n");
        for w in &self.starting_words {
            words.push_str(&format!("{},{}\n", w.word, w.percent));
        }
        words.push_str(&format!("Total,{}\n", self.starting_words_total_percent));
        let words_path = dir.join("starting-words.csv");
        fs::write(&words_path, words).map_err(|e| Error::io(&words_path, e))?;

        let mut timing = String::from("stat,ms\n");
        timing.push_str(&format!("mean,{}\n", self.timing.mean_ms));
        timing.push_str(&format!("p50,{}\n", self.timing.p50_ms));
        timing.push_str(&format!("p95,{}\n", self.timing.p95_ms));
        timing.push_str(&format!("total,{}\n", self.timing.total_ms));
        let timing_path = dir.join("timing.csv");
        fs::write(&timing_path, timing).map_err(|e| Error::io(&timing_path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{save_pairs, Provenance, SyntheticPair};

    fn pair(query: &str) -> SyntheticPair {
        SyntheticPair {
            query_id: format!("llm-{}", query.len()),
            query_text: query.to_string(),
            doc_id: format!("d{}", query.len()),
            doc_text: None,
            provenance: Provenance::Llm,
            generator_label: "mock".into(),
            config_hash: "abc".into(),
            latency_ms: Some(10.0),
        }
    }

    fn write_inputs(dir: &Path, stats: &GenerationStats, queries: &[&str]) -> (std::path::PathBuf, std::path::PathBuf) {
        let pairs_path = dir.join("pairs.jsonl");
        let stats_path = dir.join("stats.json");
        let pairs: Vec<SyntheticPair> = queries.iter().map(|q| pair(q)).collect();
        save_pairs(&pairs_path, &pairs).unwrap();
        stats.save(&stats_path).unwrap();
        (pairs_path, stats_path)
    }

    #[test]
    fn lost_percentage_matches_hand_arithmetic() {
        let dir = tempfile::tempdir().unwrap();
        let stats = GenerationStats {
            total: 1000,
            kept: 998,
            empty: 1,
            prompt_duplicate: 1,
            latencies_ms: LatencySummary::from_latencies(&[5.0, 15.0]),
        };
        let (pairs_path, stats_path) =
            write_inputs(dir.path(), &stats, &["What is this?", "How does it work?"]);
        let report = analyze(&pairs_path, &stats_path).unwrap();
        assert!((report.lost_percent - 0.2).abs() < 1e-12);
        assert!((report.empty_percent - 0.1).abs() < 1e-12);
        assert_eq!(report.pair_count, 2);
        assert!((report.timing.mean_ms - 10.0).abs() < 1e-12);
        assert!((report.timing.total_ms - 20.0).abs() < 1e-12);
        let total: f64 = report.starting_words.iter().map(|w| w.percent).sum();
        assert!((report.starting_words_total_percent - total).abs() < 1e-12);
    }

    #[test]
    fn analysis_files_land_in_the_directory() {
        let dir = tempfile::tempdir().unwrap();
        let stats = GenerationStats {
            total: 4,
            kept: 3,
            empty: 1,
            prompt_duplicate: 0,
            latencies_ms: LatencySummary::from_latencies(&[5.0, 6.0, 7.0]),
        };
        let (pairs_path, stats_path) =
            write_inputs(dir.path(), &stats, &["What a", "What b", "How c"]);
        let report = analyze(&pairs_path, &stats_path).unwrap();
        let out = dir.path().join("analysis");
        report.write_dir(&out).unwrap();
        let loaded = AnalysisReport::load(out.join("analysis.json")).unwrap();
        assert_eq!(loaded, report);
        let words = std::fs::read_to_string(out.join("starting-words.csv")).unwrap();
        assert!(words.starts_with("word,percent\nWhat,"));
        assert!(words.contains("\nTotal,"));
        assert!(out.join("lost.csv").exists());
        assert!(out.join("timing.csv").exists());
    }

    #[test]
    fn inconsistent_or_empty_inputs_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let bad = GenerationStats {
            total: 10,
            kept: 5,
            empty: 1,
            prompt_duplicate: 1,
            latencies_ms: LatencySummary::from_latencies(&[]),
        };
        let (pairs_path, stats_path) = write_inputs(dir.path(), &bad, &["What x"]);
        assert!(analyze(&pairs_path, &stats_path).is_err());

        // empty pairs file
        let empty_pairs = dir.path().join("none.jsonl");
        std::fs::write(&empty_pairs, "").unwrap();
        let good = GenerationStats {
            total: 10,
            kept: 8,
            empty: 1,
            prompt_duplicate: 1,
            latencies_ms: LatencySummary::from_latencies(&[]),
        };
        let stats_path2 = dir.path().join("good-stats.json");
        good.save(&stats_path2).unwrap();
        assert!(analyze(&empty_pairs, &stats_path2).is_err());

        // missing files
        assert!(analyze(dir.path().join("nope.jsonl"), &stats_path2).is_err());
    }
}
