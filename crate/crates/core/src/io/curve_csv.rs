use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::masks::MaskKind;
use crate::trainer::{CurveRow, RunConfig};

pub const CURVE_COLUMNS: [&str; 7] = [
    "episode",
    "total_reward",
    "oracle_reward",
    "score",
    "smoothed_score",
    "loss",
    "mean_mask",
];

/// Run metadata carried on the `#` line above the column header.
#[derive(Clone, Debug, PartialEq)]
pub struct CurveHeader {
    pub kind: MaskKind,
    pub u_len: usize,
    pub noise_dim: usize,
    pub seed: u64,
    pub num_episodes: usize,
    pub eval_window: usize,
    pub threshold: f64,
    pub config_hash: u64,
}

impl CurveHeader {
    pub fn for_run(config: &RunConfig, seed: u64) -> Self {
        let u_len = match config.mask.kind {
            MaskKind::Epic => config.input_dim() * config.mask.u_multiplier,
            _ => 0,
        };
        CurveHeader {
            kind: config.mask.kind,
            u_len,
            noise_dim: config.bandit.noise_dim,
            seed,
            num_episodes: config.num_episodes,
            eval_window: config.eval_window,
            threshold: config.convergence_threshold,
            config_hash: config.config_hash(),
        }
    }

    /// Legend text, `EPIC (148)` for EPIC runs.
    pub fn label(&self) -> String {
        match self.kind {
            MaskKind::Identity => "No mask".into(),
            MaskKind::Layernorm => "LayerNorm".into(),
            MaskKind::VectorFilter => "Vector filter".into(),
            MaskKind::Epic => format!("EPIC ({})", self.u_len),
        }
    }

    fn render(&self) -> String {
        format!(
            "# kind={} u_len={} noise_dim={} seed={} num_episodes={} eval_window={} threshold={} config_hash={:016x}",
            self.kind.as_str(),
            self.u_len,
            self.noise_dim,
            self.seed,
            self.num_episodes,
            self.eval_window,
            self.threshold,
            self.config_hash
        )
    }

    fn parse(line: &str) -> std::result::Result<Self, String> {
        let body = line.trim_start_matches('#').trim();
        let mut h = CurveHeader {
            kind: MaskKind::Identity,
            u_len: 0,
            noise_dim: 0,
            seed: 0,
            num_episodes: 0,
            eval_window: 0,
            threshold: 0.0,
            config_hash: 0,
        };
        let mut seen_kind = false;
        for field in body.split_whitespace() {
            let (k, v) = field
                .split_once('=')
                .ok_or_else(|| format!("metadata field `{field}` is not key=value"))?;
            let num = |v: &str| v.parse::<u64>().map_err(|e| format!("`{k}`: {e}"));
            match k {
                "kind" => {
                    h.kind = MaskKind::parse(v).ok_or_else(|| format!("unknown mask kind `{v}`"))?;
                    seen_kind = true;
                }
                "u_len" => h.u_len = num(v)? as usize,
                "noise_dim" => h.noise_dim = num(v)? as usize,
                "seed" => h.seed = num(v)?,
                "num_episodes" => h.num_episodes = num(v)? as usize,
                "eval_window" => h.eval_window = num(v)? as usize,
                "threshold" => h.threshold = v.parse().map_err(|e| format!("`threshold`: {e}"))?,
                "config_hash" => {
                    h.config_hash = u64::from_str_radix(v, 16).map_err(|e| format!("`config_hash`: {e}"))?
                }
                _ => {}
            }
        }
        if !seen_kind {
            return Err("metadata line has no `kind`".into());
        }
        Ok(h)
    }
}

/// `03_epic-148_noise32_seed1` style file stem.
pub fn run_stem(index: usize, config: &RunConfig, seed: u64) -> String {
    let h = CurveHeader::for_run(config, seed);
    let kind = match h.kind {
        MaskKind::Epic => format!("epic-{}", h.u_len),
        k => k.as_str().to_string(),
    };
    format!("{index:02}_{kind}_noise{}_seed{seed}", h.noise_dim)
}

/// Appends one flushed line per episode so a killed run leaves a valid prefix.
pub struct CurveWriter {
    file: File,
}

impl CurveWriter {
    pub fn create(path: &Path, header: &CurveHeader) -> Result<Self> {
        let mut file = File::create(path)?;
        writeln!(file, "{}", header.render())?;
        writeln!(file, "{}", CURVE_COLUMNS.join(","))?;
        file.flush()?;
        Ok(CurveWriter { file })
    }

    pub fn write_row(&mut self, r: &CurveRow) -> Result<()> {
        writeln!(
            self.file,
            "{},{},{},{},{},{},{}",
            r.episode, r.total_reward, r.oracle_reward, r.score, r.smoothed_score, r.loss, r.mean_mask
        )?;
        self.file.flush()?;
        Ok(())
    }
}

/// `episode,mask_0,...,mask_{D-1}` rows.
pub struct MaskSnapshotWriter {
    file: File,
    width: usize,
}

impl MaskSnapshotWriter {
    pub fn create(path: &Path, width: usize) -> Result<Self> {
        let mut file = File::create(path)?;
        let mut header = String::from("episode");
        for i in 0..width {
            header.push_str(&format!(",mask_{i}"));
        }
        writeln!(file, "{header}")?;
        file.flush()?;
        Ok(MaskSnapshotWriter { file, width })
    }

    pub fn write_snapshot(&mut self, episode: usize, values: &[f64]) -> Result<()> {
        if values.len() != self.width {
            return Err(Error::Dimension {
                op: "mask snapshot",
                expected: self.width,
                got: values.len(),
            });
        }
        let mut line = episode.to_string();
        for v in values {
            line.push(',');
            line.push_str(&v.to_string());
        }
        writeln!(self.file, "{line}")?;
        self.file.flush()?;
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CurveFile {
    pub header: Option<CurveHeader>,
    pub rows: Vec<CurveRow>,
}

impl CurveFile {
    pub fn scores(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.score).collect()
    }
}

pub fn read_curve(path: &Path) -> Result<CurveFile> {
    let reader = BufReader::new(File::open(path)?);
    let err = |line: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line: line as u64,
        msg,
    };
    let mut header = None;
    let mut saw_columns = false;
    let mut rows = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let n = i + 1;
        let line = line?;
        if line.starts_with('#') {
            if saw_columns || header.is_some() {
                return Err(err(n, "metadata line after the header".into()));
            }
            header = Some(CurveHeader::parse(&line).map_err(|m| err(n, m))?);
            continue;
        }
        if !saw_columns {
            if line != CURVE_COLUMNS.join(",") {
                return Err(err(n, format!("expected header `{}`", CURVE_COLUMNS.join(","))));
            }
            saw_columns = true;
            continue;
        }
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != CURVE_COLUMNS.len() {
            return Err(err(n, format!("expected {} fields, found {}", CURVE_COLUMNS.len(), fields.len())));
        }
        let f = |j: usize| {
            fields[j]
                .parse::<f64>()
                .map_err(|e| err(n, format!("column `{}`: {e}", CURVE_COLUMNS[j])))
        };
        let episode = fields[0]
            .parse::<usize>()
            .map_err(|e| err(n, format!("column `episode`: {e}")))?;
        rows.push(CurveRow {
            episode,
            total_reward: f(1)?,
            oracle_reward: f(2)?,
            score: f(3)?,
            smoothed_score: f(4)?,
            loss: f(5)?,
            mean_mask: f(6)?,
        });
    }
    if !saw_columns {
        return Err(err(1, "missing column header".into()));
    }
    Ok(CurveFile { header, rows })
}
