use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::environment::EpisodeRecord;
use crate::rewards::BandBracket;

/// Columns that precede (`iter`) and follow the action and state blocks.
pub const CSV_FIXED_COLUMNS: [&str; 7] =
    ["iter", "reward", "bracket", "degenerate", "critic_loss", "actor_loss", "reset_flag"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    /// 1-based.
    pub iteration: usize,
    pub action: Vec<f64>,
    pub state: Vec<f64>,
    pub reward: f64,
    pub bracket: Option<BandBracket>,
    pub degenerate: bool,
    pub critic_loss: Option<f64>,
    pub actor_loss: Option<f64>,
    pub buffer_reset: bool,
    /// Replay size once this iteration's experience is stored.
    pub buffer_len: usize,
    pub wall_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub algorithm: String,
    pub records: Vec<IterationRecord>,
    pub best_iteration: Option<usize>,
    pub best_solution: Option<EpisodeRecord>,
    pub pretrain_evaluations: usize,
    pub pretrain_degenerate: usize,
}

impl TrainLog {
    pub fn new(algorithm: &str) -> Self {
        TrainLog {
            algorithm: algorithm.to_string(),
            records: Vec::new(),
            best_iteration: None,
            best_solution: None,
            pretrain_evaluations: 0,
            pretrain_degenerate: 0,
        }
    }

    /// Appends a record; the earliest maximal reward is kept as best.
    pub fn push(&mut self, rec: IterationRecord, episode: &EpisodeRecord) {
        let better = self.best_solution.as_ref().is_none_or(|b| episode.reward > b.reward);
        if better {
            self.best_iteration = Some(rec.iteration);
            self.best_solution = Some(episode.clone());
        }
        self.records.push(rec);
    }

    pub fn best_reward(&self) -> Option<f64> {
        self.best_solution.as_ref().map(|b| b.reward)
    }

    pub fn degenerate_count(&self) -> usize {
        self.records.iter().filter(|r| r.degenerate).count()
    }

    /// First iteration whose reward is at least `threshold`.
    pub fn first_reaching(&self, threshold: f64) -> Option<usize> {
        self.records.iter().find(|r| r.reward >= threshold).map(|r| r.iteration)
    }

    /// True when the stored best is the arg-max of the records.
    pub fn is_consistent(&self) -> bool {
        let max = self.records.iter().map(|r| r.reward).fold(f64::NEG_INFINITY, f64::max);
        match (&self.best_solution, self.best_iteration) {
            (None, None) => self.records.is_empty(),
            (Some(b), Some(it)) => {
                b.reward == max && self.records.iter().any(|r| r.iteration == it && r.reward == max)
            }
            _ => false,
        }
    }

    pub fn header(action_dim: usize, state_dim: usize) -> Vec<String> {
        let mut h = vec!["iter".to_string()];
        h.extend((1..=action_dim).map(|k| format!("a_{k}")));
        h.extend((1..=state_dim).map(|k| format!("s_{k}")));
        h.extend(CSV_FIXED_COLUMNS[1..].iter().map(|s| s.to_string()));
        h.push("wall_ms".into());
        h
    }

    /// One row per iteration. Empty loss cells mean no update was made.
    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let (k, n) = self
            .records
            .first()
            .map(|r| (r.action.len(), r.state.len()))
            .unwrap_or((0, 0));
        let mut w = csv::Writer::from_writer(out);
        w.write_record(Self::header(k, n))?;
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for r in &self.records {
            let mut row = vec![r.iteration.to_string()];
            row.extend(r.action.iter().map(f64::to_string));
            row.extend(r.state.iter().map(f64::to_string));
            row.push(r.reward.to_string());
            row.push(r.bracket.map(|b| b.as_str().to_string()).unwrap_or_default());
            row.push(u8::from(r.degenerate).to_string());
            row.push(opt(r.critic_loss));
            row.push(opt(r.actor_loss));
            row.push(u8::from(r.buffer_reset).to_string());
            row.push(format!("{:.3}", r.wall_ms));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("in-memory write");
        String::from_utf8(buf).expect("utf-8 csv")
    }

    /// Parses rows written by [`TrainLog::write_csv`]. Replay sizes are not
    /// part of the file and come back as zero.
    pub fn read_csv<R: Read>(input: R) -> Result<Vec<IterationRecord>, String> {
        let mut rdr = csv::Reader::from_reader(input);
        let header: Vec<String> = rdr
            .headers()
            .map_err(|e| e.to_string())?
            .iter()
            .map(str::to_string)
            .collect();
        let k = header.iter().filter(|h| h.starts_with("a_")).count();
        let n = header.iter().filter(|h| h.starts_with("s_")).count();
        if header != Self::header(k, n) {
            return Err(format!("unexpected header: {}", header.join(",")));
        }
        let mut out = Vec::new();
        for (line, row) in rdr.records().enumerate() {
            let row = row.map_err(|e| e.to_string())?;
            let ctx = |m: &str| format!("row {}: {m}", line + 1);
            let num = |i: usize| -> Result<f64, String> {
                row[i].parse::<f64>().map_err(|_| ctx(&format!("bad number {:?}", &row[i])))
            };
            let opt = |i: usize| -> Result<Option<f64>, String> {
                if row[i].is_empty() {
                    Ok(None)
                } else {
                    num(i).map(Some)
                }
            };
            let flag = |i: usize| -> Result<bool, String> {
                match &row[i] {
                    "0" => Ok(false),
                    "1" => Ok(true),
                    other => Err(ctx(&format!("bad flag {other:?}"))),
                }
            };
            let base = 1 + k + n;
            let bracket = match &row[base + 1] {
                "" => None,
                s => Some(BandBracket::parse(s).ok_or_else(|| ctx(&format!("bad bracket {s:?}")))?),
            };
            out.push(IterationRecord {
                iteration: row[0].parse().map_err(|_| ctx("bad iteration"))?,
                action: (1..=k).map(num).collect::<Result<_, _>>()?,
                state: (1 + k..base).map(num).collect::<Result<_, _>>()?,
                reward: num(base)?,
                bracket,
                degenerate: flag(base + 2)?,
                critic_loss: opt(base + 3)?,
                actor_loss: opt(base + 4)?,
                buffer_reset: flag(base + 5)?,
                buffer_len: 0,
                wall_ms: num(base + 6)?,
            });
        }
        Ok(out)
    }
}
