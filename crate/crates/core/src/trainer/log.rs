use std::io::Write;

use crate::error::Result;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    Pretrain,
    Agent,
    Finetune,
    Round,
}

impl Phase {
    pub fn name(self) -> &'static str {
        match self {
            Phase::Pretrain => "pretrain",
            Phase::Agent => "agent",
            Phase::Finetune => "finetune",
            Phase::Round => "round",
        }
    }
}

/// One line of the training log. Agent rows carry the mean value loss as
/// `train_loss` and no validation loss.
#[derive(Clone, Debug, PartialEq)]
pub struct LogRow {
    pub round: usize,
    pub epoch: usize,
    pub phase: Phase,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    pub mean_reward: Option<f64>,
}

pub fn write_log_csv<W: Write>(rows: &[LogRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["round", "epoch", "phase", "train_loss", "val_loss", "mean_reward"])?;
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for r in rows {
        w.write_record([
            r.round.to_string(),
            r.epoch.to_string(),
            r.phase.name().to_string(),
            r.train_loss.to_string(),
            opt(r.val_loss),
            opt(r.mean_reward),
        ])?;
    }
    w.flush()?;
    Ok(())
}
