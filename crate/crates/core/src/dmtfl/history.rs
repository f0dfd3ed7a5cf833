use std::io::Write;

use crate::error::Result;
use crate::scalar::Real;

use super::message::Message;

/// State of the network after one completed round.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundRecord<T> {
    /// 1-based round index.
    pub round: usize,
    /// Full objective at the round's mixture and discrepancies, before the
    /// model and collaboration updates.
    pub objective_before: T,
    /// The same objective after the updates.
    pub objective_after: T,
    pub weights: Vec<T>,
    /// Empirical loss of each station's own model on its own data, after the round.
    pub losses: Vec<T>,
    pub alpha: Vec<Vec<T>>,
    pub phi: Vec<Vec<T>>,
    pub discrepancy: Vec<Vec<T>>,
    pub messages: usize,
    pub bytes: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainingHistory<T> {
    pub rounds: Vec<RoundRecord<T>>,
    /// Messages sent before the first round (the initial model exchange).
    pub setup_messages: usize,
    pub setup_bytes: usize,
    /// Every delivery batch in order, when message recording is enabled.
    pub message_log: Option<Vec<Vec<Message<T>>>>,
}

impl<T: Real> TrainingHistory<T> {
    pub fn total_messages(&self) -> usize {
        self.setup_messages + self.rounds.iter().map(|r| r.messages).sum::<usize>()
    }

    pub fn total_bytes(&self) -> usize {
        self.setup_bytes + self.rounds.iter().map(|r| r.bytes).sum::<usize>()
    }

    /// Writes one CSV row per station and round: `round, bs_id, phi_*, alpha_*`.
    pub fn write_checkpoint<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let Some(first) = self.rounds.first() else {
            w.flush()?;
            return Ok(());
        };
        let tiles = first.phi.first().map_or(0, Vec::len);
        let num_bs = first.alpha.len();
        let mut header = vec!["round".to_string(), "bs_id".to_string()];
        header.extend((0..tiles).map(|f| format!("phi_{f}")));
        header.extend((0..num_bs).map(|i| format!("alpha_{i}")));
        w.write_record(&header)?;
        for r in &self.rounds {
            for (b, (phi, alpha)) in r.phi.iter().zip(&r.alpha).enumerate() {
                let mut row = vec![r.round.to_string(), b.to_string()];
                row.extend(phi.iter().chain(alpha).map(|x| format!("{:?}", x.to_f64_lossy())));
                w.write_record(&row)?;
            }
        }
        w.flush()?;
        Ok(())
    }
}
