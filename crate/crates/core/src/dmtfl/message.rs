use crate::error::{Error, Result};
use crate::scalar::Real;

/// Kinds of inter-station traffic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum MessageKind {
    /// A caching model: a live model after a round, or a scratch ascent
    /// iterate sent to the pair partner.
    BroadcastModel,
    /// A loss value and gradient evaluated on the sender's data at a model
    /// the receiver owns.
    LossAndSubgrad,
    /// The sender's raw discrepancy estimate against the receiver.
    DiscrepancyShare,
    /// The sender's share of the weighted objective and penalty.
    ObjectiveShare,
    FinalModel,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Payload<T> {
    Model(Vec<T>),
    LossAndGrad { loss: T, grad: Vec<T> },
    Scalars(Vec<T>),
}

impl<T: Real> Payload<T> {
    fn scalars(&self) -> usize {
        match self {
            Payload::Model(v) | Payload::Scalars(v) => v.len(),
            Payload::LossAndGrad { grad, .. } => 1 + grad.len(),
        }
    }
}

/// Bytes of routing metadata charged per message (kind, sender, receiver, round).
pub const HEADER_BYTES: usize = 16;

#[derive(Debug, Clone, PartialEq)]
pub struct Message<T> {
    pub kind: MessageKind,
    pub sender: usize,
    pub receiver: usize,
    pub round: usize,
    pub payload: Payload<T>,
}

impl<T: Real> Message<T> {
    pub fn new(kind: MessageKind, sender: usize, receiver: usize, round: usize, payload: Payload<T>) -> Self {
        Self {
            kind,
            sender,
            receiver,
            round,
            payload,
        }
    }

    /// Size on the wire.
    pub fn bytes(&self) -> usize {
        HEADER_BYTES + self.payload.scalars() * std::mem::size_of::<T>()
    }

    pub(crate) fn model(&self, tiles: usize) -> Result<&[T]> {
        match &self.payload {
            Payload::Model(v) if v.len() == tiles => Ok(v),
            _ => Err(self.malformed("a model")),
        }
    }

    pub(crate) fn loss_and_grad(&self, tiles: usize) -> Result<(T, &[T])> {
        match &self.payload {
            Payload::LossAndGrad { loss, grad } if grad.len() == tiles => Ok((*loss, grad)),
            _ => Err(self.malformed("a loss and gradient")),
        }
    }

    pub(crate) fn scalars(&self, n: usize) -> Result<&[T]> {
        match &self.payload {
            Payload::Scalars(v) if v.len() == n => Ok(v),
            _ => Err(self.malformed("scalars")),
        }
    }

    fn malformed(&self, what: &str) -> Error {
        Error::Protocol(format!(
            "{:?} from {} to {} in round {} does not carry {what} of the expected size",
            self.kind, self.sender, self.receiver, self.round
        ))
    }
}
