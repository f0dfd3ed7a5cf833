use crate::discrepancy::{ascent_step, gap_subgradient};
use crate::domain::{BsDataset, LossSpec, WeightPolicy};
use crate::error::{Error, Result};
use crate::numerics::{project_capped_simplex, project_simplex_vec, EpsCover};
use crate::objective::{
    accumulate_scaled, add_norm_subgradient, alpha_row_gradient, empirical_loss_grad, sqrt_term_from_shares,
    PenaltyParams,
};
use crate::scalar::Real;

use super::message::{Message, MessageKind, Payload};

/// Constants every node is configured with before training starts. None of
/// them depend on another station's data.
#[derive(Debug, Clone)]
pub(crate) struct NodeConfig<T> {
    pub num_bs: usize,
    pub tiles: usize,
    pub spec: LossSpec<T>,
    pub budget: T,
    pub ascent_step: T,
    pub inner_steps: usize,
    pub descent_step: T,
    pub rho: Vec<T>,
    pub penalty: PenaltyParams<T>,
    pub policy: WeightPolicy,
}

/// Index of the cover centre maximising `sum_b w_b s_b`, preferring the
/// lowest index among values equal up to a relative `1e-12`.
pub(crate) fn adversarial_center<T: Real>(cover: &EpsCover<T>, shares: &[T]) -> usize {
    let tol = T::lit(1e-12);
    let mut best = (0usize, T::neg_infinity());
    for (k, c) in cover.centers().iter().enumerate() {
        let mut val = T::zero();
        for (&w, &s) in c.as_slice().iter().zip(shares) {
            val += w * s;
        }
        if val > best.1 + tol * best.1.abs().max(T::one()) || best.1 == T::neg_infinity() {
            best = (k, val);
        }
    }
    best.0
}

/// One base station. It owns its dataset, its caching model and its row of
/// the collaboration matrix; everything else it knows arrived by message.
#[derive(Debug, Clone)]
pub struct BsNode<'a, T> {
    id: usize,
    data: &'a BsDataset<T>,
    phi: Vec<T>,
    alpha: Vec<T>,
    /// Latest model received from each station (own slot kept current).
    models: Vec<Vec<T>>,
    scratch: Vec<Vec<T>>,
    raw_v: Vec<T>,
    v_row: Vec<T>,
    /// Loss and gradient of the local data at each known model.
    cross: Vec<(T, Vec<T>)>,
    /// `(s_b, q_b, m_b)` shares received this round, own included.
    shares: Vec<[T; 3]>,
    w: Vec<T>,
}

impl<'a, T: Real> BsNode<'a, T> {
    pub(crate) fn new(id: usize, data: &'a BsDataset<T>, phi0: Vec<T>, alpha0: Vec<T>, cfg: &NodeConfig<T>) -> Self {
        let b = cfg.num_bs;
        let inv = T::one() / T::from_usize_lossy(b);
        Self {
            id,
            data,
            models: vec![phi0.clone(); b],
            phi: phi0,
            alpha: alpha0,
            scratch: vec![Vec::new(); b],
            raw_v: vec![T::zero(); b],
            v_row: vec![T::zero(); b],
            cross: Vec::new(),
            shares: vec![[T::zero(); 3]; b],
            w: vec![inv; b],
        }
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn phi(&self) -> &[T] {
        &self.phi
    }

    pub fn alpha_row(&self) -> &[T] {
        &self.alpha
    }

    pub fn discrepancy_row(&self) -> &[T] {
        &self.v_row
    }

    pub fn raw_discrepancy_row(&self) -> &[T] {
        &self.raw_v
    }

    pub fn weights(&self) -> &[T] {
        &self.w
    }

    fn others(&self, cfg: &NodeConfig<T>) -> impl Iterator<Item = usize> + '_ {
        let id = self.id;
        (0..cfg.num_bs).filter(move |&i| i != id)
    }

    fn expect(msg: &Message<T>, kind: MessageKind, receiver: usize, round: usize) -> Result<()> {
        if msg.kind != kind || msg.receiver != receiver || msg.round != round {
            return Err(Error::Protocol(format!(
                "node {receiver} expected {kind:?} for round {round}, got {:?} from {} for round {}",
                msg.kind, msg.sender, msg.round
            )));
        }
        Ok(())
    }

    /// Sends the current model to every other station.
    pub(crate) fn broadcast(&self, kind: MessageKind, round: usize, cfg: &NodeConfig<T>) -> Vec<Message<T>> {
        self.others(cfg)
            .map(|i| Message::new(kind, self.id, i, round, Payload::Model(self.phi.clone())))
            .collect()
    }

    pub(crate) fn absorb_models(
        &mut self,
        inbox: &[Message<T>],
        kind: MessageKind,
        round: usize,
        cfg: &NodeConfig<T>,
    ) -> Result<()> {
        for m in inbox {
            Self::expect(m, kind, self.id, round)?;
            self.models[m.sender] = m.model(cfg.tiles)?.to_vec();
        }
        self.models[self.id] = self.phi.clone();
        Ok(())
    }

    /// Starts the discrepancy ascent against every partner from the live model.
    pub(crate) fn begin_ascent(&mut self) {
        for (i, s) in self.scratch.iter_mut().enumerate() {
            *s = if i == self.id { Vec::new() } else { self.phi.clone() };
        }
        self.raw_v = vec![-T::one(); self.scratch.len()];
        self.raw_v[self.id] = T::zero();
    }

    /// Sends each partner the current ascent iterate.
    pub(crate) fn probe(&self, round: usize, cfg: &NodeConfig<T>) -> Vec<Message<T>> {
        self.others(cfg)
            .map(|i| {
                Message::new(
                    MessageKind::BroadcastModel,
                    self.id,
                    i,
                    round,
                    Payload::Model(self.scratch[i].clone()),
                )
            })
            .collect()
    }

    /// Evaluates the local loss and gradient at each probed iterate.
    pub(crate) fn answer(&self, inbox: &[Message<T>], round: usize, cfg: &NodeConfig<T>) -> Result<Vec<Message<T>>> {
        inbox
            .iter()
            .map(|m| {
                Self::expect(m, MessageKind::BroadcastModel, self.id, round)?;
                let (loss, grad) = empirical_loss_grad(m.model(cfg.tiles)?, self.data, &cfg.spec)?;
                Ok(Message::new(
                    MessageKind::LossAndSubgrad,
                    self.id,
                    m.sender,
                    round,
                    Payload::LossAndGrad { loss, grad },
                ))
            })
            .collect()
    }

    /// Records the gap at each partner's iterate and takes one ascent step
    /// unless `last` is set.
    pub(crate) fn advance_ascent(
        &mut self,
        inbox: &[Message<T>],
        round: usize,
        last: bool,
        cfg: &NodeConfig<T>,
    ) -> Result<()> {
        for m in inbox {
            Self::expect(m, MessageKind::LossAndSubgrad, self.id, round)?;
            let i = m.sender;
            let (l_i, g_i) = m.loss_and_grad(cfg.tiles)?;
            let (l_b, g_b) = empirical_loss_grad(&self.scratch[i], self.data, &cfg.spec)?;
            let gap = (l_b - l_i).abs();
            if !gap.is_finite() {
                return Err(Error::NonFinite(format!(
                    "discrepancy gap between {} and {i} in round {round}",
                    self.id
                )));
            }
            if gap > self.raw_v[i] {
                self.raw_v[i] = gap;
            }
            if !last {
                let g = gap_subgradient(l_b, &g_b, l_i, g_i);
                self.scratch[i] = ascent_step(&self.scratch[i], &g, cfg.ascent_step, cfg.budget)?;
            }
        }
        Ok(())
    }

    pub(crate) fn share_discrepancy(&self, round: usize, cfg: &NodeConfig<T>) -> Vec<Message<T>> {
        self.others(cfg)
            .map(|i| {
                Message::new(
                    MessageKind::DiscrepancyShare,
                    self.id,
                    i,
                    round,
                    Payload::Scalars(vec![self.raw_v[i]]),
                )
            })
            .collect()
    }

    pub(crate) fn symmetrize(&mut self, inbox: &[Message<T>], round: usize) -> Result<()> {
        self.v_row = self.raw_v.clone();
        for m in inbox {
            Self::expect(m, MessageKind::DiscrepancyShare, self.id, round)?;
            let theirs = m.scalars(1)?[0];
            self.v_row[m.sender] = self.v_row[m.sender].max(theirs);
        }
        self.v_row[self.id] = T::zero();
        Ok(())
    }

    /// Evaluates the local data at every known model and shares the
    /// objective contribution `s_b`, the penalty share `q_b` and `m_b`.
    pub(crate) fn share_objective(&mut self, round: usize, cfg: &NodeConfig<T>) -> Result<Vec<Message<T>>> {
        self.cross = self
            .models
            .iter()
            .map(|m| empirical_loss_grad(m, self.data, &cfg.spec))
            .collect::<Result<_>>()?;
        let mb = T::from_usize_lossy(self.data.len());
        let mut s = T::zero();
        let mut q = T::zero();
        for (&a, (l, _)) in self.alpha.iter().zip(&self.cross) {
            s += a * *l;
            let c = a / mb;
            q += c * c;
        }
        let share = [s, q, mb];
        self.shares[self.id] = share;
        Ok(self
            .others(cfg)
            .map(|i| {
                Message::new(
                    MessageKind::ObjectiveShare,
                    self.id,
                    i,
                    round,
                    Payload::Scalars(share.to_vec()),
                )
            })
            .collect())
    }

    /// Collects the objective shares and fixes this round's mixture.
    pub(crate) fn choose_weights(
        &mut self,
        inbox: &[Message<T>],
        round: usize,
        cfg: &NodeConfig<T>,
        cover: Option<&EpsCover<T>>,
    ) -> Result<()> {
        for m in inbox {
            Self::expect(m, MessageKind::ObjectiveShare, self.id, round)?;
            let v = m.scalars(3)?;
            self.shares[m.sender] = [v[0], v[1], v[2]];
        }
        let b = cfg.num_bs;
        self.w = match cfg.policy {
            WeightPolicy::Uniform => vec![T::one() / T::from_usize_lossy(b); b],
            WeightPolicy::Proportional => {
                let total = self.shares.iter().fold(T::zero(), |acc, s| acc + s[2]);
                self.shares.iter().map(|s| s[2] / total).collect()
            }
            WeightPolicy::Adversarial => {
                let cover = cover.ok_or_else(|| Error::Protocol("adversarial weights need a cover".into()))?;
                let s: Vec<T> = self.shares.iter().map(|s| s[0]).collect();
                cover.centers()[adversarial_center(cover, &s)].as_slice().to_vec()
            }
        };
        Ok(())
    }

    /// Sends each station the weighted gradient of the local loss at its model.
    pub(crate) fn send_gradients(&self, round: usize, cfg: &NodeConfig<T>) -> Vec<Message<T>> {
        let wb = self.w[self.id];
        self.others(cfg)
            .map(|i| {
                let coef = wb * self.alpha[i];
                let (loss, g) = &self.cross[i];
                let grad = g.iter().map(|&x| coef * x).collect();
                Message::new(
                    MessageKind::LossAndSubgrad,
                    self.id,
                    i,
                    round,
                    Payload::LossAndGrad { loss: *loss, grad },
                )
            })
            .collect()
    }

    /// Sums the weighted gradients in station order, adds the regularizer
    /// subgradient and takes a projected descent step.
    pub(crate) fn descend(&mut self, inbox: &[Message<T>], round: usize, cfg: &NodeConfig<T>) -> Result<()> {
        let mut incoming: Vec<Option<&[T]>> = vec![None; cfg.num_bs];
        for m in inbox {
            Self::expect(m, MessageKind::LossAndSubgrad, self.id, round)?;
            incoming[m.sender] = Some(m.loss_and_grad(cfg.tiles)?.1);
        }
        let own_coef = self.w[self.id] * self.alpha[self.id];
        let own: Vec<T> = self.cross[self.id].1.iter().map(|&x| own_coef * x).collect();
        incoming[self.id] = Some(&own);
        let mut acc = vec![T::zero(); cfg.tiles];
        for (b, g) in incoming.iter().enumerate() {
            let g = g.ok_or_else(|| Error::Protocol(format!("node {} missing gradient from {b}", self.id)))?;
            accumulate_scaled(&mut acc, T::one(), g);
        }
        add_norm_subgradient(&mut acc, &self.phi, cfg.rho[self.id]);
        let raw: Vec<T> = self
            .phi
            .iter()
            .zip(&acc)
            .map(|(&p, &g)| p - cfg.descent_step * g)
            .collect();
        if raw.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite(format!(
                "model update at station {} in round {round}",
                self.id
            )));
        }
        self.phi = project_capped_simplex(&raw, T::one(), cfg.budget)?;
        Ok(())
    }

    /// Projected gradient step on the local row of the collaboration matrix.
    pub(crate) fn step_alpha(&mut self, step: T, round: usize, cfg: &NodeConfig<T>) -> Result<()> {
        let w: Vec<T> = self.w.clone();
        let q: Vec<T> = self.shares.iter().map(|s| s[1]).collect();
        let (sqrt_term, half_log) = sqrt_term_from_shares(&w, &q, &cfg.penalty);
        let losses: Vec<T> = self.cross.iter().map(|(l, _)| *l).collect();
        let grad = alpha_row_gradient(
            w[self.id],
            &self.alpha,
            &losses,
            &self.v_row,
            self.data.len(),
            sqrt_term,
            half_log,
            cfg.penalty.bound,
        );
        let raw: Vec<T> = self.alpha.iter().zip(&grad).map(|(&a, &g)| a - step * g).collect();
        if raw.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite(format!(
                "collaboration update at station {} in round {round}",
                self.id
            )));
        }
        self.alpha = project_simplex_vec(&raw)?;
        Ok(())
    }
}
