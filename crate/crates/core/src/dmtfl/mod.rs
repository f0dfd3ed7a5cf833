//! The round engine: stations exchange messages over a synchronous bus to
//! estimate discrepancies, pick the target mixture, descend on their caching
//! models and update their collaboration weights.

mod history;
mod message;
mod node;

use rayon::prelude::*;

pub use history::{RoundRecord, TrainingHistory};
pub use message::{Message, MessageKind, Payload, HEADER_BYTES};
pub use node::BsNode;

use crate::discrepancy::DiscrepancyMatrix;
use crate::domain::{common_tiles, AlphaMatrix, BsDataset, CachingModel, HyperParams, MixtureWeights, WeightPolicy};
use crate::error::{Error, Result};
use crate::numerics::{build_cover_for, cover_cardinality, EpsCover};
use crate::objective::{PenaltyParams, Problem};
use crate::scalar::Real;

use node::{adversarial_center, NodeConfig};

/// Initial state: every model spreads the budget evenly over the tiles, and
/// both the collaboration rows and the mixture are uniform.
pub fn init_state<T: Real>(
    datasets: &[BsDataset<T>],
    hp: &HyperParams,
) -> Result<(Vec<CachingModel<T>>, AlphaMatrix<T>, MixtureWeights<T>)> {
    let tiles = common_tiles(datasets)?;
    let b = datasets.len();
    hp.validate_for(b, tiles)?;
    let level = T::lit(hp.cache_budget) / T::from_usize_lossy(tiles);
    let models = datasets
        .iter()
        .map(|d| CachingModel::from_feasible(d.bs_id(), vec![level; tiles]))
        .collect();
    Ok((models, AlphaMatrix::uniform(b)?, MixtureWeights::uniform(b)?))
}

/// The cover centre maximising the weighted objective at fixed models and
/// collaboration weights; ties go to the lowest index.
pub fn w_step<T: Real, M: AsRef<[T]>>(
    previous: &MixtureWeights<T>,
    problem: &Problem<'_, T>,
    models: &[M],
    alpha: &AlphaMatrix<T>,
    cover: &EpsCover<T>,
) -> Result<MixtureWeights<T>> {
    if cover.is_empty() {
        return Err(Error::Empty("mixture cover"));
    }
    if previous.len() != problem.num_bs() {
        return Err(Error::DimensionMismatch {
            expected: problem.num_bs(),
            actual: previous.len(),
            context: "previous mixture",
        });
    }
    problem.weighted_objective(models, previous, alpha)?;
    let losses = problem.loss_matrix(models)?;
    let shares: Vec<T> = losses
        .iter()
        .enumerate()
        .map(|(b, row)| {
            let mut s = T::zero();
            for (&a, &l) in alpha.row(b).iter().zip(row) {
                s += a * l;
            }
            s
        })
        .collect();
    Ok(cover.centers()[adversarial_center(cover, &shares)].clone())
}

/// Extra switches for [`run_dmtfl_with`].
#[derive(Debug, Clone, Copy, Default)]
pub struct RunOptions {
    /// Keep every message in the history, for replay and auditing.
    pub record_messages: bool,
}

/// Trained network state.
#[derive(Debug, Clone, PartialEq)]
pub struct DmtflOutput<T> {
    pub models: Vec<CachingModel<T>>,
    pub alpha: AlphaMatrix<T>,
    pub weights: MixtureWeights<T>,
    pub discrepancy: DiscrepancyMatrix<T>,
    pub history: TrainingHistory<T>,
}

struct Setup<T> {
    cfg: NodeConfig<T>,
    cover: Option<EpsCover<T>>,
}

impl<T: Real> Setup<T> {
    fn new(num_bs: usize, tiles: usize, hp: &HyperParams) -> Result<Self> {
        hp.validate_for(num_bs, tiles)?;
        let cover = match hp.weight_policy {
            WeightPolicy::Adversarial => Some(build_cover_for::<T>(&hp.mixture_set, num_bs, hp.eps_cover)?),
            _ => None,
        };
        let cover_size = match &cover {
            Some(c) => c.len(),
            None => cover_cardinality(&hp.mixture_set, num_bs, hp.eps_cover)?,
        };
        let cfg = NodeConfig {
            num_bs,
            tiles,
            spec: hp.loss_spec(),
            budget: T::lit(hp.cache_budget),
            ascent_step: T::lit(hp.ascent_step),
            inner_steps: hp.inner_steps,
            descent_step: T::lit(hp.descent_step),
            rho: (0..num_bs).map(|b| T::lit(hp.rho_for(b))).collect(),
            penalty: PenaltyParams {
                bound: T::lit(hp.loss_bound),
                delta: T::lit(hp.delta),
                cover_size,
            },
            policy: hp.weight_policy,
        };
        Ok(Self { cfg, cover })
    }
}

/// Delivery of one batch of messages among the locally simulated nodes.
trait Network<T> {
    fn begin_round(&mut self, round: usize);
    fn exchange(&mut self, outgoing: Vec<Vec<Message<T>>>) -> Result<Vec<Vec<Message<T>>>>;
}

/// The full network: every station is local.
struct Bus<T> {
    num_bs: usize,
    round: usize,
    last_round: Vec<usize>,
    link_bytes: Vec<usize>,
    budget: Option<usize>,
    messages: usize,
    bytes: usize,
    log: Option<Vec<Vec<Message<T>>>>,
}

impl<T: Real> Bus<T> {
    fn new(num_bs: usize, budget: Option<usize>, record: bool) -> Self {
        Self {
            num_bs,
            round: 0,
            last_round: vec![0; num_bs * num_bs],
            link_bytes: vec![0; num_bs * num_bs],
            budget,
            messages: 0,
            bytes: 0,
            log: record.then(Vec::new),
        }
    }

    fn take_counts(&mut self) -> (usize, usize) {
        (std::mem::take(&mut self.messages), std::mem::take(&mut self.bytes))
    }
}

impl<T: Real> Network<T> for Bus<T> {
    fn begin_round(&mut self, round: usize) {
        self.round = round;
        self.link_bytes.iter_mut().for_each(|x| *x = 0);
    }

    fn exchange(&mut self, outgoing: Vec<Vec<Message<T>>>) -> Result<Vec<Vec<Message<T>>>> {
        let mut inbox: Vec<Vec<Message<T>>> = vec![Vec::new(); self.num_bs];
        let mut batch = Vec::new();
        for (node, msgs) in outgoing.into_iter().enumerate() {
            for m in msgs {
                if m.sender != node || m.receiver >= self.num_bs || m.receiver == m.sender {
                    return Err(Error::Protocol(format!(
                        "node {node} emitted a message from {} to {}",
                        m.sender, m.receiver
                    )));
                }
                let link = m.sender * self.num_bs + m.receiver;
                if m.round < self.last_round[link] || m.round != self.round {
                    return Err(Error::Protocol(format!(
                        "round tag {} on link {}->{} out of order (current round {})",
                        m.round, m.sender, m.receiver, self.round
                    )));
                }
                self.last_round[link] = m.round;
                let size = m.bytes();
                self.link_bytes[link] += size;
                if let Some(budget) = self.budget {
                    if self.link_bytes[link] > budget {
                        return Err(Error::LinkBudget {
                            round: self.round,
                            bytes: self.link_bytes[link],
                            budget,
                        });
                    }
                }
                self.messages += 1;
                self.bytes += size;
                if self.log.is_some() {
                    batch.push(m.clone());
                }
                inbox[m.receiver].push(m);
            }
        }
        if let Some(log) = &mut self.log {
            log.push(batch);
        }
        Ok(inbox)
    }
}

/// A single node fed from a recorded message log. Its own outgoing traffic
/// must match the log exactly.
struct Replay<'l, T> {
    id: usize,
    log: &'l [Vec<Message<T>>],
    cursor: usize,
}

impl<T: Real> Network<T> for Replay<'_, T> {
    fn begin_round(&mut self, _round: usize) {}

    fn exchange(&mut self, outgoing: Vec<Vec<Message<T>>>) -> Result<Vec<Vec<Message<T>>>> {
        let batch = self
            .log
            .get(self.cursor)
            .ok_or_else(|| Error::Protocol(format!("message log ended at batch {}", self.cursor)))?;
        let expected: Vec<&Message<T>> = batch.iter().filter(|m| m.sender == self.id).collect();
        let sent: Vec<&Message<T>> = outgoing.iter().flatten().collect();
        if expected != sent {
            return Err(Error::Protocol(format!(
                "node {} diverged from the log at batch {}",
                self.id, self.cursor
            )));
        }
        self.cursor += 1;
        Ok(vec![batch.iter().filter(|m| m.receiver == self.id).cloned().collect()])
    }
}

fn each<'a, T, R, F>(nodes: &mut [BsNode<'a, T>], f: F) -> Result<Vec<R>>
where
    T: Real,
    R: Send,
    F: Fn(&mut BsNode<'a, T>) -> Result<R> + Sync + Send,
{
    nodes.par_iter_mut().map(f).collect()
}

fn each_with<'a, T, R, F>(nodes: &mut [BsNode<'a, T>], inbox: Vec<Vec<Message<T>>>, f: F) -> Result<Vec<R>>
where
    T: Real,
    R: Send,
    F: Fn(&mut BsNode<'a, T>, &[Message<T>]) -> Result<R> + Sync + Send,
{
    nodes
        .par_iter_mut()
        .zip(inbox.into_par_iter())
        .map(|(n, msgs)| f(n, &msgs))
        .collect()
}

fn initial_exchange<T: Real, N: Network<T>>(
    nodes: &mut [BsNode<'_, T>],
    net: &mut N,
    cfg: &NodeConfig<T>,
) -> Result<()> {
    net.begin_round(0);
    let out = each(nodes, |n| Ok(n.broadcast(MessageKind::BroadcastModel, 0, cfg)))?;
    let inbox = net.exchange(out)?;
    each_with(nodes, inbox, |n, m| {
        n.absorb_models(m, MessageKind::BroadcastModel, 0, cfg)
    })?;
    Ok(())
}

fn run_round<T: Real, N: Network<T>>(
    nodes: &mut [BsNode<'_, T>],
    net: &mut N,
    setup: &Setup<T>,
    hp: &HyperParams,
    t: usize,
    last: bool,
) -> Result<()> {
    let cfg = &setup.cfg;
    net.begin_round(t);

    nodes.iter_mut().for_each(BsNode::begin_ascent);
    for n in 0..cfg.inner_steps {
        let out = each(nodes, |node| Ok(node.probe(t, cfg)))?;
        let inbox = net.exchange(out)?;
        let out = each_with(nodes, inbox, |node, m| node.answer(m, t, cfg))?;
        let inbox = net.exchange(out)?;
        let final_iterate = n + 1 == cfg.inner_steps;
        each_with(nodes, inbox, |node, m| node.advance_ascent(m, t, final_iterate, cfg))?;
    }
    let out = each(nodes, |node| Ok(node.share_discrepancy(t, cfg)))?;
    let inbox = net.exchange(out)?;
    each_with(nodes, inbox, |node, m| node.symmetrize(m, t))?;

    let out = each(nodes, |node| node.share_objective(t, cfg))?;
    let inbox = net.exchange(out)?;
    each_with(nodes, inbox, |node, m| {
        node.choose_weights(m, t, cfg, setup.cover.as_ref())
    })?;

    let out = each(nodes, |node| Ok(node.send_gradients(t, cfg)))?;
    let inbox = net.exchange(out)?;
    each_with(nodes, inbox, |node, m| node.descend(m, t, cfg))?;

    let step = T::lit(hp.alpha_step_at(t));
    each(nodes, |node| node.step_alpha(step, t, cfg))?;

    let kind = if last {
        MessageKind::FinalModel
    } else {
        MessageKind::BroadcastModel
    };
    let out = each(nodes, |node| Ok(node.broadcast(kind, t, cfg)))?;
    let inbox = net.exchange(out)?;
    each_with(nodes, inbox, |node, m| node.absorb_models(m, kind, t, cfg))?;
    Ok(())
}

pub fn run_dmtfl<T: Real>(datasets: &[BsDataset<T>], hp: &HyperParams) -> Result<DmtflOutput<T>> {
    run_dmtfl_with(datasets, hp, &RunOptions::default())
}

/// Trains personalized caching models for every station.
pub fn run_dmtfl_with<T: Real>(
    datasets: &[BsDataset<T>],
    hp: &HyperParams,
    opts: &RunOptions,
) -> Result<DmtflOutput<T>> {
    let (models0, alpha0, w0) = init_state(datasets, hp)?;
    let num_bs = datasets.len();
    let tiles = models0[0].num_tiles();
    let setup = Setup::<T>::new(num_bs, tiles, hp)?;
    let cfg = &setup.cfg;
    let problem = Problem::new(datasets, cfg.spec, cfg.penalty, cfg.rho.clone())?;

    let mut nodes: Vec<BsNode<'_, T>> = datasets
        .iter()
        .zip(models0)
        .enumerate()
        .map(|(b, (d, m))| BsNode::new(b, d, m.into_phi(), alpha0.row(b).to_vec(), cfg))
        .collect();
    let mut bus = Bus::<T>::new(num_bs, hp.link_budget_bytes, opts.record_messages);
    let mut history = TrainingHistory {
        rounds: Vec::with_capacity(hp.rounds),
        setup_messages: 0,
        setup_bytes: 0,
        message_log: None,
    };
    let mut weights = w0;
    let mut discrepancy = DiscrepancyMatrix::zeros(num_bs);

    if hp.rounds > 0 {
        initial_exchange(&mut nodes, &mut bus, cfg)?;
        (history.setup_messages, history.setup_bytes) = bus.take_counts();
    }
    for t in 1..=hp.rounds {
        let phi_before: Vec<Vec<T>> = nodes.iter().map(|n| n.phi().to_vec()).collect();
        let alpha_before = AlphaMatrix::from_rows_unchecked(nodes.iter().map(|n| n.alpha_row().to_vec()).collect());

        run_round(&mut nodes, &mut bus, &setup, hp, t, t == hp.rounds)?;

        let w = nodes[0].weights().to_vec();
        if nodes.iter().any(|n| n.weights() != w.as_slice()) {
            return Err(Error::Protocol(format!(
                "stations disagree on the mixture in round {t}"
            )));
        }
        weights = MixtureWeights::from_simplex(w);
        discrepancy = DiscrepancyMatrix::from_estimates(nodes.iter().map(|n| n.discrepancy_row().to_vec()).collect())?;
        let phi: Vec<Vec<T>> = nodes.iter().map(|n| n.phi().to_vec()).collect();
        let alpha = AlphaMatrix::from_rows_unchecked(nodes.iter().map(|n| n.alpha_row().to_vec()).collect());
        let objective_before = problem.full_objective(&phi_before, &weights, &alpha_before, &discrepancy)?;
        let objective_after = problem.full_objective(&phi, &weights, &alpha, &discrepancy)?;
        if !objective_after.is_finite() {
            return Err(Error::NonFinite(format!("objective after round {t}")));
        }
        let losses = datasets
            .iter()
            .zip(&phi)
            .map(|(d, p)| crate::objective::empirical_loss(p, d, &cfg.spec))
            .collect::<Result<Vec<T>>>()?;
        let (messages, bytes) = bus.take_counts();
        history.rounds.push(RoundRecord {
            round: t,
            objective_before,
            objective_after,
            weights: weights.as_slice().to_vec(),
            losses,
            alpha: alpha.rows().to_vec(),
            phi,
            discrepancy: discrepancy.rows().to_vec(),
            messages,
            bytes,
        });
    }
    history.message_log = bus.log.take();

    let models = nodes
        .iter()
        .zip(datasets)
        .map(|(n, d)| CachingModel::from_feasible(d.bs_id(), n.phi().to_vec()))
        .collect();
    let alpha = AlphaMatrix::from_rows_unchecked(nodes.iter().map(|n| n.alpha_row().to_vec()).collect());
    Ok(DmtflOutput {
        models,
        alpha,
        weights,
        discrepancy,
        history,
    })
}

/// Per-round `(phi, alpha row)` of one station, from a model of that station
/// alone driven by the recorded messages.
pub fn replay_node<T: Real>(
    id: usize,
    data: &BsDataset<T>,
    num_bs: usize,
    hp: &HyperParams,
    log: &[Vec<Message<T>>],
) -> Result<Vec<(Vec<T>, Vec<T>)>> {
    if id >= num_bs {
        return Err(Error::InvalidParameter(format!(
            "station {id} out of range for {num_bs}"
        )));
    }
    let tiles = data.num_tiles();
    let setup = Setup::<T>::new(num_bs, tiles, hp)?;
    let level = T::lit(hp.cache_budget) / T::from_usize_lossy(tiles);
    let alpha0 = vec![T::one() / T::from_usize_lossy(num_bs); num_bs];
    let mut nodes = vec![BsNode::new(id, data, vec![level; tiles], alpha0, &setup.cfg)];
    let mut net = Replay { id, log, cursor: 0 };
    let mut out = Vec::with_capacity(hp.rounds);
    if hp.rounds > 0 {
        initial_exchange(&mut nodes, &mut net, &setup.cfg)?;
    }
    for t in 1..=hp.rounds {
        run_round(&mut nodes, &mut net, &setup, hp, t, t == hp.rounds)?;
        out.push((nodes[0].phi().to_vec(), nodes[0].alpha_row().to_vec()));
    }
    Ok(out)
}
