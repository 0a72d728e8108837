//! Entangled-pair lifecycle, provisioning policies and idle error-correction cost.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::RngStream;
use crate::sim::SimTime;
use crate::topology::QuantumLink;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct PairId(pub u64);

impl fmt::Display for PairId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "pair.{}", self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PairStatus {
    Available,
    Reserved,
    Consumed,
    Expired,
}

impl PairStatus {
    fn can_become(self, next: PairStatus) -> bool {
        use PairStatus::*;
        matches!(
            (self, next),
            (Available, Reserved)
                | (Reserved, Consumed)
                | (Available, Expired)
                | (Reserved, Expired)
                | (Reserved, Available)
        )
    }

    pub fn is_live(self) -> bool {
        matches!(self, PairStatus::Available | PairStatus::Reserved)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EntangledPair {
    pub id: PairId,
    pub link: usize,
    pub endpoints: (u32, u32),
    pub created_at: SimTime,
    pub expires_at: SimTime,
    pub status: PairStatus,
    /// Requester holding the reservation.
    pub holder: Option<u64>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RefreshPolicy {
    #[default]
    OnDemand,
    Pooled {
        target_pool_size: u32,
    },
    JustInTime,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StarvationPolicy {
    #[default]
    RetryUntilDeadline,
    AbortJob,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PairRequest {
    pub requester: u64,
    pub endpoints: (u32, u32),
    pub count: u32,
    pub deadline: Option<SimTime>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TicketId(pub u64);

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Ticket {
    pub id: TicketId,
    pub requester: u64,
    pub link: usize,
    pub count: u32,
    pub deadline: Option<SimTime>,
    pub requested_at: SimTime,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum RequestOutcome {
    Reserved(Vec<PairId>),
    Queued(TicketId),
}

/// A queued ticket that has now been served.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Fulfilled {
    pub ticket: TicketId,
    pub requester: u64,
    pub pairs: Vec<PairId>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct AttemptOutcome {
    pub created: Option<PairId>,
    pub fulfilled: Vec<Fulfilled>,
    /// Tickets abandoned under `StarvationPolicy::AbortJob`.
    pub aborted: Vec<Ticket>,
}

/// A live pair that expired; `holder` had it reserved.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ExpiredPair {
    pub pair: PairId,
    pub link: usize,
    pub holder: Option<u64>,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EntError {
    #[error("topology error: no quantum link between qpu.{0} and qpu.{1}")]
    NoLink(u32, u32),
    #[error("request rejected: deadline {deadline} already passed at {now}")]
    DeadlinePassed { deadline: SimTime, now: SimTime },
    #[error("pair request count must be >= 1")]
    ZeroCount,
    #[error("unknown {0}")]
    UnknownPair(PairId),
    #[error("transfer error: {pair} is {status:?}, not reserved")]
    Unavailable { pair: PairId, status: PairStatus },
    #[error("illegal transition of {pair}: {from:?} -> {to:?}")]
    IllegalTransition {
        pair: PairId,
        from: PairStatus,
        to: PairStatus,
    },
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct LinkStats {
    pub attempts: u64,
    pub created: u64,
    pub available: u64,
    pub reserved: u64,
    pub consumed: u64,
    pub expired: u64,
    pub requests: u64,
    pub immediate: u64,
    /// Tickets that missed their deadline or were aborted.
    pub starved: u64,
    pub first_created: Option<SimTime>,
    pub last_created: Option<SimTime>,
}

impl LinkStats {
    pub fn conserved(&self) -> bool {
        self.created == self.available + self.reserved + self.consumed + self.expired
    }

    /// Mean time between created pairs, measured from the first creation.
    pub fn mean_inter_creation(&self) -> Option<f64> {
        match (self.first_created, self.last_created) {
            (Some(a), Some(b)) if self.created > 1 => Some((b - a).as_nanos() as f64 / (self.created - 1) as f64),
            _ => None,
        }
    }
}

#[derive(Clone, Debug)]
struct Anticipation {
    requester: u64,
    start_at: SimTime,
    count: u32,
}

#[derive(Clone, Debug)]
pub struct EntanglementManager {
    links: Vec<QuantumLink>,
    policy: RefreshPolicy,
    starvation: StarvationPolicy,
    pairs: Vec<EntangledPair>,
    /// Available pairs per link ordered by (expires_at, id); freshest last.
    available: Vec<BTreeSet<(SimTime, PairId)>>,
    /// Every live pair ordered by expiry.
    live: BTreeSet<(SimTime, PairId)>,
    tickets: Vec<VecDeque<Ticket>>,
    anticipated: Vec<Vec<Anticipation>>,
    stats: Vec<LinkStats>,
    next_ticket: u64,
}

impl EntanglementManager {
    pub fn new(links: Vec<QuantumLink>, policy: RefreshPolicy, starvation: StarvationPolicy) -> Self {
        let n = links.len();
        EntanglementManager {
            links,
            policy,
            starvation,
            pairs: Vec::new(),
            available: vec![BTreeSet::new(); n],
            live: BTreeSet::new(),
            tickets: vec![VecDeque::new(); n],
            anticipated: vec![Vec::new(); n],
            stats: vec![LinkStats::default(); n],
            next_ticket: 0,
        }
    }

    pub fn links(&self) -> &[QuantumLink] {
        &self.links
    }

    pub fn policy(&self) -> RefreshPolicy {
        self.policy
    }

    pub fn pair(&self, id: PairId) -> Option<&EntangledPair> {
        self.pairs.get(id.0 as usize)
    }

    pub fn pairs(&self) -> &[EntangledPair] {
        &self.pairs
    }

    pub fn stats(&self, link: usize) -> &LinkStats {
        &self.stats[link]
    }

    pub fn all_stats(&self) -> &[LinkStats] {
        &self.stats
    }

    pub fn link_between(&self, a: u32, b: u32) -> Result<usize, EntError> {
        self.links
            .iter()
            .position(|l| l.joins(a, b))
            .ok_or(EntError::NoLink(a, b))
    }

    pub fn queued(&self, link: usize) -> impl Iterator<Item = &Ticket> {
        self.tickets[link].iter()
    }

    /// Available pairs on `link` still live at `now`.
    pub fn available_count(&self, link: usize, now: SimTime) -> usize {
        self.available[link].range((now + SimTime(1), PairId(0))..).count()
    }

    pub fn request_pairs(&mut self, req: PairRequest, now: SimTime) -> Result<RequestOutcome, EntError> {
        if req.count == 0 {
            return Err(EntError::ZeroCount);
        }
        let link = self.link_between(req.endpoints.0, req.endpoints.1)?;
        if let Some(deadline) = req.deadline {
            if deadline < now {
                return Err(EntError::DeadlinePassed { deadline, now });
            }
        }
        self.stats[link].requests += 1;
        self.anticipated[link].retain(|a| a.requester != req.requester);
        if self.tickets[link].is_empty() && self.available_count(link, now) >= req.count as usize {
            self.stats[link].immediate += 1;
            return Ok(RequestOutcome::Reserved(self.reserve_freshest(
                link,
                req.count,
                req.requester,
                now,
            )));
        }
        let id = TicketId(self.next_ticket);
        self.next_ticket += 1;
        self.tickets[link].push_back(Ticket {
            id,
            requester: req.requester,
            link,
            count: req.count,
            deadline: req.deadline,
            requested_at: now,
        });
        Ok(RequestOutcome::Queued(id))
    }

    fn reserve_freshest(&mut self, link: usize, count: u32, requester: u64, now: SimTime) -> Vec<PairId> {
        let mut out = Vec::with_capacity(count as usize);
        while out.len() < count as usize {
            let &(exp, id) = self.available[link].last().expect("count checked");
            debug_assert!(exp > now);
            self.transition(id, PairStatus::Reserved).expect("available pair");
            self.pairs[id.0 as usize].holder = Some(requester);
            out.push(id);
        }
        out
    }

    /// Whether the policy wants a generation attempt on `link` at `now`.
    pub fn needs_generation(&self, link: usize, now: SimTime) -> bool {
        let queued = !self.tickets[link].is_empty();
        let avail = self.available_count(link, now);
        match self.policy {
            RefreshPolicy::OnDemand => queued,
            RefreshPolicy::Pooled { target_pool_size } => {
                let demand: usize = self.tickets[link].iter().map(|t| t.count as usize).sum();
                avail < target_pool_size as usize + demand
            }
            RefreshPolicy::JustInTime => {
                let due: usize = self.anticipated[link]
                    .iter()
                    .filter(|a| a.start_at <= now)
                    .map(|a| a.count as usize)
                    .sum();
                queued || avail < due
            }
        }
    }

    /// Earliest future time at which anticipated demand on `link` comes due.
    pub fn next_anticipation(&self, link: usize, now: SimTime) -> Option<SimTime> {
        self.anticipated[link]
            .iter()
            .map(|a| a.start_at)
            .filter(|&t| t > now)
            .min()
    }

    /// Registers expected demand so generation starts one expected
    /// generation time per pair ahead of `need_at`.
    pub fn anticipate(&mut self, link: usize, requester: u64, need_at: SimTime, count: u32) -> SimTime {
        let lead = self.links[link].expected_generation_time();
        let lead = SimTime(lead.as_nanos().saturating_mul(count.max(1) as u64));
        let start_at = need_at.saturating_sub(lead);
        self.anticipated[link].push(Anticipation {
            requester,
            start_at,
            count,
        });
        start_at
    }

    /// One attempt on `link`. The caller decides whether an attempt happens.
    pub fn generation_attempt(&mut self, link: usize, now: SimTime, rng: &mut RngStream) -> AttemptOutcome {
        let l = self.links[link];
        self.stats[link].attempts += 1;
        let mut out = AttemptOutcome::default();
        if rng.bernoulli(l.p_gen.clamp(0.0, 1.0)).unwrap_or(false) {
            let id = PairId(self.pairs.len() as u64);
            let (a, b) = l.qpus().expect("quantum links join QPUs");
            let expires_at = now + l.pair_lifetime;
            self.pairs.push(EntangledPair {
                id,
                link,
                endpoints: (a, b),
                created_at: now,
                expires_at,
                status: PairStatus::Available,
                holder: None,
            });
            let s = &mut self.stats[link];
            s.created += 1;
            s.available += 1;
            s.first_created.get_or_insert(now);
            s.last_created = Some(now);
            if expires_at > now {
                self.available[link].insert((expires_at, id));
                self.live.insert((expires_at, id));
            } else {
                // Zero lifetime: dead on arrival.
                self.transition(id, PairStatus::Expired).expect("fresh pair");
            }
            out.created = Some(id);
            out.fulfilled = self.try_fulfill(link, now);
        } else if self.starvation == StarvationPolicy::AbortJob {
            let expected = l.expected_generation_time();
            let mut kept = VecDeque::new();
            for t in self.tickets[link].drain(..) {
                match t.deadline {
                    Some(d) if d.saturating_sub(now) < expected => out.aborted.push(t),
                    _ => kept.push_back(t),
                }
            }
            self.tickets[link] = kept;
            self.stats[link].starved += out.aborted.len() as u64;
        }
        out
    }

    /// Serves queued tickets on `link` in FIFO order while pairs suffice.
    pub fn try_fulfill(&mut self, link: usize, now: SimTime) -> Vec<Fulfilled> {
        let mut out = Vec::new();
        while let Some(head) = self.tickets[link].front() {
            if self.available_count(link, now) < head.count as usize {
                break;
            }
            let t = self.tickets[link].pop_front().expect("head exists");
            let pairs = self.reserve_freshest(link, t.count, t.requester, now);
            out.push(Fulfilled {
                ticket: t.id,
                requester: t.requester,
                pairs,
            });
        }
        out
    }

    /// Removes a ticket whose deadline has arrived; returns it if it was still queued.
    pub fn ticket_deadline(&mut self, ticket: TicketId) -> Option<Ticket> {
        for (link, q) in self.tickets.iter_mut().enumerate() {
            if let Some(pos) = q.iter().position(|t| t.id == ticket) {
                let t = q.remove(pos).expect("position valid");
                self.stats[link].starved += 1;
                return Some(t);
            }
        }
        None
    }

    /// Expires every live pair with `expires_at <= now`.
    pub fn expire_sweep(&mut self, now: SimTime) -> Vec<ExpiredPair> {
        let mut out = Vec::new();
        while let Some(&(exp, id)) = self.live.first() {
            if exp > now {
                break;
            }
            out.push(self.expire(id));
        }
        out
    }

    /// Expires every live pair with an endpoint at `qpu`.
    pub fn expire_at_qpu(&mut self, qpu: u32) -> Vec<ExpiredPair> {
        let ids: Vec<PairId> = self
            .live
            .iter()
            .map(|&(_, id)| id)
            .filter(|id| {
                let (a, b) = self.pairs[id.0 as usize].endpoints;
                a == qpu || b == qpu
            })
            .collect();
        ids.into_iter().map(|id| self.expire(id)).collect()
    }

    fn expire(&mut self, id: PairId) -> ExpiredPair {
        let holder = self.pairs[id.0 as usize].holder;
        self.transition(id, PairStatus::Expired).expect("live pair");
        let p = &self.pairs[id.0 as usize];
        ExpiredPair {
            pair: id,
            link: p.link,
            holder,
        }
    }

    /// Returns a reservation to the pool, or expires it if past its lifetime.
    pub fn release(&mut self, id: PairId, now: SimTime) -> Result<Vec<Fulfilled>, EntError> {
        let p = self.pair(id).ok_or(EntError::UnknownPair(id))?;
        let link = p.link;
        if p.expires_at <= now {
            self.transition(id, PairStatus::Expired)?;
            return Ok(Vec::new());
        }
        self.transition(id, PairStatus::Available)?;
        self.pairs[id.0 as usize].holder = None;
        Ok(self.try_fulfill(link, now))
    }

    /// Marks a reserved pair used by a teleport.
    pub fn consume(&mut self, id: PairId, now: SimTime) -> Result<(), EntError> {
        let p = self.pair(id).ok_or(EntError::UnknownPair(id))?;
        if p.status != PairStatus::Reserved {
            return Err(EntError::Unavailable {
                pair: id,
                status: p.status,
            });
        }
        if p.expires_at <= now {
            self.transition(id, PairStatus::Expired)?;
            return Err(EntError::Unavailable {
                pair: id,
                status: PairStatus::Expired,
            });
        }
        self.transition(id, PairStatus::Consumed)
    }

    /// Drops queued tickets, anticipations and reservations of `requester`.
    pub fn cancel_requester(&mut self, requester: u64, now: SimTime) -> Vec<Fulfilled> {
        for q in &mut self.tickets {
            q.retain(|t| t.requester != requester);
        }
        for a in &mut self.anticipated {
            a.retain(|x| x.requester != requester);
        }
        let held: Vec<PairId> = self
            .live
            .iter()
            .map(|&(_, id)| id)
            .filter(|id| {
                let p = &self.pairs[id.0 as usize];
                p.status == PairStatus::Reserved && p.holder == Some(requester)
            })
            .collect();
        let mut out = Vec::new();
        for id in held {
            out.extend(self.release(id, now).expect("reserved pair"));
        }
        // Releasing may unblock the head of any queue.
        for link in 0..self.links.len() {
            out.extend(self.try_fulfill(link, now));
        }
        out
    }

    fn transition(&mut self, id: PairId, to: PairStatus) -> Result<(), EntError> {
        let p = self.pairs.get_mut(id.0 as usize).ok_or(EntError::UnknownPair(id))?;
        let from = p.status;
        if !from.can_become(to) {
            return Err(EntError::IllegalTransition { pair: id, from, to });
        }
        let key = (p.expires_at, id);
        let link = p.link;
        p.status = to;
        let s = &mut self.stats[link];
        match from {
            PairStatus::Available => {
                s.available -= 1;
                self.available[link].remove(&key);
            }
            PairStatus::Reserved => s.reserved -= 1,
            _ => unreachable!("terminal states have no transitions"),
        }
        match to {
            PairStatus::Available => {
                s.available += 1;
                self.available[link].insert(key);
            }
            PairStatus::Reserved => s.reserved += 1,
            PairStatus::Consumed => {
                s.consumed += 1;
                self.live.remove(&key);
            }
            PairStatus::Expired => {
                s.expired += 1;
                self.live.remove(&key);
                p.holder = None;
            }
        }
        Ok(())
    }

    /// Checks created = available + reserved + consumed + expired per link and
    /// that the counters agree with the indexes.
    pub fn check_conservation(&self) -> Result<(), String> {
        let mut total = LinkStats::default();
        for (i, s) in self.stats.iter().enumerate() {
            if !s.conserved() {
                return Err(format!("link {i}: counters not conserved: {s:?}"));
            }
            if s.available as usize != self.available[i].len() {
                return Err(format!("link {i}: available index out of step"));
            }
            total.created += s.created;
            total.available += s.available;
            total.reserved += s.reserved;
            total.consumed += s.consumed;
            total.expired += s.expired;
        }
        if !total.conserved() || total.created != self.pairs.len() as u64 {
            return Err(format!("global counters not conserved: {total:?}"));
        }
        if (total.available + total.reserved) as usize != self.live.len() {
            return Err("live index out of step".into());
        }
        Ok(())
    }

    /// Full recount from the pair table.
    pub fn audit(&self) -> Result<(), String> {
        let mut counts: BTreeMap<(usize, u8), u64> = BTreeMap::new();
        for p in &self.pairs {
            *counts.entry((p.link, p.status as u8)).or_default() += 1;
        }
        for (i, s) in self.stats.iter().enumerate() {
            let get = |st: PairStatus| counts.get(&(i, st as u8)).copied().unwrap_or(0);
            let got = (
                get(PairStatus::Available),
                get(PairStatus::Reserved),
                get(PairStatus::Consumed),
                get(PairStatus::Expired),
            );
            if got != (s.available, s.reserved, s.consumed, s.expired) {
                return Err(format!("link {i}: recount {got:?} disagrees with {s:?}"));
            }
        }
        self.check_conservation()
    }

    /// Earliest expiry among live pairs.
    pub fn next_expiry(&self) -> Option<SimTime> {
        self.live.first().map(|(t, _)| *t)
    }

    /// QPU pairs joined by at least one live pair.
    pub fn live_edges(&self) -> BTreeSet<(u32, u32)> {
        self.stats
            .iter()
            .zip(&self.links)
            .filter(|(s, _)| s.available + s.reserved > 0)
            .filter_map(|(_, l)| l.qpus())
            .map(|(a, b)| (a.min(b), a.max(b)))
            .collect()
    }

    /// Live pair halves stored at `qpu`.
    pub fn live_at(&self, qpu: u32) -> u64 {
        self.stats
            .iter()
            .zip(&self.links)
            .filter(|(_, l)| l.a.qpu() == Some(qpu) || l.b.qpu() == Some(qpu))
            .map(|(s, _)| s.available + s.reserved)
            .sum()
    }
}

/// Busy time charged to keep live state error-corrected over an idle interval.
pub fn idle_ec_cost(duty_cycle: f64, interval: SimTime, holds_live: bool) -> SimTime {
    if !holds_live || duty_cycle <= 0.0 {
        return SimTime::ZERO;
    }
    SimTime((interval.as_nanos() as f64 * duty_cycle).round() as u64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topology::NodeId;
    use proptest::prelude::*;

    fn link(p_gen: f64, period: u64, lifetime: u64) -> QuantumLink {
        QuantumLink {
            a: NodeId::Qpu(0),
            b: NodeId::Qpu(1),
            attempt_period: SimTime(period),
            p_gen,
            pair_lifetime: SimTime(lifetime),
        }
    }

    fn req(requester: u64, count: u32) -> PairRequest {
        PairRequest {
            requester,
            endpoints: (0, 1),
            count,
            deadline: None,
        }
    }

    fn mgr(policy: RefreshPolicy) -> EntanglementManager {
        EntanglementManager::new(
            vec![link(1.0, 100, 10_000)],
            policy,
            StarvationPolicy::RetryUntilDeadline,
        )
    }

    #[test]
    fn reserve_two_of_three() {
        let mut m = mgr(RefreshPolicy::OnDemand);
        let mut rng = RngStream::new(0, "g");
        for t in 0..3 {
            m.generation_attempt(0, SimTime(t * 100), &mut rng);
        }
        let out = m.request_pairs(req(7, 2), SimTime(300)).unwrap();
        let RequestOutcome::Reserved(ids) = out else {
            panic!("{out:?}")
        };
        // Freshest first.
        assert_eq!(ids, vec![PairId(2), PairId(1)]);
        assert_eq!(m.stats(0).reserved, 2);
        assert_eq!(m.stats(0).available, 1);
        m.audit().unwrap();
    }

    #[test]
    fn empty_pool_queues_and_triggers_generation() {
        let mut m = mgr(RefreshPolicy::OnDemand);
        assert!(!m.needs_generation(0, SimTime::ZERO));
        let out = m.request_pairs(req(1, 1), SimTime::ZERO).unwrap();
        assert!(matches!(out, RequestOutcome::Queued(_)));
        assert!(m.needs_generation(0, SimTime::ZERO));
        let mut rng = RngStream::new(0, "g");
        let att = m.generation_attempt(0, SimTime(100), &mut rng);
        assert_eq!(att.fulfilled.len(), 1);
        assert_eq!(att.fulfilled[0].requester, 1);
        assert!(!m.needs_generation(0, SimTime(100)));
    }

    #[test]
    fn unlinked_request_is_topology_error() {
        let mut m = mgr(RefreshPolicy::OnDemand);
        let mut r = req(1, 1);
        r.endpoints = (0, 2);
        assert_eq!(m.request_pairs(r, SimTime::ZERO), Err(EntError::NoLink(0, 2)));
    }

    #[test]
    fn past_deadline_rejected() {
        let mut m = mgr(RefreshPolicy::OnDemand);
        let mut r = req(1, 1);
        r.deadline = Some(SimTime(4));
        assert!(matches!(
            m.request_pairs(r, SimTime(5)),
            Err(EntError::DeadlinePassed { .. })
        ));
    }

    #[test]
    fn certain_generation_every_period() {
        let mut m = mgr(RefreshPolicy::Pooled { target_pool_size: 1000 });
        let mut rng = RngStream::new(0, "g");
        for k in 0..10 {
            assert!(m.generation_attempt(0, SimTime(k * 100), &mut rng).created.is_some());
        }
        assert_eq!(m.stats(0).mean_inter_creation(), Some(100.0));
    }

    #[test]
    fn pooled_stops_at_target() {
        let mut m = mgr(RefreshPolicy::Pooled { target_pool_size: 3 });
        let mut rng = RngStream::new(0, "g");
        let mut t = SimTime::ZERO;
        for _ in 0..20 {
            if m.needs_generation(0, t) {
                m.generation_attempt(0, t, &mut rng);
            }
            assert!(m.available_count(0, t) <= 3);
            t += SimTime(100);
        }
        assert_eq!(m.available_count(0, t), 3);
        assert!(!m.needs_generation(0, t));
    }

    #[test]
    fn expiry_boundary_inclusive() {
        let mut m = mgr(RefreshPolicy::OnDemand);
        let mut rng = RngStream::new(0, "g");
        m.generation_attempt(0, SimTime(0), &mut rng);
        assert!(m.expire_sweep(SimTime(9_999)).is_empty());
        let gone = m.expire_sweep(SimTime(10_000));
        assert_eq!(gone.len(), 1);
        assert_eq!(m.pair(PairId(0)).unwrap().status, PairStatus::Expired);
        assert!(m.expire_sweep(SimTime(20_000)).is_empty());
    }

    #[test]
    fn consumed_pair_is_terminal() {
        let mut m = mgr(RefreshPolicy::OnDemand);
        let mut rng = RngStream::new(0, "g");
        m.generation_attempt(0, SimTime(0), &mut rng);
        let RequestOutcome::Reserved(ids) = m.request_pairs(req(1, 1), SimTime(10)).unwrap() else {
            panic!()
        };
        m.consume(ids[0], SimTime(20)).unwrap();
        assert!(m.expire_sweep(SimTime(50_000)).is_empty());
        assert!(matches!(
            m.consume(ids[0], SimTime(30)),
            Err(EntError::Unavailable { .. })
        ));
        m.audit().unwrap();
    }

    #[test]
    fn fifo_fulfilment() {
        let mut m = mgr(RefreshPolicy::OnDemand);
        let mut rng = RngStream::new(0, "g");
        for r in 1..=3 {
            m.request_pairs(req(r, 1), SimTime::ZERO).unwrap();
        }
        let mut order = Vec::new();
        for k in 1..=3 {
            order.extend(
                m.generation_attempt(0, SimTime(k * 100), &mut rng)
                    .fulfilled
                    .iter()
                    .map(|f| f.requester),
            );
        }
        assert_eq!(order, [1, 2, 3]);
    }

    #[test]
    fn abort_on_tight_deadline() {
        let mut m = EntanglementManager::new(
            vec![link(0.0, 100, 1000)],
            RefreshPolicy::OnDemand,
            StarvationPolicy::AbortJob,
        );
        let mut r = req(9, 1);
        r.deadline = Some(SimTime(50));
        m.request_pairs(r, SimTime::ZERO).unwrap();
        let out = m.generation_attempt(0, SimTime(10), &mut RngStream::new(0, "g"));
        assert_eq!(out.aborted.len(), 1);
        assert_eq!(m.stats(0).starved, 1);
    }

    #[test]
    fn jit_starts_ahead_of_need() {
        let mut m = EntanglementManager::new(
            vec![link(0.25, 100, 1000)],
            RefreshPolicy::JustInTime,
            StarvationPolicy::RetryUntilDeadline,
        );
        let start = m.anticipate(0, 4, SimTime(10_000), 2);
        assert_eq!(start, SimTime(10_000 - 800));
        assert!(!m.needs_generation(0, SimTime(9_000)));
        assert_eq!(m.next_anticipation(0, SimTime(9_000)), Some(start));
        assert!(m.needs_generation(0, start));
    }

    #[test]
    fn ec_cost() {
        assert_eq!(idle_ec_cost(0.1, SimTime(1000), true), SimTime(100));
        assert_eq!(idle_ec_cost(0.0, SimTime(1000), true), SimTime::ZERO);
        assert_eq!(idle_ec_cost(0.1, SimTime(1000), false), SimTime::ZERO);
    }

    #[test]
    fn geometric_inter_creation_mean() {
        let mut m = EntanglementManager::new(
            vec![link(0.25, 100, 1)],
            RefreshPolicy::Pooled { target_pool_size: 1 },
            StarvationPolicy::RetryUntilDeadline,
        );
        let mut rng = RngStream::new(11, "qlink.0");
        let mut t = SimTime::ZERO;
        while m.stats(0).created < 10_001 {
            m.generation_attempt(0, t, &mut rng);
            t += SimTime(100);
        }
        let mean = m.stats(0).mean_inter_creation().unwrap();
        // Geometric(0.25) attempts of 100 ns each: mean 100 / 0.25.
        assert!((mean - 400.0).abs() <= 0.05 * 400.0, "{mean}");
    }

    #[derive(Debug, Clone)]
    enum Op {
        Attempt,
        Request(u64, u32),
        Release,
        Consume,
        Advance(u64),
        Cancel(u64),
    }

    fn op() -> impl Strategy<Value = Op> {
        prop_oneof![
            3 => Just(Op::Attempt),
            2 => (0u64..5, 1u32..3).prop_map(|(r, c)| Op::Request(r, c)),
            1 => Just(Op::Release),
            2 => Just(Op::Consume),
            2 => (1u64..400).prop_map(Op::Advance),
            1 => (0u64..5).prop_map(Op::Cancel),
        ]
    }

    proptest! {
        #[test]
        fn conservation_and_no_stale_service(ops in proptest::collection::vec(op(), 1..300), seed in any::<u64>()) {
            let mut m = EntanglementManager::new(vec![link(0.6, 100, 700)], RefreshPolicy::OnDemand, StarvationPolicy::RetryUntilDeadline);
            let mut rng = RngStream::new(seed, "g");
            let mut t = SimTime::ZERO;
            let mut held: Vec<PairId> = Vec::new();
            let mut consumed = BTreeSet::new();
            for o in ops {
                match o {
                    Op::Attempt => {
                        for f in m.generation_attempt(0, t, &mut rng).fulfilled {
                            for p in &f.pairs { prop_assert!(m.pair(*p).unwrap().expires_at > t); }
                            held.extend(f.pairs);
                        }
                    }
                    Op::Request(r, c) => {
                        if let RequestOutcome::Reserved(ps) = m.request_pairs(PairRequest { requester: r, endpoints: (0, 1), count: c, deadline: None }, t).unwrap() {
                            for p in &ps { prop_assert!(m.pair(*p).unwrap().expires_at > t); }
                            held.extend(ps);
                        }
                    }
                    Op::Release => if let Some(p) = held.pop() {
                        if m.pair(p).unwrap().status == PairStatus::Reserved {
                            m.release(p, t).unwrap();
                        }
                    },
                    Op::Consume => if let Some(p) = held.pop() {
                        if m.consume(p, t).is_ok() {
                            prop_assert!(consumed.insert(p));
                        }
                    },
                    Op::Advance(d) => {
                        t += SimTime(d);
                        m.expire_sweep(t);
                    }
                    Op::Cancel(r) => { m.cancel_requester(r, t); }
                }
                prop_assert!(m.check_conservation().is_ok(), "{:?}", m.check_conservation());
            }
            prop_assert!(m.audit().is_ok());
        }
    }
}
