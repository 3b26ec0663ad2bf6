//! One-hop structured overlay: every peer holds the full sorted ring.

mod message;
mod transport;

use alloc::vec::Vec;
use core::fmt;

pub use message::{MessageBody, MessageKind, OverlayMessage, ResultPayload};
pub use transport::{Delivery, DropRule, LatencyModel, LatencyRule, TransportModel};

/// 128-bit ring key of a peer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PeerId(pub u128);

impl PeerId {
    /// Reserved key stored as `sender_key` on the initiator. Never a member.
    pub const INITIATOR_SENTINEL: PeerId = PeerId(0);

    pub fn is_sentinel(self) -> bool {
        self == Self::INITIATOR_SENTINEL
    }
}

impl fmt::Display for PeerId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:032x}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum OverlayError {
    #[error("peer {0} is already a member")]
    AlreadyMember(PeerId),
    #[error("peer {0} is not a member")]
    NotMember(PeerId),
    #[error("the all-zero key is reserved")]
    ReservedId,
    #[error("ring is empty")]
    EmptyRing,
}

/// Sorted ring of live peers; the full view every peer holds.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Membership {
    ring: Vec<PeerId>,
}

impl Membership {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn join(&mut self, peer: PeerId) -> Result<(), OverlayError> {
        if peer.is_sentinel() {
            return Err(OverlayError::ReservedId);
        }
        match self.ring.binary_search(&peer) {
            Ok(_) => Err(OverlayError::AlreadyMember(peer)),
            Err(pos) => {
                self.ring.insert(pos, peer);
                Ok(())
            }
        }
    }

    pub fn leave(&mut self, peer: PeerId) -> Result<(), OverlayError> {
        match self.ring.binary_search(&peer) {
            Ok(pos) => {
                self.ring.remove(pos);
                Ok(())
            }
            Err(_) => Err(OverlayError::NotMember(peer)),
        }
    }

    pub fn contains(&self, peer: PeerId) -> bool {
        self.ring.binary_search(&peer).is_ok()
    }

    pub fn len(&self) -> usize {
        self.ring.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ring.is_empty()
    }

    pub fn peers(&self) -> &[PeerId] {
        &self.ring
    }

    /// Successor of `key`: the first member at or after it, wrapping.
    pub fn route(&self, key: u128) -> Result<PeerId, OverlayError> {
        if self.ring.is_empty() {
            return Err(OverlayError::EmptyRing);
        }
        let pos = self.ring.partition_point(|p| p.0 < key);
        Ok(self.ring[pos % self.ring.len()])
    }

    /// Fixed forwarding set of `me`: up to `fanout` distinct peers at ring
    /// offsets `b^0, b^1, .., b^(k-1)` where `b = ceil(N^(1/k))`, topped up
    /// with offsets `ceil(N/k) * j` and then consecutive successors when the
    /// powers collide modulo `N`. Offset 1 (the successor) is always present,
    /// so the union of all sets connects the ring; broadcast depth stays
    /// around `k * N^(1/k)`.
    pub fn broadcast_children(&self, me: PeerId, fanout: usize) -> Vec<PeerId> {
        let n = self.ring.len();
        let Ok(at) = self.ring.binary_search(&me) else {
            return Vec::new();
        };
        if n <= 1 || fanout == 0 {
            return Vec::new();
        }
        let want = fanout.min(n - 1);
        let base = kth_root_ceil(n, fanout).max(2);
        let stride = n.div_ceil(fanout);
        let powers = (0..fanout as u32).map(|j| pow_mod(base, j, n));
        let boundaries = (1..=fanout).map(|j| (stride * j) % n);
        let successors = 2..n;
        let mut offsets: Vec<usize> = Vec::with_capacity(want);
        for off in powers.chain(boundaries).chain(successors) {
            if offsets.len() == want {
                break;
            }
            if off != 0 && !offsets.contains(&off) {
                offsets.push(off);
            }
        }
        offsets.into_iter().map(|off| self.ring[(at + off) % n]).collect()
    }
}

/// Smallest `b >= 1` with `b^k >= n`.
fn kth_root_ceil(n: usize, k: usize) -> usize {
    let mut b = 1usize;
    while (b as u128).saturating_pow(k as u32) < n as u128 {
        b += 1;
    }
    b
}

fn pow_mod(base: usize, exp: u32, n: usize) -> usize {
    let mut acc: u128 = 1;
    for _ in 0..exp {
        acc = (acc * base as u128) % n as u128;
    }
    acc as usize
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::collections::{BTreeSet, VecDeque};

    fn ring(ids: &[u128]) -> Membership {
        let mut m = Membership::new();
        for &i in ids {
            m.join(PeerId(i)).unwrap();
        }
        m
    }

    #[test]
    fn join_examples() {
        let mut m = Membership::new();
        m.join(PeerId(5)).unwrap();
        assert_eq!(m.len(), 1);
        assert_eq!(m.join(PeerId(5)), Err(OverlayError::AlreadyMember(PeerId(5))));
        assert_eq!(m.join(PeerId(0)), Err(OverlayError::ReservedId));
        let m = ring(&[80, 10, 70, 20, 60, 30, 50, 40]);
        let ids: Vec<u128> = m.peers().iter().map(|p| p.0).collect();
        assert_eq!(ids, [10, 20, 30, 40, 50, 60, 70, 80]);
    }

    #[test]
    fn route_examples() {
        let m = ring(&[10, 20, 30]);
        assert_eq!(m.route(15), Ok(PeerId(20)));
        assert_eq!(m.route(20), Ok(PeerId(20)));
        assert_eq!(m.route(31), Ok(PeerId(10)));
        assert_eq!(m.route(0), Ok(PeerId(10)));
        assert_eq!(Membership::new().route(1), Err(OverlayError::EmptyRing));
    }

    #[test]
    fn children_examples() {
        assert!(ring(&[1]).broadcast_children(PeerId(1), 3).is_empty());
        let m = ring(&[1, 2, 3, 4, 5, 6, 7, 8]);
        for &me in m.peers() {
            let c = m.broadcast_children(me, 3);
            assert_eq!(c.len(), 3);
            assert!(!c.contains(&me));
            assert_eq!(c.iter().collect::<BTreeSet<_>>().len(), 3);
        }
        // offsets 1, 2, 4 on an 8-ring
        assert_eq!(m.broadcast_children(PeerId(7), 3), [PeerId(8), PeerId(1), PeerId(3)]);
        assert_eq!(ring(&[1, 2]).broadcast_children(PeerId(1), 3), [PeerId(2)]);
    }

    #[test]
    fn children_fill_up_when_powers_collide() {
        // N = 9, k = 3: b = 3, powers 1, 3, 0 -> top up from boundaries
        let m = ring(&(1..=9).collect::<Vec<_>>());
        let c = m.broadcast_children(PeerId(1), 3);
        assert_eq!(c.len(), 3);
    }

    /// Hop distance from peer 0 to everyone when every peer forwards to its
    /// children.
    fn max_depth(n: usize, k: usize) -> usize {
        let m = ring(&(1..=n as u128).collect::<Vec<_>>());
        let mut depth = alloc::vec![usize::MAX; n];
        depth[0] = 0;
        let mut q = VecDeque::from([0usize]);
        while let Some(i) = q.pop_front() {
            for c in m.broadcast_children(m.peers()[i], k) {
                let j = (c.0 - 1) as usize;
                if depth[j] == usize::MAX {
                    depth[j] = depth[i] + 1;
                    q.push_back(j);
                }
            }
        }
        assert!(depth.iter().all(|d| *d != usize::MAX), "ring not connected");
        depth.into_iter().max().unwrap()
    }

    #[test]
    fn flooding_reaches_everyone_quickly() {
        assert!(max_depth(8, 3) <= 3);
        assert!(max_depth(64, 3) <= 9);
        assert!(max_depth(1024, 3) <= 30);
        assert_eq!(max_depth(5, 1), 4);
    }
}
