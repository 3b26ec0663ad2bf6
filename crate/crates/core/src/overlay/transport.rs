//! Simulated best-effort datagram transport.

use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{MessageKind, OverlayMessage, PeerId};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LatencyModel {
    Constant(u64),
    /// Inclusive bounds, virtual milliseconds.
    Uniform { min: u64, max: u64 },
}

impl Default for LatencyModel {
    fn default() -> Self {
        LatencyModel::Uniform { min: 5, max: 50 }
    }
}

/// Scripted loss: drops every message matching all given fields.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct DropRule {
    pub src: Option<PeerId>,
    pub dst: Option<PeerId>,
    pub kind: Option<MessageKind>,
}

/// Scripted latency for matching messages, overriding the model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LatencyRule {
    pub src: Option<PeerId>,
    pub dst: Option<PeerId>,
    pub kind: Option<MessageKind>,
    pub latency: u64,
}

fn matches(src: Option<PeerId>, dst: Option<PeerId>, kind: Option<MessageKind>, m: &OverlayMessage) -> bool {
    src.is_none_or(|s| s == m.src) && dst.is_none_or(|d| d == m.dst) && kind.is_none_or(|k| k == m.kind())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Delivery {
    At(u64),
    Dropped,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransportModel {
    pub latency: LatencyModel,
    /// Loss probability in `[0, 1]`.
    pub loss: f64,
    pub seed: u64,
    pub drop_rules: Vec<DropRule>,
    pub latency_rules: Vec<LatencyRule>,
}

impl TransportModel {
    pub fn new(latency: LatencyModel, loss: f64, seed: u64) -> Self {
        TransportModel { latency, loss, seed, drop_rules: Vec::new(), latency_rules: Vec::new() }
    }

    /// Decide the fate of `msg`. Draws come from a generator keyed by the
    /// seed and the message identity, so they do not depend on the order in
    /// which messages are sent. `nonce` separates repeated sends of the same
    /// (src, dst, uqi, kind).
    pub fn send(&self, msg: &OverlayMessage, nonce: u64) -> Delivery {
        if self.drop_rules.iter().any(|r| matches(r.src, r.dst, r.kind, msg)) {
            return Delivery::Dropped;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.message_key(msg, nonce));
        let lost = rng.gen::<f64>() < self.loss;
        let latency = match self.latency {
            LatencyModel::Constant(l) => l,
            LatencyModel::Uniform { min, max } => rng.gen_range(min..=max.max(min)),
        };
        if lost {
            return Delivery::Dropped;
        }
        let latency = self
            .latency_rules
            .iter()
            .find(|r| matches(r.src, r.dst, r.kind, msg))
            .map_or(latency, |r| r.latency);
        Delivery::At(msg.send_time + latency)
    }

    fn message_key(&self, msg: &OverlayMessage, nonce: u64) -> u64 {
        let uqi = msg.uqi().0;
        let mut h = splitmix(self.seed);
        for word in [
            msg.src.0 as u64,
            (msg.src.0 >> 64) as u64,
            msg.dst.0 as u64,
            (msg.dst.0 >> 64) as u64,
            uqi as u64,
            (uqi >> 64) as u64,
            msg.kind() as u64,
            nonce,
        ] {
            h = splitmix(h ^ word);
        }
        h
    }
}

fn splitmix(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::merge::Partial;
    use crate::overlay::{MessageBody, ResultPayload};
    use crate::query_state::Uqi;
    use crate::storage::Recordset;
    use alloc::vec;

    fn msg(send_time: u64) -> OverlayMessage {
        OverlayMessage {
            src: PeerId(1),
            dst: PeerId(2),
            send_time,
            body: MessageBody::ResultReturn {
                uqi: Uqi(9),
                payload: ResultPayload { data: Partial::Rows(Recordset::empty(vec![])), contributors: vec![] },
                origin: PeerId(1),
            },
        }
    }

    #[test]
    fn lossless_always_delivers_within_bounds() {
        let t = TransportModel::new(LatencyModel::default(), 0.0, 1);
        for n in 0..500 {
            match t.send(&msg(100), n) {
                Delivery::At(at) => assert!((105..=150).contains(&at)),
                Delivery::Dropped => panic!("dropped"),
            }
        }
    }

    #[test]
    fn total_loss_always_drops() {
        let t = TransportModel::new(LatencyModel::default(), 1.0, 1);
        assert!((0..500).all(|n| t.send(&msg(0), n) == Delivery::Dropped));
    }

    #[test]
    fn seeded_drop_pattern_is_reproducible() {
        let a = TransportModel::new(LatencyModel::default(), 0.5, 42);
        let b = a.clone();
        let pa: Vec<_> = (0..1000).map(|n| a.send(&msg(0), n)).collect();
        let pb: Vec<_> = (0..1000).map(|n| b.send(&msg(0), n)).collect();
        assert_eq!(pa, pb);
        let dropped = pa.iter().filter(|d| **d == Delivery::Dropped).count();
        assert!((400..600).contains(&dropped), "{dropped}");
        let c = TransportModel::new(LatencyModel::default(), 0.5, 43);
        let pc: Vec<_> = (0..1000).map(|n| c.send(&msg(0), n)).collect();
        assert_ne!(pa, pc);
    }

    #[test]
    fn scripted_rules() {
        let mut t = TransportModel::new(LatencyModel::Constant(10), 0.0, 0);
        t.latency_rules.push(LatencyRule { src: None, dst: Some(PeerId(2)), kind: None, latency: 999 });
        assert_eq!(t.send(&msg(1), 0), Delivery::At(1000));
        t.drop_rules.push(DropRule { src: Some(PeerId(1)), dst: None, kind: Some(MessageKind::Result) });
        assert_eq!(t.send(&msg(1), 0), Delivery::Dropped);
    }
}
