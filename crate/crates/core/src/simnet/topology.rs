//! Placement of keys and resources onto virtual back-end nodes.

use std::collections::HashMap;

use super::NodeId;
use crate::model::{ResourceId, TagKey};

/// Worst-case placement: every distinct key and every resource gets its own
/// back-end node, so all inter-key traffic crosses the network.
///
/// With `capacity` set, node ids wrap modulo the capacity; a capacity at
/// least as large as the number of placed objects behaves exactly like the
/// unbounded topology.
#[derive(Clone, Debug, Default)]
pub struct Topology {
    pub n_gateways: u32,
    capacity: Option<u64>,
    keys: HashMap<TagKey, u64>,
    resources: HashMap<ResourceId, u64>,
    next: u64,
}

impl Topology {
    pub fn new(n_gateways: u32) -> Self {
        Topology {
            n_gateways,
            ..Topology::default()
        }
    }

    pub fn with_capacity(n_gateways: u32, capacity: u64) -> Self {
        assert!(capacity > 0);
        Topology {
            n_gateways,
            capacity: Some(capacity),
            ..Topology::default()
        }
    }

    fn fresh(next: &mut u64, capacity: Option<u64>) -> u64 {
        let id = *next;
        *next += 1;
        match capacity {
            Some(c) => id % c,
            None => id,
        }
    }

    pub fn node_for_key(&mut self, key: &TagKey) -> NodeId {
        if let Some(&n) = self.keys.get(key) {
            return NodeId::Backend(n);
        }
        let n = Self::fresh(&mut self.next, self.capacity);
        self.keys.insert(key.clone(), n);
        NodeId::Backend(n)
    }

    pub fn node_for_resource(&mut self, r: ResourceId) -> NodeId {
        if let Some(&n) = self.resources.get(&r) {
            return NodeId::Backend(n);
        }
        let n = Self::fresh(&mut self.next, self.capacity);
        self.resources.insert(r, n);
        NodeId::Backend(n)
    }

    /// Number of distinct objects placed so far.
    pub fn placed(&self) -> u64 {
        self.next
    }
}
