//! Per-session event fan-out with a bounded replay history, so stream
//! consumers can resume from the last event id they saw.

use std::collections::{HashMap, VecDeque};
use std::sync::{Arc, Mutex};

use converge_sim::trace::{RecordKind, TraceRecord};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use tokio::sync::broadcast;

pub const DEFAULT_HISTORY: usize = 20_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionEvent {
    /// Strictly increasing per session, starting at 1.
    pub id: u64,
    pub session_id: String,
    /// `radio`, `detection`, `event`, `ris_profile` or `session`.
    pub event: String,
    pub data: Value,
}

pub fn event_name(kind: RecordKind) -> &'static str {
    match kind {
        RecordKind::Radio => "radio",
        RecordKind::Detection => "detection",
        RecordKind::Event => "event",
        RecordKind::RisProfile => "ris_profile",
    }
}

struct Channel {
    state: Mutex<ChannelState>,
    tx: broadcast::Sender<SessionEvent>,
}

struct ChannelState {
    next_id: u64,
    history: VecDeque<SessionEvent>,
}

pub struct Subscription {
    /// Retained events after the requested id, oldest first.
    pub backlog: Vec<SessionEvent>,
    pub live: broadcast::Receiver<SessionEvent>,
}

pub struct EventHub {
    channels: Mutex<HashMap<String, Arc<Channel>>>,
    history: usize,
}

impl Default for EventHub {
    fn default() -> Self {
        Self::new(DEFAULT_HISTORY)
    }
}

impl EventHub {
    pub fn new(history: usize) -> Self {
        Self { channels: Mutex::new(HashMap::new()), history: history.max(1) }
    }

    fn channel(&self, session_id: &str) -> Arc<Channel> {
        let mut map = self.channels.lock().unwrap();
        map.entry(session_id.to_string())
            .or_insert_with(|| {
                let (tx, _) = broadcast::channel(1024);
                Arc::new(Channel { state: Mutex::new(ChannelState { next_id: 1, history: VecDeque::new() }), tx })
            })
            .clone()
    }

    pub fn publish(&self, session_id: &str, event: &str, data: Value) -> u64 {
        let ch = self.channel(session_id);
        let mut st = ch.state.lock().unwrap();
        let ev = SessionEvent { id: st.next_id, session_id: session_id.into(), event: event.into(), data };
        st.next_id += 1;
        if st.history.len() == self.history {
            st.history.pop_front();
        }
        st.history.push_back(ev.clone());
        // Sending under the lock keeps backlog and live stream disjoint.
        let _ = ch.tx.send(ev.clone());
        ev.id
    }

    pub fn publish_record(&self, record: &TraceRecord) -> u64 {
        let data = serde_json::to_value(record).expect("records serialize");
        self.publish(&record.session_id, event_name(record.kind()), data)
    }

    pub fn subscribe(&self, session_id: &str, after: Option<u64>) -> Subscription {
        let ch = self.channel(session_id);
        let st = ch.state.lock().unwrap();
        let after = after.unwrap_or(0);
        let backlog = st.history.iter().filter(|e| e.id > after).cloned().collect();
        Subscription { backlog, live: ch.tx.subscribe() }
    }

    /// Retained events with id greater than `after`.
    pub fn since(&self, session_id: &str, after: u64) -> Vec<SessionEvent> {
        let ch = self.channel(session_id);
        let st = ch.state.lock().unwrap();
        st.history.iter().filter(|e| e.id > after).cloned().collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn resume_sees_each_event_once() {
        let hub = EventHub::new(3);
        for k in 0..5 {
            hub.publish("s", "event", json!(k));
        }
        let sub = hub.subscribe("s", Some(3));
        assert_eq!(sub.backlog.iter().map(|e| e.id).collect::<Vec<_>>(), [4, 5]);
        let mut live = sub.live;
        hub.publish("s", "event", json!(5));
        assert_eq!(live.try_recv().unwrap().id, 6);
        // History is bounded.
        assert_eq!(hub.since("s", 0).first().unwrap().id, 4);
        assert!(hub.since("other", 0).is_empty());
    }
}
