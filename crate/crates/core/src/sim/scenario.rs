use serde::{Deserialize, Serialize};

use crate::codec::Doc;
use crate::membership::MAIN_CHANNEL;

use super::SimError;

fn main_channel() -> String {
    MAIN_CHANNEL.to_string()
}

fn empty_args() -> Doc {
    Doc::map()
}

/// A named script of timed actions. Actions run in `at` order; ties keep
/// script order.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    pub actions: Vec<Action>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Action {
    /// Virtual time in ms.
    pub at: u64,
    #[serde(flatten)]
    pub kind: ActionKind,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ActionKind {
    /// A contract transaction signed by `actor`.
    Submit {
        actor: String,
        op: String,
        #[serde(default = "main_channel")]
        channel: String,
        #[serde(default = "empty_args")]
        args: Doc,
    },
    /// A new channel, such as a private deal channel.
    CreateChannel { name: String, members: Vec<String> },
    TraceForward { origin: String },
    TraceBack { batch_id: String },
    /// A forward trace from `origin` followed by `mark_recalled` over
    /// `batch_ids` (all affected batches when absent).
    Recall {
        actor: String,
        origin: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        batch_ids: Option<Vec<String>>,
    },
}

impl Action {
    pub fn submit(at: u64, actor: &str, op: &str, args: Doc) -> Action {
        Action {
            at,
            kind: ActionKind::Submit { actor: actor.into(), op: op.into(), channel: main_channel(), args },
        }
    }
}

impl Scenario {
    pub fn new(name: &str, actions: Vec<Action>) -> Self {
        Scenario { name: name.to_string(), actions }
    }

    pub fn from_json(text: &str) -> Result<Self, SimError> {
        serde_json::from_str(text).map_err(|e| SimError::Config(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenarios serialize")
    }

    /// Number of `register_batch` and `process_batch` submissions, each of
    /// which mints one batch.
    pub fn batch_count(&self) -> usize {
        self.actions
            .iter()
            .filter(|a| matches!(&a.kind, ActionKind::Submit { op, .. } if op == "register_batch" || op == "process_batch"))
            .count()
    }
}
