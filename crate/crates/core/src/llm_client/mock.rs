//! Deterministic in-process backends for tests and offline runs.

use std::collections::VecDeque;
use std::sync::Mutex;

use super::{BackendError, ChatBackend, ChatMessage, ChatParams};

type Reply = std::result::Result<String, BackendError>;

/// Replays a fixed queue of replies, then fails fatally.
#[derive(Debug, Default)]
pub struct ScriptedBackend {
    replies: Mutex<VecDeque<Reply>>,
    calls: Mutex<Vec<Vec<ChatMessage>>>,
}

impl ScriptedBackend {
    pub fn new(replies: impl IntoIterator<Item = Reply>) -> Self {
        ScriptedBackend {
            replies: Mutex::new(replies.into_iter().collect()),
            calls: Mutex::new(Vec::new()),
        }
    }

    pub fn texts<S: Into<String>>(replies: impl IntoIterator<Item = S>) -> Self {
        Self::new(replies.into_iter().map(|s| Ok(s.into())))
    }

    pub fn calls(&self) -> Vec<Vec<ChatMessage>> {
        self.calls.lock().unwrap().clone()
    }
}

impl ChatBackend for ScriptedBackend {
    fn complete(&self, messages: &[ChatMessage], _params: &ChatParams) -> Reply {
        self.calls.lock().unwrap().push(messages.to_vec());
        self.replies
            .lock()
            .unwrap()
            .pop_front()
            .unwrap_or_else(|| Err(BackendError::Fatal("script exhausted".into())))
    }
}

/// Answers with a pure function of the request.
pub struct FnBackend<F>(pub F);

impl<F> ChatBackend for FnBackend<F>
where
    F: Fn(&[ChatMessage], &ChatParams) -> Reply + Send + Sync,
{
    fn complete(&self, messages: &[ChatMessage], params: &ChatParams) -> Reply {
        (self.0)(messages, params)
    }
}
