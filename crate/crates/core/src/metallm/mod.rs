//! Proposal of symbolic algorithms by a chat model: prompt, wire client,
//! response parsing and the propose/evaluate loop.

mod client;
mod prompt;
mod propose;

pub use client::{ChatModel, HttpChatModel, LlmEndpoint, Message, MockModel, Role};
pub use prompt::{build_prompt, fitness_message, invalid_code_message, parse_response, ProposalKind, ProposalRecord};
pub use propose::{
    check_drift_validity, propose_loop, select_best_record, Conversation, LoopConfig, LoopOutcome, IDENTITY_TOL,
    NEGATIVITY_TOL,
};
