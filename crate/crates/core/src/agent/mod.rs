//! Function-calling dialogue loop and the function library behind it.

mod dialogue;
mod functions;
mod registry;

pub use dialogue::{
    dialogue_corpus, first_reply, HANDLERS, read_transcript, sample_prompt, second_reply, workflow_script, write_transcript,
    Agent, DialogueTurn, RESULT_MARKER, SLOT_TEXT,
};
pub use functions::{
    fn_decision_support, fn_feature_engineering, fn_prompt_engineering, DecisionKind, DecisionResult, FeatureTable,
    MAX_LAG,
};
pub use registry::{detect_trigger, FunctionSpec, Handler, Registry, Trigger, DEFAULT_REGISTRY};
