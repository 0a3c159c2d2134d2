//! The freshen engine: fr_state, plan inference, and the executor/wrapper
//! coordination.

mod coordinator;
mod plan;
mod state;

pub use coordinator::{
    ActionError, ActionExecutor, ActionOutcome, ActionRecord, Branch, Coordinator, FailureReason, FreshenReport,
};
pub use plan::{effective_ttl, entry_specs, infer_plan, FreshenMode, FreshenPlan, PlanAction, PlannedAction};
pub use state::{
    check_transitions, Access, Actor, ClaimToken, ConsumePolicy, EntryKind, EntrySpec, EntryState, FrState,
    FreshenEntry, StaleClaim, Transition, WaitOutcome,
};
