//! A miniature serverless runtime with a proactive `freshen` hook.
//!
//! Functions are ordered lists of resource steps ([`function`]). A warm
//! container ([`runtime::RuntimeContext`]) keeps runtime-scoped state between
//! invocations, including the `fr_state` list through which a freshen
//! executor and the invocation coordinate ([`freshen`]). Prefetched objects
//! live in a TTL cache ([`cache`]); connections are simulated by a
//! deterministic TCP model with an emulated `warm_cwnd` ([`netsim`]).
//! [`predictor`] turns chain topology and trigger delays into freshen
//! directives, and [`harness`] runs whole scenarios and writes CSV reports.
//!
//! Everything runs on simulated time; [`sim`] is the discrete-event driver
//! that interleaves a freshen executor with an invocation.

pub mod cache;
pub mod freshen;
pub mod function;
pub mod harness;
pub mod netsim;
pub mod predictor;
pub mod runtime;
pub mod scenario;
pub mod sim;
pub mod time;
pub mod value;

pub use cache::FreshenCache;
pub use freshen::{infer_plan, FreshenMode, FreshenPlan, FrState};
pub use function::{FunctionDef, Operand, Step, StepKind};
pub use netsim::{NetConfig, NetSim, SimConnection, SimEndpoint, WarmPolicy};
pub use runtime::{InvocationRecord, RuntimeConfig, RuntimeContext};
pub use time::{SimDuration, SimTime};
pub use value::{EndpointId, ObjectKey, Value};
