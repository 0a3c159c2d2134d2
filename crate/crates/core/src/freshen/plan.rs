//! Freshen plans inferred from a function body, and the freshen modes that
//! select which of their actions run.

use std::fmt;
use std::str::FromStr;

use crate::function::{FunctionDef, StepKind};
use crate::time::SimDuration;
use crate::value::{EndpointId, ObjectKey};

use super::state::{EntryKind, EntrySpec};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PlanAction {
    Prefetch { endpoint: EndpointId, object: String },
    WarmConnection { endpoint: EndpointId },
}

impl PlanAction {
    pub fn endpoint(&self) -> &EndpointId {
        match self {
            PlanAction::Prefetch { endpoint, .. } | PlanAction::WarmConnection { endpoint } => endpoint,
        }
    }

    pub fn is_prefetch(&self) -> bool {
        matches!(self, PlanAction::Prefetch { .. })
    }

    pub fn name(&self) -> &'static str {
        match self {
            PlanAction::Prefetch { .. } => "prefetch",
            PlanAction::WarmConnection { .. } => "warm",
        }
    }

    pub fn entry_kind(&self) -> EntryKind {
        match self {
            PlanAction::Prefetch { endpoint, object } => EntryKind::Fetch(ObjectKey::new(endpoint.clone(), object.clone())),
            PlanAction::WarmConnection { endpoint } => EntryKind::Warm(endpoint.clone()),
        }
    }
}

impl fmt::Display for PlanAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PlanAction::Prefetch { endpoint, object } => write!(f, "Prefetch({endpoint}, {object})"),
            PlanAction::WarmConnection { endpoint } => write!(f, "WarmConnection({endpoint})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlannedAction {
    /// Index into fr_state.
    pub entry: usize,
    /// Index of the step the action serves.
    pub step: usize,
    pub action: PlanAction,
}

/// The freshen procedure for one function, in data form.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FreshenPlan {
    pub function: String,
    pub actions: Vec<PlannedAction>,
}

impl FreshenPlan {
    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    /// Only the actions `mode` runs; entry indices are kept.
    pub fn for_mode(&self, mode: FreshenMode) -> FreshenPlan {
        FreshenPlan {
            function: self.function.clone(),
            actions: self
                .actions
                .iter()
                .filter(|a| mode.allows(&a.action))
                .cloned()
                .collect(),
        }
    }

    /// `(entry, kind)` pairs, the shape listed in plan tables.
    pub fn shape(&self) -> Vec<(usize, &'static str)> {
        self.actions.iter().map(|a| (a.entry, a.action.name())).collect()
    }
}

/// Derives the freshen plan from the function body alone. Freshenable
/// `DataGet` steps become prefetches and freshenable `DataPut` steps become
/// connection warms; entries are numbered in step order. Steps whose
/// constants cannot be resolved are left out rather than failing.
pub fn infer_plan(function: &FunctionDef) -> FreshenPlan {
    let mut actions = Vec::new();
    for (step_index, step) in function.steps.iter().enumerate() {
        if !step.freshenable() {
            continue;
        }
        let entry = actions.len();
        let action = match &step.kind {
            StepKind::DataGet { endpoint, object, .. } => match function.const_object_id(object) {
                Some(object) => PlanAction::Prefetch {
                    endpoint: endpoint.clone(),
                    object,
                },
                None => continue,
            },
            StepKind::DataPut { endpoint, .. } => PlanAction::WarmConnection {
                endpoint: endpoint.clone(),
            },
            StepKind::Compute { .. } => continue,
        };
        actions.push(PlannedAction {
            entry,
            step: step_index,
            action,
        });
    }
    FreshenPlan {
        function: function.name.clone(),
        actions,
    }
}

/// TTL for a step: the step's own, else the function's, else `default`.
pub fn effective_ttl(function: &FunctionDef, step: usize, default: SimDuration) -> SimDuration {
    function
        .steps
        .get(step)
        .and_then(|s| s.ttl)
        .or(function.ttl)
        .unwrap_or(default)
}

/// fr_state layout matching [`infer_plan`].
pub fn entry_specs(function: &FunctionDef, plan: &FreshenPlan, default_ttl: SimDuration) -> Vec<EntrySpec> {
    plan.actions
        .iter()
        .map(|a| EntrySpec {
            step: a.step,
            kind: a.action.entry_kind(),
            ttl: effective_ttl(function, a.step, default_ttl),
        })
        .collect()
}

/// Which freshen actions are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum FreshenMode {
    Disabled,
    PrefetchOnly,
    WarmOnly,
    Full,
}

impl FreshenMode {
    pub const ALL: [FreshenMode; 4] = [
        FreshenMode::Disabled,
        FreshenMode::PrefetchOnly,
        FreshenMode::WarmOnly,
        FreshenMode::Full,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            FreshenMode::Disabled => "disabled",
            FreshenMode::PrefetchOnly => "prefetch-only",
            FreshenMode::WarmOnly => "warm-only",
            FreshenMode::Full => "full",
        }
    }

    pub fn prefetch(self) -> bool {
        matches!(self, FreshenMode::PrefetchOnly | FreshenMode::Full)
    }

    pub fn warm(self) -> bool {
        matches!(self, FreshenMode::WarmOnly | FreshenMode::Full)
    }

    pub fn allows(self, action: &PlanAction) -> bool {
        if action.is_prefetch() {
            self.prefetch()
        } else {
            self.warm()
        }
    }
}

impl fmt::Display for FreshenMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FreshenMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "disabled" | "off" => Ok(FreshenMode::Disabled),
            "prefetch-only" | "prefetch" => Ok(FreshenMode::PrefetchOnly),
            "warm-only" | "warm" => Ok(FreshenMode::WarmOnly),
            "full" | "full-freshen" => Ok(FreshenMode::Full),
            other => Err(format!(
                "unknown mode `{other}` (expected disabled, prefetch-only, warm-only or full)"
            )),
        }
    }
}
