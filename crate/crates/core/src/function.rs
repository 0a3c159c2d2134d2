//! Step-based function representation.
//!
//! A function body is an ordered list of resource steps. Whether a step can be
//! freshened is decided purely from its operands: a step whose
//! connection-relevant operands are all runtime constants can be performed
//! without the invocation's arguments.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::time::SimDuration;
use crate::value::{EndpointId, Value};

/// Where a step argument comes from.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Operand {
    /// A declared runtime constant (credentials, resource ids).
    Const(String),
    /// The invocation arguments.
    Args,
    /// Output of an earlier step of the same invocation.
    Step(usize),
    /// A runtime-scoped variable written by an earlier invocation.
    Runtime(String),
}

impl Operand {
    pub fn constant(name: impl Into<String>) -> Self {
        Operand::Const(name.into())
    }

    pub fn is_const(&self) -> bool {
        matches!(self, Operand::Const(_))
    }
}

impl fmt::Display for Operand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Operand::Const(n) => write!(f, "const:{n}"),
            Operand::Args => f.write_str("args"),
            Operand::Step(i) => write!(f, "step:{i}"),
            Operand::Runtime(n) => write!(f, "runtime:{n}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid operand `{0}` (expected const:NAME, args, step:N or runtime:NAME)")]
pub struct OperandParseError(pub String);

impl FromStr for Operand {
    type Err = OperandParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        if s == "args" {
            return Ok(Operand::Args);
        }
        let bad = || OperandParseError(s.to_owned());
        let (tag, rest) = s.split_once(':').ok_or_else(bad)?;
        if rest.is_empty() {
            return Err(bad());
        }
        match tag {
            "const" => Ok(Operand::Const(rest.to_owned())),
            "runtime" => Ok(Operand::Runtime(rest.to_owned())),
            "step" => rest.parse().map(Operand::Step).map_err(|_| bad()),
            _ => Err(bad()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum StepKind {
    DataGet {
        endpoint: EndpointId,
        credentials: Option<Operand>,
        object: Operand,
    },
    Compute {
        duration: SimDuration,
        /// `None` means every earlier step output plus the arguments.
        inputs: Option<Vec<Operand>>,
    },
    DataPut {
        endpoint: EndpointId,
        credentials: Option<Operand>,
        object: Operand,
        payload: Operand,
        payload_bytes: u64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Step {
    pub kind: StepKind,
    /// Entry-level freshen TTL override.
    pub ttl: Option<SimDuration>,
    /// Runtime-scoped variable that receives this step's output.
    pub store_as: Option<String>,
}

impl Step {
    pub fn new(kind: StepKind) -> Self {
        Self {
            kind,
            ttl: None,
            store_as: None,
        }
    }

    /// True iff the step can run without invocation arguments: a `DataGet`
    /// needs constant credentials and object id, a `DataPut` (warm only)
    /// needs constant credentials.
    pub fn freshenable(&self) -> bool {
        let creds_const = |c: &Option<Operand>| c.as_ref().is_none_or(Operand::is_const);
        match &self.kind {
            StepKind::DataGet {
                credentials,
                object,
                ..
            } => creds_const(credentials) && object.is_const(),
            StepKind::DataPut { credentials, .. } => creds_const(credentials),
            StepKind::Compute { .. } => false,
        }
    }

    pub fn endpoint(&self) -> Option<&EndpointId> {
        match &self.kind {
            StepKind::DataGet { endpoint, .. } | StepKind::DataPut { endpoint, .. } => Some(endpoint),
            StepKind::Compute { .. } => None,
        }
    }

    fn operands(&self) -> Vec<&Operand> {
        match &self.kind {
            StepKind::DataGet {
                credentials,
                object,
                ..
            } => credentials.iter().chain(std::iter::once(object)).collect(),
            StepKind::Compute { inputs, .. } => inputs.iter().flatten().collect(),
            StepKind::DataPut {
                credentials,
                object,
                payload,
                ..
            } => credentials
                .iter()
                .chain([object, payload])
                .collect(),
        }
    }

    fn kind_name(&self) -> &'static str {
        match self.kind {
            StepKind::DataGet { .. } => "DataGet",
            StepKind::Compute { .. } => "Compute",
            StepKind::DataPut { .. } => "DataPut",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FunctionError {
    #[error("function name is empty")]
    EmptyName,
    #[error("function `{0}` has no steps")]
    NoSteps(String),
    #[error("step {step} ({kind}) references undeclared constant `{name}`")]
    UndeclaredConstant {
        step: usize,
        kind: &'static str,
        name: String,
    },
    #[error("step {step} ({kind}) references output of step {target}, which does not run before it")]
    ForwardReference {
        step: usize,
        kind: &'static str,
        target: usize,
    },
}

impl FunctionError {
    /// Index of the offending step, when there is one.
    pub fn step(&self) -> Option<usize> {
        match self {
            FunctionError::UndeclaredConstant { step, .. } | FunctionError::ForwardReference { step, .. } => {
                Some(*step)
            }
            _ => None,
        }
    }
}

/// A serverless function: runtime constants plus an ordered list of steps.
#[derive(Debug, Clone, PartialEq)]
pub struct FunctionDef {
    pub name: String,
    pub constants: BTreeMap<String, Value>,
    pub steps: Vec<Step>,
    /// Function-level freshen TTL.
    pub ttl: Option<SimDuration>,
}

impl FunctionDef {
    pub fn builder(name: impl Into<String>) -> FunctionBuilder {
        FunctionBuilder {
            def: FunctionDef {
                name: name.into(),
                constants: BTreeMap::new(),
                steps: Vec::new(),
                ttl: None,
            },
        }
    }

    pub fn validate(&self) -> Result<(), FunctionError> {
        if self.name.trim().is_empty() {
            return Err(FunctionError::EmptyName);
        }
        if self.steps.is_empty() {
            return Err(FunctionError::NoSteps(self.name.clone()));
        }
        for (i, step) in self.steps.iter().enumerate() {
            for op in step.operands() {
                match op {
                    Operand::Const(name) if !self.constants.contains_key(name) => {
                        return Err(FunctionError::UndeclaredConstant {
                            step: i,
                            kind: step.kind_name(),
                            name: name.clone(),
                        });
                    }
                    Operand::Step(target) if *target >= i => {
                        return Err(FunctionError::ForwardReference {
                            step: i,
                            kind: step.kind_name(),
                            target: *target,
                        });
                    }
                    _ => {}
                }
            }
        }
        Ok(())
    }

    /// Indices of freshenable steps, in step order.
    pub fn freshenable_steps(&self) -> impl Iterator<Item = usize> + '_ {
        self.steps
            .iter()
            .enumerate()
            .filter(|(_, s)| s.freshenable())
            .map(|(i, _)| i)
    }

    /// Value of a declared constant.
    pub fn constant(&self, name: &str) -> Option<&Value> {
        self.constants.get(name)
    }

    /// Object id named by a constant operand.
    pub fn const_object_id(&self, op: &Operand) -> Option<String> {
        match op {
            Operand::Const(name) => self.constant(name).map(object_id),
            _ => None,
        }
    }
}

/// How a value is spelled as an object id.
pub fn object_id(v: &Value) -> String {
    match v {
        Value::Text(s) => s.to_string(),
        other => other.to_string(),
    }
}

pub struct FunctionBuilder {
    def: FunctionDef,
}

impl FunctionBuilder {
    pub fn constant(mut self, name: impl Into<String>, value: impl Into<Value>) -> Self {
        self.def.constants.insert(name.into(), value.into());
        self
    }

    pub fn ttl_ms(mut self, ms: f64) -> Self {
        self.def.ttl = Some(SimDuration::from_millis(ms));
        self
    }

    pub fn step(mut self, step: Step) -> Self {
        self.def.steps.push(step);
        self
    }

    pub fn data_get(self, endpoint: &str, credentials: Option<Operand>, object: Operand) -> Self {
        self.step(Step::new(StepKind::DataGet {
            endpoint: endpoint.into(),
            credentials,
            object,
        }))
    }

    pub fn compute(self, ms: f64) -> Self {
        self.step(Step::new(StepKind::Compute {
            duration: SimDuration::from_millis(ms),
            inputs: None,
        }))
    }

    pub fn compute_over(self, ms: f64, inputs: Vec<Operand>) -> Self {
        self.step(Step::new(StepKind::Compute {
            duration: SimDuration::from_millis(ms),
            inputs: Some(inputs),
        }))
    }

    pub fn data_put(
        self,
        endpoint: &str,
        credentials: Option<Operand>,
        object: Operand,
        payload: Operand,
        payload_bytes: u64,
    ) -> Self {
        self.step(Step::new(StepKind::DataPut {
            endpoint: endpoint.into(),
            credentials,
            object,
            payload,
            payload_bytes,
        }))
    }

    /// Applies `f` to the most recently added step.
    pub fn with_last(mut self, f: impl FnOnce(&mut Step)) -> Self {
        if let Some(last) = self.def.steps.last_mut() {
            f(last);
        }
        self
    }

    pub fn build(self) -> Result<FunctionDef, FunctionError> {
        self.def.validate()?;
        Ok(self.def)
    }

    /// Returns the definition without validating it.
    pub fn build_unchecked(self) -> FunctionDef {
        self.def
    }
}

impl From<&str> for Value {
    fn from(s: &str) -> Self {
        Value::text(s)
    }
}

impl From<String> for Value {
    fn from(s: String) -> Self {
        Value::text(s)
    }
}

impl From<i64> for Value {
    fn from(i: i64) -> Self {
        Value::Int(i)
    }
}

/// The sample function: fetch `ID1` with `CREDS`, compute over the data and
/// the arguments, write the result to `ID2`, return the write acknowledgement.
pub fn sample_lambda(endpoint: &str, compute_ms: f64, put_bytes: u64) -> FunctionDef {
    FunctionDef::builder("lambda")
        .constant("CREDS", "creds-0001")
        .constant("ID1", "input-object")
        .constant("ID2", "output-object")
        .data_get(endpoint, Some(Operand::constant("CREDS")), Operand::constant("ID1"))
        .compute_over(compute_ms, vec![Operand::Step(0), Operand::Args])
        .data_put(
            endpoint,
            Some(Operand::constant("CREDS")),
            Operand::constant("ID2"),
            Operand::Step(1),
            put_bytes,
        )
        .build()
        .expect("sample function is well formed")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn operand_round_trips_through_text() {
        for s in ["const:CREDS", "args", "step:3", "runtime:model"] {
            let op: Operand = s.parse().unwrap();
            assert_eq!(op.to_string(), s);
        }
        assert!("step:x".parse::<Operand>().is_err());
        assert!("const:".parse::<Operand>().is_err());
        assert!("global:a".parse::<Operand>().is_err());
    }

    #[test]
    fn sample_lambda_has_two_freshenable_steps() {
        let f = sample_lambda("store", 5.0, 1000);
        assert_eq!(f.freshenable_steps().collect::<Vec<_>>(), vec![0, 2]);
    }

    #[test]
    fn args_dependent_get_is_not_freshenable() {
        let f = FunctionDef::builder("f")
            .constant("CREDS", "c")
            .data_get("s", Some(Operand::constant("CREDS")), Operand::Args)
            .build()
            .unwrap();
        assert!(!f.steps[0].freshenable());
    }

    #[test]
    fn put_with_args_object_is_still_warmable() {
        let f = FunctionDef::builder("f")
            .data_put("s", None, Operand::Args, Operand::Args, 10)
            .build()
            .unwrap();
        assert!(f.steps[0].freshenable());
    }

    #[test]
    fn undeclared_constant_names_the_step() {
        let err = FunctionDef::builder("f")
            .compute(1.0)
            .data_get("s", None, Operand::constant("MISSING"))
            .build()
            .unwrap_err();
        assert_eq!(err.step(), Some(1));
        assert!(err.to_string().contains("MISSING"));
    }

    #[test]
    fn forward_step_reference_is_rejected() {
        let err = FunctionDef::builder("f")
            .compute_over(1.0, vec![Operand::Step(0)])
            .build()
            .unwrap_err();
        assert!(matches!(err, FunctionError::ForwardReference { step: 0, target: 0, .. }));
    }

    #[test]
    fn empty_function_is_rejected() {
        assert!(matches!(
            FunctionDef::builder("f").build(),
            Err(FunctionError::NoSteps(_))
        ));
    }
}
