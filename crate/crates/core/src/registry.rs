//! Function registry: maps stable names to dispatchable task functions.
//!
//! Tasks cross the wire as a [`FunctionId`] plus argument bytes, so the
//! master and its workers must agree on the id of every function. Ids are
//! assigned sequentially from 0 in registration order; two processes that
//! register the same names in the same order (in practice: two copies of the
//! same binary) end up with identical tables. Nothing about the function body
//! is serialized.

use std::collections::HashMap;
use std::fmt;
use std::sync::Arc;

/// Id of a registered function. Dense, starting at 0, in registration order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct FunctionId(u32);

impl FunctionId {
    pub const fn new(raw: u32) -> Self {
        FunctionId(raw)
    }

    pub const fn value(self) -> u32 {
        self.0
    }
}

impl fmt::Display for FunctionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "fn-{}", self.0)
    }
}

/// A task function: opaque argument bytes in, opaque result bytes out.
/// An `Err` is a deterministic task error — it is reported to the caller
/// verbatim and the task is not retried.
pub type TaskFn = dyn Fn(&[u8]) -> Result<Vec<u8>, String> + Send + Sync;

#[derive(Debug, thiserror::Error, Clone, PartialEq, Eq)]
pub enum RegistryError {
    #[error("function name {0:?} is already registered")]
    DuplicateName(String),
    #[error("unknown function {0}")]
    UnknownFunction(FunctionId),
    #[error("unknown function name {0:?}")]
    UnknownName(String),
}

/// Registration-ordered table of task functions.
pub struct Registry {
    entries: Vec<(String, Arc<TaskFn>)>,
    by_name: HashMap<String, FunctionId>,
}

impl Registry {
    pub fn new() -> Self {
        Registry { entries: Vec::new(), by_name: HashMap::new() }
    }

    /// Registers `f` under `name`, returning the assigned id. Names must be
    /// unique; the id is simply the number of functions registered before.
    pub fn register<F>(&mut self, name: &str, f: F) -> Result<FunctionId, RegistryError>
    where
        F: Fn(&[u8]) -> Result<Vec<u8>, String> + Send + Sync + 'static,
    {
        if self.by_name.contains_key(name) {
            return Err(RegistryError::DuplicateName(name.to_string()));
        }
        let id = FunctionId(self.entries.len() as u32);
        self.entries.push((name.to_string(), Arc::new(f)));
        self.by_name.insert(name.to_string(), id);
        Ok(id)
    }

    pub fn lookup(&self, id: FunctionId) -> Result<Arc<TaskFn>, RegistryError> {
        self.entries
            .get(id.0 as usize)
            .map(|(_, f)| Arc::clone(f))
            .ok_or(RegistryError::UnknownFunction(id))
    }

    pub fn id_of(&self, name: &str) -> Result<FunctionId, RegistryError> {
        self.by_name
            .get(name)
            .copied()
            .ok_or_else(|| RegistryError::UnknownName(name.to_string()))
    }

    pub fn name_of(&self, id: FunctionId) -> Option<&str> {
        self.entries.get(id.0 as usize).map(|(n, _)| n.as_str())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

impl Default for Registry {
    fn default() -> Self {
        Self::new()
    }
}

impl fmt::Debug for Registry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Registry")
            .field("functions", &self.entries.iter().map(|(n, _)| n).collect::<Vec<_>>())
            .finish()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn echo(args: &[u8]) -> Result<Vec<u8>, String> {
        Ok(args.to_vec())
    }

    #[test]
    fn ids_are_sequential_from_zero() {
        let mut reg = Registry::new();
        let a = reg.register("a", echo).unwrap();
        let b = reg.register("b", echo).unwrap();
        let c = reg.register("c", echo).unwrap();
        assert_eq!((a.value(), b.value(), c.value()), (0, 1, 2));
    }

    #[test]
    fn duplicate_name_is_rejected() {
        let mut reg = Registry::new();
        reg.register("dup", echo).unwrap();
        assert_eq!(
            reg.register("dup", echo).unwrap_err(),
            RegistryError::DuplicateName("dup".into())
        );
        assert_eq!(reg.len(), 1);
    }

    #[test]
    fn lookup_unknown_id_fails() {
        let reg = Registry::new();
        let err = reg.lookup(FunctionId::new(7)).err().unwrap();
        assert_eq!(err, RegistryError::UnknownFunction(FunctionId::new(7)));
    }

    #[test]
    fn registered_function_roundtrips() {
        let mut reg = Registry::new();
        let id = reg.register("rev", |args| {
            let mut v = args.to_vec();
            v.reverse();
            Ok(v)
        })
        .unwrap();
        let f = reg.lookup(id).unwrap();
        assert_eq!(f(b"abc").unwrap(), b"cba");
        assert_eq!(reg.id_of("rev").unwrap(), id);
        assert_eq!(reg.name_of(id), Some("rev"));
    }

    #[test]
    fn same_registration_sequence_gives_same_ids() {
        let names = ["alpha", "beta", "gamma", "delta"];
        let mut r1 = Registry::new();
        let mut r2 = Registry::new();
        for n in names {
            r1.register(n, echo).unwrap();
            r2.register(n, echo).unwrap();
        }
        for n in names {
            assert_eq!(r1.id_of(n).unwrap(), r2.id_of(n).unwrap());
        }
    }
}
