//! Name-keyed registry of interchangeable strategies.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use thiserror::Error;

/// A strategy that can be looked up by name.
pub trait Named {
    fn name(&self) -> &'static str;
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("unknown {kind} `{name}` (available: {available})")]
pub struct UnknownStrategy {
    pub kind: &'static str,
    pub name: String,
    pub available: String,
}

pub struct Registry<T: ?Sized> {
    kind: &'static str,
    entries: BTreeMap<&'static str, Arc<T>>,
}

impl<T: ?Sized + Named> Registry<T> {
    pub fn new(kind: &'static str) -> Self {
        Self {
            kind,
            entries: BTreeMap::new(),
        }
    }

    /// Registers `strategy` under its own name, replacing any previous entry.
    pub fn register(&mut self, strategy: Arc<T>) -> &mut Self {
        self.entries.insert(strategy.name(), strategy);
        self
    }

    pub fn get(&self, name: &str) -> Result<Arc<T>, UnknownStrategy> {
        self.entries.get(name).cloned().ok_or_else(|| UnknownStrategy {
            kind: self.kind,
            name: name.to_string(),
            available: self.names().collect::<Vec<_>>().join(", "),
        })
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &'static str> + '_ {
        self.entries.keys().copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Arc<T>> {
        self.entries.values()
    }
}

impl<T: ?Sized> Clone for Registry<T> {
    fn clone(&self) -> Self {
        Self {
            kind: self.kind,
            entries: self.entries.clone(),
        }
    }
}

impl<T: ?Sized> fmt::Debug for Registry<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Registry")
            .field("kind", &self.kind)
            .field("entries", &self.entries.keys().collect::<Vec<_>>())
            .finish()
    }
}
