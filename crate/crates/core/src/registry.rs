//! Name-keyed registries of trait-object strategies.

use std::sync::Arc;

use crate::Error;

pub struct Registry<T: ?Sized> {
    kind: &'static str,
    entries: Vec<(&'static str, fn() -> Arc<T>)>,
}

impl<T: ?Sized> Registry<T> {
    pub fn new(kind: &'static str) -> Self {
        Self {
            kind,
            entries: Vec::new(),
        }
    }

    /// Registers `ctor` under `name`, replacing any previous entry of that name.
    pub fn register(&mut self, name: &'static str, ctor: fn() -> Arc<T>) -> &mut Self {
        match self.entries.iter_mut().find(|(n, _)| *n == name) {
            Some(entry) => entry.1 = ctor,
            None => self.entries.push((name, ctor)),
        }
        self
    }

    pub fn create(&self, name: &str) -> Result<Arc<T>, Error> {
        self.entries
            .iter()
            .find(|(n, _)| *n == name)
            .map(|(_, ctor)| ctor())
            .ok_or_else(|| Error::UnknownStrategy {
                kind: self.kind,
                name: name.to_string(),
                available: self.names().join(", "),
            })
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.entries.iter().map(|(n, _)| *n).collect()
    }

    /// Instantiates every entry, in registration order.
    pub fn all(&self) -> Vec<Arc<T>> {
        self.entries.iter().map(|(_, ctor)| ctor()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    trait Named {
        fn name(&self) -> &'static str;
    }
    struct A;
    struct B;
    impl Named for A {
        fn name(&self) -> &'static str {
            "a"
        }
    }
    impl Named for B {
        fn name(&self) -> &'static str {
            "b"
        }
    }

    #[test]
    fn lookup_and_replace() {
        let mut reg: Registry<dyn Named> = Registry::new("thing");
        reg.register("x", || Arc::new(A));
        reg.register("y", || Arc::new(B));
        assert_eq!(reg.create("y").unwrap().name(), "b");
        reg.register("y", || Arc::new(A));
        assert_eq!(reg.create("y").unwrap().name(), "a");
        assert_eq!(reg.names(), vec!["x", "y"]);
        let err = reg.create("z").err().unwrap().to_string();
        assert!(err.contains("unknown thing `z`"), "{err}");
        assert!(err.contains("x, y"));
    }
}
