//! Text checkpoint format:
//!
//! ```text
//! ltr-lab-policy v1
//! kind mlp
//! input_dim 16
//! hidden 32
//! temperature 1
//! cutoff 5
//! params 1633
//! <one parameter per line>
//! ```
//!
//! Floats are written in shortest round-trip form, so a checkpoint reloads bit-exactly.

use std::fmt::Write as _;
use std::io::{BufRead, Write};

use super::{ModelKind, Policy, ScoringModel};
use crate::error::{Error, Result};

const MAGIC: &str = "ltr-lab-policy v1";

impl Policy {
    pub fn to_checkpoint(&self) -> String {
        let m = &self.model;
        let mut out = String::new();
        writeln!(out, "{MAGIC}").unwrap();
        writeln!(out, "kind {}", m.kind()).unwrap();
        writeln!(out, "input_dim {}", m.input_dim()).unwrap();
        writeln!(out, "hidden {}", m.hidden()).unwrap();
        writeln!(out, "temperature {}", self.temperature).unwrap();
        writeln!(out, "cutoff {}", self.cutoff).unwrap();
        writeln!(out, "params {}", m.params().len()).unwrap();
        for p in m.params() {
            writeln!(out, "{p}").unwrap();
        }
        out
    }

    pub fn write_checkpoint<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(self.to_checkpoint().as_bytes())?;
        Ok(())
    }

    pub fn read_checkpoint<R: BufRead>(reader: R) -> Result<Policy> {
        let mut lines = reader.lines();
        let mut next = |what: &str| -> Result<String> {
            lines
                .next()
                .transpose()?
                .ok_or_else(|| Error::Checkpoint(format!("unexpected end of file, expected {what}")))
        };
        if next("header")?.trim() != MAGIC {
            return Err(Error::Checkpoint(format!("missing {MAGIC:?} header")));
        }
        fn field<T: std::str::FromStr>(line: String, key: &str) -> Result<T> {
            let value = line
                .strip_prefix(key)
                .and_then(|rest| rest.strip_prefix(' '))
                .ok_or_else(|| Error::Checkpoint(format!("expected `{key} <value>`, got {line:?}")))?;
            value.trim().parse().map_err(|_| Error::Checkpoint(format!("bad value for {key}: {value:?}")))
        }
        let kind: ModelKind = field(next("kind")?, "kind")?;
        let input_dim: usize = field(next("input_dim")?, "input_dim")?;
        let hidden: usize = field(next("hidden")?, "hidden")?;
        let temperature: f64 = field(next("temperature")?, "temperature")?;
        let cutoff: usize = field(next("cutoff")?, "cutoff")?;
        let count: usize = field(next("params")?, "params")?;
        let mut params = Vec::with_capacity(count);
        for i in 0..count {
            let line = next("parameter")?;
            params.push(line.trim().parse().map_err(|_| Error::Checkpoint(format!("parameter {i}: {line:?}")))?);
        }
        if let Some(extra) = next("eof").ok().filter(|l| !l.trim().is_empty()) {
            return Err(Error::Checkpoint(format!("trailing content {extra:?}")));
        }
        let model = ScoringModel::from_params(kind, input_dim, hidden, params)?;
        Policy::new(model, temperature, cutoff)
    }

    pub fn from_checkpoint(text: &str) -> Result<Policy> {
        Self::read_checkpoint(text.as_bytes())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;

    proptest! {
        #[test]
        fn checkpoint_round_trips_exactly(seed in 0u64..1000, mlp in any::<bool>(), dim in 1usize..6, t in 0.01f64..10.0) {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let kind = if mlp { ModelKind::Mlp } else { ModelKind::Linear };
            let model = ScoringModel::init(kind, dim, 3, &mut rng).unwrap();
            let policy = Policy::new(model, t, 5).unwrap();
            let back = Policy::from_checkpoint(&policy.to_checkpoint()).unwrap();
            prop_assert_eq!(back, policy);
        }
    }

    #[test]
    fn rejects_truncated_and_foreign_files() {
        let policy = Policy::new(ScoringModel::linear(vec![1.5, -2.0]).unwrap(), 1.0, 5).unwrap();
        let text = policy.to_checkpoint();
        let truncated: String = text.lines().take(8).map(|l| format!("{l}\n")).collect();
        assert!(matches!(Policy::from_checkpoint(&truncated), Err(Error::Checkpoint(_))));
        assert!(matches!(Policy::from_checkpoint("hello\n"), Err(Error::Checkpoint(_))));
        assert!(Policy::from_checkpoint(&format!("{text}3.0\n")).is_err());
    }
}
