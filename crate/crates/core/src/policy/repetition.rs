use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// Named ways of building a repetition set.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum RepetitionVariant {
    /// `{1, 2, ..., k}` (`figar-k`).
    Range(usize),
    /// `count` distinct values drawn without replacement from `{1..=pool}`
    /// (`figar-30-50`, `figar-20-30`).
    Sampled { count: usize, pool: usize },
    /// Primes below 50 (`figar-p`).
    Primes,
    /// `{c}`: the fixed-repetition baseline.
    Singleton(usize),
    Explicit(Vec<usize>),
}

impl RepetitionVariant {
    /// Parses `figar-<k>`, `figar-30-50`, `figar-20-30`, `figar-p`,
    /// `singleton-<c>` or a comma separated list such as `1,2,4`.
    pub fn parse(name: &str) -> Result<Self> {
        let name = name.trim();
        let lower = name.to_ascii_lowercase();
        if lower == "figar-p" {
            return Ok(Self::Primes);
        }
        if let Some(rest) = lower.strip_prefix("singleton-") {
            return parse_count(rest, name).map(Self::Singleton);
        }
        if let Some(rest) = lower.strip_prefix("figar-") {
            return match rest.split_once('-') {
                Some((count, pool)) => Ok(Self::Sampled {
                    count: parse_count(count, name)?,
                    pool: parse_count(pool, name)?,
                }),
                None => parse_count(rest, name).map(Self::Range),
            };
        }
        let values = lower
            .trim_matches(|c| c == '[' || c == ']' || c == '{' || c == '}')
            .split(',')
            .map(|v| parse_count(v.trim(), name))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self::Explicit(values))
    }

    pub fn label(&self) -> String {
        match self {
            Self::Range(k) => format!("figar-{k}"),
            Self::Sampled { count, pool } => format!("figar-{count}-{pool}"),
            Self::Primes => "figar-p".into(),
            Self::Singleton(c) => format!("singleton-{c}"),
            Self::Explicit(v) => v.iter().map(usize::to_string).collect::<Vec<_>>().join(","),
        }
    }
}

fn parse_count(text: &str, whole: &str) -> Result<usize> {
    text.parse::<usize>()
        .map_err(|_| Error::Config(format!("unrecognized repetition set `{whole}`")))
}

/// Ordered set of allowed repetition counts.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct RepetitionSet {
    values: Vec<usize>,
    name: String,
}

impl RepetitionSet {
    /// Builds a set from explicit values, sorting them. Duplicates and zeros are rejected.
    pub fn new(name: impl Into<String>, mut values: Vec<usize>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Config("repetition set is empty".into()));
        }
        if values.contains(&0) {
            return Err(Error::Config("repetition counts must be positive".into()));
        }
        values.sort_unstable();
        if values.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Config("repetition set has duplicate values".into()));
        }
        Ok(Self {
            values,
            name: name.into(),
        })
    }

    pub fn singleton(c: usize) -> Result<Self> {
        Self::new(format!("singleton-{c}"), vec![c])
    }

    pub fn values(&self) -> &[usize] {
        &self.values
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn max(&self) -> usize {
        *self.values.last().unwrap()
    }

    pub fn get(&self, index: usize) -> Option<usize> {
        self.values.get(index).copied()
    }

    pub fn index_of(&self, x: usize) -> Option<usize> {
        self.values.binary_search(&x).ok()
    }

    pub fn contains(&self, x: usize) -> bool {
        self.index_of(x).is_some()
    }
}

/// Materializes a variant. Sampled variants draw from a stream derived from `master_seed`.
pub fn make_repetition_set(variant: &RepetitionVariant, master_seed: u64) -> Result<RepetitionSet> {
    let label = variant.label();
    match variant {
        RepetitionVariant::Range(k) => RepetitionSet::new(label, (1..=*k).collect()),
        RepetitionVariant::Sampled { count, pool } => {
            if count > pool || *count == 0 {
                return Err(Error::Config(format!("cannot draw {count} values from 1..={pool}")));
            }
            let mut rng = rng::stream(master_seed, "repetition-set", 0);
            let values = sample(&mut rng, *pool, *count).into_iter().map(|i| i + 1).collect();
            RepetitionSet::new(label, values)
        }
        RepetitionVariant::Primes => RepetitionSet::new(label, primes_below(50)),
        RepetitionVariant::Singleton(c) => RepetitionSet::new(label, vec![*c]),
        RepetitionVariant::Explicit(values) => {
            let mut sorted = values.clone();
            sorted.sort_unstable();
            sorted.dedup();
            if sorted.len() != values.len() {
                return Err(Error::Config("repetition set has duplicate values".into()));
            }
            RepetitionSet::new(label, values.clone())
        }
    }
}

fn primes_below(n: usize) -> Vec<usize> {
    (2..n).filter(|&k| (2..k).take_while(|d| d * d <= k).all(|d| k % d != 0)).collect()
}
