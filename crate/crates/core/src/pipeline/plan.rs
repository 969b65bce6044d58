use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which source placements to simulate and how often. Distances are in cm,
/// as in the plan file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentPlan {
    pub sources: usize,
    pub distance_configs_cm: Vec<Vec<f64>>,
    pub iterations: usize,
    pub seed: u64,
}

impl ExperimentPlan {
    /// Every ordered combination of `values_cm` over `sources` branches.
    pub fn grid(sources: usize, values_cm: &[f64], iterations: usize, seed: u64) -> Result<Self> {
        if sources == 0 || values_cm.is_empty() {
            return Err(Error::Argument(
                "a grid needs at least one source and one value".into(),
            ));
        }
        let mut configs = vec![vec![]];
        for _ in 0..sources {
            configs = configs
                .into_iter()
                .flat_map(|prefix: Vec<f64>| {
                    values_cm.iter().map(move |&v| {
                        let mut next = prefix.clone();
                        next.push(v);
                        next
                    })
                })
                .collect();
        }
        let plan = ExperimentPlan {
            sources,
            distance_configs_cm: configs,
            iterations,
            seed,
        };
        plan.validate()?;
        Ok(plan)
    }

    /// `count` configurations whose entries are drawn uniformly from
    /// `values_cm`, deterministically from `seed`.
    pub fn random(
        sources: usize,
        count: usize,
        values_cm: &[f64],
        iterations: usize,
        seed: u64,
    ) -> Result<Self> {
        if values_cm.is_empty() {
            return Err(Error::Argument("no candidate distances".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let configs = (0..count)
            .map(|_| {
                (0..sources)
                    .map(|_| values_cm[rng.gen_range(0..values_cm.len())])
                    .collect()
            })
            .collect();
        let plan = ExperimentPlan {
            sources,
            distance_configs_cm: configs,
            iterations,
            seed,
        };
        plan.validate()?;
        Ok(plan)
    }

    pub fn validate(&self) -> Result<()> {
        if self.sources == 0 {
            return Err(Error::Config("plan needs at least one source".into()));
        }
        if self.distance_configs_cm.is_empty() {
            return Err(Error::Config(
                "plan lists no distance configurations".into(),
            ));
        }
        if self.iterations == 0 {
            return Err(Error::Config(
                "plan needs at least one iteration per configuration".into(),
            ));
        }
        for (i, c) in self.distance_configs_cm.iter().enumerate() {
            if c.len() != self.sources {
                return Err(Error::Config(format!(
                    "configuration {i} has {} distances for {} sources",
                    c.len(),
                    self.sources
                )));
            }
            if let Some(d) = c.iter().find(|d| !(**d > 0.0 && d.is_finite())) {
                return Err(Error::Config(format!(
                    "configuration {i} has non-positive distance {d}"
                )));
            }
        }
        Ok(())
    }

    pub fn distances_m(&self, config: usize) -> Vec<f64> {
        self.distance_configs_cm[config]
            .iter()
            .map(|cm| cm / 100.0)
            .collect()
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let plan: ExperimentPlan = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
        plan.validate()?;
        Ok(plan)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::json(path, e))?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}
