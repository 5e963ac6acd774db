use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geometry::PointCloud;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            _ => Err(Error::invalid("split", format!("unknown split `{s}`"))),
        }
    }
}

/// Independent generator for item `index` of stream family `domain`.
/// Items never share draws, so content does not depend on the order in
/// which they are produced.
pub fn stream_rng(seed: u64, domain: u32, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((domain as u64) << 40) ^ index);
    rng
}

/// Labelled clouds of one split.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub clouds: Vec<PointCloud>,
    pub class_names: Vec<String>,
    pub split: Split,
}

impl Dataset {
    pub fn new(clouds: Vec<PointCloud>, class_names: Vec<String>, split: Split) -> Result<Self> {
        let d = Dataset {
            clouds,
            class_names,
            split,
        };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        let c = self.class_names.len();
        for (i, cloud) in self.clouds.iter().enumerate() {
            match cloud.label {
                Some(l) if l < c => {}
                Some(l) => {
                    return Err(Error::invalid("dataset", format!("cloud {i} has label {l}, only {c} classes")));
                }
                None => return Err(Error::invalid("dataset", format!("cloud {i} has no label"))),
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.clouds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clouds.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.clouds.iter().map(|c| c.label.unwrap_or(0)).collect()
    }

    /// Point count shared by every cloud, if uniform.
    pub fn points_per_cloud(&self) -> Option<usize> {
        let n = self.clouds.first()?.len();
        self.clouds.iter().all(|c| c.len() == n).then_some(n)
    }
}
