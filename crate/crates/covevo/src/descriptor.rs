//! The evolvable genome: a list-based description of an MLP.
//!
//! Five aligned per-layer lists describe the hidden stack: width,
//! activation, weight initializer, and dropout / batch-norm flags. Depth is
//! the shared list length, so it cannot disagree with the lists. Weights are
//! not part of the genome; they are drawn fresh whenever a descriptor is
//! materialized into a network.
//!
//! Text form, one descriptor per line, used in CSV output and logs:
//!
//! ```text
//! widths=3,5;act=relu,tanh;init=xavier,normal;drop=0,1;bn=1,0
//! ```

use crate::activation::{Activation, ACTIVATIONS};
use crate::error::{Error, Result};
use crate::init::{Initializer, INITIALIZERS};
use rand::Rng;
use std::fmt;
use std::str::FromStr;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct NetworkDescriptor {
    pub hidden_widths: Vec<usize>,
    pub activations: Vec<Activation>,
    pub initializers: Vec<Initializer>,
    pub dropout_flags: Vec<bool>,
    pub batchnorm_flags: Vec<bool>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SearchConstraints {
    pub max_depth: usize,
    pub max_width: usize,
}

impl SearchConstraints {
    pub fn new(max_depth: usize, max_width: usize) -> Self {
        assert!(max_depth >= 1 && max_width >= 1);
        SearchConstraints {
            max_depth,
            max_width,
        }
    }
}

impl NetworkDescriptor {
    /// Number of hidden layers.
    pub fn depth(&self) -> usize {
        self.hidden_widths.len()
    }

    /// Total hidden-neuron count N (the output unit is not a hidden neuron).
    pub fn hidden_neuron_count(&self) -> usize {
        self.hidden_widths.iter().sum()
    }

    /// Every violated invariant, in layer order; empty iff valid.
    pub fn validate(&self, constraints: &SearchConstraints) -> Vec<String> {
        let mut violations = Vec::new();
        let depth = self.hidden_widths.len();
        let lens = [
            self.activations.len(),
            self.initializers.len(),
            self.dropout_flags.len(),
            self.batchnorm_flags.len(),
        ];
        if lens.iter().any(|&l| l != depth) {
            violations.push(format!(
                "list length mismatch: widths={depth}, act={}, init={}, drop={}, bn={}",
                lens[0], lens[1], lens[2], lens[3]
            ));
            // Per-layer checks below assume aligned lists.
            return violations;
        }
        if depth == 0 {
            violations.push("depth 0: at least one hidden layer required".into());
        }
        if depth > constraints.max_depth {
            violations.push(format!(
                "depth {depth} exceeds max depth {}",
                constraints.max_depth
            ));
        }
        for (j, &w) in self.hidden_widths.iter().enumerate() {
            if w == 0 {
                violations.push(format!("layer {j}: width 0"));
            } else if w > constraints.max_width {
                violations.push(format!(
                    "layer {j}: width {w} exceeds max width {}",
                    constraints.max_width
                ));
            }
        }
        violations
    }

    /// validate() as a Result, for call sites that cannot proceed.
    pub fn check(&self, constraints: &SearchConstraints) -> Result<()> {
        let violations = self.validate(constraints);
        if violations.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidDescriptor(violations.join("; ")))
        }
    }
}

/// Draws a uniformly random valid descriptor: depth uniform in
/// [1, max_depth], each width uniform in [1, max_width], activation and
/// initializer ids uniform over their tables, each flag a fair coin.
/// Draw order is fixed (depth, then width/act/init/drop/bn per layer) so a
/// given RNG state always yields the same genome.
pub fn random_descriptor(
    constraints: &SearchConstraints,
    rng: &mut impl Rng,
) -> NetworkDescriptor {
    let depth = rng.random_range(1..=constraints.max_depth);
    let mut d = NetworkDescriptor {
        hidden_widths: Vec::with_capacity(depth),
        activations: Vec::with_capacity(depth),
        initializers: Vec::with_capacity(depth),
        dropout_flags: Vec::with_capacity(depth),
        batchnorm_flags: Vec::with_capacity(depth),
    };
    for _ in 0..depth {
        let (w, a, i, dr, bn) = random_layer(constraints, rng);
        d.hidden_widths.push(w);
        d.activations.push(a);
        d.initializers.push(i);
        d.dropout_flags.push(dr);
        d.batchnorm_flags.push(bn);
    }
    d
}

/// One fresh random layer tuple (width, activation, initializer, dropout,
/// batch-norm); shared by generation and by the layer-level mutations.
pub(crate) fn random_layer(
    constraints: &SearchConstraints,
    rng: &mut impl Rng,
) -> (usize, Activation, Initializer, bool, bool) {
    let w = rng.random_range(1..=constraints.max_width);
    let a = ACTIVATIONS[rng.random_range(0..ACTIVATIONS.len())];
    let i = INITIALIZERS[rng.random_range(0..INITIALIZERS.len())];
    let dr = rng.random_bool(0.5);
    let bn = rng.random_bool(0.5);
    (w, a, i, dr, bn)
}

impl fmt::Display for NetworkDescriptor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let join = |it: Vec<String>| it.join(",");
        write!(
            f,
            "widths={};act={};init={};drop={};bn={}",
            join(self.hidden_widths.iter().map(|w| w.to_string()).collect()),
            join(self.activations.iter().map(|a| a.name().into()).collect()),
            join(self.initializers.iter().map(|i| i.name().into()).collect()),
            join(self
                .dropout_flags
                .iter()
                .map(|&b| if b { "1".into() } else { "0".into() })
                .collect()),
            join(self
                .batchnorm_flags
                .iter()
                .map(|&b| if b { "1".into() } else { "0".into() })
                .collect()),
        )
    }
}

impl FromStr for NetworkDescriptor {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut widths = None;
        let mut acts = None;
        let mut inits = None;
        let mut drops = None;
        let mut bns = None;
        for field in s.trim().split(';') {
            let (key, value) = field
                .split_once('=')
                .ok_or_else(|| Error::Parse(format!("descriptor field '{field}' lacks '='")))?;
            let items: Vec<&str> = value.split(',').collect();
            match key {
                "widths" => {
                    widths = Some(
                        items
                            .iter()
                            .map(|v| {
                                v.parse::<usize>()
                                    .map_err(|_| Error::Parse(format!("bad width '{v}'")))
                            })
                            .collect::<Result<Vec<_>>>()?,
                    )
                }
                "act" => {
                    acts = Some(
                        items
                            .iter()
                            .map(|v| Activation::from_name(v))
                            .collect::<Result<Vec<_>>>()?,
                    )
                }
                "init" => {
                    inits = Some(
                        items
                            .iter()
                            .map(|v| Initializer::from_name(v))
                            .collect::<Result<Vec<_>>>()?,
                    )
                }
                "drop" => drops = Some(parse_flags(&items)?),
                "bn" => bns = Some(parse_flags(&items)?),
                other => return Err(Error::Parse(format!("unknown descriptor field '{other}'"))),
            }
        }
        let missing = |name: &str| Error::Parse(format!("descriptor field '{name}' missing"));
        Ok(NetworkDescriptor {
            hidden_widths: widths.ok_or_else(|| missing("widths"))?,
            activations: acts.ok_or_else(|| missing("act"))?,
            initializers: inits.ok_or_else(|| missing("init"))?,
            dropout_flags: drops.ok_or_else(|| missing("drop"))?,
            batchnorm_flags: bns.ok_or_else(|| missing("bn"))?,
        })
    }
}

fn parse_flags(items: &[&str]) -> Result<Vec<bool>> {
    items
        .iter()
        .map(|v| match *v {
            "0" => Ok(false),
            "1" => Ok(true),
            other => Err(Error::Parse(format!("bad flag '{other}'"))),
        })
        .collect()
}
