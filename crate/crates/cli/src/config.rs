//! Campaign documents.
//!
//! A document is either a single entry object or `{"entries": [...]}`.
//! Every field except `game` has a default; unknown keys are rejected.

use std::collections::HashSet;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use vform_core::ampc::{ActionEncoding, AmpcConfig, Mode, ThresholdRule};
use vform_core::fitness::FitnessParams;
use vform_core::flock::{DynamicsBounds, VGeometry};
use vform_core::game::{AttackKind, AttackerSettings, GameConfig, InitialState, Removal};
use vform_core::pso::PsoParams;
use vform_core::smc::{required_samples, SmcPlan};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GameKind {
    /// No attacker.
    None,
    /// Remove birds once, before the first step.
    Rbg,
    /// Random displacements.
    Rdg,
    /// Displacements chosen by an AMPC attacker.
    Ampc,
}

impl GameKind {
    pub fn as_str(self) -> &'static str {
        match self {
            GameKind::None => "none",
            GameKind::Rbg => "rbg",
            GameKind::Rdg => "rdg",
            GameKind::Ampc => "ampc",
        }
    }
}

fn default_birds() -> usize {
    7
}
fn default_r() -> usize {
    1
}
fn default_magnitude() -> f64 {
    1.0
}
fn default_attack_steps() -> usize {
    20
}
fn default_max_steps() -> usize {
    40
}
fn default_phi() -> f64 {
    AmpcConfig::default().phi
}
fn default_h_max() -> usize {
    AmpcConfig::default().h_max
}
fn default_m() -> usize {
    AmpcConfig::default().m
}
fn default_beta() -> usize {
    AmpcConfig::default().beta
}
fn default_true() -> bool {
    true
}
fn default_epsilon() -> f64 {
    0.1
}
fn default_delta() -> f64 {
    0.01
}
fn default_initial() -> InitialState {
    InitialState::VFormation
}

/// One named game configuration plus its sampling plan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Entry {
    /// Defaults to `<game>-<position>` (1-based).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub game: GameKind,
    #[serde(default = "default_birds")]
    pub birds: usize,

    /// Birds (1-based) removed in an `rbg` game.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub remove: Option<Vec<usize>>,
    /// Remove this many birds chosen at random.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub remove_random: Option<usize>,
    /// Remove the birds whose loss hurts the fitness most.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub remove_worst: Option<usize>,

    /// Birds displaced per attack step.
    #[serde(default = "default_r")]
    pub r: usize,
    /// Displacement magnitude bound `M`.
    #[serde(default = "default_magnitude")]
    pub magnitude: f64,
    #[serde(default = "default_attack_steps")]
    pub attack_steps: usize,
    #[serde(default = "default_max_steps")]
    pub max_steps: usize,

    #[serde(default = "default_phi")]
    pub phi: f64,
    #[serde(default = "default_h_max")]
    pub h_max: usize,
    #[serde(default = "default_m")]
    pub m: usize,
    #[serde(default = "default_beta")]
    pub beta: usize,
    #[serde(default)]
    pub pso: PsoParams,
    #[serde(default)]
    pub threshold_rule: ThresholdRule,
    #[serde(default)]
    pub encoding: ActionEncoding,
    #[serde(default = "default_true")]
    pub seed_zero_sequence: bool,
    #[serde(default = "default_true")]
    pub warm_start: bool,
    #[serde(default)]
    pub attacker: AttackerSettings,

    #[serde(default)]
    pub fitness: FitnessParams,
    #[serde(default)]
    pub bounds: DynamicsBounds,
    #[serde(default)]
    pub geometry: VGeometry,
    #[serde(default = "default_initial")]
    pub initial: InitialState,

    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default = "default_delta")]
    pub delta: f64,
    /// Overrides the sample count derived from `epsilon` and `delta`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub samples: Option<u64>,
    /// Master seed of the campaign entry.
    #[serde(default)]
    pub seed: u64,
}

impl Entry {
    pub fn name(&self) -> &str {
        self.name.as_deref().unwrap_or("")
    }

    fn removal(&self) -> Result<Option<Removal>> {
        let given = [self.remove.is_some(), self.remove_random.is_some(), self.remove_worst.is_some()];
        let count = given.iter().filter(|&&g| g).count();
        if self.game != GameKind::Rbg {
            if count > 0 {
                bail!("remove, remove_random and remove_worst only apply to rbg games");
            }
            return Ok(None);
        }
        if count != 1 {
            bail!("an rbg game needs exactly one of remove, remove_random or remove_worst");
        }
        Ok(Some(if let Some(birds) = &self.remove {
            let unique: HashSet<_> = birds.iter().collect();
            if unique.len() != birds.len() {
                bail!("remove lists a bird twice");
            }
            Removal::Birds(birds.clone())
        } else if let Some(r) = self.remove_random {
            Removal::Random(r)
        } else {
            Removal::Worst(self.remove_worst.unwrap_or_default())
        }))
    }

    /// The game this entry describes, seeded with the master seed.
    pub fn game_config(&self) -> Result<GameConfig> {
        let attack = match self.game {
            GameKind::None => AttackKind::None,
            GameKind::Rbg => AttackKind::RemoveBirds { removal: self.removal()?.expect("rbg has a removal") },
            GameKind::Rdg => AttackKind::RandomDisplacement {
                r: self.r,
                magnitude: self.magnitude,
                attack_steps: self.attack_steps,
            },
            GameKind::Ampc => AttackKind::AmpcDisplacement {
                r: self.r,
                magnitude: self.magnitude,
                attack_steps: self.attack_steps,
                attacker: self.attacker.clone(),
            },
        };
        if self.game != GameKind::Rbg {
            self.removal()?;
        }
        let config = GameConfig {
            bird_count: self.birds,
            max_steps: self.max_steps,
            attack,
            controller: AmpcConfig {
                phi: self.phi,
                h_max: self.h_max,
                m: self.m,
                beta: self.beta,
                pso: self.pso.clone(),
                mode: Mode::Minimize,
                threshold_rule: self.threshold_rule,
                seed_zero_sequence: self.seed_zero_sequence,
                encoding: self.encoding,
                warm_start: self.warm_start,
                ..AmpcConfig::default()
            },
            fitness: self.fitness.clone(),
            bounds: self.bounds,
            geometry: self.geometry,
            initial: self.initial.clone(),
            seed: self.seed,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn plan(&self) -> Result<SmcPlan> {
        let plan = match self.samples {
            Some(n) => SmcPlan::with_samples(self.epsilon, self.delta, n, self.seed)?,
            None => SmcPlan::derived(self.epsilon, self.delta, self.seed)?,
        };
        Ok(plan)
    }

    /// Checks everything that can be checked without running a game.
    pub fn validate(&self) -> Result<()> {
        self.game_config()?;
        required_samples(self.epsilon, self.delta)?;
        self.plan()?;
        Ok(())
    }
}

/// A validated list of uniquely named entries.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Campaign {
    pub entries: Vec<Entry>,
}

fn parse_document(text: &str) -> Result<Campaign> {
    let value: serde_json::Value = serde_json::from_str(text).context("config is not valid JSON")?;
    let is_campaign = value.as_object().is_some_and(|o| o.contains_key("entries"));
    let campaign = if is_campaign {
        serde_path_to_error::deserialize::<_, Campaign>(value)
            .map_err(|e| anyhow::anyhow!("config error at `{}`: {}", e.path(), e.inner()))?
    } else {
        let entry: Entry = serde_path_to_error::deserialize(value)
            .map_err(|e| anyhow::anyhow!("config error at `{}`: {}", e.path(), e.inner()))?;
        Campaign { entries: vec![entry] }
    };
    Ok(campaign)
}

/// Parses and validates a campaign document, filling in default names.
pub fn parse_config(text: &str) -> Result<Campaign> {
    let mut campaign = parse_document(text)?;
    let mut seen = HashSet::new();
    for (i, entry) in campaign.entries.iter_mut().enumerate() {
        if entry.name.is_none() {
            entry.name = Some(format!("{}-{}", entry.game.as_str(), i + 1));
        }
        let name = entry.name().to_string();
        if name.is_empty() || name.contains(['/', '\\']) {
            bail!("entries[{i}]: name {name:?} is not usable as a file name");
        }
        if !seen.insert(name.clone()) {
            bail!("entries[{i}]: duplicate entry name {name:?}");
        }
        entry.validate().with_context(|| format!("entries[{i}] ({name})"))?;
    }
    Ok(campaign)
}

/// Serializes a campaign as a document that [`parse_config`] reads back to
/// an equal campaign.
pub fn to_document(campaign: &Campaign) -> Result<String> {
    Ok(serde_json::to_string_pretty(campaign)?)
}

impl Campaign {
    pub fn entry(&self, name: Option<&str>) -> Result<&Entry> {
        match name {
            None => self.entries.first().context("campaign has no entries"),
            Some(n) => self
                .entries
                .iter()
                .find(|e| e.name() == n)
                .with_context(|| format!("no entry named {n:?}")),
        }
    }
}
