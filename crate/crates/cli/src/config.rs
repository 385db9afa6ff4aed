//! Run configuration: TOML (or JSON) file, then `KAMSPECTRA_` environment
//! overrides with `__` separating nested keys, then validation.

use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use kamspectra::eigenfunction::Source;
use kamspectra::isoenergetic::{CurveGrid, Dispersion};
use kamspectra::perturb::{EpsilonPolicy, Mode, SeriesConfig};
use kamspectra::potential::{build_potential, BlockRecipe, Decay, RandomBlock, Recipe};
use kamspectra::{ModelParams, PotentialSpec};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const ENV_PREFIX: &str = "KAMSPECTRA_";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub l: u32,
    pub b1: f64,
    pub b2: f64,
    pub eta: f64,
    pub delta: f64,
    pub s1: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        let tp = 2.0 * std::f64::consts::PI;
        Self {
            l: 2,
            b1: tp,
            b2: tp,
            eta: 3.0,
            delta: 0.5,
            s1: 0.2,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PotentialKind {
    Empty,
    /// 2c(cos x₁ + cos x₂) on block 1.
    Cosine,
    /// Cosine blocks r = 1, 2, … with `amplitudes[r − 1]`.
    Ladder,
    /// Seeded random blocks, `amplitudes[r − 1]` per block.
    Random,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PotentialConfig {
    pub kind: PotentialKind,
    pub amplitude: f64,
    pub amplitudes: Vec<f64>,
    /// Mode radius of random blocks.
    pub radius: i64,
    /// Relaxed decay budgets per block; empty selects the strict law.
    pub decay: Vec<f64>,
    /// Number of blocks synthesized.
    pub blocks: u32,
}

impl Default for PotentialConfig {
    fn default() -> Self {
        Self {
            kind: PotentialKind::Cosine,
            amplitude: 0.05,
            amplitudes: vec![0.05, 1e-7, 1e-10],
            radius: 1,
            decay: vec![1.0, 1e-3, 1e-6],
            blocks: 3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TruncationConfig {
    /// Ball radius per level (the last entry repeats).
    pub rho: Vec<f64>,
    pub order: usize,
    pub nodes: usize,
    pub max_nodes: usize,
    /// Desk ε_n / λ per level (the last entry repeats).
    pub eps_rel: Vec<f64>,
    /// Strict-mode floor for ε_n.
    pub eps_floor: f64,
}

impl Default for TruncationConfig {
    fn default() -> Self {
        Self {
            rho: vec![3.0, 2.5, 2.0],
            order: 4,
            nodes: 32,
            max_nodes: 4096,
            eps_rel: vec![1e-8],
            eps_floor: 1e-300,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CurveConfig {
    pub base: usize,
    pub depth: u32,
    pub split: f64,
    /// Optional φ-window [a, b] applied to every level.
    pub window: Option<[f64; 2]>,
}

impl Default for CurveConfig {
    fn default() -> Self {
        let g = CurveGrid::default();
        Self {
            base: 256,
            depth: g.depth,
            split: g.split,
            window: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SwissConfig {
    /// Explicit offsets b⃗ in the level-1 cell.
    pub offsets: Vec<[f64; 2]>,
    /// Additional seeded random offsets.
    pub random_offsets: usize,
    /// Components examined per offset (0 = all).
    pub max_components: usize,
    /// Spectral shift ε of the determinant.
    pub eps: f64,
}

impl Default for SwissConfig {
    fn default() -> Self {
        Self {
            offsets: vec![[0.31, 0.17]],
            random_offsets: 0,
            max_components: 8,
            eps: 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EigenConfig {
    pub phis: Vec<f64>,
    pub source: Source,
    /// Samples per axis of the exported |Ψ_n| grid.
    pub grid: usize,
}

impl Default for EigenConfig {
    fn default() -> Self {
        Self {
            phis: vec![0.4],
            source: Source::Series,
            grid: 32,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub potential: PotentialConfig,
    pub k: f64,
    pub k_grid: Vec<f64>,
    pub levels: u32,
    pub mode: Mode,
    pub truncation: TruncationConfig,
    pub curve: CurveConfig,
    pub swisscheese: SwissConfig,
    pub eigenfunction: EigenConfig,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            potential: PotentialConfig::default(),
            k: 10.0,
            k_grid: vec![8.0, 16.0, 32.0],
            levels: 1,
            mode: Mode::Desk,
            truncation: TruncationConfig::default(),
            curve: CurveConfig::default(),
            swisscheese: SwissConfig::default(),
            eigenfunction: EigenConfig::default(),
            seed: 0,
        }
    }
}

fn parse_scalar(raw: &str) -> toml::Value {
    // a TOML literal when it parses as one, a string otherwise
    match format!("v = {raw}").parse::<toml::Table>() {
        Ok(mut t) => t
            .remove("v")
            .unwrap_or_else(|| toml::Value::String(raw.into())),
        Err(_) => toml::Value::String(raw.into()),
    }
}

/// Applies `KAMSPECTRA_A__B=value` as `a.b = value`.
pub fn apply_env<I: IntoIterator<Item = (String, String)>>(
    root: &mut toml::Table,
    vars: I,
) -> Result<()> {
    let mut vars: Vec<(String, String)> = vars
        .into_iter()
        .filter(|(k, _)| k.starts_with(ENV_PREFIX))
        .collect();
    vars.sort();
    for (key, raw) in vars {
        let path: Vec<String> = key[ENV_PREFIX.len()..]
            .split("__")
            .map(|s| s.to_ascii_lowercase())
            .collect();
        if path.iter().any(|p| p.is_empty()) {
            bail!("malformed override {key}");
        }
        let mut t = &mut *root;
        for p in &path[..path.len() - 1] {
            let e = t
                .entry(p.clone())
                .or_insert_with(|| toml::Value::Table(Default::default()));
            t = e
                .as_table_mut()
                .ok_or_else(|| anyhow!("override {key}: {p} is not a table"))?;
        }
        t.insert(path[path.len() - 1].clone(), parse_scalar(&raw));
    }
    Ok(())
}

impl RunConfig {
    pub fn from_table(t: toml::Table) -> Result<Self> {
        let cfg: RunConfig = toml::Value::Table(t).try_into().context("config")?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn parse(text: &str, json: bool) -> Result<toml::Table> {
        if json {
            let v: serde_json::Value = serde_json::from_str(text).context("config JSON")?;
            let t: toml::Table = serde_json::from_value(v).context("config JSON")?;
            Ok(t)
        } else {
            text.parse::<toml::Table>().context("config TOML")
        }
    }

    /// File (if any), then environment overrides.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let mut t = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .with_context(|| format!("reading {}", p.display()))?;
                Self::parse(&text, p.extension().is_some_and(|e| e == "json"))?
            }
            None => toml::Table::new(),
        };
        apply_env(&mut t, std::env::vars())?;
        Self::from_table(t)
    }

    pub fn params(&self) -> Result<ModelParams> {
        let m = &self.model;
        ModelParams::new(m.l, m.b1, m.b2, m.eta, m.delta, m.s1).map_err(|e| anyhow!("model: {e}"))
    }

    pub fn validate(&self) -> Result<()> {
        self.params()?;
        if !(self.k.is_finite() && self.k > 0.0) {
            bail!("k: must be positive, got {}", self.k);
        }
        if self.k_grid.iter().any(|k| !(k.is_finite() && *k > 0.0)) {
            bail!("k_grid: entries must be positive");
        }
        if self.levels < 1 {
            bail!("levels: must be at least 1");
        }
        let t = &self.truncation;
        if t.rho.is_empty() || t.rho.iter().any(|r| *r <= 0.0) {
            bail!("truncation.rho: need positive radii");
        }
        if t.order < 1 {
            bail!("truncation.order: must be at least 1");
        }
        if t.nodes < 16 || t.nodes % 2 == 1 || t.max_nodes < t.nodes {
            bail!("truncation.nodes: need an even count ≥ 16 not above max_nodes");
        }
        if t.eps_rel.iter().any(|e| *e <= 0.0) {
            bail!("truncation.eps_rel: entries must be positive");
        }
        let p = &self.potential;
        if matches!(p.kind, PotentialKind::Ladder | PotentialKind::Random)
            && p.amplitudes.is_empty()
        {
            bail!("potential.amplitudes: required for ladder and random potentials");
        }
        if p.blocks < 1 {
            bail!("potential.blocks: must be at least 1");
        }
        if p.decay.iter().any(|d| *d <= 0.0) {
            bail!("potential.decay: budgets must be positive");
        }
        if self.curve.base < 8 {
            bail!("curve.base: at least 8 samples");
        }
        if let Some([a, b]) = self.curve.window {
            if !(0.0..=2.0 * std::f64::consts::PI).contains(&a) || b <= a {
                bail!("curve.window: need 0 ≤ a < b ≤ 2π");
            }
        }
        if self.eigenfunction.grid < 2 {
            bail!("eigenfunction.grid: at least 2");
        }
        Ok(())
    }

    /// sha256 of the canonical JSON of the config.
    pub fn hash(&self) -> String {
        let s = serde_json::to_string(self).expect("config serializes");
        let d = Sha256::digest(s.as_bytes());
        d.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn recipe(&self) -> Recipe<f64> {
        let p = &self.potential;
        match p.kind {
            PotentialKind::Empty => Recipe::Empty,
            PotentialKind::Cosine => Recipe::cosine(p.amplitude),
            PotentialKind::Ladder => Recipe::Explicit(
                p.amplitudes
                    .iter()
                    .enumerate()
                    .take(p.blocks as usize)
                    .filter(|(_, a)| **a != 0.0)
                    .map(|(i, a)| Recipe::cosine_block(i as u32 + 1, *a))
                    .collect::<Vec<BlockRecipe<f64>>>(),
            ),
            PotentialKind::Random => Recipe::Random {
                seed: self.seed,
                blocks: p
                    .amplitudes
                    .iter()
                    .enumerate()
                    .take(p.blocks as usize)
                    .map(|(i, a)| RandomBlock {
                        r: i as u32 + 1,
                        radius: p.radius,
                        amplitude: *a,
                    })
                    .collect(),
            },
        }
    }

    pub fn decay(&self) -> Decay {
        if self.potential.decay.is_empty() {
            Decay::Strict
        } else {
            Decay::Relaxed(self.potential.decay.clone())
        }
    }

    pub fn spec(&self) -> Result<PotentialSpec> {
        let params = self.params()?;
        build_potential(
            &params,
            &self.recipe(),
            self.potential.blocks,
            &self.decay(),
        )
        .map_err(|e| anyhow!("potential: {e}"))
    }

    pub fn series(&self, k: f64) -> Result<SeriesConfig<f64>> {
        let t = &self.truncation;
        let mut c = SeriesConfig::desk(self.params()?, k);
        c.mode = self.mode;
        c.order = t.order;
        c.nodes = t.nodes;
        c.max_nodes = t.max_nodes;
        c.eps = match self.mode {
            Mode::Desk => EpsilonPolicy::Desk {
                rel: t.eps_rel.clone(),
            },
            Mode::Strict => EpsilonPolicy::Strict { floor: t.eps_floor },
        };
        Ok(c)
    }

    pub fn rho(&self, levels: u32) -> Vec<f64> {
        let r = &self.truncation.rho;
        (0..levels as usize)
            .map(|i| r[i.min(r.len() - 1)])
            .collect()
    }

    pub fn dispersion(&self, k: f64, levels: u32) -> Result<Dispersion> {
        Dispersion::new(&self.spec()?, k, levels, self.series(k)?, self.rho(levels))
            .map_err(|e| anyhow!("dispersion: {e}"))
    }

    pub fn grid(&self) -> CurveGrid {
        CurveGrid {
            base: self.curve.base,
            depth: self.curve.depth,
            split: self.curve.split,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn env_overrides_nest() {
        let mut t = RunConfig::parse("k = 5.0\n[model]\nl = 3\n", false).unwrap();
        let vars = vec![
            ("KAMSPECTRA_MODEL__L".to_string(), "6".to_string()),
            ("KAMSPECTRA_LEVELS".to_string(), "2".to_string()),
            (
                "KAMSPECTRA_POTENTIAL__KIND".to_string(),
                "ladder".to_string(),
            ),
            ("OTHER".to_string(), "1".to_string()),
        ];
        apply_env(&mut t, vars).unwrap();
        let c = RunConfig::from_table(t).unwrap();
        assert_eq!((c.model.l, c.levels, c.k), (6, 2, 5.0));
        assert_eq!(c.potential.kind, PotentialKind::Ladder);
    }

    #[test]
    fn validation_names_the_field() {
        let t = RunConfig::parse("k = -1.0", false).unwrap();
        let e = RunConfig::from_table(t).unwrap_err().to_string();
        assert!(e.starts_with("k:"), "{e}");
        let t = RunConfig::parse("[model]\neta = 1.0", false).unwrap();
        assert!(RunConfig::from_table(t)
            .unwrap_err()
            .to_string()
            .starts_with("model:"));
        assert!(RunConfig::parse("bogus = 1", false)
            .map(RunConfig::from_table)
            .unwrap()
            .is_err());
    }

    #[test]
    fn json_and_toml_agree() {
        let a =
            RunConfig::from_table(RunConfig::parse("k = 7.0\nseed = 3", false).unwrap()).unwrap();
        let b = RunConfig::from_table(RunConfig::parse(r#"{"k": 7.0, "seed": 3}"#, true).unwrap())
            .unwrap();
        assert_eq!(a, b);
        assert_eq!(a.hash(), b.hash());
        assert_ne!(a.hash(), RunConfig::default().hash());
    }
}
