//! Experiment configuration: a flat `key = value` format with per-kind defaults.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::linalg::DEFAULT_PCG_TOL;
use crate::wavesolver::{
    ChannelData, FixedPointConfig, FocusData, Linearization, MaterialParams, MmsCase, NewmarkParams, TimeGrid,
    DEFAULT_MARGIN_MIN,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExperimentKind {
    Channel,
    Focus,
    Mms,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Channel => "channel",
            ExperimentKind::Focus => "focus",
            ExperimentKind::Mms => "mms",
        }
    }
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ExperimentKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "channel" => Ok(ExperimentKind::Channel),
            "focus" => Ok(ExperimentKind::Focus),
            "mms" => Ok(ExperimentKind::Mms),
            other => Err(Error::Config(format!("unknown experiment kind `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Preset {
    /// Full resolution: channel levels 1-6 against level 8, focus levels 1-5.
    Paper,
    /// Reduced levels that finish in minutes.
    Desk,
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper" => Ok(Preset::Paper),
            "desk" => Ok(Preset::Desk),
            other => Err(Error::Config(format!("unknown preset `{other}` (expected paper or desk)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    pub levels: Vec<usize>,
    /// Reference level of the channel study; unused otherwise.
    pub ref_level: usize,
    pub material: MaterialParams,
    pub final_time: f64,
    /// Number of time steps; the grid has `time_steps + 1` points.
    pub time_steps: usize,
    pub newmark: NewmarkParams,
    pub fixed_point: FixedPointConfig,
    pub pcg_tol: f64,
    pub margin_min: f64,
    pub channel: ChannelData,
    pub focus: FocusData,
    pub mms: MmsCase,
    pub out_dir: PathBuf,
    /// Write every `stride`-th state to the snapshot files; 0 disables snapshots.
    pub snapshot_stride: usize,
}

impl ExperimentConfig {
    /// Desk-scale defaults with water and the standard pulse and transducer data.
    pub fn defaults(kind: ExperimentKind) -> Self {
        let base = ExperimentConfig {
            kind,
            levels: vec![1, 2, 3, 4],
            ref_level: 6,
            material: MaterialParams::water(),
            final_time: 37e-6,
            time_steps: 2000,
            newmark: NewmarkParams::DISSIPATIVE,
            fixed_point: FixedPointConfig::default(),
            pcg_tol: DEFAULT_PCG_TOL,
            margin_min: DEFAULT_MARGIN_MIN,
            channel: ChannelData::default(),
            focus: FocusData::default(),
            mms: MmsCase::default(),
            out_dir: PathBuf::from(format!("out/{}", kind.name())),
            snapshot_stride: 0,
        };
        match kind {
            ExperimentKind::Channel => base,
            ExperimentKind::Focus => {
                ExperimentConfig { final_time: 40e-6, time_steps: 3500, snapshot_stride: 500, ..base }
            }
            ExperimentKind::Mms => {
                let case = MmsCase::default();
                ExperimentConfig {
                    levels: vec![3, 4, 5, 6, 7],
                    material: MaterialParams { c: case.c, rho: 1.0, b: case.b, beta_a: 0.0 },
                    final_time: 1.0,
                    time_steps: 2000,
                    newmark: NewmarkParams::AVERAGE_ACCELERATION,
                    pcg_tol: 1e-12,
                    ..base
                }
            }
        }
    }

    pub fn apply_preset(&mut self, preset: Preset) {
        match (self.kind, preset) {
            (ExperimentKind::Channel, Preset::Paper) => {
                self.levels = (1..=6).collect();
                self.ref_level = 8;
            }
            (ExperimentKind::Channel, Preset::Desk) => {
                self.levels = (1..=4).collect();
                self.ref_level = 6;
            }
            (ExperimentKind::Focus, Preset::Paper) => self.levels = (1..=5).collect(),
            (ExperimentKind::Focus, Preset::Desk) => self.levels = (1..=4).collect(),
            (ExperimentKind::Mms, _) => self.levels = (3..=7).collect(),
        }
    }

    pub fn time_grid(&self) -> Result<TimeGrid> {
        TimeGrid::new(self.final_time, self.time_steps + 1)
    }

    /// Applies one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: FromStr>(key: &str, v: &str) -> Result<T> {
            v.parse().map_err(|_| Error::Config(format!("`{key}`: cannot parse `{v}`")))
        }
        let v = value.trim();
        match key.trim() {
            "kind" => {
                let kind: ExperimentKind = v.parse()?;
                if kind != self.kind {
                    return Err(Error::Config(format!("config is for `{kind}`, command is `{}`", self.kind)));
                }
            }
            "levels" => self.levels = parse_levels(v)?,
            "ref_level" => self.ref_level = num(key, v)?,
            "c" => self.material.c = num(key, v)?,
            "rho" => self.material.rho = num(key, v)?,
            "b" => self.material.b = num(key, v)?,
            "beta_a" => self.material.beta_a = num(key, v)?,
            "final_time" => self.final_time = num(key, v)?,
            "time_steps" => self.time_steps = num(key, v)?,
            "newmark_beta" => self.newmark.beta = num(key, v)?,
            "newmark_gamma" => self.newmark.gamma = num(key, v)?,
            "fp_tol" => self.fixed_point.tol = num(key, v)?,
            "fp_max_iter" => self.fixed_point.max_iter = num(key, v)?,
            "fp_floor" => self.fixed_point.floor = num(key, v)?,
            "linearization" => {
                self.fixed_point.linearization = match v {
                    "implicit" => Linearization::Implicit,
                    "explicit" => Linearization::Explicit,
                    _ => return Err(Error::Config(format!("`linearization` must be implicit or explicit, got `{v}`"))),
                }
            }
            "pcg_tol" => self.pcg_tol = num(key, v)?,
            "margin_min" => self.margin_min = num(key, v)?,
            "a1" => self.channel.a1 = num(key, v)?,
            "a2" => self.channel.a2 = num(key, v)?,
            "sigma1" => self.channel.sigma1 = num(key, v)?,
            "sigma2" => self.channel.sigma2 = num(key, v)?,
            "mu" => self.channel.mu = num(key, v)?,
            "g0" => self.focus.g0 = num(key, v)?,
            "freq" => self.focus.freq = num(key, v)?,
            "mms_variable" => self.mms.variable = num(key, v)?,
            "out" => self.out_dir = PathBuf::from(v),
            "snapshot_stride" => self.snapshot_stride = num(key, v)?,
            other => return Err(Error::Config(format!("unknown key `{other}`"))),
        }
        Ok(())
    }

    /// Applies a `key = value` file. Blank lines and `#` comments are ignored.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) =
                line.split_once('=').ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", n + 1)))?;
            self.set(k, v).map_err(|e| Error::Config(format!("line {}: {e}", n + 1)))?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.levels.is_empty() {
            return bad("no levels given".into());
        }
        if self.levels.contains(&0) {
            return bad("levels start at 1".into());
        }
        let mut sorted = self.levels.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.levels.len() {
            return bad("levels contain duplicates".into());
        }
        if self.kind == ExperimentKind::Channel && self.ref_level <= *sorted.last().expect("nonempty") {
            return bad(format!("ref_level {} must exceed every level", self.ref_level));
        }
        MaterialParams::new(self.material.c, self.material.rho, self.material.b, self.material.beta_a)
            .map_err(|e| Error::Config(e.to_string()))?;
        self.time_grid().map_err(|e| Error::Config(e.to_string()))?;
        if !(self.fixed_point.tol > 0.0) || self.fixed_point.max_iter == 0 {
            return bad("fixed-point tolerance and iteration limit must be positive".into());
        }
        if !(self.pcg_tol > 0.0) {
            return bad("pcg_tol must be positive".into());
        }
        if !(0.0..1.0).contains(&self.margin_min) {
            return bad(format!("margin_min must lie in [0, 1), got {}", self.margin_min));
        }
        Ok(())
    }

    /// The effective configuration in the format accepted by [`ExperimentConfig::apply_text`].
    pub fn to_text(&self) -> String {
        let levels: Vec<String> = self.levels.iter().map(|l| l.to_string()).collect();
        let linearization = match self.fixed_point.linearization {
            Linearization::Implicit => "implicit",
            Linearization::Explicit => "explicit",
        };
        let mut lines = vec![
            format!("kind = {}", self.kind),
            format!("levels = {}", levels.join(",")),
            format!("ref_level = {}", self.ref_level),
            format!("c = {:e}", self.material.c),
            format!("rho = {:e}", self.material.rho),
            format!("b = {:e}", self.material.b),
            format!("beta_a = {:e}", self.material.beta_a),
            format!("final_time = {:e}", self.final_time),
            format!("time_steps = {}", self.time_steps),
            format!("newmark_beta = {}", self.newmark.beta),
            format!("newmark_gamma = {}", self.newmark.gamma),
            format!("fp_tol = {:e}", self.fixed_point.tol),
            format!("fp_max_iter = {}", self.fixed_point.max_iter),
            format!("fp_floor = {:e}", self.fixed_point.floor),
            format!("linearization = {linearization}"),
            format!("pcg_tol = {:e}", self.pcg_tol),
            format!("margin_min = {}", self.margin_min),
        ];
        match self.kind {
            ExperimentKind::Channel => lines.extend([
                format!("a1 = {:e}", self.channel.a1),
                format!("a2 = {:e}", self.channel.a2),
                format!("sigma1 = {}", self.channel.sigma1),
                format!("sigma2 = {}", self.channel.sigma2),
                format!("mu = {}", self.channel.mu),
            ]),
            ExperimentKind::Focus => {
                lines.extend([format!("g0 = {:e}", self.focus.g0), format!("freq = {:e}", self.focus.freq)])
            }
            ExperimentKind::Mms => lines.push(format!("mms_variable = {}", self.mms.variable)),
        }
        lines.push(format!("out = {}", self.out_dir.display()));
        lines.push(format!("snapshot_stride = {}", self.snapshot_stride));
        lines.join("\n") + "\n"
    }
}

/// `"1,2,5"`, `"1..4"` (inclusive) or a mix such as `"1..3,6"`.
pub fn parse_levels(s: &str) -> Result<Vec<usize>> {
    let mut out = Vec::new();
    for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let parse = |t: &str| t.trim().parse::<usize>().map_err(|_| Error::Config(format!("bad level `{t}`")));
        if let Some((a, b)) = part.split_once("..") {
            let (a, b) = (parse(a)?, parse(b.trim_start_matches('='))?);
            if a > b {
                return Err(Error::Config(format!("empty level range `{part}`")));
            }
            out.extend(a..=b);
        } else {
            out.push(parse(part)?);
        }
    }
    if out.is_empty() {
        return Err(Error::Config("no levels given".into()));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn level_lists() {
        assert_eq!(parse_levels("1..4").unwrap(), vec![1, 2, 3, 4]);
        assert_eq!(parse_levels("1, 3,5").unwrap(), vec![1, 3, 5]);
        assert_eq!(parse_levels("1..=2,6").unwrap(), vec![1, 2, 6]);
        assert!(parse_levels("").is_err());
        assert!(parse_levels("4..2").is_err());
        assert!(parse_levels("x").is_err());
    }

    #[test]
    fn default_parameters() {
        let c = ExperimentConfig::defaults(ExperimentKind::Channel);
        assert_eq!(c.material, MaterialParams::water());
        assert_eq!(c.channel, ChannelData { a1: 1.2e8, a2: -1e11, sigma1: 0.015, sigma2: 0.02, mu: 0.1 });
        assert_eq!(c.newmark, NewmarkParams { beta: 0.45, gamma: 0.75 });
        assert_eq!(c.fixed_point.tol, 1e-8);
        assert_eq!(c.time_grid().unwrap().n_points, 2001);
        let f = ExperimentConfig::defaults(ExperimentKind::Focus);
        assert_eq!(f.focus, FocusData { g0: 1e7, freq: 60e3 });
        assert_eq!(f.time_steps, 3500);
        assert_eq!(f.final_time, 40e-6);
    }

    #[test]
    fn presets() {
        let mut c = ExperimentConfig::defaults(ExperimentKind::Channel);
        c.apply_preset(Preset::Paper);
        assert_eq!((c.levels.clone(), c.ref_level), (vec![1, 2, 3, 4, 5, 6], 8));
        let mut f = ExperimentConfig::defaults(ExperimentKind::Focus);
        f.apply_preset(Preset::Paper);
        assert_eq!(f.levels, vec![1, 2, 3, 4, 5]);
    }

    #[test]
    fn text_round_trip() {
        for kind in [ExperimentKind::Channel, ExperimentKind::Focus, ExperimentKind::Mms] {
            let mut c = ExperimentConfig::defaults(kind);
            c.levels = vec![2, 3];
            c.fixed_point.linearization = Linearization::Explicit;
            let mut d = ExperimentConfig::defaults(kind);
            d.apply_text(&c.to_text()).unwrap();
            assert_eq!(c, d);
        }
    }

    #[test]
    fn rejects_bad_settings() {
        let mut c = ExperimentConfig::defaults(ExperimentKind::Channel);
        assert!(c.apply_text("nonsense = 1").is_err());
        assert!(c.apply_text("c = fast").is_err());
        assert!(c.apply_text("kind = focus").is_err());
        assert!(c.apply_text("just words").is_err());
        c.apply_text("# comment\n\nref_level = 3 # trailing\n").unwrap();
        assert!(c.validate().is_err());
        let mut c = ExperimentConfig::defaults(ExperimentKind::Channel);
        c.time_steps = 0;
        assert!(c.validate().is_err());
    }
}
