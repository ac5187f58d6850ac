//! JSON configuration files and bundled presets.
//!
//! ```json
//! {
//!   "name": "reservation",
//!   "user_classes": [
//!     {"name": "A", "degree": {"5": 1.0}},
//!     {"name": "B", "degree": {"2": 0.5102, "4": 0.4898}}
//!   ],
//!   "receiver_classes": [
//!     {"fraction": 0.5, "model": {"kind": "slotted_aloha"}},
//!     {"fraction": 0.5, "model": {"kind": "slotted_aloha"}}
//!   ],
//!   "routing": [[0.5, 0.5], [0.0, 1.0]],
//!   "p_sic": 0.0,
//!   "p_era": 0.0
//! }
//! ```
//!
//! `degree` maps a copy count to its probability. Model kinds are
//! `slotted_aloha`, `dfold` (`d`), `dfold_errors` (`d`, `p_err`),
//! `cooperative_sa` and `rayleigh` (`gamma_db`, `b_db`).

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::degree::DegreeDistribution;
use crate::error::{Error, Result};
use crate::evolution::{ReceiverClass, SystemConfig, SUM_TOL};
use crate::receivers::{ReceiverKind, ReceiverModel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UserClassSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub degree: BTreeMap<usize, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReceiverClassSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub fraction: f64,
    pub model: ReceiverKind,
}

/// On-disk form of a [`SystemConfig`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub user_classes: Vec<UserClassSpec>,
    pub receiver_classes: Vec<ReceiverClassSpec>,
    pub routing: Vec<Vec<f64>>,
    #[serde(default)]
    pub p_sic: f64,
    #[serde(default)]
    pub p_era: f64,
}

impl ConfigFile {
    /// Parses and validates a configuration; `Error::Config` names the
    /// offending field and, where it can be located, its line.
    pub fn parse(src: &str) -> Result<(Self, SystemConfig)> {
        let file: ConfigFile = serde_json::from_str(src).map_err(|e| Error::Config {
            field: field_from_serde(&e.to_string()),
            line: (e.line() > 0).then_some(e.line()),
            message: e.to_string(),
        })?;
        let system = file.validate(Some(src))?;
        Ok((file, system))
    }

    /// Builds the validated system, reporting errors against `src` when the
    /// source text is available.
    pub fn validate(&self, src: Option<&str>) -> Result<SystemConfig> {
        let locate = |field: String, message: String, anchor: Anchor| Error::Config {
            line: src.and_then(|s| anchor.line(s)),
            field,
            message,
        };
        let k = self.user_classes.len();
        if k == 0 {
            return Err(locate(
                "user_classes".into(),
                "at least one user class is required".into(),
                Anchor::Key("user_classes", 0),
            ));
        }
        if self.receiver_classes.is_empty() {
            return Err(locate(
                "receiver_classes".into(),
                "at least one receiver class is required".into(),
                Anchor::Key("receiver_classes", 0),
            ));
        }
        let degrees = self
            .user_classes
            .iter()
            .enumerate()
            .map(|(i, u)| {
                DegreeDistribution::from_weights(&u.degree).map_err(|e| {
                    locate(
                        format!("user_classes[{i}].degree"),
                        e.to_string(),
                        Anchor::Key("degree", i),
                    )
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let mut fraction_sum = 0.0;
        let mut receivers = Vec::with_capacity(self.receiver_classes.len());
        for (j, rc) in self.receiver_classes.iter().enumerate() {
            if !(rc.fraction > 0.0 && rc.fraction <= 1.0) {
                return Err(locate(
                    format!("receiver_classes[{j}].fraction"),
                    format!("{} is outside (0, 1]", rc.fraction),
                    Anchor::Key("fraction", j),
                ));
            }
            fraction_sum += rc.fraction;
            let model = ReceiverModel::new(rc.model, k).map_err(|e| {
                locate(
                    format!("receiver_classes[{j}].model"),
                    e.to_string(),
                    Anchor::Key("model", j),
                )
            })?;
            receivers.push(ReceiverClass {
                fraction: rc.fraction,
                model,
            });
        }
        if (fraction_sum - 1.0).abs() > SUM_TOL {
            return Err(locate(
                "receiver_classes".into(),
                format!("fractions sum to {fraction_sum}, expected 1"),
                Anchor::Key("receiver_classes", 0),
            ));
        }
        if self.routing.len() != k {
            return Err(locate(
                "routing".into(),
                format!("expected {k} rows, found {}", self.routing.len()),
                Anchor::Key("routing", 0),
            ));
        }
        for (i, row) in self.routing.iter().enumerate() {
            let field = format!("routing[{i}]");
            if row.len() != receivers.len() {
                return Err(locate(
                    field,
                    format!("expected {} entries, found {}", receivers.len(), row.len()),
                    Anchor::RoutingRow(i),
                ));
            }
            if let Some(bad) = row.iter().find(|r| !(**r >= 0.0)) {
                return Err(locate(
                    field,
                    format!("entry {bad} is negative"),
                    Anchor::RoutingRow(i),
                ));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > SUM_TOL {
                return Err(locate(
                    field,
                    format!("row sums to {sum}, expected 1"),
                    Anchor::RoutingRow(i),
                ));
            }
        }
        for (name, value) in [("p_sic", self.p_sic), ("p_era", self.p_era)] {
            if !(0.0..=1.0).contains(&value) {
                return Err(locate(
                    name.into(),
                    format!("{value} is outside [0, 1]"),
                    Anchor::Key(name, 0),
                ));
            }
        }
        SystemConfig::new(
            degrees,
            receivers,
            self.routing.clone(),
            self.p_sic,
            self.p_era,
        )
        .map_err(|e| Error::Config {
            field: "config".into(),
            line: None,
            message: e.to_string(),
        })
    }

    /// Canonical JSON of the structural content: labels dropped, degree keys
    /// sorted, numbers in shortest round-trip form.
    pub fn canonical_json(&self) -> String {
        let mut bare = self.clone();
        bare.name = None;
        bare.user_classes.iter_mut().for_each(|u| {
            u.name = None;
            u.degree.retain(|_, w| *w != 0.0);
        });
        bare.receiver_classes.iter_mut().for_each(|r| r.name = None);
        serde_json::to_string(&bare).expect("config serializes")
    }

    /// SHA-256 of [`ConfigFile::canonical_json`], hex encoded.
    pub fn digest(&self) -> String {
        Sha256::digest(self.canonical_json().as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

impl From<&SystemConfig> for ConfigFile {
    fn from(cfg: &SystemConfig) -> Self {
        ConfigFile {
            name: None,
            user_classes: cfg
                .degrees()
                .iter()
                .map(|d| UserClassSpec {
                    name: None,
                    degree: d.weights(),
                })
                .collect(),
            receiver_classes: cfg
                .receivers()
                .iter()
                .map(|r| ReceiverClassSpec {
                    name: None,
                    fraction: r.fraction,
                    model: r.model.kind(),
                })
                .collect(),
            routing: cfg.routing().to_vec(),
            p_sic: cfg.p_sic(),
            p_era: cfg.p_era(),
        }
    }
}

impl SystemConfig {
    /// Stable hash of the canonical configuration; equal to
    /// [`ConfigFile::digest`] of any file describing this system.
    pub fn digest(&self) -> String {
        ConfigFile::from(self).digest()
    }
}

/// Reads and validates a configuration file.
pub fn parse_config(path: &Path) -> Result<(ConfigFile, SystemConfig)> {
    let src = std::fs::read_to_string(path).map_err(|e| Error::Config {
        field: "path".into(),
        line: None,
        message: format!("{}: {e}", path.display()),
    })?;
    ConfigFile::parse(&src)
}

const PRESETS: &[(&str, &str)] = &[
    (
        "complete_sharing",
        include_str!("../presets/complete_sharing.json"),
    ),
    ("reservation", include_str!("../presets/reservation.json")),
    ("partitioning", include_str!("../presets/partitioning.json")),
    ("nonuniform", include_str!("../presets/nonuniform.json")),
    (
        "complete_sharing_perr",
        include_str!("../presets/complete_sharing_perr.json"),
    ),
    (
        "reservation_perr",
        include_str!("../presets/reservation_perr.json"),
    ),
    (
        "partitioning_perr",
        include_str!("../presets/partitioning_perr.json"),
    ),
    (
        "nonuniform_perr",
        include_str!("../presets/nonuniform_perr.json"),
    ),
    ("rayleigh_5db", include_str!("../presets/rayleigh_5db.json")),
    (
        "rayleigh_10db",
        include_str!("../presets/rayleigh_10db.json"),
    ),
    (
        "rayleigh_15db",
        include_str!("../presets/rayleigh_15db.json"),
    ),
    (
        "rayleigh_20db",
        include_str!("../presets/rayleigh_20db.json"),
    ),
    ("coop_i", include_str!("../presets/coop_i.json")),
    ("coop_ii", include_str!("../presets/coop_ii.json")),
    ("coop_iii", include_str!("../presets/coop_iii.json")),
    ("coop_iv", include_str!("../presets/coop_iv.json")),
    ("coop_v", include_str!("../presets/coop_v.json")),
];

pub fn preset_names() -> impl Iterator<Item = &'static str> {
    PRESETS.iter().map(|(name, _)| *name)
}

/// Source text of a bundled preset.
pub fn preset_source(name: &str) -> Option<&'static str> {
    PRESETS
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, src)| *src)
}

pub fn load_preset(name: &str) -> Result<(ConfigFile, SystemConfig)> {
    let src = preset_source(name).ok_or_else(|| Error::Config {
        field: "preset".into(),
        line: None,
        message: format!(
            "unknown preset {name:?}; available: {}",
            preset_names().collect::<Vec<_>>().join(", ")
        ),
    })?;
    ConfigFile::parse(src)
}

/// Where in the source text a field lives.
enum Anchor {
    /// The `n`-th occurrence of `"key":`.
    Key(&'static str, usize),
    /// Row `i` of the `routing` array.
    RoutingRow(usize),
}

impl Anchor {
    fn line(&self, src: &str) -> Option<usize> {
        let offset = match *self {
            Anchor::Key(key, n) => key_offsets(src, key).nth(n)?,
            Anchor::RoutingRow(i) => {
                let start = key_offsets(src, "routing").next()?;
                let mut depth = 0;
                let mut row = 0;
                let mut found = None;
                for (pos, ch) in src[start..].char_indices() {
                    match ch {
                        '[' => {
                            depth += 1;
                            if depth == 2 {
                                if row == i {
                                    found = Some(start + pos);
                                    break;
                                }
                                row += 1;
                            }
                        }
                        ']' => {
                            depth -= 1;
                            if depth == 0 {
                                break;
                            }
                        }
                        _ => {}
                    }
                }
                found.unwrap_or(start)
            }
        };
        Some(src[..offset].matches('\n').count() + 1)
    }
}

fn key_offsets(src: &str, key: &str) -> impl Iterator<Item = usize> {
    let quoted = format!("\"{key}\"");
    src.match_indices(&quoted)
        .map(|(i, _)| i)
        .filter(|&i| src[i + quoted.len()..].trim_start().starts_with(':'))
        .collect::<Vec<_>>()
        .into_iter()
}

/// Best-effort field name from a serde_json message such as
/// "missing field `routing`" or "unknown field `foo`".
fn field_from_serde(message: &str) -> String {
    message
        .split('`')
        .nth(1)
        .map(str::to_string)
        .unwrap_or_else(|| "json".into())
}

#[cfg(test)]
mod tests {
    use super::*;

    const BAD_ROW: &str = r#"{
  "user_classes": [
    {"degree": {"5": 1.0}},
    {"degree": {"2": 0.5102, "4": 0.4898}}
  ],
  "receiver_classes": [
    {"fraction": 0.5, "model": {"kind": "slotted_aloha"}},
    {"fraction": 0.5, "model": {"kind": "slotted_aloha"}}
  ],
  "routing": [
    [0.5, 0.4],
    [0.5, 0.5]
  ]
}"#;

    #[test]
    fn every_preset_loads() {
        for name in preset_names() {
            let (file, cfg) = load_preset(name).unwrap_or_else(|e| panic!("{name}: {e}"));
            assert_eq!(file.user_classes.len(), cfg.num_user_classes());
            assert_eq!(cfg.digest(), file.digest(), "{name}");
        }
        assert!(load_preset("nope").is_err());
    }

    #[test]
    fn complete_sharing_preset() {
        let (_, cfg) = load_preset("complete_sharing").unwrap();
        assert_eq!(cfg.num_user_classes(), 2);
        assert_eq!(cfg.num_receiver_classes(), 2);
        assert!(cfg.receivers().iter().all(|r| r.fraction == 0.5));
        assert!(cfg.routing().iter().flatten().all(|&r| r == 0.5));
        assert_eq!(cfg.degrees()[0].weight(5), 1.0);
        assert_eq!(cfg.degrees()[1].weight(2), 0.5102);
        assert_eq!(cfg.degrees()[1].weight(4), 0.4898);
    }

    #[test]
    fn reservation_preset() {
        let (_, cfg) = load_preset("reservation").unwrap();
        assert_eq!(cfg.routing(), &[vec![0.5, 0.5], vec![0.0, 1.0]]);
    }

    #[test]
    fn bad_row_names_field_and_line() {
        match ConfigFile::parse(BAD_ROW) {
            Err(Error::Config { field, line, .. }) => {
                assert_eq!(field, "routing[0]");
                assert_eq!(line, Some(11));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn schema_errors_carry_lines() {
        let src = BAD_ROW.replace("\"routing\"", "\"routeing\"");
        match ConfigFile::parse(&src) {
            Err(Error::Config { field, line, .. }) => {
                assert_eq!(field, "routeing");
                assert!(line.is_some());
            }
            other => panic!("{other:?}"),
        }
        let src = BAD_ROW.replace("slotted_aloha", "smoke_signal");
        assert!(matches!(ConfigFile::parse(&src), Err(Error::Config { .. })));
    }

    #[test]
    fn bad_degree_is_located() {
        let src = BAD_ROW
            .replace("0.5102", "0.6102")
            .replace("[0.5, 0.4]", "[0.5, 0.5]");
        match ConfigFile::parse(&src) {
            Err(Error::Config { field, line, .. }) => {
                assert_eq!(field, "user_classes[1].degree");
                assert_eq!(line, Some(4));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn round_trip_is_identical() {
        for name in preset_names() {
            let (file, _) = load_preset(name).unwrap();
            let (again, _) = ConfigFile::parse(&file.to_json_pretty()).unwrap();
            assert_eq!(file, again);
            assert_eq!(file.canonical_json(), again.canonical_json());
        }
    }

    #[test]
    fn labels_do_not_change_the_digest() {
        let (mut file, _) = load_preset("reservation").unwrap();
        let before = file.digest();
        file.name = Some("renamed".into());
        assert_eq!(file.digest(), before);
        file.p_sic = 0.1;
        assert_ne!(file.digest(), before);
    }
}
