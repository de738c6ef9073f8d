//! Built-in dataset presets.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{AttributeDomain, Combination, CorrelationConfig, CorrelationKind, SplitPlan, TestGroupSource};
use crate::error::{Error, IoContext, Result};

pub const PRESET_NAMES: [&str; 4] = ["color-mnist", "color-object", "scene-object", "ut-zappos"];

/// Serialized split description for one dataset under one correlation
/// configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitPreset {
    pub name: String,
    pub domains: Vec<AttributeDomain>,
    pub config: CorrelationConfig,
    pub samples_per_combination: usize,
    #[serde(default = "default_test_samples")]
    pub test_samples_per_tuple: usize,
    #[serde(default)]
    pub test_groups: TestGroupSource,
    /// RGB rendering of colour-valued attributes, keyed by value identifier.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub colors: BTreeMap<String, [u8; 3]>,
}

fn default_test_samples() -> usize {
    100
}

impl SplitPreset {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).at(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn plan(&self, rotation_seed: u64) -> Result<SplitPlan> {
        SplitPlan::new(
            self.domains.clone(),
            &self.config,
            rotation_seed,
            self.samples_per_combination,
            self.test_samples_per_tuple,
            self.test_groups,
        )
    }

    /// Index of the attribute whose values all have an RGB entry.
    pub fn color_attribute(&self) -> Option<usize> {
        if self.colors.is_empty() {
            return None;
        }
        self.domains.iter().position(|d| {
            d.known_values
                .iter()
                .chain(&d.unknown_values)
                .all(|v| self.colors.contains_key(v))
        })
    }
}

fn strings(values: &[&str]) -> Vec<String> {
    values.iter().map(|s| s.to_string()).collect()
}

fn pairs(values: &[(&str, &str)]) -> Vec<Combination> {
    values.iter().map(|(a, b)| vec![a.to_string(), b.to_string()]).collect()
}

fn domain(name: &str, known: &[&str], unknown: &[&str]) -> AttributeDomain {
    AttributeDomain::new(name, strings(known), strings(unknown)).expect("built-in domain is valid")
}

const OBJECTS_KNOWN: [&str; 6] = ["boat", "airplane", "truck", "dog", "zebra", "horse"];
const OBJECTS_UNKNOWN: [&str; 6] = ["bird", "motorcycle", "elephant", "bear", "bed", "giraffe"];

/// Built-in preset `name` configured for `kind`.
///
/// The synthetic presets accept `uc`, `sc` and `c`; `ut-zappos` only has its
/// explicit training list.
pub fn builtin_preset(name: &str, kind: CorrelationKind) -> Result<SplitPreset> {
    let generated_only = |kind: CorrelationKind| -> Result<CorrelationConfig> {
        if kind == CorrelationKind::Explicit {
            return Err(Error::Config(format!(
                "preset `{name}` has no explicit combination list; use uc, sc or c"
            )));
        }
        Ok(CorrelationConfig::generated(kind))
    };

    match name {
        "color-mnist" => {
            let config = match kind {
                // The published semi-correlated list closes the cycle on
                // yellow rather than red, so it is pinned verbatim.
                CorrelationKind::SemiCorrelated => CorrelationConfig {
                    kind,
                    combinations: Some(pairs(&[
                        ("0", "red"),
                        ("0", "yellow"),
                        ("1", "yellow"),
                        ("1", "green"),
                        ("2", "green"),
                        ("2", "cyan"),
                        ("3", "cyan"),
                        ("3", "blue"),
                        ("4", "blue"),
                        ("4", "yellow"),
                    ])),
                },
                other => generated_only(other)?,
            };
            let colors = [
                ("red", [255, 0, 0]),
                ("yellow", [255, 255, 0]),
                ("green", [0, 255, 0]),
                ("cyan", [0, 255, 255]),
                ("blue", [0, 0, 255]),
                ("magenta", [255, 0, 255]),
                ("orange", [255, 128, 0]),
                ("violet", [128, 0, 255]),
                ("azure", [0, 128, 255]),
                ("rose", [255, 0, 128]),
            ];
            Ok(SplitPreset {
                name: name.into(),
                domains: vec![
                    domain("digit", &["0", "1", "2", "3", "4"], &["5", "6", "7", "8", "9"]),
                    domain(
                        "color",
                        &["red", "yellow", "green", "cyan", "blue"],
                        &["magenta", "orange", "violet", "azure", "rose"],
                    ),
                ],
                config,
                samples_per_combination: 1000,
                test_samples_per_tuple: 100,
                test_groups: TestGroupSource::Balanced,
                colors: colors.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
            })
        }
        "color-object" => {
            let rgb: [[u8; 3]; 12] = [
                [0, 100, 0],
                [188, 143, 143],
                [255, 0, 0],
                [255, 215, 0],
                [0, 255, 0],
                [65, 105, 225],
                [255, 20, 147],
                [135, 188, 191],
                [27, 145, 68],
                [48, 101, 53],
                [20, 235, 154],
                [187, 33, 227],
            ];
            let names: Vec<String> = (1..=12).map(|i| format!("C{i}")).collect();
            let refs: Vec<&str> = names.iter().map(String::as_str).collect();
            Ok(SplitPreset {
                name: name.into(),
                domains: vec![
                    domain("object", &OBJECTS_KNOWN, &OBJECTS_UNKNOWN),
                    domain("color", &refs[..6], &refs[6..]),
                ],
                config: generated_only(kind)?,
                samples_per_combination: 1000,
                test_samples_per_tuple: 100,
                test_groups: TestGroupSource::Balanced,
                colors: names.iter().cloned().zip(rgb).collect(),
            })
        }
        "scene-object" => Ok(SplitPreset {
            name: name.into(),
            domains: vec![
                domain("object", &OBJECTS_KNOWN, &OBJECTS_UNKNOWN),
                domain(
                    "scene",
                    &["beach", "canyon", "building", "stair", "desert", "crevasse"],
                    &["ball_pit", "oast_house", "kasbah", "lighthouse", "pagoda", "rock_arch"],
                ),
            ],
            config: generated_only(kind)?,
            samples_per_combination: 1000,
            test_samples_per_tuple: 100,
            test_groups: TestGroupSource::Balanced,
            colors: BTreeMap::new(),
        }),
        "ut-zappos" => {
            if kind != CorrelationKind::Explicit {
                return Err(Error::Config(
                    "preset `ut-zappos` only provides its explicit training combinations".into(),
                ));
            }
            Ok(SplitPreset {
                name: name.into(),
                domains: vec![
                    domain(
                        "material",
                        &["Faux.Leather", "Full.grain.leather", "Leather", "Rubber", "Suede"],
                        &["Canvas", "Nubuck", "Patent.Leather", "Satin", "Synthetic"],
                    ),
                    domain(
                        "type",
                        &[
                            "Boots.Knee.High",
                            "Boots.Mid-Calf",
                            "Shoes.Flats",
                            "Shoes.Heels",
                            "Shoes.Loafers",
                        ],
                        &[
                            "Boots.Ankle",
                            "Sandals",
                            "Shoes.Oxfords",
                            "Shoes.Sneakers.and.Athletic.Shoes",
                        ],
                    ),
                ],
                config: CorrelationConfig::explicit(pairs(&[
                    ("Faux.Leather", "Boots.Knee.High"),
                    ("Faux.Leather", "Boots.Mid-Calf"),
                    ("Faux.Leather", "Shoes.Flats"),
                    ("Full.grain.leather", "Boots.Mid-Calf"),
                    ("Full.grain.leather", "Shoes.Loafers"),
                    ("Leather", "Shoes.Flats"),
                    ("Leather", "Shoes.Heels"),
                    ("Leather", "Shoes.Loafers"),
                    ("Rubber", "Boots.Knee.High"),
                    ("Rubber", "Boots.Mid-Calf"),
                    ("Suede", "Boots.Knee.High"),
                    ("Suede", "Shoes.Flats"),
                    ("Suede", "Shoes.Heels"),
                ])),
                samples_per_combination: 1000,
                test_samples_per_tuple: 100,
                test_groups: TestGroupSource::FromData,
                colors: BTreeMap::new(),
            })
        }
        other => Err(Error::Config(format!(
            "unknown preset `{other}` (available: {})",
            PRESET_NAMES.join(", ")
        ))),
    }
}
