//! TOML run configuration. Unknown keys are rejected everywhere.

use std::path::{Path, PathBuf};

use serde::Deserialize;
use spatter_core::fpp::{FringeSynthParams, Region, DEFAULT_MODULATION_THRESHOLD};
use spatter_core::registration::DbscanParams;
use spatter_core::segmentation::ReferenceConfig;
use spatter_core::svr::{Protocol, SvrHyperparams};
use spatter_core::synth::{FeatureDatasetSpec, FrameBatchSpec, HeightFieldSpec, LayerSceneSpec};

use crate::error::CliError;

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Base seed; every generator seed is derived from it.
    pub seed: u64,
    pub out: Option<PathBuf>,
    pub jobs: Option<usize>,
    pub simulate: SimulateConfig,
    pub register: RegisterConfig,
    pub fpp: FppConfig,
    pub analyze: AnalyzeConfig,
    pub fit: FitConfig,
    pub compare: CompareConfig,
    pub report: ReportConfig,
}

/// With no section present a single default batch frame is written.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulateConfig {
    pub batch: Option<FrameBatchSpec>,
    pub layer: Option<LayerSceneSpec>,
    pub fringe: Option<FringeConfig>,
    pub dataset: Option<FeatureDatasetSpec>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FringeConfig {
    pub height: HeightFieldSpec,
    pub capture: FringeSynthParams,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum SegmenterKind {
    #[default]
    Labelmap,
    Reference,
    Kmeans3,
    Kmeans4,
}

impl SegmenterKind {
    pub fn name(self) -> &'static str {
        match self {
            SegmenterKind::Labelmap => "labelmap",
            SegmenterKind::Reference => "reference",
            SegmenterKind::Kmeans3 => "kmeans3",
            SegmenterKind::Kmeans4 => "kmeans4",
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RegisterConfig {
    /// Directory holding `frames/`, `labels/`, `meta/` and `truth/`;
    /// defaults to the output directory.
    pub input: Option<PathBuf>,
    pub segmenter: SegmenterKind,
    pub dbscan: DbscanParams,
    pub reference: ReferenceConfig,
    pub layer_index: u32,
    /// Four pixel-to-plate correspondences (`x_src,y_src,x_dst,y_dst`);
    /// the fitted homography replaces per-frame plate transforms.
    pub calibration: Option<PathBuf>,
    /// Pixel-to-plate homography as 9 row-major numbers in JSON.
    pub homography: Option<PathBuf>,
    /// Max distance in pixels between a counted cluster and a true
    /// spatter for the cluster to count as a true positive.
    pub match_tolerance: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FppConfig {
    /// Directory with `fringe.json`, `obj_<k>.pgm` and `ref_<k>.pgm`;
    /// defaults to `<out>/fringe`.
    pub input: Option<PathBuf>,
    pub modulation_threshold: f64,
    /// Overrides the header's height-per-radian ratio.
    pub k_h: Option<f64>,
    pub layer: u32,
    /// Regions to evaluate; the whole map when empty.
    pub regions: Vec<RegionConfig>,
}

impl Default for FppConfig {
    fn default() -> Self {
        Self {
            input: None,
            modulation_threshold: DEFAULT_MODULATION_THRESHOLD,
            k_h: None,
            layer: 0,
            regions: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegionConfig {
    #[serde(default)]
    pub bar: u32,
    pub x0: usize,
    pub y0: usize,
    pub width: usize,
    pub height: usize,
}

impl RegionConfig {
    pub fn region(&self) -> Region {
        Region {
            x0: self.x0,
            y0: self.y0,
            width: self.width,
            height: self.height,
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalyzeConfig {
    /// Feature CSV; defaults to `<out>/features.csv`.
    pub features: Option<PathBuf>,
    /// Layer signature JSON for the ejection-angle histogram.
    pub signature: Option<PathBuf>,
    /// Histogram bin width in degrees.
    pub angle_bin: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitConfig {
    /// Any CSV with the named columns; defaults to `<out>/features.csv`.
    pub input: Option<PathBuf>,
    pub x: String,
    pub y: String,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            input: None,
            x: "power_w".into(),
            y: "mean_spatter_count".into(),
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CompareConfig {
    pub features: Option<PathBuf>,
    pub hyperparams: SvrHyperparams,
    pub protocol: Protocol,
    /// Also write each feature set's model trained on all records.
    pub save_models: bool,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReportConfig {
    pub features: Option<PathBuf>,
    /// Per-layer table with `layer, scan_angle_deg, mean_spatter_count,
    /// sa_um` columns, re-emitted with normalized hatch angles.
    pub layer_table: Option<PathBuf>,
    pub signature: Option<PathBuf>,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_is_valid() {
        let c = RunConfig::parse("").unwrap();
        assert!(c.simulate.batch.is_none());
        assert_eq!(c.register.segmenter, SegmenterKind::Labelmap);
    }

    #[test]
    fn unknown_keys_name_the_key() {
        for text in ["bogus = 1", "[simulate.batch]\nframez = 3", "[compare.hyperparams]\nnu = 0.1"] {
            let e = RunConfig::parse(text).unwrap_err();
            assert_eq!(e.exit_code(), 2);
            let msg = e.to_string();
            let key = text.rsplit('\n').next().unwrap().split(' ').next().unwrap();
            assert!(msg.contains(key), "{msg}");
        }
    }

    #[test]
    fn nested_sections_parse() {
        let c = RunConfig::parse(
            r#"
seed = 9
[simulate.batch]
frames = 4
flare_fraction = 0.5
[simulate.batch.template]
spatter_reach = 40.0
[register]
segmenter = "kmeans3"
dbscan = { eps = 2.0, min_pts = 1 }
[fpp]
regions = [{ bar = 2, x0 = 0, y0 = 0, width = 8, height = 8 }]
[compare]
protocol = { kind = "k_fold", k = 6 }
"#,
        )
        .unwrap();
        assert_eq!(c.seed, 9);
        assert_eq!(c.simulate.batch.unwrap().template.spatter_reach, 40.0);
        assert_eq!(c.register.segmenter, SegmenterKind::Kmeans3);
        assert_eq!(c.fpp.regions[0].bar, 2);
        assert_eq!(c.compare.protocol, Protocol::KFold { k: 6 });
    }
}
