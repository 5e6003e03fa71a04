//! Sensor-log ingestion, thermal-cycle phase tagging, layer selection, and
//! regression-set assembly.
//!
//! A dataset is an ordered list of [`ProcessRecord`]s sampled at a nominal
//! 1 Hz. Each record is tagged with a [`PhaseTag`] (layer number plus a
//! heating/cooling stage); the heating and cooling samples of a layer
//! partition that layer's thermal cycle. Tagged datasets feed the
//! differentiation and regression stages.
//!
//! Input is CSV with a header row. A [`ColumnSchema`] maps file column names
//! to canonical channels and may declare explicit layer/stage columns; when
//! those are absent an automatic segmentation rule tags the records from the
//! spindle-speed and traverse-velocity channels.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::smoothdiff::DerivativeSeries;

/// Canonical channel names used across CSV files, schemas, and term
/// libraries.
pub mod channel {
    pub const T: &str = "t";
    pub const T_TOOL: &str = "T_tool";
    pub const T_BUILD: [&str; 4] = ["T_build_1", "T_build_2", "T_build_3", "T_build_4"];
    pub const OMEGA: &str = "omega";
    pub const F_T: &str = "f_t";
    pub const F_M: &str = "f_m";
    pub const T_F: &str = "T_f";
    pub const P_F: &str = "P_f";
    pub const T_M: &str = "T_m";
    pub const FORCE_M: &str = "F_m";
    pub const S: [&str; 3] = ["s_x", "s_y", "s_z"];
    pub const V: [&str; 3] = ["v_x", "v_y", "v_z"];

    /// Distance to the moving heat source; computed, never ingested.
    pub const DIST: &str = "d";
    pub const T_BUILD_FEATURE: &str = "T_build";

    /// Every channel a well-formed log must provide, in canonical order.
    pub const MANDATORY: [&str; 18] = [
        T,
        T_TOOL,
        "T_build_1",
        "T_build_2",
        "T_build_3",
        "T_build_4",
        OMEGA,
        F_T,
        F_M,
        T_F,
        P_F,
        T_M,
        FORCE_M,
        "s_x",
        "s_y",
        "s_z",
        "v_x",
        "v_y",
        "v_z",
    ];
}

/// One timestamped row of all in-process channels, in canonical units
/// (°C, rpm, N·m, N, W, mm, mm/min for feeds, mm/s for velocities, s).
#[derive(Debug, Clone, PartialEq)]
pub struct ProcessRecord {
    pub t: f64,
    pub tool_temp: f64,
    pub build_temps: [f64; 4],
    /// Spindle speed (rpm).
    pub spindle_rpm: f64,
    /// Tool traverse feed (mm/min).
    pub traverse_feed: f64,
    /// Feedstock feed (mm/min).
    pub feedstock_feed: f64,
    /// Spindle torque (N·m).
    pub spindle_torque: f64,
    /// Spindle power (W).
    pub spindle_power: f64,
    /// Feedstock servo torque (N·m).
    pub feedstock_torque: f64,
    /// Feedstock actuator force (N).
    pub feedstock_force: f64,
    /// Tool bottom-center position (mm).
    pub tool_pos: [f64; 3],
    /// Tool velocity (mm/s).
    pub tool_vel: [f64; 3],
}

impl ProcessRecord {
    /// Scalar channel lookup by canonical name (positions and velocities by
    /// component).
    pub fn scalar(&self, name: &str) -> Option<f64> {
        use channel as ch;
        Some(match name {
            ch::T => self.t,
            ch::T_TOOL => self.tool_temp,
            "T_build_1" => self.build_temps[0],
            "T_build_2" => self.build_temps[1],
            "T_build_3" => self.build_temps[2],
            "T_build_4" => self.build_temps[3],
            ch::OMEGA => self.spindle_rpm,
            ch::F_T => self.traverse_feed,
            ch::F_M => self.feedstock_feed,
            ch::T_F => self.spindle_torque,
            ch::P_F => self.spindle_power,
            ch::T_M => self.feedstock_torque,
            ch::FORCE_M => self.feedstock_force,
            "s_x" => self.tool_pos[0],
            "s_y" => self.tool_pos[1],
            "s_z" => self.tool_pos[2],
            "v_x" => self.tool_vel[0],
            "v_y" => self.tool_vel[1],
            "v_z" => self.tool_vel[2],
            _ => return None,
        })
    }
}

/// Locations of the four embedded build thermocouples (mm).
#[derive(Debug, Clone, PartialEq)]
pub struct SensorLayout {
    pub tc_locations: [[f64; 3]; 4],
    /// Embedding depth below the build surface (mm).
    pub depth_offset: f64,
}

impl SensorLayout {
    pub fn new(tc_locations: [[f64; 3]; 4], depth_offset: f64) -> Result<Self> {
        for i in 0..4 {
            for j in i + 1..4 {
                if tc_locations[i] == tc_locations[j] {
                    return Err(Error::Config(format!(
                        "sensor locations {} and {} coincide",
                        i + 1,
                        j + 1
                    )));
                }
            }
        }
        Ok(Self {
            tc_locations,
            depth_offset,
        })
    }

    /// Default template: four sensors equally spaced along the deposition
    /// track, embedded 2.54 mm below the surface.
    pub fn equally_spaced(track_length: f64) -> Self {
        let depth = 2.54;
        let mut locs = [[0.0; 3]; 4];
        for (i, loc) in locs.iter_mut().enumerate() {
            *loc = [track_length * (i as f64 + 1.0) / 5.0, 0.0, -depth];
        }
        Self {
            tc_locations: locs,
            depth_offset: depth,
        }
    }
}

impl Default for SensorLayout {
    fn default() -> Self {
        Self::equally_spaced(216.0)
    }
}

/// Heating or cooling stage of a thermal cycle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Stage {
    Heat,
    Cool,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Stage::Heat => write!(f, "heat"),
            Stage::Cool => write!(f, "cool"),
        }
    }
}

impl std::str::FromStr for Stage {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "heat" | "heating" => Ok(Stage::Heat),
            "cool" | "cooling" => Ok(Stage::Cool),
            other => Err(Error::Data(format!("unknown stage value: {other}"))),
        }
    }
}

/// Layer number plus stage; orders records within the deposition sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PhaseTag {
    pub layer: u32,
    pub stage: Stage,
}

/// Untagged dataset straight from ingestion.
#[derive(Debug, Clone)]
pub struct RawDataset {
    pub records: Vec<ProcessRecord>,
    /// Tags read from explicit layer/stage columns, when the schema declares
    /// them.
    pub explicit_tags: Option<Vec<PhaseTag>>,
    pub dataset_id: String,
}

/// Contiguous run of samples sharing one phase tag.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Segment {
    pub layer: u32,
    pub stage: Stage,
    /// Half-open sample range within the dataset.
    pub start: usize,
    pub end: usize,
}

impl Segment {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.start == self.end
    }
}

/// Ordered records with one phase tag each.
#[derive(Debug, Clone, PartialEq)]
pub struct PhasedDataset {
    records: Vec<ProcessRecord>,
    tags: Vec<PhaseTag>,
    pub layout: SensorLayout,
    pub dataset_id: String,
}

impl PhasedDataset {
    pub fn new(
        records: Vec<ProcessRecord>,
        tags: Vec<PhaseTag>,
        layout: SensorLayout,
        dataset_id: String,
    ) -> Result<Self> {
        if records.len() != tags.len() {
            return Err(Error::Data(format!(
                "tag count {} does not match record count {}",
                tags.len(),
                records.len()
            )));
        }
        for w in tags.windows(2) {
            if w[1] < w[0] {
                return Err(Error::Data(format!(
                    "phase tags are not monotone: layer {} {} follows layer {} {}",
                    w[1].layer, w[1].stage, w[0].layer, w[0].stage
                )));
            }
        }
        if let Some(first) = tags.first() {
            if first.layer < 1 {
                return Err(Error::Data("layer numbers start at 1".into()));
            }
        }
        Ok(Self {
            records,
            tags,
            layout,
            dataset_id,
        })
    }

    pub fn records(&self) -> &[ProcessRecord] {
        &self.records
    }

    pub fn tags(&self) -> &[PhaseTag] {
        &self.tags
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn layer_range(&self) -> Option<(u32, u32)> {
        Some((self.tags.first()?.layer, self.tags.last()?.layer))
    }

    pub fn layer_count(&self) -> u32 {
        self.layer_range().map(|(_, hi)| hi).unwrap_or(0)
    }

    /// Maximal runs of equal (layer, stage), in order.
    pub fn segments(&self) -> Vec<Segment> {
        let mut out = Vec::new();
        let mut start = 0;
        for i in 1..=self.tags.len() {
            if i == self.tags.len() || self.tags[i] != self.tags[start] {
                out.push(Segment {
                    layer: self.tags[start].layer,
                    stage: self.tags[start].stage,
                    start,
                    end: i,
                });
                start = i;
            }
        }
        out
    }

    /// A scalar channel as a plain series.
    pub fn series(&self, name: &str) -> Result<Vec<f64>> {
        self.records
            .iter()
            .map(|r| {
                r.scalar(name)
                    .ok_or_else(|| Error::Schema(format!("unknown channel: {name}")))
            })
            .collect()
    }

    pub fn timestamps(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.t).collect()
    }

    /// Write back out as canonical CSV with `layer` and `stage` columns.
    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        let mut header: Vec<&str> = channel::MANDATORY.to_vec();
        header.push("layer");
        header.push("stage");
        wtr.write_record(&header)
            .map_err(|e| Error::Data(format!("csv write: {e}")))?;
        for (rec, tag) in self.records.iter().zip(&self.tags) {
            let mut row: Vec<String> = channel::MANDATORY
                .iter()
                .map(|name| format_value(rec.scalar(name).unwrap()))
                .collect();
            row.push(tag.layer.to_string());
            row.push(tag.stage.to_string());
            wtr.write_record(&row)
                .map_err(|e| Error::Data(format!("csv write: {e}")))?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Shortest decimal form that round-trips the value exactly.
fn format_value(v: f64) -> String {
    let mut s = format!("{v}");
    if s.parse::<f64>() != Ok(v) {
        s = format!("{v:.17e}");
    }
    s
}

/// Euclidean distance between the tool bottom center and a fixed location;
/// the rotating deposit is treated as a point heat source at the tool
/// position.
pub fn tool_distance(s_tool: [f64; 3], s: [f64; 3]) -> f64 {
    let dx = s_tool[0] - s[0];
    let dy = s_tool[1] - s[1];
    let dz = s_tool[2] - s[2];
    (dx * dx + dy * dy + dz * dz).sqrt()
}

// ---------------------------------------------------------------------------
// Schema-mapped CSV ingestion
// ---------------------------------------------------------------------------

#[derive(Debug, Default, Deserialize)]
struct SchemaFile {
    #[serde(default)]
    columns: BTreeMap<String, String>,
    #[serde(default)]
    phase: BTreeMap<String, String>,
    #[serde(default)]
    units: BTreeMap<String, String>,
}

/// Maps canonical channels to CSV column names, declares optional
/// layer/stage columns, and records source units for conversion.
#[derive(Debug, Clone)]
pub struct ColumnSchema {
    /// canonical channel -> column name in the file
    columns: BTreeMap<String, String>,
    layer_column: Option<String>,
    stage_column: Option<String>,
    /// canonical channel -> source unit
    units: BTreeMap<String, String>,
}

impl Default for ColumnSchema {
    /// Identity mapping: file columns already use canonical names, including
    /// `layer`/`stage` phase columns.
    fn default() -> Self {
        let columns = channel::MANDATORY
            .iter()
            .map(|&c| (c.to_string(), c.to_string()))
            .collect();
        Self {
            columns,
            layer_column: Some("layer".into()),
            stage_column: Some("stage".into()),
            units: BTreeMap::new(),
        }
    }
}

impl ColumnSchema {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let file: SchemaFile =
            toml::from_str(text).map_err(|e| Error::Schema(format!("schema file: {e}")))?;
        let mut schema = ColumnSchema {
            columns: BTreeMap::new(),
            layer_column: file.phase.get("layer").cloned(),
            stage_column: file.phase.get("stage").cloned(),
            units: file.units,
        };
        for (canonical, column) in &file.columns {
            if !channel::MANDATORY.contains(&canonical.as_str()) {
                return Err(Error::Schema(format!(
                    "schema maps unknown channel: {canonical}"
                )));
            }
            schema.columns.insert(canonical.clone(), column.clone());
        }
        // Unmapped channels default to their canonical names.
        for &c in &channel::MANDATORY {
            schema
                .columns
                .entry(c.to_string())
                .or_insert_with(|| c.to_string());
        }
        Ok(schema)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }

    fn column_for(&self, canonical: &str) -> &str {
        self.columns
            .get(canonical)
            .map(|s| s.as_str())
            .unwrap_or(canonical)
    }
}

/// Multiplier converting a source unit to the canonical unit of the channel.
fn unit_factor(canonical: &str, unit: &str) -> Result<f64> {
    use channel as ch;
    let ok = |f: f64| Ok(f);
    match canonical {
        ch::T => match unit {
            "s" => ok(1.0),
            "ms" => ok(1e-3),
            _ => Err(Error::Schema(format!("unsupported time unit: {unit}"))),
        },
        "s_x" | "s_y" | "s_z" => match unit {
            "mm" => ok(1.0),
            "m" => ok(1000.0),
            _ => Err(Error::Schema(format!("unsupported length unit: {unit}"))),
        },
        ch::F_T | ch::F_M => match unit {
            "mm/min" => ok(1.0),
            "mm/s" => ok(60.0),
            _ => Err(Error::Schema(format!("unsupported feed unit: {unit}"))),
        },
        "v_x" | "v_y" | "v_z" => match unit {
            "mm/s" => ok(1.0),
            "mm/min" => ok(1.0 / 60.0),
            _ => Err(Error::Schema(format!("unsupported velocity unit: {unit}"))),
        },
        _ => match unit {
            "degC" | "rpm" | "N.m" | "N" | "W" => ok(1.0),
            _ => Err(Error::Schema(format!(
                "unsupported unit for {canonical}: {unit}"
            ))),
        },
    }
}

/// Load a CSV sensor log into records, converting units to canonical.
///
/// Unknown columns are ignored with a warning. Timestamps must be strictly
/// increasing; temperatures must be finite.
pub fn load_dataset(path: &Path, schema: &ColumnSchema) -> Result<RawDataset> {
    let file = std::fs::File::open(path)?;
    let dataset_id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".into());
    let mut rdr = csv::Reader::from_reader(file);
    let headers = rdr
        .headers()
        .map_err(|e| Error::Data(format!("csv header: {e}")))?
        .clone();

    let find = |name: &str| headers.iter().position(|h| h == name);

    let mut col_idx = Vec::with_capacity(channel::MANDATORY.len());
    let mut factors = Vec::with_capacity(channel::MANDATORY.len());
    let mut used: Vec<usize> = Vec::new();
    for &canonical in &channel::MANDATORY {
        let column = schema.column_for(canonical);
        let idx = find(column).ok_or_else(|| {
            Error::Schema(format!("missing mandatory column: {canonical} ({column})"))
        })?;
        let factor = match schema.units.get(canonical) {
            Some(unit) => unit_factor(canonical, unit)?,
            None => 1.0,
        };
        col_idx.push(idx);
        factors.push(factor);
        used.push(idx);
    }

    let layer_idx = match &schema.layer_column {
        Some(c) => find(c),
        None => None,
    };
    let stage_idx = match &schema.stage_column {
        Some(c) => find(c),
        None => None,
    };
    used.extend(layer_idx);
    used.extend(stage_idx);
    for (i, h) in headers.iter().enumerate() {
        if !used.contains(&i) {
            log::warn!("ignoring unknown column: {h}");
        }
    }
    let explicit = layer_idx.is_some() && stage_idx.is_some();

    let mut records = Vec::new();
    let mut tags = Vec::new();
    for (row, result) in rdr.records().enumerate() {
        let record = result.map_err(|e| Error::Data(format!("data row {row}: {e}")))?;
        let mut values = [0.0f64; 18 + 1];
        for (slot, (&idx, &factor)) in col_idx.iter().zip(&factors).enumerate() {
            let raw = record.get(idx).unwrap_or("");
            let v: f64 = raw.trim().parse().map_err(|_| {
                Error::Data(format!(
                    "data row {row}: cannot parse {} value: {raw:?}",
                    channel::MANDATORY[slot]
                ))
            })?;
            values[slot] = v * factor;
        }
        let rec = ProcessRecord {
            t: values[0],
            tool_temp: values[1],
            build_temps: [values[2], values[3], values[4], values[5]],
            spindle_rpm: values[6],
            traverse_feed: values[7],
            feedstock_feed: values[8],
            spindle_torque: values[9],
            spindle_power: values[10],
            feedstock_torque: values[11],
            feedstock_force: values[12],
            tool_pos: [values[13], values[14], values[15]],
            tool_vel: [values[16], values[17], values[18]],
        };
        if let Some(prev) = records.last() {
            let prev: &ProcessRecord = prev;
            if rec.t <= prev.t {
                return Err(Error::Data(format!(
                    "non-monotone timestamp at data row {row}"
                )));
            }
        }
        if !rec.tool_temp.is_finite() || rec.build_temps.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data(format!(
                "non-finite temperature at data row {row}"
            )));
        }
        if rec.spindle_rpm < 0.0 {
            return Err(Error::Data(format!(
                "negative spindle speed at data row {row}"
            )));
        }
        if explicit {
            let layer: u32 = record
                .get(layer_idx.unwrap())
                .unwrap_or("")
                .trim()
                .parse()
                .map_err(|_| Error::Data(format!("data row {row}: cannot parse layer")))?;
            let stage: Stage = record.get(stage_idx.unwrap()).unwrap_or("").trim().parse()?;
            if layer < 1 {
                return Err(Error::Data(format!("data row {row}: layer must be >= 1")));
            }
            tags.push(PhaseTag { layer, stage });
        }
        records.push(rec);
    }

    Ok(RawDataset {
        records,
        explicit_tags: if explicit { Some(tags) } else { None },
        dataset_id,
    })
}

// ---------------------------------------------------------------------------
// Phase segmentation and layer selection
// ---------------------------------------------------------------------------

/// How records are assigned to heating/cooling stages.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SegmentationRule {
    /// Copy the explicit layer/stage columns read at ingestion.
    Explicit,
    /// Heating while the spindle turns above `omega_threshold` rpm AND the
    /// tool traverses horizontally faster than `speed_gate` mm/s; cooling
    /// otherwise. The layer number increments at each cool-to-heat
    /// transition.
    Auto {
        omega_threshold: f64,
        speed_gate: f64,
    },
}

impl Default for SegmentationRule {
    fn default() -> Self {
        SegmentationRule::Auto {
            omega_threshold: 50.0,
            speed_gate: 0.1,
        }
    }
}

/// Tag every record with a layer and stage.
pub fn segment_phases(
    raw: &RawDataset,
    rule: SegmentationRule,
    layout: SensorLayout,
) -> Result<PhasedDataset> {
    if raw.records.is_empty() {
        return Err(Error::Data("cannot segment an empty dataset".into()));
    }
    let tags = match rule {
        SegmentationRule::Explicit => raw.explicit_tags.clone().ok_or_else(|| {
            Error::Schema("explicit segmentation requested but the schema declares no layer/stage columns".into())
        })?,
        SegmentationRule::Auto {
            omega_threshold,
            speed_gate,
        } => {
            let mut tags = Vec::with_capacity(raw.records.len());
            let mut layer = 1u32;
            let mut prev_stage: Option<Stage> = None;
            for rec in &raw.records {
                let horizontal_speed = (rec.tool_vel[0].powi(2) + rec.tool_vel[1].powi(2)).sqrt();
                let stage = if rec.spindle_rpm >= omega_threshold && horizontal_speed > speed_gate
                {
                    Stage::Heat
                } else {
                    Stage::Cool
                };
                if prev_stage == Some(Stage::Cool) && stage == Stage::Heat {
                    layer += 1;
                }
                prev_stage = Some(stage);
                tags.push(PhaseTag { layer, stage });
            }
            if !tags.iter().any(|t| t.stage == Stage::Heat) {
                return Err(Error::Data(
                    "automatic segmentation found no heating samples".into(),
                ));
            }
            tags
        }
    };
    PhasedDataset::new(raw.records.clone(), tags, layout, raw.dataset_id.clone())
}

/// Keep only records whose layer lies in `[lo, hi]`, preserving order.
///
/// Layer numbers are kept as-is by default so that original layer indices
/// stay addressable; pass `renumber` to shift the selection back to 1.
pub fn select_layers(
    phased: &PhasedDataset,
    lo: u32,
    hi: u32,
    renumber: bool,
) -> Result<PhasedDataset> {
    let max_layer = phased.layer_count();
    if lo < 1 || hi < lo || hi > max_layer {
        return Err(Error::Config(format!(
            "layer range [{lo}, {hi}] outside available layers [1, {max_layer}]"
        )));
    }
    let mut records = Vec::new();
    let mut tags = Vec::new();
    for (rec, tag) in phased.records.iter().zip(&phased.tags) {
        if tag.layer >= lo && tag.layer <= hi {
            records.push(rec.clone());
            let layer = if renumber { tag.layer - lo + 1 } else { tag.layer };
            tags.push(PhaseTag {
                layer,
                stage: tag.stage,
            });
        }
    }
    if records.is_empty() {
        return Err(Error::Config(format!(
            "layer range [{lo}, {hi}] selects no records"
        )));
    }
    PhasedDataset::new(records, tags, phased.layout.clone(), phased.dataset_id.clone())
}

// ---------------------------------------------------------------------------
// Regression-set assembly
// ---------------------------------------------------------------------------

/// Which governing equation the regression set trains.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    ToolHeat,
    ToolCool,
    Build,
}

impl ModelKind {
    /// Feature channels offered to the candidate library for this kind.
    pub fn default_features(&self) -> &'static [&'static str] {
        match self {
            ModelKind::ToolHeat => &[
                channel::T_TOOL,
                channel::OMEGA,
                channel::T_F,
                channel::F_M,
                channel::FORCE_M,
            ],
            ModelKind::ToolCool => &[channel::T_TOOL],
            ModelKind::Build => &[channel::T_BUILD_FEATURE, channel::T_TOOL, channel::DIST],
        }
    }

    pub fn stage_filter(&self) -> Option<Stage> {
        match self {
            ModelKind::ToolHeat => Some(Stage::Heat),
            ModelKind::ToolCool => Some(Stage::Cool),
            ModelKind::Build => None,
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModelKind::ToolHeat => write!(f, "tool-heat"),
            ModelKind::ToolCool => write!(f, "tool-cool"),
            ModelKind::Build => write!(f, "build"),
        }
    }
}

/// Per-sample feature rows plus the temperature-derivative target.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressionSet {
    channels: Vec<String>,
    /// Row-major, `target.len()` x `channels.len()`.
    values: Vec<f64>,
    target: Vec<f64>,
    /// (dataset id, target channel, phase filter)
    provenance: (String, String, String),
}

impl RegressionSet {
    pub fn new(
        channels: Vec<String>,
        values: Vec<f64>,
        target: Vec<f64>,
        provenance: (String, String, String),
    ) -> Result<Self> {
        if values.len() != channels.len() * target.len() {
            return Err(Error::Config(format!(
                "row values ({}) do not match {} channels x {} samples",
                values.len(),
                channels.len(),
                target.len()
            )));
        }
        if !values.iter().chain(target.iter()).all(|v| v.is_finite()) {
            return Err(Error::Data(
                "regression set contains non-finite values".into(),
            ));
        }
        Ok(Self {
            channels,
            values,
            target,
            provenance,
        })
    }

    pub fn channels(&self) -> &[String] {
        &self.channels
    }

    pub fn len(&self) -> usize {
        self.target.len()
    }

    pub fn is_empty(&self) -> bool {
        self.target.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.channels.len();
        &self.values[i * c..(i + 1) * c]
    }

    pub fn target(&self) -> &[f64] {
        &self.target
    }

    pub fn provenance(&self) -> &(String, String, String) {
        &self.provenance
    }
}

/// Assemble the regression set for one model kind.
///
/// `derivs` carries one derivative series per target channel: a single
/// series (tool temperature) for the tool kinds, one series per selected
/// sensor (in `tc_selection` order) for the build kind. Samples with masked
/// derivatives are dropped.
///
/// For the build kind the rows of all selected sensors are stacked into one
/// set, with the source-distance feature computed from the tool position and
/// each sensor's location.
pub fn build_regression_set(
    phased: &PhasedDataset,
    kind: ModelKind,
    derivs: &[DerivativeSeries],
    tc_selection: &[usize],
) -> Result<RegressionSet> {
    let n = phased.len();
    let expected_series = match kind {
        ModelKind::Build => tc_selection.len(),
        _ => 1,
    };
    if derivs.len() != expected_series {
        return Err(Error::Config(format!(
            "{kind} expects {expected_series} derivative series, got {}",
            derivs.len()
        )));
    }
    for d in derivs {
        if d.len() != n {
            return Err(Error::Config(format!(
                "derivative series length {} does not match dataset length {n}",
                d.len()
            )));
        }
    }

    let channels: Vec<String> = kind
        .default_features()
        .iter()
        .map(|s| s.to_string())
        .collect();
    let phase_desc = match kind.stage_filter() {
        Some(s) => s.to_string(),
        None => "heat+cool".to_string(),
    };

    let mut values = Vec::new();
    let mut target = Vec::new();
    match kind {
        ModelKind::ToolHeat | ModelKind::ToolCool => {
            let want = kind.stage_filter().unwrap();
            let deriv = &derivs[0];
            for (i, (rec, tag)) in phased.records().iter().zip(phased.tags()).enumerate() {
                if tag.stage != want || !deriv.is_valid(i) {
                    continue;
                }
                for name in &channels {
                    values.push(rec.scalar(name).unwrap());
                }
                target.push(deriv.values()[i]);
            }
            if target.is_empty() {
                return Err(Error::Data(format!(
                    "no usable {want} samples for {kind} regression"
                )));
            }
        }
        ModelKind::Build => {
            for (series, &tc) in derivs.iter().zip(tc_selection) {
                if tc < 1 || tc > 4 {
                    return Err(Error::Config(format!("sensor index {tc} outside 1..=4")));
                }
                let loc = phased.layout.tc_locations[tc - 1];
                for (i, rec) in phased.records().iter().enumerate() {
                    if !series.is_valid(i) {
                        continue;
                    }
                    values.push(rec.build_temps[tc - 1]);
                    values.push(rec.tool_temp);
                    values.push(tool_distance(rec.tool_pos, loc));
                    target.push(series.values()[i]);
                }
            }
            if target.is_empty() {
                return Err(Error::Data("no usable samples for build regression".into()));
            }
        }
    }

    RegressionSet::new(
        channels,
        values,
        target,
        (phased.dataset_id.clone(), format!("{kind}"), phase_desc),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::smoothdiff::DerivativeSeries;
    use std::io::Write;

    pub(crate) fn blank_record(t: f64) -> ProcessRecord {
        ProcessRecord {
            t,
            tool_temp: 0.0,
            build_temps: [0.0; 4],
            spindle_rpm: 0.0,
            traverse_feed: 0.0,
            feedstock_feed: 0.0,
            spindle_torque: 0.0,
            spindle_power: 0.0,
            feedstock_torque: 0.0,
            feedstock_force: 0.0,
            tool_pos: [0.0; 3],
            tool_vel: [0.0; 3],
        }
    }

    fn csv_header() -> String {
        channel::MANDATORY.join(",")
    }

    fn csv_row(t: f64, omega: f64, torque: f64) -> String {
        let mut rec = blank_record(t);
        rec.spindle_rpm = omega;
        rec.spindle_torque = torque;
        channel::MANDATORY
            .iter()
            .map(|c| rec.scalar(c).unwrap().to_string())
            .collect::<Vec<_>>()
            .join(",")
    }

    fn write_temp_csv(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f.flush().unwrap();
        f
    }

    fn schema_no_phase() -> ColumnSchema {
        let mut s = ColumnSchema::default();
        s.layer_column = None;
        s.stage_column = None;
        s
    }

    #[test]
    fn load_three_row_file() {
        let content = format!(
            "{}\n{}\n{}\n{}\n",
            csv_header(),
            csv_row(0.0, 100.0, 5.0),
            csv_row(1.0, 100.0, 5.0),
            csv_row(2.0, 100.0, 5.0)
        );
        let f = write_temp_csv(&content);
        let raw = load_dataset(f.path(), &schema_no_phase()).unwrap();
        assert_eq!(raw.records.len(), 3);
        assert_eq!(raw.records[1].spindle_rpm, 100.0);
    }

    #[test]
    fn missing_spindle_torque_column_is_schema_error() {
        let header: Vec<&str> = channel::MANDATORY
            .iter()
            .copied()
            .filter(|&c| c != channel::T_F)
            .collect();
        let row: Vec<&str> = header.iter().map(|_| "0").collect();
        let content = format!("{}\n1,{}\n", header.join(","), row[1..].join(","));
        let f = write_temp_csv(&content);
        let err = load_dataset(f.path(), &schema_no_phase()).unwrap_err();
        match err {
            Error::Schema(msg) => assert!(msg.contains("T_f"), "got: {msg}"),
            other => panic!("expected schema error, got {other:?}"),
        }
    }

    #[test]
    fn non_monotone_timestamps_name_first_offending_row() {
        let content = format!(
            "{}\n{}\n{}\n{}\n",
            csv_header(),
            csv_row(0.0, 0.0, 0.0),
            csv_row(5.0, 0.0, 0.0),
            csv_row(5.0, 0.0, 0.0)
        );
        let f = write_temp_csv(&content);
        let err = load_dataset(f.path(), &schema_no_phase()).unwrap_err();
        match err {
            Error::Data(msg) => assert!(msg.contains("row 2"), "got: {msg}"),
            other => panic!("expected data error, got {other:?}"),
        }
    }

    fn make_raw(omegas: &[f64], speeds: &[f64]) -> RawDataset {
        let records = omegas
            .iter()
            .zip(speeds)
            .enumerate()
            .map(|(i, (&omega, &vx))| {
                let mut r = blank_record(i as f64);
                r.spindle_rpm = omega;
                r.tool_vel = [vx, 0.0, 0.0];
                r
            })
            .collect();
        RawDataset {
            records,
            explicit_tags: None,
            dataset_id: "test".into(),
        }
    }

    #[test]
    fn explicit_tags_pass_through() {
        let mut raw = make_raw(&[0.0, 0.0], &[0.0, 0.0]);
        let tags = vec![
            PhaseTag { layer: 1, stage: Stage::Heat },
            PhaseTag { layer: 1, stage: Stage::Cool },
        ];
        raw.explicit_tags = Some(tags.clone());
        let phased =
            segment_phases(&raw, SegmentationRule::Explicit, SensorLayout::default()).unwrap();
        assert_eq!(phased.tags(), tags.as_slice());
    }

    #[test]
    fn auto_rule_hand_walk() {
        // Spindle at deposition speed with traverse for 7 samples, then
        // parked with the spindle stopped: heat block then cool block.
        let omegas = [350.0, 350.0, 135.0, 135.0, 135.0, 135.0, 135.0, 135.0, 0.0, 0.0];
        let speeds = [2.0, 2.0, 2.0, 2.0, 2.0, 2.0, 2.0, 2.0, 0.0, 0.0];
        let raw = make_raw(&omegas, &speeds);
        let phased =
            segment_phases(&raw, SegmentationRule::default(), SensorLayout::default()).unwrap();
        let stages: Vec<Stage> = phased.tags().iter().map(|t| t.stage).collect();
        assert_eq!(&stages[..8], &[Stage::Heat; 8]);
        assert_eq!(&stages[8..], &[Stage::Cool; 2]);
        assert!(phased.tags().iter().all(|t| t.layer == 1));
    }

    #[test]
    fn auto_rule_layer_increments_on_cool_to_heat() {
        let omegas = [135.0, 135.0, 0.0, 0.0, 135.0, 135.0, 0.0];
        let speeds = [2.0, 2.0, 0.0, 0.0, 2.0, 2.0, 0.0];
        let raw = make_raw(&omegas, &speeds);
        let phased =
            segment_phases(&raw, SegmentationRule::default(), SensorLayout::default()).unwrap();
        let layers: Vec<u32> = phased.tags().iter().map(|t| t.layer).collect();
        assert_eq!(layers, vec![1, 1, 1, 1, 2, 2, 2]);
    }

    #[test]
    fn all_zero_spindle_is_segmentation_error() {
        let raw = make_raw(&[0.0; 5], &[0.0; 5]);
        let err =
            segment_phases(&raw, SegmentationRule::default(), SensorLayout::default()).unwrap_err();
        assert!(matches!(err, Error::Data(_)));
    }

    fn layered_dataset(layers: u32, per_stage: usize) -> PhasedDataset {
        let mut records = Vec::new();
        let mut tags = Vec::new();
        let mut t = 0.0;
        for layer in 1..=layers {
            for stage in [Stage::Heat, Stage::Cool] {
                for _ in 0..per_stage {
                    records.push(blank_record(t));
                    tags.push(PhaseTag { layer, stage });
                    t += 1.0;
                }
            }
        }
        PhasedDataset::new(records, tags, SensorLayout::default(), "test".into()).unwrap()
    }

    #[test]
    fn select_layers_trains_split() {
        let ds = layered_dataset(30, 3);
        let sel = select_layers(&ds, 5, 20, false).unwrap();
        assert_eq!(sel.layer_range(), Some((5, 20)));
        assert_eq!(sel.len(), 16 * 6);
    }

    #[test]
    fn select_layers_full_range_is_identity() {
        let ds = layered_dataset(4, 2);
        let sel = select_layers(&ds, 1, 4, false).unwrap();
        assert_eq!(sel.records(), ds.records());
        assert_eq!(sel.tags(), ds.tags());
    }

    #[test]
    fn select_layers_out_of_range_errors() {
        let ds = layered_dataset(30, 1);
        assert!(matches!(
            select_layers(&ds, 31, 40, false),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn select_layers_renumber_shifts_to_one() {
        let ds = layered_dataset(10, 1);
        let sel = select_layers(&ds, 4, 6, true).unwrap();
        assert_eq!(sel.layer_range(), Some((1, 3)));
    }

    #[test]
    fn tool_distance_cases() {
        assert_eq!(tool_distance([0.0, 0.0, 0.0], [3.0, 4.0, 0.0]), 5.0);
        assert_eq!(tool_distance([1.0, 2.0, 3.0], [1.0, 2.0, 3.0]), 0.0);
        let d = tool_distance([54.0, 0.0, 0.0], [108.0, 0.0, -2.54]);
        assert!((d - 54.0597).abs() < 1e-4);
        assert!((d - (54.0f64.powi(2) + 2.54f64.powi(2)).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn heat_and_cool_partition_each_layer() {
        let ds = layered_dataset(3, 4);
        for seg in ds.segments() {
            assert!(!seg.is_empty());
        }
        let total: usize = ds.segments().iter().map(|s| s.len()).sum();
        assert_eq!(total, ds.len());
    }

    fn all_valid(values: Vec<f64>) -> DerivativeSeries {
        let n = values.len();
        DerivativeSeries::new(values, vec![true; n])
    }

    #[test]
    fn build_set_stacks_selected_sensors() {
        let ds = layered_dataset(2, 3);
        let n = ds.len();
        let derivs = vec![
            all_valid(vec![0.1; n]),
            all_valid(vec![0.2; n]),
            all_valid(vec![0.3; n]),
        ];
        let rs = build_regression_set(&ds, ModelKind::Build, &derivs, &[1, 2, 3]).unwrap();
        assert_eq!(rs.len(), 3 * n);
        assert_eq!(rs.channels(), &["T_build", "T_tool", "d"]);
    }

    #[test]
    fn tool_cool_without_cool_samples_is_data_error() {
        let mut records = Vec::new();
        let mut tags = Vec::new();
        for i in 0..4 {
            records.push(blank_record(i as f64));
            tags.push(PhaseTag { layer: 1, stage: Stage::Heat });
        }
        let ds = PhasedDataset::new(records, tags, SensorLayout::default(), "x".into()).unwrap();
        let derivs = vec![all_valid(vec![0.0; 4])];
        let err = build_regression_set(&ds, ModelKind::ToolCool, &derivs, &[]).unwrap_err();
        assert!(matches!(err, Error::Data(_)));
    }

    #[test]
    fn tool_heat_row_is_projection_of_channels() {
        let mut rec = blank_record(0.0);
        rec.tool_temp = 100.0;
        rec.spindle_rpm = 135.0;
        rec.spindle_torque = 10.0;
        rec.feedstock_feed = 115.8;
        rec.feedstock_force = 6000.0;
        let ds = PhasedDataset::new(
            vec![rec],
            vec![PhaseTag { layer: 1, stage: Stage::Heat }],
            SensorLayout::default(),
            "x".into(),
        )
        .unwrap();
        let derivs = vec![all_valid(vec![0.5])];
        let rs = build_regression_set(&ds, ModelKind::ToolHeat, &derivs, &[]).unwrap();
        assert_eq!(rs.row(0), &[100.0, 135.0, 10.0, 115.8, 6000.0]);
        assert_eq!(rs.target(), &[0.5]);
    }

    #[test]
    fn csv_round_trip_preserves_records_and_tags() {
        let mut ds = layered_dataset(2, 2);
        // Give the channels distinguishable values.
        for (i, r) in ds.records.iter_mut().enumerate() {
            r.tool_temp = 20.0 + i as f64 * 1.5;
            r.build_temps = [1.0, 2.0, 3.0, 4.0 + i as f64];
            r.spindle_rpm = 135.0;
            r.tool_pos = [i as f64 * 2.1, 0.0, 1.52];
        }
        let mut buf = Vec::new();
        ds.write_csv(&mut buf).unwrap();
        let f = write_temp_csv(std::str::from_utf8(&buf).unwrap());
        let raw = load_dataset(f.path(), &ColumnSchema::default()).unwrap();
        let phased = segment_phases(
            &raw,
            SegmentationRule::Explicit,
            SensorLayout::default(),
        )
        .unwrap();
        assert_eq!(phased.records(), ds.records());
        assert_eq!(phased.tags(), ds.tags());
    }

    #[test]
    fn schema_maps_renamed_columns_and_units() {
        let toml_text = r#"
            [columns]
            T_f = "torque_nm"
            f_m = "feed"
            [units]
            f_m = "mm/s"
        "#;
        let schema = ColumnSchema::from_toml_str(toml_text).unwrap();
        let header: Vec<String> = channel::MANDATORY
            .iter()
            .map(|&c| match c {
                "T_f" => "torque_nm".to_string(),
                "f_m" => "feed".to_string(),
                other => other.to_string(),
            })
            .collect();
        let mut rec = blank_record(1.0);
        rec.spindle_torque = 42.0;
        rec.feedstock_feed = 1.93;
        let row: Vec<String> = channel::MANDATORY
            .iter()
            .map(|c| rec.scalar(c).unwrap().to_string())
            .collect();
        let content = format!("{}\n{}\n", header.join(","), row.join(","));
        let f = write_temp_csv(&content);
        let raw = load_dataset(f.path(), &schema).unwrap();
        assert_eq!(raw.records[0].spindle_torque, 42.0);
        // mm/s source converts to mm/min.
        assert!((raw.records[0].feedstock_feed - 115.8).abs() < 1e-12);
    }
}
