//! Text and binary file formats.
//!
//! Text formats are line based: a versioned magic header, then
//! space-separated rows. Blank lines and lines starting with `#` are skipped.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::GridSpec;
use crate::imgproc::{BinaryRaster, LabelRaster, Raster};
use crate::nav::{Episode, EpisodeResult};
use crate::qa::{CountQuestion, ANSWER_CAP};
use crate::scene::{AgentState, FloorExtent, LabeledBox, SceneModel, Trajectory};
use crate::{SemanticMap, NUM_CLASSES};

pub const SCENE_MAGIC: &str = "SMAPSCENE";
pub const TRAJ_MAGIC: &str = "SMAPTRAJ";
pub const EPISODES_MAGIC: &str = "SMAPEPIS";
pub const RESULTS_MAGIC: &str = "SMAPNAVRES";
pub const QUESTIONS_MAGIC: &str = "SMAPQA";
pub const ANSWERS_MAGIC: &str = "SMAPANS";
pub const GRID_MAGIC: &[u8; 8] = b"SMAPGRID";
pub const FORMAT_VERSION: u32 = 1;

pub const PALETTE: [[u8; 3]; NUM_CLASSES] = [
    [255, 255, 255],
    [31, 119, 180],
    [255, 127, 14],
    [44, 160, 44],
    [214, 39, 40],
    [148, 103, 189],
    [140, 86, 75],
    [227, 119, 194],
    [127, 127, 127],
    [188, 189, 34],
    [23, 190, 207],
    [174, 199, 232],
    [255, 187, 120],
];

fn read_text(path: &Path) -> Result<String> {
    Ok(fs::read_to_string(path)?)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    Ok(fs::write(path, text)?)
}

/// Content lines as `(line number, fields)`.
struct Rows<'a> {
    source: &'a str,
    rows: Vec<(usize, Vec<&'a str>)>,
}

impl<'a> Rows<'a> {
    fn new(text: &'a str, source: &'a str) -> Self {
        let rows = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
            .map(|(i, l)| (i, l.split_whitespace().collect()))
            .collect();
        Rows { source, rows }
    }

    fn err(&self, line: usize, msg: impl Into<String>) -> Error {
        Error::Parse {
            path: self.source.to_string(),
            line,
            msg: msg.into(),
        }
    }

    /// Strips a `MAGIC 1` header; with `required` false a missing header is
    /// accepted.
    fn header(&mut self, magic: &str, required: bool) -> Result<()> {
        match self.rows.first() {
            Some((line, f)) if f.first() == Some(&magic) => {
                let line = *line;
                if f.len() != 2 || f[1] != FORMAT_VERSION.to_string() {
                    return Err(self.err(line, format!("unsupported {magic} version")));
                }
                self.rows.remove(0);
                Ok(())
            }
            _ if !required => Ok(()),
            Some((line, _)) => Err(self.err(*line, format!("expected '{magic} {FORMAT_VERSION}' header"))),
            None => Err(self.err(0, format!("empty file, expected '{magic} {FORMAT_VERSION}'"))),
        }
    }

    fn num<T: std::str::FromStr>(&self, line: usize, s: &str) -> Result<T> {
        s.parse().map_err(|_| self.err(line, format!("bad number '{s}'")))
    }

    fn expect(&self, line: usize, f: &[&str], tag: &str, n: usize) -> Result<()> {
        if f[0] != tag || f.len() != n {
            return Err(self.err(line, format!("expected '{tag}' row with {} fields", n - 1)));
        }
        Ok(())
    }
}

fn source_name(path: &Path) -> String {
    path.display().to_string()
}

/// Degrees rounded to 1e-9 so headings written from radians read back as
/// the same multiples of the turn step.
fn yaw_to_deg(yaw: f64) -> f64 {
    (yaw.to_degrees() * 1e9).round() / 1e9
}

// Scenes

pub fn scene_to_string(s: &SceneModel) -> String {
    let f = &s.floor;
    let mut out = format!("{SCENE_MAGIC} {FORMAT_VERSION}\nfloor {} {} {} {}\n", f.xmin, f.zmin, f.xmax, f.zmax);
    for b in &s.boxes {
        let _ = writeln!(
            out,
            "box {} {} {} {} {} {} {} {}",
            b.class_id, b.instance_id, b.min[0], b.min[1], b.min[2], b.max[0], b.max[1], b.max[2]
        );
    }
    out
}

pub fn parse_scene(text: &str, source: &str) -> Result<SceneModel> {
    let mut rows = Rows::new(text, source);
    rows.header(SCENE_MAGIC, true)?;
    let mut floor = None;
    let mut boxes = Vec::new();
    for (line, f) in &rows.rows {
        let line = *line;
        match f[0] {
            "floor" => {
                rows.expect(line, f, "floor", 5)?;
                floor = Some(FloorExtent {
                    xmin: rows.num(line, f[1])?,
                    zmin: rows.num(line, f[2])?,
                    xmax: rows.num(line, f[3])?,
                    zmax: rows.num(line, f[4])?,
                });
            }
            "box" => {
                rows.expect(line, f, "box", 9)?;
                let mut v = [0.0; 6];
                for (k, s) in f[3..].iter().enumerate() {
                    v[k] = rows.num(line, s)?;
                }
                boxes.push(LabeledBox {
                    class_id: rows.num(line, f[1])?,
                    instance_id: rows.num(line, f[2])?,
                    min: [v[0], v[1], v[2]],
                    max: [v[3], v[4], v[5]],
                });
            }
            other => return Err(rows.err(line, format!("unknown row '{other}'"))),
        }
    }
    let floor = floor.ok_or_else(|| rows.err(0, "missing floor row"))?;
    let scene = SceneModel { floor, boxes, seed: 0 };
    scene.validate()?;
    Ok(scene)
}

pub fn write_scene(path: &Path, s: &SceneModel) -> Result<()> {
    write_text(path, &scene_to_string(s))
}

pub fn read_scene(path: &Path) -> Result<SceneModel> {
    parse_scene(&read_text(path)?, &source_name(path))
}

// Trajectories

pub fn trajectory_to_string(t: &Trajectory) -> String {
    let mut out = format!("{TRAJ_MAGIC} {FORMAT_VERSION}\ncamera_height {}\n", t.camera_height);
    for (k, s) in t.states.iter().enumerate() {
        let _ = writeln!(out, "step {k} {} {} {}", s.x, s.z, yaw_to_deg(s.yaw));
    }
    out
}

pub fn parse_trajectory(text: &str, source: &str) -> Result<Trajectory> {
    let mut rows = Rows::new(text, source);
    rows.header(TRAJ_MAGIC, true)?;
    let mut height = None;
    let mut states = Vec::new();
    for (line, f) in &rows.rows {
        let line = *line;
        match f[0] {
            "camera_height" => {
                rows.expect(line, f, "camera_height", 2)?;
                height = Some(rows.num::<f64>(line, f[1])?);
            }
            "step" => {
                rows.expect(line, f, "step", 5)?;
                let k: usize = rows.num(line, f[1])?;
                if k != states.len() {
                    return Err(rows.err(line, format!("step {k} out of order, expected {}", states.len())));
                }
                states.push(AgentState {
                    x: rows.num(line, f[2])?,
                    z: rows.num(line, f[3])?,
                    yaw: rows.num::<f64>(line, f[4])?.to_radians(),
                });
            }
            other => return Err(rows.err(line, format!("unknown row '{other}'"))),
        }
    }
    let height = height.ok_or_else(|| rows.err(0, "missing camera_height row"))?;
    Ok(Trajectory::new(states, height))
}

pub fn write_trajectory(path: &Path, t: &Trajectory) -> Result<()> {
    write_text(path, &trajectory_to_string(t))
}

pub fn read_trajectory(path: &Path) -> Result<Trajectory> {
    parse_trajectory(&read_text(path)?, &source_name(path))
}

// Episodes and results

pub fn episodes_to_string(eps: &[Episode]) -> String {
    let mut out = format!("{EPISODES_MAGIC} {FORMAT_VERSION}\n");
    for e in eps {
        let _ = writeln!(out, "episode {} {} {} {} {}", e.id, e.start.x, e.start.z, yaw_to_deg(e.start.yaw), e.target);
    }
    out
}

pub fn parse_episodes(text: &str, source: &str) -> Result<Vec<Episode>> {
    let mut rows = Rows::new(text, source);
    rows.header(EPISODES_MAGIC, true)?;
    let mut out = Vec::new();
    for (line, f) in &rows.rows {
        let line = *line;
        rows.expect(line, f, "episode", 6)?;
        let target: u8 = rows.num(line, f[5])?;
        if target == 0 || target as usize >= NUM_CLASSES {
            return Err(rows.err(line, format!("target class {target} not in 1..=12")));
        }
        out.push(Episode {
            id: rows.num(line, f[1])?,
            start: AgentState {
                x: rows.num(line, f[2])?,
                z: rows.num(line, f[3])?,
                yaw: rows.num::<f64>(line, f[4])?.to_radians(),
            },
            target,
        });
    }
    Ok(out)
}

pub fn write_episodes(path: &Path, eps: &[Episode]) -> Result<()> {
    write_text(path, &episodes_to_string(eps))
}

pub fn read_episodes(path: &Path) -> Result<Vec<Episode>> {
    parse_episodes(&read_text(path)?, &source_name(path))
}

/// One `id success p l d0 d` row per episode; infinite lengths print as `inf`.
pub fn results_to_string(results: &[EpisodeResult]) -> String {
    let mut out = format!("{RESULTS_MAGIC} {FORMAT_VERSION}\n");
    for r in results {
        let _ = writeln!(
            out,
            "{} {} {} {} {} {}",
            r.id,
            r.success as u8,
            r.path_length,
            r.oracle_length,
            r.initial_distance,
            r.final_distance
        );
    }
    out
}

/// Results rows; paths are not stored, so `path` is empty.
pub fn parse_results(text: &str, source: &str) -> Result<Vec<EpisodeResult>> {
    let mut rows = Rows::new(text, source);
    rows.header(RESULTS_MAGIC, false)?;
    let mut out = Vec::new();
    for (line, f) in &rows.rows {
        let line = *line;
        if f.len() != 6 {
            return Err(rows.err(line, "expected 'id success p l d0 d'"));
        }
        let success = match f[1] {
            "0" => false,
            "1" => true,
            s => return Err(rows.err(line, format!("success must be 0 or 1, got '{s}'"))),
        };
        out.push(EpisodeResult {
            id: rows.num(line, f[0])?,
            success,
            path: Vec::new(),
            path_length: rows.num(line, f[2])?,
            oracle_length: rows.num(line, f[3])?,
            initial_distance: rows.num(line, f[4])?,
            final_distance: rows.num(line, f[5])?,
        });
    }
    Ok(out)
}

pub fn write_results(path: &Path, results: &[EpisodeResult]) -> Result<()> {
    write_text(path, &results_to_string(results))
}

pub fn read_results(path: &Path) -> Result<Vec<EpisodeResult>> {
    parse_results(&read_text(path)?, &source_name(path))
}

// Questions and answers

pub fn questions_to_string(qs: &[CountQuestion]) -> String {
    let mut out = format!("{QUESTIONS_MAGIC} {FORMAT_VERSION}\n");
    for q in qs {
        let _ = writeln!(out, "q {} count {}", q.id, q.target);
    }
    out
}

pub fn parse_questions(text: &str, source: &str) -> Result<Vec<CountQuestion>> {
    let mut rows = Rows::new(text, source);
    rows.header(QUESTIONS_MAGIC, true)?;
    let mut out = Vec::new();
    for (line, f) in &rows.rows {
        let line = *line;
        rows.expect(line, f, "q", 4)?;
        if f[2] != "count" {
            return Err(rows.err(line, format!("unsupported question type '{}'", f[2])));
        }
        out.push(CountQuestion::new(rows.num(line, f[1])?, rows.num(line, f[3])?)?);
    }
    Ok(out)
}

pub fn write_questions(path: &Path, qs: &[CountQuestion]) -> Result<()> {
    write_text(path, &questions_to_string(qs))
}

pub fn read_questions(path: &Path) -> Result<Vec<CountQuestion>> {
    parse_questions(&read_text(path)?, &source_name(path))
}

fn answer_token(a: u8) -> String {
    if a >= ANSWER_CAP {
        format!("{ANSWER_CAP}+")
    } else {
        a.to_string()
    }
}

/// `a <id> <count>` rows; the capped bucket is written `20+`.
pub fn answers_to_string(answers: &[(u32, u8)]) -> String {
    let mut out = format!("{ANSWERS_MAGIC} {FORMAT_VERSION}\n");
    for &(id, a) in answers {
        let _ = writeln!(out, "a {id} {}", answer_token(a));
    }
    out
}

pub fn parse_answers(text: &str, source: &str) -> Result<Vec<(u32, u8)>> {
    let mut rows = Rows::new(text, source);
    rows.header(ANSWERS_MAGIC, false)?;
    let mut out = Vec::new();
    for (line, f) in &rows.rows {
        let line = *line;
        rows.expect(line, f, "a", 3)?;
        let count: u64 = rows.num(line, f[2].trim_end_matches('+'))?;
        out.push((rows.num(line, f[1])?, count.min(ANSWER_CAP as u64) as u8));
    }
    Ok(out)
}

pub fn write_answers(path: &Path, answers: &[(u32, u8)]) -> Result<()> {
    write_text(path, &answers_to_string(answers))
}

pub fn read_answers(path: &Path) -> Result<Vec<(u32, u8)>> {
    parse_answers(&read_text(path)?, &source_name(path))
}

// Config

/// `key = value` entries in file order, with line numbers.
pub fn parse_config(text: &str, source: &str) -> Result<Vec<(String, String, usize)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let l = raw.split('#').next().unwrap_or("").trim();
        if l.is_empty() {
            continue;
        }
        let (k, v) = l.split_once('=').ok_or_else(|| Error::Parse {
            path: source.to_string(),
            line: i + 1,
            msg: format!("expected 'key = value', got '{l}'"),
        })?;
        let k = k.trim();
        if k.is_empty() || k.contains(char::is_whitespace) {
            return Err(Error::Parse {
                path: source.to_string(),
                line: i + 1,
                msg: format!("bad key '{k}'"),
            });
        }
        out.push((k.to_string(), v.trim().to_string(), i + 1));
    }
    Ok(out)
}

pub fn read_config(path: &Path) -> Result<Vec<(String, String, usize)>> {
    parse_config(&read_text(path)?, &source_name(path))
}

pub fn config_to_string(entries: &[(&str, String)]) -> String {
    entries.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
}

// SMAPGRID

#[derive(Debug, Clone, PartialEq)]
pub enum LayerData {
    U8(Vec<u8>),
    F32(Vec<f32>),
}

impl LayerData {
    fn type_code(&self) -> u8 {
        match self {
            LayerData::U8(_) => 0,
            LayerData::F32(_) => 1,
        }
    }

    fn len(&self) -> usize {
        match self {
            LayerData::U8(v) => v.len(),
            LayerData::F32(v) => v.len(),
        }
    }

    fn byte_len(&self) -> usize {
        match self {
            LayerData::U8(v) => v.len(),
            LayerData::F32(v) => v.len() * 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub name: String,
    pub data: LayerData,
}

/// A map snapshot: grid geometry plus named per-cell layers.
///
/// Layout (little endian): magic, u32 version, u32 u_size, u32 v_size,
/// f64 resolution, f64 origin_x, f64 origin_z, u32 layer count, then per
/// layer a u16 name length, the name, a u8 type (0 = u8, 1 = f32) and a u64
/// absolute payload offset; payloads follow in directory order.
#[derive(Debug, Clone, PartialEq)]
pub struct GridFile {
    pub grid: GridSpec,
    pub layers: Vec<Layer>,
}

impl GridFile {
    pub fn new(grid: GridSpec) -> Self {
        GridFile { grid, layers: Vec::new() }
    }

    /// The mandatory layers: decoded labels, heights and the observed mask.
    pub fn from_map(map: &SemanticMap, heights: &Raster<f32>, observed: &BinaryRaster) -> Result<Self> {
        let g = map.grid;
        if !map.labels.same_dims(heights) || !map.labels.same_dims(observed) || map.labels.data.len() != g.len() {
            return Err(Error::GridMismatch("layers differ in size from the grid".into()));
        }
        let mut f = GridFile::new(g);
        f.push("labels", LayerData::U8(map.labels.data.clone()))?;
        f.push("heights", LayerData::F32(heights.data.clone()))?;
        f.push("observed", LayerData::U8(observed.data.iter().map(|&b| b as u8).collect()))?;
        Ok(f)
    }

    pub fn push(&mut self, name: &str, data: LayerData) -> Result<()> {
        if data.len() != self.grid.len() {
            return Err(Error::LengthMismatch(data.len(), self.grid.len()));
        }
        if self.layers.iter().any(|l| l.name == name) {
            return Err(Error::Invalid(format!("duplicate layer '{name}'")));
        }
        self.layers.push(Layer {
            name: name.to_string(),
            data,
        });
        Ok(())
    }

    pub fn layer(&self, name: &str) -> Option<&LayerData> {
        self.layers.iter().find(|l| l.name == name).map(|l| &l.data)
    }

    fn u8_layer(&self, name: &str) -> Result<&[u8]> {
        match self.layer(name) {
            Some(LayerData::U8(v)) => Ok(v),
            Some(_) => Err(Error::Invalid(format!("layer '{name}' is not u8"))),
            None => Err(Error::Invalid(format!("missing layer '{name}'"))),
        }
    }

    fn raster<T: Copy>(&self, data: Vec<T>) -> Raster<T> {
        Raster {
            width: self.grid.u_size,
            height: self.grid.v_size,
            data,
        }
    }

    pub fn semantic_map(&self) -> Result<SemanticMap> {
        let labels = self.u8_layer("labels")?;
        if let Some(&bad) = labels.iter().find(|&&l| l as usize >= NUM_CLASSES) {
            return Err(Error::Invalid(format!("label {bad} out of range")));
        }
        Ok(SemanticMap {
            grid: self.grid,
            labels: self.raster(labels.to_vec()),
        })
    }

    pub fn heights(&self) -> Result<Raster<f32>> {
        match self.layer("heights") {
            Some(LayerData::F32(v)) => Ok(self.raster(v.clone())),
            Some(_) => Err(Error::Invalid("layer 'heights' is not f32".into())),
            None => Err(Error::Invalid("missing layer 'heights'".into())),
        }
    }

    pub fn observed(&self) -> Result<BinaryRaster> {
        Ok(self.raster(self.u8_layer("observed")?.iter().map(|&b| b != 0).collect()))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let g = &self.grid;
        let mut head = Vec::new();
        head.extend_from_slice(GRID_MAGIC);
        head.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        head.extend_from_slice(&(g.u_size as u32).to_le_bytes());
        head.extend_from_slice(&(g.v_size as u32).to_le_bytes());
        head.extend_from_slice(&g.resolution.to_le_bytes());
        head.extend_from_slice(&g.origin_x.to_le_bytes());
        head.extend_from_slice(&g.origin_z.to_le_bytes());
        head.extend_from_slice(&(self.layers.len() as u32).to_le_bytes());
        let dir_len: usize = self.layers.iter().map(|l| 2 + l.name.len() + 1 + 8).sum();
        let mut offset = (head.len() + dir_len) as u64;
        for l in &self.layers {
            head.extend_from_slice(&(l.name.len() as u16).to_le_bytes());
            head.extend_from_slice(l.name.as_bytes());
            head.push(l.data.type_code());
            head.extend_from_slice(&offset.to_le_bytes());
            offset += l.data.byte_len() as u64;
        }
        for l in &self.layers {
            match &l.data {
                LayerData::U8(v) => head.extend_from_slice(v),
                LayerData::F32(v) => v.iter().for_each(|x| head.extend_from_slice(&x.to_le_bytes())),
            }
        }
        head
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |msg: &str| Error::Invalid(format!("SMAPGRID: {msg}"));
        let mut pos = 0usize;
        let mut take = |n: usize| -> Result<&[u8]> {
            let s = bytes.get(pos..pos + n).ok_or_else(|| bad("truncated header"))?;
            pos += n;
            Ok(s)
        };
        if take(8)? != GRID_MAGIC {
            return Err(bad("bad magic"));
        }
        let u32_at = |s: &[u8]| u32::from_le_bytes(s.try_into().expect("4 bytes"));
        let f64_at = |s: &[u8]| f64::from_le_bytes(s.try_into().expect("8 bytes"));
        let version = u32_at(take(4)?);
        if version != FORMAT_VERSION {
            return Err(bad(&format!("unsupported version {version}")));
        }
        let u_size = u32_at(take(4)?) as usize;
        let v_size = u32_at(take(4)?) as usize;
        let resolution = f64_at(take(8)?);
        let origin_x = f64_at(take(8)?);
        let origin_z = f64_at(take(8)?);
        let grid = GridSpec::new(origin_x, origin_z, resolution, u_size, v_size)?;
        let n_layers = u32_at(take(4)?) as usize;
        let mut dir = Vec::with_capacity(n_layers);
        for _ in 0..n_layers {
            let name_len = u16::from_le_bytes(take(2)?.try_into().expect("2 bytes")) as usize;
            let name = String::from_utf8(take(name_len)?.to_vec()).map_err(|_| bad("layer name is not UTF-8"))?;
            let ty = take(1)?[0];
            let offset = u64::from_le_bytes(take(8)?.try_into().expect("8 bytes")) as usize;
            dir.push((name, ty, offset));
        }
        let n = grid.len();
        let mut file = GridFile::new(grid);
        let mut expected = pos;
        for (name, ty, offset) in dir {
            let elem = match ty {
                0 => 1,
                1 => 4,
                t => return Err(bad(&format!("unknown element type {t}"))),
            };
            if offset != expected {
                return Err(bad(&format!("layer '{name}' offset {offset}, expected {expected}")));
            }
            let payload = bytes
                .get(offset..offset + n * elem)
                .ok_or_else(|| bad(&format!("layer '{name}' payload truncated")))?;
            expected += n * elem;
            let data = if ty == 0 {
                LayerData::U8(payload.to_vec())
            } else {
                LayerData::F32(payload.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect())
            };
            file.push(&name, data)?;
        }
        if expected != bytes.len() {
            return Err(bad("trailing bytes after payload"));
        }
        for name in ["labels", "heights", "observed"] {
            if file.layer(name).is_none() {
                return Err(bad(&format!("missing mandatory layer '{name}'")));
            }
        }
        Ok(file)
    }
}

pub fn write_grid(path: &Path, f: &GridFile) -> Result<()> {
    Ok(fs::write(path, f.to_bytes())?)
}

pub fn read_grid(path: &Path) -> Result<GridFile> {
    GridFile::from_bytes(&fs::read(path)?)
}

// PPM

/// Binary P6 image of `labels` through `palette`, row 0 first.
pub fn encode_ppm(labels: &LabelRaster, palette: &[[u8; 3]; NUM_CLASSES]) -> Result<Vec<u8>> {
    let mut out = format!("P6\n{} {}\n255\n", labels.width, labels.height).into_bytes();
    out.reserve(labels.data.len() * 3);
    for &l in &labels.data {
        let rgb = palette
            .get(l as usize)
            .ok_or_else(|| Error::Invalid(format!("label {l} has no palette entry")))?;
        out.extend_from_slice(rgb);
    }
    Ok(out)
}

pub fn write_ppm(labels: &LabelRaster, palette: &[[u8; 3]; NUM_CLASSES], path: &Path) -> Result<()> {
    Ok(fs::write(path, encode_ppm(labels, palette)?)?)
}

/// Decodes a P6 image with maxval 255 into `(width, height, rgb)`.
pub fn decode_ppm(bytes: &[u8]) -> Result<(usize, usize, Vec<u8>)> {
    let bad = |msg: &str| Error::Invalid(format!("PPM: {msg}"));
    let mut pos = 0;
    let mut token = || -> Result<String> {
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if bytes.get(pos) == Some(&b'#') {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            break;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("truncated header"));
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };
    if token()? != "P6" {
        return Err(bad("not a P6 image"));
    }
    let num = |s: String| s.parse::<usize>().map_err(|_| bad("bad header number"));
    let w = num(token()?)?;
    let h = num(token()?)?;
    if num(token()?)? != 255 {
        return Err(bad("maxval must be 255"));
    }
    let data = bytes.get(pos + 1..).ok_or_else(|| bad("missing pixel data"))?;
    if data.len() != w * h * 3 {
        return Err(bad(&format!("expected {} pixel bytes, found {}", w * h * 3, data.len())));
    }
    Ok((w, h, data.to_vec()))
}

/// Inverse palette lookup; colors outside the palette are an error.
pub fn labels_from_rgb(w: usize, h: usize, rgb: &[u8], palette: &[[u8; 3]; NUM_CLASSES]) -> Result<LabelRaster> {
    let data = rgb
        .chunks_exact(3)
        .map(|px| {
            palette
                .iter()
                .position(|c| c == px)
                .map(|i| i as u8)
                .ok_or_else(|| Error::Invalid(format!("color {px:?} not in palette")))
        })
        .collect::<Result<Vec<u8>>>()?;
    Raster::from_vec(w, h, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{coverage_trajectory, generate_scene, CoverageParams, SceneParams};
    use proptest::prelude::*;

    #[test]
    fn palette_is_injective() {
        for a in 0..NUM_CLASSES {
            for b in a + 1..NUM_CLASSES {
                assert_ne!(PALETTE[a], PALETTE[b]);
            }
        }
    }

    #[test]
    fn ppm_one_void_pixel() {
        let g = GridSpec::new(0.0, 0.0, 0.02, 1, 1).unwrap();
        let bytes = encode_ppm(&SemanticMap::void(g).labels, &PALETTE).unwrap();
        // "P6" LF, "1 1" LF, "255" LF
        let header_len = 3 + 4 + 4;
        assert_eq!(bytes.len(), header_len + 3);
        assert_eq!(&bytes[..header_len], b"P6\n1 1\n255\n");
        assert_eq!(&bytes[header_len..], &[255, 255, 255]);
    }

    #[test]
    fn ppm_round_trip() {
        let labels = Raster::from_vec(4, 3, (0..12).map(|i| (i % 13) as u8).collect()).unwrap();
        let bytes = encode_ppm(&labels, &PALETTE).unwrap();
        let (w, h, rgb) = decode_ppm(&bytes).unwrap();
        assert_eq!((w, h), (4, 3));
        assert_eq!(&rgb[3..6], &[31, 119, 180]);
        assert_eq!(labels_from_rgb(w, h, &rgb, &PALETTE).unwrap(), labels);
        assert!(encode_ppm(&Raster::new(1, 1, 13u8), &PALETTE).is_err());
    }

    #[test]
    fn scene_and_trajectory_round_trip() {
        let s = generate_scene(3, &SceneParams::default()).unwrap();
        let back = parse_scene(&scene_to_string(&s), "t").unwrap();
        assert_eq!(back.boxes, s.boxes);
        assert_eq!(back.floor, s.floor);
        let t = coverage_trajectory(&s, 3, &CoverageParams::default()).unwrap();
        let tb = parse_trajectory(&trajectory_to_string(&t), "t").unwrap();
        assert_eq!(tb.len(), t.len());
        assert_eq!(tb.camera_height, t.camera_height);
        for (a, b) in t.states.iter().zip(&tb.states) {
            assert_eq!((a.x, a.z), (b.x, b.z));
            assert!((a.yaw - b.yaw).abs() < 1e-12);
        }
        crate::scene::validate_trajectory(&tb).unwrap();
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let e = parse_scene("SMAPSCENE 1\nfloor 0 0 5 5\n\nbox 1 1 0 0 0 1 x 1\n", "s.txt").unwrap_err();
        assert!(matches!(e, Error::Parse { line: 4, .. }), "{e}");
        assert!(parse_scene("SMAPSCENE 2\nfloor 0 0 1 1\n", "s").is_err());
        assert!(parse_scene("floor 0 0 1 1\n", "s").is_err());
        assert!(parse_trajectory("SMAPTRAJ 1\ncamera_height 1\nstep 1 0 0 0\n", "t").is_err());
    }

    #[test]
    fn episodes_results_questions_answers() {
        let eps = vec![Episode {
            id: 7,
            start: AgentState {
                x: 1.25,
                z: 2.5,
                yaw: 60f64.to_radians(),
            },
            target: 3,
        }];
        let back = parse_episodes(&episodes_to_string(&eps), "e").unwrap();
        assert_eq!((back[0].id, back[0].target, back[0].start.x), (7, 3, 1.25));
        assert!((back[0].start.yaw - eps[0].start.yaw).abs() < 1e-12);
        assert!(parse_episodes("SMAPEPIS 1\nepisode 1 0 0 0 13\n", "e").is_err());

        let r = EpisodeResult {
            id: 2,
            success: false,
            path: vec![],
            path_length: 0.5,
            oracle_length: f64::INFINITY,
            initial_distance: f64::INFINITY,
            final_distance: f64::INFINITY,
        };
        let text = results_to_string(&[r.clone()]);
        assert!(text.ends_with("2 0 0.5 inf inf inf\n"), "{text}");
        assert_eq!(parse_results(&text, "r").unwrap(), vec![r]);

        let qs = vec![CountQuestion::new(0, 1).unwrap(), CountQuestion::new(1, 12).unwrap()];
        assert_eq!(parse_questions(&questions_to_string(&qs), "q").unwrap(), qs);
        assert!(parse_questions("SMAPQA 1\nq 0 where 1\n", "q").is_err());

        let ans = vec![(0, 3), (1, 20)];
        let text = answers_to_string(&ans);
        assert!(text.contains("a 1 20+"));
        assert_eq!(parse_answers(&text, "a").unwrap(), ans);
        assert_eq!(parse_answers("a 4 37\n", "a").unwrap(), vec![(4, 20)]);
    }

    #[test]
    fn config_parsing() {
        let text = "# header\npipeline = smnet\n\nnoise.seed=5   # trailing\n";
        let kv = parse_config(text, "c").unwrap();
        assert_eq!(kv, vec![("pipeline".into(), "smnet".into(), 2), ("noise.seed".into(), "5".into(), 4)]);
        assert!(matches!(parse_config("a b\n", "c"), Err(Error::Parse { line: 1, .. })));
    }

    fn sample_grid_file(u: usize, v: usize, seed: u64) -> GridFile {
        let mut rng = crate::rng::Rng::new(seed);
        let g = GridSpec::new(-1.5, 0.25, 0.02, u, v).unwrap();
        let mut map = SemanticMap::void(g);
        map.labels.data.iter_mut().for_each(|l| *l = rng.below(13) as u8);
        let heights = Raster::from_vec(u, v, (0..u * v).map(|_| rng.range(-1.0, 3.0) as f32).collect()).unwrap();
        let observed = Raster::from_vec(u, v, (0..u * v).map(|_| rng.below(2) == 1).collect()).unwrap();
        GridFile::from_map(&map, &heights, &observed).unwrap()
    }

    #[test]
    fn grid_file_layout() {
        let f = sample_grid_file(3, 2, 1);
        let bytes = f.to_bytes();
        assert_eq!(&bytes[..8], b"SMAPGRID");
        assert_eq!(u32::from_le_bytes(bytes[12..16].try_into().unwrap()), 3);
        assert_eq!(u32::from_le_bytes(bytes[16..20].try_into().unwrap()), 2);
        // fixed header 48 bytes; directory 3 entries of 11 + name bytes
        let dir = 3 * 11 + "labels".len() + "heights".len() + "observed".len();
        assert_eq!(bytes.len(), 48 + dir + 6 + 24 + 6);
        let mut truncated = bytes.clone();
        truncated.pop();
        assert!(GridFile::from_bytes(&truncated).is_err());
        let mut extra = bytes;
        extra.push(0);
        assert!(GridFile::from_bytes(&extra).is_err());
    }

    proptest! {
        #[test]
        fn grid_file_round_trips_bit_exactly(u in 1usize..20, v in 1usize..20, seed: u64) {
            let f = sample_grid_file(u, v, seed);
            let bytes = f.to_bytes();
            let back = GridFile::from_bytes(&bytes).unwrap();
            prop_assert_eq!(back.to_bytes(), bytes);
            prop_assert_eq!(back.semantic_map().unwrap(), f.semantic_map().unwrap());
            prop_assert_eq!(back.observed().unwrap(), f.observed().unwrap());
        }
    }
}
