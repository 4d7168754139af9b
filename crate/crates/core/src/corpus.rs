//! Frame manifests, frame sampling, grayscale image loading and the
//! synthetic video corpus.
//!
//! A manifest is a UTF-8 CSV with header `frame_id,video_id,frame_index,path,row`.
//! An empty cell means the field is absent. Extra trailing columns (such as
//! the `partition` column written by the splitter) are ignored on load.
//! Relative image paths resolve against the manifest's directory.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use thiserror::Error;

pub const MANIFEST_HEADER: [&str; 5] = ["frame_id", "video_id", "frame_index", "path", "row"];

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("manifest parse error at line {line}: {msg}")]
    Parse { line: u64, msg: String },
    #[error("manifest is missing column `{0}`")]
    MissingColumn(&'static str),
    #[error("duplicate frame id `{0}`")]
    DuplicateFrameId(String),
    #[error("negative frame index {index} for frame `{frame_id}`")]
    NegativeFrameIndex { frame_id: String, index: i64 },
    #[error("frame `{0}` has neither a path nor a row")]
    NoLocation(String),
    #[error("fps must be positive and finite, got {0}")]
    InvalidFps(f64),
    #[error("frame count must be positive")]
    NoFrames,
    #[error("cannot decode image {path}: {msg}")]
    Decode { path: String, msg: String },
    #[error("image {0} has a zero dimension")]
    ZeroDimension(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CorpusError + '_ {
    move |source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrameRecord {
    pub frame_id: String,
    /// Ground-truth group. Empty when unknown.
    pub video_id: String,
    pub frame_index: u64,
    pub path: Option<PathBuf>,
    pub row: Option<u64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct CorpusManifest {
    pub records: Vec<FrameRecord>,
    pub fps_table: Option<BTreeMap<String, f64>>,
    /// Directory relative image paths resolve against.
    pub base_dir: PathBuf,
}

impl CorpusManifest {
    pub fn new(records: Vec<FrameRecord>) -> Self {
        Self {
            records,
            fps_table: None,
            base_dir: PathBuf::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn frame_ids(&self) -> Vec<String> {
        self.records.iter().map(|r| r.frame_id.clone()).collect()
    }

    /// Distinct video ids in first-appearance order.
    pub fn video_ids(&self) -> Vec<String> {
        let mut seen = HashSet::new();
        self.records
            .iter()
            .filter(|r| seen.insert(r.video_id.as_str()))
            .map(|r| r.video_id.clone())
            .collect()
    }

    /// Per-frame ground-truth labels: index of the video id in
    /// [`Self::video_ids`] order.
    pub fn video_labels(&self) -> Vec<i64> {
        let mut ids: BTreeMap<&str, i64> = BTreeMap::new();
        let mut next = 0;
        self.records
            .iter()
            .map(|r| {
                *ids.entry(r.video_id.as_str()).or_insert_with(|| {
                    next += 1;
                    next - 1
                })
            })
            .collect()
    }

    pub fn resolve_path(&self, record: &FrameRecord) -> Option<PathBuf> {
        record.path.as_ref().map(|p| {
            if p.is_absolute() {
                p.clone()
            } else {
                self.base_dir.join(p)
            }
        })
    }

    /// Keeps one frame per second of every video that has an entry in
    /// `fps_table`. A video's frame count is taken as its largest
    /// `frame_index + 1`. Videos without an fps entry are kept whole.
    pub fn subsample_one_fps(&self) -> Result<CorpusManifest, CorpusError> {
        let Some(table) = &self.fps_table else {
            return Ok(self.clone());
        };
        let mut n_frames: BTreeMap<&str, u64> = BTreeMap::new();
        for r in &self.records {
            let e = n_frames.entry(r.video_id.as_str()).or_insert(0);
            *e = (*e).max(r.frame_index + 1);
        }
        let mut keep: BTreeMap<&str, HashSet<u64>> = BTreeMap::new();
        for (video, &n) in &n_frames {
            if let Some(&fps) = table.get(*video) {
                keep.insert(video, sample_one_fps(n, fps)?.into_iter().collect());
            }
        }
        let records = self
            .records
            .iter()
            .filter(|r| {
                keep.get(r.video_id.as_str())
                    .is_none_or(|set| set.contains(&r.frame_index))
            })
            .cloned()
            .collect();
        Ok(CorpusManifest {
            records,
            fps_table: self.fps_table.clone(),
            base_dir: self.base_dir.clone(),
        })
    }
}

fn opt_cell(s: &str) -> Option<&str> {
    let s = s.trim();
    (!s.is_empty()).then_some(s)
}

pub fn load_manifest(path: &Path) -> Result<CorpusManifest, CorpusError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let mut manifest = parse_manifest(&text)?;
    manifest.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok(manifest)
}

pub fn parse_manifest(text: &str) -> Result<CorpusManifest, CorpusError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_reader(text.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| CorpusError::Parse {
            line: 1,
            msg: e.to_string(),
        })?
        .clone();
    let mut col = [0usize; 5];
    for (slot, name) in col.iter_mut().zip(MANIFEST_HEADER) {
        *slot = headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or(CorpusError::MissingColumn(name))?;
    }
    let mut seen = HashSet::new();
    let mut records = Vec::new();
    for result in reader.records() {
        let rec = result.map_err(|e| CorpusError::Parse {
            line: e.position().map_or(0, |p| p.line()),
            msg: e.to_string(),
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        let field = |k: usize| rec.get(col[k]).unwrap_or("");
        let frame_id = field(0).trim().to_string();
        if frame_id.is_empty() {
            return Err(CorpusError::Parse {
                line,
                msg: "empty frame_id".into(),
            });
        }
        let index: i64 = field(2).trim().parse().map_err(|_| CorpusError::Parse {
            line,
            msg: format!("bad frame_index `{}`", field(2)),
        })?;
        if index < 0 {
            return Err(CorpusError::NegativeFrameIndex { frame_id, index });
        }
        let row = opt_cell(field(4))
            .map(|s| {
                s.parse::<u64>().map_err(|_| CorpusError::Parse {
                    line,
                    msg: format!("bad row `{s}`"),
                })
            })
            .transpose()?;
        let path = opt_cell(field(3)).map(PathBuf::from);
        if path.is_none() && row.is_none() {
            return Err(CorpusError::NoLocation(frame_id));
        }
        if !seen.insert(frame_id.clone()) {
            return Err(CorpusError::DuplicateFrameId(frame_id));
        }
        records.push(FrameRecord {
            frame_id,
            video_id: field(1).trim().to_string(),
            frame_index: index as u64,
            path,
            row,
        });
    }
    Ok(CorpusManifest::new(records))
}

/// Serializes records in manifest format, optionally with a trailing
/// `partition` column.
pub fn manifest_to_csv(records: &[&FrameRecord], partition: Option<&str>) -> String {
    let mut w = csv::WriterBuilder::new().from_writer(Vec::new());
    let mut header: Vec<&str> = MANIFEST_HEADER.to_vec();
    if partition.is_some() {
        header.push("partition");
    }
    w.write_record(&header).expect("in-memory write");
    for r in records {
        let path = r
            .path
            .as_ref()
            .map(|p| p.to_string_lossy().replace('\\', "/"))
            .unwrap_or_default();
        let row = r.row.map(|v| v.to_string()).unwrap_or_default();
        let idx = r.frame_index.to_string();
        let mut fields = vec![
            r.frame_id.as_str(),
            r.video_id.as_str(),
            idx.as_str(),
            path.as_str(),
            row.as_str(),
        ];
        if let Some(p) = partition {
            fields.push(p);
        }
        w.write_record(&fields).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 input")
}

pub fn write_manifest(path: &Path, manifest: &CorpusManifest) -> Result<(), CorpusError> {
    let refs: Vec<&FrameRecord> = manifest.records.iter().collect();
    fs::write(path, manifest_to_csv(&refs, None)).map_err(io_err(path))
}

/// Indices `round(j * fps)` for `j = 0, 1, ...` below `n_frames`, ascending
/// and deduplicated. Index 0 is always present.
pub fn sample_one_fps(n_frames: u64, fps: f64) -> Result<Vec<u64>, CorpusError> {
    if !(fps.is_finite() && fps > 0.0) {
        return Err(CorpusError::InvalidFps(fps));
    }
    if n_frames == 0 {
        return Err(CorpusError::NoFrames);
    }
    let mut out: Vec<u64> = Vec::new();
    for j in 0u64.. {
        let idx = (j as f64 * fps).round();
        if idx >= n_frames as f64 {
            break;
        }
        let idx = idx as u64;
        if out.last() != Some(&idx) {
            out.push(idx);
        }
    }
    Ok(out)
}

/// Square grayscale image with row-major luminance in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageBuffer {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<f64>,
}

impl ImageBuffer {
    pub fn new(width: usize, height: usize, pixels: Vec<f64>) -> Self {
        assert_eq!(pixels.len(), width * height, "pixel count must be width*height");
        Self {
            width,
            height,
            pixels,
        }
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        Self::new(width, height, vec![value; width * height])
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.pixels[y * self.width + x]
    }

    /// Bilinear resize with pixel-center alignment and edge clamping.
    pub fn resize_bilinear(&self, out_w: usize, out_h: usize) -> ImageBuffer {
        if out_w == self.width && out_h == self.height {
            return self.clone();
        }
        let sx = self.width as f64 / out_w as f64;
        let sy = self.height as f64 / out_h as f64;
        let axis = |o: usize, scale: f64, len: usize| {
            let c = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (len - 1) as f64);
            let lo = c.floor() as usize;
            let hi = (lo + 1).min(len - 1);
            (lo, hi, c - lo as f64)
        };
        let cols: Vec<_> = (0..out_w).map(|x| axis(x, sx, self.width)).collect();
        let mut pixels = Vec::with_capacity(out_w * out_h);
        for y in 0..out_h {
            let (y0, y1, fy) = axis(y, sy, self.height);
            for &(x0, x1, fx) in &cols {
                let top = self.get(x0, y0) * (1.0 - fx) + self.get(x1, y0) * fx;
                let bottom = self.get(x0, y1) * (1.0 - fx) + self.get(x1, y1) * fx;
                pixels.push(top * (1.0 - fy) + bottom * fy);
            }
        }
        ImageBuffer::new(out_w, out_h, pixels)
    }
}

/// ITU-R BT.601 luma.
pub fn luminance(r: u8, g: u8, b: u8) -> f64 {
    (0.299 * f64::from(r) + 0.587 * f64::from(g) + 0.114 * f64::from(b)) / 255.0
}

/// Decodes an image, converts it to luminance and resizes it to
/// `target_side x target_side` (aspect ratio is not preserved).
pub fn load_image(path: &Path, target_side: usize) -> Result<ImageBuffer, CorpusError> {
    if target_side == 0 {
        return Err(CorpusError::InvalidArgument("target side must be positive".into()));
    }
    let decode = |msg: String| CorpusError::Decode {
        path: path.display().to_string(),
        msg,
    };
    let bytes = fs::read(path).map_err(io_err(path))?;
    let img = image::load_from_memory(&bytes).map_err(|e| decode(e.to_string()))?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    if w == 0 || h == 0 {
        return Err(CorpusError::ZeroDimension(path.display().to_string()));
    }
    let pixels: Vec<f64> = match img {
        image::DynamicImage::ImageLuma8(g) => g.pixels().map(|p| f64::from(p.0[0]) / 255.0).collect(),
        image::DynamicImage::ImageLumaA8(g) => {
            g.pixels().map(|p| f64::from(p.0[0]) / 255.0).collect()
        }
        other => other
            .to_rgb8()
            .pixels()
            .map(|p| luminance(p.0[0], p.0[1], p.0[2]))
            .collect(),
    };
    Ok(ImageBuffer::new(w, h, pixels).resize_bilinear(target_side, target_side))
}

/// Loads every manifest frame's image in parallel, returned in manifest order.
pub fn load_images(
    manifest: &CorpusManifest,
    target_side: usize,
) -> Result<Vec<ImageBuffer>, CorpusError> {
    manifest
        .records
        .par_iter()
        .map(|r| {
            let path = manifest.resolve_path(r).ok_or_else(|| {
                CorpusError::InvalidArgument(format!("frame `{}` has no image path", r.frame_id))
            })?;
            load_image(&path, target_side)
        })
        .collect()
}

/// One synthetic video: a textured background with a moving shape.
struct SyntheticVideo {
    base: [f64; 3],
    gain: [f64; 3],
    gratings: Vec<(f64, f64, f64, f64)>,
    blob_grid: Vec<f64>,
    shape_color: [f64; 3],
    shape_radius: f64,
    square: bool,
    start: (f64, f64),
    velocity: (f64, f64),
    pan: (f64, f64),
}

const BLOB_GRID: usize = 6;

impl SyntheticVideo {
    fn sample(rng: &mut ChaCha8Rng, frames: usize) -> Self {
        let base = [rng.random_range(0.2..0.8), rng.random_range(0.2..0.8), rng.random_range(0.2..0.8)];
        let gain = [rng.random_range(0.3..1.0), rng.random_range(0.3..1.0), rng.random_range(0.3..1.0)];
        let gratings = (0..3)
            .map(|_| {
                (
                    rng.random_range(0.05..0.25),
                    rng.random_range(1.5..7.0),
                    rng.random_range(0.0..std::f64::consts::PI),
                    rng.random_range(0.0..std::f64::consts::TAU),
                )
            })
            .collect();
        let blob_grid = (0..BLOB_GRID * BLOB_GRID)
            .map(|_| rng.random_range(-0.15..0.15))
            .collect();
        let shape_color = [rng.random_range(0.0..1.0), rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)];
        let shape_radius = rng.random_range(0.08..0.16);
        let square = rng.random_bool(0.5);
        let start = (rng.random_range(0.25..0.75), rng.random_range(0.25..0.75));
        let travel = rng.random_range(0.1..0.3);
        let heading: f64 = rng.random_range(0.0..std::f64::consts::TAU);
        let steps = frames.max(2) as f64 - 1.0;
        let velocity = (travel * heading.cos() / steps, travel * heading.sin() / steps);
        let pan_heading: f64 = rng.random_range(0.0..std::f64::consts::TAU);
        let pan = (0.002 * pan_heading.cos(), 0.002 * pan_heading.sin());
        Self {
            base,
            gain,
            gratings,
            blob_grid,
            shape_color,
            shape_radius,
            square,
            start,
            velocity,
            pan,
        }
    }

    fn texture(&self, u: f64, v: f64) -> f64 {
        let mut t = 0.0;
        for &(amp, freq, theta, phase) in &self.gratings {
            let s = u * theta.cos() + v * theta.sin();
            t += amp * (std::f64::consts::TAU * freq * s + phase).sin();
        }
        // bilinear value noise over a coarse periodic grid
        let g = BLOB_GRID as f64;
        let (gx, gy) = ((u.rem_euclid(1.0)) * g, (v.rem_euclid(1.0)) * g);
        let (x0, y0) = (gx.floor() as usize % BLOB_GRID, gy.floor() as usize % BLOB_GRID);
        let (x1, y1) = ((x0 + 1) % BLOB_GRID, (y0 + 1) % BLOB_GRID);
        let (fx, fy) = (gx.fract(), gy.fract());
        let at = |x: usize, y: usize| self.blob_grid[y * BLOB_GRID + x];
        let top = at(x0, y0) * (1.0 - fx) + at(x1, y0) * fx;
        let bottom = at(x0, y1) * (1.0 - fx) + at(x1, y1) * fx;
        t + top * (1.0 - fy) + bottom * fy
    }

    fn render(&self, frame: usize, side: usize, noise: &mut impl FnMut() -> f64) -> Vec<u8> {
        let f = frame as f64;
        let (cx, cy) = (self.start.0 + self.velocity.0 * f, self.start.1 + self.velocity.1 * f);
        let (px, py) = (self.pan.0 * f, self.pan.1 * f);
        let mut out = Vec::with_capacity(side * side * 3);
        for y in 0..side {
            for x in 0..side {
                let u = (x as f64 + 0.5) / side as f64;
                let v = (y as f64 + 0.5) / side as f64;
                let inside = if self.square {
                    (u - cx).abs() <= self.shape_radius && (v - cy).abs() <= self.shape_radius
                } else {
                    (u - cx).powi(2) + (v - cy).powi(2) <= self.shape_radius.powi(2)
                };
                let t = self.texture(u + px, v + py);
                for c in 0..3 {
                    let value = if inside {
                        self.shape_color[c]
                    } else {
                        self.base[c] + self.gain[c] * t
                    };
                    let q = ((value + noise()) * 255.0).round().clamp(0.0, 255.0);
                    out.push(q as u8);
                }
            }
        }
        out
    }
}

/// Writes a synthetic corpus of `n_videos` videos, each with
/// `frames_per_video` RGB PNG frames, to `out_dir/frames/`, and the manifest
/// to `out_dir/manifest.csv`. Output bytes depend only on the arguments.
pub fn generate_synthetic_corpus(
    n_videos: usize,
    frames_per_video: usize,
    image_side: usize,
    seed: u64,
    out_dir: &Path,
) -> Result<CorpusManifest, CorpusError> {
    if n_videos == 0 || frames_per_video == 0 || image_side == 0 {
        return Err(CorpusError::InvalidArgument(
            "video count, frames per video and image side must all be positive".into(),
        ));
    }
    let frames_dir = out_dir.join("frames");
    fs::create_dir_all(&frames_dir).map_err(io_err(&frames_dir))?;

    let jobs: Vec<(usize, usize)> = (0..n_videos)
        .flat_map(|v| (0..frames_per_video).map(move |f| (v, f)))
        .collect();
    let videos: Vec<SyntheticVideo> = (0..n_videos)
        .map(|v| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(v as u64 + 1);
            SyntheticVideo::sample(&mut rng, frames_per_video)
        })
        .collect();
    let noise_sd = Normal::new(0.0, 2.0 / 255.0).expect("valid normal");

    let records = jobs
        .par_iter()
        .map(|&(v, f)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_f4a3_e000_0000);
            rng.set_stream(((v as u64) << 32) | f as u64);
            let mut noise = || noise_sd.sample(&mut rng);
            let rgb = videos[v].render(f, image_side, &mut noise);
            let name = format!("v{v:04}_f{f:04}.png");
            let path = frames_dir.join(&name);
            let side = image_side as u32;
            image::save_buffer_with_format(
                &path,
                &rgb,
                side,
                side,
                image::ColorType::Rgb8,
                image::ImageFormat::Png,
            )
            .map_err(|e| CorpusError::Io {
                path: path.display().to_string(),
                source: std::io::Error::other(e.to_string()),
            })?;
            Ok(FrameRecord {
                frame_id: format!("v{v:04}_f{f:04}"),
                video_id: format!("v{v:04}"),
                frame_index: f as u64,
                path: Some(PathBuf::from("frames").join(name)),
                row: None,
            })
        })
        .collect::<Result<Vec<_>, CorpusError>>()?;

    let mut manifest = CorpusManifest::new(records);
    manifest.base_dir = out_dir.to_path_buf();
    write_manifest(&out_dir.join("manifest.csv"), &manifest)?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const HEADER: &str = "frame_id,video_id,frame_index,path,row\n";

    #[test]
    fn parses_three_records_in_order() {
        let text = format!("{HEADER}a,v1,0,a.png,\nb,v1,1,b.png,\nc,v2,0,,3\n");
        let m = parse_manifest(&text).unwrap();
        assert_eq!(m.len(), 3);
        assert_eq!(m.frame_ids(), vec!["a", "b", "c"]);
        assert_eq!(m.records[2].row, Some(3));
        assert_eq!(m.records[2].path, None);
        assert_eq!(m.video_ids(), vec!["v1", "v2"]);
        assert_eq!(m.video_labels(), vec![0, 0, 1]);
    }

    #[test]
    fn duplicate_frame_id_rejected() {
        let text = format!("{HEADER}a,v1,0,a.png,\na,v1,1,b.png,\n");
        let err = parse_manifest(&text).unwrap_err();
        assert!(err.to_string().contains("duplicate frame id"), "{err}");
    }

    #[test]
    fn header_only_is_empty() {
        assert!(parse_manifest(HEADER).unwrap().is_empty());
    }

    #[test]
    fn negative_index_and_missing_column_rejected() {
        let neg = format!("{HEADER}a,v1,-3,a.png,\n");
        assert!(matches!(
            parse_manifest(&neg),
            Err(CorpusError::NegativeFrameIndex { index: -3, .. })
        ));
        let missing = "frame_id,video_id,path,row\na,v,a.png,\n";
        assert!(matches!(
            parse_manifest(missing),
            Err(CorpusError::MissingColumn("frame_index"))
        ));
        let ragged = format!("{HEADER}a,v1,0\n");
        assert!(matches!(parse_manifest(&ragged), Err(CorpusError::Parse { .. })));
        let nowhere = format!("{HEADER}a,v1,0,,\n");
        assert!(matches!(parse_manifest(&nowhere), Err(CorpusError::NoLocation(_))));
    }

    #[test]
    fn extra_partition_column_is_ignored() {
        let text = "frame_id,video_id,frame_index,path,row,partition\na,v1,0,a.png,,train\n";
        assert_eq!(parse_manifest(text).unwrap().len(), 1);
    }

    #[test]
    fn csv_round_trip() {
        let text = format!("{HEADER}a,v1,0,x/a.png,\n\"b,1\",v1,1,,9\n");
        let m = parse_manifest(&text).unwrap();
        let refs: Vec<_> = m.records.iter().collect();
        assert_eq!(manifest_to_csv(&refs, None), text);
    }

    #[test]
    fn one_fps_examples() {
        let idx = sample_one_fps(300, 30.0).unwrap();
        assert_eq!(idx, (0..10).map(|j| j * 30).collect::<Vec<_>>());
        assert_eq!(sample_one_fps(5, 30.0).unwrap(), vec![0]);
        // round(0)=0, round(12.5)=13, round(25)=25, round(37.5)=38, 50 >= 45
        assert_eq!(sample_one_fps(45, 12.5).unwrap(), vec![0, 13, 25, 38]);
        assert!(matches!(sample_one_fps(10, 0.0), Err(CorpusError::InvalidFps(_))));
        assert!(matches!(sample_one_fps(10, -1.0), Err(CorpusError::InvalidFps(_))));
    }

    #[test]
    fn subsample_uses_fps_table() {
        let records = (0..60)
            .map(|i| FrameRecord {
                frame_id: format!("a{i}"),
                video_id: "a".into(),
                frame_index: i,
                path: None,
                row: Some(i),
            })
            .chain((0..3).map(|i| FrameRecord {
                frame_id: format!("b{i}"),
                video_id: "b".into(),
                frame_index: i,
                path: None,
                row: Some(100 + i),
            }))
            .collect();
        let mut m = CorpusManifest::new(records);
        m.fps_table = Some(BTreeMap::from([("a".to_string(), 25.0)]));
        let s = m.subsample_one_fps().unwrap();
        let kept: Vec<_> = s.frame_ids();
        assert_eq!(kept, vec!["a0", "a25", "a50", "b0", "b1", "b2"]);
    }

    proptest! {
        #[test]
        fn one_fps_output_is_valid(n in 1u64..2000, fps in 0.1f64..120.0) {
            let idx = sample_one_fps(n, fps).unwrap();
            prop_assert_eq!(idx[0], 0);
            prop_assert!(idx.windows(2).all(|w| w[0] < w[1]));
            prop_assert!(idx.iter().all(|&i| i < n));
        }
    }

    #[test]
    fn resize_constant_and_identity() {
        let gray = ImageBuffer::filled(64, 64, 128.0 / 255.0);
        let up = gray.resize_bilinear(128, 128);
        assert!(up.pixels.iter().all(|&p| (p - 128.0 / 255.0).abs() < 1e-12));

        let img = ImageBuffer::new(3, 2, vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6]);
        assert_eq!(img.resize_bilinear(3, 2), img);
    }

    #[test]
    fn checkerboard_downsamples_to_mean() {
        let img = ImageBuffer::new(2, 2, vec![0.0, 1.0, 1.0, 0.0]);
        let one = img.resize_bilinear(1, 1);
        assert_eq!(one.pixels, vec![0.5]);
    }

    fn write_png(path: &Path, w: u32, h: u32, rgb: &[u8]) {
        image::save_buffer_with_format(path, rgb, w, h, image::ColorType::Rgb8, image::ImageFormat::Png)
            .unwrap();
    }

    #[test]
    fn load_image_gray_png_resizes() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("g.png");
        write_png(&p, 64, 64, &vec![128u8; 64 * 64 * 3]);
        let img = load_image(&p, 128).unwrap();
        assert_eq!((img.width, img.height), (128, 128));
        let first = img.pixels[0];
        assert!(img.pixels.iter().all(|&v| v == first));
        assert!((first - 128.0 / 255.0).abs() <= 1.0 / 255.0);
        // determinism
        assert_eq!(load_image(&p, 128).unwrap(), img);
    }

    #[test]
    fn load_image_identity_size_is_luminance() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.png");
        let side = 224usize;
        let rgb: Vec<u8> = (0..side * side * 3).map(|i| (i * 7 % 251) as u8).collect();
        write_png(&p, side as u32, side as u32, &rgb);
        let img = load_image(&p, side).unwrap();
        for (i, px) in rgb.chunks_exact(3).enumerate() {
            assert_eq!(img.pixels[i], luminance(px[0], px[1], px[2]));
        }
    }

    #[test]
    fn load_image_errors() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            load_image(&dir.path().join("missing.png"), 8),
            Err(CorpusError::Io { .. })
        ));
        let junk = dir.path().join("junk.png");
        fs::write(&junk, b"not an image").unwrap();
        assert!(matches!(load_image(&junk, 8), Err(CorpusError::Decode { .. })));
    }

    fn mean_abs_diff(a: &ImageBuffer, b: &ImageBuffer) -> f64 {
        a.pixels.iter().zip(&b.pixels).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.pixels.len() as f64
    }

    #[test]
    fn synthetic_single_video_is_coherent() {
        let dir = tempfile::tempdir().unwrap();
        let m = generate_synthetic_corpus(1, 5, 64, 7, dir.path()).unwrap();
        assert_eq!(m.len(), 5);
        assert_eq!(m.video_ids().len(), 1);
        let imgs = load_images(&m, 64).unwrap();
        for a in &imgs {
            for b in &imgs {
                assert!(mean_abs_diff(a, b) < 0.05);
            }
        }
    }

    #[test]
    fn synthetic_corpus_is_deterministic_and_counted() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let ma = generate_synthetic_corpus(20, 10, 64, 7, a.path()).unwrap();
        generate_synthetic_corpus(20, 10, 64, 7, b.path()).unwrap();
        assert_eq!(ma.len(), 200);
        assert_eq!(ma.video_ids().len(), 20);
        for r in &ma.records {
            let rel = r.path.as_ref().unwrap();
            assert_eq!(fs::read(a.path().join(rel)).unwrap(), fs::read(b.path().join(rel)).unwrap());
        }
        assert_eq!(
            fs::read(a.path().join("manifest.csv")).unwrap(),
            fs::read(b.path().join("manifest.csv")).unwrap()
        );
        let loaded = load_manifest(&a.path().join("manifest.csv")).unwrap();
        assert_eq!(loaded.records, ma.records);
    }

    #[test]
    fn synthetic_seed_changes_pixels() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let m = generate_synthetic_corpus(1, 1, 32, 1, a.path()).unwrap();
        generate_synthetic_corpus(1, 1, 32, 2, b.path()).unwrap();
        let rel = m.records[0].path.as_ref().unwrap();
        let ia = load_image(&a.path().join(rel), 32).unwrap();
        let ib = load_image(&b.path().join(rel), 32).unwrap();
        assert_ne!(ia, ib);
    }

    #[test]
    fn synthetic_intra_video_closer_than_inter_video() {
        let dir = tempfile::tempdir().unwrap();
        let m = generate_synthetic_corpus(4, 5, 64, 3, dir.path()).unwrap();
        let imgs = load_images(&m, 64).unwrap();
        let labels = m.video_labels();
        let (mut intra, mut ni, mut inter, mut nx) = (0.0, 0, 0.0, 0);
        for i in 0..imgs.len() {
            for j in i + 1..imgs.len() {
                let d = mean_abs_diff(&imgs[i], &imgs[j]);
                if labels[i] == labels[j] {
                    intra += d;
                    ni += 1;
                } else {
                    inter += d;
                    nx += 1;
                }
            }
        }
        assert!(intra / f64::from(ni) < inter / f64::from(nx));
    }
}
