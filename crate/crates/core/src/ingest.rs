//! Label maps, part masks and landmark files, and their conversion into
//! per-part point sets.

use std::collections::{BTreeMap, VecDeque};
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{format_err, invalid, Error, Result};
use crate::geometry::{Point2, PointSet};
use crate::part::PartLabel;

/// Binary occupancy of one part over an image.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PartMask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl PartMask {
    pub fn new(width: usize, height: usize) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(invalid(format!("mask dimensions must be positive, got {width}x{height}")));
        }
        Ok(PartMask {
            width,
            height,
            bits: vec![false; width * height],
        })
    }

    pub fn from_bits(width: usize, height: usize, bits: Vec<bool>) -> Result<Self> {
        let mut m = PartMask::new(width, height)?;
        if bits.len() != width * height {
            return Err(invalid(format!("expected {} mask entries, got {}", width * height, bits.len())));
        }
        m.bits = bits;
        Ok(m)
    }

    /// Marks the pixel under every integer-valued point that falls inside.
    pub fn from_points(width: usize, height: usize, set: &PointSet) -> Result<Self> {
        let mut m = PartMask::new(width, height)?;
        for p in set.iter() {
            let (x, y) = (p.x.round(), p.y.round());
            if x >= 0.0 && y >= 0.0 && (x as usize) < width && (y as usize) < height {
                m.set(x as usize, y as usize, true);
            }
        }
        Ok(m)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, value: bool) {
        self.bits[y * self.width + x] = value;
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|b| *b)
    }
}

/// One point per set pixel in row-major order, `(x, y) = (column, row)`.
pub fn mask_to_points(mask: &PartMask) -> PointSet {
    let mut pts = Vec::with_capacity(mask.count());
    for y in 0..mask.height {
        for x in 0..mask.width {
            if mask.get(x, y) {
                pts.push(Point2::new(x as f64, y as f64));
            }
        }
    }
    PointSet::new(pts).expect("pixel coordinates are finite")
}

/// 8-connected components of a mask, each as a list of flat pixel indices.
pub fn connected_components(mask: &PartMask) -> Vec<Vec<usize>> {
    let (w, h) = (mask.width, mask.height);
    let mut seen = vec![false; w * h];
    let mut comps = Vec::new();
    let mut queue = VecDeque::new();
    for start in 0..w * h {
        if !mask.bits[start] || seen[start] {
            continue;
        }
        let mut comp = Vec::new();
        seen[start] = true;
        queue.push_back(start);
        while let Some(i) = queue.pop_front() {
            comp.push(i);
            let (x, y) = ((i % w) as i64, (i / w) as i64);
            for dy in -1..=1 {
                for dx in -1..=1 {
                    let (nx, ny) = (x + dx, y + dy);
                    if nx < 0 || ny < 0 || nx >= w as i64 || ny >= h as i64 {
                        continue;
                    }
                    let j = ny as usize * w + nx as usize;
                    if mask.bits[j] && !seen[j] {
                        seen[j] = true;
                        queue.push_back(j);
                    }
                }
            }
        }
        comps.push(comp);
    }
    comps
}

/// Drops every 8-connected component smaller than `min_area` pixels.
pub fn filter_isolated_regions(mask: &PartMask, min_area: usize) -> PartMask {
    let mut out = mask.clone();
    for comp in connected_components(mask) {
        if comp.len() < min_area {
            for i in comp {
                out.bits[i] = false;
            }
        }
    }
    out
}

/// Target point sets for every part, over an image of the given size.
#[derive(Clone, Debug, PartialEq)]
pub struct PartPointSets {
    pub width: usize,
    pub height: usize,
    sets: BTreeMap<PartLabel, PointSet>,
}

impl PartPointSets {
    /// All parts present and empty.
    pub fn new(width: usize, height: usize) -> Self {
        let sets = PartLabel::ALL
            .iter()
            .map(|&p| (p, PointSet::empty().with_label(p)))
            .collect();
        PartPointSets { width, height, sets }
    }

    pub fn get(&self, part: PartLabel) -> &PointSet {
        &self.sets[&part]
    }

    pub fn insert(&mut self, part: PartLabel, set: PointSet) {
        self.sets.insert(part, set.with_label(part));
    }

    pub fn iter(&self) -> impl Iterator<Item = (PartLabel, &PointSet)> {
        self.sets.iter().map(|(p, s)| (*p, s))
    }

    pub fn total_points(&self) -> usize {
        self.sets.values().map(PointSet::len).sum()
    }

    /// Integer pixel mask of one part.
    pub fn mask(&self, part: PartLabel) -> PartMask {
        PartMask::from_points(self.width, self.height, self.get(part)).expect("dimensions validated on construction")
    }

    /// Row above which skin counts as forehead: the smallest eyebrow `y`.
    pub fn eyebrow_cut(&self) -> Option<f64> {
        [PartLabel::LeftEyebrow, PartLabel::RightEyebrow]
            .iter()
            .flat_map(|p| self.get(*p).iter().map(|pt| pt.y))
            .reduce(f64::min)
    }
}

/// Removes skin points lying above both eyebrows. No-op without eyebrows.
pub fn exclude_forehead(sets: &PartPointSets) -> PartPointSets {
    let mut out = sets.clone();
    if let Some(cut) = sets.eyebrow_cut() {
        let skin: Vec<Point2> = sets.get(PartLabel::Skin).iter().copied().filter(|p| p.y >= cut).collect();
        out.insert(PartLabel::Skin, PointSet::new(skin).expect("subset of finite points"));
    }
    out
}

/// Mapping from file codes to parts plus the expected image size.
#[derive(Clone, Debug, PartialEq)]
pub struct Manifest {
    pub width: usize,
    pub height: usize,
    /// File code to part; `None` is background.
    pub codes: BTreeMap<u8, Option<PartLabel>>,
}

impl Manifest {
    /// Standard coding: 0 background, 1..=8 the parts in label order.
    pub fn standard(width: usize, height: usize) -> Self {
        let mut codes = BTreeMap::new();
        codes.insert(0, None);
        for p in PartLabel::ALL {
            codes.insert(p.code(), Some(p));
        }
        Manifest { width, height, codes }
    }

    /// Parses `key=value` lines: `width=`, `height=` and an optional
    /// `codes=<code>:<part>,...` remapping (`background` names code 0's role).
    pub fn parse(text: &str) -> Result<Self> {
        let mut width = None;
        let mut height = None;
        let mut codes = None;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| format_err(format!("manifest line {}: expected key=value", lineno + 1)))?;
            let value = value.trim();
            let dim = |v: &str| {
                v.parse::<usize>()
                    .ok()
                    .filter(|d| *d > 0)
                    .ok_or_else(|| format_err(format!("manifest line {}: bad dimension '{v}'", lineno + 1)))
            };
            match key.trim() {
                "width" => width = Some(dim(value)?),
                "height" => height = Some(dim(value)?),
                "codes" => {
                    let mut map = BTreeMap::new();
                    map.insert(0u8, None);
                    for entry in value.split(',').map(str::trim).filter(|e| !e.is_empty()) {
                        let (code, part) = entry
                            .split_once(':')
                            .ok_or_else(|| format_err(format!("manifest codes entry '{entry}' lacks ':'")))?;
                        let code: u8 = code
                            .trim()
                            .parse()
                            .map_err(|_| format_err(format!("manifest code '{code}' is not 0..=255")))?;
                        let part = match part.trim() {
                            "background" => None,
                            other => Some(other.parse::<PartLabel>()?),
                        };
                        map.insert(code, part);
                    }
                    codes = Some(map);
                }
                other => return Err(format_err(format!("manifest: unknown key '{other}'"))),
            }
        }
        let width = width.ok_or_else(|| format_err("manifest: missing width"))?;
        let height = height.ok_or_else(|| format_err("manifest: missing height"))?;
        let mut m = Manifest::standard(width, height);
        if let Some(c) = codes {
            m.codes = c;
        }
        Ok(m)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Manifest::parse(&fs::read_to_string(path)?)
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("width={}\nheight={}\n", self.width, self.height);
        if *self != Manifest::standard(self.width, self.height) {
            let entries: Vec<String> = self
                .codes
                .iter()
                .map(|(c, p)| format!("{c}:{}", p.map_or("background", |p| p.name())))
                .collect();
            s.push_str(&format!("codes={}\n", entries.join(",")));
        }
        s
    }
}

/// An 8-bit single-channel image of part codes.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelMap {
    pub width: usize,
    pub height: usize,
    pub codes: Vec<u8>,
}

impl LabelMap {
    pub fn new(width: usize, height: usize) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(invalid("label map dimensions must be positive"));
        }
        Ok(LabelMap {
            width,
            height,
            codes: vec![0; width * height],
        })
    }

    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.codes[y * self.width + x]
    }

    /// Paints every set pixel of `mask` with `code`.
    pub fn paint(&mut self, mask: &PartMask, code: u8) -> Result<()> {
        if mask.width() != self.width || mask.height() != self.height {
            return Err(invalid("mask and label map sizes differ"));
        }
        for (c, &b) in self.codes.iter_mut().zip(mask.bits()) {
            if b {
                *c = code;
            }
        }
        Ok(())
    }

    /// Reads a PNG (8-bit grayscale) or binary PGM (`P5`, maxval <= 255).
    pub fn read(path: &Path) -> Result<Self> {
        let bytes = fs::read(path)?;
        if bytes.starts_with(b"\x89PNG") {
            decode_png(&bytes)
        } else if bytes.starts_with(b"P5") {
            decode_pgm(&bytes)
        } else {
            Err(format_err(format!("{}: neither PNG nor binary PGM", path.display())))
        }
    }

    /// Writes PGM when the extension is `.pgm`, PNG otherwise.
    pub fn write(&self, path: &Path) -> Result<()> {
        let bytes = if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("pgm")) {
            self.encode_pgm()
        } else {
            self.encode_png()?
        };
        fs::write(path, bytes)?;
        Ok(())
    }

    pub fn encode_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.codes);
        out
    }

    pub fn encode_png(&self) -> Result<Vec<u8>> {
        self.encode_png_with_text(None)
    }

    /// PNG with an optional `(keyword, text)` tEXt chunk.
    pub fn encode_png_with_text(&self, text: Option<(&str, &str)>) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        {
            let mut enc = png::Encoder::new(&mut out, self.width as u32, self.height as u32);
            enc.set_color(png::ColorType::Grayscale);
            enc.set_depth(png::BitDepth::Eight);
            if let Some((k, v)) = text {
                enc.add_text_chunk(k.to_string(), v.to_string()).map_err(|e| format_err(e.to_string()))?;
            }
            let mut writer = enc.write_header().map_err(|e| format_err(e.to_string()))?;
            writer.write_image_data(&self.codes).map_err(|e| format_err(e.to_string()))?;
        }
        Ok(out)
    }

    /// Splits the map into one mask per part using the manifest coding.
    pub fn part_masks(&self, manifest: &Manifest) -> Result<BTreeMap<PartLabel, PartMask>> {
        if manifest.width != self.width || manifest.height != self.height {
            return Err(format_err(format!(
                "label map is {}x{} but manifest says {}x{}",
                self.width, self.height, manifest.width, manifest.height
            )));
        }
        let mut masks: BTreeMap<PartLabel, PartMask> = PartLabel::ALL
            .iter()
            .map(|&p| (p, PartMask::new(self.width, self.height).expect("positive dims")))
            .collect();
        for (i, &code) in self.codes.iter().enumerate() {
            match manifest.codes.get(&code) {
                None => return Err(format_err(format!("unknown label code {code} at pixel {i}"))),
                Some(None) => {}
                Some(Some(part)) => masks.get_mut(part).expect("all parts present").bits[i] = true,
            }
        }
        Ok(masks)
    }

    pub fn to_point_sets(&self, manifest: &Manifest) -> Result<PartPointSets> {
        let masks = self.part_masks(manifest)?;
        let mut sets = PartPointSets::new(self.width, self.height);
        for (part, mask) in &masks {
            sets.insert(*part, mask_to_points(mask));
        }
        Ok(sets)
    }
}

fn decode_png(bytes: &[u8]) -> Result<LabelMap> {
    let decoder = png::Decoder::new(std::io::Cursor::new(bytes));
    let mut reader = decoder.read_info().map_err(|e| format_err(format!("png: {e}")))?;
    let info = reader.info();
    if info.color_type != png::ColorType::Grayscale || info.bit_depth != png::BitDepth::Eight {
        return Err(format_err(format!(
            "label map must be 8-bit grayscale, got {:?} at {:?}",
            info.color_type, info.bit_depth
        )));
    }
    let (w, h) = (info.width as usize, info.height as usize);
    let mut buf = vec![0u8; reader.output_buffer_size().ok_or_else(|| format_err("png: image too large"))?];
    let frame = reader.next_frame(&mut buf).map_err(|e| format_err(format!("png: {e}")))?;
    let mut map = LabelMap::new(w, h)?;
    for y in 0..h {
        let row = &buf[y * frame.line_size..y * frame.line_size + w];
        map.codes[y * w..(y + 1) * w].copy_from_slice(row);
    }
    Ok(map)
}

fn decode_pgm(bytes: &[u8]) -> Result<LabelMap> {
    // Header: magic, width, height, maxval separated by whitespace, with
    // optional '#' comments, then exactly one whitespace byte.
    let mut fields = Vec::new();
    let mut pos = 2;
    while fields.len() < 3 {
        while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
            if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                pos += 1;
            }
        }
        let start = pos;
        while pos < bytes.len() && bytes[pos].is_ascii_digit() {
            pos += 1;
        }
        if start == pos {
            return Err(format_err("pgm: truncated header"));
        }
        let v: usize = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| format_err("pgm: bad header number"))?;
        fields.push(v);
    }
    pos += 1;
    let (w, h, maxval) = (fields[0], fields[1], fields[2]);
    if maxval == 0 || maxval > 255 {
        return Err(format_err(format!("pgm: maxval {maxval} is not 8-bit")));
    }
    if bytes.len() < pos + w * h {
        return Err(format_err("pgm: truncated pixel data"));
    }
    let mut map = LabelMap::new(w, h).map_err(|_| format_err("pgm: zero dimension"))?;
    map.codes.copy_from_slice(&bytes[pos..pos + w * h]);
    Ok(map)
}

/// Loads a label map and converts each coded part into a point set.
pub fn load_label_map(path: &Path, manifest: &Manifest) -> Result<PartPointSets> {
    LabelMap::read(path)?.to_point_sets(manifest)
}

/// Cleanup applied to segmentation-derived targets.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Preprocess {
    pub remove_isolated: bool,
    /// Components below this many pixels are dropped (8-connectivity).
    pub min_area: usize,
    pub exclude_forehead: bool,
}

impl Default for Preprocess {
    fn default() -> Self {
        Preprocess {
            remove_isolated: true,
            min_area: 16,
            exclude_forehead: true,
        }
    }
}

/// Per-part targets ready for fitting: cleaned point sets and their masks.
#[derive(Clone, Debug)]
pub struct Targets {
    pub sets: PartPointSets,
    pub masks: BTreeMap<PartLabel, PartMask>,
}

impl Targets {
    pub fn width(&self) -> usize {
        self.sets.width
    }

    pub fn height(&self) -> usize {
        self.sets.height
    }
}

/// Applies isolated-region removal and forehead exclusion to a label map.
pub fn prepare_targets(map: &LabelMap, manifest: &Manifest, pre: &Preprocess) -> Result<Targets> {
    let masks = map.part_masks(manifest)?;
    let mut sets = PartPointSets::new(map.width, map.height);
    for (part, mask) in &masks {
        let mask = if pre.remove_isolated {
            filter_isolated_regions(mask, pre.min_area.max(1))
        } else {
            mask.clone()
        };
        sets.insert(*part, mask_to_points(&mask));
    }
    if pre.exclude_forehead {
        sets = exclude_forehead(&sets);
    }
    let masks = PartLabel::ALL.iter().map(|&p| (p, sets.mask(p))).collect();
    Ok(Targets { sets, masks })
}

/// One 2D landmark bound to a model vertex.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Landmark {
    pub vertex: usize,
    pub position: Point2,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LandmarkSet {
    pub landmarks: Vec<Landmark>,
}

impl LandmarkSet {
    pub fn len(&self) -> usize {
        self.landmarks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.landmarks.is_empty()
    }

    /// Parses `vertex_index x y` lines; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut landmarks = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let bad = |what: &str| format_err(format!("landmark line {}: {what}: '{}'", lineno + 1, raw.trim()));
            let toks: Vec<&str> = line.split_whitespace().collect();
            if toks.len() != 3 {
                return Err(bad("expected 'vertex_index x y'"));
            }
            let vertex: i64 = toks[0].parse().map_err(|_| bad("vertex index is not an integer"))?;
            if vertex < 0 {
                return Err(bad("negative vertex index"));
            }
            let x: f64 = toks[1].parse().map_err(|_| bad("x is not a number"))?;
            let y: f64 = toks[2].parse().map_err(|_| bad("y is not a number"))?;
            if !x.is_finite() || !y.is_finite() {
                return Err(bad("non-finite coordinate"));
            }
            landmarks.push(Landmark {
                vertex: vertex as usize,
                position: Point2::new(x, y),
            });
        }
        Ok(LandmarkSet { landmarks })
    }

    pub fn to_text(&self) -> String {
        let mut s = String::from("# vertex_index x y\n");
        for l in &self.landmarks {
            s.push_str(&format!("{} {} {}\n", l.vertex, l.position.x, l.position.y));
        }
        s
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut f = fs::File::create(path)?;
        f.write_all(self.to_text().as_bytes())?;
        Ok(())
    }
}

pub fn load_landmarks(path: &Path) -> Result<LandmarkSet> {
    LandmarkSet::parse(&fs::read_to_string(path)?)
}

impl From<png::EncodingError> for Error {
    fn from(e: png::EncodingError) -> Self {
        format_err(e.to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mask_from_rows(rows: &[&str]) -> PartMask {
        let h = rows.len();
        let w = rows[0].len();
        let bits = rows.iter().flat_map(|r| r.bytes().map(|b| b == b'#')).collect();
        PartMask::from_bits(w, h, bits).unwrap()
    }

    #[test]
    fn mask_to_points_examples() {
        assert!(mask_to_points(&PartMask::new(3, 3).unwrap()).is_empty());
        let full = PartMask::from_bits(2, 2, vec![true; 4]).unwrap();
        assert_eq!(
            mask_to_points(&full),
            PointSet::from_xy(&[(0.0, 0.0), (1.0, 0.0), (0.0, 1.0), (1.0, 1.0)]).unwrap()
        );
        let mut one = PartMask::new(10, 5).unwrap();
        one.set(7, 3, true);
        assert_eq!(mask_to_points(&one), PointSet::from_xy(&[(7.0, 3.0)]).unwrap());
    }

    #[test]
    fn zero_sized_mask_rejected() {
        assert!(PartMask::new(0, 4).is_err());
    }

    #[test]
    fn isolated_regions_removed() {
        // 10x10 blob plus a 2-pixel speck.
        let mut m = PartMask::new(20, 20).unwrap();
        for y in 0..10 {
            for x in 0..10 {
                m.set(x, y, true);
            }
        }
        m.set(15, 15, true);
        m.set(16, 16, true); // diagonal: same 8-connected component
        let out = filter_isolated_regions(&m, 5);
        assert_eq!(out.count(), 100);
        assert!(!out.get(15, 15) && !out.get(16, 16));
        assert_eq!(filter_isolated_regions(&out, 5), out);
        let empty = PartMask::new(4, 4).unwrap();
        assert_eq!(filter_isolated_regions(&empty, 5), empty);
    }

    #[test]
    fn diagonal_pixels_form_one_component() {
        let m = mask_from_rows(&["#..", ".#.", "..#"]);
        assert_eq!(connected_components(&m).len(), 1);
        assert_eq!(filter_isolated_regions(&m, 3), m);
    }

    #[test]
    fn forehead_cut_uses_eyebrow_top() {
        let mut sets = PartPointSets::new(10, 100);
        sets.insert(PartLabel::LeftEyebrow, PointSet::from_xy(&[(2.0, 40.0), (3.0, 50.0)]).unwrap());
        sets.insert(PartLabel::RightEyebrow, PointSet::from_xy(&[(7.0, 45.0)]).unwrap());
        let skin: Vec<(f64, f64)> = (0..100).map(|y| (5.0, y as f64)).collect();
        sets.insert(PartLabel::Skin, PointSet::from_xy(&skin).unwrap());
        let out = exclude_forehead(&sets);
        let kept = out.get(PartLabel::Skin);
        assert_eq!(kept.len(), 60);
        assert!(kept.iter().all(|p| p.y >= 40.0));
        assert_eq!(out.get(PartLabel::LeftEyebrow), sets.get(PartLabel::LeftEyebrow));
    }

    #[test]
    fn forehead_cut_without_eyebrows_is_noop() {
        let mut sets = PartPointSets::new(10, 10);
        sets.insert(PartLabel::Skin, PointSet::from_xy(&[(1.0, 0.0), (1.0, 9.0)]).unwrap());
        assert_eq!(exclude_forehead(&sets), sets);
    }

    #[test]
    fn label_map_examples() {
        let zero = LabelMap::new(4, 4).unwrap();
        let sets = zero.to_point_sets(&Manifest::standard(4, 4)).unwrap();
        assert_eq!(sets.total_points(), 0);

        let mut m = LabelMap::new(2, 2).unwrap();
        m.codes[1] = 1;
        let sets = m.to_point_sets(&Manifest::standard(2, 2)).unwrap();
        assert_eq!(sets.get(PartLabel::LeftEye).points(), &[Point2::new(1.0, 0.0)]);

        m.codes[2] = 99;
        assert!(matches!(m.to_point_sets(&Manifest::standard(2, 2)), Err(Error::Format(_))));
        assert!(matches!(zero.to_point_sets(&Manifest::standard(4, 5)), Err(Error::Format(_))));
    }

    #[test]
    fn manifest_codes_remap() {
        let m = Manifest::parse("# test\nwidth=3\nheight=2\ncodes=10:nose, 20:skin, 255:background\n").unwrap();
        assert_eq!(m.codes.get(&10), Some(&Some(PartLabel::Nose)));
        assert_eq!(m.codes.get(&255), Some(&None));
        assert_eq!(m.codes.get(&1), None);
        assert_eq!(Manifest::parse(&m.to_text()).unwrap(), m);
        assert!(Manifest::parse("width=3\n").is_err());
        assert!(Manifest::parse("width=3\nheight=3\ncolour=red\n").is_err());
        assert!(Manifest::parse("width=0\nheight=3\n").is_err());
    }

    #[test]
    fn png_and_pgm_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut map = LabelMap::new(5, 3).unwrap();
        for (i, c) in map.codes.iter_mut().enumerate() {
            *c = (i % 9) as u8;
        }
        for name in ["m.png", "m.pgm"] {
            let p = dir.path().join(name);
            map.write(&p).unwrap();
            assert_eq!(LabelMap::read(&p).unwrap(), map);
        }
        let junk = dir.path().join("junk.png");
        fs::write(&junk, b"hello").unwrap();
        assert!(matches!(LabelMap::read(&junk), Err(Error::Format(_))));
    }

    #[test]
    fn pgm_header_with_comment() {
        let mut bytes = b"P5\n# made by hand\n2 1\n255\n".to_vec();
        bytes.extend_from_slice(&[3, 8]);
        let map = decode_pgm(&bytes).unwrap();
        assert_eq!(map.codes, vec![3, 8]);
    }

    #[test]
    fn landmark_examples() {
        let l = LandmarkSet::parse("0 12.5 30.0").unwrap();
        assert_eq!(l.landmarks, vec![Landmark { vertex: 0, position: Point2::new(12.5, 30.0) }]);
        assert!(LandmarkSet::parse("").unwrap().is_empty());
        assert!(matches!(LandmarkSet::parse("a b c"), Err(Error::Format(_))));
        assert!(matches!(LandmarkSet::parse("-1 0 0"), Err(Error::Format(_))));
        assert!(matches!(LandmarkSet::parse("1 2"), Err(Error::Format(_))));
        let with_comments = LandmarkSet::parse("# header\n3 1 2 # trailing\n\n4 5 6\n").unwrap();
        assert_eq!(with_comments.len(), 2);
        assert_eq!(LandmarkSet::parse(&with_comments.to_text()).unwrap(), with_comments);
    }

    #[test]
    fn prepare_targets_cleans_and_cuts() {
        let mut map = LabelMap::new(12, 12).unwrap();
        // Eyebrow row at y=4, skin everywhere below row 2, and a lone nose pixel.
        for x in 0..12 {
            for y in 2..12 {
                map.codes[y * 12 + x] = PartLabel::Skin.code();
            }
            map.codes[4 * 12 + x] = PartLabel::LeftEyebrow.code();
        }
        map.codes[11 * 12 + 11] = PartLabel::Nose.code();
        let t = prepare_targets(&map, &Manifest::standard(12, 12), &Preprocess { min_area: 4, ..Default::default() }).unwrap();
        assert!(t.sets.get(PartLabel::Nose).is_empty());
        assert!(t.sets.get(PartLabel::Skin).iter().all(|p| p.y >= 4.0));
        assert_eq!(t.masks[&PartLabel::Skin].count(), t.sets.get(PartLabel::Skin).len());
    }
}
