//! Versioned binary serialization of trained cascade models.
//!
//! Layout (all integers little-endian, floats as IEEE-754 bit patterns):
//!
//! ```text
//! magic "FTRK" | version u32 | endian marker u32 (0x01020304)
//! then tagged sections, each: tag [4 bytes] | payload length u64 | payload
//!   SHAP  shape model (dims, landmark indices, inter-ocular pair, bases)
//!   CAMR  focal length and principal point
//!   PRIR  identity prior standard deviations
//!   BANK  expression bank entries
//!   META  runtime initialization count and stage count
//!   STGE  one per stage: feature indexer + regressor
//!   END.  zero-length terminator
//! ```
//!
//! Matrices are stored column-major. Reads validate the tag and length of
//! every section and fail with the section name on any mismatch, so
//! truncated or corrupt files are rejected rather than misread.

use std::path::Path;

use nalgebra::{DMatrix, DVector, Point2};

use crate::cascade::{CascadeModel, CascadeStage, FeatureIndexer, FeaturePoint};
use crate::error::{Error, Result};
use crate::ferns::{boosted_from_parts, Fern, SplitTest};
use crate::gombf::{GombfModel, ModalityGroup, ModalityLayout};
use crate::shape_model::{Camera, ParametricShapeModel};

const MAGIC: &[u8; 4] = b"FTRK";
const VERSION: u32 = 1;
const ENDIAN_MARKER: u32 = 0x0102_0304;

struct Writer {
    buffer: Vec<u8>,
}

impl Writer {
    fn new() -> Self {
        Writer { buffer: Vec::new() }
    }
    fn u8(&mut self, v: u8) {
        self.buffer.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.buffer.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.buffer.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.buffer.extend_from_slice(&v.to_le_bytes());
    }
    fn usize(&mut self, v: usize) {
        self.u64(v as u64);
    }
    fn bytes(&mut self, v: &[u8]) {
        self.buffer.extend_from_slice(v);
    }
    fn matrix(&mut self, m: &DMatrix<f64>) {
        self.usize(m.nrows());
        self.usize(m.ncols());
        for v in m.iter() {
            self.f64(*v);
        }
    }
    fn vector(&mut self, v: &DVector<f64>) {
        self.usize(v.len());
        for x in v.iter() {
            self.f64(*x);
        }
    }
    fn section(&mut self, tag: &[u8; 4], payload: Writer) {
        self.bytes(tag);
        self.u64(payload.buffer.len() as u64);
        self.bytes(&payload.buffer);
    }
}

struct Reader<'a> {
    data: &'a [u8],
    cursor: usize,
    section: &'static str,
}

impl<'a> Reader<'a> {
    fn fail(&self, reason: impl Into<String>) -> Error {
        Error::ModelFormat {
            section: self.section,
            reason: reason.into(),
        }
    }
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.cursor + n > self.data.len() {
            return Err(self.fail(format!(
                "unexpected end of data at byte {} (wanted {n} more)",
                self.cursor
            )));
        }
        let slice = &self.data[self.cursor..self.cursor + n];
        self.cursor += n;
        Ok(slice)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn usize(&mut self) -> Result<usize> {
        let v = self.u64()?;
        usize::try_from(v).map_err(|_| self.fail(format!("length {v} overflows usize")))
    }
    fn counted(&mut self, what: &str, limit: usize) -> Result<usize> {
        let v = self.usize()?;
        if v > limit {
            return Err(self.fail(format!("{what} count {v} implausibly large")));
        }
        Ok(v)
    }
    fn matrix(&mut self) -> Result<DMatrix<f64>> {
        let rows = self.counted("matrix rows", 1 << 32)?;
        let cols = self.counted("matrix cols", 1 << 32)?;
        let mut m = DMatrix::zeros(rows, cols);
        for v in m.iter_mut() {
            *v = self.f64()?;
        }
        Ok(m)
    }
    fn vector(&mut self) -> Result<DVector<f64>> {
        let len = self.counted("vector length", 1 << 32)?;
        let mut v = DVector::zeros(len);
        for x in v.iter_mut() {
            *x = self.f64()?;
        }
        Ok(v)
    }
}

fn write_shape(w: &mut Writer, shape: &ParametricShapeModel) {
    w.usize(shape.vertex_count());
    w.usize(shape.identity_rank());
    w.usize(shape.expression_rank());
    w.usize(shape.landmark_count());
    for &idx in shape.landmark_indices() {
        w.usize(idx);
    }
    let (a, b) = shape.interocular_pair();
    w.usize(a);
    w.usize(b);
    w.matrix(shape.identity_basis());
    w.matrix(shape.expression_basis());
}

fn read_shape(r: &mut Reader) -> Result<ParametricShapeModel> {
    let _vertex_count = r.usize()?;
    let _identity_rank = r.usize()?;
    let _expression_rank = r.usize()?;
    let landmark_count = r.counted("landmarks", 1 << 24)?;
    let mut landmarks = Vec::with_capacity(landmark_count);
    for _ in 0..landmark_count {
        landmarks.push(r.usize()?);
    }
    let pair = (r.usize()?, r.usize()?);
    let identity = r.matrix()?;
    let expression = r.matrix()?;
    ParametricShapeModel::new(identity, expression, landmarks, pair)
}

fn write_indexer(w: &mut Writer, indexer: &FeatureIndexer) {
    w.usize(indexer.reference_landmarks().len());
    for p in indexer.reference_landmarks() {
        w.f64(p.x);
        w.f64(p.y);
    }
    w.usize(indexer.triangles().len());
    for tri in indexer.triangles() {
        for &v in tri {
            w.usize(v);
        }
    }
    w.usize(indexer.points().len());
    for p in indexer.points() {
        w.usize(p.triangle);
        for &b in &p.bary {
            w.f64(b);
        }
    }
}

fn read_indexer(r: &mut Reader) -> Result<FeatureIndexer> {
    let n = r.counted("reference landmarks", 1 << 24)?;
    let mut landmarks = Vec::with_capacity(n);
    for _ in 0..n {
        let x = r.f64()?;
        let y = r.f64()?;
        landmarks.push(Point2::new(x, y));
    }
    let t = r.counted("triangles", 1 << 24)?;
    let mut triangles = Vec::with_capacity(t);
    for _ in 0..t {
        triangles.push([r.usize()?, r.usize()?, r.usize()?]);
    }
    let m = r.counted("feature points", 1 << 24)?;
    let mut points = Vec::with_capacity(m);
    for _ in 0..m {
        let triangle = r.usize()?;
        let bary = [r.f64()?, r.f64()?, r.f64()?];
        points.push(FeaturePoint { triangle, bary });
    }
    FeatureIndexer::from_parts(landmarks, triangles, points)
}

fn write_regressor(w: &mut Writer, model: &GombfModel) {
    let groups = model.layout().groups();
    w.usize(groups.len());
    for g in groups {
        w.usize(g.name.len());
        w.bytes(g.name.as_bytes());
        w.usize(g.offset);
        w.usize(g.width);
        w.usize(g.fern_count);
    }
    w.usize(model.depth());
    w.usize(model.appearance_len());
    w.u8(u8::from(model.is_fused()));
    for boosted in model.group_models() {
        for fern in boosted.ferns() {
            for test in fern.tests() {
                w.usize(test.lhs);
                w.usize(test.rhs);
                w.f64(test.threshold);
            }
            w.matrix(fern.leaves());
        }
    }
    w.matrix(model.fused_leaves());
}

fn read_regressor(r: &mut Reader) -> Result<GombfModel> {
    let group_count = r.counted("modality groups", 1 << 16)?;
    let mut groups = Vec::with_capacity(group_count);
    for _ in 0..group_count {
        let name_len = r.counted("group name length", 1 << 10)?;
        let name = String::from_utf8(r.take(name_len)?.to_vec())
            .map_err(|_| r.fail("group name is not UTF-8"))?;
        groups.push(ModalityGroup {
            name,
            offset: r.usize()?,
            width: r.usize()?,
            fern_count: r.usize()?,
        });
    }
    let layout = ModalityLayout::new(groups)?;
    let depth = r.counted("fern depth", 64)?;
    let appearance_len = r.counted("appearance length", 1 << 24)?;
    let fused_by_ridge = r.u8()? != 0;

    let mut group_models = Vec::with_capacity(layout.groups().len());
    for g in layout.groups() {
        let mut ferns = Vec::with_capacity(g.fern_count);
        for _ in 0..g.fern_count {
            let mut tests = Vec::with_capacity(depth);
            for _ in 0..depth {
                tests.push(SplitTest {
                    lhs: r.usize()?,
                    rhs: r.usize()?,
                    threshold: r.f64()?,
                });
            }
            let leaves = r.matrix()?;
            ferns.push(Fern::new(tests, leaves)?);
        }
        group_models.push(boosted_from_parts(ferns, appearance_len, g.width)?);
    }
    let fused = r.matrix()?;
    GombfModel::from_parts(layout, group_models, fused, fused_by_ridge)
}

/// Serialize a trained cascade model to bytes.
pub fn model_to_bytes(model: &CascadeModel) -> Vec<u8> {
    let mut w = Writer::new();
    w.bytes(MAGIC);
    w.u32(VERSION);
    w.u32(ENDIAN_MARKER);

    let mut shape = Writer::new();
    write_shape(&mut shape, model.shape());
    w.section(b"SHAP", shape);

    let mut camera = Writer::new();
    camera.f64(model.camera().focal);
    camera.f64(model.camera().principal.0);
    camera.f64(model.camera().principal.1);
    w.section(b"CAMR", camera);

    let mut prior = Writer::new();
    prior.vector(model.prior_sigmas());
    w.section(b"PRIR", prior);

    let mut bank = Writer::new();
    bank.usize(model.expression_bank().len());
    for entry in model.expression_bank() {
        bank.vector(entry);
    }
    w.section(b"BANK", bank);

    let mut meta = Writer::new();
    meta.usize(model.runtime_initializations());
    meta.usize(model.stages().len());
    w.section(b"META", meta);

    for stage in model.stages() {
        let mut s = Writer::new();
        write_indexer(&mut s, &stage.indexer);
        write_regressor(&mut s, &stage.regressor);
        w.section(b"STGE", s);
    }

    w.section(b"END.", Writer::new());
    w.buffer
}

fn expect_section<'a>(
    data: &'a [u8],
    cursor: &mut usize,
    tag: &[u8; 4],
    name: &'static str,
) -> Result<Reader<'a>> {
    let fail = |reason: String| Error::ModelFormat {
        section: name,
        reason,
    };
    if *cursor + 12 > data.len() {
        return Err(fail("file truncated before section header".into()));
    }
    let found = &data[*cursor..*cursor + 4];
    if found != tag {
        return Err(fail(format!(
            "expected tag {:?}, found {:?}",
            String::from_utf8_lossy(tag),
            String::from_utf8_lossy(found)
        )));
    }
    let len = u64::from_le_bytes(data[*cursor + 4..*cursor + 12].try_into().unwrap()) as usize;
    if *cursor + 12 + len > data.len() {
        return Err(fail(format!("section payload of {len} bytes is truncated")));
    }
    let reader = Reader {
        data: &data[*cursor + 12..*cursor + 12 + len],
        cursor: 0,
        section: name,
    };
    *cursor += 12 + len;
    Ok(reader)
}

/// Deserialize a cascade model.
pub fn model_from_bytes(data: &[u8]) -> Result<CascadeModel> {
    let header_fail = |reason: &str| Error::ModelFormat {
        section: "header",
        reason: reason.into(),
    };
    if data.len() < 12 {
        return Err(header_fail("file shorter than the fixed header"));
    }
    if &data[0..4] != MAGIC {
        return Err(header_fail("bad magic; not a model file"));
    }
    let version = u32::from_le_bytes(data[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(header_fail(&format!(
            "unsupported version {version} (supported: {VERSION})"
        )));
    }
    if u32::from_le_bytes(data[8..12].try_into().unwrap()) != ENDIAN_MARKER {
        return Err(header_fail("endianness marker mismatch"));
    }
    let mut cursor = 12;

    let mut r = expect_section(data, &mut cursor, b"SHAP", "shape")?;
    let shape = read_shape(&mut r)?;

    let mut r = expect_section(data, &mut cursor, b"CAMR", "camera")?;
    let camera = Camera::new(r.f64()?, (r.f64()?, r.f64()?))?;

    let mut r = expect_section(data, &mut cursor, b"PRIR", "prior")?;
    let prior_sigmas = r.vector()?;

    let mut r = expect_section(data, &mut cursor, b"BANK", "bank")?;
    let entries = r.counted("bank entries", 1 << 24)?;
    let mut bank = Vec::with_capacity(entries);
    for _ in 0..entries {
        bank.push(r.vector()?);
    }

    let mut r = expect_section(data, &mut cursor, b"META", "meta")?;
    let runtime_inits = r.usize()?;
    let stage_count = r.counted("stages", 1 << 16)?;

    let mut stages = Vec::with_capacity(stage_count);
    for _ in 0..stage_count {
        let mut r = expect_section(data, &mut cursor, b"STGE", "stage")?;
        let indexer = read_indexer(&mut r)?;
        let regressor = read_regressor(&mut r)?;
        stages.push(CascadeStage { indexer, regressor });
    }

    expect_section(data, &mut cursor, b"END.", "terminator")?;
    CascadeModel::from_parts(shape, camera, prior_sigmas, stages, bank, runtime_inits)
}

/// Write a model file atomically (temp file + rename).
pub fn save_model(model: &CascadeModel, path: &Path) -> Result<()> {
    let bytes = model_to_bytes(model);
    let tmp = path.with_extension("tmp-write");
    std::fs::write(&tmp, &bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Load a model file.
pub fn load_model(path: &Path) -> Result<CascadeModel> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    model_from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cascade::{train_cascade, CascadeConfig, RegressorMode, TrainingFrame};
    use crate::synthscene::{generate_sequence, make_toy_model, SequenceConfig, ToyModelSpec};
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn trained_model() -> CascadeModel {
        let toy = make_toy_model(&ToyModelSpec {
            vertex_count: 120,
            identity_rank: 3,
            expression_rank: 3,
            landmark_count: 16,
            seed: 5,
            ..ToyModelSpec::default()
        })
        .unwrap();
        let mut frames = Vec::new();
        for s in 0..2 {
            let seq = generate_sequence(&toy, &SequenceConfig::default(), 6, 50 + s).unwrap();
            for (image, truth) in seq.frames.into_iter().zip(seq.ground_truth) {
                frames.push(TrainingFrame {
                    image,
                    truth,
                    statics: seq.statics.clone(),
                });
            }
        }
        let config = CascadeConfig {
            stages: 2,
            depth: 3,
            mode: RegressorMode::Grouped { fern_counts: [3; 4] },
            feature_count: 50,
            runtime_initializations: 4,
            seed: 77,
            ..CascadeConfig::default()
        };
        train_cascade(&toy.shape, &toy.prior_sigmas, &frames, &config)
            .unwrap()
            .0
    }

    #[test]
    fn round_trip_is_bit_exact_and_predicts_identically() {
        let model = trained_model();
        let bytes = model_to_bytes(&model);
        let back = model_from_bytes(&bytes).unwrap();
        assert_eq!(bytes, model_to_bytes(&back));

        // Predictions agree exactly on random appearance probes.
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = model.stages()[0].regressor.appearance_len();
        for _ in 0..1000 {
            let probe: Vec<f32> = (0..m).map(|_| rng.random_range(0.0f32..1.0)).collect();
            let a = model.stages()[0].regressor.predict(&probe).unwrap();
            let b = back.stages()[0].regressor.predict(&probe).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn truncated_and_corrupt_files_name_the_failing_section() {
        let model = trained_model();
        let bytes = model_to_bytes(&model);

        let err = model_from_bytes(&bytes[..bytes.len() / 2]).unwrap_err();
        assert!(matches!(err, Error::ModelFormat { .. }), "{err}");

        let mut wrong_magic = bytes.clone();
        wrong_magic[0] = b'X';
        let err = model_from_bytes(&wrong_magic).unwrap_err();
        assert!(err.to_string().contains("header"), "{err}");

        let mut wrong_version = bytes.clone();
        wrong_version[4] = 9;
        let err = model_from_bytes(&wrong_version).unwrap_err();
        assert!(err.to_string().contains("version"), "{err}");
    }

    #[test]
    fn save_and_load_through_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.bin");
        let model = trained_model();
        save_model(&model, &path).unwrap();
        let back = load_model(&path).unwrap();
        assert_eq!(model_to_bytes(&model), model_to_bytes(&back));
        // No stray temp file.
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
    }
}
