//! Per-frame face parameter model and expression-sequence preprocessing.
//!
//! A tracked video frame is described by a 261-dimensional vector made of
//! head pose, identity and reflectance PCA coefficients, 64 expression
//! coefficients, spherical-harmonics illumination and two pupil positions.
//! Only the expression block takes part in style translation; the rest is
//! carried along so full parameter files can be read and written.

pub mod io;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const POSE_DIM: usize = 6;
pub const IDENTITY_DIM: usize = 80;
pub const REFLECTANCE_DIM: usize = 80;
pub const EXPR_DIM: usize = 64;
pub const ILLUMINATION_DIM: usize = 27;
pub const EYE_DIM: usize = 2;
pub const PARAM_DIM: usize =
    POSE_DIM + IDENTITY_DIM + REFLECTANCE_DIM + EXPR_DIM + ILLUMINATION_DIM + 2 * EYE_DIM;

/// Offset of the expression block inside a packed parameter vector.
pub const EXPR_OFFSET: usize = POSE_DIM + IDENTITY_DIM + REFLECTANCE_DIM;

pub const MOUTH_COUNT: usize = 10;

/// Divisor floor for coefficients whose variance is (numerically) zero.
pub const STD_EPS: f64 = 1e-8;

/// One expression vector.
pub type Expr = [f64; EXPR_DIM];

/// Full per-frame face state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterVector {
    /// Axis-angle rotation followed by translation.
    pub pose: Vec<f64>,
    pub identity_alpha: Vec<f64>,
    pub reflectance_beta: Vec<f64>,
    pub expression_delta: Vec<f64>,
    /// Nine spherical-harmonics bands per color channel.
    pub illumination_gamma: Vec<f64>,
    pub eye_left: Vec<f64>,
    pub eye_right: Vec<f64>,
}

impl Default for ParameterVector {
    fn default() -> Self {
        Self {
            pose: vec![0.0; POSE_DIM],
            identity_alpha: vec![0.0; IDENTITY_DIM],
            reflectance_beta: vec![0.0; REFLECTANCE_DIM],
            expression_delta: vec![0.0; EXPR_DIM],
            illumination_gamma: vec![0.0; ILLUMINATION_DIM],
            eye_left: vec![0.0; EYE_DIM],
            eye_right: vec![0.0; EYE_DIM],
        }
    }
}

impl ParameterVector {
    fn blocks(&self) -> [(&'static str, &[f64], usize); 7] {
        [
            ("pose", &self.pose, POSE_DIM),
            ("identity_alpha", &self.identity_alpha, IDENTITY_DIM),
            ("reflectance_beta", &self.reflectance_beta, REFLECTANCE_DIM),
            ("expression_delta", &self.expression_delta, EXPR_DIM),
            ("illumination_gamma", &self.illumination_gamma, ILLUMINATION_DIM),
            ("eye_left", &self.eye_left, EYE_DIM),
            ("eye_right", &self.eye_right, EYE_DIM),
        ]
    }

    /// The expression block as a fixed-size array.
    pub fn expression(&self) -> Result<Expr> {
        self.expression_delta
            .as_slice()
            .try_into()
            .map_err(|_| Error::FieldLength {
                field: "expression_delta",
                expected: EXPR_DIM,
                actual: self.expression_delta.len(),
            })
    }
}

/// Flattens `v` in the order pose, α, β, δ, γ, left eye, right eye.
pub fn pack_parameters(v: &ParameterVector) -> Result<Vec<f64>> {
    let mut flat = Vec::with_capacity(PARAM_DIM);
    for (field, data, expected) in v.blocks() {
        if data.len() != expected {
            return Err(Error::FieldLength {
                field,
                expected,
                actual: data.len(),
            });
        }
        flat.extend_from_slice(data);
    }
    Ok(flat)
}

pub fn unpack_parameters(flat: &[f64]) -> Result<ParameterVector> {
    if flat.len() != PARAM_DIM {
        return Err(Error::Length {
            expected: PARAM_DIM,
            actual: flat.len(),
        });
    }
    let mut rest = flat;
    let mut take = |n: usize| {
        let (head, tail) = rest.split_at(n);
        rest = tail;
        head.to_vec()
    };
    Ok(ParameterVector {
        pose: take(POSE_DIM),
        identity_alpha: take(IDENTITY_DIM),
        reflectance_beta: take(REFLECTANCE_DIM),
        expression_delta: take(EXPR_DIM),
        illumination_gamma: take(ILLUMINATION_DIM),
        eye_left: take(EYE_DIM),
        eye_right: take(EYE_DIM),
    })
}

/// Per-coefficient mean and population standard deviation of one video.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl NormStats {
    pub fn identity() -> Self {
        Self {
            mean: vec![0.0; EXPR_DIM],
            std: vec![1.0; EXPR_DIM],
        }
    }

    /// Statistics of the given frames. Needs at least two frames.
    pub fn from_frames(frames: &[Expr]) -> Result<Self> {
        if frames.len() < 2 {
            return Err(Error::TooFewFrames {
                frames: frames.len(),
                min: 2,
            });
        }
        let n = frames.len() as f64;
        let mut mean = vec![0.0; EXPR_DIM];
        for f in frames {
            for (m, x) in mean.iter_mut().zip(f) {
                *m += x;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; EXPR_DIM];
        for f in frames {
            for ((v, x), m) in var.iter_mut().zip(f).zip(&mean) {
                *v += (x - m) * (x - m);
            }
        }
        let std = var.into_iter().map(|v| (v / n).sqrt()).collect();
        Ok(Self { mean, std })
    }

    pub fn validate(&self) -> Result<()> {
        for (field, v) in [("mean", &self.mean), ("std", &self.std)] {
            if v.len() != EXPR_DIM {
                return Err(Error::FieldLength {
                    field,
                    expected: EXPR_DIM,
                    actual: v.len(),
                });
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite(format!("normalization {field}")));
            }
        }
        Ok(())
    }

    pub fn normalize(&self, x: &Expr) -> Expr {
        let mut out = [0.0; EXPR_DIM];
        for k in 0..EXPR_DIM {
            out[k] = (x[k] - self.mean[k]) / self.std[k].max(STD_EPS);
        }
        out
    }

    pub fn denormalize(&self, x: &Expr) -> Expr {
        let mut out = [0.0; EXPR_DIM];
        for k in 0..EXPR_DIM {
            out[k] = x[k] * self.std[k] + self.mean[k];
        }
        out
    }
}

/// Expression coefficients of one video, in frame order.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpressionSequence {
    pub frames: Vec<Expr>,
    /// Set once the sequence has been normalized.
    pub stats: Option<NormStats>,
    pub frame_rate: f64,
}

pub const DEFAULT_FRAME_RATE: f64 = 25.0;

impl ExpressionSequence {
    pub fn new(frames: Vec<Expr>) -> Self {
        Self {
            frames,
            stats: None,
            frame_rate: DEFAULT_FRAME_RATE,
        }
    }

    /// Builds a sequence from dynamically sized rows, checking each dimension.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let frames = rows
            .iter()
            .enumerate()
            .map(|(frame, r)| {
                r.as_slice().try_into().map_err(|_| Error::FrameDim {
                    frame,
                    expected: EXPR_DIM,
                    actual: r.len(),
                })
            })
            .collect::<Result<Vec<Expr>>>()?;
        Ok(Self::new(frames))
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Frames `[start, end)` as a new, un-normalized sequence.
    pub fn slice(&self, start: usize, end: usize) -> Self {
        Self {
            frames: self.frames[start..end].to_vec(),
            stats: None,
            frame_rate: self.frame_rate,
        }
    }
}

/// Zero-mean, unit-variance normalization per coefficient.
pub fn normalize_sequence(seq: &ExpressionSequence) -> Result<(ExpressionSequence, NormStats)> {
    let stats = NormStats::from_frames(&seq.frames)?;
    let out = apply_normalization(seq, &stats)?;
    Ok((out, stats))
}

/// Normalizes with externally supplied statistics.
pub fn apply_normalization(seq: &ExpressionSequence, stats: &NormStats) -> Result<ExpressionSequence> {
    stats.validate()?;
    Ok(ExpressionSequence {
        frames: seq.frames.iter().map(|f| stats.normalize(f)).collect(),
        stats: Some(stats.clone()),
        frame_rate: seq.frame_rate,
    })
}

/// Inverts normalization; uses `stats` when given, otherwise the sequence's own.
pub fn denormalize_sequence(
    seq: &ExpressionSequence,
    stats: Option<&NormStats>,
) -> Result<ExpressionSequence> {
    let stats = stats.or(seq.stats.as_ref()).ok_or(Error::MissingStats)?;
    stats.validate()?;
    Ok(ExpressionSequence {
        frames: seq.frames.iter().map(|f| stats.denormalize(f)).collect(),
        stats: None,
        frame_rate: seq.frame_rate,
    })
}

/// `N` consecutive expression vectors, oldest first.
#[derive(Debug, Clone, PartialEq)]
pub struct Window {
    pub steps: Vec<Expr>,
}

impl Window {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

/// All windows of `n` consecutive frames; window `i` covers `[i, i + n)`.
pub fn sliding_windows(seq: &ExpressionSequence, n: usize) -> Vec<Window> {
    if n == 0 || seq.len() < n {
        return Vec::new();
    }
    seq.frames
        .windows(n)
        .map(|w| Window { steps: w.to_vec() })
        .collect()
}

/// One window per frame: window `f` ends at frame `f`, with the first frame
/// replicated to fill positions before the sequence start.
pub fn padded_windows(seq: &ExpressionSequence, n: usize) -> Vec<Window> {
    if seq.is_empty() || n == 0 {
        return Vec::new();
    }
    (0..seq.len())
        .map(|f| Window {
            steps: (0..n)
                .map(|j| {
                    let idx = (f + j).saturating_sub(n - 1);
                    seq.frames[idx]
                })
                .collect(),
        })
        .collect()
}

/// The ten expression coefficients that drive mouth articulation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct MouthIndexSet {
    indices: [usize; MOUTH_COUNT],
}

impl MouthIndexSet {
    pub fn new(indices: &[usize]) -> Result<Self> {
        let indices: [usize; MOUTH_COUNT] = indices.try_into().map_err(|_| {
            Error::MouthIndices(format!(
                "expected {MOUTH_COUNT} indices, got {}",
                indices.len()
            ))
        })?;
        for (i, &a) in indices.iter().enumerate() {
            if a >= EXPR_DIM {
                return Err(Error::MouthIndices(format!(
                    "index {a} out of range [0, {EXPR_DIM})"
                )));
            }
            if indices[..i].contains(&a) {
                return Err(Error::MouthIndices(format!("index {a} repeated")));
            }
        }
        Ok(Self { indices })
    }

    pub fn indices(&self) -> &[usize; MOUTH_COUNT] {
        &self.indices
    }

    pub fn contains(&self, k: usize) -> bool {
        self.indices.contains(&k)
    }
}

impl Default for MouthIndexSet {
    fn default() -> Self {
        Self {
            indices: std::array::from_fn(|i| i),
        }
    }
}

impl TryFrom<Vec<usize>> for MouthIndexSet {
    type Error = Error;

    fn try_from(v: Vec<usize>) -> Result<Self> {
        Self::new(&v)
    }
}

impl From<MouthIndexSet> for Vec<usize> {
    fn from(m: MouthIndexSet) -> Self {
        m.indices.to_vec()
    }
}

pub fn select_mouth(delta: &[f64], m: &MouthIndexSet) -> Result<[f64; MOUTH_COUNT]> {
    if delta.len() != EXPR_DIM {
        return Err(Error::Length {
            expected: EXPR_DIM,
            actual: delta.len(),
        });
    }
    Ok(m.indices.map(|k| delta[k]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn seq_from_trace(trace: &[f64]) -> ExpressionSequence {
        ExpressionSequence::new(
            trace
                .iter()
                .map(|&x| {
                    let mut f = [0.0; EXPR_DIM];
                    f[0] = x;
                    f
                })
                .collect(),
        )
    }

    #[test]
    fn packed_length_is_261() {
        assert_eq!(PARAM_DIM, 261);
        let flat = pack_parameters(&ParameterVector::default()).unwrap();
        assert_eq!(flat, vec![0.0; 261]);
    }

    #[test]
    fn pack_names_bad_field() {
        let mut v = ParameterVector::default();
        v.illumination_gamma.pop();
        match pack_parameters(&v) {
            Err(Error::FieldLength { field, expected, actual }) => {
                assert_eq!((field, expected, actual), ("illumination_gamma", 27, 26));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unpack_rejects_wrong_length() {
        let err = unpack_parameters(&[0.0; 260]).unwrap_err();
        assert!(matches!(err, Error::Length { expected: 261, actual: 260 }));
        let v = unpack_parameters(&[0.0; 261]).unwrap();
        assert_eq!(v, ParameterVector::default());
    }

    #[test]
    fn block_order() {
        let flat: Vec<f64> = (0..PARAM_DIM).map(|i| i as f64).collect();
        let v = unpack_parameters(&flat).unwrap();
        assert_eq!(v.pose[0], 0.0);
        assert_eq!(v.identity_alpha[0], 6.0);
        assert_eq!(v.reflectance_beta[0], 86.0);
        assert_eq!(v.expression_delta[0], EXPR_OFFSET as f64);
        assert_eq!(v.illumination_gamma[0], 230.0);
        assert_eq!(v.eye_left, vec![257.0, 258.0]);
        assert_eq!(v.eye_right, vec![259.0, 260.0]);
    }

    #[test]
    fn normalize_two_frame_trace() {
        let (n, stats) = normalize_sequence(&seq_from_trace(&[1.0, 3.0])).unwrap();
        assert_eq!(stats.mean[0], 2.0);
        assert_eq!(stats.std[0], 1.0);
        assert_eq!(n.frames[0][0], -1.0);
        assert_eq!(n.frames[1][0], 1.0);
    }

    #[test]
    fn constant_trace_maps_to_zero() {
        let (n, _) = normalize_sequence(&seq_from_trace(&[5.0, 5.0, 5.0])).unwrap();
        assert!(n.frames.iter().all(|f| f[0] == 0.0));
    }

    #[test]
    fn normalize_needs_two_frames() {
        let err = normalize_sequence(&seq_from_trace(&[1.0])).unwrap_err();
        assert!(matches!(err, Error::TooFewFrames { frames: 1, min: 2 }));
    }

    #[test]
    fn denormalize_cases() {
        let zeros = ExpressionSequence::new(vec![[0.0; EXPR_DIM]; 3]);
        let stats = NormStats {
            mean: vec![2.0; EXPR_DIM],
            std: vec![1.0; EXPR_DIM],
        };
        let out = denormalize_sequence(&zeros, Some(&stats)).unwrap();
        assert!(out.frames.iter().flatten().all(|&x| x == 2.0));

        let seq = seq_from_trace(&[0.5, -1.25]);
        let out = denormalize_sequence(&seq, Some(&NormStats::identity())).unwrap();
        assert_eq!(out.frames, seq.frames);

        assert!(matches!(
            denormalize_sequence(&seq, None),
            Err(Error::MissingStats)
        ));
    }

    #[test]
    fn window_counts() {
        let seq = seq_from_trace(&[0.0; 10]);
        assert_eq!(sliding_windows(&seq, 7).len(), 4);
        let seq7 = seq_from_trace(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0]);
        let w = sliding_windows(&seq7, 7);
        assert_eq!(w.len(), 1);
        assert_eq!(w[0].steps, seq7.frames);
        assert!(sliding_windows(&seq_from_trace(&[0.0; 6]), 7).is_empty());
    }

    #[test]
    fn padded_windows_replicate_start() {
        let seq = seq_from_trace(&[1.0, 2.0, 3.0]);
        let w = padded_windows(&seq, 3);
        assert_eq!(w.len(), 3);
        let first: Vec<f64> = w[0].steps.iter().map(|s| s[0]).collect();
        let last: Vec<f64> = w[2].steps.iter().map(|s| s[0]).collect();
        assert_eq!(first, vec![1.0, 1.0, 1.0]);
        assert_eq!(last, vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn mouth_selection() {
        let delta: Vec<f64> = (0..EXPR_DIM).map(|i| i as f64).collect();
        let m = MouthIndexSet::default();
        let got = select_mouth(&delta, &m).unwrap();
        assert_eq!(got.to_vec(), (0..10).map(|i| i as f64).collect::<Vec<_>>());
        assert_eq!(select_mouth(&[0.0; EXPR_DIM], &m).unwrap(), [0.0; 10]);

        assert!(MouthIndexSet::new(&[63, 0, 1, 2, 3, 4, 5, 6, 7, 63]).is_err());
        assert!(MouthIndexSet::new(&[63, 0, 1, 2, 3, 4, 5, 6, 7, 8]).is_ok());
        assert!(MouthIndexSet::new(&[64, 0, 1, 2, 3, 4, 5, 6, 7, 8]).is_err());
        assert!(MouthIndexSet::new(&[0, 1, 2]).is_err());
    }

    #[test]
    fn mouth_set_json() {
        let m: MouthIndexSet = serde_json::from_str("[9,8,7,6,5,4,3,2,1,0]").unwrap();
        assert_eq!(m.indices()[0], 9);
        assert!(serde_json::from_str::<MouthIndexSet>("[0,0,1,2,3,4,5,6,7,8]").is_err());
    }

    fn arb_flat() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-1e6f64..1e6, PARAM_DIM)
    }

    proptest! {
        #[test]
        fn pack_unpack_roundtrip(flat in arb_flat()) {
            let v = unpack_parameters(&flat).unwrap();
            prop_assert_eq!(pack_parameters(&v).unwrap(), flat);
        }

        #[test]
        fn window_count_formula(len in 0usize..40, n in 1usize..12) {
            let seq = seq_from_trace(&vec![0.0; len]);
            prop_assert_eq!(sliding_windows(&seq, n).len(), (len + 1).saturating_sub(n));
        }

        #[test]
        fn normalization_roundtrip_and_idempotence(
            trace in prop::collection::vec(-50.0f64..50.0, 2..40),
        ) {
            let seq = seq_from_trace(&trace);
            let (n, stats) = normalize_sequence(&seq).unwrap();
            let back = denormalize_sequence(&n, Some(&stats)).unwrap();
            for (a, b) in back.frames.iter().zip(&seq.frames) {
                prop_assert!((a[0] - b[0]).abs() <= 1e-12);
            }
            if stats.std[0] > 1e-6 {
                let (nn, _) = normalize_sequence(&n).unwrap();
                for (a, b) in nn.frames.iter().zip(&n.frames) {
                    prop_assert!((a[0] - b[0]).abs() <= 1e-9);
                }
            }
        }
    }
}
