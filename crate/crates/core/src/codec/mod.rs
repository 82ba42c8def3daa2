//! Patch tokenizer: non-overlapping 16×16 time-mel patches quantized against
//! a k-means codebook.
//!
//! A 256×960 mel maps to a 16×60 [`TokenGrid`] (960 tokens); the legacy
//! 80×848 mel maps to 5×53 (265 tokens).

mod checkpoint;
mod grid;
mod kmeans;

use ndarray::{Array2, ArrayView1, ArrayView2, Axis};
use thiserror::Error;

use crate::dsp::{MelSpectrogram, StftConfig, LOG_FLOOR};

pub use checkpoint::{read_codebook, write_codebook, CODEBOOK_FORMAT_VERSION, CODEBOOK_MAGIC};
pub use grid::TokenGrid;
pub use kmeans::{kmeans, nearest, train_codebook, KMeans, KMeansParams, DEFAULT_RESTARTS};

/// Patch side length along both axes.
pub const PATCH: usize = 16;
/// Flattened patch dimension.
pub const PATCH_DIM: usize = PATCH * PATCH;

#[derive(Debug, Error)]
pub enum CodecError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("cell ({f}, {t}) is masked; decoding needs a complete grid")]
    MaskedCell { f: usize, t: usize },
    #[error("cell {cell} holds index {index}, codebook has {k} entries")]
    IndexOutOfRange { cell: usize, index: u32, k: usize },
    #[error("need at least {needed} distinct patches, found {found}")]
    NotEnoughDistinct { needed: usize, found: usize },
    #[error("invalid codebook: {0}")]
    InvalidCodebook(String),
    #[error("checkpoint format: {0}")]
    Format(String),
    #[error("checkpoint version {found}, this build reads {expected}")]
    VersionMismatch { expected: u32, found: u32 },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, CodecError>;

/// `(mel_bins / 16, ceil(frames / 16))`.
pub fn grid_shape(mel_bins: usize, frames: usize) -> Result<(usize, usize)> {
    if mel_bins == 0 || mel_bins % PATCH != 0 {
        return Err(CodecError::Config(format!(
            "mel_bins {mel_bins} is not a positive multiple of {PATCH}"
        )));
    }
    Ok((mel_bins / PATCH, frames.div_ceil(PATCH)))
}

/// Flattened patches in grid order (`f * time + t`), one per row.
///
/// Within a patch, element `(bin, frame)` sits at `bin * 16 + frame`.
#[derive(Debug, Clone, PartialEq)]
pub struct Patches {
    pub freq: usize,
    pub time: usize,
    /// Frames in the source spectrogram before padding.
    pub frames: usize,
    pub data: Array2<f32>,
}

impl Patches {
    pub fn len(&self) -> usize {
        self.data.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.data.nrows() == 0
    }

    pub fn coords(&self, row: usize) -> (usize, usize) {
        (row / self.time, row % self.time)
    }
}

/// Cuts a mel spectrogram into 16×16 patches, padding the frame axis up to
/// a multiple of 16 with the log floor.
pub fn patchify(m: &MelSpectrogram) -> Result<Patches> {
    let (freq, time) = grid_shape(m.mel_bins(), m.frames())?;
    let frames = m.frames();
    let src = m.data();
    let mut data = Array2::<f32>::from_elem((freq * time, PATCH_DIM), LOG_FLOOR);
    for f in 0..freq {
        for t in 0..time {
            let mut row = data.row_mut(f * time + t);
            for b in 0..PATCH {
                for j in 0..PATCH {
                    let frame = t * PATCH + j;
                    if frame < frames {
                        row[b * PATCH + j] = src[[f * PATCH + b, frame]];
                    }
                }
            }
        }
    }
    Ok(Patches {
        freq,
        time,
        frames,
        data,
    })
}

/// Inverse of [`patchify`]; trims the padded frames.
pub fn unpatchify(patches: &Patches, config: &StftConfig) -> Result<MelSpectrogram> {
    if patches.data.ncols() != PATCH_DIM || patches.len() != patches.freq * patches.time {
        return Err(CodecError::ShapeMismatch("patch matrix".into()));
    }
    if config.mel_bins != patches.freq * PATCH {
        return Err(CodecError::ShapeMismatch(format!(
            "{} mel bins for {} patch rows",
            config.mel_bins, patches.freq
        )));
    }
    let mut out = Array2::<f32>::zeros((config.mel_bins, patches.frames));
    for (row_idx, row) in patches.data.outer_iter().enumerate() {
        let (f, t) = patches.coords(row_idx);
        for b in 0..PATCH {
            for j in 0..PATCH {
                let frame = t * PATCH + j;
                if frame < patches.frames {
                    out[[f * PATCH + b, frame]] = row[b * PATCH + j];
                }
            }
        }
    }
    MelSpectrogram::new(out, config.clone()).map_err(|e| CodecError::ShapeMismatch(e.to_string()))
}

/// `K × D` table of patch vectors. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    entries: Array2<f32>,
    seed: u64,
}

impl Codebook {
    pub fn new(entries: Array2<f32>, seed: u64) -> Result<Self> {
        let k = entries.nrows();
        if k < 2 {
            return Err(CodecError::InvalidCodebook(format!("K = {k}, need at least 2")));
        }
        if entries.iter().any(|v| !v.is_finite()) {
            return Err(CodecError::InvalidCodebook("non-finite entry".into()));
        }
        let mut seen = std::collections::HashSet::with_capacity(k);
        for (i, row) in entries.outer_iter().enumerate() {
            let key: Vec<u32> = row.iter().map(|v| v.to_bits()).collect();
            if !seen.insert(key) {
                return Err(CodecError::InvalidCodebook(format!(
                    "codeword {i} duplicates an earlier one"
                )));
            }
        }
        Ok(Self { entries, seed })
    }

    pub fn len(&self) -> usize {
        self.entries.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.entries.ncols()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn entries(&self) -> ArrayView2<'_, f32> {
        self.entries.view()
    }

    pub fn codeword(&self, index: usize) -> ArrayView1<'_, f32> {
        self.entries.row(index)
    }

    /// Hex SHA-256 of the serialized checkpoint bytes.
    pub fn content_hash(&self) -> String {
        use sha2::Digest;
        let bytes = checkpoint::encode(self);
        sha2::Sha256::digest(&bytes)
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}

/// Nearest-codeword tokenization. Ties go to the lowest index.
pub fn vq_encode(m: &MelSpectrogram, cb: &Codebook) -> Result<TokenGrid> {
    if cb.dim() != PATCH_DIM {
        return Err(CodecError::ShapeMismatch(format!(
            "codebook dimension {} != {PATCH_DIM}",
            cb.dim()
        )));
    }
    let patches = patchify(m)?;
    let (indices, _) = nearest(patches.data.view(), cb.entries());
    TokenGrid::from_indices(patches.freq, patches.time, indices)
}

/// Tiles codewords back into a spectrogram of `frames` frames (defaults to
/// the full `16 × time`).
pub fn vq_decode(
    g: &TokenGrid,
    cb: &Codebook,
    config: &StftConfig,
    frames: Option<usize>,
) -> Result<MelSpectrogram> {
    if let Some(cell) = g.mask().iter().position(|&m| m) {
        let (f, t) = g.coords(cell);
        return Err(CodecError::MaskedCell { f, t });
    }
    g.check_vocab(cb.len())?;
    if cb.dim() != PATCH_DIM {
        return Err(CodecError::ShapeMismatch(format!(
            "codebook dimension {} != {PATCH_DIM}",
            cb.dim()
        )));
    }
    let full = g.time() * PATCH;
    let frames = frames.unwrap_or(full);
    if frames > full || frames.div_ceil(PATCH) != g.time() {
        return Err(CodecError::ShapeMismatch(format!(
            "{frames} frames for {} token columns",
            g.time()
        )));
    }
    let data = cb.entries.select(Axis(0), &g.indices().iter().map(|&i| i as usize).collect::<Vec<_>>());
    let patches = Patches {
        freq: g.freq(),
        time: g.time(),
        frames,
        data,
    };
    unpatchify(&patches, config)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_codebook(k: usize, seed: u64) -> Codebook {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Codebook::new(
            Array2::from_shape_fn((k, PATCH_DIM), |_| rng.random::<f32>() * 4.0),
            seed,
        )
        .unwrap()
    }

    fn mel(bins: usize, frames: usize, seed: u64) -> MelSpectrogram {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut cfg = StftConfig::studio_48k();
        cfg.mel_bins = bins;
        MelSpectrogram::new(Array2::from_shape_fn((bins, frames), |_| rng.random::<f32>() * 4.0), cfg)
            .unwrap()
    }

    #[test]
    fn table_geometry() {
        assert_eq!(patchify(&mel(256, 960, 1)).unwrap().len(), 960);
        assert_eq!(grid_shape(256, 960).unwrap(), (16, 60));
        assert_eq!(grid_shape(80, 848).unwrap(), (5, 53));
        assert_eq!(grid_shape(256, 848).unwrap(), (16, 53));
        assert_eq!(grid_shape(256, 850).unwrap(), (16, 54));
        assert!(matches!(grid_shape(250, 960), Err(CodecError::Config(_))));
    }

    #[test]
    fn single_patch_is_flattened_input() {
        let m = mel(16, 16, 2);
        let p = patchify(&m).unwrap();
        assert_eq!(p.len(), 1);
        let expected: Vec<f32> = m.data().iter().copied().collect();
        assert_eq!(p.data.row(0).to_vec(), expected);
    }

    #[test]
    fn unpatchify_inverts_with_padding() {
        let m = mel(32, 37, 3);
        let p = patchify(&m).unwrap();
        assert_eq!((p.freq, p.time), (2, 3));
        // padded frames carry the floor
        assert_eq!(p.data[[2, 15]], LOG_FLOOR);
        assert_eq!(unpatchify(&p, m.config()).unwrap(), m);
    }

    #[test]
    fn tiled_codeword_encodes_to_that_index() {
        let cb = random_codebook(16, 4);
        let g = TokenGrid::from_indices(16, 60, vec![7; 960]).unwrap();
        let m = vq_decode(&g, &cb, &StftConfig::studio_48k(), None).unwrap();
        assert_eq!(m.data().dim(), (256, 960));
        let back = vq_encode(&m, &cb).unwrap();
        assert_eq!(back.shape(), (16, 60));
        assert!(back.indices().iter().all(|&i| i == 7));
        assert!(back.is_complete());
    }

    #[test]
    fn constant_grid_decodes_to_tiled_codeword() {
        let cb = random_codebook(4, 5);
        let g = TokenGrid::from_indices(2, 2, vec![0; 4]).unwrap();
        let mut cfg = StftConfig::studio_48k();
        cfg.mel_bins = 32;
        let m = vq_decode(&g, &cb, &cfg, None).unwrap();
        let w = cb.codeword(0);
        for bin in 0..32 {
            for frame in 0..32 {
                assert_eq!(m.data()[[bin, frame]], w[(bin % 16) * 16 + frame % 16]);
            }
        }
    }

    #[test]
    fn decode_rejects_masked_and_out_of_range() {
        let cb = random_codebook(4, 6);
        let cfg = StftConfig::studio_48k();
        let mut g = TokenGrid::from_indices(16, 2, vec![1; 32]).unwrap();
        g.mask_cell(17);
        assert!(matches!(
            vq_decode(&g, &cb, &cfg, None),
            Err(CodecError::MaskedCell { f: 8, t: 1 })
        ));
        let g = TokenGrid::from_indices(16, 2, vec![9; 32]).unwrap();
        assert!(matches!(
            vq_decode(&g, &cb, &cfg, None),
            Err(CodecError::IndexOutOfRange { .. })
        ));
    }

    #[test]
    fn encode_decode_encode_is_stable() {
        let cb = random_codebook(32, 7);
        let m = mel(256, 200, 8);
        let g = vq_encode(&m, &cb).unwrap();
        let again = vq_encode(&vq_decode(&g, &cb, m.config(), Some(200)).unwrap(), &cb).unwrap();
        assert_eq!(g, again);
    }

    #[test]
    fn duplicate_codewords_rejected() {
        let e = Array2::<f32>::zeros((3, 4));
        assert!(Codebook::new(e, 0).is_err());
        assert!(Codebook::new(Array2::<f32>::zeros((1, 4)), 0).is_err());
    }
}
