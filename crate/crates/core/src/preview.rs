//! Static overlay figures: the radiograph with coloured mask contours and
//! the prompt text of each mask as a caption.
//!
//! Colours are fixed: the mask at position `i` of the manifest is drawn in
//! `PALETTE[i % PALETTE.len()]`, whether or not other masks are shown, so a
//! filtered preview draws the same pixels as the full one.

use std::path::Path;

use font8x8::UnicodeFonts;

use crate::anatomy::ObjectKind;
use crate::pipeline::{
    image_path, load_manifest, manifest_path, rle_decode, MaskRecord, PipelineError, SampleManifest,
};
use crate::prompts::{PromptKind, PromptTarget};
use crate::raster::{encode_rgb8, BinaryMask, RasterError, ScalarImage};

pub const PALETTE: [[u8; 3]; 12] = [
    [230, 25, 75],
    [60, 180, 75],
    [255, 225, 25],
    [0, 130, 200],
    [245, 130, 48],
    [145, 30, 180],
    [70, 240, 240],
    [240, 50, 230],
    [210, 245, 60],
    [250, 190, 212],
    [0, 128, 128],
    [170, 110, 40],
];

/// Glyph cell height including one pixel of leading.
const LINE_PX: usize = 9;

#[derive(Debug, thiserror::Error)]
pub enum PreviewError {
    #[error("unknown sample '{0}'")]
    UnknownSample(String),
    #[error("no mask named '{name}'; available: {}", available.join(", "))]
    UnknownMask { name: String, available: Vec<String> },
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Raster(#[from] RasterError),
}

#[derive(Debug, Clone, Default)]
pub struct PreviewOptions {
    /// Draw only the mask with this name.
    pub mask: Option<String>,
    pub captions: bool,
}

/// One contour to draw.
#[derive(Debug, Clone)]
pub struct Layer {
    pub color: [u8; 3],
    pub mask: BinaryMask,
    pub caption: String,
}

/// 8-bit RGB image, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Overlay {
    pub width: usize,
    pub height: usize,
    pub rgb: Vec<u8>,
}

impl Overlay {
    pub fn from_gray(img: &ScalarImage) -> Self {
        let rgb = img
            .to_u16()
            .iter()
            .flat_map(|&v| {
                let g = (v >> 8) as u8;
                [g, g, g]
            })
            .collect();
        Self { width: img.width, height: img.height, rgb }
    }

    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = 3 * (y * self.width + x);
        [self.rgb[i], self.rgb[i + 1], self.rgb[i + 2]]
    }

    fn put(&mut self, x: usize, y: usize, c: [u8; 3]) {
        if x < self.width && y < self.height {
            let i = 3 * (y * self.width + x);
            self.rgb[i..i + 3].copy_from_slice(&c);
        }
    }

    pub fn encode_png(&self) -> Vec<u8> {
        encode_rgb8(self.width, self.height, &self.rgb)
    }

    /// Writes `text` with its top-left corner at (x, y) over a black box.
    /// Characters without a glyph are drawn as '?'.
    pub fn draw_text(&mut self, x: usize, y: usize, text: &str, color: [u8; 3]) {
        for (k, ch) in text.chars().enumerate() {
            let glyph = font8x8::BASIC_FONTS.get(ch).or_else(|| font8x8::BASIC_FONTS.get('?')).unwrap_or([0; 8]);
            let x0 = x + 8 * k;
            for (row, bits) in glyph.iter().enumerate() {
                for col in 0..8 {
                    let on = bits & (1 << col) != 0;
                    self.put(x0 + col, y + row, if on { color } else { [0, 0, 0] });
                }
            }
            for col in 0..8 {
                self.put(x0 + col, y + 8, [0, 0, 0]);
            }
        }
    }
}

/// Draws each layer's boundary pixels, then (optionally) one caption line
/// per layer from the top of the image, truncated to the image width. The
/// captions use at most the top quarter; layers that do not fit are
/// summarized as "+N more".
pub fn compose(base: &ScalarImage, layers: &[Layer], captions: bool) -> Overlay {
    let mut out = Overlay::from_gray(base);
    for l in layers {
        for (x, y) in l.mask.boundary().coords() {
            out.put(x, y, l.color);
        }
    }
    if captions && !layers.is_empty() {
        let max_chars = out.width / 8;
        let lines = (out.height / (4 * LINE_PX)).max(1);
        let shown = if layers.len() > lines { lines - 1 } else { layers.len() };
        for (i, l) in layers.iter().take(shown).enumerate() {
            let text: String = l.caption.chars().take(max_chars).collect();
            out.draw_text(0, i * LINE_PX, &text, l.color);
        }
        if shown < layers.len() {
            let text = format!("+{} more", layers.len() - shown);
            out.draw_text(0, shown * LINE_PX, &text, [255, 255, 255]);
        }
    }
    out
}

fn target_of(m: &MaskRecord) -> PromptTarget {
    match m.kind {
        ObjectKind::Organ => PromptTarget::Organ { id: m.id },
        ObjectKind::Tool => PromptTarget::Tool { id: m.id },
        ObjectKind::Group => PromptTarget::Group { name: m.name.clone() },
    }
}

/// Layers for the masks of a manifest, coloured by manifest position.
pub fn manifest_layers(manifest: &SampleManifest, only: Option<&str>) -> Result<Vec<Layer>, PreviewError> {
    if let Some(name) = only {
        if !manifest.masks.iter().any(|m| m.name == name) {
            return Err(PreviewError::UnknownMask {
                name: name.to_string(),
                available: manifest.masks.iter().map(|m| m.name.clone()).collect(),
            });
        }
    }
    let dims = (manifest.image_dims[0], manifest.image_dims[1]);
    let mut layers = Vec::new();
    for (i, m) in manifest.masks.iter().enumerate() {
        if only.is_some_and(|n| n != m.name) {
            continue;
        }
        let target = target_of(m);
        let prompt = manifest
            .prompts
            .iter()
            .find(|p| p.kind != PromptKind::Negative && p.target == target)
            .map(|p| p.text.as_str())
            .unwrap_or("");
        layers.push(Layer {
            color: PALETTE[i % PALETTE.len()],
            mask: rle_decode(&m.rle, dims).map_err(PipelineError::from)?,
            caption: format!("{}: {prompt}", m.name),
        });
    }
    Ok(layers)
}

/// Overlay for sample `id` of the dataset at `root`.
pub fn render_preview(root: &Path, id: &str, opts: &PreviewOptions) -> Result<Overlay, PreviewError> {
    if !manifest_path(root, id).exists() {
        return Err(PreviewError::UnknownSample(id.to_string()));
    }
    let manifest = load_manifest(root, id)?;
    let base = ScalarImage::read_png16(&image_path(root, id))?;
    let layers = manifest_layers(&manifest, opts.mask.as_deref())?;
    Ok(compose(&base, &layers, opts.captions))
}
