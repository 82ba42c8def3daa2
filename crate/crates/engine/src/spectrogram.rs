//! Mel spectrogram thumbnails for the console.

use octaloop_core::dsp::MelSpectrogram;

const STOPS: [[f32; 3]; 6] = [
    [0.0, 0.0, 4.0],
    [59.0, 15.0, 112.0],
    [140.0, 41.0, 129.0],
    [222.0, 73.0, 104.0],
    [254.0, 159.0, 109.0],
    [252.0, 253.0, 191.0],
];

fn colour(v: f32) -> [u8; 3] {
    let x = v.clamp(0.0, 1.0) * (STOPS.len() - 1) as f32;
    let i = (x.floor() as usize).min(STOPS.len() - 2);
    let f = x - i as f32;
    let (a, b) = (STOPS[i], STOPS[i + 1]);
    [0, 1, 2].map(|c| (a[c] + f * (b[c] - a[c])).round() as u8)
}

/// RGB PNG, one pixel per (frame, bin), low bins at the bottom, scaled
/// between the image's own minimum and maximum.
pub fn render_png(mel: &MelSpectrogram) -> Vec<u8> {
    let data = mel.data();
    let (bins, frames) = data.dim();
    let lo = data.iter().cloned().fold(f32::INFINITY, f32::min);
    let hi = data.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
    let span = if hi > lo { hi - lo } else { 1.0 };
    let mut pixels = Vec::with_capacity(bins * frames * 3);
    for row in (0..bins).rev() {
        for col in 0..frames {
            pixels.extend(colour((data[[row, col]] - lo) / span));
        }
    }
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, frames as u32, bins as u32);
        enc.set_color(png::ColorType::Rgb);
        enc.set_depth(png::BitDepth::Eight);
        let mut w = enc.write_header().expect("in-memory PNG header");
        w.write_image_data(&pixels).expect("in-memory PNG data");
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use octaloop_core::dsp::StftConfig;

    #[test]
    fn decodes_with_expected_geometry_and_orientation() {
        let cfg = StftConfig { mel_bins: 32, ..StftConfig::studio_48k() };
        // loud lowest bin, silent elsewhere
        let mut d = Array2::<f32>::zeros((32, 20));
        d.row_mut(0).fill(5.0);
        let bytes = render_png(&MelSpectrogram::new(d, cfg).unwrap());
        let dec = png::Decoder::new(std::io::Cursor::new(bytes));
        let mut reader = dec.read_info().unwrap();
        let mut buf = vec![0; reader.output_buffer_size()];
        let info = reader.next_frame(&mut buf).unwrap();
        assert_eq!((info.width, info.height), (20, 32));
        assert_eq!(info.color_type, png::ColorType::Rgb);
        let bottom = &buf[31 * 60..31 * 60 + 3];
        assert_eq!(bottom, &[252, 253, 191]);
        assert_eq!(&buf[0..3], &[0, 0, 4]);
    }

    #[test]
    fn flat_input_does_not_divide_by_zero() {
        let cfg = StftConfig { mel_bins: 16, ..StftConfig::studio_48k() };
        let png = render_png(&MelSpectrogram::new(Array2::from_elem((16, 4), 2.0), cfg).unwrap());
        assert_eq!(&png[1..4], b"PNG");
    }
}
