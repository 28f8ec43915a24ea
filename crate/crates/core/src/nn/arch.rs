//! Layer lists for the three backbones.

use super::network::LayerSpec;

struct Builder {
    layers: Vec<LayerSpec>,
    channels: usize,
}

impl Builder {
    fn new(channels: usize) -> Self {
        Self {
            layers: Vec::new(),
            channels,
        }
    }

    /// Index of the activation the next layer reads.
    fn current(&self) -> usize {
        self.layers.len()
    }

    fn push(&mut self, spec: LayerSpec) {
        self.channels = spec.out_channels;
        self.layers.push(spec);
    }

    fn conv_block(&mut self, spec: LayerSpec) {
        let c = spec.out_channels;
        self.push(spec);
        self.push(LayerSpec::bias(c));
        self.push(LayerSpec::relu(c));
    }
}

/// Three-level encoder–decoder with skip concatenation.
///
/// Widths are `width`, `2·width`, `4·width`. Each level applies two
/// conv+bias+relu blocks; levels are joined by stride-2 convolutions on the
/// way down and nearest upsampling + convolution on the way up. The raw
/// input is concatenated before the final projection so that linear maps of
/// the input (the identity in particular) are directly expressible. Spatial
/// dimensions must be divisible by 4.
pub fn unet(in_channels: usize, width: usize, out_channels: usize) -> Vec<LayerSpec> {
    let (w1, w2, w3) = (width, 2 * width, 4 * width);
    let mut b = Builder::new(in_channels);
    b.conv_block(LayerSpec::conv(in_channels, w1));
    b.conv_block(LayerSpec::conv(w1, w1));
    let skip1 = (b.current(), w1);
    b.conv_block(LayerSpec::conv_stride2(w1, w2));
    b.conv_block(LayerSpec::conv(w2, w2));
    let skip2 = (b.current(), w2);
    b.conv_block(LayerSpec::conv_stride2(w2, w3));
    b.conv_block(LayerSpec::conv(w3, w3));

    b.conv_block(LayerSpec::upsample_conv(w3, w2));
    b.push(LayerSpec::concat(skip2.0, w2, skip2.1));
    b.conv_block(LayerSpec::conv(w2 + skip2.1, w2));
    b.conv_block(LayerSpec::upsample_conv(w2, w1));
    b.push(LayerSpec::concat(skip1.0, w1, skip1.1));
    b.conv_block(LayerSpec::conv(w1 + skip1.1, w1));

    b.push(LayerSpec::concat(0, w1, in_channels));
    b.push(LayerSpec::conv(w1 + in_channels, out_channels));
    b.push(LayerSpec::bias(out_channels));
    b.layers
}

/// Four stride-2 conv+relu blocks (`width`, `2·width`, `4·width`,
/// `4·width`), a 3x3 projection to one channel and a global mean: one logit.
pub fn discriminator(in_channels: usize, width: usize) -> Vec<LayerSpec> {
    let mut b = Builder::new(in_channels);
    let mut c = in_channels;
    for w in [width, 2 * width, 4 * width, 4 * width] {
        b.conv_block(LayerSpec::conv_stride2(c, w));
        c = w;
    }
    b.push(LayerSpec::conv(c, 1));
    b.push(LayerSpec::bias(1));
    b.push(LayerSpec::global_mean(1));
    b.layers
}
