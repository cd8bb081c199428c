use std::fmt;
use std::str::FromStr;

use crate::error::{invalid, Error, Result};

/// How encoder side outputs are fused before attention.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Fusion {
    /// Plain same-resolution skips, `A^i = f_i`.
    Baseline,
    /// Low-level branch only; the high-level slot carries `f_i`.
    PffLow,
    /// High-level branch only; the low-level slot carries `f_i`.
    PffHigh,
    /// Both branches, combined with `f_i` by addition instead of product.
    PffSum,
    /// Top two scales concatenated into the deepest skip.
    Vanilla,
    /// Full progressive fusion.
    Pff,
}

/// Downsampling used on the low-level branch.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Downsample {
    MaxPool,
    Conv,
    DwConv,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Attention {
    None,
    Dab,
}

impl Fusion {
    pub const ALL: [Fusion; 6] = [
        Fusion::Baseline,
        Fusion::PffLow,
        Fusion::PffHigh,
        Fusion::PffSum,
        Fusion::Vanilla,
        Fusion::Pff,
    ];

    pub fn is_progressive(self) -> bool {
        matches!(
            self,
            Fusion::Pff | Fusion::PffLow | Fusion::PffHigh | Fusion::PffSum
        )
    }

    pub fn uses_high(self) -> bool {
        matches!(self, Fusion::Pff | Fusion::PffHigh | Fusion::PffSum)
    }

    pub fn uses_low(self) -> bool {
        matches!(self, Fusion::Pff | Fusion::PffLow | Fusion::PffSum)
    }
}

macro_rules! keyword_enum {
    ($ty:ty, $what:literal, { $($variant:path => $name:literal),* $(,)? }) => {
        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(match self { $($variant => $name),* })
            }
        }

        impl FromStr for $ty {
            type Err = Error;

            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($name => Ok($variant),)*
                    other => Err(invalid(format!(concat!("unknown ", $what, " `{}`"), other))),
                }
            }
        }
    };
}

keyword_enum!(Fusion, "fusion mode", {
    Fusion::Baseline => "baseline",
    Fusion::PffLow => "pff_low",
    Fusion::PffHigh => "pff_high",
    Fusion::PffSum => "pff_sum",
    Fusion::Vanilla => "vanilla",
    Fusion::Pff => "pff",
});

keyword_enum!(Downsample, "downsample mode", {
    Downsample::MaxPool => "maxpool",
    Downsample::Conv => "conv",
    Downsample::DwConv => "dwconv",
});

keyword_enum!(Attention, "attention mode", {
    Attention::None => "none",
    Attention::Dab => "dab",
});

/// Architecture switches and channel plan.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct PmcnetConfig {
    pub stage_channels: [usize; 4],
    pub fusion: Fusion,
    pub downsample: Downsample,
    pub attention: Attention,
    pub num_classes: usize,
    /// Input `(height, width)`, each divisible by 16.
    pub input_hw: (usize, usize),
}

/// Channel plan of a MobileNet backbone's four stages.
pub const MOBILENET_CHANNELS: [usize; 4] = [32, 64, 128, 256];

impl Default for PmcnetConfig {
    fn default() -> Self {
        PmcnetConfig {
            stage_channels: [8, 16, 32, 64],
            fusion: Fusion::Pff,
            downsample: Downsample::DwConv,
            attention: Attention::Dab,
            num_classes: 5,
            input_hw: (32, 32),
        }
    }
}

impl PmcnetConfig {
    pub fn validate(&self) -> Result<()> {
        let (h, w) = self.input_hw;
        if h == 0 || w == 0 || h % 16 != 0 || w % 16 != 0 {
            return Err(invalid(format!(
                "input height and width must be positive multiples of 16, got {h}x{w}"
            )));
        }
        if (h / 16) * (w / 16) < 2 {
            return Err(invalid(format!(
                "input {h}x{w} leaves a single pixel at stride 16; normalisation needs at least 2"
            )));
        }
        if self.num_classes < 2 {
            return Err(invalid(format!(
                "num_classes must be at least 2, got {}",
                self.num_classes
            )));
        }
        if self.stage_channels.iter().any(|&c| c == 0) {
            return Err(invalid("stage channels must be strictly positive"));
        }
        Ok(())
    }

    /// Channels of stage `i` (1-based).
    pub fn channels(&self, i: usize) -> usize {
        self.stage_channels[i - 1]
    }

    /// Spatial extent of stage `i` (1-based), stride `2^i`.
    pub fn stage_hw(&self, i: usize) -> (usize, usize) {
        (self.input_hw.0 >> i, self.input_hw.1 >> i)
    }

    /// Named ablation variant applied on top of `self`'s channel plan and
    /// input size.
    pub fn with_variant(&self, variant: Variant) -> PmcnetConfig {
        let (fusion, downsample, attention) = variant.switches();
        PmcnetConfig {
            fusion,
            downsample,
            attention,
            ..self.clone()
        }
    }
}

/// The ablation rows the CLI can train and compare.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Variant {
    Baseline,
    PffLow,
    PffHigh,
    PffSum,
    Vanilla,
    Pff,
    PffMaxPool,
    PffConv,
    PffDab,
    DabOnly,
}

impl Variant {
    pub const ALL: [Variant; 10] = [
        Variant::Baseline,
        Variant::PffLow,
        Variant::PffHigh,
        Variant::PffSum,
        Variant::Vanilla,
        Variant::Pff,
        Variant::PffMaxPool,
        Variant::PffConv,
        Variant::PffDab,
        Variant::DabOnly,
    ];

    pub fn switches(self) -> (Fusion, Downsample, Attention) {
        use Attention as A;
        use Downsample as D;
        match self {
            Variant::Baseline => (Fusion::Baseline, D::DwConv, A::None),
            Variant::PffLow => (Fusion::PffLow, D::DwConv, A::None),
            Variant::PffHigh => (Fusion::PffHigh, D::DwConv, A::None),
            Variant::PffSum => (Fusion::PffSum, D::DwConv, A::None),
            Variant::Vanilla => (Fusion::Vanilla, D::DwConv, A::None),
            Variant::Pff => (Fusion::Pff, D::DwConv, A::None),
            Variant::PffMaxPool => (Fusion::Pff, D::MaxPool, A::None),
            Variant::PffConv => (Fusion::Pff, D::Conv, A::None),
            Variant::PffDab => (Fusion::Pff, D::DwConv, A::Dab),
            Variant::DabOnly => (Fusion::Baseline, D::DwConv, A::Dab),
        }
    }
}

keyword_enum!(Variant, "variant", {
    Variant::Baseline => "baseline",
    Variant::PffLow => "pff_low",
    Variant::PffHigh => "pff_high",
    Variant::PffSum => "pff_sum",
    Variant::Vanilla => "vanilla",
    Variant::Pff => "pff",
    Variant::PffMaxPool => "pff(maxpool)",
    Variant::PffConv => "pff(conv)",
    Variant::PffDab => "pff+dab",
    Variant::DabOnly => "dab-only",
});
