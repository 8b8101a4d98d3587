use serde::{Deserialize, Serialize};

use super::NetError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    /// One sigmoid unit per AU, binary cross-entropy.
    #[serde(rename = "binary")]
    Binary,
    /// Shared conv trunk, one softmax head per AU over {absent, unknown, present}.
    #[serde(rename = "3class")]
    ThreeClass,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::Binary => "binary",
            Variant::ThreeClass => "3class",
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "binary" => Ok(Variant::Binary),
            "3class" | "three-class" | "threeclass" => Ok(Variant::ThreeClass),
            other => Err(format!("unknown variant {other:?} (expected binary or 3class)")),
        }
    }
}

/// Classes per head in the three-class variant.
pub const THREE_CLASSES: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvBlock {
    pub filters: usize,
    pub kernel: usize,
}

/// Layer kinds in forward order, used to check the layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    Conv,
    Pool,
    Dense,
    Output,
}

/// Network layout. The grid's Z axis enters as input channels of a
/// `input_c x input_c` image (rows = X, cols = Y).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchitectureDescriptor {
    pub variant: Variant,
    pub input_c: usize,
    pub conv: Vec<ConvBlock>,
    /// Indices into `conv` after which a 2x2 stride-2 max pool follows.
    pub pool_after: Vec<usize>,
    /// Hidden dense widths (each followed by relu), before the output layer.
    pub dense: Vec<usize>,
    pub au_count: usize,
}

impl ArchitectureDescriptor {
    /// conv 32,32 / pool / conv 64,64 / pool / dense 256,128 / output.
    pub fn default_for(variant: Variant) -> Self {
        ArchitectureDescriptor {
            variant,
            input_c: 24,
            conv: vec![
                ConvBlock { filters: 32, kernel: 3 },
                ConvBlock { filters: 32, kernel: 3 },
                ConvBlock { filters: 64, kernel: 3 },
                ConvBlock { filters: 64, kernel: 3 },
            ],
            pool_after: vec![1, 3],
            dense: vec![256, 128],
            au_count: 12,
        }
    }

    /// Same layer sequence at toy widths; used for exhaustive gradient checks.
    pub fn small(variant: Variant) -> Self {
        ArchitectureDescriptor {
            variant,
            input_c: 8,
            conv: vec![
                ConvBlock { filters: 3, kernel: 3 },
                ConvBlock { filters: 3, kernel: 3 },
                ConvBlock { filters: 4, kernel: 3 },
                ConvBlock { filters: 4, kernel: 3 },
            ],
            pool_after: vec![1, 3],
            dense: vec![6, 5],
            au_count: 4,
        }
    }

    pub fn validate(&self) -> Result<(), NetError> {
        let bad = |m: String| Err(NetError::InvalidDescriptor(m));
        if self.input_c < 2 {
            return bad(format!("input_c must be at least 2, got {}", self.input_c));
        }
        if self.conv.is_empty() {
            return bad("at least one conv block is required".into());
        }
        if self.au_count == 0 {
            return bad("au_count must be at least 1".into());
        }
        for (i, b) in self.conv.iter().enumerate() {
            if b.filters == 0 || b.kernel == 0 || b.kernel % 2 == 0 {
                return bad(format!("conv {i}: need filters >= 1 and an odd kernel, got {b:?}"));
            }
        }
        if self.pool_after.windows(2).any(|w| w[0] >= w[1])
            || self.pool_after.iter().any(|&p| p >= self.conv.len())
        {
            return bad(format!("pool_after {:?} must be increasing conv indices", self.pool_after));
        }
        let mut side = self.input_c;
        for _ in &self.pool_after {
            if side < 2 {
                return bad("input too small for the requested pooling".into());
            }
            side /= 2;
        }
        if self.dense.contains(&0) {
            return bad("dense widths must be positive".into());
        }
        Ok(())
    }

    pub fn in_channels(&self) -> usize {
        self.input_c
    }

    /// Spatial side of the output of conv block `i` (after its pool, if any).
    pub fn side_after(&self, i: usize) -> usize {
        let pools = self.pool_after.iter().filter(|&&p| p <= i).count();
        (0..pools).fold(self.input_c, |s, _| s / 2)
    }

    /// Spatial side at the input of conv block `i`.
    pub fn side_before(&self, i: usize) -> usize {
        if i == 0 {
            self.input_c
        } else {
            self.side_after(i - 1)
        }
    }

    pub fn flat_len(&self) -> usize {
        let last = self.conv.len() - 1;
        let s = self.side_after(last);
        s * s * self.conv[last].filters
    }

    pub fn heads(&self) -> usize {
        match self.variant {
            Variant::Binary => 1,
            Variant::ThreeClass => self.au_count,
        }
    }

    pub fn head_outputs(&self) -> usize {
        match self.variant {
            Variant::Binary => self.au_count,
            Variant::ThreeClass => THREE_CLASSES,
        }
    }

    pub fn layer_sequence(&self) -> Vec<LayerKind> {
        let mut seq = Vec::new();
        for i in 0..self.conv.len() {
            seq.push(LayerKind::Conv);
            if self.pool_after.contains(&i) {
                seq.push(LayerKind::Pool);
            }
        }
        seq.extend(self.dense.iter().map(|_| LayerKind::Dense));
        seq.push(LayerKind::Output);
        seq
    }

    /// Parameter tensors in storage order.
    pub fn param_specs(&self) -> Vec<ParamSpec> {
        let mut specs = Vec::new();
        let mut in_ch = self.input_c;
        for (i, b) in self.conv.iter().enumerate() {
            let k2 = b.kernel * b.kernel;
            specs.push(ParamSpec {
                name: format!("conv{}.weight", i + 1),
                dims: vec![b.filters, in_ch, b.kernel, b.kernel],
                fan_in: in_ch * k2,
                fan_out: b.filters * k2,
                bias: false,
            });
            specs.push(ParamSpec::bias(format!("conv{}.bias", i + 1), b.filters));
            in_ch = b.filters;
        }
        let flat = self.flat_len();
        for h in 0..self.heads() {
            let prefix = match self.variant {
                Variant::Binary => String::new(),
                Variant::ThreeClass => format!("head{}.", h + 1),
            };
            let mut width = flat;
            let widths = self.dense.iter().copied().chain(std::iter::once(self.head_outputs()));
            for (j, out) in widths.enumerate() {
                let layer = if j < self.dense.len() { format!("dense{}", j + 1) } else { "output".into() };
                specs.push(ParamSpec {
                    name: format!("{prefix}{layer}.weight"),
                    dims: vec![width, out],
                    fan_in: width,
                    fan_out: out,
                    bias: false,
                });
                specs.push(ParamSpec::bias(format!("{prefix}{layer}.bias"), out));
                width = out;
            }
        }
        specs
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamSpec {
    pub name: String,
    pub dims: Vec<usize>,
    pub fan_in: usize,
    pub fan_out: usize,
    pub bias: bool,
}

impl ParamSpec {
    fn bias(name: String, n: usize) -> Self {
        ParamSpec { name, dims: vec![n], fan_in: 0, fan_out: 0, bias: true }
    }
}
