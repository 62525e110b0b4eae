use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

use super::config::MixingKind;

/// Placement of attention sublayers in a Fourier/attention hybrid.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Layout {
    Bottom,
    Middle,
    Mixed,
    Top,
}

impl Layout {
    pub const ALL: [Layout; 4] = [Layout::Bottom, Layout::Middle, Layout::Mixed, Layout::Top];

    pub fn name(self) -> &'static str {
        match self {
            Layout::Bottom => "bottom",
            Layout::Middle => "middle",
            Layout::Mixed => "mixed",
            Layout::Top => "top",
        }
    }
}

impl fmt::Display for Layout {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Layout {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Layout::ALL
            .into_iter()
            .find(|l| l.name() == s.to_ascii_lowercase())
            .ok_or_else(|| Error::Unknown {
                what: "layout",
                name: s.to_string(),
            })
    }
}

/// Mixing plan with `num_attention` attention layers placed per `layout`;
/// every other layer uses FFT Fourier mixing.
///
/// * `Bottom`: the first layers.
/// * `Top`: the last layers.
/// * `Middle`: a contiguous block centred in the stack (ties round down).
/// * `Mixed`: evenly spaced, layer `floor((2i + 1)·L / (2k))` for `i < k`.
pub fn build_layout(num_layers: usize, num_attention: usize, layout: Layout) -> Result<Vec<MixingKind>> {
    if num_attention > num_layers {
        return Err(Error::InvalidArgument(format!(
            "{num_attention} attention layers requested for a {num_layers}-layer model"
        )));
    }
    let mut plan = vec![MixingKind::FourierFft; num_layers];
    let positions: Vec<usize> = match layout {
        Layout::Bottom => (0..num_attention).collect(),
        Layout::Top => (num_layers - num_attention..num_layers).collect(),
        Layout::Middle => {
            let start = (num_layers - num_attention) / 2;
            (start..start + num_attention).collect()
        }
        Layout::Mixed => (0..num_attention)
            .map(|i| (2 * i + 1) * num_layers / (2 * num_attention))
            .collect(),
    };
    for p in positions {
        plan[p] = MixingKind::Attention;
    }
    Ok(plan)
}
