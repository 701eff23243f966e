use std::path::PathBuf;

use anyhow::Result;
use clap::{Args, ValueEnum};
use ddfilt::spectrum::{Cutoff, NoiseSpectrum, ONE_OVER_F_LOW_CUTOFF};
use serde::{Deserialize, Serialize};

use crate::usage;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CutoffArg {
    Sharp,
    Soft,
}

impl From<CutoffArg> for Cutoff {
    fn from(c: CutoffArg) -> Self {
        match c {
            CutoffArg::Sharp => Cutoff::Sharp,
            CutoffArg::Soft => Cutoff::SoftInverseSquare,
        }
    }
}

/// Which spectrum family, parsed from `ohmic`, `one-over-f`, `ambient` or
/// `file:<path>`.
#[derive(Debug, Clone, PartialEq)]
pub enum SpectrumKind {
    Ohmic,
    OneOverF,
    Ambient,
    File(PathBuf),
}

impl SpectrumKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "ohmic" => Ok(Self::Ohmic),
            "one-over-f" => Ok(Self::OneOverF),
            "ambient" => Ok(Self::Ambient),
            _ => match s.strip_prefix("file:") {
                Some(p) if !p.is_empty() => Ok(Self::File(PathBuf::from(p))),
                _ => Err(usage(format!("unknown spectrum '{s}'; expected ohmic, one-over-f, ambient or file:<path>"))),
            },
        }
    }
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct SpectrumArgs {
    /// ohmic, one-over-f, ambient, or file:<path> (two-column CSV).
    #[arg(long, default_value = "ohmic")]
    pub spectrum: String,
    /// Dimensionless noise strength.
    #[arg(long, default_value_t = 1.0)]
    pub alpha: f64,
    /// Power-law exponent (default: 1 for ohmic, -1 for one-over-f).
    #[arg(long, allow_hyphen_values = true)]
    pub gamma: Option<f64>,
    /// High-frequency cutoff (default: sharp for ohmic, soft for one-over-f).
    #[arg(long, value_enum)]
    pub cutoff: Option<CutoffArg>,
    /// Low-frequency cutoff ω'_low (default: 0.001 for one-over-f and ambient).
    #[arg(long)]
    pub omega_low: Option<f64>,
}

impl SpectrumArgs {
    /// Fills unset options with the family's defaults.
    pub fn resolve(&mut self) -> Result<()> {
        match SpectrumKind::parse(&self.spectrum)? {
            SpectrumKind::Ohmic => {
                self.gamma.get_or_insert(1.0);
                self.cutoff.get_or_insert(CutoffArg::Sharp);
                self.omega_low.get_or_insert(0.0);
            }
            SpectrumKind::OneOverF => {
                self.gamma.get_or_insert(-1.0);
                self.cutoff.get_or_insert(CutoffArg::Soft);
                self.omega_low.get_or_insert(ONE_OVER_F_LOW_CUTOFF);
            }
            SpectrumKind::Ambient => {
                if self.gamma.is_some() || self.cutoff.is_some() {
                    return Err(usage(
                        "the ambient spectrum has a fixed 1/ω⁴ shape; --gamma and --cutoff do not apply",
                    ));
                }
                self.omega_low.get_or_insert(ONE_OVER_F_LOW_CUTOFF);
            }
            SpectrumKind::File(_) => {
                if self.gamma.is_some() || self.cutoff.is_some() || self.omega_low.is_some() {
                    return Err(usage("--gamma, --cutoff and --omega-low do not apply to tabulated spectra"));
                }
            }
        }
        Ok(())
    }

    pub fn input_file(&self) -> Option<PathBuf> {
        match SpectrumKind::parse(&self.spectrum) {
            Ok(SpectrumKind::File(p)) => Some(p),
            _ => None,
        }
    }

    pub fn build(&self) -> Result<NoiseSpectrum> {
        let spectrum = match SpectrumKind::parse(&self.spectrum)? {
            SpectrumKind::Ohmic | SpectrumKind::OneOverF => NoiseSpectrum::power_law(
                self.alpha,
                self.gamma.expect("resolved"),
                self.cutoff.expect("resolved").into(),
                self.omega_low.expect("resolved"),
            )?,
            SpectrumKind::Ambient => NoiseSpectrum::ambient(self.alpha, self.omega_low.expect("resolved"))?,
            SpectrumKind::File(p) => NoiseSpectrum::load_table(p)?,
        };
        Ok(spectrum)
    }
}
