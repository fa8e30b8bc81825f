//! Metric reports in text and JSON form.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// JSON has no infinity; `+∞` PSNR is written as the string `"inf"`.
mod inf_f64 {
    use super::*;

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
        if v.is_infinite() && *v > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(*v)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Text(t) if t == "inf" => Ok(f64::INFINITY),
            Repr::Text(t) => Err(serde::de::Error::custom(format!("unexpected PSNR value {t:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewMetrics {
    pub name: String,
    #[serde(with = "inf_f64")]
    pub psnr: f64,
    pub ssim: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub views: Vec<ViewMetrics>,
    #[serde(with = "inf_f64")]
    pub mean_psnr: f64,
    pub mean_ssim: f64,
    /// Chamfer distance in units of 10⁻³.
    pub chamfer_e3: Option<f64>,
    pub runtime_seconds: f64,
}

impl MetricReport {
    pub fn new(views: Vec<ViewMetrics>, chamfer: Option<f64>, runtime_seconds: f64) -> Self {
        let n = views.len().max(1) as f64;
        MetricReport {
            mean_psnr: views.iter().map(|v| v.psnr).sum::<f64>() / n,
            mean_ssim: views.iter().map(|v| v.ssim).sum::<f64>() / n,
            views,
            chamfer_e3: chamfer.map(|c| c * 1e3),
            runtime_seconds,
        }
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        writeln!(s, "{:<16} {:>10} {:>8}", "view", "PSNR (dB)", "SSIM").unwrap();
        for v in &self.views {
            writeln!(s, "{:<16} {:>10.3} {:>8.4}", v.name, v.psnr, v.ssim).unwrap();
        }
        writeln!(s, "{:<16} {:>10.3} {:>8.4}", "mean", self.mean_psnr, self.mean_ssim).unwrap();
        if let Some(c) = self.chamfer_e3 {
            writeln!(s, "Chamfer: {c:.4} ×10⁻³").unwrap();
        }
        writeln!(s, "runtime: {:.1} s", self.runtime_seconds).unwrap();
        s
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }
}
