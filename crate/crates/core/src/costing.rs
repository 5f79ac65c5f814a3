//! Parameter and multiply–accumulate accounting.
//!
//! Convolutions cost `outH·outW·outC·inC·k²`. Every other operation costs
//! one MAC per output element: watermark arrangement, the residual add,
//! replica unpacking, the reveal-side merge or resize, pixel shuffles and
//! the coupling (two per pixel). The short-time transforms are not part of
//! the model and are not counted.

use crate::config::PipelineConfig;
use crate::dsp::TransformKind;
use crate::embeddings::EmbeddingMethod;
use crate::error::{Error, Result};
use crate::losses::{ContainerKind, WaveLoss};
use crate::model::ModelBundle;

/// MACs split by the resolution each stage runs at.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct MacBreakdown {
    pub container: usize,
    pub image: usize,
}

impl MacBreakdown {
    pub fn total(&self) -> usize {
        self.container + self.image
    }
}

pub fn count_params(m: &ModelBundle) -> usize {
    m.param_count()
}

pub fn count_macs(m: &ModelBundle) -> MacBreakdown {
    let ctx = &m.ctx;
    let (f, t) = ctx.container_shape();
    let ft = f * t;
    let hw = ctx.image_h * ctx.image_w;
    let branches = m.hide.len();
    let plane = ctx.method.uses_plane();
    let mut c = MacBreakdown::default();

    let [_, sh, sw] = ctx.secret_shape();
    for net in &m.hide {
        c.image += net.macs(sh, sw);
    }
    if plane {
        c.image += 4 * hw + if m.config.luma { hw } else { 0 };
        c.image += 3 * hw + if m.config.luma { 3 * hw } else { 0 };
    }
    // arrangement and residual add per branch
    c.container += branches * 2 * ft;

    let [_, rh, rw] = ctx.reveal_input_shape();
    let at_container = (rh, rw) == (f, t);
    for net in &m.reveal {
        let macs = net.macs(rh, rw);
        if at_container {
            c.container += macs;
        } else {
            c.image += macs;
        }
    }
    match ctx.method {
        EmbeddingMethod::WsReplicate | EmbeddingMethod::Multichannel => c.container += branches * ft,
        EmbeddingMethod::Stretch | EmbeddingMethod::Replicate | EmbeddingMethod::WReplicate => {
            c.image += branches * 4 * hw
        }
    }
    if m.coupling.is_some() {
        let [d, oh, ow] = ctx.reveal_output_shape();
        let out = if plane { 4 * hw } else { d * oh * ow };
        c.image += 2 * out;
    }
    c
}

/// One configuration of a cost table.
#[derive(Clone, Debug)]
pub struct CostEntry {
    pub name: String,
    pub config: PipelineConfig,
    pub reference_param_delta: Option<String>,
    pub reference_mac_delta_pct: Option<String>,
}

impl CostEntry {
    pub fn new(name: &str, config: PipelineConfig, reference: Option<(&str, &str)>) -> Self {
        CostEntry {
            name: name.to_string(),
            config,
            reference_param_delta: reference.map(|p| p.0.to_string()),
            reference_mac_delta_pct: reference.map(|p| p.1.to_string()),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CostRow {
    pub name: String,
    pub params: usize,
    pub param_delta: i64,
    pub macs: MacBreakdown,
    pub mac_delta_pct: f64,
    pub reference_param_delta: Option<String>,
    pub reference_mac_delta_pct: Option<String>,
}

pub const BASELINE: &str = "baseline";
pub const REFERENCE_BASELINE_PARAMS: usize = 962_128;
pub const REFERENCE_BASELINE_GMAC: f64 = 34.6;

/// Deltas against the entry named [`BASELINE`].
pub fn cost_table(entries: &[CostEntry]) -> Result<Vec<CostRow>> {
    let base = entries
        .iter()
        .find(|e| e.name == BASELINE)
        .ok_or_else(|| Error::usage("cost table needs a 'baseline' entry"))?;
    let cost = |cfg: &PipelineConfig| -> Result<(usize, MacBreakdown)> {
        let m = ModelBundle::zeroed(cfg)?;
        Ok((count_params(&m), count_macs(&m)))
    };
    let (bp, bm) = cost(&base.config)?;
    entries
        .iter()
        .map(|e| {
            let (p, m) = cost(&e.config)?;
            Ok(CostRow {
                name: e.name.clone(),
                params: p,
                param_delta: p as i64 - bp as i64,
                macs: m,
                mac_delta_pct: 100.0 * (m.total() as f64 - bm.total() as f64) / bm.total() as f64,
                reference_param_delta: e.reference_param_delta.clone(),
                reference_mac_delta_pct: e.reference_mac_delta_pct.clone(),
            })
        })
        .collect()
}

/// The enhancement rows of the reference cost breakdown, built on `base`.
/// The baseline is the STDCT stretch model with the soft-DTW waveform loss.
pub fn reference_entries(base: &PipelineConfig) -> Vec<CostEntry> {
    let with = |f: &dyn Fn(&mut PipelineConfig)| {
        let mut c = base.clone();
        c.transform = TransformKind::Stft;
        c.method = EmbeddingMethod::Stretch;
        c.large = false;
        c.luma = false;
        c.loss.container = ContainerKind::Magnitude;
        c.loss.waveform_loss = WaveLoss::L1;
        f(&mut c);
        c
    };
    let method = |m: EmbeddingMethod, large: bool| {
        with(&move |c: &mut PipelineConfig| {
            c.method = m;
            c.large = large;
        })
    };
    use EmbeddingMethod::*;
    vec![
        CostEntry::new(
            BASELINE,
            with(&|c| {
                c.transform = TransformKind::Stdct;
                c.loss.waveform_loss = WaveLoss::SoftDtw;
            }),
            Some(("+0", "+0%")),
        ),
        CostEntry::new(
            "stft_magnitude",
            with(&|c| c.loss.waveform_loss = WaveLoss::SoftDtw),
            Some(("+0", "+0%")),
        ),
        CostEntry::new(
            "stft_phase",
            with(&|c| {
                c.loss.container = ContainerKind::Phase;
                c.loss.waveform_loss = WaveLoss::SoftDtw;
            }),
            Some(("+0", "+0%")),
        ),
        CostEntry::new(
            "stft_magnitude_phase",
            with(&|c| c.loss.container = ContainerKind::Dual),
            Some(("+962131", "+100.00%")),
        ),
        CostEntry::new("l1_loss", with(&|_| {}), Some(("+0", "+0%"))),
        CostEntry::new("replicate", method(Replicate, false), Some(("+0", "+0%"))),
        CostEntry::new("w_replicate", method(WReplicate, false), Some(("+4", "+0%"))),
        CostEntry::new("ws_replicate", method(WsReplicate, false), Some(("+584", "-32.89%"))),
        CostEntry::new("multichannel", method(Multichannel, false), Some(("+12735", "-81.68%"))),
        CostEntry::new("stretch_large", method(Stretch, true), Some(("+0", "+200.00%"))),
        CostEntry::new("replicate_large", method(Replicate, true), Some(("+0", "+200.00%"))),
        CostEntry::new("w_replicate_large", method(WReplicate, true), Some(("+4", "+200.00%"))),
        CostEntry::new("ws_replicate_large", method(WsReplicate, true), Some(("+4103", "-30.23%"))),
        CostEntry::new("multichannel_large", method(Multichannel, true), Some(("+67695", "-73.20%"))),
        CostEntry::new("luma", with(&|c| c.luma = true), Some(("+0", "+0%"))),
    ]
}

pub const CSV_HEADER: &str = "name,params,param_delta,macs,mac_delta_pct,reference_param_delta,reference_mac_delta_pct";

pub fn cost_csv(rows: &[CostRow]) -> String {
    let mut s = String::from(CSV_HEADER);
    s.push('\n');
    for r in rows {
        s.push_str(&format!(
            "{},{},{:+},{},{:+.2},{},{}\n",
            r.name,
            r.params,
            r.param_delta,
            r.macs.total(),
            r.mac_delta_pct,
            r.reference_param_delta.as_deref().unwrap_or(""),
            r.reference_mac_delta_pct.as_deref().unwrap_or("")
        ));
    }
    s
}

/// Aligned table with the container/image MAC split.
pub fn cost_text(rows: &[CostRow]) -> String {
    let w = rows.iter().map(|r| r.name.len()).max().unwrap_or(4).max(4);
    let mut s = format!(
        "{:<w$}  {:>9}  {:>8}  {:>11}  {:>11}  {:>11}  {:>9}  {:>9}  {:>9}\n",
        "name", "params", "delta", "macs", "container", "image", "mac_delta", "ref_p", "ref_mac"
    );
    for r in rows {
        s.push_str(&format!(
            "{:<w$}  {:>9}  {:>+8}  {:>11}  {:>11}  {:>11}  {:>+8.2}%  {:>9}  {:>9}\n",
            r.name,
            r.params,
            r.param_delta,
            r.macs.total(),
            r.macs.container,
            r.macs.image,
            r.mac_delta_pct,
            r.reference_param_delta.as_deref().unwrap_or("-"),
            r.reference_mac_delta_pct.as_deref().unwrap_or("-"),
        ));
    }
    s.push_str(&format!(
        "reference baseline: {REFERENCE_BASELINE_PARAMS} parameters, {REFERENCE_BASELINE_GMAC} GMAC\n"
    ));
    s.push_str("w_replicate_large: the reference lists +4; eight replicas per side give +16 here\n");
    s
}
