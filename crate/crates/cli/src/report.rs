//! The flat JSON run report: counters, norms, matched model and bounds, and
//! measured/model and measured/bound ratios (ratios only when the
//! denominators are positive).

use serde::{Deserialize, Serialize};

use caqr_core::instrument::CommCounters;
use caqr_core::models::ModelReport;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub schema_version: u32,
    pub algorithm: String,
    pub m: usize,
    pub n: usize,
    #[serde(default)]
    pub procs: Option<usize>,
    #[serde(default)]
    pub fast_mem: Option<usize>,
    #[serde(default)]
    pub proc_rows: Option<usize>,
    #[serde(default)]
    pub proc_cols: Option<usize>,
    #[serde(default)]
    pub block: Option<usize>,
    #[serde(default)]
    pub tree: Option<String>,
    #[serde(default)]
    pub seed: Option<u64>,

    pub flops: u64,
    pub mults: u64,
    pub divisions: u64,
    pub words_moved: u64,
    pub messages: u64,
    pub cp_flops: u64,
    pub cp_words: u64,
    pub cp_messages: u64,
    pub per_proc_words: Vec<u64>,
    pub per_proc_messages: Vec<u64>,

    pub norm_a: f64,
    pub residual: f64,
    pub ortho_error: f64,

    #[serde(default)]
    pub model_label: Option<String>,
    #[serde(default)]
    pub model_flops: Option<f64>,
    #[serde(default)]
    pub model_words: Option<f64>,
    #[serde(default)]
    pub model_messages: Option<f64>,
    #[serde(default)]
    pub bound_words: Option<f64>,
    #[serde(default)]
    pub bound_messages: Option<f64>,
    #[serde(default)]
    pub bound_mults: Option<f64>,

    #[serde(default)]
    pub ratio_words_vs_model: Option<f64>,
    #[serde(default)]
    pub ratio_messages_vs_model: Option<f64>,
    #[serde(default)]
    pub ratio_words_vs_bound: Option<f64>,
    #[serde(default)]
    pub ratio_mults_vs_bound: Option<f64>,
}

impl RunReport {
    pub fn from_counters(algorithm: &str, m: usize, n: usize, c: &CommCounters) -> Self {
        RunReport {
            schema_version: 1,
            algorithm: algorithm.to_string(),
            m,
            n,
            procs: None,
            fast_mem: None,
            proc_rows: None,
            proc_cols: None,
            block: None,
            tree: None,
            seed: None,
            flops: c.flops,
            mults: c.mults,
            divisions: c.divisions,
            words_moved: c.words_moved,
            messages: c.messages,
            cp_flops: c.cp_flops,
            cp_words: c.cp_words,
            cp_messages: c.cp_messages,
            per_proc_words: c.per_proc.iter().map(|p| p.words_moved).collect(),
            per_proc_messages: c.per_proc.iter().map(|p| p.messages).collect(),
            norm_a: 0.0,
            residual: 0.0,
            ortho_error: 0.0,
            model_label: None,
            model_flops: None,
            model_words: None,
            model_messages: None,
            bound_words: None,
            bound_messages: None,
            bound_mults: None,
            ratio_words_vs_model: None,
            ratio_messages_vs_model: None,
            ratio_words_vs_bound: None,
            ratio_mults_vs_bound: None,
        }
    }

    /// Attaches a matched model row and fills the measured/model ratios
    /// using the critical-path counters when `critical_path` is set.
    pub fn attach_model(&mut self, model: &ModelReport, critical_path: bool) {
        self.model_label = Some(model.label.to_string());
        self.model_flops = Some(model.flops);
        self.model_words = Some(model.words);
        self.model_messages = Some(model.messages);
        let (words, messages) = if critical_path {
            (self.cp_words as f64, self.cp_messages as f64)
        } else {
            (self.words_moved as f64, self.messages as f64)
        };
        if model.words > 0.0 {
            self.ratio_words_vs_model = Some(words / model.words);
        }
        if model.messages > 0.0 {
            self.ratio_messages_vs_model = Some(messages / model.messages);
        }
    }

    /// Attaches word/message lower bounds and the measured/bound ratio.
    pub fn attach_bounds(&mut self, words: f64, messages: f64, critical_path: bool) {
        self.bound_words = Some(words);
        self.bound_messages = Some(messages);
        let measured = if critical_path {
            self.cp_words as f64
        } else {
            self.words_moved as f64
        };
        if words > 0.0 {
            self.ratio_words_vs_bound = Some(measured / words);
        }
    }

    pub fn attach_flop_bound(&mut self, mults: f64) {
        self.bound_mults = Some(mults);
        if mults > 0.0 {
            self.ratio_mults_vs_bound = Some(self.mults as f64 / mults);
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Aligned measured-vs-model-vs-bound text table.
    pub fn render_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "algorithm: {}   m={} n={}{}{}{}\n",
            self.algorithm,
            self.m,
            self.n,
            self.procs.map_or(String::new(), |p| format!(" P={}", p)),
            self.fast_mem.map_or(String::new(), |w| format!(" W={}", w)),
            self.tree
                .as_ref()
                .map_or(String::new(), |t| format!(" tree={}", t)),
        ));
        out.push_str(&format!(
            "residual: {:.3e}   orthogonality: {:.3e}\n",
            self.residual, self.ortho_error
        ));
        out.push_str(&format!(
            "{:<14} {:>16} {:>16} {:>10}\n",
            "", "measured", "model", "ratio"
        ));
        let line = |label: &str, measured: f64, model: Option<f64>| -> String {
            match model {
                Some(mv) if mv > 0.0 => format!(
                    "{:<14} {:>16} {:>16.1} {:>10.3}\n",
                    label,
                    measured as u64,
                    mv,
                    measured / mv
                ),
                Some(mv) => format!("{:<14} {:>16} {:>16.1} {:>10}\n", label, measured as u64, mv, "-"),
                None => format!("{:<14} {:>16} {:>16} {:>10}\n", label, measured as u64, "-", "-"),
            }
        };
        out.push_str(&line("flops", self.flops as f64, self.model_flops));
        out.push_str(&line("words", self.words_moved as f64, self.model_words));
        out.push_str(&line("messages", self.messages as f64, self.model_messages));
        out.push_str(&line("cp words", self.cp_words as f64, self.model_words));
        out.push_str(&line("cp messages", self.cp_messages as f64, self.model_messages));
        if let (Some(bw), Some(bm)) = (self.bound_words, self.bound_messages) {
            out.push_str(&format!(
                "lower bound    words >= {:.1}   messages >= {:.1}",
                bw, bm
            ));
            if let Some(r) = self.ratio_words_vs_bound {
                out.push_str(&format!("   measured/bound = {:.3}", r));
            }
            out.push('\n');
        }
        if let Some(bf) = self.bound_mults {
            out.push_str(&format!("mult bound     mults >= {:.1}", bf));
            if let Some(r) = self.ratio_mults_vs_bound {
                out.push_str(&format!("   measured/bound = {:.3}", r));
            }
            out.push('\n');
        }
        out
    }
}
