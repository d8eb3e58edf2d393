use std::fmt::Write as _;

pub const METRICS_HEADER: &str = "step,latent_loss,recon_loss,d_loss,g_adv,fm,diversity,ms";

/// One evaluation row. Absent terms are written as empty CSV fields.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricsRow {
    pub step: usize,
    pub latent_loss: Option<f64>,
    pub recon_loss: Option<f64>,
    pub d_loss: Option<f64>,
    pub g_adv: Option<f64>,
    pub fm: Option<f64>,
    pub diversity: Option<f64>,
    /// Wall-clock milliseconds since the run started.
    pub ms: u64,
}

fn field(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl MetricsRow {
    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{}",
            self.step,
            field(self.latent_loss),
            field(self.recon_loss),
            field(self.d_loss),
            field(self.g_adv),
            field(self.fm),
            field(self.diversity),
            self.ms
        )
    }

    /// Same row with the wall-clock column zeroed, for determinism checks.
    pub fn without_time(&self) -> Self {
        Self { ms: 0, ..self.clone() }
    }
}

pub fn metrics_csv(rows: &[MetricsRow]) -> String {
    let mut s = String::from(METRICS_HEADER);
    s.push('\n');
    for r in rows {
        writeln!(s, "{}", r.csv_line()).expect("string write");
    }
    s
}
