use std::io::Write;
use std::path::Path;

use anchorlens_core::probe::{Cause, CauseTally};
use anyhow::{Context, Result};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Writes output files, each prefixed with the metadata line unless suppressed.
pub struct Emitter {
    header: Option<String>,
}

impl Emitter {
    pub fn new(config_digest: &str, no_header: bool) -> Self {
        Self {
            header: (!no_header).then(|| format!("anchorlens {VERSION} config={config_digest}")),
        }
    }

    /// Buffer `body` and write it to `path`, or stdout when `path` is `None`.
    pub fn csv<F>(&self, path: Option<&Path>, body: F) -> Result<()>
    where
        F: FnOnce(&mut Vec<u8>) -> std::io::Result<()>,
    {
        let mut buf = Vec::new();
        if let Some(h) = &self.header {
            writeln!(buf, "# {h}")?;
        }
        body(&mut buf)?;
        write_out(path, &buf)
    }

    pub fn svg(&self, path: &Path, tally: &CauseTally) -> Result<()> {
        let comment = self.header.as_deref().map(|h| format!("<!-- {h} -->\n"));
        write_out(Some(path), bar_chart(tally, comment.as_deref().unwrap_or("")).as_bytes())
    }
}

fn write_out(path: Option<&Path>, bytes: &[u8]) -> Result<()> {
    match path {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
            }
            std::fs::write(p, bytes).with_context(|| format!("writing {}", p.display()))
        }
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(bytes)?;
            out.flush()?;
            Ok(())
        }
    }
}

/// Three vertical bars, one per cause, with counts above and names below.
pub fn bar_chart(tally: &CauseTally, preamble: &str) -> String {
    const WIDTH: usize = 420;
    const HEIGHT: usize = 280;
    const TOP: usize = 40;
    const BASE: usize = 230;
    const BAR: usize = 80;
    const GAP: usize = 50;
    let colors = ["#8c8c8c", "#d62728", "#1f77b4"];
    let max = Cause::ALL.iter().map(|&c| tally.get(c)).max().unwrap_or(0).max(1);

    let mut s = String::new();
    s.push_str(preamble);
    s.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" \
         viewBox=\"0 0 {WIDTH} {HEIGHT}\" font-family=\"sans-serif\" font-size=\"13\">\n"
    ));
    s.push_str(&format!(
        "  <text x=\"{}\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">MMD frames by cause (total {})</text>\n",
        WIDTH / 2,
        tally.total()
    ));
    s.push_str(&format!(
        "  <line x1=\"30\" y1=\"{BASE}\" x2=\"{}\" y2=\"{BASE}\" stroke=\"black\"/>\n",
        WIDTH - 30
    ));
    for (k, cause) in Cause::ALL.iter().enumerate() {
        let count = tally.get(*cause);
        let h = (BASE - TOP) * count / max;
        let x = GAP + k * (BAR + GAP);
        s.push_str(&format!(
            "  <rect x=\"{x}\" y=\"{}\" width=\"{BAR}\" height=\"{h}\" fill=\"{}\"/>\n",
            BASE - h,
            colors[k]
        ));
        s.push_str(&format!(
            "  <text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{count}</text>\n",
            x + BAR / 2,
            BASE - h - 6
        ));
        s.push_str(&format!(
            "  <text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{}</text>\n",
            x + BAR / 2,
            BASE + 20,
            cause.as_str()
        ));
    }
    s.push_str("</svg>\n");
    s
}
