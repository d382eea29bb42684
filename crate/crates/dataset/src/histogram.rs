use crate::manifest::DatasetManifest;

#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    pub counts: Vec<(String, usize)>,
}

impl Histogram {
    pub fn total(&self) -> usize {
        self.counts.iter().map(|(_, n)| n).sum()
    }

    /// Largest over smallest class count; infinite when some class is empty.
    pub fn imbalance_ratio(&self) -> f64 {
        let max = self.counts.iter().map(|c| c.1).max().unwrap_or(0);
        let min = self.counts.iter().map(|c| c.1).min().unwrap_or(0);
        if min == 0 {
            f64::INFINITY
        } else {
            max as f64 / min as f64
        }
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("label,count\n");
        for (label, n) in &self.counts {
            s.push_str(&format!("{label},{n}\n"));
        }
        s
    }

    /// One `#` bar per class scaled so the largest class spans `width` columns.
    pub fn render_bars(&self, width: usize) -> String {
        let max = self.counts.iter().map(|c| c.1).max().unwrap_or(0).max(1);
        let pad = self.counts.iter().map(|c| c.0.len()).max().unwrap_or(0);
        let mut s = String::new();
        for (label, n) in &self.counts {
            let bar = (n * width).div_ceil(max);
            s.push_str(&format!("{label:>pad$} | {} {n}\n", "#".repeat(bar)));
        }
        s.push_str(&format!("imbalance ratio (max/min): {:.2}\n", self.imbalance_ratio()));
        s
    }
}

pub fn class_histogram(manifest: &DatasetManifest) -> Histogram {
    Histogram {
        counts: manifest.counts(),
    }
}
