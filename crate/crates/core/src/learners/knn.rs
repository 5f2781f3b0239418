use super::{FeatureKind, Features};

/// Training rows standardised (numeric) and one-hot expanded (categorical).
#[derive(Debug, Clone)]
pub(super) struct KnnModel {
    kinds: Vec<FeatureKind>,
    centre: Vec<f64>,
    scale: Vec<f64>,
    width: usize,
    points: Vec<f64>,
    targets: Vec<f64>,
    k: usize,
}

impl KnnModel {
    pub(super) fn fit(x: &Features, y: &[f64], k: usize) -> Self {
        let n = x.n_rows();
        let p = x.n_cols();
        let mut centre = vec![0.0; p];
        let mut scale = vec![1.0; p];
        for (j, kind) in x.kinds().iter().enumerate() {
            if *kind == FeatureKind::Numeric {
                let m = (0..n).map(|i| x.row(i)[j]).sum::<f64>() / n as f64;
                let var = (0..n).map(|i| (x.row(i)[j] - m).powi(2)).sum::<f64>() / n as f64;
                centre[j] = m;
                if var > 0.0 {
                    scale[j] = var.sqrt();
                }
            }
        }
        let width = x
            .kinds()
            .iter()
            .map(|k| match k {
                FeatureKind::Numeric => 1,
                FeatureKind::Categorical { levels } => *levels,
            })
            .sum();
        let mut model = KnnModel {
            kinds: x.kinds().to_vec(),
            centre,
            scale,
            width,
            points: Vec::new(),
            targets: y.to_vec(),
            k,
        };
        model.points = model.transform(x);
        model
    }

    fn transform(&self, x: &Features) -> Vec<f64> {
        let mut out = vec![0.0; x.n_rows() * self.width];
        for i in 0..x.n_rows() {
            let dst = &mut out[i * self.width..(i + 1) * self.width];
            let mut at = 0;
            for (j, (kind, &v)) in self.kinds.iter().zip(x.row(i)).enumerate() {
                match kind {
                    FeatureKind::Numeric => {
                        dst[at] = (v - self.centre[j]) / self.scale[j];
                        at += 1;
                    }
                    FeatureKind::Categorical { levels } => {
                        let code = v as usize;
                        if code < *levels {
                            dst[at + code] = 1.0;
                        }
                        at += levels;
                    }
                }
            }
        }
        out
    }

    pub(super) fn predict(&self, x: &Features) -> Vec<f64> {
        let queries = self.transform(x);
        let n_train = self.targets.len();
        let k = self.k.min(n_train);
        let w = self.width;
        let mut dist: Vec<(f64, usize)> = Vec::with_capacity(n_train);
        (0..x.n_rows())
            .map(|q| {
                let query = &queries[q * w..(q + 1) * w];
                dist.clear();
                dist.extend((0..n_train).map(|i| {
                    let d: f64 = self.points[i * w..(i + 1) * w]
                        .iter()
                        .zip(query)
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum();
                    (d, i)
                }));
                // Ties in distance go to the lower training index.
                let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
                if k < n_train {
                    dist.select_nth_unstable_by(k - 1, cmp);
                }
                dist[..k].iter().map(|&(_, i)| self.targets[i]).sum::<f64>() / k as f64
            })
            .collect()
    }
}
