//! Per-scene image errors and their aggregates.

use cellroute::Image;

/// Clamp applied to predictions before taking logarithms.
pub const BCE_CLAMP: f64 = 1e-7;

/// Errors of one predicted image, on the `[0, 1]` scale.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Metrics {
    pub mae: f64,
    pub rmse: f64,
    /// Mean binary cross entropy of the target under the prediction.
    pub bce: f64,
}

impl Metrics {
    pub fn compare(pred: &Image, truth: &Image) -> Metrics {
        assert_eq!(pred.data().len(), truth.data().len(), "image sizes differ");
        let n = pred.data().len() as f64;
        let (mut abs, mut sq, mut ce) = (0.0, 0.0, 0.0);
        for (&p, &t) in pred.data().iter().zip(truth.data()) {
            let d = p - t;
            abs += d.abs();
            sq += d * d;
            let q = p.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
            ce -= t * q.ln() + (1.0 - t) * (1.0 - q).ln();
        }
        Metrics {
            mae: abs / n,
            rmse: (sq / n).sqrt(),
            bce: ce / n,
        }
    }
}

/// Mean squared error between two images.
pub fn mse(a: &Image, b: &Image) -> f64 {
    let r = Metrics::compare(a, b).rmse;
    r * r
}

/// Mean and population standard deviation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> MeanStd {
        if values.is_empty() {
            return MeanStd { mean: f64::NAN, std: f64::NAN };
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        MeanStd { mean, std: var.sqrt() }
    }

    pub fn scaled(self, k: f64) -> MeanStd {
        MeanStd { mean: self.mean * k, std: self.std * k }
    }
}

/// Aggregated metrics over scenes.
#[derive(Clone, Debug, PartialEq)]
pub struct Summary {
    pub per_scene: Vec<Metrics>,
    pub mae: MeanStd,
    pub rmse: MeanStd,
    pub bce: MeanStd,
}

impl Summary {
    pub fn new(per_scene: Vec<Metrics>) -> Summary {
        let col = |f: fn(&Metrics) -> f64| MeanStd::of(&per_scene.iter().map(f).collect::<Vec<_>>());
        Summary {
            mae: col(|m| m.mae),
            rmse: col(|m| m.rmse),
            bce: col(|m| m.bce),
            per_scene,
        }
    }

    /// Human readable report in `[0, 1]` and 0-255 units.
    pub fn report(&self) -> String {
        let mae = self.mae.scaled(255.0);
        let rmse = self.rmse.scaled(255.0);
        format!(
            "scenes {}\nMAE  {:.5} ± {:.5}  ({:.2} ± {:.2} px)\nRMSE {:.5} ± {:.5}  ({:.2} ± {:.2} px)\nBCE  {:.5} ± {:.5}\n",
            self.per_scene.len(),
            self.mae.mean,
            self.mae.std,
            mae.mean,
            mae.std,
            self.rmse.mean,
            self.rmse.std,
            rmse.mean,
            rmse.std,
            self.bce.mean,
            self.bce.std,
        )
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("scene,mae,rmse,bce\n");
        for (i, m) in self.per_scene.iter().enumerate() {
            s.push_str(&format!("{i},{:?},{:?},{:?}\n", m.mae, m.rmse, m.bce));
        }
        s
    }
}
