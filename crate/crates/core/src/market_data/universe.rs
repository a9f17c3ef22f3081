use serde::{Deserialize, Serialize};

use super::{aaft_prices, gen_waves, load_csv, CsvConfig, MarketDataError, PriceFrame, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Generator {
    Csv,
    Sine,
    Sawtooth,
    Chirp,
    Aaft,
}

/// Generator parameters. Any wave parameter left out is drawn from the seed.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WaveParams {
    /// Price level the waves oscillate around.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub offset: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub amplitudes: Option<Vec<f64>>,
    /// Angular frequency per sample (radians/step); initial frequency for chirps.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frequencies: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phases: Option<Vec<f64>>,
    /// Chirp only: linear growth of angular frequency per step.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chirp_rates: Option<Vec<f64>>,
    /// CSV source for `csv` and `aaft` universes.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub csv: Option<CsvConfig>,
}

/// JSON document `{generator, M, T, seed, params}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UniverseSpec {
    pub generator: Generator,
    #[serde(rename = "M")]
    pub m: usize,
    #[serde(rename = "T")]
    pub t: usize,
    pub seed: u64,
    #[serde(default)]
    pub params: WaveParams,
}

impl UniverseSpec {
    pub fn waves(generator: Generator, m: usize, t: usize, seed: u64) -> Self {
        Self { generator, m, t, seed, params: WaveParams::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.m < 1 {
            return Err(MarketDataError::Validation("universe needs M >= 1".into()));
        }
        if self.t < 2 {
            return Err(MarketDataError::Validation("universe needs T >= 2".into()));
        }
        Ok(())
    }

    /// Materialize the universe as prices. CSV-backed universes keep the
    /// first `T` rows and `M` columns of the file.
    pub fn build(&self) -> Result<PriceFrame> {
        self.validate()?;
        match self.generator {
            Generator::Sine | Generator::Sawtooth | Generator::Chirp => gen_waves(self),
            Generator::Csv => self.load_source(),
            Generator::Aaft => aaft_prices(&self.load_source()?, self.seed),
        }
    }

    fn load_source(&self) -> Result<PriceFrame> {
        let path = self.params.path.as_deref().ok_or_else(|| {
            MarketDataError::Validation(format!("{:?} universe needs params.path", self.generator))
        })?;
        let frame = load_csv(path, &self.params.csv.clone().unwrap_or_default())?;
        if frame.len() < self.t || frame.n_assets() < self.m {
            return Err(MarketDataError::Validation(format!(
                "{path} has {} rows x {} assets, universe asks for {} x {}",
                frame.len(),
                frame.n_assets(),
                self.t,
                self.m
            )));
        }
        let rows: Vec<Vec<f64>> = (0..self.t).map(|t| frame.row(t)[..self.m].to_vec()).collect();
        PriceFrame::new(
            frame.timestamps()[..self.t].to_vec(),
            frame.assets()[..self.m].to_vec(),
            rows.into_iter().flatten().collect(),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_keys() {
        let spec: UniverseSpec = serde_json::from_str(
            r#"{"generator":"sine","M":2,"T":50,"seed":3,"params":{"offset":50.0}}"#,
        )
        .unwrap();
        assert_eq!(spec.m, 2);
        assert_eq!(spec.params.offset, Some(50.0));
        assert!(serde_json::from_str::<UniverseSpec>(r#"{"generator":"sine","M":2,"T":50,"seed":3,"x":1}"#)
            .is_err());
    }

    #[test]
    fn invalid_sizes_rejected() {
        assert!(UniverseSpec::waves(Generator::Sine, 0, 10, 0).build().is_err());
        assert!(UniverseSpec::waves(Generator::Sine, 1, 1, 0).build().is_err());
    }
}
