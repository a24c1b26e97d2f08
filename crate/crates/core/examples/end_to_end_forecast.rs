//! Full path from a CSV series to integer forecasts: scaling fitted on the
//! training rows, sliding windows, calibration, quantization, and RMSE of the
//! integer model against its floating-point source on the held-out rows.
//!
//! The weights are random (no training happens here), so the RMSE figures
//! measure quantization error, not forecasting skill.
//!
//! Run with: cargo run --example end_to_end_forecast

use std::fmt::Write as _;

use intformer::cli::{engine_predictor, evaluate};
use intformer::dataio::{read_csv, MinMaxScaler};
use intformer::model::{assemble, ModelConfig};
use intformer::reference::{calibrate_model, float_forward};
use intformer::synth;
use rand::Rng;

fn main() -> intformer::Result<()> {
    // Hourly readings with a daily cycle and a few sensor dropouts.
    let mut rng = synth::rng(1);
    let mut csv = String::from("hour,temp,humidity,ozone\n");
    for h in 0..720 {
        let day = (h as f64 / 24.0 * std::f64::consts::TAU).sin();
        let temp = 18.0 + 7.0 * day + rng.gen_range(-0.5..0.5);
        let hum = 60.0 - 15.0 * day + rng.gen_range(-2.0..2.0);
        let ozone = if h % 97 == 50 { "NA".to_string() } else { format!("{:.2}", 30.0 + 12.0 * day + rng.gen_range(-1.0..1.0)) };
        writeln!(csv, "{h},{temp:.2},{hum:.2},{ozone}").unwrap();
    }
    let path = std::env::temp_dir().join("intformer-forecast.csv");
    std::fs::write(&path, csv).map_err(|e| intformer::Error::Io { path: path.clone(), source: e })?;

    let series = read_csv(&path, &["temp", "humidity", "ozone"], "ozone")?;
    println!("{} clean rows in {} contiguous segments", series.len(), series.segments.len());
    let (train, test) = series.split_fraction(0.8);
    let mut scaler = MinMaxScaler::new();
    let train = scaler.fit_transform(&train)?;
    let test = scaler.transform(&test)?;

    for bits in [4, 6, 8] {
        let cfg = ModelConfig::new(12, 3, 16, bits)?;
        let train_windows = train.windows(cfg.n)?;
        let test_windows = test.windows(cfg.n)?;
        let float = synth::random_float_model(&cfg, &mut synth::rng(7));
        let batch: Vec<Vec<f64>> = train_windows.samples.iter().map(|s| s.input.clone()).collect();
        let model = assemble(&cfg, &float, &calibrate_model(&float, &batch)?)?;

        let int = evaluate(&test_windows, Some(&scaler), engine_predictor(&model))?;
        let flt = evaluate(&test_windows, Some(&scaler), |s| float_forward(&float, &s.input))?;
        let gap = intformer::dataio::rmse(&int.predictions, &flt.predictions)?;
        println!(
            "b={bits}: {} test windows, RMSE int {:.3}, float {:.3}, int vs float {:.4}",
            test_windows.len(),
            int.rmse,
            flt.rmse,
            gap
        );
    }
    Ok(())
}
