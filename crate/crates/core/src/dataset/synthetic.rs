//! Synthetic survey-style data with the BRFSS diabetes-indicator column
//! layout, for tests, demos and smoke runs.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::dataset::Dataset;
use crate::matrix::Matrix;
use crate::rng;

pub const LABEL: &str = "Diabetes_binary";

pub const FEATURES: [&str; 21] = [
    "HighBP",
    "HighChol",
    "CholCheck",
    "BMI",
    "Smoker",
    "Stroke",
    "HeartDiseaseorAttack",
    "PhysActivity",
    "Fruits",
    "Veggies",
    "HvyAlcoholConsump",
    "AnyHealthcare",
    "NoDocbcCost",
    "GenHlth",
    "MentHlth",
    "PhysHlth",
    "DiffWalk",
    "Sex",
    "Age",
    "Education",
    "Income",
];

fn bern(r: &mut rng::Rng, p: f64) -> f64 {
    f64::from(u8::from(r.gen::<f64>() < p.clamp(0.0, 1.0)))
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// `n` rows in raw units. A latent health score drives most indicators and
/// the label, so the label is learnable but noisy; positives make up
/// roughly 15 %.
pub fn brfss_like(n: usize, seed: u64) -> Dataset {
    let mut r = rng::seeded(seed);
    let std = Normal::new(0.0, 1.0).unwrap();
    let mut data = Vec::with_capacity(n * FEATURES.len());
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let age = r.gen_range(1..=13) as f64;
        let latent: f64 = std.sample(&mut r) + 0.12 * (age - 7.0);
        let income = (5.5 - 1.2 * latent + 1.5 * std.sample(&mut r))
            .round()
            .clamp(1.0, 8.0);
        let education = (4.5 + 0.25 * (income - 5.0) + std.sample(&mut r))
            .round()
            .clamp(1.0, 6.0);
        let bmi = (28.0 + 3.5 * latent + 5.0 * std.sample(&mut r))
            .round()
            .clamp(12.0, 98.0);
        let high_bp = bern(&mut r, sigmoid(-0.6 + 0.9 * latent + 0.15 * (age - 7.0)));
        let high_chol = bern(&mut r, sigmoid(-0.3 + 0.6 * latent + 0.1 * (age - 7.0)));
        let chol_check = bern(&mut r, 0.96);
        let smoker = bern(&mut r, sigmoid(-0.3 + 0.3 * latent));
        let stroke = bern(&mut r, sigmoid(-3.5 + 0.7 * latent));
        let heart = bern(&mut r, sigmoid(-2.6 + 0.8 * latent + 0.15 * (age - 7.0)));
        let phys_activity = bern(&mut r, sigmoid(1.1 - 0.6 * latent));
        let fruits = bern(&mut r, sigmoid(0.5 - 0.2 * latent));
        let veggies = bern(&mut r, sigmoid(1.4 - 0.2 * latent));
        let heavy_alcohol = bern(&mut r, 0.06);
        let any_healthcare = bern(&mut r, 0.95);
        let no_doc_cost = bern(&mut r, sigmoid(-2.3 + 0.4 * latent - 0.2 * (income - 5.0)));
        let gen_hlth = (2.5 + 0.9 * latent + 0.6 * std.sample(&mut r))
            .round()
            .clamp(1.0, 5.0);
        let ment_hlth = (2.0 * latent + 4.0 * std.sample(&mut r))
            .round()
            .clamp(0.0, 30.0);
        let phys_hlth = (3.0 * latent + 5.0 * std.sample(&mut r))
            .round()
            .clamp(0.0, 30.0);
        let diff_walk = bern(&mut r, sigmoid(-1.8 + 0.9 * latent));
        let sex = bern(&mut r, 0.44);
        let z = -3.4
            + 0.55 * (gen_hlth - 2.5)
            + 0.7 * high_bp
            + 0.08 * (bmi - 28.0)
            + 0.17 * (age - 7.0)
            + 0.5 * high_chol
            + 0.8 * (chol_check - 0.5)
            - 0.08 * (income - 5.0)
            + 0.25 * sex
            + 0.3 * heart
            - 0.7 * heavy_alcohol
            + 0.2 * diff_walk;
        labels.push(u8::from(r.gen::<f64>() < sigmoid(z)));
        data.extend_from_slice(&[
            high_bp,
            high_chol,
            chol_check,
            bmi,
            smoker,
            stroke,
            heart,
            phys_activity,
            fruits,
            veggies,
            heavy_alcohol,
            any_healthcare,
            no_doc_cost,
            gen_hlth,
            ment_hlth,
            phys_hlth,
            diff_walk,
            sex,
            age,
            education,
            income,
        ]);
    }
    let features = Matrix::from_vec(n, FEATURES.len(), data).expect("row width");
    Dataset::new(features, labels, &FEATURES).expect("consistent shapes")
}
