//! Fixtures shared by the integration test binaries.
#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use mrsr::data_pipeline::SlicePair;
use mrsr::losses::FeatureExtractor;
use mrsr::phantom::write_phantom_dataset;
use mrsr::sr_models::{Generator, GeneratorConfig, GENERATOR_GROUP};
use mrsr_nn::{Backend, ConvGeom, Eval, ParamKey, Shape, Tape, Tensor};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const DEPTH: usize = 6;

/// Three phantom subjects; blank planes are listed per subject.
pub fn fixture_subjects() -> Vec<(&'static str, &'static str, u64, Vec<usize>)> {
    vec![("Brats18_A_1", "HGG", 1, vec![0, 5]), ("Brats18_B_1", "HGG", 2, vec![0]), ("Brats18_C_1", "LGG", 3, vec![5])]
}

pub fn write_fixture_volumes(root: &Path) -> Vec<PathBuf> {
    write_phantom_dataset(root, (240, 240, DEPTH), &fixture_subjects()).expect("fixture volumes")
}

/// Random-weight VGG19 in the torchvision layout.
pub fn write_random_vgg(path: &Path) {
    FeatureExtractor::<f32>::vgg19_random(0).save_safetensors(path).expect("vgg weights");
}

/// A tiny model and short schedule for end-to-end runs.
pub fn tiny_config(vgg: &Path, iterations: u64) -> String {
    format!(
        "seed = 3\n\n[data]\nexpected_shape = []\n\n[generator]\nnum_rrdb = 1\nbase_channels = 8\ngrowth_channels = 4\n\n\
         [discriminator]\nbase_channels = 8\n\n[train]\niterations = {iterations}\ncheckpoint_every = 5\nlog_every = 5\n\
         crop_size = 64\n\n[perceptual]\nweights = \"{}\"\n",
        vgg.display()
    )
}

pub fn mrsr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mrsr")).args(args).env_remove("MRSR_VGG19_WEIGHTS").output().expect("spawn mrsr")
}

pub fn expect_ok(args: &[&str]) -> String {
    let out = mrsr(args);
    assert!(
        out.status.success(),
        "mrsr {args:?} failed\nstdout:\n{}\nstderr:\n{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

pub fn s(p: &Path) -> &str {
    p.to_str().expect("utf-8 path")
}

/// A random HR square with its degraded LR partner.
pub fn random_pair(seed: u64, side: usize) -> SlicePair {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let hr = Array2::from_shape_fn((side, side), |_| rng.random::<f32>());
    let lr = mrsr::data_pipeline::degrade(hr.view()).expect("divisible side");
    SlicePair { volume_id: format!("r{seed}"), slice_index: 0, hr, lr }
}

pub fn sha256_file(path: &Path) -> String {
    use sha2::{Digest, Sha256};
    hex::encode(Sha256::digest(std::fs::read(path).expect("readable file")))
}

/// Eager backend that records which side of every kink the network sits
/// on: the sign of each leaky-ReLU input and of each L1 residual. Between
/// two points with the same pattern the network is affine, so a central
/// difference there is exact up to rounding.
#[derive(Default)]
pub struct KinkProbe {
    pub pattern: Vec<bool>,
}

impl Backend<f64> for KinkProbe {
    type Value = Tensor<f64>;

    fn input(&mut self, t: Tensor<f64>) -> Tensor<f64> {
        t
    }
    fn param(&mut self, key: ParamKey, t: &Tensor<f64>) -> Tensor<f64> {
        Eval.param(key, t)
    }
    fn value<'a>(&'a self, v: &'a Tensor<f64>) -> &'a Tensor<f64> {
        v
    }
    fn conv2d(&mut self, x: &Tensor<f64>, w: &Tensor<f64>, b: Option<&Tensor<f64>>, geom: ConvGeom) -> Tensor<f64> {
        Eval.conv2d(x, w, b, geom)
    }
    fn leaky_relu(&mut self, x: &Tensor<f64>, slope: f64) -> Tensor<f64> {
        self.pattern.extend(x.data().iter().map(|&v| v > 0.0));
        Eval.leaky_relu(x, slope)
    }
    fn add(&mut self, a: &Tensor<f64>, b: &Tensor<f64>) -> Tensor<f64> {
        Eval.add(a, b)
    }
    fn residual(&mut self, x: &Tensor<f64>, branch: &Tensor<f64>, scale: f64) -> Tensor<f64> {
        Eval.residual(x, branch, scale)
    }
    fn concat(&mut self, xs: &[&Tensor<f64>]) -> Tensor<f64> {
        Eval.concat(xs)
    }
    fn upsample_nearest2x(&mut self, x: &Tensor<f64>) -> Tensor<f64> {
        Eval.upsample_nearest2x(x)
    }
    fn upsample_bilinear2x(&mut self, x: &Tensor<f64>) -> Tensor<f64> {
        Eval.upsample_bilinear2x(x)
    }
    fn max_pool2x2(&mut self, _x: &Tensor<f64>) -> Tensor<f64> {
        unimplemented!("not used by the generator")
    }
    fn repeat_channels(&mut self, x: &Tensor<f64>, times: usize) -> Tensor<f64> {
        Eval.repeat_channels(x, times)
    }
    fn channel_affine(&mut self, x: &Tensor<f64>, scale: &[f64], shift: &[f64]) -> Tensor<f64> {
        Eval.channel_affine(x, scale, shift)
    }
    fn spectral_normalize(&mut self, w: &Tensor<f64>, u: &[f64], v: &[f64]) -> Tensor<f64> {
        Eval.spectral_normalize(w, u, v)
    }
    fn l1_mean(&mut self, a: &Tensor<f64>, b: &Tensor<f64>) -> Tensor<f64> {
        self.pattern.extend(a.data().iter().zip(b.data()).map(|(x, y)| x > y));
        Eval.l1_mean(a, b)
    }
    fn relativistic_bce(&mut self, pos: &Tensor<f64>, neg: &Tensor<f64>) -> Tensor<f64> {
        Eval.relativistic_bce(pos, neg)
    }
    fn weighted_sum(&mut self, terms: &[(&Tensor<f64>, f64)]) -> Tensor<f64> {
        Eval.weighted_sum(terms)
    }
}

#[derive(Debug)]
pub struct GradcheckReport {
    pub checked: usize,
    pub worst: f64,
    pub worst_at: String,
    /// Entries that needed a step below the initial one to avoid a kink.
    pub shrunk: usize,
    /// Entries with a kink within the smallest step; not comparable.
    pub unresolved: usize,
}

pub const GRADCHECK_FLOOR: f64 = 1e-6;

/// Analytic L1 gradients of the tiny generator on a 16x16 input against
/// central differences in f64. With `per_tensor`, every bias entry plus that
/// many random entries of each weight tensor are checked; otherwise all.
pub fn gradcheck_tiny_generator(seed: u64, per_tensor: Option<usize>) -> GradcheckReport {
    let mut g = Generator::<f64>::new(&GeneratorConfig::tiny(), seed).expect("tiny generator");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lr = Tensor::from_vec(Shape::new(1, 1, 16, 16), (0..256).map(|_| rng.random::<f64>()).collect());
    // Target offset from the initial output by at least 0.25 so the L1
    // kinks sit far from the evaluation point.
    let sr0 = g.forward(&mut Eval, &lr);
    let hr = Tensor::from_vec(
        sr0.shape(),
        sr0.data()
            .iter()
            .map(|v| v + if rng.random::<bool>() { 1.0 } else { -1.0 } * rng.random_range(0.25..0.75))
            .collect(),
    );
    let probe = |g: &Generator<f64>| {
        let mut p = KinkProbe::default();
        let sr = g.forward(&mut p, &lr);
        p.l1_mean(&sr, &hr);
        (sr, p.pattern)
    };
    // Residual signs at the evaluation point. While the kink pattern holds,
    // L(up) - L(down) = mean(sign * (sr_up - sr_down)), which avoids
    // subtracting two nearly equal losses.
    let signs: Vec<f64> = sr0.data().iter().zip(hr.data()).map(|(s, h)| if s > h { 1.0 } else { -1.0 }).collect();

    let mut tape = Tape::new(&[GENERATOR_GROUP]);
    let x = tape.input(lr.clone());
    let sr = g.forward(&mut tape, &x);
    let t = tape.input(hr.clone());
    let l = tape.l1_mean(&sr, &t);
    let grads = tape.backward(l);

    let mut report = GradcheckReport { checked: 0, worst: 0.0, worst_at: String::new(), shrunk: 0, unresolved: 0 };
    for i in 0..g.params.len() {
        let analytic = grads.param(g.params.key(i)).expect("gradient for every parameter").clone();
        let n = analytic.len();
        let coords: Vec<usize> = match per_tensor {
            Some(k) if !g.params.name(i).ends_with(".bias") && n > k => {
                (0..k).map(|_| rng.random_range(0..n)).collect()
            }
            _ => (0..n).collect(),
        };
        let (_, base) = probe(&g);
        for j in coords {
            let orig = g.params.get(i).data()[j];
            let mut eps = 1e-3;
            let numeric = loop {
                g.params.get_mut(i).data_mut()[j] = orig + eps;
                let (up, pu) = probe(&g);
                g.params.get_mut(i).data_mut()[j] = orig - eps;
                let (down, pd) = probe(&g);
                g.params.get_mut(i).data_mut()[j] = orig;
                if pu == base && pd == base {
                    let diff: f64 = up.data().iter().zip(down.data()).zip(&signs).map(|((u, d), s)| s * (u - d)).sum();
                    break Some(diff / (up.len() as f64 * 2.0 * eps));
                }
                if eps < 1e-7 {
                    break None;
                }
                eps /= 10.0;
            };
            let Some(numeric) = numeric else {
                report.unresolved += 1;
                continue;
            };
            if eps < 1e-3 {
                report.shrunk += 1;
            }
            let a = analytic.data()[j];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(GRADCHECK_FLOOR);
            if rel > report.worst {
                report.worst = rel;
                report.worst_at = format!("{}[{j}] analytic {a:.6e} numeric {numeric:.6e}", g.params.name(i));
            }
            report.checked += 1;
        }
    }
    report
}
