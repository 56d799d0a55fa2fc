use mrsr_nn::{Backend, Eval, Float, ParamStore, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    check_image, config_err, conv_params, load_named, Conv, Init, ModelError, GENERATOR_GROUP, LEAKY_SLOPE, SAME3,
};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UpsampleMode {
    #[default]
    Nearest,
}

/// Hyperparameters of the RRDB generator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeneratorConfig {
    pub in_channels: usize,
    pub out_channels: usize,
    pub base_channels: usize,
    pub growth_channels: usize,
    pub num_rrdb: usize,
    pub dense_blocks_per_rrdb: usize,
    pub convs_per_dense_block: usize,
    /// Scale applied to every dense-block and RRDB residual branch.
    pub residual_scale_beta: f64,
    pub scale: usize,
    pub upsample_mode: UpsampleMode,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            in_channels: 1,
            out_channels: 1,
            base_channels: 64,
            growth_channels: 32,
            num_rrdb: 23,
            dense_blocks_per_rrdb: 3,
            convs_per_dense_block: 5,
            residual_scale_beta: 0.2,
            scale: 4,
            upsample_mode: UpsampleMode::Nearest,
        }
    }
}

impl GeneratorConfig {
    /// One RRDB, 8 base channels, growth 4: small enough for finite differences.
    pub fn tiny() -> Self {
        GeneratorConfig { num_rrdb: 1, base_channels: 8, growth_channels: 4, ..Self::default() }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.in_channels != 1 || self.out_channels != 1 {
            return config_err("the generator is single-channel: in_channels and out_channels must be 1");
        }
        if self.base_channels == 0 || self.growth_channels == 0 {
            return config_err("base_channels and growth_channels must be positive");
        }
        if self.num_rrdb == 0 || self.dense_blocks_per_rrdb == 0 || self.convs_per_dense_block < 2 {
            return config_err("need num_rrdb >= 1, dense_blocks_per_rrdb >= 1 and convs_per_dense_block >= 2");
        }
        // Zero is accepted so the residual branches can be switched off for testing.
        if !(0.0..1.0).contains(&self.residual_scale_beta) {
            return config_err(format!("residual_scale_beta {} outside [0, 1)", self.residual_scale_beta));
        }
        if self.scale != 4 {
            return config_err(format!("scale {} unsupported; the upsampler is two x2 stages", self.scale));
        }
        Ok(())
    }

    /// `(in, out)` channels of conv `k` (0-based) in a dense block.
    pub fn dense_conv_channels(&self, k: usize) -> (usize, usize) {
        let last = self.convs_per_dense_block - 1;
        let cin = self.base_channels + k * self.growth_channels;
        (cin, if k == last { self.base_channels } else { self.growth_channels })
    }

    /// Closed-form parameter count.
    pub fn parameter_count(&self) -> usize {
        let b = self.base_channels;
        let dense: usize = (0..self.convs_per_dense_block)
            .map(|k| self.dense_conv_channels(k))
            .map(|(i, o)| conv_params(i, o, 3, true))
            .sum();
        conv_params(self.in_channels, b, 3, true)
            + self.num_rrdb * self.dense_blocks_per_rrdb * dense
            + conv_params(b, b, 3, true)
            + 3 * conv_params(b, b, 3, true)
            + conv_params(b, self.out_channels, 3, true)
    }
}

/// The x4 RRDB super-resolution network.
///
/// `conv_first -> RRDB x num_rrdb -> conv_body (+ long skip) ->
/// (nearest x2, conv, lrelu) x 2 -> conv_hr, lrelu -> conv_last`
#[derive(Clone, Debug)]
pub struct Generator<F> {
    config: GeneratorConfig,
    pub params: ParamStore<F>,
    conv_first: Conv,
    /// `[rrdb][dense block][conv]`
    body: Vec<Vec<Vec<Conv>>>,
    conv_body: Conv,
    conv_up: [Conv; 2],
    conv_hr: Conv,
    conv_last: Conv,
}

impl<F: Float> Generator<F> {
    /// Build and initialise from a seed. Dense-block convs get Kaiming
    /// normal weights scaled by 0.1 with zero bias; every other conv uses
    /// fan-in uniform initialisation.
    pub fn new(config: &GeneratorConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rng = &mut rng;
        let mut p = ParamStore::new(GENERATOR_GROUP);
        let b = config.base_channels;
        let plain = |p: &mut ParamStore<F>, name: &str, cin, cout, rng: &mut ChaCha8Rng| {
            Conv::push(p, name, (cin, cout, 3), SAME3, true, Init::FanInUniform, rng)
        };
        let conv_first = plain(&mut p, "conv_first", config.in_channels, b, rng);
        let body = (0..config.num_rrdb)
            .map(|i| {
                (0..config.dense_blocks_per_rrdb)
                    .map(|j| {
                        (0..config.convs_per_dense_block)
                            .map(|k| {
                                let (cin, cout) = config.dense_conv_channels(k);
                                let name = format!("body.{i}.rdb{}.conv{}", j + 1, k + 1);
                                Conv::push(&mut p, &name, (cin, cout, 3), SAME3, true, Init::KaimingScaled(0.1), rng)
                            })
                            .collect()
                    })
                    .collect()
            })
            .collect();
        let conv_body = plain(&mut p, "conv_body", b, b, rng);
        let conv_up = [plain(&mut p, "conv_up1", b, b, rng), plain(&mut p, "conv_up2", b, b, rng)];
        let conv_hr = plain(&mut p, "conv_hr", b, b, rng);
        let conv_last = plain(&mut p, "conv_last", b, config.out_channels, rng);
        Ok(Generator { config: config.clone(), params: p, conv_first, body, conv_body, conv_up, conv_hr, conv_last })
    }

    /// Build the architecture for `config` and fill it with `named` tensors.
    pub fn from_named(
        config: &GeneratorConfig,
        named: impl IntoIterator<Item = (String, Tensor<F>)>,
    ) -> Result<Self, ModelError> {
        let mut g = Self::new(config, 0)?;
        load_named(&mut g.params, named)?;
        Ok(g)
    }

    pub fn config(&self) -> &GeneratorConfig {
        &self.config
    }

    pub fn parameter_count(&self) -> usize {
        self.params.numel()
    }

    pub fn cast<G: Float>(&self) -> Generator<G> {
        Generator {
            config: self.config.clone(),
            params: self.params.cast(),
            conv_first: self.conv_first,
            body: self.body.clone(),
            conv_body: self.conv_body,
            conv_up: self.conv_up,
            conv_hr: self.conv_hr,
            conv_last: self.conv_last,
        }
    }

    fn beta(&self) -> F {
        F::lit(self.config.residual_scale_beta)
    }

    fn dense_block<B: Backend<F>>(&self, bk: &mut B, convs: &[Conv], x: &B::Value) -> B::Value {
        let slope = F::lit(LEAKY_SLOPE);
        let mut feats = vec![x.clone()];
        let last = convs.len() - 1;
        for (k, conv) in convs.iter().enumerate() {
            let input = if k == 0 { x.clone() } else { bk.concat(&feats.iter().collect::<Vec<_>>()) };
            let y = conv.apply(bk, &self.params, &input);
            if k == last {
                return bk.residual(x, &y, self.beta());
            }
            feats.push(bk.leaky_relu(&y, slope));
        }
        unreachable!("dense block has at least two convs")
    }

    /// One residual-in-residual dense block: `x + beta * RDB_n(...RDB_1(x))`.
    pub fn rrdb_forward<B: Backend<F>>(&self, bk: &mut B, block: usize, x: &B::Value) -> B::Value {
        let mut h = x.clone();
        for convs in &self.body[block] {
            h = self.dense_block(bk, convs, &h);
        }
        bk.residual(x, &h, self.beta())
    }

    /// Unchecked forward pass on `(B, 1, H, W)`.
    pub fn forward<B: Backend<F>>(&self, bk: &mut B, x: &B::Value) -> B::Value {
        let slope = F::lit(LEAKY_SLOPE);
        let feat = self.conv_first.apply(bk, &self.params, x);
        let mut h = feat.clone();
        for i in 0..self.body.len() {
            h = self.rrdb_forward(bk, i, &h);
        }
        let body = self.conv_body.apply(bk, &self.params, &h);
        let mut h = bk.add(&feat, &body);
        for conv in &self.conv_up {
            let up = match self.config.upsample_mode {
                UpsampleMode::Nearest => bk.upsample_nearest2x(&h),
            };
            let y = conv.apply(bk, &self.params, &up);
            h = bk.leaky_relu(&y, slope);
        }
        let y = self.conv_hr.apply(bk, &self.params, &h);
        let y = bk.leaky_relu(&y, slope);
        self.conv_last.apply(bk, &self.params, &y)
    }

    /// Minimum LR side accepted by [`Generator::predict`].
    pub const MIN_INPUT: usize = 16;

    /// Validated inference: `(B, 1, H, W)` with H, W >= 16 to `(B, 1, 4H, 4W)`.
    pub fn predict(&self, lr: &Tensor<F>) -> Result<Tensor<F>, ModelError> {
        check_image(lr, self.config.in_channels, Self::MIN_INPUT, 1)?;
        Ok(self.forward(&mut Eval, lr))
    }
}
