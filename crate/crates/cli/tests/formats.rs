use std::path::PathBuf;

use proptest::prelude::*;
use regformer::model::init_params;
use regformer::nn::{Activation, AdamW, OptimState};
use regformer_cli::checkpoint::Checkpoint;
use regformer_cli::RunConfig;

fn small_model(cfg: &mut RunConfig) {
    cfg.model.base_channels = 4;
    cfg.model.blocks = [1; 4];
    cfg.model.heads = [1; 4];
}

prop_compose! {
    fn run_configs()(
        seed in any::<u64>(),
        total_steps in 1u64..1_000_000,
        batch_size in 1usize..9,
        patch_eighths in 1usize..9,
        lr0 in 1e-7f64..1.0,
        lr_frac in 0.0f64..=1.0,
        beta1 in 0.0f64..1.0,
        beta2 in 0.0f64..1.0,
        weight_decay in 0.0f64..0.1,
        interval in 0u64..10_000,
        lambda in -2.0f64..2.0,
        relu in any::<bool>(),
        switches in any::<[bool; 3]>(),
        manifest in proptest::option::of("[a-z0-9_]{1,8}(/[a-z0-9_.]{1,8}){0,2}"),
        out_dir in "[a-z0-9_]{1,8}(/[a-z0-9_]{1,8}){0,2}",
        streaks in 0usize..60,
    ) -> RunConfig {
        let mut c = RunConfig {
            seed,
            total_steps,
            batch_size,
            patch_size: 8 * patch_eighths,
            lr0,
            lr_min: lr0 * lr_frac,
            beta1,
            beta2,
            weight_decay,
            checkpoint_interval: interval,
            train_manifest: manifest.map(PathBuf::from),
            out_dir: PathBuf::from(out_dir),
            ..RunConfig::default()
        };
        c.model.mask_lambda = lambda;
        c.model.activation = if relu { Activation::Relu } else { Activation::Gelu };
        [c.model.use_fg_mask, c.model.use_bg_mask, c.model.use_mgfb] = switches;
        c.rain.streak_count = streaks;
        c
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(96))]

    #[test]
    fn config_echo_parses_back_exactly(cfg in run_configs()) {
        let text = cfg.echo();
        prop_assert_eq!(RunConfig::parse(&text).unwrap(), cfg);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn checkpoint_bytes_are_a_fixed_point(
        seed in any::<u64>(),
        step in any::<u64>(),
        with_optim in any::<bool>(),
        switches in any::<[bool; 3]>(),
    ) {
        let mut config = RunConfig { seed, ..RunConfig::default() };
        small_model(&mut config);
        [config.model.use_fg_mask, config.model.use_bg_mask, config.model.use_mgfb] = switches;
        let params = init_params(&config.model, seed).unwrap();
        let optim = with_optim.then(|| OptimState::new(&params, AdamW::default(), config.lr0));
        let ckpt = Checkpoint { config, step, params, optim };

        let bytes = ckpt.to_bytes();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        prop_assert_eq!(back.to_bytes(), bytes);
        prop_assert_eq!(back.step, step);
        prop_assert_eq!(&back.config, &ckpt.config);
        if with_optim {
            prop_assert_eq!(&back.params, &ckpt.params);
        }
    }

    #[test]
    fn every_proper_prefix_is_rejected(seed in 0u64..1000, cut_frac in 0.0f64..1.0) {
        let mut config = RunConfig { seed, ..RunConfig::default() };
        small_model(&mut config);
        let params = init_params(&config.model, seed).unwrap();
        let optim = Some(OptimState::new(&params, AdamW::default(), config.lr0));
        let bytes = Checkpoint { config, step: 7, params, optim }.to_bytes();
        let cut = ((bytes.len() as f64) * cut_frac) as usize;
        prop_assert!(Checkpoint::from_bytes(&bytes[..cut]).is_err());
    }
}
