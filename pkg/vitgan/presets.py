"""
Named run-config trees.

A config file may say ``preset = "<name>"``; the preset tree is merged under
the file, and ``DEFAULTS`` under both. Presets only hold what differs from
the defaults.
"""

DEFAULTS = {
    "seed": 0,
    "variant": "vit-i-gan",
    "output_dir": "",
    "preset": "",
    "data": {
        "root": "",
        "val_root": "",
        "image_size": 256,
        "prefetch": False,
    },
    "train": {
        "batch_size": 16,
        "epochs": 50,
        "lambda_l1": 100.0,
        "checkpoint_every": 1000,
        "max_steps": 0,
        "schedule": [],
    },
    "optimizer": {
        "lr": 2e-4,
        "beta1": 0.5,
        "beta2": 0.9,
        "eps": 1e-8,
    },
    # Empty means "same as [optimizer]".
    "discriminator_optimizer": {},
    "generator": {
        "width_divisor": 1,
        "leaky_slope": 0.2,
    },
    "discriminator": {
        "patch_size": 32,
        "depth": 6,
        "heads": 16,
        "mlp_dim": 2048,
        "dropout": 0.1,
        "emb_dropout": 0.1,
        "token_dim": 1024,
    },
    "extractor": {
        "backend": "stub",
        "weights": "",
        "seed": 0,
    },
}

# 10,000 Unsplash images, 50 epochs at batch 16 (31,250 steps).
UNSPLASH_50EP = {
    "train": {"batch_size": 16, "epochs": 50},
    "optimizer": {"lr": 2e-4, "beta1": 0.5, "beta2": 0.9},
}

# 118k COCO images: 59k steps at 2e-4, then 118k at 2e-5.
COCO_2PHASE = {
    "train": {
        "batch_size": 16,
        "epochs": 24,
        "max_steps": 177000,
        "schedule": [[59000, 2e-4], [118000, 2e-5]],
    },
    "optimizer": {"lr": 2e-4, "beta1": 0.5, "beta2": 0.999},
}

# Desk-scale model for smoke tests and gradient checks.
TINY = {
    "data": {"image_size": 64},
    "train": {"batch_size": 8, "epochs": 10, "checkpoint_every": 0},
    "generator": {"width_divisor": 8},
    "discriminator": {
        "patch_size": 32,
        "depth": 2,
        "heads": 4,
        "mlp_dim": 64,
        "token_dim": 32,
    },
}

PRESETS = {
    "unsplash-50ep": UNSPLASH_50EP,
    "coco-2phase": COCO_2PHASE,
    "tiny": TINY,
}
